//! Browser bindings for a few of the crate's cheap operations: comparing two
//! names, drawing noisy OCR renderings of a name, and plotting the learning
//! rate schedule. Each export has a plain Rust twin so the logic can be tested
//! off the browser.

use mmlink_core::bench::{self, ChannelPreset};
use mmlink_core::optim::{cosine_warm_restarts_lr, SchedulerConfig};
use mmlink_core::strmetrics::{levenshtein, ngram_cosine, Unit};
use mmlink_core::synth::ocr_noise;
use mmlink_core::derive_seed;
use serde_json::json;
use wasm_bindgen::prelude::*;

pub fn similarity_json(a: &str, b: &str, n: usize) -> Result<String, String> {
    let table = bench::stroke_table().map_err(|e| e.to_string())?;
    let chars = ngram_cosine(a, b, n, Unit::Character, None).map_err(|e| e.to_string())?;
    let strokes = ngram_cosine(a, b, n, Unit::Stroke, Some(&table)).map_err(|e| e.to_string())?;
    Ok(json!({ "levenshtein": levenshtein(a, b), "char_cosine": chars, "stroke_cosine": strokes }).to_string())
}

pub fn noisy_views_json(word: &str, count: u32, p_sub: f64, p_del: f64, p_ins: f64, seed: u64) -> Result<String, String> {
    let channel = ChannelPreset::Noisy.channel().map_err(|e| e.to_string())?.with_rates(p_sub, p_del, p_ins);
    channel.validate().map_err(|e| e.to_string())?;
    let views = (0..count as u64)
        .map(|v| ocr_noise(word, &channel, derive_seed(seed, v)))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    Ok(json!(views).to_string())
}

pub fn lr_curve_values(lr_max: f64, t0: u32, t_mult: u32, steps: u32) -> Result<Vec<f64>, String> {
    let cfg = SchedulerConfig { lr_max, lr_min: 0.0, t0: t0 as u64, t_mult: t_mult as u64 };
    cfg.validate().map_err(|e| e.to_string())?;
    Ok((0..steps as u64).map(|s| cosine_warm_restarts_lr(s, &cfg)).collect())
}

/// Levenshtein distance plus character and stroke n-gram cosine, as JSON.
#[wasm_bindgen]
pub fn similarity(a: &str, b: &str, n: usize) -> Result<String, JsError> {
    similarity_json(a, b, n).map_err(|e| JsError::new(&e))
}

/// `count` noisy renderings of `word` as a JSON array of strings.
#[wasm_bindgen]
pub fn noisy_views(word: &str, count: u32, p_sub: f64, p_del: f64, p_ins: f64, seed: u32) -> Result<String, JsError> {
    noisy_views_json(word, count, p_sub, p_del, p_ins, seed as u64).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn lr_curve(lr_max: f64, t0: u32, t_mult: u32, steps: u32) -> Result<Vec<f64>, JsError> {
    lr_curve_values(lr_max, t0, t_mult, steps).map_err(|e| JsError::new(&e))
}

/// Benchmark words, for seeding the demo inputs.
#[wasm_bindgen]
pub fn sample_words() -> String {
    json!(bench::words()).to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn similarity_reports_all_metrics() {
        let v: serde_json::Value = serde_json::from_str(&similarity_json("丸永", "丸水", 2).unwrap()).unwrap();
        assert_eq!(v["levenshtein"], 1);
        assert_eq!(v["char_cosine"], 0.0);
        assert!(v["stroke_cosine"].as_f64().unwrap() > 0.0);
    }

    #[test]
    fn noisy_views_are_seeded() {
        let a = noisy_views_json("明治製菓", 5, 0.3, 0.05, 0.05, 7).unwrap();
        assert_eq!(a, noisy_views_json("明治製菓", 5, 0.3, 0.05, 0.05, 7).unwrap());
        let clean = noisy_views_json("明治製菓", 2, 0.0, 0.0, 0.0, 7).unwrap();
        assert_eq!(clean, r#"["明治製菓","明治製菓"]"#);
        assert!(noisy_views_json("x", 1, 0.9, 0.9, 0.0, 7).is_err());
    }

    #[test]
    fn lr_curve_restarts() {
        let c = lr_curve_values(1.0, 2, 2, 7).unwrap();
        assert_eq!(c[0], 1.0);
        assert_eq!(c[2], 1.0);
        assert_eq!(c[6], 1.0);
        assert!(lr_curve_values(1.0, 0, 2, 3).is_err());
    }
}
