//! Synthetic paired data: noisy OCR text views from a character noise
//! channel and visual views from a seeded random projection of the clean
//! string plus Gaussian augmentation noise.

use std::collections::{BTreeMap, HashSet};
use std::io::BufRead;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::Record;
use crate::optim::{LabeledViews, View};
use crate::{derive_seed, par, Error, Result};

/// Confusable pairs seeded from documented OCR/vision mistakes.
pub const DEFAULT_CONFUSABLES: &[(char, char)] = &[('永', '水'), ('菓', '薬')];

/// Per-character substitution/deletion plus between-character insertion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseChannel {
    /// Character → weighted confusables. Ordered so sampling is reproducible.
    pub substitutions: BTreeMap<char, Vec<(char, f64)>>,
    pub p_sub: f64,
    pub p_del: f64,
    pub p_ins: f64,
    pub insertion_alphabet: Vec<char>,
}

impl Default for NoiseChannel {
    /// The identity channel over the default confusable table.
    fn default() -> Self {
        let mut ch = Self {
            substitutions: BTreeMap::new(),
            p_sub: 0.0,
            p_del: 0.0,
            p_ins: 0.0,
            insertion_alphabet: Vec::new(),
        };
        for &(a, b) in DEFAULT_CONFUSABLES {
            ch.add_confusable(a, b, 1.0).expect("positive weight");
            ch.add_confusable(b, a, 1.0).expect("positive weight");
        }
        ch
    }
}

impl NoiseChannel {
    pub fn with_rates(mut self, p_sub: f64, p_del: f64, p_ins: f64) -> Self {
        self.p_sub = p_sub;
        self.p_del = p_del;
        self.p_ins = p_ins;
        self
    }

    pub fn add_confusable(&mut self, from: char, to: char, weight: f64) -> Result<()> {
        if !(weight > 0.0 && weight.is_finite()) {
            return Err(Error::invalid(format!("confusable weight for {from}->{to} must be positive")));
        }
        if from == to {
            return Err(Error::invalid(format!("{from} cannot be its own confusable")));
        }
        let list = self.substitutions.entry(from).or_default();
        match list.iter_mut().find(|(c, _)| *c == to) {
            Some(entry) => entry.1 = weight,
            None => list.push((to, weight)),
        }
        Ok(())
    }

    /// Reads `char<TAB>confusable<TAB>weight` lines into the table.
    pub fn extend_from_tsv(&mut self, reader: impl BufRead) -> Result<()> {
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let perr = |msg: String| Error::Parse { line: i + 1, msg };
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(perr("expected char, confusable, weight".into()));
            }
            let single = |s: &str| {
                let mut it = s.chars();
                match (it.next(), it.next()) {
                    (Some(c), None) => Ok(c),
                    _ => Err(perr(format!("{s:?} is not a single character"))),
                }
            };
            let weight: f64 = cols[2].trim().parse().map_err(|_| perr(format!("bad weight {:?}", cols[2])))?;
            self.add_confusable(single(cols[0])?, single(cols[1])?, weight).map_err(|e| perr(e.to_string()))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        for p in [self.p_sub, self.p_del, self.p_ins] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid("noise probabilities must lie in [0, 1]"));
            }
        }
        if self.p_sub + self.p_del > 1.0 + 1e-12 {
            return Err(Error::invalid("p_sub + p_del must not exceed 1"));
        }
        if self.p_ins > 0.0 && self.insertion_alphabet.is_empty() {
            return Err(Error::invalid("insertions need a nonempty insertion alphabet"));
        }
        Ok(())
    }

    fn pick(list: &[(char, f64)], rng: &mut ChaCha8Rng) -> char {
        let total: f64 = list.iter().map(|(_, w)| w).sum();
        let mut r = rng.gen::<f64>() * total;
        for &(c, w) in list {
            if r < w {
                return c;
            }
            r -= w;
        }
        list.last().expect("nonempty confusable list").0
    }
}

/// Passes `s` through the channel. Each of the `len+1` gaps receives an
/// inserted alphabet character with probability `p_ins`; each character is
/// substituted by a weighted confusable with probability `p_sub` (characters
/// without confusables are kept), else deleted with probability `p_del`.
pub fn ocr_noise(s: &str, channel: &NoiseChannel, seed: u64) -> Result<String> {
    channel.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::with_capacity(s.len() + 4);
    let insert = |rng: &mut ChaCha8Rng, out: &mut String| {
        if rng.gen::<f64>() < channel.p_ins {
            let i = rng.gen_range(0..channel.insertion_alphabet.len());
            out.push(channel.insertion_alphabet[i]);
        }
    };
    for c in s.chars() {
        insert(&mut rng, &mut out);
        let r = rng.gen::<f64>();
        if r < channel.p_sub {
            match channel.substitutions.get(&c) {
                Some(list) if !list.is_empty() => out.push(NoiseChannel::pick(list, &mut rng)),
                _ => out.push(c),
            }
        } else if r < channel.p_sub + channel.p_del {
            // deleted
        } else {
            out.push(c);
        }
    }
    insert(&mut rng, &mut out);
    Ok(out)
}

fn fnv1a(seed: u64, bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ seed;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Character bigram counts; strings of one character count as one gram.
fn bigram_counts(s: &str) -> BTreeMap<String, f64> {
    let chars: Vec<char> = s.chars().collect();
    let mut counts = BTreeMap::new();
    if chars.len() == 1 {
        counts.insert(chars[0].to_string(), 1.0);
    }
    for w in chars.windows(2) {
        *counts.entry(w.iter().collect::<String>()).or_insert(0.0) += 1.0;
    }
    counts
}

/// Visual-proxy features of `s`: the unit bigram count vector projected by a
/// seeded standard-normal matrix (one column per bigram, derived from
/// `projection_seed` and the bigram), plus `N(0, aug_strength²)` noise from
/// `noise_seed`. Each projected component has unit variance, so
/// `aug_strength` reads as a per-component noise-to-signal ratio.
pub fn visual_proxy(s: &str, dim: usize, aug_strength: f64, projection_seed: u64, noise_seed: u64) -> Result<Vec<f64>> {
    if dim == 0 {
        return Err(Error::invalid("visual proxy dimension must be positive"));
    }
    if !(aug_strength >= 0.0 && aug_strength.is_finite()) {
        return Err(Error::invalid("aug_strength must be finite and non-negative"));
    }
    let counts = bigram_counts(s);
    let norm = counts.values().map(|c| c * c).sum::<f64>().sqrt();
    let mut out = vec![0.0; dim];
    for (gram, c) in &counts {
        let mut col = ChaCha8Rng::seed_from_u64(fnv1a(projection_seed, gram.as_bytes()));
        let w = c / norm;
        for o in out.iter_mut() {
            let x: f64 = StandardNormal.sample(&mut col);
            *o += w * x;
        }
    }
    if aug_strength > 0.0 {
        let mut noise = ChaCha8Rng::seed_from_u64(noise_seed);
        for o in out.iter_mut() {
            let x: f64 = StandardNormal.sample(&mut noise);
            *o += aug_strength * x;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthView {
    pub text: String,
    /// Stored at `f32` precision, the precision of the record file format.
    pub visual: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthRecord {
    pub label: String,
    pub clean: String,
    pub views: Vec<SynthView>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthSeeds {
    /// Shared by every view: fixes the bigram projection.
    pub projection: u64,
    /// Master seed for per-view text and visual noise.
    pub noise: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub views_per_label: usize,
    pub visual_dim: usize,
    pub aug_strength: f64,
    pub channel: NoiseChannel,
    pub seeds: SynthSeeds,
}

/// Attempts at redrawing a noisy text that came out empty before falling
/// back to the clean string; every view keeps nonempty text.
const EMPTY_TEXT_RETRIES: u64 = 8;

/// Views `first_view..first_view+count` of `word`; view seeds depend only on
/// `(noise seed, word_index, view index)`.
pub fn synth_views(word: &str, word_index: usize, first_view: usize, count: usize, cfg: &SynthConfig) -> Result<Vec<SynthView>> {
    let word_seed = derive_seed(cfg.seeds.noise, word_index as u64);
    (first_view..first_view + count)
        .map(|v| {
            let view_seed = derive_seed(word_seed, v as u64);
            let mut text = String::new();
            for attempt in 0..EMPTY_TEXT_RETRIES {
                text = ocr_noise(word, &cfg.channel, derive_seed(view_seed, 2 * attempt))?;
                if !text.is_empty() {
                    break;
                }
            }
            if text.is_empty() {
                text = word.to_string();
            }
            let visual = visual_proxy(word, cfg.visual_dim, cfg.aug_strength, cfg.seeds.projection, derive_seed(view_seed, 1))?;
            Ok(SynthView { text, visual: visual.into_iter().map(|x| x as f32).collect() })
        })
        .collect()
}

/// One record per word, each with `views_per_label` views; deterministic in
/// the seeds and independent of scheduling.
pub fn generate_synthetic_dataset<S: AsRef<str> + Sync>(words: &[S], cfg: &SynthConfig) -> Result<Vec<SynthRecord>> {
    if cfg.views_per_label == 0 {
        return Err(Error::invalid("views_per_label must be positive"));
    }
    cfg.channel.validate()?;
    let mut seen = HashSet::new();
    for w in words {
        if !seen.insert(w.as_ref()) {
            return Err(Error::invalid(format!("duplicate word {}", w.as_ref())));
        }
    }
    let indexed: Vec<(usize, &str)> = words.iter().map(AsRef::as_ref).enumerate().collect();
    par::map_collect(&indexed, |&(i, w)| {
        Ok(SynthRecord { label: w.to_string(), clean: w.to_string(), views: synth_views(w, i, 0, cfg.views_per_label, cfg)? })
    })
    .into_iter()
    .collect()
}

/// Flattens to the record file format: one record per view, id
/// `label#view`, with `label` and the proxy in `vec`.
pub fn to_records(data: &[SynthRecord]) -> Vec<Record> {
    data.iter()
        .flat_map(|r| {
            r.views.iter().enumerate().map(move |(v, view)| {
                Record::new(format!("{}#{v}", r.label), view.text.clone())
                    .with_vec(view.visual.clone())
                    .with_label(r.label.clone())
            })
        })
        .collect()
}

/// Groups labeled records with visual vectors into training views.
pub fn labeled_views(records: &[Record]) -> Result<LabeledViews> {
    let mut out = LabeledViews::new();
    for r in records {
        let label = r.label.as_ref().ok_or_else(|| Error::invalid(format!("record {} has no label", r.id)))?;
        let visual = r
            .visual_embedding
            .as_ref()
            .ok_or_else(|| Error::invalid(format!("record {} has no visual vector", r.id)))?;
        out.push(label.clone(), View { visual: visual.iter().map(|&x| f64::from(x)).collect(), text: r.text.clone() });
    }
    Ok(out)
}

impl SynthRecord {
    pub fn training_views(&self) -> impl Iterator<Item = View> + '_ {
        self.views.iter().map(|v| View { visual: v.visual.iter().map(|&x| f64::from(x)).collect(), text: v.text.clone() })
    }
}
