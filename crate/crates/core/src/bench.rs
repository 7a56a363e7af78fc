//! The frozen synthetic benchmark: 500 word classes over a confusable CJK
//! alphabet, split by class, linked against a clean directory under a noisy
//! and a clean OCR channel.
//!
//! Per channel the pipeline pretrains the toy encoders with the image-text
//! loss, mines hard-negative sets from the pretrained embeddings, and trains
//! one supervised variant per retrieval mode. Accuracies are top-1 on the
//! test classes present in the directory; string baselines run on the same
//! queries.

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{split_by_class, GroundTruth, HyperParams, Record};
use crate::linkage::{apply_threshold, evaluate, link, tune_threshold, EvalMode, LinkMode, LinkOptions, LinkPrediction};
use crate::mining::{build_hard_negative_sets, BatchPlanner, BatchShape};
use crate::optim::{embed_pooled, pretrain_toy, train_supervised_toy, LabeledViews, ModelConfig, PlanSchedule, ToyModel, View};
use crate::strmetrics::{stringmatch_link, DecompositionTable, StringMetric, Unit, DEFAULT_STROKE_N};
use crate::synth::{synth_views, visual_proxy, NoiseChannel, SynthConfig, SynthSeeds};
use crate::{derive_seed, Error, Result};

pub const WORDS: &str = include_str!("../data/benchmark_words.txt");
pub const CONFUSABLES: &str = include_str!("../data/benchmark_confusables.tsv");
pub const STROKES: &str = include_str!("../data/benchmark_strokes.tsv");

pub fn words() -> Vec<&'static str> {
    WORDS.lines().filter(|l| !l.is_empty()).collect()
}

pub fn stroke_table() -> Result<DecompositionTable> {
    DecompositionTable::read_tsv(STROKES.as_bytes())
}

/// Characters the benchmark words are drawn from, in first-use order.
pub fn alphabet() -> Vec<char> {
    let mut seen = Vec::new();
    for c in WORDS.chars().filter(|c| !c.is_whitespace()) {
        if !seen.contains(&c) {
            seen.push(c);
        }
    }
    seen
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelPreset {
    Noisy,
    Clean,
}

impl ChannelPreset {
    pub fn rates(self) -> (f64, f64, f64) {
        match self {
            ChannelPreset::Noisy => (0.15, 0.03, 0.02),
            ChannelPreset::Clean => (0.005, 0.0005, 0.0005),
        }
    }

    /// The benchmark confusable table with this preset's rates.
    pub fn channel(self) -> Result<NoiseChannel> {
        let mut ch = NoiseChannel { insertion_alphabet: alphabet(), ..NoiseChannel::default() };
        ch.extend_from_tsv(CONFUSABLES.as_bytes())?;
        let (s, d, i) = self.rates();
        Ok(ch.with_rates(s, d, i))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub seed: u64,
    pub visual_dim: usize,
    pub embed_dim: usize,
    pub hidden: Option<usize>,
    /// Views generated per training class; batches sample among them.
    pub train_views: usize,
    pub query_views: usize,
    /// Visual augmentation of training views, queries and directory entries.
    pub train_aug: f64,
    pub query_aug: f64,
    pub target_aug: f64,
    /// Share of validation and test classes left out of the directory.
    pub no_match_fraction: f64,
    /// Share of directory classes listed twice.
    pub multi_target_fraction: f64,
    pub pretrain: HyperParams,
    pub supervised: HyperParams,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            seed: 20240611,
            visual_dim: 128,
            embed_dim: 64,
            hidden: None,
            train_views: 8,
            query_views: 3,
            train_aug: 1.3,
            query_aug: 1.3,
            target_aug: 0.3,
            no_match_fraction: 0.2,
            multi_target_fraction: 0.1,
            pretrain: HyperParams { lr_max: 2e-3, batch_size: 153, weight_decay: 0.001, temp: 0.048, epochs: 20, ..HyperParams::default() },
            supervised: HyperParams { lr_max: 1e-3, batch_size: 153, weight_decay: 0.001, temp: 0.1, epochs: 40, ..HyperParams::default() },
        }
    }
}

/// Seed streams of one benchmark run.
mod stream {
    pub const PROJECTION: u64 = 1;
    pub const TRAIN_NOISE: u64 = 2;
    pub const QUERY_NOISE: u64 = 3;
    pub const TARGET_NOISE: u64 = 4;
    pub const SPLIT: u64 = 5;
    pub const MODEL: u64 = 6;
    pub const PRETRAIN: u64 = 7;
    pub const MINING: u64 = 8;
    pub const DIRECTORY: u64 = 9;
}

/// Materialized benchmark data for one channel.
#[derive(Debug, Clone)]
pub struct BenchData {
    pub train: LabeledViews,
    /// Clean rendering per training class, used for mining.
    pub train_clean: Vec<(String, View)>,
    pub targets: Vec<Record>,
    pub val_queries: Vec<Record>,
    pub test_queries: Vec<Record>,
    pub val_truth: GroundTruth,
    pub test_truth: GroundTruth,
}

impl BenchConfig {
    fn synth(&self, preset: ChannelPreset, noise_stream: u64, aug: f64, views: usize) -> Result<SynthConfig> {
        Ok(SynthConfig {
            views_per_label: views,
            visual_dim: self.visual_dim,
            aug_strength: aug,
            channel: preset.channel()?,
            seeds: SynthSeeds {
                projection: derive_seed(self.seed, stream::PROJECTION),
                noise: derive_seed(self.seed, noise_stream),
            },
        })
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig { hidden: self.hidden, ..ModelConfig::new(self.visual_dim, self.embed_dim) }
    }
}

fn to_f32(v: Vec<f64>) -> Vec<f32> {
    v.into_iter().map(|x| x as f32).collect()
}

/// Builds the training views, directory, queries and ground truth.
pub fn build_data(cfg: &BenchConfig, preset: ChannelPreset) -> Result<BenchData> {
    let words = words();
    let index_of: HashMap<&str, usize> = words.iter().enumerate().map(|(i, w)| (*w, i)).collect();
    let split = split_by_class(&words, (0.6, 0.2, 0.2), derive_seed(cfg.seed, stream::SPLIT))?;
    let projection = derive_seed(cfg.seed, stream::PROJECTION);

    let train_cfg = cfg.synth(preset, stream::TRAIN_NOISE, cfg.train_aug, cfg.train_views)?;
    let mut train = LabeledViews::new();
    let mut train_clean = Vec::new();
    for w in &split.train {
        let i = index_of[w.as_str()];
        for v in synth_views(w, i, 0, cfg.train_views, &train_cfg)? {
            train.push(w.clone(), View { visual: v.visual.iter().map(|&x| f64::from(x)).collect(), text: v.text });
        }
        let visual = to_f32(visual_proxy(w, cfg.visual_dim, 0.0, projection, 0)?);
        train_clean.push((w.clone(), View { visual: visual.iter().map(|&x| f64::from(x)).collect(), text: w.clone() }));
    }

    // Directory membership: some held-out classes have no entry, some have two.
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, stream::DIRECTORY));
    let mut absent = Vec::new();
    for part in [&split.val, &split.test] {
        let mut classes: Vec<&String> = part.iter().collect();
        classes.shuffle(&mut rng);
        let n = (classes.len() as f64 * cfg.no_match_fraction).round() as usize;
        absent.extend(classes.into_iter().take(n).cloned());
    }
    let mut present: Vec<&str> = words.iter().copied().filter(|w| !absent.iter().any(|a| a == w)).collect();
    present.shuffle(&mut rng);
    let n_multi = (present.len() as f64 * cfg.multi_target_fraction).round() as usize;
    let mut entries: BTreeMap<&str, usize> = present.iter().map(|w| (*w, 1)).collect();
    for w in &present[..n_multi] {
        entries.insert(w, 2);
    }

    let target_noise = derive_seed(cfg.seed, stream::TARGET_NOISE);
    let mut targets = Vec::new();
    let mut target_ids: HashMap<&str, Vec<String>> = HashMap::new();
    for (w, n) in &entries {
        let i = index_of[w];
        for e in 0..*n {
            let id = if e == 0 { format!("t:{w}") } else { format!("t:{w}:{}", e + 1) };
            let noise = derive_seed(derive_seed(target_noise, i as u64), e as u64);
            let visual = to_f32(visual_proxy(w, cfg.visual_dim, cfg.target_aug, projection, noise)?);
            targets.push(Record::new(id.clone(), *w).with_vec(visual));
            target_ids.entry(w).or_default().push(id);
        }
    }

    let query_cfg = cfg.synth(preset, stream::QUERY_NOISE, cfg.query_aug, cfg.query_views)?;
    let make_queries = |classes: &std::collections::BTreeSet<String>| -> Result<(Vec<Record>, GroundTruth)> {
        let mut queries = Vec::new();
        let mut truth = GroundTruth::new();
        for w in classes {
            let i = index_of[w.as_str()];
            for (v, view) in synth_views(w, i, 0, cfg.query_views, &query_cfg)?.into_iter().enumerate() {
                let id = format!("q:{w}#{v}");
                truth.insert(id.clone(), target_ids.get(w.as_str()).cloned().unwrap_or_default());
                queries.push(Record::new(id, view.text).with_vec(view.visual).with_label(w.clone()));
            }
        }
        Ok((queries, truth))
    };
    let (val_queries, val_truth) = make_queries(&split.val)?;
    let (test_queries, test_truth) = make_queries(&split.test)?;
    Ok(BenchData { train, train_clean, targets, val_queries, test_queries, val_truth, test_truth })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub name: String,
    pub accuracy: f64,
    pub n_queries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelReport {
    pub channel: ChannelPreset,
    pub string_baselines: Vec<Accuracy>,
    pub pretrain_multimodal: f64,
    pub visual: f64,
    pub language: f64,
    pub multimodal: f64,
    /// Multimodal threshold tuned on validation queries.
    pub nm_thresh: Option<f64>,
    /// Test accuracy with the tuned threshold, counting unmatched queries.
    pub multimodal_with_no_match: Option<f64>,
}

impl ChannelReport {
    pub fn best_string_baseline(&self) -> f64 {
        self.string_baselines.iter().map(|a| a.accuracy).fold(0.0, f64::max)
    }
}

/// One channel's report plus the artifacts downstream checks inspect.
#[derive(Debug, Clone)]
pub struct ChannelRun {
    pub report: ChannelReport,
    pub data: BenchData,
    /// Unthresholded test predictions of the supervised multimodal model.
    pub multimodal_predictions: Vec<LinkPrediction>,
    pub models: BTreeMap<&'static str, ToyModel>,
}

fn accuracy(preds: &[LinkPrediction], truth: &GroundTruth, mode: EvalMode) -> Result<f64> {
    Ok(evaluate(preds, truth, false, mode)?.accuracy)
}

/// Runs the whole pipeline for one channel.
pub fn run_channel(cfg: &BenchConfig, preset: ChannelPreset) -> Result<ChannelRun> {
    let data = build_data(cfg, preset)?;
    let table = stroke_table()?;
    let mut string_baselines = Vec::new();
    for (name, metric, table) in [
        ("levenshtein", StringMetric::Levenshtein, None),
        ("char-bigram", StringMetric::NGramCosine { n: 2, unit: Unit::Character }, None),
        ("stroke-ngram", StringMetric::NGramCosine { n: DEFAULT_STROKE_N, unit: Unit::Stroke }, Some(&table)),
    ] {
        let preds: Vec<LinkPrediction> =
            stringmatch_link(&data.test_queries, &data.targets, metric, table)?.into_iter().map(Into::into).collect();
        let r = evaluate(&preds, &data.test_truth, false, EvalMode::StringMetric)?;
        string_baselines.push(Accuracy { name: name.into(), accuracy: r.accuracy, n_queries: r.n_queries });
    }

    let mut pretrained = ToyModel::init(&cfg.model_config(), derive_seed(cfg.seed, stream::MODEL))?;
    let pairs: Vec<View> = (0..data.train.len()).flat_map(|l| data.train.views(l).iter().cloned()).collect();
    pretrain_toy(&mut pretrained, &pairs, &cfg.pretrain, derive_seed(cfg.seed, stream::PRETRAIN))?;
    let link_test = |model: &ToyModel, mode: LinkMode, im_wt: f64| {
        link(&data.test_queries, &data.targets, model, &LinkOptions::new(mode, im_wt))
    };
    let pretrain_multimodal =
        accuracy(&link_test(&pretrained, LinkMode::Multimodal, 0.5)?, &data.test_truth, EvalMode::Multimodal)?;

    let mining_emb: Vec<(String, Vec<f64>)> = data
        .train_clean
        .iter()
        .map(|(l, v)| Ok((l.clone(), embed_pooled(&pretrained, v, 0.5)?)))
        .collect::<Result<_>>()?;
    let sets = build_hard_negative_sets(&mining_emb, cfg.supervised.neighbors)?;
    let shape = BatchShape { batch_size: cfg.supervised.batch_size, k: cfg.supervised.neighbors, m: cfg.supervised.views };
    let view_counts = data.train.labels().iter().cloned().zip(data.train.view_counts()).collect();
    let plans = PlanSchedule::PerEpoch(BatchPlanner { sets, shape, view_counts, seed: derive_seed(cfg.seed, stream::MINING) });

    let mut models = BTreeMap::new();
    let mut acc = BTreeMap::new();
    let mut multimodal_predictions = Vec::new();
    for (name, mode, im_wt) in [
        ("visual", LinkMode::Visual, 1.0),
        ("language", LinkMode::Language, 0.0),
        ("multimodal", LinkMode::Multimodal, cfg.supervised.im_wt),
    ] {
        let mut model = pretrained.clone();
        let hp = HyperParams { im_wt, ..cfg.supervised.clone() };
        train_supervised_toy(&mut model, &data.train, &plans, &hp)?;
        let preds = link_test(&model, mode, im_wt)?;
        acc.insert(name, accuracy(&preds, &data.test_truth, mode.into())?);
        if mode == LinkMode::Multimodal {
            multimodal_predictions = preds;
        }
        models.insert(name, model);
    }
    models.insert("pretrained", pretrained);

    let mm = &models["multimodal"];
    let val_preds = link(&data.val_queries, &data.targets, mm, &LinkOptions::new(LinkMode::Multimodal, cfg.supervised.im_wt))?;
    let nm_thresh = tune_threshold(&val_preds, &data.val_truth)?;
    let multimodal_with_no_match = match nm_thresh {
        Some(t) => Some(evaluate(&apply_threshold(&multimodal_predictions, t), &data.test_truth, true, EvalMode::Multimodal)?.accuracy),
        None => None,
    };

    let report = ChannelReport {
        channel: preset,
        string_baselines,
        pretrain_multimodal,
        visual: acc["visual"],
        language: acc["language"],
        multimodal: acc["multimodal"],
        nm_thresh,
        multimodal_with_no_match,
    };
    Ok(ChannelRun { report, data, multimodal_predictions, models })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub noisy: ChannelReport,
    pub clean: ChannelReport,
}

impl BenchReport {
    /// The three ordering checks: multimodal > visual > language under
    /// noise, pretrain-only multimodal above every string baseline, and
    /// clean language at least noisy language.
    pub fn orderings(&self) -> [(&'static str, bool); 3] {
        let n = &self.noisy;
        [
            ("multimodal > visual > language (noisy)", n.multimodal > n.visual && n.visual > n.language),
            ("pretrain-only multimodal > best string baseline", n.pretrain_multimodal > n.best_string_baseline()),
            ("clean language >= noisy language", self.clean.language >= n.language),
        ]
    }
}

pub fn run_benchmark(cfg: &BenchConfig) -> Result<(BenchReport, ChannelRun, ChannelRun)> {
    if words().len() != 500 {
        return Err(Error::Format("benchmark word list must hold 500 words".into()));
    }
    let noisy = run_channel(cfg, ChannelPreset::Noisy)?;
    let clean = run_channel(cfg, ChannelPreset::Clean)?;
    Ok((BenchReport { noisy: noisy.report.clone(), clean: clean.report.clone() }, noisy, clean))
}
