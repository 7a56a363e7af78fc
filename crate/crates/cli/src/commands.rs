use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use anyhow::{anyhow, Context};
use serde::Serialize;

use mmlink_core::bench::{run_benchmark, BenchConfig};
use mmlink_core::dataset::{read_records, validate_dataset, write_jsonl, write_records, GroundTruth, HyperParams, Record};
use mmlink_core::linkage::{
    apply_threshold, evaluate, link, read_pairs_csv, read_predictions_csv, supply_graph_stats, tune_threshold,
    write_graph_stats_csv, write_predictions_csv, EvalMode, LinkMode, LinkOptions, LinkPrediction, SupplyGraph,
};
use mmlink_core::metricspace::TempMode;
use mmlink_core::mining::{build_hard_negative_sets, partition_batches, BatchPlan, BatchPlanner, BatchShape, HardNegativeSet};
use mmlink_core::optim::{
    embed_pooled, pretrain_toy, read_checkpoint, train_supervised_toy, write_checkpoint, LabeledViews, ModelConfig,
    PlanSchedule, TextFeaturizer, ToyModel, View,
};
use mmlink_core::strmetrics::{stringmatch_link, DecompositionTable, StringMetric, Unit, DEFAULT_STROKE_N};
use mmlink_core::synth::{generate_synthetic_dataset, labeled_views, to_records, NoiseChannel, SynthConfig, SynthSeeds};
use mmlink_core::vecindex::l2_normalize;

use crate::output::Run;
use crate::{
    BenchArgs, Command, EvalArgs, EvalModeArg, Failure, GraphArgs, IngestArgs, LinkArgs, MetricArg, MineArgs, ModeArg,
    PretrainArgs, StringmatchArgs, SynthArgs, TempModeArg, TrainArgs, TrainingFlags, UnitArg,
};

type Outcome = Result<(), Failure>;

fn config_err(msg: impl std::fmt::Display) -> Failure {
    Failure::Config(anyhow!("{msg}"))
}

/// Input files must exist before any work starts.
fn require(paths: &[(&str, Option<&Path>)]) -> Outcome {
    for (flag, p) in paths {
        if let Some(p) = p {
            if !p.is_file() {
                return Err(config_err(format!("--{flag}: no such file {}", p.display())));
            }
        }
    }
    Ok(())
}

fn start(name: &str, out_dir: &Path, args: &impl Serialize, inputs: &[&Path]) -> Result<Run, Failure> {
    if out_dir.exists() && !out_dir.is_dir() {
        return Err(config_err(format!("--out-dir {} is not a directory", out_dir.display())));
    }
    let mut run = Run::new(out_dir, name, serde_json::to_value(args).map_err(anyhow::Error::from)?);
    for p in inputs {
        run.input(p)?;
    }
    Ok(run)
}

fn open(p: &Path) -> anyhow::Result<BufReader<File>> {
    Ok(BufReader::new(File::open(p).with_context(|| format!("opening {}", p.display()))?))
}

fn records(p: &Path) -> anyhow::Result<Vec<Record>> {
    read_records(open(p)?).with_context(|| format!("reading records {}", p.display()))
}

fn model(p: &Path) -> anyhow::Result<ToyModel> {
    read_checkpoint(open(p)?).with_context(|| format!("reading checkpoint {}", p.display()))
}

fn checkpoint_bytes(m: &ToyModel) -> anyhow::Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_checkpoint(m, &mut buf)?;
    Ok(buf)
}

fn hyper(t: &TrainingFlags, defaults: HyperParams) -> Result<HyperParams, Failure> {
    let hp = HyperParams {
        lr_max: t.lr_max.unwrap_or(defaults.lr_max),
        batch_size: t.batch_size,
        weight_decay: t.weight_decay,
        temp: t.temp.unwrap_or(defaults.temp),
        epochs: t.epochs.unwrap_or(defaults.epochs),
        temp_mode: match t.temp_mode {
            TempModeArg::Divide => TempMode::Divide,
            TempModeArg::Multiply => TempMode::Multiply,
        },
        include_self: t.include_self,
        ..defaults
    };
    hp.validate().map_err(config_err)?;
    Ok(hp)
}

pub fn run(cmd: Command) -> Outcome {
    match cmd {
        Command::Ingest(a) => ingest(a),
        Command::Synth(a) => synth(a),
        Command::Pretrain(a) => pretrain(a),
        Command::Mine(a) => mine(a),
        Command::Train(a) => train(a),
        Command::Link(a) => link_cmd(a),
        Command::Eval(a) => eval(a),
        Command::Stringmatch(a) => stringmatch(a),
        Command::Graph(a) => graph(a),
        Command::Bench(a) => bench(a),
    }
}

fn ingest(a: IngestArgs) -> Outcome {
    require(&[("records", Some(&a.records))])?;
    let mut run = start("ingest", &a.out_dir, &a, &[&a.records])?;
    let recs = records(&a.records)?;
    let dim = a.dim.or_else(|| recs.iter().find_map(|r| r.visual_embedding.as_ref().map(Vec::len))).unwrap_or(0);
    let report = validate_dataset(&recs, dim);
    let mut json = serde_json::to_vec_pretty(&report).map_err(anyhow::Error::from)?;
    json.push(b'\n');
    run.output("validation.json", json);
    if !report.is_ok() {
        let n = report.violations.len();
        run.finish()?;
        return Err(Failure::Runtime(anyhow!("{n} validation violation(s); see validation.json")));
    }
    let mut buf = Vec::new();
    write_records(&mut buf, &recs)?;
    run.output("records.jsonl", buf);
    run.finish()?;
    Ok(())
}

fn synth(a: SynthArgs) -> Outcome {
    require(&[("words", Some(&a.words)), ("confusables", a.confusables.as_deref())])?;
    let mut inputs = vec![a.words.as_path()];
    inputs.extend(a.confusables.as_deref());
    let mut run = start("synth", &a.out_dir, &a, &inputs)?;
    let text = std::fs::read_to_string(&a.words).map_err(anyhow::Error::from)?;
    let words: Vec<&str> = text.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    let alphabet: Vec<char> = match &a.insertion_alphabet {
        Some(s) => s.chars().collect(),
        None => {
            let set: BTreeSet<char> = words.iter().flat_map(|w| w.chars()).collect();
            set.into_iter().collect()
        }
    };
    let mut channel = NoiseChannel { insertion_alphabet: alphabet, ..NoiseChannel::default() }.with_rates(a.p_sub, a.p_del, a.p_ins);
    if let Some(p) = &a.confusables {
        channel.extend_from_tsv(open(p)?)?;
    }
    channel.validate().map_err(config_err)?;
    let cfg = SynthConfig {
        views_per_label: a.views,
        visual_dim: a.visual_dim,
        aug_strength: a.aug_strength,
        channel,
        seeds: SynthSeeds { projection: a.projection_seed, noise: a.seed },
    };
    let data = generate_synthetic_dataset(&words, &cfg)?;
    let mut buf = Vec::new();
    write_records(&mut buf, &to_records(&data))?;
    run.output("records.jsonl", buf);
    run.finish()?;
    Ok(())
}

fn views(recs: &[Record]) -> Result<LabeledViews, Failure> {
    let v = labeled_views(recs)?;
    if v.is_empty() {
        return Err(Failure::Runtime(anyhow!("no labeled records")));
    }
    Ok(v)
}

fn pretrain(a: PretrainArgs) -> Outcome {
    require(&[("records", Some(&a.records)), ("init", a.init.as_deref())])?;
    let hp = hyper(&a.training, HyperParams::pretraining())?;
    let mut inputs = vec![a.records.as_path()];
    inputs.extend(a.init.as_deref());
    let mut run = start("pretrain", &a.out_dir, &a, &inputs)?;
    let data = views(&records(&a.records)?)?;
    let pairs: Vec<View> = (0..data.len()).flat_map(|l| data.views(l).iter().cloned()).collect();
    let visual_dim = pairs[0].visual.len();
    let mut m = match &a.init {
        Some(p) => model(p)?,
        None => {
            let featurizer = TextFeaturizer::new(a.hash_dim, vec![1, 2, 3]).map_err(config_err)?;
            let cfg = ModelConfig { featurizer, visual_dim, embed_dim: a.embed_dim, hidden: a.hidden };
            ToyModel::init(&cfg, a.model_seed).map_err(config_err)?
        }
    };
    let trace = pretrain_toy(&mut m, &pairs, &hp, a.seed)?;
    let mut csv = Vec::new();
    trace.write_csv(&mut csv)?;
    run.output("model.ckpt", checkpoint_bytes(&m)?);
    run.output("trace.csv", csv);
    run.finish()?;
    Ok(())
}

/// Per-label mining vector: the normalized mean of the label's pooled view
/// embeddings.
fn label_vectors(m: &ToyModel, data: &LabeledViews, im_wt: f64) -> anyhow::Result<Vec<(String, Vec<f64>)>> {
    data.labels()
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let mut mean = vec![0.0; m.embed_dim()];
            for v in data.views(i) {
                for (s, x) in mean.iter_mut().zip(embed_pooled(m, v, im_wt)?) {
                    *s += x;
                }
            }
            Ok((l.clone(), l2_normalize(&mean)?))
        })
        .collect()
}

fn view_counts(data: &LabeledViews) -> HashMap<String, usize> {
    data.labels().iter().cloned().zip(data.view_counts()).collect()
}

fn mine(a: MineArgs) -> Outcome {
    require(&[("records", Some(&a.records)), ("model", Some(&a.model))])?;
    let shape = BatchShape { batch_size: a.batch_size, k: a.k, m: a.m };
    shape.sets_per_batch().map_err(config_err)?;
    if !(0.0..=1.0).contains(&a.im_wt) {
        return Err(config_err("--im-wt must lie in [0, 1]"));
    }
    let mut run = start("mine", &a.out_dir, &a, &[&a.records, &a.model])?;
    let data = views(&records(&a.records)?)?;
    let m = model(&a.model)?;
    let sets = build_hard_negative_sets(&label_vectors(&m, &data, a.im_wt)?, a.k)?;
    let plan = partition_batches(&sets, shape, &view_counts(&data), a.seed)?;
    let mut sets_buf = Vec::new();
    write_jsonl(&mut sets_buf, &sets)?;
    let mut plan_buf = Vec::new();
    plan.write_jsonl(&mut plan_buf)?;
    run.output("sets.jsonl", sets_buf);
    run.output("plan.jsonl", plan_buf);
    run.finish()?;
    Ok(())
}

fn train(a: TrainArgs) -> Outcome {
    require(&[("records", Some(&a.records)), ("model", Some(&a.model)), ("sets", a.sets.as_deref()), ("plan", a.plan.as_deref())])?;
    let hp = HyperParams { im_wt: a.im_wt, views: a.m, neighbors: a.k, ..hyper(&a.training, HyperParams::default())? };
    hp.validate_for_mining().map_err(config_err)?;
    let mut inputs = vec![a.records.as_path(), a.model.as_path()];
    inputs.extend(a.sets.as_deref());
    inputs.extend(a.plan.as_deref());
    let mut run = start("train", &a.out_dir, &a, &inputs)?;
    let data = views(&records(&a.records)?)?;
    let mut m = model(&a.model)?;
    let plans = match (&a.sets, &a.plan) {
        (Some(p), _) => {
            let sets: Vec<HardNegativeSet> = mmlink_core::dataset::read_jsonl(open(p)?)?;
            let shape = BatchShape { batch_size: hp.batch_size, k: a.k, m: a.m };
            PlanSchedule::PerEpoch(BatchPlanner { sets, shape, view_counts: view_counts(&data), seed: a.seed })
        }
        (None, Some(p)) => PlanSchedule::Fixed(BatchPlan::read_jsonl(open(p)?)?),
        (None, None) => return Err(config_err("one of --sets or --plan is required")),
    };
    let trace = train_supervised_toy(&mut m, &data, &plans, &hp)?;
    let mut csv = Vec::new();
    trace.write_csv(&mut csv)?;
    run.output("model.ckpt", checkpoint_bytes(&m)?);
    run.output("trace.csv", csv);
    run.finish()?;
    Ok(())
}

fn predictions_bytes(preds: &[LinkPrediction]) -> anyhow::Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_predictions_csv(&mut buf, preds)?;
    Ok(buf)
}

fn link_cmd(a: LinkArgs) -> Outcome {
    require(&[("queries", Some(&a.queries)), ("targets", Some(&a.targets)), ("model", Some(&a.model))])?;
    if !(0.0..=1.0).contains(&a.im_wt) {
        return Err(config_err("--im-wt must lie in [0, 1]"));
    }
    let mut run = start("link", &a.out_dir, &a, &[&a.queries, &a.targets, &a.model])?;
    let mode = match a.mode {
        ModeArg::Visual => LinkMode::Visual,
        ModeArg::Language => LinkMode::Language,
        ModeArg::Multimodal => LinkMode::Multimodal,
    };
    let opts = LinkOptions { mode, im_wt: a.im_wt, nm_thresh: a.nm_thresh, block: a.block };
    let preds = link(&records(&a.queries)?, &records(&a.targets)?, &model(&a.model)?, &opts)?;
    run.output("predictions.csv", predictions_bytes(&preds)?);
    run.finish()?;
    Ok(())
}

fn eval(a: EvalArgs) -> Outcome {
    require(&[("predictions", Some(&a.predictions)), ("truth", Some(&a.truth))])?;
    let mut run = start("eval", &a.out_dir, &a, &[&a.predictions, &a.truth])?;
    let preds = read_predictions_csv(open(&a.predictions)?)?;
    let truth = GroundTruth::read_jsonl(open(&a.truth)?)?;
    if a.tune {
        let t = tune_threshold(&preds, &truth)?;
        let json = serde_json::to_vec_pretty(&serde_json::json!({ "nm_thresh": t })).map_err(anyhow::Error::from)?;
        run.output("threshold.json", [json, b"\n".to_vec()].concat());
    } else {
        let preds = match a.nm_thresh {
            Some(t) => apply_threshold(&preds, t),
            None => preds,
        };
        let mode = match a.mode {
            EvalModeArg::Visual => EvalMode::Visual,
            EvalModeArg::Language => EvalMode::Language,
            EvalModeArg::Multimodal => EvalMode::Multimodal,
            EvalModeArg::StringMetric => EvalMode::StringMetric,
        };
        let report = evaluate(&preds, &truth, a.include_no_match, mode)?;
        let json = serde_json::to_vec_pretty(&report).map_err(anyhow::Error::from)?;
        run.output("report.json", [json, b"\n".to_vec()].concat());
    }
    run.finish()?;
    Ok(())
}

fn stringmatch(a: StringmatchArgs) -> Outcome {
    require(&[("queries", Some(&a.queries)), ("targets", Some(&a.targets)), ("table", a.table.as_deref())])?;
    let unit = match a.unit {
        UnitArg::Char => Unit::Character,
        UnitArg::Stroke => Unit::Stroke,
    };
    let metric = match a.metric {
        MetricArg::Lev => StringMetric::Levenshtein,
        MetricArg::Ngram => {
            let n = a.n.unwrap_or(if unit == Unit::Stroke { DEFAULT_STROKE_N } else { 2 });
            if n == 0 {
                return Err(config_err("--n must be positive"));
            }
            StringMetric::NGramCosine { n, unit }
        }
    };
    if matches!(metric, StringMetric::NGramCosine { unit: Unit::Stroke, .. }) && a.table.is_none() {
        return Err(config_err("--unit stroke needs --table"));
    }
    let mut inputs = vec![a.queries.as_path(), a.targets.as_path()];
    inputs.extend(a.table.as_deref());
    let mut run = start("stringmatch", &a.out_dir, &a, &inputs)?;
    let table = match &a.table {
        Some(p) => Some(DecompositionTable::read_tsv(open(p)?)?),
        None => None,
    };
    let matches = stringmatch_link(&records(&a.queries)?, &records(&a.targets)?, metric, table.as_ref())?;
    let preds: Vec<LinkPrediction> = matches.into_iter().map(Into::into).collect();
    run.output("predictions.csv", predictions_bytes(&preds)?);
    run.finish()?;
    Ok(())
}

fn graph(a: GraphArgs) -> Outcome {
    require(&[("relations", Some(&a.relations)), ("predictions", Some(&a.predictions))])?;
    let seeds: Vec<String> = a.seeds.iter().map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
    if seeds.is_empty() {
        return Err(config_err("--seeds needs at least one firm id"));
    }
    let mut run = start("graph", &a.out_dir, &a, &[&a.relations, &a.predictions])?;
    let relations = read_pairs_csv(open(&a.relations)?)?;
    let preds = read_predictions_csv(open(&a.predictions)?)?;
    let g = SupplyGraph::from_links(&relations, &preds)?;
    let mut buf = Vec::new();
    write_graph_stats_csv(&mut buf, &supply_graph_stats(&g, &seeds)?)?;
    run.output("graph.csv", buf);
    run.finish()?;
    Ok(())
}

fn bench(a: BenchArgs) -> Outcome {
    let mut run = start("bench", &a.out_dir, &a, &[])?;
    let mut cfg = BenchConfig::default();
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let (report, _, _) = run_benchmark(&cfg)?;
    let orderings: Vec<serde_json::Value> =
        report.orderings().iter().map(|(name, ok)| serde_json::json!({ "check": name, "holds": ok })).collect();
    let json = serde_json::json!({ "config": cfg, "report": report, "orderings": orderings });
    let bytes = serde_json::to_vec_pretty(&json).map_err(anyhow::Error::from)?;
    run.output("report.json", [bytes, b"\n".to_vec()].concat());
    run.finish()?;
    Ok(())
}
