//! End-to-end linkage: embedding records per retrieval mode, blocked exact
//! top-1 retrieval with an optional no-match threshold, evaluation against
//! multi-match ground truth, threshold tuning and supply-graph statistics.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{GroundTruth, Record};
use crate::optim::{embed_pooled, ToyModel, View};
use crate::strmetrics::StringMatch;
use crate::vecindex::FlatIndex;
use crate::{par, Error, Result};

/// Literal written in place of a target id for no-match predictions.
pub const NO_MATCH: &str = "NO_MATCH";

/// Score recorded when blocking leaves a query without candidates.
pub const EMPTY_BLOCK_SCORE: f64 = -1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LinkMode {
    Visual,
    Language,
    Multimodal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalMode {
    Visual,
    Language,
    Multimodal,
    StringMetric,
}

impl From<LinkMode> for EvalMode {
    fn from(m: LinkMode) -> Self {
        match m {
            LinkMode::Visual => EvalMode::Visual,
            LinkMode::Language => EvalMode::Language,
            LinkMode::Multimodal => EvalMode::Multimodal,
        }
    }
}

impl LinkMode {
    /// Image weight used for pooling: 1 and 0 for the unimodal modes,
    /// `im_wt` for multimodal.
    pub fn effective_im_wt(self, im_wt: f64) -> f64 {
        match self {
            LinkMode::Visual => 1.0,
            LinkMode::Language => 0.0,
            LinkMode::Multimodal => im_wt,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LinkMode::Visual => "visual",
            LinkMode::Language => "language",
            LinkMode::Multimodal => "multimodal",
        }
    }
}

impl fmt::Display for LinkMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LinkMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "visual" => Ok(LinkMode::Visual),
            "language" => Ok(LinkMode::Language),
            "multimodal" => Ok(LinkMode::Multimodal),
            _ => Err(Error::invalid(format!("unknown mode {s:?} (visual, language, multimodal)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkPrediction {
    pub query_id: String,
    /// `None` is a no-match prediction.
    pub predicted: Option<String>,
    /// Top-1 cosine for embedding modes; the raw distance for distance metrics.
    pub score: f64,
}

impl From<StringMatch> for LinkPrediction {
    fn from(m: StringMatch) -> Self {
        LinkPrediction { query_id: m.query_id, predicted: Some(m.target_id), score: m.score }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkOptions {
    pub mode: LinkMode,
    pub im_wt: f64,
    pub nm_thresh: Option<f64>,
    pub block: bool,
}

impl LinkOptions {
    pub fn new(mode: LinkMode, im_wt: f64) -> Self {
        Self { mode, im_wt, nm_thresh: None, block: false }
    }
}

fn record_view(r: &Record, mode: LinkMode) -> Result<View> {
    let visual = match (mode, &r.visual_embedding) {
        (LinkMode::Language, _) => Vec::new(),
        (_, Some(v)) => v.iter().map(|&x| f64::from(x)).collect(),
        (_, None) => return Err(Error::invalid(format!("{mode} mode needs a visual vector on record {}", r.id))),
    };
    if mode != LinkMode::Visual && r.text.is_empty() {
        return Err(Error::invalid(format!("{mode} mode needs text on record {}", r.id)));
    }
    Ok(View { visual, text: r.text.clone() })
}

/// Unit embeddings of `records` under `mode`, in input order.
pub fn embed_records(model: &ToyModel, records: &[Record], mode: LinkMode, im_wt: f64) -> Result<Vec<Vec<f64>>> {
    if mode == LinkMode::Multimodal && !(0.0..=1.0).contains(&im_wt) {
        return Err(Error::invalid("im_wt must lie in [0, 1]"));
    }
    let w = mode.effective_im_wt(im_wt);
    par::map_collect(records, |r| embed_pooled(model, &record_view(r, mode)?, w)).into_iter().collect()
}

/// Exact top-1 linkage of every query. Targets are indexed in id order so
/// equal scores resolve to the smallest target id; with `block` set only
/// targets sharing the query's block key are candidates.
pub fn link(queries: &[Record], targets: &[Record], model: &ToyModel, opts: &LinkOptions) -> Result<Vec<LinkPrediction>> {
    if targets.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if let Some(t) = targets.iter().find(|t| t.id == NO_MATCH) {
        return Err(Error::invalid(format!("target id {} is reserved", t.id)));
    }
    if opts.block {
        if let Some(r) = queries.iter().chain(targets).find(|r| r.block_key.is_none()) {
            return Err(Error::invalid(format!("blocking needs a block key on record {}", r.id)));
        }
    }
    let mut order: Vec<usize> = (0..targets.len()).collect();
    order.sort_by(|&a, &b| targets[a].id.cmp(&targets[b].id));
    let sorted: Vec<Record> = order.iter().map(|&i| targets[i].clone()).collect();
    let target_emb = embed_records(model, &sorted, opts.mode, opts.im_wt)?;
    let query_emb = embed_records(model, queries, opts.mode, opts.im_wt)?;

    let key = |r: &Record| if opts.block { r.block_key.clone().unwrap_or_default() } else { String::new() };
    let mut blocks: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, t) in sorted.iter().enumerate() {
        blocks.entry(key(t)).or_default().push(i);
    }
    let mut by_query_block: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, q) in queries.iter().enumerate() {
        by_query_block.entry(key(q)).or_default().push(i);
    }

    let mut out: Vec<Option<LinkPrediction>> = vec![None; queries.len()];
    for (block, qs) in by_query_block {
        let Some(members) = blocks.get(&block) else {
            for &q in &qs {
                out[q] = Some(LinkPrediction { query_id: queries[q].id.clone(), predicted: None, score: EMPTY_BLOCK_SCORE });
            }
            continue;
        };
        let index = FlatIndex::build(members.iter().map(|&i| (sorted[i].id.clone(), &target_emb[i])))?;
        let batch: Vec<&Vec<f64>> = qs.iter().map(|&q| &query_emb[q]).collect();
        let hits = index.search_batch(&batch, 1)?;
        for (&q, hit) in qs.iter().zip(hits) {
            let hit = &hit[0];
            let predicted = match opts.nm_thresh {
                Some(t) if hit.score < t => None,
                _ => Some(hit.target_id.clone()),
            };
            out[q] = Some(LinkPrediction { query_id: queries[q].id.clone(), predicted, score: hit.score });
        }
    }
    Ok(out.into_iter().map(|p| p.expect("every query predicted")).collect())
}

/// Replaces predictions scoring below `thresh` by no-match.
pub fn apply_threshold(predictions: &[LinkPrediction], thresh: f64) -> Vec<LinkPrediction> {
    predictions
        .iter()
        .map(|p| LinkPrediction { predicted: if p.score < thresh { None } else { p.predicted.clone() }, ..p.clone() })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub n_queries: usize,
    pub n_correct: usize,
    pub mode: EvalMode,
    pub include_no_match: bool,
}

fn is_correct(p: &LinkPrediction, truth: &BTreeSet<String>) -> bool {
    match &p.predicted {
        Some(t) => truth.contains(t),
        None => truth.is_empty(),
    }
}

fn truth_rows<'a>(predictions: &'a [LinkPrediction], truth: &'a GroundTruth) -> Result<Vec<(&'a LinkPrediction, &'a BTreeSet<String>)>> {
    let mut seen = HashSet::new();
    predictions
        .iter()
        .map(|p| {
            if !seen.insert(p.query_id.as_str()) {
                return Err(Error::DuplicateId(p.query_id.clone()));
            }
            let t = truth.get(&p.query_id).ok_or_else(|| Error::UnknownQuery(p.query_id.clone()))?;
            Ok((p, t))
        })
        .collect()
}

/// Top-1 accuracy. A prediction is correct when it names any listed target,
/// or is no-match for a query with an empty truth set. Without
/// `include_no_match`, empty-truth queries are left out entirely.
pub fn evaluate(predictions: &[LinkPrediction], truth: &GroundTruth, include_no_match: bool, mode: EvalMode) -> Result<EvalReport> {
    let rows = truth_rows(predictions, truth)?;
    let (mut n_queries, mut n_correct) = (0, 0);
    for (p, t) in rows {
        if !include_no_match && t.is_empty() {
            continue;
        }
        n_queries += 1;
        n_correct += usize::from(is_correct(p, t));
    }
    if n_queries == 0 {
        return Err(Error::invalid("no evaluable queries"));
    }
    Ok(EvalReport { accuracy: n_correct as f64 / n_queries as f64, n_queries, n_correct, mode, include_no_match })
}

/// Threshold maximizing include-no-match accuracy over midpoints between
/// consecutive distinct scores; ties go to the smallest threshold. Returns
/// `None` (with a warning) when no query is unmatched or fewer than two
/// distinct scores exist.
pub fn tune_threshold(predictions: &[LinkPrediction], truth: &GroundTruth) -> Result<Option<f64>> {
    let mut rows = truth_rows(predictions, truth)?;
    if !rows.iter().any(|(_, t)| t.is_empty()) {
        log::warn!("threshold tuning skipped: validation set has no unmatched queries");
        return Ok(None);
    }
    rows.sort_by(|a, b| a.0.score.total_cmp(&b.0.score));
    // Above the threshold a query keeps its prediction; below it becomes no-match.
    let mut kept: usize = rows.iter().map(|(p, t)| usize::from(is_correct(p, t))).sum();
    let mut dropped = 0usize;
    let mut best: Option<(usize, f64)> = None;
    let mut i = 0;
    while i < rows.len() {
        let s = rows[i].0.score;
        while i < rows.len() && rows[i].0.score == s {
            let (p, t) = rows[i];
            kept -= usize::from(is_correct(p, t));
            dropped += usize::from(t.is_empty());
            i += 1;
        }
        if i == rows.len() {
            break;
        }
        let thresh = s + (rows[i].0.score - s) / 2.0;
        let correct = kept + dropped;
        if best.map_or(true, |(c, _)| correct > c) {
            best = Some((correct, thresh));
        }
    }
    if best.is_none() {
        log::warn!("threshold tuning skipped: fewer than two distinct scores");
    }
    Ok(best.map(|(_, t)| t))
}

/// Undirected firm graph with deduplicated edges and no self-loops.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SupplyGraph {
    adjacency: BTreeMap<String, BTreeSet<String>>,
}

impl SupplyGraph {
    pub fn from_edges<A: AsRef<str>, B: AsRef<str>>(edges: &[(A, B)]) -> Self {
        let mut g = SupplyGraph::default();
        for (a, b) in edges {
            g.add_edge(a.as_ref(), b.as_ref());
        }
        g
    }

    /// Edges `firm – predicted target` for each `(firm, query_id)` relation
    /// whose query was linked; no-match queries add only the firm node.
    pub fn from_links<A: AsRef<str>, B: AsRef<str>>(relations: &[(A, B)], predictions: &[LinkPrediction]) -> Result<Self> {
        let by_query: HashMap<&str, Option<&str>> =
            predictions.iter().map(|p| (p.query_id.as_str(), p.predicted.as_deref())).collect();
        let mut g = SupplyGraph::default();
        for (firm, q) in relations {
            match by_query.get(q.as_ref()) {
                Some(Some(target)) => g.add_edge(firm.as_ref(), target),
                Some(None) => g.add_node(firm.as_ref()),
                None => return Err(Error::UnknownQuery(q.as_ref().to_string())),
            }
        }
        Ok(g)
    }

    pub fn add_node(&mut self, n: &str) {
        self.adjacency.entry(n.to_string()).or_default();
    }

    pub fn add_edge(&mut self, a: &str, b: &str) {
        self.add_node(a);
        self.add_node(b);
        if a != b {
            self.adjacency.get_mut(a).expect("node").insert(b.to_string());
            self.adjacency.get_mut(b).expect("node").insert(a.to_string());
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = &String> {
        self.adjacency.keys()
    }

    pub fn degree(&self, n: &str) -> usize {
        self.adjacency.get(n).map_or(0, BTreeSet::len)
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.values().map(BTreeSet::len).sum::<usize>() / 2
    }

    fn distances_from(&self, seed: &str) -> HashMap<&str, usize> {
        let mut dist = HashMap::new();
        let Some((start, _)) = self.adjacency.get_key_value(seed) else {
            return dist;
        };
        dist.insert(start.as_str(), 0);
        let mut queue = VecDeque::from([start.as_str()]);
        while let Some(n) = queue.pop_front() {
            let d = dist[n];
            for m in &self.adjacency[n] {
                if !dist.contains_key(m.as_str()) {
                    dist.insert(m.as_str(), d + 1);
                    queue.push_back(m.as_str());
                }
            }
        }
        dist
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeStats {
    pub node: String,
    /// Mean finite shortest-path distance to the seeds; `None` when no seed
    /// is reachable.
    pub avg_distance: Option<f64>,
    pub degree: usize,
}

/// Per-node statistics in node order.
pub fn supply_graph_stats<S: AsRef<str>>(graph: &SupplyGraph, seeds: &[S]) -> Result<Vec<NodeStats>> {
    if seeds.is_empty() {
        return Err(Error::invalid("at least one seed firm is required"));
    }
    let unique: BTreeSet<&str> = seeds.iter().map(AsRef::as_ref).collect();
    let from_seeds: Vec<HashMap<&str, usize>> = unique.iter().map(|s| graph.distances_from(s)).collect();
    Ok(graph
        .nodes()
        .map(|n| {
            let found: Vec<usize> = from_seeds.iter().filter_map(|d| d.get(n.as_str()).copied()).collect();
            let avg_distance =
                (!found.is_empty()).then(|| found.iter().sum::<usize>() as f64 / found.len() as f64);
            NodeStats { node: n.clone(), avg_distance, degree: graph.degree(n) }
        })
        .collect())
}

/// CSV `query_id,predicted,score`, `NO_MATCH` for no-match predictions.
pub fn write_predictions_csv(w: impl Write, predictions: &[LinkPrediction]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["query_id", "predicted", "score"]).map_err(csv_err)?;
    for p in predictions {
        out.write_record([p.query_id.as_str(), p.predicted.as_deref().unwrap_or(NO_MATCH), &p.score.to_string()])
            .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_predictions_csv(r: impl Read) -> Result<Vec<LinkPrediction>> {
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers().map_err(csv_err)?.clone();
    if header.iter().collect::<Vec<_>>() != ["query_id", "predicted", "score"] {
        return Err(Error::Format("predictions header must be query_id,predicted,score".into()));
    }
    rdr.records()
        .enumerate()
        .map(|(i, rec)| {
            let rec = rec.map_err(csv_err)?;
            let perr = |msg: String| Error::Parse { line: i + 2, msg };
            if rec.len() != 3 {
                return Err(perr("expected 3 columns".into()));
            }
            let score: f64 = rec[2].parse().map_err(|_| perr(format!("bad score {:?}", &rec[2])))?;
            let predicted = (&rec[1] != NO_MATCH).then(|| rec[1].to_string());
            Ok(LinkPrediction { query_id: rec[0].to_string(), predicted, score })
        })
        .collect()
}

/// CSV `node,avg_distance,degree`, empty distance for unreachable nodes.
pub fn write_graph_stats_csv(w: impl Write, stats: &[NodeStats]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["node", "avg_distance", "degree"]).map_err(csv_err)?;
    for s in stats {
        let d = s.avg_distance.map(|d| d.to_string()).unwrap_or_default();
        out.write_record([s.node.as_str(), &d, &s.degree.to_string()]).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads two-column `a,b` edge or relation CSV with a header row.
pub fn read_pairs_csv(r: impl Read) -> Result<Vec<(String, String)>> {
    let mut rdr = csv::Reader::from_reader(r);
    rdr.records()
        .enumerate()
        .map(|(i, rec)| {
            let rec = rec.map_err(csv_err)?;
            if rec.len() != 2 {
                return Err(Error::Parse { line: i + 2, msg: "expected 2 columns".into() });
            }
            Ok((rec[0].to_string(), rec[1].to_string()))
        })
        .collect()
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}
