//! Records, ground truth, class splits and hyperparameters shared by every
//! stage of the pipeline, plus the JSON-lines formats they travel in.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::metricspace::{ContrastiveConfig, TempMode};
use crate::{Error, Result};

/// One entity instance: an OCR'd name and, optionally, its visual embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub id: String,
    #[serde(default)]
    pub text: String,
    #[serde(rename = "vec", default, skip_serializing_if = "Option::is_none")]
    pub visual_embedding: Option<Vec<f32>>,
    #[serde(rename = "block", default, skip_serializing_if = "Option::is_none")]
    pub block_key: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl Record {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self { id: id.into(), text: text.into(), visual_embedding: None, block_key: None, label: None }
    }

    pub fn with_vec(mut self, v: Vec<f32>) -> Self {
        self.visual_embedding = Some(v);
        self
    }

    pub fn with_block(mut self, key: impl Into<String>) -> Self {
        self.block_key = Some(key.into());
        self
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    EmptyId,
    DuplicateId { id: String },
    Dimension { id: String, expected: usize, got: usize },
    EmptyText { id: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyId => write!(f, "empty id"),
            Violation::DuplicateId { id } => write!(f, "duplicate id {id}"),
            Violation::Dimension { id, expected, got } => {
                write!(f, "record {id}: vector dimension {got}, expected {expected}")
            }
            Violation::EmptyText { id } => write!(f, "record {id}: empty text and no visual embedding"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Collects every record-level invariant violation. The report is sorted, so
/// it does not depend on record order.
pub fn validate_dataset(records: &[Record], declared_dim: usize) -> ValidationReport {
    let mut violations = BTreeSet::new();
    let mut seen = HashSet::new();
    for r in records {
        if r.id.is_empty() {
            violations.insert(Violation::EmptyId);
        } else if !seen.insert(r.id.as_str()) {
            violations.insert(Violation::DuplicateId { id: r.id.clone() });
        }
        if let Some(v) = &r.visual_embedding {
            if v.len() != declared_dim {
                violations.insert(Violation::Dimension { id: r.id.clone(), expected: declared_dim, got: v.len() });
            }
        } else if r.text.is_empty() {
            violations.insert(Violation::EmptyText { id: r.id.clone() });
        }
    }
    ValidationReport { violations: violations.into_iter().collect() }
}

/// Query id → admissible target ids. An empty set marks a query with no
/// counterpart in the target directory.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GroundTruth {
    links: BTreeMap<String, BTreeSet<String>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TruthLine {
    query_id: String,
    target_ids: Vec<String>,
}

impl GroundTruth {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, query_id: impl Into<String>, targets: impl IntoIterator<Item = String>) {
        self.links.entry(query_id.into()).or_default().extend(targets);
    }

    pub fn get(&self, query_id: &str) -> Option<&BTreeSet<String>> {
        self.links.get(query_id)
    }

    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &BTreeSet<String>)> {
        self.links.iter()
    }

    /// Drops every query whose truth set is empty.
    pub fn without_unmatched(&self) -> GroundTruth {
        GroundTruth {
            links: self.links.iter().filter(|(_, t)| !t.is_empty()).map(|(q, t)| (q.clone(), t.clone())).collect(),
        }
    }

    /// Checks that every query and target id exists in the respective dataset.
    pub fn check_against(&self, queries: &[Record], targets: &[Record]) -> Result<()> {
        let q: HashSet<&str> = queries.iter().map(|r| r.id.as_str()).collect();
        let t: HashSet<&str> = targets.iter().map(|r| r.id.as_str()).collect();
        for (qid, tids) in &self.links {
            if !q.contains(qid.as_str()) {
                return Err(Error::UnknownQuery(qid.clone()));
            }
            if let Some(missing) = tids.iter().find(|tid| !t.contains(tid.as_str())) {
                return Err(Error::invalid(format!("ground truth for {qid} names unknown target {missing}")));
            }
        }
        Ok(())
    }

    pub fn read_jsonl(reader: impl BufRead) -> Result<Self> {
        let mut gt = GroundTruth::new();
        for line in read_jsonl::<TruthLine>(reader)? {
            gt.insert(line.query_id, line.target_ids);
        }
        Ok(gt)
    }

    pub fn write_jsonl(&self, writer: impl Write) -> Result<()> {
        let lines: Vec<TruthLine> = self
            .links
            .iter()
            .map(|(q, t)| TruthLine { query_id: q.clone(), target_ids: t.iter().cloned().collect() })
            .collect();
        write_jsonl(writer, &lines)
    }
}

/// Disjoint train/val/test partition of class labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: BTreeSet<String>,
    pub val: BTreeSet<String>,
    pub test: BTreeSet<String>,
}

/// Splits classes (never instances) by the given ratios. Validation and test
/// sizes are floored; the remainder goes to train, so 1286 classes split
/// 772/257/257.
pub fn split_by_class<S: AsRef<str>>(labels: &[S], ratios: (f64, f64, f64), seed: u64) -> Result<DatasetSplit> {
    let unique: BTreeSet<&str> = labels.iter().map(AsRef::as_ref).collect();
    if unique.len() < 3 {
        return Err(Error::InsufficientClasses { needed: 3, got: unique.len() });
    }
    let (rt, rv, rs) = ratios;
    if [rt, rv, rs].iter().any(|r| !(0.0..=1.0).contains(r)) || ((rt + rv + rs) - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("split ratios {ratios:?} must be in [0,1] and sum to 1")));
    }
    let n = unique.len();
    let n_val = (n as f64 * rv + 1e-9).floor() as usize;
    let n_test = (n as f64 * rs + 1e-9).floor() as usize;

    let mut order: Vec<&str> = unique.into_iter().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let to_set = |s: &[&str]| s.iter().map(|l| l.to_string()).collect::<BTreeSet<_>>();
    Ok(DatasetSplit {
        val: to_set(&order[..n_val]),
        test: to_set(&order[n_val..n_val + n_test]),
        train: to_set(&order[n_val + n_test..]),
    })
}

/// Training and linkage hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub lr_max: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub temp: f64,
    pub im_wt: f64,
    pub views: usize,
    pub neighbors: usize,
    pub epochs: usize,
    pub nm_thresh: Option<f64>,
    #[serde(default)]
    pub temp_mode: TempMode,
    #[serde(default)]
    pub include_self: bool,
}

impl Default for HyperParams {
    /// The supervised mean-pooling configuration.
    fn default() -> Self {
        Self {
            lr_max: 5e-6,
            batch_size: 153,
            weight_decay: 0.001,
            temp: 0.1,
            im_wt: 0.5,
            views: 3,
            neighbors: 3,
            epochs: 30,
            nm_thresh: None,
            temp_mode: TempMode::Divide,
            include_self: false,
        }
    }
}

impl HyperParams {
    /// Language-image pretraining configuration.
    pub fn pretraining() -> Self {
        Self { lr_max: 5e-5, batch_size: 153, weight_decay: 0.001, temp: 0.048, epochs: 40, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::invalid(what.to_string()));
        if !(self.lr_max >= 0.0 && self.lr_max.is_finite()) {
            return bad("lr_max must be finite and non-negative");
        }
        if self.batch_size == 0 || self.views == 0 || self.neighbors == 0 {
            return bad("batch_size, views and neighbors must be positive");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be non-negative");
        }
        if !(self.temp > 0.0) {
            return bad("temp must be positive");
        }
        if !(0.0..=1.0).contains(&self.im_wt) {
            return bad("im_wt must lie in [0, 1]");
        }
        if let Some(t) = self.nm_thresh {
            if !(-1.0..=1.0).contains(&t) {
                return bad("nm_thresh must lie in [-1, 1]");
            }
        }
        Ok(())
    }

    pub fn contrastive(&self) -> ContrastiveConfig {
        ContrastiveConfig { temp: self.temp, temp_mode: self.temp_mode, include_self: self.include_self }
    }

    /// Additional constraint for batch mining: B divisible by k·m.
    pub fn validate_for_mining(&self) -> Result<()> {
        self.validate()?;
        let per_set = self.neighbors * self.views;
        if self.batch_size % per_set != 0 {
            return Err(Error::invalid(format!(
                "batch size {} is not divisible by k*m = {}",
                self.batch_size, per_set
            )));
        }
        Ok(())
    }
}

pub fn read_jsonl<T: DeserializeOwned>(reader: impl BufRead) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| Error::Parse { line: i + 1, msg: e.to_string() })?;
        out.push(value);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(mut writer: impl Write, items: &[T]) -> Result<()> {
    for item in items {
        serde_json::to_writer(&mut writer, item)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_records(reader: impl BufRead) -> Result<Vec<Record>> {
    read_jsonl(reader)
}

pub fn write_records(writer: impl Write, records: &[Record]) -> Result<()> {
    write_jsonl(writer, records)
}


#[cfg(test)]
mod props {
    use proptest::prelude::*;

    use super::*;

    proptest! {
        #[test]
        fn split_partitions_labels(n in 3usize..400, seed in any::<u64>()) {
            let labels: Vec<String> = (0..n).map(|i| format!("l{i}")).collect();
            let s = split_by_class(&labels, (0.6, 0.2, 0.2), seed).unwrap();
            prop_assert!(s.train.is_disjoint(&s.val));
            prop_assert!(s.train.is_disjoint(&s.test));
            prop_assert!(s.val.is_disjoint(&s.test));
            let union: BTreeSet<String> = s.train.iter().chain(&s.val).chain(&s.test).cloned().collect();
            prop_assert_eq!(union, labels.iter().cloned().collect::<BTreeSet<_>>());
        }

        #[test]
        fn validation_is_order_insensitive(ids in proptest::collection::vec("[a-d]{0,2}", 0..12), dims in proptest::collection::vec(2usize..5, 12)) {
            let recs: Vec<Record> = ids.iter().zip(&dims)
                .map(|(id, &d)| Record::new(id.clone(), "").with_vec(vec![0.0; d]))
                .collect();
            let mut rev = recs.clone();
            rev.reverse();
            let a = validate_dataset(&recs, 3);
            prop_assert_eq!(&a, &validate_dataset(&rev, 3));
            prop_assert_eq!(&a, &validate_dataset(&recs, 3));
        }
    }
}
