//! Offline hard-negative mining and batch construction.
//!
//! One representative embedding per label is searched against all labels;
//! each label and its `k−1` nearest neighbors form a hard-negative set. Sets
//! are shuffled and packed `B/(k·m)` to a batch, every member label
//! contributing `m` views drawn with replacement.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{read_jsonl, write_jsonl};
use crate::vecindex::FlatIndex;
use crate::{derive_seed, Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HardNegativeSet {
    pub anchor_label: String,
    /// The `k−1` nearest other labels, nearest first.
    pub neighbor_labels: Vec<String>,
}

impl HardNegativeSet {
    /// Anchor followed by its neighbors.
    pub fn members(&self) -> impl Iterator<Item = &String> {
        std::iter::once(&self.anchor_label).chain(&self.neighbor_labels)
    }
}

/// Exact k-NN over per-label embeddings, the label itself included and then
/// dropped.
pub fn build_hard_negative_sets<S, V>(per_label: &[(S, V)], k: usize) -> Result<Vec<HardNegativeSet>>
where
    S: AsRef<str>,
    V: AsRef<[f64]> + Sync,
{
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if per_label.len() < k {
        return Err(Error::InsufficientClasses { needed: k, got: per_label.len() });
    }
    let index = FlatIndex::build(per_label.iter().map(|(l, v)| (l.as_ref().to_string(), v.as_ref())))?;
    let queries: Vec<&[f64]> = per_label.iter().map(|(_, v)| v.as_ref()).collect();
    let hits = index.search_batch(&queries, k)?;
    Ok(hits
        .into_iter()
        .enumerate()
        .map(|(row, hits)| HardNegativeSet {
            anchor_label: index.ids()[row].clone(),
            neighbor_labels: hits.into_iter().filter(|h| h.row != row).take(k - 1).map(|h| h.target_id).collect(),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slot {
    pub label: String,
    pub view: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Batch {
    pub slots: Vec<Slot>,
    /// Indices of the hard-negative sets packed into this batch, in slot
    /// order; set `j` owns slots `[j·k·m, (j+1)·k·m)`. Empty for plans read
    /// back from disk.
    pub sets: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BatchPlan {
    pub batches: Vec<Batch>,
}

impl BatchPlan {
    pub fn total_slots(&self) -> usize {
        self.batches.iter().map(|b| b.slots.len()).sum()
    }

    /// One batch per line, each an array of `{label, view}` objects.
    pub fn write_jsonl(&self, w: impl Write) -> Result<()> {
        let lines: Vec<&Vec<Slot>> = self.batches.iter().map(|b| &b.slots).collect();
        write_jsonl(w, &lines)
    }

    pub fn read_jsonl(r: impl BufRead) -> Result<Self> {
        let lines: Vec<Vec<Slot>> = read_jsonl(r)?;
        Ok(Self { batches: lines.into_iter().map(|slots| Batch { slots, sets: Vec::new() }).collect() })
    }
}

/// Batch geometry: batch size `B`, set size `k`, views per label `m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchShape {
    pub batch_size: usize,
    pub k: usize,
    pub m: usize,
}

impl BatchShape {
    /// Hard-negative sets per batch, `B/(k·m)`.
    pub fn sets_per_batch(&self) -> Result<usize> {
        let per_set = self.k * self.m;
        if per_set == 0 || self.batch_size == 0 || self.batch_size % per_set != 0 {
            return Err(Error::invalid(format!(
                "batch size {} is not divisible by k*m = {}*{}",
                self.batch_size, self.k, self.m
            )));
        }
        Ok(self.batch_size / per_set)
    }
}

/// Shuffles the sets with `seed` and packs consecutive groups into batches.
/// A trailing group with fewer than `B/(k·m)` sets is dropped. View indices
/// are drawn with replacement from each label's `view_counts` entry,
/// independently for every occurrence.
pub fn partition_batches(
    sets: &[HardNegativeSet],
    shape: BatchShape,
    view_counts: &HashMap<String, usize>,
    seed: u64,
) -> Result<BatchPlan> {
    let per_batch = shape.sets_per_batch()?;
    for s in sets {
        if s.neighbor_labels.len() + 1 != shape.k {
            return Err(Error::invalid(format!(
                "set for {} has {} neighbors, expected k-1 = {}",
                s.anchor_label,
                s.neighbor_labels.len(),
                shape.k - 1
            )));
        }
        for l in s.members() {
            match view_counts.get(l) {
                Some(&n) if n > 0 => {}
                _ => return Err(Error::invalid(format!("label {l} has no views"))),
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..sets.len()).collect();
    order.shuffle(&mut rng);
    let batches = order
        .chunks_exact(per_batch)
        .map(|group| {
            let mut slots = Vec::with_capacity(shape.batch_size);
            for &si in group {
                for label in sets[si].members() {
                    let n = view_counts[label];
                    for _ in 0..shape.m {
                        slots.push(Slot { label: label.clone(), view: rng.gen_range(0..n) });
                    }
                }
            }
            Batch { slots, sets: group.to_vec() }
        })
        .collect();
    Ok(BatchPlan { batches })
}

/// Regenerates a plan for every epoch from an epoch-indexed seed.
#[derive(Debug, Clone)]
pub struct BatchPlanner {
    pub sets: Vec<HardNegativeSet>,
    pub shape: BatchShape,
    pub view_counts: HashMap<String, usize>,
    pub seed: u64,
}

impl BatchPlanner {
    pub fn plan_for_epoch(&self, epoch: usize) -> Result<BatchPlan> {
        partition_batches(&self.sets, self.shape, &self.view_counts, derive_seed(self.seed, epoch as u64))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn k_one_gives_empty_neighbor_lists() {
        let labels = vec![("a", vec![1.0, 0.0]), ("b", vec![0.0, 1.0])];
        let sets = build_hard_negative_sets(&labels, 1).unwrap();
        assert!(sets.iter().all(|s| s.neighbor_labels.is_empty()));
        assert_eq!(sets[1].anchor_label, "b");
    }

    #[test]
    fn points_on_an_arc() {
        // Angles −θ, 0, θ, 9θ: cosine similarity falls with angular distance,
        // and rows 0 and 2 are exact mirror images around row 1.
        let t = 0.1f64;
        let labels = vec![
            ("p0", vec![t.cos(), -t.sin()]),
            ("p1", vec![1.0, 0.0]),
            ("p2", vec![t.cos(), t.sin()]),
            ("p10", vec![(9.0 * t).cos(), (9.0 * t).sin()]),
        ];
        let sets = build_hard_negative_sets(&labels, 2).unwrap();
        let nn: Vec<&str> = sets.iter().map(|s| s.neighbor_labels[0].as_str()).collect();
        assert_eq!(nn, ["p1", "p0", "p1", "p2"]);
    }

    #[test]
    fn too_few_labels() {
        let labels = vec![("a", vec![1.0])];
        assert!(build_hard_negative_sets(&labels, 2).is_err());
    }

    fn synthetic_sets(n: usize, k: usize) -> (Vec<HardNegativeSet>, HashMap<String, usize>) {
        let sets = (0..n)
            .map(|i| HardNegativeSet {
                anchor_label: format!("l{i}"),
                neighbor_labels: (1..k).map(|j| format!("l{}", (i + j) % n)).collect(),
            })
            .collect();
        let counts = (0..n).map(|i| (format!("l{i}"), 1 + i % 4)).collect();
        (sets, counts)
    }

    #[test]
    fn reported_batch_geometry() {
        let shape = BatchShape { batch_size: 153, k: 3, m: 3 };
        assert_eq!(shape.sets_per_batch().unwrap(), 17);
        let (sets, counts) = synthetic_sets(34, 3);
        let plan = partition_batches(&sets, shape, &counts, 1).unwrap();
        assert_eq!(plan.batches.len(), 2);
        assert!(plan.batches.iter().all(|b| b.slots.len() == 153 && b.sets.len() == 17));
        // 35 sets: the odd one out is dropped.
        let (sets, counts) = synthetic_sets(35, 3);
        assert_eq!(partition_batches(&sets, shape, &counts, 1).unwrap().batches.len(), 2);
    }

    #[test]
    fn indivisible_batch_size_is_rejected() {
        let (sets, counts) = synthetic_sets(10, 3);
        let shape = BatchShape { batch_size: 100, k: 3, m: 3 };
        assert!(partition_batches(&sets, shape, &counts, 0).is_err());
    }

    #[test]
    fn plan_jsonl_roundtrip() {
        let (sets, counts) = synthetic_sets(4, 2);
        let plan = partition_batches(&sets, BatchShape { batch_size: 8, k: 2, m: 2 }, &counts, 5).unwrap();
        let mut buf = Vec::new();
        plan.write_jsonl(&mut buf).unwrap();
        let first = String::from_utf8(buf.clone()).unwrap();
        assert!(first.starts_with("[{\"label\":\"l"));
        let back = BatchPlan::read_jsonl(&buf[..]).unwrap();
        assert_eq!(back.batches.len(), plan.batches.len());
        for (a, b) in back.batches.iter().zip(&plan.batches) {
            assert_eq!(a.slots, b.slots);
        }
    }
}
