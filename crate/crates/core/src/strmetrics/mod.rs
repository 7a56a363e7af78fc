//! String-matching baselines: edit distance and n-gram cosine similarity, and
//! the exhaustive best-match linker built on them.

mod levenshtein;
mod ngram;

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

pub use levenshtein::{levenshtein, levenshtein_chars, LevenshteinPattern};
pub use ngram::{ngram_cosine, ngram_profile, DecompositionTable, NGramProfile, Unit};

use crate::dataset::Record;
use crate::{par, Error, Result};

/// Default n for stroke n-grams.
pub const DEFAULT_STROKE_N: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StringMetric {
    Levenshtein,
    NGramCosine { n: usize, unit: Unit },
}

/// Best target for one query. `score` is the edit distance for
/// [`StringMetric::Levenshtein`] and the cosine similarity otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StringMatch {
    pub query_id: String,
    pub target_id: String,
    pub score: f64,
}

/// Links every query to its best target under `metric`: minimal distance or
/// maximal cosine, ties going to the lexicographically smallest target id.
pub fn stringmatch_link(
    queries: &[Record],
    targets: &[Record],
    metric: StringMetric,
    table: Option<&DecompositionTable>,
) -> Result<Vec<StringMatch>> {
    if targets.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut ids = HashSet::new();
    for t in targets {
        if !ids.insert(t.id.as_str()) {
            return Err(Error::DuplicateId(t.id.clone()));
        }
    }
    if let Some(r) = queries.iter().chain(targets).find(|r| r.text.is_empty()) {
        return Err(Error::invalid(format!("record {} has empty text", r.id)));
    }
    let mut sorted: Vec<&Record> = targets.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));

    match metric {
        StringMetric::Levenshtein => {
            let texts: Vec<Vec<char>> = sorted.iter().map(|t| t.text.chars().collect()).collect();
            Ok(par::map_collect(queries, |q| {
                let pattern = LevenshteinPattern::new(&q.text);
                let mut best = (usize::MAX, 0usize);
                for (i, t) in texts.iter().enumerate() {
                    // A target can't beat the current best if the length gap alone exceeds it.
                    if t.len().abs_diff(pattern.len()) >= best.0 {
                        continue;
                    }
                    let d = pattern.distance_chars(t);
                    if d < best.0 {
                        best = (d, i);
                        if d == 0 {
                            break;
                        }
                    }
                }
                StringMatch { query_id: q.id.clone(), target_id: sorted[best.1].id.clone(), score: best.0 as f64 }
            }))
        }
        StringMetric::NGramCosine { n, unit } => {
            let index = GramIndex::build(&sorted, n, unit, table)?;
            let profiles: Vec<NGramProfile> =
                queries.iter().map(|q| ngram_profile(&q.text, n, unit, table)).collect::<Result<_>>()?;
            let pairs: Vec<(&Record, &NGramProfile)> = queries.iter().zip(&profiles).collect();
            Ok(par::map_collect(&pairs, |(q, p)| {
                let (i, score) = index.best(p);
                StringMatch { query_id: q.id.clone(), target_id: sorted[i].id.clone(), score }
            }))
        }
    }
}

/// Inverted gram → (target, count) postings for sparse cosine scoring.
struct GramIndex {
    postings: HashMap<String, Vec<(u32, u32)>>,
    norm_sq: Vec<u64>,
}

impl GramIndex {
    fn build(targets: &[&Record], n: usize, unit: Unit, table: Option<&DecompositionTable>) -> Result<Self> {
        let mut postings: HashMap<String, Vec<(u32, u32)>> = HashMap::new();
        let mut norm_sq = Vec::with_capacity(targets.len());
        for (i, t) in targets.iter().enumerate() {
            let p = ngram_profile(&t.text, n, unit, table)?;
            norm_sq.push(p.norm_sq());
            for (gram, c) in p.raw_iter() {
                postings.entry(gram.clone()).or_default().push((i as u32, c));
            }
        }
        Ok(Self { postings, norm_sq })
    }

    /// Highest-cosine target, smallest index on ties; index 0 with score 0
    /// when no target shares a gram.
    fn best(&self, query: &NGramProfile) -> (usize, f64) {
        let mut dots: HashMap<u32, u64> = HashMap::new();
        for (gram, c) in query.raw_iter() {
            if let Some(list) = self.postings.get(gram) {
                for &(t, tc) in list {
                    *dots.entry(t).or_insert(0) += u64::from(c) * u64::from(tc);
                }
            }
        }
        let mut best = (0usize, 0.0f64);
        for (&t, &d) in &dots {
            let s = ngram::cosine_from_parts(d, query.norm_sq(), self.norm_sq[t as usize]);
            let t = t as usize;
            if s > best.1 || (s == best.1 && t < best.0) {
                best = (t, s);
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn recs(items: &[(&str, &str)]) -> Vec<Record> {
        items.iter().map(|(id, t)| Record::new(*id, *t)).collect()
    }

    const BIGRAM: StringMetric = StringMetric::NGramCosine { n: 2, unit: Unit::Character };

    #[test]
    fn exact_text_wins_with_zero_distance() {
        let t = recs(&[("t1", "三井物産"), ("t2", "三菱商事"), ("t3", "住友商事")]);
        let q = recs(&[("q", "三菱商事")]);
        let out = stringmatch_link(&q, &t, StringMetric::Levenshtein, None).unwrap();
        assert_eq!(out[0].target_id, "t2");
        assert_eq!(out[0].score, 0.0);
        let out = stringmatch_link(&q, &t, BIGRAM, None).unwrap();
        assert_eq!(out[0].target_id, "t2");
        assert_eq!(out[0].score, 1.0);
    }

    #[test]
    fn ties_go_to_smallest_id() {
        let t = recs(&[("t2", "abd"), ("t1", "abe")]);
        let q = recs(&[("q", "abc")]);
        let out = stringmatch_link(&q, &t, StringMetric::Levenshtein, None).unwrap();
        assert_eq!(out[0].target_id, "t1");
        assert_eq!(out[0].score, 1.0);
        let out = stringmatch_link(&q, &t, BIGRAM, None).unwrap();
        assert_eq!(out[0].target_id, "t1");
        // No shared gram at all still resolves to the smallest id.
        let out = stringmatch_link(&recs(&[("q", "xyz")]), &t, BIGRAM, None).unwrap();
        assert_eq!((out[0].target_id.as_str(), out[0].score), ("t1", 0.0));
    }

    #[test]
    fn empty_targets_error() {
        let q = recs(&[("q", "abc")]);
        assert!(matches!(stringmatch_link(&q, &[], StringMetric::Levenshtein, None), Err(Error::EmptyCorpus)));
    }
}
