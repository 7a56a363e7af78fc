//! Count-vector n-gram profiles over characters or stroke/radical units.

use std::collections::HashMap;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Separates units inside a gram key. Stroke tokens may span several code
/// points, so keys need an explicit delimiter.
const UNIT_SEP: char = '\u{1f}';

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Unit {
    #[serde(alias = "char")]
    Character,
    Stroke,
}

/// Character → ordered stroke/radical tokens.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DecompositionTable {
    entries: HashMap<char, Vec<String>>,
}

impl DecompositionTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, c: char, tokens: Vec<String>) -> Result<()> {
        if tokens.is_empty() || tokens.iter().any(String::is_empty) {
            return Err(Error::invalid(format!("decomposition of {c:?} must be a nonempty token sequence")));
        }
        self.entries.insert(c, tokens);
        Ok(())
    }

    pub fn get(&self, c: char) -> Option<&[String]> {
        self.entries.get(&c).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Reads the two-column TSV form: character, then space-separated tokens.
    pub fn read_tsv(reader: impl BufRead) -> Result<Self> {
        let mut table = Self::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let parse_err = |msg: &str| Error::Parse { line: i + 1, msg: msg.to_string() };
            let (ch, tokens) = line.split_once('\t').ok_or_else(|| parse_err("expected two tab-separated columns"))?;
            let mut chars = ch.chars();
            let c = match (chars.next(), chars.next()) {
                (Some(c), None) => c,
                _ => return Err(parse_err("first column must be a single character")),
            };
            let tokens: Vec<String> = tokens.split_whitespace().map(str::to_string).collect();
            table.insert(c, tokens).map_err(|e| parse_err(&e.to_string()))?;
        }
        Ok(table)
    }

    /// Units of `s`: concatenated stroke sequences, with characters missing
    /// from the table standing for themselves.
    pub fn decompose(&self, s: &str) -> Vec<String> {
        let mut out = Vec::new();
        for c in s.chars() {
            match self.entries.get(&c) {
                Some(tokens) => out.extend(tokens.iter().cloned()),
                None => out.push(c.to_string()),
            }
        }
        out
    }
}

/// Sparse n-gram count vector with its cached Euclidean norm.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NGramProfile {
    counts: HashMap<String, u32>,
    norm_sq: u64,
}

impl NGramProfile {
    fn from_counts(counts: HashMap<String, u32>) -> Self {
        let norm_sq = counts.values().map(|&c| u64::from(c) * u64::from(c)).sum();
        Self { counts, norm_sq }
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Number of distinct grams.
    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.values().map(|&c| u64::from(c)).sum()
    }

    pub fn norm(&self) -> f64 {
        (self.norm_sq as f64).sqrt()
    }

    pub fn norm_sq(&self) -> u64 {
        self.norm_sq
    }

    /// Count of the gram made of `units`, in order.
    pub fn count(&self, units: &[&str]) -> u32 {
        self.counts.get(&join_units(units.iter().copied())).copied().unwrap_or(0)
    }

    /// Iterates `(gram units, count)`.
    pub fn iter(&self) -> impl Iterator<Item = (Vec<&str>, u32)> {
        self.counts.iter().map(|(k, &c)| (k.split(UNIT_SEP).collect(), c))
    }

    pub(crate) fn raw_iter(&self) -> impl Iterator<Item = (&String, u32)> {
        self.counts.iter().map(|(k, &c)| (k, c))
    }

    /// Exact integer dot product of two count vectors.
    pub fn dot(&self, other: &NGramProfile) -> u64 {
        let (small, large) = if self.counts.len() <= other.counts.len() { (self, other) } else { (other, self) };
        small
            .counts
            .iter()
            .filter_map(|(k, &c)| large.counts.get(k).map(|&d| u64::from(c) * u64::from(d)))
            .sum()
    }

    pub fn cosine(&self, other: &NGramProfile) -> f64 {
        cosine_from_parts(self.dot(other), self.norm_sq, other.norm_sq)
    }
}

pub(crate) fn cosine_from_parts(dot: u64, norm_sq_a: u64, norm_sq_b: u64) -> f64 {
    if norm_sq_a == 0 || norm_sq_b == 0 {
        return 0.0;
    }
    if u128::from(dot) * u128::from(dot) == u128::from(norm_sq_a) * u128::from(norm_sq_b) {
        // Equal-direction count vectors; avoids 0.9999999999999999 from sqrt.
        return 1.0;
    }
    (dot as f64 / ((norm_sq_a as f64).sqrt() * (norm_sq_b as f64).sqrt())).min(1.0)
}

fn join_units<'a>(units: impl Iterator<Item = &'a str>) -> String {
    let mut key = String::new();
    for (i, u) in units.enumerate() {
        if i > 0 {
            key.push(UNIT_SEP);
        }
        key.push_str(u);
    }
    key
}

/// Counts every contiguous run of `n` units. Strings shorter than `n` units
/// yield their whole unit sequence as one gram; the empty string yields an
/// empty profile.
pub fn ngram_profile(s: &str, n: usize, unit: Unit, table: Option<&DecompositionTable>) -> Result<NGramProfile> {
    if n == 0 {
        return Err(Error::invalid("n-gram order must be positive"));
    }
    let units: Vec<String> = match unit {
        Unit::Character => s.chars().map(String::from).collect(),
        Unit::Stroke => {
            let table = table.ok_or_else(|| Error::invalid("stroke n-grams require a decomposition table"))?;
            table.decompose(s)
        }
    };
    let mut counts: HashMap<String, u32> = HashMap::new();
    if units.is_empty() {
        return Ok(NGramProfile::default());
    }
    if units.len() < n {
        counts.insert(join_units(units.iter().map(String::as_str)), 1);
    } else {
        for w in units.windows(n) {
            *counts.entry(join_units(w.iter().map(String::as_str))).or_insert(0) += 1;
        }
    }
    Ok(NGramProfile::from_counts(counts))
}

/// Cosine similarity of raw n-gram count vectors; 0 when either is empty.
pub fn ngram_cosine(a: &str, b: &str, n: usize, unit: Unit, table: Option<&DecompositionTable>) -> Result<f64> {
    let pa = ngram_profile(a, n, unit, table)?;
    let pb = ngram_profile(b, n, unit, table)?;
    Ok(pa.cosine(&pb))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bigram_enumeration() {
        let p = ngram_profile("abcd", 2, Unit::Character, None).unwrap();
        assert_eq!(p.len(), 3);
        for g in [["a", "b"], ["b", "c"], ["c", "d"]] {
            assert_eq!(p.count(&g), 1);
        }
        assert_eq!(p.norm_sq(), 3);
    }

    #[test]
    fn short_string_is_one_gram() {
        let p = ngram_profile("ab", 5, Unit::Character, None).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p.count(&["a", "b"]), 1);
        assert!(ngram_profile("", 2, Unit::Character, None).unwrap().is_empty());
    }

    #[test]
    fn zero_order_is_rejected() {
        assert!(ngram_profile("ab", 0, Unit::Character, None).is_err());
    }

    #[test]
    fn stroke_requires_table() {
        assert!(ngram_profile("ab", 2, Unit::Stroke, None).is_err());
    }

    #[test]
    fn stroke_bigrams_over_two_characters() {
        let mut t = DecompositionTable::new();
        t.insert('永', vec!["丶".into(), "乛".into(), "水".into()]).unwrap();
        t.insert('丸', vec!["丿".into(), "乙".into(), "丶".into()]).unwrap();
        // 丸永 → 丿 乙 丶 丶 乛 水: six tokens, five windows, all distinct.
        let p = ngram_profile("丸永", 2, Unit::Stroke, Some(&t)).unwrap();
        assert_eq!(p.total(), 5);
        assert_eq!(p.len(), 5);
        assert_eq!(p.count(&["丶", "丶"]), 1);
        assert_eq!(p.count(&["乙", "丶"]), 1);
    }

    #[test]
    fn unknown_characters_decompose_to_themselves() {
        let mut t = DecompositionTable::new();
        t.insert('永', vec!["a".into(), "b".into()]).unwrap();
        assert_eq!(t.decompose("x永"), vec!["x", "a", "b"]);
    }

    #[test]
    fn cosine_cases() {
        let c = ngram_cosine("abcd", "abce", 2, Unit::Character, None).unwrap();
        assert!((c - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(ngram_cosine("丸永商店", "丸永商店", 2, Unit::Character, None).unwrap(), 1.0);
        assert_eq!(ngram_cosine("abc", "xyz", 2, Unit::Character, None).unwrap(), 0.0);
        assert_eq!(ngram_cosine("", "xyz", 2, Unit::Character, None).unwrap(), 0.0);
    }

    #[test]
    fn tsv_table() {
        let src = "# char\tstrokes\n永\t丶 乛 水\n菓\t艹 田 木\n";
        let t = DecompositionTable::read_tsv(src.as_bytes()).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.get('菓').unwrap(), &["艹", "田", "木"]);
        assert!(DecompositionTable::read_tsv("永永\ta\n".as_bytes()).is_err());
        assert!(DecompositionTable::read_tsv("永\t  \n".as_bytes()).is_err());
    }
}
