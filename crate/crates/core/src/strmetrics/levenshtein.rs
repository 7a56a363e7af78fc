//! Unit-cost edit distance over Unicode code points.
//!
//! Patterns of up to 64 code points use the single-word bit-parallel
//! recurrence; longer patterns fall through to the blocked variant, which
//! carries the horizontal deltas from word to word.

use std::collections::HashMap;

/// Bit masks marking where each pattern character occurs, one `u64` per
/// 64-character block of the pattern.
#[derive(Debug, Clone)]
struct MatchMasks {
    words: usize,
    ascii: Vec<u64>,
    other: HashMap<char, Vec<u64>>,
}

impl MatchMasks {
    fn new(pattern: &[char]) -> Self {
        let words = pattern.len().div_ceil(64).max(1);
        let mut ascii = vec![0u64; 128 * words];
        let mut other: HashMap<char, Vec<u64>> = HashMap::new();
        for (i, &c) in pattern.iter().enumerate() {
            let (w, bit) = (i / 64, 1u64 << (i % 64));
            if (c as u32) < 128 {
                ascii[c as usize * words + w] |= bit;
            } else {
                other.entry(c).or_insert_with(|| vec![0; words])[w] |= bit;
            }
        }
        Self { words, ascii, other }
    }

    #[inline]
    fn get(&self, c: char, word: usize) -> u64 {
        if (c as u32) < 128 {
            self.ascii[c as usize * self.words + word]
        } else {
            self.other.get(&c).map_or(0, |v| v[word])
        }
    }
}

/// A query string preprocessed for repeated distance computations against
/// many candidates.
#[derive(Debug, Clone)]
pub struct LevenshteinPattern {
    chars: Vec<char>,
    masks: MatchMasks,
}

impl LevenshteinPattern {
    pub fn new(pattern: &str) -> Self {
        let chars: Vec<char> = pattern.chars().collect();
        let masks = MatchMasks::new(&chars);
        Self { chars, masks }
    }

    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    pub fn distance(&self, text: &str) -> usize {
        let text: Vec<char> = text.chars().collect();
        self.distance_chars(&text)
    }

    pub fn distance_chars(&self, text: &[char]) -> usize {
        let m = self.chars.len();
        if m == 0 {
            return text.len();
        }
        if text.is_empty() {
            return m;
        }
        if m <= 64 {
            single_word(&self.masks, m, text)
        } else {
            blocked(&self.masks, m, text)
        }
    }
}

fn single_word(masks: &MatchMasks, m: usize, text: &[char]) -> usize {
    let last = 1u64 << (m - 1);
    let mut vp = if m == 64 { !0 } else { (1u64 << m) - 1 };
    let mut vn = 0u64;
    let mut score = m;
    for &c in text {
        let eq = masks.get(c, 0);
        let xv = eq | vn;
        let xh = ((eq & vp).wrapping_add(vp) ^ vp) | eq;
        let mut hp = vn | !(xh | vp);
        let mut hn = vp & xh;
        if hp & last != 0 {
            score += 1;
        } else if hn & last != 0 {
            score -= 1;
        }
        hp = (hp << 1) | 1;
        hn <<= 1;
        vp = hn | !(xv | hp);
        vn = hp & xv;
    }
    score
}

fn blocked(masks: &MatchMasks, m: usize, text: &[char]) -> usize {
    let words = masks.words;
    let last = 1u64 << ((m - 1) % 64);
    let mut vp = vec![!0u64; words];
    let mut vn = vec![0u64; words];
    let mut score = m;
    for &c in text {
        // The top boundary row increases by one per text character.
        let mut hp_carry = 1u64;
        let mut hn_carry = 0u64;
        for w in 0..words {
            let eq = masks.get(c, w);
            let x = eq | hn_carry;
            let d0 = ((x & vp[w]).wrapping_add(vp[w]) ^ vp[w]) | x | vn[w];
            let hp = vn[w] | !(d0 | vp[w]);
            let hn = d0 & vp[w];
            let (hp_in, hn_in) = (hp_carry, hn_carry);
            if w + 1 < words {
                hp_carry = hp >> 63;
                hn_carry = hn >> 63;
            } else {
                if hp & last != 0 {
                    score += 1;
                } else if hn & last != 0 {
                    score -= 1;
                }
            }
            let hp = (hp << 1) | hp_in;
            let hn = (hn << 1) | hn_in;
            vp[w] = hn | !(d0 | hp);
            vn[w] = hp & d0;
        }
    }
    score
}

/// Minimal number of single code point insertions, deletions and
/// substitutions turning `a` into `b`.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    levenshtein_chars(&a, &b)
}

pub fn levenshtein_chars(a: &[char], b: &[char]) -> usize {
    // Common affixes never contribute edits.
    let prefix = a.iter().zip(b).take_while(|(x, y)| x == y).count();
    let (a, b) = (&a[prefix..], &b[prefix..]);
    let suffix = a.iter().rev().zip(b.iter().rev()).take_while(|(x, y)| x == y).count();
    let (a, b) = (&a[..a.len() - suffix], &b[..b.len() - suffix]);
    let (pattern, text) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    if pattern.is_empty() {
        return text.len();
    }
    let masks = MatchMasks::new(pattern);
    if pattern.len() <= 64 {
        single_word(&masks, pattern.len(), text)
    } else {
        blocked(&masks, pattern.len(), text)
    }
}
