//! Tokenization, longest common subsequence and ROUGE-L.
//!
//! The tokenizer is intentionally minimal: lowercase, then split on unicode
//! whitespace. Punctuation stays attached to the word it touches.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Deref;

use serde::{Deserialize, Serialize};

/// Sequence of lowercase, non-empty, whitespace-free tokens.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSeq(Vec<String>);

impl TokenSeq {
    pub fn new() -> Self {
        TokenSeq(Vec::new())
    }

    /// Builds a sequence from already-canonical tokens, re-tokenizing each one
    /// so the invariants hold regardless of what the caller passes.
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut out = Vec::new();
        for t in tokens {
            out.extend(tokenize(t.as_ref()).0);
        }
        TokenSeq(out)
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<String> {
        self.0
    }

    /// Space-joined form. `tokenize(seq.join())` returns `seq`.
    pub fn join(&self) -> String {
        self.0.join(" ")
    }
}

impl Deref for TokenSeq {
    type Target = [String];

    fn deref(&self) -> &[String] {
        &self.0
    }
}

/// Lowercases `text` and splits it on runs of unicode whitespace.
pub fn tokenize(text: &str) -> TokenSeq {
    TokenSeq(text.split_whitespace().map(|w| w.to_lowercase()).collect())
}

/// Length of the longest common subsequence, O(|a|·|b|) time, O(min) memory.
pub fn lcs_length<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let (long, short) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    if short.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; short.len() + 1];
    let mut cur = vec![0usize; short.len() + 1];
    for x in long {
        for (j, y) in short.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        core::mem::swap(&mut prev, &mut cur);
    }
    prev[short.len()]
}

/// ROUGE-L F-measure of `candidate` against `reference`.
///
/// With `L = lcs_length`, `R = L/|reference|` and `P = L/|candidate|` this is
/// `(1+β²)·R·P / (R + β²·P)`. Returns 0 when either side is empty or `L = 0`.
pub fn rouge_l(candidate: &[String], reference: &[String], beta: f64) -> f64 {
    if candidate.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let l = lcs_length(candidate, reference);
    if l == 0 {
        return 0.0;
    }
    let recall = l as f64 / reference.len() as f64;
    let precision = l as f64 / candidate.len() as f64;
    let b2 = beta * beta;
    (1.0 + b2) * recall * precision / (recall + b2 * precision)
}

/// ROUGE-L with β = 1 over two raw strings.
pub fn rouge_l_text(candidate: &str, reference: &str) -> f64 {
    rouge_l(&tokenize(candidate), &tokenize(reference), 1.0)
}

/// Jaccard overlap of the token sets of `a` and `b`; 0 when both are empty.
pub fn jaccard(a: &[String], b: &[String]) -> f64 {
    use alloc::collections::BTreeSet;
    let sa: BTreeSet<&str> = a.iter().map(String::as_str).collect();
    let sb: BTreeSet<&str> = b.iter().map(String::as_str).collect();
    let union = sa.union(&sb).count();
    if union == 0 {
        return 0.0;
    }
    sa.intersection(&sb).count() as f64 / union as f64
}
