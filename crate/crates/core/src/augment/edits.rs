//! Character- and word-level perturbations and lexicon-based insertion and
//! substitution.
//!
//! Every word gets exactly one selection draw (`next_f64() < rate`) in text
//! order, followed by whatever draws its edit needs. Runs are therefore a pure
//! function of `(text, kind, rate, rng state)`.

use alloc::string::String;
use alloc::vec::Vec;

use super::tables::{OcrTable, WordTable};
use super::Rate;
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CharEdit {
    Swap,
    Ocr,
    Delete,
    Insert,
    Substitute,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WordEdit {
    Swap,
    Delete,
    SpellError,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LexiconEdit {
    Insert,
    Substitute,
}

const LOWERCASE: &[u8; 26] = b"abcdefghijklmnopqrstuvwxyz";

fn random_letter(rng: &mut RngStream) -> char {
    LOWERCASE[rng.below(26)] as char
}

/// Splits into alternating whitespace / word segments, keeping every byte.
fn segments(text: &str) -> Vec<(bool, &str)> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut in_word: Option<bool> = None;
    for (i, c) in text.char_indices() {
        let is_word = !c.is_whitespace();
        match in_word {
            Some(w) if w != is_word => {
                out.push((w, &text[start..i]));
                start = i;
            }
            _ => {}
        }
        in_word = Some(is_word);
    }
    if let Some(w) = in_word {
        out.push((w, &text[start..]));
    }
    out
}

/// One character edit on each selected word. Whitespace is kept byte-for-byte,
/// so word count and boundaries never change.
pub fn augment_char(text: &str, kind: CharEdit, rate: Rate, ocr: &OcrTable, rng: &mut RngStream) -> String {
    let mut out = String::with_capacity(text.len() + 8);
    for (is_word, seg) in segments(text) {
        if !is_word || rng.next_f64() >= rate.get() {
            out.push_str(seg);
            continue;
        }
        let mut chars: Vec<char> = seg.chars().collect();
        match kind {
            CharEdit::Swap => {
                if chars.len() >= 2 {
                    let p = rng.below(chars.len() - 1);
                    chars.swap(p, p + 1);
                }
            }
            CharEdit::Ocr => {
                let eligible: Vec<usize> = (0..chars.len()).filter(|&i| ocr.get(chars[i]).is_some()).collect();
                if !eligible.is_empty() {
                    let p = eligible[rng.below(eligible.len())];
                    let options = ocr.get(chars[p]).unwrap_or(&[]);
                    chars[p] = options[rng.below(options.len())];
                }
            }
            CharEdit::Delete => {
                if chars.len() >= 2 {
                    let p = rng.below(chars.len());
                    chars.remove(p);
                }
            }
            CharEdit::Insert => {
                let p = rng.below(chars.len() + 1);
                chars.insert(p, random_letter(rng));
            }
            CharEdit::Substitute => {
                let p = rng.below(chars.len());
                chars[p] = random_letter(rng);
            }
        }
        out.extend(chars);
    }
    out
}

/// Splits a word into leading punctuation, core and trailing punctuation.
fn split_affixes(word: &str) -> (&str, &str, &str) {
    let start = word.find(|c: char| c.is_alphanumeric()).unwrap_or(word.len());
    let end = word
        .rfind(|c: char| c.is_alphanumeric())
        .map(|i| i + word[i..].chars().next().map_or(1, char::len_utf8))
        .unwrap_or(start);
    (&word[..start], &word[start..end.max(start)], &word[end.max(start)..])
}

fn match_case(template: &str, replacement: &str) -> String {
    let upper_first = template.chars().next().is_some_and(char::is_uppercase);
    if !upper_first {
        return String::from(replacement);
    }
    let mut it = replacement.chars();
    match it.next() {
        Some(c) => c.to_uppercase().chain(it).collect(),
        None => String::new(),
    }
}

/// Word-order and word-identity edits. The result is re-joined with single
/// spaces and is never empty when the input has at least one word.
pub fn augment_word(text: &str, kind: WordEdit, rate: Rate, misspellings: &WordTable, rng: &mut RngStream) -> String {
    let mut words: Vec<String> = text.split_whitespace().map(String::from).collect();
    let n = words.len();
    match kind {
        WordEdit::Swap => {
            let mut i = 0;
            while i < n {
                if rng.next_f64() < rate.get() && n >= 2 {
                    let j = if i + 1 < n { i + 1 } else { i - 1 };
                    words.swap(i, j);
                    i += 2;
                } else {
                    i += 1;
                }
            }
        }
        WordEdit::Delete => {
            let selected: Vec<bool> = (0..n).map(|_| rng.next_f64() < rate.get()).collect();
            if n > 0 && selected.iter().all(|&s| s) {
                let keep = rng.below(n);
                words = alloc::vec![words.swap_remove(keep)];
            } else {
                words = words
                    .into_iter()
                    .zip(selected)
                    .filter(|(_, s)| !s)
                    .map(|(w, _)| w)
                    .collect();
            }
        }
        WordEdit::SpellError => {
            for w in words.iter_mut() {
                if rng.next_f64() >= rate.get() {
                    continue;
                }
                let (pre, core, post) = split_affixes(w);
                if let Some(options) = misspellings.get(core) {
                    let pick = &options[rng.below(options.len())];
                    *w = [pre, &match_case(core, pick), post].concat();
                }
            }
        }
    }
    words.join(" ")
}

/// Nearest-synonym substitution or insertion from a lexicon.
///
/// Words with a lexicon entry are candidates; each is selected with
/// probability `rate`, and when none is selected one candidate is picked
/// uniformly, so any text containing a lexicon word is changed. The first
/// listed synonym is the nearest and is always the one used.
pub fn augment_lexicon(text: &str, kind: LexiconEdit, rate: Rate, lexicon: &WordTable, rng: &mut RngStream) -> String {
    let words: Vec<&str> = text.split_whitespace().collect();
    let candidates: Vec<usize> = (0..words.len())
        .filter(|&i| lexicon.get(split_affixes(words[i]).1).is_some())
        .collect();
    if candidates.is_empty() {
        return words.join(" ");
    }
    let mut chosen: Vec<usize> = candidates
        .iter()
        .copied()
        .filter(|_| rng.next_f64() < rate.get())
        .collect();
    if chosen.is_empty() {
        chosen.push(candidates[rng.below(candidates.len())]);
    }
    let mut out: Vec<String> = Vec::with_capacity(words.len() + chosen.len());
    for (i, w) in words.iter().enumerate() {
        let (pre, core, post) = split_affixes(w);
        let nearest = lexicon
            .get(core)
            .and_then(|s| s.first())
            .filter(|_| chosen.contains(&i));
        match (kind, nearest) {
            (LexiconEdit::Substitute, Some(syn)) => out.push([pre, &match_case(core, syn), post].concat()),
            (LexiconEdit::Insert, Some(syn)) => {
                out.push(String::from(*w));
                out.push(String::from(syn.as_str()));
            }
            _ => out.push(String::from(*w)),
        }
    }
    out.join(" ")
}
