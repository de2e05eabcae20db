//! Lookup tables used by the non-LLM augmenters.
//!
//! All three share one TSV shape: `key<TAB>value[<sep>value...]`, one entry
//! per line, `#` comments and blank lines ignored. Values are separated by
//! spaces in the OCR and misspelling tables and by commas in the synonym
//! lexicon.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

pub const BUNDLED_OCR: &str = include_str!("../../data/ocr.tsv");
pub const BUNDLED_MISSPELLINGS: &str = include_str!("../../data/misspellings.tsv");
pub const BUNDLED_SYNONYMS: &str = include_str!("../../data/synonyms.tsv");

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("line {line}: {reason}")]
pub struct TableError {
    pub line: usize,
    pub reason: String,
}

/// `word → alternatives`, keys lowercase.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WordTable {
    map: BTreeMap<String, Vec<String>>,
}

impl WordTable {
    pub fn parse(tsv: &str, value_sep: char) -> Result<Self, TableError> {
        let mut map = BTreeMap::new();
        for (n, line) in tsv.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, rest) = line.split_once('\t').ok_or_else(|| TableError {
                line: n + 1,
                reason: "expected key<TAB>values".into(),
            })?;
            let values: Vec<String> = rest
                .split(value_sep)
                .map(str::trim)
                .filter(|v| !v.is_empty())
                .map(ToString::to_string)
                .collect();
            if key.trim().is_empty() || values.is_empty() {
                return Err(TableError {
                    line: n + 1,
                    reason: format!("empty key or no values in `{line}`"),
                });
            }
            map.insert(key.trim().to_lowercase(), values);
        }
        Ok(WordTable { map })
    }

    pub fn get(&self, word: &str) -> Option<&[String]> {
        self.map.get(&word.to_lowercase()).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Bidirectional character confusion table.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OcrTable {
    map: BTreeMap<char, Vec<char>>,
}

impl OcrTable {
    /// Each line `a<TAB>b` adds both `a → b` and `b → a`.
    pub fn parse(tsv: &str) -> Result<Self, TableError> {
        let mut map: BTreeMap<char, Vec<char>> = BTreeMap::new();
        for (n, line) in tsv.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split('\t').map(str::trim);
            let (a, b) = match (parts.next(), parts.next()) {
                (Some(a), Some(b)) => (single_char(a), single_char(b)),
                _ => (None, None),
            };
            let (Some(a), Some(b)) = (a, b) else {
                return Err(TableError {
                    line: n + 1,
                    reason: "expected two single characters".into(),
                });
            };
            for (from, to) in [(a, b), (b, a)] {
                let e = map.entry(from).or_default();
                if !e.contains(&to) {
                    e.push(to);
                }
            }
        }
        Ok(OcrTable { map })
    }

    pub fn get(&self, c: char) -> Option<&[char]> {
        self.map.get(&c).map(Vec::as_slice)
    }
}

fn single_char(s: &str) -> Option<char> {
    let mut it = s.chars();
    match (it.next(), it.next()) {
        (Some(c), None) => Some(c),
        _ => None,
    }
}

/// The three tables an augmenter may consult.
#[derive(Debug, Clone)]
pub struct Tables {
    pub ocr: OcrTable,
    pub misspellings: WordTable,
    pub synonyms: WordTable,
}

impl Tables {
    pub fn bundled() -> Self {
        Tables {
            ocr: OcrTable::parse(BUNDLED_OCR).expect("bundled OCR table"),
            misspellings: WordTable::parse(BUNDLED_MISSPELLINGS, ' ').expect("bundled misspellings"),
            synonyms: WordTable::parse(BUNDLED_SYNONYMS, ',').expect("bundled synonyms"),
        }
    }
}

impl Default for Tables {
    fn default() -> Self {
        Tables::bundled()
    }
}
