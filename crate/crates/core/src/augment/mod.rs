//! Label-preserving text transforms.
//!
//! The thirteen algorithmic methods live here together with the prompt
//! templates for the LLM-backed ones. Methods that need a model
//! ([`Method::needs_backend`]) are executed by the `augmenta` crate; the rest
//! run through [`augment_offline`].

mod edits;
pub mod tables;

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

pub use edits::{augment_char, augment_lexicon, augment_word, CharEdit, LexiconEdit, WordEdit};
pub use tables::{OcrTable, TableError, Tables, WordTable};

use crate::model::Instruction;
use crate::rng::RngStream;

/// Default per-word perturbation probability.
pub const DEFAULT_RATE: f64 = 0.1;

/// Probability in `(0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Rate(f64);

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
#[error("rate {0} is outside (0, 1]")]
pub struct RateError(pub f64);

impl Rate {
    pub fn new(r: f64) -> Result<Self, RateError> {
        if r > 0.0 && r <= 1.0 {
            Ok(Rate(r))
        } else {
            Err(RateError(r))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl Default for Rate {
    fn default() -> Self {
        Rate(DEFAULT_RATE)
    }
}

impl TryFrom<f64> for Rate {
    type Error = RateError;

    fn try_from(r: f64) -> Result<Self, RateError> {
        Rate::new(r)
    }
}

impl From<Rate> for f64 {
    fn from(r: Rate) -> f64 {
        r.0
    }
}

/// The thirteen algorithmic augmenters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NonLlmMethod {
    CharSwap,
    CharOcr,
    CharDelete,
    CharInsert,
    CharSubstitute,
    WordSwap,
    WordDelete,
    SpellError,
    LmInsert,
    EmbedInsert,
    LmSubstitute,
    EmbedSubstitute,
    BackTranslation,
}

impl NonLlmMethod {
    pub const ALL: [NonLlmMethod; 13] = [
        NonLlmMethod::CharSwap,
        NonLlmMethod::CharOcr,
        NonLlmMethod::CharDelete,
        NonLlmMethod::CharInsert,
        NonLlmMethod::CharSubstitute,
        NonLlmMethod::WordSwap,
        NonLlmMethod::WordDelete,
        NonLlmMethod::SpellError,
        NonLlmMethod::LmInsert,
        NonLlmMethod::EmbedInsert,
        NonLlmMethod::LmSubstitute,
        NonLlmMethod::EmbedSubstitute,
        NonLlmMethod::BackTranslation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            NonLlmMethod::CharSwap => "char_swap",
            NonLlmMethod::CharOcr => "char_ocr",
            NonLlmMethod::CharDelete => "char_delete",
            NonLlmMethod::CharInsert => "char_insert",
            NonLlmMethod::CharSubstitute => "char_substitute",
            NonLlmMethod::WordSwap => "word_swap",
            NonLlmMethod::WordDelete => "word_delete",
            NonLlmMethod::SpellError => "spell_error",
            NonLlmMethod::LmInsert => "lm_insert",
            NonLlmMethod::EmbedInsert => "embed_insert",
            NonLlmMethod::LmSubstitute => "lm_substitute",
            NonLlmMethod::EmbedSubstitute => "embed_substitute",
            NonLlmMethod::BackTranslation => "back_translation",
        }
    }

    pub fn char_edit(self) -> Option<CharEdit> {
        Some(match self {
            NonLlmMethod::CharSwap => CharEdit::Swap,
            NonLlmMethod::CharOcr => CharEdit::Ocr,
            NonLlmMethod::CharDelete => CharEdit::Delete,
            NonLlmMethod::CharInsert => CharEdit::Insert,
            NonLlmMethod::CharSubstitute => CharEdit::Substitute,
            _ => return None,
        })
    }

    /// Contextual methods that go through a chat model.
    pub fn contextual(self) -> Option<ContextualKind> {
        Some(match self {
            NonLlmMethod::LmInsert => ContextualKind::LmInsert,
            NonLlmMethod::LmSubstitute => ContextualKind::LmSubstitute,
            NonLlmMethod::BackTranslation => ContextualKind::BackTranslation,
            _ => return None,
        })
    }
}

impl fmt::Display for NonLlmMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown augmentation method `{0}`")]
pub struct UnknownMethod(pub String);

impl FromStr for NonLlmMethod {
    type Err = UnknownMethod;

    fn from_str(s: &str) -> Result<Self, UnknownMethod> {
        NonLlmMethod::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| UnknownMethod(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ContextualKind {
    LmInsert,
    LmSubstitute,
    BackTranslation,
}

/// Either an algorithmic method or an LLM instruction.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    NonLlm(NonLlmMethod),
    LlmInstruction(Instruction),
}

impl Method {
    /// Stable identifier used in records and result files: the method name
    /// for algorithmic methods, `llm:<instruction name>` otherwise.
    pub fn id(&self) -> String {
        match self {
            Method::NonLlm(m) => m.as_str().to_string(),
            Method::LlmInstruction(ins) => format!("llm:{}", ins.name.trim()),
        }
    }

    pub fn needs_backend(&self) -> bool {
        match self {
            Method::NonLlm(m) => m.contextual().is_some(),
            Method::LlmInstruction(_) => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmenterSpec {
    pub method: Method,
    #[serde(default)]
    pub rate: Rate,
    #[serde(default)]
    pub seed: u64,
    /// Augmented copies per training example.
    #[serde(default = "one")]
    pub repeats: usize,
}

fn one() -> usize {
    1
}

impl AugmenterSpec {
    pub fn new(method: Method, seed: u64) -> Self {
        AugmenterSpec {
            method,
            rate: Rate::default(),
            seed,
            repeats: 1,
        }
    }

    pub fn method_id(&self) -> String {
        self.method.id()
    }
}

/// Runs an algorithmic method that needs no model. Returns `None` for
/// methods that need a backend.
pub fn augment_offline(
    text: &str,
    method: NonLlmMethod,
    rate: Rate,
    tables: &Tables,
    rng: &mut RngStream,
) -> Option<String> {
    if let Some(kind) = method.char_edit() {
        return Some(augment_char(text, kind, rate, &tables.ocr, rng));
    }
    Some(match method {
        NonLlmMethod::WordSwap => augment_word(text, WordEdit::Swap, rate, &tables.misspellings, rng),
        NonLlmMethod::WordDelete => augment_word(text, WordEdit::Delete, rate, &tables.misspellings, rng),
        NonLlmMethod::SpellError => augment_word(text, WordEdit::SpellError, rate, &tables.misspellings, rng),
        NonLlmMethod::EmbedInsert => augment_lexicon(text, LexiconEdit::Insert, rate, &tables.synonyms, rng),
        NonLlmMethod::EmbedSubstitute => augment_lexicon(text, LexiconEdit::Substitute, rate, &tables.synonyms, rng),
        _ => return None,
    })
}

/// Prefix of the augmentation meta-prompt; the mock backend keys on it.
pub const AUGMENT_PROMPT_PREFIX: &str =
    "Please do the following data augmentation steps to the text delimited by triple backticks.";

/// Meta-prompt wrapping an instruction around one input.
pub fn build_augmentation_prompt(ins: &Instruction, input: &str) -> String {
    format!(
        "{AUGMENT_PROMPT_PREFIX} If you need any external resources or data, you can just simulate the \
         environment by yourself and finish that step based on your own knowledge since you are the best \
         language model in word. Augmentation Instructions: {}, Input Data: ```{}```",
        ins.render(),
        input
    )
}

/// Prompt for a contextual method. Back-translation is two calls: `to_pivot`
/// selects the forward (`true`) or return (`false`) leg.
pub fn build_contextual_prompt(kind: ContextualKind, input: &str, pivot: &str, to_pivot: bool) -> String {
    match kind {
        ContextualKind::LmInsert => format!(
            "Insert exactly one contextually plausible word into the text delimited by triple backticks. \
             Keep every other word unchanged and return only the new text. Input Data: ```{input}```"
        ),
        ContextualKind::LmSubstitute => format!(
            "Replace exactly one word in the text delimited by triple backticks with a contextually \
             appropriate synonym. Keep every other word unchanged and return only the new text. \
             Input Data: ```{input}```"
        ),
        ContextualKind::BackTranslation => {
            let target = if to_pivot { pivot } else { "English" };
            format!(
                "Translate the text delimited by triple backticks into {target}. Return only the \
                 translation. Input Data: ```{input}```"
            )
        }
    }
}

/// Trims whitespace, surrounding triple-backtick fences and one layer of
/// matching quotes.
pub fn clean_response(raw: &str) -> String {
    let mut s = raw.trim();
    if let Some(inner) = s.strip_prefix("```") {
        s = inner.strip_suffix("```").unwrap_or(inner).trim();
    } else if let Some(inner) = s.strip_suffix("```") {
        s = inner.trim();
    }
    for (open, close) in [('"', '"'), ('\'', '\''), ('\u{201c}', '\u{201d}'), ('`', '`')] {
        if s.len() >= 2 && s.starts_with(open) && s.ends_with(close) {
            s = s[open.len_utf8()..s.len() - close.len_utf8()].trim();
            break;
        }
    }
    s.to_string()
}

const REFUSAL_PATTERNS: [&str; 6] = [
    "i cannot",
    "i can't",
    "i'm sorry",
    "i am sorry",
    "as an ai",
    "i'm unable to",
];

/// Case-insensitive match against a fixed list of refusal phrases.
pub fn is_refusal(response: &str) -> bool {
    let lower: String = response.to_lowercase().replace('\u{2019}', "'");
    REFUSAL_PATTERNS.iter().any(|p| lower.contains(p))
}

/// Extracts the text between the first and last triple-backtick fence.
pub fn delimited_input(prompt: &str) -> Option<&str> {
    let start = prompt.find("```")? + 3;
    let end = prompt.rfind("```")?;
    (end >= start).then(|| &prompt[start..end])
}

/// Word count used by augmentation statistics.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Renders the list of methods for help output.
pub fn method_names() -> Vec<&'static str> {
    NonLlmMethod::ALL.iter().map(|m| m.as_str()).collect()
}
