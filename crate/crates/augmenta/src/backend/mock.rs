//! Offline backend. Responses are a pure function of the request (plus the
//! position in a scripted response list), so pipeline runs replay exactly.
//!
//! Rules, first match wins:
//! 1. a scripted pattern occurring in the last user message;
//! 2. instruction-generation prompts get five synthesized instructions;
//! 3. LLM-select prompts get `"The best is {h mod k}."`;
//! 4. prompts with a triple-backtick block get its whitespace tokens
//!    shuffled (rotated by one if the shuffle was the identity);
//! 5. anything else gets `"mock response {h}"`.
//!
//! `h` is the SHA-256 of the canonical request.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use augmenta_core::augment::delimited_input;
use augmenta_core::chat::ChatRequest;
use augmenta_core::instructgen::GENERATION_PROMPT;
use augmenta_core::rng::RngStream;
use augmenta_core::selector::LLM_SELECT_REPLY_HINT;
use serde::{Deserialize, Serialize};

use super::cache::key_of;
use crate::io::{read_json, IoError};

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MockRule {
    pub pattern: String,
    pub responses: Vec<String>,
}

/// Scripted responses, as a JSON object `{"rules": [{"pattern", "responses"}]}`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default)]
    pub rules: Vec<MockRule>,
}

impl MockScript {
    pub fn load(path: &Path) -> Result<Self, IoError> {
        read_json(path)
    }

    pub fn rule(pattern: &str, responses: &[&str]) -> Self {
        MockScript {
            rules: vec![MockRule {
                pattern: pattern.into(),
                responses: responses.iter().map(|s| s.to_string()).collect(),
            }],
        }
    }
}

#[derive(Debug, Default)]
pub struct MockBackend {
    script: MockScript,
    cursors: Vec<AtomicUsize>,
}

impl MockBackend {
    pub fn new(script: MockScript) -> Self {
        let cursors = script.rules.iter().map(|_| AtomicUsize::new(0)).collect();
        MockBackend { script, cursors }
    }

    /// A rule with several responses hands them out in turn.
    pub fn respond(&self, req: &ChatRequest) -> String {
        let key = key_of(req);
        let h = u64::from_str_radix(&key[..16], 16).expect("hex key");
        let msg = req.last_user_message().unwrap_or_default();
        for (rule, cursor) in self.script.rules.iter().zip(&self.cursors) {
            if !rule.responses.is_empty() && msg.contains(&rule.pattern) {
                let i = cursor.fetch_add(1, Ordering::SeqCst) % rule.responses.len();
                return rule.responses[i].clone();
            }
        }
        if msg.contains(&GENERATION_PROMPT[..40]) {
            return synthesize_instructions(h, 5);
        }
        if msg.contains(LLM_SELECT_REPLY_HINT) {
            let k = count_listed(msg).max(1);
            return format!("The best is {}.", h % k as u64);
        }
        if let Some(input) = delimited_input(msg) {
            return shuffle_tokens(input, h);
        }
        format!("mock response {}", &key[..16])
    }
}

/// Numbered entries (`"{i}. ..."`) after the `Instructions:` header.
fn count_listed(msg: &str) -> usize {
    let tail = msg.rsplit_once("Instructions:").map_or(msg, |(_, t)| t);
    tail.lines()
        .filter(|l| {
            let digits = l.chars().take_while(char::is_ascii_digit).count();
            digits > 0 && l[digits..].starts_with(". ")
        })
        .count()
}

/// Case-preserving permutation of the whitespace tokens of `input`.
pub fn shuffle_tokens(input: &str, h: u64) -> String {
    let original: Vec<&str> = input.split_whitespace().collect();
    let mut tokens = original.clone();
    RngStream::new(h).shuffle(&mut tokens);
    if tokens == original && tokens.len() >= 2 {
        tokens.rotate_left(1);
    }
    tokens.join(" ")
}

const ADJECTIVES: [&str; 40] = [
    "Lexical",
    "Syntactic",
    "Semantic",
    "Stylistic",
    "Rhetorical",
    "Temporal",
    "Spatial",
    "Formal",
    "Casual",
    "Narrative",
    "Dialogic",
    "Emotive",
    "Neutral",
    "Technical",
    "Poetic",
    "Regional",
    "Historical",
    "Modern",
    "Compact",
    "Verbose",
    "Passive",
    "Active",
    "Negated",
    "Hedged",
    "Figurative",
    "Literal",
    "Numeric",
    "Causal",
    "Conditional",
    "Comparative",
    "Interrogative",
    "Imperative",
    "Descriptive",
    "Abstract",
    "Concrete",
    "Colloquial",
    "Academic",
    "Journalistic",
    "Legal",
    "Scientific",
];

const NOUNS: [&str; 40] = [
    "Rewrite",
    "Shift",
    "Expansion",
    "Compression",
    "Reordering",
    "Framing",
    "Blend",
    "Echo",
    "Mirror",
    "Twist",
    "Bridge",
    "Layering",
    "Pivot",
    "Splice",
    "Anchor",
    "Fusion",
    "Variation",
    "Inversion",
    "Rotation",
    "Projection",
    "Contrast",
    "Balance",
    "Weave",
    "Filter",
    "Lens",
    "Sketch",
    "Outline",
    "Tone",
    "Voice",
    "Register",
    "Cadence",
    "Rhythm",
    "Focus",
    "Perspective",
    "Emphasis",
    "Summary",
    "Elaboration",
    "Paraphrase",
    "Reframing",
    "Transfer",
];

const VERBS: [&str; 30] = [
    "rewrite",
    "rephrase",
    "restructure",
    "recast",
    "reorder",
    "expand",
    "condense",
    "adapt",
    "soften",
    "sharpen",
    "simplify",
    "enrich",
    "translate",
    "convert",
    "shift",
    "rotate",
    "blend",
    "swap",
    "vary",
    "frame",
    "echo",
    "mirror",
    "reshape",
    "retell",
    "annotate",
    "qualify",
    "stretch",
    "trim",
    "embed",
    "rebalance",
];

const OBJECTS: [&str; 30] = [
    "clauses",
    "phrases",
    "sentences",
    "verbs",
    "modifiers",
    "subjects",
    "objects",
    "connectives",
    "pronouns",
    "adverbs",
    "idioms",
    "quantities",
    "dates",
    "names",
    "questions",
    "negations",
    "comparisons",
    "metaphors",
    "descriptions",
    "conditions",
    "causes",
    "contrasts",
    "examples",
    "details",
    "titles",
    "greetings",
    "openings",
    "endings",
    "lists",
    "quotes",
];

const CONTEXTS: [&str; 30] = [
    "a news report",
    "a casual chat",
    "a legal memo",
    "a recipe",
    "a sports commentary",
    "a diary entry",
    "a product review",
    "a lecture",
    "a fairy tale",
    "a weather forecast",
    "a travel guide",
    "a job posting",
    "a letter",
    "a speech",
    "a tweet",
    "a manual",
    "an interview",
    "a poem",
    "a screenplay",
    "a lab report",
    "a podcast script",
    "a museum label",
    "a sales pitch",
    "a headline",
    "a forum post",
    "a textbook",
    "a court ruling",
    "a menu",
    "a biography",
    "a riddle",
];

const MANNERS: [&str; 30] = [
    "gently",
    "boldly",
    "precisely",
    "loosely",
    "briefly",
    "carefully",
    "playfully",
    "plainly",
    "vividly",
    "calmly",
    "formally",
    "warmly",
    "dryly",
    "quickly",
    "slowly",
    "clearly",
    "subtly",
    "sharply",
    "evenly",
    "freely",
    "neatly",
    "richly",
    "sparingly",
    "steadily",
    "tersely",
    "openly",
    "softly",
    "strictly",
    "smoothly",
    "lightly",
];

/// `count` instructions shaped like `"{Adj} {Noun}: {verb} the {objects} ..."`.
pub fn synthesize_instructions(h: u64, count: usize) -> String {
    let mut rng = RngStream::new(h);
    let mut out = String::new();
    for i in 0..count {
        let pick = |rng: &mut RngStream, list: &[&'static str]| list[rng.below(list.len())];
        let name = format!("{} {}", pick(&mut rng, &ADJECTIVES), pick(&mut rng, &NOUNS));
        let body = format!(
            "{} the {} {} as if writing {}, then {} the {}.",
            capitalize(pick(&mut rng, &VERBS)),
            pick(&mut rng, &OBJECTS),
            pick(&mut rng, &MANNERS),
            pick(&mut rng, &CONTEXTS),
            pick(&mut rng, &VERBS),
            pick(&mut rng, &OBJECTS),
        );
        out.push_str(&format!("{}. {name}: {body}\n", i + 1));
    }
    out
}

fn capitalize(w: &str) -> String {
    let mut c = w.chars();
    c.next()
        .map(|f| f.to_uppercase().chain(c).collect())
        .unwrap_or_default()
}
