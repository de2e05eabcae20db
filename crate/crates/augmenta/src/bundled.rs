//! Instruction sets shipped with the binary.

use std::path::Path;

use augmenta_core::model::Instruction;

use crate::io::parse_instructions_json;

pub const MANUAL_INSTRUCTIONS: &str = include_str!("../data/manual_instructions.json");
pub const GENERATED_INSTRUCTIONS: &str = include_str!("../data/generated_instructions.json");

/// The 13 hand-written instructions used as generation seeds and as the
/// Manual-LLMDA baselines.
pub fn manual_instructions() -> Vec<Instruction> {
    parse_instructions_json(MANUAL_INSTRUCTIONS, Path::new("manual_instructions.json")).expect("bundled manual set")
}

/// A published set of model-generated instructions.
pub fn generated_instructions() -> Vec<Instruction> {
    parse_instructions_json(GENERATED_INSTRUCTIONS, Path::new("generated_instructions.json"))
        .expect("bundled generated set")
}
