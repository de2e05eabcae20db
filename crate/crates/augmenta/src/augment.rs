//! Augmenters that may need a backend, and dataset-level application.

use augmenta_core::augment::tables::Tables;
use augmenta_core::augment::{
    augment_offline, build_augmentation_prompt, build_contextual_prompt, clean_response, is_refusal, AugmenterSpec,
    ContextualKind, Method, NonLlmMethod, Rate,
};
use augmenta_core::chat::ChatRequest;
use augmenta_core::model::{AugmentationRecord, Example, Instruction, TaskDataset};
use augmenta_core::rng::RngStream;
use rayon::prelude::*;

use crate::backend::{BackendError, LlmClient};

pub const FLAG_SKIPPED: &str = "skipped";
pub const FLAG_REFUSAL: &str = "refusal";
pub const FLAG_ERROR: &str = "error";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AugmentError {
    #[error("method `{0}` needs a backend")]
    NeedsBackend(String),
    #[error("task `{0}` has no training examples")]
    EmptyTrain(String),
    #[error("every example of task `{task}` failed to augment; first error: {first}")]
    AllFailed { task: String, first: String },
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Text plus what happened to it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Augmented {
    pub text: String,
    pub flags: Vec<String>,
    pub fingerprint: Option<String>,
}

impl Augmented {
    fn plain(text: String) -> Self {
        Augmented {
            text,
            flags: Vec::new(),
            fingerprint: None,
        }
    }
}

fn ask(client: &LlmClient, prompt: String) -> Result<(String, String), BackendError> {
    let req = ChatRequest::user(prompt);
    let fp = client.fingerprint(&req);
    Ok((clean_response(&client.chat_complete(&req)?), fp))
}

/// The contextual methods. The embed kinds use the synonym lexicon and never
/// call the backend; the others send one prompt (two for back-translation).
/// A blank reply keeps the original text, flagged `skipped`.
pub fn augment_contextual(
    text: &str,
    method: NonLlmMethod,
    rate: Rate,
    tables: &Tables,
    client: Option<&LlmClient>,
    rng: &mut RngStream,
) -> Result<Augmented, AugmentError> {
    if let Some(out) = augment_offline(text, method, rate, tables, rng) {
        return Ok(Augmented::plain(out));
    }
    let kind = method.contextual().expect("offline methods handled above");
    let client = client.ok_or_else(|| AugmentError::NeedsBackend(method.as_str().into()))?;
    let pivot = &client.config().pivot_language;
    let (mut out, fp) = ask(client, build_contextual_prompt(kind, text, pivot, true))?;
    if kind == ContextualKind::BackTranslation && !out.is_empty() {
        out = ask(client, build_contextual_prompt(kind, &out, pivot, false))?.0;
    }
    let mut aug = Augmented {
        text: out,
        flags: Vec::new(),
        fingerprint: Some(fp),
    };
    if aug.text.is_empty() {
        aug.text = text.to_string();
        aug.flags.push(FLAG_SKIPPED.into());
    }
    Ok(aug)
}

/// One meta-prompted rewrite of `ex.input`. Refusals and blank replies keep
/// the original input and are flagged.
pub fn llm_augment(
    ins: &Instruction,
    ex: &Example,
    task_name: &str,
    seed: u64,
    client: &LlmClient,
) -> Result<AugmentationRecord, BackendError> {
    let (out, fp) = ask(client, build_augmentation_prompt(ins, &ex.input))?;
    let (augmented_input, flags) = if out.is_empty() {
        (ex.input.clone(), vec![FLAG_SKIPPED.to_string()])
    } else if is_refusal(&out) {
        (ex.input.clone(), vec![FLAG_REFUSAL.to_string()])
    } else {
        (out, Vec::new())
    };
    Ok(AugmentationRecord {
        task_name: task_name.to_string(),
        method_id: Method::LlmInstruction(ins.clone()).id(),
        original: ex.clone(),
        augmented_input,
        seed,
        backend_fingerprint: Some(fp),
        flags,
    })
}

fn augment_one(
    spec: &AugmenterSpec,
    task_name: &str,
    ex: &Example,
    index: u64,
    tables: &Tables,
    client: Option<&LlmClient>,
) -> Result<AugmentationRecord, AugmentError> {
    match &spec.method {
        Method::LlmInstruction(ins) => {
            let client = client.ok_or_else(|| AugmentError::NeedsBackend(spec.method_id()))?;
            Ok(llm_augment(ins, ex, task_name, spec.seed, client)?)
        }
        Method::NonLlm(m) => {
            let mut rng = RngStream::derive(spec.seed, index);
            let aug = augment_contextual(&ex.input, *m, spec.rate, tables, client, &mut rng)?;
            Ok(AugmentationRecord {
                task_name: task_name.to_string(),
                method_id: spec.method_id(),
                original: ex.clone(),
                augmented_input: aug.text,
                seed: spec.seed,
                backend_fingerprint: aug.fingerprint,
                flags: aug.flags,
            })
        }
    }
}

/// `spec.repeats` records per training example, in input order. Example `i`
/// of copy `c` draws from `RngStream::derive(spec.seed, c * n + i)`. A failed
/// example keeps its original input, flagged `error`; the batch fails only
/// when every example fails.
pub fn apply_to_dataset(
    spec: &AugmenterSpec,
    task: &TaskDataset,
    tables: &Tables,
    client: Option<&LlmClient>,
) -> Result<Vec<AugmentationRecord>, AugmentError> {
    if task.train.is_empty() {
        return Err(AugmentError::EmptyTrain(task.task_name.clone()));
    }
    if spec.method.needs_backend() && client.is_none() {
        return Err(AugmentError::NeedsBackend(spec.method_id()));
    }
    let n = task.train.len();
    let work: Vec<(usize, &Example)> = (0..spec.repeats.max(1))
        .flat_map(|c| task.train.iter().enumerate().map(move |(i, ex)| (c * n + i, ex)))
        .collect();
    let results: Vec<Result<AugmentationRecord, AugmentError>> = work
        .par_iter()
        .map(|&(idx, ex)| augment_one(spec, &task.task_name, ex, idx as u64, tables, client))
        .collect();
    if results.iter().all(Result::is_err) {
        let first = results.into_iter().find_map(Result::err).expect("non-empty");
        return Err(AugmentError::AllFailed {
            task: task.task_name.clone(),
            first: first.to_string(),
        });
    }
    Ok(results
        .into_iter()
        .zip(&work)
        .map(|(r, &(_, ex))| {
            r.unwrap_or_else(|_| AugmentationRecord {
                task_name: task.task_name.clone(),
                method_id: spec.method_id(),
                original: ex.clone(),
                augmented_input: ex.input.clone(),
                seed: spec.seed,
                backend_fingerprint: None,
                flags: vec![FLAG_ERROR.into()],
            })
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::mock::{MockBackend, MockScript};
    use crate::backend::BackendConfig;
    use augmenta_core::model::{Origin, TaskKind};

    fn mock() -> LlmClient {
        LlmClient::new(BackendConfig::mock()).unwrap()
    }

    fn scripted(pattern: &str, reply: &str) -> LlmClient {
        LlmClient::scripted_mock(MockScript::rule(pattern, &[reply]))
    }

    fn task(n: usize) -> TaskDataset {
        let cands = vec!["pos".to_string(), "neg".to_string()];
        TaskDataset {
            task_name: "t".into(),
            kind: TaskKind::Classification,
            train: (0..n)
                .map(|i| Example::new(format!("the movie number {i} was good"), "pos", cands.clone()))
                .collect(),
            dev: vec![],
            test: vec![],
        }
    }

    fn ins() -> Instruction {
        Instruction::new("Shuffle", "reorder the words", Origin::SeedManual).unwrap()
    }

    #[test]
    fn llm_augment_uses_mock_shuffle() {
        let c = mock();
        let ex = Example::new("a b c", "pos", vec![]);
        let r = llm_augment(&ins(), &ex, "t", 1, &c).unwrap();
        let expected =
            MockBackend::default().respond(&c.resolve(&ChatRequest::user(build_augmentation_prompt(&ins(), "a b c"))));
        assert_eq!(r.augmented_input, expected);
        assert_eq!(r.original.output, "pos");
        assert_eq!(r.method_id, "llm:Shuffle");
        assert!(r.backend_fingerprint.unwrap().starts_with("mock:"));
    }

    #[test]
    fn fences_are_stripped() {
        let c = scripted("Input Data", "```augmented text```");
        let r = llm_augment(&ins(), &Example::new("x y", "pos", vec![]), "t", 1, &c).unwrap();
        assert_eq!(r.augmented_input, "augmented text");
    }

    #[test]
    fn refusal_keeps_original() {
        let c = scripted("Input Data", "I'm sorry, I can't help with that.");
        let r = llm_augment(&ins(), &Example::new("x y", "pos", vec![]), "t", 1, &c).unwrap();
        assert_eq!(r.augmented_input, "x y");
        assert_eq!(r.flags, vec![FLAG_REFUSAL]);
    }

    #[test]
    fn blank_contextual_reply_is_skipped() {
        let c = scripted("Translate", "   ");
        let mut rng = RngStream::new(0);
        let a = augment_contextual(
            "good day",
            NonLlmMethod::BackTranslation,
            Rate::default(),
            &Tables::bundled(),
            Some(&c),
            &mut rng,
        )
        .unwrap();
        assert_eq!(a.text, "good day");
        assert_eq!(a.flags, vec![FLAG_SKIPPED]);
    }

    #[test]
    fn back_translation_through_mock_is_a_permutation() {
        let c = mock();
        let mut rng = RngStream::new(0);
        let tables = Tables::bundled();
        let a = augment_contextual(
            "one two three four",
            NonLlmMethod::BackTranslation,
            Rate::default(),
            &tables,
            Some(&c),
            &mut rng,
        )
        .unwrap();
        let mut got: Vec<&str> = a.text.split(' ').collect();
        got.sort();
        assert_eq!(got, ["four", "one", "three", "two"]);
        assert_eq!(c.ledger().snapshot().mock_requests, 2);
    }

    #[test]
    fn embed_kinds_are_offline() {
        let mut rng = RngStream::new(0);
        let a = augment_contextual(
            "good day",
            NonLlmMethod::EmbedSubstitute,
            Rate::new(1.0).unwrap(),
            &Tables::bundled(),
            None,
            &mut rng,
        )
        .unwrap();
        assert_ne!(a.text, "good day");
        assert!(augment_contextual(
            "x",
            NonLlmMethod::LmInsert,
            Rate::default(),
            &Tables::bundled(),
            None,
            &mut rng
        )
        .is_err());
    }

    #[test]
    fn one_record_per_example_in_order() {
        let t = task(16);
        let spec = AugmenterSpec::new(Method::NonLlm(NonLlmMethod::CharSwap), 9);
        let tables = Tables::bundled();
        let a = apply_to_dataset(&spec, &t, &tables, None).unwrap();
        assert_eq!(a.len(), 16);
        for (r, ex) in a.iter().zip(&t.train) {
            assert_eq!(&r.original, ex);
        }
        assert_eq!(a, apply_to_dataset(&spec, &t, &tables, None).unwrap());
        let llm = AugmenterSpec::new(Method::LlmInstruction(ins()), 9);
        let c = mock();
        let b = apply_to_dataset(&llm, &t, &tables, Some(&c)).unwrap();
        assert_eq!(b.len(), 16);
        assert_eq!(b, apply_to_dataset(&llm, &t, &tables, Some(&c)).unwrap());
        assert!(matches!(
            apply_to_dataset(&llm, &t, &tables, None),
            Err(AugmentError::NeedsBackend(_))
        ));
    }

    #[test]
    fn repeats_multiply() {
        let spec = AugmenterSpec {
            repeats: 3,
            ..AugmenterSpec::new(Method::NonLlm(NonLlmMethod::WordSwap), 1)
        };
        assert_eq!(
            apply_to_dataset(&spec, &task(4), &Tables::bundled(), None)
                .unwrap()
                .len(),
            12
        );
    }
}
