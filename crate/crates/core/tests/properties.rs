use std::cell::Cell;

use augmenta_core::augment::tables::Tables;
use augmenta_core::augment::{augment_offline, word_count, NonLlmMethod, Rate};
use augmenta_core::chat::{ChatRequest, Complete};
use augmenta_core::eval::{accuracy, macro_f1, predict, TargetModel, TrainPair};
use augmenta_core::instructgen::{run_generation_loop, GenerationConfig};
use augmenta_core::model::{Instruction, Origin};
use augmenta_core::rng::RngStream;
use augmenta_core::selector::{listwise_loss, loss_gradient, softmax};
use augmenta_core::text::{lcs_length, rouge_l, tokenize};
use proptest::prelude::*;

fn sentence() -> impl Strategy<Value = String> {
    prop::collection::vec("[a-d]{1,3}", 0..14).prop_map(|w| w.join(" "))
}

fn scores() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0f64..5.0, 2..7)
}

fn sorted_chars(w: &str) -> Vec<char> {
    let mut c: Vec<char> = w.chars().collect();
    c.sort_unstable();
    c
}

/// Replies with a random mix of near-duplicates, fresh items, garbage and errors.
struct Chaotic {
    rng: Cell<u64>,
}

impl Complete for Chaotic {
    type Error = String;

    fn complete(&self, _: &ChatRequest) -> Result<String, String> {
        let mut rng = RngStream::new(self.rng.get());
        self.rng.set(rng.next_u64());
        match rng.below(4) {
            0 => Err("down".into()),
            1 => Ok("no list here".into()),
            _ => Ok((0..1 + rng.below(6))
                .map(|i| {
                    let words: Vec<String> = (0..1 + rng.below(5)).map(|_| format!("t{}", rng.below(8))).collect();
                    format!("{}. N{}: {}\n", i + 1, rng.below(30), words.join(" "))
                })
                .collect()),
        }
    }
}

struct Shifted(Vec<f64>);

impl TargetModel for Shifted {
    type Error = String;

    fn fit(&mut self, _: &[TrainPair]) -> Result<(), String> {
        Ok(())
    }

    fn candidate_scores(&self, _: &str, _: &[String]) -> Result<Vec<f64>, String> {
        Ok(self.0.clone())
    }
}

proptest! {
    #[test]
    fn rouge_of_self_is_one(a in sentence().prop_filter("non-empty", |s| !s.is_empty())) {
        let t = tokenize(&a);
        prop_assert!((rouge_l(&t, &t, 1.0) - 1.0).abs() < 1e-12);
        prop_assert!((rouge_l(&t, &t, 2.5) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rouge_f1_symmetric_and_lcs_bounded(a in sentence(), b in sentence()) {
        let (ta, tb) = (tokenize(&a), tokenize(&b));
        prop_assert!((rouge_l(&ta, &tb, 1.0) - rouge_l(&tb, &ta, 1.0)).abs() < 1e-12);
        prop_assert!(lcs_length(&ta, &tb) <= ta.len().min(tb.len()));
    }

    #[test]
    fn rng_replay(seed: u64) {
        let (mut a, mut b) = (RngStream::new(seed), RngStream::new(seed));
        for _ in 0..10_000 {
            prop_assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn word_level_edits_keep_their_promises(text in sentence(), seed: u64, rate in 0.0f64..=1.0) {
        let tables = Tables::bundled();
        let rate = Rate::new(rate).unwrap();
        let run = |m: NonLlmMethod| augment_offline(&text, m, rate, &tables, &mut RngStream::new(seed)).unwrap();

        let mut before: Vec<&str> = text.split_whitespace().collect();
        let swapped = run(NonLlmMethod::WordSwap);
        let mut after: Vec<&str> = swapped.split_whitespace().collect();
        before.sort_unstable();
        after.sort_unstable();
        prop_assert_eq!(before, after);

        let char_swapped = run(NonLlmMethod::CharSwap);
        let pairs: Vec<(&str, &str)> = text.split_whitespace().zip(char_swapped.split_whitespace()).collect();
        prop_assert_eq!(pairs.len(), word_count(&text));
        for (x, y) in pairs {
            prop_assert_eq!(sorted_chars(x), sorted_chars(y));
        }

        for m in NonLlmMethod::ALL {
            let Some(a) = augment_offline(&text, m, rate, &tables, &mut RngStream::new(seed)) else { continue };
            let b = augment_offline(&text, m, rate, &tables, &mut RngStream::new(seed)).unwrap();
            prop_assert_eq!(&a, &b);
            if m.char_edit().is_some() {
                prop_assert_eq!(word_count(&a), word_count(&text));
            }
            if !text.trim().is_empty() {
                prop_assert!(!a.trim().is_empty(), "{} emptied {:?}", m.as_str(), text);
            }
        }
    }

    #[test]
    fn loss_is_nonnegative_gradient_on_simplex_and_shift_free(q in scores(), c in -50.0f64..50.0, w in 0usize..6) {
        let n = q.len();
        let mut r = vec![0.0; n];
        r[w % n] = 1.0;
        let l = listwise_loss(&q, &r).unwrap();
        prop_assert!(l >= 0.0);
        let g = loss_gradient(&q, &r).unwrap();
        prop_assert!(g.iter().sum::<f64>().abs() < 1e-12);
        let moved: Vec<f64> = q.iter().map(|x| x + c).collect();
        prop_assert!((listwise_loss(&moved, &r).unwrap() - l).abs() < 1e-9);
        for (a, b) in softmax(&q).iter().zip(softmax(&moved)) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn metrics_bounded_perfect_and_relabel_free(
        gold in prop::collection::vec(0usize..4, 1..30),
        noise in prop::collection::vec(0usize..4, 1..30),
        perm in Just([0usize, 1, 2, 3]).prop_shuffle(),
    ) {
        let pred: Vec<usize> = gold.iter().zip(noise.iter().cycle()).map(|(g, n)| if n % 2 == 0 { *g } else { *n }).collect();
        let name = |v: &[usize], p: &[usize; 4]| -> Vec<String> { v.iter().map(|&i| format!("L{}", p[i])).collect() };
        let id = [0, 1, 2, 3];
        let (g, p) = (name(&gold, &id), name(&pred, &id));
        let f = macro_f1(&g, &p).unwrap();
        let a = accuracy(&g, &p).unwrap();
        prop_assert!((0.0..=1.0).contains(&f) && (0.0..=1.0).contains(&a));
        prop_assert_eq!(macro_f1(&g, &g).unwrap(), 1.0);
        prop_assert_eq!(accuracy(&g, &g).unwrap(), 1.0);
        let f2 = macro_f1(&name(&gold, &perm), &name(&pred, &perm)).unwrap();
        prop_assert!((f - f2).abs() < 1e-12);
    }

    #[test]
    fn predict_ignores_constant_shift(s in scores(), c in -1e3f64..1e3) {
        let cands: Vec<String> = (0..s.len()).map(|i| i.to_string()).collect();
        let base = predict(&Shifted(s.clone()), "x", &cands).unwrap();
        let moved = predict(&Shifted(s.iter().map(|x| x + c).collect()), "x", &cands).unwrap();
        prop_assert_eq!(base, moved);
    }

    #[test]
    fn generation_loop_invariants_hold_for_any_backend(seed: u64, target in 14usize..40, max_iter in 1usize..12) {
        let seeds: Vec<Instruction> = (0..13)
            .map(|i| Instruction::new(&format!("Seed{i}"), &format!("s{i}a s{i}b"), Origin::SeedManual).unwrap())
            .collect();
        let cfg = GenerationConfig { target_pool_size: target, max_iterations: max_iter, seed, ..Default::default() };
        let backend = Chaotic { rng: Cell::new(seed) };
        let Ok(out) = run_generation_loop(&seeds, &cfg, &backend) else { return Ok(()) };
        prop_assert!(out.backend_calls <= max_iter);
        prop_assert_eq!(&out.pool.instructions[..13], &seeds[..]);
        prop_assert!(out.pool.len() <= target);
        let bodies: Vec<_> = out.pool.instructions.iter().map(|i| tokenize(&i.body)).collect();
        for i in 0..bodies.len() {
            for j in 0..i {
                prop_assert!(rouge_l(&bodies[i], &bodies[j], 1.0) < cfg.similarity_threshold);
            }
        }
        // The pool only grows, by appending: provenance never goes back and
        // the raw size is the seeds plus every accepted candidate.
        prop_assert!(out.pool.provenance.windows(2).all(|w| w[0] <= w[1]));
        let accepted: usize = out.log.iter().map(|it| it.decisions.iter().filter(|d| d.accepted).count()).sum();
        prop_assert_eq!(out.raw_size, 13 + accepted);
    }
}
