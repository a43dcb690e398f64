//! Implementation paths against independent scalar oracles.

mod support;

use eer_core::bounds::{operator_norm, shannon_entropy, tsallis_entropy, ProbabilityRow};
use eer_core::data::full_sequence_targets;
use eer_core::hamiltonian::attention_energy;
use eer_core::loss::{entropy_loss, kinetic_loss_seq, potential_loss, task_loss};
use eer_core::model::{attention_operator, ModelDims};
use eer_core::tape::Tape;
use eer_core::{AttentionMap, ModelWeights, SequenceBatch, SeededRng, Tensor};
use support::*;

#[test]
fn matmul_matches_triple_loop_oracle() {
    let mut rng = SeededRng::new(1);
    for _ in 0..20 {
        let a = Tensor::from_fn(3, 3, |_, _| rng.uniform(-2.0, 2.0));
        let b = Tensor::from_fn(3, 3, |_, _| rng.uniform(-2.0, 2.0));
        let got = a.matmul(&b).unwrap();
        let want = matmul_oracle(&a, &b);
        for (x, y) in got.data().iter().zip(want.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn row_softmax_matches_scalar_oracle() {
    let logits = Tensor::from_vec(1, 3, vec![1.0, 2.0, 3.0]).unwrap();
    let got = logits.row_softmax(1.0).unwrap();
    let want = softmax_row_oracle(&[1.0, 2.0, 3.0], 1.0);
    for (x, y) in got.data().iter().zip(&want) {
        assert!((x - y).abs() < 1e-12);
    }
    // And at a non-unit temperature.
    let got = logits.row_softmax(2.5).unwrap();
    let want = softmax_row_oracle(&[1.0, 2.0, 3.0], 2.5);
    for (x, y) in got.data().iter().zip(&want) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn operator_norm_matches_jacobi_svd() {
    let mut rng = SeededRng::new(2);
    for trial in 0..20 {
        let w = Tensor::from_fn(8, 8, |_, _| rng.uniform(-1.0, 1.0));
        let got = operator_norm(&w, 1e-12).unwrap();
        let want = svd_max_oracle(&w);
        assert!(
            (got - want).abs() < 1e-8,
            "trial {trial}: power {got} vs jacobi {want}"
        );
    }
}

#[test]
fn attention_operator_matches_per_row_scalar_oracle() {
    let dims = ModelDims {
        d: 8,
        d_ff: 16,
        vocab: 4,
    };
    let mut rng = SeededRng::new(3);
    let weights = ModelWeights::init(&dims, &mut rng);
    let h = Tensor::from_fn(4, 8, |_, _| rng.uniform(-1.0, 1.0));
    let temperature = 1.3;

    let mut tape = Tape::new();
    let (out, map) = attention_operator(&mut tape, &h, &weights, temperature).unwrap();

    // Scalar re-derivation, element by element.
    let q = matmul_oracle(&h, &weights.w_q);
    let k = matmul_oracle(&h, &weights.w_k);
    let v = matmul_oracle(&h, &weights.w_v);
    for i in 0..4 {
        let scores: Vec<f64> = (0..4)
            .map(|j| {
                let mut dot = 0.0;
                for c in 0..8 {
                    dot += q.get(i, c) * k.get(j, c);
                }
                dot / 8.0f64.sqrt()
            })
            .collect();
        let probs = softmax_row_oracle(&scores, temperature);
        for j in 0..4 {
            assert!((map.tensor().get(i, j) - probs[j]).abs() < 1e-10);
        }
        for c in 0..8 {
            let mut expect = 0.0;
            for j in 0..4 {
                expect += probs[j] * v.get(j, c);
            }
            assert!((out.get(i, c) - expect).abs() < 1e-10);
        }
    }
}

#[test]
fn task_loss_matches_scalar_cross_entropy() {
    let mut rng = SeededRng::new(4);
    let logits = Tensor::from_fn(6, 4, |_, _| rng.uniform(-3.0, 3.0));
    let targets: Vec<Option<usize>> = (0..6)
        .map(|i| if i % 3 == 0 { None } else { Some(rng.below(4)) })
        .collect();
    let batch = SequenceBatch::new(
        vec![(0..6).map(|_| rng.below(4)).collect()],
        vec![targets.clone()],
        4,
    )
    .unwrap();
    let trace = eer_core::LoopTrace {
        z_per_iter: vec![Tensor::zeros(6, 8)],
        attn_per_iter: vec![AttentionMap::new(Tensor::from_fn(6, 6, |_, _| 1.0 / 6.0)).unwrap()],
        alphas: vec![1.0],
        final_logits: logits.clone(),
    };
    let mut tape = Tape::new();
    let got = task_loss(&mut tape, &[trace], &batch).unwrap().item().unwrap();
    let want = cross_entropy_oracle(&logits, &targets);
    assert!((got - want).abs() < 1e-10, "{got} vs {want}");
}

#[test]
fn kinetic_loss_matches_scalar_row_norms() {
    let mut rng = SeededRng::new(5);
    let z = Tensor::from_fn(5, 8, |_, _| rng.uniform(-2.0, 2.0));
    let trace = eer_core::LoopTrace {
        z_per_iter: vec![Tensor::zeros(5, 8), z.clone()],
        attn_per_iter: vec![AttentionMap::new(Tensor::from_fn(5, 5, |_, _| 0.2)).unwrap()],
        alphas: vec![1.0],
        final_logits: Tensor::zeros(5, 4),
    };
    let mut tape = Tape::new();
    let got = kinetic_loss_seq(&mut tape, &trace).unwrap().item().unwrap();
    let mut want = 0.0;
    for i in 0..5 {
        let mut sq = 0.0;
        for j in 0..8 {
            sq += z.get(i, j) * z.get(i, j);
        }
        want += sq.sqrt();
    }
    want /= 2.0 * 5.0;
    assert!((got - want).abs() < 1e-12);
}

#[test]
fn potential_loss_matches_scalar_max_log() {
    let mut rng = SeededRng::new(6);
    for _ in 0..10 {
        let logits = Tensor::from_fn(5, 5, |_, _| rng.uniform(-2.0, 2.0));
        let map = AttentionMap::new(logits.row_softmax(1.0).unwrap()).unwrap();
        let mut tape = Tape::new();
        let got = potential_loss(&mut tape, &[&map]).unwrap().item().unwrap();
        let mut want = 0.0;
        for i in 0..5 {
            let max = map.row(i).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            want += -max.ln();
        }
        want /= 5.0;
        assert!((got - want).abs() < 1e-12);
    }
}

#[test]
fn entropy_loss_matches_scalar_tsallis() {
    let mut rng = SeededRng::new(7);
    for &q in &[1.1, 1.5, 2.0] {
        let logits = Tensor::from_fn(6, 6, |_, _| rng.uniform(-2.0, 2.0));
        let map = AttentionMap::new(logits.row_softmax(1.0).unwrap()).unwrap();
        let mut tape = Tape::new();
        let got = entropy_loss(&mut tape, &[&map], q, 0.25)
            .unwrap()
            .item()
            .unwrap();
        let mean: f64 = (0..6).map(|i| tsallis_oracle(map.row(i), q)).sum::<f64>() / 6.0;
        let want = (mean - 0.25).abs();
        assert!((got - want).abs() < 1e-12);
    }
}

#[test]
fn tsallis_uniform_hand_value() {
    // (1 - 4 * 0.25^1.5) / 0.5 computed by scalar oracle and closed form.
    let p = ProbabilityRow::uniform(4);
    let got = tsallis_entropy(&p, 1.5).unwrap();
    assert!((got - tsallis_oracle(&[0.25; 4], 1.5)).abs() < 1e-15);
    assert!((got - 1.0).abs() < 1e-12);
}

#[test]
fn tsallis_near_one_matches_shannon() {
    let mut rng = SeededRng::new(8);
    for _ in 0..50 {
        let n = rng.range_inclusive(2, 64);
        let p = ProbabilityRow::new(rng.simplex(n)).unwrap();
        let s_tsallis = tsallis_entropy(&p, 1.001).unwrap();
        let s_shannon = shannon_entropy(&p);
        assert!(
            (s_tsallis - s_shannon).abs() < 1e-2,
            "n={n}: {s_tsallis} vs {s_shannon}"
        );
    }
}

#[test]
fn attention_energy_matches_scalar_lse_oracle() {
    let dims = ModelDims {
        d: 8,
        d_ff: 16,
        vocab: 4,
    };
    let mut rng = SeededRng::new(9);
    let weights = ModelWeights::init(&dims, &mut rng);
    let x = Tensor::from_fn(6, 8, |_, _| rng.uniform(-1.0, 1.0));
    let z: Vec<f64> = (0..8).map(|_| rng.uniform(-1.0, 1.0)).collect();
    for &tau in &[1.0, 2.0] {
        let got = attention_energy(&z, &x, &weights, tau).unwrap();
        // Scalar oracle: raw scores then a plain log-sum-exp.
        let qz = weights.w_q.matvec(&z).unwrap();
        let scores: Vec<f64> = (0..6)
            .map(|i| {
                let ki = weights.w_k.matvec(x.row(i)).unwrap();
                let dot: f64 = qz.iter().zip(&ki).map(|(a, b)| a * b).sum();
                dot / (tau * 8.0f64.sqrt())
            })
            .collect();
        let want = -tau * lse_oracle(&scores);
        assert!((got - want).abs() < 1e-12, "tau={tau}: {got} vs {want}");
    }
}

#[test]
fn induction_targets_match_brute_force_exhaustively() {
    // Every sequence of length 3..=6 over a 3-token vocabulary.
    for len in 3..=6usize {
        let count = 3usize.pow(len as u32);
        for code in 0..count {
            let mut tokens = Vec::with_capacity(len);
            let mut c = code;
            for _ in 0..len {
                tokens.push(c % 3);
                c /= 3;
            }
            let got = full_sequence_targets(&tokens, 3);
            let want = induction_targets_oracle(&tokens);
            assert_eq!(got, want, "tokens {tokens:?}");
        }
    }
}
