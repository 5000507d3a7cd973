//! CTC algorithms against exhaustive path enumeration.

use aflab_core::compute::Tensor2D;
use aflab_core::ctc::{
    collapse, ctc_forced_align, ctc_grad_check, ctc_greedy_path, ctc_loss, path_log_prob, LogProbMatrix,
    TargetSequence,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_logp(rng: &mut impl Rng, frames: usize, vocab: usize) -> LogProbMatrix {
    let data = (0..frames * vocab).map(|_| rng.gen_range(-3.0..3.0)).collect();
    LogProbMatrix::from_logits(&Tensor2D::new(frames, vocab, data).unwrap()).unwrap()
}

/// Every label string of length `frames` over `vocab` symbols.
fn all_paths(frames: usize, vocab: usize) -> impl Iterator<Item = Vec<usize>> {
    (0..vocab.pow(frames as u32)).map(move |mut code| {
        (0..frames)
            .map(|_| {
                let l = code % vocab;
                code /= vocab;
                l
            })
            .collect()
    })
}

/// (-log sum, max log-prob) over paths collapsing to `target`.
fn brute_force(logp: &LogProbMatrix, target: &[usize]) -> (f64, f64) {
    let mut total = 0.0f64;
    let mut best = f64::NEG_INFINITY;
    for path in all_paths(logp.frames(), logp.vocab()) {
        if collapse(&path).0 == target {
            let lp = path_log_prob(logp, &path);
            total += lp.exp();
            best = best.max(lp);
        }
    }
    (-total.ln(), best)
}

fn random_target(rng: &mut impl Rng, max_len: usize, vocab: usize, frames: usize) -> TargetSequence {
    loop {
        let len = rng.gen_range(0..=max_len);
        let t = TargetSequence((0..len).map(|_| rng.gen_range(1..vocab)).collect());
        if t.min_frames() <= frames {
            return t;
        }
    }
}

#[test]
fn loss_matches_enumeration_for_t4_u2_v3() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let lp = random_logp(&mut rng, 4, 3);
    let target = TargetSequence(vec![1, 2]);
    let (expected, _) = brute_force(&lp, target.tokens());
    assert!((ctc_loss(&lp, &target).unwrap() - expected).abs() < 1e-6);
}

#[test]
fn forced_alignment_matches_enumeration_for_t5_u2_v3() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..10 {
        let lp = random_logp(&mut rng, 5, 3);
        let target = TargetSequence(vec![rng.gen_range(1..3), rng.gen_range(1..3)]);
        let (_, best) = brute_force(&lp, target.tokens());
        let path = ctc_forced_align(&lp, &target).unwrap();
        assert_eq!(path.collapse(), target);
        assert!((path_log_prob(&lp, &path.labels) - best).abs() < 1e-9);
    }
}

#[test]
fn exhaustive_equivalence_on_small_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..150 {
        let frames = rng.gen_range(1..=6);
        let vocab = rng.gen_range(2..=4);
        let lp = random_logp(&mut rng, frames, vocab);
        let target = random_target(&mut rng, 3, vocab, frames);
        let (loss, best) = brute_force(&lp, target.tokens());
        assert!((ctc_loss(&lp, &target).unwrap() - loss).abs() < 1e-6);
        let path = ctc_forced_align(&lp, &target).unwrap();
        assert!((path_log_prob(&lp, &path.labels) - best).abs() < 1e-9);
    }
}

#[test]
fn greedy_collapse_equals_best_path_decode() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..50 {
        let lp = random_logp(&mut rng, 8, 5);
        let argmax: Vec<usize> = (0..8)
            .map(|t| {
                let row = lp.row(t);
                (0..5).fold(0, |b, k| if row[k] > row[b] { k } else { b })
            })
            .collect();
        let mut decoded = Vec::new();
        for (i, &l) in argmax.iter().enumerate() {
            if l != 0 && (i == 0 || argmax[i - 1] != l) {
                decoded.push(l);
            }
        }
        assert_eq!(ctc_greedy_path(&lp).collapse().0, decoded);
    }
}

#[test]
fn gradient_check_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let lp = random_logp(&mut rng, 4, 3);
        let target = random_target(&mut rng, 2, 3, 4);
        let report = ctc_grad_check(&lp, &target).unwrap();
        assert!(report.passed(1e-3), "{report:?}");
    }
}

#[test]
fn loss_is_covariant_under_relabeling() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let perm = [0usize, 3, 1, 2];
    for _ in 0..20 {
        let lp = random_logp(&mut rng, 6, 4);
        let target = random_target(&mut rng, 3, 4, 6);
        let mut permuted = Tensor2D::zeros(6, 4);
        for t in 0..6 {
            for k in 0..4 {
                permuted.set(t, perm[k], lp.row(t)[k]);
            }
        }
        let permuted = LogProbMatrix::new(permuted).unwrap();
        let relabeled = TargetSequence(target.tokens().iter().map(|&k| perm[k]).collect());
        let a = ctc_loss(&lp, &target).unwrap();
        let b = ctc_loss(&permuted, &relabeled).unwrap();
        assert!((a - b).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn forced_alignment_invariants(seed in any::<u64>(), frames in 1usize..12, vocab in 2usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lp = random_logp(&mut rng, frames, vocab);
        let target = random_target(&mut rng, 4, vocab, frames);
        let path = ctc_forced_align(&lp, &target).unwrap();
        prop_assert_eq!(path.labels.len(), frames);
        prop_assert_eq!(path.collapse(), target.clone());
        let loss = ctc_loss(&lp, &target).unwrap();
        // The sum over paths dominates the best single path.
        prop_assert!(loss <= -path_log_prob(&lp, &path.labels) + 1e-12);
        prop_assert_eq!(ctc_forced_align(&lp, &target).unwrap(), path);
    }
}
