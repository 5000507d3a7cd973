use aflab_core::compute::Tensor2D;
use aflab_core::ctc::{collapse, ctc_forced_align, AlignmentMode, AlignmentPath, LogProbMatrix, TargetSequence};
use aflab_core::windowing::{path_to_windows, windows_to_mask, WindowSpec};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Independent partition checker: every frame in exactly one window, windows
/// in order, each window ending on a frame of its own token.
fn is_partition(spec: &WindowSpec, labels: &[usize]) -> bool {
    let mut owner = vec![None; spec.total_frames];
    for (i, w) in spec.windows.iter().enumerate() {
        for f in w.start..w.end {
            if owner[f].is_some() {
                return false;
            }
            owner[f] = Some(i);
        }
        if !labels[w.start..w.end].contains(&w.token) {
            return false;
        }
    }
    spec.windows.is_empty() || owner.iter().all(Option::is_some)
}

proptest! {
    #[test]
    fn random_paths_partition_frames(labels in prop::collection::vec(0usize..5, 1..30)) {
        let path = AlignmentPath { labels: labels.clone(), mode: AlignmentMode::Greedy };
        let spec = path_to_windows(&path);
        prop_assert!(is_partition(&spec, &labels));
        prop_assert!(spec.validate().is_ok());
        prop_assert_eq!(spec.len(), collapse(&labels).len());
        prop_assert_eq!(spec.tokens(), collapse(&labels).0);
        let mask = windows_to_mask(&spec);
        if !spec.is_empty() {
            prop_assert!(mask.column_sums().iter().all(|&s| s == 1));
        }
        prop_assert_eq!(WindowSpec::from_mask(&mask, &spec.tokens()).unwrap(), spec);
    }
}

#[test]
fn forced_paths_yield_one_window_per_target_token() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..200 {
        let data = (0..12 * 6).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let lp = LogProbMatrix::from_logits(&Tensor2D::new(12, 6, data).unwrap()).unwrap();
        let target = TargetSequence((0..4).map(|_| rng.gen_range(1..6)).collect());
        let path = ctc_forced_align(&lp, &target).unwrap();
        let spec = path_to_windows(&path);
        assert_eq!(spec.len(), 4);
        assert_eq!(spec.tokens(), target.0);
        assert!(is_partition(&spec, &path.labels));
        assert_eq!(spec.windows.first().unwrap().start, 0);
        assert_eq!(spec.windows.last().unwrap().end, 12);
        assert_eq!(path_to_windows(&ctc_forced_align(&lp, &target).unwrap()), spec);
    }
}
