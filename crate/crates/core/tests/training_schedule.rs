use aflab_core::ctc::AlignmentMode;
use aflab_core::training::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn mixed_schedule_is_forced_in_the_first_half() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for step in 0..500 {
        assert_eq!(alignment_schedule(step, 1000, AlignmentPolicy::Mixed, 0.5, &mut rng), AlignmentMode::Forced);
    }
    assert!((greedy_probability(999, 1000, AlignmentPolicy::Mixed, 0.5) - 0.499).abs() < 1e-12);
    assert_eq!(alignment_schedule(0, 10, AlignmentPolicy::Greedy, 0.5, &mut rng), AlignmentMode::Greedy);
    assert_eq!(alignment_schedule(9, 10, AlignmentPolicy::Forced, 0.5, &mut rng), AlignmentMode::Forced);
}

#[test]
fn mixed_schedule_second_half_mean_is_half_of_p_max() {
    let total = 200_000;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let greedy = (total / 2..total)
        .filter(|&s| alignment_schedule(s, total, AlignmentPolicy::Mixed, 0.5, &mut rng) == AlignmentMode::Greedy)
        .count();
    let rate = greedy as f64 / (total / 2) as f64;
    assert!((rate - 0.25).abs() < 0.02, "{rate}");
}

#[test]
fn learning_rate_line() {
    assert_eq!(lr_at(0, 100, 1000, 4e-5), 0.0);
    assert_eq!(lr_at(100, 100, 1000, 4e-5), 4e-5);
    // Midpoint of the decay line sits at half the peak.
    assert!((lr_at(550, 100, 1000, 4e-5) - 2e-5).abs() < 1e-18);
    assert_eq!(lr_at(1000, 100, 1000, 4e-5), 0.0);
    assert!((lr_at(50, 100, 1000, 1.0) - 0.5).abs() < 1e-15);
}

#[test]
fn combined_loss_arithmetic() {
    assert_eq!(combined_loss(2.0, 10.0, 0.0).unwrap(), 2.0);
    assert!((combined_loss(2.0, 10.0, 0.3).unwrap() - 5.0).abs() < 1e-12);
    assert_eq!(combined_loss(1.5, 4.0, 1.0).unwrap(), combined_loss(4.0, 1.5, 1.0).unwrap());
    assert!(combined_loss(f64::NAN, 1.0, 0.3).is_err());
}

#[test]
fn presets_fix_orders_and_sources() {
    use aflab_core::synthdata::{InstructionSource, PromptOrder};
    let e1 = ExperimentPreset::new(PresetId::E1, None).unwrap();
    assert_eq!(e1.order, PromptOrder::AudioFirst);
    for id in [PresetId::E2, PresetId::E3, PresetId::E4] {
        assert_eq!(ExperimentPreset::new(id, None).unwrap().order, PromptOrder::InstructionFirst);
    }
    assert_eq!(ExperimentPreset::new(PresetId::E3, None).unwrap().instruction_source, InstructionSource::RenderedAudio);
    assert_eq!(ExperimentPreset::new(PresetId::E4, None).unwrap().instruction_source, InstructionSource::RenderedAudioX5);
    assert!(ExperimentPreset::new(PresetId::E1, Some(PromptOrder::InstructionFirst)).is_err());
    let af = ExperimentPreset::new(PresetId::AlignFormer, Some(PromptOrder::InstructionFirst)).unwrap();
    assert_eq!(af.order, PromptOrder::InstructionFirst);
    let err = PresetId::parse("E9").unwrap_err().to_string();
    assert!(err.contains("alignformer") && err.contains("E1"), "{err}");
}
