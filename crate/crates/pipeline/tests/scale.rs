mod common;

use chromalab_pipeline::arch::{desk_scale, full_scale, ArchitectureConfig};
use chromalab_pipeline::{build_model, HeadKind, TrainConfig, Trainer, Variant};
use common::*;

#[test]
fn full_scale_network_builds_with_a_56_pixel_head() {
    let arch = full_scale();
    assert_eq!(arch.head_size(), 56);
    let model = build_model(&arch, HeadKind::Classification { q: 313 }, 0).unwrap();
    assert_eq!(model.head_size(), 56);
    // 3x3 conv weights and biases, batch norm scale and shift, and a 1x1
    // head over 128 channels.
    assert_eq!(model.parameter_count(), 24_788_089);
}

#[test]
fn mismatched_declared_columns_are_rejected() {
    let text = full_scale().to_text().replacen("conv5_1 512 1 2 - - 28 8 16", "conv5_1 512 1 2 - - 28 8 8", 1);
    assert_ne!(text, full_scale().to_text());
    assert!(ArchitectureConfig::parse(&text).is_err());
}

#[test]
fn desk_training_reduces_the_loss() {
    let ds = small_dataset(48);
    let pw = priors(&ds, 0.5);
    let cfg = TrainConfig { variant: Variant::ClassRebal, iterations: 200, batch_size: 8, seed: 1, ..TrainConfig::default() }.with_lr(1e-3);
    let mut t = Trainer::new(cfg, &desk_scale(), &ds, Some(&pw), None).unwrap();
    let log = t.run(|_, _| Ok(())).unwrap();
    let first = log[0].smoothed;
    let last = log.last().unwrap().smoothed;
    assert!(last < 0.7 * first, "smoothed loss {first} -> {last}");
}
