#![allow(dead_code)]

use chromalab_core::colorspace::srgb_to_lab;
use chromalab_core::dataset::Dataset;
use chromalab_core::quantize::build_gamut;
use chromalab_core::rebalance::PriorWeights;
use chromalab_pipeline::arch::{self, ArchitectureConfig};
use chromalab_pipeline::fixture;
use chromalab_pipeline::{TrainConfig, Variant};

/// A handful of scenes without palette swatches.
pub fn small_dataset(count: usize) -> Dataset {
    let scenes = fixture::generate(count, 64, 5, &[]);
    let (names, images) = scenes.into_iter().unzip();
    Dataset::from_images(names, images, 11).unwrap()
}

pub fn priors(ds: &Dataset, lambda: f64) -> PriorWeights {
    let bins = build_gamut(10.0).unwrap();
    let labs: Vec<_> = ds.images().iter().map(srgb_to_lab).collect();
    PriorWeights::estimate(&labs, &bins, lambda, 5.0).unwrap()
}

/// Fast configuration: narrow desk network.
pub fn tiny_arch() -> ArchitectureConfig {
    arch::scaled(64, 32).unwrap()
}

pub fn config(variant: Variant, iterations: u64) -> TrainConfig {
    TrainConfig { variant, iterations, batch_size: 4, seed: 3, ..TrainConfig::default() }.with_lr(1e-3)
}
