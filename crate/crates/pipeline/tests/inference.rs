mod common;

use chromalab_core::colorspace::{split_channels, srgb_to_lab, RgbImage};
use chromalab_core::metrics::{auc_cmf, mean_chroma};
use chromalab_core::quantize::{build_gamut, decode_annealed_mean};
use chromalab_core::rebalance::PriorWeights;
use chromalab_pipeline::eval::{evaluate, predict_all, Predictor};
use chromalab_pipeline::infer::Colorizer;
use chromalab_pipeline::{Error, Trainer, Variant};
use common::*;

/// A classification model with one training step behind it, so batch
/// norm statistics exist.
fn trained(variant: Variant) -> Colorizer {
    let ds = small_dataset(4);
    let pw = priors(&ds, 0.5);
    let mut t = Trainer::new(config(variant, 1), &tiny_arch(), &ds, Some(&pw), None).unwrap();
    t.run(|_, _| Ok(())).unwrap();
    let bins = t.bins().cloned();
    Colorizer::new(t.into_model(), bins).unwrap()
}

fn test_image() -> RgbImage {
    small_dataset(1).get(0).clone()
}

#[test]
fn zeroed_head_predicts_the_centroid_of_the_bins() {
    let mut c = trained(Variant::ClassRebal);
    for (name, p) in c.model_mut().params_mut() {
        if name.starts_with("head.") {
            p.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let bins = c.bins().unwrap().clone();
    let q = bins.len() as f64;
    let ca = bins.centers().iter().map(|c| c[0]).sum::<f64>() / q;
    let cb = bins.centers().iter().map(|c| c[1]).sum::<f64>() / q;
    let (l, _) = split_channels(&srgb_to_lab(&test_image()));
    for t in [1.0, 0.38] {
        let ab = c.head_chroma(&l, t).unwrap();
        for [a, b] in ab.iter() {
            assert!((a as f64 - ca).abs() < 1e-3 && (b as f64 - cb).abs() < 1e-3, "{a} {b} vs {ca} {cb}");
        }
    }
}

#[test]
fn lightness_passes_through_bitwise() {
    for variant in [Variant::ClassRebal, Variant::L2] {
        let c = trained(variant);
        let lab = srgb_to_lab(&test_image());
        let out = c.colorize_lab(&lab, 0.38).unwrap();
        assert_eq!(out.l(), lab.l());
        assert_eq!((out.width(), out.height()), (lab.width(), lab.height()));
    }
}

#[test]
fn fused_decode_matches_the_library_decoder() {
    let c = trained(Variant::Class);
    let (l, _) = split_channels(&srgb_to_lab(&test_image()));
    let z = c.distribution(&l).unwrap();
    for t in [1.0, 0.38, 0.1] {
        let fused = c.head_chroma(&l, t).unwrap();
        let reference = decode_annealed_mean(&z, c.bins().unwrap(), t).unwrap();
        for (x, y) in fused.iter().zip(reference.iter()) {
            assert!((x[0] - y[0]).abs() < 1e-3 && (x[1] - y[1]).abs() < 1e-3, "T={t}: {x:?} vs {y:?}");
        }
    }
}

#[test]
fn small_inputs_and_bad_temperatures_are_rejected() {
    let c = trained(Variant::Class);
    let tiny = RgbImage::filled(7, 40, [10, 20, 30]).unwrap();
    assert!(matches!(c.colorize(&tiny, 0.38), Err(Error::InputTooSmall { width: 7, height: 40, min: 8 })));
    assert!(c.colorize(&RgbImage::filled(8, 8, [1, 2, 3]).unwrap(), 0.38).is_ok());
    assert!(c.colorize(&test_image(), 0.0).is_err());
    assert!(c.colorize(&test_image(), 1.5).is_err());
}

#[test]
fn non_square_inputs_keep_their_size() {
    let c = trained(Variant::Class);
    let img = RgbImage::from_fn(37, 20, |x, y| [(x * 6) as u8, (y * 12) as u8, 90]).unwrap();
    let out = c.colorize(&img, 0.38).unwrap();
    assert_eq!((out.width(), out.height()), (37, 20));
}

#[test]
fn dumped_distributions_match_the_prediction() {
    let c = trained(Variant::ClassRebal);
    let img = test_image();
    let q = c.bins().unwrap().len();
    let full = c.dump_distributions(&img, 1).unwrap();
    assert_eq!(full.bins.len(), q);
    let pixels = full.width * full.height;
    assert_eq!(pixels, c.model().head_size().pow(2));
    for p in 0..pixels {
        let s: f64 = full.planes.iter().map(|pl| pl[p] as f64).sum();
        assert!((s - 1.0).abs() < 1e-4, "pixel {p} sums to {s}");
    }
    let sub = c.dump_distributions(&img, 7).unwrap();
    assert_eq!(sub.bins.len(), q.div_ceil(7));
    let (l, _) = split_channels(&srgb_to_lab(&img));
    let z = c.distribution(&l).unwrap();
    for (k, &bin) in sub.bins.iter().enumerate() {
        let direct: Vec<f32> = z.pixels().map(|px| px[bin]).collect();
        assert_eq!(sub.planes[k], direct);
        assert_eq!(sub.centers[k], c.bins().unwrap().center(bin));
    }
    assert!(c.dump_distributions(&img, 0).is_err());
}

#[test]
fn regression_models_have_no_distribution() {
    let c = trained(Variant::L2);
    assert!(c.bins().is_none());
    assert!(c.dump_distributions(&test_image(), 1).is_err());
}

#[test]
fn evaluation_baselines() {
    let ds = small_dataset(3);
    // Uniform class-balance weights: the rebalanced AuC equals the plain one.
    let pw = PriorWeights::uniform(&build_gamut(10.0).unwrap());
    let truth = evaluate(Predictor::Truth, &ds, Some(&pw), 0.38).unwrap();
    assert_eq!(truth.auc, 100.0);
    assert_eq!(truth.auc_image_mean, 100.0);
    assert_eq!(truth.rebalanced_auc, Some(100.0));
    assert_eq!(truth.mean_chroma, truth.mean_chroma_truth);
    assert_eq!((truth.images, truth.pixels), (3, 3 * 64 * 64));

    assert_eq!(evaluate(Predictor::Gray, &ds, None, 0.38).unwrap().rebalanced_auc, None);
    let gray = evaluate(Predictor::Gray, &ds, Some(&pw), 0.38).unwrap();
    assert!((gray.rebalanced_auc.unwrap() - gray.auc).abs() < 1e-9);
    assert_eq!(gray.mean_chroma, 0.0);
    let pairs = predict_all(Predictor::Gray, &ds, 0.38).unwrap();
    // Pooled AuC weighs each pixel once; with equal-size images that is the
    // pixel-weighted mean of per-image AuCs.
    let per_image: f64 = pairs.iter().map(|(p, g)| auc_cmf(p, g, None).unwrap().auc).sum::<f64>() / 3.0;
    assert!((gray.auc - per_image).abs() < 1e-9, "{} vs {per_image}", gray.auc);
    assert!((gray.auc_image_mean - per_image).abs() < 1e-12);
    let gt_chroma: f64 = pairs.iter().map(|(_, g)| mean_chroma(g)).sum::<f64>() / 3.0;
    assert!((gray.mean_chroma_truth - gt_chroma).abs() < 1e-9);
    assert!(gray.auc > 0.0 && gray.auc < 100.0);
}

#[test]
fn model_evaluation_runs() {
    let c = trained(Variant::ClassRebal);
    let ds = small_dataset(2);
    let r = evaluate(Predictor::Model(&c), &ds, Some(&PriorWeights::uniform(c.bins().unwrap())), 0.38).unwrap();
    assert!(r.auc > 0.0 && r.auc <= 100.0);
    assert!(r.rebalanced_auc.is_some());
}
