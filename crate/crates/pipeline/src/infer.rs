//! Inference: lightness in, annealed-mean chroma out, recombined with the
//! original full-resolution lightness.

use chromalab_core::colorspace::{lab_to_srgb, recombine, split_channels, srgb_to_lab, ChromaPlane, LabImage, LightnessPlane, RgbImage};
use chromalab_core::dataset::resize_plane;
use chromalab_core::quantize::{export_probability_maps, ColorDistribution, GamutBins, ProbabilityMaps};
use chromalab_nn::loss::softmax_channels;
use chromalab_nn::upsample::bilinear_upsample;
use chromalab_nn::Tensor;

use crate::checkpoint::Checkpoint;
use crate::model::{normalize_lightness, HeadKind, Model, AB_SCALE};
use crate::{Error, Result};

/// A trained model together with the bins its classification head
/// predicts over.
#[derive(Debug)]
pub struct Colorizer {
    model: Model,
    bins: Option<GamutBins>,
}

impl Colorizer {
    pub fn new(model: Model, bins: Option<GamutBins>) -> Result<Self> {
        match (model.head(), &bins) {
            (HeadKind::Classification { q }, Some(b)) if b.len() == q => {}
            (HeadKind::Regression, None) => {}
            (head, _) => {
                return Err(Error::Config(format!(
                    "{} head with {} bins",
                    head.tag(),
                    bins.as_ref().map_or(0, GamutBins::len)
                )))
            }
        }
        Ok(Self { model, bins })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        Self::new(ckpt.model()?, ckpt.bins()?)
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn model_mut(&mut self) -> &mut Model {
        &mut self.model
    }

    pub fn bins(&self) -> Option<&GamutBins> {
        self.bins.as_ref()
    }

    /// Smallest accepted input side: the total downsampling factor.
    pub fn min_input(&self) -> usize {
        self.model.arch().min_input_size()
    }

    fn check_size(&self, width: usize, height: usize) -> Result<()> {
        let min = self.min_input();
        if width < min || height < min {
            return Err(Error::InputTooSmall { width, height, min });
        }
        Ok(())
    }

    /// Resizes lightness to the network input and normalizes it.
    pub fn input_tensor(&self, l: &LightnessPlane) -> Result<Tensor<f32>> {
        self.check_size(l.width(), l.height())?;
        let s = self.model.input_size();
        let data = resize_plane(l.data(), l.width(), l.height(), s, s);
        Ok(Tensor::new(&[1, 1, s, s], data.into_iter().map(normalize_lightness).collect())?)
    }

    /// Raw head output for one lightness plane.
    pub fn head_output(&self, l: &LightnessPlane) -> Result<Tensor<f32>> {
        self.model.infer(&self.input_tensor(l)?)
    }

    /// Predicted distribution at head resolution.
    pub fn distribution(&self, l: &LightnessPlane) -> Result<ColorDistribution> {
        if self.bins.is_none() {
            return Err(Error::Config("regression models do not predict distributions".into()));
        }
        let probs = softmax_channels(&self.head_output(l)?, 1.0)?;
        Ok(tensor_to_distribution(&probs)?)
    }

    /// Chroma at head resolution: the annealed mean of the softmax at
    /// temperature `t` (temperature scaling, softmax, then the mean over bin
    /// centers), or the scaled regression output.
    pub fn head_chroma(&self, l: &LightnessPlane, t: f64) -> Result<ChromaPlane> {
        if !(t > 0.0 && t <= 1.0) {
            return Err(Error::Config(format!("temperature {t} outside (0, 1]")));
        }
        let out = self.head_output(l)?;
        let [_, c, h, w] = out.dims4()?;
        let hw = h * w;
        let (a, b) = match &self.bins {
            Some(bins) => {
                let f = softmax_channels(&out, t)?;
                let mut a = vec![0.0f64; hw];
                let mut b = vec![0.0f64; hw];
                for q in 0..c {
                    let [ca, cb] = bins.center(q);
                    for p in 0..hw {
                        let v = f.data()[q * hw + p] as f64;
                        a[p] += v * ca;
                        b[p] += v * cb;
                    }
                }
                (a.into_iter().map(|v| v as f32).collect(), b.into_iter().map(|v| v as f32).collect())
            }
            None => {
                let d = out.data();
                (d[..hw].iter().map(|v| v * AB_SCALE).collect(), d[hw..].iter().map(|v| v * AB_SCALE).collect())
            }
        };
        Ok(ChromaPlane::new(w, h, a, b)?)
    }

    /// Full-resolution prediction; the lightness plane of the result is
    /// exactly the input's.
    pub fn colorize_lab(&self, lab: &LabImage, t: f64) -> Result<LabImage> {
        let (l, _) = split_channels(lab);
        let small = self.head_chroma(&l, t)?;
        let ab = upsample_chroma(&small, l.width(), l.height())?;
        Ok(recombine(&l, &ab)?)
    }

    pub fn colorize(&self, img: &RgbImage, t: f64) -> Result<RgbImage> {
        Ok(lab_to_srgb(&self.colorize_lab(&srgb_to_lab(img), t)?))
    }

    /// Probability planes of every `stride`-th bin at head resolution.
    pub fn dump_distributions(&self, img: &RgbImage, stride: usize) -> Result<ProbabilityMaps> {
        let (l, _) = split_channels(&srgb_to_lab(img));
        let z = self.distribution(&l)?;
        let bins = self.bins.as_ref().expect("checked by distribution");
        Ok(export_probability_maps(&z, bins, stride)?)
    }
}

/// `[1, Q, h, w]` probabilities to a pixel-major distribution.
pub fn tensor_to_distribution(probs: &Tensor<f32>) -> Result<ColorDistribution> {
    let [n, q, h, w] = probs.dims4()?;
    if n != 1 {
        return Err(Error::Config(format!("expected a single image, got batch {n}")));
    }
    let hw = h * w;
    let mut out = vec![0.0f32; hw * q];
    for k in 0..q {
        for p in 0..hw {
            out[p * q + k] = probs.data()[k * hw + p];
        }
    }
    Ok(ColorDistribution::new(w, h, q, out)?)
}

/// Bilinear lift of a chroma plane to `width × height`.
pub fn upsample_chroma(ab: &ChromaPlane, width: usize, height: usize) -> Result<ChromaPlane> {
    let mut data = ab.a().to_vec();
    data.extend_from_slice(ab.b());
    let t = Tensor::new(&[1, 2, ab.height(), ab.width()], data)?;
    let up = bilinear_upsample(&t, height, width)?.into_data();
    let n = width * height;
    Ok(ChromaPlane::new(width, height, up[..n].to_vec(), up[n..].to_vec())?)
}
