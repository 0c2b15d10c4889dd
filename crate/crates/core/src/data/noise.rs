use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{DataError, ImageRecord};
use crate::domain_chain::DomainId;

/// Default weight applied to an extracted noise field when building an
/// intermediate-noise image.
pub const INTERMEDIATE_WEIGHT: f32 = 0.5;

/// `clean + w * noise_field`, tagged with `domain`.
pub fn synthesize_intermediate(
    clean: &ImageRecord,
    noise_field: &Array2<f32>,
    w: f32,
    domain: DomainId,
) -> Result<ImageRecord, DataError> {
    if clean.pixels.dim() != noise_field.dim() {
        return Err(DataError::Shape(format!(
            "image {:?} vs noise field {:?}",
            clean.pixels.dim(),
            noise_field.dim()
        )));
    }
    let pixels = &clean.pixels + &(noise_field * w);
    Ok(ImageRecord { pixels, domain, source_id: clean.source_id.clone() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseExtractor {
    /// `noisy - reference` for pixel-aligned pairs.
    Residual,
    /// `noisy - gaussian_blur(noisy)`, then mean-subtracted.
    Highpass,
}

impl NoiseExtractor {
    pub fn as_str(self) -> &'static str {
        match self {
            NoiseExtractor::Residual => "residual",
            NoiseExtractor::Highpass => "highpass",
        }
    }
}

/// Standard deviation (pixels) of the smoothing kernel of the high-pass
/// extractor. The kernel is truncated at 3σ, normalised to unit sum, and
/// applied separably with mirrored borders.
pub const HIGHPASS_SIGMA: f64 = 1.5;

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

fn mirror(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * (n - 1).max(1);
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - m;
    }
    m as usize
}

/// Separable Gaussian blur with mirrored borders.
pub fn gaussian_blur(img: &Array2<f32>, sigma: f64) -> Array2<f32> {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let (h, w) = img.dim();
    let rows = Array2::from_shape_fn((h, w), |(y, x)| {
        k.iter()
            .enumerate()
            .map(|(t, kv)| kv * img[[y, mirror(x as isize + t as isize - r, w)]] as f64)
            .sum::<f64>() as f32
    });
    Array2::from_shape_fn((h, w), |(y, x)| {
        k.iter()
            .enumerate()
            .map(|(t, kv)| kv * rows[[mirror(y as isize + t as isize - r, h), x]] as f64)
            .sum::<f64>() as f32
    })
}

pub fn extract_noise(
    noisy: &ImageRecord,
    method: NoiseExtractor,
    reference: Option<&ImageRecord>,
) -> Result<Array2<f32>, DataError> {
    match method {
        NoiseExtractor::Residual => {
            let reference = reference
                .ok_or_else(|| DataError::Missing("residual noise extraction needs a reference image".into()))?;
            if reference.pixels.dim() != noisy.pixels.dim() {
                return Err(DataError::Shape("reference and noisy images differ in shape".into()));
            }
            Ok(&noisy.pixels - &reference.pixels)
        }
        NoiseExtractor::Highpass => {
            let mut field = &noisy.pixels - &gaussian_blur(&noisy.pixels, HIGHPASS_SIGMA);
            let mean = field.iter().map(|&v| v as f64).sum::<f64>() / field.len() as f64;
            field.mapv_inplace(|v| (v as f64 - mean) as f32);
            Ok(field)
        }
    }
}
