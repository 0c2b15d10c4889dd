//! Image records, intermediate-domain synthesis, phantom datasets, unpaired
//! batch streams and the on-disk formats that carry them.

mod io;
mod noise;
mod phantom;
mod stream;

pub use io::*;
pub use noise::*;
pub use phantom::*;
pub use stream::*;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain_chain::DomainId;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{0}")]
    Missing(String),
    #[error("format error in {path}: {msg}")]
    Format { path: String, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One square image in calibrated intensity units (CT-number-like).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub pixels: Array2<f32>,
    pub domain: DomainId,
    pub source_id: String,
}

impl ImageRecord {
    pub fn new(pixels: Array2<f32>, domain: DomainId, source_id: impl Into<String>) -> Result<Self, DataError> {
        let (h, w) = pixels.dim();
        if h != w || h == 0 {
            return Err(DataError::Shape(format!("images must be square and non-empty, got {h}x{w}")));
        }
        if pixels.iter().any(|v| !v.is_finite()) {
            return Err(DataError::Shape("non-finite pixel values".into()));
        }
        Ok(ImageRecord { pixels, domain, source_id: source_id.into() })
    }

    pub fn side(&self) -> usize {
        self.pixels.nrows()
    }

    pub fn with_pixels(&self, pixels: Array2<f32>) -> ImageRecord {
        ImageRecord { pixels, domain: self.domain, source_id: self.source_id.clone() }
    }
}

/// Fixed affine map between calibrated units and the network range
/// `[-1, 1]`: `net = (value - center) / half_width`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntensityWindow {
    pub center: f32,
    pub half_width: f32,
}

impl Default for IntensityWindow {
    fn default() -> Self {
        IntensityWindow { center: 1000.0, half_width: 1000.0 }
    }
}

impl IntensityWindow {
    pub fn to_net(&self, v: f32) -> f32 {
        (v - self.center) / self.half_width
    }

    pub fn from_net(&self, v: f32) -> f32 {
        v * self.half_width + self.center
    }
}

/// Contiguous `crop`×`crop` window at a uniformly drawn offset.
pub fn random_crop<R: Rng>(img: &ImageRecord, crop: usize, rng: &mut R) -> Result<ImageRecord, DataError> {
    let side = img.side();
    if crop == 0 || crop > side {
        return Err(DataError::Shape(format!("crop {crop} does not fit a {side}px image")));
    }
    let y = rng.random_range(0..=side - crop);
    let x = rng.random_range(0..=side - crop);
    let window = img.pixels.slice(ndarray::s![y..y + crop, x..x + crop]).to_owned();
    Ok(img.with_pixels(window))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ramp(side: usize) -> ImageRecord {
        let px = Array2::from_shape_fn((side, side), |(y, x)| (y * side + x) as f32);
        ImageRecord::new(px, DomainId(0), "r").unwrap()
    }

    #[test]
    fn crop_bounds_and_determinism() {
        let img = ramp(512);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let c = random_crop(&img, 256, &mut rng).unwrap();
            assert_eq!(c.pixels.dim(), (256, 256));
            let first = c.pixels[[0, 0]] as usize;
            let (oy, ox) = (first / 512, first % 512);
            assert!(oy <= 256 && ox <= 256);
            // contiguous window
            assert_eq!(c.pixels[[255, 255]] as usize, (oy + 255) * 512 + ox + 255);
        }
        let a = random_crop(&img, 100, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = random_crop(&img, 100, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        let same = random_crop(&img, 512, &mut rng).unwrap();
        assert_eq!(same, img);
        assert!(random_crop(&img, 513, &mut rng).is_err());
    }

    #[test]
    fn window_round_trip() {
        let w = IntensityWindow::default();
        for v in [0.0f32, 1000.0, 1321.2, 2000.0] {
            assert!((w.from_net(w.to_net(v)) - v).abs() < 1e-3);
        }
        assert_eq!(w.to_net(1000.0), 0.0);
    }

    #[test]
    fn records_must_be_square_and_finite() {
        assert!(ImageRecord::new(Array2::zeros((2, 3)), DomainId(0), "a").is_err());
        let mut px = Array2::zeros((2, 2));
        px[[0, 0]] = f32::NAN;
        assert!(ImageRecord::new(px, DomainId(0), "a").is_err());
    }
}
