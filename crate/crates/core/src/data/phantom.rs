use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{extract_noise, synthesize_intermediate, DataError, ImageRecord, NoiseExtractor};
use crate::domain_chain::{build_chain, DomainId};
use crate::evaluate::Roi;

/// Desk-scale synthetic corpus: ellipses of constant intensity on a constant
/// background, plus zero-mean Gaussian noise at each domain's level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomConfig {
    pub n_images: usize,
    pub side: usize,
    /// One standard deviation per domain, strictly decreasing along the chain.
    pub noise_sigmas: Vec<f64>,
    pub seed: u64,
    pub background: f64,
    pub intensity_range: (f64, f64),
    /// Minimum gap between any two intensities of one image (background
    /// included).
    pub min_contrast: f64,
}

impl PhantomConfig {
    pub fn new(n_images: usize, side: usize, noise_sigmas: Vec<f64>, seed: u64) -> Self {
        PhantomConfig {
            n_images,
            side,
            noise_sigmas,
            seed,
            background: 1000.0,
            intensity_range: (1060.0, 1400.0),
            min_contrast: 60.0,
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::Config(m));
        if self.noise_sigmas.len() < 2 {
            return bad("need at least two noise levels".into());
        }
        if self.noise_sigmas.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return bad("noise levels must be finite and non-negative".into());
        }
        if self.noise_sigmas.windows(2).any(|w| w[1] >= w[0]) {
            return bad(format!("noise levels must strictly decrease along the chain, got {:?}", self.noise_sigmas));
        }
        if self.side < 32 {
            return bad(format!("phantom side must be at least 32, got {}", self.side));
        }
        let (lo, hi) = self.intensity_range;
        if !(lo < hi && lo >= 0.0 && hi <= 65535.0) {
            return bad("intensity range must be increasing and within 0..=65535".into());
        }
        if self.distinct_levels() < 3 {
            return bad(format!(
                "intensity range {lo}..{hi} cannot hold 3 levels {} apart and away from the background",
                self.min_contrast
            ));
        }
        Ok(())
    }

    /// Greedy count of integer intensities in the range that are pairwise
    /// and background-separated by `min_contrast`.
    fn distinct_levels(&self) -> usize {
        let (lo, hi) = self.intensity_range;
        let mut last: Option<f64> = None;
        let mut n = 0;
        let mut v = lo.ceil();
        while v <= hi {
            if (v - self.background).abs() >= self.min_contrast && last.is_none_or(|l| v - l >= self.min_contrast) {
                last = Some(v);
                n += 1;
            }
            v += 1.0;
        }
        n
    }

    /// Side of the reserved top-left background square.
    pub fn background_block(&self) -> usize {
        self.side / 4
    }
}

/// Ground truth of one ROI: the ellipse (or background) intensity and the
/// domain's noise level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoiTruth {
    pub image_id: String,
    pub roi_id: u32,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub domain_names: Vec<String>,
    pub records: Vec<ImageRecord>,
    /// Extractor used to build each record, parallel to `records`.
    pub extractors: Vec<Option<NoiseExtractor>>,
    pub rois: Vec<Roi>,
    pub truths: Vec<RoiTruth>,
}

impl Dataset {
    pub fn domain_indices(&self, d: DomainId) -> Vec<usize> {
        self.records.iter().enumerate().filter(|(_, r)| r.domain == d).map(|(i, _)| i).collect()
    }

    pub fn rois_for(&self, image_id: &str) -> Vec<Roi> {
        self.rois.iter().filter(|r| r.image_id == image_id).cloned().collect()
    }

    pub fn truth(&self, image_id: &str, roi_id: u32) -> Option<&RoiTruth> {
        self.truths.iter().find(|t| t.image_id == image_id && t.roi_id == roi_id)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

const ROI_INSET: usize = 1;

#[derive(Debug, Clone, Copy)]
struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    value: f64,
}

impl Ellipse {
    fn contains(&self, x: usize, y: usize) -> bool {
        let dx = (x as f64 + 0.5 - self.cx) / self.a;
        let dy = (y as f64 + 0.5 - self.cy) / self.b;
        dx * dx + dy * dy <= 1.0
    }

    /// Pixel-aligned rectangle inside the inscribed rectangle of the ellipse,
    /// inset by `ROI_INSET` pixels so it stays clear of the boundary.
    fn interior_rect(&self) -> (usize, usize, usize, usize) {
        let hx = self.a / std::f64::consts::SQRT_2;
        let hy = self.b / std::f64::consts::SQRT_2;
        let x0 = (self.cx - hx).ceil() as usize + ROI_INSET;
        let x1 = ((self.cx + hx).floor() as usize).saturating_sub(ROI_INSET);
        let y0 = (self.cy - hy).ceil() as usize + ROI_INSET;
        let y1 = ((self.cy + hy).floor() as usize).saturating_sub(ROI_INSET);
        (x0, y0, x1.saturating_sub(x0), y1.saturating_sub(y0))
    }

    /// Bounding box with a one-pixel margin, half-open.
    fn bounds(&self) -> (f64, f64, f64, f64) {
        (self.cx - self.a - 1.0, self.cy - self.b - 1.0, self.cx + self.a + 1.0, self.cy + self.b + 1.0)
    }
}

fn overlaps(a: (f64, f64, f64, f64), b: (f64, f64, f64, f64)) -> bool {
    a.0 < b.2 && b.0 < a.2 && a.1 < b.3 && b.1 < a.3
}

fn place_ellipses(cfg: &PhantomConfig, rng: &mut ChaCha8Rng) -> Vec<Ellipse> {
    let side = cfg.side as f64;
    let block = cfg.background_block() as f64;
    let reserved = (0.0, 0.0, block, block);
    let (amin, amax) = ((side / 10.0).max(3.6), (side / 5.0).max(5.0));
    let (lo, hi) = cfg.intensity_range;
    loop {
        let want = rng.random_range(3..=8usize);
        let mut out: Vec<Ellipse> = Vec::new();
        let mut attempts = 0;
        while out.len() < want && attempts < 400 {
            attempts += 1;
            let a = rng.random_range(amin..=amax);
            let b = rng.random_range(amin..=amax);
            let cx = rng.random_range(a + 1.0..=side - a - 1.0);
            let cy = rng.random_range(b + 1.0..=side - b - 1.0);
            let e = Ellipse { cx, cy, a, b, value: 0.0 };
            if overlaps(e.bounds(), reserved) || out.iter().any(|o| overlaps(o.bounds(), e.bounds())) {
                continue;
            }
            let (_, _, w, h) = e.interior_rect();
            if w < 2 || h < 2 {
                continue;
            }
            let value = (0..200).map(|_| rng.random_range(lo..=hi).round()).find(|&v| {
                (v - cfg.background).abs() >= cfg.min_contrast
                    && out.iter().all(|o| (o.value - v).abs() >= cfg.min_contrast)
            });
            // the drawn levels may leave no gap wide enough for another one
            let Some(value) = value else { break };
            out.push(Ellipse { value, ..e });
        }
        if out.len() >= 3 {
            return out;
        }
    }
}

fn gaussian_field(side: usize, sigma: f64, rng: &mut ChaCha8Rng) -> Array2<f32> {
    if sigma == 0.0 {
        return Array2::zeros((side, side));
    }
    let normal = Normal::new(0.0, sigma).expect("valid sigma");
    Array2::from_shape_simple_fn((side, side), || normal.sample(rng) as f32)
}

fn quantise(px: &mut Array2<f32>) {
    px.mapv_inplace(|v| v.round().clamp(0.0, 65535.0));
}

/// Deterministic under `cfg.seed`: each (domain, image) pair draws from its
/// own ChaCha stream, so adding images never perturbs existing ones.
///
/// The extreme domains get Gaussian noise directly. Interior domains mimic
/// the noise-transplant construction: a noise pattern at the noisiest level
/// is recovered from a noisy realisation by residual extraction and added to
/// the clean scene with weight `sigma_d / sigma_0`.
pub fn make_phantom_dataset(cfg: &PhantomConfig) -> Result<Dataset, DataError> {
    cfg.validate()?;
    let n = cfg.noise_sigmas.len();
    let chain = build_chain(n, None).map_err(|e| DataError::Config(e.to_string()))?;
    let mut ds = Dataset { domain_names: chain.names().to_vec(), ..Default::default() };
    let block = cfg.background_block();
    for d in 0..n {
        let sigma = cfg.noise_sigmas[d];
        for i in 0..cfg.n_images {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(((d as u64) << 32) | i as u64);
            let ellipses = place_ellipses(cfg, &mut rng);
            let clean = Array2::from_shape_fn((cfg.side, cfg.side), |(y, x)| {
                ellipses
                    .iter()
                    .find(|e| e.contains(x, y))
                    .map_or(cfg.background, |e| e.value) as f32
            });
            let id = format!("{}_{i:04}", chain.names()[d]);
            let clean = ImageRecord::new(clean, DomainId(d), id.clone())?;
            let interior = d > 0 && d + 1 < n && cfg.noise_sigmas[0] > 0.0;
            let (mut rec, extractor) = if interior {
                let field = gaussian_field(cfg.side, cfg.noise_sigmas[0], &mut rng);
                let noisy = clean.with_pixels(&clean.pixels + &field);
                let pattern = extract_noise(&noisy, NoiseExtractor::Residual, Some(&clean))?;
                let w = (sigma / cfg.noise_sigmas[0]) as f32;
                (synthesize_intermediate(&clean, &pattern, w, DomainId(d))?, Some(NoiseExtractor::Residual))
            } else {
                let field = gaussian_field(cfg.side, sigma, &mut rng);
                (clean.with_pixels(&clean.pixels + &field), None)
            };
            quantise(&mut rec.pixels);

            ds.rois.push(Roi::new(&id, 0, 1, 1, block - 2, block - 2));
            ds.truths.push(RoiTruth { image_id: id.clone(), roi_id: 0, mean: cfg.background, sd: sigma });
            for (k, e) in ellipses.iter().enumerate() {
                let (x, y, w, h) = e.interior_rect();
                let roi_id = k as u32 + 1;
                ds.rois.push(Roi::new(&id, roi_id, x, y, w, h));
                ds.truths.push(RoiTruth { image_id: id.clone(), roi_id, mean: e.value, sd: sigma });
            }
            ds.records.push(rec);
            ds.extractors.push(extractor);
        }
    }
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluate::roi_stats;

    #[test]
    fn empty_and_invalid_configs() {
        let ds = make_phantom_dataset(&PhantomConfig::new(0, 32, vec![50.0, 25.0, 0.0], 1)).unwrap();
        assert!(ds.is_empty());
        assert!(make_phantom_dataset(&PhantomConfig::new(1, 32, vec![25.0, 50.0, 0.0], 1)).is_err());
        assert!(make_phantom_dataset(&PhantomConfig::new(1, 32, vec![25.0, 25.0], 1)).is_err());
        assert!(make_phantom_dataset(&PhantomConfig::new(1, 8, vec![25.0, 0.0], 1)).is_err());
    }

    #[test]
    fn same_seed_bit_identical() {
        let cfg = PhantomConfig::new(3, 32, vec![50.0, 25.0, 0.0], 7);
        assert_eq!(make_phantom_dataset(&cfg).unwrap(), make_phantom_dataset(&cfg).unwrap());
        let other = make_phantom_dataset(&PhantomConfig { seed: 8, ..cfg.clone() }).unwrap();
        assert_ne!(other.records, make_phantom_dataset(&cfg).unwrap().records);
    }

    #[test]
    fn scenes_and_rois_are_consistent() {
        let cfg = PhantomConfig::new(6, 48, vec![50.0, 25.0, 0.0], 3);
        let ds = make_phantom_dataset(&cfg).unwrap();
        assert_eq!(ds.len(), 18);
        for rec in &ds.records {
            let rois = ds.rois_for(&rec.source_id);
            assert!((4..=9).contains(&rois.len()), "3-8 ellipses plus background");
            for roi in &rois {
                assert!(roi.area() >= 4);
                assert!(roi.x + roi.width <= rec.side() && roi.y + roi.height <= rec.side());
            }
            // clean domain: every ROI is exactly its ellipse intensity
            if rec.domain == DomainId(2) {
                for (roi, s) in rois.iter().zip(roi_stats(rec, &rois).unwrap()) {
                    let t = ds.truth(&rec.source_id, roi.roi_id).unwrap();
                    assert_eq!(s.mean, t.mean);
                    assert_eq!(s.sd, 0.0);
                }
            }
        }
        assert_eq!(ds.extractors.iter().filter(|e| e.is_some()).count(), 6);
    }

    /// Direct statistics on large background ROIs recover each domain's
    /// noise level.
    #[test]
    fn background_sd_tracks_sigma() {
        let cfg = PhantomConfig::new(4, 160, vec![50.0, 25.0, 0.0], 11);
        let ds = make_phantom_dataset(&cfg).unwrap();
        for (d, sigma) in cfg.noise_sigmas.iter().enumerate() {
            for idx in ds.domain_indices(DomainId(d)) {
                let rec = &ds.records[idx];
                let bg: Vec<Roi> = ds.rois_for(&rec.source_id).into_iter().filter(|r| r.roi_id == 0).collect();
                assert!(bg[0].area() >= 32 * 32);
                let s = roi_stats(rec, &bg).unwrap()[0];
                if *sigma == 0.0 {
                    assert_eq!(s.sd, 0.0);
                } else {
                    assert!((s.sd - sigma).abs() < 0.1 * sigma, "domain {d}: {} vs {sigma}", s.sd);
                }
                assert!((s.mean - cfg.background).abs() < 0.2 * sigma.max(1.0));
            }
        }
    }
}
