use std::fmt::Write as _;
use std::path::Path;

use candle_core::DType;

use super::{roi_stats, EvalError, Roi};
use crate::data::{write_image, ImageRecord, IntensityWindow};
use crate::domain_chain::{Cycle, DomainChain, DomainId};
use crate::losses::Nets;
use crate::training::{batch_tensor, tensor_image, Model};

/// The image after each generator along `steps`, input first.
pub fn apply_steps(
    nets: &Nets,
    window: &IntensityWindow,
    dtype: DType,
    image: &ImageRecord,
    steps: &[DomainId],
) -> Result<Vec<ImageRecord>, EvalError> {
    if steps.first() != Some(&image.domain) {
        return Err(EvalError::Shape(format!("path starts at domain {:?}, image is in {:?}", steps.first(), image.domain)));
    }
    let x = batch_tensor(std::slice::from_ref(image), window, dtype)?;
    let trace = nets.trace(steps, &x)?;
    trace
        .iter()
        .zip(steps)
        .enumerate()
        .map(|(i, (t, d))| {
            if i == 0 {
                return Ok(image.clone());
            }
            Ok(ImageRecord { pixels: tensor_image(t, 0, window)?, domain: *d, source_id: image.source_id.clone() })
        })
        .collect()
}

/// Noisy-to-clean generators applied in chain order.
pub fn denoise_with(
    nets: &Nets,
    chain: &DomainChain,
    window: &IntensityWindow,
    dtype: DType,
    image: &ImageRecord,
) -> Result<ImageRecord, EvalError> {
    if image.domain != chain.head() {
        return Err(EvalError::Shape(format!(
            "denoising starts at the noisiest domain {}, image is in {}",
            chain.name(chain.head()),
            chain.names().get(image.domain.0).map_or("?", |s| s.as_str())
        )));
    }
    let path = chain.inference_path();
    Ok(apply_steps(nets, window, dtype, image, &path.steps)?.pop().expect("non-empty trace"))
}

pub fn denoise(image: &ImageRecord, model: &Model) -> Result<ImageRecord, EvalError> {
    denoise_with(&model.nets(), &model.chain, &model.window, model.dtype, image)
}

#[derive(Debug, Clone)]
pub struct TraceImage {
    pub record: ImageRecord,
    /// Population SD inside the background ROI, when one is given.
    pub background_sd: Option<f64>,
}

/// The input and the image after every step of `cycle`.
pub fn cycle_trace(
    image: &ImageRecord,
    model: &Model,
    cycle: &Cycle,
    background: Option<&Roi>,
) -> Result<Vec<TraceImage>, EvalError> {
    if cycle.source != image.domain {
        return Err(EvalError::Shape(format!(
            "cycle starts at {}, image is in {}",
            model.chain.name(cycle.source),
            model.chain.names().get(image.domain.0).map_or("?", |s| s.as_str())
        )));
    }
    let images = apply_steps(&model.nets(), &model.window, model.dtype, image, &cycle.steps)?;
    images
        .into_iter()
        .map(|record| {
            let background_sd = match background {
                Some(r) => Some(roi_stats(&record, std::slice::from_ref(r))?[0].sd),
                None => None,
            };
            Ok(TraceImage { record, background_sd })
        })
        .collect()
}

pub const TRACE_INDEX: &str = "index.tsv";

/// One 16-bit PNG per trace image plus a tab-separated index
/// `(position, domain, file, background_sd)`.
pub fn write_trace_strip(trace: &[TraceImage], chain: &DomainChain, dir: &Path) -> Result<(), EvalError> {
    std::fs::create_dir_all(dir).map_err(crate::data::DataError::from)?;
    let mut index = String::from("position\tdomain\tfile\tbackground_sd\n");
    for (i, t) in trace.iter().enumerate() {
        let name = chain.name(t.record.domain);
        let file = format!("{:02}_{}_{}.png", i, name, t.record.source_id);
        write_image(&dir.join(&file), &t.record.pixels)?;
        let sd = t.background_sd.map_or(String::new(), |v| format!("{v:.4}"));
        let _ = writeln!(index, "{i}\t{name}\t{file}\t{sd}");
    }
    std::fs::write(dir.join(TRACE_INDEX), index).map_err(crate::data::DataError::from)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use std::cell::Cell;
    use std::collections::BTreeMap;

    use candle_core::{Result, Tensor};
    use ndarray::Array2;

    use super::*;
    use crate::domain_chain::{build_chain, discriminator_assignment, CycleKind, ExperimentMode};
    use crate::networks::{DiscriminatorSpec, GeneratorSpec, ImageMap};
    use crate::training::TrainConfig;

    fn counted(chain: &DomainChain, mode: ExperimentMode, img: &ImageRecord) -> (usize, ImageRecord) {
        let calls = Cell::new(0usize);
        let id = |x: &Tensor| -> Result<Tensor> {
            calls.set(calls.get() + 1);
            Ok(x.clone())
        };
        let plan = discriminator_assignment(chain, mode).unwrap();
        let generators: BTreeMap<_, &dyn ImageMap> = chain.generator_slots().into_iter().map(|s| (s, &id as &dyn ImageMap)).collect();
        let nets = Nets { generators, discriminators: vec![], plan: &plan };
        let out = denoise_with(&nets, chain, &IntensityWindow::default(), DType::F64, img).unwrap();
        (calls.get(), out)
    }

    fn noisy() -> ImageRecord {
        ImageRecord::new(Array2::from_shape_fn((8, 8), |(y, x)| 950.0 + (y * 8 + x) as f32), DomainId(0), "n").unwrap()
    }

    #[test]
    fn generator_applications_per_chain() {
        let img = noisy();
        let (n, out) = counted(&build_chain(3, None).unwrap(), ExperimentMode::Mccan, &img);
        assert_eq!(n, 2);
        assert_eq!(out.domain, DomainId(2));
        for (a, b) in out.pixels.iter().zip(img.pixels.iter()) {
            assert!((a - b).abs() < 1e-3);
        }
        let (n, _) = counted(&build_chain(2, None).unwrap(), ExperimentMode::Ccadn, &img);
        assert_eq!(n, 1);
    }

    fn tiny_model() -> Model {
        let cfg = TrainConfig {
            crop: 8,
            generator: Some(GeneratorSpec { in_channels: 1, base_width: 2, n_resblocks: 1, n_down: 1, crop_size: 8 }),
            discriminator: DiscriminatorSpec { in_channels: 1, n_layers: 1, base_width: 2 },
            precision: crate::training::Precision::F64,
            ..Default::default()
        };
        Model::from_config(&cfg, None).unwrap()
    }

    #[test]
    fn denoise_checks_domain_and_matches_trace() {
        let m = tiny_model();
        let img = noisy();
        let mut wrong = img.clone();
        wrong.domain = DomainId(1);
        assert!(denoise(&wrong, &m).is_err());

        let out = denoise(&img, &m).unwrap();
        assert_eq!(out.pixels.dim(), (8, 8));
        let global = m.chain.parse_cycle("X→Z→Y→Z→X").unwrap();
        assert_eq!(global.kind, CycleKind::Global);
        let bg = Roi::new("n", 0, 0, 0, 4, 4);
        let trace = cycle_trace(&img, &m, &global, Some(&bg)).unwrap();
        assert_eq!(trace.len(), 5);
        assert_eq!(trace[2].record.pixels, out.pixels);
        assert!(trace.iter().all(|t| t.background_sd.is_some()));
        let local = m.chain.parse_cycle("Z→Y→Z").unwrap();
        assert!(cycle_trace(&img, &m, &local, None).is_err());

        let dir = tempfile::tempdir().unwrap();
        write_trace_strip(&trace, &m.chain, dir.path()).unwrap();
        let index = std::fs::read_to_string(dir.path().join(TRACE_INDEX)).unwrap();
        assert_eq!(index.lines().count(), 6);
        assert!(dir.path().join("02_Y_n.png").exists());
    }
}
