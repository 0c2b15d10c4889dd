use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var};
use ndarray::Array2;

use super::{derive_seed, TrainConfig, TrainError};
use crate::data::{DataError, ImageRecord, IntensityWindow};
use crate::domain_chain::{build_chain, discriminator_assignment, DiscriminatorPlan, DomainChain, ExperimentMode, GeneratorSlot};
use crate::losses::Nets;
use crate::networks::{
    make_discriminator, make_generator, Discriminator, DiscriminatorSpec, Generator, GeneratorSpec, ImageMap,
    Parameterized,
};

/// The generator and discriminator sets of one experiment.
pub struct Model {
    pub chain: DomainChain,
    pub mode: ExperimentMode,
    pub window: IntensityWindow,
    pub dtype: DType,
    pub generators: BTreeMap<GeneratorSlot, Generator>,
    pub plan: DiscriminatorPlan,
    pub discriminators: Vec<Discriminator>,
}

impl Model {
    /// Every adjacent-pair generator in both directions, plus the mode's
    /// discriminator plan. Initial weights depend only on the seed and the
    /// slot, never on the mode.
    pub fn new(
        chain: DomainChain,
        mode: ExperimentMode,
        gen_spec: &GeneratorSpec,
        disc_spec: &DiscriminatorSpec,
        dtype: DType,
        window: IntensityWindow,
        seed: u64,
    ) -> Result<Self, TrainError> {
        let plan = discriminator_assignment(&chain, mode)?;
        let mut generators = BTreeMap::new();
        for slot in chain.generator_slots() {
            let s = derive_seed(seed, &format!("generator {}>{}", slot.from.0, slot.to.0));
            generators.insert(slot, make_generator(gen_spec, dtype, s)?);
        }
        let discriminators = (0..plan.len())
            .map(|i| make_discriminator(disc_spec, dtype, derive_seed(seed, &format!("discriminator {i}"))))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Model { chain, mode, window, dtype, generators, plan, discriminators })
    }

    pub fn from_config(cfg: &TrainConfig, names: Option<Vec<String>>) -> Result<Self, TrainError> {
        cfg.validate()?;
        let chain = build_chain(cfg.n_domains, names)?;
        Model::new(
            chain,
            cfg.mode,
            &cfg.generator_spec(),
            &cfg.discriminator,
            cfg.precision.dtype(),
            cfg.window,
            cfg.seed,
        )
    }

    pub fn nets(&self) -> Nets<'_> {
        Nets {
            generators: self.generators.iter().map(|(s, g)| (*s, g as &dyn ImageMap)).collect(),
            discriminators: self.discriminators.iter().map(|d| d as &dyn ImageMap).collect(),
            plan: &self.plan,
        }
    }

    pub fn generator_label(&self, slot: GeneratorSlot) -> String {
        format!("G.{}>{}", self.chain.name(slot.from), self.chain.name(slot.to))
    }

    /// Named generator parameters, `G.<from>><to>.<layer>.<weight|bias>`.
    pub fn generator_params(&self) -> Vec<(String, Var)> {
        self.generators
            .iter()
            .flat_map(|(slot, g)| {
                let label = self.generator_label(*slot);
                g.params().into_iter().map(move |(n, v)| (format!("{label}.{n}"), v))
            })
            .collect()
    }

    /// Named discriminator parameters, `D.<slot>.<layer>.<weight|bias>`.
    pub fn discriminator_params(&self) -> Vec<(String, Var)> {
        self.discriminators
            .iter()
            .enumerate()
            .flat_map(|(i, d)| d.params().into_iter().map(move |(n, v)| (format!("D.{i}.{n}"), v)))
            .collect()
    }

    pub fn params(&self) -> Vec<(String, Var)> {
        let mut p = self.generator_params();
        p.extend(self.discriminator_params());
        p
    }

    pub fn generator(&self, slot: GeneratorSlot) -> Option<&Generator> {
        self.generators.get(&slot)
    }
}

/// Stacks records into an `(n, 1, side, side)` batch in network units.
pub fn batch_tensor(records: &[ImageRecord], window: &IntensityWindow, dtype: DType) -> Result<Tensor, TrainError> {
    let Some(first) = records.first() else {
        return Err(TrainError::Data(DataError::Missing("empty batch".into())));
    };
    let side = first.side();
    let mut data = Vec::with_capacity(records.len() * side * side);
    for r in records {
        if r.side() != side {
            return Err(TrainError::Data(DataError::Shape("batch images differ in size".into())));
        }
        data.extend(r.pixels.iter().map(|&v| window.to_net(v) as f64));
    }
    Ok(Tensor::from_vec(data, (records.len(), 1, side, side), &Device::Cpu)?.to_dtype(dtype)?)
}

/// Inverse of `batch_tensor` for image `index` of the batch.
pub fn tensor_image(t: &Tensor, index: usize, window: &IntensityWindow) -> Result<Array2<f32>, TrainError> {
    let (_, c, h, w) = t.dims4()?;
    if c != 1 {
        return Err(TrainError::Data(DataError::Shape(format!("expected one channel, got {c}"))));
    }
    let v: Vec<f64> = t.get(index)?.flatten_all()?.to_dtype(DType::F64)?.to_vec1()?;
    Ok(Array2::from_shape_vec((h, w), v.into_iter().map(|x| window.from_net(x as f32)).collect())
        .expect("shape from tensor dims"))
}

/// Parameter values copied out of a model, for comparisons.
pub fn snapshot(params: &[(String, Var)]) -> Result<Vec<(String, Vec<f64>)>, TrainError> {
    params
        .iter()
        .map(|(n, v)| Ok((n.clone(), v.as_tensor().flatten_all()?.to_dtype(DType::F64)?.to_vec1()?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain_chain::DomainId;
    use crate::networks::count_params;

    fn tiny(mode: ExperimentMode, n: usize) -> Model {
        let cfg = TrainConfig {
            mode,
            n_domains: n,
            crop: 16,
            generator: Some(GeneratorSpec { in_channels: 1, base_width: 4, n_resblocks: 1, n_down: 1, crop_size: 16 }),
            discriminator: DiscriminatorSpec { in_channels: 1, n_layers: 2, base_width: 4 },
            ..Default::default()
        };
        Model::from_config(&cfg, None).unwrap()
    }

    #[test]
    fn topology_per_mode() {
        let m = tiny(ExperimentMode::Ccadn, 2);
        assert_eq!((m.generators.len(), m.discriminators.len()), (2, 2));
        let m = tiny(ExperimentMode::Mccan, 3);
        assert_eq!((m.generators.len(), m.discriminators.len()), (4, 3));
        let m = tiny(ExperimentMode::MccanNoGlobal, 3);
        assert_eq!((m.generators.len(), m.discriminators.len()), (4, 4));
        assert_eq!(m.plan.counts()[&DomainId(1)], 2);
    }

    #[test]
    fn parameter_names_and_counts() {
        let m = tiny(ExperimentMode::Mccan, 3);
        let g = m.generator_params();
        assert!(g.iter().any(|(n, _)| n == "G.X>Z.ingress.weight"));
        let total: usize = g.iter().map(|(_, v)| v.elem_count()).sum();
        let one = count_params(m.generators.values().next().unwrap()) as usize;
        assert_eq!(total, 4 * one);
        assert!(m.discriminator_params().iter().any(|(n, _)| n == "D.2.head.bias"));
    }

    #[test]
    fn init_is_mode_independent() {
        let a = tiny(ExperimentMode::Ccadn, 2);
        let b = tiny(ExperimentMode::Mccan, 2);
        assert_eq!(snapshot(&a.params()).unwrap(), snapshot(&b.params()).unwrap());
    }

    #[test]
    fn batch_round_trip() {
        let w = IntensityWindow::default();
        let px = Array2::from_shape_fn((4, 4), |(y, x)| 900.0 + (y * 4 + x) as f32);
        let r = ImageRecord::new(px.clone(), DomainId(0), "a").unwrap();
        let t = batch_tensor(&[r.clone(), r], &w, DType::F64).unwrap();
        assert_eq!(t.dims(), &[2, 1, 4, 4]);
        let back = tensor_image(&t, 1, &w).unwrap();
        for (a, b) in back.iter().zip(px.iter()) {
            assert!((a - b).abs() < 1e-3);
        }
    }
}
