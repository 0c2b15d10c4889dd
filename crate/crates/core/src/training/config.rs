use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::data::IntensityWindow;
use crate::domain_chain::ExperimentMode;
use crate::losses::{AdversarialForm, LossWeights};
use crate::networks::{DiscriminatorSpec, GeneratorSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl Precision {
    pub fn dtype(self) -> candle_core::DType {
        match self {
            Precision::F32 => candle_core::DType::F32,
            Precision::F64 => candle_core::DType::F64,
        }
    }
}

/// Everything that determines a run. Stored verbatim in every checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: ExperimentMode,
    pub n_domains: usize,
    pub weights: LossWeights,
    pub adv_form: AdversarialForm,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epochs: usize,
    /// Fraction of the epochs run at constant step size before the linear
    /// decay to zero.
    pub decay_start: f64,
    pub batch_size: usize,
    pub crop: usize,
    pub buffer_capacity: usize,
    pub seed: u64,
    /// Write a checkpoint every this many steps; 0 writes only the final one.
    pub checkpoint_every: u64,
    /// Defaults to the largest per-domain batch count.
    pub steps_per_epoch: Option<usize>,
    /// Stop after this many steps even if epochs remain.
    pub max_steps: Option<u64>,
    /// Defaults to the mode's standard generator.
    pub generator: Option<GeneratorSpec>,
    pub discriminator: DiscriminatorSpec,
    pub precision: Precision,
    pub window: IntensityWindow,
    pub nonfinite_limit: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: ExperimentMode::Mccan,
            n_domains: 3,
            weights: LossWeights::default(),
            adv_form: AdversarialForm::default(),
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            epochs: 50,
            decay_start: 0.5,
            batch_size: 1,
            crop: 256,
            buffer_capacity: 50,
            seed: 0,
            checkpoint_every: 0,
            steps_per_epoch: None,
            max_steps: None,
            generator: None,
            discriminator: DiscriminatorSpec::default(),
            precision: Precision::F32,
            window: IntensityWindow::default(),
            nonfinite_limit: 10,
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self, TrainError> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| TrainError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn generator_spec(&self) -> GeneratorSpec {
        self.generator.unwrap_or_else(|| GeneratorSpec::for_mode(self.mode))
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.n_domains < 2 {
            return bad("the chain needs at least two domains".into());
        }
        if self.mode == ExperimentMode::Ccadn && self.n_domains != 2 {
            return bad(format!("ccadn runs on 2 domains, config has {}", self.n_domains));
        }
        if !(self.lr > 0.0 && (0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return bad("need lr > 0 and moment coefficients in [0, 1)".into());
        }
        if !(0.0..=1.0).contains(&self.decay_start) {
            return bad("decay_start is a fraction in [0, 1]".into());
        }
        if self.nonfinite_limit == 0 {
            return bad("nonfinite_limit must be at least 1".into());
        }
        self.weights.validate().map_err(TrainError::Config)?;
        let g = self.generator_spec();
        g.validate()?;
        self.discriminator.validate()?;
        if self.crop == 0 || self.crop % g.side_multiple() != 0 {
            return bad(format!("crop {} must be a positive multiple of {}", self.crop, g.side_multiple()));
        }
        if self.discriminator.output_side(self.crop) == 0 {
            return bad(format!("crop {} vanishes in a {}-layer discriminator", self.crop, self.discriminator.n_layers));
        }
        Ok(())
    }

    /// Step-size multiplier at `step` (0-based) of `total` steps.
    pub fn lr_factor(&self, step: u64, total: u64) -> f64 {
        let start = (self.decay_start * total as f64).floor() as u64;
        if step < start || total <= start {
            return 1.0;
        }
        1.0 - (step - start) as f64 / (total - start) as f64
    }

    /// One line summarising the resolved run.
    pub fn echo(&self) -> String {
        serde_json::to_string(self).expect("config serialises")
    }
}
