//! Architecture descriptions and their analytic parameter/FLOP budgets.
//!
//! Everything here is plain arithmetic over a declared layer plan, so it is
//! usable without instantiating any tensors.

use serde::{Deserialize, Serialize};

use super::NetworkError;
use crate::domain_chain::ExperimentMode;

/// Residual translation generator: 7×7 ingress, `n_down` stride-2
/// downsamplings, `n_resblocks` residual blocks at the bottleneck, mirrored
/// upsampling, 7×7 egress.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub in_channels: usize,
    pub base_width: usize,
    pub n_resblocks: usize,
    pub n_down: usize,
    pub crop_size: usize,
}

impl GeneratorSpec {
    /// Two-domain baseline: one generator spans the whole noise range.
    pub fn ccadn() -> Self {
        GeneratorSpec { in_channels: 1, base_width: 64, n_resblocks: 9, n_down: 2, crop_size: 256 }
    }

    /// Adjacent-domain generator of the multi-cycle model.
    pub fn mccan() -> Self {
        GeneratorSpec { n_resblocks: 4, ..Self::ccadn() }
    }

    pub fn for_mode(mode: ExperimentMode) -> Self {
        match mode {
            ExperimentMode::Ccadn => Self::ccadn(),
            _ => Self::mccan(),
        }
    }

    pub fn bottleneck_width(&self) -> usize {
        self.base_width << self.n_down
    }

    pub fn validate(&self) -> Result<(), NetworkError> {
        let bad = |m: &str| Err(NetworkError::InvalidSpec(m.to_string()));
        if self.n_resblocks == 0 {
            return bad("generator needs at least one residual block");
        }
        if self.in_channels == 0 || self.base_width == 0 {
            return bad("channel counts must be positive");
        }
        if self.n_down > 6 {
            return bad("at most 6 downsampling stages");
        }
        Ok(())
    }

    /// Spatial sides must be divisible by this for shape preservation.
    pub fn side_multiple(&self) -> usize {
        1 << self.n_down
    }

    pub fn layer_plan(&self) -> Vec<ConvLayer> {
        let mut plan = Vec::new();
        let w = self.base_width;
        plan.push(ConvLayer::new("ingress", 7, self.in_channels, w, Resample::Same));
        let mut c = w;
        for i in 0..self.n_down {
            plan.push(ConvLayer::new(&format!("down{i}"), 3, c, c * 2, Resample::Down));
            c *= 2;
        }
        for b in 0..self.n_resblocks {
            plan.push(ConvLayer::new(&format!("res{b}.conv0"), 3, c, c, Resample::Same));
            plan.push(ConvLayer::new(&format!("res{b}.conv1"), 3, c, c, Resample::Same));
        }
        for i in 0..self.n_down {
            plan.push(ConvLayer::new(&format!("up{i}"), 3, c, c / 2, Resample::Up));
            c /= 2;
        }
        plan.push(ConvLayer::new("egress", 7, c, self.in_channels, Resample::Same));
        plan
    }
}

/// Patch classifier: `n_layers` 4×4 stride-2 convolutions (widths doubling
/// from `base_width`, capped at 8×) followed by a 3×3 one-channel head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscriminatorSpec {
    pub in_channels: usize,
    pub n_layers: usize,
    pub base_width: usize,
}

impl Default for DiscriminatorSpec {
    fn default() -> Self {
        DiscriminatorSpec { in_channels: 1, n_layers: 4, base_width: 64 }
    }
}

impl DiscriminatorSpec {
    pub fn validate(&self) -> Result<(), NetworkError> {
        if self.n_layers == 0 {
            return Err(NetworkError::InvalidSpec("discriminator needs at least one layer".into()));
        }
        if self.in_channels == 0 || self.base_width == 0 {
            return Err(NetworkError::InvalidSpec("channel counts must be positive".into()));
        }
        Ok(())
    }

    pub fn width(&self, layer: usize) -> usize {
        self.base_width << layer.min(3)
    }

    pub fn layer_plan(&self) -> Vec<ConvLayer> {
        let mut plan = Vec::new();
        let mut c = self.in_channels;
        for i in 0..self.n_layers {
            let out = self.width(i);
            plan.push(ConvLayer::new(&format!("conv{i}"), 4, c, out, Resample::Down));
            c = out;
        }
        plan.push(ConvLayer::new("head", 3, c, 1, Resample::Same));
        plan
    }

    /// Side of the score map for a square input.
    pub fn output_side(&self, input_side: usize) -> usize {
        (0..self.n_layers).fold(input_side, |s, _| s / 2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Resample {
    Same,
    /// Stride-2 convolution.
    Down,
    /// Stride-2 transposed convolution.
    Up,
}

/// One convolution with bias.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayer {
    pub name: String,
    pub kernel: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub resample: Resample,
}

impl ConvLayer {
    fn new(name: &str, kernel: usize, in_channels: usize, out_channels: usize, resample: Resample) -> Self {
        ConvLayer { name: name.to_string(), kernel, in_channels, out_channels, resample }
    }

    pub fn params(&self) -> u64 {
        (self.kernel * self.kernel * self.in_channels * self.out_channels + self.out_channels) as u64
    }

    pub fn output_side(&self, side: usize) -> usize {
        match self.resample {
            Resample::Same => side,
            Resample::Down => (side + 2).saturating_sub(self.kernel) / 2 + 1,
            Resample::Up => side * 2,
        }
    }

    /// Multiply-accumulates for a square input of `side` pixels. Transposed
    /// convolutions are counted at their input resolution.
    pub fn macs(&self, side: usize) -> u64 {
        let positions = match self.resample {
            Resample::Up => side * side,
            _ => {
                let o = self.output_side(side);
                o * o
            }
        } as u64;
        positions * (self.kernel * self.kernel * self.in_channels * self.out_channels) as u64
    }
}

pub fn plan_params(plan: &[ConvLayer]) -> u64 {
    plan.iter().map(ConvLayer::params).sum()
}

/// FLOPs of one forward pass at `input_side`, one multiply-accumulate
/// counted as two FLOPs.
pub fn plan_flops(plan: &[ConvLayer], input_side: usize) -> Result<u64, NetworkError> {
    if input_side == 0 {
        return Err(NetworkError::InvalidSpec("input side must be positive".into()));
    }
    let mut side = input_side;
    let mut macs = 0u64;
    for layer in plan {
        macs += layer.macs(side);
        side = layer.output_side(side);
    }
    Ok(2 * macs)
}

/// Resolution at which budgets are reported by default (native slice size).
pub const BUDGET_SIDE: usize = 512;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetReport {
    pub mode: ExperimentMode,
    pub n_domains: usize,
    pub params_per_generator: u64,
    pub inference_generators: usize,
    pub total_inference_params: u64,
    pub resolution: usize,
    pub flops_per_generator: u64,
    pub total_inference_flops: u64,
}

/// Inference-time budget: a noisy image passes through one generator per
/// adjacent pair of the chain.
pub fn budget_report(
    mode: ExperimentMode,
    n_domains: usize,
    spec: &GeneratorSpec,
    resolution: usize,
) -> Result<BudgetReport, NetworkError> {
    spec.validate()?;
    if n_domains < 2 {
        return Err(NetworkError::InvalidSpec("chain needs at least 2 domains".into()));
    }
    let plan = spec.layer_plan();
    let params = plan_params(&plan);
    let flops = plan_flops(&plan, resolution)?;
    let k = n_domains - 1;
    Ok(BudgetReport {
        mode,
        n_domains,
        params_per_generator: params,
        inference_generators: k,
        total_inference_params: params * k as u64,
        resolution,
        flops_per_generator: flops,
        total_inference_flops: flops * k as u64,
    })
}

impl BudgetReport {
    pub fn to_text(&self) -> String {
        format!(
            "mode {}  domains {}\n  params per generator     {:>14}  ({:.2}M)\n  inference generators     {:>14}\n  inference params         {:>14}  ({:.2}M)\n  inference FLOPs @{}px  {:>14}  ({:.1}G)\n",
            self.mode,
            self.n_domains,
            self.params_per_generator,
            self.params_per_generator as f64 / 1e6,
            self.inference_generators,
            self.total_inference_params,
            self.total_inference_params as f64 / 1e6,
            self.resolution,
            self.total_inference_flops,
            self.total_inference_flops as f64 / 1e9,
        )
    }
}
