use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use candle_core::{DType, Device, Result, Tensor, Var};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::im2col::{GatherMap, Im2Col};
use super::ConvLayer;
#[cfg(test)]
use super::Resample;

const NORM_EPS: f64 = 1e-5;

/// Mirror padding of the two spatial dimensions of an NCHW tensor.
pub fn reflection_pad(x: &Tensor, pad: usize) -> Result<Tensor> {
    if pad == 0 {
        return Ok(x.clone());
    }
    let mut out = x.clone();
    for dim in [2, 3] {
        let n = out.dim(dim)?;
        if pad >= n {
            candle_core::bail!("reflection pad {pad} needs a side larger than {n}");
        }
        let idx: Vec<u32> = (1..=pad)
            .rev()
            .chain(0..n)
            .chain((n - 1 - pad..n - 1).rev())
            .map(|i| i as u32)
            .collect();
        let idx = Tensor::from_vec(idx, 2 * pad + n, x.device())?;
        out = out.index_select(&idx, dim)?;
    }
    Ok(out)
}

/// Doubles the spatial size by placing each input pixel at an even
/// coordinate and zeros elsewhere.
pub fn zero_insert_upsample(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    let cols = Tensor::stack(&[x, &x.zeros_like()?], 4)?.reshape((n, c, h, 2 * w))?;
    Tensor::stack(&[&cols, &cols.zeros_like()?], 3)?.reshape((n, c, 2 * h, 2 * w))
}

/// Per-sample, per-channel normalisation over the spatial dimensions, no
/// learned affine.
pub fn instance_norm(x: &Tensor) -> Result<Tensor> {
    let mean = x.mean_keepdim((2, 3))?;
    let centred = x.broadcast_sub(&mean)?;
    let var = centred.sqr()?.mean_keepdim((2, 3))?;
    centred.broadcast_div(&(var + NORM_EPS)?.sqrt()?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Padding {
    Reflect,
    Zero,
}

#[derive(Debug, Clone)]
pub(crate) struct Conv {
    pub(crate) layer: ConvLayer,
    pub(crate) weight: Var,
    pub(crate) bias: Var,
    padding: Padding,
    maps: Arc<Mutex<HashMap<(usize, usize), Arc<GatherMap>>>>,
}

impl Conv {
    pub(crate) fn new<R: Rng>(layer: ConvLayer, padding: Padding, dtype: DType, rng: &mut R) -> Result<Self> {
        let k = layer.kernel;
        let shape = (layer.out_channels, layer.in_channels, k, k);
        let n = layer.out_channels * layer.in_channels * k * k;
        let normal = Normal::new(0.0f64, 0.02).expect("valid normal");
        let w: Vec<f64> = (0..n).map(|_| normal.sample(rng)).collect();
        let weight = Var::from_tensor(&Tensor::from_vec(w, shape, &Device::Cpu)?.to_dtype(dtype)?)?;
        let bias = Var::zeros(layer.out_channels, dtype, &Device::Cpu)?;
        Ok(Conv { layer, weight, bias, padding, maps: Arc::default() })
    }

    fn gather_map(&self, h: usize, w: usize) -> Result<Arc<GatherMap>> {
        let mut maps = self.maps.lock().expect("gather map cache");
        if let Some(m) = maps.get(&(h, w)) {
            return Ok(m.clone());
        }
        let m = Arc::new(GatherMap::new(&self.layer, self.padding, self.layer.in_channels, h, w)?);
        maps.insert((h, w), m.clone());
        Ok(m)
    }

    pub(crate) fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (n, c, h, w) = x.dims4()?;
        if c != self.layer.in_channels {
            candle_core::bail!("{}: expected {} channels, got {c}", self.layer.name, self.layer.in_channels);
        }
        let map = self.gather_map(h, w)?;
        let (oh, ow) = (map.out_h, map.out_w);
        let cols = x.contiguous()?.apply_op1(Im2Col(map))?;
        let k = self.layer.kernel;
        let weight = self.weight.as_tensor().reshape((self.layer.out_channels, c * k * k))?;
        let bias = self.bias.as_tensor().reshape((1, self.layer.out_channels, 1))?;
        weight
            .broadcast_matmul(&cols)?
            .broadcast_add(&bias)?
            .reshape((n, self.layer.out_channels, oh, ow))
    }

    /// Same convolution through candle's own conv2d on an explicitly
    /// padded or zero-inserted input.
    #[cfg(test)]
    pub(crate) fn forward_reference(&self, x: &Tensor) -> Result<Tensor> {
        let k = self.layer.kernel;
        let bias = self.bias.as_tensor().reshape((1, self.layer.out_channels, 1, 1))?;
        let y = match self.layer.resample {
            Resample::Same => {
                let p = (k - 1) / 2;
                match self.padding {
                    Padding::Reflect => reflection_pad(x, p)?.conv2d(&self.weight, 0, 1, 1, 1)?,
                    Padding::Zero => x.conv2d(&self.weight, p, 1, 1, 1)?,
                }
            }
            Resample::Down => x.conv2d(&self.weight, 1, 2, 1, 1)?,
            Resample::Up => zero_insert_upsample(x)?.conv2d(&self.weight, 1, 1, 1, 1)?,
        };
        y.broadcast_add(&bias)
    }
}
