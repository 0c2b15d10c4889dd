//! Patch extraction for convolutions as a gather through a precomputed
//! index map, with the matching scatter-add for the backward pass. Padding,
//! stride and zero insertion are all folded into the map.

use std::sync::Arc;

use candle_core::{CpuStorage, CustomOp1, Layout, Result, Shape, Tensor, WithDType};

use super::layers::Padding;
use super::{ConvLayer, Resample};

const ZERO_TAP: u32 = u32::MAX;

#[derive(Debug)]
pub(crate) struct GatherMap {
    idx: Vec<u32>,
    in_len: usize,
    pub(crate) out_h: usize,
    pub(crate) out_w: usize,
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if i < 0 { -i } else if i >= n { 2 * (n - 1) - i } else { i };
    r as usize
}

impl GatherMap {
    pub(crate) fn new(layer: &ConvLayer, padding: Padding, c: usize, h: usize, w: usize) -> Result<Self> {
        let k = layer.kernel;
        let (out_h, out_w) = match layer.resample {
            Resample::Same => (h, w),
            Resample::Down => {
                if h + 2 < k || w + 2 < k {
                    candle_core::bail!("input {h}x{w} too small for a {k}x{k} stride-2 conv");
                }
                ((h + 2 - k) / 2 + 1, (w + 2 - k) / 2 + 1)
            }
            Resample::Up => (2 * h, 2 * w),
        };
        let p = (k - 1) / 2;
        if padding == Padding::Reflect && layer.resample == Resample::Same && (p >= h || p >= w) {
            candle_core::bail!("reflection pad {p} needs a side larger than {h}x{w}");
        }
        // Source coordinate along one axis, or None for an implicit zero.
        let source = |o: usize, t: usize, n: usize| -> Option<usize> {
            match layer.resample {
                Resample::Same => {
                    let i = o as isize + t as isize - p as isize;
                    if (0..n as isize).contains(&i) {
                        Some(i as usize)
                    } else if padding == Padding::Reflect {
                        Some(reflect(i, n))
                    } else {
                        None
                    }
                }
                Resample::Down => {
                    let i = 2 * o as isize + t as isize - 1;
                    (0..n as isize).contains(&i).then_some(i as usize)
                }
                Resample::Up => {
                    let q = o as isize + t as isize - 1;
                    (q >= 0 && q % 2 == 0 && ((q / 2) as usize) < n).then_some((q / 2) as usize)
                }
            }
        };
        let mut idx = Vec::with_capacity(c * k * k * out_h * out_w);
        for ci in 0..c {
            for ky in 0..k {
                for kx in 0..k {
                    for oy in 0..out_h {
                        let sy = source(oy, ky, h);
                        for ox in 0..out_w {
                            idx.push(match (sy, source(ox, kx, w)) {
                                (Some(y), Some(x)) => (ci * h * w + y * w + x) as u32,
                                _ => ZERO_TAP,
                            });
                        }
                    }
                }
            }
        }
        Ok(GatherMap { idx, in_len: c * h * w, out_h, out_w })
    }

    pub(crate) fn rows(&self) -> usize {
        self.idx.len() / (self.out_h * self.out_w)
    }
}

fn contiguous<'a, T: WithDType>(data: &'a [T], layout: &Layout) -> Result<&'a [T]> {
    match layout.contiguous_offsets() {
        Some((a, b)) => Ok(&data[a..b]),
        None => candle_core::bail!("im2col expects a contiguous tensor"),
    }
}

fn gather<T: WithDType>(map: &GatherMap, src: &[T]) -> Vec<T> {
    let n = src.len() / map.in_len;
    let mut out = Vec::with_capacity(n * map.idx.len());
    for img in src.chunks_exact(map.in_len) {
        out.extend(map.idx.iter().map(|&i| if i == ZERO_TAP { T::zero() } else { img[i as usize] }));
    }
    out
}

fn scatter<T: WithDType>(map: &GatherMap, src: &[T]) -> Vec<T> {
    let n = src.len() / map.idx.len();
    let mut out = vec![T::zero(); n * map.in_len];
    for (img, cols) in out.chunks_exact_mut(map.in_len).zip(src.chunks_exact(map.idx.len())) {
        for (&i, &v) in map.idx.iter().zip(cols) {
            if i != ZERO_TAP {
                img[i as usize] += v;
            }
        }
    }
    out
}

pub(crate) struct Im2Col(pub(crate) Arc<GatherMap>);
struct Col2Im(Arc<GatherMap>);

impl CustomOp1 for Im2Col {
    fn name(&self) -> &'static str {
        "im2col"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> Result<(CpuStorage, Shape)> {
        let map = &self.0;
        let n = layout.shape().elem_count() / map.in_len;
        let shape = Shape::from((n, map.rows(), map.out_h * map.out_w));
        let out = match storage {
            CpuStorage::F32(d) => CpuStorage::F32(gather(map, contiguous(d, layout)?)),
            CpuStorage::F64(d) => CpuStorage::F64(gather(map, contiguous(d, layout)?)),
            _ => candle_core::bail!("im2col supports f32 and f64"),
        };
        Ok((out, shape))
    }

    fn bwd(&self, arg: &Tensor, _res: &Tensor, grad_res: &Tensor) -> Result<Option<Tensor>> {
        let g = grad_res.contiguous()?.apply_op1(Col2Im(self.0.clone()))?;
        Ok(Some(g.reshape(arg.shape())?))
    }
}

impl CustomOp1 for Col2Im {
    fn name(&self) -> &'static str {
        "col2im"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> Result<(CpuStorage, Shape)> {
        let map = &self.0;
        let n = layout.shape().elem_count() / map.idx.len();
        let shape = Shape::from((n, map.in_len));
        let out = match storage {
            CpuStorage::F32(d) => CpuStorage::F32(scatter(map, contiguous(d, layout)?)),
            CpuStorage::F64(d) => CpuStorage::F64(scatter(map, contiguous(d, layout)?)),
            _ => candle_core::bail!("col2im supports f32 and f64"),
        };
        Ok((out, shape))
    }

    fn bwd(&self, arg: &Tensor, _res: &Tensor, grad_res: &Tensor) -> Result<Option<Tensor>> {
        let g = grad_res.contiguous()?.apply_op1(Im2Col(self.0.clone()))?;
        Ok(Some(g.reshape(arg.shape())?))
    }
}
