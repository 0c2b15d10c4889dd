#![allow(dead_code)]

pub mod gradients;

use std::collections::BTreeSet;

use candle_core::{DType, Device, Result, Tensor, Var};
use mccan::domain_chain::{DomainChain, DomainId};
use mccan::networks::ImageMap;

/// Two 3×3 same-padded convolutions with a tanh between, 1 channel in and
/// out, 2 hidden channels.
pub struct ToyGenerator {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

fn var(shape: &[usize], seed: u64) -> Var {
    let n: usize = shape.iter().product();
    // small deterministic pseudo-random values, no RNG dependency
    let v: Vec<f64> = (0..n).map(|i| (((i as u64 * 7919 + seed * 104729) % 1000) as f64 / 1000.0 - 0.5) * 0.6).collect();
    Var::from_tensor(&Tensor::from_vec(v, shape, &Device::Cpu).unwrap()).unwrap()
}

impl ToyGenerator {
    pub fn new(seed: u64) -> Self {
        ToyGenerator { w1: var(&[2, 1, 3, 3], seed), b1: var(&[2], seed + 1), w2: var(&[1, 2, 3, 3], seed + 2), b2: var(&[1], seed + 3) }
    }

    pub fn vars(&self) -> Vec<Var> {
        vec![self.w1.clone(), self.b1.clone(), self.w2.clone(), self.b2.clone()]
    }
}

impl ImageMap for ToyGenerator {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = x.conv2d(&self.w1, 1, 1, 1, 1)?.broadcast_add(&self.b1.as_tensor().reshape((1, 2, 1, 1))?)?.tanh()?;
        h.conv2d(&self.w2, 1, 1, 1, 1)?.broadcast_add(&self.b2.as_tensor().reshape((1, 1, 1, 1))?)
    }
}

/// 2×2 stride-2 conv to a 2×2 score map, tanh-free so scores are logits.
pub struct ToyDiscriminator {
    pub w: Var,
    pub b: Var,
}

impl ToyDiscriminator {
    pub fn new(seed: u64) -> Self {
        ToyDiscriminator { w: var(&[1, 1, 2, 2], seed), b: var(&[1], seed + 1) }
    }

    pub fn vars(&self) -> Vec<Var> {
        vec![self.w.clone(), self.b.clone()]
    }
}

impl ImageMap for ToyDiscriminator {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.conv2d(&self.w, 0, 2, 1, 1)?.broadcast_add(&self.b.as_tensor().reshape((1, 1, 1, 1))?)
    }
}

pub fn batch(n: usize, seed: u64) -> Tensor {
    let v: Vec<f64> = (0..n * 16).map(|i| ((i as f64 + 0.3) * (1.7 + seed as f64)).sin() * 0.8).collect();
    Tensor::from_vec(v, (n, 1, 4, 4), &Device::Cpu).unwrap()
}

pub fn scalar(t: &Tensor) -> f64 {
    t.to_dtype(DType::F64).unwrap().to_scalar::<f64>().unwrap()
}

/// Largest relative error between the autodiff gradient and a central
/// difference over every entry of `vars`. The relative error uses
/// `max(|a|, |n|, floor)` as denominator.
pub fn max_fd_error(loss: &dyn Fn() -> Result<Tensor>, vars: &[Var], h: f64, floor: f64) -> f64 {
    let l = loss().unwrap();
    let grads = l.backward().unwrap();
    let mut worst: f64 = 0.0;
    for v in vars {
        let base: Vec<f64> = v.as_tensor().flatten_all().unwrap().to_vec1().unwrap();
        let analytic: Vec<f64> = match grads.get(v.as_tensor()) {
            Some(g) => g.flatten_all().unwrap().to_vec1().unwrap(),
            None => vec![0.0; base.len()],
        };
        let shape = v.as_tensor().shape().clone();
        for i in 0..base.len() {
            let probe = |delta: f64| {
                let mut p = base.clone();
                p[i] += delta;
                v.set(&Tensor::from_vec(p, shape.clone(), &Device::Cpu).unwrap()).unwrap();
                scalar(&loss().unwrap())
            };
            let numeric = (probe(h) - probe(-h)) / (2.0 * h);
            v.set(&Tensor::from_vec(base.clone(), shape.clone(), &Device::Cpu).unwrap()).unwrap();
            let a = analytic[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            worst = worst.max(rel);
        }
    }
    worst
}

/// Closed walks on the chain graph, by exhaustive search: every walk of
/// length 2 (local round trips) and every walk of length 2(N-1) that starts
/// at one end and touches the other (global round trips).
pub fn brute_force_cycles(chain: &DomainChain) -> BTreeSet<Vec<usize>> {
    let n = chain.len();
    let mut out = BTreeSet::new();
    fn walks(n: usize, len: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == len + 1 {
            out.push(prefix.clone());
            return;
        }
        let last = *prefix.last().unwrap();
        for next in 0..n {
            if next.abs_diff(last) == 1 {
                prefix.push(next);
                walks(n, len, prefix, out);
                prefix.pop();
            }
        }
    }
    for start in 0..n {
        for len in [2, 2 * (n - 1)] {
            let mut all = Vec::new();
            walks(n, len, &mut vec![start], &mut all);
            for w in all {
                if w.last() != w.first() {
                    continue;
                }
                let far = if start == 0 { n - 1 } else { 0 };
                let global = len == 2 * (n - 1) && (start == 0 || start == n - 1) && w.contains(&far);
                if len == 2 || global {
                    out.insert(w);
                }
            }
        }
    }
    out
}

pub fn ids(steps: &[DomainId]) -> Vec<usize> {
    steps.iter().map(|d| d.0).collect()
}

/// Layer-by-layer parameter sum of the residual generator, written from
/// the architecture description: k²·c_in·c_out weights plus c_out biases.
pub fn generator_params_oracle(width: u64, n_down: u32, n_res: u64) -> u64 {
    let conv = |k: u64, cin: u64, cout: u64| k * k * cin * cout + cout;
    let mut total = conv(7, 1, width);
    let mut c = width;
    for _ in 0..n_down {
        total += conv(3, c, 2 * c);
        c *= 2;
    }
    total += n_res * 2 * conv(3, c, c);
    for _ in 0..n_down {
        total += conv(3, c, c / 2);
        c /= 2;
    }
    total + conv(7, c, 1)
}
