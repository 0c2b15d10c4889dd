use candle_core::backprop::GradStore;
use candle_core::{Tensor, Var};

use super::TrainError;

/// Adaptive moment estimation over a fixed parameter list. Parameters that
/// receive no gradient in a step keep their moments unchanged.
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    params: Vec<(String, Var)>,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(params: Vec<(String, Var)>, beta1: f64, beta2: f64) -> Result<Self, TrainError> {
        let m = params.iter().map(|(_, p)| p.as_tensor().zeros_like()).collect::<Result<Vec<_>, _>>()?;
        let v = m.clone();
        Ok(Adam { beta1, beta2, eps: 1e-8, t: 0, params, m, v })
    }

    pub fn step(&mut self, grads: &GradStore, lr: f64) -> Result<(), TrainError> {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, (_, p)) in self.params.iter().enumerate() {
            let Some(g) = grads.get(p.as_tensor()) else { continue };
            let m = ((&self.m[i] * self.beta1)? + (g * (1.0 - self.beta1))?)?;
            let v = ((&self.v[i] * self.beta2)? + (g.sqr()? * (1.0 - self.beta2))?)?;
            let denom = ((&v / bc2)?.sqrt()? + self.eps)?;
            let update = ((&m / bc1)? / denom)?;
            p.set(&(p.as_tensor() - (update * lr)?)?)?;
            self.m[i] = m;
            self.v[i] = v;
        }
        Ok(())
    }

    pub fn params(&self) -> &[(String, Var)] {
        &self.params
    }

    /// `(name, first moment, second moment)` per parameter.
    pub fn moments(&self) -> impl Iterator<Item = (&str, &Tensor, &Tensor)> {
        self.params.iter().zip(self.m.iter().zip(&self.v)).map(|((n, _), (m, v))| (n.as_str(), m, v))
    }

    pub fn set_moments(&mut self, i: usize, m: Tensor, v: Tensor) {
        self.m[i] = m;
        self.v[i] = v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};

    /// Scalar Adam written out by hand.
    fn oracle(mut x: f64, grad: impl Fn(f64) -> f64, steps: usize, lr: f64, b1: f64, b2: f64) -> f64 {
        let (mut m, mut v) = (0.0, 0.0);
        for t in 1..=steps {
            let g = grad(x);
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t as i32));
            let vh = v / (1.0 - b2.powi(t as i32));
            x -= lr * mh / (vh.sqrt() + 1e-8);
        }
        x
    }

    #[test]
    fn matches_scalar_oracle() {
        let x = Var::new(&[3.0f64], &Device::Cpu).unwrap();
        let mut opt = Adam::new(vec![("x".into(), x.clone())], 0.5, 0.999).unwrap();
        for _ in 0..20 {
            let loss = x.as_tensor().sqr().unwrap().sum_all().unwrap();
            opt.step(&loss.backward().unwrap(), 0.1).unwrap();
        }
        let got = x.as_tensor().to_vec1::<f64>().unwrap()[0];
        let want = oracle(3.0, |x| 2.0 * x, 20, 0.1, 0.5, 0.999);
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }

    #[test]
    fn untouched_params_stay() {
        let a = Var::new(&[1.0f32], &Device::Cpu).unwrap();
        let b = Var::new(&[1.0f32], &Device::Cpu).unwrap();
        let mut opt = Adam::new(vec![("a".into(), a.clone()), ("b".into(), b.clone())], 0.5, 0.999).unwrap();
        let loss = (a.as_tensor() * 2.0).unwrap().sum_all().unwrap();
        opt.step(&loss.backward().unwrap(), 0.01).unwrap();
        assert!(a.as_tensor().to_vec1::<f32>().unwrap()[0] < 1.0);
        assert_eq!(b.as_tensor().to_vec1::<f32>().unwrap()[0], 1.0);
        assert_eq!(b.as_tensor().dtype(), DType::F32);
    }
}
