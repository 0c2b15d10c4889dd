use candle_core::{DType, Result, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{instance_norm, Conv, Padding};
use super::{plan_flops, ConvLayer, DiscriminatorSpec, GeneratorSpec, NetworkError};

/// Anything that maps an NCHW batch to another NCHW tensor.
pub trait ImageMap {
    fn forward(&self, x: &Tensor) -> Result<Tensor>;
}

impl<F> ImageMap for F
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self(x)
    }
}

/// A network with named trainable tensors.
pub trait Parameterized {
    fn params(&self) -> Vec<(String, Var)>;

    /// Convolution layers in forward order.
    fn layer_plan(&self) -> Vec<ConvLayer>;
}

pub fn count_params(net: &dyn Parameterized) -> u64 {
    net.params().iter().map(|(_, v)| v.elem_count() as u64).sum()
}

/// Forward-pass FLOPs at a square input of `input_side` pixels.
pub fn estimate_flops(net: &dyn Parameterized, input_side: usize) -> std::result::Result<u64, NetworkError> {
    plan_flops(&net.layer_plan(), input_side)
}

fn collect_params(convs: &[&Conv]) -> Vec<(String, Var)> {
    convs
        .iter()
        .flat_map(|c| {
            [
                (format!("{}.weight", c.layer.name), c.weight.clone()),
                (format!("{}.bias", c.layer.name), c.bias.clone()),
            ]
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Generator {
    spec: GeneratorSpec,
    ingress: Conv,
    down: Vec<Conv>,
    res: Vec<(Conv, Conv)>,
    up: Vec<Conv>,
    egress: Conv,
}

impl Generator {
    pub fn spec(&self) -> &GeneratorSpec {
        &self.spec
    }

    fn convs(&self) -> Vec<&Conv> {
        let mut v = vec![&self.ingress];
        v.extend(&self.down);
        for (a, b) in &self.res {
            v.push(a);
            v.push(b);
        }
        v.extend(&self.up);
        v.push(&self.egress);
        v
    }
}

/// Builds a generator with N(0, 0.02) weights and zero biases drawn from
/// `seed`.
pub fn make_generator(spec: &GeneratorSpec, dtype: DType, seed: u64) -> std::result::Result<Generator, NetworkError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut plan = spec.layer_plan().into_iter();
    let mut next = |padding| Conv::new(plan.next().expect("plan length"), padding, dtype, &mut rng);
    let ingress = next(Padding::Reflect)?;
    let down = (0..spec.n_down).map(|_| next(Padding::Zero)).collect::<Result<Vec<_>>>()?;
    let res = (0..spec.n_resblocks)
        .map(|_| Ok((next(Padding::Reflect)?, next(Padding::Reflect)?)))
        .collect::<Result<Vec<_>>>()?;
    let up = (0..spec.n_down).map(|_| next(Padding::Zero)).collect::<Result<Vec<_>>>()?;
    let egress = next(Padding::Reflect)?;
    Ok(Generator { spec: *spec, ingress, down, res, up, egress })
}

impl ImageMap for Generator {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (_, _, h, w) = x.dims4()?;
        let m = self.spec.side_multiple();
        if h % m != 0 || w % m != 0 {
            candle_core::bail!("generator input {h}x{w} is not a multiple of {m}");
        }
        let mut y = instance_norm(&self.ingress.forward(x)?)?.relu()?;
        for c in &self.down {
            y = instance_norm(&c.forward(&y)?)?.relu()?;
        }
        for (a, b) in &self.res {
            let r = instance_norm(&a.forward(&y)?)?.relu()?;
            let r = instance_norm(&b.forward(&r)?)?;
            y = (y + r)?;
        }
        for c in &self.up {
            y = instance_norm(&c.forward(&y)?)?.relu()?;
        }
        self.egress.forward(&y)?.tanh()
    }
}

impl Parameterized for Generator {
    fn params(&self) -> Vec<(String, Var)> {
        collect_params(&self.convs())
    }

    fn layer_plan(&self) -> Vec<ConvLayer> {
        self.spec.layer_plan()
    }
}

#[derive(Debug, Clone)]
pub struct Discriminator {
    spec: DiscriminatorSpec,
    convs: Vec<Conv>,
    head: Conv,
}

impl Discriminator {
    pub fn spec(&self) -> &DiscriminatorSpec {
        &self.spec
    }
}

pub fn make_discriminator(
    spec: &DiscriminatorSpec,
    dtype: DType,
    seed: u64,
) -> std::result::Result<Discriminator, NetworkError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut convs = spec
        .layer_plan()
        .into_iter()
        .map(|l| Conv::new(l, Padding::Zero, dtype, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let head = convs.pop().expect("head layer");
    Ok(Discriminator { spec: *spec, convs, head })
}

impl ImageMap for Discriminator {
    /// Raw patch scores (logits), shape `(n, 1, side / 2^n_layers, ..)`.
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut y = x.clone();
        for (i, c) in self.convs.iter().enumerate() {
            y = c.forward(&y)?;
            if i > 0 {
                y = instance_norm(&y)?;
            }
            y = y.maximum(&(&y * 0.2)?)?;
        }
        self.head.forward(&y)
    }
}

impl Parameterized for Discriminator {
    fn params(&self) -> Vec<(String, Var)> {
        let mut convs: Vec<&Conv> = self.convs.iter().collect();
        convs.push(&self.head);
        collect_params(&convs)
    }

    fn layer_plan(&self) -> Vec<ConvLayer> {
        self.spec.layer_plan()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    fn tiny() -> GeneratorSpec {
        GeneratorSpec { in_channels: 1, base_width: 4, n_resblocks: 1, n_down: 2, crop_size: 16 }
    }

    #[test]
    fn generator_preserves_shape() {
        let g = make_generator(&tiny(), DType::F32, 1).unwrap();
        let x = Tensor::zeros((2, 1, 16, 16), DType::F32, &Device::Cpu).unwrap();
        assert_eq!(g.forward(&x).unwrap().dims(), &[2, 1, 16, 16]);
        let bad = Tensor::zeros((1, 1, 14, 14), DType::F32, &Device::Cpu).unwrap();
        assert!(g.forward(&bad).is_err());
    }

    #[test]
    fn params_match_plan() {
        let g = make_generator(&tiny(), DType::F32, 1).unwrap();
        assert_eq!(count_params(&g), super::super::plan_params(&tiny().layer_plan()));
        let d = make_discriminator(&DiscriminatorSpec { in_channels: 1, n_layers: 2, base_width: 4 }, DType::F32, 2).unwrap();
        assert_eq!(count_params(&d), super::super::plan_params(&d.layer_plan()));
    }

    #[test]
    fn same_seed_same_output() {
        let x = Tensor::rand(-1f32, 1f32, (1, 1, 16, 16), &Device::Cpu).unwrap();
        let a = make_generator(&tiny(), DType::F32, 9).unwrap().forward(&x).unwrap();
        let b = make_generator(&tiny(), DType::F32, 9).unwrap().forward(&x).unwrap();
        let diff = (a - b).unwrap().abs().unwrap().sum_all().unwrap().to_scalar::<f32>().unwrap();
        assert_eq!(diff, 0.0);
    }

    #[test]
    fn discriminator_score_map() {
        let spec = DiscriminatorSpec { in_channels: 1, n_layers: 3, base_width: 4 };
        let d = make_discriminator(&spec, DType::F32, 0).unwrap();
        let x = Tensor::zeros((3, 1, 32, 32), DType::F32, &Device::Cpu).unwrap();
        assert_eq!(d.forward(&x).unwrap().dims(), &[3, 1, 4, 4]);
        assert!(make_discriminator(&DiscriminatorSpec { n_layers: 0, ..spec }, DType::F32, 0).is_err());
    }

    #[test]
    fn empty_network_has_no_params() {
        struct Empty;
        impl Parameterized for Empty {
            fn params(&self) -> Vec<(String, Var)> {
                Vec::new()
            }
            fn layer_plan(&self) -> Vec<ConvLayer> {
                Vec::new()
            }
        }
        assert_eq!(count_params(&Empty), 0);
    }
}
