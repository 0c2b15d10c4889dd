use candle_core::{Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// History of generated images shown to one discriminator. Until full,
/// every incoming fake is stored and passed through. Once full, each
/// incoming image is passed through with probability ½; otherwise it
/// replaces a uniformly chosen stored image, which is returned instead.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    pub capacity: usize,
    pub images: Vec<Tensor>,
    pub rng: ChaCha8Rng,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, seed: u64) -> Self {
        ReplayBuffer { capacity, images: Vec::new(), rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Detached batch of the same shape as `fakes`.
    pub fn query(&mut self, fakes: &Tensor) -> Result<Tensor> {
        let fakes = fakes.detach();
        if self.capacity == 0 {
            return Ok(fakes);
        }
        let n = fakes.dim(0)?;
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let img = fakes.narrow(0, i, 1)?;
            if self.images.len() < self.capacity {
                self.images.push(img.clone());
                out.push(img);
            } else if self.rng.random::<f64>() < 0.5 {
                let j = self.rng.random_range(0..self.capacity);
                out.push(std::mem::replace(&mut self.images[j], img));
            } else {
                out.push(img);
            }
        }
        Tensor::cat(&out, 0)
    }
}
