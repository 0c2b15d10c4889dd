use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{random_crop, DataError, Dataset, ImageRecord};
use crate::domain_chain::DomainId;

/// Unpaired sampler for one domain. Items are drawn from a sequence of
/// per-epoch permutations, so a batch may straddle an epoch boundary. Each
/// domain gets its own ChaCha stream of the seed; nothing couples the order
/// of two domains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchStream {
    domain: DomainId,
    indices: Vec<usize>,
    batch_size: usize,
    crop: usize,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    pos: usize,
    epoch: u64,
}

impl BatchStream {
    pub fn new(ds: &Dataset, domain: DomainId, batch_size: usize, crop: usize, seed: u64) -> Result<Self, DataError> {
        let indices = ds.domain_indices(domain);
        if indices.is_empty() {
            return Err(DataError::Missing(format!("dataset has no images for domain {}", domain.0)));
        }
        if batch_size == 0 || batch_size > indices.len() {
            return Err(DataError::Config(format!(
                "batch size {batch_size} must be between 1 and the {} images of domain {}",
                indices.len(),
                domain.0
            )));
        }
        if let Some(r) = indices.iter().map(|&i| &ds.records[i]).find(|r| r.side() < crop) {
            return Err(DataError::Config(format!("crop {crop} exceeds image {} of side {}", r.source_id, r.side())));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(domain.0 as u64 + 1);
        let mut s = BatchStream { domain, indices, batch_size, crop, rng, order: Vec::new(), pos: 0, epoch: 0 };
        s.reshuffle();
        Ok(s)
    }

    fn reshuffle(&mut self) {
        self.order = self.indices.clone();
        self.order.shuffle(&mut self.rng);
        self.pos = 0;
    }

    pub fn domain(&self) -> DomainId {
        self.domain
    }

    /// Completed passes over the domain.
    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.indices.len().div_ceil(self.batch_size)
    }

    /// Dataset indices of the next batch, without cropping.
    pub fn next_indices(&mut self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.batch_size);
        while out.len() < self.batch_size {
            if self.pos == self.order.len() {
                self.epoch += 1;
                self.reshuffle();
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }

    pub fn next_batch(&mut self, ds: &Dataset) -> Result<Vec<ImageRecord>, DataError> {
        self.next_indices().into_iter().map(|i| random_crop(&ds.records[i], self.crop, &mut self.rng)).collect()
    }
}
