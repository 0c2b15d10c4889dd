use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use super::checkpoint::{model_from, param_key};
use super::{
    batch_tensor, derive_seed, read_archive, write_archive, Adam, CheckpointHeader, Model, ReplayBuffer,
    TrainConfig, TrainError, CHECKPOINT_FORMAT, CHECKPOINT_VERSION,
};
use crate::data::{BatchStream, Dataset};
use crate::domain_chain::{build_chain, DomainId, ExperimentMode};
use crate::losses::GeneratorPass;

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: u64,
    pub lr: f64,
    /// Summed adversarial value the discriminators ascended this step.
    pub discriminator: f64,
    /// Generator-side adversarial total after the discriminator update.
    pub adversarial: f64,
    pub cycles: Vec<(String, f64)>,
    pub identity: f64,
    pub composite: f64,
    pub wall_time_s: f64,
}

/// CRC32 over the domain names, record identities and pixel bits.
pub fn dataset_fingerprint(ds: &Dataset) -> u32 {
    let mut h = crc32fast::Hasher::new();
    for n in &ds.domain_names {
        h.update(n.as_bytes());
        h.update(&[0]);
    }
    for r in &ds.records {
        h.update(r.source_id.as_bytes());
        h.update(&(r.domain.0 as u64).to_le_bytes());
        for v in r.pixels.iter() {
            h.update(&v.to_bits().to_le_bytes());
        }
    }
    h.finalize()
}

pub struct Trainer {
    pub cfg: TrainConfig,
    pub model: Model,
    opt_g: Adam,
    opt_d: Adam,
    streams: Vec<BatchStream>,
    buffers: Vec<ReplayBuffer>,
    pub step: u64,
    nonfinite: usize,
    fingerprint: u32,
    elapsed_before: f64,
    started: Instant,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, ds: &Dataset) -> Result<Self, TrainError> {
        cfg.validate()?;
        if ds.domain_names.len() != cfg.n_domains {
            return Err(TrainError::Config(format!(
                "config expects {} domains, dataset has {} ({})",
                cfg.n_domains,
                ds.domain_names.len(),
                ds.domain_names.join(",")
            )));
        }
        let model = Model::from_config(&cfg, Some(ds.domain_names.clone()))?;
        let data_seed = derive_seed(cfg.seed, "data");
        let streams = (0..cfg.n_domains)
            .map(|d| BatchStream::new(ds, DomainId(d), cfg.batch_size, cfg.crop, data_seed))
            .collect::<Result<Vec<_>, _>>()?;
        let buffers = (0..model.plan.len())
            .map(|i| ReplayBuffer::new(cfg.buffer_capacity, derive_seed(cfg.seed, &format!("buffer {i}"))))
            .collect();
        let opt_g = Adam::new(model.generator_params(), cfg.beta1, cfg.beta2)?;
        let opt_d = Adam::new(model.discriminator_params(), cfg.beta1, cfg.beta2)?;
        Ok(Trainer {
            cfg,
            model,
            opt_g,
            opt_d,
            streams,
            buffers,
            step: 0,
            nonfinite: 0,
            fingerprint: dataset_fingerprint(ds),
            elapsed_before: 0.0,
            started: Instant::now(),
        })
    }

    pub fn steps_per_epoch(&self) -> u64 {
        self.cfg
            .steps_per_epoch
            .unwrap_or_else(|| self.streams.iter().map(|s| s.batches_per_epoch()).max().unwrap_or(1)) as u64
    }

    /// Length of the epoch schedule; the step-size decay is laid over it.
    pub fn schedule_steps(&self) -> u64 {
        self.cfg.epochs as u64 * self.steps_per_epoch()
    }

    /// Where this run stops: the schedule end or `max_steps`.
    pub fn total_steps(&self) -> u64 {
        let s = self.schedule_steps();
        self.cfg.max_steps.map_or(s, |m| m.min(s))
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.total_steps()
    }

    /// One optimisation step: discriminators first on buffered fakes, then
    /// all generators jointly on the composite with the updated
    /// discriminators held fixed.
    pub fn step(&mut self, ds: &Dataset) -> Result<StepRecord, TrainError> {
        let lr = self.cfg.lr * self.cfg.lr_factor(self.step, self.schedule_steps());
        let dtype = self.model.dtype;
        let window = self.model.window;
        let batches = self
            .streams
            .iter_mut()
            .map(|s| batch_tensor(&s.next_batch(ds)?, &window, dtype))
            .collect::<Result<Vec<Tensor>, _>>()?;
        let Trainer { cfg, model, opt_g, opt_d, buffers, .. } = self;
        let nets = model.nets();
        let pass = GeneratorPass::run(&model.chain, model.mode, &nets, &batches)?;

        let value = pass.adversarial_total(&nets, &batches, cfg.adv_form, |slot, _, fake| buffers[slot].query(fake))?;
        let disc = value.to_dtype(DType::F64)?.to_scalar::<f64>()?;
        if disc.is_finite() {
            opt_d.step(&value.neg()?.backward()?, lr)?;
        }

        let obj = pass.objective(&model.chain, &nets, &batches, &cfg.weights, cfg.adv_form)?;
        let finite = disc.is_finite() && obj.breakdown.composite.is_finite();
        if finite {
            opt_g.step(&obj.composite.backward()?, lr)?;
            self.nonfinite = 0;
        } else {
            self.nonfinite += 1;
            if self.nonfinite >= self.cfg.nonfinite_limit {
                return Err(TrainError::NonFinite {
                    step: self.step + 1,
                    count: self.nonfinite,
                    breakdown: Box::new(obj.breakdown),
                });
            }
        }
        self.step += 1;
        let b = obj.breakdown;
        Ok(StepRecord {
            step: self.step,
            epoch: (self.step - 1) / self.steps_per_epoch(),
            lr,
            discriminator: disc,
            adversarial: b.adversarial_total,
            cycles: b.per_cycle_consistency,
            identity: b.identity_total,
            composite: b.composite,
            wall_time_s: self.elapsed_before + self.started.elapsed().as_secs_f64(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        let mut tensors: Vec<(String, Tensor)> =
            self.model.params().into_iter().map(|(n, v)| (param_key(&n), v.as_tensor().clone())).collect();
        for (tag, opt) in [("adam_g", &self.opt_g), ("adam_d", &self.opt_d)] {
            for (n, m, v) in opt.moments() {
                tensors.push((format!("{tag}.m.{n}"), m.clone()));
                tensors.push((format!("{tag}.v.{n}"), v.clone()));
            }
        }
        for (i, b) in self.buffers.iter().enumerate() {
            for (k, img) in b.images.iter().enumerate() {
                tensors.push((format!("buffer.{i}.{k}"), img.clone()));
            }
        }
        let mut header = CheckpointHeader {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: self.cfg.clone(),
            domain_names: self.model.chain.names().to_vec(),
            mode: self.model.mode,
            plan: self.model.plan.clone(),
            step: self.step,
            elapsed_s: self.elapsed_before + self.started.elapsed().as_secs_f64(),
            nonfinite: self.nonfinite,
            dataset_fingerprint: self.fingerprint,
            adam_steps: (self.opt_g.t, self.opt_d.t),
            streams: self.streams.clone(),
            buffer_rngs: self.buffers.iter().map(|b| b.rng.clone()).collect(),
            buffer_lens: self.buffers.iter().map(|b| b.len()).collect(),
            tensors: Vec::new(),
        };
        write_archive(path, &mut header, &tensors)
    }

    /// Restores the complete run state. Refuses a checkpoint of another
    /// mode (when `expect_mode` is given) or one trained on different data.
    pub fn resume(path: &Path, ds: &Dataset, expect_mode: Option<ExperimentMode>) -> Result<Self, TrainError> {
        let (header, tensors) = read_archive(path)?;
        let err = |msg: String| TrainError::Checkpoint { path: path.display().to_string(), msg };
        if let Some(m) = expect_mode {
            if m != header.mode {
                return Err(err(format!("checkpoint was trained in mode {}, not {m}", header.mode)));
            }
        }
        if dataset_fingerprint(ds) != header.dataset_fingerprint {
            return Err(err("dataset differs from the one the checkpoint was trained on".into()));
        }
        build_chain(header.config.n_domains, Some(header.domain_names.clone()))?;
        let model = model_from(&header, &tensors, path)?;
        let cfg = header.config.clone();
        let get = |name: String| tensors.get(&name).cloned().ok_or_else(|| err(format!("missing tensor {name}")));
        let mut opt_g = Adam::new(model.generator_params(), cfg.beta1, cfg.beta2)?;
        let mut opt_d = Adam::new(model.discriminator_params(), cfg.beta1, cfg.beta2)?;
        for (tag, opt) in [("adam_g", &mut opt_g), ("adam_d", &mut opt_d)] {
            let names: Vec<String> = opt.params().iter().map(|(n, _)| n.clone()).collect();
            for (i, n) in names.iter().enumerate() {
                opt.set_moments(i, get(format!("{tag}.m.{n}"))?, get(format!("{tag}.v.{n}"))?);
            }
        }
        (opt_g.t, opt_d.t) = header.adam_steps;
        if header.buffer_rngs.len() != model.plan.len() || header.buffer_lens.len() != model.plan.len() {
            return Err(err("replay buffer state does not match the discriminator plan".into()));
        }
        let mut buffers = Vec::new();
        for (i, (rng, len)) in header.buffer_rngs.iter().zip(&header.buffer_lens).enumerate() {
            let images = (0..*len).map(|k| get(format!("buffer.{i}.{k}"))).collect::<Result<Vec<_>, _>>()?;
            buffers.push(ReplayBuffer { capacity: cfg.buffer_capacity, images, rng: rng.clone() });
        }
        Ok(Trainer {
            cfg,
            model,
            opt_g,
            opt_d,
            streams: header.streams,
            buffers,
            step: header.step,
            nonfinite: header.nonfinite,
            fingerprint: header.dataset_fingerprint,
            elapsed_before: header.elapsed_s,
            started: Instant::now(),
        })
    }

    /// Steps until the run is done, appending to the NDJSON log and writing
    /// checkpoints at the configured interval and at the end.
    pub fn run(&mut self, ds: &Dataset, paths: &RunPaths) -> Result<Option<StepRecord>, TrainError> {
        truncate_log(&paths.log, self.step)?;
        let mut log = OpenOptions::new().create(true).append(true).open(&paths.log)?;
        let mut last = None;
        while !self.is_done() {
            let rec = self.step(ds)?;
            writeln!(log, "{}", serde_json::to_string(&rec).expect("record serialises"))?;
            if self.cfg.checkpoint_every > 0 && self.step % self.cfg.checkpoint_every == 0 {
                log.flush()?;
                self.save(&paths.checkpoint)?;
            }
            last = Some(rec);
        }
        log.flush()?;
        self.save(&paths.checkpoint)?;
        Ok(last)
    }
}

#[derive(Debug, Clone)]
pub struct RunPaths {
    pub checkpoint: PathBuf,
    pub log: PathBuf,
}

impl RunPaths {
    pub const CHECKPOINT: &'static str = "checkpoint.mccan";
    pub const LOG: &'static str = "train_log.ndjson";

    pub fn in_dir(dir: &Path) -> Self {
        RunPaths { checkpoint: dir.join(Self::CHECKPOINT), log: dir.join(Self::LOG) }
    }
}

/// Drops log lines past `step` (left by a run that died after its last
/// checkpoint). Step 0 starts a fresh log.
fn truncate_log(path: &Path, step: u64) -> Result<(), TrainError> {
    if step == 0 || !path.exists() {
        fs::write(path, "")?;
        return Ok(());
    }
    let keep: Vec<String> = BufReader::new(fs::File::open(path)?)
        .lines()
        .map_while(Result::ok)
        .filter(|l| serde_json::from_str::<StepRecord>(l).is_ok_and(|r| r.step <= step))
        .collect();
    let mut text = keep.join("\n");
    if !text.is_empty() {
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

pub fn read_log(path: &Path) -> Result<Vec<StepRecord>, TrainError> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| TrainError::Config(format!("bad log line: {e}"))))
        .collect()
}

/// Trains from scratch into `dir` (checkpoint plus log).
pub fn train(cfg: TrainConfig, ds: &Dataset, dir: &Path) -> Result<Trainer, TrainError> {
    fs::create_dir_all(dir)?;
    let mut t = Trainer::new(cfg, ds)?;
    t.run(ds, &RunPaths::in_dir(dir))?;
    Ok(t)
}

/// Per-run parameter totals by network family, for reports.
pub fn param_summary(model: &Model) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    m.insert("generators".into(), model.generator_params().iter().map(|(_, v)| v.elem_count()).sum());
    m.insert("discriminators".into(), model.discriminator_params().iter().map(|(_, v)| v.elem_count()).sum());
    m
}
