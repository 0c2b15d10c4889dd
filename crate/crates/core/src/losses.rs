//! Training objective over any cycle set: adversarial terms at half-path
//! terminal domains, L1 cycle consistency per cycle, L1 identity per
//! generator, and their weighted composite.

use std::collections::BTreeMap;

use candle_core::{Result, Tensor};
use serde::{Deserialize, Serialize};

use crate::domain_chain::{
    active_paths, enumerate_cycles, half_paths, Cycle, DiscriminatorPlan, DomainChain, ExperimentMode,
    GeneratorSlot, Path,
};
use crate::networks::ImageMap;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_cyc: f64,
    pub lambda_idt: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { lambda_cyc: 10.0, lambda_idt: 0.5 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if !(self.lambda_cyc >= 0.0 && self.lambda_idt >= 0.0) {
            return Err(format!("loss weights must be non-negative, got {self:?}"));
        }
        Ok(())
    }
}

/// How discriminator scores enter the adversarial terms. Discriminators
/// emit raw patch logits; the log form reads them through a sigmoid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdversarialForm {
    /// `E[log D(y)] + E[log(1 - D(G(x)))]`.
    Log,
    /// Squared error against targets 1 (real) and 0 (fake).
    #[default]
    #[serde(alias = "lsq")]
    LeastSquares,
}

impl std::str::FromStr for AdversarialForm {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "log" => Ok(AdversarialForm::Log),
            "lsq" | "least-squares" => Ok(AdversarialForm::LeastSquares),
            other => Err(format!("unknown adversarial form `{other}` (expected log or lsq)")),
        }
    }
}

/// `log(sigmoid(s))`, stable for large |s|.
fn log_sigmoid(s: &Tensor) -> Result<Tensor> {
    let softplus_neg = (s.neg()?.relu()? + (s.abs()?.neg()?.exp()? + 1.0)?.log()?)?;
    softplus_neg.neg()
}

fn check_batch(t: &Tensor, what: &str) -> Result<()> {
    if t.dims().first().copied().unwrap_or(0) == 0 || t.elem_count() == 0 {
        candle_core::bail!("empty {what} batch");
    }
    Ok(())
}

/// The per-path adversarial value, which the discriminator maximises.
///
/// Patch scores are transformed per patch and averaged over patches and the
/// batch. Least squares yields `-(E[(D(y) - 1)^2] + E[D(G(x))^2])`.
pub fn adversarial_term(disc: &dyn ImageMap, real: &Tensor, fake: &Tensor, form: AdversarialForm) -> Result<Tensor> {
    check_batch(real, "real")?;
    check_batch(fake, "fake")?;
    if real.dims()[1..] != fake.dims()[1..] {
        candle_core::bail!("real {:?} and fake {:?} batches differ in shape", real.dims(), fake.dims());
    }
    let sr = disc.forward(real)?;
    let sf = disc.forward(fake)?;
    match form {
        AdversarialForm::Log => log_sigmoid(&sr)?.mean_all()? + log_sigmoid(&sf.neg()?)?.mean_all()?,
        AdversarialForm::LeastSquares => {
            let r = (sr - 1.0)?.sqr()?.mean_all()?;
            let f = sf.sqr()?.mean_all()?;
            (r + f)?.neg()
        }
    }
}

/// What a generator minimises for one path with the discriminator fixed.
///
/// The log form is the full per-path value (its real-image half carries no
/// generator gradient). Least squares uses the target-1 surrogate
/// `E[(D(G(x)) - 1)^2]`.
pub fn generator_adversarial(
    disc: &dyn ImageMap,
    real: &Tensor,
    fake: &Tensor,
    form: AdversarialForm,
) -> Result<Tensor> {
    match form {
        AdversarialForm::Log => adversarial_term(disc, real, fake, form),
        AdversarialForm::LeastSquares => {
            check_batch(fake, "fake")?;
            (disc.forward(fake)? - 1.0)?.sqr()?.mean_all()
        }
    }
}

/// Mean absolute difference between two equally shaped batches.
pub fn mean_l1(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.dims() != b.dims() {
        candle_core::bail!("shape mismatch {:?} vs {:?}", a.dims(), b.dims());
    }
    (a - b)?.abs()?.mean_all()
}

/// Borrowed view of the networks of one experiment.
pub struct Nets<'a> {
    pub generators: BTreeMap<GeneratorSlot, &'a dyn ImageMap>,
    pub discriminators: Vec<&'a dyn ImageMap>,
    pub plan: &'a DiscriminatorPlan,
}

impl<'a> Nets<'a> {
    pub fn generator(&self, slot: GeneratorSlot) -> Result<&'a dyn ImageMap> {
        self.generators
            .get(&slot)
            .copied()
            .ok_or_else(|| candle_core::Error::Msg(format!("no generator for {} -> {}", slot.from.0, slot.to.0)))
    }

    /// Applies the generators along `steps`, returning every intermediate
    /// image (the input first).
    pub fn trace(&self, steps: &[crate::domain_chain::DomainId], x: &Tensor) -> Result<Vec<Tensor>> {
        let mut out = vec![x.clone()];
        for w in steps.windows(2) {
            let g = self.generator(GeneratorSlot { from: w[0], to: w[1] })?;
            let y = g.forward(out.last().expect("non-empty"))?;
            out.push(y);
        }
        Ok(out)
    }
}

/// Composition of the path's generators applied to `x`.
pub fn compose_path(nets: &Nets, path: &Path, x: &Tensor) -> Result<Tensor> {
    Ok(nets.trace(&path.steps, x)?.pop().expect("non-empty trace"))
}

/// Mean L1 between `x` and its round trip through the cycle.
pub fn cycle_consistency(cycle: &Cycle, nets: &Nets, source_batch: &Tensor) -> Result<Tensor> {
    let back = compose_path(nets, &Path { steps: cycle.steps.clone() }, source_batch)?;
    mean_l1(&back, source_batch)
}

/// Sum over existing generators `G_{J->I}` of the mean L1 between
/// `G_{J->I}(x)` and `x` for `x` drawn from domain `I`.
pub fn identity_term(nets: &Nets, batches: &[Tensor]) -> Result<Tensor> {
    let mut total: Option<Tensor> = None;
    for (slot, g) in &nets.generators {
        let x = &batches[slot.to.0];
        let term = mean_l1(&g.forward(x)?, x)?;
        total = Some(match total {
            Some(t) => (t + term)?,
            None => term,
        });
    }
    match total {
        Some(t) => Ok(t),
        None => Tensor::new(0f64, &candle_core::Device::Cpu),
    }
}

/// Generator outputs of one forward pass, shared between the discriminator
/// update and the generator objective.
pub struct GeneratorPass {
    pub cycles: Vec<Cycle>,
    /// Round-trip L1 per cycle, in cycle order.
    pub cycle_losses: Vec<Tensor>,
    /// One fake batch per distinct active half-path.
    pub fakes: Vec<(Path, Tensor)>,
    pub identity: Tensor,
}

impl GeneratorPass {
    /// Runs every active cycle from its source batch. Each half-path fake is
    /// the path's generators applied to a real batch of the path's source
    /// domain; it is read off a cycle trace that starts with that path when
    /// one exists.
    pub fn run(chain: &DomainChain, mode: ExperimentMode, nets: &Nets, batches: &[Tensor]) -> Result<Self> {
        if batches.len() != chain.len() {
            candle_core::bail!("expected {} domain batches, got {}", chain.len(), batches.len());
        }
        let cycles = enumerate_cycles(chain, mode).map_err(|e| candle_core::Error::Msg(e.to_string()))?;
        let mut traces = Vec::with_capacity(cycles.len());
        let mut cycle_losses = Vec::with_capacity(cycles.len());
        for c in &cycles {
            let x = &batches[c.source.0];
            let trace = nets.trace(&c.steps, x)?;
            cycle_losses.push(mean_l1(trace.last().expect("non-empty"), x)?);
            traces.push(trace);
        }
        let mut fakes = Vec::new();
        for path in active_paths(chain, mode).map_err(|e| candle_core::Error::Msg(e.to_string()))? {
            let n = path.steps.len();
            let shared = cycles
                .iter()
                .position(|c| c.steps.len() >= n && c.steps[..n] == path.steps[..]);
            let fake = match shared {
                Some(i) => traces[i][n - 1].clone(),
                None => compose_path(nets, &path, &batches[path.source().0])?,
            };
            fakes.push((path, fake));
        }
        let identity = identity_term(nets, batches)?;
        Ok(GeneratorPass { cycles, cycle_losses, fakes, identity })
    }

    /// Fakes grouped by the discriminator slot that judges them.
    fn judged(&self, plan: &DiscriminatorPlan) -> Result<Vec<(usize, &Path, &Tensor)>> {
        self.fakes
            .iter()
            .map(|(p, f)| {
                let slot = plan
                    .slot_for(p)
                    .ok_or_else(|| candle_core::Error::Msg(format!("no discriminator bound to path {:?}", p.steps)))?;
                Ok((slot, p, f))
            })
            .collect()
    }

    /// Eq.-style adversarial sum judged by the bound discriminators, with
    /// `fake_of` choosing the fake batch fed to each (e.g. replay-buffered).
    pub fn adversarial_total(
        &self,
        nets: &Nets,
        batches: &[Tensor],
        form: AdversarialForm,
        mut fake_of: impl FnMut(usize, &Path, &Tensor) -> Result<Tensor>,
    ) -> Result<Tensor> {
        let mut total: Option<Tensor> = None;
        for (slot, path, fake) in self.judged(nets.plan)? {
            let f = fake_of(slot, path, fake)?;
            let term = adversarial_term(nets.discriminators[slot], &batches[path.target().0], &f, form)?;
            total = Some(match total {
                Some(t) => (t + term)?,
                None => term,
            });
        }
        total.ok_or_else(|| candle_core::Error::Msg("no adversarial terms".into()))
    }

    /// Generator-side composite objective and its breakdown.
    pub fn objective(
        &self,
        chain: &DomainChain,
        nets: &Nets,
        batches: &[Tensor],
        weights: &LossWeights,
        form: AdversarialForm,
    ) -> Result<Objective> {
        let mut adv: Option<Tensor> = None;
        for (slot, path, fake) in self.judged(nets.plan)? {
            let term = generator_adversarial(nets.discriminators[slot], &batches[path.target().0], fake, form)?;
            adv = Some(match adv {
                Some(t) => (t + term)?,
                None => term,
            });
        }
        let adv = adv.ok_or_else(|| candle_core::Error::Msg("no adversarial terms".into()))?;
        let cyc_sum = Tensor::stack(&self.cycle_losses, 0)?.sum_all()?;
        let composite = ((&adv + (&cyc_sum * weights.lambda_cyc)?)? + (&self.identity * weights.lambda_idt)?)?;

        let scalar = |t: &Tensor| -> Result<f64> { t.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>() };
        let per_cycle = self
            .cycles
            .iter()
            .zip(&self.cycle_losses)
            .map(|(c, l)| Ok((chain.format_steps(&c.steps), scalar(l)?)))
            .collect::<Result<Vec<_>>>()?;
        let breakdown = LossBreakdown {
            adversarial_total: scalar(&adv)?,
            per_cycle_consistency: per_cycle,
            identity_total: scalar(&self.identity)?,
            composite: scalar(&composite)?,
        };
        Ok(Objective { composite, breakdown })
    }
}

/// Scalar view of one evaluation of the composite objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub adversarial_total: f64,
    /// `(cycle label, mean L1)` in enumeration order.
    pub per_cycle_consistency: Vec<(String, f64)>,
    pub identity_total: f64,
    pub composite: f64,
}

impl LossBreakdown {
    pub fn cycle_sum(&self) -> f64 {
        self.per_cycle_consistency.iter().map(|(_, v)| v).sum()
    }

    /// The weighted sum recomputed from the components.
    pub fn recombine(&self, w: &LossWeights) -> f64 {
        self.adversarial_total + w.lambda_cyc * self.cycle_sum() + w.lambda_idt * self.identity_total
    }
}

pub struct Objective {
    pub composite: Tensor,
    pub breakdown: LossBreakdown,
}

/// Sum of the per-path adversarial values over every (domain, half-path)
/// pair active in the mode, each judged by its bound discriminator.
pub fn total_adversarial(
    chain: &DomainChain,
    mode: ExperimentMode,
    nets: &Nets,
    batches: &[Tensor],
    form: AdversarialForm,
) -> Result<Tensor> {
    let pass = GeneratorPass::run(chain, mode, nets, batches)?;
    pass.adversarial_total(nets, batches, form, |_, _, f| Ok(f.clone()))
}

pub fn composite_objective(
    chain: &DomainChain,
    mode: ExperimentMode,
    nets: &Nets,
    batches: &[Tensor],
    weights: &LossWeights,
    form: AdversarialForm,
) -> Result<Objective> {
    GeneratorPass::run(chain, mode, nets, batches)?.objective(chain, nets, batches, weights, form)
}

/// Adversarial terms counted by `total_adversarial`: `(slot, path)` pairs.
pub fn adversarial_terms(
    chain: &DomainChain,
    mode: ExperimentMode,
    plan: &DiscriminatorPlan,
) -> std::result::Result<Vec<(usize, Path)>, crate::domain_chain::ChainError> {
    Ok(active_paths(chain, mode)?
        .into_iter()
        .filter_map(|p| plan.slot_for(&p).map(|s| (s, p)))
        .collect())
}

/// Both halves of every active cycle, before deduplication.
pub fn all_half_paths(chain: &DomainChain, mode: ExperimentMode) -> std::result::Result<Vec<Path>, crate::domain_chain::ChainError> {
    Ok(enumerate_cycles(chain, mode)?
        .iter()
        .flat_map(|c| {
            let (a, b) = half_paths(c);
            [a, b]
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain_chain::{build_chain, discriminator_assignment, DomainId};
    use candle_core::Device;

    type Map = Box<dyn Fn(&Tensor) -> Result<Tensor>>;

    fn batch(v: &[f64]) -> Tensor {
        Tensor::from_vec(v.to_vec(), (1, 1, 2, 2), &Device::Cpu).unwrap()
    }

    fn scalar(t: &Tensor) -> f64 {
        t.to_scalar::<f64>().unwrap()
    }

    /// Discriminator whose every patch has the given logit.
    fn const_logit(v: f64) -> Map {
        Box::new(move |x: &Tensor| x.zeros_like()? + v)
    }

    fn identity() -> Map {
        Box::new(|x: &Tensor| Ok(x.clone()))
    }

    fn shift(c: f64) -> Map {
        Box::new(move |x: &Tensor| x + c)
    }

    struct Fixture {
        chain: DomainChain,
        plan: DiscriminatorPlan,
        gens: Vec<(GeneratorSlot, Map)>,
        discs: Vec<Map>,
    }

    impl Fixture {
        fn new(n: usize, mode: ExperimentMode, disc_logit: f64) -> Self {
            let chain = build_chain(n, None).unwrap();
            let plan = discriminator_assignment(&chain, mode).unwrap();
            let gens = chain.generator_slots().into_iter().map(|s| (s, identity())).collect();
            let discs = (0..plan.len()).map(|_| const_logit(disc_logit)).collect();
            Fixture { chain, plan, gens, discs }
        }

        fn nets(&self) -> Nets<'_> {
            Nets {
                generators: self.gens.iter().map(|(s, g)| (*s, g as &dyn ImageMap)).collect(),
                discriminators: self.discs.iter().map(|d| d as &dyn ImageMap).collect(),
                plan: &self.plan,
            }
        }

        fn batches(&self) -> Vec<Tensor> {
            (0..self.chain.len()).map(|i| batch(&[i as f64, 1.0, 2.0, 0.5])).collect()
        }
    }

    #[test]
    fn log_form_half_probability() {
        let d = const_logit(0.0);
        let v = scalar(&adversarial_term(&d, &batch(&[0.; 4]), &batch(&[1.; 4]), AdversarialForm::Log).unwrap());
        assert!((v - 2.0 * 0.5f64.ln()).abs() < 1e-12);
        assert!((v + 1.3863).abs() < 1e-4);
    }

    #[test]
    fn perfect_discriminator_scores_zero() {
        // +inf logit on reals (marked by value 1) and -inf on fakes (value 0)
        let d: Map = Box::new(|x: &Tensor| {
            let inf = (x.ones_like()? * f64::INFINITY)?;
            x.ge(0.5)?.where_cond(&inf, &inf.neg()?)
        });
        let v = adversarial_term(&d, &batch(&[1.; 4]), &batch(&[0.; 4]), AdversarialForm::Log).unwrap();
        assert_eq!(scalar(&v), 0.0);
        let d: Map = Box::new(|x: &Tensor| Ok(x.clone()));
        let v = adversarial_term(&d, &batch(&[1.; 4]), &batch(&[0.; 4]), AdversarialForm::LeastSquares).unwrap();
        assert_eq!(scalar(&v), 0.0);
    }

    #[test]
    fn empty_and_mismatched_batches() {
        let d = const_logit(0.0);
        let empty = Tensor::zeros((0, 1, 2, 2), candle_core::DType::F64, &Device::Cpu).unwrap();
        assert!(adversarial_term(&d, &empty, &batch(&[0.; 4]), AdversarialForm::Log).is_err());
        let other = Tensor::zeros((1, 1, 3, 3), candle_core::DType::F64, &Device::Cpu).unwrap();
        assert!(adversarial_term(&d, &batch(&[0.; 4]), &other, AdversarialForm::Log).is_err());
    }

    #[test]
    fn non_finite_scores_propagate() {
        let d = const_logit(f64::NAN);
        let v = adversarial_term(&d, &batch(&[0.; 4]), &batch(&[0.; 4]), AdversarialForm::Log).unwrap();
        assert!(!scalar(&v).is_finite());
    }

    #[test]
    fn ccadn_has_two_terms() {
        let f = Fixture::new(2, ExperimentMode::Ccadn, 0.0);
        let terms = adversarial_terms(&f.chain, ExperimentMode::Ccadn, &f.plan).unwrap();
        let labels: Vec<String> = terms.iter().map(|(_, p)| f.chain.format_steps(&p.steps)).collect();
        assert_eq!(labels, ["X→Y", "Y→X"]);
        let v = total_adversarial(&f.chain, ExperimentMode::Ccadn, &f.nets(), &f.batches(), AdversarialForm::Log).unwrap();
        assert!((scalar(&v) - 2.0 * 2.0 * 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn mccan_terms_are_deduplicated_half_paths() {
        let f = Fixture::new(3, ExperimentMode::Mccan, 0.0);
        assert_eq!(all_half_paths(&f.chain, ExperimentMode::Mccan).unwrap().len(), 12);
        let terms = adversarial_terms(&f.chain, ExperimentMode::Mccan, &f.plan).unwrap();
        assert_eq!(terms.len(), 6);
        let v = total_adversarial(&f.chain, ExperimentMode::Mccan, &f.nets(), &f.batches(), AdversarialForm::Log).unwrap();
        assert!((scalar(&v) - 6.0 * 2.0 * 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cycle_loss_values() {
        let f = Fixture::new(3, ExperimentMode::Mccan, 0.0);
        let x = batch(&[0.1, 0.2, 0.3, 0.4]);
        for c in enumerate_cycles(&f.chain, ExperimentMode::Mccan).unwrap() {
            assert_eq!(scalar(&cycle_consistency(&c, &f.nets(), &x).unwrap()), 0.0);
        }
        // exact inverse pair on the X-Z edge
        let mut f = Fixture::new(3, ExperimentMode::Mccan, 0.0);
        f.gens[0].1 = shift(3.0);
        f.gens[1].1 = shift(-3.0);
        let c = f.chain.parse_cycle("X,Z,X").unwrap();
        assert!(scalar(&cycle_consistency(&c, &f.nets(), &x).unwrap()) < 1e-12);
        // one pixel off by +1 in a 2x2 image
        let mut f = Fixture::new(2, ExperimentMode::Ccadn, 0.0);
        f.gens[0].1 = Box::new(|x: &Tensor| x + batch(&[1.0, 0.0, 0.0, 0.0]));
        let c = f.chain.parse_cycle("X,Y,X").unwrap();
        assert!((scalar(&cycle_consistency(&c, &f.nets(), &x).unwrap()) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn identity_values() {
        let f = Fixture::new(3, ExperimentMode::Mccan, 0.0);
        assert_eq!(scalar(&identity_term(&f.nets(), &f.batches()).unwrap()), 0.0);
        let mut f = Fixture::new(3, ExperimentMode::Mccan, 0.0);
        f.gens[2].1 = shift(0.5);
        assert!((scalar(&identity_term(&f.nets(), &f.batches()).unwrap()) - 0.5).abs() < 1e-12);
        let plan = f.plan.clone();
        let empty = Nets { generators: BTreeMap::new(), discriminators: vec![], plan: &plan };
        assert_eq!(scalar(&identity_term(&empty, &f.batches()).unwrap()), 0.0);
    }

    #[test]
    fn composite_identity_and_weights() {
        let mut f = Fixture::new(3, ExperimentMode::Mccan, 0.3);
        f.gens[0].1 = shift(0.25);
        f.gens[3].1 = shift(-0.1);
        let w = LossWeights::default();
        for form in [AdversarialForm::Log, AdversarialForm::LeastSquares] {
            let o = composite_objective(&f.chain, ExperimentMode::Mccan, &f.nets(), &f.batches(), &w, form).unwrap();
            let b = &o.breakdown;
            assert_eq!(b.per_cycle_consistency.len(), 6);
            assert!((b.composite - b.recombine(&w)).abs() <= 1e-6 * b.composite.abs().max(1.0));
            let zero = LossWeights { lambda_cyc: 0.0, lambda_idt: 0.0 };
            let o0 = composite_objective(&f.chain, ExperimentMode::Mccan, &f.nets(), &f.batches(), &zero, form).unwrap();
            assert_eq!(o0.breakdown.composite, o0.breakdown.adversarial_total);
        }
        let o = composite_objective(
            &f.chain,
            ExperimentMode::MccanNoLocal,
            &Fixture::new(3, ExperimentMode::MccanNoLocal, 0.0).nets(),
            &f.batches(),
            &w,
            AdversarialForm::Log,
        )
        .unwrap();
        assert_eq!(o.breakdown.per_cycle_consistency.len(), 2);
    }

    #[test]
    fn plug_in_breakdown_arithmetic() {
        let b = LossBreakdown {
            adversarial_total: 1.0,
            per_cycle_consistency: (0..6).map(|i| (format!("c{i}"), 1.0)).collect(),
            identity_total: 1.0,
            composite: 0.0,
        };
        assert_eq!(b.recombine(&LossWeights::default()), 61.5);
    }

    #[test]
    fn missing_generator_is_a_configuration_error() {
        let mut f = Fixture::new(3, ExperimentMode::Mccan, 0.0);
        f.gens.retain(|(s, _)| *s != GeneratorSlot { from: DomainId(1), to: DomainId(2) });
        assert!(GeneratorPass::run(&f.chain, ExperimentMode::Mccan, &f.nets(), &f.batches()).is_err());
    }
}
