//! Linear chains of image domains ordered by noise level, and the cycles,
//! half-paths and discriminator bindings derived from them.
//!
//! Domain 0 is the noisiest domain and the last domain is the cleanest one.
//! Generators exist only between adjacent domains, in both directions.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ChainError {
    #[error("invalid chain: {0}")]
    InvalidChain(String),
    #[error("mode {mode} requires {expected} domains, chain has {actual}")]
    ModeMismatch {
        mode: ExperimentMode,
        expected: usize,
        actual: usize,
    },
    #[error("invalid path or cycle: {0}")]
    InvalidWalk(String),
    #[error("unknown domain `{0}`")]
    UnknownDomain(String),
}

/// Index of a domain inside a [`DomainChain`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DomainId(pub usize);

impl DomainId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// The four experiment topologies: the two-domain baseline, the full
/// multi-cycle model, and its two ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentMode {
    Ccadn,
    Mccan,
    MccanNoLocal,
    MccanNoGlobal,
}

impl ExperimentMode {
    pub const ALL: [ExperimentMode; 4] = [
        ExperimentMode::Ccadn,
        ExperimentMode::Mccan,
        ExperimentMode::MccanNoLocal,
        ExperimentMode::MccanNoGlobal,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentMode::Ccadn => "ccadn",
            ExperimentMode::Mccan => "mccan",
            ExperimentMode::MccanNoLocal => "mccan-no-local",
            ExperimentMode::MccanNoGlobal => "mccan-no-global",
        }
    }

    fn uses_local(self) -> bool {
        !matches!(self, ExperimentMode::MccanNoLocal)
    }

    fn uses_global(self) -> bool {
        matches!(self, ExperimentMode::Mccan | ExperimentMode::MccanNoLocal)
    }
}

impl fmt::Display for ExperimentMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "ccadn" => Ok(ExperimentMode::Ccadn),
            "mccan" => Ok(ExperimentMode::Mccan),
            "mccan-no-local" => Ok(ExperimentMode::MccanNoLocal),
            "mccan-no-global" => Ok(ExperimentMode::MccanNoGlobal),
            other => Err(format!(
                "unknown mode `{other}` (expected ccadn, mccan, mccan-no-local or mccan-no-global)"
            )),
        }
    }
}

/// One directed generator slot between two adjacent domains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GeneratorSlot {
    pub from: DomainId,
    pub to: DomainId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainChain {
    names: Vec<String>,
}

impl DomainChain {
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn domains(&self) -> impl Iterator<Item = DomainId> + '_ {
        (0..self.names.len()).map(DomainId)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, id: DomainId) -> &str {
        &self.names[id.0]
    }

    pub fn head(&self) -> DomainId {
        DomainId(0)
    }

    pub fn tail(&self) -> DomainId {
        DomainId(self.names.len() - 1)
    }

    pub fn contains(&self, id: DomainId) -> bool {
        id.0 < self.names.len()
    }

    pub fn id_of(&self, name: &str) -> Result<DomainId, ChainError> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(DomainId)
            .ok_or_else(|| ChainError::UnknownDomain(name.to_string()))
    }

    /// Two generators per adjacent pair: forward (towards the clean end)
    /// first, then backward.
    pub fn generator_slots(&self) -> Vec<GeneratorSlot> {
        (0..self.len() - 1)
            .flat_map(|p| {
                [
                    GeneratorSlot { from: DomainId(p), to: DomainId(p + 1) },
                    GeneratorSlot { from: DomainId(p + 1), to: DomainId(p) },
                ]
            })
            .collect()
    }

    /// Noisy-to-clean inference path through the whole chain.
    pub fn inference_path(&self) -> Path {
        Path { steps: self.domains().collect() }
    }

    pub fn format_steps(&self, steps: &[DomainId]) -> String {
        steps.iter().map(|d| self.name(*d)).collect::<Vec<_>>().join("→")
    }

    /// Parses a walk like `X,Z,Y,Z,X` (commas, `->` or `→` separators).
    pub fn parse_steps(&self, text: &str) -> Result<Vec<DomainId>, ChainError> {
        text.replace("->", ",")
            .replace('→', ",")
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| self.id_of(s))
            .collect()
    }

    pub fn parse_cycle(&self, text: &str) -> Result<Cycle, ChainError> {
        let steps = self.parse_steps(text)?;
        let kind = if steps.len() == 3 { CycleKind::Local } else { CycleKind::Global };
        Cycle::new(self, steps, kind)
    }
}

fn default_names(n: usize) -> Vec<String> {
    match n {
        2 => vec!["X".into(), "Y".into()],
        3 => vec!["X".into(), "Z".into(), "Y".into()],
        _ => std::iter::once("X".to_string())
            .chain((1..n - 1).map(|i| format!("Z{i}")))
            .chain(std::iter::once("Y".to_string()))
            .collect(),
    }
}

pub fn build_chain(n_domains: usize, names: Option<Vec<String>>) -> Result<DomainChain, ChainError> {
    if n_domains < 2 {
        return Err(ChainError::InvalidChain(format!(
            "a chain needs at least 2 domains, got {n_domains}"
        )));
    }
    let names = match names {
        Some(names) => {
            if names.len() != n_domains {
                return Err(ChainError::InvalidChain(format!(
                    "{} names given for {n_domains} domains",
                    names.len()
                )));
            }
            for (i, a) in names.iter().enumerate() {
                if a.is_empty() || names[..i].contains(a) {
                    return Err(ChainError::InvalidChain(format!("duplicate or empty name `{a}`")));
                }
            }
            names
        }
        None => default_names(n_domains),
    };
    Ok(DomainChain { names })
}

/// A directed walk along adjacent domains.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Path {
    pub steps: Vec<DomainId>,
}

impl Path {
    pub fn new(chain: &DomainChain, steps: Vec<DomainId>) -> Result<Self, ChainError> {
        check_walk(chain, &steps)?;
        if steps.len() < 2 {
            return Err(ChainError::InvalidWalk("a path needs at least 2 steps".into()));
        }
        Ok(Path { steps })
    }

    pub fn source(&self) -> DomainId {
        self.steps[0]
    }

    pub fn target(&self) -> DomainId {
        *self.steps.last().expect("non-empty path")
    }

    /// Generator slots applied in order.
    pub fn generators(&self) -> impl Iterator<Item = GeneratorSlot> + '_ {
        self.steps.windows(2).map(|w| GeneratorSlot { from: w[0], to: w[1] })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CycleKind {
    Local,
    Global,
}

/// A closed walk that goes out along the chain and comes straight back.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Cycle {
    pub steps: Vec<DomainId>,
    pub kind: CycleKind,
    pub source: DomainId,
}

fn check_walk(chain: &DomainChain, steps: &[DomainId]) -> Result<(), ChainError> {
    if let Some(bad) = steps.iter().find(|d| !chain.contains(**d)) {
        return Err(ChainError::InvalidWalk(format!("domain {} is not in the chain", bad.0)));
    }
    for w in steps.windows(2) {
        if w[0].0.abs_diff(w[1].0) != 1 {
            return Err(ChainError::InvalidWalk(format!(
                "{} and {} are not adjacent",
                chain.name(w[0]),
                chain.name(w[1])
            )));
        }
    }
    Ok(())
}

/// Index of the single direction reversal of an out-and-back walk.
fn turning_index(steps: &[DomainId]) -> Option<usize> {
    let up = steps[1].0 > steps[0].0;
    let t = steps
        .windows(2)
        .position(|w| (w[1].0 > w[0].0) != up)?;
    let back_ok = steps[t..].windows(2).all(|w| (w[1].0 > w[0].0) != up);
    back_ok.then_some(t)
}

impl Cycle {
    pub fn new(chain: &DomainChain, steps: Vec<DomainId>, kind: CycleKind) -> Result<Self, ChainError> {
        check_walk(chain, &steps)?;
        if steps.len() < 3 || steps.first() != steps.last() {
            return Err(ChainError::InvalidWalk("a cycle must return to its source".into()));
        }
        let t = turning_index(&steps)
            .ok_or_else(|| ChainError::InvalidWalk("a cycle must go out and come straight back".into()))?;
        match kind {
            CycleKind::Local if steps.len() != 3 => {
                return Err(ChainError::InvalidWalk("a local cycle has exactly 3 steps".into()))
            }
            CycleKind::Global => {
                let ends = [steps[0], steps[t]];
                if !(ends.contains(&chain.head()) && ends.contains(&chain.tail())) {
                    return Err(ChainError::InvalidWalk(
                        "a global cycle must traverse the whole chain".into(),
                    ));
                }
            }
            _ => {}
        }
        let source = steps[0];
        Ok(Cycle { steps, kind, source })
    }

    pub fn turning_domain(&self) -> DomainId {
        self.steps[turning_index(&self.steps).expect("validated cycle")]
    }

    pub fn generators(&self) -> impl Iterator<Item = GeneratorSlot> + '_ {
        self.steps.windows(2).map(|w| GeneratorSlot { from: w[0], to: w[1] })
    }
}

/// Splits a cycle at its turning point into the outgoing and returning halves.
pub fn half_paths(cycle: &Cycle) -> (Path, Path) {
    let t = turning_index(&cycle.steps).expect("validated cycle");
    (
        Path { steps: cycle.steps[..=t].to_vec() },
        Path { steps: cycle.steps[t..].to_vec() },
    )
}

fn out_and_back(from: usize, to: usize) -> Vec<DomainId> {
    let out: Vec<usize> = if from < to {
        (from..=to).collect()
    } else {
        (to..=from).rev().collect()
    };
    let back = out.iter().rev().skip(1).copied();
    out.iter().copied().chain(back).map(DomainId).collect()
}

/// Active cycles of `mode` in a fixed order: local cycles by pair index then
/// source, followed by the global cycles (left origin first). Cycles with an
/// identical step sequence are kept once.
pub fn enumerate_cycles(chain: &DomainChain, mode: ExperimentMode) -> Result<Vec<Cycle>, ChainError> {
    let n = chain.len();
    if mode == ExperimentMode::Ccadn && n != 2 {
        return Err(ChainError::ModeMismatch { mode, expected: 2, actual: n });
    }
    let mut cycles: Vec<Cycle> = Vec::new();
    let mut push = |steps: Vec<DomainId>, kind: CycleKind| {
        if !cycles.iter().any(|c| c.steps == steps) {
            let source = steps[0];
            cycles.push(Cycle { steps, kind, source });
        }
    };
    if mode.uses_local() {
        for p in 0..n - 1 {
            push(out_and_back(p, p + 1), CycleKind::Local);
            push(out_and_back(p + 1, p), CycleKind::Local);
        }
    }
    if mode.uses_global() {
        push(out_and_back(0, n - 1), CycleKind::Global);
        push(out_and_back(n - 1, 0), CycleKind::Global);
    }
    Ok(cycles)
}

/// Every distinct half-path of the active cycles, in cycle order.
pub fn active_paths(chain: &DomainChain, mode: ExperimentMode) -> Result<Vec<Path>, ChainError> {
    let mut out: Vec<Path> = Vec::new();
    for cycle in enumerate_cycles(chain, mode)? {
        let (a, b) = half_paths(&cycle);
        for p in [a, b] {
            if !out.contains(&p) {
                out.push(p);
            }
        }
    }
    Ok(out)
}

pub fn paths_ending_at(
    chain: &DomainChain,
    mode: ExperimentMode,
    domain: DomainId,
) -> Result<Vec<Path>, ChainError> {
    if !chain.contains(domain) {
        return Err(ChainError::UnknownDomain(format!("#{}", domain.0)));
    }
    Ok(active_paths(chain, mode)?
        .into_iter()
        .filter(|p| p.target() == domain)
        .collect())
}

/// A discriminator instance: the domain it judges and the half-paths whose
/// fakes it sees.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscriminatorSlot {
    pub domain: DomainId,
    /// Position among the discriminators of the same domain.
    pub replica: usize,
    pub paths: Vec<Path>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscriminatorPlan {
    pub slots: Vec<DiscriminatorSlot>,
}

impl DiscriminatorPlan {
    pub fn counts(&self) -> BTreeMap<DomainId, usize> {
        let mut m = BTreeMap::new();
        for s in &self.slots {
            *m.entry(s.domain).or_insert(0) += 1;
        }
        m
    }

    /// Slot index judging `path`.
    pub fn slot_for(&self, path: &Path) -> Option<usize> {
        self.slots.iter().position(|s| s.paths.contains(path))
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }
}

/// One discriminator per domain, except that without global cycles every
/// interior domain gets one discriminator per neighbouring local pair, so
/// the two cascaded two-domain systems share no discriminator.
pub fn discriminator_assignment(
    chain: &DomainChain,
    mode: ExperimentMode,
) -> Result<DiscriminatorPlan, ChainError> {
    let paths = active_paths(chain, mode)?;
    let mut slots = Vec::new();
    for d in chain.domains() {
        let ending: Vec<Path> = paths.iter().filter(|p| p.target() == d).cloned().collect();
        let interior = d != chain.head() && d != chain.tail();
        if mode == ExperimentMode::MccanNoGlobal && interior {
            // Local half-paths into d come from exactly one neighbour.
            for neighbour in [DomainId(d.0 - 1), DomainId(d.0 + 1)] {
                slots.push(DiscriminatorSlot {
                    domain: d,
                    replica: slots.iter().filter(|s: &&DiscriminatorSlot| s.domain == d).count(),
                    paths: ending
                        .iter()
                        .filter(|p| p.steps[p.steps.len() - 2] == neighbour)
                        .cloned()
                        .collect(),
                });
            }
        } else {
            slots.push(DiscriminatorSlot { domain: d, replica: 0, paths: ending });
        }
    }
    Ok(DiscriminatorPlan { slots })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(chain: &DomainChain, cycles: &[Cycle]) -> Vec<String> {
        cycles.iter().map(|c| chain.format_steps(&c.steps)).collect()
    }

    #[test]
    fn build_chain_sizes() {
        let c3 = build_chain(3, None).unwrap();
        assert_eq!(c3.names(), ["X", "Z", "Y"]);
        assert_eq!(c3.generator_slots().len(), 4);
        let c2 = build_chain(2, None).unwrap();
        assert_eq!(c2.names(), ["X", "Y"]);
        assert_eq!(c2.generator_slots().len(), 2);
        assert!(matches!(build_chain(1, None), Err(ChainError::InvalidChain(_))));
        assert!(build_chain(2, Some(vec!["a".into(), "a".into()])).is_err());
        assert!(build_chain(3, Some(vec!["a".into(), "b".into()])).is_err());
        assert_eq!(build_chain(4, None).unwrap().names(), ["X", "Z1", "Z2", "Y"]);
    }

    #[test]
    fn three_domain_cycles() {
        let chain = build_chain(3, None).unwrap();
        let cycles = enumerate_cycles(&chain, ExperimentMode::Mccan).unwrap();
        assert_eq!(
            names(&chain, &cycles),
            ["X→Z→X", "Z→X→Z", "Z→Y→Z", "Y→Z→Y", "X→Z→Y→Z→X", "Y→Z→X→Z→Y"]
        );
        let no_local = enumerate_cycles(&chain, ExperimentMode::MccanNoLocal).unwrap();
        assert_eq!(names(&chain, &no_local), ["X→Z→Y→Z→X", "Y→Z→X→Z→Y"]);
        assert!(no_local.iter().all(|c| c.kind == CycleKind::Global));
        let no_global = enumerate_cycles(&chain, ExperimentMode::MccanNoGlobal).unwrap();
        assert_eq!(no_global.len(), 4);
        assert!(matches!(
            enumerate_cycles(&chain, ExperimentMode::Ccadn),
            Err(ChainError::ModeMismatch { .. })
        ));
    }

    #[test]
    fn two_domain_cycles_dedupe() {
        let chain = build_chain(2, None).unwrap();
        let ccadn = enumerate_cycles(&chain, ExperimentMode::Ccadn).unwrap();
        assert_eq!(names(&chain, &ccadn), ["X→Y→X", "Y→X→Y"]);
        assert_eq!(enumerate_cycles(&chain, ExperimentMode::Mccan).unwrap(), ccadn);
    }

    #[test]
    fn half_path_split() {
        let chain = build_chain(3, None).unwrap();
        let c = chain.parse_cycle("X,Z,X").unwrap();
        let (a, b) = half_paths(&c);
        assert_eq!(chain.format_steps(&a.steps), "X→Z");
        assert_eq!(chain.format_steps(&b.steps), "Z→X");
        let g = chain.parse_cycle("X→Z→Y→Z→X").unwrap();
        assert_eq!(g.kind, CycleKind::Global);
        assert_eq!(g.turning_domain(), DomainId(2));
        let (a, b) = half_paths(&g);
        assert_eq!(chain.format_steps(&a.steps), "X→Z→Y");
        assert_eq!(chain.format_steps(&b.steps), "Y→Z→X");
        let (a, b) = half_paths(&chain.parse_cycle("Y,Z,Y").unwrap());
        assert_eq!((a.steps.clone(), b.steps.clone()), (vec![DomainId(2), DomainId(1)], vec![DomainId(1), DomainId(2)]));
    }

    #[test]
    fn invalid_cycles_rejected() {
        let chain = build_chain(4, None).unwrap();
        assert!(chain.parse_cycle("X,Z2,X").is_err());
        assert!(chain.parse_cycle("X,Z1,Z2,Z1,X").is_err(), "partial span is not global");
        assert!(chain.parse_cycle("X,Z1,X,Z1,X").is_err());
        assert!(chain.parse_cycle("X,Z1").is_err());
        assert!(chain.parse_cycle("X,Q,X").is_err());
    }

    #[test]
    fn paths_into_domains() {
        let chain = build_chain(3, None).unwrap();
        let fmt = |ps: Vec<Path>| ps.iter().map(|p| chain.format_steps(&p.steps)).collect::<Vec<_>>();
        let y = paths_ending_at(&chain, ExperimentMode::Mccan, DomainId(2)).unwrap();
        assert_eq!(fmt(y), ["Z→Y", "X→Z→Y"]);
        let y = paths_ending_at(&chain, ExperimentMode::MccanNoGlobal, DomainId(2)).unwrap();
        assert_eq!(fmt(y), ["Z→Y"]);
        let c2 = build_chain(2, None).unwrap();
        let x = paths_ending_at(&c2, ExperimentMode::Ccadn, DomainId(0)).unwrap();
        assert_eq!(x.len(), 1);
        assert_eq!(c2.format_steps(&x[0].steps), "Y→X");
        assert_eq!(active_paths(&chain, ExperimentMode::Mccan).unwrap().len(), 6);
    }

    #[test]
    fn discriminator_counts() {
        let chain = build_chain(3, None).unwrap();
        let counts = |m| discriminator_assignment(&chain, m).unwrap().counts().into_values().collect::<Vec<_>>();
        assert_eq!(counts(ExperimentMode::Mccan), [1, 1, 1]);
        assert_eq!(counts(ExperimentMode::MccanNoGlobal), [1, 2, 1]);
        assert_eq!(counts(ExperimentMode::MccanNoLocal), [1, 1, 1]);
        let c2 = build_chain(2, None).unwrap();
        let plan = discriminator_assignment(&c2, ExperimentMode::Ccadn).unwrap();
        assert_eq!(plan.counts().into_values().collect::<Vec<_>>(), [1, 1]);

        let plan = discriminator_assignment(&chain, ExperimentMode::MccanNoGlobal).unwrap();
        let z: Vec<_> = plan.slots.iter().filter(|s| s.domain == DomainId(1)).collect();
        assert_eq!(z[0].paths, vec![Path { steps: vec![DomainId(0), DomainId(1)] }]);
        assert_eq!(z[1].paths, vec![Path { steps: vec![DomainId(2), DomainId(1)] }]);
        // every active path is judged by exactly one slot
        for p in active_paths(&chain, ExperimentMode::MccanNoGlobal).unwrap() {
            assert_eq!(plan.slots.iter().filter(|s| s.paths.contains(&p)).count(), 1);
        }
    }

    #[test]
    fn mode_parsing() {
        for m in ExperimentMode::ALL {
            assert_eq!(m.as_str().parse::<ExperimentMode>().unwrap(), m);
        }
        assert_eq!("mccan_no_global".parse::<ExperimentMode>().unwrap(), ExperimentMode::MccanNoGlobal);
        assert!("cyclegan".parse::<ExperimentMode>().is_err());
    }
}
