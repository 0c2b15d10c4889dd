//! Finite-difference checks of every loss term, shared by the test suite
//! and the acceptance harness. Each check yields `(name, max relative error)`.

use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor};
use mccan::domain_chain::{build_chain, discriminator_assignment, ExperimentMode, GeneratorSlot};
use mccan::losses::*;
use mccan::networks::{make_generator, GeneratorSpec, ImageMap, Parameterized};

use super::*;

pub const FD_TOL: f64 = 1e-3;

pub fn adversarial_checks() -> Vec<(String, f64)> {
    let mut out = Vec::new();
    let g = ToyGenerator::new(1);
    let d = ToyDiscriminator::new(2);
    let (x, y) = (batch(2, 1), batch(2, 2));
    for form in [AdversarialForm::Log, AdversarialForm::LeastSquares] {
        let f = || adversarial_term(&d, &y, &g.forward(&x)?, form);
        let mut vars = d.vars();
        vars.extend(g.vars());
        out.push((format!("{form:?} value"), max_fd_error(&f, &vars, 1e-5, 1e-6)));
        let f = || generator_adversarial(&d, &y, &g.forward(&x)?, form);
        out.push((format!("{form:?} generator"), max_fd_error(&f, &g.vars(), 1e-5, 1e-6)));
    }
    out
}

pub fn cycle_identity_checks() -> Vec<(String, f64)> {
    let chain = build_chain(2, None).unwrap();
    let plan = discriminator_assignment(&chain, ExperimentMode::Ccadn).unwrap();
    let (ga, gb) = (ToyGenerator::new(3), ToyGenerator::new(4));
    let slots = chain.generator_slots();
    let mut generators: BTreeMap<GeneratorSlot, &dyn ImageMap> = BTreeMap::new();
    generators.insert(slots[0], &ga);
    generators.insert(slots[1], &gb);
    let nets = Nets { generators, discriminators: vec![], plan: &plan };
    let batches = [batch(2, 5), batch(2, 6)];
    let mut vars = ga.vars();
    vars.extend(gb.vars());
    let cycle = chain.parse_cycle("X→Y→X").unwrap();
    vec![
        ("cycle".into(), max_fd_error(&|| cycle_consistency(&cycle, &nets, &batches[0]), &vars, 1e-6, 1e-6)),
        ("identity".into(), max_fd_error(&|| identity_term(&nets, &batches), &vars, 1e-6, 1e-6)),
    ]
}

pub fn composite_checks() -> Vec<(String, f64)> {
    let mut out = Vec::new();
    let chain = build_chain(3, None).unwrap();
    let plan = discriminator_assignment(&chain, ExperimentMode::Mccan).unwrap();
    let gens: Vec<ToyGenerator> = (0..4).map(|i| ToyGenerator::new(10 + i)).collect();
    let discs: Vec<ToyDiscriminator> = (0..3).map(|i| ToyDiscriminator::new(20 + i)).collect();
    let generators = chain.generator_slots().into_iter().zip(&gens).map(|(s, g)| (s, g as &dyn ImageMap)).collect();
    let nets = Nets { generators, discriminators: discs.iter().map(|d| d as &dyn ImageMap).collect(), plan: &plan };
    let batches = [batch(1, 7), batch(1, 8), batch(1, 9)];
    let vars: Vec<_> = gens.iter().flat_map(|g| g.vars()).collect();
    for form in [AdversarialForm::Log, AdversarialForm::LeastSquares] {
        let f = || {
            composite_objective(&chain, ExperimentMode::Mccan, &nets, &batches, &LossWeights::default(), form)
                .map(|o| o.composite)
        };
        out.push((format!("composite {form:?}"), max_fd_error(&f, &vars, 1e-6, 1e-6)));
    }
    out
}

/// The real generator (gather convolutions, instance norm, residual blocks,
/// zero-insertion upsampling) on 4×4 inputs.
pub fn generator_checks() -> Vec<(String, f64)> {
    let spec = GeneratorSpec { in_channels: 1, base_width: 2, n_resblocks: 1, n_down: 1, crop_size: 4 };
    let g = make_generator(&spec, DType::F64, 5).unwrap();
    let x = Tensor::from_vec((0..16).map(|i| (i as f64 * 0.71).cos() * 0.5).collect::<Vec<_>>(), (1, 1, 4, 4), &Device::Cpu)
        .unwrap();
    let f = || mean_l1(&g.forward(&g.forward(&x)?)?, &x);
    let vars: Vec<_> = g.params().into_iter().map(|(_, v)| v).collect();
    vec![("generator".into(), max_fd_error(&f, &vars, 1e-6, 1e-6))]
}

pub fn all_checks() -> Vec<(String, f64)> {
    let mut v = adversarial_checks();
    v.extend(cycle_identity_checks());
    v.extend(composite_checks());
    v.extend(generator_checks());
    v
}
