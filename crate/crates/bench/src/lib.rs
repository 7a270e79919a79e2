//! Fixtures shared by the benchmarks.

use mycelia_core::engine::{run, RunConfig, RunOutput};
use mycelia_core::kernels::{BranchingRates, ExpDecayKernel, InteractionKernel, KernelSign, ModelSpec};
use mycelia_core::Vec2;

/// The attracting memory kernel used by every fixture.
pub fn fixture_kernel() -> InteractionKernel {
    InteractionKernel::ExpDecay(ExpDecayKernel::new(0.5, 1.0, 0.5, KernelSign::Attraction))
}

/// A small interacting population with a few hundred lineages of history.
pub fn interacting_history(count: usize, horizon: f64) -> RunOutput {
    let atoms: Vec<Vec2> = (0..count)
        .map(|i| {
            let a = i as f64 * 2.399963;
            let r = (i as f64 / count as f64).sqrt();
            Vec2::new(r * a.cos(), r * a.sin())
        })
        .collect();
    let mut model = ModelSpec::frozen(atoms);
    model.sigma = 0.3;
    model.scale = count as u64;
    model.rates = BranchingRates::constant(1.0, 0.2);
    model.kernel = fixture_kernel();
    let mut cfg = RunConfig::new(model, horizon, 0.05);
    cfg.seed = 1;
    run(&cfg).expect("fixture run")
}
