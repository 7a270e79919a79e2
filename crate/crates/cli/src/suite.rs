//! Oracle and invariant checks run by `mycelia validate`.
//!
//! The scenario builders are public so the acceptance tests exercise exactly
//! the same models as the command.

use std::fs;

use anyhow::Result;
use mycelia_core::analysis::{
    expected_mass, ks_exponential, martingale_residual, moment_audit, normalized_gaps, pair, tail_mass, Measure,
    TestFunction,
};
use mycelia_core::engine::{map_replicas, run, run_replicas, run_scripted, Moments, RunConfig};
use mycelia_core::kernels::{audit_assumptions, BranchingRates, InitialCondition, ModelSpec, SamplePlan};
use mycelia_core::meanfield::{evolve, GridSpec, MeanFieldConfig, SolverSettings};
use mycelia_core::{ExperimentConfig, Vec2};
use serde::Serialize;

use crate::commands::load;
use crate::{CheckFailed, Common};

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.into(),
            passed,
            detail,
        }
    }

    pub fn line(&self) -> String {
        format!(
            "{} {}: {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.detail
        )
    }
}

/// Pure branching from `count` atoms at the origin with scale `count`.
pub fn branching_model(b1: f64, b2: f64, count: usize) -> ModelSpec {
    ModelSpec {
        rates: BranchingRates::constant(b1, b2),
        scale: count as u64,
        initial: InitialCondition::PointMass { at: Vec2::ZERO, count },
        ..ModelSpec::frozen(vec![])
    }
}

/// Brownian particles started from a Gaussian of per-axis width `width`.
pub fn heat_model(sigma: f64, width: f64, count: usize) -> ModelSpec {
    ModelSpec {
        sigma,
        scale: count as u64,
        initial: InitialCondition::Gaussian {
            center: Vec2::ZERO,
            width,
            count,
        },
        ..ModelSpec::frozen(vec![])
    }
}

/// Exact heat solution for unit mass: isotropic Gaussian of variance `w² + σ²t`.
pub fn heat_exact(width: f64, sigma: f64, t: f64, x: Vec2) -> f64 {
    let var = width * width + sigma * sigma * t;
    (-x.norm_sq() / (2.0 * var)).exp() / (std::f64::consts::TAU * var)
}

/// Particle mean of the scaled mass at `horizon` against the ODE solution.
/// Returns `(mean, se, exact)`.
pub fn particle_mass_oracle(b1: f64, b2: f64, count: usize, replicas: usize, seed: u64) -> Result<(f64, f64, f64)> {
    let model = branching_model(b1, b2, count);
    let mut cfg = RunConfig::new(model, 1.0, 0.05);
    cfg.seed = seed;
    cfg.snapshot_stride = 20;
    let masses = map_replicas(&cfg, replicas, |_, out| out.last().count as f64 / count as f64)?;
    let m = Moments::from_slice(&masses);
    Ok((m.mean, m.se(), expected_mass(b1, b2, 1.0, 1.0)))
}

/// Mean-field mass at `t = 1`, Richardson-extrapolated from `dt` and `dt/2`.
/// Returns `(extrapolated, coarse, exact)`.
pub fn pde_mass_oracle(b1: f64, b2: f64, dt: f64) -> Result<(f64, f64, f64)> {
    let model = heat_model(0.0, 0.5, 1);
    let model = ModelSpec {
        rates: BranchingRates::constant(b1, b2),
        ..model
    };
    let mass = |dt: f64| -> Result<f64> {
        let solver = SolverSettings {
            grid: GridSpec::square(4.0, 32),
            dt,
            snapshot_stride: usize::MAX,
            ..SolverSettings::default()
        };
        Ok(evolve(&MeanFieldConfig::new(model.clone(), 1.0, solver))?.last().mass())
    };
    // The grid truncates a sliver of the initial Gaussian; start from what it holds.
    let grid = GridSpec::square(4.0, 32);
    let m0 = grid.gaussian(Vec2::ZERO, 0.5, 1.0).iter().sum::<f64>() * grid.cell_area();
    let coarse = mass(dt)?;
    let fine = mass(0.5 * dt)?;
    Ok((2.0 * fine - coarse, coarse, expected_mass(b1, b2, m0, 1.0)))
}

/// Max node error of the heat solver against the closed form at `t`.
pub fn heat_error(cells: usize, sigma: f64, width: f64, t: f64) -> Result<f64> {
    let solver = SolverSettings {
        grid: GridSpec::square(8.0, cells),
        dt: t,
        snapshot_stride: 1,
        ..SolverSettings::default()
    };
    let out = evolve(&MeanFieldConfig::new(heat_model(sigma, width, 1), t, solver))?;
    let field = out.last();
    let g = &field.grid;
    let mut err = 0.0f64;
    for iy in 0..g.ny() {
        for ix in 0..g.nx() {
            let c = g.center(ix, iy);
            err = err.max((field.rho[g.index(ix, iy)] - heat_exact(width, sigma, t, c)).abs());
        }
    }
    Ok(err)
}

/// Inter-event gaps of constant-b1 runs normalised by the exact total rate,
/// together with the thinning acceptance fraction.
pub fn thinning_gaps(
    b1: f64,
    bound: f64,
    count: usize,
    horizon: f64,
    replicas: usize,
    seed: u64,
) -> Result<(Vec<f64>, f64)> {
    let mut model = branching_model(b1, 0.0, count);
    model.rates.b1_bound = bound;
    let mut cfg = RunConfig::new(model, horizon, 0.05);
    cfg.seed = seed;
    cfg.snapshot_stride = usize::MAX;
    let per = map_replicas(&cfg, replicas, |_, out| {
        (normalized_gaps(&out.record, |n| b1 * n as f64), out.stats)
    })?;
    let mut gaps = Vec::new();
    let (mut cand, mut acc) = (0u64, 0u64);
    for (g, s) in per {
        gaps.extend(g);
        cand += s.actor_candidates;
        acc += s.apical_accepted;
    }
    Ok((gaps, acc as f64 / cand as f64))
}

fn check_audit(cfg: &ExperimentConfig) -> Check {
    let rep = audit_assumptions(&cfg.model, &SamplePlan::default());
    let failed: Vec<&str> = rep.failures().map(|c| c.name.as_str()).collect();
    let uncertified = rep
        .checks
        .iter()
        .filter(|c| c.status == mycelia_core::kernels::AuditStatus::NotCertified)
        .count();
    Check::new(
        "structural assumptions",
        failed.is_empty(),
        if failed.is_empty() {
            format!("{} checks, {uncertified} not certified", rep.checks.len())
        } else {
            format!("violated: {}", failed.join("; "))
        },
    )
}

fn check_frozen() -> Result<Check> {
    let atoms = vec![Vec2::new(1.0, 2.0), Vec2::new(-0.5, 0.25), Vec2::new(3.0, -3.0)];
    let out = run(&RunConfig::new(ModelSpec::frozen(atoms.clone()), 2.0, 0.1))?;
    let ok = out.snapshots.iter().all(|s| s.positions == atoms) && out.record.events().is_empty();
    Ok(Check::new(
        "frozen invariance",
        ok,
        format!(
            "{} snapshots, {} events",
            out.snapshots.len(),
            out.record.events().len()
        ),
    ))
}

fn check_determinism(cfg: &ExperimentConfig) -> Result<Check> {
    let mut run_cfg = cfg.run_config();
    run_cfg.horizon = run_cfg.horizon.min(0.5);
    let a = run(&run_cfg)?;
    let b = run(&run_cfg)?;
    let replay = run_scripted(&run_cfg, a.record.events().to_vec())?;
    let bytes = |o: &mycelia_core::RunOutput| {
        let mut v = Vec::new();
        o.write_snapshots(&mut v).map(|_| v)
    };
    let (ba, bb, br) = (bytes(&a)?, bytes(&b)?, bytes(&replay)?);
    Ok(Check::new(
        "determinism and event replay",
        ba == bb && ba == br,
        format!(
            "{} bytes of snapshots, {} events to t = {}",
            ba.len(),
            a.record.events().len(),
            run_cfg.horizon
        ),
    ))
}

fn check_particle_mass() -> Result<Check> {
    let (mean, se, exact) = particle_mass_oracle(1.0, 0.5, 100, 200, 11)?;
    Ok(Check::new(
        "particle mass ODE",
        (mean - exact).abs() <= 3.0 * se,
        format!("mean {mean:.5} ± {se:.5}, exact {exact:.5}"),
    ))
}

fn check_pde_mass() -> Result<Check> {
    let (m, _, exact) = pde_mass_oracle(1.0, 0.5, 0.01)?;
    let rel = (m - exact).abs() / exact;
    Ok(Check::new(
        "mean-field mass ODE",
        rel < 1e-3,
        format!("relative error {rel:.2e}"),
    ))
}

fn check_heat() -> Result<Check> {
    let coarse = heat_error(128, 1.0, 0.7, 0.5)?;
    let fine = heat_error(256, 1.0, 0.7, 0.5)?;
    Ok(Check::new(
        "heat closed form",
        fine < 1e-4 && coarse / fine >= 1.5,
        format!(
            "max error {fine:.2e} at 256 cells, ratio {:.2} under halving",
            coarse / fine
        ),
    ))
}

fn check_moments(cfg: &ExperimentConfig) -> Result<Check> {
    let stats = run_replicas(&cfg.run_config(), cfg.replicas.count.max(2), &[])?;
    let audit = moment_audit(&stats, &cfg.model);
    Ok(Check::new(
        "moment bounds",
        audit.passed(),
        match audit.first_failure() {
            None => format!("{} snapshots over {} replicas", audit.rows.len(), stats.replicas),
            Some(r) => format!("exceeded at t = {}", r.t),
        },
    ))
}

fn check_ks() -> Result<Check> {
    let (gaps, frac) = thinning_gaps(1.0, 2.0, 100, 1.0, 10, 5)?;
    let ks = ks_exponential(&gaps);
    Ok(Check::new(
        "thinning gaps exponential",
        ks.p_value > 0.01 && (frac - 0.5).abs() < 0.02,
        format!(
            "KS D = {:.4}, p = {:.3} over {} gaps; acceptance {frac:.4}",
            ks.statistic, ks.p_value, ks.n
        ),
    ))
}

fn check_martingale() -> Result<Check> {
    let model = branching_model(1.0, 0.5, 50);
    let mut run_cfg = RunConfig::new(model.clone(), 1.0, 0.05);
    run_cfg.seed = 17;
    let f = TestFunction::Constant { value: 1.0 };
    let values = map_replicas(&run_cfg, 200, |_, out| {
        martingale_residual(&out, &f, &model).map(|m| m.last())
    })?;
    let values: Vec<f64> = values.into_iter().collect::<Result<_, _>>()?;
    let m = Moments::from_slice(&values);
    Ok(Check::new(
        "martingale mean",
        m.mean.abs() <= 3.0 * m.se(),
        format!("mean {:.2e} ± {:.2e}", m.mean, m.se()),
    ))
}

fn check_tail() -> Result<Check> {
    let (sigma, width, t) = (1.0, 0.5, 1.0);
    let mut run_cfg = RunConfig::new(heat_model(sigma, width, 100), t, 0.1);
    run_cfg.seed = 23;
    let radius = 5.0 * (width * width + sigma * sigma * t).sqrt();
    let tails = map_replicas(&run_cfg, 200, |_, out| {
        let s = out.last();
        tail_mass(Measure::snapshot(s, 100.0), radius)
            / pair(Measure::snapshot(s, 100.0), &TestFunction::Constant { value: 1.0 })
    })?;
    let mean = Moments::from_slice(&tails).mean;
    Ok(Check::new(
        "tail mass",
        mean < 1e-4,
        format!("mean tail fraction {mean:.2e} beyond R = {radius:.3}"),
    ))
}

/// Every check in order; oracle checks do not depend on `cfg`.
pub fn run_suite(cfg: &ExperimentConfig) -> Result<Vec<Check>> {
    Ok(vec![
        check_audit(cfg),
        check_frozen()?,
        check_determinism(cfg)?,
        check_moments(cfg)?,
        check_particle_mass()?,
        check_pde_mass()?,
        check_heat()?,
        check_ks()?,
        check_martingale()?,
        check_tail()?,
    ])
}

pub fn validate(common: &Common) -> Result<()> {
    let (cfg, dir) = load(common)?;
    let checks = run_suite(&cfg)?;
    for c in &checks {
        println!("{}", c.line());
    }
    let hash = cfg.hash();
    let report = serde_json::json!({ "config_hash": hash, "checks": checks });
    fs::write(
        dir.join(format!("validate-{hash}.json")),
        serde_json::to_string_pretty(&report)?,
    )?;
    let failed = checks.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        return Err(CheckFailed(format!("{failed} of {} checks failed", checks.len())).into());
    }
    Ok(())
}
