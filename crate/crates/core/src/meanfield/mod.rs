//! Mean-field density solver: heat, memory-driven transport and reaction,
//! split per time step on a truncated grid.

mod fft;
mod grid;
mod operators;

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernels::ModelSpec;

pub use fft::Spectral;
pub use grid::{DensityField, GridSpec};
pub use operators::{
    heat_step, reaction_step, transport_step, MemoryRing, ReactionReport, ReactionTerms, VelocityField,
};

#[derive(Debug, Error)]
pub enum MeanFieldError {
    #[error("CFL violated: Courant number {courant:.3} with dt = {dt}")]
    Cfl { courant: f64, dt: f64 },
    #[error("memory ring starts at {earliest} but the integral needs data from {needed}")]
    RingUnderflow { needed: f64, earliest: f64 },
    #[error(
        "leaked mass fraction {fraction:.3e} at t = {time} exceeds the threshold {threshold:.1e}; enlarge the domain"
    )]
    Leak { fraction: f64, threshold: f64, time: f64 },
    #[error("non-finite density at t = {0}")]
    Numerical(f64),
    #[error("invalid mean-field configuration: {}", .0.join("; "))]
    Config(Vec<String>),
}

/// Solver settings that are not part of the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSettings {
    pub grid: GridSpec,
    pub dt: f64,
    /// Store a memory slice every this many steps.
    pub memory_stride: usize,
    pub snapshot_stride: usize,
    /// Abort once cumulative leak exceeds this fraction of the peak mass.
    pub leak_threshold: f64,
    /// Smoothing width for atomic initial data; defaults to twice the cell size.
    pub bandwidth: Option<f64>,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            grid: GridSpec::default(),
            dt: 0.01,
            memory_stride: 1,
            snapshot_stride: 10,
            leak_threshold: 1e-2,
            bandwidth: None,
        }
    }
}

/// A full mean-field run.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanFieldConfig {
    pub model: ModelSpec,
    pub horizon: f64,
    pub solver: SolverSettings,
}

impl MeanFieldConfig {
    pub fn new(model: ModelSpec, horizon: f64, solver: SolverSettings) -> Self {
        Self { model, horizon, solver }
    }

    pub fn bandwidth(&self) -> f64 {
        let h = self.solver.grid.h();
        self.solver.bandwidth.unwrap_or(2.0 * h.x.max(h.y))
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = self.model.validate();
        errs.extend(self.solver.grid.validate());
        if !(self.solver.dt > 0.0 && self.solver.dt.is_finite()) {
            errs.push(format!("mean-field dt must be positive, got {}", self.solver.dt));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            errs.push(format!("horizon must be positive, got {}", self.horizon));
        }
        if self.solver.memory_stride == 0 || self.solver.snapshot_stride == 0 {
            errs.push("strides must be at least 1".into());
        }
        errs
    }

    /// Same run with the grid refined and the step halved.
    pub fn refined(&self) -> Self {
        let mut c = self.clone();
        c.solver.grid = c.solver.grid.refined();
        c.solver.dt *= 0.5;
        c.solver.snapshot_stride *= 2;
        c.solver.memory_stride *= 2;
        if let Some(b) = c.solver.bandwidth.as_mut() {
            *b *= 0.5;
        }
        c
    }
}

/// Per-step bookkeeping: `mass(t) − mass(t−dt) = source − leak + clip − residual`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct MonitorRow {
    pub t: f64,
    pub mass: f64,
    pub leak: f64,
    pub clip: f64,
    pub source: f64,
    pub residual: f64,
}

#[derive(Debug, Clone)]
pub struct MeanFieldOutput {
    pub snapshots: Vec<DensityField>,
    pub monitors: Vec<MonitorRow>,
    pub bandwidth: f64,
    /// Transport substeps taken beyond one per step to satisfy the CFL bound.
    pub cfl_substeps: usize,
}

impl MeanFieldOutput {
    pub fn last(&self) -> &DensityField {
        self.snapshots.last().expect("at least the initial field is stored")
    }

    pub fn total_leak(&self) -> f64 {
        self.monitors.iter().map(|m| m.leak).sum()
    }

    pub fn total_clip(&self) -> f64 {
        self.monitors.iter().map(|m| m.clip).sum()
    }

    /// Snapshot whose time is closest to `t`.
    pub fn at(&self, t: f64) -> &DensityField {
        self.snapshots
            .iter()
            .min_by(|a, b| (a.time - t).abs().total_cmp(&(b.time - t).abs()))
            .expect("at least the initial field is stored")
    }

    /// CSV `t,mass,leak,clip,source,residual`.
    pub fn write_monitors<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for m in &self.monitors {
            w.serialize(m)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs heat → transport → reaction per step from the model's initial density.
pub fn evolve(config: &MeanFieldConfig) -> Result<MeanFieldOutput, MeanFieldError> {
    let errs = config.validate();
    if !errs.is_empty() {
        return Err(MeanFieldError::Config(errs));
    }
    let field = DensityField::initial(config.solver.grid, &config.model, config.bandwidth());
    evolve_from(config, field)
}

/// [`evolve`] from a given initial field.
pub fn evolve_from(config: &MeanFieldConfig, mut field: DensityField) -> Result<MeanFieldOutput, MeanFieldError> {
    let s = &config.solver;
    let model = &config.model;
    let spectral = Spectral::new(s.grid);
    let terms = ReactionTerms::new(model, &spectral);
    let horizon = model.kernel.memory_horizon();
    let mut ring = MemoryRing::new();
    let steps = ((config.horizon / s.dt) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
    let h = s.grid.h();
    let mut out = MeanFieldOutput {
        snapshots: vec![field.clone()],
        monitors: Vec::with_capacity(steps),
        bandwidth: config.bandwidth(),
        cfl_substeps: 0,
    };
    let mut peak = field.mass();
    let mut leaked = 0.0;
    for k in 0..steps {
        let t = field.time;
        let t_next = if k + 1 == steps {
            config.horizon
        } else {
            (k + 1) as f64 * s.dt
        };
        let dt = t_next - t;
        let velocity = if model.kernel.is_zero() {
            None
        } else {
            if k % s.memory_stride == 0 {
                ring.push(t, &field.rho, horizon);
            }
            Some(ring.velocity(&field, &model.kernel, &spectral)?)
        };
        let before = field.mass();
        let mut leak = heat_step(&mut field, model.sigma, dt, &spectral);
        if let Some(v) = velocity.as_ref() {
            // keep the Courant number at most 1/2 so upwinding stays positive
            let sub = (2.0 * v.courant(h, dt)).ceil().max(1.0) as usize;
            out.cfl_substeps += sub - 1;
            for _ in 0..sub {
                leak += transport_step(&mut field, v, dt / sub as f64)?;
            }
        }
        let reaction = if terms.is_trivial() {
            field
                .cumulative
                .iter_mut()
                .zip(&field.rho)
                .for_each(|(p, r)| *p += dt * r);
            ReactionReport::default()
        } else {
            reaction_step(&mut field, &terms, dt, &spectral)
        };
        field.time = t_next;
        let mass = field.mass();
        if !mass.is_finite() {
            return Err(MeanFieldError::Numerical(t_next));
        }
        out.monitors.push(MonitorRow {
            t: t_next,
            mass,
            leak,
            clip: reaction.clip,
            source: reaction.source,
            residual: (before + reaction.source - leak + reaction.clip) - mass,
        });
        peak = peak.max(mass);
        leaked += leak;
        if leaked > s.leak_threshold * peak {
            return Err(MeanFieldError::Leak {
                fraction: leaked / peak,
                threshold: s.leak_threshold,
                time: t_next,
            });
        }
        if (k + 1) % s.snapshot_stride == 0 || k + 1 == steps {
            out.snapshots.push(field.clone());
        }
    }
    Ok(out)
}
