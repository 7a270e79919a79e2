//! Particle engine: Euler–Maruyama motion with a history-dependent drift and
//! exactly thinned branching and death events.

mod drift;
mod replicas;
mod rng;
mod thinning;

use std::io::Write;

use serde::Serialize;
use thiserror::Error;

use crate::history::{Branch, EventKind, EventRecord, HistoryError, HistoryRecord, Label};
use crate::kernels::{InteractionKernel, ModelSpec};
use crate::Vec2;

pub use drift::{compute_drift, SourceCloud};
pub use replicas::{map_replicas, run_replicas, run_replicas_with, Moments, Observable, ReplicaStats};
pub use rng::{derive_seed, replica_seed, standard_pair, RandomSource};
pub use thinning::{PlannedEvent, Thinning, ThinningStats};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("population cap of {cap} labels reached at t = {time}")]
    Capacity {
        cap: usize,
        time: f64,
        partial: Box<RunOutput>,
    },
    #[error("non-finite position for label {label} at t = {time}")]
    Numerical { label: Label, time: f64 },
    #[error("{0}")]
    State(String),
    #[error("invalid run configuration: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error(transparent)]
    History(#[from] HistoryError),
    #[error("replica {index}")]
    Replica {
        index: usize,
        #[source]
        source: Box<EngineError>,
    },
}

/// One run of the particle system.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub model: ModelSpec,
    pub horizon: f64,
    /// Euler step.
    pub dt: f64,
    /// Thinning window; `None` means `dt`.
    pub window: Option<f64>,
    /// Snapshot every this many steps (the final time is always recorded).
    pub snapshot_stride: usize,
    /// Maximum number of labels ever created.
    pub cap: usize,
    pub seed: u64,
}

impl RunConfig {
    pub fn new(model: ModelSpec, horizon: f64, dt: f64) -> Self {
        Self {
            model,
            horizon,
            dt,
            window: None,
            snapshot_stride: 1,
            cap: 1_000_000,
            seed: 0,
        }
    }

    pub fn window(&self) -> f64 {
        self.window.unwrap_or(self.dt)
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = self.model.validate();
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            errs.push(format!("horizon must be positive, got {}", self.horizon));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            errs.push(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.window() >= self.dt) || !self.window().is_finite() {
            errs.push(format!(
                "thinning window {} must be at least dt = {}",
                self.window(),
                self.dt
            ));
        }
        if self.snapshot_stride == 0 {
            errs.push("snapshot stride must be at least 1".into());
        }
        if self.cap < self.model.initial.count() {
            errs.push(format!(
                "population cap {} below the initial count {}",
                self.cap,
                self.model.initial.count()
            ));
        }
        errs
    }

    /// Grid times `0 = t_0 < … < t_K = T`; the last step may be shorter.
    pub fn grid(&self) -> Vec<f64> {
        let k = ((self.horizon / self.dt) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
        let mut g: Vec<f64> = (0..k).map(|i| i as f64 * self.dt).collect();
        g.push(self.horizon);
        g
    }
}

/// The alive population at one time, ordered by label.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Snapshot {
    pub t: f64,
    pub count: usize,
    pub positions: Vec<Vec2>,
    pub labels: Vec<Label>,
    /// `sup_{s ≤ t}` of the alive count.
    #[serde(skip)]
    pub max_count: usize,
}

impl Snapshot {
    fn capture(record: &HistoryRecord, t: f64, max_count: usize) -> Self {
        let mut labels = record.alive_now().to_vec();
        labels.sort_unstable();
        let positions = labels
            .iter()
            .map(|&u| record.lineage(u).expect("alive label exists").interpolate(t))
            .collect();
        Snapshot {
            t,
            count: labels.len(),
            positions,
            labels,
            max_count,
        }
    }
}

/// Snapshots, the full history and thinning counters of one run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub seed: u64,
    pub snapshots: Vec<Snapshot>,
    pub record: HistoryRecord,
    pub stats: ThinningStats,
}

impl RunOutput {
    pub fn last(&self) -> &Snapshot {
        self.snapshots.last().expect("a run records at least one snapshot")
    }

    /// One JSON object per line.
    pub fn write_snapshots<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for s in &self.snapshots {
            serde_json::to_writer(&mut out, s)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Where events come from.
#[derive(Debug, Clone)]
pub enum EventSource {
    Thinning,
    /// Replays a logged event sequence.
    Scripted(Vec<EventRecord>),
}

/// Advances every alive tip from `t` to `t + dt` and returns the source cloud
/// used for the drift, so that tips born inside the step can reuse it.
pub fn step_sde(
    record: &mut HistoryRecord,
    t: f64,
    dt: f64,
    sigma: f64,
    kernel: &InteractionKernel,
    scale: f64,
    rng: &mut RandomSource,
) -> Result<SourceCloud, EngineError> {
    let alive = record.alive_now().to_vec();
    let mut xs = Vec::with_capacity(alive.len());
    for &u in &alive {
        let l = record.lineage(u)?;
        if l.last_time() != t {
            return Err(EngineError::State(format!(
                "label {u} is sampled to {} but the step starts at {t}",
                l.last_time()
            )));
        }
        xs.push(l.last_position());
    }
    let cloud = SourceCloud::build(record, t, kernel, scale);
    let drifts = cloud.drift_many(&xs, kernel);
    let t_next = t + dt;
    record.advance_to(t_next);
    let amp = sigma * dt.sqrt();
    for ((&u, &x), &d) in alive.iter().zip(&xs).zip(&drifts) {
        let mut y = x + d * dt;
        if sigma > 0.0 {
            y += rng.normal_pair(u) * amp;
        }
        if !y.is_finite() {
            return Err(EngineError::Numerical { label: u, time: t_next });
        }
        record.push_sample(u, t_next, y)?;
    }
    Ok(cloud)
}

/// Runs one replica with events from the thinning sampler.
pub fn run(config: &RunConfig) -> Result<RunOutput, EngineError> {
    simulate(config, EventSource::Thinning)
}

/// Re-runs `config` applying the logged events instead of sampling them.
pub fn run_scripted(config: &RunConfig, events: Vec<EventRecord>) -> Result<RunOutput, EngineError> {
    simulate(config, EventSource::Scripted(events))
}

struct Sim<'a> {
    config: &'a RunConfig,
    record: HistoryRecord,
    noise: RandomSource,
    snapshots: Vec<Snapshot>,
    max_count: usize,
    thinning: Option<Thinning>,
}

impl Sim<'_> {
    fn output(self) -> RunOutput {
        RunOutput {
            seed: self.config.seed,
            snapshots: self.snapshots,
            stats: self.thinning.map(|t| t.stats()).unwrap_or_default(),
            record: self.record,
        }
    }

    fn capacity(mut self, time: f64) -> EngineError {
        let t = self.record.current_time();
        self.snapshots.push(Snapshot::capture(&self.record, t, self.max_count));
        let cap = self.config.cap;
        EngineError::Capacity {
            cap,
            time,
            partial: Box::new(self.output()),
        }
    }

    fn apply(&mut self, ev: PlannedEvent, cloud: &SourceCloud, t_next: f64) -> Result<(), EngineError> {
        let model = &self.config.model;
        match ev {
            PlannedEvent::Apical { time, actor, mark } | PlannedEvent::Lateral { time, actor, mark, .. } => {
                let branch = match ev {
                    PlannedEvent::Lateral { theta, .. } => Branch::Lateral { theta },
                    _ => Branch::Apical,
                };
                let child = self.record.spawn(actor, branch, time, mark)?;
                if time < t_next {
                    let h = t_next - time;
                    let x = self.record.lineage(child)?.last_position();
                    let mut y = x + cloud.drift_at(x, &model.kernel) * h;
                    if model.sigma > 0.0 {
                        y += self.noise.normal_pair(child) * (model.sigma * h.sqrt());
                    }
                    if !y.is_finite() {
                        return Err(EngineError::Numerical {
                            label: child,
                            time: t_next,
                        });
                    }
                    self.record.push_sample(child, t_next, y)?;
                }
            }
            PlannedEvent::Death { time, actor, mark } => {
                let birth = self.record.lineage(actor)?.birth();
                self.record.kill(actor, time, mark)?;
                if let Some(th) = self.thinning.as_mut() {
                    th.died(actor, birth, time);
                }
            }
        }
        if let Some(th) = self.thinning.as_mut() {
            th.applied(&self.record, ev.time());
        }
        self.max_count = self.max_count.max(self.record.alive_count());
        Ok(())
    }
}

fn scripted(e: &EventRecord) -> Result<PlannedEvent, EngineError> {
    let (time, actor, mark) = (e.time, e.actor, e.mark);
    Ok(match e.kind {
        EventKind::Apical => PlannedEvent::Apical { time, actor, mark },
        EventKind::Death => PlannedEvent::Death { time, actor, mark },
        EventKind::Lateral => PlannedEvent::Lateral {
            time,
            actor,
            mark,
            theta: e
                .theta
                .ok_or_else(|| EngineError::State(format!("lateral event at {time} without theta")))?,
        },
    })
}

fn simulate(config: &RunConfig, source: EventSource) -> Result<RunOutput, EngineError> {
    let errs = config.validate();
    if !errs.is_empty() {
        return Err(EngineError::Config(errs));
    }
    let model = &config.model;
    let mut noise = RandomSource::new(config.seed);
    let atoms = model.initial.sample(noise.initial());
    let record = HistoryRecord::new(&atoms);
    let (thinning, script) = match source {
        EventSource::Thinning => (Some(Thinning::new(config.seed, config.window(), &record)), Vec::new()),
        EventSource::Scripted(log) => (None, log),
    };
    let mut sim = Sim {
        config,
        max_count: record.alive_count(),
        snapshots: vec![Snapshot::capture(&record, 0.0, record.alive_count())],
        record,
        noise,
        thinning,
    };
    let mut next_scripted = 0;
    let grid = config.grid();
    let steps = grid.len() - 1;
    for k in 0..steps {
        let (t, t_next) = (grid[k], grid[k + 1]);
        let cloud = step_sde(
            &mut sim.record,
            t,
            t_next - t,
            model.sigma,
            &model.kernel,
            model.scale_f64(),
            &mut sim.noise,
        )?;
        loop {
            let ev = match sim.thinning.as_mut() {
                Some(th) => th.next_event(&sim.record, model, t_next),
                None => match script.get(next_scripted) {
                    Some(e) if e.time <= t_next => {
                        next_scripted += 1;
                        Some(scripted(e)?)
                    }
                    _ => None,
                },
            };
            let Some(ev) = ev else { break };
            let births = !matches!(ev, PlannedEvent::Death { .. });
            if births && sim.record.ever_count() + 1 > config.cap {
                return Err(sim.capacity(ev.time()));
            }
            sim.apply(ev, &cloud, t_next)?;
        }
        if (k + 1) % config.snapshot_stride == 0 || k + 1 == steps {
            sim.snapshots
                .push(Snapshot::capture(&sim.record, t_next, sim.max_count));
        }
    }
    Ok(sim.output())
}
