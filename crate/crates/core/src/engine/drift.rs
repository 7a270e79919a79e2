use rayon::prelude::*;

use super::EngineError;
use crate::history::{HistoryRecord, Label, Lineage};
use crate::kernels::InteractionKernel;
use crate::Vec2;

/// Trapezoid nodes of every lived path inside the memory window `[t - τ, t]`,
/// with their lags and quadrature weights (already divided by `N`).
///
/// Building the cloud once per time step makes the drift of each tip a single
/// pass over the nodes.
#[derive(Debug, Clone, Default)]
pub struct SourceCloud {
    time: f64,
    points: Vec<Vec2>,
    lags: Vec<f64>,
    weights: Vec<f64>,
}

fn push_segment(cloud: &mut SourceCloud, l: &Lineage, a: f64, b: f64, t: f64, w: f64) {
    let times = l.times();
    let pos = l.positions();
    let first = times.partition_point(|&s| s <= a);
    let last = times.partition_point(|&s| s < b);
    let mut prev_t = a;
    let mut prev_x = l.interpolate(a);
    let mut prev_w = 0.0;
    let emit = |cloud: &mut SourceCloud, s: f64, x: Vec2, weight: f64| {
        cloud.points.push(x);
        cloud.lags.push(t - s);
        cloud.weights.push(weight * w);
    };
    for k in first..last {
        let (s, x) = (times[k], pos[k]);
        let half = 0.5 * (s - prev_t);
        emit(cloud, prev_t, prev_x, prev_w + half);
        prev_t = s;
        prev_x = x;
        prev_w = half;
    }
    let half = 0.5 * (b - prev_t);
    emit(cloud, prev_t, prev_x, prev_w + half);
    emit(cloud, b, l.interpolate(b), half);
}

impl SourceCloud {
    /// Quadrature nodes for `(1/N) Σ_v ∫_{lived(v) ∩ [t-τ, t]} L_{t-s}(· - X^v_s) ds`.
    pub fn build(record: &HistoryRecord, t: f64, kernel: &InteractionKernel, scale: f64) -> Self {
        let mut cloud = SourceCloud {
            time: t,
            ..Default::default()
        };
        if kernel.is_zero() {
            return cloud;
        }
        let lo = (t - kernel.memory_horizon()).max(0.0);
        let w = 1.0 / scale;
        for l in record.lineages() {
            let a = l.birth().max(lo);
            let b = t.min(l.lived_end());
            if b > a {
                push_segment(&mut cloud, l, a, b, t, w);
            }
        }
        if let InteractionKernel::ExpDecay(k) = kernel {
            for (wt, &lag) in cloud.weights.iter_mut().zip(&cloud.lags) {
                *wt *= k.time_factor(lag);
            }
        }
        cloud
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Total quadrature weight, i.e. `(1/N) Σ_v |lived(v) ∩ window|`.
    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Drift felt by a tip at `x`. `kernel` must be the kernel the cloud was
    /// built with.
    pub fn drift_at(&self, x: Vec2, kernel: &InteractionKernel) -> Vec2 {
        match kernel {
            InteractionKernel::Zero => Vec2::ZERO,
            InteractionKernel::ExpDecay(k) => {
                let inv = -1.0 / (2.0 * k.width * k.width);
                let (mut sx, mut sy) = (0.0, 0.0);
                for (p, &w) in self.points.iter().zip(&self.weights) {
                    let dx = x.x - p.x;
                    let dy = x.y - p.y;
                    let g = w * ((dx * dx + dy * dy) * inv).exp();
                    sx += g * dx;
                    sy += g * dy;
                }
                match k.sign {
                    crate::kernels::KernelSign::Attraction => Vec2::new(-sx, -sy),
                    crate::kernels::KernelSign::Repulsion => Vec2::new(sx, sy),
                }
            }
            InteractionKernel::Table(tab) => {
                let mut acc = Vec2::ZERO;
                for ((p, &w), &lag) in self.points.iter().zip(&self.weights).zip(&self.lags) {
                    acc += tab.eval(lag, x - *p) * w;
                }
                acc
            }
        }
    }

    /// Drift of many tips at once.
    pub fn drift_many(&self, xs: &[Vec2], kernel: &InteractionKernel) -> Vec<Vec2> {
        if kernel.is_zero() || self.is_empty() {
            return vec![Vec2::ZERO; xs.len()];
        }
        xs.par_iter().map(|&x| self.drift_at(x, kernel)).collect()
    }
}

/// History-dependent drift of tip `u` at time `t`, scaled by `1/N`.
pub fn compute_drift(
    record: &HistoryRecord,
    u: Label,
    t: f64,
    kernel: &InteractionKernel,
    scale: f64,
) -> Result<Vec2, EngineError> {
    let l = record.lineage(u)?;
    if !l.is_alive_at(t) || t > l.last_time() {
        return Err(EngineError::State(format!("label {u} is not alive at {t}")));
    }
    let x = l.interpolate(t);
    Ok(SourceCloud::build(record, t, kernel, scale).drift_at(x, kernel))
}
