use std::collections::HashMap;

use rustfft::num_complex::Complex64;

use super::{DensityField, MeanFieldError, Spectral};
use crate::kernels::{DeathRate, InteractionKernel, ModelSpec};
use crate::Vec2;

/// Planar velocity at each cell centre.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityField {
    pub vx: Vec<f64>,
    pub vy: Vec<f64>,
}

impl VelocityField {
    pub fn zero(len: usize) -> Self {
        Self {
            vx: vec![0.0; len],
            vy: vec![0.0; len],
        }
    }

    pub fn uniform(len: usize, v: Vec2) -> Self {
        Self {
            vx: vec![v.x; len],
            vy: vec![v.y; len],
        }
    }

    pub fn is_zero(&self) -> bool {
        self.vx.iter().chain(&self.vy).all(|&v| v == 0.0)
    }

    /// Largest Courant number `|V| dt / h` over both axes.
    pub fn courant(&self, h: Vec2, dt: f64) -> f64 {
        let mx = self.vx.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let my = self.vy.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        (mx * dt / h.x).max(my * dt / h.y)
    }

    pub fn max_norm(&self) -> f64 {
        self.vx
            .iter()
            .zip(&self.vy)
            .fold(0.0f64, |m, (a, b)| m.max(a.hypot(*b)))
    }
}

/// Exact heat semigroup with variance `σ² dt` per axis, applied spectrally.
/// Returns the mass that left the interior.
pub fn heat_step(field: &mut DensityField, sigma: f64, dt: f64, spectral: &Spectral) -> f64 {
    if sigma == 0.0 || dt == 0.0 {
        return 0.0;
    }
    let before = field.mass();
    let mut buf = spectral.pad(&field.rho);
    spectral.forward(&mut buf);
    let (px, py) = (2 * field.grid.nx(), 2 * field.grid.ny());
    let c = 0.5 * sigma * sigma * dt;
    for j in 0..py {
        for i in 0..px {
            let k = spectral.wavenumber(i, j);
            buf[j * px + i] *= (-c * k.norm_sq()).exp();
        }
    }
    spectral.inverse(&mut buf);
    for (r, z) in field.rho.iter_mut().zip(spectral.crop(&buf)) {
        *r = z.re;
    }
    before - field.mass()
}

/// Conservative first-order upwind transport `∂ρ/∂t + ∇·(ρV) = 0`, one
/// axis after the other. Returns the mass that flowed out of the domain.
pub fn transport_step(field: &mut DensityField, v: &VelocityField, dt: f64) -> Result<f64, MeanFieldError> {
    let h = field.grid.h();
    let courant = v.courant(h, dt);
    if courant > 1.0 {
        return Err(MeanFieldError::Cfl { courant, dt });
    }
    if v.is_zero() {
        return Ok(0.0);
    }
    let (nx, ny) = (field.grid.nx(), field.grid.ny());
    let mut leak = 0.0;
    let mut line = Vec::new();
    let mut vel = Vec::new();
    for iy in 0..ny {
        line.clear();
        vel.clear();
        line.extend((0..nx).map(|ix| field.rho[iy * nx + ix]));
        vel.extend((0..nx).map(|ix| v.vx[iy * nx + ix]));
        leak += sweep(&mut line, &vel, dt / h.x) * h.x * h.y;
        field.rho[iy * nx..(iy + 1) * nx].copy_from_slice(&line);
    }
    for ix in 0..nx {
        line.clear();
        vel.clear();
        line.extend((0..ny).map(|iy| field.rho[iy * nx + ix]));
        vel.extend((0..ny).map(|iy| v.vy[iy * nx + ix]));
        leak += sweep(&mut line, &vel, dt / h.y) * h.x * h.y;
        for (iy, &r) in line.iter().enumerate() {
            field.rho[iy * nx + ix] = r;
        }
    }
    Ok(leak)
}

/// One upwind pass along a line with zero inflow at both ends; returns the
/// outflow in units of `ρ · cells`.
fn sweep(rho: &mut [f64], u: &[f64], r: f64) -> f64 {
    let n = rho.len();
    let face = |f: usize| -> f64 {
        let uf = if f == 0 {
            u[0]
        } else if f == n {
            u[n - 1]
        } else {
            0.5 * (u[f - 1] + u[f])
        };
        let left = if f == 0 { 0.0 } else { rho[f - 1] };
        let right = if f == n { 0.0 } else { rho[f] };
        if uf > 0.0 {
            uf * left
        } else {
            uf * right
        }
    };
    let fluxes: Vec<f64> = (0..=n).map(face).collect();
    for i in 0..n {
        rho[i] -= r * (fluxes[i + 1] - fluxes[i]);
    }
    r * (fluxes[n] - fluxes[0])
}

/// Gridded rates used by the reaction step.
#[derive(Debug)]
pub struct ReactionTerms {
    b1: Vec<f64>,
    b2: Vec<f64>,
    death: DeathTerm,
}

#[derive(Debug)]
enum DeathTerm {
    Zero,
    TotalMass(f64),
    Convolution(f64, Vec<Complex64>),
}

impl ReactionTerms {
    pub fn new(model: &ModelSpec, spectral: &Spectral) -> Self {
        let centers = spectral.grid().centers();
        let death = match model.death {
            DeathRate::Zero => DeathTerm::Zero,
            _ if model.death.is_zero() => DeathTerm::Zero,
            DeathRate::TotalMass { gamma } => DeathTerm::TotalMass(gamma),
            DeathRate::Convolution { gamma, height, width } => DeathTerm::Convolution(
                gamma,
                spectral.kernel_spectrum(|z| Vec2::new(DeathRate::bump(height, width, z), 0.0)),
            ),
        };
        Self {
            b1: centers.iter().map(|&x| model.rates.b1(x)).collect(),
            b2: centers.iter().map(|&x| model.rates.b2(x)).collect(),
            death,
        }
    }

    pub fn is_trivial(&self) -> bool {
        matches!(self.death, DeathTerm::Zero) && self.b1.iter().all(|&v| v == 0.0) && self.b2.iter().all(|&v| v == 0.0)
    }
}

/// Mass created and mass restored by clipping during a reaction step.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ReactionReport {
    pub source: f64,
    pub clip: f64,
}

/// `ρ ← ρ + dt[(b1 − d(x,ρ))ρ + b2 Ρ]`, clipping negative values, then
/// `Ρ ← Ρ + dt(ρ_old + ρ_new)/2`.
pub fn reaction_step(field: &mut DensityField, terms: &ReactionTerms, dt: f64, spectral: &Spectral) -> ReactionReport {
    let area = field.grid.cell_area();
    let death: Option<Vec<f64>> = match &terms.death {
        DeathTerm::Zero => None,
        DeathTerm::TotalMass(g) => Some(vec![g * field.mass(); field.rho.len()]),
        DeathTerm::Convolution(g, spec) => Some(spectral.convolve(&field.rho, spec).iter().map(|z| g * z.re).collect()),
    };
    let mut report = ReactionReport::default();
    for i in 0..field.rho.len() {
        let r = field.rho[i];
        let d = death.as_ref().map_or(0.0, |d| d[i]);
        let delta = dt * ((terms.b1[i] - d) * r + terms.b2[i] * field.cumulative[i]);
        report.source += delta * area;
        let mut next = r + delta;
        if next < 0.0 {
            report.clip -= next * area;
            next = 0.0;
        }
        field.rho[i] = next;
        field.cumulative[i] += 0.5 * dt * (r + next);
    }
    report
}

/// Past density slices kept for the memory integral.
#[derive(Debug, Default)]
pub struct MemoryRing {
    slices: Vec<(f64, Vec<f64>)>,
    spectra: HashMap<i64, Vec<Complex64>>,
    separable: Option<Vec<Complex64>>,
}

impl MemoryRing {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }

    pub fn earliest(&self) -> Option<f64> {
        self.slices.first().map(|s| s.0)
    }

    /// Stores `ρ_t` and forgets slices older than `horizon` before `t`.
    pub fn push(&mut self, t: f64, rho: &[f64], horizon: f64) {
        if let Some(&(last, _)) = self.slices.last() {
            assert!(t > last, "memory slices must be pushed in time order");
        }
        self.slices.push((t, rho.to_vec()));
        let keep_from = self.slices.partition_point(|(s, _)| t - s > horizon);
        self.slices.drain(..keep_from);
    }

    /// `V(t,·) = ∫_{max(0,t−τ)}^t (L_{t−s} ⋆ ρ_s) ds` by the trapezoid rule
    /// over the stored slices and the current density.
    pub fn velocity(
        &mut self,
        current: &DensityField,
        kernel: &InteractionKernel,
        spectral: &Spectral,
    ) -> Result<VelocityField, MeanFieldError> {
        let n = current.rho.len();
        if kernel.is_zero() {
            return Ok(VelocityField::zero(n));
        }
        let t = current.time;
        let tau = kernel.memory_horizon();
        let lo = (t - tau).max(0.0);
        if t > 0.0 && self.is_empty() {
            return Err(MeanFieldError::RingUnderflow {
                needed: lo,
                earliest: t,
            });
        }
        let mut nodes: Vec<(f64, &[f64])> = self
            .slices
            .iter()
            .filter(|(s, _)| t - s <= tau && *s < t)
            .map(|(s, r)| (*s, r.as_slice()))
            .collect();
        nodes.push((t, current.rho.as_slice()));
        if nodes.len() < 2 {
            return Ok(VelocityField::zero(n));
        }
        let times: Vec<f64> = nodes.iter().map(|n| n.0).collect();
        let spacing = times.windows(2).fold(0.0f64, |m, w| m.max(w[1] - w[0]));
        if times[0] > lo + spacing + 1e-12 {
            return Err(MeanFieldError::RingUnderflow {
                needed: lo,
                earliest: times[0],
            });
        }
        let weights = trapezoid(&times);
        let packed = match kernel {
            InteractionKernel::Zero => unreachable!(),
            InteractionKernel::ExpDecay(k) => {
                let mut combined = vec![0.0; n];
                for ((s, rho), w) in nodes.iter().zip(&weights) {
                    let c = w * k.time_factor(t - s);
                    for (a, r) in combined.iter_mut().zip(rho.iter()) {
                        *a += c * r;
                    }
                }
                let spec = self.separable.get_or_insert_with(|| {
                    let mut unit = k.clone();
                    unit.amplitude = 1.0;
                    unit.decay = 0.0;
                    spectral.kernel_spectrum(|z| unit.spatial(z))
                });
                spectral.convolve(&combined, spec)
            }
            InteractionKernel::Table(tab) => {
                let mut acc = vec![Complex64::new(0.0, 0.0); spectral.padded_len()];
                let mut used = Vec::with_capacity(nodes.len());
                for ((s, rho), w) in nodes.iter().zip(&weights) {
                    let lag = t - s;
                    let key = (lag * 1e9).round() as i64;
                    used.push(key);
                    let spec = self
                        .spectra
                        .entry(key)
                        .or_insert_with(|| spectral.kernel_spectrum(|z| tab.eval(lag, z)));
                    let mut buf = spectral.pad(rho);
                    spectral.forward(&mut buf);
                    for ((a, b), k) in acc.iter_mut().zip(&buf).zip(spec.iter()) {
                        *a += b * k * w;
                    }
                }
                self.spectra.retain(|k, _| used.contains(k));
                spectral.inverse(&mut acc);
                spectral.crop(&acc)
            }
        };
        Ok(VelocityField {
            vx: packed.iter().map(|z| z.re).collect(),
            vy: packed.iter().map(|z| z.im).collect(),
        })
    }
}

/// Trapezoid weights for sorted nodes.
fn trapezoid(ts: &[f64]) -> Vec<f64> {
    let mut w = vec![0.0; ts.len()];
    for i in 1..ts.len() {
        let h = 0.5 * (ts[i] - ts[i - 1]);
        w[i - 1] += h;
        w[i] += h;
    }
    w
}
