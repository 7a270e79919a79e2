use serde::Serialize;

use super::{AnalysisError, TestFunction};
use crate::engine::{Moments, ReplicaStats, RunOutput, Snapshot, SourceCloud};
use crate::history::{EventKind, HistoryRecord};
use crate::kernels::ModelSpec;
use crate::meanfield::DensityField;
use crate::Vec2;

/// A measure to integrate test functions against.
#[derive(Debug, Clone, Copy)]
pub enum Measure<'a> {
    /// `(1/scale) Σ δ_{x}`.
    Atoms {
        positions: &'a [Vec2],
        scale: f64,
    },
    Field(&'a DensityField),
}

impl<'a> Measure<'a> {
    pub fn snapshot(s: &'a Snapshot, scale: f64) -> Self {
        Measure::Atoms {
            positions: &s.positions,
            scale,
        }
    }
}

/// `⟨ν, f⟩`.
pub fn pair(m: Measure<'_>, f: &TestFunction) -> f64 {
    match m {
        Measure::Atoms { positions, scale } => positions.iter().map(|&x| f.value(x)).sum::<f64>() / scale,
        Measure::Field(field) => field.integrate(|x| f.value(x)),
    }
}

/// Scaled mass strictly outside the closed disc of radius `r`.
pub fn tail_mass(m: Measure<'_>, r: f64) -> f64 {
    match m {
        Measure::Atoms { positions, scale } => positions.iter().filter(|x| x.norm() > r).count() as f64 / scale,
        Measure::Field(field) => field.integrate(|x| if x.norm() > r { 1.0 } else { 0.0 }),
    }
}

/// `M_t` at every snapshot time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MartingaleSeries {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl MartingaleSeries {
    pub fn last(&self) -> f64 {
        *self.values.last().expect("series is never empty")
    }
}

/// `M_t = ⟨Z_t,f⟩ − ⟨Z_0,f⟩ − ∫_0^t ⟨Z_s, G f⟩ ds` on the scaled measure, where
/// the generator term carries the memory drift, diffusion and the reaction
/// weight `b1 + b2 (t − s) − d`. The compensator is rebuilt for each `t`
/// because of the `(t − s)` factor; integrals use the trapezoid rule on the
/// snapshot times.
pub fn martingale_residual(
    run: &RunOutput,
    f: &TestFunction,
    model: &ModelSpec,
) -> Result<MartingaleSeries, AnalysisError> {
    let snaps = &run.snapshots;
    if snaps.is_empty() || snaps[0].t != 0.0 {
        return Err(AnalysisError::MissingSnapshots(
            "the martingale residual needs a snapshot at t = 0".into(),
        ));
    }
    let scale = model.scale_f64();
    // g1: drift, diffusion, b1 and death; g2: lateral weight per unit (t − s)
    let mut g1 = Vec::with_capacity(snaps.len());
    let mut g2 = Vec::with_capacity(snaps.len());
    for s in snaps {
        let (a, b) = generator_terms(&run.record, s, f, model, scale);
        g1.push(a);
        g2.push(b);
    }
    let z0 = pair(Measure::snapshot(&snaps[0], scale), f);
    let mut values = Vec::with_capacity(snaps.len());
    let mut int_g1 = 0.0;
    for k in 0..snaps.len() {
        let t = snaps[k].t;
        if k > 0 {
            int_g1 += 0.5 * (snaps[k].t - snaps[k - 1].t) * (g1[k] + g1[k - 1]);
        }
        let mut int_g2 = 0.0;
        for j in 1..=k {
            let (s0, s1) = (snaps[j - 1].t, snaps[j].t);
            int_g2 += 0.5 * (s1 - s0) * ((t - s0) * g2[j - 1] + (t - s1) * g2[j]);
        }
        let zt = pair(Measure::snapshot(&snaps[k], scale), f);
        values.push(zt - z0 - int_g1 - int_g2);
    }
    Ok(MartingaleSeries {
        times: snaps.iter().map(|s| s.t).collect(),
        values,
    })
}

fn generator_terms(
    record: &HistoryRecord,
    s: &Snapshot,
    f: &TestFunction,
    model: &ModelSpec,
    scale: f64,
) -> (f64, f64) {
    if s.positions.is_empty() {
        return (0.0, 0.0);
    }
    let drifts = if model.kernel.is_zero() {
        vec![Vec2::ZERO; s.positions.len()]
    } else {
        SourceCloud::build(record, s.t, &model.kernel, scale).drift_many(&s.positions, &model.kernel)
    };
    let half_var = 0.5 * model.sigma * model.sigma;
    let mut a = 0.0;
    let mut b = 0.0;
    for (&x, &v) in s.positions.iter().zip(&drifts) {
        let fx = f.value(x);
        let d = if model.death.is_zero() {
            0.0
        } else {
            model
                .death
                .rate_with(x, s.positions.len(), s.positions.iter().copied(), scale)
        };
        a += f.gradient(x).dot(v) + half_var * f.laplacian(x) + (model.rates.b1(x) - d) * fx;
        b += model.rates.b2(x) * fx;
    }
    (a / scale, b / scale)
}

/// One snapshot of the moment audit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentRow {
    pub t: f64,
    pub mean_count: f64,
    pub se_count: f64,
    pub mass_bound: f64,
    pub mass_ok: bool,
    pub mean_sup_sq: f64,
    pub se_sup_sq: f64,
    pub square_bound: f64,
    pub square_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentAudit {
    pub m0: f64,
    pub rows: Vec<MomentRow>,
}

impl MomentAudit {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.mass_ok && r.square_ok)
    }

    pub fn first_failure(&self) -> Option<&MomentRow> {
        self.rows.iter().find(|r| !(r.mass_ok && r.square_ok))
    }
}

/// Growth exponent `B1 t + B2 t²/2`.
pub fn growth_exponent(model: &ModelSpec, t: f64) -> f64 {
    model.rates.b1_bound * t + 0.5 * model.rates.b2_bound * t * t
}

/// Checks `E⟨Z_t,1⟩ ≤ m₀e^{B1t+B2t²/2}` and
/// `E[sup_{s≤t}⟨Z_s,1⟩²] ≤ m₀²e^{3(B1t+B2t²/2)}` with a 3·SE allowance,
/// using the declared bounds of `model` (unscaled counts).
pub fn moment_audit(stats: &ReplicaStats, model: &ModelSpec) -> MomentAudit {
    let m0 = model.initial.count() as f64;
    let rows = stats
        .times
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let e = growth_exponent(model, t);
            let c: &Moments = &stats.count[i];
            let q: &Moments = &stats.sup_count_sq[i];
            let mass_bound = m0 * e.exp();
            let square_bound = m0 * m0 * (3.0 * e).exp();
            MomentRow {
                t,
                mean_count: c.mean,
                se_count: c.se(),
                mass_bound,
                mass_ok: c.mean - 3.0 * c.se() <= mass_bound * (1.0 + 1e-12),
                mean_sup_sq: q.mean,
                se_sup_sq: q.se(),
                square_bound,
                square_ok: q.mean - 3.0 * q.se() <= square_bound * (1.0 + 1e-12),
            }
        })
        .collect();
    MomentAudit { m0, rows }
}

/// Expected scaled mass without interaction or death: the solution of
/// `m'' = b1 m' + b2 m` with `m(0) = m0`, `m'(0) = b1 m0`. Lateral births are
/// fed by the total lived length, whose derivative is the mass itself.
pub fn expected_mass(b1: f64, b2: f64, m0: f64, t: f64) -> f64 {
    if b2 == 0.0 {
        return m0 * (b1 * t).exp();
    }
    let disc = (b1 * b1 + 4.0 * b2).sqrt();
    let (rp, rm) = (0.5 * (b1 + disc), 0.5 * (b1 - disc));
    // A + B = 1 and A rp + B rm = b1.
    let a = (b1 - rm) / (rp - rm);
    m0 * (a * (rp * t).exp() + (1.0 - a) * (rm * t).exp())
}

/// Expected event count bound `m₀(B1t + B2t²/2)e^{B1t+B2t²/2}`.
pub fn event_count_bound(model: &ModelSpec, t: f64) -> f64 {
    let e = growth_exponent(model, t);
    model.initial.count() as f64 * e * e.exp()
}

/// Inter-event gaps rescaled by the total rate in force during each gap,
/// `(T_{k+1} − T_k)·rate(count)`. Under the model they are i.i.d. Exp(1).
/// The censored gap after the last event is dropped.
pub fn normalized_gaps<F: Fn(usize) -> f64>(record: &HistoryRecord, rate: F) -> Vec<f64> {
    let mut count = record.initial_count();
    let mut last = 0.0;
    let mut out = Vec::with_capacity(record.events().len());
    for e in record.events() {
        out.push((e.time - last) * rate(count));
        last = e.time;
        match e.kind {
            EventKind::Apical | EventKind::Lateral => count += 1,
            EventKind::Death => count -= 1,
        }
    }
    out
}

/// One-sample Kolmogorov–Smirnov test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KsResult {
    pub n: usize,
    pub statistic: f64,
    pub p_value: f64,
}

/// KS test of `samples` against the continuous CDF `cdf`.
pub fn ks_test<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> KsResult {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    let nf = n as f64;
    let mut d = 0.0f64;
    for (i, &x) in xs.iter().enumerate() {
        let c = cdf(x);
        d = d.max((i as f64 + 1.0) / nf - c).max(c - i as f64 / nf);
    }
    let sqrt_n = nf.sqrt();
    let lambda = (sqrt_n + 0.12 + 0.11 / sqrt_n) * d;
    KsResult {
        n,
        statistic: d,
        p_value: kolmogorov_q(lambda),
    }
}

/// KS test against Exp(1).
pub fn ks_exponential(samples: &[f64]) -> KsResult {
    ks_test(samples, |x| if x <= 0.0 { 0.0 } else { -(-x).exp_m1() })
}

/// `Q(λ) = 2 Σ_{k≥1} (−1)^{k−1} e^{−2k²λ²}`, the Kolmogorov survival function.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=200 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        sum += sign * term;
        if term < 1e-16 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expected_mass_closed_forms() {
        assert!((expected_mass(1.0, 0.0, 2.0, 1.0) - 2.0 * std::f64::consts::E).abs() < 1e-12);
        assert!((expected_mass(0.0, 1.0, 1.0, 1.0) - 1.0f64.cosh()).abs() < 1e-12);
        // m'' = m' + m at t = 0: second difference matches b1 m'(0) + b2 m(0).
        let h = 1e-4;
        let m = |t| expected_mass(1.0, 1.0, 1.0, t);
        let second = (m(h) - 2.0 * m(0.0) + m(-h)) / (h * h);
        assert!((second - 2.0).abs() < 1e-5);
    }
    use crate::engine::{run, RunConfig};
    use crate::kernels::{BranchingRates, DeathRate};
    use crate::meanfield::GridSpec;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Exp};

    #[test]
    fn pairings() {
        let one = TestFunction::Constant { value: 1.0 };
        assert_eq!(
            pair(
                Measure::Atoms {
                    positions: &[],
                    scale: 1.0
                },
                &one
            ),
            0.0
        );
        let atoms = [Vec2::ZERO; 5];
        assert_eq!(
            pair(
                Measure::Atoms {
                    positions: &atoms,
                    scale: 1.0
                },
                &one
            ),
            5.0
        );
        let g = GridSpec::default();
        let field = DensityField::new(g, g.gaussian(Vec2::ZERO, 1.0, 1.0));
        assert_abs_diff_eq!(pair(Measure::Field(&field), &one), 1.0, epsilon = 1e-6);
    }

    #[test]
    fn tail_mass_properties() {
        let atoms = [Vec2::ZERO, Vec2::new(1.0, 0.0), Vec2::new(0.0, 3.0)];
        let m = Measure::Atoms {
            positions: &atoms,
            scale: 2.0,
        };
        assert_eq!(
            tail_mass(
                Measure::Atoms {
                    positions: &atoms[..1],
                    scale: 1.0
                },
                1.0
            ),
            0.0
        );
        assert_eq!(tail_mass(m, 0.0), 1.0);
        assert_eq!(tail_mass(m, 1.0), 0.5);
        assert_eq!(tail_mass(m, 5.0), 0.0);
    }

    #[test]
    fn frozen_martingale_is_zero() {
        let model = ModelSpec::frozen(vec![Vec2::ZERO, Vec2::new(1.0, 2.0)]);
        let out = run(&RunConfig::new(model.clone(), 1.0, 0.1)).unwrap();
        let f = TestFunction::gaussian(Vec2::new(0.5, 0.5), 1.0);
        let m = martingale_residual(&out, &f, &model).unwrap();
        assert!(m.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pure_death_martingale_is_small() {
        let mut model = ModelSpec::frozen(vec![Vec2::ZERO; 200]);
        model.death = DeathRate::TotalMass { gamma: 1.0 };
        model.scale = 200;
        let mut cfg = RunConfig::new(model.clone(), 1.0, 0.01);
        cfg.seed = 5;
        let out = run(&cfg).unwrap();
        let m = martingale_residual(&out, &TestFunction::Constant { value: 1.0 }, &model).unwrap();
        // the scaled martingale has standard deviation of order N^{-1/2}
        assert!(m.last().abs() < 0.25, "M_1 = {}", m.last());
    }

    #[test]
    fn moment_audit_flags_understated_bound() {
        let mut model = ModelSpec::frozen(vec![Vec2::ZERO; 20]);
        model.rates = BranchingRates::constant(1.0, 0.0);
        let cfg = RunConfig::new(model.clone(), 1.0, 0.1);
        let stats = crate::engine::run_replicas(&cfg, 200, &[]).unwrap();
        assert!(moment_audit(&stats, &model).passed());
        let mut lying = model.clone();
        lying.rates.b1_bound = 0.5;
        let audit = moment_audit(&stats, &lying);
        assert!(!audit.passed());
        assert!(audit.first_failure().unwrap().t > 0.0);
    }

    #[test]
    fn ks_accepts_exponential_and_rejects_uniform() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let exp = Exp::new(1.0).unwrap();
        let xs: Vec<f64> = (0..5000).map(|_| exp.sample(&mut rng)).collect();
        assert!(ks_exponential(&xs).p_value > 0.01);
        let ys: Vec<f64> = (0..5000).map(|i| i as f64 / 5000.0 * 2.0).collect();
        assert!(ks_exponential(&ys).p_value < 1e-6);
    }

    #[test]
    fn kolmogorov_reference_values() {
        // Q(1.358) ≈ 0.05 and Q(1.628) ≈ 0.01
        assert_abs_diff_eq!(kolmogorov_q(1.358), 0.05, epsilon = 5e-4);
        assert_abs_diff_eq!(kolmogorov_q(1.628), 0.01, epsilon = 2e-4);
    }

    #[test]
    fn gaps_follow_the_count() {
        let mut model = ModelSpec::frozen(vec![Vec2::ZERO; 3]);
        model.rates = BranchingRates::constant(1.0, 0.0);
        let out = run(&RunConfig::new(model, 1.0, 0.1)).unwrap();
        let gaps = normalized_gaps(&out.record, |n| n as f64);
        assert_eq!(gaps.len(), out.record.events().len());
    }
}
