use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DeathRate, InteractionKernel, ModelSpec};
use crate::Vec2;

/// Where the structural bounds are probed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePlan {
    /// Lags at which the kernel envelopes are checked.
    pub lags: Vec<f64>,
    /// Random points per lag, uniform in `[-radius, radius]²`.
    pub points: usize,
    pub radius: f64,
    /// Random finite measures used for the death-rate checks.
    pub measures: usize,
    pub seed: u64,
}

impl Default for SamplePlan {
    fn default() -> Self {
        Self {
            lags: (0..=20).map(|i| i as f64 * 0.5).collect(),
            points: 10_000,
            radius: 5.0,
            measures: 200,
            seed: 0x5eed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AuditStatus {
    Pass,
    Fail,
    NotCertified,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionCheck {
    pub name: String,
    pub status: AuditStatus,
    /// Largest observed excess over the declared bound (0 when satisfied).
    pub max_violation: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub checks: Vec<AssumptionCheck>,
}

impl AuditReport {
    /// No check failed. "Not certified" checks do not count as failures.
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.status != AuditStatus::Fail)
    }

    pub fn get(&self, name: &str) -> Option<&AssumptionCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failures(&self) -> impl Iterator<Item = &AssumptionCheck> {
        self.checks.iter().filter(|c| c.status == AuditStatus::Fail)
    }
}

const REL_TOL: f64 = 1e-12;

fn excess(value: f64, bound: f64) -> f64 {
    (value - bound * (1.0 + REL_TOL) - f64::MIN_POSITIVE).max(0.0)
}

fn check(name: &str, max_violation: f64, detail: String) -> AssumptionCheck {
    AssumptionCheck {
        name: name.to_string(),
        status: if max_violation > 0.0 {
            AuditStatus::Fail
        } else {
            AuditStatus::Pass
        },
        max_violation,
        detail,
    }
}

fn random_point(rng: &mut ChaCha8Rng, r: f64) -> Vec2 {
    Vec2::new(rng.random_range(-r..=r), rng.random_range(-r..=r))
}

/// Probes the kernel envelopes `h1`, `h2`, the rate bounds and the two death
/// bounds on a random sample.
pub fn audit_assumptions(spec: &ModelSpec, plan: &SamplePlan) -> AuditReport {
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let r = plan.radius;
    let mut checks = Vec::new();
    let kernel = &spec.kernel;

    let (mut l1, mut l1_max_norm) = (0.0f64, 0.0f64);
    let mut l2 = 0.0f64;
    for &lag in &plan.lags {
        let (h1, h2) = (kernel.h1(lag), kernel.h2(lag));
        for _ in 0..plan.points {
            let x = random_point(&mut rng, r);
            let y = random_point(&mut rng, r);
            let lx = kernel.eval_unchecked(lag, x);
            let ly = kernel.eval_unchecked(lag, y);
            l1_max_norm = l1_max_norm.max(lx.norm());
            l1 = l1.max(excess(lx.norm(), h1));
            l2 = l2.max(excess((lx - ly).norm(), h2 * (x - y).norm()));
        }
    }
    checks.push(check(
        "kernel bound: |L_t(x)| <= h1(t)",
        l1,
        format!("max observed |L_t(x)| = {l1_max_norm:e}"),
    ));
    checks.push(check("kernel Lipschitz: |L_t(x)-L_t(y)| <= h2(t)|x-y|", l2, String::new()));

    let integrable = match kernel {
        InteractionKernel::Zero | InteractionKernel::Table(_) => AuditStatus::Pass,
        InteractionKernel::ExpDecay(k) if k.amplitude == 0.0 || k.decay > 0.0 => AuditStatus::Pass,
        InteractionKernel::ExpDecay(_) => AuditStatus::NotCertified,
    };
    checks.push(AssumptionCheck {
        name: "h1 integrable".into(),
        status: integrable,
        max_violation: 0.0,
        detail: if integrable == AuditStatus::NotCertified {
            "zero decay: h1 is integrable on finite horizons only".into()
        } else {
            format!("memory horizon {:e}", kernel.memory_horizon())
        },
    });

    let (mut b1, mut b2, mut b1_max, mut b2_max) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..plan.points {
        let x = random_point(&mut rng, r);
        let v1 = spec.rates.b1(x);
        let v2 = spec.rates.b2(x);
        b1_max = b1_max.max(v1);
        b2_max = b2_max.max(v2);
        b1 = b1.max(excess(v1, spec.rates.b1_bound)).max((-v1).max(0.0));
        b2 = b2.max(excess(v2, spec.rates.b2_bound)).max((-v2).max(0.0));
    }
    // Analytic suprema catch peaks the random sample may miss.
    b1 = b1.max(excess(spec.rates.b1.sup(), spec.rates.b1_bound));
    b2 = b2.max(excess(spec.rates.b2.sup(), spec.rates.b2_bound));
    checks.push(check(
        "b1 <= B1",
        b1,
        format!("max sampled b1 = {b1_max:e}, B1 = {:e}", spec.rates.b1_bound),
    ));
    checks.push(check(
        "b2 <= B2",
        b2,
        format!("max sampled b2 = {b2_max:e}, B2 = {:e}", spec.rates.b2_bound),
    ));

    let death = &spec.death;
    let c = death.bound();
    let mut d1 = 0.0f64;
    let mut d2 = 0.0f64;
    let witness = death.lipschitz_witness();
    for _ in 0..plan.measures {
        let n = rng.random_range(0..50usize);
        let m = rng.random_range(0..50usize);
        let nu: Vec<Vec2> = (0..n).map(|_| random_point(&mut rng, r)).collect();
        let nu2: Vec<Vec2> = (0..m).map(|_| random_point(&mut rng, r)).collect();
        let x = random_point(&mut rng, r);
        let d = super::eval_death(death, x, &nu, 1.0);
        d1 = d1.max(excess(d, c * n as f64)).max((-d).max(0.0));
        if let Some(psi) = witness {
            let dd = (d - super::eval_death(death, x, &nu2, 1.0)).abs();
            d2 = d2.max(excess(dd, (psi * (n as f64 - m as f64)).abs()));
        }
    }
    checks.push(check("death bound: d(x,nu) <= C<nu,1>", d1, format!("C = {c:e}")));
    match (death, witness) {
        (DeathRate::Convolution { .. }, _) | (_, None) => checks.push(AssumptionCheck {
            name: "death Lipschitz: |d(x,nu)-d(x,nu')| <= |<nu-nu',Psi>|".into(),
            status: AuditStatus::NotCertified,
            max_violation: 0.0,
            detail: "no position-independent witness for the convolution form".into(),
        }),
        (_, Some(psi)) => checks.push(check(
            "death Lipschitz: |d(x,nu)-d(x,nu')| <= |<nu-nu',Psi>|",
            d2,
            format!("Psi = {psi:e}"),
        )),
    }

    AuditReport { checks }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{BranchingRates, ExpDecayKernel, KernelSign, RateProfile, TabulatedKernel};

    fn small_plan() -> SamplePlan {
        SamplePlan {
            lags: vec![0.0, 0.5, 2.0],
            points: 4000,
            ..SamplePlan::default()
        }
    }

    #[test]
    fn trivial_model_passes_everything() {
        let spec = ModelSpec::frozen(vec![Vec2::ZERO]);
        let rep = audit_assumptions(&spec, &small_plan());
        assert!(rep.passed());
        assert!(rep.checks.iter().all(|c| c.max_violation == 0.0));
    }

    #[test]
    fn preset_envelopes_hold_on_large_sample() {
        let spec = ModelSpec {
            kernel: InteractionKernel::ExpDecay(ExpDecayKernel::new(-1.7, 0.8, 0.6, KernelSign::Repulsion)),
            ..ModelSpec::frozen(vec![])
        };
        let plan = SamplePlan {
            lags: vec![0.0, 0.1, 1.0, 3.0],
            points: 10_000,
            radius: 2.0,
            ..SamplePlan::default()
        };
        let rep = audit_assumptions(&spec, &plan);
        assert!(rep.passed(), "{rep:?}");
    }

    #[test]
    fn misdeclared_envelope_is_reported() {
        // Table kernel equal to the preset but declaring h1 = 0.
        let preset = ExpDecayKernel::new(1.0, 0.0, 1.0, KernelSign::Attraction);
        let axis: Vec<f64> = (-10..=10).map(|i| i as f64 * 0.3).collect();
        let table = crate::kernels::KernelTable::from_fn(
            vec![0.0, 5.0],
            axis.clone(),
            axis,
            |l, x| preset.spatial(x) * preset.time_factor(l),
            vec![[0.0, 0.0, 10.0], [5.0, 0.0, 10.0]],
        )
        .unwrap();
        let spec = ModelSpec {
            kernel: InteractionKernel::Table(TabulatedKernel::from_table(table)),
            ..ModelSpec::frozen(vec![])
        };
        let rep = audit_assumptions(&spec, &small_plan());
        let l1 = rep.get("kernel bound: |L_t(x)| <= h1(t)").unwrap();
        assert_eq!(l1.status, AuditStatus::Fail);
        assert!(l1.max_violation > 0.5 && l1.max_violation <= (-0.5f64).exp() + 1e-9);
        assert!(!rep.passed());
    }

    #[test]
    fn total_mass_death_passes_d1_with_equality() {
        let spec = ModelSpec {
            death: DeathRate::TotalMass { gamma: 0.3 },
            ..ModelSpec::frozen(vec![])
        };
        let rep = audit_assumptions(&spec, &small_plan());
        let d1 = rep.get("death bound: d(x,nu) <= C<nu,1>").unwrap();
        assert_eq!(d1.status, AuditStatus::Pass);
        assert_eq!(d1.max_violation, 0.0);
        assert_eq!(rep.checks.last().unwrap().status, AuditStatus::Pass);
    }

    #[test]
    fn convolution_death_d2_not_certified() {
        let spec = ModelSpec {
            death: DeathRate::Convolution {
                gamma: 1.0,
                height: 1.0,
                width: 0.5,
            },
            ..ModelSpec::frozen(vec![])
        };
        let rep = audit_assumptions(&spec, &small_plan());
        assert_eq!(rep.checks.last().unwrap().status, AuditStatus::NotCertified);
        assert!(rep.passed());
    }

    #[test]
    fn understated_rate_bound_fails() {
        let spec = ModelSpec {
            rates: BranchingRates {
                b1: RateProfile::GaussianBump {
                    base: 0.0,
                    peak: 2.0,
                    center: Vec2::ZERO,
                    width: 0.2,
                },
                b1_bound: 1.0,
                ..BranchingRates::default()
            },
            ..ModelSpec::frozen(vec![])
        };
        let rep = audit_assumptions(&spec, &small_plan());
        assert_eq!(rep.get("b1 <= B1").unwrap().status, AuditStatus::Fail);
    }
}
