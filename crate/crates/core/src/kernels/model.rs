use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{BranchingRates, DeathRate, InteractionKernel};
use crate::Vec2;

/// Initial population `Z_0`, either explicit atoms or a sampler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InitialCondition {
    Atoms {
        positions: Vec<Vec2>,
    },
    PointMass {
        at: Vec2,
        count: usize,
    },
    /// Isotropic Gaussian cloud with per-axis standard deviation `width`.
    Gaussian {
        center: Vec2,
        width: f64,
        count: usize,
    },
    UniformDisc {
        center: Vec2,
        radius: f64,
        count: usize,
    },
}

impl Default for InitialCondition {
    fn default() -> Self {
        InitialCondition::Atoms { positions: Vec::new() }
    }
}

impl InitialCondition {
    pub fn count(&self) -> usize {
        match self {
            InitialCondition::Atoms { positions } => positions.len(),
            InitialCondition::PointMass { count, .. }
            | InitialCondition::Gaussian { count, .. }
            | InitialCondition::UniformDisc { count, .. } => *count,
        }
    }

    /// Draws the initial atoms. Explicit atoms ignore the generator.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<Vec2> {
        match *self {
            InitialCondition::Atoms { ref positions } => positions.clone(),
            InitialCondition::PointMass { at, count } => vec![at; count],
            InitialCondition::Gaussian { center, width, count } => (0..count)
                .map(|_| {
                    let gx: f64 = StandardNormal.sample(rng);
                    let gy: f64 = StandardNormal.sample(rng);
                    center + Vec2::new(gx, gy) * width
                })
                .collect(),
            InitialCondition::UniformDisc { center, radius, count } => (0..count)
                .map(|_| {
                    let r = radius * rng.random::<f64>().sqrt();
                    let a = std::f64::consts::TAU * rng.random::<f64>();
                    center + Vec2::new(r * a.cos(), r * a.sin())
                })
                .collect(),
        }
    }

    fn with_count(&self, count: usize) -> Self {
        let mut out = self.clone();
        match &mut out {
            InitialCondition::Atoms { .. } => {}
            InitialCondition::PointMass { count: c, .. }
            | InitialCondition::Gaussian { count: c, .. }
            | InitialCondition::UniformDisc { count: c, .. } => *c = count,
        }
        out
    }

    /// Same shape, ignoring the atom count.
    fn same_shape(&self, other: &Self) -> bool {
        match (self, other) {
            (InitialCondition::Atoms { positions: a }, InitialCondition::Atoms { positions: b }) => a == b,
            _ => self.with_count(0) == other.with_count(0),
        }
    }
}

/// Everything that defines the process: kernel, rates, diffusion, scale and
/// initial condition. The particle engine and the mean-field solver read the
/// same object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    #[serde(default)]
    pub kernel: InteractionKernel,
    #[serde(default)]
    pub rates: BranchingRates,
    #[serde(default)]
    pub death: DeathRate,
    #[serde(default)]
    pub sigma: f64,
    /// Population scale `N`: kernel and death rate are evaluated on `Z / N`.
    #[serde(default = "default_scale")]
    pub scale: u64,
    pub initial: InitialCondition,
}

fn default_scale() -> u64 {
    1
}

impl ModelSpec {
    /// A model with no motion, no events and the given atoms.
    pub fn frozen(atoms: Vec<Vec2>) -> Self {
        Self {
            kernel: InteractionKernel::Zero,
            rates: BranchingRates::default(),
            death: DeathRate::Zero,
            sigma: 0.0,
            scale: 1,
            initial: InitialCondition::Atoms { positions: atoms },
        }
    }

    #[inline]
    pub fn scale_f64(&self) -> f64 {
        self.scale as f64
    }

    /// Range checks on the plain parameters; the returned list is empty when
    /// the model is well formed.
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            errs.push(format!("model.sigma must be finite and >= 0, got {}", self.sigma));
        }
        if self.scale < 1 {
            errs.push("model.scale must be >= 1".into());
        }
        for (name, v) in [
            ("model.rates.b1_bound", self.rates.b1_bound),
            ("model.rates.b2_bound", self.rates.b2_bound),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                errs.push(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        match self.death {
            DeathRate::Zero => {}
            DeathRate::TotalMass { gamma } => {
                if !(gamma >= 0.0) {
                    errs.push(format!("model.death.gamma must be >= 0, got {gamma}"));
                }
            }
            DeathRate::Convolution { gamma, height, width } => {
                if !(gamma >= 0.0) || !(height >= 0.0) || !(width > 0.0) {
                    errs.push("model.death requires gamma >= 0, height >= 0, width > 0".into());
                }
            }
        }
        if let InteractionKernel::ExpDecay(k) = &self.kernel {
            if !(k.width > 0.0) || !(k.decay >= 0.0) || !(k.epsilon > 0.0) {
                errs.push("model.kernel requires width > 0, decay >= 0, epsilon > 0".into());
            }
        }
        match self.initial {
            InitialCondition::Gaussian { width, .. } if !(width > 0.0) => {
                errs.push("model.initial.width must be > 0".into())
            }
            InitialCondition::UniformDisc { radius, .. } if !(radius > 0.0) => {
                errs.push("model.initial.radius must be > 0".into())
            }
            _ => {}
        }
        errs
    }

    /// The same model at population scale `n`, keeping the scaled initial
    /// mass `count / scale` fixed.
    pub fn rescaled(&self, n: u64) -> Self {
        let mut out = self.clone();
        let count = self.initial.count() as f64 * n as f64 / self.scale as f64;
        out.initial = self.initial.with_count(count.round() as usize);
        out.scale = n;
        out
    }

    /// Whether two specs describe the same large-population limit (they may
    /// differ in `scale` and in the absolute atom count).
    pub fn same_limit(&self, other: &Self) -> bool {
        self.kernel == other.kernel
            && self.rates == other.rates
            && self.death == other.death
            && self.sigma == other.sigma
            && self.initial.same_shape(&other.initial)
            && (self.initial.count() as f64 / self.scale_f64() - other.initial.count() as f64 / other.scale_f64()).abs()
                <= 1e-9 * (1.0 + self.initial.count() as f64 / self.scale_f64())
    }
}
