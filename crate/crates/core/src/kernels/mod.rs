//! Interaction kernel, branching rates, death rate and the audit of their
//! structural bounds.
//!
//! Every evaluation here is a pure function of its arguments, so callers may
//! share a [`ModelSpec`] across threads freely.

mod audit;
mod death;
mod model;
mod rates;
mod table;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Vec2;

pub use audit::{audit_assumptions, AssumptionCheck, AuditReport, AuditStatus, SamplePlan};
pub use death::{eval_death, DeathRate};
pub use model::{InitialCondition, ModelSpec};
pub use rates::{BranchingRates, RateProfile};
pub use table::{KernelTable, TabulatedKernel};

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("kernel lag must be non-negative, got {0}")]
    NegativeLag(f64),
    #[error("kernel table: {0}")]
    Table(String),
    #[error("cannot read {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Sign of the Gaussian-gradient spatial profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelSign {
    /// Tips are pulled towards past filament points.
    Attraction,
    /// Tips are pushed away from past filament points.
    Repulsion,
}

/// `L_t(x) = A e^{-λt} k(x)` with `k(x) = ∓ x e^{-|x|²/(2w²)}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpDecayKernel {
    pub amplitude: f64,
    pub decay: f64,
    pub width: f64,
    pub sign: KernelSign,
    /// Tail mass of `h1` discarded beyond the memory horizon.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

fn default_epsilon() -> f64 {
    1e-6
}

impl ExpDecayKernel {
    pub fn new(amplitude: f64, decay: f64, width: f64, sign: KernelSign) -> Self {
        Self {
            amplitude,
            decay,
            width,
            sign,
            epsilon: default_epsilon(),
        }
    }

    /// Time factor `A e^{-λ lag}`.
    #[inline]
    pub fn time_factor(&self, lag: f64) -> f64 {
        self.amplitude * (-self.decay * lag).exp()
    }

    /// Spatial profile `k(dx)`.
    #[inline]
    pub fn spatial(&self, dx: Vec2) -> Vec2 {
        let g = (-dx.norm_sq() / (2.0 * self.width * self.width)).exp();
        match self.sign {
            KernelSign::Attraction => dx * (-g),
            KernelSign::Repulsion => dx * g,
        }
    }

    pub fn h1(&self, lag: f64) -> f64 {
        self.amplitude.abs() * self.width * (-0.5f64).exp() * (-self.decay * lag).exp()
    }

    /// The Jacobian of `x e^{-|x|²/2w²}` has operator norm at most 1 (attained at 0).
    pub fn h2(&self, lag: f64) -> f64 {
        self.amplitude.abs() * (-self.decay * lag).exp()
    }

    /// Smallest `τ` with `∫_τ^∞ h1 ≤ ε`; infinite when the kernel does not decay.
    pub fn memory_horizon(&self) -> f64 {
        if self.decay <= 0.0 {
            return f64::INFINITY;
        }
        let scale = self.amplitude.abs() * self.width * (-0.5f64).exp() / self.decay;
        if scale <= self.epsilon || scale == 0.0 {
            return 0.0;
        }
        (scale / self.epsilon).ln() / self.decay
    }

    /// `∫_0^t h1`.
    pub fn h1_integral(&self, t: f64) -> f64 {
        let c = self.amplitude.abs() * self.width * (-0.5f64).exp();
        if self.decay == 0.0 {
            c * t
        } else {
            c * (1.0 - (-self.decay * t).exp()) / self.decay
        }
    }
}

/// The memory kernel `L_t(x)` driving tip elongation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum InteractionKernel {
    #[default]
    Zero,
    ExpDecay(ExpDecayKernel),
    Table(TabulatedKernel),
}

impl InteractionKernel {
    pub fn is_zero(&self) -> bool {
        match self {
            InteractionKernel::Zero => true,
            InteractionKernel::ExpDecay(k) => k.amplitude == 0.0,
            InteractionKernel::Table(_) => false,
        }
    }

    /// Evaluates `L_lag(dx)`, returning zero beyond the memory horizon.
    pub fn eval(&self, lag: f64, dx: Vec2) -> Result<Vec2, KernelError> {
        if !(lag >= 0.0) {
            return Err(KernelError::NegativeLag(lag));
        }
        Ok(self.eval_unchecked(lag, dx))
    }

    /// [`eval`](Self::eval) without the lag check, for hot loops whose lags
    /// are non-negative by construction.
    #[inline]
    pub fn eval_unchecked(&self, lag: f64, dx: Vec2) -> Vec2 {
        match self {
            InteractionKernel::Zero => Vec2::ZERO,
            InteractionKernel::ExpDecay(k) => {
                if lag > k.memory_horizon() {
                    Vec2::ZERO
                } else {
                    k.spatial(dx) * k.time_factor(lag)
                }
            }
            InteractionKernel::Table(t) => t.eval(lag, dx),
        }
    }

    pub fn h1(&self, lag: f64) -> f64 {
        match self {
            InteractionKernel::Zero => 0.0,
            InteractionKernel::ExpDecay(k) => k.h1(lag),
            InteractionKernel::Table(t) => t.h1(lag),
        }
    }

    pub fn h2(&self, lag: f64) -> f64 {
        match self {
            InteractionKernel::Zero => 0.0,
            InteractionKernel::ExpDecay(k) => k.h2(lag),
            InteractionKernel::Table(t) => t.h2(lag),
        }
    }

    /// Lags beyond this value contribute nothing to the drift.
    pub fn memory_horizon(&self) -> f64 {
        match self {
            InteractionKernel::Zero => 0.0,
            InteractionKernel::ExpDecay(k) => k.memory_horizon(),
            InteractionKernel::Table(t) => t.max_lag(),
        }
    }

    /// `∫_0^t h1(s) ds`.
    pub fn h1_integral(&self, t: f64) -> f64 {
        match self {
            InteractionKernel::Zero => 0.0,
            InteractionKernel::ExpDecay(k) => k.h1_integral(t),
            InteractionKernel::Table(tab) => tab.h1_integral(t),
        }
    }
}
