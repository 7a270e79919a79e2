use serde::{Deserialize, Serialize};

use crate::Vec2;

/// A non-negative spatial rate profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RateProfile {
    Constant {
        value: f64,
    },
    /// `base + peak · exp(-|x - center|² / 2 width²)`.
    GaussianBump {
        base: f64,
        peak: f64,
        center: Vec2,
        width: f64,
    },
    /// Logistic plateau: `inside` within `radius`, `outside` far away.
    Plateau {
        inside: f64,
        outside: f64,
        radius: f64,
        softness: f64,
    },
}

impl RateProfile {
    pub const ZERO: RateProfile = RateProfile::Constant { value: 0.0 };

    #[inline]
    pub fn eval(&self, x: Vec2) -> f64 {
        match *self {
            RateProfile::Constant { value } => value,
            RateProfile::GaussianBump {
                base,
                peak,
                center,
                width,
            } => base + peak * (-(x - center).norm_sq() / (2.0 * width * width)).exp(),
            RateProfile::Plateau {
                inside,
                outside,
                radius,
                softness,
            } => {
                let s = 1.0 / (1.0 + ((x.norm() - radius) / softness).exp());
                outside + (inside - outside) * s
            }
        }
    }

    /// Whether the profile is the same at every position.
    pub fn is_constant(&self) -> bool {
        matches!(self, RateProfile::Constant { .. })
    }

    /// Analytic supremum of the profile.
    pub fn sup(&self) -> f64 {
        match *self {
            RateProfile::Constant { value } => value,
            RateProfile::GaussianBump { base, peak, .. } => base + peak.max(0.0),
            RateProfile::Plateau { inside, outside, .. } => inside.max(outside),
        }
    }
}

/// Apical rate `b1 ≤ B1` and lateral rate density `b2 ≤ B2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BranchingRates {
    pub b1: RateProfile,
    pub b1_bound: f64,
    pub b2: RateProfile,
    pub b2_bound: f64,
}

impl Default for BranchingRates {
    fn default() -> Self {
        Self {
            b1: RateProfile::ZERO,
            b1_bound: 0.0,
            b2: RateProfile::ZERO,
            b2_bound: 0.0,
        }
    }
}

impl BranchingRates {
    /// Constant rates with tight bounds.
    pub fn constant(b1: f64, b2: f64) -> Self {
        Self {
            b1: RateProfile::Constant { value: b1 },
            b1_bound: b1,
            b2: RateProfile::Constant { value: b2 },
            b2_bound: b2,
        }
    }

    #[inline]
    pub fn b1(&self, x: Vec2) -> f64 {
        self.b1.eval(x)
    }

    #[inline]
    pub fn b2(&self, x: Vec2) -> f64 {
        self.b2.eval(x)
    }
}
