use serde::{Deserialize, Serialize};

use crate::Vec2;

/// Apex death rate `d(x, ν)`, evaluated on the measure of currently alive tips.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "form", rename_all = "kebab-case")]
pub enum DeathRate {
    #[default]
    Zero,
    /// `d(x, ν) = γ ⟨ν, 1⟩`.
    TotalMass { gamma: f64 },
    /// `d(x, ν) = γ ⟨ν, φ(x - ·)⟩` with `φ(z) = height · exp(-|z|²/2 width²)`.
    Convolution { gamma: f64, height: f64, width: f64 },
}

impl DeathRate {
    /// Constant `C` with `d(x, ν) ≤ C ⟨ν, 1⟩`.
    pub fn bound(&self) -> f64 {
        match *self {
            DeathRate::Zero => 0.0,
            DeathRate::TotalMass { gamma } => gamma,
            DeathRate::Convolution { gamma, height, .. } => gamma * height.abs(),
        }
    }

    /// Constant witness `Ψ` for `|d(x,ν) - d(x,ν')| ≤ |⟨ν - ν', Ψ⟩|`, when one
    /// is known. The convolution form has none independent of `x`.
    pub fn lipschitz_witness(&self) -> Option<f64> {
        match *self {
            DeathRate::Zero => Some(0.0),
            DeathRate::TotalMass { gamma } => Some(gamma),
            DeathRate::Convolution { .. } => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        match *self {
            DeathRate::Zero => true,
            DeathRate::TotalMass { gamma } => gamma == 0.0,
            DeathRate::Convolution { gamma, height, .. } => gamma == 0.0 || height == 0.0,
        }
    }

    /// Bump `φ` of the convolution form.
    #[inline]
    pub fn bump(height: f64, width: f64, z: Vec2) -> f64 {
        height * (-z.norm_sq() / (2.0 * width * width)).exp()
    }

    /// `d(x, ν/scale)` for `ν = Σ δ_{alive}`; `count` must equal the number of
    /// items yielded by `alive`.
    pub fn rate_with<I>(&self, x: Vec2, count: usize, alive: I, scale: f64) -> f64
    where
        I: IntoIterator<Item = Vec2>,
    {
        match *self {
            DeathRate::Zero => 0.0,
            DeathRate::TotalMass { gamma } => gamma * count as f64 / scale,
            DeathRate::Convolution { gamma, height, width } => {
                let s: f64 = alive.into_iter().map(|y| Self::bump(height, width, x - y)).sum();
                gamma * s / scale
            }
        }
    }
}

/// `d^N(x, ν) = d(x, ν/N)` for the empirical measure of `alive`.
pub fn eval_death(death: &DeathRate, x: Vec2, alive: &[Vec2], scale: f64) -> f64 {
    death.rate_with(x, alive.len(), alive.iter().copied(), scale)
}
