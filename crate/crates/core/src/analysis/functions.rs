use serde::{Deserialize, Serialize};

use crate::Vec2;

/// Smooth bounded test function with bounded first and second derivatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TestFunction {
    Constant {
        value: f64,
    },
    /// `height · exp(-|x - center|² / 2 width²)`.
    Gaussian {
        center: Vec2,
        width: f64,
        #[serde(default = "one")]
        height: f64,
    },
    /// `x_axis · (1 - |x|²/R²)³` inside the disc of radius `R`, zero outside.
    SmoothedCoordinate {
        axis: usize,
        radius: f64,
    },
}

fn one() -> f64 {
    1.0
}

impl TestFunction {
    pub fn gaussian(center: Vec2, width: f64) -> Self {
        TestFunction::Gaussian {
            center,
            width,
            height: 1.0,
        }
    }

    /// Short label used in report columns.
    pub fn name(&self) -> String {
        match self {
            TestFunction::Constant { value } => format!("const({value})"),
            TestFunction::Gaussian { center, width, .. } => {
                format!("gauss({},{};{})", center.x, center.y, width)
            }
            TestFunction::SmoothedCoordinate { axis, radius } => {
                format!("coord{}(R={})", axis, radius)
            }
        }
    }

    pub fn value(&self, x: Vec2) -> f64 {
        match *self {
            TestFunction::Constant { value } => value,
            TestFunction::Gaussian { center, width, height } => {
                height * (-(x - center).norm_sq() / (2.0 * width * width)).exp()
            }
            TestFunction::SmoothedCoordinate { axis, radius } => {
                let q = 1.0 - x.norm_sq() / (radius * radius);
                if q <= 0.0 {
                    0.0
                } else {
                    coord(x, axis) * q * q * q
                }
            }
        }
    }

    pub fn gradient(&self, x: Vec2) -> Vec2 {
        match *self {
            TestFunction::Constant { .. } => Vec2::ZERO,
            TestFunction::Gaussian { center, width, .. } => {
                let w2 = width * width;
                (x - center) * (-self.value(x) / w2)
            }
            TestFunction::SmoothedCoordinate { axis, radius } => {
                let r2 = radius * radius;
                let q = 1.0 - x.norm_sq() / r2;
                if q <= 0.0 {
                    return Vec2::ZERO;
                }
                // ∇(x_a q³) = q³ e_a + x_a · 3q² · (-2x/R²)
                let xa = coord(x, axis);
                let common = x * (-6.0 * xa * q * q / r2);
                let e = if axis == 0 {
                    Vec2::new(1.0, 0.0)
                } else {
                    Vec2::new(0.0, 1.0)
                };
                e * (q * q * q) + common
            }
        }
    }

    /// `(∂²f/∂x₁², ∂²f/∂x₂²)`.
    pub fn hessian_diag(&self, x: Vec2) -> Vec2 {
        match *self {
            TestFunction::Constant { .. } => Vec2::ZERO,
            TestFunction::Gaussian { center, width, .. } => {
                let w2 = width * width;
                let d = x - center;
                let v = self.value(x);
                Vec2::new(v * (d.x * d.x / w2 - 1.0) / w2, v * (d.y * d.y / w2 - 1.0) / w2)
            }
            TestFunction::SmoothedCoordinate { axis, radius } => {
                let r2 = radius * radius;
                let q = 1.0 - x.norm_sq() / r2;
                if q <= 0.0 {
                    return Vec2::ZERO;
                }
                let xa = coord(x, axis);
                let second = |i: usize| {
                    let xi = coord(x, i);
                    // ∂_i q = -2x_i/R², ∂_i² q = -2/R²
                    let dq = -2.0 * xi / r2;
                    let d2q = -2.0 / r2;
                    let dxa = if i == axis { 1.0 } else { 0.0 };
                    // ∂_i²(x_a q³) = 2 δ_{ia} 3q² ∂_i q + x_a (6q (∂_i q)² + 3q² ∂_i² q)
                    2.0 * dxa * 3.0 * q * q * dq + xa * (6.0 * q * dq * dq + 3.0 * q * q * d2q)
                };
                Vec2::new(second(0), second(1))
            }
        }
    }

    pub fn laplacian(&self, x: Vec2) -> f64 {
        let h = self.hessian_diag(x);
        h.x + h.y
    }

    /// Upper bound on `|f|`.
    pub fn sup_norm(&self) -> f64 {
        match *self {
            TestFunction::Constant { value } => value.abs(),
            TestFunction::Gaussian { height, .. } => height.abs(),
            // max of r(1-r²/R²)³ at r = R/√7
            TestFunction::SmoothedCoordinate { radius, .. } => {
                let r = radius / 7f64.sqrt();
                r * (1.0 - 1.0 / 7.0f64).powi(3)
            }
        }
    }
}

#[inline]
fn coord(x: Vec2, axis: usize) -> f64 {
    if axis == 0 {
        x.x
    } else {
        x.y
    }
}

/// The default versioned dictionary: the constant, four Gaussians and both
/// smoothed coordinates.
pub fn default_dictionary() -> Vec<TestFunction> {
    vec![
        TestFunction::Constant { value: 1.0 },
        TestFunction::gaussian(Vec2::ZERO, 1.0),
        TestFunction::gaussian(Vec2::new(1.0, 0.0), 0.5),
        TestFunction::gaussian(Vec2::new(-1.0, 1.0), 1.0),
        TestFunction::gaussian(Vec2::new(0.0, -1.5), 2.0),
        TestFunction::SmoothedCoordinate { axis: 0, radius: 4.0 },
        TestFunction::SmoothedCoordinate { axis: 1, radius: 4.0 },
    ]
}
