use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::kernels::{InitialCondition, ModelSpec};
use crate::Vec2;

/// Rectangular cell-centred grid on `[lower, upper]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lower: Vec2,
    pub upper: Vec2,
    pub cells: [usize; 2],
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            lower: Vec2::new(-8.0, -8.0),
            upper: Vec2::new(8.0, 8.0),
            cells: [256, 256],
        }
    }
}

impl GridSpec {
    pub fn square(half_width: f64, cells: usize) -> Self {
        Self {
            lower: Vec2::new(-half_width, -half_width),
            upper: Vec2::new(half_width, half_width),
            cells: [cells, cells],
        }
    }

    /// Same domain with twice the cells per axis.
    pub fn refined(&self) -> Self {
        Self {
            cells: [2 * self.cells[0], 2 * self.cells[1]],
            ..*self
        }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.upper.x > self.lower.x && self.upper.y > self.lower.y) {
            errs.push("grid upper corner must exceed the lower corner".into());
        }
        if self.cells[0] < 2 || self.cells[1] < 2 {
            errs.push("grid needs at least 2 cells per axis".into());
        }
        errs
    }

    #[inline]
    pub fn nx(&self) -> usize {
        self.cells[0]
    }

    #[inline]
    pub fn ny(&self) -> usize {
        self.cells[1]
    }

    pub fn len(&self) -> usize {
        self.cells[0] * self.cells[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cell widths per axis.
    pub fn h(&self) -> Vec2 {
        Vec2::new(
            (self.upper.x - self.lower.x) / self.cells[0] as f64,
            (self.upper.y - self.lower.y) / self.cells[1] as f64,
        )
    }

    pub fn cell_area(&self) -> f64 {
        let h = self.h();
        h.x * h.y
    }

    #[inline]
    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.cells[0] + ix
    }

    #[inline]
    pub fn center(&self, ix: usize, iy: usize) -> Vec2 {
        let h = self.h();
        Vec2::new(
            self.lower.x + (ix as f64 + 0.5) * h.x,
            self.lower.y + (iy as f64 + 0.5) * h.y,
        )
    }

    /// All cell centres in storage order.
    pub fn centers(&self) -> Vec<Vec2> {
        let mut out = Vec::with_capacity(self.len());
        for iy in 0..self.ny() {
            for ix in 0..self.nx() {
                out.push(self.center(ix, iy));
            }
        }
        out
    }

    /// Cell edges along one axis.
    fn edges(&self, axis: usize) -> Vec<f64> {
        let (lo, h, n) = if axis == 0 {
            (self.lower.x, self.h().x, self.nx())
        } else {
            (self.lower.y, self.h().y, self.ny())
        };
        (0..=n).map(|i| lo + i as f64 * h).collect()
    }

    /// Cell averages of `mass · N(center, width² I)`.
    pub fn gaussian(&self, center: Vec2, width: f64, mass: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.add_gaussian(&mut out, center, width, mass, f64::INFINITY);
        out
    }

    /// Adds cell averages of a Gaussian, restricted to `reach` widths.
    fn add_gaussian(&self, out: &mut [f64], center: Vec2, width: f64, mass: f64, reach: f64) {
        let px = cell_masses(&self.edges(0), center.x, width, reach);
        let py = cell_masses(&self.edges(1), center.y, width, reach);
        let scale = mass / self.cell_area();
        for (iy, &wy) in py.iter().enumerate() {
            if wy == 0.0 {
                continue;
            }
            let row = &mut out[iy * self.nx()..(iy + 1) * self.nx()];
            for (r, &wx) in row.iter_mut().zip(&px) {
                *r += scale * wx * wy;
            }
        }
    }

    /// Kernel density estimate of atoms each of mass `1/scale`.
    pub fn kde(&self, atoms: &[Vec2], scale: f64, bandwidth: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        for &a in atoms {
            self.add_gaussian(&mut out, a, bandwidth, 1.0 / scale, 9.0);
        }
        out
    }

    /// Cell averages of the uniform density of the given mass on a disc,
    /// from an 8×8 sub-sample of each cell.
    pub fn disc(&self, center: Vec2, radius: f64, mass: f64) -> Vec<f64> {
        const SUB: usize = 8;
        let h = self.h();
        let dens = mass / (std::f64::consts::PI * radius * radius);
        let mut out = vec![0.0; self.len()];
        for iy in 0..self.ny() {
            for ix in 0..self.nx() {
                let c = self.center(ix, iy);
                if (c - center).norm() > radius + h.norm() {
                    continue;
                }
                let mut hits = 0;
                for sy in 0..SUB {
                    for sx in 0..SUB {
                        let p = Vec2::new(
                            c.x + ((sx as f64 + 0.5) / SUB as f64 - 0.5) * h.x,
                            c.y + ((sy as f64 + 0.5) / SUB as f64 - 0.5) * h.y,
                        );
                        if (p - center).norm_sq() <= radius * radius {
                            hits += 1;
                        }
                    }
                }
                out[self.index(ix, iy)] = dens * hits as f64 / (SUB * SUB) as f64;
            }
        }
        out
    }
}

fn cell_masses(edges: &[f64], mu: f64, s: f64, reach: f64) -> Vec<f64> {
    let k = 1.0 / (s * std::f64::consts::SQRT_2);
    let cdf = |x: f64| 0.5 * libm::erfc(-(x - mu) * k);
    let mut out = vec![0.0; edges.len() - 1];
    let (lo, hi) = (mu - reach * s, mu + reach * s);
    for i in 0..out.len() {
        let (a, b) = (edges[i], edges[i + 1]);
        if b < lo || a > hi {
            continue;
        }
        out[i] = if a > mu {
            // upper tail: difference of complementary CDFs keeps precision
            0.5 * (libm::erfc((a - mu) * k) - libm::erfc((b - mu) * k))
        } else {
            cdf(b) - cdf(a)
        };
    }
    out
}

/// Density `ρ_t` (cell averages) and the cumulative field `∫_0^t ρ_s ds`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    pub grid: GridSpec,
    pub time: f64,
    pub rho: Vec<f64>,
    pub cumulative: Vec<f64>,
}

impl DensityField {
    pub fn new(grid: GridSpec, rho: Vec<f64>) -> Self {
        assert_eq!(rho.len(), grid.len(), "density does not match the grid");
        Self {
            grid,
            time: 0.0,
            cumulative: vec![0.0; rho.len()],
            rho,
        }
    }

    /// Limit density of the model's initial condition, `Z_0 / N`.
    ///
    /// Sampled initial conditions use their analytic density; explicit atoms
    /// and point masses are smoothed with a Gaussian of width `bandwidth`.
    pub fn initial(grid: GridSpec, model: &ModelSpec, bandwidth: f64) -> Self {
        let n = model.scale_f64();
        let rho = match model.initial {
            InitialCondition::Gaussian { center, width, count } => grid.gaussian(center, width, count as f64 / n),
            InitialCondition::UniformDisc { center, radius, count } => grid.disc(center, radius, count as f64 / n),
            InitialCondition::PointMass { at, count } => grid.gaussian(at, bandwidth, count as f64 / n),
            InitialCondition::Atoms { ref positions } => grid.kde(positions, n, bandwidth),
        };
        Self::new(grid, rho)
    }

    /// `∫ ρ` over the grid.
    pub fn mass(&self) -> f64 {
        self.rho.iter().sum::<f64>() * self.grid.cell_area()
    }

    /// Pointwise value at the cell containing `x`; zero outside the grid.
    pub fn value_at(&self, x: Vec2) -> f64 {
        let h = self.grid.h();
        let fx = ((x.x - self.grid.lower.x) / h.x).floor();
        let fy = ((x.y - self.grid.lower.y) / h.y).floor();
        if fx < 0.0 || fy < 0.0 || fx >= self.grid.nx() as f64 || fy >= self.grid.ny() as f64 {
            return 0.0;
        }
        self.rho[self.grid.index(fx as usize, fy as usize)]
    }

    /// `∫ f ρ` by the midpoint rule on cell centres.
    pub fn integrate<F: Fn(Vec2) -> f64>(&self, f: F) -> f64 {
        let mut acc = 0.0;
        for iy in 0..self.grid.ny() {
            for ix in 0..self.grid.nx() {
                let v = self.rho[self.grid.index(ix, iy)];
                if v != 0.0 {
                    acc += f(self.grid.center(ix, iy)) * v;
                }
            }
        }
        acc * self.grid.cell_area()
    }

    /// CSV `x,y,rho` in storage order after a `#` line describing the grid.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let g = &self.grid;
        writeln!(
            out,
            "# t={:?} lower=[{:?},{:?}] upper=[{:?},{:?}] cells=[{},{}]",
            self.time,
            g.lower.x,
            g.lower.y,
            g.upper.x,
            g.upper.y,
            g.nx(),
            g.ny()
        )?;
        writeln!(out, "x,y,rho")?;
        for iy in 0..g.ny() {
            for ix in 0..g.nx() {
                let c = g.center(ix, iy);
                writeln!(out, "{:?},{:?},{:?}", c.x, c.y, self.rho[g.index(ix, iy)])?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn gaussian_cell_averages_hold_the_mass() {
        let g = GridSpec::square(8.0, 64);
        let rho = g.gaussian(Vec2::new(0.3, -0.2), 1.0, 2.5);
        let f = DensityField::new(g, rho);
        assert_abs_diff_eq!(f.mass(), 2.5, epsilon = 1e-12);
        let m = f.integrate(|x| x.x) / f.mass();
        assert_abs_diff_eq!(m, 0.3, epsilon = 1e-10);
    }

    #[test]
    fn kde_mass_is_count_over_scale() {
        let g = GridSpec::square(4.0, 64);
        let atoms = vec![Vec2::ZERO, Vec2::new(1.0, 1.0), Vec2::new(-1.0, 0.5)];
        let rho = g.kde(&atoms, 10.0, 0.25);
        assert_abs_diff_eq!(DensityField::new(g, rho).mass(), 0.3, epsilon = 1e-12);
    }

    #[test]
    fn disc_mass() {
        let g = GridSpec::square(2.0, 128);
        let rho = g.disc(Vec2::ZERO, 1.0, 1.0);
        assert_abs_diff_eq!(DensityField::new(g, rho).mass(), 1.0, epsilon = 2e-3);
    }

    #[test]
    fn value_lookup_and_csv() {
        let g = GridSpec::square(1.0, 2);
        let f = DensityField::new(g, vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(f.value_at(Vec2::new(0.5, -0.5)), 2.0);
        assert_eq!(f.value_at(Vec2::new(5.0, 0.0)), 0.0);
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[1], "x,y,rho");
        assert_eq!(lines[2], "-0.5,-0.5,1.0");
        assert_eq!(lines.len(), 6);
    }
}
