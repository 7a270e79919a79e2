use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::GridSpec;
use crate::Vec2;

/// Two-dimensional FFTs on the grid zero-padded to twice its size per axis,
/// so that circular convolutions of interior data do not alias.
pub struct Spectral {
    grid: GridSpec,
    px: usize,
    py: usize,
    fx: Arc<dyn Fft<f64>>,
    ix: Arc<dyn Fft<f64>>,
    fy: Arc<dyn Fft<f64>>,
    iy: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Spectral {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Spectral")
            .field("px", &self.px)
            .field("py", &self.py)
            .finish()
    }
}

impl Spectral {
    pub fn new(grid: GridSpec) -> Self {
        let (px, py) = (2 * grid.nx(), 2 * grid.ny());
        let mut planner = FftPlanner::new();
        Self {
            grid,
            px,
            py,
            fx: planner.plan_fft_forward(px),
            ix: planner.plan_fft_inverse(px),
            fy: planner.plan_fft_forward(py),
            iy: planner.plan_fft_inverse(py),
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn padded_len(&self) -> usize {
        self.px * self.py
    }

    fn transform(&self, buf: &mut [Complex64], inverse: bool) {
        let (fx, fy) = if inverse {
            (&self.ix, &self.iy)
        } else {
            (&self.fx, &self.fy)
        };
        fx.process(buf);
        let mut t = vec![Complex64::new(0.0, 0.0); buf.len()];
        transpose(buf, &mut t, self.px, self.py);
        fy.process(&mut t);
        transpose(&t, buf, self.py, self.px);
        if inverse {
            let s = 1.0 / buf.len() as f64;
            buf.iter_mut().for_each(|z| *z *= s);
        }
    }

    pub fn forward(&self, buf: &mut [Complex64]) {
        self.transform(buf, false);
    }

    pub fn inverse(&self, buf: &mut [Complex64]) {
        self.transform(buf, true);
    }

    /// Interior values placed in the lower-left corner of a zero padded array.
    pub fn pad(&self, values: &[f64]) -> Vec<Complex64> {
        let nx = self.grid.nx();
        let mut buf = vec![Complex64::new(0.0, 0.0); self.padded_len()];
        for (iy, row) in values.chunks_exact(nx).enumerate() {
            for (ix, &v) in row.iter().enumerate() {
                buf[iy * self.px + ix] = Complex64::new(v, 0.0);
            }
        }
        buf
    }

    /// Interior part of a padded array.
    pub fn crop(&self, buf: &[Complex64]) -> Vec<Complex64> {
        let (nx, ny) = (self.grid.nx(), self.grid.ny());
        let mut out = Vec::with_capacity(nx * ny);
        for iy in 0..ny {
            out.extend_from_slice(&buf[iy * self.px..iy * self.px + nx]);
        }
        out
    }

    /// Angular wavenumbers `(kx, ky)` of padded index `(i, j)`.
    pub fn wavenumber(&self, i: usize, j: usize) -> Vec2 {
        let h = self.grid.h();
        let signed = |k: usize, n: usize| if k < n / 2 { k as f64 } else { k as f64 - n as f64 };
        Vec2::new(
            std::f64::consts::TAU * signed(i, self.px) / (self.px as f64 * h.x),
            std::f64::consts::TAU * signed(j, self.py) / (self.py as f64 * h.y),
        )
    }

    /// Spectrum of `z ↦ f(z)·h²` sampled on the padded offset lattice, with
    /// the two output components packed as real and imaginary parts.
    pub fn kernel_spectrum<F: Fn(Vec2) -> Vec2>(&self, f: F) -> Vec<Complex64> {
        let h = self.grid.h();
        let area = h.x * h.y;
        let off = |k: usize, n: usize| if k < n / 2 { k as f64 } else { k as f64 - n as f64 };
        let mut buf = Vec::with_capacity(self.padded_len());
        for j in 0..self.py {
            for i in 0..self.px {
                let z = Vec2::new(off(i, self.px) * h.x, off(j, self.py) * h.y);
                let v = f(z) * area;
                buf.push(Complex64::new(v.x, v.y));
            }
        }
        self.forward(&mut buf);
        buf
    }

    /// `(K ⋆ ρ)` on the interior for a packed kernel spectrum.
    pub fn convolve(&self, rho: &[f64], spectrum: &[Complex64]) -> Vec<Complex64> {
        let mut buf = self.pad(rho);
        self.forward(&mut buf);
        for (b, k) in buf.iter_mut().zip(spectrum) {
            *b *= k;
        }
        self.inverse(&mut buf);
        self.crop(&buf)
    }
}

fn transpose(src: &[Complex64], dst: &mut [Complex64], cols: usize, rows: usize) {
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn round_trip() {
        let g = GridSpec::square(1.0, 4);
        let s = Spectral::new(g);
        let vals: Vec<f64> = (0..16).map(|i| i as f64 * 0.5 - 2.0).collect();
        let mut buf = s.pad(&vals);
        s.forward(&mut buf);
        s.inverse(&mut buf);
        let back = s.crop(&buf);
        for (a, b) in vals.iter().zip(&back) {
            assert_abs_diff_eq!(*a, b.re, epsilon = 1e-12);
        }
    }

    #[test]
    fn convolution_matches_direct_sum() {
        let g = GridSpec::square(1.0, 6);
        let s = Spectral::new(g);
        let rho: Vec<f64> = (0..36).map(|i| ((i * 7) % 5) as f64).collect();
        let k = |z: Vec2| Vec2::new((-z.norm_sq()).exp(), z.x);
        let spec = s.kernel_spectrum(k);
        let got = s.convolve(&rho, &spec);
        let centers = g.centers();
        let area = g.cell_area();
        for (a, xa) in centers.iter().enumerate() {
            let mut want = Vec2::ZERO;
            for (b, xb) in centers.iter().enumerate() {
                want += k(*xa - *xb) * (rho[b] * area);
            }
            assert_abs_diff_eq!(got[a].re, want.x, epsilon = 1e-10);
            assert_abs_diff_eq!(got[a].im, want.y, epsilon = 1e-10);
        }
    }
}
