use std::io::Read;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::KernelError;
use crate::Vec2;

/// A kernel sampled on a rectilinear `(lag, dx, dy)` grid together with a
/// declared envelope table `(lag, h1, h2)`.
///
/// Evaluation is trilinear; `dx`/`dy` are clamped to the grid box and lags
/// past the last tabulated lag evaluate to zero.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KernelTable {
    lags: Vec<f64>,
    xs: Vec<f64>,
    ys: Vec<f64>,
    values: Vec<Vec2>,
    envelope: Vec<[f64; 3]>,
}

#[derive(Debug, Deserialize)]
struct SampleRow {
    lag: f64,
    dx: f64,
    dy: f64,
    #[serde(rename = "Lx")]
    lx: f64,
    #[serde(rename = "Ly")]
    ly: f64,
}

#[derive(Debug, Deserialize)]
struct EnvelopeRow {
    lag: f64,
    h1: f64,
    h2: f64,
}

fn sorted_unique(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

/// Locates `v` in the sorted axis, returning the lower index and fraction.
fn bracket(axis: &[f64], v: f64) -> (usize, f64) {
    if axis.len() == 1 || v <= axis[0] {
        return (0, 0.0);
    }
    let last = axis.len() - 1;
    if v >= axis[last] {
        return (last - 1, 1.0);
    }
    let hi = axis.partition_point(|&a| a <= v);
    let lo = hi - 1;
    (lo, (v - axis[lo]) / (axis[hi] - axis[lo]))
}

impl KernelTable {
    /// Tabulates `f` on the given axes.
    pub fn from_fn(
        lags: Vec<f64>,
        xs: Vec<f64>,
        ys: Vec<f64>,
        f: impl Fn(f64, Vec2) -> Vec2,
        envelope: Vec<[f64; 3]>,
    ) -> Result<Self, KernelError> {
        let lags = sorted_unique(lags);
        let xs = sorted_unique(xs);
        let ys = sorted_unique(ys);
        let mut values = Vec::with_capacity(lags.len() * xs.len() * ys.len());
        for &l in &lags {
            for &x in &xs {
                for &y in &ys {
                    values.push(f(l, Vec2::new(x, y)));
                }
            }
        }
        let table = Self {
            lags,
            xs,
            ys,
            values,
            envelope,
        };
        table.validate()?;
        Ok(table)
    }

    /// Spatially constant kernel `L ≡ value` on `[0, max_lag]`.
    pub fn constant(value: Vec2, max_lag: f64) -> Self {
        let m = value.norm();
        Self::from_fn(
            vec![0.0, max_lag],
            vec![0.0],
            vec![0.0],
            |_, _| value,
            vec![[0.0, m, 0.0], [max_lag, m, 0.0]],
        )
        .expect("constant table is well formed")
    }

    pub fn from_csv<R: Read, E: Read>(samples: R, envelope: E) -> Result<Self, KernelError> {
        let mut rows = Vec::new();
        for row in csv::Reader::from_reader(samples).deserialize::<SampleRow>() {
            rows.push(row.map_err(|e| KernelError::Table(e.to_string()))?);
        }
        let mut env = Vec::new();
        for row in csv::Reader::from_reader(envelope).deserialize::<EnvelopeRow>() {
            let r = row.map_err(|e| KernelError::Table(e.to_string()))?;
            env.push([r.lag, r.h1, r.h2]);
        }
        env.sort_by(|a, b| a[0].total_cmp(&b[0]));

        let lags = sorted_unique(rows.iter().map(|r| r.lag).collect());
        let xs = sorted_unique(rows.iter().map(|r| r.dx).collect());
        let ys = sorted_unique(rows.iter().map(|r| r.dy).collect());
        let n = lags.len() * xs.len() * ys.len();
        if rows.len() != n {
            return Err(KernelError::Table(format!(
                "expected a full {}x{}x{} grid ({} rows), found {} rows",
                lags.len(),
                xs.len(),
                ys.len(),
                n,
                rows.len()
            )));
        }
        let mut values = vec![Vec2::new(f64::NAN, f64::NAN); n];
        let find = |axis: &[f64], v: f64| axis.partition_point(|&a| a < v);
        for r in &rows {
            let idx = (find(&lags, r.lag) * xs.len() + find(&xs, r.dx)) * ys.len() + find(&ys, r.dy);
            values[idx] = Vec2::new(r.lx, r.ly);
        }
        if values.iter().any(|v| v.x.is_nan()) {
            return Err(KernelError::Table("duplicate grid rows".into()));
        }
        let table = Self {
            lags,
            xs,
            ys,
            values,
            envelope: env,
        };
        table.validate()?;
        Ok(table)
    }

    fn validate(&self) -> Result<(), KernelError> {
        if self.lags.is_empty() || self.xs.is_empty() || self.ys.is_empty() {
            return Err(KernelError::Table("empty kernel table".into()));
        }
        if self.lags[0] != 0.0 {
            return Err(KernelError::Table("kernel table must start at lag 0".into()));
        }
        if self.envelope.is_empty() {
            return Err(KernelError::Table("envelope table is empty".into()));
        }
        if self.envelope.iter().any(|e| e[1] < 0.0 || e[2] < 0.0) {
            return Err(KernelError::Table("envelope values must be non-negative".into()));
        }
        Ok(())
    }

    pub fn max_lag(&self) -> f64 {
        self.lags.last().copied().unwrap_or(0.0)
    }

    #[inline]
    fn at(&self, l: usize, i: usize, j: usize) -> Vec2 {
        self.values[(l * self.xs.len() + i) * self.ys.len() + j]
    }

    fn eval_slice(&self, l: usize, dx: Vec2) -> Vec2 {
        let (i, fx) = bracket(&self.xs, dx.x);
        let (j, fy) = bracket(&self.ys, dx.y);
        let i1 = (i + 1).min(self.xs.len() - 1);
        let j1 = (j + 1).min(self.ys.len() - 1);
        let a = self.at(l, i, j).lerp(self.at(l, i1, j), fx);
        let b = self.at(l, i, j1).lerp(self.at(l, i1, j1), fx);
        a.lerp(b, fy)
    }

    pub fn eval(&self, lag: f64, dx: Vec2) -> Vec2 {
        if self.values.is_empty() || lag > self.max_lag() {
            return Vec2::ZERO;
        }
        let (l, fl) = bracket(&self.lags, lag);
        let l1 = (l + 1).min(self.lags.len() - 1);
        let a = self.eval_slice(l, dx);
        if l1 == l || fl == 0.0 {
            return a;
        }
        a.lerp(self.eval_slice(l1, dx), fl)
    }

    fn envelope_at(&self, lag: f64, col: usize) -> f64 {
        if self.envelope.is_empty() || lag > self.max_lag() {
            return 0.0;
        }
        let axis: Vec<f64> = self.envelope.iter().map(|e| e[0]).collect();
        let (k, f) = bracket(&axis, lag);
        let k1 = (k + 1).min(axis.len() - 1);
        self.envelope[k][col] + f * (self.envelope[k1][col] - self.envelope[k][col])
    }

    pub fn h1(&self, lag: f64) -> f64 {
        self.envelope_at(lag, 1)
    }

    pub fn h2(&self, lag: f64) -> f64 {
        self.envelope_at(lag, 2)
    }

    /// Exact integral of the piecewise-linear `h1` over `[0, t]`.
    pub fn h1_integral(&self, t: f64) -> f64 {
        let t = t.min(self.max_lag());
        let mut acc = 0.0;
        let mut prev = (0.0, self.h1(0.0));
        for e in &self.envelope {
            if e[0] <= prev.0 {
                continue;
            }
            let s = e[0].min(t);
            let v = self.h1(s);
            acc += 0.5 * (prev.1 + v) * (s - prev.0);
            prev = (s, v);
            if s >= t {
                break;
            }
        }
        if prev.0 < t {
            acc += prev.1 * (t - prev.0);
        }
        acc
    }
}

/// Serialized form of a tabulated kernel: the two CSV paths.
///
/// The table itself is loaded by [`TabulatedKernel::load`] or
/// [`TabulatedKernel::resolve`]; it is not part of the serialized config.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TabulatedKernel {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub envelope: Option<PathBuf>,
    #[serde(skip)]
    table: Arc<KernelTable>,
}

impl TabulatedKernel {
    pub fn from_table(table: KernelTable) -> Self {
        Self {
            samples: None,
            envelope: None,
            table: Arc::new(table),
        }
    }

    pub fn load(samples: &Path, envelope: &Path) -> Result<Self, KernelError> {
        let open = |p: &Path| {
            std::fs::File::open(p).map_err(|source| KernelError::Io {
                path: p.display().to_string(),
                source,
            })
        };
        let table = KernelTable::from_csv(open(samples)?, open(envelope)?)?;
        Ok(Self {
            samples: Some(samples.to_path_buf()),
            envelope: Some(envelope.to_path_buf()),
            table: Arc::new(table),
        })
    }

    /// Loads the table named by the stored paths, relative to `base`.
    pub fn resolve(&mut self, base: &Path) -> Result<(), KernelError> {
        let (Some(s), Some(e)) = (&self.samples, &self.envelope) else {
            if self.table.values.is_empty() {
                return Err(KernelError::Table(
                    "table kernel needs both `samples` and `envelope` paths".into(),
                ));
            }
            return Ok(());
        };
        let loaded = Self::load(&base.join(s), &base.join(e))?;
        self.table = loaded.table;
        Ok(())
    }

    pub fn table(&self) -> &KernelTable {
        &self.table
    }

    pub fn eval(&self, lag: f64, dx: Vec2) -> Vec2 {
        self.table.eval(lag, dx)
    }

    pub fn h1(&self, lag: f64) -> f64 {
        self.table.h1(lag)
    }

    pub fn h2(&self, lag: f64) -> f64 {
        self.table.h2(lag)
    }

    pub fn max_lag(&self) -> f64 {
        self.table.max_lag()
    }

    pub fn h1_integral(&self, t: f64) -> f64 {
        self.table.h1_integral(t)
    }
}
