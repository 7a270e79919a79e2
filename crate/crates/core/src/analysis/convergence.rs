use std::io::Write;

use serde::Serialize;

use super::{pair, AnalysisError, Measure, TestFunction};
use crate::engine::{map_replicas, Moments, RunConfig};
use crate::meanfield::{DensityField, GridSpec, MeanFieldOutput};

/// Particle runs to compare against one mean-field solution.
#[derive(Debug, Clone)]
pub struct ConvergencePlan {
    /// Template run: its model is rescaled to each `N`.
    pub run: RunConfig,
    /// Pairs `(N, replicas)`, strictly increasing in `N`.
    pub sizes: Vec<(u64, usize)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceEntry {
    pub n: u64,
    pub replicas: usize,
    /// Replica mean of `max_{f,t} |⟨Z^N_t,f⟩ − ⟨ρ_t,f⟩|`.
    pub err: f64,
    pub err_se: f64,
    /// Root mean square of the per-replica maxima.
    pub rmse: f64,
    /// Replica mean of `|⟨Z^N_t,f⟩ − ⟨ρ_t,f⟩|`, indexed `[function][time]`.
    pub per_function: Vec<Vec<f64>>,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub times: Vec<f64>,
    pub functions: Vec<String>,
    pub entries: Vec<ConvergenceEntry>,
    pub grid: GridSpec,
    pub bandwidth: f64,
    pub master_seed: u64,
}

impl ConvergenceReport {
    /// `err(N_min) / err(N_max)`.
    pub fn ratio(&self) -> f64 {
        let first = self.entries.first().map_or(f64::NAN, |e| e.err);
        let last = self.entries.last().map_or(f64::NAN, |e| e.err);
        first / last
    }

    /// CSV `n,replicas,err,err_se,rmse`.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["n", "replicas", "err", "err_se", "rmse"])?;
        for e in &self.entries {
            w.write_record([
                e.n.to_string(),
                e.replicas.to_string(),
                format!("{:?}", e.err),
                format!("{:?}", e.err_se),
                format!("{:?}", e.rmse),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn matched_fields<'a>(times: &[f64], pde: &'a MeanFieldOutput) -> Vec<Option<&'a DensityField>> {
    times
        .iter()
        .map(|&t| {
            let f = pde.at(t);
            ((f.time - t).abs() <= 1e-9 * t.abs().max(1.0)).then_some(f)
        })
        .collect()
}

/// For each `N`, runs replicas of the rescaled model and measures the
/// dictionary distance to the mean-field solution at common snapshot times.
pub fn convergence_study(
    plan: &ConvergencePlan,
    dictionary: &[TestFunction],
    pde: &MeanFieldOutput,
    pde_model: &crate::kernels::ModelSpec,
) -> Result<ConvergenceReport, AnalysisError> {
    if plan.sizes.len() < 2 {
        return Err(AnalysisError::Config(
            "a convergence study needs at least two population sizes".into(),
        ));
    }
    if plan.sizes.windows(2).any(|w| w[0].0 >= w[1].0) {
        return Err(AnalysisError::Config(
            "population sizes must be strictly increasing".into(),
        ));
    }
    if !plan.run.model.same_limit(pde_model) {
        return Err(AnalysisError::Config(
            "particle and mean-field runs use different models".into(),
        ));
    }
    if dictionary.is_empty() {
        return Err(AnalysisError::Config("the test-function dictionary is empty".into()));
    }
    let grid_times: Vec<f64> = {
        let g = plan.run.grid();
        let stride = plan.run.snapshot_stride;
        let last = g.len() - 1;
        g.iter()
            .enumerate()
            .filter(|(k, _)| k % stride == 0 || *k == last)
            .map(|(_, &t)| t)
            .collect()
    };
    let fields = matched_fields(&grid_times, pde);
    let (times, fields): (Vec<f64>, Vec<&DensityField>) = grid_times
        .iter()
        .zip(&fields)
        .filter_map(|(&t, f)| f.map(|f| (t, f)))
        .unzip();
    if times.len() < 2 {
        return Err(AnalysisError::MissingSnapshots(
            "particle and mean-field snapshot times do not overlap beyond t = 0".into(),
        ));
    }
    let reference: Vec<Vec<f64>> = dictionary
        .iter()
        .map(|f| fields.iter().map(|fld| pair(Measure::Field(fld), f)).collect())
        .collect();

    let mut entries = Vec::with_capacity(plan.sizes.len());
    for &(n, replicas) in &plan.sizes {
        let mut cfg = plan.run.clone();
        cfg.model = plan.run.model.rescaled(n);
        let scale = n as f64;
        let per_replica = map_replicas(&cfg, replicas, |_, out| {
            let mut errs = vec![vec![0.0; times.len()]; dictionary.len()];
            for s in &out.snapshots {
                let Some(k) = times.iter().position(|&t| (t - s.t).abs() <= 1e-9 * t.abs().max(1.0)) else {
                    continue;
                };
                for (i, f) in dictionary.iter().enumerate() {
                    errs[i][k] = (pair(Measure::snapshot(s, scale), f) - reference[i][k]).abs();
                }
            }
            (out.seed, errs)
        })
        .map_err(|e| AnalysisError::Engine(Box::new(e)))?;
        let mut maxima = Moments::default();
        let mut sq = 0.0;
        let mut per_function = vec![vec![0.0; times.len()]; dictionary.len()];
        for (_, errs) in &per_replica {
            let m = errs.iter().flatten().fold(0.0f64, |a, &b| a.max(b));
            maxima.push(m);
            sq += m * m;
            for (acc, e) in per_function.iter_mut().zip(errs) {
                for (a, v) in acc.iter_mut().zip(e) {
                    *a += v / replicas as f64;
                }
            }
        }
        entries.push(ConvergenceEntry {
            n,
            replicas,
            err: maxima.mean,
            err_se: maxima.se(),
            rmse: (sq / replicas as f64).sqrt(),
            per_function,
            seeds: per_replica.iter().map(|(s, _)| *s).collect(),
        });
    }
    Ok(ConvergenceReport {
        times,
        functions: dictionary.iter().map(|f| f.name()).collect(),
        entries,
        grid: pde.last().grid,
        bandwidth: pde.bandwidth,
        master_seed: plan.run.seed,
    })
}
