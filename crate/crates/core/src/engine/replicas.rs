use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;

use super::{replica_seed, run, EngineError, RunConfig, RunOutput, Snapshot};

/// Running mean and variance (Welford).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    pub n: u64,
    pub mean: f64,
    m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn from_slice(xs: &[f64]) -> Self {
        let mut m = Self::default();
        xs.iter().for_each(|&x| m.push(x));
        m
    }

    /// Unbiased sample variance; zero for fewer than two samples.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    /// Standard error of the mean.
    pub fn se(&self) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        (self.variance() / self.n as f64).sqrt()
    }

    /// Normal-approximation 95% interval for the mean.
    pub fn ci95(&self) -> (f64, f64) {
        let h = 1.96 * self.se();
        (self.mean - h, self.mean + h)
    }
}

/// A named scalar read off each snapshot.
#[derive(Clone)]
pub struct Observable {
    pub name: String,
    pub f: Arc<dyn Fn(&Snapshot) -> f64 + Send + Sync>,
}

impl Observable {
    pub fn new(name: impl Into<String>, f: impl Fn(&Snapshot) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            name: name.into(),
            f: Arc::new(f),
        }
    }
}

impl std::fmt::Debug for Observable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Observable").field("name", &self.name).finish()
    }
}

/// Per-snapshot statistics over replicas.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicaStats {
    pub replicas: usize,
    pub times: Vec<f64>,
    pub count: Vec<Moments>,
    /// Moments of `(sup_{s ≤ t} count)²`.
    pub sup_count_sq: Vec<Moments>,
    pub observables: Vec<(String, Vec<Moments>)>,
}

impl ReplicaStats {
    /// CSV with columns `t,mean_count,var_count,se_count` then mean and
    /// variance of each observable.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec![
            "t".to_string(),
            "mean_count".into(),
            "var_count".into(),
            "se_count".into(),
        ];
        for (name, _) in &self.observables {
            header.push(format!("mean_{name}"));
            header.push(format!("var_{name}"));
        }
        w.write_record(&header)?;
        for (i, t) in self.times.iter().enumerate() {
            let c = &self.count[i];
            let mut row = vec![
                format!("{t:?}"),
                format!("{:?}", c.mean),
                format!("{:?}", c.variance()),
                format!("{:?}", c.se()),
            ];
            for (_, m) in &self.observables {
                row.push(format!("{:?}", m[i].mean));
                row.push(format!("{:?}", m[i].variance()));
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs `n` replicas in parallel and maps each output through `f`; results
/// come back in replica order. Replica `i` uses `replica_seed(seed, i)`.
pub fn map_replicas<T, F>(config: &RunConfig, n: usize, f: F) -> Result<Vec<T>, EngineError>
where
    T: Send,
    F: Fn(usize, RunOutput) -> T + Sync,
{
    (0..n)
        .into_par_iter()
        .map(|i| {
            let cfg = config.with_seed(replica_seed(config.seed, i as u64));
            run(&cfg).map(|out| f(i, out)).map_err(|e| EngineError::Replica {
                index: i,
                source: Box::new(e),
            })
        })
        .collect()
}

/// Mean, variance and confidence intervals of the count and of each
/// observable at every snapshot time.
pub fn run_replicas(config: &RunConfig, n: usize, observables: &[Observable]) -> Result<ReplicaStats, EngineError> {
    run_replicas_with(config, n, observables, |_, _| {})
}

/// [`run_replicas`], handing every finished run to `sink` (for example to
/// write per-replica files) before it is reduced.
pub fn run_replicas_with<S>(
    config: &RunConfig,
    n: usize,
    observables: &[Observable],
    sink: S,
) -> Result<ReplicaStats, EngineError>
where
    S: Fn(usize, &RunOutput) + Sync,
{
    if n == 0 {
        return Err(EngineError::Config(vec!["at least one replica is required".into()]));
    }
    let series = map_replicas(config, n, |i, out| {
        sink(i, &out);
        out.snapshots
            .iter()
            .map(|s| {
                let mut row = vec![s.t, s.count as f64, (s.max_count as f64).powi(2)];
                row.extend(observables.iter().map(|o| (o.f)(s)));
                row
            })
            .collect::<Vec<_>>()
    })?;
    let k = series[0].len();
    let mut stats = ReplicaStats {
        replicas: n,
        times: series[0].iter().map(|r| r[0]).collect(),
        count: vec![Moments::default(); k],
        sup_count_sq: vec![Moments::default(); k],
        observables: observables
            .iter()
            .map(|o| (o.name.clone(), vec![Moments::default(); k]))
            .collect(),
    };
    for rep in &series {
        for (i, row) in rep.iter().enumerate() {
            stats.count[i].push(row[1]);
            stats.sup_count_sq[i].push(row[2]);
            for (j, (_, m)) in stats.observables.iter_mut().enumerate() {
                m[i].push(row[3 + j]);
            }
        }
    }
    Ok(stats)
}
