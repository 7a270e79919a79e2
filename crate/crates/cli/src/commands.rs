use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use anyhow::{Context, Result};
use mycelia_core::analysis::{convergence_study, moment_audit, pair, ConvergencePlan, Measure};
use mycelia_core::config::{load_config, ExperimentConfig};
use mycelia_core::engine::{replica_seed, run, run_replicas_with, run_scripted, EngineError, Observable, RunOutput};
use mycelia_core::history::EventRecord;
use mycelia_core::meanfield::evolve;

use crate::{CheckFailed, Common, Usage};

/// Loads the config, applies flag overrides and creates the output directory.
pub fn load(common: &Common) -> Result<(ExperimentConfig, PathBuf)> {
    let mut cfg = load_config(&common.config, common.strict)?;
    if let Some(seed) = common.seed {
        cfg.run.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.output.dir = out.clone();
    }
    let dir = cfg.output.dir.clone();
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok((cfg, dir))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

pub fn snapshot_name(hash: &str, replica: usize) -> String {
    format!("snapshots-{hash}-r{replica:04}.ndjson")
}

fn write_run(cfg: &ExperimentConfig, dir: &Path, hash: &str, i: usize, out: &RunOutput) -> Result<()> {
    if cfg.output.snapshots {
        let mut w = create(&dir.join(snapshot_name(hash, i)))?;
        out.write_snapshots(&mut w)?;
        w.flush()?;
    }
    if cfg.output.events {
        let mut w = create(&dir.join(format!("events-{hash}-r{i:04}.ndjson")))?;
        out.record.write_events(&mut w)?;
        w.flush()?;
    }
    if cfg.output.trajectories {
        let mut w = create(&dir.join(format!("trajectories-{hash}-r{i:04}.csv")))?;
        out.record.write_trajectories(&mut w)?;
        w.flush()?;
    }
    Ok(())
}

fn store_config(cfg: &ExperimentConfig, dir: &Path, hash: &str) -> Result<PathBuf> {
    let path = dir.join(format!("config-{hash}.toml"));
    fs::write(&path, cfg.to_toml()).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

pub fn simulate(common: &Common, replicas: Option<usize>) -> Result<()> {
    let (mut cfg, dir) = load(common)?;
    if let Some(r) = replicas {
        if r == 0 {
            return Err(Usage("--replicas must be at least 1".into()).into());
        }
        cfg.replicas.count = r;
    }
    let hash = cfg.hash();
    let stored = store_config(&cfg, &dir, &hash)?;
    let run_cfg = cfg.run_config();
    let scale = cfg.model.scale_f64();
    let observables: Vec<Observable> = cfg
        .dictionary
        .iter()
        .map(|f| {
            let f = f.clone();
            Observable::new(f.name(), move |s| pair(Measure::snapshot(s, scale), &f))
        })
        .collect();
    let io_error: Mutex<Option<anyhow::Error>> = Mutex::new(None);
    let result = run_replicas_with(&run_cfg, cfg.replicas.count, &observables, |i, out| {
        if let Err(e) = write_run(&cfg, &dir, &hash, i, out) {
            io_error.lock().unwrap().get_or_insert(e);
        }
    });
    if let Some(e) = io_error.into_inner().unwrap() {
        return Err(e);
    }
    let stats = match result {
        Ok(s) => s,
        Err(e) => {
            if let EngineError::Replica { index, source } = &e {
                if let EngineError::Capacity { partial, .. } = source.as_ref() {
                    let path = dir.join(format!("snapshots-{hash}-r{index:04}.partial.ndjson"));
                    let mut w = create(&path)?;
                    partial.write_snapshots(&mut w)?;
                    w.flush()?;
                    eprintln!("partial output of replica {index} written to {}", path.display());
                }
            }
            return Err(e.into());
        }
    };
    let stats_path = dir.join(format!("stats-{hash}.csv"));
    stats.write_csv(create(&stats_path)?)?;
    if cfg.output.reports {
        let audit = moment_audit(&stats, &cfg.model);
        let report = serde_json::json!({
            "config_hash": hash,
            "seed": cfg.run.seed,
            "replicas": cfg.replicas.count,
            "version": env!("CARGO_PKG_VERSION"),
            "moment_audit_passed": audit.passed(),
            "moment_audit": audit,
        });
        fs::write(
            dir.join(format!("report-{hash}.json")),
            serde_json::to_string_pretty(&report)?,
        )?;
    }
    let last = stats.count.last().expect("at least one snapshot");
    println!(
        "config {hash}: {} replica(s), T = {}, final count {:.3} ± {:.3} (SE)",
        cfg.replicas.count,
        cfg.run.horizon,
        last.mean,
        last.se()
    );
    println!("wrote {} and {}", stored.display(), stats_path.display());
    Ok(())
}

pub fn meanfield(common: &Common) -> Result<()> {
    let (cfg, dir) = load(common)?;
    let hash = cfg.hash();
    store_config(&cfg, &dir, &hash)?;
    let out = evolve(&cfg.meanfield_config())?;
    out.write_monitors(create(&dir.join(format!("monitors-{hash}.csv")))?)?;
    if cfg.output.snapshots {
        for (k, field) in out.snapshots.iter().enumerate() {
            let mut w = create(&dir.join(format!("field-{hash}-{k:04}.csv")))?;
            field.write_csv(&mut w)?;
            w.flush()?;
        }
    }
    let last = out.last();
    println!(
        "config {hash}: t = {}, mass {:.6}, leaked {:.3e}, clipped {:.3e}, extra transport substeps {}",
        last.time,
        last.mass(),
        out.total_leak(),
        out.total_clip(),
        out.cfl_substeps
    );
    Ok(())
}

pub fn compare(common: &Common, n_list: Option<Vec<u64>>, replicas: Option<usize>) -> Result<()> {
    let (mut cfg, dir) = load(common)?;
    if let Some(n) = n_list {
        cfg.compare.n_list = n;
    }
    if let Some(r) = replicas {
        cfg.compare.replicas = vec![r];
    }
    if cfg.compare.n_list.len() < 2 {
        return Err(Usage("compare needs at least two population sizes (--n-list 100,1000)".into()).into());
    }
    let hash = cfg.hash();
    store_config(&cfg, &dir, &hash)?;
    let mut mf = cfg.meanfield_config();
    mf.solver.snapshot_stride = 1;
    let pde = evolve(&mf)?;
    let plan = ConvergencePlan {
        run: cfg.run_config(),
        sizes: cfg
            .compare
            .n_list
            .iter()
            .enumerate()
            .map(|(i, &n)| (n, cfg.compare.replicas_for(i)))
            .collect(),
    };
    let report = convergence_study(&plan, &cfg.dictionary, &pde, &cfg.model).map_err(|e| Usage(e.to_string()))?;
    report.write_csv(create(&dir.join(format!("convergence-{hash}.csv")))?)?;
    let json = serde_json::json!({
        "config_hash": hash,
        "version": env!("CARGO_PKG_VERSION"),
        "report": report,
    });
    fs::write(
        dir.join(format!("convergence-{hash}.json")),
        serde_json::to_string_pretty(&json)?,
    )?;
    println!("{:>8} {:>9} {:>12} {:>12}", "N", "replicas", "err", "se");
    for e in &report.entries {
        println!("{:>8} {:>9} {:>12.5e} {:>12.5e}", e.n, e.replicas, e.err, e.err_se);
    }
    println!("err(N_min)/err(N_max) = {:.3}", report.ratio());
    Ok(())
}

fn read_events(path: &Path) -> Result<Vec<EventRecord>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{} line {}", path.display(), i + 1)))
        .collect()
}

pub fn replay(common: &Common, replica: usize, events: Option<PathBuf>, verify: Option<PathBuf>) -> Result<()> {
    let (cfg, dir) = load(common)?;
    let hash = cfg.hash();
    let run_cfg = cfg.run_config().with_seed(replica_seed(cfg.run.seed, replica as u64));
    let out = match &events {
        Some(p) => run_scripted(&run_cfg, read_events(p)?)?,
        None => run(&run_cfg)?,
    };
    let mut bytes = Vec::new();
    out.write_snapshots(&mut bytes)?;
    let path = dir.join(format!("replay-{hash}-r{replica:04}.ndjson"));
    fs::write(&path, &bytes).with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {}", path.display());
    if let Some(vdir) = verify {
        let reference = vdir.join(snapshot_name(&hash, replica));
        let stored = fs::read(&reference).with_context(|| format!("reading {}", reference.display()))?;
        if stored != bytes {
            return Err(CheckFailed(format!("replay differs from {}", reference.display())).into());
        }
        println!("identical to {}", reference.display());
    }
    Ok(())
}
