//! Experiment configuration: one TOML file drives the particle engine, the
//! mean-field solver, replicas, the test-function dictionary and outputs.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::analysis::{default_dictionary, TestFunction};
use crate::engine::RunConfig;
use crate::kernels::{audit_assumptions, AuditStatus, InteractionKernel, ModelSpec, SamplePlan};
use crate::meanfield::{MeanFieldConfig, SolverSettings};

/// Prefix of environment variables that override config keys, e.g.
/// `MYCELIA_RUN__DT=0.05` sets `run.dt`.
pub const ENV_PREFIX: &str = "MYCELIA_";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config syntax: {0}")]
    Syntax(String),
    #[error("invalid config:\n  - {}", .0.join("\n  - "))]
    Invalid(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSection {
    pub horizon: f64,
    pub dt: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<f64>,
    #[serde(default = "one")]
    pub snapshot_stride: usize,
    #[serde(default = "default_cap")]
    pub cap: usize,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> usize {
    1
}

fn default_cap() -> usize {
    1_000_000
}

/// How many replicas to run. Replica `i` always uses the seed derived from
/// `(run.seed, i)`, so growing `count` never changes earlier replicas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReplicaPlan {
    pub count: usize,
}

impl Default for ReplicaPlan {
    fn default() -> Self {
        Self { count: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputSpec {
    pub dir: PathBuf,
    pub snapshots: bool,
    pub trajectories: bool,
    pub events: bool,
    pub reports: bool,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            snapshots: true,
            trajectories: false,
            events: true,
            reports: true,
        }
    }
}

/// Population sizes and replica counts of a convergence study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompareSpec {
    pub n_list: Vec<u64>,
    /// Replicas per entry of `n_list`; a single value applies to all.
    pub replicas: Vec<usize>,
}

impl Default for CompareSpec {
    fn default() -> Self {
        Self {
            n_list: vec![100, 1000],
            replicas: vec![10],
        }
    }
}

impl CompareSpec {
    pub fn replicas_for(&self, i: usize) -> usize {
        match self.replicas.as_slice() {
            [] => 1,
            [r] => *r,
            rs => rs.get(i).copied().unwrap_or(*rs.last().unwrap()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub run: RunSection,
    #[serde(default)]
    pub meanfield: SolverSettings,
    #[serde(default)]
    pub replicas: ReplicaPlan,
    #[serde(default = "default_dictionary")]
    pub dictionary: Vec<TestFunction>,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default)]
    pub compare: CompareSpec,
}

const REQUIRED: [&str; 3] = ["model.initial", "run.horizon", "run.dt"];

impl ExperimentConfig {
    pub fn run_config(&self) -> RunConfig {
        RunConfig {
            model: self.model.clone(),
            horizon: self.run.horizon,
            dt: self.run.dt,
            window: self.run.window,
            snapshot_stride: self.run.snapshot_stride,
            cap: self.run.cap,
            seed: self.run.seed,
        }
    }

    pub fn meanfield_config(&self) -> MeanFieldConfig {
        MeanFieldConfig::new(self.model.clone(), self.run.horizon, self.meanfield.clone())
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON form. Key
    /// order in the source file does not matter. The replica count and the
    /// output directory are left out, so replica `i` keeps its file names
    /// when more replicas are requested or the output moves.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.replicas.count = 0;
        canonical.output.dir = PathBuf::new();
        let json = serde_json::to_vec(&canonical).expect("config serializes");
        let digest = Sha256::digest(&json);
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    /// Loads tabulated kernels relative to `base` and rewrites their paths
    /// so that a copy of the config stored elsewhere still finds them.
    pub fn resolve_paths(&mut self, base: &Path) -> Result<(), ConfigError> {
        if let InteractionKernel::Table(t) = &mut self.model.kernel {
            t.resolve(base)
                .map_err(|e| ConfigError::Invalid(vec![format!("model.kernel: {e}")]))?;
            for p in [&mut t.samples, &mut t.envelope].into_iter().flatten() {
                let joined = base.join(&*p);
                *p = std::fs::canonicalize(&joined).unwrap_or(joined);
            }
        }
        Ok(())
    }

    /// Every range and consistency error, plus failed structural checks of
    /// the model.
    pub fn validate(&self) -> Vec<String> {
        let mut errs = self.run_config().validate();
        for e in self.meanfield_config().validate() {
            if !errs.contains(&e) {
                errs.push(e);
            }
        }
        if self.replicas.count == 0 {
            errs.push("replicas.count must be at least 1".into());
        }
        if self.dictionary.is_empty() {
            errs.push("dictionary must not be empty".into());
        }
        let table_missing = matches!(&self.model.kernel, InteractionKernel::Table(t) if t.table().max_lag() <= 0.0 && t.samples.is_some());
        if errs.is_empty() && !table_missing {
            let plan = SamplePlan {
                points: 2000,
                ..SamplePlan::default()
            };
            for c in audit_assumptions(&self.model, &plan).checks {
                if c.status == AuditStatus::Fail {
                    errs.push(format!("assumption {} violated: {}", c.name, c.detail));
                }
            }
        }
        errs
    }
}

/// Parses and validates a config. In strict mode keys that the schema does
/// not know are errors. All problems are reported together.
pub fn parse_config(text: &str, strict: bool) -> Result<ExperimentConfig, ConfigError> {
    parse_with_env(text, strict, std::iter::empty())
}

/// [`parse_config`] with `KEY=value` overrides (see [`ENV_PREFIX`]).
pub fn parse_with_env<I>(text: &str, strict: bool, env: I) -> Result<ExperimentConfig, ConfigError>
where
    I: IntoIterator<Item = (String, String)>,
{
    let cfg = parse_unvalidated(text, strict, env)?;
    let errs = cfg.validate();
    if errs.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigError::Invalid(errs))
    }
}

fn parse_unvalidated<I>(text: &str, strict: bool, env: I) -> Result<ExperimentConfig, ConfigError>
where
    I: IntoIterator<Item = (String, String)>,
{
    let mut table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| ConfigError::Syntax(e.to_string()))?;
    apply_env(&mut table, env)?;
    let mut errs: Vec<String> = REQUIRED
        .iter()
        .filter(|k| lookup(&table, k).is_none())
        .map(|k| format!("missing required key `{k}`"))
        .collect();
    if !errs.is_empty() {
        return Err(ConfigError::Invalid(errs));
    }
    let cfg: ExperimentConfig = toml::Value::Table(table.clone())
        .try_into()
        .map_err(|e: toml::de::Error| ConfigError::Invalid(vec![e.to_string().trim().to_string()]))?;
    if strict {
        let known = toml::Value::try_from(&cfg).expect("config serializes");
        let mut have = BTreeSet::new();
        key_paths(&toml::Value::Table(table), "", &mut have);
        let mut want = BTreeSet::new();
        key_paths(&known, "", &mut want);
        errs.extend(have.difference(&want).map(|k| format!("unknown key `{k}`")));
        if !errs.is_empty() {
            return Err(ConfigError::Invalid(errs));
        }
    }
    Ok(cfg)
}

/// Reads a config file, applies `MYCELIA_*` environment overrides, loads
/// tabulated kernels relative to the file, and validates.
pub fn load_config(path: &Path, strict: bool) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut cfg = parse_unvalidated(&text, strict, std::env::vars())?;
    cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")))?;
    let errs = cfg.validate();
    if errs.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigError::Invalid(errs))
    }
}

fn lookup<'a>(table: &'a toml::Table, dotted: &str) -> Option<&'a toml::Value> {
    let mut parts = dotted.split('.');
    let mut cur = table.get(parts.next()?)?;
    for p in parts {
        cur = cur.as_table()?.get(p)?;
    }
    Some(cur)
}

fn key_paths(v: &toml::Value, prefix: &str, out: &mut BTreeSet<String>) {
    match v {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let path = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                out.insert(path.clone());
                key_paths(v, &path, out);
            }
        }
        toml::Value::Array(items) => {
            for (i, item) in items.iter().enumerate() {
                if item.is_table() {
                    key_paths(item, &format!("{prefix}[{i}]"), out);
                }
            }
        }
        _ => {}
    }
}

fn apply_env<I>(table: &mut toml::Table, env: I) -> Result<(), ConfigError>
where
    I: IntoIterator<Item = (String, String)>,
{
    for (key, raw) in env {
        let Some(rest) = key.strip_prefix(ENV_PREFIX) else {
            continue;
        };
        let path: Vec<String> = rest.split("__").map(|s| s.to_ascii_lowercase()).collect();
        if path.iter().any(|p| p.is_empty()) {
            continue;
        }
        let value = parse_scalar(&raw);
        let mut cur = &mut *table;
        for p in &path[..path.len() - 1] {
            let entry = cur
                .entry(p.clone())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            cur = entry
                .as_table_mut()
                .ok_or_else(|| ConfigError::Invalid(vec![format!("{key}: `{p}` is not a table")]))?;
        }
        cur.insert(path[path.len() - 1].clone(), value);
    }
    Ok(())
}

fn parse_scalar(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[model]
initial = { kind = "atoms", positions = [[0.0, 0.0], [1.0, 0.5]] }

[run]
horizon = 1.0
dt = 0.1
"#;

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = parse_config(MINIMAL, true).unwrap();
        assert_eq!(cfg.run.snapshot_stride, 1);
        assert_eq!(cfg.model.scale, 1);
        assert_eq!(cfg.replicas.count, 1);
        assert_eq!(cfg.dictionary, default_dictionary());
        assert_eq!(cfg.hash().len(), 16);
        assert_eq!(cfg.hash(), parse_config(MINIMAL, true).unwrap().hash());
        let mut more = cfg.clone();
        more.replicas.count = 50;
        assert_eq!(more.hash(), cfg.hash());
        more.run.seed = 1;
        assert_ne!(more.hash(), cfg.hash());
    }

    #[test]
    fn hash_ignores_key_order() {
        let reordered = r#"
[run]
dt = 0.1
horizon = 1.0

[model]
initial = { positions = [[0.0, 0.0], [1.0, 0.5]], kind = "atoms" }
"#;
        assert_eq!(
            parse_config(MINIMAL, true).unwrap().hash(),
            parse_config(reordered, true).unwrap().hash()
        );
    }

    #[test]
    fn round_trip_through_toml() {
        let text = format!(
            "{MINIMAL}\n[model.kernel]\nfamily = \"exp-decay\"\namplitude = 0.5\ndecay = 1.0\nwidth = 0.5\nsign = \"repulsion\"\n"
        );
        let cfg = parse_config(&text, true).unwrap();
        let again = parse_config(&cfg.to_toml(), true).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn all_missing_keys_are_listed() {
        let Err(ConfigError::Invalid(errs)) = parse_config("[run]\nseed = 1\n", false) else {
            panic!()
        };
        assert_eq!(errs.len(), 3);
    }

    #[test]
    fn duplicate_key_names_the_key() {
        let text = format!("{MINIMAL}dt = 0.2\n");
        let Err(ConfigError::Syntax(msg)) = parse_config(&text, false) else {
            panic!()
        };
        assert!(msg.contains("dt"), "{msg}");
    }

    #[test]
    fn strict_mode_rejects_unknown_keys() {
        let text = format!("{MINIMAL}typo_key = 3\n[output]\nsnapshotz = true\n");
        assert!(parse_config(&text, false).is_ok());
        let Err(ConfigError::Invalid(errs)) = parse_config(&text, true) else {
            panic!()
        };
        assert!(errs.iter().any(|e| e.contains("run.typo_key")));
        assert!(errs.iter().any(|e| e.contains("output.snapshotz")));
    }

    #[test]
    fn understated_rate_bound_names_the_assumption() {
        let text = format!(
            "{MINIMAL}\n[model.rates]\nb1 = {{ kind = \"constant\", value = 2.0 }}\nb1_bound = 1.0\nb2 = {{ kind = \"constant\", value = 0.0 }}\nb2_bound = 0.0\n"
        );
        let Err(ConfigError::Invalid(errs)) = parse_config(&text, true) else {
            panic!()
        };
        assert!(errs.iter().any(|e| e.contains("b1 <= B1")), "{errs:?}");
    }

    #[test]
    fn range_errors_are_collected() {
        let text = MINIMAL.replace("dt = 0.1", "dt = -0.1") + "\n[meanfield]\ndt = 0.0\n[replicas]\ncount = 0\n";
        let Err(ConfigError::Invalid(errs)) = parse_config(&text, true) else {
            panic!()
        };
        assert!(errs.len() >= 3, "{errs:?}");
    }

    #[test]
    fn env_overrides_apply() {
        let env = vec![
            ("MYCELIA_RUN__DT".to_string(), "0.05".to_string()),
            ("MYCELIA_OUTPUT__DIR".to_string(), "results".to_string()),
            ("OTHER".to_string(), "1".to_string()),
        ];
        let cfg = parse_with_env(MINIMAL, true, env).unwrap();
        assert_eq!(cfg.run.dt, 0.05);
        assert_eq!(cfg.output.dir, PathBuf::from("results"));
    }
}
