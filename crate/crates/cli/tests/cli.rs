use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn mycelia(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_mycelia"));
    cmd.args(args);
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn config(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn files(dir: &Path, prefix: &str) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap().to_string_lossy().starts_with(prefix))
        .collect();
    v.sort();
    v
}

const SMALL: &str = r#"
[model]
scale = 20
initial = { kind = "point-mass", at = [0.0, 0.0], count = 20 }

[model.rates]
b1 = { kind = "constant", value = 1.0 }
b1_bound = 1.0

[run]
horizon = 0.5
dt = 0.1
seed = 4

[meanfield]
dt = 0.05
grid = { lower = [-4.0, -4.0], upper = [4.0, 4.0], cells = [32, 32] }

[replicas]
count = 3
"#;

fn small(dir: &Path) -> String {
    let p = dir.join("small.toml");
    fs::write(&p, SMALL).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn simulate_writes_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small(tmp.path());
    let out = tmp.path().join("out");
    let o = mycelia(&["simulate", "-c", &cfg, "--out", out.to_str().unwrap()], &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(files(&out, "snapshots-").len(), 3);
    assert_eq!(files(&out, "events-").len(), 3);
    assert_eq!(files(&out, "config-").len(), 1);
    let stats = fs::read_to_string(&files(&out, "stats-")[0]).unwrap();
    assert!(stats.starts_with("t,mean_count,var_count,se_count,"));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&files(&out, "report-")[0]).unwrap()).unwrap();
    assert_eq!(report["moment_audit_passed"], true);
    let first = fs::read_to_string(&files(&out, "snapshots-")[0]).unwrap();
    let line: serde_json::Value = serde_json::from_str(first.lines().next().unwrap()).unwrap();
    assert_eq!(line["t"], 0.0);
    assert_eq!(line["count"], 20);
}

#[test]
fn stored_config_has_the_same_hash() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small(tmp.path());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    mycelia(&["meanfield", "-c", &cfg, "--out", a.to_str().unwrap()], &[]);
    let stored = files(&a, "config-")[0].clone();
    let o = mycelia(
        &[
            "meanfield",
            "-c",
            stored.to_str().unwrap(),
            "--out",
            b.to_str().unwrap(),
        ],
        &[],
    );
    assert!(o.status.success());
    assert_eq!(files(&b, "config-")[0].file_name(), stored.file_name());
    assert_eq!(
        fs::read(&files(&a, "monitors-")[0]).unwrap(),
        fs::read(&files(&b, "monitors-")[0]).unwrap()
    );
}

#[test]
fn seed_flag_changes_the_hash() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small(tmp.path());
    let out = tmp.path().join("out");
    for seed in ["1", "2"] {
        mycelia(
            &[
                "simulate",
                "-c",
                &cfg,
                "--seed",
                seed,
                "--replicas",
                "1",
                "--out",
                out.to_str().unwrap(),
            ],
            &[],
        );
    }
    assert_eq!(files(&out, "config-").len(), 2);
}

#[test]
fn replay_mismatch_exits_4() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small(tmp.path());
    let out = tmp.path().join("out");
    mycelia(&["simulate", "-c", &cfg, "--out", out.to_str().unwrap()], &[]);
    let target = &files(&out, "snapshots-")[1];
    let mut bytes = fs::read(target).unwrap();
    bytes.push(b'\n');
    fs::write(target, bytes).unwrap();
    let stored = files(&out, "config-")[0].to_string_lossy().into_owned();
    let replay = tmp.path().join("replay");
    let ok = mycelia(
        &[
            "replay",
            "-c",
            &stored,
            "--replica",
            "0",
            "--out",
            replay.to_str().unwrap(),
            "--verify",
            out.to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(ok.status.code(), Some(0));
    let bad = mycelia(
        &[
            "replay",
            "-c",
            &stored,
            "--replica",
            "1",
            "--out",
            replay.to_str().unwrap(),
            "--verify",
            out.to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(bad.status.code(), Some(4));
}

#[test]
fn usage_and_config_errors_exit_1() {
    assert_eq!(mycelia(&["frobnicate"], &[]).status.code(), Some(1));
    assert_eq!(
        mycelia(&["simulate", "-c", "/nonexistent.toml"], &[]).status.code(),
        Some(1)
    );
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small(tmp.path());
    let o = mycelia(
        &[
            "compare",
            "-c",
            &cfg,
            "--n-list",
            "20",
            "--out",
            tmp.path().to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(o.status.code(), Some(1));
    let o = mycelia(
        &["simulate", "-c", &cfg, "--out", tmp.path().to_str().unwrap()],
        &[("MYCELIA_RUN__DT", "-1.0")],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("dt"));
    let unknown = tmp.path().join("unknown.toml");
    fs::write(&unknown, format!("{SMALL}\n[extra]\nkey = 1\n")).unwrap();
    let o = mycelia(&["simulate", "--strict", "-c", unknown.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn capacity_exits_2_with_partial_output() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small(tmp.path());
    let out = tmp.path().join("out");
    let o = mycelia(
        &["simulate", "-c", &cfg, "--out", out.to_str().unwrap()],
        &[("MYCELIA_RUN__CAP", "22")],
    );
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(
        files(&out, "snapshots-")
            .iter()
            .filter(|p| p.to_string_lossy().ends_with(".partial.ndjson"))
            .count(),
        1
    );
}

#[test]
fn excessive_leak_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path().join("leaky.toml");
    fs::write(
        &p,
        r#"
[model]
sigma = 1.0
initial = { kind = "gaussian", center = [0.0, 0.0], width = 0.5, count = 1 }
[run]
horizon = 1.0
dt = 0.1
[meanfield]
dt = 0.1
grid = { lower = [-1.0, -1.0], upper = [1.0, 1.0], cells = [16, 16] }
"#,
    )
    .unwrap();
    let o = mycelia(
        &[
            "meanfield",
            "-c",
            p.to_str().unwrap(),
            "--out",
            tmp.path().to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn compare_reports_both_sizes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small(tmp.path());
    let out = tmp.path().join("out");
    let o = mycelia(
        &[
            "compare",
            "-c",
            &cfg,
            "--n-list",
            "20,80",
            "--replicas",
            "2",
            "--out",
            out.to_str().unwrap(),
        ],
        &[],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(
        files(&out, "convergence-")
            .into_iter()
            .find(|p| p.extension().unwrap() == "csv")
            .unwrap(),
    )
    .unwrap();
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn validate_passes_on_shipped_config() {
    let tmp = tempfile::tempdir().unwrap();
    let o = mycelia(
        &[
            "validate",
            "-c",
            &config("yule.toml"),
            "--out",
            tmp.path().to_str().unwrap(),
        ],
        &[],
    );
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(o.status.success(), "{text}");
    assert!(text.lines().all(|l| l.starts_with("PASS")));
    assert_eq!(files(tmp.path(), "validate-").len(), 1);
}
