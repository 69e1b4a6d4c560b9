use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = r#"seed = 5
[data]
horizon = 10
stride = 5
runs_per_class = 2
warmup = 20
length = 60
[model]
encoder = [4]
decoder = [8]
epochs = 2
batch_size = 16
[prbs]
target = "sp2"
tau_ol = 6.0
tau_cl = 3.0
[tune]
budget = 2
initial_epochs = 1
"#;

fn fdd(dir: &Path, threads: &str, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fdd"))
        .current_dir(dir)
        .env("RAYON_NUM_THREADS", threads)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, threads: &str, args: &[&str]) -> String {
    let out = fdd(dir, threads, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Every stage in order; returns all files written plus the concatenated stdout.
fn pipeline(dir: &Path, threads: &str) -> (BTreeMap<String, Vec<u8>>, String) {
    std::fs::write(dir.join("run.toml"), CONFIG).unwrap();
    let c = ["--config", "run.toml"];
    let steps: Vec<Vec<&str>> = vec![
        vec!["simulate", c[0], c[1], "--out", "raw"],
        vec!["ingest", c[0], c[1], "--input", "raw", "--out", "arch"],
        vec!["prbs", "design", c[0], c[1], "--out", "plan"],
        vec!["train", c[0], c[1], "--data", "arch", "--mode", "flat", "--out", "models"],
        vec!["train", c[0], c[1], "--data", "arch", "--mode", "level1", "--out", "models"],
        vec!["train", c[0], c[1], "--data", "arch", "--mode", "level2", "--out", "models"],
        vec!["train", c[0], c[1], "--data", "arch", "--mode", "level2", "--prbs", "on", "--out", "models"],
        vec!["tune", c[0], c[1], "--data", "arch", "--mode", "level1", "--out", "tune"],
        vec!["evaluate", c[0], c[1], "--data", "arch", "--models", "models", "--out", "reports"],
        vec!["evaluate", c[0], c[1], "--data", "arch", "--models", "models", "--hierarchical", "--out", "reports"],
        vec![
            "evaluate", c[0], c[1], "--data", "arch", "--models", "models", "--hierarchical", "--prbs", "on", "--out",
            "reports",
        ],
        vec![
            "report",
            "reports/flat_report.json",
            "reports/hierarchical_report.json",
            "reports/hierarchical_prbs_report.json",
            "--confusion",
        ],
    ];
    let mut stdout = String::new();
    for s in &steps {
        stdout.push_str(&ok(dir, threads, s));
    }
    let mut files = BTreeMap::new();
    for sub in ["raw", "arch", "plan", "models", "tune", "reports"] {
        for e in std::fs::read_dir(dir.join(sub)).unwrap() {
            let p = e.unwrap().path();
            let key = format!("{sub}/{}", p.file_name().unwrap().to_string_lossy());
            files.insert(key, std::fs::read(&p).unwrap());
        }
    }
    (files, stdout)
}

#[test]
fn full_pipeline_is_bitwise_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (fa, sa) = pipeline(a.path(), "1");
    let (fb, sb) = pipeline(b.path(), "4");
    for name in [
        "models/flat.model",
        "models/level2_prbs.model",
        "reports/hierarchical_prbs_report.json",
        "reports/flat_confusion.tsv",
        "tune/level1_tune.csv",
        "plan/prbs_plan.toml",
        "arch/test_prbs.win",
    ] {
        assert!(fa.contains_key(name), "{name} missing");
    }
    assert_eq!(fa.keys().collect::<Vec<_>>(), fb.keys().collect::<Vec<_>>());
    for (k, v) in &fa {
        assert!(v == &fb[k], "{k} differs between runs");
    }
    assert_eq!(sa, sb);
    assert!(sa.contains("FAR"));
}

#[test]
fn report_renders_one_file() {
    let d = tempfile::tempdir().unwrap();
    pipeline(d.path(), "1");
    let text = ok(d.path(), "1", &["report", "reports/flat_report.json"]);
    assert!(text.contains("average FDR:"));
    assert!(text.contains("valve2-stiction"));
}

#[test]
fn input_errors_exit_one() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("noseed.toml"), "[data]\nhorizon = 10\n").unwrap();
    std::fs::write(d.path().join("ok.toml"), CONFIG).unwrap();
    let cases: [&[&str]; 5] = [
        &["simulate", "--config", "noseed.toml", "--out", "raw"],
        &["simulate", "--config", "missing.toml", "--out", "raw"],
        &["ingest", "--config", "ok.toml", "--input", "nowhere", "--out", "arch"],
        &["train", "--config", "ok.toml", "--data", "nowhere", "--mode", "flat", "--out", "m"],
        &["train", "--config", "ok.toml", "--data", "a", "--mode", "level9", "--out", "m"],
    ];
    for args in cases {
        let out = fdd(d.path(), "1", args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
    }
    assert_eq!(fdd(d.path(), "1", &["--help"]).status.code(), Some(0));
}

#[test]
fn divergence_exits_two() {
    let d = tempfile::tempdir().unwrap();
    let cfg = CONFIG.replace("epochs = 2", "epochs = 3\nlearning_rate = 1e300");
    std::fs::write(d.path().join("run.toml"), &cfg).unwrap();
    ok(d.path(), "1", &["simulate", "--config", "run.toml", "--out", "raw"]);
    ok(d.path(), "1", &["ingest", "--config", "run.toml", "--input", "raw", "--out", "arch"]);
    let out = fdd(d.path(), "1", &["train", "--config", "run.toml", "--data", "arch", "--mode", "flat", "--out", "m"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("diverged"));
}

#[test]
fn missing_excitation_is_input_error() {
    let d = tempfile::tempdir().unwrap();
    let cfg: String = CONFIG.split("[prbs]").next().unwrap().to_string();
    std::fs::write(d.path().join("run.toml"), cfg).unwrap();
    ok(d.path(), "1", &["simulate", "--config", "run.toml", "--out", "raw"]);
    ok(d.path(), "1", &["ingest", "--config", "run.toml", "--input", "raw", "--out", "arch"]);
    let out = fdd(
        d.path(),
        "1",
        &["train", "--config", "run.toml", "--data", "arch", "--mode", "level2", "--prbs", "on", "--out", "m"],
    );
    assert_eq!(out.status.code(), Some(1));
    let out = fdd(d.path(), "1", &["prbs", "design", "--config", "run.toml", "--out", "p"]);
    assert_eq!(out.status.code(), Some(1));
}
