use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const MM1: &str = r#"
name = "mm1"
replications = 2

[base]
k = 1
policy = "gittins"
horizon = 4000.0
seed = 11
snapshots = 200
arrival = { family = "exponential", rate = 0.5 }
job_model = { kind = "known_size", size = { family = "exponential", rate = 1.0 } }
"#;

fn ggk(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ggk"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn setup(body: &str) -> (TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    fs::write(&cfg, body).unwrap();
    (dir, cfg)
}

fn golden(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(name)
}

#[test]
fn simulate_matches_golden_file() {
    let (dir, cfg) = setup(MM1);
    let out = dir.path().join("out");
    let o = ggk(&["simulate", "--workers", "1"], &cfg, &out);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let got = fs::read_to_string(out.join("simulate.csv")).unwrap();
    if std::env::var_os("GGK_BLESS").is_some() {
        fs::write(golden("simulate_mm1.csv"), &got).unwrap();
    }
    let want = fs::read_to_string(golden("simulate_mm1.csv")).unwrap();
    assert_eq!(got, want);
    assert!(got.starts_with("config_hash,name,point,replication,rho,k,policy,"));
    assert!(got.lines().next().unwrap().contains("mean_n,mean_n_ci"));
}

#[test]
fn sweep_cardinality() {
    let body = format!("{MM1}\n[sweep]\nrho = [0.5, 0.9]\n")
        .replace("replications = 2", "replications = 4");
    let (dir, cfg) = setup(&body);
    let out = dir.path().join("out");
    let o = ggk(&["simulate", "--workers", "2"], &cfg, &out);
    assert_eq!(o.status.code(), Some(0));
    let csv = fs::read_to_string(out.join("simulate.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 8 + 2);
}

#[test]
fn seed_flag_changes_output() {
    let (dir, cfg) = setup(MM1);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ggk(&["simulate", "--seed", "1"], &cfg, &a);
    ggk(&["simulate", "--seed", "2"], &cfg, &b);
    let read = |p: &Path| fs::read(p.join("simulate.csv")).unwrap();
    assert_ne!(read(&a), read(&b));
}

#[test]
fn verify_wine_passes() {
    let (dir, cfg) = setup(MM1);
    let o = ggk(
        &["verify", "--suite", "wine,decomposition"],
        &cfg,
        &dir.path().join("out"),
    );
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(o.status.code(), Some(0), "{stdout}");
    let wine = stdout.lines().find(|l| l.starts_with("WINE")).unwrap();
    assert!(wine.contains("direct") && wine.ends_with("PASS"), "{wine}");
    assert!(stdout
        .lines()
        .any(|l| l.starts_with("DECOMPOSITION") && l.ends_with("PASS")));
    assert!(dir.path().join("out/decomposition.csv").exists());
    assert!(dir.path().join("out/verify.txt").exists());
}

#[test]
fn deterministic_decomposition_passes() {
    let body = MM1
        .replace(
            r#"{ family = "exponential", rate = 0.5 }"#,
            r#"{ family = "deterministic", value = 2.0 }"#,
        )
        .replace(
            r#"size = { family = "exponential", rate = 1.0 }"#,
            r#"size = { family = "deterministic", value = 1.0 }"#,
        );
    let (dir, cfg) = setup(&body);
    let o = ggk(
        &["verify", "--suite", "decomposition"],
        &cfg,
        &dir.path().join("out"),
    );
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(o.status.code(), Some(0), "{stdout}");
}

#[test]
fn gap_without_baseline_is_a_config_error() {
    let (dir, cfg) = setup(MM1);
    let o = ggk(&["verify", "--suite", "gap"], &cfg, &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("baseline"));
}

#[test]
fn gap_with_baseline_passes() {
    let body = format!(
        "{}\n[baseline]\nk = 1\npolicy = \"gittins\"\nhorizon = 4000.0\n\
         arrival = {{ family = \"exponential\", rate = 0.5 }}\n\
         job_model = {{ kind = \"known_size\", size = {{ family = \"exponential\", rate = 1.0 }} }}\n",
        MM1.replace("k = 1", "k = 2")
    );
    let (dir, cfg) = setup(&body);
    let o = ggk(&["verify", "--suite", "gap"], &cfg, &dir.path().join("out"));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(o.status.code(), Some(0), "{stdout}");
    assert!(stdout.starts_with("GAP"));
}

#[test]
fn malformed_config_reports_position() {
    let (dir, cfg) = setup(&MM1.replace("k = 1", "k = \"one\""));
    let o = ggk(&["simulate"], &cfg, &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line"));
}

#[test]
fn unknown_field_is_rejected() {
    let (dir, cfg) = setup(&MM1.replace("seed = 11", "seed = 11\nspeed = 2"));
    let o = ggk(&["simulate"], &cfg, &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("speed"));
}

#[test]
fn overload_exits_with_nonconvergence() {
    let body = MM1
        .replace("rate = 0.5", "rate = 1.25")
        .replace("horizon = 4000.0", "horizon = 40000.0");
    let (dir, cfg) = setup(&body);
    let o = ggk(&["simulate"], &cfg, &dir.path().join("out"));
    assert_eq!(
        o.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
}

#[test]
fn failed_check_exits_with_four() {
    let body = MM1
        .replace(
            "rate = 0.5 }",
            "rate = 0.5 }\nsetup = { family = \"deterministic\", value = 1.0 }",
        )
        .replace("horizon = 4000.0", "horizon = 50.0");
    let (dir, cfg) = setup(&body);
    let o = ggk(
        &["verify", "--suite", "setup-bound"],
        &cfg,
        &dir.path().join("out"),
    );
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(o.status.code(), Some(4), "{stdout}");
    assert!(stdout.contains("FAIL"));
}

#[test]
fn bounds_prints_loss_terms() {
    let body = MM1
        .replace("k = 1", "k = 2")
        .replace(
            r#"{ family = "exponential", rate = 0.5 }"#,
            r#"{ family = "exponential", rate = 0.25 }"#,
        )
        .replace("rate = 1.0 }", "rate = 0.5 }");
    let (dir, cfg) = setup(&body);
    let out = dir.path().join("bounds.csv");
    let o = ggk(&["bounds"], &cfg, &out);
    assert_eq!(o.status.code(), Some(0));
    let csv = fs::read_to_string(out).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "config_hash,rho,k,loss_a,loss_b,loss_c,total,c_const,a_min,a_max,setup_excess"
    );
    let row: Vec<f64> = lines
        .next()
        .unwrap()
        .split(',')
        .skip(1)
        .map(|v| v.parse().unwrap())
        .collect();
    assert!((row[2] - 2.6166).abs() < 1e-3, "{row:?}");
}

#[test]
fn rank_table_exports_csv() {
    let body = MM1.replace("known_size", "unknown_size").replace(
        r#"size = { family = "exponential", rate = 1.0 }"#,
        r#"size = { family = "uniform", low = 0.0, high = 2.0 }"#,
    );
    let (dir, cfg) = setup(&body);
    let out = dir.path().join("rank.csv");
    let o = ggk(&["rank-table"], &cfg, &out);
    assert_eq!(o.status.code(), Some(0));
    let csv = fs::read_to_string(out).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("age,rank"));
    let first: Vec<f64> = lines
        .next()
        .unwrap()
        .split(',')
        .map(|v| v.parse().unwrap())
        .collect();
    assert_eq!(first[0], 0.0);
    assert!((first[1] - 1.0).abs() < 1e-4);
}

#[test]
fn workers_env_is_honoured() {
    let (dir, cfg) = setup(MM1);
    let o = Command::new(env!("CARGO_BIN_EXE_ggk"))
        .env("GGK_WORKERS", "0")
        .args(["simulate", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}
