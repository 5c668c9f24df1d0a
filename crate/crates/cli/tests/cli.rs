use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command as Proc;

use clap::Parser;
use synlik::experiments::{ExactPosteriorConfig, RbslConfig};
use synlik_cli::config::{apply_override, parse_driver, parse_table, take_runner_settings};
use synlik_cli::{ingest_returns, resolve, Cli, CliError};

fn tmp(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("synlik-cli-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

fn synlik(args: &[&str]) -> std::process::Output {
    Proc::new(env!("CARGO_BIN_EXE_synlik"))
        .args(args)
        .env_remove("SYNLIK_OUT_DIR")
        .output()
        .unwrap()
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn ingest_reads_short_file() {
    let d = tmp("ingest3");
    let p = write(&d, "r.csv", "date,ret\n1,0.5\n2,-0.25\n3,0.125\n");
    let y = ingest_returns(&p, "ret", false, 2).unwrap();
    assert_eq!(y.values(), &[0.5, -0.25, 0.125]);
}

#[test]
fn ingest_log_returns_drop_one_row() {
    let d = tmp("ingestlog");
    let p = write(&d, "p.csv", "price\n1.0\n2.0\n4.0\n2.0\n");
    let y = ingest_returns(&p, "price", true, 2).unwrap();
    assert_eq!(y.len(), 3);
    let ln2 = 2f64.ln();
    for (a, b) in y.values().iter().zip([ln2, ln2, -ln2]) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn ingest_errors_name_the_line() {
    let d = tmp("ingesterr");
    let empty = write(&d, "empty.csv", "");
    let e = ingest_returns(&empty, "ret", false, 2).unwrap_err().to_string();
    assert!(e.contains("line 1") && e.contains("header"), "{e}");

    let nohead = write(&d, "nohead.csv", "0.1\n0.2\n0.3\n");
    let e = ingest_returns(&nohead, "ret", false, 2).unwrap_err().to_string();
    assert!(e.contains("line 1") && e.contains("`ret`"), "{e}");

    let bad = write(&d, "bad.csv", "ret\n0.1\nx\n0.3\n");
    let e = ingest_returns(&bad, "ret", false, 2).unwrap_err().to_string();
    assert!(e.contains("line 3") && e.contains("`x`"), "{e}");

    let neg = write(&d, "neg.csv", "p\n1\n0\n2\n");
    assert!(matches!(ingest_returns(&neg, "p", true, 2), Err(CliError::Input(_))));

    let short = write(&d, "short.csv", "ret\n0.1\n0.2\n");
    let e = ingest_returns(&short, "ret", false, 100).unwrap_err().to_string();
    assert!(e.contains("at least 100"), "{e}");
}

#[test]
fn unknown_key_is_named() {
    let t = parse_table("n_iter = 10\nproposal_sdd = 0.1\n").unwrap();
    let e = parse_driver::<RbslConfig>(t).unwrap_err().to_string();
    assert!(e.contains("proposal_sdd"), "{e}");
}

#[test]
fn override_wins_over_file() {
    let mut t = parse_table("s1 = 0.05\nn = [100]\nseed = 3\n").unwrap();
    apply_override(&mut t, "s1=0.1").unwrap();
    apply_override(&mut t, "n=[500, 1000]").unwrap();
    let rs = take_runner_settings(&mut t).unwrap();
    assert_eq!(rs.seed, Some(3));
    let cfg: ExactPosteriorConfig = parse_driver(t).unwrap();
    assert_eq!(cfg.s1, 0.1);
    assert_eq!(cfg.n, vec![500, 1000]);

    let mut t = toml::Table::new();
    apply_override(&mut t, "inflation_root=diagonal").unwrap();
    assert_eq!(t["inflation_root"].as_str(), Some("diagonal"));
}

#[test]
fn flags_win_over_config_seed() {
    let d = tmp("flags");
    let cfg = write(&d, "c.toml", "seed = 4\nthreads = 2\n");
    let cli = Cli::try_parse_from([
        "synlik",
        "rbsl",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "9",
        "--set",
        "n_iter=5",
    ])
    .unwrap();
    let (t, rs) = resolve(&cli).unwrap();
    assert_eq!(rs.seed, Some(9));
    assert_eq!(rs.threads, Some(2));
    assert_eq!(t["n_iter"].as_integer(), Some(5));
}

#[test]
fn config_round_trips_through_toml() {
    let cfg = RbslConfig {
        n: vec![100],
        n_iter: 77,
        ..Default::default()
    };
    let text = toml::to_string(&cfg).unwrap();
    let back: RbslConfig = parse_driver(parse_table(&text).unwrap()).unwrap();
    assert_eq!(back, cfg);
}

#[test]
fn exact_posterior_run_is_deterministic() {
    let d = tmp("exact");
    let (a, b) = (d.join("a"), d.join("b"));
    for out in [&a, &b] {
        let o = synlik(&["exact-posterior", "--seed", "1", "--set", "n=[100]", "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let files = read_dir_sorted(&a);
    let per_n = files.iter().filter(|(f, _)| f.ends_with("_n100.csv")).count();
    assert_eq!(per_n, 6);
    assert!(files.iter().any(|(f, _)| f == "manifest.json"));
    assert_eq!(files, read_dir_sorted(&b));

    let m: serde_json::Value = serde_json::from_slice(&fs::read(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["command"], "exact-posterior");
    assert_eq!(m["seed"], 1);
    assert_eq!(m["artifacts"].as_object().unwrap().len(), 7);
}

#[test]
fn simulate_writes_series() {
    let d = tmp("sim");
    let o = synlik(&[
        "simulate",
        "--seed",
        "5",
        "--set",
        "model=\"ma1\"",
        "--set",
        "params=[0.5]",
        "--set",
        "n=50",
        "--out",
        d.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let body = fs::read_to_string(d.join("series.csv")).unwrap();
    assert_eq!(body.lines().count(), 51);
}

#[test]
fn failure_writes_error_json() {
    let d = tmp("err");
    let o = synlik(&["rbsl", "--seed", "1", "--set", "bogus=1", "--out", d.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let e: serde_json::Value = serde_json::from_slice(&fs::read(d.join("error.json")).unwrap()).unwrap();
    assert_eq!(e["error"], "config");
    assert!(e["message"].as_str().unwrap().contains("bogus"));

    let d2 = tmp("noseed");
    let o = synlik(&["temper", "--out", d2.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(d2.join("error.json").exists());
    assert!(!d2.join("manifest.json").exists());
}

#[test]
fn input_is_rejected_where_unused() {
    let d = tmp("input");
    let p = write(&d, "r.csv", "ret\n0.1\n0.2\n");
    let o = synlik(&[
        "rbsl",
        "--seed",
        "1",
        "--set",
        &format!("input=\"{}\"", p.display()),
        "--set",
        "column=\"ret\"",
        "--out",
        d.join("out").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
}
