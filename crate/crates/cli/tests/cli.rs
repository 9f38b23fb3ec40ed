use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn wxkrig(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wxkrig"))
        .args(args)
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = wxkrig(args);
    assert!(
        out.status.success(),
        "{args:?} exited {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Synthetic 40-station, one-year dataset in a fresh directory.
fn dataset() -> TempDir {
    let dir = TempDir::new().unwrap();
    ok(&["synth", "--n-stations", "40", "--days", "365", "--seed", "9", "--out", s(dir.path())]);
    dir
}

fn inputs(dir: &Path) -> [String; 4] {
    [
        "--stations".into(),
        dir.join("stations.csv").display().to_string(),
        "--observations".into(),
        dir.join("observations.csv").display().to_string(),
    ]
}

fn run_in(dir: &Path, extra: &[&str]) -> Output {
    let inp = inputs(dir);
    let mut args: Vec<&str> = extra.to_vec();
    args.extend(inp.iter().map(String::as_str));
    ok(&args)
}

#[test]
fn end_to_end_workflow() {
    let data = dataset();
    let d = data.path();
    let out = TempDir::new().unwrap();
    let o = out.path();

    let v = run_in(d, &["validate"]);
    assert!(String::from_utf8_lossy(&v.stdout).contains("ok"));

    run_in(d, &["cv-daily", "--methods", "NN,IDW,OK", "--out", s(&o.join("daily"))]);
    let report = fs::read_to_string(o.join("daily/report.csv")).unwrap();
    assert!(report.lines().count() > 1);
    for m in ["NN", "IDW", "OK"] {
        assert!(o.join(format!("daily/residuals_{m}.csv")).exists(), "{m}");
    }

    run_in(
        d,
        &["cv-index", "--methods", "NN,IDW", "--approach", "both", "--format", "markdown", "--out", s(&o.join("idx"))],
    );
    let md = fs::read_to_string(o.join("idx/report.md")).unwrap();
    assert!(md.contains("CDD") && md.contains("MFP"));

    let tables = run_in(d, &["indexes"]);
    assert!(String::from_utf8_lossy(&tables.stdout).lines().count() > 40);

    let moments = run_in(d, &["moments"]);
    assert!(!moments.stdout.is_empty());

    let pred = run_in(
        d,
        &["interpolate", "--date", "1990-03-01", "--lat", "40.1", "--lon", "-94.2", "--elev", "300", "--out", s(&o.join("pt"))],
    );
    assert!(pred.status.success());
    let p = fs::read_to_string(o.join("pt/predictions.csv")).unwrap();
    assert_eq!(p.lines().count(), 1 + 5, "{p}");
}

#[test]
fn runs_are_bit_reproducible() {
    let data = dataset();
    let d = data.path();
    let a = run_in(d, &["cv-daily", "--methods", "IDW,TGK", "--seed", "3"]);
    let b = run_in(d, &["cv-daily", "--methods", "IDW,TGK", "--seed", "3", "--execution", "sequential"]);
    assert_eq!(a.stdout, b.stdout);
    let c = run_in(d, &["cv-daily", "--methods", "IDW,TGK", "--seed", "4"]);
    assert_ne!(a.stdout, c.stdout);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let data = dataset();
    let d = data.path();
    let cfg = d.join("run.cfg");
    fs::write(&cfg, "methods = NN\nseed = 5\n").unwrap();
    let from_file = run_in(d, &["cv-daily", "--config", s(&cfg)]);
    let text = String::from_utf8_lossy(&from_file.stdout).to_string();
    assert!(text.contains("NN") && !text.contains("IDW"));
    let flagged = run_in(d, &["cv-daily", "--config", s(&cfg), "--methods", "IDW"]);
    assert!(String::from_utf8_lossy(&flagged.stdout).contains("IDW"));
}

#[test]
fn exit_codes() {
    let data = dataset();
    let d = data.path();

    // duplicated observation row: validation failure
    let obs = fs::read_to_string(d.join("observations.csv")).unwrap();
    let dup = obs.lines().nth(1).unwrap().to_string();
    let bad = TempDir::new().unwrap();
    fs::copy(d.join("stations.csv"), bad.path().join("stations.csv")).unwrap();
    fs::write(bad.path().join("observations.csv"), format!("{obs}{dup}\n")).unwrap();
    let inp = inputs(bad.path());
    let mut args = vec!["validate"];
    args.extend(inp.iter().map(String::as_str));
    assert_eq!(wxkrig(&args).status.code(), Some(1));

    // missing input file
    let out = wxkrig(&["cv-daily", "--stations", "/nonexistent/s.csv", "--observations", "/nonexistent/o.csv"]);
    assert_eq!(out.status.code(), Some(2));

    // no elevation, nothing cached, offline
    let stations = d.join("bare.csv");
    fs::write(&stations, "station_id,lat,lon,elev_m\nA,40.0,-95.0,\n").unwrap();
    let cache = TempDir::new().unwrap();
    let out = wxkrig(&["fetch-elev", "--offline", "--stations", s(&stations), "--cache-dir", s(cache.path())]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));
}

#[test]
fn offline_fetch_uses_the_cache() {
    let cache = TempDir::new().unwrap();
    fs::write(cache.path().join("elevations.csv"), "lat,lon,elev_m,source\n40.00000,-95.00000,312.5,service\n")
        .unwrap();
    let dir = TempDir::new().unwrap();
    let stations = dir.path().join("s.csv");
    fs::write(&stations, "station_id,lat,lon,elev_m\nA,40.0,-95.0,\n").unwrap();
    let out = ok(&["fetch-elev", "--offline", "--stations", s(&stations), "--cache-dir", s(cache.path())]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("312.5"));
}
