use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const EXAMPLE: &str = include_str!("../../core/scenarios/example.toml");

fn sbdc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sbdc"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn scenario(dir: &Path, name: &str, edit: impl Fn(&str) -> String) -> PathBuf {
    let text = EXAMPLE.replace("horizon_s = 3600.0", "horizon_s = 900.0");
    let path = dir.join(name);
    fs::write(&path, edit(&text)).unwrap();
    path
}

fn short(dir: &Path) -> PathBuf {
    scenario(dir, "short.toml", str::to_string)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn bundled_example_is_valid() {
    let o = sbdc(&[
        "validate",
        concat!(env!("CARGO_MANIFEST_DIR"), "/../core/scenarios/example.toml"),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
}

#[test]
fn negative_altitude_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let p = scenario(dir.path(), "bad.toml", |t| {
        t.replacen("altitude_km = 550.0", "altitude_km = -550.0", 1)
    });
    let o = sbdc(&["validate", s(&p)]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("altitude_km") && err.contains("line"), "{err}");
}

#[test]
fn zone_thresholds_out_of_order_cite_the_policy() {
    let dir = tempfile::tempdir().unwrap();
    let p = scenario(dir.path(), "bad.toml", |t| {
        format!("{t}\n[zone_policy]\nr_red = 0.5\nr_green = 0.4\n")
    });
    let o = sbdc(&["validate", s(&p)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("ZonePolicy"), "{}", stderr(&o));
}

#[test]
fn every_violation_is_listed() {
    let dir = tempfile::tempdir().unwrap();
    let p = scenario(dir.path(), "bad.toml", |t| {
        format!("{t}\n[zone_policy]\nr_red = 0.5\nr_green = 0.4\n").replace("horizon_s = 900.0", "horizon_s = -1.0")
    });
    let o = sbdc(&["validate", s(&p)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("2 violation(s)"), "{}", stderr(&o));
}

#[test]
fn unreadable_files_exit_2() {
    assert_eq!(sbdc(&["validate", "/nonexistent/scenario.toml"]).status.code(), Some(2));
    assert_eq!(sbdc(&["run", "/nonexistent/scenario.toml"]).status.code(), Some(2));
}

#[test]
fn run_writes_ledgers_and_records_the_seed() {
    let dir = tempfile::tempdir().unwrap();
    let p = short(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = sbdc(&["run", s(&p), "--seed", "42", "--out-dir", s(out)]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    for name in [
        "tasks.csv",
        "energy.csv",
        "links.csv",
        "orchestration.csv",
        "summary.json",
    ] {
        let x = fs::read(a.join(name)).unwrap();
        assert_eq!(x, fs::read(b.join(name)).unwrap(), "{name} differs between reruns");
    }
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(a.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["seed"], 42);
    assert_eq!(summary["scenario_hash"].as_str().unwrap().len(), 64);
    assert!(summary["config"]["zone_policy"]["r_red"].is_number());
}

#[test]
fn editing_the_file_changes_the_hash() {
    let dir = tempfile::tempdir().unwrap();
    let p = short(dir.path());
    let q = scenario(dir.path(), "edited.toml", |t| format!("{t}\n# comment\n"));
    let hash = |path: &Path, out: &str| {
        let out = dir.path().join(out);
        assert_eq!(sbdc(&["run", s(path), "--out-dir", s(&out)]).status.code(), Some(0));
        let v: serde_json::Value = serde_json::from_slice(&fs::read(out.join("summary.json")).unwrap()).unwrap();
        v["scenario_hash"].as_str().unwrap().to_string()
    };
    assert_ne!(hash(&p, "p"), hash(&q, "q"));
}

#[test]
fn contacts_file_replaces_geometry() {
    let dir = tempfile::tempdir().unwrap();
    let p = short(dir.path());
    let plan = dir.path().join("plan.txt");
    fs::write(&plan, "").unwrap();
    let out = dir.path().join("out");
    let o = sbdc(&["run", s(&p), "--contacts-file", s(&plan), "--out-dir", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let links = fs::read_to_string(out.join("links.csv")).unwrap();
    assert_eq!(links.lines().count(), 1);
    fs::write(&plan, "not a contact\n").unwrap();
    let o = sbdc(&["run", s(&p), "--contacts-file", s(&plan), "--out-dir", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn compare_emits_json_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let p = short(dir.path());
    let out = dir.path().join("cmp");
    let o = sbdc(&[
        "compare",
        s(&p),
        "--modes",
        "relay_only,in_orbit_compute",
        "--out-dir",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(out.join("comparison.json")).unwrap()).unwrap();
    assert!(report["modes"]["relay_only"]["feeder_bits_total"].is_number());
    assert_eq!(report["scenario_hash"].as_str().unwrap().len(), 64);
    let csv = fs::read_to_string(out.join("comparison.csv")).unwrap();
    assert_eq!(String::from_utf8(o.stdout).unwrap(), csv);
    assert!(sbdc(&["compare", s(&p), "--modes", "warp"]).status.code() == Some(2));
}

#[test]
fn sweep_writes_one_row_per_point_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let p = short(dir.path());
    let out = dir.path().join("sw");
    let o = sbdc(&[
        "sweep",
        s(&p),
        "--param",
        "compression_ratio=1,10,20",
        "--seeds",
        "2",
        "--jobs",
        "2",
        "--out-dir",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("aggregate.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3 * 2);
    for point in 0..3 {
        assert_eq!(csv.lines().filter(|l| l.starts_with(&format!("{point},"))).count(), 2);
    }
    assert!(out.join("point-2-seed-8").join("summary.json").exists());
}

#[test]
fn sweep_rejects_unknown_keys() {
    let dir = tempfile::tempdir().unwrap();
    let p = short(dir.path());
    let o = sbdc(&["sweep", s(&p), "--param", "compression_rate=1,2"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("compression_rate"), "{}", stderr(&o));
    assert_eq!(
        sbdc(&["sweep", s(&p), "--param", "compression_ratio"]).status.code(),
        Some(2)
    );
}

#[test]
fn logs_stay_off_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let p = short(dir.path());
    let out = dir.path().join("cmp");
    let o = Command::new(env!("CARGO_BIN_EXE_sbdc"))
        .args(["compare", s(&p), "--out-dir", s(&out)])
        .env("RUST_LOG", "info")
        .output()
        .unwrap();
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.lines().all(|l| !l.contains("INFO")));
    assert_eq!(stdout, fs::read_to_string(out.join("comparison.csv")).unwrap());
}
