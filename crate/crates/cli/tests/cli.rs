use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn pairlab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pairlab"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn manifest(dir: &Path, command: &str) -> serde_json::Value {
    let text = fs::read_to_string(dir.join(format!("{command}.manifest.json"))).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn result(m: &serde_json::Value, key: &str) -> String {
    m["results"][key].as_str().unwrap_or_else(|| panic!("{key} missing")).to_owned()
}

fn pm(s: &str) -> (f64, f64) {
    let (v, e) = s.split_once('±').unwrap();
    (v.trim().parse().unwrap(), e.trim().parse().unwrap())
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

const LOW_NOISE: &str = "detector_a.dead_time = 0\ndetector_b.dead_time = 0\n";

#[test]
fn simulate_pairs_is_deterministic_with_164_ps_bins() {
    let dir = TempDir::new().unwrap();
    let o = pairlab(dir.path(), &["simulate-pairs", "--seed", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let hist = fs::read_to_string(dir.path().join("histogram.csv")).unwrap();
    let centers: Vec<f64> = hist
        .lines()
        .skip(1)
        .take(2)
        .map(|l| l.split(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(centers[1] - centers[0], 164.0);

    let names = ["events.csv", "histogram.csv", "simulate-pairs.manifest.json"];
    let first: Vec<Vec<u8>> = names.iter().map(|n| fs::read(dir.path().join(n)).unwrap()).collect();
    let o2 = pairlab(dir.path(), &["simulate-pairs", "--seed", "1"]);
    assert!(o2.status.success());
    let second: Vec<Vec<u8>> = names.iter().map(|n| fs::read(dir.path().join(n)).unwrap()).collect();
    assert_eq!(first, second);
    assert_eq!(o.stdout, o2.stdout);
}

#[test]
fn default_car_agrees_with_oracle() {
    let dir = TempDir::new().unwrap();
    let o = pairlab(dir.path(), &["simulate-pairs"]);
    assert!(o.status.success());
    let m = manifest(dir.path(), "simulate-pairs");
    let (car, _) = pm(&result(&m, "car"));
    let oracle: f64 = result(&m, "car_oracle").parse().unwrap();
    assert!(((car - oracle) / oracle).abs() <= 0.10, "{car} vs {oracle}");
    assert!(stdout(&o).contains("predict_car"));
}

#[test]
fn empty_source_reports_undefined_car() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "empty.cfg",
        "source.pair_rate = 0\ndetector_a.dark_rate = 0\ndetector_b.dark_rate = 0\n",
    );
    let o = pairlab(dir.path(), &["simulate-pairs", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stderr(&o).contains("warning"));
    assert!(stdout(&o).contains("CAR: undefined"));
    let hist = fs::read_to_string(dir.path().join("histogram.csv")).unwrap();
    assert!(hist.lines().skip(1).all(|l| l.ends_with(",0")));
}

#[test]
fn config_and_input_errors_exit_2() {
    let dir = TempDir::new().unwrap();
    let bad = write_config(dir.path(), "bad.cfg", "source.pair_rate = -1\n");
    let o = pairlab(dir.path(), &["simulate-pairs", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!stderr(&o).is_empty());
    let o = pairlab(dir.path(), &["simulate-pairs", "missing.cfg"]);
    assert_eq!(o.status.code(), Some(2));
    let o = pairlab(dir.path(), &["hom", "--delays", "1:0:1"]);
    assert_eq!(o.status.code(), Some(2));
    let o = pairlab(dir.path(), &["hom", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn oversized_run_exits_3() {
    let dir = TempDir::new().unwrap();
    let big = write_config(dir.path(), "big.cfg", "run.duration = 1000\n");
    let o = pairlab(dir.path(), &["simulate-pairs", big.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn ideal_hom_scan_fits_unit_visibility() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "ideal.cfg", "facets.reflectivity = 0\n");
    let o = pairlab(
        dir.path(),
        &["hom", cfg.to_str().unwrap(), "--delays", "-1.5:1.5:0.05", "--fit", "--visibility", "1"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let (v, s) = pm(&result(&manifest(dir.path(), "hom"), "v_hom_net"));
    assert!((v - 1.0).abs() <= 2.0 * s.max(1e-4), "{v} ± {s}");
    assert!(stdout(&o).contains("visibility ceiling for the configured facets: 1.0000"));
}

#[test]
fn default_hom_scan_reaches_facet_ceiling() {
    let dir = TempDir::new().unwrap();
    let o = pairlab(dir.path(), &["hom", "--fit"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let m = manifest(dir.path(), "hom");
    let (v, s) = pm(&result(&m, "v_hom_net"));
    assert!((v - 0.905).abs() <= 2.0 * s, "{v} ± {s}");
    assert_eq!(result(&m, "visibility_bound"), "0.9050");
    let scan = fs::read_to_string(dir.path().join("hom_scan.csv")).unwrap();
    assert!(scan.starts_with("delay_ps,coincidences,sigma\n"));
    assert_eq!(scan.lines().count(), 42);
    let fit = fs::read_to_string(dir.path().join("hom_scan_fit_net.csv")).unwrap();
    assert!(fit.starts_with("parameter,value,sigma\n") && fit.contains("chi2/dof,"));
}

#[test]
fn single_point_scan_is_a_fit_error_but_keeps_the_scan() {
    let dir = TempDir::new().unwrap();
    let o = pairlab(dir.path(), &["hom", "--delays", "0:0:1", "--fit"]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("fit failed"));
    assert!(dir.path().join("hom_scan.csv").exists());
    assert!(dir.path().join("hom.manifest.json").exists());
}

#[test]
fn franson_with_28k_pairs_per_phase_violates_bell() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "low.cfg", LOW_NOISE);
    let o = pairlab(
        dir.path(),
        &["franson", cfg.to_str().unwrap(), "--fit", "--visibility", "0.956", "--pairs", "28000"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let m = manifest(dir.path(), "franson");
    let (s, sigma) = pm(&result(&m, "bell_s"));
    assert!((s - 2.70).abs() <= 2.0 * sigma, "S {s} ± {sigma}");
    let violation: f64 = result(&m, "violation_sigmas").parse().unwrap();
    assert!((5.0..=9.0).contains(&violation), "{violation}");
    let flat = result(&m, "satellite_flatness");
    assert!(flat.ends_with("pass"), "{flat}");
    assert!(stdout(&o).contains("satellite flatness"));
    let csv = fs::read_to_string(dir.path().join("franson.csv")).unwrap();
    assert!(csv.starts_with("phase,left,center,right\n"));
    assert_eq!(csv.lines().count(), 13);
}

#[test]
fn franson_without_entanglement_shows_no_violation() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "low.cfg", LOW_NOISE);
    let o = pairlab(
        dir.path(),
        &["franson", cfg.to_str().unwrap(), "--fit", "--visibility", "0", "--pairs", "40000"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let m = manifest(dir.path(), "franson");
    // a fitted amplitude is non-negative, so its null distribution is
    // Rayleigh rather than Gaussian; 3σ keeps the false-alarm rate near 1%
    let (v, s) = pm(&result(&m, "v_franson_net"));
    assert!(v <= 3.0 * s, "V {v} ± {s}");
    let (bell, bell_sigma) = pm(&result(&m, "bell_s"));
    assert!(bell <= 3.0 * bell_sigma);
    let violation: f64 = result(&m, "violation_sigmas").parse().unwrap();
    assert!(violation < 0.0);
}

#[test]
fn short_imbalance_warns_about_timescales() {
    let dir = TempDir::new().unwrap();
    let o = pairlab(dir.path(), &["franson", "--path-imbalance", "1000", "--pairs", "20000"]);
    assert!(o.status.success());
    assert!(stderr(&o).contains("timescale margin"), "{}", stderr(&o));
}

fn run_three(dir: &Path) -> Vec<String> {
    let cfg = write_config(dir, "low.cfg", LOW_NOISE);
    let mut printed = Vec::new();
    for args in [
        vec!["simulate-pairs"],
        vec!["hom", "--fit"],
        vec!["franson", cfg.to_str().unwrap(), "--fit", "--visibility", "0.956", "--pairs", "28000"],
    ] {
        let o = pairlab(dir, &args);
        assert!(o.status.success(), "{args:?}: {}", stderr(&o));
        printed.push(stdout(&o));
    }
    printed
}

#[test]
fn report_collects_every_headline_quantity_verbatim() {
    let dir = TempDir::new().unwrap();
    let printed = run_three(dir.path()).join("");
    let o = pairlab(dir.path(), &["report", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = stdout(&o);
    assert!(!table.contains("n/a"), "{table}");
    for (cmd, key) in [
        ("simulate-pairs", "car"),
        ("hom", "v_hom_raw"),
        ("hom", "v_hom_net"),
        ("hom", "fwhm"),
        ("franson", "v_franson_raw"),
        ("franson", "v_franson_net"),
        ("franson", "bell_s"),
        ("franson", "violation_sigmas"),
    ] {
        let value = result(&manifest(dir.path(), cmd), key);
        assert!(table.contains(&value), "{key} {value} not in report");
        assert!(printed.contains(&value), "{key} {value} not printed by {cmd}");
    }
}

#[test]
fn report_on_empty_directory_exits_2() {
    let dir = TempDir::new().unwrap();
    let o = pairlab(dir.path(), &["report", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn every_command_reruns_byte_identically() {
    let dir = TempDir::new().unwrap();
    let out1 = run_three(dir.path());
    let report1 = pairlab(dir.path(), &["report"]).stdout;
    let files1 = snapshot(dir.path());
    let out2 = run_three(dir.path());
    let report2 = pairlab(dir.path(), &["report"]).stdout;
    assert_eq!(files1, snapshot(dir.path()));
    assert_eq!(out1, out2);
    assert_eq!(report1, report2);
}
