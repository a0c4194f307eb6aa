//! Reproducible runs that write data files plus a JSON manifest, and a report
//! that reads manifests back. The `pairlab` binary is a thin front end to
//! these functions.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fitting::{FitError, FitResult, Visibilities};
use crate::mc::{fringe_phases, SimError};
use crate::model::{config_digest, parse_config, ExperimentConfig, FransonConfig, HomConfig};
use crate::pipeline::{expected_singles, run_franson, run_hom, run_pairs, PipelineError};
use crate::tdc::TdcError;

/// Seed used when none is given.
pub const DEFAULT_SEED: u64 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const MANIFEST_SUFFIX: &str = ".manifest.json";

/// Thresholds the report checks the headline numbers against.
pub mod thresholds {
    /// Largest relative CAR deviation from the analytic oracle.
    pub const CAR_RELATIVE: f64 = 0.10;
    /// Fitted visibilities must lie within this many σ of their expectation.
    pub const VISIBILITY_SIGMAS: f64 = 2.0;
    pub const FWHM_TARGET: f64 = 10.7;
    pub const FWHM_TOLERANCE: f64 = 0.3;
    pub const MIN_VIOLATION_SIGMAS: f64 = 5.0;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_digest: String,
    pub seed: u64,
    pub tool_version: String,
    pub outputs: Vec<String>,
    /// Printed values, verbatim.
    pub results: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CommandOutput {
    /// Lines for standard output.
    pub lines: Vec<String>,
    /// Lines for standard error.
    pub warnings: Vec<String>,
    pub manifest: Option<(PathBuf, RunManifest)>,
}

#[derive(Debug, Error)]
pub enum CommandError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Resource(String),
    /// The data files and manifest were written before the fit failed.
    #[error("fit failed: {message}")]
    Fit {
        message: String,
        output: Box<CommandOutput>,
    },
}

impl CommandError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CommandError::Input(_) => 2,
            CommandError::Resource(_) => 3,
            CommandError::Fit { .. } => 4,
        }
    }
}

impl From<PipelineError> for CommandError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Sim(SimError::Capacity { .. }) => CommandError::Resource(e.to_string()),
            PipelineError::Sim(_) | PipelineError::Tdc(_) => CommandError::Input(e.to_string()),
        }
    }
}

impl From<TdcError> for CommandError {
    fn from(e: TdcError) -> Self {
        CommandError::Input(e.to_string())
    }
}

fn io_error(path: &Path, e: impl std::fmt::Display) -> CommandError {
    CommandError::Resource(format!("{}: {e}", path.display()))
}

/// Reads and validates a config file; `None` gives the defaults.
pub fn load_config(path: Option<&Path>) -> Result<ExperimentConfig, CommandError> {
    match path {
        None => Ok(ExperimentConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CommandError::Input(format!("{}: {e}", p.display())))?;
            parse_config(&text).map_err(|e| CommandError::Input(format!("{}: {e}", p.display())))
        }
    }
}

/// Inclusive `start:stop:step` grid.
pub fn parse_range(spec: &str) -> Result<Vec<f64>, CommandError> {
    let bad = || CommandError::Input(format!("invalid range {spec:?}, expected start:stop:step"));
    let parts: Vec<f64> = spec
        .split(':')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| bad())?;
    let [start, stop, step] = parts[..] else {
        return Err(bad());
    };
    if !(start.is_finite() && stop.is_finite() && step.is_finite()) || step <= 0.0 || stop < start {
        return Err(bad());
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize + 1;
    if n > 100_000 {
        return Err(CommandError::Input(format!("range {spec:?} has {n} points, limit 100000")));
    }
    Ok((0..n).map(|i| start + i as f64 * step).collect())
}

/// Either a count `n` (n phases over one fringe period) or `start:stop:step`
/// in radians.
pub fn parse_phases(spec: &str) -> Result<Vec<f64>, CommandError> {
    match spec.trim().parse::<usize>() {
        Ok(0) => Err(CommandError::Input("phase count must be > 0".into())),
        Ok(n) => Ok(fringe_phases(n)),
        Err(_) => parse_range(spec),
    }
}

fn pm(v: f64, s: f64, digits: usize) -> String {
    format!("{v:.digits$} ± {s:.digits$}")
}

/// Splits a `value ± sigma` string.
fn parse_pm(s: &str) -> Option<(f64, f64)> {
    let (v, e) = s.split_once('±')?;
    Some((v.trim().parse().ok()?, e.trim().parse().ok()?))
}

fn path_string(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn manifest_path(out: &Path, command: &str) -> PathBuf {
    out.parent()
        .unwrap_or_else(|| Path::new(""))
        .join(format!("{command}{MANIFEST_SUFFIX}"))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CommandError> {
    fs::write(path, contents).map_err(|e| io_error(path, e))
}

fn write_manifest(out: &Path, manifest: &RunManifest) -> Result<PathBuf, CommandError> {
    let path = manifest_path(out, &manifest.command);
    let mut text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    text.push('\n');
    write_file(&path, &text)?;
    Ok(path)
}

/// Sibling of `out` with `suffix` appended to its stem.
fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}{suffix}.csv"))
}

fn new_manifest(command: &str, config: &ExperimentConfig, seed: u64) -> RunManifest {
    RunManifest {
        command: command.into(),
        config_digest: config_digest(config),
        seed,
        tool_version: TOOL_VERSION.into(),
        outputs: Vec::new(),
        results: BTreeMap::new(),
    }
}

#[derive(Debug, Clone)]
pub struct PairsOptions {
    pub seed: u64,
    pub events_out: PathBuf,
    pub histogram_out: PathBuf,
}

/// Simulates the pair source, writes the event and histogram CSVs and prints
/// the CAR next to its analytic prediction.
pub fn simulate_pairs(config: &ExperimentConfig, opts: &PairsOptions) -> Result<CommandOutput, CommandError> {
    let run = run_pairs(config, opts.seed)?;
    let file = fs::File::create(&opts.events_out).map_err(|e| io_error(&opts.events_out, e))?;
    run.stream
        .write_csv(BufWriter::new(file))
        .map_err(|e| io_error(&opts.events_out, e))?;
    let file = fs::File::create(&opts.histogram_out).map_err(|e| io_error(&opts.histogram_out, e))?;
    run.histogram
        .write_csv(BufWriter::new(file))
        .map_err(|e| io_error(&opts.histogram_out, e))?;

    let mut m = new_manifest("simulate-pairs", config, opts.seed);
    m.outputs = vec![path_string(&opts.events_out), path_string(&opts.histogram_out)];
    let (sa, sb) = expected_singles(config);
    let mut lines = vec![
        format!(
            "events: {} (A {}, B {}) over {} s",
            run.stream.events.len(),
            run.stream.count(crate::Channel::A),
            run.stream.count(crate::Channel::B),
            config.duration
        ),
        format!("expected singles: A {sa:.1} Hz, B {sb:.1} Hz"),
        format!(
            "histogram: {} bins of {} ps, {} coincidences",
            run.histogram.counts.len(),
            run.histogram.bin_width,
            run.histogram.total()
        ),
    ];
    let mut warnings = Vec::new();
    m.results.insert("events".into(), run.stream.events.len().to_string());
    match (&run.window, &run.car, run.car_oracle) {
        (Some(w), Some(car), Some(oracle)) => {
            let car_s = pm(car.car, car.sigma, 2);
            let oracle_s = format!("{oracle:.2}");
            lines.push(format!("peak window: center {:.1} ps, width {:.1} ps", w.center, w.width));
            lines.push(format!("CAR: {car_s}   predict_car: {oracle_s}"));
            m.results.insert("car".into(), car_s);
            m.results.insert("car_oracle".into(), oracle_s);
        }
        _ => {
            warnings.push("warning: no coincidence peak or no background; CAR undefined".into());
            lines.push("CAR: undefined".into());
            m.results.insert("car".into(), "undefined".into());
        }
    }
    let path = write_manifest(&opts.events_out, &m)?;
    Ok(CommandOutput {
        lines,
        warnings,
        manifest: Some((path, m)),
    })
}

#[derive(Debug, Clone)]
pub struct HomOptions {
    pub delays: Vec<f64>,
    pub pairs: u64,
    pub seed: u64,
    pub out: PathBuf,
    pub fit: bool,
    pub visibility: f64,
    /// Coincidence window (ps) for accidentals.
    pub window: f64,
}

fn fit_lines(label: &str, fit: &FitResult) -> Vec<String> {
    let mut v = vec![format!("{label}:")];
    v.extend(fit.report_text().lines().map(str::to_owned));
    v
}

fn fit_failure(e: FitError, mut output: CommandOutput) -> CommandError {
    let message = e.to_string();
    output.warnings.push(format!("error: fit failed: {message}"));
    CommandError::Fit {
        message,
        output: Box::new(output),
    }
}

fn write_fits(out: &Path, v: &Visibilities) -> Result<Vec<PathBuf>, CommandError> {
    let raw = sibling(out, "_fit_raw");
    let net = sibling(out, "_fit_net");
    write_file(&raw, &v.raw.report_csv())?;
    write_file(&net, &v.net.report_csv())?;
    Ok(vec![raw, net])
}

/// HOM delay scan; with `fit`, raw and accidental-subtracted dip fits.
pub fn hom(config: &ExperimentConfig, opts: &HomOptions) -> Result<CommandOutput, CommandError> {
    let mut hom_config = HomConfig::new(opts.delays.clone(), opts.visibility);
    hom_config.coincidence_window = opts.window;
    let run = run_hom(config, &hom_config, opts.pairs, opts.seed)?;
    let data = run.data();
    let mut csv = String::from("delay_ps,coincidences,sigma\n");
    for (p, d) in run.points.iter().zip(&data) {
        writeln!(csv, "{},{},{}", p.control, p.coincidences, d.sigma).unwrap();
    }
    write_file(&opts.out, &csv)?;

    let mut m = new_manifest("hom", config, opts.seed);
    m.outputs.push(path_string(&opts.out));
    let mut lines = vec![
        format!("scan: {} delays, {} pairs per point", run.points.len(), opts.pairs),
        format!("accidentals per point: {:.2}", run.accidentals),
    ];
    let bound_s = format!("{:.4}", run.visibility_bound);
    m.results.insert("visibility_bound".into(), bound_s.clone());
    let mut output = CommandOutput {
        lines: Vec::new(),
        warnings: Vec::new(),
        manifest: None,
    };
    if opts.fit {
        match run.fit(config) {
            Ok(v) => {
                for p in write_fits(&opts.out, &v)? {
                    m.outputs.push(path_string(&p));
                }
                lines.extend(fit_lines("raw fit", &v.raw));
                lines.extend(fit_lines("net fit (accidentals subtracted)", &v.net));
                let (vr, sr) = v.raw_visibility();
                let (vn, sn) = v.net_visibility();
                let fwhm = pm(v.net.value("fwhm").unwrap(), v.net.sigma("fwhm").unwrap(), 3);
                m.results.insert("v_hom_raw".into(), pm(vr, sr, 4));
                m.results.insert("v_hom_net".into(), pm(vn, sn, 4));
                m.results.insert("fwhm".into(), fwhm.clone());
                lines.push(format!("V_HOM raw: {}", m.results["v_hom_raw"]));
                lines.push(format!("V_HOM net: {}", m.results["v_hom_net"]));
                lines.push(format!("bandwidth: {fwhm} nm"));
            }
            Err(e) => {
                if let FitError::NoConvergence { best } = &e {
                    let p = sibling(&opts.out, "_fit_best");
                    write_file(&p, &best.report_csv())?;
                    m.outputs.push(path_string(&p));
                    lines.extend(fit_lines("best fit so far", best));
                }
                lines.push(format!("visibility ceiling for the configured facets: {bound_s}"));
                let path = write_manifest(&opts.out, &m)?;
                output.lines = lines;
                output.manifest = Some((path, m));
                return Err(fit_failure(e, output));
            }
        }
    }
    lines.push(format!("visibility ceiling for the configured facets: {bound_s}"));
    let path = write_manifest(&opts.out, &m)?;
    output.lines = lines;
    output.manifest = Some((path, m));
    Ok(output)
}

#[derive(Debug, Clone)]
pub struct FransonOptions {
    pub franson: FransonConfig,
    pub phases: Vec<f64>,
    pub pairs: u64,
    pub seed: u64,
    pub out: PathBuf,
    pub fit: bool,
    /// Width (ps) of each peak window.
    pub window: f64,
}

/// Franson phase scan; with `fit`, fringe fits and the Bell parameter.
pub fn franson(config: &ExperimentConfig, opts: &FransonOptions) -> Result<CommandOutput, CommandError> {
    let run = run_franson(config, &opts.franson, &opts.phases, opts.pairs, opts.seed, opts.window)?;
    let mut csv = String::from("phase,left,center,right\n");
    for r in &run.rows {
        writeln!(
            csv,
            "{},{},{},{}",
            r.phase, r.peaks.left.counts, r.peaks.center.counts, r.peaks.right.counts
        )
        .unwrap();
    }
    write_file(&opts.out, &csv)?;

    let mut m = new_manifest("franson", config, opts.seed);
    m.outputs.push(path_string(&opts.out));
    let mut warnings = Vec::new();
    if !run.timescales.passed {
        for g in run.timescales.margins.iter().filter(|g| g.normalized() < 1.0) {
            warnings.push(format!(
                "warning: timescale margin {} is {:.3}, needs {}",
                g.name, g.ratio, g.required
            ));
        }
    }
    let f = &opts.franson;
    let expected = f.intrinsic_visibility * (-f.path_imbalance / f.pump_coherence).exp();
    let flat = &run.satellite_flatness;
    let flat_s = format!(
        "chi2 {:.3}/{} p {:.4} {}",
        flat.chi2,
        flat.dof,
        flat.p_value,
        if flat.passed { "pass" } else { "fail" }
    );
    let bg = run.mean_background();
    let mut lines = vec![
        format!("scan: {} phases, {} pairs per point", run.rows.len(), opts.pairs),
        format!("accidentals per window: {}", pm(bg.value, bg.sigma, 2)),
        format!("satellite flatness: {flat_s}"),
    ];
    m.results.insert("satellite_flatness".into(), flat_s);
    m.results.insert("v_franson_expected".into(), format!("{expected:.4}"));
    let mut output = CommandOutput {
        lines: Vec::new(),
        warnings,
        manifest: None,
    };
    if opts.fit {
        match run.fit() {
            Ok(fit) => {
                for p in write_fits(&opts.out, &fit.visibilities)? {
                    m.outputs.push(path_string(&p));
                }
                lines.extend(fit_lines("raw fit", &fit.visibilities.raw));
                lines.extend(fit_lines("net fit (accidentals subtracted)", &fit.visibilities.net));
                let (vr, sr) = fit.visibilities.raw_visibility();
                let (vn, sn) = fit.visibilities.net_visibility();
                let b = fit.bell;
                let violation = b
                    .violation_sigmas
                    .map_or_else(|| "undefined".to_owned(), |v| format!("{v:.2}"));
                m.results.insert("v_franson_raw".into(), pm(vr, sr, 4));
                m.results.insert("v_franson_net".into(), pm(vn, sn, 4));
                m.results.insert("bell_s".into(), pm(b.s_value, b.sigma_s, 3));
                m.results.insert("violation_sigmas".into(), violation);
                lines.push(format!("V_Franson raw: {}", m.results["v_franson_raw"]));
                lines.push(format!("V_Franson net: {}", m.results["v_franson_net"]));
                lines.push(format!("S: {}", m.results["bell_s"]));
                lines.push(format!("violation: {} σ", m.results["violation_sigmas"]));
            }
            Err(e) => {
                let path = write_manifest(&opts.out, &m)?;
                output.lines = lines;
                output.manifest = Some((path, m));
                return Err(fit_failure(e, output));
            }
        }
    }
    let path = write_manifest(&opts.out, &m)?;
    output.lines = lines;
    output.manifest = Some((path, m));
    Ok(output)
}

/// One row of the summary table.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub quantity: &'static str,
    pub value: Option<String>,
    /// `None` when the quantity has no threshold or is missing.
    pub passed: Option<bool>,
}

fn within_sigmas(measured: Option<&String>, expected: Option<f64>) -> Option<bool> {
    let (v, s) = parse_pm(measured?)?;
    Some((v - expected?).abs() <= thresholds::VISIBILITY_SIGMAS * s)
}

/// Reads every manifest in `dir`.
pub fn read_manifests(dir: &Path) -> Result<BTreeMap<String, RunManifest>, CommandError> {
    let entries = fs::read_dir(dir).map_err(|e| CommandError::Input(format!("{}: {e}", dir.display())))?;
    let mut names: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_string_lossy().ends_with(MANIFEST_SUFFIX))
        .collect();
    names.sort();
    let mut out = BTreeMap::new();
    for p in names {
        let text = fs::read_to_string(&p).map_err(|e| CommandError::Input(format!("{}: {e}", p.display())))?;
        let m: RunManifest =
            serde_json::from_str(&text).map_err(|e| CommandError::Input(format!("{}: {e}", p.display())))?;
        out.insert(m.command.clone(), m);
    }
    if out.is_empty() {
        return Err(CommandError::Input(format!("no run manifests in {}", dir.display())));
    }
    Ok(out)
}

/// Summary rows built from manifests alone.
pub fn report_rows(manifests: &BTreeMap<String, RunManifest>) -> Vec<ReportRow> {
    let get = |cmd: &str, key: &str| manifests.get(cmd).and_then(|m| m.results.get(key));
    let num = |cmd: &str, key: &str| get(cmd, key).and_then(|s| s.trim().parse::<f64>().ok());

    let car = get("simulate-pairs", "car");
    let car_pass = car.and_then(|c| parse_pm(c)).zip(num("simulate-pairs", "car_oracle")).map(|((c, _), o)| {
        ((c - o) / o).abs() <= thresholds::CAR_RELATIVE
    });
    let fwhm_pass = get("hom", "fwhm")
        .and_then(|s| parse_pm(s))
        .map(|(v, _)| (v - thresholds::FWHM_TARGET).abs() <= thresholds::FWHM_TOLERANCE);
    let violation_pass = num("franson", "violation_sigmas").map(|v| v >= thresholds::MIN_VIOLATION_SIGMAS);
    let row = |quantity, value: Option<&String>, passed| ReportRow {
        quantity,
        value: value.cloned(),
        passed,
    };
    vec![
        row("CAR", car, car_pass),
        row("V_HOM raw", get("hom", "v_hom_raw"), None),
        row(
            "V_HOM net",
            get("hom", "v_hom_net"),
            within_sigmas(get("hom", "v_hom_net"), num("hom", "visibility_bound")),
        ),
        row("bandwidth (nm)", get("hom", "fwhm"), fwhm_pass),
        row("V_Franson raw", get("franson", "v_franson_raw"), None),
        row(
            "V_Franson net",
            get("franson", "v_franson_net"),
            within_sigmas(get("franson", "v_franson_net"), num("franson", "v_franson_expected")),
        ),
        row("S", get("franson", "bell_s"), None),
        row("violation (σ)", get("franson", "violation_sigmas"), violation_pass),
    ]
}

/// Summary table of the runs whose manifests sit in `dir`. Nothing is
/// recomputed; values are copied from the manifests.
pub fn report(dir: &Path) -> Result<CommandOutput, CommandError> {
    let manifests = read_manifests(dir)?;
    let mut warnings = Vec::new();
    for m in manifests.values() {
        for o in &m.outputs {
            let p = Path::new(o);
            if !p.exists() && !dir.join(p.file_name().unwrap_or_default()).exists() {
                warnings.push(format!("warning: {} output {o} is missing", m.command));
            }
        }
    }
    let mut lines = vec![format!("{:<16} {:<22} {}", "quantity", "value", "check")];
    for r in report_rows(&manifests) {
        let check = match r.passed {
            Some(true) => "PASS",
            Some(false) => "FAIL",
            None => "-",
        };
        lines.push(format!(
            "{:<16} {:<22} {check}",
            r.quantity,
            r.value.as_deref().unwrap_or("n/a")
        ));
    }
    Ok(CommandOutput {
        lines,
        warnings,
        manifest: None,
    })
}
