//! Physical parameter records shared by the analytic, Monte Carlo and
//! analysis layers, plus the line-oriented configuration format.
//!
//! Configuration documents hold one `section.key = value` per line. `#`
//! starts a comment. Unspecified keys keep their defaults. Every key, its
//! unit and its default:
//!
//! | key                            | unit  | default      |
//! |--------------------------------|-------|--------------|
//! | `source.pair_rate`             | Hz    | 7.2e6        |
//! | `source.pump_wavelength`       | nm    | 783          |
//! | `source.degeneracy_wavelength` | nm    | 1566         |
//! | `source.internal_pump_power`   | µW    | 625          |
//! | `source.temperature`           | °C    | 20.1         |
//! | `filter.center_wavelength`     | nm    | 1566         |
//! | `filter.fwhm`                  | nm    | 10.8         |
//! | `filter.shape`                 | -     | rectangular  |
//! | `facets.reflectivity`          | 1     | 0.24         |
//! | `facets.eta_te`                | 1     | 0.6925       |
//! | `facets.eta_tm`                | 1     | 0.6925       |
//! | `facets.roundtrip_delay`       | ps    | 43           |
//! | `detector_a.efficiency`        | 1     | 0.1          |
//! | `detector_a.dark_rate`         | Hz    | 100          |
//! | `detector_a.jitter_fwhm`       | ps    | 200          |
//! | `detector_a.dead_time`         | ns    | 10000        |
//! | `detector_b.*`                 |       | as detector_a|
//! | `run.duration`                 | s     | 1            |
//! | `run.histogram_bin`            | ps    | 164          |
//! | `run.histogram_range`          | ps    | 10000        |
//!
//! The canonical serialization writes the keys in the order above.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { key: String, line: usize },
    #[error("line {line}: invalid value `{value}` for `{key}`")]
    InvalidValue {
        key: String,
        value: String,
        line: usize,
    },
    #[error("invariant violation: {}", .0.join("; "))]
    InvariantViolation(Vec<String>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceParams {
    /// Pairs generated per second (Hz).
    pub pair_rate: f64,
    /// nm
    pub pump_wavelength: f64,
    /// Center wavelength of the photon pairs at degeneracy (nm).
    pub degeneracy_wavelength: f64,
    /// µW, metadata only.
    pub internal_pump_power: f64,
    /// °C, metadata only.
    pub temperature: f64,
}

impl Default for SourceParams {
    fn default() -> Self {
        Self {
            pair_rate: 7.2e6,
            pump_wavelength: 783.0,
            degeneracy_wavelength: 1566.0,
            internal_pump_power: 625.0,
            temperature: 20.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FilterShape {
    #[default]
    Rectangular,
}

impl fmt::Display for FilterShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FilterShape::Rectangular => f.write_str("rectangular"),
        }
    }
}

impl FromStr for FilterShape {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "rectangular" => Ok(FilterShape::Rectangular),
            _ => Err(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterParams {
    /// nm
    pub center_wavelength: f64,
    /// Spectral FWHM (nm).
    pub fwhm: f64,
    pub shape: FilterShape,
}

impl Default for FilterParams {
    fn default() -> Self {
        Self {
            center_wavelength: 1566.0,
            fwhm: 10.8,
            shape: FilterShape::Rectangular,
        }
    }
}

/// Waveguide facet parameters.
///
/// `eta_te` and `eta_tm` are the survival factors of one facet round trip for
/// each polarisation. A photon that makes that round trip arrives
/// `roundtrip_delay` later than a directly transmitted one.
#[derive(Debug, Clone, PartialEq)]
pub struct FacetParams {
    pub reflectivity: f64,
    pub eta_te: f64,
    pub eta_tm: f64,
    /// ps
    pub roundtrip_delay: f64,
}

impl Default for FacetParams {
    fn default() -> Self {
        Self {
            reflectivity: 0.24,
            eta_te: 0.6925,
            eta_tm: 0.6925,
            roundtrip_delay: 43.0,
        }
    }
}

impl FacetParams {
    /// Relative weight of a once-round-trip-delayed photon of the given
    /// polarisation, R²·η/(1−R).
    pub fn delayed_weight(&self, eta: f64) -> f64 {
        let r = self.reflectivity;
        r * r * eta / (1.0 - r)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorParams {
    pub efficiency: f64,
    /// Hz
    pub dark_rate: f64,
    /// Gaussian timing jitter FWHM (ps).
    pub jitter_fwhm: f64,
    /// Non-paralyzable dead time (ns).
    pub dead_time: f64,
}

impl Default for DetectorParams {
    fn default() -> Self {
        Self {
            efficiency: 0.10,
            dark_rate: 100.0,
            jitter_fwhm: 200.0,
            dead_time: 10_000.0,
        }
    }
}

impl DetectorParams {
    /// Standard deviation of the Gaussian jitter (ps).
    pub fn jitter_sigma(&self) -> f64 {
        self.jitter_fwhm / FWHM_PER_SIGMA
    }
}

/// 2·√(2 ln 2)
pub const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949_3;

/// The four timescales that must be well separated in a Franson experiment.
/// All values in ps.
#[derive(Debug, Clone, PartialEq)]
pub struct TimescaleParams {
    pub photon_coherence: f64,
    pub detector_jitter: f64,
    pub path_imbalance: f64,
    pub pump_coherence: f64,
}

impl TimescaleParams {
    pub fn validate(&self) -> Vec<String> {
        let mut v = Vec::new();
        for (name, x) in [
            ("photon_coherence", self.photon_coherence),
            ("detector_jitter", self.detector_jitter),
            ("path_imbalance", self.path_imbalance),
            ("pump_coherence", self.pump_coherence),
        ] {
            if !(x > 0.0 && x.is_finite()) {
                v.push(format!("timescale.{name} must be > 0 (got {x})"));
            }
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FransonConfig {
    /// Δt = ΔL/c (ps).
    pub path_imbalance: f64,
    /// Interferometer phase φ (rad).
    pub phase: f64,
    /// Entanglement visibility before any noise.
    pub intrinsic_visibility: f64,
    /// Pump laser coherence time (ps); degrades the fringe by exp(−Δt/τ_p).
    pub pump_coherence: f64,
}

impl Default for FransonConfig {
    fn default() -> Self {
        Self {
            path_imbalance: 2500.0,
            phase: 0.0,
            intrinsic_visibility: 1.0,
            pump_coherence: 1.0e6,
        }
    }
}

impl FransonConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.path_imbalance > 0.0) {
            v.push(format!(
                "franson.path_imbalance must be > 0 (got {})",
                self.path_imbalance
            ));
        }
        if !(0.0..=1.0).contains(&self.intrinsic_visibility) {
            v.push(format!(
                "franson.intrinsic_visibility must be in [0, 1] (got {})",
                self.intrinsic_visibility
            ));
        }
        if !(self.pump_coherence > 0.0) {
            v.push(format!(
                "franson.pump_coherence must be > 0 (got {})",
                self.pump_coherence
            ));
        }
        if !self.phase.is_finite() {
            v.push("franson.phase must be finite".to_string());
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HomConfig {
    /// Delay-line settings δt (ps).
    pub delays: Vec<f64>,
    /// Indistinguishability of directly transmitted pairs, excluding facets.
    pub intrinsic_visibility: f64,
    /// Width of the coincidence window used to count accidentals (ps).
    pub coincidence_window: f64,
}

impl HomConfig {
    pub fn new(delays: Vec<f64>, intrinsic_visibility: f64) -> Self {
        Self {
            delays,
            intrinsic_visibility,
            coincidence_window: 500.0,
        }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.delays.is_empty() {
            v.push("hom.delays must be non-empty".to_string());
        }
        if self.delays.iter().any(|d| !d.is_finite()) {
            v.push("hom.delays must be finite".to_string());
        }
        if !(0.0..=1.0).contains(&self.intrinsic_visibility) {
            v.push(format!(
                "hom.intrinsic_visibility must be in [0, 1] (got {})",
                self.intrinsic_visibility
            ));
        }
        if !(self.coincidence_window >= 0.0) {
            v.push(format!(
                "hom.coincidence_window must be >= 0 (got {})",
                self.coincidence_window
            ));
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub source: SourceParams,
    pub filter: FilterParams,
    pub facets: FacetParams,
    pub detector_a: DetectorParams,
    pub detector_b: DetectorParams,
    /// Acquisition time (s).
    pub duration: f64,
    /// TDC histogram resolution (ps).
    pub histogram_bin: f64,
    /// Histogram half range (ps).
    pub histogram_range: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            source: SourceParams::default(),
            filter: FilterParams::default(),
            facets: FacetParams::default(),
            detector_a: DetectorParams::default(),
            detector_b: DetectorParams::default(),
            duration: 1.0,
            histogram_bin: 164.0,
            histogram_range: 10_000.0,
        }
    }
}

#[derive(Clone, Copy)]
enum Field {
    Num(fn(&ExperimentConfig) -> f64, fn(&mut ExperimentConfig, f64)),
    Shape,
}

macro_rules! num_field {
    ($key:literal, $($path:ident).+) => {
        (
            $key,
            Field::Num(|c| c.$($path).+, |c, v| c.$($path).+ = v),
        )
    };
}

/// Canonical key order.
const FIELDS: &[(&str, Field)] = &[
    num_field!("source.pair_rate", source.pair_rate),
    num_field!("source.pump_wavelength", source.pump_wavelength),
    num_field!("source.degeneracy_wavelength", source.degeneracy_wavelength),
    num_field!("source.internal_pump_power", source.internal_pump_power),
    num_field!("source.temperature", source.temperature),
    num_field!("filter.center_wavelength", filter.center_wavelength),
    num_field!("filter.fwhm", filter.fwhm),
    ("filter.shape", Field::Shape),
    num_field!("facets.reflectivity", facets.reflectivity),
    num_field!("facets.eta_te", facets.eta_te),
    num_field!("facets.eta_tm", facets.eta_tm),
    num_field!("facets.roundtrip_delay", facets.roundtrip_delay),
    num_field!("detector_a.efficiency", detector_a.efficiency),
    num_field!("detector_a.dark_rate", detector_a.dark_rate),
    num_field!("detector_a.jitter_fwhm", detector_a.jitter_fwhm),
    num_field!("detector_a.dead_time", detector_a.dead_time),
    num_field!("detector_b.efficiency", detector_b.efficiency),
    num_field!("detector_b.dark_rate", detector_b.dark_rate),
    num_field!("detector_b.jitter_fwhm", detector_b.jitter_fwhm),
    num_field!("detector_b.dead_time", detector_b.dead_time),
    num_field!("run.duration", duration),
    num_field!("run.histogram_bin", histogram_bin),
    num_field!("run.histogram_range", histogram_range),
];

/// Parses a configuration document and validates the result.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut config = ExperimentConfig::default();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ConfigError::InvalidValue {
                key: line.to_string(),
                value: String::new(),
                line: line_no,
            });
        };
        let (key, value) = (key.trim(), value.trim());
        let invalid = || ConfigError::InvalidValue {
            key: key.to_string(),
            value: value.to_string(),
            line: line_no,
        };
        let field = FIELDS
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, f)| *f)
            .ok_or_else(|| ConfigError::UnknownKey {
                key: key.to_string(),
                line: line_no,
            })?;
        match field {
            Field::Num(_, set) => {
                let v: f64 = value.parse().map_err(|_| invalid())?;
                if !v.is_finite() {
                    return Err(invalid());
                }
                set(&mut config, v);
            }
            Field::Shape => config.filter.shape = value.parse().map_err(|_| invalid())?,
        }
    }
    let violations = validate(&config);
    if violations.is_empty() {
        Ok(config)
    } else {
        Err(ConfigError::InvariantViolation(violations))
    }
}

/// Writes every key in canonical order. `parse_config(&serialize_config(c))`
/// reproduces `c` exactly.
pub fn serialize_config(config: &ExperimentConfig) -> String {
    let mut out = String::new();
    for (key, field) in FIELDS {
        match field {
            Field::Num(get, _) => writeln!(out, "{key} = {:?}", get(config)).unwrap(),
            Field::Shape => writeln!(out, "{key} = {}", config.filter.shape).unwrap(),
        }
    }
    out
}

/// SHA-256 of the canonical serialization, hex encoded.
pub fn config_digest(config: &ExperimentConfig) -> String {
    hex::encode(Sha256::digest(serialize_config(config).as_bytes()))
}

fn check(v: &mut Vec<String>, ok: bool, key: &str, rule: &str, value: f64) {
    if !ok {
        v.push(format!("{key} must be {rule} (got {value})"));
    }
}

fn check_detector(v: &mut Vec<String>, name: &str, d: &DetectorParams) {
    check(
        v,
        (0.0..=1.0).contains(&d.efficiency),
        &format!("{name}.efficiency"),
        "in [0, 1]",
        d.efficiency,
    );
    check(v, d.dark_rate >= 0.0, &format!("{name}.dark_rate"), ">= 0", d.dark_rate);
    check(
        v,
        d.jitter_fwhm >= 0.0,
        &format!("{name}.jitter_fwhm"),
        ">= 0",
        d.jitter_fwhm,
    );
    check(v, d.dead_time >= 0.0, &format!("{name}.dead_time"), ">= 0", d.dead_time);
}

/// Lists every violated invariant; empty iff the configuration is valid.
pub fn validate(config: &ExperimentConfig) -> Vec<String> {
    let mut v = Vec::new();
    let s = &config.source;
    check(&mut v, s.pair_rate >= 0.0, "source.pair_rate", ">= 0", s.pair_rate);
    check(
        &mut v,
        s.pump_wavelength > 700.0 && s.pump_wavelength < 900.0,
        "source.pump_wavelength",
        "in (700, 900) nm",
        s.pump_wavelength,
    );
    check(
        &mut v,
        s.degeneracy_wavelength > 1400.0 && s.degeneracy_wavelength < 1700.0,
        "source.degeneracy_wavelength",
        "in (1400, 1700) nm",
        s.degeneracy_wavelength,
    );
    let f = &config.filter;
    check(&mut v, f.fwhm > 0.0, "filter.fwhm", "> 0", f.fwhm);
    check(
        &mut v,
        f.center_wavelength > 0.0,
        "filter.center_wavelength",
        "> 0",
        f.center_wavelength,
    );
    let fa = &config.facets;
    check(
        &mut v,
        (0.0..1.0).contains(&fa.reflectivity),
        "facets.reflectivity",
        "in [0, 1)",
        fa.reflectivity,
    );
    check(&mut v, (0.0..=1.0).contains(&fa.eta_te), "facets.eta_te", "in [0, 1]", fa.eta_te);
    check(&mut v, (0.0..=1.0).contains(&fa.eta_tm), "facets.eta_tm", "in [0, 1]", fa.eta_tm);
    check(
        &mut v,
        fa.roundtrip_delay > 0.0,
        "facets.roundtrip_delay",
        "> 0",
        fa.roundtrip_delay,
    );
    check_detector(&mut v, "detector_a", &config.detector_a);
    check_detector(&mut v, "detector_b", &config.detector_b);
    check(&mut v, config.duration > 0.0, "run.duration", "> 0", config.duration);
    check(
        &mut v,
        config.histogram_bin > 0.0,
        "run.histogram_bin",
        "> 0",
        config.histogram_bin,
    );
    check(
        &mut v,
        config.histogram_range >= 10.0 * config.histogram_bin,
        "run.histogram_range",
        ">= 10 x run.histogram_bin",
        config.histogram_range,
    );
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_document_gives_defaults() {
        let c = parse_config("").unwrap();
        assert_eq!(c, ExperimentConfig::default());
        assert_eq!(c.source.pair_rate, 7.2e6);
        assert_eq!(c.histogram_bin, 164.0);
        assert_eq!(c.filter.fwhm, 10.8);
        assert_eq!(c.facets.reflectivity, 0.24);
        assert_eq!(c.detector_a.jitter_fwhm, 200.0);
        assert_eq!(c.detector_b.jitter_fwhm, 200.0);
    }

    #[test]
    fn negative_pair_rate_is_rejected() {
        match parse_config("source.pair_rate = -1") {
            Err(ConfigError::InvariantViolation(v)) => {
                assert_eq!(v.len(), 1);
                assert!(v[0].contains("source.pair_rate"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn overrides_keep_other_defaults() {
        let c = parse_config("facets.reflectivity = 0.24\nfilter.fwhm = 10.7").unwrap();
        let mut expected = ExperimentConfig::default();
        expected.filter.fwhm = 10.7;
        assert_eq!(c, expected);
    }

    #[test]
    fn comments_and_blank_lines() {
        let c = parse_config("# header\n\n  run.duration = 2.5   # seconds\n").unwrap();
        assert_eq!(c.duration, 2.5);
    }

    #[test]
    fn unknown_key_and_bad_value_carry_line() {
        assert_eq!(
            parse_config("\nsource.bogus = 1"),
            Err(ConfigError::UnknownKey {
                key: "source.bogus".into(),
                line: 2
            })
        );
        match parse_config("filter.fwhm = 1\nfilter.fwhm = wide") {
            Err(ConfigError::InvalidValue { key, line, .. }) => {
                assert_eq!(key, "filter.fwhm");
                assert_eq!(line, 2);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            parse_config("filter.shape = gaussian"),
            Err(ConfigError::InvalidValue { .. })
        ));
        assert!(matches!(
            parse_config("run.duration"),
            Err(ConfigError::InvalidValue { .. })
        ));
        assert!(matches!(
            parse_config("run.duration = NaN"),
            Err(ConfigError::InvalidValue { .. })
        ));
    }

    #[test]
    fn out_of_range_values_are_not_clamped() {
        assert!(parse_config("detector_a.efficiency = 1.2").is_err());
        assert!(parse_config("source.pump_wavelength = 1000").is_err());
        assert!(parse_config("detector_b.dead_time = -5").is_err());
    }

    #[test]
    fn validate_cases() {
        assert!(validate(&ExperimentConfig::default()).is_empty());

        let mut c = ExperimentConfig::default();
        c.histogram_range = c.histogram_bin;
        let v = validate(&c);
        assert_eq!(v.len(), 1);
        assert!(v[0].contains("histogram_range"));

        let mut c = ExperimentConfig::default();
        c.facets.reflectivity = 1.0;
        let v = validate(&c);
        assert_eq!(v.len(), 1);
        assert!(v[0].contains("reflectivity"));
    }

    #[test]
    fn digest_is_stable_and_sensitive() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        assert_eq!(config_digest(&a), config_digest(&b));
        b.duration = 2.0;
        assert_ne!(config_digest(&a), config_digest(&b));
        assert_eq!(config_digest(&a).len(), 64);
    }

    fn arb_config() -> impl Strategy<Value = ExperimentConfig> {
        (
            (0.0..1e8f64, 701.0..899.0f64, 1401.0..1699.0f64, -1e3..1e3f64),
            (1.0..3000.0f64, 1e-3..100.0f64, 0.0..0.999f64, 0.0..1.0f64, 0.0..1.0f64, 1e-3..1e3f64),
            (0.0..1.0f64, 0.0..1e6f64, 0.0..1e3f64, 0.0..1e5f64),
            (1e-6..100.0f64, 1.0..1e3f64, 10.0..100.0f64),
        )
            .prop_map(|(s, f, d, r)| {
                let mut c = ExperimentConfig::default();
                c.source.pair_rate = s.0;
                c.source.pump_wavelength = s.1;
                c.source.degeneracy_wavelength = s.2;
                c.source.temperature = s.3;
                c.filter.center_wavelength = f.0;
                c.filter.fwhm = f.1;
                c.facets.reflectivity = f.2;
                c.facets.eta_te = f.3;
                c.facets.eta_tm = f.4;
                c.facets.roundtrip_delay = f.5;
                c.detector_a.efficiency = d.0;
                c.detector_b.dark_rate = d.1;
                c.detector_a.jitter_fwhm = d.2;
                c.detector_b.dead_time = d.3;
                c.duration = r.0;
                c.histogram_bin = r.1;
                c.histogram_range = r.1 * r.2;
                c
            })
    }

    proptest! {
        #[test]
        fn serialize_parse_roundtrip(c in arb_config()) {
            let text = serialize_config(&c);
            let back = parse_config(&text).unwrap();
            prop_assert_eq!(&back, &c);
            prop_assert_eq!(serialize_config(&back), text);
        }
    }
}
