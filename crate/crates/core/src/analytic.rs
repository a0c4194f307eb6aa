//! Closed-form physics used both as the simulator's ground truth and as the
//! oracle the Monte Carlo is checked against.
//!
//! Units follow the rest of the crate: times in ps, wavelengths in nm, rates
//! in Hz.

use std::f64::consts::{PI, SQRT_2};

use thiserror::Error;

use crate::model::{FacetParams, TimescaleParams};

/// Speed of light (m/s).
pub const SPEED_OF_LIGHT: f64 = 2.9979e8;

/// Signal/idler wavelength change per nm of pump detuning below degeneracy.
pub const TUNING_SLOPE: f64 = 500.0;

/// Default factor used to operationalize "much less than".
pub const DEFAULT_TIMESCALE_MARGIN: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DomainError {
    #[error("facet reflectivity must be < 1 (got {0})")]
    Reflectivity(f64),
    #[error("filter FWHM must be > 0 (got {0})")]
    ZeroBandwidth(f64),
    #[error("no accidental background: CAR is infinite")]
    InfiniteCar,
}

/// Unnormalized sinc, sin(x)/x with sinc(0) = 1.
pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// d sinc / dx.
pub fn sinc_derivative(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        -x / 3.0
    } else {
        (x * x.cos() - x.sin()) / (x * x)
    }
}

/// Converts δt·δλ/λ² (ps·nm/nm²) into the dimensionless sinc argument.
///
/// x = 2π·δt·δλ·c/λ²; ps·nm⁻¹ contributes 1e-12·1e9 = 1e-3.
pub fn hom_phase_factor(center_wavelength: f64) -> f64 {
    2.0 * PI * SPEED_OF_LIGHT * 1e-3 / (center_wavelength * center_wavelength)
}

/// Parameters of the HOM dip model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HomDipParams {
    /// Coincidences away from the dip (A).
    pub amplitude: f64,
    pub visibility: f64,
    /// nm
    pub center_wavelength: f64,
    /// Spectral FWHM δλ (nm).
    pub fwhm: f64,
}

/// Expected coincidences at delay `delta_t` (ps): A·(1 − V·sinc(x)).
pub fn hom_dip_rate(delta_t: f64, params: &HomDipParams) -> f64 {
    let x = hom_phase_factor(params.center_wavelength) * delta_t * params.fwhm;
    params.amplitude * (1.0 - params.visibility * sinc(x))
}

/// Delay of the first zero of the sinc term, λ²/(2cδλ) (ps).
pub fn hom_first_zero(center_wavelength: f64, fwhm: f64) -> f64 {
    PI / (hom_phase_factor(center_wavelength) * fwhm)
}

/// Upper bound on HOM visibility set by facet reflections,
/// 1 / (1 + R²/(1−R)·(η_TM + η_TE)).
pub fn visibility_bound(facets: &FacetParams) -> Result<f64, DomainError> {
    let r = facets.reflectivity;
    if r >= 1.0 {
        return Err(DomainError::Reflectivity(r));
    }
    Ok(1.0 / (1.0 + r * r / (1.0 - r) * (facets.eta_tm + facets.eta_te)))
}

/// Transform-limited coherence time λ²/(c·δλ), in ps.
pub fn coherence_time(center_wavelength: f64, fwhm: f64) -> Result<f64, DomainError> {
    if fwhm <= 0.0 {
        return Err(DomainError::ZeroBandwidth(fwhm));
    }
    // nm²/(m/s · nm) = 1e-9 m·s/m → 1e-9 s = 1e3 ps
    Ok(center_wavelength * center_wavelength / (SPEED_OF_LIGHT * fwhm) * 1e3)
}

/// Outcome probabilities for one pair sent through a shared unbalanced
/// interferometer and post-selected on one output port per photon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakWeights {
    pub left: f64,
    pub center: f64,
    pub right: f64,
    pub discarded: f64,
}

/// Each photon exits the chosen port through the short or the long arm with
/// amplitude 1/2 (two 50/50 splitters). The mixed-arm outcomes land in the
/// satellite peaks; short-short and long-long overlap in time and interfere.
pub fn franson_peak_weights(phase: f64, intrinsic_visibility: f64) -> PeakWeights {
    let side = 1.0 / 16.0;
    let center = (1.0 + intrinsic_visibility * (2.0 * phase).cos()) / 8.0;
    PeakWeights {
        left: side,
        center,
        right: side,
        discarded: 1.0 - 2.0 * side - center,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BellResult {
    pub s_value: f64,
    pub sigma_s: f64,
    /// (S − 2)/σ_S, `None` when σ_S = 0.
    pub violation_sigmas: Option<f64>,
}

/// CHSH parameter from a sinusoidal two-photon fringe: S = 2√2·V.
pub fn bell_from_visibility(visibility: f64, sigma_v: f64) -> BellResult {
    let s_value = 2.0 * SQRT_2 * visibility;
    let sigma_s = 2.0 * SQRT_2 * sigma_v;
    let violation_sigmas = (sigma_s > 0.0).then(|| (s_value - 2.0) / sigma_s);
    BellResult {
        s_value,
        sigma_s,
        violation_sigmas,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Margin {
    pub name: &'static str,
    /// Achieved ratio, e.g. Δt/τ_det.
    pub ratio: f64,
    /// Ratio the check demands.
    pub required: f64,
}

impl Margin {
    /// Achieved over required; the inequality holds iff this is ≥ 1.
    pub fn normalized(&self) -> f64 {
        self.ratio / self.required
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub passed: bool,
    pub margins: Vec<Margin>,
}

/// Checks (τ_c, τ_det) ≪ Δt ≪ τ_p with "≪" meaning a factor of `margin`.
pub fn timescale_check(t: &TimescaleParams, margin: f64) -> CheckReport {
    let margins = vec![
        Margin {
            name: "path_imbalance/photon_coherence",
            ratio: t.path_imbalance / t.photon_coherence,
            required: margin,
        },
        Margin {
            name: "path_imbalance/detector_jitter",
            ratio: t.path_imbalance / t.detector_jitter,
            required: margin,
        },
        Margin {
            name: "pump_coherence/path_imbalance",
            ratio: t.pump_coherence / t.path_imbalance,
            required: margin,
        },
    ];
    CheckReport {
        passed: margins.iter().all(|m| m.normalized() >= 1.0),
        margins,
    }
}

/// Expected coincidence-to-accidental ratio for a window of `window` ps.
pub fn predict_car(
    true_coincidence_rate: f64,
    singles_a: f64,
    singles_b: f64,
    window: f64,
) -> Result<f64, DomainError> {
    if true_coincidence_rate == 0.0 {
        return Ok(1.0);
    }
    let accidental = singles_a * singles_b * window * 1e-12;
    if accidental == 0.0 {
        return Err(DomainError::InfiniteCar);
    }
    Ok((true_coincidence_rate + accidental) / accidental)
}

/// Signal and idler wavelengths for a pump detuned by `pump_detuning` nm from
/// degeneracy. Above degeneracy there is no phase matching.
pub fn tuning_split(pump_detuning: f64, degeneracy_wavelength: f64) -> Option<(f64, f64)> {
    if pump_detuning > 0.0 {
        return None;
    }
    let shift = TUNING_SLOPE * pump_detuning.abs();
    Some((degeneracy_wavelength - shift, degeneracy_wavelength + shift))
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64 as C;
    use proptest::prelude::*;

    fn measured_dip() -> HomDipParams {
        HomDipParams {
            amplitude: 100.0,
            visibility: 0.89,
            center_wavelength: 1566.0,
            fwhm: 10.7,
        }
    }

    #[test]
    fn hom_dip_examples() {
        let p = measured_dip();
        assert!((hom_dip_rate(0.0, &p) - 11.0).abs() < 1e-12);
        let zero = hom_first_zero(1566.0, 10.7);
        // λ²/(2cδλ) evaluated by hand in SI units
        let by_hand = 1566e-9f64.powi(2) / (2.0 * 2.9979e8 * 10.7e-9) * 1e12;
        assert!((zero - by_hand).abs() < 1e-12);
        assert!((zero - 0.382).abs() < 1e-3);
        assert!((hom_dip_rate(zero, &p) - 100.0).abs() < 1e-9);
        assert!((hom_dip_rate(10.0, &p) - 100.0).abs() / 100.0 < 0.015);
    }

    #[test]
    fn visibility_bound_examples() {
        let mut f = FacetParams::default();
        assert!((visibility_bound(&f).unwrap() - 0.905).abs() < 5e-4);
        f.eta_te = 1.0;
        f.eta_tm = 1.0;
        let direct = 1.0 / (1.0 + 0.0576 / 0.76 * 2.0);
        assert!((visibility_bound(&f).unwrap() - direct).abs() < 1e-12);
        assert!((direct - 0.8684).abs() < 1e-4);
        f.reflectivity = 0.0;
        assert_eq!(visibility_bound(&f).unwrap(), 1.0);
        f.reflectivity = 1.0;
        assert!(visibility_bound(&f).is_err());
    }

    #[test]
    fn coherence_time_examples() {
        let t = coherence_time(1566.0, 10.8).unwrap();
        assert!((t - 0.757).abs() < 1e-3);
        assert!((coherence_time(1566.0, 21.6).unwrap() - t / 2.0).abs() < 1e-12);
        assert!((coherence_time(1566.0, 21.6).unwrap() - 0.379).abs() < 1e-3);
        assert!((coherence_time(783.0, 10.8).unwrap() - t / 4.0).abs() < 1e-12);
        assert!((coherence_time(783.0, 10.8).unwrap() - 0.189).abs() < 1e-3);
        assert!(coherence_time(1566.0, 0.0).is_err());
    }

    /// Brute-force amplitude enumeration over the four arm combinations.
    fn franson_oracle(phase: f64, v: f64) -> [f64; 4] {
        let amp = |n_long: u32| C::from_polar(0.25, phase * n_long as f64);
        let ss = amp(0);
        let ll = amp(2);
        let sl = amp(1).norm_sqr();
        let ls = amp(1).norm_sqr();
        let coherent = (ss + ll).norm_sqr();
        let incoherent = ss.norm_sqr() + ll.norm_sqr();
        let center = v * coherent + (1.0 - v) * incoherent;
        [ls, center, sl, 1.0 - ls - sl - center]
    }

    #[test]
    fn franson_weights_examples() {
        let w = franson_peak_weights(0.0, 1.0);
        assert_eq!((w.left, w.center, w.right, w.discarded), (1.0 / 16.0, 0.25, 1.0 / 16.0, 0.625));
        let w = franson_peak_weights(PI / 2.0, 1.0);
        assert!(w.center.abs() < 1e-15);
        assert!((w.discarded - 7.0 / 8.0).abs() < 1e-15);
        for phi in [0.0, 0.3, 2.0] {
            let w = franson_peak_weights(phi, 0.0);
            assert_eq!((w.left, w.center, w.right, w.discarded), (1.0 / 16.0, 0.125, 1.0 / 16.0, 0.75));
        }
    }

    #[test]
    fn bell_examples() {
        let b = bell_from_visibility(0.956, 0.037);
        assert!((b.s_value - 2.704).abs() < 5e-4);
        assert!((b.sigma_s - 0.105).abs() < 1e-3);
        assert!((b.violation_sigmas.unwrap() - 6.7).abs() < 0.05);
        let b = bell_from_visibility(0.915, 0.036);
        assert!((b.s_value - 2.588).abs() < 5e-4);
        assert!((b.violation_sigmas.unwrap() - 5.8).abs() < 0.05);
        let b = bell_from_visibility(1.0 / SQRT_2, 0.0);
        assert!((b.s_value - 2.0).abs() < 1e-15);
        assert_eq!(b.violation_sigmas, None);
    }

    #[test]
    fn timescale_examples() {
        let mut t = TimescaleParams {
            photon_coherence: 0.7,
            detector_jitter: 200.0,
            path_imbalance: 2500.0,
            pump_coherence: 1e6,
        };
        assert!(timescale_check(&t, 10.0).passed);
        t.path_imbalance = 1000.0;
        let r = timescale_check(&t, 10.0);
        assert!(!r.passed);
        assert_eq!(r.margins[1].ratio, 5.0);
        t.path_imbalance = 2500.0;
        t.pump_coherence = 10_000.0;
        let r = timescale_check(&t, 10.0);
        assert!(!r.passed);
        assert_eq!(r.margins[2].ratio, 4.0);
        assert!(r.margins[2].normalized() < 1.0);
    }

    #[test]
    fn car_examples() {
        assert!((predict_car(1000.0, 1e5, 1e5, 500.0).unwrap() - 201.0).abs() < 1e-9);
        assert!((predict_car(1000.0, 1e5, 1e5, 250.0).unwrap() - 401.0).abs() < 1e-9);
        assert_eq!(predict_car(0.0, 3.0, 4.0, 1.0).unwrap(), 1.0);
        assert_eq!(predict_car(1.0, 0.0, 4.0, 1.0), Err(DomainError::InfiniteCar));
    }

    #[test]
    fn tuning_examples() {
        assert_eq!(tuning_split(0.0, 1566.0), Some((1566.0, 1566.0)));
        let (s, i) = tuning_split(-0.2, 1566.0).unwrap();
        assert!((s - 1466.0).abs() < 1e-9 && (i - 1666.0).abs() < 1e-9);
        assert_eq!(tuning_split(0.1, 1566.0), None);
    }

    proptest! {
        #[test]
        fn hom_dip_even_and_bounded(dt in -50.0..50.0f64, a in 0.0..1e4f64, v in 0.0..1.0f64, fwhm in 0.5..50.0f64) {
            let p = HomDipParams { amplitude: a, visibility: v, center_wavelength: 1566.0, fwhm };
            let y = hom_dip_rate(dt, &p);
            prop_assert!((y - hom_dip_rate(-dt, &p)).abs() <= 1e-12 * (1.0 + a));
            prop_assert!(y >= a * (1.0 - v) - 1e-9 * (1.0 + a));
            prop_assert!(y <= a * (1.0 + 0.2173 * v) + 1e-9 * (1.0 + a));
        }

        #[test]
        fn visibility_bound_monotone(r1 in 0.0..0.99f64, r2 in 0.0..0.99f64, e1 in 0.01..1.0f64, e2 in 0.01..1.0f64) {
            let f = |r: f64, e: f64| visibility_bound(&FacetParams { reflectivity: r, eta_te: e, eta_tm: e, roundtrip_delay: 1.0 }).unwrap();
            let (lo, hi) = if r1 < r2 { (r1, r2) } else { (r2, r1) };
            if hi - lo > 1e-6 {
                prop_assert!(f(hi, e1) < f(lo, e1));
            }
            let (elo, ehi) = if e1 < e2 { (e1, e2) } else { (e2, e1) };
            if ehi - elo > 1e-6 && r1 > 1e-3 {
                prop_assert!(f(r1, ehi) < f(r1, elo));
            }
            prop_assert_eq!(f(0.0, e1), 1.0);
        }

        #[test]
        fn franson_weights_match_amplitude_oracle(phi in -10.0..10.0f64, v in 0.0..1.0f64) {
            let w = franson_peak_weights(phi, v);
            let o = franson_oracle(phi, v);
            prop_assert!((w.left - o[0]).abs() < 1e-12);
            prop_assert!((w.center - o[1]).abs() < 1e-12);
            prop_assert!((w.right - o[2]).abs() < 1e-12);
            prop_assert!((w.discarded - o[3]).abs() < 1e-12);
            prop_assert!((w.left + w.center + w.right + w.discarded - 1.0).abs() < 1e-12);
            prop_assert!(w.center >= (1.0 - v) / 8.0 - 1e-15 && w.center <= (1.0 + v) / 8.0 + 1e-15);
            let shifted = franson_peak_weights(phi + PI, v);
            prop_assert!((shifted.center - w.center).abs() < 1e-12);
        }

        #[test]
        fn bell_is_linear(v in 0.0..1.0f64, alpha in 0.0..1.0f64) {
            let s = bell_from_visibility(v, 0.0).s_value;
            prop_assert!((bell_from_visibility(alpha * v, 0.0).s_value - alpha * s).abs() < 1e-12);
        }

        #[test]
        fn coherence_time_times_bandwidth_constant(l in 500.0..2000.0f64, d1 in 0.1..50.0f64, d2 in 0.1..50.0f64) {
            let a = coherence_time(l, d1).unwrap() * d1;
            let b = coherence_time(l, d2).unwrap() * d2;
            prop_assert!((a - b).abs() < 1e-12 * a);
        }

        #[test]
        fn car_monotone(t in 1.0..1e5f64, dt in 1.0..1e4f64, sa in 1.0..1e6f64, sb in 1.0..1e6f64, w in 10.0..1e4f64) {
            let c = predict_car(t, sa, sb, w).unwrap();
            prop_assert!(c >= 1.0);
            prop_assert!(predict_car(t + dt, sa, sb, w).unwrap() > c);
            prop_assert!(predict_car(t, sa, sb, w * 2.0).unwrap() < c);
        }
    }
}
