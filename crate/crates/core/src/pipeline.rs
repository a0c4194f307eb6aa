//! End-to-end runs of the three experiments: simulate, histogram, extract
//! counts, fit. Each run also carries the closed-form expectation it should
//! agree with.

use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::analytic::{bell_from_visibility, predict_car, visibility_bound, BellResult, CheckReport};
use crate::fitting::{raw_and_net_visibility, Background, DataPoint, FitError, Visibilities, VisibilityModel};
use crate::mc::{
    hom_accidental_mean, simulate_franson_scan, simulate_hom_scan, simulate_pair_stream, EventStream,
    ScanPoint, SimError,
};
use crate::model::{DetectorParams, ExperimentConfig, FransonConfig, HomConfig};
use crate::tdc::{
    accidental_level, build_histogram, compute_car, flatness_test, franson_peak_counts, peak_window,
    CarResult, FlatnessTest, FransonPeaks, Histogram, TdcError, Window,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Tdc(#[from] TdcError),
}

fn input_rate(config: &ExperimentConfig, d: &DetectorParams) -> f64 {
    config.source.pair_rate * d.efficiency + d.dark_rate
}

/// Fraction of time a non-paralyzable detector fed at `rate` Hz is live.
fn live_fraction(rate: f64, dead_time_ns: f64) -> f64 {
    1.0 / (1.0 + rate * dead_time_ns * 1e-9)
}

/// Configured singles rates after dead time (Hz).
pub fn expected_singles(config: &ExperimentConfig) -> (f64, f64) {
    let ra = input_rate(config, &config.detector_a);
    let rb = input_rate(config, &config.detector_b);
    (
        ra * live_fraction(ra, config.detector_a.dead_time),
        rb * live_fraction(rb, config.detector_b.dead_time),
    )
}

/// Analytic CAR for the bins a histogram window selects.
///
/// True coincidences: pair rate × both efficiencies × the mass of the
/// t_B − t_A distribution (Gaussian jitter around 0 and ±the facet round-trip
/// delay, in the facet weights) inside the selected bins. Accidentals: product
/// of input rates × total width of the selected bins.
///
/// Dead time enters twice. The chance that both detectors are live multiplies
/// true and accidental rates alike and cancels. A photon whose partner also
/// clicks kills the other detector, so it cannot start an accidental at lags
/// shorter than the dead time; those accidentals are removed for the share of
/// the background lags that lie inside the dead time.
pub fn car_oracle(config: &ExperimentConfig, h: &Histogram, w: &Window) -> Result<f64, PipelineError> {
    let (lo, hi) = h.window_bins(w)?;
    let lo_edge = h.center(lo) - h.bin_width / 2.0;
    let hi_edge = h.center(hi) + h.bin_width / 2.0;
    let width = hi_edge - lo_edge;
    let (da, db) = (&config.detector_a, &config.detector_b);
    let sigma = da.jitter_sigma().hypot(db.jitter_sigma());
    let f = &config.facets;
    let (w_te, w_tm) = (f.delayed_weight(f.eta_te), f.delayed_weight(f.eta_tm));
    let norm = 1.0 + w_te + w_tm;
    let mass = |mu: f64| {
        if sigma == 0.0 {
            ((lo_edge <= mu) && (mu < hi_edge)) as u8 as f64
        } else {
            let n = Normal::new(mu, sigma).unwrap();
            n.cdf(hi_edge) - n.cdf(lo_edge)
        }
    };
    // a delayed TE photon arrives late on A, so t_B − t_A shifts negative
    let fraction = (mass(0.0) + w_te * mass(-f.roundtrip_delay) + w_tm * mass(f.roundtrip_delay)) / norm;
    let both = config.source.pair_rate * da.efficiency * db.efficiency;
    let true_rate = both * fraction;
    let (ra, rb) = (input_rate(config, da), input_rate(config, db));

    // background lags span from the padded peak edge out to the histogram range
    let bg_start = (w.width / 2.0 + 2.0 * w.width).min(h.center(h.counts.len() - 1));
    let bg_end = h.center(h.counts.len() - 1).max(bg_start + h.bin_width);
    let inside_dead = |dead_ns: f64| ((dead_ns * 1e3 - bg_start) / (bg_end - bg_start)).clamp(0.0, 1.0);
    // B after A: B was killed by A's partner; A after B: the converse
    let killed = 0.5 * both * (rb * inside_dead(db.dead_time) + ra * inside_dead(da.dead_time));
    let accidental_product = ra * rb - killed;
    Ok(predict_car(true_rate, accidental_product, 1.0, width).unwrap_or(f64::INFINITY))
}

#[derive(Debug, Clone)]
pub struct PairRun {
    pub stream: EventStream,
    pub histogram: Histogram,
    /// `None` when the histogram has no significant peak.
    pub window: Option<Window>,
    /// `None` when no peak or no background is available.
    pub car: Option<CarResult>,
    pub car_oracle: Option<f64>,
}

/// Pair-source coincidence measurement: stream, histogram, CAR and oracle.
pub fn run_pairs(config: &ExperimentConfig, seed: u64) -> Result<PairRun, PipelineError> {
    let stream = simulate_pair_stream(config, seed)?;
    let histogram = build_histogram(&stream, config.histogram_bin, config.histogram_range)?;
    let window = match peak_window(&histogram) {
        Ok(w) => Some(w),
        Err(TdcError::NoPeak) => None,
        Err(e) => return Err(e.into()),
    };
    let (car, car_oracle) = match window {
        Some(w) => {
            let car = match compute_car(&histogram, &w) {
                Ok(c) => Some(c),
                Err(TdcError::NoBackground | TdcError::OutOfRange(_)) => None,
                Err(e) => return Err(e.into()),
            };
            (car, Some(car_oracle(config, &histogram, &w)?))
        }
        None => (None, None),
    };
    Ok(PairRun {
        stream,
        histogram,
        window,
        car,
        car_oracle,
    })
}

#[derive(Debug, Clone)]
pub struct HomRun {
    pub points: Vec<ScanPoint>,
    /// Expected accidental coincidences per point.
    pub accidentals: f64,
    /// Facet visibility ceiling for the configured facets.
    pub visibility_bound: f64,
}

impl HomRun {
    pub fn data(&self) -> Vec<DataPoint> {
        self.points
            .iter()
            .map(|p| DataPoint::new(p.control, p.coincidences as f64))
            .collect()
    }

    /// Raw and accidental-subtracted fits of the dip.
    pub fn fit(&self, config: &ExperimentConfig) -> Result<Visibilities, FitError> {
        raw_and_net_visibility(
            &self.data(),
            Background {
                value: self.accidentals,
                sigma: 0.0,
            },
            VisibilityModel::Hom {
                center_wavelength: config.filter.center_wavelength,
                fwhm_hint: Some(config.filter.fwhm),
            },
        )
    }
}

pub fn run_hom(
    config: &ExperimentConfig,
    hom: &HomConfig,
    pairs_per_point: u64,
    seed: u64,
) -> Result<HomRun, PipelineError> {
    let points = simulate_hom_scan(config, hom, pairs_per_point, seed)?;
    Ok(HomRun {
        points,
        accidentals: hom_accidental_mean(config, hom, pairs_per_point)?,
        visibility_bound: visibility_bound(&config.facets).map_err(|e| SimError::Degenerate(e.to_string()))?,
    })
}

#[derive(Debug, Clone)]
pub struct FransonRow {
    pub phase: f64,
    pub peaks: FransonPeaks,
    /// Accidentals expected in one peak window, from the off-peak floor.
    pub background: f64,
    pub background_sigma: f64,
}

#[derive(Debug, Clone)]
pub struct FransonRun {
    pub rows: Vec<FransonRow>,
    pub timescales: CheckReport,
    /// Chi-square flatness of left + right satellite counts across phases.
    pub satellite_flatness: FlatnessTest,
    pub window: f64,
}

#[derive(Debug, Clone)]
pub struct FransonFit {
    pub visibilities: Visibilities,
    /// From the net visibility.
    pub bell: BellResult,
    pub bell_raw: BellResult,
}

impl FransonRun {
    pub fn center_data(&self) -> Vec<DataPoint> {
        self.rows
            .iter()
            .map(|r| DataPoint::new(r.phase, r.peaks.center.counts as f64))
            .collect()
    }

    pub fn mean_background(&self) -> Background {
        let n = self.rows.len().max(1) as f64;
        Background {
            value: self.rows.iter().map(|r| r.background).sum::<f64>() / n,
            sigma: self.rows.iter().map(|r| r.background_sigma.powi(2)).sum::<f64>().sqrt() / n,
        }
    }

    pub fn fit(&self) -> Result<FransonFit, FitError> {
        let visibilities = raw_and_net_visibility(&self.center_data(), self.mean_background(), VisibilityModel::Fringe)?;
        let (v, s) = visibilities.net_visibility();
        let (vr, sr) = visibilities.raw_visibility();
        Ok(FransonFit {
            bell: bell_from_visibility(v, s),
            bell_raw: bell_from_visibility(vr, sr),
            visibilities,
        })
    }
}

/// Franson phase scan reduced to per-phase peak counts. `window` is the
/// width (ps) of each of the three peak windows.
pub fn run_franson(
    config: &ExperimentConfig,
    franson: &FransonConfig,
    phases: &[f64],
    pairs_per_point: u64,
    seed: u64,
    window: f64,
) -> Result<FransonRun, PipelineError> {
    let scan = simulate_franson_scan(config, franson, phases, pairs_per_point, seed)?;
    let dt = franson.path_imbalance;
    let mut rows = Vec::with_capacity(scan.points.len());
    for (phase, stream) in &scan.points {
        let h = build_histogram(stream, config.histogram_bin, config.histogram_range)?;
        let peaks = franson_peak_counts(&h, dt, window)?;
        let guard = 3.0 * window;
        let level = accidental_level(
            &h,
            &[Window::new(-dt, guard), Window::new(0.0, guard), Window::new(dt, guard)],
        )?;
        let (lo, hi) = h.window_bins(&Window::new(0.0, window))?;
        let n_bins = (hi - lo + 1) as f64;
        rows.push(FransonRow {
            phase: *phase,
            peaks,
            background: level.per_bin * n_bins,
            background_sigma: level.sigma * n_bins,
        });
    }
    let satellites: Vec<u64> = rows.iter().map(|r| r.peaks.left.counts + r.peaks.right.counts).collect();
    Ok(FransonRun {
        satellite_flatness: flatness_test(&satellites),
        rows,
        timescales: scan.timescales,
        window,
    })
}
