//! Seeded Monte Carlo generation of detection-event streams.
//!
//! Runs are split into fixed 10 ms chunks. Each chunk draws from its own
//! ChaCha8 stream (`seed`, stream id = kind·2³² + chunk), so the output only
//! depends on `(config, seed)`, never on the number of worker threads.
//! Pair emission is a homogeneous Poisson process sampled with exponential
//! inter-arrival times; detector jitter is Gaussian; dead time is
//! non-paralyzable and applied per channel after jitter.

use std::f64::consts::PI;
use std::fmt;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Exp, Normal, Poisson};
use rayon::prelude::*;
use thiserror::Error;

use crate::analytic::{
    coherence_time, franson_peak_weights, hom_phase_factor, sinc, timescale_check, CheckReport,
    DEFAULT_TIMESCALE_MARGIN,
};
use crate::model::{config_digest, validate, ExperimentConfig, FransonConfig, HomConfig, TimescaleParams};

/// Upper bound on the expected number of events in one stream.
pub const MAX_EXPECTED_EVENTS: f64 = 5.0e7;

const CHUNK_PS: u64 = 10_000_000_000;
const PS_PER_S: f64 = 1e12;

const KIND_PAIRS: u64 = 0;
const KIND_DARK_A: u64 = 1;
const KIND_DARK_B: u64 = 2;
const KIND_HOM: u64 = 3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("expected {expected:.3e} events exceeds the budget of {limit:.3e}")]
    Capacity { expected: f64, limit: f64 },
    #[error("invalid configuration: {}", .0.join("; "))]
    InvalidConfig(Vec<String>),
    #[error("{0}")]
    Degenerate(String),
}

#[derive(Debug, Error)]
pub enum EventIoError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("line {line}: expected header `channel,time_ps`")]
    Header { line: usize },
    #[error("line {line}: bad record: {reason}")]
    Record { line: usize, reason: String },
    #[error("line {line}: events not sorted by time")]
    Unsorted { line: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Channel {
    A,
    B,
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Channel::A => "A",
            Channel::B => "B",
        })
    }
}

/// One detector click. `time` is in ps since the start of the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Event {
    pub time: u64,
    pub channel: Channel,
}

/// Simulated time-to-digital converter output.
#[derive(Debug, Clone, PartialEq)]
pub struct EventStream {
    pub events: Vec<Event>,
    /// s
    pub duration: f64,
    pub seed: u64,
    pub config_digest: String,
}

impl EventStream {
    pub fn count(&self, channel: Channel) -> usize {
        self.events.iter().filter(|e| e.channel == channel).count()
    }

    pub fn is_sorted(&self) -> bool {
        self.events.windows(2).all(|w| w[0].time <= w[1].time)
    }

    /// Maps every time t to duration − t.
    pub fn time_reversed(&self) -> EventStream {
        let end = (self.duration * PS_PER_S).round() as u64;
        let mut events: Vec<Event> = self
            .events
            .iter()
            .rev()
            .map(|e| Event {
                time: end - e.time,
                channel: e.channel,
            })
            .collect();
        events.sort_unstable();
        EventStream {
            events,
            ..self.clone()
        }
    }

    /// Writes `channel,time_ps` CSV.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), EventIoError> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["channel", "time_ps"])?;
        for e in &self.events {
            wr.write_record([e.channel.to_string(), e.time.to_string()])?;
        }
        wr.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// Reads `channel,time_ps` CSV, rejecting unsorted input.
pub fn read_events_csv<R: Read>(r: R) -> Result<Vec<Event>, EventIoError> {
    let mut rd = csv::ReaderBuilder::new().has_headers(false).from_reader(r);
    let mut events = Vec::new();
    for (idx, rec) in rd.records().enumerate() {
        let rec = rec?;
        let line = idx + 1;
        if idx == 0 {
            if rec.len() != 2 || &rec[0] != "channel" || &rec[1] != "time_ps" {
                return Err(EventIoError::Header { line });
            }
            continue;
        }
        if rec.len() != 2 {
            return Err(EventIoError::Record {
                line,
                reason: format!("{} fields", rec.len()),
            });
        }
        let channel = match &rec[0] {
            "A" => Channel::A,
            "B" => Channel::B,
            other => {
                return Err(EventIoError::Record {
                    line,
                    reason: format!("unknown channel `{other}`"),
                })
            }
        };
        let time: u64 = rec[1].parse().map_err(|_| EventIoError::Record {
            line,
            reason: format!("bad time `{}`", &rec[1]),
        })?;
        if events.last().is_some_and(|p: &Event| p.time > time) {
            return Err(EventIoError::Unsorted { line });
        }
        events.push(Event { time, channel });
    }
    if events.is_empty() && rd.position().line() == 1 {
        return Err(EventIoError::Header { line: 1 });
    }
    Ok(events)
}

/// Coincidence counts at one setting of a scan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanPoint {
    /// HOM delay (ps) or Franson phase (rad).
    pub control: f64,
    pub coincidences: u64,
    pub singles_a: u64,
    pub singles_b: u64,
}

fn rng_for(seed: u64, kind: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((kind << 32) | index);
    rng
}

/// SplitMix64 finalizer, used to derive per-point seeds.
fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(index + 1));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Where each photon of a pair goes: `Some(extra delay in ps)` when it
/// reaches its detector, `None` when it leaves through an unmonitored port.
#[derive(Debug, Clone, Copy)]
struct Route {
    weight: f64,
    a: Option<f64>,
    b: Option<f64>,
}

impl Route {
    fn new(weight: f64, a: Option<f64>, b: Option<f64>) -> Self {
        Route { weight, a, b }
    }
}

/// A route with its click statistics, conditioned on at least one click.
#[derive(Debug, Clone, Copy)]
struct ClickRoute {
    /// Probability of this route among pairs producing a click.
    p: f64,
    p_both: f64,
    p_a_only: f64,
    delay_a: f64,
    delay_b: f64,
}

#[derive(Debug, Clone)]
struct PairModel {
    /// Emitted pairs per ps that produce at least one click.
    rate_per_ps: f64,
    routes: Vec<ClickRoute>,
    /// Mean clicks per generated pair.
    clicks_per_pair: f64,
}

impl PairModel {
    fn new(config: &ExperimentConfig, emitted_rate: f64, routes: Vec<Route>) -> Self {
        let (ea, eb) = (config.detector_a.efficiency, config.detector_b.efficiency);
        let total: f64 = routes.iter().map(|r| r.weight).sum();
        let mut click_routes = Vec::with_capacity(routes.len());
        let mut p_click = 0.0;
        let mut clicks = 0.0;
        for r in routes {
            let qa = if r.a.is_some() { ea } else { 0.0 };
            let qb = if r.b.is_some() { eb } else { 0.0 };
            let any = 1.0 - (1.0 - qa) * (1.0 - qb);
            let w = r.weight / total;
            p_click += w * any;
            clicks += w * (qa + qb);
            let (p_both, p_a_only) = if any > 0.0 {
                (qa * qb / any, qa * (1.0 - qb) / any)
            } else {
                (0.0, 0.0)
            };
            click_routes.push(ClickRoute {
                p: w * any,
                p_both,
                p_a_only,
                delay_a: r.a.unwrap_or(0.0),
                delay_b: r.b.unwrap_or(0.0),
            });
        }
        if p_click > 0.0 {
            for r in &mut click_routes {
                r.p /= p_click;
            }
        }
        PairModel {
            rate_per_ps: emitted_rate * p_click / PS_PER_S,
            routes: click_routes,
            clicks_per_pair: if p_click > 0.0 { clicks / p_click } else { 0.0 },
        }
    }

    fn pick(&self, u: f64) -> &ClickRoute {
        let mut acc = 0.0;
        for r in &self.routes {
            acc += r.p;
            if u < acc {
                return r;
            }
        }
        self.routes.last().unwrap()
    }
}

/// Direct/once-delayed facet classification used by the pair and HOM
/// experiments: relative weights 1, R²η_TE/(1−R), R²η_TM/(1−R).
fn facet_outcomes(config: &ExperimentConfig) -> Vec<Route> {
    let f = &config.facets;
    let d = f.roundtrip_delay;
    vec![
        Route::new(1.0, Some(0.0), Some(0.0)),
        Route::new(f.delayed_weight(f.eta_te), Some(d), Some(0.0)),
        Route::new(f.delayed_weight(f.eta_tm), Some(0.0), Some(d)),
    ]
}

fn check_capacity(config: &ExperimentConfig, model: &PairModel) -> Result<(), SimError> {
    let expected = config.duration
        * (model.rate_per_ps * PS_PER_S * model.clicks_per_pair
            + config.detector_a.dark_rate
            + config.detector_b.dark_rate);
    if expected > MAX_EXPECTED_EVENTS {
        return Err(SimError::Capacity {
            expected,
            limit: MAX_EXPECTED_EVENTS,
        });
    }
    Ok(())
}

fn push_if_inside(out: &mut Vec<Event>, t: f64, end: u64, channel: Channel) {
    let t = t.round();
    if t >= 0.0 && t <= end as f64 {
        out.push(Event {
            time: t as u64,
            channel,
        });
    }
}

fn simulate_chunk(
    config: &ExperimentConfig,
    model: &PairModel,
    seed: u64,
    chunk: u64,
    end: u64,
) -> Vec<Event> {
    let t0 = chunk * CHUNK_PS;
    let t1 = ((chunk + 1) * CHUNK_PS).min(end);
    let mut out = Vec::new();
    let jitter_a = Normal::new(0.0, config.detector_a.jitter_sigma()).unwrap();
    let jitter_b = Normal::new(0.0, config.detector_b.jitter_sigma()).unwrap();

    if model.rate_per_ps > 0.0 {
        let mut rng = rng_for(seed, KIND_PAIRS, chunk);
        let gap = Exp::new(model.rate_per_ps).unwrap();
        let mut t = t0 as f64;
        loop {
            t += gap.sample(&mut rng);
            if t >= t1 as f64 {
                break;
            }
            let route = model.pick(rng.random());
            let u: f64 = rng.random();
            let (hit_a, hit_b) = if u < route.p_both {
                (true, true)
            } else if u < route.p_both + route.p_a_only {
                (true, false)
            } else {
                (false, true)
            };
            let ja = jitter_a.sample(&mut rng);
            let jb = jitter_b.sample(&mut rng);
            if hit_a {
                push_if_inside(&mut out, t + route.delay_a + ja, end, Channel::A);
            }
            if hit_b {
                push_if_inside(&mut out, t + route.delay_b + jb, end, Channel::B);
            }
        }
    }

    for (kind, rate, channel) in [
        (KIND_DARK_A, config.detector_a.dark_rate, Channel::A),
        (KIND_DARK_B, config.detector_b.dark_rate, Channel::B),
    ] {
        if rate <= 0.0 {
            continue;
        }
        let mut rng = rng_for(seed, kind, chunk);
        let gap = Exp::new(rate / PS_PER_S).unwrap();
        let mut t = t0 as f64;
        loop {
            t += gap.sample(&mut rng);
            if t >= t1 as f64 {
                break;
            }
            push_if_inside(&mut out, t, end, channel);
        }
    }
    out
}

/// Non-paralyzable dead time per channel on a sorted event list.
pub fn apply_dead_time(events: &[Event], dead_a_ps: u64, dead_b_ps: u64) -> Vec<Event> {
    let mut last_a: Option<u64> = None;
    let mut last_b: Option<u64> = None;
    events
        .iter()
        .filter(|e| {
            let (last, dead) = match e.channel {
                Channel::A => (&mut last_a, dead_a_ps),
                Channel::B => (&mut last_b, dead_b_ps),
            };
            match *last {
                Some(prev) if e.time - prev < dead => false,
                _ => {
                    *last = Some(e.time);
                    true
                }
            }
        })
        .copied()
        .collect()
}

fn run_model(
    config: &ExperimentConfig,
    model: &PairModel,
    seed: u64,
    dead_time: bool,
) -> Result<EventStream, SimError> {
    let violations = validate(config);
    if !violations.is_empty() {
        return Err(SimError::InvalidConfig(violations));
    }
    check_capacity(config, model)?;
    let end = (config.duration * PS_PER_S).round() as u64;
    let n_chunks = end.div_ceil(CHUNK_PS).max(1);
    let mut events: Vec<Event> = (0..n_chunks)
        .into_par_iter()
        .map(|chunk| simulate_chunk(config, model, seed, chunk, end))
        .flatten()
        .collect();
    events.par_sort_unstable();
    if dead_time {
        let ns_to_ps = |ns: f64| (ns * 1e3).round() as u64;
        events = apply_dead_time(
            &events,
            ns_to_ps(config.detector_a.dead_time),
            ns_to_ps(config.detector_b.dead_time),
        );
    }
    Ok(EventStream {
        events,
        duration: config.duration,
        seed,
        config_digest: config_digest(config),
    })
}

/// Detection events of the deterministic-separation experiment: TE photons
/// go to channel A, TM photons to channel B.
pub fn simulate_pair_stream(config: &ExperimentConfig, seed: u64) -> Result<EventStream, SimError> {
    let model = PairModel::new(config, config.source.pair_rate, facet_outcomes(config));
    run_model(config, &model, seed, true)
}

/// As [`simulate_pair_stream`] but with the dead-time filter switched off.
pub fn simulate_pair_stream_without_dead_time(
    config: &ExperimentConfig,
    seed: u64,
) -> Result<EventStream, SimError> {
    let model = PairModel::new(config, config.source.pair_rate, facet_outcomes(config));
    run_model(config, &model, seed, false)
}

/// Acquisition time (s) needed to collect `pairs_per_point` pairs detected on
/// both channels.
pub fn hom_point_duration(config: &ExperimentConfig, pairs_per_point: u64) -> Result<f64, SimError> {
    let both = config.source.pair_rate
        * config.detector_a.efficiency
        * config.detector_b.efficiency;
    if both <= 0.0 {
        return Err(SimError::Degenerate(
            "HOM scan needs a non-zero rate of pairs detected on both channels".into(),
        ));
    }
    Ok(pairs_per_point as f64 / both)
}

/// Mean accidental coincidences per HOM scan point.
pub fn hom_accidental_mean(
    config: &ExperimentConfig,
    hom: &HomConfig,
    pairs_per_point: u64,
) -> Result<f64, SimError> {
    let t = hom_point_duration(config, pairs_per_point)?;
    let sa = config.source.pair_rate * config.detector_a.efficiency + config.detector_a.dark_rate;
    let sb = config.source.pair_rate * config.detector_b.efficiency + config.detector_b.dark_rate;
    Ok(sa * sb * hom.coincidence_window * 1e-12 * t)
}

fn binomial<R: Rng>(rng: &mut R, n: u64, p: f64) -> u64 {
    Binomial::new(n, p.clamp(0.0, 1.0)).unwrap().sample(rng)
}

fn poisson<R: Rng>(rng: &mut R, mean: f64) -> u64 {
    if mean <= 0.0 {
        0
    } else {
        Poisson::new(mean).unwrap().sample(rng) as u64
    }
}

/// Hong-Ou-Mandel delay scan. `pairs_per_point` pairs detected on both
/// detectors are sent through the beam splitter at each delay; pairs holding
/// a facet-delayed photon do not interfere.
pub fn simulate_hom_scan(
    config: &ExperimentConfig,
    hom: &HomConfig,
    pairs_per_point: u64,
    seed: u64,
) -> Result<Vec<ScanPoint>, SimError> {
    let mut violations = validate(config);
    violations.extend(hom.validate());
    if pairs_per_point == 0 {
        violations.push("pairs_per_point must be > 0".into());
    }
    if !violations.is_empty() {
        return Err(SimError::InvalidConfig(violations));
    }
    let t_point = hom_point_duration(config, pairs_per_point)?;
    let acc_mean = hom_accidental_mean(config, hom, pairs_per_point)?;
    let f = &config.facets;
    let p_direct = 1.0 / (1.0 + f.delayed_weight(f.eta_te) + f.delayed_weight(f.eta_tm));
    let k = hom_phase_factor(config.filter.center_wavelength) * config.filter.fwhm;
    let (da, db) = (&config.detector_a, &config.detector_b);
    let rate = config.source.pair_rate;
    let lone_a = t_point * (rate * da.efficiency * (1.0 - db.efficiency) + da.dark_rate);
    let lone_b = t_point * (rate * db.efficiency * (1.0 - da.efficiency) + db.dark_rate);

    Ok(hom
        .delays
        .par_iter()
        .enumerate()
        .map(|(i, &delay)| {
            let mut rng = rng_for(seed, KIND_HOM, i as u64);
            let n = pairs_per_point;
            let direct = binomial(&mut rng, n, p_direct);
            let p_split = 0.5 * (1.0 - hom.intrinsic_visibility * sinc(k * delay));
            let true_coinc = binomial(&mut rng, direct, p_split) + binomial(&mut rng, n - direct, 0.5);
            let bunched = n - true_coinc;
            let bunched_a = binomial(&mut rng, bunched, 0.5);
            let accidentals = poisson(&mut rng, acc_mean);
            ScanPoint {
                control: delay,
                coincidences: true_coinc + accidentals,
                singles_a: true_coinc + bunched_a + poisson(&mut rng, lone_a),
                singles_b: true_coinc + (bunched - bunched_a) + poisson(&mut rng, lone_b),
            }
        })
        .collect())
}

/// Timescales implied by a configuration and a Franson interferometer.
pub fn franson_timescales(config: &ExperimentConfig, franson: &FransonConfig) -> TimescaleParams {
    TimescaleParams {
        photon_coherence: coherence_time(config.filter.center_wavelength, config.filter.fwhm)
            .unwrap_or(f64::INFINITY),
        detector_jitter: config
            .detector_a
            .jitter_fwhm
            .max(config.detector_b.jitter_fwhm),
        path_imbalance: franson.path_imbalance,
        pump_coherence: franson.pump_coherence,
    }
}

#[derive(Debug, Clone)]
pub struct FransonScan {
    pub points: Vec<(f64, EventStream)>,
    /// Timescale separation at the default margin; a failed check is a
    /// warning, the scan still runs.
    pub timescales: CheckReport,
}

/// Franson phase scan. Each point covers the time needed to emit
/// `pairs_per_point` pairs into the interferometer.
pub fn simulate_franson_scan(
    config: &ExperimentConfig,
    franson: &FransonConfig,
    phases: &[f64],
    pairs_per_point: u64,
    seed: u64,
) -> Result<FransonScan, SimError> {
    let mut violations = validate(config);
    violations.extend(franson.validate());
    if pairs_per_point == 0 {
        violations.push("pairs_per_point must be > 0".into());
    }
    if phases.iter().any(|p| !p.is_finite()) {
        violations.push("phases must be finite".into());
    }
    if !violations.is_empty() {
        return Err(SimError::InvalidConfig(violations));
    }
    if config.source.pair_rate <= 0.0 {
        return Err(SimError::Degenerate("Franson scan needs pair_rate > 0".into()));
    }
    let timescales = timescale_check(&franson_timescales(config, franson), DEFAULT_TIMESCALE_MARGIN);
    let visibility =
        franson.intrinsic_visibility * (-franson.path_imbalance / franson.pump_coherence).exp();
    let mut point_config = config.clone();
    point_config.duration = pairs_per_point as f64 / config.source.pair_rate;
    let dt = franson.path_imbalance;

    let points = phases
        .iter()
        .enumerate()
        .map(|(i, &phase)| {
            let w = franson_peak_weights(phase, visibility);
            let kept = w.left + w.center + w.right;
            // each photon alone reaches its detector half the time, via either arm
            let lone = 0.5 - kept;
            // left: B earlier than A by Δt, i.e. the histogram peak at −Δt
            let model = PairModel::new(
                &point_config,
                config.source.pair_rate,
                vec![
                    Route::new(w.left, Some(dt), Some(0.0)),
                    Route::new(w.center, Some(0.0), Some(0.0)),
                    Route::new(w.right, Some(0.0), Some(dt)),
                    Route::new(lone / 2.0, Some(0.0), None),
                    Route::new(lone / 2.0, Some(dt), None),
                    Route::new(lone / 2.0, None, Some(0.0)),
                    Route::new(lone / 2.0, None, Some(dt)),
                    Route::new(kept, None, None),
                ],
            );
            run_model(&point_config, &model, mix_seed(seed, i as u64), true).map(|s| (phase, s))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(FransonScan { points, timescales })
}

/// `n` phases evenly spaced over one fringe period [0, π).
pub fn fringe_phases(n: usize) -> Vec<f64> {
    (0..n).map(|i| PI * i as f64 / n as f64).collect()
}
