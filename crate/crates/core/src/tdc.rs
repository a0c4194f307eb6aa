//! Coincidence histograms and the statistics extracted from them: peak
//! location and FWHM, coincidence-to-accidental ratio, the three Franson
//! peaks and the flat accidental floor.

use std::io::{Read, Write};

use rayon::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

use crate::mc::{Channel, EventStream};

/// One-sided Gaussian tail probability beyond 5σ.
pub const P_VALUE_5_SIGMA: f64 = 2.866_515_718_791_939e-7;

const A_CHUNK: usize = 1 << 15;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TdcError {
    #[error("event stream is not sorted by time")]
    UnsortedStream,
    #[error("invalid histogram parameters: {0}")]
    InvalidParameters(String),
    #[error("no significant peak above the background floor")]
    NoPeak,
    #[error("background windows hold no counts")]
    NoBackground,
    #[error("window does not fit inside the histogram: {0}")]
    OutOfRange(String),
    #[error("peak windows overlap: width {window} ps >= spacing {delta_t} ps")]
    OverlappingWindows { window: f64, delta_t: f64 },
    #[error("only {available} background bins left, need at least {required}")]
    InsufficientBackground { available: usize, required: usize },
}

#[derive(Debug, Error)]
pub enum HistogramIoError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("line {line}: {reason}")]
    Format { line: usize, reason: String },
}

/// Binned counts of t_B − t_A. Bin `i` is centered on `origin + i·bin_width`.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    /// ps
    pub bin_width: f64,
    /// Center of bin 0 (ps).
    pub origin: f64,
    pub counts: Vec<u64>,
    /// Number of A-B pairings that fell inside the histogram range.
    pub total_pairs_considered: u64,
}

/// A time window (ps).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    pub center: f64,
    pub width: f64,
}

impl Window {
    pub fn new(center: f64, width: f64) -> Self {
        Window { center, width }
    }

    fn contains(&self, t: f64) -> bool {
        (t - self.center).abs() <= self.width / 2.0
    }
}

impl Histogram {
    pub fn center(&self, i: usize) -> f64 {
        self.origin + i as f64 * self.bin_width
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Index of the bin containing `t`, if any.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let i = ((t - self.origin) / self.bin_width).round();
        (i >= 0.0 && (i as usize) < self.counts.len()).then_some(i as usize)
    }

    /// Inclusive bin range whose centers fall inside `w`. A window narrower
    /// than one bin still selects the bin holding its center.
    pub fn window_bins(&self, w: &Window) -> Result<(usize, usize), TdcError> {
        let lo = ((w.center - w.width / 2.0 - self.origin) / self.bin_width - 1e-9).ceil();
        let hi = ((w.center + w.width / 2.0 - self.origin) / self.bin_width + 1e-9).floor();
        let (lo, hi) = if hi < lo {
            let c = ((w.center - self.origin) / self.bin_width).round();
            (c, c)
        } else {
            (lo, hi)
        };
        if lo < 0.0 || hi >= self.counts.len() as f64 {
            return Err(TdcError::OutOfRange(format!(
                "[{}, {}] ps",
                w.center - w.width / 2.0,
                w.center + w.width / 2.0
            )));
        }
        Ok((lo as usize, hi as usize))
    }

    pub fn window_sum(&self, w: &Window) -> Result<u64, TdcError> {
        let (lo, hi) = self.window_bins(w)?;
        Ok(self.counts[lo..=hi].iter().sum())
    }

    /// Per-bin addition of a histogram with identical binning.
    pub fn merge(&mut self, other: &Histogram) -> Result<(), TdcError> {
        if other.bin_width != self.bin_width
            || other.origin != self.origin
            || other.counts.len() != self.counts.len()
        {
            return Err(TdcError::InvalidParameters("binning differs".into()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.total_pairs_considered += other.total_pairs_considered;
        Ok(())
    }

    /// Writes `bin_center_ps,counts` CSV.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), HistogramIoError> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["bin_center_ps", "counts"])?;
        for (i, c) in self.counts.iter().enumerate() {
            wr.write_record([self.center(i).to_string(), c.to_string()])?;
        }
        wr.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// Reads `bin_center_ps,counts` CSV. Bin centers must increase with a
/// constant step.
pub fn read_histogram_csv<R: Read>(r: R) -> Result<Histogram, HistogramIoError> {
    let mut rd = csv::ReaderBuilder::new().has_headers(false).from_reader(r);
    let mut centers = Vec::new();
    let mut counts = Vec::new();
    for (idx, rec) in rd.records().enumerate() {
        let rec = rec?;
        let line = idx + 1;
        let fmt_err = |reason: String| HistogramIoError::Format { line, reason };
        if idx == 0 {
            if rec.len() != 2 || &rec[0] != "bin_center_ps" || &rec[1] != "counts" {
                return Err(fmt_err("expected header `bin_center_ps,counts`".into()));
            }
            continue;
        }
        if rec.len() != 2 {
            return Err(fmt_err(format!("{} fields", rec.len())));
        }
        let c: f64 = rec[0].parse().map_err(|_| fmt_err(format!("bad center `{}`", &rec[0])))?;
        let n: u64 = rec[1].parse().map_err(|_| fmt_err(format!("bad count `{}`", &rec[1])))?;
        centers.push(c);
        counts.push(n);
    }
    if centers.len() < 2 {
        return Err(HistogramIoError::Format {
            line: centers.len() + 1,
            reason: "need at least two bins".into(),
        });
    }
    let step = centers[1] - centers[0];
    if !(step > 0.0) {
        return Err(HistogramIoError::Format {
            line: 3,
            reason: "bin centers must increase".into(),
        });
    }
    for (i, w) in centers.windows(2).enumerate() {
        if ((w[1] - w[0]) - step).abs() > 1e-9 * step.max(1.0) {
            return Err(HistogramIoError::Format {
                line: i + 3,
                reason: "bin step is not constant".into(),
            });
        }
    }
    let total = counts.iter().sum();
    Ok(Histogram {
        bin_width: step,
        origin: centers[0],
        counts,
        total_pairs_considered: total,
    })
}

/// Full cross-correlation histogram of t_B − t_A over |Δ| ≤ `range`.
///
/// Bins are centered on multiples of `bin`, so bin k covers
/// [(k − ½)·bin, (k + ½)·bin).
pub fn build_histogram(stream: &EventStream, bin: f64, range: f64) -> Result<Histogram, TdcError> {
    if !(bin > 0.0) || !(range >= 10.0 * bin) {
        return Err(TdcError::InvalidParameters(format!(
            "bin {bin} ps, range {range} ps (need bin > 0 and range >= 10 bins)"
        )));
    }
    if !stream.is_sorted() {
        return Err(TdcError::UnsortedStream);
    }
    let half = (range / bin).floor() as i64;
    let n_bins = (2 * half + 1) as usize;
    let times = |ch: Channel| -> Vec<i64> {
        stream
            .events
            .iter()
            .filter(|e| e.channel == ch)
            .map(|e| e.time as i64)
            .collect()
    };
    let (ta, tb) = (times(Channel::A), times(Channel::B));
    let span = range.floor() as i64;

    let (counts, considered) = ta
        .par_chunks(A_CHUNK)
        .map(|chunk| {
            let mut counts = vec![0u64; n_bins];
            let mut considered = 0u64;
            let mut start = tb.partition_point(|&t| t < chunk[0] - span);
            for &t_a in chunk {
                while start < tb.len() && tb[start] < t_a - span {
                    start += 1;
                }
                for &t_b in &tb[start..] {
                    let d = t_b - t_a;
                    if d > span {
                        break;
                    }
                    let k = (d as f64 / bin).round() as i64;
                    if k.abs() <= half {
                        counts[(k + half) as usize] += 1;
                        considered += 1;
                    }
                }
            }
            (counts, considered)
        })
        .reduce(
            || (vec![0u64; n_bins], 0),
            |(mut a, na), (b, nb)| {
                for (x, y) in a.iter_mut().zip(&b) {
                    *x += y;
                }
                (a, na + nb)
            },
        );

    Ok(Histogram {
        bin_width: bin,
        origin: -(half as f64) * bin,
        counts,
        total_pairs_considered: considered,
    })
}

fn median(values: &[u64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_unstable();
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2] as f64
    } else {
        (v[n / 2 - 1] as f64 + v[n / 2] as f64) / 2.0
    }
}

/// Locates the dominant peak and its FWHM above the median floor, with
/// linear interpolation between bins for the half-maximum crossings.
pub fn peak_window(h: &Histogram) -> Result<Window, TdcError> {
    if h.counts.is_empty() {
        return Err(TdcError::NoPeak);
    }
    let floor = median(&h.counts);
    let (imax, &max) = h
        .counts
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .unwrap();
    let peak = max as f64;
    if peak <= floor || peak < floor + 5.0 * floor.sqrt() {
        return Err(TdcError::NoPeak);
    }
    let half = floor + (peak - floor) / 2.0;
    let c = |i: usize| h.counts[i] as f64;

    let mut lo = imax;
    while lo > 0 && c(lo - 1) > half {
        lo -= 1;
    }
    let left = if lo == 0 {
        h.center(0) - h.bin_width / 2.0
    } else {
        h.center(lo - 1) + (half - c(lo - 1)) / (c(lo) - c(lo - 1)) * h.bin_width
    };
    let mut hi = imax;
    while hi + 1 < h.counts.len() && c(hi + 1) > half {
        hi += 1;
    }
    let right = if hi + 1 == h.counts.len() {
        h.center(hi) + h.bin_width / 2.0
    } else {
        h.center(hi) + (c(hi) - half) / (c(hi) - c(hi + 1)) * h.bin_width
    };

    let (mut wsum, mut tsum) = (0.0, 0.0);
    for i in lo..=hi {
        let w = c(i) - floor;
        wsum += w;
        tsum += w * h.center(i);
    }
    Ok(Window {
        center: tsum / wsum,
        width: right - left,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CarResult {
    pub car: f64,
    pub sigma: f64,
    pub peak_counts: u64,
    /// Mean counts per background window.
    pub background_counts: f64,
    pub background_windows: usize,
}

/// Coincidence-to-accidental ratio: counts inside `w` over the mean of all
/// equal-width windows lying outside `w` padded by 2·width on each side.
pub fn compute_car(h: &Histogram, w: &Window) -> Result<CarResult, TdcError> {
    let (lo, hi) = h.window_bins(w)?;
    let n = hi - lo + 1;
    let pad = (2.0 * w.width / h.bin_width).ceil() as usize;
    let peak_counts: u64 = h.counts[lo..=hi].iter().sum();

    let mut sums = Vec::new();
    if lo >= pad {
        let mut end = lo - pad;
        while end >= n {
            sums.push(h.counts[end - n..end].iter().sum::<u64>());
            end -= n;
        }
    }
    let mut start = hi + 1 + pad;
    while start + n <= h.counts.len() {
        sums.push(h.counts[start..start + n].iter().sum::<u64>());
        start += n;
    }
    if sums.is_empty() {
        return Err(TdcError::OutOfRange(
            "no background window fits outside the padded peak".into(),
        ));
    }
    let background_total: u64 = sums.iter().sum();
    if background_total == 0 {
        return Err(TdcError::NoBackground);
    }
    let background_counts = background_total as f64 / sums.len() as f64;
    let car = peak_counts as f64 / background_counts;
    let sigma = car * (1.0 / (peak_counts.max(1)) as f64 + 1.0 / background_total as f64).sqrt();
    Ok(CarResult {
        car,
        sigma,
        peak_counts,
        background_counts,
        background_windows: sums.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakCount {
    pub counts: u64,
    pub sigma: f64,
}

impl PeakCount {
    fn new(counts: u64) -> Self {
        PeakCount {
            counts,
            sigma: (counts as f64).sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FransonPeaks {
    pub left: PeakCount,
    pub center: PeakCount,
    pub right: PeakCount,
}

/// Sums of the three windows at −Δt, 0 and +Δt.
pub fn franson_peak_counts(h: &Histogram, delta_t: f64, window: f64) -> Result<FransonPeaks, TdcError> {
    if window >= delta_t {
        return Err(TdcError::OverlappingWindows { window, delta_t });
    }
    let sum = |c: f64| h.window_sum(&Window::new(c, window)).map(PeakCount::new);
    Ok(FransonPeaks {
        left: sum(-delta_t)?,
        center: sum(0.0)?,
        right: sum(delta_t)?,
    })
}

/// Accidental floor in counts per bin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackgroundLevel {
    pub per_bin: f64,
    /// Standard error of `per_bin`.
    pub sigma: f64,
    pub bins: usize,
}

pub const MIN_BACKGROUND_BINS: usize = 20;

/// Mean and standard error of the counts per bin outside every exclusion.
pub fn accidental_level(h: &Histogram, exclusions: &[Window]) -> Result<BackgroundLevel, TdcError> {
    let kept: Vec<f64> = h
        .counts
        .iter()
        .enumerate()
        .filter(|(i, _)| !exclusions.iter().any(|w| w.contains(h.center(*i))))
        .map(|(_, &c)| c as f64)
        .collect();
    if kept.len() < MIN_BACKGROUND_BINS {
        return Err(TdcError::InsufficientBackground {
            available: kept.len(),
            required: MIN_BACKGROUND_BINS,
        });
    }
    let n = kept.len() as f64;
    let mean = kept.iter().sum::<f64>() / n;
    let var = kept.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(BackgroundLevel {
        per_bin: mean,
        sigma: (var / n).sqrt(),
        bins: kept.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlatnessTest {
    pub chi2: f64,
    pub dof: usize,
    pub p_value: f64,
    /// p-value at or above the one-sided 5σ tail.
    pub passed: bool,
}

/// Pearson chi-square of counts against their common mean.
pub fn flatness_test(counts: &[u64]) -> FlatnessTest {
    let n = counts.len();
    let mean = counts.iter().sum::<u64>() as f64 / n.max(1) as f64;
    if n < 2 || mean == 0.0 {
        return FlatnessTest {
            chi2: 0.0,
            dof: n.saturating_sub(1),
            p_value: 1.0,
            passed: true,
        };
    }
    let chi2 = counts.iter().map(|&c| (c as f64 - mean).powi(2) / mean).sum::<f64>();
    let dof = n - 1;
    let p_value = ChiSquared::new(dof as f64).unwrap().sf(chi2);
    FlatnessTest {
        chi2,
        dof,
        p_value,
        passed: p_value >= P_VALUE_5_SIGMA,
    }
}
