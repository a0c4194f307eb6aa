//! Weighted nonlinear least squares for the HOM dip and the two-photon
//! fringe.
//!
//! The minimizer is a Levenberg–Marquardt damped Gauss–Newton iteration with
//! analytic Jacobians: damping starts at 1e-3 and scales the diagonal of
//! JᵀJ, it is multiplied by 10 after a rejected step and divided by 10 after
//! an accepted one. Iteration stops when every parameter step is below 1e-8
//! relative, when an accepted step changes χ² by less than 1e-12 relative, or
//! fails after 200 iterations.
//!
//! Reported uncertainties are 1σ values from the unscaled covariance
//! (JᵀWJ)⁻¹ evaluated in the natural parameters at the optimum.

use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::analytic::{hom_phase_factor, sinc, sinc_derivative};

pub const MAX_ITERATIONS: usize = 200;
pub const STEP_TOLERANCE: f64 = 1e-8;
pub const CHI2_TOLERANCE: f64 = 1e-12;
pub const INITIAL_DAMPING: f64 = 1e-3;

/// sinc(x) = ½ at this x.
const SINC_HALF: f64 = 1.895_494_267_033_981;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DataPoint {
    pub x: f64,
    pub y: f64,
    pub sigma: f64,
}

impl DataPoint {
    /// Counting-statistics error √y with a floor of one count.
    pub fn new(x: f64, y: f64) -> Self {
        DataPoint {
            x,
            y,
            sigma: y.max(0.0).sqrt().max(1.0),
        }
    }

    pub fn with_sigma(x: f64, y: f64, sigma: f64) -> Self {
        DataPoint { x, y, sigma }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub names: Vec<&'static str>,
    pub values: Vec<f64>,
    pub covariance: DMatrix<f64>,
    pub chi2: f64,
    pub dof: usize,
    pub converged: bool,
    pub iterations: usize,
}

impl FitResult {
    fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| *n == name)
    }

    pub fn value(&self, name: &str) -> Option<f64> {
        self.index(name).map(|i| self.values[i])
    }

    pub fn sigma(&self, name: &str) -> Option<f64> {
        self.index(name).map(|i| self.covariance[(i, i)].max(0.0).sqrt())
    }

    pub fn reduced_chi2(&self) -> f64 {
        if self.dof == 0 {
            f64::NAN
        } else {
            self.chi2 / self.dof as f64
        }
    }

    /// Human-readable report block.
    pub fn report_text(&self) -> String {
        let mut s = String::new();
        for (i, name) in self.names.iter().enumerate() {
            writeln!(
                s,
                "  {name:<13} = {:.6} ± {:.6} (1σ)",
                self.values[i],
                self.covariance[(i, i)].max(0.0).sqrt()
            )
            .unwrap();
        }
        writeln!(s, "  chi2/dof      = {:.4}/{}", self.chi2, self.dof).unwrap();
        if !self.converged {
            writeln!(s, "  (not converged after {} iterations)", self.iterations).unwrap();
        }
        s
    }

    /// `parameter,value,sigma` rows followed by a `chi2/dof,<chi2>,<dof>` row.
    pub fn report_csv(&self) -> String {
        let mut s = String::from("parameter,value,sigma\n");
        for (i, name) in self.names.iter().enumerate() {
            writeln!(
                s,
                "{name},{},{}",
                self.values[i],
                self.covariance[(i, i)].max(0.0).sqrt()
            )
            .unwrap();
        }
        writeln!(s, "chi2/dof,{},{}", self.chi2, self.dof).unwrap();
        s
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("fit did not converge after {} iterations", .best.iterations)]
    NoConvergence { best: Box<FitResult> },
    #[error("degenerate data: {0}")]
    DegenerateData(String),
}

/// A model y = f(x; p) with an analytic gradient in its natural parameters.
pub trait FitModel {
    fn names(&self) -> Vec<&'static str>;
    fn value(&self, x: f64, p: &[f64]) -> f64;
    fn gradient(&self, x: f64, p: &[f64], out: &mut [f64]);
}

/// A(1 − V·sinc(2π·δt·δλ·c/λ²)) over (A, V, δλ).
#[derive(Debug, Clone, Copy)]
pub struct HomModel {
    pub center_wavelength: f64,
}

impl FitModel for HomModel {
    fn names(&self) -> Vec<&'static str> {
        vec!["amplitude", "visibility", "fwhm"]
    }

    fn value(&self, x: f64, p: &[f64]) -> f64 {
        let k = hom_phase_factor(self.center_wavelength);
        p[0] * (1.0 - p[1] * sinc(k * x * p[2]))
    }

    fn gradient(&self, x: f64, p: &[f64], out: &mut [f64]) {
        let k = hom_phase_factor(self.center_wavelength);
        let arg = k * x * p[2];
        let s = sinc(arg);
        out[0] = 1.0 - p[1] * s;
        out[1] = -p[0] * s;
        out[2] = -p[0] * p[1] * sinc_derivative(arg) * k * x;
    }
}

/// C(1 + V·cos(2φ + φ₀)) over (C, V, φ₀).
#[derive(Debug, Clone, Copy)]
pub struct FringeModel;

impl FitModel for FringeModel {
    fn names(&self) -> Vec<&'static str> {
        vec!["amplitude", "visibility", "phase_offset"]
    }

    fn value(&self, x: f64, p: &[f64]) -> f64 {
        p[0] * (1.0 + p[1] * (2.0 * x + p[2]).cos())
    }

    fn gradient(&self, x: f64, p: &[f64], out: &mut [f64]) {
        let (s, c) = (2.0 * x + p[2]).sin_cos();
        out[0] = 1.0 + p[1] * c;
        out[1] = p[0] * c;
        out[2] = -p[0] * p[1] * s;
    }
}

/// Per-parameter map from the unconstrained space the minimizer walks in.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Transform {
    Free,
    /// Logistic map onto (0, 1).
    Unit,
}

impl Transform {
    fn to_natural(self, q: f64) -> f64 {
        match self {
            Transform::Free => q,
            Transform::Unit => 1.0 / (1.0 + (-q).exp()),
        }
    }

    fn derivative(self, q: f64) -> f64 {
        match self {
            Transform::Free => 1.0,
            Transform::Unit => {
                let v = self.to_natural(q);
                v * (1.0 - v)
            }
        }
    }

    fn to_internal(self, p: f64) -> f64 {
        match self {
            Transform::Free => p,
            Transform::Unit => {
                let v = p.clamp(1e-6, 1.0 - 1e-6);
                (v / (1.0 - v)).ln()
            }
        }
    }
}

struct Problem<'a, M: FitModel> {
    model: &'a M,
    points: &'a [DataPoint],
    transforms: Vec<Transform>,
}

impl<M: FitModel> Problem<'_, M> {
    fn natural(&self, q: &[f64]) -> Vec<f64> {
        q.iter().zip(&self.transforms).map(|(&v, t)| t.to_natural(v)).collect()
    }

    fn chi2(&self, q: &[f64]) -> f64 {
        let p = self.natural(q);
        self.points
            .iter()
            .map(|d| ((d.y - self.model.value(d.x, &p)) / d.sigma).powi(2))
            .sum()
    }

    /// Weighted residuals and the Jacobian in internal (`internal = true`)
    /// or natural parameters.
    fn linearize(&self, q: &[f64], internal: bool) -> (DVector<f64>, DMatrix<f64>) {
        let p = self.natural(q);
        let n = q.len();
        let mut r = DVector::zeros(self.points.len());
        let mut jac = DMatrix::zeros(self.points.len(), n);
        let mut g = vec![0.0; n];
        for (i, d) in self.points.iter().enumerate() {
            r[i] = (d.y - self.model.value(d.x, &p)) / d.sigma;
            self.model.gradient(d.x, &p, &mut g);
            for j in 0..n {
                let scale = if internal { self.transforms[j].derivative(q[j]) } else { 1.0 };
                jac[(i, j)] = g[j] * scale / d.sigma;
            }
        }
        (r, jac)
    }
}

fn minimize<M: FitModel>(problem: &Problem<'_, M>, start: Vec<f64>) -> Result<FitResult, FitError> {
    let n = start.len();
    let dof = problem.points.len().saturating_sub(n);
    let mut q = start;
    let mut chi2 = problem.chi2(&q);
    if !chi2.is_finite() {
        return Err(FitError::DegenerateData("non-finite residuals at the start point".into()));
    }
    let mut lambda = INITIAL_DAMPING;
    let mut converged = false;
    let mut iterations = 0;

    'outer: while iterations < MAX_ITERATIONS {
        iterations += 1;
        let (r, jac) = problem.linearize(&q, true);
        let jtj = jac.transpose() * &jac;
        let grad = jac.transpose() * &r;
        loop {
            let mut a = jtj.clone();
            for j in 0..n {
                a[(j, j)] += lambda * jtj[(j, j)].max(1e-12);
            }
            let step = a.lu().solve(&grad);
            let Some(step) = step.filter(|s| s.iter().all(|v| v.is_finite())) else {
                lambda *= 10.0;
                if lambda > 1e16 {
                    converged = true;
                    break 'outer;
                }
                continue;
            };
            let trial: Vec<f64> = q.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            let trial_chi2 = problem.chi2(&trial);
            if trial_chi2.is_finite() && trial_chi2 <= chi2 {
                let small_step = q
                    .iter()
                    .zip(step.iter())
                    .all(|(a, b)| b.abs() <= STEP_TOLERANCE * (a.abs() + STEP_TOLERANCE));
                let small_change = chi2 - trial_chi2 <= CHI2_TOLERANCE * chi2 && chi2 > 0.0;
                q = trial;
                chi2 = trial_chi2;
                lambda = (lambda / 10.0).max(1e-12);
                if small_step || small_change || chi2 == 0.0 {
                    converged = true;
                    break 'outer;
                }
                break;
            }
            lambda *= 10.0;
            if lambda > 1e16 {
                // no downhill direction left at machine precision
                converged = true;
                break 'outer;
            }
        }
    }

    let (_, jac) = problem.linearize(&q, false);
    let fisher = jac.transpose() * &jac;
    let covariance = fisher.clone().try_inverse().ok_or_else(|| {
        FitError::DegenerateData("singular information matrix at the optimum".into())
    })?;
    let result = FitResult {
        names: problem.model.names(),
        values: problem.natural(&q),
        covariance,
        chi2,
        dof,
        converged,
        iterations,
    };
    if converged {
        Ok(result)
    } else {
        Err(FitError::NoConvergence {
            best: Box::new(result),
        })
    }
}

fn check_points(points: &[DataPoint], min: usize) -> Result<(), FitError> {
    if points.len() < min {
        return Err(FitError::DegenerateData(format!(
            "{} points, need at least {min}",
            points.len()
        )));
    }
    if points.iter().any(|p| !(p.sigma > 0.0) || !p.x.is_finite() || !p.y.is_finite()) {
        return Err(FitError::DegenerateData("non-finite value or sigma <= 0".into()));
    }
    let x0 = points[0].x;
    if points.iter().all(|p| p.x == x0) {
        return Err(FitError::DegenerateData("all x values identical".into()));
    }
    if points.iter().all(|p| p.y == 0.0) {
        return Err(FitError::DegenerateData("all y values are zero".into()));
    }
    Ok(())
}

/// Starting values for [`fit_hom`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HomGuess {
    pub amplitude: f64,
    pub visibility: f64,
    pub fwhm: f64,
}

/// Default HOM starting point: A from the outer quartile in |δt|, V from the
/// deepest point, δλ from the half-depth crossing (or `fwhm_hint`).
pub fn hom_initial_guess(points: &[DataPoint], center_wavelength: f64, fwhm_hint: Option<f64>) -> HomGuess {
    let mut by_dist: Vec<&DataPoint> = points.iter().collect();
    by_dist.sort_by(|a, b| a.x.abs().total_cmp(&b.x.abs()));
    let outer = &by_dist[by_dist.len() - (by_dist.len() / 4).max(1)..];
    let amplitude = outer.iter().map(|p| p.y).sum::<f64>() / outer.len() as f64;
    let min_y = points.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
    let visibility = if amplitude > 0.0 {
        (1.0 - min_y / amplitude).clamp(0.0, 1.0)
    } else {
        0.5
    };
    let fwhm = fwhm_hint.unwrap_or_else(|| {
        let half = amplitude * (1.0 - visibility / 2.0);
        by_dist
            .iter()
            .find(|p| p.x != 0.0 && p.y >= half)
            .map(|p| SINC_HALF / (hom_phase_factor(center_wavelength) * p.x.abs()))
            .unwrap_or(10.0)
    });
    HomGuess {
        amplitude,
        visibility,
        fwhm,
    }
}

/// Fits A(1 − V·sinc(2π·δt·δλ·c/λ²)) to a delay scan (x in ps).
pub fn fit_hom(
    points: &[DataPoint],
    center_wavelength: f64,
    initial: Option<HomGuess>,
) -> Result<FitResult, FitError> {
    check_points(points, 8)?;
    let g = initial.unwrap_or_else(|| hom_initial_guess(points, center_wavelength, None));
    let model = HomModel { center_wavelength };
    let problem = Problem {
        model: &model,
        points,
        transforms: vec![Transform::Free; 3],
    };
    minimize(&problem, vec![g.amplitude, g.visibility, g.fwhm])
}

/// Default fringe starting point: C = mean, V = (max − min)/(max + min),
/// φ₀ from the phase of the discrete first harmonic in 2φ.
pub fn fringe_initial_guess(points: &[DataPoint]) -> [f64; 3] {
    let n = points.len() as f64;
    let mean = points.iter().map(|p| p.y).sum::<f64>() / n;
    let max = points.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max);
    let min = points.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
    let visibility = if max + min > 0.0 {
        ((max - min) / (max + min)).clamp(0.01, 0.99)
    } else {
        0.5
    };
    let (mut re, mut im) = (0.0, 0.0);
    for p in points {
        let (s, c) = (2.0 * p.x).sin_cos();
        re += (p.y - mean) * c;
        im -= (p.y - mean) * s;
    }
    [mean, visibility, im.atan2(re)]
}

/// Fits C(1 + V·cos(2φ + φ₀)) with V held inside [0, 1] (x in rad).
pub fn fit_fringe(points: &[DataPoint]) -> Result<FitResult, FitError> {
    check_points(points, 6)?;
    let lo = points.iter().map(|p| p.x).fold(f64::INFINITY, f64::min);
    let hi = points.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max);
    if hi - lo < PI / 2.0 - 1e-9 {
        return Err(FitError::DegenerateData(
            "phases must cover at least half a fringe period".into(),
        ));
    }
    let g = fringe_initial_guess(points);
    let transforms = vec![Transform::Free, Transform::Unit, Transform::Free];
    let start = vec![g[0], transforms[1].to_internal(g[1]), g[2]];
    let problem = Problem {
        model: &FringeModel,
        points,
        transforms,
    };
    let mut fit = minimize(&problem, start)?;
    fit.values[2] = wrap_phase(fit.values[2]);
    Ok(fit)
}

fn wrap_phase(p: f64) -> f64 {
    let w = (p + PI).rem_euclid(2.0 * PI) - PI;
    if w <= -PI {
        w + 2.0 * PI
    } else {
        w
    }
}

/// Which model a visibility is extracted with.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VisibilityModel {
    Hom {
        center_wavelength: f64,
        fwhm_hint: Option<f64>,
    },
    Fringe,
}

/// Flat background per data point, with its uncertainty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Background {
    pub value: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Visibilities {
    pub raw: FitResult,
    pub net: FitResult,
}

impl Visibilities {
    pub fn raw_visibility(&self) -> (f64, f64) {
        (self.raw.value("visibility").unwrap(), self.raw.sigma("visibility").unwrap())
    }

    pub fn net_visibility(&self) -> (f64, f64) {
        (self.net.value("visibility").unwrap(), self.net.sigma("visibility").unwrap())
    }
}

fn fit_with(points: &[DataPoint], model: VisibilityModel) -> Result<FitResult, FitError> {
    match model {
        VisibilityModel::Hom {
            center_wavelength,
            fwhm_hint,
        } => {
            check_points(points, 8)?;
            let guess = hom_initial_guess(points, center_wavelength, fwhm_hint);
            fit_hom(points, center_wavelength, Some(guess))
        }
        VisibilityModel::Fringe => fit_fringe(points),
    }
}

/// Raw fit on the data as given and net fit after subtracting `background`
/// from every point, errors added in quadrature.
pub fn raw_and_net_visibility(
    points: &[DataPoint],
    background: Background,
    model: VisibilityModel,
) -> Result<Visibilities, FitError> {
    if !(background.value >= 0.0) || !(background.sigma >= 0.0) {
        return Err(FitError::DegenerateData("background must be >= 0".into()));
    }
    let raw = fit_with(points, model)?;
    if background.value == 0.0 && background.sigma == 0.0 {
        return Ok(Visibilities { net: raw.clone(), raw });
    }
    let net_points: Vec<DataPoint> = points
        .iter()
        .map(|p| DataPoint {
            x: p.x,
            y: p.y - background.value,
            sigma: p.sigma.hypot(background.sigma),
        })
        .collect();
    let net = fit_with(&net_points, model)?;
    Ok(Visibilities { raw, net })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Poisson, Uniform};

    const LAMBDA: f64 = 1566.0;

    fn hom_truth() -> [f64; 3] {
        [100.0, 0.89, 10.7]
    }

    fn delays(n: usize, span: f64) -> Vec<f64> {
        (0..n).map(|i| -span + 2.0 * span * i as f64 / (n - 1) as f64).collect()
    }

    fn noiseless<M: FitModel>(m: &M, p: &[f64], xs: &[f64]) -> Vec<DataPoint> {
        xs.iter().map(|&x| DataPoint::new(x, m.value(x, p))).collect()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn hom_recovers_noiseless_parameters() {
        let m = HomModel { center_wavelength: LAMBDA };
        let truth = hom_truth();
        let pts = noiseless(&m, &truth, &delays(30, 1.5));
        let fit = fit_hom(&pts, LAMBDA, None).unwrap();
        assert!(fit.converged);
        for (v, t) in fit.values.iter().zip(truth) {
            assert!(rel(*v, t) < 1e-6, "{v} vs {t}");
        }
        assert_eq!(fit.dof, 27);
        for p in &pts {
            assert!(((p.y - m.value(p.x, &fit.values)) / p.sigma).abs() < 1e-8);
        }
    }

    #[test]
    fn fringe_recovers_noiseless_parameters() {
        let truth = [50.0, 0.956, 0.0];
        let xs: Vec<f64> = (0..12).map(|i| PI * i as f64 / 12.0).collect();
        let pts = noiseless(&FringeModel, &truth, &xs);
        let fit = fit_fringe(&pts).unwrap();
        assert!(rel(fit.values[0], 50.0) < 1e-6);
        assert!(rel(fit.values[1], 0.956) < 1e-6);
        assert!(fit.values[2].abs() < 1e-6);
        for p in &pts {
            assert!(((p.y - FringeModel.value(p.x, &fit.values)) / p.sigma).abs() < 1e-8);
        }
        let shifted = [80.0, 0.4, 1.1];
        let fit = fit_fringe(&noiseless(&FringeModel, &shifted, &xs)).unwrap();
        for (v, t) in fit.values.iter().zip(shifted) {
            assert!(rel(*v, t) < 1e-6);
        }
    }

    #[test]
    fn scale_equivariance() {
        let m = HomModel { center_wavelength: LAMBDA };
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let pts: Vec<DataPoint> = delays(30, 1.5)
            .into_iter()
            .map(|x| DataPoint::new(x, Poisson::new(m.value(x, &[500.0, 0.89, 10.7])).unwrap().sample(&mut rng)))
            .collect();
        let k = 3.7;
        let scaled: Vec<DataPoint> = pts.iter().map(|p| DataPoint::with_sigma(p.x, p.y * k, p.sigma * k)).collect();
        let a = fit_hom(&pts, LAMBDA, None).unwrap();
        let b = fit_hom(&scaled, LAMBDA, None).unwrap();
        assert!(rel(b.values[0], k * a.values[0]) < 1e-9);
        assert!((b.values[1] - a.values[1]).abs() < 1e-9);
        assert!((b.values[2] - a.values[2]).abs() < 1e-9);

        let xs: Vec<f64> = (0..12).map(|i| PI * i as f64 / 12.0).collect();
        let pts: Vec<DataPoint> = xs
            .iter()
            .map(|&x| DataPoint::new(x, Poisson::new(FringeModel.value(x, &[200.0, 0.7, 0.3])).unwrap().sample(&mut rng)))
            .collect();
        let scaled: Vec<DataPoint> = pts.iter().map(|p| DataPoint::with_sigma(p.x, p.y * k, p.sigma * k)).collect();
        let a = fit_fringe(&pts).unwrap();
        let b = fit_fringe(&scaled).unwrap();
        assert!(rel(b.values[0], k * a.values[0]) < 1e-9);
        assert!((b.values[1] - a.values[1]).abs() < 1e-9);
        assert!((b.values[2] - a.values[2]).abs() < 1e-9);
    }

    fn check_gradient<M: FitModel>(m: &M, p: &[f64], x: f64) {
        let mut g = vec![0.0; p.len()];
        m.gradient(x, p, &mut g);
        for j in 0..p.len() {
            let h = 1e-6 * p[j].abs().max(1e-3);
            let mut up = p.to_vec();
            let mut dn = p.to_vec();
            up[j] += h;
            dn[j] -= h;
            let fd = (m.value(x, &up) - m.value(x, &dn)) / (2.0 * h);
            let scale = g[j].abs().max(1e-6 * m.value(x, p).abs()).max(1e-12);
            assert!((g[j] - fd).abs() / scale < 1e-5, "param {j}: {} vs {fd}", g[j]);
        }
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let hm = HomModel { center_wavelength: LAMBDA };
        for _ in 0..200 {
            let p = [
                Uniform::new(10.0, 1000.0).unwrap().sample(&mut rng),
                Uniform::new(0.05, 1.0).unwrap().sample(&mut rng),
                Uniform::new(2.0, 20.0).unwrap().sample(&mut rng),
            ];
            check_gradient(&hm, &p, Uniform::new(-2.0, 2.0).unwrap().sample(&mut rng));
            let q = [
                Uniform::new(10.0, 1000.0).unwrap().sample(&mut rng),
                Uniform::new(0.05, 1.0).unwrap().sample(&mut rng),
                Uniform::new(-PI, PI).unwrap().sample(&mut rng),
            ];
            check_gradient(&FringeModel, &q, Uniform::new(0.0, PI).unwrap().sample(&mut rng));
        }
    }

    #[test]
    fn degenerate_inputs() {
        let one = [DataPoint::new(0.0, 10.0)];
        assert!(matches!(fit_hom(&one, LAMBDA, None), Err(FitError::DegenerateData(_))));
        let same: Vec<_> = (0..10).map(|_| DataPoint::new(1.0, 5.0)).collect();
        assert!(matches!(fit_hom(&same, LAMBDA, None), Err(FitError::DegenerateData(_))));
        let zeros: Vec<_> = (0..10).map(|i| DataPoint::new(i as f64, 0.0)).collect();
        assert!(matches!(fit_hom(&zeros, LAMBDA, None), Err(FitError::DegenerateData(_))));
        let narrow: Vec<_> = (0..8).map(|i| DataPoint::new(0.1 * i as f64, 5.0 + i as f64)).collect();
        assert!(matches!(fit_fringe(&narrow), Err(FitError::DegenerateData(_))));
    }

    #[test]
    fn zero_background_gives_identical_raw_and_net() {
        let xs: Vec<f64> = (0..12).map(|i| PI * i as f64 / 12.0).collect();
        let pts = noiseless(&FringeModel, &[50.0, 0.8, 0.2], &xs);
        let v = raw_and_net_visibility(&pts, Background { value: 0.0, sigma: 0.0 }, VisibilityModel::Fringe).unwrap();
        assert_eq!(v.raw, v.net);
    }

    #[test]
    fn background_dilutes_visibility() {
        // C = 50, V = 1, flat background 5 → V_raw = 50/55
        let xs: Vec<f64> = (0..24).map(|i| PI * i as f64 / 24.0).collect();
        let pts: Vec<DataPoint> = xs
            .iter()
            .map(|&x| {
                let y = FringeModel.value(x, &[50.0, 1.0, 0.0]) + 5.0;
                DataPoint::with_sigma(x, y, y.sqrt().max(1.0))
            })
            .collect();
        let v = raw_and_net_visibility(&pts, Background { value: 5.0, sigma: 0.0 }, VisibilityModel::Fringe).unwrap();
        let (raw, raw_s) = v.raw_visibility();
        let (net, net_s) = v.net_visibility();
        assert!((raw - 50.0 / 55.0).abs() < 1e-6f64.max(raw_s));
        assert!((net - 1.0).abs() < 1e-6f64.max(net_s));
        assert!(net >= raw);
    }

    fn coverage_trials<F: FnMut(&mut ChaCha8Rng) -> Vec<bool>>(trials: usize, seed: u64, mut f: F) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut hits = Vec::new();
        for _ in 0..trials {
            let ok = f(&mut rng);
            if hits.is_empty() {
                hits = vec![0; ok.len()];
            }
            for (h, o) in hits.iter_mut().zip(ok) {
                *h += o as usize;
            }
        }
        hits
    }

    #[test]
    fn reduced_chi2_is_sensible_on_poisson_data() {
        let m = HomModel { center_wavelength: LAMBDA };
        let truth = [500.0, 0.89, 10.7];
        let xs = delays(30, 1.5);
        let hits = coverage_trials(100, 77, |rng| {
            let pts: Vec<DataPoint> = xs
                .iter()
                .map(|&x| DataPoint::new(x, Poisson::new(m.value(x, &truth)).unwrap().sample(rng)))
                .collect();
            let fit = fit_hom(&pts, LAMBDA, None).unwrap();
            vec![(0.5..=1.5).contains(&fit.reduced_chi2())]
        });
        assert!(hits[0] >= 90, "{hits:?}");
    }

    #[test]
    fn report_formats() {
        let xs: Vec<f64> = (0..12).map(|i| PI * i as f64 / 12.0).collect();
        let fit = fit_fringe(&noiseless(&FringeModel, &[50.0, 0.5, 0.0], &xs)).unwrap();
        let csv = fit.report_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "parameter,value,sigma");
        assert!(lines[1].starts_with("amplitude,"));
        assert!(lines[4].starts_with("chi2/dof,"));
        assert!(fit.report_text().contains("visibility"));
        assert_eq!(wrap_phase(3.0 * PI), PI);
    }
}
