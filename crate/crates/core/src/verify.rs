//! Ensemble statistics comparing predictions with retrodictions.
//!
//! For independent segments, the relative trajectory r⃗(t0) − r⃖(t0) has
//! covariance σ² = V + V_E in steady state. Every estimator here reduces
//! per-realization values in realization order with pairwise summation, so
//! results do not depend on how the ensemble was scheduled.

use std::ops::Range;

use log::warn;
use rayon::prelude::*;
use serde::Serialize;

use crate::demod::{demodulate, DemodFilterSpec};
use crate::error::{Error, Result};
use crate::filters::{predict, predict_unconditioned, retrodict, StateTrajectory};
use crate::model::{derive_rates, rad_to_hz, DerivedRates, ModelParams};
use crate::riccati::{discrete_steady, v_analytic, STEADY_TOLERANCE};
use crate::rng::RngKey;
use crate::simulate::{
    measure, simulate_truth, synthesize_carrier, MeasurementRecord, TruthTrajectory, DEFAULT_CARRIER_OVERSAMPLING,
    DEFAULT_DT, DEFAULT_SEGMENT,
};
use crate::spectral::{filter_correction, SpectralModel};

/// Minimum ensemble for a single-time report.
pub const MIN_REALIZATIONS: usize = 100;

/// How records reach the filters.
#[derive(Debug, Clone, PartialEq)]
pub enum Pipeline {
    /// Records generated directly at baseband.
    Baseband,
    /// Carrier synthesis at `oversampling`·f_m followed by demodulation.
    Carrier { oversampling: f64, filter: DemodFilterSpec },
}

impl Pipeline {
    /// Carrier pipeline with the default filter, decimated to roughly
    /// [`DEFAULT_DT`].
    pub fn default_carrier(p: &ModelParams) -> Self {
        let fs = DEFAULT_CARRIER_OVERSAMPLING * rad_to_hz(p.omega_m);
        let decimation = ((fs * DEFAULT_DT).round() as usize).max(1);
        Pipeline::Carrier {
            oversampling: DEFAULT_CARRIER_OVERSAMPLING,
            filter: DemodFilterSpec { decimation: Some(decimation), ..Default::default() },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleConfig {
    pub segments: usize,
    /// Segment length, seconds.
    pub segment_duration: f64,
    /// Baseband step; ignored by the carrier pipeline, whose step is set
    /// by the decimation factor.
    pub dt: f64,
    pub seed: u64,
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
    pub pipeline: Pipeline,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            segments: 1000,
            segment_duration: DEFAULT_SEGMENT,
            dt: DEFAULT_DT,
            seed: 0,
            threads: None,
            pipeline: Pipeline::Baseband,
        }
    }
}

/// One realization: the hidden state and the record the filters see.
#[derive(Debug, Clone)]
pub struct Segment {
    pub index: usize,
    pub truth: TruthTrajectory,
    pub record: MeasurementRecord,
}

impl EnsembleConfig {
    fn samples(&self, dt: f64) -> usize {
        (self.segment_duration / dt).round() as usize
    }

    /// Record step produced by this configuration.
    pub fn record_dt(&self, p: &ModelParams) -> Result<f64> {
        match &self.pipeline {
            Pipeline::Baseband => Ok(self.dt),
            Pipeline::Carrier { oversampling, filter } => {
                let fs = oversampling * rad_to_hz(p.omega_m);
                Ok(filter.decimation_for(fs)? as f64 / fs)
            }
        }
    }

    /// Builds realization `index`. In the carrier pipeline the demodulator
    /// transient is generated and discarded so the segment keeps its length.
    pub fn segment(&self, p: &ModelParams, index: usize) -> Result<Segment> {
        let key = RngKey::new(self.seed).realization(index as u64);
        match &self.pipeline {
            Pipeline::Baseband => {
                let truth = simulate_truth(p, self.dt, self.samples(self.dt), key)?;
                let record = measure(&truth, p, key);
                Ok(Segment { index, truth, record })
            }
            Pipeline::Carrier { oversampling, filter } => {
                let fs = oversampling * rad_to_hz(p.omega_m);
                let dt = self.record_dt(p)?;
                let n = self.samples(dt);
                let settle = ((5.0 * filter.stages as f64 * filter.time_constant()) / dt).ceil() as usize;
                let full = simulate_truth(p, dt, n + settle + 1, key)?;
                let carrier = synthesize_carrier(&full, p, fs, key)?;
                let demod = demodulate(&carrier, p.omega_m, filter)?;
                if demod.record.len() < settle + n {
                    return Err(Error::Length(format!(
                        "demodulated {} samples, need {}",
                        demod.record.len(),
                        settle + n
                    )));
                }
                let mut record = demod.record.skip(settle);
                record.i.truncate(n);
                let truth = TruthTrajectory { dt, x: full.x[settle..settle + n].to_vec() };
                Ok(Segment { index, truth, record })
            }
        }
    }
}

/// Generates every segment and maps `f` over them in parallel. Output order
/// follows the realization index.
pub fn run_ensemble<T, F>(p: &ModelParams, cfg: &EnsembleConfig, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(Segment) -> Result<T> + Sync + Send,
{
    p.validate()?;
    let job = || {
        (0..cfg.segments)
            .into_par_iter()
            .map(|k| f(cfg.segment(p, k)?))
            .collect::<Result<Vec<T>>>()
    };
    match cfg.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Usage(e.to_string()))?
            .install(job),
        None => job(),
    }
}

/// Sum by recursive halving.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 16 {
        return xs.iter().sum();
    }
    let (a, b) = xs.split_at(xs.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

fn mean(xs: &[f64]) -> f64 {
    pairwise_sum(xs) / xs.len() as f64
}

/// Unbiased variance of `xs` and the standard error of that estimate.
fn variance_with_error(xs: &[f64], mean: f64) -> (f64, f64) {
    let n = xs.len() as f64;
    let z: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    let var = pairwise_sum(&z) / (n - 1.0);
    (var, sample_sd(&z) / n.sqrt() * n / (n - 1.0))
}

fn sample_sd(z: &[f64]) -> f64 {
    let m = mean(z);
    let dev: Vec<f64> = z.iter().map(|v| (v - m) * (v - m)).collect();
    (pairwise_sum(&dev) / (z.len() as f64 - 1.0)).sqrt()
}

/// 2×2 sample covariance of paired quadrature values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Covariance {
    pub n: usize,
    pub mean: [f64; 2],
    pub xx: f64,
    pub yy: f64,
    pub xy: f64,
    /// Diagonal average.
    pub diag: f64,
    pub stderr_xx: f64,
    pub stderr_yy: f64,
    pub stderr_xy: f64,
    pub stderr_diag: f64,
}

pub fn covariance(values: &[[f64; 2]]) -> Result<Covariance> {
    let n = values.len();
    if n < 2 {
        return Err(Error::InsufficientEnsemble { got: n, need: 2 });
    }
    let x: Vec<f64> = values.iter().map(|v| v[0]).collect();
    let y: Vec<f64> = values.iter().map(|v| v[1]).collect();
    let (mx, my) = (mean(&x), mean(&y));
    let (xx, stderr_xx) = variance_with_error(&x, mx);
    let (yy, stderr_yy) = variance_with_error(&y, my);
    let nf = n as f64;
    let zxy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).collect();
    let xy = pairwise_sum(&zxy) / (nf - 1.0);
    let zd: Vec<f64> = x
        .iter()
        .zip(&y)
        .map(|(a, b)| 0.5 * ((a - mx).powi(2) + (b - my).powi(2)))
        .collect();
    let scale = nf / (nf - 1.0) / nf.sqrt();
    Ok(Covariance {
        n,
        mean: [mx, my],
        xx,
        yy,
        xy,
        diag: 0.5 * (xx + yy),
        stderr_xx,
        stderr_yy,
        stderr_xy: sample_sd(&zxy) * scale,
        stderr_diag: sample_sd(&zd) * scale,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub t0: Vec<f64>,
    /// Number of (prediction, retrodiction) pairs.
    pub n_realizations: usize,
    pub sigma2: f64,
    pub sigma2_xx: f64,
    pub sigma2_yy: f64,
    pub sigma2_xy: f64,
    pub stderr: f64,
    pub stderr_xx: f64,
    pub stderr_yy: f64,
    pub stderr_xy: f64,
    /// σ² before any filter correction.
    pub raw_sigma2: f64,
    pub filter_corrected: bool,
    pub correction_factor: f64,
    /// σ² − V_E.
    pub v_implied: f64,
    pub purity: f64,
    pub purity_stderr: f64,
    pub n_cond: f64,
    /// V + V_E for comparison.
    pub theory: f64,
    pub steady: bool,
}

impl VerificationReport {
    /// Scales every second moment by `factor` and recomputes the implied
    /// state.
    pub fn with_correction(&self, rates: &DerivedRates, factor: f64) -> Self {
        let mut out = self.clone();
        let raw = self.raw_sigma2;
        let s = factor * raw / self.sigma2;
        out.sigma2 = factor * raw;
        out.sigma2_xx *= s;
        out.sigma2_yy *= s;
        out.sigma2_xy *= s;
        out.stderr *= s;
        out.stderr_xx *= s;
        out.stderr_yy *= s;
        out.stderr_xy *= s;
        out.filter_corrected = factor != 1.0;
        out.correction_factor = factor;
        out.fill_implied(rates);
        out
    }

    fn fill_implied(&mut self, rates: &DerivedRates) {
        self.v_implied = self.sigma2 - rates.v_e_steady;
        self.purity = 0.5 / self.v_implied;
        self.purity_stderr = 2.0 * self.purity * self.purity * self.stderr;
        self.n_cond = self.v_implied - 0.5;
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Report from relative values r⃗ − r⃖ pooled over any number of times.
pub fn report_from_differences(diffs: &[[f64; 2]], rates: &DerivedRates, t0: Vec<f64>) -> Result<VerificationReport> {
    if diffs.len() < MIN_REALIZATIONS {
        return Err(Error::InsufficientEnsemble { got: diffs.len(), need: MIN_REALIZATIONS });
    }
    let c = covariance(diffs)?;
    let mut report = VerificationReport {
        t0,
        n_realizations: c.n,
        sigma2: c.diag,
        sigma2_xx: c.xx,
        sigma2_yy: c.yy,
        sigma2_xy: c.xy,
        stderr: c.stderr_diag,
        stderr_xx: c.stderr_xx,
        stderr_yy: c.stderr_yy,
        stderr_xy: c.stderr_xy,
        raw_sigma2: c.diag,
        filter_corrected: false,
        correction_factor: 1.0,
        v_implied: 0.0,
        purity: 0.0,
        purity_stderr: 0.0,
        n_cond: 0.0,
        theory: rates.relative_variance(),
        steady: true,
    };
    report.fill_implied(rates);
    Ok(report)
}

fn is_steady(pred: &StateTrajectory, retro: &StateTrajectory, k: usize, rates: &DerivedRates) -> bool {
    let (prior, post_b) = discrete_steady(rates, pred.dt);
    let close = |v: f64, s: f64| ((v - s) / s).abs() < STEADY_TOLERANCE;
    pred.conditioned(k) && close(pred.variance(k), prior) && close(retro.variance(k), post_b)
}

fn differences(pred: &[StateTrajectory], retro: &[StateTrajectory], k: usize) -> Vec<[f64; 2]> {
    pred.iter()
        .zip(retro)
        .map(|(f, b)| [f.mean[k][0] - b.mean[k][0], f.mean[k][1] - b.mean[k][1]])
        .collect()
}

/// σ² at a single time over the ensemble.
pub fn relative_variance(
    pred: &[StateTrajectory],
    retro: &[StateTrajectory],
    t0: f64,
    rates: &DerivedRates,
) -> Result<VerificationReport> {
    relative_variance_pooled(pred, retro, &[t0], rates)
}

/// σ² pooling the relative values at several times, for times far enough
/// apart that they are nearly independent.
pub fn relative_variance_pooled(
    pred: &[StateTrajectory],
    retro: &[StateTrajectory],
    t0s: &[f64],
    rates: &DerivedRates,
) -> Result<VerificationReport> {
    if pred.len() != retro.len() {
        return Err(Error::Length(format!("{} predictions but {} retrodictions", pred.len(), retro.len())));
    }
    let Some(first) = pred.first() else {
        return Err(Error::InsufficientEnsemble { got: 0, need: MIN_REALIZATIONS });
    };
    let mut diffs = Vec::with_capacity(pred.len() * t0s.len());
    let mut steady = true;
    for &t0 in t0s {
        let k = first.index_of(t0)?;
        steady &= is_steady(first, &retro[0], k, rates);
        diffs.extend(differences(pred, retro, k));
    }
    if !steady {
        warn!("filters are not in steady state at every requested time");
    }
    let mut report = report_from_differences(&diffs, rates, t0s.to_vec())?;
    report.steady = steady;
    Ok(report)
}

/// Ensemble variance of r⃖ at `t0`, averaged over both quadratures.
pub fn unconditional_variance(retro: &[StateTrajectory], t0: f64) -> Result<f64> {
    let Some(first) = retro.first() else {
        return Err(Error::InsufficientEnsemble { got: 0, need: 2 });
    };
    let k = first.index_of(t0)?;
    let values: Vec<[f64; 2]> = retro.iter().map(|r| r.mean[k]).collect();
    Ok(covariance(&values)?.diag)
}

/// Mean squared deviation of estimates from the truth over the sample
/// window, per quadrature, with its standard error across realizations.
pub fn tracking_error(
    truth: &[TruthTrajectory],
    est: &[StateTrajectory],
    window: Range<usize>,
) -> Result<(f64, f64)> {
    if truth.len() != est.len() || truth.len() < 2 {
        return Err(Error::InsufficientEnsemble { got: truth.len().min(est.len()), need: 2 });
    }
    let per: Vec<f64> = truth
        .iter()
        .zip(est)
        .map(|(x, r)| segment_tracking_error(x, r, window.clone()))
        .collect::<Result<_>>()?;
    Ok((mean(&per), sample_sd(&per) / (per.len() as f64).sqrt()))
}

/// ⟨(x − r)²⟩ of one segment over `window`, per quadrature.
pub fn segment_tracking_error(truth: &TruthTrajectory, est: &StateTrajectory, window: Range<usize>) -> Result<f64> {
    if window.end > truth.len() || window.end > est.len() || window.is_empty() {
        return Err(Error::Length(format!("window {window:?} outside the trajectories")));
    }
    let sq: Vec<f64> = window
        .map(|k| {
            let (x, r) = (truth.x[k], est.mean[k]);
            0.5 * ((x[0] - r[0]).powi(2) + (x[1] - r[1]).powi(2))
        })
        .collect();
    Ok(mean(&sq))
}

/// Report over an ensemble generated on the fly, pooling the given times.
/// Carrier-pipeline results are corrected for the demodulation filter.
pub fn verify_ensemble(p: &ModelParams, cfg: &EnsembleConfig, t0s: &[f64]) -> Result<VerificationReport> {
    let rates = derive_rates(p)?;
    let pairs = run_ensemble(p, cfg, |seg| {
        let f = predict(&seg.record, &rates, rates.v_bath)?;
        let b = retrodict(&seg.record, &rates, rates.v_bath)?;
        let mut out = Vec::with_capacity(t0s.len());
        let mut steady = true;
        for &t0 in t0s {
            let k = f.index_of(t0)?;
            steady &= is_steady(&f, &b, k, &rates);
            out.push([f.mean[k][0] - b.mean[k][0], f.mean[k][1] - b.mean[k][1]]);
        }
        Ok((out, steady))
    })?;
    let steady = pairs.iter().all(|(_, s)| *s);
    if !steady {
        warn!("filters are not in steady state at every requested time");
    }
    // pool time-major so the layout matches relative_variance_pooled
    let mut diffs = Vec::with_capacity(pairs.len() * t0s.len());
    for j in 0..t0s.len() {
        diffs.extend(pairs.iter().map(|(d, _)| d[j]));
    }
    let mut report = report_from_differences(&diffs, &rates, t0s.to_vec())?;
    report.steady = steady;
    if let Pipeline::Carrier { filter, .. } = &cfg.pipeline {
        let model = SpectralModel::new(&rates, Some(*filter))?;
        report = report.with_correction(&rates, filter_correction(&model)?);
    }
    Ok(report)
}

/// Steady-state comparison times spaced `spacing` apart, leaving `margin`
/// at both ends of the segment.
pub fn steady_times(segment: f64, margin: f64, spacing: f64) -> Vec<f64> {
    let mut t = margin;
    let mut out = Vec::new();
    while t <= segment - margin + 1e-12 {
        out.push(t);
        t += spacing;
    }
    out
}

/// σ² against comparison time with its theory overlay.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CollapseCurve {
    pub t0: Vec<f64>,
    pub sigma2: Vec<f64>,
    pub stderr: Vec<f64>,
    pub theory: Vec<f64>,
    /// Variance of r⃖ alone.
    pub unconditional: Vec<f64>,
    pub n_realizations: usize,
}

impl CollapseCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t0_s,sigma2,stderr,theory,unconditional\n");
        for k in 0..self.t0.len() {
            out.push_str(&format!(
                "{:.9e},{:.9e},{:.9e},{:.9e},{:.9e}\n",
                self.t0[k], self.sigma2[k], self.stderr[k], self.theory[k], self.unconditional[k]
            ));
        }
        out
    }

    /// Largest |Monte Carlo − theory| in units of the standard error.
    pub fn max_z(&self) -> f64 {
        self.sigma2
            .iter()
            .zip(&self.theory)
            .zip(&self.stderr)
            .map(|((s, t), e)| ((s - t) / e).abs())
            .fold(0.0, f64::max)
    }
}

fn check_grid(grid: &[f64], end: f64) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Grid("empty time grid".into()));
    }
    if let Some(t) = grid.iter().find(|t| !(**t >= 0.0 && **t <= end)) {
        return Err(Error::Grid(format!("time {t} outside [0, {end}]")));
    }
    Ok(())
}

fn curve_from_pairs(
    grid: &[f64],
    pairs: &[Vec<([f64; 2], [f64; 2])>],
    theory: Vec<f64>,
) -> Result<CollapseCurve> {
    let mut sigma2 = Vec::with_capacity(grid.len());
    let mut stderr = Vec::with_capacity(grid.len());
    let mut unconditional = Vec::with_capacity(grid.len());
    for j in 0..grid.len() {
        let d: Vec<[f64; 2]> = pairs
            .iter()
            .map(|p| [p[j].0[0] - p[j].1[0], p[j].0[1] - p[j].1[1]])
            .collect();
        let c = covariance(&d)?;
        sigma2.push(c.diag);
        stderr.push(c.stderr_diag);
        let b: Vec<[f64; 2]> = pairs.iter().map(|p| p[j].1).collect();
        unconditional.push(covariance(&b)?.diag);
    }
    Ok(CollapseCurve { t0: grid.to_vec(), sigma2, stderr, theory, unconditional, n_realizations: pairs.len() })
}

/// σ²(t0) for predictions started at t = 0 from the thermal state and
/// retrodictions started at the segment end.
pub fn collapse_curve(p: &ModelParams, cfg: &EnsembleConfig, grid: &[f64]) -> Result<CollapseCurve> {
    let rates = derive_rates(p)?;
    let dt = cfg.record_dt(p)?;
    let end = (cfg.samples(dt) - 1) as f64 * dt;
    check_grid(grid, end)?;
    if cfg.segments < MIN_REALIZATIONS {
        return Err(Error::InsufficientEnsemble { got: cfg.segments, need: MIN_REALIZATIONS });
    }
    let idx: Vec<usize> = grid.iter().map(|t| (t / dt).round() as usize).collect();
    let pairs = run_ensemble(p, cfg, |seg| {
        let f = predict(&seg.record, &rates, rates.v_bath)?;
        let b = retrodict(&seg.record, &rates, rates.v_bath)?;
        Ok(idx.iter().map(|&k| (f.mean[k], b.mean[k])).collect())
    })?;
    let theory = grid
        .iter()
        .map(|&t| Ok(v_analytic(&rates, rates.v_bath, t)? + rates.v_e_steady))
        .collect::<Result<Vec<_>>>()?;
    curve_from_pairs(grid, &pairs, theory)
}

/// Predicted variance when conditioning stops at `t_star`: the collapse
/// curve up to `t_star`, then thermal relaxation from V(t*).
pub fn decoherence_theory(rates: &DerivedRates, t_star: f64, t: f64) -> Result<f64> {
    let v_star = v_analytic(rates, rates.v_bath, t.min(t_star))?;
    let v = if t <= t_star {
        v_star
    } else {
        rates.v_bath + (v_star - rates.v_bath) * (-rates.gamma_m() * (t - t_star)).exp()
    };
    Ok(v + rates.v_e_steady)
}

/// σ²(t) when the prediction stops using the record at `t_star`.
pub fn decoherence_curve(p: &ModelParams, cfg: &EnsembleConfig, t_star: f64, grid: &[f64]) -> Result<CollapseCurve> {
    let rates = derive_rates(p)?;
    let dt = cfg.record_dt(p)?;
    let end = (cfg.samples(dt) - 1) as f64 * dt;
    if !(t_star >= 0.0 && t_star <= end) {
        return Err(Error::Range { t: t_star, end });
    }
    check_grid(grid, end)?;
    if cfg.segments < MIN_REALIZATIONS {
        return Err(Error::InsufficientEnsemble { got: cfg.segments, need: MIN_REALIZATIONS });
    }
    let idx: Vec<usize> = grid.iter().map(|t| (t / dt).round() as usize).collect();
    let pairs = run_ensemble(p, cfg, |seg| {
        let f = predict(&seg.record, &rates, rates.v_bath)?;
        let free = predict_unconditioned(&f, &rates, t_star)?;
        let b = retrodict(&seg.record, &rates, rates.v_bath)?;
        Ok(idx.iter().map(|&k| (free.mean[k], b.mean[k])).collect())
    })?;
    let theory = grid
        .iter()
        .map(|&t| decoherence_theory(&rates, t_star, t))
        .collect::<Result<Vec<_>>>()?;
    curve_from_pairs(grid, &pairs, theory)
}

/// Uniform grid from `start` to `stop` inclusive.
pub fn linear_grid(start: f64, stop: f64, points: usize) -> Vec<f64> {
    if points < 2 {
        return vec![start];
    }
    (0..points)
        .map(|k| start + (stop - start) * k as f64 / (points - 1) as f64)
        .collect()
}

/// Parameter set with the given measurement efficiency η_meas, keeping the
/// reference Ω_m, Γ_m and Γ_meas and adjusting the bath.
pub fn params_with_efficiency(base: &ModelParams, eta_meas: f64) -> Result<ModelParams> {
    if !(eta_meas > 0.0 && eta_meas < 1.0) {
        return Err(Error::InvalidParameter(format!("eta_meas {eta_meas} outside (0, 1)")));
    }
    // η_meas = Γ_meas / (Γ_qba + Γ_m·n̄_th): shrink Γ_qba toward Γ_meas
    // first, then put the rest of the decoherence into the bath.
    let total = base.gamma_meas / eta_meas;
    let gamma_qba = base.gamma_qba.min(total).max(base.gamma_meas);
    let p = ModelParams { n_th: (total - gamma_qba) / base.gamma_m, gamma_qba, ..*base };
    p.validate()?;
    Ok(p)
}
