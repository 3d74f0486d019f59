//! Synthetic measurement records.
//!
//! The generator is the classical state-space twin of the measurement: each
//! slow quadrature is an Ornstein–Uhlenbeck process
//! dx = −(Γ_m/2)x dt + √(Γ_m(n̄_th + 1/2) + Γ_qba) dB, observed through
//! i dt = √(4Γ_meas)·x dt + dW with dW independent of dB. Keeping the true
//! state around is what lets the filters be checked against ground truth.

use crate::error::{Error, Result};
use crate::model::{rad_to_hz, ModelParams};
use crate::rng::{Channel, RngKey};

/// Default baseband step, seconds.
pub const DEFAULT_DT: f64 = 1e-6;
/// Default segment length, seconds.
pub const DEFAULT_SEGMENT: f64 = 3.2e-3;
/// Carrier sampling rate in units of the mechanical frequency.
pub const DEFAULT_CARRIER_OVERSAMPLING: f64 = 16.0;

#[derive(Debug, Clone, PartialEq)]
pub struct TruthTrajectory {
    pub dt: f64,
    /// (X, Y) per sample, zero-point units.
    pub x: Vec<[f64; 2]>,
}

impl TruthTrajectory {
    pub fn zeros(dt: f64, n: usize) -> Self {
        Self { dt, x: vec![[0.0; 2]; n] }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }
}

/// Two-channel record in shot-noise units: a record of pure shot noise has
/// per-sample variance 1/dt on each channel.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementRecord {
    pub dt: f64,
    /// (i_X, i_Y) per sample.
    pub i: Vec<[f64; 2]>,
    pub seed: u64,
    pub realization: u64,
    /// [`ModelParams::params_hash`] of the generating parameters, 0 if unknown.
    pub params_hash: u64,
}

impl MeasurementRecord {
    pub fn new(dt: f64, i: Vec<[f64; 2]>) -> Self {
        Self { dt, i, seed: 0, realization: 0, params_hash: 0 }
    }

    pub fn len(&self) -> usize {
        self.i.len()
    }

    pub fn is_empty(&self) -> bool {
        self.i.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.len() as f64 * self.dt
    }

    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.i.iter().map(|s| s[c]).collect()
    }

    /// Drop the first `n` samples.
    pub fn skip(&self, n: usize) -> Self {
        Self { i: self.i[n.min(self.len())..].to_vec(), ..self.clone() }
    }

    /// a·self + b·other, sample by sample.
    pub fn combine(&self, a: f64, other: &Self, b: f64) -> Result<Self> {
        if self.len() != other.len() || self.dt != other.dt {
            return Err(Error::Length("records differ in length or step".into()));
        }
        let i = self
            .i
            .iter()
            .zip(&other.i)
            .map(|(x, y)| [a * x[0] + b * y[0], a * x[1] + b * y[1]])
            .collect();
        Ok(Self { i, params_hash: self.params_hash, ..Self::new(self.dt, Vec::new()) })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t_s,i_x,i_y\n");
        for (k, s) in self.i.iter().enumerate() {
            out.push_str(&format!("{:.9e},{:.12e},{:.12e}\n", k as f64 * self.dt, s[0], s[1]));
        }
        out
    }
}

/// Carrier-rate photocurrent I(t), sampled at `fs`.
///
/// The shot-noise floor is unit *one-sided*: white noise of per-sample
/// variance fs/2. Demodulation folds both sidebands onto each quadrature,
/// which restores a unit floor at baseband.
#[derive(Debug, Clone, PartialEq)]
pub struct CarrierRecord {
    pub fs: f64,
    /// Mechanical frequency the record was synthesized at, rad/s.
    pub omega_m: f64,
    pub samples: Vec<f64>,
    pub seed: u64,
    pub realization: u64,
    pub params_hash: u64,
}

impl CarrierRecord {
    pub fn dt(&self) -> f64 {
        1.0 / self.fs
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

fn check_resolution(p: &ModelParams, dt: f64) -> Result<()> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::StepSize(format!("dt must be positive, got {dt}")));
    }
    if dt * p.gamma_meas > 0.02 || dt * p.gamma_m > 1e-3 {
        return Err(Error::StepSize(format!(
            "dt = {dt:e} s does not resolve the rates (Γ_meas·dt = {:.2e}, Γ_m·dt = {:.2e})",
            dt * p.gamma_meas,
            dt * p.gamma_m
        )));
    }
    Ok(())
}

/// Euler–Maruyama integration of both quadratures from the stationary state.
pub fn simulate_truth(p: &ModelParams, dt: f64, n: usize, key: RngKey) -> Result<TruthTrajectory> {
    p.validate()?;
    check_resolution(p, dt)?;
    if n < 2 {
        return Err(Error::Length(format!("need at least 2 samples, got {n}")));
    }
    let decay = 1.0 - 0.5 * p.gamma_m * dt;
    let kick = (p.diffusion() * dt).sqrt();
    let spread = p.v_bath().sqrt();

    let mut init = key.stream(Channel::Initial);
    let mut noise = [key.stream(Channel::ProcessX), key.stream(Channel::ProcessY)];
    let mut x = Vec::with_capacity(n);
    let mut state = [spread * init.next(), spread * init.next()];
    x.push(state);
    for _ in 1..n {
        for (s, stream) in state.iter_mut().zip(noise.iter_mut()) {
            *s = decay * *s + kick * stream.next();
        }
        x.push(state);
    }
    Ok(TruthTrajectory { dt, x })
}

/// i_k = √(4Γ_meas)·x_k + w_k/dt with w_k ~ N(0, dt), independent per channel.
pub fn measure(truth: &TruthTrajectory, p: &ModelParams, key: RngKey) -> MeasurementRecord {
    let gain = (4.0 * p.gamma_meas).sqrt();
    let shot = 1.0 / truth.dt.sqrt();
    let mut noise = [key.stream(Channel::ShotX), key.stream(Channel::ShotY)];
    let i = truth
        .x
        .iter()
        .map(|x| {
            [
                gain * x[0] + shot * noise[0].next(),
                gain * x[1] + shot * noise[1].next(),
            ]
        })
        .collect();
    MeasurementRecord {
        dt: truth.dt,
        i,
        seed: key.seed,
        realization: key.realization,
        params_hash: p.params_hash(),
    }
}

/// I(t) = √(4Γ_meas)·[X(t)cos Ω_m t + Y(t)sin Ω_m t] + shot noise, with the
/// truth held between its samples.
pub fn synthesize_carrier(
    truth: &TruthTrajectory,
    p: &ModelParams,
    fs: f64,
    key: RngKey,
) -> Result<CarrierRecord> {
    let f_m = rad_to_hz(p.omega_m);
    if !(fs > 8.0 * f_m) {
        return Err(Error::SamplingRate(format!(
            "carrier rate {fs:e} Hz must exceed 8·f_m = {:e} Hz",
            8.0 * f_m
        )));
    }
    let gain = (4.0 * p.gamma_meas).sqrt();
    let shot = (0.5 * fs).sqrt();
    let n = (truth.len() as f64 * truth.dt * fs).floor() as usize;
    let phase_step = p.omega_m / fs;
    let per_sample = truth.dt * fs;
    let mut noise = key.stream(Channel::Carrier);
    let samples = (0..n)
        .map(|j| {
            let k = ((j as f64 / per_sample).floor() as usize).min(truth.len() - 1);
            let [x, y] = truth.x[k];
            let (s, c) = (j as f64 * phase_step).sin_cos();
            gain * (x * c + y * s) + shot * noise.next()
        })
        .collect();
    Ok(CarrierRecord {
        fs,
        omega_m: p.omega_m,
        samples,
        seed: key.seed,
        realization: key.realization,
        params_hash: p.params_hash(),
    })
}
