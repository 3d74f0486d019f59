//! IQ demodulation of carrier-rate photocurrents and PSD estimation.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::rad_to_hz;
use crate::simulate::{CarrierRecord, MeasurementRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterMode {
    #[default]
    Causal,
    /// Forward then time-reversed pass; squares the magnitude response.
    ZeroPhase,
}

/// Low-pass applied to each demodulated quadrature: `stages` cascaded
/// Butterworth filters of `order`, each −3 dB at `cutoff_hz`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DemodFilterSpec {
    pub order: usize,
    pub stages: usize,
    pub cutoff_hz: f64,
    pub mode: FilterMode,
    /// Output decimation; `None` picks the largest factor keeping the
    /// baseband rate at least 8× the cutoff.
    pub decimation: Option<usize>,
}

impl Default for DemodFilterSpec {
    fn default() -> Self {
        Self { order: 7, stages: 2, cutoff_hz: 60e3, mode: FilterMode::Causal, decimation: None }
    }
}

impl DemodFilterSpec {
    fn validate(&self) -> Result<()> {
        if self.order == 0 || self.stages == 0 {
            return Err(Error::Unstable("order and stages must be at least 1".into()));
        }
        if !(self.cutoff_hz > 0.0 && self.cutoff_hz.is_finite()) {
            return Err(Error::Unstable(format!("cutoff must be positive, got {}", self.cutoff_hz)));
        }
        Ok(())
    }

    /// |D(f)|² of the analog prototype at baseband frequency `f_hz`.
    pub fn power_response(&self, f_hz: f64) -> f64 {
        let x = (f_hz / self.cutoff_hz).abs();
        let passes = match self.mode {
            FilterMode::Causal => self.stages,
            FilterMode::ZeroPhase => 2 * self.stages,
        } as i32;
        (1.0 / (1.0 + x.powi(2 * self.order as i32))).powi(passes)
    }

    /// Slowest pole decay time of one Butterworth section, seconds.
    pub fn time_constant(&self) -> f64 {
        1.0 / (TAU * self.cutoff_hz * (PI / (2.0 * self.order as f64)).sin())
    }

    pub fn decimation_for(&self, fs: f64) -> Result<usize> {
        let max = (fs / (8.0 * self.cutoff_hz)).floor() as usize;
        let d = self.decimation.unwrap_or(max);
        if d == 0 || d > max {
            return Err(Error::Aliasing(format!(
                "decimation {d} leaves a baseband rate below 8× the {} Hz cutoff",
                self.cutoff_hz
            )));
        }
        Ok(d)
    }

    /// Biquad sections realizing the full cascade at sampling rate `fs`.
    pub fn design(&self, fs: f64) -> Result<Cascade> {
        self.validate()?;
        if self.cutoff_hz >= 0.5 * fs {
            return Err(Error::Aliasing(format!(
                "cutoff {} Hz at or above Nyquist {} Hz",
                self.cutoff_hz,
                0.5 * fs
            )));
        }
        let one = butterworth_sections(self.order, self.cutoff_hz, fs);
        let mut sections = Vec::with_capacity(one.len() * self.stages);
        for _ in 0..self.stages {
            sections.extend(one.iter().copied());
        }
        let cascade = Cascade { sections };
        cascade.check_stable()?;
        Ok(cascade)
    }
}

/// Second-order section, transposed direct form II. First-order sections
/// carry b2 = a2 = 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    /// a1, a2 with a0 = 1.
    pub a: [f64; 2],
}

impl Biquad {
    pub fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }

    /// Pole radii.
    fn pole_radius(&self) -> f64 {
        let (a1, a2) = (self.a[0], self.a[1]);
        let disc = a1 * a1 - 4.0 * a2;
        if disc >= 0.0 {
            let s = disc.sqrt();
            ((-a1 + s) / 2.0).abs().max(((-a1 - s) / 2.0).abs())
        } else {
            a2.sqrt()
        }
    }

    fn response(&self, z_inv: Complex64) -> Complex64 {
        let z2 = z_inv * z_inv;
        (self.b[0] + self.b[1] * z_inv + self.b[2] * z2) / (1.0 + self.a[0] * z_inv + self.a[1] * z2)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cascade {
    pub sections: Vec<Biquad>,
}

impl Cascade {
    fn check_stable(&self) -> Result<()> {
        for (k, s) in self.sections.iter().enumerate() {
            let r = s.pole_radius();
            if !(r < 1.0) {
                return Err(Error::Unstable(format!("section {k} has a pole at radius {r}")));
            }
        }
        Ok(())
    }

    pub fn dc_gain(&self) -> f64 {
        self.sections.iter().map(Biquad::dc_gain).product()
    }

    /// Complex response at frequency `f_hz` for sampling rate `fs`.
    pub fn response(&self, f_hz: f64, fs: f64) -> Complex64 {
        let z_inv = Complex64::from_polar(1.0, -TAU * f_hz / fs);
        self.sections.iter().map(|s| s.response(z_inv)).product()
    }

    /// Filter `x` in place.
    pub fn apply(&self, x: &mut [f64]) {
        for s in &self.sections {
            let (mut z1, mut z2) = (0.0, 0.0);
            for v in x.iter_mut() {
                let input = *v;
                let out = s.b[0] * input + z1;
                z1 = s.b[1] * input - s.a[0] * out + z2;
                z2 = s.b[2] * input - s.a[1] * out;
                *v = out;
            }
        }
    }

    fn apply_mode(&self, x: &mut [f64], mode: FilterMode) {
        self.apply(x);
        if mode == FilterMode::ZeroPhase {
            x.reverse();
            self.apply(x);
            x.reverse();
        }
    }
}

/// Bilinear-transform Butterworth low-pass with prewarped cutoff, DC gain 1.
fn butterworth_sections(order: usize, cutoff_hz: f64, fs: f64) -> Vec<Biquad> {
    let k = 2.0 * fs;
    let warped = k * (PI * cutoff_hz / fs).tan();
    let n = order as f64;
    let mut out = Vec::new();
    for j in 0..order / 2 {
        let theta = PI * (2.0 * j as f64 + n + 1.0) / (2.0 * n);
        let s = Complex64::from_polar(warped, theta);
        let z = (1.0 + s / k) / (1.0 - s / k);
        let a1 = -2.0 * z.re;
        let a2 = z.norm_sqr();
        let g = (1.0 + a1 + a2) / 4.0;
        out.push(Biquad { b: [g, 2.0 * g, g], a: [a1, a2] });
    }
    if order % 2 == 1 {
        let z = (1.0 - warped / k) / (1.0 + warped / k);
        let g = (1.0 - z) / 2.0;
        out.push(Biquad { b: [g, g, 0.0], a: [-z, 0.0] });
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Demodulated {
    pub record: MeasurementRecord,
    /// Leading samples still inside the filter transient.
    pub settle_samples: usize,
}

impl Demodulated {
    /// The record with the transient removed.
    pub fn valid(&self) -> MeasurementRecord {
        self.record.skip(self.settle_samples)
    }
}

/// i_X = LP[2·I·cos Ω_m t], i_Y = LP[2·I·sin Ω_m t], decimated to baseband.
pub fn demodulate(carrier: &CarrierRecord, omega_m: f64, spec: &DemodFilterSpec) -> Result<Demodulated> {
    let fs = carrier.fs;
    let cascade = spec.design(fs)?;
    let f_m = rad_to_hz(omega_m);
    if f_m + spec.cutoff_hz >= 0.5 * fs {
        return Err(Error::Aliasing(format!(
            "carrier rate {fs:e} Hz cannot represent {f_m:e} Hz + {} Hz",
            spec.cutoff_hz
        )));
    }
    let decimation = spec.decimation_for(fs)?;

    let phase_step = omega_m / fs;
    let mut ix = Vec::with_capacity(carrier.len());
    let mut iy = Vec::with_capacity(carrier.len());
    for (j, &v) in carrier.samples.iter().enumerate() {
        let (s, c) = (j as f64 * phase_step).sin_cos();
        ix.push(2.0 * v * c);
        iy.push(2.0 * v * s);
    }
    cascade.apply_mode(&mut ix, spec.mode);
    cascade.apply_mode(&mut iy, spec.mode);

    let i: Vec<[f64; 2]> = ix
        .iter()
        .zip(&iy)
        .step_by(decimation)
        .map(|(x, y)| [*x, *y])
        .collect();
    let dt = decimation as f64 / fs;
    let settle = 5.0 * spec.stages as f64 * spec.time_constant();
    let settle_samples = ((settle / dt).ceil() as usize).min(i.len());
    Ok(Demodulated {
        record: MeasurementRecord {
            dt,
            i,
            seed: carrier.seed,
            realization: carrier.realization,
            params_hash: carrier.params_hash,
        },
        settle_samples,
    })
}

/// i_X cos Ω_m t + i_Y sin Ω_m t at the record's own rate.
pub fn remodulate(record: &MeasurementRecord, omega_m: f64) -> Vec<f64> {
    record
        .i
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let (sn, c) = (omega_m * k as f64 * record.dt).sin_cos();
            s[0] * c + s[1] * sn
        })
        .collect()
}

/// Averaged-periodogram PSD on f ≥ 0.
///
/// `density` is scaled so that white noise of per-sample variance σ² reads
/// σ²·dt: a shot-noise-normalized record sits at 1. Integrating over both
/// signs of frequency ([`Psd::integral`]) returns the variance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Psd {
    pub freq: Vec<f64>,
    pub density: Vec<f64>,
    pub window: &'static str,
    pub segment_len: usize,
    pub overlap: f64,
    pub averages: usize,
}

impl Psd {
    pub fn df(&self) -> f64 {
        self.freq.get(1).copied().unwrap_or(0.0)
    }

    /// ∫ S df over (−∞, ∞).
    pub fn integral(&self) -> f64 {
        self.integrate_band(f64::NEG_INFINITY, f64::INFINITY)
    }

    /// ∫ S df over f_lo ≤ |f| ≤ f_hi, both signs.
    pub fn integrate_band(&self, f_lo: f64, f_hi: f64) -> f64 {
        let last = self.freq.len() - 1;
        let even = self.segment_len.is_multiple_of(2);
        let df = self.df();
        self.freq
            .iter()
            .zip(&self.density)
            .enumerate()
            .filter(|(_, (f, _))| **f >= f_lo && **f <= f_hi)
            .map(|(k, (_, s))| {
                let single = k == 0 || (even && k == last);
                if single { s * df } else { 2.0 * s * df }
            })
            .sum()
    }

    /// Mean density over f_lo ≤ f ≤ f_hi.
    pub fn mean_density(&self, f_lo: f64, f_hi: f64) -> f64 {
        let (sum, n) = self
            .freq
            .iter()
            .zip(&self.density)
            .filter(|(f, _)| **f >= f_lo && **f <= f_hi)
            .fold((0.0, 0usize), |(s, n), (_, d)| (s + d, n + 1));
        sum / n as f64
    }

    pub fn scale(&self, c: f64) -> Psd {
        Psd { density: self.density.iter().map(|d| d * c).collect(), ..self.clone() }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("freq_hz,psd\n");
        for (f, s) in self.freq.iter().zip(&self.density) {
            out.push_str(&format!("{f:.9e},{s:.12e}\n"));
        }
        out
    }
}

pub fn estimate_psd(samples: &[f64], dt: f64, segment_len: usize, overlap: f64) -> Result<Psd> {
    if segment_len < 2 || segment_len > samples.len() {
        return Err(Error::Length(format!(
            "segment length {segment_len} must be in [2, {}]",
            samples.len()
        )));
    }
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::Length(format!("overlap {overlap} must lie in [0, 1)")));
    }
    let hop = (((1.0 - overlap) * segment_len as f64).round() as usize).max(1);
    let window: Vec<f64> = (0..segment_len)
        .map(|n| 0.5 - 0.5 * (TAU * n as f64 / segment_len as f64).cos())
        .collect();
    let norm: f64 = window.iter().map(|w| w * w).sum();
    let fft = FftPlanner::new().plan_fft_forward(segment_len);
    let bins = segment_len / 2 + 1;
    let mut acc = vec![0.0; bins];
    let mut buf = vec![Complex64::new(0.0, 0.0); segment_len];
    let mut averages = 0;
    let mut start = 0;
    while start + segment_len <= samples.len() {
        for (b, (x, w)) in buf.iter_mut().zip(samples[start..].iter().zip(&window)) {
            *b = Complex64::new(x * w, 0.0);
        }
        fft.process(&mut buf);
        for (a, b) in acc.iter_mut().zip(&buf) {
            *a += b.norm_sqr();
        }
        averages += 1;
        start += hop;
    }
    let scale = dt / (norm * averages as f64);
    let df = 1.0 / (segment_len as f64 * dt);
    Ok(Psd {
        freq: (0..bins).map(|k| k as f64 * df).collect(),
        density: acc.into_iter().map(|a| a * scale).collect(),
        window: "hann",
        segment_len,
        overlap,
        averages,
    })
}

/// Average of the two channel PSDs of a baseband record.
pub fn record_psd(record: &MeasurementRecord, segment_len: usize, overlap: f64) -> Result<Psd> {
    let x = estimate_psd(&record.channel(0), record.dt, segment_len, overlap)?;
    let y = estimate_psd(&record.channel(1), record.dt, segment_len, overlap)?;
    let density = x.density.iter().zip(&y.density).map(|(a, b)| 0.5 * (a + b)).collect();
    Ok(Psd { density, averages: x.averages + y.averages, ..x })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{derive_rates, hz_to_rad, ModelParams};
    use crate::rng::{Channel, RngKey};
    use crate::simulate::{measure, simulate_truth, synthesize_carrier, TruthTrajectory};

    const FS: f64 = 16.0 * 1.138e6;

    fn tone(freq_hz: f64, amp: f64, n: usize, fs: f64) -> CarrierRecord {
        CarrierRecord {
            fs,
            omega_m: hz_to_rad(1.138e6),
            samples: (0..n).map(|j| amp * (TAU * freq_hz * j as f64 / fs).cos()).collect(),
            seed: 0,
            realization: 0,
            params_hash: 0,
        }
    }

    #[test]
    fn default_filter_is_stable_with_unit_dc_gain() {
        let c = DemodFilterSpec::default().design(FS).unwrap();
        assert_eq!(c.sections.len(), 8);
        assert!((c.dc_gain() - 1.0).abs() < 1e-9);
        assert!((c.response(0.0, FS).norm() - 1.0).abs() < 1e-9);
        // −3 dB per stage at the cutoff
        let at_cut = c.response(60e3, FS).norm_sqr();
        assert!((at_cut - 0.25).abs() < 1e-3, "{at_cut}");
    }

    #[test]
    fn digital_matches_prototype_in_band() {
        let spec = DemodFilterSpec::default();
        let c = spec.design(FS).unwrap();
        for f in [1e3, 2e4, 5e4, 6e4, 8e4] {
            let d = c.response(f, FS).norm_sqr();
            let a = spec.power_response(f);
            assert!((d - a).abs() < 1e-3 * a.max(1e-3), "{f}: {d} vs {a}");
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        let bad = DemodFilterSpec { order: 0, ..Default::default() };
        assert!(matches!(bad.design(FS), Err(Error::Unstable(_))));
        let bad = DemodFilterSpec { cutoff_hz: -1.0, ..Default::default() };
        assert!(matches!(bad.design(FS), Err(Error::Unstable(_))));
        let carrier = tone(1.138e6, 1.0, 100, 2.2e6);
        let err = demodulate(&carrier, hz_to_rad(1.138e6), &DemodFilterSpec::default());
        assert!(matches!(err, Err(Error::Aliasing(_))));
    }

    #[test]
    fn tone_at_resonance_projects_onto_x() {
        let f_m = 1.138e6;
        let carrier = tone(f_m, 1.0, 40_000, FS);
        let out = demodulate(&carrier, hz_to_rad(f_m), &DemodFilterSpec::default()).unwrap();
        let v = out.valid();
        let tail = &v.i[v.len() / 2..];
        for s in tail {
            assert!((s[0] - 1.0).abs() < 1e-3, "{}", s[0]);
            assert!(s[1].abs() < 1e-3, "{}", s[1]);
        }
    }

    #[test]
    fn out_of_band_tone_is_rejected() {
        let f_m = 1.138e6;
        let carrier = tone(f_m + 500e3, 1.0, 40_000, FS);
        let out = demodulate(&carrier, hz_to_rad(f_m), &DemodFilterSpec::default()).unwrap();
        let v = out.valid();
        let peak = v.i.iter().map(|s| s[0].abs().max(s[1].abs())).fold(0.0, f64::max);
        assert!(peak < 1e-3, "{peak}");
    }

    #[test]
    fn shot_noise_demodulates_to_unit_background() {
        let p = ModelParams::reference();
        let truth = TruthTrajectory::zeros(18.0 / FS, 200_000);
        let carrier = synthesize_carrier(&truth, &p.with_gamma_meas(0.0), FS, RngKey::new(5)).unwrap();
        let spec = DemodFilterSpec { decimation: Some(18), ..Default::default() };
        let out = demodulate(&carrier, p.omega_m, &spec).unwrap().valid();
        let psd = record_psd(&out, 1024, 0.5).unwrap();
        let floor = psd.mean_density(1e3, 20e3);
        assert!((floor - 1.0).abs() < 0.05, "{floor}");
        // colored by the filter: variance follows the noise bandwidth
        let mut var = 0.0;
        for s in &out.i {
            var += s[0] * s[0];
        }
        var /= out.len() as f64;
        let mut bw = 0.0;
        let df = 10.0;
        let mut f = df / 2.0;
        while f < 1e6 {
            bw += 2.0 * spec.power_response(f) * df;
            f += df;
        }
        assert!((var / bw - 1.0).abs() < 0.05, "{var} vs {bw}");
    }

    #[test]
    fn reconstruction_overlays_raw_psd_at_the_peak() {
        let p = ModelParams::reference();
        let dt = 18.0 / FS;
        let mut raw_acc: Option<Psd> = None;
        let mut rec_acc: Option<Psd> = None;
        for k in 0..4 {
            let key = RngKey::new(21).realization(k);
            let truth = simulate_truth(&p, dt, 6000, key).unwrap();
            let carrier = synthesize_carrier(&truth, &p, FS, key).unwrap();
            let spec = DemodFilterSpec { decimation: Some(1), ..Default::default() };
            let out = demodulate(&carrier, p.omega_m, &spec).unwrap();
            let back = remodulate(&out.valid(), p.omega_m);
            let seg = 1 << 16;
            let raw = estimate_psd(&carrier.samples[carrier.len() - back.len()..], 1.0 / FS, seg, 0.5).unwrap();
            let rec = estimate_psd(&back, 1.0 / FS, seg, 0.5).unwrap();
            raw_acc = Some(match raw_acc { None => raw, Some(a) => add(&a, &raw) });
            rec_acc = Some(match rec_acc { None => rec, Some(a) => add(&a, &rec) });
        }
        let (raw, rec) = (raw_acc.unwrap(), rec_acc.unwrap());
        let f_m = rad_to_hz(p.omega_m);
        let band = 3.0 * rad_to_hz(p.gamma_m) + 2.0 * raw.df();
        let a = raw.integrate_band(f_m - band, f_m + band);
        let b = rec.integrate_band(f_m - band, f_m + band);
        assert!((a / b - 1.0).abs() < 0.05, "{a} vs {b}");
        // far outside the band the reconstruction is empty while the raw floor is not
        let far = f_m + 400e3;
        assert!(rec.mean_density(far, far + 50e3) < 1e-3 * raw.mean_density(far, far + 50e3));
    }

    fn add(a: &Psd, b: &Psd) -> Psd {
        Psd {
            density: a.density.iter().zip(&b.density).map(|(x, y)| x + y).collect(),
            averages: a.averages + b.averages,
            ..a.clone()
        }
    }

    #[test]
    fn white_noise_calibration() {
        let dt: f64 = 1e-6;
        let mut s = RngKey::new(8).stream(Channel::ShotX);
        let x: Vec<f64> = (0..512 * 201).map(|_| s.next() / dt.sqrt()).collect();
        let psd = estimate_psd(&x, dt, 512, 0.0).unwrap();
        assert!(psd.averages >= 200);
        let inner = &psd.density[1..psd.density.len() - 1];
        let mean = inner.iter().sum::<f64>() / inner.len() as f64;
        assert!((mean - 1.0).abs() < 0.03, "{mean}");
        let var = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
        assert!((psd.integral() / var - 1.0).abs() < 0.01);
    }

    #[test]
    fn sine_power_and_scaling() {
        let dt = 1e-6;
        let n = 1 << 16;
        let f0 = 64.0 / (1024.0 * dt);
        let amp = 3.0;
        let x: Vec<f64> = (0..n).map(|k| amp * (TAU * f0 * k as f64 * dt).sin()).collect();
        let psd = estimate_psd(&x, dt, 1024, 0.5).unwrap();
        let peak = psd.integrate_band(f0 - 5.0 * psd.df(), f0 + 5.0 * psd.df());
        assert!((peak / (amp * amp / 2.0) - 1.0).abs() < 0.02, "{peak}");
        let scaled: Vec<f64> = x.iter().map(|v| 2.5 * v).collect();
        let psd2 = estimate_psd(&scaled, dt, 1024, 0.5).unwrap();
        let top = psd2.density.iter().copied().fold(0.0, f64::max);
        for (a, b) in psd.density.iter().zip(&psd2.density) {
            assert!((b - 6.25 * a).abs() <= 1e-12 * top);
        }
    }

    #[test]
    fn psd_length_errors() {
        assert!(matches!(estimate_psd(&[0.0; 10], 1.0, 20, 0.0), Err(Error::Length(_))));
        assert!(matches!(estimate_psd(&[0.0; 10], 1.0, 4, 1.0), Err(Error::Length(_))));
    }

    #[test]
    fn measured_record_shows_lorentzian_over_unit_floor() {
        let p = ModelParams::reference();
        let r = derive_rates(&p).unwrap();
        let dt = 1e-6;
        let mut acc: Option<Psd> = None;
        for k in 0..200 {
            let key = RngKey::new(13).realization(k);
            let truth = simulate_truth(&p, dt, 16_384, key).unwrap();
            let rec = measure(&truth, &p, key);
            let psd = record_psd(&rec, 16_384, 0.0).unwrap();
            acc = Some(match acc { None => psd, Some(a) => add(&a, &psd) });
        }
        let acc = acc.unwrap();
        let psd = acc.scale(1.0 / 200.0);
        let floor = psd.mean_density(100e3, 400e3);
        assert!((floor - 1.0).abs() < 0.03, "{floor}");
        // sum rule: ∫(S − 1) df = 4Γ_meas·V_bath
        let excess: f64 = psd.integral() - psd.freq.last().unwrap() * 2.0;
        let expect = 4.0 * p.gamma_meas * r.v_bath;
        assert!((excess / expect - 1.0).abs() < 0.1, "{excess} vs {expect}");
    }
}
