//! Forward (predictive) and backward (retrodictive) Gaussian filters.
//!
//! Both run the sampled Kalman recursion of [`crate::riccati`] on a baseband
//! record. The forward mean at sample k uses samples 0..k; the backward mean
//! at sample k uses samples k..n.

use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::DerivedRates;
use crate::riccati::{
    backward_schedule, discrete_steady, forward_schedule, step_decay, Direction, Schedule,
};
use crate::simulate::MeasurementRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimateKind {
    Predicted,
    Retrodicted,
}

impl EstimateKind {
    fn direction(self) -> Direction {
        match self {
            EstimateKind::Predicted => Direction::Forward,
            EstimateKind::Retrodicted => Direction::Backward,
        }
    }
}

/// Symmetric Gaussian state of the two quadratures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GaussianState {
    pub mean: [f64; 2],
    pub variance: f64,
    pub kind: EstimateKind,
    pub t: f64,
}

impl GaussianState {
    pub fn new(mean: [f64; 2], variance: f64, kind: EstimateKind, t: f64) -> Result<Self> {
        if !(variance >= 0.5) {
            return Err(Error::Domain { value: variance });
        }
        Ok(Self { mean, variance, kind, t })
    }

    pub fn purity(&self) -> f64 {
        0.5 / self.variance
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateTrajectory {
    pub dt: f64,
    pub kind: EstimateKind,
    pub mean: Vec<[f64; 2]>,
    /// Shared between all realizations filtered with the same settings.
    pub schedule: Arc<Schedule>,
}

impl StateTrajectory {
    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    pub fn duration(&self) -> f64 {
        self.len().saturating_sub(1) as f64 * self.dt
    }

    pub fn variance(&self, k: usize) -> f64 {
        self.schedule.variance[k]
    }

    pub fn conditioned(&self, k: usize) -> bool {
        self.schedule.conditioned[k]
    }

    /// Sample index for time `t`, rounded to the nearest sample.
    pub fn index_of(&self, t: f64) -> Result<usize> {
        let end = self.duration();
        if !(t >= 0.0 && t <= end + 0.5 * self.dt) {
            return Err(Error::Range { t, end });
        }
        Ok(((t / self.dt).round() as usize).min(self.len() - 1))
    }

    pub fn state(&self, k: usize) -> GaussianState {
        GaussianState {
            mean: self.mean[k],
            variance: self.variance(k),
            kind: self.kind,
            t: self.time(k),
        }
    }

    pub fn state_at(&self, t: f64) -> Result<GaussianState> {
        Ok(self.state(self.index_of(t)?))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t_s,rX,rY,V,conditioned\n");
        for k in 0..self.len() {
            let [x, y] = self.mean[k];
            out.push_str(&format!(
                "{:.9e},{x:.12e},{y:.12e},{:.12e},{}\n",
                self.time(k),
                self.variance(k),
                u8::from(self.conditioned(k))
            ));
        }
        out
    }
}

fn check_record(record: &MeasurementRecord, rates: &DerivedRates, schedule: &Schedule) -> Result<()> {
    let expected = rates.params_hash();
    if record.params_hash != 0 && record.params_hash != expected {
        return Err(Error::ParameterMismatch { record: record.params_hash, filter: expected });
    }
    if record.len() != schedule.len() {
        return Err(Error::Length(format!(
            "record has {} samples, filter schedule {}",
            record.len(),
            schedule.len()
        )));
    }
    if (record.dt - schedule.dt).abs() > 1e-9 * schedule.dt {
        return Err(Error::Length(format!(
            "record sampled at dt = {:e} s, filter at {:e} s",
            record.dt, schedule.dt
        )));
    }
    Ok(())
}

/// Forward filter with a precomputed variance schedule, reusable across
/// realizations of the same length.
#[derive(Debug, Clone)]
pub struct ForwardFilter {
    rates: DerivedRates,
    schedule: Arc<Schedule>,
}

impl ForwardFilter {
    /// Starts from mean 0 and variance `v0`; samples from `stop` on are ignored.
    pub fn new(rates: &DerivedRates, dt: f64, n: usize, v0: f64, stop: Option<usize>) -> Result<Self> {
        let schedule = forward_schedule(rates, dt, n, v0, stop)?;
        Ok(Self { rates: *rates, schedule: Arc::new(schedule) })
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    pub fn run(&self, record: &MeasurementRecord) -> Result<StateTrajectory> {
        check_record(record, &self.rates, &self.schedule)?;
        let dt = record.dt;
        let sqrt_c = self.rates.strength().sqrt();
        let a = step_decay(&self.rates, dt);
        let unconditioned = (-0.5 * self.rates.gamma_m() * dt).exp();
        let mut mean = Vec::with_capacity(record.len());
        let mut r = [0.0; 2];
        for (k, i) in record.i.iter().enumerate() {
            mean.push(r);
            if self.schedule.conditioned[k] {
                let g = sqrt_c * self.schedule.gain[k] * dt;
                for q in 0..2 {
                    r[q] = a * (r[q] + g * (i[q] - sqrt_c * r[q]));
                }
            } else {
                r = [r[0] * unconditioned, r[1] * unconditioned];
            }
        }
        Ok(StateTrajectory {
            dt,
            kind: EstimateKind::Predicted,
            mean,
            schedule: Arc::clone(&self.schedule),
        })
    }
}

#[derive(Debug, Clone)]
pub struct BackwardFilter {
    rates: DerivedRates,
    schedule: Arc<Schedule>,
}

impl BackwardFilter {
    /// Starts at the end of the record from mean 0 and width `ve_final`.
    pub fn new(rates: &DerivedRates, dt: f64, n: usize, ve_final: f64) -> Result<Self> {
        let schedule = backward_schedule(rates, dt, n, ve_final)?;
        Ok(Self { rates: *rates, schedule: Arc::new(schedule) })
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    pub fn run(&self, record: &MeasurementRecord) -> Result<StateTrajectory> {
        check_record(record, &self.rates, &self.schedule)?;
        let dt = record.dt;
        let sqrt_c = self.rates.strength().sqrt();
        let a = step_decay(&self.rates, dt);
        let n = record.len();
        let mut mean = vec![[0.0; 2]; n];
        let mut prior = [0.0; 2];
        for k in (0..n).rev() {
            let g = sqrt_c * self.schedule.gain[k] * dt;
            let i = record.i[k];
            let post = [
                prior[0] + g * (i[0] - sqrt_c * prior[0]),
                prior[1] + g * (i[1] - sqrt_c * prior[1]),
            ];
            mean[k] = post;
            prior = [post[0] / a, post[1] / a];
        }
        Ok(StateTrajectory {
            dt,
            kind: EstimateKind::Retrodicted,
            mean,
            schedule: Arc::clone(&self.schedule),
        })
    }
}

/// Forward filter from mean 0 and variance `v0` at the first sample.
pub fn predict(record: &MeasurementRecord, rates: &DerivedRates, v0: f64) -> Result<StateTrajectory> {
    ForwardFilter::new(rates, record.dt, record.len(), v0, None)?.run(record)
}

/// Backward filter from mean 0 and width `ve_final` at the last sample.
pub fn retrodict(record: &MeasurementRecord, rates: &DerivedRates, ve_final: f64) -> Result<StateTrajectory> {
    BackwardFilter::new(rates, record.dt, record.len(), ve_final)?.run(record)
}

/// Drops conditioning from `t_star` on: the mean decays freely and the
/// variance relaxes toward the thermal value.
pub fn predict_unconditioned(
    traj: &StateTrajectory,
    rates: &DerivedRates,
    t_star: f64,
) -> Result<StateTrajectory> {
    if traj.kind != EstimateKind::Predicted {
        return Err(Error::InvalidParameter("free evolution applies to predicted trajectories".into()));
    }
    let stop = traj.index_of(t_star)?;
    let v0 = traj.variance(0);
    let schedule = forward_schedule(rates, traj.dt, traj.len(), v0, Some(stop))?;
    let decay = (-0.5 * rates.gamma_m() * traj.dt).exp();
    let mut mean = traj.mean.clone();
    for k in stop + 1..mean.len() {
        mean[k] = [mean[k - 1][0] * decay, mean[k - 1][1] * decay];
    }
    Ok(StateTrajectory { dt: traj.dt, kind: traj.kind, mean, schedule: Arc::new(schedule) })
}

/// Samples at the open end of a steady-kernel estimate still affected by
/// the truncated record.
pub fn kernel_edge(rates: &DerivedRates, dt: f64) -> usize {
    (5.0 / (rates.alpha * dt)).ceil() as usize
}

/// Steady-state filter as an explicit convolution with an exponential
/// kernel. Matches the recursive filters once their schedules have settled.
pub fn steady_kernel_filter(
    record: &MeasurementRecord,
    rates: &DerivedRates,
    kind: EstimateKind,
) -> Result<StateTrajectory> {
    let dt = record.dt;
    let min_len = 10.0 / rates.alpha;
    if record.duration() < min_len {
        return Err(Error::Length(format!(
            "record of {:e} s is shorter than 10 relaxation times ({min_len:e} s)",
            record.duration()
        )));
    }
    if rates.gamma_meas() == 0.0 {
        return Err(Error::InvalidParameter("steady kernels need gamma_meas > 0".into()));
    }
    let c = rates.strength();
    let sqrt_c = c.sqrt();
    let a = step_decay(rates, dt);
    let (prior_ss, post_b) = discrete_steady(rates, dt);
    let (variance, weight, rho, lead) = match kind {
        EstimateKind::Predicted => {
            let post = prior_ss / (1.0 + c * prior_ss * dt);
            let rho = a * (1.0 - c * post * dt);
            (prior_ss, a * sqrt_c * post * dt, rho, 1)
        }
        EstimateKind::Retrodicted => {
            let rho = (1.0 - c * post_b * dt) / a;
            (post_b, sqrt_c * post_b * dt, rho, 0)
        }
    };
    let taps = (f64::EPSILON.ln() / rho.ln()).ceil() as usize;
    let kernel: Vec<f64> = (0..taps).map(|j| weight * rho.powi(j as i32)).collect();

    let n = record.len();
    let mut mean = vec![[0.0; 2]; n];
    for (k, m) in mean.iter_mut().enumerate() {
        for (j, h) in kernel.iter().enumerate() {
            let src = match kind {
                EstimateKind::Predicted => k.checked_sub(j + lead),
                EstimateKind::Retrodicted => Some(k + j).filter(|s| *s < n),
            };
            let Some(src) = src else { break };
            m[0] += h * record.i[src][0];
            m[1] += h * record.i[src][1];
        }
    }
    let schedule = Schedule {
        dt,
        direction: kind.direction(),
        variance: vec![variance; n],
        gain: vec![variance; n],
        conditioned: vec![true; n],
    };
    Ok(StateTrajectory { dt, kind, mean, schedule: Arc::new(schedule) })
}

/// Raw innovations i_k·dt − √(4Γ_meas)·r_k·dt of a forward estimate.
pub fn innovations(record: &MeasurementRecord, traj: &StateTrajectory, rates: &DerivedRates) -> Vec<[f64; 2]> {
    let sqrt_c = rates.strength().sqrt();
    record
        .i
        .iter()
        .zip(&traj.mean)
        .map(|(i, r)| {
            [
                (i[0] - sqrt_c * r[0]) * record.dt,
                (i[1] - sqrt_c * r[1]) * record.dt,
            ]
        })
        .collect()
}

/// Innovations scaled to unit variance using the prior variance of each
/// sample. Only conditioned samples are returned.
pub fn normalized_innovations(
    record: &MeasurementRecord,
    traj: &StateTrajectory,
    rates: &DerivedRates,
) -> Vec<[f64; 2]> {
    let c = rates.strength();
    let dt = record.dt;
    innovations(record, traj, rates)
        .into_iter()
        .enumerate()
        .filter(|(k, _)| traj.conditioned(*k))
        .map(|(k, w)| {
            let s = (dt * (1.0 + c * traj.variance(k) * dt)).sqrt();
            [w[0] / s, w[1] / s]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{derive_rates, ModelParams};
    use crate::rng::RngKey;
    use crate::simulate::{measure, simulate_truth};
    use proptest::prelude::*;

    const DT: f64 = 1e-6;

    fn setup(n: usize, realization: u64) -> (DerivedRates, MeasurementRecord) {
        let p = ModelParams::reference();
        let r = derive_rates(&p).unwrap();
        let key = RngKey::new(99).realization(realization);
        let truth = simulate_truth(&p, DT, n, key).unwrap();
        (r, measure(&truth, &p, key))
    }

    #[test]
    fn scalar_kalman_oracle_agrees() {
        // textbook predict/update loop written independently
        let (r, rec) = setup(500, 0);
        let traj = predict(&rec, &r, r.v_bath).unwrap();
        let (a, q, h) = (1.0 - 0.5 * r.gamma_m() * DT, r.diffusion() * DT, r.strength().sqrt() * DT);
        let (mut m, mut p) = (0.0, r.v_bath);
        for k in 0..rec.len() {
            assert!((traj.mean[k][0] - m).abs() < 1e-12 * (1.0 + m.abs()));
            assert!((traj.variance(k) - p).abs() < 1e-12);
            let s = h * h * p + DT;
            let gain = p * h / s;
            let mp = m + gain * (rec.i[k][0] * DT - h * m);
            let pp = p - gain * h * p;
            m = a * mp;
            p = a * a * pp + q;
        }
    }

    #[test]
    fn parameter_mismatch_rejected() {
        let (_, rec) = setup(100, 0);
        let other = derive_rates(&ModelParams::reference().with_gamma_meas(1e3)).unwrap();
        let err = predict(&rec, &other, other.v_bath).unwrap_err();
        assert!(matches!(err, Error::ParameterMismatch { .. }));
    }

    #[test]
    fn gaussian_state_domain() {
        assert!(GaussianState::new([0.0; 2], 0.4, EstimateKind::Predicted, 0.0).is_err());
        let s = GaussianState::new([0.0; 2], 0.5, EstimateKind::Predicted, 0.0).unwrap();
        assert_eq!(s.purity(), 1.0);
    }

    #[test]
    fn time_reversal_of_the_backward_filter() {
        // retrodicting a reversed record with flipped damping equals running
        // the same algebra forward
        let (r, rec) = setup(800, 2);
        let back = retrodict(&rec, &r, r.v_bath).unwrap();
        let c = r.strength();
        let sqrt_c = c.sqrt();
        let a = step_decay(&r, DT);
        let q = r.diffusion() * DT;
        let (mut m, mut b) = ([0.0; 2], r.v_bath);
        for k in (0..rec.len()).rev() {
            let post = b / (1.0 + c * b * DT);
            for d in 0..2 {
                m[d] += sqrt_c * post * DT * (rec.i[k][d] - sqrt_c * m[d]);
            }
            assert!((back.mean[k][0] - m[0]).abs() < 1e-12 * (1.0 + m[0].abs()));
            assert!((back.variance(k) - post).abs() < 1e-12);
            m = [m[0] / a, m[1] / a];
            b = (post + q) / (a * a);
        }
    }

    #[test]
    fn unconditioned_continuation() {
        let (r, rec) = setup(3000, 3);
        let traj = predict(&rec, &r, r.v_bath).unwrap();
        let t_star = 1e-3;
        let free = predict_unconditioned(&traj, &r, t_star).unwrap();
        let ks = 1000;
        assert_eq!(&free.mean[..=ks], &traj.mean[..=ks]);
        let decay = (-0.5 * r.gamma_m() * DT).exp();
        for k in ks + 1..free.len() {
            let expect = free.mean[ks][0] * decay.powi((k - ks) as i32);
            assert!((free.mean[k][0] - expect).abs() < 1e-12 * (1.0 + expect.abs()));
            assert!(!free.conditioned(k));
            assert!(free.variance(k) >= free.variance(k - 1));
        }
        // same result as stopping the forward filter directly
        let stopped = ForwardFilter::new(&r, DT, rec.len(), r.v_bath, Some(ks)).unwrap().run(&rec).unwrap();
        for k in 0..rec.len() {
            assert!((stopped.mean[k][1] - free.mean[k][1]).abs() < 1e-12 * (1.0 + free.mean[k][1].abs()));
        }
        assert!(matches!(predict_unconditioned(&traj, &r, 1.0), Err(Error::Range { .. })));
        let at_zero = predict_unconditioned(&traj, &r, 0.0).unwrap();
        assert!(at_zero.mean.iter().all(|m| *m == [0.0, 0.0]));
    }

    #[test]
    fn kernel_matches_recursion_after_transient() {
        let (r, rec) = setup(3200, 4);
        let tol = 1e-3 * r.v_bath.sqrt();
        let edge = kernel_edge(&r, DT);

        let fwd = predict(&rec, &r, r.v_bath).unwrap();
        let kf = steady_kernel_filter(&rec, &r, EstimateKind::Predicted).unwrap();
        for k in 2 * edge..rec.len() {
            for d in 0..2 {
                assert!((fwd.mean[k][d] - kf.mean[k][d]).abs() < tol, "k={k}");
            }
        }
        let bwd = retrodict(&rec, &r, r.v_bath).unwrap();
        let kb = steady_kernel_filter(&rec, &r, EstimateKind::Retrodicted).unwrap();
        for k in 0..rec.len() - 2 * edge {
            for d in 0..2 {
                assert!((bwd.mean[k][d] - kb.mean[k][d]).abs() < tol, "k={k}");
            }
        }
        let short = rec.skip(rec.len() - 100);
        assert!(matches!(
            steady_kernel_filter(&short, &r, EstimateKind::Predicted),
            Err(Error::Length(_))
        ));
    }

    #[test]
    fn retrodiction_needs_measurement() {
        let (_, rec) = setup(100, 0);
        let r0 = derive_rates(&ModelParams::reference().with_gamma_meas(0.0)).unwrap();
        let rec = MeasurementRecord::new(rec.dt, rec.i);
        assert!(retrodict(&rec, &r0, 1.0).is_err());
    }

    #[test]
    fn innovations_are_white_unit_variance() {
        let mut acc = 0.0;
        let mut lag1 = 0.0;
        let mut count = 0.0;
        for k in 0..4 {
            let (r, rec) = setup(20_000, 10 + k);
            let traj = predict(&rec, &r, r.v_bath).unwrap();
            let z = normalized_innovations(&rec, &traj, &r);
            for w in z.windows(2) {
                acc += w[0][0] * w[0][0] + w[0][1] * w[0][1];
                lag1 += w[0][0] * w[1][0] + w[0][1] * w[1][1];
                count += 2.0;
            }
        }
        let var = acc / count;
        let rho = lag1 / acc;
        assert!((var - 1.0).abs() < 0.01, "{var}");
        assert!(rho.abs() < 0.01, "{rho}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn filters_are_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, s1 in 0u64..50, s2 in 50u64..100) {
            let (r, rec1) = setup(400, s1);
            let (_, rec2) = setup(400, s2);
            let mix = rec1.combine(a, &rec2, b).unwrap();
            for kind in [EstimateKind::Predicted, EstimateKind::Retrodicted] {
                let run = |rec: &MeasurementRecord| match kind {
                    EstimateKind::Predicted => predict(rec, &r, r.v_bath).unwrap(),
                    EstimateKind::Retrodicted => retrodict(rec, &r, r.v_bath).unwrap(),
                };
                let (f1, f2, fm) = (run(&rec1), run(&rec2), run(&mix));
                for k in 0..rec1.len() {
                    for d in 0..2 {
                        let expect = a * f1.mean[k][d] + b * f2.mean[k][d];
                        prop_assert!((fm.mean[k][d] - expect).abs() < 1e-9 * (1.0 + expect.abs()));
                    }
                }
            }
        }

        #[test]
        fn variance_respects_quantum_bound(n in 10usize..300, v0 in 0.5f64..40.0) {
            let (r, rec) = setup(n, 1);
            let f = predict(&rec, &r, v0).unwrap();
            let b = retrodict(&rec, &r, v0).unwrap();
            for k in 0..n {
                prop_assert!(f.variance(k) >= 0.5 && b.variance(k) >= 0.5);
            }
        }
    }
}
