//! Deterministic conditional-variance dynamics.
//!
//! Forward (prediction):  V̇ = −Γ_m V + Γ_m V_bath − 4Γ_meas V²
//! Backward (retrodiction, τ = time before the final condition):
//!                       dV_E/dτ = +Γ_m V_E + Γ_m V_bath − 4Γ_meas V_E²
//!
//! Both are logistic Riccati equations. The forward one has roots V and −V_E,
//! the backward one V_E and −V, and both relax at k = 8Γ_meas V + Γ_m.
//!
//! The filters run on a sampled record, so this module also provides the
//! discrete-time variance schedules they consume. Those are exact for the
//! sampled model and converge to the continuous curves as dt → 0.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::DerivedRates;

/// Relative distance from the fixed point below which a variance counts as steady.
pub const STEADY_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Backward,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceCurve {
    /// Seconds. For backward curves this is the time before the final condition.
    pub t: Vec<f64>,
    pub v: Vec<f64>,
    pub direction: Direction,
}

impl VarianceCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t_s,v\n");
        for (t, v) in self.t.iter().zip(&self.v) {
            out.push_str(&format!("{t:.9e},{v:.12e}\n"));
        }
        out
    }
}

fn check_quantum(v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.5 {
        Ok(())
    } else {
        Err(Error::Domain { value: v })
    }
}

/// Attracting and repelling roots of the Riccati right-hand side.
fn roots(r: &DerivedRates, direction: Direction) -> (f64, f64) {
    match direction {
        Direction::Forward => (r.v_steady, -r.v_e_steady),
        Direction::Backward => (r.v_e_steady, -r.v_steady),
    }
}

/// Relaxation rate 8Γ_meas·V + Γ_m shared by both directions.
pub fn collapse_rate(r: &DerivedRates) -> f64 {
    8.0 * r.gamma_meas() * r.v_steady + r.gamma_m()
}

fn logistic(attract: f64, repel: f64, k: f64, x0: f64, t: f64) -> f64 {
    if t == 0.0 {
        return x0;
    }
    if x0 == attract {
        return attract;
    }
    // u/(u + attract − repel) = C e^{−kt} with u = x − attract
    let c = (x0 - attract) / (x0 - repel);
    let w = c * (-k * t).exp();
    attract + (attract - repel) * w / (1.0 - w)
}

fn relaxation(r: &DerivedRates, x0: f64, t: f64) -> f64 {
    // Γ_meas = 0: linear relaxation toward V_bath at rate Γ_m.
    if t == 0.0 {
        return x0;
    }
    r.v_bath + (x0 - r.v_bath) * (-r.gamma_m() * t).exp()
}

/// Closed-form predicted variance V(t) from V(0) = v0.
pub fn v_analytic(r: &DerivedRates, v0: f64, t: f64) -> Result<f64> {
    check_quantum(v0)?;
    if !(t >= 0.0) {
        return Err(Error::Grid(format!("negative time {t}")));
    }
    if r.gamma_meas() == 0.0 {
        return Ok(relaxation(r, v0, t));
    }
    let (a, b) = roots(r, Direction::Forward);
    Ok(logistic(a, b, collapse_rate(r), v0, t))
}

/// Closed-form retrodicted variance V_E a time `t_before_end` ahead of the
/// final condition `ve_final`.
pub fn v_e_backward(r: &DerivedRates, ve_final: f64, t_before_end: f64) -> Result<f64> {
    check_quantum(ve_final)?;
    if !(t_before_end >= 0.0) {
        return Err(Error::Grid(format!("negative time {t_before_end}")));
    }
    if r.gamma_meas() == 0.0 {
        return Err(Error::InvalidParameter(
            "retrodiction needs gamma_meas > 0".into(),
        ));
    }
    let (a, b) = roots(r, Direction::Backward);
    Ok(logistic(a, b, collapse_rate(r), ve_final, t_before_end))
}

pub fn analytic_curve(
    r: &DerivedRates,
    v0: f64,
    t_grid: &[f64],
    direction: Direction,
) -> Result<VarianceCurve> {
    let v = t_grid
        .iter()
        .map(|&t| match direction {
            Direction::Forward => v_analytic(r, v0, t),
            Direction::Backward => v_e_backward(r, v0, t),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(VarianceCurve { t: t_grid.to_vec(), v, direction })
}

/// Time after which |V(t) − V| < [`STEADY_TOLERANCE`]·V.
pub fn time_to_steady(r: &DerivedRates, v0: f64) -> Result<f64> {
    check_quantum(v0)?;
    let target = r.v_steady;
    if (v0 - target).abs() < STEADY_TOLERANCE * target {
        return Ok(0.0);
    }
    if r.gamma_meas() == 0.0 {
        let ratio = STEADY_TOLERANCE * target / (v0 - target).abs();
        return Ok(-ratio.ln() / r.gamma_m());
    }
    // |u| = span·|w|/|1 − w| ≤ tol·V  ⇔  |w| ≤ ε/(1 + ε) for w of either sign
    // (slightly conservative for w < 0)
    let (a, b) = roots(r, Direction::Forward);
    let span = a - b;
    let c = ((v0 - a) / (v0 - b)).abs();
    let eps = STEADY_TOLERANCE * target / span;
    let w = eps / (1.0 + eps);
    Ok(((c / w).ln() / collapse_rate(r)).max(0.0))
}

fn riccati_rhs(r: &DerivedRates, direction: Direction, v: f64) -> f64 {
    let damping = match direction {
        Direction::Forward => -r.gamma_m() * v,
        Direction::Backward => r.gamma_m() * v,
    };
    damping + r.diffusion() - 4.0 * r.gamma_meas() * v * v
}

/// Local stiffness |∂f/∂V| = Γ_m + 8Γ_meas·V.
fn stiffness(r: &DerivedRates, v: f64) -> f64 {
    8.0 * r.gamma_meas() * v.abs() + r.gamma_m()
}

/// Classical fixed-step RK4 integration of the Riccati equation, used as an
/// independent oracle for the closed forms. `t_grid` must be uniform and fine
/// enough that step·(8Γ_meas·v0 + Γ_m) < 0.1; internally each grid interval is
/// subdivided so that every RK4 step satisfies h·(8Γ_meas·V + Γ_m) ≤ 10⁻³.
pub fn v_ode_oracle(
    r: &DerivedRates,
    v0: f64,
    t_grid: &[f64],
    direction: Direction,
) -> Result<VarianceCurve> {
    check_quantum(v0)?;
    if t_grid.len() < 2 {
        return Err(Error::Grid("need at least two grid points".into()));
    }
    let step = t_grid[1] - t_grid[0];
    if !(step > 0.0) {
        return Err(Error::Grid("grid must be increasing".into()));
    }
    for w in t_grid.windows(2) {
        if ((w[1] - w[0]) - step).abs() > 1e-6 * step + 8.0 * f64::EPSILON * w[1].abs() {
            return Err(Error::Grid("grid must be uniform".into()));
        }
    }
    if step * stiffness(r, v0) >= 0.1 {
        return Err(Error::StepSize(format!(
            "grid step {step:e} s is too coarse: step·(8Γ_meas·v0 + Γ_m) = {:.3} ≥ 0.1",
            step * stiffness(r, v0)
        )));
    }

    let f = |v: f64| riccati_rhs(r, direction, v);
    let mut v = v0;
    let mut out = Vec::with_capacity(t_grid.len());
    out.push(v);
    for _ in 1..t_grid.len() {
        let substeps = (step * stiffness(r, v) / 1e-3).ceil().max(1.0) as usize;
        let h = step / substeps as f64;
        for _ in 0..substeps {
            let k1 = f(v);
            let k2 = f(v + 0.5 * h * k1);
            let k3 = f(v + 0.5 * h * k2);
            let k4 = f(v + h * k3);
            v += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        out.push(v);
    }
    Ok(VarianceCurve { t: t_grid.to_vec(), v: out, direction })
}

/// Variance bookkeeping for a sampled record with step `dt`.
///
/// Sample k of the record reads i_k dt = √(4Γ_meas)·x_k dt + dW_k, and the
/// state propagates as x_{k+1} = a·x_k + √(D dt)·ξ_k with a = 1 − Γ_m dt/2.
/// `variance[k]` is the conditional variance attached to the trajectory point
/// at sample k, `gain[k]` the variance multiplying the innovation of sample k.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub dt: f64,
    pub direction: Direction,
    pub variance: Vec<f64>,
    pub gain: Vec<f64>,
    /// Whether sample k of the record was used.
    pub conditioned: Vec<bool>,
}

impl Schedule {
    pub fn len(&self) -> usize {
        self.variance.len()
    }

    pub fn is_empty(&self) -> bool {
        self.variance.is_empty()
    }
}

/// Per-step state decay 1 − Γ_m dt/2.
pub fn step_decay(r: &DerivedRates, dt: f64) -> f64 {
    1.0 - 0.5 * r.gamma_m() * dt
}

fn check_dt(r: &DerivedRates, dt: f64) -> Result<()> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::StepSize(format!("dt must be positive, got {dt}")));
    }
    if r.gamma_m() * dt >= 0.1 {
        return Err(Error::StepSize(format!(
            "dt = {dt:e} s does not resolve Γ_m (Γ_m·dt = {:.3})",
            r.gamma_m() * dt
        )));
    }
    Ok(())
}

/// Forward schedule. `variance[k]` is the variance of x_k given samples
/// 0..k (exclusive), starting from `v0` at k = 0. Samples at or after
/// `stop` are ignored, after which the variance relaxes toward V_bath.
pub fn forward_schedule(
    r: &DerivedRates,
    dt: f64,
    n: usize,
    v0: f64,
    stop: Option<usize>,
) -> Result<Schedule> {
    check_quantum(v0)?;
    check_dt(r, dt)?;
    let c = r.strength();
    let a = step_decay(r, dt);
    let q = r.diffusion() * dt;
    let relax = (-r.gamma_m() * dt).exp();
    let stop = stop.unwrap_or(n).min(n);

    let mut variance = Vec::with_capacity(n);
    let mut gain = Vec::with_capacity(n);
    let mut conditioned = Vec::with_capacity(n);
    let mut p = v0;
    for k in 0..n {
        variance.push(p);
        if k < stop {
            let post = p / (1.0 + c * p * dt);
            gain.push(post);
            conditioned.push(true);
            p = a * a * post + q;
        } else {
            gain.push(0.0);
            conditioned.push(false);
            p = r.v_bath + (p - r.v_bath) * relax;
        }
    }
    Ok(Schedule { dt, direction: Direction::Forward, variance, gain, conditioned })
}

/// Backward schedule. `variance[k]` is the width of the effect operator at
/// sample k given samples k..n (inclusive of k); `ve_final` is the width
/// before the last sample is absorbed.
pub fn backward_schedule(r: &DerivedRates, dt: f64, n: usize, ve_final: f64) -> Result<Schedule> {
    check_quantum(ve_final)?;
    check_dt(r, dt)?;
    if r.gamma_meas() == 0.0 {
        return Err(Error::InvalidParameter("retrodiction needs gamma_meas > 0".into()));
    }
    let c = r.strength();
    let a = step_decay(r, dt);
    let q = r.diffusion() * dt;

    let mut variance = vec![0.0; n];
    let mut b = ve_final;
    for k in (0..n).rev() {
        let post = b / (1.0 + c * b * dt);
        variance[k] = post;
        b = (post + q) / (a * a);
    }
    Ok(Schedule {
        dt,
        direction: Direction::Backward,
        gain: variance.clone(),
        variance,
        conditioned: vec![true; n],
    })
}

/// Fixed points of the sampled schedules: (forward prior variance,
/// backward posterior variance). Both tend to (V, V_E) as dt → 0.
pub fn discrete_steady(r: &DerivedRates, dt: f64) -> (f64, f64) {
    let c = r.strength();
    let a2 = step_decay(r, dt).powi(2);
    let q = r.diffusion() * dt;
    // c·dt·P² + (1 − a² − c·q·dt)·P − q = 0
    let lin = 1.0 - a2 - c * q * dt;
    let prior = 2.0 * q / (lin + (lin * lin + 4.0 * c * dt * q).sqrt());
    // B = (B⁺ + q)/a², B⁺ = B/(1 + c·B·dt)  ⇒  a²·c·dt·B² + (a² − 1 − c·q·dt)·B − q = 0
    let lin_b = a2 - 1.0 - c * q * dt;
    let qa = a2 * c * dt;
    let prior_b = (-lin_b + (lin_b * lin_b + 4.0 * qa * q).sqrt()) / (2.0 * qa);
    let post_b = prior_b / (1.0 + c * prior_b * dt);
    (prior, post_b)
}
