//! Frequency-domain statistics of the steady-state estimators.
//!
//! In steady state both estimators are linear time-invariant filters of the
//! record, r = K_f * i and r⃖ = K_b * i with
//!
//! K_f(Ω) = √(4Γ_meas)·V / (α + iΩ),  K_b(Ω) = √(4Γ_meas)·V_E / (λ − iΩ),
//!
//! so every second moment is an integral of a kernel product against the
//! record spectrum S_ii = 4Γ_meas·S_xx + 1. An optional demodulation
//! filter multiplies the record spectrum by |D(Ω)|².

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::Serialize;

use crate::demod::DemodFilterSpec;
use crate::error::{Error, Result};
use crate::model::{rad_to_hz, DerivedRates};

#[derive(Debug, Clone)]
pub struct SpectralModel {
    pub rates: DerivedRates,
    pub filter: Option<DemodFilterSpec>,
}

impl SpectralModel {
    pub fn new(rates: &DerivedRates, filter: Option<DemodFilterSpec>) -> Result<Self> {
        if rates.gamma_meas() == 0.0 {
            return Err(Error::InvalidParameter("spectral model needs gamma_meas > 0".into()));
        }
        Ok(Self { rates: *rates, filter })
    }

    /// Position spectrum of one quadrature, Γ_m·V_bath / (Ω² + Γ_m²/4).
    pub fn s_xx(&self, omega: f64) -> f64 {
        let g = self.rates.gamma_m();
        g * self.rates.v_bath / (omega * omega + 0.25 * g * g)
    }

    /// Record spectrum including the shot-noise floor of 1.
    pub fn s_ii(&self, omega: f64) -> f64 {
        self.rates.strength() * self.s_xx(omega) + 1.0
    }

    pub fn kernel_forward(&self, omega: f64) -> Complex64 {
        let r = &self.rates;
        r.strength().sqrt() * r.v_steady / Complex64::new(r.alpha, omega)
    }

    pub fn kernel_backward(&self, omega: f64) -> Complex64 {
        let r = &self.rates;
        r.strength().sqrt() * r.v_e_steady / Complex64::new(r.lambda, -omega)
    }

    /// |D(Ω)|², or 1 without a demodulation filter.
    pub fn demod_power(&self, omega: f64) -> f64 {
        self.filter.map_or(1.0, |f| f.power_response(rad_to_hz(omega)))
    }

    fn integrands(&self, omega: f64) -> [f64; 4] {
        let s = self.s_ii(omega) * self.demod_power(omega);
        let kf = self.kernel_forward(omega);
        let kb = self.kernel_backward(omega);
        [
            kf.norm_sqr() * s,
            kb.norm_sqr() * s,
            (kf * kb.conj()).re * s,
            (kf - kb).norm_sqr() * s,
        ]
    }

    fn span(&self) -> (f64, f64) {
        let r = &self.rates;
        let slow = (0.5 * r.gamma_m()).min(r.alpha).min(r.lambda);
        let mut fast = r.alpha.max(r.lambda).max(r.gamma_m());
        if let Some(f) = self.filter {
            fast = fast.max(2.0 * PI * f.cutoff_hz);
        }
        (1e-4 * slow, 1e4 * fast)
    }
}

/// Gauss–Legendre panels per decade and nodes per panel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Quadrature {
    pub panels_per_decade: usize,
    pub nodes: usize,
}

impl Default for Quadrature {
    fn default() -> Self {
        Self { panels_per_decade: 6, nodes: 12 }
    }
}

/// Steady-state second moments per quadrature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TableS1 {
    /// ⟨r²⟩
    pub pred_var: f64,
    /// ⟨r⃖²⟩
    pub retro_var: f64,
    /// ⟨r·r⃖⟩
    pub cross: f64,
    /// ⟨(r⃖ − r)²⟩
    pub sigma2: f64,
}

impl TableS1 {
    fn from_array(v: [f64; 4]) -> Self {
        Self { pred_var: v[0], retro_var: v[1], cross: v[2], sigma2: v[3] }
    }

    fn max_rel_diff(&self, other: &Self) -> f64 {
        [
            (self.pred_var, other.pred_var),
            (self.retro_var, other.retro_var),
            (self.cross, other.cross),
            (self.sigma2, other.sigma2),
        ]
        .iter()
        .map(|(a, b)| ((a - b) / b).abs())
        .fold(0.0, f64::max)
    }
}

/// Nodes and weights on [−1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 { 1.0 } else { p1 };
            let pn1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * pn - pn1) / (x * x - 1.0);
            let step = pn / dp;
            x -= step;
            if step.abs() < 1e-15 {
                break;
            }
        }
        nodes.push(x);
        weights.push(2.0 / ((1.0 - x * x) * dp * dp));
    }
    (nodes, weights)
}

fn integrate(model: &SpectralModel, quad: Quadrature) -> [f64; 4] {
    let (nodes, weights) = gauss_legendre(quad.nodes);
    let mut acc = [0.0; 4];
    let mut panel = |a: f64, b: f64, f: &dyn Fn(f64) -> (f64, f64)| {
        let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
        for (x, w) in nodes.iter().zip(&weights) {
            let (omega, jac) = f(mid + half * x);
            let v = model.integrands(omega);
            for q in 0..4 {
                acc[q] += w * half * jac * v[q];
            }
        }
    };
    let (lo, hi) = model.span();
    panel(0.0, lo, &|w| (w, 1.0));
    let decades = (hi / lo).log10();
    let panels = (decades * quad.panels_per_decade as f64).ceil() as usize;
    let (ln_lo, ln_hi) = (lo.ln(), hi.ln());
    for p in 0..panels {
        let a = ln_lo + (ln_hi - ln_lo) * p as f64 / panels as f64;
        let b = ln_lo + (ln_hi - ln_lo) * (p + 1) as f64 / panels as f64;
        panel(a, b, &|s| (s.exp(), s.exp()));
    }
    // Ω = hi/u on u ∈ (0, 1]
    panel(0.0, 1.0, &|u| {
        let u = u.max(f64::MIN_POSITIVE);
        (hi / u, hi / (u * u))
    });
    // even integrands: ∫_ℝ dΩ/2π = (1/π)∫_0^∞ dΩ
    acc.map(|v| v / PI)
}

/// Table of steady-state moments with the default quadrature.
pub fn table_s1(model: &SpectralModel) -> Result<TableS1> {
    table_s1_with(model, Quadrature::default())
}

/// Evaluates on `quad` and on a grid twice as dense; fails if they differ
/// by more than 1e-6 relative.
pub fn table_s1_with(model: &SpectralModel, quad: Quadrature) -> Result<TableS1> {
    let coarse = TableS1::from_array(integrate(model, quad));
    let fine_quad = Quadrature { panels_per_decade: 2 * quad.panels_per_decade, ..quad };
    let fine = TableS1::from_array(integrate(model, fine_quad));
    let diff = coarse.max_rel_diff(&fine);
    if !(diff < 1e-6) {
        return Err(Error::Resolution(format!(
            "doubling the panel density changed the result by {diff:.2e}"
        )));
    }
    Ok(fine)
}

/// σ² without the demodulation filter divided by σ² with it.
pub fn filter_correction(model: &SpectralModel) -> Result<f64> {
    let bare = SpectralModel { filter: None, ..model.clone() };
    Ok(table_s1(&bare)?.sigma2 / table_s1(model)?.sigma2)
}
