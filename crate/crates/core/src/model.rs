//! Physical parameters of the measured oscillator and the rates derived from them.
//!
//! Units: ħ = 1, quadratures in zero-point units (ground state variance 1/2),
//! every rate in rad/s. Config files carry frequencies in Hz and are converted
//! on load.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Hz to rad/s.
pub fn hz_to_rad(f: f64) -> f64 {
    TAU * f
}

/// rad/s to Hz.
pub fn rad_to_hz(w: f64) -> f64 {
    w / TAU
}

/// Optical and mechanical quantities that document where the rates come from.
/// None of these enter the filters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    /// Vacuum optomechanical coupling, rad/s.
    pub g0: Option<f64>,
    /// Cavity linewidth, rad/s.
    pub kappa: Option<f64>,
    pub n_cav: Option<f64>,
    pub eta_c: Option<f64>,
    pub q: Option<f64>,
    /// Bath temperature, K.
    pub temperature: Option<f64>,
    /// Effective mass, kg.
    pub m_eff: Option<f64>,
    /// Zero-point displacement, m.
    pub x_zpf: Option<f64>,
    /// Probe detuning, rad/s.
    pub detuning: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Mechanical resonance Ω_m.
    pub omega_m: f64,
    /// Effective energy damping Γ_m.
    pub gamma_m: f64,
    /// Effective bath occupancy.
    pub n_th: f64,
    /// Quantum backaction rate Γ_qba.
    pub gamma_qba: f64,
    /// Measurement rate Γ_meas.
    pub gamma_meas: f64,
    /// Detection efficiency.
    pub eta_det: f64,
    #[serde(default)]
    pub provenance: Provenance,
}

impl ModelParams {
    /// The membrane resonator operating point: Ω_m = 2π·1.138 MHz,
    /// Γ_m = 2π·130 Hz, n̄_th = 2, Γ_qba = 2π·2.54 kHz, Γ_meas = 2π·1.88 kHz,
    /// η_det = 0.74.
    pub fn reference() -> Self {
        Self {
            omega_m: hz_to_rad(1.138e6),
            gamma_m: hz_to_rad(130.0),
            n_th: 2.0,
            gamma_qba: hz_to_rad(2.54e3),
            gamma_meas: hz_to_rad(1.88e3),
            eta_det: 0.74,
            provenance: Provenance {
                g0: Some(hz_to_rad(129.0)),
                kappa: Some(hz_to_rad(18.5e6)),
                n_cav: None,
                eta_c: Some(0.93),
                q: Some(8740.0),
                temperature: Some(11.0),
                m_eff: Some(2.3e-12),
                x_zpf: Some(1.8e-15),
                detuning: None,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("omega_m", self.omega_m),
            ("gamma_m", self.gamma_m),
            ("n_th", self.n_th),
            ("gamma_qba", self.gamma_qba),
            ("gamma_meas", self.gamma_meas),
            ("eta_det", self.eta_det),
        ];
        for (name, v) in fields {
            if !v.is_finite() {
                return Err(invalid(format!("{name} must be finite, got {v}")));
            }
        }
        if self.omega_m <= 0.0 {
            return Err(invalid(format!("omega_m must be > 0, got {}", self.omega_m)));
        }
        if self.gamma_m <= 0.0 {
            return Err(invalid(format!("gamma_m must be > 0, got {}", self.gamma_m)));
        }
        if self.n_th < 0.0 {
            return Err(invalid(format!("n_th must be >= 0, got {}", self.n_th)));
        }
        if self.gamma_qba < 0.0 {
            return Err(invalid(format!("gamma_qba must be >= 0, got {}", self.gamma_qba)));
        }
        if self.gamma_meas < 0.0 {
            return Err(invalid(format!("gamma_meas must be >= 0, got {}", self.gamma_meas)));
        }
        if !(self.eta_det > 0.0 && self.eta_det <= 1.0) {
            return Err(invalid(format!("eta_det must lie in (0, 1], got {}", self.eta_det)));
        }
        if self.gamma_meas > self.gamma_qba {
            return Err(invalid(format!(
                "gamma_meas ({}) exceeds gamma_qba ({}): unphysical record",
                self.gamma_meas, self.gamma_qba
            )));
        }
        Ok(())
    }

    /// γ = Γ_m·n̄_th.
    pub fn gamma_th(&self) -> f64 {
        self.gamma_m * self.n_th
    }

    /// Unconditional quadrature variance n̄_th + 1/2 + Γ_qba/Γ_m.
    pub fn v_bath(&self) -> f64 {
        self.n_th + 0.5 + self.gamma_qba / self.gamma_m
    }

    /// Diffusion of each quadrature, Γ_m(n̄_th + 1/2) + Γ_qba.
    pub fn diffusion(&self) -> f64 {
        self.gamma_m * (self.n_th + 0.5) + self.gamma_qba
    }

    /// Stable identifier of the six rate parameters (provenance excluded).
    pub fn params_hash(&self) -> u64 {
        let mut h = Sha256::new();
        for v in [
            self.omega_m,
            self.gamma_m,
            self.n_th,
            self.gamma_qba,
            self.gamma_meas,
            self.eta_det,
        ] {
            h.update(v.to_le_bytes());
        }
        let digest = h.finalize();
        let mut b = [0u8; 8];
        b.copy_from_slice(&digest[..8]);
        u64::from_le_bytes(b)
    }

    /// Same parameters with a different measurement rate (Γ_qba raised if needed
    /// to keep the record physical).
    pub fn with_gamma_meas(mut self, gamma_meas: f64) -> Self {
        self.gamma_meas = gamma_meas;
        if self.gamma_qba < gamma_meas {
            self.gamma_qba = gamma_meas;
        }
        self
    }
}

fn invalid(msg: String) -> Error {
    Error::InvalidParameter(msg)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DerivedRates {
    pub params: ModelParams,
    /// γ = Γ_m·n̄_th, rad/s.
    pub gamma_th: f64,
    pub v_bath: f64,
    pub eta_meas: f64,
    /// Steady conditional variance V of the predicted state.
    pub v_steady: f64,
    /// Steady variance V_E of the retrodicted effect operator.
    pub v_e_steady: f64,
    /// Decay rate of the causal steady-state kernel, rad/s.
    pub alpha: f64,
    /// Decay rate of the anticausal retrodiction kernel, rad/s.
    pub lambda: f64,
}

impl DerivedRates {
    /// 4Γ_meas, the squared record gain.
    pub fn strength(&self) -> f64 {
        4.0 * self.params.gamma_meas
    }

    pub fn gamma_m(&self) -> f64 {
        self.params.gamma_m
    }

    pub fn gamma_meas(&self) -> f64 {
        self.params.gamma_meas
    }

    pub fn diffusion(&self) -> f64 {
        self.params.diffusion()
    }

    /// Ensemble variance of the steady predicted means, (4Γ_meas/Γ_m)V².
    pub fn predicted_mean_variance(&self) -> f64 {
        self.strength() / self.gamma_m() * self.v_steady * self.v_steady
    }

    /// Ensemble variance of the steady retrodicted means, (4Γ_meas/Γ_m)V_E².
    pub fn retrodicted_mean_variance(&self) -> f64 {
        self.strength() / self.gamma_m() * self.v_e_steady * self.v_e_steady
    }

    /// V + V_E.
    pub fn relative_variance(&self) -> f64 {
        self.v_steady + self.v_e_steady
    }

    pub fn purity(&self) -> f64 {
        1.0 / (2.0 * self.v_steady)
    }

    pub fn params_hash(&self) -> u64 {
        self.params.params_hash()
    }
}

/// Steady conditional variance of the quadrature Riccati equation
/// 0 = −Γ_m V + Γ_m V_bath − 4Γ_meas V².
///
/// Written as 2V_bath / (1 + √(1 + 16 V_bath Γ_meas/Γ_m)), which equals
/// (√(1 + 16 V_bath Γ_meas/Γ_m) − 1)/(8Γ_meas/Γ_m) without cancellation at
/// small Γ_meas.
pub fn steady_variance(v_bath: f64, gamma_m: f64, gamma_meas: f64) -> f64 {
    let s = (1.0 + 16.0 * v_bath * gamma_meas / gamma_m).sqrt();
    2.0 * v_bath / (1.0 + s)
}

pub fn derive_rates(p: &ModelParams) -> Result<DerivedRates> {
    p.validate()?;
    let v_bath = p.v_bath();
    let gamma_th = p.gamma_th();
    let denom = p.gamma_qba + gamma_th;
    let eta_meas = if denom > 0.0 { p.gamma_meas / denom } else { 0.0 };
    let v_steady = steady_variance(v_bath, p.gamma_m, p.gamma_meas);
    let alpha = p.gamma_m / 2.0 + 4.0 * p.gamma_meas * v_steady;
    let (v_e_steady, lambda) = if p.gamma_meas > 0.0 {
        let v_e = v_steady + p.gamma_m / (4.0 * p.gamma_meas);
        (v_e, 4.0 * p.gamma_meas * v_e - p.gamma_m / 2.0)
    } else {
        // No information flows backward; λ keeps its Γ_meas → 0 limit.
        (f64::INFINITY, alpha)
    };
    if p.detuning_is_set() {
        log::warn!("probe detuning is ignored by the resonant-probe dynamics");
    }
    Ok(DerivedRates {
        params: *p,
        gamma_th,
        v_bath,
        eta_meas,
        v_steady,
        v_e_steady,
        alpha,
        lambda,
    })
}

impl ModelParams {
    fn detuning_is_set(&self) -> bool {
        self.provenance.detuning.is_some_and(|d| d != 0.0)
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    omega_m_hz: Option<f64>,
    gamma_m_hz: Option<f64>,
    n_th: Option<f64>,
    gamma_qba_hz: Option<f64>,
    gamma_meas_hz: Option<f64>,
    eta_det: Option<f64>,
    provenance: Option<RawProvenance>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProvenance {
    g0_hz: Option<f64>,
    kappa_hz: Option<f64>,
    n_cav: Option<f64>,
    eta_c: Option<f64>,
    q: Option<f64>,
    temperature_k: Option<f64>,
    m_eff_kg: Option<f64>,
    x_zpf_m: Option<f64>,
    detuning_hz: Option<f64>,
}

/// Parse a TOML parameter document.
///
/// ```toml
/// omega_m_hz = 1.138e6
/// gamma_m_hz = 130.0
/// n_th = 2.0
/// gamma_qba_hz = 2540.0
/// gamma_meas_hz = 1880.0
/// eta_det = 0.74
///
/// [provenance]
/// g0_hz = 129.0
/// kappa_hz = 18.5e6
/// ```
///
/// When both `gamma_qba_hz` and `gamma_meas_hz` are absent they are derived
/// from the provenance block as Γ_qba = 4g²/κ and Γ_meas = η_det·Γ_qba with
/// g = g0·√n̄_cav.
pub fn params_from_config(document: &str) -> Result<ModelParams> {
    let raw: RawConfig = toml::from_str(document).map_err(|e| Error::Parse(e.to_string()))?;
    let prov = raw.provenance.unwrap_or_default();
    let provenance = Provenance {
        g0: prov.g0_hz.map(hz_to_rad),
        kappa: prov.kappa_hz.map(hz_to_rad),
        n_cav: prov.n_cav,
        eta_c: prov.eta_c,
        q: prov.q,
        temperature: prov.temperature_k,
        m_eff: prov.m_eff_kg,
        x_zpf: prov.x_zpf_m,
        detuning: prov.detuning_hz.map(hz_to_rad),
    };

    let omega_m = hz_to_rad(raw.omega_m_hz.ok_or(Error::MissingKey("omega_m_hz"))?);
    let gamma_m = hz_to_rad(raw.gamma_m_hz.ok_or(Error::MissingKey("gamma_m_hz"))?);
    let n_th = raw.n_th.ok_or(Error::MissingKey("n_th"))?;
    let eta_det = raw.eta_det.ok_or(Error::MissingKey("eta_det"))?;

    let (gamma_qba, gamma_meas) = match (raw.gamma_qba_hz, raw.gamma_meas_hz) {
        (Some(q), Some(m)) => (hz_to_rad(q), hz_to_rad(m)),
        (None, None) => {
            let (Some(g0), Some(kappa), Some(n_cav)) = (provenance.g0, provenance.kappa, provenance.n_cav)
            else {
                return Err(Error::MissingKey("gamma_qba_hz"));
            };
            let g2 = g0 * g0 * n_cav;
            let qba = 4.0 * g2 / kappa;
            (qba, eta_det * qba)
        }
        (None, Some(_)) => return Err(Error::MissingKey("gamma_qba_hz")),
        (Some(_), None) => return Err(Error::MissingKey("gamma_meas_hz")),
    };

    let p = ModelParams {
        omega_m,
        gamma_m,
        n_th,
        gamma_qba,
        gamma_meas,
        eta_det,
        provenance,
    };
    p.validate()?;
    if p.detuning_is_set() {
        log::warn!("probe detuning is ignored by the resonant-probe dynamics");
    }
    Ok(p)
}

/// Inverse of [`params_from_config`] for the six rate keys.
pub fn params_to_config(p: &ModelParams) -> String {
    format!(
        "omega_m_hz = {:?}\ngamma_m_hz = {:?}\nn_th = {:?}\ngamma_qba_hz = {:?}\ngamma_meas_hz = {:?}\neta_det = {:?}\n",
        rad_to_hz(p.omega_m),
        rad_to_hz(p.gamma_m),
        p.n_th,
        rad_to_hz(p.gamma_qba),
        rad_to_hz(p.gamma_meas),
        p.eta_det
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    const REFERENCE_TOML: &str = r#"
omega_m_hz = 1.138e6
gamma_m_hz = 130.0
n_th = 2.0
gamma_qba_hz = 2540.0
gamma_meas_hz = 1880.0
eta_det = 0.74

[provenance]
g0_hz = 129.0
kappa_hz = 18.5e6
eta_c = 0.93
q = 8740.0
"#;

    fn residual(r: &DerivedRates) -> f64 {
        let p = &r.params;
        let v = r.v_steady;
        -p.gamma_m * v + p.gamma_m * (p.n_th + 0.5) + p.gamma_qba - 4.0 * p.gamma_meas * v * v
    }

    #[test]
    fn reference_steady_variance() {
        let r = derive_rates(&ModelParams::reference()).unwrap();
        assert!((r.v_steady - 0.61).abs() < 0.01, "V = {}", r.v_steady);
        assert!((r.purity() - 0.82).abs() < 0.01);
        assert!(r.eta_meas > 0.665 && r.eta_meas < 0.685, "eta_meas = {}", r.eta_meas);
        assert_relative_eq!(r.v_bath, 2.5 + 2540.0 / 130.0, max_relative = 1e-14);
        // rationalized form of the fixed point
        let p = &r.params;
        let x = 8.0 * p.gamma_meas / p.gamma_m;
        let rationalized = ((1.0 + 16.0 * r.v_bath * p.gamma_meas / p.gamma_m).sqrt() - 1.0) / x;
        assert_relative_eq!(r.v_steady, rationalized, max_relative = 1e-13);
    }

    #[test]
    fn vanishing_measurement_leaves_bath_variance() {
        let mut p = ModelParams::reference();
        p.gamma_meas = 1e-9 * p.gamma_m;
        let r = derive_rates(&p).unwrap();
        assert_relative_eq!(r.v_steady, r.v_bath, max_relative = 1e-6);
    }

    #[test]
    fn efficient_measurement_approaches_half() {
        let mut p = ModelParams::reference();
        p.n_th = 0.0;
        p.gamma_qba = 1e4 * p.gamma_m;
        p.eta_det = 1.0;
        p.gamma_meas = p.gamma_qba;
        let r = derive_rates(&p).unwrap();
        assert!(r.eta_meas > 0.999);
        let approx = 1.0 / (2.0 * r.eta_meas.sqrt());
        assert!((r.v_steady - approx).abs() < 0.01, "{} vs {approx}", r.v_steady);
        assert!((r.v_steady - 0.5).abs() < 0.01);
    }

    #[test]
    fn config_round_trip_reference() {
        let p = params_from_config(REFERENCE_TOML).unwrap();
        assert_relative_eq!(p.omega_m, TAU * 1.138e6, max_relative = 1e-15);
        assert_eq!(p.provenance.q, Some(8740.0));
        let again = params_from_config(&params_to_config(&p)).unwrap();
        assert_relative_eq!(again.gamma_meas, p.gamma_meas, max_relative = 1e-15);
    }

    #[test]
    fn empty_document_is_missing_key() {
        let err = params_from_config("").unwrap_err();
        assert!(err.to_string().contains("missing required key"), "{err}");
    }

    #[test]
    fn efficiency_above_one_rejected() {
        let doc = REFERENCE_TOML.replace("eta_det = 0.74", "eta_det = 1.2");
        assert!(matches!(params_from_config(&doc), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn unknown_key_rejected() {
        let doc = format!("{REFERENCE_TOML}\n");
        let doc = doc.replace("n_th = 2.0", "n_th = 2.0\nbogus = 1");
        let err = params_from_config(&doc).unwrap_err();
        assert!(matches!(err, Error::Parse(_)));
        assert!(err.to_string().contains("bogus"));
    }

    #[test]
    fn parse_error_carries_line() {
        let err = params_from_config("omega_m_hz = 1.0\ngamma_m_hz = = 3\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn rates_from_coupling() {
        let doc = r#"
omega_m_hz = 1.138e6
gamma_m_hz = 130.0
n_th = 2.0
eta_det = 0.74
[provenance]
g0_hz = 129.0
kappa_hz = 18.5e6
n_cav = 7.06e5
"#;
        let p = params_from_config(doc).unwrap();
        assert!((rad_to_hz(p.gamma_qba) - 2540.0).abs() < 5.0, "{}", rad_to_hz(p.gamma_qba));
        assert_relative_eq!(p.gamma_meas, 0.74 * p.gamma_qba, max_relative = 1e-14);
    }

    #[test]
    fn unphysical_measurement_rate_rejected() {
        let mut p = ModelParams::reference();
        p.gamma_meas = 1.01 * p.gamma_qba;
        assert!(derive_rates(&p).is_err());
    }

    #[test]
    fn hash_ignores_provenance() {
        let a = ModelParams::reference();
        let mut b = a;
        b.provenance = Provenance::default();
        assert_eq!(a.params_hash(), b.params_hash());
        assert_ne!(a.params_hash(), a.with_gamma_meas(a.gamma_meas * 0.5).params_hash());
    }

    prop_compose! {
        fn valid_params()(
            gm_hz in 1.0f64..1e3,
            n_th in 0.0f64..50.0,
            qba_ratio in 0.0f64..200.0,
            meas_frac in 1e-6f64..1.0,
        ) -> ModelParams {
            let gamma_m = hz_to_rad(gm_hz);
            let gamma_qba = qba_ratio * gamma_m + 1e-3;
            ModelParams {
                omega_m: hz_to_rad(1e6),
                gamma_m,
                n_th,
                gamma_qba,
                gamma_meas: meas_frac * gamma_qba,
                eta_det: meas_frac.max(1e-3),
                provenance: Provenance::default(),
            }
        }
    }

    proptest! {
        #[test]
        fn fixed_point_residual(p in valid_params()) {
            let r = derive_rates(&p).unwrap();
            prop_assert!(residual(&r).abs() < 1e-12 * p.gamma_m * r.v_bath);
            prop_assert!(r.v_steady >= 0.5 - 1e-12);
            prop_assert!(r.v_steady <= r.v_bath);
            prop_assert!(r.eta_meas <= 1.0);
        }

        #[test]
        fn alpha_equals_lambda(p in valid_params()) {
            let r = derive_rates(&p).unwrap();
            prop_assert!((r.alpha - r.lambda).abs() <= 1e-12 * r.alpha);
        }

        #[test]
        fn more_measurement_never_raises_variance(p in valid_params(), f in 0.0f64..1.0) {
            let lo = derive_rates(&p.with_gamma_meas(p.gamma_meas * f)).unwrap();
            let hi = derive_rates(&p).unwrap();
            prop_assert!(hi.v_steady <= lo.v_steady * (1.0 + 1e-14));
        }

        #[test]
        fn hz_round_trip(f in 1e-3f64..1e9) {
            let back = rad_to_hz(hz_to_rad(f));
            prop_assert!((back - f).abs() <= 2.0 * f64::EPSILON * f);
        }
    }
}
