//! Dimensionless scales for the bidomain model.

use crate::error::{Result, TrihomError};

/// Physical inputs. Lengths in cm, `r_m` in kΩ·cm², `c_m` in µF/cm²,
/// conductivity eigenvalues in mS/cm.
#[derive(Clone, Debug, PartialEq)]
pub struct PhysicalParams {
    pub ell_mes: f64,
    pub ell_mic: f64,
    /// Macroscopic length. When absent it is taken as `ell_mes / ε`.
    pub length: Option<f64>,
    pub r_m: f64,
    pub c_m: f64,
    pub lambda_i: f64,
    pub lambda_e: f64,
    pub delta_v: f64,
    pub delta_w: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scales {
    /// `sqrt(ell_mes / (R_m λ))`.
    pub epsilon: f64,
    /// `L / (R_m λ)`, the alternative expression for the same ratio.
    pub epsilon_alt: f64,
    /// `|epsilon - epsilon_alt|`.
    pub epsilon_defect: f64,
    /// `ell_mic / L`.
    pub delta: f64,
    /// `R_m C_m`.
    pub tau: f64,
    /// `λ = λ_i + λ_e`.
    pub lambda: f64,
    /// Factor applied to conductivities: `1 / λ`.
    pub conductivity_scale: f64,
    pub length: f64,
}

impl PhysicalParams {
    pub fn validate(&self) -> Result<()> {
        let named = [
            ("ell_mes", self.ell_mes),
            ("ell_mic", self.ell_mic),
            ("r_m", self.r_m),
            ("c_m", self.c_m),
            ("lambda_i", self.lambda_i),
            ("lambda_e", self.lambda_e),
            ("delta_v", self.delta_v),
            ("delta_w", self.delta_w),
        ];
        for (name, x) in named {
            if !(x.is_finite() && x > 0.0) {
                return Err(TrihomError::NonPositiveInput(format!("{name} = {x}")));
            }
        }
        if let Some(l) = self.length {
            if !(l.is_finite() && l > 0.0) {
                return Err(TrihomError::NonPositiveInput(format!("length = {l}")));
            }
        }
        if self.ell_mic >= self.ell_mes {
            return Err(TrihomError::InvalidParameter(format!(
                "ell_mic ({}) must be smaller than ell_mes ({})",
                self.ell_mic, self.ell_mes
            )));
        }
        Ok(())
    }
}

pub fn derive_scales(p: &PhysicalParams) -> Result<Scales> {
    p.validate()?;
    let lambda = p.lambda_i + p.lambda_e;
    let epsilon = (p.ell_mes / (p.r_m * lambda)).sqrt();
    let length = p.length.unwrap_or(p.ell_mes / epsilon);
    let epsilon_alt = length / (p.r_m * lambda);
    Ok(Scales {
        epsilon,
        epsilon_alt,
        epsilon_defect: (epsilon - epsilon_alt).abs(),
        delta: p.ell_mic / length,
        tau: p.r_m * p.c_m,
        lambda,
        conductivity_scale: 1.0 / lambda,
        length,
    })
}

/// Multipliers turning physical currents and gating rates into dimensionless ones.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rescaling {
    /// `R_m / Δv`, applied to `I_ion` and `I_app`.
    pub current: f64,
    /// `τ / Δw`, applied to `H`.
    pub gate: f64,
}

impl Rescaling {
    pub fn new(p: &PhysicalParams) -> Result<Self> {
        p.validate()?;
        Ok(Rescaling { current: p.r_m / p.delta_v, gate: p.r_m * p.c_m / p.delta_w })
    }

    pub fn current(&self, i: f64) -> f64 {
        i * self.current
    }

    pub fn unscale_current(&self, i: f64) -> f64 {
        i / self.current
    }

    pub fn gate(&self, h: f64) -> f64 {
        h * self.gate
    }

    pub fn unscale_gate(&self, h: f64) -> f64 {
        h / self.gate
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn base() -> PhysicalParams {
        PhysicalParams {
            ell_mes: 0.01,
            ell_mic: 0.001,
            length: None,
            r_m: 1.0,
            c_m: 1.0,
            lambda_i: 0.5,
            lambda_e: 0.5,
            delta_v: 1.0,
            delta_w: 1.0,
        }
    }

    #[test]
    fn printed_examples() {
        let s = derive_scales(&base()).unwrap();
        assert_eq!(s.tau, 1.0);
        assert!((s.epsilon - 0.1).abs() < 1e-15);
        assert!((s.length - 0.1).abs() < 1e-15);
        assert!((s.epsilon_alt - 0.1).abs() < 1e-15);
        assert!(s.epsilon_defect < 1e-15);
        assert!((s.delta - 0.01).abs() < 1e-15);

        let fixed = PhysicalParams { ell_mes: 2.0, ell_mic: 0.1, r_m: 2.0, ..base() };
        assert!((derive_scales(&fixed).unwrap().epsilon - 1.0).abs() < 1e-15);
    }

    #[test]
    fn explicit_length_exposes_defect() {
        let p = PhysicalParams { length: Some(1.0), ..base() };
        let s = derive_scales(&p).unwrap();
        assert!((s.epsilon_alt - 1.0).abs() < 1e-15);
        assert!((s.epsilon_defect - 0.9).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            derive_scales(&PhysicalParams { r_m: 0.0, ..base() }),
            Err(TrihomError::NonPositiveInput(_))
        ));
        assert!(derive_scales(&PhysicalParams { ell_mic: 0.02, ..base() }).is_err());
        assert!(derive_scales(&PhysicalParams { length: Some(-1.0), ..base() }).is_err());
    }

    #[test]
    fn rescaling_examples() {
        let r = Rescaling::new(&base()).unwrap();
        assert_eq!(r.current(0.37), 0.37);
        let halved = Rescaling::new(&PhysicalParams { delta_v: 2.0, ..base() }).unwrap();
        assert_eq!(halved.current(0.5), 0.25);
    }

    proptest! {
        #[test]
        fn round_trip_and_monotonicity(r_m in 0.1f64..10.0, lam in 0.1f64..10.0, dv in 0.1f64..100.0,
                                       dw in 0.1f64..100.0, x in -1e3f64..1e3) {
            let p = PhysicalParams { r_m, lambda_i: lam, delta_v: dv, delta_w: dw, ..base() };
            let s = Rescaling::new(&p).unwrap();
            prop_assert!((s.unscale_current(s.current(x)) - x).abs() <= 1e-12 * x.abs().max(1.0));
            prop_assert!((s.unscale_gate(s.gate(x)) - x).abs() <= 1e-12 * x.abs().max(1.0));
            let e = derive_scales(&p).unwrap().epsilon;
            let e_rm = derive_scales(&PhysicalParams { r_m: r_m * 1.5, ..p.clone() }).unwrap().epsilon;
            let e_l = derive_scales(&PhysicalParams { lambda_e: p.lambda_e * 2.0, ..p.clone() }).unwrap().epsilon;
            prop_assert!(e_rm < e && e_l < e);
            let d = derive_scales(&p).unwrap().delta;
            let d2 = derive_scales(&PhysicalParams { ell_mic: p.ell_mic * 1.5, ..p.clone() }).unwrap().delta;
            prop_assert!(d2 > d);
        }
    }
}
