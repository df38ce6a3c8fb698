//! FitzHugh-Nagumo membrane kinetics.
//!
//! `I_ion(v, w) = λ v (1 - v)(v - θ) - λ w` split as `I1(v) + I2(w)`, and the
//! gating rate `H(v, w) = a v - b w`.

use crate::error::{Result, TrihomError};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FhnParams {
    pub a: f64,
    pub b: f64,
    pub lambda: f64,
    pub theta: f64,
}

impl Default for FhnParams {
    fn default() -> Self {
        FhnParams { a: 0.1, b: 0.5, lambda: -1.0, theta: 0.25 }
    }
}

impl FhnParams {
    /// Requires `a, b >= 0`, `λ < 0` and `0 < θ < 1`.
    pub fn new(a: f64, b: f64, lambda: f64, theta: f64) -> Result<Self> {
        let p = FhnParams { a, b, lambda, theta };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TrihomError::InvalidParameter(m.to_string()));
        if !(self.a.is_finite() && self.a >= 0.0) {
            return bad("ionic a must be >= 0");
        }
        if !(self.b.is_finite() && self.b >= 0.0) {
            return bad("ionic b must be >= 0");
        }
        if !(self.lambda.is_finite() && self.lambda < 0.0) {
            return bad("ionic lambda must be < 0");
        }
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return bad("ionic theta must lie in (0, 1)");
        }
        Ok(())
    }
}

pub fn i1(v: f64, p: &FhnParams) -> f64 {
    p.lambda * v * (1.0 - v) * (v - p.theta)
}

pub fn i2(w: f64, p: &FhnParams) -> f64 {
    -p.lambda * w
}

pub fn i_ion(v: f64, w: f64, p: &FhnParams) -> f64 {
    i1(v, p) + i2(w, p)
}

pub fn h_gate(v: f64, w: f64, p: &FhnParams) -> f64 {
    p.a * v - p.b * w
}

/// Rectangle of `(v, w)` values to sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleBox {
    pub v: [f64; 2],
    pub w: [f64; 2],
}

impl Default for SampleBox {
    fn default() -> Self {
        SampleBox { v: [-100.0, 100.0], w: [-100.0, 100.0] }
    }
}

/// Sampled witnesses for the structural assumptions on the kinetics, with
/// growth exponent `r = 4`. Every constant is the extremum over the samples.
#[derive(Clone, Debug, PartialEq)]
pub struct AssumptionAudit {
    pub r: f64,
    /// Two-sided cubic growth constant for `I1`.
    pub alpha1: f64,
    /// `|v|` beyond which the lower bound `|v|^3 / α1 <= |I1(v)|` holds on the samples.
    pub growth_threshold: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    /// `α4 = |λ| / a` cancels the `v w` cross term; infinite when `a = 0`.
    pub alpha4: f64,
    /// Smallest sampled `(I2(w) v - α4 H(v, w) w) / w²`.
    pub alpha5: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Smallest constant making the strong monotonicity bound hold on sampled pairs.
    pub c: f64,
    /// Sample pairs where `I1 + β1 z + β2` fails to increase.
    pub monotone_violations: usize,
    /// Samples where `|H| > max(a, b)(|v| + |w| + 1)`.
    pub h_violations: usize,
    /// Whether `(I1(z) + β1 z + β2) / z -> 0` as `z -> 0`. For this model the
    /// slope at the origin is `|λ| θ + β1 > 0`, so it never holds.
    pub limit_condition_holds: bool,
}

fn linspace(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
    let step = if n > 1 { (hi - lo) / (n - 1) as f64 } else { 0.0 };
    (0..n).map(move |k| lo + step * k as f64)
}

/// `β1` making `I1(z) + β1 z` strictly increasing: the largest negative slope
/// of `I1`, plus a margin of `0.1 |λ|`.
pub fn monotonicity_shift(p: &FhnParams) -> f64 {
    let l = p.lambda.abs();
    let deficit = (1.0 + p.theta).powi(2) / 3.0 - p.theta;
    l * deficit.max(0.0) + 0.1 * l
}

pub fn audit_assumptions(p: &FhnParams, sample_box: &SampleBox, samples: usize) -> AssumptionAudit {
    let n = samples.max(2);
    let vs: Vec<f64> = linspace(sample_box.v[0], sample_box.v[1], n).collect();
    let ws: Vec<f64> = linspace(sample_box.w[0], sample_box.w[1], n).collect();
    let l = p.lambda.abs();

    let upper = vs.iter().map(|&v| i1(v, p).abs() / (v.abs().powi(3) + 1.0)).fold(0.0, f64::max);
    let alpha1 = upper.max(2.0 / l);
    let growth_threshold = vs
        .iter()
        .filter(|&&v| i1(v, p).abs() < v.abs().powi(3) / alpha1)
        .map(|v| v.abs())
        .fold(0.0, f64::max);

    let alpha2 = ws.iter().map(|&w| i2(w, p).abs() / (w.abs() + 1.0)).fold(0.0, f64::max);

    let bound3 = p.a.max(p.b);
    let mut alpha3 = 0.0f64;
    let mut h_violations = 0;
    for &v in &vs {
        for &w in &ws {
            let ratio = h_gate(v, w, p).abs() / (v.abs() + w.abs() + 1.0);
            alpha3 = alpha3.max(ratio);
            if ratio > bound3 * (1.0 + 1e-12) {
                h_violations += 1;
            }
        }
    }

    let alpha4 = if p.a > 0.0 { l / p.a } else { f64::INFINITY };
    let mut alpha5 = f64::INFINITY;
    if alpha4.is_finite() {
        for &v in &vs {
            for &w in &ws {
                if w != 0.0 {
                    let q = (i2(w, p) * v - alpha4 * h_gate(v, w, p) * w) / (w * w);
                    alpha5 = alpha5.min(q);
                }
            }
        }
    } else {
        alpha5 = f64::NEG_INFINITY;
    }

    let beta1 = monotonicity_shift(p);
    let beta2 = 0.0;
    let shifted = |z: f64| i1(z, p) + beta1 * z + beta2;
    let mut monotone_violations = 0;
    let mut c = 0.0f64;
    for (k, &z1) in vs.iter().enumerate() {
        for &z2 in &vs[k + 1..] {
            let gain = (shifted(z2) - shifted(z1)) * (z2 - z1);
            if !(gain > 0.0) {
                monotone_violations += 1;
                continue;
            }
            let need = (1.0 + z1.abs() + z2.abs()).powi(2) * (z2 - z1).powi(2);
            c = c.max(need / gain);
        }
    }
    let slope0 = l * p.theta + beta1;

    AssumptionAudit {
        r: 4.0,
        alpha1,
        growth_threshold,
        alpha2,
        alpha3,
        alpha4,
        alpha5,
        beta1,
        beta2,
        c,
        monotone_violations,
        h_violations,
        limit_condition_holds: slope0 == 0.0,
    }
}

/// Right-hand side of the space-clamped kinetics `v' = -(I_ion - I_app)`, `w' = H`.
pub fn membrane_rhs(v: f64, w: f64, i_app: f64, p: &FhnParams) -> (f64, f64) {
    (-(i_ion(v, w, p) - i_app), h_gate(v, w, p))
}

/// Classical RK4 integration of the space-clamped kinetics.
pub fn integrate_rk4(v0: f64, w0: f64, i_app: f64, t_end: f64, steps: usize, p: &FhnParams) -> (f64, f64) {
    let dt = t_end / steps as f64;
    let (mut v, mut w) = (v0, w0);
    for _ in 0..steps {
        let k1 = membrane_rhs(v, w, i_app, p);
        let k2 = membrane_rhs(v + 0.5 * dt * k1.0, w + 0.5 * dt * k1.1, i_app, p);
        let k3 = membrane_rhs(v + 0.5 * dt * k2.0, w + 0.5 * dt * k2.1, i_app, p);
        let k4 = membrane_rhs(v + dt * k3.0, w + dt * k3.1, i_app, p);
        v += dt / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
        w += dt / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
    }
    (v, w)
}
