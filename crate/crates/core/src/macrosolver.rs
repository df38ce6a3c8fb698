//! Homogenized bidomain system on a box with no-flux boundaries.
//!
//! Unknowns live on the nodes of a uniform Q1 grid. Diffusion operators are
//! the Q1 stiffness matrices of the effective tensors, and time derivatives and
//! reaction terms use the lumped mass, so every operator has zero row sums and
//! the natural boundary condition is zero flux.
//!
//! One step (Godunov ordering):
//! 1. `(A_i + A_e) u_e = -A_i v`, solved on the zero-mean subspace;
//! 2. `(μ/dt · M + A_i) v⁺ = μ/dt · M v - A_i u_e - μ M (I_ion(v, w) - I_app)`;
//! 3. `w⁺ = w + dt · H(v⁺, w)`.

use crate::cellsolver::Tensor;
use crate::error::{Result, TrihomError};
use crate::ionic::{h_gate, i_ion, FhnParams};
use crate::mesh::{assemble_stiffness, BoxMesh, DofMap};
use crate::sparse::{compensated_sum, norm2, pcg, CgOptions, CgOutcome, CsrMatrix};

/// Region where an applied current is switched on.
#[derive(Clone, Debug, PartialEq)]
pub enum StimulusShape {
    Ellipse { center: Vec<f64>, radii: Vec<f64> },
    Box { center: Vec<f64>, half_widths: Vec<f64> },
}

/// Pulse of constant amplitude on `[t_on, t_off)` over a region.
#[derive(Clone, Debug, PartialEq)]
pub struct Stimulus {
    pub shape: StimulusShape,
    pub amplitude: f64,
    pub t_on: f64,
    pub t_off: f64,
}

impl Stimulus {
    pub fn contains(&self, x: &[f64]) -> bool {
        match &self.shape {
            StimulusShape::Ellipse { center, radii } => {
                let r2: f64 = (0..center.len()).map(|a| ((x[a] - center[a]) / radii[a]).powi(2)).sum();
                r2 <= 1.0
            }
            StimulusShape::Box { center, half_widths } => {
                (0..center.len()).all(|a| (x[a] - center[a]).abs() <= half_widths[a])
            }
        }
    }

    pub fn value(&self, t: f64, x: &[f64]) -> f64 {
        if t >= self.t_on && t < self.t_off && self.contains(x) {
            self.amplitude
        } else {
            0.0
        }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        let (center, sizes) = match &self.shape {
            StimulusShape::Ellipse { center, radii } => (center, radii),
            StimulusShape::Box { center, half_widths } => (center, half_widths),
        };
        if center.len() != dim || sizes.len() != dim {
            return Err(TrihomError::InvalidParameter(format!("stimulus needs {dim} coordinates")));
        }
        if sizes.iter().any(|s| !(*s > 0.0)) {
            return Err(TrihomError::InvalidParameter("stimulus extent must be > 0".into()));
        }
        if !(self.amplitude.is_finite() && self.t_on.is_finite() && self.t_off >= self.t_on) {
            return Err(TrihomError::InvalidParameter("stimulus timing/amplitude invalid".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum InitialValue {
    Uniform(f64),
    /// One value per grid node (row-major).
    Nodal(Vec<f64>),
}

#[derive(Clone, Debug)]
pub struct MacroConfig {
    pub lengths: Vec<f64>,
    /// Elements per axis; there are `resolution + 1` nodes per axis.
    pub resolution: Vec<usize>,
    pub dt: f64,
    pub t_end: f64,
    pub m_i: Tensor,
    pub m_e: Tensor,
    pub mu_m: f64,
    pub ionic: FhnParams,
    pub stimuli: Vec<Stimulus>,
    pub v0: InitialValue,
    pub w0: InitialValue,
    /// Relative residual for the elliptic solve.
    pub elliptic_tol: f64,
    /// Relative residual for the parabolic solve.
    pub parabolic_tol: f64,
    /// Level crossed upward by `v` that counts as activation.
    pub activation_threshold: f64,
}

impl MacroConfig {
    pub fn new(lengths: Vec<f64>, resolution: Vec<usize>, m_i: Tensor, m_e: Tensor, mu_m: f64) -> Self {
        MacroConfig {
            lengths,
            resolution,
            dt: 0.01,
            t_end: 1.0,
            m_i,
            m_e,
            mu_m,
            ionic: FhnParams::default(),
            stimuli: Vec::new(),
            v0: InitialValue::Uniform(0.0),
            w0: InitialValue::Uniform(0.0),
            elliptic_tol: 1e-8,
            parabolic_tol: 1e-10,
            activation_threshold: 0.5,
        }
    }

    pub fn dim(&self) -> usize {
        self.lengths.len()
    }

    pub fn num_steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let dim = self.dim();
        let bad = |m: String| Err(TrihomError::InvalidParameter(m));
        if dim != 2 && dim != 3 {
            return bad(format!("macro domain must be 2D or 3D, got {dim}D"));
        }
        if self.resolution.len() != dim {
            return bad("resolution and lengths differ in length".into());
        }
        if self.resolution.iter().any(|&n| n < 16) {
            return bad("macro grid needs at least 16 elements per axis".into());
        }
        if self.lengths.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return bad("macro lengths must be > 0".into());
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return bad(format!("dt must be > 0, got {}", self.dt));
        }
        if !(self.t_end.is_finite() && self.t_end >= 0.0) {
            return bad(format!("t_end must be >= 0, got {}", self.t_end));
        }
        if !(self.mu_m.is_finite() && self.mu_m > 0.0) {
            return bad(format!("mu_m must be > 0, got {}", self.mu_m));
        }
        if !(self.elliptic_tol > 0.0 && self.parabolic_tol > 0.0) {
            return bad("solver tolerances must be > 0".into());
        }
        self.ionic.validate()?;
        check_psd("m_i", &self.m_i, dim)?;
        check_psd("m_e", &self.m_e, dim)?;
        // A singular m_i + m_e (both media blocked along an axis) is accepted:
        // the elliptic solution is then only determined up to functions of
        // the blocked coordinate, which never reach v when the data are
        // uniform along it.
        let sum = &self.m_i + &self.m_e;
        if !(nalgebra::SymmetricEigen::new(sum).eigenvalues.max() > 0.0) {
            return Err(TrihomError::InvalidCoefficient("m_i + m_e must not vanish".into()));
        }
        for s in &self.stimuli {
            s.validate(dim)?;
        }
        let nodes: usize = self.resolution.iter().map(|n| n + 1).product();
        for (name, iv) in [("v0", &self.v0), ("w0", &self.w0)] {
            match iv {
                InitialValue::Uniform(x) if !x.is_finite() => return bad(format!("{name} is not finite")),
                InitialValue::Nodal(xs) if xs.len() != nodes => {
                    return Err(TrihomError::GridMismatch(format!("{name} has {} values, grid has {nodes}", xs.len())))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Symmetric positive semidefinite check. Semidefinite tensors arise when
/// the cell blocks conduction along an axis.
fn check_psd(name: &str, m: &Tensor, dim: usize) -> Result<()> {
    if m.nrows() != dim || m.ncols() != dim {
        return Err(TrihomError::InvalidCoefficient(format!("{name} must be {dim}x{dim}")));
    }
    if m.iter().any(|x| !x.is_finite()) || (m - m.transpose()).amax() > 1e-12 * m.amax() {
        return Err(TrihomError::InvalidCoefficient(format!("{name} must be finite and symmetric")));
    }
    let lo = nalgebra::SymmetricEigen::new(m.clone()).eigenvalues.min();
    if lo < -1e-12 * m.amax() {
        return Err(TrihomError::InvalidCoefficient(format!("{name} has negative eigenvalue {lo:e}")));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct MacroState {
    pub u_e: Vec<f64>,
    pub v: Vec<f64>,
    pub w: Vec<f64>,
    pub t: f64,
    pub step: usize,
}

impl MacroState {
    /// `u_i = v + u_e`.
    pub fn u_i(&self) -> Vec<f64> {
        self.v.iter().zip(&self.u_e).map(|(a, b)| a + b).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    pub elliptic: CgOutcome,
    pub parabolic: CgOutcome,
    /// Mass-weighted mean of `u_e` after the step.
    pub mean_u_e: f64,
    /// `|Σ (A_i + A_e) u_e + Σ A_i v|`, the discrete total-current balance.
    pub current_balance: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub step: usize,
    pub t: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub mean_u_e: f64,
    pub activated_fraction: f64,
    pub elliptic_iterations: usize,
    pub parabolic_iterations: usize,
}

#[derive(Clone, Debug)]
pub struct MacroRun {
    pub state: MacroState,
    pub rows: Vec<SummaryRow>,
    /// First upward crossing of the activation threshold per node
    /// (linearly interpolated in time); `NaN` where it never happened.
    pub activation: Vec<f64>,
    /// Conduction velocity along each axis (see [`MacroSolver::conduction_velocity`]).
    pub velocity: Vec<Option<f64>>,
    pub max_abs_mean_u_e: f64,
    pub max_current_balance: f64,
    /// Largest relative residuals reached by the elliptic and parabolic solves.
    pub max_elliptic_residual: f64,
    pub max_parabolic_residual: f64,
}

pub struct MacroSolver {
    config: MacroConfig,
    mesh: BoxMesh,
    mass: Vec<f64>,
    a_i: CsrMatrix,
    a_i_abs: CsrMatrix,
    a_sum: CsrMatrix,
    parabolic: CsrMatrix,
    positions: Vec<[f64; 3]>,
}

impl MacroSolver {
    pub fn new(config: MacroConfig) -> Result<Self> {
        config.validate()?;
        let dim = config.dim();
        let mut n = [1usize; 3];
        let mut h = [1.0; 3];
        for a in 0..dim {
            n[a] = config.resolution[a];
            h[a] = config.lengths[a] / n[a] as f64;
        }
        let mesh = BoxMesh::new(dim, n, h, false);
        let dofs = DofMap::from_active(&mesh, &vec![true; mesh.num_voxels()]);
        let material = vec![Some(0u32); mesh.num_voxels()];
        let a_i = assemble_stiffness(&mesh, &dofs, &material, std::slice::from_ref(&config.m_i));
        let a_e = assemble_stiffness(&mesh, &dofs, &material, std::slice::from_ref(&config.m_e));
        let a_sum = a_i.add_scaled(1.0, &a_e);
        let mass = dofs.lumped_mass().to_vec();
        let scaled_mass: Vec<f64> = mass.iter().map(|m| config.mu_m / config.dt * m).collect();
        let parabolic = a_i.add_diagonal(&scaled_mass);
        let a_i_abs = a_i.abs();
        let positions = (0..mesh.num_nodes()).map(|k| mesh.node_position(k)).collect();
        Ok(MacroSolver { config, mesh, mass, a_i, a_i_abs, a_sum, parabolic, positions })
    }

    pub fn config(&self) -> &MacroConfig {
        &self.config
    }

    pub fn mesh(&self) -> &BoxMesh {
        &self.mesh
    }

    pub fn num_nodes(&self) -> usize {
        self.mesh.num_nodes()
    }

    /// Nodes per axis (`resolution + 1`).
    pub fn node_shape(&self) -> Vec<usize> {
        self.mesh.nodes_per_axis()[..self.config.dim()].to_vec()
    }

    pub fn node_position(&self, node: usize) -> &[f64] {
        &self.positions[node][..self.config.dim()]
    }

    pub fn lumped_mass(&self) -> &[f64] {
        &self.mass
    }

    /// Mass-weighted mean (`∫ f / |Ω|`).
    pub fn mean(&self, f: &[f64]) -> f64 {
        let num = compensated_sum(f.iter().zip(&self.mass).map(|(a, m)| a * m));
        num / compensated_sum(self.mass.iter().copied())
    }

    fn initial(&self, iv: &InitialValue) -> Vec<f64> {
        match iv {
            InitialValue::Uniform(x) => vec![*x; self.num_nodes()],
            InitialValue::Nodal(xs) => xs.clone(),
        }
    }

    pub fn initial_state(&self) -> Result<MacroState> {
        let v = self.initial(&self.config.v0);
        let w = self.initial(&self.config.w0);
        let mut u_e = vec![0.0; v.len()];
        self.elliptic_solve(&v, &mut u_e)?;
        Ok(MacroState { u_e, v, w, t: 0.0, step: 0 })
    }

    /// Solve `(A_i + A_e) u_e = rhs` with zero mean. `scale` is the magnitude
    /// against which the compatibility defect `|Σ rhs|` is judged.
    pub fn solve_elliptic_rhs(&self, rhs: &[f64], scale: f64, u_e: &mut [f64]) -> Result<CgOutcome> {
        let defect = compensated_sum(rhs.iter().copied()).abs();
        if defect > 1e-10 * scale {
            return Err(TrihomError::Incompatible(defect));
        }
        let n = rhs.len();
        let opts = CgOptions::projected(self.config.elliptic_tol, CgOptions::default_max_iter(n).max(2000));
        let mut b = rhs.to_vec();
        // cancellation noise only: the exact right-hand side is zero
        if norm2(&b) <= 1e-13 * scale {
            b.iter_mut().for_each(|x| *x = 0.0);
        }
        let out = pcg(&self.a_sum, &b, u_e, &opts)?;
        let mean = self.mean(u_e);
        u_e.iter_mut().for_each(|x| *x -= mean);
        Ok(out)
    }

    /// `u_e` for a given transmembrane potential.
    pub fn elliptic_solve(&self, v: &[f64], u_e: &mut [f64]) -> Result<CgOutcome> {
        let mut rhs = vec![0.0; v.len()];
        self.a_i.matvec(v, &mut rhs);
        rhs.iter_mut().for_each(|x| *x = -*x);
        let abs_v: Vec<f64> = v.iter().map(|x| x.abs()).collect();
        let mut gross = vec![0.0; v.len()];
        self.a_i_abs.matvec(&abs_v, &mut gross);
        let scale = compensated_sum(gross.iter().copied()).max(f64::MIN_POSITIVE);
        self.solve_elliptic_rhs(&rhs, scale, u_e)
    }

    /// Applied current at every node at time `t`.
    pub fn applied_current(&self, t: f64) -> Vec<f64> {
        let dim = self.config.dim();
        self.positions
            .iter()
            .map(|p| self.config.stimuli.iter().map(|s| s.value(t, &p[..dim])).sum())
            .collect()
    }

    pub fn step(&self, state: &mut MacroState) -> Result<StepReport> {
        let c = &self.config;
        let n = self.num_nodes();
        let elliptic = self.elliptic_solve(&state.v, &mut state.u_e)?;
        let current_balance = self.current_balance(state);

        let i_app = self.applied_current(state.t);
        let reaction: Vec<f64> = (0..n)
            .map(|k| i_ion(state.v[k], state.w[k], &c.ionic) - i_app[k])
            .collect();
        let mut rhs = vec![0.0; n];
        self.a_i.matvec(&state.u_e, &mut rhs);
        for k in 0..n {
            rhs[k] = c.mu_m * self.mass[k] * (state.v[k] / c.dt - reaction[k]) - rhs[k];
        }
        // the explicit reaction update is the exact answer for uniform fields
        let mut v_new: Vec<f64> = (0..n).map(|k| state.v[k] - c.dt * reaction[k]).collect();
        let opts = CgOptions::new(c.parabolic_tol, CgOptions::default_max_iter(n).max(2000));
        let parabolic = pcg(&self.parabolic, &rhs, &mut v_new, &opts)?;

        for k in 0..n {
            state.w[k] += c.dt * h_gate(v_new[k], state.w[k], &c.ionic);
        }
        state.v = v_new;
        state.t = (state.step + 1) as f64 * c.dt;
        state.step += 1;
        if let Some(bad) = ["v", "w", "u_e"]
            .into_iter()
            .zip([&state.v, &state.w, &state.u_e])
            .find(|(_, f)| f.iter().any(|x| !x.is_finite()))
        {
            return Err(TrihomError::NonFinite(bad.0.into()));
        }
        let mean_u_e = self.mean(&state.u_e);
        Ok(StepReport { elliptic, parabolic, mean_u_e, current_balance })
    }

    /// `|Σ_k [(A_i + A_e) u_e + A_i v]_k|` for the `u_e` solved from `v`:
    /// zero up to roundoff, since both operators have zero column sums.
    pub fn current_balance(&self, state: &MacroState) -> f64 {
        let n = self.num_nodes();
        let mut a = vec![0.0; n];
        let mut b = vec![0.0; n];
        self.a_sum.matvec(&state.u_e, &mut a);
        self.a_i.matvec(&state.v, &mut b);
        compensated_sum(a.iter().zip(&b).map(|(x, y)| x + y)).abs()
    }

    /// Time-integrate to `t_end`. `observer` sees the initial state and the
    /// state after every step.
    pub fn run(&self, mut observer: impl FnMut(&MacroState) -> Result<()>) -> Result<MacroRun> {
        let mut state = self.initial_state()?;
        let n = self.num_nodes();
        let thr = self.config.activation_threshold;
        let mut activation: Vec<f64> = state.v.iter().map(|&v| if v >= thr { 0.0 } else { f64::NAN }).collect();
        let mut rows = vec![self.summary_row(&state, &activation, 0, 0)];
        let mut max_mean = self.mean(&state.u_e).abs();
        let mut max_balance = self.current_balance(&state);
        let (mut max_ell, mut max_par) = (0.0f64, 0.0f64);
        observer(&state)?;
        for _ in 0..self.config.num_steps() {
            let v_old = state.v.clone();
            let t_old = state.t;
            let rep = self.step(&mut state)?;
            for k in 0..n {
                if activation[k].is_nan() && state.v[k] >= thr && v_old[k] < thr {
                    let s = (thr - v_old[k]) / (state.v[k] - v_old[k]);
                    activation[k] = t_old + s * (state.t - t_old);
                }
            }
            max_mean = max_mean.max(rep.mean_u_e.abs());
            max_balance = max_balance.max(rep.current_balance);
            max_ell = max_ell.max(rep.elliptic.residual);
            max_par = max_par.max(rep.parabolic.residual);
            rows.push(self.summary_row(&state, &activation, rep.elliptic.iterations, rep.parabolic.iterations));
            observer(&state)?;
        }
        let velocity = (0..self.config.dim()).map(|a| self.conduction_velocity(&activation, a)).collect();
        Ok(MacroRun {
            state,
            rows,
            activation,
            velocity,
            max_abs_mean_u_e: max_mean,
            max_current_balance: max_balance,
            max_elliptic_residual: max_ell,
            max_parabolic_residual: max_par,
        })
    }

    fn summary_row(&self, s: &MacroState, activation: &[f64], ell: usize, par: usize) -> SummaryRow {
        let act = activation.iter().filter(|t| !t.is_nan()).count();
        SummaryRow {
            step: s.step,
            t: s.t,
            v_min: s.v.iter().cloned().fold(f64::INFINITY, f64::min),
            v_max: s.v.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            mean_u_e: self.mean(&s.u_e),
            activated_fraction: act as f64 / activation.len() as f64,
            elliptic_iterations: ell,
            parabolic_iterations: par,
        }
    }

    /// Velocity along `axis` from activation times on the grid line through
    /// the domain center: inverse least-squares slope of `t(x)` over the middle
    /// half of the line. `None` if any of those nodes never activated or the
    /// front does not advance along the axis.
    pub fn conduction_velocity(&self, activation: &[f64], axis: usize) -> Option<f64> {
        let dim = self.config.dim();
        let nodes = self.mesh.nodes_per_axis();
        let mut c = [0usize; 3];
        for a in 0..dim {
            c[a] = nodes[a] / 2;
        }
        let len = nodes[axis];
        let (lo, hi) = (len / 4, 3 * (len - 1) / 4);
        let mut xs = Vec::new();
        let mut ts = Vec::new();
        for k in lo..=hi {
            c[axis] = k;
            let node = self.mesh.node_index(c);
            let t = activation[node];
            if t.is_nan() {
                return None;
            }
            xs.push(self.positions[node][axis]);
            ts.push(t);
        }
        let m = xs.len() as f64;
        let xm = xs.iter().sum::<f64>() / m;
        let tm = ts.iter().sum::<f64>() / m;
        let sxx: f64 = xs.iter().map(|x| (x - xm).powi(2)).sum();
        let sxt: f64 = xs.iter().zip(&ts).map(|(x, t)| (x - xm) * (t - tm)).sum();
        let slope = sxt / sxx;
        if slope.abs() <= 1e-12 {
            return None;
        }
        Some(1.0 / slope.abs())
    }

    /// Multilinear interpolation of a nodal field at `x` (clamped to the box).
    pub fn interpolate(&self, field: &[f64], x: &[f64]) -> f64 {
        self.grid().interpolate(field, x)
    }

    pub fn grid(&self) -> NodalGrid {
        NodalGrid { lengths: self.config.lengths.clone(), resolution: self.config.resolution.clone() }
    }
}

/// Node layout of a macro grid: `resolution[a] + 1` nodes per axis on
/// `[0, lengths[a]]`, row-major with the last axis fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct NodalGrid {
    pub lengths: Vec<f64>,
    pub resolution: Vec<usize>,
}

impl NodalGrid {
    pub fn num_nodes(&self) -> usize {
        self.resolution.iter().map(|n| n + 1).product()
    }

    pub fn node_index(&self, c: &[usize]) -> usize {
        c.iter().zip(&self.resolution).fold(0, |acc, (&ci, &n)| acc * (n + 1) + ci)
    }

    /// Multilinear interpolation of a nodal field; points outside the domain
    /// are clamped to it.
    pub fn interpolate(&self, field: &[f64], x: &[f64]) -> f64 {
        let dim = self.resolution.len();
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..dim {
            let n = self.resolution[a];
            let s = (x[a] / self.lengths[a] * n as f64).clamp(0.0, n as f64);
            let i = (s.floor() as usize).min(n - 1);
            base[a] = i;
            frac[a] = s - i as f64;
        }
        let mut val = 0.0;
        for m in 0..(1usize << dim) {
            let mut wgt = 1.0;
            let mut c = base;
            for a in 0..dim {
                let bit = (m >> a) & 1;
                c[a] += bit;
                wgt *= if bit == 1 { frac[a] } else { 1.0 - frac[a] };
            }
            val += wgt * field[self.node_index(&c[..dim])];
        }
        val
    }
}

/// Forward-Euler reaction / semi-implicit gate update used by the space-clamped
/// limit of [`MacroSolver::step`]; handy as a reference for uniform runs.
pub fn clamped_step(v: f64, w: f64, i_app: f64, dt: f64, p: &FhnParams) -> (f64, f64) {
    let v_new = v - dt * (i_ion(v, w, p) - i_app);
    (v_new, w + dt * h_gate(v_new, w, p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cellsolver::{diagonal, isotropic};
    use crate::ionic::integrate_rk4;

    /// Slow recovery keeps the medium excitable (the default kinetics are not).
    fn excitable() -> FhnParams {
        FhnParams { a: 0.001, b: 0.005, lambda: -1.0, theta: 0.15 }
    }

    fn config(n: usize) -> MacroConfig {
        MacroConfig::new(vec![1.0, 1.0], vec![n, n], isotropic(2, 1.0), isotropic(2, 1.0), 1.0)
    }

    #[test]
    fn rest_state_is_a_fixed_point() {
        let mut c = config(16);
        c.t_end = 1.0;
        let solver = MacroSolver::new(c).unwrap();
        let mut s = solver.initial_state().unwrap();
        for _ in 0..100 {
            let rep = solver.step(&mut s).unwrap();
            assert!(rep.mean_u_e.abs() <= 1e-10);
        }
        for f in [&s.u_e, &s.v, &s.w] {
            assert!(f.iter().all(|x| x.abs() <= 1e-12));
        }
    }

    #[test]
    fn uniform_potential_gives_zero_extracellular_field() {
        let solver = MacroSolver::new(config(16)).unwrap();
        let v = vec![0.7; solver.num_nodes()];
        let mut u = vec![0.0; v.len()];
        solver.elliptic_solve(&v, &mut u).unwrap();
        assert!(u.iter().all(|x| x.abs() < 1e-14));
    }

    #[test]
    fn cosine_potential_splits_by_conductivity_ratio() {
        let (si, se) = (1.0, 3.0);
        let c = MacroConfig::new(vec![1.0, 1.0], vec![64, 16], isotropic(2, si), isotropic(2, se), 1.0);
        let solver = MacroSolver::new(c).unwrap();
        let v: Vec<f64> = (0..solver.num_nodes())
            .map(|k| (2.0 * std::f64::consts::PI * solver.node_position(k)[0]).cos())
            .collect();
        let mut u = vec![0.0; v.len()];
        solver.elliptic_solve(&v, &mut u).unwrap();
        let ratio = -si / (si + se);
        let peak = v.iter().map(|x| x.abs()).fold(0.0, f64::max);
        for k in 0..v.len() {
            let x = solver.node_position(k)[0];
            if (0.1..=0.9).contains(&x) {
                assert!((u[k] - ratio * v[k]).abs() <= 0.05 * ratio.abs() * peak);
            }
        }
    }

    #[test]
    fn nonzero_mean_rhs_is_rejected() {
        let solver = MacroSolver::new(config(16)).unwrap();
        let rhs = vec![1.0f64; solver.num_nodes()];
        let mut u = vec![0.0; rhs.len()];
        let scale: f64 = rhs.iter().map(|x| x.abs()).sum();
        assert!(matches!(solver.solve_elliptic_rhs(&rhs, scale, &mut u), Err(TrihomError::Incompatible(_))));
    }

    #[test]
    fn uniform_run_follows_clamped_kinetics() {
        let mut c = config(16);
        c.v0 = InitialValue::Uniform(0.5);
        c.dt = 1e-3;
        c.t_end = 1.0;
        let solver = MacroSolver::new(c.clone()).unwrap();
        let run = solver.run(|_| Ok(())).unwrap();
        let (mut v, mut w) = (0.5, 0.0);
        for _ in 0..1000 {
            (v, w) = clamped_step(v, w, 0.0, c.dt, &c.ionic);
        }
        for k in 0..solver.num_nodes() {
            assert!((run.state.v[k] - v).abs() < 1e-12);
            assert!((run.state.w[k] - w).abs() < 1e-12);
        }
        let (rv, _) = integrate_rk4(0.5, 0.0, 0.0, 1.0, 100_000, &c.ionic);
        assert!((run.state.v[0] - rv).abs() < 1e-3);
    }

    #[test]
    fn time_refinement_is_first_order() {
        let p = FhnParams::default();
        let reference = integrate_rk4(0.5, 0.0, 0.0, 1.0, 10_000, &p);
        let mut errs = Vec::new();
        for steps in [50usize, 100, 200, 400] {
            let mut c = config(16);
            c.v0 = InitialValue::Uniform(0.5);
            c.dt = 1.0 / steps as f64;
            let solver = MacroSolver::new(c).unwrap();
            let run = solver.run(|_| Ok(())).unwrap();
            errs.push((run.state.v[0] - reference.0).abs());
        }
        for k in 1..errs.len() {
            assert!(errs[k - 1] / errs[k] >= 1.8, "{errs:?}");
        }
    }

    #[test]
    fn config_validation() {
        let mut c = config(16);
        c.dt = 0.0;
        assert!(MacroSolver::new(c).is_err());
        assert!(MacroSolver::new(config(8)).is_err());
        let mut c = config(16);
        c.m_i = diagonal(&[1.0, -0.1]);
        assert!(MacroSolver::new(c).is_err());
        // blocked axis in one medium is allowed
        let mut c = config(16);
        c.m_i = diagonal(&[0.0, 1.0]);
        assert!(MacroSolver::new(c).is_ok());
        let mut c = config(16);
        c.m_i = diagonal(&[0.0, 0.0]);
        c.m_e = diagonal(&[0.0, 0.0]);
        assert!(MacroSolver::new(c).is_err());
    }

    #[test]
    fn corner_stimulus_front_moves_outward() {
        let mut c = MacroConfig::new(vec![10.0, 10.0], vec![32, 32], isotropic(2, 1.0), isotropic(2, 1.0), 1.0);
        c.dt = 0.05;
        c.t_end = 30.0;
        c.ionic = excitable();
        c.stimuli.push(Stimulus {
            shape: StimulusShape::Ellipse { center: vec![0.0, 0.0], radii: vec![2.5, 2.5] },
            amplitude: 2.0,
            t_on: 0.0,
            t_off: 1.0,
        });
        let solver = MacroSolver::new(c).unwrap();
        let run = solver.run(|_| Ok(())).unwrap();
        // along the diagonal activation times increase with distance
        let mut prev = -1.0;
        for k in 8..20 {
            let node = solver.mesh().node_index([k, k, 0]);
            let t = run.activation[node];
            assert!(t > prev, "node {k}: {t} after {prev}");
            prev = t;
        }
        assert!(run.max_abs_mean_u_e <= 1e-10);
        assert!(run.rows.iter().all(|r| r.v_max <= 2.0));
    }

    #[test]
    fn larger_membrane_ratio_delays_activation() {
        let mut times = Vec::new();
        for mu in [1.0, 2.0] {
            let mut c = MacroConfig::new(vec![10.0, 10.0], vec![32, 16], isotropic(2, 1.0), isotropic(2, 1.0), mu);
            c.dt = 0.05;
            c.t_end = 40.0;
            c.ionic = excitable();
            c.stimuli.push(Stimulus {
                shape: StimulusShape::Box { center: vec![0.0, 5.0], half_widths: vec![1.0, 5.0] },
                amplitude: 2.0,
                t_on: 0.0,
                t_off: 1.0,
            });
            let solver = MacroSolver::new(c).unwrap();
            let run = solver.run(|_| Ok(())).unwrap();
            let far = solver.mesh().node_index([24, 8, 0]);
            times.push(run.activation[far]);
        }
        assert!(times[0].is_finite());
        assert!(times[1] > times[0], "{times:?}");
    }

    #[test]
    fn interpolation_reproduces_bilinear_fields() {
        let solver = MacroSolver::new(config(16)).unwrap();
        let f: Vec<f64> = (0..solver.num_nodes())
            .map(|k| {
                let p = solver.node_position(k);
                1.0 + 2.0 * p[0] - p[1] + 0.5 * p[0] * p[1]
            })
            .collect();
        for x in [[0.13, 0.77], [1.0, 1.0], [0.0, 0.5]] {
            let exact = 1.0 + 2.0 * x[0] - x[1] + 0.5 * x[0] * x[1];
            assert!((solver.interpolate(&f, &x) - exact).abs() < 1e-13);
        }
    }
}
