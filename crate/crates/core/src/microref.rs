//! Resolved microscopic bidomain problem on a 2D tiling of meso cells.
//!
//! The domain is `cells[0] × cells[1]` copies of the meso cell scaled by `ε`.
//! `u_i` lives on nodes touching intracellular voxels and `u_e` on nodes
//! touching extracellular ones; membrane nodes carry both plus `v` and `w`.
//! The membrane is lumped onto those nodes with weights equal to the length of
//! the reconstructed interface inside each node's dual box.
//!
//! With `I_m = ε((v⁺ - v)/dt + I_ion(v, w) - I_app)` and membrane mass `S`, a
//! step solves the symmetric coupled system
//!
//! ```text
//! [A_i + cS   -cS     ] [u_i]   [ ε S r]
//! [-cS        A_e + cS] [u_e] = [-ε S r],   c = ε/dt,  r = v/dt - I_ion + I_app
//! ```
//!
//! on the zero-mean subspace, then sets `v⁺ = u_i - u_e` and
//! `w⁺ = w + dt H(v⁺, w)` on the membrane.

use crate::cellsolver::Tensor;
use crate::error::{Result, TrihomError};
use crate::geometry::{march_dual_box, Label, UnitCellGeometry};
use crate::ionic::{h_gate, i_ion, FhnParams};
use crate::macrosolver::{NodalGrid, Stimulus};
use crate::mesh::{assemble_stiffness, BoxMesh, DofMap};
use crate::sparse::{compensated_sum, pcg, CgOptions, CsrMatrix};

/// Largest resolved grid (voxels) accepted.
pub const MAX_VOXELS: usize = 512 * 512;

/// Optional insulating holes inside the intracellular medium, tiled
/// `per_cell × per_cell` times in every meso cell.
#[derive(Clone, Debug)]
pub struct Mitochondria {
    pub cell: UnitCellGeometry,
    pub per_cell: usize,
}

#[derive(Clone, Debug)]
pub struct MicroConfig {
    /// Meso cell (INTRA/EXTRA labels) repeated over the domain.
    pub cell: UnitCellGeometry,
    pub epsilon: f64,
    pub cells: [usize; 2],
    pub mitochondria: Option<Mitochondria>,
    pub m_i: Tensor,
    pub m_e: Tensor,
    pub ionic: FhnParams,
    pub dt: f64,
    pub t_end: f64,
    pub stimuli: Vec<Stimulus>,
    pub v0: f64,
    pub w0: f64,
    /// Relative residual for the coupled solve.
    pub tol: f64,
}

impl MicroConfig {
    pub fn new(cell: UnitCellGeometry, epsilon: f64, cells: [usize; 2], m_i: Tensor, m_e: Tensor) -> Self {
        MicroConfig {
            cell,
            epsilon,
            cells,
            mitochondria: None,
            m_i,
            m_e,
            ionic: FhnParams::default(),
            dt: 0.01,
            t_end: 1.0,
            stimuli: Vec::new(),
            v0: 0.0,
            w0: 0.0,
            tol: 1e-12,
        }
    }

    pub fn num_steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }

    /// Physical extent of the domain.
    pub fn lengths(&self) -> [f64; 2] {
        let l = self.cell.spec().lengths();
        [self.cells[0] as f64 * self.epsilon * l[0], self.cells[1] as f64 * self.epsilon * l[1]]
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TrihomError::InvalidParameter(m));
        if self.cell.spec().dim() != 2 {
            return bad("the resolved solver is 2D only".into());
        }
        if self.cell.level() != crate::geometry::Level::Meso {
            return bad("the tiled cell must be a meso (INTRA/EXTRA) cell".into());
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return bad(format!("epsilon must be > 0, got {}", self.epsilon));
        }
        if self.cells[0] == 0 || self.cells[1] == 0 {
            return bad("need at least one cell per axis".into());
        }
        let n = self.cell.spec().n3();
        let voxels = self.cells[0] * n[0] * self.cells[1] * n[1];
        if voxels > MAX_VOXELS {
            return bad(format!("resolved grid has {voxels} voxels (limit {MAX_VOXELS})"));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return bad(format!("dt must be > 0, got {}", self.dt));
        }
        if !(self.t_end.is_finite() && self.t_end >= 0.0) {
            return bad(format!("t_end must be >= 0, got {}", self.t_end));
        }
        if !(self.tol > 0.0) {
            return bad("tol must be > 0".into());
        }
        if !(self.v0.is_finite() && self.w0.is_finite()) {
            return bad("initial values must be finite".into());
        }
        if let Some(m) = &self.mitochondria {
            if m.cell.level() != crate::geometry::Level::Micro || m.cell.spec().dim() != 2 || m.per_cell == 0 {
                return bad("mitochondria need a 2D micro cell and per_cell >= 1".into());
            }
        }
        self.ionic.validate()?;
        for (name, m) in [("m_i", &self.m_i), ("m_e", &self.m_e)] {
            crate::cellsolver::ConductivityField::new(2, vec![m.clone()], vec![Some(0)])
                .map_err(|e| TrihomError::InvalidCoefficient(format!("{name}: {e}")))?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MembraneNode {
    pub node: usize,
    pub position: [f64; 2],
    pub weight: f64,
    intra: usize,
    extra: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MicroState {
    /// Intracellular potential per intracellular dof.
    pub u_i: Vec<f64>,
    /// Extracellular potential per extracellular dof.
    pub u_e: Vec<f64>,
    /// Transmembrane potential per membrane node.
    pub v: Vec<f64>,
    pub w: Vec<f64>,
    pub t: f64,
    pub step: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MicroStepReport {
    pub iterations: usize,
    pub residual: f64,
    /// Area-weighted mean of `u_e` over the extracellular medium.
    pub mean_u_e: f64,
    /// `|Σ S I_m| / Σ |S I_m|`.
    pub current_balance: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MembraneSnapshot {
    pub t: f64,
    pub v: Vec<f64>,
    pub w: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct MicroRun {
    pub state: MicroState,
    pub snapshots: Vec<MembraneSnapshot>,
    pub max_abs_mean_u_e: f64,
    pub max_current_balance: f64,
    pub max_iterations: usize,
}

pub struct MicroSolver {
    config: MicroConfig,
    mesh: BoxMesh,
    intra: DofMap,
    extra: DofMap,
    membrane: Vec<MembraneNode>,
    system: CsrMatrix,
}

/// Clip the segment `a`–`b` to the box `[0, w] × [0, h]` (Liang–Barsky).
fn clip_segment(a: [f64; 3], b: [f64; 3], w: f64, h: f64) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1]];
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for (p, q) in [(-d[0], a[0]), (d[0], w - a[0]), (-d[1], a[1]), (d[1], h - a[1])] {
        if p == 0.0 {
            if q < 0.0 {
                return 0.0;
            }
        } else {
            let r = q / p;
            if p < 0.0 {
                t0 = t0.max(r);
            } else {
                t1 = t1.min(r);
            }
        }
    }
    if t1 <= t0 {
        0.0
    } else {
        (t1 - t0) * (d[0] * d[0] + d[1] * d[1]).sqrt()
    }
}

impl MicroSolver {
    pub fn new(config: MicroConfig) -> Result<Self> {
        config.validate()?;
        let cell = &config.cell;
        let cn = cell.spec().n3();
        let ch = cell.spec().h3();
        let eps = config.epsilon;
        let n = [config.cells[0] * cn[0], config.cells[1] * cn[1], 1];
        let h = [eps * ch[0], eps * ch[1], 1.0];
        let mesh = BoxMesh::new(2, n, h, false);
        let [width, height] = config.lengths();

        let cell_voxel = |i: i64, j: i64| -> usize {
            let ci = i.rem_euclid(cn[0] as i64) as usize;
            let cj = j.rem_euclid(cn[1] as i64) as usize;
            cell.spec().voxel_index([ci, cj, 0])
        };
        let mito_at = |p: [f64; 3]| -> bool {
            let Some(m) = &config.mitochondria else { return false };
            let zl = m.cell.spec().lengths();
            let yl = cell.spec().lengths();
            let mut z = [0.0; 3];
            for a in 0..2 {
                let size = eps * yl[a] / m.per_cell as f64;
                z[a] = p[a] / size * zl[a];
            }
            m.cell.shape().level_set(m.cell.spec(), &z) < 0.0
        };

        let nv = mesh.num_voxels();
        let mut intra_mask = vec![false; nv];
        let mut extra_mask = vec![false; nv];
        for v in 0..nv {
            let c = mesh.voxel_coords(v);
            match cell.label(cell_voxel(c[0] as i64, c[1] as i64)) {
                Label::Intra => {
                    let p = [(c[0] as f64 + 0.5) * h[0], (c[1] as f64 + 0.5) * h[1], 0.0];
                    intra_mask[v] = !mito_at(p);
                }
                _ => extra_mask[v] = true,
            }
        }
        if !intra_mask.iter().any(|&b| b) || !extra_mask.iter().any(|&b| b) {
            return Err(TrihomError::EmptyInterface);
        }
        let intra = DofMap::from_active(&mesh, &intra_mask);
        let extra = DofMap::from_active(&mesh, &extra_mask);

        let mut membrane = Vec::new();
        let phi = cell.level_set();
        let nodes = mesh.nodes_per_axis();
        let mut corners = vec![([0.0; 3], 0.0); 4];
        for node in 0..mesh.num_nodes() {
            let c = mesh.node_coords(node);
            for (m, corner) in corners.iter_mut().enumerate() {
                let vi = c[0] as i64 - 1 + (m & 1) as i64;
                let vj = c[1] as i64 - 1 + ((m >> 1) & 1) as i64;
                let pos = [(vi as f64 + 0.5) * h[0], (vj as f64 + 0.5) * h[1], 0.0];
                *corner = (pos, phi[cell_voxel(vi, vj)]);
            }
            let weight: f64 = march_dual_box(2, &corners)
                .iter()
                .map(|piece| clip_segment(piece.vertices[0], piece.vertices[1], width, height))
                .sum();
            if weight <= 0.0 {
                continue;
            }
            if let (Some(di), Some(de)) = (intra.dof(node), extra.dof(node)) {
                let p = mesh.node_position(node);
                membrane.push(MembraneNode { node, position: [p[0], p[1]], weight, intra: di, extra: de });
            }
        }
        debug_assert_eq!(nodes[2], 1);
        if membrane.is_empty() {
            return Err(TrihomError::EmptyInterface);
        }

        let intra_mat: Vec<Option<u32>> = intra_mask.iter().map(|&b| b.then_some(0)).collect();
        let extra_mat: Vec<Option<u32>> = extra_mask.iter().map(|&b| b.then_some(0)).collect();
        let a_i = assemble_stiffness(&mesh, &intra, &intra_mat, std::slice::from_ref(&config.m_i));
        let a_e = assemble_stiffness(&mesh, &extra, &extra_mat, std::slice::from_ref(&config.m_e));
        let ni = intra.len();
        let c = eps / config.dt;
        let mut triplets = Vec::with_capacity(a_i.nnz() + a_e.nnz() + 4 * membrane.len());
        for r in 0..ni {
            triplets.extend(a_i.row(r).map(|(col, val)| (r, col, val)));
        }
        for r in 0..extra.len() {
            triplets.extend(a_e.row(r).map(|(col, val)| (ni + r, ni + col, val)));
        }
        for m in &membrane {
            let s = c * m.weight;
            let (i, e) = (m.intra, ni + m.extra);
            triplets.push((i, i, s));
            triplets.push((e, e, s));
            triplets.push((i, e, -s));
            triplets.push((e, i, -s));
        }
        let system = CsrMatrix::from_triplets(ni + extra.len(), triplets);
        Ok(MicroSolver { config, mesh, intra, extra, membrane, system })
    }

    pub fn config(&self) -> &MicroConfig {
        &self.config
    }

    pub fn mesh(&self) -> &BoxMesh {
        &self.mesh
    }

    pub fn membrane(&self) -> &[MembraneNode] {
        &self.membrane
    }

    /// Total membrane length.
    pub fn membrane_measure(&self) -> f64 {
        self.membrane.iter().map(|m| m.weight).sum()
    }

    pub fn initial_state(&self) -> MicroState {
        let nm = self.membrane.len();
        MicroState {
            u_i: vec![0.0; self.intra.len()],
            u_e: vec![0.0; self.extra.len()],
            v: vec![self.config.v0; nm],
            w: vec![self.config.w0; nm],
            t: 0.0,
            step: 0,
        }
    }

    pub fn step(&self, state: &mut MicroState) -> Result<MicroStepReport> {
        let cfg = &self.config;
        let eps = cfg.epsilon;
        let ni = self.intra.len();
        let nm = self.membrane.len();
        // I_app - I_ion per membrane node
        let source: Vec<f64> = (0..nm)
            .map(|k| {
                let m = &self.membrane[k];
                let app: f64 = cfg.stimuli.iter().map(|s| s.value(state.t, &m.position)).sum();
                app - i_ion(state.v[k], state.w[k], &cfg.ionic)
            })
            .collect();
        let mut b = vec![0.0; self.system.nrows()];
        for (k, m) in self.membrane.iter().enumerate() {
            let load = eps * m.weight * (state.v[k] / cfg.dt + source[k]);
            b[m.intra] += load;
            b[ni + m.extra] -= load;
        }
        // Solve for the increment so the tolerance is relative to the
        // membrane current rather than to the much larger `v/dt` load.
        let mut x: Vec<f64> = state.u_i.iter().chain(&state.u_e).copied().collect();
        let mut kx = vec![0.0; x.len()];
        self.system.matvec(&x, &mut kx);
        let d: Vec<f64> = b.iter().zip(&kx).map(|(b, k)| b - k).collect();
        let mut dx = vec![0.0; x.len()];
        let max_iter = CgOptions::default_max_iter(x.len()).max(5000);
        let out = pcg(&self.system, &d, &mut dx, &CgOptions::projected(cfg.tol, max_iter))?;
        x.iter_mut().zip(&dx).for_each(|(x, d)| *x += d);
        let mean = self.extra.weighted_mean(&x[ni..]);
        x.iter_mut().for_each(|u| *u -= mean);

        let mut flux = Vec::with_capacity(nm);
        for (k, m) in self.membrane.iter().enumerate() {
            let v_new = x[m.intra] - x[ni + m.extra];
            flux.push(eps * m.weight * ((v_new - state.v[k]) / cfg.dt - source[k]));
            state.w[k] += cfg.dt * h_gate(v_new, state.w[k], &cfg.ionic);
            state.v[k] = v_new;
        }
        state.u_e = x.split_off(ni);
        state.u_i = x;
        state.step += 1;
        state.t = state.step as f64 * cfg.dt;
        if state.v.iter().chain(&state.w).any(|z| !z.is_finite()) {
            return Err(TrihomError::NonFinite("membrane potential".into()));
        }
        let gross: f64 = flux.iter().map(|f| f.abs()).sum();
        let net = compensated_sum(flux.iter().copied()).abs();
        Ok(MicroStepReport {
            iterations: out.iterations,
            residual: out.residual,
            mean_u_e: self.extra.weighted_mean(&state.u_e),
            current_balance: if gross > 0.0 { net / gross } else { 0.0 },
        })
    }

    /// Run to `t_end`, keeping membrane snapshots every `every` steps (and at
    /// the start).
    pub fn run(&self, every: usize) -> Result<MicroRun> {
        let mut state = self.initial_state();
        let snap = |s: &MicroState| MembraneSnapshot { t: s.t, v: s.v.clone(), w: s.w.clone() };
        let mut snapshots = vec![snap(&state)];
        let (mut max_mean, mut max_bal, mut max_it) = (0.0f64, 0.0f64, 0usize);
        for _ in 0..self.config.num_steps() {
            let rep = self.step(&mut state)?;
            max_mean = max_mean.max(rep.mean_u_e.abs());
            max_bal = max_bal.max(rep.current_balance);
            max_it = max_it.max(rep.iterations);
            if every > 0 && state.step % every == 0 {
                snapshots.push(snap(&state));
            }
        }
        Ok(MicroRun {
            state,
            snapshots,
            max_abs_mean_u_e: max_mean,
            max_current_balance: max_bal,
            max_iterations: max_it,
        })
    }

    /// Intracellular potential scattered to grid nodes (NaN off the medium).
    pub fn u_i_nodes(&self, state: &MicroState) -> Vec<f64> {
        self.intra.to_nodes(&state.u_i, f64::NAN)
    }

    pub fn u_e_nodes(&self, state: &MicroState) -> Vec<f64> {
        self.extra.to_nodes(&state.u_e, f64::NAN)
    }
}

/// Membrane-weighted L2 distance between micro and macro transmembrane
/// potentials at matching times.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorReport {
    pub times: Vec<f64>,
    /// `sqrt(Σ_k s_k (v_micro - v_macro(x_k))² / Σ_k s_k)` per time.
    pub errors: Vec<f64>,
    /// Root mean square over the sampled times.
    pub combined: f64,
}

/// Membrane sample points with their weights and the snapshots taken on
/// them: everything a comparison against a macro run needs.
#[derive(Clone, Debug, PartialEq)]
pub struct MembraneTrajectory {
    pub domain: [f64; 2],
    pub positions: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    pub snapshots: Vec<MembraneSnapshot>,
}

impl MicroSolver {
    pub fn trajectory(&self, snapshots: Vec<MembraneSnapshot>) -> MembraneTrajectory {
        MembraneTrajectory {
            domain: self.config.lengths(),
            positions: self.membrane.iter().map(|m| m.position).collect(),
            weights: self.membrane.iter().map(|m| m.weight).collect(),
            snapshots,
        }
    }
}

/// Compare membrane snapshots against macro `v` fields sampled at the same
/// times; macro fields are interpolated at the membrane nodes.
pub fn compare_to_macro(
    micro: &MembraneTrajectory,
    grid: &NodalGrid,
    macro_v: &[(f64, Vec<f64>)],
) -> Result<ErrorReport> {
    let dom = micro.domain;
    if grid.lengths.len() != 2 || (0..2).any(|a| (grid.lengths[a] - dom[a]).abs() > 1e-9 * dom[a]) {
        return Err(TrihomError::GridMismatch(format!(
            "macro domain {:?} differs from micro domain {dom:?}",
            grid.lengths
        )));
    }
    let np = micro.positions.len();
    if micro.weights.len() != np {
        return Err(TrihomError::GridMismatch("membrane weights and positions differ in length".into()));
    }
    let total: f64 = micro.weights.iter().sum();
    if !(total > 0.0) {
        return Err(TrihomError::EmptyInterface);
    }
    let mut times = Vec::new();
    let mut errors = Vec::new();
    for snap in &micro.snapshots {
        let Some((_, field)) = macro_v.iter().find(|(t, _)| (t - snap.t).abs() <= 1e-9 * snap.t.abs().max(1.0))
        else {
            return Err(TrihomError::GridMismatch(format!("no macro field at t = {}", snap.t)));
        };
        if field.len() != grid.num_nodes() || snap.v.len() != np {
            return Err(TrihomError::GridMismatch("field length does not match its grid".into()));
        }
        let mut acc = 0.0;
        for k in 0..np {
            let d = snap.v[k] - grid.interpolate(field, &micro.positions[k]);
            acc += micro.weights[k] * d * d;
        }
        times.push(snap.t);
        errors.push((acc / total).sqrt());
    }
    let combined = if errors.is_empty() {
        0.0
    } else {
        (errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt()
    };
    Ok(ErrorReport { times, errors, combined })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cellsolver::isotropic;
    use crate::geometry::{build_cell, measure_interface, GridSpec, Level, ShapeSpec};
    use crate::macrosolver::{clamped_step, StimulusShape};

    fn disk_cell(n: usize) -> UnitCellGeometry {
        let shape = ShapeSpec::Ball { center: vec![0.5, 0.5], radius: 0.3 };
        build_cell(&GridSpec::unit(2, n).unwrap(), &shape, Level::Meso).unwrap()
    }

    #[test]
    fn clipping() {
        assert!((clip_segment([-1.0, 0.5, 0.0], [2.0, 0.5, 0.0], 1.0, 1.0) - 1.0).abs() < 1e-15);
        assert_eq!(clip_segment([1.5, 0.5, 0.0], [2.0, 0.5, 0.0], 1.0, 1.0), 0.0);
        assert!((clip_segment([0.2, 0.2, 0.0], [0.4, 0.4, 0.0], 1.0, 1.0) - 0.08f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn membrane_matches_tiled_cell_interface() {
        let cell = disk_cell(16);
        let per_cell = measure_interface(&cell).unwrap();
        let cfg = MicroConfig::new(cell, 0.25, [4, 4], isotropic(2, 1.0), isotropic(2, 1.0));
        let solver = MicroSolver::new(cfg).unwrap();
        // interior disks never touch the boundary, so clipping removes nothing
        let expected = 16.0 * 0.25 * per_cell;
        assert!((solver.membrane_measure() - expected).abs() < 1e-12 * expected);
    }

    #[test]
    fn rest_state_is_a_fixed_point() {
        let cfg = MicroConfig::new(disk_cell(16), 0.5, [2, 2], isotropic(2, 1.0), isotropic(2, 1.0));
        let solver = MicroSolver::new(cfg).unwrap();
        let mut s = solver.initial_state();
        for _ in 0..20 {
            let rep = solver.step(&mut s).unwrap();
            assert!(rep.mean_u_e.abs() <= 1e-10);
        }
        assert!(s.v.iter().chain(&s.w).chain(&s.u_i).chain(&s.u_e).all(|x| x.abs() <= 1e-12));
    }

    #[test]
    fn equipotential_media_follow_membrane_kinetics() {
        let mut cfg = MicroConfig::new(disk_cell(16), 1.0, [1, 1], isotropic(2, 1e4), isotropic(2, 1e4));
        cfg.dt = 0.01;
        cfg.t_end = 1.0;
        cfg.stimuli.push(Stimulus {
            shape: StimulusShape::Box { center: vec![0.5, 0.5], half_widths: vec![1.0, 1.0] },
            amplitude: 0.3,
            t_on: 0.0,
            t_off: 0.5,
        });
        let solver = MicroSolver::new(cfg.clone()).unwrap();
        let run = solver.run(0).unwrap();
        let (mut v, mut w) = (0.0, 0.0);
        for k in 0..100 {
            let app = if (k as f64) * cfg.dt < 0.5 { 0.3 } else { 0.0 };
            (v, w) = clamped_step(v, w, app, cfg.dt, &cfg.ionic);
        }
        for k in 0..run.state.v.len() {
            assert!((run.state.v[k] - v).abs() <= 1e-4, "{} vs {v}", run.state.v[k]);
            assert!((run.state.w[k] - w).abs() <= 1e-4);
        }
    }

    #[test]
    fn membrane_current_balances() {
        let mut cfg = MicroConfig::new(disk_cell(16), 0.5, [2, 2], isotropic(2, 1.0), isotropic(2, 2.0));
        cfg.dt = 0.05;
        cfg.t_end = 0.5;
        cfg.stimuli.push(Stimulus {
            shape: StimulusShape::Ellipse { center: vec![0.0, 0.0], radii: vec![0.4, 0.4] },
            amplitude: 2.0,
            t_on: 0.0,
            t_off: 0.3,
        });
        let solver = MicroSolver::new(cfg).unwrap();
        let run = solver.run(1).unwrap();
        assert!(run.max_current_balance <= 1e-9, "{}", run.max_current_balance);
        assert!(run.max_abs_mean_u_e <= 1e-10);
        let s = &run.state;
        assert!(s.v.iter().any(|x| x.abs() > 1e-3));
        // trace identity
        let ui = solver.u_i_nodes(s);
        let ue = solver.u_e_nodes(s);
        for (k, m) in solver.membrane().iter().enumerate() {
            assert_eq!(s.v[k], ui[m.node] - ue[m.node]);
        }
    }

    #[test]
    fn identical_trivial_fields_compare_to_zero() {
        let cfg = MicroConfig::new(disk_cell(16), 0.5, [2, 2], isotropic(2, 1.0), isotropic(2, 1.0));
        let micro = MicroSolver::new(cfg).unwrap();
        let nm = micro.membrane().len();
        let traj = micro.trajectory(vec![MembraneSnapshot { t: 0.0, v: vec![0.0; nm], w: vec![0.0; nm] }]);
        let grid = NodalGrid { lengths: vec![1.0, 1.0], resolution: vec![16, 16] };
        let rep = compare_to_macro(&traj, &grid, &[(0.0, vec![0.0; grid.num_nodes()])]).unwrap();
        assert_eq!(rep.combined, 0.0);
        assert!(matches!(
            compare_to_macro(&traj, &grid, &[(1.0, vec![0.0; grid.num_nodes()])]),
            Err(TrihomError::GridMismatch(_))
        ));
        let other = NodalGrid { lengths: vec![2.0, 1.0], resolution: vec![16, 16] };
        assert!(compare_to_macro(&traj, &other, &[(0.0, vec![0.0; other.num_nodes()])]).is_err());
    }

    #[test]
    fn error_of_a_constant_offset_is_the_offset() {
        let cfg = MicroConfig::new(disk_cell(16), 0.5, [2, 2], isotropic(2, 1.0), isotropic(2, 1.0));
        let micro = MicroSolver::new(cfg).unwrap();
        let nm = micro.membrane().len();
        let grid = NodalGrid { lengths: vec![1.0, 1.0], resolution: vec![16, 16] };
        // linear macro field, micro values shifted by 0.25
        let mut field = vec![0.0; grid.num_nodes()];
        for i in 0..=16 {
            for j in 0..=16 {
                field[grid.node_index(&[i, j])] = 0.5 * i as f64 / 16.0 - 0.2 * j as f64 / 16.0;
            }
        }
        let v = micro.membrane().iter().map(|m| 0.5 * m.position[0] - 0.2 * m.position[1] + 0.25).collect();
        let traj = micro.trajectory(vec![MembraneSnapshot { t: 1.0, v, w: vec![0.0; nm] }]);
        let rep = compare_to_macro(&traj, &grid, &[(1.0, field)]).unwrap();
        assert!((rep.combined - 0.25).abs() < 1e-13);
    }

    #[test]
    fn mitochondria_reduce_intracellular_dofs() {
        let base = MicroConfig::new(disk_cell(32), 0.5, [2, 2], isotropic(2, 1.0), isotropic(2, 1.0));
        let plain = MicroSolver::new(base.clone()).unwrap();
        let mito_cell = build_cell(
            &GridSpec::unit(2, 16).unwrap(),
            &ShapeSpec::Ball { center: vec![0.5, 0.5], radius: 0.25 },
            Level::Micro,
        )
        .unwrap();
        let mut cfg = base;
        cfg.mitochondria = Some(Mitochondria { cell: mito_cell, per_cell: 4 });
        let holed = MicroSolver::new(cfg).unwrap();
        assert!(holed.intra.len() < plain.intra.len());
        let mut s = holed.initial_state();
        holed.step(&mut s).unwrap();
    }
}
