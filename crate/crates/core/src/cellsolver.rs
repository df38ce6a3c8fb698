//! Periodic cell (corrector) problems.
//!
//! For a direction `q`, find a periodic `χ` on the active subdomain with zero
//! mean such that `∫ M (∇χ + e_q) · ∇v = 0` for every periodic test function
//! `v`. Holes carry a natural zero-flux condition simply by being left out of
//! the assembly.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Result, TrihomError};
use crate::geometry::{connectivity, Connectivity, GridSpec, Label, UnitCellGeometry};
use crate::mesh::{assemble_stiffness, BoxMesh, DofMap, ElementBasis};
use crate::sparse::{compensated_sum, norm2, pcg, CgOptions, CgOutcome, CsrMatrix};

pub type Tensor = DMatrix<f64>;

pub fn isotropic(dim: usize, sigma: f64) -> Tensor {
    Tensor::identity(dim, dim) * sigma
}

pub fn diagonal(entries: &[f64]) -> Tensor {
    Tensor::from_diagonal(&nalgebra::DVector::from_row_slice(entries))
}

/// Piecewise-constant conductivity on a voxel grid: a small palette of
/// symmetric positive definite matrices and one palette index per voxel.
/// Voxels without an index are outside the conducting subdomain.
#[derive(Clone, Debug)]
pub struct ConductivityField {
    dim: usize,
    palette: Vec<Tensor>,
    index: Vec<Option<u32>>,
    alpha: f64,
    beta: f64,
}

impl ConductivityField {
    pub fn new(dim: usize, palette: Vec<Tensor>, index: Vec<Option<u32>>) -> Result<Self> {
        let mut alpha = f64::INFINITY;
        let mut beta = 0.0f64;
        for (k, m) in palette.iter().enumerate() {
            if m.nrows() != dim || m.ncols() != dim {
                return Err(TrihomError::InvalidCoefficient(format!(
                    "material {k} is {}x{}, expected {dim}x{dim}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(TrihomError::InvalidCoefficient(format!("material {k} has non-finite entries")));
            }
            let scale = m.amax().max(f64::MIN_POSITIVE);
            if (m - m.transpose()).amax() > 1e-12 * scale {
                return Err(TrihomError::InvalidCoefficient(format!("material {k} is not symmetric")));
            }
            let eig = SymmetricEigen::new(m.clone()).eigenvalues;
            let lo = eig.min();
            if !(lo > 0.0) {
                return Err(TrihomError::InvalidCoefficient(format!(
                    "material {k} is not positive definite (smallest eigenvalue {lo:e})"
                )));
            }
            if index.iter().any(|i| *i == Some(k as u32)) {
                alpha = alpha.min(lo);
                beta = beta.max(eig.max());
            }
        }
        if let Some(bad) = index.iter().flatten().find(|&&i| i as usize >= palette.len()) {
            return Err(TrihomError::InvalidCoefficient(format!("palette index {bad} out of range")));
        }
        if index.iter().all(|i| i.is_none()) {
            return Err(TrihomError::InvalidCoefficient("no active voxels".into()));
        }
        Ok(ConductivityField { dim, palette, index, alpha, beta })
    }

    /// `m` on every voxel of the cell.
    pub fn uniform(geom: &UnitCellGeometry, m: Tensor) -> Result<Self> {
        let n = geom.spec().num_voxels();
        ConductivityField::new(geom.spec().dim(), vec![m], vec![Some(0); n])
    }

    /// `m` on voxels with `label`; all other voxels are holes.
    pub fn on_label(geom: &UnitCellGeometry, label: Label, m: Tensor) -> Result<Self> {
        ConductivityField::per_label(geom, &[(label, m)])
    }

    /// One tensor per listed label; unlisted labels are holes.
    pub fn per_label(geom: &UnitCellGeometry, materials: &[(Label, Tensor)]) -> Result<Self> {
        let index = geom
            .labels()
            .iter()
            .map(|l| materials.iter().position(|(m, _)| m == l).map(|k| k as u32))
            .collect();
        let palette = materials.iter().map(|(_, m)| m.clone()).collect();
        ConductivityField::new(geom.spec().dim(), palette, index)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn palette(&self) -> &[Tensor] {
        &self.palette
    }

    pub fn index(&self) -> &[Option<u32>] {
        &self.index
    }

    pub fn tensor_at(&self, voxel: usize) -> Option<&Tensor> {
        self.index[voxel].map(|k| &self.palette[k as usize])
    }

    pub fn active_mask(&self) -> Vec<bool> {
        self.index.iter().map(|i| i.is_some()).collect()
    }

    /// Smallest eigenvalue over active voxels.
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Largest eigenvalue over active voxels.
    pub fn beta(&self) -> f64 {
        self.beta
    }
}

#[derive(Clone, Debug)]
pub struct SolveOptions {
    /// Relative residual target.
    pub tol: f64,
    /// Iteration cap; `None` means 50·√N.
    pub max_iter: Option<usize>,
    /// Accept directions along which the active set does not wrap around the
    /// cell. The corrector is still computed, and the homogenized tensor gets
    /// zero rows and columns for those axes.
    pub allow_blocked: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { tol: 1e-10, max_iter: None, allow_blocked: false }
    }
}

/// An assembled corrector problem `A χ = b` over the active nodes.
#[derive(Clone, Debug)]
pub struct LinearSystem {
    pub mesh: BoxMesh,
    pub dofs: DofMap,
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    pub direction: usize,
    /// `∫ e_q · M e_q` over the active subdomain (energy offset).
    pub energy_offset: f64,
    /// Euclidean norm of the summed absolute element contributions to `rhs`;
    /// a load far below this is cancellation noise.
    pub load_scale: f64,
}

impl LinearSystem {
    /// `∫ M(∇ψ + e_q)·(∇ψ + e_q)` for dof values `ψ`; the corrector minimizes it.
    pub fn energy(&self, psi: &[f64]) -> f64 {
        let mut ap = vec![0.0; psi.len()];
        self.matrix.matvec(psi, &mut ap);
        let quad = compensated_sum(psi.iter().zip(&ap).map(|(a, b)| a * b));
        let lin = compensated_sum(psi.iter().zip(&self.rhs).map(|(a, b)| a * b));
        quad - 2.0 * lin + self.energy_offset
    }
}

/// Solved corrector on the periodic node grid (one value per node).
#[derive(Clone, Debug)]
pub struct CorrectorField {
    pub spec: GridSpec,
    pub direction: usize,
    /// Node values; inactive nodes hold `NaN`.
    pub values: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
    pub tol: f64,
}

impl CorrectorField {
    pub fn is_active(&self, node: usize) -> bool {
        !self.values[node].is_nan()
    }
}

fn cell_mesh(spec: &GridSpec) -> BoxMesh {
    BoxMesh::new(spec.dim(), spec.n3(), spec.h3(), true)
}

/// Check that the active set is one component and, unless relaxed, that it
/// wraps around the cell along `direction`.
fn check_active(spec: &GridSpec, field: &ConductivityField, direction: usize, allow_blocked: bool) -> Result<Connectivity> {
    let conn = connectivity(spec, &field.active_mask());
    if conn.components != 1 {
        return Err(TrihomError::DisconnectedSubdomain(format!(
            "active subdomain has {} periodic components",
            conn.components
        )));
    }
    if !allow_blocked && !conn.percolates[direction] {
        return Err(TrihomError::DisconnectedSubdomain(format!(
            "active subdomain does not connect across the cell along axis {direction}"
        )));
    }
    Ok(conn)
}

fn check_field(geom: &UnitCellGeometry, field: &ConductivityField) -> Result<()> {
    if field.dim() != geom.spec().dim() || field.index().len() != geom.spec().num_voxels() {
        return Err(TrihomError::GridMismatch("conductivity field does not match the cell grid".into()));
    }
    Ok(())
}

fn load_vector(mesh: &BoxMesh, dofs: &DofMap, field: &ConductivityField, q: usize) -> (Vec<f64>, f64, f64) {
    let basis = ElementBasis::new(mesh.dim(), mesh.h3());
    let loads: Vec<Vec<f64>> = field.palette().iter().map(|m| basis.corrector_load(m, q)).collect();
    let mut b = vec![0.0; dofs.len()];
    let mut gross = vec![0.0; dofs.len()];
    let mut offset = 0.0;
    for (v, idx) in field.index().iter().enumerate() {
        let Some(k) = idx else { continue };
        let k = *k as usize;
        offset += basis.volume() * field.palette()[k][(q, q)];
        for (a, node) in mesh.voxel_nodes(v).into_iter().enumerate() {
            let d = dofs.dof(node).unwrap();
            b[d] += loads[k][a];
            gross[d] += loads[k][a].abs();
        }
    }
    (b, offset, norm2(&gross))
}

/// Assemble the corrector problem for direction `q`.
pub fn assemble(geom: &UnitCellGeometry, field: &ConductivityField, q: usize, allow_blocked: bool) -> Result<LinearSystem> {
    check_field(geom, field)?;
    if q >= geom.spec().dim() {
        return Err(TrihomError::InvalidParameter(format!("direction {q} out of range")));
    }
    check_active(geom.spec(), field, q, allow_blocked)?;
    let mesh = cell_mesh(geom.spec());
    let dofs = DofMap::from_active(&mesh, &field.active_mask());
    let matrix = assemble_stiffness(&mesh, &dofs, field.index(), field.palette());
    let (rhs, energy_offset, load_scale) = load_vector(&mesh, &dofs, field, q);
    Ok(LinearSystem { mesh, dofs, matrix, rhs, direction: q, energy_offset, load_scale })
}

/// `|Σ_i b_i|`, which vanishes for a solvable periodic problem.
pub fn check_compatibility(system: &LinearSystem) -> f64 {
    compensated_sum(system.rhs.iter().copied()).abs()
}

fn solve_system(
    system: &LinearSystem,
    spec: &GridSpec,
    opts: &SolveOptions,
) -> Result<CorrectorField> {
    let n = system.dofs.len();
    let bnorm = norm2(&system.rhs);
    let mut x = vec![0.0; n];
    let mut outcome = CgOutcome { iterations: 0, residual: 0.0 };
    // a load made of cancellation noise (e.g. e_q along layers) is exactly zero
    if bnorm > 1e-10 * system.load_scale {
        let defect = check_compatibility(system);
        if defect > 1e-12 * bnorm {
            return Err(TrihomError::Incompatible(defect));
        }
        let max_iter = opts.max_iter.unwrap_or_else(|| CgOptions::default_max_iter(n));
        outcome = pcg(&system.matrix, &system.rhs, &mut x, &CgOptions::projected(opts.tol, max_iter))?;
    }
    let mean = system.dofs.weighted_mean(&x);
    x.iter_mut().for_each(|v| *v -= mean);
    Ok(CorrectorField {
        spec: spec.clone(),
        direction: system.direction,
        values: system.dofs.to_nodes(&x, f64::NAN),
        iterations: outcome.iterations,
        residual: outcome.residual,
        tol: opts.tol,
    })
}

pub fn solve_corrector(
    geom: &UnitCellGeometry,
    field: &ConductivityField,
    q: usize,
    opts: &SolveOptions,
) -> Result<CorrectorField> {
    let system = assemble(geom, field, q, opts.allow_blocked)?;
    solve_system(&system, geom.spec(), opts)
}

/// All `d` correctors; the stiffness matrix is assembled once and shared.
pub fn solve_all_correctors(
    geom: &UnitCellGeometry,
    field: &ConductivityField,
    opts: &SolveOptions,
) -> Result<Vec<CorrectorField>> {
    check_field(geom, field)?;
    let dim = geom.spec().dim();
    for q in 0..dim {
        check_active(geom.spec(), field, q, opts.allow_blocked)?;
    }
    let mesh = cell_mesh(geom.spec());
    let dofs = DofMap::from_active(&mesh, &field.active_mask());
    let matrix = assemble_stiffness(&mesh, &dofs, field.index(), field.palette());
    let mut system =
        LinearSystem { mesh, dofs, matrix, rhs: Vec::new(), direction: 0, energy_offset: 0.0, load_scale: 0.0 };
    let mut out = Vec::with_capacity(dim);
    for q in 0..dim {
        let (rhs, offset, scale) = load_vector(&system.mesh, &system.dofs, field, q);
        system.rhs = rhs;
        system.energy_offset = offset;
        system.load_scale = scale;
        system.direction = q;
        out.push(solve_system(&system, geom.spec(), opts)?);
    }
    Ok(out)
}

/// Corrector restricted to the active dofs of `system` (for energy checks).
pub fn corrector_dofs(system: &LinearSystem, chi: &CorrectorField) -> Vec<f64> {
    (0..system.dofs.len()).map(|d| chi.values[system.dofs.node(d)]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_cell, Level, ShapeSpec};

    fn full(n: usize) -> UnitCellGeometry {
        build_cell(&GridSpec::unit(2, n).unwrap(), &ShapeSpec::Full, Level::Meso).unwrap()
    }

    fn disk(n: usize, r: f64) -> UnitCellGeometry {
        let shape = ShapeSpec::Ball { center: vec![0.5, 0.5], radius: r };
        build_cell(&GridSpec::unit(2, n).unwrap(), &shape, Level::Meso).unwrap()
    }

    #[test]
    fn homogeneous_cell_has_zero_corrector() {
        let g = full(16);
        let field = ConductivityField::uniform(&g, isotropic(2, 3.0)).unwrap();
        let sys = assemble(&g, &field, 0, false).unwrap();
        assert!(check_compatibility(&sys) < 1e-15);
        for chi in solve_all_correctors(&g, &field, &SolveOptions::default()).unwrap() {
            assert_eq!(chi.iterations, 0);
            assert!(chi.values.iter().all(|v| v.abs() < 1e-14));
        }
    }

    #[test]
    fn corrupted_rhs_fails_compatibility() {
        let g = full(16);
        let field = ConductivityField::uniform(&g, isotropic(2, 1.0)).unwrap();
        let mut sys = assemble(&g, &field, 1, false).unwrap();
        sys.rhs[5] += 1.0;
        assert!((check_compatibility(&sys) - 1.0).abs() < 1e-12);
        assert!(matches!(
            solve_system(&sys, g.spec(), &SolveOptions::default()),
            Err(TrihomError::Incompatible(_))
        ));
    }

    #[test]
    fn perforated_disk_corrector_has_zero_mean_and_minimizes_energy() {
        let g = disk(32, 0.25);
        let field = ConductivityField::on_label(&g, Label::Extra, isotropic(2, 1.0)).unwrap();
        let sys = assemble(&g, &field, 0, false).unwrap();
        assert!(check_compatibility(&sys) <= 1e-12 * norm2(&sys.rhs));
        let chi = solve_corrector(&g, &field, 0, &SolveOptions::default()).unwrap();
        assert!(chi.residual <= 1e-10);
        let x = corrector_dofs(&sys, &chi);
        assert!(sys.dofs.weighted_mean(&x).abs() < 1e-12);
        let e0 = sys.energy(&x);
        for s in [0.9, 1.1] {
            let y: Vec<f64> = x.iter().map(|v| v * s).collect();
            assert!(sys.energy(&y) > e0);
        }
        assert!(sys.energy(&vec![0.0; x.len()]) > e0);
        // holes are not part of the problem
        let inactive = chi.values.iter().filter(|v| v.is_nan()).count();
        assert!(inactive > 0);
    }

    #[test]
    fn iteration_cap_is_reported() {
        let g = disk(32, 0.3);
        let field = ConductivityField::on_label(&g, Label::Extra, isotropic(2, 1.0)).unwrap();
        let opts = SolveOptions { max_iter: Some(3), ..SolveOptions::default() };
        assert!(matches!(
            solve_corrector(&g, &field, 0, &opts),
            Err(TrihomError::NoConvergence { .. })
        ));
    }

    #[test]
    fn indefinite_or_asymmetric_material_is_rejected() {
        let g = full(8);
        let mut m = isotropic(2, 1.0);
        m[(0, 1)] = 0.5;
        assert!(ConductivityField::uniform(&g, m).is_err());
        assert!(ConductivityField::uniform(&g, diagonal(&[1.0, -1.0])).is_err());
        assert!(ConductivityField::uniform(&g, isotropic(3, 1.0)).is_err());
    }

    #[test]
    fn blocked_direction_is_rejected_unless_relaxed() {
        let shape = ShapeSpec::Laminate { axis: 0, fraction: 0.5 };
        let g = build_cell(&GridSpec::unit(2, 16).unwrap(), &shape, Level::Meso).unwrap();
        let field = ConductivityField::on_label(&g, Label::Extra, isotropic(2, 1.0)).unwrap();
        assert!(matches!(
            solve_corrector(&g, &field, 0, &SolveOptions::default()),
            Err(TrihomError::DisconnectedSubdomain(_))
        ));
        assert!(solve_corrector(&g, &field, 1, &SolveOptions::default()).is_ok());
        let relaxed = SolveOptions { allow_blocked: true, ..SolveOptions::default() };
        assert!(solve_corrector(&g, &field, 0, &relaxed).is_ok());
    }

    #[test]
    fn inclusion_spanning_the_cross_section_blocks_the_matrix_phase() {
        // a box touching both faces normal to axis 0 leaves EXTRA as a column
        let shape = ShapeSpec::RoundedBox { center: vec![0.5, 0.5], half_widths: vec![0.5, 0.25], corner_radius: 0.0 };
        let g = build_cell(&GridSpec::unit(2, 16).unwrap(), &shape, Level::Meso).unwrap();
        let field = ConductivityField::on_label(&g, Label::Extra, isotropic(2, 1.0)).unwrap();
        assert!(matches!(
            solve_all_correctors(&g, &field, &SolveOptions::default()),
            Err(TrihomError::DisconnectedSubdomain(_))
        ));
    }
}
