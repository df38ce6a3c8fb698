//! Effective conductivities from solved correctors.
//!
//! Every level uses the same formula. Given correctors `χ^k` of a field `M` on
//! a cell with active part `A` and normalization volume `V`,
//!
//! ```text
//! m̃_pk = (1/V) ∫_A ( M_pk + Σ_q M_pq ∂_q χ^k )
//! ```
//!
//! evaluated exactly for piecewise-constant `M` and Q1 `χ`. The extracellular
//! tensor uses `V = |Y|`, the mitochondria-scale tensor `V = |Z|`, and the
//! two-level intracellular tensor first replaces `M_i(y, ·)` by its
//! Z-homogenized value and then repeats the construction on `Y_i`.

use std::collections::HashMap;
use std::fmt;

use nalgebra::SymmetricEigen;

use crate::cellsolver::{solve_all_correctors, ConductivityField, CorrectorField, SolveOptions, Tensor};
use crate::error::{Result, TrihomError};
use crate::geometry::{Label, UnitCellGeometry};
use crate::mesh::{BoxMesh, ElementBasis};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TensorLevel {
    /// Extracellular tensor on the meso cell.
    ExtraMeso,
    /// Cytosol tensor on the micro cell (mitochondria as holes).
    IntraMicro,
    /// Intracellular tensor after both homogenization passes.
    IntraTwoLevel,
    /// Hole-free two-phase meso cell.
    CompositeMeso,
}

impl TensorLevel {
    pub fn name(self) -> &'static str {
        match self {
            TensorLevel::ExtraMeso => "EXTRA_MESO",
            TensorLevel::IntraMicro => "INTRA_MICRO",
            TensorLevel::IntraTwoLevel => "INTRA_TWO_LEVEL",
            TensorLevel::CompositeMeso => "COMPOSITE_MESO",
        }
    }
}

impl fmt::Display for TensorLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Provenance {
    pub resolution: Vec<usize>,
    pub normalization_volume: f64,
    pub active_volume: f64,
    /// Largest corrector residual that went into the tensor.
    pub max_residual: f64,
    pub max_iterations: usize,
    /// `max|T - Tᵀ| / max|T|` before symmetrization.
    pub symmetry_defect: f64,
    /// Axes along which the active set does not wrap around the cell; the
    /// corresponding rows and columns are set to zero.
    pub blocked_axes: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HomogenizedTensor {
    pub level: TensorLevel,
    /// Symmetrized tensor.
    pub entries: Tensor,
    pub provenance: Provenance,
}

impl HomogenizedTensor {
    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut e: Vec<f64> = SymmetricEigen::new(self.entries.clone()).eigenvalues.iter().copied().collect();
        e.sort_by(|a, b| a.total_cmp(b));
        e
    }
}

/// Raw (unsymmetrized) effective tensor.
pub fn effective_tensor(
    geom: &UnitCellGeometry,
    field: &ConductivityField,
    correctors: &[CorrectorField],
    normalization_volume: f64,
) -> Result<Tensor> {
    let spec = geom.spec();
    let dim = spec.dim();
    for k in 0..dim {
        if !correctors.iter().any(|c| c.direction == k) {
            return Err(TrihomError::MissingCorrector(k));
        }
    }
    if field.index().len() != spec.num_voxels() {
        return Err(TrihomError::GridMismatch("conductivity field does not match the cell grid".into()));
    }
    for c in correctors {
        if c.spec != *spec {
            return Err(TrihomError::GridMismatch("corrector grid does not match the cell grid".into()));
        }
        let limit = 10.0 * c.tol;
        if c.residual > limit {
            return Err(TrihomError::ResidualTooHigh { residual: c.residual, limit });
        }
    }
    if !(normalization_volume > 0.0) {
        return Err(TrihomError::NonPositiveInput("normalization volume".into()));
    }
    let mesh = BoxMesh::new(dim, spec.n3(), spec.h3(), true);
    let basis = ElementBasis::new(dim, spec.h3());
    let mut t = Tensor::zeros(dim, dim);
    let mut local = vec![0.0; basis.num_local()];
    for k in 0..dim {
        let chi = correctors.iter().find(|c| c.direction == k).unwrap();
        for (v, m) in (0..spec.num_voxels()).filter_map(|v| field.tensor_at(v).map(|m| (v, m))) {
            for (a, node) in mesh.voxel_nodes(v).into_iter().enumerate() {
                local[a] = chi.values[node];
            }
            let g = basis.grad_integral(&local);
            for p in 0..dim {
                let mut s = basis.volume() * m[(p, k)];
                for q in 0..dim {
                    s += m[(p, q)] * g[q];
                }
                t[(p, k)] += s;
            }
        }
    }
    Ok(t / normalization_volume)
}

fn symmetry_defect(t: &Tensor) -> f64 {
    let scale = t.amax();
    if scale == 0.0 {
        0.0
    } else {
        (t - t.transpose()).amax() / scale
    }
}

/// Solve the correctors for `field` on `geom` and build the tensor.
pub fn homogenize(
    level: TensorLevel,
    geom: &UnitCellGeometry,
    field: &ConductivityField,
    normalization_volume: f64,
    opts: &SolveOptions,
) -> Result<HomogenizedTensor> {
    homogenize_with_correctors(level, geom, field, normalization_volume, opts).map(|(t, _)| t)
}

/// As [`homogenize`], also returning the corrector fields.
pub fn homogenize_with_correctors(
    level: TensorLevel,
    geom: &UnitCellGeometry,
    field: &ConductivityField,
    normalization_volume: f64,
    opts: &SolveOptions,
) -> Result<(HomogenizedTensor, Vec<CorrectorField>)> {
    let correctors = solve_all_correctors(geom, field, opts)?;
    let raw = effective_tensor(geom, field, &correctors, normalization_volume)?;
    let dim = geom.spec().dim();
    let defect = symmetry_defect(&raw);
    let mut entries = (&raw + raw.transpose()) * 0.5;
    let conn = crate::geometry::connectivity(geom.spec(), &field.active_mask());
    let blocked: Vec<usize> = (0..dim).filter(|&a| !conn.percolates[a]).collect();
    for &a in &blocked {
        for b in 0..dim {
            entries[(a, b)] = 0.0;
            entries[(b, a)] = 0.0;
        }
    }
    let active = field.index().iter().filter(|i| i.is_some()).count() as f64 * geom.spec().voxel_volume();
    let tensor = HomogenizedTensor {
        level,
        entries,
        provenance: Provenance {
            resolution: geom.spec().resolution().to_vec(),
            normalization_volume,
            active_volume: active,
            max_residual: correctors.iter().map(|c| c.residual).fold(0.0, f64::max),
            max_iterations: correctors.iter().map(|c| c.iterations).max().unwrap_or(0),
            symmetry_defect: defect,
            blocked_axes: blocked,
        },
    };
    Ok((tensor, correctors))
}

/// Extracellular tensor: `σ_e` on EXTRA, INTRA as holes, normalized by `|Y|`.
pub fn extracellular_tensor(geom: &UnitCellGeometry, sigma_e: &Tensor, opts: &SolveOptions) -> Result<HomogenizedTensor> {
    let field = ConductivityField::on_label(geom, Label::Extra, sigma_e.clone())?;
    homogenize(TensorLevel::ExtraMeso, geom, &field, geom.spec().cell_volume(), opts)
}

/// Cytosol tensor on the micro cell: `m_i` on CYTOSOL, mitochondria as holes,
/// normalized by `|Z|`.
pub fn micro_tensor(geom: &UnitCellGeometry, m_i: &Tensor, opts: &SolveOptions) -> Result<HomogenizedTensor> {
    let field = ConductivityField::on_label(geom, Label::Cytosol, m_i.clone())?;
    homogenize(TensorLevel::IntraMicro, geom, &field, geom.spec().cell_volume(), opts)
}

/// Hole-free two-phase tensor: `s_in` on the inclusion label, `s_out` elsewhere.
pub fn composite_tensor(
    geom: &UnitCellGeometry,
    s_in: &Tensor,
    s_out: &Tensor,
    opts: &SolveOptions,
) -> Result<HomogenizedTensor> {
    let level = geom.level();
    let field = ConductivityField::per_label(
        geom,
        &[(level.inclusion(), s_in.clone()), (level.matrix(), s_out.clone())],
    )?;
    homogenize(TensorLevel::CompositeMeso, geom, &field, geom.spec().cell_volume(), opts)
}

/// Region of the meso cell on which the intracellular pass runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IntraRegion {
    /// Voxels labelled INTRA.
    Intra,
    /// The whole cell (used when the cells fill the tissue).
    Whole,
}

/// Cytosol conductivity as a function of the meso position: a list of
/// distinct tensors and the material used on each meso voxel. Each tensor is
/// constant over the cytosol of the micro cell.
#[derive(Clone, Debug)]
pub struct IntraCoefficient {
    pub materials: Vec<Tensor>,
    pub material_of_voxel: Vec<usize>,
}

impl IntraCoefficient {
    pub fn uniform(meso: &UnitCellGeometry, m_i: Tensor) -> Self {
        IntraCoefficient { materials: vec![m_i], material_of_voxel: vec![0; meso.spec().num_voxels()] }
    }
}

#[derive(Clone, Debug)]
pub struct TwoLevelResult {
    /// One micro tensor per distinct material actually used.
    pub micro: Vec<HomogenizedTensor>,
    pub meso: HomogenizedTensor,
    /// Meso-level correctors of the second pass.
    pub correctors: Vec<CorrectorField>,
    /// Coefficient field the meso pass ran on.
    pub field: ConductivityField,
}

/// Intracellular tensor by two nested passes. The micro problem is solved once
/// per distinct material; the meso pass then homogenizes the resulting
/// piecewise-constant field on the chosen region, normalized by `|Y|`.
pub fn two_level_tensor(
    meso: &UnitCellGeometry,
    region: IntraRegion,
    micro: &UnitCellGeometry,
    coef: &IntraCoefficient,
    opts: &SolveOptions,
) -> Result<TwoLevelResult> {
    let nv = meso.spec().num_voxels();
    if coef.material_of_voxel.len() != nv {
        return Err(TrihomError::GridMismatch("material map does not match the meso grid".into()));
    }
    let active: Vec<bool> = match region {
        IntraRegion::Intra => meso.mask(Label::Intra),
        IntraRegion::Whole => vec![true; nv],
    };
    let mut cache: HashMap<usize, u32> = HashMap::new();
    let mut micro_out = Vec::new();
    let mut index = Vec::with_capacity(nv);
    for v in 0..nv {
        if !active[v] {
            index.push(None);
            continue;
        }
        let key = coef.material_of_voxel[v];
        let slot = match cache.get(&key) {
            Some(&s) => s,
            None => {
                let m = coef.materials.get(key).ok_or_else(|| {
                    TrihomError::InvalidCoefficient(format!("material {key} out of range"))
                })?;
                micro_out.push(micro_tensor(micro, m, opts)?);
                let s = (micro_out.len() - 1) as u32;
                cache.insert(key, s);
                s
            }
        };
        index.push(Some(slot));
    }
    let palette: Vec<Tensor> = micro_out.iter().map(|t| t.entries.clone()).collect();
    let field = ConductivityField::new(meso.spec().dim(), palette, index)?;
    let (meso_t, correctors) =
        homogenize_with_correctors(TensorLevel::IntraTwoLevel, meso, &field, meso.spec().cell_volume(), opts)?;
    Ok(TwoLevelResult { micro: micro_out, meso: meso_t, correctors, field })
}

/// Bounds check for isotropic two-phase mixtures: every eigenvalue of the
/// effective tensor lies between the harmonic and arithmetic means.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundsReport {
    pub harmonic: f64,
    pub arithmetic: f64,
    pub eigenvalues: Vec<f64>,
    pub holds: bool,
}

pub fn mixture_bounds(t: &Tensor, phases: &[(f64, f64)], rel_tol: f64) -> BoundsReport {
    let total: f64 = phases.iter().map(|p| p.0).sum();
    let arithmetic = phases.iter().map(|(f, s)| f * s).sum::<f64>() / total;
    let harmonic = total / phases.iter().map(|(f, s)| f / s).sum::<f64>();
    let mut eigenvalues: Vec<f64> = SymmetricEigen::new(t.clone()).eigenvalues.iter().copied().collect();
    eigenvalues.sort_by(|a, b| a.total_cmp(b));
    let slack = rel_tol * arithmetic;
    let holds = eigenvalues.iter().all(|&e| e >= harmonic - slack && e <= arithmetic + slack);
    BoundsReport { harmonic, arithmetic, eigenvalues, holds }
}

/// Audit of a tensor: symmetry defect and ascending eigenvalues.
pub fn audit(t: &Tensor) -> (f64, Vec<f64>) {
    let sym = (t + t.transpose()) * 0.5;
    let mut e: Vec<f64> = SymmetricEigen::new(sym).eigenvalues.iter().copied().collect();
    e.sort_by(|a, b| a.total_cmp(b));
    (symmetry_defect(t), e)
}
