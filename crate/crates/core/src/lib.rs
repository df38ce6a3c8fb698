//! Periodic homogenization of the cardiac bidomain model on voxelized cells.
//!
//! The pipeline runs in three stages:
//!
//! 1. [`geometry`] builds labelled periodic cells at the meso (`Y`) and micro
//!    (`Z`) levels and measures volumes and membrane area.
//! 2. [`cellsolver`] and [`tensors`] solve the corrector problems and assemble
//!    the effective conductivities, including the two-pass intracellular tensor.
//! 3. [`macrosolver`] integrates the homogenized bidomain system with
//!    FitzHugh-Nagumo kinetics ([`ionic`]); [`microref`] solves the resolved
//!    microscopic problem on a small tiling for comparison.

pub mod cellsolver;
pub mod error;
pub mod fieldio;
pub mod geometry;
pub mod ionic;
pub mod macrosolver;
pub mod mesh;
pub mod microref;
pub mod nondim;
pub mod sparse;
pub mod tensors;

pub use cellsolver::{
    assemble, check_compatibility, diagonal, isotropic, solve_all_correctors, solve_corrector, ConductivityField,
    CorrectorField, LinearSystem, SolveOptions, Tensor,
};
pub use error::{Result, TrihomError};
pub use geometry::{
    build_cell, measure_interface, measure_volume, membrane_ratio, GridSpec, Label, Level, ShapeSpec,
    UnitCellGeometry,
};
pub use ionic::{audit_assumptions, h_gate, i_ion, AssumptionAudit, FhnParams, SampleBox};
pub use macrosolver::{InitialValue, MacroConfig, MacroRun, MacroSolver, MacroState, NodalGrid, Stimulus, StimulusShape};
pub use microref::{compare_to_macro, ErrorReport, MembraneTrajectory, MicroConfig, MicroSolver, MicroState, Mitochondria};
pub use nondim::{derive_scales, PhysicalParams, Rescaling, Scales};
pub use tensors::{HomogenizedTensor, TensorLevel};

/// Version of this crate, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
