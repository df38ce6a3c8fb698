//! Fixtures shared by the solver benchmarks.

use trihom_core::{build_cell, GridSpec, Level, ShapeSpec, UnitCellGeometry};

/// Meso cell with a centered disk inclusion of radius 0.25.
pub fn disk_cell(n: usize) -> UnitCellGeometry {
    let shape = ShapeSpec::Ball { center: vec![0.5, 0.5], radius: 0.25 };
    build_cell(&GridSpec::unit(2, n).expect("valid grid"), &shape, Level::Meso).expect("valid cell")
}

/// Micro cell with a centered spherical inclusion of radius 0.3.
pub fn sphere_cell(n: usize) -> UnitCellGeometry {
    let shape = ShapeSpec::Ball { center: vec![0.5, 0.5, 0.5], radius: 0.3 };
    build_cell(&GridSpec::unit(3, n).expect("valid grid"), &shape, Level::Micro).expect("valid cell")
}
