//! Structural properties of the effective tensors that hold independently of
//! the discretization details.

use trihom_core::tensors::{composite_tensor, extracellular_tensor, two_level_tensor, IntraCoefficient, IntraRegion};
use trihom_core::{build_cell, diagonal, isotropic, GridSpec, Level, ShapeSpec, SolveOptions, Tensor, UnitCellGeometry};

fn cell(dim: usize, n: usize, shape: ShapeSpec, level: Level) -> UnitCellGeometry {
    build_cell(&GridSpec::unit(dim, n).unwrap(), &shape, level).unwrap()
}

fn disk(n: usize, r: f64) -> UnitCellGeometry {
    cell(2, n, ShapeSpec::Ball { center: vec![0.5, 0.5], radius: r }, Level::Meso)
}

fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    (a - b).amax()
}

#[test]
fn quarter_turn_permutes_the_tensor() {
    // the voxelized disk is invariant under swapping the axes
    let g = disk(32, 0.3);
    let opts = SolveOptions::default();
    let a = composite_tensor(&g, &isotropic(2, 5.0), &diagonal(&[3.0, 1.0]), &opts).unwrap().entries;
    let b = composite_tensor(&g, &isotropic(2, 5.0), &diagonal(&[1.0, 3.0]), &opts).unwrap().entries;
    assert!((a[(0, 0)] - b[(1, 1)]).abs() < 1e-8 * a.amax(), "{a} {b}");
    assert!((a[(1, 1)] - b[(0, 0)]).abs() < 1e-8 * a.amax());
    assert!(a[(0, 1)].abs() < 1e-8 && b[(0, 1)].abs() < 1e-8);
}

#[test]
fn tensor_is_linear_in_the_coefficient() {
    let g = disk(24, 0.25);
    let opts = SolveOptions::default();
    let s = Tensor::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
    let a = extracellular_tensor(&g, &s, &opts).unwrap().entries;
    let b = extracellular_tensor(&g, &(&s * 7.5), &opts).unwrap().entries;
    assert!(max_abs_diff(&(a * 7.5), &b) < 1e-8);
}

#[test]
fn laminate_3d_matches_layer_means() {
    let g = cell(3, 16, ShapeSpec::Laminate { axis: 2, fraction: 0.25 }, Level::Meso);
    let t = composite_tensor(&g, &isotropic(3, 8.0), &isotropic(3, 2.0), &SolveOptions::default()).unwrap().entries;
    let arithmetic = 0.25 * 8.0 + 0.75 * 2.0;
    let harmonic = 1.0 / (0.25 / 8.0 + 0.75 / 2.0);
    let expected = diagonal(&[arithmetic, arithmetic, harmonic]);
    assert!(max_abs_diff(&t, &expected) < 1e-8, "{t}");
}

#[test]
fn two_phase_tensor_lies_between_the_means() {
    let g = disk(32, 0.3);
    let opts = SolveOptions::default();
    let (s_in, s_out) = (10.0, 1.0);
    let f = g.count(Level::Meso.inclusion()) as f64 / g.spec().num_voxels() as f64;
    let upper = f * s_in + (1.0 - f) * s_out;
    let lower = 1.0 / (f / s_in + (1.0 - f) / s_out);
    for e in composite_tensor(&g, &isotropic(2, s_in), &isotropic(2, s_out), &opts).unwrap().eigenvalues() {
        assert!(e > lower && e < upper, "{e} outside [{lower}, {upper}]");
    }
}

#[test]
fn planar_duality_of_swapped_phases() {
    // for a square-symmetric two-phase cell, swapping the conductivities
    // gives lambda(a, b) * lambda(b, a) = a * b in the continuum
    let opts = SolveOptions::default();
    let (a, b) = (1.0, 6.0);
    let mut defects = Vec::new();
    for n in [32, 64] {
        let g = disk(n, 0.3);
        let ab = composite_tensor(&g, &isotropic(2, a), &isotropic(2, b), &opts).unwrap().entries[(0, 0)];
        let ba = composite_tensor(&g, &isotropic(2, b), &isotropic(2, a), &opts).unwrap().entries[(0, 0)];
        defects.push((ab * ba / (a * b) - 1.0).abs());
    }
    assert!(defects[1] < 0.02, "{defects:?}");
    assert!(defects[1] < defects[0], "{defects:?}");
}

#[test]
fn larger_holes_conduct_less() {
    let opts = SolveOptions::default();
    let values: Vec<f64> = [0.1, 0.2, 0.3, 0.4]
        .iter()
        .map(|&r| extracellular_tensor(&disk(32, r), &isotropic(2, 1.0), &opts).unwrap().entries[(0, 0)])
        .collect();
    assert!(values.windows(2).all(|w| w[1] < w[0]), "{values:?}");
    assert!(values[0] < 1.0);
}

#[test]
fn two_level_with_full_micro_is_a_single_pass() {
    // chain of cells connected along axis 1 only
    let chain = ShapeSpec::RoundedBox { center: vec![0.5, 0.5], half_widths: vec![0.3, 0.5], corner_radius: 0.2 };
    let meso = cell(2, 24, chain, Level::Meso);
    let micro = cell(2, 8, ShapeSpec::Full, Level::Micro);
    let opts = SolveOptions { allow_blocked: true, ..SolveOptions::default() };
    let m = Tensor::from_row_slice(2, 2, &[3.0, 0.5, 0.5, 2.0]);
    let two = two_level_tensor(&meso, IntraRegion::Intra, &micro, &IntraCoefficient::uniform(&meso, m.clone()), &opts)
        .unwrap();
    let field = trihom_core::ConductivityField::on_label(&meso, Level::Meso.inclusion(), m).unwrap();
    let single = trihom_core::tensors::homogenize(
        trihom_core::TensorLevel::IntraTwoLevel,
        &meso,
        &field,
        meso.spec().cell_volume(),
        &opts,
    )
    .unwrap();
    assert!(max_abs_diff(&two.meso.entries, &single.entries) < 1e-10);
    assert_eq!(two.meso.provenance.blocked_axes, vec![0]);
    assert!(two.meso.entries[(1, 1)] > 0.0);
}
