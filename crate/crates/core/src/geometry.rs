//! Voxelized periodic unit cells.
//!
//! A cell is an axis-aligned box split into `n_1 × … × n_d` voxels. Each voxel
//! carries one [`Label`] chosen by sampling the shape's periodic level set at the
//! voxel center. The interface between the two labels is reconstructed with
//! marching simplices on the dual grid: every grid node owns the dual box spanned
//! by its `2^d` neighbouring voxel centers, which is cut into triangles (2D) or
//! Freudenthal tetrahedra (3D) and the zero level set is traced linearly inside
//! each simplex. Measured perimeters and areas converge at second order, unlike
//! raw staircase face counts.

use std::collections::VecDeque;
use std::fmt;
use std::io::Write;

use crate::error::{Result, TrihomError};

/// Grid layout of a periodic cell. Storage is row-major (last axis fastest).
#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec {
    dim: usize,
    n: [usize; 3],
    lengths: [f64; 3],
}

impl GridSpec {
    pub fn new(resolution: &[usize], lengths: &[f64]) -> Result<Self> {
        let dim = resolution.len();
        if dim != 2 && dim != 3 {
            return Err(TrihomError::InvalidGrid(format!("dimension must be 2 or 3, got {dim}")));
        }
        if lengths.len() != dim {
            return Err(TrihomError::InvalidGrid(format!(
                "{} lengths given for a {dim}D grid",
                lengths.len()
            )));
        }
        let mut n = [1usize; 3];
        let mut len = [1.0f64; 3];
        for a in 0..dim {
            if resolution[a] < 4 {
                return Err(TrihomError::InvalidGrid(format!(
                    "resolution along axis {a} is {} (< 4)",
                    resolution[a]
                )));
            }
            if !(lengths[a].is_finite() && lengths[a] > 0.0) {
                return Err(TrihomError::InvalidGrid(format!("length along axis {a} must be > 0")));
            }
            n[a] = resolution[a];
            len[a] = lengths[a];
        }
        Ok(GridSpec { dim, n, lengths: len })
    }

    /// Unit square/cube with `n` voxels per axis.
    pub fn unit(dim: usize, n: usize) -> Result<Self> {
        GridSpec::new(&vec![n; dim], &vec![1.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn resolution(&self) -> &[usize] {
        &self.n[..self.dim]
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lengths[..self.dim]
    }

    /// Padded resolution (unused axes are 1).
    pub fn n3(&self) -> [usize; 3] {
        self.n
    }

    /// Padded voxel edge lengths (unused axes are 1).
    pub fn h3(&self) -> [f64; 3] {
        let mut h = [1.0; 3];
        for a in 0..self.dim {
            h[a] = self.lengths[a] / self.n[a] as f64;
        }
        h
    }

    pub fn num_voxels(&self) -> usize {
        self.n.iter().product()
    }

    pub fn voxel_volume(&self) -> f64 {
        self.h3().iter().product()
    }

    pub fn cell_volume(&self) -> f64 {
        self.lengths[..self.dim].iter().product()
    }

    pub fn voxel_index(&self, c: [usize; 3]) -> usize {
        (c[0] * self.n[1] + c[1]) * self.n[2] + c[2]
    }

    pub fn voxel_coords(&self, idx: usize) -> [usize; 3] {
        let i2 = idx % self.n[2];
        let r = idx / self.n[2];
        [r / self.n[1], r % self.n[1], i2]
    }

    pub fn voxel_center(&self, idx: usize) -> [f64; 3] {
        let c = self.voxel_coords(idx);
        let h = self.h3();
        let mut p = [0.0; 3];
        for a in 0..self.dim {
            p[a] = (c[a] as f64 + 0.5) * h[a];
        }
        p
    }
}

/// Subdomain tags. `Intra`/`Extra` live on the mesoscopic cell Y, `Cytosol`/`Mito`
/// on the microscopic cell Z.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum Label {
    Intra = 0,
    Extra = 1,
    Cytosol = 2,
    Mito = 3,
}

impl Label {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::Intra => "INTRA",
            Label::Extra => "EXTRA",
            Label::Cytosol => "CYTOSOL",
            Label::Mito => "MITO",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Structural level of a cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Level {
    /// ε-level cell Y (myocytes in extracellular space).
    Meso,
    /// δ-level cell Z (mitochondria in cytosol).
    Micro,
}

impl Level {
    /// Label carried by voxels inside the shape.
    pub fn inclusion(self) -> Label {
        match self {
            Level::Meso => Label::Intra,
            Level::Micro => Label::Mito,
        }
    }

    /// Label of the surrounding medium; this is the conducting phase checked at build time.
    pub fn matrix(self) -> Label {
        match self {
            Level::Meso => Label::Extra,
            Level::Micro => Label::Cytosol,
        }
    }

    pub fn labels(self) -> [Label; 2] {
        [self.inclusion(), self.matrix()]
    }
}

/// Shape catalog. Axes are zero-based; every shape is evaluated periodically
/// (minimum image), so inclusions that cross the cell boundary wrap around.
#[derive(Clone, Debug, PartialEq)]
pub enum ShapeSpec {
    Full,
    Ball { center: Vec<f64>, radius: f64 },
    /// Layer `0 <= y_axis < fraction * length` carries the inclusion label.
    Laminate { axis: usize, fraction: f64 },
    RoundedBox { center: Vec<f64>, half_widths: Vec<f64>, corner_radius: f64 },
}

fn min_image(d: f64, len: f64) -> f64 {
    d - len * (d / len).round()
}

impl ShapeSpec {
    pub fn validate(&self, spec: &GridSpec) -> Result<()> {
        let dim = spec.dim();
        let bad = |m: String| Err(TrihomError::InvalidShape(m));
        match self {
            ShapeSpec::Full => Ok(()),
            ShapeSpec::Ball { center, radius } => {
                if center.len() != dim {
                    return bad(format!("ball center has {} coordinates, expected {dim}", center.len()));
                }
                if center.iter().any(|c| !c.is_finite()) {
                    return bad("ball center must be finite".into());
                }
                let half_diag =
                    spec.lengths().iter().map(|l| 0.25 * l * l).sum::<f64>().sqrt();
                if !(radius.is_finite() && *radius > 0.0 && *radius < half_diag) {
                    return bad(format!("ball radius {radius} outside (0, {half_diag})"));
                }
                Ok(())
            }
            ShapeSpec::Laminate { axis, fraction } => {
                if *axis >= dim {
                    return bad(format!("laminate axis {axis} out of range for {dim}D"));
                }
                if !(*fraction > 0.0 && *fraction < 1.0) {
                    return bad(format!("laminate fraction {fraction} outside (0, 1)"));
                }
                Ok(())
            }
            ShapeSpec::RoundedBox { center, half_widths, corner_radius } => {
                if center.len() != dim || half_widths.len() != dim {
                    return bad(format!("rounded box needs {dim} center and half-width entries"));
                }
                if center.iter().any(|c| !c.is_finite()) {
                    return bad("rounded box center must be finite".into());
                }
                for a in 0..dim {
                    let hw = half_widths[a];
                    if !(hw > 0.0 && hw <= 0.5 * spec.lengths()[a]) {
                        return bad(format!(
                            "half width {hw} along axis {a} outside (0, {}]",
                            0.5 * spec.lengths()[a]
                        ));
                    }
                }
                let min_hw = half_widths.iter().cloned().fold(f64::INFINITY, f64::min);
                if !(*corner_radius >= 0.0 && *corner_radius <= min_hw) {
                    return bad(format!("corner radius {corner_radius} outside [0, {min_hw}]"));
                }
                Ok(())
            }
        }
    }

    /// Periodic signed level set: negative inside the shape.
    pub fn level_set(&self, spec: &GridSpec, p: &[f64; 3]) -> f64 {
        let dim = spec.dim();
        let len = spec.lengths();
        match self {
            ShapeSpec::Full => 1.0,
            ShapeSpec::Ball { center, radius } => {
                let mut r2 = 0.0;
                for a in 0..dim {
                    let d = min_image(p[a] - center[a], len[a]);
                    r2 += d * d;
                }
                r2.sqrt() - radius
            }
            ShapeSpec::Laminate { axis, fraction } => {
                let l = len[*axis];
                let t = p[*axis].rem_euclid(l);
                let w = fraction * l;
                if t < w {
                    -(t.min(w - t))
                } else {
                    (t - w).min(l - t)
                }
            }
            ShapeSpec::RoundedBox { center, half_widths, corner_radius } => {
                let r = *corner_radius;
                let mut outside2 = 0.0;
                let mut max_q = f64::NEG_INFINITY;
                for a in 0..dim {
                    let d = min_image(p[a] - center[a], len[a]).abs();
                    let q = d - (half_widths[a] - r);
                    if q > 0.0 {
                        outside2 += q * q;
                    }
                    max_q = max_q.max(q);
                }
                outside2.sqrt() + max_q.min(0.0) - r
            }
        }
    }
}

/// One piece of the reconstructed interface. The normal points from the
/// inclusion label into the surrounding label (n_i at Y level, −n_z at Z level).
#[derive(Clone, Debug, PartialEq)]
pub struct Facet {
    pub position: [f64; 3],
    pub normal: [f64; 3],
    pub area: f64,
    /// Grid node whose dual box contains the facet.
    pub node: usize,
}

/// A facet piece before it is attached to a node: polygon vertices (two for a
/// 2D segment, three or four in 3D), unit normal and measure.
#[derive(Clone, Debug)]
pub(crate) struct FacetPiece {
    pub vertices: Vec<[f64; 3]>,
    pub normal: [f64; 3],
    pub area: f64,
}

impl FacetPiece {
    pub fn centroid(&self) -> [f64; 3] {
        let mut c = [0.0; 3];
        for v in &self.vertices {
            for a in 0..3 {
                c[a] += v[a];
            }
        }
        let k = self.vertices.len() as f64;
        c.map(|x| x / k)
    }
}

fn sub(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn norm(a: &[f64; 3]) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

/// Gradient of the linear interpolant on a simplex with `dim + 1` vertices.
fn simplex_gradient(dim: usize, p: &[[f64; 3]], v: &[f64]) -> [f64; 3] {
    if dim == 2 {
        let e1 = sub(&p[1], &p[0]);
        let e2 = sub(&p[2], &p[0]);
        let det = e1[0] * e2[1] - e1[1] * e2[0];
        let d1 = v[1] - v[0];
        let d2 = v[2] - v[0];
        [(d1 * e2[1] - d2 * e1[1]) / det, (e1[0] * d2 - e2[0] * d1) / det, 0.0]
    } else {
        let e1 = sub(&p[1], &p[0]);
        let e2 = sub(&p[2], &p[0]);
        let e3 = sub(&p[3], &p[0]);
        let c23 = cross(&e2, &e3);
        let c31 = cross(&e3, &e1);
        let c12 = cross(&e1, &e2);
        let det = e1[0] * c23[0] + e1[1] * c23[1] + e1[2] * c23[2];
        let d = [v[1] - v[0], v[2] - v[0], v[3] - v[0]];
        let mut g = [0.0; 3];
        for a in 0..3 {
            g[a] = (d[0] * c23[a] + d[1] * c31[a] + d[2] * c12[a]) / det;
        }
        g
    }
}

fn edge_crossing(pa: &[f64; 3], pb: &[f64; 3], va: f64, vb: f64) -> [f64; 3] {
    let t = va / (va - vb);
    [pa[0] + t * (pb[0] - pa[0]), pa[1] + t * (pb[1] - pa[1]), pa[2] + t * (pb[2] - pa[2])]
}

fn march_simplex(dim: usize, p: &[[f64; 3]], v: &[f64]) -> Option<FacetPiece> {
    let inside: Vec<bool> = v.iter().map(|&x| x < 0.0).collect();
    let n_in = inside.iter().filter(|&&b| b).count();
    if n_in == 0 || n_in == dim + 1 {
        return None;
    }
    let g = simplex_gradient(dim, p, v);
    let gn = norm(&g);
    if gn == 0.0 || !gn.is_finite() {
        return None;
    }
    let normal = g.map(|x| x / gn);
    if dim == 2 {
        let mut pts = Vec::with_capacity(2);
        for (a, b) in [(0, 1), (1, 2), (2, 0)] {
            if inside[a] != inside[b] {
                pts.push(edge_crossing(&p[a], &p[b], v[a], v[b]));
            }
        }
        let area = norm(&sub(&pts[1], &pts[0]));
        return Some(FacetPiece { vertices: pts, normal, area });
    }
    let ins: Vec<usize> = (0..4).filter(|&i| inside[i]).collect();
    let outs: Vec<usize> = (0..4).filter(|&i| !inside[i]).collect();
    let pts: Vec<[f64; 3]> = if ins.len() == 1 || outs.len() == 1 {
        let (lone, others) = if ins.len() == 1 { (ins[0], &outs) } else { (outs[0], &ins) };
        others.iter().map(|&o| edge_crossing(&p[lone], &p[o], v[lone], v[o])).collect()
    } else {
        let (a0, a1, b0, b1) = (ins[0], ins[1], outs[0], outs[1]);
        vec![
            edge_crossing(&p[a0], &p[b0], v[a0], v[b0]),
            edge_crossing(&p[a0], &p[b1], v[a0], v[b1]),
            edge_crossing(&p[a1], &p[b1], v[a1], v[b1]),
            edge_crossing(&p[a1], &p[b0], v[a1], v[b0]),
        ]
    };
    let tri = |a: &[f64; 3], b: &[f64; 3], c: &[f64; 3]| 0.5 * norm(&cross(&sub(b, a), &sub(c, a)));
    let area = if pts.len() == 3 {
        tri(&pts[0], &pts[1], &pts[2])
    } else {
        tri(&pts[0], &pts[1], &pts[2]) + tri(&pts[0], &pts[2], &pts[3])
    };
    Some(FacetPiece { vertices: pts, normal, area })
}

/// Freudenthal split of the unit square/cube, vertices given as corner bitmasks.
fn simplices(dim: usize) -> Vec<Vec<usize>> {
    if dim == 2 {
        vec![vec![0b00, 0b01, 0b11], vec![0b00, 0b10, 0b11]]
    } else {
        let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        perms
            .iter()
            .map(|pm| {
                let mut s = vec![0usize];
                let mut m = 0usize;
                for &ax in pm {
                    m |= 1 << ax;
                    s.push(m);
                }
                s
            })
            .collect()
    }
}

/// Trace the zero level set inside one dual box. `corners[m]` holds the sample at
/// corner bitmask `m` (bit `a` set means the upper side along axis `a`).
pub(crate) fn march_dual_box(dim: usize, corners: &[([f64; 3], f64)]) -> Vec<FacetPiece> {
    let any_in = corners.iter().any(|c| c.1 < 0.0);
    let any_out = corners.iter().any(|c| c.1 >= 0.0);
    if !(any_in && any_out) {
        return Vec::new();
    }
    let mut out = Vec::new();
    for s in simplices(dim) {
        let p: Vec<[f64; 3]> = s.iter().map(|&m| corners[m].0).collect();
        let v: Vec<f64> = s.iter().map(|&m| corners[m].1).collect();
        if let Some(piece) = march_simplex(dim, &p, &v) {
            out.push(piece);
        }
    }
    out
}

/// Flood-fill summary of a voxel subset on the periodic grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Connectivity {
    /// Number of face-connected components (with periodic wrap).
    pub components: usize,
    /// Whether some component connects to its own periodic image along each axis.
    pub percolates: [bool; 3],
}

impl Connectivity {
    pub fn is_connected(&self) -> bool {
        self.components == 1
    }
}

/// Face-adjacency flood fill with periodic wrap; also detects which axes a
/// component winds around.
pub fn connectivity(spec: &GridSpec, mask: &[bool]) -> Connectivity {
    let nv = spec.num_voxels();
    let dim = spec.dim();
    let n = spec.n3();
    const UNSEEN: u32 = u32::MAX;
    let mut comp = vec![UNSEEN; nv];
    let mut offset = vec![[0i32; 3]; nv];
    let mut components = 0usize;
    let mut percolates = [false; 3];
    let mut queue = VecDeque::new();
    for seed in 0..nv {
        if !mask[seed] || comp[seed] != UNSEEN {
            continue;
        }
        let id = components as u32;
        components += 1;
        comp[seed] = id;
        offset[seed] = [0; 3];
        queue.push_back(seed);
        while let Some(cur) = queue.pop_front() {
            let c = spec.voxel_coords(cur);
            for a in 0..dim {
                for step in [-1i64, 1] {
                    let mut nc = c;
                    let mut off = offset[cur];
                    let raw = c[a] as i64 + step;
                    if raw < 0 {
                        nc[a] = n[a] - 1;
                        off[a] -= 1;
                    } else if raw as usize >= n[a] {
                        nc[a] = 0;
                        off[a] += 1;
                    } else {
                        nc[a] = raw as usize;
                    }
                    let nb = spec.voxel_index(nc);
                    if !mask[nb] {
                        continue;
                    }
                    if comp[nb] == UNSEEN {
                        comp[nb] = id;
                        offset[nb] = off;
                        queue.push_back(nb);
                    } else {
                        for b in 0..dim {
                            if offset[nb][b] != off[b] {
                                percolates[b] = true;
                            }
                        }
                    }
                }
            }
        }
    }
    Connectivity { components, percolates }
}

/// Periodic voxelized unit cell with labels and reconstructed interface.
#[derive(Clone, Debug)]
pub struct UnitCellGeometry {
    spec: GridSpec,
    level: Level,
    shape: ShapeSpec,
    labels: Vec<Label>,
    level_set: Vec<f64>,
    facets: Vec<Facet>,
}

/// Build a cell: label voxels by center sampling, check that the surrounding
/// phase is one periodic component, and reconstruct the interface.
pub fn build_cell(spec: &GridSpec, shape: &ShapeSpec, level: Level) -> Result<UnitCellGeometry> {
    shape.validate(spec)?;
    let nv = spec.num_voxels();
    let mut level_set = Vec::with_capacity(nv);
    let mut labels = Vec::with_capacity(nv);
    for idx in 0..nv {
        let phi = shape.level_set(spec, &spec.voxel_center(idx));
        level_set.push(phi);
        labels.push(if phi < 0.0 { level.inclusion() } else { level.matrix() });
    }
    let mask: Vec<bool> = labels.iter().map(|&l| l == level.matrix()).collect();
    let conn = connectivity(spec, &mask);
    if conn.components != 1 {
        return Err(TrihomError::DisconnectedSubdomain(format!(
            "{} has {} periodic components",
            level.matrix(),
            conn.components
        )));
    }
    let mut geom = UnitCellGeometry {
        spec: spec.clone(),
        level,
        shape: shape.clone(),
        labels,
        level_set,
        facets: Vec::new(),
    };
    geom.facets = geom.reconstruct_facets();
    Ok(geom)
}

impl UnitCellGeometry {
    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn level(&self) -> Level {
        self.level
    }

    pub fn shape(&self) -> &ShapeSpec {
        &self.shape
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn label(&self, voxel: usize) -> Label {
        self.labels[voxel]
    }

    pub fn level_set(&self) -> &[f64] {
        &self.level_set
    }

    pub fn facets(&self) -> &[Facet] {
        &self.facets
    }

    pub fn mask(&self, label: Label) -> Vec<bool> {
        self.labels.iter().map(|&l| l == label).collect()
    }

    pub fn count(&self, label: Label) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    pub fn connectivity_of(&self, label: Label) -> Connectivity {
        connectivity(&self.spec, &self.mask(label))
    }

    fn reconstruct_facets(&self) -> Vec<Facet> {
        let dim = self.spec.dim();
        let n = self.spec.n3();
        let h = self.spec.h3();
        let ncorner = 1usize << dim;
        let mut facets = Vec::new();
        let mut corners = vec![([0.0; 3], 0.0); ncorner];
        // periodic node grid has the same shape as the voxel grid
        for node in 0..self.spec.num_voxels() {
            let c = self.spec.voxel_coords(node);
            for (m, corner) in corners.iter_mut().enumerate() {
                let mut vc = [0usize; 3];
                let mut pos = [0.0; 3];
                for a in 0..3 {
                    if a < dim {
                        let bit = (m >> a) & 1;
                        vc[a] = (c[a] + n[a] - 1 + bit) % n[a];
                        pos[a] = (c[a] as f64 + bit as f64 - 0.5) * h[a];
                    }
                }
                *corner = (pos, self.level_set[self.spec.voxel_index(vc)]);
            }
            for piece in march_dual_box(dim, &corners) {
                facets.push(Facet {
                    position: piece.centroid(),
                    normal: piece.normal,
                    area: piece.area,
                    node,
                });
            }
        }
        facets
    }

    /// Write the label array: one text header line, then one byte per voxel in
    /// row-major order.
    pub fn write_labels<W: Write>(&self, mut w: W) -> Result<()> {
        let res: Vec<String> = self.spec.resolution().iter().map(|x| x.to_string()).collect();
        let len: Vec<String> = self.spec.lengths().iter().map(|x| x.to_string()).collect();
        writeln!(
            w,
            "TRIHOM-LABELS dim={} resolution={} lengths={} legend=0:INTRA,1:EXTRA,2:CYTOSOL,3:MITO",
            self.spec.dim(),
            res.join(","),
            len.join(",")
        )?;
        let bytes: Vec<u8> = self.labels.iter().map(|l| l.code()).collect();
        w.write_all(&bytes)?;
        Ok(())
    }
}

/// Volume of the voxels carrying `label`.
pub fn measure_volume(geom: &UnitCellGeometry, label: Label) -> Result<f64> {
    if !geom.level.labels().contains(&label) {
        return Err(TrihomError::UnknownLabel(label.to_string()));
    }
    Ok(geom.count(label) as f64 * geom.spec.voxel_volume())
}

/// Total measure of the reconstructed interface.
pub fn measure_interface(geom: &UnitCellGeometry) -> Result<f64> {
    if geom.facets.is_empty() {
        return Err(TrihomError::EmptyInterface);
    }
    Ok(geom.facets.iter().map(|f| f.area).sum())
}

/// Membrane surface-to-volume ratio |Γ| / |Y|.
pub fn membrane_ratio(geom: &UnitCellGeometry) -> Result<f64> {
    Ok(measure_interface(geom)? / geom.spec.cell_volume())
}
