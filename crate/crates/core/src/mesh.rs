//! Multilinear (Q1) finite elements on uniform voxel grids.
//!
//! Nodes sit on voxel corners. On a periodic grid node `n_a` is identified with
//! node `0`, so every axis has `n_a` nodes; otherwise it has `n_a + 1`. Only
//! nodes touching an active voxel carry degrees of freedom, which is how holes
//! with natural (zero-flux) boundaries are represented.

use nalgebra::DMatrix;

use crate::sparse::CsrMatrix;

#[derive(Clone, Debug, PartialEq)]
pub struct BoxMesh {
    dim: usize,
    n: [usize; 3],
    h: [f64; 3],
    periodic: bool,
    nodes: [usize; 3],
}

impl BoxMesh {
    /// `n` and `h` are padded to three axes; entries beyond `dim` are ignored.
    pub fn new(dim: usize, n: [usize; 3], h: [f64; 3], periodic: bool) -> Self {
        let mut nodes = [1usize; 3];
        let mut nn = [1usize; 3];
        let mut hh = [1.0; 3];
        for a in 0..dim {
            nn[a] = n[a];
            hh[a] = h[a];
            nodes[a] = if periodic { n[a] } else { n[a] + 1 };
        }
        BoxMesh { dim, n: nn, h: hh, periodic, nodes }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n3(&self) -> [usize; 3] {
        self.n
    }

    pub fn h3(&self) -> [f64; 3] {
        self.h
    }

    pub fn periodic(&self) -> bool {
        self.periodic
    }

    pub fn nodes_per_axis(&self) -> [usize; 3] {
        self.nodes
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.iter().product()
    }

    pub fn num_voxels(&self) -> usize {
        self.n.iter().product()
    }

    pub fn voxel_volume(&self) -> f64 {
        self.h.iter().product()
    }

    pub fn num_local(&self) -> usize {
        1 << self.dim
    }

    pub fn voxel_coords(&self, idx: usize) -> [usize; 3] {
        let i2 = idx % self.n[2];
        let r = idx / self.n[2];
        [r / self.n[1], r % self.n[1], i2]
    }

    pub fn voxel_index(&self, c: [usize; 3]) -> usize {
        (c[0] * self.n[1] + c[1]) * self.n[2] + c[2]
    }

    pub fn node_index(&self, c: [usize; 3]) -> usize {
        (c[0] * self.nodes[1] + c[1]) * self.nodes[2] + c[2]
    }

    pub fn node_coords(&self, idx: usize) -> [usize; 3] {
        let i2 = idx % self.nodes[2];
        let r = idx / self.nodes[2];
        [r / self.nodes[1], r % self.nodes[1], i2]
    }

    pub fn node_position(&self, idx: usize) -> [f64; 3] {
        let c = self.node_coords(idx);
        let mut p = [0.0; 3];
        for a in 0..self.dim {
            p[a] = c[a] as f64 * self.h[a];
        }
        p
    }

    /// Global node of local corner `m` (bit `a` set = upper side along axis `a`).
    pub fn corner_node(&self, voxel: [usize; 3], m: usize) -> usize {
        let mut c = [0usize; 3];
        for a in 0..self.dim {
            let raw = voxel[a] + ((m >> a) & 1);
            c[a] = if self.periodic { raw % self.n[a] } else { raw };
        }
        self.node_index(c)
    }

    pub fn voxel_nodes(&self, voxel: usize) -> Vec<usize> {
        let c = self.voxel_coords(voxel);
        (0..self.num_local()).map(|m| self.corner_node(c, m)).collect()
    }
}

/// Reference integrals for one voxel: the stiffness blocks
/// `K^{pq}_{ab} = ∫ ∂_p N_a ∂_q N_b` and the gradient moments `g^p_a = ∫ ∂_p N_a`.
#[derive(Clone, Debug)]
pub struct ElementBasis {
    dim: usize,
    nloc: usize,
    blocks: Vec<Vec<f64>>,
    grads: Vec<Vec<f64>>,
    volume: f64,
}

impl ElementBasis {
    pub fn new(dim: usize, h: [f64; 3]) -> Self {
        let nloc = 1usize << dim;
        let sign = |m: usize, r: usize| if (m >> r) & 1 == 1 { 1.0 } else { -1.0 };
        let mut blocks = Vec::with_capacity(dim * dim);
        for p in 0..dim {
            for q in 0..dim {
                let mut k = vec![0.0; nloc * nloc];
                for a in 0..nloc {
                    for b in 0..nloc {
                        let mut v = 1.0;
                        for r in 0..dim {
                            let (sa, sb) = (sign(a, r), sign(b, r));
                            v *= if r == p && r == q {
                                sa * sb / h[r]
                            } else if r == p {
                                0.5 * sa
                            } else if r == q {
                                0.5 * sb
                            } else if ((a >> r) & 1) == ((b >> r) & 1) {
                                h[r] / 3.0
                            } else {
                                h[r] / 6.0
                            };
                        }
                        k[a * nloc + b] = v;
                    }
                }
                blocks.push(k);
            }
        }
        let mut grads = Vec::with_capacity(dim);
        for p in 0..dim {
            let g: Vec<f64> = (0..nloc)
                .map(|a| {
                    let mut v = sign(a, p);
                    for r in 0..dim {
                        if r != p {
                            v *= 0.5 * h[r];
                        }
                    }
                    v
                })
                .collect();
            grads.push(g);
        }
        let volume = (0..dim).map(|a| h[a]).product();
        ElementBasis { dim, nloc, blocks, grads, volume }
    }

    pub fn num_local(&self) -> usize {
        self.nloc
    }

    pub fn volume(&self) -> f64 {
        self.volume
    }

    /// `∫_voxel ∂_p N_a`.
    pub fn grad_moment(&self, p: usize, a: usize) -> f64 {
        self.grads[p][a]
    }

    /// Element stiffness `∫ ∇N_a · M ∇N_b` for a constant symmetric `M`. The
    /// upper triangle is computed and mirrored, so the result is exactly symmetric.
    pub fn stiffness(&self, m: &DMatrix<f64>) -> Vec<f64> {
        let n = self.nloc;
        let mut k = vec![0.0; n * n];
        for a in 0..n {
            for b in a..n {
                let mut v = 0.0;
                for p in 0..self.dim {
                    for q in 0..self.dim {
                        v += m[(p, q)] * self.blocks[p * self.dim + q][a * n + b];
                    }
                }
                k[a * n + b] = v;
                k[b * n + a] = v;
            }
        }
        k
    }

    /// `-∫ (M e_q) · ∇N_a` for each local node.
    pub fn corrector_load(&self, m: &DMatrix<f64>, q: usize) -> Vec<f64> {
        (0..self.nloc)
            .map(|a| -(0..self.dim).map(|p| m[(p, q)] * self.grads[p][a]).sum::<f64>())
            .collect()
    }

    /// `∫_voxel ∇u` for nodal values `u` of one voxel.
    pub fn grad_integral(&self, u: &[f64]) -> [f64; 3] {
        let mut g = [0.0; 3];
        for p in 0..self.dim {
            g[p] = (0..self.nloc).map(|a| u[a] * self.grads[p][a]).sum();
        }
        g
    }
}

pub const NO_DOF: usize = usize::MAX;

/// Mapping between grid nodes and unknowns for a set of active voxels.
#[derive(Clone, Debug)]
pub struct DofMap {
    node_to_dof: Vec<usize>,
    dof_to_node: Vec<usize>,
    lumped_mass: Vec<f64>,
}

impl DofMap {
    pub fn from_active(mesh: &BoxMesh, active: &[bool]) -> Self {
        let mut node_to_dof = vec![NO_DOF; mesh.num_nodes()];
        let mut dof_to_node = Vec::new();
        for (v, &on) in active.iter().enumerate() {
            if !on {
                continue;
            }
            for node in mesh.voxel_nodes(v) {
                if node_to_dof[node] == NO_DOF {
                    node_to_dof[node] = usize::MAX - 1;
                }
            }
        }
        // number in node order so the layout is independent of voxel traversal
        for (node, d) in node_to_dof.iter_mut().enumerate() {
            if *d != NO_DOF {
                *d = dof_to_node.len();
                dof_to_node.push(node);
            }
        }
        let mut lumped_mass = vec![0.0; dof_to_node.len()];
        let share = mesh.voxel_volume() / mesh.num_local() as f64;
        for (v, &on) in active.iter().enumerate() {
            if on {
                for node in mesh.voxel_nodes(v) {
                    lumped_mass[node_to_dof[node]] += share;
                }
            }
        }
        DofMap { node_to_dof, dof_to_node, lumped_mass }
    }

    pub fn len(&self) -> usize {
        self.dof_to_node.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dof_to_node.is_empty()
    }

    pub fn dof(&self, node: usize) -> Option<usize> {
        match self.node_to_dof[node] {
            NO_DOF => None,
            d => Some(d),
        }
    }

    pub fn node(&self, dof: usize) -> usize {
        self.dof_to_node[dof]
    }

    /// `∫ N_a` over the active region (exact for Q1).
    pub fn lumped_mass(&self) -> &[f64] {
        &self.lumped_mass
    }

    /// Scatter dof values to a node array, filling inactive nodes with `fill`.
    pub fn to_nodes(&self, x: &[f64], fill: f64) -> Vec<f64> {
        let mut out = vec![fill; self.node_to_dof.len()];
        for (d, &node) in self.dof_to_node.iter().enumerate() {
            out[node] = x[d];
        }
        out
    }

    pub fn weighted_mean(&self, x: &[f64]) -> f64 {
        let num = crate::sparse::compensated_sum(x.iter().zip(&self.lumped_mass).map(|(a, m)| a * m));
        let den = crate::sparse::compensated_sum(self.lumped_mass.iter().copied());
        num / den
    }
}

/// Assemble the stiffness matrix over active voxels. `material[v]` indexes
/// `palette`; `None` marks an inactive voxel.
pub fn assemble_stiffness(
    mesh: &BoxMesh,
    dofs: &DofMap,
    material: &[Option<u32>],
    palette: &[DMatrix<f64>],
) -> CsrMatrix {
    let basis = ElementBasis::new(mesh.dim(), mesh.h3());
    let elements: Vec<Vec<f64>> = palette.iter().map(|m| basis.stiffness(m)).collect();
    let nloc = basis.num_local();
    let active = material.iter().filter(|m| m.is_some()).count();
    let mut triplets = Vec::with_capacity(active * nloc * nloc);
    for (v, mat) in material.iter().enumerate() {
        let Some(mat) = mat else { continue };
        let k = &elements[*mat as usize];
        let local: Vec<usize> = mesh.voxel_nodes(v).into_iter().map(|n| dofs.dof(n).unwrap()).collect();
        for a in 0..nloc {
            triplets.push((local[a], local[a], k[a * nloc + a]));
            for b in (a + 1)..nloc {
                let val = k[a * nloc + b];
                triplets.push((local[a], local[b], val));
                triplets.push((local[b], local[a], val));
            }
        }
    }
    CsrMatrix::from_triplets(dofs.len(), triplets)
}
