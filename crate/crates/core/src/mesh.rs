//! Uniform right triangulations of the unit square and their refinement
//! hierarchy.
//!
//! Nodes are numbered lexicographically with x fastest: node (i, j) sits at
//! (i h, j h) and has index `j (n + 1) + i`. Every cell is cut along its
//! lower-left to upper-right diagonal, so for q ≡ 1 the P1 stiffness matrix
//! is the 5-point Laplacian.

use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;

pub type Vec2 = [f64; 2];

#[derive(Debug, Clone)]
pub struct Mesh {
    n: usize,
    h: f64,
    nodes: Vec<Vec2>,
    triangles: Vec<[usize; 3]>,
    interior_index: Vec<Option<usize>>,
    interior_nodes: Vec<usize>,
    elem_area: Vec<f64>,
    /// Gradients of the three local hat functions, constant per triangle.
    basis_grads: Vec<[Vec2; 3]>,
}

impl Mesh {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn num_interior(&self) -> usize {
        self.interior_nodes.len()
    }

    pub fn nodes(&self) -> &[Vec2] {
        &self.nodes
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn area(&self, t: usize) -> f64 {
        self.elem_area[t]
    }

    pub fn areas(&self) -> &[f64] {
        &self.elem_area
    }

    pub fn basis_grads(&self, t: usize) -> &[Vec2; 3] {
        &self.basis_grads[t]
    }

    /// Interior (u-space) index of a global node, `None` on the boundary.
    pub fn interior_index(&self, node: usize) -> Option<usize> {
        self.interior_index[node]
    }

    /// Global node index of each interior unknown.
    pub fn interior_nodes(&self) -> &[usize] {
        &self.interior_nodes
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        self.interior_index[node].is_none()
    }

    pub fn node_index(&self, i: usize, j: usize) -> usize {
        j * (self.n + 1) + i
    }

    /// Lifts an interior field to all nodes with zero boundary values.
    pub fn extend_interior(&self, u: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.num_nodes()];
        for (k, &g) in self.interior_nodes.iter().enumerate() {
            full[g] = u[k];
        }
        full
    }

    /// Restricts an all-node field to its interior entries.
    pub fn restrict_interior(&self, v: &[f64]) -> Vec<f64> {
        self.interior_nodes.iter().map(|&g| v[g]).collect()
    }

    /// Nodal interpolant of a pointwise function.
    pub fn interpolate(&self, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        self.nodes.iter().map(|p| f(p[0], p[1])).collect()
    }

    /// Vertex mean of a nodal field on triangle `t`.
    pub fn vertex_mean(&self, v: &[f64], t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        (v[a] + v[b] + v[c]) / 3.0
    }
}

pub fn build_uniform_mesh(n: usize) -> Result<Mesh> {
    if n == 0 {
        return Err(Error::invalid("mesh needs at least one subdivision"));
    }
    let h = 1.0 / n as f64;
    let np = n + 1;
    let mut nodes = Vec::with_capacity(np * np);
    let mut interior_index = Vec::with_capacity(np * np);
    let mut interior_nodes = Vec::new();
    for j in 0..np {
        for i in 0..np {
            nodes.push([i as f64 * h, j as f64 * h]);
            if i == 0 || j == 0 || i == n || j == n {
                interior_index.push(None);
            } else {
                interior_index.push(Some(interior_nodes.len()));
                interior_nodes.push(j * np + i);
            }
        }
    }

    let mut triangles = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            let sw = j * np + i;
            let se = sw + 1;
            let nw = sw + np;
            let ne = nw + 1;
            triangles.push([sw, se, ne]);
            triangles.push([sw, ne, nw]);
        }
    }

    let mut elem_area = Vec::with_capacity(triangles.len());
    let mut basis_grads = Vec::with_capacity(triangles.len());
    for tri in &triangles {
        let [p0, p1, p2] = tri.map(|k| nodes[k]);
        let det = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]);
        elem_area.push(0.5 * h * h);
        basis_grads.push([
            [(p1[1] - p2[1]) / det, (p2[0] - p1[0]) / det],
            [(p2[1] - p0[1]) / det, (p0[0] - p2[0]) / det],
            [(p0[1] - p1[1]) / det, (p1[0] - p0[0]) / det],
        ]);
    }

    Ok(Mesh {
        n,
        h,
        nodes,
        triangles,
        interior_index,
        interior_nodes,
        elem_area,
        basis_grads,
    })
}

/// Constant gradient of the P1 interpolant of `v` on every triangle.
pub fn element_gradients(mesh: &Mesh, v: &[f64]) -> Result<Vec<Vec2>> {
    if v.len() != mesh.num_nodes() {
        return Err(Error::invalid(format!(
            "nodal field has {} entries, mesh has {} nodes",
            v.len(),
            mesh.num_nodes()
        )));
    }
    Ok(mesh
        .triangles
        .iter()
        .zip(&mesh.basis_grads)
        .map(|(tri, g)| {
            let mut out = [0.0; 2];
            for a in 0..3 {
                out[0] += v[tri[a]] * g[a][0];
                out[1] += v[tri[a]] * g[a][1];
            }
            out
        })
        .collect())
}

/// Element gradients of an interior field extended by zero.
pub fn interior_gradients(mesh: &Mesh, u: &[f64]) -> Result<Vec<Vec2>> {
    if u.len() != mesh.num_interior() {
        return Err(Error::invalid(format!(
            "interior field has {} entries, mesh has {} interior nodes",
            u.len(),
            mesh.num_interior()
        )));
    }
    element_gradients(mesh, &mesh.extend_interior(u))
}

/// Uniformly refined meshes, coarse to fine, with the nodal interpolation
/// operators between consecutive levels.
#[derive(Debug, Clone)]
pub struct MeshHierarchy {
    levels: Vec<Mesh>,
    prolongation: Vec<SparseMatrix>,
}

impl MeshHierarchy {
    pub fn levels(&self) -> &[Mesh] {
        &self.levels
    }

    pub fn finest(&self) -> &Mesh {
        self.levels
            .last()
            .expect("hierarchy has at least one level")
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    /// All-node interpolation from level `l` to level `l + 1`.
    pub fn prolongation(&self, l: usize) -> &SparseMatrix {
        &self.prolongation[l]
    }

    /// Restriction is the transpose of prolongation.
    pub fn restriction(&self, l: usize) -> SparseMatrix {
        self.prolongation[l].transpose()
    }

    /// Prolongation between the interior (homogeneous Dirichlet) spaces of
    /// levels `l` and `l + 1`.
    pub fn interior_prolongation(&self, l: usize) -> SparseMatrix {
        let coarse = &self.levels[l];
        let fine = &self.levels[l + 1];
        let p = &self.prolongation[l];
        let mut trip = Vec::new();
        for (fi, &fg) in fine.interior_nodes().iter().enumerate() {
            for (cg, w) in p.row(fg) {
                if let Some(ci) = coarse.interior_index(cg) {
                    trip.push((fi, ci, w));
                }
            }
        }
        SparseMatrix::from_triplets(fine.num_interior(), coarse.num_interior(), &trip)
            .expect("indices come from the meshes")
    }
}

pub fn build_hierarchy(n_coarse: usize, levels: usize) -> Result<MeshHierarchy> {
    if levels == 0 {
        return Err(Error::invalid("hierarchy needs at least one level"));
    }
    if n_coarse == 0 {
        return Err(Error::invalid("coarse mesh needs at least one subdivision"));
    }
    let mut meshes = Vec::with_capacity(levels);
    let mut n = n_coarse;
    for _ in 0..levels {
        meshes.push(build_uniform_mesh(n)?);
        n *= 2;
    }
    let prolongation = meshes
        .windows(2)
        .map(|w| linear_prolongation(&w[0], &w[1]))
        .collect();
    Ok(MeshHierarchy {
        levels: meshes,
        prolongation,
    })
}

/// Hierarchy whose finest level has `n` subdivisions, halving while the
/// coarser mesh keeps at least `min_coarse` subdivisions.
pub fn hierarchy_for(n: usize, min_coarse: usize) -> Result<MeshHierarchy> {
    if n == 0 {
        return Err(Error::invalid("mesh needs at least one subdivision"));
    }
    let mut coarse = n;
    let mut levels = 1;
    while coarse % 2 == 0 && coarse / 2 >= min_coarse.max(2) {
        coarse /= 2;
        levels += 1;
    }
    build_hierarchy(coarse, levels)
}

fn linear_prolongation(coarse: &Mesh, fine: &Mesh) -> SparseMatrix {
    let nc = coarse.n();
    let mut trip = Vec::with_capacity(fine.num_nodes() * 2);
    for jf in 0..=fine.n() {
        for iff in 0..=fine.n() {
            let row = fine.node_index(iff, jf);
            let (ic, jc) = (iff / 2, jf / 2);
            match (iff % 2, jf % 2) {
                (0, 0) => trip.push((row, coarse.node_index(ic, jc), 1.0)),
                (1, 0) => {
                    trip.push((row, coarse.node_index(ic, jc), 0.5));
                    trip.push((row, coarse.node_index(ic + 1, jc), 0.5));
                }
                (0, 1) => {
                    trip.push((row, coarse.node_index(ic, jc), 0.5));
                    trip.push((row, coarse.node_index(ic, jc + 1), 0.5));
                }
                _ => {
                    // midpoint of the cell diagonal
                    trip.push((row, coarse.node_index(ic, jc), 0.5));
                    trip.push((row, coarse.node_index(ic + 1, jc + 1), 0.5));
                }
            }
        }
    }
    debug_assert!(nc * 2 == fine.n());
    SparseMatrix::from_triplets(fine.num_nodes(), coarse.num_nodes(), &trip)
        .expect("indices come from the meshes")
}
