//! P1 finite element assembly on a uniform mesh: mass and lumped mass
//! matrices, the coefficient-weighted stiffness matrix, load vectors, the
//! coupling matrix N, and the data-misfit energy with its derivatives.
//!
//! q-space vectors live on all nodes; u-space vectors on interior nodes.

use crate::error::{Error, Result};
use crate::linsolve::{build_preconditioner, pcg, LinearSolverConfig};
use crate::mesh::{hierarchy_for, interior_gradients, Mesh, MeshHierarchy, Vec2};
use crate::sparse::SparseMatrix;

/// Coefficient vector over all `(n+1)²` nodes.
pub type NodalField = Vec<f64>;
/// Coefficient vector over the `(n-1)²` interior nodes.
pub type InteriorField = Vec<f64>;

/// Observed gradient field ∇u_δ, one constant vector per triangle.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub grads: Vec<Vec2>,
    pub h: f64,
}

impl Observation {
    pub fn new(mesh: &Mesh, grads: Vec<Vec2>) -> Result<Self> {
        if grads.len() != mesh.num_triangles() {
            return Err(Error::invalid(format!(
                "observation has {} gradients, mesh has {} triangles",
                grads.len(),
                mesh.num_triangles()
            )));
        }
        if grads.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("observation contains non-finite entries"));
        }
        Ok(Self { grads, h: mesh.h() })
    }
}

/// Right-hand side f of the state equation.
#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    Constant(f64),
    /// Nodal values, integrated exactly as a P1 function.
    Nodal(Vec<f64>),
}

fn check_len(what: &str, v: &[f64], expected: usize) -> Result<()> {
    if v.len() != expected {
        return Err(Error::invalid(format!(
            "{what} has {} entries, expected {expected}",
            v.len()
        )));
    }
    Ok(())
}

const LOCAL_MASS: [[f64; 3]; 3] = [[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]];

pub fn assemble_mass(mesh: &Mesh) -> SparseMatrix {
    let mut trip = Vec::with_capacity(9 * mesh.num_triangles());
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let s = mesh.area(t) / 12.0;
        for a in 0..3 {
            for b in 0..3 {
                trip.push((tri[a], tri[b], s * LOCAL_MASS[a][b]));
            }
        }
    }
    SparseMatrix::from_triplets(mesh.num_nodes(), mesh.num_nodes(), &trip)
        .expect("mesh indices are in range")
}

/// Diagonal matrix of the row sums of `m`.
pub fn lumped_mass(m: &SparseMatrix) -> SparseMatrix {
    SparseMatrix::from_diagonal(&m.row_sums())
}

/// Stiffness matrix `(q_h ∇φ_j, ∇φ_i)` over interior nodes. On each triangle
/// ∫ q equals the area times the vertex mean of q.
pub fn assemble_stiffness(mesh: &Mesh, q: &[f64]) -> Result<SparseMatrix> {
    check_len("coefficient", q, mesh.num_nodes())?;
    if let Some((i, v)) = q.iter().enumerate().find(|(_, &v)| !(v > 0.0)) {
        return Err(Error::invalid(format!(
            "coefficient must be positive, q[{i}] = {v}"
        )));
    }
    let mut trip = Vec::with_capacity(9 * mesh.num_triangles());
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let w = mesh.area(t) * mesh.vertex_mean(q, t);
        let g = mesh.basis_grads(t);
        for a in 0..3 {
            let Some(ia) = mesh.interior_index(tri[a]) else {
                continue;
            };
            for b in 0..3 {
                let Some(ib) = mesh.interior_index(tri[b]) else {
                    continue;
                };
                trip.push((ia, ib, w * (g[a][0] * g[b][0] + g[a][1] * g[b][1])));
            }
        }
    }
    Ok(
        SparseMatrix::from_triplets(mesh.num_interior(), mesh.num_interior(), &trip)
            .expect("mesh indices are in range"),
    )
}

/// Load `(f, φ_i)` for every node, boundary included.
pub fn assemble_load_all(mesh: &Mesh, f: &Source) -> Result<Vec<f64>> {
    match f {
        Source::Constant(c) => {
            let mut out = vec![0.0; mesh.num_nodes()];
            for (t, tri) in mesh.triangles().iter().enumerate() {
                let share = c * mesh.area(t) / 3.0;
                for &k in tri {
                    out[k] += share;
                }
            }
            Ok(out)
        }
        Source::Nodal(values) => {
            check_len("source", values, mesh.num_nodes())?;
            Ok(assemble_mass(mesh).mul_vec(values))
        }
    }
}

/// Load vector over interior nodes.
pub fn assemble_load(mesh: &Mesh, f: &Source) -> Result<InteriorField> {
    Ok(mesh.restrict_interior(&assemble_load_all(mesh, f)?))
}

/// Caches the multigrid hierarchy for repeated state solves on one mesh.
pub struct StateSolver {
    hier: MeshHierarchy,
    cfg: LinearSolverConfig,
}

impl StateSolver {
    pub fn new(mesh: &Mesh, cfg: LinearSolverConfig) -> Result<Self> {
        cfg.validate()?;
        let hier = hierarchy_for(mesh.n(), cfg.coarse_n)?;
        Ok(Self { hier, cfg })
    }

    pub fn hierarchy(&self) -> &MeshHierarchy {
        &self.hier
    }

    pub fn config(&self) -> &LinearSolverConfig {
        &self.cfg
    }

    /// Solves `A u = f` with PCG starting from `u` (warm start).
    pub fn solve_with(&self, a: &SparseMatrix, f: &[f64], u: &mut [f64]) -> Result<usize> {
        let pre = build_preconditioner(&self.hier, a, &self.cfg)?;
        let out = pcg(a, f, pre.as_ref(), u, &self.cfg).map_err(|e| match e {
            Error::SolverFailure {
                iters, residual, ..
            } => Error::SolverFailure {
                what: "state equation".into(),
                iters,
                residual,
            },
            other => other,
        })?;
        Ok(out.iters)
    }
}

/// Solves the state equation `A(q) u = f` from a zero initial guess.
pub fn forward_solve(
    mesh: &Mesh,
    q: &[f64],
    f: &[f64],
    lin: &LinearSolverConfig,
) -> Result<(InteriorField, usize)> {
    check_len("load", f, mesh.num_interior())?;
    let a = assemble_stiffness(mesh, q)?;
    let solver = StateSolver::new(mesh, lin.clone())?;
    let mut u = vec![0.0; mesh.num_interior()];
    let iters = solver.solve_with(&a, f, &mut u)?;
    Ok((u, iters))
}

/// `½ Σ_τ |τ| q̄_τ |∇u_τ − ∇u_δ,τ|²` with u an interior field.
pub fn energy_j(mesh: &Mesh, q: &[f64], u: &[f64], obs: &Observation) -> Result<f64> {
    check_len("coefficient", q, mesh.num_nodes())?;
    let gu = interior_gradients(mesh, u)?;
    Ok(energy_from_gradients(mesh, q, &gu, obs))
}

pub(crate) fn energy_from_gradients(mesh: &Mesh, q: &[f64], gu: &[Vec2], obs: &Observation) -> f64 {
    let mut total = 0.0;
    for t in 0..mesh.num_triangles() {
        let d0 = gu[t][0] - obs.grads[t][0];
        let d1 = gu[t][1] - obs.grads[t][1];
        total += mesh.area(t) * mesh.vertex_mean(q, t) * (d0 * d0 + d1 * d1);
    }
    0.5 * total
}

/// `(J'(q))_i = (φ_i, −½|∇U|² + ½|∇u_δ|²)` over all nodes.
pub fn gradient_j(mesh: &Mesh, grad_u: &[Vec2], obs: &Observation) -> Result<NodalField> {
    if grad_u.len() != mesh.num_triangles() || obs.grads.len() != mesh.num_triangles() {
        return Err(Error::invalid(
            "gradient fields must have one entry per triangle",
        ));
    }
    let mut out = vec![0.0; mesh.num_nodes()];
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let gu = grad_u[t];
        let gd = obs.grads[t];
        let density =
            -0.5 * (gu[0] * gu[0] + gu[1] * gu[1]) + 0.5 * (gd[0] * gd[0] + gd[1] * gd[1]);
        let share = mesh.area(t) / 3.0 * density;
        for &k in tri {
            out[k] += share;
        }
    }
    Ok(out)
}

/// Coupling matrix with rows over all nodes (q-space) and columns over
/// interior nodes (u-space): `N_ij = (φ_i ∇U, ∇φ_j)`. It satisfies
/// `J''(q) δq = −N r` where `A r = −Nᵀ δq`.
pub fn assemble_n(mesh: &Mesh, grad_u: &[Vec2]) -> Result<SparseMatrix> {
    if grad_u.len() != mesh.num_triangles() {
        return Err(Error::invalid("gradU must have one entry per triangle"));
    }
    let mut trip = Vec::with_capacity(9 * mesh.num_triangles());
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let g = mesh.basis_grads(t);
        let gu = grad_u[t];
        let third = mesh.area(t) / 3.0;
        for b in 0..3 {
            let Some(col) = mesh.interior_index(tri[b]) else {
                continue;
            };
            let flux = third * (gu[0] * g[b][0] + gu[1] * g[b][1]);
            for &row in tri {
                trip.push((row, col, flux));
            }
        }
    }
    Ok(
        SparseMatrix::from_triplets(mesh.num_nodes(), mesh.num_interior(), &trip)
            .expect("mesh indices are in range"),
    )
}
