//! Independent dense oracles shared by the integration tests.
#![allow(dead_code)]

use coeffid::mesh::{Mesh, Vec2};
use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Gradients of the three barycentric functions, from vertex coordinates.
pub fn bary_grads(mesh: &Mesh, t: usize) -> [Vec2; 3] {
    let tri = mesh.triangles()[t];
    let p = tri.map(|k| mesh.nodes()[k]);
    let det = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
    let mut g = [[0.0; 2]; 3];
    for a in 0..3 {
        let b = (a + 1) % 3;
        let c = (a + 2) % 3;
        g[a] = [(p[b][1] - p[c][1]) / det, (p[c][0] - p[b][0]) / det];
    }
    g
}

pub fn tri_area(mesh: &Mesh, t: usize) -> f64 {
    let p = mesh.triangles()[t].map(|k| mesh.nodes()[k]);
    0.5 * ((p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]))
        .abs()
}

/// Interior position of every node, by a fresh scan.
pub fn interior_map(mesh: &Mesh) -> Vec<Option<usize>> {
    let mut next = 0;
    mesh.nodes()
        .iter()
        .map(|&[x, y]| {
            let eps = 1e-12;
            if x < eps || y < eps || x > 1.0 - eps || y > 1.0 - eps {
                None
            } else {
                next += 1;
                Some(next - 1)
            }
        })
        .collect()
}

pub fn dense_mass(mesh: &Mesh) -> DMatrix<f64> {
    let nn = mesh.num_nodes();
    let mut m = DMatrix::zeros(nn, nn);
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let area = tri_area(mesh, t);
        for a in 0..3 {
            for b in 0..3 {
                m[(tri[a], tri[b])] += area * if a == b { 1.0 / 6.0 } else { 1.0 / 12.0 };
            }
        }
    }
    m
}

pub fn dense_lumped(mesh: &Mesh) -> DMatrix<f64> {
    let m = dense_mass(mesh);
    DMatrix::from_diagonal(&DVector::from_iterator(
        m.nrows(),
        m.row_iter().map(|r| r.sum()),
    ))
}

/// Interior stiffness for a P1 coefficient.
pub fn dense_stiffness(mesh: &Mesh, q: &[f64]) -> DMatrix<f64> {
    let imap = interior_map(mesh);
    let ni = imap.iter().flatten().count();
    let mut a = DMatrix::zeros(ni, ni);
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let g = bary_grads(mesh, t);
        let qbar = tri.iter().map(|&k| q[k]).sum::<f64>() / 3.0;
        let area = tri_area(mesh, t);
        for a_ in 0..3 {
            for b in 0..3 {
                if let (Some(i), Some(j)) = (imap[tri[a_]], imap[tri[b]]) {
                    a[(i, j)] += area * qbar * (g[a_][0] * g[b][0] + g[a_][1] * g[b][1]);
                }
            }
        }
    }
    a
}

pub fn dense_load(mesh: &Mesh, f: f64) -> DVector<f64> {
    let imap = interior_map(mesh);
    let ni = imap.iter().flatten().count();
    let mut b = DVector::zeros(ni);
    for (t, tri) in mesh.triangles().iter().enumerate() {
        for &k in tri {
            if let Some(i) = imap[k] {
                b[i] += f * tri_area(mesh, t) / 3.0;
            }
        }
    }
    b
}

pub fn dense_state(mesh: &Mesh, q: &[f64], f: f64) -> DVector<f64> {
    dense_stiffness(mesh, q)
        .lu()
        .solve(&dense_load(mesh, f))
        .expect("stiffness is nonsingular")
}

/// Per-triangle gradient of an interior field (zero boundary values).
pub fn tri_gradients(mesh: &Mesh, u: &DVector<f64>) -> Vec<Vec2> {
    let imap = interior_map(mesh);
    (0..mesh.num_triangles())
        .map(|t| {
            let g = bary_grads(mesh, t);
            let mut out = [0.0; 2];
            for (a, &k) in mesh.triangles()[t].iter().enumerate() {
                if let Some(i) = imap[k] {
                    out[0] += u[i] * g[a][0];
                    out[1] += u[i] * g[a][1];
                }
            }
            out
        })
        .collect()
}

pub fn dense_energy(mesh: &Mesh, q: &[f64], obs: &[Vec2], f: f64) -> f64 {
    let gu = tri_gradients(mesh, &dense_state(mesh, q, f));
    let mut e = 0.0;
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let qbar = tri.iter().map(|&k| q[k]).sum::<f64>() / 3.0;
        let d = [gu[t][0] - obs[t][0], gu[t][1] - obs[t][1]];
        e += 0.5 * tri_area(mesh, t) * qbar * (d[0] * d[0] + d[1] * d[1]);
    }
    e
}

pub fn dense_gradient(mesh: &Mesh, q: &[f64], obs: &[Vec2], f: f64) -> Vec<f64> {
    let gu = tri_gradients(mesh, &dense_state(mesh, q, f));
    let mut g = vec![0.0; mesh.num_nodes()];
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let s = 0.5 * (obs[t][0].powi(2) + obs[t][1].powi(2) - gu[t][0].powi(2) - gu[t][1].powi(2));
        for &k in tri {
            g[k] += tri_area(mesh, t) / 3.0 * s;
        }
    }
    g
}

/// `J''(q)` assembled one column at a time: for each nodal direction ξ = φ_i
/// solve for the state sensitivity and integrate `−ξ_j ∇U·∇(U'ξ_i)`.
pub fn dense_hessian(mesh: &Mesh, q: &[f64], f: f64) -> DMatrix<f64> {
    let imap = interior_map(mesh);
    let nn = mesh.num_nodes();
    let ni = imap.iter().flatten().count();
    let a = dense_stiffness(mesh, q);
    let lu = a.lu();
    let gu = tri_gradients(mesh, &dense_state(mesh, q, f));
    let mut hess = DMatrix::zeros(nn, nn);
    for i in 0..nn {
        let mut rhs = DVector::zeros(ni);
        for (t, tri) in mesh.triangles().iter().enumerate() {
            if !tri.contains(&i) {
                continue;
            }
            let g = bary_grads(mesh, t);
            let w = tri_area(mesh, t) / 3.0;
            for (b, &k) in tri.iter().enumerate() {
                if let Some(v) = imap[k] {
                    rhs[v] -= w * (gu[t][0] * g[b][0] + gu[t][1] * g[b][1]);
                }
            }
        }
        let r = lu.solve(&rhs).expect("stiffness is nonsingular");
        let gr = tri_gradients(mesh, &r);
        for (t, tri) in mesh.triangles().iter().enumerate() {
            let s = -tri_area(mesh, t) / 3.0 * (gu[t][0] * gr[t][0] + gu[t][1] * gr[t][1]);
            for &j in tri {
                hess[(j, i)] += s;
            }
        }
    }
    hess
}

/// Coupling `N_ij = (φ_i ∇U, ∇φ_j)`, all nodes × interior.
pub fn dense_n(mesh: &Mesh, gu: &[Vec2]) -> DMatrix<f64> {
    let imap = interior_map(mesh);
    let ni = imap.iter().flatten().count();
    let mut n = DMatrix::zeros(mesh.num_nodes(), ni);
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let g = bary_grads(mesh, t);
        let w = tri_area(mesh, t) / 3.0;
        for (b, &k) in tri.iter().enumerate() {
            if let Some(j) = imap[k] {
                for &i in tri {
                    n[(i, j)] += w * (gu[t][0] * g[b][0] + gu[t][1] * g[b][1]);
                }
            }
        }
    }
    n
}

/// Rows of the identity selected by `idx`.
pub fn selector(idx: &[usize], n: usize) -> DMatrix<f64> {
    let mut p = DMatrix::zeros(idx.len(), n);
    for (r, &i) in idx.iter().enumerate() {
        p[(r, i)] = 1.0;
    }
    p
}

pub fn place(dst: &mut DMatrix<f64>, r0: usize, c0: usize, block: &DMatrix<f64>) {
    dst.view_mut((r0, c0), block.shape()).copy_from(block);
}

/// `[A Nᵀ 0; −N βX Pᵀ; 0 P 0]`.
pub fn saddle(
    a: &DMatrix<f64>,
    n: &DMatrix<f64>,
    x: &DMatrix<f64>,
    p: &DMatrix<f64>,
    beta: f64,
) -> DMatrix<f64> {
    let (nu, nq, na) = (a.nrows(), x.nrows(), p.nrows());
    let mut f = DMatrix::zeros(nu + nq + na, nu + nq + na);
    place(&mut f, 0, 0, a);
    place(&mut f, 0, nu, &n.transpose());
    place(&mut f, nu, 0, &(-n));
    place(&mut f, nu, nu, &(x * beta));
    place(&mut f, nu, nu + nq, &p.transpose());
    place(&mut f, nu + nq, nu, p);
    f
}

/// Factors `(L, C, R)` with the unsimplified `G` and `H`.
pub fn generic_lcr(
    a: &DMatrix<f64>,
    n: &DMatrix<f64>,
    w: &DMatrix<f64>,
    p: &DMatrix<f64>,
    beta: f64,
) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let (nu, nq, na) = (a.nrows(), w.nrows(), p.nrows());
    let wi = w.clone().try_inverse().expect("W is diagonal positive");
    let pwp = p * &wi * p.transpose();
    let pwp_inv = if na == 0 {
        pwp.clone()
    } else {
        pwp.clone().try_inverse().expect("diagonal")
    };
    let g = n.transpose() * &wi * p.transpose() * &pwp_inv;
    let h = generic_h(a, n, w, p, beta);
    let dim = nu + nq + na;
    let mut l = DMatrix::identity(dim, dim);
    place(&mut l, 0, nu, &(n.transpose() * &wi / beta));
    place(&mut l, 0, nu + nq, &g);
    place(&mut l, nu + nq, nu, &(p * &wi / beta));
    let mut c = DMatrix::zeros(dim, dim);
    place(&mut c, 0, 0, &h);
    place(&mut c, nu, nu, &(w * beta));
    place(&mut c, nu + nq, nu + nq, &(-pwp / beta));
    let mut r = DMatrix::identity(dim, dim);
    place(&mut r, nu, 0, &(-&wi * n / beta));
    place(&mut r, nu, nu + nq, &(&wi * p.transpose() / beta));
    place(&mut r, nu + nq, 0, &(-g.transpose()));
    (l, c, r)
}

pub fn generic_h(
    a: &DMatrix<f64>,
    n: &DMatrix<f64>,
    w: &DMatrix<f64>,
    p: &DMatrix<f64>,
    beta: f64,
) -> DMatrix<f64> {
    let wi = w.clone().try_inverse().expect("W is diagonal positive");
    let mut h = a + n.transpose() * &wi * n / beta;
    if p.nrows() > 0 {
        let pwp_inv = (p * &wi * p.transpose()).try_inverse().expect("diagonal");
        h -= n.transpose() * &wi * p.transpose() * pwp_inv * p * &wi * n / beta;
    }
    h
}

fn fwd_grad(x: &[f64], rows: usize, cols: usize) -> (Vec<f64>, Vec<f64>) {
    let mut gx = vec![0.0; x.len()];
    let mut gy = vec![0.0; x.len()];
    for r in 0..rows {
        for c in 0..cols {
            let k = r * cols + c;
            if c + 1 < cols {
                gx[k] = x[k + 1] - x[k];
            }
            if r + 1 < rows {
                gy[k] = x[k + cols] - x[k];
            }
        }
    }
    (gx, gy)
}

/// Adjoint of `fwd_grad`, built directly from the transpose of the difference
/// stencil.
fn grad_adjoint(gx: &[f64], gy: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; gx.len()];
    for r in 0..rows {
        for c in 0..cols {
            let k = r * cols + c;
            if c + 1 < cols {
                out[k + 1] += gx[k];
                out[k] -= gx[k];
            }
            if r + 1 < rows {
                out[k + cols] += gy[k];
                out[k] -= gy[k];
            }
        }
    }
    out
}

pub fn tv(x: &[f64], rows: usize, cols: usize) -> f64 {
    let (gx, gy) = fwd_grad(x, rows, cols);
    gx.iter()
        .zip(&gy)
        .map(|(a, b)| (a * a + b * b).sqrt())
        .sum()
}

pub fn rof(x: &[f64], z: &[f64], theta: f64, rows: usize, cols: usize) -> f64 {
    theta * tv(x, rows, cols) + 0.5 * x.iter().zip(z).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
}

/// Primal-dual iteration with fixed steps for `min θ TV(x) + ½‖x − z‖²`.
/// Stops once the duality gap certifies `P(x) − P(x*) < tol`, which bounds
/// `½‖x − x*‖²` by the same amount.
pub fn chambolle_pock(z: &[f64], rows: usize, cols: usize, theta: f64, tol: f64) -> Vec<f64> {
    let len = z.len();
    let mut x = z.to_vec();
    let mut xbar = x.clone();
    let mut yx = vec![0.0; len];
    let mut yy = vec![0.0; len];
    let (tau, sigma) = (0.35, 0.35);
    let primal = |x: &[f64]| rof(x, z, theta, rows, cols);
    for it in 0..20_000_000 {
        let (gx, gy) = fwd_grad(&xbar, rows, cols);
        for k in 0..len {
            let (a, b) = (yx[k] + sigma * gx[k], yy[k] + sigma * gy[k]);
            let s = ((a * a + b * b).sqrt() / theta).max(1.0);
            yx[k] = a / s;
            yy[k] = b / s;
        }
        let kt = grad_adjoint(&yx, &yy, rows, cols);
        let x_old = x.clone();
        for k in 0..len {
            x[k] = (x[k] - tau * kt[k] + tau * z[k]) / (1.0 + tau);
            xbar[k] = 2.0 * x[k] - x_old[k];
        }
        if it % 50 == 0 {
            let dual = kt
                .iter()
                .zip(z)
                .map(|(k, zk)| zk * k - 0.5 * k * k)
                .sum::<f64>();
            let from_dual: Vec<f64> = z.iter().zip(&kt).map(|(zk, k)| zk - k).collect();
            let (p1, p2) = (primal(&x), primal(&from_dual));
            if p1.min(p2) - dual < tol {
                return if p1 <= p2 { x } else { from_dual };
            }
        }
    }
    panic!("primal-dual oracle did not converge");
}

/// Projected gradient on the proximally regularized coefficient problem
/// `J(q) + β/2‖q − c‖²_M + β/2‖q − q_k‖²_{W−M}` over a box, with the
/// diagonal scaling `W⁻¹`. Stops when the projected residual
/// `q − Π(q − W⁻¹∇Φ/β)` is below `tol` in ∞-norm.
#[allow(clippy::too_many_arguments)]
pub fn projected_gradient(
    mesh: &Mesh,
    obs: &[Vec2],
    f: f64,
    q_k: &[f64],
    center: &[f64],
    beta: f64,
    bounds: (f64, f64),
    tol: f64,
) -> Vec<f64> {
    let m = dense_mass(mesh);
    let w = dense_lumped(mesh);
    let wm = &w - &m;
    let winv: Vec<f64> = w.diagonal().iter().map(|v| 1.0 / v).collect();
    let qk = DVector::from_column_slice(q_k);
    let c = DVector::from_column_slice(center);
    let grad = |q: &DVector<f64>| -> DVector<f64> {
        DVector::from_vec(dense_gradient(mesh, q.as_slice(), obs, f))
            + &m * (q - &c) * beta
            + &wm * (q - &qk) * beta
    };
    let proj = |v: f64| v.clamp(bounds.0, bounds.1);
    let mut q = qk.map(proj);
    // step from the largest eigenvalue of W^{-1/2} ∇²Φ W^{-1/2}, with margin for the
    // variation of J'' along the path
    let whalf = DMatrix::from_diagonal(&DVector::from_iterator(
        winv.len(),
        winv.iter().map(|v| v.sqrt()),
    ));
    let mut lip: f64 = 0.0;
    for probe in [q.clone(), c.map(proj)] {
        let hess = dense_hessian(mesh, probe.as_slice(), f) + &w * beta;
        lip = lip.max(
            SymmetricEigen::new(&whalf * hess * &whalf)
                .eigenvalues
                .max(),
        );
    }
    let step = 1.0 / (2.0 * lip);
    for _ in 0..2_000_000 {
        let g = grad(&q);
        let res = (0..q.len())
            .map(|i| (q[i] - proj(q[i] - winv[i] * g[i] / beta)).abs())
            .fold(0.0, f64::max);
        if res < tol {
            return q.as_slice().to_vec();
        }
        q = DVector::from_iterator(
            q.len(),
            (0..q.len()).map(|i| proj(q[i] - step * winv[i] * g[i])),
        );
    }
    panic!("projected gradient oracle did not converge");
}
