//! Preconditioned conjugate gradients, a geometric multigrid V-cycle
//! preconditioner and the matrix-free reduced Newton operator
//! `H = A + (1/β) Nᵀ Π_I W⁻¹ Π_I N`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::MeshHierarchy;
use crate::sparse::{axpy, dot, norm2, SparseMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preconditioner {
    None,
    MgVcycle,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinearSolverConfig {
    /// Relative residual tolerance ‖b - Ax‖ / ‖b‖.
    pub tol: f64,
    pub max_iters: usize,
    pub precond: Preconditioner,
    /// Damped Jacobi sweeps on each leg of the V-cycle.
    pub smoother_sweeps: usize,
    pub jacobi_weight: f64,
    /// Smallest mesh (subdivisions per side) kept in the hierarchy; solved
    /// directly.
    pub coarse_n: usize,
}

impl Default for LinearSolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iters: 1000,
            precond: Preconditioner::MgVcycle,
            smoother_sweeps: 2,
            jacobi_weight: 2.0 / 3.0,
            coarse_n: 4,
        }
    }
}

impl LinearSolverConfig {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return Err(Error::invalid(format!(
                "tol must lie in (0, 1), got {}",
                self.tol
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be at least 1"));
        }
        if !(self.jacobi_weight > 0.0 && self.jacobi_weight <= 1.0) {
            return Err(Error::invalid("jacobi_weight must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// A linear map `x -> y`, either matrix-backed or a matrix-free composition.
pub trait LinearOperator {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
}

impl LinearOperator for SparseMatrix {
    fn dim(&self) -> usize {
        self.rows()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.mul_vec_into(x, y);
    }
}

/// The identity, used as the "no preconditioner" choice.
pub struct IdentityOperator(pub usize);

impl LinearOperator for IdentityOperator {
    fn dim(&self) -> usize {
        self.0
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        y.copy_from_slice(x);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PcgOutcome {
    pub iters: usize,
    pub residual: f64,
}

/// Solves `A x = b` by preconditioned CG, starting from the contents of `x`
/// (warm start). On failure `x` holds the last iterate.
pub fn pcg(
    a: &dyn LinearOperator,
    b: &[f64],
    precond: &dyn LinearOperator,
    x: &mut [f64],
    cfg: &LinearSolverConfig,
) -> Result<PcgOutcome> {
    let n = a.dim();
    if b.len() != n || x.len() != n || precond.dim() != n {
        return Err(Error::invalid(format!(
            "pcg dimension mismatch: operator {n}, rhs {}, x {}, preconditioner {}",
            b.len(),
            x.len(),
            precond.dim()
        )));
    }
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(PcgOutcome {
            iters: 0,
            residual: 0.0,
        });
    }

    let mut r = vec![0.0; n];
    a.apply(x, &mut r);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    let mut rel = norm2(&r) / bnorm;
    if rel <= cfg.tol {
        return Ok(PcgOutcome {
            iters: 0,
            residual: rel,
        });
    }

    let mut z = vec![0.0; n];
    precond.apply(&r, &mut z);
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);

    for iter in 1..=cfg.max_iters {
        a.apply(&p, &mut ap);
        let curvature = dot(&p, &ap);
        if !(curvature > 0.0) {
            return Err(Error::NotSpd { iter, curvature });
        }
        let alpha = rz / curvature;
        axpy(alpha, &p, x);
        axpy(-alpha, &ap, &mut r);
        rel = norm2(&r) / bnorm;
        if rel <= cfg.tol {
            return Ok(PcgOutcome {
                iters: iter,
                residual: rel,
            });
        }
        precond.apply(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for (pi, zi) in p.iter_mut().zip(&z) {
            *pi = zi + beta * *pi;
        }
    }
    Err(Error::SolverFailure {
        what: "pcg".into(),
        iters: cfg.max_iters,
        residual: rel,
    })
}

struct MgLevel {
    a: SparseMatrix,
    inv_diag: Vec<f64>,
    /// Interpolation from the next coarser level into this one.
    prolong: SparseMatrix,
}

/// One symmetric V-cycle (damped Jacobi pre/post smoothing, Galerkin coarse
/// operators, dense Cholesky on the coarsest level) used as a fixed SPD
/// preconditioner.
pub struct MgPreconditioner {
    /// Finest first; the coarsest matrix lives in `coarse_factor`.
    levels: Vec<MgLevel>,
    coarse_factor: Option<Cholesky<f64, Dyn>>,
    coarse_dim: usize,
    sweeps: usize,
    weight: f64,
}

impl MgPreconditioner {
    pub fn new(
        hier: &MeshHierarchy,
        a_fine: &SparseMatrix,
        cfg: &LinearSolverConfig,
    ) -> Result<Self> {
        let fine_dim = hier.finest().num_interior();
        if a_fine.rows() != fine_dim || a_fine.cols() != fine_dim {
            return Err(Error::invalid(format!(
                "matrix is {}x{} but the finest level has {fine_dim} interior nodes",
                a_fine.rows(),
                a_fine.cols()
            )));
        }
        let mut levels = Vec::new();
        let mut current = a_fine.clone();
        for l in (0..hier.num_levels() - 1).rev() {
            let p = hier.interior_prolongation(l);
            let coarse = p.transpose().matmul(&current)?.matmul(&p)?;
            let inv_diag = current.diagonal().iter().map(|d| 1.0 / d).collect();
            levels.push(MgLevel {
                a: current,
                inv_diag,
                prolong: p,
            });
            current = coarse;
        }
        let coarse_dim = current.rows();
        let coarse_factor = if coarse_dim == 0 {
            None
        } else {
            Some(
                Cholesky::new(current.to_dense()).ok_or_else(|| Error::NotSpd {
                    iter: 0,
                    curvature: f64::NAN,
                })?,
            )
        };
        Ok(Self {
            levels,
            coarse_factor,
            coarse_dim,
            sweeps: cfg.smoother_sweeps,
            weight: cfg.jacobi_weight,
        })
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len() + 1
    }

    fn cycle(&self, level: usize, b: &[f64], x: &mut [f64]) {
        if level == self.levels.len() {
            if let Some(chol) = &self.coarse_factor {
                let sol = chol.solve(&DVector::from_column_slice(b));
                x.copy_from_slice(sol.as_slice());
            }
            return;
        }
        let lv = &self.levels[level];
        let n = b.len();
        let mut r = vec![0.0; n];
        x.iter_mut().for_each(|v| *v = 0.0);
        self.smooth(lv, b, x, &mut r);

        lv.a.mul_vec_into(x, &mut r);
        for (ri, bi) in r.iter_mut().zip(b) {
            *ri = bi - *ri;
        }
        let rc = lv.prolong.tr_mul_vec(&r);
        let mut ec = vec![0.0; rc.len()];
        self.cycle(level + 1, &rc, &mut ec);
        let ef = lv.prolong.mul_vec(&ec);
        axpy(1.0, &ef, x);

        self.smooth(lv, b, x, &mut r);
    }

    fn smooth(&self, lv: &MgLevel, b: &[f64], x: &mut [f64], scratch: &mut [f64]) {
        for _ in 0..self.sweeps {
            lv.a.mul_vec_into(x, scratch);
            for i in 0..x.len() {
                x[i] += self.weight * lv.inv_diag[i] * (b[i] - scratch[i]);
            }
        }
    }
}

impl LinearOperator for MgPreconditioner {
    fn dim(&self) -> usize {
        self.levels
            .first()
            .map_or(self.coarse_dim, |lv| lv.a.rows())
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.cycle(0, x, y);
    }
}

/// Builds the configured preconditioner for `a` on the given hierarchy.
pub fn build_preconditioner(
    hier: &MeshHierarchy,
    a: &SparseMatrix,
    cfg: &LinearSolverConfig,
) -> Result<Box<dyn LinearOperator>> {
    Ok(match cfg.precond {
        Preconditioner::None => Box::new(IdentityOperator(a.rows())),
        Preconditioner::MgVcycle => Box::new(MgPreconditioner::new(hier, a, cfg)?),
    })
}

pub fn mg_vcycle_preconditioner(
    hier: &MeshHierarchy,
    a_fine: &SparseMatrix,
) -> Result<MgPreconditioner> {
    MgPreconditioner::new(hier, a_fine, &LinearSolverConfig::default())
}

/// Matrix-free `v ↦ A v + (1/β) Nᵀ Π_I W⁻¹ Π_I N v`. The explicit matrix is
/// never formed.
pub struct SchurOperator<'a> {
    a: &'a SparseMatrix,
    n: &'a SparseMatrix,
    /// `Π_I W⁻¹` as a vector: `1/W_ii` on inactive indices, 0 on active ones.
    masked_inv_w: Vec<f64>,
    inv_beta: f64,
}

impl<'a> SchurOperator<'a> {
    pub fn new(
        a: &'a SparseMatrix,
        n: &'a SparseMatrix,
        w_diag: &[f64],
        inactive: &[bool],
        beta: f64,
    ) -> Result<Self> {
        if beta <= 0.0 {
            return Err(Error::invalid("beta must be positive"));
        }
        if n.cols() != a.rows() || n.rows() != w_diag.len() || inactive.len() != w_diag.len() {
            return Err(Error::invalid("schur operator dimension mismatch"));
        }
        let masked_inv_w = w_diag
            .iter()
            .zip(inactive)
            .map(|(&w, &free)| if free { 1.0 / w } else { 0.0 })
            .collect();
        Ok(Self {
            a,
            n,
            masked_inv_w,
            inv_beta: 1.0 / beta,
        })
    }
}

pub fn schur_h_operator<'a>(
    a: &'a SparseMatrix,
    n: &'a SparseMatrix,
    w_diag: &[f64],
    inactive: &[bool],
    beta: f64,
) -> Result<SchurOperator<'a>> {
    SchurOperator::new(a, n, w_diag, inactive, beta)
}

impl LinearOperator for SchurOperator<'_> {
    fn dim(&self) -> usize {
        self.a.rows()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.a.mul_vec_into(x, y);
        let mut nv = self.n.mul_vec(x);
        for (v, s) in nv.iter_mut().zip(&self.masked_inv_w) {
            *v *= s * self.inv_beta;
        }
        let mut back = vec![0.0; y.len()];
        self.n.tr_mul_vec_into(&nv, &mut back);
        axpy(1.0, &back, y);
    }
}

/// Dense matrix of a linear operator, column by column. Test and
/// verification helper; O(n²) memory.
pub fn operator_to_dense(op: &dyn LinearOperator) -> DMatrix<f64> {
    let n = op.dim();
    let mut out = DMatrix::zeros(n, n);
    let mut e = vec![0.0; n];
    let mut col = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        op.apply(&e, &mut col);
        out.column_mut(j).copy_from_slice(&col);
        e[j] = 0.0;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_hierarchy, hierarchy_for};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn laplacian_5pt(n: usize) -> SparseMatrix {
        let m = n - 1;
        let mut trip = Vec::new();
        for j in 0..m {
            for i in 0..m {
                let k = j * m + i;
                trip.push((k, k, 4.0));
                if i > 0 {
                    trip.push((k, k - 1, -1.0));
                }
                if i + 1 < m {
                    trip.push((k, k + 1, -1.0));
                }
                if j > 0 {
                    trip.push((k, k - m, -1.0));
                }
                if j + 1 < m {
                    trip.push((k, k + m, -1.0));
                }
            }
        }
        SparseMatrix::from_triplets(m * m, m * m, &trip).unwrap()
    }

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn zero_rhs_gives_zero_without_iterating() {
        let a = laplacian_5pt(8);
        let mut x = vec![1.0; a.rows()];
        let out = pcg(
            &a,
            &vec![0.0; a.rows()],
            &IdentityOperator(a.rows()),
            &mut x,
            &LinearSolverConfig::default(),
        )
        .unwrap();
        assert_eq!(out.iters, 0);
        assert!(x.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_converges_in_one_iteration() {
        let a = SparseMatrix::identity(10);
        let b: Vec<f64> = (0..10).map(|i| i as f64 + 1.0).collect();
        let mut x = vec![0.0; 10];
        let out = pcg(
            &a,
            &b,
            &IdentityOperator(10),
            &mut x,
            &LinearSolverConfig::default(),
        )
        .unwrap();
        assert_eq!(out.iters, 1);
        assert!(x.iter().zip(&b).all(|(a, b)| (a - b).abs() < 1e-14));
    }

    #[test]
    fn indefinite_operator_detected() {
        let a = SparseMatrix::from_diagonal(&[1.0, -1.0]);
        let mut x = vec![0.0; 2];
        let err = pcg(
            &a,
            &[0.0, 1.0],
            &IdentityOperator(2),
            &mut x,
            &LinearSolverConfig::default(),
        );
        assert!(matches!(err, Err(Error::NotSpd { .. })));
    }

    #[test]
    fn iteration_cap_reports_residual() {
        let a = laplacian_5pt(16);
        let b = vec![1.0; a.rows()];
        let mut x = vec![0.0; a.rows()];
        let cfg = LinearSolverConfig {
            max_iters: 3,
            ..Default::default()
        };
        match pcg(&a, &b, &IdentityOperator(a.rows()), &mut x, &cfg) {
            Err(Error::SolverFailure {
                iters, residual, ..
            }) => {
                assert_eq!(iters, 3);
                assert!(residual > cfg.tol);
            }
            other => panic!("expected failure, got {other:?}"),
        }
        assert!(x.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn vcycle_is_symmetric_and_contracts() {
        let hier = build_hierarchy(4, 3).unwrap();
        let a = laplacian_5pt(16);
        let mg = mg_vcycle_preconditioner(&hier, &a).unwrap();
        assert_eq!(mg.num_levels(), 3);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = a.rows();
        for _ in 0..5 {
            let u = random_vec(&mut rng, n);
            let v = random_vec(&mut rng, n);
            let mut mu = vec![0.0; n];
            let mut mv = vec![0.0; n];
            mg.apply(&u, &mut mu);
            mg.apply(&v, &mut mv);
            assert!((dot(&mu, &v) - dot(&u, &mv)).abs() < 1e-10);

            let b = a.mul_vec(&u);
            let mut approx = vec![0.0; n];
            mg.apply(&b, &mut approx);
            let err: Vec<f64> = u.iter().zip(&approx).map(|(a, b)| a - b).collect();
            let a_norm = |w: &[f64]| dot(w, &a.mul_vec(w)).sqrt();
            assert!(a_norm(&err) < 0.5 * a_norm(&u));
        }
    }

    #[test]
    fn single_level_vcycle_is_exact_inverse() {
        let hier = build_hierarchy(6, 1).unwrap();
        let a = laplacian_5pt(6);
        let mg = mg_vcycle_preconditioner(&hier, &a).unwrap();
        let x: Vec<f64> = (0..a.rows()).map(|i| (i as f64).sin()).collect();
        let mut y = vec![0.0; a.rows()];
        mg.apply(&a.mul_vec(&x), &mut y);
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let hier = build_hierarchy(4, 2).unwrap();
        assert!(mg_vcycle_preconditioner(&hier, &laplacian_5pt(4)).is_err());
    }

    #[test]
    fn mg_pcg_on_laplacian() {
        let hier = hierarchy_for(16, 4).unwrap();
        let a = laplacian_5pt(16);
        let mg = mg_vcycle_preconditioner(&hier, &a).unwrap();
        let b = vec![1.0; a.rows()];
        let mut x = vec![0.0; a.rows()];
        let out = pcg(&a, &b, &mg, &mut x, &LinearSolverConfig::default()).unwrap();
        assert!(out.iters <= 30, "{} iterations", out.iters);
    }

    #[test]
    fn schur_operator_trivial_cases_reduce_to_a() {
        let a = laplacian_5pt(4);
        let nq = 25;
        let n = SparseMatrix::from_triplets(nq, a.rows(), &[(3, 1, 0.7), (12, 4, -0.2)]).unwrap();
        let w = vec![0.04; nq];
        let x: Vec<f64> = (0..a.rows()).map(|i| i as f64 - 3.0).collect();

        let all_active = vec![false; nq];
        let h = SchurOperator::new(&a, &n, &w, &all_active, 0.1).unwrap();
        let mut y = vec![0.0; a.rows()];
        h.apply(&x, &mut y);
        assert_eq!(y, a.mul_vec(&x));

        let zero_n = SparseMatrix::zeros(nq, a.rows());
        let h = SchurOperator::new(&a, &zero_n, &w, &vec![true; nq], 0.1).unwrap();
        h.apply(&x, &mut y);
        assert_eq!(y, a.mul_vec(&x));
    }

    #[test]
    fn linearity_of_schur_operator() {
        let a = laplacian_5pt(4);
        let nq = 25;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let trip: Vec<_> = (0..40)
            .map(|_| {
                (
                    rng.random_range(0..nq),
                    rng.random_range(0..a.rows()),
                    rng.random_range(-1.0..1.0),
                )
            })
            .collect();
        let n = SparseMatrix::from_triplets(nq, a.rows(), &trip).unwrap();
        let w: Vec<f64> = (0..nq).map(|_| rng.random_range(0.5..1.5)).collect();
        let inactive: Vec<bool> = (0..nq).map(|i| i % 3 != 0).collect();
        let h = SchurOperator::new(&a, &n, &w, &inactive, 0.3).unwrap();
        let x = random_vec(&mut rng, a.rows());
        let z = random_vec(&mut rng, a.rows());
        let (al, be) = (1.7, -0.4);
        let comb: Vec<f64> = x.iter().zip(&z).map(|(p, q)| al * p + be * q).collect();
        let mut hx = vec![0.0; a.rows()];
        let mut hz = vec![0.0; a.rows()];
        let mut hc = vec![0.0; a.rows()];
        h.apply(&x, &mut hx);
        h.apply(&z, &mut hz);
        h.apply(&comb, &mut hc);
        let scale = norm2(&hc);
        for i in 0..a.rows() {
            assert!((hc[i] - al * hx[i] - be * hz[i]).abs() <= 1e-12 * scale);
        }
        let dense = operator_to_dense(&h);
        assert!((&dense - dense.transpose()).amax() < 1e-10);
    }
}
