//! Active-set Newton solver for the box-constrained coefficient subproblem
//!
//! ```text
//! min_q  J(q) + β/2 ‖q − p + λ/β‖²_M + β/2 ‖q − q_k‖²_{W−M}   s.t. a0 ≤ q ≤ a1
//! ```
//!
//! Each Newton step solves the expanded system
//!
//! ```text
//! [  A   Nᵀ   0  ] [ r  ]   [ d1 ]
//! [ −N   βW   Pᵀ ] [ δq ] = [ d2 ]
//! [  0   P    0  ] [ η_A]   [ d3 ]
//! ```
//!
//! through its factorization `L C R`, so the only non-diagonal solve is the
//! SPD Schur complement `H = A + (1/β) Nᵀ Π_I W⁻¹ Π_I N`, done by PCG with the
//! multigrid preconditioner of `A`.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::assembly::{assemble_n, assemble_stiffness, gradient_j, Observation, StateSolver};
use crate::error::{Error, Result};
use crate::linsolve::{
    build_preconditioner, pcg, LinearOperator, LinearSolverConfig, SchurOperator,
};
use crate::mesh::{interior_gradients, Mesh, Vec2};
use crate::sparse::SparseMatrix;
use crate::timing::{Subtask, Timings};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxBounds {
    pub a0: f64,
    pub a1: f64,
}

impl BoxBounds {
    pub fn new(a0: f64, a1: f64) -> Result<Self> {
        let b = Self { a0, a1 };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a0 > 0.0 && self.a0 < self.a1) {
            return Err(Error::invalid(format!(
                "bounds must satisfy 0 < a0 < a1, got a0 = {}, a1 = {}",
                self.a0, self.a1
            )));
        }
        Ok(())
    }
}

impl Default for BoxBounds {
    fn default() -> Self {
        Self { a0: 0.1, a1: 5.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Membership {
    Upper,
    Lower,
    Inactive,
}

/// Partition of the nodes into predicted upper-active, lower-active and
/// inactive indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActiveSets {
    membership: Vec<Membership>,
}

impl ActiveSets {
    pub fn from_membership(membership: Vec<Membership>) -> Self {
        Self { membership }
    }

    pub fn membership(&self) -> &[Membership] {
        &self.membership
    }

    pub fn len(&self) -> usize {
        self.membership.len()
    }

    pub fn is_empty(&self) -> bool {
        self.membership.is_empty()
    }

    fn indices(&self, which: Membership) -> Vec<usize> {
        self.membership
            .iter()
            .enumerate()
            .filter(|(_, &m)| m == which)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn plus(&self) -> Vec<usize> {
        self.indices(Membership::Upper)
    }

    pub fn minus(&self) -> Vec<usize> {
        self.indices(Membership::Lower)
    }

    pub fn inactive(&self) -> Vec<usize> {
        self.indices(Membership::Inactive)
    }

    /// Active indices (upper and lower) in increasing order; this is the row
    /// order of the selection matrix P_A.
    pub fn active(&self) -> Vec<usize> {
        self.membership
            .iter()
            .enumerate()
            .filter(|(_, &m)| m != Membership::Inactive)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn inactive_mask(&self) -> Vec<bool> {
        self.membership
            .iter()
            .map(|&m| m == Membership::Inactive)
            .collect()
    }
}

/// `A⁺ = {η + c(q − a1) > 0}`, `A⁻ = {η + c(q − a0) < 0}`; an index meeting
/// both predicates goes to `A⁺`.
pub fn active_sets(q: &[f64], eta: &[f64], bounds: &BoxBounds, c: f64) -> ActiveSets {
    let membership = q
        .iter()
        .zip(eta)
        .map(|(&qi, &ei)| {
            if ei + c * (qi - bounds.a1) > 0.0 {
                Membership::Upper
            } else if ei + c * (qi - bounds.a0) < 0.0 {
                Membership::Lower
            } else {
                Membership::Inactive
            }
        })
        .collect();
    ActiveSets { membership }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NewtonConfig {
    /// Complementarity scale; `None` means c = β.
    pub c: Option<f64>,
    /// KKT residual tolerance.
    pub tol: f64,
    pub max_inner: usize,
    /// Positivity floor applied after every step.
    pub eps_clamp: f64,
    /// PCG tolerance for the Schur complement system.
    pub h_tol: f64,
    pub h_max_iters: usize,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self {
            c: None,
            tol: 1e-3,
            max_inner: 10,
            eps_clamp: 1e-3,
            h_tol: 1e-5,
            h_max_iters: 1000,
        }
    }
}

impl NewtonConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(c) = self.c {
            if !(c > 0.0) {
                return Err(Error::invalid("complementarity scale c must be positive"));
            }
        }
        if !(self.tol > 0.0 && self.eps_clamp > 0.0 && self.h_tol > 0.0 && self.h_tol < 1.0) {
            return Err(Error::invalid(
                "newton tolerances must be positive (h_tol < 1)",
            ));
        }
        if self.max_inner == 0 || self.h_max_iters == 0 {
            return Err(Error::invalid("newton iteration caps must be at least 1"));
        }
        Ok(())
    }
}

/// The outer ADMM data that defines one coefficient subproblem.
#[derive(Debug, Clone, Copy)]
pub struct OuterIterate<'a> {
    pub q_k: &'a [f64],
    pub p_k: &'a [f64],
    pub lambda_k: &'a [f64],
    pub beta: f64,
}

impl OuterIterate<'_> {
    /// `M (q_k − p_k + λ_k/β)`, shared by every inner iteration.
    pub fn mass_center(&self, mass: &SparseMatrix) -> Vec<f64> {
        let center: Vec<f64> = self
            .q_k
            .iter()
            .zip(self.p_k)
            .zip(self.lambda_k)
            .map(|((q, p), l)| q - p + l / self.beta)
            .collect();
        mass.mul_vec(&center)
    }
}

#[derive(Debug, Clone)]
pub struct KktResidual {
    pub error1: Vec<f64>,
    pub error2: Vec<f64>,
    /// `max(‖error1‖_{W⁻¹}, ‖error2‖)`
    pub norm: f64,
}

/// KKT residual of the proximally regularized subproblem at `(q, η)`.
///
/// `error1 = −J'(q) − βW(q − q_k) − βM(q_k − p_k + λ_k/β) − η` vanishes at
/// stationarity with η ≥ 0 on the upper bound and η ≤ 0 on the lower one;
/// `error2` is the complementarity function.
#[allow(clippy::too_many_arguments)]
pub fn kkt_residual(
    q: &[f64],
    eta: &[f64],
    outer: &OuterIterate<'_>,
    grad_j: &[f64],
    mass: &SparseMatrix,
    w_diag: &[f64],
    bounds: &BoxBounds,
    c: f64,
) -> KktResidual {
    let mc = outer.mass_center(mass);
    kkt_residual_with_center(q, eta, outer, grad_j, &mc, w_diag, bounds, c)
}

#[allow(clippy::too_many_arguments)]
fn kkt_residual_with_center(
    q: &[f64],
    eta: &[f64],
    outer: &OuterIterate<'_>,
    grad_j: &[f64],
    mass_center: &[f64],
    w_diag: &[f64],
    bounds: &BoxBounds,
    c: f64,
) -> KktResidual {
    let beta = outer.beta;
    let n = q.len();
    let mut error1 = vec![0.0; n];
    let mut error2 = vec![0.0; n];
    let mut e1_sq = 0.0;
    let mut e2_sq = 0.0;
    for i in 0..n {
        let e1 =
            -grad_j[i] - beta * w_diag[i] * (q[i] - outer.q_k[i]) - beta * mass_center[i] - eta[i];
        let e2 = eta[i]
            - (eta[i] + c * (q[i] - bounds.a1)).max(0.0)
            - (eta[i] + c * (q[i] - bounds.a0)).min(0.0);
        e1_sq += e1 * e1 / w_diag[i];
        e2_sq += e2 * e2;
        error1[i] = e1;
        error2[i] = e2;
    }
    KktResidual {
        error1,
        error2,
        norm: e1_sq.sqrt().max(e2_sq.sqrt()),
    }
}

/// Matrices of one Newton system.
pub struct NewtonSystem<'a> {
    pub a: &'a SparseMatrix,
    pub n: &'a SparseMatrix,
    pub w_diag: &'a [f64],
    pub beta: f64,
}

#[derive(Debug, Clone)]
pub struct NewtonStep {
    pub dq: Vec<f64>,
    /// Multipliers on the active indices, in `ActiveSets::active()` order.
    pub eta_active: Vec<f64>,
    pub pcg_iters: usize,
}

/// Solves `F̂ (r, δq, η_A) = (d1, d2, d3)` by `R⁻¹ C⁻¹ L⁻¹`. `r` carries the
/// warm start for the Schur complement solve in and its solution out.
#[allow(clippy::too_many_arguments)]
pub fn newton_step(
    sys: &NewtonSystem<'_>,
    sets: &ActiveSets,
    d1: &[f64],
    d2: &[f64],
    d3: &[f64],
    precond: &dyn LinearOperator,
    r: &mut [f64],
    lin: &LinearSolverConfig,
) -> Result<NewtonStep> {
    let nq = sys.w_diag.len();
    let nu = sys.a.rows();
    let active = sets.active();
    if d1.len() != nu
        || d2.len() != nq
        || d3.len() != active.len()
        || sets.len() != nq
        || r.len() != nu
    {
        return Err(Error::invalid("newton system dimension mismatch"));
    }
    let beta = sys.beta;
    let inv_beta = 1.0 / beta;
    let w = sys.w_diag;

    // L⁻¹
    let y2 = d2;
    let y3: Vec<f64> = active
        .iter()
        .zip(d3)
        .map(|(&i, &d)| d - inv_beta * y2[i] / w[i])
        .collect();
    let mut rhs_q: Vec<f64> = y2.iter().zip(w).map(|(y, wi)| inv_beta * y / wi).collect();
    for (&i, &y) in active.iter().zip(&y3) {
        rhs_q[i] += y;
    }
    let back = sys.n.tr_mul_vec(&rhs_q);
    let y1: Vec<f64> = d1.iter().zip(&back).map(|(d, b)| d - b).collect();

    // C⁻¹
    let h = SchurOperator::new(sys.a, sys.n, w, &sets.inactive_mask(), beta)?;
    let pcg_iters = pcg(&h, &y1, precond, r, lin)
        .map_err(|e| match e {
            Error::SolverFailure {
                iters, residual, ..
            } => Error::SolverFailure {
                what: "schur complement system".into(),
                iters,
                residual,
            },
            other => other,
        })?
        .iters;
    let z2: Vec<f64> = y2.iter().zip(w).map(|(y, wi)| y / (beta * wi)).collect();
    let z3: Vec<f64> = active
        .iter()
        .zip(&y3)
        .map(|(&i, &y)| -beta * w[i] * y)
        .collect();

    // R⁻¹
    let nr = sys.n.mul_vec(r);
    let eta_active: Vec<f64> = active.iter().zip(&z3).map(|(&i, &z)| z + nr[i]).collect();
    let mut dq: Vec<f64> = (0..nq).map(|i| z2[i] + inv_beta * nr[i] / w[i]).collect();
    for (&i, &x3) in active.iter().zip(&eta_active) {
        dq[i] -= inv_beta * x3 / w[i];
    }
    Ok(NewtonStep {
        dq,
        eta_active,
        pcg_iters,
    })
}

#[derive(Debug, Clone)]
pub struct QSubResult {
    pub q_new: Vec<f64>,
    pub eta: Vec<f64>,
    pub inner_iters: usize,
    pub pcg_iters_state: usize,
    pub pcg_iters_h: usize,
    pub kkt_norm: f64,
    pub converged: bool,
}

/// State quantities at one coefficient: stiffness, its preconditioner, the
/// state solution and the derived gradients.
struct StateAt {
    q: Vec<f64>,
    a: SparseMatrix,
    precond: Box<dyn LinearOperator>,
    u: Vec<f64>,
    grad_u: Vec<Vec2>,
    grad_j: Vec<f64>,
}

/// Solver for the coefficient subproblem. Holds the fixed discretization
/// data and the warm starts carried between calls.
pub struct QSolver<'m> {
    mesh: &'m Mesh,
    obs: Observation,
    load: Vec<f64>,
    mass: SparseMatrix,
    w_diag: Vec<f64>,
    bounds: BoxBounds,
    cfg: NewtonConfig,
    state_solver: StateSolver,
    current: Option<StateAt>,
    r_warm: Vec<f64>,
    pub timings: Timings,
}

impl<'m> QSolver<'m> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        mesh: &'m Mesh,
        obs: Observation,
        load: Vec<f64>,
        mass: SparseMatrix,
        w_diag: Vec<f64>,
        bounds: BoxBounds,
        cfg: NewtonConfig,
        lin_state: LinearSolverConfig,
    ) -> Result<Self> {
        bounds.validate()?;
        cfg.validate()?;
        if obs.grads.len() != mesh.num_triangles() || load.len() != mesh.num_interior() {
            return Err(Error::invalid(
                "observation or load does not match the mesh",
            ));
        }
        let state_solver = StateSolver::new(mesh, lin_state)?;
        Ok(Self {
            mesh,
            obs,
            load,
            mass,
            w_diag,
            bounds,
            cfg,
            state_solver,
            current: None,
            r_warm: vec![0.0; mesh.num_interior()],
            timings: Timings::default(),
        })
    }

    pub fn mass(&self) -> &SparseMatrix {
        &self.mass
    }

    pub fn w_diag(&self) -> &[f64] {
        &self.w_diag
    }

    pub fn bounds(&self) -> &BoxBounds {
        &self.bounds
    }

    pub fn config(&self) -> &NewtonConfig {
        &self.cfg
    }

    /// State solution (interior) at the most recent coefficient.
    pub fn current_state(&self) -> Option<&[f64]> {
        self.current.as_ref().map(|s| s.u.as_slice())
    }

    pub fn current_grad_u(&self) -> Option<&[Vec2]> {
        self.current.as_ref().map(|s| s.grad_u.as_slice())
    }

    /// Assembles A(q), solves the state equation (warm started from the last
    /// state) and evaluates J'(q). Returns the PCG iteration count.
    fn update_state(&mut self, q: &[f64]) -> Result<usize> {
        if let Some(cur) = &self.current {
            if cur.q == q {
                return Ok(0);
            }
        }
        let t0 = Instant::now();
        let a = assemble_stiffness(self.mesh, q)?;
        self.timings.add(Subtask::AAssembly, t0.elapsed());

        let t0 = Instant::now();
        let precond = build_preconditioner(
            self.state_solver.hierarchy(),
            &a,
            self.state_solver.config(),
        )?;
        let mut u = match self.current.take() {
            Some(prev) => prev.u,
            None => vec![0.0; self.mesh.num_interior()],
        };
        let out = pcg(
            &a,
            &self.load,
            precond.as_ref(),
            &mut u,
            self.state_solver.config(),
        )
        .map_err(|e| match e {
            Error::SolverFailure {
                iters, residual, ..
            } => Error::SolverFailure {
                what: "state equation".into(),
                iters,
                residual,
            },
            other => other,
        })?;
        self.timings.add(Subtask::StateSystem, t0.elapsed());

        let grad_u = interior_gradients(self.mesh, &u)?;
        let grad_j = gradient_j(self.mesh, &grad_u, &self.obs)?;
        self.current = Some(StateAt {
            q: q.to_vec(),
            a,
            precond,
            u,
            grad_u,
            grad_j,
        });
        Ok(out.iters)
    }

    /// Runs the active-set Newton loop from `q_k` with multiplier estimate
    /// `eta0`.
    pub fn solve(&mut self, outer: &OuterIterate<'_>, eta0: &[f64]) -> Result<QSubResult> {
        let nq = self.mesh.num_nodes();
        if outer.q_k.len() != nq
            || outer.p_k.len() != nq
            || outer.lambda_k.len() != nq
            || eta0.len() != nq
        {
            return Err(Error::invalid(
                "subproblem vectors must have one entry per node",
            ));
        }
        if !(outer.beta > 0.0) {
            return Err(Error::invalid("beta must be positive"));
        }
        if let Some(i) = outer.q_k.iter().position(|&v| !(v > 0.0)) {
            return Err(Error::invalid(format!(
                "q_k must be positive, q_k[{i}] = {}",
                outer.q_k[i]
            )));
        }
        let beta = outer.beta;
        let c = self.cfg.c.unwrap_or(beta);
        let mass_center = outer.mass_center(&self.mass);

        let mut pcg_state = self.update_state(outer.q_k)?;
        let mut pcg_h = 0;
        let mut q = outer.q_k.to_vec();
        let mut eta = eta0.to_vec();
        let mut kkt_norm = f64::INFINITY;
        let mut converged = false;
        let mut m = 0;

        while m < self.cfg.max_inner {
            let sets = active_sets(&q, &eta, &self.bounds, c);
            let state = self.current.as_ref().expect("state computed above");

            let t0 = Instant::now();
            let n_mat = assemble_n(self.mesh, &state.grad_u)?;
            self.timings.add(Subtask::NAssembly, t0.elapsed());

            let d1 = vec![0.0; self.mesh.num_interior()];
            let d2: Vec<f64> = (0..nq)
                .map(|i| {
                    -state.grad_j[i]
                        - beta * self.w_diag[i] * (q[i] - outer.q_k[i])
                        - beta * mass_center[i]
                })
                .collect();
            let active = sets.active();
            let d3: Vec<f64> = active
                .iter()
                .map(|&i| match sets.membership()[i] {
                    Membership::Upper => self.bounds.a1 - q[i],
                    _ => self.bounds.a0 - q[i],
                })
                .collect();

            let t0 = Instant::now();
            let lin_h = LinearSolverConfig {
                tol: self.cfg.h_tol,
                max_iters: self.cfg.h_max_iters,
                ..self.state_solver.config().clone()
            };
            let sys = NewtonSystem {
                a: &state.a,
                n: &n_mat,
                w_diag: &self.w_diag,
                beta,
            };
            let step = newton_step(
                &sys,
                &sets,
                &d1,
                &d2,
                &d3,
                state.precond.as_ref(),
                &mut self.r_warm,
                &lin_h,
            )?;
            self.timings.add(Subtask::HSystem, t0.elapsed());
            pcg_h += step.pcg_iters;

            eta.iter_mut().for_each(|e| *e = 0.0);
            for (&i, &e) in active.iter().zip(&step.eta_active) {
                eta[i] = e;
            }
            for (qi, dqi) in q.iter_mut().zip(&step.dq) {
                *qi = (*qi + dqi).max(self.cfg.eps_clamp);
            }
            m += 1;

            pcg_state += self.update_state(&q)?;
            let state = self.current.as_ref().expect("state computed above");
            let kkt = kkt_residual_with_center(
                &q,
                &eta,
                outer,
                &state.grad_j,
                &mass_center,
                &self.w_diag,
                &self.bounds,
                c,
            );
            kkt_norm = kkt.norm;
            if kkt_norm < self.cfg.tol {
                converged = true;
                break;
            }
        }

        Ok(QSubResult {
            q_new: q,
            eta,
            inner_iters: m,
            pcg_iters_state: pcg_state,
            pcg_iters_h: pcg_h,
            kkt_norm,
            converged,
        })
    }
}
