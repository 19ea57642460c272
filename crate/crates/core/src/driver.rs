//! ADMM outer loop:
//!
//! ```text
//! q^{k+1} = argmin_{a0 ≤ q ≤ a1} J(q) + β/2‖q − p^k + λ^k/β‖²_M + β/2‖q − q^k‖²_{W−M}
//! p^{k+1} = D(q^{k+1} + λ^k/β)
//! λ^{k+1} = λ^k + β(q^{k+1} − p^{k+1})
//! ```

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::assembly::{assemble_load, assemble_mass, lumped_mass, Observation, Source};
use crate::error::{Error, Result};
use crate::linsolve::LinearSolverConfig;
use crate::mesh::{Mesh, Vec2};
use crate::problems::norm_h;
use crate::psolver::{DenoiserSpec, PSolver};
use crate::qsolver::{BoxBounds, NewtonConfig, OuterIterate, QSolver};
use crate::sparse::{dot, SparseMatrix};
use crate::timing::{Subtask, Timings};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdmmConfig {
    pub beta: f64,
    pub outer_iters: usize,
    /// Stop once `‖q − p‖_M` falls below this value; off when absent.
    pub primal_tol: Option<f64>,
    pub bounds: BoxBounds,
    pub denoiser: DenoiserSpec,
    pub newton: NewtonConfig,
    pub lin_state: LinearSolverConfig,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        Self {
            beta: 0.1,
            outer_iters: 50,
            primal_tol: None,
            bounds: BoxBounds::default(),
            denoiser: DenoiserSpec::default(),
            newton: NewtonConfig::default(),
            lin_state: LinearSolverConfig::with_tol(1e-10),
        }
    }
}

impl AdmmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(Error::invalid("beta must be positive"));
        }
        if let Some(t) = self.primal_tol {
            if !(t > 0.0) {
                return Err(Error::invalid("primal_tol must be positive"));
            }
        }
        self.bounds.validate()?;
        self.denoiser.validate()?;
        self.newton.validate()?;
        self.lin_state.validate()
    }
}

/// One line of the iteration history.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterRecord {
    pub iter: usize,
    pub kkt_norm: f64,
    pub newton_steps: usize,
    pub newton_converged: bool,
    pub pcg_state: usize,
    pub pcg_h: usize,
    pub primal_residual: f64,
    pub rel_error: Option<f64>,
    pub grad_misfit: Option<f64>,
    pub wall_ms: f64,
}

#[derive(Debug, Clone)]
pub struct AdmmState {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub lambda: Vec<f64>,
    pub eta: Vec<f64>,
    pub k: usize,
    pub history: Vec<IterRecord>,
}

/// `q⁰ = 1`, `p⁰ = 0`, `λ⁰ = 0`, `η⁰ = 0`.
pub fn admm_init(mesh: &Mesh) -> AdmmState {
    let n = mesh.num_nodes();
    AdmmState {
        q: vec![1.0; n],
        p: vec![0.0; n],
        lambda: vec![0.0; n],
        eta: vec![0.0; n],
        k: 0,
        history: Vec::new(),
    }
}

/// Known ground truth used only for reporting.
#[derive(Debug, Clone, Default)]
pub struct Reference {
    pub q_true: Option<Vec<f64>>,
    /// Noise-free state gradient `∇u_h`.
    pub clean_grads: Option<Vec<Vec2>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Metrics {
    pub rel_error: Option<f64>,
    pub grad_misfit: Option<f64>,
}

/// `‖v‖_M`
pub fn mass_norm(mass: &SparseMatrix, v: &[f64]) -> f64 {
    dot(v, &mass.mul_vec(v)).max(0.0).sqrt()
}

/// `rel_error = ‖q − q_true‖_M / ‖q_true‖_M`, `grad_misfit = ‖∇U(q) − ∇u_h‖_h`.
pub fn compute_metrics(
    mesh: &Mesh,
    mass: &SparseMatrix,
    q: &[f64],
    grad_u: Option<&[Vec2]>,
    reference: &Reference,
) -> Metrics {
    let rel_error = reference.q_true.as_ref().map(|t| {
        let diff: Vec<f64> = q.iter().zip(t).map(|(a, b)| a - b).collect();
        mass_norm(mass, &diff) / mass_norm(mass, t)
    });
    let grad_misfit = match (grad_u, &reference.clean_grads) {
        (Some(g), Some(c)) => {
            let diff: Vec<Vec2> = g
                .iter()
                .zip(c)
                .map(|(a, b)| [a[0] - b[0], a[1] - b[1]])
                .collect();
            Some(norm_h(mesh, &diff))
        }
        _ => None,
    };
    Metrics {
        rel_error,
        grad_misfit,
    }
}

/// An ADMM run in progress.
pub struct Admm<'m> {
    mesh: &'m Mesh,
    cfg: AdmmConfig,
    qsolver: QSolver<'m>,
    psolver: PSolver,
    reference: Reference,
    pub state: AdmmState,
    solve_time: Duration,
}

impl<'m> Admm<'m> {
    pub fn new(
        mesh: &'m Mesh,
        obs: Observation,
        source: &Source,
        cfg: AdmmConfig,
        reference: Reference,
    ) -> Result<Self> {
        cfg.validate()?;
        let mass = assemble_mass(mesh);
        let w_diag = lumped_mass(&mass).diagonal();
        let load = assemble_load(mesh, source)?;
        let qsolver = QSolver::new(
            mesh,
            obs,
            load,
            mass,
            w_diag,
            cfg.bounds,
            cfg.newton.clone(),
            cfg.lin_state.clone(),
        )?;
        let psolver = PSolver::new(cfg.denoiser.clone(), cfg.bounds)?;
        Ok(Self {
            mesh,
            state: admm_init(mesh),
            cfg,
            qsolver,
            psolver,
            reference,
            solve_time: Duration::ZERO,
        })
    }

    pub fn config(&self) -> &AdmmConfig {
        &self.cfg
    }

    pub fn mass(&self) -> &SparseMatrix {
        self.qsolver.mass()
    }

    pub fn timings(&self) -> &Timings {
        &self.qsolver.timings
    }

    /// Wall-clock time spent inside `iterate`.
    pub fn solve_time(&self) -> Duration {
        self.solve_time
    }

    pub fn current_grad_u(&self) -> Option<&[Vec2]> {
        self.qsolver.current_grad_u()
    }

    pub fn metrics(&self) -> Metrics {
        compute_metrics(
            self.mesh,
            self.qsolver.mass(),
            &self.state.q,
            self.qsolver.current_grad_u(),
            &self.reference,
        )
    }

    /// One outer iteration; returns its history record.
    pub fn iterate(&mut self) -> Result<&IterRecord> {
        let start = Instant::now();
        let k = self.state.k;
        let beta = self.cfg.beta;
        let at = |e: Error| Error::AtIteration {
            iter: k + 1,
            source: Box::new(e),
        };

        let outer = OuterIterate {
            q_k: &self.state.q,
            p_k: &self.state.p,
            lambda_k: &self.state.lambda,
            beta,
        };
        let qres = self.qsolver.solve(&outer, &self.state.eta).map_err(at)?;

        let t0 = Instant::now();
        let p = self
            .psolver
            .solve(&qres.q_new, &self.state.lambda, beta)
            .map_err(at)?;
        self.qsolver.timings.add(Subtask::PSubproblem, t0.elapsed());

        for ((l, q), pi) in self.state.lambda.iter_mut().zip(&qres.q_new).zip(&p) {
            *l += beta * (q - pi);
        }
        self.state.q = qres.q_new;
        self.state.p = p;
        self.state.eta = qres.eta;
        self.state.k += 1;

        let gap: Vec<f64> = self
            .state
            .q
            .iter()
            .zip(&self.state.p)
            .map(|(a, b)| a - b)
            .collect();
        let primal_residual = mass_norm(self.qsolver.mass(), &gap);
        let metrics = self.metrics();
        let elapsed = start.elapsed();
        self.solve_time += elapsed;
        self.state.history.push(IterRecord {
            iter: self.state.k,
            kkt_norm: qres.kkt_norm,
            newton_steps: qres.inner_iters,
            newton_converged: qres.converged,
            pcg_state: qres.pcg_iters_state,
            pcg_h: qres.pcg_iters_h,
            primal_residual,
            rel_error: metrics.rel_error,
            grad_misfit: metrics.grad_misfit,
            wall_ms: elapsed.as_secs_f64() * 1e3,
        });
        Ok(self.state.history.last().expect("record pushed above"))
    }

    /// Runs the configured number of outer iterations, or fewer when the
    /// optional primal tolerance is met.
    pub fn run(&mut self) -> Result<()> {
        while self.state.k < self.cfg.outer_iters {
            let res = self.iterate()?.primal_residual;
            if self.cfg.primal_tol.is_some_and(|t| res < t) {
                break;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub state: AdmmState,
    pub timings: Timings,
    pub solve_time: Duration,
}

/// Full run from the standard initial guess.
pub fn run(
    mesh: &Mesh,
    obs: Observation,
    source: &Source,
    cfg: AdmmConfig,
    reference: Reference,
) -> Result<RunOutput> {
    let mut admm = Admm::new(mesh, obs, source, cfg, reference)?;
    admm.run()?;
    Ok(RunOutput {
        timings: admm.timings().clone(),
        solve_time: admm.solve_time(),
        state: admm.state,
    })
}
