//! Self-verification battery run by `coeffid check`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::assembly::{
    assemble_load, assemble_mass, assemble_n, assemble_stiffness, energy_j, forward_solve,
    gradient_j, lumped_mass, Observation, Source,
};
use crate::error::Result;
use crate::linsolve::{pcg, IdentityOperator, LinearSolverConfig};
use crate::mesh::{build_uniform_mesh, interior_gradients, Mesh};
use crate::problems::{example2_q, generate_observation};
use crate::psolver::{prox_tv_grid, rof_objective, DualField};
use crate::qsolver::{ActiveSets, Membership, NewtonSystem};
use crate::sparse::SparseMatrix;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckConfig {
    pub n: usize,
    pub seed: u64,
    pub fd_step: f64,
    pub gradient_tol: f64,
    pub hessian_tol: f64,
    pub hessian_directions: usize,
    pub factorization_tol: f64,
    pub newton_residual_tol: f64,
    pub prox_tol: f64,
    pub prox_samples: usize,
    /// Negative control: perturbs the analytic gradient before comparison.
    pub corrupt_gradient: bool,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self {
            n: 4,
            seed: 7,
            fd_step: 1e-5,
            gradient_tol: 1e-5,
            hessian_tol: 1e-4,
            hessian_directions: 5,
            factorization_tol: 1e-12,
            newton_residual_tol: 1e-8,
            prox_tol: 1e-8,
            prox_samples: 20,
            corrupt_gradient: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub measured: f64,
    pub tolerance: f64,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.measured.is_finite() && self.measured <= self.tolerance
    }
}

/// State-dependent quantities at one coefficient, solved to tight tolerance.
pub struct Probe {
    pub mesh: Mesh,
    pub obs: Observation,
    pub load: Vec<f64>,
    pub lin: LinearSolverConfig,
}

impl Probe {
    /// Noise-free Example-2 data on an `n` mesh.
    pub fn example2(n: usize) -> Result<Self> {
        let mesh = build_uniform_mesh(n)?;
        let lin = LinearSolverConfig::with_tol(1e-13);
        let q_true = mesh.interpolate(example2_q);
        let (obs, _) = generate_observation(&mesh, &q_true, 10.0, 0.0, 0, &lin)?;
        let load = assemble_load(&mesh, &Source::Constant(10.0))?;
        Ok(Self {
            mesh,
            obs,
            load,
            lin,
        })
    }

    pub fn state(&self, q: &[f64]) -> Result<Vec<f64>> {
        Ok(forward_solve(&self.mesh, q, &self.load, &self.lin)?.0)
    }

    pub fn energy(&self, q: &[f64]) -> Result<f64> {
        energy_j(&self.mesh, q, &self.state(q)?, &self.obs)
    }

    pub fn gradient(&self, q: &[f64]) -> Result<Vec<f64>> {
        let gu = interior_gradients(&self.mesh, &self.state(q)?)?;
        gradient_j(&self.mesh, &gu, &self.obs)
    }

    /// `S δq = −N r` with `A r = −Nᵀ δq`.
    pub fn hessian_action(&self, q: &[f64], dq: &[f64]) -> Result<Vec<f64>> {
        let gu = interior_gradients(&self.mesh, &self.state(q)?)?;
        let n = assemble_n(&self.mesh, &gu)?;
        let a = assemble_stiffness(&self.mesh, q)?;
        let rhs: Vec<f64> = n.tr_mul_vec(dq).iter().map(|v| -v).collect();
        let mut r = vec![0.0; rhs.len()];
        pcg(&a, &rhs, &IdentityOperator(rhs.len()), &mut r, &self.lin)?;
        Ok(n.mul_vec(&r).iter().map(|v| -v).collect())
    }
}

/// A coefficient away from the truth, inside the default box.
pub fn probe_coefficient(mesh: &Mesh) -> Vec<f64> {
    mesh.nodes()
        .iter()
        .map(|&[x, y]| 1.3 + 0.4 * (3.0 * x).sin() * (2.0 * y + 0.5).cos())
        .collect()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Largest node-wise deviation between `J'` and central differences of `J`,
/// relative to `‖J'‖∞`.
pub fn gradient_check(probe: &Probe, q: &[f64], step: f64, corrupt: bool) -> Result<f64> {
    let mut g = probe.gradient(q)?;
    if corrupt {
        for (i, v) in g.iter_mut().enumerate() {
            *v *= 1.0 + 1e-2 * ((i % 3) as f64 - 1.0);
        }
    }
    let mut worst: f64 = 0.0;
    let mut qp = q.to_vec();
    for i in 0..q.len() {
        qp[i] = q[i] + step;
        let jp = probe.energy(&qp)?;
        qp[i] = q[i] - step;
        let jm = probe.energy(&qp)?;
        qp[i] = q[i];
        worst = worst.max((g[i] - (jp - jm) / (2.0 * step)).abs());
    }
    Ok(worst / max_abs(&g))
}

/// Worst relative deviation of the Hessian action from central differences
/// of `J'` over random directions.
pub fn hessian_check(probe: &Probe, q: &[f64], step: f64, dirs: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..dirs {
        let d: Vec<f64> = (0..q.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let s = probe.hessian_action(q, &d)?;
        let qp: Vec<f64> = q.iter().zip(&d).map(|(a, b)| a + step * b).collect();
        let qm: Vec<f64> = q.iter().zip(&d).map(|(a, b)| a - step * b).collect();
        let gp = probe.gradient(&qp)?;
        let gm = probe.gradient(&qm)?;
        let fd: Vec<f64> = gp
            .iter()
            .zip(&gm)
            .map(|(a, b)| (a - b) / (2.0 * step))
            .collect();
        let diff: Vec<f64> = s.iter().zip(&fd).map(|(a, b)| a - b).collect();
        worst = worst.max(norm(&diff) / norm(&fd));
    }
    Ok(worst)
}

fn selection(active: &[usize], nq: usize) -> DMatrix<f64> {
    let mut p = DMatrix::zeros(active.len(), nq);
    for (r, &i) in active.iter().enumerate() {
        p[(r, i)] = 1.0;
    }
    p
}

fn place(dst: &mut DMatrix<f64>, r0: usize, c0: usize, block: &DMatrix<f64>) {
    dst.view_mut((r0, c0), block.shape()).copy_from(block);
}

/// Dense `F̂` with blocks `[A Nᵀ 0; −N βW Pᵀ; 0 P 0]`.
pub fn dense_f_hat(sys: &NewtonSystem<'_>, sets: &ActiveSets) -> DMatrix<f64> {
    let (nu, nq) = (sys.a.rows(), sys.w_diag.len());
    let active = sets.active();
    let na = active.len();
    let p = selection(&active, nq);
    let n = sys.n.to_dense();
    let w = DMatrix::from_diagonal(&DVector::from_column_slice(sys.w_diag));
    let mut f = DMatrix::zeros(nu + nq + na, nu + nq + na);
    place(&mut f, 0, 0, &sys.a.to_dense());
    place(&mut f, 0, nu, &n.transpose());
    place(&mut f, nu, 0, &(-&n));
    place(&mut f, nu, nu, &(w * sys.beta));
    place(&mut f, nu, nu + nq, &p.transpose());
    place(&mut f, nu + nq, nu, &p);
    f
}

/// Dense `L`, `C`, `R` of the block factorization of `F̂`.
pub fn dense_lcr(
    sys: &NewtonSystem<'_>,
    sets: &ActiveSets,
) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let (nu, nq) = (sys.a.rows(), sys.w_diag.len());
    let active = sets.active();
    let na = active.len();
    let beta = sys.beta;
    let p = selection(&active, nq);
    let n = sys.n.to_dense();
    let w_inv = DMatrix::from_diagonal(&DVector::from_iterator(
        nq,
        sys.w_diag.iter().map(|w| 1.0 / w),
    ));
    let pwp = &p * &w_inv * p.transpose();
    let pwp_inv = pwp
        .clone()
        .try_inverse()
        .unwrap_or_else(|| DMatrix::zeros(na, na));
    let g = n.transpose() * &w_inv * p.transpose() * &pwp_inv;
    let h = sys.a.to_dense() + n.transpose() * &w_inv * &n / beta
        - n.transpose() * &w_inv * p.transpose() * &pwp_inv * &p * &w_inv * &n / beta;
    let dim = nu + nq + na;

    let mut l = DMatrix::identity(dim, dim);
    place(&mut l, 0, nu, &(n.transpose() * &w_inv / beta));
    place(&mut l, 0, nu + nq, &g);
    place(&mut l, nu + nq, nu, &(&p * &w_inv / beta));

    let mut c = DMatrix::zeros(dim, dim);
    place(&mut c, 0, 0, &h);
    place(
        &mut c,
        nu,
        nu,
        &DMatrix::from_diagonal(&DVector::from_iterator(
            nq,
            sys.w_diag.iter().map(|w| beta * w),
        )),
    );
    place(&mut c, nu + nq, nu + nq, &(-pwp / beta));

    let mut r = DMatrix::identity(dim, dim);
    place(&mut r, nu, 0, &(-&w_inv * &n / beta));
    place(&mut r, nu, nu + nq, &(&w_inv * p.transpose() / beta));
    place(&mut r, nu + nq, 0, &(-g.transpose()));
    (l, c, r)
}

/// Random coefficient, state, `N` and active sets on an `n` mesh.
pub struct RandomSystem {
    pub a: SparseMatrix,
    pub n: SparseMatrix,
    pub w_diag: Vec<f64>,
    pub beta: f64,
    pub sets: ActiveSets,
}

impl RandomSystem {
    pub fn new(n: usize, beta: f64, rng: &mut impl Rng) -> Result<Self> {
        let mesh = build_uniform_mesh(n)?;
        let q: Vec<f64> = (0..mesh.num_nodes())
            .map(|_| rng.random_range(0.5..3.0))
            .collect();
        let load = assemble_load(&mesh, &Source::Constant(10.0))?;
        let (u, _) = forward_solve(&mesh, &q, &load, &LinearSolverConfig::with_tol(1e-13))?;
        let gu = interior_gradients(&mesh, &u)?;
        let membership = (0..mesh.num_nodes())
            .map(|_| match rng.random_range(0..3) {
                0 => Membership::Upper,
                1 => Membership::Lower,
                _ => Membership::Inactive,
            })
            .collect();
        Ok(Self {
            a: assemble_stiffness(&mesh, &q)?,
            n: assemble_n(&mesh, &gu)?,
            w_diag: lumped_mass(&assemble_mass(&mesh)).diagonal(),
            beta,
            sets: ActiveSets::from_membership(membership),
        })
    }

    pub fn system(&self) -> NewtonSystem<'_> {
        NewtonSystem {
            a: &self.a,
            n: &self.n,
            w_diag: &self.w_diag,
            beta: self.beta,
        }
    }
}

/// Largest entry of `|L C R − F̂|` over several random systems on n = 2.
pub fn factorization_check(seed: u64, trials: usize) -> Result<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let rs = RandomSystem::new(2, rng.random_range(0.01..1.0), &mut rng)?;
        let sys = rs.system();
        let (l, c, r) = dense_lcr(&sys, &rs.sets);
        worst = worst.max((l * c * r - dense_f_hat(&sys, &rs.sets)).amax());
    }
    Ok(worst)
}

/// Relative residual `‖F̂ x − d‖/‖d‖` of the computed Newton step.
pub fn newton_residual_check(n: usize, seed: u64) -> Result<f64> {
    use crate::linsolve::{build_preconditioner, LinearSolverConfig as Lsc};
    use crate::mesh::hierarchy_for;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let rs = RandomSystem::new(n, 0.1, &mut rng)?;
    let sys = rs.system();
    let nq = rs.w_diag.len();
    let nu = rs.a.rows();
    let na = rs.sets.active().len();
    let d2: Vec<f64> = (0..nq)
        .map(|_| rng.random_range(-1.0..1.0) * 1e-2)
        .collect();
    let d3: Vec<f64> = (0..na).map(|_| rng.random_range(-1.0..1.0)).collect();
    let d1 = vec![0.0; nu];
    let lin = Lsc::with_tol(1e-13);
    let pre = build_preconditioner(&hierarchy_for(n, lin.coarse_n)?, &rs.a, &lin)?;
    let mut r = vec![0.0; nu];
    let step =
        crate::qsolver::newton_step(&sys, &rs.sets, &d1, &d2, &d3, pre.as_ref(), &mut r, &lin)?;
    let x = DVector::from_iterator(
        nu + nq + na,
        r.iter().chain(&step.dq).chain(&step.eta_active).copied(),
    );
    let d = DVector::from_iterator(nu + nq + na, d1.iter().chain(&d2).chain(&d3).copied());
    Ok((dense_f_hat(&sys, &rs.sets) * x - &d).norm() / d.norm())
}

/// Largest excess of the prox objective over the input and its mean.
pub fn prox_check(samples: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..samples {
        let z: Vec<f64> = (0..64).map(|_| rng.random_range(0.0..3.0)).collect();
        let theta = rng.random_range(0.05..1.0);
        let x = prox_tv_grid(&z, 8, 8, theta, 1e-13, 200_000, &mut DualField::default())?.x;
        let best = rof_objective(&x, &z, theta, 8, 8);
        let mean = z.iter().sum::<f64>() / 64.0;
        worst = worst
            .max(best - rof_objective(&z, &z, theta, 8, 8))
            .max(best - rof_objective(&vec![mean; 64], &z, theta, 8, 8));
    }
    Ok(worst.max(0.0))
}

pub fn run_checks(cfg: &CheckConfig) -> Result<Vec<CheckOutcome>> {
    let probe = Probe::example2(cfg.n)?;
    let q = probe_coefficient(&probe.mesh);
    Ok(vec![
        CheckOutcome {
            name: "gradient_fd",
            measured: gradient_check(&probe, &q, cfg.fd_step, cfg.corrupt_gradient)?,
            tolerance: cfg.gradient_tol,
        },
        CheckOutcome {
            name: "hessian_action",
            measured: hessian_check(&probe, &q, cfg.fd_step, cfg.hessian_directions, cfg.seed)?,
            tolerance: cfg.hessian_tol,
        },
        CheckOutcome {
            name: "factorization_lcr",
            measured: factorization_check(cfg.seed, 5)?,
            tolerance: cfg.factorization_tol,
        },
        CheckOutcome {
            name: "newton_step_residual",
            measured: newton_residual_check(cfg.n, cfg.seed)?,
            tolerance: cfg.newton_residual_tol,
        },
        CheckOutcome {
            name: "prox_optimality",
            measured: prox_check(cfg.prox_samples, cfg.seed)?,
            tolerance: cfg.prox_tol,
        },
    ])
}
