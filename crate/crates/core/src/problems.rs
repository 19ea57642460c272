//! Benchmark coefficients and synthetic observation data.

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::assembly::{assemble_load, forward_solve, Observation, Source};
use crate::error::{Error, Result};
use crate::linsolve::LinearSolverConfig;
use crate::mesh::{interior_gradients, Mesh, Vec2};

/// Straight-line jump: 1 on `y ≤ 0.5`, 2 above.
pub fn example1_q(_x: f64, y: f64) -> f64 {
    if y <= 0.5 {
        1.0
    } else {
        2.0
    }
}

/// `1 + 0.5·[disc of radius² 1/8 about the center] + [square [1/3, 2/3]²]`
pub fn example2_q(x: f64, y: f64) -> f64 {
    let (dx, dy) = (x - 0.5, y - 0.5);
    let disc = if dx * dx + dy * dy <= 0.125 { 0.5 } else { 0.0 };
    let third = 1.0 / 3.0;
    let two_thirds = 2.0 / 3.0;
    let square = if (third..=two_thirds).contains(&x) && (third..=two_thirds).contains(&y) {
        1.0
    } else {
        0.0
    };
    1.0 + disc + square
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Example {
    Ex1,
    Ex2,
    /// Nodal truth read from `ProblemSpec::q_file`.
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemSpec {
    pub example: Example,
    pub n: usize,
    pub delta: f64,
    pub seed: u64,
    pub f_const: f64,
    pub q_file: Option<PathBuf>,
}

impl Default for ProblemSpec {
    fn default() -> Self {
        Self {
            example: Example::Ex1,
            n: 64,
            delta: 0.01,
            seed: 1,
            f_const: 10.0,
            q_file: None,
        }
    }
}

impl ProblemSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::invalid("problem n must be at least 2"));
        }
        if !(self.delta >= 0.0) || !self.delta.is_finite() {
            return Err(Error::invalid(
                "noise level delta must be a finite non-negative number",
            ));
        }
        if self.example == Example::Custom && self.q_file.is_none() {
            return Err(Error::invalid("custom example needs q_file"));
        }
        Ok(())
    }

    /// Nodal interpolant of the true coefficient.
    pub fn q_true(&self, mesh: &Mesh) -> Result<Vec<f64>> {
        match self.example {
            Example::Ex1 => Ok(mesh.interpolate(example1_q)),
            Example::Ex2 => Ok(mesh.interpolate(example2_q)),
            Example::Custom => {
                let path = self
                    .q_file
                    .as_ref()
                    .ok_or_else(|| Error::invalid("q_file missing"))?;
                let (n, q) = crate::io::read_grid(path)?;
                if n != mesh.n() {
                    return Err(Error::Format(format!(
                        "{} holds an n = {n} grid, the problem uses n = {}",
                        path.display(),
                        mesh.n()
                    )));
                }
                Ok(q)
            }
        }
    }
}

/// `‖v‖_h = h·(Σ_τ |τ| |v_τ|²)^{1/2}`
pub fn norm_h(mesh: &Mesh, v: &[Vec2]) -> f64 {
    let s: f64 = v
        .iter()
        .zip(mesh.areas())
        .map(|(g, a)| a * (g[0] * g[0] + g[1] * g[1]))
        .sum();
    mesh.h() * s.sqrt()
}

/// Root-mean-square size of the noise added by [`generate_observation`],
/// measured in `‖·‖_h`: `δ‖∇u_h‖_h · (E|r|²)^{1/2} · h` with
/// `E|r|² = 2/3` for two independent `U[−1, 1]` components.
pub fn noise_floor(mesh: &Mesh, clean: &[Vec2], delta: f64) -> f64 {
    let total: f64 = mesh.areas().iter().sum();
    delta * norm_h(mesh, clean) * mesh.h() * (2.0 / 3.0 * total).sqrt()
}

/// Synthetic data: the state at `q_true` and its gradient perturbed per
/// triangle and component by `δ·‖∇u_h‖_h·r`, `r ~ U[−1, 1]` from a ChaCha20
/// stream seeded with `seed`.
pub fn generate_observation(
    mesh: &Mesh,
    q_true: &[f64],
    f_const: f64,
    delta: f64,
    seed: u64,
    lin: &LinearSolverConfig,
) -> Result<(Observation, Vec<f64>)> {
    if !(delta >= 0.0) {
        return Err(Error::invalid("delta must be non-negative"));
    }
    let load = assemble_load(mesh, &Source::Constant(f_const))?;
    let (u, _) = forward_solve(mesh, q_true, &load, lin)?;
    let mut grads = interior_gradients(mesh, &u)?;
    if delta > 0.0 {
        let amp = delta * norm_h(mesh, &grads);
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        for g in grads.iter_mut() {
            g[0] += amp * rng.random_range(-1.0..=1.0);
            g[1] += amp * rng.random_range(-1.0..=1.0);
        }
    }
    Ok((Observation::new(mesh, grads)?, u))
}
