//! The TV proximal step: ROF denoising on the nodal grid by Chambolle's dual
//! projection, the field/image mapping, and dispatch to an external denoiser.

use serde::{Deserialize, Serialize};

use crate::bridge::BridgeClient;
use crate::error::{Error, Result};
use crate::qsolver::BoxBounds;

/// Gray-value image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<f64>,
}

impl Image {
    pub fn new(rows: usize, cols: usize, pixels: Vec<f64>) -> Result<Self> {
        if rows * cols != pixels.len() {
            return Err(Error::invalid(format!(
                "image {rows}x{cols} needs {} pixels, got {}",
                rows * cols,
                pixels.len()
            )));
        }
        Ok(Self { rows, cols, pixels })
    }
}

fn grid_side(len: usize) -> Result<usize> {
    let side = (len as f64).sqrt().round() as usize;
    if side < 2 || side * side != len {
        return Err(Error::invalid(format!(
            "{len} values do not form a square nodal grid"
        )));
    }
    Ok(side)
}

/// `pixel = (p − a0)/(a1 − a0)·256`; node (i, j) goes to row n − j, column i.
pub fn to_image(p: &[f64], bounds: &BoxBounds) -> Result<Image> {
    let side = grid_side(p.len())?;
    let scale = 256.0 / (bounds.a1 - bounds.a0);
    let mut pixels = vec![0.0; p.len()];
    for j in 0..side {
        for i in 0..side {
            pixels[(side - 1 - j) * side + i] = (p[j * side + i] - bounds.a0) * scale;
        }
    }
    Image::new(side, side, pixels)
}

pub fn from_image(img: &Image, bounds: &BoxBounds) -> Result<Vec<f64>> {
    if img.rows != img.cols || img.rows < 2 || img.pixels.len() != img.rows * img.cols {
        return Err(Error::invalid("image must be a square nodal grid"));
    }
    let side = img.rows;
    let scale = (bounds.a1 - bounds.a0) / 256.0;
    let mut p = vec![0.0; side * side];
    for j in 0..side {
        for i in 0..side {
            p[j * side + i] = img.pixels[(side - 1 - j) * side + i] * scale + bounds.a0;
        }
    }
    Ok(p)
}

/// Forward-difference gradient with zero flux across the last row/column.
fn grad(x: &[f64], rows: usize, cols: usize, gx: &mut [f64], gy: &mut [f64]) {
    for r in 0..rows {
        for c in 0..cols {
            let k = r * cols + c;
            gx[k] = if c + 1 < cols { x[k + 1] - x[k] } else { 0.0 };
            gy[k] = if r + 1 < rows {
                x[k + cols] - x[k]
            } else {
                0.0
            };
        }
    }
}

/// Negative adjoint of `grad`.
fn div(px: &[f64], py: &[f64], rows: usize, cols: usize, out: &mut [f64]) {
    for r in 0..rows {
        for c in 0..cols {
            let k = r * cols + c;
            let mut v = 0.0;
            if c + 1 < cols {
                v += px[k];
            }
            if c > 0 {
                v -= px[k - 1];
            }
            if r + 1 < rows {
                v += py[k];
            }
            if r > 0 {
                v -= py[k - cols];
            }
            out[k] = v;
        }
    }
}

/// Isotropic discrete total variation of a `rows × cols` grid.
pub fn total_variation(x: &[f64], rows: usize, cols: usize) -> f64 {
    let mut gx = vec![0.0; x.len()];
    let mut gy = vec![0.0; x.len()];
    grad(x, rows, cols, &mut gx, &mut gy);
    gx.iter().zip(&gy).map(|(a, b)| a.hypot(*b)).sum()
}

/// Total variation of a nodal field on the square grid.
pub fn nodal_tv(x: &[f64]) -> Result<f64> {
    let side = grid_side(x.len())?;
    Ok(total_variation(x, side, side))
}

/// `θ·TV(x) + ½‖x − z‖²`
pub fn rof_objective(x: &[f64], z: &[f64], theta: f64, rows: usize, cols: usize) -> f64 {
    let fit: f64 = x.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
    theta * total_variation(x, rows, cols) + 0.5 * fit
}

/// Dual variable of the ROF problem, kept between calls for warm starts.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DualField {
    px: Vec<f64>,
    py: Vec<f64>,
}

impl DualField {
    pub fn zeros(len: usize) -> Self {
        Self {
            px: vec![0.0; len],
            py: vec![0.0; len],
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProxResult {
    pub x: Vec<f64>,
    pub iters: usize,
    pub converged: bool,
}

const DUAL_STEP: f64 = 0.125;

/// `argmin_x θ·TV(x) + ½‖x − z‖²` on a `rows × cols` grid.
///
/// Accelerated projected gradient on the dual `min_{|p|≤1} ½‖θ div p − z‖²`
/// with momentum restart; `x = z − θ div p`. Stops when the relative change
/// of the dual drops below `tol`.
pub fn prox_tv_grid(
    z: &[f64],
    rows: usize,
    cols: usize,
    theta: f64,
    tol: f64,
    max_iters: usize,
    dual: &mut DualField,
) -> Result<ProxResult> {
    let len = rows * cols;
    if z.len() != len {
        return Err(Error::invalid("prox input does not match grid dimensions"));
    }
    if !(theta > 0.0) {
        return Err(Error::invalid("prox weight theta must be positive"));
    }
    if dual.px.len() != len {
        *dual = DualField::zeros(len);
    }
    let inv_theta = 1.0 / theta;
    let mut wx = dual.px.clone();
    let mut wy = dual.py.clone();
    let mut d = vec![0.0; len];
    let mut gx = vec![0.0; len];
    let mut gy = vec![0.0; len];
    let mut t: f64 = 1.0;
    let mut iters = 0;
    let mut converged = false;
    while iters < max_iters {
        div(&wx, &wy, rows, cols, &mut d);
        for (dk, zk) in d.iter_mut().zip(z) {
            *dk -= zk * inv_theta;
        }
        grad(&d, rows, cols, &mut gx, &mut gy);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let mut momentum = (t - 1.0) / t_next;
        let mut change = 0.0;
        let mut size = 0.0;
        let mut uphill = 0.0;
        for k in 0..len {
            let mut nx = wx[k] + DUAL_STEP * gx[k];
            let mut ny = wy[k] + DUAL_STEP * gy[k];
            let s = nx.hypot(ny).max(1.0);
            nx /= s;
            ny /= s;
            // restart test: ⟨w − p⁺, p⁺ − p⟩ > 0
            uphill += (wx[k] - nx) * (nx - dual.px[k]) + (wy[k] - ny) * (ny - dual.py[k]);
            gx[k] = nx;
            gy[k] = ny;
        }
        if uphill > 0.0 {
            momentum = 0.0;
            t = 1.0;
        } else {
            t = t_next;
        }
        for k in 0..len {
            let (nx, ny) = (gx[k], gy[k]);
            let (dx, dy) = (nx - dual.px[k], ny - dual.py[k]);
            change += dx * dx + dy * dy;
            size += nx * nx + ny * ny;
            wx[k] = nx + momentum * dx;
            wy[k] = ny + momentum * dy;
            dual.px[k] = nx;
            dual.py[k] = ny;
        }
        iters += 1;
        if change.sqrt() <= tol * size.sqrt() {
            converged = true;
            break;
        }
    }
    div(&dual.px, &dual.py, rows, cols, &mut d);
    let x = z.iter().zip(&d).map(|(zk, dk)| zk - theta * dk).collect();
    Ok(ProxResult {
        x,
        iters,
        converged,
    })
}

/// ROF prox of a nodal field from a cold start.
pub fn prox_tv(z: &[f64], theta: f64, tol: f64, max_iters: usize) -> Result<ProxResult> {
    let side = grid_side(z.len())?;
    prox_tv_grid(
        z,
        side,
        side,
        theta,
        tol,
        max_iters,
        &mut DualField::default(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenoiserKind {
    RofProx,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiserSpec {
    pub kind: DenoiserKind,
    /// Prox weight on the unit-spaced nodal grid.
    pub theta: f64,
    /// Noise level forwarded to the external denoiser.
    pub sigma: f64,
    pub rof_tol: f64,
    pub rof_max_iters: usize,
    /// Launch command for the external denoiser; `COEFFID_BRIDGE_CMD` wins.
    pub bridge_cmd: Option<String>,
    /// Use the ROF prox when the external denoiser fails.
    pub fallback: bool,
}

impl Default for DenoiserSpec {
    fn default() -> Self {
        Self {
            kind: DenoiserKind::RofProx,
            theta: 0.05,
            sigma: 15.0,
            rof_tol: 1e-6,
            rof_max_iters: 2000,
            bridge_cmd: None,
            fallback: false,
        }
    }
}

impl DenoiserSpec {
    pub fn validate(&self) -> Result<()> {
        match self.kind {
            DenoiserKind::RofProx if !(self.theta > 0.0) => {
                Err(Error::invalid("denoiser theta must be positive"))
            }
            DenoiserKind::External if !(self.sigma > 0.0) => {
                Err(Error::invalid("denoiser sigma must be positive"))
            }
            _ if !(self.rof_tol > 0.0) || self.rof_max_iters == 0 => Err(Error::invalid(
                "rof_tol must be positive and rof_max_iters at least 1",
            )),
            _ => Ok(()),
        }
    }
}

/// Stateful p-step: keeps the ROF dual for warm starts and the bridge
/// process for the external path.
pub struct PSolver {
    spec: DenoiserSpec,
    bounds: BoxBounds,
    dual: DualField,
    bridge: Option<BridgeClient>,
    pub last_iters: usize,
    pub fallbacks: usize,
}

impl PSolver {
    pub fn new(spec: DenoiserSpec, bounds: BoxBounds) -> Result<Self> {
        spec.validate()?;
        bounds.validate()?;
        Ok(Self {
            spec,
            bounds,
            dual: DualField::default(),
            bridge: None,
            last_iters: 0,
            fallbacks: 0,
        })
    }

    pub fn spec(&self) -> &DenoiserSpec {
        &self.spec
    }

    fn rof(&mut self, z: &[f64]) -> Result<Vec<f64>> {
        let side = grid_side(z.len())?;
        let res = prox_tv_grid(
            z,
            side,
            side,
            self.spec.theta,
            self.spec.rof_tol,
            self.spec.rof_max_iters,
            &mut self.dual,
        )?;
        self.last_iters = res.iters;
        Ok(res.x)
    }

    fn external(&mut self, z: &[f64]) -> Result<Vec<f64>> {
        if self.bridge.is_none() {
            self.bridge = Some(BridgeClient::spawn(self.spec.bridge_cmd.as_deref())?);
        }
        let img = to_image(z, &self.bounds)?;
        let out = self
            .bridge
            .as_mut()
            .expect("bridge spawned above")
            .denoise(&img, self.spec.sigma);
        match out {
            Ok(den) => {
                self.last_iters = 0;
                from_image(&den, &self.bounds)
            }
            Err(e) => {
                self.bridge = None;
                Err(e)
            }
        }
    }

    /// `p = D(q_new + λ/β)` for the configured denoiser `D`.
    pub fn solve(&mut self, q_new: &[f64], lambda: &[f64], beta: f64) -> Result<Vec<f64>> {
        if q_new.len() != lambda.len() {
            return Err(Error::invalid("q and lambda lengths differ"));
        }
        let z: Vec<f64> = q_new
            .iter()
            .zip(lambda)
            .map(|(q, l)| q + l / beta)
            .collect();
        match self.spec.kind {
            DenoiserKind::RofProx => self.rof(&z),
            DenoiserKind::External => match self.external(&z) {
                Ok(p) => Ok(p),
                Err(_) if self.spec.fallback => {
                    self.fallbacks += 1;
                    self.rof(&z)
                }
                Err(e) => Err(e),
            },
        }
    }
}

/// One-shot p-step without warm starts.
pub fn solve_p_subproblem(
    q_new: &[f64],
    lambda: &[f64],
    beta: f64,
    spec: &DenoiserSpec,
    bounds: &BoxBounds,
) -> Result<Vec<f64>> {
    PSolver::new(spec.clone(), *bounds)?.solve(q_new, lambda, beta)
}
