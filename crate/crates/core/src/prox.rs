//! Proximal operators, Moreau-Yosida envelopes and discrete total variation.
//!
//! All proximal maps use the convention
//! `prox_g^lambda(x) = argmin_u g(u) + |x - u|^2 / (2 lambda)`.

use crate::error::{Error, Result};

/// Row-major image shape. Multi-channel data stores `channels` images back to back.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Shape {
    pub rows: usize,
    pub cols: usize,
}

impl Shape {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self { rows, cols }
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A proper convex lower semicontinuous penalty with a computable proximal map.
pub trait Penalty: Send + Sync {
    /// Penalty value; `f64::INFINITY` outside the domain of an indicator.
    fn value(&self, x: &[f64]) -> f64;

    /// Proximal map with parameter `lambda > 0`.
    fn prox(&self, x: &[f64], lambda: f64) -> Vec<f64>;

    fn name(&self) -> &str;
}

/// `g = 0`. Its prox is the identity.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroPenalty;

impl Penalty for ZeroPenalty {
    fn value(&self, _x: &[f64]) -> f64 {
        0.0
    }

    fn prox(&self, x: &[f64], _lambda: f64) -> Vec<f64> {
        x.to_vec()
    }

    fn name(&self) -> &str {
        "zero"
    }
}

/// `g(x) = weight * |x|_1`.
#[derive(Debug, Clone, Copy)]
pub struct L1Penalty {
    pub weight: f64,
}

impl Penalty for L1Penalty {
    fn value(&self, x: &[f64]) -> f64 {
        self.weight * x.iter().map(|v| v.abs()).sum::<f64>()
    }

    fn prox(&self, x: &[f64], lambda: f64) -> Vec<f64> {
        soft_threshold(x, self.weight * lambda)
    }

    fn name(&self) -> &str {
        "l1"
    }
}

/// Indicator of the box `[lo, hi]^d`; `hi` may be infinite.
#[derive(Debug, Clone, Copy)]
pub struct BoxIndicator {
    pub lo: f64,
    pub hi: f64,
}

impl BoxIndicator {
    pub fn nonnegative() -> Self {
        Self { lo: 0.0, hi: f64::INFINITY }
    }
}

impl Penalty for BoxIndicator {
    fn value(&self, x: &[f64]) -> f64 {
        if x.iter().all(|&v| v >= self.lo && v <= self.hi) {
            0.0
        } else {
            f64::INFINITY
        }
    }

    fn prox(&self, x: &[f64], _lambda: f64) -> Vec<f64> {
        project_box(x, self.lo, self.hi)
    }

    fn name(&self) -> &str {
        "box"
    }
}

/// Settings for the Chambolle dual projection solver.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TvSolver {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for TvSolver {
    fn default() -> Self {
        Self { tol: 1e-4, max_iter: 100 }
    }
}

/// `g(x) = weight * sum_c TV(x_c)` over `channels` images of the given shape.
#[derive(Debug, Clone, Copy)]
pub struct TvPenalty {
    pub weight: f64,
    pub shape: Shape,
    pub channels: usize,
    pub solver: TvSolver,
}

impl TvPenalty {
    pub fn new(weight: f64, shape: Shape) -> Self {
        Self { weight, shape, channels: 1, solver: TvSolver::default() }
    }

    pub fn with_channels(mut self, channels: usize) -> Self {
        self.channels = channels;
        self
    }

    pub fn with_solver(mut self, solver: TvSolver) -> Self {
        self.solver = solver;
        self
    }
}

impl Penalty for TvPenalty {
    fn value(&self, x: &[f64]) -> f64 {
        let n = self.shape.len();
        self.weight * x.chunks(n).map(|c| tv_value(c, self.shape)).sum::<f64>()
    }

    fn prox(&self, x: &[f64], lambda: f64) -> Vec<f64> {
        let n = self.shape.len();
        let tau = self.weight * lambda;
        let mut out = Vec::with_capacity(x.len());
        for chunk in x.chunks(n) {
            // finiteness is checked by the caller on the chain state
            let u = chambolle(chunk, self.shape, tau, self.solver.tol, self.solver.max_iter);
            out.extend_from_slice(&u);
        }
        out
    }

    fn name(&self) -> &str {
        "tv"
    }
}

/// Sum of penalties whose joint prox is approximated by composing the
/// individual proxes in the stored order.
pub struct CompositePenalty {
    pub parts: Vec<Box<dyn Penalty>>,
}

impl CompositePenalty {
    pub fn new(parts: Vec<Box<dyn Penalty>>) -> Self {
        Self { parts }
    }
}

impl Penalty for CompositePenalty {
    fn value(&self, x: &[f64]) -> f64 {
        self.parts.iter().map(|p| p.value(x)).sum()
    }

    fn prox(&self, x: &[f64], lambda: f64) -> Vec<f64> {
        let mut u = x.to_vec();
        for p in &self.parts {
            u = p.prox(&u, lambda);
        }
        u
    }

    fn name(&self) -> &str {
        "composite"
    }
}

/// Componentwise `sign(x) max(|x| - tau, 0)`.
pub fn soft_threshold(x: &[f64], tau: f64) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let m = v.abs() - tau;
            if m > 0.0 {
                m.copysign(v)
            } else {
                0.0
            }
        })
        .collect()
}

/// Componentwise clamp to `[lo, hi]`.
pub fn project_box(x: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    x.iter().map(|&v| v.max(lo).min(hi)).collect()
}

/// Forward differences with replicate boundary: `(dx, dy)` along rows and columns.
pub(crate) fn gradient(u: &[f64], shape: Shape, gx: &mut [f64], gy: &mut [f64]) {
    let (r, c) = (shape.rows, shape.cols);
    for i in 0..r {
        for j in 0..c {
            let idx = i * c + j;
            gx[idx] = if i + 1 < r { u[idx + c] - u[idx] } else { 0.0 };
            gy[idx] = if j + 1 < c { u[idx + 1] - u[idx] } else { 0.0 };
        }
    }
}

/// Discrete divergence, the negative adjoint of [`gradient`].
pub(crate) fn divergence(px: &[f64], py: &[f64], shape: Shape, out: &mut [f64]) {
    let (r, c) = (shape.rows, shape.cols);
    for i in 0..r {
        for j in 0..c {
            let idx = i * c + j;
            let mut d = 0.0;
            if i + 1 < r {
                d += px[idx];
            }
            if i > 0 {
                d -= px[idx - c];
            }
            if j + 1 < c {
                d += py[idx];
            }
            if j > 0 {
                d -= py[idx - 1];
            }
            out[idx] = d;
        }
    }
}

/// Isotropic total variation with forward differences and Neumann boundary.
pub fn tv_value(image: &[f64], shape: Shape) -> f64 {
    let n = shape.len();
    let mut gx = vec![0.0; n];
    let mut gy = vec![0.0; n];
    gradient(image, shape, &mut gx, &mut gy);
    gx.iter().zip(&gy).map(|(a, b)| (a * a + b * b).sqrt()).sum()
}

fn chambolle(f: &[f64], shape: Shape, tau: f64, tol: f64, max_iter: usize) -> Vec<f64> {
    if tau <= 0.0 {
        return f.to_vec();
    }
    let n = shape.len();
    let step = 0.125;
    let inv_tau = 1.0 / tau;
    let mut px = vec![0.0; n];
    let mut py = vec![0.0; n];
    let mut div = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut gx = vec![0.0; n];
    let mut gy = vec![0.0; n];
    for _ in 0..max_iter {
        divergence(&px, &py, shape, &mut div);
        for idx in 0..n {
            w[idx] = div[idx] - f[idx] * inv_tau;
        }
        gradient(&w, shape, &mut gx, &mut gy);
        let mut max_change: f64 = 0.0;
        for idx in 0..n {
            let norm = (gx[idx] * gx[idx] + gy[idx] * gy[idx]).sqrt();
            let denom = 1.0 + step * norm;
            let nx = (px[idx] + step * gx[idx]) / denom;
            let ny = (py[idx] + step * gy[idx]) / denom;
            max_change = max_change.max((nx - px[idx]).abs()).max((ny - py[idx]).abs());
            px[idx] = nx;
            py[idx] = ny;
        }
        if max_change < tol {
            break;
        }
    }
    divergence(&px, &py, shape, &mut div);
    f.iter().zip(&div).map(|(fi, d)| fi - tau * d).collect()
}

/// Approximate minimiser of `tau TV(u) + |u - image|^2 / 2` by Chambolle's
/// dual projection with step 1/8. Stops when the largest dual update falls
/// below `tol` or after `max_iter` sweeps.
pub fn prox_tv(image: &[f64], shape: Shape, tau: f64, tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    if image.len() != shape.len() {
        return Err(Error::ShapeMismatch { expected: shape.len(), got: image.len() });
    }
    if image.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("prox_tv input image".into()));
    }
    if !(tau >= 0.0) {
        return Err(crate::error::invalid(format!("tau must be non-negative, got {tau}")));
    }
    Ok(chambolle(image, shape, tau, tol, max_iter))
}

/// Moreau-Yosida envelope `g^lambda` of a penalty.
pub struct MoreauEnvelope<'a> {
    pub base: &'a dyn Penalty,
    pub lambda: f64,
}

impl<'a> MoreauEnvelope<'a> {
    pub fn new(base: &'a dyn Penalty, lambda: f64) -> Self {
        Self { base, lambda }
    }

    /// `g(p) + |x - p|^2 / (2 lambda)` with `p = prox(x)`.
    pub fn value(&self, x: &[f64]) -> f64 {
        let p = self.base.prox(x, self.lambda);
        envelope_value_at(self.base, x, &p, self.lambda)
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        my_envelope_gradient(self, x)
    }
}

pub(crate) fn envelope_value_at(g: &dyn Penalty, x: &[f64], p: &[f64], lambda: f64) -> f64 {
    let sq: f64 = x.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum();
    g.value(p) + sq / (2.0 * lambda)
}

/// Gradient of the Moreau-Yosida envelope, `(x - prox(x)) / lambda`.
pub fn my_envelope_gradient(env: &MoreauEnvelope<'_>, x: &[f64]) -> Vec<f64> {
    let p = env.base.prox(x, env.lambda);
    x.iter().zip(&p).map(|(a, b)| (a - b) / env.lambda).collect()
}
