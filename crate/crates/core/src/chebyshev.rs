//! Chebyshev polynomials and the SK-ROCK recurrence coefficients.

use crate::error::{invalid, Result};

/// Largest stage count accepted by [`ChebCoefficients::new`].
pub const MAX_STAGES: usize = 100;

/// Default damping parameter.
pub const DEFAULT_ETA: f64 = 0.05;

/// Chebyshev polynomial of the first kind, `T_s(x)`, by the three-term recurrence.
pub fn cheb_t(s: usize, x: f64) -> f64 {
    let (mut prev, mut cur) = (1.0, x);
    if s == 0 {
        return prev;
    }
    for _ in 1..s {
        let next = 2.0 * x * cur - prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// Chebyshev polynomial of the second kind, `U_s(x)`.
pub fn cheb_u(s: usize, x: f64) -> f64 {
    let (mut prev, mut cur) = (1.0, 2.0 * x);
    if s == 0 {
        return prev;
    }
    for _ in 1..s {
        let next = 2.0 * x * cur - prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// Derivative `T_s'(x) = s U_{s-1}(x)`. Zero for `s = 0`.
pub fn cheb_t_derivative(s: usize, x: f64) -> f64 {
    if s == 0 {
        return 0.0;
    }
    s as f64 * cheb_u(s - 1, x)
}

/// Values `T_0(x), ..., T_s(x)`.
fn cheb_t_table(s: usize, x: f64) -> Vec<f64> {
    let mut t = Vec::with_capacity(s + 1);
    t.push(1.0);
    if s >= 1 {
        t.push(x);
    }
    for j in 2..=s {
        let next = 2.0 * x * t[j - 1] - t[j - 2];
        t.push(next);
    }
    t
}

/// Length of the real stability interval `[-l_s, 0]` of the s-stage method.
pub fn stability_interval(s: usize, eta: f64) -> f64 {
    let h = s as f64 - 0.5;
    h * h * (2.0 - 4.0 / 3.0 * eta) - 1.5
}

/// Precomputed coefficients of an s-stage SK-ROCK step.
///
/// Stage `j` (1-based) reads `mu[j - 1]`, `nu[j - 1]` and `k[j - 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChebCoefficients {
    pub s: usize,
    pub eta: f64,
    pub omega0: f64,
    pub omega1: f64,
    pub ls: f64,
    pub mu: Vec<f64>,
    pub nu: Vec<f64>,
    pub k: Vec<f64>,
}

impl ChebCoefficients {
    pub fn new(s: usize, eta: f64) -> Result<Self> {
        if s == 0 {
            return Err(invalid("stage count must be at least 1"));
        }
        if s > MAX_STAGES {
            return Err(invalid(format!("stage count {s} exceeds the cap of {MAX_STAGES}")));
        }
        if !(eta >= 0.0) || !eta.is_finite() {
            return Err(invalid(format!("damping must be finite and non-negative, got {eta}")));
        }
        let sf = s as f64;
        let omega0 = 1.0 + eta / (sf * sf);
        let t = cheb_t_table(s, omega0);
        let omega1 = t[s] / cheb_t_derivative(s, omega0);

        let mut mu = Vec::with_capacity(s);
        let mut nu = Vec::with_capacity(s);
        let mut k = Vec::with_capacity(s);
        mu.push(omega1 / omega0);
        nu.push(sf * omega1 / 2.0);
        k.push(sf * omega1 / omega0);
        for j in 2..=s {
            mu.push(2.0 * omega1 * t[j - 1] / t[j]);
            let nu_j = 2.0 * omega0 * t[j - 1] / t[j];
            nu.push(nu_j);
            k.push(-t[j - 2] / t[j]);
        }

        Ok(Self {
            s,
            eta,
            omega0,
            omega1,
            ls: stability_interval(s, eta),
            mu,
            nu,
            k,
        })
    }

    /// Affine image `omega0 + omega1 * z` of a point on the real axis.
    pub fn shifted(&self, z: f64) -> f64 {
        self.omega0 + self.omega1 * z
    }
}

/// Free-function form of [`ChebCoefficients::new`].
pub fn make_coefficients(s: usize, eta: f64) -> Result<ChebCoefficients> {
    ChebCoefficients::new(s, eta)
}
