//! Closed-form analysis of both kernels on diagonal Gaussian targets.

use serde::{Deserialize, Serialize};

use crate::chebyshev::{cheb_t, cheb_u, ChebCoefficients, DEFAULT_ETA};
use crate::error::{invalid, Error, Result};
use crate::models::GaussianTarget;
use crate::par;
use crate::samplers::Kernel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum Method {
    Em,
    Skrock { s: usize, eta: f64 },
}

/// The pair `(R1, R2)` of a one-step linear map `X' = R1(z) X + sqrt(2 delta) R2(z) Z`.
#[derive(Debug, Clone)]
pub struct StabilityFunctions {
    method: Method,
    coeffs: Option<ChebCoefficients>,
    t_w0: f64,
    u_w0: f64,
}

impl StabilityFunctions {
    pub fn method(&self) -> Method {
        self.method
    }

    /// Gradient evaluations per step.
    pub fn stages(&self) -> usize {
        match self.method {
            Method::Em => 1,
            Method::Skrock { s, .. } => s,
        }
    }

    pub fn r1(&self, z: f64) -> f64 {
        match &self.coeffs {
            None => 1.0 + z,
            Some(c) => cheb_t(c.s, c.shifted(z)) / self.t_w0,
        }
    }

    pub fn r2(&self, z: f64) -> f64 {
        match &self.coeffs {
            None => 1.0,
            Some(c) => cheb_u(c.s - 1, c.shifted(z)) / self.u_w0 * (1.0 + c.omega1 * z / 2.0),
        }
    }

    /// Mean-square amplification `R1(p)^2 + R2(p)^2 q^2` of the test equation.
    pub fn ms_amplification(&self, p: f64, q2: f64) -> f64 {
        let (a, b) = (self.r1(p), self.r2(p));
        a * a + b * b * q2
    }
}

pub fn stability_em() -> StabilityFunctions {
    StabilityFunctions { method: Method::Em, coeffs: None, t_w0: 1.0, u_w0: 1.0 }
}

pub fn stability_skrock(s: usize, eta: f64) -> Result<StabilityFunctions> {
    let c = ChebCoefficients::new(s, eta)?;
    let t_w0 = cheb_t(s, c.omega0);
    let u_w0 = cheb_u(s - 1, c.omega0);
    Ok(StabilityFunctions { method: Method::Skrock { s, eta }, coeffs: Some(c), t_w0, u_w0 })
}

pub fn stability_for(method: Method) -> Result<StabilityFunctions> {
    match method {
        Method::Em => Ok(stability_em()),
        Method::Skrock { s, eta } => stability_skrock(s, eta),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct W2Result {
    pub d: Vec<f64>,
    pub b: Vec<f64>,
    pub total: f64,
}

#[derive(Debug, Clone, Copy)]
struct Axis {
    sigma: f64,
    r1: f64,
    r2: f64,
    z: f64,
}

fn axes(target: &GaussianTarget, stab: &StabilityFunctions, delta: f64) -> Vec<Axis> {
    target
        .variances
        .iter()
        .map(|&v| {
            let z = -delta / v;
            Axis { sigma: v.sqrt(), r1: stab.r1(z), r2: stab.r2(z), z }
        })
        .collect()
}

fn check_stable(ax: &[Axis]) -> Result<()> {
    for (i, a) in ax.iter().enumerate() {
        let m = a.r1.abs();
        if m > 1.0 || (m == 1.0 && a.z != 0.0) || !m.is_finite() {
            return Err(Error::Divergent { axis: i, r1_abs: m });
        }
    }
    Ok(())
}

/// `R1^{2n}`, computed as `exp(2 n log|R1|)`.
fn r1_pow2n(r1: f64, n: f64) -> f64 {
    if r1 == 0.0 {
        return if n == 0.0 { 1.0 } else { 0.0 };
    }
    (2.0 * n * r1.abs().ln()).exp()
}

/// `(1 - R1^{2n}) / (1 - R1^2)`, with the `R1 -> 1` limit `n`.
fn geometric(r1: f64, n: f64) -> f64 {
    let a = 1.0 - r1 * r1;
    if n == 0.0 {
        return 0.0;
    }
    if a.abs() < 1e-14 {
        return n;
    }
    if r1 == 0.0 {
        return 1.0 / a;
    }
    -(2.0 * n * r1.abs().ln()).exp_m1() / a
}

/// Stationary variance `2 delta R2^2 / (1 - R1^2)`; at `z = 0` the limit `sigma^2`.
fn invariant_variance(a: &Axis, delta: f64) -> f64 {
    if a.z.abs() < 1e-12 {
        return a.sigma * a.sigma;
    }
    2.0 * delta * a.r2 * a.r2 / (1.0 - a.r1 * a.r1)
}

/// Variance of the n-step marginal started from a point mass.
fn marginal_variance(a: &Axis, delta: f64, n: f64) -> f64 {
    2.0 * delta * a.r2 * a.r2 * geometric(a.r1, n)
}

fn validate_inputs(target: &GaussianTarget, delta: f64, x0: &[f64]) -> Result<()> {
    if x0.len() != target.dimension() {
        return Err(Error::ShapeMismatch { expected: target.dimension(), got: x0.len() });
    }
    if !(delta >= 0.0) || !delta.is_finite() {
        return Err(invalid(format!("step size must be finite and non-negative, got {delta}")));
    }
    Ok(())
}

/// Squared 2-Wasserstein distance between the target and the law of the
/// chain after `n` steps from the point mass at `x0`. `n` may be `f64::INFINITY`.
pub fn w2_distance(target: &GaussianTarget, stab: &StabilityFunctions, delta: f64, x0: &[f64], n: f64) -> Result<W2Result> {
    validate_inputs(target, delta, x0)?;
    if !(n >= 0.0) {
        return Err(invalid("step count must be non-negative"));
    }
    let ax = axes(target, stab, delta);
    if n > 0.0 {
        check_stable(&ax)?;
    }
    let mut d = Vec::with_capacity(ax.len());
    let mut b = Vec::with_capacity(ax.len());
    for (a, x) in ax.iter().zip(x0) {
        d.push(r1_pow2n(a.r1, n) * x * x);
        let sd = if n.is_infinite() { invariant_variance(a, delta).sqrt() } else { marginal_variance(a, delta, n).sqrt() };
        b.push((a.sigma - sd) * (a.sigma - sd));
    }
    let total = d.iter().sum::<f64>() + b.iter().sum::<f64>();
    Ok(W2Result { d, b, total })
}

/// Per-axis variances of the numerical invariant measure.
pub fn numerical_invariant(target: &GaussianTarget, stab: &StabilityFunctions, delta: f64) -> Result<GaussianTarget> {
    let ax = axes(target, stab, delta);
    check_stable(&ax)?;
    GaussianTarget::new(ax.iter().map(|a| invariant_variance(a, delta)).collect())
}

/// `C = max_i R1(z_i)^2`.
pub fn contraction_constant(target: &GaussianTarget, stab: &StabilityFunctions, delta: f64) -> f64 {
    axes(target, stab, delta).iter().map(|a| a.r1 * a.r1).fold(0.0, f64::max)
}

/// Squared distance between the target and the numerical invariant measure.
pub fn asymptotic_bias(target: &GaussianTarget, stab: &StabilityFunctions, delta: f64) -> Result<f64> {
    let ax = axes(target, stab, delta);
    check_stable(&ax)?;
    Ok(ax
        .iter()
        .map(|a| {
            let e = a.sigma - invariant_variance(a, delta).sqrt();
            e * e
        })
        .sum())
}

/// Squared distance between the numerical invariant measure and the n-step marginal.
pub fn w2_to_invariant(target: &GaussianTarget, stab: &StabilityFunctions, delta: f64, x0: &[f64], n: f64) -> Result<f64> {
    validate_inputs(target, delta, x0)?;
    let ax = axes(target, stab, delta);
    check_stable(&ax)?;
    Ok(ax
        .iter()
        .zip(x0)
        .map(|(a, x)| {
            let e = invariant_variance(a, delta).sqrt() - marginal_variance(a, delta, n).sqrt();
            r1_pow2n(a.r1, n) * x * x + e * e
        })
        .sum())
}

/// Stage count `s = round(sqrt(eta (kappa - 1) / 2))` (at least 1) and step
/// `delta = (omega0 - 1) / (ell omega1)`.
pub fn optimal_stage_and_step(kappa: f64, eta: f64, ell: f64) -> Result<(usize, f64)> {
    if !(kappa >= 1.0) || !kappa.is_finite() {
        return Err(invalid(format!("condition number must be >= 1, got {kappa}")));
    }
    if !(ell > 0.0) {
        return Err(invalid("ell must be positive"));
    }
    let s = ((eta * (kappa - 1.0) / 2.0).sqrt().round() as usize).max(1);
    let c = ChebCoefficients::new(s, eta)?;
    Ok((s, (c.omega0 - 1.0) / (ell * c.omega1)))
}

/// Tuning used by the budget curves: stage count, step and stability functions.
#[derive(Debug, Clone)]
pub struct Tuning {
    pub stab: StabilityFunctions,
    pub delta: f64,
}

impl Tuning {
    /// EM with `delta = safety * 2 / (L + ell)`.
    pub fn em(target: &GaussianTarget, safety: f64) -> Self {
        let l = 1.0 / target.min_variance();
        let ell = 1.0 / target.max_variance();
        Self { stab: stability_em(), delta: safety * 2.0 / (l + ell) }
    }

    /// SK-ROCK with [`optimal_stage_and_step`].
    pub fn skrock(target: &GaussianTarget, eta: f64) -> Result<Self> {
        let (s, delta) = optimal_stage_and_step(target.kappa(), eta, 1.0 / target.max_variance())?;
        Ok(Self { stab: stability_skrock(s, eta)?, delta })
    }

    pub fn for_kernel(target: &GaussianTarget, kernel: Kernel, eta: f64) -> Result<Self> {
        match kernel {
            Kernel::Myula => Ok(Self::em(target, 1.0)),
            Kernel::Skrock => Self::skrock(target, eta),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetPoint {
    pub kappa: f64,
    pub stages: usize,
    pub delta: f64,
    pub iterations: u64,
    pub gradient_evals: u64,
}

/// Cap on the step count searched by [`gradient_budget_curve`].
pub const MAX_BUDGET_STEPS: u64 = 100_000_000;

/// Smallest gradient count `n * s` with `W2(pi, Q_n)^2 < eps^2 W2(pi, Q_0)^2`.
pub fn gradient_budget_curve(target: &GaussianTarget, tuning: &Tuning, epsilon: f64, x0: &[f64]) -> Result<BudgetPoint> {
    if !(epsilon > 0.0) {
        return Err(invalid("epsilon must be positive"));
    }
    let w0 = w2_distance(target, &tuning.stab, tuning.delta, x0, 0.0)?.total;
    let threshold = epsilon * epsilon * w0;
    let stages = tuning.stab.stages();
    let point = |n: u64| BudgetPoint {
        kappa: target.kappa(),
        stages,
        delta: tuning.delta,
        iterations: n,
        gradient_evals: n * stages as u64,
    };
    if w0 < threshold {
        return Ok(point(0));
    }
    let floor = w2_distance(target, &tuning.stab, tuning.delta, x0, f64::INFINITY)?.total;
    if floor >= threshold {
        return Err(Error::UnreachableAccuracy { floor, threshold });
    }
    let mut n = 1u64;
    while n <= MAX_BUDGET_STEPS {
        if w2_distance(target, &tuning.stab, tuning.delta, x0, n as f64)?.total < threshold {
            return Ok(point(n));
        }
        n += 1;
    }
    Err(Error::UnreachableAccuracy { floor, threshold })
}

/// Log-log least-squares slope of `ys` against `xs`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Rasterised mean-square stability domain, row `i` for `q2[i]`, column `j` for `p[j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityGrid {
    pub p: Vec<f64>,
    pub q2: Vec<f64>,
    pub stable: Vec<Vec<bool>>,
}

impl StabilityGrid {
    /// Most negative stable `p` on the row closest to `q2 = 0`.
    pub fn extent_at_q0(&self) -> Option<f64> {
        let row = self
            .q2
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .map(|(i, _)| i)?;
        self.p.iter().zip(&self.stable[row]).filter(|(_, s)| **s).map(|(p, _)| *p).reduce(f64::min)
    }
}

/// Marks `R(p, q) < 1` on the grid.
pub fn ms_stability_region(stab: &StabilityFunctions, p_grid: &[f64], q2_grid: &[f64]) -> Result<StabilityGrid> {
    if p_grid.iter().chain(q2_grid).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("stability grid".into()));
    }
    let stable = par::map_slice(q2_grid, |&q2| p_grid.iter().map(|&p| stab.ms_amplification(p, q2) < 1.0).collect());
    Ok(StabilityGrid { p: p_grid.to_vec(), q2: q2_grid.to_vec(), stable })
}

/// Sequential counterpart of [`ms_stability_region`].
pub fn ms_stability_region_seq(stab: &StabilityFunctions, p_grid: &[f64], q2_grid: &[f64]) -> StabilityGrid {
    let stable = q2_grid
        .iter()
        .map(|&q2| p_grid.iter().map(|&p| stab.ms_amplification(p, q2) < 1.0).collect())
        .collect();
    StabilityGrid { p: p_grid.to_vec(), q2: q2_grid.to_vec(), stable }
}

/// `n` evenly spaced points from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Default damping for the analysis helpers.
pub const ANALYSIS_ETA: f64 = DEFAULT_ETA;

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn em_functions() {
        let em = stability_em();
        assert_eq!(em.r1(-0.5), 0.5);
        assert_eq!(em.r2(-0.5), 1.0);
    }

    #[test]
    fn skrock_functions_at_zero_and_s1() {
        for s in 1..20 {
            for eta in [0.0, 0.05, 0.2] {
                let st = stability_skrock(s, eta).unwrap();
                assert_abs_diff_eq!(st.r1(0.0), 1.0, epsilon = 1e-12);
                assert_abs_diff_eq!(st.r2(0.0), 1.0, epsilon = 1e-12);
            }
        }
        let st = stability_skrock(1, 0.0).unwrap();
        for z in linspace(-2.0, 0.0, 101) {
            assert_abs_diff_eq!(st.r1(z), 1.0 + z, epsilon = 1e-14);
        }
    }

    #[test]
    fn w2_point_mass() {
        let t = GaussianTarget::new(vec![1.0, 0.25, 3.0]).unwrap();
        let x0 = [1.0, -2.0, 0.5];
        let r = w2_distance(&t, &stability_em(), 0.1, &x0, 0.0).unwrap();
        assert_abs_diff_eq!(r.total, 1.0 + 4.0 + 0.25 + 1.0 + 0.25 + 3.0, epsilon = 1e-12);
    }

    #[test]
    fn w2_em_limit() {
        let t = GaussianTarget::new(vec![1.0]).unwrap();
        let r = w2_distance(&t, &stability_em(), 0.5, &[1.0], f64::INFINITY).unwrap();
        let expect = (1.0 - (4.0f64 / 3.0).sqrt()).powi(2);
        assert_abs_diff_eq!(r.total, expect, epsilon = 1e-14);
        assert!((r.total - 0.02392).abs() < 2e-5);
        let big = w2_distance(&t, &stability_em(), 0.5, &[1.0], 1e6).unwrap();
        assert_abs_diff_eq!(big.total, expect, epsilon = 1e-14);
    }

    #[test]
    fn w2_small_step_limit() {
        let t = GaussianTarget::new(vec![1.0, 0.5]).unwrap();
        for stab in [stability_em(), stability_skrock(5, 0.05).unwrap()] {
            let mut last = f64::INFINITY;
            for delta in [1e-1, 1e-2, 1e-3, 1e-4, 1e-5] {
                let r = w2_distance(&t, &stab, delta, &[0.0, 0.0], f64::INFINITY).unwrap();
                assert!(r.total < last);
                last = r.total;
            }
            assert!(last < 1e-10, "{last}");
        }
    }

    #[test]
    fn w2_rejects_divergence() {
        let t = GaussianTarget::new(vec![1.0]).unwrap();
        assert!(matches!(w2_distance(&t, &stability_em(), 2.5, &[0.0], 3.0), Err(Error::Divergent { .. })));
        assert!(w2_distance(&t, &stability_em(), 2.5, &[0.0], 0.0).is_ok());
    }

    #[test]
    fn invariant_examples() {
        let t = GaussianTarget::new(vec![1.0]).unwrap();
        let inv = numerical_invariant(&t, &stability_em(), 0.5).unwrap();
        assert_abs_diff_eq!(inv.variances[0], 4.0 / 3.0, epsilon = 1e-14);
        let inv = numerical_invariant(&t, &stability_skrock(4, 0.05).unwrap(), 1e-7).unwrap();
        assert!((inv.variances[0] - 1.0).abs() < 1e-6);
        let inv = numerical_invariant(&t, &stability_skrock(4, 0.05).unwrap(), 0.0).unwrap();
        assert_eq!(inv.variances[0], 1.0);
    }

    #[test]
    fn contraction_examples() {
        let t = GaussianTarget::new(vec![1.0, 1e-2]).unwrap();
        let c = contraction_constant(&t, &stability_em(), 1.98e-2);
        assert_abs_diff_eq!(c, (1.0f64 - 0.0198).powi(2).max((1.0f64 - 1.98).powi(2)), epsilon = 1e-12);
        assert!((c - 0.96079).abs() < 1e-5);
        assert_eq!(contraction_constant(&t, &stability_skrock(3, 0.05).unwrap(), 0.0), 1.0);
        assert_eq!(contraction_constant(&t, &stability_em(), 0.0), 1.0);
    }

    #[test]
    fn skrock_tuned_contraction_at_kappa_100() {
        // 0.669 is the heuristic value; the exact slow-axis factor with the rounded
        // stage count is 1/T_2(1.0125)^2
        let t = GaussianTarget::new(vec![1.0, 1e-2]).unwrap();
        let (s, delta) = optimal_stage_and_step(100.0, 0.05, 1.0).unwrap();
        assert_eq!(s, 2);
        let c = contraction_constant(&t, &stability_skrock(s, 0.05).unwrap(), delta);
        let w0 = 1.0 + 0.05 / 4.0;
        let expect = 1.0 / cheb_t(2, w0).powi(2);
        assert_abs_diff_eq!(c, expect, epsilon = 1e-12);
    }

    #[test]
    fn stage_rule() {
        assert_eq!(optimal_stage_and_step(100.0, 0.05, 1.0).unwrap().0, 2);
        assert_eq!(optimal_stage_and_step(1e4, 0.05, 1.0).unwrap().0, 16);
        assert_eq!(optimal_stage_and_step(1.0, 0.05, 1.0).unwrap().0, 1);
        let (_, d) = optimal_stage_and_step(100.0, 0.05, 1.0).unwrap();
        assert!((d - 0.0482).abs() < 5e-4, "{d}");
        assert!(optimal_stage_and_step(0.5, 0.05, 1.0).is_err());
    }

    #[test]
    fn budget_examples() {
        let t = GaussianTarget::new(vec![1.0; 5]).unwrap();
        let x0 = vec![1.0; 5];
        // on an isotropic target the EM step 2/(L + ell) equals sigma^2 and reaches
        // its (biased) invariant law in a single step, while the stage rule gives
        // s = 1 with a much shorter step
        let em = gradient_budget_curve(&t, &Tuning::em(&t, 1.0), 0.3, &x0).unwrap();
        let sk = gradient_budget_curve(&t, &Tuning::skrock(&t, 0.05).unwrap(), 0.3, &x0).unwrap();
        assert_eq!(sk.stages, 1);
        assert_eq!(em.gradient_evals, 1);
        assert!(sk.gradient_evals > em.gradient_evals);
        let p = gradient_budget_curve(&t, &Tuning::em(&t, 1.0), 10.0, &x0).unwrap();
        assert_eq!(p.gradient_evals, 0);
    }

    #[test]
    fn budget_unreachable() {
        let t = GaussianTarget::new(vec![1.0]).unwrap();
        let tuning = Tuning { stab: stability_em(), delta: 1.5 };
        assert!(matches!(
            gradient_budget_curve(&t, &tuning, 1e-3, &[1.0]),
            Err(Error::UnreachableAccuracy { .. })
        ));
    }

    #[test]
    fn em_region_is_disc() {
        let p = linspace(-2.5, 0.5, 121);
        let q2 = linspace(0.0, 1.5, 61);
        let g = ms_stability_region(&stability_em(), &p, &q2).unwrap();
        for (i, &qq) in q2.iter().enumerate() {
            for (j, &pp) in p.iter().enumerate() {
                assert_eq!(g.stable[i][j], (1.0 + pp).powi(2) + qq < 1.0);
            }
        }
        assert_eq!(g, ms_stability_region_seq(&stability_em(), &p, &q2));
    }

    #[test]
    fn em_region_examples() {
        let em = stability_em();
        assert!(em.ms_amplification(-1.0, 0.0) < 1.0);
        assert!(em.ms_amplification(-3.0, 0.0) > 1.0);
        let sk = stability_skrock(10, 0.05).unwrap();
        assert!(sk.ms_amplification(-100.0, 0.0) < 1.0);
    }

    #[test]
    fn skrock_extent_grows_quadratically() {
        for s in [5usize, 10, 20] {
            let sk = stability_skrock(s, 0.05).unwrap();
            let ls = crate::chebyshev::stability_interval(s, 0.05);
            let p = linspace(-1.2 * ls, 0.0, 4001);
            let g = ms_stability_region(&sk, &p, &[0.0]).unwrap();
            assert!(g.extent_at_q0().unwrap() <= -0.9 * ls, "s={s}");
        }
    }

    #[test]
    fn bn_monotone_bracket() {
        // the bracket sigma - sqrt(var_n) decreases toward its stationary value
        let t = GaussianTarget::new(vec![1.0, 0.1, 0.01]).unwrap();
        for stab in [stability_em(), stability_skrock(3, 0.05).unwrap()] {
            let delta = match stab.method() {
                Method::Em => 0.015,
                Method::Skrock { .. } => 0.09,
            };
            let ax = axes(&t, &stab, delta);
            for a in &ax {
                let mut last = f64::INFINITY;
                for n in 0..300 {
                    let v = a.sigma - marginal_variance(a, delta, n as f64).sqrt();
                    assert!(v <= last + 1e-15);
                    last = v;
                }
            }
        }
    }

    #[test]
    fn em_bound_random_targets() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let d = rng.random_range(1..30);
            let t = GaussianTarget::new((0..d).map(|_| 10f64.powf(rng.random_range(-3.0..0.0))).collect()).unwrap();
            let x0: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let tu = Tuning::em(&t, 1.0);
            let bias = asymptotic_bias(&t, &tu.stab, tu.delta).unwrap();
            let c = contraction_constant(&t, &tu.stab, tu.delta);
            for n in 0..100 {
                let lhs = w2_distance(&t, &tu.stab, tu.delta, &x0, (n + 1) as f64).unwrap().total;
                let rhs = bias + c * w2_to_invariant(&t, &tu.stab, tu.delta, &x0, n as f64).unwrap();
                assert!(lhs <= rhs + 1e-10);
            }
        }
    }

    proptest! {
        #[test]
        fn w2_terms_nonnegative(v in 1e-3f64..10.0, x in -3.0f64..3.0, n in 0u32..500, frac in 0.01f64..0.99) {
            let t = GaussianTarget::new(vec![v]).unwrap();
            let delta = frac * 2.0 * v;
            let r = w2_distance(&t, &stability_em(), delta, &[x], n as f64).unwrap();
            prop_assert!(r.d[0] >= 0.0 && r.b[0] >= 0.0);
            prop_assert!((r.total - r.d[0] - r.b[0]).abs() < 1e-12);
        }
    }
}
