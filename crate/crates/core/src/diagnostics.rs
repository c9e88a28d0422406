//! Chain diagnostics: autocorrelation, ESS, histogram KL, MSE traces and
//! slow/fast component extraction.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::par;

fn centred(series: &[f64]) -> Result<Vec<f64>> {
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("series".into()));
    }
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let c: Vec<f64> = series.iter().map(|v| v - mean).collect();
    let var = c.iter().map(|v| v * v).sum::<f64>();
    let scale = series.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-300);
    if var <= (1e-14 * scale) * (1e-14 * scale) * n {
        return Err(Error::Degenerate("series has zero variance".into()));
    }
    Ok(c)
}

/// Biased autocovariance of a centred series at every lag, via zero-padded FFT.
fn autocovariance_fft(c: &[f64]) -> Vec<f64> {
    let n = c.len();
    let m = (2 * n).next_power_of_two();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(m);
    let inv = planner.plan_fft_inverse(m);
    let mut buf: Vec<Complex<f64>> = c.iter().map(|&v| Complex::new(v, 0.0)).collect();
    buf.resize(m, Complex::new(0.0, 0.0));
    fwd.process(&mut buf);
    for v in buf.iter_mut() {
        *v = Complex::new(v.norm_sqr(), 0.0);
    }
    inv.process(&mut buf);
    let norm = (m * n) as f64;
    buf[..n].iter().map(|v| v.re / norm).collect()
}

/// Normalised autocorrelation at lags `0..=max_lag`.
pub fn autocorrelation(series: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    if series.len() <= max_lag {
        return Err(invalid(format!("series of length {} too short for lag {max_lag}", series.len())));
    }
    let c = centred(series)?;
    let acov = autocovariance_fft(&c);
    Ok(acov[..=max_lag].iter().map(|v| v / acov[0]).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EssEstimate {
    pub ess: f64,
    pub n: usize,
    /// Set when the estimate exceeds the number of draws (antithetic chains).
    pub supereffective: bool,
}

/// Effective sample size `n / (1 + 2 sum rho(k))` with the initial monotone
/// sequence truncation.
pub fn effective_sample_size(series: &[f64]) -> Result<EssEstimate> {
    effective_sample_size_chains(&[series])
}

/// Combined ESS of independent chains of equal length. Autocorrelations are
/// taken against `var+ = (n-1)/n W + B/n`, so chains that have not mixed
/// (between-chain spread `B` large against within-chain `W`) count for less.
/// A single chain gives the ordinary estimate.
pub fn effective_sample_size_chains(chains: &[&[f64]]) -> Result<EssEstimate> {
    let m = chains.len();
    if m == 0 {
        return Err(invalid("need at least one chain"));
    }
    let n = chains[0].len();
    if chains.iter().any(|c| c.len() != n) {
        return Err(invalid("chains must have equal length"));
    }
    if n < 10 {
        return Err(invalid(format!("need at least 10 draws for ESS, got {n}")));
    }
    let mut means = Vec::with_capacity(m);
    let mut acovs = Vec::with_capacity(m);
    for c in chains {
        let cc = centred(c).or_else(|e| if m > 1 { Ok(c.iter().map(|_| 0.0).collect()) } else { Err(e) })?;
        means.push(c.iter().sum::<f64>() / n as f64);
        acovs.push(autocovariance_fft(&cc));
    }
    let nf = n as f64;
    let w = acovs.iter().map(|a| a[0] * nf / (nf - 1.0)).sum::<f64>() / m as f64;
    let mut var_plus = w * (nf - 1.0) / nf;
    if m > 1 {
        let grand = means.iter().sum::<f64>() / m as f64;
        var_plus += means.iter().map(|v| (v - grand) * (v - grand)).sum::<f64>() / (m as f64 - 1.0);
    }
    if !(var_plus > 0.0) {
        return Err(Error::Degenerate("chains have zero variance".into()));
    }
    let rho = |t: usize| -> f64 {
        if t == 0 {
            return 1.0;
        }
        let mean_acov = acovs.iter().map(|a| a[t]).sum::<f64>() / m as f64;
        1.0 - (w - mean_acov) / var_plus
    };

    let mut sum = 0.0;
    let mut prev = f64::INFINITY;
    let mut k = 0;
    while 2 * k + 1 < n {
        let pair = rho(2 * k) + rho(2 * k + 1);
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev);
        sum += pair;
        prev = pair;
        k += 1;
    }
    let total = (m * n) as f64;
    // tau = -1 + 2 sum of pairs, floored as in common practice so ESS stays finite
    let tau = (2.0 * sum - 1.0).max(1.0 / total.log10());
    let ess = total / tau;
    Ok(EssEstimate { ess, n: m * n, supereffective: ess > total })
}

/// Keeps every `step`-th element, starting with the last of the first block.
pub fn thin(series: &[f64], step: usize) -> Vec<f64> {
    let step = step.max(1);
    series.iter().skip(step - 1).step_by(step).copied().collect()
}

/// Mass of `[a, b]` under `density` by composite midpoint rule, refined until
/// successive estimates agree to `1e-8` relative.
fn bin_mass(density: &(dyn Fn(f64) -> f64 + Sync), a: f64, b: f64) -> f64 {
    let mut m = 8usize;
    let mut last = midpoint(density, a, b, m);
    for _ in 0..16 {
        m *= 2;
        let next = midpoint(density, a, b, m);
        if (next - last).abs() <= 1e-8 * next.abs().max(1e-300) {
            return next;
        }
        last = next;
    }
    last
}

fn midpoint(density: &(dyn Fn(f64) -> f64 + Sync), a: f64, b: f64, m: usize) -> f64 {
    let h = (b - a) / m as f64;
    (0..m).map(|i| density(a + (i as f64 + 0.5) * h)).sum::<f64>() * h
}

/// Discrete `KL(empirical || target)` over `n_bins` equal-width bins spanning
/// the union of `support` and the sample range. The target density may be
/// unnormalised.
pub fn kl_vs_target_1d(samples: &[f64], target_density: &(dyn Fn(f64) -> f64 + Sync), n_bins: usize, support: (f64, f64)) -> Result<f64> {
    if n_bins < 10 {
        return Err(invalid("need at least 10 bins"));
    }
    if samples.is_empty() {
        return Err(invalid("no samples"));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("samples".into()));
    }
    let smin = samples.iter().cloned().fold(f64::INFINITY, f64::min);
    let smax = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = support.0.min(smin);
    let hi = support.1.max(smax);
    if !(hi > lo) {
        return Err(invalid("empty histogram range"));
    }
    let width = (hi - lo) / n_bins as f64;
    let mut counts = vec![0u64; n_bins];
    for &x in samples {
        let i = (((x - lo) / width) as usize).min(n_bins - 1);
        counts[i] += 1;
    }
    let masses: Vec<f64> = par::map_range(n_bins, |i| {
        let a = lo + i as f64 * width;
        bin_mass(target_density, a, a + width)
    });
    let total_mass: f64 = masses.iter().sum();
    if !(total_mass > 0.0) {
        return Err(Error::Degenerate("target has no mass on the histogram range".into()));
    }
    let n = samples.len() as f64;
    let mut kl = 0.0;
    for (c, m) in counts.iter().zip(&masses) {
        if *c == 0 {
            continue;
        }
        let p = *c as f64 / n;
        let q = m / total_mass;
        if q <= 0.0 {
            return Ok(f64::INFINITY);
        }
        kl += p * (p / q).ln();
    }
    Ok(kl.max(0.0))
}

/// Running-mean MSE tracker: after each pushed sample records
/// `(cumulative gradient evaluations, |mean - truth|^2 / d)`.
#[derive(Debug, Clone)]
pub struct MseTracker {
    truth: Vec<f64>,
    mean: Vec<f64>,
    count: u64,
    budget_per_sample: u64,
    pub curve: Vec<(u64, f64)>,
}

impl MseTracker {
    pub fn new(truth: Vec<f64>, budget_per_sample: u64) -> Self {
        let d = truth.len();
        Self { truth, mean: vec![0.0; d], count: 0, budget_per_sample, curve: Vec::new() }
    }

    pub fn push(&mut self, x: &[f64]) {
        self.count += 1;
        let w = 1.0 / self.count as f64;
        let mut err = 0.0;
        for ((m, v), t) in self.mean.iter_mut().zip(x).zip(&self.truth) {
            *m += (v - *m) * w;
            err += (*m - t) * (*m - t);
        }
        self.curve.push((self.count * self.budget_per_sample, err / self.truth.len() as f64));
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }
}

/// MSE of the running posterior-mean estimate after each stored sample.
pub fn mse_trace(samples: &[f64], truth: &[f64], budget_per_sample: u64) -> Result<Vec<(u64, f64)>> {
    let d = truth.len();
    if d == 0 || samples.len() % d != 0 {
        return Err(Error::ShapeMismatch { expected: d, got: samples.len() });
    }
    let mut t = MseTracker::new(truth.to_vec(), budget_per_sample);
    for row in samples.chunks_exact(d) {
        t.push(row);
    }
    Ok(t.curve)
}

/// Interpolated value of a step curve at budget `b` (last point at or before `b`).
pub fn curve_at(curve: &[(u64, f64)], b: u64) -> Option<f64> {
    let i = curve.partition_point(|(x, _)| *x <= b);
    (i > 0).then(|| curve[i - 1].1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Components {
    pub slow: Vec<f64>,
    pub fast: Vec<f64>,
    pub slow_variance: f64,
    pub fast_variance: f64,
    /// False when the trailing direction is not identifiable (rank-deficient
    /// samples or unconverged iteration).
    pub fast_reliable: bool,
}

/// Row-major sample matrix with column means removed.
struct Centred<'a> {
    rows: &'a [f64],
    n: usize,
    d: usize,
    mean: Vec<f64>,
}

impl Centred<'_> {
    /// `C v` for the sample covariance `C = Xc^T Xc / n`.
    fn cov_apply(&self, v: &[f64]) -> Vec<f64> {
        let d = self.d;
        let mu_v: f64 = self.mean.iter().zip(v).map(|(a, b)| a * b).sum();
        let coef: Vec<f64> = par::map_range(self.n, |i| {
            let r = &self.rows[i * d..(i + 1) * d];
            r.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() - mu_v
        });
        let chunk = 256usize;
        let blocks = self.n.div_ceil(chunk);
        let partial: Vec<Vec<f64>> = par::map_range(blocks, |b| {
            let mut acc = vec![0.0; d];
            for i in b * chunk..((b + 1) * chunk).min(self.n) {
                let r = &self.rows[i * d..(i + 1) * d];
                let c = coef[i];
                for ((a, x), m) in acc.iter_mut().zip(r).zip(&self.mean) {
                    *a += c * (x - m);
                }
            }
            acc
        });
        let mut out = vec![0.0; d];
        for p in partial {
            for (o, v) in out.iter_mut().zip(p) {
                *o += v;
            }
        }
        let inv = 1.0 / self.n as f64;
        out.iter_mut().for_each(|v| *v *= inv);
        out
    }
}

fn column_means(rows: &[f64], n: usize, d: usize) -> Vec<f64> {
    let mut mean = vec![0.0; d];
    for r in rows.chunks_exact(d) {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    mean
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let nrm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / nrm).collect()
}

/// Dense eigen-decomposition of the sample covariance; small dimensions only.
pub fn slow_fast_dense(samples: &[f64], n: usize, d: usize) -> Result<Components> {
    check_matrix(samples, n, d)?;
    let mean = column_means(samples, n, d);
    let x = DMatrix::from_fn(n, d, |i, j| samples[i * d + j] - mean[j]);
    let cov = x.transpose() * &x / n as f64;
    let eig = SymmetricEigen::new(cov);
    let (imax, imin) = argmax_argmin(eig.eigenvalues.as_slice());
    let lmax = eig.eigenvalues[imax];
    let lmin = eig.eigenvalues[imin];
    Ok(Components {
        slow: eig.eigenvectors.column(imax).iter().copied().collect(),
        fast: eig.eigenvectors.column(imin).iter().copied().collect(),
        slow_variance: lmax,
        fast_variance: lmin,
        fast_reliable: n > d && lmin > 1e-12 * lmax,
    })
}

fn argmax_argmin(v: &[f64]) -> (usize, usize) {
    let mut imax = 0;
    let mut imin = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[imax] {
            imax = i;
        }
        if *x < v[imin] {
            imin = i;
        }
    }
    (imax, imin)
}

fn check_matrix(samples: &[f64], n: usize, d: usize) -> Result<()> {
    if n < 2 || d < 2 {
        return Err(invalid("need at least two samples of dimension at least two"));
    }
    if samples.len() != n * d {
        return Err(Error::ShapeMismatch { expected: n * d, got: samples.len() });
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("samples".into()));
    }
    Ok(())
}

struct Extremes {
    lmax: f64,
    vmax: Vec<f64>,
    lmin: f64,
    vmin: Vec<f64>,
    res_min: f64,
}

/// Lanczos iteration with full reorthogonalisation from a seeded random start;
/// returns both extreme Ritz pairs of a symmetric operator.
fn lanczos_extremes<F>(apply: F, d: usize, max_iter: usize, tol: f64, seed: u64) -> Extremes
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m_max = max_iter.clamp(1, d);
    let start: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
    let mut basis: Vec<Vec<f64>> = vec![unit(start)];
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();

    let ritz = |alpha: &[f64], beta: &[f64]| {
        let m = alpha.len();
        let t = DMatrix::from_fn(m, m, |i, j| {
            if i == j {
                alpha[i]
            } else if i + 1 == j {
                beta[i]
            } else if j + 1 == i {
                beta[j]
            } else {
                0.0
            }
        });
        SymmetricEigen::new(t)
    };

    loop {
        let j = alpha.len();
        let mut w = apply(&basis[j]);
        let a = dot(&w, &basis[j]);
        alpha.push(a);
        for _ in 0..2 {
            for q in &basis {
                let c = dot(&w, q);
                w.iter_mut().zip(q).for_each(|(x, y)| *x -= c * y);
            }
        }
        let b = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        let m = alpha.len();
        let scale = alpha.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-300);
        let exhausted = m == m_max || b <= 1e-13 * scale;
        if exhausted || m % 10 == 0 {
            let eig = ritz(&alpha, &beta);
            let (imax, imin) = argmax_argmin(eig.eigenvalues.as_slice());
            let res = |i: usize| (b * eig.eigenvectors[(m - 1, i)]).abs();
            let (rmax, rmin) = (res(imax), res(imin));
            let lmax = eig.eigenvalues[imax];
            if exhausted || (rmax <= tol * lmax.abs() && rmin <= tol * lmax.abs()) {
                let vec_of = |i: usize| {
                    let mut v = vec![0.0; d];
                    for (k, q) in basis.iter().enumerate() {
                        let c = eig.eigenvectors[(k, i)];
                        v.iter_mut().zip(q).for_each(|(x, y)| *x += c * y);
                    }
                    unit(v)
                };
                return Extremes {
                    lmax,
                    vmax: vec_of(imax),
                    lmin: eig.eigenvalues[imin],
                    vmin: vec_of(imin),
                    res_min: if b <= 1e-13 * scale { 0.0 } else { rmin },
                };
            }
        }
        beta.push(b);
        basis.push(w.into_iter().map(|x| x / b).collect());
    }
}

/// Leading and trailing principal directions of a sample matrix without
/// forming the covariance, by Lanczos on `v -> Xc^T Xc v / n`.
pub fn slow_fast_matrix_free(samples: &[f64], n: usize, d: usize, max_iter: usize) -> Result<Components> {
    check_matrix(samples, n, d)?;
    let c = Centred { rows: samples, n, d, mean: column_means(samples, n, d) };
    let e = lanczos_extremes(|v| c.cov_apply(v), d, max_iter, 1e-10, 0x51);
    let fast_reliable = n > d && e.lmin > 1e-12 * e.lmax && e.res_min <= 1e-6 * e.lmax;
    Ok(Components { slow: e.vmax, fast: e.vmin, slow_variance: e.lmax, fast_variance: e.lmin, fast_reliable })
}

/// Largest dimension handled by the dense path of [`slow_fast_components`].
pub const DENSE_LIMIT: usize = 256;

/// Leading (slow) and trailing (fast) principal directions of `n` stored samples of dimension `d`.
pub fn slow_fast_components(samples: &[f64], n: usize, d: usize) -> Result<Components> {
    if d <= DENSE_LIMIT {
        slow_fast_dense(samples, n, d)
    } else {
        slow_fast_matrix_free(samples, n, d, 400)
    }
}

/// Per-trace diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub label: String,
    pub gradient_evals: u64,
    pub component_names: Vec<String>,
    pub ess: Vec<f64>,
    pub supereffective: Vec<bool>,
    pub acf: Vec<Vec<f64>>,
    pub kl_divergence: Option<f64>,
    pub mse_trace: Vec<(u64, f64)>,
    pub slow_direction: Option<Vec<f64>>,
    pub fast_direction: Option<Vec<f64>>,
}

impl DiagnosticsReport {
    /// ESS and ACF of each named scalar series.
    pub fn from_series(label: &str, gradient_evals: u64, series: &[(String, Vec<f64>)], max_lag: usize) -> Result<Self> {
        let results: Vec<Result<(EssEstimate, Vec<f64>)>> = par::map_slice(series, |(_, s)| {
            let ess = effective_sample_size(s)?;
            let acf = autocorrelation(s, max_lag.min(s.len() - 1))?;
            Ok((ess, acf))
        });
        let mut ess = Vec::new();
        let mut sup = Vec::new();
        let mut acf = Vec::new();
        for r in results {
            let (e, a) = r?;
            ess.push(e.ess);
            sup.push(e.supereffective);
            acf.push(a);
        }
        Ok(Self {
            label: label.to_string(),
            gradient_evals,
            component_names: series.iter().map(|(n, _)| n.clone()).collect(),
            ess,
            supereffective: sup,
            acf,
            kl_divergence: None,
            mse_trace: Vec::new(),
            slow_direction: None,
            fast_direction: None,
        })
    }
}

/// Candidate ESS over reference ESS, per component.
pub fn speedup_report(reference: &DiagnosticsReport, candidate: &DiagnosticsReport) -> Result<Vec<f64>> {
    if reference.gradient_evals != candidate.gradient_evals {
        return Err(Error::BudgetMismatch { reference: reference.gradient_evals, candidate: candidate.gradient_evals });
    }
    if reference.ess.len() != candidate.ess.len() {
        return Err(Error::ShapeMismatch { expected: reference.ess.len(), got: candidate.ess.len() });
    }
    Ok(candidate.ess.iter().zip(&reference.ess).map(|(c, r)| c / r).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn normals(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    fn ar1(n: usize, rho: f64, seed: u64) -> Vec<f64> {
        let z = normals(n, seed);
        let mut out = Vec::with_capacity(n);
        let mut x = z[0] / (1.0 - rho * rho).sqrt();
        for v in z {
            x = rho * x + v;
            out.push(x);
        }
        out
    }

    #[test]
    fn acf_white_noise() {
        let a = autocorrelation(&normals(100_000, 1), 20).unwrap();
        assert_eq!(a[0], 1.0);
        assert!(a[1..].iter().all(|v| v.abs() < 0.02));
    }

    #[test]
    fn acf_matches_direct_sum() {
        let s = ar1(500, 0.5, 3);
        let a = autocorrelation(&s, 30).unwrap();
        let m = s.iter().sum::<f64>() / 500.0;
        let c0: f64 = s.iter().map(|v| (v - m) * (v - m)).sum();
        for k in 0..=30 {
            let ck: f64 = (0..500 - k).map(|i| (s[i] - m) * (s[i + k] - m)).sum();
            assert_abs_diff_eq!(a[k], ck / c0, epsilon = 1e-12);
        }
    }

    #[test]
    fn acf_ar1() {
        let a = autocorrelation(&ar1(1_000_000, 0.9, 2), 20).unwrap();
        for (k, v) in a.iter().enumerate() {
            assert!((v - 0.9f64.powi(k as i32)).abs() < 0.01, "lag {k}");
        }
    }

    #[test]
    fn acf_rejects_constant_and_short() {
        assert!(matches!(autocorrelation(&[2.0; 50], 5), Err(Error::Degenerate(_))));
        assert!(autocorrelation(&[1.0, 2.0], 5).is_err());
    }

    #[test]
    fn ess_iid() {
        let n = 100_000;
        let e = effective_sample_size(&normals(n, 4)).unwrap();
        assert!((e.ess / n as f64 - 1.0).abs() < 0.1, "{}", e.ess);
    }

    #[test]
    fn ess_ar1() {
        let n = 1_000_000;
        let rho = 0.9;
        let e = effective_sample_size(&ar1(n, rho, 5)).unwrap();
        let expect = n as f64 * (1.0 - rho) / (1.0 + rho);
        assert!((e.ess / expect - 1.0).abs() < 0.1, "{} vs {expect}", e.ess);
    }

    #[test]
    fn ess_alternating() {
        let s: Vec<f64> = (0..1000).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let e = effective_sample_size(&s).unwrap();
        assert!(e.supereffective);
        assert!(e.ess > 1000.0 && e.ess.is_finite());
    }

    #[test]
    fn ess_chains_add_up() {
        let rho = 0.8;
        let chains: Vec<Vec<f64>> = (0..4).map(|k| ar1(200_000, rho, 30 + k)).collect();
        let refs: Vec<&[f64]> = chains.iter().map(Vec::as_slice).collect();
        let e = effective_sample_size_chains(&refs).unwrap();
        let expect = 800_000.0 * (1.0 - rho) / (1.0 + rho);
        assert!((e.ess / expect - 1.0).abs() < 0.1, "{} vs {expect}", e.ess);
    }

    #[test]
    fn ess_chains_penalise_separated_chains() {
        // each chain mixes locally but they sit at different levels
        let chains: Vec<Vec<f64>> = (0..4).map(|k| normals(1000, 40 + k).iter().map(|v| v + 10.0 * k as f64).collect()).collect();
        let refs: Vec<&[f64]> = chains.iter().map(Vec::as_slice).collect();
        let pooled = effective_sample_size_chains(&refs).unwrap().ess;
        let separate: f64 = refs.iter().map(|c| effective_sample_size(c).unwrap().ess).sum();
        assert!(pooled < 0.05 * separate, "{pooled} vs {separate}");
    }

    #[test]
    fn ess_rejects_bad_input() {
        assert!(effective_sample_size_chains(&[]).is_err());
        assert!(effective_sample_size_chains(&[&[0.0, 1.0, 2.0, 0.5, 1.0, 2.0, 3.0, 1.0, 0.0, 1.0], &[1.0; 11]]).is_err());
        assert!(effective_sample_size(&[1.0; 5]).is_err());
        assert!(effective_sample_size(&[3.0; 50]).is_err());
    }

    #[test]
    fn thinning() {
        let s: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(thin(&s, 3), vec![3.0, 6.0, 9.0]);
        assert_eq!(thin(&s, 1), s);
    }

    #[test]
    fn kl_exact_samples() {
        let s = normals(1_000_000, 6);
        let dens = |x: f64| (-0.5 * x * x).exp();
        let kl = kl_vs_target_1d(&s, &dens, 100, (-6.0, 6.0)).unwrap();
        assert!(kl < 1e-3, "{kl}");
    }

    #[test]
    fn kl_point_mass_vs_uniform() {
        let s = vec![0.05; 1000];
        let kl = kl_vs_target_1d(&s, &|_| 1.0, 10, (0.0, 1.0)).unwrap();
        assert_abs_diff_eq!(kl, (10f64).ln(), epsilon = 1e-10);
        let kl = kl_vs_target_1d(&vec![0.5; 10], &|_| 1.0, 100, (0.0, 1.0)).unwrap();
        assert_abs_diff_eq!(kl, (100f64).ln(), epsilon = 1e-8);
    }

    #[test]
    fn mse_examples() {
        let truth = vec![2.0, -1.0];
        let samples: Vec<f64> = (0..10).flat_map(|_| truth.clone()).collect();
        let c = mse_trace(&samples, &truth, 15).unwrap();
        assert!(c.iter().all(|(_, v)| *v == 0.0));
        assert_eq!(c[0].0, 15);
        assert_eq!(c[9].0, 150);

        let d = 50;
        let n = 2000;
        let z = normals(n * d, 7);
        let c = mse_trace(&z, &vec![0.0; d], 1).unwrap();
        for &k in &[10usize, 100, 1000, 2000] {
            let v = c[k - 1].1;
            // d * v ~ chi^2_d / k, relative sd sqrt(2/d) = 0.2
            assert!((v * k as f64 - 1.0).abs() < 0.8, "k={k} {v}");
        }
        assert_eq!(curve_at(&c, 0), None);
        assert_eq!(curve_at(&c, 10), Some(c[9].1));
    }

    fn gaussian_samples(n: usize, sd: &[f64], rot: Option<&DMatrix<f64>>, seed: u64) -> Vec<f64> {
        let d = sd.len();
        let z = normals(n * d, seed);
        let mut out = Vec::with_capacity(n * d);
        for r in z.chunks_exact(d) {
            let v = DVector::from_iterator(d, r.iter().zip(sd).map(|(a, s)| a * s));
            let v = match rot {
                Some(q) => q * v,
                None => v,
            };
            out.extend(v.iter());
        }
        out
    }

    fn angle(a: &[f64], b: &[f64]) -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        dot.abs().min(1.0).acos()
    }

    #[test]
    fn slow_fast_axis_aligned() {
        let s = gaussian_samples(10_000, &[1.0, 1e-2], None, 8);
        let c = slow_fast_components(&s, 10_000, 2).unwrap();
        assert!(angle(&c.slow, &[1.0, 0.0]) < 5f64.to_radians());
        assert!(angle(&c.fast, &[0.0, 1.0]) < 5f64.to_radians());
        assert!(c.fast_reliable);
    }

    #[test]
    fn slow_fast_isotropic_orthogonal() {
        let s = gaussian_samples(5000, &[1.0; 4], None, 9);
        let c = slow_fast_components(&s, 5000, 4).unwrap();
        let dot: f64 = c.slow.iter().zip(&c.fast).map(|(a, b)| a * b).sum();
        assert!(dot.abs() < 1e-8);
        assert_abs_diff_eq!(c.slow.iter().map(|v| v * v).sum::<f64>(), 1.0, epsilon = 1e-10);
    }

    #[test]
    fn matrix_free_matches_dense() {
        let d = 40;
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let g = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
        let q = g.qr().q();
        let sd: Vec<f64> = (0..d).map(|i| 3.0 * 0.9f64.powi(i as i32)).collect();
        let n = 3000;
        let s = gaussian_samples(n, &sd, Some(&q), 11);
        let dense = slow_fast_dense(&s, n, d).unwrap();
        let mf = slow_fast_matrix_free(&s, n, d, 400).unwrap();
        assert!(angle(&dense.slow, &mf.slow) < 1e-6, "{}", angle(&dense.slow, &mf.slow));
        assert!(angle(&dense.fast, &mf.fast) < 1e-6, "{}", angle(&dense.fast, &mf.fast));
        assert!(mf.fast_reliable);
        let dot: f64 = mf.slow.iter().zip(&mf.fast).map(|(a, b)| a * b).sum();
        assert!(dot.abs() < 1e-8);
    }

    #[test]
    fn rank_deficient_flagged() {
        let s = gaussian_samples(5, &[1.0; 10], None, 12);
        let c = slow_fast_dense(&s, 5, 10).unwrap();
        assert!(!c.fast_reliable);
        let c = slow_fast_matrix_free(&s, 5, 10, 200).unwrap();
        assert!(!c.fast_reliable);
    }

    #[test]
    fn speedup_checks_budget() {
        let s = ar1(2000, 0.5, 13);
        let r = DiagnosticsReport::from_series("a", 100, &[("x".into(), s.clone())], 10).unwrap();
        assert_eq!(speedup_report(&r, &r).unwrap(), vec![1.0]);
        let mut other = r.clone();
        other.gradient_evals = 101;
        assert!(matches!(speedup_report(&r, &other), Err(Error::BudgetMismatch { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn ess_affine_invariant(seed in 0u64..1000, a in prop_oneof![-5.0f64..-0.1, 0.1f64..5.0], b in -10.0f64..10.0) {
            let s = ar1(2000, 0.6, seed);
            let t: Vec<f64> = s.iter().map(|v| a * v + b).collect();
            let e1 = effective_sample_size(&s).unwrap().ess;
            let e2 = effective_sample_size(&t).unwrap().ess;
            prop_assert!((e1 - e2).abs() <= 1e-6 * e1);
        }

        #[test]
        fn kl_permutation_invariant(seed in 0u64..1000) {
            let mut s = normals(500, seed);
            let dens = |x: f64| (-0.5 * x * x).exp();
            let k1 = kl_vs_target_1d(&s, &dens, 20, (-4.0, 4.0)).unwrap();
            s.reverse();
            s.swap(0, 250);
            let k2 = kl_vs_target_1d(&s, &dens, 20, (-4.0, 4.0)).unwrap();
            prop_assert!((k1 - k2).abs() < 1e-12);
        }
    }
}
