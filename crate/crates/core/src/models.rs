//! Target densities `pi(x) ∝ exp(-f(x) - g(x))` and their Moreau-Yosida
//! regularisation `pi^lambda`.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{invalid, Error, Result};
use crate::operators::LinearOperator;
use crate::prox::{
    envelope_value_at, BoxIndicator, CompositePenalty, L1Penalty, Penalty, Shape, TvPenalty, TvSolver,
};

/// The smooth, Lipschitz-differentiable part `f`.
pub trait SmoothTerm: Send + Sync {
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
    /// Lipschitz constant `L_f` of the gradient.
    fn lipschitz(&self) -> f64;
}

/// `f = 0`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroSmooth;

impl SmoothTerm for ZeroSmooth {
    fn value(&self, _x: &[f64]) -> f64 {
        0.0
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        vec![0.0; x.len()]
    }

    fn lipschitz(&self) -> f64 {
        0.0
    }
}

/// Diagonal Gaussian target with per-axis variances.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GaussianTarget {
    pub variances: Vec<f64>,
    pub mean: Vec<f64>,
}

impl GaussianTarget {
    pub fn new(variances: Vec<f64>) -> Result<Self> {
        if variances.is_empty() {
            return Err(invalid("gaussian target needs at least one axis"));
        }
        if let Some(v) = variances.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
            return Err(invalid(format!("variances must be positive and finite, got {v}")));
        }
        let mean = vec![0.0; variances.len()];
        Ok(Self { variances, mean })
    }

    pub fn dimension(&self) -> usize {
        self.variances.len()
    }

    /// Condition number `max var / min var`.
    pub fn kappa(&self) -> f64 {
        let max = self.variances.iter().cloned().fold(f64::MIN, f64::max);
        let min = self.variances.iter().cloned().fold(f64::MAX, f64::min);
        max / min
    }

    pub fn max_variance(&self) -> f64 {
        self.variances.iter().cloned().fold(f64::MIN, f64::max)
    }

    pub fn min_variance(&self) -> f64 {
        self.variances.iter().cloned().fold(f64::MAX, f64::min)
    }

    /// Target whose variances are spread uniformly between `1` and `1 / kappa`.
    pub fn spread(dimension: usize, kappa: f64) -> Result<Self> {
        if dimension == 0 || !(kappa >= 1.0) {
            return Err(invalid("spread target needs dimension >= 1 and kappa >= 1"));
        }
        let lo = 1.0 / kappa;
        let variances = if dimension == 1 {
            vec![1.0]
        } else {
            (0..dimension)
                .map(|i| 1.0 - (1.0 - lo) * i as f64 / (dimension - 1) as f64)
                .collect()
        };
        Self::new(variances)
    }
}

impl SmoothTerm for GaussianTarget {
    fn value(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(&self.mean)
            .zip(&self.variances)
            .map(|((xi, m), v)| (xi - m) * (xi - m) / (2.0 * v))
            .sum()
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.variances)
            .map(|((xi, m), v)| (xi - m) / v)
            .collect()
    }

    fn lipschitz(&self) -> f64 {
        1.0 / self.min_variance()
    }
}

/// Gaussian likelihood `|y - A x|^2 / (2 sigma^2)`.
pub struct LeastSquares {
    pub operator: Box<dyn LinearOperator>,
    pub y: Vec<f64>,
    pub sigma: f64,
}

impl LeastSquares {
    fn residual(&self, x: &[f64]) -> Vec<f64> {
        let ax = self.operator.apply(x);
        ax.iter().zip(&self.y).map(|(a, b)| a - b).collect()
    }
}

impl SmoothTerm for LeastSquares {
    fn value(&self, x: &[f64]) -> f64 {
        let r = self.residual(x);
        r.iter().map(|v| v * v).sum::<f64>() / (2.0 * self.sigma * self.sigma)
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let r = self.residual(x);
        let s2 = self.sigma * self.sigma;
        self.operator.apply_adjoint(&r).into_iter().map(|v| v / s2).collect()
    }

    fn lipschitz(&self) -> f64 {
        self.operator.operator_norm_sq() / (self.sigma * self.sigma)
    }
}

/// Posterior with smooth term `f`, optional non-smooth term `g` and smoothing `lambda`.
pub struct PosteriorModel {
    dimension: usize,
    smooth: Box<dyn SmoothTerm>,
    penalty: Option<Box<dyn Penalty>>,
    lambda: f64,
    grad_evals: AtomicU64,
    image: Option<(Shape, usize)>,
}

impl std::fmt::Debug for PosteriorModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PosteriorModel")
            .field("dimension", &self.dimension)
            .field("lipschitz_f", &self.smooth.lipschitz())
            .field("penalty", &self.penalty.as_ref().map(|p| p.name().to_string()))
            .field("lambda", &self.lambda)
            .finish()
    }
}

impl PosteriorModel {
    pub fn new(
        dimension: usize,
        smooth: Box<dyn SmoothTerm>,
        penalty: Option<Box<dyn Penalty>>,
        lambda: f64,
    ) -> Result<Self> {
        if dimension == 0 {
            return Err(invalid("model dimension must be positive"));
        }
        if penalty.is_some() && !(lambda > 0.0 && lambda.is_finite()) {
            return Err(invalid(format!("lambda must be positive, got {lambda}")));
        }
        Ok(Self { dimension, smooth, penalty, lambda, grad_evals: AtomicU64::new(0), image: None })
    }

    pub fn with_image(mut self, shape: Shape, channels: usize) -> Self {
        self.image = Some((shape, channels));
        self
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn image(&self) -> Option<(Shape, usize)> {
        self.image
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn lipschitz_f(&self) -> f64 {
        self.smooth.lipschitz()
    }

    /// Lipschitz constant of `grad log pi^lambda`: `L_f + 1/lambda`, or `L_f`
    /// when there is no non-smooth term.
    pub fn lipschitz(&self) -> f64 {
        match self.penalty {
            Some(_) => self.lipschitz_f() + 1.0 / self.lambda,
            None => self.lipschitz_f(),
        }
    }

    pub fn smooth(&self) -> &dyn SmoothTerm {
        self.smooth.as_ref()
    }

    pub fn penalty(&self) -> Option<&dyn Penalty> {
        self.penalty.as_deref()
    }

    pub fn gradient_evaluations(&self) -> u64 {
        self.grad_evals.load(Ordering::Relaxed)
    }

    pub fn reset_gradient_evaluations(&self) {
        self.grad_evals.store(0, Ordering::Relaxed);
    }

    pub fn prox(&self, x: &[f64]) -> Vec<f64> {
        match &self.penalty {
            Some(g) => g.prox(x, self.lambda),
            None => x.to_vec(),
        }
    }

    /// `g(x)`, possibly `+inf`.
    pub fn penalty_value(&self, x: &[f64]) -> f64 {
        self.penalty.as_ref().map_or(0.0, |g| g.value(x))
    }

    /// `-f(x)`.
    pub fn log_density_smooth(&self, x: &[f64]) -> f64 {
        -self.smooth.value(x)
    }

    /// Unnormalised `log pi^lambda(x) = -f(x) - g^lambda(x)`.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        let envelope = match &self.penalty {
            Some(g) => {
                let p = g.prox(x, self.lambda);
                envelope_value_at(g.as_ref(), x, &p, self.lambda)
            }
            None => 0.0,
        };
        -self.smooth.value(x) - envelope
    }

    /// `grad log pi^lambda(x) = -grad f(x) - (x - prox(x)) / lambda`; counts one evaluation.
    pub fn grad_log_density(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = Vec::new();
        self.grad_log_density_into(x, &mut out)?;
        Ok(out)
    }

    pub(crate) fn grad_log_density_into(&self, x: &[f64], out: &mut Vec<f64>) -> Result<()> {
        if x.len() != self.dimension {
            return Err(Error::ShapeMismatch { expected: self.dimension, got: x.len() });
        }
        self.grad_evals.fetch_add(1, Ordering::Relaxed);
        let gf = self.smooth.gradient(x);
        out.clear();
        match &self.penalty {
            Some(g) => {
                let p = g.prox(x, self.lambda);
                let inv = 1.0 / self.lambda;
                out.extend(gf.iter().zip(x).zip(&p).map(|((gi, xi), pi)| -gi - (xi - pi) * inv));
            }
            None => out.extend(gf.iter().map(|v| -v)),
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("gradient of log pi^lambda".into()));
        }
        Ok(())
    }
}

/// Free-function form of [`PosteriorModel::grad_log_density`].
pub fn regularised_log_gradient(model: &PosteriorModel, x: &[f64]) -> Result<Vec<f64>> {
    model.grad_log_density(x)
}

/// `1 / L_f`, the usual smoothing choice when the likelihood is informative.
pub fn default_lambda(lipschitz_f: f64) -> Option<f64> {
    (lipschitz_f > 0.0).then(|| 1.0 / lipschitz_f)
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("{name} must be positive and finite, got {v}")))
    }
}

/// Zero-mean Gaussian with diagonal covariance; no non-smooth term.
pub fn model_gaussian(variances: &[f64]) -> Result<PosteriorModel> {
    let target = GaussianTarget::new(variances.to_vec())?;
    PosteriorModel::new(variances.len(), Box::new(target), None, f64::INFINITY)
}

/// `pi(x) ∝ exp(-|x| / scale)` smoothed with parameter `lambda`.
pub fn model_laplace_1d(scale: f64, lambda: f64) -> Result<PosteriorModel> {
    check_positive("scale", scale)?;
    check_positive("lambda", lambda)?;
    PosteriorModel::new(1, Box::new(ZeroSmooth), Some(Box::new(L1Penalty { weight: 1.0 / scale })), lambda)
}

/// Uniform density on `[-1, 1]` smoothed with parameter `lambda`.
pub fn model_uniform_1d(lambda: f64) -> Result<PosteriorModel> {
    check_positive("lambda", lambda)?;
    PosteriorModel::new(1, Box::new(ZeroSmooth), Some(Box::new(BoxIndicator { lo: -1.0, hi: 1.0 })), lambda)
}

/// Blurred-image posterior with a total-variation prior.
pub fn model_deconvolution(
    y: Vec<f64>,
    blur: Box<dyn LinearOperator>,
    shape: Shape,
    sigma: f64,
    beta: f64,
    lambda: f64,
    solver: TvSolver,
) -> Result<PosteriorModel> {
    check_positive("sigma", sigma)?;
    check_positive("beta", beta)?;
    check_positive("lambda", lambda)?;
    if y.len() != blur.output_len() {
        return Err(Error::ShapeMismatch { expected: blur.output_len(), got: y.len() });
    }
    if shape.len() != blur.input_len() {
        return Err(Error::ShapeMismatch { expected: blur.input_len(), got: shape.len() });
    }
    let d = blur.input_len();
    let smooth = LeastSquares { operator: blur, y, sigma };
    let tv = TvPenalty::new(beta, shape).with_solver(solver);
    Ok(PosteriorModel::new(d, Box::new(smooth), Some(Box::new(tv)), lambda)?.with_image(shape, 1))
}

/// Order in which the composite unmixing prior applies its proximal maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProxStep {
    Tv,
    L1,
    Positivity,
}

pub const DEFAULT_PROX_ORDER: [ProxStep; 3] = [ProxStep::Tv, ProxStep::L1, ProxStep::Positivity];

/// Hyperspectral unmixing posterior with `l1 + TV + nonnegativity` prior.
#[allow(clippy::too_many_arguments)]
pub fn model_unmixing(
    y: Vec<f64>,
    mixing: Box<dyn LinearOperator>,
    shape: Shape,
    endmembers: usize,
    sigma: f64,
    alpha: f64,
    beta: f64,
    lambda: f64,
    solver: TvSolver,
    order: &[ProxStep],
) -> Result<PosteriorModel> {
    for (name, v) in [("sigma", sigma), ("alpha", alpha), ("beta", beta), ("lambda", lambda)] {
        check_positive(name, v)?;
    }
    if y.len() != mixing.output_len() {
        return Err(Error::ShapeMismatch { expected: mixing.output_len(), got: y.len() });
    }
    if shape.len() * endmembers != mixing.input_len() {
        return Err(Error::ShapeMismatch { expected: mixing.input_len(), got: shape.len() * endmembers });
    }
    let d = mixing.input_len();
    let parts: Vec<Box<dyn Penalty>> = order
        .iter()
        .map(|step| -> Box<dyn Penalty> {
            match step {
                ProxStep::Tv => Box::new(TvPenalty::new(beta, shape).with_channels(endmembers).with_solver(solver)),
                ProxStep::L1 => Box::new(L1Penalty { weight: alpha }),
                ProxStep::Positivity => Box::new(BoxIndicator::nonnegative()),
            }
        })
        .collect();
    let smooth = LeastSquares { operator: mixing, y, sigma };
    Ok(PosteriorModel::new(d, Box::new(smooth), Some(Box::new(CompositePenalty::new(parts))), lambda)?
        .with_image(shape, endmembers))
}

/// Fourier-subsampling posterior with a total-variation prior. `y` holds the
/// stacked real and imaginary parts of the retained coefficients.
pub fn model_tomography(
    y: Vec<f64>,
    mask: Box<dyn LinearOperator>,
    shape: Shape,
    sigma: f64,
    beta: f64,
    lambda: f64,
    solver: TvSolver,
) -> Result<PosteriorModel> {
    check_positive("sigma", sigma)?;
    check_positive("beta", beta)?;
    check_positive("lambda", lambda)?;
    if y.len() != mask.output_len() {
        return Err(Error::ShapeMismatch { expected: mask.output_len(), got: y.len() });
    }
    if shape.len() != mask.input_len() {
        return Err(Error::ShapeMismatch { expected: mask.input_len(), got: shape.len() });
    }
    let d = mask.input_len();
    let smooth = LeastSquares { operator: mask, y, sigma };
    let tv = TvPenalty::new(beta, shape).with_solver(solver);
    Ok(PosteriorModel::new(d, Box::new(smooth), Some(Box::new(tv)), lambda)?.with_image(shape, 1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{make_blur, make_fourier_mask, make_mixing, uniform_kernel, MaskPattern};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn randv(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(lo..hi)).collect()
    }

    fn norm(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
    }

    /// Central differences of `h` at `x` along every coordinate.
    fn fd_gradient(h: impl Fn(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
        let mut xp = x.to_vec();
        (0..x.len())
            .map(|i| {
                let orig = xp[i];
                xp[i] = orig + step;
                let up = h(&xp);
                xp[i] = orig - step;
                let down = h(&xp);
                xp[i] = orig;
                (up - down) / (2.0 * step)
            })
            .collect()
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let scale = b.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        norm(a, b) / scale
    }

    #[test]
    fn gaussian_lipschitz_from_variances() {
        assert_abs_diff_eq!(model_gaussian(&[1.0, 1e-2]).unwrap().lipschitz_f(), 100.0, epsilon = 1e-12);
        assert_abs_diff_eq!(model_gaussian(&[1.0, 1e-4]).unwrap().lipschitz_f(), 1e4, epsilon = 1e-9);
        let m = model_gaussian(&[2.0, 2.0]).unwrap();
        let g = m.grad_log_density(&[1.0, -3.0]).unwrap();
        assert_eq!(g, vec![-0.5, 1.5]);
        assert!(model_gaussian(&[1.0, 0.0]).is_err());
        assert!(model_gaussian(&[-1.0]).is_err());
    }

    #[test]
    fn laplace_model() {
        let m = model_laplace_1d(1.0, 1e-5).unwrap();
        assert_abs_diff_eq!(2.0 / m.lipschitz(), 2e-5, epsilon = 1e-18);
        assert_eq!(m.grad_log_density(&[0.0]).unwrap(), vec![0.0]);
        let g = m.grad_log_density(&[0.01]).unwrap()[0];
        assert_abs_diff_eq!(g, -1.0, epsilon = 1e-12);
        // further out the residual x - prox(x) loses digits to cancellation
        let g = m.grad_log_density(&[3.0]).unwrap()[0];
        assert_abs_diff_eq!(g, -1.0, epsilon = 1e-10);
        let m2 = model_laplace_1d(2.0, 1e-5).unwrap();
        assert_abs_diff_eq!(m2.grad_log_density(&[-0.01]).unwrap()[0], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn uniform_model() {
        let lambda = 1e-5;
        let m = model_uniform_1d(lambda).unwrap();
        assert_eq!(m.grad_log_density(&[0.5]).unwrap(), vec![0.0]);
        let t = 0.3;
        assert_abs_diff_eq!(m.grad_log_density(&[1.0 + t]).unwrap()[0], -t / lambda, epsilon = 1e-6);
        assert_abs_diff_eq!(m.lipschitz(), 1e5, epsilon = 1e-6);
    }

    fn deconv_instance(seed: u64) -> (PosteriorModel, Vec<f64>) {
        let shape = Shape::new(8, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let truth = randv(&mut rng, 64, 0.0, 1.0);
        let (k, ks) = uniform_kernel(3);
        let blur = make_blur(&k, ks, shape).unwrap();
        let y = blur.apply(&truth);
        let solver = TvSolver { tol: 1e-12, max_iter: 50_000 };
        let m = model_deconvolution(y, Box::new(blur), shape, 0.3, 0.5, 0.05, solver).unwrap();
        (m, truth)
    }

    #[test]
    fn deconvolution_gradient_vanishes_at_noiseless_truth() {
        let (m, truth) = deconv_instance(1);
        let g = m.smooth().gradient(&truth);
        assert!(g.iter().all(|v| v.abs() < 1e-10));
        assert_abs_diff_eq!(m.lipschitz_f(), 1.0 / 0.09, epsilon = 1e-9);
    }

    #[test]
    fn deconvolution_paper_configuration_builds() {
        let shape = Shape::new(16, 16);
        let (k, ks) = uniform_kernel(5);
        let blur = make_blur(&k, ks, shape).unwrap();
        let lf = blur.operator_norm_sq() / (0.47 * 0.47);
        let m = model_deconvolution(vec![0.0; 256], Box::new(blur), shape, 0.47, 0.047, 0.21, TvSolver::default())
            .unwrap();
        assert_abs_diff_eq!(m.lipschitz_f(), lf, epsilon = 1e-9);
        // 1 / L_f = sigma^2 = 0.2209 for a unit-gain blur; quoted as 0.21
        assert!((default_lambda(lf).unwrap() - 0.21).abs() < 0.015);
        let bad = make_blur(&k, ks, Shape::new(8, 8)).unwrap();
        assert!(model_deconvolution(vec![0.0; 10], Box::new(bad), Shape::new(8, 8), 0.47, 0.047, 0.21, TvSolver::default()).is_err());
    }

    #[test]
    fn deconvolution_smooth_gradient_matches_fd() {
        let (m, truth) = deconv_instance(2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = truth.iter().map(|t| t + rng.random_range(-0.3..0.3)).collect();
        let fd = fd_gradient(|v| m.smooth().value(v), &x, 1e-5);
        let an = m.smooth().gradient(&x);
        assert!(rel_err(&an, &fd) < 1e-6);
    }

    #[test]
    fn deconvolution_total_gradient_matches_fd() {
        let (m, truth) = deconv_instance(4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<f64> = truth.iter().map(|t| t + rng.random_range(-0.5..0.5)).collect();
        let fd = fd_gradient(|v| m.log_density(v), &x, 1e-5);
        let an = m.grad_log_density(&x).unwrap();
        assert!(rel_err(&an, &fd) < 1e-5, "{}", rel_err(&an, &fd));
    }

    fn unmixing_instance() -> (PosteriorModel, Vec<f64>) {
        let shape = Shape::new(4, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = randv(&mut rng, 6, 0.1, 1.0);
        let mix = make_mixing(&a, 3, 2, 16).unwrap();
        let truth = randv(&mut rng, 32, 0.0, 1.0);
        let y = mix.apply(&truth);
        let m = model_unmixing(
            y,
            Box::new(mix),
            shape,
            2,
            0.2,
            25.0,
            185.0,
            1e-3,
            TvSolver::default(),
            &DEFAULT_PROX_ORDER,
        )
        .unwrap();
        (m, truth)
    }

    #[test]
    fn unmixing_configuration_and_zero_gradient() {
        let shape = Shape::new(4, 4);
        let mix = make_mixing(&[1.0, 0.5, 0.2, 0.3, 0.9, 0.1], 3, 2, 16).unwrap();
        let m = model_unmixing(
            vec![0.0; 48],
            Box::new(mix),
            shape,
            2,
            8.4e-4,
            25.0,
            185.0,
            7.08e-7,
            TvSolver::default(),
            &DEFAULT_PROX_ORDER,
        )
        .unwrap();
        assert!(m.smooth().gradient(&vec![0.0; 32]).iter().all(|v| *v == 0.0));
        assert_eq!(m.dimension(), 32);
        let mix = make_mixing(&[1.0, 0.5, 0.2, 0.3, 0.9, 0.1], 3, 2, 16).unwrap();
        assert!(model_unmixing(vec![0.0; 47], Box::new(mix), shape, 2, 1.0, 1.0, 1.0, 1.0, TvSolver::default(), &DEFAULT_PROX_ORDER).is_err());
    }

    #[test]
    fn unmixing_smooth_gradient_matches_fd() {
        let (m, truth) = unmixing_instance();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x: Vec<f64> = truth.iter().map(|t| t + rng.random_range(-0.3..0.3)).collect();
        let fd = fd_gradient(|v| m.smooth().value(v), &x, 1e-5);
        assert!(rel_err(&m.smooth().gradient(&x), &fd) < 1e-6);
    }

    #[test]
    fn tomography_model() {
        let shape = Shape::new(8, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let truth = randv(&mut rng, 64, 0.0, 1.0);
        let full = make_fourier_mask(shape, 1.0, 0, MaskPattern::Radial).unwrap();
        let y = full.apply(&truth);
        let m = model_tomography(y, Box::new(full), shape, 1e-2, 1e2, 0.2e-4, TvSolver::default()).unwrap();
        assert_abs_diff_eq!(m.lipschitz_f(), 1e4, epsilon = 1e-6);
        assert!(m.smooth().gradient(&truth).iter().all(|v| v.abs() < 1e-8));

        let mask = make_fourier_mask(shape, 0.3, 1, MaskPattern::Radial).unwrap();
        let y = mask.apply(&truth);
        let m = model_tomography(y, Box::new(mask), shape, 0.1, 1.0, 1e-2, TvSolver::default()).unwrap();
        let x: Vec<f64> = truth.iter().map(|t| t + rng.random_range(-0.3..0.3)).collect();
        let fd = fd_gradient(|v| m.smooth().value(v), &x, 1e-5);
        assert!(rel_err(&m.smooth().gradient(&x), &fd) < 1e-6);
    }

    #[test]
    fn counter_tracks_gradient_calls() {
        let m = model_laplace_1d(1.0, 0.1).unwrap();
        for _ in 0..7 {
            m.grad_log_density(&[0.3]).unwrap();
        }
        assert_eq!(m.gradient_evaluations(), 7);
        m.reset_gradient_evaluations();
        assert_eq!(m.gradient_evaluations(), 0);
    }

    #[test]
    fn non_finite_gradient_is_an_error() {
        let m = model_gaussian(&[1.0]).unwrap();
        assert!(matches!(m.grad_log_density(&[f64::NAN]), Err(Error::NonFinite(_))));
        assert!(matches!(m.grad_log_density(&[1.0, 2.0]), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn gradient_lipschitz_and_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (deconv, _) = deconv_instance(10);
        let (unmix, _) = unmixing_instance();
        let models: Vec<(PosteriorModel, f64, f64)> = vec![
            (model_gaussian(&[1.0, 0.3, 1e-2]).unwrap(), 1e-12, 1.0),
            (model_laplace_1d(1.0, 0.01).unwrap(), 1e-12, 1.0),
            (model_uniform_1d(0.01).unwrap(), 1e-12, 1.0),
            (deconv, 1e-3, 1.0),
            (unmix, 1e-3, 1.0),
        ];
        for (m, slack, scale) in &models {
            let d = m.dimension();
            for _ in 0..100 {
                let x = randv(&mut rng, d, -2.0 * scale, 2.0 * scale);
                let y = randv(&mut rng, d, -2.0 * scale, 2.0 * scale);
                let gx = m.grad_log_density(&x).unwrap();
                let gy = m.grad_log_density(&y).unwrap();
                let dist = norm(&x, &y);
                assert!(norm(&gx, &gy) <= m.lipschitz() * dist * (1.0 + 1e-6) + slack * m.lipschitz());
                // -grad log pi is monotone
                let inner: f64 = gx.iter().zip(&gy).zip(x.iter().zip(&y)).map(|((a, b), (xi, yi))| -(a - b) * (xi - yi)).sum();
                assert!(inner >= -slack * m.lipschitz() * dist, "inner {inner}");
            }
        }
    }
}
