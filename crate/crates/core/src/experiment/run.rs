//! Builds the posterior for an experiment and runs its sampler blocks.

use crate::diagnostics::MseTracker;
use crate::error::{invalid, Error, Result};
use crate::experiment::config::{ExperimentConfig, ExperimentKind, SamplerBlock};
use crate::experiment::images;
use crate::models::{
    default_lambda, model_deconvolution, model_gaussian, model_laplace_1d, model_tomography, model_uniform_1d,
    model_unmixing, PosteriorModel, DEFAULT_PROX_ORDER,
};
use crate::operators::{make_blur, make_fourier_mask, make_mixing, read_endmember_csv, uniform_kernel, LinearOperator, MaskPattern};
use crate::par;
use crate::prox::{Shape, TvSolver};
use crate::samplers::{chain_rng, max_stepsize, run_chain_observed, ChainTrace, Kernel, SamplerConfig};

use rand_distr::{Distribution, StandardNormal};

/// Stream used for the measured chain `k` is `k`; these tags name the other
/// random streams of an experiment.
const DATA_TAG: u64 = 0xDA7A;
const WARM_TAG: u64 = 0x3A53;
const MSE_STREAM: u64 = 1 << 32;

/// Seed of block `tag`, decorrelated from the master seed by a splitmix64 round.
pub fn derive_seed(master: u64, tag: u64) -> u64 {
    let mut z = master.wrapping_add(tag.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A posterior together with the data it was built from.
pub struct Problem {
    pub model: PosteriorModel,
    /// Ground truth (imaging) or target mean (Gaussian).
    pub truth: Option<Vec<f64>>,
    pub observation: Option<Vec<f64>>,
    /// Initial state: zero for synthetic targets, normalised back-projection
    /// `A^T y / |A|^2` for imaging.
    pub x_init: Vec<f64>,
    pub image: Option<(Shape, usize)>,
    pub sigma: Option<f64>,
}

fn require<T: Copy>(v: Option<T>, name: &str) -> Result<T> {
    v.ok_or_else(|| Error::Config { field: name.into(), message: "missing after resolution".into() })
}

fn noisy(clean: &[f64], sigma: f64, seed: u64) -> Vec<f64> {
    let mut rng = chain_rng(derive_seed(seed, DATA_TAG), 0);
    clean
        .iter()
        .map(|v| {
            let z: f64 = StandardNormal.sample(&mut rng);
            v + sigma * z
        })
        .collect()
}

/// Centre crop of `img` to a `size x size` square.
fn crop(img: &[f64], shape: Shape, size: usize) -> Result<Vec<f64>> {
    if shape.rows < size || shape.cols < size {
        return Err(invalid(format!("image {}x{} is smaller than {size}x{size}", shape.rows, shape.cols)));
    }
    let (r0, c0) = ((shape.rows - size) / 2, (shape.cols - size) / 2);
    Ok((0..size).flat_map(|r| img[(r0 + r) * shape.cols + c0..(r0 + r) * shape.cols + c0 + size].to_vec()).collect())
}

fn truth_image(cfg: &ExperimentConfig, size: usize, synthetic: fn(usize) -> Vec<f64>) -> Result<Vec<f64>> {
    match &cfg.model.truth_path {
        Some(p) => {
            let (img, shape) = images::read_pgm(p)?;
            crop(&img, shape, size)
        }
        None => Ok(synthetic(size)),
    }
}

fn back_projection(op: &dyn LinearOperator, y: &[f64]) -> Vec<f64> {
    let scale = 1.0 / op.operator_norm_sq();
    op.apply_adjoint(y).into_iter().map(|v| v * scale).collect()
}

fn variance(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64
}

fn lambda_or_default(cfg: &ExperimentConfig, lf: f64) -> Result<f64> {
    cfg.model.lambda.or_else(|| default_lambda(lf)).ok_or_else(|| Error::Config {
        field: "model.lambda".into(),
        message: "no default without a smooth term".into(),
    })
}

/// Builds the posterior of a resolved config. Fills `sigma` (from the BSNR)
/// and `lambda` (from `1 / L_f`) into `cfg` when they were left open.
pub fn build_problem(cfg: &mut ExperimentConfig) -> Result<Problem> {
    let m = cfg.model.clone();
    let m = &m;
    let solver = TvSolver { tol: m.tv_tol.unwrap_or(1e-4), max_iter: m.tv_max_iter.unwrap_or(100) };
    let problem = match cfg.experiment {
        ExperimentKind::Gaussian2d => {
            let v = m.variances.clone().ok_or_else(|| invalid("variances missing"))?;
            let d = v.len();
            Problem {
                model: model_gaussian(&v)?,
                truth: Some(vec![0.0; d]),
                observation: None,
                x_init: vec![0.0; d],
                image: None,
                sigma: None,
            }
        }
        ExperimentKind::Laplace1d => Problem {
            model: model_laplace_1d(require(m.laplace_scale, "model.laplace_scale")?, require(m.lambda, "model.lambda")?)?,
            truth: None,
            observation: None,
            x_init: vec![0.0],
            image: None,
            sigma: None,
        },
        ExperimentKind::Uniform1d => Problem {
            model: model_uniform_1d(require(m.lambda, "model.lambda")?)?,
            truth: None,
            observation: None,
            x_init: vec![0.0],
            image: None,
            sigma: None,
        },
        ExperimentKind::Deconvolution => {
            let size = require(cfg.scale.image_size, "scale.image_size")?;
            let shape = Shape::new(size, size);
            let x = truth_image(cfg, size, images::synthetic_scene)?;
            let (k, ks) = uniform_kernel(require(cfg.scale.blur_size, "scale.blur_size")?);
            let blur = make_blur(&k, ks, shape)?;
            let clean = blur.apply(&x);
            let sigma = match (m.sigma, m.bsnr_db) {
                (Some(s), _) => s,
                (None, Some(db)) => (variance(&clean) / 10f64.powf(db / 10.0)).sqrt(),
                (None, None) => return Err(invalid("deconvolution needs sigma or bsnr_db")),
            };
            let y = noisy(&clean, sigma, cfg.seed);
            let lambda = lambda_or_default(cfg, blur.operator_norm_sq() / (sigma * sigma))?;
            let x_init = back_projection(&blur, &y);
            let beta = require(m.beta, "model.beta")?;
            cfg.model.sigma = Some(sigma);
            cfg.model.lambda = Some(lambda);
            Problem {
                model: model_deconvolution(y.clone(), Box::new(blur), shape, sigma, beta, lambda, solver)?,
                truth: Some(x),
                observation: Some(y),
                x_init,
                image: Some((shape, 1)),
                sigma: Some(sigma),
            }
        }
        ExperimentKind::Unmixing => {
            let size = require(cfg.scale.image_size, "scale.image_size")?;
            let shape = Shape::new(size, size);
            let (a, bands, k) = match &m.endmember_path {
                Some(p) => read_endmember_csv(&std::fs::read_to_string(p)?)?,
                None => {
                    let (b, k) = (require(cfg.scale.bands, "scale.bands")?, require(cfg.scale.endmembers, "scale.endmembers")?);
                    (images::synthetic_endmembers(b, k, cfg.seed), b, k)
                }
            };
            cfg.scale.bands = Some(bands);
            cfg.scale.endmembers = Some(k);
            let x = images::synthetic_abundances(shape, k, cfg.seed);
            let mix = make_mixing(&a, bands, k, shape.len())?;
            let sigma = require(m.sigma, "model.sigma")?;
            let y = noisy(&mix.apply(&x), sigma, cfg.seed);
            let lambda = lambda_or_default(cfg, mix.operator_norm_sq() / (sigma * sigma))?;
            let x_init = back_projection(&mix, &y);
            let order = m.prox_order.clone().unwrap_or_else(|| DEFAULT_PROX_ORDER.to_vec());
            let (alpha, beta) = (require(m.alpha, "model.alpha")?, require(m.beta, "model.beta")?);
            cfg.model.lambda = Some(lambda);
            Problem {
                model: model_unmixing(y.clone(), Box::new(mix), shape, k, sigma, alpha, beta, lambda, solver, &order)?,
                truth: Some(x),
                observation: Some(y),
                x_init,
                image: Some((shape, k)),
                sigma: Some(sigma),
            }
        }
        ExperimentKind::Tomography => {
            let size = require(cfg.scale.image_size, "scale.image_size")?;
            let shape = Shape::new(size, size);
            let mut x = truth_image(cfg, size, images::shepp_logan)?;
            if cfg.model.truth_path.is_some() {
                let hi = x.iter().cloned().fold(0.0, f64::max).max(1e-300);
                x.iter_mut().for_each(|v| *v /= hi);
            }
            let mask = make_fourier_mask(
                shape,
                require(cfg.scale.mask_fraction, "scale.mask_fraction")?,
                derive_seed(cfg.seed, DATA_TAG + 1),
                cfg.scale.mask_pattern.unwrap_or(MaskPattern::Radial),
            )?;
            let sigma = require(m.sigma, "model.sigma")?;
            let y = noisy(&mask.apply(&x), sigma, cfg.seed);
            let lambda = lambda_or_default(cfg, mask.operator_norm_sq() / (sigma * sigma))?;
            let x_init = back_projection(&mask, &y);
            cfg.model.lambda = Some(lambda);
            Problem {
                model: model_tomography(y.clone(), Box::new(mask), shape, sigma, require(m.beta, "model.beta")?, lambda, solver)?,
                truth: Some(x),
                observation: Some(y),
                x_init,
                image: Some((shape, 1)),
                sigma: Some(sigma),
            }
        }
        ExperimentKind::W2curves | ExperimentKind::Stability => {
            return Err(invalid(format!("{} is not a sampling experiment", cfg.experiment.name())))
        }
    };
    Ok(problem)
}

/// Step-size defaults: `1 / L` for MYULA, `0.95 * l_s / L` for SK-ROCK.
pub fn default_delta(model: &PosteriorModel, block: &SamplerBlock) -> Result<f64> {
    let eta = block.eta.unwrap_or(crate::chebyshev::DEFAULT_ETA);
    let s = block.stages.unwrap_or(1);
    let bound = max_stepsize(model, block.kernel, s, eta)?;
    if !bound.is_finite() {
        return Err(Error::Config { field: "samplers.delta".into(), message: "no default step for a flat target".into() });
    }
    Ok(match block.kernel {
        Kernel::Myula => bound / 2.0,
        Kernel::Skrock => 0.95 * bound,
    })
}

/// Sampler settings of block `index` for a per-chain budget.
pub fn block_sampler(cfg: &ExperimentConfig, index: usize, budget: u64) -> Result<SamplerConfig> {
    let b = &cfg.samplers[index];
    let at = |f: &str| format!("samplers[{index}].{f}");
    let delta = require(b.delta, &at("delta"))?;
    let s = require(b.stages, &at("stages"))?;
    let thinning = require(b.thinning, &at("thinning"))?;
    let n_iterations = budget / s as u64;
    let base = match b.kernel {
        Kernel::Myula => SamplerConfig::myula(delta, n_iterations),
        Kernel::Skrock => SamplerConfig::skrock(delta, s, n_iterations),
    };
    let mut sc = base
        .with_seed(derive_seed(cfg.seed, index as u64))
        .with_eta(b.eta.unwrap_or(crate::chebyshev::DEFAULT_ETA))
        .with_thinning(thinning);
    sc.store_trace_statistic = cfg.experiment.is_imaging();
    Ok(sc)
}

/// Chains of one sampler block plus its cold-start MSE curve.
#[derive(Debug, Clone)]
pub struct BlockOutput {
    pub label: String,
    pub sampler: SamplerConfig,
    pub chains: Vec<ChainTrace>,
    pub mse: Option<Vec<(u64, f64)>>,
}

impl BlockOutput {
    /// Gradient evaluations of the longest chain.
    pub fn gradient_evals(&self) -> u64 {
        self.chains.iter().map(|c| c.gradient_evals).max().unwrap_or(0)
    }
}

/// Everything produced by [`run_experiment`].
pub struct RunOutput {
    /// Fully resolved config: defaults, noise level, smoothing and step sizes filled in.
    pub config: ExperimentConfig,
    pub problem: Problem,
    /// Start of the measured chains (the warm start when one was run).
    pub x_start: Vec<f64>,
    pub blocks: Vec<BlockOutput>,
}

/// Resolves the config, builds the model, fills model-dependent step sizes
/// and validates every block against the model before any sampling.
pub fn prepare(cfg: &ExperimentConfig) -> Result<(ExperimentConfig, Problem)> {
    let mut cfg = cfg.clone().resolve()?;
    if !cfg.experiment.is_sampling() {
        return Err(invalid(format!("{} is not a sampling experiment", cfg.experiment.name())));
    }
    let problem = build_problem(&mut cfg)?;
    for i in 0..cfg.samplers.len() {
        if cfg.samplers[i].delta.is_none() {
            cfg.samplers[i].delta = Some(default_delta(&problem.model, &cfg.samplers[i])?);
        }
        block_sampler(&cfg, i, 0)?.validate(&problem.model).map_err(|e| match e {
            Error::StepSizeTooLarge { delta, bound } => Error::Config {
                field: format!("samplers[{i}].delta"),
                message: format!("step {delta} exceeds the stability bound {bound}"),
            },
            other => other,
        })?;
    }
    cfg.validate()?;
    Ok((cfg, problem))
}

fn warm_start(cfg: &ExperimentConfig, problem: &Problem) -> Result<Vec<f64>> {
    let budget = cfg.scale.warm_start_budget.unwrap_or(0);
    if budget == 0 {
        return Ok(problem.x_init.clone());
    }
    let idx = (0..cfg.samplers.len())
        .max_by_key(|&i| (cfg.samplers[i].kernel == Kernel::Skrock, cfg.samplers[i].stages.unwrap_or(1)))
        .ok_or_else(|| invalid("no sampler blocks"))?;
    let mut sc = block_sampler(cfg, idx, budget)?.without_samples().without_trace_statistic();
    sc.seed = derive_seed(cfg.seed, WARM_TAG);
    sc.thinning = 1;
    let trace = run_chain_observed(&problem.model, &sc, &problem.x_init, 0, &mut |_, _| {})?;
    Ok(trace.final_state)
}

fn mse_curve(cfg: &ExperimentConfig, problem: &Problem, index: usize, truth: &[f64]) -> Result<Vec<(u64, f64)>> {
    let budget = cfg.scale.mse_budget.unwrap_or(0);
    let mut sc = block_sampler(cfg, index, budget)?.without_samples().without_trace_statistic();
    sc.thinning = 1;
    let mut tracker = MseTracker::new(truth.to_vec(), sc.evals_per_iteration());
    run_chain_observed(&problem.model, &sc, &problem.x_init, MSE_STREAM, &mut |_, x| tracker.push(x))?;
    // keep the points every block has in common so curves can be compared directly
    let unit = cfg.samplers.iter().map(|b| b.stages.unwrap_or(1) as u64).fold(1, crate::experiment::config::lcm);
    Ok(tracker.curve.into_iter().filter(|(b, _)| b % unit == 0).collect())
}

/// Runs every block of a sampling experiment. Blocks and chains run in parallel.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let (cfg, problem) = prepare(cfg)?;
    let x_start = warm_start(&cfg, &problem)?;
    let budget = cfg.scale.gradient_budget.unwrap_or(0);
    let n_chains = cfg.scale.n_chains.unwrap_or(1);
    let n_blocks = cfg.samplers.len();
    let samplers: Vec<SamplerConfig> = (0..n_blocks).map(|i| block_sampler(&cfg, i, budget)).collect::<Result<_>>()?;

    let jobs: Vec<(usize, usize)> = (0..n_blocks).flat_map(|b| (0..n_chains).map(move |c| (b, c))).collect();
    let traces: Vec<Result<ChainTrace>> =
        par::map_slice(&jobs, |&(b, c)| run_chain_observed(&problem.model, &samplers[b], &x_start, c as u64, &mut |_, _| {}));

    let mse: Vec<Option<Vec<(u64, f64)>>> = match (&problem.truth, cfg.scale.mse_budget.unwrap_or(0)) {
        (Some(truth), m) if m > 0 => par::map_range(n_blocks, |i| mse_curve(&cfg, &problem, i, truth).map(Some))
            .into_iter()
            .collect::<Result<_>>()?,
        _ => vec![None; n_blocks],
    };

    let mut traces = traces.into_iter();
    let mut blocks = Vec::with_capacity(n_blocks);
    for (i, sampler) in samplers.into_iter().enumerate() {
        let chains = traces.by_ref().take(n_chains).collect::<Result<Vec<_>>>()?;
        blocks.push(BlockOutput { label: cfg.samplers[i].label(), sampler, chains, mse: mse[i].clone() });
    }
    Ok(RunOutput { config: cfg, problem, x_start, blocks })
}
