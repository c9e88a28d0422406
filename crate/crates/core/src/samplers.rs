//! MYULA and SK-ROCK kernels and the chain runner.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::chebyshev::{stability_interval, ChebCoefficients, DEFAULT_ETA};
use crate::error::{invalid, Error, Result};
use crate::models::PosteriorModel;
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    Myula,
    Skrock,
}

impl Kernel {
    pub fn name(self) -> &'static str {
        match self {
            Kernel::Myula => "myula",
            Kernel::Skrock => "skrock",
        }
    }
}

impl std::fmt::Display for Kernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Kernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "myula" | "em" => Ok(Kernel::Myula),
            "skrock" => Ok(Kernel::Skrock),
            other => Err(invalid(format!("unknown kernel `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub kernel: Kernel,
    pub delta: f64,
    #[serde(default = "default_stages")]
    pub stages: usize,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default)]
    pub seed: u64,
    pub n_iterations: u64,
    #[serde(default)]
    pub burn_in: u64,
    #[serde(default = "default_thinning")]
    pub thinning: u64,
    #[serde(default = "default_true")]
    pub store_trace_statistic: bool,
    #[serde(default = "default_true")]
    pub store_samples: bool,
}

fn default_stages() -> usize {
    1
}

fn default_eta() -> f64 {
    DEFAULT_ETA
}

fn default_thinning() -> u64 {
    1
}

fn default_true() -> bool {
    true
}

impl SamplerConfig {
    pub fn myula(delta: f64, n_iterations: u64) -> Self {
        Self {
            kernel: Kernel::Myula,
            delta,
            stages: 1,
            eta: DEFAULT_ETA,
            seed: 0,
            n_iterations,
            burn_in: 0,
            thinning: 1,
            store_trace_statistic: true,
            store_samples: true,
        }
    }

    pub fn skrock(delta: f64, stages: usize, n_iterations: u64) -> Self {
        Self { kernel: Kernel::Skrock, stages, ..Self::myula(delta, n_iterations) }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_burn_in(mut self, burn_in: u64) -> Self {
        self.burn_in = burn_in;
        self
    }

    pub fn with_thinning(mut self, thinning: u64) -> Self {
        self.thinning = thinning;
        self
    }

    pub fn with_eta(mut self, eta: f64) -> Self {
        self.eta = eta;
        self
    }

    pub fn without_samples(mut self) -> Self {
        self.store_samples = false;
        self
    }

    pub fn without_trace_statistic(mut self) -> Self {
        self.store_trace_statistic = false;
        self
    }

    /// Gradient evaluations per iteration.
    pub fn evals_per_iteration(&self) -> u64 {
        match self.kernel {
            Kernel::Myula => 1,
            Kernel::Skrock => self.stages as u64,
        }
    }

    /// Checks the step size against the model's stability bound.
    pub fn validate(&self, model: &PosteriorModel) -> Result<()> {
        if !(self.delta > 0.0) || !self.delta.is_finite() {
            return Err(invalid(format!("step size must be positive and finite, got {}", self.delta)));
        }
        if self.thinning == 0 {
            return Err(invalid("thinning must be at least 1"));
        }
        let bound = max_stepsize(model, self.kernel, self.stages, self.eta)?;
        let ok = match self.kernel {
            Kernel::Myula => self.delta < bound,
            Kernel::Skrock => self.delta <= bound * (1.0 + 1e-12),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::StepSizeTooLarge { delta: self.delta, bound })
        }
    }

    fn coefficients(&self) -> Result<Option<ChebCoefficients>> {
        match self.kernel {
            Kernel::Myula => Ok(None),
            Kernel::Skrock => ChebCoefficients::new(self.stages, self.eta).map(Some),
        }
    }
}

/// Largest admissible step: `2 / L` (exclusive) for MYULA, `l_s / L`
/// (inclusive) for SK-ROCK, with `L = L_f + 1/lambda`.
pub fn max_stepsize(model: &PosteriorModel, kernel: Kernel, s: usize, eta: f64) -> Result<f64> {
    let l = model.lipschitz();
    let numer = match kernel {
        Kernel::Myula => 2.0,
        Kernel::Skrock => {
            if s == 0 {
                return Err(invalid("SK-ROCK needs at least one stage"));
            }
            stability_interval(s, eta)
        }
    };
    Ok(if l > 0.0 { numer / l } else { f64::INFINITY })
}

fn poisoned(reason: &str) -> Error {
    Error::PoisonedChain { iteration: 0, reason: reason.to_string() }
}

fn lift(err: Error) -> Error {
    match err {
        Error::NonFinite(what) => poisoned(&format!("non-finite {what}")),
        other => other,
    }
}

/// One MYULA step with the supplied standard normal `noise`.
pub fn myula_step(model: &PosteriorModel, x: &[f64], delta: f64, noise: &[f64]) -> Result<Vec<f64>> {
    let g = model.grad_log_density(x).map_err(lift)?;
    let scale = (2.0 * delta).sqrt();
    let out: Vec<f64> = x.iter().zip(&g).zip(noise).map(|((xi, gi), zi)| xi + delta * gi + scale * zi).collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(poisoned("non-finite MYULA state"));
    }
    Ok(out)
}

/// One s-stage SK-ROCK step; `noise` is used in the first stage only.
pub fn skrock_step(
    model: &PosteriorModel,
    x: &[f64],
    coeffs: &ChebCoefficients,
    delta: f64,
    noise: &[f64],
) -> Result<Vec<f64>> {
    let scale = (2.0 * delta).sqrt();
    let s = coeffs.s;
    let mut grad = Vec::with_capacity(x.len());

    let shifted: Vec<f64> = x.iter().zip(noise).map(|(xi, zi)| xi + coeffs.nu[0] * scale * zi).collect();
    model.grad_log_density_into(&shifted, &mut grad).map_err(lift)?;
    let (mu1, k1) = (coeffs.mu[0], coeffs.k[0]);
    let mut cur: Vec<f64> =
        x.iter().zip(&grad).zip(noise).map(|((xi, gi), zi)| xi + mu1 * delta * gi + k1 * scale * zi).collect();
    let mut prev = x.to_vec();

    for j in 1..s {
        model.grad_log_density_into(&cur, &mut grad).map_err(lift)?;
        let (mu, nu, k) = (coeffs.mu[j] * delta, coeffs.nu[j], coeffs.k[j]);
        for ((p, c), g) in prev.iter_mut().zip(&cur).zip(&grad) {
            // overwrite K_{j-2} with K_j
            *p = mu * g + nu * c + k * *p;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    if cur.iter().any(|v| !v.is_finite()) {
        return Err(poisoned("non-finite SK-ROCK stage value"));
    }
    Ok(cur)
}

/// Output of [`run_chain`]. `samples` is row-major, one stored iteration per row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainTrace {
    pub dimension: usize,
    pub samples: Vec<f64>,
    pub stored_iterations: Vec<u64>,
    pub trace_statistic: Vec<f64>,
    pub gradient_evals: u64,
    pub wall_time: f64,
    /// Mean of all post-burn-in stored states, kept even when samples are not.
    pub running_mean: Vec<f64>,
    pub final_state: Vec<f64>,
    pub config: SamplerConfig,
}

impl ChainTrace {
    pub fn n_stored(&self) -> usize {
        self.stored_iterations.len()
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.samples[i * self.dimension..(i + 1) * self.dimension]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.samples.chunks_exact(self.dimension.max(1))
    }

    /// Scalar series of coordinate `j`.
    pub fn component(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    /// Projection of every stored sample on `direction`.
    pub fn project(&self, direction: &[f64]) -> Vec<f64> {
        self.rows().map(|r| r.iter().zip(direction).map(|(a, b)| a * b).sum()).collect()
    }

    /// Gradient evaluations spent per stored sample.
    pub fn budget_per_sample(&self) -> u64 {
        self.config.evals_per_iteration() * self.config.thinning
    }
}

/// Called with `(iteration, state)` on every stored iteration.
pub type Observer<'a> = dyn FnMut(u64, &[f64]) + 'a;

/// Runs a chain from `x0` using the generator for `(config.seed, stream)`.
pub fn run_chain(model: &PosteriorModel, config: &SamplerConfig, x0: &[f64]) -> Result<ChainTrace> {
    run_chain_observed(model, config, x0, 0, &mut |_, _| {})
}

/// Generator of chain `stream` for a given seed; stream 0 is the single-chain default.
pub fn chain_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn run_chain_observed(
    model: &PosteriorModel,
    config: &SamplerConfig,
    x0: &[f64],
    stream: u64,
    observer: &mut Observer<'_>,
) -> Result<ChainTrace> {
    let d = model.dimension();
    if x0.len() != d {
        return Err(Error::ShapeMismatch { expected: d, got: x0.len() });
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("initial state".into()));
    }
    config.validate(model)?;
    let coeffs = config.coefficients()?;
    let mut rng = chain_rng(config.seed, stream);
    let start = Instant::now();

    let mut x = x0.to_vec();
    let mut noise = vec![0.0; d];
    let mut samples = Vec::new();
    let mut stored_iterations = Vec::new();
    let mut trace_statistic = Vec::new();
    let mut mean = vec![0.0; d];
    let mut n_mean = 0u64;

    for it in 1..=config.n_iterations {
        for z in noise.iter_mut() {
            *z = StandardNormal.sample(&mut rng);
        }
        let step = match &coeffs {
            None => myula_step(model, &x, config.delta, &noise),
            Some(c) => skrock_step(model, &x, c, config.delta, &noise),
        };
        x = step.map_err(|e| match e {
            Error::PoisonedChain { reason, .. } => Error::PoisonedChain { iteration: it, reason },
            other => other,
        })?;
        if it <= config.burn_in || (it - config.burn_in) % config.thinning != 0 {
            continue;
        }
        stored_iterations.push(it);
        n_mean += 1;
        let w = 1.0 / n_mean as f64;
        for (m, v) in mean.iter_mut().zip(&x) {
            *m += (v - *m) * w;
        }
        if config.store_samples {
            samples.extend_from_slice(&x);
        }
        if config.store_trace_statistic {
            trace_statistic.push(model.log_density(&x));
        }
        observer(it, &x);
    }

    Ok(ChainTrace {
        dimension: d,
        samples,
        stored_iterations,
        trace_statistic,
        gradient_evals: config.n_iterations * config.evals_per_iteration(),
        wall_time: start.elapsed().as_secs_f64(),
        running_mean: mean,
        final_state: x,
        config: config.clone(),
    })
}

/// Runs `n_chains` independent chains on streams `0..n_chains` of the seed.
pub fn run_chains(model: &PosteriorModel, config: &SamplerConfig, x0: &[f64], n_chains: usize) -> Result<Vec<ChainTrace>> {
    par::map_range(n_chains, |i| run_chain_observed(model, config, x0, i as u64, &mut |_, _| {}))
        .into_iter()
        .collect()
}

/// Final states of `n_replicas` independent chains of `n_steps` iterations,
/// replica `i` on stream `i`. Results do not depend on the thread count.
pub fn simulate_replicas(
    model: &PosteriorModel,
    config: &SamplerConfig,
    x0: &[f64],
    n_steps: u64,
    n_replicas: usize,
) -> Result<Vec<Vec<f64>>> {
    replicas_with(model, config, x0, n_steps, n_replicas, true)
}

/// Sequential counterpart of [`simulate_replicas`].
pub fn simulate_replicas_seq(
    model: &PosteriorModel,
    config: &SamplerConfig,
    x0: &[f64],
    n_steps: u64,
    n_replicas: usize,
) -> Result<Vec<Vec<f64>>> {
    replicas_with(model, config, x0, n_steps, n_replicas, false)
}

fn replicas_with(
    model: &PosteriorModel,
    config: &SamplerConfig,
    x0: &[f64],
    n_steps: u64,
    n_replicas: usize,
    parallel: bool,
) -> Result<Vec<Vec<f64>>> {
    let mut cfg = config.clone();
    cfg.n_iterations = n_steps;
    cfg.burn_in = 0;
    cfg.thinning = 1;
    cfg.store_samples = false;
    cfg.store_trace_statistic = false;
    cfg.validate(model)?;
    let job = |i: usize| -> Result<Vec<f64>> {
        run_chain_observed(model, &cfg, x0, i as u64, &mut |_, _| {}).map(|t| t.final_state)
    };
    let out = if parallel { par::map_range(n_replicas, job) } else { par::map_range_seq(n_replicas, job) };
    out.into_iter().collect()
}
