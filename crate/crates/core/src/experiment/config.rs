//! Experiment configuration: JSON schema, named presets and default resolution.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::optimal_stage_and_step;
use crate::chebyshev::{DEFAULT_ETA, MAX_STAGES};
use crate::error::{Error, Result};
use crate::models::{ProxStep, DEFAULT_PROX_ORDER};
use crate::operators::MaskPattern;
use crate::samplers::Kernel;

/// Environment variable that overrides the output root of every experiment.
pub const OUTPUT_ENV: &str = "SKROCK_OUTPUT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Gaussian2d,
    Laplace1d,
    Uniform1d,
    Deconvolution,
    Unmixing,
    Tomography,
    W2curves,
    Stability,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Gaussian2d => "gaussian2d",
            ExperimentKind::Laplace1d => "laplace1d",
            ExperimentKind::Uniform1d => "uniform1d",
            ExperimentKind::Deconvolution => "deconvolution",
            ExperimentKind::Unmixing => "unmixing",
            ExperimentKind::Tomography => "tomography",
            ExperimentKind::W2curves => "w2curves",
            ExperimentKind::Stability => "stability",
        }
    }

    pub fn is_imaging(self) -> bool {
        matches!(self, ExperimentKind::Deconvolution | ExperimentKind::Unmixing | ExperimentKind::Tomography)
    }

    pub fn is_sampling(self) -> bool {
        !matches!(self, ExperimentKind::W2curves | ExperimentKind::Stability)
    }
}

/// Problem size and run length.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScaleParams {
    /// Side of the square image (imaging experiments).
    pub image_size: Option<usize>,
    /// Gradient evaluations per chain; every sampler block gets the same budget.
    pub gradient_budget: Option<u64>,
    /// Independent chains per sampler block.
    pub n_chains: Option<usize>,
    /// SK-ROCK budget spent moving from the initial state to a common warm
    /// start before the measured chains (imaging only; 0 disables).
    pub warm_start_budget: Option<u64>,
    /// Budget of the cold-start runs that record MSE-vs-budget curves (0 disables).
    pub mse_budget: Option<u64>,
    pub blur_size: Option<usize>,
    pub bands: Option<usize>,
    pub endmembers: Option<usize>,
    pub mask_fraction: Option<f64>,
    pub mask_pattern: Option<MaskPattern>,
}

/// Model hyper-parameters; which fields apply depends on the experiment.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    pub variances: Option<Vec<f64>>,
    pub laplace_scale: Option<f64>,
    pub sigma: Option<f64>,
    /// Blurred signal-to-noise ratio; sets `sigma` when `sigma` is absent.
    pub bsnr_db: Option<f64>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub lambda: Option<f64>,
    pub tv_tol: Option<f64>,
    pub tv_max_iter: Option<usize>,
    pub prox_order: Option<Vec<ProxStep>>,
    /// Ground-truth image (PGM); a synthetic one is generated otherwise.
    pub truth_path: Option<PathBuf>,
    /// Endmember CSV (bands x endmembers); synthetic signatures otherwise.
    pub endmember_path: Option<PathBuf>,
}

/// One method to run: a kernel with its stage count and step size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerBlock {
    pub kernel: Kernel,
    pub stages: Option<usize>,
    pub delta: Option<f64>,
    pub eta: Option<f64>,
    /// Stored-sample thinning. MYULA defaults to the gcd of the SK-ROCK stage
    /// counts, so each comparison can thin it further to one state per `s`
    /// evaluations.
    pub thinning: Option<u64>,
}

impl SamplerBlock {
    pub fn myula(delta: Option<f64>) -> Self {
        Self { kernel: Kernel::Myula, stages: Some(1), delta, eta: None, thinning: None }
    }

    pub fn skrock(stages: usize, delta: Option<f64>) -> Self {
        Self { kernel: Kernel::Skrock, stages: Some(stages), delta, eta: None, thinning: None }
    }

    pub fn label(&self) -> String {
        format!("{}_{}", self.kernel, self.stages.unwrap_or(1))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisParams {
    pub kl_bins: Option<usize>,
    pub max_lag: Option<usize>,
    /// Cap on the number of pooled rows used to estimate slow/fast directions.
    pub max_component_rows: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct W2Params {
    pub dimension: Option<usize>,
    pub kappas: Option<Vec<f64>>,
    /// Squared accuracy thresholds.
    pub epsilons_sq: Option<Vec<f64>>,
    pub em_safety: Option<f64>,
    pub eta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilityParams {
    pub s: usize,
    pub eta: f64,
    pub pmin: f64,
    pub pmax: f64,
    pub q2max: f64,
    pub resolution: usize,
}

impl Default for StabilityParams {
    fn default() -> Self {
        Self { s: 10, eta: DEFAULT_ETA, pmin: -200.0, pmax: 5.0, q2max: 200.0, resolution: 401 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub name: Option<String>,
    #[serde(default)]
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub scale: ScaleParams,
    #[serde(default)]
    pub model: ModelParams,
    #[serde(default)]
    pub samplers: Vec<SamplerBlock>,
    #[serde(default)]
    pub analysis: AnalysisParams,
    pub w2: Option<W2Params>,
    pub stability: Option<StabilityParams>,
}

fn field(name: &str, message: impl Into<String>) -> Error {
    Error::Config { field: name.to_string(), message: message.into() }
}

fn positive(name: &str, v: Option<f64>) -> Result<()> {
    match v {
        Some(x) if !(x > 0.0 && x.is_finite()) => Err(field(name, format!("must be positive and finite, got {x}"))),
        _ => Ok(()),
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

pub(crate) fn lcm(a: u64, b: u64) -> u64 {
    a / gcd(a, b) * b
}

impl ExperimentConfig {
    pub fn new(experiment: ExperimentKind) -> Self {
        Self {
            experiment,
            name: None,
            seed: 0,
            output_dir: None,
            scale: ScaleParams::default(),
            model: ModelParams::default(),
            samplers: Vec::new(),
            analysis: AnalysisParams::default(),
            w2: None,
            stability: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| field("config", e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn name(&self) -> &str {
        self.name.as_deref().unwrap_or(self.experiment.name())
    }

    /// Output directory after applying the environment override: the override
    /// replaces the root, and the experiment name becomes the subdirectory.
    pub fn output_path(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ENV) {
            Some(root) => PathBuf::from(root).join(self.name()),
            None => self.output_dir.clone().unwrap_or_else(|| PathBuf::from("output").join(self.name())),
        }
    }

    /// Every stage count in use, one per block.
    pub fn stage_counts(&self) -> Vec<u64> {
        self.samplers.iter().map(|b| b.stages.unwrap_or(1) as u64).collect()
    }

    /// Fills every optional field with its default for the experiment kind
    /// and checks the result. Step sizes that depend on the model (defaults
    /// derived from the Lipschitz constant) are filled in later, when the model
    /// is built.
    pub fn resolve(mut self) -> Result<Self> {
        use ExperimentKind::*;
        let kind = self.experiment;
        self.name.get_or_insert_with(|| kind.name().to_string());
        let s = &mut self.scale;
        let m = &mut self.model;
        match kind {
            Gaussian2d => {
                m.variances.get_or_insert_with(|| vec![1.0, 1e-2]);
                s.gradient_budget.get_or_insert(100_000);
                s.n_chains.get_or_insert(1);
            }
            Laplace1d | Uniform1d => {
                if kind == Laplace1d {
                    m.laplace_scale.get_or_insert(1.0);
                }
                m.lambda.get_or_insert(1e-5);
                s.gradient_budget.get_or_insert(1_000_000);
                s.n_chains.get_or_insert(64);
            }
            Deconvolution => {
                s.image_size.get_or_insert(64);
                s.blur_size.get_or_insert(5);
                if m.sigma.is_none() {
                    m.bsnr_db.get_or_insert(40.0);
                }
                m.beta.get_or_insert(0.047);
            }
            Unmixing => {
                s.image_size.get_or_insert(16);
                s.endmembers.get_or_insert(3);
                s.bands.get_or_insert(20);
                m.sigma.get_or_insert(8.4e-4);
                m.alpha.get_or_insert(25.0);
                m.beta.get_or_insert(185.0);
                m.prox_order.get_or_insert_with(|| DEFAULT_PROX_ORDER.to_vec());
            }
            Tomography => {
                s.image_size.get_or_insert(32);
                s.mask_fraction.get_or_insert(0.15);
                s.mask_pattern.get_or_insert(MaskPattern::Radial);
                m.sigma.get_or_insert(1e-2);
                m.beta.get_or_insert(1e2);
            }
            W2curves => {
                let w = self.w2.get_or_insert_with(W2Params::default);
                w.dimension.get_or_insert(100);
                w.kappas.get_or_insert_with(|| vec![1e2, 1e3, 1e4]);
                w.epsilons_sq.get_or_insert_with(|| vec![1e-1]);
                w.em_safety.get_or_insert(1.0);
                w.eta.get_or_insert(DEFAULT_ETA);
            }
            Stability => {
                self.stability.get_or_insert_with(StabilityParams::default);
            }
        }
        if kind.is_imaging() {
            s.gradient_budget.get_or_insert(100_000);
            s.n_chains.get_or_insert(1);
            s.warm_start_budget.get_or_insert(20_000);
            m.tv_tol.get_or_insert(1e-4);
            m.tv_max_iter.get_or_insert(100);
        }
        if kind.is_sampling() {
            s.warm_start_budget.get_or_insert(0);
            let default_mse = if kind.is_imaging() { s.gradient_budget.unwrap_or(0) } else { 0 };
            s.mse_budget.get_or_insert(default_mse);
            if self.samplers.is_empty() {
                self.samplers = default_blocks(kind);
            }
            if kind == Gaussian2d {
                let v = self.model.variances.as_deref().unwrap_or(&[1.0]);
                let kappa = v.iter().cloned().fold(0.0, f64::max) / v.iter().cloned().fold(f64::INFINITY, f64::min);
                let eta = DEFAULT_ETA;
                let (s_opt, _) = optimal_stage_and_step(kappa, eta, 1.0)?;
                for b in self.samplers.iter_mut().filter(|b| b.kernel == Kernel::Skrock) {
                    b.stages.get_or_insert(s_opt.max(2));
                }
            }
            let common_s = self
                .samplers
                .iter()
                .filter(|b| b.kernel == Kernel::Skrock)
                .filter_map(|b| b.stages)
                .fold(0, |a, b| gcd(a, b as u64))
                .max(1);
            for b in &mut self.samplers {
                b.eta.get_or_insert(DEFAULT_ETA);
                match b.kernel {
                    Kernel::Myula => {
                        b.stages = Some(1);
                        b.thinning.get_or_insert(common_s);
                    }
                    Kernel::Skrock => {
                        b.stages.get_or_insert(15);
                        b.thinning.get_or_insert(1);
                    }
                }
            }
            // Equal budgets across blocks need a budget divisible by every
            // `stages * thinning` product.
            let unit = self
                .samplers
                .iter()
                .map(|b| b.stages.unwrap_or(1) as u64 * b.thinning.unwrap_or(1))
                .fold(1, lcm);
            for budget in [&mut self.scale.gradient_budget, &mut self.scale.mse_budget] {
                if let Some(v) = budget.as_mut() {
                    *v -= *v % unit;
                }
            }
            let a = &mut self.analysis;
            a.kl_bins.get_or_insert(100);
            a.max_lag.get_or_insert(200);
            a.max_component_rows.get_or_insert(4000);
        }
        self.validate()?;
        Ok(self)
    }

    /// Checks field ranges; reports the offending field by name.
    pub fn validate(&self) -> Result<()> {
        let s = &self.scale;
        let m = &self.model;
        if let Some(n) = s.image_size {
            if n < 4 {
                return Err(field("scale.image_size", format!("must be at least 4, got {n}")));
            }
        }
        if let Some(b) = s.blur_size {
            if b == 0 || b % 2 == 0 || Some(b) > s.image_size {
                return Err(field("scale.blur_size", format!("must be odd and at most image_size, got {b}")));
            }
        }
        if s.n_chains == Some(0) {
            return Err(field("scale.n_chains", "must be at least 1"));
        }
        if s.endmembers == Some(0) || s.bands == Some(0) {
            return Err(field("scale.endmembers", "bands and endmembers must be positive"));
        }
        if let Some(f) = s.mask_fraction {
            if !(f > 0.0 && f <= 1.0) {
                return Err(field("scale.mask_fraction", format!("must lie in (0, 1], got {f}")));
            }
        }
        for (name, v) in [
            ("model.laplace_scale", m.laplace_scale),
            ("model.sigma", m.sigma),
            ("model.alpha", m.alpha),
            ("model.beta", m.beta),
            ("model.lambda", m.lambda),
            ("model.tv_tol", m.tv_tol),
        ] {
            positive(name, v)?;
        }
        if let Some(b) = m.bsnr_db {
            if !b.is_finite() {
                return Err(field("model.bsnr_db", "must be finite"));
            }
        }
        if let Some(v) = &m.variances {
            if v.is_empty() || v.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
                return Err(field("model.variances", "must be a non-empty list of positive values"));
            }
        }
        if m.tv_max_iter == Some(0) {
            return Err(field("model.tv_max_iter", "must be at least 1"));
        }
        if let Some(order) = &m.prox_order {
            let mut sorted = order.clone();
            sorted.sort_by_key(|p| *p as u8);
            sorted.dedup();
            if sorted.len() != 3 || order.len() != 3 {
                return Err(field("model.prox_order", "must list tv, l1 and positivity once each"));
            }
        }
        for (i, b) in self.samplers.iter().enumerate() {
            let at = |f: &str| format!("samplers[{i}].{f}");
            if let Some(st) = b.stages {
                if b.kernel == Kernel::Skrock && !(2..=MAX_STAGES).contains(&st) {
                    return Err(field(&at("stages"), format!("SK-ROCK needs 2..={MAX_STAGES} stages, got {st}")));
                }
            }
            positive(&at("delta"), b.delta)?;
            if let Some(eta) = b.eta {
                if !(0.0..1.0).contains(&eta) {
                    return Err(field(&at("eta"), format!("must lie in [0, 1), got {eta}")));
                }
            }
            if b.thinning == Some(0) {
                return Err(field(&at("thinning"), "must be at least 1"));
            }
        }
        if let Some(w) = &self.w2 {
            if w.dimension == Some(0) {
                return Err(field("w2.dimension", "must be positive"));
            }
            if let Some(k) = &w.kappas {
                if k.is_empty() || k.iter().any(|v| !(*v >= 1.0 && v.is_finite())) {
                    return Err(field("w2.kappas", "must be a non-empty list of values >= 1"));
                }
            }
            if let Some(e) = &w.epsilons_sq {
                if e.is_empty() || e.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                    return Err(field("w2.epsilons_sq", "must be a non-empty list of positive values"));
                }
            }
            positive("w2.em_safety", w.em_safety)?;
        }
        if let Some(st) = &self.stability {
            validate_stability(st)?;
        }
        if self.experiment.is_sampling() && self.samplers.is_empty() && self.scale.gradient_budget.is_some() {
            return Err(field("samplers", "at least one sampler block is required"));
        }
        Ok(())
    }
}

pub fn validate_stability(st: &StabilityParams) -> Result<()> {
    for (name, v) in [("stability.pmin", st.pmin), ("stability.pmax", st.pmax), ("stability.q2max", st.q2max)] {
        if !v.is_finite() {
            return Err(field(name, "must be finite"));
        }
    }
    if st.pmin >= st.pmax {
        return Err(field("stability.pmin", "must be below pmax"));
    }
    if st.q2max <= 0.0 {
        return Err(field("stability.q2max", "must be positive"));
    }
    if st.resolution < 2 {
        return Err(field("stability.resolution", "must be at least 2"));
    }
    if !(1..=MAX_STAGES).contains(&st.s) {
        return Err(field("stability.s", format!("must lie in 1..={MAX_STAGES}")));
    }
    if !(0.0..1.0).contains(&st.eta) {
        return Err(field("stability.eta", "must lie in [0, 1)"));
    }
    Ok(())
}

fn default_blocks(kind: ExperimentKind) -> Vec<SamplerBlock> {
    match kind {
        ExperimentKind::Gaussian2d => vec![SamplerBlock::myula(None), SamplerBlock { stages: None, ..SamplerBlock::skrock(2, None) }],
        ExperimentKind::Tomography => vec![SamplerBlock::myula(None), SamplerBlock::skrock(10, None)],
        _ => vec![SamplerBlock::myula(None), SamplerBlock::skrock(15, None)],
    }
}

/// Named configurations carrying the published settings.
pub const PRESETS: [&str; 5] = ["laplace_table1", "cameraman_sec42", "unmixing_sec43", "tomography_sec44", "gaussian_fig1"];

pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let mut c = match name {
        "laplace_table1" => {
            let mut c = ExperimentConfig::new(ExperimentKind::Laplace1d);
            c.model.lambda = Some(1e-5);
            c.samplers = vec![
                SamplerBlock::myula(Some(1e-5)),
                SamplerBlock::skrock(10, Some(1.7e-3)),
                SamplerBlock::skrock(15, Some(4.0e-3)),
            ];
            c
        }
        "cameraman_sec42" => {
            let mut c = ExperimentConfig::new(ExperimentKind::Deconvolution);
            c.model.beta = Some(0.047);
            c.model.bsnr_db = Some(40.0);
            c.scale.blur_size = Some(5);
            c.samplers = vec![SamplerBlock::myula(None), SamplerBlock::skrock(15, None)];
            c
        }
        "unmixing_sec43" => {
            let mut c = ExperimentConfig::new(ExperimentKind::Unmixing);
            c.model.alpha = Some(25.0);
            c.model.beta = Some(185.0);
            c.model.sigma = Some(8.4e-4);
            c.model.lambda = Some(7.08e-7);
            c.samplers = vec![SamplerBlock::myula(None), SamplerBlock::skrock(15, None)];
            c
        }
        "tomography_sec44" => {
            let mut c = ExperimentConfig::new(ExperimentKind::Tomography);
            c.model.beta = Some(1e2);
            c.model.sigma = Some(1e-2);
            c.model.lambda = Some(0.2e-4);
            c.scale.mask_fraction = Some(0.15);
            c.samplers = vec![SamplerBlock::myula(None), SamplerBlock::skrock(10, None)];
            c
        }
        "gaussian_fig1" => {
            let mut c = ExperimentConfig::new(ExperimentKind::Gaussian2d);
            c.model.variances = Some(vec![1.0, 1e-2]);
            // 2 / (L + l) for L = 100, l = 1; SK-ROCK stages from the optimal rule
            c.samplers = vec![SamplerBlock::myula(Some(2.0 / 101.0)), SamplerBlock { stages: None, ..SamplerBlock::skrock(2, None) }];
            c
        }
        other => return Err(field("preset", format!("unknown preset `{other}`; known: {}", PRESETS.join(", ")))),
    };
    c.name = Some(name.to_string());
    Ok(c)
}
