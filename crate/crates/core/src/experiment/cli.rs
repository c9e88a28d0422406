//! Commands behind the `skrock` binary. Each returns the list of files it
//! wrote; [`exit_code`] maps errors to the process status.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::analysis::{gradient_budget_curve, linspace, loglog_slope, ms_stability_region, stability_em, stability_skrock, Tuning};
use crate::error::{Error, Result};
use crate::experiment::config::{preset, validate_stability, ExperimentConfig, ExperimentKind, StabilityParams, OUTPUT_ENV};
use crate::experiment::images::write_pgm;
use crate::experiment::io::{
    file_entries, fmt_f64, read_trace, write_csv, write_csv_text, write_f64_bin, write_json, write_trace, BlockEntry, FileEntry,
    Manifest, MANIFEST_NAME, TIMING_NAME,
};
use crate::experiment::report::{analyze_blocks, histogram_1d, AnalysisOptions, AnalysisOutput};
use crate::experiment::run::{build_problem, run_experiment, BlockOutput, RunOutput};
use crate::models::GaussianTarget;
use crate::samplers::Kernel;

#[derive(Debug, Parser)]
#[command(name = "skrock", version, about = "Proximal Langevin sampling with MYULA and SK-ROCK")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run every sampler block of an experiment and write traces plus a manifest.
    Sample {
        /// JSON config file, or `preset:<name>`.
        config: String,
    },
    /// Diagnostics and the speed-up table for a manifest written by `sample`.
    Analyze { manifest: PathBuf },
    /// Gradient budget against condition number for the Gaussian test problem.
    W2curves { config: String },
    /// Mean-square stability regions of EM and SK-ROCK.
    Stability {
        #[arg(long, default_value_t = 10)]
        s: usize,
        #[arg(long, default_value_t = 0.05)]
        eta: f64,
        #[arg(long, default_value_t = -200.0, allow_hyphen_values = true)]
        pmin: f64,
        #[arg(long, default_value_t = 5.0, allow_hyphen_values = true)]
        pmax: f64,
        #[arg(long, default_value_t = 200.0)]
        q2max: f64,
        #[arg(long, default_value_t = 401)]
        resolution: usize,
        /// Output directory (overridden by the output environment variable).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print a named preset as JSON.
    Preset { name: String },
}

/// 1 for configuration and validation errors, 2 for everything else.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config { .. } | Error::InvalidArgument(_) | Error::StepSizeTooLarge { .. } | Error::Json(_) => 1,
        _ => 2,
    }
}

pub fn run(cli: Cli) -> Result<Vec<PathBuf>> {
    match cli.command {
        Command::Sample { config } => Ok(vec![cmd_sample(&load_config(&config)?)?]),
        Command::Analyze { manifest } => cmd_analyze(&manifest),
        Command::W2curves { config } => cmd_w2curves(&load_config(&config)?),
        Command::Stability { s, eta, pmin, pmax, q2max, resolution, out } => {
            let params = StabilityParams { s, eta, pmin, pmax, q2max, resolution };
            let dir = match std::env::var_os(OUTPUT_ENV) {
                Some(root) => PathBuf::from(root).join("stability"),
                None => out.unwrap_or_else(|| PathBuf::from("output").join("stability")),
            };
            cmd_stability(&params, &dir)
        }
        Command::Preset { name } => {
            println!("{}", preset(&name)?.to_json());
            Ok(Vec::new())
        }
    }
}

/// Reads a config file; `preset:<name>` selects a shipped preset.
pub fn load_config(arg: &str) -> Result<ExperimentConfig> {
    match arg.strip_prefix("preset:") {
        Some(name) => preset(name),
        None => ExperimentConfig::load(Path::new(arg)),
    }
}

#[derive(Serialize)]
struct Timing {
    label: String,
    chain: usize,
    wall_time: f64,
}

fn file_stem(cfg: &ExperimentConfig, label: &str, chain: usize, n_chains: usize) -> String {
    if n_chains > 1 {
        format!("{}_{label}_chain{chain}", cfg.name())
    } else {
        format!("{}_{label}", cfg.name())
    }
}

/// Writes a run to `dir` and returns its manifest.
pub fn write_run(out: &RunOutput, dir: &Path) -> Result<Manifest> {
    std::fs::create_dir_all(dir)?;
    let cfg = &out.config;
    let name = cfg.name().to_string();
    let mut files: Vec<String> = Vec::new();
    let mut blocks = Vec::new();
    let mut timing = Vec::new();

    let resolved = format!("{name}.config.json");
    write_json(&dir.join(&resolved), cfg)?;
    files.push(resolved);

    let mut truth_file = None;
    let p = &out.problem;
    for (tag, data) in [("truth", &p.truth), ("observation", &p.observation)] {
        if let Some(v) = data {
            let f = format!("{name}.{tag}.bin");
            write_f64_bin(&dir.join(&f), v)?;
            files.push(f.clone());
            if tag == "truth" {
                truth_file = Some(f);
            }
        }
    }
    for (tag, v) in [("init", &p.x_init), ("start", &out.x_start)] {
        let f = format!("{name}.{tag}.bin");
        write_f64_bin(&dir.join(&f), v)?;
        files.push(f);
    }

    for b in &out.blocks {
        let mut headers = Vec::new();
        for (k, c) in b.chains.iter().enumerate() {
            let stem = file_stem(cfg, &b.label, k, b.chains.len());
            let (h, written) = write_trace(dir, &stem, c, k, k as u64, &b.label)?;
            headers.push(h);
            files.extend(written);
            timing.push(Timing { label: b.label.clone(), chain: k, wall_time: c.wall_time });
            if let (Some((shape, channels)), 0) = (p.image, k) {
                let (lo, hi) = match &p.truth {
                    Some(t) => t.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, z), &v| (a.min(v), z.max(v))),
                    None => (0.0, 1.0),
                };
                for ch in 0..channels {
                    let f = format!("{stem}.mean_c{ch}.pgm");
                    let n = shape.len();
                    write_pgm(&dir.join(&f), &c.running_mean[ch * n..(ch + 1) * n], shape, lo, hi)?;
                    files.push(f);
                }
            }
        }
        let mse_file = match &b.mse {
            Some(curve) => {
                let f = format!("{name}_{}.mse.csv", b.label);
                let rows: Vec<Vec<f64>> = curve.iter().map(|&(e, m)| vec![e as f64, m]).collect();
                write_csv(&dir.join(&f), &["gradient_evals", "mse"], &rows)?;
                files.push(f.clone());
                Some(f)
            }
            None => None,
        };
        blocks.push(BlockEntry { label: b.label.clone(), traces: headers, mse_file });
    }
    if let (Some((shape, channels)), Some(t)) = (p.image, &p.truth) {
        let (lo, hi) = t.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, z), &v| (a.min(v), z.max(v)));
        for ch in 0..channels {
            let f = format!("{name}.truth_c{ch}.pgm");
            write_pgm(&dir.join(&f), &t[ch * shape.len()..(ch + 1) * shape.len()], shape, lo, hi)?;
            files.push(f);
        }
    }
    write_json(&dir.join(TIMING_NAME), &timing)?;

    let manifest = Manifest {
        experiment: name,
        config: cfg.clone(),
        image: p.image.map(|(s, c)| (s.rows, s.cols, c)),
        truth_file,
        blocks,
        files: file_entries(dir, &files)?,
        timing_file: Some(TIMING_NAME.to_string()),
    };
    write_json(&dir.join(MANIFEST_NAME), &manifest)?;
    Ok(manifest)
}

/// Runs an experiment and writes its artifacts; returns the manifest path.
pub fn cmd_sample(cfg: &ExperimentConfig) -> Result<PathBuf> {
    if !cfg.experiment.is_sampling() {
        return Err(Error::Config { field: "experiment".into(), message: "use the w2curves or stability command".into() });
    }
    let out = run_experiment(cfg)?;
    let dir = out.config.output_path();
    write_run(&out, &dir)?;
    Ok(dir.join(MANIFEST_NAME))
}

fn read_curve(path: &Path) -> Result<Vec<(u64, f64)>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .skip(1)
        .filter(|l| !l.is_empty())
        .map(|l| {
            let mut it = l.split(',');
            let parse = |s: Option<&str>| s.and_then(|v| v.parse::<f64>().ok());
            match (parse(it.next()), parse(it.next())) {
                (Some(a), Some(b)) => Ok((a as u64, b)),
                _ => Err(crate::error::invalid(format!("bad row `{l}` in {}", path.display()))),
            }
        })
        .collect()
}

/// Reloads the blocks listed in a manifest.
pub fn load_blocks(manifest: &Manifest, dir: &Path) -> Result<Vec<BlockOutput>> {
    manifest
        .blocks
        .iter()
        .map(|b| {
            let chains = b.traces.iter().map(|h| read_trace(dir, h)).collect::<Result<Vec<_>>>()?;
            let sampler = b.traces.first().map(|h| h.config.clone()).ok_or_else(|| crate::error::invalid("block without traces"))?;
            let mse = b.mse_file.as_ref().map(|f| read_curve(&dir.join(f))).transpose()?;
            Ok(BlockOutput { label: b.label.clone(), sampler, chains, mse })
        })
        .collect()
}

/// Analysis of an in-memory or reloaded run, with the 1-D target density rebuilt from the config.
pub fn analyze_run(cfg: &ExperimentConfig, blocks: &[BlockOutput]) -> Result<AnalysisOutput> {
    let a = &cfg.analysis;
    let mut cfg_model = cfg.clone();
    let model = match cfg.experiment {
        ExperimentKind::Laplace1d | ExperimentKind::Uniform1d => Some(build_problem(&mut cfg_model)?.model),
        _ => None,
    };
    let density = model.as_ref().map(|m| move |x: f64| m.log_density(&[x]).exp());
    let opts = AnalysisOptions {
        max_lag: a.max_lag.unwrap_or(200),
        kl_bins: a.kl_bins.unwrap_or(100),
        max_component_rows: a.max_component_rows.unwrap_or(4000),
        density: density.as_ref().map(|f| f as &(dyn Fn(f64) -> f64 + Sync)),
    };
    analyze_blocks(blocks, &opts)
}

/// Writes per-trace reports, ACF and histogram curves and the speed-up table
/// next to the manifest. Outputs depend only on the manifest's files.
pub fn cmd_analyze(manifest_path: &Path) -> Result<Vec<PathBuf>> {
    let manifest = Manifest::load(manifest_path)?;
    let dir = Manifest::dir_of(manifest_path);
    let blocks = load_blocks(&manifest, &dir)?;
    let cfg = &manifest.config;
    let name = &manifest.experiment;
    let out = analyze_run(cfg, &blocks)?;
    let mut files: Vec<String> = Vec::new();

    if !out.rows.is_empty() {
        let with_speedup = out.rows.iter().any(|r| r.speedup_slow.is_some());
        let with_kl = out.rows.iter().any(|r| r.kl.is_some());
        let mut header = vec!["method", "stages", "stepsize", "gradient_evals", "chains", "samples", "ess_slow", "ess_fast"];
        if with_kl {
            header.push("kl_divergence");
        }
        if with_speedup {
            header.extend(["speedup_slow", "speedup_fast"]);
        }
        let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_else(|| "-".into());
        let rows: Vec<Vec<String>> = out
            .rows
            .iter()
            .map(|r| {
                let mut row = vec![
                    r.method.to_string(),
                    r.stages.to_string(),
                    fmt_f64(r.delta),
                    r.gradient_evals.to_string(),
                    r.n_chains.to_string(),
                    r.n_samples.to_string(),
                    fmt_f64(r.ess_slow),
                    fmt_f64(r.ess_fast),
                ];
                if with_kl {
                    row.push(opt(r.kl));
                }
                if with_speedup {
                    row.push(opt(r.speedup_slow));
                    row.push(opt(r.speedup_fast));
                }
                row
            })
            .collect();
        let f = format!("{name}_speedup.csv");
        write_csv_text(&dir.join(&f), &header, &rows)?;
        files.push(f);
    }

    for (b, reports) in blocks.iter().zip(&out.reports) {
        let f = format!("{name}_{}.report.json", b.label);
        write_json(&dir.join(&f), reports)?;
        files.push(f);
        if let Some(first) = reports.first() {
            let mut header = vec!["lag".to_string()];
            header.extend(first.component_names.iter().cloned());
            let lags = first.acf.first().map(Vec::len).unwrap_or(0);
            let rows: Vec<Vec<f64>> =
                (0..lags).map(|l| std::iter::once(l as f64).chain(first.acf.iter().map(|a| a[l])).collect()).collect();
            let f = format!("{name}_{}.acf.csv", b.label);
            let hdr: Vec<&str> = header.iter().map(String::as_str).collect();
            write_csv(&dir.join(&f), &hdr, &rows)?;
            files.push(f);
        }
    }

    if let Some(range) = out.kl_range {
        let mut cfg_model = cfg.clone();
        let model = build_problem(&mut cfg_model)?.model;
        let density = |x: f64| model.log_density(&[x]).exp();
        for b in &blocks {
            let pooled: Vec<f64> = b.chains.iter().flat_map(|c| c.samples.iter().copied()).collect();
            let rows = histogram_1d(&pooled, &density, cfg.analysis.kl_bins.unwrap_or(100), range);
            let f = format!("{name}_{}.hist.csv", b.label);
            write_csv(&dir.join(&f), &["bin_lo", "bin_hi", "empirical", "target"], &rows)?;
            files.push(f);
        }
    }

    if let Some(c) = &out.components {
        let rows: Vec<Vec<f64>> = (0..c.slow.len()).map(|i| vec![i as f64, c.slow[i], c.fast[i]]).collect();
        let f = format!("{name}_components.csv");
        write_csv(&dir.join(&f), &["index", "slow", "fast"], &rows)?;
        files.push(f);
    }

    let entries: Vec<FileEntry> = file_entries(&dir, &files)?;
    let f = format!("{name}.analysis.json");
    write_json(&dir.join(&f), &entries)?;
    files.push(f);
    Ok(files.into_iter().map(|f| dir.join(f)).collect())
}

/// One cell of the budget-curve table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct W2Cell {
    pub kappa: f64,
    pub epsilon_sq: f64,
    pub method: Kernel,
    pub stages: usize,
    pub delta: f64,
    /// `None` when the accuracy is below the chain's bias floor.
    pub gradient_evals: Option<u64>,
}

/// Budget curves for every `(kappa, eps^2, method)` cell and the log-log
/// slopes over `kappa`.
pub fn w2_table(cfg: &ExperimentConfig) -> Result<(Vec<W2Cell>, Vec<(f64, Kernel, f64)>)> {
    let w = cfg.w2.clone().unwrap_or_default();
    let d = w.dimension.unwrap_or(100);
    let kappas = w.kappas.unwrap_or_default();
    let eps = w.epsilons_sq.unwrap_or_default();
    let eta = w.eta.unwrap_or(crate::chebyshev::DEFAULT_ETA);
    let safety = w.em_safety.unwrap_or(1.0);
    let x0 = vec![1.0; d];
    let mut cells = Vec::new();
    for &kappa in &kappas {
        let target = GaussianTarget::spread(d, kappa)?;
        for method in [Kernel::Myula, Kernel::Skrock] {
            let tuning = match method {
                Kernel::Myula => Tuning::em(&target, safety),
                Kernel::Skrock => Tuning::skrock(&target, eta)?,
            };
            for &e2 in &eps {
                let evals = match gradient_budget_curve(&target, &tuning, e2.sqrt(), &x0) {
                    Ok(p) => Some(p.gradient_evals),
                    Err(Error::UnreachableAccuracy { .. }) => None,
                    Err(e) => return Err(e),
                };
                cells.push(W2Cell { kappa, epsilon_sq: e2, method, stages: tuning.stab.stages(), delta: tuning.delta, gradient_evals: evals });
            }
        }
    }
    let mut slopes = Vec::new();
    if kappas.len() >= 2 {
        for &e2 in &eps {
            for method in [Kernel::Myula, Kernel::Skrock] {
                let pts: Vec<(f64, f64)> = cells
                    .iter()
                    .filter(|c| c.method == method && c.epsilon_sq == e2)
                    .filter_map(|c| c.gradient_evals.filter(|&g| g > 0).map(|g| (c.kappa, g as f64)))
                    .collect();
                if pts.len() >= 2 {
                    let (xs, ys): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
                    slopes.push((e2, method, loglog_slope(&xs, &ys)));
                }
            }
        }
    }
    Ok((cells, slopes))
}

pub fn cmd_w2curves(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let mut cfg = cfg.clone();
    if cfg.experiment != ExperimentKind::W2curves {
        return Err(Error::Config { field: "experiment".into(), message: "expected w2curves".into() });
    }
    cfg = cfg.resolve()?;
    let (cells, slopes) = w2_table(&cfg)?;
    let dir = cfg.output_path();
    std::fs::create_dir_all(&dir)?;
    let name = cfg.name().to_string();
    let mut files = Vec::new();
    for method in [Kernel::Myula, Kernel::Skrock] {
        let rows: Vec<Vec<String>> = cells
            .iter()
            .filter(|c| c.method == method)
            .map(|c| {
                vec![
                    fmt_f64(c.kappa),
                    fmt_f64(c.epsilon_sq),
                    c.stages.to_string(),
                    fmt_f64(c.delta),
                    c.gradient_evals.map(|g| g.to_string()).unwrap_or_else(|| "-".into()),
                    if c.gradient_evals.is_some() { "ok" } else { "unreachable" }.to_string(),
                ]
            })
            .collect();
        let f = format!("{name}_{method}.budget.csv");
        write_csv_text(&dir.join(&f), &["kappa", "epsilon_sq", "stages", "stepsize", "gradient_evals", "status"], &rows)?;
        files.push(f);
    }
    for c in cells.iter().filter(|c| c.gradient_evals.is_none()) {
        eprintln!("unreachable accuracy: method {} kappa {} epsilon^2 {}", c.method, c.kappa, c.epsilon_sq);
    }
    if !slopes.is_empty() {
        let rows: Vec<Vec<String>> =
            slopes.iter().map(|(e2, m, s)| vec![fmt_f64(*e2), m.to_string(), fmt_f64(*s)]).collect();
        let f = format!("{name}.slopes.csv");
        write_csv_text(&dir.join(&f), &["epsilon_sq", "method", "slope"], &rows)?;
        files.push(f);
    }
    let resolved = format!("{name}.config.json");
    write_json(&dir.join(&resolved), &cfg)?;
    files.push(resolved);
    let entries = file_entries(&dir, &files)?;
    write_json(&dir.join(MANIFEST_NAME), &entries)?;
    files.push(MANIFEST_NAME.into());
    Ok(files.into_iter().map(|f| dir.join(f)).collect())
}

/// Region CSVs for EM and SK-ROCK plus the line `2p + q^2 = 0` bounding the
/// exact domain.
pub fn cmd_stability(params: &StabilityParams, dir: &Path) -> Result<Vec<PathBuf>> {
    validate_stability(params)?;
    std::fs::create_dir_all(dir)?;
    let p = linspace(params.pmin, params.pmax, params.resolution);
    let q2 = linspace(0.0, params.q2max, params.resolution);
    let mut files = Vec::new();
    let regions = [
        ("em".to_string(), stability_em()),
        (format!("skrock_{}", params.s), stability_skrock(params.s, params.eta)?),
    ];
    let mut summary = Vec::new();
    for (label, stab) in &regions {
        let grid = ms_stability_region(stab, &p, &q2)?;
        let mut rows = Vec::with_capacity(p.len() * q2.len());
        for (i, row) in grid.stable.iter().enumerate() {
            for (j, &s) in row.iter().enumerate() {
                rows.push(vec![grid.p[j], grid.q2[i], if s { 1.0 } else { 0.0 }]);
            }
        }
        let f = format!("stability_{label}.region.csv");
        write_csv(&dir.join(&f), &["p", "q2", "stable"], &rows)?;
        files.push(f);
        summary.push(vec![label.clone(), grid.extent_at_q0().map(fmt_f64).unwrap_or_else(|| "-".into())]);
    }
    let line: Vec<Vec<f64>> = p.iter().filter(|&&v| v <= 0.0 && -2.0 * v <= params.q2max).map(|&v| vec![v, -2.0 * v]).collect();
    let f = "stability_boundary.csv".to_string();
    write_csv(&dir.join(&f), &["p", "q2"], &line)?;
    files.push(f);
    let f = "stability_extent.csv".to_string();
    write_csv_text(&dir.join(&f), &["method", "p_min_stable_at_q0"], &summary)?;
    files.push(f);
    let entries = file_entries(dir, &files)?;
    write_json(&dir.join(MANIFEST_NAME), &entries)?;
    files.push(MANIFEST_NAME.into());
    Ok(files.into_iter().map(|f| dir.join(f)).collect())
}
