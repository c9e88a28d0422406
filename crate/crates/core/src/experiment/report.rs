//! Cross-method analysis of sampler blocks: ESS of slow/fast components,
//! speed-ups at equal budget, histogram KL for 1-D targets.

use serde::{Deserialize, Serialize};

use crate::diagnostics::{
    effective_sample_size_chains, kl_vs_target_1d, slow_fast_components, speedup_report, thin, Components, DiagnosticsReport,
};
use crate::error::{invalid, Error, Result};
use crate::experiment::run::BlockOutput;
use crate::par;
use crate::samplers::{ChainTrace, Kernel};

/// One row of the speed-up table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub label: String,
    pub method: Kernel,
    pub stages: usize,
    pub delta: f64,
    /// Per chain.
    pub gradient_evals: u64,
    pub n_chains: usize,
    /// Stored samples per chain.
    pub n_samples: usize,
    pub ess_slow: f64,
    pub ess_fast: f64,
    pub kl: Option<f64>,
    pub speedup_slow: Option<f64>,
    pub speedup_fast: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOutput {
    pub rows: Vec<TableRow>,
    /// Per block, one report per chain.
    pub reports: Vec<Vec<DiagnosticsReport>>,
    pub components: Option<Components>,
    /// Histogram range and bin count shared by every KL estimate.
    pub kl_range: Option<(f64, f64)>,
}

pub struct AnalysisOptions<'a> {
    pub max_lag: usize,
    pub kl_bins: usize,
    pub max_component_rows: usize,
    /// Unnormalised target density for 1-D targets.
    pub density: Option<&'a (dyn Fn(f64) -> f64 + Sync)>,
}

/// Evenly spaced subset of the pooled stored rows of every chain.
fn pooled_rows(blocks: &[BlockOutput], max_rows: usize) -> (Vec<f64>, usize) {
    let chains: Vec<&ChainTrace> = blocks.iter().flat_map(|b| &b.chains).filter(|c| c.n_stored() > 0).collect();
    let total: usize = chains.iter().map(|c| c.n_stored()).sum();
    let step = total.div_ceil(max_rows.max(1)).max(1);
    let mut rows = Vec::new();
    let mut n = 0;
    let mut k = 0usize;
    for c in chains {
        for r in c.rows() {
            if k % step == 0 {
                rows.extend_from_slice(r);
                n += 1;
            }
            k += 1;
        }
    }
    (rows, n)
}

/// Named scalar series of a chain: the coordinate itself in 1-D, otherwise
/// projections on the slow and fast directions.
fn series_of(chain: &ChainTrace, comps: Option<&Components>, extra_thin: usize) -> Vec<(String, Vec<f64>)> {
    match comps {
        None => vec![("x".into(), thin(&chain.component(0), extra_thin))],
        Some(c) => vec![
            ("slow".into(), thin(&chain.project(&c.slow), extra_thin)),
            ("fast".into(), thin(&chain.project(&c.fast), extra_thin)),
        ],
    }
}

/// Multi-chain ESS of each named series over all chains of a block.
fn block_ess(chains: &[ChainTrace], comps: Option<&Components>, extra_thin: usize) -> Result<Vec<f64>> {
    let per: Vec<Vec<(String, Vec<f64>)>> = par::map_slice(chains, |c| series_of(c, comps, extra_thin));
    let n_series = per.first().map(Vec::len).unwrap_or(0);
    (0..n_series)
        .map(|j| {
            let refs: Vec<&[f64]> = per.iter().map(|s| s[j].1.as_slice()).collect();
            effective_sample_size_chains(&refs).map(|e| e.ess)
        })
        .collect()
}

/// Additional thinning that gives the reference block the candidate's
/// per-sample budget, when the ratio is a whole number.
fn matching_thin(reference: &BlockOutput, candidate: &BlockOutput) -> usize {
    let r = reference.sampler.evals_per_iteration() * reference.sampler.thinning;
    let c = candidate.sampler.evals_per_iteration() * candidate.sampler.thinning;
    if c >= r && c % r == 0 {
        (c / r) as usize
    } else {
        1
    }
}

/// Diagnostics of every block. The first MYULA block is the speed-up
/// reference; it is thinned to each candidate's per-sample budget.
pub fn analyze_blocks(blocks: &[BlockOutput], opts: &AnalysisOptions<'_>) -> Result<AnalysisOutput> {
    let mut out = AnalysisOutput::default();
    let with_samples = blocks.iter().any(|b| b.chains.iter().any(|c| c.n_stored() > 0));
    if !with_samples {
        return Ok(out);
    }
    let d = blocks.iter().flat_map(|b| &b.chains).map(|c| c.dimension).next().unwrap_or(0);
    if d > 1 {
        let (rows, n) = pooled_rows(blocks, opts.max_component_rows);
        out.components = Some(slow_fast_components(&rows, n, d)?);
    }
    let comps = out.components.as_ref();

    let kl_range = if d == 1 && opts.density.is_some() {
        let all = blocks.iter().flat_map(|b| &b.chains).flat_map(|c| c.samples.iter());
        let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        out.kl_range = Some((lo, hi));
        Some((lo, hi))
    } else {
        None
    };

    for b in blocks {
        let reports: Vec<Result<DiagnosticsReport>> = b
            .chains
            .iter()
            .enumerate()
            .map(|(k, c)| {
                let series = series_of(c, comps, 1);
                let mut rep = DiagnosticsReport::from_series(&format!("{}_chain{k}", b.label), c.gradient_evals, &series, opts.max_lag)?;
                rep.slow_direction = comps.map(|x| x.slow.clone());
                rep.fast_direction = comps.map(|x| x.fast.clone());
                if let (Some(range), Some(f)) = (kl_range, opts.density) {
                    rep.kl_divergence = Some(kl_vs_target_1d(&c.samples, f, opts.kl_bins, range)?);
                }
                if k == 0 {
                    rep.mse_trace = b.mse.clone().unwrap_or_default();
                }
                Ok(rep)
            })
            .collect();
        out.reports.push(reports.into_iter().collect::<Result<_>>()?);
    }

    let reference = blocks.iter().position(|b| b.sampler.kernel == Kernel::Myula);
    for b in blocks {
        let ess = block_ess(&b.chains, comps, 1)?;
        let kl = match (kl_range, opts.density) {
            (Some(range), Some(f)) => {
                let pooled: Vec<f64> = b.chains.iter().flat_map(|c| c.samples.iter().copied()).collect();
                Some(kl_vs_target_1d(&pooled, f, opts.kl_bins, range)?)
            }
            _ => None,
        };
        let (speedup_slow, speedup_fast) = match reference {
            Some(r) if blocks.len() > 1 && !std::ptr::eq(&blocks[r], b) => {
                let refb = &blocks[r];
                if refb.chains.len() != b.chains.len() {
                    return Err(invalid("compared blocks have different chain counts"));
                }
                let ref_ess = block_ess(&refb.chains, comps, matching_thin(refb, b))?;
                let mk = |label: &str, evals: u64, ess: Vec<f64>| DiagnosticsReport {
                    label: label.into(),
                    gradient_evals: evals,
                    component_names: Vec::new(),
                    ess,
                    supereffective: Vec::new(),
                    acf: Vec::new(),
                    kl_divergence: None,
                    mse_trace: Vec::new(),
                    slow_direction: None,
                    fast_direction: None,
                };
                let su = speedup_report(&mk(&refb.label, refb.gradient_evals(), ref_ess), &mk(&b.label, b.gradient_evals(), ess.clone()))?;
                (Some(su[0]), Some(*su.last().expect("one component at least")))
            }
            _ => (None, None),
        };
        out.rows.push(TableRow {
            label: b.label.clone(),
            method: b.sampler.kernel,
            stages: b.sampler.stages,
            delta: b.sampler.delta,
            gradient_evals: b.gradient_evals(),
            n_chains: b.chains.len(),
            n_samples: b.chains.first().map(|c| c.n_stored()).unwrap_or(0),
            ess_slow: ess[0],
            ess_fast: *ess.last().expect("one component at least"),
            kl,
            speedup_slow,
            speedup_fast,
        });
    }
    Ok(out)
}

/// Equal-budget check between two blocks.
pub fn check_budgets(reference: &BlockOutput, candidate: &BlockOutput) -> Result<()> {
    if reference.gradient_evals() != candidate.gradient_evals() {
        return Err(Error::BudgetMismatch { reference: reference.gradient_evals(), candidate: candidate.gradient_evals() });
    }
    Ok(())
}

/// Histogram of pooled 1-D samples against target bin masses, for plotting.
pub fn histogram_1d(samples: &[f64], density: &(dyn Fn(f64) -> f64 + Sync), n_bins: usize, range: (f64, f64)) -> Vec<Vec<f64>> {
    let (lo, hi) = range;
    let w = (hi - lo) / n_bins as f64;
    let mut counts = vec![0usize; n_bins];
    for &v in samples {
        let i = (((v - lo) / w) as usize).min(n_bins - 1);
        counts[i] += 1;
    }
    let mass: Vec<f64> = (0..n_bins)
        .map(|i| {
            let a = lo + i as f64 * w;
            (0..64).map(|k| density(a + (k as f64 + 0.5) * w / 64.0)).sum::<f64>() * w / 64.0
        })
        .collect();
    let total: f64 = mass.iter().sum();
    (0..n_bins)
        .map(|i| {
            let a = lo + i as f64 * w;
            vec![a, a + w, counts[i] as f64 / samples.len().max(1) as f64, mass[i] / total]
        })
        .collect()
}
