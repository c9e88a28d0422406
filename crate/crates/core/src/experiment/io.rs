//! Artifact files: flat `f64` binaries with JSON headers, tidy CSV and the
//! checksummed manifest.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};
use crate::experiment::config::ExperimentConfig;
use crate::samplers::{ChainTrace, SamplerConfig};

pub const MANIFEST_NAME: &str = "manifest.json";

/// Little-endian `f64` array.
pub fn write_f64_bin(path: &Path, data: &[f64]) -> Result<()> {
    let mut bytes = Vec::with_capacity(data.len() * 8);
    for v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn read_f64_bin(path: &Path) -> Result<Vec<f64>> {
    let bytes = std::fs::read(path)?;
    if bytes.len() % 8 != 0 {
        return Err(invalid(format!("{} is not a whole number of f64 values", path.display())));
    }
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
}

/// Header stored next to a trace's sample binary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub label: String,
    pub chain: usize,
    pub dimension: usize,
    pub n_stored: usize,
    pub gradient_evals: u64,
    pub seed: u64,
    pub stream: u64,
    pub config: SamplerConfig,
    pub samples_file: Option<String>,
    pub trace_statistic_file: Option<String>,
    pub running_mean_file: String,
}

pub const TIMING_NAME: &str = "timing.json";

/// Writes one chain: samples binary, trace-statistic CSV, running mean and
/// header. Returns the header and the files written, relative to `dir`.
pub fn write_trace(dir: &Path, stem: &str, trace: &ChainTrace, chain: usize, stream: u64, label: &str) -> Result<(TraceHeader, Vec<String>)> {
    let mut files = Vec::new();
    let samples_file = if trace.config.store_samples {
        let name = format!("{stem}.samples.bin");
        write_f64_bin(&dir.join(&name), &trace.samples)?;
        files.push(name.clone());
        Some(name)
    } else {
        None
    };
    let trace_statistic_file = if trace.config.store_trace_statistic {
        let name = format!("{stem}.trace.csv");
        let rows: Vec<Vec<f64>> =
            trace.stored_iterations.iter().zip(&trace.trace_statistic).map(|(&i, &v)| vec![i as f64, v]).collect();
        write_csv(&dir.join(&name), &["iteration", "log_pi_lambda"], &rows)?;
        files.push(name.clone());
        Some(name)
    } else {
        None
    };
    let running_mean_file = format!("{stem}.mean.bin");
    write_f64_bin(&dir.join(&running_mean_file), &trace.running_mean)?;
    files.push(running_mean_file.clone());
    let header = TraceHeader {
        label: label.to_string(),
        chain,
        dimension: trace.dimension,
        n_stored: trace.n_stored(),
        gradient_evals: trace.gradient_evals,
        seed: trace.config.seed,
        stream,
        config: trace.config.clone(),
        samples_file,
        trace_statistic_file,
        running_mean_file,
    };
    let name = format!("{stem}.header.json");
    write_json(&dir.join(&name), &header)?;
    files.push(name);
    Ok((header, files))
}

/// Iterations kept by a sampler config: every `thinning`-th after burn-in.
pub fn stored_iterations(cfg: &SamplerConfig) -> Vec<u64> {
    let t = cfg.thinning.max(1);
    (cfg.burn_in + t..=cfg.n_iterations).step_by(t as usize).collect()
}

/// Rebuilds a trace from its header; the trace statistic and wall time are not reloaded.
pub fn read_trace(dir: &Path, header: &TraceHeader) -> Result<ChainTrace> {
    let samples = match &header.samples_file {
        Some(f) => read_f64_bin(&dir.join(f))?,
        None => Vec::new(),
    };
    if !samples.is_empty() && samples.len() != header.n_stored * header.dimension {
        return Err(Error::ShapeMismatch { expected: header.n_stored * header.dimension, got: samples.len() });
    }
    let running_mean = read_f64_bin(&dir.join(&header.running_mean_file))?;
    Ok(ChainTrace {
        dimension: header.dimension,
        samples,
        stored_iterations: stored_iterations(&header.config),
        trace_statistic: Vec::new(),
        gradient_evals: header.gradient_evals,
        wall_time: 0.0,
        running_mean,
        final_state: Vec::new(),
        config: header.config.clone(),
    })
}

/// Formats a float so that it reads back exactly.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{v:?}")
    }
}

/// CSV with a header row; every cell is a float.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut out = header.join(",");
    out.push('\n');
    for r in rows {
        let cells: Vec<String> = r.iter().map(|v| fmt_f64(*v)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// CSV with a header row and preformatted string cells.
pub fn write_csv_text(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut out = header.join(",");
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{}", r.join(","));
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

/// A sampler block as recorded in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockEntry {
    pub label: String,
    pub traces: Vec<TraceHeader>,
    /// MSE-vs-budget curve of the cold-start run, when recorded.
    pub mse_file: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub experiment: String,
    pub config: ExperimentConfig,
    /// Image shape and channel count for imaging experiments.
    pub image: Option<(usize, usize, usize)>,
    pub truth_file: Option<String>,
    pub blocks: Vec<BlockEntry>,
    /// Every deterministic output with its checksum.
    pub files: Vec<FileEntry>,
    /// Wall-clock record; the only output that differs between identical runs.
    pub timing_file: Option<String>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(Error::from)
    }

    /// Directory holding the manifest and every listed file.
    pub fn dir_of(path: &Path) -> PathBuf {
        path.parent().map(Path::to_path_buf).unwrap_or_default()
    }
}

/// Checksums `files` (relative to `dir`) in sorted order.
pub fn file_entries(dir: &Path, files: &[String]) -> Result<Vec<FileEntry>> {
    let mut sorted = files.to_vec();
    sorted.sort();
    sorted.dedup();
    sorted
        .into_iter()
        .map(|f| {
            let p = dir.join(&f);
            Ok(FileEntry { sha256: sha256_file(&p)?, bytes: std::fs::metadata(&p)?.len(), path: f })
        })
        .collect()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::model_gaussian;
    use crate::samplers::run_chain;

    #[test]
    fn f64_binary_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.bin");
        let v = vec![1.0, -2.5, f64::MIN_POSITIVE, 1e300];
        write_f64_bin(&p, &v).unwrap();
        assert_eq!(read_f64_bin(&p).unwrap(), v);
    }

    #[test]
    fn csv_values_read_back_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        write_csv(&p, &["a", "b"], &[vec![0.1, 1.0 / 3.0]]).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("a,b"));
        let vals: Vec<f64> = lines.next().unwrap().split(',').map(|c| c.parse().unwrap()).collect();
        assert_eq!(vals, vec![0.1, 1.0 / 3.0]);
    }

    #[test]
    fn trace_round_trip() {
        let model = model_gaussian(&[1.0, 0.5]).unwrap();
        let cfg = crate::samplers::SamplerConfig::myula(0.1, 50).with_seed(3);
        let trace = run_chain(&model, &cfg, &[0.0, 0.0]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (h, files) = write_trace(dir.path(), "t", &trace, 0, 0, "myula_1").unwrap();
        assert_eq!(files.len(), 4);
        let back = read_trace(dir.path(), &h).unwrap();
        assert_eq!(back.samples, trace.samples);
        assert_eq!(back.running_mean, trace.running_mean);
        assert_eq!(back.stored_iterations, trace.stored_iterations);
        let thinned = cfg.clone().with_burn_in(7).with_thinning(4);
        let t2 = run_chain(&model, &thinned, &[0.0, 0.0]).unwrap();
        assert_eq!(stored_iterations(&thinned), t2.stored_iterations);
    }

    #[test]
    fn checksums_are_stable() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("x"), b"abc").unwrap();
        let e = file_entries(dir.path(), &["x".into()]).unwrap();
        assert_eq!(e[0].sha256, "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
        assert_eq!(e[0].bytes, 3);
    }
}
