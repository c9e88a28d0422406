//! Test images, synthetic hyperspectral scenes and PGM input/output.

use std::path::Path;

use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::prox::Shape;
use crate::samplers::chain_rng;

/// Piecewise-constant grey-level scene in `[0, 255]`, used in place of a
/// photograph for the deconvolution experiment.
pub fn synthetic_scene(size: usize) -> Vec<f64> {
    let n = size as f64;
    let mut img = vec![0.0; size * size];
    for r in 0..size {
        for c in 0..size {
            let (y, x) = ((r as f64 + 0.5) / n, (c as f64 + 0.5) / n);
            // sky, then ground below the horizon
            let mut v = if y < 0.62 { 190.0 } else { 70.0 };
            // tall rectangle (building)
            if (0.08..0.26).contains(&x) && (0.30..0.62).contains(&y) {
                v = 120.0;
            }
            // disc (head)
            if (x - 0.52).powi(2) + (y - 0.28).powi(2) < 0.11f64.powi(2) {
                v = 25.0;
            }
            // body, a trapezoid widening downwards
            let half = 0.07 + 0.25 * (y - 0.38).max(0.0);
            if (0.38..0.95).contains(&y) && (x - 0.52).abs() < half {
                v = 15.0;
            }
            // tripod legs
            for (x0, slope) in [(0.78, -0.35), (0.80, 0.0), (0.82, 0.35)] {
                if (0.55..0.97).contains(&y) && (x - (x0 + slope * (y - 0.55))).abs() < 0.012 {
                    v = 40.0;
                }
            }
            // camera box
            if (0.70..0.88).contains(&x) && (0.45..0.55).contains(&y) {
                v = 230.0;
            }
            img[r * size + c] = v;
        }
    }
    img
}

/// Modified Shepp-Logan phantom with intensities in `[0, 1]`.
pub fn shepp_logan(size: usize) -> Vec<f64> {
    // (intensity, a, b, x0, y0, phi in degrees)
    const ELLIPSES: [(f64, f64, f64, f64, f64, f64); 10] = [
        (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
        (-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0),
        (-0.2, 0.11, 0.31, 0.22, 0.0, -18.0),
        (-0.2, 0.16, 0.41, -0.22, 0.0, 18.0),
        (0.1, 0.21, 0.25, 0.0, 0.35, 0.0),
        (0.1, 0.046, 0.046, 0.0, 0.1, 0.0),
        (0.1, 0.046, 0.046, 0.0, -0.1, 0.0),
        (0.1, 0.046, 0.023, -0.08, -0.605, 0.0),
        (0.1, 0.023, 0.023, 0.0, -0.606, 0.0),
        (0.1, 0.023, 0.046, 0.06, -0.605, 0.0),
    ];
    let mut img = vec![0.0; size * size];
    for r in 0..size {
        for c in 0..size {
            let x = (2.0 * c as f64 + 1.0) / size as f64 - 1.0;
            let y = 1.0 - (2.0 * r as f64 + 1.0) / size as f64;
            let mut v = 0.0;
            for &(a0, a, b, x0, y0, phi) in &ELLIPSES {
                let (s, co) = phi.to_radians().sin_cos();
                let xr = (x - x0) * co + (y - y0) * s;
                let yr = -(x - x0) * s + (y - y0) * co;
                if (xr / a).powi(2) + (yr / b).powi(2) <= 1.0 {
                    v += a0;
                }
            }
            img[r * size + c] = f64::clamp(v, 0.0, 1.0);
        }
    }
    img
}

/// Smooth, positive spectral signatures: `bands x endmembers`, row-major,
/// each column a sum of a few Gaussian bumps in `[0.05, 0.95]`.
pub fn synthetic_endmembers(bands: usize, endmembers: usize, seed: u64) -> Vec<f64> {
    let mut rng = chain_rng(seed, 0xE4D);
    let mut a = vec![0.0; bands * endmembers];
    for j in 0..endmembers {
        let bumps: Vec<(f64, f64, f64)> = (0..3)
            .map(|_| (rng.random_range(0.0..1.0), rng.random_range(0.08..0.3), rng.random_range(0.2..0.8)))
            .collect();
        let base = rng.random_range(0.05..0.3);
        for b in 0..bands {
            let t = b as f64 / (bands.max(2) - 1) as f64;
            let v = base + bumps.iter().map(|(c, w, h)| h * (-((t - c) / w).powi(2)).exp()).sum::<f64>();
            a[b * endmembers + j] = v.clamp(0.05, 0.95);
        }
    }
    a
}

/// Abundance maps (`endmembers` channels of `shape`, channel-major) that sum to
/// one per pixel and are sparse: square patches of pure material over a mixed
/// background.
pub fn synthetic_abundances(shape: Shape, endmembers: usize, seed: u64) -> Vec<f64> {
    let n = shape.len();
    let k = endmembers;
    let mut rng = chain_rng(seed, 0xAB0);
    let mut x = vec![0.0; k * n];
    for r in 0..shape.rows {
        for c in 0..shape.cols {
            // background: a smooth two-material blend
            let t = c as f64 / shape.cols.max(2) as f64;
            x[r * shape.cols + c] = 1.0 - t;
            if k > 1 {
                x[n + r * shape.cols + c] = t;
            }
        }
    }
    let side = (shape.rows.min(shape.cols) / 3).max(1);
    for patch in 0..2 * k {
        let j = patch % k;
        let r0 = rng.random_range(0..=shape.rows - side);
        let c0 = rng.random_range(0..=shape.cols - side);
        for r in r0..r0 + side {
            for c in c0..c0 + side {
                let p = r * shape.cols + c;
                for m in 0..k {
                    x[m * n + p] = if m == j { 1.0 } else { 0.0 };
                }
            }
        }
    }
    x
}

/// Reads a binary (`P5`) or ASCII (`P2`) greymap; returns pixels scaled to the
/// file's `maxval` range as floats, and the shape.
pub fn read_pgm(path: &Path) -> Result<(Vec<f64>, Shape)> {
    let bytes = std::fs::read(path)?;
    parse_pgm(&bytes)
}

pub fn parse_pgm(bytes: &[u8]) -> Result<(Vec<f64>, Shape)> {
    let mut pos = 0;
    let mut header = Vec::new();
    while header.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(invalid("truncated PGM header"));
        }
        header.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| invalid(format!("bad PGM header field `{s}`")));
    let (cols, rows, maxval) = (num(&header[1])?, num(&header[2])?, num(&header[3])?);
    if cols == 0 || rows == 0 || maxval == 0 || maxval > 65535 {
        return Err(invalid("PGM dimensions out of range"));
    }
    let n = rows * cols;
    let data = match header[0].as_str() {
        "P5" => {
            let body = &bytes[(pos + 1).min(bytes.len())..];
            let width = if maxval < 256 { 1 } else { 2 };
            if body.len() < n * width {
                return Err(invalid("truncated PGM raster"));
            }
            (0..n)
                .map(|i| if width == 1 { body[i] as f64 } else { u16::from_be_bytes([body[2 * i], body[2 * i + 1]]) as f64 })
                .collect::<Vec<_>>()
        }
        "P2" => {
            let vals: std::result::Result<Vec<f64>, _> =
                String::from_utf8_lossy(&bytes[pos..]).split_ascii_whitespace().take(n).map(|t| t.parse::<f64>()).collect();
            let vals = vals.map_err(|_| invalid("bad PGM raster value"))?;
            if vals.len() < n {
                return Err(invalid("truncated PGM raster"));
            }
            vals
        }
        other => return Err(invalid(format!("unsupported PGM magic `{other}`"))),
    };
    Ok((data, Shape::new(rows, cols)))
}

/// Writes an 8-bit binary greymap, mapping `[lo, hi]` linearly to `[0, 255]`.
pub fn write_pgm(path: &Path, image: &[f64], shape: Shape, lo: f64, hi: f64) -> Result<()> {
    if image.len() != shape.len() {
        return Err(Error::ShapeMismatch { expected: shape.len(), got: image.len() });
    }
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut out = format!("P5\n{} {}\n255\n", shape.cols, shape.rows).into_bytes();
    out.extend(image.iter().map(|v| (((v - lo) / span).clamp(0.0, 1.0) * 255.0).round() as u8));
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phantom_range_and_symmetry() {
        let p = shepp_logan(64);
        assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(p.iter().any(|&v| v > 0.9));
        assert_eq!(p[0], 0.0);
        // outer ellipse fills the centre with positive intensity
        assert!(p[32 * 64 + 32] > 0.0);
    }

    #[test]
    fn abundances_sum_to_one() {
        let shape = Shape::new(16, 16);
        let x = synthetic_abundances(shape, 3, 7);
        for p in 0..shape.len() {
            let s: f64 = (0..3).map(|j| x[j * shape.len() + p]).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert!(x.iter().filter(|&&v| v == 0.0).count() > shape.len());
    }

    #[test]
    fn endmembers_are_bounded_and_distinct() {
        let a = synthetic_endmembers(20, 3, 1);
        assert!(a.iter().all(|v| (0.05..=0.95).contains(v)));
        let col = |j: usize| (0..20).map(|b| a[b * 3 + j]).collect::<Vec<_>>();
        assert_ne!(col(0), col(1));
    }

    #[test]
    fn pgm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.pgm");
        let shape = Shape::new(3, 4);
        let img: Vec<f64> = (0..12).map(|i| i as f64 * 20.0).collect();
        write_pgm(&path, &img, shape, 0.0, 255.0).unwrap();
        let (back, s) = read_pgm(&path).unwrap();
        assert_eq!(s, shape);
        assert_eq!(back, img);
    }

    #[test]
    fn ascii_pgm_with_comments() {
        let text = b"P2\n# comment\n2 2\n15\n0 5\n10 15\n";
        let (v, s) = parse_pgm(text).unwrap();
        assert_eq!(s, Shape::new(2, 2));
        assert_eq!(v, vec![0.0, 5.0, 10.0, 15.0]);
    }

    #[test]
    fn scene_is_piecewise_constant() {
        let img = synthetic_scene(64);
        let mut levels: Vec<i64> = img.iter().map(|&v| v as i64).collect();
        levels.sort();
        levels.dedup();
        assert!(levels.len() <= 8);
        assert!(img.iter().all(|v| (0.0..=255.0).contains(v)));
    }
}
