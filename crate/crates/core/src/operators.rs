//! Linear observation operators: circular blur, subsampled Fourier transform
//! and the linear spectral mixing model.

use std::fmt;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{invalid, Error, Result};
use crate::prox::Shape;

/// A real linear map `R^n -> R^m` with its adjoint and a bound on `|A|^2`.
pub trait LinearOperator: Send + Sync {
    fn input_len(&self) -> usize;
    fn output_len(&self) -> usize;
    fn apply(&self, x: &[f64]) -> Vec<f64>;
    fn apply_adjoint(&self, y: &[f64]) -> Vec<f64>;
    /// Squared spectral norm (exact or an upper bound).
    fn operator_norm_sq(&self) -> f64;
}

/// Row/column 2-D FFT on a row-major complex buffer.
#[derive(Clone)]
struct Fft2 {
    shape: Shape,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Fft2").field("shape", &self.shape).finish()
    }
}

impl Fft2 {
    fn new(shape: Shape) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            shape,
            row_fwd: planner.plan_fft_forward(shape.cols),
            row_inv: planner.plan_fft_inverse(shape.cols),
            col_fwd: planner.plan_fft_forward(shape.rows),
            col_inv: planner.plan_fft_inverse(shape.rows),
        }
    }

    /// Unnormalised transform in place.
    fn run(&self, buf: &mut [Complex64], inverse: bool) {
        let (r, c) = (self.shape.rows, self.shape.cols);
        let (row, col) = if inverse {
            (&self.row_inv, &self.col_inv)
        } else {
            (&self.row_fwd, &self.col_fwd)
        };
        row.process(buf);
        let mut column = vec![Complex64::new(0.0, 0.0); r];
        for j in 0..c {
            for i in 0..r {
                column[i] = buf[i * c + j];
            }
            col.process(&mut column);
            for i in 0..r {
                buf[i * c + j] = column[i];
            }
        }
    }

    fn forward_real(&self, x: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.run(&mut buf, false);
        buf
    }
}

/// Circular convolution with a small odd-sized kernel, diagonalised by the DFT.
#[derive(Debug, Clone)]
pub struct BlurOperator {
    shape: Shape,
    fft: Fft2,
    transfer: Vec<Complex64>,
    norm_sq: f64,
}

impl BlurOperator {
    pub fn shape(&self) -> Shape {
        self.shape
    }

    fn filter(&self, x: &[f64], conjugate: bool) -> Vec<f64> {
        let mut buf = self.fft.forward_real(x);
        for (b, h) in buf.iter_mut().zip(&self.transfer) {
            *b *= if conjugate { h.conj() } else { *h };
        }
        self.fft.run(&mut buf, true);
        let scale = 1.0 / self.shape.len() as f64;
        buf.iter().map(|v| v.re * scale).collect()
    }
}

/// Builds a periodic blur from a kernel of odd dimensions centred on its middle entry.
pub fn make_blur(kernel: &[f64], kernel_shape: Shape, image_shape: Shape) -> Result<BlurOperator> {
    if kernel.len() != kernel_shape.len() {
        return Err(Error::ShapeMismatch { expected: kernel_shape.len(), got: kernel.len() });
    }
    if kernel_shape.rows % 2 == 0 || kernel_shape.cols % 2 == 0 {
        return Err(invalid("blur kernel dimensions must be odd"));
    }
    if kernel_shape.rows > image_shape.rows || kernel_shape.cols > image_shape.cols {
        return Err(invalid("blur kernel larger than the image"));
    }
    let (r, c) = (image_shape.rows, image_shape.cols);
    let (cr, cc) = (kernel_shape.rows / 2, kernel_shape.cols / 2);
    let mut psf = vec![0.0; image_shape.len()];
    for a in 0..kernel_shape.rows {
        for b in 0..kernel_shape.cols {
            let i = (a + r - cr) % r;
            let j = (b + c - cc) % c;
            psf[i * c + j] += kernel[a * kernel_shape.cols + b];
        }
    }
    let fft = Fft2::new(image_shape);
    let transfer = fft.forward_real(&psf);
    let norm_sq = transfer.iter().map(|h| h.norm_sqr()).fold(0.0, f64::max);
    Ok(BlurOperator { shape: image_shape, fft, transfer, norm_sq })
}

/// Normalised `size x size` box kernel.
pub fn uniform_kernel(size: usize) -> (Vec<f64>, Shape) {
    let n = size * size;
    (vec![1.0 / n as f64; n], Shape::new(size, size))
}

impl LinearOperator for BlurOperator {
    fn input_len(&self) -> usize {
        self.shape.len()
    }

    fn output_len(&self) -> usize {
        self.shape.len()
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.filter(x, false)
    }

    fn apply_adjoint(&self, y: &[f64]) -> Vec<f64> {
        self.filter(y, true)
    }

    fn operator_norm_sq(&self) -> f64 {
        self.norm_sq
    }
}

/// Geometry of the retained Fourier coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskPattern {
    /// Radial lines through DC at seeded angles.
    #[default]
    Radial,
    /// Uniformly random coefficients plus DC.
    Uniform,
}

/// Unitary 2-D DFT followed by coefficient selection. Complex outputs are
/// stacked as `[re_0, .., re_{m-1}, im_0, .., im_{m-1}]`.
#[derive(Debug, Clone)]
pub struct FourierMask {
    shape: Shape,
    fft: Fft2,
    indices: Vec<usize>,
}

impl FourierMask {
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }
}

fn radial_indices(shape: Shape, target: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let (r, c) = (shape.rows as i64, shape.cols as i64);
    let mut taken = vec![false; shape.len()];
    let mut out = Vec::with_capacity(target);
    taken[0] = true;
    out.push(0);
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let offset: f64 = rng.random_range(0.0..std::f64::consts::PI);
    let radius = (r.max(c) as f64) / 2.0 + 1.0;
    let mut line = 0usize;
    // Lines sweep the plane; give up after enough angles and fill uniformly.
    while out.len() < target && line < 8 * (r + c) as usize {
        let theta = offset + golden * line as f64;
        let (sin, cos) = theta.sin_cos();
        let mut t = -radius;
        while t <= radius && out.len() < target {
            let u = (t * cos).round() as i64;
            let v = (t * sin).round() as i64;
            t += 0.5;
            if u.abs() > r / 2 || v.abs() > c / 2 {
                continue;
            }
            let i = u.rem_euclid(r) as usize;
            let j = v.rem_euclid(c) as usize;
            let idx = i * shape.cols + j;
            if !taken[idx] {
                taken[idx] = true;
                out.push(idx);
            }
        }
        line += 1;
    }
    if out.len() < target {
        let mut rest: Vec<usize> = (0..shape.len()).filter(|&i| !taken[i]).collect();
        rest.shuffle(rng);
        out.extend(rest.into_iter().take(target - out.len()));
    }
    out
}

/// Builds a Fourier subsampling operator keeping `ceil(keep_fraction * d)` coefficients.
pub fn make_fourier_mask(
    image_shape: Shape,
    keep_fraction: f64,
    seed: u64,
    pattern: MaskPattern,
) -> Result<FourierMask> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(invalid(format!("keep_fraction must lie in (0, 1], got {keep_fraction}")));
    }
    let d = image_shape.len();
    let target = ((keep_fraction * d as f64).ceil() as usize).clamp(1, d);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices = match pattern {
        MaskPattern::Radial => radial_indices(image_shape, target, &mut rng),
        MaskPattern::Uniform => {
            let mut rest: Vec<usize> = (1..d).collect();
            rest.shuffle(&mut rng);
            std::iter::once(0).chain(rest.into_iter().take(target - 1)).collect()
        }
    };
    indices.sort_unstable();
    Ok(FourierMask { shape: image_shape, fft: Fft2::new(image_shape), indices })
}

impl LinearOperator for FourierMask {
    fn input_len(&self) -> usize {
        self.shape.len()
    }

    fn output_len(&self) -> usize {
        2 * self.indices.len()
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let buf = self.fft.forward_real(x);
        let scale = 1.0 / (self.shape.len() as f64).sqrt();
        let m = self.indices.len();
        let mut out = vec![0.0; 2 * m];
        for (k, &idx) in self.indices.iter().enumerate() {
            out[k] = buf[idx].re * scale;
            out[m + k] = buf[idx].im * scale;
        }
        out
    }

    fn apply_adjoint(&self, y: &[f64]) -> Vec<f64> {
        let m = self.indices.len();
        let mut buf = vec![Complex64::new(0.0, 0.0); self.shape.len()];
        for (k, &idx) in self.indices.iter().enumerate() {
            buf[idx] = Complex64::new(y[k], y[m + k]);
        }
        self.fft.run(&mut buf, true);
        let scale = 1.0 / (self.shape.len() as f64).sqrt();
        buf.iter().map(|v| v.re * scale).collect()
    }

    fn operator_norm_sq(&self) -> f64 {
        1.0
    }
}

/// Linear mixing `Y = A X` with `A` of size bands x endmembers and `X` stored
/// as `endmembers` abundance maps of `n_pixels` entries each.
#[derive(Debug, Clone)]
pub struct MixingOperator {
    bands: usize,
    endmembers: usize,
    n_pixels: usize,
    matrix: Vec<f64>,
    norm_sq: f64,
}

impl MixingOperator {
    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn endmembers(&self) -> usize {
        self.endmembers
    }

    pub fn n_pixels(&self) -> usize {
        self.n_pixels
    }

    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }
}

/// Row-major dense matrix-vector product.
fn matvec(a: &[f64], rows: usize, cols: usize, x: &[f64], transpose: bool) -> Vec<f64> {
    if transpose {
        let mut out = vec![0.0; cols];
        for i in 0..rows {
            for j in 0..cols {
                out[j] += a[i * cols + j] * x[i];
            }
        }
        out
    } else {
        (0..rows).map(|i| (0..cols).map(|j| a[i * cols + j] * x[j]).sum()).collect()
    }
}

/// Largest eigenvalue of `A^T A` by power iteration, relative tolerance `tol`.
pub fn power_iteration_norm_sq<F>(n: usize, mut gram: F, tol: f64, max_iter: usize, seed: u64) -> f64
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let nrm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= nrm);
    let mut estimate = 0.0;
    for _ in 0..max_iter {
        let w = gram(&v);
        let next: f64 = w.iter().zip(&v).map(|(a, b)| a * b).sum();
        let wn = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if wn == 0.0 {
            return 0.0;
        }
        v = w.into_iter().map(|x| x / wn).collect();
        if (next - estimate).abs() <= tol * next.abs() {
            return next.max(wn);
        }
        estimate = next;
    }
    estimate
}

/// Builds the mixing operator for a row-major `bands x endmembers` matrix.
pub fn make_mixing(endmember_matrix: &[f64], bands: usize, endmembers: usize, n_pixels: usize) -> Result<MixingOperator> {
    if bands == 0 || endmembers == 0 || endmember_matrix.is_empty() {
        return Err(invalid("endmember matrix must be non-empty"));
    }
    if endmember_matrix.len() != bands * endmembers {
        return Err(Error::ShapeMismatch { expected: bands * endmembers, got: endmember_matrix.len() });
    }
    if n_pixels == 0 {
        return Err(invalid("n_pixels must be positive"));
    }
    let a = endmember_matrix.to_vec();
    let norm_sq = power_iteration_norm_sq(
        endmembers,
        |v| matvec(&a, bands, endmembers, &matvec(&a, bands, endmembers, v, false), true),
        1e-12,
        100_000,
        0x5eed,
    );
    Ok(MixingOperator { bands, endmembers, n_pixels, matrix: a, norm_sq })
}

impl LinearOperator for MixingOperator {
    fn input_len(&self) -> usize {
        self.endmembers * self.n_pixels
    }

    fn output_len(&self) -> usize {
        self.bands * self.n_pixels
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let p = self.n_pixels;
        let mut out = vec![0.0; self.bands * p];
        for b in 0..self.bands {
            let row = &mut out[b * p..(b + 1) * p];
            for j in 0..self.endmembers {
                let a = self.matrix[b * self.endmembers + j];
                for (o, xv) in row.iter_mut().zip(&x[j * p..(j + 1) * p]) {
                    *o += a * xv;
                }
            }
        }
        out
    }

    fn apply_adjoint(&self, y: &[f64]) -> Vec<f64> {
        let p = self.n_pixels;
        let mut out = vec![0.0; self.endmembers * p];
        for j in 0..self.endmembers {
            let row = &mut out[j * p..(j + 1) * p];
            for b in 0..self.bands {
                let a = self.matrix[b * self.endmembers + j];
                for (o, yv) in row.iter_mut().zip(&y[b * p..(b + 1) * p]) {
                    *o += a * yv;
                }
            }
        }
        out
    }

    fn operator_norm_sq(&self) -> f64 {
        self.norm_sq
    }
}

/// Reads a CSV endmember library (rows = bands, columns = endmembers).
/// Returns the row-major matrix and its dimensions.
pub fn read_endmember_csv(text: &str) -> Result<(Vec<f64>, usize, usize)> {
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: std::result::Result<Vec<f64>, _> = line.split(',').map(|f| f.trim().parse::<f64>()).collect();
        let fields = fields.map_err(|e| invalid(format!("endmember csv line {}: {e}", lineno + 1)))?;
        match cols {
            None => cols = Some(fields.len()),
            Some(c) if c != fields.len() => {
                return Err(invalid(format!("endmember csv line {}: ragged row", lineno + 1)));
            }
            _ => {}
        }
        data.extend(fields);
        rows += 1;
    }
    let cols = cols.ok_or_else(|| invalid("endmember csv is empty"))?;
    Ok((data, rows, cols))
}
