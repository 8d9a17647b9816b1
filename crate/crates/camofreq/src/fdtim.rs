//! Frequency-domain camouflage suppression.
//!
//! Repeating camouflage textures concentrate their energy into a small number
//! of dominant frequency components. This module removes the K
//! largest-amplitude cells of an image's spectrum and reconstructs the image,
//! which suppresses the periodic pattern while keeping broadband object
//! structure, then gates feature maps with a learned sigmoid on the
//! difference between the original-image features and the filtered-image
//! features.
//!
//! Conventions: the forward transform is the plain unnormalized double sum
//! (implemented with an FFT); the inverse carries the 1/(M·N) factor. A
//! spectrum of a real image is conjugate-symmetric, and the top-K filter
//! removes cells in conjugate pairs so reconstructions stay real.

use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Tensor};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

/// Per-channel complex spectrum of an M×N×C image.
///
/// Storage is planar: channel `ch` occupies the contiguous index range
/// `ch·M·N .. (ch+1)·M·N`, row-major over (u, v).
#[derive(Clone)]
pub struct Spectrum {
    m: usize,
    n: usize,
    channels: usize,
    re: Vec<f64>,
    im: Vec<f64>,
}

impl Spectrum {
    /// All-zero spectrum with the given dimensions.
    pub fn new(m: usize, n: usize, channels: usize) -> Spectrum {
        Spectrum {
            m,
            n,
            channels,
            re: vec![0.0; m * n * channels],
            im: vec![0.0; m * n * channels],
        }
    }

    /// (rows, columns, channels).
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.m, self.n, self.channels)
    }

    fn idx(&self, ch: usize, u: usize, v: usize) -> usize {
        (ch * self.m + u) * self.n + v
    }

    pub fn re_at(&self, ch: usize, u: usize, v: usize) -> f64 {
        self.re[self.idx(ch, u, v)]
    }

    pub fn im_at(&self, ch: usize, u: usize, v: usize) -> f64 {
        self.im[self.idx(ch, u, v)]
    }

    pub fn set(&mut self, ch: usize, u: usize, v: usize, re: f64, im: f64) {
        let i = self.idx(ch, u, v);
        self.re[i] = re;
        self.im[i] = im;
    }

    /// Spectral energy Σ|f(u,v)|² of one channel.
    pub fn energy(&self, ch: usize) -> f64 {
        let base = ch * self.m * self.n;
        let end = base + self.m * self.n;
        self.re[base..end]
            .iter()
            .zip(&self.im[base..end])
            .map(|(&a, &b)| a * a + b * b)
            .sum()
    }
}

/// Run an FFT plan over both axes of one channel grid (row-major m×n).
fn fft2_in_place(grid: &mut [Complex64], m: usize, n: usize, planner: &mut FftPlanner<f64>, inverse: bool) {
    let row_fft = if inverse {
        planner.plan_fft_inverse(n)
    } else {
        planner.plan_fft_forward(n)
    };
    let col_fft = if inverse {
        planner.plan_fft_inverse(m)
    } else {
        planner.plan_fft_forward(m)
    };
    for row in grid.chunks_exact_mut(n) {
        row_fft.process(row);
    }
    let mut transposed = vec![Complex64::new(0.0, 0.0); m * n];
    for u in 0..m {
        for v in 0..n {
            transposed[v * m + u] = grid[u * n + v];
        }
    }
    for col in transposed.chunks_exact_mut(m) {
        col_fft.process(col);
    }
    for u in 0..m {
        for v in 0..n {
            grid[u * n + v] = transposed[v * m + u];
        }
    }
}

/// Forward 2-D transform of each channel, unnormalized:
/// f(u,v) = Σ_i Σ_j x(i,j) · e^(−2πi·(ui/M + vj/N)).
pub fn dft2(x: &Tensor) -> Result<Spectrum> {
    let (m, n, c) = x.hwc()?;
    let src = x.data();
    let mut planner = FftPlanner::new();
    let mut spec = Spectrum::new(m, n, c);
    let mut grid = vec![Complex64::new(0.0, 0.0); m * n];
    for ch in 0..c {
        for p in 0..m * n {
            grid[p] = Complex64::new(src[p * c + ch], 0.0);
        }
        fft2_in_place(&mut grid, m, n, &mut planner, false);
        let base = ch * m * n;
        for (p, z) in grid.iter().enumerate() {
            spec.re[base + p] = z.re;
            spec.im[base + p] = z.im;
        }
    }
    Ok(spec)
}

/// Inverse 2-D transform with the 1/(M·N) normalization, taking the real
/// part. A spectrum that is not conjugate-symmetric reconstructs to a
/// genuinely complex image; any imaginary residue above 1e-6 is reported as
/// a numerical-integrity error rather than silently dropped.
pub fn idft2(s: &Spectrum) -> Result<Tensor> {
    let (m, n, c) = s.dims();
    let mut planner = FftPlanner::new();
    let scale = 1.0 / (m * n) as f64;
    let mut out = vec![0.0; m * n * c];
    let mut grid = vec![Complex64::new(0.0, 0.0); m * n];
    let mut worst_residue = 0.0f64;
    for ch in 0..c {
        let base = ch * m * n;
        for (p, cell) in grid.iter_mut().enumerate() {
            *cell = Complex64::new(s.re[base + p], s.im[base + p]);
        }
        fft2_in_place(&mut grid, m, n, &mut planner, true);
        for (p, z) in grid.iter().enumerate() {
            out[p * c + ch] = z.re * scale;
            worst_residue = worst_residue.max((z.im * scale).abs());
        }
    }
    if worst_residue > 1e-6 {
        return Err(Error::Numerical(format!(
            "inverse transform produced imaginary residue {worst_residue:.3e}; \
             the spectrum is not conjugate-symmetric"
        )));
    }
    Tensor::new(&[m, n, c], out)
}

/// Amplitude map A(u,v) = sqrt(re² + im²) as an M×N×C tensor.
pub fn amplitude(s: &Spectrum) -> Tensor {
    let (m, n, c) = s.dims();
    let mut out = vec![0.0; m * n * c];
    for ch in 0..c {
        let base = ch * m * n;
        for p in 0..m * n {
            out[p * c + ch] = s.re[base + p].hypot(s.im[base + p]);
        }
    }
    Tensor::new(&[m, n, c], out).expect("amplitude dims match spectrum dims")
}

/// Removal bookkeeping from [`topk_filter_detailed`], indexed by channel.
#[derive(Debug, Clone)]
pub struct FilterReport {
    /// Number of grid cells zeroed per channel (may exceed the requested K
    /// by one when the cut falls inside a conjugate pair).
    pub cells_removed: Vec<usize>,
    /// Σ|f(u,v)|² over the zeroed cells, per channel.
    pub energy_removed: Vec<f64>,
}

/// Zero the K largest-amplitude cells of each channel.
///
/// Cells are ranked per channel by descending amplitude with lexicographic
/// (u, v) tie-breaking. Removing a cell also removes its conjugate mirror at
/// ((M−u) mod M, (N−v) mod N) so the inverse transform stays real; both
/// cells count toward K (a self-conjugate cell counts once). Removal stops
/// as soon as at least K cells are gone, so the count can overshoot by one.
pub fn topk_filter(s: &Spectrum, k: usize) -> Result<Spectrum> {
    Ok(topk_filter_detailed(s, k, false)?.0)
}

/// [`topk_filter`] with removal bookkeeping and an opt-out for the DC cell.
///
/// With `protect_dc` the (0,0) cell is skipped during ranking (it neither
/// counts toward K nor gets removed), preserving the image mean.
pub fn topk_filter_detailed(
    s: &Spectrum,
    k: usize,
    protect_dc: bool,
) -> Result<(Spectrum, FilterReport)> {
    let (m, n, c) = s.dims();
    if k > m * n {
        return Err(Error::Contract(format!(
            "top-K filter: k = {k} exceeds the {m}×{n} = {} cells per channel",
            m * n
        )));
    }
    let mut out = s.clone();
    let mut report = FilterReport {
        cells_removed: vec![0; c],
        energy_removed: vec![0.0; c],
    };
    if k == 0 {
        return Ok((out, report));
    }
    let mut order: Vec<usize> = Vec::with_capacity(m * n);
    for ch in 0..c {
        let base = ch * m * n;
        order.clear();
        order.extend(0..m * n);
        let amp2 = |p: usize| {
            let (re, im) = (s.re[base + p], s.im[base + p]);
            re * re + im * im
        };
        // Descending amplitude, then ascending (u, v) — deterministic.
        order.sort_by(|&a, &b| {
            amp2(b)
                .partial_cmp(&amp2(a))
                .expect("amplitudes are finite")
                .then(a.cmp(&b))
        });
        let mut removed = vec![false; m * n];
        let mut count = 0usize;
        let mut energy = 0.0;
        for &p in &order {
            if count >= k {
                break;
            }
            if removed[p] {
                continue;
            }
            let (u, v) = (p / n, p % n);
            if protect_dc && u == 0 && v == 0 {
                continue;
            }
            let mirror = (((m - u) % m) * n) + ((n - v) % n);
            for cell in [p, mirror] {
                if removed[cell] {
                    continue;
                }
                removed[cell] = true;
                count += 1;
                energy += amp2(cell);
                out.re[base + cell] = 0.0;
                out.im[base + cell] = 0.0;
            }
        }
        report.cells_removed[ch] = count;
        report.energy_removed[ch] = energy;
    }
    Ok((out, report))
}

/// Full image-space filter: transform, remove the K dominant components per
/// channel, reconstruct. K = 0 is the identity (up to transform round-off).
pub fn fdtim_image(x: &Tensor, k: usize) -> Result<Tensor> {
    idft2(&topk_filter(&dft2(x)?, k)?)
}

/// Parameter names used by [`truth_gate`].
pub const TRUTH_GATE_WEIGHT: &str = "truth_gate.w";
pub const TRUTH_GATE_BIAS: &str = "truth_gate.b";

/// Register the gate convolution parameters for `channels`-wide features.
pub fn register_truth_gate(params: &mut ParamStore, channels: usize) -> Result<()> {
    let limit = 1.0 / ((9 * channels) as f64).sqrt();
    params.add_uniform(TRUTH_GATE_WEIGHT, &[3, 3, channels, channels], limit)?;
    params.add_zeros(TRUTH_GATE_BIAS, &[1, 1, channels])
}

/// Gate the original features by where they diverge from the filtered-image
/// features: F_out = F ⊙ sigmoid(Conv₃ₓ₃(F − F_filtered) + b).
///
/// The gate lies in (0, 1), so |F_out| ≤ |F| elementwise; with
/// zero-initialized weights the gate is exactly 0.5.
pub fn truth_gate(f_o1: &Tensor, f_k: &Tensor, params: &ParamStore) -> Result<Tensor> {
    if f_o1.shape() != f_k.shape() {
        return Err(Error::Dimension(format!(
            "truth gate inputs must match: {:?} vs {:?}",
            f_o1.shape(),
            f_k.shape()
        )));
    }
    let w = params.get(TRUTH_GATE_WEIGHT)?;
    let b = params.get(TRUTH_GATE_BIAS)?;
    let gate = f_o1.sub(f_k)?.conv2d(w, 1, 1)?.add(b)?.sigmoid();
    f_o1.mul(&gate)
}
