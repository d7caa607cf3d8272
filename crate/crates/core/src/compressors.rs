//! Unbiased randomized compressors and their variance certificates.
//!
//! Quantizers normalize by a block norm, stochastically round each
//! normalized magnitude onto a lattice `{0, h, 2h, ...}` and keep the sign.
//! Block norms and sparsifier values are rounded to single precision before
//! use, so the in-memory compressed form is exactly what the encoder puts on
//! the wire and the estimator stays unbiased with respect to the sent norm.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::DVector;
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::smoothness::SmoothnessFactor;

/// Rounds `v >= 0` to `k*h` or `(k+1)*h` with `k = floor(v/h)`, choosing the
/// upper point with probability `v/h - k`. Returns the lattice index.
pub fn stochastic_level<R: Rng + ?Sized>(v: f64, h: f64, rng: &mut R) -> u64 {
    let ratio = v / h;
    let k = ratio.floor();
    let frac = ratio - k;
    let k = if k >= u64::MAX as f64 { u64::MAX } else { k as u64 };
    if frac > 0.0 && rng.random::<f64>() < frac {
        k.saturating_add(1)
    } else {
        k
    }
}

/// The rounded value itself; `E[stochastic_round(v, h)] = v`.
pub fn stochastic_round<R: Rng + ?Sized>(v: f64, h: f64, rng: &mut R) -> f64 {
    stochastic_level(v, h, rng) as f64 * h
}

/// Rounds to the nearest single-precision value.
pub(crate) fn to_wire_f32(v: f64) -> f64 {
    v as f32 as f64
}

/// The output of a block or varying-step quantizer.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedVector {
    pub dim: usize,
    /// Start index of each contiguous block.
    pub block_starts: Vec<usize>,
    /// Single-precision block norms `||x^l||`.
    pub magnitudes: Vec<f64>,
    /// `-1`, `0` or `+1` per coordinate; zero iff the level is zero.
    pub signs: Vec<i8>,
    pub levels: Vec<u64>,
    /// Per-coordinate step, constant within a block for block quantization.
    pub steps: Vec<f64>,
}

impl QuantizedVector {
    pub fn num_blocks(&self) -> usize {
        self.block_starts.len()
    }

    /// Coordinate range of block `l`.
    pub fn block_range(&self, l: usize) -> std::ops::Range<usize> {
        let end = self.block_starts.get(l + 1).copied().unwrap_or(self.dim);
        self.block_starts[l]..end
    }

    pub fn block_sizes(&self) -> Vec<usize> {
        (0..self.num_blocks()).map(|l| self.block_range(l).len()).collect()
    }

    pub fn reconstruct(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for l in 0..self.num_blocks() {
            let mag = self.magnitudes[l];
            for j in self.block_range(l) {
                if self.levels[j] != 0 {
                    out[j] = mag * self.signs[j] as f64 * (self.levels[j] as f64 * self.steps[j]);
                }
            }
        }
        out
    }

    pub fn nonzeros(&self) -> usize {
        self.levels.iter().filter(|&&k| k != 0).count()
    }
}

fn check_steps(steps: &[f64]) -> Result<()> {
    match steps.iter().find(|h| !(h.is_finite() && **h > 0.0)) {
        Some(&h) => Err(Error::InvalidStep(h)),
        None => Ok(()),
    }
}

fn check_blocks(sizes: &[usize], dim: usize) -> Result<()> {
    let sum: usize = sizes.iter().sum();
    if sum != dim || sizes.contains(&0) {
        return Err(Error::BlockSizesMismatch { sum, dim });
    }
    Ok(())
}

/// Shared quantizer core over contiguous blocks with per-coordinate steps.
fn quantize_blocks<R: Rng + ?Sized>(
    x: &[f64],
    sizes: &[usize],
    coord_steps: Vec<f64>,
    rng: &mut R,
) -> QuantizedVector {
    let d = x.len();
    let mut block_starts = Vec::with_capacity(sizes.len());
    let mut magnitudes = Vec::with_capacity(sizes.len());
    let mut signs = vec![0i8; d];
    let mut levels = vec![0u64; d];
    let mut start = 0;
    for &size in sizes {
        block_starts.push(start);
        let block = &x[start..start + size];
        let norm = block.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mag = to_wire_f32(norm);
        magnitudes.push(mag);
        if mag > 0.0 && mag.is_finite() {
            for (off, &v) in block.iter().enumerate() {
                let j = start + off;
                if v == 0.0 {
                    continue;
                }
                let k = stochastic_level(v.abs() / mag, coord_steps[j], rng);
                if k != 0 {
                    levels[j] = k;
                    signs[j] = if v < 0.0 { -1 } else { 1 };
                }
            }
        }
        start += size;
    }
    QuantizedVector { dim: d, block_starts, magnitudes, signs, levels, steps: coord_steps }
}

/// Standard quantization with `s` uniform levels and a single block.
pub fn quantize_standard<R: Rng + ?Sized>(x: &[f64], s: u32, rng: &mut R) -> Result<QuantizedVector> {
    if s == 0 {
        return Err(Error::InvalidParameter("quantization levels s must be >= 1".into()));
    }
    Ok(quantize_blocks(x, &[x.len()], vec![1.0 / s as f64; x.len()], rng))
}

/// Block quantization: block `l` has its own norm and step `steps[l]`.
pub fn quantize_block<R: Rng + ?Sized>(
    x: &[f64],
    sizes: &[usize],
    steps: &[f64],
    rng: &mut R,
) -> Result<QuantizedVector> {
    check_blocks(sizes, x.len())?;
    if steps.len() != sizes.len() {
        return Err(Error::DimensionMismatch { expected: sizes.len(), got: steps.len() });
    }
    check_steps(steps)?;
    let coord_steps = sizes.iter().zip(steps).flat_map(|(&n, &h)| std::iter::repeat_n(h, n)).collect();
    Ok(quantize_blocks(x, sizes, coord_steps, rng))
}

/// Varying-step quantization: one global norm, coordinate `j` on the lattice
/// `{0, h_j, 2h_j, ...}`.
pub fn quantize_varying<R: Rng + ?Sized>(x: &[f64], steps: &[f64], rng: &mut R) -> Result<QuantizedVector> {
    if steps.len() != x.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), got: steps.len() });
    }
    check_steps(steps)?;
    Ok(quantize_blocks(x, &[x.len()], steps.to_vec(), rng))
}

/// Rescaled coordinate subset produced by the sparsifier.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseVector {
    pub dim: usize,
    /// Strictly increasing.
    pub indices: Vec<usize>,
    /// Single-precision values `x_j / p_j`.
    pub values: Vec<f64>,
}

impl SparseVector {
    pub fn reconstruct(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (&j, &v) in self.indices.iter().zip(&self.values) {
            out[j] = v;
        }
        out
    }
}

fn check_probs(probs: &[f64]) -> Result<()> {
    for (index, &value) in probs.iter().enumerate() {
        if !(value > 0.0 && value <= 1.0) {
            return Err(Error::InvalidProbability { index, value });
        }
    }
    Ok(())
}

/// Independent sampling: coordinate `j` is kept with probability `p_j` and
/// rescaled by `1/p_j`. `tau` is the expected number of kept coordinates and
/// is only checked for consistency with `probs`.
pub fn sparsify_rand_tau<R: Rng + ?Sized>(
    x: &[f64],
    probs: &[f64],
    tau: usize,
    rng: &mut R,
) -> Result<SparseVector> {
    if probs.len() != x.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), got: probs.len() });
    }
    check_probs(probs)?;
    let expected: f64 = probs.iter().sum();
    if (expected - tau as f64).abs() > 1e-6 * (1.0 + tau as f64) + 1e-6 * x.len() as f64 {
        return Err(Error::InvalidParameter(format!(
            "probabilities sum to {expected}, expected tau = {tau}"
        )));
    }
    Ok(sparsify_independent(x, probs, rng))
}

fn sparsify_independent<R: Rng + ?Sized>(x: &[f64], probs: &[f64], rng: &mut R) -> SparseVector {
    let mut indices = Vec::new();
    let mut values = Vec::new();
    for (j, (&v, &p)) in x.iter().zip(probs).enumerate() {
        let keep = p >= 1.0 || rng.random::<f64>() < p;
        if keep && v != 0.0 {
            indices.push(j);
            values.push(to_wire_f32(v / p));
        }
    }
    SparseVector { dim: x.len(), indices, values }
}

/// Smallest probability assigned by [`optimal_rand_tau_probs`].
pub const MIN_PROBABILITY: f64 = 1e-6;

/// Inclusion probabilities minimizing `max_j L_jj (1-p_j)/p_j` under
/// `sum_j p_j = tau`: `p_j = L_jj / (L_jj + theta)` with `theta` found by
/// bisection. Zero diagonal entries receive [`MIN_PROBABILITY`].
pub fn optimal_rand_tau_probs(diag: &[f64], tau: usize) -> Result<Vec<f64>> {
    let d = diag.len();
    if tau == 0 {
        return Err(Error::InvalidParameter("tau must be >= 1".into()));
    }
    if tau >= d {
        return Ok(vec![1.0; d]);
    }
    let positive = diag.iter().filter(|&&v| v > 0.0).count();
    if positive <= tau {
        return Ok(diag.iter().map(|&v| if v > 0.0 { 1.0 } else { MIN_PROBABILITY }).collect());
    }
    let total = |theta: f64| -> f64 {
        diag.iter().map(|&v| if v > 0.0 { v / (v + theta) } else { 0.0 }).sum()
    };
    let target = tau as f64;
    let (mut lo, mut hi) = (0.0f64, diag.iter().copied().fold(0.0, f64::max).max(1e-300));
    while total(hi) > target {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if total(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let theta = 0.5 * (lo + hi);
    Ok(diag
        .iter()
        .map(|&v| if v > 0.0 { (v / (v + theta)).clamp(MIN_PROBABILITY, 1.0) } else { MIN_PROBABILITY })
        .collect())
}

/// Names accepted by [`CompressorKind::from_str`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum CompressorKind {
    Identity,
    Standard,
    Block,
    Varying,
    RandTau,
}

impl FromStr for CompressorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Self::Identity),
            "quant" | "standard" => Ok(Self::Standard),
            "block_quant+" | "block" => Ok(Self::Block),
            "quant+" | "varying" => Ok(Self::Varying),
            "rand_tau+" | "rand_tau" => Ok(Self::RandTau),
            other => Err(Error::UnknownKind(other.to_string())),
        }
    }
}

impl fmt::Display for CompressorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::Identity => "identity",
            Self::Standard => "quant",
            Self::Block => "block_quant+",
            Self::Varying => "quant+",
            Self::RandTau => "rand_tau+",
        };
        f.write_str(s)
    }
}

/// A configured compressor.
#[derive(Clone, Debug, PartialEq)]
pub enum Compressor {
    Identity,
    Standard { dim: usize, levels: u32 },
    Block { sizes: Vec<usize>, steps: Vec<f64> },
    Varying { steps: Vec<f64> },
    RandTau { probs: Vec<f64> },
}

/// Output of [`Compressor::compress`].
#[derive(Clone, Debug, PartialEq)]
pub enum Compressed {
    Dense(Vec<f64>),
    Quantized(QuantizedVector),
    Sparse(SparseVector),
}

impl Compressed {
    pub fn reconstruct(&self) -> Vec<f64> {
        match self {
            Compressed::Dense(v) => v.clone(),
            Compressed::Quantized(q) => q.reconstruct(),
            Compressed::Sparse(s) => s.reconstruct(),
        }
    }
}

/// `omega` and `calL(C, L)` upper bounds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct VarianceCertificate {
    pub omega_bound: f64,
    pub cal_l_bound: f64,
}

fn min_bound(sq: f64, lin: f64) -> f64 {
    sq.min(lin)
}

impl Compressor {
    pub fn standard(dim: usize, levels: u32) -> Result<Self> {
        if levels == 0 {
            return Err(Error::InvalidParameter("quantization levels s must be >= 1".into()));
        }
        Ok(Self::Standard { dim, levels })
    }

    pub fn block(sizes: Vec<usize>, steps: Vec<f64>) -> Result<Self> {
        if sizes.len() != steps.len() {
            return Err(Error::DimensionMismatch { expected: sizes.len(), got: steps.len() });
        }
        check_steps(&steps)?;
        if sizes.contains(&0) || sizes.is_empty() {
            return Err(Error::BlockSizesMismatch { sum: sizes.iter().sum(), dim: 0 });
        }
        Ok(Self::Block { sizes, steps })
    }

    pub fn varying(steps: Vec<f64>) -> Result<Self> {
        check_steps(&steps)?;
        Ok(Self::Varying { steps })
    }

    pub fn rand_tau(probs: Vec<f64>) -> Result<Self> {
        check_probs(&probs)?;
        Ok(Self::RandTau { probs })
    }

    pub fn kind(&self) -> CompressorKind {
        match self {
            Self::Identity => CompressorKind::Identity,
            Self::Standard { .. } => CompressorKind::Standard,
            Self::Block { .. } => CompressorKind::Block,
            Self::Varying { .. } => CompressorKind::Varying,
            Self::RandTau { .. } => CompressorKind::RandTau,
        }
    }

    /// Input dimension, if fixed by the parameters.
    pub fn dim(&self) -> Option<usize> {
        match self {
            Self::Identity => None,
            Self::Standard { dim, .. } => Some(*dim),
            Self::Block { sizes, .. } => Some(sizes.iter().sum()),
            Self::Varying { steps } => Some(steps.len()),
            Self::RandTau { probs } => Some(probs.len()),
        }
    }

    /// Number of per-worker parameters that must be shared once before
    /// training (steps or probabilities).
    pub fn shared_parameters(&self) -> usize {
        match self {
            Self::Identity | Self::Standard { .. } => 0,
            Self::Block { steps, .. } => steps.len(),
            Self::Varying { steps } => steps.len(),
            Self::RandTau { probs } => probs.len(),
        }
    }

    pub fn compress<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Result<Compressed> {
        if let Some(d) = self.dim() {
            if d != x.len() {
                return Err(Error::DimensionMismatch { expected: d, got: x.len() });
            }
        }
        Ok(match self {
            Self::Identity => Compressed::Dense(x.to_vec()),
            Self::Standard { levels, .. } => Compressed::Quantized(quantize_standard(x, *levels, rng)?),
            Self::Block { sizes, steps } => Compressed::Quantized(quantize_block(x, sizes, steps, rng)?),
            Self::Varying { steps } => Compressed::Quantized(quantize_varying(x, steps, rng)?),
            Self::RandTau { probs } => Compressed::Sparse(sparsify_independent(x, probs, rng)),
        })
    }

    /// `compress` followed by `reconstruct`.
    pub fn apply<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        Ok(self.compress(x, rng)?.reconstruct())
    }

    /// Variance certificate with respect to the smoothness factor.
    pub fn certify(&self, factor: &SmoothnessFactor) -> Result<VarianceCertificate> {
        if let Some(d) = self.dim() {
            if d != factor.dim() {
                return Err(Error::DimensionMismatch { expected: d, got: factor.dim() });
            }
        }
        let diag = factor.diag();
        Ok(match self {
            Self::Identity => VarianceCertificate { omega_bound: 0.0, cal_l_bound: 0.0 },
            Self::Standard { dim, levels } => {
                let h = 1.0 / *levels as f64;
                let d = *dim as f64;
                let l1: f64 = diag.iter().sum();
                let l2 = diag.iter().map(|v| v * v).sum::<f64>().sqrt();
                VarianceCertificate {
                    omega_bound: min_bound(d * h * h, d.sqrt() * h),
                    cal_l_bound: min_bound(h * h * l1, h * l2),
                }
            }
            Self::Block { sizes, steps } => {
                let mut omega = 0.0f64;
                let mut cal_l = 0.0f64;
                let mut start = 0;
                for (&n, &h) in sizes.iter().zip(steps) {
                    let block = &diag[start..start + n];
                    let l1: f64 = block.iter().sum();
                    let l2 = block.iter().map(|v| v * v).sum::<f64>().sqrt();
                    omega = omega.max(min_bound(h * h * n as f64, h * (n as f64).sqrt()));
                    cal_l = cal_l.max(min_bound(h * h * l1, h * l2));
                    start += n;
                }
                VarianceCertificate { omega_bound: omega, cal_l_bound: cal_l }
            }
            Self::Varying { steps } => {
                let h2: f64 = steps.iter().map(|h| h * h).sum();
                let lh2: f64 = steps.iter().zip(diag).map(|(h, l)| l * h * h).sum();
                let lh = steps.iter().zip(diag).map(|(h, l)| (l * h) * (l * h)).sum::<f64>().sqrt();
                VarianceCertificate { omega_bound: min_bound(h2, h2.sqrt()), cal_l_bound: min_bound(lh2, lh) }
            }
            Self::RandTau { probs } => {
                // Independent sampling makes the probability matrix diagonal,
                // so lambda_max(P o L) = max_j L_jj (1 - p_j) / p_j.
                let omega = probs.iter().map(|p| (1.0 - p) / p).fold(0.0, f64::max);
                let cal_l = probs.iter().zip(diag).map(|(p, l)| l * (1.0 - p) / p).fold(0.0, f64::max);
                VarianceCertificate { omega_bound: omega, cal_l_bound: cal_l }
            }
        })
    }
}

/// `x -> L^{1/2} C(L^{+1/2} x)`, unbiased on `range(L)`.
#[derive(Clone, Debug)]
pub struct WrappedCompressor {
    inner: Compressor,
    factor: Arc<SmoothnessFactor>,
}

impl WrappedCompressor {
    pub fn new(inner: Compressor, factor: Arc<SmoothnessFactor>) -> Result<Self> {
        if let Some(d) = inner.dim() {
            if d != factor.dim() {
                return Err(Error::DimensionMismatch { expected: factor.dim(), got: d });
            }
        }
        Ok(Self { inner, factor })
    }

    pub fn inner(&self) -> &Compressor {
        &self.inner
    }

    pub fn factor(&self) -> &Arc<SmoothnessFactor> {
        &self.factor
    }

    /// Worker side: whiten then compress.
    pub fn compress<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Result<Compressed> {
        if x.len() != self.factor.dim() {
            return Err(Error::DimensionMismatch { expected: self.factor.dim(), got: x.len() });
        }
        let y = self.factor.apply_pinv_sqrt(x);
        self.inner.compress(y.as_slice(), rng)
    }

    /// Server side: `L^{1/2}` times the reconstruction.
    pub fn decompress(&self, c: &Compressed) -> DVector<f64> {
        self.factor.apply_sqrt(&c.reconstruct())
    }

    pub fn apply<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Result<DVector<f64>> {
        Ok(self.decompress(&self.compress(x, rng)?))
    }

    pub fn certificate(&self) -> Result<VarianceCertificate> {
        self.inner.certify(&self.factor)
    }
}

pub fn wrap_with_smoothness(compressor: Compressor, factor: Arc<SmoothnessFactor>) -> Result<WrappedCompressor> {
    WrappedCompressor::new(compressor, factor)
}

/// Certificate lookup by kind name and parameters.
pub fn certify(kind: &str, compressor: &Compressor, factor: &SmoothnessFactor) -> Result<VarianceCertificate> {
    let kind: CompressorKind = kind.parse()?;
    if kind != compressor.kind() {
        return Err(Error::InvalidParameter(format!(
            "parameters describe `{}`, not `{kind}`",
            compressor.kind()
        )));
    }
    compressor.certify(factor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smoothness::{build_factor, scalar_factor};
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn stochastic_round_two_points() {
        let mut r = rng(1);
        let n = 200_000;
        let mut hi = 0usize;
        for _ in 0..n {
            let v = stochastic_round(0.3, 0.2, &mut r);
            assert!(v == 0.2 || (v - 0.4).abs() < 1e-15, "got {v}");
            if v > 0.3 {
                hi += 1;
            }
        }
        let frac = hi as f64 / n as f64;
        // p = 0.5, 5 sigma band.
        assert!((frac - 0.5).abs() < 5.0 * (0.25 / n as f64).sqrt());
    }

    #[test]
    fn stochastic_round_lattice_point() {
        let mut r = rng(2);
        for _ in 0..1000 {
            assert_eq!(stochastic_level(0.75, 0.25, &mut r), 3);
            assert_eq!(stochastic_level(0.0, 0.25, &mut r), 0);
        }
    }

    #[test]
    fn stochastic_round_mean() {
        let mut r = rng(3);
        let n = 1_000_000;
        let samples: Vec<f64> = (0..n).map(|_| stochastic_round(0.37, 0.1, &mut r)).collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
        assert!((mean - 0.37).abs() <= 3.0 * (var / n as f64).sqrt());
    }

    #[test]
    fn standard_certificate_example() {
        let c = Compressor::standard(4, 2).unwrap();
        let cert = c.certify(&scalar_factor(4, 1.0)).unwrap();
        assert_relative_eq!(cert.omega_bound, 1.0);
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let mut r = rng(4);
        let q = quantize_standard(&[0.0; 5], 3, &mut r).unwrap();
        assert_eq!(q.reconstruct(), vec![0.0; 5]);
        assert_eq!(q.magnitudes, vec![0.0]);
        let q = quantize_varying(&[0.0; 3], &[0.1, 0.2, 0.3], &mut r).unwrap();
        assert_eq!(q.nonzeros(), 0);
    }

    #[test]
    fn single_nonzero_is_exact() {
        let mut r = rng(5);
        for s in 1..8 {
            let x = [0.0, -2.5, 0.0, 0.0];
            let q = quantize_standard(&x, s, &mut r).unwrap();
            assert_eq!(q.reconstruct(), x.to_vec());
        }
    }

    #[test]
    fn block_norms() {
        let mut r = rng(6);
        let q = quantize_block(&[3.0, 4.0, 0.0, 0.0], &[2, 2], &[0.3, 0.7], &mut r).unwrap();
        assert_eq!(q.magnitudes, vec![5.0, 0.0]);
        assert_eq!(&q.levels[2..], &[0, 0]);
        assert_eq!(q.block_starts, vec![0, 2]);
        assert!(matches!(
            quantize_block(&[1.0; 4], &[2, 3], &[0.1, 0.1], &mut r),
            Err(Error::BlockSizesMismatch { .. })
        ));
    }

    #[test]
    fn block_single_matches_standard() {
        let x = [0.3, -1.2, 0.8, 0.05, 2.0];
        for seed in 0..50 {
            let a = quantize_standard(&x, 3, &mut rng(seed)).unwrap();
            let b = quantize_block(&x, &[5], &[1.0 / 3.0], &mut rng(seed)).unwrap();
            let c = quantize_varying(&x, &[1.0 / 3.0; 5], &mut rng(seed)).unwrap();
            assert_eq!(a, b);
            assert_eq!(a, c);
        }
    }

    #[test]
    fn sign_level_consistency_and_support() {
        let mut r = rng(7);
        let x = [0.0, 1.0, -0.001, 0.5, 0.0, -3.0];
        for _ in 0..200 {
            let q = quantize_varying(&x, &[0.5, 0.2, 0.9, 0.05, 1.0, 0.3], &mut r).unwrap();
            for j in 0..6 {
                assert_eq!(q.signs[j] == 0, q.levels[j] == 0);
                if x[j] == 0.0 {
                    assert_eq!(q.levels[j], 0);
                }
            }
        }
    }

    #[test]
    fn rand_tau_identity_and_errors() {
        let mut r = rng(8);
        let x = [1.0, -2.0, 0.5];
        let s = sparsify_rand_tau(&x, &[1.0; 3], 3, &mut r).unwrap();
        assert_eq!(s.reconstruct(), x.to_vec());
        assert!(matches!(
            sparsify_rand_tau(&x, &[0.0, 1.0, 1.0], 2, &mut r),
            Err(Error::InvalidProbability { index: 0, .. })
        ));
        assert!(matches!(
            sparsify_rand_tau(&x, &[1.5, 0.5, 1.0], 3, &mut r),
            Err(Error::InvalidProbability { index: 0, .. })
        ));
    }

    /// Exact `E ||Cx - x||_L^2` by enumerating all inclusion patterns.
    fn enumerate_rand_tau(x: &[f64], p: &[f64], l: &DMatrix<f64>) -> (Vec<f64>, f64) {
        let d = x.len();
        let mut mean = vec![0.0; d];
        let mut var = 0.0;
        for mask in 0u32..(1 << d) {
            let mut prob = 1.0;
            let mut out = vec![0.0; d];
            for j in 0..d {
                let on = mask & (1 << j) != 0;
                prob *= if on { p[j] } else { 1.0 - p[j] };
                out[j] = if on { x[j] / p[j] } else { 0.0 };
            }
            for j in 0..d {
                mean[j] += prob * out[j];
            }
            let ev = DVector::from_iterator(d, out.iter().zip(x).map(|(c, v)| c - v));
            var += prob * (ev.transpose() * l * &ev)[(0, 0)];
        }
        (mean, var)
    }

    #[test]
    fn rand_tau_enumeration_d2() {
        let (a, b) = (2.0, 5.0);
        let l = DMatrix::from_diagonal(&DVector::from_vec(vec![a, b]));
        let x = [0.7, -1.3];
        let (_, var) = enumerate_rand_tau(&x, &[0.5, 0.5], &l);
        assert_relative_eq!(var, a * x[0] * x[0] + b * x[1] * x[1], max_relative = 1e-12);
        let cert = Compressor::rand_tau(vec![0.5, 0.5]).unwrap().certify(&build_factor(&l).unwrap()).unwrap();
        assert_relative_eq!(cert.cal_l_bound, a.max(b));
    }

    #[test]
    fn rand_tau_enumeration_unbiased_d3() {
        let l = DMatrix::identity(3, 3);
        let x = [0.2, -1.0, 3.0];
        let p = [0.3, 0.6, 0.9];
        let (mean, _) = enumerate_rand_tau(&x, &p, &l);
        for j in 0..3 {
            assert_relative_eq!(mean[j], x[j], max_relative = 1e-12);
        }
    }

    #[test]
    fn varying_certificate_example() {
        let f = build_factor(&DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 4.0]))).unwrap();
        let cert = Compressor::varying(vec![1.0, 1.0]).unwrap().certify(&f).unwrap();
        assert_relative_eq!(cert.cal_l_bound, 17f64.sqrt());
        assert_relative_eq!(cert.omega_bound, 2f64.sqrt());
    }

    #[test]
    fn block_single_certificate_matches_scalar_formula() {
        let (d, s, lval) = (9usize, 4u32, 2.5);
        let f = scalar_factor(d, lval);
        let cert = Compressor::block(vec![d], vec![1.0 / s as f64]).unwrap().certify(&f).unwrap();
        let expect = (lval * d as f64 / (s * s) as f64).min(lval * (d as f64).sqrt() / s as f64);
        assert_relative_eq!(cert.cal_l_bound, expect, max_relative = 1e-14);
        let std = Compressor::standard(d, s).unwrap().certify(&f).unwrap();
        assert_relative_eq!(std.cal_l_bound, expect, max_relative = 1e-14);
    }

    #[test]
    fn certificate_below_omega_lambda_max() {
        let mut r = rng(9);
        for _ in 0..50 {
            let a = DMatrix::from_fn(6, 6, |_, _| r.random_range(-1.0..1.0));
            let f = build_factor(&(a.transpose() * a)).unwrap();
            let steps: Vec<f64> = (0..6).map(|_| r.random_range(0.05..2.0)).collect();
            let probs: Vec<f64> = (0..6).map(|_| r.random_range(0.1..1.0)).collect();
            for c in [
                Compressor::standard(6, 2).unwrap(),
                Compressor::block(vec![2, 4], steps[..2].to_vec()).unwrap(),
                Compressor::varying(steps.clone()).unwrap(),
                Compressor::rand_tau(probs).unwrap(),
            ] {
                let cert = c.certify(&f).unwrap();
                assert!(cert.cal_l_bound <= cert.omega_bound * f.lambda_max() + 1e-12);
            }
        }
    }

    #[test]
    fn wrap_identity_on_range() {
        let mut r = rng(10);
        let a = DMatrix::from_fn(3, 5, |_, _| r.random_range(-1.0..1.0));
        let f = Arc::new(build_factor(&(a.transpose() * &a)).unwrap());
        let w = wrap_with_smoothness(Compressor::Identity, f.clone()).unwrap();
        let x = f.apply(&[1.0, -2.0, 0.5, 0.3, 0.0]);
        let out = w.apply(x.as_slice(), &mut r).unwrap();
        assert!((out - &x).norm() <= 1e-10 * x.norm());
    }

    #[test]
    fn wrap_with_identity_matrix_is_raw() {
        let f = Arc::new(scalar_factor(4, 1.0));
        let c = Compressor::varying(vec![0.3, 0.5, 0.2, 0.9]).unwrap();
        let w = wrap_with_smoothness(c.clone(), f).unwrap();
        let x = [0.4, -0.1, 2.0, 0.0];
        let a = w.apply(&x, &mut rng(11)).unwrap();
        let b = c.apply(&x, &mut rng(11)).unwrap();
        assert_eq!(a.as_slice(), b.as_slice());
        let bad = wrap_with_smoothness(c, Arc::new(scalar_factor(3, 1.0)));
        assert!(matches!(bad, Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn optimal_probs_equalize() {
        let diag = [4.0, 1.0, 0.25, 2.0, 0.5];
        let p = optimal_rand_tau_probs(&diag, 2).unwrap();
        assert_relative_eq!(p.iter().sum::<f64>(), 2.0, max_relative = 1e-9);
        let vals: Vec<f64> = p.iter().zip(&diag).map(|(p, l)| l * (1.0 - p) / p).collect();
        for v in &vals {
            assert_relative_eq!(*v, vals[0], max_relative = 1e-9);
        }
        assert_eq!(optimal_rand_tau_probs(&diag, 5).unwrap(), vec![1.0; 5]);
    }

    #[test]
    fn determinism() {
        let x: Vec<f64> = (0..20).map(|i| (i as f64 * 0.37).sin()).collect();
        let c = Compressor::varying((0..20).map(|i| 0.05 + 0.01 * i as f64).collect()).unwrap();
        assert_eq!(c.compress(&x, &mut rng(12)).unwrap(), c.compress(&x, &mut rng(12)).unwrap());
    }

    #[test]
    fn kind_names() {
        for k in ["quant", "quant+", "block_quant+", "rand_tau+", "identity"] {
            let kind: CompressorKind = k.parse().unwrap();
            assert_eq!(kind.to_string(), k);
        }
        assert!(matches!("topk".parse::<CompressorKind>(), Err(Error::UnknownKind(_))));
        let f = scalar_factor(3, 1.0);
        let c = Compressor::standard(3, 1).unwrap();
        assert!(certify("quant", &c, &f).is_ok());
        assert!(certify("bogus", &c, &f).is_err());
    }
}
