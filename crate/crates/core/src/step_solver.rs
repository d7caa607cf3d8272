//! Closed-form quantization steps under a bit budget `beta`.
//!
//! Block problems minimize `max_l h_l a_l` subject to
//! `sum_l (1/h_l^2 + sqrt(d_l)/h_l) + B = beta`; the optimum equalizes
//! `h_l a_l = delta` and `delta` is the positive root of
//! `(beta - B) delta^2 - S1 delta - S2 = 0` with `S1 = sum_l sqrt(d_l) a_l`
//! and `S2 = sum_l a_l^2`.
//!
//! Varying-step problems minimize `sum_j c_j h_j^2` subject to
//! `||h^{-1}|| = beta`, solved by `h_j = (1/beta) sqrt(sum_t sqrt(c_t) / sqrt(c_j))`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::smoothness::SmoothnessFactor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BudgetMode {
    Block,
    Varying,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BitBudget {
    pub beta: f64,
    pub mode: BudgetMode,
}

impl BitBudget {
    /// Checks `beta > B` (block) or `beta > 0` (varying).
    pub fn validate(&self, blocks: usize) -> Result<()> {
        match self.mode {
            BudgetMode::Block if !(self.beta > blocks as f64) => {
                Err(Error::BudgetTooSmall { beta: self.beta, blocks })
            }
            BudgetMode::Varying if !(self.beta > 0.0) => Err(Error::NonpositiveBeta(self.beta)),
            _ => Ok(()),
        }
    }
}

/// Both constraints are themselves bit proxies, so the mapping is the identity.
pub fn budget_for_bits(target_bits_per_round: f64, mode: BudgetMode) -> BitBudget {
    BitBudget { beta: target_bits_per_round, mode }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepSolution {
    /// Length `B` (block) or `d` (varying).
    pub steps: Vec<f64>,
    pub objective_value: f64,
    /// Equalized `h_l a_l` for block solutions.
    pub delta: Option<f64>,
}

/// Euclidean norms of the diagonal restricted to each block.
pub fn block_diag_norms(diag: &[f64], sizes: &[usize]) -> Result<Vec<f64>> {
    let sum: usize = sizes.iter().sum();
    if sum != diag.len() || sizes.contains(&0) {
        return Err(Error::BlockSizesMismatch { sum, dim: diag.len() });
    }
    let mut start = 0;
    Ok(sizes
        .iter()
        .map(|&n| {
            let norm = diag[start..start + n].iter().map(|v| v * v).sum::<f64>().sqrt();
            start += n;
            norm
        })
        .collect())
}

/// Evenly sized contiguous blocks; the first `d mod B` blocks get one extra.
pub fn even_blocks(dim: usize, blocks: usize) -> Result<Vec<usize>> {
    if blocks == 0 || blocks > dim {
        return Err(Error::InvalidParameter(format!("cannot split {dim} coordinates into {blocks} blocks")));
    }
    let base = dim / blocks;
    let extra = dim % blocks;
    Ok((0..blocks).map(|l| base + usize::from(l < extra)).collect())
}

/// Coefficients `(S1, S2)` of the block constraint for weights `a_l`.
fn block_coefficients(weights: &[f64], sizes: &[usize]) -> (f64, f64) {
    let s1 = weights.iter().zip(sizes).map(|(a, &n)| (n as f64).sqrt() * a).sum();
    let s2 = weights.iter().map(|a| a * a).sum();
    (s1, s2)
}

/// Positive root of `(beta - B) delta^2 - S1 delta - S2 = 0`.
fn delta_root(s1: f64, s2: f64, slack: f64) -> f64 {
    let disc = (s1 * s1 + 4.0 * slack * s2).sqrt();
    // Rationalized form avoids cancellation when S2 is small.
    if s1 >= 0.0 {
        (s1 + disc) / (2.0 * slack)
    } else {
        2.0 * s2 / (disc - s1)
    }
}

/// Residual of the delta quadratic, relative to its largest term.
pub fn block_quadratic_residual(delta: f64, weights: &[f64], sizes: &[usize], beta: f64) -> f64 {
    let (s1, s2) = block_coefficients(weights, sizes);
    let slack = beta - sizes.len() as f64;
    let terms = [slack * delta * delta, s1 * delta, s2];
    (terms[0] - terms[1] - terms[2]).abs() / terms.iter().fold(f64::MIN_POSITIVE, |m, t| m.max(t.abs()))
}

/// `sum_l (1/h_l^2 + sqrt(d_l)/h_l) + B`.
pub fn block_constraint(steps: &[f64], sizes: &[usize]) -> f64 {
    steps.iter().zip(sizes).map(|(h, &n)| 1.0 / (h * h) + (n as f64).sqrt() / h).sum::<f64>() + sizes.len() as f64
}

fn solve_block_weighted(weights: &[f64], sizes: &[usize], beta: f64) -> Result<StepSolution> {
    let b = sizes.len();
    if !(beta > b as f64) {
        return Err(Error::BudgetTooSmall { beta, blocks: b });
    }
    if let Some(block) = weights.iter().position(|&a| !(a > 0.0)) {
        return Err(Error::DegenerateBlock { block });
    }
    let (s1, s2) = block_coefficients(weights, sizes);
    let delta = delta_root(s1, s2, beta - b as f64);
    let steps = weights.iter().map(|a| delta / a).collect();
    Ok(StepSolution { steps, objective_value: delta, delta: Some(delta) })
}

/// Block steps minimizing the `calL` bound for DCGD+.
pub fn solve_block_dcgd(factor: &SmoothnessFactor, sizes: &[usize], beta: f64) -> Result<StepSolution> {
    let norms = block_diag_norms(factor.diag(), sizes)?;
    solve_block_weighted(&norms, sizes, beta)
}

/// Weights `A_l = sqrt(d_l) + ||diag(L^{ll})|| / (mu n)` for the DIANA+ problem.
pub fn block_diana_weights(factor: &SmoothnessFactor, sizes: &[usize], n: usize, mu: f64) -> Result<Vec<f64>> {
    if !(mu > 0.0) {
        return Err(Error::NonpositiveMu(mu));
    }
    if n == 0 {
        return Err(Error::InvalidParameter("n must be >= 1".into()));
    }
    let norms = block_diag_norms(factor.diag(), sizes)?;
    Ok(norms.iter().zip(sizes).map(|(a, &dl)| (dl as f64).sqrt() + a / (mu * n as f64)).collect())
}

/// Block steps minimizing `omega + calL/(n mu)` for DIANA+.
pub fn solve_block_diana(
    factor: &SmoothnessFactor,
    sizes: &[usize],
    beta: f64,
    n: usize,
    mu: f64,
) -> Result<StepSolution> {
    let weights = block_diana_weights(factor, sizes, n, mu)?;
    solve_block_weighted(&weights, sizes, beta)
}

/// `h_j = (1/beta) sqrt(sum_t w_t / w_j)` for positive weights `w`.
fn solve_varying_weighted(weights: &[f64], beta: f64) -> Vec<f64> {
    let total: f64 = weights.iter().sum();
    weights.iter().map(|w| (total / w).sqrt() / beta).collect()
}

/// Varying steps minimizing `||diag(L) h||` for DCGD+.
pub fn solve_varying_dcgd(factor: &SmoothnessFactor, beta: f64) -> Result<StepSolution> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::NonpositiveBeta(beta));
    }
    let diag = factor.diag();
    if let Some(j) = diag.iter().position(|&v| !(v > 0.0)) {
        return Err(Error::ZeroDiagonal(j));
    }
    let steps = solve_varying_weighted(diag, beta);
    let objective_value = diag.iter().zip(&steps).map(|(l, h)| (l * h) * (l * h)).sum::<f64>().sqrt();
    Ok(StepSolution { steps, objective_value, delta: None })
}

/// Varying steps minimizing `sum_j (1 + A_j^2) h_j^2`, `A_j = L_jj / (n mu)`, for DIANA+.
pub fn solve_varying_diana(factor: &SmoothnessFactor, beta: f64, n: usize, mu: f64) -> Result<StepSolution> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::NonpositiveBeta(beta));
    }
    if !(mu > 0.0) {
        return Err(Error::NonpositiveMu(mu));
    }
    if n == 0 {
        return Err(Error::InvalidParameter("n must be >= 1".into()));
    }
    let coef: Vec<f64> = factor
        .diag()
        .iter()
        .map(|l| {
            let a = l / (n as f64 * mu);
            1.0 + a * a
        })
        .collect();
    let roots: Vec<f64> = coef.iter().map(|c| c.sqrt()).collect();
    let steps = solve_varying_weighted(&roots, beta);
    let objective_value = coef.iter().zip(&steps).map(|(c, h)| c * h * h).sum();
    Ok(StepSolution { steps, objective_value, delta: None })
}

/// `||h^{-1}||`.
pub fn inverse_norm(steps: &[f64]) -> f64 {
    steps.iter().map(|h| 1.0 / (h * h)).sum::<f64>().sqrt()
}
