//! Smoothness matrices and their spectral factors.
//!
//! A [`SmoothnessFactor`] holds a PSD matrix `L` together with `L^{1/2}`,
//! the pseudo-inverse square root `L^{+1/2}`, the diagonal and the top
//! eigenvalue. Eigenvalues at or below `EIG_TOL * lambda_max` are treated as
//! exact zeros in both square roots.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative tolerance for symmetry, PSD-ness and the numerical rank cutoff.
pub const EIG_TOL: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct SmoothnessFactor {
    matrix: DMatrix<f64>,
    sqrt: DMatrix<f64>,
    pinv_sqrt: DMatrix<f64>,
    diag: Vec<f64>,
    /// Eigenvalues sorted in descending order, clamped at zero.
    eigenvalues: Vec<f64>,
    /// Columns match `eigenvalues`.
    eigenvectors: DMatrix<f64>,
    lambda_max: f64,
    rank: usize,
    diagonal: bool,
}

impl SmoothnessFactor {
    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn sqrt(&self) -> &DMatrix<f64> {
        &self.sqrt
    }

    pub fn pinv_sqrt(&self) -> &DMatrix<f64> {
        &self.pinv_sqrt
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    /// True when all off-diagonal entries are exactly zero.
    pub fn is_diagonal(&self) -> bool {
        self.diagonal
    }

    pub fn apply(&self, x: &[f64]) -> DVector<f64> {
        self.mul(&self.matrix, x, |d, v| d * v)
    }

    pub fn apply_sqrt(&self, x: &[f64]) -> DVector<f64> {
        self.mul(&self.sqrt, x, |d, v| d.max(0.0).sqrt() * v)
    }

    pub fn apply_pinv_sqrt(&self, x: &[f64]) -> DVector<f64> {
        let cutoff = self.cutoff();
        self.mul(&self.pinv_sqrt, x, move |d, v| {
            if d > cutoff {
                v / d.sqrt()
            } else {
                0.0
            }
        })
    }

    fn cutoff(&self) -> f64 {
        EIG_TOL * self.lambda_max
    }

    fn mul(&self, m: &DMatrix<f64>, x: &[f64], diag_op: impl Fn(f64, f64) -> f64) -> DVector<f64> {
        assert_eq!(x.len(), self.dim(), "vector length must match factor dimension");
        if self.diagonal {
            DVector::from_iterator(x.len(), self.diag.iter().zip(x).map(|(&d, &v)| diag_op(d, v)))
        } else {
            m * DVector::from_column_slice(x)
        }
    }

    /// `||x||^2_L = x^T L x`.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        let lx = self.apply(x);
        lx.iter().zip(x).map(|(a, b)| a * b).sum()
    }

    /// `||x||^2_{L^+}`, computed as `||L^{+1/2} x||^2`.
    pub fn pinv_quad_form(&self, x: &[f64]) -> f64 {
        self.apply_pinv_sqrt(x).norm_squared()
    }

    /// Orthogonal projection onto `range(L)`.
    pub fn project_range(&self, x: &[f64]) -> DVector<f64> {
        let cutoff = self.cutoff();
        let v = DVector::from_column_slice(x);
        let mut out = DVector::zeros(self.dim());
        for (k, &lam) in self.eigenvalues.iter().enumerate() {
            if lam > cutoff {
                let u = self.eigenvectors.column(k);
                out += u * u.dot(&v);
            }
        }
        out
    }

    /// Ratio `||x - P x|| / ||x||` of the component outside `range(L)`.
    pub fn range_residual(&self, x: &[f64]) -> f64 {
        let norm: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        let p = self.project_range(x);
        let diff: f64 = x.iter().zip(p.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
        diff.sqrt() / norm
    }

    /// The factor built from `diag(L)` alone.
    pub fn diagonal_only(&self) -> SmoothnessFactor {
        build_factor(&DMatrix::from_diagonal(&DVector::from_column_slice(&self.diag)))
            .expect("a nonnegative diagonal is PSD")
    }

    /// Scalar factor `L_max * I` of the same dimension.
    pub fn scalar(&self) -> SmoothnessFactor {
        scalar_factor(self.dim(), self.lambda_max)
    }
}

/// `c * I_d`; `c` must be nonnegative.
pub fn scalar_factor(dim: usize, c: f64) -> SmoothnessFactor {
    build_factor(&(DMatrix::identity(dim, dim) * c)).expect("nonnegative scalar matrix is PSD")
}

/// Eigendecomposes a symmetric PSD matrix and caches its square roots.
pub fn build_factor(matrix: &DMatrix<f64>) -> Result<SmoothnessFactor> {
    let (rows, cols) = matrix.shape();
    if rows != cols {
        return Err(Error::NotSquare { rows, cols });
    }
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteMatrix);
    }
    let d = rows;
    let scale = matrix.amax();
    let mut asym = 0.0f64;
    let mut diagonal = true;
    for i in 0..d {
        for j in 0..d {
            if i != j {
                asym = asym.max((matrix[(i, j)] - matrix[(j, i)]).abs());
                if matrix[(i, j)] != 0.0 {
                    diagonal = false;
                }
            }
        }
    }
    if asym > EIG_TOL * scale {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    let sym = (matrix + matrix.transpose()) * 0.5;

    let (mut eigenvalues, mut eigenvectors) = if diagonal {
        (sym.diagonal().iter().copied().collect::<Vec<_>>(), DMatrix::identity(d, d))
    } else {
        let eig = SymmetricEigen::new(sym.clone());
        (eig.eigenvalues.iter().copied().collect(), eig.eigenvectors)
    };

    // Sort descending, permuting eigenvector columns alongside.
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eigenvalues[b].total_cmp(&eigenvalues[a]).then(a.cmp(&b)));
    let sorted_vals: Vec<f64> = order.iter().map(|&k| eigenvalues[k]).collect();
    let mut sorted_vecs = DMatrix::zeros(d, d);
    for (dst, &src) in order.iter().enumerate() {
        sorted_vecs.set_column(dst, &eigenvectors.column(src));
    }
    eigenvalues = sorted_vals;
    eigenvectors = sorted_vecs;

    let top = eigenvalues.first().copied().unwrap_or(0.0);
    let lambda_max = top.max(0.0);
    if let Some(&lowest) = eigenvalues.last() {
        if lowest < -EIG_TOL * lambda_max || (lambda_max == 0.0 && lowest < 0.0) {
            return Err(Error::NotPsd { eigenvalue: lowest });
        }
    }
    let cutoff = EIG_TOL * lambda_max;
    for lam in eigenvalues.iter_mut() {
        if *lam <= cutoff {
            *lam = 0.0;
        }
    }
    let rank = eigenvalues.iter().filter(|&&l| l > 0.0).count();

    let diag: Vec<f64> = sym.diagonal().iter().map(|v| v.max(0.0)).collect();
    let (sqrt, pinv_sqrt) = if diagonal {
        let s = DVector::from_iterator(
            d,
            diag.iter().map(|&v| if v > cutoff { v.sqrt() } else { 0.0 }),
        );
        let p = DVector::from_iterator(
            d,
            diag.iter().map(|&v| if v > cutoff { 1.0 / v.sqrt() } else { 0.0 }),
        );
        (DMatrix::from_diagonal(&s), DMatrix::from_diagonal(&p))
    } else {
        let s = DVector::from_iterator(d, eigenvalues.iter().map(|l| l.sqrt()));
        let p = DVector::from_iterator(
            d,
            eigenvalues.iter().map(|&l| if l > 0.0 { 1.0 / l.sqrt() } else { 0.0 }),
        );
        let v = &eigenvectors;
        (
            v * DMatrix::from_diagonal(&s) * v.transpose(),
            v * DMatrix::from_diagonal(&p) * v.transpose(),
        )
    };

    Ok(SmoothnessFactor {
        matrix: sym,
        sqrt,
        pinv_sqrt,
        diag,
        eigenvalues,
        eigenvectors,
        lambda_max,
        rank,
        diagonal,
    })
}

/// Smoothness matrix of the l2-regularized logistic loss on `rows`:
/// `(1/4m) A^T A + l2 I`.
pub fn glm_smoothness(rows: &DMatrix<f64>, l2: f64) -> Result<SmoothnessFactor> {
    let m = rows.nrows();
    if m == 0 {
        return Err(Error::EmptyData);
    }
    if l2 < 0.0 || !l2.is_finite() {
        return Err(Error::InvalidParameter(format!("l2 must be nonnegative, got {l2}")));
    }
    let d = rows.ncols();
    let mut l = rows.tr_mul(rows) / (4.0 * m as f64);
    for j in 0..d {
        l[(j, j)] += l2;
    }
    build_factor(&l)
}

/// Average of the worker matrices, used as the global smoothness matrix.
pub fn global_factor(workers: &[SmoothnessFactor]) -> Result<SmoothnessFactor> {
    let first = workers.first().ok_or(Error::EmptyData)?;
    let d = first.dim();
    let mut sum = DMatrix::zeros(d, d);
    for w in workers {
        if w.dim() != d {
            return Err(Error::DimensionMismatch { expected: d, got: w.dim() });
        }
        sum += w.matrix();
    }
    build_factor(&(sum / workers.len() as f64))
}

/// Heterogeneity ratios across workers and coordinates.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct HeterogeneityStats {
    /// `sum_i L_i / max_i L_i`, in `[1, n]`.
    pub nu: f64,
    /// `max_i (sum_j L_{i;jj} / max_j L_{i;jj})`, in `[1, d]`.
    pub nu1: f64,
    pub l_max: f64,
}

pub fn heterogeneity(workers: &[SmoothnessFactor]) -> Result<HeterogeneityStats> {
    if workers.is_empty() {
        return Err(Error::EmptyData);
    }
    let l_max = workers.iter().map(|w| w.lambda_max()).fold(0.0, f64::max);
    let l_sum: f64 = workers.iter().map(|w| w.lambda_max()).sum();
    let nu = if l_max > 0.0 { l_sum / l_max } else { workers.len() as f64 };
    let nu1 = workers
        .iter()
        .map(|w| {
            let mx = w.diag().iter().copied().fold(0.0, f64::max);
            if mx > 0.0 {
                w.diag().iter().sum::<f64>() / mx
            } else {
                w.dim() as f64
            }
        })
        .fold(1.0, f64::max);
    Ok(HeterogeneityStats { nu, nu1, l_max })
}

/// PSD over-approximation keeping the top `r` eigen-directions:
/// `sum_{k<=r} (lam_k - lam_{r+1}) u_k u_k^T + lam_{r+1} I`.
pub fn lowrank_overapprox(factor: &SmoothnessFactor, r: usize) -> Result<SmoothnessFactor> {
    let d = factor.dim();
    if r >= d {
        return Err(Error::RankOutOfRange { rank: r, dim: d });
    }
    let lam = factor.eigenvalues();
    let floor = lam[r];
    let mut m = DMatrix::identity(d, d) * floor;
    for k in 0..r {
        let u = factor.eigenvectors().column(k);
        m += (u * u.transpose()) * (lam[k] - floor);
    }
    build_factor(&m)
}
