//! Datasets, worker losses, synthetic problems and reference solutions.

use std::io::{BufRead, Write};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::smoothness::{build_factor, glm_smoothness, SmoothnessFactor};

/// Dense design matrix with `{-1, +1}` labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub rows: DMatrix<f64>,
    pub labels: Vec<f64>,
    pub dim: usize,
}

impl Dataset {
    pub fn new(rows: DMatrix<f64>, labels: Vec<f64>) -> Result<Self> {
        if rows.nrows() != labels.len() {
            return Err(Error::DimensionMismatch { expected: rows.nrows(), got: labels.len() });
        }
        if let Some(&b) = labels.iter().find(|&&b| b != 1.0 && b != -1.0) {
            return Err(Error::InvalidParameter(format!("label {b} is not -1 or +1")));
        }
        let dim = rows.ncols();
        Ok(Self { rows, labels, dim })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Rows in the given order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let rows = DMatrix::from_fn(indices.len(), self.dim, |r, c| self.rows[(indices[r], c)]);
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Dataset { rows, labels, dim: self.dim }
    }

    pub fn row_norms(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.rows.row(i).norm()).collect()
    }
}

/// Per-column affine map onto `[-1, 1]`; constant columns become 0.
/// Columns already spanning exactly `[-1, 1]` are left untouched, which
/// makes the map idempotent.
pub fn rescale_columns(rows: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = rows.clone();
    for c in 0..rows.ncols() {
        let col = rows.column(c);
        let lo = col.min();
        let hi = col.max();
        if lo == -1.0 && hi == 1.0 {
            continue;
        }
        for r in 0..rows.nrows() {
            out[(r, c)] = if hi > lo { 2.0 * (rows[(r, c)] - lo) / (hi - lo) - 1.0 } else { 0.0 };
        }
    }
    out
}

/// Maps raw labels onto `{-1, +1}`. With two distinct values the smaller
/// becomes `-1`; a single value is mapped by its sign.
pub fn normalize_labels(raw: &[f64]) -> Result<Vec<f64>> {
    let mut distinct: Vec<f64> = raw.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    match distinct.len() {
        0 => Ok(Vec::new()),
        1 => Ok(raw.iter().map(|&b| if b > 0.0 { 1.0 } else { -1.0 }).collect()),
        2 => Ok(raw.iter().map(|&b| if b == distinct[1] { 1.0 } else { -1.0 }).collect()),
        k => Err(Error::NonBinaryLabels(k)),
    }
}

/// Parses LibSVM text without rescaling the features.
pub fn parse_libsvm_unscaled<R: BufRead>(reader: R, dim_hint: Option<usize>) -> Result<Dataset> {
    let mut raw_labels = Vec::new();
    let mut entries: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut max_index = 0usize;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut tokens = content.split_whitespace();
        let label_token = tokens.next().unwrap();
        let label: f64 = label_token
            .parse()
            .map_err(|_| Error::NonNumericValue { line: lineno, token: label_token.to_string() })?;
        if !label.is_finite() {
            return Err(Error::NonNumericValue { line: lineno, token: label_token.to_string() });
        }
        let mut row = Vec::new();
        for tok in tokens {
            let (idx, val) = tok.split_once(':').ok_or_else(|| Error::MalformedLine {
                line: lineno,
                reason: format!("expected `index:value`, got `{tok}`"),
            })?;
            let idx: usize = idx.parse().map_err(|_| Error::MalformedLine {
                line: lineno,
                reason: format!("bad feature index `{idx}`"),
            })?;
            if idx == 0 {
                return Err(Error::IndexZero { line: lineno });
            }
            let val: f64 = val
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| Error::NonNumericValue { line: lineno, token: val.to_string() })?;
            if let Some(hint) = dim_hint {
                if idx > hint {
                    return Err(Error::DimensionMismatch { expected: hint, got: idx });
                }
            }
            max_index = max_index.max(idx);
            row.push((idx - 1, val));
        }
        raw_labels.push(label);
        entries.push(row);
    }
    let dim = dim_hint.unwrap_or(max_index);
    let mut rows = DMatrix::zeros(entries.len(), dim);
    for (r, row) in entries.iter().enumerate() {
        for &(c, v) in row {
            rows[(r, c)] = v;
        }
    }
    Dataset::new(rows, normalize_labels(&raw_labels)?)
}

/// Parses LibSVM text and rescales every column into `[-1, 1]`.
pub fn parse_libsvm<R: BufRead>(reader: R, dim_hint: Option<usize>) -> Result<Dataset> {
    let mut ds = parse_libsvm_unscaled(reader, dim_hint)?;
    ds.rows = rescale_columns(&ds.rows);
    Ok(ds)
}

/// Writes LibSVM text; zero entries are omitted.
pub fn emit_libsvm<W: Write>(data: &Dataset, mut out: W) -> std::io::Result<()> {
    for r in 0..data.len() {
        write!(out, "{}", if data.labels[r] > 0.0 { "+1" } else { "-1" })?;
        for c in 0..data.dim {
            let v = data.rows[(r, c)];
            if v != 0.0 {
                write!(out, " {}:{}", c + 1, v)?;
            }
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Sorts rows by Euclidean norm (ascending, stable) and cuts them into `n`
/// contiguous shards; the first `m mod n` shards get one extra row.
pub fn heterogeneous_split(data: &Dataset, n: usize) -> Result<Vec<Dataset>> {
    let m = data.len();
    if n == 0 || m < n {
        return Err(Error::TooFewRows { rows: m, workers: n });
    }
    let norms = data.row_norms();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| norms[a].total_cmp(&norms[b]));
    let mut shards = Vec::with_capacity(n);
    let mut start = 0;
    for i in 0..n {
        let size = m / n + usize::from(i < m % n);
        shards.push(data.select(&order[start..start + size]));
        start += size;
    }
    Ok(shards)
}

/// Norm-skewed synthetic binary classification data.
///
/// Column `j` is nonzero with probability decaying in `j`, rows carry a
/// log-normal scale, and labels follow a planted linear model with noise.
pub fn synthetic_logistic_dataset(m: usize, d: usize, seed: u64) -> Result<Dataset> {
    if m == 0 || d == 0 {
        return Err(Error::EmptyData);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let density: Vec<f64> = (0..d).map(|j| (0.9 / (1.0 + j as f64).powf(0.8)).max(0.03)).collect();
    let w: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let mut rows = DMatrix::zeros(m, d);
    let mut labels = Vec::with_capacity(m);
    for r in 0..m {
        let scale = (0.8 * rng.sample::<f64, _>(StandardNormal)).exp();
        let mut margin = 0.0;
        for c in 0..d {
            if rng.random_bool(density[c]) {
                let v = scale * rng.sample::<f64, _>(StandardNormal);
                rows[(r, c)] = v;
                margin += v * w[c];
            }
        }
        margin += 0.5 * rng.sample::<f64, _>(StandardNormal);
        labels.push(if margin >= 0.0 { 1.0 } else { -1.0 });
    }
    Dataset::new(rescale_columns(&rows), labels)
}

/// Parses `synthetic:m=500,d=30,seed=7`.
pub fn parse_synthetic_spec(spec: &str) -> Result<(usize, usize, u64)> {
    let body = spec
        .strip_prefix("synthetic:")
        .ok_or_else(|| Error::InvalidParameter(format!("not a synthetic dataset spec: `{spec}`")))?;
    let (mut m, mut d, mut seed) = (500usize, 30usize, 0u64);
    for kv in body.split(',').filter(|s| !s.is_empty()) {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::InvalidParameter(format!("expected key=value in `{kv}`")))?;
        let bad = || Error::InvalidParameter(format!("bad value in `{kv}`"));
        match k.trim() {
            "m" => m = v.trim().parse().map_err(|_| bad())?,
            "d" => d = v.trim().parse().map_err(|_| bad())?,
            "seed" => seed = v.trim().parse().map_err(|_| bad())?,
            other => return Err(Error::InvalidParameter(format!("unknown synthetic key `{other}`"))),
        }
    }
    Ok((m, d, seed))
}

fn softplus(t: f64) -> f64 {
    if t > 0.0 { t + (-t).exp().ln_1p() } else { t.exp().ln_1p() }
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Debug)]
pub enum Loss {
    /// `(1/m) sum_t log(1 + exp(-b_t a_t^T x))`.
    Logistic(Dataset),
    /// `(1/2) (x - c)^T M (x - c)`.
    Quadratic { matrix: DMatrix<f64>, center: DVector<f64> },
}

/// One worker's objective `f_i = loss + (l2/2) ||x||^2` and its smoothness.
#[derive(Clone, Debug)]
pub struct WorkerProblem {
    pub loss: Loss,
    pub l2: f64,
    pub factor: Arc<SmoothnessFactor>,
}

impl WorkerProblem {
    pub fn logistic(data: Dataset, l2: f64) -> Result<Self> {
        let factor = glm_smoothness(&data.rows, l2)?;
        Ok(Self { loss: Loss::Logistic(data), l2, factor: Arc::new(factor) })
    }

    pub fn quadratic(matrix: DMatrix<f64>, center: DVector<f64>) -> Result<Self> {
        if center.len() != matrix.nrows() {
            return Err(Error::DimensionMismatch { expected: matrix.nrows(), got: center.len() });
        }
        let factor = build_factor(&matrix)?;
        Ok(Self { loss: Loss::Quadratic { matrix, center }, l2: 0.0, factor: Arc::new(factor) })
    }

    pub fn dim(&self) -> usize {
        self.factor.dim()
    }

    pub fn loss_grad(&self, x: &[f64]) -> (f64, DVector<f64>) {
        let xv = DVector::from_column_slice(x);
        let (f, mut g) = match &self.loss {
            Loss::Logistic(data) => {
                let m = data.len() as f64;
                let z = &data.rows * &xv;
                let mut f = 0.0;
                let mut s = DVector::zeros(data.len());
                for t in 0..data.len() {
                    let bz = data.labels[t] * z[t];
                    f += softplus(-bz);
                    s[t] = -data.labels[t] * sigmoid(-bz) / m;
                }
                (f / m, data.rows.tr_mul(&s))
            }
            Loss::Quadratic { matrix, center } => {
                let r = &xv - center;
                let g = matrix * &r;
                (0.5 * r.dot(&g), g)
            }
        };
        if self.l2 != 0.0 {
            g.axpy(self.l2, &xv, 1.0);
            return (f + 0.5 * self.l2 * xv.norm_squared(), g);
        }
        (f, g)
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.loss_grad(x).0
    }

    pub fn gradient(&self, x: &[f64]) -> DVector<f64> {
        self.loss_grad(x).1
    }

    pub fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let d = self.dim();
        let mut h = match &self.loss {
            Loss::Logistic(data) => {
                let m = data.len() as f64;
                let z = &data.rows * DVector::from_column_slice(x);
                let mut weighted = data.rows.clone();
                for t in 0..data.len() {
                    let s = sigmoid(data.labels[t] * z[t]);
                    weighted.row_mut(t).scale_mut(s * (1.0 - s) / m);
                }
                data.rows.tr_mul(&weighted)
            }
            Loss::Quadratic { matrix, .. } => matrix.clone(),
        };
        for j in 0..d {
            h[(j, j)] += self.l2;
        }
        h
    }

    /// Strong-convexity matrix: `M` for quadratics, `l2 I` for logistic.
    fn curvature_floor(&self) -> DMatrix<f64> {
        let d = self.dim();
        let base = match &self.loss {
            Loss::Quadratic { matrix, .. } => matrix.clone(),
            Loss::Logistic(_) => DMatrix::zeros(d, d),
        };
        base + DMatrix::identity(d, d) * self.l2
    }
}

pub fn logistic_loss_grad(problem: &WorkerProblem, x: &[f64]) -> (f64, DVector<f64>) {
    problem.loss_grad(x)
}

/// `f(x) - f(y) - <grad f(y), x - y>`.
pub fn bregman(problem: &WorkerProblem, x: &[f64], y: &[f64]) -> f64 {
    let fx = problem.value(x);
    let (fy, gy) = problem.loss_grad(y);
    let diff: f64 = gy.iter().zip(x.iter().zip(y)).map(|(g, (a, b))| g * (a - b)).sum();
    fx - fy - diff
}

/// Average loss and gradient over workers, summed in index order.
pub fn average_loss_grad(problems: &[WorkerProblem], x: &[f64]) -> (f64, DVector<f64>) {
    let n = problems.len() as f64;
    let mut f = 0.0;
    let mut g = DVector::zeros(x.len());
    for p in problems {
        let (fi, gi) = p.loss_grad(x);
        f += fi;
        g += gi;
    }
    (f / n, g / n)
}

/// `lambda_max` of the averaged smoothness matrix.
pub fn smoothness_constant(problems: &[WorkerProblem]) -> Result<f64> {
    let factors: Vec<SmoothnessFactor> = problems.iter().map(|p| (*p.factor).clone()).collect();
    Ok(crate::smoothness::global_factor(&factors)?.lambda_max())
}

/// `mu`: `lambda_min` of the averaged curvature floors, which is `l2` for
/// logistic problems.
pub fn strong_convexity(problems: &[WorkerProblem]) -> Result<f64> {
    let first = problems.first().ok_or(Error::EmptyData)?;
    let d = first.dim();
    let mut sum = DMatrix::zeros(d, d);
    for p in problems {
        sum += p.curvature_floor();
    }
    let avg = sum / problems.len() as f64;
    Ok(avg.symmetric_eigenvalues().min())
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum Regularizer {
    #[default]
    None,
    L1(f64),
}

impl Regularizer {
    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            Regularizer::None => 0.0,
            Regularizer::L1(w) => w * x.iter().map(|v| v.abs()).sum::<f64>(),
        }
    }

    /// `prox_{gamma R}` applied in place.
    pub fn prox(&self, x: &mut [f64], gamma: f64) {
        if let Regularizer::L1(w) = self {
            let t = gamma * w;
            for v in x.iter_mut() {
                *v = v.signum() * (v.abs() - t).max(0.0);
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct ReferenceSolution {
    pub x_star: DVector<f64>,
    pub f_star: f64,
    /// Norm of the gradient mapping at `x_star` (the gradient when `R = 0`).
    pub grad_norm: f64,
    /// `grad f_i(x_star)` per worker.
    pub worker_grads: Vec<DVector<f64>>,
}

impl ReferenceSolution {
    pub fn at(problems: &[WorkerProblem], reg: Regularizer, x: DVector<f64>) -> Result<Self> {
        let l = smoothness_constant(problems)?;
        let (f, g) = average_loss_grad(problems, x.as_slice());
        let grad_norm = gradient_mapping_norm(x.as_slice(), &g, l, reg);
        let worker_grads = problems.iter().map(|p| p.gradient(x.as_slice())).collect();
        Ok(Self { f_star: f + reg.value(x.as_slice()), x_star: x, grad_norm, worker_grads })
    }
}

fn gradient_mapping_norm(x: &[f64], g: &DVector<f64>, l: f64, reg: Regularizer) -> f64 {
    if reg == Regularizer::None {
        return g.norm();
    }
    let mut y: Vec<f64> = x.iter().zip(g.iter()).map(|(a, b)| a - b / l).collect();
    reg.prox(&mut y, 1.0 / l);
    l * x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

pub const REFERENCE_MAX_ITERATIONS: usize = 10_000_000;

fn default_tol(x: &[f64]) -> f64 {
    1e-12 * (1.0 + x.iter().map(|v| v * v).sum::<f64>().sqrt())
}

/// Solves `min (1/n) sum_i f_i + R` to high accuracy from `x0`.
///
/// Accelerated proximal gradient with step `1/L`; when `R = 0` a few
/// Newton steps polish the result. `tol` defaults to `1e-12 (1 + ||x||)`.
pub fn reference_solution_from(
    problems: &[WorkerProblem],
    reg: Regularizer,
    tol: Option<f64>,
    x0: &[f64],
) -> Result<ReferenceSolution> {
    let mu = strong_convexity(problems)?;
    if !(mu > 0.0) {
        return Err(Error::InvalidParameter(format!("objective is not strongly convex (mu = {mu})")));
    }
    let l = smoothness_constant(problems)?;
    let d = x0.len();
    let tol_at = |x: &[f64]| tol.unwrap_or_else(|| default_tol(x));
    let kappa = l / mu;
    let momentum = (kappa.sqrt() - 1.0) / (kappa.sqrt() + 1.0);
    let mut x = x0.to_vec();
    let mut y = x.clone();
    let mut gm = f64::INFINITY;
    let mut iterations = 0;
    // Stop accelerating once close; Newton or plain steps finish the job.
    let switch = if reg == Regularizer::None { 1e-6 } else { 0.0 };
    while iterations < REFERENCE_MAX_ITERATIONS {
        let (_, gx) = average_loss_grad(problems, &x);
        gm = gradient_mapping_norm(&x, &gx, l, reg);
        if gm <= tol_at(&x).max(switch * (1.0 + norm(&x))) {
            break;
        }
        let (_, gy) = average_loss_grad(problems, &y);
        let mut next: Vec<f64> = y.iter().zip(gy.iter()).map(|(a, b)| a - b / l).collect();
        reg.prox(&mut next, 1.0 / l);
        for j in 0..d {
            y[j] = next[j] + momentum * (next[j] - x[j]);
        }
        x = next;
        iterations += 1;
    }
    if reg == Regularizer::None {
        for _ in 0..50 {
            let (_, g) = average_loss_grad(problems, &x);
            gm = g.norm();
            if gm <= tol_at(&x) {
                break;
            }
            let mut h = DMatrix::zeros(d, d);
            for p in problems {
                h += p.hessian(&x);
            }
            h /= problems.len() as f64;
            let step = h.cholesky().map(|c| c.solve(&g)).unwrap_or_else(|| &g / l);
            for j in 0..d {
                x[j] -= step[j];
            }
        }
    }
    let sol = ReferenceSolution::at(problems, reg, DVector::from_vec(x))?;
    let tol_final = tol_at(sol.x_star.as_slice());
    if !(sol.grad_norm <= tol_final) {
        return Err(Error::NoConvergence { iterations, grad_norm: sol.grad_norm.min(gm) });
    }
    Ok(sol)
}

pub fn reference_solution(problems: &[WorkerProblem], reg: Regularizer, tol: Option<f64>) -> Result<ReferenceSolution> {
    let d = problems.first().ok_or(Error::EmptyData)?.dim();
    reference_solution_from(problems, reg, tol, &vec![0.0; d])
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QuadraticVariant {
    /// Shared minimizer, so every `grad f_i(x*) = 0`.
    Interpolation,
    /// Distinct worker minimizers.
    Heterogeneous,
}

/// Haar-distributed orthogonal matrix.
pub fn random_orthogonal<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Random PSD matrix with eigenvalues log-spaced over `[1, condition]`.
pub fn random_spd<R: Rng + ?Sized>(d: usize, condition: f64, rng: &mut R) -> DMatrix<f64> {
    let q = random_orthogonal(d, rng);
    let eig = DVector::from_fn(d, |j, _| {
        if d == 1 { 1.0 } else { condition.powf(j as f64 / (d - 1) as f64) }
    });
    let m = &q * DMatrix::from_diagonal(&eig) * q.transpose();
    (&m + m.transpose()) * 0.5
}

/// Planted quadratic problems with an exact average minimizer.
pub fn synthetic_quadratic(
    n: usize,
    d: usize,
    seed: u64,
    condition: f64,
    variant: QuadraticVariant,
) -> Result<(Vec<WorkerProblem>, ReferenceSolution)> {
    if !(condition >= 1.0) {
        return Err(Error::InvalidParameter(format!("condition number must be >= 1, got {condition}")));
    }
    if n == 0 || d == 0 {
        return Err(Error::EmptyData);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x_star = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut matrices = Vec::with_capacity(n);
    let mut centers = Vec::with_capacity(n);
    for _ in 0..n {
        matrices.push(random_spd(d, condition, &mut rng));
        centers.push(match variant {
            QuadraticVariant::Interpolation => x_star.clone(),
            QuadraticVariant::Heterogeneous => {
                &x_star + DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal))
            }
        });
    }
    let x_avg = match variant {
        QuadraticVariant::Interpolation => x_star,
        QuadraticVariant::Heterogeneous => {
            let mut msum = DMatrix::zeros(d, d);
            let mut rhs = DVector::zeros(d);
            for (m, c) in matrices.iter().zip(&centers) {
                msum += m;
                rhs += m * c;
            }
            msum.cholesky().ok_or(Error::NotPsd { eigenvalue: 0.0 })?.solve(&rhs)
        }
    };
    let problems = matrices
        .into_iter()
        .zip(centers)
        .map(|(m, c)| WorkerProblem::quadratic(m, c))
        .collect::<Result<Vec<_>>>()?;
    let reference = ReferenceSolution::at(&problems, Regularizer::None, x_avg)?;
    Ok((problems, reference))
}

/// Logistic problems on a heterogeneous split of `data`.
pub fn logistic_problems(data: &Dataset, n: usize, l2: f64) -> Result<Vec<WorkerProblem>> {
    heterogeneous_split(data, n)?.into_iter().map(|shard| WorkerProblem::logistic(shard, l2)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smoothness::heterogeneity;

    fn random_x(rng: &mut impl Rng, d: usize, scale: f64) -> Vec<f64> {
        (0..d).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
    }

    #[test]
    fn parse_basic_lines() {
        let ds = parse_libsvm_unscaled("1 1:0.5 3:-2\n".as_bytes(), Some(3)).unwrap();
        assert_eq!(ds.labels, vec![1.0]);
        assert_eq!(ds.rows.row(0).iter().copied().collect::<Vec<_>>(), vec![0.5, 0.0, -2.0]);
        let ds = parse_libsvm_unscaled("0 2:1\n".as_bytes(), None).unwrap();
        assert_eq!(ds.labels, vec![-1.0]);
        assert_eq!(ds.dim, 2);
        let ds = parse_libsvm_unscaled("0 1:1\n1 1:2\n\n# c\n0 2:3 # tail\n".as_bytes(), None).unwrap();
        assert_eq!(ds.labels, vec![-1.0, 1.0, -1.0]);
    }

    #[test]
    fn parse_errors() {
        let e = parse_libsvm("1 1:0.5\n1 2\n".as_bytes(), None).unwrap_err();
        assert!(matches!(e, Error::MalformedLine { line: 2, .. }), "{e:?}");
        assert!(matches!(parse_libsvm("1 0:1\n".as_bytes(), None), Err(Error::IndexZero { line: 1 })));
        assert!(matches!(parse_libsvm("x 1:1\n".as_bytes(), None), Err(Error::NonNumericValue { line: 1, .. })));
        assert!(matches!(parse_libsvm("1 1:abc\n".as_bytes(), None), Err(Error::NonNumericValue { .. })));
        assert!(matches!(parse_libsvm("1 1:1\n2 1:1\n3 1:1\n".as_bytes(), None), Err(Error::NonBinaryLabels(3))));
    }

    #[test]
    fn rescale_range_and_idempotence() {
        let ds = synthetic_logistic_dataset(80, 7, 3).unwrap();
        assert!(ds.rows.iter().all(|v| (-1.0..=1.0).contains(v)));
        assert_eq!(rescale_columns(&ds.rows), ds.rows);
        let raw = DMatrix::from_row_slice(3, 2, &[1.0, 5.0, 2.0, 5.0, 3.0, 5.0]);
        let r = rescale_columns(&raw);
        assert_eq!(r.column(0).iter().copied().collect::<Vec<_>>(), vec![-1.0, 0.0, 1.0]);
        assert!(r.column(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn emit_parse_roundtrip() {
        for seed in 0..10 {
            let ds = synthetic_logistic_dataset(15, 6, seed).unwrap();
            let mut buf = Vec::new();
            emit_libsvm(&ds, &mut buf).unwrap();
            let back = parse_libsvm(buf.as_slice(), Some(ds.dim)).unwrap();
            assert_eq!(back, ds);
        }
    }

    #[test]
    fn split_by_norm() {
        let rows = DMatrix::from_row_slice(4, 1, &[3.0, 1.0, 2.0, 4.0]);
        let ds = Dataset::new(rows, vec![1.0, -1.0, 1.0, -1.0]).unwrap();
        let shards = heterogeneous_split(&ds, 2).unwrap();
        assert_eq!(shards[0].row_norms(), vec![1.0, 2.0]);
        assert_eq!(shards[1].row_norms(), vec![3.0, 4.0]);
        let one = heterogeneous_split(&ds, 1).unwrap();
        assert_eq!(one[0].row_norms(), vec![1.0, 2.0, 3.0, 4.0]);
        assert!(matches!(heterogeneous_split(&ds, 5), Err(Error::TooFewRows { rows: 4, workers: 5 })));
        let ds = synthetic_logistic_dataset(11, 3, 0).unwrap();
        let sizes: Vec<usize> = heterogeneous_split(&ds, 3).unwrap().iter().map(|s| s.len()).collect();
        assert_eq!(sizes, vec![4, 4, 3]);
    }

    #[test]
    fn split_is_heterogeneous() {
        let ds = synthetic_logistic_dataset(300, 10, 5).unwrap();
        let n = 6;
        let problems = logistic_problems(&ds, n, 1e-3).unwrap();
        let factors: Vec<_> = problems.iter().map(|p| (*p.factor).clone()).collect();
        let stats = heterogeneity(&factors).unwrap();
        assert!(stats.nu < n as f64 * 0.9, "nu = {}", stats.nu);
    }

    #[test]
    fn logistic_at_origin() {
        let ds = synthetic_logistic_dataset(20, 4, 1).unwrap();
        let p = WorkerProblem::logistic(ds.clone(), 0.1).unwrap();
        let (f, g) = p.loss_grad(&[0.0; 4]);
        assert!((f - 2f64.ln()).abs() < 1e-15);
        let mut expect = DVector::zeros(4);
        for t in 0..20 {
            expect -= ds.rows.row(t).transpose() * (ds.labels[t] / 40.0);
        }
        assert!((g - expect).norm() < 1e-15);
    }

    #[test]
    fn saturating_loss() {
        let rows = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        let p = WorkerProblem::logistic(Dataset::new(rows, vec![1.0, 1.0]).unwrap(), 0.0).unwrap();
        let (f, g) = p.loss_grad(&[1e4]);
        assert!(f.is_finite() && g[0].is_finite());
        assert!((f - 5e3).abs() < 1e-9);
    }

    #[test]
    fn finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let ds = synthetic_logistic_dataset(40, 5, 2).unwrap();
        let (quads, _) = synthetic_quadratic(2, 5, 3, 10.0, QuadraticVariant::Heterogeneous).unwrap();
        let mut problems = vec![WorkerProblem::logistic(ds, 1e-2).unwrap()];
        problems.extend(quads);
        for p in &problems {
            for _ in 0..20 {
                let x = random_x(&mut rng, 5, 1.0);
                let g = p.gradient(&x);
                let mut fd = vec![0.0; 5];
                for j in 0..5 {
                    let (mut a, mut b) = (x.clone(), x.clone());
                    a[j] += 1e-6;
                    b[j] -= 1e-6;
                    fd[j] = (p.value(&a) - p.value(&b)) / 2e-6;
                }
                let err: f64 = g.iter().zip(&fd).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt();
                assert!(err <= 1e-5 * g.norm().max(1e-3), "err {err}");
            }
        }
    }

    #[test]
    fn matrix_smoothness_and_strong_convexity() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let ds = synthetic_logistic_dataset(60, 6, 4).unwrap();
        let p = WorkerProblem::logistic(ds, 1e-3).unwrap();
        for _ in 0..1000 {
            let x = random_x(&mut rng, 6, 2.0);
            let y = random_x(&mut rng, 6, 2.0);
            let diff: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a - b).collect();
            let d = bregman(&p, &x, &y);
            assert!(d <= 0.5 * p.factor.quad_form(&diff) + 1e-12);
            let sq: f64 = diff.iter().map(|v| v * v).sum();
            assert!(d >= 0.5 * 1e-3 * sq - 1e-12);
        }
        assert!((strong_convexity(&[p]).unwrap() - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn bregman_identities() {
        let (problems, _) = synthetic_quadratic(1, 4, 1, 5.0, QuadraticVariant::Interpolation).unwrap();
        let p = &problems[0];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_x(&mut rng, 4, 1.0);
        let y = random_x(&mut rng, 4, 1.0);
        let diff: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a - b).collect();
        assert!((bregman(p, &x, &y) - 0.5 * p.factor.quad_form(&diff)).abs() < 1e-12);
        assert_eq!(bregman(p, &x, &x), 0.0);
        let ds = synthetic_logistic_dataset(30, 4, 8).unwrap();
        let lp = WorkerProblem::logistic(ds, 0.0).unwrap();
        for _ in 0..10_000 {
            let x = random_x(&mut rng, 4, 3.0);
            let y = random_x(&mut rng, 4, 3.0);
            assert!(bregman(&lp, &x, &y) >= -1e-13);
        }
    }

    #[test]
    fn gradient_in_range_without_regularization() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let ds = synthetic_logistic_dataset(5, 8, 6).unwrap();
        let p = WorkerProblem::logistic(ds, 0.0).unwrap();
        assert!(p.factor.rank() < 8);
        for _ in 0..100 {
            let x = random_x(&mut rng, 8, 1.0);
            let g = p.gradient(&x);
            assert!(p.factor.range_residual(g.as_slice()) <= 1e-8 * g.norm());
        }
    }

    #[test]
    fn quadratic_generator() {
        let (problems, reference) = synthetic_quadratic(3, 6, 2, 50.0, QuadraticVariant::Interpolation).unwrap();
        for g in &reference.worker_grads {
            assert!(g.norm() < 1e-12);
        }
        for p in &problems {
            let e = p.factor.eigenvalues();
            assert!((e[0] / e[5] - 50.0).abs() < 1e-8);
        }
        let (problems, reference) = synthetic_quadratic(3, 6, 2, 50.0, QuadraticVariant::Heterogeneous).unwrap();
        assert!(reference.grad_norm < 1e-12);
        assert!(reference.worker_grads.iter().all(|g| g.norm() > 1e-3));
        let mut avg = DMatrix::zeros(6, 6);
        for p in &problems {
            avg += p.factor.matrix();
        }
        avg /= 3.0;
        let lam_min = nalgebra::SymmetricEigen::new(avg).eigenvalues.min();
        assert!((strong_convexity(&problems).unwrap() - lam_min).abs() < 1e-12);
    }

    #[test]
    fn reference_recovers_planted_solution() {
        let (problems, planted) = synthetic_quadratic(4, 8, 5, 20.0, QuadraticVariant::Heterogeneous).unwrap();
        let sol = reference_solution(&problems, Regularizer::None, None).unwrap();
        assert!((&sol.x_star - &planted.x_star).norm() < 1e-10);
        let (problems, planted) = synthetic_quadratic(4, 8, 5, 20.0, QuadraticVariant::Interpolation).unwrap();
        let sol = reference_solution(&problems, Regularizer::None, None).unwrap();
        assert!((&sol.x_star - &planted.x_star).norm() < 1e-10);
    }

    #[test]
    fn reference_logistic_two_starts() {
        let ds = synthetic_logistic_dataset(100, 10, 12).unwrap();
        let problems = logistic_problems(&ds, 4, 1e-3).unwrap();
        let a = reference_solution(&problems, Regularizer::None, None).unwrap();
        assert!(a.grad_norm <= 1e-10 * (1.0 + a.x_star.norm()));
        let b = reference_solution_from(&problems, Regularizer::None, None, &[3.0; 10]).unwrap();
        assert!((&a.x_star - &b.x_star).norm() < 1e-8);
        let l1 = reference_solution(&problems, Regularizer::L1(1e-2), Some(1e-9)).unwrap();
        assert!(l1.x_star.iter().any(|&v| v == 0.0));
        assert!(l1.grad_norm <= 1e-9);
    }

    #[test]
    fn reference_requires_strong_convexity() {
        let ds = synthetic_logistic_dataset(10, 3, 1).unwrap();
        let p = WorkerProblem::logistic(ds, 0.0).unwrap();
        assert!(reference_solution(&[p], Regularizer::None, None).is_err());
    }

    #[test]
    fn soft_threshold() {
        let mut x = [1.0, -0.05, 0.3, -2.0];
        Regularizer::L1(1.0).prox(&mut x, 0.1);
        assert_eq!(x, [0.9, -0.0, 0.19999999999999998, -1.9]);
        let mut y = [1.0];
        Regularizer::None.prox(&mut y, 5.0);
        assert_eq!(y, [1.0]);
    }

    #[test]
    fn synthetic_spec() {
        assert_eq!(parse_synthetic_spec("synthetic:m=500,d=30,seed=7").unwrap(), (500, 30, 7));
        assert!(parse_synthetic_spec("synthetic:q=1").is_err());
    }
}
