//! Bit count versus `||h^{-1}||` on random sparse Poisson vectors.
//!
//! Entries are nonzero with the given density and Poisson distributed,
//! `h_j = |N(0, 1)|` by default.

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::Serialize;

use crate::compressors::quantize_varying;
use crate::encoding::{bits_proxy, pearson, quantized_bit_count, LevelCoding};
use crate::error::{Error, Result};

pub const LAMBDAS: [f64; 3] = [1.0, 10.0, 100.0];
pub const DENSITIES: [f64; 4] = [0.25, 0.5, 0.75, 1.0];

/// How step vectors are drawn.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum StepSpec {
    /// `h_j = scale * |N(0, 1)|`.
    AbsNormal(f64),
    /// `h_j = h` for every coordinate.
    Uniform(f64),
}

impl FromStr for StepSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((a, b)) => (a, Some(b)),
            None => (s, None),
        };
        let value = |default: Option<f64>| -> Result<f64> {
            let v = match arg {
                Some(t) => t.parse().map_err(|_| Error::InvalidParameter(format!("bad step spec `{s}`")))?,
                None => default.ok_or_else(|| Error::InvalidParameter(format!("`{name}` needs a value")))?,
            };
            if v > 0.0 && f64::is_finite(v) {
                Ok(v)
            } else {
                Err(Error::InvalidStep(v))
            }
        };
        match name {
            "abs-normal" => Ok(Self::AbsNormal(value(Some(1.0))?)),
            "uniform" => Ok(Self::Uniform(value(None)?)),
            _ => Err(Error::InvalidParameter(format!("unknown step spec `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub trial: usize,
    /// Bit count averaged over every `(lambda, density)` setting.
    pub bits: f64,
    pub inv_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    /// `None` when undefined (fewer than two trials or a constant column).
    pub pearson: Option<f64>,
}

impl BenchReport {
    pub fn render(&self) -> String {
        let mut out = String::from("trial        bits    inv_norm\n");
        for r in &self.rows {
            out.push_str(&format!("{:>5}  {:>10.2}  {:>10.4}\n", r.trial, r.bits, r.inv_norm));
        }
        match self.pearson {
            Some(p) => out.push_str(&format!("pearson {p:.6}\n")),
            None => out.push_str("pearson n/a\n"),
        }
        out
    }
}

/// One row per random step vector `h`; for each `h`, `samples` sparse
/// Poisson vectors are quantized and encoded at every grid setting.
pub fn encode_bench(
    d: usize,
    steps: StepSpec,
    trials: usize,
    samples: usize,
    seed: u64,
    coding: LevelCoding,
) -> Result<BenchReport> {
    if trials == 0 || samples == 0 {
        return Err(Error::InvalidParameter("trials and samples must be >= 1".into()));
    }
    if d == 0 {
        return Err(Error::EmptyData);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let poissons = LAMBDAS
        .iter()
        .map(|&l| Poisson::new(l).map_err(|e| Error::InvalidParameter(e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(trials);
    for trial in 0..trials {
        let h: Vec<f64> = match steps {
            StepSpec::AbsNormal(scale) => (0..d)
                .map(|_| (scale * rng.sample::<f64, _>(StandardNormal).abs()).max(f64::MIN_POSITIVE))
                .collect(),
            StepSpec::Uniform(v) => vec![v; d],
        };
        let mut total = 0usize;
        let mut count = 0usize;
        for poisson in &poissons {
            for &density in &DENSITIES {
                for _ in 0..samples {
                    let x: Vec<f64> = (0..d)
                        .map(|_| if rng.random_bool(density) { poisson.sample(&mut rng) } else { 0.0 })
                        .collect();
                    let q = quantize_varying(&x, &h, &mut rng)?;
                    total += quantized_bit_count(&q, coding)?.total();
                    count += 1;
                }
            }
        }
        rows.push(BenchRow { trial, bits: total as f64 / count as f64, inv_norm: bits_proxy(&h) });
    }
    let bits: Vec<f64> = rows.iter().map(|r| r.bits).collect();
    let inv: Vec<f64> = rows.iter().map(|r| r.inv_norm).collect();
    Ok(BenchReport { pearson: pearson(&bits, &inv), rows })
}
