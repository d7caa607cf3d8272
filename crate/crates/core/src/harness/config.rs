//! Experiment configuration files.
//!
//! A config is a flat TOML table. Relative paths are resolved against the
//! directory holding the config file.

use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use toml::{Table, Value};

use crate::compressors::CompressorKind;
use crate::encoding::LevelCoding;
use crate::error::{Error, Result};
use crate::methods::{Clock, CompressorSpec, CostModel, Geometry, MethodKind};
use crate::problems::{
    logistic_problems, parse_libsvm, parse_synthetic_spec, synthetic_logistic_dataset, synthetic_quadratic,
    QuadraticVariant, Regularizer, WorkerProblem,
};

/// Where the worker objectives come from.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum DatasetSource {
    File { path: PathBuf },
    Synthetic { m: usize, d: usize, seed: u64 },
    Quadratic { d: usize, seed: u64, condition: f64, interpolation: bool },
}

impl DatasetSource {
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        if text.starts_with("synthetic:") {
            let (m, d, seed) = parse_synthetic_spec(text).map_err(|e| config_error("dataset", e))?;
            return Ok(Self::Synthetic { m, d, seed });
        }
        if let Some(body) = text.strip_prefix("quadratic:") {
            let (mut d, mut seed, mut condition, mut interpolation) = (20usize, 0u64, 50.0f64, false);
            for kv in body.split(',').filter(|s| !s.is_empty()) {
                let (k, v) = kv.split_once('=').ok_or_else(|| config_msg("dataset", format!("expected key=value in `{kv}`")))?;
                let bad = || config_msg("dataset", format!("bad value in `{kv}`"));
                match k.trim() {
                    "d" => d = v.trim().parse().map_err(|_| bad())?,
                    "seed" => seed = v.trim().parse().map_err(|_| bad())?,
                    "condition" => condition = v.trim().parse().map_err(|_| bad())?,
                    "variant" => {
                        interpolation = match v.trim() {
                            "interpolation" => true,
                            "heterogeneous" => false,
                            _ => return Err(bad()),
                        }
                    }
                    other => return Err(config_msg("dataset", format!("unknown quadratic key `{other}`"))),
                }
            }
            return Ok(Self::Quadratic { d, seed, condition, interpolation });
        }
        let path = base.join(text);
        if !path.is_file() {
            return Err(Error::DatasetNotFound(path));
        }
        Ok(Self::File { path })
    }

    /// Builds `n` worker problems with ridge parameter `l2`.
    pub fn problems(&self, n: usize, l2: f64) -> Result<Vec<WorkerProblem>> {
        match self {
            Self::File { path } => {
                let file = std::fs::File::open(path).map_err(|_| Error::DatasetNotFound(path.clone()))?;
                let data = parse_libsvm(std::io::BufReader::new(file), None)?;
                logistic_problems(&data, n, l2)
            }
            Self::Synthetic { m, d, seed } => logistic_problems(&synthetic_logistic_dataset(*m, *d, *seed)?, n, l2),
            Self::Quadratic { d, seed, condition, interpolation } => {
                let variant =
                    if *interpolation { QuadraticVariant::Interpolation } else { QuadraticVariant::Heterogeneous };
                Ok(synthetic_quadratic(n, *d, *seed, *condition, variant)?.0)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub n: usize,
    pub l2: f64,
    pub l1: f64,
    pub methods: Vec<MethodKind>,
    pub compressors: Vec<CompressorSpec>,
    pub seeds: Vec<u64>,
    pub iterations: usize,
    pub output_dir: PathBuf,
    pub geometry: Geometry,
    pub level_coding: LevelCoding,
    pub clock: Clock,
    pub cost: CostModel,
    pub gamma: Option<f64>,
    pub alpha: Option<f64>,
    pub thresholds: Vec<f64>,
}

impl ExperimentConfig {
    pub fn regularizer(&self) -> Regularizer {
        if self.l1 > 0.0 { Regularizer::L1(self.l1) } else { Regularizer::None }
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

fn config_msg(key: &str, message: impl Into<String>) -> Error {
    Error::ConfigParse { key: key.to_string(), message: message.into() }
}

fn config_error(key: &str, e: Error) -> Error {
    config_msg(key, e.to_string())
}

const KNOWN_KEYS: &[&str] = &[
    "dataset",
    "n",
    "l2",
    "l1",
    "methods",
    "compressors",
    "seeds",
    "iterations",
    "output_dir",
    "beta",
    "levels",
    "blocks",
    "tau",
    "diagonal_only",
    "lowrank_rank",
    "level_coding",
    "clock",
    "flops_per_sec",
    "bandwidth_bps",
    "latency_s",
    "gamma",
    "alpha",
    "thresholds",
];

struct Reader<'a> {
    table: &'a Table,
}

impl Reader<'_> {
    fn get(&self, key: &str) -> Option<&Value> {
        self.table.get(key)
    }

    fn require(&self, key: &str) -> Result<&Value> {
        self.get(key).ok_or_else(|| config_msg(key, "missing required key"))
    }

    fn string(&self, key: &str) -> Result<Option<String>> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(other) => Err(config_msg(key, format!("expected a string, got {}", other.type_str()))),
        }
    }

    fn float(&self, key: &str) -> Result<Option<f64>> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Float(v)) => Ok(Some(*v)),
            Some(Value::Integer(v)) => Ok(Some(*v as f64)),
            Some(other) => Err(config_msg(key, format!("expected a number, got {}", other.type_str()))),
        }
    }

    fn uint(&self, key: &str) -> Result<Option<u64>> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Integer(v)) if *v >= 0 => Ok(Some(*v as u64)),
            Some(other) => Err(config_msg(key, format!("expected a nonnegative integer, got {other}"))),
        }
    }

    fn boolean(&self, key: &str) -> Result<Option<bool>> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Boolean(b)) => Ok(Some(*b)),
            Some(other) => Err(config_msg(key, format!("expected a boolean, got {}", other.type_str()))),
        }
    }

    /// A string or an array of strings.
    fn strings(&self, key: &str) -> Result<Option<Vec<String>>> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(vec![s.clone()])),
            Some(Value::Array(items)) => items
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    v.as_str().map(str::to_string).ok_or_else(|| config_msg(&format!("{key}[{i}]"), "expected a string"))
                })
                .collect::<Result<Vec<_>>>()
                .map(Some),
            Some(other) => Err(config_msg(key, format!("expected a string array, got {}", other.type_str()))),
        }
    }

    fn uints(&self, key: &str) -> Result<Option<Vec<u64>>> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Integer(v)) if *v >= 0 => Ok(Some(vec![*v as u64])),
            Some(Value::Array(items)) => items
                .iter()
                .enumerate()
                .map(|(i, v)| match v {
                    Value::Integer(x) if *x >= 0 => Ok(*x as u64),
                    _ => Err(config_msg(&format!("{key}[{i}]"), "expected a nonnegative integer")),
                })
                .collect::<Result<Vec<_>>>()
                .map(Some),
            Some(other) => Err(config_msg(key, format!("expected an integer array, got {}", other.type_str()))),
        }
    }

    fn floats(&self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Array(items)) => items
                .iter()
                .enumerate()
                .map(|(i, v)| match v {
                    Value::Float(x) => Ok(*x),
                    Value::Integer(x) => Ok(*x as f64),
                    _ => Err(config_msg(&format!("{key}[{i}]"), "expected a number")),
                })
                .collect::<Result<Vec<_>>>()
                .map(Some),
            Some(other) => Err(config_msg(key, format!("expected a number array, got {}", other.type_str()))),
        }
    }
}

/// Parses config text; `base` anchors relative paths.
pub fn parse_config(text: &str, base: &Path) -> Result<ExperimentConfig> {
    let table: Table = text.parse().map_err(|e: toml::de::Error| config_msg("<file>", e.message().to_string()))?;
    if let Some(key) = table.keys().find(|k| !KNOWN_KEYS.contains(&k.as_str())) {
        return Err(config_msg(key, "unknown key"));
    }
    let r = Reader { table: &table };

    let dataset_text = r.string("dataset")?.ok_or_else(|| config_msg("dataset", "missing required key"))?;
    let n = r.uint("n")?.unwrap_or(1) as usize;
    if n == 0 {
        return Err(config_msg("n", "must be >= 1"));
    }
    let iterations = r.uint("iterations")?.unwrap_or(1000) as usize;
    if iterations == 0 {
        return Err(config_msg("iterations", "must be >= 1"));
    }
    let l2 = r.float("l2")?.unwrap_or(1e-3);
    if !(l2 >= 0.0) {
        return Err(config_msg("l2", "must be nonnegative"));
    }
    let l1 = r.float("l1")?.unwrap_or(0.0);
    if !(l1 >= 0.0) {
        return Err(config_msg("l1", "must be nonnegative"));
    }

    r.require("methods")?;
    let methods = r
        .strings("methods")?
        .unwrap()
        .iter()
        .map(|s| s.parse::<MethodKind>().map_err(|e| config_error("methods", e)))
        .collect::<Result<Vec<_>>>()?;
    r.require("compressors")?;
    let kinds = r
        .strings("compressors")?
        .unwrap()
        .iter()
        .map(|s| s.parse::<CompressorKind>().map_err(|e| config_error("compressors", e)))
        .collect::<Result<Vec<_>>>()?;
    if methods.is_empty() {
        return Err(config_msg("methods", "needs at least one entry"));
    }
    if kinds.is_empty() {
        return Err(config_msg("compressors", "needs at least one entry"));
    }
    let beta = r.float("beta")?;
    if let Some(b) = beta {
        if !(b > 0.0) {
            return Err(config_msg("beta", "must be positive"));
        }
    }
    let levels = r.uint("levels")?.map(|v| v as u32);
    if levels == Some(0) {
        return Err(config_msg("levels", "must be >= 1"));
    }
    let blocks = r.uint("blocks")?.map(|v| v as usize);
    if blocks == Some(0) {
        return Err(config_msg("blocks", "must be >= 1"));
    }
    let tau = r.uint("tau")?.map(|v| v as usize);
    let compressors =
        kinds.into_iter().map(|kind| CompressorSpec { kind, levels, beta, blocks, tau }).collect();

    let seeds = r.uints("seeds")?.unwrap_or_else(|| vec![0]);
    if seeds.is_empty() {
        return Err(config_msg("seeds", "needs at least one entry"));
    }
    let output_dir = base.join(r.string("output_dir")?.unwrap_or_else(|| "out".to_string()));

    let geometry = match (r.boolean("diagonal_only")?.unwrap_or(false), r.uint("lowrank_rank")?) {
        (true, Some(_)) => return Err(config_msg("lowrank_rank", "cannot be combined with diagonal_only")),
        (true, None) => Geometry::Diagonal,
        (false, Some(rank)) => Geometry::LowRank(rank as usize),
        (false, None) => Geometry::Full,
    };
    let level_coding = match r.string("level_coding")? {
        None => LevelCoding::Unary,
        Some(s) => s.parse().map_err(|e| config_error("level_coding", e))?,
    };
    let clock = match r.string("clock")?.as_deref() {
        None | Some("simulated") => Clock::Simulated,
        Some("wall") => Clock::Wall,
        Some(other) => return Err(config_msg("clock", format!("expected `simulated` or `wall`, got `{other}`"))),
    };
    let defaults = CostModel::default();
    let cost = CostModel {
        flops_per_sec: r.float("flops_per_sec")?.unwrap_or(defaults.flops_per_sec),
        bandwidth_bps: r.float("bandwidth_bps")?.unwrap_or(defaults.bandwidth_bps),
        latency_s: r.float("latency_s")?.unwrap_or(defaults.latency_s),
    };
    if !(cost.flops_per_sec > 0.0) {
        return Err(config_msg("flops_per_sec", "must be positive"));
    }
    if !(cost.bandwidth_bps > 0.0) {
        return Err(config_msg("bandwidth_bps", "must be positive"));
    }
    if !(cost.latency_s >= 0.0) {
        return Err(config_msg("latency_s", "must be nonnegative"));
    }
    let gamma = r.float("gamma")?;
    if gamma.is_some_and(|g| !(g > 0.0)) {
        return Err(config_msg("gamma", "must be positive"));
    }
    let alpha = r.float("alpha")?;
    if alpha.is_some_and(|a| !(a > 0.0 && a <= 1.0)) {
        return Err(config_msg("alpha", "must lie in (0, 1]"));
    }
    let thresholds = r.floats("thresholds")?.unwrap_or_else(|| vec![1e-2, 1e-4, 1e-6]);
    let dataset = DatasetSource::parse(&dataset_text, base)?;

    Ok(ExperimentConfig {
        dataset,
        n,
        l2,
        l1,
        methods,
        compressors,
        seeds,
        iterations,
        output_dir,
        geometry,
        level_coding,
        clock,
        cost,
        gamma,
        alpha,
        thresholds,
    })
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| config_msg("<file>", format!("cannot read {}: {e}", path.display())))?;
    let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    parse_config(&text, base)
}
