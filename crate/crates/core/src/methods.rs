//! DCGD+ and DIANA+ with their scalar-smoothness baselines.
//!
//! Every worker message goes through the real encoder and decoder; the
//! server only ever sees what it decoded from the wire.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DVector;
use serde::Serialize;

use crate::compressors::{optimal_rand_tau_probs, Compressor, CompressorKind, VarianceCertificate, WrappedCompressor};
use crate::encoding::{decode_message, encode_message, LevelCoding};
use crate::error::{Error, Result};
use crate::par;
use crate::problems::{
    smoothness_constant, strong_convexity, Loss, ReferenceSolution, Regularizer, WorkerProblem,
};
use crate::rng::RngStreams;
use crate::smoothness::{lowrank_overapprox, scalar_factor, SmoothnessFactor};
use crate::step_solver::{
    even_blocks, solve_block_dcgd, solve_block_diana, solve_varying_dcgd, solve_varying_diana,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum MethodKind {
    Dcgd,
    DcgdPlus,
    Diana,
    DianaPlus,
}

impl MethodKind {
    pub fn learns_shifts(self) -> bool {
        matches!(self, Self::Diana | Self::DianaPlus)
    }

    pub fn smoothness_aware(self) -> bool {
        matches!(self, Self::DcgdPlus | Self::DianaPlus)
    }
}

impl FromStr for MethodKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dcgd" => Ok(Self::Dcgd),
            "dcgd+" => Ok(Self::DcgdPlus),
            "diana" => Ok(Self::Diana),
            "diana+" => Ok(Self::DianaPlus),
            other => Err(Error::UnknownKind(other.to_string())),
        }
    }
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Dcgd => "dcgd",
            Self::DcgdPlus => "dcgd+",
            Self::Diana => "diana",
            Self::DianaPlus => "diana+",
        })
    }
}

/// A worker as seen by a step: its objective and its wrapped compressor.
#[derive(Clone, Debug)]
pub struct Node<'a> {
    pub problem: &'a WorkerProblem,
    pub compressor: WrappedCompressor,
}

impl Node<'_> {
    pub fn geometry(&self) -> &SmoothnessFactor {
        self.compressor.factor()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ServerState {
    pub x: DVector<f64>,
    /// Global shift, the average of the worker shifts (DIANA-type methods).
    pub u: DVector<f64>,
}

impl ServerState {
    pub fn new(x0: DVector<f64>) -> Self {
        let d = x0.len();
        Self { x: x0, u: DVector::zeros(d) }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DianaWorkerShift {
    pub u: DVector<f64>,
}

/// Per-iteration context shared by all workers.
#[derive(Clone, Copy, Debug)]
pub struct StepContext {
    pub streams: RngStreams,
    pub iteration: usize,
    pub coding: LevelCoding,
    pub reg: Regularizer,
}

/// What the server decoded from one worker.
#[derive(Clone, Debug)]
pub struct WorkerMessage {
    /// `L_i^{1/2}` applied to the decoded payload.
    pub delta_bar: DVector<f64>,
    pub bits: u64,
}

/// Worker `worker`'s round: gradient, optional shift, compress, encode, decode.
pub fn worker_message(
    node: &Node<'_>,
    worker: usize,
    x: &[f64],
    shift: Option<&DVector<f64>>,
    ctx: &StepContext,
) -> Result<WorkerMessage> {
    let mut g = node.problem.gradient(x);
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonfiniteGradient { iteration: ctx.iteration, worker });
    }
    if let Some(u) = shift {
        g -= u;
    }
    let mut rng = ctx.streams.for_worker(worker, ctx.iteration);
    let compressed = node.compressor.compress(g.as_slice(), &mut rng)?;
    let msg = encode_message(&compressed, ctx.coding)?;
    let decoded = decode_message(&msg, node.compressor.inner(), x.len(), ctx.coding)?;
    Ok(WorkerMessage { delta_bar: node.compressor.decompress(&decoded), bits: msg.bit_count as u64 })
}

/// All worker messages for one round, in worker order.
pub fn gather(
    nodes: &[Node<'_>],
    x: &DVector<f64>,
    shifts: Option<&[DianaWorkerShift]>,
    ctx: &StepContext,
) -> Result<Vec<WorkerMessage>> {
    par::map_range(nodes.len(), |i| worker_message(&nodes[i], i, x.as_slice(), shifts.map(|s| &s[i].u), ctx))
        .into_iter()
        .collect()
}

fn mean_in_order(msgs: &[WorkerMessage], d: usize) -> DVector<f64> {
    let mut sum = DVector::zeros(d);
    for m in msgs {
        sum += &m.delta_bar;
    }
    sum / msgs.len() as f64
}

fn prox_step(x: &DVector<f64>, g: &DVector<f64>, gamma: f64, reg: Regularizer) -> DVector<f64> {
    let mut next = x - g * gamma;
    reg.prox(next.as_mut_slice(), gamma);
    next
}

/// One DCGD+ round; returns the new state and the payload bits sent.
pub fn dcgd_plus_step(
    server: &ServerState,
    nodes: &[Node<'_>],
    gamma: f64,
    ctx: &StepContext,
) -> Result<(ServerState, u64)> {
    let msgs = gather(nodes, &server.x, None, ctx)?;
    let g = mean_in_order(&msgs, server.x.len());
    let bits = msgs.iter().map(|m| m.bits).sum();
    Ok((ServerState { x: prox_step(&server.x, &g, gamma, ctx.reg), u: server.u.clone() }, bits))
}

/// One DIANA+ round. `alpha_limit` is `1/(1 + omega_max)`.
pub fn diana_plus_step(
    server: &ServerState,
    nodes: &[Node<'_>],
    shifts: &[DianaWorkerShift],
    gamma: f64,
    alpha: f64,
    alpha_limit: f64,
    ctx: &StepContext,
) -> Result<(ServerState, Vec<DianaWorkerShift>, u64)> {
    if alpha > alpha_limit * (1.0 + 1e-12) || !(alpha > 0.0) {
        return Err(Error::AlphaTooLarge { alpha, limit: alpha_limit });
    }
    if shifts.len() != nodes.len() {
        return Err(Error::DimensionMismatch { expected: nodes.len(), got: shifts.len() });
    }
    let msgs = gather(nodes, &server.x, Some(shifts), ctx)?;
    let delta = mean_in_order(&msgs, server.x.len());
    let g = &delta + &server.u;
    let x = prox_step(&server.x, &g, gamma, ctx.reg);
    let u = &server.u + &delta * alpha;
    let new_shifts =
        shifts.iter().zip(&msgs).map(|(s, m)| DianaWorkerShift { u: &s.u + &m.delta_bar * alpha }).collect();
    let bits = msgs.iter().map(|m| m.bits).sum();
    Ok((ServerState { x, u }, new_shifts, bits))
}

/// `(gamma, alpha)` from the convergence theorems; `alpha` only for
/// shift-learning methods.
pub fn default_stepsizes(
    l: f64,
    cal_l_max: f64,
    omega_max: f64,
    n: usize,
    method: MethodKind,
) -> Result<(f64, Option<f64>)> {
    if !(l >= 0.0 && cal_l_max >= 0.0 && omega_max >= 0.0) || n == 0 {
        return Err(Error::InvalidParameter("step-size inputs must be nonnegative and n >= 1".into()));
    }
    let factor = if method.learns_shifts() { 6.0 } else { 2.0 };
    let denom = l + factor * cal_l_max / n as f64;
    if denom == 0.0 {
        return Err(Error::ZeroDenominator);
    }
    let alpha = method.learns_shifts().then(|| 1.0 / (1.0 + omega_max));
    Ok((1.0 / denom, alpha))
}

/// `(1/n) sum_i ||u_i - grad f_i(x*)||^2` in the `L_i^+` norm.
pub fn sigma_plus(geometries: &[&SmoothnessFactor], shifts: &[DianaWorkerShift], grads_at_star: &[DVector<f64>]) -> f64 {
    let n = geometries.len() as f64;
    geometries
        .iter()
        .zip(shifts)
        .zip(grads_at_star)
        .map(|((f, s), g)| f.pinv_quad_form((&s.u - g).as_slice()))
        .sum::<f64>()
        / n
}

/// `(1/n) sum_i calL_i ||grad f_i(x*)||^2` in the `L_i^+` norm.
pub fn sigma_star(
    geometries: &[&SmoothnessFactor],
    cal_l: &[f64],
    grads_at_star: &[DVector<f64>],
) -> f64 {
    let n = geometries.len() as f64;
    geometries
        .iter()
        .zip(cal_l)
        .zip(grads_at_star)
        .map(|((f, c), g)| c * f.pinv_quad_form(g.as_slice()))
        .sum::<f64>()
        / n
}

/// Compressor family plus the knobs needed to instantiate it per worker.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CompressorSpec {
    pub kind: CompressorKind,
    /// `s` for standard quantization; defaults to `ceil(sqrt(d)/n)`.
    pub levels: Option<u32>,
    /// Bit budget for `quant+` and `block_quant+`.
    pub beta: Option<f64>,
    /// Number of blocks for `block_quant+`; defaults to `n`.
    pub blocks: Option<usize>,
    /// Expected sparsity for `rand_tau+`; defaults to `ceil(d/n)`.
    pub tau: Option<usize>,
}

impl CompressorSpec {
    pub fn new(kind: CompressorKind) -> Self {
        Self { kind, levels: None, beta: None, blocks: None, tau: None }
    }

    pub fn identity() -> Self {
        Self::new(CompressorKind::Identity)
    }

    pub fn standard(levels: u32) -> Self {
        Self { levels: Some(levels), ..Self::new(CompressorKind::Standard) }
    }

    pub fn varying(beta: f64) -> Self {
        Self { beta: Some(beta), ..Self::new(CompressorKind::Varying) }
    }

    pub fn block(blocks: usize, beta: f64) -> Self {
        Self { beta: Some(beta), blocks: Some(blocks), ..Self::new(CompressorKind::Block) }
    }

    pub fn rand_tau(tau: usize) -> Self {
        Self { tau: Some(tau), ..Self::new(CompressorKind::RandTau) }
    }

    pub fn label(&self) -> String {
        self.kind.to_string()
    }

    /// Builds the compressor for one worker geometry.
    pub fn build(&self, geometry: &SmoothnessFactor, method: MethodKind, n: usize, mu: f64) -> Result<Compressor> {
        let d = geometry.dim();
        let diana = method.learns_shifts();
        match self.kind {
            CompressorKind::Identity => Ok(Compressor::Identity),
            CompressorKind::Standard => {
                let s = self.levels.unwrap_or_else(|| ((d as f64).sqrt() / n as f64).ceil().max(1.0) as u32);
                Compressor::standard(d, s)
            }
            CompressorKind::Varying => {
                let beta = self.beta.unwrap_or(d as f64 / n as f64);
                let sol = if diana {
                    solve_varying_diana(geometry, beta, n, mu)?
                } else {
                    solve_varying_dcgd(geometry, beta)?
                };
                Compressor::varying(sol.steps)
            }
            CompressorKind::Block => {
                let b = self.blocks.unwrap_or(n).clamp(1, d);
                let sizes = even_blocks(d, b)?;
                let beta = self.beta.unwrap_or(d as f64 / n as f64 + b as f64);
                let sol = if diana {
                    solve_block_diana(geometry, &sizes, beta, n, mu)?
                } else {
                    solve_block_dcgd(geometry, &sizes, beta)?
                };
                Compressor::block(sizes, sol.steps)
            }
            CompressorKind::RandTau => {
                let tau = self.tau.unwrap_or(d.div_ceil(n)).clamp(1, d);
                Compressor::rand_tau(optimal_rand_tau_probs(geometry.diag(), tau)?)
            }
        }
    }
}

/// Which matrix each worker shares with the server.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Geometry {
    /// The full `L_i`.
    #[default]
    Full,
    /// `diag(L_i)` only.
    Diagonal,
    /// Rank-`r` over-approximation of `L_i`.
    LowRank(usize),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Clock {
    /// Deterministic cost model.
    #[default]
    Simulated,
    /// In-process wall time.
    Wall,
}

/// Cost model for the simulated clock.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CostModel {
    pub flops_per_sec: f64,
    pub bandwidth_bps: f64,
    pub latency_s: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self { flops_per_sec: 1e9, bandwidth_bps: 1e9, latency_s: 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MethodConfig {
    /// Overrides the theoretical step size when set.
    pub gamma: Option<f64>,
    /// Overrides `1/(1 + omega_max)` when set.
    pub alpha: Option<f64>,
    pub iterations: usize,
    pub seed: u64,
    #[serde(skip)]
    pub prox: Regularizer,
    pub coding: LevelCoding,
    pub geometry: Geometry,
    pub clock: Clock,
    pub cost: CostModel,
    /// Starting point; zeros when `None`.
    #[serde(skip)]
    pub x0: Option<DVector<f64>>,
}

impl Default for MethodConfig {
    fn default() -> Self {
        Self {
            gamma: None,
            alpha: None,
            iterations: 100,
            seed: 0,
            prox: Regularizer::None,
            coding: LevelCoding::Unary,
            geometry: Geometry::Full,
            clock: Clock::Simulated,
            cost: CostModel::default(),
            x0: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TraceRecord {
    pub iter: usize,
    pub rel_error: f64,
    pub f_gap: f64,
    pub bits_cum: u64,
    pub time_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceMeta {
    pub method: MethodKind,
    pub compressor: String,
    pub seed: u64,
    pub gamma: f64,
    pub alpha: Option<f64>,
    pub smoothness: f64,
    pub mu: f64,
    pub omega: Vec<f64>,
    pub cal_l: Vec<f64>,
    pub one_time_bits: u64,
    pub diverged_at: Option<usize>,
    pub version: String,
    pub config_hash: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
    pub meta: TraceMeta,
}

impl Trace {
    pub fn diverged(&self) -> bool {
        self.meta.diverged_at.is_some()
    }

    /// First record with `rel_error <= threshold`.
    pub fn first_below(&self, threshold: f64) -> Option<&TraceRecord> {
        self.records.iter().find(|r| r.rel_error <= threshold)
    }
}

/// Worker geometries, compressors and certificates for a method.
#[derive(Clone, Debug)]
pub struct Setup<'a> {
    pub nodes: Vec<Node<'a>>,
    pub certificates: Vec<VarianceCertificate>,
    pub one_time_bits: u64,
    pub smoothness: f64,
    pub mu: f64,
}

impl Setup<'_> {
    pub fn omega_max(&self) -> f64 {
        self.certificates.iter().map(|c| c.omega_bound).fold(0.0, f64::max)
    }

    pub fn cal_l_max(&self) -> f64 {
        self.certificates.iter().map(|c| c.cal_l_bound).fold(0.0, f64::max)
    }

    pub fn geometries(&self) -> Vec<&SmoothnessFactor> {
        self.nodes.iter().map(|n| n.geometry()).collect()
    }
}

fn worker_geometry(problem: &WorkerProblem, method: MethodKind, geometry: Geometry) -> Result<(Arc<SmoothnessFactor>, u64)> {
    let f = &problem.factor;
    let d = f.dim() as u64;
    if !method.smoothness_aware() {
        return Ok((Arc::new(scalar_factor(f.dim(), f.lambda_max())), 0));
    }
    Ok(match geometry {
        Geometry::Full => (f.clone(), 32 * d * d),
        Geometry::Diagonal => (Arc::new(f.diagonal_only()), 32 * d),
        Geometry::LowRank(r) if (r as u64) < d => {
            (Arc::new(lowrank_overapprox(f, r)?), 32 * (r as u64 * d + r as u64 + 1))
        }
        Geometry::LowRank(_) => (f.clone(), 32 * d * d),
    })
}

pub fn setup<'a>(
    method: MethodKind,
    problems: &'a [WorkerProblem],
    spec: &CompressorSpec,
    geometry: Geometry,
) -> Result<Setup<'a>> {
    let n = problems.len();
    if n == 0 {
        return Err(Error::EmptyData);
    }
    let mu = strong_convexity(problems)?;
    let smoothness = smoothness_constant(problems)?;
    let mut nodes = Vec::with_capacity(n);
    let mut certificates = Vec::with_capacity(n);
    let mut one_time_bits = 0;
    for p in problems {
        let (geom, matrix_bits) = worker_geometry(p, method, geometry)?;
        let compressor = spec.build(&geom, method, n, mu)?;
        if method.smoothness_aware() {
            one_time_bits += matrix_bits + 32 * compressor.shared_parameters() as u64;
        }
        let wrapped = WrappedCompressor::new(compressor, geom)?;
        certificates.push(wrapped.certificate()?);
        nodes.push(Node { problem: p, compressor: wrapped });
    }
    Ok(Setup { nodes, certificates, one_time_bits, smoothness, mu })
}

fn worker_flops(node: &Node<'_>) -> f64 {
    let d = node.problem.dim() as f64;
    let grad = match &node.problem.loss {
        Loss::Logistic(data) => 4.0 * data.len() as f64 * d,
        Loss::Quadratic { .. } => 2.0 * d * d,
    };
    let whiten = if node.geometry().is_diagonal() { 2.0 * d } else { 4.0 * d * d };
    grad + whiten + 10.0 * d
}

fn rel_error(x: &DVector<f64>, x_star: &DVector<f64>, denom: f64) -> f64 {
    let e = (x - x_star).norm_squared();
    if denom > 0.0 { e / denom } else { e }
}

/// Runs `method` for `config.iterations` rounds, recording every iteration.
pub fn run(
    method: MethodKind,
    problems: &[WorkerProblem],
    spec: &CompressorSpec,
    config: &MethodConfig,
    reference: &ReferenceSolution,
) -> Result<Trace> {
    let s = setup(method, problems, spec, config.geometry)?;
    run_with_setup(method, &s, spec, config, reference)
}

pub fn run_with_setup(
    method: MethodKind,
    s: &Setup<'_>,
    spec: &CompressorSpec,
    config: &MethodConfig,
    reference: &ReferenceSolution,
) -> Result<Trace> {
    let n = s.nodes.len();
    let d = reference.x_star.len();
    let (gamma_default, alpha_default) =
        default_stepsizes(s.smoothness, s.cal_l_max(), s.omega_max(), n, method)?;
    let gamma = config.gamma.unwrap_or(gamma_default);
    let alpha_limit = 1.0 / (1.0 + s.omega_max());
    let alpha = if method.learns_shifts() { Some(config.alpha.unwrap_or(alpha_default.unwrap())) } else { None };

    let x0 = config.x0.clone().unwrap_or_else(|| DVector::zeros(d));
    if x0.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: x0.len() });
    }
    let denom = (&x0 - &reference.x_star).norm_squared();
    let guard = 1e12 * (1.0 + x0.norm());
    let objective = |x: &DVector<f64>| {
        s.nodes.iter().map(|node| node.problem.value(x.as_slice())).sum::<f64>() / n as f64
            + config.prox.value(x.as_slice())
    };

    let mut server = ServerState::new(x0.clone());
    let mut shifts: Vec<DianaWorkerShift> = (0..n).map(|_| DianaWorkerShift { u: DVector::zeros(d) }).collect();
    let streams = RngStreams::new(config.seed);
    let flops = s.nodes.iter().map(worker_flops).fold(0.0, f64::max) + 2.0 * n as f64 * d as f64;
    let start = Instant::now();
    let mut sim_seconds = 0.0;
    let mut bits_cum = s.one_time_bits;
    if s.one_time_bits > 0 {
        sim_seconds += s.one_time_bits as f64 / config.cost.bandwidth_bps + config.cost.latency_s;
    }
    let time_ms = |sim: f64| match config.clock {
        Clock::Simulated => sim * 1e3,
        Clock::Wall => start.elapsed().as_secs_f64() * 1e3,
    };
    let mut records = Vec::with_capacity(config.iterations + 1);
    records.push(TraceRecord {
        iter: 0,
        rel_error: 1.0,
        f_gap: objective(&server.x) - reference.f_star,
        bits_cum,
        time_ms: time_ms(sim_seconds),
    });
    let mut diverged_at = None;
    for k in 0..config.iterations {
        let ctx = StepContext { streams, iteration: k, coding: config.coding, reg: config.prox };
        let step = if method.learns_shifts() {
            diana_plus_step(&server, &s.nodes, &shifts, gamma, alpha.unwrap(), alpha_limit, &ctx).map(
                |(state, new_shifts, bits)| {
                    shifts = new_shifts;
                    (state, bits)
                },
            )
        } else {
            dcgd_plus_step(&server, &s.nodes, gamma, &ctx)
        };
        let (next, bits) = match step {
            Ok(v) => v,
            Err(Error::NonfiniteGradient { .. }) => {
                diverged_at = Some(k + 1);
                break;
            }
            Err(e) => return Err(e),
        };
        server = next;
        bits_cum += bits;
        sim_seconds += flops / config.cost.flops_per_sec + bits as f64 / config.cost.bandwidth_bps + config.cost.latency_s;
        let norm = server.x.norm();
        if !norm.is_finite() || norm > guard {
            diverged_at = Some(k + 1);
            break;
        }
        records.push(TraceRecord {
            iter: k + 1,
            rel_error: rel_error(&server.x, &reference.x_star, denom),
            f_gap: objective(&server.x) - reference.f_star,
            bits_cum,
            time_ms: time_ms(sim_seconds),
        });
    }
    Ok(Trace {
        records,
        meta: TraceMeta {
            method,
            compressor: spec.label(),
            seed: config.seed,
            gamma,
            alpha,
            smoothness: s.smoothness,
            mu: s.mu,
            omega: s.certificates.iter().map(|c| c.omega_bound).collect(),
            cal_l: s.certificates.iter().map(|c| c.cal_l_bound).collect(),
            one_time_bits: s.one_time_bits,
            diverged_at,
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: None,
        },
    })
}
