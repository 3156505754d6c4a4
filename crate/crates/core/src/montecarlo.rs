//! Reproducible Monte-Carlo harness: channel draws, training, MRT precoding
//! and SINR averaged over trials, plus deterministic-equivalent sweeps over
//! the same grid.
//!
//! Every trial reads its randomness from `seed / grid index / trial index`,
//! and all protocols inside a trial share the channel and the first training
//! noise block, so protocol comparisons are paired.

use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asymptotics::{det_sinr_de, det_sinr_onoff, det_sinr_perfect, DetEquivResult};
use crate::error::{Error, Result};
use crate::estimation::{
    de_estimate, de_statistics, de_training, onoff_estimate, onoff_statistics, onoff_training, DeStatistics,
    OnOffStatistics,
};
use crate::linalg::{CMat, CVec, CompensatedSum};
use crate::model::{
    compute_link_gains, db_to_linear, effective_channel, generate_h1_los, generate_h1_unitary, sample_user_channels,
    Geometry, IrsConfig, LinkGains, PathLossModel, SystemConfig,
};
use crate::phase_opt::{discrete_config, discrete_phase_search, optimize_phases, OptimizationResult, OptimizerSettings, SearchMode};
use crate::rng::{tag, Stream};
use crate::transceiver::{analytic_psi, net_factor, rates, sinr_from_channels, CsiModel, Protocol};

/// How the BS-IRS channel is built.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum H1Model {
    /// Deterministic full-rank line-of-sight channel from the geometry.
    Los,
    /// Leading rows of a Haar unitary drawn from `seed`.
    Unitary { seed: u64 },
}

/// Where the large-scale gains come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LinkModel {
    Geometric { geometry: Geometry, pathloss: PathLossModel },
    Explicit { gains: LinkGains },
}

/// Gain against which rho and rho_tr are quoted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnrReference {
    /// Gains are used as computed; rho = P_max / sigma2 at unit gain.
    Absolute,
    /// All user-side gains are divided by the mean direct-link gain, so rho is
    /// the average per-antenna receive SNR of the direct links.
    MeanDirectGain,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TrainingSnr {
    /// Same per-sub-phase training SNR for every protocol.
    Fixed { rho_tr: f64 },
    /// rho_tr = p_c tau_s / sigma2 with the window tau_c split into the
    /// protocol's sub-phases.
    Energy { pilot_power: f64, noise_energy: f64 },
}

impl TrainingSnr {
    pub fn for_protocol(&self, protocol: Protocol, n: usize, tau_c: f64) -> f64 {
        match *self {
            TrainingSnr::Fixed { rho_tr } => rho_tr,
            TrainingSnr::Energy {
                pilot_power,
                noise_energy,
            } => match protocol {
                Protocol::Perfect => f64::INFINITY,
                _ => protocol.training_snr(n, tau_c, pilot_power, noise_energy),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PhasePolicy {
    /// Uniform draw from the 2^bits grid; either one draw per grid point or a
    /// fresh draw every trial.
    RandomDiscrete { bits: u32, per_trial: bool },
    /// Projected gradient ascent on the ON/OFF deterministic sum rate.
    OptimizedDet,
    /// Greedy coordinate search on the 2^bits grid maximising the ON/OFF
    /// deterministic sum rate.
    GreedyDiscrete { bits: u32 },
    /// Explicit phases in radians.
    Fixed { theta: Vec<f64> },
}

impl PhasePolicy {
    pub fn label(&self) -> &'static str {
        match self {
            PhasePolicy::RandomDiscrete { .. } => "random",
            PhasePolicy::OptimizedDet => "optimized",
            PhasePolicy::GreedyDiscrete { .. } => "greedy",
            PhasePolicy::Fixed { .. } => "fixed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    RhoDb,
    RhoTrDb,
    N,
    M,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::RhoDb => "rho_dB",
            SweepParam::RhoTrDb => "rho_tr_dB",
            SweepParam::N => "N",
            SweepParam::M => "M",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub param: SweepParam,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    MeanSinr,
    MeanRate,
    SumRate,
    NetSumRate,
    /// 10 log10 of the mean SINR, derived from [`Metric::MeanSinr`].
    MeanSinrDb,
}

impl Metric {
    /// Metrics averaged per trial.
    pub const ALL: [Metric; 4] = [Metric::MeanSinr, Metric::MeanRate, Metric::SumRate, Metric::NetSumRate];

    pub fn name(self) -> &'static str {
        match self {
            Metric::MeanSinr => "mean_sinr",
            Metric::MeanRate => "mean_rate",
            Metric::SumRate => "sum_rate",
            Metric::NetSumRate => "net_sum_rate",
            Metric::MeanSinrDb => "mean_sinr_dB",
        }
    }
}

/// Default cap on M * N * trials for one grid point.
pub const DEFAULT_WORK_BUDGET: u64 = 20_000_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub scenario_id: String,
    /// Base configuration; the swept field is overwritten per grid point.
    pub config: SystemConfig,
    pub links: LinkModel,
    pub h1_model: H1Model,
    pub snr_reference: SnrReference,
    pub training: TrainingSnr,
    pub protocols: Vec<Protocol>,
    pub phase_policy: PhasePolicy,
    pub trials: usize,
    pub seed: u64,
    pub sweep: Sweep,
    /// `false` removes the IRS (N = 0 at every grid point, whatever is swept).
    pub irs: bool,
    pub optimizer: OptimizerSettings,
    /// Passes of the greedy discrete search.
    pub greedy_passes: usize,
    pub work_budget: u64,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidConfig("trials must be at least 1".into()));
        }
        if self.sweep.values.is_empty() {
            return Err(Error::InvalidConfig("sweep grid is empty".into()));
        }
        if self.protocols.is_empty() {
            return Err(Error::InvalidConfig("no protocol selected".into()));
        }
        if let Some(bad) = self.sweep.values.iter().find(|x| !x.is_finite()) {
            return Err(Error::InvalidConfig(format!("sweep value {bad} is not finite")));
        }
        if matches!(self.sweep.param, SweepParam::N | SweepParam::M)
            && self.sweep.values.iter().any(|x| *x < 0.0 || x.fract() != 0.0)
        {
            return Err(Error::InvalidConfig("dimension sweeps need non-negative integers".into()));
        }
        match &self.links {
            LinkModel::Geometric { geometry, .. } if geometry.users.len() != self.config.k => {
                return Err(Error::DimensionMismatch {
                    what: "users in geometry",
                    expected: self.config.k,
                    got: geometry.users.len(),
                })
            }
            LinkModel::Explicit { gains } if gains.k() != self.config.k => {
                return Err(Error::DimensionMismatch {
                    what: "users in explicit gains",
                    expected: self.config.k,
                    got: gains.k(),
                })
            }
            _ => {}
        }
        if let PhasePolicy::Fixed { theta } = &self.phase_policy {
            if !self.irs {
                return Err(Error::InvalidConfig("fixed phases given for a system without IRS".into()));
            }
            if self.sweep.param == SweepParam::N {
                return Err(Error::InvalidConfig("fixed phases cannot be combined with an N sweep".into()));
            }
            if theta.len() != self.config.n {
                return Err(Error::DimensionMismatch {
                    what: "fixed phase vector",
                    expected: self.config.n,
                    got: theta.len(),
                });
            }
        }
        self.optimizer.validate()?;
        for i in 0..self.sweep.values.len() {
            self.point_config(i)?.validate()?;
        }
        Ok(())
    }

    /// Configuration at grid point `idx` (rho_tr as set in the base config).
    pub fn point_config(&self, idx: usize) -> Result<SystemConfig> {
        let x = self.sweep.values[idx];
        let mut c = self.config.clone();
        let alpha0 = c.alpha.first().copied().unwrap_or(1.0);
        match self.sweep.param {
            SweepParam::RhoDb => c = c.with_rho_db(x),
            SweepParam::RhoTrDb => c = c.with_rho_tr_db(x),
            SweepParam::N => {
                c.n = x as usize;
                c.alpha = vec![alpha0; c.n];
            }
            SweepParam::M => c.m = x as usize,
        }
        if !self.irs {
            c.n = 0;
            c.alpha.clear();
        }
        Ok(c)
    }
}

/// Everything about one grid point that does not change between trials.
#[derive(Debug, Clone)]
pub struct PointContext {
    pub x: f64,
    pub config: SystemConfig,
    pub gains: LinkGains,
    pub h1: Arc<CMat>,
    /// Configuration per protocol (only rho_tr differs).
    pub protocol_configs: Vec<(Protocol, SystemConfig)>,
    pub onoff: Option<OnOffStatistics>,
    pub de: Option<DeStatistics>,
    /// Phases used by every trial, unless they are redrawn per trial.
    pub v: Option<IrsConfig>,
    pub random_bits: Option<u32>,
    /// Psi per protocol when it does not change between trials.
    pub psi: Vec<(Protocol, f64)>,
}

impl PointContext {
    fn csi_model(&self, protocol: Protocol) -> CsiModel<'_> {
        match protocol {
            Protocol::Perfect => CsiModel::Perfect {
                gains: &self.gains,
                h1: &self.h1,
            },
            Protocol::OnOff => CsiModel::OnOff(self.onoff.as_ref().expect("ON/OFF statistics built")),
            Protocol::De => CsiModel::De(self.de.as_ref().expect("DE statistics built")),
        }
    }

    fn cached_psi(&self, protocol: Protocol, v: &IrsConfig) -> f64 {
        match self.psi.iter().find(|(p, _)| *p == protocol) {
            Some((_, psi)) => *psi,
            None => analytic_psi(self.csi_model(protocol), v, self.protocol_config(protocol)),
        }
    }

    fn protocol_config(&self, protocol: Protocol) -> &SystemConfig {
        &self
            .protocol_configs
            .iter()
            .find(|(p, _)| *p == protocol)
            .expect("protocol configured")
            .1
    }
}

fn resolve_gains(spec: &ExperimentSpec) -> Result<LinkGains> {
    let raw = match &spec.links {
        LinkModel::Geometric { geometry, pathloss } => compute_link_gains(geometry, pathloss)?,
        LinkModel::Explicit { gains } => gains.clone(),
    };
    raw.validate()?;
    Ok(match spec.snr_reference {
        SnrReference::Absolute => raw,
        SnrReference::MeanDirectGain => {
            let reference = raw.mean_direct_gain();
            if !(reference > 0.0) {
                return Err(Error::InvalidConfig("mean direct gain is zero; cannot reference SNRs to it".into()));
            }
            raw.referenced_to(reference)
        }
    })
}

fn build_h1(spec: &ExperimentSpec, config: &SystemConfig, gains: &LinkGains) -> Result<CMat> {
    if config.n == 0 {
        return Ok(CMat::zeros(config.m, 0));
    }
    match spec.h1_model {
        H1Model::Los => {
            let geometry = match &spec.links {
                LinkModel::Geometric { geometry, .. } => geometry.clone(),
                LinkModel::Explicit { .. } => Geometry::reference(config.k),
            };
            generate_h1_los(config.m, config.n, gains.beta1, &geometry)
        }
        H1Model::Unitary { seed } => generate_h1_unitary(config.m, config.n, gains.beta1, seed),
    }
}

/// Protocols whose statistics are needed, including ON/OFF when the phase
/// policy optimises its deterministic equivalent.
fn needs_onoff(spec: &ExperimentSpec) -> bool {
    spec.protocols.contains(&Protocol::OnOff)
        || matches!(spec.phase_policy, PhasePolicy::OptimizedDet | PhasePolicy::GreedyDiscrete { .. })
}

fn resolve_phases(spec: &ExperimentSpec, ctx: &PointContext, grid: usize) -> Result<(Option<IrsConfig>, Option<u32>)> {
    let alpha = &ctx.config.alpha;
    Ok(match &spec.phase_policy {
        PhasePolicy::Fixed { theta } => (Some(IrsConfig::from_phases(alpha, theta)), None),
        PhasePolicy::RandomDiscrete { bits, per_trial } => {
            if *per_trial {
                (None, Some(*bits))
            } else {
                let mut rng = Stream::new(spec.seed).path(&[grid as u64, tag::PHASES]).rng();
                (Some(IrsConfig::random_discrete(alpha, *bits, &mut rng)), None)
            }
        }
        PhasePolicy::OptimizedDet => {
            let stats = ctx.onoff.as_ref().expect("ON/OFF statistics built");
            let cfg = ctx.protocol_config(Protocol::OnOff);
            (Some(optimize_phases(stats, cfg, &spec.optimizer)?.v), None)
        }
        PhasePolicy::GreedyDiscrete { bits } => {
            let stats = ctx.onoff.as_ref().expect("ON/OFF statistics built");
            let cfg = ctx.protocol_config(Protocol::OnOff);
            let found = discrete_phase_search(
                |v| det_sinr_onoff(stats, v, cfg).sum_rate,
                alpha,
                *bits,
                SearchMode::Greedy {
                    max_passes: spec.greedy_passes,
                },
            )?;
            (Some(found.v), None)
        }
    })
}

/// Build the per-grid-point context (statistics, H1, resolved phases).
pub fn point_context(spec: &ExperimentSpec, grid: usize) -> Result<PointContext> {
    let config = spec.point_config(grid)?;
    config.validate()?;
    let gains = resolve_gains(spec)?;
    let h1 = Arc::new(build_h1(spec, &config, &gains)?);
    let mut protocols = spec.protocols.clone();
    if needs_onoff(spec) && !protocols.contains(&Protocol::OnOff) {
        protocols.push(Protocol::OnOff);
    }
    let protocol_configs: Vec<(Protocol, SystemConfig)> = protocols
        .iter()
        .map(|&p| {
            let rho_tr = spec.training.for_protocol(p, config.n, config.tau_c);
            (p, config.clone().with_rho_tr(rho_tr))
        })
        .collect();
    let cfg_of = |p: Protocol| protocol_configs.iter().find(|(q, _)| *q == p).map(|(_, c)| c);
    let onoff = match cfg_of(Protocol::OnOff) {
        Some(c) => Some(onoff_statistics(c, &gains, h1.clone())?),
        None => None,
    };
    let de = match cfg_of(Protocol::De) {
        Some(c) => Some(de_statistics(c, &gains, &h1)?),
        None => None,
    };
    let mut ctx = PointContext {
        x: spec.sweep.values[grid],
        config,
        gains,
        h1,
        protocol_configs,
        onoff,
        de,
        v: None,
        random_bits: None,
        psi: Vec::new(),
    };
    let (v, bits) = resolve_phases(spec, &ctx, grid)?;
    ctx.v = v;
    ctx.random_bits = bits;
    ctx.psi = ctx
        .protocol_configs
        .iter()
        .filter(|(p, _)| ctx.v.is_some() || *p != Protocol::OnOff)
        .map(|(p, cfg)| {
            // only the amplitudes matter when the phases are not fixed
            let v = ctx.v.clone().unwrap_or_else(|| IrsConfig::zero_phase(&ctx.config.alpha));
            (*p, analytic_psi(ctx.csi_model(*p), &v, cfg))
        })
        .collect();
    Ok(ctx)
}

/// Per-user SINR of every requested protocol in one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome {
    pub sinr: Vec<(Protocol, Vec<f64>)>,
}

/// One independent realisation at a grid point.
pub fn run_trial(ctx: &PointContext, protocols: &[Protocol], stream: Stream) -> TrialOutcome {
    let ch = sample_user_channels(stream, &ctx.gains, ctx.h1.clone());
    let v = match (&ctx.v, ctx.random_bits) {
        (Some(v), _) => v.clone(),
        (None, Some(bits)) => {
            let mut rng = stream.child(tag::PHASES).rng();
            IrsConfig::random_discrete(&ctx.config.alpha, bits, &mut rng)
        }
        (None, None) => IrsConfig::zero_phase(&ctx.config.alpha),
    };
    let k_users = ctx.config.k;
    let channels: Vec<CVec> = (0..k_users).map(|k| effective_channel(&ch, &v, k)).collect();
    let sinr = protocols
        .iter()
        .map(|&p| {
            let cfg = ctx.protocol_config(p);
            let (estimates, psi) = match p {
                Protocol::Perfect => (channels.clone(), ctx.cached_psi(p, &v)),
                Protocol::OnOff => {
                    let stats = ctx.onoff.as_ref().expect("ON/OFF statistics built");
                    let est = onoff_estimate(&onoff_training(&ch, stats, stream), stats);
                    let h: Vec<CVec> = (0..k_users).map(|k| est.aggregate(k, &v)).collect();
                    (h, ctx.cached_psi(p, &v))
                }
                Protocol::De => {
                    let stats = ctx.de.as_ref().expect("DE statistics built");
                    let y = de_training(&ch, &v, cfg.rho_tr, stream);
                    let h: Vec<CVec> = (0..k_users).map(|k| de_estimate(&y[k], stats, k)).collect();
                    (h, ctx.cached_psi(p, &v))
                }
            };
            (p, sinr_from_channels(&channels, &estimates, psi, cfg))
        })
        .collect();
    TrialOutcome { sinr }
}

/// Mean, standard error and sample count of one quantity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
    pub trials: usize,
}

impl Estimate {
    /// Compensated mean and standard error sample_std / sqrt(n) of `xs` in order.
    pub fn from_samples(xs: &[f64]) -> Estimate {
        let n = xs.len();
        if n == 0 {
            return Estimate {
                mean: f64::NAN,
                stderr: f64::NAN,
                trials: 0,
            };
        }
        let mean = xs.iter().copied().collect::<CompensatedSum>().value() / n as f64;
        let stderr = if n > 1 {
            let ss = xs.iter().map(|x| (x - mean) * (x - mean)).collect::<CompensatedSum>().value();
            (ss / (n - 1) as f64).sqrt() / (n as f64).sqrt()
        } else {
            0.0
        };
        Estimate { mean, stderr, trials: n }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McPoint {
    pub x: f64,
    pub metrics: Vec<(Metric, Estimate)>,
    pub per_user_sinr: Vec<Estimate>,
}

impl McPoint {
    pub fn metric(&self, m: Metric) -> Estimate {
        if m == Metric::MeanSinrDb {
            let lin = self.metric(Metric::MeanSinr);
            return Estimate {
                mean: crate::model::linear_to_db(lin.mean),
                // first-order propagation through 10 log10
                stderr: 10.0 / std::f64::consts::LN_10 * lin.stderr / lin.mean,
                trials: lin.trials,
            };
        }
        self.metrics.iter().find(|(k, _)| *k == m).expect("all metrics recorded").1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McCurve {
    pub protocol: Protocol,
    pub points: Vec<McPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloResult {
    pub scenario_id: String,
    pub x_name: String,
    pub seed: u64,
    pub policy: String,
    pub curves: Vec<McCurve>,
    /// Phases shared by all trials of each grid point, when they are fixed.
    pub phases: Vec<Option<Vec<f64>>>,
}

impl MonteCarloResult {
    pub fn curve(&self, protocol: Protocol) -> Option<&McCurve> {
        self.curves.iter().find(|c| c.protocol == protocol)
    }
}

fn check_budget(spec: &ExperimentSpec, ctx: &PointContext) -> Result<()> {
    let work = (ctx.config.m as u64)
        .saturating_mul(ctx.config.n.max(1) as u64)
        .saturating_mul(spec.trials as u64);
    if work > spec.work_budget {
        return Err(Error::ResourceLimit(format!(
            "M*N*trials = {work} exceeds the budget {} at {} = {}",
            spec.work_budget,
            spec.sweep.param.name(),
            ctx.x
        )));
    }
    Ok(())
}

fn trial_stream(seed: u64, grid: usize, trial: usize) -> Stream {
    Stream::new(seed).path(&[grid as u64, trial as u64])
}

/// Run every trial of grid point `grid`, returning outcomes in trial order.
pub fn simulate_point(spec: &ExperimentSpec, grid: usize) -> Result<(PointContext, Vec<TrialOutcome>)> {
    let ctx = point_context(spec, grid)?;
    check_budget(spec, &ctx)?;
    let outcomes: Vec<TrialOutcome> = (0..spec.trials)
        .into_par_iter()
        .map(|t| run_trial(&ctx, &spec.protocols, trial_stream(spec.seed, grid, t)))
        .collect();
    Ok((ctx, outcomes))
}

fn per_trial_metrics(sinr: &[f64], cfg: &SystemConfig, protocol: Protocol) -> [f64; 4] {
    let r = rates(sinr, cfg, protocol);
    let k = sinr.len().max(1) as f64;
    [
        sinr.iter().sum::<f64>() / k,
        r.sum_rate / k,
        r.sum_rate,
        r.net_sum_rate,
    ]
}

fn summarise(ctx: &PointContext, outcomes: &[TrialOutcome], protocol: Protocol) -> McPoint {
    let cfg = ctx.protocol_config(protocol);
    let idx = outcomes
        .first()
        .and_then(|o| o.sinr.iter().position(|(p, _)| *p == protocol))
        .unwrap_or(0);
    let mut columns: [Vec<f64>; 4] = Default::default();
    let k_users = ctx.config.k;
    let mut users: Vec<Vec<f64>> = vec![Vec::with_capacity(outcomes.len()); k_users];
    for o in outcomes {
        let s = &o.sinr[idx].1;
        for (col, val) in columns.iter_mut().zip(per_trial_metrics(s, cfg, protocol)) {
            col.push(val);
        }
        for (u, g) in users.iter_mut().zip(s) {
            u.push(*g);
        }
    }
    McPoint {
        x: ctx.x,
        metrics: Metric::ALL
            .iter()
            .zip(columns.iter())
            .map(|(m, c)| (*m, Estimate::from_samples(c)))
            .collect(),
        per_user_sinr: users.iter().map(|u| Estimate::from_samples(u)).collect(),
    }
}

pub fn run_experiment(spec: &ExperimentSpec) -> Result<MonteCarloResult> {
    spec.validate()?;
    let mut curves: Vec<McCurve> = spec
        .protocols
        .iter()
        .map(|&p| McCurve {
            protocol: p,
            points: Vec::with_capacity(spec.sweep.values.len()),
        })
        .collect();
    let mut phases = Vec::with_capacity(spec.sweep.values.len());
    for grid in 0..spec.sweep.values.len() {
        let (ctx, outcomes) = simulate_point(spec, grid)?;
        for curve in curves.iter_mut() {
            curve.points.push(summarise(&ctx, &outcomes, curve.protocol));
        }
        phases.push(ctx.v.as_ref().map(|v| v.theta()));
    }
    Ok(MonteCarloResult {
        scenario_id: spec.scenario_id.clone(),
        x_name: spec.sweep.param.name().to_string(),
        seed: spec.seed,
        policy: spec.phase_policy.label().to_string(),
        curves,
        phases,
    })
}

/// [`run_experiment`] on a dedicated pool of `threads` workers.
pub fn run_experiment_with_threads(spec: &ExperimentSpec, threads: Option<usize>) -> Result<MonteCarloResult> {
    with_threads(threads, || run_experiment(spec))
}

/// Run `f` on a dedicated pool of `threads` workers (the global pool if `None`).
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match threads {
        None => f(),
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t.max(1))
                .build()
                .map_err(|e| Error::ResourceLimit(format!("cannot start {t} worker threads: {e}")))?;
            pool.install(f)
        }
    }
}

/// Algorithm-1 phases for the ON/OFF deterministic sum rate at grid point `grid`.
pub fn optimize_at(spec: &ExperimentSpec, grid: usize) -> Result<(PointContext, OptimizationResult)> {
    let mut s = spec.clone();
    if !s.protocols.contains(&Protocol::OnOff) {
        s.protocols.push(Protocol::OnOff);
    }
    // keep point_context from solving the phase problem itself
    s.phase_policy = PhasePolicy::RandomDiscrete { bits: 1, per_trial: true };
    let ctx = point_context(&s, grid)?;
    let stats = ctx.onoff.as_ref().expect("ON/OFF statistics built");
    let result = optimize_phases(stats, ctx.protocol_config(Protocol::OnOff), &spec.optimizer)?;
    Ok((ctx, result))
}

/// Deterministic equivalent of `protocol` at a grid point.
pub fn det_equivalent_at(ctx: &PointContext, protocol: Protocol) -> Result<DetEquivResult> {
    let cfg = ctx
        .protocol_configs
        .iter()
        .find(|(p, _)| *p == protocol)
        .map(|(_, c)| c.clone())
        .unwrap_or_else(|| ctx.config.clone());
    let v = ctx
        .v
        .clone()
        .ok_or_else(|| Error::Precondition("deterministic equivalent needs phases fixed per grid point".into()))?;
    Ok(match protocol {
        Protocol::Perfect => det_sinr_perfect(&ctx.gains, &ctx.h1, &cfg),
        Protocol::OnOff => match &ctx.onoff {
            Some(s) => det_sinr_onoff(s, &v, &cfg),
            None => det_sinr_onoff(&onoff_statistics(&cfg, &ctx.gains, ctx.h1.clone())?, &v, &cfg),
        },
        Protocol::De => match &ctx.de {
            Some(s) => det_sinr_de(s, &cfg),
            None => det_sinr_de(&de_statistics(&cfg, &ctx.gains, &ctx.h1)?, &cfg),
        },
    })
}

/// (x, equivalent, net sum rate) per grid point.
pub type DetCurve = Vec<(f64, DetEquivResult, f64)>;

/// Deterministic equivalents over the sweep, one curve per protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetEquivSweep {
    pub scenario_id: String,
    pub x_name: String,
    pub curves: Vec<(Protocol, DetCurve)>,
}

/// Per-point deterministic equivalents; the third tuple entry is the net sum rate.
pub fn det_equivalent_sweep(spec: &ExperimentSpec) -> Result<DetEquivSweep> {
    spec.validate()?;
    let spec = frozen(spec);
    let mut curves: Vec<(Protocol, DetCurve)> =
        spec.protocols.iter().map(|&p| (p, Vec::new())).collect();
    for grid in 0..spec.sweep.values.len() {
        let ctx = point_context(&spec, grid)?;
        for (p, pts) in curves.iter_mut() {
            let r = det_equivalent_at(&ctx, *p)?;
            let cfg = ctx.protocol_config(*p);
            let net = r.sum_rate * net_factor(*p, cfg);
            pts.push((ctx.x, r, net));
        }
    }
    Ok(DetEquivSweep {
        scenario_id: spec.scenario_id.clone(),
        x_name: spec.sweep.param.name().to_string(),
        curves,
    })
}

/// Per-trial random phases become one draw per grid point, so that a
/// deterministic equivalent exists for them.
fn frozen(spec: &ExperimentSpec) -> ExperimentSpec {
    let mut s = spec.clone();
    if let PhasePolicy::RandomDiscrete { bits, per_trial: true } = s.phase_policy {
        log::info!("random phases frozen per grid point for the deterministic comparison");
        s.phase_policy = PhasePolicy::RandomDiscrete { bits, per_trial: false };
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub protocol: Protocol,
    pub x: f64,
    pub det_gamma: Vec<f64>,
    pub mc_gamma: Vec<Estimate>,
    /// |gamma_MC - gamma_det| / gamma_det per user (NaN when flagged).
    pub user_rel_dev: Vec<f64>,
    /// User-averaged SINR, Monte-Carlo.
    pub mc_mean: Estimate,
    pub det_mean: f64,
    /// |mc_mean - det_mean| / det_mean.
    pub rel_dev: f64,
    /// Standard error of `rel_dev`.
    pub rel_dev_stderr: f64,
    /// Deterministic SINR too small for a meaningful ratio.
    pub flagged: bool,
}

/// Threshold below which relative deviations are not reported.
pub const DEGENERATE_SINR: f64 = 1e-6;

/// Monte-Carlo versus deterministic-equivalent SINR at every grid point.
pub fn compare_mc_vs_detequiv(spec: &ExperimentSpec) -> Result<Vec<ConvergenceRow>> {
    spec.validate()?;
    let spec = frozen(spec);
    let mut rows = Vec::new();
    for grid in 0..spec.sweep.values.len() {
        let (ctx, outcomes) = simulate_point(&spec, grid)?;
        for &p in &spec.protocols {
            let det = det_equivalent_at(&ctx, p)?;
            let point = summarise(&ctx, &outcomes, p);
            let mc_mean = point.metric(Metric::MeanSinr);
            let det_mean = det.mean_gamma();
            let flagged = det_mean < DEGENERATE_SINR;
            let user_rel_dev = det
                .gamma
                .iter()
                .zip(&point.per_user_sinr)
                .map(|(d, m)| if *d < DEGENERATE_SINR { f64::NAN } else { (m.mean - d).abs() / d })
                .collect();
            let (rel_dev, rel_dev_stderr) = if flagged {
                (f64::NAN, f64::NAN)
            } else {
                ((mc_mean.mean - det_mean).abs() / det_mean, mc_mean.stderr / det_mean)
            };
            rows.push(ConvergenceRow {
                protocol: p,
                x: ctx.x,
                det_gamma: det.gamma.clone(),
                mc_gamma: point.per_user_sinr.clone(),
                user_rel_dev,
                mc_mean,
                det_mean,
                rel_dev,
                rel_dev_stderr,
                flagged,
            });
        }
    }
    Ok(rows)
}

/// Paired difference a - b of the user-averaged SINR at every grid point.
pub fn paired_sinr_difference(spec: &ExperimentSpec, a: Protocol, b: Protocol) -> Result<Vec<(f64, Estimate)>> {
    spec.validate()?;
    if !spec.protocols.contains(&a) || !spec.protocols.contains(&b) {
        return Err(Error::Precondition("both protocols must be part of the experiment".into()));
    }
    let mut out = Vec::new();
    for grid in 0..spec.sweep.values.len() {
        let (ctx, outcomes) = simulate_point(spec, grid)?;
        let ia = spec.protocols.iter().position(|p| *p == a).unwrap();
        let ib = spec.protocols.iter().position(|p| *p == b).unwrap();
        let diffs: Vec<f64> = outcomes
            .iter()
            .map(|o| {
                let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len().max(1) as f64;
                mean(&o.sinr[ia].1) - mean(&o.sinr[ib].1)
            })
            .collect();
        out.push((ctx.x, Estimate::from_samples(&diffs)));
    }
    Ok(out)
}

/// Random continuous phases keyed by `seed`, handy for paired studies.
pub fn random_phases(alpha: &[f64], seed: u64) -> IrsConfig {
    let mut rng = Stream::new(seed).child(tag::PHASES).rng();
    let theta: Vec<f64> = alpha.iter().map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
    IrsConfig::from_phases(alpha, &theta)
}

/// Discrete configuration helper re-exported for presets.
pub fn grid_phases(alpha: &[f64], bits: u32, levels: &[u32]) -> IrsConfig {
    discrete_config(alpha, bits, levels)
}

/// Simple spec with geometric links at the reference geometry; the starting
/// point for presets and tests.
pub fn reference_spec(m: usize, n: usize, k: usize) -> ExperimentSpec {
    ExperimentSpec {
        scenario_id: format!("M{m}_N{n}_K{k}"),
        config: SystemConfig::new(m, n, k),
        links: LinkModel::Geometric {
            geometry: Geometry::reference(k),
            pathloss: PathLossModel::reference(),
        },
        h1_model: H1Model::Los,
        snr_reference: SnrReference::MeanDirectGain,
        training: TrainingSnr::Fixed {
            rho_tr: db_to_linear(8.0),
        },
        protocols: Protocol::ALL.to_vec(),
        phase_policy: PhasePolicy::RandomDiscrete {
            bits: 2,
            per_trial: false,
        },
        trials: 1000,
        seed: 42,
        sweep: Sweep {
            param: SweepParam::RhoDb,
            values: vec![0.0],
        },
        irs: true,
        optimizer: OptimizerSettings::default(),
        greedy_passes: 4,
        work_budget: DEFAULT_WORK_BUDGET,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn estimate_statistics() {
        let e = Estimate::from_samples(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(e.mean, 2.5);
        assert!((e.stderr - (5.0f64 / 3.0).sqrt() / 2.0).abs() < 1e-15);
        assert_eq!(Estimate::from_samples(&[7.0]).stderr, 0.0);
    }

    #[test]
    fn repeat_runs_are_identical() {
        let mut spec = reference_spec(4, 4, 2);
        spec.trials = 3;
        let a = run_experiment(&spec).unwrap();
        let b = run_experiment(&spec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let mut spec = reference_spec(4, 6, 3);
        spec.trials = 40;
        spec.phase_policy = PhasePolicy::RandomDiscrete { bits: 2, per_trial: true };
        let one = run_experiment_with_threads(&spec, Some(1)).unwrap();
        let four = run_experiment_with_threads(&spec, Some(4)).unwrap();
        assert_eq!(one, four);
    }

    #[test]
    fn budget_guard() {
        let mut spec = reference_spec(8, 8, 2);
        spec.work_budget = 100;
        assert!(matches!(run_experiment(&spec), Err(Error::ResourceLimit(_))));
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut spec = reference_spec(4, 4, 2);
        spec.trials = 0;
        assert!(spec.validate().is_err());
        let mut spec = reference_spec(4, 4, 2);
        spec.sweep.values.clear();
        assert!(spec.validate().is_err());
        let mut spec = reference_spec(4, 4, 2);
        spec.config.k = 3;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn energy_training_model_splits_window() {
        let t = TrainingSnr::Energy {
            pilot_power: 1.0,
            noise_energy: 1e-19,
        };
        let tau_c = 0.2e-3;
        let de = t.for_protocol(Protocol::De, 15, tau_c);
        let onoff = t.for_protocol(Protocol::OnOff, 15, tau_c);
        assert!((de - 2e15).abs() < 1.0);
        assert!((onoff * 16.0 - de).abs() < 1e-3 * de);
        assert_eq!(t.for_protocol(Protocol::Perfect, 15, tau_c), f64::INFINITY);
    }

    #[test]
    fn n_sweep_resizes_alpha() {
        let mut spec = reference_spec(4, 4, 2);
        spec.sweep = Sweep {
            param: SweepParam::N,
            values: vec![0.0, 3.0],
        };
        spec.trials = 2;
        let r = run_experiment(&spec).unwrap();
        assert_eq!(r.curves[0].points.len(), 2);
    }
}
