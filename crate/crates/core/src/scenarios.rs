//! Experiment presets for the three reference figures.

use crate::asymptotics::{det_sinr_perfect, special_case_sinr};
use crate::error::{Error, Result};
use crate::linalg::CMat;
use crate::model::{compute_link_gains, db_to_linear, linear_to_db, Geometry, LinkGains, PathLossModel};
use crate::montecarlo::{
    det_equivalent_sweep, reference_spec, run_experiment, ExperimentSpec, H1Model, LinkModel, Metric, PhasePolicy,
    SnrReference, Sweep, SweepParam, TrainingSnr,
};
use crate::report::{ResultRow, ResultTable};
use crate::transceiver::Protocol;

pub const DEFAULT_TRIALS: usize = 10_000;
pub const DEFAULT_SEED: u64 = 42;

/// Sum rate (bits/s/Hz) of the 40-antenna system without IRS under perfect
/// CSI at which the rate-versus-N comparison is operated.
pub const FIG3_BASELINE_SUM_RATE: f64 = 7.91;
pub const FIG3_N_GRID: [f64; 6] = [16.0, 32.0, 64.0, 128.0, 256.0, 400.0];
pub const FIG3_NOISE_ENERGY: f64 = 1e-19;
pub const FIG3_PILOT_POWER: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FigureOptions {
    pub trials: usize,
    pub seed: u64,
}

impl Default for FigureOptions {
    fn default() -> Self {
        FigureOptions {
            trials: DEFAULT_TRIALS,
            seed: DEFAULT_SEED,
        }
    }
}

/// Inclusive grid start, start + step, ..., stop.
pub fn linear_grid(start: f64, stop: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || stop < start || !start.is_finite() || !stop.is_finite() {
        return Err(Error::InvalidConfig(format!("inconsistent grid {start}:{step}:{stop}")));
    }
    let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|i| start + step * i as f64).collect())
}

pub fn fig2_rho_grid() -> Vec<f64> {
    linear_grid(-30.0, 20.0, 5.0).expect("static grid")
}

/// M = N = K = 48, rho_tr = 8 dB, SNRs quoted against the mean direct gain.
pub fn fig2_spec(policy: PhasePolicy, options: FigureOptions) -> ExperimentSpec {
    let mut spec = reference_spec(48, 48, 48);
    spec.scenario_id = "fig2".into();
    spec.phase_policy = policy;
    spec.trials = options.trials;
    spec.seed = options.seed;
    spec.sweep = Sweep {
        param: SweepParam::RhoDb,
        values: fig2_rho_grid(),
    };
    spec
}

pub fn fig2(options: FigureOptions) -> Result<ResultTable> {
    let metrics = [Metric::MeanSinr];
    let mut table = ResultTable::default();
    let random = run_experiment(&fig2_spec(PhasePolicy::RandomDiscrete { bits: 2, per_trial: true }, options))?;
    table.push_mc(&random, |p| format!("{p}_mc_random"), &metrics);
    let greedy = run_experiment(&fig2_spec(PhasePolicy::GreedyDiscrete { bits: 2 }, options))?;
    table.push_mc(&greedy, |p| format!("{p}_mc_greedy"), &metrics);
    let det = det_equivalent_sweep(&fig2_spec(PhasePolicy::OptimizedDet, options))?;
    table.push_det(&det, |p| format!("{p}_det"), &metrics);
    table.sort();
    Ok(table)
}

fn fig3_geometry() -> (Geometry, PathLossModel) {
    (Geometry::reference(8), PathLossModel::reference())
}

/// P_max placing the perfect-CSI sum rate of `spec` (taken without IRS) at `target`.
pub fn calibrate_p_max(spec: &ExperimentSpec, target: f64) -> Result<f64> {
    let gains = match &spec.links {
        LinkModel::Geometric { geometry, pathloss } => compute_link_gains(geometry, pathloss)?,
        LinkModel::Explicit { gains } => gains.clone(),
    };
    let mut config = spec.config.clone();
    config.n = 0;
    config.alpha.clear();
    let h1 = CMat::zeros(config.m, 0);
    let rate = |log_p: f64| {
        let mut c = config.clone();
        c.p_max = 10f64.powf(log_p);
        det_sinr_perfect(&gains, &h1, &c).sum_rate
    };
    let (mut lo, mut hi) = (-30.0, 10.0);
    if !(rate(lo) < target && rate(hi) > target) {
        return Err(Error::InvalidConfig(format!("sum rate {target} is not reachable by any transmit power")));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if rate(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(10f64.powf(0.5 * (lo + hi)))
}

/// The three systems of the rate-versus-N comparison: (curve prefix, spec).
pub fn fig3_specs(options: FigureOptions) -> Result<Vec<(String, ExperimentSpec)>> {
    let (geometry, pathloss) = fig3_geometry();
    let make = |m: usize, irs: bool| {
        let mut spec = reference_spec(m, 16, 8);
        spec.scenario_id = "fig3".into();
        spec.links = LinkModel::Geometric {
            geometry: geometry.clone(),
            pathloss,
        };
        spec.snr_reference = SnrReference::Absolute;
        spec.config.sigma2 = FIG3_NOISE_ENERGY;
        spec.config.tau = 20e-3;
        spec.config.tau_c = 0.01 * spec.config.tau;
        spec.training = TrainingSnr::Energy {
            pilot_power: FIG3_PILOT_POWER,
            noise_energy: FIG3_NOISE_ENERGY,
        };
        spec.phase_policy = PhasePolicy::RandomDiscrete { bits: 2, per_trial: true };
        spec.sweep = Sweep {
            param: SweepParam::N,
            values: FIG3_N_GRID.to_vec(),
        };
        spec.irs = irs;
        spec.trials = options.trials;
        spec.seed = options.seed;
        spec
    };
    let baseline = make(40, false);
    let p_max = calibrate_p_max(&baseline, FIG3_BASELINE_SUM_RATE)?;
    let mut out = vec![
        ("M40_noirs".to_string(), baseline),
        ("M40_irs".to_string(), make(40, true)),
        ("M32_irs".to_string(), make(32, true)),
    ];
    for (_, s) in out.iter_mut() {
        s.config.p_max = p_max;
    }
    Ok(out)
}

pub fn fig3(options: FigureOptions) -> Result<ResultTable> {
    let metrics = [Metric::NetSumRate, Metric::SumRate];
    let mut table = ResultTable::default();
    for (prefix, spec) in fig3_specs(options)? {
        let mc = run_experiment(&spec)?;
        table.push_mc(&mc, |p| format!("{prefix}_{p}_mc"), &metrics);
        let det = det_equivalent_sweep(&spec)?;
        table.push_det(&det, |p| format!("{prefix}_{p}_det"), &metrics);
    }
    table.sort();
    Ok(table)
}

pub const FIG4_M: usize = 32;
pub const FIG4_K: usize = 12;
pub const FIG4_C: f64 = 1.0;
pub const FIG4_N: [usize; 2] = [32, 64];

pub fn fig4_rho_grid() -> Vec<f64> {
    linear_grid(-20.0, 20.0, 5.0).expect("static grid")
}

/// Unit direct gains with b1 b2 = c bd, so rho is the direct-link SNR.
pub fn fig4_gains() -> LinkGains {
    LinkGains {
        beta1: 1.0,
        beta2: vec![FIG4_C; FIG4_K],
        betad: vec![1.0; FIG4_K],
    }
}

/// Perfect-CSI Monte-Carlo spec for N elements (`None` for no IRS).
pub fn fig4_spec(n: Option<usize>, options: FigureOptions) -> ExperimentSpec {
    let mut spec = reference_spec(FIG4_M, n.unwrap_or(0), FIG4_K);
    spec.scenario_id = "fig4".into();
    spec.links = LinkModel::Explicit { gains: fig4_gains() };
    spec.h1_model = H1Model::Unitary { seed: options.seed };
    spec.snr_reference = SnrReference::Absolute;
    spec.protocols = vec![Protocol::Perfect];
    spec.phase_policy = PhasePolicy::RandomDiscrete { bits: 2, per_trial: true };
    spec.irs = n.is_some();
    spec.trials = options.trials;
    spec.seed = options.seed;
    spec.sweep = Sweep {
        param: SweepParam::RhoDb,
        values: fig4_rho_grid(),
    };
    spec
}

pub fn fig4(options: FigureOptions) -> Result<ResultTable> {
    let metrics = [Metric::MeanSinrDb, Metric::MeanSinr];
    let mut table = ResultTable::default();
    let systems: Vec<(String, Option<usize>)> = FIG4_N
        .iter()
        .map(|&n| (format!("N{n}"), Some(n)))
        .chain(std::iter::once(("conv".to_string(), None)))
        .collect();
    let betad = fig4_gains().betad;
    for (tag, n) in systems {
        let mc = run_experiment(&fig4_spec(n, options))?;
        table.push_mc(&mc, |_| format!("mc_{tag}"), &metrics);
        for &rho_db in &fig4_rho_grid() {
            let s = special_case_sinr(FIG4_M, n.unwrap_or(0), FIG4_C, db_to_linear(rho_db), &betad)?;
            let mean = s.gamma.iter().sum::<f64>() / s.gamma.len() as f64;
            for (metric, value) in [(Metric::MeanSinrDb, linear_to_db(mean)), (Metric::MeanSinr, mean)] {
                table.rows.push(ResultRow {
                    scenario_id: "fig4".into(),
                    curve: format!("cor3_{tag}"),
                    x_name: SweepParam::RhoDb.name().into(),
                    x_value: rho_db,
                    metric: metric.name().into(),
                    value,
                    stderr: 0.0,
                    trials: 0,
                });
            }
        }
    }
    table.sort();
    Ok(table)
}
