//! JSON scenario files: parsing, validation, defaulting and the resolved echo.
//!
//! Every physical quantity carries its unit in the key name. Keys written
//! without a unit, or with an unsupported one, are reported with the accepted
//! spelling.

use std::path::{Path, PathBuf};

use irsim::model::{db_to_linear, Geometry, LinkGains, PathLossModel, SystemConfig};
use irsim::montecarlo::{
    ExperimentSpec, H1Model, LinkModel, PhasePolicy, SnrReference, Sweep, SweepParam, TrainingSnr, DEFAULT_WORK_BUDGET,
};
use irsim::phase_opt::{OptimizerSettings, PhaseInit};
use irsim::scenarios::{linear_grid, DEFAULT_SEED, DEFAULT_TRIALS};
use irsim::transceiver::Protocol;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed JSON at line {line}, column {column}: {msg}")]
    Syntax {
        path: PathBuf,
        line: usize,
        column: usize,
        msg: String,
    },
    #[error("unknown key '{key}'")]
    UnknownKey { key: String },
    #[error("missing required key '{key}'")]
    MissingKey { key: String },
    #[error("key '{key}' needs an explicit unit; write '{suggestion}'")]
    UnitSuffix { key: String, suggestion: String },
    #[error("inconsistent grid at '{key}': {reason}")]
    InconsistentGrid { key: String, reason: String },
    #[error("conflicting keys: {keys} (give only one)")]
    Conflict { keys: String },
    #[error("invalid value at '{key}': {msg}")]
    Invalid { key: String, msg: String },
    #[error(transparent)]
    Core(#[from] irsim::Error),
}

type Result<T> = std::result::Result<T, ScenarioError>;

/// A list of values or an inclusive {start, stop, step} range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Grid {
    List(Vec<f64>),
    Range { start: f64, stop: f64, step: f64 },
}

impl Grid {
    fn resolve(&self, key: &str) -> Result<Vec<f64>> {
        let bad = |reason: String| ScenarioError::InconsistentGrid {
            key: key.to_string(),
            reason,
        };
        let values = match self {
            Grid::List(v) => v.clone(),
            Grid::Range { start, stop, step } => {
                linear_grid(*start, *stop, *step).map_err(|_| bad(format!("range {start}:{step}:{stop} is empty or has a non-positive step")))?
            }
        };
        if values.is_empty() {
            return Err(bad("no grid points".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(bad("grid values must be finite".into()));
        }
        if values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(bad("grid values must be strictly increasing".into()));
        }
        Ok(values)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Amplitudes {
    Uniform(f64),
    PerElement(Vec<f64>),
}

#[allow(non_snake_case)]
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RhoTrModel {
    pub p_c_W: f64,
    pub sigma2_J: f64,
}

#[allow(non_snake_case)]
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub M: usize,
    pub N: usize,
    pub K: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub P_max_W: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho_dB: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma2_W: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho_grid_dB: Option<Grid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho_tr_dB: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho_tr_lin: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho_tr_model: Option<RhoTrModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_c_frac: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_c_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<Amplitudes>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub powers: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bs_m: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub irs_m: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub irs_height_m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arc_radius_m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arc_deg: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub users_m: Option<Vec<[f64; 3]>>,
}

#[allow(non_snake_case)]
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathlossSection {
    /// Reference path loss at 1 m (gain = 10^(-C0/10)).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub C0_dB: Option<f64>,
    /// Reference gain at 1 m in dB (overrides the loss reading).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g0_dB: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g0_lin: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta_h1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta_h2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta_hd: Option<f64>,
}

/// Explicit linear large-scale gains, bypassing geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainsSection {
    pub beta1_lin: f64,
    pub beta2_lin: Vec<f64>,
    pub betad_lin: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct H1Section {
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProtocolField {
    One(String),
    Many(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhasePolicySection {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bits: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_trial: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_rad: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub param: String,
    pub values: Grid,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iters: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shrink: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub armijo: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_step: Option<f64>,
    /// Random continuous starting phases from this seed; zero phases if absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trials: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub work_budget: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub greedy_passes: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub system: SystemSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geometry: Option<GeometrySection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pathloss: Option<PathlossSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gains: Option<GainsSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h1: Option<H1Section>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snr_reference: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub protocol: Option<ProtocolField>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase_policy: Option<PhasePolicySection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub irs: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<OptimizerSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mc: Option<McSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputSection>,
}

/// Where and how results are written.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputSettings {
    pub dir: PathBuf,
    pub format: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedScenario {
    pub spec: ExperimentSpec,
    pub output: OutputSettings,
}

pub const DEFAULT_OUTPUT_DIR: &str = "results";

const UNIT_SUFFIXES: [&str; 20] = [
    "_dB", "_dBm", "_dBW", "_ms", "_us", "_ns", "_s", "_min", "_m", "_cm", "_km", "_W", "_mW", "_J", "_frac", "_pct",
    "_lin", "_deg", "_rad", "_Hz",
];

fn stem(key: &str) -> &str {
    UNIT_SUFFIXES
        .iter()
        .find_map(|s| key.strip_suffix(s))
        .unwrap_or(key)
}

/// Accepted keys of every object that takes unit-suffixed keys.
fn accepted_keys(path: &str) -> Option<&'static [&'static str]> {
    Some(match path {
        "system" => &[
            "M", "N", "K", "P_max_W", "rho_dB", "sigma2_W", "rho_grid_dB", "rho_tr_dB", "rho_tr_lin", "rho_tr_model",
            "tau_ms", "tau_s", "tau_c_frac", "tau_c_s", "alpha", "powers",
        ],
        "system.rho_tr_model" => &["p_c_W", "sigma2_J"],
        "geometry" => &["bs_m", "irs_m", "irs_height_m", "arc_radius_m", "arc_deg", "users_m"],
        "pathloss" => &["C0_dB", "g0_dB", "g0_lin", "eta_h1", "eta_h2", "eta_hd"],
        "gains" => &["beta1_lin", "beta2_lin", "betad_lin"],
        _ => return None,
    })
}

/// Keys that name a known quantity with a missing or unsupported unit.
fn check_units(value: &Value) -> Result<()> {
    let Value::Object(root) = value else {
        return Ok(());
    };
    for (section, body) in root {
        let mut stack = vec![(section.clone(), body)];
        while let Some((path, v)) = stack.pop() {
            let Value::Object(map) = v else { continue };
            if let Some(accepted) = accepted_keys(&path) {
                for key in map.keys() {
                    if accepted.contains(&key.as_str()) {
                        continue;
                    }
                    if let Some(good) = accepted.iter().find(|a| stem(a) == stem(key) && **a != stem(a)) {
                        return Err(ScenarioError::UnitSuffix {
                            key: format!("{path}.{key}"),
                            suggestion: format!("{path}.{good}"),
                        });
                    }
                }
            }
            for (k, child) in map {
                stack.push((format!("{path}.{k}"), child));
            }
        }
    }
    Ok(())
}

fn classify_serde(path: String, msg: String) -> ScenarioError {
    let quoted = msg.split('`').nth(1).map(str::to_string);
    let join = |field: &str| {
        if path.is_empty() || path == "." {
            field.to_string()
        } else {
            format!("{path}.{field}")
        }
    };
    if msg.starts_with("unknown field") {
        // the error path already ends at the offending key
        let key = if path.is_empty() || path == "." { quoted.unwrap_or_default() } else { path };
        ScenarioError::UnknownKey { key }
    } else if msg.starts_with("missing field") {
        ScenarioError::MissingKey {
            key: join(&quoted.unwrap_or_default()),
        }
    } else {
        ScenarioError::Invalid { key: path, msg }
    }
}

/// Parse a scenario document held in memory; `origin` labels diagnostics.
pub fn parse_str(text: &str, origin: &Path) -> Result<ScenarioFile> {
    let value: Value = serde_json::from_str(text).map_err(|e| ScenarioError::Syntax {
        path: origin.to_path_buf(),
        line: e.line(),
        column: e.column(),
        msg: e.to_string(),
    })?;
    check_units(&value)?;
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        classify_serde(path, e.into_inner().to_string())
    })
}

fn one_of<T: Copy>(pairs: &[(&str, Option<T>)]) -> Result<Option<T>> {
    let given: Vec<&(&str, Option<T>)> = pairs.iter().filter(|(_, v)| v.is_some()).collect();
    if given.len() > 1 {
        return Err(ScenarioError::Conflict {
            keys: given.iter().map(|(k, _)| *k).collect::<Vec<_>>().join(", "),
        });
    }
    Ok(given.first().and_then(|(_, v)| *v))
}

fn invalid(key: &str, msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid {
        key: key.to_string(),
        msg: msg.into(),
    }
}

fn parse_protocol(name: &str, key: &str) -> Result<Vec<Protocol>> {
    if name == "all" {
        return Ok(Protocol::ALL.to_vec());
    }
    name.parse::<Protocol>()
        .map(|p| vec![p])
        .map_err(|e| invalid(key, e.to_string()))
}

impl ScenarioFile {
    /// Apply defaults and cross-field checks, producing the experiment to run.
    pub fn resolve(&self) -> Result<ResolvedScenario> {
        let s = &self.system;
        let (m, n, k) = (s.M, s.N, s.K);
        let mut config = SystemConfig::new(m, n, k);
        if let Some(p) = s.P_max_W {
            config.p_max = p;
        }
        one_of(&[("system.rho_dB", s.rho_dB), ("system.sigma2_W", s.sigma2_W)])?;
        match (s.rho_dB, s.sigma2_W) {
            (Some(r), _) => config = config.with_rho_db(r),
            (_, Some(sigma2)) => config.sigma2 = sigma2,
            _ => config = config.with_rho_db(0.0),
        }

        match (s.tau_ms, s.tau_s) {
            (Some(_), Some(_)) => return Err(ScenarioError::Conflict { keys: "system.tau_ms, system.tau_s".into() }),
            (Some(ms), None) => config.tau = ms * 1e-3,
            (None, Some(sec)) => config.tau = sec,
            (None, None) => {}
        }
        one_of(&[("system.tau_c_frac", s.tau_c_frac), ("system.tau_c_s", s.tau_c_s)])?;
        config.tau_c = s.tau_c_s.unwrap_or_else(|| s.tau_c_frac.unwrap_or(0.01) * config.tau);

        let model_given = s.rho_tr_model.as_ref().map(|_| 0.0);
        one_of(&[
            ("system.rho_tr_dB", s.rho_tr_dB),
            ("system.rho_tr_lin", s.rho_tr_lin),
            ("system.rho_tr_model", model_given),
        ])?;
        let training = if let Some(model) = &s.rho_tr_model {
            if !(model.p_c_W > 0.0 && model.sigma2_J > 0.0) {
                return Err(invalid("system.rho_tr_model", "pilot power and noise energy must be positive"));
            }
            config.rho_tr = model.p_c_W * config.tau_c / model.sigma2_J;
            TrainingSnr::Energy {
                pilot_power: model.p_c_W,
                noise_energy: model.sigma2_J,
            }
        } else {
            if let Some(db) = s.rho_tr_dB {
                config = config.with_rho_tr_db(db);
            }
            if let Some(lin) = s.rho_tr_lin {
                config.rho_tr = lin;
            }
            TrainingSnr::Fixed { rho_tr: config.rho_tr }
        };

        match &s.alpha {
            None => {}
            Some(Amplitudes::Uniform(a)) => config.alpha = vec![*a; n],
            Some(Amplitudes::PerElement(v)) => {
                if v.len() != n {
                    return Err(invalid("system.alpha", format!("{} entries for N = {n}", v.len())));
                }
                config.alpha = v.clone();
            }
        }
        if let Some(p) = &s.powers {
            if p.len() != k {
                return Err(invalid("system.powers", format!("{} entries for K = {k}", p.len())));
            }
            config.powers = p.clone();
        }

        let links = match (&self.gains, &self.geometry) {
            (Some(_), Some(_)) => return Err(ScenarioError::Conflict { keys: "gains, geometry".into() }),
            (Some(_), None) if self.pathloss.is_some() => {
                return Err(ScenarioError::Conflict { keys: "gains, pathloss".into() })
            }
            (Some(g), None) => LinkModel::Explicit {
                gains: LinkGains {
                    beta1: g.beta1_lin,
                    beta2: g.beta2_lin.clone(),
                    betad: g.betad_lin.clone(),
                },
            },
            (None, geo) => LinkModel::Geometric {
                geometry: resolve_geometry(geo.as_ref(), k)?,
                pathloss: resolve_pathloss(self.pathloss.as_ref())?,
            },
        };

        let h1_model = match &self.h1 {
            None => H1Model::Los,
            Some(h) => match h.model.as_str() {
                "los" => {
                    if h.seed.is_some() {
                        return Err(invalid("h1.seed", "the line-of-sight channel is deterministic and takes no seed"));
                    }
                    H1Model::Los
                }
                "unitary" => H1Model::Unitary {
                    seed: h.seed.unwrap_or(DEFAULT_SEED),
                },
                other => return Err(invalid("h1.model", format!("'{other}' (expected los or unitary)"))),
            },
        };

        let snr_reference = match self.snr_reference.as_deref() {
            None => match links {
                LinkModel::Explicit { .. } => SnrReference::Absolute,
                LinkModel::Geometric { .. } => SnrReference::MeanDirectGain,
            },
            Some("absolute") => SnrReference::Absolute,
            Some("mean_direct_gain") => SnrReference::MeanDirectGain,
            Some(other) => {
                return Err(invalid("snr_reference", format!("'{other}' (expected absolute or mean_direct_gain)")))
            }
        };

        let protocols = match &self.protocol {
            None => Protocol::ALL.to_vec(),
            Some(ProtocolField::One(p)) => parse_protocol(p, "protocol")?,
            Some(ProtocolField::Many(list)) => {
                let mut out = Vec::new();
                for (i, p) in list.iter().enumerate() {
                    for q in parse_protocol(p, &format!("protocol[{i}]"))? {
                        if !out.contains(&q) {
                            out.push(q);
                        }
                    }
                }
                out
            }
        };

        let phase_policy = match &self.phase_policy {
            None => PhasePolicy::RandomDiscrete {
                bits: 2,
                per_trial: false,
            },
            Some(p) => resolve_policy(p)?,
        };

        let sweep = match (&self.sweep, &s.rho_grid_dB) {
            (Some(_), Some(_)) => return Err(ScenarioError::Conflict { keys: "sweep, system.rho_grid_dB".into() }),
            (None, Some(grid)) => {
                if s.rho_dB.is_some() || s.sigma2_W.is_some() {
                    return Err(ScenarioError::Conflict {
                        keys: "system.rho_grid_dB, system.rho_dB / system.sigma2_W".into(),
                    });
                }
                Sweep {
                    param: SweepParam::RhoDb,
                    values: grid.resolve("system.rho_grid_dB")?,
                }
            }
            (Some(sw), None) => {
                let param = match sw.param.as_str() {
                    "rho_dB" => SweepParam::RhoDb,
                    "rho_tr_dB" => SweepParam::RhoTrDb,
                    "N" => SweepParam::N,
                    "M" => SweepParam::M,
                    other => return Err(invalid("sweep.param", format!("'{other}' (expected rho_dB, rho_tr_dB, N or M)"))),
                };
                Sweep {
                    param,
                    values: sw.values.resolve("sweep.values")?,
                }
            }
            (None, None) => match (s.rho_dB, s.sigma2_W) {
                (None, Some(_)) => Sweep {
                    param: SweepParam::N,
                    values: vec![n as f64],
                },
                (r, _) => Sweep {
                    param: SweepParam::RhoDb,
                    values: vec![r.unwrap_or(0.0)],
                },
            },
        };

        let defaults = OptimizerSettings::default();
        let o = self.optimizer.clone().unwrap_or_default();
        let optimizer = OptimizerSettings {
            epsilon: o.epsilon.unwrap_or(defaults.epsilon),
            max_iters: o.max_iters.unwrap_or(defaults.max_iters),
            initial_step: o.initial_step.unwrap_or(defaults.initial_step),
            shrink: o.shrink.unwrap_or(defaults.shrink),
            armijo: o.armijo.unwrap_or(defaults.armijo),
            min_step: o.min_step.unwrap_or(defaults.min_step),
            init: match o.init_seed {
                Some(seed) => PhaseInit::Random { seed },
                None => PhaseInit::Zero,
            },
        };

        let mc = self.mc.clone().unwrap_or_default();
        let output = self.output.clone().unwrap_or_default();
        let format = output.format.unwrap_or_else(|| "csv".into());
        if format != "csv" {
            return Err(invalid("output.format", format!("'{format}' (only csv is supported)")));
        }

        let spec = ExperimentSpec {
            scenario_id: self.name.clone().unwrap_or_else(|| "scenario".into()),
            config,
            links,
            h1_model,
            snr_reference,
            training,
            protocols,
            phase_policy,
            trials: mc.trials.unwrap_or(DEFAULT_TRIALS),
            seed: mc.seed.unwrap_or(DEFAULT_SEED),
            sweep,
            irs: self.irs.unwrap_or(true),
            optimizer,
            greedy_passes: mc.greedy_passes.unwrap_or(4),
            work_budget: mc.work_budget.unwrap_or(DEFAULT_WORK_BUDGET),
        };
        if spec.scenario_id.contains(',') || spec.scenario_id.contains('\n') {
            return Err(invalid("name", "must not contain commas or line breaks"));
        }
        spec.validate()?;
        Ok(ResolvedScenario {
            spec,
            output: OutputSettings {
                dir: PathBuf::from(output.path.unwrap_or_else(|| DEFAULT_OUTPUT_DIR.into())),
                format,
            },
        })
    }

    /// Fully explicit scenario file that resolves back to `spec`.
    pub fn echo(spec: &ExperimentSpec, output: &OutputSettings) -> ScenarioFile {
        let c = &spec.config;
        let (geometry, pathloss, gains) = match &spec.links {
            LinkModel::Geometric { geometry, pathloss } => (
                Some(GeometrySection {
                    bs_m: Some(geometry.bs),
                    irs_m: Some(geometry.irs),
                    users_m: Some(geometry.users.clone()),
                    ..Default::default()
                }),
                Some(PathlossSection {
                    g0_lin: Some(pathloss.g0),
                    eta_h1: Some(pathloss.eta_h1),
                    eta_h2: Some(pathloss.eta_h2),
                    eta_hd: Some(pathloss.eta_hd),
                    ..Default::default()
                }),
                None,
            ),
            LinkModel::Explicit { gains } => (
                None,
                None,
                Some(GainsSection {
                    beta1_lin: gains.beta1,
                    beta2_lin: gains.beta2.clone(),
                    betad_lin: gains.betad.clone(),
                }),
            ),
        };
        let (rho_tr_lin, rho_tr_model) = match spec.training {
            TrainingSnr::Fixed { .. } => (Some(c.rho_tr), None),
            TrainingSnr::Energy {
                pilot_power,
                noise_energy,
            } => (
                None,
                Some(RhoTrModel {
                    p_c_W: pilot_power,
                    sigma2_J: noise_energy,
                }),
            ),
        };
        let phase_policy = match &spec.phase_policy {
            PhasePolicy::RandomDiscrete { bits, per_trial } => PhasePolicySection {
                kind: "random_discrete".into(),
                bits: Some(*bits),
                per_trial: Some(*per_trial),
                theta_rad: None,
            },
            PhasePolicy::OptimizedDet => PhasePolicySection {
                kind: "optimized_det".into(),
                bits: None,
                per_trial: None,
                theta_rad: None,
            },
            PhasePolicy::GreedyDiscrete { bits } => PhasePolicySection {
                kind: "greedy_discrete".into(),
                bits: Some(*bits),
                per_trial: None,
                theta_rad: None,
            },
            PhasePolicy::Fixed { theta } => PhasePolicySection {
                kind: "fixed".into(),
                bits: None,
                per_trial: None,
                theta_rad: Some(theta.clone()),
            },
        };
        let o = &spec.optimizer;
        ScenarioFile {
            name: Some(spec.scenario_id.clone()),
            system: SystemSection {
                M: c.m,
                N: c.n,
                K: c.k,
                P_max_W: Some(c.p_max),
                sigma2_W: Some(c.sigma2),
                rho_tr_lin,
                rho_tr_model,
                tau_s: Some(c.tau),
                tau_c_s: Some(c.tau_c),
                alpha: Some(Amplitudes::PerElement(c.alpha.clone())),
                powers: Some(c.powers.clone()),
                ..Default::default()
            },
            geometry,
            pathloss,
            gains,
            h1: Some(match spec.h1_model {
                H1Model::Los => H1Section {
                    model: "los".into(),
                    seed: None,
                },
                H1Model::Unitary { seed } => H1Section {
                    model: "unitary".into(),
                    seed: Some(seed),
                },
            }),
            snr_reference: Some(
                match spec.snr_reference {
                    SnrReference::Absolute => "absolute",
                    SnrReference::MeanDirectGain => "mean_direct_gain",
                }
                .into(),
            ),
            protocol: Some(ProtocolField::Many(spec.protocols.iter().map(|p| p.name().to_string()).collect())),
            phase_policy: Some(phase_policy),
            sweep: Some(SweepSection {
                param: spec.sweep.param.name().into(),
                values: Grid::List(spec.sweep.values.clone()),
            }),
            irs: Some(spec.irs),
            optimizer: Some(OptimizerSection {
                epsilon: Some(o.epsilon),
                max_iters: Some(o.max_iters),
                initial_step: Some(o.initial_step),
                shrink: Some(o.shrink),
                armijo: Some(o.armijo),
                min_step: Some(o.min_step),
                init_seed: match o.init {
                    PhaseInit::Zero => None,
                    PhaseInit::Random { seed } => Some(seed),
                },
            }),
            mc: Some(McSection {
                trials: Some(spec.trials),
                seed: Some(spec.seed),
                work_budget: Some(spec.work_budget),
                greedy_passes: Some(spec.greedy_passes),
            }),
            output: Some(OutputSection {
                path: Some(output.dir.to_string_lossy().into_owned()),
                format: Some(output.format.clone()),
            }),
        }
    }
}

fn resolve_geometry(section: Option<&GeometrySection>, k: usize) -> Result<Geometry> {
    let g = section.cloned().unwrap_or_default();
    let reference = Geometry::reference(k);
    let bs = g.bs_m.unwrap_or(reference.bs);
    if g.irs_m.is_some() && g.irs_height_m.is_some() {
        return Err(ScenarioError::Conflict {
            keys: "geometry.irs_m, geometry.irs_height_m".into(),
        });
    }
    if g.users_m.is_some() && (g.arc_radius_m.is_some() || g.arc_deg.is_some()) {
        return Err(ScenarioError::Conflict {
            keys: "geometry.users_m, geometry.arc_radius_m / geometry.arc_deg".into(),
        });
    }
    let mut geometry = match &g.users_m {
        Some(users) => {
            if users.len() != k {
                return Err(invalid("geometry.users_m", format!("{} positions for K = {k}", users.len())));
            }
            let x_bar = users.iter().map(|u| u[0]).sum::<f64>() / k.max(1) as f64;
            Geometry {
                bs,
                irs: [x_bar, 0.0, g.irs_height_m.unwrap_or(reference.irs[2])],
                users: users.clone(),
            }
        }
        None => {
            let radius = g.arc_radius_m.unwrap_or(150.0);
            let span = g.arc_deg.unwrap_or([-30.0, 30.0]);
            if !(radius > 0.0) {
                return Err(invalid("geometry.arc_radius_m", "must be positive"));
            }
            if span[1] < span[0] {
                return Err(invalid("geometry.arc_deg", "end angle precedes start angle"));
            }
            Geometry::arc(
                k,
                irsim::ArcPlacement {
                    radius,
                    span_deg: (span[0], span[1]),
                },
                bs,
                g.irs_height_m.unwrap_or(reference.irs[2]),
            )
        }
    };
    if let Some(irs) = g.irs_m {
        geometry.irs = irs;
    }
    let all = std::iter::once(&geometry.bs).chain(std::iter::once(&geometry.irs)).chain(&geometry.users);
    if all.flatten().any(|x| !x.is_finite()) {
        return Err(invalid("geometry", "positions must be finite"));
    }
    Ok(geometry)
}

fn resolve_pathloss(section: Option<&PathlossSection>) -> Result<PathLossModel> {
    let p = section.cloned().unwrap_or_default();
    let reference = PathLossModel::reference();
    let g0 = match (p.C0_dB, p.g0_dB, p.g0_lin) {
        (None, None, None) => reference.g0,
        (Some(c0), None, None) => db_to_linear(-c0),
        (None, Some(db), None) => db_to_linear(db),
        (None, None, Some(lin)) => lin,
        _ => {
            return Err(ScenarioError::Conflict {
                keys: "pathloss.C0_dB, pathloss.g0_dB, pathloss.g0_lin".into(),
            })
        }
    };
    if !(g0 > 0.0 && g0.is_finite()) {
        return Err(invalid("pathloss", "reference gain must be positive"));
    }
    Ok(PathLossModel {
        g0,
        eta_h1: p.eta_h1.unwrap_or(reference.eta_h1),
        eta_h2: p.eta_h2.unwrap_or(reference.eta_h2),
        eta_hd: p.eta_hd.unwrap_or(reference.eta_hd),
    })
}

fn resolve_policy(p: &PhasePolicySection) -> Result<PhasePolicy> {
    let unexpected = |key: &str| invalid(&format!("phase_policy.{key}"), format!("not used by kind '{}'", p.kind));
    Ok(match p.kind.as_str() {
        "random_discrete" => {
            if p.theta_rad.is_some() {
                return Err(unexpected("theta_rad"));
            }
            PhasePolicy::RandomDiscrete {
                bits: p.bits.unwrap_or(2),
                per_trial: p.per_trial.unwrap_or(false),
            }
        }
        "optimized_det" => {
            if p.bits.is_some() {
                return Err(unexpected("bits"));
            }
            PhasePolicy::OptimizedDet
        }
        "greedy_discrete" => PhasePolicy::GreedyDiscrete { bits: p.bits.unwrap_or(2) },
        "fixed" => PhasePolicy::Fixed {
            theta: p
                .theta_rad
                .clone()
                .ok_or_else(|| ScenarioError::MissingKey { key: "phase_policy.theta_rad".into() })?,
        },
        other => {
            return Err(invalid(
                "phase_policy.kind",
                format!("'{other}' (expected random_discrete, optimized_det, greedy_discrete or fixed)"),
            ))
        }
    })
}

/// Read, parse and resolve a scenario file.
pub fn parse_and_validate(path: &Path) -> Result<ResolvedScenario> {
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_str(&text, path)?.resolve()
}
