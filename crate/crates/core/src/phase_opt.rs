//! IRS phase design: projected gradient ascent on the ON/OFF deterministic
//! sum rate, and discrete-grid search for arbitrary objectives.

use std::f64::consts::{LN_2, PI};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asymptotics::{det_sinr_onoff, onoff_signal_term, reflection_gram};
use crate::error::{Error, Result};
use crate::estimation::OnOffStatistics;
use crate::linalg::{real, C64, CVec};
use crate::model::{IrsConfig, SystemConfig};
use crate::rng::{tag, Stream};

/// Largest exhaustive grid, as a power of two.
pub const EXHAUSTIVE_LIMIT_LOG2: u32 = 24;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PhaseInit {
    /// theta = 0, v = alpha.
    Zero,
    /// Uniform continuous phases keyed by `seed`.
    Random { seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSettings {
    /// Stop once the squared change of the objective drops below this.
    pub epsilon: f64,
    pub max_iters: usize,
    pub initial_step: f64,
    pub shrink: f64,
    /// Sufficient-increase constant of the Armijo test.
    pub armijo: f64,
    /// Step sizes below this end the line search.
    pub min_step: f64,
    pub init: PhaseInit,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        OptimizerSettings {
            epsilon: 1e-10,
            max_iters: 500,
            initial_step: 1.0,
            shrink: 0.5,
            armijo: 1e-4,
            min_step: 1e-14,
            init: PhaseInit::Zero,
        }
    }
}

impl OptimizerSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidConfig("epsilon must be positive".into()));
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(Error::InvalidConfig("shrink factor must lie in (0, 1)".into()));
        }
        if !(self.initial_step > 0.0) || !(self.min_step > 0.0) || self.armijo < 0.0 {
            return Err(Error::InvalidConfig("line-search parameters must be positive".into()));
        }
        Ok(())
    }
}

/// Ingredients of the sum-rate gradient at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientTerms {
    pub q: Vec<f64>,
    pub d: Vec<f64>,
    /// d'_k per element: row k, column n.
    pub dprime: Vec<Vec<C64>>,
    /// Gradient of the sum rate w.r.t. the unit phasors, as
    /// dF/dRe + j dF/dIm (twice the Wirtinger derivative w.r.t. the conjugate).
    pub grad: CVec,
}

fn config_with_unit_phasors(v_unit: &CVec, alpha: &[f64]) -> IrsConfig {
    let v = CVec::from_iterator(v_unit.len(), v_unit.iter().zip(alpha).map(|(u, a)| u * *a));
    IrsConfig::from_parts(v, alpha.to_vec())
}

/// Deterministic ON/OFF sum rate as a function of the unconstrained phasor
/// vector v~ (v = alpha o v~); the objective differentiated by
/// [`sum_rate_gradient`].
pub fn sum_rate_objective(stats: &OnOffStatistics, v_unit: &CVec, config: &SystemConfig) -> f64 {
    det_sinr_onoff(stats, &config_with_unit_phasors(v_unit, &config.alpha), config).sum_rate
}

pub fn gradient_terms(stats: &OnOffStatistics, v: &IrsConfig, config: &SystemConfig) -> GradientTerms {
    let k_users = stats.k();
    let n = stats.n();
    if k_users == 0 {
        return GradientTerms {
            q: vec![],
            d: vec![],
            dprime: vec![],
            grad: CVec::zeros(n),
        };
    }
    let kf = k_users as f64;
    let p = &config.powers;
    let alpha = v.alpha();
    let inv_rho = if config.sigma2 == 0.0 { 0.0 } else { 1.0 / config.rho() };
    let de = det_sinr_onoff(stats, v, config);
    let h1 = stats.h1.as_ref();
    let gram = reflection_gram(h1, alpha);
    let gram_h1 = &gram * h1;

    // u[l][n] = h_n^H G_l h_n and z[l][n] = h_n^H E G_l h_n
    let mut u = vec![vec![C64::new(0.0, 0.0); n]; k_users];
    let mut z = vec![vec![C64::new(0.0, 0.0); n]; k_users];
    for l in 0..k_users {
        if stats.users[l].c_tilde == 0.0 {
            continue;
        }
        let g_h1 = stats.weighted_projector(l, v) * h1;
        for i in 0..n {
            u[l][i] = h1.column(i).dotc(&g_h1.column(i));
            z[l][i] = gram_h1.column(i).dotc(&g_h1.column(i));
        }
    }

    let mut dprime = vec![vec![C64::new(0.0, 0.0); n]; k_users];
    let mut grad = CVec::zeros(n);
    for k in 0..k_users {
        let uk = &stats.users[k];
        let a_k = onoff_signal_term(stats, v, k);
        let (q, d) = (de.q[k], de.d[k]);
        let weight = if d > 0.0 { 1.0 / (d * d * (1.0 + q / d) * LN_2) } else { 0.0 };
        for i in 0..n {
            let mut acc = C64::new(0.0, 0.0);
            for l in 0..k_users {
                let ul = &stats.users[l];
                let coef = p[l] / kf * ul.c_tilde * ul.w[i];
                if coef == 0.0 {
                    continue;
                }
                if l != k {
                    acc += (u[l][i] * uk.beta_d + z[l][i] * uk.beta_2) * coef;
                }
                acc += u[l][i] * (coef * inv_rho);
            }
            let dp = acc * (2.0 * alpha[i]);
            let qp = a_k * (2.0 * p[k] / kf * alpha[i] * uk.c_tilde * stats.tr_r0q(i, k));
            dprime[k][i] = dp;
            grad[i] += (qp * d - dp * q) * weight;
        }
    }
    GradientTerms {
        q: de.q,
        d: de.d,
        dprime,
        grad,
    }
}

/// Gradient of the deterministic ON/OFF sum rate with respect to v~.
pub fn sum_rate_gradient(stats: &OnOffStatistics, v: &IrsConfig, config: &SystemConfig) -> CVec {
    gradient_terms(stats, v, config).grad
}

/// Closest point with |v_n| = alpha_n; zero entries map to phase 0.
pub fn project_unit_modulus(v_bar: &CVec, alpha: &[f64]) -> IrsConfig {
    let theta: Vec<f64> = v_bar.iter().map(|x| if *x == C64::new(0.0, 0.0) { 0.0 } else { x.arg() }).collect();
    IrsConfig::from_phases(alpha, &theta)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizationResult {
    pub v: IrsConfig,
    /// Objective at the start and after every accepted step.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub hit_max_iters: bool,
}

impl OptimizationResult {
    pub fn sum_rate(&self) -> f64 {
        *self.trace.last().expect("trace holds the starting value")
    }
}

fn initial_phasors(n: usize, init: PhaseInit) -> CVec {
    match init {
        PhaseInit::Zero => CVec::from_element(n, C64::new(1.0, 0.0)),
        PhaseInit::Random { seed } => {
            let mut rng = Stream::new(seed).child(tag::OPTIMIZER).rng();
            CVec::from_fn(n, |_, _| C64::from_polar(1.0, rng.random_range(0.0..2.0 * PI)))
        }
    }
}

/// Projected gradient ascent with Armijo backtracking on the unit phasors.
pub fn optimize_phases(
    stats: &OnOffStatistics,
    config: &SystemConfig,
    settings: &OptimizerSettings,
) -> Result<OptimizationResult> {
    settings.validate()?;
    let alpha = config.alpha.clone();
    let mut phasors = initial_phasors(stats.n(), settings.init);
    let mut v = config_with_unit_phasors(&phasors, &alpha);
    let mut value = det_sinr_onoff(stats, &v, config).sum_rate;
    let mut trace = vec![value];
    let mut iterations = 0;
    while iterations < settings.max_iters {
        iterations += 1;
        let grad = sum_rate_gradient(stats, &v, config);
        let mut step = settings.initial_step;
        let mut accepted = None;
        while step >= settings.min_step {
            let proposal = project_unit_modulus(&(&phasors + &grad * real(step)), &vec![1.0; stats.n()]);
            let cand_phasors = proposal.v().clone();
            let predicted = grad.dotc(&(&cand_phasors - &phasors)).re;
            let cand = config_with_unit_phasors(&cand_phasors, &alpha);
            let cand_value = det_sinr_onoff(stats, &cand, config).sum_rate;
            if cand_value >= value && cand_value >= value + settings.armijo * predicted {
                accepted = Some((cand_phasors, cand, cand_value));
                break;
            }
            step *= settings.shrink;
        }
        let Some((p, c, new_value)) = accepted else {
            break;
        };
        let change = new_value - value;
        phasors = p;
        v = c;
        value = new_value;
        trace.push(value);
        if change * change < settings.epsilon {
            break;
        }
    }
    let hit_max_iters = iterations >= settings.max_iters
        && trace.len() >= 2
        && {
            let n = trace.len();
            let c = trace[n - 1] - trace[n - 2];
            c * c >= settings.epsilon
        };
    if hit_max_iters {
        log::warn!("phase optimisation stopped at the iteration cap ({})", settings.max_iters);
    }
    Ok(OptimizationResult {
        v,
        trace,
        iterations,
        hit_max_iters,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SearchMode {
    /// Every point of the 2^(bits N) grid.
    Exhaustive,
    /// Coordinate passes until a full pass changes nothing.
    Greedy { max_passes: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteSearchResult {
    pub v: IrsConfig,
    /// Grid index of every element's phase.
    pub levels: Vec<u32>,
    pub value: f64,
    pub evaluations: u64,
}

/// IRS configuration with theta_n = 2 pi levels_n / 2^bits.
pub fn discrete_config(alpha: &[f64], bits: u32, levels: &[u32]) -> IrsConfig {
    let count = (1u64 << bits) as f64;
    let theta: Vec<f64> = levels.iter().map(|&l| 2.0 * PI * l as f64 / count).collect();
    IrsConfig::from_phases(alpha, &theta)
}

fn better(a: f64, b: f64) -> bool {
    // NaN never wins
    a > b || (b.is_nan() && !a.is_nan())
}

/// Maximise `objective` over the discrete phase grid. Ties go to the
/// lexicographically smallest level vector.
pub fn discrete_phase_search<F>(objective: F, alpha: &[f64], bits: u32, mode: SearchMode) -> Result<DiscreteSearchResult>
where
    F: Fn(&IrsConfig) -> f64 + Sync,
{
    if bits == 0 || bits > 16 {
        return Err(Error::InvalidConfig(format!("phase resolution must be 1..=16 bits, got {bits}")));
    }
    let n = alpha.len();
    let levels_per = 1u64 << bits;
    match mode {
        SearchMode::Exhaustive => {
            let total_bits = bits as usize * n;
            if total_bits > EXHAUSTIVE_LIMIT_LOG2 as usize {
                return Err(Error::SearchTooLarge {
                    bits,
                    elements: n,
                    limit_log2: EXHAUSTIVE_LIMIT_LOG2,
                });
            }
            let count = 1u64 << total_bits;
            let decode = |idx: u64| -> Vec<u32> {
                // element 0 is the most significant digit, so index order is lexicographic
                (0..n)
                    .map(|e| ((idx >> (bits as usize * (n - 1 - e))) & (levels_per - 1)) as u32)
                    .collect()
            };
            let (best_idx, best_value) = (0..count)
                .into_par_iter()
                .map(|idx| (idx, objective(&discrete_config(alpha, bits, &decode(idx)))))
                .reduce(
                    || (u64::MAX, f64::NAN),
                    |a, b| {
                        if better(b.1, a.1) || (b.1 == a.1 && b.0 < a.0) {
                            b
                        } else {
                            a
                        }
                    },
                );
            let levels = decode(best_idx);
            Ok(DiscreteSearchResult {
                v: discrete_config(alpha, bits, &levels),
                levels,
                value: best_value,
                evaluations: count,
            })
        }
        SearchMode::Greedy { max_passes } => {
            let mut levels = vec![0u32; n];
            let mut value = objective(&discrete_config(alpha, bits, &levels));
            let mut evaluations = 1u64;
            for _ in 0..max_passes {
                let mut changed = false;
                for e in 0..n {
                    let current = levels[e];
                    let candidates: Vec<(u32, f64)> = (0..levels_per as u32)
                        .filter(|&l| l != current)
                        .collect::<Vec<_>>()
                        .into_par_iter()
                        .map(|l| {
                            let mut trial = levels.clone();
                            trial[e] = l;
                            (l, objective(&discrete_config(alpha, bits, &trial)))
                        })
                        .collect();
                    evaluations += candidates.len() as u64;
                    for (l, val) in candidates {
                        if better(val, value) {
                            value = val;
                            levels[e] = l;
                            changed = true;
                        }
                    }
                }
                if !changed {
                    break;
                }
            }
            Ok(DiscreteSearchResult {
                v: discrete_config(alpha, bits, &levels),
                levels,
                value,
                evaluations,
            })
        }
    }
}

/// Dense d'_k evaluation used to cross-check the structured gradient.
#[cfg(test)]
fn dense_dprime(stats: &OnOffStatistics, v: &IrsConfig, config: &SystemConfig, k: usize, i: usize) -> C64 {
    let kf = stats.k() as f64;
    let e = reflection_gram(&stats.h1, v.alpha());
    let h = stats.h1.column(i).into_owned();
    let b_k = crate::linalg::CMat::identity(stats.m, stats.m) * real(stats.users[k].beta_d) + &e * real(stats.users[k].beta_2);
    let mut acc = C64::new(0.0, 0.0);
    for l in 0..stats.k() {
        let g = stats.weighted_projector(l, v);
        let coef = config.powers[l] / kf * stats.users[l].c_tilde * stats.users[l].w[i];
        if l != k {
            acc += h.dotc(&(&b_k * &g * &h)) * coef;
        }
        acc += h.dotc(&(&g * &h)) * coef / config.rho();
    }
    acc * (2.0 * v.alpha()[i])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimation::onoff_statistics;
    use crate::model::{generate_h1_los, Geometry, LinkGains};
    use std::sync::Arc;

    fn scenario(m: usize, n: usize, k: usize, rho_tr: f64) -> (SystemConfig, OnOffStatistics) {
        let config = SystemConfig::new(m, n, k).with_rho(2.0).with_rho_tr(rho_tr);
        let gains = LinkGains {
            beta1: 0.2,
            beta2: (0..k).map(|i| 0.5 + 0.3 * i as f64).collect(),
            betad: (0..k).map(|i| 1.0 - 0.08 * i as f64).collect(),
        };
        let h1 = Arc::new(generate_h1_los(m, n, gains.beta1, &Geometry::reference(k)).unwrap());
        let stats = onoff_statistics(&config, &gains, h1).unwrap();
        (config, stats)
    }

    fn finite_difference(stats: &OnOffStatistics, phasors: &CVec, config: &SystemConfig, i: usize) -> C64 {
        let h = 1e-6;
        let eval = |d: C64| {
            let mut p = phasors.clone();
            p[i] += d;
            sum_rate_objective(stats, &p, config)
        };
        let re = (eval(C64::new(h, 0.0)) - eval(C64::new(-h, 0.0))) / (2.0 * h);
        let im = (eval(C64::new(0.0, h)) - eval(C64::new(0.0, -h))) / (2.0 * h);
        C64::new(re, im)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (config, stats) = scenario(6, 5, 4, 0.5);
        let mut rng = Stream::new(1).rng();
        let v = IrsConfig::random_continuous(&config.alpha, &mut rng);
        let g = sum_rate_gradient(&stats, &v, &config);
        let unit = v.unit_phasors();
        for i in 0..5 {
            let fd = finite_difference(&stats, &unit, &config, i);
            assert!((fd - g[i]).norm() < 1e-5 * g[i].norm(), "element {i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn structured_dprime_matches_dense() {
        let (config, stats) = scenario(5, 4, 3, 0.7);
        let mut rng = Stream::new(2).rng();
        let v = IrsConfig::random_continuous(&config.alpha, &mut rng);
        let terms = gradient_terms(&stats, &v, &config);
        for k in 0..3 {
            for i in 0..4 {
                let want = dense_dprime(&stats, &v, &config, k, i);
                assert!((terms.dprime[k][i] - want).norm() < 1e-12 * want.norm().max(1e-300));
            }
        }
    }

    #[test]
    fn gradient_vanishes_without_training_error() {
        let (config, stats) = scenario(5, 4, 3, f64::INFINITY);
        let mut rng = Stream::new(3).rng();
        let v = IrsConfig::random_continuous(&config.alpha, &mut rng);
        assert!(sum_rate_gradient(&stats, &v, &config).iter().all(|g| g.norm() == 0.0));
        let r = optimize_phases(&stats, &config, &OptimizerSettings::default()).unwrap();
        assert_eq!(r.iterations, 1);
        assert!(!r.hit_max_iters);
    }

    #[test]
    fn no_users_no_gradient() {
        let (config, stats) = scenario(4, 3, 0, 1.0);
        let g = sum_rate_gradient(&stats, &IrsConfig::zero_phase(&config.alpha), &config);
        assert_eq!(g, CVec::zeros(3));
    }

    #[test]
    fn projection_examples() {
        let v = CVec::from_vec(vec![C64::new(2.0, 0.0), C64::new(0.0, -3.0)]);
        let p = project_unit_modulus(&v, &[1.0, 1.0]);
        assert!((p.v()[0] - C64::new(1.0, 0.0)).norm() < 1e-15);
        assert!((p.v()[1] - C64::new(0.0, -1.0)).norm() < 1e-15);
        let again = project_unit_modulus(p.v(), &[1.0, 1.0]);
        assert!((again.v() - p.v()).norm() < 1e-15);
        let z = project_unit_modulus(&CVec::zeros(1), &[1.0]);
        assert_eq!(z.v()[0], C64::new(1.0, 0.0));
    }

    #[test]
    fn ascent_is_monotone_and_beats_start() {
        let (config, stats) = scenario(8, 8, 4, 0.3);
        for seed in 0..4 {
            let settings = OptimizerSettings {
                init: PhaseInit::Random { seed },
                ..Default::default()
            };
            let r = optimize_phases(&stats, &config, &settings).unwrap();
            for w in r.trace.windows(2) {
                assert!(w[1] >= w[0] - 1e-12);
            }
            assert!(r.sum_rate() >= r.trace[0]);
            assert!(r.v.v().iter().zip(r.v.alpha()).all(|(x, a)| (x.norm() - a).abs() < 1e-12));
        }
    }

    #[test]
    fn exhaustive_small_grid() {
        let calls = std::sync::atomic::AtomicUsize::new(0);
        let obj = |v: &IrsConfig| {
            calls.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
            -(v.v()[0] - C64::new(0.0, 1.0)).norm()
        };
        let r = discrete_phase_search(obj, &[1.0], 2, SearchMode::Exhaustive).unwrap();
        assert_eq!(r.evaluations, 4);
        assert_eq!(calls.load(std::sync::atomic::Ordering::Relaxed), 4);
        assert_eq!(r.levels, vec![1]);
    }

    #[test]
    fn constant_objective_picks_first_candidate() {
        let r = discrete_phase_search(|_| 1.0, &[1.0; 3], 2, SearchMode::Exhaustive).unwrap();
        assert_eq!(r.levels, vec![0, 0, 0]);
        let r = discrete_phase_search(|_| 1.0, &[1.0; 3], 2, SearchMode::Greedy { max_passes: 5 }).unwrap();
        assert_eq!(r.levels, vec![0, 0, 0]);
    }

    #[test]
    fn exhaustive_refuses_large_grids() {
        let err = discrete_phase_search(|_| 0.0, &[1.0; 13], 2, SearchMode::Exhaustive).unwrap_err();
        assert!(matches!(err, Error::SearchTooLarge { .. }));
        assert!(err.to_string().contains("greedy"));
    }
}
