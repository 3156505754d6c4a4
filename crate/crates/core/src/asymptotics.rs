//! Deterministic equivalents of the per-user SINR and the sum rate.
//!
//! All expressions share the form gamma_k = q_k / (I_k + N_k) where the
//! numerator and interference carry a p/K scaling; the ratio is invariant to
//! that convention as long as it is applied uniformly.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{de_statistics, estimate_covariance_onoff, onoff_statistics, DeStatistics, OnOffStatistics};
use crate::linalg::{real, trace_product, CMat, CompensatedSum, C64};
use crate::model::{IrsConfig, LinkGains, SystemConfig};
use crate::transceiver::{net_factor, Protocol};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetEquivResult {
    pub gamma: Vec<f64>,
    pub rate: Vec<f64>,
    pub sum_rate: f64,
    /// Numerator q_k.
    pub q: Vec<f64>,
    /// Denominator d_k = interference_k + noise_k.
    pub d: Vec<f64>,
    pub interference: Vec<f64>,
    pub noise: Vec<f64>,
}

impl DetEquivResult {
    fn from_parts(q: Vec<f64>, interference: Vec<f64>, noise: Vec<f64>) -> Self {
        let d: Vec<f64> = interference.iter().zip(&noise).map(|(i, n)| i + n).collect();
        let gamma: Vec<f64> = q
            .iter()
            .zip(&d)
            .map(|(&q, &d)| {
                if d > 0.0 {
                    q / d
                } else if q > 0.0 {
                    f64::INFINITY
                } else {
                    0.0
                }
            })
            .collect();
        let rate: Vec<f64> = gamma.iter().map(|g| (1.0 + g).log2()).collect();
        let sum_rate = rate.iter().copied().collect::<CompensatedSum>().value();
        DetEquivResult {
            gamma,
            rate,
            sum_rate,
            q,
            d,
            interference,
            noise,
        }
    }

    pub fn k(&self) -> usize {
        self.gamma.len()
    }

    pub fn mean_gamma(&self) -> f64 {
        if self.gamma.is_empty() {
            0.0
        } else {
            self.gamma.iter().sum::<f64>() / self.gamma.len() as f64
        }
    }
}

/// Log a warning when the dimensions are far from the large-system regime
/// the approximations are derived for. The result is still computed.
pub fn check_dimension_regime(config: &SystemConfig) {
    let (m, n, k) = (config.m as f64, config.n as f64, config.k as f64);
    let out = |r: f64| !(0.125..=8.0).contains(&r);
    if config.k > 0 && out(k / m) {
        log::warn!("K/M = {:.3} is outside [1/8, 8]; deterministic equivalent may be loose", k / m);
    }
    if config.n > 0 && out(m / n) {
        log::warn!("M/N = {:.3} is outside [1/8, 8]; deterministic equivalent may be loose", m / n);
    }
}

fn noise_scale(config: &SystemConfig) -> f64 {
    if config.sigma2 == 0.0 {
        0.0
    } else {
        1.0 / config.rho()
    }
}

/// H1 diag(alpha)^2 H1^H.
pub fn reflection_gram(h1: &CMat, alpha: &[f64]) -> CMat {
    let mut scaled = h1.clone();
    for (i, mut col) in scaled.column_iter_mut().enumerate() {
        col *= real(alpha[i] * alpha[i]);
    }
    crate::linalg::hermitian_part(&(scaled * h1.adjoint()))
}

/// Complex inner term A_k whose squared magnitude is the ON/OFF numerator:
/// sum_i v_i c~ w_i ||h_i||^2 + M bd^2/(bd + 1/rho_tr) + sum_i alpha_i^2 w_i b2 ||h_i||^4.
pub fn onoff_signal_term(stats: &OnOffStatistics, v: &IrsConfig, k: usize) -> C64 {
    let u = &stats.users[k];
    let mut coherent = C64::new(0.0, 0.0);
    let mut power = CompensatedSum::default();
    power.add(stats.tr_direct(k));
    for i in 0..stats.n() {
        coherent += v.v()[i] * (u.c_tilde * stats.tr_r0q(i, k));
        let a = v.alpha()[i];
        power.add(a * a * stats.tr_r0r0q(i, k));
    }
    coherent + real(power.value())
}

/// Per-user traces tr(C_{l,v}) and tr(C_{l,v} E) used by the ON/OFF denominator.
pub(crate) fn onoff_covariance_traces(stats: &OnOffStatistics, v: &IrsConfig, gram: &CMat) -> (Vec<f64>, Vec<f64>) {
    (0..stats.k())
        .map(|l| {
            let c = estimate_covariance_onoff(stats, v, l);
            (c.trace().re, trace_product(&c, gram).re)
        })
        .unzip()
}

/// Deterministic equivalent under ON/OFF training.
pub fn det_sinr_onoff(stats: &OnOffStatistics, v: &IrsConfig, config: &SystemConfig) -> DetEquivResult {
    check_dimension_regime(config);
    let k_users = stats.k();
    let kf = k_users as f64;
    let p = &config.powers;
    let gram = reflection_gram(&stats.h1, v.alpha());
    let (tr_c, tr_ce) = onoff_covariance_traces(stats, v, &gram);
    let noise_total: f64 = (0..k_users).map(|l| p[l] / kf * tr_c[l]).sum::<f64>() * noise_scale(config);
    let mut q = Vec::with_capacity(k_users);
    let mut interference = Vec::with_capacity(k_users);
    for k in 0..k_users {
        let u = &stats.users[k];
        q.push(p[k] / kf * onoff_signal_term(stats, v, k).norm_sqr());
        let inter: CompensatedSum = (0..k_users)
            .filter(|&l| l != k)
            .map(|l| p[l] / kf * (u.beta_d * tr_c[l] + u.beta_2 * tr_ce[l]))
            .collect();
        interference.push(inter.value());
    }
    DetEquivResult::from_parts(q, interference, vec![noise_total; k_users])
}

/// Deterministic equivalent under direct estimation. Depends on v only
/// through the amplitudes carried by `stats`.
pub fn det_sinr_de(stats: &DeStatistics, config: &SystemConfig) -> DetEquivResult {
    check_dimension_regime(config);
    let k_users = stats.k();
    let kf = k_users as f64;
    let p = &config.powers;
    let rqr: Vec<CMat> = (0..k_users).map(|l| stats.estimate_covariance(l)).collect();
    let tr_rqr: Vec<f64> = rqr.iter().map(|c| c.trace().re).collect();
    let noise_total: f64 = (0..k_users).map(|l| p[l] / kf * tr_rqr[l]).sum::<f64>() * noise_scale(config);
    let mut q = Vec::with_capacity(k_users);
    let mut interference = Vec::with_capacity(k_users);
    for k in 0..k_users {
        q.push(p[k] / kf * tr_rqr[k] * tr_rqr[k]);
        let inter: CompensatedSum = (0..k_users)
            .filter(|&l| l != k)
            .map(|l| p[l] / kf * trace_product(&stats.users[k].r, &rqr[l]).re)
            .collect();
        interference.push(inter.value());
    }
    DetEquivResult::from_parts(q, interference, vec![noise_total; k_users])
}

/// Deterministic equivalent with perfect CSI. The noise term scales the
/// total trace by the user's own p_k/K.
pub fn det_sinr_perfect(gains: &LinkGains, h1: &CMat, config: &SystemConfig) -> DetEquivResult {
    check_dimension_regime(config);
    let k_users = gains.k();
    let kf = k_users as f64;
    let p = &config.powers;
    let m = config.m as f64;
    let gram = reflection_gram(h1, &config.alpha);
    let tr_e = gram.trace().re;
    let tr_e2 = gram.norm_squared();
    let tr_r: Vec<f64> = (0..k_users).map(|k| m * gains.betad[k] + gains.beta2[k] * tr_e).collect();
    let tr_pair = |k: usize, l: usize| {
        let (dk, dl, sk, sl) = (gains.betad[k], gains.betad[l], gains.beta2[k], gains.beta2[l]);
        m * dk * dl + (dk * sl + dl * sk) * tr_e + sk * sl * tr_e2
    };
    let total: f64 = tr_r.iter().sum::<f64>() * noise_scale(config);
    let mut q = Vec::with_capacity(k_users);
    let mut interference = Vec::with_capacity(k_users);
    let mut noise = Vec::with_capacity(k_users);
    for k in 0..k_users {
        q.push(p[k] / kf * tr_r[k] * tr_r[k]);
        let inter: CompensatedSum = (0..k_users)
            .filter(|&l| l != k)
            .map(|l| p[l] / kf * tr_pair(k, l))
            .collect();
        interference.push(inter.value());
        noise.push(p[k] / kf * total);
    }
    DetEquivResult::from_parts(q, interference, noise)
}

/// Build the statistics for `protocol` and evaluate its deterministic equivalent.
pub fn det_equivalent(
    protocol: Protocol,
    gains: &LinkGains,
    h1: &Arc<CMat>,
    v: &IrsConfig,
    config: &SystemConfig,
) -> Result<DetEquivResult> {
    if v.alpha() != config.alpha.as_slice() {
        return Err(Error::Precondition("IRS amplitudes differ from the configured alpha".into()));
    }
    match protocol {
        Protocol::Perfect => Ok(det_sinr_perfect(gains, h1, config)),
        Protocol::OnOff => {
            let stats = onoff_statistics(config, gains, h1.clone())?;
            Ok(det_sinr_onoff(&stats, v, config))
        }
        Protocol::De => {
            let stats = de_statistics(config, gains, h1)?;
            Ok(det_sinr_de(&stats, config))
        }
    }
}

pub fn det_sum_rate(result: &DetEquivResult) -> f64 {
    result.sum_rate
}

/// Sum rate after the training-overhead discount of `protocol`.
pub fn det_net_sum_rate(result: &DetEquivResult, config: &SystemConfig, protocol: Protocol) -> f64 {
    result.sum_rate * net_factor(protocol, config)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecialCaseSinr {
    pub gamma: Vec<f64>,
    /// (1/M) sum_{l!=k} bd_l / bd_k.
    pub interference: Vec<f64>,
    /// sum_l bd_l / (M bd_k^2 rho (cN + 1)).
    pub noise: Vec<f64>,
}

/// Closed-form SINR for a unitary H1 with b1 b2_k = c bd_k and equal powers.
/// `n = 0` gives the system without an IRS.
pub fn special_case_sinr(m: usize, n: usize, c: f64, rho: f64, betad: &[f64]) -> Result<SpecialCaseSinr> {
    if m == 0 {
        return Err(Error::InvalidConfig("M must be at least 1".into()));
    }
    if n > 0 && m > n {
        return Err(Error::InvalidConfig(format!(
            "M = {m} rows of an N = {n} unitary do not exist (need M <= N)"
        )));
    }
    if !(c > 0.0) {
        return Err(Error::InvalidConfig(format!("c must be positive, got {c}")));
    }
    if !(rho > 0.0) {
        return Err(Error::InvalidConfig(format!("rho must be positive, got {rho}")));
    }
    if betad.iter().any(|b| !(*b > 0.0)) {
        return Err(Error::InvalidConfig("direct gains must be positive".into()));
    }
    let mf = m as f64;
    let total: f64 = betad.iter().sum();
    let boost = c * n as f64 + 1.0;
    let mut out = SpecialCaseSinr {
        gamma: Vec::with_capacity(betad.len()),
        interference: Vec::with_capacity(betad.len()),
        noise: Vec::with_capacity(betad.len()),
    };
    for (k, &bk) in betad.iter().enumerate() {
        let others: f64 = betad.iter().enumerate().filter(|&(l, _)| l != k).map(|(_, b)| b).sum();
        let inter = others / (mf * bk);
        let noise = total / (mf * bk * bk * rho * boost);
        out.interference.push(inter);
        out.noise.push(noise);
        out.gamma.push(1.0 / (inter + noise));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{generate_h1_los, generate_h1_unitary, linear_to_db, Geometry};

    fn gains(k: usize) -> LinkGains {
        LinkGains {
            beta1: 0.05,
            beta2: (0..k).map(|i| 1.0 + 0.3 * i as f64).collect(),
            betad: (0..k).map(|i| 1.0 - 0.05 * i as f64).collect(),
        }
    }

    #[test]
    fn special_case_reference_values() {
        let b = vec![1.0; 12];
        let db = |n| linear_to_db(special_case_sinr(32, n, 1.0, 1.0, &b).unwrap().gamma[0]);
        assert!((db(32) - 4.4963).abs() < 1e-3);
        assert!((db(64) - 4.5653).abs() < 1e-3);
        assert!((db(0) - 1.4342).abs() < 1e-3);
        let lim = special_case_sinr(32, 32, 1.0, 1e15, &b).unwrap().gamma[0];
        assert!((linear_to_db(lim) - 10.0 * (32.0f64 / 11.0).log10()).abs() < 1e-6);
    }

    #[test]
    fn special_case_decomposition_is_exact() {
        let b = [0.4, 1.0, 2.5, 0.9];
        let s = special_case_sinr(8, 16, 0.7, 3.0, &b).unwrap();
        for k in 0..4 {
            let recip = s.interference[k] + s.noise[k];
            assert!((1.0 / s.gamma[k] - recip).abs() <= 1e-14 * recip);
        }
        assert!(special_case_sinr(8, 4, 1.0, 1.0, &b).is_err());
        assert!(special_case_sinr(8, 16, 0.0, 1.0, &b).is_err());
    }

    #[test]
    fn perfect_matches_special_case() {
        let (m, n, k, c) = (8, 16, 5, 1.0);
        let betad: Vec<f64> = (0..k).map(|i| 0.5 + 0.2 * i as f64).collect();
        let beta1 = 0.25;
        let g = LinkGains {
            beta1,
            beta2: betad.iter().map(|b| c * b / beta1).collect(),
            betad: betad.clone(),
        };
        let h1 = generate_h1_unitary(m, n, beta1, 3).unwrap();
        for rho in [0.01, 0.3, 1.0, 10.0] {
            let config = SystemConfig::new(m, n, k).with_rho(rho);
            let de = det_sinr_perfect(&g, &h1, &config);
            let sc = special_case_sinr(m, n, c, rho, &betad).unwrap();
            for i in 0..k {
                assert!((de.gamma[i] - sc.gamma[i]).abs() < 1e-10 * sc.gamma[i]);
            }
        }
    }

    #[test]
    fn single_user_perfect() {
        let g = gains(1);
        let h1 = generate_h1_los(4, 6, g.beta1, &Geometry::reference(1)).unwrap();
        let config = SystemConfig::new(4, 6, 1).with_rho(2.5);
        let r = det_sinr_perfect(&g, &h1, &config);
        let tr = crate::transceiver::trace_channel_covariance(4, g.betad[0], g.beta2[0], &h1, &config.alpha);
        assert!((r.gamma[0] - 2.5 * tr).abs() < 1e-12 * r.gamma[0]);
    }

    #[test]
    fn de_with_perfect_training_is_perfect() {
        let g = gains(4);
        let h1 = Arc::new(generate_h1_los(6, 8, g.beta1, &Geometry::reference(4)).unwrap());
        let config = SystemConfig::new(6, 8, 4).with_rho(0.7).with_rho_tr(f64::INFINITY);
        let de = det_sinr_de(&de_statistics(&config, &g, &h1).unwrap(), &config);
        let pf = det_sinr_perfect(&g, &h1, &config);
        for k in 0..4 {
            assert!((de.gamma[k] - pf.gamma[k]).abs() < 1e-9 * pf.gamma[k]);
        }
    }

    #[test]
    fn de_without_irs_matches_onoff_without_elements() {
        let g = gains(3);
        let h1 = Arc::new(generate_h1_los(5, 4, g.beta1, &Geometry::reference(3)).unwrap());
        let config = SystemConfig::new(5, 4, 3).with_rho(1.3).with_rho_tr(2.0).with_alpha(vec![0.0; 4]);
        let de = det_sinr_de(&de_statistics(&config, &g, &h1).unwrap(), &config);

        let bare = SystemConfig::new(5, 0, 3).with_rho(1.3).with_rho_tr(2.0);
        let h0 = Arc::new(CMat::zeros(5, 0));
        let oo = det_sinr_onoff(&onoff_statistics(&bare, &g, h0).unwrap(), &IrsConfig::off(0), &bare);
        for k in 0..3 {
            assert!((de.gamma[k] - oo.gamma[k]).abs() < 1e-12 * oo.gamma[k]);
        }
        // same reduction for the ON/OFF protocol with all amplitudes at zero
        let full = det_sinr_onoff(&onoff_statistics(&config, &g, h1).unwrap(), &IrsConfig::off(4), &config);
        for k in 0..3 {
            assert!((full.gamma[k] - oo.gamma[k]).abs() < 1e-12 * oo.gamma[k]);
        }
    }

    #[test]
    fn onoff_without_elements_is_perfect_without_irs_at_perfect_training() {
        let g = gains(3);
        let bare = SystemConfig::new(5, 0, 3).with_rho(1.3).with_rho_tr(f64::INFINITY);
        let h0 = Arc::new(CMat::zeros(5, 0));
        let oo = det_sinr_onoff(&onoff_statistics(&bare, &g, h0.clone()).unwrap(), &IrsConfig::off(0), &bare);
        let pf = det_sinr_perfect(&g, &h0, &bare);
        for k in 0..3 {
            assert!((oo.gamma[k] - pf.gamma[k]).abs() < 1e-12 * pf.gamma[k]);
        }
    }

    #[test]
    fn phases_only_matter_through_training_error() {
        let g = gains(3);
        let h1 = Arc::new(generate_h1_los(6, 5, g.beta1, &Geometry::reference(3)).unwrap());
        let config = SystemConfig::new(6, 5, 3).with_rho(1.0).with_rho_tr(f64::INFINITY);
        let stats = onoff_statistics(&config, &g, h1.clone()).unwrap();
        let a = IrsConfig::from_phases(&config.alpha, &[0.1, 2.0, -1.0, 0.5, 3.0]);
        let b = IrsConfig::from_phases(&config.alpha, &[1.1, -2.0, 0.0, 0.7, 0.2]);
        assert_eq!(det_sinr_onoff(&stats, &a, &config), det_sinr_onoff(&stats, &b, &config));

        let noisy = config.clone().with_rho_tr(1.0);
        let stats = onoff_statistics(&noisy, &g, h1).unwrap();
        assert_ne!(det_sinr_onoff(&stats, &a, &noisy).gamma, det_sinr_onoff(&stats, &b, &noisy).gamma);
    }

    #[test]
    fn equal_users_equal_sinr() {
        let g = LinkGains {
            beta1: 0.1,
            beta2: vec![1.0; 4],
            betad: vec![1.0; 4],
        };
        let h1 = generate_h1_los(6, 6, 0.1, &Geometry::reference(4)).unwrap();
        let r = det_sinr_perfect(&g, &h1, &SystemConfig::new(6, 6, 4));
        for k in 1..4 {
            assert!((r.gamma[k] - r.gamma[0]).abs() < 1e-12 * r.gamma[0]);
        }
    }

    #[test]
    fn sum_rate_definition() {
        let r = DetEquivResult::from_parts(vec![1.0; 8], vec![0.5; 8], vec![0.5; 8]);
        assert_eq!(det_sum_rate(&r), 8.0);
        let empty = DetEquivResult::from_parts(vec![], vec![], vec![]);
        assert_eq!(det_sum_rate(&empty), 0.0);
        let mut config = SystemConfig::new(2, 0, 8);
        config.tau_c = 0.01 * config.tau;
        assert!((det_net_sum_rate(&r, &config, Protocol::OnOff) - 7.92).abs() < 1e-12);
        for (g, rate) in r.gamma.iter().zip(&r.rate) {
            assert_eq!(*rate, (1.0 + g).log2());
        }
    }

    #[test]
    fn de_is_phase_blind() {
        let g = gains(3);
        let h1 = Arc::new(generate_h1_los(6, 5, g.beta1, &Geometry::reference(3)).unwrap());
        let config = SystemConfig::new(6, 5, 3).with_rho(1.0).with_rho_tr(1.5);
        let a = IrsConfig::from_phases(&config.alpha, &[0.1, 2.0, -1.0, 0.5, 3.0]);
        let b = IrsConfig::from_phases(&config.alpha, &[1.1, -2.0, 0.0, 0.7, 0.2]);
        let ra = det_equivalent(Protocol::De, &g, &h1, &a, &config).unwrap();
        let rb = det_equivalent(Protocol::De, &g, &h1, &b, &config).unwrap();
        assert_eq!(ra, rb);
    }
}
