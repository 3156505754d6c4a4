//! MRT precoding, instantaneous SINR and achievable rates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{trace_covariance_onoff, DeStatistics, OnOffStatistics};
use crate::linalg::{real, CMat, CVec, CompensatedSum};
use crate::model::{effective_channel, ChannelRealization, IrsConfig, LinkGains, SystemConfig};

/// CSI available at the base station.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Perfect,
    #[serde(rename = "onoff")]
    OnOff,
    De,
}

impl Protocol {
    pub const ALL: [Protocol; 3] = [Protocol::Perfect, Protocol::OnOff, Protocol::De];

    pub fn name(self) -> &'static str {
        match self {
            Protocol::Perfect => "perfect",
            Protocol::OnOff => "onoff",
            Protocol::De => "de",
        }
    }

    /// Number of training sub-phases needed for N elements.
    pub fn subphases(self, n: usize) -> usize {
        match self {
            Protocol::Perfect => 0,
            Protocol::OnOff => n + 1,
            Protocol::De => 1,
        }
    }

    /// Length of one sub-phase when the whole training window is `tau_c`.
    pub fn subphase_duration(self, n: usize, tau_c: f64) -> f64 {
        match self.subphases(n) {
            0 => 0.0,
            s => tau_c / s as f64,
        }
    }

    /// Training SNR p_c tau_s / sigma2 seen by one sub-phase.
    pub fn training_snr(self, n: usize, tau_c: f64, pilot_power: f64, noise_energy: f64) -> f64 {
        pilot_power * self.subphase_duration(n, tau_c) / noise_energy
    }
}

impl std::fmt::Display for Protocol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "perfect" => Ok(Protocol::Perfect),
            "onoff" | "on_off" | "on-off" => Ok(Protocol::OnOff),
            "de" => Ok(Protocol::De),
            other => Err(Error::InvalidConfig(format!(
                "unknown protocol '{other}' (expected perfect, onoff or de)"
            ))),
        }
    }
}

/// Channel statistics from which the power normalisation is computed.
#[derive(Debug, Clone, Copy)]
pub enum CsiModel<'a> {
    Perfect { gains: &'a LinkGains, h1: &'a CMat },
    OnOff(&'a OnOffStatistics),
    De(&'a DeStatistics),
}

impl CsiModel<'_> {
    pub fn protocol(&self) -> Protocol {
        match self {
            CsiModel::Perfect { .. } => Protocol::Perfect,
            CsiModel::OnOff(_) => Protocol::OnOff,
            CsiModel::De(_) => Protocol::De,
        }
    }
}

/// tr(R_{k,alpha}) = M bd + b2 sum_i alpha_i^2 ||h_{1,i}||^2.
pub fn trace_channel_covariance(m: usize, beta_d: f64, beta_2: f64, h1: &CMat, alpha: &[f64]) -> f64 {
    let reflected: f64 = h1
        .column_iter()
        .zip(alpha)
        .map(|(c, a)| a * a * c.norm_squared())
        .sum();
    m as f64 * beta_d + beta_2 * reflected
}

/// Psi = E[tr(P H^ H^H)] in closed form.
pub fn analytic_psi(model: CsiModel<'_>, v: &IrsConfig, config: &SystemConfig) -> f64 {
    let p = &config.powers;
    let terms: CompensatedSum = match model {
        CsiModel::Perfect { gains, h1 } => (0..config.k)
            .map(|k| p[k] * trace_channel_covariance(config.m, gains.betad[k], gains.beta2[k], h1, v.alpha()))
            .collect(),
        CsiModel::OnOff(stats) => (0..config.k)
            .map(|k| p[k] * trace_covariance_onoff(stats, v, k))
            .collect(),
        CsiModel::De(stats) => (0..config.k)
            .map(|k| p[k] * stats.estimate_covariance(k).trace().re)
            .collect(),
    };
    terms.value()
}

/// Sample average of tr(P H^ H^H) over independent estimate sets; the
/// cross-check for [`analytic_psi`].
pub fn empirical_psi<'a, I>(estimate_sets: I, powers: &[f64]) -> f64
where
    I: IntoIterator<Item = &'a [CVec]>,
{
    let mut acc = CompensatedSum::default();
    let mut count = 0usize;
    for set in estimate_sets {
        count += 1;
        for (h, p) in set.iter().zip(powers) {
            acc.add(p * h.norm_squared());
        }
    }
    if count == 0 {
        0.0
    } else {
        acc.value() / count as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrecoderSet {
    /// Columns g_k = zeta h^_{k,v}.
    pub g: CMat,
    pub zeta: f64,
    pub psi: f64,
}

impl PrecoderSet {
    pub fn k(&self) -> usize {
        self.g.ncols()
    }

    /// The estimate behind column k, g_k / zeta.
    pub fn estimate(&self, k: usize) -> CVec {
        self.g.column(k) / real(self.zeta)
    }
}

/// MRT precoders g_k = zeta h^_k with zeta^2 = P_max / Psi.
pub fn mrt_precode(estimates: &[CVec], psi: f64, config: &SystemConfig) -> Result<PrecoderSet> {
    if estimates.len() != config.k {
        return Err(Error::DimensionMismatch {
            what: "channel estimates",
            expected: config.k,
            got: estimates.len(),
        });
    }
    if let Some(bad) = estimates.iter().find(|h| h.len() != config.m) {
        return Err(Error::DimensionMismatch {
            what: "estimate length",
            expected: config.m,
            got: bad.len(),
        });
    }
    if !(psi > 0.0 && psi.is_finite()) {
        return Err(Error::Precondition(format!(
            "power normalisation Psi must be positive and finite, got {psi}"
        )));
    }
    let zeta = (config.p_max / psi).sqrt();
    let mut g = CMat::zeros(config.m, config.k);
    for (k, h) in estimates.iter().enumerate() {
        g.set_column(k, &(h * real(zeta)));
    }
    Ok(PrecoderSet { g, zeta, psi })
}

/// Convenience wrapper computing Psi from `model` before precoding.
pub fn mrt_precode_with(
    estimates: &[CVec],
    model: CsiModel<'_>,
    v: &IrsConfig,
    config: &SystemConfig,
) -> Result<PrecoderSet> {
    mrt_precode(estimates, analytic_psi(model, v, config), config)
}

/// Per-user SINR p_k |h_k^H h^_k|^2 / (sum_{l!=k} p_l |h_k^H h^_l|^2 + Psi / rho)
/// given the true effective channels. zeta cancels and is not applied.
pub fn sinr_from_channels(channels: &[CVec], estimates: &[CVec], psi: f64, config: &SystemConfig) -> Vec<f64> {
    let k_users = channels.len();
    let noise = if config.sigma2 == 0.0 { 0.0 } else { psi / config.rho() };
    let p = &config.powers;
    (0..k_users)
        .map(|k| {
            let mut interference = CompensatedSum::default();
            let mut signal = 0.0;
            for (l, est) in estimates.iter().enumerate() {
                let g = p[l] * channels[k].dotc(est).norm_sqr();
                if l == k {
                    signal = g;
                } else {
                    interference.add(g);
                }
            }
            let denom = interference.value() + noise;
            if denom > 0.0 {
                signal / denom
            } else if signal > 0.0 {
                f64::INFINITY
            } else {
                0.0
            }
        })
        .collect()
}

pub fn instantaneous_sinr(
    ch: &ChannelRealization,
    v: &IrsConfig,
    precoders: &PrecoderSet,
    config: &SystemConfig,
) -> Vec<f64> {
    let channels: Vec<CVec> = (0..ch.k()).map(|k| effective_channel(ch, v, k)).collect();
    let estimates: Vec<CVec> = (0..precoders.k()).map(|k| precoders.estimate(k)).collect();
    sinr_from_channels(&channels, &estimates, precoders.psi, config)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub sinr: Vec<f64>,
    pub rate: Vec<f64>,
    pub sum_rate: f64,
    pub net_rate: Vec<f64>,
    pub net_sum_rate: f64,
}

/// Net-rate factor for a protocol: training only costs time when the
/// channel is actually estimated.
pub fn net_factor(protocol: Protocol, config: &SystemConfig) -> f64 {
    match protocol {
        Protocol::Perfect => 1.0,
        Protocol::OnOff | Protocol::De => {
            if config.tau_c >= config.tau {
                log::warn!("training window {} s fills the coherence time {} s; net rate is zero", config.tau_c, config.tau);
            }
            config.overhead_factor()
        }
    }
}

pub fn rates(sinr: &[f64], config: &SystemConfig, protocol: Protocol) -> RateReport {
    let factor = net_factor(protocol, config);
    let rate: Vec<f64> = sinr.iter().map(|g| (1.0 + g.max(0.0)).log2()).collect();
    let net_rate: Vec<f64> = rate.iter().map(|r| r * factor).collect();
    let sum_rate = rate.iter().copied().collect::<CompensatedSum>().value();
    let net_sum_rate = net_rate.iter().copied().collect::<CompensatedSum>().value();
    RateReport {
        sinr: sinr.to_vec(),
        rate,
        sum_rate,
        net_rate,
        net_sum_rate,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{C64, ONE, ZERO};

    fn e(m: usize, i: usize) -> CVec {
        let mut v = CVec::zeros(m);
        v[i] = ONE;
        v
    }

    #[test]
    fn scalar_normalisation() {
        let config = SystemConfig::new(4, 0, 1);
        let gains = LinkGains {
            beta1: 0.0,
            beta2: vec![0.0],
            betad: vec![1.0],
        };
        let h1 = CMat::zeros(4, 0);
        let psi = analytic_psi(CsiModel::Perfect { gains: &gains, h1: &h1 }, &IrsConfig::off(0), &config);
        assert_eq!(psi, 4.0);
        let pre = mrt_precode(&[e(4, 0)], psi, &config).unwrap();
        assert_eq!(pre.zeta, 0.5);

        let mut big = config.clone();
        big.p_max = 4.0;
        let pre4 = mrt_precode(&[e(4, 0)], psi, &big).unwrap();
        assert_eq!(pre4.zeta, 1.0);
        assert_eq!(pre4.g.column(0) / real(2.0), pre.g.column(0));
    }

    #[test]
    fn single_user_closed_form() {
        let config = SystemConfig::new(3, 0, 1).with_powers(vec![1.0]).with_rho(7.0);
        let h = vec![e(3, 0)];
        assert!((sinr_from_channels(&h, &h, 1.0, &config)[0] - 7.0).abs() < 1e-12);
        let noiseless = SystemConfig::new(3, 0, 1).with_rho(f64::INFINITY);
        assert_eq!(sinr_from_channels(&h, &h, 1.0, &noiseless)[0], f64::INFINITY);
    }

    #[test]
    fn orthogonal_users_see_no_interference() {
        let config = SystemConfig::new(4, 0, 2).with_powers(vec![0.3, 0.7]).with_rho(2.0);
        let h = vec![e(4, 0) * real(2.0), e(4, 1) * real(3.0)];
        let psi = 0.3 * 4.0 + 0.7 * 9.0;
        let got = sinr_from_channels(&h, &h, psi, &config);
        assert!((got[0] - 0.3 * 16.0 * 2.0 / psi).abs() < 1e-12);
        assert!((got[1] - 0.7 * 81.0 * 2.0 / psi).abs() < 1e-12);
    }

    #[test]
    fn estimate_scale_invariance() {
        let config = SystemConfig::new(3, 0, 2).with_rho(1.5);
        let h = vec![
            CVec::from_vec(vec![C64::new(1.0, 0.5), C64::new(-0.2, 0.1), ZERO]),
            CVec::from_vec(vec![C64::new(0.3, 0.0), C64::new(1.0, -1.0), C64::new(0.0, 0.4)]),
        ];
        let est = vec![h[0].clone() + e(3, 2) * real(0.1), h[1].clone() * real(0.8)];
        let base = sinr_from_channels(&h, &est, 2.0, &config);
        let c = 3.7;
        let scaled: Vec<CVec> = est.iter().map(|x| x * real(c)).collect();
        let again = sinr_from_channels(&h, &scaled, 2.0 * c * c, &config);
        for (a, b) in base.iter().zip(&again) {
            assert!((a - b).abs() < 1e-12 * a);
        }
    }

    #[test]
    fn rate_values() {
        let mut config = SystemConfig::new(2, 0, 2);
        config.tau_c = 0.01 * config.tau;
        let r = rates(&[1.0, 0.0], &config, Protocol::De);
        assert_eq!(r.rate, vec![1.0, 0.0]);
        assert!((r.net_rate[0] - 0.99).abs() < 1e-15);
        assert_eq!(rates(&[1.0, 0.0], &config, Protocol::Perfect).net_sum_rate, 1.0);
    }

    #[test]
    fn protocol_timing() {
        assert_eq!(Protocol::OnOff.subphases(4), 5);
        assert_eq!(Protocol::De.subphases(4), 1);
        assert!((Protocol::OnOff.subphase_duration(4, 1.0) - 0.2).abs() < 1e-15);
        assert_eq!("onoff".parse::<Protocol>().unwrap(), Protocol::OnOff);
        assert!("zf".parse::<Protocol>().is_err());
    }

    #[test]
    fn bad_psi_rejected() {
        let config = SystemConfig::new(2, 0, 1);
        assert!(mrt_precode(&[e(2, 0)], 0.0, &config).is_err());
        assert!(mrt_precode(&[], 1.0, &config).is_err());
    }
}
