//! Uplink training and MMSE channel estimation.
//!
//! Two protocols are supported:
//!
//! * **ON/OFF**: N+1 sub-phases. The direct channel is estimated with every
//!   element off, then each element is switched on alone and its cascaded
//!   channel h_{0,i,k} is estimated from an observation that still carries the
//!   residual error of the direct estimate.
//! * **Direct estimation (DE)**: one sub-phase, the overall channel h_{k,v} is
//!   estimated for the configuration v used during training.
//!
//! C_tilde (the direct-estimate error covariance) is a scaled identity, so every
//! per-element inverse is a Sherman-Morrison update and every trace involving
//! R_{0,i,k} collapses to a scalar in ||h_{1,i}||^2. Dense matrices are only
//! materialised on request.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::{hpd_inverse, real, scaled_identity, sherman_morrison_inverse, C64, CMat, CVec};
use crate::model::{effective_channel, ChannelRealization, IrsConfig, LinkGains, SystemConfig};
use crate::rng::{complex_normal, tag, Stream};

fn check_dims(config: &SystemConfig, gains: &LinkGains, h1: &CMat) -> Result<()> {
    if gains.k() != config.k {
        return Err(Error::DimensionMismatch {
            what: "users in link gains",
            expected: config.k,
            got: gains.k(),
        });
    }
    if h1.nrows() != config.m || h1.ncols() != config.n {
        return Err(Error::DimensionMismatch {
            what: "H1 shape (M*N)",
            expected: config.m * config.n,
            got: h1.nrows() * h1.ncols(),
        });
    }
    gains.validate()
}

/// Per-user second-order statistics of the ON/OFF protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct OnOffUserStats {
    pub beta_d: f64,
    pub beta_2: f64,
    /// Scalar Wiener gain of the direct filter: R_d Q_d = a I.
    pub direct_gain: f64,
    /// C_tilde = c_tilde I.
    pub c_tilde: f64,
    /// c_tilde + 1/rho_tr, the white part of every per-element observation.
    pub white: f64,
    /// R_{0,i,k} Q_{i,k} = w_i h_{1,i} h_{1,i}^H.
    pub w: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct OnOffStatistics {
    pub m: usize,
    pub rho_tr: f64,
    pub h1: Arc<CMat>,
    /// ||h_{1,i}||^2 for every column of H1.
    pub col_norm2: Vec<f64>,
    pub users: Vec<OnOffUserStats>,
}

pub fn onoff_statistics(config: &SystemConfig, gains: &LinkGains, h1: Arc<CMat>) -> Result<OnOffStatistics> {
    check_dims(config, gains, &h1)?;
    let noise = config.training_noise();
    let col_norm2: Vec<f64> = h1.column_iter().map(|c| c.norm_squared()).collect();
    let mut users = Vec::with_capacity(config.k);
    for k in 0..config.k {
        let (bd, b2) = (gains.betad[k], gains.beta2[k]);
        if bd + noise <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "user {k}: perfect training with zero direct gain makes the direct filter singular"
            )));
        }
        let direct_gain = bd / (bd + noise);
        // R_d - R_d Q_d R_d = bd * noise / (bd + noise), written to stay finite as rho_tr -> inf
        let c_tilde = bd / (config.rho_tr * bd + 1.0);
        let white = c_tilde + noise;
        let w = col_norm2
            .iter()
            .enumerate()
            .map(|(i, &h2)| {
                let denom = white + b2 * h2;
                if denom > 0.0 {
                    Ok(b2 / denom)
                } else if b2 == 0.0 {
                    Ok(0.0)
                } else {
                    Err(Error::InvalidConfig(format!("user {k}, element {i}: singular per-element filter")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        users.push(OnOffUserStats {
            beta_d: bd,
            beta_2: b2,
            direct_gain,
            c_tilde,
            white,
            w,
        });
    }
    Ok(OnOffStatistics {
        m: config.m,
        rho_tr: config.rho_tr,
        h1,
        col_norm2,
        users,
    })
}

impl OnOffStatistics {
    pub fn k(&self) -> usize {
        self.users.len()
    }

    pub fn n(&self) -> usize {
        self.col_norm2.len()
    }

    pub fn r_d(&self, k: usize) -> CMat {
        scaled_identity(self.m, self.users[k].beta_d)
    }

    pub fn q_d(&self, k: usize) -> CMat {
        scaled_identity(self.m, 1.0 / (self.users[k].beta_d + 1.0 / self.rho_tr))
    }

    pub fn c_tilde(&self, k: usize) -> CMat {
        scaled_identity(self.m, self.users[k].c_tilde)
    }

    pub fn r0(&self, i: usize, k: usize) -> CMat {
        let h = self.h1.column(i);
        h * h.adjoint() * real(self.users[k].beta_2)
    }

    /// Q_{i,k} = (C_tilde + R_{0,i,k} + I/rho_tr)^{-1}. Infinite when training
    /// is perfect; use [`Self::r0q`] for the filter itself.
    pub fn q(&self, i: usize, k: usize) -> CMat {
        let u = &self.users[k];
        sherman_morrison_inverse(u.white, u.beta_2, &self.h1.column(i).into_owned())
    }

    /// R_{0,i,k} Q_{i,k}.
    pub fn r0q(&self, i: usize, k: usize) -> CMat {
        let h = self.h1.column(i);
        h * h.adjoint() * real(self.users[k].w[i])
    }

    /// tr(R_{0,i,k} Q_{i,k}).
    pub fn tr_r0q(&self, i: usize, k: usize) -> f64 {
        self.users[k].w[i] * self.col_norm2[i]
    }

    /// tr(R_{0,i,k} R_{0,i,k} Q_{i,k}).
    pub fn tr_r0r0q(&self, i: usize, k: usize) -> f64 {
        let u = &self.users[k];
        u.w[i] * u.beta_2 * self.col_norm2[i] * self.col_norm2[i]
    }

    /// tr(R_d Q_d R_d) = M bd^2 / (bd + 1/rho_tr).
    pub fn tr_direct(&self, k: usize) -> f64 {
        let u = &self.users[k];
        u.direct_gain * u.beta_d * self.m as f64
    }

    /// Coefficient of h_{1,i} h_{1,i}^H in the diagonal part of C_{k,v}:
    /// alpha_i^2 w_i^2 ||h_{1,i}||^2 (beta2 ||h_{1,i}||^2 + 1/rho_tr).
    pub(crate) fn diag_weight(&self, i: usize, k: usize, alpha_i: f64) -> f64 {
        let u = &self.users[k];
        let h2 = self.col_norm2[i];
        alpha_i * alpha_i * u.w[i] * u.w[i] * h2 * (u.beta_2 * h2 + 1.0 / self.rho_tr)
    }

    /// G_k = sum_i v_i R_{0,i,k} Q_{i,k} = H1 diag(v o w_k) H1^H.
    pub(crate) fn weighted_projector(&self, k: usize, v: &IrsConfig) -> CMat {
        let u = &self.users[k];
        let h1 = self.h1.as_ref();
        let mut scaled = h1.clone();
        for (i, mut col) in scaled.column_iter_mut().enumerate() {
            col *= v.v()[i] * u.w[i];
        }
        scaled * h1.adjoint()
    }
}

/// Raw post-correlation training observations of the ON/OFF protocol.
#[derive(Debug, Clone)]
pub struct OnOffObservations {
    /// y^tr_{1,k}: all elements off.
    pub y1: Vec<CVec>,
    /// y~^tr_{i,k} = h~_{d,k} + h_{0,i,k} + n_{i,k} (estimate of h_d already subtracted).
    pub y_tilde: Vec<Vec<CVec>>,
}

/// Simulate the N+1 training sub-phases for every user.
///
/// Noise for user k comes from `stream / TRAINING_NOISE / k`: the first M draws
/// are the first sub-phase (shared with the DE observation for paired
/// comparisons), element i reads the next M.
pub fn onoff_training(ch: &ChannelRealization, stats: &OnOffStatistics, stream: Stream) -> OnOffObservations {
    let (m, n) = (ch.m(), ch.n());
    let noise_var = 1.0 / stats.rho_tr;
    let base = stream.child(tag::TRAINING_NOISE);
    let mut y1 = Vec::with_capacity(ch.k());
    let mut y_tilde = Vec::with_capacity(ch.k());
    for k in 0..ch.k() {
        let mut rng = base.child(k as u64).rng();
        let first = CVec::from_fn(m, |_, _| complex_normal(&mut rng, noise_var)) + &ch.hd[k];
        let hd_err = &ch.hd[k] - &first * real(stats.users[k].direct_gain);
        let per_element = (0..n)
            .map(|i| {
                let noise = CVec::from_fn(m, |_, _| complex_normal(&mut rng, noise_var));
                ch.h1.column(i) * ch.h2[k][i] + &hd_err + noise
            })
            .collect();
        y1.push(first);
        y_tilde.push(per_element);
    }
    OnOffObservations { y1, y_tilde }
}

/// ON/OFF MMSE estimates. Every h^_{0,i,k} lies on h_{1,i}, so only its
/// coefficient is stored.
#[derive(Debug, Clone)]
pub struct OnOffEstimate {
    pub hd_hat: Vec<CVec>,
    /// h^_{0,i,k} = coef[k][i] * h_{1,i}.
    pub coef: Vec<Vec<C64>>,
    pub h1: Arc<CMat>,
}

impl OnOffEstimate {
    pub fn cascaded(&self, k: usize, i: usize) -> CVec {
        self.h1.column(i) * self.coef[k][i]
    }

    /// h^_{k,v} = h^_{d,k} + sum_i h^_{0,i,k} v_i.
    pub fn aggregate(&self, k: usize, v: &IrsConfig) -> CVec {
        let weights = CVec::from_iterator(
            self.coef[k].len(),
            self.coef[k].iter().zip(v.v().iter()).map(|(c, vi)| c * vi),
        );
        &self.hd_hat[k] + self.h1.as_ref() * weights
    }
}

pub fn onoff_estimate(obs: &OnOffObservations, stats: &OnOffStatistics) -> OnOffEstimate {
    let hd_hat = obs
        .y1
        .iter()
        .zip(&stats.users)
        .map(|(y, u)| y * real(u.direct_gain))
        .collect();
    let coef = obs
        .y_tilde
        .iter()
        .zip(&stats.users)
        .map(|(ys, u)| {
            ys.iter()
                .enumerate()
                .map(|(i, y)| stats.h1.column(i).dotc(y) * u.w[i])
                .collect()
        })
        .collect();
    OnOffEstimate {
        hd_hat,
        coef,
        h1: stats.h1.clone(),
    }
}

/// Covariance C_{k,v} of the aggregate ON/OFF estimate.
pub fn estimate_covariance_onoff(stats: &OnOffStatistics, v: &IrsConfig, k: usize) -> CMat {
    let u = &stats.users[k];
    let h1 = stats.h1.as_ref();
    let mut scaled = h1.clone();
    for (i, mut col) in scaled.column_iter_mut().enumerate() {
        col *= real(stats.diag_weight(i, k, v.alpha()[i]));
    }
    let g = stats.weighted_projector(k, v);
    let mut c = scaled * h1.adjoint() + &g * g.adjoint() * real(u.c_tilde);
    for d in 0..stats.m {
        c[(d, d)] += real(u.direct_gain * u.beta_d);
    }
    c
}

/// tr(C_{k,v}) in O(N) without forming the matrix... apart from the coherent
/// cross term, which needs ||G_k||_F^2.
pub fn trace_covariance_onoff(stats: &OnOffStatistics, v: &IrsConfig, k: usize) -> f64 {
    let u = &stats.users[k];
    let diag: f64 = (0..stats.n())
        .map(|i| stats.diag_weight(i, k, v.alpha()[i]) * stats.col_norm2[i])
        .sum();
    let g = stats.weighted_projector(k, v);
    stats.tr_direct(k) + diag + u.c_tilde * g.norm_squared()
}

/// Statistics of the direct-estimation protocol for amplitudes alpha.
#[derive(Debug, Clone, PartialEq)]
pub struct DeUserStats {
    pub beta_d: f64,
    pub beta_2: f64,
    /// R_{k,alpha} = bd I + b2 H1 diag(alpha)^2 H1^H.
    pub r: CMat,
    /// Q_{k,alpha} = (R_{k,alpha} + I/rho_tr)^{-1}.
    pub q: CMat,
    /// R_{k,alpha} Q_{k,alpha}.
    pub filter: CMat,
}

#[derive(Debug, Clone)]
pub struct DeStatistics {
    pub m: usize,
    pub rho_tr: f64,
    pub alpha: Vec<f64>,
    /// H1 diag(alpha)^2 H1^H, shared by all users.
    pub reflect_gram: CMat,
    pub users: Vec<DeUserStats>,
}

pub fn de_statistics(config: &SystemConfig, gains: &LinkGains, h1: &CMat) -> Result<DeStatistics> {
    check_dims(config, gains, h1)?;
    let mut scaled = h1.clone();
    for (i, mut col) in scaled.column_iter_mut().enumerate() {
        col *= real(config.alpha[i] * config.alpha[i]);
    }
    let reflect_gram = crate::linalg::hermitian_part(&(scaled * h1.adjoint()));
    let noise = config.training_noise();
    let users = (0..config.k)
        .map(|k| {
            let (bd, b2) = (gains.betad[k], gains.beta2[k]);
            let mut r = &reflect_gram * real(b2);
            for d in 0..config.m {
                r[(d, d)] += real(bd);
            }
            let mut loaded = r.clone();
            for d in 0..config.m {
                loaded[(d, d)] += real(noise);
            }
            let q = hpd_inverse(&loaded, "R_k,alpha + I/rho_tr")?;
            let filter = &r * &q;
            Ok(DeUserStats {
                beta_d: bd,
                beta_2: b2,
                r,
                q,
                filter,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DeStatistics {
        m: config.m,
        rho_tr: config.rho_tr,
        alpha: config.alpha.clone(),
        reflect_gram,
        users,
    })
}

impl DeStatistics {
    pub fn k(&self) -> usize {
        self.users.len()
    }

    /// Covariance of the DE estimate, R Q R.
    pub fn estimate_covariance(&self, k: usize) -> CMat {
        let u = &self.users[k];
        &u.filter * &u.r
    }
}

/// DE training observation y^tr_{k,v} = h_{k,v} + n_k for every user, with
/// `v_train` applied at the IRS during training.
pub fn de_training(ch: &ChannelRealization, v_train: &IrsConfig, rho_tr: f64, stream: Stream) -> Vec<CVec> {
    let noise_var = 1.0 / rho_tr;
    let base = stream.child(tag::TRAINING_NOISE);
    (0..ch.k())
        .map(|k| {
            let mut rng = base.child(k as u64).rng();
            let noise = CVec::from_fn(ch.m(), |_, _| complex_normal(&mut rng, noise_var));
            effective_channel(ch, v_train, k) + noise
        })
        .collect()
}

/// h^DE_{k,v} = R_{k,alpha} Q_{k,alpha} y^tr_{k,v}.
pub fn de_estimate(y_tr: &CVec, stats: &DeStatistics, k: usize) -> CVec {
    &stats.users[k].filter * y_tr
}

/// Normalised MSE tr(R - R Q R^H) / tr(R) of the DE estimate.
pub fn de_nmse(stats: &DeStatistics, k: usize) -> f64 {
    let u = &stats.users[k];
    let tr_r = u.r.trace().re;
    let tr_rqr = stats.estimate_covariance(k).trace().re;
    ((tr_r - tr_rqr) / tr_r).clamp(0.0, 1.0)
}
