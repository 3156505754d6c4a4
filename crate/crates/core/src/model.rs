//! Scenario description, path loss and channel generation.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{real, C64, CMat, CVec, ONE, ZERO};
use crate::rng::{complex_normal, tag, Stream};

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// Scalar parameters of one downlink scenario.
///
/// `sigma2 == 0` encodes a noiseless downlink (rho = infinity) and
/// `rho_tr == f64::INFINITY` perfect training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    /// BS antennas.
    pub m: usize,
    /// IRS elements.
    pub n: usize,
    /// Users.
    pub k: usize,
    /// Total transmit power budget (W).
    pub p_max: f64,
    /// Downlink noise power (W).
    pub sigma2: f64,
    /// Effective training SNR of one sub-phase (linear).
    pub rho_tr: f64,
    /// Coherence time (s).
    pub tau: f64,
    /// Training window (s).
    pub tau_c: f64,
    /// Per-user power allocation.
    pub powers: Vec<f64>,
    /// IRS amplitude reflection coefficients.
    pub alpha: Vec<f64>,
}

impl SystemConfig {
    /// Defaults: P_max = 1 W, rho = 0 dB, rho_tr = 8 dB, tau = 20 ms,
    /// tau_c = 0.01 tau, p_k = 1/K, alpha_n = 1.
    pub fn new(m: usize, n: usize, k: usize) -> Self {
        SystemConfig {
            m,
            n,
            k,
            p_max: 1.0,
            sigma2: 1.0,
            rho_tr: db_to_linear(8.0),
            tau: 20e-3,
            tau_c: 0.2e-3,
            powers: vec![1.0 / k.max(1) as f64; k],
            alpha: vec![1.0; n],
        }
    }

    pub fn rho(&self) -> f64 {
        if self.sigma2 == 0.0 {
            f64::INFINITY
        } else {
            self.p_max / self.sigma2
        }
    }

    pub fn with_rho(mut self, rho: f64) -> Self {
        self.sigma2 = if rho.is_infinite() { 0.0 } else { self.p_max / rho };
        self
    }

    pub fn with_rho_db(self, rho_db: f64) -> Self {
        self.with_rho(db_to_linear(rho_db))
    }

    pub fn with_rho_tr(mut self, rho_tr: f64) -> Self {
        self.rho_tr = rho_tr;
        self
    }

    pub fn with_rho_tr_db(self, rho_tr_db: f64) -> Self {
        self.with_rho_tr(db_to_linear(rho_tr_db))
    }

    pub fn with_alpha(mut self, alpha: Vec<f64>) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_powers(mut self, powers: Vec<f64>) -> Self {
        self.powers = powers;
        self
    }

    /// Noise term 1/rho_tr, zero for perfect training.
    pub fn training_noise(&self) -> f64 {
        1.0 / self.rho_tr
    }

    /// Net-rate factor (1 - tau_c / tau), clamped at zero.
    pub fn overhead_factor(&self) -> f64 {
        (1.0 - self.tau_c / self.tau).max(0.0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.m == 0 {
            return bad("M must be at least 1".into());
        }
        if self.powers.len() != self.k {
            return bad(format!("power vector has {} entries, K = {}", self.powers.len(), self.k));
        }
        if self.alpha.len() != self.n {
            return bad(format!("alpha vector has {} entries, N = {}", self.alpha.len(), self.n));
        }
        if !(self.p_max > 0.0 && self.p_max.is_finite()) {
            return bad(format!("P_max must be positive, got {}", self.p_max));
        }
        if !(self.sigma2 >= 0.0 && self.sigma2.is_finite()) {
            return bad(format!("noise power must be non-negative, got {}", self.sigma2));
        }
        if !(self.rho_tr > 0.0) {
            return bad(format!("training SNR must be positive, got {}", self.rho_tr));
        }
        if !(self.tau > 0.0 && self.tau_c > 0.0) {
            return bad("tau and tau_c must be positive".into());
        }
        if self.tau_c >= self.tau {
            return bad("tau_c must be < tau".into());
        }
        if let Some(p) = self.powers.iter().find(|p| !(**p >= 0.0 && p.is_finite())) {
            return bad(format!("per-user powers must be non-negative, got {p}"));
        }
        if let Some(a) = self.alpha.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return bad(format!("alpha entries must lie in [0, 1], got {a}"));
        }
        Ok(())
    }
}

/// Arc placement of users: uniform angular gap over `span_deg`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArcPlacement {
    pub radius: f64,
    pub span_deg: (f64, f64),
}

/// Node positions in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub bs: [f64; 3],
    pub irs: [f64; 3],
    pub users: Vec<[f64; 3]>,
}

impl Geometry {
    /// Users on a ground-level arc centred at the origin; single user at the
    /// arc midpoint. The IRS x-coordinate is the mean user x-coordinate.
    pub fn arc(k: usize, arc: ArcPlacement, bs: [f64; 3], irs_height: f64) -> Self {
        let users = arc_angles_deg(k, arc.span_deg)
            .into_iter()
            .map(|deg| {
                let a = deg.to_radians();
                [arc.radius * a.cos(), arc.radius * a.sin(), 0.0]
            })
            .collect::<Vec<_>>();
        let x_bar = if users.is_empty() {
            0.0
        } else {
            users.iter().map(|u| u[0]).sum::<f64>() / users.len() as f64
        };
        Geometry {
            bs,
            irs: [x_bar, 0.0, irs_height],
            users,
        }
    }

    /// BS at (0,0,25), IRS at height 40, arc of radius 150 m over -30..30 deg.
    pub fn reference(k: usize) -> Self {
        Geometry::arc(
            k,
            ArcPlacement {
                radius: 150.0,
                span_deg: (-30.0, 30.0),
            },
            [0.0, 0.0, 25.0],
            40.0,
        )
    }
}

pub fn arc_angles_deg(k: usize, span: (f64, f64)) -> Vec<f64> {
    match k {
        0 => Vec::new(),
        1 => vec![0.5 * (span.0 + span.1)],
        _ => {
            let gap = (span.1 - span.0) / (k - 1) as f64;
            (0..k).map(|i| span.0 + gap * i as f64).collect()
        }
    }
}

fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// beta = g0 / d^eta with a per-link exponent; `g0` is the linear gain at 1 m.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathLossModel {
    pub g0: f64,
    pub eta_h1: f64,
    pub eta_h2: f64,
    pub eta_hd: f64,
}

impl PathLossModel {
    /// A reference *loss* of `c0_db` dB at 1 m, i.e. g0 = 10^(-c0_db/10).
    pub fn from_reference_loss_db(c0_db: f64, eta_h1: f64, eta_h2: f64, eta_hd: f64) -> Self {
        PathLossModel {
            g0: db_to_linear(-c0_db),
            eta_h1,
            eta_h2,
            eta_hd,
        }
    }

    /// 30 dB reference loss; exponents 2 (BS-IRS), 2.8 (IRS-user), 3.5 (BS-user).
    pub fn reference() -> Self {
        Self::from_reference_loss_db(30.0, 2.0, 2.8, 3.5)
    }

    pub fn gain(&self, d: f64, eta: f64) -> f64 {
        self.g0 / d.powf(eta)
    }
}

/// Large-scale gains of every link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkGains {
    pub beta1: f64,
    pub beta2: Vec<f64>,
    pub betad: Vec<f64>,
}

impl LinkGains {
    pub fn k(&self) -> usize {
        self.betad.len()
    }

    /// Divide the user-side gains (IRS-user and BS-user) by `reference`.
    ///
    /// Both the direct and the cascaded channel of every user scale by the same
    /// factor, so this re-expresses SNRs relative to `reference` without
    /// changing any channel geometry.
    pub fn referenced_to(&self, reference: f64) -> LinkGains {
        LinkGains {
            beta1: self.beta1,
            beta2: self.beta2.iter().map(|b| b / reference).collect(),
            betad: self.betad.iter().map(|b| b / reference).collect(),
        }
    }

    pub fn mean_direct_gain(&self) -> f64 {
        self.betad.iter().sum::<f64>() / self.betad.len().max(1) as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.beta2.len() != self.betad.len() {
            return Err(Error::DimensionMismatch {
                what: "beta2 vs betad",
                expected: self.betad.len(),
                got: self.beta2.len(),
            });
        }
        let all = std::iter::once(&self.beta1).chain(&self.beta2).chain(&self.betad);
        if let Some(b) = all.into_iter().find(|b| !(**b >= 0.0 && b.is_finite())) {
            return Err(Error::InvalidConfig(format!("link gain must be finite and >= 0, got {b}")));
        }
        Ok(())
    }
}

pub fn compute_link_gains(geometry: &Geometry, pathloss: &PathLossModel) -> Result<LinkGains> {
    let check = |d: f64, link: String| {
        if d > 0.0 && d.is_finite() {
            Ok(d)
        } else {
            Err(Error::DegenerateGeometry { link })
        }
    };
    let d1 = check(distance(&geometry.bs, &geometry.irs), "BS-IRS".into())?;
    let mut beta2 = Vec::with_capacity(geometry.users.len());
    let mut betad = Vec::with_capacity(geometry.users.len());
    for (k, u) in geometry.users.iter().enumerate() {
        let d2 = check(distance(&geometry.irs, u), format!("IRS-user {k}"))?;
        let dd = check(distance(&geometry.bs, u), format!("BS-user {k}"))?;
        beta2.push(pathloss.gain(d2, pathloss.eta_h2));
        betad.push(pathloss.gain(dd, pathloss.eta_hd));
    }
    Ok(LinkGains {
        beta1: pathloss.gain(d1, pathloss.eta_h1),
        beta2,
        betad,
    })
}

const GOLDEN_FRACTION: f64 = 0.618_033_988_749_894_9;

fn wrap_direction_cosine(u: f64) -> f64 {
    (u + 1.0).rem_euclid(2.0) - 1.0
}

/// Deterministic full-rank line-of-sight BS-IRS channel.
///
/// Entry (m, n) is sqrt(beta1) * exp(j*pi*(m*u_n + n*u_irs)) for half-wavelength
/// spaced ULAs. u_irs is the direction cosine of the BS seen from the IRS array
/// axis (x); u_n is the departure direction cosine at the BS array axis (z),
/// shifted per element by a golden-ratio sequence so the columns spread over
/// [-1, 1) and the matrix has rank min(M, N).
pub fn generate_h1_los(m: usize, n: usize, beta1: f64, geometry: &Geometry) -> Result<CMat> {
    if m == 0 {
        return Err(Error::InvalidConfig("M must be at least 1".into()));
    }
    let d = distance(&geometry.bs, &geometry.irs);
    if !(d > 0.0) {
        return Err(Error::DegenerateGeometry { link: "BS-IRS".into() });
    }
    let u_bs = (geometry.irs[2] - geometry.bs[2]) / d;
    let u_irs = (geometry.bs[0] - geometry.irs[0]) / d;
    let amp = beta1.sqrt();
    let u: Vec<f64> = (0..n)
        .map(|col| wrap_direction_cosine(u_bs + 2.0 * (col as f64 * GOLDEN_FRACTION).fract()))
        .collect();
    Ok(CMat::from_fn(m, n, |row, col| {
        C64::from_polar(amp, PI * (row as f64 * u[col] + col as f64 * u_irs))
    }))
}

/// sqrt(beta1 * N) times the leading M rows of an N x N unitary matrix.
pub fn h1_from_unitary(unitary: &CMat, m: usize, beta1: f64) -> Result<CMat> {
    let n = unitary.nrows();
    if m > n {
        return Err(Error::Precondition(format!("special case needs M <= N, got M = {m}, N = {n}")));
    }
    Ok(unitary.rows(0, m).into_owned() * real((beta1 * n as f64).sqrt()))
}

/// Haar-distributed unitary matrix (QR of a complex Gaussian matrix with the
/// phases of R's diagonal absorbed into Q).
pub fn haar_unitary(n: usize, stream: Stream) -> CMat {
    let mut rng = stream.rng();
    let g = CMat::from_fn(n, n, |_, _| complex_normal(&mut rng, 1.0));
    let qr = g.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..n {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { ONE };
        let mut col = q.column_mut(j);
        col *= phase;
    }
    q
}

/// Unitary-row BS-IRS channel of the analytical special case: H1 H1^H = beta1 N I_M.
pub fn generate_h1_unitary(m: usize, n: usize, beta1: f64, seed: u64) -> Result<CMat> {
    if m > n {
        return Err(Error::Precondition(format!("special case needs M <= N, got M = {m}, N = {n}")));
    }
    let u = haar_unitary(n, Stream::new(seed).child(tag::UNITARY));
    h1_from_unitary(&u, m, beta1)
}

/// One draw of every channel in the system.
#[derive(Debug, Clone)]
pub struct ChannelRealization {
    pub h1: Arc<CMat>,
    pub h2: Vec<CVec>,
    pub hd: Vec<CVec>,
}

impl ChannelRealization {
    pub fn m(&self) -> usize {
        self.h1.nrows()
    }

    pub fn n(&self) -> usize {
        self.h1.ncols()
    }

    pub fn k(&self) -> usize {
        self.hd.len()
    }
}

/// Draw the Rayleigh user channels h2_k ~ CN(0, beta2_k I_N) and
/// hd_k ~ CN(0, betad_k I_M). User k always reads the stream
/// `stream / CHANNEL / k`, so adding users never changes existing draws.
pub fn sample_user_channels(stream: Stream, gains: &LinkGains, h1: Arc<CMat>) -> ChannelRealization {
    let (m, n) = (h1.nrows(), h1.ncols());
    let base = stream.child(tag::CHANNEL);
    let (h2, hd) = gains
        .beta2
        .iter()
        .zip(&gains.betad)
        .enumerate()
        .map(|(k, (&b2, &bd))| {
            let mut rng = base.child(k as u64).rng();
            let h2 = CVec::from_fn(n, |_, _| complex_normal(&mut rng, b2));
            let hd = CVec::from_fn(m, |_, _| complex_normal(&mut rng, bd));
            (h2, hd)
        })
        .unzip();
    ChannelRealization { h1, h2, hd }
}

/// IRS reflect vector v with v_n = alpha_n exp(j theta_n).
#[derive(Debug, Clone, PartialEq)]
pub struct IrsConfig {
    v: CVec,
    alpha: Vec<f64>,
}

impl IrsConfig {
    pub fn from_phases(alpha: &[f64], theta: &[f64]) -> Self {
        assert_eq!(alpha.len(), theta.len(), "alpha/theta length mismatch");
        let v = CVec::from_iterator(
            alpha.len(),
            alpha.iter().zip(theta).map(|(&a, &t)| C64::from_polar(a, t)),
        );
        IrsConfig {
            v,
            alpha: alpha.to_vec(),
        }
    }

    /// All phases zero: v = alpha.
    pub fn zero_phase(alpha: &[f64]) -> Self {
        IrsConfig {
            v: CVec::from_iterator(alpha.len(), alpha.iter().map(|&a| real(a))),
            alpha: alpha.to_vec(),
        }
    }

    /// All elements off.
    pub fn off(n: usize) -> Self {
        IrsConfig {
            v: CVec::from_element(n, ZERO),
            alpha: vec![0.0; n],
        }
    }

    /// Trust the caller that |v_n| equals alpha_n; used by the projection.
    pub(crate) fn from_parts(v: CVec, alpha: Vec<f64>) -> Self {
        IrsConfig { v, alpha }
    }

    /// Uniformly random phases from the 2^bits-level grid.
    pub fn random_discrete<R: Rng + ?Sized>(alpha: &[f64], bits: u32, rng: &mut R) -> Self {
        let levels = 1u64 << bits;
        let theta: Vec<f64> = alpha
            .iter()
            .map(|_| 2.0 * PI * rng.random_range(0..levels) as f64 / levels as f64)
            .collect();
        Self::from_phases(alpha, &theta)
    }

    /// Uniformly random continuous phases.
    pub fn random_continuous<R: Rng + ?Sized>(alpha: &[f64], rng: &mut R) -> Self {
        let theta: Vec<f64> = alpha.iter().map(|_| rng.random_range(0.0..2.0 * PI)).collect();
        Self::from_phases(alpha, &theta)
    }

    pub fn v(&self) -> &CVec {
        &self.v
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn theta(&self) -> Vec<f64> {
        self.v.iter().map(|z| z.arg()).collect()
    }

    pub fn n(&self) -> usize {
        self.v.len()
    }

    /// Unit-modulus part v_n / alpha_n (phase 0 for switched-off elements).
    pub fn unit_phasors(&self) -> CVec {
        CVec::from_iterator(
            self.n(),
            self.v.iter().zip(&self.alpha).map(|(z, &a)| {
                if a > 0.0 {
                    z / a
                } else {
                    ONE
                }
            }),
        )
    }
}

/// h_{k,v} = hd_k + H1 diag(v) h2_k.
pub fn effective_channel(ch: &ChannelRealization, v: &IrsConfig, k: usize) -> CVec {
    let weighted = v.v().component_mul(&ch.h2[k]);
    &ch.hd[k] + ch.h1.as_ref() * weighted
}

/// H_{0,k} = H1 diag(h2_k): column i is the channel through element i alone.
pub fn cascaded_channel_matrix(ch: &ChannelRealization, k: usize) -> CMat {
    let mut out = ch.h1.as_ref().clone();
    for (i, mut col) in out.column_iter_mut().enumerate() {
        col *= ch.h2[k][i];
    }
    out
}
