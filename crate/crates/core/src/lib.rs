//! IRS-assisted massive MIMO uplink/downlink simulation core.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod asymptotics;
pub mod estimation;
pub mod linalg;
pub mod model;
pub mod montecarlo;
pub mod phase_opt;
pub mod report;
pub mod rng;
pub mod scenarios;
pub mod transceiver;

pub use error::{Error, Result};
pub use linalg::{C64, CMat, CVec};
pub use model::{
    ArcPlacement, ChannelRealization, Geometry, IrsConfig, LinkGains, PathLossModel, SystemConfig,
};
pub use rng::Stream;
