//! Joint unicast and multi-group multicast massive MIMO downlink.
//!
//! The crate evaluates the closed-form achievable spectral efficiencies of a
//! single-cell system that serves `U` unicast terminals and `G` multicast
//! groups (one shared uplink pilot per group) under maximum-ratio (MRT) and
//! zero-forcing (ZF) precoding. On top of those expressions it provides:
//!
//! - [`allocation`]: the closed-form optimal max-min-fair multicast allocation
//!   and the weighted sum-SE water-filling allocation for unicast,
//! - [`pareto`]: the strong Pareto boundary of the two objectives, traced by the
//!   unicast/multicast power split,
//! - [`montecarlo`]: a link-level simulation that draws Rayleigh channels,
//!   performs MMSE estimation and builds the actual precoders in order to check
//!   every closed form empirically,
//! - [`scenario`]: random cell drops with distance-based path loss and the
//!   physical-to-normalized power conversion.
//!
//! All powers handled by [`model`], [`se`], [`allocation`] and [`pareto`] are
//! normalized to unit noise variance.

pub mod allocation;
pub mod error;
pub mod model;
pub mod montecarlo;
pub mod pareto;
pub mod scenario;
pub mod se;

pub use error::{Error, Result};
pub use model::{
    estimation_variances, validate_config, EstimationStats, FadingProfile, PilotPowers,
    PowerSplit, SystemConfig,
};
pub use se::{DownlinkPowers, Precoder, SeReport};
