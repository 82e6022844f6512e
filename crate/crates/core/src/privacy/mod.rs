//! DP-SGD primitives and Rényi-DP accounting.

mod dp;
mod rdp;

pub use dp::{clip, mean_gradient, privatize, AutoTag, DPConfig, NoiseMode, NoiseSetting};
pub use rdp::{
    calibrate_sigma, calibrate_sigma_with_base, rdp_subsampled_gaussian, PrivacyLedger, RDP_ORDERS,
    SIGMA_CAP,
};

use crate::error::Result;

/// Number of Gaussian releases in the class-statistics step: sums, sums of
/// squares and counts.
pub const STATS_RELEASES: usize = 3;

/// Ledger of one client's class-statistics release; empty when DP is off.
pub fn stats_release_ledger(cfg: &DPConfig) -> Result<PrivacyLedger> {
    let mut l = PrivacyLedger::new();
    if cfg.enabled {
        l.rdp_steps(1.0, cfg.stats_noise_multiplier, STATS_RELEASES)?;
    }
    Ok(l)
}
