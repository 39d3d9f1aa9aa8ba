//! Log-distance path loss, received power and SINR.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reference distance of the path-loss model (m).
pub const D0: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadioParams {
    /// Path loss at the reference distance (dB).
    pub pl0: f64,
    pub n_pl: f64,
    pub shadow_sigma: f64,
    pub d_corr: f64,
    pub noise_floor: f64,
    /// Per-sample Gaussian measurement noise on RSRP and SINR (dB).
    pub meas_noise: f64,
}

impl Default for RadioParams {
    fn default() -> Self {
        RadioParams {
            pl0: 40.0,
            n_pl: 2.5,
            shadow_sigma: 4.0,
            d_corr: 10.0,
            noise_floor: -100.0,
            meas_noise: 0.5,
        }
    }
}

impl RadioParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.n_pl > 0.0) {
            return Err(Error::config("radio.n_pl", "must be positive"));
        }
        if !(self.shadow_sigma >= 0.0) {
            return Err(Error::config("radio.shadow_sigma", "must be nonnegative"));
        }
        if !(self.d_corr > 0.0) {
            return Err(Error::config("radio.d_corr", "must be positive"));
        }
        if !(self.meas_noise >= 0.0) {
            return Err(Error::config("radio.meas_noise", "must be nonnegative"));
        }
        if !(self.pl0.is_finite() && self.noise_floor.is_finite()) {
            return Err(Error::config("radio.pl0", "must be finite"));
        }
        Ok(())
    }
}

pub fn path_loss(distance: f64, radio: &RadioParams) -> f64 {
    radio.pl0 + 10.0 * radio.n_pl * (distance.max(D0) / D0).log10()
}

/// Noiseless RSRP (dBm) at `x` from a station at `position`, shadowing included.
pub fn rsrp_at(
    x: &[f64],
    position: &[f64],
    tx_power: f64,
    shadow: f64,
    radio: &RadioParams,
) -> f64 {
    let distance = x
        .iter()
        .zip(position)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    tx_power - path_loss(distance, radio) - shadow
}

pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

/// SINR (dB) of station `serving` given every station's RSRP (dBm).
pub fn sinr_db(serving: usize, rsrp: &[f64], noise_floor: f64) -> f64 {
    let interference: f64 = rsrp
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != serving)
        .map(|(_, p)| dbm_to_mw(*p))
        .sum();
    10.0 * (dbm_to_mw(rsrp[serving]) / (interference + dbm_to_mw(noise_floor))).log10()
}
