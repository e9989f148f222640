//! Scenario configuration shared by every module.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// All scenario scalars of one cell-free ISAC deployment.
///
/// Field names on disk follow the usual symbols (`M`, `U`, `N_t`, ...) so
/// configuration files read like the system model they describe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    /// Number of access points.
    #[serde(rename = "M")]
    pub ap_count: usize,
    /// Number of single-antenna users.
    #[serde(rename = "U")]
    pub ue_count: usize,
    /// Number of dedicated sensing streams (0 or 1).
    #[serde(rename = "Q")]
    pub sensing_streams: usize,
    /// Transmit antennas per AP.
    #[serde(rename = "N_t")]
    pub tx_antennas: usize,
    /// Receive antennas per AP. Carried for completeness, no metric uses it.
    #[serde(rename = "N_r")]
    pub rx_antennas: usize,
    /// Per-AP power budget in watts, identical across APs.
    #[serde(rename = "P")]
    pub ap_power: f64,
    /// Noise variance at every user.
    #[serde(rename = "sigma2_c")]
    pub ue_noise_var: f64,
    /// Radar receiver noise variance at every AP.
    #[serde(rename = "sigma2_r")]
    pub radar_noise_var: f64,
    /// Weight of the sensing log-term in the joint objective.
    #[serde(rename = "beta_s")]
    pub sensing_weight: f64,
    pub seed: u64,
}

impl Default for SystemConfig {
    /// M=5 APs sharing unit total power, U=2, one sensing stream, N_t=8,
    /// unit-variance channels at a system SNR of 10 dB.
    fn default() -> Self {
        SystemConfig {
            ap_count: 5,
            ue_count: 2,
            sensing_streams: 1,
            tx_antennas: 8,
            rx_antennas: 8,
            ap_power: 1.0 / 5.0,
            ue_noise_var: 0.1,
            radar_noise_var: 0.1,
            sensing_weight: 0.0,
            seed: 0,
        }
    }
}

impl SystemConfig {
    /// Total number of streams, users first then sensing.
    pub fn streams(&self) -> usize {
        self.ue_count + self.sensing_streams
    }

    /// Same scenario with `m` APs and the total power budget kept at
    /// `m * ap_power` of the original, i.e. `P_m = total / m`.
    pub fn with_ap_count(&self, m: usize) -> SystemConfig {
        let total = self.ap_power * self.ap_count as f64;
        SystemConfig {
            ap_count: m,
            ap_power: total / m.max(1) as f64,
            ..*self
        }
    }

    pub fn with_sensing_weight(&self, beta: f64) -> SystemConfig {
        SystemConfig {
            sensing_weight: beta,
            ..*self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ap_count == 0 {
            return Err(Error::config("M", "need at least one AP"));
        }
        if self.ue_count == 0 {
            return Err(Error::config("U", "need at least one UE"));
        }
        if self.sensing_streams > 1 {
            return Err(Error::config(
                "Q",
                "only 0 or 1 sensing streams are supported",
            ));
        }
        if self.tx_antennas == 0 {
            return Err(Error::config("N_t", "need at least one transmit antenna"));
        }
        if !(self.ap_power.is_finite() && self.ap_power > 0.0) {
            return Err(Error::config("P", "per-AP power must be positive"));
        }
        if !(self.ue_noise_var.is_finite() && self.ue_noise_var > 0.0) {
            return Err(Error::config("sigma2_c", "noise variance must be positive"));
        }
        if !(self.radar_noise_var.is_finite() && self.radar_noise_var > 0.0) {
            return Err(Error::config("sigma2_r", "noise variance must be positive"));
        }
        if !(self.sensing_weight.is_finite() && self.sensing_weight >= 0.0) {
            return Err(Error::config(
                "beta_s",
                "sensing weight must be nonnegative",
            ));
        }
        Ok(())
    }
}
