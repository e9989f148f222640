use num_complex::Complex64;

use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::system::{steering_vector, BeamformingSolution, ChannelSample};

fn norm(x: &[Complex64]) -> f64 {
    x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Conjugate (maximum-ratio) beamforming toward every user, power split
/// equally across users at each AP. Sensing beams stay zero.
///
/// A user with an all-zero channel at some AP gets no beam there and its
/// share goes to the remaining users of that AP.
pub fn cb_comm(config: &SystemConfig, sample: &ChannelSample) -> Result<BeamformingSolution> {
    config.validate()?;
    sample.check_dims(config)?;
    let mut sol = BeamformingSolution::zeros(config);
    for m in 0..config.ap_count {
        let norms: Vec<f64> = (0..config.ue_count).map(|u| norm(sample.h(m, u))).collect();
        let active = norms.iter().filter(|n| **n > 0.0).count();
        if active == 0 {
            continue;
        }
        let amp = (config.ap_power / active as f64).sqrt();
        for (u, &n) in norms.iter().enumerate() {
            if n == 0.0 {
                continue;
            }
            let h = sample.h(m, u);
            for (dst, z) in sol.beam_mut(m, u).iter_mut().zip(h) {
                *dst = z * (amp / n);
            }
        }
    }
    Ok(sol)
}

/// Full per-AP power on a single sensing beam steered at the target.
pub fn cb_sense(config: &SystemConfig, sample: &ChannelSample) -> Result<BeamformingSolution> {
    config.validate()?;
    sample.check_dims(config)?;
    if config.sensing_streams != 1 {
        return Err(Error::config(
            "Q",
            "sensing baseline needs exactly one sensing stream",
        ));
    }
    let mut sol = BeamformingSolution::zeros(config);
    let q = config.ue_count;
    for m in 0..config.ap_count {
        let a = steering_vector(sample.theta()[m], config.tx_antennas)?;
        let scale = config.ap_power.sqrt() / norm(&a);
        for (dst, z) in sol.beam_mut(m, q).iter_mut().zip(&a) {
            *dst = z * scale;
        }
    }
    Ok(sol)
}
