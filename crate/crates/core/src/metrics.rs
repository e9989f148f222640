//! Communication rates, sensing SNR and the weighted joint objective.

use num_complex::Complex64;
use serde::Serialize;

use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::system::{steering_vector, BeamformingSolution, ChannelSample};

/// Everything measured for one (sample, solution) pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    /// Per-user rates in bits/s/Hz.
    pub rates: Vec<f64>,
    /// Linear sensing SNR.
    pub sensing_snr: f64,
    /// `log2(1 + sensing_snr)`.
    pub sensing_rate_term: f64,
    pub objective: f64,
    pub per_ap_power: Vec<f64>,
}

impl MetricsReport {
    pub fn sum_rate(&self) -> f64 {
        self.rates.iter().sum()
    }
}

fn inner(h: &[Complex64], f: &[Complex64]) -> Complex64 {
    h.iter().zip(f).map(|(a, b)| a.conj() * b).sum()
}

fn check(
    config: &SystemConfig,
    sample: &ChannelSample,
    solution: &BeamformingSolution,
) -> Result<()> {
    sample.check_dims(config)?;
    solution.check_dims(config)
}

/// `g[u][s] = sum_m h_mu^H f_ms`, the coherent gain of stream `s` at user `u`.
fn link_gains(
    config: &SystemConfig,
    sample: &ChannelSample,
    solution: &BeamformingSolution,
) -> Vec<Complex64> {
    let s_count = config.streams();
    let mut g = vec![Complex64::default(); config.ue_count * s_count];
    for u in 0..config.ue_count {
        for s in 0..s_count {
            g[u * s_count + s] = (0..config.ap_count)
                .map(|m| inner(sample.h(m, u), solution.beam(m, s)))
                .sum();
        }
    }
    g
}

fn sinr_from_gains(config: &SystemConfig, g: &[Complex64], u: usize) -> f64 {
    let s_count = config.streams();
    let row = &g[u * s_count..(u + 1) * s_count];
    let signal = row[u].norm_sqr();
    let interference: f64 = row
        .iter()
        .enumerate()
        .filter(|(s, _)| *s != u)
        .map(|(_, z)| z.norm_sqr())
        .sum();
    signal / (interference + config.ue_noise_var)
}

fn check_user(config: &SystemConfig, u: usize) -> Result<()> {
    if u >= config.ue_count {
        return Err(Error::IndexOutOfRange {
            what: "user",
            index: u,
            len: config.ue_count,
        });
    }
    Ok(())
}

/// SINR of user `u`; other users' and all sensing streams count as interference.
pub fn sinr_user(
    config: &SystemConfig,
    sample: &ChannelSample,
    solution: &BeamformingSolution,
    u: usize,
) -> Result<f64> {
    check(config, sample, solution)?;
    check_user(config, u)?;
    let s_count = config.streams();
    let mut g = vec![Complex64::default(); config.ue_count * s_count];
    for s in 0..s_count {
        g[u * s_count + s] = (0..config.ap_count)
            .map(|m| inner(sample.h(m, u), solution.beam(m, s)))
            .sum();
    }
    Ok(sinr_from_gains(config, &g, u))
}

pub fn rate_user(
    config: &SystemConfig,
    sample: &ChannelSample,
    solution: &BeamformingSolution,
    u: usize,
) -> Result<f64> {
    Ok((1.0 + sinr_user(config, sample, solution, u)?).log2())
}

/// Joint multistatic sensing SNR. Every stream, communication included,
/// illuminates the target; every AP is a sensing receiver.
pub fn sensing_snr(
    config: &SystemConfig,
    sample: &ChannelSample,
    solution: &BeamformingSolution,
) -> Result<f64> {
    check(config, sample, solution)?;
    let m_count = config.ap_count;
    let mut numerator = 0.0;
    for mt in 0..m_count {
        let a = steering_vector(sample.theta()[mt], config.tx_antennas)?;
        let illumination: f64 = (0..config.streams())
            .map(|s| inner(&a, solution.beam(mt, s)).norm_sqr())
            .sum();
        let gain: f64 = (0..m_count).map(|mr| sample.zeta2(mt, mr)).sum();
        numerator += gain * illumination;
    }
    Ok(numerator / (m_count as f64 * config.radar_noise_var))
}

/// `sum_u R_u + beta_s * log2(1 + SNR)`.
pub fn objective(
    config: &SystemConfig,
    sample: &ChannelSample,
    solution: &BeamformingSolution,
) -> Result<f64> {
    Ok(evaluate(config, sample, solution)?.objective)
}

pub fn evaluate(
    config: &SystemConfig,
    sample: &ChannelSample,
    solution: &BeamformingSolution,
) -> Result<MetricsReport> {
    check(config, sample, solution)?;
    let g = link_gains(config, sample, solution);
    let rates: Vec<f64> = (0..config.ue_count)
        .map(|u| (1.0 + sinr_from_gains(config, &g, u)).log2())
        .collect();
    let snr = sensing_snr(config, sample, solution)?;
    let sensing_rate_term = (1.0 + snr).log2();
    let objective = rates.iter().sum::<f64>() + config.sensing_weight * sensing_rate_term;
    let per_ap_power = (0..config.ap_count)
        .map(|m| solution.per_ap_power(m))
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricsReport {
        rates,
        sensing_snr: snr,
        sensing_rate_term,
        objective,
        per_ap_power,
    })
}

/// Means of a set of [`MetricsReport`]s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricsSummary {
    pub mean_sum_rate: f64,
    pub mean_sensing_snr: f64,
    pub mean_sensing_log: f64,
    pub mean_objective: f64,
    pub n_samples: usize,
}

impl MetricsSummary {
    pub fn from_reports(reports: &[MetricsReport]) -> Result<Self> {
        if reports.is_empty() {
            return Err(Error::InvalidArgument("no reports to summarize".into()));
        }
        let n = reports.len() as f64;
        let mean = |f: &dyn Fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        Ok(MetricsSummary {
            mean_sum_rate: mean(&|r| r.sum_rate()),
            mean_sensing_snr: mean(&|r| r.sensing_snr),
            mean_sensing_log: mean(&|r| r.sensing_rate_term),
            mean_objective: mean(&|r| r.objective),
            n_samples: reports.len(),
        })
    }
}

/// Metrics of every (sample, solution) pair, evaluated in parallel.
pub fn evaluate_all(
    config: &SystemConfig,
    samples: &[ChannelSample],
    solutions: &[BeamformingSolution],
) -> Result<Vec<MetricsReport>> {
    use rayon::prelude::*;
    if samples.len() != solutions.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} samples but {} solutions",
            samples.len(),
            solutions.len()
        )));
    }
    samples
        .par_iter()
        .zip(solutions)
        .map(|(s, f)| evaluate(config, s, f))
        .collect()
}
