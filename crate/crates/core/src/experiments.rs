//! Experiment drivers: the sensing-weight sweep, AP-count generalization of a
//! fixed network, and a table of the classical baselines on one test set.
//!
//! Every driver returns an [`ExperimentReport`] whose CSV form has a fixed
//! header and whose JSON sidecar carries the configuration, seeds and
//! checkpoint hashes needed to regenerate it.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{cb_comm, cb_sense, wmmse, WmmseOptions};
use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::gnn::{check_compatible, GnnParameters};
use crate::metrics::{evaluate_all, MetricsSummary};
use crate::system::{derive_seed, generate_samples, BeamformingSolution, ChannelSample};
use crate::training::evaluate_network;

/// Sensing weights swept when none are given.
pub const DEFAULT_BETAS: [f64; 6] = [0.0, 0.5, 1.0, 2.0, 5.0, 10.0];
/// AP counts used by the scaling study when none are given.
pub const DEFAULT_AP_COUNTS: [usize; 6] = [3, 4, 5, 6, 7, 8];
pub const CSV_HEADER: &str =
    "method,beta_s,M,U,mean_sum_rate,mean_sensing_snr,mean_sensing_log,mean_objective,n_samples";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Gnn,
    Wmmse,
    CbComm,
    CbSense,
}

impl Method {
    pub const BASELINES: [Method; 3] = [Method::Wmmse, Method::CbComm, Method::CbSense];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Gnn => "gnn",
            Method::Wmmse => "wmmse",
            Method::CbComm => "cb-comm",
            Method::CbSense => "cb-sense",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gnn" => Ok(Method::Gnn),
            "wmmse" => Ok(Method::Wmmse),
            "cb-comm" => Ok(Method::CbComm),
            "cb-sense" => Ok(Method::CbSense),
            other => Err(Error::InvalidArgument(format!(
                "unknown method `{other}` (expected wmmse, cb-comm or cb-sense)"
            ))),
        }
    }
}

/// One line of a report. Field order is the CSV column order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: Method,
    pub beta_s: f64,
    #[serde(rename = "M")]
    pub ap_count: usize,
    #[serde(rename = "U")]
    pub ue_count: usize,
    pub mean_sum_rate: f64,
    pub mean_sensing_snr: f64,
    pub mean_sensing_log: f64,
    pub mean_objective: f64,
    pub n_samples: usize,
}

impl ReportRow {
    pub fn new(method: Method, config: &SystemConfig, summary: &MetricsSummary) -> Self {
        ReportRow {
            method,
            beta_s: config.sensing_weight,
            ap_count: config.ap_count,
            ue_count: config.ue_count,
            mean_sum_rate: summary.mean_sum_rate,
            mean_sensing_snr: summary.mean_sensing_snr,
            mean_sensing_log: summary.mean_sensing_log,
            mean_objective: summary.mean_objective,
            n_samples: summary.n_samples,
        }
    }

    pub fn mean_rate_per_user(&self) -> f64 {
        self.mean_sum_rate / self.ue_count as f64
    }

    /// `|objective - (sum rate + beta * log-term)|` from the row's own columns.
    pub fn objective_residual(&self) -> f64 {
        (self.mean_objective - (self.mean_sum_rate + self.beta_s * self.mean_sensing_log)).abs()
    }
}

/// Identifies a checkpoint that contributed rows to a report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointRef {
    pub label: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub experiment: String,
    pub config: SystemConfig,
    pub seeds: BTreeMap<String, u64>,
    pub checkpoints: Vec<CheckpointRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub meta: ReportMeta,
    pub rows: Vec<ReportRow>,
}

impl ExperimentReport {
    fn new(experiment: &str, config: &SystemConfig) -> Self {
        ExperimentReport {
            meta: ReportMeta {
                experiment: experiment.to_owned(),
                config: *config,
                seeds: BTreeMap::new(),
                checkpoints: Vec::new(),
            },
            rows: Vec::new(),
        }
    }

    pub fn rows_for(&self, method: Method) -> impl Iterator<Item = &ReportRow> {
        self.rows.iter().filter(move |r| r.method == method)
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.rows {
            w.serialize(row)?;
        }
        if self.rows.is_empty() {
            w.write_record(CSV_HEADER.split(','))?;
        }
        w.into_inner()
            .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
    }

    pub fn from_csv(bytes: &[u8]) -> Result<Vec<ReportRow>> {
        let mut r = csv::Reader::from_reader(bytes);
        let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
        if header.join(",") != CSV_HEADER {
            return Err(Error::format(
                "header",
                format!("unexpected columns {header:?}"),
            ));
        }
        r.deserialize()
            .map(|row| row.map_err(Error::from))
            .collect()
    }

    pub fn sidecar_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.meta)? + "\n")
    }

    /// Writes `<dir>/<stem>.csv` and `<dir>/<stem>.json`.
    pub fn write(&self, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::write(dir.join(format!("{stem}.csv")), self.to_csv()?)?;
        std::fs::write(dir.join(format!("{stem}.json")), self.sidecar_json()?)?;
        Ok(())
    }
}

/// Solutions of one classical method for every sample, computed in parallel.
pub fn solve_baseline(
    method: Method,
    config: &SystemConfig,
    samples: &[ChannelSample],
    options: &WmmseOptions,
) -> Result<Vec<BeamformingSolution>> {
    samples
        .par_iter()
        .map(|s| match method {
            Method::Wmmse => wmmse(config, s, options).map(|(f, _)| f),
            Method::CbComm => cb_comm(config, s),
            Method::CbSense => cb_sense(config, s),
            Method::Gnn => Err(Error::InvalidArgument(
                "the graph network is not a classical baseline".into(),
            )),
        })
        .collect()
}

pub fn baseline_summary(
    method: Method,
    config: &SystemConfig,
    samples: &[ChannelSample],
    options: &WmmseOptions,
) -> Result<MetricsSummary> {
    let solutions = solve_baseline(method, config, samples, options)?;
    MetricsSummary::from_reports(&evaluate_all(config, samples, &solutions)?)
}

fn check_samples(config: &SystemConfig, samples: &[ChannelSample]) -> Result<()> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::InvalidArgument("empty test set".into()));
    }
    for (i, s) in samples.iter().enumerate() {
        s.check_dims(config)
            .map_err(|e| Error::DimensionMismatch(format!("test sample {i}: {e}")))?;
    }
    Ok(())
}

/// WMMSE, CB-comm and CB-sense on one test set.
pub fn compare_baselines(
    config: &SystemConfig,
    samples: &[ChannelSample],
    options: &WmmseOptions,
) -> Result<ExperimentReport> {
    check_samples(config, samples)?;
    let mut report = ExperimentReport::new("compare-baselines", config);
    report.meta.seeds.insert("data".into(), config.seed);
    for method in Method::BASELINES {
        let summary = baseline_summary(method, config, samples, options)?;
        report.rows.push(ReportRow::new(method, config, &summary));
    }
    Ok(report)
}

/// A network together with the hash of the checkpoint it came from, if any.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub params: GnnParameters<f32>,
    pub sha256: Option<String>,
}

/// One network row per sensing weight followed by the three baseline rows,
/// all on `samples`. `model_for(beta)` supplies the network for each weight,
/// loading or training it as the caller sees fit. Baseline rows are scored
/// with the sensing weight of `config`.
pub fn sweep_beta(
    config: &SystemConfig,
    betas: &[f64],
    samples: &[ChannelSample],
    options: &WmmseOptions,
    mut model_for: impl FnMut(f64) -> Result<TrainedModel>,
) -> Result<ExperimentReport> {
    check_samples(config, samples)?;
    if betas.is_empty() {
        return Err(Error::InvalidArgument("empty sensing-weight list".into()));
    }
    if let Some(b) = betas.iter().find(|b| !(b.is_finite() && **b >= 0.0)) {
        return Err(Error::config(
            "beta_s",
            format!("sensing weight {b} must be finite and non-negative"),
        ));
    }
    let mut report = ExperimentReport::new("sweep-beta", config);
    report.meta.seeds.insert("data".into(), config.seed);
    for &beta in betas {
        let cfg = config.with_sensing_weight(beta);
        let model = model_for(beta)?;
        check_compatible(&cfg, model.params.hyper())?;
        let summary = evaluate_network(&model.params, &cfg, samples)?;
        report
            .rows
            .push(ReportRow::new(Method::Gnn, &cfg, &summary));
        if let Some(sha256) = model.sha256 {
            report.meta.checkpoints.push(CheckpointRef {
                label: format!("beta_s={beta}"),
                sha256,
            });
        }
    }
    for method in Method::BASELINES {
        let summary = baseline_summary(method, config, samples, options)?;
        report.rows.push(ReportRow::new(method, config, &summary));
    }
    Ok(report)
}

/// Seed of the fresh test set drawn for `ap_count` APs.
pub fn scaling_seed(seed: u64, ap_count: usize) -> u64 {
    derive_seed(seed, ap_count as u64)
}

/// Scenario with `ap_count` APs sharing the total power of `config`.
pub fn scaled_config(config: &SystemConfig, ap_count: usize) -> SystemConfig {
    config.with_ap_count(ap_count)
}

/// Fresh test set for `ap_count` APs.
pub fn scaling_test_set(
    config: &SystemConfig,
    ap_count: usize,
    seed: u64,
    count: usize,
) -> Result<Vec<ChannelSample>> {
    generate_samples(
        &scaled_config(config, ap_count),
        scaling_seed(seed, ap_count),
        count,
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingOptions {
    pub test_samples: usize,
    pub seed: u64,
    /// Add a WMMSE row for each AP count.
    pub with_wmmse: bool,
    pub wmmse: WmmseOptions,
}

impl Default for ScalingOptions {
    fn default() -> Self {
        ScalingOptions {
            test_samples: 500,
            seed: 0,
            with_wmmse: true,
            wmmse: WmmseOptions::default(),
        }
    }
}

/// Evaluates one network, without retraining, at every AP count in
/// `ap_counts` on fresh test sets with the total power of `config` split
/// evenly across APs.
pub fn scale_aps(
    config: &SystemConfig,
    model: &TrainedModel,
    ap_counts: &[usize],
    options: &ScalingOptions,
) -> Result<ExperimentReport> {
    config.validate()?;
    check_compatible(config, model.params.hyper())?;
    if ap_counts.is_empty() {
        return Err(Error::InvalidArgument("empty AP-count list".into()));
    }
    if options.test_samples == 0 {
        return Err(Error::config("test_samples", "must be positive"));
    }
    let mut report = ExperimentReport::new("scale-aps", config);
    report.meta.seeds.insert("data".into(), options.seed);
    if let Some(sha256) = &model.sha256 {
        report.meta.checkpoints.push(CheckpointRef {
            label: "model".into(),
            sha256: sha256.clone(),
        });
    }
    for &m in ap_counts {
        if m == 0 {
            return Err(Error::config("M", "AP counts must be positive"));
        }
        let cfg = scaled_config(config, m);
        let samples = scaling_test_set(config, m, options.seed, options.test_samples)?;
        report
            .meta
            .seeds
            .insert(format!("data.M={m}"), scaling_seed(options.seed, m));
        let summary = evaluate_network(&model.params, &cfg, &samples)?;
        report
            .rows
            .push(ReportRow::new(Method::Gnn, &cfg, &summary));
        if options.with_wmmse {
            let summary = baseline_summary(Method::Wmmse, &cfg, &samples, &options.wmmse)?;
            report
                .rows
                .push(ReportRow::new(Method::Wmmse, &cfg, &summary));
        }
    }
    Ok(report)
}

/// Checks that consecutive rows are monotone in the given direction, allowing
/// at most `allowed` violations each no larger than `rel_slack` relative.
/// Returns the number of violations used.
pub fn monotone_with_slack(
    values: &[f64],
    increasing: bool,
    rel_slack: f64,
    allowed: usize,
) -> std::result::Result<usize, String> {
    let mut used = 0;
    for (i, w) in values.windows(2).enumerate() {
        let drop = if increasing { w[0] - w[1] } else { w[1] - w[0] };
        if drop <= 0.0 {
            continue;
        }
        let rel = drop / w[0].abs().max(f64::MIN_POSITIVE);
        if rel > rel_slack {
            return Err(format!(
                "step {i}->{}: {} to {} ({:.3}% against the trend)",
                i + 1,
                w[0],
                w[1],
                100.0 * rel
            ));
        }
        used += 1;
        if used > allowed {
            return Err(format!("{used} violations, at most {allowed} allowed"));
        }
    }
    Ok(used)
}
