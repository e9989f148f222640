use std::path::{Path, PathBuf};

use cfisac_core::baselines::WmmseOptions;
use cfisac_core::dataset::write_dataset;
use cfisac_core::experiments::{
    compare_baselines, scale_aps, solve_baseline, sweep_beta, ExperimentReport, Method, ReportRow,
    ScalingOptions, TrainedModel, DEFAULT_AP_COUNTS, DEFAULT_BETAS,
};
use cfisac_core::gnn::{load_checkpoint, sha256_hex, GnnParameters};
use cfisac_core::metrics::{evaluate_all, MetricsSummary};
use cfisac_core::system::generate_samples;
use cfisac_core::training::{evaluate_network, train, TrainOutcome};
use cfisac_core::{ChannelSample, SystemConfig};
use clap::{Args, Subcommand};

use crate::config::{parse_list, resolve_seed, RunConfig};
use crate::error::CliError;
use crate::manifest::RunManifest;

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw channel samples and write them as a dataset file.
    GenData(GenDataArgs),
    /// Train the graph network at one sensing weight.
    Train(TrainArgs),
    /// Score a classical beamformer on a dataset.
    Baseline(BaselineArgs),
    /// Score a trained checkpoint on a dataset.
    Eval(EvalArgs),
    /// Train or load one network per sensing weight and compare with the baselines.
    SweepBeta(SweepArgs),
    /// Evaluate one checkpoint across AP counts on fresh test sets.
    ScaleAps(ScaleArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenData(_) => "gen-data",
            Command::Train(_) => "train",
            Command::Baseline(_) => "baseline",
            Command::Eval(_) => "eval",
            Command::SweepBeta(_) => "sweep-beta",
            Command::ScaleAps(_) => "scale-aps",
        }
    }

    fn config_path(&self) -> Option<&Path> {
        match self {
            Command::GenData(a) => a.config.as_deref(),
            Command::Train(a) => a.config.as_deref(),
            Command::Baseline(a) => a.config.as_deref(),
            Command::Eval(a) => a.config.as_deref(),
            Command::SweepBeta(a) => a.config.as_deref(),
            Command::ScaleAps(a) => a.config.as_deref(),
        }
    }

    /// Where the manifest goes. Dataset generation writes a file, so its
    /// manifest sits beside it.
    fn manifest_path(&self) -> PathBuf {
        match self {
            Command::GenData(a) => {
                let mut name = a.out.clone().into_os_string();
                name.push(".manifest.json");
                PathBuf::from(name)
            }
            Command::Train(a) => a.out.join(MANIFEST),
            Command::Baseline(a) => a.out.join(MANIFEST),
            Command::Eval(a) => a.out.join(MANIFEST),
            Command::SweepBeta(a) => a.out.join(MANIFEST),
            Command::ScaleAps(a) => a.out.join(MANIFEST),
        }
    }
}

pub const MANIFEST: &str = "manifest.json";
pub const REPORT: &str = "report";

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset file to write.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub count: usize,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_parser = ["wmmse", "cb-comm", "cb-sense", "all"])]
    pub method: String,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Overrides the scenario stored in the checkpoint.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training set, used for weights without an existing checkpoint.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    /// Comma-separated sensing weights.
    #[arg(long)]
    pub betas: Option<String>,
    /// Directory holding `beta_<w>/best.ckpt` from earlier runs.
    #[arg(long)]
    pub ckpt_dir: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ScaleArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated AP counts.
    #[arg(long)]
    pub m_list: Option<String>,
    /// Samples per fresh test set.
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub no_wmmse: bool,
    #[arg(long)]
    pub out: PathBuf,
}

/// Runs `command`, keeping its manifest up to date from start to finish.
pub fn execute(command: &Command, threads: Option<usize>) -> Result<(), CliError> {
    let manifest_path = command.manifest_path();
    if let Some(dir) = manifest_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let mut manifest =
        RunManifest::new(manifest_path, command.name(), threads, RunConfig::default());
    let result = RunConfig::load(command.config_path()).and_then(|config| {
        manifest.config = config;
        manifest.write()?;
        config.validate()?;
        match command {
            Command::GenData(a) => gen_data(a, config, &mut manifest),
            Command::Train(a) => train_cmd(a, config, &mut manifest),
            Command::Baseline(a) => baseline(a, config, &mut manifest),
            Command::Eval(a) => eval(a, config, &mut manifest),
            Command::SweepBeta(a) => sweep(a, config, &mut manifest),
            Command::ScaleAps(a) => scale(a, config, &mut manifest),
        }
    });
    manifest.finish(&result)?;
    result
}

fn load_samples(
    role: &str,
    path: &Path,
    system: &SystemConfig,
    manifest: &mut RunManifest,
) -> Result<Vec<ChannelSample>, CliError> {
    manifest.inputs.insert(role.to_owned(), path.to_path_buf());
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    manifest.option(&format!("{role}.sha256"), sha256_hex(&bytes));
    let (header, samples) = cfisac_core::dataset::decode_dataset(&bytes)?;
    header.check_against(system)?;
    Ok(samples)
}

fn write_report(
    report: &ExperimentReport,
    dir: &Path,
    manifest: &mut RunManifest,
) -> Result<(), CliError> {
    report.write(dir, REPORT)?;
    manifest
        .outputs
        .insert("report".into(), dir.join(format!("{REPORT}.csv")));
    manifest
        .outputs
        .insert("report_meta".into(), dir.join(format!("{REPORT}.json")));
    Ok(())
}

fn gen_data(
    a: &GenDataArgs,
    config: RunConfig,
    manifest: &mut RunManifest,
) -> Result<(), CliError> {
    if a.count == 0 {
        return Err(CliError::Config("--count must be positive".into()));
    }
    let seed = resolve_seed(a.seed, config.system.seed)?;
    manifest.seeds.insert("data".into(), seed);
    manifest.option("count", a.count);
    manifest.outputs.insert("dataset".into(), a.out.clone());
    manifest.write()?;
    let system = SystemConfig {
        seed,
        ..config.system
    };
    let samples = generate_samples(&system, seed, a.count)?;
    write_dataset(&a.out, &system, &samples).map_err(|e| match e {
        cfisac_core::Error::Io(io) => CliError::io(&a.out, io),
        other => other.into(),
    })?;
    eprintln!("wrote {} samples to {}", a.count, a.out.display());
    Ok(())
}

fn with_beta(system: SystemConfig, beta: Option<f64>, manifest: &mut RunManifest) -> SystemConfig {
    let system = match beta {
        Some(b) => system.with_sensing_weight(b),
        None => system,
    };
    manifest.config.system = system;
    manifest.option("beta_s", system.sensing_weight);
    system
}

fn train_one(
    config: &RunConfig,
    system: &SystemConfig,
    train_set: &[ChannelSample],
    test_set: &[ChannelSample],
    dir: &Path,
) -> Result<(TrainOutcome, String), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let outcome = train(
        system,
        &config.train,
        config.hyper,
        train_set,
        test_set,
        |row| {
            eprintln!(
                "beta_s={} step {:>6} lr {:.3e} loss {:.5} test objective {:.5} sum rate {:.5} sensing SNR {:.5}",
                system.sensing_weight,
                row.step,
                row.lr,
                row.train_loss,
                row.test_objective,
                row.test_sum_rate,
                row.test_sensing_snr
            )
        },
    )?;
    let (best, _) = outcome.save(dir, system)?;
    Ok((outcome, best))
}

fn train_cmd(
    a: &TrainArgs,
    mut config: RunConfig,
    manifest: &mut RunManifest,
) -> Result<(), CliError> {
    config.train.seed = resolve_seed(a.seed, config.train.seed)?;
    if let Some(e) = a.epochs {
        config.train.epochs = e;
    }
    manifest.config = config;
    let system = with_beta(config.system, a.beta, manifest);
    config.system = system;
    config.validate()?;
    manifest.seeds.insert("train".into(), config.train.seed);
    manifest.write()?;
    let train_set = load_samples("data", &a.data, &system, manifest)?;
    let test_set = load_samples("test", &a.test, &system, manifest)?;
    manifest.write()?;

    let (outcome, best_hash) = train_one(&config, &system, &train_set, &test_set, &a.out)?;
    for name in ["best.ckpt", "last.ckpt", "history.csv"] {
        manifest.outputs.insert(name.into(), a.out.join(name));
    }
    manifest.option("best_epoch", outcome.best_epoch);
    manifest.option("best.ckpt.sha256", &best_hash);

    let summary = evaluate_network(&outcome.best, &system, &test_set)?;
    let mut report = single_row_report("train", &system, Method::Gnn, &summary)?;
    report.meta.seeds.insert("train".into(), config.train.seed);
    report
        .meta
        .checkpoints
        .push(cfisac_core::experiments::CheckpointRef {
            label: "best".into(),
            sha256: best_hash,
        });
    write_report(&report, &a.out, manifest)
}

/// A one-row report, built through the JSON sidecar type so its metadata
/// matches the experiment drivers.
fn single_row_report(
    experiment: &str,
    system: &SystemConfig,
    method: Method,
    summary: &MetricsSummary,
) -> Result<ExperimentReport, CliError> {
    Ok(ExperimentReport {
        meta: cfisac_core::experiments::ReportMeta {
            experiment: experiment.to_owned(),
            config: *system,
            seeds: [("data".to_owned(), system.seed)].into(),
            checkpoints: Vec::new(),
        },
        rows: vec![ReportRow::new(method, system, summary)],
    })
}

fn baseline(
    a: &BaselineArgs,
    config: RunConfig,
    manifest: &mut RunManifest,
) -> Result<(), CliError> {
    let system = with_beta(config.system, a.beta, manifest);
    manifest.option("method", &a.method);
    manifest.write()?;
    let samples = load_samples("data", &a.data, &system, manifest)?;
    let options = WmmseOptions::default();
    let report = if a.method == "all" {
        compare_baselines(&system, &samples, &options)?
    } else {
        let method: Method = a.method.parse()?;
        let solutions = solve_baseline(method, &system, &samples, &options)?;
        let summary = MetricsSummary::from_reports(&evaluate_all(&system, &samples, &solutions)?)?;
        single_row_report("baseline", &system, method, &summary)?
    };
    write_report(&report, &a.out, manifest)
}

fn load_model(
    path: &Path,
    manifest: &mut RunManifest,
    role: &str,
) -> Result<(GnnParameters<f32>, Option<SystemConfig>, String), CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    let hash = sha256_hex(&bytes);
    let ckpt = cfisac_core::gnn::decode_checkpoint(&bytes)?;
    manifest.inputs.insert(role.to_owned(), path.to_path_buf());
    manifest.option(&format!("{role}.sha256"), &hash);
    Ok((ckpt.params, ckpt.system, hash))
}

/// Scenario for evaluating a checkpoint: the configuration file if given,
/// otherwise the scenario the checkpoint was trained on.
fn eval_system(explicit: bool, config: &RunConfig, stored: Option<SystemConfig>) -> SystemConfig {
    match (explicit, stored) {
        (false, Some(s)) => s,
        _ => config.system,
    }
}

fn eval(a: &EvalArgs, config: RunConfig, manifest: &mut RunManifest) -> Result<(), CliError> {
    let (params, stored, hash) = load_model(&a.ckpt, manifest, "ckpt")?;
    let system = eval_system(a.config.is_some(), &config, stored);
    let system = with_beta(system, a.beta, manifest);
    manifest.config.hyper = *params.hyper();
    manifest.write()?;
    let samples = load_samples("data", &a.data, &system, manifest)?;
    let summary = evaluate_network(&params, &system, &samples)?;
    let mut report = single_row_report("eval", &system, Method::Gnn, &summary)?;
    report
        .meta
        .checkpoints
        .push(cfisac_core::experiments::CheckpointRef {
            label: "model".into(),
            sha256: hash,
        });
    write_report(&report, &a.out, manifest)
}

fn beta_dir(beta: f64) -> String {
    format!("beta_{beta}")
}

fn sweep(a: &SweepArgs, mut config: RunConfig, manifest: &mut RunManifest) -> Result<(), CliError> {
    config.train.seed = resolve_seed(a.seed, config.train.seed)?;
    if let Some(e) = a.epochs {
        config.train.epochs = e;
    }
    config.validate()?;
    manifest.config = config;
    let betas = match &a.betas {
        Some(text) => parse_list::<f64>("betas", text)?,
        None => DEFAULT_BETAS.to_vec(),
    };
    manifest.option("betas", &betas);
    manifest.seeds.insert("train".into(), config.train.seed);
    manifest.write()?;
    let system = config.system;
    let test_set = load_samples("test", &a.test, &system, manifest)?;
    let mut train_set: Option<Vec<ChannelSample>> = None;
    let mut sources = Vec::new();

    let report = sweep_beta(
        &system,
        &betas,
        &test_set,
        &WmmseOptions::default(),
        |beta| {
            let existing = a
                .ckpt_dir
                .as_ref()
                .map(|d| d.join(beta_dir(beta)).join("best.ckpt"))
                .filter(|p| p.exists());
            if let Some(path) = existing {
                let ckpt = load_checkpoint(&path)?;
                let sha256 = sha256_hex(&std::fs::read(&path)?);
                sources.push((beta, path));
                return Ok(TrainedModel {
                    params: ckpt.params,
                    sha256: Some(sha256),
                });
            }
            if train_set.is_none() {
                let bytes = std::fs::read(&a.data)?;
                let (header, samples) = cfisac_core::dataset::decode_dataset(&bytes)?;
                header.check_against(&system)?;
                train_set = Some(samples);
            }
            let cfg = system.with_sensing_weight(beta);
            let dir = a.out.join(beta_dir(beta));
            let (outcome, hash) = train_one(
                &config,
                &cfg,
                train_set.as_deref().expect("loaded above"),
                &test_set,
                &dir,
            )
            .map_err(|e| match e {
                CliError::Core(c) => c,
                other => cfisac_core::Error::InvalidArgument(other.to_string()),
            })?;
            sources.push((beta, dir.join("best.ckpt")));
            Ok(TrainedModel {
                params: outcome.best,
                sha256: Some(hash),
            })
        },
    )?;
    if train_set.is_some() {
        manifest.inputs.insert("data".into(), a.data.clone());
    }
    for (beta, path) in sources {
        manifest
            .inputs
            .insert(format!("ckpt.{}", beta_dir(beta)), path);
    }
    write_report(&report, &a.out, manifest)
}

fn scale(a: &ScaleArgs, config: RunConfig, manifest: &mut RunManifest) -> Result<(), CliError> {
    let (params, stored, hash) = load_model(&a.ckpt, manifest, "ckpt")?;
    let system = eval_system(a.config.is_some(), &config, stored);
    let system = with_beta(system, a.beta, manifest);
    manifest.config.hyper = *params.hyper();
    let m_list = match &a.m_list {
        Some(text) => parse_list::<usize>("m-list", text)?,
        None => DEFAULT_AP_COUNTS.to_vec(),
    };
    let options = ScalingOptions {
        test_samples: a.count.unwrap_or(config.train.test_samples),
        seed: resolve_seed(a.seed, system.seed)?,
        with_wmmse: !a.no_wmmse,
        ..ScalingOptions::default()
    };
    manifest.option("m_list", &m_list);
    manifest.option("count", options.test_samples);
    manifest.option("with_wmmse", options.with_wmmse);
    manifest.seeds.insert("data".into(), options.seed);
    manifest.write()?;
    let model = TrainedModel {
        params,
        sha256: Some(hash),
    };
    let report = scale_aps(&system, &model, &m_list, &options)?;
    write_report(&report, &a.out, manifest)
}
