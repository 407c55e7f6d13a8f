use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use renormlab::data::{Dataset, Split};
use renormlab::geometry::RigidTransform;
use renormlab::lab::{LabConfig, RunManifest, MANIFEST_FILE};
use renormlab::lora::{NormKind, RenormMode};
use renormlab::metrics::MetricsReport;
use renormlab::model::ModelState;
use renormlab::train::{evaluate, finetune, pretrain, FinetuneMode, LogRecord, RunLog};
use renormlab::uncertainty::{depth_scaling_fit, dispersion_sweep, exactness_sweep, DispersionRow, ExactnessReport};
use renormlab::{LabError, Result};

#[derive(Parser)]
#[command(name = "renormlab", version, about = "Encoder distillation with re-normalized LoRA on a toy reconstruction model")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Seed for every random choice in the run.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML configuration; flags given on the command line win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the epoch count of whichever training the command runs.
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true, value_enum)]
    norm_kind: Option<NormArg>,
    #[arg(long, global = true, value_enum)]
    renorm: Option<RenormArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum NormArg {
    Frobenius,
    Spectral,
}

#[derive(Clone, Copy, ValueEnum)]
enum RenormArg {
    Off,
    Functional,
    Detached,
}

#[derive(Clone, Copy, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    DecFull,
    EncFull,
    BothFull,
    EncLora,
    EncRenormLora,
}

impl From<ModeArg> for FinetuneMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::DecFull => FinetuneMode::DecFull,
            ModeArg::EncFull => FinetuneMode::EncFull,
            ModeArg::BothFull => FinetuneMode::BothFull,
            ModeArg::EncLora => FinetuneMode::EncLora,
            ModeArg::EncRenormLora => FinetuneMode::EncRenormLora,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the training and held-out datasets.
    GenData {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the baseline model on multi-view pointmaps.
    Pretrain {
        /// Output directory of `gen-data`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fine-tune a baseline in one mode.
    Finetune {
        #[arg(long)]
        data: PathBuf,
        /// Output directory of `pretrain`.
        #[arg(long)]
        base: PathBuf,
        #[arg(long, value_enum)]
        mode: ModeArg,
        #[arg(long, value_enum, default_value = "on")]
        replay: OnOff,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on the held-out split.
    Eval {
        #[arg(long)]
        data: PathBuf,
        /// Output directory of `pretrain` or `finetune`.
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every fine-tuning mode from one baseline and compare.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        /// Output directory of `pretrain`; pretrains from scratch when absent.
        #[arg(long)]
        base: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "on")]
        replay: OnOff,
        #[arg(long)]
        out: PathBuf,
    },
    /// Depth-scale perturbation studies.
    Uncertainty {
        /// Also compare closed form and brute force on seeded geometries.
        #[arg(long)]
        check_exactness: bool,
        #[arg(long, default_value_t = 10_000)]
        cases: usize,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarize run logs.
    Report {
        /// `log.jsonl` files or run directories containing one.
        #[arg(required = true)]
        logs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

const CHECKPOINT: &str = "checkpoint";
const LOG: &str = "log.jsonl";
const REPORT: &str = "report.json";

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("one or more checks failed");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn resolve_config(c: &Common) -> Result<LabConfig> {
    let mut cfg = match &c.config {
        Some(p) => LabConfig::load(p)?,
        None => LabConfig::default(),
    };
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    cfg = cfg.clone().with_seed(cfg.seed);
    if let Some(k) = c.norm_kind {
        cfg.train.norm_kind = match k {
            NormArg::Frobenius => NormKind::Frobenius,
            NormArg::Spectral => NormKind::Spectral,
        };
    }
    if let Some(r) = c.renorm {
        cfg.train.renorm_mode = match r {
            RenormArg::Off => RenormMode::Off,
            RenormArg::Functional => RenormMode::Functional,
            RenormArg::Detached => RenormMode::Detached,
        };
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<bool> {
    let mut cfg = resolve_config(&cli.common)?;
    let argv: Vec<String> = std::env::args().collect();
    let epochs = cli.common.epochs;
    let out = match &cli.command {
        Command::GenData { out }
        | Command::Pretrain { out, .. }
        | Command::Finetune { out, .. }
        | Command::Eval { out, .. }
        | Command::Ablate { out, .. }
        | Command::Uncertainty { out, .. }
        | Command::Report { out, .. } => out.clone(),
    };
    fs::create_dir_all(&out)?;
    let manifest = match cli.command {
        Command::GenData { .. } => {
            cfg.validate()?;
            gen_data(&cfg, argv, &out)?
        }
        Command::Pretrain { data, .. } => {
            if let Some(e) = epochs {
                cfg.pretrain.schedule.epochs = e;
            }
            cfg.validate()?;
            run_pretrain(&cfg, argv, &data, &out)?
        }
        Command::Finetune { data, base, mode, replay, .. } => {
            if let Some(e) = epochs {
                cfg.train.schedule.epochs = e;
            }
            cfg.train.mode = mode.into();
            cfg.train.replay = matches!(replay, OnOff::On);
            cfg.validate()?;
            run_finetune(&cfg, argv, &data, &base, &out)?
        }
        Command::Eval { data, run, .. } => {
            cfg.validate()?;
            run_eval(&cfg, argv, &data, &run, &out)?
        }
        Command::Ablate { data, base, replay, .. } => {
            if let Some(e) = epochs {
                cfg.train.schedule.epochs = e;
                cfg.pretrain.schedule.epochs = e;
            }
            cfg.train.replay = matches!(replay, OnOff::On);
            cfg.validate()?;
            run_ablate(&cfg, argv, &data, base.as_deref(), &out)?
        }
        Command::Uncertainty { check_exactness, cases, samples, .. } => {
            run_uncertainty(&cfg, argv, check_exactness, cases, samples, &out)?
        }
        Command::Report { logs, .. } => run_report(&cfg, argv, &logs, &out)?,
    };
    manifest.write(&out)?;
    for (name, ok) in &manifest.checks {
        println!("check {name}: {}", if *ok { "pass" } else { "FAIL" });
    }
    Ok(manifest.passed())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn print_table(header: &[&str], rows: &[Vec<String>]) {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: Vec<&str>| {
        let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
        println!("{}", padded.join("  "));
    };
    line(header.to_vec());
    for r in rows {
        line(r.iter().map(String::as_str).collect());
    }
}

/// Loads both splits, verifying the `gen-data` manifest when present.
fn load_data(data: &Path, manifest: &mut RunManifest) -> Result<(Dataset, Dataset)> {
    if data.join(MANIFEST_FILE).exists() {
        RunManifest::read(data)?;
    }
    let (train_dir, held_dir) = (data.join("train"), data.join("heldout"));
    let train = Dataset::load(&train_dir)?;
    let held = Dataset::load(&held_dir)?;
    if train.split != Split::Train || held.split != Split::Heldout {
        return Err(LabError::Config(format!("{} does not hold a train and a held-out split", data.display())));
    }
    manifest.add_dataset("train", &train_dir)?;
    manifest.add_dataset("heldout", &held_dir)?;
    manifest.seeds.insert("data".into(), train.seed);
    Ok((train, held))
}

/// Loads the checkpoint of a `pretrain` or `finetune` run after verifying it.
fn load_run_checkpoint(run: &Path) -> Result<ModelState> {
    if run.join(MANIFEST_FILE).exists() {
        RunManifest::read(run)?;
    }
    ModelState::load(&run.join(CHECKPOINT))
}

fn gen_data(cfg: &LabConfig, argv: Vec<String>, out: &Path) -> Result<RunManifest> {
    let mut m = RunManifest::new(argv, cfg)?;
    let train = Dataset::generate(&cfg.data, cfg.seed, Split::Train)?;
    let held = Dataset::generate(&cfg.heldout_data(), cfg.seed, Split::Heldout)?;
    let mut reloads = true;
    let mut rows = Vec::new();
    for (name, ds) in [("train", &train), ("heldout", &held)] {
        ds.save(&out.join(name))?;
        reloads &= Dataset::load(&out.join(name))?.index() == ds.index();
        m.add_artifact(name, out, name)?;
        let views: usize = ds.groups.iter().map(|g| g.views.len()).sum();
        rows.push(vec![name.to_string(), ds.groups.len().to_string(), views.to_string(), m.artifacts[name].sha256[..16].to_string()]);
    }
    print_table(&["split", "groups", "views", "sha256"], &rows);
    m.checks.insert("dataset_reloads".into(), reloads);
    Ok(m)
}

fn metrics_row(label: &str, r: &MetricsReport) -> Vec<String> {
    let auc = |k: &str| r.pose.as_ref().and_then(|p| p.auc.get(k)).map_or("-".into(), |v| format!("{v:.2}"));
    vec![
        label.to_string(),
        format!("{:.4}", r.depth.rel),
        format!("{:.2}", r.depth.delta1),
        format!("{:.4}", r.pointmap_mse),
        auc("5"),
        auc("10"),
        auc("20"),
        r.cloud.as_ref().map_or("-".into(), |c| format!("{:.4}", c.acc)),
        r.cloud.as_ref().map_or("-".into(), |c| format!("{:.4}", c.comp)),
        format!("{:.3}", r.mean_token_norm),
    ]
}

const METRIC_HEADER: [&str; 10] = ["run", "rel", "delta1", "pm_mse", "auc5", "auc10", "auc20", "acc", "comp", "token_norm"];

fn finite_report(r: &MetricsReport) -> bool {
    r.depth.rel.is_finite() && r.depth.delta1.is_finite() && r.pointmap_mse.is_finite() && r.mean_token_norm.is_finite()
}

fn run_pretrain(cfg: &LabConfig, argv: Vec<String>, data: &Path, out: &Path) -> Result<RunManifest> {
    let mut m = RunManifest::new(argv, cfg)?;
    let (train, held) = load_data(data, &mut m)?;
    let init = ModelState::init(cfg.model, &mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
    let before = evaluate(&init, &held, cfg.pretrain.probe_images)?;
    let (state, log) = pretrain(init, &train, &held, &cfg.pretrain)?;
    let after = evaluate(&state, &held, cfg.pretrain.probe_images)?;
    state.save(&out.join(CHECKPOINT))?;
    log.write(&out.join(LOG))?;
    write_json(&out.join(REPORT), &after)?;
    print_table(&METRIC_HEADER, &[metrics_row("init", &before), metrics_row("pretrained", &after)]);
    for name in [CHECKPOINT, LOG, REPORT] {
        m.add_artifact(name, out, name)?;
    }
    m.checks.insert("heldout_pointmap_below_init".into(), after.pointmap_mse < before.pointmap_mse);
    Ok(m)
}

/// Largest adapter norm drift recorded in a log.
fn max_logged_drift(log: &RunLog) -> Option<f64> {
    log.steps().filter_map(|s| s.max_norm_drift).reduce(f64::max)
}

fn run_finetune(cfg: &LabConfig, argv: Vec<String>, data: &Path, base: &Path, out: &Path) -> Result<RunManifest> {
    let mut m = RunManifest::new(argv, cfg)?;
    let (train, held) = load_data(data, &mut m)?;
    let baseline = load_run_checkpoint(base)?;
    let (state, log) = finetune(&baseline, &train, &held, &cfg.train)?;
    let before = evaluate(&baseline, &held, cfg.train.probe_images)?;
    let after = evaluate(&state, &held, cfg.train.probe_images)?;
    state.save(&out.join(CHECKPOINT))?;
    log.write(&out.join(LOG))?;
    write_json(&out.join(REPORT), &after)?;
    print_table(&METRIC_HEADER, &[metrics_row("baseline", &before), metrics_row(cfg.train.mode.as_str(), &after)]);
    for name in [CHECKPOINT, LOG, REPORT] {
        m.add_artifact(name, out, name)?;
    }
    m.add_input("baseline_checkpoint", &base.join(CHECKPOINT))?;
    if !cfg.train.mode.trains_decoder() {
        m.checks.insert("decoder_frozen".into(), state.decoder_checksum() == baseline.decoder_checksum());
    }
    if cfg.train.adapter_renorm().is_renormalized() {
        m.checks.insert("norm_drift_within_1e-9".into(), max_logged_drift(&log).is_some_and(|d| d <= 1e-9));
    }
    m.checks.insert("metrics_finite".into(), finite_report(&after));
    Ok(m)
}

fn run_eval(cfg: &LabConfig, argv: Vec<String>, data: &Path, run: &Path, out: &Path) -> Result<RunManifest> {
    let mut m = RunManifest::new(argv, cfg)?;
    let (_, held) = load_data(data, &mut m)?;
    let state = load_run_checkpoint(run)?;
    let report = evaluate(&state, &held, cfg.train.probe_images)?;
    write_json(&out.join(REPORT), &report)?;
    print_table(&METRIC_HEADER, &[metrics_row(&run.display().to_string(), &report)]);
    m.add_input("checkpoint", &run.join(CHECKPOINT))?;
    m.add_artifact(REPORT, out, REPORT)?;
    m.checks.insert("metrics_finite".into(), finite_report(&report));
    Ok(m)
}

#[derive(Serialize)]
struct AblationRow {
    mode: String,
    replay: bool,
    metrics: MetricsReport,
    decoder_unchanged: bool,
    max_norm_drift: Option<f64>,
}

fn run_ablate(cfg: &LabConfig, argv: Vec<String>, data: &Path, base: Option<&Path>, out: &Path) -> Result<RunManifest> {
    let mut m = RunManifest::new(argv, cfg)?;
    let (train, held) = load_data(data, &mut m)?;
    let baseline = match base {
        Some(b) => {
            m.add_input("baseline_checkpoint", &b.join(CHECKPOINT))?;
            load_run_checkpoint(b)?
        }
        None => {
            let init = ModelState::init(cfg.model, &mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
            let (state, log) = pretrain(init, &train, &held, &cfg.pretrain)?;
            let dir = out.join("baseline");
            state.save(&dir.join(CHECKPOINT))?;
            log.write(&dir.join(LOG))?;
            m.add_artifact("baseline", out, "baseline")?;
            state
        }
    };
    let probes = cfg.train.probe_images;
    let mut rows = vec![AblationRow {
        mode: "baseline".into(),
        replay: false,
        metrics: evaluate(&baseline, &held, probes)?,
        decoder_unchanged: true,
        max_norm_drift: None,
    }];
    for mode in FinetuneMode::ALL {
        let tc = renormlab::train::TrainConfig { mode, ..cfg.train.clone() };
        let (state, log) = finetune(&baseline, &train, &held, &tc)?;
        let dir = out.join(mode.as_str());
        state.save(&dir.join(CHECKPOINT))?;
        log.write(&dir.join(LOG))?;
        m.add_artifact(mode.as_str(), out, mode.as_str())?;
        let decoder_unchanged = state.decoder_checksum() == baseline.decoder_checksum();
        if !mode.trains_decoder() {
            m.checks.insert(format!("{mode}_decoder_frozen"), decoder_unchanged);
        }
        let max_norm_drift = max_logged_drift(&log);
        if tc.adapter_renorm().is_renormalized() {
            m.checks.insert(format!("{mode}_norm_drift_within_1e-9"), max_norm_drift.is_some_and(|d| d <= 1e-9));
        }
        rows.push(AblationRow {
            mode: mode.as_str().into(),
            replay: tc.replay,
            metrics: evaluate(&state, &held, probes)?,
            decoder_unchanged,
            max_norm_drift,
        });
    }
    let mut header = METRIC_HEADER.to_vec();
    header.push("decoder");
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut cells = metrics_row(&r.mode, &r.metrics);
            cells.push(if r.decoder_unchanged { "frozen" } else { "changed" }.into());
            cells
        })
        .collect();
    print_table(&header, &table);
    write_json(&out.join("ablation.json"), &rows)?;
    m.add_artifact("ablation", out, "ablation.json")?;
    Ok(m)
}

#[derive(Serialize)]
struct UncertaintySummary {
    exactness: Option<ExactnessReport>,
    sigma: f64,
    depths: Vec<f64>,
    lateral_ratio: f64,
    samples: usize,
    depth_exponent: f64,
}

fn run_uncertainty(
    cfg: &LabConfig,
    argv: Vec<String>,
    check_exactness: bool,
    cases: usize,
    samples: usize,
    out: &Path,
) -> Result<RunManifest> {
    const SIGMA: f64 = 0.01;
    const LATERAL: f64 = 0.3;
    let depths = vec![1.0, 2.0, 4.0, 8.0];
    let mut m = RunManifest::new(argv, cfg)?;
    let exactness = check_exactness.then(|| exactness_sweep(cases, cfg.seed)).transpose()?;
    let rt = RigidTransform::from_axis_angle(nalgebra::Vector3::y(), 0.1, nalgebra::Vector3::new(0.5, 0.0, 0.1));
    let rows = dispersion_sweep(&depths, LATERAL, &rt, 1.0, SIGMA, samples, cfg.seed)?;
    let exponent = depth_scaling_fit(&depths, LATERAL, &rt, 1.0, SIGMA, samples, cfg.seed)?;
    let mut csv = String::from(DispersionRow::CSV_HEADER);
    csv.push('\n');
    for r in &rows {
        csv.push_str(&r.to_csv());
        csv.push('\n');
    }
    fs::write(out.join("dispersion.csv"), &csv)?;
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| vec![format!("{}", r.z2), format!("{:.6e}", r.std), format!("{:.6e}", r.mean), r.rejected.to_string()])
        .collect();
    print_table(&["Z2", "std_du", "mean_du", "rejected"], &table);
    println!("depth exponent {exponent:.4}");
    if let Some(e) = &exactness {
        println!(
            "exactness: {} cases, worst relative gap {:.3e}, zero-translation max {:.3e}, worked example {:.7}",
            e.cases, e.worst_relative_gap, e.worst_zero_translation, e.worked_example
        );
        m.checks.insert("closed_form_exact".into(), e.passed());
    }
    m.checks.insert("depth_exponent_near_minus_one".into(), (-1.1..=-0.9).contains(&exponent));
    write_json(
        &out.join("uncertainty.json"),
        &UncertaintySummary {
            exactness,
            sigma: SIGMA,
            depths,
            lateral_ratio: LATERAL,
            samples,
            depth_exponent: exponent,
        },
    )?;
    m.add_artifact("dispersion", out, "dispersion.csv")?;
    m.add_artifact("summary", out, "uncertainty.json")?;
    Ok(m)
}

#[derive(Serialize)]
struct LogSummary {
    log: PathBuf,
    run: String,
    steps: usize,
    epochs: usize,
    final_loss: Option<f64>,
    final_heldout_rel: Option<f64>,
    final_heldout_pointmap_mse: Option<f64>,
    final_token_norm: Option<f64>,
    max_norm_drift: Option<f64>,
    decoder_checksum: Option<String>,
}

fn summarize(path: &Path) -> Result<LogSummary> {
    let file = if path.is_dir() { path.join(LOG) } else { path.to_path_buf() };
    let log = RunLog::read(&file)?;
    let run = log
        .records
        .iter()
        .find_map(|r| match r {
            LogRecord::Config { run, .. } => Some(run.clone()),
            _ => None,
        })
        .unwrap_or_default();
    let last_epoch = log.epochs().last();
    Ok(LogSummary {
        run,
        steps: log.steps().count(),
        epochs: log.epochs().count(),
        final_loss: log.steps().last().map(|s| s.loss),
        final_heldout_rel: last_epoch.map(|e| e.heldout_rel),
        final_heldout_pointmap_mse: last_epoch.map(|e| e.heldout_pointmap_mse),
        final_token_norm: last_epoch.map(|e| e.tokens.mean_norm),
        max_norm_drift: max_logged_drift(&log),
        decoder_checksum: log.records.iter().find_map(|r| match r {
            LogRecord::Final { decoder_checksum, .. } => Some(decoder_checksum.clone()),
            _ => None,
        }),
        log: file,
    })
}

fn run_report(cfg: &LabConfig, argv: Vec<String>, logs: &[PathBuf], out: &Path) -> Result<RunManifest> {
    let mut m = RunManifest::new(argv, cfg)?;
    let summaries = logs.iter().map(|p| summarize(p)).collect::<Result<Vec<_>>>()?;
    let opt = |v: Option<f64>, digits: usize| v.map_or("-".into(), |x| format!("{x:.digits$}"));
    let table: Vec<Vec<String>> = summaries
        .iter()
        .map(|s| {
            vec![
                s.log.display().to_string(),
                s.run.clone(),
                s.steps.to_string(),
                s.epochs.to_string(),
                opt(s.final_loss, 5),
                opt(s.final_heldout_rel, 4),
                opt(s.final_heldout_pointmap_mse, 4),
                opt(s.final_token_norm, 3),
                s.max_norm_drift.map_or("-".into(), |d| format!("{d:.1e}")),
            ]
        })
        .collect();
    print_table(
        &["log", "run", "steps", "epochs", "loss", "rel", "pm_mse", "token_norm", "drift"],
        &table,
    );
    for (i, s) in summaries.iter().enumerate() {
        m.add_input(&format!("log{i}"), &s.log)?;
    }
    write_json(&out.join("summary.json"), &summaries)?;
    m.add_artifact("summary", out, "summary.json")?;
    m.checks.insert("logs_complete".into(), summaries.iter().all(|s| s.steps > 0 && s.epochs > 0));
    Ok(m)
}
