//! `anonyvid` — experiment front-end: dataset generation, adversarial
//! training, two-fold evaluation, trade-off sweeps and plots.

mod config;
mod manifest;
mod plot;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anonyvid::data::{
    batch_from_indices, downsample_clip, load_dataset, map_dataset, serialize_dataset,
    DualLabeledDataset, LabelMode, Split,
};
use anonyvid::eval::{
    append_records_jsonl, default_examination, eval_utility, load_records_jsonl,
    materialize_degraded, run_attacker_examination, write_records_csv, AttackerConfig,
    ExaminationReport, MetricKind, TradeoffRecord,
};
use anonyvid::nets::{
    ce_loss_and_grad, BatchStream, BudgetModelSpec, InitMode, ModelFamilySpec, UtilityClassifier,
    UtilityConfig,
};
use anonyvid::nn::SgdMomentum;
use anonyvid::trainer::{
    checkpoint_bytes, CrossDatasetState, TrainState, TrainingConfig,
};
use anonyvid::Error as CoreError;
use clap::{Args, Parser, Subcommand};

use config::ExperimentConfig;
use manifest::{fingerprint, resolve_out, run_id, write_atomic, CalibrationOutcome, RunManifest};

/// Exit codes: 0 success, 1 validation/config error, 2 training abort,
/// 3 protocol violation.
struct CliError {
    code: u8,
    message: String,
}

type CliResult<T> = Result<T, CliError>;

fn usage_err(message: impl Into<String>) -> CliError {
    CliError {
        code: 1,
        message: message.into(),
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let code = match &e {
            CoreError::WarmStartFailure { .. } | CoreError::NonFiniteLoss { .. } => 2,
            CoreError::ProtocolViolation(_) => 3,
            _ => 1,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        usage_err(format!("io error: {e}"))
    }
}

#[derive(Parser)]
#[command(name = "anonyvid", version, about = "Adversarial privacy-preserving degradation experiments")]
struct Cli {
    /// Bound worker threads for attacker examinations and sweep stages.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset from the `[dataset]` config section.
    Generate(GenerateArgs),
    /// Warm-start and adversarially train a degradation transform.
    Train(TrainArgs),
    /// Two-fold evaluation of a trained checkpoint with fresh attackers.
    Eval(EvalArgs),
    /// Utility/privacy trade-off sweep over methods, with table and plot.
    Sweep(SweepArgs),
    /// Re-render the trade-off plot from an existing record stream.
    Plot(PlotArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// Companion attribute-mode dataset, required by `--mode crossds`.
    #[arg(long)]
    dataset_b: Option<PathBuf>,
    #[arg(long, value_parser = ["identity", "attributes", "crossds"])]
    mode: Option<String>,
    #[arg(long)]
    m: Option<usize>,
    /// Ensemble restart period in iterations; 0 disables restarting.
    #[arg(long)]
    restart_period: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Skip the probe calibration of the dataset (recorded in the manifest).
    #[arg(long)]
    skip_calibration: bool,
    #[arg(long, default_value = "runs/train")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint_dir: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// Attacker population size N.
    #[arg(long, default_value_t = 10)]
    n: usize,
    #[arg(long, default_value_t = 600)]
    attacker_steps: usize,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value = "runs/sweep")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long)]
    records: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global();
    }
    let result = match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Plot(a) => cmd_plot(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

fn load_config(path: &Path) -> CliResult<ExperimentConfig> {
    ExperimentConfig::load(path).map_err(usage_err)
}

fn read_dataset(path: &Path) -> CliResult<(DualLabeledDataset, String)> {
    let bytes = std::fs::read(path)
        .map_err(|e| usage_err(format!("cannot read dataset {}: {e}", path.display())))?;
    let ds = load_dataset(&bytes)?;
    Ok((ds, fingerprint(&bytes)))
}

fn cmd_generate(args: GenerateArgs) -> CliResult<()> {
    let cfg = load_config(&args.config)?;
    let spec = cfg
        .dataset
        .ok_or_else(|| usage_err("config is missing the [dataset] section"))?;
    spec.validate()?;
    let seed = cfg.train.as_ref().and_then(|t| t.seed).unwrap_or(7);
    let ds = anonyvid::data::generate_dataset(&spec, seed)?;
    let bytes = serialize_dataset(&ds);
    let out = resolve_out(&args.out);
    if let Some(dir) = out.parent() {
        std::fs::create_dir_all(dir)?;
    }
    write_atomic(&out, &bytes)?;
    println!("dataset {} fingerprint {}", out.display(), fingerprint(&bytes));
    Ok(())
}

/// Train a plain utility classifier on raw frames (probe / baseline model).
fn train_plain_utility(ds: &DualLabeledDataset, seed: u64, max_steps: usize) -> UtilityClassifier {
    let spec = &ds.generator_spec;
    let mut ft = UtilityClassifier::build(&UtilityConfig::default(), spec.c, spec.k_t, spec.t, seed);
    let mut opt = SgdMomentum::new(1e-2, 0.9);
    let mut stream = BatchStream::new(ds.train_indices(), 16, seed);
    for step in 0..max_steps {
        let idx = stream.next_batch();
        let batch = batch_from_indices(ds, &idx);
        let probs = ft.forward(&batch.x);
        let (_, grad, _) = ce_loss_and_grad(&probs, &batch.utility);
        ft.backward(&grad);
        opt.step(ft.params_mut());
        if step % 50 == 49 && eval_utility(None, &mut ft, ds, Split::Eval, 16) >= 0.97 {
            break;
        }
    }
    ft
}

/// A single-probe examination population that cannot collide with either the
/// default training grid or the default examination widths.
fn probe_examination() -> ModelFamilySpec {
    ModelFamilySpec {
        entries: vec![BudgetModelSpec {
            family: "compact3".into(),
            width: 2.0,
            init: InitMode::FromScratch,
        }],
    }
}

/// Probe calibration: raw data must be learnable on both labels.
fn calibrate(ds: &DualLabeledDataset) -> CliResult<(f64, f64)> {
    let mut ft = train_plain_utility(ds, 10_007, 1500);
    let utility = eval_utility(None, &mut ft, ds, Split::Eval, 16);
    let cache = materialize_degraded(None, ds, 16);
    let acfg = AttackerConfig {
        n: 1,
        max_steps: 1500,
        ..AttackerConfig::default()
    };
    let report = run_attacker_examination(
        &cache,
        &probe_examination(),
        &ModelFamilySpec::default_training(4),
        &acfg,
        &ds.generator_spec,
    )?;
    Ok((utility, report.a_b_n))
}

fn resolve_training_config(
    cfg: &ExperimentConfig,
    mode: LabelMode,
    args: &TrainArgs,
) -> CliResult<TrainingConfig> {
    let base = match mode {
        LabelMode::Identity => TrainingConfig::identity_default(),
        LabelMode::Attributes => TrainingConfig::attributes_default(),
    };
    let mut tc = cfg.train.clone().unwrap_or_default().apply(base);
    if let Some(m) = args.m {
        tc.m = m;
    }
    if let Some(rp) = args.restart_period {
        // 0 disables restarting entirely
        tc.restart_period = if rp == 0 { usize::MAX } else { rp };
    }
    if let Some(g) = args.gamma {
        tc.gamma = g;
    }
    if let Some(s) = args.seed {
        tc.seed = s;
    }
    tc.validate()?;
    Ok(tc)
}

struct TrainedRun {
    state: TrainState,
    manifest: RunManifest,
}

fn run_training(
    ds: &DualLabeledDataset,
    ds_fp: &str,
    tc: TrainingConfig,
    calibration: CalibrationOutcome,
) -> CliResult<TrainedRun> {
    let mut state = TrainState::new(ds, tc, None)?;
    state.train(ds)?;
    let fuse_events: Vec<String> = state
        .history
        .iter()
        .flat_map(|r| r.events.iter())
        .filter(|e| e.contains("fuse"))
        .cloned()
        .collect();
    let manifest = RunManifest {
        run_id: run_id(&state.cfg, ds_fp),
        tool_version: manifest::TOOL_VERSION.to_string(),
        config: state.cfg.clone(),
        ensemble_spec: state.ensemble_spec.clone(),
        dataset_fingerprint: ds_fp.to_string(),
        calibration,
        warm_start: state.warm_start.clone(),
        fuse_events,
        restart_count: state.restart_count(),
        artifacts: Vec::new(),
    };
    Ok(TrainedRun { state, manifest })
}

fn cmd_train(args: TrainArgs) -> CliResult<()> {
    let cfg = load_config(&args.config)?;
    let (ds, ds_fp) = read_dataset(&args.dataset)?;
    let mode_flag = args.mode.as_deref();
    let crossds = mode_flag == Some("crossds");

    // mode flag must agree with the dataset before anything runs
    match (mode_flag, ds.mode()) {
        (Some("identity"), LabelMode::Attributes) => {
            return Err(usage_err("--mode identity, but the dataset is attribute-labeled"))
        }
        (Some("attributes"), LabelMode::Identity) => {
            return Err(usage_err("--mode attributes, but the dataset is identity-labeled"))
        }
        _ => {}
    }

    let out_dir = resolve_out(&args.out_dir);
    std::fs::create_dir_all(&out_dir)?;

    let calibration = if args.skip_calibration {
        CalibrationOutcome {
            skipped: true,
            utility_probe_accuracy: None,
            privacy_probe_accuracy: None,
        }
    } else {
        let (u, p) = calibrate(&ds)?;
        if u < 0.9 || p < 0.9 {
            return Err(usage_err(format!(
                "dataset failed probe calibration (utility {u:.3}, privacy {p:.3}; bar 0.9); \
                 pass --skip-calibration to override"
            )));
        }
        CalibrationOutcome {
            skipped: false,
            utility_probe_accuracy: Some(u),
            privacy_probe_accuracy: Some(p),
        }
    };

    if crossds {
        let db_path = args
            .dataset_b
            .as_ref()
            .ok_or_else(|| usage_err("--mode crossds needs an attribute-mode companion dataset via --dataset-b"))?;
        if ds.mode() != LabelMode::Identity {
            return Err(usage_err("crossds expects the primary dataset to be identity-labeled"));
        }
        let (ds_b, _fp_b) = read_dataset(db_path)?;
        if ds_b.mode() != LabelMode::Attributes {
            return Err(usage_err("crossds expects --dataset-b to be attribute-labeled"));
        }
        let tc_a = resolve_training_config(&cfg, LabelMode::Identity, &args)?;
        let tc_b = resolve_training_config(&cfg, LabelMode::Attributes, &args)?;
        let iterations = tc_a.iterations;
        let mut cross = CrossDatasetState::new(&ds, &ds_b, tc_a, tc_b)?;
        cross.train(&ds, &ds_b, iterations)?;
        let shared = cross.shared_hash()?;

        let run = run_id(&cross.a.cfg, &ds_fp);
        let ckpt_a = out_dir.join("checkpoint_a.bin");
        let ckpt_b = out_dir.join("checkpoint_b.bin");
        write_atomic(&ckpt_a, &checkpoint_bytes(&cross.a)?)?;
        write_atomic(&ckpt_b, &checkpoint_bytes(&cross.b)?)?;
        let hist_a = out_dir.join("history_a.jsonl");
        let hist_b = out_dir.join("history_b.jsonl");
        cross.a.write_history(&hist_a)?;
        cross.b.write_history(&hist_b)?;
        let manifest = RunManifest {
            run_id: run.clone(),
            tool_version: manifest::TOOL_VERSION.to_string(),
            config: cross.a.cfg.clone(),
            ensemble_spec: cross.a.ensemble_spec.clone(),
            dataset_fingerprint: ds_fp,
            calibration,
            warm_start: cross.a.warm_start.clone(),
            fuse_events: Vec::new(),
            restart_count: cross.a.restart_count() + cross.b.restart_count(),
            artifacts: vec![
                "checkpoint_a.bin".into(),
                "checkpoint_b.bin".into(),
                "history_a.jsonl".into(),
                "history_b.jsonl".into(),
            ],
        };
        manifest.save(&out_dir.join("manifest.json"))?;
        println!(
            "run {run} done; shared transform hash {}",
            manifest::hex_string(&shared)[..16].to_string()
        );
        return Ok(());
    }

    let tc = resolve_training_config(&cfg, ds.mode(), &args)?;
    let mut run = run_training(&ds, &ds_fp, tc, calibration)?;
    let ckpt = out_dir.join("checkpoint.bin");
    write_atomic(&ckpt, &checkpoint_bytes(&run.state)?)?;
    let hist = out_dir.join("history.jsonl");
    run.state.write_history(&hist)?;
    run.manifest.artifacts = vec!["checkpoint.bin".into(), "history.jsonl".into()];
    run.manifest.save(&out_dir.join("manifest.json"))?;
    let at = eval_utility(
        Some(&mut run.state.fd),
        &mut run.state.ft,
        &ds,
        Split::Eval,
        run.state.cfg.batch_size,
    );
    println!("run {} done; A_T = {at:.3}", run.manifest.run_id);
    Ok(())
}

fn record_from_exam(
    method: &str,
    s: Option<u32>,
    m: Option<u32>,
    restarting: Option<bool>,
    seed: u64,
    a_t: f64,
    report: &ExaminationReport,
) -> TradeoffRecord {
    TradeoffRecord {
        method: method.to_string(),
        s,
        m,
        restarting,
        seed,
        a_t,
        privacy_metric: report.a_b_n,
        metric_kind: report.metric_kind,
        chance_level: report.chance,
    }
}

fn cmd_eval(args: EvalArgs) -> CliResult<()> {
    let dir = resolve_out(&args.checkpoint_dir);
    let manifest = RunManifest::load(&dir.join("manifest.json")).map_err(usage_err)?;
    let (ds, ds_fp) = read_dataset(&args.dataset)?;
    if ds_fp != manifest.dataset_fingerprint {
        return Err(usage_err(
            "dataset fingerprint does not match the manifest; evaluate on the training dataset",
        ));
    }
    let ckpt_name = if dir.join("checkpoint.bin").exists() {
        "checkpoint.bin"
    } else {
        "checkpoint_a.bin"
    };
    let bytes = std::fs::read(dir.join(ckpt_name))?;
    let mut state = TrainState::restore(
        &ds,
        manifest.config.clone(),
        manifest.ensemble_spec.clone(),
        &bytes,
    )?;

    let a_t = eval_utility(
        Some(&mut state.fd),
        &mut state.ft,
        &ds,
        Split::Eval,
        state.cfg.batch_size,
    );
    let cache = materialize_degraded(Some(&mut state.fd), &ds, state.cfg.batch_size);
    let exam = default_examination(args.n);
    let acfg = AttackerConfig {
        n: args.n,
        max_steps: args.attacker_steps,
        seed: state.cfg.seed.wrapping_add(90_001),
        ..AttackerConfig::default()
    };
    let report =
        run_attacker_examination(&cache, &exam, &manifest.ensemble_spec, &acfg, &ds.generator_spec)?;
    let record = record_from_exam(
        "adversarial",
        None,
        Some(state.cfg.m as u32),
        Some(state.cfg.restart_period != usize::MAX),
        state.cfg.seed,
        a_t,
        &report,
    );
    append_records_jsonl(&dir.join("records.jsonl"), std::slice::from_ref(&record))?;
    let all = load_records_jsonl(&dir.join("records.jsonl"))?;
    write_records_csv(&dir.join("records.csv"), &all)?;
    println!(
        "A_T = {:.3}, A_b^N = {:.3} (chance {:.3}, N = {})",
        a_t, report.a_b_n, report.chance, args.n
    );
    Ok(())
}

fn sweep_point(
    ds: &DualLabeledDataset,
    ds_fp: &str,
    point: &TradeoffRecord,
    acfg: &AttackerConfig,
) -> CliResult<TradeoffRecord> {
    let spec = &ds.generator_spec;
    let training_grid = ModelFamilySpec::default_training(point.m.unwrap_or(4) as usize);
    match point.method.as_str() {
        "raw" => {
            let mut ft = train_plain_utility(ds, point.seed, 1500);
            let a_t = eval_utility(None, &mut ft, ds, Split::Eval, 16);
            let cache = materialize_degraded(None, ds, 16);
            let exam = default_examination(acfg.n);
            let report = run_attacker_examination(&cache, &exam, &training_grid, acfg, spec)?;
            Ok(record_from_exam("raw", None, None, None, point.seed, a_t, &report))
        }
        "downsample" => {
            let s = point.s.unwrap_or(2);
            let dds = map_dataset(ds, |c| downsample_clip(c, s as usize))?;
            let mut ft = train_plain_utility(&dds, point.seed, 1500);
            let a_t = eval_utility(None, &mut ft, &dds, Split::Eval, 16);
            let cache = materialize_degraded(None, &dds, 16);
            let exam = default_examination(acfg.n);
            let report = run_attacker_examination(&cache, &exam, &training_grid, acfg, spec)?;
            Ok(record_from_exam(
                "downsample",
                Some(s),
                None,
                None,
                point.seed,
                a_t,
                &report,
            ))
        }
        "adversarial" => {
            let mut tc = match ds.mode() {
                LabelMode::Identity => TrainingConfig::identity_default(),
                LabelMode::Attributes => TrainingConfig::attributes_default(),
            };
            tc.m = point.m.unwrap_or(4) as usize;
            tc.seed = point.seed;
            if point.restarting == Some(false) {
                tc.restart_period = usize::MAX;
            }
            let calibration = CalibrationOutcome {
                skipped: true,
                utility_probe_accuracy: None,
                privacy_probe_accuracy: None,
            };
            let mut run = run_training(ds, ds_fp, tc, calibration)?;
            let a_t = eval_utility(
                Some(&mut run.state.fd),
                &mut run.state.ft,
                ds,
                Split::Eval,
                16,
            );
            let cache = materialize_degraded(Some(&mut run.state.fd), ds, 16);
            let exam = default_examination(acfg.n);
            let report =
                run_attacker_examination(&cache, &exam, &run.state.ensemble_spec, acfg, spec)?;
            Ok(record_from_exam(
                "adversarial",
                None,
                point.m,
                point.restarting,
                point.seed,
                a_t,
                &report,
            ))
        }
        other => Err(usage_err(format!("unknown sweep method `{other}`"))),
    }
}

fn cmd_sweep(args: SweepArgs) -> CliResult<()> {
    let cfg = load_config(&args.config)?;
    let sweep = cfg.sweep.clone().unwrap_or_default();
    let acfg = cfg.eval.clone().unwrap_or_default();
    let (ds, ds_fp) = read_dataset(&args.dataset)?;
    let out_dir = resolve_out(&args.out_dir);
    std::fs::create_dir_all(&out_dir)?;
    let jsonl = out_dir.join("records.jsonl");

    // plan every configuration point
    let mut points: Vec<TradeoffRecord> = Vec::new();
    let blank = |method: &str, seed: u64| TradeoffRecord {
        method: method.to_string(),
        s: None,
        m: None,
        restarting: None,
        seed,
        a_t: 0.0,
        privacy_metric: 0.0,
        metric_kind: MetricKind::Accuracy,
        chance_level: 0.0,
    };
    for &seed in &sweep.seeds {
        for method in &sweep.methods {
            match method.as_str() {
                "raw" => points.push(blank("raw", seed)),
                "downsample" => {
                    for &s in &sweep.s_values {
                        let mut p = blank("downsample", seed);
                        p.s = Some(s);
                        points.push(p);
                    }
                }
                "adversarial" => {
                    for &m in &sweep.m_values {
                        for &r in &sweep.restarting {
                            let mut p = blank("adversarial", seed);
                            p.m = Some(m);
                            p.restarting = Some(r);
                            points.push(p);
                        }
                    }
                }
                other => return Err(usage_err(format!("unknown sweep method `{other}`"))),
            }
        }
    }

    // resume: skip configurations already in the record stream
    let existing = load_records_jsonl(&jsonl)?;
    let done: std::collections::HashSet<_> =
        existing.iter().map(|r| r.config_key()).collect();

    let mut worst_code = 0u8;
    for point in &points {
        if done.contains(&point.config_key()) {
            continue;
        }
        match sweep_point(&ds, &ds_fp, point, &acfg) {
            Ok(rec) => {
                append_records_jsonl(&jsonl, std::slice::from_ref(&rec))?;
                println!(
                    "{} s={:?} M={:?} restart={:?} seed={}: A_T={:.3} privacy={:.3}",
                    rec.method, rec.s, rec.m, rec.restarting, rec.seed, rec.a_t, rec.privacy_metric
                );
            }
            Err(e) => {
                eprintln!(
                    "record failed ({} s={:?} M={:?} seed={}): {}",
                    point.method, point.s, point.m, point.seed, e.message
                );
                worst_code = worst_code.max(e.code);
            }
        }
    }

    let all = load_records_jsonl(&jsonl)?;
    write_records_csv(&out_dir.join("records.csv"), &all)?;
    plot::render_tradeoff(&all, &out_dir.join("tradeoff.png")).map_err(usage_err)?;
    println!(
        "sweep done: {} records, table records.csv, plot tradeoff.png",
        all.len()
    );
    if worst_code != 0 {
        return Err(CliError {
            code: worst_code,
            message: "one or more sweep records failed".into(),
        });
    }
    Ok(())
}

fn cmd_plot(args: PlotArgs) -> CliResult<()> {
    let records = load_records_jsonl(&resolve_out(&args.records))?;
    let out = resolve_out(&args.out);
    if let Some(dir) = out.parent() {
        std::fs::create_dir_all(dir)?;
    }
    plot::render_tradeoff(&records, &out).map_err(usage_err)?;
    println!("plot written to {}", out.display());
    Ok(())
}
