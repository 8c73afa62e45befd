use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use tweenforge::gradcheck::{run_gradcheck, GradcheckConfig};
use tweenforge::heads::HeadKind;
use tweenforge::inference::{infer, parse_request, request_from_curves, InferRequest, ServiceError};
use tweenforge::io::{
    load_checkpoint, read_curve_set, read_curves, read_schedule, read_train_config, save_checkpoint,
    schedule_path_for, to_json_string, write_curves, write_json, write_schedule,
};
use tweenforge::metrics::metric_report;
use tweenforge::schedule::{augment_schedule, dba_extract, AugmentParams, DbaParams};
use tweenforge::synthgen::{default_character, generate_dataset, StyleParams, DEFAULT_COUNT, DEFAULT_FRAMES};
use tweenforge::training::{evaluate, fit, ScheduleMode, TrainConfig};
use tweenforge::{Error, MotionSequence, Schedule};

use crate::server;

#[derive(Debug, Parser)]
#[command(name = "tweenforge", version, about = "Keypose-driven motion in-betweening")]
pub struct Cli {
    /// Seed for every randomized step.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset of stylized curves with block schedules.
    SynthGen(SynthGenArgs),
    /// Extract keypose schedules with the domain-based extractor.
    ExtractKeyposes(ExtractArgs),
    /// Perturb a schedule with one of the augmentation levels.
    AugmentSchedule(AugmentArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// In-between keyposes with a trained model.
    Infer(InferArgs),
    /// Compute metrics for a model on a dataset, or for a prediction file.
    Eval(EvalArgs),
    /// Check analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct SynthGenArgs {
    /// Output directory; receives `NNNN.json` curves and `NNNN.schedule.json`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_COUNT)]
    pub count: usize,
    #[arg(long, default_value_t = DEFAULT_FRAMES)]
    pub frames: usize,
    /// TOML file with style parameters.
    #[arg(long)]
    pub style: Option<PathBuf>,
    /// Holds joined by instant jumps, no overshoot or anticipation.
    #[arg(long, conflicts_with = "style")]
    pub pure_step: bool,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// Curve file or directory of curve files.
    #[arg(long)]
    pub input: PathBuf,
    /// Schedule file for a single input, or directory for a directory input.
    /// Defaults to stdout (single) or next to each curve file (directory).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// TOML file with extractor parameters.
    #[arg(long)]
    pub params: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[arg(long)]
    pub schedule: PathBuf,
    #[arg(long, default_value_t = 2)]
    pub level: u8,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory of curve files.
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
    /// TOML training configuration; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub head: Option<String>,
    /// dba, dba_aug_level_K or random_R.
    #[arg(long)]
    pub schedule_mode: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub hidden_size: Option<usize>,
    #[arg(long)]
    pub num_layers: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Training report JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Request JSON, as posted to `/v1/infer`.
    #[arg(long, conflicts_with = "input", required_unless_present = "input")]
    pub request: Option<PathBuf>,
    /// Curve file whose keyposes are kept.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Schedule for `--input`; defaults to the extracted keyposes.
    #[arg(long, requires = "input")]
    pub schedule: Option<PathBuf>,
    #[arg(long)]
    pub return_gates: bool,
    /// Defaults to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, requires = "data", conflicts_with_all = ["gt", "pred"])]
    pub model: Option<PathBuf>,
    /// Directory (or file) of ground-truth curves.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Inference schedule: dba, gt, dba_aug_level_K or random_R.
    #[arg(long, default_value = "dba")]
    pub schedule: String,
    /// Ground-truth curve file, scored against `--pred`.
    #[arg(long, requires_all = ["pred", "keyposes"], required_unless_present = "model")]
    pub gt: Option<PathBuf>,
    #[arg(long)]
    pub pred: Option<PathBuf>,
    /// Schedule file for `--gt`/`--pred` scoring.
    #[arg(long)]
    pub keyposes: Option<PathBuf>,
    /// Defaults to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Preset: `tiny` or `tiny-<head>`.
    #[arg(long, default_value = "tiny")]
    pub config: String,
    /// Number of consecutive seeds starting at `--seed`.
    #[arg(long, default_value_t = 5)]
    pub seeds: u64,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, env = "TWEENFORGE_PORT", default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
}

/// Failure of a subcommand, printed as `{code, message, field?}` on stderr.
#[derive(Debug)]
pub struct CliError(pub ServiceError);

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError(e.into())
    }
}

impl From<ServiceError> for CliError {
    fn from(e: ServiceError) -> Self {
        CliError(e)
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn config_error(message: impl Into<String>) -> CliError {
    Error::Config(message.into()).into()
}

fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> CliResult {
    match out {
        Some(p) => write_json(p, value)?,
        None => print!("{}", to_json_string(value)?),
    }
    Ok(())
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    toml::from_str(&text).map_err(|e| config_error(format!("{}: {}", path.display(), e.message())))
}

#[derive(Serialize)]
struct SynthSummary {
    out: PathBuf,
    sequences: usize,
    frames: usize,
    dim: usize,
    seed: u64,
}

fn synth_gen(args: &SynthGenArgs, seed: u64) -> CliResult {
    let style = match (&args.style, args.pure_step) {
        (Some(p), _) => read_toml(p)?,
        (None, true) => StyleParams::pure_step(),
        (None, false) => StyleParams::default(),
    };
    let spec = default_character();
    let data = generate_dataset(&spec, &style, args.count, args.frames, seed)?;
    std::fs::create_dir_all(&args.out).map_err(|e| Error::Io {
        path: args.out.clone(),
        source: e,
    })?;
    for (i, (seq, sched)) in data.sequences.iter().zip(&data.block_schedules).enumerate() {
        let p = args.out.join(format!("{i:04}.json"));
        write_curves(&p, &spec, seq)?;
        write_schedule(&schedule_path_for(&p), sched)?;
    }
    emit(
        &SynthSummary {
            out: args.out.clone(),
            sequences: data.len(),
            frames: args.frames,
            dim: spec.dim(),
            seed,
        },
        None,
    )
}

fn dba_params(path: Option<&Path>) -> CliResult<DbaParams> {
    let params: DbaParams = match path {
        Some(p) => read_toml(p)?,
        None => DbaParams::default(),
    };
    params.validate()?;
    Ok(params)
}

fn extract(args: &ExtractArgs) -> CliResult {
    let params = dba_params(args.params.as_deref())?;
    if !args.input.is_dir() {
        let (_, seq) = read_curves(&args.input)?;
        let sched = dba_extract(&seq, &params)?;
        return match &args.out {
            Some(p) => Ok(write_schedule(p, &sched)?),
            None => emit(&sched, None),
        };
    }
    let (_, entries) = read_curve_set(&args.input)?;
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.clone(),
            source: e,
        })?;
    }
    for e in &entries {
        let sched = dba_extract(&e.sequence, &params)?;
        let target = match &args.out {
            Some(dir) => dir.join(schedule_path_for(&e.path).file_name().expect("file name")),
            None => schedule_path_for(&e.path),
        };
        write_schedule(&target, &sched)?;
    }
    Ok(())
}

fn augment(args: &AugmentArgs, seed: u64) -> CliResult {
    let sched = read_schedule(&args.schedule)?;
    let out = augment_schedule(&sched, &AugmentParams::level(args.level)?, seed)?;
    match &args.out {
        Some(p) => Ok(write_schedule(p, &out)?),
        None => emit(&out, None),
    }
}

fn load_sequences(path: &Path) -> CliResult<(tweenforge::CharacterSpec, Vec<MotionSequence>, Vec<Option<Schedule>>)> {
    let (spec, entries) = read_curve_set(path)?;
    let (seqs, scheds) = entries.into_iter().map(|e| (e.sequence, e.schedule)).unzip();
    Ok((spec, seqs, scheds))
}

fn train(args: &TrainArgs, seed: u64) -> CliResult {
    let mut cfg = match &args.config {
        Some(p) => read_train_config(p)?,
        None => TrainConfig::default(),
    };
    cfg.seed = seed;
    if let Some(h) = &args.head {
        cfg.head = HeadKind::parse(h)?;
    }
    if let Some(m) = &args.schedule_mode {
        cfg.schedule_mode = m.parse()?;
    }
    cfg.epochs = args.epochs.unwrap_or(cfg.epochs);
    cfg.hidden_size = args.hidden_size.unwrap_or(cfg.hidden_size);
    cfg.num_layers = args.num_layers.unwrap_or(cfg.num_layers);
    cfg.batch_size = args.batch_size.unwrap_or(cfg.batch_size);
    cfg.learning_rate = args.learning_rate.unwrap_or(cfg.learning_rate);
    cfg.validate()?;
    let (spec, seqs, _) = load_sequences(&args.data)?;
    let (model, report) = fit(&spec, &seqs, &cfg)?;
    save_checkpoint(&model, &args.out)?;
    log::info!("wrote {}", args.out.display());
    emit(&report, args.report.as_deref())
}

fn infer_cmd(args: &InferArgs) -> CliResult {
    let model = load_checkpoint(&args.model)?;
    let req: InferRequest = match (&args.request, &args.input) {
        (Some(p), _) => {
            let bytes = std::fs::read(p).map_err(|e| Error::Io {
                path: p.clone(),
                source: e,
            })?;
            let mut req: InferRequest = parse_request(&bytes)?;
            req.options.return_gates |= args.return_gates;
            req
        }
        (None, Some(p)) => {
            let (spec, seq) = read_curves(p)?;
            if spec != model.spec {
                return Err(Error::SpecMismatch(format!("{} does not use the model's character", p.display())).into());
            }
            let sched = match &args.schedule {
                Some(s) => read_schedule(s)?,
                None => dba_extract(&model.to_model_space(&seq)?.0, &DbaParams::default())?,
            };
            request_from_curves(&seq, &sched, args.return_gates)
        }
        (None, None) => return Err(config_error("one of --request or --input is required")),
    };
    let resp = infer(&model, &req)?;
    emit(&resp, args.out.as_deref())
}

fn eval_cmd(args: &EvalArgs, seed: u64) -> CliResult {
    if let (Some(gt), Some(pred), Some(keys)) = (&args.gt, &args.pred, &args.keyposes) {
        let (gspec, g) = read_curves(gt)?;
        let (pspec, p) = read_curves(pred)?;
        if gspec != pspec {
            return Err(Error::SpecMismatch("prediction uses a different character".into()).into());
        }
        let sched = read_schedule(keys)?;
        return emit(&metric_report(&gspec, &g, &p, &sched)?, args.out.as_deref());
    }
    let (Some(model_path), Some(data)) = (&args.model, &args.data) else {
        return Err(config_error("eval needs --model and --data, or --gt, --pred and --keyposes"));
    };
    let model = load_checkpoint(model_path)?;
    let mode: ScheduleMode = args.schedule.parse()?;
    let (spec, seqs, scheds) = load_sequences(data)?;
    if spec != model.spec {
        return Err(Error::SpecMismatch("data does not use the model's character".into()).into());
    }
    let given: Option<Vec<Schedule>> = if mode == ScheduleMode::GroundTruth {
        let all: Option<Vec<Schedule>> = scheds.into_iter().collect();
        Some(all.ok_or_else(|| config_error("--schedule gt needs a .schedule.json next to every curve file"))?)
    } else {
        None
    };
    let report = evaluate(&model, &seqs, mode, given.as_deref(), &DbaParams::default(), seed)?;
    emit(&report, args.out.as_deref())
}

#[derive(Serialize)]
struct GradcheckSummary {
    config: GradcheckConfig,
    seeds: Vec<u64>,
    checked: usize,
    skipped_kinks: usize,
    max_rel_error: f64,
    worst_param: Option<String>,
    passed: bool,
}

/// Returns whether the check passed.
fn gradcheck(args: &GradcheckArgs, seed: u64) -> CliResult<bool> {
    let cfg = GradcheckConfig::preset(&args.config)?;
    let seeds: Vec<u64> = (seed..seed + args.seeds.max(1)).collect();
    let mut summary = GradcheckSummary {
        config: cfg.clone(),
        seeds: seeds.clone(),
        checked: 0,
        skipped_kinks: 0,
        max_rel_error: 0.0,
        worst_param: None,
        passed: false,
    };
    for s in seeds {
        let r = run_gradcheck(&cfg, s)?;
        summary.checked += r.checked;
        summary.skipped_kinks += r.skipped_kinks;
        if r.max_rel_error >= summary.max_rel_error {
            summary.max_rel_error = r.max_rel_error;
            summary.worst_param = r.worst_param;
        }
    }
    summary.passed = summary.max_rel_error < cfg.tolerance;
    emit(&summary, None)?;
    Ok(summary.passed)
}

fn serve(args: &ServeArgs) -> CliResult {
    let model = args.model.as_deref().map(load_checkpoint).transpose()?;
    let state = server::AppState::new(model, args.model.clone());
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Error::Io {
        path: PathBuf::from("<runtime>"),
        source: e,
    })?;
    runtime
        .block_on(server::serve(state, &args.host, args.port))
        .map_err(|e| {
            Error::Io {
                path: PathBuf::from(format!("{}:{}", args.host, args.port)),
                source: e,
            }
            .into()
        })
}

/// Dispatches a parsed command line. Returns the process exit code.
pub fn execute(cli: &Cli) -> i32 {
    let result = match &cli.command {
        Command::SynthGen(a) => synth_gen(a, cli.seed).map(|_| true),
        Command::ExtractKeyposes(a) => extract(a).map(|_| true),
        Command::AugmentSchedule(a) => augment(a, cli.seed).map(|_| true),
        Command::Train(a) => train(a, cli.seed).map(|_| true),
        Command::Infer(a) => infer_cmd(a).map(|_| true),
        Command::Eval(a) => eval_cmd(a, cli.seed).map(|_| true),
        Command::Gradcheck(a) => gradcheck(a, cli.seed),
        Command::Serve(a) => serve(a).map(|_| true),
    };
    match result {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(CliError(e)) => {
            eprintln!("{}", serde_json::to_string(&e).expect("error serializes"));
            1
        }
    }
}

/// Parses `argv` and runs it. Usage errors exit with 2, help and version
/// with 0.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(argv) {
        Ok(cli) => execute(&cli),
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            code
        }
    }
}
