//! Command-line front end.
//!
//! Exit codes: 0 success, 2 bad flags or config, 3 I/O, 4 non-finite loss,
//! 5 segmentation backend failure, 1 anything else. Verbosity follows the
//! `SEGZERO_LOG` environment variable (`error` … `trace`, default `info`).
//! Values given as flags override the config file.

use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use thiserror::Error;

use crate::config::{ConfigError, DataConfig, RunConfig};
use crate::dataprep::{import_annotations, read_dataset, synth_dataset, write_dataset, DataError, GroundTruthRecord, TaskSample};
use crate::eval::{run_benchmark, EvalConfig, EvalError, EvalReport, PromptSource};
use crate::grpo::{read_log, train, LogRow, RunPaths, SegTask, TrainError};
use crate::parser::{extract_prompt, parse_response, FormatMode};
use crate::policy::{NetSpec, Policy, PolicyError};
use crate::rewards::{seg_format_reward, thinking_format_reward, AccuracyMode};
use crate::segmenter::BackendKind;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    NonFiniteLoss(String),
    #[error("{0}")]
    Backend(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io(_) => 3,
            CliError::NonFiniteLoss(_) => 4,
            CliError::Backend(_) => 5,
            CliError::Other(_) => 1,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io { .. } => CliError::Io(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Io(_) => CliError::Io(e.to_string()),
            _ => CliError::Other(e.to_string()),
        }
    }
}

impl From<PolicyError> for CliError {
    fn from(e: PolicyError) -> Self {
        match e {
            PolicyError::Io(_) => CliError::Io(e.to_string()),
            _ => CliError::Other(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NonFiniteLoss { .. } => CliError::NonFiniteLoss(e.to_string()),
            TrainError::Config(_) => CliError::Usage(e.to_string()),
            TrainError::Io { .. } => CliError::Io(e.to_string()),
            TrainError::Policy(p) => p.into(),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Segment { .. } => CliError::Backend(e.to_string()),
            _ => CliError::Other(e.to_string()),
        }
    }
}

fn io_at(path: &Path) -> impl Fn(io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

fn csv_at(path: &Path) -> impl Fn(csv::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(name = "segzero", version, about = "Reasoning segmentation trained with GRPO")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset or import external annotations.
    PrepareData(PrepareArgs),
    /// Train a policy with GRPO.
    Train(TrainArgs),
    /// Benchmark a checkpoint or an oracle prompt source.
    Eval(EvalArgs),
    /// Parse responses, one per line, and print their format verdicts.
    ParseCheck(ParseCheckArgs),
    /// Turn a training log into plot-ready CSVs.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, conflicts_with = "import")]
    pub n_samples: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// External annotations: JSON lines with width, height, mask_rle, text.
    #[arg(long)]
    pub import: Option<PathBuf>,
    #[arg(long)]
    pub min_objects: Option<usize>,
    #[arg(long)]
    pub max_objects: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub format_mode: Option<FormatMode>,
    #[arg(long)]
    pub accuracy_mode: Option<AccuracyMode>,
    #[arg(long)]
    pub train_data: Option<PathBuf>,
    #[arg(long)]
    pub eval_data: Option<PathBuf>,
    #[arg(long)]
    pub eval_every: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Oracle {
    GroundTruth,
    Empty,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, required_unless_present = "oracle")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, conflicts_with = "checkpoint")]
    pub oracle: Option<Oracle>,
    /// Dataset file; without it a synthetic set is generated.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub n_samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub backend: Option<BackendKind>,
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub timeout_ms: Option<u64>,
    #[arg(long)]
    pub format_mode: Option<FormatMode>,
    /// Sample at this temperature instead of argmax decoding.
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ParseCheckArgs {
    /// Response file; standard input when absent.
    pub input: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatMode::Strict)]
    pub mode: FormatMode,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub log: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::PrepareData(a) => prepare_data(a),
        Command::Train(a) => cmd_train(a).map(|_| ()),
        Command::Eval(a) => cmd_eval(a).map(|_| ()),
        Command::ParseCheck(a) => parse_check(a),
        Command::Report(a) => report(a),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn init_logging() {
    let env = env_logger::Env::new().filter_or("SEGZERO_LOG", "info");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

fn prepare_data(a: PrepareArgs) -> Result<(), CliError> {
    let records = match (&a.import, a.n_samples) {
        (Some(path), _) => {
            let f = File::open(path).map_err(io_at(path))?;
            import_annotations(BufReader::new(f)).map_err(|e| match e {
                DataError::Io(_) => CliError::Io(e.to_string()),
                _ => CliError::Usage(format!("{}: {e}", path.display())),
            })?
        }
        (None, Some(n)) => {
            let mut synth = crate::dataprep::SynthConfig::default();
            if let Some(v) = a.min_objects {
                synth.min_objects = v;
            }
            if let Some(v) = a.max_objects {
                synth.max_objects = v;
            }
            if synth.min_objects > synth.max_objects {
                return Err(CliError::Usage("--min-objects exceeds --max-objects".into()));
            }
            synth_dataset(n, a.seed, &synth)?
        }
        (None, None) => return Err(CliError::Usage("give --n-samples or --import".into())),
    };
    write_dataset(&a.out, &records).map_err(|e| CliError::Io(format!("{}: {e}", a.out.display())))?;
    let mean_area = if records.is_empty() {
        0.0
    } else {
        records.iter().map(|r| r.mask.count() as f64).sum::<f64>() / records.len() as f64
    };
    println!("records {} mean_mask_area {mean_area:.1}", records.len());
    Ok(())
}

fn load_records(path: &Path) -> Result<Vec<GroundTruthRecord>, CliError> {
    read_dataset(path).map_err(|e| match e {
        DataError::Io(_) => CliError::Io(format!("{}: {e}", path.display())),
        _ => CliError::Other(format!("{}: {e}", path.display())),
    })
}

fn dataset(path: &Option<PathBuf>, n: usize, seed: u64, data: &DataConfig) -> Result<Vec<GroundTruthRecord>, CliError> {
    match path {
        Some(p) => load_records(p),
        None => Ok(synth_dataset(n, seed, &data.synth)?),
    }
}

fn task_samples(records: &[GroundTruthRecord]) -> Result<Vec<TaskSample>, CliError> {
    Ok(records
        .iter()
        .map(TaskSample::from_record)
        .collect::<Result<_, _>>()?)
}

/// Resolves the run config: defaults, then the file, then flags.
pub fn resolve_train_config(a: &TrainArgs) -> Result<RunConfig, CliError> {
    let mut c = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(v) = &a.out {
        c.out_dir = v.clone();
    }
    if let Some(v) = a.steps {
        c.train.steps = v;
    }
    if let Some(v) = a.seed {
        c.train.seed = v;
        c.init_seed = v;
    }
    if let Some(v) = a.learning_rate {
        c.train.learning_rate = v;
    }
    if let Some(v) = a.format_mode {
        c.rewards.format_mode = v;
    }
    if let Some(v) = a.accuracy_mode {
        c.rewards.accuracy_mode = v;
    }
    if let Some(v) = &a.train_data {
        c.data.train_path = Some(v.clone());
    }
    if let Some(v) = &a.eval_data {
        c.data.eval_path = Some(v.clone());
    }
    if let Some(v) = a.eval_every {
        c.train.eval_every = v;
    }
    c.validate()?;
    Ok(c)
}

pub fn cmd_train(a: TrainArgs) -> Result<Vec<LogRow>, CliError> {
    let c = resolve_train_config(&a)?;
    fs::create_dir_all(&c.out_dir).map_err(io_at(&c.out_dir))?;
    c.save(&c.out_dir.join("config.toml"))?;
    let d = &c.data;
    let train_records = dataset(&d.train_path, d.n_train, d.train_seed, d)?;
    let task = SegTask::new(task_samples(&train_records)?, c.rewards.clone());
    let eval_records = if c.train.eval_every > 0 || d.eval_path.is_some() {
        dataset(&d.eval_path, d.n_eval, d.eval_seed, d)?
    } else {
        Vec::new()
    };
    let eval_cfg = EvalConfig {
        rewards: c.rewards.clone(),
        backend: c.backend.clone(),
    };
    let mut evaluate = |p: &Policy| -> Result<(f64, f64), TrainError> {
        let r = run_benchmark("eval", &eval_records, &PromptSource::Greedy(p), &eval_cfg)
            .map_err(|e| TrainError::Config(format!("evaluation failed: {e}")))?;
        Ok((r.giou, r.ciou))
    };
    let init = Policy::init(NetSpec::segmentation(), c.init_seed, &c.init);
    let paths = RunPaths { dir: c.out_dir.clone() };
    let hook: Option<&mut dyn FnMut(&Policy) -> Result<(f64, f64), TrainError>> =
        if eval_records.is_empty() { None } else { Some(&mut evaluate) };
    let outcome = train(&c.train, &task, init, Some(&paths), hook)?;
    if let Some(last) = outcome.log.last() {
        println!(
            "steps {} reward {:.4} format {:.4} iou {:.4} len_mean {:.2}",
            last.step, last.reward_total, last.reward_format, last.reward_iou, last.len_mean
        );
    }
    if let Some(e) = outcome.evals.last() {
        println!("eval step {} giou {:.4} ciou {:.4}", e.step, e.giou, e.ciou);
    }
    println!("checkpoint {}", paths.final_checkpoint().display());
    Ok(outcome.log)
}

pub fn cmd_eval(a: EvalArgs) -> Result<EvalReport, CliError> {
    let mut c = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(v) = a.backend {
        c.backend.kind = v;
    }
    if let Some(v) = &a.endpoint {
        c.backend.endpoint = Some(v.clone());
    }
    if let Some(v) = a.timeout_ms {
        c.backend.timeout_ms = v;
    }
    if let Some(v) = a.format_mode {
        c.rewards.format_mode = v;
    }
    if let Some(v) = a.n_samples {
        c.data.n_eval = v;
    }
    if let Some(v) = a.seed {
        c.data.eval_seed = v;
    }
    if let Some(v) = &a.data {
        c.data.eval_path = Some(v.clone());
    }
    c.validate()?;
    let records = dataset(&c.data.eval_path, c.data.n_eval, c.data.eval_seed, &c.data)?;
    let policy = a.checkpoint.as_deref().map(Policy::load).transpose()?;
    let source = match (&policy, a.oracle, a.temperature) {
        (Some(p), _, None) => PromptSource::Greedy(p),
        (Some(p), _, Some(t)) => PromptSource::Sampled {
            policy: p,
            temperature: t,
            seed: c.data.eval_seed,
        },
        (None, Some(Oracle::GroundTruth), _) => PromptSource::GroundTruth,
        (None, Some(Oracle::Empty), _) => PromptSource::Empty,
        (None, None, _) => return Err(CliError::Usage("give --checkpoint or --oracle".into())),
    };
    let name = c
        .data
        .eval_path
        .as_ref()
        .map_or_else(|| format!("synth-{}-{}", c.data.n_eval, c.data.eval_seed), |p| p.display().to_string());
    let cfg = EvalConfig {
        rewards: c.rewards.clone(),
        backend: c.backend.clone(),
    };
    let report = run_benchmark(&name, &records, &source, &cfg)?;
    print!("{}", report.table());
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir).map_err(io_at(dir))?;
        let w = |name: &str, s: &str| -> Result<(), CliError> {
            let p = dir.join(name);
            fs::write(&p, s).map_err(io_at(&p))
        };
        w("report.json", &report.to_json())?;
        w("report.csv", &report.summary_csv())?;
        w("report.txt", &report.table())?;
        let p = dir.join("samples.csv");
        let f = File::create(&p).map_err(io_at(&p))?;
        report.write_samples_csv(BufWriter::new(f)).map_err(csv_at(&p))?;
    }
    Ok(report)
}

#[derive(Serialize)]
struct ParseVerdict {
    line: usize,
    structure_valid: bool,
    thinking_format: f64,
    seg_format: f64,
    prompt: Option<[f64; 8]>,
}

fn parse_check(a: ParseCheckArgs) -> Result<(), CliError> {
    let reader: Box<dyn BufRead> = match &a.input {
        Some(p) => Box::new(BufReader::new(File::open(p).map_err(io_at(p))?)),
        None => Box::new(io::stdin().lock()),
    };
    let stdout = io::stdout();
    let mut out = stdout.lock();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| CliError::Io(e.to_string()))?;
        let parsed = parse_response(&line);
        let (_, prompt) = extract_prompt(&line, a.mode);
        let v = ParseVerdict {
            line: i + 1,
            structure_valid: parsed.structure_valid,
            thinking_format: thinking_format_reward(&parsed),
            seg_format: seg_format_reward(parsed.answer.as_deref(), a.mode),
            prompt: prompt.map(|p| {
                let b = p.bbox.to_array();
                [b[0], b[1], b[2], b[3], p.p1.x, p.p1.y, p.p2.x, p.p2.y]
            }),
        };
        let s = serde_json::to_string(&v).expect("verdict serializes");
        writeln!(out, "{s}").map_err(|e| CliError::Io(e.to_string()))?;
    }
    Ok(())
}

pub const REWARDS_CSV: &str = "rewards.csv";
pub const LENGTH_CSV: &str = "length.csv";

fn report(a: ReportArgs) -> Result<(), CliError> {
    let f = File::open(&a.log).map_err(io_at(&a.log))?;
    let rows = read_log(f).map_err(csv_at(&a.log))?;
    fs::create_dir_all(&a.out).map_err(io_at(&a.out))?;
    let p = a.out.join(REWARDS_CSV);
    let mut w = csv::Writer::from_path(&p).map_err(csv_at(&p))?;
    w.write_record([
        "step",
        "reward_total",
        "reward_think",
        "reward_format",
        "reward_iou",
        "reward_bbox_l1",
        "reward_point_l1",
    ])
    .map_err(csv_at(&p))?;
    for r in &rows {
        let v = [
            r.reward_total,
            r.reward_think,
            r.reward_format,
            r.reward_iou,
            r.reward_bbox_l1,
            r.reward_point_l1,
        ];
        let mut rec = vec![r.step.to_string()];
        rec.extend(v.iter().map(f64::to_string));
        w.write_record(&rec).map_err(csv_at(&p))?;
    }
    w.flush().map_err(io_at(&p))?;
    let p = a.out.join(LENGTH_CSV);
    let mut w = csv::Writer::from_path(&p).map_err(csv_at(&p))?;
    w.write_record(["step", "len_mean", "len_min"]).map_err(csv_at(&p))?;
    for r in &rows {
        w.write_record([r.step.to_string(), r.len_mean.to_string(), r.len_min.to_string()])
            .map_err(csv_at(&p))?;
    }
    w.flush().map_err(io_at(&p))?;
    println!("rows {}", rows.len());
    Ok(())
}
