//! `comove`: preprocessing, training, detection, evaluation and end-to-end
//! replay from the command line.
//!
//! Exit codes: 0 success, 1 usage or validation error, 2 runtime error.

mod config;
mod geojson;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use comove::evaluation::{cluster_matching, summarize, ClusterSet, MatchOptions, SliceMap, SpatialScope};
use comove::evolving::{detect_batch, DetectError};
use comove::flp::{
    build_dataset, load_model, save_model, train_bptt, ConstantVelocity, DatasetSpec, FlpError, GruPredictor,
    LocationPredictor, PredictorConfig,
};
use comove::io::{
    group_trajectories, read_clusters_csv, read_points_csv, slices_from_points, write_clusters_csv,
    write_clusters_jsonl_file, write_matches_csv, write_points_csv, write_predictions_csv, IoError,
};
use comove::pipeline::{load_replay, run_online, PipelineConfig, PipelineError, PredictorKind, ReplaySpeed};
use comove::preprocess::{preprocess_all, segment_by_gap, PreprocessError};
use comove::synth::{generate, write_points_file, write_truth_file, GroupSpec, MotionModel, SynthError, SynthScenario};
use comove::{DetectionParams, Execution, Mode, PreprocessConfig, SimWeights, TimestampedPoint, Trajectory};

use config::FileConfig;

#[derive(Debug)]
pub enum CliError {
    /// Bad flag values or configuration.
    Invalid(String),
    /// Failures while doing the work: I/O, malformed files, numerics.
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Invalid(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Invalid(m) => write!(f, "invalid input: {m}"),
            CliError::Runtime(m) => write!(f, "{m}"),
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn invalid(e: impl std::fmt::Display) -> CliError {
    CliError::Invalid(e.to_string())
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        runtime(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        runtime(e)
    }
}

impl From<PreprocessError> for CliError {
    fn from(e: PreprocessError) -> Self {
        invalid(e)
    }
}

impl From<DetectError> for CliError {
    fn from(e: DetectError) -> Self {
        match e {
            DetectError::InvalidParams(_) => invalid(e),
            _ => runtime(e),
        }
    }
}

impl From<FlpError> for CliError {
    fn from(e: FlpError) -> Self {
        match e {
            FlpError::InvalidConfig(_) | FlpError::Dimension(_) => invalid(e),
            _ => runtime(e),
        }
    }
}

impl From<comove::evaluation::EvalError> for CliError {
    fn from(e: comove::evaluation::EvalError) -> Self {
        match e {
            comove::evaluation::EvalError::InvalidWeights(_) | comove::evaluation::EvalError::InvalidRate(_) => invalid(e),
            _ => runtime(e),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::InvalidConfig(_) | PipelineError::MissingModel | PipelineError::Preprocess(_) => invalid(e),
            PipelineError::Detect(d) => d.into(),
            PipelineError::Eval(v) => v.into(),
            PipelineError::Worker => runtime(e),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Invalid(_) => invalid(e),
            SynthError::Io(_) => runtime(e),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        runtime(e)
    }
}

type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Parser, Debug)]
#[command(name = "comove", version, about = "Predict and evaluate co-movement patterns in trajectory streams")]
struct Cli {
    /// TOML file with [preprocess], [detection], [train], [run] and [synth] sections.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Seed for training and synthetic data.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run every data-parallel loop on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Clean, segment and align a raw points CSV.
    Preprocess(PreprocessCmd),
    /// Train the GRU location predictor on aligned trajectories.
    Train(TrainCmd),
    /// Forecast the position of every trajectory segment end.
    Predict(PredictCmd),
    /// Find evolving clusters in a points CSV.
    Detect(DetectCmd),
    /// Match predicted clusters to actual clusters and score them.
    Evaluate(EvaluateCmd),
    /// Replay a file through the online prediction and detection pipeline.
    Run(RunCmd),
    /// Generate a synthetic fleet with scripted groups.
    Synth(SynthCmd),
}

#[derive(Args, Debug, Default)]
struct PreprocessFlags {
    /// Speed above which a record is noise, knots.
    #[arg(long)]
    speed_max: Option<f64>,
    /// Temporal gap that splits a trajectory, seconds.
    #[arg(long)]
    gap_dt: Option<f64>,
    /// Speed below which a record is a stop point, knots.
    #[arg(long)]
    stop_speed: Option<f64>,
    /// Grid spacing, seconds.
    #[arg(long)]
    align_rate: Option<i64>,
    /// Grid origin, Unix seconds.
    #[arg(long)]
    epoch: Option<i64>,
}

impl PreprocessFlags {
    fn resolve(&self, file: &FileConfig) -> Result<PreprocessConfig> {
        let mut c = file.section("preprocess", PreprocessConfig::default())?;
        self.apply(&mut c);
        c.validate()?;
        Ok(c)
    }

    fn apply(&self, c: &mut PreprocessConfig) {
        set(&mut c.speed_max, self.speed_max);
        set(&mut c.gap_dt, self.gap_dt);
        set(&mut c.stop_speed, self.stop_speed);
        set(&mut c.align_rate, self.align_rate);
        set(&mut c.epoch, self.epoch);
    }
}

#[derive(Args, Debug, Default)]
struct DetectionFlags {
    /// Minimum number of members.
    #[arg(long)]
    c: Option<usize>,
    /// Distance threshold, metres.
    #[arg(long)]
    theta: Option<f64>,
    /// Minimum lifetime, timeslices.
    #[arg(long)]
    d: Option<usize>,
    /// Cluster types to report: mc, mcs or both.
    #[arg(long)]
    mode: Option<Mode>,
    /// Also report patterns as soon as they reach the minimum lifetime.
    #[arg(long)]
    progressive: bool,
}

impl DetectionFlags {
    fn apply(&self, p: &mut DetectionParams) {
        set(&mut p.c, self.c);
        set(&mut p.theta, self.theta);
        set(&mut p.d, self.d);
        set(&mut p.mode, self.mode);
        p.progressive |= self.progressive;
    }

    fn resolve(&self, file: &FileConfig) -> Result<DetectionParams> {
        let mut p = file.section("detection", DetectionParams::default())?;
        self.apply(&mut p);
        p.validate()?;
        Ok(p)
    }
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

#[derive(Args, Debug)]
struct PreprocessCmd {
    #[arg(long, short)]
    input: PathBuf,
    #[arg(long, short)]
    output: PathBuf,
    #[command(flatten)]
    pre: PreprocessFlags,
}

#[derive(Args, Debug)]
struct TrainCmd {
    /// Aligned points CSV (output of `preprocess`).
    #[arg(long, short)]
    input: PathBuf,
    /// Model file to write.
    #[arg(long, short)]
    output: PathBuf,
    /// Per-epoch mean loss, CSV.
    #[arg(long)]
    loss_history: Option<PathBuf>,
    /// Grid spacing of the input, seconds.
    #[arg(long)]
    align_rate: Option<i64>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    dense: Option<usize>,
    /// History window length, feature vectors.
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Largest training horizon in grid steps.
    #[arg(long, default_value_t = 5)]
    max_horizon_steps: usize,
    /// Points between consecutive training windows.
    #[arg(long, default_value_t = 1)]
    stride: usize,
    /// Cap on training samples (seeded subset).
    #[arg(long)]
    max_samples: Option<usize>,
}

#[derive(Args, Debug)]
struct PredictCmd {
    /// Aligned points CSV.
    #[arg(long, short)]
    input: PathBuf,
    #[arg(long, short)]
    output: PathBuf,
    /// Model file, required for the gru predictor.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value = "gru")]
    predictor: PredictorKind,
    /// Lookahead, seconds.
    #[arg(long, default_value_t = 300.0)]
    horizon: f64,
    /// Grid spacing of the input, seconds.
    #[arg(long)]
    align_rate: Option<i64>,
}

#[derive(Args, Debug)]
struct DetectCmd {
    #[arg(long, short)]
    input: PathBuf,
    /// Clusters CSV to write.
    #[arg(long, short)]
    output: PathBuf,
    /// Also write the clusters as JSON lines.
    #[arg(long)]
    jsonl: Option<PathBuf>,
    /// The input is already aligned; skip preprocessing.
    #[arg(long)]
    aligned: bool,
    #[command(flatten)]
    pre: PreprocessFlags,
    #[command(flatten)]
    det: DetectionFlags,
}

#[derive(Args, Debug)]
struct EvaluateCmd {
    /// Predicted clusters CSV.
    #[arg(long)]
    predicted: PathBuf,
    /// Actual clusters CSV.
    #[arg(long)]
    actual: PathBuf,
    /// Aligned positions behind the actual clusters.
    #[arg(long)]
    points: PathBuf,
    /// Aligned positions behind the predicted clusters (default: --points).
    #[arg(long)]
    pred_points: Option<PathBuf>,
    /// Similarity weights l1,l2,l3 (spatial, temporal, membership).
    #[arg(long)]
    lambdas: Option<SimWeights>,
    /// Spatial term: lifetime or per-slice.
    #[arg(long, value_parser = parse_scope)]
    spatial: Option<SpatialScope>,
    /// Grid spacing, seconds.
    #[arg(long)]
    align_rate: Option<i64>,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct RunCmd {
    #[arg(long, short)]
    input: PathBuf,
    /// Model file, required for the gru predictor.
    #[arg(long)]
    model: Option<PathBuf>,
    /// gru, cv or identity.
    #[arg(long)]
    predictor: Option<PredictorKind>,
    /// Lookahead, seconds.
    #[arg(long)]
    delta_t: Option<i64>,
    #[command(flatten)]
    pre: PreprocessFlags,
    #[command(flatten)]
    det: DetectionFlags,
    #[arg(long)]
    lambdas: Option<SimWeights>,
    #[arg(long, value_parser = parse_scope)]
    spatial: Option<SpatialScope>,
    /// Replay pace: "max" or a multiplier of data time.
    #[arg(long)]
    speed: Option<ReplaySpeed>,
    /// Bounded topic capacity, records.
    #[arg(long)]
    queue_capacity: Option<usize>,
    /// Event-time delay before a slice is closed, seconds.
    #[arg(long)]
    slice_lateness: Option<f64>,
    /// Keep producer and consumer on one thread.
    #[arg(long)]
    single_thread: bool,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// Also write cluster boxes as GeoJSON.
    #[arg(long)]
    geojson: bool,
}

#[derive(Args, Debug)]
struct SynthCmd {
    /// Points CSV to write.
    #[arg(long, short)]
    output: PathBuf,
    /// Scripted groups as JSON lines.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    n_objects: Option<usize>,
    /// Seconds.
    #[arg(long)]
    duration: Option<f64>,
    /// Seconds between fixes.
    #[arg(long)]
    sample_rate: Option<f64>,
    /// Position noise, metres.
    #[arg(long)]
    noise: Option<f64>,
    /// Unix time of the first fix.
    #[arg(long)]
    start_time: Option<i64>,
    /// members,radius_m,start,end,motion (linear, arc or random-walk). Repeatable.
    #[arg(long = "group", value_parser = parse_group)]
    groups: Vec<GroupSpec>,
}

fn parse_scope(s: &str) -> std::result::Result<SpatialScope, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| format!("unknown spatial scope {s:?} (expected lifetime or per-slice)"))
}

fn parse_group(s: &str) -> std::result::Result<GroupSpec, String> {
    let f: Vec<&str> = s.split(',').map(str::trim).collect();
    if f.len() != 5 {
        return Err(format!("expected members,radius_m,start,end,motion, got {s:?}"));
    }
    let num = |i: usize| f[i].parse::<f64>().map_err(|_| format!("not a number: {:?}", f[i]));
    let members = f[0].parse::<usize>().map_err(|_| format!("not a member count: {:?}", f[0]))?;
    let motion: MotionModel = serde_json::from_value(serde_json::Value::String(f[4].to_string()))
        .map_err(|_| format!("unknown motion {:?} (expected linear, arc or random-walk)", f[4]))?;
    Ok(GroupSpec { members, radius_m: num(1)?, start: num(2)?, end: num(3)?, motion })
}

struct Ctx {
    file: FileConfig,
    seed: Option<u64>,
    exec: Execution,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("comove: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let file = FileConfig::load(cli.config.as_deref())?;
    let seed = cli.seed.or(file.seed()?);
    let exec = if cli.sequential { Execution::Sequential } else { Execution::Parallel };
    let ctx = Ctx { file, seed, exec };
    match cli.command {
        Command::Preprocess(c) => preprocess(&ctx, c),
        Command::Train(c) => train(&ctx, c),
        Command::Predict(c) => predict(&ctx, c),
        Command::Detect(c) => detect(&ctx, c),
        Command::Evaluate(c) => evaluate(&ctx, c),
        Command::Run(c) => run(&ctx, c),
        Command::Synth(c) => synth(&ctx, c),
    }
}

fn read_points(path: &Path) -> Result<Vec<TimestampedPoint>> {
    let (points, stats) = read_points_csv(path)?;
    if stats.malformed > 0 {
        log::warn!("{}: skipped {} malformed rows", path.display(), stats.malformed);
    }
    Ok(points)
}

fn aligned_trajectories(points: Vec<TimestampedPoint>, cfg: &PreprocessConfig, exec: Execution) -> Vec<Trajectory> {
    let (trajs, stats) = group_trajectories(points);
    if !stats.skipped_objects.is_empty() {
        log::warn!("skipped {} objects crossing the antimeridian", stats.skipped_objects.len());
    }
    preprocess_all(&trajs, cfg, exec)
}

/// Reads an aligned points file back into contiguous grid segments.
fn read_segments(path: &Path, align_rate: i64) -> Result<Vec<Trajectory>> {
    if align_rate <= 0 {
        return Err(invalid(format!("align_rate must be positive, got {align_rate}")));
    }
    let (trajs, _) = group_trajectories(read_points(path)?);
    Ok(trajs.iter().flat_map(|t| segment_by_gap(t, align_rate as f64)).collect())
}

fn align_rate_of(flag: Option<i64>, file: &FileConfig) -> Result<i64> {
    Ok(match flag {
        Some(r) => r,
        None => file.section("preprocess", PreprocessConfig::default())?.align_rate,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn preprocess(ctx: &Ctx, c: PreprocessCmd) -> Result<()> {
    let cfg = c.pre.resolve(&ctx.file)?;
    let points = read_points(&c.input)?;
    let n = points.len();
    let aligned = aligned_trajectories(points, &cfg, ctx.exec);
    write_points_csv(&c.output, &aligned)?;
    let out: usize = aligned.iter().map(Trajectory::len).sum();
    println!("{n} records -> {} segments, {out} aligned points", aligned.len());
    Ok(())
}

fn train(ctx: &Ctx, c: TrainCmd) -> Result<()> {
    let mut cfg = ctx.file.section("train", PredictorConfig::default())?;
    set(&mut cfg.hidden_size, c.hidden);
    set(&mut cfg.dense_size, c.dense);
    set(&mut cfg.window_len, c.window);
    set(&mut cfg.epochs, c.epochs);
    set(&mut cfg.batch_size, c.batch_size);
    set(&mut cfg.learning_rate, c.lr);
    set(&mut cfg.rng_seed, ctx.seed);
    cfg.execution = ctx.exec;
    cfg.validate()?;
    let align_rate = align_rate_of(c.align_rate, &ctx.file)?;
    let segments = read_segments(&c.input, align_rate)?;
    let spec = DatasetSpec {
        window_len: cfg.window_len,
        align_rate,
        max_horizon_steps: c.max_horizon_steps,
        stride: c.stride,
        max_samples: c.max_samples,
        seed: cfg.rng_seed,
    };
    let dataset = build_dataset(&segments, &spec)?;
    log::info!("{} training samples from {} segments", dataset.len(), segments.len());
    let started = Instant::now();
    let outcome = train_bptt(&dataset, &cfg)?;
    if let Some(path) = &c.loss_history {
        let mut text = String::from("epoch,loss\n");
        for (i, l) in outcome.loss_history.iter().enumerate() {
            text.push_str(&format!("{},{l}\n", i + 1));
        }
        fs::write(path, text).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    }
    let last = outcome.loss_history.last().copied().unwrap_or(f64::NAN);
    save_model(&outcome.into_model(), &c.output)?;
    println!(
        "{} samples, {} epochs in {:.1} s, final loss {last:.3e}",
        dataset.len(),
        cfg.epochs,
        started.elapsed().as_secs_f64()
    );
    Ok(())
}

fn load_predictor(kind: PredictorKind, model: Option<&Path>) -> Result<(Box<dyn LocationPredictor>, usize)> {
    match kind {
        PredictorKind::Gru => {
            let path = model.ok_or_else(|| invalid("the gru predictor needs --model"))?;
            let m = load_model(path)?;
            let history = m.window_len + 1;
            Ok((Box::new(GruPredictor::new(m)?), history))
        }
        PredictorKind::Cv => Ok((Box::new(ConstantVelocity), 2)),
        PredictorKind::Identity => Err(invalid("the identity predictor is only available in `run`")),
    }
}

fn predict(ctx: &Ctx, c: PredictCmd) -> Result<()> {
    if !(c.horizon > 0.0 && c.horizon.is_finite()) {
        return Err(invalid(format!("horizon must be positive, got {}", c.horizon)));
    }
    let (predictor, history) = load_predictor(c.predictor, c.model.as_deref())?;
    let segments = read_segments(&c.input, align_rate_of(c.align_rate, &ctx.file)?)?;
    let usable: Vec<&Trajectory> = segments.iter().filter(|s| s.len() >= history).collect();
    let preds = ctx
        .exec
        .map(&usable, |s| predictor.predict(&s.tail(history), c.horizon))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    write_predictions_csv(&c.output, &preds)?;
    println!("{} forecasts, {} segments too short", preds.len(), segments.len() - usable.len());
    Ok(())
}

fn detect(ctx: &Ctx, c: DetectCmd) -> Result<()> {
    let pre = c.pre.resolve(&ctx.file)?;
    let params = c.det.resolve(&ctx.file)?;
    let points = read_points(&c.input)?;
    let aligned: Vec<TimestampedPoint> = if c.aligned {
        points
    } else {
        aligned_trajectories(points, &pre, ctx.exec).into_iter().flat_map(Trajectory::into_points).collect()
    };
    let slices: Vec<_> = slices_from_points(&aligned)?.into_values().collect();
    let clusters = detect_batch(&slices, &params, pre.align_rate, ctx.exec)?;
    write_clusters_csv(&c.output, &clusters)?;
    if let Some(path) = &c.jsonl {
        write_clusters_jsonl_file(path, &clusters)?;
    }
    println!("{} timeslices, {} clusters", slices.len(), clusters.len());
    Ok(())
}

fn load_slices(path: &Path) -> Result<SliceMap> {
    Ok(slices_from_points(&read_points(path)?)?)
}

fn evaluate(ctx: &Ctx, c: EvaluateCmd) -> Result<()> {
    let run = ctx.file.section("run", PipelineConfig::default())?;
    let weights = c.lambdas.unwrap_or(run.weights);
    weights.validate()?;
    let opts = MatchOptions {
        weights,
        spatial: c.spatial.unwrap_or(run.spatial),
        align_rate: align_rate_of(c.align_rate, &ctx.file)?,
        execution: ctx.exec,
    };
    let predicted = read_clusters_csv(&c.predicted)?;
    let actual = read_clusters_csv(&c.actual)?;
    let act_slices = load_slices(&c.points)?;
    let pred_slices = match &c.pred_points {
        Some(p) => load_slices(p)?,
        None => act_slices.clone(),
    };
    let report = cluster_matching(
        ClusterSet { clusters: &predicted, slices: &pred_slices },
        ClusterSet { clusters: &actual, slices: &act_slices },
        &opts,
    )?;
    let summary = summarize(&report);
    fs::create_dir_all(&c.out_dir)?;
    write_matches_csv(&c.out_dir.join("matches.csv"), &report)?;
    write_json(&c.out_dir.join("summary.json"), &summary)?;
    print_summary(&summary);
    Ok(())
}

fn print_summary(s: &comove::evaluation::MatchSummary) {
    match &s.sim_star {
        Some(d) => println!("{} matched, {} unmatched, median Sim* {:.4}", s.pairs, s.unmatched_predicted, d.median),
        None => println!("no matched clusters ({} unmatched)", s.unmatched_predicted),
    }
}

fn write_slices(path: &Path, slices: &SliceMap) -> Result<()> {
    let mut by_obj: BTreeMap<&str, Vec<TimestampedPoint>> = BTreeMap::new();
    for s in slices.values() {
        for (id, &(lon, lat)) in &s.positions {
            let p = TimestampedPoint::new(id.clone(), lon, lat, s.t as f64).map_err(runtime)?;
            by_obj.entry(id.as_str()).or_default().push(p);
        }
    }
    let trajs = by_obj.into_iter().map(|(id, pts)| Trajectory::new(id, pts)).collect::<Result<Vec<_>, _>>().map_err(runtime)?;
    Ok(write_points_csv(path, &trajs)?)
}

#[derive(Serialize)]
struct RunMetrics<'a> {
    consumer: &'a comove::pipeline::ConsumerMetrics,
    ingest: &'a comove::pipeline::IngestCounters,
    read: comove::io::ReadStats,
    wall_s: f64,
}

fn run(ctx: &Ctx, c: RunCmd) -> Result<()> {
    let base = PipelineConfig {
        preprocess: ctx.file.section("preprocess", PreprocessConfig::default())?,
        detection: ctx.file.section("detection", DetectionParams::default())?,
        ..PipelineConfig::default()
    };
    let mut cfg = ctx.file.section("run", base)?;
    c.pre.apply(&mut cfg.preprocess);
    c.det.apply(&mut cfg.detection);
    set(&mut cfg.predictor, c.predictor);
    set(&mut cfg.delta_t, c.delta_t);
    set(&mut cfg.weights, c.lambdas);
    set(&mut cfg.spatial, c.spatial);
    set(&mut cfg.speed, c.speed);
    set(&mut cfg.queue_capacity, c.queue_capacity);
    if c.slice_lateness.is_some() {
        cfg.slice_lateness = c.slice_lateness;
    }
    cfg.threaded &= !c.single_thread;
    cfg.execution = ctx.exec;
    cfg.validate()?;

    let model = match (cfg.predictor, &c.model) {
        (PredictorKind::Gru, Some(p)) => Some(load_model(p)?),
        (PredictorKind::Gru, None) => return Err(invalid("the gru predictor needs --model")),
        (_, Some(_)) => {
            log::warn!("--model is ignored by the {:?} predictor", cfg.predictor);
            None
        }
        _ => None,
    };
    let replay = load_replay(&c.input)?;
    let read = replay.read;
    let started = Instant::now();
    let out = run_online(&cfg, replay, model)?;
    let wall_s = started.elapsed().as_secs_f64();

    let dir = &c.out_dir;
    fs::create_dir_all(dir)?;
    write_clusters_csv(&dir.join("actual_clusters.csv"), &out.actual_clusters)?;
    write_clusters_csv(&dir.join("predicted_clusters.csv"), &out.predicted_clusters)?;
    write_matches_csv(&dir.join("matches.csv"), &out.report)?;
    write_slices(&dir.join("actual_points.csv"), &out.detection.actual_slices)?;
    write_slices(&dir.join("predicted_points.csv"), &out.detection.predicted_slices)?;
    write_json(&dir.join("summary.json"), &out.summary)?;
    write_json(&dir.join("metrics.json"), &RunMetrics { consumer: &out.metrics, ingest: &out.ingest, read, wall_s })?;
    if c.geojson {
        let doc = geojson::clusters(&out.detection, &out.actual_clusters, &out.predicted_clusters, cfg.preprocess.align_rate);
        write_json(&dir.join("clusters.geojson"), &doc)?;
    }
    println!(
        "{} records in {wall_s:.2} s ({:.0}/s), {} actual and {} predicted clusters",
        out.metrics.records,
        out.metrics.overall_rate,
        out.actual_clusters.len(),
        out.predicted_clusters.len()
    );
    print_summary(&out.summary);
    Ok(())
}

fn synth(ctx: &Ctx, c: SynthCmd) -> Result<()> {
    let mut s = ctx.file.section("synth", SynthScenario::new(50, 7200.0, 30.0, Vec::new(), 10.0, 42))?;
    set(&mut s.n_objects, c.n_objects);
    set(&mut s.duration, c.duration);
    set(&mut s.sample_rate, c.sample_rate);
    set(&mut s.noise_sigma, c.noise);
    set(&mut s.start_time, c.start_time);
    set(&mut s.rng_seed, ctx.seed);
    if !c.groups.is_empty() {
        s.groups = c.groups;
    }
    let out = generate(&s)?;
    write_points_file(&c.output, &out.points).map_err(|e| runtime(format!("{}: {e}", c.output.display())))?;
    if let Some(path) = &c.truth {
        write_truth_file(path, &out.truth).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    }
    println!("{} objects, {} records, {} scripted groups", s.n_objects, out.points.len(), out.truth.len());
    Ok(())
}
