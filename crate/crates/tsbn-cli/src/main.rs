//! `tsbn`: generate synthetic corpora, train temporal sigmoid belief
//! networks, sample from them, and evaluate predictions and bounds.
//!
//! Every randomized command takes a `--seed` and prints it; with
//! `--threads 1` (the default) runs are reproducible byte for byte.
//! A `--config FILE` of `key = value` lines supplies defaults for any
//! long flag of the same name; explicit flags override the file.

mod spec_arg;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use std::io::Write;
use std::path::PathBuf;
use tsbn_core::data::{gen_bouncing_balls, load_sequences, save_sequences, split_words, BallsConfig, SequenceBatch};
use tsbn_core::evaluation::{
    elbo_report, precision_report, predict_report, HiddenPrediction,
};
use tsbn_core::numeric::RngStream;
use tsbn_core::params::Likelihood;
use tsbn_core::trainer::{NvilConfig, SignalMode, TrainConfig, TrainHyper};
use tsbn_core::load_checkpoint;

#[derive(Parser)]
#[command(name = "tsbn", version, about = "Temporal sigmoid belief networks: generate, train, sample, evaluate")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate bouncing-ball video corpora (train and test files)
    GenBalls(GenBallsArgs),
    /// Train a model on a sequence file
    Train(TrainArgs),
    /// Draw sequences from a trained model by ancestral sampling
    Sample(SampleArgs),
    /// One-step-ahead prediction error on a held-out sequence file
    Predict(PredictArgs),
    /// Monte Carlo lower-bound estimates on a sequence file
    Elbo(ElboArgs),
    /// Precision at top M of held-out counts under a count model
    EvalPrecision(EvalPrecisionArgs),
    /// Split count sequences into train/held-out token shares
    SplitCounts(SplitCountsArgs),
}

#[derive(Args)]
#[command(args_override_self = true)]
struct CommonArgs {
    /// Random seed; printed in the run header
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads for per-sequence parallelism (1 = bit-exact runs)
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Optional key = value file supplying defaults for the flags above
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
#[command(args_override_self = true)]
struct GenBallsArgs {
    /// Output path for the training corpus
    #[arg(long, default_value = "balls_train.seq")]
    out_train: PathBuf,
    /// Output path for the test corpus
    #[arg(long, default_value = "balls_test.seq")]
    out_test: PathBuf,
    /// Training sequences
    #[arg(long, default_value_t = 4000)]
    train: usize,
    /// Test sequences
    #[arg(long, default_value_t = 200)]
    test: usize,
    /// Number of balls
    #[arg(long, default_value_t = 3)]
    balls: usize,
    /// Frame resolution R (frames are R*R binary pixels)
    #[arg(long, default_value_t = 30)]
    res: usize,
    /// Frames per sequence
    #[arg(long = "T", default_value_t = 100)]
    t_len: usize,
    /// Ball radius in pixels (default: res / 15)
    #[arg(long)]
    radius: Option<f64>,
    /// Speed scale in pixels per step
    #[arg(long, default_value_t = 1.0)]
    speed: f64,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
#[command(args_override_self = true)]
struct TrainArgs {
    /// Model shape, e.g. "J=100,order=1,binary" or
    /// "J=100-100,order=2,kind=deterministic" (dims bottom to top)
    #[arg(long)]
    spec: String,
    /// Training sequence file
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint output path
    #[arg(long, default_value = "model.ckpt")]
    ckpt: PathBuf,
    /// Metrics log output path (one JSON record per iteration)
    #[arg(long, default_value = "metrics.jsonl")]
    metrics: PathBuf,
    /// Training iterations
    #[arg(long, default_value_t = 10_000)]
    iters: u64,
    /// Sequences per gradient step
    #[arg(long, default_value_t = 1)]
    batch: usize,
    /// Learning rate
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    /// Decay of the running mean-square gradient
    #[arg(long, default_value_t = 0.95)]
    ms_decay: f64,
    /// Momentum on the parameter step
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    /// Weight decay (weights only, never biases)
    #[arg(long, default_value_t = 1e-4)]
    weight_decay: f64,
    /// Decay of the running signal statistics
    #[arg(long, default_value_t = 0.8)]
    alpha: f64,
    /// Hard cap on iterations
    #[arg(long, default_value_t = 100_000)]
    max_iters: u64,
    /// Learning-signal pairing: per-timestep or whole-sequence
    #[arg(long, default_value = "per-timestep")]
    signal: String,
    /// Disable the data-dependent baseline network
    #[arg(long)]
    no_baseline: bool,
    /// Disable signal centering
    #[arg(long)]
    no_centering: bool,
    /// Disable signal variance normalization
    #[arg(long)]
    no_normalization: bool,
    /// Also write the checkpoint every N iterations (0 = only at the end)
    #[arg(long, default_value_t = 0)]
    ckpt_every: u64,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
#[command(args_override_self = true)]
struct SampleArgs {
    /// Trained checkpoint
    #[arg(long)]
    ckpt: PathBuf,
    /// Output sequence file
    #[arg(long, default_value = "samples.seq")]
    out: PathBuf,
    /// Frames per sampled sequence
    #[arg(long = "T", default_value_t = 100)]
    t_len: usize,
    /// Number of sequences to sample
    #[arg(long, default_value_t = 4)]
    n: usize,
    /// Tokens per frame for count models
    #[arg(long, default_value_t = 1)]
    count_total: u64,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
#[command(args_override_self = true)]
struct PredictArgs {
    /// Trained checkpoint
    #[arg(long)]
    ckpt: PathBuf,
    /// Sequence file to predict
    #[arg(long)]
    data: PathBuf,
    /// Posterior samples per prediction
    #[arg(long = "S", default_value_t = 50)]
    samples: usize,
    /// Hidden-state handling: mean or sample
    #[arg(long, default_value = "mean")]
    mode: String,
    /// Report output path (JSON lines)
    #[arg(long, default_value = "predict_report.jsonl")]
    report: PathBuf,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
#[command(args_override_self = true)]
struct ElboArgs {
    /// Trained checkpoint
    #[arg(long)]
    ckpt: PathBuf,
    /// Sequence file to evaluate
    #[arg(long)]
    data: PathBuf,
    /// Posterior samples per sequence
    #[arg(long = "S", default_value_t = 100)]
    samples: usize,
    /// Report output path (JSON lines)
    #[arg(long, default_value = "elbo_report.jsonl")]
    report: PathBuf,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
#[command(args_override_self = true)]
struct EvalPrecisionArgs {
    /// Trained count-model checkpoint
    #[arg(long)]
    ckpt: PathBuf,
    /// Train-split count sequences (the model's conditioning input)
    #[arg(long)]
    train_data: PathBuf,
    /// Held-out count sequences, aligned with the train split
    #[arg(long)]
    heldout_data: PathBuf,
    /// Top-M cutoff
    #[arg(long, default_value_t = 50)]
    m_top: usize,
    /// Posterior samples per sequence
    #[arg(long = "S", default_value_t = 10)]
    samples: usize,
    /// Report output path (JSON lines)
    #[arg(long, default_value = "precision_report.jsonl")]
    report: PathBuf,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
#[command(args_override_self = true)]
struct SplitCountsArgs {
    /// Count sequence file to split
    #[arg(long)]
    data: PathBuf,
    /// Output path for the train share
    #[arg(long)]
    out_train: PathBuf,
    /// Output path for the held-out share
    #[arg(long)]
    out_heldout: PathBuf,
    /// Probability a token lands in the train share
    #[arg(long, default_value_t = 0.8)]
    fraction: f64,
    #[command(flatten)]
    common: CommonArgs,
}

fn main() {
    let argv = match expand_config_file(std::env::args().collect()) {
        Ok(argv) => argv,
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(1);
        }
    };
    let cli = Cli::parse_from(argv);
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

/// Expands `--config FILE` into long flags inserted ahead of the user's
/// explicit flags, which therefore override the file. Boolean keys take
/// `true`/`false`; `true` injects the bare flag. Unknown keys surface as
/// unknown flags when the expanded command line is parsed.
fn expand_config_file(argv: Vec<String>) -> Result<Vec<String>> {
    let mut config_path: Option<String> = None;
    let mut rest: Vec<String> = Vec::with_capacity(argv.len());
    let mut it = argv.into_iter();
    while let Some(arg) = it.next() {
        if arg == "--config" {
            config_path = Some(
                it.next().context("--config requires a file path")?,
            );
        } else if let Some(path) = arg.strip_prefix("--config=") {
            config_path = Some(path.to_string());
        } else {
            rest.push(arg);
        }
    }
    let Some(path) = config_path else { return Ok(rest) };
    if rest.len() < 2 {
        bail!("--config needs a subcommand");
    }
    let text = std::fs::read_to_string(&path)
        .with_context(|| format!("reading config file {path}"))?;
    let mut injected = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .with_context(|| format!("{path}:{}: expected `key = value`", lineno + 1))?;
        let key = key.trim();
        let value = value.trim();
        if key.is_empty() || value.is_empty() {
            bail!("{path}:{}: expected `key = value`", lineno + 1);
        }
        match value {
            "true" => injected.push(format!("--{key}")),
            "false" => {}
            _ => {
                injected.push(format!("--{key}"));
                injected.push(value.to_string());
            }
        }
    }
    // program name, subcommand, file-derived flags, then explicit flags
    let mut out = vec![rest[0].clone(), rest[1].clone()];
    out.extend(injected);
    out.extend(rest.into_iter().skip(2));
    Ok(out)
}

fn init_threads(threads: usize) -> Result<()> {
    if threads == 0 {
        bail!("--threads must be at least 1");
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .context("initializing thread pool")?;
    Ok(())
}

fn print_header(command: &str, seed: u64, threads: usize) {
    println!("tsbn {command} | seed {seed} | threads {threads}");
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenBalls(args) => cmd_gen_balls(args),
        Command::Train(args) => cmd_train(args),
        Command::Sample(args) => cmd_sample(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Elbo(args) => cmd_elbo(args),
        Command::EvalPrecision(args) => cmd_eval_precision(args),
        Command::SplitCounts(args) => cmd_split_counts(args),
    }
}

fn cmd_gen_balls(args: GenBallsArgs) -> Result<()> {
    init_threads(args.common.threads)?;
    print_header("gen-balls", args.common.seed, args.common.threads);
    let radius = args.radius.unwrap_or_else(|| BallsConfig::default_radius(args.res));
    let base = BallsConfig {
        num_balls: args.balls,
        resolution: args.res,
        sequence_length: args.t_len,
        num_sequences: args.train,
        ball_radius: radius,
        speed_scale: args.speed,
        seed: args.common.seed,
    };
    let train = gen_bouncing_balls(&base)?;
    save_sequences(&args.out_train, &train)?;
    // the test corpus draws from a disjoint stream block
    let test_cfg = BallsConfig {
        num_sequences: args.test,
        seed: args.common.seed.wrapping_add(0x5445_5354),
        ..base
    };
    let test = gen_bouncing_balls(&test_cfg)?;
    save_sequences(&args.out_test, &test)?;
    println!(
        "wrote {} train and {} test sequences | {} frames x {} pixels | radius {radius} px",
        train.len(),
        test.len(),
        args.t_len,
        args.res * args.res,
    );
    println!("train: {}", args.out_train.display());
    println!("test:  {}", args.out_test.display());
    Ok(())
}

fn parse_signal(s: &str) -> Result<SignalMode> {
    match s {
        "per-timestep" => Ok(SignalMode::PerTimestep),
        "whole-sequence" => Ok(SignalMode::WholeSequence),
        other => bail!("unknown signal mode {other:?}; expected per-timestep or whole-sequence"),
    }
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    init_threads(args.common.threads)?;
    print_header("train", args.common.seed, args.common.threads);
    let data = load_sequences(&args.data)?;
    let spec = spec_arg::parse_model_spec(&args.spec, &data)?;
    println!(
        "model: M={} J={:?} order={} {} | data: {} sequences, {} frames",
        spec.visible_dim,
        spec.layer_dims,
        spec.order,
        spec.likelihood.name(),
        data.len(),
        data.total_frames(),
    );
    let cfg = TrainConfig {
        iterations: args.iters,
        batch_size: args.batch,
        nvil: NvilConfig {
            use_data_baseline: !args.no_baseline,
            use_centering: !args.no_centering,
            use_normalization: !args.no_normalization,
            signal: parse_signal(&args.signal)?,
        },
        hyper: TrainHyper {
            learning_rate: args.lr,
            ms_decay: args.ms_decay,
            momentum: args.momentum,
            weight_decay: args.weight_decay,
            alpha: args.alpha,
            max_iterations: args.max_iters,
            epsilon: 1e-8,
        },
        metrics_path: Some(args.metrics.clone()),
        checkpoint_path: Some(args.ckpt.clone()),
        checkpoint_every: args.ckpt_every,
    };
    let mut rng = RngStream::new(args.common.seed, 0);
    let outcome = tsbn_core::trainer::train(&spec, &data, &cfg, &mut rng)?;
    let last = outcome.metrics.last().expect("at least one iteration");
    let window = outcome.metrics.len().min(100);
    let smoothed: f64 = outcome.metrics[outcome.metrics.len() - window..]
        .iter()
        .map(|r| r.elbo_per_frame)
        .sum::<f64>()
        / window as f64;
    println!(
        "finished {} iterations in {:.1}s | bound/frame {:.3} (smoothed {:.3})",
        outcome.metrics.len(),
        last.seconds,
        last.elbo_per_frame,
        smoothed,
    );
    println!("checkpoint: {}", args.ckpt.display());
    println!("metrics:    {}", args.metrics.display());
    Ok(())
}

fn cmd_sample(args: SampleArgs) -> Result<()> {
    init_threads(args.common.threads)?;
    print_header("sample", args.common.seed, args.common.threads);
    let ckpt = load_checkpoint(&args.ckpt)?;
    let spec = &ckpt.spec;
    let mut batch = SequenceBatch::new(spec.likelihood, spec.visible_dim);
    for i in 0..args.n {
        let mut rng = RngStream::new(args.common.seed, i as u64);
        let v = if spec.is_shallow() {
            tsbn_core::shallow::sample_sequence_with_count_totals(
                &ckpt.theta,
                args.t_len,
                args.count_total,
                &mut rng,
            )
            .0
        } else {
            tsbn_core::deep::deep_sample_with_count_totals(
                &ckpt.theta,
                args.t_len,
                args.count_total,
                &mut rng,
            )
            .0
        };
        batch.push(v);
    }
    save_sequences(&args.out, &batch)?;
    println!(
        "sampled {} sequences of {} frames ({} visible units) -> {}",
        args.n,
        args.t_len,
        spec.visible_dim,
        args.out.display()
    );
    Ok(())
}

fn write_jsonl(path: &PathBuf, lines: &[serde_json::Value]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for line in lines {
        serde_json::to_writer(&mut f, line)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

fn cmd_predict(args: PredictArgs) -> Result<()> {
    init_threads(args.common.threads)?;
    print_header("predict", args.common.seed, args.common.threads);
    let ckpt = load_checkpoint(&args.ckpt)?;
    let data = load_sequences(&args.data)?;
    if data.dtype != ckpt.spec.likelihood {
        bail!(
            "data dtype {} does not match the model likelihood {}",
            data.dtype.name(),
            ckpt.spec.likelihood.name()
        );
    }
    let mode = match args.mode.as_str() {
        "mean" => HiddenPrediction::Mean,
        "sample" => HiddenPrediction::Sample,
        other => bail!("unknown mode {other:?}; expected mean or sample"),
    };
    let mut rng = RngStream::new(args.common.seed, 0);
    let report = predict_report(&ckpt.theta, &ckpt.phi, &data, args.samples, mode, &mut rng);
    let mut lines: Vec<serde_json::Value> = report
        .per_sequence
        .iter()
        .enumerate()
        .map(|(i, e)| serde_json::json!({"kind": "sequence", "index": i, "mse_per_frame": e}))
        .collect();
    lines.push(serde_json::json!({
        "kind": "aggregate",
        "mse_per_frame": report.aggregate,
        "std_dev": report.std_dev,
        "samples": report.samples,
        "sequences": report.per_sequence.len(),
    }));
    write_jsonl(&args.report, &lines)?;
    println!("sequences              mse/frame");
    for (i, e) in report.per_sequence.iter().enumerate().take(10) {
        println!("  {i:<20} {e:.4}");
    }
    if report.per_sequence.len() > 10 {
        println!("  ... ({} total)", report.per_sequence.len());
    }
    println!(
        "aggregate: {:.4} +- {:.4} over {} sequences (S = {})",
        report.aggregate,
        report.std_dev,
        report.per_sequence.len(),
        report.samples
    );
    println!("report: {}", args.report.display());
    Ok(())
}

fn cmd_elbo(args: ElboArgs) -> Result<()> {
    init_threads(args.common.threads)?;
    print_header("elbo", args.common.seed, args.common.threads);
    let ckpt = load_checkpoint(&args.ckpt)?;
    let data = load_sequences(&args.data)?;
    if data.dtype != ckpt.spec.likelihood {
        bail!(
            "data dtype {} does not match the model likelihood {}",
            data.dtype.name(),
            ckpt.spec.likelihood.name()
        );
    }
    let mut rng = RngStream::new(args.common.seed, 0);
    let report = elbo_report(&ckpt.theta, &ckpt.phi, &data, args.samples, &mut rng);
    let mut lines: Vec<serde_json::Value> = report
        .per_sequence
        .iter()
        .enumerate()
        .map(|(i, e)| {
            serde_json::json!({
                "kind": "sequence",
                "index": i,
                "bound": e.mean,
                "std_error": e.std_error,
                "bound_per_frame": e.per_frame,
            })
        })
        .collect();
    lines.push(serde_json::json!({
        "kind": "aggregate",
        "bound_per_frame": report.mean_per_frame,
        "total_frames": report.total_frames,
        "samples": args.samples,
    }));
    write_jsonl(&args.report, &lines)?;
    println!("sequences              bound/frame   std err");
    for (i, e) in report.per_sequence.iter().enumerate().take(10) {
        println!("  {i:<20} {:>10.4} {:>9.4}", e.per_frame, e.std_error);
    }
    if report.per_sequence.len() > 10 {
        println!("  ... ({} total)", report.per_sequence.len());
    }
    println!(
        "aggregate bound/frame: {:.4} over {} frames (S = {})",
        report.mean_per_frame, report.total_frames, args.samples
    );
    println!("report: {}", args.report.display());
    Ok(())
}

fn cmd_eval_precision(args: EvalPrecisionArgs) -> Result<()> {
    init_threads(args.common.threads)?;
    print_header("eval-precision", args.common.seed, args.common.threads);
    let ckpt = load_checkpoint(&args.ckpt)?;
    if ckpt.spec.likelihood != Likelihood::Count {
        bail!("precision evaluation needs a count model");
    }
    let train = load_sequences(&args.train_data)?;
    let heldout = load_sequences(&args.heldout_data)?;
    if train.dtype != Likelihood::Count || heldout.dtype != Likelihood::Count {
        bail!("precision evaluation needs count data");
    }
    let mut rng = RngStream::new(args.common.seed, 0);
    let report = precision_report(
        &ckpt.theta,
        &ckpt.phi,
        &train,
        &heldout,
        args.m_top,
        args.samples,
        &mut rng,
    );
    let mut lines: Vec<serde_json::Value> = report
        .per_sequence
        .iter()
        .enumerate()
        .map(|(i, p)| serde_json::json!({"kind": "sequence", "index": i, "precision": p}))
        .collect();
    lines.push(serde_json::json!({
        "kind": "aggregate",
        "precision": report.aggregate,
        "m_top": report.m_top,
        "samples": report.samples,
    }));
    write_jsonl(&args.report, &lines)?;
    println!(
        "mean precision@top-{}: {:.4} over {} sequences (S = {})",
        report.m_top,
        report.aggregate,
        report.per_sequence.len(),
        report.samples
    );
    println!("report: {}", args.report.display());
    Ok(())
}

fn cmd_split_counts(args: SplitCountsArgs) -> Result<()> {
    print_header("split-counts", args.common.seed, args.common.threads);
    let data = load_sequences(&args.data)?;
    if data.dtype != Likelihood::Count {
        bail!("split-counts needs count data");
    }
    let mut train = SequenceBatch::new(Likelihood::Count, data.dim);
    let mut heldout = SequenceBatch::new(Likelihood::Count, data.dim);
    let mut rng = RngStream::new(args.common.seed, 0);
    for seq in &data.frames {
        let mut tr = ndarray::Array2::zeros(seq.dim());
        let mut he = ndarray::Array2::zeros(seq.dim());
        for (t, row) in seq.rows().into_iter().enumerate() {
            let (a, b) = split_words(&row.to_owned(), args.fraction, &mut rng);
            tr.row_mut(t).assign(&a);
            he.row_mut(t).assign(&b);
        }
        train.push(tr);
        heldout.push(he);
    }
    save_sequences(&args.out_train, &train)?;
    save_sequences(&args.out_heldout, &heldout)?;
    println!(
        "split {} sequences at fraction {} -> {} / {}",
        data.len(),
        args.fraction,
        args.out_train.display(),
        args.out_heldout.display()
    );
    Ok(())
}
