//! Command-line pipeline: generate data, train, verify, report, and build
//! attack transcripts. The binary in `src/bin/potd.rs` is a thin wrapper
//! around [`run`].
//!
//! Exit-status contract for `verify`: 0 accept, 2 suspicious, 3 reject,
//! 1 unreadable input or configuration error. All commands are
//! deterministic: identical inputs and seeds give byte-identical outputs.

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::attacks;
use crate::datagen::{gen_dataset, DataGenConfig};
use crate::error::{PotdError, Result};
use crate::memorization::{heatmap, long_range_memorization, quantile_report, ValSummary};
use crate::prover::train_run;
use crate::rng::Key;
use crate::tinylm::weight_distance;
use crate::transcript::{load_transcript, save_transcript, HyperParams, Transcript};
use crate::verifier::{verify, VerifierConfig};

/// Environment variable naming the base directory for relative paths.
pub const WORK_DIR_ENV: &str = "POTD_WORK_DIR";

/// Training-transcript audit pipeline.
#[derive(Debug, Parser)]
#[command(name = "potd", version, about = "Train, verify, and audit committed training runs")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a seeded synthetic dataset config stanza (written into the
    /// training config; data itself is derived at train time).
    GenData(GenDataArgs),
    /// Run the committed training described by a config file.
    Train(TrainArgs),
    /// Verify a transcript directory; exit 0 accept, 2 suspicious, 3 reject.
    Verify(VerifyArgs),
    /// Export the data series behind one kind of analysis as CSV.
    Report(ReportArgs),
    /// Produce a spoofed transcript plus a ground-truth sidecar.
    Attack(AttackArgs),
}

/// One config file drives data generation, training, and verification.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub data: DataSection,
    pub training: HyperParams,
    pub verifier: VerifierConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DataSection {
    /// 64 hex chars keying the synthetic source.
    pub seed: String,
    pub n: usize,
    pub sharpness: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        let d = DataGenConfig::default();
        DataSection { seed: hex::encode([0u8; 32]), n: d.n, sharpness: d.sharpness }
    }
}

#[derive(Debug, Args)]
struct GenDataArgs {
    /// Where to write the pipeline config.
    #[arg(long, default_value = "potd.toml")]
    out: PathBuf,
    /// Hex seed for the synthetic source (defaults to all zeros).
    #[arg(long)]
    seed: Option<String>,
    /// Dataset size.
    #[arg(long)]
    n: Option<usize>,
    /// Concentration of the synthetic source's transition rows.
    #[arg(long)]
    sharpness: Option<f64>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Pipeline config (TOML with [data], [training], [verifier] sections).
    #[arg(long)]
    config: PathBuf,
    /// Transcript output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    /// Transcript directory.
    transcript: PathBuf,
    /// Optional pipeline config; its [verifier] section overrides defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Audit seed; the verdict is deterministic given it.
    #[arg(long, default_value_t = 0)]
    audit_seed: u64,
    /// Where to write verdict.json and the heatmap/val-loss CSVs
    /// (defaults to the transcript directory).
    #[arg(long)]
    report_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ReportKind {
    /// Sampled memorization grid (rows = segments, columns = checkpoints).
    Heatmap,
    /// Per-segment weight-space displacement ‖Wᵢ − W_{i−1}‖.
    Deltas,
    /// Mean validation loss per checkpoint.
    ValLoss,
    /// Per-segment FBQ and subtraction bound λ.
    Lambda,
    /// Memorization of preceding segments at one checkpoint.
    LongRange,
}

#[derive(Debug, Args)]
struct ReportArgs {
    transcript: PathBuf,
    #[arg(long, value_enum)]
    kind: ReportKind,
    /// Output directory (defaults to the transcript directory).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Sampling fraction.
    #[arg(long, default_value_t = 0.25)]
    alpha: f64,
    /// Heatmap window radius (checkpoints to each side of the diagonal).
    #[arg(long, default_value_t = 10)]
    beta: usize,
    /// FBQ percentile for the lambda report.
    #[arg(long, default_value_t = 0.1)]
    p: f64,
    /// Report seed for sampling.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Checkpoint for the long-range report.
    #[arg(long)]
    checkpoint: Option<usize>,
    /// Look-back depth for the long-range report.
    #[arg(long, default_value_t = 3)]
    depth: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AttackKind {
    Glue,
    Interpolate,
    Add,
    Subtract,
}

#[derive(Debug, Args)]
struct AttackArgs {
    #[arg(long, value_enum)]
    kind: AttackKind,
    /// Output directory for the spoofed transcript.
    #[arg(long)]
    out: PathBuf,
    /// Base transcript (glue, interpolate).
    #[arg(long)]
    a: Option<PathBuf>,
    /// Donor transcript (glue; interpolate steals its final weights).
    #[arg(long)]
    b: Option<PathBuf>,
    /// Cut/splice checkpoint index (glue, interpolate).
    #[arg(long)]
    cut: Option<usize>,
    /// Choose mixing coefficients that keep validation loss smooth
    /// (interpolate).
    #[arg(long, default_value_t = false)]
    calibrate: bool,
    /// Pipeline config describing the honest run (add, subtract).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Attacked segment (add, subtract).
    #[arg(long)]
    segment: Option<usize>,
    /// Fraction of extra points to inject (add).
    #[arg(long)]
    fraction: Option<f64>,
    /// Hex seed for the undisclosed extra data (add); also keys the
    /// attacker's random choices.
    #[arg(long)]
    extra_seed: Option<String>,
    /// Sharpness of the undisclosed extra data source; differs from the
    /// claimed data for an off-distribution addition (add).
    #[arg(long)]
    extra_sharpness: Option<f64>,
    /// Fraction of claimed points silently dropped (subtract).
    #[arg(long)]
    kappa: Option<f64>,
    /// Report seed for interpolation calibration.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Resolve a path against `POTD_WORK_DIR` when it is relative.
pub fn resolve(path: &Path) -> PathBuf {
    if path.is_absolute() {
        return path.to_path_buf();
    }
    match std::env::var_os(WORK_DIR_ENV) {
        Some(base) => PathBuf::from(base).join(path),
        None => path.to_path_buf(),
    }
}

fn parse_key(hex_seed: &str) -> Result<Key> {
    let bytes = hex::decode(hex_seed)
        .map_err(|e| PotdError::Config(format!("seed is not valid hex: {e}")))?;
    bytes
        .as_slice()
        .try_into()
        .map_err(|_| PotdError::Config(format!("seed must be 32 bytes, got {}", bytes.len())))
}

fn load_config(path: &Path) -> Result<PipelineConfig> {
    let text = std::fs::read_to_string(resolve(path))?;
    toml::from_str(&text).map_err(|e| PotdError::Config(format!("config {path:?}: {e}")))
}

fn build_dataset(cfg: &PipelineConfig) -> Result<crate::commitment::Dataset> {
    let seed = parse_key(&cfg.data.seed)?;
    let gen = DataGenConfig {
        n: cfg.data.n,
        seq_len: cfg.training.arch.seq_len,
        vocab: cfg.training.arch.vocab,
        sharpness: cfg.data.sharpness,
    };
    gen_dataset(seed, &gen)
}

fn write_csv(path: &Path, header: &str, rows: &[Vec<String>]) -> Result<()> {
    let mut out = String::from(header);
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn heatmap_csv(t: &Transcript, dir: &Path, alpha: f64, beta: usize, seed: u64) -> Result<()> {
    let grid = heatmap(t, alpha, beta, seed)?;
    let cols = t.checkpoints.len();
    let header = std::iter::once("segment".to_string())
        .chain((0..cols).map(|j| format!("ckpt_{j}")))
        .collect::<Vec<_>>()
        .join(",");
    let fmt = |v: f64| if v.is_finite() { format!("{v:.6}") } else { String::new() };
    let rows: Vec<Vec<String>> = grid
        .mean_m
        .iter()
        .enumerate()
        .map(|(r, row)| {
            std::iter::once((r + 1).to_string()).chain(row.iter().map(|&v| fmt(v))).collect()
        })
        .collect();
    write_csv(&dir.join("heatmap.csv"), &header, &rows)?;
    let dm_rows: Vec<Vec<String>> = grid
        .mean_dm
        .iter()
        .enumerate()
        .map(|(r, row)| {
            std::iter::once((r + 1).to_string()).chain(row.iter().map(|&v| fmt(v))).collect()
        })
        .collect();
    write_csv(&dir.join("heatmap_deltas.csv"), &header, &dm_rows)?;
    if grid.small_sample_warning {
        eprintln!("warning: fewer than 5 sampled points per cell; statistics unreliable");
    }
    Ok(())
}

fn cmd_train(args: &TrainArgs) -> Result<i32> {
    let cfg = load_config(&args.config)?;
    let data = build_dataset(&cfg)?;
    let t = train_run(&data, &cfg.training)?;
    let out = resolve(&args.out);
    save_transcript(&t, &out)?;
    println!("transcript digest: {}", hex::encode(t.digest()));
    println!("written to {}", out.display());
    Ok(0)
}

fn cmd_verify(args: &VerifyArgs) -> Result<i32> {
    let dir = resolve(&args.transcript);
    let t = load_transcript(&dir)?;
    let cfg = match &args.config {
        Some(path) => load_config(path)?.verifier,
        None => VerifierConfig::default(),
    };
    let report = verify(&t, &cfg, args.audit_seed)?;
    let report_dir = args.report_dir.as_ref().map(|p| resolve(p)).unwrap_or_else(|| dir.clone());
    std::fs::create_dir_all(&report_dir)?;
    std::fs::write(report_dir.join("verdict.json"), serde_json::to_vec_pretty(&report)?)?;
    heatmap_csv(&t, &report_dir, cfg.alpha, t.checkpoints.len(), args.audit_seed)?;
    let rows: Vec<Vec<String>> = report
        .val_loss_series
        .iter()
        .enumerate()
        .map(|(i, v)| vec![i.to_string(), format!("{v:.6}")])
        .collect();
    write_csv(&report_dir.join("val_loss.csv"), "checkpoint,mean_val_loss", &rows)?;
    match &report.verdict {
        crate::verifier::Verdict::Accept => println!("verdict: accept"),
        crate::verifier::Verdict::Suspicious { unretrained, .. } => {
            println!("verdict: suspicious (unexamined segments: {unretrained:?})")
        }
        crate::verifier::Verdict::Reject { reasons } => {
            println!("verdict: reject");
            for r in reasons {
                println!("  - {r}");
            }
        }
    }
    Ok(report.exit_code())
}

fn cmd_report(args: &ReportArgs) -> Result<i32> {
    let dir = resolve(&args.transcript);
    let t = load_transcript(&dir)?;
    let out = args.out.as_ref().map(|p| resolve(p)).unwrap_or_else(|| dir.clone());
    std::fs::create_dir_all(&out)?;
    match args.kind {
        ReportKind::Heatmap => heatmap_csv(&t, &out, args.alpha, args.beta, args.seed)?,
        ReportKind::Deltas => {
            let rows: Vec<Vec<String>> = (1..=t.hyper.checkpoint_count)
                .map(|i| {
                    let d = weight_distance(
                        &t.checkpoints[i].weights,
                        &t.checkpoints[i - 1].weights,
                    )?;
                    Ok(vec![i.to_string(), format!("{d:.6}")])
                })
                .collect::<Result<_>>()?;
            write_csv(&out.join("deltas.csv"), "segment,weight_delta", &rows)?;
        }
        ReportKind::ValLoss => {
            let order = t.order()?;
            let mut rng = crate::rng::Stream::new(crate::memorization::report_key(
                &t,
                args.seed,
                b"val-loss",
            ));
            let count = ((args.alpha * order.holdout.len() as f64).ceil() as usize).max(10);
            let val = ValSummary::build(&t, &order, count, &mut rng)?;
            let rows: Vec<Vec<String>> = val
                .means
                .iter()
                .enumerate()
                .map(|(i, v)| vec![i.to_string(), format!("{v:.6}")])
                .collect();
            write_csv(&out.join("val_loss.csv"), "checkpoint,mean_val_loss", &rows)?;
        }
        ReportKind::Lambda => {
            let q = quantile_report(&t, args.p, args.alpha, args.seed)?;
            let rows: Vec<Vec<String>> = (0..q.fbq_train.len())
                .map(|i| {
                    vec![
                        (i + 1).to_string(),
                        format!("{:.6}", q.fbq_train[i]),
                        format!("{:.6}", q.fbq_val[i]),
                        q.lambda[i].map(|l| format!("{l:.6}")).unwrap_or_default(),
                    ]
                })
                .collect();
            write_csv(&out.join("lambda.csv"), "segment,fbq_train,fbq_val,lambda", &rows)?;
        }
        ReportKind::LongRange => {
            let ckpt = args.checkpoint.unwrap_or(t.hyper.checkpoint_count);
            let depth = args.depth.min(ckpt.saturating_sub(1));
            let lr = long_range_memorization(&t, ckpt, depth, args.alpha, args.seed)?;
            let rows: Vec<Vec<String>> = lr
                .offsets
                .iter()
                .zip(&lr.mean_m)
                .map(|(off, m)| vec![(ckpt - off).to_string(), format!("{m:.6}")])
                .collect();
            write_csv(
                &out.join("long_range.csv"),
                &format!("segment,mean_memorization_at_ckpt_{ckpt}"),
                &rows,
            )?;
        }
    }
    println!("report written to {}", out.display());
    Ok(0)
}

fn require<T>(opt: Option<T>, what: &str) -> Result<T> {
    opt.ok_or_else(|| PotdError::Config(format!("--{what} is required for this attack kind")))
}

fn cmd_attack(args: &AttackArgs) -> Result<i32> {
    let out = resolve(&args.out);
    let (t, record) = match args.kind {
        AttackKind::Glue => {
            let ta = load_transcript(&resolve(&require(args.a.clone(), "a")?))?;
            let tb = load_transcript(&resolve(&require(args.b.clone(), "b")?))?;
            attacks::glue(&ta, &tb, require(args.cut, "cut")?)?
        }
        AttackKind::Interpolate => {
            let ta = load_transcript(&resolve(&require(args.a.clone(), "a")?))?;
            let tb = load_transcript(&resolve(&require(args.b.clone(), "b")?))?;
            let target = tb.final_weights().clone();
            attacks::interpolate(&ta, require(args.cut, "cut")?, &target, args.calibrate, args.seed)?
        }
        AttackKind::Add => {
            let cfg = load_config(&require(args.config.clone(), "config")?)?;
            let data = build_dataset(&cfg)?;
            let seed = parse_key(&require(args.extra_seed.clone(), "extra-seed")?)?;
            let extra_cfg = DataGenConfig {
                n: cfg.data.n,
                seq_len: cfg.training.arch.seq_len,
                vocab: cfg.training.arch.vocab,
                sharpness: args.extra_sharpness.unwrap_or(cfg.data.sharpness),
            };
            let extra = gen_dataset(seed, &extra_cfg)?;
            attacks::add_data(
                &data,
                &cfg.training,
                require(args.segment, "segment")?,
                &extra,
                require(args.fraction, "fraction")?,
                seed,
            )?
        }
        AttackKind::Subtract => {
            let cfg = load_config(&require(args.config.clone(), "config")?)?;
            let data = build_dataset(&cfg)?;
            let seed = args
                .extra_seed
                .as_deref()
                .map(parse_key)
                .transpose()?
                .unwrap_or([17u8; 32]);
            attacks::subtract_data(
                &data,
                &cfg.training,
                require(args.segment, "segment")?,
                require(args.kappa, "kappa")?,
                seed,
            )?
        }
    };
    save_transcript(&t, &out)?;
    record.save(&out)?;
    println!("spoofed transcript written to {}", out.display());
    println!("ground truth: {} affecting segments {:?}", record.kind, record.affected_segments);
    Ok(0)
}

fn cmd_gen_data(args: &GenDataArgs) -> Result<i32> {
    let mut cfg = PipelineConfig::default();
    if let Some(seed) = &args.seed {
        parse_key(seed)?; // validate early
        cfg.data.seed = seed.clone();
    }
    if let Some(n) = args.n {
        cfg.data.n = n;
    }
    if let Some(s) = args.sharpness {
        cfg.data.sharpness = s;
    }
    let out = resolve(&args.out);
    let text = toml::to_string_pretty(&cfg)
        .map_err(|e| PotdError::Config(format!("serializing config: {e}")))?;
    std::fs::write(&out, text)?;
    println!("config written to {}", out.display());
    Ok(0)
}

/// Parse `argv` and run one command, returning the process exit code.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // clap handles --help/--version with success status itself.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::GenData(a) => cmd_gen_data(a),
        Command::Train(a) => cmd_train(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Report(a) => cmd_report(a),
        Command::Attack(a) => cmd_attack(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
