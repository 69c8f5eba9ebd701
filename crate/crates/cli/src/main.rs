use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use hgi_client::Client;
use hgi_core::config::RunConfig;
use hgi_core::eval::{ate_rmse, derive_loop_labels, parse_poses, EvalReport};
use hgi_core::ingest::{read_sequence, synth_loop_sequence, Layout, SynthSpec};
use hgi_core::loopdet::{parse_detections, LoopDetection};
use hgi_core::pipeline::{
    detect_features, extract, render_detections, similarity_histogram, train_vocab, Backend, DetectRun, FeatureSet,
    Timings,
};
use hgi_core::vocab::Vocabulary;
use hgi_core::Family;

/// Loop-closure detection from fused geometric and salient visual words.
#[derive(Parser)]
#[command(name = "hgi", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write per-frame feature files (and heatmaps for the fallback backend).
    Extract(ExtractArgs),
    /// Train a vocabulary tree on one family of extracted features.
    TrainVocab(TrainVocabArgs),
    /// Stream extracted frames through the detector.
    Detect(DetectArgs),
    /// Precision and recall of a detections file against ground-truth poses.
    Eval(EvalArgs),
    /// Absolute trajectory error between two pose files.
    Ate(AteArgs),
    /// Histogram of cross-family descriptor similarity.
    Simhist(SimhistArgs),
    /// Render a synthetic sequence with planted revisits.
    Synth(SynthArgs),
    /// Run the HTTP detection service.
    Serve(ServeArgs),
}

#[derive(Args)]
struct ConfigArg {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<RunConfig> {
        match &self.config {
            Some(p) => RunConfig::load(p).with_context(|| format!("reading {}", p.display())),
            None => Ok(RunConfig::default()),
        }
    }
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "kitti_like")]
    layout: String,
    #[arg(long, default_value = "fallback")]
    backend: String,
    #[arg(long)]
    out: PathBuf,
    /// Only process the middle frame of each triplet, merged with its neighbors.
    #[arg(long)]
    every_third: bool,
    #[arg(long)]
    workers: Option<usize>,
    #[command(flatten)]
    config: ConfigArg,
}

#[derive(Args)]
struct TrainVocabArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    family: Family,
    #[arg(long)]
    k: Option<u16>,
    #[arg(long = "L", alias = "depth")]
    depth: Option<u16>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArg,
}

#[derive(Args)]
struct DetectArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    vocab_s: PathBuf,
    #[arg(long)]
    vocab_g: PathBuf,
    /// Write here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Append per-stage mean milliseconds.
    #[arg(long)]
    timings: bool,
    /// Send frames to a running service instead of detecting in-process.
    /// Vocabulary paths are then read by the server.
    #[arg(long)]
    server: Option<String>,
    #[arg(long)]
    s_th: Option<f64>,
    #[arg(long)]
    min_frame_gap: Option<u64>,
    #[command(flatten)]
    config: ConfigArg,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    detections: PathBuf,
    /// Ground-truth pose file.
    #[arg(long)]
    gt: PathBuf,
    /// Loop radius in metres.
    #[arg(long = "r", alias = "radius")]
    radius: Option<f64>,
    #[arg(long)]
    min_gap: Option<u64>,
    #[arg(long)]
    tol: Option<u64>,
    /// Print JSON instead of key=value lines.
    #[arg(long)]
    json: bool,
    #[command(flatten)]
    config: ConfigArg,
}

#[derive(Args)]
struct AteArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// Sim(3)-align the prediction first: true or false.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    align: bool,
}

#[derive(Args)]
struct SimhistArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    bins: usize,
}

#[derive(Args)]
struct SynthArgs {
    /// JSON spec; missing fields take their defaults.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: String,
}

fn write_output(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn cmd_extract(a: ExtractArgs) -> Result<()> {
    let mut cfg = a.config.load()?;
    if let Some(w) = a.workers {
        cfg.workers = w;
    }
    let layout: Layout = a.layout.parse()?;
    let backend: Backend = a.backend.parse()?;
    let manifest = read_sequence(&a.input, layout)?;
    let summary = extract(&manifest, backend, a.every_third, &a.out, &cfg)?;
    eprintln!(
        "extracted {} of {} frames into {}",
        summary.frames_out.len(),
        summary.frames_in,
        a.out.display()
    );
    Ok(())
}

fn cmd_train_vocab(a: TrainVocabArgs) -> Result<()> {
    let mut cfg = a.config.load()?;
    let shape = match a.family {
        Family::Salient => &mut cfg.vocab.salient,
        Family::Geometric => &mut cfg.vocab.geometric,
    };
    shape.k = a.k.or(shape.k);
    shape.depth = a.depth.or(shape.depth);
    if let Some(s) = a.seed {
        cfg.vocab.seed = s;
    }
    cfg.validate()?;
    let vocab = train_vocab(&a.features, a.family, &cfg)?;
    vocab.save(&a.out)?;
    eprintln!("{} vocabulary: {} words -> {}", a.family, vocab.word_count(), a.out.display());
    Ok(())
}

async fn detect_remote(url: &str, a: &DetectArgs, cfg: &RunConfig) -> Result<DetectRun> {
    let client = Client::new(url);
    let session = client.create_session(&a.vocab_s, &a.vocab_g, *cfg).await?;
    let set = FeatureSet::scan(&a.features)?;
    let mut timings = Timings::default();
    let ids = set.paired_frames();
    for &id in &ids {
        let start = std::time::Instant::now();
        let sal = set.load(Family::Salient, id)?;
        let geo = set.load(Family::Geometric, id)?;
        timings.record("load", start);
        let start = std::time::Instant::now();
        session.submit(&sal, &geo).await.with_context(|| format!("frame {id}"))?;
        timings.record("remote", start);
    }
    let d = session.detections().await?;
    session.close().await?;
    Ok(DetectRun {
        detections: d.detections,
        frames: ids.len(),
        stored: d.stored,
        timings,
    })
}

async fn cmd_detect(a: DetectArgs) -> Result<()> {
    let mut cfg = a.config.load()?;
    if a.s_th.is_some() || a.min_frame_gap.is_some() {
        let f = cfg.fusion;
        cfg.fusion = hgi_core::FusionParams::new(
            f.w_s(),
            f.w_g(),
            a.s_th.unwrap_or(f.s_th()),
            a.min_frame_gap.unwrap_or(f.min_frame_gap()),
        )?;
    }
    let run = match &a.server {
        Some(url) => detect_remote(url, &a, &cfg).await?,
        None => {
            let vs = Vocabulary::load(&a.vocab_s).with_context(|| a.vocab_s.display().to_string())?;
            let vg = Vocabulary::load(&a.vocab_g).with_context(|| a.vocab_g.display().to_string())?;
            if (vs.family(), vg.family()) != (Family::Salient, Family::Geometric) {
                bail!("--vocab-s must be a salient vocabulary and --vocab-g a geometric one");
            }
            let features = a.features.clone();
            tokio::task::spawn_blocking(move || detect_features(&features, &vs, &vg, &cfg)).await??
        }
    };
    write_output(a.out.as_deref(), &render_detections(&run, &cfg, a.timings))
}

fn read_text(p: &Path) -> Result<String> {
    fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let cfg = a.config.load()?;
    let radius = a.radius.unwrap_or(cfg.eval.radius);
    let min_gap = a.min_gap.unwrap_or(cfg.eval.min_gap);
    let tol = a.tol.unwrap_or(cfg.eval.tol);
    let dets: Vec<LoopDetection> = parse_detections(&read_text(&a.detections)?).map_err(anyhow::Error::msg)?;
    let gt = parse_poses(&read_text(&a.gt)?)?;
    let labels = derive_loop_labels(&gt, radius, min_gap)?;
    let pairs: Vec<(u64, u64)> = dets.iter().map(|d| (d.query_frame, d.candidate_frame)).collect();
    let report = EvalReport::new(&pairs, &labels, tol);
    if a.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        print!("{}", report.to_key_value());
    }
    Ok(())
}

fn cmd_ate(a: AteArgs) -> Result<()> {
    let pred = parse_poses(&read_text(&a.pred)?)?;
    let gt = parse_poses(&read_text(&a.gt)?)?;
    let rmse = ate_rmse(&pred, &gt, a.align)?;
    println!("align={}", a.align);
    println!("ate_rmse={rmse}");
    Ok(())
}

fn cmd_simhist(a: SimhistArgs) -> Result<()> {
    let hist = similarity_histogram(&a.features, a.bins)?;
    fs::write(&a.out, hist.to_csv()).with_context(|| format!("writing {}", a.out.display()))?;
    eprintln!("{} descriptor pairs -> {}", hist.pairs, a.out.display());
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let mut spec: SynthSpec = match &a.spec {
        Some(p) => serde_json::from_str(&read_text(p)?).with_context(|| format!("parsing {}", p.display()))?,
        None => SynthSpec::default(),
    };
    if let Some(s) = a.seed {
        spec.texture_seed = s;
    }
    let seq = synth_loop_sequence(&spec, &a.out)?;
    eprintln!("{} frames, {} loop labels -> {}", seq.images.len(), seq.labels.len(), a.out.display());
    Ok(())
}

async fn cmd_serve(a: ServeArgs) -> Result<()> {
    let listener = tokio::net::TcpListener::bind(&a.addr)
        .await
        .with_context(|| format!("binding {}", a.addr))?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    hgi_service::serve(listener).await?;
    Ok(())
}

async fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Extract(a) => tokio::task::spawn_blocking(move || cmd_extract(a)).await?,
        Command::TrainVocab(a) => tokio::task::spawn_blocking(move || cmd_train_vocab(a)).await?,
        Command::Detect(a) => cmd_detect(a).await,
        Command::Eval(a) => cmd_eval(a),
        Command::Ate(a) => cmd_ate(a),
        Command::Simhist(a) => cmd_simhist(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Serve(a) => cmd_serve(a).await,
    }
}

#[tokio::main]
async fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
