//! `capvst` — command-line front end for the reversible style-transfer
//! engine: stylization (image/video), metrics, Laplacian dumps, the
//! self-test suite, and the transform benchmark.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use capvst_core::{
    build_laplacian, cycle_loss, cycle_reconstruct, init_weights, load_weights, read_flo,
    read_pgm, read_ppm, run_bench, run_selftest, save_weights, ssim, stylize_image,
    stylize_video, temporal_error, write_laplacian_triplets, write_ppm, ArchitecturePlan,
    Engine, Error, GrayImage, InitMode, RngSeed, StylizeJob, VideoJob, DEFAULT_EPS,
};

#[derive(Parser)]
#[command(name = "capvst", version, about = "Reversible photorealistic style transfer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Stylize one content image with one or two style images.
    Stylize(StylizeArgs),
    /// Stylize a frame sequence with style statistics computed once.
    Video(VideoArgs),
    /// Quality metrics on saved images.
    #[command(subcommand)]
    Metrics(MetricsCommand),
    /// Build the matting Laplacian of an image and dump its triplets.
    Laplacian(LaplacianArgs),
    /// Run every invariant suite; nonzero exit on any failure.
    Selftest(SelftestArgs),
    /// Median transform timings, Cholesky route vs eigendecomposition.
    Bench(BenchArgs),
    /// Create a deterministic weight file from a plan and seed.
    InitWeights(InitWeightsArgs),
}

#[derive(Args)]
struct WeightSource {
    /// Weight file; omitting it derives weights from --plan/--seed.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Plan JSON file (default: built-in plan).
    #[arg(long)]
    plan: Option<PathBuf>,
    /// Seed for derived weights.
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

impl WeightSource {
    fn engine(&self) -> Result<Engine, Error> {
        let weights = match &self.weights {
            Some(path) => load_weights(path)?,
            None => init_weights(&load_plan(self.plan.as_deref())?, RngSeed(self.seed), InitMode::Random)?,
        };
        Engine::new(weights)
    }
}

fn load_plan(path: Option<&Path>) -> Result<ArchitecturePlan, Error> {
    match path {
        None => Ok(ArchitecturePlan::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p.display().to_string(), e))?;
            let plan: ArchitecturePlan = serde_json::from_str(&text)
                .map_err(|e| Error::format(p.display().to_string(), format!("plan JSON: {e}")))?;
            plan.validate()?;
            Ok(plan)
        }
    }
}

#[derive(Args)]
struct StylizeArgs {
    #[arg(long)]
    content: PathBuf,
    #[arg(long)]
    style: PathBuf,
    /// Second style, blended by --alpha (0 = pure first style).
    #[arg(long)]
    style_b: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    alpha: f64,
    /// Content region labels (PGM), paired with --style-mask.
    #[arg(long)]
    content_mask: Option<PathBuf>,
    #[arg(long)]
    style_mask: Option<PathBuf>,
    #[command(flatten)]
    source: WeightSource,
    #[arg(long, default_value_t = DEFAULT_EPS)]
    eps: f64,
    #[arg(long)]
    out: PathBuf,
    /// Also reconstruct content through a style–content cycle and
    /// report the cycle loss.
    #[arg(long)]
    report_cycle: bool,
}

#[derive(Args)]
struct VideoArgs {
    /// Frame image paths in order.
    #[arg(long, num_args = 1.., required = true)]
    frames: Vec<PathBuf>,
    #[arg(long)]
    style: PathBuf,
    #[arg(long)]
    style_b: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    alpha: f64,
    /// Per-frame content label masks (PGM), one per frame.
    #[arg(long, num_args = 1..)]
    content_masks: Vec<PathBuf>,
    #[arg(long)]
    style_mask: Option<PathBuf>,
    #[command(flatten)]
    source: WeightSource,
    #[arg(long, default_value_t = DEFAULT_EPS)]
    eps: f64,
    /// Output directory; frames are written as frame_0000.ppm, …
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Subcommand)]
enum MetricsCommand {
    /// Mean SSIM between two images.
    Ssim {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
    },
    /// Flow-warped consistency error between consecutive frames.
    Temporal {
        #[arg(long)]
        prev: PathBuf,
        #[arg(long)]
        next: PathBuf,
        #[arg(long)]
        flow: PathBuf,
        /// Validity mask (PGM, 255 = valid) intersected with the flow.
        #[arg(long)]
        mask: Option<PathBuf>,
    },
    /// Mean absolute difference (cycle reconstruction loss).
    Cycle {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
    },
}

#[derive(Args)]
struct LaplacianArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long, default_value_t = 1)]
    radius: usize,
    #[arg(long, default_value_t = 1e-7)]
    eps_matting: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SelftestArgs {
    /// Smaller sizes, skips the default-plan round trip.
    #[arg(long)]
    quick: bool,
    /// Write the JSON report here as well as stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Repetitions per case (floor 20).
    #[arg(long, default_value_t = 20)]
    reps: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Copy, Clone, ValueEnum)]
enum WeightMode {
    Random,
    ZeroResidual,
}

#[derive(Args)]
struct InitWeightsArgs {
    #[arg(long)]
    plan: Option<PathBuf>,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = WeightMode::Random)]
    mode: WeightMode,
    #[arg(long)]
    out: PathBuf,
}

fn load_mask(path: &Path) -> Result<GrayImage, Error> {
    read_pgm(path)
}

fn run(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::Stylize(args) => {
            let engine = args.source.engine()?;
            let content = read_ppm(&args.content)?;
            let style = read_ppm(&args.style)?;
            let mut job = StylizeJob::new(content.clone(), style.clone());
            job.alpha = args.alpha;
            job.eps = args.eps;
            if let Some(p) = &args.style_b {
                job.style_b = Some(read_ppm(p)?);
            }
            if let Some(p) = &args.content_mask {
                job.content_mask = Some(load_mask(p)?);
            }
            if let Some(p) = &args.style_mask {
                job.style_mask = Some(load_mask(p)?);
            }
            let out = stylize_image(&engine, &job)?;
            write_ppm(&args.out, &out)?;
            if args.report_cycle {
                let cycle = cycle_reconstruct(&engine, &content, &style, args.eps)?;
                let loss = cycle_loss(&cycle, &content)?;
                println!("{}", serde_json::json!({ "cycle_loss": loss }));
            }
            Ok(0)
        }
        Command::Video(args) => {
            let engine = args.source.engine()?;
            let mut frames = Vec::with_capacity(args.frames.len());
            for p in &args.frames {
                frames.push(read_ppm(p)?);
            }
            let mut job = VideoJob::new(frames, read_ppm(&args.style)?);
            job.alpha = args.alpha;
            job.eps = args.eps;
            if let Some(p) = &args.style_b {
                job.style_b = Some(read_ppm(p)?);
            }
            if let Some(p) = &args.style_mask {
                job.style_mask = Some(load_mask(p)?);
            }
            if !args.content_masks.is_empty() {
                let mut masks = Vec::with_capacity(args.content_masks.len());
                for p in &args.content_masks {
                    masks.push(load_mask(p)?);
                }
                job.content_masks = Some(masks);
            }
            let outs = stylize_video(&engine, &job)?;
            std::fs::create_dir_all(&args.out_dir)
                .map_err(|e| Error::io(args.out_dir.display().to_string(), e))?;
            for (i, frame) in outs.iter().enumerate() {
                let path = args.out_dir.join(format!("frame_{i:04}.ppm"));
                write_ppm(&path, frame)?;
            }
            println!(
                "{}",
                serde_json::json!({
                    "frames": outs.len(),
                    "style_stat_computations": engine.style_stat_computations(),
                })
            );
            Ok(0)
        }
        Command::Metrics(m) => {
            match m {
                MetricsCommand::Ssim { a, b } => {
                    let value = ssim(&read_ppm(&a)?, &read_ppm(&b)?)?;
                    println!("{}", serde_json::json!({ "ssim": value }));
                }
                MetricsCommand::Temporal {
                    prev,
                    next,
                    flow,
                    mask,
                } => {
                    let mut field = read_flo(&flow)?;
                    if let Some(p) = &mask {
                        field.apply_valid_mask(&read_pgm(p)?.valid_mask())?;
                    }
                    let report = temporal_error(&read_ppm(&prev)?, &read_ppm(&next)?, &field)?;
                    println!(
                        "{}",
                        serde_json::json!({
                            "temporal_error": report.error,
                            "valid_pixels": report.valid_pixels,
                        })
                    );
                }
                MetricsCommand::Cycle { a, b } => {
                    let value = cycle_loss(&read_ppm(&a)?, &read_ppm(&b)?)?;
                    println!("{}", serde_json::json!({ "cycle_loss": value }));
                }
            }
            Ok(0)
        }
        Command::Laplacian(args) => {
            let image = read_ppm(&args.image)?;
            let lap = build_laplacian(&image, args.radius, args.eps_matting)?;
            write_laplacian_triplets(&args.out, &lap)?;
            println!(
                "{}",
                serde_json::json!({
                    "pixels": lap.n(),
                    "nonzeros": lap.nnz(),
                })
            );
            Ok(0)
        }
        Command::Selftest(args) => {
            let report = run_selftest(args.quick);
            let json = report.to_json();
            if let Some(p) = &args.out {
                std::fs::write(p, &json).map_err(|e| Error::io(p.display().to_string(), e))?;
            }
            println!("{json}");
            Ok(if report.all_passed { 0 } else { 1 })
        }
        Command::Bench(args) => {
            let report = run_bench(args.reps)?;
            let json = report.to_json();
            if let Some(p) = &args.out {
                std::fs::write(p, &json).map_err(|e| Error::io(p.display().to_string(), e))?;
            }
            println!("{json}");
            Ok(if report.assert_ordering().is_ok() { 0 } else { 1 })
        }
        Command::InitWeights(args) => {
            let plan = load_plan(args.plan.as_deref())?;
            let mode = match args.mode {
                WeightMode::Random => InitMode::Random,
                WeightMode::ZeroResidual => InitMode::ZeroResidual,
            };
            let weights = init_weights(&plan, RngSeed(args.seed), mode)?;
            save_weights(&args.out, &weights)?;
            println!(
                "{}",
                serde_json::json!({
                    "parameters": weights.parameter_count(),
                    "blocks": weights.blocks.len(),
                })
            );
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
