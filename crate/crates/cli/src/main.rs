//! `mixbp` — grayscale image inpainting from the command line.
//!
//! Subcommands cover the full workflow: `learn-prior` fits a patch model
//! from training images, `make-mask` produces synthetic damage masks,
//! `inpaint` fills masked pixels by mixture belief propagation, `baseline`
//! does the same by gradient ascent for comparison, and `metrics` scores
//! results against a reference.
//!
//! Exit codes: 0 on success (including convergence and completed two-pass
//! sweeps), 3 when inpainting stops at the iteration cap without
//! converging, 4 on numerical failure inside propagation, 1 for any other
//! error (2 is clap's usage-error code).

mod maskgen;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mixbp::baseline::{run_baseline, BaselineConfig};
use mixbp::engine::{self, EngineConfig, EngineError, PixelEstimate, StopReason, UpdateOrder};
use mixbp::gaussmix::WeightMode;
use mixbp::graph::{build_graph, ScheduleMode};
use mixbp::imageio::{self, GrayImage, InpaintMask, DEFAULT_MASK_THRESHOLD};
use mixbp::prior::{
    excess_kurtosis, filter_responses, fit_gmm_em, learn_filters, ModelMeta, PriorModel,
    DEFAULT_COMPONENTS, DEFAULT_EM_MAX_ITERS, DEFAULT_EM_TOL,
};

#[derive(Parser)]
#[command(name = "mixbp", version, about = "Mixture belief-propagation image inpainting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Learn a patch prior from a directory of training images.
    LearnPrior(LearnPriorArgs),
    /// Fill masked pixels by belief propagation.
    Inpaint(InpaintArgs),
    /// Fill masked pixels by gradient ascent (comparison baseline).
    Baseline(BaselineArgs),
    /// Score a test image against a reference.
    Metrics(MetricsArgs),
    /// Generate a synthetic damage mask.
    MakeMask(MakeMaskArgs),
}

#[derive(Args)]
struct LearnPriorArgs {
    /// Directory of training images (.pgm/.png), read in filename order.
    #[arg(long)]
    images: PathBuf,
    /// Number of patches for filter learning.
    #[arg(long, default_value_t = 50_000)]
    patches: usize,
    /// Number of freshly drawn patches for mixture fitting.
    #[arg(long, default_value_t = 5_000)]
    em_samples: usize,
    /// Mixture components per expert.
    #[arg(long, default_value_t = DEFAULT_COMPONENTS)]
    k: usize,
    /// Seed for patch sampling (mixture fits derive their own from it).
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Where to write the model file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum WeightModeArg {
    /// Component weights track true densities through every operation.
    Exact,
    /// Simplified bookkeeping: products add log-weights, marginalization
    /// keeps them.
    Paper,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum ScheduleArg {
    /// Two-pass on forests, loopy otherwise.
    Auto,
    /// Exact two-sweep schedule; fails when the graph has cycles.
    TwoPass,
    /// Repeated sweeps over all directed edges.
    Loopy,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum PixelEstimateArg {
    /// Read each pixel from the lowest-id clique covering it.
    LowestClique,
    /// Average the modes of all covering cliques.
    AverageModes,
}

#[derive(Args)]
struct InpaintArgs {
    /// Image with damaged pixels.
    #[arg(long)]
    image: PathBuf,
    /// Mask marking the damaged pixels (bright = unknown).
    #[arg(long)]
    mask: PathBuf,
    /// Learned prior model file.
    #[arg(long)]
    model: PathBuf,
    /// Maximum propagation iterations.
    #[arg(long, default_value_t = 3)]
    iterations: usize,
    /// Component cap for messages and intermediate products.
    #[arg(long, default_value_t = 1)]
    max_components: usize,
    #[arg(long, value_enum, default_value_t = WeightModeArg::Exact)]
    weight_mode: WeightModeArg,
    #[arg(long, value_enum, default_value_t = ScheduleArg::Auto)]
    schedule: ScheduleArg,
    /// Where to write the completed image.
    #[arg(long)]
    out: PathBuf,
    /// Write a per-iteration statistics report (deterministic text).
    #[arg(long)]
    stats: Option<PathBuf>,
    /// Print per-iteration PSNR/SSIM against this ground-truth image.
    #[arg(long)]
    report_psnr_against: Option<PathBuf>,
    /// Gray level at or above which a mask pixel counts as unknown.
    #[arg(long, default_value_t = DEFAULT_MASK_THRESHOLD)]
    mask_threshold: u8,
    /// Ridge added to near-singular precisions during marginalization.
    #[arg(long, default_value_t = 1e-6)]
    ridge: f64,
    /// Stop once no pixel estimate moves by this many gray levels.
    #[arg(long, default_value_t = 0.1)]
    tol: f64,
    #[arg(long, value_enum, default_value_t = PixelEstimateArg::LowestClique)]
    pixel_estimate: PixelEstimateArg,
    /// Write a text dump of the clique graph.
    #[arg(long)]
    dump_graph: Option<PathBuf>,
}

#[derive(Args)]
struct BaselineArgs {
    /// Image with damaged pixels.
    #[arg(long)]
    image: PathBuf,
    /// Mask marking the damaged pixels (bright = unknown).
    #[arg(long)]
    mask: PathBuf,
    /// Learned prior model file (only its filters are used).
    #[arg(long)]
    model: PathBuf,
    /// Per-filter expert weights, comma separated (default: 1 for each).
    #[arg(long, value_delimiter = ',')]
    alphas: Vec<f64>,
    #[arg(long, default_value_t = 0.1)]
    step_size: f64,
    #[arg(long, default_value_t = 2500)]
    iterations: usize,
    /// Where to write the completed image.
    #[arg(long)]
    out: PathBuf,
    /// Write the objective trace, one value per line.
    #[arg(long)]
    energy_trace: Option<PathBuf>,
    /// Gray level at or above which a mask pixel counts as unknown.
    #[arg(long, default_value_t = DEFAULT_MASK_THRESHOLD)]
    mask_threshold: u8,
}

#[derive(Args)]
struct MetricsArgs {
    /// Ground-truth image.
    #[arg(long)]
    reference: PathBuf,
    /// Image to score.
    #[arg(long)]
    test: PathBuf,
    /// Also report PSNR restricted to this mask's unknown pixels.
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Gray level at or above which a mask pixel counts as unknown.
    #[arg(long, default_value_t = DEFAULT_MASK_THRESHOLD)]
    mask_threshold: u8,
}

#[derive(Args)]
struct MakeMaskArgs {
    #[arg(long)]
    width: u32,
    #[arg(long)]
    height: u32,
    #[arg(long, value_enum, default_value_t = maskgen::MaskStyle::Scratch)]
    style: maskgen::MaskStyle,
    /// Fraction of pixels to mark unknown, in (0, 0.5].
    #[arg(long, default_value_t = 0.05)]
    coverage: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Where to write the mask (bright = unknown).
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::LearnPrior(args) => cmd_learn_prior(&args),
        Command::Inpaint(args) => cmd_inpaint(&args),
        Command::Baseline(args) => cmd_baseline(&args),
        Command::Metrics(args) => cmd_metrics(&args),
        Command::MakeMask(args) => cmd_make_mask(&args),
    };
    match result {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}

/// Lists the supported images in a directory, sorted by filename so runs
/// are reproducible regardless of directory-entry order.
fn training_images(dir: &Path) -> Result<Vec<(PathBuf, GrayImage)>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
                Some("pgm") | Some("png")
            )
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("no .pgm or .png images in {}", dir.display());
    }
    let mut images = Vec::with_capacity(paths.len());
    for path in paths {
        let image = imageio::load(&path).with_context(|| format!("loading {}", path.display()))?;
        if image.width() < 2 || image.height() < 2 {
            bail!("{} is smaller than a 2x2 patch", path.display());
        }
        images.push((path, image));
    }
    Ok(images)
}

/// Draws `count` 2×2 patches (with replacement) from the images, treating
/// all patch positions across all images as one pool so larger images
/// contribute proportionally more.
fn sample_patches(images: &[(PathBuf, GrayImage)], count: usize, seed: u64) -> Vec<Vec<f64>> {
    let positions: Vec<u64> = images
        .iter()
        .map(|(_, im)| u64::from(im.width() - 1) * u64::from(im.height() - 1))
        .collect();
    let total: u64 = positions.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let mut idx = rng.next_u64() % total;
            let mut which = 0usize;
            while idx >= positions[which] {
                idx -= positions[which];
                which += 1;
            }
            let im = &images[which].1;
            let cols = u64::from(im.width() - 1);
            let x0 = (idx % cols) as u32;
            let y0 = (idx / cols) as u32;
            vec![im.get(x0, y0), im.get(x0 + 1, y0), im.get(x0, y0 + 1), im.get(x0 + 1, y0 + 1)]
        })
        .collect()
}

fn cmd_learn_prior(args: &LearnPriorArgs) -> Result<ExitCode> {
    let images = training_images(&args.images)?;
    println!("loaded {} training image(s)", images.len());

    let patches = sample_patches(&images, args.patches, args.seed);
    let learned = learn_filters(&patches)?;
    // A fresh draw for the mixture fits keeps them from overfitting the
    // exact pixels the filters were estimated on.
    let em_patches = sample_patches(&images, args.em_samples, args.seed.wrapping_add(1));

    let mut experts = Vec::with_capacity(learned.filters.len());
    for (f, filter) in learned.filters.iter().enumerate() {
        let responses = filter_responses(&em_patches, filter)?;
        let kurt = excess_kurtosis(&responses);
        let norm: f64 = filter.iter().map(|v| v * v).sum::<f64>().sqrt();
        println!("filter {f}: {filter:?}");
        println!("filter {f}: norm {norm:.12}, response excess kurtosis {kurt:.3}");
        // Each expert gets its own derived seed so fits are independent
        // but reproducible.
        let (components, _trace) = fit_gmm_em(
            &responses,
            args.k,
            args.seed.wrapping_add(1000).wrapping_add(f as u64),
            DEFAULT_EM_TOL,
            DEFAULT_EM_MAX_ITERS,
        )?;
        for (c, g) in components.iter().enumerate() {
            println!(
                "filter {f} component {c}: weight {:.6} mean {:.6} sigma {:.6}",
                g.weight, g.mean, g.sigma
            );
        }
        experts.push(components);
    }
    println!("dropped filter: {:?}", learned.dropped);

    let model = PriorModel {
        patch_size: 2,
        filters: learned.filters,
        dropped_filter: Some(learned.dropped),
        experts,
        meta: ModelMeta {
            patches: args.patches as u64,
            em_samples: args.em_samples as u64,
            seed: args.seed,
        },
    };
    model.save(&args.out).with_context(|| format!("writing {}", args.out.display()))?;
    println!("model written to {}", args.out.display());
    Ok(ExitCode::SUCCESS)
}

fn load_image(path: &Path) -> Result<GrayImage> {
    imageio::load(path).with_context(|| format!("loading {}", path.display()))
}

fn load_mask(path: &Path, threshold: u8) -> Result<InpaintMask> {
    imageio::load_mask(path, threshold).with_context(|| format!("loading {}", path.display()))
}

fn cmd_inpaint(args: &InpaintArgs) -> Result<ExitCode> {
    let image = load_image(&args.image)?;
    let mask = load_mask(&args.mask, args.mask_threshold)?;
    let model = PriorModel::load(&args.model)
        .with_context(|| format!("loading {}", args.model.display()))?;
    let config = EngineConfig {
        weight_mode: match args.weight_mode {
            WeightModeArg::Exact => WeightMode::Exact,
            WeightModeArg::Paper => WeightMode::PaperFaithful,
        },
        max_components: args.max_components,
        iterations: args.iterations,
        convergence_tol: args.tol,
        ridge: args.ridge,
        schedule: match args.schedule {
            ScheduleArg::Auto => ScheduleMode::Auto,
            ScheduleArg::TwoPass => ScheduleMode::TwoPass,
            ScheduleArg::Loopy => ScheduleMode::Loopy,
        },
        pixel_estimate: match args.pixel_estimate {
            PixelEstimateArg::LowestClique => PixelEstimate::LowestClique,
            PixelEstimateArg::AverageModes => PixelEstimate::AverageModes,
        },
        update_order: UpdateOrder::InPlace,
        ..Default::default()
    };

    if let Some(path) = &args.dump_graph {
        let graph = build_graph(&mask)?;
        std::fs::write(path, graph.dump_text())
            .with_context(|| format!("writing {}", path.display()))?;
        println!("graph dump written to {}", path.display());
    }

    let (completed, stats) = match engine::run(&image, &mask, &model, &config) {
        Ok(result) => result,
        Err(err @ EngineError::Numerical(_)) => {
            eprintln!("error: {err}");
            return Ok(ExitCode::from(4));
        }
        Err(err) => return Err(err.into()),
    };

    println!("unknown pixels: {}", stats.unknown_pixels.len());
    for (idx, it) in stats.iterations.iter().enumerate() {
        println!(
            "iteration {}: mean change {:.4}, max change {:.4}, {:.3}s",
            idx + 1,
            it.mean_change,
            it.max_change,
            it.wall_seconds
        );
    }
    println!("stop: {}", stats.stop);
    for (dim, ops) in stats.count_ops() {
        println!(
            "ops dim {dim}: {} mat-vecs, {} inversions",
            ops.mat_vecs, ops.inversions
        );
    }

    if let Some(reference_path) = &args.report_psnr_against {
        let reference = load_image(reference_path)?;
        for (idx, it) in stats.iterations.iter().enumerate() {
            let mut snapshot = image.clone();
            for (&pid, &est) in stats.unknown_pixels.iter().zip(&it.estimates) {
                snapshot.data_mut()[pid as usize] = est;
            }
            let whole = imageio::psnr(&reference, &snapshot, None)?;
            let region = imageio::psnr(&reference, &snapshot, Some(&mask))?;
            let structural = imageio::ssim(&reference, &snapshot)?;
            println!(
                "iteration {}: psnr {whole:.4} dB, region psnr {region:.4} dB, ssim {structural:.6}",
                idx + 1
            );
        }
    }

    imageio::save(&args.out, &completed)
        .with_context(|| format!("writing {}", args.out.display()))?;
    println!("output written to {}", args.out.display());
    if let Some(path) = &args.stats {
        std::fs::write(path, stats.write_text())
            .with_context(|| format!("writing {}", path.display()))?;
        println!("stats written to {}", path.display());
    }

    Ok(match stats.stop {
        StopReason::IterationCap => ExitCode::from(3),
        _ => ExitCode::SUCCESS,
    })
}

fn cmd_baseline(args: &BaselineArgs) -> Result<ExitCode> {
    let image = load_image(&args.image)?;
    let mask = load_mask(&args.mask, args.mask_threshold)?;
    let model = PriorModel::load(&args.model)
        .with_context(|| format!("loading {}", args.model.display()))?;
    let config = BaselineConfig {
        step_size: args.step_size,
        iterations: args.iterations,
        alphas: args.alphas.clone(),
    };
    let result = run_baseline(&image, &mask, &model, &config)?;
    println!(
        "objective: {} -> {} over {} iteration(s)",
        result.objective.first().unwrap(),
        result.objective.last().unwrap(),
        args.iterations
    );
    imageio::save(&args.out, &result.image)
        .with_context(|| format!("writing {}", args.out.display()))?;
    println!("output written to {}", args.out.display());
    if let Some(path) = &args.energy_trace {
        let mut text = String::new();
        for v in &result.objective {
            text.push_str(&format!("{v}\n"));
        }
        std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
        println!("objective trace written to {}", path.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_metrics(args: &MetricsArgs) -> Result<ExitCode> {
    let reference = load_image(&args.reference)?;
    let test = load_image(&args.test)?;
    let whole = imageio::psnr(&reference, &test, None)?;
    println!("psnr {whole:.4} dB");
    if let Some(mask_path) = &args.mask {
        let mask = load_mask(mask_path, args.mask_threshold)?;
        let region = imageio::psnr(&reference, &test, Some(&mask))?;
        println!("region psnr {region:.4} dB");
    }
    let structural = imageio::ssim(&reference, &test)?;
    println!("ssim {structural:.6}");
    Ok(ExitCode::SUCCESS)
}

fn cmd_make_mask(args: &MakeMaskArgs) -> Result<ExitCode> {
    let mask =
        maskgen::make_mask(args.width, args.height, args.style, args.coverage, args.seed)
            .map_err(|e| anyhow::anyhow!(e))?;
    println!(
        "mask has {} unknown pixel(s) ({:.2}% of the image)",
        mask.unknown_count(),
        100.0 * mask.unknown_count() as f64 / (f64::from(args.width) * f64::from(args.height))
    );
    imageio::save(&args.out, &mask.to_gray())
        .with_context(|| format!("writing {}", args.out.display()))?;
    println!("mask written to {}", args.out.display());
    Ok(ExitCode::SUCCESS)
}
