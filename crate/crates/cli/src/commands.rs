use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use phase_deblur::error::DeblurError;
use phase_deblur::estimate::{
    estimate_from_spectrum, motion_spectrum, Confidence, KernelShape, MotionPattern,
};
use phase_deblur::image::Image;
use phase_deblur::io::{read_image, read_mask, write_image, BitDepth};
use phase_deblur::kernel::Kernel;
use phase_deblur::metrics::{error_ratio_with_border, evaluate};
use phase_deblur::nonuniform::{
    deblur_nonuniform, grid_decompose, masks_from_stack, NonUniformOptions, RegionResult,
};
use phase_deblur::optimizer::{
    deblur_multiscale_with, estimate_latent, BoundaryPad, DeblurParams, MultiscaleOptions,
    TraceRecord, DEFAULT_EPSILON, DEFAULT_MU1, DEFAULT_MU2, DEFAULT_OUTER_ITERS,
    DEFAULT_PYRAMID_SCALE,
};
use phase_deblur::synth::{blur_with_kernel, test_pattern, BlurSpec, PatternKind};
use serde::Serialize;

use crate::config::{parse_grid, RunConfig, DEFAULT_DEPTH};

/// Environment variable capping the number of region worker threads.
pub const THREADS_ENV: &str = "PHASE_DEBLUR_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "phase-deblur",
    version,
    about = "Blind motion deblurring from the phase-only autocorrelation"
)]
pub struct Cli {
    /// More diagnostics on standard error (repeat for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate an initial blur kernel and print the motion pattern.
    EstimateKernel(EstimateArgs),
    /// Deblur an image, blind or with a known kernel.
    Deblur(DeblurArgs),
    /// Generate a synthetic sharp/blurred pair.
    Synth(SynthArgs),
    /// Compare a result with a reference and print a metric report.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArg {
    /// TOML run configuration; flags given explicitly take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PeakArgs {
    /// Initial kernel construction: linear, coarse or auto [default: auto].
    #[arg(long)]
    pub shape: Option<KernelShape>,
    /// Radius of the ignored disc around the zero lag [default: 3].
    #[arg(long)]
    pub exclusion_radius: Option<usize>,
    /// Peak threshold relative to the strongest off-center value [default: 0.5].
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Largest number of peaks kept [default: 10].
    #[arg(long)]
    pub max_peaks: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// Blurry image (PNG, PGM or PPM).
    pub input: Option<PathBuf>,
    /// Where to write the kernel text file.
    pub out_kernel: Option<PathBuf>,
    /// Also write the autocorrelation as an 8-bit image.
    #[arg(long)]
    pub dump_spectrum: Option<PathBuf>,
    #[command(flatten)]
    pub peaks: PeakArgs,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Debug, Args)]
pub struct DeblurArgs {
    /// Blurry image (PNG, PGM or PPM).
    pub input: Option<PathBuf>,
    /// Where to write the deblurred image.
    pub output: Option<PathBuf>,
    /// Known kernel: skip estimation and deconvolve non-blindly.
    #[arg(long, conflicts_with_all = ["kernel_init", "grid", "masks"])]
    pub kernel: Option<PathBuf>,
    /// Start the blind optimizer from this kernel instead of estimating one.
    #[arg(long, conflicts_with_all = ["grid", "masks"])]
    pub kernel_init: Option<PathBuf>,
    /// Write the final kernel (uniform runs) or one kernel per region with
    /// the region index appended to the file stem.
    #[arg(long)]
    pub kernel_out: Option<PathBuf>,
    /// Spatially varying blur on an `NxM` grid of overlapping patches.
    #[arg(long, conflicts_with = "masks")]
    pub grid: Option<String>,
    /// Cross-fade half-width as a fraction of the cell size [default: 0.25].
    #[arg(long)]
    pub overlap: Option<f64>,
    /// 8-bit grayscale region masks (255 = inside), normalized to sum to one.
    #[arg(long, num_args = 1..)]
    pub masks: Vec<PathBuf>,
    /// Worker threads for regions (also capped by PHASE_DEBLUR_THREADS).
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Write the per-iteration energy trace as JSON.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long, help = format!("Kernel l2 weight [default: {DEFAULT_MU1}]"))]
    pub mu1: Option<f64>,
    #[arg(long, help = format!("Gradient penalty weight [default: {DEFAULT_MU2}]"))]
    pub mu2: Option<f64>,
    #[arg(long, help = format!("Gradient threshold scale in [0.1, 1] [default: {DEFAULT_EPSILON}]"))]
    pub epsilon: Option<f64>,
    #[arg(long, help = format!("Alternations per pyramid level [default: {DEFAULT_OUTER_ITERS}]"))]
    pub iters: Option<usize>,
    #[arg(long, help = format!("Per-level pyramid scale in (0.5, 1) [default: {DEFAULT_PYRAMID_SCALE}]"))]
    pub scale: Option<f64>,
    /// Treat the input as periodic instead of padding it with a smooth blend.
    #[arg(long)]
    pub no_pad: bool,
    #[arg(long, help = format!("Output bit depth, 8 or 16 [default: {DEFAULT_DEPTH}]"))]
    pub depth: Option<BitDepth>,
    #[command(flatten)]
    pub peaks: PeakArgs,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Where to write the blurred observation.
    #[arg(long)]
    pub out_blurred: PathBuf,
    /// Where to write the sharp image.
    #[arg(long)]
    pub out_sharp: Option<PathBuf>,
    /// Where to write the ground-truth kernel.
    #[arg(long)]
    pub out_kernel: Option<PathBuf>,
    /// Sharp source image; a test pattern is generated when absent.
    #[arg(long, conflicts_with_all = ["pattern", "size"])]
    pub input: Option<PathBuf>,
    /// Test pattern: checker, noise, edges or circle.
    #[arg(long, default_value = "edges")]
    pub pattern: PatternKind,
    /// Test pattern side in pixels.
    #[arg(long, default_value_t = 256)]
    pub size: usize,
    /// Seed for the test pattern.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Linear blur length in pixels.
    #[arg(long, requires = "angle", conflicts_with_all = ["waypoints", "spec"])]
    pub length: Option<f64>,
    /// Linear blur direction in degrees from +x towards +y.
    #[arg(long, requires = "length")]
    pub angle: Option<f64>,
    /// Trajectory blur through `x,y;x,y;...` waypoints.
    #[arg(long, conflicts_with = "spec")]
    pub waypoints: Option<String>,
    /// Blur description as JSON, e.g. {"kind":"linear","length":20,"angle":10}.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Additive Gaussian noise standard deviation on the [0, 1] scale.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// Seed for the noise.
    #[arg(long, default_value_t = 0)]
    pub noise_seed: u64,
    /// Output bit depth, 8 or 16.
    #[arg(long, default_value = "16")]
    pub depth: BitDepth,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Deblurred result.
    pub result: PathBuf,
    /// Sharp reference.
    pub reference: PathBuf,
    /// Identifier echoed in the report [default: the result's file name].
    #[arg(long)]
    pub image_id: Option<String>,
    /// Pixels cropped from every side before measuring [default: the
    /// ground-truth kernel radius, or 0].
    #[arg(long)]
    pub border: Option<usize>,
    /// Ground-truth kernel; with --est-kernel and --blurry adds error_ratio.
    #[arg(long, requires_all = ["est_kernel", "blurry"])]
    pub gt_kernel: Option<PathBuf>,
    /// Estimated kernel for error_ratio.
    #[arg(long, requires = "gt_kernel")]
    pub est_kernel: Option<PathBuf>,
    /// Blurry observation for error_ratio.
    #[arg(long, requires = "gt_kernel")]
    pub blurry: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArg,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::EstimateKernel(a) => cmd_estimate_kernel(a),
        Command::Deblur(a) => cmd_deblur(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Eval(a) => cmd_eval(a),
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    use std::io::Write;
    let text = serde_json::to_string_pretty(value)?;
    match writeln!(std::io::stdout().lock(), "{text}") {
        // a reader that stopped early (`| head`) is not a failure of the run
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other.map_err(DeblurError::from)?),
    }
}

fn load(path: &Path) -> Result<Image> {
    read_image(path).with_context(|| format!("reading {}", path.display()))
}

fn load_kernel(path: &Path) -> Result<Kernel> {
    Kernel::read(path).with_context(|| format!("reading kernel {}", path.display()))
}

fn required(flag: Option<PathBuf>, from_config: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    flag.or_else(|| from_config.clone()).ok_or_else(|| {
        anyhow::Error::new(DeblurError::InvalidParameter(format!(
            "no {what} given on the command line or in the config"
        )))
    })
}

fn merge_peaks(cfg: &mut RunConfig, a: &PeakArgs) -> Result<()> {
    if let Some(v) = a.shape {
        cfg.kernel_shape = v;
    }
    if let Some(v) = a.exclusion_radius {
        cfg.peaks.central_exclusion_radius = v;
    }
    if let Some(v) = a.threshold {
        cfg.peaks.relative_threshold = v;
    }
    if let Some(v) = a.max_peaks {
        cfg.peaks.max_peaks = v;
    }
    cfg.peaks.validate()?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct PatternReport {
    angle: Option<f64>,
    magnitude: Option<f64>,
    confidence: Confidence,
    kernel_width: usize,
    kernel_height: usize,
    peaks: usize,
}

impl PatternReport {
    fn new(kernel: &Kernel, pattern: Option<&MotionPattern>, confidence: Confidence) -> Self {
        PatternReport {
            angle: pattern.map(|p| p.angle),
            magnitude: pattern.map(|p| p.magnitude),
            confidence,
            kernel_width: kernel.width(),
            kernel_height: kernel.height(),
            peaks: pattern.map_or(0, |p| p.peaks.len()),
        }
    }
}

/// Off-center structure stretched to `[0, 1]`; the zero-lag peak saturates.
fn spectrum_preview(acorr: &Image, exclusion: usize) -> Image {
    let (w, h) = acorr.dims();
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    let r2 = (exclusion * exclusion) as f64;
    let outside = |x: usize, y: usize| (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2) > r2;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for y in 0..h {
        for x in 0..w {
            if outside(x, y) {
                lo = lo.min(acorr.get(x, y));
                hi = hi.max(acorr.get(x, y));
            }
        }
    }
    let span = if hi > lo { hi - lo } else { 1.0 };
    acorr.map(|v| ((v - lo) / span).clamp(0.0, 1.0))
}

fn cmd_estimate_kernel(a: EstimateArgs) -> Result<()> {
    let mut cfg = RunConfig::load(a.config.config.as_deref())?;
    merge_peaks(&mut cfg, &a.peaks)?;
    let input = required(a.input, &cfg.input, "input image")?;
    let out = required(a.out_kernel, &cfg.output, "kernel output path")?;
    let img = load(&input)?;
    let acorr = motion_spectrum(&img.luminance(), &cfg.peaks)?;
    let est = estimate_from_spectrum(&acorr, &cfg.peaks, cfg.kernel_shape)?;
    if est.confidence == Confidence::Low {
        warn!("no autocorrelation peak passed the threshold; writing a delta kernel");
    }
    est.kernel
        .write(&out)
        .with_context(|| format!("writing {}", out.display()))?;
    if let Some(path) = &a.dump_spectrum {
        let preview = spectrum_preview(&acorr, cfg.peaks.central_exclusion_radius);
        write_image(&preview, path, BitDepth::Eight)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    print_json(&PatternReport::new(
        &est.kernel,
        est.pattern.as_ref(),
        est.confidence,
    ))
}

fn region_threads(flag: Option<usize>, cfg: Option<usize>) -> Option<usize> {
    let env = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0);
    match (flag.or(cfg), env) {
        (Some(n), Some(cap)) => Some(n.min(cap)),
        (Some(n), None) => Some(n),
        (None, cap) => cap,
    }
}

fn kernel_path(base: &Path, index: usize) -> PathBuf {
    let stem = base
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("kernel");
    let name = match base.extension().and_then(|e| e.to_str()) {
        Some(ext) => format!("{stem}_{index}.{ext}"),
        None => format!("{stem}_{index}"),
    };
    base.with_file_name(name)
}

#[derive(Debug, Serialize)]
struct TraceRow {
    #[serde(skip_serializing_if = "Option::is_none")]
    region: Option<usize>,
    #[serde(flatten)]
    record: TraceRecord,
}

#[derive(Debug, Serialize)]
struct RegionReport {
    index: usize,
    bounding_box: [usize; 4],
    #[serde(flatten)]
    pattern: PatternReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    failure: Option<String>,
}

#[derive(Debug, Serialize)]
struct DeblurReport {
    mode: &'static str,
    #[serde(flatten)]
    pattern: Option<PatternReport>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    regions: Vec<RegionReport>,
}

/// Non-blind deconvolution with periodic-blend padding when enabled.
fn deconvolve(b: &Image, k: &Kernel, p: &DeblurParams) -> Result<Image> {
    let pad = if p.pad_boundary {
        BoundaryPad::for_support(b.width(), b.height(), k.side())
    } else {
        BoundaryPad::NONE
    };
    let planes = b
        .split_channels()
        .iter()
        .map(|plane| pad.crop(&estimate_latent(&pad.apply(plane), &k.square(), p)?))
        .collect::<phase_deblur::error::Result<Vec<_>>>()?;
    Ok(Image::from_channels(&planes)?)
}

fn cmd_deblur(a: DeblurArgs) -> Result<()> {
    let mut cfg = RunConfig::load(a.config.config.as_deref())?;
    merge_peaks(&mut cfg, &a.peaks)?;
    let p = &mut cfg.deblur;
    if let Some(v) = a.mu1 {
        p.mu1 = v;
    }
    if let Some(v) = a.mu2 {
        p.mu2 = v;
    }
    if let Some(v) = a.epsilon {
        p.epsilon = v;
    }
    if let Some(v) = a.iters {
        p.outer_iters = v;
    }
    if let Some(v) = a.scale {
        p.pyramid_scale = v;
    }
    if a.no_pad {
        p.pad_boundary = false;
    }
    p.validate()?;
    let depth = match a.depth {
        Some(d) => d,
        None => cfg.depth.to_string().parse()?,
    };
    let overlap = a.overlap.unwrap_or(cfg.overlap);
    let grid = a.grid.clone().or(cfg.grid.clone());
    let jobs = region_threads(a.jobs, cfg.jobs);
    let input = required(a.input, &cfg.input, "input image")?;
    let output = required(a.output, &cfg.output, "output path")?;
    let params = cfg.deblur.clone();
    let opts = MultiscaleOptions {
        peaks: cfg.peaks.clone(),
        shape: cfg.kernel_shape,
    };

    let b = load(&input)?;
    let mut trace: Vec<TraceRow> = Vec::new();
    let report;
    let latent;
    if let Some(path) = &a.kernel {
        let k = load_kernel(path)?;
        latent = deconvolve(&b, &k, &params)?;
        if let Some(out) = &a.kernel_out {
            k.write(out)?;
        }
        report = DeblurReport {
            mode: "non_blind",
            pattern: Some(PatternReport::new(&k, None, Confidence::High)),
            regions: Vec::new(),
        };
    } else if grid.is_some() || !a.masks.is_empty() {
        let masks = if let Some(g) = &grid {
            let (nx, ny) = parse_grid(g).map_err(DeblurError::Parse)?;
            grid_decompose(&b, nx, ny, overlap)?
        } else {
            let stack = a
                .masks
                .iter()
                .map(|m| read_mask(m).with_context(|| format!("reading mask {}", m.display())))
                .collect::<Result<Vec<_>>>()?;
            if stack.iter().any(|m| m.dims() != b.dims()) {
                return Err(DeblurError::DimensionMismatch(
                    "masks must match the input image size".into(),
                )
                .into());
            }
            masks_from_stack(&stack)?
        };
        info!("deblurring {} regions", masks.len());
        let nu = NonUniformOptions {
            multiscale: opts,
            jobs,
        };
        let (img, regions) = deblur_nonuniform(&b, &masks, &params, &nu)?;
        latent = img;
        report = DeblurReport {
            mode: "non_uniform",
            pattern: None,
            regions: region_reports(&regions),
        };
        for (i, r) in regions.iter().enumerate() {
            if let Some(out) = &a.kernel_out {
                r.kernel.write(kernel_path(out, i))?;
            }
            trace.extend(r.energy_trace.iter().map(|t| TraceRow {
                region: Some(i),
                record: *t,
            }));
        }
    } else {
        let k_init = a.kernel_init.as_deref().map(load_kernel).transpose()?;
        let r = deblur_multiscale_with(&b, &params, &opts, k_init.as_ref())?;
        if r.confidence == Confidence::Low {
            warn!("kernel estimation found no peaks; started from a delta kernel");
        }
        if let Some(out) = &a.kernel_out {
            r.kernel.write(out)?;
        }
        trace.extend(r.energy_trace.iter().map(|t| TraceRow {
            region: None,
            record: *t,
        }));
        report = DeblurReport {
            mode: "uniform",
            pattern: Some(PatternReport::new(
                &r.kernel,
                r.pattern.as_ref(),
                r.confidence,
            )),
            regions: Vec::new(),
        };
        latent = r.latent;
    }
    write_image(&latent, &output, depth)
        .with_context(|| format!("writing {}", output.display()))?;
    if let Some(path) = &a.trace {
        std::fs::write(path, serde_json::to_string_pretty(&trace)?)
            .map_err(DeblurError::from)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    print_json(&report)
}

fn region_reports(regions: &[RegionResult]) -> Vec<RegionReport> {
    regions
        .iter()
        .enumerate()
        .map(|(index, r)| {
            if let Some(f) = &r.failure {
                warn!("region {index} kept its blurry pixels: {f}");
            }
            let (x, y, w, h) = r.mask.bounding_box();
            RegionReport {
                index,
                bounding_box: [x, y, w, h],
                pattern: PatternReport::new(&r.kernel, r.pattern.as_ref(), r.confidence),
                failure: r.failure.clone(),
            }
        })
        .collect()
}

fn parse_waypoints(s: &str) -> Result<Vec<(f64, f64)>> {
    s.split(';')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            let (x, y) = p
                .split_once(',')
                .ok_or_else(|| DeblurError::Parse(format!("waypoint {p} is not x,y")))?;
            let x = x
                .trim()
                .parse()
                .map_err(|_| DeblurError::Parse(format!("bad x in {p}")))?;
            let y = y
                .trim()
                .parse()
                .map_err(|_| DeblurError::Parse(format!("bad y in {p}")))?;
            Ok((x, y))
        })
        .collect()
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let spec = if let Some(path) = &a.spec {
        let text = std::fs::read_to_string(path)
            .map_err(DeblurError::from)
            .with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str::<BlurSpec>(&text).map_err(|e| DeblurError::Parse(e.to_string()))?
    } else if let Some(w) = &a.waypoints {
        BlurSpec::Trajectory {
            waypoints: parse_waypoints(w)?,
            samples_per_segment: 64,
            noise_sigma: a.noise,
        }
    } else if let (Some(length), Some(angle)) = (a.length, a.angle) {
        BlurSpec::Linear {
            length,
            angle,
            noise_sigma: a.noise,
        }
    } else {
        bail!(DeblurError::InvalidParameter(
            "give --length and --angle, --waypoints or --spec".into()
        ));
    };
    spec.validate()?;
    let kernel = spec.kernel()?;
    let sharp = match &a.input {
        Some(path) => load(path)?,
        None => test_pattern(a.pattern, a.size, a.seed)?,
    };
    let blurred = blur_with_kernel(&sharp, &kernel, spec.noise_sigma(), a.noise_seed)?;
    write_image(&blurred, &a.out_blurred, a.depth)
        .with_context(|| format!("writing {}", a.out_blurred.display()))?;
    if let Some(path) = &a.out_sharp {
        write_image(&sharp, path, a.depth)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(path) = &a.out_kernel {
        kernel
            .write(path)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    print_json(&spec)
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let cfg = RunConfig::load(a.config.config.as_deref())?;
    let result = load(&a.result)?;
    let reference = load(&a.reference)?;
    let gt = a.gt_kernel.as_deref().map(load_kernel).transpose()?;
    let border = a
        .border
        .unwrap_or_else(|| gt.as_ref().map_or(0, |k| k.radius()));
    let mut report = evaluate(&result, &reference, border)?;
    if let (Some(gt), Some(est), Some(blurry)) = (&gt, &a.est_kernel, &a.blurry) {
        let est = load_kernel(est)?;
        let blurry = load(blurry)?;
        let ratio = error_ratio_with_border(&blurry, &est, gt, &reference, &cfg.deblur, border)?;
        if ratio.value().is_none() {
            warn!("ground-truth kernel reproduces the reference exactly; error_ratio omitted");
        }
        report.error_ratio = ratio.value();
    }
    let id = a.image_id.unwrap_or_else(|| {
        a.result
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default()
    });
    print_json(&report.to_json(id))
}
