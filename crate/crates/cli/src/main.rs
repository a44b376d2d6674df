//! `prorandconv` command-line tool: batch augmentation, parameter sweep
//! grids, desk-scale training runs and random field previews.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use prorandconv::interop::augment_array_with;
use prorandconv::io::png_io::encode_u8;
use prorandconv::io::{load_mnist, read_png, write_png, RunConfig, TensorDump};
use prorandconv::trainer::{run_experiment, Ablation};
use prorandconv::{
    progressive_augment_diff_fixed, progressive_augment_fixed, randconv_baseline, sample_block,
    sample_grf, smooth_kernel, AugmentConfig, Batch, Image, ImageU8, PreparedBlock, RngStream,
    RANDCONV_POOL,
};

/// Name of the resolved configuration written next to every output.
const RESOLVED_CONFIG: &str = "resolved_config.json";
/// Environment variable capping the number of worker threads.
const THREADS_ENV: &str = "PRORANDCONV_THREADS";
/// Side length images are resized to before training.
const NETWORK_INPUT: usize = 32;
/// Gap between tiles in a sweep grid, in pixels.
const GRID_GAP: usize = 2;

#[derive(Parser)]
#[command(
    name = "prorandconv",
    version,
    about = "Progressive random convolution augmentation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Augment PNG images (or one PRCT tensor dump) into an output directory.
    Augment(AugmentArgs),
    /// Render a grid of augmentations: one row per seed, one column per swept value.
    Grid(GridArgs),
    /// Train the classifier on MNIST and write metrics and a summary.
    Train(TrainArgs),
    /// Sample a standardized Gaussian random field.
    Grf(GrfArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Mode {
    Prorandconv,
    Randconv,
    ProgressiveSame,
    ProgressiveDiff,
}

#[derive(Args)]
struct AugmentArgs {
    /// A PNG file, a directory of PNG files, or a `.prct` dump of shape N×3×H×W or 3×H×W.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed from the config file.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value = "prorandconv")]
    mode: Mode,
    /// Fixed repetition count instead of `L ~ U{1..l_max}`.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    reps: Option<u64>,
    /// Variants written per input.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    count: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Sweep {
    Reps,
    SigmaGamma,
    SigmaBeta,
    SigmaG,
    SigmaDelta,
    GrfAlpha,
}

#[derive(Args)]
struct GridArgs {
    #[arg(long)]
    input: PathBuf,
    /// Composite PNG to write.
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    sweep: Sweep,
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<f64>,
    /// Number of rows, each drawn from its own child stream of the seed.
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u64).range(1..))]
    rows: u64,
    /// Repetition count for sweeps other than `reps`.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    reps: u64,
}

#[derive(Args)]
struct TrainArgs {
    /// Directory with `{train,t10k}-{images-idx3,labels-idx1}-ubyte[.gz]`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "full")]
    ablation: Ablation,
    /// Also score the four synthetic shift domains.
    #[arg(long)]
    shift_suite: bool,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct GrfArgs {
    #[arg(long, num_args = 2, value_names = ["H", "W"], required = true)]
    size: Vec<usize>,
    #[arg(long)]
    alpha: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for `grf.prct` and `grf.png`.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Augment(a) => cmd_augment(a),
        Command::Grid(a) => cmd_grid(a),
        Command::Train(a) => cmd_train(a),
        Command::Grf(a) => cmd_grf(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p).with_context(|| format!("reading config {}", p.display()))?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.train.seed = cfg.seed;
    Ok(cfg)
}

fn write_resolved(dir: &Path, cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(dir.join(RESOLVED_CONFIG), cfg.to_json() + "\n")?;
    Ok(())
}

fn worker_count(jobs: usize) -> usize {
    let cap = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    cap.min(jobs).max(1)
}

/// Runs `job(i)` for every `i < n` on up to [`worker_count`] threads and
/// returns the first error by index.
fn parallel_for<F>(n: usize, job: F) -> Result<()>
where
    F: Fn(usize) -> Result<()> + Sync,
{
    let workers = worker_count(n);
    let results: Vec<(usize, Result<()>)> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let job = &job;
                scope.spawn(move || {
                    (w..n)
                        .step_by(workers)
                        .map(|i| (i, job(i)))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect()
    });
    let mut results = results;
    results.sort_by_key(|(i, _)| *i);
    results.into_iter().try_for_each(|(_, r)| r)
}

fn mode_config(mode: Mode, cfg: &AugmentConfig) -> AugmentConfig {
    match mode {
        Mode::ProgressiveSame | Mode::ProgressiveDiff => AugmentConfig {
            enable_smoothing: false,
            enable_offsets: false,
            enable_contrast: false,
            ..cfg.clone()
        },
        _ => cfg.clone(),
    }
}

/// Augments a batch under `mode`, returning the result and the repetition count.
fn augment_batch(
    batch: &Batch,
    mode: Mode,
    cfg: &AugmentConfig,
    reps: Option<usize>,
    rng: &RngStream,
) -> Result<(Batch, usize)> {
    if mode == Mode::Randconv {
        return Ok((randconv_baseline(batch, rng, &RANDCONV_POOL)?, 1));
    }
    let cfg = mode_config(mode, cfg);
    // Same draw as the core entry points so a fixed count only replaces L.
    let reps = reps.unwrap_or_else(|| rng.split(1).uniform_int(1, cfg.l_max));
    let out = match mode {
        Mode::ProgressiveDiff => progressive_augment_diff_fixed(batch, &cfg, rng, reps)?,
        _ => progressive_augment_fixed(batch, &cfg, rng, reps)?,
    };
    Ok((out, reps))
}

fn output_name(stem: &str, seed: u64, reps: usize, variant: u64, ext: &str) -> String {
    format!("{stem}_s{seed}_L{reps}_v{variant}.{ext}")
}

fn file_stem(path: &Path) -> Result<String> {
    Ok(path
        .file_stem()
        .and_then(|s| s.to_str())
        .with_context(|| format!("{} has no usable file name", path.display()))?
        .to_string())
}

fn is_ext(path: &Path, ext: &str) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case(ext))
}

fn list_pngs(input: &Path) -> Result<Vec<PathBuf>> {
    ensure!(input.exists(), "input {} does not exist", input.display());
    if input.is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(input)
        .with_context(|| format!("listing {}", input.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    files.retain(|p| p.is_file() && is_ext(p, "png"));
    files.sort();
    ensure!(!files.is_empty(), "no PNG files in {}", input.display());
    Ok(files)
}

fn cmd_augment(args: AugmentArgs) -> Result<()> {
    let cfg = load_config(args.config.as_deref(), args.seed)?;
    ensure!(
        args.mode != Mode::Randconv || args.reps.is_none(),
        "--reps does not apply to --mode randconv"
    );
    ensure!(
        args.input.exists(),
        "input {} does not exist",
        args.input.display()
    );
    let reps = args.reps.map(|r| r as usize);
    write_resolved(&args.output, &cfg)?;

    if args.input.is_file() && is_ext(&args.input, "prct") {
        return augment_dump(&args, &cfg, reps);
    }
    let files = list_pngs(&args.input)?;
    let root = RngStream::new(cfg.seed);
    parallel_for(files.len(), |i| {
        let path = &files[i];
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        let img = read_png(&bytes).with_context(|| format!("decoding {}", path.display()))?;
        let batch = Batch::new(vec![img], None)?;
        let stem = file_stem(path)?;
        let file_rng = root.split(i as u64);
        for v in 0..args.count {
            let (out, l) =
                augment_batch(&batch, args.mode, &cfg.augment, reps, &file_rng.split(v))?;
            let name = output_name(&stem, cfg.seed, l, v, "png");
            fs::write(args.output.join(name), write_png(&out.images()[0])?)?;
        }
        Ok(())
    })
}

/// A dump is one batch. Variant `v` uses seed `seed + v`, so variant 0 of the
/// default mode matches [`augment_array_with`] for the same seed.
fn augment_dump(args: &AugmentArgs, cfg: &RunConfig, reps: Option<usize>) -> Result<()> {
    let dump = TensorDump::from_bytes(&fs::read(&args.input)?)
        .with_context(|| format!("decoding {}", args.input.display()))?;
    let shape: [usize; 4] = match dump.dims[..] {
        [n, c, h, w] => [n as usize, c as usize, h as usize, w as usize],
        [c, h, w] => [1, c as usize, h as usize, w as usize],
        _ => bail!("expected a rank 3 or 4 dump, got dims {:?}", dump.dims),
    };
    let stem = file_stem(&args.input)?;
    for v in 0..args.count {
        let seed = cfg.seed.wrapping_add(v);
        let (data, l) = if args.mode == Mode::Prorandconv && reps.is_none() {
            augment_array_with(&dump.data, shape, &cfg.augment, seed)?
        } else {
            let [n, c, h, w] = shape;
            let images = dump
                .data
                .chunks_exact(c * h * w)
                .take(n)
                .map(|chunk| Image::new(c, h, w, chunk.to_vec()))
                .collect::<prorandconv::Result<Vec<_>>>()?;
            let (out, l) = augment_batch(
                &Batch::new(images, None)?,
                args.mode,
                &cfg.augment,
                reps,
                &RngStream::new(seed),
            )?;
            (
                out.into_parts()
                    .0
                    .into_iter()
                    .flat_map(Image::into_data)
                    .collect(),
                l,
            )
        };
        let out = TensorDump::new(dump.dims.clone(), data)?;
        fs::write(
            args.output.join(output_name(&stem, cfg.seed, l, v, "prct")),
            out.to_bytes(),
        )?;
    }
    Ok(())
}

/// One grid tile: the block is drawn from `rng` with the swept quantity
/// pinned to `value`, then applied `reps` times.
fn grid_tile(
    img: &Image,
    base: &AugmentConfig,
    sweep: Sweep,
    value: f64,
    reps: usize,
    rng: &RngStream,
) -> Result<Image> {
    let mut cfg = base.clone();
    let mut reps = reps;
    match sweep {
        Sweep::Reps => {
            ensure!(
                value >= 1.0 && value.fract() == 0.0,
                "reps values must be positive integers, got {value}"
            );
            reps = value as usize;
        }
        Sweep::SigmaGamma => cfg.sigma_gamma = value,
        Sweep::SigmaBeta => cfg.sigma_beta = value,
        Sweep::GrfAlpha => cfg.grf_alpha = value,
        Sweep::SigmaG => cfg.enable_smoothing = false,
        Sweep::SigmaDelta => ensure!(value >= 0.0, "sigma_delta must be >= 0, got {value}"),
    }
    cfg.validate()?;
    let (c, h, w) = img.shape();
    let mut params = sample_block(&cfg, c, h, w, &rng.split(0))?;
    match sweep {
        Sweep::SigmaG => {
            params.weights = smooth_kernel(&params.weights, value)?;
            params.sigma_g = Some(value);
        }
        Sweep::SigmaDelta => {
            if let (Some(offsets), Some(drawn)) = (params.offsets.as_mut(), params.sigma_delta) {
                let scale = (value / drawn) as f32;
                offsets.data.iter_mut().for_each(|d| *d *= scale);
                params.sigma_delta = Some(value);
            }
        }
        _ => {}
    }
    Ok(PreparedBlock::new(&params, h, w, &cfg)?.apply_repeated(img, reps)?)
}

fn cmd_grid(args: GridArgs) -> Result<()> {
    let cfg = load_config(args.config.as_deref(), args.seed)?;
    let bytes =
        fs::read(&args.input).with_context(|| format!("reading {}", args.input.display()))?;
    let img = read_png(&bytes).with_context(|| format!("decoding {}", args.input.display()))?;
    let (c, h, w) = img.shape();
    let rows = args.rows as usize;
    let cols = args.values.len();
    let grid_h = rows * h + (rows - 1) * GRID_GAP;
    let grid_w = cols * w + (cols - 1) * GRID_GAP;
    let mut grid = ImageU8 {
        channels: c,
        height: grid_h,
        width: grid_w,
        data: vec![255; c * grid_h * grid_w],
    };
    let root = RngStream::new(cfg.seed);
    for r in 0..rows {
        let rng = root.split(r as u64);
        for (col, &value) in args.values.iter().enumerate() {
            let tile = prorandconv::denormalize_u8(&grid_tile(
                &img,
                &cfg.augment,
                args.sweep,
                value,
                args.reps as usize,
                &rng,
            )?);
            let (y0, x0) = (r * (h + GRID_GAP), col * (w + GRID_GAP));
            for ch in 0..c {
                for y in 0..h {
                    let src = &tile.data[(ch * h + y) * w..(ch * h + y + 1) * w];
                    let at = (ch * grid_h + y0 + y) * grid_w + x0;
                    grid.data[at..at + w].copy_from_slice(src);
                }
            }
        }
    }
    let dir = args
        .output
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    write_resolved(dir, &cfg)?;
    fs::write(&args.output, encode_u8(&grid)?)?;
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let cfg = load_config(args.config.as_deref(), args.seed)?;
    ensure!(
        args.data.is_dir(),
        "data directory {} does not exist",
        args.data.display()
    );
    let train_set = load_mnist(&args.data, "train")
        .context("loading training split")?
        .take(cfg.train.train_samples)?
        .to_network_input(NETWORK_INPUT, 3)?;
    let test_set = load_mnist(&args.data, "t10k")
        .context("loading test split")?
        .to_network_input(NETWORK_INPUT, 3)?;
    write_resolved(&args.out, &cfg)?;

    let mut metrics = BufWriter::new(File::create(args.out.join("metrics.jsonl"))?);
    let mut write_err = None;
    let (summary, _) = run_experiment(
        &train_set,
        &test_set,
        args.ablation,
        &cfg.augment,
        &cfg.train,
        args.shift_suite,
        |rec| {
            eprintln!(
                "[{}] epoch {:>3} step {:>6} lr {:.5} loss {:.4} val_acc {:.4}",
                args.ablation, rec.epoch, rec.step, rec.lr, rec.loss, rec.in_domain_acc
            );
            let line = serde_json::to_string(rec).expect("record serializes");
            if let Err(e) = writeln!(metrics, "{line}") {
                write_err.get_or_insert(e);
            }
        },
    )?;
    if let Some(e) = write_err {
        return Err(e).context("writing metrics log");
    }
    metrics.flush()?;
    fs::write(
        args.out.join("summary.json"),
        serde_json::to_string_pretty(&summary)? + "\n",
    )?;
    eprintln!(
        "[{}] in-domain {:.4} mean shift {}",
        args.ablation,
        summary.in_domain_acc,
        summary
            .mean_shift_acc
            .map_or("n/a".to_string(), |a| format!("{a:.4}"))
    );
    Ok(())
}

fn cmd_grf(args: GrfArgs) -> Result<()> {
    let (h, w) = (args.size[0], args.size[1]);
    ensure!(h > 0 && w > 0, "size must be positive, got {h}x{w}");
    let field = sample_grf(h, w, args.alpha, &mut RngStream::new(args.seed))?;
    fs::create_dir_all(&args.out)?;
    let dump = TensorDump::new(
        vec![h as u32, w as u32],
        field.data.iter().map(|&v| v as f32).collect(),
    )?;
    fs::write(args.out.join("grf.prct"), dump.to_bytes())?;

    let (lo, hi) = field
        .data
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let span = hi - lo;
    let pixels = field
        .data
        .iter()
        .map(|&v| {
            if span > 0.0 {
                ((v - lo) / span * 255.0).round() as u8
            } else {
                128
            }
        })
        .collect();
    let png = encode_u8(&ImageU8 {
        channels: 1,
        height: h,
        width: w,
        data: pixels,
    })?;
    fs::write(args.out.join("grf.png"), png)?;
    Ok(())
}
