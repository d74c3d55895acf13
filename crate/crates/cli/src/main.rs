//! `ckn` command-line front end.

mod data;
mod settings;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ckn::gradcheck::{run_suite, GradCheckOptions};
use ckn::init::unsupervised_init;
use ckn::io::{encode_checkpoint, load_checkpoint, read_image, save_checkpoint, write_image, Checkpoint, Config, Head, Split};
use ckn::optim::EpochRecord;
use ckn::tasks::classify::{evaluate_error, train_classifier, ClassifierConfig, ClassifierHead};
use ckn::tasks::sr::{sr_train, sr_upscale, SrConfig, SrModel};
use ckn::tasks::LocalWhitening;
use ckn::{network_apply, CknError, Map, Network, Result};

#[derive(Parser, Debug)]
#[command(name = "ckn", version, about = "Convolutional kernel networks: training and evaluation")]
struct Cli {
    /// Configuration file of `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the `seed` key.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Fixed reduction order and RNG streams.
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Layer-wise spherical K-means initialization.
    TrainUnsup {
        #[arg(long)]
        out: PathBuf,
    },
    /// Supervised training with lambda selection.
    TrainSup {
        #[arg(long)]
        out: PathBuf,
    },
    /// Test error of a classifier checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Trains a x2 super-resolution model on luminance patches.
    SrTrain {
        #[arg(long)]
        out: PathBuf,
    },
    /// Upscales one image.
    SrApply {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u32).range(2..=3))]
        factor: u32,
    },
    /// Finite-difference check of the analytic gradients.
    Gradcheck,
    /// Forward throughput of a random network.
    KernelBench {
        #[arg(long, default_value_t = 64)]
        images: usize,
        #[arg(long, default_value_t = 32)]
        size: usize,
    },
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
enum SplitArg {
    Train,
    Test,
}

struct Ctx {
    cfg: Config,
    seed: u64,
    deterministic: bool,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

fn result_line(fields: &[(&str, String)]) {
    let body: Vec<String> = fields.iter().map(|(k, v)| format!("{k}={v}")).collect();
    println!("RESULT {}", body.join(" "));
}

fn save(path: &Path, ck: &Checkpoint<f64>) -> Result<String> {
    save_checkpoint(path, ck)?;
    Ok(format!("{:016x}", fnv1a(&encode_checkpoint(ck)?)))
}

fn last_objective(history: &[EpochRecord]) -> f64 {
    history.iter().rev().find(|r| r.accepted).map_or(f64::NAN, |r| r.objective)
}

fn whiten_all(w: &LocalWhitening<f64>, images: &[Map]) -> Result<Vec<Map>> {
    images.iter().map(|m| w.apply(m)).collect()
}

/// Fits whitening on the training images when enabled.
fn prepare(ctx: &Ctx, images: Vec<Map>) -> Result<(Vec<Map>, Option<LocalWhitening<f64>>)> {
    match settings::whitening(&ctx.cfg, ctx.seed)? {
        None => Ok((images, None)),
        Some(opts) => {
            let mut w = LocalWhitening::new(opts);
            w.fit(&images)?;
            Ok((whiten_all(&w, &images)?, Some(w)))
        }
    }
}

const CLASSIFIER_LAYERS: &str = "3:32:1.4142135623730951,3:64:3";
const SR_LAYERS: &str = "3:32:1,3:32:1,3:32:1";

fn train_unsup(ctx: &Ctx, out: &Path) -> Result<()> {
    let train = data::labeled(&ctx.cfg, Split::Train, ctx.seed)?;
    let (images, whitening) = prepare(ctx, train.images)?;
    let net_cfg = settings::network(&ctx.cfg, images[0].channels(), CLASSIFIER_LAYERS)?;
    let patches = ctx.cfg.get_or("init.patches", 100_000usize)?;
    let net = unsupervised_init(&net_cfg, &images, patches, settings::kmeans(&ctx.cfg)?, ctx.seed)?;
    let feat = network_apply(&net, &images[0])?;
    let mut ck = Checkpoint::new(net);
    ck.whitening = whitening;
    ck.seed = ctx.seed;
    let digest = save(out, &ck)?;
    result_line(&[
        ("command", "train-unsup".into()),
        ("images", images.len().to_string()),
        ("layers", ck.net.depth().to_string()),
        ("feature_dim", feat.matrix().len().to_string()),
        ("digest", digest),
    ]);
    Ok(())
}

fn train_sup(ctx: &Ctx, out: &Path) -> Result<()> {
    let train = data::labeled(&ctx.cfg, Split::Train, ctx.seed)?;
    let (images, whitening) = prepare(ctx, train.images)?;
    let cfg = &ctx.cfg;
    let mut config = ClassifierConfig::new(
        settings::network(cfg, images[0].channels(), CLASSIFIER_LAYERS)?,
        train.classes,
    );
    config.loss = settings::loss(cfg)?;
    config.patches_per_layer = cfg.get_or("init.patches", config.patches_per_layer)?;
    config.kmeans = settings::kmeans(cfg)?;
    config.fit = settings::fit(cfg, ctx.seed)?;
    config.solver = settings::solver(cfg, ctx.seed, config.solver.tol)?;
    config.lambda_exponents = settings::lambda_exponents(cfg)?;
    config.validation_fraction = cfg.get_or("train.validation_fraction", config.validation_fraction)?;
    config.seed = ctx.seed;
    let outcome = train_classifier(&config, &images, &train.labels)?;
    let train_error = evaluate_error(&outcome.head, &images, &train.labels)?;
    let epochs = outcome.history.iter().filter(|r| r.epoch > 0).count();
    let objective = last_objective(&outcome.history);
    let ClassifierHead { net, model, classes } = outcome.head;
    let mut ck = Checkpoint::new(net);
    ck.head = Head::Classifier {
        classes: classes as u32,
        model,
    };
    ck.whitening = whitening;
    ck.history = outcome.history;
    ck.seed = ctx.seed;
    let digest = save(out, &ck)?;
    result_line(&[
        ("command", "train-sup".into()),
        ("images", images.len().to_string()),
        ("lambda", format!("{:e}", outcome.lambda)),
        ("epochs", epochs.to_string()),
        ("stop", format!("{:?}", outcome.stop)),
        ("objective", format!("{objective:.9e}")),
        ("train_error", format!("{train_error:.6}")),
        ("digest", digest),
    ]);
    Ok(())
}

fn eval(ctx: &Ctx, checkpoint: &Path, split: SplitArg) -> Result<()> {
    let ck: Checkpoint<f64> = load_checkpoint(checkpoint)?;
    let Head::Classifier { classes, model } = ck.head else {
        return Err(CknError::InvalidArgument(format!(
            "{} does not hold a classifier",
            checkpoint.display()
        )));
    };
    let split = match split {
        SplitArg::Train => Split::Train,
        SplitArg::Test => Split::Test,
    };
    // synthetic test sets derive from the training seed
    let set = data::labeled(&ctx.cfg, split, ck.seed)?;
    let images = match &ck.whitening {
        Some(w) => whiten_all(w, &set.images)?,
        None => set.images,
    };
    let head = ClassifierHead::new(ck.net, model, classes as usize)?;
    let error = evaluate_error(&head, &images, &set.labels)?;
    result_line(&[
        ("command", "eval".into()),
        ("images", images.len().to_string()),
        ("error", format!("{error:.6}")),
    ]);
    Ok(())
}

fn sr_train_cmd(ctx: &Ctx, out: &Path) -> Result<()> {
    let cfg = &ctx.cfg;
    let images = data::sr_images(cfg, ctx.seed)?;
    let mut config = SrConfig::new(settings::network(cfg, 1, SR_LAYERS)?);
    config.patches = cfg.get_or("sr.patches", config.patches)?;
    config.patch_size = cfg.get_or("sr.patch_size", config.patch_size)?;
    config.lambda = cfg.get_or("sr.lambda", config.lambda)?;
    config.init_patches = cfg.get_or("init.patches", config.init_patches)?;
    config.kmeans = settings::kmeans(cfg)?;
    config.fit = settings::fit(cfg, ctx.seed)?;
    config.seed = ctx.seed;
    let outcome = sr_train(&config, &images)?;
    let epochs = outcome.history.iter().filter(|r| r.epoch > 0).count();
    let objective = last_objective(&outcome.history);
    let SrModel { net, head, scale } = outcome.model;
    let mut ck = Checkpoint::new(net);
    ck.head = Head::SuperResolution {
        scale: scale as u32,
        model: head,
    };
    ck.history = outcome.history;
    ck.seed = ctx.seed;
    let digest = save(out, &ck)?;
    result_line(&[
        ("command", "sr-train".into()),
        ("patches", config.patches.to_string()),
        ("epochs", epochs.to_string()),
        ("stop", format!("{:?}", outcome.stop)),
        ("objective", format!("{objective:.9e}")),
        ("digest", digest),
    ]);
    Ok(())
}

fn sr_apply(checkpoint: &Path, input: &Path, output: &Path, factor: usize) -> Result<()> {
    let ck: Checkpoint<f64> = load_checkpoint(checkpoint)?;
    let Head::SuperResolution { scale, model } = ck.head else {
        return Err(CknError::InvalidArgument(format!(
            "{} does not hold a super-resolution model",
            checkpoint.display()
        )));
    };
    let model = SrModel::new(ck.net, model, scale as usize)?;
    let image = read_image(input)?;
    let up = match image.channels() {
        1 => model.upscale_luma(&image, factor)?,
        _ => sr_upscale(&model, &image, factor)?,
    };
    write_image(output, &up)?;
    result_line(&[
        ("command", "sr-apply".into()),
        ("factor", factor.to_string()),
        ("height", up.height().to_string()),
        ("width", up.width().to_string()),
        ("channels", up.channels().to_string()),
    ]);
    Ok(())
}

fn gradcheck(ctx: &Ctx) -> Result<bool> {
    let reports = run_suite(ctx.seed, &GradCheckOptions::default())?;
    let mut fields = vec![("command", "gradcheck".to_string())];
    let mut passed = true;
    let mut worst: f64 = 0.0;
    let mut entries = 0;
    for (loss, report) in &reports {
        eprintln!(
            "{loss}: {} entries, max relative error {:.3e} (filters {:.3e}, alpha {:.3e})",
            report.entries.len(),
            report.max_error,
            report.max_filter_error,
            report.max_alpha_error
        );
        passed &= report.passed;
        worst = worst.max(report.max_error);
        entries += report.entries.len();
    }
    fields.push(("entries", entries.to_string()));
    fields.push(("max_rel_error", format!("{worst:.3e}")));
    fields.push(("passed", passed.to_string()));
    result_line(&fields);
    Ok(passed)
}

fn kernel_bench(ctx: &Ctx, count: usize, size: usize) -> Result<()> {
    let channels = ctx.cfg.get_or("dataset.channels", 3usize)?;
    let net_cfg = settings::network(&ctx.cfg, channels, CLASSIFIER_LAYERS)?;
    let net = Network::random(&net_cfg, ctx.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    let images: Vec<Map> = (0..count)
        .map(|_| Map::from_fn(channels, size, size, |_, _, _| rng.random_range(0.0..1.0)))
        .collect();
    let start = Instant::now();
    let features: Vec<Map> = {
        use rayon::prelude::*;
        images.par_iter().map(|m| network_apply(&net, m)).collect::<Result<_>>()?
    };
    let elapsed = start.elapsed().as_secs_f64();
    eprintln!(
        "{count} images of {channels}x{size}x{size} in {elapsed:.3}s ({:.1} images/s, {} threads)",
        count as f64 / elapsed.max(1e-12),
        rayon::current_num_threads()
    );
    let checksum: f64 = features.iter().map(|f| f.matrix().sum()).sum();
    result_line(&[
        ("command", "kernel-bench".into()),
        ("images", count.to_string()),
        ("feature_dim", features[0].matrix().len().to_string()),
        ("checksum", format!("{checksum:.9e}")),
    ]);
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    cfg.check_keys(settings::KNOWN_KEYS)?;
    if let Some(seed) = cli.seed {
        cfg.set("seed", seed);
    }
    let seed = cfg.get_or("seed", 0u64)?;
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CknError::InvalidArgument(format!("thread pool: {e}")))?;
    }
    let ctx = Ctx {
        cfg,
        seed,
        deterministic: cli.deterministic,
    };
    if ctx.deterministic {
        eprintln!("deterministic mode, seed {seed}");
    }
    match cli.command {
        Command::TrainUnsup { out } => train_unsup(&ctx, &out)?,
        Command::TrainSup { out } => train_sup(&ctx, &out)?,
        Command::Eval { checkpoint, split } => eval(&ctx, &checkpoint, split)?,
        Command::SrTrain { out } => sr_train_cmd(&ctx, &out)?,
        Command::SrApply {
            checkpoint,
            input,
            output,
            factor,
        } => sr_apply(&checkpoint, &input, &output, factor as usize)?,
        Command::Gradcheck => return gradcheck(&ctx),
        Command::KernelBench { images, size } => kernel_bench(&ctx, images, size)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    // clap exits with status 2 on usage errors
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: gradient check failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
