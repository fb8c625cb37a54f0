//! The `semivae` command line.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data or I/O
//! error, 3 non-finite objective.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::data::{
    binarize, default_data_dir, load_checkpoint, load_mnist, mnist_ssl, save_checkpoint,
    Checkpoint, SavedModel, SslDataset, MNIST_POOL,
};
use crate::error::{Error, Result};
use crate::eval::{knn_predict, logreg_predict, logreg_train, EvalReport, LogregConfig};
use crate::image::image_grid_pgm;
use crate::models::{analogy, generate_batch, m1_features, m2_classify, M1Model, Observation};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::train::{
    history_header, history_line, stack_features_then_train, train_m1_with, train_m2_with,
    AlphaBase, M1Arch, M2Arch, OptimizerKind, TrainConfig,
};

#[derive(Debug, Parser)]
#[command(
    name = "semivae",
    version,
    about = "Semi-supervised learning with deep generative models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the latent-feature model M1 on the training pool.
    TrainM1(TrainM1Args),
    /// Train the generative semi-supervised model M2, optionally on M1 features.
    TrainM2(TrainM2Args),
    /// Classify the test set and print an evaluation report.
    Eval(EvalArgs),
    /// Decode a lattice of 2-D latent codes under one class.
    GenerateGrid(GridArgs),
    /// Decode test-image styles under every class.
    Analogies(AnalogyArgs),
}

#[derive(Debug, Args)]
struct DataArgs {
    /// MNIST directory (default: $SEMIVAE_DATA_DIR, else data/mnist).
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Number of labelled training points, balanced over classes.
    #[arg(long, default_value_t = 100)]
    labels: usize,
    /// Training pool: the first POOL standard training images.
    #[arg(long, default_value_t = MNIST_POOL)]
    pool: usize,
    /// Seed of the labelled/unlabelled split.
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
}

#[derive(Debug, Args)]
struct OptimArgs {
    #[arg(long, value_enum, default_value_t = OptArg::Adagrad)]
    optimizer: OptArg,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, default_value_t = 0.1)]
    first_moment_decay: f64,
    #[arg(long, default_value_t = 0.001)]
    second_moment_decay: f64,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Minibatch size (labelled minibatch for M2).
    #[arg(long, default_value_t = 100)]
    batch: usize,
    /// Feed real-valued pixels instead of resampled binary ones.
    #[arg(long)]
    no_binarize: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OptArg {
    Adagrad,
    RmspropVariant,
}

#[derive(Debug, Args)]
struct TrainM1Args {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    optim: OptimArgs,
    #[arg(long, default_value_t = 50)]
    z_dim: usize,
    /// Hidden layer widths, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [600, 600])]
    hidden: Vec<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainM2Args {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    optim: OptimArgs,
    #[arg(long, default_value_t = 0.1)]
    alpha_scale: f64,
    /// Which N multiplies the alpha scale.
    #[arg(long, value_enum, default_value_t = AlphaArg::Total)]
    alpha_base: AlphaArg,
    #[arg(long, default_value_t = 50)]
    z_dim: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [500])]
    hidden: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    unlabeled_batch: usize,
    /// Sample one label per unlabelled point instead of summing over classes.
    #[arg(long)]
    sample_labels: bool,
    #[arg(long)]
    no_weight_decay: bool,
    /// Train on the posterior means of this M1 (or stacked) checkpoint.
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AlphaArg {
    Total,
    Labeled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ClassifierArg {
    M2,
    Logreg,
    Knn,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Model checkpoint. logreg/knn without one run on raw pixels.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ClassifierArg::M2)]
    classifier: ClassifierArg,
    #[arg(long, default_value_t = 1)]
    k: usize,
    #[arg(long, default_value_t = 1e-4)]
    l2: f64,
    /// Gradient-descent iterations for logreg.
    #[arg(long, default_value_t = 500)]
    logreg_iters: usize,
    /// Binarize test pixels (seeded by --seed) instead of using intensities.
    #[arg(long)]
    binarize_test: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// MNIST directory (default: $SEMIVAE_DATA_DIR, else data/mnist).
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Labelled set when there is no checkpoint (otherwise taken from it).
    #[arg(long, default_value_t = 100)]
    labels: usize,
    #[arg(long, default_value_t = MNIST_POOL)]
    pool: usize,
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
    /// Also write the report to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GridArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long = "class")]
    class: usize,
    #[arg(long, num_args = 2, allow_negative_numbers = true, value_names = ["LO", "HI"], default_values_t = [-5.0, 5.0])]
    range: Vec<f64>,
    #[arg(long, default_value_t = 15)]
    steps: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct AnalogyArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, default_value_t = 10)]
    n_test: usize,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Normal output goes to `out`, diagnostics to `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{}", text);
                    0
                }
                _ => {
                    let _ = write!(err, "{}", text);
                    1
                }
            };
        }
    };
    let result = match cli.command {
        Command::TrainM1(a) => train_m1_cmd(a, out),
        Command::TrainM2(a) => train_m2_cmd(a, out),
        Command::Eval(a) => eval_cmd(a, out),
        Command::GenerateGrid(a) => grid_cmd(a, out),
        Command::Analogies(a) => analogy_cmd(a, out),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {}", e);
            e.exit_code()
        }
    }
}

fn data_dir(flag: &Option<PathBuf>) -> PathBuf {
    flag.clone().unwrap_or_else(default_data_dir)
}

fn load_split(dir: &Path, labels: usize, pool: usize, split_seed: u64) -> Result<SslDataset> {
    let mnist = load_mnist(dir)?;
    mnist_ssl(&mnist, labels, pool, &mut Rng::new(split_seed))
}

fn train_config(o: &OptimArgs, default_lr: f64) -> TrainConfig {
    TrainConfig {
        learning_rate: o.lr.unwrap_or(default_lr),
        first_moment_decay: o.first_moment_decay,
        second_moment_decay: o.second_moment_decay,
        minibatch_size: o.batch,
        epochs: o.epochs,
        seed: o.seed,
        optimizer: match o.optimizer {
            OptArg::Adagrad => OptimizerKind::AdaGrad,
            OptArg::RmspropVariant => OptimizerKind::RmspropVariant,
        },
        binarize: !o.no_binarize,
        ..TrainConfig::default()
    }
}

/// Default learning rates per optimizer: the RMSProp variant's published
/// constant, and a larger AdaGrad rate (its steps shrink as 1/√t).
fn default_lr(o: &OptimArgs) -> f64 {
    match o.optimizer {
        OptArg::Adagrad => 0.01,
        OptArg::RmspropVariant => 3e-4,
    }
}

fn echo_data(ck: &mut Checkpoint, d: &DataArgs) {
    ck.config.insert("labels".into(), d.labels.to_string());
    ck.config.insert("pool".into(), d.pool.to_string());
    ck.config
        .insert("split_seed".into(), d.split_seed.to_string());
}

fn echo_train(ck: &mut Checkpoint, cfg: &TrainConfig) {
    for (k, v) in cfg.echo() {
        ck.config.insert(k, v);
    }
}

fn print_history_header(out: &mut dyn Write) {
    let _ = writeln!(out, "{}", history_header());
}

fn train_m1_cmd(a: TrainM1Args, out: &mut dyn Write) -> Result<()> {
    let cfg = train_config(&a.optim, default_lr(&a.optim));
    cfg.validate()?;
    let data = load_split(
        &data_dir(&a.data.data_dir),
        a.data.labels,
        a.data.pool,
        a.data.split_seed,
    )?;
    let arch = M1Arch {
        hidden: a.hidden.clone(),
        d_z: a.z_dim,
    };
    print_history_header(out);
    let t = train_m1_with(&data.all_train_x(), &arch, &cfg, |r, _| {
        let _ = writeln!(out, "{}", history_line(r));
    })?;
    let mut ck = Checkpoint::new(SavedModel::M1(t.model));
    ck.optimizer = Some(t.optimizer);
    ck.rng = Some(t.rng.state());
    echo_data(&mut ck, &a.data);
    echo_train(&mut ck, &cfg);
    save_checkpoint(&a.out, &ck)?;
    let _ = writeln!(out, "saved {}", a.out.display());
    Ok(())
}

fn m1_of(ck: &Checkpoint) -> Result<M1Model> {
    match &ck.model {
        SavedModel::M1(m) => Ok(m.clone()),
        SavedModel::Stack(s) => Ok(s.m1.clone()),
        SavedModel::M2(_) => Err(Error::Config("feature checkpoint holds no M1 model".into())),
    }
}

fn train_m2_cmd(a: TrainM2Args, out: &mut dyn Write) -> Result<()> {
    let mut cfg = train_config(&a.optim, default_lr(&a.optim));
    cfg.alpha_scale = a.alpha_scale;
    cfg.alpha_base = match a.alpha_base {
        AlphaArg::Total => AlphaBase::Total,
        AlphaArg::Labeled => AlphaBase::Labeled,
    };
    cfg.unlabeled_minibatch_size = a.unlabeled_batch;
    cfg.sample_labels = a.sample_labels;
    cfg.weight_decay = !a.no_weight_decay;
    cfg.validate()?;
    let data = load_split(
        &data_dir(&a.data.data_dir),
        a.data.labels,
        a.data.pool,
        a.data.split_seed,
    )?;
    let arch = M2Arch {
        hidden: a.hidden.clone(),
        d_z: a.z_dim,
        obs: Observation::Bernoulli,
    };
    print_history_header(out);
    let mut ck = match &a.features {
        None => {
            let t = train_m2_with(&data, &arch, &cfg, |r, _| {
                let _ = writeln!(out, "{}", history_line(r));
            })?;
            let mut ck = Checkpoint::new(SavedModel::M2(t.model));
            ck.optimizer = Some(t.optimizer);
            ck.rng = Some(t.rng.state());
            ck
        }
        Some(path) => {
            let m1 = m1_of(&load_checkpoint(path)?)?;
            let (t, _) = stack_features_then_train(&m1, &data, &arch, &cfg)?;
            for r in &t.history {
                let _ = writeln!(out, "{}", history_line(r));
            }
            let mut ck = Checkpoint::new(SavedModel::Stack(t.model));
            ck.optimizer = Some(t.optimizer);
            ck.rng = Some(t.rng.state());
            ck
        }
    };
    echo_data(&mut ck, &a.data);
    echo_train(&mut ck, &cfg);
    save_checkpoint(&a.out, &ck)?;
    let _ = writeln!(out, "saved {}", a.out.display());
    Ok(())
}

fn config_usize(ck: &Checkpoint, key: &str) -> Result<usize> {
    ck.config
        .get(key)
        .ok_or_else(|| Error::CheckpointMissing(format!("config.{}", key)))?
        .parse()
        .map_err(|_| Error::CheckpointCorrupt(format!("config.{} is not a count", key)))
}

fn eval_cmd(a: EvalArgs, out: &mut dyn Write) -> Result<()> {
    let ck = a.ckpt.as_ref().map(load_checkpoint).transpose()?;
    let (labels, pool, split_seed) = match &ck {
        Some(c) => (
            config_usize(c, "labels")?,
            config_usize(c, "pool")?,
            config_usize(c, "split_seed")? as u64,
        ),
        None => (a.labels, a.pool, a.split_seed),
    };
    let data = load_split(&data_dir(&a.data_dir), labels, pool, split_seed)?;
    let test_x = if a.binarize_test {
        binarize(&data.test_x, &mut Rng::new(a.seed))?
    } else {
        data.test_x.clone()
    };
    let preds = match a.classifier {
        ClassifierArg::M2 => match ck.as_ref().map(|c| &c.model) {
            Some(SavedModel::M2(m)) => m2_classify(m, &test_x)?.argmax(),
            Some(SavedModel::Stack(s)) => s.classify(&test_x)?.argmax(),
            Some(SavedModel::M1(_)) => {
                return Err(Error::Config(
                    "an M1 checkpoint has no classifier; use logreg or knn".into(),
                ))
            }
            None => return Err(Error::Config("--classifier m2 needs --ckpt".into())),
        },
        ClassifierArg::Logreg | ClassifierArg::Knn => {
            // M1 features when the checkpoint has an M1, raw pixels otherwise
            let m1 = match ck.as_ref().map(|c| &c.model) {
                Some(SavedModel::M1(m)) => Some(m),
                Some(SavedModel::Stack(s)) => Some(&s.m1),
                _ => None,
            };
            let feats = |x: &Tensor| -> Result<Tensor> {
                match m1 {
                    Some(m) => m1_features(m, x),
                    None => Ok(x.clone()),
                }
            };
            let (train_f, test_f) = (feats(&data.labeled_x)?, feats(&test_x)?);
            if a.classifier == ClassifierArg::Logreg {
                let cfg = LogregConfig {
                    l2: a.l2,
                    iterations: a.logreg_iters,
                    ..LogregConfig::default()
                };
                logreg_predict(
                    &logreg_train(&train_f, &data.labeled_y, data.n_classes, &cfg)?,
                    &test_f,
                )?
            } else {
                knn_predict(&train_f, &data.labeled_y, &test_f, a.k)?
            }
        }
    };
    let classifier = match a.classifier {
        ClassifierArg::M2 => "m2",
        ClassifierArg::Logreg => "logreg",
        ClassifierArg::Knn => "knn",
    };
    let mut echo = vec![
        ("classifier".to_string(), classifier.to_string()),
        (
            "model".to_string(),
            ck.as_ref().map_or("none", |c| c.model.kind()).to_string(),
        ),
        ("labels".to_string(), labels.to_string()),
        ("pool".to_string(), pool.to_string()),
        ("split_seed".to_string(), split_seed.to_string()),
        ("binarize_test".to_string(), a.binarize_test.to_string()),
    ];
    match a.classifier {
        ClassifierArg::Knn => echo.push(("k".into(), a.k.to_string())),
        ClassifierArg::Logreg => {
            echo.push(("l2".into(), format!("{:e}", a.l2)));
            echo.push(("logreg_iters".into(), a.logreg_iters.to_string()));
        }
        ClassifierArg::M2 => {}
    }
    let report = EvalReport::new(&preds, &data.test_y, data.n_classes, a.seed, echo)?;
    let text = report.to_text();
    let _ = write!(out, "{}", text);
    if let Some(path) = &a.out {
        std::fs::write(path, &text).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

fn image_m2(ck: &Checkpoint) -> Result<&crate::models::M2Model> {
    match &ck.model {
        SavedModel::M2(m) if m.obs == Observation::Bernoulli => Ok(m),
        _ => Err(Error::Config(
            "image generation needs an M2 checkpoint trained on pixels".into(),
        )),
    }
}

fn side_of(d: usize) -> Result<usize> {
    let s = (d as f64).sqrt().round() as usize;
    if s * s == d {
        Ok(s)
    } else {
        Err(Error::dim(format!(
            "{} pixels do not form a square image",
            d
        )))
    }
}

/// Tile `(r, c)` decodes `z = (lo + c·Δ, lo + r·Δ)` with `Δ = (hi − lo)/(steps − 1)`.
fn grid_cmd(a: GridArgs, out: &mut dyn Write) -> Result<()> {
    let ck = load_checkpoint(&a.ckpt)?;
    let m = image_m2(&ck)?;
    if m.d_z != 2 {
        return Err(Error::Config(format!(
            "generate-grid needs d_z = 2, checkpoint has {}",
            m.d_z
        )));
    }
    if a.steps < 2 {
        return Err(Error::Config("--steps must be at least 2".into()));
    }
    let (lo, hi) = (a.range[0], a.range[1]);
    let delta = (hi - lo) / (a.steps - 1) as f64;
    let z: Vec<f64> = (0..a.steps)
        .flat_map(|r| {
            (0..a.steps).flat_map(move |c| [lo + c as f64 * delta, lo + r as f64 * delta])
        })
        .collect();
    let z = Tensor::new(vec![a.steps * a.steps, 2], z)?;
    let img = generate_batch(m, a.class, &z)?;
    let d = img.cols();
    let tiles = img.reshape(vec![a.steps, a.steps, d])?;
    image_grid_pgm(&tiles, side_of(d)?, &a.out)?;
    let _ = writeln!(
        out,
        "wrote {} ({}x{} tiles)",
        a.out.display(),
        a.steps,
        a.steps
    );
    Ok(())
}

/// Row `i`: test image `i`, then its inferred style decoded under each class.
fn analogy_cmd(a: AnalogyArgs, out: &mut dyn Write) -> Result<()> {
    let ck = load_checkpoint(&a.ckpt)?;
    let m = image_m2(&ck)?;
    let mnist = load_mnist(data_dir(&a.data_dir))?;
    if a.n_test == 0 || a.n_test > mnist.test_x.rows() {
        return Err(Error::Config(format!(
            "--n-test must lie in 1..={}",
            mnist.test_x.rows()
        )));
    }
    let idx: Vec<usize> = (0..a.n_test).collect();
    let x = mnist.test_x.select_rows(&idx);
    let decoded = analogy(m, &x)?;
    let (l, d) = (m.n_classes, x.cols());
    let mut data = Vec::with_capacity(a.n_test * (l + 1) * d);
    for i in 0..a.n_test {
        data.extend_from_slice(x.row(i));
        for y in 0..l {
            data.extend_from_slice(decoded.row(i * l + y));
        }
    }
    let tiles = Tensor::new(vec![a.n_test, l + 1, d], data)?;
    image_grid_pgm(&tiles, side_of(d)?, &a.out)?;
    let _ = writeln!(
        out,
        "wrote {} ({} rows, {} columns)",
        a.out.display(),
        a.n_test,
        l + 1
    );
    Ok(())
}
