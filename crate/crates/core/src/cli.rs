//! Command-line front end. [`run`] parses arguments, dispatches, and maps
//! failures to exit codes: 1 usage, 2 data, 3 fatal non-convergence.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use rayon::prelude::*;

use crate::attitude::{build_codebook, check_loss_gradients, AttitudeCodebook};
use crate::camera::PinholeCamera;
use crate::error::{Error, Result};
use crate::eval::{
    self, binned_report, evaluate, load_predictions, predictions_to_csv, DEFAULT_BIN_SIZE,
};
use crate::keyvalue::KeyValues;
use crate::predictor::{
    predict_all, solve_prediction, OraclePredictor, PipelineContext, Predictor, ToyPredictor,
};
use crate::rotations::{haar_angle_deviation, sample_uniform_rotations};
use crate::scene::{self, generate_dataset, read_dataset, write_dataset, GenConfig};
use crate::solver::SolverConfig;
use crate::toy::{
    self, check_training_gradient, dataset_examples, train_toy, ToyModel, TrainConfig,
};
use crate::wireframe::{load_model, mock_target, save_model, LengthDefinition, WireframeModel};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NONCONVERGENCE: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "spnkit",
    version,
    about = "Spacecraft pose toolkit: codebooks, datasets, solving, training, evaluation"
)]
struct Cli {
    /// Worker threads for per-record work (default: logical cores).
    #[arg(long, global = true, env = "SPNKIT_JOBS")]
    jobs: Option<usize>,

    /// Key-value file with defaults; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Log progress to standard error.
    #[arg(short, long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Attitude codebooks.
    #[command(subcommand)]
    Codebook(CodebookCmd),
    /// Target wireframe models.
    #[command(subcommand)]
    Model(ModelCmd),
    /// Synthetic datasets.
    #[command(subcommand)]
    Dataset(DatasetCmd),
    /// Solve for position from dataset boxes and a given attitude.
    Solve(SolveArgs),
    /// Train predictors.
    #[command(subcommand)]
    Train(TrainCmd),
    /// Predict boxes and attitudes, decode, and solve for position.
    Predict(PredictArgs),
    /// Per-record errors and range-binned summaries.
    Eval(EvalArgs),
    /// Gradient checks and the rotation-sampling distribution test.
    Selftest(SelftestArgs),
}

#[derive(Debug, Subcommand)]
enum CodebookCmd {
    /// Sample `m` uniform attitude classes.
    Gen {
        /// Number of classes.
        #[arg(long)]
        m: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
enum ModelCmd {
    /// Print vertex count, bounds and characteristic length.
    Info {
        /// Model file, or `mock` for the built-in target.
        path: String,
    },
    /// Write the built-in mock target.
    Mock {
        #[arg(long)]
        out: PathBuf,
        /// Uniform scale factor.
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
    },
}

#[derive(Debug, Subcommand)]
enum DatasetCmd {
    /// Sample labeled scenes.
    Gen(DatasetGenArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Test,
}

#[derive(Debug, Args)]
struct DatasetGenArgs {
    /// Number of scenes (default: 12000, or 3000 with `--split test`).
    #[arg(long)]
    count: Option<usize>,
    /// Preset record count.
    #[arg(long, value_enum)]
    split: Option<Split>,
    #[arg(long)]
    seed: Option<u64>,
    /// `speed` or a camera key-value file.
    #[arg(long)]
    camera: Option<String>,
    /// Wireframe file, or `mock`.
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    codebook: PathBuf,
    /// Label size.
    #[arg(long)]
    n: Option<usize>,
    /// Standard deviation of the box-center column, pixels.
    #[arg(long)]
    center_sigma_u: Option<f64>,
    /// Standard deviation of the box-center row, pixels.
    #[arg(long)]
    center_sigma_v: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SolveArgs {
    /// Camera override; defaults to the dataset's camera.
    #[arg(long)]
    camera: Option<String>,
    /// Wireframe file, or `mock`.
    #[arg(long)]
    model: Option<String>,
    /// Dataset directory supplying ids and boxes.
    #[arg(long)]
    labels: PathBuf,
    /// `truth`, or a predictions CSV whose quaternions are used.
    #[arg(long, default_value = "truth")]
    attitude: String,
    #[arg(long)]
    out: PathBuf,
    /// Exit with status 3 if any solve fails to converge.
    #[arg(long)]
    fail_on_nonconvergence: bool,
}

#[derive(Debug, Subcommand)]
enum TrainCmd {
    /// Linear model on silhouette occupancy features.
    Toy(TrainToyArgs),
}

#[derive(Debug, Args)]
struct TrainToyArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    codebook: PathBuf,
    /// Wireframe file, or `mock`.
    #[arg(long)]
    model: Option<String>,
    /// Feature grid size.
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// L2 strength.
    #[arg(long)]
    lambda: Option<f64>,
    /// Regression-loss weight.
    #[arg(long)]
    mu: Option<f64>,
    /// Initial learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Skip the finite-difference gradient check before training.
    #[arg(long)]
    no_self_test: bool,
    /// Also write the per-epoch loss trace as CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PredictorKind {
    Oracle,
    Toy,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    codebook: PathBuf,
    /// Wireframe file, or `mock`.
    #[arg(long)]
    model: Option<String>,
    #[arg(long, value_enum, default_value = "oracle")]
    predictor: PredictorKind,
    /// Trained toy model (with `--predictor toy`).
    #[arg(long)]
    toy_model: Option<PathBuf>,
    /// Decode size; defaults to the dataset's label size.
    #[arg(long)]
    n: Option<usize>,
    /// Oracle attitude noise, radians.
    #[arg(long)]
    sigma_att: Option<f64>,
    /// Oracle box-edge noise, pixels.
    #[arg(long)]
    sigma_box: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Exit with status 3 if any solve fails to converge.
    #[arg(long)]
    fail_on_nonconvergence: bool,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Dataset directory.
    #[arg(long)]
    truth: PathBuf,
    /// Predictions CSV.
    #[arg(long)]
    pred: PathBuf,
    /// Records per range bin.
    #[arg(long)]
    bin: Option<usize>,
    /// Output directory for `records.csv` and `binned.csv`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SelftestArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

/// Flag, then config file, then built-in default.
struct Settings {
    file: Option<KeyValues>,
}

impl Settings {
    fn load(path: Option<&Path>) -> Result<Self> {
        Ok(Self {
            file: path.map(KeyValues::load).transpose()?,
        })
    }

    fn opt<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>> {
        match (flag, &self.file) {
            (Some(v), _) => Ok(Some(v)),
            (None, Some(kv)) => kv.get(key),
            (None, None) => Ok(None),
        }
    }

    fn pick<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T> {
        Ok(self.opt(flag, key)?.unwrap_or(default))
    }
}

fn resolve_model(name_or_path: &str) -> Result<WireframeModel> {
    if name_or_path == "mock" {
        Ok(mock_target())
    } else {
        load_model(Path::new(name_or_path))
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)
            .map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Parses `args` (without the program name) and runs the command.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let argv =
        std::iter::once(std::ffi::OsString::from("spnkit")).chain(args.into_iter().map(Into::into));
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = cli.jobs {
        if j == 0 {
            eprintln!("error: --jobs must be at least 1");
            return EXIT_USAGE;
        }
        pool = pool.num_threads(j);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return EXIT_DATA;
        }
    };
    match pool.install(|| dispatch(&cli)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::NonConvergence(_) => EXIT_NONCONVERGENCE,
                _ => EXIT_DATA,
            }
        }
    }
}

fn dispatch(cli: &Cli) -> Result<i32> {
    let settings = Settings::load(cli.config.as_deref())?;
    match &cli.command {
        Command::Codebook(CodebookCmd::Gen { m, seed, out }) => {
            let m = settings.pick(*m, "m", 1000)?;
            let seed = settings.pick(*seed, "seed", 0)?;
            let book = build_codebook(m, seed)?;
            book.save(out)?;
            println!(
                "wrote {} classes (seed {}) to {}, sha256 {}",
                book.m(),
                seed,
                out.display(),
                book.digest()
            );
            Ok(EXIT_OK)
        }
        Command::Model(ModelCmd::Info { path }) => {
            let model = resolve_model(path)?;
            let (lo, hi) = model.bounds();
            let ext = model.extents();
            println!("name: {}", model.name());
            println!("vertices: {}", model.vertices().len());
            println!("edges: {}", model.edges().len());
            println!("bounds_min_m: {} {} {}", lo.x, lo.y, lo.z);
            println!("bounds_max_m: {} {} {}", hi.x, hi.y, hi.z);
            println!("extents_m: {} {} {}", ext.x, ext.y, ext.z);
            println!("characteristic_length_m: {}", model.characteristic_length());
            println!(
                "max_vertex_distance_m: {}",
                model.characteristic_length_with(LengthDefinition::MaxPairwise)
            );
            Ok(EXIT_OK)
        }
        Command::Model(ModelCmd::Mock { out, scale }) => {
            let model = if *scale == 1.0 {
                mock_target()
            } else {
                mock_target().scaled(*scale)?
            };
            save_model(&model, out)?;
            println!(
                "wrote {} ({} vertices) to {}",
                model.name(),
                model.vertices().len(),
                out.display()
            );
            Ok(EXIT_OK)
        }
        Command::Dataset(DatasetCmd::Gen(a)) => dataset_gen(&settings, a),
        Command::Solve(a) => solve(&settings, a),
        Command::Train(TrainCmd::Toy(a)) => train(&settings, a),
        Command::Predict(a) => predict(&settings, a),
        Command::Eval(a) => evaluate_cmd(&settings, a),
        Command::Selftest(a) => selftest(a.seed),
    }
}

fn dataset_gen(settings: &Settings, a: &DatasetGenArgs) -> Result<i32> {
    let default_count = match a.split {
        Some(Split::Test) => scene::TEST_COUNT,
        _ => scene::TRAIN_COUNT,
    };
    let cam =
        PinholeCamera::resolve(&settings.pick(a.camera.clone(), "camera", "speed".to_string())?)?;
    let model = resolve_model(&settings.pick(a.model.clone(), "model", "mock".to_string())?)?;
    let book = AttitudeCodebook::load(&a.codebook)?;
    let su = settings.opt(a.center_sigma_u, "center_sigma_u")?;
    let sv = settings.opt(a.center_sigma_v, "center_sigma_v")?;
    let center_sigma = match (su, sv) {
        (None, None) => None,
        (u, v) => Some((
            u.unwrap_or(2.5 * cam.nu as f64),
            v.unwrap_or(2.5 * cam.nv as f64),
        )),
    };
    let cfg = GenConfig {
        count: settings.pick(a.count, "count", default_count)?,
        seed: settings.pick(a.seed, "seed", 0)?,
        n: settings.pick(a.n, "n", 5)?,
        center_sigma,
        ..Default::default()
    };
    let ds = generate_dataset(&cam, &model, &book, &cfg)?;
    write_dataset(&ds, &a.out)?;
    println!("wrote {} to {}", scene::describe(&ds), a.out.display());
    Ok(EXIT_OK)
}

fn solver_outcome(preds: &[eval::Prediction], fatal: bool) -> i32 {
    let failed: Vec<u64> = preds
        .iter()
        .filter(|p| p.converged == Some(false))
        .map(|p| p.id)
        .collect();
    if failed.is_empty() {
        return EXIT_OK;
    }
    eprintln!(
        "warning: {} of {} solves did not converge (first id {})",
        failed.len(),
        preds.len(),
        failed[0]
    );
    if fatal {
        EXIT_NONCONVERGENCE
    } else {
        EXIT_OK
    }
}

fn solve(settings: &Settings, a: &SolveArgs) -> Result<i32> {
    let ds = read_dataset(&a.labels)?;
    let cam = match settings.opt(a.camera.clone(), "camera")? {
        Some(name) => PinholeCamera::resolve(&name)?,
        None => *ds.camera(),
    };
    let model = resolve_model(&settings.pick(a.model.clone(), "model", "mock".to_string())?)?;
    let attitudes: Option<HashMap<u64, crate::rotations::UnitQuaternion>> = if a.attitude == "truth"
    {
        None
    } else {
        Some(
            load_predictions(Path::new(&a.attitude))?
                .into_iter()
                .map(|p| (p.id, p.q))
                .collect(),
        )
    };
    let solver = SolverConfig::default();
    let preds = ds
        .records
        .par_iter()
        .map(|r| {
            let q = match &attitudes {
                None => r.pose.q,
                Some(map) => *map.get(&r.id).ok_or_else(|| {
                    Error::invalid(format!("id {} has no attitude in {}", r.id, a.attitude))
                })?,
            };
            solve_prediction(&cam, &model, &solver, r.id, q, r.bbox)
        })
        .collect::<Result<Vec<_>>>()?;
    write_text(&a.out, &predictions_to_csv(&preds)?)?;
    println!("solved {} scenes, wrote {}", preds.len(), a.out.display());
    Ok(solver_outcome(&preds, a.fail_on_nonconvergence))
}

fn train(settings: &Settings, a: &TrainToyArgs) -> Result<i32> {
    let ds = read_dataset(&a.dataset)?;
    let book = AttitudeCodebook::load(&a.codebook)?;
    let model = resolve_model(&settings.pick(a.model.clone(), "model", "mock".to_string())?)?;
    let defaults = TrainConfig::default();
    let cfg = TrainConfig {
        grid: settings.pick(a.grid, "grid", defaults.grid)?,
        epochs: settings.pick(a.epochs, "epochs", defaults.epochs)?,
        seed: settings.pick(a.seed, "seed", defaults.seed)?,
        lambda: settings.pick(a.lambda, "lambda", defaults.lambda)?,
        mu: settings.pick(a.mu, "mu", defaults.mu)?,
        initial_lr: settings.pick(a.lr, "lr", defaults.initial_lr)?,
        self_test: !a.no_self_test,
        ..defaults
    };
    let outcome = train_toy(&ds, &model, &book, &cfg)?;
    outcome.model.save(&a.out)?;
    let trace = toy::trace_to_csv(&outcome.trace);
    if let Some(path) = &a.trace {
        write_text(path, &trace)?;
    }
    print!("{trace}");
    println!(
        "wrote model ({} steps) to {}",
        outcome.model.steps,
        a.out.display()
    );
    Ok(EXIT_OK)
}

fn predict(settings: &Settings, a: &PredictArgs) -> Result<i32> {
    let ds = read_dataset(&a.dataset)?;
    let book = AttitudeCodebook::load(&a.codebook)?;
    ds.check_codebook(&book)?;
    let model = resolve_model(&settings.pick(a.model.clone(), "model", "mock".to_string())?)?;
    let n = settings.pick(a.n, "n", ds.manifest.n)?;
    let ctx = PipelineContext {
        camera: ds.camera(),
        target: &model,
        book: &book,
        n,
        solver: SolverConfig::default(),
    };
    let toy_model;
    let oracle;
    let predictor: &dyn Predictor = match a.predictor {
        PredictorKind::Oracle => {
            oracle = OraclePredictor {
                book: &book,
                n: ds.manifest.n,
                sigma_att: settings.pick(a.sigma_att, "sigma_att", 0.0)?,
                sigma_box: settings.pick(a.sigma_box, "sigma_box", 0.0)?,
                seed: settings.pick(a.seed, "seed", 0)?,
            };
            &oracle
        }
        PredictorKind::Toy => {
            let path = a
                .toy_model
                .as_ref()
                .ok_or_else(|| Error::invalid("--predictor toy needs --toy-model"))?;
            toy_model = ToyModel::load(path)?;
            if toy_model.m() != book.m() {
                return Err(Error::invalid(format!(
                    "toy model has {} classes, codebook has {}",
                    toy_model.m(),
                    book.m()
                )));
            }
            &ToyPredictor {
                model: &toy_model,
                camera: ds.camera(),
                target: &model,
            }
        }
    };
    let preds = predict_all(predictor, &ctx, &ds.records)?;
    write_text(&a.out, &predictions_to_csv(&preds)?)?;
    println!(
        "predicted {} scenes, wrote {}",
        preds.len(),
        a.out.display()
    );
    Ok(solver_outcome(&preds, a.fail_on_nonconvergence))
}

fn evaluate_cmd(settings: &Settings, a: &EvalArgs) -> Result<i32> {
    let ds = read_dataset(&a.truth)?;
    let preds = load_predictions(&a.pred)?;
    let bin = settings.pick(a.bin, "bin", DEFAULT_BIN_SIZE)?;
    let records = evaluate(&ds.records, &preds)?;
    let report = binned_report(&records, bin)?;
    write_text(&a.out.join("records.csv"), &eval::records_to_csv(&records))?;
    write_text(&a.out.join("binned.csv"), &eval::report_to_csv(&report))?;
    let n = records.len() as f64;
    let mean = |f: fn(&eval::EvalRecord) -> f64| records.iter().map(f).sum::<f64>() / n;
    println!(
        "{} records in {} bins: mean IoU {:.4}, mean E_T ({:.4}, {:.4}, {:.4}) m, mean E_R {:.3} deg",
        records.len(),
        report.bins.len(),
        mean(|r| r.iou),
        mean(|r| r.e_t.x),
        mean(|r| r.e_t.y),
        mean(|r| r.e_t.z),
        mean(|r| r.e_r.to_degrees())
    );
    info!("wrote {}", a.out.display());
    Ok(EXIT_OK)
}

fn selftest(seed: u64) -> Result<i32> {
    let mut ok = true;
    let mut report = |name: &str, pass: bool, detail: String| {
        println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        ok &= pass;
    };

    match check_loss_gradients(64, 3, 100, seed) {
        Ok(r) => report(
            "loss-gradients",
            true,
            format!(
                "{} checks, max rel error {:.2e}",
                r.checked, r.max_rel_error
            ),
        ),
        Err(e) => report("loss-gradients", false, e.to_string()),
    }

    let training = (|| -> Result<crate::attitude::GradientCheckReport> {
        let cam = PinholeCamera::speed();
        let target = mock_target();
        let book = build_codebook(64, seed)?;
        let ds = generate_dataset(
            &cam,
            &target,
            &book,
            &GenConfig {
                n: 3,
                ..GenConfig::new(5, seed)
            },
        )?;
        let examples = dataset_examples(&ds, &target, toy::DEFAULT_GRID)?;
        let model = ToyModel::random(64, toy::DEFAULT_GRID, 0.1, seed)?;
        let att = crate::attitude::AttitudeConfig {
            m: 64,
            n: 3,
            ..Default::default()
        };
        check_training_gradient(&model, &examples, &att, 200, seed)
    })();
    match training {
        Ok(r) => report(
            "training-gradient",
            true,
            format!(
                "{} probes, max rel error {:.2e}",
                r.checked, r.max_rel_error
            ),
        ),
        Err(e) => report("training-gradient", false, e.to_string()),
    }

    let dev = haar_angle_deviation(&sample_uniform_rotations(10_000, seed)?);
    report(
        "haar-angle-cdf",
        dev < 0.02,
        format!("sup deviation {dev:.4} over 10000 samples (limit 0.02)"),
    );

    Ok(if ok { EXIT_OK } else { EXIT_DATA })
}
