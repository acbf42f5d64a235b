//! Command-line front end: `train`, `eval`, `synth` and `gradcheck`.
//!
//! Exit codes: 0 success, 1 file or format errors, 2 invalid parameters,
//! 3 numerical failures (including gradient-check failures).

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::io::{load_dataset, read_mapping, write_dataset, write_matrix, write_text};
use crate::metrics::MeasureKind;
use crate::optimizer::{BetaRule, OptimOptions};
use crate::pipeline::{
    build_problem, fit, gradient_check_with, nn_search, synth_dataset, LabeledDataset, SynthParams,
    TrainConfig,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Environment variable holding the worker-thread count.
pub const THREADS_VAR: &str = "GGDR_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "ggdr",
    version,
    about = "Discriminative dimensionality reduction between Grassmann manifolds"
)]
pub struct Cli {
    /// Log more (repeat for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Learn a map W from a labeled dataset.
    Train(TrainArgs),
    /// Nearest-neighbor accuracy, with or without a learned map.
    Eval(EvalArgs),
    /// Write a synthetic dataset.
    Synth(SynthArgs),
    /// Compare analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Measure: p, fs, bc, pk or bck.
    #[arg(long)]
    pub metric: Option<MeasureKind>,
    /// Reduced dimension d.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Subspace order n (needed for raw samples).
    #[arg(long)]
    pub order: Option<usize>,
    /// Within-class neighbors (default: smallest class size minus one).
    #[arg(long)]
    pub kw: Option<usize>,
    /// Between-class neighbors.
    #[arg(long)]
    pub kb: Option<usize>,
    /// Seed for the random initial map (with `--init random`).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Initial map: identity or random.
    #[arg(long)]
    pub init: Option<String>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Relative cost change stopping tolerance.
    #[arg(long)]
    pub rel_tol: Option<f64>,
    /// Riemannian gradient norm stopping tolerance.
    #[arg(long)]
    pub grad_tol: Option<f64>,
    /// Conjugate direction rule: pr+, fr or sd.
    #[arg(long)]
    pub beta: Option<String>,
    /// Output file for W.
    #[arg(long)]
    pub out: PathBuf,
    /// Output file for the convergence trace.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Output file for the affinity graph.
    #[arg(long)]
    pub graph: Option<PathBuf>,
    /// `key = value` file; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Training (gallery) dataset directory.
    #[arg(long)]
    pub train: PathBuf,
    /// Test (probe) dataset directory.
    #[arg(long)]
    pub test: PathBuf,
    /// Learned map; without it the original manifold is used.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub metric: Option<MeasureKind>,
    #[arg(long)]
    pub order: Option<usize>,
    /// Per-sample predictions CSV.
    #[arg(long)]
    pub pred: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 8)]
    pub classes: usize,
    #[arg(long, default_value_t = 10)]
    pub per_class: usize,
    #[arg(long, default_value_t = 37)]
    pub ambient: usize,
    #[arg(long, default_value_t = 6)]
    pub order: usize,
    /// Within-class perturbation scale.
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Confine class centers to a random subspace of this dimension.
    #[arg(long)]
    pub signal_dim: Option<usize>,
    /// Put most within-class variation in a shared subspace of this dimension.
    #[arg(long)]
    pub nuisance_dim: Option<usize>,
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Keep only the first K samples of each class in `--out` and write the rest here.
    #[arg(long, requires = "train_per_class")]
    pub test_out: Option<PathBuf>,
    #[arg(long, requires = "test_out")]
    pub train_per_class: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// A measure name or `all`.
    #[arg(long, default_value = "all")]
    pub metric: String,
    #[arg(long, default_value_t = 50)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 12)]
    pub ambient: usize,
    #[arg(long, default_value_t = 6)]
    pub dim: usize,
    #[arg(long, default_value_t = 2)]
    pub order: usize,
    /// Perturb the analytic gradient before comparing (exercises the failure path).
    #[arg(long, hide = true)]
    pub corrupt_gradient: bool,
}

/// Optional settings read from a `--config` file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub metric: Option<String>,
    pub dim: Option<usize>,
    pub order: Option<usize>,
    pub kw: Option<usize>,
    pub kb: Option<usize>,
    pub seed: Option<u64>,
    pub init: Option<String>,
    pub max_iter: Option<usize>,
    pub rel_tol: Option<f64>,
    pub grad_tol: Option<f64>,
    pub beta: Option<String>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            message: e.to_string().lines().collect::<Vec<_>>().join(" "),
        })
    }

    fn load_opt(path: Option<&PathBuf>) -> Result<Self> {
        path.map_or(Ok(Self::default()), |p| Self::load(p))
    }

    fn metric(&self) -> Result<Option<MeasureKind>> {
        self.metric.as_deref().map(parse_metric).transpose()
    }
}

fn parse_metric(s: &str) -> Result<MeasureKind> {
    s.parse::<MeasureKind>()
        .map_err(|_| Error::InvalidOptions(format!("unknown metric {s:?}")))
}

fn parse_beta(s: &str) -> Result<BetaRule> {
    match s {
        "pr+" | "prp" | "polak-ribiere" => Ok(BetaRule::PolakRibierePlus),
        "fr" | "fletcher-reeves" => Ok(BetaRule::FletcherReeves),
        "sd" | "steepest" => Ok(BetaRule::SteepestDescent),
        _ => Err(Error::InvalidOptions(format!("unknown beta rule {s:?}"))),
    }
}

fn beta_name(b: BetaRule) -> &'static str {
    match b {
        BetaRule::PolakRibierePlus => "pr+",
        BetaRule::FletcherReeves => "fr",
        BetaRule::SteepestDescent => "sd",
    }
}

/// Parses `args` (including the program name) and runs the command; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                EXIT_INVALID
            } else {
                EXIT_OK
            };
        }
    };
    init_logging(cli.verbose);
    configure_threads();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_io() {
        EXIT_IO
    } else if e.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_INVALID
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .try_init();
}

fn configure_threads() {
    let Ok(v) = std::env::var(THREADS_VAR) else {
        return;
    };
    match v.trim().parse::<usize>() {
        Ok(n) if n > 0 => {
            if rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .is_err()
            {
                log::debug!("thread pool already initialized");
            }
        }
        _ => log::warn!("ignoring {THREADS_VAR}={v:?}: expected a positive integer"),
    }
}

fn dispatch(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Synth(a) => cmd_synth(&a),
        Command::Gradcheck(a) => cmd_gradcheck(&a),
    }
}

/// Effective training parameters after merging flags over the config file.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    pub config: TrainConfig,
    pub order: Option<usize>,
    pub seed: u64,
}

pub fn train_settings(a: &TrainArgs) -> Result<TrainSettings> {
    let f = FileConfig::load_opt(a.config.as_ref())?;
    let kind = match a.metric {
        Some(k) => k,
        None => f.metric()?.unwrap_or(MeasureKind::ProjectionSq),
    };
    let dim = a
        .dim
        .or(f.dim)
        .ok_or_else(|| Error::InvalidOptions("--dim is required".into()))?;
    let seed = a.seed.or(f.seed).unwrap_or(0);
    let init = a
        .init
        .clone()
        .or(f.init.clone())
        .unwrap_or_else(|| "identity".into());
    let init_seed = match init.as_str() {
        "identity" => None,
        "random" => Some(seed),
        other => return Err(Error::InvalidOptions(format!("unknown init {other:?}"))),
    };
    let mut optim = OptimOptions::default();
    if let Some(v) = a.max_iter.or(f.max_iter) {
        optim.max_iter = v;
    }
    if let Some(v) = a.rel_tol.or(f.rel_tol) {
        optim.rel_cost_tol = v;
    }
    if let Some(v) = a.grad_tol.or(f.grad_tol) {
        optim.grad_norm_tol = v;
    }
    if let Some(b) = a.beta.as_deref().or(f.beta.as_deref()) {
        optim.beta_rule = parse_beta(b)?;
    }
    optim.validate()?;
    let mut config = TrainConfig::new(kind, dim);
    config.kw = a.kw.or(f.kw);
    config.kb = a.kb.or(f.kb).unwrap_or(1);
    config.init_seed = init_seed;
    config.optim = optim;
    Ok(TrainSettings {
        config,
        order: a.order.or(f.order),
        seed,
    })
}

fn check_dims(ds: &LabeledDataset, dim: usize) -> Result<()> {
    let (big, n) = (ds.ambient_dim().unwrap_or(0), ds.order().unwrap_or(0));
    if dim < n || dim > big {
        return Err(Error::InvalidOptions(format!(
            "--dim must satisfy n <= d <= D (n = {n}, D = {big}), got {dim}"
        )));
    }
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> Result<i32> {
    let s = train_settings(a)?;
    let cfg = &s.config;
    if let Some(n) = s.order {
        if cfg.target_dim < n {
            return Err(Error::InvalidOptions(format!(
                "--dim {} is smaller than --order {n}",
                cfg.target_dim
            )));
        }
    }
    let ds = load_dataset(&a.data, s.order)?;
    check_dims(&ds, cfg.target_dim)?;
    let problem = build_problem(&ds, cfg)?;
    if let Some(path) = &a.graph {
        write_text(path, &problem.graph().to_csv())?;
    }
    let res = fit(&problem, cfg)?;
    write_matrix(&a.out, res.w.matrix())?;
    if let Some(path) = &a.trace {
        let mut text = String::new();
        let kw = problem.graph().kw();
        let init = cfg.init_seed.map_or("identity", |_| "random");
        let o = &cfg.optim;
        for (k, v) in [
            ("data", a.data.display().to_string()),
            ("metric", cfg.kind.short_name().to_string()),
            ("ambient", problem.ambient_dim().to_string()),
            ("order", problem.order().to_string()),
            ("dim", cfg.target_dim.to_string()),
            ("kw", kw.to_string()),
            ("kb", cfg.kb.to_string()),
            ("init", init.to_string()),
            ("seed", s.seed.to_string()),
            ("max_iter", o.max_iter.to_string()),
            ("rel_tol", format!("{:e}", o.rel_cost_tol)),
            ("grad_tol", format!("{:e}", o.grad_norm_tol)),
            ("beta", beta_name(o.beta_rule).to_string()),
            ("termination", format!("{:?}", res.termination)),
        ] {
            let _ = writeln!(text, "# {k}={v}");
        }
        text.push_str(&res.trace.to_csv());
        write_text(path, &text)?;
    }
    println!(
        "final_cost={:.16e} iterations={} termination={:?}",
        res.final_cost(),
        res.trace.iterations(),
        res.termination
    );
    Ok(EXIT_OK)
}

fn cmd_eval(a: &EvalArgs) -> Result<i32> {
    let f = FileConfig::load_opt(a.config.as_ref())?;
    let kind = match a.metric {
        Some(k) => k,
        None => f.metric()?.unwrap_or(MeasureKind::ProjectionSq),
    };
    let order = a.order.or(f.order);
    let train = load_dataset(&a.train, order)?;
    let test = load_dataset(&a.test, order)?;
    let (train, test) = match &a.model {
        Some(path) => {
            let w = read_mapping(path)?;
            if Some(w.ambient_dim()) != train.ambient_dim() {
                return Err(Error::DimensionMismatch(format!(
                    "{}: map has {} rows, data live in dimension {}",
                    path.display(),
                    w.ambient_dim(),
                    train.ambient_dim().unwrap_or(0)
                )));
            }
            check_dims(&train, w.reduced_dim())?;
            (train.reduced(&w)?, test.reduced(&w)?)
        }
        None => (train, test),
    };
    if test.is_empty() {
        return Err(Error::InvalidOptions("test set is empty".into()));
    }
    let nn = nn_search(&train, test.samples(), kind)?;
    let mut correct = 0;
    let mut pred = String::from("id,true,pred,nn_distance\n");
    for (i, n) in nn.iter().enumerate() {
        let truth = &test.class_names()[test.labels()[i]];
        let guess = &train.class_names()[n.label];
        if truth == guess {
            correct += 1;
        }
        let _ = writeln!(
            pred,
            "{},{truth},{guess},{:.16e}",
            test.provenance()[i],
            n.value
        );
    }
    if let Some(path) = &a.pred {
        write_text(path, &pred)?;
    }
    println!("accuracy={}", correct as f64 / test.len() as f64);
    Ok(EXIT_OK)
}

fn cmd_synth(a: &SynthArgs) -> Result<i32> {
    let params = SynthParams {
        classes: a.classes,
        samples_per_class: a.per_class,
        ambient: a.ambient,
        order: a.order,
        within_noise: a.noise,
        seed: a.seed,
        signal_dim: a.signal_dim,
        nuisance_dim: a.nuisance_dim,
    };
    let ds = synth_dataset(&params)?;
    match (&a.test_out, a.train_per_class) {
        (Some(test_dir), Some(k)) => {
            if k == 0 || k >= a.per_class {
                return Err(Error::InvalidOptions(format!(
                    "--train-per-class must lie in 1..{}, got {k}",
                    a.per_class
                )));
            }
            let (train, test) = ds.split_per_class(k);
            write_dataset(&a.out, &train)?;
            write_dataset(test_dir, &test)?;
        }
        _ => write_dataset(&a.out, &ds)?,
    }
    println!("samples={} classes={}", ds.len(), a.classes);
    Ok(EXIT_OK)
}

fn cmd_gradcheck(a: &GradcheckArgs) -> Result<i32> {
    let kinds: Vec<MeasureKind> = if a.metric == "all" {
        MeasureKind::ALL.to_vec()
    } else {
        vec![parse_metric(&a.metric)?]
    };
    let corrupt = a.corrupt_gradient;
    let mut failed = false;
    for kind in kinds {
        let r = gradient_check_with(kind, a.ambient, a.dim, a.order, a.trials, a.seed, |g| {
            if corrupt {
                g * 1.01
            } else {
                g
            }
        })?;
        println!(
            "metric={} trials={} max_rel_error={:.3e} failures={} guarded={}",
            kind.short_name(),
            r.trials,
            r.max_rel_error,
            r.failures,
            r.guarded
        );
        failed |= r.failures > 0;
    }
    Ok(if failed { EXIT_NUMERICAL } else { EXIT_OK })
}
