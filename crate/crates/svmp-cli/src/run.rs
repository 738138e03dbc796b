//! Single-run execution and its on-disk artifacts.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};

use svmp_core::data::{self, SparseRatings};
use svmp_core::optimizer::{self, Algorithm, RunConfig, RunLog, ScheduleParams, UpdateOption};

pub const DEFAULT_SYNTHETIC: &str = "200,300,5,0.08,1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AlgorithmArg {
    /// Exact coordinate ascent
    Full,
    /// Per-factor child subsampling (C children per update)
    Alg1,
    /// One global rating batch per iteration (C-global ratings)
    Alg2,
}

impl AlgorithmArg {
    pub fn to_algorithm(self) -> Algorithm {
        match self {
            AlgorithmArg::Full => Algorithm::FullVb,
            AlgorithmArg::Alg1 => Algorithm::PerFactor,
            AlgorithmArg::Alg2 => Algorithm::GlobalBatch,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AlgorithmArg::Full => "full",
            AlgorithmArg::Alg1 => "alg1",
            AlgorithmArg::Alg2 => "alg2",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum OptionArg {
    /// Blend each factor immediately during the sweep
    A,
    /// Blend all factors at once at the end of the iteration
    B,
}

impl OptionArg {
    pub fn to_option(self) -> UpdateOption {
        match self {
            OptionArg::A => UpdateOption::A,
            OptionArg::B => UpdateOption::B,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            OptionArg::A => "a",
            OptionArg::B => "b",
        }
    }
}

/// Flags shared by `run` and `grid`.
#[derive(Args, Clone, Debug)]
pub struct BaseArgs {
    /// Ratings file (user<TAB>item<TAB>rating per line, `#` comments)
    #[arg(long, value_name = "PATH", conflicts_with = "synthetic")]
    pub data: Option<PathBuf>,

    /// Synthetic dataset spec; used when --data is absent
    #[arg(long, value_name = "M,N,K,DENSITY,NOISE_SD")]
    pub synthetic: Option<String>,

    /// Seed for synthetic data generation (kept apart from --seed so grids
    /// share one dataset while varying run randomness)
    #[arg(long = "data-seed", default_value_t = 1)]
    pub data_seed: u64,

    #[arg(long, value_enum, default_value_t = AlgorithmArg::Alg1)]
    pub algorithm: AlgorithmArg,

    #[arg(long, value_enum, default_value_t = OptionArg::A)]
    pub option: OptionArg,

    /// Children sampled per factor update (alg1)
    #[arg(long = "C", default_value_t = 1, value_name = "N")]
    pub c: usize,

    /// Ratings per global batch (alg2)
    #[arg(long = "C-global", default_value_t = 100, value_name = "N")]
    pub c_global: usize,

    /// Trait dimension of the approximation
    #[arg(long = "K", default_value_t = 5, value_name = "N")]
    pub k: usize,

    /// Forgetting rate of the step schedule, in (1/2, 1]
    #[arg(long, default_value_t = 0.6)]
    pub kappa: f64,

    /// Schedule delay, >= 0
    #[arg(long, default_value_t = 0.0)]
    pub tau: f64,

    /// Initial step multiplier, in (0, 1]
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,

    /// Iterations during which the step size is pinned to --scale
    #[arg(long = "warm-hold", default_value_t = 0, value_name = "N")]
    pub warm_hold: usize,

    #[arg(long = "t-max", default_value_t = 100, value_name = "N")]
    pub t_max: usize,

    /// Outer iterations between bound evaluations
    #[arg(long = "eval-every", default_value_t = 1, value_name = "N")]
    pub eval_every: usize,

    /// Run seed: state initialization and subsampling streams
    #[arg(long, default_value_t = 17)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    #[command(flatten)]
    pub base: BaseArgs,

    /// Output directory for run.csv, final.ckpt and config.txt
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

pub fn cmd_run(args: &RunArgs) -> Result<i32> {
    let data = load_dataset(&args.base)?;
    let log = execute(&args.base, &data)?;
    write_artifacts(&args.out, &args.base, &log)?;
    Ok(if log.diverged() { 2 } else { 0 })
}

pub fn load_dataset(base: &BaseArgs) -> Result<SparseRatings> {
    if let Some(path) = &base.data {
        let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
        return data::load_ratings(file).with_context(|| format!("loading {}", path.display()));
    }
    let spec = base.synthetic.as_deref().unwrap_or(DEFAULT_SYNTHETIC);
    let (users, items, traits, density, noise_sd) = parse_synthetic(spec)?;
    let (ratings, _) = data::generate_synthetic(users, items, traits, density, noise_sd, base.data_seed)
        .context("generating synthetic data")?;
    Ok(ratings)
}

fn parse_synthetic(spec: &str) -> Result<(usize, usize, usize, f64, f64)> {
    let fields: Vec<&str> = spec.split(',').collect();
    if fields.len() != 5 {
        bail!("--synthetic expects M,N,K,DENSITY,NOISE_SD; got `{spec}`");
    }
    let parse_count = |s: &str, what: &str| -> Result<usize> {
        s.trim().parse().with_context(|| format!("{what} `{s}` is not a count"))
    };
    let parse_real = |s: &str, what: &str| -> Result<f64> {
        s.trim().parse().with_context(|| format!("{what} `{s}` is not a number"))
    };
    Ok((
        parse_count(fields[0], "M")?,
        parse_count(fields[1], "N")?,
        parse_count(fields[2], "K")?,
        parse_real(fields[3], "density")?,
        parse_real(fields[4], "noise_sd")?,
    ))
}

pub fn build_config(base: &BaseArgs) -> Result<RunConfig> {
    let schedule = ScheduleParams::new(base.kappa, base.tau, base.scale, base.warm_hold)?;
    let config = RunConfig {
        algorithm: base.algorithm.to_algorithm(),
        option: base.option.to_option(),
        c: base.c,
        c_global: base.c_global,
        k: base.k,
        t_max: base.t_max,
        seed: base.seed,
        eval_every: base.eval_every,
        schedule,
    };
    config.validate()?;
    Ok(config)
}

pub fn execute(base: &BaseArgs, data: &SparseRatings) -> Result<RunLog> {
    let config = build_config(base)?;
    let state = optimizer::init_state(data.user_count(), data.item_count(), base.k, base.seed);
    Ok(optimizer::run(state, data, &config))
}

/// run.csv, final.ckpt and the resolved-flag echo, all re-readable by the
/// library.
pub fn write_artifacts(out: &Path, base: &BaseArgs, log: &RunLog) -> Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;

    let csv_path = out.join("run.csv");
    let csv = File::create(&csv_path).with_context(|| format!("creating {}", csv_path.display()))?;
    data::write_convergence_csv(&log.entries, csv)?;

    let ckpt_path = out.join("final.ckpt");
    let ckpt =
        File::create(&ckpt_path).with_context(|| format!("creating {}", ckpt_path.display()))?;
    data::checkpoint_save(&log.final_state, ckpt)?;

    let config_path = out.join("config.txt");
    let mut cfg = File::create(&config_path)
        .with_context(|| format!("creating {}", config_path.display()))?;
    cfg.write_all(config_echo(base).as_bytes())?;
    Ok(())
}

/// Every resolved flag, one `key = value` line each, fixed order.
pub fn config_echo(base: &BaseArgs) -> String {
    let data_line = match &base.data {
        Some(path) => format!("data = {}", path.display()),
        None => format!(
            "synthetic = {}",
            base.synthetic.as_deref().unwrap_or(DEFAULT_SYNTHETIC)
        ),
    };
    [
        data_line,
        format!("data_seed = {}", base.data_seed),
        format!("algorithm = {}", base.algorithm.name()),
        format!("option = {}", base.option.name()),
        format!("C = {}", base.c),
        format!("C_global = {}", base.c_global),
        format!("K = {}", base.k),
        format!("kappa = {}", base.kappa),
        format!("tau = {}", base.tau),
        format!("scale = {}", base.scale),
        format!("warm_hold = {}", base.warm_hold),
        format!("t_max = {}", base.t_max),
        format!("eval_every = {}", base.eval_every),
        format!("seed = {}", base.seed),
    ]
    .join("\n")
        + "\n"
}
