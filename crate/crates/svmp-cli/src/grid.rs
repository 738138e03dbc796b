//! Grid runs: the cartesian product of sample sizes, step scales, update
//! options and algorithms over one shared dataset.

use std::fs::File;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;

use svmp_core::data::format_f64;
use svmp_core::plot::{emit_svg_plot, Curve};

use crate::run::{self, AlgorithmArg, BaseArgs, OptionArg};

#[derive(Args, Debug)]
pub struct GridArgs {
    #[command(flatten)]
    pub base: BaseArgs,

    /// Output directory: one subdirectory per cell plus summary.csv and
    /// convergence.svg
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,

    /// Comma-separated values of --C to sweep
    #[arg(long = "C-list", value_name = "LIST")]
    pub c_list: Option<String>,

    /// Comma-separated values of --C-global to sweep
    #[arg(long = "C-global-list", value_name = "LIST")]
    pub c_global_list: Option<String>,

    /// Comma-separated values of --scale to sweep
    #[arg(long = "scale-list", value_name = "LIST")]
    pub scale_list: Option<String>,

    /// Comma-separated update options to sweep (a, b)
    #[arg(long = "option-list", value_name = "LIST")]
    pub option_list: Option<String>,

    /// Comma-separated algorithms to sweep (full, alg1, alg2)
    #[arg(long = "algorithm-list", value_name = "LIST")]
    pub algorithm_list: Option<String>,

    /// Refuse grids larger than this many runs
    #[arg(long = "max-runs", default_value_t = 256)]
    pub max_runs: usize,
}

struct Cell {
    name: String,
    base: BaseArgs,
}

fn parse_list<T, F>(spec: &Option<String>, fallback: T, what: &str, parse: F) -> Result<Vec<T>>
where
    T: Clone,
    F: Fn(&str) -> Result<T>,
{
    match spec {
        None => Ok(vec![fallback]),
        Some(s) => {
            let items: Result<Vec<T>> = s.split(',').map(|f| parse(f.trim())).collect();
            let items = items.with_context(|| format!("parsing {what} list `{s}`"))?;
            if items.is_empty() {
                bail!("{what} list is empty");
            }
            Ok(items)
        }
    }
}

fn cells(args: &GridArgs) -> Result<Vec<Cell>> {
    let algorithms = parse_list(&args.algorithm_list, args.base.algorithm, "algorithm", |s| {
        match s {
            "full" => Ok(AlgorithmArg::Full),
            "alg1" => Ok(AlgorithmArg::Alg1),
            "alg2" => Ok(AlgorithmArg::Alg2),
            other => bail!("unknown algorithm `{other}`"),
        }
    })?;
    let options = parse_list(&args.option_list, args.base.option, "option", |s| match s {
        "a" => Ok(OptionArg::A),
        "b" => Ok(OptionArg::B),
        other => bail!("unknown option `{other}`"),
    })?;
    let c_values = parse_list(&args.c_list, args.base.c, "C", |s| {
        s.parse().with_context(|| format!("`{s}` is not a count"))
    })?;
    let c_global_values = parse_list(&args.c_global_list, args.base.c_global, "C-global", |s| {
        s.parse().with_context(|| format!("`{s}` is not a count"))
    })?;
    let scale_values = parse_list(&args.scale_list, args.base.scale, "scale", |s| {
        s.parse().with_context(|| format!("`{s}` is not a number"))
    })?;

    let total = algorithms.len()
        * options.len()
        * c_values.len()
        * c_global_values.len()
        * scale_values.len();
    if total > args.max_runs {
        bail!("grid has {total} cells, more than --max-runs {}", args.max_runs);
    }

    let mut out = Vec::with_capacity(total);
    for &algorithm in &algorithms {
        for &option in &options {
            for &c in &c_values {
                for &c_global in &c_global_values {
                    for &scale in &scale_values {
                        let mut base = args.base.clone();
                        base.algorithm = algorithm;
                        base.option = option;
                        base.c = c;
                        base.c_global = c_global;
                        base.scale = scale;
                        let name = format!(
                            "{}-{}-C{}-Cg{}-s{}",
                            algorithm.name(),
                            option.name(),
                            c,
                            c_global,
                            scale
                        );
                        out.push(Cell { name, base });
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn cmd_grid(args: &GridArgs) -> Result<i32> {
    let cells = cells(args)?;
    let data = run::load_dataset(&args.base)?;
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;

    let mut summary_rows = Vec::with_capacity(cells.len());
    let mut curves = Vec::new();
    for cell in &cells {
        let log = run::execute(&cell.base, &data)?;
        run::write_artifacts(&args.out.join(&cell.name), &cell.base, &log)?;

        let last = log.entries.last().expect("runs log at least the start entry");
        summary_rows.push(vec![
            cell.base.algorithm.name().to_string(),
            cell.base.option.name().to_string(),
            cell.base.c.to_string(),
            cell.base.c_global.to_string(),
            format_f64(cell.base.scale),
            format_f64(cell.base.kappa),
            format_f64(cell.base.tau),
            cell.base.warm_hold.to_string(),
            cell.base.k.to_string(),
            cell.base.t_max.to_string(),
            cell.base.seed.to_string(),
            format_f64(log.final_elbo()),
            if log.diverged() { "1" } else { "0" }.to_string(),
            last.ratings_accessed.to_string(),
        ]);

        let points: Vec<(f64, f64)> = log
            .entries
            .iter()
            .filter(|e| e.ratings_accessed > 0)
            .map(|e| (e.ratings_accessed as f64, e.elbo))
            .collect();
        if points.iter().any(|&(_, y)| y.is_finite()) {
            curves.push(Curve::flagged(cell.name.clone(), points, log.diverged()));
        }
    }

    let summary_path = args.out.join("summary.csv");
    let mut w = csv::Writer::from_writer(
        File::create(&summary_path)
            .with_context(|| format!("creating {}", summary_path.display()))?,
    );
    w.write_record([
        "algorithm",
        "option",
        "C",
        "C_global",
        "scale",
        "kappa",
        "tau",
        "warm_hold",
        "K",
        "t_max",
        "seed",
        "final_elbo",
        "diverged",
        "ratings_accessed",
    ])?;
    for row in &summary_rows {
        w.write_record(row)?;
    }
    w.flush()?;

    if curves.is_empty() {
        bail!("no cell produced a finite bound value; nothing to plot");
    }
    let svg_path = args.out.join("convergence.svg");
    let svg =
        File::create(&svg_path).with_context(|| format!("creating {}", svg_path.display()))?;
    emit_svg_plot(&curves, svg)?;
    Ok(0)
}
