//! Browser demo bindings. Three interactive operations, all returning
//! standalone SVG strings: a single configurable run, a sample-size
//! comparison on one shared dataset, and a step-size schedule preview.
//!
//! The dataset is a fixed synthetic instance, small enough that every
//! operation completes within a few milliseconds in the browser but large
//! enough that single-child sampling at unit scale visibly diverges.

use wasm_bindgen::prelude::*;

use svmp_core::data::generate_synthetic;
use svmp_core::optimizer::{
    init_state, run, schedule_rho, Algorithm, RunConfig, RunLog, ScheduleParams, UpdateOption,
};
use svmp_core::plot::{emit_svg_plot, emit_svg_plot_labeled, Curve};
use svmp_core::SparseRatings;

const DEMO_USERS: usize = 60;
const DEMO_ITEMS: usize = 90;
const DEMO_TRAITS: usize = 5;
const DEMO_DENSITY: f64 = 0.15;
const DEMO_DATA_SEED: u64 = 1;
const MAX_ITERATIONS: usize = 2_000;

fn demo_dataset() -> Result<SparseRatings, String> {
    generate_synthetic(DEMO_USERS, DEMO_ITEMS, DEMO_TRAITS, DEMO_DENSITY, 1.0, DEMO_DATA_SEED)
        .map(|(data, _)| data)
        .map_err(|e| e.to_string())
}

fn parse_algorithm(name: &str) -> Result<Algorithm, String> {
    match name {
        "full" => Ok(Algorithm::FullVb),
        "alg1" => Ok(Algorithm::PerFactor),
        "alg2" => Ok(Algorithm::GlobalBatch),
        other => Err(format!("unknown algorithm `{other}` (full, alg1, alg2)")),
    }
}

fn parse_option(name: &str) -> Result<UpdateOption, String> {
    match name {
        "a" => Ok(UpdateOption::A),
        "b" => Ok(UpdateOption::B),
        other => Err(format!("unknown update option `{other}` (a, b)")),
    }
}

#[allow(clippy::too_many_arguments)]
fn demo_run(
    algorithm: &str,
    option: &str,
    c: usize,
    c_global: usize,
    scale: f64,
    kappa: f64,
    t_max: usize,
    seed: u64,
) -> Result<RunLog, String> {
    if t_max == 0 || t_max > MAX_ITERATIONS {
        return Err(format!("t_max must lie in [1, {MAX_ITERATIONS}]"));
    }
    let data = demo_dataset()?;
    let config = RunConfig {
        algorithm: parse_algorithm(algorithm)?,
        option: parse_option(option)?,
        c: c.max(1),
        c_global: c_global.max(1),
        k: DEMO_TRAITS,
        t_max,
        seed,
        eval_every: 1,
        schedule: ScheduleParams::new(kappa, 0.0, scale, 0).map_err(|e| e.to_string())?,
    };
    let state = init_state(data.user_count(), data.item_count(), DEMO_TRAITS, seed);
    Ok(run(state, &data, &config))
}

fn convergence_curve(label: String, log: &RunLog) -> Curve {
    let points = log
        .entries
        .iter()
        .filter(|e| e.ratings_accessed > 0)
        .map(|e| (e.ratings_accessed as f64, e.elbo))
        .collect();
    Curve::flagged(label, points, log.diverged())
}

fn svg_string(curves: &[Curve]) -> Result<String, String> {
    let mut buf = Vec::new();
    emit_svg_plot(curves, &mut buf).map_err(|e| e.to_string())?;
    String::from_utf8(buf).map_err(|e| e.to_string())
}

/// Outcome of one interactive run.
#[wasm_bindgen]
pub struct DemoRun {
    svg: String,
    diverged: bool,
    initial_elbo: f64,
    final_elbo: f64,
    iterations: u32,
    ratings_accessed: f64,
}

#[wasm_bindgen]
impl DemoRun {
    #[wasm_bindgen(getter)]
    pub fn svg(&self) -> String {
        self.svg.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn diverged(&self) -> bool {
        self.diverged
    }

    #[wasm_bindgen(getter)]
    pub fn initial_elbo(&self) -> f64 {
        self.initial_elbo
    }

    #[wasm_bindgen(getter)]
    pub fn final_elbo(&self) -> f64 {
        self.final_elbo
    }

    #[wasm_bindgen(getter)]
    pub fn iterations(&self) -> u32 {
        self.iterations
    }

    #[wasm_bindgen(getter)]
    pub fn ratings_accessed(&self) -> f64 {
        self.ratings_accessed
    }
}

/// Run one configuration and plot its bound against rating accesses.
#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn run_convergence(
    algorithm: &str,
    option: &str,
    c: u32,
    c_global: u32,
    scale: f64,
    kappa: f64,
    t_max: u32,
    seed: u32,
) -> Result<DemoRun, JsError> {
    let log = demo_run(
        algorithm,
        option,
        c as usize,
        c_global as usize,
        scale,
        kappa,
        t_max as usize,
        seed as u64,
    )
    .map_err(|e| JsError::new(&e))?;
    let label = match parse_algorithm(algorithm).map_err(|e| JsError::new(&e))? {
        Algorithm::FullVb => "full VB".to_string(),
        Algorithm::PerFactor => format!("alg1 ({option}), C={c}, scale={scale}"),
        Algorithm::GlobalBatch => {
            format!("alg2 ({option}), C_global={c_global}, scale={scale}")
        }
    };
    let svg = svg_string(&[convergence_curve(label, &log)]).map_err(|e| JsError::new(&e))?;
    let last = log.entries.last().expect("runs always log the start entry");
    Ok(DemoRun {
        svg,
        diverged: log.diverged(),
        initial_elbo: log.initial_elbo(),
        final_elbo: log.final_elbo(),
        iterations: last.t as u32,
        ratings_accessed: last.ratings_accessed as f64,
    })
}

/// One curve per sample size in `c_list` (e.g. "1,2,5,20"), shared seed and
/// schedule; the interactive version of the divergence comparison.
#[wasm_bindgen]
pub fn compare_sample_sizes(
    c_list: &str,
    option: &str,
    scale: f64,
    kappa: f64,
    t_max: u32,
    seed: u32,
) -> Result<String, JsError> {
    let mut curves = Vec::new();
    for field in c_list.split(',') {
        let c: usize = field
            .trim()
            .parse()
            .map_err(|_| JsError::new(&format!("`{field}` is not a sample size")))?;
        let log = demo_run("alg1", option, c, 1, scale, kappa, t_max as usize, seed as u64)
            .map_err(|e| JsError::new(&e))?;
        curves.push(convergence_curve(format!("C={c}"), &log));
    }
    if curves.is_empty() {
        return Err(JsError::new("no sample sizes given"));
    }
    svg_string(&curves).map_err(|e| JsError::new(&e))
}

/// Plot the step-size schedule rho_t for the given parameters.
#[wasm_bindgen]
pub fn schedule_preview(
    kappa: f64,
    tau: f64,
    scale: f64,
    warm_hold: u32,
    t_max: u32,
) -> Result<String, JsError> {
    if t_max == 0 || t_max > MAX_ITERATIONS as u32 {
        return Err(JsError::new(&format!("t_max must lie in [1, {MAX_ITERATIONS}]")));
    }
    let params =
        ScheduleParams::new(kappa, tau, scale, warm_hold as usize).map_err(|e| JsError::new(&e.to_string()))?;
    let points: Vec<(f64, f64)> =
        (1..=t_max as usize).map(|t| (t as f64, schedule_rho(t, &params))).collect();
    let label = format!("rho_t, kappa={kappa}, tau={tau}, scale={scale}, hold={warm_hold}");
    let mut buf = Vec::new();
    emit_svg_plot_labeled(&[Curve::new(label, points)], "iteration t", "step size rho_t", &mut buf)
        .map_err(|e| JsError::new(&e.to_string()))?;
    String::from_utf8(buf).map_err(|e| JsError::new(&e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_child_unit_scale_diverges() {
        let log = demo_run("alg1", "a", 1, 1, 1.0, 0.6, 80, 17).unwrap();
        assert!(log.diverged());
        let run = run_convergence("alg1", "a", 1, 100, 1.0, 0.6, 80, 17).unwrap();
        assert!(run.diverged());
        assert!(run.svg().contains("(diverged)"));
    }

    #[test]
    fn large_sample_unit_scale_completes() {
        let run = run_convergence("alg1", "a", 20, 100, 1.0, 0.6, 40, 17).unwrap();
        assert!(!run.diverged());
        assert!(run.final_elbo() > run.initial_elbo());
        assert!(run.svg().contains("<polyline"));
        assert_eq!(run.iterations(), 40);
    }

    #[test]
    fn full_vb_is_available() {
        let run = run_convergence("full", "a", 1, 1, 1.0, 0.6, 10, 17).unwrap();
        assert!(!run.diverged());
        assert!(run.final_elbo() > run.initial_elbo());
    }

    #[test]
    fn comparison_draws_one_curve_per_sample_size() {
        let svg = compare_sample_sizes("1,2,5,20", "a", 1.0, 0.6, 40, 17).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 4);
        for label in ["C=1", "C=2", "C=5", "C=20"] {
            assert!(svg.contains(label), "missing {label}");
        }
        // Identical inputs give identical bytes.
        let again = compare_sample_sizes("1,2,5,20", "a", 1.0, 0.6, 40, 17).unwrap();
        assert_eq!(svg, again);
    }

    #[test]
    fn schedule_preview_renders() {
        let svg = schedule_preview(0.6, 0.0, 1.0, 10, 100).unwrap();
        assert!(svg.contains("<polyline"));
        assert!(svg.contains("step size"));
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        assert!(demo_run("nope", "a", 1, 1, 1.0, 0.6, 10, 1).is_err());
        assert!(demo_run("alg1", "c", 1, 1, 1.0, 0.6, 10, 1).is_err());
        assert!(demo_run("alg1", "a", 1, 1, 1.0, 0.5, 10, 1).is_err());
        assert!(demo_run("alg1", "a", 1, 1, 1.0, 0.6, 0, 1).is_err());
        assert!(demo_run("alg1", "a", 1, 1, 1.0, 0.6, 1_000_000, 1).is_err());
    }
}
