//! Numerical verification suite: each check computes a worst-case error
//! with an independent route (finite differences, Monte Carlo, exhaustive
//! enumeration, running averages) and compares it against a fixed
//! tolerance. Results are printed as `check,value,tolerance,pass` rows.

use anyhow::Result;
use clap::Args;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use svmp_core::bmf::{self, FactorAddress, Side};
use svmp_core::data::{format_f64, generate_synthetic, SparseRatings};
use svmp_core::diagnostics::{
    finite_diff_gradient, mc_fisher, natural_gradient_check, random_state,
    subset_expectation_check, DEFAULT_FD_STEP,
};
use svmp_core::expfam::GaussianNatural;
use svmp_core::optimizer::{
    init_state, run_alg1, sweep_full_vb, Algorithm, RunConfig, ScheduleParams, UpdateOption,
};

#[derive(Args, Debug)]
pub struct VerifyArgs {
    /// Seed for the randomized checks
    #[arg(long, default_value_t = 17)]
    pub seed: u64,

    /// Random states per gradient check
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
}

struct CheckRow {
    name: &'static str,
    value: f64,
    tolerance: f64,
}

impl CheckRow {
    fn pass(&self) -> bool {
        self.value <= self.tolerance
    }
}

pub fn cmd_verify(args: &VerifyArgs) -> Result<i32> {
    let (data, _) = generate_synthetic(4, 5, 2, 0.6, 1.0, args.seed)?;

    let rows = vec![
        gradient_identity(&data, args),
        natural_gradient(&data, args),
        CheckRow {
            name: "fisher_mc_standard_normal",
            value: fisher_mc_error(GaussianNatural::new(1.0, 0.0)?, args.seed),
            tolerance: 0.02,
        },
        CheckRow {
            name: "fisher_mc_off_center",
            value: fisher_mc_error(GaussianNatural::new(4.0, 4.0)?, args.seed + 1),
            tolerance: 0.02,
        },
        subset_expectation(&data, args)?,
        running_average(),
        full_vb_equivalence(args)?,
    ];

    println!("check,value,tolerance,pass");
    let mut all_pass = true;
    for row in &rows {
        all_pass &= row.pass();
        println!(
            "{},{},{},{}",
            row.name,
            format_f64(row.value),
            format_f64(row.tolerance),
            if row.pass() { "1" } else { "0" }
        );
    }
    Ok(if all_pass { 0 } else { 1 })
}

fn random_address(rng: &mut ChaCha8Rng, data: &SparseRatings, traits: usize) -> FactorAddress {
    let side = if rng.gen_bool(0.5) { Side::User } else { Side::Item };
    let rows = match side {
        Side::User => data.user_count(),
        Side::Item => data.item_count(),
    };
    FactorAddress { side, row: rng.gen_range(0..rows), coordinate: rng.gen_range(0..traits) }
}

/// Finite-difference bound gradient vs Fisher times (target - current).
fn gradient_identity(data: &SparseRatings, args: &VerifyArgs) -> CheckRow {
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed ^ 0x67726164);
    let mut worst = 0.0f64;
    for trial in 0..args.trials {
        let state = random_state(data.user_count(), data.item_count(), 2, args.seed + trial as u64);
        let addr = random_address(&mut rng, data, 2);
        let lam = state.factor(addr);
        let target = bmf::full_vb_target(&state, data, addr);
        let expected = lam.fisher().mul_vec([
            target.precision() - lam.precision(),
            target.mean_times_precision() - lam.mean_times_precision(),
        ]);
        let numeric = finite_diff_gradient(&state, data, addr, DEFAULT_FD_STEP)
            .expect("precision stays positive on desk-scale states");
        let diff = [expected[0] - numeric[0], expected[1] - numeric[1]];
        let norm = |v: [f64; 2]| (v[0] * v[0] + v[1] * v[1]).sqrt();
        worst = worst.max(norm(diff) / norm(expected).max(1.0));
    }
    CheckRow { name: "gradient_identity", value: worst, tolerance: 1e-4 }
}

/// Inverse Fisher times the finite-difference gradient vs target - current.
fn natural_gradient(data: &SparseRatings, args: &VerifyArgs) -> CheckRow {
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed ^ 0x6e617467);
    let mut worst = 0.0f64;
    for trial in 0..args.trials {
        let state =
            random_state(data.user_count(), data.item_count(), 2, args.seed + 7919 + trial as u64);
        let addr = random_address(&mut rng, data, 2);
        let report =
            natural_gradient_check(&state, data, addr).expect("desk-scale states are checkable");
        worst = worst.max(report.relative_error);
    }
    CheckRow { name: "natural_gradient_identity", value: worst, tolerance: 1e-4 }
}

/// Worst per-entry deviation of the Monte Carlo Fisher estimate, relative
/// for entries away from zero, absolute otherwise.
fn fisher_mc_error(lam: GaussianNatural, seed: u64) -> f64 {
    let exact = lam.fisher();
    let estimate = mc_fisher(&lam, 1_000_000, seed);
    let mut worst = 0.0f64;
    for (r, c) in [(0, 0), (0, 1), (1, 1)] {
        let e = exact.entry(r, c);
        let got = estimate.entry(r, c);
        let err = if e.abs() < 1e-9 { got.abs() } else { ((got - e) / e).abs() };
        worst = worst.max(err);
    }
    worst
}

/// Exhaustive subset averages vs the full target, over every enumerable
/// factor and every subset size.
fn subset_expectation(data: &SparseRatings, args: &VerifyArgs) -> Result<CheckRow> {
    let state = random_state(data.user_count(), data.item_count(), 2, args.seed + 104729);
    let mut worst = 0.0f64;
    for addr in state.sweep_addresses() {
        let n_i = data.child_count(addr.side, addr.row);
        if n_i == 0 || n_i > 8 {
            continue;
        }
        for c in 1..=n_i {
            worst = worst.max(subset_expectation_check(&state, data, addr, c)?);
        }
    }
    Ok(CheckRow { name: "subset_expectation", value: worst, tolerance: 1e-12 })
}

/// Blending a frozen stream with rho_t = 1/t equals the stream's mean.
fn running_average() -> CheckRow {
    let temps: Vec<GaussianNatural> = (1..=50)
        .map(|i| {
            GaussianNatural::new(1.0 + (i % 7) as f64 * 0.3, (i % 5) as f64 - 2.0)
                .expect("valid temps")
        })
        .collect();
    let mut current = GaussianNatural::new(42.0, -17.0).expect("valid start");
    for (i, temp) in temps.iter().enumerate() {
        current = current.blend(temp, 1.0 / (i as f64 + 1.0)).expect("valid rho");
    }
    let mean_p =
        temps.iter().map(GaussianNatural::precision).sum::<f64>() / temps.len() as f64;
    let mean_h = temps.iter().map(GaussianNatural::mean_times_precision).sum::<f64>()
        / temps.len() as f64;
    let value = (current.precision() - mean_p)
        .abs()
        .max((current.mean_times_precision() - mean_h).abs());
    CheckRow { name: "running_average", value, tolerance: 1e-12 }
}

/// Subsampled updates with every child and unit steps must equal exact
/// sweeps bit for bit; the value is the worst absolute difference.
fn full_vb_equivalence(args: &VerifyArgs) -> Result<CheckRow> {
    let (data, _) = generate_synthetic(8, 10, 2, 0.4, 1.0, args.seed + 31)?;
    let config = RunConfig {
        algorithm: Algorithm::PerFactor,
        option: UpdateOption::A,
        c: data.max_child_count(),
        c_global: 1,
        k: 2,
        t_max: 5,
        seed: args.seed,
        eval_every: 1,
        schedule: ScheduleParams::new(0.6, 0.0, 1.0, 5)?,
    };
    let stochastic = run_alg1(init_state(8, 10, 2, args.seed), &data, &config);
    let mut exact = init_state(8, 10, 2, args.seed);
    for _ in 0..config.t_max {
        sweep_full_vb(&mut exact, &data);
    }
    let mut worst = 0.0f64;
    for (a, b) in exact
        .user_factors()
        .iter()
        .chain(exact.item_factors())
        .zip(
            stochastic
                .final_state
                .user_factors()
                .iter()
                .chain(stochastic.final_state.item_factors()),
        )
    {
        worst = worst.max((a.precision() - b.precision()).abs());
        worst = worst.max((a.mean_times_precision() - b.mean_times_precision()).abs());
    }
    Ok(CheckRow { name: "full_vb_equivalence", value: worst, tolerance: 0.0 })
}
