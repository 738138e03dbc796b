//! Acceptance suite: one test per criterion, each printing a PASS/FAIL
//! line (visible with `--nocapture`). Thresholds are fixed here, not
//! calibrated elsewhere.

use std::fs;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use svmp_core::bmf::{self, FactorAddress, Side};
use svmp_core::data::{
    checkpoint_load, checkpoint_save, generate_synthetic, read_convergence_csv,
    write_convergence_csv, SparseRatings,
};
use svmp_core::diagnostics::{natural_gradient_check, random_state, subset_expectation_check};
use svmp_core::expfam::GaussianNatural;
use svmp_core::optimizer::{
    init_state, run_alg1, run_alg2, schedule_rho, sweep_full_vb, Algorithm, RunConfig, RunLog,
    ScheduleParams, UpdateOption,
};

fn criterion(name: &str, pass: bool, detail: &str) {
    println!("[{}] {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "{name}: {detail}");
}

fn medium_instance() -> SparseRatings {
    generate_synthetic(50, 80, 3, 0.1, 1.0, 1).expect("synthetic data").0
}

fn desk_instance() -> SparseRatings {
    generate_synthetic(200, 300, 5, 0.08, 1.0, 1).expect("synthetic data").0
}

fn desk_config(
    algorithm: Algorithm,
    option: UpdateOption,
    c: usize,
    c_global: usize,
    scale: f64,
    t_max: usize,
) -> RunConfig {
    RunConfig {
        algorithm,
        option,
        c,
        c_global,
        k: 5,
        t_max,
        seed: 17,
        eval_every: 1,
        schedule: ScheduleParams::new(0.6, 0.0, scale, 0).expect("valid schedule"),
    }
}

fn desk_run(config: &RunConfig, data: &SparseRatings) -> RunLog {
    let state = init_state(data.user_count(), data.item_count(), config.k, config.seed);
    match config.algorithm {
        Algorithm::PerFactor => run_alg1(state, data, config),
        Algorithm::GlobalBatch => run_alg2(state, data, config),
        Algorithm::FullVb => unreachable!("acceptance drives full sweeps directly"),
    }
}

fn states_bit_equal(a: &svmp_core::FactorState, b: &svmp_core::FactorState) -> bool {
    a.user_factors()
        .iter()
        .chain(a.item_factors())
        .zip(b.user_factors().iter().chain(b.item_factors()))
        .all(|(x, y)| {
            x.precision().to_bits() == y.precision().to_bits()
                && x.mean_times_precision().to_bits() == y.mean_times_precision().to_bits()
        })
}

#[test]
fn a01_full_vb_per_update_monotonicity() {
    let start = Instant::now();
    let data = medium_instance();
    let mut state = init_state(50, 80, 3, 17);
    let addresses: Vec<_> = state.sweep_addresses().collect();
    let mut before = bmf::elbo(&state, &data);
    let mut worst = f64::INFINITY;
    for _ in 0..30 {
        for &addr in &addresses {
            let target = bmf::full_vb_target(&state, &data, addr);
            state.set_factor(addr, target);
            let after = bmf::elbo(&state, &data);
            let relative = (after - before) / before.abs().max(1.0);
            worst = worst.min(relative);
            before = after;
        }
    }
    let elapsed = start.elapsed();
    criterion(
        "full-vb-elbo-monotonicity",
        worst >= -1e-9 && elapsed < Duration::from_secs(10),
        &format!("worst relative step {worst:.3e} (>= -1e-9), elapsed {elapsed:.2?} (< 10s)"),
    );
}

#[test]
fn a02_stochastic_full_equivalence() {
    let data = medium_instance();
    let c = data.max_child_count();
    let mut exact = init_state(50, 80, 3, 17);
    let mut all_equal = true;
    for sweeps in 1..=10usize {
        sweep_full_vb(&mut exact, &data);
        let config = RunConfig {
            algorithm: Algorithm::PerFactor,
            option: UpdateOption::A,
            c,
            c_global: 1,
            k: 3,
            t_max: sweeps,
            seed: 17,
            eval_every: 1,
            schedule: ScheduleParams::new(0.6, 0.0, 1.0, 10).expect("valid schedule"),
        };
        let stochastic = run_alg1(init_state(50, 80, 3, 17), &data, &config);
        all_equal &= states_bit_equal(&exact, &stochastic.final_state);
    }
    criterion(
        "stochastic-full-equivalence",
        all_equal,
        &format!("10 sweeps bit-identical with C = {c} and unit steps"),
    );
}

#[test]
fn a03_subsample_unbiasedness() {
    let data = generate_synthetic(20, 26, 2, 0.15, 1.0, 2).expect("synthetic data").0;
    let state = random_state(20, 26, 2, 5);
    let mut worst = 0.0f64;
    let mut factors = 0usize;
    for addr in state.sweep_addresses() {
        let n_i = data.child_count(addr.side, addr.row);
        if n_i == 0 || n_i > 8 {
            continue;
        }
        for c in 1..=n_i {
            let deviation =
                subset_expectation_check(&state, &data, addr, c).expect("enumerable factor");
            worst = worst.max(deviation);
        }
        factors += 1;
        if factors >= 40 {
            break;
        }
    }
    criterion(
        "subsample-unbiasedness",
        factors >= 20 && worst <= 1e-12,
        &format!("{factors} factors enumerated, max deviation {worst:.3e} (<= 1e-12)"),
    );
}

#[test]
fn a04_natural_gradient_identity() {
    let start = Instant::now();
    let data = generate_synthetic(4, 5, 2, 0.6, 1.0, 3).expect("synthetic data").0;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst = 0.0f64;
    for trial in 0..100u64 {
        let state = random_state(4, 5, 2, 1000 + trial);
        let side = if rng.gen_bool(0.5) { Side::User } else { Side::Item };
        let rows = if side == Side::User { 4 } else { 5 };
        let addr = FactorAddress {
            side,
            row: rng.gen_range(0..rows),
            coordinate: rng.gen_range(0..2),
        };
        let report = natural_gradient_check(&state, &data, addr).expect("checkable state");
        worst = worst.max(report.relative_error);
    }
    let elapsed = start.elapsed();
    criterion(
        "natural-gradient-identity",
        worst <= 1e-4 && elapsed < Duration::from_secs(30),
        &format!("100 states, worst relative error {worst:.3e} (<= 1e-4), elapsed {elapsed:.2?}"),
    );
}

#[test]
fn a05_monte_carlo_fisher() {
    let mut worst = 0.0f64;
    for (p, h) in [(1.0, 0.0), (4.0, 4.0)] {
        let lam = GaussianNatural::new(p, h).expect("valid naturals");
        let exact = lam.fisher();
        let estimate = svmp_core::diagnostics::mc_fisher(&lam, 1_000_000, 77);
        for (r, c) in [(0, 0), (0, 1), (1, 1)] {
            let e = exact.entry(r, c);
            let got = estimate.entry(r, c);
            let err = if e.abs() < 1e-9 { got.abs() } else { ((got - e) / e).abs() };
            worst = worst.max(err);
        }
    }
    criterion(
        "monte-carlo-fisher",
        worst <= 0.02,
        &format!("worst per-entry error {worst:.4} (<= 0.02) at 1e6 samples"),
    );
}

#[test]
fn a06_running_average_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let temps: Vec<GaussianNatural> = (0..50)
        .map(|_| {
            GaussianNatural::new(rng.gen_range(0.5..5.0), rng.gen_range(-3.0..3.0))
                .expect("valid temps")
        })
        .collect();
    let mut current = GaussianNatural::new(321.0, 654.0).expect("valid start");
    for (i, temp) in temps.iter().enumerate() {
        current = current.blend(temp, 1.0 / (i as f64 + 1.0)).expect("valid rho");
    }
    let mean_p = temps.iter().map(GaussianNatural::precision).sum::<f64>() / 50.0;
    let mean_h = temps.iter().map(GaussianNatural::mean_times_precision).sum::<f64>() / 50.0;
    let deviation = (current.precision() - mean_p)
        .abs()
        .max((current.mean_times_precision() - mean_h).abs());
    criterion(
        "running-average-identity",
        deviation <= 1e-12,
        &format!("50-step 1/t blend vs stream mean: deviation {deviation:.3e} (<= 1e-12)"),
    );
}

#[test]
fn a07_divergence_reproduction() {
    let start = Instant::now();
    let data = desk_instance();

    // Unit-scale grid over C and both options.
    let mut summary = Vec::new();
    let mut diverged_at = |option: UpdateOption, c: usize, scale: f64| -> bool {
        let config = desk_config(Algorithm::PerFactor, option, c, 100, scale, 120);
        let log = desk_run(&config, &data);
        summary.push(format!(
            "C={c} option={option:?} scale={scale:.6}: diverged={} final={:.1}",
            log.diverged(),
            log.final_elbo()
        ));
        log.diverged()
    };

    let mut unit = std::collections::HashMap::new();
    for c in [1usize, 2, 5, 20] {
        for option in [UpdateOption::A, UpdateOption::B] {
            unit.insert((c, option), diverged_at(option, c, 1.0));
        }
    }

    // The shrunk-step remedy for the worst case.
    let config = desk_config(Algorithm::PerFactor, UpdateOption::A, 1, 100, 1.0 / 512.0, 120);
    let remedy = desk_run(&config, &data);

    // Direction-only check: within a group, shrinking the scale never turns
    // a completing run into a divergent one.
    let mut direction_ok = true;
    for option in [UpdateOption::A, UpdateOption::B] {
        let scales = [1.0, 1.0 / 64.0, 1.0 / 512.0];
        let outcomes: Vec<bool> =
            scales.iter().map(|&s| diverged_at(option, 1, s)).collect();
        for i in 0..outcomes.len() - 1 {
            if !outcomes[i] && outcomes[i + 1] {
                direction_ok = false;
            }
        }
    }

    let elapsed = start.elapsed();
    let pass = unit[&(1, UpdateOption::A)]
        && unit[&(1, UpdateOption::B)]
        && !unit[&(20, UpdateOption::A)]
        && !unit[&(20, UpdateOption::B)]
        && !remedy.diverged()
        && remedy.final_elbo() > remedy.initial_elbo()
        && direction_ok
        && elapsed < Duration::from_secs(300);
    criterion(
        "divergence-reproduction",
        pass,
        &format!(
            "C=1 diverges (a: {}, b: {}), C=20 completes (a: {}, b: {}), 1/512 remedy improves \
             {:.1} -> {:.1}, direction ok: {direction_ok}, elapsed {elapsed:.2?} (< 5 min)",
            unit[&(1, UpdateOption::A)],
            unit[&(1, UpdateOption::B)],
            !unit[&(20, UpdateOption::A)],
            !unit[&(20, UpdateOption::B)],
            remedy.initial_elbo(),
            remedy.final_elbo(),
        ),
    );
    for line in summary {
        println!("  {line}");
    }
}

#[test]
fn a08_global_batch_behavior() {
    let data = desk_instance();

    let alg1 = desk_run(&desk_config(Algorithm::PerFactor, UpdateOption::A, 20, 100, 1.0, 30), &data);
    let budget = alg1.entries.last().expect("entries").ratings_accessed;

    let mut pass = !alg1.diverged();
    let mut details = vec![format!(
        "alg1 C=20: final {:.1} at {budget} accesses",
        alg1.final_elbo()
    )];
    for c_global in [100usize, 500] {
        let per_iteration = (2 * 5 * c_global) as u64;
        let t_max = (budget / per_iteration) as usize;
        let config =
            desk_config(Algorithm::GlobalBatch, UpdateOption::A, 1, c_global, 1.0, t_max);
        let log = desk_run(&config, &data);
        let accessed = log.entries.last().expect("entries").ratings_accessed;
        let access_gap = (accessed as f64 - budget as f64).abs() / budget as f64;
        let slower = log.final_elbo() < alg1.final_elbo();
        details.push(format!(
            "alg2 C_global={c_global}: final {:.1} at {accessed} accesses, diverged={}, slower={slower}",
            log.final_elbo(),
            log.diverged()
        ));
        pass &= !log.diverged() && slower && access_gap < 0.02;
    }
    criterion("global-batch-behavior", pass, &details.join("; "));
}

#[test]
fn a09_schedule_validation() {
    let rejects = ScheduleParams::new(0.5, 0.0, 1.0, 0).is_err()
        && ScheduleParams::new(1.01, 0.0, 1.0, 0).is_err();
    let p = ScheduleParams::new(0.6, 0.0, 1.0, 0).expect("valid schedule");
    let rho1 = schedule_rho(1, &p);
    let rho2 = schedule_rho(2, &p);
    let pass = rejects && rho1 == 1.0 && (rho2 - 0.659754).abs() <= 1e-6;
    criterion(
        "schedule-validation",
        pass,
        &format!("kappa bounds enforced; rho_1 = {rho1}, rho_2 = {rho2:.6}"),
    );
}

#[test]
fn a10_serialization_and_grid_determinism() {
    // Library round trips on a real run.
    let data = generate_synthetic(20, 25, 2, 0.3, 1.0, 4).expect("synthetic data").0;
    let config = RunConfig {
        algorithm: Algorithm::PerFactor,
        option: UpdateOption::B,
        c: 2,
        c_global: 1,
        k: 2,
        t_max: 6,
        seed: 11,
        eval_every: 2,
        schedule: ScheduleParams::new(0.7, 1.0, 0.5, 0).expect("valid schedule"),
    };
    let log = run_alg1(init_state(20, 25, 2, 11), &data, &config);

    let mut csv = Vec::new();
    write_convergence_csv(&log.entries, &mut csv).expect("write csv");
    let back = read_convergence_csv(csv.as_slice()).expect("read csv");
    let csv_ok = log.entries.len() == back.len()
        && log.entries.iter().zip(&back).all(|(a, b)| {
            a.t == b.t
                && a.ratings_accessed == b.ratings_accessed
                && a.elbo.to_bits() == b.elbo.to_bits()
                && a.rho.to_bits() == b.rho.to_bits()
                && a.diverged == b.diverged
        });

    let mut ckpt = Vec::new();
    checkpoint_save(&log.final_state, &mut ckpt).expect("write checkpoint");
    let restored = checkpoint_load(ckpt.as_slice()).expect("read checkpoint");
    let ckpt_ok = states_bit_equal(&log.final_state, &restored);

    // Grid rerun through the binary is byte-identical.
    let dir = tempfile::tempdir().expect("tempdir");
    let run_grid = |out: &std::path::Path| {
        let status = Command::new(env!("CARGO_BIN_EXE_svmp"))
            .args([
                "grid",
                "--synthetic",
                "60,90,3,0.15,1",
                "--K",
                "3",
                "--t-max",
                "8",
                "--seed",
                "9",
                "--C-list",
                "1,5",
                "--out",
                out.to_str().expect("utf-8 path"),
            ])
            .status()
            .expect("binary runs");
        assert!(status.success());
    };
    let (out_a, out_b) = (dir.path().join("a"), dir.path().join("b"));
    run_grid(&out_a);
    run_grid(&out_b);

    let mut grid_ok = true;
    let mut compared = 0usize;
    for top in ["summary.csv", "convergence.svg"] {
        grid_ok &= fs::read(out_a.join(top)).unwrap() == fs::read(out_b.join(top)).unwrap();
        compared += 1;
    }
    for cell in ["alg1-a-C1-Cg100-s1", "alg1-a-C5-Cg100-s1"] {
        for file in ["run.csv", "final.ckpt", "config.txt"] {
            let a = fs::read(out_a.join(cell).join(file)).unwrap();
            let b = fs::read(out_b.join(cell).join(file)).unwrap();
            grid_ok &= a == b;
            compared += 1;
        }
    }

    criterion(
        "serialization-and-grid-determinism",
        csv_ok && ckpt_ok && grid_ok,
        &format!(
            "csv round trip: {csv_ok}, checkpoint round trip: {ckpt_ok}, {compared} grid files byte-identical: {grid_ok}"
        ),
    );
}
