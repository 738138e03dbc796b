//! Independent numerical oracles for the update mathematics: bound
//! gradients by central differences, the Fisher/natural-gradient identity,
//! Monte Carlo Fisher estimation, and exhaustive subset-expectation checks.

use itertools::Itertools;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::bmf::{self, FactorAddress, FactorState};
use crate::data::SparseRatings;
use crate::error::{Error, Result};
use crate::expfam::{FisherMatrix, GaussianNatural};

/// Largest child count accepted by exhaustive subset enumeration.
pub const ENUMERATION_MAX_CHILDREN: usize = 12;

/// Default central-difference step; chosen so truncation and round-off are
/// both well below the 1e-4 comparison tolerance on desk-scale states.
pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// Flag ill-conditioned Fisher solves above this condition number.
pub const CONDITION_WARN: f64 = 1e8;

/// Outcome of one natural-gradient comparison at a single factor.
#[derive(Clone, Copy, Debug)]
pub struct GradientCheckReport {
    pub factor: FactorAddress,
    /// Target minus current natural parameters (the closed-form natural
    /// gradient).
    pub analytic: [f64; 2],
    /// Inverse Fisher times the finite-difference bound gradient.
    pub numeric: [f64; 2],
    /// ||analytic - numeric|| / max(1, ||analytic||).
    pub relative_error: f64,
    /// Condition number of the Fisher matrix that was inverted; compare
    /// against `CONDITION_WARN`.
    pub fisher_condition: f64,
}

/// A well-conditioned random state for oracle runs: precisions in
/// [0.5, 4), means in [-2, 2), drawn from the seed in sweep order.
pub fn random_state(users: usize, items: usize, traits: usize, seed: u64) -> FactorState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = FactorState::all_prior(users, items, traits);
    let addresses: Vec<_> = state.sweep_addresses().collect();
    for addr in addresses {
        let precision = rng.gen_range(0.5..4.0);
        let mean = rng.gen_range(-2.0..2.0);
        state.set_factor(
            addr,
            GaussianNatural::new(precision, mean * precision).expect("finite draw"),
        );
    }
    state
}

/// Central differences of the bound along the two natural-parameter
/// coordinates of one factor, all other factors frozen.
pub fn finite_diff_gradient(
    state: &FactorState,
    data: &SparseRatings,
    addr: FactorAddress,
    h: f64,
) -> Result<[f64; 2]> {
    if h <= 0.0 || !h.is_finite() {
        return Err(Error::InvalidParameter {
            name: "h",
            reason: format!("step must be finite and > 0, got {h}"),
        });
    }
    let base = state.factor(addr);
    if base.precision() - h <= 0.0 {
        return Err(Error::InvalidParameter {
            name: "h",
            reason: format!(
                "precision {} - h {} is not positive; halve h",
                base.precision(),
                h
            ),
        });
    }
    let mut work = state.clone();
    let mut eval = |precision: f64, mtp: f64| {
        work.set_factor(addr, GaussianNatural::new(precision, mtp).expect("perturbed factor"));
        bmf::elbo(&work, data)
    };
    let p = base.precision();
    let m = base.mean_times_precision();
    let g_p = (eval(p + h, m) - eval(p - h, m)) / (2.0 * h);
    let g_m = (eval(p, m + h) - eval(p, m - h)) / (2.0 * h);
    Ok([g_p, g_m])
}

/// Compare the closed-form natural gradient (target - current) against
/// inverse-Fisher times the finite-difference gradient.
pub fn natural_gradient_check(
    state: &FactorState,
    data: &SparseRatings,
    addr: FactorAddress,
) -> Result<GradientCheckReport> {
    let lam = state.factor(addr);
    let target = bmf::full_vb_target(state, data, addr);
    let analytic = [
        target.precision() - lam.precision(),
        target.mean_times_precision() - lam.mean_times_precision(),
    ];

    let mut h = DEFAULT_FD_STEP;
    let grad = loop {
        match finite_diff_gradient(state, data, addr, h) {
            Ok(g) => break g,
            Err(e) => {
                h *= 0.5;
                if h < 1e-12 {
                    return Err(e);
                }
            }
        }
    };

    let fisher = lam.fisher();
    let numeric = fisher.solve(grad);
    let diff = [analytic[0] - numeric[0], analytic[1] - numeric[1]];
    let norm = |v: [f64; 2]| (v[0] * v[0] + v[1] * v[1]).sqrt();
    Ok(GradientCheckReport {
        factor: addr,
        analytic,
        numeric,
        relative_error: norm(diff) / norm(analytic).max(1.0),
        fisher_condition: fisher.condition_number(),
    })
}

/// Empirical covariance of the sufficient statistics (-x^2/2, x) over n
/// seeded draws from the factor's distribution.
pub fn mc_fisher(lam: &GaussianNatural, n: usize, seed: u64) -> FisherMatrix {
    assert!(n >= 10_000, "Monte Carlo Fisher needs at least 1e4 samples");
    let m = lam.moments();
    let sd = m.variance.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut s1, mut s2) = (0.0f64, 0.0f64);
    let (mut s11, mut s12, mut s22) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..n {
        let x: f64 = m.mean + sd * rng.sample::<f64, _>(StandardNormal);
        let phi1 = -0.5 * x * x;
        let phi2 = x;
        s1 += phi1;
        s2 += phi2;
        s11 += phi1 * phi1;
        s12 += phi1 * phi2;
        s22 += phi2 * phi2;
    }
    let nf = n as f64;
    let (m1, m2) = (s1 / nf, s2 / nf);
    FisherMatrix::from_entries(s11 / nf - m1 * m1, s12 / nf - m1 * m2, s22 / nf - m2 * m2)
}

/// Average the subsampled estimate over every C-subset of a factor's
/// children and return the max absolute deviation from the exact target.
pub fn subset_expectation_check(
    state: &FactorState,
    data: &SparseRatings,
    addr: FactorAddress,
    c: usize,
) -> Result<f64> {
    let n_i = data.child_count(addr.side, addr.row);
    if n_i > ENUMERATION_MAX_CHILDREN {
        return Err(Error::EnumerationBound { children: n_i, max: ENUMERATION_MAX_CHILDREN });
    }
    if c == 0 || c > n_i {
        return Err(Error::InvalidParameter {
            name: "C",
            reason: format!("subset size must lie in [1, {n_i}], got {c}"),
        });
    }
    let target = bmf::full_vb_target(state, data, addr);
    let mut sum = [0.0f64; 2];
    let mut count = 0usize;
    for subset in (0..n_i).combinations(c) {
        let temp = bmf::lambda_temp(state, data, addr, &subset, n_i)?;
        sum[0] += temp.precision();
        sum[1] += temp.mean_times_precision();
        count += 1;
    }
    let avg = [sum[0] / count as f64, sum[1] / count as f64];
    let dev_p = (avg[0] - target.precision()).abs();
    let dev_m = (avg[1] - target.mean_times_precision()).abs();
    Ok(dev_p.max(dev_m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bmf::Side;
    use crate::data::generate_synthetic;
    use crate::expfam::Moments;
    use crate::optimizer::init_state;

    #[test]
    fn gradient_vanishes_at_the_component_optimum() {
        let (data, _) = generate_synthetic(4, 5, 2, 0.6, 1.0, 51).unwrap();
        let mut state = random_state(4, 5, 2, 52);
        let addr = FactorAddress { side: Side::User, row: 1, coordinate: 0 };
        let target = bmf::full_vb_target(&state, &data, addr);
        state.set_factor(addr, target);
        let g = finite_diff_gradient(&state, &data, addr, 1e-5).unwrap();
        assert!((g[0] * g[0] + g[1] * g[1]).sqrt() <= 1e-5, "gradient {g:?}");
    }

    #[test]
    fn gradient_matches_fisher_times_natural_gradient() {
        let (data, _) = generate_synthetic(4, 5, 2, 0.6, 1.0, 53).unwrap();
        let state = random_state(4, 5, 2, 54);
        let addr = FactorAddress { side: Side::Item, row: 2, coordinate: 1 };
        let lam = state.factor(addr);
        let target = bmf::full_vb_target(&state, &data, addr);
        let expected = lam.fisher().mul_vec([
            target.precision() - lam.precision(),
            target.mean_times_precision() - lam.mean_times_precision(),
        ]);
        let numeric = finite_diff_gradient(&state, &data, addr, 1e-5).unwrap();
        for i in 0..2 {
            let scale = expected[i].abs().max(1.0);
            assert!(
                ((expected[i] - numeric[i]) / scale).abs() <= 1e-4,
                "component {i}: expected {}, numeric {}",
                expected[i],
                numeric[i]
            );
        }
    }

    #[test]
    fn central_differences_converge_at_second_order() {
        let (data, _) = generate_synthetic(3, 4, 2, 0.7, 1.0, 55).unwrap();
        let state = random_state(3, 4, 2, 56);
        let addr = FactorAddress { side: Side::User, row: 0, coordinate: 1 };
        let lam = state.factor(addr);
        let target = bmf::full_vb_target(&state, &data, addr);
        let exact = lam.fisher().mul_vec([
            target.precision() - lam.precision(),
            target.mean_times_precision() - lam.mean_times_precision(),
        ]);
        let err = |h: f64| {
            let g = finite_diff_gradient(&state, &data, addr, h).unwrap();
            ((g[0] - exact[0]).powi(2) + (g[1] - exact[1]).powi(2)).sqrt()
        };
        let coarse = err(1e-2);
        let fine = err(5e-3);
        // Halving h shrinks the truncation error by about 4x.
        assert!(
            fine < coarse / 2.5,
            "no second-order decay: err({:.0e}) = {coarse:.3e}, err({:.0e}) = {fine:.3e}",
            1e-2,
            5e-3
        );
    }

    #[test]
    fn finite_diff_rejects_overlarge_steps() {
        let (data, _) = generate_synthetic(2, 2, 1, 1.0, 1.0, 57).unwrap();
        let state = FactorState::all_prior(2, 2, 1);
        let addr = FactorAddress { side: Side::User, row: 0, coordinate: 0 };
        assert!(finite_diff_gradient(&state, &data, addr, 1.0).is_err());
        assert!(finite_diff_gradient(&state, &data, addr, 0.0).is_err());
        assert!(finite_diff_gradient(&state, &data, addr, 0.5).is_ok());
    }

    #[test]
    fn natural_gradient_check_on_random_instances() {
        let (data, _) = generate_synthetic(3, 4, 2, 0.6, 1.0, 58).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(59);
        for trial in 0..25 {
            let state = random_state(3, 4, 2, 60 + trial);
            let side = if rng.gen_bool(0.5) { Side::User } else { Side::Item };
            let rows = if side == Side::User { 3 } else { 4 };
            let addr = FactorAddress {
                side,
                row: rng.gen_range(0..rows),
                coordinate: rng.gen_range(0..2),
            };
            let report = natural_gradient_check(&state, &data, addr).unwrap();
            assert!(
                report.relative_error <= 1e-4,
                "trial {trial}: relative error {}",
                report.relative_error
            );
        }
    }

    #[test]
    fn sign_error_in_target_is_caught() {
        // A corrupted closed-form target (flipped mean*precision column)
        // must blow past the comparison tolerance against the
        // finite-difference route.
        let (data, _) = generate_synthetic(3, 4, 2, 0.6, 1.0, 91).unwrap();
        let state = random_state(3, 4, 2, 92);
        let addr = FactorAddress { side: Side::User, row: 1, coordinate: 1 };
        let lam = state.factor(addr);
        let target = bmf::full_vb_target(&state, &data, addr);
        let corrupted = [
            target.precision() - lam.precision(),
            -target.mean_times_precision() - lam.mean_times_precision(),
        ];
        let grad = finite_diff_gradient(&state, &data, addr, DEFAULT_FD_STEP).unwrap();
        let numeric = lam.fisher().solve(grad);
        let diff = [corrupted[0] - numeric[0], corrupted[1] - numeric[1]];
        let norm = |v: [f64; 2]| (v[0] * v[0] + v[1] * v[1]).sqrt();
        let rel = norm(diff) / norm(corrupted).max(1.0);
        assert!(rel > 1e-2, "sign error went unnoticed: relative error {rel}");
    }

    #[test]
    fn natural_gradient_check_vanishes_at_optimum() {
        let (data, _) = generate_synthetic(3, 3, 2, 0.8, 1.0, 61).unwrap();
        let mut state = random_state(3, 3, 2, 62);
        let addr = FactorAddress { side: Side::User, row: 2, coordinate: 1 };
        let target = bmf::full_vb_target(&state, &data, addr);
        state.set_factor(addr, target);
        let report = natural_gradient_check(&state, &data, addr).unwrap();
        let norm = |v: [f64; 2]| (v[0] * v[0] + v[1] * v[1]).sqrt();
        assert!(norm(report.analytic) < 1e-12);
        assert!(norm(report.numeric) < 1e-4);
    }

    #[test]
    fn unit_step_along_natural_gradient_reaches_target() {
        let (data, _) = generate_synthetic(3, 4, 2, 0.6, 1.0, 63).unwrap();
        let state = random_state(3, 4, 2, 64);
        let addr = FactorAddress { side: Side::Item, row: 1, coordinate: 0 };
        let lam = state.factor(addr);
        let target = bmf::full_vb_target(&state, &data, addr);
        let step = [
            target.precision() - lam.precision(),
            target.mean_times_precision() - lam.mean_times_precision(),
        ];
        assert_eq!(lam.precision() + step[0], target.precision());
        assert_eq!(
            lam.mean_times_precision() + step[1],
            target.mean_times_precision()
        );
    }

    #[test]
    fn mc_fisher_matches_closed_form() {
        let n = 1_000_000;
        for (p, m) in [(1.0, 0.0), (4.0, 4.0)] {
            let lam = GaussianNatural::new(p, m).unwrap();
            let exact = lam.fisher();
            let estimate = mc_fisher(&lam, n, 77);
            for (r, c) in [(0, 0), (0, 1), (1, 1)] {
                let e = exact.entry(r, c);
                let got = estimate.entry(r, c);
                if e.abs() < 1e-9 {
                    assert!(got.abs() <= 0.02, "entry ({r},{c}): {got}");
                } else {
                    assert!(
                        ((got - e) / e).abs() <= 0.02,
                        "entry ({r},{c}): estimate {got} vs exact {e}"
                    );
                }
            }
            assert_eq!(estimate.entry(0, 1), estimate.entry(1, 0));
        }
    }

    #[test]
    fn subset_expectation_is_unbiased() {
        let (data, _) = generate_synthetic(6, 8, 2, 0.25, 1.0, 78).unwrap();
        let state = random_state(6, 8, 2, 79);
        let mut checked = 0;
        for addr in state.sweep_addresses() {
            let n_i = data.child_count(addr.side, addr.row);
            if n_i == 0 || n_i > 8 {
                continue;
            }
            for c in 1..=n_i {
                let dev = subset_expectation_check(&state, &data, addr, c).unwrap();
                assert!(dev <= 1e-12, "{addr:?} C={c}: deviation {dev}");
            }
            checked += 1;
        }
        assert!(checked >= 5, "too few enumerable factors: {checked}");
    }

    #[test]
    fn subset_expectation_rejects_large_factors_and_bad_c() {
        let (data, _) = generate_synthetic(2, 20, 1, 1.0, 1.0, 80).unwrap();
        let state = init_state(2, 20, 1, 81);
        let addr = FactorAddress { side: Side::User, row: 0, coordinate: 0 };
        assert!(matches!(
            subset_expectation_check(&state, &data, addr, 1),
            Err(Error::EnumerationBound { .. })
        ));
        let item = FactorAddress { side: Side::Item, row: 0, coordinate: 0 };
        assert!(subset_expectation_check(&state, &data, item, 0).is_err());
        assert!(subset_expectation_check(&state, &data, item, 3).is_err());
        assert_eq!(subset_expectation_check(&state, &data, item, 2).unwrap(), 0.0);
    }

    #[test]
    fn cross_factor_statistics_are_uncorrelated() {
        // The factorized approximation has a block-diagonal Fisher matrix:
        // cross-covariances of sufficient statistics vanish between factors.
        let mut rng = ChaCha8Rng::seed_from_u64(83);
        let n = 200_000;
        for pair in 0..10 {
            let draw_factor = |rng: &mut ChaCha8Rng| {
                GaussianNatural::from_moments(Moments {
                    mean: rng.gen_range(-2.0..2.0),
                    variance: rng.gen_range(0.2..3.0),
                })
                .unwrap()
                .moments()
            };
            let ma = draw_factor(&mut rng);
            let mb = draw_factor(&mut rng);
            let (sda, sdb) = (ma.variance.sqrt(), mb.variance.sqrt());

            let mut phis = Vec::with_capacity(n);
            let mut sum_a = [0.0f64; 2];
            let mut sum_b = [0.0f64; 2];
            for _ in 0..n {
                let xa: f64 = ma.mean + sda * rng.sample::<f64, _>(StandardNormal);
                let xb: f64 = mb.mean + sdb * rng.sample::<f64, _>(StandardNormal);
                let pa = [-0.5 * xa * xa, xa];
                let pb = [-0.5 * xb * xb, xb];
                for i in 0..2 {
                    sum_a[i] += pa[i];
                    sum_b[i] += pb[i];
                }
                phis.push((pa, pb));
            }
            let nf = n as f64;
            let mean_a = [sum_a[0] / nf, sum_a[1] / nf];
            let mean_b = [sum_b[0] / nf, sum_b[1] / nf];

            // Sample cross-covariance and the standard error of its mean.
            let mut prods = [0.0f64; 4];
            let mut prods_sq = [0.0f64; 4];
            for (pa, pb) in &phis {
                for i in 0..2 {
                    for j in 0..2 {
                        let term = (pa[i] - mean_a[i]) * (pb[j] - mean_b[j]);
                        prods[i * 2 + j] += term;
                        prods_sq[i * 2 + j] += term * term;
                    }
                }
            }
            for idx in 0..4 {
                let cov = prods[idx] / nf;
                let var = prods_sq[idx] / nf - cov * cov;
                let se = (var / nf).sqrt();
                assert!(
                    cov.abs() <= 3.0 * se.max(1e-12),
                    "pair {pair} component {idx}: cross-covariance {cov} (se {se})"
                );
            }
        }
    }
}
