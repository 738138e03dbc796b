//! Training loops: full coordinate-ascent sweeps, per-factor stochastic
//! updates with interleaved (a) or global (b) blending, batch-sampled
//! updates, step-size schedules, and divergence detection.
//!
//! Determinism contract: one ChaCha stream per run, seeded from the config
//! seed. `init_state` draws on stream 0; the update loops draw child
//! subsamples on stream 1, in sweep order. Identical configs therefore
//! yield bit-identical logs and final states.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::bmf::{self, FactorAddress, FactorState, Side};
use crate::data::SparseRatings;
use crate::error::{Error, Result};
use crate::expfam::GaussianNatural;

/// Initial factor means are drawn with this standard deviation; an exactly
/// zero-mean start is a fixed point of every sweep.
pub const INIT_MEAN_SD: f64 = 0.1;

/// Divergence is flagged once any posterior mean passes this magnitude.
pub const DIVERGENCE_MEAN_LIMIT: f64 = 1e6;

/// Step-size schedule rho_t = scale * (t - warm_hold + tau)^(-kappa),
/// clamped to (0, 1], with rho pinned to `scale` for the first `warm_hold`
/// iterations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScheduleParams {
    kappa: f64,
    tau: f64,
    scale: f64,
    warm_hold: usize,
}

impl ScheduleParams {
    pub fn new(kappa: f64, tau: f64, scale: f64, warm_hold: usize) -> Result<Self> {
        if !(kappa > 0.5 && kappa <= 1.0) {
            return Err(Error::InvalidParameter {
                name: "kappa",
                reason: format!("forgetting rate must lie in (1/2, 1], got {kappa}"),
            });
        }
        if !tau.is_finite() || tau < 0.0 {
            return Err(Error::InvalidParameter {
                name: "tau",
                reason: format!("delay must be finite and >= 0, got {tau}"),
            });
        }
        if !(scale > 0.0 && scale <= 1.0) {
            return Err(Error::InvalidParameter {
                name: "scale",
                reason: format!("initial step multiplier must lie in (0, 1], got {scale}"),
            });
        }
        Ok(Self { kappa, tau, scale, warm_hold })
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn warm_hold(&self) -> usize {
        self.warm_hold
    }
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self { kappa: 0.6, tau: 0.0, scale: 1.0, warm_hold: 0 }
    }
}

/// Step size for iteration t >= 1; always in (0, 1].
pub fn schedule_rho(t: usize, params: &ScheduleParams) -> f64 {
    assert!(t >= 1, "iterations are counted from 1");
    if t <= params.warm_hold {
        return params.scale;
    }
    let steps = (t - params.warm_hold) as f64 + params.tau;
    (params.scale * steps.powf(-params.kappa)).min(1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Algorithm {
    /// Exact coordinate ascent over all children of every factor.
    FullVb,
    /// Per-factor child subsampling of size C.
    PerFactor,
    /// One global batch of C_global ratings per iteration.
    GlobalBatch,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum UpdateOption {
    /// Blend each factor immediately; later factors see updated neighbours.
    A,
    /// Compute every temp from the iteration-start state, then blend all
    /// factors at once.
    B,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    pub option: UpdateOption,
    pub c: usize,
    pub c_global: usize,
    pub k: usize,
    pub t_max: usize,
    pub seed: u64,
    pub eval_every: usize,
    pub schedule: ScheduleParams,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("C", self.c),
            ("C_global", self.c_global),
            ("K", self.k),
            ("t_max", self.t_max),
            ("eval_every", self.eval_every),
        ] {
            if value == 0 {
                return Err(Error::InvalidParameter {
                    name,
                    reason: "must be >= 1".to_string(),
                });
            }
        }
        Ok(())
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::PerFactor,
            option: UpdateOption::A,
            c: 1,
            c_global: 100,
            k: 5,
            t_max: 100,
            seed: 17,
            eval_every: 1,
            schedule: ScheduleParams::default(),
        }
    }
}

/// One logged evaluation point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunLogEntry {
    pub t: usize,
    pub ratings_accessed: u64,
    pub elbo: f64,
    pub rho: f64,
    pub diverged: bool,
}

/// Full record of one run: evaluation time series plus the final state.
#[derive(Clone, Debug)]
pub struct RunLog {
    pub entries: Vec<RunLogEntry>,
    pub config: RunConfig,
    pub final_state: FactorState,
}

impl RunLog {
    pub fn diverged(&self) -> bool {
        self.entries.last().is_some_and(|e| e.diverged)
    }

    pub fn final_elbo(&self) -> f64 {
        self.entries.last().map_or(f64::NAN, |e| e.elbo)
    }

    pub fn initial_elbo(&self) -> f64 {
        self.entries.first().map_or(f64::NAN, |e| e.elbo)
    }
}

/// Every factor starts at precision 1 with a small seeded mean
/// perturbation (stream 0 of the seed, user grid then item grid,
/// row-major).
pub fn init_state(users: usize, items: usize, traits: usize, seed: u64) -> FactorState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0);
    let mut state = FactorState::all_prior(users, items, traits);
    let addresses: Vec<_> = state.sweep_addresses().collect();
    for addr in addresses {
        let mean = INIT_MEAN_SD * rng.sample::<f64, _>(StandardNormal);
        state.set_factor(addr, GaussianNatural::new(1.0, mean).expect("finite init"));
    }
    state
}

/// min(c, population_size) distinct indices, uniform over subsets of that
/// size (Floyd's algorithm), returned sorted. Consumes no generator state
/// when the whole population is taken.
pub fn sample_without_replacement(
    rng: &mut impl Rng,
    population_size: usize,
    c: usize,
) -> Vec<usize> {
    assert!(population_size >= 1, "population must be non-empty");
    if c >= population_size {
        return (0..population_size).collect();
    }
    let mut chosen = std::collections::HashSet::with_capacity(c);
    for j in (population_size - c)..population_size {
        let pick = rng.gen_range(0..=j);
        if !chosen.insert(pick) {
            chosen.insert(j);
        }
    }
    let mut out: Vec<usize> = chosen.into_iter().collect();
    out.sort_unstable();
    out
}

/// One full coordinate-ascent sweep in the fixed order, each factor set to
/// its exact target computed from the current state. Returns the number of
/// rating accesses (the child count of every visited factor).
pub fn sweep_full_vb(state: &mut FactorState, data: &SparseRatings) -> u64 {
    let mut accessed = 0u64;
    let addresses: Vec<_> = state.sweep_addresses().collect();
    for addr in addresses {
        let target = bmf::full_vb_target(state, data, addr);
        state.set_factor(addr, target);
        accessed += data.child_count(addr.side, addr.row) as u64;
    }
    accessed
}

/// True once the state is numerically beyond recovery: a non-finite bound,
/// a runaway posterior mean, or a bound collapse far below the start.
pub fn detect_divergence(elbo_now: f64, elbo_initial: f64, state: &FactorState) -> bool {
    if !elbo_now.is_finite() {
        return true;
    }
    let max_mean = state.max_abs_mean();
    if !max_mean.is_finite() || max_mean > DIVERGENCE_MEAN_LIMIT {
        return true;
    }
    elbo_now < elbo_initial - 10.0 * elbo_initial.abs() - 100.0
}

/// Shared logging/divergence bookkeeping for the run loops.
struct Recorder {
    entries: Vec<RunLogEntry>,
    elbo_initial: f64,
    accessed: u64,
}

impl Recorder {
    fn start(state: &FactorState, data: &SparseRatings) -> Self {
        let elbo_initial = bmf::elbo(state, data);
        let diverged = detect_divergence(elbo_initial, elbo_initial, state);
        Self {
            entries: vec![RunLogEntry {
                t: 0,
                ratings_accessed: 0,
                elbo: elbo_initial,
                rho: 0.0,
                diverged,
            }],
            elbo_initial,
            accessed: 0,
        }
    }

    /// Evaluate if due; returns true when the run must halt.
    fn observe(
        &mut self,
        t: usize,
        t_max: usize,
        eval_every: usize,
        rho: f64,
        state: &FactorState,
        data: &SparseRatings,
    ) -> bool {
        if t % eval_every != 0 && t != t_max {
            return false;
        }
        let elbo_now = bmf::elbo(state, data);
        let diverged = detect_divergence(elbo_now, self.elbo_initial, state);
        self.entries.push(RunLogEntry {
            t,
            ratings_accessed: self.accessed,
            elbo: elbo_now,
            rho,
            diverged,
        });
        diverged
    }
}

/// Exact coordinate ascent for t_max sweeps (the unit-step baseline).
pub fn run_full_vb(mut state: FactorState, data: &SparseRatings, config: &RunConfig) -> RunLog {
    let mut rec = Recorder::start(&state, data);
    for t in 1..=config.t_max {
        rec.accessed += sweep_full_vb(&mut state, data);
        if rec.observe(t, config.t_max, config.eval_every, 1.0, &state, data) {
            break;
        }
    }
    RunLog { entries: rec.entries, config: config.clone(), final_state: state }
}

/// Per-factor stochastic updates: each factor draws min(C, N_i) children,
/// forms the scaled estimate, and blends with the scheduled step size.
/// Option (a) blends in place during the sweep; option (b) holds every
/// estimate (all computed from the iteration-start state) and blends the
/// whole grid afterwards.
pub fn run_alg1(mut state: FactorState, data: &SparseRatings, config: &RunConfig) -> RunLog {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut rec = Recorder::start(&state, data);
    let addresses: Vec<_> = state.sweep_addresses().collect();

    for t in 1..=config.t_max {
        let rho = schedule_rho(t, &config.schedule);
        match config.option {
            UpdateOption::A => {
                for &addr in &addresses {
                    let n_i = data.child_count(addr.side, addr.row);
                    let sample = sample_without_replacement(&mut rng, n_i, config.c);
                    rec.accessed += sample.len() as u64;
                    let temp = bmf::lambda_temp(&state, data, addr, &sample, n_i)
                        .expect("sample is non-empty");
                    state.set_factor(addr, state.factor(addr).mix(&temp, rho));
                }
            }
            UpdateOption::B => {
                let mut temps = Vec::with_capacity(addresses.len());
                for &addr in &addresses {
                    let n_i = data.child_count(addr.side, addr.row);
                    let sample = sample_without_replacement(&mut rng, n_i, config.c);
                    rec.accessed += sample.len() as u64;
                    temps.push(
                        bmf::lambda_temp(&state, data, addr, &sample, n_i)
                            .expect("sample is non-empty"),
                    );
                }
                for (&addr, temp) in addresses.iter().zip(&temps) {
                    state.set_factor(addr, state.factor(addr).mix(temp, rho));
                }
            }
        }
        if rec.observe(t, config.t_max, config.eval_every, rho, &state, data) {
            break;
        }
    }
    RunLog { entries: rec.entries, config: config.clone(), final_state: state }
}

/// Batch-sampled updates: one draw of min(C_global, |ratings|) observed
/// ratings per iteration; every factor with a child in the batch is updated
/// from its batch slice scaled by N_i / |D_i|, factors without one are left
/// untouched. Blending options as in the per-factor loop.
pub fn run_alg2(mut state: FactorState, data: &SparseRatings, config: &RunConfig) -> RunLog {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut rec = Recorder::start(&state, data);
    let traits = state.trait_dim();

    for t in 1..=config.t_max {
        let rho = schedule_rho(t, &config.schedule);
        let batch = sample_without_replacement(&mut rng, data.len(), config.c_global);

        let mut by_user: Vec<Vec<usize>> = vec![Vec::new(); data.user_count()];
        let mut by_item: Vec<Vec<usize>> = vec![Vec::new(); data.item_count()];
        for &idx in &batch {
            let r = data.rating(idx);
            by_user[r.user].push(idx);
            by_item[r.item].push(idx);
        }

        let touched: Vec<(FactorAddress, &[usize])> = {
            let users = (0..data.user_count()).filter(|&m| !by_user[m].is_empty()).flat_map(|m| {
                let slice = by_user[m].as_slice();
                (0..traits)
                    .map(move |k| (FactorAddress { side: Side::User, row: m, coordinate: k }, slice))
            });
            let items = (0..data.item_count()).filter(|&n| !by_item[n].is_empty()).flat_map(|n| {
                let slice = by_item[n].as_slice();
                (0..traits)
                    .map(move |k| (FactorAddress { side: Side::Item, row: n, coordinate: k }, slice))
            });
            users.chain(items).collect()
        };

        match config.option {
            UpdateOption::A => {
                for &(addr, slice) in &touched {
                    let n_i = data.child_count(addr.side, addr.row);
                    rec.accessed += slice.len() as u64;
                    let temp = bmf::lambda_temp_from_triplets(&state, data, addr, slice, n_i)
                        .expect("batch slice is non-empty");
                    state.set_factor(addr, state.factor(addr).mix(&temp, rho));
                }
            }
            UpdateOption::B => {
                let mut temps = Vec::with_capacity(touched.len());
                for &(addr, slice) in &touched {
                    let n_i = data.child_count(addr.side, addr.row);
                    rec.accessed += slice.len() as u64;
                    temps.push(
                        bmf::lambda_temp_from_triplets(&state, data, addr, slice, n_i)
                            .expect("batch slice is non-empty"),
                    );
                }
                for (&(addr, _), temp) in touched.iter().zip(&temps) {
                    state.set_factor(addr, state.factor(addr).mix(temp, rho));
                }
            }
        }
        if rec.observe(t, config.t_max, config.eval_every, rho, &state, data) {
            break;
        }
    }
    RunLog { entries: rec.entries, config: config.clone(), final_state: state }
}

/// Dispatch on the configured algorithm.
pub fn run(state: FactorState, data: &SparseRatings, config: &RunConfig) -> RunLog {
    match config.algorithm {
        Algorithm::FullVb => run_full_vb(state, data, config),
        Algorithm::PerFactor => run_alg1(state, data, config),
        Algorithm::GlobalBatch => run_alg2(state, data, config),
    }
}
