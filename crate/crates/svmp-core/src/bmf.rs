//! Gaussian bilinear matrix factorization.
//!
//! Ratings are modeled as r_mn ~ N(u_m . v_n, 1) with standard-normal
//! priors on every trait coordinate and a fully factorized Gaussian
//! approximation q. Each hidden coordinate's conjugate update is the prior
//! plus one closed-form contribution per observed rating in its row; this
//! module computes those contributions, the full coordinate-ascent target,
//! its subsampled unbiased estimate, and the evidence lower bound.

use crate::data::SparseRatings;
use crate::error::{Error, Result};
use crate::expfam::{GaussianNatural, Moments};

const LN_2PI: f64 = 1.8378770664093453;

/// Which grid a factor lives in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Side {
    User,
    Item,
}

impl Side {
    pub fn other(self) -> Side {
        match self {
            Side::User => Side::Item,
            Side::Item => Side::User,
        }
    }
}

/// Identifies one hidden coordinate: grid side, row, trait index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct FactorAddress {
    pub side: Side,
    pub row: usize,
    pub coordinate: usize,
}

/// One rating's additive contribution to a factor's natural parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChildContribution {
    pub precision_add: f64,
    pub mtp_add: f64,
}

/// All user and item factors of one run: an M x K and an N x K grid of
/// Gaussian natural parameters, row-major.
#[derive(Clone, Debug)]
pub struct FactorState {
    u: Vec<GaussianNatural>,
    v: Vec<GaussianNatural>,
    users: usize,
    items: usize,
    traits: usize,
}

impl FactorState {
    /// Every factor at the standard-normal prior.
    pub fn all_prior(users: usize, items: usize, traits: usize) -> Self {
        let prior = GaussianNatural::standard_normal();
        Self {
            u: vec![prior; users * traits],
            v: vec![prior; items * traits],
            users,
            items,
            traits,
        }
    }

    pub fn from_grids(
        users: usize,
        items: usize,
        traits: usize,
        u: Vec<GaussianNatural>,
        v: Vec<GaussianNatural>,
    ) -> Result<Self> {
        if u.len() != users * traits {
            return Err(Error::DimensionMismatch { expected: users * traits, got: u.len() });
        }
        if v.len() != items * traits {
            return Err(Error::DimensionMismatch { expected: items * traits, got: v.len() });
        }
        Ok(Self { u, v, users, items, traits })
    }

    pub fn user_count(&self) -> usize {
        self.users
    }

    pub fn item_count(&self) -> usize {
        self.items
    }

    pub fn trait_dim(&self) -> usize {
        self.traits
    }

    pub fn user_factors(&self) -> &[GaussianNatural] {
        &self.u
    }

    pub fn item_factors(&self) -> &[GaussianNatural] {
        &self.v
    }

    fn grid(&self, side: Side) -> &[GaussianNatural] {
        match side {
            Side::User => &self.u,
            Side::Item => &self.v,
        }
    }

    pub fn factor(&self, addr: FactorAddress) -> GaussianNatural {
        self.grid(addr.side)[addr.row * self.traits + addr.coordinate]
    }

    pub fn set_factor(&mut self, addr: FactorAddress, value: GaussianNatural) {
        let idx = addr.row * self.traits + addr.coordinate;
        match addr.side {
            Side::User => self.u[idx] = value,
            Side::Item => self.v[idx] = value,
        }
    }

    /// Moments of one row's K coordinates, written into `out`.
    pub fn row_moments_into(&self, side: Side, row: usize, out: &mut [Moments]) {
        assert_eq!(out.len(), self.traits);
        let grid = self.grid(side);
        for (k, slot) in out.iter_mut().enumerate() {
            *slot = grid[row * self.traits + k].moments();
        }
    }

    pub fn row_moments(&self, side: Side, row: usize) -> Vec<Moments> {
        let mut out = vec![Moments { mean: 0.0, variance: 1.0 }; self.traits];
        self.row_moments_into(side, row, &mut out);
        out
    }

    /// Fixed update order: user rows then item rows, row-major over
    /// (row, coordinate).
    pub fn sweep_addresses(&self) -> impl Iterator<Item = FactorAddress> {
        let traits = self.traits;
        let users = (0..self.users).flat_map(move |row| {
            (0..traits).map(move |coordinate| FactorAddress { side: Side::User, row, coordinate })
        });
        let items = (0..self.items).flat_map(move |row| {
            (0..traits).map(move |coordinate| FactorAddress { side: Side::Item, row, coordinate })
        });
        users.chain(items)
    }

    /// Largest |mean| over all factors; +inf if any mean is not finite.
    pub fn max_abs_mean(&self) -> f64 {
        let mut max = 0.0f64;
        for lam in self.u.iter().chain(&self.v) {
            let mean = lam.moments().mean;
            if !mean.is_finite() {
                return f64::INFINITY;
            }
            max = max.max(mean.abs());
        }
        max
    }

    /// Swapped-grid view: users become items and vice versa.
    pub fn transposed(&self) -> Self {
        Self {
            u: self.v.clone(),
            v: self.u.clone(),
            users: self.items,
            items: self.users,
            traits: self.traits,
        }
    }

    fn assert_matches(&self, data: &SparseRatings) {
        assert_eq!(self.users, data.user_count(), "user grid does not match dataset");
        assert_eq!(self.items, data.item_count(), "item grid does not match dataset");
    }
}

/// The standard-normal prior factor (1, 0).
pub fn prior() -> GaussianNatural {
    GaussianNatural::standard_normal()
}

/// One rating's contribution to the coordinate's natural parameters:
/// precision gains E[other_k^2]; mean*precision gains
/// E[other_k] * (rating - sum_{k' != k} E[own_k'] E[other_k']).
/// `own` is the row holding the updated coordinate, `other` the paired row
/// on the opposite side; the formula is symmetric in the two grids.
pub fn child_contribution(
    coordinate: usize,
    rating: f64,
    own: &[Moments],
    other: &[Moments],
) -> Result<ChildContribution> {
    if own.len() != other.len() {
        return Err(Error::DimensionMismatch { expected: own.len(), got: other.len() });
    }
    if coordinate >= own.len() {
        return Err(Error::DimensionMismatch { expected: own.len(), got: coordinate });
    }
    Ok(child_contribution_unchecked(coordinate, rating, own, other))
}

fn child_contribution_unchecked(
    coordinate: usize,
    rating: f64,
    own: &[Moments],
    other: &[Moments],
) -> ChildContribution {
    let mut cross = 0.0;
    for k in 0..own.len() {
        if k != coordinate {
            cross += own[k].mean * other[k].mean;
        }
    }
    ChildContribution {
        precision_add: other[coordinate].second_moment(),
        mtp_add: other[coordinate].mean * (rating - cross),
    }
}

/// Prior plus `scale` times the contributions of the given children
/// (triplet indices). Accumulation order is the order of `children`, with
/// the scale applied per term, so a full child list at scale 1 reproduces
/// the coordinate-ascent target bit for bit.
fn accumulate_target(
    state: &FactorState,
    data: &SparseRatings,
    addr: FactorAddress,
    children: &[usize],
    scale: f64,
) -> GaussianNatural {
    let own = state.row_moments(addr.side, addr.row);
    let mut other = vec![Moments { mean: 0.0, variance: 1.0 }; state.trait_dim()];
    let mut precision = 1.0;
    let mut mtp = 0.0;
    for &idx in children {
        let rating = data.rating(idx);
        let other_row = match addr.side {
            Side::User => rating.item,
            Side::Item => rating.user,
        };
        state.row_moments_into(addr.side.other(), other_row, &mut other);
        let c = child_contribution_unchecked(addr.coordinate, rating.value, &own, &other);
        precision += scale * c.precision_add;
        mtp += scale * c.mtp_add;
    }
    GaussianNatural::raw(precision, mtp)
}

/// The component-wise VB optimum: prior plus contributions of all children.
pub fn full_vb_target(
    state: &FactorState,
    data: &SparseRatings,
    addr: FactorAddress,
) -> GaussianNatural {
    state.assert_matches(data);
    accumulate_target(state, data, addr, data.children(addr.side, addr.row), 1.0)
}

/// Unbiased stochastic estimate of `full_vb_target` from a child subsample:
/// prior + (N_i / C) * sum of sampled contributions. `sampled_children`
/// holds positions into the factor's child list.
pub fn lambda_temp(
    state: &FactorState,
    data: &SparseRatings,
    addr: FactorAddress,
    sampled_children: &[usize],
    child_total: usize,
) -> Result<GaussianNatural> {
    if sampled_children.is_empty() {
        return Err(Error::EmptySample);
    }
    let children = data.children(addr.side, addr.row);
    debug_assert_eq!(child_total, children.len());
    let picked: Vec<usize> = sampled_children.iter().map(|&pos| children[pos]).collect();
    let scale = child_total as f64 / sampled_children.len() as f64;
    Ok(accumulate_target(state, data, addr, &picked, scale))
}

/// Stochastic estimate over an explicit set of triplet indices, scaled by
/// N_i / |subset|; the batch-sampling update path.
pub fn lambda_temp_from_triplets(
    state: &FactorState,
    data: &SparseRatings,
    addr: FactorAddress,
    triplet_indices: &[usize],
    child_total: usize,
) -> Result<GaussianNatural> {
    if triplet_indices.is_empty() {
        return Err(Error::EmptySample);
    }
    let scale = child_total as f64 / triplet_indices.len() as f64;
    Ok(accumulate_target(state, data, addr, triplet_indices, scale))
}

/// E_q[(r - u . v)^2], expanded over the factorized moments. Computed as
/// (r - sum_k mu_u mu_v)^2 + sum_k (var_u var_v + var_u mu_v^2 + mu_u^2 var_v),
/// a sum of non-negative terms.
pub fn expected_residual_sq(
    rating: f64,
    user_row: &[Moments],
    item_row: &[Moments],
) -> Result<f64> {
    if user_row.len() != item_row.len() {
        return Err(Error::DimensionMismatch { expected: user_row.len(), got: item_row.len() });
    }
    Ok(expected_residual_sq_unchecked(rating, user_row, item_row))
}

fn expected_residual_sq_unchecked(rating: f64, user_row: &[Moments], item_row: &[Moments]) -> f64 {
    let mut dot = 0.0;
    let mut spread = 0.0;
    for (u, v) in user_row.iter().zip(item_row) {
        dot += u.mean * v.mean;
        spread += u.variance * v.variance
            + u.variance * v.mean * v.mean
            + u.mean * u.mean * v.variance;
    }
    let resid = rating - dot;
    resid * resid + spread
}

/// Posterior-mean prediction sum_k E[u_k] E[v_k].
pub fn predict(user_row: &[Moments], item_row: &[Moments]) -> Result<f64> {
    if user_row.len() != item_row.len() {
        return Err(Error::DimensionMismatch { expected: user_row.len(), got: item_row.len() });
    }
    Ok(user_row.iter().zip(item_row).map(|(u, v)| u.mean * v.mean).sum())
}

/// Evidence lower bound in nats: per-rating Gaussian log-likelihood
/// expectations minus the KL of every factor to its prior. Ratings are
/// accumulated left to right in triplet order, so the value is reproducible
/// for a fixed dataset. Non-finite values are propagated untouched; callers
/// treat them as a divergence signal.
pub fn elbo(state: &FactorState, data: &SparseRatings) -> f64 {
    state.assert_matches(data);
    let k = state.trait_dim();
    let u_moments: Vec<Moments> = state.u.iter().map(GaussianNatural::moments).collect();
    let v_moments: Vec<Moments> = state.v.iter().map(GaussianNatural::moments).collect();

    let mut likelihood = 0.0;
    for r in data.triplets() {
        let user_row = &u_moments[r.user * k..(r.user + 1) * k];
        let item_row = &v_moments[r.item * k..(r.item + 1) * k];
        let ers = expected_residual_sq_unchecked(r.value, user_row, item_row);
        likelihood += -0.5 * (LN_2PI + ers);
    }

    let mut kl = 0.0;
    for lam in state.u.iter().chain(&state.v) {
        kl += lam.kl_to_standard_normal();
    }
    likelihood - kl
}
