//! Satisfaction equilibria of the caching game.
//!
//! The source is satisfied once the delivery probability reaches `delta`;
//! relays best-respond to the offered reward. Pure equilibria fix how many
//! relays cache, mixed equilibria fix a common acceptance probability, and
//! the efficient equilibrium is the mixed one where the source's constraint
//! binds.
//!
//! Rewards returned by the solvers are the exact roots of the relay
//! indifference condition `U_accept = U_reject` under the game model's
//! utilities. The algebraically simplified closed forms are also provided
//! ([`pse_reward_published`], [`mse_reward_published`]); they substitute
//! `e (1 - q_tau)` for `lambda e_s` and therefore differ slightly.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{
    binomial_weights, delivery_share, expected_relay_utility_mixed, expected_source_utility_mixed,
    total_energy, utilities_from_share, GameParams,
};

/// Bisection stops once the bracket is narrower than this.
pub const BISECTION_TOLERANCE: f64 = 1e-6;
/// Hard cap on bisection iterations.
pub const BISECTION_MAX_ITER: usize = 200;
/// Minimum improvement that counts as strict in the dominance check.
pub const DOMINANCE_TOLERANCE: f64 = 1e-9;

/// Reward for one candidate cohort size of a pure equilibrium.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PseEntry {
    pub n_active: u32,
    pub alpha_star: f64,
    /// `alpha_star` lies outside `[0, alpha_max]`.
    pub clamped: bool,
}

/// A pure profile together with the reward that sustains it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PureEquilibrium {
    pub cohort: u32,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseSolution {
    /// Smallest cohort whose delivery probability reaches `delta`.
    pub n_a_min: u32,
    /// One entry per cohort size in `n_a_min..=n`.
    pub entries: Vec<PseEntry>,
    pub feasible: bool,
    /// Cheapest reward at which a pure profile meeting the QoS bound is
    /// stable, and the cohort size it sustains.
    pub selected: Option<PureEquilibrium>,
}

impl PseSolution {
    pub fn entry(&self, n_active: u32) -> Option<&PseEntry> {
        self.entries.iter().find(|e| e.n_active == n_active)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MseSolution {
    params: GameParams,
    /// Smallest common acceptance probability meeting the QoS bound. May
    /// exceed 1, in which case the solution is infeasible.
    pub p_min: f64,
    /// `(1 - q_tau) p_c p` at `p = min(p_min, 1)`.
    pub z_star: f64,
    pub feasible: bool,
    /// Reward at `p_min` when feasible.
    pub alpha_star: Option<f64>,
    pub clamped: bool,
}

impl MseSolution {
    /// Equilibrium reward for an acceptance probability in `[p_min, 1]`.
    pub fn alpha_of_p(&self, p: f64) -> Option<f64> {
        if !self.feasible || p < self.p_min || p > 1.0 {
            return None;
        }
        mse_reward(&self.params, p).ok()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EseSolution {
    pub p_star: f64,
    pub alpha_star: f64,
    /// Delivery probability at `p_star`; equals `delta` up to rounding.
    pub binding_delivery: f64,
    pub clamped: bool,
}

fn is_admissible_reward(params: &GameParams, alpha: f64) -> bool {
    alpha.is_finite() && alpha >= 0.0 && alpha <= params.alpha_max()
}

/// Reward at which a relay facing delivery share `share` is indifferent
/// between accepting and declining:
/// `alpha = (sigma (1 - share) + eta - gamma) / (2 share)`.
pub fn indifference_reward(params: &GameParams, share: f64) -> Result<f64> {
    if !(share > 0.0 && share <= 1.0) {
        return Err(Error::OutOfRange {
            name: "share",
            value: share,
            expected: "in (0, 1]",
        });
    }
    let eta = total_energy(params)?;
    Ok((params.sigma() * (1.0 - share) + eta - params.gamma()) / (2.0 * share))
}

/// `U_accept - U_reject` for a relay racing in a cohort of `cohort`.
pub fn accept_advantage(params: &GameParams, alpha: f64, cohort: u32) -> Result<f64> {
    let eta = total_energy(params)?;
    let share = delivery_share(cohort, params.q_tau())?;
    let (ua, ur) = utilities_from_share(params, alpha, share, eta);
    Ok(ua - ur)
}

/// Size of the stable pure cohort at reward `alpha`: the largest `m` for
/// which caching still pays, i.e. `U_a(m) >= U_r(m)`; every relay outside
/// the cohort would then face `U_a(m + 1) < U_r(m + 1)`. Zero if even a
/// lone relay prefers to decline.
pub fn stable_cohort(params: &GameParams, alpha: f64) -> Result<u32> {
    // the advantage is decreasing in the cohort size
    let mut cohort = 0;
    for m in 1..=params.n() {
        if accept_advantage(params, alpha, m)? >= 0.0 {
            cohort = m;
        } else {
            break;
        }
    }
    Ok(cohort)
}

/// Smallest integer cohort with `1 - q^m >= delta`.
pub fn min_cohort(params: &GameParams) -> Result<u32> {
    let q = params.q_tau();
    if q >= 1.0 {
        return Err(Error::DegenerateFailure);
    }
    if q == 0.0 {
        return Ok(1);
    }
    let ratio = (1.0 - params.delta()).ln() / q.ln();
    let nearest = ratio.round();
    let bound = if (ratio - nearest).abs() <= 1e-12 * nearest.max(1.0) {
        nearest
    } else {
        ratio.ceil()
    };
    Ok(bound.clamp(1.0, u32::MAX as f64) as u32)
}

/// Simplified pure-equilibrium reward, evaluated literally:
/// `[lambda sigma (n - 1 + q^n_a) - n_a (lambda (gamma - e_r - e_t) - e (1 - q))] / (2 lambda (1 - q^n_a))`.
pub fn pse_reward_published(params: &GameParams, n_active: u32) -> Result<f64> {
    if n_active == 0 {
        return Err(Error::EmptyCohort);
    }
    let lambda = params.lambda();
    if lambda == 0.0 {
        return Err(Error::DegenerateRate("pure-equilibrium reward"));
    }
    let q = params.q_tau();
    let qn = q.powi(n_active as i32);
    if qn >= 1.0 {
        return Err(Error::DegenerateFailure);
    }
    let en = params.energy();
    let n = params.n() as f64;
    let na = n_active as f64;
    let num = lambda * params.sigma() * (n - 1.0 + qn)
        - na * (lambda * (params.gamma() - en.e_receive - en.e_transmit) - en.e_store * (1.0 - q));
    Ok(num / (2.0 * lambda * (1.0 - qn)))
}

pub fn solve_pse(params: &GameParams) -> Result<PseSolution> {
    let n_a_min = min_cohort(params)?;
    let q = params.q_tau();
    let entries = (n_a_min..=params.n())
        .map(|m| {
            let alpha_star = indifference_reward(params, delivery_share(m, q)?)?;
            Ok(PseEntry {
                n_active: m,
                alpha_star,
                clamped: !is_admissible_reward(params, alpha_star),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let feasible = n_a_min <= params.n() && entries.iter().any(|e| !e.clamped);

    let selected = if n_a_min > params.n() {
        None
    } else {
        let free_cohort = stable_cohort(params, 0.0)?;
        if free_cohort >= n_a_min {
            Some(PureEquilibrium {
                cohort: free_cohort,
                reward: 0.0,
            })
        } else {
            let threshold = indifference_reward(params, delivery_share(n_a_min, q)?)?;
            is_admissible_reward(params, threshold).then_some(PureEquilibrium {
                cohort: n_a_min,
                reward: threshold,
            })
        }
    };

    Ok(PseSolution {
        n_a_min,
        entries,
        feasible,
        selected,
    })
}

/// `phi` of the mixed game: `(1 - (1 - z)^n) / n` with `z = (1 - q_tau) p_c p`.
fn mixed_share(params: &GameParams, p: f64) -> f64 {
    let n = params.n() as f64;
    expected_source_utility_mixed(p, params).unwrap_or(0.0) / n
}

/// Mixed-equilibrium reward at acceptance probability `p`: the indifference
/// root with the share `(1 - (1 - z)^n) / n`.
pub fn mse_reward(params: &GameParams, p: f64) -> Result<f64> {
    if params.effective_success() <= 0.0 {
        return Err(Error::DegenerateContact);
    }
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::OutOfRange {
            name: "p",
            value: p,
            expected: "in (0, 1]",
        });
    }
    indifference_reward(params, mixed_share(params, p))
}

/// Simplified mixed-equilibrium reward, evaluated literally:
/// `[lambda sigma (n - 1 + (1 - z)^n) - n (lambda (gamma - e_r - e_t) - e (1 - q))] / (2 lambda (1 - (1 - z)^n))`.
pub fn mse_reward_published(params: &GameParams, p: f64) -> Result<f64> {
    let lambda = params.lambda();
    if lambda == 0.0 {
        return Err(Error::DegenerateRate("mixed-equilibrium reward"));
    }
    let q = params.q_tau();
    let z = params.effective_success() * p;
    let n = params.n() as f64;
    let miss = (1.0 - z).powi(params.n() as i32);
    if miss >= 1.0 {
        return Err(Error::DegenerateContact);
    }
    let en = params.energy();
    let num = lambda * params.sigma() * (n - 1.0 + miss)
        - n * (lambda * (params.gamma() - en.e_receive - en.e_transmit) - en.e_store * (1.0 - q));
    Ok(num / (2.0 * lambda * (1.0 - miss)))
}

/// Smallest common acceptance probability meeting the QoS bound,
/// `(1 - (1 - delta)^{1/n}) / ((1 - q_tau) p_c)`.
pub fn min_acceptance(params: &GameParams) -> Result<f64> {
    let s = params.effective_success();
    if s <= 0.0 {
        return Err(Error::DegenerateContact);
    }
    // 1 - (1 - delta)^{1/n}
    let needed = -((-params.delta()).ln_1p() / params.n() as f64).exp_m1();
    Ok(needed / s)
}

pub fn solve_mse(params: &GameParams) -> Result<MseSolution> {
    let p_min = min_acceptance(params)?;
    let feasible = p_min <= 1.0;
    let z_star = params.effective_success() * p_min.min(1.0);
    let alpha_star = if feasible {
        Some(mse_reward(params, p_min)?)
    } else {
        None
    };
    Ok(MseSolution {
        params: *params,
        p_min,
        z_star,
        feasible,
        alpha_star,
        clamped: alpha_star.is_some_and(|a| !is_admissible_reward(params, a)),
    })
}

/// Mixed equilibrium at which the source's constraint holds with equality.
pub fn solve_ese(params: &GameParams) -> Result<EseSolution> {
    let mse = solve_mse(params)?;
    let alpha_star = mse.alpha_star.ok_or_else(|| {
        Error::Infeasible(format!(
            "acceptance probability {:.6} required to reach delta = {}",
            mse.p_min,
            params.delta()
        ))
    })?;
    Ok(EseSolution {
        p_star: mse.p_min,
        alpha_star,
        binding_delivery: expected_source_utility_mixed(mse.p_min, params)?,
        clamped: mse.clamped,
    })
}

/// Reward at which a relay whose opponents accept with `p` is indifferent
/// in its own acceptance probability, i.e. the root of
/// [`own_strategy_gradient`](crate::model::own_strategy_gradient) in the
/// reward. Uses the expected share `E[phi(K + 1)]`, `K ~ Bin(n - 1, p)`.
pub fn own_strategy_indifference_reward(params: &GameParams, p: f64) -> Result<f64> {
    let q = params.q_tau();
    let mut share = 0.0;
    for (k, w) in binomial_weights(params.n() - 1, p).iter().enumerate() {
        share += w * delivery_share(k as u32 + 1, q)?;
    }
    indifference_reward(params, share)
}

/// Variable swept by [`satisfaction_region`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegionAxis {
    Tau,
    Lambda,
}

fn with_axis(params: &GameParams, axis: RegionAxis, value: f64) -> Result<GameParams> {
    match axis {
        RegionAxis::Tau => params.with_tau(value),
        RegionAxis::Lambda => params.with_lambda(value),
    }
}

/// Smallest value of `axis` in `range` at which the mixed delivery
/// probability with acceptance `fixed_p` reaches `delta`, to within
/// [`BISECTION_TOLERANCE`]. `None` if the bound is never reached in range.
pub fn satisfaction_region(
    params: &GameParams,
    axis: RegionAxis,
    range: (f64, f64),
    fixed_p: f64,
) -> Result<Option<f64>> {
    let (lo, hi) = range;
    let lower_ok = match axis {
        RegionAxis::Tau => lo > 0.0,
        RegionAxis::Lambda => lo >= 0.0,
    };
    if !(lo.is_finite() && hi.is_finite() && lo < hi && lower_ok) {
        return Err(Error::InvalidRange { lo, hi });
    }
    let delta = params.delta();
    let satisfied = |x: f64| -> Result<bool> {
        Ok(expected_source_utility_mixed(fixed_p, &with_axis(params, axis, x)?)? >= delta)
    };
    if satisfied(lo)? {
        return Ok(Some(lo));
    }
    if !satisfied(hi)? {
        return Ok(None);
    }
    let (mut below, mut above) = (lo, hi);
    for _ in 0..BISECTION_MAX_ITER {
        if above - below <= BISECTION_TOLERANCE {
            break;
        }
        let mid = 0.5 * (below + above);
        if satisfied(mid)? {
            above = mid;
        } else {
            below = mid;
        }
    }
    Ok(Some(above))
}

/// Outcome of comparing a candidate profile against the efficient equilibrium.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dominance {
    /// Change in the source's margin `E[U_s] - delta`.
    pub source_gain: f64,
    /// Change in a relay's expected utility.
    pub relay_gain: f64,
    pub dominates: bool,
}

/// Whether `(candidate_p, candidate_alpha)` weakly improves both the
/// source's satisfaction margin and the relays' expected utility relative
/// to `ese`, strictly improving at least one by more than
/// [`DOMINANCE_TOLERANCE`].
pub fn pareto_dominance_check(
    candidate_p: f64,
    candidate_alpha: f64,
    ese: &EseSolution,
    params: &GameParams,
) -> Result<Dominance> {
    let source_gain = expected_source_utility_mixed(candidate_p, params)?
        - expected_source_utility_mixed(ese.p_star, params)?;
    let relay_gain = expected_relay_utility_mixed(candidate_p, candidate_alpha, params)?
        - expected_relay_utility_mixed(ese.p_star, ese.alpha_star, params)?;
    let weak = source_gain >= -DOMINANCE_TOLERANCE && relay_gain >= -DOMINANCE_TOLERANCE;
    let strict = source_gain > DOMINANCE_TOLERANCE || relay_gain > DOMINANCE_TOLERANCE;
    Ok(Dominance {
        source_gain,
        relay_gain,
        dominates: weak && strict,
    })
}

/// One evaluated grid point of [`pareto_grid_scan`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridCandidate {
    pub p: f64,
    pub alpha: f64,
    pub dominance: Dominance,
}

/// Checks every point of an evenly spaced `points x points` grid over
/// `[0, 1] x [0, alpha_max]`. Results are in row-major order (p outer).
pub fn pareto_grid_scan(
    ese: &EseSolution,
    params: &GameParams,
    points: usize,
) -> Result<Vec<GridCandidate>> {
    if points < 2 {
        return Err(Error::OutOfRange {
            name: "grid points",
            value: points as f64,
            expected: ">= 2",
        });
    }
    let step = 1.0 / (points - 1) as f64;
    (0..points * points)
        .into_par_iter()
        .map(|idx| {
            let (i, j) = (idx / points, idx % points);
            let p = i as f64 * step;
            let alpha = j as f64 * step * params.alpha_max();
            Ok(GridCandidate {
                p,
                alpha,
                dominance: pareto_dominance_check(p, alpha, ese, params)?,
            })
        })
        .collect()
}
