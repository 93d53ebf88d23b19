//! Contact process, energy budget and utilities of the source/relay game.
//!
//! Contacts between any two nodes follow a Poisson process of rate `lambda`;
//! a file lives for `tau` time units. Relays that accept the source's offer
//! cache the file and race to be the first to hand it to the destination.
//! Every function here is pure and deterministic.

use statrs::function::factorial::ln_binomial;

use crate::error::{check_range, Error, Result};

/// Largest cohort accepted by [`delivery_share_bruteforce`].
pub const BRUTEFORCE_MAX_COHORT: u32 = 64;

/// Pairwise meeting rate and file lifetime.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactModel {
    lambda: f64,
    tau: f64,
}

impl ContactModel {
    pub fn new(lambda: f64, tau: f64) -> Result<Self> {
        check_range(
            "lambda",
            lambda,
            lambda >= 0.0 && lambda.is_finite(),
            ">= 0",
        )?;
        check_range("tau", tau, tau > 0.0 && tau.is_finite(), "> 0")?;
        Ok(Self { lambda, tau })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }
}

/// Per-state energy costs of a relay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyModel {
    /// Caching cost per unit time.
    pub e_store: f64,
    /// Cost of receiving the file from the source.
    pub e_receive: f64,
    /// Cost of transmitting the file to the destination.
    pub e_transmit: f64,
}

impl EnergyModel {
    pub fn new(e_store: f64, e_receive: f64, e_transmit: f64) -> Result<Self> {
        check_range("e", e_store, e_store >= 0.0 && e_store.is_finite(), ">= 0")?;
        check_range(
            "e_r",
            e_receive,
            e_receive >= 0.0 && e_receive.is_finite(),
            ">= 0",
        )?;
        check_range(
            "e_t",
            e_transmit,
            e_transmit >= 0.0 && e_transmit.is_finite(),
            ">= 0",
        )?;
        Ok(Self {
            e_store,
            e_receive,
            e_transmit,
        })
    }

    pub fn zero() -> Self {
        Self {
            e_store: 0.0,
            e_receive: 0.0,
            e_transmit: 0.0,
        }
    }
}

/// Full game configuration.
///
/// Construct through [`GameParams::new`] or start from
/// [`GameParams::reference`] and adjust with the `with_*` methods; each of
/// them re-validates the invariants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GameParams {
    contact: ContactModel,
    energy: EnergyModel,
    n: u32,
    sigma: f64,
    gamma: f64,
    delta: f64,
    alpha_max: f64,
}

impl GameParams {
    pub fn new(
        contact: ContactModel,
        energy: EnergyModel,
        n: u32,
        sigma: f64,
        gamma: f64,
        delta: f64,
        alpha_max: f64,
    ) -> Result<Self> {
        check_range("n", n as f64, n >= 1, ">= 1")?;
        check_range("sigma", sigma, sigma >= 0.0 && sigma.is_finite(), ">= 0")?;
        check_range("gamma", gamma, gamma >= 0.0 && gamma.is_finite(), ">= 0")?;
        check_range("delta", delta, delta > 0.0 && delta < 1.0, "in (0, 1)")?;
        check_range(
            "alpha_max",
            alpha_max,
            alpha_max > 0.0 && alpha_max.is_finite(),
            "> 0",
        )?;
        Ok(Self {
            contact,
            energy,
            n,
            sigma,
            gamma,
            delta,
            alpha_max,
        })
    }

    /// Reference scenario: seven relays, `lambda = 0.015`, `tau = 100`,
    /// `delta = 0.21`, `sigma = 0.2`, `gamma = 0.15`, `e = 3.8e-5`,
    /// `e_r = e_t = 2e-5`, `alpha_max = 5`.
    pub fn reference() -> Self {
        Self {
            contact: ContactModel {
                lambda: 0.015,
                tau: 100.0,
            },
            energy: EnergyModel {
                e_store: 3.8e-5,
                e_receive: 2e-5,
                e_transmit: 2e-5,
            },
            n: 7,
            sigma: 0.2,
            gamma: 0.15,
            delta: 0.21,
            alpha_max: 5.0,
        }
    }

    pub fn contact(&self) -> ContactModel {
        self.contact
    }

    pub fn energy(&self) -> EnergyModel {
        self.energy
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn alpha_max(&self) -> f64 {
        self.alpha_max
    }

    pub fn lambda(&self) -> f64 {
        self.contact.lambda
    }

    pub fn tau(&self) -> f64 {
        self.contact.tau
    }

    pub fn with_contact(self, contact: ContactModel) -> Self {
        Self { contact, ..self }
    }

    pub fn with_lambda(self, lambda: f64) -> Result<Self> {
        Ok(self.with_contact(ContactModel::new(lambda, self.contact.tau)?))
    }

    pub fn with_tau(self, tau: f64) -> Result<Self> {
        Ok(self.with_contact(ContactModel::new(self.contact.lambda, tau)?))
    }

    pub fn with_energy(self, energy: EnergyModel) -> Self {
        Self { energy, ..self }
    }

    pub fn with_n(self, n: u32) -> Result<Self> {
        Self::new(
            self.contact,
            self.energy,
            n,
            self.sigma,
            self.gamma,
            self.delta,
            self.alpha_max,
        )
    }

    pub fn with_regrets(self, sigma: f64, gamma: f64) -> Result<Self> {
        Self::new(
            self.contact,
            self.energy,
            self.n,
            sigma,
            gamma,
            self.delta,
            self.alpha_max,
        )
    }

    pub fn with_delta(self, delta: f64) -> Result<Self> {
        Self::new(
            self.contact,
            self.energy,
            self.n,
            self.sigma,
            self.gamma,
            delta,
            self.alpha_max,
        )
    }

    pub fn with_alpha_max(self, alpha_max: f64) -> Result<Self> {
        Self::new(
            self.contact,
            self.energy,
            self.n,
            self.sigma,
            self.gamma,
            self.delta,
            alpha_max,
        )
    }

    /// `p_c`, see [`contact_probability`].
    pub fn p_c(&self) -> f64 {
        contact_probability(&self.contact)
    }

    /// `q_tau`, see [`relay_failure_probability`].
    pub fn q_tau(&self) -> f64 {
        relay_failure_probability(&self.contact)
    }

    /// Per-relay probability that an accepting relay both meets the source
    /// and reaches the destination: `(1 - q_tau) p_c`.
    pub fn effective_success(&self) -> f64 {
        (1.0 - self.q_tau()) * self.p_c()
    }
}

/// Pure or mixed play of the relays together with the source's reward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrategyProfile {
    pub n_active: u32,
    pub accept_prob: f64,
    pub reward: f64,
}

impl StrategyProfile {
    pub fn new(params: &GameParams, n_active: u32, accept_prob: f64, reward: f64) -> Result<Self> {
        if n_active > params.n {
            return Err(Error::InconsistentProfile(format!(
                "{n_active} active relays out of {}",
                params.n
            )));
        }
        check_range(
            "accept_prob",
            accept_prob,
            (0.0..=1.0).contains(&accept_prob),
            "in [0, 1]",
        )?;
        check_range(
            "reward",
            reward,
            reward >= 0.0 && reward <= params.alpha_max,
            "in [0, alpha_max]",
        )?;
        Ok(Self {
            n_active,
            accept_prob,
            reward,
        })
    }

    /// Pure profile: `n_active` relays cache at reward `reward`.
    pub fn pure(params: &GameParams, n_active: u32, reward: f64) -> Result<Self> {
        Self::new(params, n_active, 1.0, reward)
    }
}

/// Probability that a relay meets the source within the file lifetime,
/// `1 - exp(-lambda tau)`.
pub fn contact_probability(contact: &ContactModel) -> f64 {
    -(-contact.lambda * contact.tau).exp_m1()
}

/// Probability that an accepting relay never meets the destination within
/// the file lifetime, `exp(-lambda tau)`.
pub fn relay_failure_probability(contact: &ContactModel) -> f64 {
    (-contact.lambda * contact.tau).exp()
}

/// Mean energy spent caching the file, `(e / lambda) (1 - (1 + lambda tau) e^{-lambda tau})`.
pub fn storage_energy(params: &GameParams) -> Result<f64> {
    let lambda = params.lambda();
    if lambda == 0.0 {
        return Err(Error::DegenerateRate("storage energy"));
    }
    let x = lambda * params.tau();
    // 1 - (1 + x) e^{-x}, written to avoid cancellation for small x
    let one_minus_q = -(-x).exp_m1() - x * (-x).exp();
    Ok(params.energy.e_store / lambda * one_minus_q.max(0.0))
}

/// Total cost of cooperating, `eta = e_r + e_t + e_s`.
pub fn total_energy(params: &GameParams) -> Result<f64> {
    Ok(params.energy.e_receive + params.energy.e_transmit + storage_energy(params)?)
}

fn check_probability(name: &'static str, q: f64) -> Result<()> {
    check_range(name, q, (0.0..=1.0).contains(&q), "in [0, 1]")
}

/// `1 - q^m` without cancellation when `q` is close to 1.
fn one_minus_pow(q: f64, m: u32) -> f64 {
    if m == 0 {
        0.0
    } else if q == 0.0 {
        1.0
    } else {
        -(m as f64 * q.ln()).exp_m1()
    }
}

/// Probability that a tagged accepting relay is the first of `n_active`
/// accepting relays to deliver: `(1 - q^n_active) / n_active`.
pub fn delivery_share(n_active: u32, q: f64) -> Result<f64> {
    if n_active == 0 {
        return Err(Error::EmptyCohort);
    }
    check_probability("q", q)?;
    Ok(one_minus_pow(q, n_active) / n_active as f64)
}

/// Term-by-term evaluation of the tie-sharing sum behind [`delivery_share`].
///
/// The tagged relay succeeds with probability `1 - q`; `j - 1` of the other
/// relays also succeed and the win is shared uniformly among the `j`
/// successful relays.
pub fn delivery_share_bruteforce(n_active: u32, q: f64) -> Result<f64> {
    if n_active == 0 {
        return Err(Error::EmptyCohort);
    }
    if n_active > BRUTEFORCE_MAX_COHORT {
        return Err(Error::CohortTooLarge(n_active));
    }
    check_probability("q", q)?;
    let others = n_active - 1;
    let success = 1.0 - q;
    let mut binom: u128 = 1; // C(others, j - 1)
    let mut sum = 0.0;
    for j in 1..=n_active {
        let k = j - 1;
        if k > 0 {
            binom = binom
                .checked_mul((others - k + 1) as u128)
                .ok_or(Error::CohortTooLarge(n_active))?
                / k as u128;
        }
        let term = binom as f64 * success.powi(k as i32) * q.powi((n_active - j) as i32) / j as f64;
        sum += term;
    }
    Ok(success * sum)
}

/// Relay utilities `(accept, reject)` when `cohort` relays share the race.
pub(crate) fn pure_utilities(
    params: &GameParams,
    reward: f64,
    cohort: u32,
    eta: f64,
) -> Result<(f64, f64)> {
    let share = delivery_share(cohort, params.q_tau())?;
    Ok(utilities_from_share(params, reward, share, eta))
}

pub(crate) fn utilities_from_share(
    params: &GameParams,
    reward: f64,
    share: f64,
    eta: f64,
) -> (f64, f64) {
    let accept = reward * share - params.sigma * (1.0 - share) - eta;
    let reject = -reward * share - params.gamma;
    (accept, reject)
}

fn profile_share(profile: &StrategyProfile, params: &GameParams) -> Result<f64> {
    if profile.n_active == 0 {
        return Err(Error::InconsistentProfile(
            "the evaluated relay must be counted in the cohort".into(),
        ));
    }
    delivery_share(profile.n_active, params.q_tau())
}

/// `alpha phi(n_a) - sigma (1 - phi(n_a)) - eta`.
pub fn relay_utility_accept(profile: &StrategyProfile, params: &GameParams) -> Result<f64> {
    let share = profile_share(profile, params)?;
    let eta = total_energy(params)?;
    Ok(utilities_from_share(params, profile.reward, share, eta).0)
}

/// `-alpha phi(n_a) - gamma`.
pub fn relay_utility_reject(profile: &StrategyProfile, params: &GameParams) -> Result<f64> {
    let share = profile_share(profile, params)?;
    Ok(-profile.reward * share - params.gamma)
}

/// Delivery probability of the source when `n_active` relays cache:
/// `n_a phi(n_a) = 1 - q^n_a`, and 0 for an empty cohort.
pub fn source_utility(n_active: u32, q: f64) -> Result<f64> {
    if n_active == 0 {
        check_probability("q", q)?;
        return Ok(0.0);
    }
    Ok(n_active as f64 * delivery_share(n_active, q)?)
}

/// Delivery probability when each of the `n` relays accepts with `p`:
/// `1 - (1 - (1 - q_tau) p_c p)^n`.
pub fn expected_source_utility_mixed(p: f64, params: &GameParams) -> Result<f64> {
    check_probability("p", p)?;
    let z = params.effective_success() * p;
    Ok(if z >= 1.0 {
        1.0
    } else {
        -(params.n as f64 * (-z).ln_1p()).exp_m1()
    })
}

/// Binomial(`trials`, `p`) probabilities for 0..=trials.
pub(crate) fn binomial_weights(trials: u32, p: f64) -> Vec<f64> {
    let len = trials as usize + 1;
    if p == 0.0 {
        let mut w = vec![0.0; len];
        w[0] = 1.0;
        return w;
    }
    if p == 1.0 {
        let mut w = vec![0.0; len];
        w[trials as usize] = 1.0;
        return w;
    }
    let (lp, lq) = (p.ln(), (-p).ln_1p());
    (0..=trials)
        .map(|k| {
            (ln_binomial(trials as u64, k as u64) + k as f64 * lp + (trials - k) as f64 * lq).exp()
        })
        .collect()
}

/// Expected utility of a tagged relay that accepts with `own_p` while the
/// other `n - 1` relays accept independently with `others_p`.
///
/// With `k` other relays accepting, an accepting tagged relay races in a
/// cohort of `k + 1`; a declining one is charged against the same `k + 1`
/// share.
pub fn relay_expected_utility(
    own_p: f64,
    others_p: f64,
    alpha: f64,
    params: &GameParams,
) -> Result<f64> {
    check_probability("own_p", own_p)?;
    check_probability("others_p", others_p)?;
    let eta = total_energy(params)?;
    let weights = binomial_weights(params.n - 1, others_p);
    let mut total = 0.0;
    for (k, w) in weights.iter().enumerate() {
        if *w == 0.0 {
            continue;
        }
        let (ua, ur) = pure_utilities(params, alpha, k as u32 + 1, eta)?;
        total += w * (own_p * ua + (1.0 - own_p) * ur);
    }
    Ok(total)
}

/// Expected relay utility when all relays, the tagged one included, accept
/// with the common probability `p`.
pub fn expected_relay_utility_mixed(p: f64, alpha: f64, params: &GameParams) -> Result<f64> {
    relay_expected_utility(p, p, alpha, params)
}

/// Derivative of [`relay_expected_utility`] in the tagged relay's own
/// acceptance probability, others held at `p`. Because the expectation is
/// linear in `own_p`, this is `E[U_a(K + 1) - U_r(K + 1)]` with
/// `K ~ Bin(n - 1, p)`.
pub fn own_strategy_gradient(p: f64, alpha: f64, params: &GameParams) -> Result<f64> {
    Ok(relay_expected_utility(1.0, p, alpha, params)?
        - relay_expected_utility(0.0, p, alpha, params)?)
}
