//! Distributed learning of the satisfaction equilibrium.
//!
//! The source adapts its reward from the delivery indicator alone; each
//! relay runs imitative CODIPAS, tracking one payoff estimate per action and
//! reweighting its acceptance probability by `(1 + L)^estimate`. One
//! iteration is one simulated file lifetime.

use std::io::{self, Write};

use crate::error::{check_range, Error, Result};
use crate::model::GameParams;
use crate::montecarlo::{simulate_episode_with, trial_rng, ContactMode};
use crate::output::format_number;

/// Exponent bound for the strategy ratio, applied before `exp`.
pub const MAX_LOG_RATIO: f64 = 50.0;

/// Step-size sequence indexed by the 0-based iteration `k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RateSchedule {
    Constant(f64),
    /// `scale / (k + 1)`
    Harmonic {
        scale: f64,
    },
    /// `scale / (k + 1)^exponent`
    Power {
        scale: f64,
        exponent: f64,
    },
}

impl RateSchedule {
    pub fn at(&self, k: u64) -> f64 {
        let t = k as f64 + 1.0;
        match *self {
            RateSchedule::Constant(c) => c,
            RateSchedule::Harmonic { scale } => scale / t,
            RateSchedule::Power { scale, exponent } => scale / t.powf(exponent),
        }
    }

    /// Every term lies in `(0, 1]` iff the first one does and the sequence
    /// does not grow.
    fn validate(&self, name: &str) -> Result<()> {
        let (scale, exponent) = match *self {
            RateSchedule::Constant(c) => (c, 0.0),
            RateSchedule::Harmonic { scale } => (scale, 1.0),
            RateSchedule::Power { scale, exponent } => (scale, exponent),
        };
        if !(scale > 0.0 && scale <= 1.0) {
            return Err(Error::InvalidSchedule(format!(
                "{name}: scale {scale} not in (0, 1]"
            )));
        }
        if !(exponent >= 0.0 && exponent.is_finite()) {
            return Err(Error::InvalidSchedule(format!(
                "{name}: exponent {exponent} must be >= 0"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedules {
    /// Source step size.
    pub epsilon: RateSchedule,
    pub m_accept: RateSchedule,
    pub m_reject: RateSchedule,
    pub l_accept: RateSchedule,
    pub l_reject: RateSchedule,
    pub horizon: u64,
}

impl Default for Schedules {
    fn default() -> Self {
        let m = RateSchedule::Power {
            scale: 1.0,
            exponent: 0.6,
        };
        Self {
            epsilon: RateSchedule::Harmonic { scale: 1.0 },
            m_accept: m,
            m_reject: m,
            l_accept: RateSchedule::Constant(0.1),
            l_reject: RateSchedule::Constant(0.1),
            horizon: 5000,
        }
    }
}

impl Schedules {
    pub fn validate(&self) -> Result<()> {
        self.epsilon.validate("epsilon")?;
        self.m_accept.validate("m_accept")?;
        self.m_reject.validate("m_reject")?;
        self.l_accept.validate("l_accept")?;
        self.l_reject.validate("l_reject")?;
        if self.horizon == 0 {
            return Err(Error::InvalidSchedule("horizon must be >= 1".into()));
        }
        Ok(())
    }

    pub fn relay_rates(&self, k: u64) -> RelayRates {
        RelayRates {
            m_accept: self.m_accept.at(k),
            m_reject: self.m_reject.at(k),
            l_accept: self.l_accept.at(k),
            l_reject: self.l_reject.at(k),
        }
    }
}

/// Relay rates for a single iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelayRates {
    pub m_accept: f64,
    pub m_reject: f64,
    pub l_accept: f64,
    pub l_reject: f64,
}

/// How the source's payoff estimate is driven.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SourceRule {
    /// The estimate tracks observed deliveries and the reward moves by
    /// `target - estimate`.
    #[default]
    Feedback,
    /// The estimate is pulled toward the target itself; observations are
    /// ignored. Kept for comparison with the literal recursion.
    Verbatim,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceLearnerState {
    pub alpha: f64,
    pub payoff_estimate: f64,
    /// Target payoff; the QoS threshold.
    pub target: f64,
    pub alpha_max: f64,
    pub step: u64,
}

impl SourceLearnerState {
    /// Reward starts at `alpha_max / 2`, estimate at zero.
    pub fn new(params: &GameParams) -> Self {
        Self {
            alpha: params.alpha_max() / 2.0,
            payoff_estimate: 0.0,
            target: params.delta(),
            alpha_max: params.alpha_max(),
            step: 0,
        }
    }
}

pub fn source_step(
    state: &SourceLearnerState,
    observed_payoff: f64,
    epsilon_k: f64,
    rule: SourceRule,
) -> SourceLearnerState {
    debug_assert!(epsilon_k > 0.0 && epsilon_k <= 1.0);
    let pull = match rule {
        SourceRule::Feedback => observed_payoff,
        SourceRule::Verbatim => state.target,
    };
    let estimate = state.payoff_estimate + epsilon_k * (pull - state.payoff_estimate);
    let alpha = (state.alpha + epsilon_k * (state.target - estimate)).clamp(0.0, state.alpha_max);
    SourceLearnerState {
        alpha,
        payoff_estimate: estimate,
        step: state.step + 1,
        ..*state
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Accept,
    Reject,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelayLearnerState {
    pub accept_prob: f64,
    pub est_accept: f64,
    pub est_reject: f64,
    pub step: u64,
}

impl RelayLearnerState {
    pub fn new(accept_prob: f64) -> Result<Self> {
        check_range(
            "accept_prob",
            accept_prob,
            (0.0..=1.0).contains(&accept_prob),
            "in [0, 1]",
        )?;
        Ok(Self {
            accept_prob,
            est_accept: 0.0,
            est_reject: 0.0,
            step: 0,
        })
    }
}

/// One CODIPAS update. The strategy uses the estimates held before this
/// step's observation.
pub fn relay_step(
    state: &RelayLearnerState,
    realized_utility: f64,
    action_taken: Action,
    rates: &RelayRates,
) -> RelayLearnerState {
    debug_assert!(realized_utility.is_finite());
    let mut next = *state;
    match action_taken {
        Action::Accept => next.est_accept += rates.m_accept * (realized_utility - state.est_accept),
        Action::Reject => next.est_reject += rates.m_reject * (realized_utility - state.est_reject),
    }
    next.accept_prob = reweight(
        state.accept_prob,
        state.est_accept * rates.l_accept.ln_1p(),
        state.est_reject * rates.l_reject.ln_1p(),
    );
    next.step += 1;
    next
}

/// `p w_a / (p w_a + (1 - p) w_r)` with `w = exp(log_w)`, evaluated as
/// `p / (p + (1 - p) exp(log_w_r - log_w_a))`.
fn reweight(p: f64, log_w_accept: f64, log_w_reject: f64) -> f64 {
    if p <= 0.0 || p >= 1.0 {
        return p;
    }
    let d = (log_w_reject - log_w_accept).clamp(-MAX_LOG_RATIO, MAX_LOG_RATIO);
    let next = p / (p + (1.0 - p) * d.exp());
    next.clamp(0.0, 1.0)
}

/// Knobs of the coupled loop beyond the step sizes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearnOptions {
    pub contact_mode: ContactMode,
    pub source_rule: SourceRule,
    /// Defaults to `alpha_max / 2`.
    pub initial_alpha: Option<f64>,
    pub initial_accept_prob: f64,
}

impl Default for LearnOptions {
    fn default() -> Self {
        Self {
            contact_mode: ContactMode::ModelConsistent,
            source_rule: SourceRule::Feedback,
            initial_alpha: None,
            initial_accept_prob: 0.5,
        }
    }
}

/// State after iteration `k` together with what was observed during it.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub k: u64,
    pub alpha: f64,
    pub u_s_est: f64,
    pub accept_probs: Vec<f64>,
    pub utilities: Vec<f64>,
    pub n_accept: u32,
    pub delivered: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub records: Vec<TrajectoryRecord>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&TrajectoryRecord> {
        self.records.last()
    }

    pub fn final_alpha(&self) -> Option<f64> {
        self.last().map(|r| r.alpha)
    }

    pub fn final_mean_accept_prob(&self) -> Option<f64> {
        self.last()
            .map(|r| r.accept_probs.iter().sum::<f64>() / r.accept_probs.len() as f64)
    }

    /// The trailing `window` records (all of them if shorter).
    pub fn tail(&self, window: usize) -> &[TrajectoryRecord] {
        &self.records[self.records.len().saturating_sub(window)..]
    }

    pub fn column_names(&self) -> Vec<String> {
        let n = self.records.first().map_or(0, |r| r.accept_probs.len());
        let mut cols = vec!["k".to_string(), "alpha".into(), "u_s_est".into()];
        cols.extend((1..=n).map(|i| format!("p_{i}")));
        cols.push("n_accept".into());
        cols.push("delivered".into());
        cols
    }

    /// Row cells in [`Self::column_names`] order.
    pub fn rows(&self) -> impl Iterator<Item = Vec<String>> + '_ {
        self.records.iter().map(|r| {
            let mut row = vec![
                r.k.to_string(),
                format_number(r.alpha),
                format_number(r.u_s_est),
            ];
            row.extend(r.accept_probs.iter().map(|&p| format_number(p)));
            row.push(r.n_accept.to_string());
            row.push(u8::from(r.delivered).to_string());
            row
        })
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "{}", self.column_names().join(","))?;
        for row in self.rows() {
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

pub fn run_coupled(params: &GameParams, schedules: &Schedules, seed: u64) -> Result<Trajectory> {
    run_coupled_with(params, schedules, seed, &LearnOptions::default())
}

/// Per iteration: the source publishes its reward, every relay draws its
/// action, one episode is simulated, relays learn from their realized
/// utilities and the source from the delivery indicator. Iteration `k`
/// draws from stream `k` of `seed`.
pub fn run_coupled_with(
    params: &GameParams,
    schedules: &Schedules,
    seed: u64,
    options: &LearnOptions,
) -> Result<Trajectory> {
    schedules.validate()?;
    let mut source = SourceLearnerState::new(params);
    if let Some(a) = options.initial_alpha {
        check_range(
            "initial_alpha",
            a,
            (0.0..=params.alpha_max()).contains(&a),
            "in [0, alpha_max]",
        )?;
        source.alpha = a;
    }
    let relay0 = RelayLearnerState::new(options.initial_accept_prob)?;
    let mut relays = vec![relay0; params.n() as usize];
    let mut probs: Vec<f64> = relays.iter().map(|r| r.accept_prob).collect();
    let mut records = Vec::with_capacity(schedules.horizon as usize);

    for k in 0..schedules.horizon {
        let mut rng = trial_rng(seed, k);
        let episode =
            simulate_episode_with(params, &probs, source.alpha, options.contact_mode, &mut rng)?;
        let rates = schedules.relay_rates(k);
        for (i, relay) in relays.iter_mut().enumerate() {
            // a relay the source never met received no offer
            if options.contact_mode == ContactMode::Physical && !episode.contacted_source[i] {
                continue;
            }
            let action = if episode.accepted[i] {
                Action::Accept
            } else {
                Action::Reject
            };
            *relay = relay_step(relay, episode.per_relay_utility[i], action, &rates);
        }
        let observed = if episode.delivered { 1.0 } else { 0.0 };
        source = source_step(
            &source,
            observed,
            schedules.epsilon.at(k),
            options.source_rule,
        );
        for (p, relay) in probs.iter_mut().zip(&relays) {
            *p = relay.accept_prob;
        }
        records.push(TrajectoryRecord {
            k,
            alpha: source.alpha,
            u_s_est: source.payoff_estimate,
            accept_probs: probs.clone(),
            utilities: episode.per_relay_utility,
            n_accept: episode.n_accept,
            delivered: episode.delivered,
        });
    }
    Ok(Trajectory { records })
}
