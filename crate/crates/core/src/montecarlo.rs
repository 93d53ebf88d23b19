//! Event-level simulation of one file lifetime.
//!
//! Source-relay and relay-destination contacts are exponential with rate
//! `lambda`. Relays that cache the file race to the destination; the first
//! contact within the window wins. Every trial draws from its own ChaCha
//! stream keyed by `(seed, trial index)`, so estimates are identical whether
//! trials run serially or in parallel.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{check_range, Error, Result};
use crate::model::{pure_utilities, total_energy, GameParams};

/// How much of the lifetime a relay has left to reach the destination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ContactMode {
    /// Every relay decides on the offer, and a relay holding the file gets
    /// a full `tau` window to meet the destination. Matches the closed forms.
    #[default]
    ModelConsistent,
    /// Only relays that met the source decide, and they only have the
    /// lifetime left after that meeting.
    Physical,
}

impl fmt::Display for ContactMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ContactMode::ModelConsistent => "model",
            ContactMode::Physical => "physical",
        })
    }
}

impl FromStr for ContactMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "model" => Ok(ContactMode::ModelConsistent),
            "physical" => Ok(ContactMode::Physical),
            other => Err(format!(
                "unknown contact mode `{other}` (expected model|physical)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeOutcome {
    /// Relay met the source within the lifetime.
    pub contacted_source: Vec<bool>,
    /// Relay accepted the offer.
    pub accepted: Vec<bool>,
    pub delivery_time: Option<f64>,
    pub winner: Option<usize>,
    pub per_relay_utility: Vec<f64>,
    pub delivered: bool,
    /// Accepting relays counted in the utilities.
    pub n_accept: u32,
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateWithCI {
    pub mean: f64,
    /// Sample standard deviation over `sqrt(trials)`; zero for one trial.
    pub std_error: f64,
    pub trials: u64,
    pub confidence: f64,
}

impl EstimateWithCI {
    pub const DEFAULT_CONFIDENCE: f64 = 0.95;

    pub fn from_samples(samples: &[f64], confidence: f64) -> Self {
        let trials = samples.len() as u64;
        let mean = samples.iter().sum::<f64>() / trials as f64;
        let std_error = if trials > 1 {
            let ss: f64 = samples.iter().map(|x| (x - mean) * (x - mean)).sum();
            (ss / (trials - 1) as f64).sqrt() / (trials as f64).sqrt()
        } else {
            0.0
        };
        Self {
            mean,
            std_error,
            trials,
            confidence,
        }
    }

    /// Half width of the two-sided normal interval at `confidence`.
    pub fn half_width(&self) -> f64 {
        let z = Normal::standard().inverse_cdf(0.5 + self.confidence / 2.0);
        z * self.std_error
    }

    pub fn interval(&self) -> (f64, f64) {
        let h = self.half_width();
        (self.mean - h, self.mean + h)
    }

    /// `|mean - value| <= k` standard errors.
    pub fn agrees_with(&self, value: f64, k: f64) -> bool {
        (self.mean - value).abs() <= k * self.std_error
    }
}

/// Independent RNG for trial `index` under master `seed`.
pub fn trial_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

pub fn simulate_episode(
    params: &GameParams,
    accept_probs: &[f64],
    reward: f64,
    rng_seed: u64,
    mode: ContactMode,
) -> Result<EpisodeOutcome> {
    simulate_episode_with(
        params,
        accept_probs,
        reward,
        mode,
        &mut trial_rng(rng_seed, 0),
    )
}

/// [`simulate_episode`] drawing from a caller-supplied generator.
pub fn simulate_episode_with<R: Rng + ?Sized>(
    params: &GameParams,
    accept_probs: &[f64],
    reward: f64,
    mode: ContactMode,
    rng: &mut R,
) -> Result<EpisodeOutcome> {
    let n = params.n() as usize;
    if accept_probs.len() != n {
        return Err(Error::InconsistentProfile(format!(
            "{} acceptance probabilities for {n} relays",
            accept_probs.len()
        )));
    }
    for &p in accept_probs {
        check_range("accept_prob", p, (0.0..=1.0).contains(&p), "in [0, 1]")?;
    }
    check_range(
        "reward",
        reward,
        reward >= 0.0 && reward <= params.alpha_max(),
        "in [0, alpha_max]",
    )?;
    let eta = total_energy(params)?;
    let tau = params.tau();
    let exp = Exp::new(params.lambda()).map_err(|_| Error::DegenerateRate("contact sampling"))?;

    let mut contacted_source = Vec::with_capacity(n);
    let mut accepted = Vec::with_capacity(n);
    let mut best: Option<(f64, usize)> = None;
    for (i, &p) in accept_probs.iter().enumerate() {
        let met_at = exp.sample(rng);
        let coin: f64 = rng.random();
        let dest_after = exp.sample(rng);
        let contacted = met_at <= tau;
        let accepts = match mode {
            ContactMode::ModelConsistent => coin < p,
            ContactMode::Physical => contacted && coin < p,
        };
        contacted_source.push(contacted);
        accepted.push(accepts);
        if !(contacted && accepts) {
            continue;
        }
        let arrival = match mode {
            ContactMode::ModelConsistent => dest_after,
            ContactMode::Physical => met_at + dest_after,
        };
        // strict comparison: exact ties go to the lowest index
        if arrival <= tau && best.is_none_or(|(t, _)| arrival < t) {
            best = Some((arrival, i));
        }
    }

    let n_accept = accepted.iter().filter(|&&a| a).count() as u32;
    let (u_accept, _) = if n_accept > 0 {
        pure_utilities(params, reward, n_accept, eta)?
    } else {
        (f64::NAN, f64::NAN)
    };
    let (_, u_reject) = pure_utilities(params, reward, n_accept + 1, eta)?;
    let per_relay_utility = (0..n)
        .map(|i| {
            if accepted[i] {
                u_accept
            } else if mode == ContactMode::Physical && !contacted_source[i] {
                0.0
            } else {
                u_reject
            }
        })
        .collect();

    Ok(EpisodeOutcome {
        contacted_source,
        accepted,
        delivery_time: best.map(|(t, _)| t),
        winner: best.map(|(_, i)| i),
        per_relay_utility,
        delivered: best.is_some(),
        n_accept,
    })
}

fn check_trials(trials: u64) -> Result<()> {
    check_range("trials", trials as f64, trials >= 1, ">= 1")
}

fn run_trials<F>(trials: u64, seed: u64, f: F) -> Result<Vec<f64>>
where
    F: Fn(&mut ChaCha8Rng) -> Result<f64> + Sync,
{
    (0..trials)
        .into_par_iter()
        .map(|t| f(&mut trial_rng(seed, t)))
        .collect()
}

/// Empirical delivery frequency when every relay accepts with `accept_prob`.
pub fn estimate_delivery(
    params: &GameParams,
    accept_prob: f64,
    trials: u64,
    seed: u64,
    mode: ContactMode,
) -> Result<EstimateWithCI> {
    check_trials(trials)?;
    let probs = vec![accept_prob; params.n() as usize];
    // the reward does not affect delivery
    let samples = run_trials(trials, seed, |rng| {
        let out = simulate_episode_with(params, &probs, 0.0, mode, rng)?;
        Ok(if out.delivered { 1.0 } else { 0.0 })
    })?;
    Ok(EstimateWithCI::from_samples(
        &samples,
        EstimateWithCI::DEFAULT_CONFIDENCE,
    ))
}

/// Empirical mean utility of relay 0 when every relay accepts with
/// `accept_prob` and the source offers `reward`.
pub fn estimate_relay_utility(
    params: &GameParams,
    accept_prob: f64,
    reward: f64,
    trials: u64,
    seed: u64,
    mode: ContactMode,
) -> Result<EstimateWithCI> {
    check_trials(trials)?;
    let probs = vec![accept_prob; params.n() as usize];
    let samples = run_trials(trials, seed, |rng| {
        Ok(simulate_episode_with(params, &probs, reward, mode, rng)?.per_relay_utility[0])
    })?;
    Ok(EstimateWithCI::from_samples(
        &samples,
        EstimateWithCI::DEFAULT_CONFIDENCE,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{expected_source_utility_mixed, EnergyModel};

    #[test]
    fn episode_invariants_hold() {
        let params = GameParams::reference();
        let probs = [0.2, 0.9, 0.5, 1.0, 0.0, 0.3, 0.7];
        for seed in 0..500 {
            for mode in [ContactMode::ModelConsistent, ContactMode::Physical] {
                let out = simulate_episode(&params, &probs, 1.0, seed, mode).unwrap();
                assert_eq!(out.winner.is_some(), out.delivered);
                assert_eq!(out.delivery_time.is_some(), out.delivered);
                if let Some(w) = out.winner {
                    assert!(out.contacted_source[w] && out.accepted[w]);
                    assert!(out.delivery_time.unwrap() <= params.tau());
                }
                assert!(!out.accepted[4]);
                if mode == ContactMode::Physical {
                    for i in 0..7 {
                        assert!(out.contacted_source[i] || !out.accepted[i]);
                    }
                }
            }
        }
    }

    #[test]
    fn nobody_accepts() {
        let params = GameParams::reference();
        for seed in 0..50 {
            let out = simulate_episode(&params, &[0.0; 7], 0.5, seed, ContactMode::ModelConsistent)
                .unwrap();
            assert!(!out.delivered);
            assert_eq!(out.n_accept, 0);
            // decliners face a lone-relay share
            assert!(out
                .per_relay_utility
                .iter()
                .all(|&u| u == out.per_relay_utility[0]));
        }
    }

    #[test]
    fn no_contact_episode() {
        let params = GameParams::reference().with_lambda(1e-12).unwrap();
        let out =
            simulate_episode(&params, &[1.0; 7], 0.5, 3, ContactMode::ModelConsistent).unwrap();
        assert!(!out.delivered);
        assert!(out.contacted_source.iter().all(|c| !c));
        let eta = total_energy(&params).unwrap();
        for &u in &out.per_relay_utility {
            // phi ~ 0 so the accept utility is -sigma - eta
            assert!((u + params.sigma() + eta).abs() < 1e-6);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let params = GameParams::reference();
        let probs = [0.5; 7];
        let a = simulate_episode(&params, &probs, 1.0, 42, ContactMode::Physical).unwrap();
        let b = simulate_episode(&params, &probs, 1.0, 42, ContactMode::Physical).unwrap();
        assert_eq!(a, b);
        let e1 = estimate_delivery(&params, 0.3, 2000, 9, ContactMode::ModelConsistent).unwrap();
        let e2 = estimate_delivery(&params, 0.3, 2000, 9, ContactMode::ModelConsistent).unwrap();
        assert_eq!(e1, e2);
    }

    #[test]
    fn input_validation() {
        let params = GameParams::reference();
        assert!(simulate_episode(&params, &[0.5; 6], 1.0, 0, ContactMode::default()).is_err());
        assert!(simulate_episode(&params, &[1.5; 7], 1.0, 0, ContactMode::default()).is_err());
        assert!(simulate_episode(&params, &[0.5; 7], 6.0, 0, ContactMode::default()).is_err());
        assert!(estimate_delivery(&params, 0.5, 0, 0, ContactMode::default()).is_err());
        let stuck = params.with_lambda(0.0).unwrap();
        assert!(simulate_episode(&stuck, &[0.5; 7], 1.0, 0, ContactMode::default()).is_err());
    }

    #[test]
    fn zero_acceptance_estimate() {
        let params = GameParams::reference();
        let est = estimate_delivery(&params, 0.0, 1000, 1, ContactMode::ModelConsistent).unwrap();
        assert_eq!(est.mean, 0.0);
        assert_eq!(est.std_error, 0.0);
    }

    #[test]
    fn single_trial_is_bernoulli() {
        let params = GameParams::reference();
        for seed in 0..20 {
            let est =
                estimate_delivery(&params, 0.7, 1, seed, ContactMode::ModelConsistent).unwrap();
            assert!(est.mean == 0.0 || est.mean == 1.0);
            assert_eq!(est.trials, 1);
        }
    }

    #[test]
    fn single_relay_delivery_by_mode() {
        let params = GameParams::reference().with_n(1).unwrap();
        let trials = 100_000;
        let model =
            estimate_delivery(&params, 1.0, trials, 11, ContactMode::ModelConsistent).unwrap();
        let expected_model = expected_source_utility_mixed(1.0, &params).unwrap();
        assert!(
            model.agrees_with(expected_model, 3.0),
            "{model:?} vs {expected_model}"
        );

        // the residual window gives P(S + D <= tau) = 1 - (1 + lambda tau) e^{-lambda tau}
        let physical = estimate_delivery(&params, 1.0, trials, 11, ContactMode::Physical).unwrap();
        let x = params.lambda() * params.tau();
        let expected_physical = 1.0 - (1.0 + x) * (-x).exp();
        assert!(
            physical.agrees_with(expected_physical, 3.0),
            "{physical:?} vs {expected_physical}"
        );
        assert!(physical.mean < model.mean);
    }

    #[test]
    fn single_relay_utility_success_factor() {
        let params = GameParams::reference()
            .with_n(1)
            .unwrap()
            .with_regrets(0.0, 0.0)
            .unwrap()
            .with_energy(EnergyModel::zero());
        let alpha = 2.0;
        let u =
            estimate_relay_utility(&params, 1.0, alpha, 20_000, 5, ContactMode::ModelConsistent)
                .unwrap();
        // one accepting relay: alpha * phi(1) = alpha (1 - q_tau)
        let expected = alpha * (1.0 - params.q_tau());
        assert!((u.mean - expected).abs() < 1e-12);

        let free = estimate_relay_utility(&params, 0.0, 0.0, 500, 5, ContactMode::ModelConsistent)
            .unwrap();
        assert_eq!(free.mean, 0.0);
    }

    #[test]
    fn estimate_statistics() {
        let est = EstimateWithCI::from_samples(&[0.0, 1.0, 1.0, 0.0], 0.95);
        assert_eq!(est.mean, 0.5);
        // sample sd = sqrt(1/3), se = sd / 2
        assert!((est.std_error - (1.0f64 / 3.0).sqrt() / 2.0).abs() < 1e-15);
        assert!((est.half_width() - 1.959_963_984_540_054 * est.std_error).abs() < 1e-9);
        let (lo, hi) = est.interval();
        assert!(lo < 0.5 && hi > 0.5);
    }

    #[test]
    fn contact_mode_parsing() {
        assert_eq!(
            "model".parse::<ContactMode>().unwrap(),
            ContactMode::ModelConsistent
        );
        assert_eq!(
            "physical".parse::<ContactMode>().unwrap(),
            ContactMode::Physical
        );
        assert!("residual".parse::<ContactMode>().is_err());
        assert_eq!(ContactMode::Physical.to_string(), "physical");
    }
}
