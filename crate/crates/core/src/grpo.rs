//! Group-relative advantage and objective math.
//!
//! Rewards are binary. Advantages are mean-centered within the group and are
//! not divided by the group standard deviation. The objective is the
//! token-averaged clipped surrogate weighted by a truncated importance ratio
//! `min(rho, eta)`; that weight is treated as a constant when differentiating.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::PromptId;

/// Largest population `brute_force_select` will enumerate.
pub const BRUTE_FORCE_LIMIT: usize = 20;

/// `G` binary rewards for one prompt, with per-response token counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RolloutGroup {
    pub prompt_id: PromptId,
    pub rewards: Vec<bool>,
    pub token_counts: Vec<u32>,
}

impl RolloutGroup {
    pub fn new(prompt_id: PromptId, rewards: Vec<bool>, token_counts: Vec<u32>) -> Result<Self> {
        ensure!(rewards.len() >= 2, Validation, "group needs at least 2 rollouts, got {}", rewards.len());
        ensure!(
            rewards.len() == token_counts.len(),
            Validation,
            "{} rewards but {} token counts",
            rewards.len(),
            token_counts.len()
        );
        ensure!(token_counts.iter().all(|&t| t > 0), Validation, "token counts must be positive");
        Ok(Self { prompt_id, rewards, token_counts })
    }

    pub fn group_size(&self) -> usize {
        self.rewards.len()
    }

    /// Fraction of rollouts with reward 1.
    pub fn pass_rate(&self) -> f64 {
        pass_rate(&self.rewards)
    }

    pub fn is_zero_variance(&self) -> bool {
        let first = self.rewards[0];
        self.rewards.iter().all(|&r| r == first)
    }

    pub fn advantages(&self) -> AdvantageGroup {
        // Length was validated at construction.
        compute_advantages(&self.rewards).expect("validated group")
    }
}

/// Per-response advantages for one group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageGroup {
    pub advantages: Vec<f64>,
    pub pass_rate: f64,
    pub zero_variance: bool,
}

impl AdvantageGroup {
    pub fn len(&self) -> usize {
        self.advantages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.advantages.is_empty()
    }
}

/// Hyperparameters of the clipped, truncated objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveParams {
    /// Cap on the importance weight.
    pub eta: f64,
    pub eps_low: f64,
    pub eps_high: f64,
}

impl Default for ObjectiveParams {
    fn default() -> Self {
        Self { eta: 2.0, eps_low: 0.2, eps_high: 0.2 }
    }
}

impl ObjectiveParams {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.eps_low > 0.0 && self.eps_low < 1.0,
            Validation,
            "eps_low must lie in (0,1), got {}",
            self.eps_low
        );
        ensure!(self.eps_high > 0.0 && self.eps_high.is_finite(), Validation, "eps_high must be positive, got {}", self.eps_high);
        ensure!(self.eta > 1.0 && self.eta.is_finite(), Validation, "eta must exceed 1, got {}", self.eta);
        ensure!(
            self.eta >= 1.0 + self.eps_high,
            Validation,
            "eta ({}) must be at least 1 + eps_high ({})",
            self.eta,
            1.0 + self.eps_high
        );
        Ok(())
    }

    pub fn clip(&self, rho: f64) -> f64 {
        rho.clamp(1.0 - self.eps_low, 1.0 + self.eps_high)
    }

    /// Truncated importance weight `min(rho, eta)`.
    pub fn weight(&self, rho: f64) -> f64 {
        rho.min(self.eta)
    }
}

/// Token-level probability ratios, one row per response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenRatios(pub Vec<Vec<f64>>);

impl TokenRatios {
    pub fn total_tokens(&self) -> usize {
        self.0.iter().map(Vec::len).sum()
    }
}

pub fn pass_rate(rewards: &[bool]) -> f64 {
    rewards.iter().filter(|&&r| r).count() as f64 / rewards.len() as f64
}

/// `A_i = r_i - mean(r)`.
pub fn compute_advantages(rewards: &[bool]) -> Result<AdvantageGroup> {
    ensure!(rewards.len() >= 2, Validation, "advantages need at least 2 rewards, got {}", rewards.len());
    let mean = pass_rate(rewards);
    let advantages = rewards.iter().map(|&r| f64::from(u8::from(r)) - mean).collect();
    Ok(AdvantageGroup { advantages, pass_rate: mean, zero_variance: mean == 0.0 || mean == 1.0 })
}

fn check_unit(p: f64, what: &str) -> Result<()> {
    ensure!((0.0..=1.0).contains(&p), Validation, "{what} must lie in [0,1], got {p}");
    Ok(())
}

/// Reward variance `p(1-p)` of a Bernoulli prompt.
pub fn learnability(p: f64) -> Result<f64> {
    check_unit(p, "pass rate")?;
    Ok(p * (1.0 - p))
}

/// Distance of a pass rate from 0.5.
pub fn delta(p: f64) -> Result<f64> {
    check_unit(p, "pass rate")?;
    Ok((p - 0.5).abs())
}

/// Flat mean of `|A_i|` over every response of every group.
pub fn mean_abs_advantage(groups: &[AdvantageGroup]) -> Result<f64> {
    let n: usize = groups.iter().map(AdvantageGroup::len).sum();
    ensure!(n > 0, Validation, "mean |A| of an empty set of groups");
    let total: f64 = groups.iter().flat_map(|g| g.advantages.iter()).map(|a| a.abs()).sum();
    Ok(total / n as f64)
}

/// Clipped surrogate `min(rho*A, clip(rho)*A)` without the weight.
pub fn surrogate(rho: f64, adv: f64, params: &ObjectiveParams) -> f64 {
    (rho * adv).min(params.clip(rho) * adv)
}

/// Whether the surrogate currently depends on `rho` (derivative `A` rather than 0).
pub fn surrogate_active(rho: f64, adv: f64, params: &ObjectiveParams) -> bool {
    let lo = 1.0 - params.eps_low;
    let hi = 1.0 + params.eps_high;
    (lo..=hi).contains(&rho) || rho * adv <= params.clip(rho) * adv
}

/// One summand of the objective: `min(rho, eta) * surrogate`.
pub fn token_term(rho: f64, adv: f64, params: &ObjectiveParams) -> f64 {
    params.weight(rho) * surrogate(rho, adv, params)
}

/// Derivative of [`token_term`] with respect to `rho`, holding the weight fixed.
pub fn token_term_grad(rho: f64, adv: f64, params: &ObjectiveParams) -> f64 {
    if adv == 0.0 || !surrogate_active(rho, adv, params) {
        0.0
    } else {
        params.weight(rho) * adv
    }
}

fn check_shapes(ratios: &TokenRatios, advantages: &AdvantageGroup) -> Result<()> {
    ensure!(
        ratios.0.len() == advantages.len(),
        Validation,
        "{} ratio rows for {} advantages",
        ratios.0.len(),
        advantages.len()
    );
    ensure!(ratios.0.iter().all(|row| !row.is_empty()), Validation, "every response needs at least one token");
    ensure!(
        ratios.0.iter().flatten().all(|&r| r > 0.0 && r.is_finite()),
        Validation,
        "probability ratios must be finite and strictly positive"
    );
    Ok(())
}

/// Token-averaged clipped objective with truncated importance weight.
pub fn grpo_objective(ratios: &TokenRatios, advantages: &AdvantageGroup, params: &ObjectiveParams) -> Result<f64> {
    params.validate()?;
    check_shapes(ratios, advantages)?;
    let total: f64 = ratios
        .0
        .iter()
        .zip(&advantages.advantages)
        .flat_map(|(row, &adv)| row.iter().map(move |&rho| token_term(rho, adv, params)))
        .sum();
    Ok(total / ratios.total_tokens() as f64)
}

/// Keys closer than this are one tie group. `|p - 0.5|` and `|(1 - p) - 0.5|`
/// can differ by an ulp after rounding.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// Sorts `(key, item)` ascending by key and returns up to `k` items. Items in
/// one tie group are visited in a uniformly random order; `rng` is only
/// touched when a tie group of two or more is reached.
pub(crate) fn take_ranked<T, R: Rng + ?Sized>(mut keyed: Vec<(f64, T)>, k: usize, rng: &mut R) -> Vec<T> {
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out = Vec::with_capacity(k.min(keyed.len()));
    let mut rest = keyed.into_iter().peekable();
    while out.len() < k {
        let Some((key, first)) = rest.next() else { break };
        let mut group = vec![first];
        while let Some((_, item)) = rest.next_if(|(next, _)| *next - key <= TIE_TOLERANCE) {
            group.push(item);
        }
        if group.len() > 1 {
            group.shuffle(rng);
        }
        out.extend(group.into_iter().take(k - out.len()));
    }
    out
}

fn validate_rates(pass_rates: &[f64], b: usize) -> Result<()> {
    ensure!(b <= pass_rates.len(), Validation, "cannot select {b} of {} prompts", pass_rates.len());
    for &p in pass_rates {
        check_unit(p, "pass rate")?;
    }
    Ok(())
}

/// Picks the `b` prompts closest to a 0.5 pass rate. Returned indices are sorted.
pub fn greedy_select<R: Rng + ?Sized>(pass_rates: &[f64], b: usize, rng: &mut R) -> Result<Vec<usize>> {
    validate_rates(pass_rates, b)?;
    let keyed = pass_rates.iter().enumerate().map(|(i, &p)| ((p - 0.5).abs(), i)).collect();
    let mut chosen = take_ranked(keyed, b, rng);
    chosen.sort_unstable();
    Ok(chosen)
}

/// Sum of `p(1-p)` over `indices`, accumulated in ascending index order so that
/// equal sets always produce bit-equal totals.
pub fn subset_value(pass_rates: &[f64], indices: &[usize]) -> f64 {
    let mut sorted = indices.to_vec();
    sorted.sort_unstable();
    sorted.iter().map(|&i| pass_rates[i] * (1.0 - pass_rates[i])).sum()
}

/// Exhaustive search for the size-`b` subset maximizing total learnability.
pub fn brute_force_select(pass_rates: &[f64], b: usize) -> Result<(f64, Vec<usize>)> {
    let n = pass_rates.len();
    ensure!(n <= BRUTE_FORCE_LIMIT, Validation, "exhaustive search limited to {BRUTE_FORCE_LIMIT} prompts, got {n}");
    validate_rates(pass_rates, b)?;
    let mut best: Option<(f64, Vec<usize>)> = None;
    for mask in 0u32..(1u32 << n) {
        if mask.count_ones() as usize != b {
            continue;
        }
        let subset: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        let value = subset_value(pass_rates, &subset);
        if best.as_ref().is_none_or(|(v, _)| value > *v) {
            best = Some((value, subset));
        }
    }
    Ok(best.expect("at least one subset of size b exists"))
}
