//! A small categorical policy with an explicit logit table.
//!
//! Each (context, position) pair owns a vector of `K` logits; tokens at
//! different positions are sampled independently. The table is small enough
//! that the objective's gradient can be checked coordinate by coordinate
//! against central differences.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{ensure, Result};
use crate::grpo::{self, compute_advantages, ObjectiveParams, TokenRatios};
use crate::seed;

/// Dense `(context, position, token)` table. Serves as both parameters and
/// gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitTable {
    n_contexts: usize,
    response_length: usize,
    vocab_size: usize,
    values: Vec<f64>,
}

pub type ToyPolicyParams = LogitTable;

impl LogitTable {
    pub fn zeros(n_contexts: usize, response_length: usize, vocab_size: usize) -> Result<Self> {
        ensure!(n_contexts >= 1, Validation, "need at least one context");
        ensure!(response_length >= 1, Validation, "response length must be at least 1");
        ensure!(vocab_size >= 2, Validation, "vocabulary needs at least 2 tokens");
        Ok(Self { n_contexts, response_length, vocab_size, values: vec![0.0; n_contexts * response_length * vocab_size] })
    }

    pub fn from_values(n_contexts: usize, response_length: usize, vocab_size: usize, values: Vec<f64>) -> Result<Self> {
        let mut t = Self::zeros(n_contexts, response_length, vocab_size)?;
        ensure!(values.len() == t.values.len(), Validation, "expected {} logits, got {}", t.values.len(), values.len());
        ensure!(values.iter().all(|v| v.is_finite()), Validation, "logits must be finite");
        t.values = values;
        Ok(t)
    }

    pub fn n_contexts(&self) -> usize {
        self.n_contexts
    }

    pub fn response_length(&self) -> usize {
        self.response_length
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn index(&self, context: usize, position: usize, token: usize) -> usize {
        (context * self.response_length + position) * self.vocab_size + token
    }

    pub fn get(&self, context: usize, position: usize, token: usize) -> f64 {
        self.values[self.index(context, position, token)]
    }

    pub fn set(&mut self, context: usize, position: usize, token: usize, value: f64) {
        let i = self.index(context, position, token);
        self.values[i] = value;
    }

    fn row(&self, context: usize, position: usize) -> &[f64] {
        let start = self.index(context, position, 0);
        &self.values[start..start + self.vocab_size]
    }

    /// Softmax over the vocabulary at `(context, position)`.
    pub fn probs(&self, context: usize, position: usize) -> Vec<f64> {
        let row = self.row(context, position);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|z| (z - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / sum).collect()
    }

    pub fn log_prob(&self, context: usize, position: usize, token: usize) -> f64 {
        let row = self.row(context, position);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        row[token] - lse
    }

    /// Sets the logits at `(context, position)` so that `token` has probability
    /// `p` and the remaining tokens share `1 - p` equally.
    pub fn set_token_probability(&mut self, context: usize, position: usize, token: usize, p: f64) -> Result<()> {
        ensure!(p > 0.0 && p < 1.0, Validation, "target probability must lie in (0,1), got {p}");
        let others = (self.vocab_size - 1) as f64;
        for k in 0..self.vocab_size {
            self.set(context, position, k, 0.0);
        }
        self.set(context, position, token, (p * others / (1.0 - p)).ln());
        Ok(())
    }

    pub fn squared_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }
}

/// Binary verifier over a sampled token sequence.
pub type RewardFn = dyn Fn(&[usize]) -> bool + Sync;

/// Reward 1 when the token at `position` equals `token`.
pub fn answer_at(position: usize, token: usize) -> impl Fn(&[usize]) -> bool + Sync {
    move |seq: &[usize]| seq.get(position) == Some(&token)
}

/// A group of responses sampled from the old policy for one context.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyRolloutBatch {
    pub context_id: usize,
    pub tokens: Vec<Vec<usize>>,
    pub old_logprobs: Vec<Vec<f64>>,
    pub rewards: Vec<bool>,
}

impl ToyRolloutBatch {
    pub fn group_size(&self) -> usize {
        self.tokens.len()
    }

    pub fn pass_rate(&self) -> f64 {
        grpo::pass_rate(&self.rewards)
    }
}

fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    probs.len() - 1
}

pub fn sample_group<R: Rng + ?Sized>(
    params: &ToyPolicyParams,
    context_id: usize,
    group_size: usize,
    reward: &RewardFn,
    rng: &mut R,
) -> Result<ToyRolloutBatch> {
    ensure!(group_size >= 2, Validation, "group size must be at least 2, got {group_size}");
    ensure!(context_id < params.n_contexts, Validation, "context {context_id} out of range");
    let probs: Vec<Vec<f64>> = (0..params.response_length).map(|t| params.probs(context_id, t)).collect();
    let mut tokens = Vec::with_capacity(group_size);
    let mut old_logprobs = Vec::with_capacity(group_size);
    let mut rewards = Vec::with_capacity(group_size);
    for _ in 0..group_size {
        let seq: Vec<usize> = probs.iter().map(|p| sample_categorical(p, rng)).collect();
        old_logprobs.push(seq.iter().enumerate().map(|(t, &y)| params.log_prob(context_id, t, y)).collect());
        rewards.push(reward(&seq));
        tokens.push(seq);
    }
    Ok(ToyRolloutBatch { context_id, tokens, old_logprobs, rewards })
}

fn check_batch(params: &ToyPolicyParams, batch: &ToyRolloutBatch) -> Result<()> {
    ensure!(batch.context_id < params.n_contexts, Validation, "context {} out of range", batch.context_id);
    let g = batch.tokens.len();
    ensure!(
        batch.old_logprobs.len() == g && batch.rewards.len() == g,
        Validation,
        "batch rows disagree: {} token rows, {} log-prob rows, {} rewards",
        g,
        batch.old_logprobs.len(),
        batch.rewards.len()
    );
    for (seq, lp) in batch.tokens.iter().zip(&batch.old_logprobs) {
        ensure!(
            seq.len() == params.response_length && lp.len() == params.response_length,
            Validation,
            "responses must have length {}",
            params.response_length
        );
        ensure!(seq.iter().all(|&y| y < params.vocab_size), Validation, "token id out of vocabulary");
        ensure!(lp.iter().all(|&l| l.is_finite() && l <= 0.0), Validation, "old log-probs must be finite and <= 0");
    }
    Ok(())
}

/// Per-token ratios `exp(new - old)`.
pub fn token_ratios(params: &ToyPolicyParams, batch: &ToyRolloutBatch) -> TokenRatios {
    TokenRatios(
        batch
            .tokens
            .iter()
            .zip(&batch.old_logprobs)
            .map(|(seq, old)| {
                seq.iter()
                    .zip(old)
                    .enumerate()
                    .map(|(t, (&y, &lo))| (params.log_prob(batch.context_id, t, y) - lo).exp())
                    .collect()
            })
            .collect(),
    )
}

/// Objective value and its exact gradient with respect to every logit.
///
/// The importance weight `min(rho, eta)` is held constant; at clip and `min`
/// breakpoints the branch selected by the forward pass supplies the gradient.
pub fn objective_and_grad(
    params: &ToyPolicyParams,
    batch: &ToyRolloutBatch,
    objective: &ObjectiveParams,
) -> Result<(f64, LogitTable)> {
    check_batch(params, batch)?;
    let adv = compute_advantages(&batch.rewards)?;
    let ratios = token_ratios(params, batch);
    let j = grpo::grpo_objective(&ratios, &adv, objective)?;

    let mut grad = LogitTable::zeros(params.n_contexts, params.response_length, params.vocab_size)?;
    let norm = ratios.total_tokens() as f64;
    let c = batch.context_id;
    let probs: Vec<Vec<f64>> = (0..params.response_length).map(|t| params.probs(c, t)).collect();
    for ((seq, rhos), &a) in batch.tokens.iter().zip(&ratios.0).zip(&adv.advantages) {
        for (t, (&y, &rho)) in seq.iter().zip(rhos).enumerate() {
            // dJ/drho * drho/dz, with drho/dz_k = rho * (1[k=y] - pi_k).
            let scale = grpo::token_term_grad(rho, a, objective) * rho / norm;
            if scale == 0.0 {
                continue;
            }
            for (k, &pk) in probs[t].iter().enumerate() {
                let indicator = if k == y { 1.0 } else { 0.0 };
                let i = grad.index(c, t, k);
                grad.values[i] += scale * (indicator - pk);
            }
        }
    }
    Ok((j, grad))
}

/// Importance weights `min(rho, eta)` at the current parameters.
pub fn importance_weights(params: &ToyPolicyParams, batch: &ToyRolloutBatch, objective: &ObjectiveParams) -> Vec<Vec<f64>> {
    token_ratios(params, batch).0.into_iter().map(|row| row.into_iter().map(|r| objective.weight(r)).collect()).collect()
}

/// Objective with the importance weights frozen at `weights`.
pub fn frozen_weight_objective(
    params: &ToyPolicyParams,
    batch: &ToyRolloutBatch,
    objective: &ObjectiveParams,
    weights: &[Vec<f64>],
) -> Result<f64> {
    check_batch(params, batch)?;
    let adv = compute_advantages(&batch.rewards)?;
    let ratios = token_ratios(params, batch);
    let total: f64 = ratios
        .0
        .iter()
        .zip(weights)
        .zip(&adv.advantages)
        .flat_map(|((rhos, ws), &a)| rhos.iter().zip(ws).map(move |(&r, &w)| w * grpo::surrogate(r, a, objective)))
        .sum();
    Ok(total / ratios.total_tokens() as f64)
}

fn branch_pattern(params: &ToyPolicyParams, batch: &ToyRolloutBatch, adv: &[f64], objective: &ObjectiveParams) -> Vec<bool> {
    token_ratios(params, batch)
        .0
        .iter()
        .zip(adv)
        .flat_map(|(rhos, &a)| rhos.iter().map(move |&r| grpo::surrogate_active(r, a, objective)))
        .collect()
}

/// `(f(x + h e_k) - f(x - h e_k)) / 2h` for every coordinate.
pub fn central_difference(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|k| {
            probe[k] = x[k] + h;
            let up = f(&probe);
            probe[k] = x[k] - h;
            let down = f(&probe);
            probe[k] = x[k];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Central-difference gradient of the frozen-weight objective.
#[derive(Debug, Clone)]
pub struct FiniteDiffGrad {
    pub grad: LogitTable,
    /// `false` where the perturbation changes which clip/min branch is active.
    pub comparable: Vec<bool>,
}

pub fn finite_diff_grad(
    params: &ToyPolicyParams,
    batch: &ToyRolloutBatch,
    objective: &ObjectiveParams,
    h: f64,
) -> Result<FiniteDiffGrad> {
    ensure!(h > 0.0, Validation, "step size must be positive, got {h}");
    check_batch(params, batch)?;
    objective.validate()?;
    let adv = compute_advantages(&batch.rewards)?.advantages;
    let weights = importance_weights(params, batch, objective);

    let mut probe = params.clone();
    let values = central_difference(&params.values, h, |x| {
        probe.values.copy_from_slice(x);
        frozen_weight_objective(&probe, batch, objective, &weights).expect("batch validated")
    });

    let mut comparable = Vec::with_capacity(params.values.len());
    let mut probe = params.clone();
    for k in 0..params.values.len() {
        probe.values[k] = params.values[k] + h;
        let up = branch_pattern(&probe, batch, &adv, objective);
        probe.values[k] = params.values[k] - h;
        let down = branch_pattern(&probe, batch, &adv, objective);
        probe.values[k] = params.values[k];
        comparable.push(up == down);
    }

    let grad = LogitTable { values, ..params.clone() };
    Ok(FiniteDiffGrad { grad, comparable })
}

/// Squared gradient norm at `params` (taken as the old policy) for `trials`
/// freshly sampled groups. Trial `i` uses a seed derived from one draw of
/// `rng` and `i`, so the result does not depend on evaluation order.
pub fn gradient_energies<R: Rng + ?Sized>(
    params: &ToyPolicyParams,
    context_id: usize,
    group_size: usize,
    trials: usize,
    reward: &RewardFn,
    objective: &ObjectiveParams,
    rng: &mut R,
) -> Result<Vec<f64>> {
    ensure!(trials >= 1, Validation, "need at least one trial");
    let base: u64 = rng.random();
    (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut trial_rng = seed::stream(base, &[i as u64]);
            let batch = sample_group(params, context_id, group_size, reward, &mut trial_rng)?;
            let (_, grad) = objective_and_grad(params, &batch, objective)?;
            Ok(grad.squared_norm())
        })
        .collect()
}

/// Mean of [`gradient_energies`].
pub fn gradient_energy<R: Rng + ?Sized>(
    params: &ToyPolicyParams,
    context_id: usize,
    group_size: usize,
    trials: usize,
    reward: &RewardFn,
    objective: &ObjectiveParams,
    rng: &mut R,
) -> Result<f64> {
    let e = gradient_energies(params, context_id, group_size, trials, reward, objective, rng)?;
    Ok(e.iter().sum::<f64>() / e.len() as f64)
}
