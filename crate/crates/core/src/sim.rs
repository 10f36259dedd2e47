//! Synthetic RLVR training world.
//!
//! Each prompt has a latent difficulty `d`; the policy has a scalar skill `s`.
//! A rollout on prompt `x` succeeds with probability
//! `sigmoid(k * (s - d_x + b_x))`, where `b_x` is a per-prompt bonus earned
//! by training on `x` itself. Training raises skill in proportion to the
//! reward variance `p(1-p)` of the empirical pass rates in the batch.
//!
//! Rollout randomness is keyed by `(seed, step, prompt, n-th roll of that
//! prompt this step)`, so two runs that roll the same prompt at the same step
//! see the same rewards regardless of what else they sampled.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::grpo::{self, RolloutGroup};
use crate::scheduler::{BatchPlan, FreshSampler};
use crate::seed::{self, tag};
use crate::PromptId;

/// Distribution of latent prompt difficulties.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DifficultySpec {
    Uniform { low: f64, high: f64 },
    Normal { mean: f64, std: f64 },
    /// Two normal modes; `low_weight` is the probability of the first.
    Bimodal { low_mean: f64, high_mean: f64, std: f64, low_weight: f64 },
}

impl Default for DifficultySpec {
    fn default() -> Self {
        DifficultySpec::Uniform { low: -3.0, high: 3.0 }
    }
}

impl DifficultySpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            DifficultySpec::Uniform { low, high } => {
                ensure!(low.is_finite() && high.is_finite() && low < high, Validation, "uniform({low},{high}) needs low < high");
            }
            DifficultySpec::Normal { mean, std } => {
                ensure!(mean.is_finite() && std.is_finite() && std > 0.0, Validation, "normal({mean},{std}) needs std > 0");
            }
            DifficultySpec::Bimodal { low_mean, high_mean, std, low_weight } => {
                ensure!(
                    low_mean.is_finite() && high_mean.is_finite() && std.is_finite() && std > 0.0,
                    Validation,
                    "bimodal modes must be finite with std > 0"
                );
                ensure!((0.0..=1.0).contains(&low_weight), Validation, "bimodal weight must lie in [0,1], got {low_weight}");
            }
        }
        Ok(())
    }

    fn sample_all<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<f64>> {
        self.validate()?;
        let bad = |e: rand_distr::NormalError| Error::Validation(e.to_string());
        Ok(match *self {
            DifficultySpec::Uniform { low, high } => {
                let u = Uniform::new(low, high).map_err(|e| Error::Validation(e.to_string()))?;
                (0..n).map(|_| u.sample(rng)).collect()
            }
            DifficultySpec::Normal { mean, std } => {
                let d = Normal::new(mean, std).map_err(bad)?;
                (0..n).map(|_| d.sample(rng)).collect()
            }
            DifficultySpec::Bimodal { low_mean, high_mean, std, low_weight } => {
                let lo = Normal::new(low_mean, std).map_err(bad)?;
                let hi = Normal::new(high_mean, std).map_err(bad)?;
                (0..n).map(|_| if rng.random_bool(low_weight) { lo.sample(rng) } else { hi.sample(rng) }).collect()
            }
        })
    }
}

impl fmt::Display for DifficultySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DifficultySpec::Uniform { low, high } => write!(f, "uniform({low},{high})"),
            DifficultySpec::Normal { mean, std } => write!(f, "normal({mean},{std})"),
            DifficultySpec::Bimodal { low_mean, high_mean, std, low_weight } => {
                write!(f, "bimodal({low_mean},{high_mean},{std},{low_weight})")
            }
        }
    }
}

impl FromStr for DifficultySpec {
    type Err = Error;

    /// Parses `uniform(a,b)`, `normal(mu,sigma)` or `bimodal(m1,m2,sigma,w1)`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, rest) = s
            .split_once('(')
            .ok_or_else(|| Error::Validation(format!("difficulty spec `{s}` is not of the form name(args)")))?;
        let args = rest
            .strip_suffix(')')
            .ok_or_else(|| Error::Validation(format!("difficulty spec `{s}` is missing `)`")))?;
        let nums: Vec<f64> = args
            .split(',')
            .map(|a| a.trim().parse::<f64>().map_err(|e| Error::Validation(format!("bad number `{a}` in `{s}`: {e}"))))
            .collect::<Result<_>>()?;
        let spec = match (name.trim(), nums.as_slice()) {
            ("uniform", &[low, high]) => DifficultySpec::Uniform { low, high },
            ("normal", &[mean, std]) => DifficultySpec::Normal { mean, std },
            ("bimodal", &[low_mean, high_mean, std, low_weight]) => {
                DifficultySpec::Bimodal { low_mean, high_mean, std, low_weight }
            }
            _ => return Err(Error::Validation(format!("unknown difficulty spec `{s}`"))),
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Length model for the synthetic responses' token counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TokenLength {
    Constant(u32),
    /// Inclusive range.
    Uniform { min: u32, max: u32 },
}

impl Default for TokenLength {
    fn default() -> Self {
        TokenLength::Constant(512)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearningRule {
    pub learn_rate: f64,
    /// Share of each step's improvement that raises global skill; the rest
    /// becomes a bonus on the trained prompts only.
    pub transfer: f64,
}

impl Default for LearningRule {
    fn default() -> Self {
        Self { learn_rate: 0.05, transfer: 1.0 }
    }
}

impl LearningRule {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.learn_rate > 0.0 && self.learn_rate.is_finite(), Validation, "learn_rate must be positive");
        ensure!((0.0..=1.0).contains(&self.transfer), Validation, "transfer must lie in [0,1], got {}", self.transfer);
        Ok(())
    }
}

/// What to do with groups whose rewards are all equal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ResamplePolicy {
    /// Keep them; they cost rollouts and contribute nothing.
    None,
    /// Discard them and roll replacement prompts, at most `max_refills` per step.
    DapoRefill { max_refills: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub step: u64,
    /// Every group rolled this step: planned prompts first, then refills.
    pub groups: Vec<RolloutGroup>,
    /// Parallel to `groups`: whether the group entered the update.
    pub retained: Vec<bool>,
    pub n_zero_variance: usize,
    /// Groups with every reward equal to 1.
    pub n_full_pass: usize,
    pub n_resampled: usize,
    pub mean_abs_adv: f64,
    pub rollouts_spent: u64,
    /// Refill cap reached while discarded groups were still unreplaced.
    pub short_batch: bool,
    pub skill_before: f64,
    pub skill_after: f64,
}

impl StepOutcome {
    pub fn n_retained(&self) -> usize {
        self.retained.iter().filter(|&&r| r).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimWorld {
    seed: u64,
    difficulties: Vec<f64>,
    bonuses: Vec<f64>,
    skill: f64,
    steepness: f64,
    token_length: TokenLength,
    rollout_ledger: u64,
    step: u64,
    rolls_this_step: BTreeMap<PromptId, u32>,
}

impl SimWorld {
    /// Draws difficulties from `spec` with a stream derived from `seed`.
    pub fn build(n_prompts: usize, spec: &DifficultySpec, initial_skill: f64, steepness: f64, seed: u64) -> Result<Self> {
        ensure!(n_prompts >= 1, Validation, "world needs at least one prompt");
        let difficulties = spec.sample_all(n_prompts, &mut seed::stream(seed, &[tag::WORLD]))?;
        Self::from_difficulties(difficulties, initial_skill, steepness, seed)
    }

    pub fn from_difficulties(difficulties: Vec<f64>, skill: f64, steepness: f64, seed: u64) -> Result<Self> {
        ensure!(!difficulties.is_empty(), Validation, "world needs at least one prompt");
        ensure!(u32::try_from(difficulties.len()).is_ok(), Validation, "too many prompts");
        ensure!(difficulties.iter().all(|d| d.is_finite()), Validation, "difficulties must be finite");
        ensure!(skill.is_finite(), Validation, "skill must be finite");
        ensure!(steepness > 0.0 && steepness.is_finite(), Validation, "steepness must be positive, got {steepness}");
        let n = difficulties.len();
        Ok(Self {
            seed,
            difficulties,
            bonuses: vec![0.0; n],
            skill,
            steepness,
            token_length: TokenLength::default(),
            rollout_ledger: 0,
            step: 0,
            rolls_this_step: BTreeMap::new(),
        })
    }

    pub fn with_token_length(mut self, token_length: TokenLength) -> Result<Self> {
        if let TokenLength::Uniform { min, max } = token_length {
            ensure!(min >= 1 && min <= max, Validation, "token length range [{min},{max}] is invalid");
        }
        ensure!(token_length != TokenLength::Constant(0), Validation, "token length must be positive");
        self.token_length = token_length;
        Ok(self)
    }

    pub fn n_prompts(&self) -> usize {
        self.difficulties.len()
    }

    pub fn sampler(&self) -> FreshSampler {
        FreshSampler::new(self.difficulties.len() as u32)
    }

    pub fn skill(&self) -> f64 {
        self.skill
    }

    pub fn set_skill(&mut self, skill: f64) {
        self.skill = skill;
    }

    pub fn difficulties(&self) -> &[f64] {
        &self.difficulties
    }

    pub fn bonus(&self, id: PromptId) -> f64 {
        self.bonuses[id.0 as usize]
    }

    pub fn rollout_ledger(&self) -> u64 {
        self.rollout_ledger
    }

    pub fn current_step(&self) -> u64 {
        self.step
    }

    fn check_id(&self, id: PromptId) -> Result<usize> {
        let i = id.0 as usize;
        ensure!(i < self.difficulties.len(), Validation, "unknown prompt {id} (world has {})", self.difficulties.len());
        Ok(i)
    }

    pub fn true_pass_rate(&self, id: PromptId) -> Result<f64> {
        let i = self.check_id(id)?;
        Ok(self.pass_rate_at(i))
    }

    fn pass_rate_at(&self, i: usize) -> f64 {
        let margin = self.skill - self.difficulties[i] + self.bonuses[i];
        1.0 / (1.0 + (-self.steepness * margin).exp())
    }

    pub fn mean_true_pass_rate(&self) -> f64 {
        (0..self.difficulties.len()).map(|i| self.pass_rate_at(i)).sum::<f64>() / self.difficulties.len() as f64
    }

    /// Moves the rollout clock to `step`; rollouts are keyed by it.
    pub fn begin_step(&mut self, step: u64) {
        self.step = step;
        self.rolls_this_step.clear();
    }

    /// `G` Bernoulli rewards at the prompt's current true pass rate.
    pub fn rollout(&mut self, id: PromptId, group_size: usize) -> Result<RolloutGroup> {
        ensure!(group_size >= 2, Validation, "group size must be at least 2, got {group_size}");
        let i = self.check_id(id)?;
        let p = self.pass_rate_at(i);
        let nth = self.rolls_this_step.entry(id).or_insert(0);
        let mut rng = seed::stream(self.seed, &[tag::ROLLOUT, self.step, u64::from(id.0), u64::from(*nth)]);
        *nth += 1;
        let rewards: Vec<bool> = (0..group_size).map(|_| rng.random::<f64>() < p).collect();
        let token_counts = match self.token_length {
            TokenLength::Constant(t) => vec![t; group_size],
            TokenLength::Uniform { min, max } => (0..group_size).map(|_| rng.random_range(min..=max)).collect(),
        };
        self.rollout_ledger += group_size as u64;
        RolloutGroup::new(id, rewards, token_counts)
    }

    /// Rolls out the plan, optionally refills zero-variance groups, and
    /// applies the learning update.
    pub fn train_step(
        &mut self,
        plan: &BatchPlan,
        group_size: usize,
        learning: &LearningRule,
        resample: ResamplePolicy,
    ) -> Result<StepOutcome> {
        learning.validate()?;
        for (id, _) in plan.prompts() {
            self.check_id(id)?;
        }
        self.begin_step(plan.step);
        let ledger_before = self.rollout_ledger;

        let mut groups = Vec::with_capacity(plan.batch_size());
        for (id, _) in plan.prompts() {
            groups.push(self.rollout(id, group_size)?);
        }

        let mut n_resampled = 0;
        let mut short_batch = false;
        if let ResamplePolicy::DapoRefill { max_refills } = resample {
            let mut deficit = groups.iter().filter(|g| g.is_zero_variance()).count();
            let mut used: Vec<PromptId> = groups.iter().map(|g| g.prompt_id).collect();
            let mut rng = seed::stream(self.seed, &[tag::REFILL, plan.step]);
            let sampler = self.sampler();
            while deficit > 0 && n_resampled < max_refills && used.len() < self.n_prompts() {
                let id = sampler.sample(1, &used, &mut rng)?[0];
                used.push(id);
                let g = self.rollout(id, group_size)?;
                n_resampled += 1;
                if !g.is_zero_variance() {
                    deficit -= 1;
                }
                groups.push(g);
            }
            short_batch = deficit > 0;
        }

        let retained: Vec<bool> = match resample {
            ResamplePolicy::None => vec![true; groups.len()],
            ResamplePolicy::DapoRefill { .. } => groups.iter().map(|g| !g.is_zero_variance()).collect(),
        };

        let advantages: Vec<_> = groups.iter().map(RolloutGroup::advantages).collect();
        let mean_abs_adv = if advantages.is_empty() { 0.0 } else { grpo::mean_abs_advantage(&advantages)? };
        let n_zero_variance = groups.iter().filter(|g| g.is_zero_variance()).count();
        let n_full_pass = groups.iter().filter(|g| g.is_zero_variance() && g.rewards[0]).count();

        let skill_before = self.skill;
        let kept: Vec<(PromptId, f64)> = groups
            .iter()
            .zip(&retained)
            .filter(|(_, &r)| r)
            .map(|(g, _)| {
                let p = g.pass_rate();
                (g.prompt_id, p * (1.0 - p))
            })
            .collect();
        if !kept.is_empty() {
            let mean_v = kept.iter().map(|(_, v)| v).sum::<f64>() / kept.len() as f64;
            self.skill += learning.learn_rate * learning.transfer * mean_v;
            let local = learning.learn_rate * (1.0 - learning.transfer);
            if local > 0.0 {
                for &(id, v) in &kept {
                    self.bonuses[id.0 as usize] += local * v;
                }
            }
        }

        Ok(StepOutcome {
            step: plan.step,
            groups,
            retained,
            n_zero_variance,
            n_full_pass,
            n_resampled,
            mean_abs_adv,
            rollouts_spent: self.rollout_ledger - ledger_before,
            short_batch,
            skill_before,
            skill_after: self.skill,
        })
    }
}

/// Empirical pass rate of every group in the outcome, keyed by prompt.
pub fn estimate_pass_rates(outcome: &StepOutcome) -> BTreeMap<PromptId, f64> {
    outcome.groups.iter().map(|g| (g.prompt_id, g.pass_rate())).collect()
}
