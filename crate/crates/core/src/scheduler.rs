//! Per-step batch construction.
//!
//! A batch of `N` unique prompts takes up to `floor(eps * N)` prompts from the
//! top of the buffer ranking and fills the rest with uniform draws (without
//! replacement inside the step) from the full dataset.

use std::collections::HashSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::replay_buffer::ReplayBuffer;
use crate::PromptId;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchedulerConfig {
    /// Unique prompts per step.
    pub batch_size: usize,
    /// Ceiling on the share of the batch served by the buffer.
    pub replay_fraction: f64,
    /// Rollouts per prompt.
    pub group_size: usize,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self { batch_size: 32, replay_fraction: 0.75, group_size: 16 }
    }
}

impl SchedulerConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.batch_size >= 1, Validation, "batch_size must be at least 1");
        ensure!(self.group_size >= 2, Validation, "group_size must be at least 2, got {}", self.group_size);
        ensure!(
            (0.0..=1.0).contains(&self.replay_fraction),
            Validation,
            "replay_fraction must lie in [0,1], got {}",
            self.replay_fraction
        );
        Ok(())
    }

    /// `floor(eps * N)`. The product is nudged by 1e-9 before flooring so that
    /// values like `0.29 * 100` are not lost to representation error.
    pub fn replay_quota(&self) -> usize {
        (self.replay_fraction * self.batch_size as f64 + 1e-9).floor() as usize
    }
}

/// The stationary uniform sampler over a dataset of `n_prompts` ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreshSampler {
    pub n_prompts: u32,
}

impl FreshSampler {
    pub fn new(n_prompts: u32) -> Self {
        Self { n_prompts }
    }

    /// Draws `count` distinct ids uniformly, skipping anything in `exclude`.
    pub fn sample<R: Rng + ?Sized>(&self, count: usize, exclude: &[PromptId], rng: &mut R) -> Result<Vec<PromptId>> {
        let mut taken: HashSet<PromptId> = exclude.iter().copied().collect();
        ensure!(
            (self.n_prompts as usize).saturating_sub(taken.len()) >= count,
            Config,
            "dataset of {} prompts cannot supply {count} fresh prompts with {} excluded",
            self.n_prompts,
            taken.len()
        );
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let id = PromptId(rng.random_range(0..self.n_prompts));
            if taken.insert(id) {
                out.push(id);
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub step: u64,
    pub buffer_ids: Vec<PromptId>,
    pub fresh_ids: Vec<PromptId>,
}

impl BatchPlan {
    pub fn batch_size(&self) -> usize {
        self.buffer_ids.len() + self.fresh_ids.len()
    }

    /// Share of the batch served by the buffer.
    pub fn realized_fraction(&self) -> f64 {
        match self.batch_size() {
            0 => 0.0,
            n => self.buffer_ids.len() as f64 / n as f64,
        }
    }

    /// Buffer ids first, then fresh ids.
    pub fn prompts(&self) -> impl Iterator<Item = (PromptId, bool)> + '_ {
        self.buffer_ids.iter().map(|&id| (id, true)).chain(self.fresh_ids.iter().map(|&id| (id, false)))
    }
}

fn check_dataset(config: &SchedulerConfig, sampler: &FreshSampler) -> Result<()> {
    config.validate()?;
    ensure!(
        sampler.n_prompts as usize >= config.batch_size,
        Config,
        "dataset of {} prompts is smaller than batch_size {}",
        sampler.n_prompts,
        config.batch_size
    );
    Ok(())
}

/// Mixed batch: top-ranked eligible buffer prompts plus fresh draws.
pub fn plan_batch<R: Rng + ?Sized>(
    config: &SchedulerConfig,
    buffer: &ReplayBuffer,
    sampler: &FreshSampler,
    step: u64,
    rng: &mut R,
) -> Result<BatchPlan> {
    check_dataset(config, sampler)?;
    let buffer_ids = buffer.rank_and_take(step, config.replay_quota(), rng);
    let fresh_ids = sampler.sample(config.batch_size - buffer_ids.len(), &buffer_ids, rng)?;
    Ok(BatchPlan { step, buffer_ids, fresh_ids })
}

/// Fresh-only batch; the no-replay baseline.
pub fn plan_fresh_batch<R: Rng + ?Sized>(
    config: &SchedulerConfig,
    sampler: &FreshSampler,
    step: u64,
    rng: &mut R,
) -> Result<BatchPlan> {
    check_dataset(config, sampler)?;
    let fresh_ids = sampler.sample(config.batch_size, &[], rng)?;
    Ok(BatchPlan { step, buffer_ids: Vec::new(), fresh_ids })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::replay_buffer::BufferConfig;
    use crate::seed;

    fn buffer_with_eligible(n: u32) -> ReplayBuffer {
        let mut b = ReplayBuffer::new(BufferConfig::default()).unwrap();
        for i in 0..n {
            b.insert_or_update(PromptId(i), 0.25 + 0.5 * f64::from(i) / f64::from(n.max(1)), 0, false).unwrap();
        }
        b
    }

    fn plan_with(eligible: u32) -> BatchPlan {
        let cfg = SchedulerConfig::default();
        let mut rng = seed::stream(5, &[]);
        plan_batch(&cfg, &buffer_with_eligible(eligible), &FreshSampler::new(2000), 50, &mut rng).unwrap()
    }

    #[test]
    fn quota_fills_from_buffer() {
        let p = plan_with(40);
        assert_eq!((p.buffer_ids.len(), p.fresh_ids.len()), (24, 8));
        assert_eq!(p.realized_fraction(), 0.75);
    }

    #[test]
    fn short_buffer_tops_up_with_fresh() {
        let p = plan_with(10);
        assert_eq!((p.buffer_ids.len(), p.fresh_ids.len()), (10, 22));
        assert_eq!(p.realized_fraction(), 0.3125);
    }

    #[test]
    fn empty_buffer_degenerates_to_fresh() {
        let p = plan_with(0);
        assert_eq!(p.fresh_ids.len(), 32);
        assert_eq!(p.realized_fraction(), 0.0);
    }

    #[test]
    fn no_duplicates_across_sources() {
        // Small dataset so fresh draws collide with buffer ids often.
        let cfg = SchedulerConfig { batch_size: 8, replay_fraction: 0.5, group_size: 4 };
        let buffer = buffer_with_eligible(6);
        for s in 0..200 {
            let mut rng = seed::stream(s, &[]);
            let p = plan_batch(&cfg, &buffer, &FreshSampler::new(10), 100, &mut rng).unwrap();
            let mut all: Vec<_> = p.prompts().map(|(id, _)| id).collect();
            all.sort();
            all.dedup();
            assert_eq!(all.len(), 8);
        }
    }

    #[test]
    fn dataset_too_small() {
        let cfg = SchedulerConfig::default();
        let mut rng = seed::stream(0, &[]);
        let err = plan_batch(&cfg, &buffer_with_eligible(0), &FreshSampler::new(31), 1, &mut rng);
        assert!(matches!(err, Err(crate::Error::Config(_))));
        assert!(FreshSampler::new(5).sample(3, &[PromptId(0), PromptId(1), PromptId(2)], &mut rng).is_err());
    }

    #[test]
    fn quota_uses_floor() {
        let q = |eps: f64, n: usize| SchedulerConfig { batch_size: n, replay_fraction: eps, group_size: 2 }.replay_quota();
        assert_eq!(q(0.75, 32), 24);
        assert_eq!(q(0.74, 32), 23);
        assert_eq!(q(0.29, 100), 29);
        assert_eq!(q(0.0, 32), 0);
        assert_eq!(q(1.0, 32), 32);
    }

    #[test]
    fn deterministic_under_seed() {
        let a = plan_with(30);
        let b = plan_with(30);
        assert_eq!(a, b);
    }

    #[test]
    fn zero_fraction_matches_baseline_sampler() {
        let cfg = SchedulerConfig { replay_fraction: 0.0, ..Default::default() };
        let buffer = buffer_with_eligible(40);
        let sampler = FreshSampler::new(2000);
        for s in 0..50 {
            let a = plan_batch(&cfg, &buffer, &sampler, 99, &mut seed::stream(s, &[])).unwrap();
            let b = plan_fresh_batch(&cfg, &sampler, 99, &mut seed::stream(s, &[])).unwrap();
            assert_eq!(a, b);
        }
    }
}
