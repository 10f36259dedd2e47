//! Prompt replay buffer.
//!
//! Entries hold only a prompt id and bookkeeping (latest pass-rate estimate,
//! buffer-sourced use count, last step used). A prompt becomes eligible again
//! once strictly more than `cooldown_steps` steps have passed since its last
//! use, and is dropped after `max_reuse` buffer-sourced uses or as soon as a
//! fresh estimate falls outside `[p_min, p_max]`.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::grpo::take_ranked;
use crate::PromptId;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BufferConfig {
    pub p_min: f64,
    pub p_max: f64,
    pub cooldown_steps: u64,
    pub max_reuse: u32,
}

impl Default for BufferConfig {
    fn default() -> Self {
        Self { p_min: 0.25, p_max: 0.75, cooldown_steps: 10, max_reuse: 15 }
    }
}

impl BufferConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            0.0 <= self.p_min && self.p_min < self.p_max && self.p_max <= 1.0,
            Validation,
            "pass-rate bounds must satisfy 0 <= p_min < p_max <= 1, got [{}, {}]",
            self.p_min,
            self.p_max
        );
        ensure!(self.cooldown_steps >= 1, Validation, "cooldown_steps must be at least 1");
        ensure!(self.max_reuse >= 1, Validation, "max_reuse must be at least 1");
        Ok(())
    }

    pub fn admits(&self, pass_rate: f64) -> bool {
        (self.p_min..=self.p_max).contains(&pass_rate)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PromptEntry {
    pub prompt_id: PromptId,
    pub pass_rate: f64,
    pub use_count: u32,
    pub last_used_step: u64,
}

/// Which transition `insert_or_update` performed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InsertOutcome {
    /// Absent before, resident now.
    Inserted,
    /// Resident before and after.
    Updated,
    /// Absent before and after.
    Rejected,
    /// Resident before, removed now.
    Evicted,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    config: BufferConfig,
    entries: BTreeMap<PromptId, PromptEntry>,
}

impl ReplayBuffer {
    pub fn new(config: BufferConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, entries: BTreeMap::new() })
    }

    pub fn config(&self) -> &BufferConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: PromptId) -> Option<&PromptEntry> {
        self.entries.get(&id)
    }

    pub fn contains(&self, id: PromptId) -> bool {
        self.entries.contains_key(&id)
    }

    /// Resident entries in ascending id order.
    pub fn entries(&self) -> impl Iterator<Item = &PromptEntry> {
        self.entries.values()
    }

    /// Records a fresh pass-rate estimate for `id` observed at `step`.
    ///
    /// `used_from_buffer` marks a prompt that was served by this buffer in the
    /// current step; only such uses count toward `max_reuse`. The last-used
    /// step is refreshed for every observation, buffer-sourced or not.
    pub fn insert_or_update(
        &mut self,
        id: PromptId,
        pass_rate: f64,
        step: u64,
        used_from_buffer: bool,
    ) -> Result<InsertOutcome> {
        ensure!((0.0..=1.0).contains(&pass_rate), Validation, "pass rate for prompt {id} must lie in [0,1], got {pass_rate}");
        let existing = self.entries.get(&id).copied();
        if let Some(e) = existing {
            ensure!(
                step >= e.last_used_step,
                State,
                "prompt {id} last used at step {} but updated at earlier step {step}",
                e.last_used_step
            );
        }
        ensure!(
            existing.is_some() || !used_from_buffer,
            State,
            "prompt {id} reported as buffer-sourced but is not resident"
        );

        let use_count = existing.map_or(0, |e| e.use_count) + u32::from(used_from_buffer);
        let keep = self.config.admits(pass_rate) && (existing.is_none() || use_count < self.config.max_reuse);

        if keep {
            self.entries.insert(id, PromptEntry { prompt_id: id, pass_rate, use_count, last_used_step: step });
            Ok(if existing.is_some() { InsertOutcome::Updated } else { InsertOutcome::Inserted })
        } else if existing.is_some() {
            self.entries.remove(&id);
            Ok(InsertOutcome::Evicted)
        } else {
            Ok(InsertOutcome::Rejected)
        }
    }

    fn is_eligible(&self, entry: &PromptEntry, step: u64) -> bool {
        step.checked_sub(entry.last_used_step).is_some_and(|gap| gap > self.config.cooldown_steps)
    }

    /// Ids whose cooldown has expired at `step`, ascending.
    pub fn eligible(&self, step: u64) -> Vec<PromptId> {
        self.entries.values().filter(|e| self.is_eligible(e, step)).map(|e| e.prompt_id).collect()
    }

    pub fn eligible_count(&self, step: u64) -> usize {
        self.entries.values().filter(|e| self.is_eligible(e, step)).count()
    }

    /// Up to `k` eligible ids, closest pass rate to 0.5 first. Ties are
    /// ordered uniformly at random.
    pub fn rank_and_take<R: Rng + ?Sized>(&self, step: u64, k: usize, rng: &mut R) -> Vec<PromptId> {
        if k == 0 {
            return Vec::new();
        }
        let keyed = self
            .entries
            .values()
            .filter(|e| self.is_eligible(e, step))
            .map(|e| ((e.pass_rate - 0.5).abs(), e.prompt_id))
            .collect();
        take_ranked(keyed, k, rng)
    }

    pub fn remove(&mut self, id: PromptId) -> bool {
        self.entries.remove(&id).is_some()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    fn default_buffer() -> ReplayBuffer {
        ReplayBuffer::new(BufferConfig::default()).unwrap()
    }

    const X: PromptId = PromptId(7);

    #[test]
    fn insert_gate() {
        let mut b = default_buffer();
        assert_eq!(b.insert_or_update(X, 0.5, 3, false).unwrap(), InsertOutcome::Inserted);
        let mut b = default_buffer();
        assert_eq!(b.insert_or_update(X, 0.0, 3, false).unwrap(), InsertOutcome::Rejected);
        assert!(b.is_empty());
    }

    #[test]
    fn bounds_are_inclusive() {
        let mut b = default_buffer();
        assert_eq!(b.insert_or_update(X, 0.25, 1, false).unwrap(), InsertOutcome::Inserted);
        assert_eq!(b.insert_or_update(X, 0.75, 2, false).unwrap(), InsertOutcome::Updated);
        assert_eq!(b.insert_or_update(X, 0.76, 3, false).unwrap(), InsertOutcome::Evicted);
    }

    #[test]
    fn eviction_at_max_reuse() {
        let mut b = default_buffer();
        b.insert_or_update(X, 0.5, 0, false).unwrap();
        for step in 1..=14 {
            assert_eq!(b.insert_or_update(X, 0.6, step, true).unwrap(), InsertOutcome::Updated);
        }
        assert_eq!(b.get(X).unwrap().use_count, 14);
        assert_eq!(b.insert_or_update(X, 0.6, 15, true).unwrap(), InsertOutcome::Evicted);
        assert!(!b.contains(X));
    }

    #[test]
    fn fresh_hits_do_not_count_as_reuse() {
        let mut b = default_buffer();
        b.insert_or_update(X, 0.5, 0, false).unwrap();
        b.insert_or_update(X, 0.5, 1, false).unwrap();
        let e = b.get(X).unwrap();
        assert_eq!(e.use_count, 0);
        assert_eq!(e.last_used_step, 1);
    }

    #[test]
    fn insert_errors() {
        let mut b = default_buffer();
        assert!(matches!(b.insert_or_update(X, 1.2, 0, false), Err(crate::Error::Validation(_))));
        assert!(matches!(b.insert_or_update(X, 0.5, 0, true), Err(crate::Error::State(_))));
        b.insert_or_update(X, 0.5, 5, false).unwrap();
        assert!(matches!(b.insert_or_update(X, 0.5, 4, false), Err(crate::Error::State(_))));
    }

    #[test]
    fn cooldown_is_strict() {
        let mut b = default_buffer();
        b.insert_or_update(X, 0.5, 5, false).unwrap();
        assert!(b.eligible(15).is_empty());
        assert_eq!(b.eligible(16), vec![X]);
        assert!(default_buffer().eligible(100).is_empty());
    }

    #[test]
    fn ranking_by_distance_from_half() {
        let mut b = default_buffer();
        b.insert_or_update(PromptId(0), 0.50, 0, false).unwrap();
        b.insert_or_update(PromptId(1), 0.30, 0, false).unwrap();
        b.insert_or_update(PromptId(2), 0.74, 0, false).unwrap();
        let mut rng = seed::stream(0, &[]);
        assert_eq!(b.rank_and_take(20, 2, &mut rng), vec![PromptId(0), PromptId(1)]);
        assert_eq!(b.rank_and_take(20, 10, &mut rng).len(), 3);
        assert!(b.rank_and_take(20, 0, &mut rng).is_empty());
    }

    #[test]
    fn tie_break_is_uniform() {
        let mut b = default_buffer();
        b.insert_or_update(PromptId(1), 0.30, 0, false).unwrap();
        b.insert_or_update(PromptId(2), 0.70, 0, false).unwrap();
        let mut rng = seed::stream(11, &[]);
        let trials = 10_000;
        let ones = (0..trials).filter(|_| b.rank_and_take(20, 1, &mut rng)[0] == PromptId(1)).count();
        let freq = ones as f64 / trials as f64;
        assert!((freq - 0.5).abs() < 0.05, "{freq}");
    }

    #[test]
    fn removal_and_reentry() {
        let mut b = default_buffer();
        b.insert_or_update(X, 0.5, 0, false).unwrap();
        b.insert_or_update(X, 0.5, 20, true).unwrap();
        assert!(b.remove(X));
        assert!(!b.remove(X));
        assert!(b.eligible(100).is_empty());
        assert_eq!(b.insert_or_update(X, 0.5, 30, false).unwrap(), InsertOutcome::Inserted);
        assert_eq!(b.get(X).unwrap().use_count, 0);
    }

    #[test]
    fn config_validation() {
        let bad = [
            BufferConfig { p_min: 0.8, p_max: 0.2, ..Default::default() },
            BufferConfig { p_min: 0.5, p_max: 0.5, ..Default::default() },
            BufferConfig { p_max: 1.1, ..Default::default() },
            BufferConfig { cooldown_steps: 0, ..Default::default() },
            BufferConfig { max_reuse: 0, ..Default::default() },
        ];
        for cfg in bad {
            assert!(ReplayBuffer::new(cfg).is_err(), "{cfg:?}");
        }
    }
}
