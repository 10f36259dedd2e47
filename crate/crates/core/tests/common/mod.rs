//! Oracles and generators shared by the integration tests and the acceptance
//! harness. Nothing here calls the code under test to compute an expected
//! value.

#![allow(dead_code)]

use std::collections::HashMap;

use prompt_replay::grpo::ObjectiveParams;
use prompt_replay::replay_buffer::{BufferConfig, ReplayBuffer};
use prompt_replay::seed::{self, SimRng};
use prompt_replay::toy_policy::{self, answer_at, LogitTable, ToyRolloutBatch};
use prompt_replay::PromptId;
use rand::Rng;

/// `r_i - k/G`, with `k` counted as an integer.
pub fn advantages_oracle(rewards: &[bool]) -> Vec<f64> {
    let k = rewards.iter().filter(|&&r| r).count();
    let mean = k as f64 / rewards.len() as f64;
    rewards.iter().map(|&r| if r { 1.0 - mean } else { 0.0 - mean }).collect()
}

/// Best size-`b` subset value by recursion over include/exclude, summed in
/// ascending index order.
pub fn best_subset_value(rates: &[f64], b: usize) -> f64 {
    fn go(rates: &[f64], i: usize, left: usize, chosen: &mut Vec<usize>, best: &mut f64) {
        if left == 0 {
            let v: f64 = chosen.iter().map(|&j| rates[j] * (1.0 - rates[j])).sum();
            if v > *best {
                *best = v;
            }
            return;
        }
        if rates.len() - i < left {
            return;
        }
        chosen.push(i);
        go(rates, i + 1, left - 1, chosen, best);
        chosen.pop();
        go(rates, i + 1, left, chosen, best);
    }
    let mut best = f64::NEG_INFINITY;
    go(rates, 0, b, &mut Vec::new(), &mut best);
    best
}

/// Elementwise `|a - f| / max(|a|, |f|, floor)`, maximized.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64], mask: &[bool], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|((&a, &f), _)| (a - f).abs() / a.abs().max(f.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// A toy-policy instance whose ratios all sit strictly inside the clip band,
/// so the objective is smooth around the evaluation point. `None` when the
/// sampled group has zero variance or a ratio lands near a breakpoint.
pub fn smooth_instance(seed: u64) -> Option<(LogitTable, ToyRolloutBatch)> {
    let mut rng = seed::stream(seed, &[0x736d_6f6f]);
    let (t, v) = (rng.random_range(1..=4), rng.random_range(2..=6));
    let values: Vec<f64> = (0..t * v).map(|_| rng.random_range(-1.0..1.0)).collect();
    let old = LogitTable::from_values(1, t, v, values).ok()?;
    let group = rng.random_range(2..=8);
    let reward = answer_at(0, 0);
    let batch = toy_policy::sample_group(&old, 0, group, &reward, &mut rng).ok()?;
    if batch.rewards.iter().all(|&r| r == batch.rewards[0]) {
        return None;
    }
    let mut new = old.clone();
    for x in new.values_mut() {
        *x += rng.random_range(-0.04..0.04);
    }
    let ratios = toy_policy::token_ratios(&new, &batch);
    let band = 0.2 - 1e-3;
    ratios.0.iter().flatten().all(|&r| (r - 1.0).abs() < band).then_some((new, batch))
}

/// Analytic and central-difference gradients plus the comparable mask.
pub fn gradient_pair(params: &LogitTable, batch: &ToyRolloutBatch, h: f64) -> (Vec<f64>, Vec<f64>, Vec<bool>) {
    let objective = ObjectiveParams::default();
    let (_, analytic) = toy_policy::objective_and_grad(params, batch, &objective).unwrap();
    let fd = toy_policy::finite_diff_grad(params, batch, &objective, h).unwrap();
    (analytic.values().to_vec(), fd.grad.values().to_vec(), fd.comparable)
}

/// Independent model of buffer residency and bookkeeping.
#[derive(Debug, Default)]
pub struct ShadowBuffer {
    pub cfg: Option<BufferConfig>,
    /// id -> (pass rate, buffer-sourced uses this residency, last use)
    pub entries: HashMap<u32, (f64, u32, u64)>,
}

impl ShadowBuffer {
    pub fn new(cfg: BufferConfig) -> Self {
        Self { cfg: Some(cfg), entries: HashMap::new() }
    }

    pub fn observe(&mut self, id: u32, p: f64, step: u64, from_buffer: bool) {
        let cfg = self.cfg.unwrap();
        let in_bounds = p >= cfg.p_min && p <= cfg.p_max;
        match self.entries.get(&id).copied() {
            None => {
                if in_bounds {
                    self.entries.insert(id, (p, 0, step));
                }
            }
            Some((_, uses, _)) => {
                let uses = uses + u32::from(from_buffer);
                if in_bounds && uses < cfg.max_reuse {
                    self.entries.insert(id, (p, uses, step));
                } else {
                    self.entries.remove(&id);
                }
            }
        }
    }

    pub fn eligible(&self, step: u64) -> Vec<u32> {
        let c = self.cfg.unwrap().cooldown_steps;
        let mut ids: Vec<u32> = self.entries.iter().filter(|(_, e)| step > e.2 + c).map(|(&id, _)| id).collect();
        ids.sort_unstable();
        ids
    }
}

/// Violation counts from a buffer fuzzing session.
#[derive(Debug, Default, PartialEq, Eq)]
pub struct FuzzReport {
    pub ops: usize,
    pub served: usize,
    pub cooldown: usize,
    pub reuse: usize,
    pub bounds: usize,
    pub model_mismatch: usize,
}

impl FuzzReport {
    pub fn violations(&self) -> usize {
        self.cooldown + self.reuse + self.bounds + self.model_mismatch
    }
}

/// Random interleaving of fresh observations, buffer draws with feedback,
/// explicit removals and idle steps. Every draw is checked against the
/// recorded last-use step and per-residency use count.
pub fn fuzz_buffer(cfg: BufferConfig, n_ops: usize, seed: u64) -> FuzzReport {
    let mut rng: SimRng = seed::stream(seed, &[0x6675_7a7a]);
    let mut buf = ReplayBuffer::new(cfg).unwrap();
    let mut shadow = ShadowBuffer::new(cfg);
    let mut last_use: HashMap<u32, u64> = HashMap::new();
    let mut uses: HashMap<u32, u32> = HashMap::new();
    let mut report = FuzzReport::default();
    let mut step = 0u64;
    let n_ids = 60u32;

    let rate = |rng: &mut SimRng| -> f64 {
        // Mostly empirical rates k/16, sometimes the exact bounds.
        match rng.random_range(0..10) {
            0 => cfg.p_min,
            1 => cfg.p_max,
            _ => f64::from(rng.random_range(0..=16u32)) / 16.0,
        }
    };

    while report.ops < n_ops {
        report.ops += 1;
        match rng.random_range(0..10) {
            0..=3 => {
                let id = rng.random_range(0..n_ids);
                let p = rate(&mut rng);
                let was_resident = buf.contains(PromptId(id));
                buf.insert_or_update(PromptId(id), p, step, false).unwrap();
                shadow.observe(id, p, step, false);
                last_use.insert(id, step);
                if !was_resident && buf.contains(PromptId(id)) {
                    uses.insert(id, 0);
                }
            }
            4..=6 => {
                let k = rng.random_range(0..6);
                let served = buf.rank_and_take(step, k, &mut rng);
                let expected = shadow.eligible(step);
                report.model_mismatch += usize::from(served.len() != k.min(expected.len()));
                for id in served {
                    report.served += 1;
                    let gap = step - last_use[&id.0];
                    report.cooldown += usize::from(gap <= cfg.cooldown_steps);
                    report.model_mismatch += usize::from(!expected.contains(&id.0));
                    let p = rate(&mut rng);
                    buf.insert_or_update(id, p, step, true).unwrap();
                    shadow.observe(id.0, p, step, true);
                    last_use.insert(id.0, step);
                    let n = uses.entry(id.0).or_insert(0);
                    *n += 1;
                    report.reuse += usize::from(*n > cfg.max_reuse);
                }
            }
            7 => {
                let id = rng.random_range(0..n_ids);
                let removed = buf.remove(PromptId(id));
                report.model_mismatch += usize::from(removed != shadow.entries.remove(&id).is_some());
            }
            _ => step += rng.random_range(1..=4),
        }

        for e in buf.entries() {
            report.bounds += usize::from(!(cfg.p_min..=cfg.p_max).contains(&e.pass_rate));
            report.reuse += usize::from(e.use_count >= cfg.max_reuse);
        }
        let mut ids: Vec<u32> = buf.entries().map(|e| e.prompt_id.0).collect();
        let mut model: Vec<u32> = shadow.entries.keys().copied().collect();
        ids.sort_unstable();
        model.sort_unstable();
        if ids != model {
            report.model_mismatch += 1;
        } else {
            for e in buf.entries() {
                let (p, u, t) = shadow.entries[&e.prompt_id.0];
                report.model_mismatch += usize::from((p, u, t) != (e.pass_rate, e.use_count, e.last_used_step));
            }
        }
    }
    report
}
