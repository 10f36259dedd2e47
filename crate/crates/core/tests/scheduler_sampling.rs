use prompt_replay::replay_buffer::{BufferConfig, ReplayBuffer};
use prompt_replay::scheduler::{plan_batch, plan_fresh_batch, FreshSampler, SchedulerConfig};
use prompt_replay::{seed, PromptId};
use proptest::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn chi_squared_p(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    let expected = total as f64 / counts.len() as f64;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    1.0 - ChiSquared::new((counts.len() - 1) as f64).unwrap().cdf(stat)
}

#[test]
fn empty_buffer_plans_are_uniform() {
    let cfg = SchedulerConfig { batch_size: 10, ..Default::default() };
    let buffer = ReplayBuffer::new(BufferConfig::default()).unwrap();
    let sampler = FreshSampler::new(100);
    let mut counts = vec![0u64; 100];
    for step in 0..5_000 {
        let plan = plan_batch(&cfg, &buffer, &sampler, step, &mut seed::stream(9, &[step])).unwrap();
        assert!(plan.buffer_ids.is_empty());
        for id in plan.fresh_ids {
            counts[id.0 as usize] += 1;
        }
    }
    assert_eq!(counts.iter().sum::<u64>(), 50_000);
    let p = chi_squared_p(&counts);
    assert!(p > 0.01, "chi-squared p = {p}");
}

#[test]
fn zero_fraction_equals_fresh_sampler() {
    let cfg = SchedulerConfig { batch_size: 10, replay_fraction: 0.0, ..Default::default() };
    let mut buffer = ReplayBuffer::new(BufferConfig::default()).unwrap();
    for id in 0..50 {
        buffer.insert_or_update(PromptId(id), 0.5, 0, false).unwrap();
    }
    let sampler = FreshSampler::new(100);
    let mut counts = vec![0u64; 100];
    for step in 20..5_020 {
        let a = plan_batch(&cfg, &buffer, &sampler, step, &mut seed::stream(2, &[step])).unwrap();
        let b = plan_fresh_batch(&cfg, &sampler, step, &mut seed::stream(2, &[step])).unwrap();
        assert_eq!(a, b);
        for id in a.fresh_ids {
            counts[id.0 as usize] += 1;
        }
    }
    let p = chi_squared_p(&counts);
    assert!(p > 0.01, "chi-squared p = {p}");
}

proptest! {
    #[test]
    fn realized_fraction_never_exceeds_target(
        n in 1usize..64,
        frac in 0.0f64..=1.0,
        resident in 0u32..80,
        step in 0u64..40,
        s in any::<u64>(),
    ) {
        let cfg = SchedulerConfig { batch_size: n, replay_fraction: frac, group_size: 4 };
        let mut buffer = ReplayBuffer::new(BufferConfig::default()).unwrap();
        for id in 0..resident {
            buffer.insert_or_update(PromptId(id), 0.25 + f64::from(id % 9) / 16.0, u64::from(id % 30), false).unwrap();
        }
        let plan = plan_batch(&cfg, &buffer, &FreshSampler::new(200), step, &mut seed::stream(s, &[])).unwrap();
        prop_assert_eq!(plan.batch_size(), n);
        prop_assert!(plan.realized_fraction() <= frac + 1e-12);
        let mut all: Vec<PromptId> = plan.prompts().map(|(id, _)| id).collect();
        all.sort_unstable();
        all.dedup();
        prop_assert_eq!(all.len(), n);
    }
}
