//! The training loop over the simulator, A/B comparison and sweeps.

pub mod config;
pub mod metrics;
pub mod snapshot;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::replay_buffer::ReplayBuffer;
use crate::scheduler::{plan_batch, plan_fresh_batch, BatchPlan};
use crate::seed::{self, tag};
use crate::sim::{SimWorld, StepOutcome, TokenLength};
use crate::stats::{self, SignCounts};

pub use config::{Mode, RefillMode, RunConfig, CONFIG_KEYS};
pub use metrics::{MetricsWriter, RunSummary, StepMetricsRecord};

/// A run in progress. Everything needed to continue lives here, so a
/// snapshot of this struct is a complete checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Run {
    config: RunConfig,
    world: SimWorld,
    buffer: ReplayBuffer,
    next_step: u64,
}

impl Run {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let w = &config.world;
        let world = SimWorld::build(w.n_prompts, &w.difficulty, w.initial_skill, w.steepness, config.seed)?
            .with_token_length(TokenLength::Constant(w.token_length))?;
        let buffer = ReplayBuffer::new(config.buffer)?;
        Ok(Self { config, world, buffer, next_step: 1 })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn world(&self) -> &SimWorld {
        &self.world
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    /// Step number the next call to [`Run::step`] will execute (1-based).
    pub fn next_step(&self) -> u64 {
        self.next_step
    }

    pub fn is_finished(&self) -> bool {
        self.next_step > self.config.total_steps
    }

    /// Changes the horizon, e.g. to extend a restored run.
    pub fn set_total_steps(&mut self, total_steps: u64) -> Result<()> {
        ensure!(total_steps >= 1, Config, "total_steps must be at least 1");
        self.config.total_steps = total_steps;
        Ok(())
    }

    pub fn plan(&self, step: u64) -> Result<BatchPlan> {
        let scheduler = self.config.effective_scheduler();
        let sampler = self.world.sampler();
        let mut rng = seed::stream(self.config.seed, &[tag::PLAN, step]);
        match self.config.mode {
            Mode::Baseline => plan_fresh_batch(&scheduler, &sampler, step, &mut rng),
            Mode::PromptReplay => plan_batch(&scheduler, &self.buffer, &sampler, step, &mut rng),
        }
    }

    /// Runs one step and returns the plan and outcome alongside the record.
    pub fn step_detailed(&mut self) -> Result<(StepMetricsRecord, BatchPlan, StepOutcome)> {
        ensure!(!self.is_finished(), State, "run already completed {} steps", self.config.total_steps);
        let t = self.next_step;
        let n_eligible = self.buffer.eligible_count(t);
        let plan = self.plan(t)?;
        let outcome =
            self.world.train_step(&plan, self.config.scheduler.group_size, &self.config.learning, self.config.resample())?;

        for g in &outcome.groups {
            let from_buffer = plan.buffer_ids.contains(&g.prompt_id);
            self.buffer.insert_or_update(g.prompt_id, g.pass_rate(), t, from_buffer)?;
        }

        let record = StepMetricsRecord {
            step: t,
            realized_fraction: plan.realized_fraction(),
            buffer_size: self.buffer.len(),
            n_eligible,
            n_groups: outcome.groups.len(),
            n_zero_variance: outcome.n_zero_variance,
            n_full_pass: outcome.n_full_pass,
            n_resampled: outcome.n_resampled,
            short_batch: outcome.short_batch,
            mean_abs_adv: outcome.mean_abs_adv,
            rollouts_spent_cumulative: self.world.rollout_ledger(),
            skill: self.world.skill(),
            mean_true_pass_rate: self.world.mean_true_pass_rate(),
        };
        self.next_step += 1;
        Ok((record, plan, outcome))
    }

    pub fn step(&mut self) -> Result<StepMetricsRecord> {
        self.step_detailed().map(|(r, _, _)| r)
    }

    /// Runs the remaining steps, handing each record to `sink`.
    pub fn run_with<F>(&mut self, mut sink: F) -> Result<()>
    where
        F: FnMut(&StepMetricsRecord) -> Result<()>,
    {
        while !self.is_finished() {
            sink(&self.step()?)?;
        }
        Ok(())
    }

    pub fn run_to_end(&mut self) -> Result<Vec<StepMetricsRecord>> {
        let mut out = Vec::new();
        self.run_with(|r| {
            out.push(r.clone());
            Ok(())
        })?;
        Ok(out)
    }

    pub fn snapshot(&self) -> Result<Vec<u8>> {
        snapshot::encode(self)
    }

    pub fn restore(bytes: &[u8]) -> Result<Self> {
        let run: Self = snapshot::decode(bytes)?;
        run.config.validate()?;
        Ok(run)
    }
}

/// Validates `config` and runs it to completion.
pub fn run(config: &RunConfig) -> Result<Vec<StepMetricsRecord>> {
    Run::new(config.clone())?.run_to_end()
}

pub fn summarize(config: &RunConfig, records: &[StepMetricsRecord]) -> RunSummary {
    let c = &config.compare;
    RunSummary::from_records(records, (c.window_start, c.window_end), c.skill_threshold)
}

/// Per-arm means and the paired comparison for one metric. Positive
/// differences favour replay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedMetric {
    pub baseline_mean: f64,
    pub replay_mean: f64,
    /// Mean of the finite paired differences.
    pub mean_diff: f64,
    pub signs: SignCounts,
}

impl PairedMetric {
    fn from_pairs(baseline: &[f64], replay: &[f64], diff: impl Fn(f64, f64) -> f64) -> Self {
        let diffs: Vec<f64> = baseline.iter().zip(replay).map(|(&b, &r)| diff(b, r)).collect();
        let finite: Vec<f64> = diffs.iter().copied().filter(|d| d.is_finite()).collect();
        let finite_mean = |xs: &[f64]| stats::mean(&xs.iter().copied().filter(|x| x.is_finite()).collect::<Vec<_>>());
        Self {
            baseline_mean: finite_mean(baseline),
            replay_mean: finite_mean(replay),
            mean_diff: stats::mean(&finite),
            signs: SignCounts::from_diffs(&diffs),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedPair {
    pub seed: u64,
    pub baseline: RunSummary,
    pub replay: RunSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonSummary {
    pub pairs: Vec<SeedPair>,
    /// Window mean of zero-variance groups per step; lower is better.
    pub zero_variance: PairedMetric,
    /// Window mean of |advantage|; higher is better.
    pub abs_adv: PairedMetric,
    /// Cumulative rollouts to the skill threshold; lower is better. A run
    /// that never reaches it counts as infinite.
    pub rollouts_to_threshold: PairedMetric,
}

impl ComparisonSummary {
    fn from_pairs(pairs: Vec<SeedPair>) -> Self {
        let col = |f: &dyn Fn(&RunSummary) -> f64| -> (Vec<f64>, Vec<f64>) {
            (pairs.iter().map(|p| f(&p.baseline)).collect(), pairs.iter().map(|p| f(&p.replay)).collect())
        };
        let (bz, rz) = col(&|s| s.window_mean_zero_variance);
        let (ba, ra) = col(&|s| s.window_mean_abs_adv);
        let (bt, rt) = col(&|s| s.rollouts_to_threshold.map_or(f64::INFINITY, |v| v as f64));
        Self {
            zero_variance: PairedMetric::from_pairs(&bz, &rz, |b, r| b - r),
            abs_adv: PairedMetric::from_pairs(&ba, &ra, |b, r| r - b),
            rollouts_to_threshold: PairedMetric::from_pairs(&bt, &rt, |b, r| if b == r { 0.0 } else { b - r }),
            pairs,
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("seeds={}\n", self.pairs.len()));
        for (name, m) in self.metrics() {
            out.push_str(&format!("{name}.baseline_mean={}\n", m.baseline_mean));
            out.push_str(&format!("{name}.replay_mean={}\n", m.replay_mean));
            out.push_str(&format!("{name}.mean_diff={}\n", m.mean_diff));
            out.push_str(&format!("{name}.wins={}\n", m.signs.wins));
            out.push_str(&format!("{name}.losses={}\n", m.signs.losses));
            out.push_str(&format!("{name}.ties={}\n", m.signs.ties));
        }
        out
    }

    pub fn metrics(&self) -> [(&'static str, &PairedMetric); 3] {
        [
            ("zero_variance", &self.zero_variance),
            ("abs_adv", &self.abs_adv),
            ("rollouts_to_threshold", &self.rollouts_to_threshold),
        ]
    }
}

/// Runs both arms for every seed, in parallel, with the world seed shared
/// inside each pair.
pub fn ab_compare(base: &RunConfig, seeds: &[u64]) -> Result<ComparisonSummary> {
    ensure!(seeds.len() >= 2, Config, "a comparison needs at least two seeds, got {}", seeds.len());
    base.validate()?;
    ensure!(
        base.compare.window_start <= base.total_steps,
        Config,
        "comparison window starts at step {} but runs stop at step {}",
        base.compare.window_start,
        base.total_steps
    );
    let jobs: Vec<(u64, Mode)> = seeds.iter().flat_map(|&s| [(s, Mode::Baseline), (s, Mode::PromptReplay)]).collect();
    let summaries = jobs
        .par_iter()
        .map(|&(seed, mode)| {
            let cfg = RunConfig { seed, mode, ..base.clone() };
            run(&cfg).map(|records| summarize(&cfg, &records))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut it = summaries.into_iter();
    let pairs = seeds
        .iter()
        .map(|&seed| SeedPair { seed, baseline: it.next().expect("two per seed"), replay: it.next().expect("two per seed") })
        .collect();
    Ok(ComparisonSummary::from_pairs(pairs))
}

/// Parameters a sweep may vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepParam {
    CooldownSteps,
    MaxReuse,
    ReplayFraction,
    PMin,
    PMax,
}

impl SweepParam {
    pub const ALL: [SweepParam; 5] =
        [Self::CooldownSteps, Self::MaxReuse, Self::ReplayFraction, Self::PMin, Self::PMax];

    pub fn name(self) -> &'static str {
        match self {
            Self::CooldownSteps => "cooldown_steps",
            Self::MaxReuse => "max_reuse",
            Self::ReplayFraction => "replay_fraction",
            Self::PMin => "p_min",
            Self::PMax => "p_max",
        }
    }

    /// Dotted config key this parameter maps to.
    pub fn config_key(self) -> &'static str {
        match self {
            Self::CooldownSteps => "buffer.cooldown_steps",
            Self::MaxReuse => "buffer.max_reuse",
            Self::ReplayFraction => "scheduler.replay_fraction",
            Self::PMin => "buffer.p_min",
            Self::PMax => "buffer.p_max",
        }
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s || p.config_key() == s)
            .ok_or_else(|| Error::Config(format!("cannot sweep `{s}`; expected one of cooldown_steps, max_reuse, replay_fraction, p_min, p_max")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: String,
    pub summary: ComparisonSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub param: SweepParam,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    /// Tab-separated table, one row per value.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from(self.param.name());
        for name in ["zero_variance", "abs_adv", "rollouts_to_threshold"] {
            for col in ["baseline_mean", "replay_mean", "mean_diff", "wins", "losses", "ties"] {
                out.push_str(&format!("\t{name}.{col}"));
            }
        }
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.value);
            for (_, m) in row.summary.metrics() {
                out.push_str(&format!(
                    "\t{}\t{}\t{}\t{}\t{}\t{}",
                    m.baseline_mean, m.replay_mean, m.mean_diff, m.signs.wins, m.signs.losses, m.signs.ties
                ));
            }
            out.push('\n');
        }
        out
    }
}

/// One [`ab_compare`] per value of `param`.
pub fn sweep(base: &RunConfig, param: SweepParam, values: &[String], seeds: &[u64]) -> Result<SweepTable> {
    ensure!(!values.is_empty(), Config, "sweep over {param} needs at least one value");
    let configs = values
        .iter()
        .map(|v| {
            let mut cfg = base.clone();
            cfg.set(param.config_key(), v)?;
            cfg.validate()?;
            Ok(cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    let rows = values
        .par_iter()
        .zip(configs.par_iter())
        .map(|(v, cfg)| ab_compare(cfg, seeds).map(|summary| SweepRow { value: v.clone(), summary }))
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepTable { param, rows })
}
