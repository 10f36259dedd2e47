//! Run configuration and its flat `section.key=value` text form.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::grpo::ObjectiveParams;
use crate::replay_buffer::BufferConfig;
use crate::scheduler::SchedulerConfig;
use crate::sim::{DifficultySpec, LearningRule, ResamplePolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Baseline,
    PromptReplay,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Baseline => "baseline",
            Mode::PromptReplay => "prompt_replay",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "baseline" => Ok(Mode::Baseline),
            "prompt_replay" => Ok(Mode::PromptReplay),
            other => Err(Error::Config(format!("unknown mode `{other}` (expected baseline or prompt_replay)"))),
        }
    }
}

/// Zero-variance handling selected in the config file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RefillMode {
    None,
    DapoRefill,
}

impl fmt::Display for RefillMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RefillMode::None => "none",
            RefillMode::DapoRefill => "dapo_refill",
        })
    }
}

impl FromStr for RefillMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "none" => Ok(RefillMode::None),
            "dapo_refill" => Ok(RefillMode::DapoRefill),
            other => Err(Error::Config(format!("unknown resample policy `{other}` (expected none or dapo_refill)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldSpec {
    pub n_prompts: usize,
    pub difficulty: DifficultySpec,
    pub initial_skill: f64,
    pub steepness: f64,
    /// Tokens per synthetic response.
    pub token_length: u32,
}

impl Default for WorldSpec {
    fn default() -> Self {
        Self {
            n_prompts: 2000,
            difficulty: DifficultySpec::Uniform { low: -3.0, high: 3.0 },
            initial_skill: -1.0,
            steepness: 1.0,
            token_length: 512,
        }
    }
}

/// Settings for A/B summaries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompareSpec {
    /// First step of the averaging window (inclusive).
    pub window_start: u64,
    /// Last step of the averaging window (inclusive).
    pub window_end: u64,
    /// Skill level at which "rollouts to threshold" is read off.
    pub skill_threshold: f64,
}

impl Default for CompareSpec {
    fn default() -> Self {
        Self { window_start: 50, window_end: 300, skill_threshold: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub scheduler: SchedulerConfig,
    pub buffer: BufferConfig,
    pub objective: ObjectiveParams,
    pub world: WorldSpec,
    pub learning: LearningRule,
    pub total_steps: u64,
    pub seed: u64,
    pub resample_policy: RefillMode,
    /// Replacement prompts allowed per step under `dapo_refill`.
    pub max_refills: usize,
    pub mode: Mode,
    pub compare: CompareSpec,
}

impl Default for RunConfig {
    /// The documented profile: N=32, G=16, eps=0.75, C=10, R=15, bounds [0.25, 0.75].
    fn default() -> Self {
        Self {
            scheduler: SchedulerConfig::default(),
            buffer: BufferConfig::default(),
            objective: ObjectiveParams::default(),
            world: WorldSpec::default(),
            learning: LearningRule::default(),
            total_steps: 500,
            seed: 123,
            resample_policy: RefillMode::DapoRefill,
            max_refills: 64,
            mode: Mode::PromptReplay,
            compare: CompareSpec::default(),
        }
    }
}

/// Every key accepted by [`RunConfig::set`], in file order.
pub const CONFIG_KEYS: &[&str] = &[
    "scheduler.batch_size",
    "scheduler.replay_fraction",
    "scheduler.group_size",
    "buffer.p_min",
    "buffer.p_max",
    "buffer.cooldown_steps",
    "buffer.max_reuse",
    "objective.eta",
    "objective.eps_low",
    "objective.eps_high",
    "world.n_prompts",
    "world.difficulty",
    "world.initial_skill",
    "world.steepness",
    "world.token_length",
    "learning.learn_rate",
    "learning.transfer",
    "run.total_steps",
    "run.seed",
    "run.mode",
    "run.resample_policy",
    "run.max_refills",
    "compare.window_start",
    "compare.window_end",
    "compare.skill_threshold",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value.trim().parse::<T>().map_err(|e| Error::Config(format!("{key}: cannot parse `{value}`: {e}")))
}

impl RunConfig {
    /// Sets one dotted key from its text value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key.trim() {
            "scheduler.batch_size" => self.scheduler.batch_size = parse(key, value)?,
            "scheduler.replay_fraction" => self.scheduler.replay_fraction = parse(key, value)?,
            "scheduler.group_size" => self.scheduler.group_size = parse(key, value)?,
            "buffer.p_min" => self.buffer.p_min = parse(key, value)?,
            "buffer.p_max" => self.buffer.p_max = parse(key, value)?,
            "buffer.cooldown_steps" => self.buffer.cooldown_steps = parse(key, value)?,
            "buffer.max_reuse" => self.buffer.max_reuse = parse(key, value)?,
            "objective.eta" => self.objective.eta = parse(key, value)?,
            "objective.eps_low" => self.objective.eps_low = parse(key, value)?,
            "objective.eps_high" => self.objective.eps_high = parse(key, value)?,
            "world.n_prompts" => self.world.n_prompts = parse(key, value)?,
            "world.difficulty" => {
                self.world.difficulty = value.parse().map_err(|e: Error| Error::Config(format!("{key}: {e}")))?
            }
            "world.initial_skill" => self.world.initial_skill = parse(key, value)?,
            "world.steepness" => self.world.steepness = parse(key, value)?,
            "world.token_length" => self.world.token_length = parse(key, value)?,
            "learning.learn_rate" => self.learning.learn_rate = parse(key, value)?,
            "learning.transfer" => self.learning.transfer = parse(key, value)?,
            "run.total_steps" => self.total_steps = parse(key, value)?,
            "run.seed" => self.seed = parse(key, value)?,
            "run.mode" => self.mode = value.parse()?,
            "run.resample_policy" => self.resample_policy = value.parse()?,
            "run.max_refills" => self.max_refills = parse(key, value)?,
            "compare.window_start" => self.compare.window_start = parse(key, value)?,
            "compare.window_end" => self.compare.window_end = parse(key, value)?,
            "compare.skill_threshold" => self.compare.skill_threshold = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Result<String> {
        Ok(match key {
            "scheduler.batch_size" => self.scheduler.batch_size.to_string(),
            "scheduler.replay_fraction" => self.scheduler.replay_fraction.to_string(),
            "scheduler.group_size" => self.scheduler.group_size.to_string(),
            "buffer.p_min" => self.buffer.p_min.to_string(),
            "buffer.p_max" => self.buffer.p_max.to_string(),
            "buffer.cooldown_steps" => self.buffer.cooldown_steps.to_string(),
            "buffer.max_reuse" => self.buffer.max_reuse.to_string(),
            "objective.eta" => self.objective.eta.to_string(),
            "objective.eps_low" => self.objective.eps_low.to_string(),
            "objective.eps_high" => self.objective.eps_high.to_string(),
            "world.n_prompts" => self.world.n_prompts.to_string(),
            "world.difficulty" => self.world.difficulty.to_string(),
            "world.initial_skill" => self.world.initial_skill.to_string(),
            "world.steepness" => self.world.steepness.to_string(),
            "world.token_length" => self.world.token_length.to_string(),
            "learning.learn_rate" => self.learning.learn_rate.to_string(),
            "learning.transfer" => self.learning.transfer.to_string(),
            "run.total_steps" => self.total_steps.to_string(),
            "run.seed" => self.seed.to_string(),
            "run.mode" => self.mode.to_string(),
            "run.resample_policy" => self.resample_policy.to_string(),
            "run.max_refills" => self.max_refills.to_string(),
            "compare.window_start" => self.compare.window_start.to_string(),
            "compare.window_end" => self.compare.window_end.to_string(),
            "compare.skill_threshold" => self.compare.skill_threshold.to_string(),
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        })
    }

    pub fn resample(&self) -> ResamplePolicy {
        match self.resample_policy {
            RefillMode::None => ResamplePolicy::None,
            RefillMode::DapoRefill => ResamplePolicy::DapoRefill { max_refills: self.max_refills },
        }
    }

    /// Applies `key=value` lines on top of `self`. Anything after `#` is a
    /// comment; blank lines are ignored.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split_once('#').map_or(raw, |(before, _)| before).trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got `{line}`", n + 1)))?;
            self.set(key.trim(), value.trim()).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("line {}: {m}", n + 1)),
                other => other,
            })?;
        }
        Ok(())
    }

    /// Defaults overlaid with the contents of a config file.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn to_text(&self) -> String {
        CONFIG_KEYS.iter().map(|k| format!("{k}={}\n", self.get(k).expect("listed key"))).collect()
    }

    /// Checks every section and cross-field constraint.
    pub fn validate(&self) -> Result<()> {
        let cfg = |e: Error| match e {
            Error::Validation(m) | Error::Config(m) => Error::Config(m),
            other => other,
        };
        self.scheduler.validate().map_err(cfg)?;
        self.buffer.validate().map_err(cfg)?;
        self.objective.validate().map_err(cfg)?;
        self.learning.validate().map_err(cfg)?;
        self.world.difficulty.validate().map_err(cfg)?;
        ensure!(
            self.world.n_prompts >= self.scheduler.batch_size,
            Config,
            "world.n_prompts ({}) must be at least scheduler.batch_size ({})",
            self.world.n_prompts,
            self.scheduler.batch_size
        );
        ensure!(self.world.n_prompts <= u32::MAX as usize, Config, "world.n_prompts is too large");
        ensure!(self.world.steepness > 0.0 && self.world.steepness.is_finite(), Config, "world.steepness must be positive");
        ensure!(self.world.initial_skill.is_finite(), Config, "world.initial_skill must be finite");
        ensure!(self.world.token_length >= 1, Config, "world.token_length must be at least 1");
        ensure!(self.total_steps >= 1, Config, "run.total_steps must be at least 1");
        ensure!(
            self.compare.window_start <= self.compare.window_end,
            Config,
            "compare.window_start ({}) exceeds compare.window_end ({})",
            self.compare.window_start,
            self.compare.window_end
        );
        Ok(())
    }

    /// Scheduler settings actually used: baseline mode never replays.
    pub fn effective_scheduler(&self) -> SchedulerConfig {
        match self.mode {
            Mode::Baseline => SchedulerConfig { replay_fraction: 0.0, ..self.scheduler },
            Mode::PromptReplay => self.scheduler,
        }
    }
}
