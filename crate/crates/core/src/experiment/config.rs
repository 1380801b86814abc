//! Flat `key = value` experiment configuration.
//!
//! Blank lines and `#` comments are ignored. Nested settings use dotted keys
//! (`plan.n_courses`, `grid.width`). Unknown or repeated keys are errors.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::curiosity::{PlanConfig, RewardKind};
use crate::error::{Error, Result};
use crate::gridworld::GridConfig;
use crate::model::{DEFAULT_HIDDEN, DEFAULT_SIGMA_MAX, DEFAULT_SIGMA_MIN};
use crate::structure::{ReinforceOptions, DEFAULT_CLAMP_BOUND};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    /// Plain gradient ascent on the mean log-likelihood gradient.
    Sgd,
    Adam,
}

impl OptimizerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        }
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::Config(format!("unknown optimizer {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    pub conditions: Vec<RewardKind>,
    pub stage1_episodes: usize,
    pub stage2_episodes: usize,
    /// Start columns for stage-one resets; `None` spreads starts over the whole width.
    pub stage1_start_x_range: Option<RangeInclusive<usize>>,
    pub lr_theta: f64,
    pub lr_gamma: f64,
    pub alpha: f64,
    /// Graphs sampled per real update.
    pub n_graph_samples: usize,
    /// Planning settings; `horizon` follows `grid.episode_len` and
    /// `reward_kind` is set per condition.
    pub plan: PlanConfig,
    pub replay_episodes: usize,
    pub epochs_per_episode: usize,
    pub batch_size: usize,
    pub baseline: bool,
    pub per_feature_credit: bool,
    pub optimizer: OptimizerKind,
    pub grid: GridConfig,
    pub d_h: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub clamp_bound: f64,
    /// Probability an edge must exceed to count as discovered in the summary.
    pub threshold: f64,
    pub parallel: bool,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let grid = GridConfig::default();
        ExperimentConfig {
            seeds: (0..20).collect(),
            conditions: RewardKind::ALL.to_vec(),
            stage1_episodes: 150,
            stage2_episodes: 30,
            stage1_start_x_range: None,
            lr_theta: 1e-2,
            lr_gamma: 0.3,
            alpha: 0.03,
            n_graph_samples: 4,
            plan: PlanConfig {
                horizon: grid.episode_len,
                ..PlanConfig::default()
            },
            replay_episodes: 20,
            epochs_per_episode: 6,
            batch_size: 32,
            baseline: true,
            per_feature_credit: true,
            optimizer: OptimizerKind::Adam,
            grid,
            d_h: DEFAULT_HIDDEN,
            sigma_min: DEFAULT_SIGMA_MIN,
            sigma_max: DEFAULT_SIGMA_MAX,
            clamp_bound: DEFAULT_CLAMP_BOUND,
            threshold: 0.9,
            parallel: true,
            output_dir: PathBuf::from("results"),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean {value:?} for {key}"))),
    }
}

fn parse_range(key: &str, value: &str) -> Result<RangeInclusive<usize>> {
    let (lo, hi) = value
        .split_once("..")
        .ok_or_else(|| Error::Config(format!("{key} must look like LO..HI, got {value:?}")))?;
    Ok(parse(key, lo.trim())?..=parse(key, hi.trim())?)
}

/// `0..20` (half-open) or a comma list.
fn parse_seeds(value: &str) -> Result<Vec<u64>> {
    if let Some((lo, hi)) = value.split_once("..") {
        let lo: u64 = parse("seeds", lo.trim())?;
        let hi: u64 = parse("seeds", hi.trim())?;
        return Ok((lo..hi).collect());
    }
    value.split(',').map(|s| parse("seeds", s.trim())).collect()
}

pub fn parse_conditions(value: &str) -> Result<Vec<RewardKind>> {
    let mut out: Vec<RewardKind> = Vec::new();
    for part in value.split(',') {
        let kind: RewardKind = part.parse()?;
        if !out.contains(&kind) {
            out.push(kind);
        }
    }
    Ok(out)
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse_str(&text)
    }

    /// Parses config text on top of the defaults.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut seen = BTreeSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got {raw:?}", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: duplicate key {key}", n + 1)));
            }
            cfg.set(key, value)
                .map_err(|e| Error::Config(format!("line {}: {}", n + 1, strip_prefix(&e))))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets one key. Used by the parser and by command-line overrides.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seeds" => self.seeds = parse_seeds(value)?,
            "conditions" => self.conditions = parse_conditions(value)?,
            "stage1_episodes" => self.stage1_episodes = parse(key, value)?,
            "stage2_episodes" => self.stage2_episodes = parse(key, value)?,
            "stage1_start_x_range" => {
                self.stage1_start_x_range = match value {
                    "all" => None,
                    v => Some(parse_range(key, v)?),
                }
            }
            "lr_theta" => self.lr_theta = parse(key, value)?,
            "lr_gamma" => self.lr_gamma = parse(key, value)?,
            "alpha" => self.alpha = parse(key, value)?,
            "n_graph_samples" => self.n_graph_samples = parse(key, value)?,
            "plan.n_courses" => self.plan.n_courses = parse(key, value)?,
            "plan.n_graphs" => self.plan.n_graphs = parse(key, value)?,
            "plan.sim_lr" => self.plan.sim_lr = parse(key, value)?,
            "plan.sim_alpha" => self.plan.sim_alpha = parse(key, value)?,
            "replay_episodes" => self.replay_episodes = parse(key, value)?,
            "epochs_per_episode" => self.epochs_per_episode = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "baseline" => self.baseline = parse_bool(key, value)?,
            "per_feature_credit" => self.per_feature_credit = parse_bool(key, value)?,
            "optimizer" => self.optimizer = value.parse()?,
            "grid.width" => self.grid.width = parse(key, value)?,
            "grid.height" => self.grid.height = parse(key, value)?,
            "grid.step_size" => self.grid.step_size = parse(key, value)?,
            "grid.heal_gain" => self.grid.heal_gain = parse(key, value)?,
            "grid.episode_len" => self.grid.episode_len = parse(key, value)?,
            "grid.start_x_range" => self.grid.start_x_range = parse_range(key, value)?,
            "grid.xa_range" => self.grid.xa_range = parse_range(key, value)?,
            "d_h" => self.d_h = parse(key, value)?,
            "sigma_min" => self.sigma_min = parse(key, value)?,
            "sigma_max" => self.sigma_max = parse(key, value)?,
            "clamp_bound" => self.clamp_bound = parse(key, value)?,
            "threshold" => self.threshold = parse(key, value)?,
            "parallel" => self.parallel = parse_bool(key, value)?,
            "output_dir" => self.output_dir = PathBuf::from(value),
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        self.sync_plan();
        Ok(())
    }

    fn sync_plan(&mut self) {
        self.plan.horizon = self.grid.episode_len;
        self.plan.reinforce = self.reinforce_options();
    }

    /// Grid used for stage-one resets.
    pub fn stage1_grid(&self) -> GridConfig {
        GridConfig {
            start_x_range: self.stage1_start_x_range.clone().unwrap_or(0..=self.grid.width - 1),
            ..self.grid.clone()
        }
    }

    pub fn reinforce_options(&self) -> ReinforceOptions {
        ReinforceOptions {
            baseline: self.baseline,
            per_feature_credit: self.per_feature_credit,
        }
    }

    /// Planning settings for one condition.
    pub fn plan_for(&self, kind: RewardKind) -> PlanConfig {
        PlanConfig {
            reward_kind: kind,
            horizon: self.grid.episode_len,
            reinforce: self.reinforce_options(),
            ..self.plan.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.seeds.is_empty() {
            return fail("seeds must be non-empty".into());
        }
        if self.conditions.is_empty() {
            return fail("conditions must be non-empty".into());
        }
        for (name, v) in [
            ("lr_theta", self.lr_theta),
            ("lr_gamma", self.lr_gamma),
            ("sigma_min", self.sigma_min),
            ("clamp_bound", self.clamp_bound),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return fail(format!("{name} must be > 0, got {v}"));
            }
        }
        // infinity is allowed and means no cap
        if self.sigma_max.is_nan() || self.sigma_max < self.sigma_min {
            return fail(format!("sigma_max must be >= sigma_min, got {}", self.sigma_max));
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return fail(format!("alpha must be >= 0, got {}", self.alpha));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return fail(format!("threshold must be in (0,1), got {}", self.threshold));
        }
        for (name, v) in [
            ("n_graph_samples", self.n_graph_samples),
            ("replay_episodes", self.replay_episodes),
            ("epochs_per_episode", self.epochs_per_episode),
            ("batch_size", self.batch_size),
            ("d_h", self.d_h),
        ] {
            if v == 0 {
                return fail(format!("{name} must be positive"));
            }
        }
        self.grid.validate()?;
        if let Some(r) = &self.stage1_start_x_range {
            if r.is_empty() || *r.end() >= self.grid.width {
                return fail(format!(
                    "stage1_start_x_range {r:?} must be a non-empty range inside the grid"
                ));
            }
        }
        self.plan_for(RewardKind::Ambiguity).validate()
    }

    /// Every resolved key in parseable form.
    pub fn to_kv_string(&self) -> String {
        let mut s = String::new();
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        let conditions: Vec<&str> = self.conditions.iter().map(|c| c.as_str()).collect();
        let g = &self.grid;
        let lines: Vec<(&str, String)> = vec![
            ("seeds", seeds.join(",")),
            ("conditions", conditions.join(",")),
            ("stage1_episodes", self.stage1_episodes.to_string()),
            ("stage2_episodes", self.stage2_episodes.to_string()),
            (
                "stage1_start_x_range",
                self.stage1_start_x_range
                    .as_ref()
                    .map_or("all".to_string(), |r| format!("{}..{}", r.start(), r.end())),
            ),
            ("lr_theta", self.lr_theta.to_string()),
            ("lr_gamma", self.lr_gamma.to_string()),
            ("alpha", self.alpha.to_string()),
            ("n_graph_samples", self.n_graph_samples.to_string()),
            ("plan.n_courses", self.plan.n_courses.to_string()),
            ("plan.n_graphs", self.plan.n_graphs.to_string()),
            ("plan.sim_lr", self.plan.sim_lr.to_string()),
            ("plan.sim_alpha", self.plan.sim_alpha.to_string()),
            ("replay_episodes", self.replay_episodes.to_string()),
            ("epochs_per_episode", self.epochs_per_episode.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("baseline", self.baseline.to_string()),
            ("per_feature_credit", self.per_feature_credit.to_string()),
            ("optimizer", self.optimizer.as_str().to_string()),
            ("grid.width", g.width.to_string()),
            ("grid.height", g.height.to_string()),
            ("grid.step_size", g.step_size.to_string()),
            ("grid.heal_gain", g.heal_gain.to_string()),
            ("grid.episode_len", g.episode_len.to_string()),
            (
                "grid.start_x_range",
                format!("{}..{}", g.start_x_range.start(), g.start_x_range.end()),
            ),
            ("grid.xa_range", format!("{}..{}", g.xa_range.start(), g.xa_range.end())),
            ("d_h", self.d_h.to_string()),
            ("sigma_min", self.sigma_min.to_string()),
            ("sigma_max", self.sigma_max.to_string()),
            ("clamp_bound", self.clamp_bound.to_string()),
            ("threshold", self.threshold.to_string()),
            ("parallel", self.parallel.to_string()),
            ("output_dir", self.output_dir.display().to_string()),
        ];
        for (k, v) in lines {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

fn strip_prefix(e: &Error) -> String {
    match e {
        Error::Config(m) => m.clone(),
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        assert_eq!(ExperimentConfig::parse_str("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn echo_round_trips() {
        let mut cfg = ExperimentConfig {
            seeds: vec![3, 1, 4],
            conditions: vec![RewardKind::Random, RewardKind::Ambiguity],
            lr_theta: 0.003,
            sigma_max: f64::INFINITY,
            ..ExperimentConfig::default()
        };
        cfg.grid.xa_range = 5..=7;
        cfg.grid.episode_len = 12;
        cfg.sync_plan();
        let back = ExperimentConfig::parse_str(&cfg.to_kv_string()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.plan.horizon, 12);
    }

    #[test]
    fn unknown_key_is_an_error() {
        let err = ExperimentConfig::parse_str("lr_theta = 0.1\nwarp = 9\n").unwrap_err();
        assert!(err.is_config());
        assert!(err.to_string().contains("line 2"));
        assert!(err.to_string().contains("warp"));
    }

    #[test]
    fn duplicate_and_malformed_lines() {
        assert!(ExperimentConfig::parse_str("alpha = 1\nalpha = 2").is_err());
        assert!(ExperimentConfig::parse_str("alpha 1").is_err());
        assert!(ExperimentConfig::parse_str("alpha = x").is_err());
    }

    #[test]
    fn invariants_are_checked() {
        assert!(ExperimentConfig::parse_str("lr_gamma = 0").is_err());
        assert!(ExperimentConfig::parse_str("seeds = 5..5").is_err());
        assert!(ExperimentConfig::parse_str("plan.n_graphs = 1").is_err());
        assert!(ExperimentConfig::parse_str("grid.xa_range = 1..3").is_err());
    }

    #[test]
    fn seeds_and_conditions_syntax() {
        let cfg = ExperimentConfig::parse_str("# comment\nseeds = 2..5\nconditions = ambiguity, random # trailing\n")
            .unwrap();
        assert_eq!(cfg.seeds, vec![2, 3, 4]);
        assert_eq!(cfg.conditions, vec![RewardKind::Ambiguity, RewardKind::Random]);
    }
}
