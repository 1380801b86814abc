//! Fully observable grid world with a healing area.
//!
//! Every rule reads time `t-1` values: color turns green one step after the
//! agent stands at or right of `xa`, and health rises one step after the agent
//! is green. The dynamics are therefore exactly a two-time-slice causal system.

use std::ops::RangeInclusive;

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::Graph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    Left,
    Right,
    Up,
    Down,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Left, Action::Right, Action::Up, Action::Down];
    pub const COUNT: usize = 4;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Self::ALL.get(i).copied()
    }

    pub fn one_hot(self) -> Vec<f64> {
        let mut v = vec![0.0; Self::COUNT];
        v[self.index()] = 1.0;
        v
    }

    /// Inverse of [`Action::one_hot`].
    pub fn from_one_hot(v: &[f64]) -> Option<Action> {
        if v.len() != Self::COUNT || v.iter().filter(|&&x| x == 1.0).count() != 1 {
            return None;
        }
        v.iter().position(|&x| x == 1.0).and_then(Self::from_index)
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::Left => "A_left",
            Action::Right => "A_right",
            Action::Up => "A_up",
            Action::Down => "A_down",
        }
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Action {
        Self::ALL[rng.gen_range(0..Self::COUNT)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    /// `[X, Y, Xa, C]`
    One,
    /// `[X, Y, Xa, C, H]`
    Two,
}

impl Stage {
    pub fn number(self) -> u8 {
        match self {
            Stage::One => 1,
            Stage::Two => 2,
        }
    }

    pub fn from_number(n: u8) -> Option<Stage> {
        match n {
            1 => Some(Stage::One),
            2 => Some(Stage::Two),
            _ => None,
        }
    }

    pub fn d_s(self) -> usize {
        self.state_names().len()
    }

    pub fn state_names(self) -> &'static [&'static str] {
        match self {
            Stage::One => &["X", "Y", "Xa", "C"],
            Stage::Two => &["X", "Y", "Xa", "C", "H"],
        }
    }

    /// State names followed by action names, in model input order.
    pub fn input_names(self) -> Vec<&'static str> {
        self.state_names()
            .iter()
            .copied()
            .chain(Action::ALL.iter().map(|a| a.name()))
            .collect()
    }

    pub fn input_index(self, name: &str) -> Option<usize> {
        self.input_names().iter().position(|n| *n == name)
    }

    pub fn state_index(self, name: &str) -> Option<usize> {
        self.state_names().iter().position(|n| *n == name)
    }
}

/// Index of the health feature in the stage-two state vector.
pub const HEALTH_INDEX: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct GridConfig {
    pub width: usize,
    pub height: usize,
    pub step_size: usize,
    pub heal_gain: f64,
    pub episode_len: usize,
    pub start_x_range: RangeInclusive<usize>,
    pub xa_range: RangeInclusive<usize>,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            width: 8,
            height: 8,
            step_size: 1,
            heal_gain: 0.1,
            episode_len: 15,
            start_x_range: 0..=2,
            xa_range: 4..=6,
        }
    }
}

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.width < 2 || self.height < 2 {
            return fail(format!("grid must be at least 2x2, got {}x{}", self.width, self.height));
        }
        if self.step_size == 0 {
            return fail("grid.step_size must be positive".into());
        }
        if self.episode_len == 0 {
            return fail("grid.episode_len must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.heal_gain) {
            return fail(format!("grid.heal_gain {} outside [0,1]", self.heal_gain));
        }
        if self.start_x_range.is_empty() || self.xa_range.is_empty() {
            return fail("grid ranges must be non-empty".into());
        }
        if *self.xa_range.end() >= self.width {
            return fail(format!("grid.xa_range {:?} leaves the grid", self.xa_range));
        }
        if self.xa_range.start() <= self.start_x_range.end() {
            return fail(format!(
                "grid.xa_range {:?} must lie strictly right of grid.start_x_range {:?}",
                self.xa_range, self.start_x_range
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvState {
    pub x: usize,
    pub y: usize,
    pub xa: usize,
    pub h: f64,
    /// 1 = green.
    pub c: u8,
}

pub fn reset<R: Rng + ?Sized>(cfg: &GridConfig, rng: &mut R) -> EnvState {
    let x = rng.gen_range(cfg.start_x_range.clone());
    let y = rng.gen_range(0..cfg.height);
    let xa = rng.gen_range(cfg.xa_range.clone());
    EnvState {
        x,
        y,
        xa,
        h: 0.5,
        c: u8::from(xa <= x),
    }
}

pub fn step(cfg: &GridConfig, state: &EnvState, action: Action) -> EnvState {
    let s = cfg.step_size;
    let (mut x, mut y) = (state.x, state.y);
    match action {
        Action::Left => x = x.saturating_sub(s),
        Action::Right => x = (x + s).min(cfg.width - 1),
        Action::Up => y = (y + s).min(cfg.height - 1),
        Action::Down => y = y.saturating_sub(s),
    }
    EnvState {
        x,
        y,
        xa: state.xa,
        h: (state.h + cfg.heal_gain * f64::from(state.c)).clamp(0.0, 1.0),
        c: u8::from(state.xa <= state.x),
    }
}

/// Normalized feature vector in `[0, 1]`, ordered as [`Stage::state_names`].
pub fn encode(state: &EnvState, stage: Stage, cfg: &GridConfig) -> Vec<f64> {
    let wx = (cfg.width - 1) as f64;
    let wy = (cfg.height - 1) as f64;
    let mut v = vec![
        state.x as f64 / wx,
        state.y as f64 / wy,
        state.xa as f64 / wx,
        f64::from(state.c),
    ];
    if stage == Stage::Two {
        v.push(state.h);
    }
    v
}

/// Inverse of [`encode`] for grid-valued fields. Stage-one vectors decode with `h = 0.5`.
pub fn decode(v: &[f64], stage: Stage, cfg: &GridConfig) -> Result<EnvState> {
    if v.len() != stage.d_s() {
        return Err(Error::Dimension {
            what: "encoded state",
            expected: stage.d_s(),
            got: v.len(),
        });
    }
    let wx = (cfg.width - 1) as f64;
    let wy = (cfg.height - 1) as f64;
    Ok(EnvState {
        x: (v[0] * wx).round() as usize,
        y: (v[1] * wy).round() as usize,
        xa: (v[2] * wx).round() as usize,
        c: u8::from(v[3] >= 0.5),
        h: if stage == Stage::Two { v[4] } else { 0.5 },
    })
}

/// True causal parents of each state feature, self-edges included.
pub fn ground_truth_graph(stage: Stage) -> Graph {
    let full = Graph::from_fn(Stage::Two.d_s(), Action::COUNT, |i, k| {
        let names = Stage::Two.input_names();
        matches!(
            (names[i], Stage::Two.state_names()[k]),
            ("A_left", "X")
                | ("A_right", "X")
                | ("A_up", "Y")
                | ("A_down", "Y")
                | ("X", "C")
                | ("Xa", "C")
                | ("C", "H")
        )
    });
    match stage {
        Stage::Two => full,
        Stage::One => full.remove_state(HEALTH_INDEX),
    }
}
