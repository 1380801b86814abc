//! Monte-Carlo scoring of candidate action courses.
//!
//! For each candidate course the agent imagines one trajectory per sampled
//! graph, scores every graph against the trajectories imagined by the *other*
//! graphs, and applies one simulated structural update. The size of that update
//! (learning progress) or the confidence of the updated beliefs (ambiguity)
//! rates the course.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gridworld::Action;
use crate::model::{batch_log_likelihood, logistic, rollout, FunctionalParams, Graph, Transition};
use crate::structure::{
    apply_structural_update, reinforce_gradient_scored, sample_graph, sparsity_gradient, GraphScore, ReinforceOptions,
    StructuralParams,
};

/// A fixed sequence of actions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionCourse(pub Vec<Action>);

impl ActionCourse {
    pub fn random<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Self {
        ActionCourse((0..len).map(|_| Action::random(rng)).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn one_hot(&self) -> Vec<Vec<f64>> {
        self.0.iter().map(|a| a.one_hot()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RewardKind {
    Random,
    LearningProgress,
    Ambiguity,
}

impl RewardKind {
    pub const ALL: [RewardKind; 3] = [RewardKind::Random, RewardKind::LearningProgress, RewardKind::Ambiguity];

    pub fn as_str(self) -> &'static str {
        match self {
            RewardKind::Random => "random",
            RewardKind::LearningProgress => "learning_progress",
            RewardKind::Ambiguity => "ambiguity",
        }
    }
}

impl fmt::Display for RewardKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RewardKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "random" => Ok(RewardKind::Random),
            "learning_progress" | "lp" => Ok(RewardKind::LearningProgress),
            "ambiguity" | "a" => Ok(RewardKind::Ambiguity),
            other => Err(Error::Config(format!(
                "unknown condition {other:?} (expected random, learning_progress or ambiguity)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanConfig {
    pub n_courses: usize,
    pub n_graphs: usize,
    pub horizon: usize,
    pub sim_lr: f64,
    pub sim_alpha: f64,
    pub reward_kind: RewardKind,
    pub reinforce: ReinforceOptions,
}

impl Default for PlanConfig {
    fn default() -> Self {
        PlanConfig {
            n_courses: 32,
            n_graphs: 4,
            horizon: 15,
            sim_lr: 5e-2,
            sim_alpha: 0.05,
            reward_kind: RewardKind::Ambiguity,
            reinforce: ReinforceOptions::default(),
        }
    }
}

impl PlanConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_courses == 0 {
            return Err(Error::Config("plan.n_courses must be positive".into()));
        }
        if self.n_graphs < 2 {
            return Err(Error::Config(format!(
                "plan.n_graphs must be at least 2, got {}",
                self.n_graphs
            )));
        }
        if self.horizon == 0 {
            return Err(Error::Config("plan.horizon must be positive".into()));
        }
        if !(self.sim_lr.is_finite() && self.sim_lr > 0.0) {
            return Err(Error::Config(format!("plan.sim_lr {} must be > 0", self.sim_lr)));
        }
        if !(self.sim_alpha.is_finite() && self.sim_alpha >= 0.0) {
            return Err(Error::Config(format!("plan.sim_alpha {} must be >= 0", self.sim_alpha)));
        }
        Ok(())
    }
}

/// Result of one simulated structural update.
#[derive(Debug, Clone)]
pub struct SimulatedUpdate {
    pub updated: StructuralParams,
    pub rollouts: usize,
}

/// One simulated REINFORCE step of `sp` driven by cross-graph disagreement along `course`.
///
/// Neither `sp` nor `fp` is modified.
pub fn simulate_structural_learning(
    sp: &StructuralParams,
    fp: &FunctionalParams,
    start_state: &[f64],
    course: &ActionCourse,
    graphs: &[Graph],
    cfg: &PlanConfig,
) -> Result<SimulatedUpdate> {
    if course.is_empty() {
        return Err(Error::Contract("action course has zero horizon".into()));
    }
    if graphs.len() != cfg.n_graphs {
        return Err(Error::Contract(format!(
            "expected {} graphs, got {}",
            cfg.n_graphs,
            graphs.len()
        )));
    }
    let actions = course.one_hot();
    let trajectories = graphs
        .iter()
        .map(|g| rollout(fp, g, start_state, &actions))
        .collect::<Result<Vec<_>>>()?;

    let mut samples = Vec::with_capacity(graphs.len());
    for (m, graph) in graphs.iter().enumerate() {
        let mut batch = Vec::with_capacity((graphs.len() - 1) * actions.len());
        for (other, traj) in trajectories.iter().enumerate() {
            if other == m {
                continue;
            }
            for (t, action) in actions.iter().enumerate() {
                let prev = if t == 0 { start_state } else { &traj[t - 1] };
                batch.push(Transition {
                    prev_state: prev.to_vec(),
                    action: action.clone(),
                    next_state: traj[t].clone(),
                });
            }
        }
        let (total, per_feature) = batch_log_likelihood(fp, graph, &batch)?;
        samples.push((graph.clone(), GraphScore { total, per_feature }));
    }
    let reinforce = reinforce_gradient_scored(sp, &samples, cfg.reinforce)?;
    let updated = apply_structural_update(sp, &reinforce, &sparsity_gradient(sp), cfg.sim_lr, cfg.sim_alpha)?;
    Ok(SimulatedUpdate {
        updated,
        rollouts: trajectories.len(),
    })
}

/// Entrywise L1 distance between learnable logits.
pub fn reward_learning_progress(before: &StructuralParams, after: &StructuralParams) -> Result<f64> {
    if before.gamma().shape() != after.gamma().shape() {
        return Err(Error::Contract("structural parameter shapes differ".into()));
    }
    Ok(before
        .learnable()
        .map(|(i, k)| (after.logit(i, k) - before.logit(i, k)).abs())
        .sum())
}

/// Mean negative Bernoulli entropy over all entries; in `[-ln 2, 0]`.
pub fn reward_ambiguity(after: &StructuralParams) -> f64 {
    let g = after.gamma();
    let n = g.as_slice().len() as f64;
    g.as_slice().iter().map(|&x| neg_entropy(x)).sum::<f64>() / n
}

/// `p ln p + (1-p) ln(1-p)` for `p = logistic(logit)`.
fn neg_entropy(logit: f64) -> f64 {
    let p = logistic(logit);
    let term = |q: f64| if q > 0.0 { q * q.ln() } else { 0.0 };
    term(p) + term(1.0 - p)
}

#[derive(Debug, Clone)]
pub struct PlanOutcome {
    pub course: ActionCourse,
    /// Reward of every candidate; empty for the random condition.
    pub scores: Vec<f64>,
    pub chosen_index: usize,
    pub rollouts: usize,
}

/// Chooses the course with the highest intrinsic reward; ties go to the lowest index.
///
/// Each candidate evaluation draws its graphs from its own stream seeded from
/// `rng`, so parallel and serial evaluation choose the same course.
pub fn plan<R: Rng + ?Sized>(
    sp: &StructuralParams,
    fp: &FunctionalParams,
    current_state: &[f64],
    cfg: &PlanConfig,
    rng: &mut R,
) -> Result<PlanOutcome> {
    cfg.validate()?;
    if cfg.reward_kind == RewardKind::Random {
        return Ok(PlanOutcome {
            course: ActionCourse::random(cfg.horizon, rng),
            scores: Vec::new(),
            chosen_index: 0,
            rollouts: 0,
        });
    }
    let candidates: Vec<(ActionCourse, u64)> = (0..cfg.n_courses)
        .map(|_| (ActionCourse::random(cfg.horizon, rng), rng.gen()))
        .collect();

    let evaluated = candidates
        .par_iter()
        .map(|(course, seed)| {
            let mut stream = ChaCha8Rng::seed_from_u64(*seed);
            let graphs: Vec<Graph> = (0..cfg.n_graphs).map(|_| sample_graph(sp, &mut stream)).collect();
            let sim = simulate_structural_learning(sp, fp, current_state, course, &graphs, cfg)?;
            let reward = match cfg.reward_kind {
                RewardKind::LearningProgress => reward_learning_progress(sp, &sim.updated)?,
                RewardKind::Ambiguity => reward_ambiguity(&sim.updated),
                RewardKind::Random => unreachable!(),
            };
            Ok((reward, sim.rollouts))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut best = 0;
    for (i, (r, _)) in evaluated.iter().enumerate() {
        if *r > evaluated[best].0 {
            best = i;
        }
    }
    Ok(PlanOutcome {
        course: candidates[best].0.clone(),
        scores: evaluated.iter().map(|(r, _)| *r).collect(),
        chosen_index: best,
        rollouts: evaluated.iter().map(|(_, n)| n).sum(),
    })
}
