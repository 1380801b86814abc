//! Two-stage protocol: random-action structure learning on `[X, Y, Xa, C]`,
//! then curiosity-driven learning after health is added to the state.

use std::collections::VecDeque;
use std::path::Path;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::{ExperimentConfig, OptimizerKind};
use super::records::{format_summary, sort_records, summarize, write_records, RunRecord};
use crate::curiosity::{plan, ActionCourse, RewardKind};
use crate::error::{Error, Result};
use crate::gridworld::{encode, reset, step, Action, Stage, HEALTH_INDEX};
use crate::model::{apply_functional_update, evaluate_batch, Adam, FunctionalParams, ModelDims, Transition};
use crate::structure::{
    apply_structural_update, edge_probabilities, reinforce_gradient_scored, sample_graph, sparsity_gradient,
    GraphScore, StructuralParams,
};

// Independent random streams per seed.
const ENV_STREAM: u64 = 1;
const AGENT_STREAM: u64 = 2;
const STAGE2_STREAM: u64 = 3;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// World-model parameters plus optimizer state.
#[derive(Debug, Clone)]
pub struct Agent {
    pub functional: FunctionalParams,
    pub structural: StructuralParams,
    adam: Option<Adam>,
}

impl Agent {
    pub fn new(cfg: &ExperimentConfig, stage: Stage, rng: &mut ChaCha8Rng) -> Self {
        let dims = ModelDims::new(stage.d_s(), Action::COUNT, cfg.d_h);
        let functional = FunctionalParams::init(dims, cfg.sigma_min, rng).with_sigma_max(cfg.sigma_max);
        Agent {
            adam: (cfg.optimizer == OptimizerKind::Adam).then(|| Adam::new(&functional)),
            structural: StructuralParams::new(dims.d_s, dims.d_a, cfg.clamp_bound),
            functional,
        }
    }

    /// One joint update of the functional and structural parameters on `batch`.
    pub fn train_step(&mut self, cfg: &ExperimentConfig, batch: &[Transition], rng: &mut ChaCha8Rng) -> Result<()> {
        let mut grads = Vec::with_capacity(cfg.n_graph_samples);
        let mut scored = Vec::with_capacity(cfg.n_graph_samples);
        for _ in 0..cfg.n_graph_samples {
            let g = sample_graph(&self.structural, rng);
            let eval = evaluate_batch(&self.functional, &g, batch)?;
            grads.push(eval.gradient);
            scored.push((
                g,
                GraphScore {
                    total: eval.mean_log_likelihood,
                    per_feature: eval.feature_log_likelihood,
                },
            ));
        }
        self.functional = match &mut self.adam {
            Some(adam) => adam.step(&self.functional, &grads, cfg.lr_theta)?,
            None => apply_functional_update(&self.functional, &grads, cfg.lr_theta)?,
        };
        let reinforce = reinforce_gradient_scored(&self.structural, &scored, cfg.reinforce_options())?;
        self.structural = apply_structural_update(
            &self.structural,
            &reinforce,
            &sparsity_gradient(&self.structural),
            cfg.lr_gamma,
            cfg.alpha,
        )?;
        Ok(())
    }

    /// `epochs_per_episode` shuffled passes over the replay buffer in minibatches.
    pub fn train_on_replay(
        &mut self,
        cfg: &ExperimentConfig,
        replay: &ReplayBuffer,
        rng: &mut ChaCha8Rng,
    ) -> Result<()> {
        let mut data: Vec<&Transition> = replay.transitions().collect();
        if data.is_empty() {
            return Ok(());
        }
        for _ in 0..cfg.epochs_per_episode {
            data.shuffle(rng);
            for chunk in data.chunks(cfg.batch_size) {
                let batch: Vec<Transition> = chunk.iter().map(|t| (*t).clone()).collect();
                self.train_step(cfg, &batch, rng)?;
            }
        }
        Ok(())
    }

    /// Adds the health feature: a zero-logit row and column in the structure,
    /// a fresh output block and input column in the network.
    pub fn add_health(&self, rng: &mut ChaCha8Rng) -> Agent {
        let functional = self.functional.insert_state_feature(HEALTH_INDEX, rng);
        Agent {
            adam: self.adam.as_ref().map(|_| Adam::new(&functional)),
            structural: self.structural.insert_state_feature(HEALTH_INDEX),
            functional,
        }
    }
}

/// Most recent episodes of transitions.
#[derive(Debug, Clone, Default)]
pub struct ReplayBuffer {
    capacity: usize,
    episodes: VecDeque<Vec<Transition>>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer {
            capacity,
            episodes: VecDeque::with_capacity(capacity),
        }
    }

    pub fn push(&mut self, episode: Vec<Transition>) {
        if self.episodes.len() == self.capacity {
            self.episodes.pop_front();
        }
        self.episodes.push_back(episode);
    }

    pub fn transitions(&self) -> impl Iterator<Item = &Transition> {
        self.episodes.iter().flatten()
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }
}

/// Executes `course` from a fresh reset and returns the encoded transitions.
fn run_episode(
    cfg: &ExperimentConfig,
    stage: Stage,
    start: crate::gridworld::EnvState,
    course: &ActionCourse,
) -> Result<Vec<Transition>> {
    let mut state = start;
    let mut out = Vec::with_capacity(course.len());
    for &a in &course.0 {
        let next = step(&cfg.grid, &state, a);
        out.push(Transition::new(
            encode(&state, stage, &cfg.grid),
            a.one_hot(),
            encode(&next, stage, &cfg.grid),
        )?);
        state = next;
    }
    Ok(out)
}

/// Edge-probability rows for every learnable edge.
pub fn snapshot(sp: &StructuralParams, stage: Stage, condition: &str, seed: u64, episode: usize) -> Vec<RunRecord> {
    let probs = edge_probabilities(sp);
    let inputs = stage.input_names();
    let outputs = stage.state_names();
    sp.learnable()
        .map(|(i, k)| RunRecord {
            condition: condition.to_string(),
            seed,
            stage: stage.number(),
            episode,
            edge_from: inputs[i].to_string(),
            edge_to: outputs[k].to_string(),
            probability: probs.get(i, k),
        })
        .collect()
}

/// State after one stage: the agent, the rng streams it used, and its records.
#[derive(Debug, Clone)]
pub struct StageOutput {
    pub agent: Agent,
    /// Records for the stage; `condition` is left empty for stage one.
    pub records: Vec<RunRecord>,
    env_rng: ChaCha8Rng,
    agent_rng: ChaCha8Rng,
}

fn check_agent(agent: &Agent) -> Result<()> {
    if let Some(index) = agent.functional.first_non_finite() {
        return Err(Error::NonFinite {
            what: "functional parameters",
            index,
        });
    }
    if let Some(index) = agent.structural.gamma().first_non_finite() {
        return Err(Error::NonFinite {
            what: "structural parameters",
            index,
        });
    }
    Ok(())
}

/// Random actions on the stage-one state. Records the edge probabilities at the
/// start of each episode, so episode 0 shows the initial beliefs.
pub fn run_stage1(cfg: &ExperimentConfig, seed: u64) -> Result<StageOutput> {
    let mut env_rng = stream(seed, ENV_STREAM);
    let mut agent_rng = stream(seed, AGENT_STREAM);
    let stage = Stage::One;
    let mut agent = Agent::new(cfg, stage, &mut agent_rng);
    let stage1_grid = cfg.stage1_grid();
    let mut replay = ReplayBuffer::new(cfg.replay_episodes);
    let mut records = Vec::new();
    for episode in 0..cfg.stage1_episodes {
        records.extend(snapshot(&agent.structural, stage, "", seed, episode));
        let start = reset(&stage1_grid, &mut env_rng);
        let course = ActionCourse::random(cfg.grid.episode_len, &mut agent_rng);
        replay.push(run_episode(cfg, stage, start, &course)?);
        agent.train_on_replay(cfg, &replay, &mut agent_rng)?;
        check_agent(&agent)?;
    }
    Ok(StageOutput {
        agent,
        records,
        env_rng,
        agent_rng,
    })
}

/// Adds health, then plans each episode under `condition`.
pub fn run_stage2(
    cfg: &ExperimentConfig,
    seed: u64,
    condition: RewardKind,
    stage1: &StageOutput,
) -> Result<StageOutput> {
    // Same environment stream for every condition; separate agent stream.
    let mut env_rng = stage1.env_rng.clone();
    let mut agent_rng = stage1.agent_rng.clone();
    agent_rng.set_stream(STAGE2_STREAM);
    let stage = Stage::Two;
    let plan_cfg = cfg.plan_for(condition);
    let mut agent = stage1.agent.add_health(&mut agent_rng);
    let mut replay = ReplayBuffer::new(cfg.replay_episodes);
    let mut records = Vec::new();
    for episode in 0..cfg.stage2_episodes {
        records.extend(snapshot(&agent.structural, stage, condition.as_str(), seed, episode));
        let start = reset(&cfg.grid, &mut env_rng);
        let encoded = encode(&start, stage, &cfg.grid);
        let outcome = plan(
            &agent.structural,
            &agent.functional,
            &encoded,
            &plan_cfg,
            &mut agent_rng,
        )?;
        replay.push(run_episode(cfg, stage, start, &outcome.course)?);
        agent.train_on_replay(cfg, &replay, &mut agent_rng)?;
        check_agent(&agent)?;
    }
    Ok(StageOutput {
        agent,
        records,
        env_rng,
        agent_rng,
    })
}

/// Final state and records of one `(condition, seed)` run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub condition: RewardKind,
    pub seed: u64,
    pub stage1: Agent,
    pub stage2: Agent,
    pub records: Vec<RunRecord>,
}

/// Runs stage one once per seed and stage two per condition. Stage one is
/// condition-independent, so its records are copied under each condition.
pub fn run_all(cfg: &ExperimentConfig) -> Vec<(RewardKind, u64, Result<RunOutput>)> {
    let body = || {
        let stage1: Vec<(u64, Result<StageOutput>)> = cfg
            .seeds
            .par_iter()
            .map(|&seed| (seed, run_stage1(cfg, seed)))
            .collect();
        let jobs: Vec<(RewardKind, u64, &Result<StageOutput>)> = cfg
            .conditions
            .iter()
            .flat_map(|&c| stage1.iter().map(move |(s, r)| (c, *s, r)))
            .collect();
        jobs.into_par_iter()
            .map(|(condition, seed, s1)| {
                let result = match s1 {
                    Ok(s1) => run_stage2(cfg, seed, condition, s1).map(|s2| {
                        let mut records: Vec<RunRecord> = s1
                            .records
                            .iter()
                            .cloned()
                            .map(|mut r| {
                                r.condition = condition.as_str().to_string();
                                r
                            })
                            .collect();
                        records.extend(s2.records);
                        RunOutput {
                            condition,
                            seed,
                            stage1: s1.agent.clone(),
                            stage2: s2.agent,
                            records,
                        }
                    }),
                    Err(e) => Err(Error::Contract(format!("stage one failed: {e}"))),
                };
                let result = result.map_err(|e| Error::Run {
                    condition: condition.as_str().to_string(),
                    seed,
                    source: Box::new(e),
                });
                (condition, seed, result)
            })
            .collect()
    };
    if cfg.parallel {
        body()
    } else {
        match rayon::ThreadPoolBuilder::new().num_threads(1).build() {
            Ok(pool) => pool.install(body),
            Err(e) => {
                warn!("could not build single-thread pool ({e}); running on the global pool");
                body()
            }
        }
    }
}

/// Outcome of [`run_experiment`].
#[derive(Debug)]
pub struct ExperimentReport {
    pub runs: Vec<RunOutput>,
    pub failures: Vec<Error>,
    pub record_count: usize,
}

/// Runs every `(condition, seed)` pair and writes `records.csv`, `summary.csv`
/// and `config.echo` into `cfg.output_dir`. Failed runs are listed in
/// `failed.txt` and returned in the report.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let out = &cfg.output_dir;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_file(&out.join("config.echo"), &cfg.to_kv_string())?;

    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for (condition, seed, result) in run_all(cfg) {
        match result {
            Ok(run) => {
                info!("finished condition {condition} seed {seed}");
                runs.push(run);
            }
            Err(e) => {
                warn!("{e}");
                failures.push(e);
            }
        }
    }
    let mut records: Vec<RunRecord> = runs.iter().flat_map(|r| r.records.iter().cloned()).collect();
    sort_records(&mut records);
    write_records(&out.join("records.csv"), &records)?;

    let summary = if cfg.stage2_episodes > 0 && !records.is_empty() {
        summarize(&records, 2, "C", "H", cfg.threshold)?
    } else {
        Vec::new()
    };
    write_file(&out.join("summary.csv"), &format_summary(&summary))?;

    let failed_path = out.join("failed.txt");
    if failures.is_empty() {
        if failed_path.exists() {
            std::fs::remove_file(&failed_path).map_err(|e| Error::io(&failed_path, e))?;
        }
    } else {
        let text: String = failures.iter().map(|e| format!("{e}\n")).collect();
        write_file(&failed_path, &text)?;
    }
    Ok(ExperimentReport {
        record_count: records.len(),
        runs,
        failures,
    })
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentConfig {
        ExperimentConfig {
            seeds: vec![0],
            stage1_episodes: 3,
            stage2_episodes: 2,
            epochs_per_episode: 1,
            plan: crate::curiosity::PlanConfig {
                n_courses: 3,
                ..ExperimentConfig::default().plan
            },
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn zero_episodes_returns_initial_beliefs() {
        let cfg = ExperimentConfig {
            stage1_episodes: 0,
            ..tiny()
        };
        let out = run_stage1(&cfg, 7).unwrap();
        assert!(out.records.is_empty());
        for (i, k) in out.agent.structural.learnable() {
            assert_eq!(out.agent.structural.logit(i, k), 0.0);
        }
    }

    #[test]
    fn replay_evicts_oldest_episode() {
        let mut rb = ReplayBuffer::new(2);
        let t = |v: f64| Transition::new(vec![v], vec![1.0], vec![v]).unwrap();
        rb.push(vec![t(0.1)]);
        rb.push(vec![t(0.2)]);
        rb.push(vec![t(0.3)]);
        assert_eq!(rb.len(), 2);
        let firsts: Vec<f64> = rb.transitions().map(|t| t.prev_state[0]).collect();
        assert_eq!(firsts, vec![0.2, 0.3]);
    }

    #[test]
    fn stage_two_starts_at_half_for_health_edges() {
        let cfg = tiny();
        let s1 = run_stage1(&cfg, 1).unwrap();
        let s2 = run_stage2(&cfg, 1, RewardKind::Ambiguity, &s1).unwrap();
        let first: Vec<&RunRecord> = s2.records.iter().filter(|r| r.episode == 0).collect();
        assert_eq!(first.len(), 40);
        for r in first.iter().filter(|r| r.edge_from == "H" || r.edge_to == "H") {
            assert_eq!(r.probability, 0.5);
        }
    }

    #[test]
    fn record_count_matches_arithmetic() {
        let cfg = tiny();
        let runs = run_all(&cfg);
        assert_eq!(runs.len(), 3);
        for (_, _, r) in runs {
            let r = r.unwrap();
            assert_eq!(r.records.len(), 3 * 28 + 2 * 40);
        }
    }
}
