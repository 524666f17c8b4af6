//! Synthetic milestone environment.
//!
//! Each task has one to three equally long core recipes (alternative optimal
//! policies). Every core action is a milestone, so the environment knows the
//! true progress of every step. Scripted agents replay, perturb, truncate or
//! ignore a core recipe to produce trajectories with known key steps.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::model::{Action, Direction, Step, Trajectory};
use crate::seed;
use crate::softlcs::{classic_lcs_len, Matcher};

#[derive(Debug, Clone, PartialEq)]
pub struct DifficultyConfig {
    pub min_len: usize,
    pub max_len: usize,
    pub max_recipes: usize,
    pub distractor_pool: usize,
    /// Chance that an alternative recipe reuses the first recipe's action at
    /// the same position.
    pub shared_action_rate: f64,
    /// Alternative recipes must be less similar than this.
    pub theta: f64,
    pub max_retries: usize,
}

impl Default for DifficultyConfig {
    fn default() -> Self {
        DifficultyConfig {
            min_len: 4,
            max_len: 10,
            max_recipes: 3,
            distractor_pool: 12,
            shared_action_rate: 0.2,
            theta: crate::config::DEFAULT_THETA,
            max_retries: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub goal_id: String,
    pub instruction: String,
    /// Words shown on the final screen once the task is complete.
    pub target: String,
    pub core_recipes: Vec<Vec<Action>>,
    /// Title of the screen reached by each core action.
    pub core_pages: Vec<Vec<String>>,
    /// Indices of milestone-rewarded actions per recipe (all of them).
    pub milestone_positions: Vec<Vec<usize>>,
    pub distractor_action_pool: Vec<Action>,
    pub distractor_pages: Vec<String>,
}

impl TaskSpec {
    pub fn core_len(&self) -> usize {
        self.core_recipes.first().map_or(0, Vec::len)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum PolicyKind {
    Optimal,
    Noisy,
    EarlyStop,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentPolicy {
    pub kind: PolicyKind,
    pub noise_rate: f64,
    pub stop_fraction: f64,
}

impl AgentPolicy {
    pub fn new(kind: PolicyKind) -> Self {
        AgentPolicy {
            kind,
            noise_rate: 0.3,
            stop_fraction: 0.5,
        }
    }

    pub fn check(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.noise_rate) {
            return Err(Error::InvalidInput("noise_rate must lie in [0, 1)".into()));
        }
        if !(self.stop_fraction > 0.0 && self.stop_fraction <= 1.0) {
            return Err(Error::InvalidInput(
                "stop_fraction must lie in (0, 1]".into(),
            ));
        }
        Ok(())
    }
}

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

/// Draws pronounceable three-syllable tokens, unique within one generator.
struct WordSource {
    used: BTreeSet<String>,
}

impl WordSource {
    fn new() -> Self {
        WordSource {
            used: BTreeSet::new(),
        }
    }

    fn word(&mut self, rng: &mut impl Rng) -> String {
        loop {
            let w: String = (0..3)
                .flat_map(|_| {
                    [
                        *CONSONANTS.choose(rng).expect("non-empty") as char,
                        *VOWELS.choose(rng).expect("non-empty") as char,
                    ]
                })
                .collect();
            if self.used.insert(w.clone()) {
                return w;
            }
        }
    }
}

fn fresh_element(rng: &mut impl Rng, used: &mut BTreeSet<u64>) -> u64 {
    loop {
        let e = rng.random_range(1..1000u64);
        if used.insert(e) {
            return e;
        }
    }
}

fn core_action(rng: &mut impl Rng, words: &mut WordSource, elements: &mut BTreeSet<u64>) -> Action {
    let e = fresh_element(rng, elements);
    let roll: f64 = rng.random();
    if roll < 0.65 {
        Action::click(e)
    } else if roll < 0.75 {
        Action::long_click(e)
    } else {
        Action::input(e, format!("{} {}", words.word(rng), words.word(rng)))
    }
}

fn generate_task(index: usize, rng: &mut impl Rng, cfg: &DifficultyConfig) -> Result<TaskSpec> {
    let goal_id = format!("goal-{index:03}");
    let matcher = Matcher::default();
    let len = rng.random_range(cfg.min_len..=cfg.max_len);
    let n_recipes = rng.random_range(1..=cfg.max_recipes.max(1));

    for _ in 0..cfg.max_retries.max(1) {
        let mut words = WordSource::new();
        let mut elements = BTreeSet::new();
        let mut recipes: Vec<Vec<Action>> = Vec::new();
        let mut pages: Vec<Vec<String>> = Vec::new();
        for r in 0..n_recipes {
            let mut actions = Vec::with_capacity(len);
            let mut titles = Vec::with_capacity(len);
            for pos in 0..len {
                if r > 0 && rng.random::<f64>() < cfg.shared_action_rate {
                    actions.push(recipes[0][pos].clone());
                    titles.push(pages[0][pos].clone());
                } else {
                    actions.push(core_action(rng, &mut words, &mut elements));
                    titles.push(words.word(rng));
                }
            }
            recipes.push(actions);
            pages.push(titles);
        }
        let distinct = (0..recipes.len()).all(|a| {
            (a + 1..recipes.len()).all(|b| {
                classic_lcs_len(&recipes[a], &recipes[b]) < len
                    && matcher.sequence_similarity(&recipes[a], &recipes[b]) < cfg.theta
            })
        });
        if !distinct {
            continue;
        }

        let core_set: std::collections::HashSet<&Action> = recipes.iter().flatten().collect();
        let mut pool = Vec::new();
        while pool.len() < cfg.distractor_pool {
            let roll: f64 = rng.random();
            let a = if roll < 0.45 {
                Action::click(fresh_element(rng, &mut elements))
            } else if roll < 0.55 {
                Action::long_click(fresh_element(rng, &mut elements))
            } else if roll < 0.7 {
                let e = fresh_element(rng, &mut elements);
                Action::input(e, format!("{} {}", words.word(rng), words.word(rng)))
            } else if roll < 0.9 {
                Action::scroll(*Direction::ALL.choose(rng).expect("non-empty"))
            } else {
                Action::goback()
            };
            if !core_set.contains(&a) && !pool.contains(&a) {
                pool.push(a);
            }
        }
        let distractor_pages: Vec<String> = (0..4).map(|_| words.word(rng)).collect();
        let target = format!("{} {}", words.word(rng), words.word(rng));

        let summaries: Vec<String> = recipes
            .iter()
            .zip(&pages)
            .map(|(actions, titles)| {
                actions
                    .iter()
                    .zip(titles)
                    .map(|(a, p)| match &a.text {
                        Some(t) => format!("{p} '{t}'"),
                        None => p.clone(),
                    })
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect();
        let instruction = format!("{goal_id}: set {target} via {}", summaries.join(" or "));
        return Ok(TaskSpec {
            goal_id,
            instruction,
            target,
            milestone_positions: vec![(0..len).collect(); recipes.len()],
            core_recipes: recipes,
            core_pages: pages,
            distractor_action_pool: pool,
            distractor_pages,
        });
    }
    Err(Error::Unsatisfiable(format!(
        "{goal_id}: could not draw {n_recipes} distinct recipes of length {len} in {} tries",
        cfg.max_retries
    )))
}

pub fn generate_tasks(n: usize, seed: u64, cfg: &DifficultyConfig) -> Result<Vec<TaskSpec>> {
    if n == 0 {
        return Err(Error::InvalidInput("need at least one task".into()));
    }
    if cfg.min_len == 0 || cfg.min_len > cfg.max_len {
        return Err(Error::InvalidInput("recipe length range is empty".into()));
    }
    (0..n)
        .map(|i| {
            let mut rng = seed::rng(seed, &format!("task:{i}"));
            generate_task(i, &mut rng, cfg)
        })
        .collect()
}

/// One agent rollout with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentRun {
    pub trajectory: Trajectory,
    pub recipe_index: usize,
    pub policy: PolicyKind,
    /// True progress after each step.
    pub true_progress: Vec<f64>,
    pub key_steps: Vec<usize>,
}

enum Planned {
    Core(usize),
    Noise(Action),
}

fn noise_items(task: &TaskSpec, rng: &mut impl Rng) -> Vec<Action> {
    let roll: f64 = rng.random();
    if roll < 0.6 {
        vec![task
            .distractor_action_pool
            .choose(rng)
            .cloned()
            .unwrap_or_else(Action::nothing)]
    } else if roll < 0.8 {
        vec![Action::nothing()]
    } else {
        let d = *Direction::ALL.choose(rng).expect("non-empty");
        vec![Action::scroll(d), Action::scroll(d.opposite())]
    }
}

fn noise_burst(task: &TaskSpec, rate: f64, rng: &mut impl Rng, plan: &mut Vec<Planned>) {
    let mut n = 0;
    while n < 3 && rng.random::<f64>() < rate {
        plan.extend(noise_items(task, rng).into_iter().map(Planned::Noise));
        n += 1;
    }
}

/// Renders the screen shown after each planned action and assembles the
/// trajectory. Progress and milestones follow the core prefix reached.
fn execute(
    task: &TaskSpec,
    recipe: usize,
    plan: Vec<Planned>,
    success: bool,
    traj_id: String,
) -> (Trajectory, Vec<f64>, Vec<usize>) {
    let core = &task.core_recipes[recipe];
    let pages = &task.core_pages[recipe];
    let total = core.len();
    let mut reached = 0usize;
    let mut title = "home".to_string();
    let mut steps = Vec::with_capacity(plan.len());
    let mut progress = Vec::with_capacity(plan.len());
    let mut keys = Vec::new();
    for (i, item) in plan.into_iter().enumerate() {
        let (action, milestone) = match item {
            Planned::Core(pos) => {
                debug_assert_eq!(pos, reached);
                reached += 1;
                title = if reached == total {
                    task.target.clone()
                } else {
                    pages[pos].clone()
                };
                (core[pos].clone(), true)
            }
            Planned::Noise(a) => {
                // Accidental progress: a noise action equal to the next core action.
                if reached < total && a == core[reached] {
                    title = pages[reached].clone();
                    reached += 1;
                    (a, true)
                } else {
                    match a.kind {
                        crate::ActionKind::Click
                        | crate::ActionKind::LongClick
                        | crate::ActionKind::Input => {
                            let k = a.element_id.unwrap_or(0) as usize
                                % task.distractor_pages.len().max(1);
                            title = task.distractor_pages.get(k).cloned().unwrap_or_default();
                        }
                        crate::ActionKind::Goback => {
                            title = if reached == 0 {
                                "home".into()
                            } else {
                                pages[reached - 1].clone()
                            };
                        }
                        _ => {}
                    }
                    (a, false)
                }
            }
        };
        let done = pages[..reached].join(" ");
        let observation = format!("screen {title} | done {done}")
            .trim_end()
            .to_string();
        let mut step = Step::new(action, observation);
        if milestone {
            step.milestone_reward = Some(1.0);
            keys.push(i);
        }
        steps.push(step);
        progress.push(reached as f64 / total as f64);
    }
    let trajectory = Trajectory {
        traj_id,
        goal_id: task.goal_id.clone(),
        instruction: task.instruction.clone(),
        success,
        steps,
    };
    (trajectory, progress, keys)
}

pub fn run_agent(
    task: &TaskSpec,
    policy: &AgentPolicy,
    traj_id: &str,
    rng: &mut impl Rng,
) -> Result<AgentRun> {
    policy.check()?;
    let recipe = rng.random_range(0..task.core_recipes.len());
    let total = task.core_recipes[recipe].len();
    let mut plan = Vec::new();
    let success = match policy.kind {
        PolicyKind::Optimal => {
            plan.extend((0..total).map(Planned::Core));
            true
        }
        PolicyKind::Noisy => {
            for pos in 0..total {
                noise_burst(task, policy.noise_rate, rng, &mut plan);
                plan.push(Planned::Core(pos));
            }
            true
        }
        PolicyKind::EarlyStop => {
            let reached = ((policy.stop_fraction * total as f64).floor() as usize).min(total);
            for pos in 0..reached {
                noise_burst(task, policy.noise_rate, rng, &mut plan);
                plan.push(Planned::Core(pos));
            }
            // The agent wanders for a while and gives up.
            plan.extend(noise_items(task, rng).into_iter().map(Planned::Noise));
            noise_burst(task, policy.noise_rate, rng, &mut plan);
            reached == total
        }
        PolicyKind::Random => {
            let len = rng.random_range(total.max(1)..=total.max(1) * 3 / 2 + 1);
            while plan.len() < len {
                plan.extend(noise_items(task, rng).into_iter().map(Planned::Noise));
            }
            false
        }
    };
    let (trajectory, true_progress, key_steps) =
        execute(task, recipe, plan, success, traj_id.to_string());
    let success = trajectory.success || true_progress.last() == Some(&1.0);
    Ok(AgentRun {
        trajectory: Trajectory {
            success,
            ..trajectory
        },
        recipe_index: recipe,
        policy: policy.kind,
        true_progress,
        key_steps,
    })
}

/// Fractions of each policy in a corpus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyMix {
    pub optimal: f64,
    pub noisy: f64,
    pub early_stop: f64,
    pub random: f64,
}

impl PolicyMix {
    pub fn check(&self) -> Result<()> {
        let parts = [self.optimal, self.noisy, self.early_stop, self.random];
        if parts.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidInput(
                "policy fractions must lie in [0, 1]".into(),
            ));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "policy mix sums to {sum}, expected 1"
            )));
        }
        Ok(())
    }

    fn pick(&self, u: f64) -> PolicyKind {
        let mut acc = self.optimal;
        if u < acc {
            return PolicyKind::Optimal;
        }
        acc += self.noisy;
        if u < acc {
            return PolicyKind::Noisy;
        }
        acc += self.early_stop;
        if u < acc || self.random == 0.0 {
            return PolicyKind::EarlyStop;
        }
        PolicyKind::Random
    }

    /// Parses `optimal=0.25,noisy=0.35,early=0.2,random=0.2`. Missing
    /// entries are 0.
    pub fn parse(s: &str) -> Result<PolicyMix> {
        let mut mix = PolicyMix {
            optimal: 0.0,
            noisy: 0.0,
            early_stop: 0.0,
            random: 0.0,
        };
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::InvalidInput(format!("bad mix entry {part:?}")))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::InvalidInput(format!("bad mix value {part:?}")))?;
            match k.trim() {
                "optimal" => mix.optimal = v,
                "noisy" => mix.noisy = v,
                "early" | "early_stop" => mix.early_stop = v,
                "random" => mix.random = v,
                other => return Err(Error::InvalidInput(format!("unknown policy {other:?}"))),
            }
        }
        mix.check()?;
        Ok(mix)
    }
}

impl Default for PolicyMix {
    fn default() -> Self {
        PolicyMix {
            optimal: 0.25,
            noisy: 0.35,
            early_stop: 0.2,
            random: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentParams {
    pub noise_rate: f64,
    /// EARLY_STOP agents draw their stop fraction uniformly from this range.
    pub stop_fraction_range: (f64, f64),
}

impl Default for AgentParams {
    fn default() -> Self {
        AgentParams {
            noise_rate: 0.3,
            stop_fraction_range: (0.2, 0.8),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub dataset: Vec<Trajectory>,
    pub runs: Vec<AgentRun>,
}

impl Corpus {
    pub fn truth(&self) -> GroundTruth {
        GroundTruth {
            rows: self
                .runs
                .iter()
                .flat_map(|r| {
                    (0..r.true_progress.len()).map(move |i| TruthEntry {
                        traj_id: r.trajectory.traj_id.clone(),
                        step_index: i,
                        true_progress: r.true_progress[i],
                        is_key: r.key_steps.contains(&i),
                    })
                })
                .collect(),
        }
    }
}

pub fn generate_corpus(
    tasks: &[TaskSpec],
    mix: &PolicyMix,
    per_task: usize,
    seed: u64,
    params: &AgentParams,
) -> Result<Corpus> {
    mix.check()?;
    let (lo, hi) = params.stop_fraction_range;
    if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
        return Err(Error::InvalidInput(
            "stop fraction range must satisfy 0 < lo <= hi <= 1".into(),
        ));
    }
    let mut runs = Vec::with_capacity(tasks.len() * per_task);
    for task in tasks {
        for j in 0..per_task {
            let traj_id = format!("{}-t{j:03}", task.goal_id);
            let mut rng = seed::rng(seed, &traj_id);
            let kind = mix.pick(rng.random());
            let stop_fraction = if hi > lo {
                rng.random_range(lo..=hi)
            } else {
                lo
            };
            let policy = AgentPolicy {
                kind,
                noise_rate: params.noise_rate,
                stop_fraction,
            };
            runs.push(run_agent(task, &policy, &traj_id, &mut rng)?);
        }
    }
    runs.sort_by(|a, b| a.trajectory.traj_id.cmp(&b.trajectory.traj_id));
    Ok(Corpus {
        dataset: runs.iter().map(|r| r.trajectory.clone()).collect(),
        runs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthEntry {
    pub traj_id: String,
    pub step_index: usize,
    pub true_progress: f64,
    pub is_key: bool,
}

/// Ground-truth key steps and progress, one row per step.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GroundTruth {
    pub rows: Vec<TruthEntry>,
}

impl GroundTruth {
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r)
                .map_err(|e| Error::InvalidInput(format!("csv: {e}")))?;
        }
        w.into_inner()
            .map_err(|e| Error::InvalidInput(format!("csv: {e}")))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        io::write_atomic(path, &self.to_csv()?)
    }

    pub fn read(path: &Path) -> Result<GroundTruth> {
        let body = io::read_to_string(path)?;
        let mut r = csv::Reader::from_reader(body.as_bytes());
        let mut rows = Vec::new();
        for (i, rec) in r.deserialize().enumerate() {
            rows.push(rec.map_err(|e| Error::Parse {
                line: i + 2,
                reason: e.to_string(),
            })?);
        }
        Ok(GroundTruth { rows })
    }

    /// Rows grouped per trajectory, in step order.
    pub fn by_trajectory(&self) -> std::collections::BTreeMap<&str, Vec<&TruthEntry>> {
        let mut m: std::collections::BTreeMap<&str, Vec<&TruthEntry>> = Default::default();
        for r in &self.rows {
            m.entry(r.traj_id.as_str()).or_default().push(r);
        }
        for v in m.values_mut() {
            v.sort_by_key(|r| r.step_index);
        }
        m
    }
}

/// Shuffles goal ids deterministically and splits them into train/test.
pub fn split_goals(
    tasks: &[TaskSpec],
    test_fraction: f64,
    seed: u64,
) -> (Vec<String>, Vec<String>) {
    let mut ids: Vec<String> = tasks.iter().map(|t| t.goal_id.clone()).collect();
    ids.shuffle(&mut seed::rng(seed, "goal-split"));
    let n_test = ((ids.len() as f64) * test_fraction).round() as usize;
    let test = ids.split_off(ids.len() - n_test.min(ids.len()));
    (ids, test)
}
