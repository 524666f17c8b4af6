//! Training-data augmentation: synthetic failures (instruction mismatch and
//! random walks), success variants built from effectless edits, and step
//! balancing between successful and failed trajectories.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::io;
use crate::model::{Action, ActionKind, Direction, Step, Trajectory};
use crate::seed;

/// Syntactic action tuples that leave the task state unchanged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EffectlessPattern {
    /// A single `NOTHING`.
    Nothing,
    /// `SCROLL d` followed by `SCROLL opposite(d)`.
    ScrollPair(Direction),
    /// `GOBACK` followed by a repeat of the preceding action.
    BackAndRepeat,
}

impl EffectlessPattern {
    pub fn all() -> Vec<EffectlessPattern> {
        let mut v = vec![EffectlessPattern::Nothing];
        v.extend(
            Direction::ALL
                .iter()
                .map(|d| EffectlessPattern::ScrollPair(*d)),
        );
        v.push(EffectlessPattern::BackAndRepeat);
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisConfig {
    pub seed: u64,
    /// Target success-step to failure-step ratio.
    pub target_ratio: f64,
    /// Accepted relative deviation from the target ratio.
    pub tolerance: f64,
    pub max_insertions: usize,
    pub effectless_patterns: Vec<EffectlessPattern>,
    /// Share of synthesized failures built by instruction mismatch; the rest
    /// are random walks.
    pub mismatch_fraction: f64,
    /// At most this many synthesized trajectories per input trajectory.
    pub cap_factor: f64,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        SynthesisConfig {
            seed: 0,
            target_ratio: 1.0,
            tolerance: 0.1,
            max_insertions: 2,
            effectless_patterns: EffectlessPattern::all(),
            mismatch_fraction: 0.5,
            cap_factor: 10.0,
        }
    }
}

impl SynthesisConfig {
    pub fn check(&self) -> Result<()> {
        if !(self.target_ratio > 0.0 && self.target_ratio.is_finite()) {
            return Err(Error::InvalidInput("target ratio must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.mismatch_fraction) {
            return Err(Error::InvalidInput(
                "mismatch fraction must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

fn strip_milestones(steps: &[Step]) -> Vec<Step> {
    steps
        .iter()
        .map(|s| Step {
            milestone_reward: None,
            ..s.clone()
        })
        .collect()
}

/// Pairs a goal's instruction with another goal's action trajectory.
pub fn synth_failed_mismatch(
    goal_id: &str,
    instruction: &str,
    donor: &Trajectory,
    rng: &mut impl Rng,
) -> Result<Trajectory> {
    if donor.goal_id == goal_id {
        return Err(Error::InvalidInput(format!(
            "mismatch donor {} belongs to the same goal {goal_id}",
            donor.traj_id
        )));
    }
    Ok(Trajectory {
        traj_id: format!(
            "{goal_id}~mismatch~{}~{:08x}",
            donor.traj_id,
            rng.random::<u32>()
        ),
        goal_id: goal_id.to_string(),
        instruction: instruction.to_string(),
        success: false,
        steps: strip_milestones(&donor.steps),
    })
}

/// Uniform sampler over valid actions, seeded with the element ids, texts and
/// screens observed in a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionSpace {
    pub element_ids: Vec<u64>,
    pub texts: Vec<String>,
    pub observations: Vec<String>,
}

impl ActionSpace {
    pub fn from_dataset(dataset: &[Trajectory]) -> Self {
        let mut elements = std::collections::BTreeSet::new();
        let mut texts = std::collections::BTreeSet::new();
        let mut observations = std::collections::BTreeSet::new();
        for t in dataset {
            for s in &t.steps {
                elements.extend(s.action.element_id);
                if let Some(tx) = &s.action.text {
                    texts.insert(tx.clone());
                }
                observations.insert(s.observation.clone());
            }
        }
        ActionSpace {
            element_ids: elements.into_iter().collect(),
            texts: texts.into_iter().collect(),
            observations: observations.into_iter().collect(),
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Action {
        let element = |rng: &mut dyn rand::RngCore| {
            self.element_ids
                .choose(rng)
                .copied()
                .unwrap_or_else(|| rng.random_range(0..100))
        };
        let text = |rng: &mut dyn rand::RngCore| {
            self.texts
                .choose(rng)
                .cloned()
                .unwrap_or_else(|| "text".to_string())
        };
        match *ActionKind::ALL.choose(rng).expect("non-empty") {
            ActionKind::Input => {
                let e = element(rng);
                Action::input(e, text(rng))
            }
            ActionKind::Click => Action::click(element(rng)),
            ActionKind::LongClick => Action::long_click(element(rng)),
            ActionKind::Scroll => Action::scroll(*Direction::ALL.choose(rng).expect("non-empty")),
            ActionKind::Answer => Action::answer(text(rng)),
            ActionKind::Goback => Action::goback(),
            ActionKind::Nothing => Action::nothing(),
        }
    }

    fn observation(&self, rng: &mut impl Rng) -> String {
        self.observations.choose(rng).cloned().unwrap_or_default()
    }
}

pub fn synth_failed_randomwalk(
    space: &ActionSpace,
    goal_id: &str,
    instruction: &str,
    length: usize,
    rng: &mut impl Rng,
) -> Result<Trajectory> {
    if length == 0 {
        return Err(Error::InvalidInput(
            "random walk length must be >= 1".into(),
        ));
    }
    let steps = (0..length)
        .map(|_| {
            let a = space.sample(rng);
            Step::new(a, space.observation(rng))
        })
        .collect();
    Ok(Trajectory {
        traj_id: format!("{goal_id}~randomwalk~{:016x}", rng.random::<u64>()),
        goal_id: goal_id.to_string(),
        instruction: instruction.to_string(),
        success: false,
        steps,
    })
}

/// Removes every `NOTHING` step. Returns `None` if that would leave no steps.
pub fn remove_nothing(t: &Trajectory) -> Option<Trajectory> {
    let steps: Vec<Step> = t
        .steps
        .iter()
        .filter(|s| s.action.kind != ActionKind::Nothing)
        .cloned()
        .collect();
    (!steps.is_empty()).then(|| Trajectory { steps, ..t.clone() })
}

/// Inserts an effectless tuple after step `after` (0-based). Inserted steps
/// show the screen of the step they follow and carry no milestone.
pub fn insert_pattern(
    t: &Trajectory,
    after: usize,
    pattern: EffectlessPattern,
) -> Result<Trajectory> {
    let prev = t
        .steps
        .get(after)
        .ok_or_else(|| Error::InvalidInput(format!("insert position {after} out of range")))?;
    let screen = prev.observation.clone();
    let actions = match pattern {
        EffectlessPattern::Nothing => vec![Action::nothing()],
        EffectlessPattern::ScrollPair(d) => vec![Action::scroll(d), Action::scroll(d.opposite())],
        EffectlessPattern::BackAndRepeat => vec![Action::goback(), prev.action.clone()],
    };
    let mut steps = t.steps.clone();
    let inserted = actions.into_iter().map(|a| Step::new(a, screen.clone()));
    steps.splice(after + 1..after + 1, inserted);
    Ok(Trajectory { steps, ..t.clone() })
}

/// A successful variant of `prototype`: optionally drops its `NOTHING`
/// steps, then inserts up to `max_insertions` effectless tuples.
pub fn synth_success_variant(
    prototype: &Trajectory,
    rng: &mut impl Rng,
    cfg: &SynthesisConfig,
) -> Result<Trajectory> {
    if !prototype.success {
        return Err(Error::InvalidInput(format!(
            "{} is not successful; variants need a successful prototype",
            prototype.traj_id
        )));
    }
    let mut v = prototype.clone();
    let has_nothing = v.steps.iter().any(|s| s.action.kind == ActionKind::Nothing);
    if has_nothing && rng.random_bool(0.5) {
        if let Some(stripped) = remove_nothing(&v) {
            v = stripped;
        }
    }
    if !cfg.effectless_patterns.is_empty() && cfg.max_insertions > 0 {
        let n = rng.random_range(1..=cfg.max_insertions);
        for _ in 0..n {
            let after = rng.random_range(0..v.len());
            let p = *cfg.effectless_patterns.choose(rng).expect("non-empty");
            v = insert_pattern(&v, after, p)?;
        }
    }
    v.traj_id = format!("{}~variant~{:08x}", prototype.traj_id, rng.random::<u32>());
    Ok(v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthSource {
    Real,
    Mismatch,
    Randomwalk,
    Variant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct SourceCount {
    pub trajectories: usize,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BalanceReport {
    /// Keyed by (source, success).
    pub counts: BTreeMap<(SynthSource, bool), SourceCount>,
    pub ratio_before: f64,
    pub ratio_after: f64,
}

impl BalanceReport {
    fn add(&mut self, source: SynthSource, t: &Trajectory) {
        let c = self.counts.entry((source, t.success)).or_default();
        c.trajectories += 1;
        c.steps += t.len();
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| Error::InvalidInput(format!("csv: {e}"));
        w.write_record(["source", "success", "count_trajectories", "count_steps"])
            .map_err(err)?;
        for ((source, success), c) in &self.counts {
            let name = match source {
                SynthSource::Real => "real",
                SynthSource::Mismatch => "mismatch",
                SynthSource::Randomwalk => "randomwalk",
                SynthSource::Variant => "variant",
            };
            w.write_record([
                name.to_string(),
                success.to_string(),
                c.trajectories.to_string(),
                c.steps.to_string(),
            ])
            .map_err(err)?;
        }
        w.into_inner()
            .map_err(|e| Error::InvalidInput(format!("csv: {e}")))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        io::write_atomic(path, &self.to_csv()?)
    }
}

/// Success-step count divided by failure-step count.
pub fn step_ratio(dataset: &[Trajectory]) -> f64 {
    let (s, f) = step_counts(dataset);
    if f == 0 {
        f64::INFINITY
    } else {
        s as f64 / f as f64
    }
}

fn step_counts(dataset: &[Trajectory]) -> (usize, usize) {
    dataset.iter().fold((0, 0), |(s, f), t| {
        if t.success {
            (s + t.len(), f)
        } else {
            (s, f + t.len())
        }
    })
}

fn within_band(ratio: f64, cfg: &SynthesisConfig) -> bool {
    (ratio - cfg.target_ratio).abs() <= cfg.tolerance * cfg.target_ratio
}

/// Adds synthetic trajectories until the success/failure step ratio is
/// within `tolerance` of the target. Failures are synthesized when successes
/// dominate, success variants when failures dominate. Each synthesized item
/// draws from its own derived RNG stream.
pub fn balance_dataset(
    real: &[Trajectory],
    cfg: &SynthesisConfig,
) -> Result<(Vec<Trajectory>, BalanceReport)> {
    cfg.check()?;
    if real.is_empty() {
        return Err(Error::InvalidInput(
            "cannot balance an empty dataset".into(),
        ));
    }
    let mut report = BalanceReport::default();
    for t in real {
        report.add(SynthSource::Real, t);
    }
    let successes: Vec<&Trajectory> = real.iter().filter(|t| t.success).collect();
    if successes.is_empty() {
        return Err(Error::Unsatisfiable(
            "no successful trajectories: failures cannot be balanced by synthesis".into(),
        ));
    }
    let mut out: Vec<Trajectory> = real.to_vec();
    let (mut s_steps, mut f_steps) = step_counts(real);
    let ratio = |s: usize, f: usize| {
        if f == 0 {
            f64::INFINITY
        } else {
            s as f64 / f as f64
        }
    };
    report.ratio_before = ratio(s_steps, f_steps);

    let cap = ((real.len() as f64) * cfg.cap_factor).ceil() as usize;
    let need_failures = ratio(s_steps, f_steps) > cfg.target_ratio * (1.0 + cfg.tolerance);
    let need_successes = ratio(s_steps, f_steps) < cfg.target_ratio * (1.0 - cfg.tolerance);

    // Goal pool: (goal_id, instruction) of every goal with a success.
    let mut goals: BTreeMap<&str, &str> = BTreeMap::new();
    for t in &successes {
        goals
            .entry(t.goal_id.as_str())
            .or_insert(t.instruction.as_str());
    }
    let goals: Vec<(&str, &str)> = goals.into_iter().collect();
    let mut fail_lengths: Vec<usize> = real
        .iter()
        .filter(|t| !t.success)
        .map(|t| t.len())
        .collect();
    if fail_lengths.is_empty() {
        fail_lengths = successes.iter().map(|t| t.len()).collect();
    }
    let space = ActionSpace::from_dataset(real);

    let mut attempt = 0usize;
    loop {
        if !need_failures && !need_successes {
            break;
        }
        let current = ratio(s_steps, f_steps);
        let distance = |r: f64| (r - cfg.target_ratio).abs();
        if attempt >= cap {
            if within_band(current, cfg) {
                break;
            }
            return Err(Error::Unsatisfiable(format!(
                "reached the cap of {cap} synthesis attempts at ratio {current:.3} (target {})",
                cfg.target_ratio
            )));
        }
        let (t, source) = if need_failures {
            let mut rng = seed::rng(cfg.seed, &format!("balance:fail:{attempt}"));
            let (goal, instruction) = *goals.choose(&mut rng).expect("non-empty");
            let donors: Vec<&&Trajectory> =
                successes.iter().filter(|t| t.goal_id != goal).collect();
            if !donors.is_empty() && rng.random_bool(cfg.mismatch_fraction) {
                let donor = donors.choose(&mut rng).expect("non-empty");
                (
                    synth_failed_mismatch(goal, instruction, donor, &mut rng)?,
                    SynthSource::Mismatch,
                )
            } else {
                let len = *fail_lengths.choose(&mut rng).expect("non-empty");
                (
                    synth_failed_randomwalk(&space, goal, instruction, len, &mut rng)?,
                    SynthSource::Randomwalk,
                )
            }
        } else {
            let mut rng = seed::rng(cfg.seed, &format!("balance:success:{attempt}"));
            let proto = successes.choose(&mut rng).expect("non-empty");
            let mut t = synth_success_variant(proto, &mut rng, cfg)?;
            t.traj_id = format!("{}~{attempt}", t.traj_id);
            (t, SynthSource::Variant)
        };
        attempt += 1;
        let next = if need_failures {
            ratio(s_steps, f_steps + t.len())
        } else {
            ratio(s_steps + t.len(), f_steps)
        };
        let overshoots = if need_failures {
            next < cfg.target_ratio
        } else {
            next > cfg.target_ratio
        };
        if overshoots && distance(next) >= distance(current) {
            if within_band(current, cfg) {
                break;
            }
            // Too long to help; try another candidate.
            continue;
        }
        if need_failures {
            f_steps += t.len();
        } else {
            s_steps += t.len();
        }
        report.add(source, &t);
        out.push(t);
        if overshoots {
            break;
        }
    }
    report.ratio_after = ratio(s_steps, f_steps);
    if !within_band(report.ratio_after, cfg) {
        return Err(Error::Unsatisfiable(format!(
            "could not reach ratio {} within ±{:.0}%: ended at {:.3}; the synthesized items are too long relative to the corpus",
            cfg.target_ratio,
            cfg.tolerance * 100.0,
            report.ratio_after
        )));
    }
    Ok((out, report))
}
