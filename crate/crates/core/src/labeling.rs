//! Progress labels for trajectories.
//!
//! Three labelers share one assignment rule: key steps get a progress value,
//! every other step inherits the value of the nearest preceding key step, and
//! steps before the first key step get 0.
//!
//! * [`assign_progress_lcs`] aligns the trajectory with its best recipe; the
//!   step matched to recipe position `κ` of a recipe of length `L` gets `κ/L`.
//! * [`assign_progress_env`] uses milestone rewards: the `λ`-th rewarded step
//!   gets `λ/total`.
//! * [`assign_progress_linear`] is the uniform-gain baseline `t/T`.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::model::{LabeledStep, Trajectory};
use crate::recipes::{Recipe, RecipeLibrary};
use crate::softlcs::{Alignment, Matcher, TIE_BAND};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Labeler {
    Lcs,
    Env,
    Linear,
}

impl std::str::FromStr for Labeler {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lcs" => Ok(Labeler::Lcs),
            "env" => Ok(Labeler::Env),
            "linear" => Ok(Labeler::Linear),
            other => Err(Error::InvalidInput(format!("unknown labeler {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabeledTrajectory {
    pub traj_id: String,
    pub labeler: Labeler,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matched_recipe_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completion_ratio: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub library_hash: Option<String>,
    pub labels: Vec<LabeledStep>,
}

impl LabeledTrajectory {
    pub fn progress(&self) -> Vec<f64> {
        self.labels.iter().map(|l| l.progress).collect()
    }

    pub fn final_progress(&self) -> f64 {
        self.labels.last().map_or(0.0, |l| l.progress)
    }

    pub fn key_steps(&self) -> Vec<usize> {
        self.labels
            .iter()
            .filter(|l| l.is_key)
            .map(|l| l.step_index)
            .collect()
    }

    /// Problems with the label sequence: range, monotonicity and length.
    pub fn violations(&self, step_count: usize) -> Vec<String> {
        let mut out = Vec::new();
        if self.labels.len() != step_count {
            out.push(format!(
                "{} labels for {} steps",
                self.labels.len(),
                step_count
            ));
        }
        let mut prev = 0.0;
        for l in &self.labels {
            if !(0.0..=1.0).contains(&l.progress) {
                out.push(format!(
                    "step {}: progress {} out of range",
                    l.step_index, l.progress
                ));
            }
            if l.progress < prev {
                out.push(format!("step {}: progress decreases", l.step_index));
            }
            if l.is_key != l.recipe_position.is_some() {
                out.push(format!(
                    "step {}: recipe_position must be set iff key",
                    l.step_index
                ));
            }
            prev = l.progress;
        }
        out
    }
}

/// Builds labels from `(step_index, position)` key steps on a schedule of
/// `total` positions. Keys must be increasing in both coordinates.
fn inherit_labels(step_count: usize, keys: &[(usize, usize)], total: usize) -> Vec<LabeledStep> {
    let mut by_step: BTreeMap<usize, usize> = BTreeMap::new();
    for &(i, pos) in keys {
        by_step.insert(i, pos);
    }
    let mut current = 0.0;
    (0..step_count)
        .map(|i| match by_step.get(&i) {
            Some(&pos) => {
                current = (pos as f64 / total as f64).min(1.0);
                LabeledStep {
                    step_index: i,
                    progress: current,
                    is_key: true,
                    recipe_position: Some(pos),
                }
            }
            None => LabeledStep {
                step_index: i,
                progress: current,
                is_key: false,
                recipe_position: None,
            },
        })
        .collect()
}

/// Soft-LCS score with the recipe divided by the recipe length.
pub fn completion_ratio(t: &Trajectory, r: &Recipe, matcher: &Matcher) -> f64 {
    if r.is_empty() {
        return 0.0;
    }
    (matcher.soft_lcs(&t.actions(), &r.actions) / r.len() as f64).clamp(0.0, 1.0)
}

/// The recipe a trajectory is labeled against.
#[derive(Debug, Clone)]
pub struct Selection<'a> {
    pub recipe: &'a Recipe,
    pub alignment: Alignment,
    pub completion_ratio: f64,
}

/// Picks the recipe with the highest completion ratio. Ties go to the longer
/// recipe, then to the smaller recipe id.
pub fn select_recipe<'a>(
    t: &Trajectory,
    lib: &'a RecipeLibrary,
    matcher: &Matcher,
) -> Result<Selection<'a>> {
    let recipes = lib.recipes(&t.goal_id);
    if recipes.is_empty() {
        return Err(Error::NoRecipe(t.goal_id.clone()));
    }
    let actions = t.actions();
    let mut best: Option<Selection<'a>> = None;
    for r in recipes.iter().filter(|r| !r.is_empty()) {
        let alignment = matcher.align(&actions, &r.actions);
        let cr = (alignment.score / r.len() as f64).clamp(0.0, 1.0);
        let better = match &best {
            None => true,
            Some(b) => {
                if (cr - b.completion_ratio).abs() > TIE_BAND {
                    cr > b.completion_ratio
                } else if r.len() != b.recipe.len() {
                    r.len() > b.recipe.len()
                } else {
                    r.recipe_id < b.recipe.recipe_id
                }
            }
        };
        if better {
            best = Some(Selection {
                recipe: r,
                alignment,
                completion_ratio: cr,
            });
        }
    }
    best.ok_or_else(|| Error::NoRecipe(t.goal_id.clone()))
}

pub fn assign_progress_lcs(
    t: &Trajectory,
    lib: &RecipeLibrary,
    matcher: &Matcher,
) -> Result<LabeledTrajectory> {
    let sel = select_recipe(t, lib, matcher)?;
    let keys: Vec<(usize, usize)> = sel
        .alignment
        .pairs
        .iter()
        .filter(|p| p.contribution > 0.0)
        .map(|p| (p.i, p.j + 1))
        .collect();
    Ok(LabeledTrajectory {
        traj_id: t.traj_id.clone(),
        labeler: Labeler::Lcs,
        matched_recipe_id: Some(sel.recipe.recipe_id.clone()),
        completion_ratio: Some(sel.completion_ratio),
        library_hash: Some(lib.config.hash()),
        labels: inherit_labels(t.len(), &keys, sel.recipe.len()),
    })
}

/// Milestone-based labels. The `λ`-th milestone-rewarded step gets
/// `λ / milestone_total`; `recipe_position` holds `λ`.
pub fn assign_progress_env(t: &Trajectory, milestone_total: usize) -> Result<LabeledTrajectory> {
    if milestone_total == 0 {
        return Err(Error::InvalidInput(
            "milestone_total must be positive".into(),
        ));
    }
    let milestones = t.milestone_indices();
    if milestones.len() > milestone_total {
        return Err(Error::InvalidInput(format!(
            "{}: {} milestones observed but milestone_total is {milestone_total}",
            t.traj_id,
            milestones.len()
        )));
    }
    let keys: Vec<(usize, usize)> = milestones
        .into_iter()
        .enumerate()
        .map(|(lambda, i)| (i, lambda + 1))
        .collect();
    Ok(LabeledTrajectory {
        traj_id: t.traj_id.clone(),
        labeler: Labeler::Env,
        matched_recipe_id: None,
        completion_ratio: None,
        library_hash: None,
        labels: inherit_labels(t.len(), &keys, milestone_total),
    })
}

/// Uniform-gain baseline `t/T`, defined for successful trajectories only.
pub fn assign_progress_linear(t: &Trajectory) -> Result<LabeledTrajectory> {
    if !t.success {
        return Err(Error::InvalidInput(format!(
            "{}: linear labels are only defined for successful trajectories",
            t.traj_id
        )));
    }
    let n = t.len();
    let keys: Vec<(usize, usize)> = (0..n).map(|i| (i, i + 1)).collect();
    Ok(LabeledTrajectory {
        traj_id: t.traj_id.clone(),
        labeler: Labeler::Linear,
        matched_recipe_id: None,
        completion_ratio: None,
        library_hash: None,
        labels: inherit_labels(n, &keys, n),
    })
}

/// Default milestone schedule per goal: the largest milestone count among the
/// goal's successful trajectories, with explicit overrides taking precedence.
pub fn milestone_totals(
    dataset: &[Trajectory],
    overrides: &BTreeMap<String, usize>,
) -> BTreeMap<String, usize> {
    let mut totals: BTreeMap<String, usize> = BTreeMap::new();
    for t in dataset.iter().filter(|t| t.success) {
        let n = t.milestone_indices().len();
        let e = totals.entry(t.goal_id.clone()).or_insert(0);
        *e = (*e).max(n);
    }
    totals.retain(|_, n| *n > 0);
    for (g, n) in overrides {
        totals.insert(g.clone(), *n);
    }
    totals
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LabelSummary {
    pub input: usize,
    pub labeled: usize,
    pub skipped: usize,
    /// Skip reasons keyed by traj_id.
    pub skip_reasons: BTreeMap<String, String>,
    /// Skipped trajectory count per goal.
    pub skipped_by_goal: BTreeMap<String, usize>,
    /// Failed trajectories whose LCS labels reach 1.0.
    pub failed_full_match: Vec<String>,
}

pub fn label_dataset(
    dataset: &[Trajectory],
    lib: Option<&RecipeLibrary>,
    mode: Labeler,
    matcher: &Matcher,
    milestone_overrides: &BTreeMap<String, usize>,
) -> Result<(Vec<LabeledTrajectory>, LabelSummary)> {
    if mode == Labeler::Lcs && lib.is_none() {
        return Err(Error::InvalidInput(
            "LCS labeling needs a recipe library".into(),
        ));
    }
    let totals = milestone_totals(dataset, milestone_overrides);
    let results: Vec<Result<LabeledTrajectory>> = dataset
        .par_iter()
        .map(|t| match mode {
            Labeler::Lcs => assign_progress_lcs(t, lib.expect("checked above"), matcher),
            Labeler::Env => match totals.get(&t.goal_id) {
                Some(&n) => assign_progress_env(t, n),
                None => Err(Error::InvalidInput(format!(
                    "no milestone schedule known for goal {:?}",
                    t.goal_id
                ))),
            },
            Labeler::Linear => assign_progress_linear(t),
        })
        .collect();

    let mut summary = LabelSummary {
        input: dataset.len(),
        ..Default::default()
    };
    let mut labeled = Vec::with_capacity(dataset.len());
    for (t, res) in dataset.iter().zip(results) {
        match res {
            Ok(l) => {
                if !t.success && mode == Labeler::Lcs && l.final_progress() >= 1.0 {
                    summary.failed_full_match.push(t.traj_id.clone());
                }
                labeled.push(l);
            }
            Err(e) => {
                summary.skipped += 1;
                *summary
                    .skipped_by_goal
                    .entry(t.goal_id.clone())
                    .or_insert(0) += 1;
                summary
                    .skip_reasons
                    .insert(t.traj_id.clone(), e.to_string());
            }
        }
    }
    summary.labeled = labeled.len();
    Ok((labeled, summary))
}

pub fn write_labels(path: &Path, labels: &[LabeledTrajectory]) -> Result<()> {
    io::write_atomic(path, &io::to_jsonl(labels)?)
}

pub fn read_labels(path: &Path) -> Result<Vec<LabeledTrajectory>> {
    Ok(io::from_jsonl(&io::read_to_string(path)?)?
        .into_iter()
        .map(|(_, l)| l)
        .collect())
}
