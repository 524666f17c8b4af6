//! Recipe library construction: group each goal's successful trajectories
//! so every pair in a group is at least `theta` similar, then fold each group
//! into its common action subsequence.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::model::{Action, Trajectory};
use crate::seed::sha256_hex;
use crate::softlcs::Matcher;

pub const LIBRARY_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Recipe {
    pub recipe_id: String,
    pub goal_id: String,
    pub actions: Vec<Action>,
    pub source_traj_ids: Vec<String>,
    pub group_size: usize,
}

impl Recipe {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Constants a library was built with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LibraryConfig {
    pub theta: f64,
    pub epsilon: f64,
    pub text_similarity: String,
}

impl LibraryConfig {
    pub fn new(theta: f64, matcher: &Matcher) -> Self {
        LibraryConfig {
            theta,
            epsilon: matcher.epsilon(),
            text_similarity: matcher.text_similarity_id(),
        }
    }

    /// Short content hash embedded in labeled outputs.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).unwrap_or_default();
        sha256_hex(&bytes)[..16].to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecipeLibrary {
    pub schema_version: u32,
    pub config: LibraryConfig,
    pub goals: BTreeMap<String, Vec<Recipe>>,
    /// Groups whose fold came out empty, by goal. Reported rather than dropped.
    #[serde(default)]
    pub empty_groups: BTreeMap<String, Vec<Vec<String>>>,
}

impl RecipeLibrary {
    pub fn empty(config: LibraryConfig) -> Self {
        RecipeLibrary {
            schema_version: LIBRARY_SCHEMA_VERSION,
            config,
            goals: BTreeMap::new(),
            empty_groups: BTreeMap::new(),
        }
    }

    pub fn recipes(&self, goal_id: &str) -> &[Recipe] {
        self.goals.get(goal_id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn recipe_count(&self) -> usize {
        self.goals.values().map(Vec::len).sum()
    }
}

/// Row-major pairwise similarity matrix.
pub fn similarity_matrix(trajectories: &[&Trajectory], matcher: &Matcher) -> Vec<Vec<f64>> {
    let actions: Vec<Vec<Action>> = trajectories.iter().map(|t| t.actions()).collect();
    let n = actions.len();
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (i + 1..n)
                .map(|j| matcher.sequence_similarity(&actions[i], &actions[j]))
                .collect()
        })
        .collect();
    let mut m = vec![vec![1.0; n]; n];
    for i in 0..n {
        for (off, &s) in upper[i].iter().enumerate() {
            let j = i + 1 + off;
            m[i][j] = s;
            m[j][i] = s;
        }
    }
    m
}

/// Greedy complete-linkage grouping. Trajectories are visited in `traj_id`
/// order and join the first group whose every member is at least `theta`
/// similar, otherwise they open a new group.
pub fn group_trajectories(
    successes: &[&Trajectory],
    theta: f64,
    matcher: &Matcher,
) -> Result<Vec<Vec<String>>> {
    let Some(first) = successes.first() else {
        return Ok(Vec::new());
    };
    if let Some(bad) = successes
        .iter()
        .find(|t| t.goal_id != first.goal_id || !t.success)
    {
        return Err(Error::InvalidInput(format!(
            "grouping expects successful trajectories of goal {:?}; got {:?}",
            first.goal_id, bad.traj_id
        )));
    }
    let mut sorted: Vec<&Trajectory> = successes.to_vec();
    sorted.sort_by(|a, b| a.traj_id.cmp(&b.traj_id));
    let sim = similarity_matrix(&sorted, matcher);

    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (i, row) in sim.iter().enumerate() {
        match groups
            .iter_mut()
            .find(|g| g.iter().all(|&j| row[j] >= theta))
        {
            Some(g) => g.push(i),
            None => groups.push(vec![i]),
        }
    }
    Ok(groups
        .into_iter()
        .map(|g| g.into_iter().map(|i| sorted[i].traj_id.clone()).collect())
        .collect())
}

/// Folds a group into its recipe. Members are folded in `traj_id` order and
/// the recipe id is `<goal_id>:<first traj_id>`.
pub fn extract_recipe(group: &[&Trajectory], matcher: &Matcher) -> Result<Recipe> {
    let mut sorted: Vec<&Trajectory> = group.to_vec();
    sorted.sort_by(|a, b| a.traj_id.cmp(&b.traj_id));
    let first = sorted
        .first()
        .ok_or_else(|| Error::InvalidInput("cannot extract a recipe from an empty group".into()))?;
    let sequences: Vec<Vec<Action>> = sorted.iter().map(|t| t.actions()).collect();
    let actions = matcher.fold_lcs(&sequences);
    let source_traj_ids: Vec<String> = sorted.iter().map(|t| t.traj_id.clone()).collect();
    if actions.is_empty() {
        return Err(Error::EmptyRecipe {
            goal_id: first.goal_id.clone(),
            traj_ids: source_traj_ids,
        });
    }
    Ok(Recipe {
        recipe_id: format!("{}:{}", first.goal_id, first.traj_id),
        goal_id: first.goal_id.clone(),
        actions,
        group_size: sorted.len(),
        source_traj_ids,
    })
}

pub fn build_library(
    dataset: &[Trajectory],
    theta: f64,
    matcher: &Matcher,
) -> Result<RecipeLibrary> {
    let mut by_goal: BTreeMap<&str, Vec<&Trajectory>> = BTreeMap::new();
    for t in dataset.iter().filter(|t| t.success) {
        by_goal.entry(t.goal_id.as_str()).or_default().push(t);
    }
    let mut lib = RecipeLibrary::empty(LibraryConfig::new(theta, matcher));
    for (goal, members) in by_goal {
        let index: BTreeMap<&str, &Trajectory> =
            members.iter().map(|t| (t.traj_id.as_str(), *t)).collect();
        let mut recipes = Vec::new();
        for group in group_trajectories(&members, theta, matcher)? {
            let group_refs: Vec<&Trajectory> = group.iter().map(|id| index[id.as_str()]).collect();
            match extract_recipe(&group_refs, matcher) {
                Ok(r) => recipes.push(r),
                Err(Error::EmptyRecipe { goal_id, traj_ids }) => {
                    log::warn!("goal {goal_id}: group {traj_ids:?} produced an empty recipe");
                    lib.empty_groups.entry(goal_id).or_default().push(traj_ids);
                }
                Err(e) => return Err(e),
            }
        }
        recipes.sort_by(|a, b| {
            b.group_size
                .cmp(&a.group_size)
                .then_with(|| a.recipe_id.cmp(&b.recipe_id))
        });
        if !recipes.is_empty() {
            lib.goals.insert(goal.to_string(), recipes);
        }
    }
    Ok(lib)
}

pub fn library_to_bytes(lib: &RecipeLibrary) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(lib)
        .map_err(|e| Error::InvalidInput(format!("serialization failed: {e}")))?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn save_library(path: &Path, lib: &RecipeLibrary) -> Result<()> {
    io::write_atomic(path, &library_to_bytes(lib)?)
}

/// Loads a library and compares its config snapshot with `current`.
/// Differences come back as warnings; an unknown schema version is an error.
pub fn load_library(
    path: &Path,
    current: Option<&LibraryConfig>,
) -> Result<(RecipeLibrary, Vec<String>)> {
    let body = io::read_to_string(path)?;
    let raw: serde_json::Value = serde_json::from_str(&body).map_err(|e| Error::Parse {
        line: e.line(),
        reason: e.to_string(),
    })?;
    match raw.get("schema_version").and_then(|v| v.as_u64()) {
        Some(v) if v == LIBRARY_SCHEMA_VERSION as u64 => {}
        other => {
            return Err(Error::Schema(format!(
                "recipe library schema version {other:?}, expected {LIBRARY_SCHEMA_VERSION}"
            )))
        }
    }
    let lib: RecipeLibrary =
        serde_json::from_value(raw).map_err(|e| Error::Schema(e.to_string()))?;
    let mut warnings = Vec::new();
    if let Some(cur) = current {
        if cur.theta != lib.config.theta {
            warnings.push(format!(
                "library built with theta {} but current config has {}",
                lib.config.theta, cur.theta
            ));
        }
        if cur.epsilon != lib.config.epsilon {
            warnings.push(format!(
                "library built with epsilon {} but current config has {}",
                lib.config.epsilon, cur.epsilon
            ));
        }
        if cur.text_similarity != lib.config.text_similarity {
            warnings.push(format!(
                "library built with text similarity {} but current is {}",
                lib.config.text_similarity, cur.text_similarity
            ));
        }
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok((lib, warnings))
}
