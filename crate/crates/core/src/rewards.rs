//! Dense progress rewards and the sparse outcome baseline.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::remote::RemoteScorer;
use crate::estimator::{predict_state, predict_trajectory, ProgressModel, StateView};
use crate::io;
use crate::labeling::LabeledTrajectory;
use crate::model::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardSource {
    Estimator,
    Labels,
    Remote,
}

impl std::str::FromStr for RewardSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "estimator" => Ok(RewardSource::Estimator),
            "labels" => Ok(RewardSource::Labels),
            "remote" => Ok(RewardSource::Remote),
            other => Err(Error::InvalidInput(format!(
                "unknown reward source {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardSeries {
    pub traj_id: String,
    pub k: usize,
    pub source: RewardSource,
    pub rewards: Vec<f64>,
}

/// `r_t = p_t - p_{t-k}`, where progress before the first step is `p0`.
pub fn progress_rewards(progress: &[f64], k: usize, p0: f64) -> Result<Vec<f64>> {
    if k < 1 {
        return Err(Error::InvalidInput("k must be >= 1".into()));
    }
    if !(0.0..=1.0).contains(&p0) {
        return Err(Error::InvalidInput(format!("p0 = {p0} outside [0, 1]")));
    }
    if let Some(p) = progress.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::InvalidInput(format!("progress {p} outside [0, 1]")));
    }
    Ok((0..progress.len())
        .map(|t| {
            let earlier = if t >= k { progress[t - k] } else { p0 };
            progress[t] - earlier
        })
        .collect())
}

/// Terminal-only reward: 1 on the last step when judged successful.
pub fn outcome_reward(len: usize, success: bool) -> Vec<f64> {
    let mut r = vec![0.0; len];
    if success {
        if let Some(last) = r.last_mut() {
            *last = 1.0;
        }
    }
    r
}

/// Where per-step progress comes from.
#[derive(Debug, Clone, Copy)]
pub enum ProgressProvider<'a> {
    Estimator(&'a ProgressModel),
    Labels(&'a LabeledTrajectory),
    Remote(&'a RemoteScorer),
}

impl ProgressProvider<'_> {
    pub fn source(&self) -> RewardSource {
        match self {
            ProgressProvider::Estimator(_) => RewardSource::Estimator,
            ProgressProvider::Labels(_) => RewardSource::Labels,
            ProgressProvider::Remote(_) => RewardSource::Remote,
        }
    }
}

/// Progress series plus the initial-state progress `p0`.
pub fn progress_series(t: &Trajectory, provider: ProgressProvider<'_>) -> Result<(Vec<f64>, f64)> {
    match provider {
        ProgressProvider::Estimator(m) => {
            let p0 = predict_state(m, &StateView::initial(t))?;
            Ok((predict_trajectory(m, t)?, p0))
        }
        ProgressProvider::Labels(l) => {
            if l.traj_id != t.traj_id || l.labels.len() != t.len() {
                return Err(Error::InvalidInput(format!(
                    "labels for {} do not match trajectory {}",
                    l.traj_id, t.traj_id
                )));
            }
            Ok((l.progress(), 0.0))
        }
        ProgressProvider::Remote(scorer) => {
            let series = (0..t.len())
                .map(|i| {
                    scorer
                        .score(&t.instruction, &StateView::after_step(t, i))
                        .map(|s| s.progress)
                })
                .collect::<std::result::Result<Vec<_>, _>>()?;
            Ok((series, 0.0))
        }
    }
}

pub fn reward_trajectory(
    t: &Trajectory,
    provider: ProgressProvider<'_>,
    k: usize,
    clip: Option<f64>,
) -> Result<RewardSeries> {
    let (progress, p0) = progress_series(t, provider)?;
    let mut rewards = progress_rewards(&progress, k, p0)?;
    if let Some(c) = clip {
        let c = c.abs();
        for r in &mut rewards {
            *r = r.clamp(-c, c);
        }
    }
    Ok(RewardSeries {
        traj_id: t.traj_id.clone(),
        k,
        source: provider.source(),
        rewards,
    })
}

pub fn write_rewards(path: &Path, series: &[RewardSeries]) -> Result<()> {
    io::write_atomic(path, &io::to_jsonl(series)?)
}
