//! Pipeline constants with an optional `key = value` override file.
//!
//! Lines are `key = value`; `#` starts a comment. Per-goal milestone totals
//! use keys of the form `milestone_total.<goal_id>`.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::io;
use crate::softlcs::DEFAULT_EPSILON;

pub const DEFAULT_THETA: f64 = 0.6;
pub const DEFAULT_TAU_S: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    /// Pairwise similarity threshold for grouping successful trajectories.
    pub theta: f64,
    /// Match weight of two `NOTHING` actions.
    pub epsilon: f64,
    /// Success threshold on the final-step progress estimate.
    pub tau_s: f64,
    /// Reward history length.
    pub k: usize,
    pub reward_clip: Option<f64>,
    pub synth_ratio: f64,
    pub synth_max_insertions: usize,
    pub synth_mismatch_fraction: f64,
    /// Upper bound on synthesized trajectories, as a multiple of the input size.
    pub synth_cap_factor: f64,
    pub milestone_totals: BTreeMap<String, usize>,
    pub remote_max_in_flight: usize,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            theta: DEFAULT_THETA,
            epsilon: DEFAULT_EPSILON,
            tau_s: DEFAULT_TAU_S,
            k: 1,
            reward_clip: None,
            synth_ratio: 1.0,
            synth_max_insertions: 2,
            synth_mismatch_fraction: 0.5,
            synth_cap_factor: 10.0,
            milestone_totals: BTreeMap::new(),
            remote_max_in_flight: 4,
        }
    }
}

fn parse_value<T: FromStr>(line: usize, key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Parse {
        line,
        reason: format!("invalid value {value:?} for {key}"),
    })
}

impl Config {
    pub fn load(path: &Path) -> Result<Config> {
        Config::parse(&io::read_to_string(path)?)
    }

    pub fn parse(body: &str) -> Result<Config> {
        let mut cfg = Config::default();
        for (idx, raw) in body.lines().enumerate() {
            let line = idx + 1;
            let text = raw.split('#').next().unwrap_or("").trim();
            if text.is_empty() {
                continue;
            }
            let (key, value) = text.split_once('=').ok_or_else(|| Error::Parse {
                line,
                reason: "expected key = value".into(),
            })?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "theta" | "theta_l" => cfg.theta = parse_value(line, key, value)?,
                "epsilon" => cfg.epsilon = parse_value(line, key, value)?,
                "tau_s" => cfg.tau_s = parse_value(line, key, value)?,
                "k" => cfg.k = parse_value(line, key, value)?,
                "reward_clip" => cfg.reward_clip = Some(parse_value(line, key, value)?),
                "synth_ratio" => cfg.synth_ratio = parse_value(line, key, value)?,
                "synth_max_insertions" => cfg.synth_max_insertions = parse_value(line, key, value)?,
                "synth_mismatch_fraction" => {
                    cfg.synth_mismatch_fraction = parse_value(line, key, value)?
                }
                "synth_cap_factor" => cfg.synth_cap_factor = parse_value(line, key, value)?,
                "remote_max_in_flight" => cfg.remote_max_in_flight = parse_value(line, key, value)?,
                _ => match key.strip_prefix("milestone_total.") {
                    Some(goal) if !goal.is_empty() => {
                        cfg.milestone_totals
                            .insert(goal.to_string(), parse_value(line, key, value)?);
                    }
                    _ => {
                        return Err(Error::Parse {
                            line,
                            reason: format!("unknown key {key:?}"),
                        })
                    }
                },
            }
        }
        cfg.check()?;
        Ok(cfg)
    }

    pub fn check(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidInput(what.to_string()));
        if !(0.0..=1.0).contains(&self.theta) {
            return bad("theta must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return bad("epsilon must lie in [0, 1]");
        }
        if !(self.tau_s > 0.0 && self.tau_s < 1.0) {
            return bad("tau_s must lie in (0, 1)");
        }
        if self.k == 0 {
            return bad("k must be >= 1");
        }
        if !(self.synth_ratio > 0.0 && self.synth_ratio.is_finite()) {
            return bad("synth_ratio must be > 0");
        }
        if !(0.0..=1.0).contains(&self.synth_mismatch_fraction) {
            return bad("synth_mismatch_fraction must lie in [0, 1]");
        }
        if self.remote_max_in_flight == 0 {
            return bad("remote_max_in_flight must be >= 1");
        }
        Ok(())
    }
}
