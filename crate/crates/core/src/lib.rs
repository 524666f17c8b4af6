//! Progress-label annotation for agent interaction trajectories.
//!
//! The pipeline mines per-goal action recipes from successful trajectories
//! with a soft longest-common-subsequence, aligns every trajectory against its
//! best recipe to find key steps, and turns the resulting progress labels
//! into training data for a small progress estimator and into dense rewards.
//! A synthetic milestone environment ([`simenv`]) provides ground truth.

pub mod config;
pub mod error;
pub mod estimator;
pub mod evalkit;
pub mod io;
pub mod labeling;
pub mod model;
pub mod recipes;
pub mod rewards;
pub mod seed;
pub mod simenv;
pub mod softlcs;
pub mod synthesis;

pub use error::{Error, Result};
pub use model::{Action, ActionKind, Direction, LabeledStep, Step, Trajectory};
pub use softlcs::{Alignment, Matcher, TextSimilarity, TokenCosine};
