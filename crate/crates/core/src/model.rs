//! Trajectory data model, its JSON Lines form, and validation.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ActionKind {
    Input,
    Click,
    LongClick,
    Scroll,
    Answer,
    Goback,
    Nothing,
}

impl ActionKind {
    pub const ALL: [ActionKind; 7] = [
        ActionKind::Input,
        ActionKind::Click,
        ActionKind::LongClick,
        ActionKind::Scroll,
        ActionKind::Answer,
        ActionKind::Goback,
        ActionKind::Nothing,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn needs_element(self) -> bool {
        matches!(
            self,
            ActionKind::Input | ActionKind::Click | ActionKind::LongClick
        )
    }

    pub fn needs_text(self) -> bool {
        matches!(self, ActionKind::Input | ActionKind::Answer)
    }

    pub fn needs_direction(self) -> bool {
        matches!(self, ActionKind::Scroll)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Direction {
    Up,
    Down,
    Left,
    Right,
}

impl Direction {
    pub const ALL: [Direction; 4] = [
        Direction::Up,
        Direction::Down,
        Direction::Left,
        Direction::Right,
    ];

    pub fn opposite(self) -> Direction {
        match self {
            Direction::Up => Direction::Down,
            Direction::Down => Direction::Up,
            Direction::Left => Direction::Right,
            Direction::Right => Direction::Left,
        }
    }
}

/// A typed GUI action. Which optional fields are present depends on `kind`;
/// see [`Action::violations`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Action {
    pub kind: ActionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub element_id: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<Direction>,
}

impl Action {
    fn bare(kind: ActionKind) -> Self {
        Action {
            kind,
            element_id: None,
            text: None,
            direction: None,
        }
    }

    pub fn click(element: u64) -> Self {
        Action {
            element_id: Some(element),
            ..Self::bare(ActionKind::Click)
        }
    }

    pub fn long_click(element: u64) -> Self {
        Action {
            element_id: Some(element),
            ..Self::bare(ActionKind::LongClick)
        }
    }

    pub fn input(element: u64, text: impl Into<String>) -> Self {
        Action {
            element_id: Some(element),
            text: Some(text.into()),
            ..Self::bare(ActionKind::Input)
        }
    }

    pub fn answer(text: impl Into<String>) -> Self {
        Action {
            text: Some(text.into()),
            ..Self::bare(ActionKind::Answer)
        }
    }

    pub fn scroll(direction: Direction) -> Self {
        Action {
            direction: Some(direction),
            ..Self::bare(ActionKind::Scroll)
        }
    }

    pub fn goback() -> Self {
        Self::bare(ActionKind::Goback)
    }

    pub fn nothing() -> Self {
        Self::bare(ActionKind::Nothing)
    }

    /// Drops fields that carry no meaning for the kind. Currently only the
    /// element id some logs attach to ANSWER.
    pub fn normalize(&mut self) {
        if self.kind == ActionKind::Answer {
            self.element_id = None;
        }
    }

    /// Field-level problems with this action, as `(field, message)` pairs.
    pub fn violations(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        let kind = self.kind;
        match (kind.needs_element(), self.element_id.is_some()) {
            (true, false) => out.push(("element_id", format!("required for {kind:?}"))),
            (false, true) => out.push(("element_id", format!("not allowed for {kind:?}"))),
            _ => {}
        }
        match (kind.needs_text(), &self.text) {
            (true, None) => out.push(("text", format!("required for {kind:?}"))),
            (false, Some(_)) => out.push(("text", format!("not allowed for {kind:?}"))),
            (true, Some(t)) if t.trim().is_empty() => {
                out.push(("text", "empty after trimming".to_string()))
            }
            _ => {}
        }
        match (kind.needs_direction(), self.direction.is_some()) {
            (true, false) => out.push(("direction", format!("required for {kind:?}"))),
            (false, true) => out.push(("direction", format!("not allowed for {kind:?}"))),
            _ => {}
        }
        out
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = serde_json::to_value(self.kind)
            .ok()
            .and_then(|v| v.as_str().map(str::to_owned))
            .unwrap_or_default();
        let mut args = Vec::new();
        if let Some(e) = self.element_id {
            args.push(e.to_string());
        }
        if let Some(d) = self.direction {
            args.push(format!("{d:?}").to_uppercase());
        }
        if let Some(t) = &self.text {
            args.push(format!("{t:?}"));
        }
        write!(f, "{name}({})", args.join(", "))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Step {
    pub action: Action,
    /// Textual screen representation shown after the action was executed.
    pub observation: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub milestone_reward: Option<f64>,
}

impl Step {
    pub fn new(action: Action, observation: impl Into<String>) -> Self {
        Step {
            action,
            observation: observation.into(),
            milestone_reward: None,
        }
    }

    pub fn is_milestone(&self) -> bool {
        self.milestone_reward.is_some_and(|r| r > 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Trajectory {
    pub traj_id: String,
    pub goal_id: String,
    pub instruction: String,
    pub success: bool,
    pub steps: Vec<Step>,
}

impl Trajectory {
    pub fn actions(&self) -> Vec<Action> {
        self.steps.iter().map(|s| s.action.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn milestone_indices(&self) -> Vec<usize> {
        self.steps
            .iter()
            .enumerate()
            .filter(|(_, s)| s.is_milestone())
            .map(|(i, _)| i)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabeledStep {
    pub step_index: usize,
    pub progress: f64,
    pub is_key: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recipe_position: Option<usize>,
}

/// One problem found by [`validate_trajectory`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub step: Option<usize>,
    pub field: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.step {
            Some(i) => write!(f, "step {i}: {}: {}", self.field, self.message),
            None => write!(f, "{}: {}", self.field, self.message),
        }
    }
}

pub fn validate_trajectory(t: &Trajectory) -> Vec<Violation> {
    let mut out = Vec::new();
    if t.traj_id.is_empty() {
        out.push(Violation {
            step: None,
            field: "traj_id".into(),
            message: "empty".into(),
        });
    }
    if t.steps.is_empty() {
        out.push(Violation {
            step: None,
            field: "steps".into(),
            message: "steps empty".into(),
        });
    }
    for (i, step) in t.steps.iter().enumerate() {
        for (field, message) in step.action.violations() {
            out.push(Violation {
                step: Some(i),
                field: format!("action.{field}"),
                message,
            });
        }
        if let Some(r) = step.milestone_reward {
            if !r.is_finite() || r < 0.0 {
                out.push(Violation {
                    step: Some(i),
                    field: "milestone_reward".into(),
                    message: format!("must be finite and >= 0, got {r}"),
                });
            }
        }
    }
    out
}

/// Reads a JSON Lines dataset. ANSWER actions are normalized on the way in.
pub fn read_dataset(path: &Path) -> Result<Vec<Trajectory>> {
    parse_dataset(&io::read_to_string(path)?)
}

pub fn parse_dataset(body: &str) -> Result<Vec<Trajectory>> {
    let rows: Vec<(usize, Trajectory)> = io::from_jsonl(body)?;
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(rows.len());
    for (line, mut t) in rows {
        if !seen.insert(t.traj_id.clone()) {
            return Err(Error::DuplicateId {
                id: t.traj_id,
                line,
            });
        }
        for s in &mut t.steps {
            s.action.normalize();
        }
        out.push(t);
    }
    Ok(out)
}

pub fn write_dataset(path: &Path, trajectories: &[Trajectory]) -> Result<()> {
    let mut seen = HashSet::new();
    for t in trajectories {
        if !seen.insert(t.traj_id.as_str()) {
            return Err(Error::DuplicateId {
                id: t.traj_id.clone(),
                line: seen.len() + 1,
            });
        }
    }
    io::write_atomic(path, &io::to_jsonl(trajectories)?)
}

/// Validates every trajectory and returns the first problems found, if any,
/// as a single data error.
pub fn validate_dataset(trajectories: &[Trajectory]) -> Result<()> {
    let mut problems = Vec::new();
    for t in trajectories {
        for v in validate_trajectory(t) {
            problems.push(format!("{}: {v}", t.traj_id));
        }
    }
    if problems.is_empty() {
        Ok(())
    } else {
        let n = problems.len();
        problems.truncate(5);
        Err(Error::InvalidInput(format!(
            "{n} validation problem(s): {}",
            problems.join("; ")
        )))
    }
}
