//! Soft and classic longest-common-subsequence over action sequences.
//!
//! The soft variant replaces exact equality with a real-valued match score
//! [`Matcher::soft_match`] so that free-text actions can partially match and
//! idle `NOTHING` steps only count for a fraction.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use crate::model::{Action, ActionKind, Trajectory};

/// Match weight of two `NOTHING` actions.
pub const DEFAULT_EPSILON: f64 = 0.4;

/// DP values closer than this are treated as equal during backtrace.
pub const TIE_BAND: f64 = 1e-12;

/// Similarity of two free-text arguments. Implementations must return values
/// in `[0, 1]`, be symmetric, and return 1 for any non-empty string compared
/// with itself. [`check_text_similarity`] verifies those properties.
pub trait TextSimilarity: Send + Sync {
    fn similarity(&self, a: &str, b: &str) -> f64;

    /// Stable identifier recorded in recipe libraries.
    fn id(&self) -> String;
}

/// Cosine similarity of lowercase whitespace-token count vectors.
#[derive(Debug, Clone, Copy, Default)]
pub struct TokenCosine;

impl TokenCosine {
    fn counts(s: &str) -> BTreeMap<String, u64> {
        let mut m = BTreeMap::new();
        for tok in s.split_whitespace() {
            *m.entry(tok.to_lowercase()).or_insert(0) += 1;
        }
        m
    }
}

impl TextSimilarity for TokenCosine {
    fn similarity(&self, a: &str, b: &str) -> f64 {
        let (ca, cb) = (Self::counts(a), Self::counts(b));
        if ca.is_empty() || cb.is_empty() {
            return if ca.is_empty() && cb.is_empty() && a == b {
                1.0
            } else {
                0.0
            };
        }
        let dot: u64 = ca
            .iter()
            .filter_map(|(tok, n)| cb.get(tok).map(|m| n * m))
            .sum();
        let na: u64 = ca.values().map(|n| n * n).sum();
        let nb: u64 = cb.values().map(|n| n * n).sum();
        // Integer norms keep the self-similarity exactly 1.
        let denom = ((na as f64) * (nb as f64)).sqrt();
        (dot as f64 / denom).clamp(0.0, 1.0)
    }

    fn id(&self) -> String {
        "token-cosine-v1".to_string()
    }
}

/// Checks the [`TextSimilarity`] contract over every pair drawn from `samples`.
/// Returns a description of each violation.
pub fn check_text_similarity(ts: &dyn TextSimilarity, samples: &[&str]) -> Vec<String> {
    let mut problems = Vec::new();
    for a in samples {
        if !a.is_empty() {
            let s = ts.similarity(a, a);
            if s != 1.0 {
                problems.push(format!("self-similarity of {a:?} is {s}"));
            }
        }
        for b in samples {
            let ab = ts.similarity(a, b);
            let ba = ts.similarity(b, a);
            if !(0.0..=1.0).contains(&ab) {
                problems.push(format!("similarity({a:?}, {b:?}) = {ab} out of range"));
            }
            if ab != ba {
                problems.push(format!("asymmetric on ({a:?}, {b:?}): {ab} vs {ba}"));
            }
        }
    }
    problems
}

/// One matched pair of an [`Alignment`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchedPair {
    pub i: usize,
    pub j: usize,
    pub contribution: f64,
}

/// A realized optimal soft matching between two sequences.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Alignment {
    pub score: f64,
    pub pairs: Vec<MatchedPair>,
}

/// Soft match function plus the DP routines built on it.
#[derive(Clone)]
pub struct Matcher {
    epsilon: f64,
    text: Arc<dyn TextSimilarity>,
}

impl fmt::Debug for Matcher {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Matcher")
            .field("epsilon", &self.epsilon)
            .field("text", &self.text.id())
            .finish()
    }
}

impl Default for Matcher {
    fn default() -> Self {
        Matcher::new(DEFAULT_EPSILON, Arc::new(TokenCosine))
    }
}

impl Matcher {
    pub fn new(epsilon: f64, text: Arc<dyn TextSimilarity>) -> Self {
        Matcher { epsilon, text }
    }

    pub fn with_epsilon(epsilon: f64) -> Self {
        Matcher::new(epsilon, Arc::new(TokenCosine))
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn text_similarity_id(&self) -> String {
        self.text.id()
    }

    pub fn soft_match(&self, a: &Action, b: &Action) -> f64 {
        if a.kind != b.kind {
            return 0.0;
        }
        match a.kind {
            ActionKind::Input | ActionKind::Answer => self.text.similarity(
                a.text.as_deref().unwrap_or(""),
                b.text.as_deref().unwrap_or(""),
            ),
            ActionKind::Nothing => self.epsilon,
            _ => {
                if a == b {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    fn table(&self, a: &[Action], b: &[Action]) -> Vec<Vec<f64>> {
        let (n, m) = (a.len(), b.len());
        let mut dp = vec![vec![0.0f64; m + 1]; n + 1];
        for i in 1..=n {
            for j in 1..=m {
                let diag = dp[i - 1][j - 1] + self.soft_match(&a[i - 1], &b[j - 1]);
                dp[i][j] = diag.max(dp[i - 1][j]).max(dp[i][j - 1]);
            }
        }
        dp
    }

    pub fn soft_lcs(&self, a: &[Action], b: &[Action]) -> f64 {
        if a.is_empty() || b.is_empty() {
            return 0.0;
        }
        // Two rolling rows are enough for the score alone.
        let mut prev = vec![0.0f64; b.len() + 1];
        let mut cur = vec![0.0f64; b.len() + 1];
        for ai in a {
            for (j, bj) in b.iter().enumerate() {
                let diag = prev[j] + self.soft_match(ai, bj);
                cur[j + 1] = diag.max(prev[j + 1]).max(cur[j]);
            }
            std::mem::swap(&mut prev, &mut cur);
        }
        prev[b.len()]
    }

    /// Backtrace of the soft-LCS table. On ties the diagonal match wins, then
    /// skipping in `a`, then skipping in `b`.
    pub fn align(&self, a: &[Action], b: &[Action]) -> Alignment {
        let dp = self.table(a, b);
        let (mut i, mut j) = (a.len(), b.len());
        let mut pairs = Vec::new();
        while i > 0 && j > 0 {
            let here = dp[i][j];
            let f = self.soft_match(&a[i - 1], &b[j - 1]);
            if f > 0.0 && (here - (dp[i - 1][j - 1] + f)).abs() <= TIE_BAND {
                pairs.push(MatchedPair {
                    i: i - 1,
                    j: j - 1,
                    contribution: f,
                });
                i -= 1;
                j -= 1;
            } else if (here - dp[i - 1][j]).abs() <= TIE_BAND {
                i -= 1;
            } else {
                j -= 1;
            }
        }
        pairs.reverse();
        let score = pairs.iter().map(|p| p.contribution).sum();
        Alignment { score, pairs }
    }

    /// Soft-LCS normalized by the shorter sequence, in `[0, 1]`.
    pub fn sequence_similarity(&self, a: &[Action], b: &[Action]) -> f64 {
        let shorter = a.len().min(b.len());
        if shorter == 0 {
            return 0.0;
        }
        (self.soft_lcs(a, b) / shorter as f64).clamp(0.0, 1.0)
    }

    pub fn similarity(&self, ti: &Trajectory, tj: &Trajectory) -> f64 {
        self.sequence_similarity(&ti.actions(), &tj.actions())
    }

    /// Pairwise soft-LCS extraction folded left to right. Matched actions are
    /// copied from the left operand.
    pub fn fold_lcs(&self, sequences: &[Vec<Action>]) -> Vec<Action> {
        let Some((first, rest)) = sequences.split_first() else {
            return Vec::new();
        };
        let mut acc = first.clone();
        for next in rest {
            if acc.is_empty() {
                break;
            }
            let al = self.align(&acc, next);
            acc = al.pairs.iter().map(|p| acc[p.i].clone()).collect();
        }
        acc
    }
}

/// Length of the classic LCS under exact action equality.
pub fn classic_lcs_len(a: &[Action], b: &[Action]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for ai in a {
        for (j, bj) in b.iter().enumerate() {
            cur[j + 1] = if ai == bj {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}
