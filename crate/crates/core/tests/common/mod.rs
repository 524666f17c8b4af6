//! Independent reference implementations and generators shared by the
//! integration and acceptance tests.
#![allow(dead_code)]

use std::collections::HashMap;

use proptest::prelude::*;
use trajprog::{Action, ActionKind, Direction, Step, Trajectory};

pub const EPSILON: f64 = 0.4;

/// Cosine of lowercase whitespace-token counts, written from scratch.
pub fn cosine(a: &str, b: &str) -> f64 {
    fn counts(s: &str) -> HashMap<String, f64> {
        let mut m = HashMap::new();
        for w in s.split_whitespace() {
            *m.entry(w.to_lowercase()).or_insert(0.0) += 1.0;
        }
        m
    }
    let (ca, cb) = (counts(a), counts(b));
    if ca.is_empty() || cb.is_empty() {
        return if ca.is_empty() && cb.is_empty() && a == b {
            1.0
        } else {
            0.0
        };
    }
    let dot: f64 = ca.iter().map(|(k, v)| v * cb.get(k).unwrap_or(&0.0)).sum();
    let na: f64 = ca.values().map(|v| v * v).sum();
    let nb: f64 = cb.values().map(|v| v * v).sum();
    (dot / (na * nb).sqrt()).min(1.0)
}

pub fn match_value(a: &Action, b: &Action) -> f64 {
    if a.kind != b.kind {
        0.0
    } else if matches!(a.kind, ActionKind::Input | ActionKind::Answer) {
        cosine(
            a.text.as_deref().unwrap_or(""),
            b.text.as_deref().unwrap_or(""),
        )
    } else if a.kind == ActionKind::Nothing {
        EPSILON
    } else if a == b {
        1.0
    } else {
        0.0
    }
}

/// Best total match over every pair of equal-size ordered index subsets.
pub fn brute_force_soft_lcs(a: &[Action], b: &[Action]) -> f64 {
    assert!(a.len() <= 12 && b.len() <= 12);
    let f: Vec<Vec<f64>> = a
        .iter()
        .map(|x| b.iter().map(|y| match_value(x, y)).collect())
        .collect();
    let subsets = |n: usize| -> Vec<Vec<usize>> {
        (0u32..1 << n)
            .map(|mask| (0..n).filter(|i| mask & (1 << i) != 0).collect())
            .collect()
    };
    let sb = subsets(b.len());
    let mut by_size: Vec<Vec<&Vec<usize>>> = vec![Vec::new(); b.len() + 1];
    for s in &sb {
        by_size[s.len()].push(s);
    }
    let mut best = 0.0f64;
    for sa in subsets(a.len()) {
        if sa.len() > b.len() {
            continue;
        }
        for sbj in &by_size[sa.len()] {
            let total: f64 = sa.iter().zip(sbj.iter()).map(|(&i, &j)| f[i][j]).sum();
            best = best.max(total);
        }
    }
    best
}

/// Textbook LCS length under exact equality, by memoized recursion.
pub fn reference_lcs(a: &[Action], b: &[Action]) -> usize {
    fn go(
        a: &[Action],
        b: &[Action],
        i: usize,
        j: usize,
        memo: &mut HashMap<(usize, usize), usize>,
    ) -> usize {
        if i == a.len() || j == b.len() {
            return 0;
        }
        if let Some(v) = memo.get(&(i, j)) {
            return *v;
        }
        let v = if a[i] == b[j] {
            1 + go(a, b, i + 1, j + 1, memo)
        } else {
            go(a, b, i + 1, j, memo).max(go(a, b, i, j + 1, memo))
        };
        memo.insert((i, j), v);
        v
    }
    go(a, b, 0, 0, &mut HashMap::new())
}

const WORDS: [&str; 6] = ["alpha", "beta", "gamma", "delta", "Alpha", "omega"];

fn text() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(WORDS.to_vec()), 1..4).prop_map(|w| w.join(" "))
}

fn direction() -> impl Strategy<Value = Direction> {
    prop::sample::select(Direction::ALL.to_vec())
}

/// Any valid action, drawn from a small vocabulary so that matches happen.
pub fn any_action() -> impl Strategy<Value = Action> {
    prop_oneof![
        (0u64..4).prop_map(Action::click),
        (0u64..4).prop_map(Action::long_click),
        ((0u64..3), text()).prop_map(|(e, t)| Action::input(e, t)),
        text().prop_map(Action::answer),
        direction().prop_map(Action::scroll),
        Just(Action::goback()),
        Just(Action::nothing()),
    ]
}

/// Actions compared only by equality (no free text, no NOTHING).
pub fn discrete_action() -> impl Strategy<Value = Action> {
    prop_oneof![
        (0u64..5).prop_map(Action::click),
        (0u64..3).prop_map(Action::long_click),
        direction().prop_map(Action::scroll),
        Just(Action::goback()),
    ]
}

pub fn trajectory(id: &str, goal: &str, actions: Vec<Action>, success: bool) -> Trajectory {
    Trajectory {
        traj_id: id.to_string(),
        goal_id: goal.to_string(),
        instruction: format!("complete {goal}"),
        success,
        steps: actions
            .into_iter()
            .enumerate()
            .map(|(i, a)| Step::new(a, format!("screen {i}")))
            .collect(),
    }
}

/// Checks label invariants: range, monotonicity, length, and position
/// bookkeeping. Returns the first problem found.
pub fn label_problem(l: &trajprog::labeling::LabeledTrajectory, len: usize) -> Option<String> {
    if l.labels.len() != len {
        return Some(format!("{} labels for {len} steps", l.labels.len()));
    }
    let mut prev = 0.0;
    for (i, s) in l.labels.iter().enumerate() {
        if s.step_index != i {
            return Some(format!("step_index {} at {i}", s.step_index));
        }
        if !(0.0..=1.0).contains(&s.progress) {
            return Some(format!("progress {} out of range at {i}", s.progress));
        }
        if s.progress < prev {
            return Some(format!("progress drops at {i}: {prev} -> {}", s.progress));
        }
        if s.is_key != s.recipe_position.is_some() {
            return Some(format!("recipe_position inconsistent at {i}"));
        }
        prev = s.progress;
    }
    None
}

/// `r_t = p_t - p_{t-k}` computed directly, with `p_{-j} = p0`.
pub fn reference_rewards(p: &[f64], k: usize, p0: f64) -> Vec<f64> {
    let at = |i: isize| if i < 0 { p0 } else { p[i as usize] };
    (0..p.len() as isize)
        .map(|t| at(t) - at(t - k as isize))
        .collect()
}

/// Minimal HTTP scorer stub. Every request is answered with `body` after
/// `delay`; it runs until the test process exits.
pub fn spawn_stub(body: &'static str, delay: std::time::Duration) -> String {
    use std::io::{BufRead, BufReader, Read, Write};
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(stream) = stream else { continue };
            std::thread::spawn(move || {
                let mut reader = BufReader::new(stream);
                loop {
                    let mut length = 0usize;
                    let mut line = String::new();
                    loop {
                        line.clear();
                        if reader.read_line(&mut line).unwrap_or(0) == 0 {
                            return;
                        }
                        let l = line.trim_end();
                        if l.is_empty() {
                            break;
                        }
                        if let Some((k, v)) = l.split_once(':') {
                            if k.eq_ignore_ascii_case("content-length") {
                                length = v.trim().parse().unwrap_or(0);
                            }
                        }
                    }
                    let mut payload = vec![0u8; length];
                    if reader.read_exact(&mut payload).is_err() {
                        return;
                    }
                    std::thread::sleep(delay);
                    let resp = format!(
                        "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n{}",
                        body.len(),
                        body
                    );
                    if reader.get_mut().write_all(resp.as_bytes()).is_err() {
                        return;
                    }
                }
            });
        }
    });
    format!("http://{addr}/score")
}

/// Address of a port with nothing listening on it.
pub fn closed_endpoint() -> String {
    let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = l.local_addr().unwrap();
    drop(l);
    format!("http://{addr}/score")
}

/// A subset of `dataset` whose success:failure step ratio is close to 70:30.
pub fn seventy_thirty(dataset: &[Trajectory]) -> Vec<Trajectory> {
    let successes: Vec<&Trajectory> = dataset.iter().filter(|t| t.success).collect();
    let s_steps: usize = successes.iter().map(|t| t.len()).sum();
    let want = s_steps as f64 * 3.0 / 7.0;
    let mut out: Vec<Trajectory> = successes.into_iter().cloned().collect();
    let mut f_steps = 0.0;
    for t in dataset.iter().filter(|t| !t.success) {
        if f_steps + t.len() as f64 / 2.0 > want {
            break;
        }
        f_steps += t.len() as f64;
        out.push(t.clone());
    }
    out.sort_by(|a, b| a.traj_id.cmp(&b.traj_id));
    out
}
