//! Progress estimator: hand-designed features of `(instruction, state)` fed
//! to a sigmoid-linear model trained with binary cross-entropy against
//! soft progress labels.

pub mod remote;

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::labeling::LabeledTrajectory;
use crate::model::{Action, ActionKind, Trajectory};
use crate::seed;

pub const FEATURE_SCHEMA: &str = "glm-features-v1";

/// Names of the feature slots, in order.
pub const FEATURE_NAMES: [&str; 14] = [
    "history_len",
    "count_input",
    "count_click",
    "count_long_click",
    "count_scroll",
    "count_answer",
    "count_goback",
    "count_nothing",
    "distinct_elements",
    "overlap_instruction_observation",
    "overlap_instruction_texts",
    "last_is_nothing",
    "repetition",
    "observation_precision",
];

pub const FEATURE_DIM: usize = FEATURE_NAMES.len();

/// Lower/upper bound on probabilities fed to `ln` on the training path.
pub const PROB_GUARD: f64 = 1e-7;

/// The model's view of one state: the actions taken so far and the screen
/// they led to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateView {
    pub instruction: String,
    pub action_history: Vec<Action>,
    pub observation: String,
}

impl StateView {
    /// State before any action. Trajectories do not record a pre-action
    /// screen, so the observation is empty.
    pub fn initial(t: &Trajectory) -> Self {
        StateView {
            instruction: t.instruction.clone(),
            action_history: Vec::new(),
            observation: String::new(),
        }
    }

    /// State reached by executing step `idx`: actions `0..=idx` and the
    /// screen observed after step `idx`.
    pub fn after_step(t: &Trajectory, idx: usize) -> Self {
        StateView {
            instruction: t.instruction.clone(),
            action_history: t.steps[..=idx].iter().map(|s| s.action.clone()).collect(),
            observation: t.steps[idx].observation.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub schema_version: String,
}

/// Lowercased alphanumeric tokens, deduplicated.
pub fn tokens(s: &str) -> BTreeSet<String> {
    s.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Fraction of `reference` tokens that also occur in `other`.
pub fn token_overlap(reference: &BTreeSet<String>, other: &BTreeSet<String>) -> f64 {
    if reference.is_empty() {
        return 0.0;
    }
    reference.intersection(other).count() as f64 / reference.len() as f64
}

pub fn featurize(instruction: &str, sv: &StateView) -> FeatureVector {
    let hist = &sv.action_history;
    let h = hist.len() as f64;
    let mut v = vec![0.0; FEATURE_DIM];
    v[0] = h / (h + 8.0);
    for a in hist {
        v[1 + a.kind.index()] += 1.0;
    }
    let elements: BTreeSet<u64> = hist.iter().filter_map(|a| a.element_id).collect();
    v[8] = elements.len() as f64;

    let instr = tokens(instruction);
    let obs = tokens(&sv.observation);
    v[9] = token_overlap(&instr, &obs);
    let typed: Vec<&str> = hist
        .iter()
        .filter(|a| matches!(a.kind, ActionKind::Input | ActionKind::Answer))
        .filter_map(|a| a.text.as_deref())
        .collect();
    v[10] = token_overlap(&instr, &tokens(&typed.join(" ")));
    v[11] = match hist.last() {
        Some(a) if a.kind == ActionKind::Nothing => 1.0,
        _ => 0.0,
    };
    if !hist.is_empty() {
        let mut longest = 1usize;
        let mut run = 1usize;
        for w in hist.windows(2) {
            run = if w[0] == w[1] { run + 1 } else { 1 };
            longest = longest.max(run);
        }
        v[12] = longest as f64 / h;
    }
    v[13] = token_overlap(&obs, &instr);
    FeatureVector {
        values: v,
        schema_version: FEATURE_SCHEMA.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub final_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProgressModel {
    pub schema_version: String,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub metadata: Option<TrainingMetadata>,
}

impl ProgressModel {
    /// All-zero model; predicts 0.5 everywhere.
    pub fn zeros() -> Self {
        ProgressModel {
            schema_version: FEATURE_SCHEMA.to_string(),
            weights: vec![0.0; FEATURE_DIM],
            bias: 0.0,
            metadata: None,
        }
    }

    fn check_schema(&self, f: &FeatureVector) -> Result<()> {
        if self.schema_version != f.schema_version || self.weights.len() != f.values.len() {
            return Err(Error::SchemaMismatch {
                model: format!("{} ({} weights)", self.schema_version, self.weights.len()),
                featurizer: format!("{} ({} features)", f.schema_version, f.values.len()),
            });
        }
        Ok(())
    }

    fn logit(&self, x: &[f64]) -> f64 {
        self.weights.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + self.bias
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(self)
            .map_err(|e| Error::InvalidInput(format!("serialization failed: {e}")))?;
        bytes.push(b'\n');
        io::write_atomic(path, &bytes)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m: ProgressModel =
            serde_json::from_str(&io::read_to_string(path)?).map_err(|e| Error::Parse {
                line: e.line(),
                reason: e.to_string(),
            })?;
        if m.schema_version != FEATURE_SCHEMA || m.weights.len() != FEATURE_DIM {
            return Err(Error::SchemaMismatch {
                model: format!("{} ({} weights)", m.schema_version, m.weights.len()),
                featurizer: format!("{FEATURE_SCHEMA} ({FEATURE_DIM} features)"),
            });
        }
        if m.weights.iter().any(|w| !w.is_finite()) || !m.bias.is_finite() {
            return Err(Error::InvalidInput(
                "model parameters must be finite".into(),
            ));
        }
        Ok(m)
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Largest value [`predict_progress`] returns; the output never reaches 0 or 1.
pub const PROB_EDGE: f64 = 1e-15;

pub fn predict_progress(m: &ProgressModel, f: &FeatureVector) -> Result<f64> {
    m.check_schema(f)?;
    Ok(sigmoid(m.logit(&f.values)).clamp(PROB_EDGE, 1.0 - PROB_EDGE))
}

pub fn predict_state(m: &ProgressModel, sv: &StateView) -> Result<f64> {
    predict_progress(m, &featurize(&sv.instruction, sv))
}

/// Predicted progress after every step of `t`.
pub fn predict_trajectory(m: &ProgressModel, t: &Trajectory) -> Result<Vec<f64>> {
    (0..t.len())
        .map(|i| predict_state(m, &StateView::after_step(t, i)))
        .collect()
}

pub fn bce_loss(p_hat: f64, p_star: f64) -> Result<f64> {
    if !(p_hat > 0.0 && p_hat < 1.0) {
        return Err(Error::InvalidInput(format!(
            "p_hat must lie in (0, 1), got {p_hat}"
        )));
    }
    if !(0.0..=1.0).contains(&p_star) {
        return Err(Error::InvalidInput(format!(
            "p_star must lie in [0, 1], got {p_star}"
        )));
    }
    Ok(-p_star * p_hat.ln() - (1.0 - p_star) * (1.0 - p_hat).ln())
}

/// Training-path loss for one sample with the probability guard applied.
fn guarded_loss(z: f64, target: f64) -> f64 {
    let p = sigmoid(z);
    if (PROB_GUARD..=1.0 - PROB_GUARD).contains(&p) {
        // -ln p = softplus(-z) and -ln(1 - p) = softplus(z), without the
        // cancellation in 1 - p.
        target * softplus(-z) + (1.0 - target) * softplus(z)
    } else {
        let p = p.clamp(PROB_GUARD, 1.0 - PROB_GUARD);
        -target * p.ln() - (1.0 - target) * (1.0 - p).ln()
    }
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// d(loss)/d(logit). Zero where the guard is active, matching the flat clamp.
fn guarded_dloss(z: f64, target: f64) -> f64 {
    let p = sigmoid(z);
    if !(PROB_GUARD..=1.0 - PROB_GUARD).contains(&p) {
        0.0
    } else {
        p - target
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: FeatureVector,
    pub target: f64,
}

pub fn sample_loss(m: &ProgressModel, s: &Sample) -> f64 {
    guarded_loss(m.logit(&s.features.values), s.target)
}

/// Analytic gradient of the sample loss, weights first and bias last.
pub fn sample_gradient(m: &ProgressModel, s: &Sample) -> Vec<f64> {
    let g = guarded_dloss(m.logit(&s.features.values), s.target);
    let mut out: Vec<f64> = s.features.values.iter().map(|x| g * x).collect();
    out.push(g);
    out
}

pub fn mean_loss(m: &ProgressModel, samples: &[Sample]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().map(|s| sample_loss(m, s)).sum::<f64>() / samples.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, 1e-6)`.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

/// Compares the analytic gradient with central finite differences.
pub fn grad_check(m: &ProgressModel, s: &Sample, epsilon: f64) -> Result<GradCheck> {
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(Error::InvalidInput("epsilon must be positive".into()));
    }
    let analytic = sample_gradient(m, s);
    let mut out = GradCheck {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
    };
    for (k, a) in analytic.iter().enumerate() {
        let shifted = |delta: f64| {
            let mut mm = m.clone();
            if k < mm.weights.len() {
                mm.weights[k] += delta;
            } else {
                mm.bias += delta;
            }
            sample_loss(&mm, s)
        };
        let numeric = (shifted(epsilon) - shifted(-epsilon)) / (2.0 * epsilon);
        let abs = (a - numeric).abs();
        let rel = abs / a.abs().max(numeric.abs()).max(1e-6);
        out.max_abs_error = out.max_abs_error.max(abs);
        out.max_rel_error = out.max_rel_error.max(rel);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainParams {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Mini-batch size; 0 means full batch.
    pub batch_size: usize,
    pub seed: u64,
    /// Run the descent on standardized features. The returned model is still
    /// expressed over raw features.
    pub standardize: bool,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            learning_rate: 0.5,
            epochs: 300,
            batch_size: 0,
            seed: 0,
            standardize: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ProgressModel,
    /// Mean training loss after each epoch.
    pub loss_curve: Vec<f64>,
}

pub fn train(samples: &[Sample], params: &TrainParams) -> Result<TrainOutcome> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("training set is empty".into()));
    }
    if !(params.learning_rate > 0.0 && params.learning_rate.is_finite()) {
        return Err(Error::InvalidInput("learning rate must be positive".into()));
    }
    let dim = FEATURE_DIM;
    for s in samples {
        if s.features.schema_version != FEATURE_SCHEMA || s.features.values.len() != dim {
            return Err(Error::SchemaMismatch {
                model: FEATURE_SCHEMA.to_string(),
                featurizer: s.features.schema_version.clone(),
            });
        }
        if !(0.0..=1.0).contains(&s.target) {
            return Err(Error::InvalidInput(format!(
                "label {} outside [0, 1]",
                s.target
            )));
        }
    }

    let n = samples.len() as f64;
    let (mean, scale) = if params.standardize {
        let mut mean = vec![0.0; dim];
        for s in samples {
            for (m, x) in mean.iter_mut().zip(&s.features.values) {
                *m += x / n;
            }
        }
        let mut var = vec![0.0; dim];
        for s in samples {
            for k in 0..dim {
                var[k] += (s.features.values[k] - mean[k]).powi(2) / n;
            }
        }
        let scale = var
            .iter()
            .map(|v| if *v > 1e-12 { v.sqrt() } else { 1.0 })
            .collect::<Vec<_>>();
        (mean, scale)
    } else {
        (vec![0.0; dim], vec![1.0; dim])
    };
    let scaled: Vec<Sample> = samples
        .iter()
        .map(|s| Sample {
            features: FeatureVector {
                values: (0..dim)
                    .map(|k| (s.features.values[k] - mean[k]) / scale[k])
                    .collect(),
                schema_version: FEATURE_SCHEMA.to_string(),
            },
            target: s.target,
        })
        .collect();

    // Parameters in standardized space; zero maps to the zero raw model.
    let mut inner = ProgressModel::zeros();
    let mut order: Vec<usize> = (0..scaled.len()).collect();
    let batch = if params.batch_size == 0 {
        scaled.len()
    } else {
        params.batch_size.min(scaled.len())
    };
    let mut loss_curve = Vec::with_capacity(params.epochs);
    for epoch in 0..params.epochs {
        if batch < scaled.len() {
            let mut rng = seed::rng(params.seed, &format!("epoch:{epoch}"));
            order.shuffle(&mut rng);
        }
        for chunk in order.chunks(batch) {
            let mut grad = vec![0.0; dim + 1];
            for &i in chunk {
                for (g, gi) in grad.iter_mut().zip(sample_gradient(&inner, &scaled[i])) {
                    *g += gi;
                }
            }
            let step = params.learning_rate / chunk.len() as f64;
            for (w, g) in inner.weights.iter_mut().zip(&grad) {
                *w -= step * g;
            }
            inner.bias -= step * grad[dim];
        }
        let loss = mean_loss(&inner, &scaled);
        if !loss.is_finite() || inner.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Divergence { epoch, loss });
        }
        loss_curve.push(loss);
    }

    let weights: Vec<f64> = (0..dim).map(|k| inner.weights[k] / scale[k]).collect();
    let bias = inner.bias
        - (0..dim)
            .map(|k| inner.weights[k] * mean[k] / scale[k])
            .sum::<f64>();
    Ok(TrainOutcome {
        model: ProgressModel {
            schema_version: FEATURE_SCHEMA.to_string(),
            weights,
            bias,
            metadata: Some(TrainingMetadata {
                epochs: params.epochs,
                learning_rate: params.learning_rate,
                batch_size: params.batch_size,
                seed: params.seed,
                final_loss: loss_curve.last().copied(),
            }),
        },
        loss_curve,
    })
}

/// One training sample per labeled step. Labels whose trajectory is missing
/// from `corpus` are ignored.
pub fn training_samples(corpus: &[Trajectory], labels: &[LabeledTrajectory]) -> Vec<Sample> {
    let index: std::collections::HashMap<&str, &Trajectory> =
        corpus.iter().map(|t| (t.traj_id.as_str(), t)).collect();
    let mut out = Vec::new();
    for l in labels {
        let Some(t) = index.get(l.traj_id.as_str()) else {
            continue;
        };
        for s in l.labels.iter().filter(|s| s.step_index < t.len()) {
            let sv = StateView::after_step(t, s.step_index);
            out.push(Sample {
                features: featurize(&t.instruction, &sv),
                target: s.progress,
            });
        }
    }
    out
}

/// Success judgment from the progress predicted after the final step.
pub fn predict_success(m: &ProgressModel, t: &Trajectory, tau_s: f64) -> Result<bool> {
    if t.is_empty() {
        return Err(Error::InvalidInput(format!("{}: no steps", t.traj_id)));
    }
    let p = predict_state(m, &StateView::after_step(t, t.len() - 1))?;
    Ok(p >= tau_s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::traj;

    fn sv(history: Vec<Action>, obs: &str) -> StateView {
        StateView {
            instruction: String::new(),
            action_history: history,
            observation: obs.into(),
        }
    }

    #[test]
    fn features_of_empty_state() {
        let f = featurize("open the settings", &sv(vec![], ""));
        assert_eq!(f.values.len(), FEATURE_DIM);
        assert!(f.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn features_of_click_history() {
        let f = featurize("x", &sv(vec![Action::click(1); 3], ""));
        assert_eq!(f.values[1 + ActionKind::Click.index()], 3.0);
        assert_eq!(f.values[12], 1.0);
        assert_eq!(f.values[8], 1.0);
        assert_eq!(f.values[0], 3.0 / 11.0);
        let f = featurize(
            "x",
            &sv(
                vec![Action::click(1), Action::click(2), Action::nothing()],
                "",
            ),
        );
        assert_eq!(f.values[12], 1.0 / 3.0);
        assert_eq!(f.values[11], 1.0);
    }

    #[test]
    fn overlap_features() {
        // Instruction tokens {open, wifi, menu, now}; observation shares two.
        let f = featurize(
            "Open WiFi menu, now!",
            &sv(vec![], "wifi: OPEN panel extra"),
        );
        assert_eq!(f.values[9], 0.5);
        assert_eq!(f.values[13], 0.5);
        let f = featurize(
            "search red shoes",
            &sv(vec![Action::input(1, "Red"), Action::answer("boots")], ""),
        );
        assert_eq!(f.values[10], 1.0 / 3.0);
    }

    #[test]
    fn featurize_is_deterministic() {
        let s = sv(
            vec![
                Action::input(3, "a b"),
                Action::scroll(crate::Direction::Up),
            ],
            "a b c",
        );
        assert_eq!(featurize("a q", &s), featurize("a q", &s));
    }

    #[test]
    fn predict_examples() {
        let f = featurize("x", &sv(vec![], ""));
        assert_eq!(predict_progress(&ProgressModel::zeros(), &f).unwrap(), 0.5);
        let mut m = ProgressModel::zeros();
        m.bias = 1e6;
        let p = predict_progress(&m, &f).unwrap();
        assert!(p < 1.0 && p > 0.999);
        m.bias = -1e6;
        assert!(predict_progress(&m, &f).unwrap() > 0.0);

        let mut m = ProgressModel::zeros();
        m.weights[1 + ActionKind::Click.index()] = 0.5;
        m.bias = -1.0;
        let f = featurize("x", &sv(vec![Action::click(1); 3], ""));
        // z = 0.5 * 3 - 1 = 0.5
        let expected = 1.0 / (1.0 + (-0.5f64).exp());
        assert!((predict_progress(&m, &f).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn predict_rejects_schema_mismatch() {
        let mut f = featurize("x", &sv(vec![], ""));
        f.schema_version = "other".into();
        assert!(matches!(
            predict_progress(&ProgressModel::zeros(), &f),
            Err(Error::SchemaMismatch { .. })
        ));
    }

    #[test]
    fn bce_examples() {
        let ln2 = std::f64::consts::LN_2;
        assert!((bce_loss(0.5, 1.0).unwrap() - ln2).abs() < 1e-15);
        assert!((bce_loss(0.5, 0.5).unwrap() - ln2).abs() < 1e-15);
        // Binary entropy of 0.3, evaluated independently.
        let h = -(0.3f64 * 0.3f64.ln() + 0.7f64 * 0.7f64.ln());
        assert!((bce_loss(0.3, 0.3).unwrap() - h).abs() < 1e-15);
        assert!((h - 0.6109).abs() < 1e-4);
        assert!(bce_loss(0.0, 0.5).is_err());
        assert!(bce_loss(1.0, 0.5).is_err());
        assert!(bce_loss(0.5, 1.5).is_err());
    }

    #[test]
    fn bce_minimized_at_target() {
        for &target in &[0.1, 0.3, 0.5, 0.9] {
            let at = bce_loss(target, target).unwrap();
            for &d in &[-0.05, 0.05] {
                assert!(bce_loss(target + d, target).unwrap() > at);
            }
        }
    }

    fn sample(values: Vec<f64>, target: f64) -> Sample {
        let mut v = values;
        v.resize(FEATURE_DIM, 0.0);
        Sample {
            features: FeatureVector {
                values: v,
                schema_version: FEATURE_SCHEMA.into(),
            },
            target,
        }
    }

    #[test]
    fn grad_check_examples() {
        let mut m = ProgressModel::zeros();
        m.weights[0] = 0.7;
        m.weights[1] = -0.3;
        m.bias = 0.2;
        let s = sample(vec![0.5, 2.0, 1.0], 0.8);
        let gc = grad_check(&m, &s, 1e-5).unwrap();
        assert!(gc.max_rel_error < 1e-4, "{gc:?}");
        assert_eq!(gc, grad_check(&m, &s, 1e-5).unwrap());

        // Zero gradient: p_hat == target.
        let z = ProgressModel::zeros();
        let gc = grad_check(&z, &sample(vec![1.0, 2.0], 0.5), 1e-5).unwrap();
        assert!(gc.max_abs_error < 1e-8, "{gc:?}");
        assert!(grad_check(&z, &s, 0.0).is_err());
    }

    #[test]
    fn training_fits_separable_set() {
        let mut samples = Vec::new();
        for i in 0..20 {
            let x = i as f64 / 19.0;
            samples.push(sample(vec![x, 1.0 - x], if x > 0.5 { 1.0 } else { 0.0 }));
        }
        let out = train(
            &samples,
            &TrainParams {
                learning_rate: 1.0,
                epochs: 2000,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(
            out.loss_curve.last().unwrap() < &0.1,
            "{:?}",
            out.loss_curve.last()
        );
        assert!((mean_loss(&out.model, &samples) - out.loss_curve.last().unwrap()).abs() < 1e-9);
    }

    #[test]
    fn training_single_point_converges() {
        let s = sample(vec![0.3, 2.0], 0.7);
        let out = train(
            std::slice::from_ref(&s),
            &TrainParams {
                epochs: 500,
                ..Default::default()
            },
        )
        .unwrap();
        let p = predict_progress(&out.model, &s.features).unwrap();
        assert!((p - 0.7).abs() < 0.05, "{p}");
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let s = sample(vec![0.3, 2.0], 0.7);
        let out = train(
            &[s],
            &TrainParams {
                epochs: 0,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(out.model.weights, ProgressModel::zeros().weights);
        assert_eq!(out.model.bias, 0.0);
        assert!(out.loss_curve.is_empty());
    }

    #[test]
    fn training_errors() {
        assert!(train(&[], &TrainParams::default()).is_err());
        let s = sample(vec![1.0], 1.5);
        assert!(train(&[s], &TrainParams::default()).is_err());
        let s = sample(vec![1e300], 1.0);
        let res = train(
            &[s, sample(vec![-1e300], 0.0)],
            &TrainParams {
                learning_rate: 1e300,
                standardize: false,
                epochs: 5,
                ..Default::default()
            },
        );
        assert!(matches!(res, Err(Error::Divergence { .. })), "{res:?}");
    }

    #[test]
    fn minibatch_training_is_deterministic() {
        let samples: Vec<_> = (0..30)
            .map(|i| {
                sample(
                    vec![i as f64 / 30.0, (i % 3) as f64],
                    (i as f64 / 30.0).min(1.0),
                )
            })
            .collect();
        let p = TrainParams {
            batch_size: 4,
            epochs: 20,
            seed: 9,
            ..Default::default()
        };
        let a = train(&samples, &p).unwrap();
        let b = train(&samples, &p).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.loss_curve, b.loss_curve);
    }

    #[test]
    fn success_threshold_boundary() {
        let t = traj("t", "g", vec![Action::click(1)], true);
        let m = ProgressModel::zeros();
        assert!(predict_success(&m, &t, 0.5).unwrap());
        let mut hi = m.clone();
        hi.bias = sigmoid_inverse(0.9);
        assert!(predict_success(&hi, &t, 0.5).unwrap());
        let mut lo = m;
        lo.bias = sigmoid_inverse(0.2);
        assert!(!predict_success(&lo, &t, 0.5).unwrap());
    }

    fn sigmoid_inverse(p: f64) -> f64 {
        (p / (1.0 - p)).ln()
    }

    #[test]
    fn model_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let mut m = ProgressModel::zeros();
        m.weights[3] = 0.123456789012345;
        m.save(&path).unwrap();
        assert_eq!(ProgressModel::load(&path).unwrap(), m);
        std::fs::write(
            &path,
            r#"{"schema_version":"v0","weights":[1.0],"bias":0.0,"metadata":null}"#,
        )
        .unwrap();
        assert!(matches!(
            ProgressModel::load(&path),
            Err(Error::SchemaMismatch { .. })
        ));
    }
}
