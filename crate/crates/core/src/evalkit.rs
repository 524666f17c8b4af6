//! Evaluation metrics: success-judgment confusion statistics, key-step
//! progress error, average final-step score and scoring latency.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimator::{predict_state, predict_success, ProgressModel, StateView};
use crate::io;
use crate::labeling::LabeledTrajectory;
use crate::model::Trajectory;
use crate::simenv::GroundTruth;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConfusionStats {
    pub tp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    pub fp: usize,
    /// 0 when nothing was predicted positive.
    pub precision: f64,
    /// 0 when there are no positives.
    pub recall: f64,
    pub accuracy: f64,
}

impl ConfusionStats {
    pub fn total(&self) -> usize {
        self.tp + self.fn_ + self.tn + self.fp
    }

    /// False positives over all negatives; 0 when there are no negatives.
    pub fn false_positive_rate(&self) -> f64 {
        ratio(self.fp, self.fp + self.tn)
    }

    /// TP, FN, TN, FP as percentages of the evaluation set.
    pub fn percentages(&self) -> [f64; 4] {
        let n = self.total() as f64;
        [self.tp, self.fn_, self.tn, self.fp].map(|c| 100.0 * c as f64 / n)
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn confusion_stats(predictions: &[bool], truth: &[bool]) -> Result<ConfusionStats> {
    if predictions.len() != truth.len() {
        return Err(Error::InvalidInput(format!(
            "{} predictions for {} truth values",
            predictions.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::InvalidInput(
            "confusion statistics need at least one case".into(),
        ));
    }
    let (mut tp, mut fn_, mut tn, mut fp) = (0, 0, 0, 0);
    for (p, t) in predictions.iter().zip(truth) {
        match (p, t) {
            (true, true) => tp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
            (true, false) => fp += 1,
        }
    }
    Ok(ConfusionStats {
        tp,
        fn_,
        tn,
        fp,
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fn_),
        accuracy: ratio(tp + tn, truth.len()),
    })
}

/// Statistics of the constant predictor that always answers the majority
/// class of `truth` (ties go to `true`).
pub fn majority_baseline(truth: &[bool]) -> Result<ConfusionStats> {
    let positives = truth.iter().filter(|t| **t).count();
    let majority = 2 * positives >= truth.len();
    confusion_stats(&vec![majority; truth.len()], truth)
}

/// Mean absolute error between estimates and ground truth at key steps.
pub fn keystep_mae(estimated: &[f64], truth: &[f64]) -> Result<f64> {
    if estimated.len() != truth.len() {
        return Err(Error::InvalidInput(format!(
            "{} estimates for {} key steps",
            estimated.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::InvalidInput("no key steps to evaluate".into()));
    }
    let sum: f64 = estimated
        .iter()
        .zip(truth)
        .map(|(e, t)| (e - t).abs())
        .sum();
    Ok(sum / truth.len() as f64)
}

/// Paired (estimate, truth) progress at every ground-truth key step that the
/// estimate covers. Trajectories without labels are skipped.
pub fn keystep_pairs_from_labels(
    truth: &GroundTruth,
    labels: &[LabeledTrajectory],
) -> (Vec<f64>, Vec<f64>) {
    let index: HashMap<&str, &LabeledTrajectory> =
        labels.iter().map(|l| (l.traj_id.as_str(), l)).collect();
    let mut est = Vec::new();
    let mut tru = Vec::new();
    for r in truth.rows.iter().filter(|r| r.is_key) {
        let Some(l) = index.get(r.traj_id.as_str()) else {
            continue;
        };
        if let Some(s) = l.labels.get(r.step_index) {
            est.push(s.progress);
            tru.push(r.true_progress);
        }
    }
    (est, tru)
}

pub fn keystep_pairs_from_model(
    truth: &GroundTruth,
    model: &ProgressModel,
    dataset: &[Trajectory],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let index: HashMap<&str, &Trajectory> =
        dataset.iter().map(|t| (t.traj_id.as_str(), t)).collect();
    let keys: Vec<_> = truth
        .rows
        .iter()
        .filter(|r| r.is_key)
        .filter_map(|r| {
            index
                .get(r.traj_id.as_str())
                .filter(|t| r.step_index < t.len())
                .map(|t| (*t, r))
        })
        .collect();
    let est = keys
        .par_iter()
        .map(|(t, r)| predict_state(model, &StateView::after_step(t, r.step_index)))
        .collect::<Result<Vec<f64>>>()?;
    Ok((est, keys.iter().map(|(_, r)| r.true_progress).collect()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FinalScores {
    pub overall: f64,
    pub success: Option<f64>,
    pub failure: Option<f64>,
    pub n_success: usize,
    pub n_failure: usize,
}

/// Mean final-step progress, overall and per success flag. Each entry is
/// `(final progress, success)`.
pub fn avg_final_score(finals: &[(f64, bool)]) -> Result<FinalScores> {
    if finals.is_empty() {
        return Err(Error::InvalidInput("no trajectories to score".into()));
    }
    let mean = |xs: Vec<f64>| (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64);
    let succ: Vec<f64> = finals.iter().filter(|f| f.1).map(|f| f.0).collect();
    let fail: Vec<f64> = finals.iter().filter(|f| !f.1).map(|f| f.0).collect();
    let (n_success, n_failure) = (succ.len(), fail.len());
    Ok(FinalScores {
        overall: finals.iter().map(|f| f.0).sum::<f64>() / finals.len() as f64,
        success: mean(succ),
        failure: mean(fail),
        n_success,
        n_failure,
    })
}

pub fn final_scores_from_model(
    model: &ProgressModel,
    dataset: &[Trajectory],
) -> Result<Vec<(f64, bool)>> {
    dataset
        .par_iter()
        .filter(|t| !t.is_empty())
        .map(|t| {
            Ok((
                predict_state(model, &StateView::after_step(t, t.len() - 1))?,
                t.success,
            ))
        })
        .collect()
}

/// Final label of every labeled trajectory present in `dataset`.
pub fn final_scores_from_labels(
    labels: &[LabeledTrajectory],
    dataset: &[Trajectory],
) -> Vec<(f64, bool)> {
    let success: HashMap<&str, bool> = dataset
        .iter()
        .map(|t| (t.traj_id.as_str(), t.success))
        .collect();
    labels
        .iter()
        .filter_map(|l| {
            success
                .get(l.traj_id.as_str())
                .map(|s| (l.final_progress(), *s))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LatencyStats {
    pub repetitions: usize,
    pub mean: f64,
    pub p50: f64,
    pub p95: f64,
}

impl LatencyStats {
    fn from_samples(samples: &[Duration]) -> Option<LatencyStats> {
        if samples.is_empty() {
            return None;
        }
        let mut secs: Vec<f64> = samples.iter().map(Duration::as_secs_f64).collect();
        secs.sort_by(f64::total_cmp);
        let rank =
            |q: f64| secs[((q * secs.len() as f64).ceil() as usize).clamp(1, secs.len()) - 1];
        Some(LatencyStats {
            repetitions: secs.len(),
            mean: secs.iter().sum::<f64>() / secs.len() as f64,
            p50: rank(0.5),
            p95: rank(0.95),
        })
    }
}

#[derive(Serialize)]
struct Table3Latency {
    source: &'static str,
    repetitions: usize,
    mean_s: f64,
    p50_s: f64,
    p95_s: f64,
}

impl From<&LatencyStats> for Table3Latency {
    fn from(l: &LatencyStats) -> Self {
        Table3Latency {
            source: "progress-estimator",
            repetitions: l.repetitions,
            mean_s: l.mean,
            p50_s: l.p50,
            p95_s: l.p95,
        }
    }
}

#[derive(Debug, thiserror::Error)]
#[error("scorer failed after {completed} timed calls: {cause}")]
pub struct LatencyError {
    pub completed: usize,
    /// Statistics over the calls that finished before the failure.
    pub partial: Option<LatencyStats>,
    pub cause: String,
}

/// Wall-clock statistics (seconds) over `repetitions` calls of `thunk`,
/// after one untimed warm-up call. Percentiles use the nearest rank.
pub fn measure_latency<T, E: std::fmt::Display>(
    mut thunk: impl FnMut() -> std::result::Result<T, E>,
    repetitions: usize,
) -> std::result::Result<LatencyStats, LatencyError> {
    let fail = |samples: &[Duration], cause: String| LatencyError {
        completed: samples.len(),
        partial: LatencyStats::from_samples(samples),
        cause,
    };
    if repetitions == 0 {
        return Err(fail(&[], "repetitions must be >= 1".into()));
    }
    thunk().map_err(|e| fail(&[], e.to_string()))?;
    let mut samples = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let start = Instant::now();
        let out = thunk();
        let elapsed = start.elapsed();
        if let Err(e) = out {
            return Err(fail(&samples, e.to_string()));
        }
        samples.push(elapsed);
    }
    Ok(LatencyStats::from_samples(&samples).expect("at least one sample"))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table2Row {
    pub judge: String,
    pub tp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    pub fp: usize,
    pub tp_pct: f64,
    pub fn_pct: f64,
    pub tn_pct: f64,
    pub fp_pct: f64,
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
    pub false_positive_rate: f64,
}

impl Table2Row {
    pub fn new(judge: impl Into<String>, s: &ConfusionStats) -> Self {
        let [tp_pct, fn_pct, tn_pct, fp_pct] = s.percentages();
        Table2Row {
            judge: judge.into(),
            tp: s.tp,
            fn_: s.fn_,
            tn: s.tn,
            fp: s.fp,
            tp_pct,
            fn_pct,
            tn_pct,
            fp_pct,
            precision: s.precision,
            recall: s.recall,
            accuracy: s.accuracy,
            false_positive_rate: s.false_positive_rate(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table3Row {
    pub source: String,
    pub keystep_mae: Option<f64>,
    pub keysteps: usize,
    pub final_overall: f64,
    pub final_success: Option<f64>,
    pub final_failure: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub table2: Vec<Table2Row>,
    pub table3: Vec<Table3Row>,
    /// Wall-clock estimator latency. Kept out of the tables so that they
    /// stay reproducible.
    pub latency: Option<LatencyStats>,
}

fn csv_bytes<T: Serialize>(rows: &[T], header: &[&str]) -> Result<Vec<u8>> {
    let err = |e: csv::Error| Error::InvalidInput(format!("csv: {e}"));
    let mut w = csv::WriterBuilder::new()
        .has_headers(!rows.is_empty())
        .from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record(header).map_err(err)?;
    }
    for r in rows {
        w.serialize(r).map_err(err)?;
    }
    w.into_inner()
        .map_err(|e| Error::InvalidInput(format!("csv: {e}")))
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"))
}

impl EvalReport {
    pub fn table2_csv(&self) -> Result<Vec<u8>> {
        csv_bytes(
            &self.table2,
            &[
                "judge",
                "tp",
                "fn",
                "tn",
                "fp",
                "tp_pct",
                "fn_pct",
                "tn_pct",
                "fp_pct",
                "precision",
                "recall",
                "accuracy",
                "false_positive_rate",
            ],
        )
    }

    pub fn table3_csv(&self) -> Result<Vec<u8>> {
        csv_bytes(
            &self.table3,
            &[
                "source",
                "keystep_mae",
                "keysteps",
                "final_overall",
                "final_success",
                "final_failure",
            ],
        )
    }

    pub fn summary(&self) -> String {
        let mut s = String::from("Success judgment\n");
        for r in &self.table2 {
            let _ = writeln!(
                s,
                "  {:<24} TP {:>4} ({:5.1}%)  FN {:>4} ({:5.1}%)  TN {:>4} ({:5.1}%)  FP {:>4} ({:5.1}%)  prec {:.3}  rec {:.3}  acc {:.3}  fpr {:.3}",
                r.judge, r.tp, r.tp_pct, r.fn_, r.fn_pct, r.tn, r.tn_pct, r.fp, r.fp_pct,
                r.precision, r.recall, r.accuracy, r.false_positive_rate
            );
        }
        s.push_str("Progress quality\n");
        for r in &self.table3 {
            let _ = writeln!(
                s,
                "  {:<24} key-step MAE {} over {} steps  final {:.4} (success {}, failure {})",
                r.source,
                opt(r.keystep_mae),
                r.keysteps,
                r.final_overall,
                opt(r.final_success),
                opt(r.final_failure),
            );
        }
        if let Some(l) = &self.latency {
            let _ = writeln!(
                s,
                "Estimator latency over {} calls: mean {:.3} ms, p50 {:.3} ms, p95 {:.3} ms",
                l.repetitions,
                l.mean * 1e3,
                l.p50 * 1e3,
                l.p95 * 1e3
            );
        }
        s
    }

    pub fn latency_csv(&self) -> Result<Option<Vec<u8>>> {
        self.latency
            .as_ref()
            .map(|l| csv_bytes(&[Table3Latency::from(l)], &[]))
            .transpose()
    }

    /// Writes `table2.csv`, `table3.csv` and `summary.txt` into `dir`, plus
    /// `latency.csv` when latency was measured.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let t2 = self.table2_csv()?;
        let t3 = self.table3_csv()?;
        let lat = self.latency_csv()?;
        io::write_atomic(&dir.join("table2.csv"), &t2)?;
        io::write_atomic(&dir.join("table3.csv"), &t3)?;
        if let Some(lat) = lat {
            io::write_atomic(&dir.join("latency.csv"), &lat)?;
        }
        io::write_atomic(&dir.join("summary.txt"), self.summary().as_bytes())
    }
}

/// Inputs for a full evaluation over a corpus with ground truth.
pub struct EvalInputs<'a> {
    pub corpus: &'a [Trajectory],
    pub truth: &'a GroundTruth,
    pub model: Option<&'a ProgressModel>,
    /// Named label sets, e.g. one per labeler.
    pub labels: Vec<(String, &'a [LabeledTrajectory])>,
    pub tau_s: f64,
    /// Repetitions for the estimator latency measurement; 0 skips it.
    pub latency_reps: usize,
}

pub fn evaluate(inputs: &EvalInputs<'_>) -> Result<EvalReport> {
    if inputs.corpus.is_empty() {
        return Err(Error::InvalidInput("evaluation corpus is empty".into()));
    }
    let truth_ids: BTreeMap<&str, ()> = inputs
        .truth
        .rows
        .iter()
        .map(|r| (r.traj_id.as_str(), ()))
        .collect();
    if let Some(t) = inputs
        .corpus
        .iter()
        .find(|t| !truth_ids.contains_key(t.traj_id.as_str()))
    {
        return Err(Error::InvalidInput(format!(
            "{} has no ground-truth rows",
            t.traj_id
        )));
    }
    let outcomes: Vec<bool> = inputs.corpus.iter().map(|t| t.success).collect();
    let mut report = EvalReport::default();
    report.table2.push(Table2Row::new(
        "majority-baseline",
        &majority_baseline(&outcomes)?,
    ));

    if let Some(m) = inputs.model {
        let preds = inputs
            .corpus
            .par_iter()
            .map(|t| predict_success(m, t, inputs.tau_s))
            .collect::<Result<Vec<bool>>>()?;
        report.table2.push(Table2Row::new(
            "progress-estimator",
            &confusion_stats(&preds, &outcomes)?,
        ));

        let (est, tru) = keystep_pairs_from_model(inputs.truth, m, inputs.corpus)?;
        let finals = avg_final_score(&final_scores_from_model(m, inputs.corpus)?)?;
        let latency = if inputs.latency_reps > 0 {
            let t = inputs
                .corpus
                .iter()
                .max_by_key(|t| t.len())
                .expect("non-empty");
            let sv = StateView::after_step(t, t.len() - 1);
            Some(
                measure_latency(|| predict_state(m, &sv), inputs.latency_reps)
                    .map_err(|e| Error::InvalidInput(e.to_string()))?,
            )
        } else {
            None
        };
        report.table3.push(Table3Row {
            source: "progress-estimator".into(),
            keystep_mae: keystep_mae(&est, &tru).ok(),
            keysteps: est.len(),
            final_overall: finals.overall,
            final_success: finals.success,
            final_failure: finals.failure,
        });
        report.latency = latency;
    }

    for (name, labels) in &inputs.labels {
        let finals = final_scores_from_labels(labels, inputs.corpus);
        if finals.is_empty() {
            continue;
        }
        let index: HashMap<&str, f64> = finals_index(labels);
        let judged: Vec<(bool, bool)> = inputs
            .corpus
            .iter()
            .filter_map(|t| {
                index
                    .get(t.traj_id.as_str())
                    .map(|p| (*p >= inputs.tau_s, t.success))
            })
            .collect();
        let (p, o): (Vec<bool>, Vec<bool>) = judged.into_iter().unzip();
        report.table2.push(Table2Row::new(
            format!("labels-{name}"),
            &confusion_stats(&p, &o)?,
        ));
        let (est, tru) = keystep_pairs_from_labels(inputs.truth, labels);
        let scores = avg_final_score(&finals)?;
        report.table3.push(Table3Row {
            source: format!("labels-{name}"),
            keystep_mae: keystep_mae(&est, &tru).ok(),
            keysteps: est.len(),
            final_overall: scores.overall,
            final_success: scores.success,
            final_failure: scores.failure,
        });
    }
    Ok(report)
}

fn finals_index(labels: &[LabeledTrajectory]) -> HashMap<&str, f64> {
    labels
        .iter()
        .map(|l| (l.traj_id.as_str(), l.final_progress()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_correct_positives() {
        let s = confusion_stats(&[true; 4], &[true; 4]).unwrap();
        assert_eq!((s.precision, s.recall, s.accuracy), (1.0, 1.0, 1.0));
    }

    #[test]
    fn all_true_predictions() {
        let s = confusion_stats(&[true; 4], &[true, false, true, false]).unwrap();
        assert_eq!(s.precision, 0.5);
        assert_eq!(s.recall, 1.0);
        assert_eq!(s.false_positive_rate(), 1.0);
    }

    #[test]
    fn ten_case_tally() {
        let pred = [
            true, true, true, false, false, true, false, false, true, false,
        ];
        let tru = [
            true, true, false, true, false, false, false, true, true, false,
        ];
        let s = confusion_stats(&pred, &tru).unwrap();
        // TP: 0,1,8  FP: 2,5  FN: 3,7  TN: 4,6,9
        assert_eq!((s.tp, s.fp, s.fn_, s.tn), (3, 2, 2, 3));
        assert_eq!(s.precision, 3.0 / 5.0);
        assert_eq!(s.recall, 3.0 / 5.0);
        assert_eq!(s.accuracy, 6.0 / 10.0);
        assert_eq!(s.percentages(), [30.0, 20.0, 30.0, 20.0]);
    }

    #[test]
    fn confusion_errors() {
        assert!(confusion_stats(&[true], &[true, false]).is_err());
        assert!(confusion_stats(&[], &[]).is_err());
    }

    #[test]
    fn majority() {
        let s = majority_baseline(&[true, true, false]).unwrap();
        assert_eq!(s.false_positive_rate(), 1.0);
        let s = majority_baseline(&[false, false, true]).unwrap();
        assert_eq!(s.false_positive_rate(), 0.0);
    }

    #[test]
    fn mae_examples() {
        assert_eq!(keystep_mae(&[0.2, 0.4], &[0.2, 0.4]).unwrap(), 0.0);
        assert_eq!(keystep_mae(&[0.5, 0.5], &[0.25, 0.75]).unwrap(), 0.25);
        assert!(keystep_mae(&[], &[]).is_err());
        assert!(keystep_mae(&[0.1], &[]).is_err());
    }

    #[test]
    fn final_score_weighted_mean() {
        let f = [(1.0, true), (0.5, true), (0.2, false)];
        let s = avg_final_score(&f).unwrap();
        assert_eq!(s.success, Some(0.75));
        assert_eq!(s.failure, Some(0.2));
        let weighted = (s.success.unwrap() * 2.0 + s.failure.unwrap()) / 3.0;
        assert!((s.overall - weighted).abs() < 1e-15);
        assert!(avg_final_score(&[]).is_err());
        assert_eq!(avg_final_score(&[(0.3, false)]).unwrap().success, None);
    }

    #[test]
    fn latency_single_rep() {
        let s = measure_latency(|| Ok::<_, String>(()), 1).unwrap();
        assert_eq!(s.p50, s.mean);
        assert_eq!(s.repetitions, 1);
    }

    #[test]
    fn latency_failure_reports_partial() {
        let mut calls = 0;
        let err = measure_latency(
            || {
                calls += 1;
                if calls > 3 {
                    Err("down")
                } else {
                    Ok(())
                }
            },
            10,
        )
        .unwrap_err();
        assert_eq!(err.completed, 2);
        assert_eq!(err.partial.unwrap().repetitions, 2);
        assert!(measure_latency(|| Ok::<_, String>(()), 0).is_err());
    }

    #[test]
    fn percentiles_nearest_rank() {
        let samples: Vec<Duration> = (1..=20).map(Duration::from_millis).collect();
        let s = LatencyStats::from_samples(&samples).unwrap();
        assert!((s.p50 - 0.010).abs() < 1e-12);
        assert!((s.p95 - 0.019).abs() < 1e-12);
    }

    #[test]
    fn empty_tables_keep_headers() {
        let r = EvalReport::default();
        assert!(String::from_utf8(r.table2_csv().unwrap())
            .unwrap()
            .starts_with("judge,tp,fn"));
        assert!(String::from_utf8(r.table3_csv().unwrap())
            .unwrap()
            .starts_with("source,"));
    }
}
