mod common;

use common::*;
use proptest::prelude::*;
use trajprog::estimator::*;
use trajprog::Action;

fn sample_with(values: Vec<f64>, target: f64) -> Sample {
    Sample {
        features: FeatureVector {
            values,
            schema_version: FEATURE_SCHEMA.to_string(),
        },
        target,
    }
}

fn model_with(weights: Vec<f64>, bias: f64) -> ProgressModel {
    ProgressModel {
        weights,
        bias,
        ..ProgressModel::zeros()
    }
}

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn gradient_matches_finite_differences(
        w in prop::collection::vec(-1.5f64..1.5, FEATURE_DIM),
        b in -1.0f64..1.0,
        x in prop::collection::vec(0.0f64..1.0, FEATURE_DIM),
        y in 0.0f64..=1.0,
    ) {
        let m = model_with(w, b);
        let s = sample_with(x, y);
        let check = grad_check(&m, &s, 1e-5).unwrap();
        prop_assert!(check.max_rel_error < 1e-4, "{:?}", check);
    }

    #[test]
    fn gradient_matches_closed_form(
        w in prop::collection::vec(-1.5f64..1.5, FEATURE_DIM),
        b in -1.0f64..1.0,
        x in prop::collection::vec(0.0f64..1.0, FEATURE_DIM),
        y in 0.0f64..=1.0,
    ) {
        let z: f64 = w.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() + b;
        let residual = logistic(z) - y;
        let m = model_with(w, b);
        let g = sample_gradient(&m, &sample_with(x.clone(), y));
        for (k, xk) in x.iter().enumerate() {
            prop_assert!((g[k] - residual * xk).abs() < 1e-12);
        }
        prop_assert!((g[FEATURE_DIM] - residual).abs() < 1e-12);
    }

    #[test]
    fn predictions_stay_inside_the_open_interval(
        w in prop::collection::vec(-100.0f64..100.0, FEATURE_DIM),
        actions in prop::collection::vec(any_action(), 1..10),
    ) {
        let m = model_with(w, 0.0);
        let t = trajectory("t", "g", actions, true);
        for p in predict_trajectory(&m, &t).unwrap() {
            prop_assert!(p > 0.0 && p < 1.0);
        }
    }

    #[test]
    fn features_are_finite_and_bounded(actions in prop::collection::vec(any_action(), 0..12), obs in "[a-z ]{0,20}") {
        let sv = StateView {
            instruction: "open the alpha settings".into(),
            action_history: actions,
            observation: obs,
        };
        let f = featurize(&sv.instruction, &sv);
        prop_assert_eq!(f.values.len(), FEATURE_DIM);
        prop_assert!(f.values.iter().all(|v| v.is_finite() && *v >= 0.0));
    }
}

#[test]
fn training_lowers_loss_and_is_reproducible() {
    let good = trajectory(
        "a",
        "g",
        vec![Action::click(1), Action::input(2, "complete g")],
        true,
    );
    let samples: Vec<Sample> = (0..good.len())
        .map(|i| Sample {
            features: featurize(&good.instruction, &StateView::after_step(&good, i)),
            target: (i + 1) as f64 / good.len() as f64,
        })
        .collect();
    let params = TrainParams {
        epochs: 200,
        ..Default::default()
    };
    let a = train(&samples, &params).unwrap();
    let b = train(&samples, &params).unwrap();
    assert_eq!(a.model, b.model);
    let start = mean_loss(&ProgressModel::zeros(), &samples);
    assert!(a.loss_curve.last().unwrap() < &start);
    assert!((mean_loss(&a.model, &samples) - a.loss_curve.last().unwrap()).abs() < 1e-9);
}

#[test]
fn model_round_trips_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    let m = model_with(
        (0..FEATURE_DIM).map(|i| i as f64 * 0.1 - 0.3).collect(),
        0.25,
    );
    m.save(&path).unwrap();
    assert_eq!(ProgressModel::load(&path).unwrap(), m);

    let mut wrong = m.clone();
    wrong.weights.pop();
    wrong.save(&path).unwrap();
    assert!(matches!(
        ProgressModel::load(&path),
        Err(trajprog::Error::SchemaMismatch { .. })
    ));
}
