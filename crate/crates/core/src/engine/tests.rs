use super::*;
use crate::data::EnvLabel;
use crate::scm::{population_moments, sample, toy_scm, ScmSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn fi(k: usize, s: &[usize]) -> FeatureIndex {
    FeatureIndex::one_based(k, s).unwrap()
}

fn draw(spec: &ScmSpec, n: usize, seed: u64) -> Vec<EnvDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    spec.env_labels()
        .map(|u| sample(spec, u, n, &mut rng).unwrap())
        .collect()
}

fn moments(spec: &ScmSpec) -> Vec<crate::scm::PopulationMoments> {
    spec.env_labels()
        .map(|u| population_moments(spec, u).unwrap())
        .collect()
}

#[test]
fn enumeration_counts() {
    assert_eq!(enumerate_features(3, None).len(), 9);
    assert_eq!(enumerate_features(10, None).len(), 10 * 511);
    assert_eq!(enumerate_features(2, None), vec![fi(1, &[2]), fi(2, &[1])]);
    // |S| <= 1 leaves d (d - 1) singletons
    assert_eq!(enumerate_features(5, Some(1)).len(), 20);
}

#[test]
fn enumeration_is_lexicographic() {
    let f = enumerate_features(4, None);
    let mut sorted = f.clone();
    sorted.sort();
    assert_eq!(f, sorted);
    assert_eq!(f[0], fi(1, &[2]));
    assert_eq!(f[1], fi(1, &[2, 3]));
}

#[test]
fn feature_index_display_and_validation() {
    assert_eq!(fi(3, &[2, 1]).to_string(), "(3,{1,2})");
    assert!(FeatureIndex::new(0, [0, 1]).is_err());
    assert!(FeatureIndex::new(0, []).is_err());
}

#[test]
fn toy_candidates_recover_invariant_coefficients() {
    let spec = toy_scm([("u1", 0.0), ("u2", 2.0)]);
    let train = draw(&spec, 100_000, 7);
    let fit = fit_candidate(&train, &fi(3, &[1, 2])).unwrap();
    for (g, w) in fit.beta.iter().zip([0.5, -1.0, 0.0, 0.5]) {
        assert!((g - w).abs() < 0.02, "{}", fit.beta);
    }
    // E[X2 | X1, X3, U] = (X3 - (1 + a) X1) / 3, so matching the X3 term of
    // E[Y | X, U] needs a unit coefficient on X3.
    let fit = fit_candidate(&train, &fi(2, &[1, 3])).unwrap();
    for (g, w) in fit.beta.iter().zip([-1.5, -1.0, 0.5, 1.0]) {
        assert!((g - w).abs() < 0.02, "{}", fit.beta);
    }
}

#[test]
fn gram_route_matches_row_route() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let labels: Vec<EnvLabel> = (1..=4).map(EnvLabel::from).collect();
    let spec = crate::scm::random_scm(5, &labels, &Default::default(), &mut rng).unwrap();
    let train = draw(&spec, 200, 3);
    let stats = TrainingStats::from_datasets(&train).unwrap();
    for f in enumerate_features(5, None) {
        let direct = fit_candidate(&train, &f).unwrap();
        let fast = stats.fit(&f).unwrap();
        let scale = direct.beta.amax().max(1.0);
        assert!(
            (&direct.beta - &fast.beta).amax() < 1e-7 * scale,
            "{f}: {} vs {}",
            direct.beta,
            fast.beta
        );
        assert!((direct.train_rss - fast.train_rss).abs() < 1e-8 * direct.train_rss.max(1.0));
    }
}

#[test]
fn single_environment_feature_adds_nothing() {
    let spec = toy_scm([("u1", 0.7), ("u2", 2.0)]);
    let train = draw(&spec, 500, 1);
    let one = &train[..1];
    let x = one[0].x.clone();
    let y = one[0].y.clone().unwrap();
    let plain = crate::estimators::ols(&x, &y).unwrap();
    let stats = TrainingStats::from_datasets(one).unwrap();
    for f in enumerate_features(3, None) {
        let fit = fit_candidate(one, &f).unwrap();
        assert!((fit.train_rss - plain.rss).abs() < 1e-8 * plain.rss, "{f}");
        let fast = stats.fit(&f).unwrap();
        assert!((fast.train_rss - plain.rss).abs() < 1e-6 * plain.rss, "{f}");
    }
}

#[test]
fn toy_selection() {
    // Three environments: with only two, any feature whose sample
    // coefficients differ between them (even pure noise, as in (2,{1}))
    // can absorb a(u) exactly.
    let spec = toy_scm([("u1", 0.0), ("u2", 2.0), ("u3", -1.0)]);
    let train = draw(&spec, 100_000, 11);

    let model = super::train(&train, 0.05, None).unwrap();
    assert_eq!(model.n_candidates, 9);
    assert!(!model.is_selected(&fi(1, &[2, 3])));

    // The three candidates satisfying the matching conditions with a
    // non-vanishing λ are exactly the three smallest residuals.
    let model = super::train(&train, 0.3, None).unwrap();
    let mut got: Vec<_> = model.selected_features().cloned().collect();
    got.sort();
    assert_eq!(got, vec![fi(2, &[1, 3]), fi(3, &[1]), fi(3, &[1, 2])]);

    let all = super::train(&train, 1.0, None).unwrap();
    assert_eq!(all.selected.len(), 9);

    let two = draw(&toy_scm([("u1", 0.0), ("u2", 2.0)]), 100_000, 11);
    let model = super::train(&two, 0.05, None).unwrap();
    assert!(!model.is_selected(&fi(1, &[2, 3])));

    let best = super::train(&train, 0.0, None).unwrap();
    let min = all
        .candidates
        .iter()
        .map(|c| c.train_rss)
        .fold(f64::INFINITY, f64::min);
    assert!(best.selected.iter().all(|c| c.train_rss == min));
}

#[test]
fn training_needs_two_environments() {
    let spec = toy_scm([("u1", 0.0), ("u2", 2.0)]);
    let train = draw(&spec, 50, 0);
    assert!(matches!(
        super::train(&train[..1], 0.05, None),
        Err(Error::NoEnvironmentVariation(1))
    ));
    let unlabeled: Vec<_> = train.iter().map(EnvDataset::without_response).collect();
    assert!(matches!(
        super::train(&unlabeled, 0.05, None),
        Err(Error::MissingResponse(_))
    ));
}

#[test]
fn large_d_requires_cap() {
    let envs: Vec<EnvDataset> = (0..2)
        .map(|i| {
            EnvDataset::new(
                EnvLabel::from(i as u32),
                DMatrix::from_fn(30, 17, |r, c| ((r * 31 + c * 7 + i) % 11) as f64),
                Some(DVector::from_element(30, 1.0)),
            )
            .unwrap()
        })
        .collect();
    assert!(matches!(
        super::train(&envs, 0.05, None),
        Err(Error::TooManyCandidates(17))
    ));
    let capped = super::train(&envs, 0.05, Some(1)).unwrap();
    assert_eq!(capped.n_candidates, 17 * 16);
}

#[test]
fn user_threshold_can_select_nothing() {
    let spec = toy_scm([("u1", 0.0), ("u2", 2.0)]);
    let train = draw(&spec, 200, 0);
    let (d, candidates) = fit_all_candidates(&train, None).unwrap();
    assert!(matches!(
        ImpModel::with_threshold(d, 0.05, -1.0, candidates),
        Err(Error::EmptySelection)
    ));
}

#[test]
fn prediction_with_one_candidate_is_that_candidate() {
    let spec = toy_scm([("u1", 0.0), ("u2", 2.0)]);
    let train = draw(&spec, 1000, 5);
    let model = super::train(&train, 0.0, None).unwrap();
    assert_eq!(model.selected.len(), 1);
    let test_spec = toy_scm([("v1", 4.0), ("v2", -3.0)]);
    let test: Vec<_> = draw(&test_spec, 300, 6)
        .iter()
        .map(EnvDataset::without_response)
        .collect();
    let c = &model.selected[0];
    let feat = env_feature(&test, c.feature.k, &c.feature.s).unwrap();
    let expect = c.apply(&feat.values, &data::pooled_x(&test).unwrap());
    assert_eq!(predict(&model, &test).unwrap(), expect);
}

#[test]
fn prediction_ignores_environment_order() {
    let spec = toy_scm([("u1", 0.0), ("u2", 2.0), ("u3", -1.0)]);
    let train = draw(&spec, 400, 8);
    let model = super::train(&train, 0.3, None).unwrap();
    let test_spec = toy_scm([("v1", 4.0), ("v2", -3.0), ("v3", 7.0)]);
    let test = draw(&test_spec, 250, 9);
    let forward = predict(&model, &test).unwrap();
    let reversed: Vec<_> = test.iter().rev().cloned().collect();
    let backward = predict(&model, &reversed).unwrap();
    let n = 250;
    for block in 0..3 {
        let a = forward.rows(block * n, n);
        let b = backward.rows((2 - block) * n, n);
        assert!((a - b).amax() < 1e-12);
    }
}

#[test]
fn prediction_errors() {
    let spec = toy_scm([("u1", 0.0), ("u2", 2.0)]);
    let train = draw(&spec, 400, 8);
    let model = super::train(&train, 0.3, None).unwrap();
    let short = vec![train[0].select_rows(&[0, 1])];
    assert!(matches!(
        predict(&model, &short),
        Err(Error::InsufficientSamples(_))
    ));
    let wrong_d = EnvDataset::new("v".into(), DMatrix::zeros(10, 4), None).unwrap();
    assert!(matches!(
        predict(&model, &[wrong_d]),
        Err(Error::DimensionMismatch {
            expected: 3,
            got: 4
        })
    ));
    let mut empty = model.clone();
    empty.selected.clear();
    assert!(matches!(
        predict(&empty, &train),
        Err(Error::EmptySelection)
    ));
}

#[test]
fn extrapolation_matches_oracle_error() {
    let spec = toy_scm([("u1", 0.0), ("u2", 2.0), ("u3", -1.0)]);
    let train = draw(&spec, 100_000, 21);
    let model = super::train(&train, 0.05, None).unwrap();

    let test_spec = toy_scm([("v1", 5.0), ("v2", -4.0)]);
    let test = draw(&test_spec, 100_000, 22);
    let pred = predict(&model, &test).unwrap();
    let mse = evaluate_rss(&pred, &data::pooled_y(&test).unwrap()).unwrap();
    let oracle = population_lmmse_mse(&moments(&test_spec)).unwrap();
    assert!(
        (mse / oracle - 1.0).abs() < 0.02,
        "mse {mse} oracle {oracle}"
    );

    // on the training data itself
    let pred = predict(&model, &train).unwrap();
    let mse = evaluate_rss(&pred, &data::pooled_y(&train).unwrap()).unwrap();
    let oracle = population_lmmse_mse(&moments(&spec)).unwrap();
    assert!(
        (mse / oracle - 1.0).abs() < 0.02,
        "mse {mse} oracle {oracle}"
    );
}

#[test]
fn rss_metric() {
    let a = DVector::from_vec(vec![1.0, 2.0, 3.0]);
    assert_eq!(evaluate_rss(&a, &a).unwrap(), 0.0);
    let b = a.add_scalar(1.0);
    assert_eq!(evaluate_rss(&b, &a).unwrap(), 1.0);
    assert!(matches!(
        evaluate_rss(&a, &DVector::zeros(2)),
        Err(Error::LengthMismatch { .. })
    ));

    let spec = toy_scm([("u", 1.0), ("v", 0.0)]);
    let ds = draw(&spec, 200_000, 4).remove(0);
    let y = ds.y.unwrap();
    let v = evaluate_rss(&DVector::zeros(y.len()), &y).unwrap();
    assert!((v - 3.0).abs() < 0.05, "{v}");
}

#[test]
fn population_toy_relations() {
    let spec = toy_scm([("u1", 0.0), ("u2", 2.0)]);
    let m = moments(&spec);
    let best = population_lmmse_mse(&m).unwrap();

    let f = population_candidate(&m, &fi(3, &[1, 2])).unwrap();
    for (g, w) in f.beta.iter().zip([0.5, -1.0, 0.0, 0.5]) {
        assert!((g - w).abs() < 1e-12);
    }
    assert!((f.mse - best).abs() < 1e-12);

    let f = population_candidate(&m, &fi(2, &[1, 3])).unwrap();
    for (g, w) in f.beta.iter().zip([-1.5, -1.0, 0.5, 1.0]) {
        assert!((g - w).abs() < 1e-12);
    }

    let bad = population_candidate(&m, &fi(1, &[2, 3])).unwrap();
    assert!(bad.mse - best > 1e-3, "excess {}", bad.mse - best);
}

#[test]
fn feature_lambda_toy_values() {
    let spec = toy_scm([("u1", 0.0), ("u2", 2.0), ("u3", -1.0)]);
    // c_u = (1 + a(u), 1, 0): λ = 1, features differ across u
    let l = feature_lambda(&spec, &fi(3, &[1, 2])).unwrap();
    assert!((l.lambda - 1.0).abs() < 1e-12);
    assert!(l.residual < 1e-12 && l.spread > 1.0);
    // X2 is independent of (X1, U): identical zero coefficients, λ = 0
    let l = feature_lambda(&spec, &fi(2, &[1])).unwrap();
    assert!(l.lambda.abs() < 1e-12 && l.spread < 1e-12);
    assert!(matching_conditions_hold(&spec, &fi(2, &[1])));
    assert!(!matching_conditions_hold(&spec, &fi(1, &[2, 3])));
    assert!(!matching_conditions_hold(&spec, &fi(3, &[2])));
}

#[test]
fn model_json_roundtrip() {
    let spec = toy_scm([("u1", 0.0), ("u2", 2.0)]);
    let train = draw(&spec, 300, 2);
    let model = super::train(&train, 0.3, None).unwrap();
    let text = model.to_json().unwrap();
    let back = ImpModel::from_json(&text).unwrap();
    assert_eq!(back.selected, model.selected);
    assert_eq!(back.epsilon, model.epsilon);
    assert_eq!(back.n_candidates, 9);
    assert!(back.candidates.is_empty());
    assert_eq!(
        predict(&back, &train).unwrap(),
        predict(&model, &train).unwrap()
    );
}

#[test]
fn training_is_deterministic() {
    let spec = toy_scm([("u1", 0.0), ("u2", 2.0)]);
    let train = draw(&spec, 300, 2);
    let a = super::train(&train, 0.05, None).unwrap();
    let b = super::train(&train, 0.05, None).unwrap();
    assert_eq!(a, b);
}
