use bic::analysis::*;
use bic::data::{generate_synthetic, Archetype, SynthConfig};
use bic::interaction::InteractionKind;
use bic::model::{prepare_inputs, train, BicModel, InputSpec, ModelConfig, Precision};
use bic::numerics::Tensor;
use bic::BicError;
use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;

fn symmetric(vals: &[f64], n: usize) -> Tensor<f64> {
    let mut t = Tensor::zeros(n, n);
    let mut k = 0;
    for i in 0..n {
        for j in i..n {
            t.set(i, j, vals[k]);
            t.set(j, i, vals[k]);
            k += 1;
        }
    }
    t
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dominant_value_matches_dense_eigensolver(vals in prop::collection::vec(-1.0f64..1.0, 10)) {
        let m = symmetric(&vals, 4);
        let eig = SymmetricEigen::new(DMatrix::from_row_slice(4, 4, m.data()));
        let mut ev: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        ev.sort_by(|a, b| b.abs().total_cmp(&a.abs()));
        // power iteration converges slowly when the two largest magnitudes nearly tie
        prop_assume!(ev[0].abs() - ev[1].abs() > 1e-2);
        let d = dominant_eigenvalue(&m).unwrap();
        prop_assert!(d.converged);
        prop_assert!((d.value - ev[0].abs()).abs() < 1e-6);
        prop_assert!((d.rayleigh - ev[0]).abs() < 1e-6);
        let mv = m.matmul(&Tensor::new(4, 1, d.vector.clone()).unwrap()).unwrap();
        let residual: f64 = (0..4).map(|i| (mv.get(i, 0) - d.rayleigh * d.vector[i]).powi(2)).sum::<f64>().sqrt();
        prop_assert!(residual < 1e-6);
    }

    #[test]
    fn dominant_value_is_largest_singular_value(vals in prop::collection::vec(0.0f64..1.0, 16)) {
        let m = Tensor::new(4, 4, vals).unwrap();
        let mtm = DMatrix::from_row_slice(4, 4, m.data()).transpose() * DMatrix::from_row_slice(4, 4, m.data());
        let mut ev: Vec<f64> = SymmetricEigen::new(mtm).eigenvalues.iter().copied().collect();
        ev.sort_by(|a, b| b.total_cmp(a));
        prop_assume!(ev[0] - ev[1] > 1e-2);
        let d = dominant_eigenvalue(&m).unwrap();
        prop_assert!((d.value - ev[0].sqrt()).abs() < 1e-6);
    }

    #[test]
    fn v_measure_ignores_cluster_names(
        pairs in prop::collection::vec((0usize..3, 0usize..4), 2..40),
        shift in 1usize..4,
    ) {
        let labels: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let clusters: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let renamed: Vec<usize> = clusters.iter().map(|c| (c + shift) % 4 + 10).collect();
        let a = v_measure(&labels, &clusters).unwrap();
        let b = v_measure(&labels, &renamed).unwrap();
        prop_assert!((a.v_measure - b.v_measure).abs() < 1e-12);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&a.v_measure));
        // splitting every class into pure sub-clusters keeps homogeneity 1
        let refined: Vec<usize> = pairs.iter().map(|p| p.0 * 4 + p.1).collect();
        let r = v_measure(&labels, &refined).unwrap();
        prop_assert!((r.homogeneity - 1.0).abs() < 1e-12);
    }
}

#[test]
fn trivial_v_measures() {
    let labels = [0, 1, 0, 1, 1, 0];
    assert!((v_measure(&labels, &labels).unwrap().v_measure - 1.0).abs() < 1e-12);
    assert_eq!(v_measure(&labels, &[7; 6]).unwrap().v_measure, 0.0);
}

fn small_synth() -> SynthConfig {
    SynthConfig { n_genuine: 20, n_traditional: 10, n_advanced: 10, dim: 8, feature_dim: 3, ..SynthConfig::default() }
}

fn small_model() -> ModelConfig {
    ModelConfig {
        hidden_dim: 8,
        heads: 2,
        ffn_dim: 16,
        pool: 4,
        consistency_dim: 4,
        consistency_out: 4,
        max_epochs: 2,
        batch_size: 16,
        lr: 1e-3,
        ..ModelConfig::default()
    }
}

fn small_spec(seeds: Vec<u64>) -> ExperimentSpec {
    ExperimentSpec::new(DataSource::Synthetic(small_synth()), small_model(), seeds)
}

#[test]
fn ablation_bookkeeping_and_determinism() {
    let mut spec = small_spec(vec![0, 1]);
    spec.axes.push(SweepAxis { key: "interaction".into(), values: vec!["similarity".into(), "none".into()] });
    let ds = spec.data.load(200).unwrap();
    let mut fresh = 0;
    let suite = {
        let mut runner = Runner::new(&ds).on_run(|_, _| fresh += 1);
        run_ablation_suite(&mut runner, &spec).unwrap()
    };
    assert_eq!(fresh, 4);
    assert_eq!(suite.reports.len(), 2);
    assert_eq!(suite.reports[0].label, "ours");
    assert_eq!(suite.reports[1].label, "none");
    assert!(suite.is_complete());
    let again = run_ablation_suite(&mut Runner::new(&ds), &spec).unwrap();
    assert_eq!(metrics_csv(&suite), metrics_csv(&again));
    assert_eq!(summary_csv(&suite, Some("ours")), summary_csv(&again, Some("ours")));
    assert_eq!(metrics_csv(&suite).lines().count(), 5);
    // the reference row has no test against itself
    let sum = summary_csv(&suite, Some("ours"));
    assert!(sum.lines().nth(1).unwrap().ends_with(",,"));
}

#[test]
fn default_ablation_covers_every_variant() {
    let spec = small_spec(vec![0]);
    let spec = ExperimentSpec { model: ModelConfig { max_epochs: 1, ..spec.model }, ..spec };
    let ds = spec.data.load(200).unwrap();
    let suite = run_ablation_suite(&mut Runner::new(&ds), &spec).unwrap();
    let labels: Vec<&str> = suite.reports.iter().map(|r| r.label.as_str()).collect();
    assert_eq!(labels, ["ours", "hard", "soft", "mlp", "text", "graph", "none"]);
    assert_eq!(InteractionKind::ALL.len(), 7);
}

#[test]
fn removal_validates_and_reuses_baseline() {
    let spec = small_spec(vec![3]);
    let ds = spec.data.load(200).unwrap();
    let mut runner = Runner::new(&ds);
    assert!(run_modality_removal(&mut runner, &spec, &[0.0, 1.2]).unwrap_err().is_config());
    assert!(run_modality_removal(&mut runner, &spec, &[-0.1]).unwrap_err().is_config());
    let suite = run_modality_removal(&mut runner, &spec, &[0.0, 1.0]).unwrap();
    assert_eq!(suite.reports.len(), 4);
    let base = run_ablation_suite(
        &mut Runner::new(&ds),
        &ExperimentSpec {
            axes: vec![SweepAxis { key: "interaction".into(), values: vec!["similarity".into()] }],
            ..spec.clone()
        },
    )
    .unwrap();
    let zero = suite.report("text@0").unwrap();
    assert_eq!(zero.accuracy, base.reports[0].accuracy);
    assert_eq!(zero.f1, base.reports[0].f1);
    assert_eq!(zero.config_hash, base.reports[0].config_hash);
    assert_eq!(suite.report("graph@0").unwrap().accuracy, suite.report("text@0").unwrap().accuracy);
    let csv = removal_csv(&suite);
    assert!(csv.contains("\ntext,1,") && csv.contains("\ngraph,0,"));
}

#[test]
fn sweep_rejects_unknown_keys() {
    let mut spec = small_spec(vec![0]);
    spec.axes.push(SweepAxis { key: "depth".into(), values: vec![2.into()] });
    assert!(spec.validate().unwrap_err().is_config());
    spec.axes[0] = SweepAxis { key: "steps".into(), values: vec![1.into(), 2.into()] };
    spec.model.max_epochs = 1;
    let ds = spec.data.load(200).unwrap();
    let suite = run_sweep(&mut Runner::new(&ds), &spec).unwrap();
    let labels: Vec<&str> = suite.reports.iter().map(|r| r.label.as_str()).collect();
    assert_eq!(labels, ["steps=1", "steps=2"]);
    assert!(suite.reports[0].param_count < suite.reports[1].param_count);
    assert!(ExperimentSpec { seeds: vec![], ..spec }.validate().unwrap_err().is_config());
}

#[test]
fn manifest_records_dataset_hash() {
    let spec = small_spec(vec![0, 1]);
    let ds = spec.data.load(200).unwrap();
    let m = Manifest::new("train", &spec, &ds);
    assert_eq!(m.dataset_hash, ds.content_hash());
    assert_eq!(m.config_hash, config_hash(&spec.model));
    let back: Manifest = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
    assert_eq!(back, m);
    assert_eq!(back.data.load(200).unwrap().content_hash(), m.dataset_hash);
}

fn trained() -> (bic::data::Dataset, BicModel<f64>) {
    let ds = generate_synthetic(&small_synth()).unwrap();
    let cfg = ModelConfig { precision: Precision::F64, ..small_model() };
    let model = BicModel::<f64>::new(cfg.clone(), InputSpec::from_dataset(&ds, &cfg)).unwrap();
    (ds.clone(), train(model, &ds).unwrap().model)
}

#[test]
fn boxplot_counts_and_classes() {
    let (ds, model) = trained();
    let ids = ds.split_ids("test").unwrap().to_vec();
    let bp = consistency_boxplot_data(&model, &ds, &ids).unwrap();
    for a in Archetype::ALL {
        let n = ids.iter().filter(|id| Archetype::from_id(id) == Some(a)).count();
        assert_eq!(bp.values(a.prefix()).len(), n * model.config.steps);
        if n > 0 {
            assert_eq!(bp.summary[a.prefix()].count, n * model.config.steps);
        }
    }
    assert!(bp.rows.iter().all(|r| r.converged && r.value > 0.0));
    assert_eq!(bp.to_csv().lines().count(), bp.rows.len() + 1);
}

#[test]
fn clustering_needs_enough_users() {
    let (ds, model) = trained();
    let ids = ds.labelled_ids();
    let c = cluster_consistency(&model, &ds, &ids, 2, KMEANS_RESTARTS, 0).unwrap();
    assert_eq!(c.ids.len(), ids.len());
    assert!((0.0..=1.0).contains(&c.score.v_measure));
    assert_eq!(c.projection.coords.len(), ids.len());
    assert_eq!(c, cluster_consistency(&model, &ds, &ids, 2, KMEANS_RESTARTS, 0).unwrap());
    let err = cluster_consistency(&model, &ds, &ids[..1], 2, KMEANS_RESTARTS, 0).unwrap_err();
    assert!(matches!(err, BicError::Size(_)));
}

#[test]
fn case_study_matches_trace() {
    let (ds, model) = trained();
    let id = ds.split_ids("test").unwrap()[0].clone();
    let cs = case_study_export(&model, &ds, &id).unwrap();
    let x = prepare_inputs::<f64>(&ds, std::slice::from_ref(&id), &model.config, &model.spec).unwrap().remove(0);
    let t = model.forward(&x).unwrap();
    assert_eq!(cs.steps.len(), model.config.steps);
    for (l, s) in cs.steps.iter().enumerate() {
        let want: Vec<f64> = (1..=x.tweet_count()).map(|c| t.attention[l].get(0, c)).collect();
        assert_eq!(s.tweet_attention, want);
        assert!(s.top_tweets.len() <= 3 && s.top_neighbors.len() <= 3);
        assert!(s.top_tweets.windows(2).all(|w| w[0].weight >= w[1].weight));
        assert!(s.top_neighbors.windows(2).all(|w| w[0].weight >= w[1].weight));
        let max = want.iter().cloned().fold(f64::MIN, f64::max);
        assert_eq!(s.top_tweets[0].weight, max);
        for pair in [s.text_weights.unwrap(), s.graph_weights.unwrap()] {
            assert!((pair[0] + pair[1] - 1.0).abs() < 1e-6);
        }
    }
    assert!(matches!(case_study_export(&model, &ds, "nobody"), Err(BicError::Lookup(_))));
}
