use super::*;
use crate::dataset::{Column, ColumnKind, Dataset, LABEL};
use crate::split::{split_random_stratified, Partition, SplitSpec, Strategy};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn labels(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

fn blobs(n: usize, sigma: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<String>) {
    let centers = [[0.0, 0.0], [5.0, 0.0], [0.0, 5.0]];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sigma).unwrap();
    let mut x = Vec::new();
    let mut y = Vec::new();
    for i in 0..n {
        let c = i % 3;
        x.push(vec![centers[c][0] + noise.sample(&mut rng), centers[c][1] + noise.sample(&mut rng)]);
        y.push(["a", "b", "c"][c].to_string());
    }
    (x, y)
}

fn accuracy(pred: &[String], y: &[String]) -> f64 {
    pred.iter().zip(y).filter(|(p, t)| p == t).count() as f64 / y.len() as f64
}

#[test]
fn gini_values() {
    assert_eq!(gini(&[4, 0], 4), 0.0);
    assert_eq!(gini(&[2, 2], 4), 0.5);
}

#[test]
fn stump_on_separable_line() {
    let x: Vec<Vec<f64>> = [1.0, 2.0, 3.0, 4.0, 5.0, 7.0, 8.0, 9.0].iter().map(|&v| vec![v]).collect();
    let y: Vec<String> = x.iter().map(|r| if r[0] > 5.0 { "hi" } else { "lo" }.to_string()).collect();
    let t = DecisionTree::fit(&x, &y, &TreeParams { max_depth: Some(1), ..Default::default() }).unwrap();
    let Node::Split { threshold, .. } = t.nodes[0] else { panic!("root should split") };
    assert!(threshold > 5.0 && threshold < 7.0);
    assert_eq!(threshold, 6.0);
    assert_eq!(accuracy(&Model::Tree(t).predict(&x).unwrap(), &y), 1.0);
}

#[test]
fn pure_input_is_a_leaf() {
    let x = vec![vec![1.0], vec![2.0]];
    let t = DecisionTree::fit(&x, &labels(&["a", "a"]), &TreeParams::default()).unwrap();
    assert_eq!(t.nodes.len(), 1);
    let m = Model::Tree(t);
    assert_eq!(m.predict(&[vec![-100.0], vec![100.0]]).unwrap(), labels(&["a", "a"]));
}

#[test]
fn memorizes_xor() {
    let x = vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]];
    let y = labels(&["a", "b", "b", "a"]);
    let m = ModelSpec::Tree(TreeParams::default()).fit(&x, &y).unwrap();
    assert_eq!(m.predict(&x).unwrap(), y);
}

#[test]
fn tree_errors() {
    assert!(matches!(DecisionTree::fit(&[], &[], &TreeParams::default()), Err(Error::Fit(_))));
    let t = DecisionTree::fit(&[vec![1.0, 2.0]], &labels(&["a"]), &TreeParams::default()).unwrap();
    assert!(matches!(t.predict_proba(&[vec![1.0]]), Err(Error::Shape { .. })));
    assert!(DecisionTree::fit(&[vec![f64::NAN]], &labels(&["a"]), &TreeParams::default()).is_err());
}

#[test]
fn forest_degenerates_to_tree() {
    let (x, y) = blobs(300, 1.5, 1);
    let tree = DecisionTree::fit(&x, &y, &TreeParams::default()).unwrap();
    let p = ForestParams { n_trees: 1, max_features: Some(2), bootstrap: false, ..Default::default() };
    let forest = RandomForest::fit(&x, &y, &p).unwrap();
    assert_eq!(forest.trees[0].nodes, tree.nodes);
    assert!(forest.trees[0].oob_rows().is_empty());
}

#[test]
fn forest_reproducible_and_accurate() {
    let (x, y) = blobs(600, 0.8, 2);
    let (tx, ty) = blobs(600, 0.8, 3);
    let p = ForestParams { n_trees: 25, seed: 9, ..Default::default() };
    let a = RandomForest::fit(&x, &y, &p).unwrap();
    let b = RandomForest::fit(&x, &y, &p).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.m, 2);
    let acc = accuracy(&Model::Forest(a.clone()).predict(&tx).unwrap(), &ty);
    assert!(acc >= 0.95, "{acc}");
    let other = RandomForest::fit(&x, &y, &ForestParams { seed: 10, ..p }).unwrap();
    let acc2 = accuracy(&Model::Forest(other).predict(&tx).unwrap(), &ty);
    assert!((acc - acc2).abs() < 0.05);
    for pr in a.predict_proba(&tx).unwrap() {
        assert!((pr.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
    let oob = a.trees[0].oob_rows();
    assert!(!oob.is_empty() && oob.iter().all(|&i| i < 600));
}

#[test]
fn unanimous_forest() {
    let x = vec![vec![0.0], vec![1.0], vec![2.0]];
    let y = labels(&["a", "a", "a"]);
    let f = RandomForest::fit(&x, &y, &ForestParams { n_trees: 5, ..Default::default() }).unwrap();
    assert_eq!(f.predict_proba(&[vec![7.0]]).unwrap(), vec![vec![1.0]]);
}

#[test]
fn forest_m_bounds() {
    let x = vec![vec![0.0, 1.0]];
    let y = labels(&["a"]);
    let p = ForestParams { max_features: Some(3), ..Default::default() };
    assert!(matches!(RandomForest::fit(&x, &y, &p), Err(Error::Config { .. })));
}

fn knn_oracle(x: &[Vec<f64>], y: &[String], k: usize, q: &[f64]) -> String {
    let mut d: Vec<(f64, usize)> =
        x.iter().enumerate().map(|(i, r)| (r.iter().zip(q).map(|(a, b)| (a - b).powi(2)).sum(), i)).collect();
    // stable sort keeps lower indices first among equal distances
    d.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut classes: Vec<String> = y.to_vec();
    classes.sort();
    classes.dedup();
    let mut votes = vec![0; classes.len()];
    for &(_, i) in &d[..k] {
        votes[classes.iter().position(|c| *c == y[i]).unwrap()] += 1;
    }
    let mut best = 0;
    for c in 1..votes.len() {
        if votes[c] > votes[best] {
            best = c;
        }
    }
    classes[best].clone()
}

#[test]
fn knn_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    // coarse grid so that distance ties happen
    let x: Vec<Vec<f64>> = (0..200).map(|_| vec![rng.gen_range(0..6) as f64, rng.gen_range(0..6) as f64]).collect();
    let y: Vec<String> = (0..200).map(|_| ["a", "b", "c"][rng.gen_range(0..3)].to_string()).collect();
    for k in [1, 2, 5, 10] {
        let m = Model::Knn(KnnModel::fit(&x, &y, k).unwrap());
        let q: Vec<Vec<f64>> = (0..200).map(|_| vec![rng.gen_range(-1.0..7.0), rng.gen_range(-1.0..7.0)]).collect();
        let got = m.predict(&q).unwrap();
        for (qi, g) in q.iter().zip(&got) {
            assert_eq!(*g, knn_oracle(&x, &y, k, qi));
        }
    }
}

#[test]
fn knn_limits() {
    let x = vec![vec![0.0], vec![1.0], vec![2.0], vec![10.0]];
    let y = labels(&["a", "b", "b", "c"]);
    let one = Model::Knn(KnnModel::fit(&x, &y, 1).unwrap());
    assert_eq!(one.predict(&[vec![10.0], vec![0.4]]).unwrap(), labels(&["c", "a"]));
    let all = Model::Knn(KnnModel::fit(&x, &y, 4).unwrap());
    assert_eq!(all.predict(&[vec![10.0], vec![-3.0]]).unwrap(), labels(&["b", "b"]));
    assert!(matches!(KnnModel::fit(&x, &y, 5), Err(Error::Config { .. })));
    assert!(matches!(KnnModel::fit(&x, &y, 0), Err(Error::Config { .. })));
}

#[test]
fn model_json_round_trip() {
    let (x, y) = blobs(90, 1.0, 5);
    for spec in [
        ModelSpec::Tree(TreeParams::default()),
        ModelSpec::Forest(ForestParams { n_trees: 3, ..Default::default() }),
        ModelSpec::Knn { k: 3 },
    ] {
        let m = spec.fit(&x, &y).unwrap();
        let back: Model = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(back, m);
        let s: ModelSpec = serde_json::from_str(&serde_json::to_string(&spec).unwrap()).unwrap();
        assert_eq!(s, spec);
    }
    let deep: Vec<Vec<f64>> = (0..400).map(|i| vec![i as f64]).collect();
    let alt: Vec<String> = (0..400).map(|i| ["a", "b"][i % 2].to_string()).collect();
    let t = Model::Tree(DecisionTree::fit(&deep, &alt, &TreeParams::default()).unwrap());
    let back: Model = serde_json::from_str(&serde_json::to_string(&t).unwrap()).unwrap();
    assert_eq!(back, t);
}

#[test]
fn spec_params() {
    let mut s = ModelSpec::Forest(ForestParams::default());
    s.set_param("n_trees", Some(7.0)).unwrap();
    s.set_param("max_depth", None).unwrap();
    s.set_param("m", Some(2.0)).unwrap();
    let ModelSpec::Forest(p) = &s else { panic!() };
    assert_eq!((p.n_trees, p.tree.max_depth, p.max_features), (7, None, Some(2)));
    assert!(s.set_param("k", Some(3.0)).is_err());
    assert!(s.set_param("n_trees", Some(2.5)).is_err());
    let bad: std::result::Result<ModelSpec, _> = serde_json::from_str(r#"{"kind":"knn","k":3,"j":1}"#);
    assert!(bad.is_err());
}

fn blob_table(n: usize, seed: u64) -> Dataset {
    let (x, y) = blobs(n, 1.0, seed);
    Dataset::from_columns(vec![
        Column::num("f0", ColumnKind::Numeric, x.iter().map(|r| r[0]).collect()),
        Column::num("f1", ColumnKind::Numeric, x.iter().map(|r| r[1]).collect()),
        Column::text(LABEL, ColumnKind::Label, y),
    ])
    .unwrap()
}

fn grid(params: &[(&str, Vec<Option<f64>>)]) -> HyperGrid {
    HyperGrid { params: params.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(), ..Default::default() }
}

#[test]
fn grid_arithmetic_and_argmax() {
    let ds = blob_table(150, 6);
    let a = split_random_stratified(&ds, &SplitSpec::default()).unwrap();
    let design = a.design_set(ds.labels());
    let g = grid(&[("max_depth", vec![Some(1.0), Some(3.0), None]), ("min_samples_split", vec![Some(2.0), Some(10.0)])]);
    let r = grid_search(&ds, &a, &design, &TrainingPlan::default(), &ModelSpec::Tree(TreeParams::default()), &g, 1, false)
        .unwrap();
    assert_eq!(r.table.len(), 6);
    assert!(r.table.iter().all(|row| row.mean <= r.table[r.best].mean));
    assert_eq!(r.pipeline.scope_kind, ScopeKind::Design);
    let mut csv = Vec::new();
    r.write_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert_eq!(text.lines().count(), 7);
    assert!(text.starts_with("max_depth,min_samples_split,fold0,fold1,fold2,mean,std,best"));
    let again = grid_search(&ds, &a, &design, &TrainingPlan::default(), &ModelSpec::Tree(TreeParams::default()), &g, 1, false)
        .unwrap();
    assert_eq!(again.table, r.table);
}

#[test]
fn singleton_grid_and_simplest_tie() {
    let ds = blob_table(90, 7);
    let a = split_random_stratified(&ds, &SplitSpec::default()).unwrap();
    let design = a.design_set(ds.labels());
    let g = grid(&[("k", vec![Some(3.0)])]);
    let r = grid_search(&ds, &a, &design, &TrainingPlan::default(), &ModelSpec::Knn { k: 1 }, &g, 0, false).unwrap();
    assert_eq!(r.best_spec, ModelSpec::Knn { k: 3 });
    // identical settings under two names tie; the smaller forest wins
    let g = grid(&[("n_trees", vec![Some(8.0), Some(4.0)]), ("m", vec![Some(2.0)])]);
    let mut base = ForestParams { bootstrap: false, ..Default::default() };
    base.tree.max_depth = Some(2);
    let r = grid_search(&ds, &a, &design, &TrainingPlan::default(), &ModelSpec::Forest(base), &g, 0, false).unwrap();
    assert_eq!(r.table[0].mean, r.table[1].mean);
    assert_eq!(r.best, 1);
}

#[test]
fn grid_refuses_poisoned_design() {
    let ds = blob_table(90, 8);
    let a = split_random_stratified(&ds, &SplitSpec::default()).unwrap();
    let mut design = a.design_set(ds.labels());
    let test_row = a.rows(Partition::Test)[0];
    design.rows.push(test_row);
    design.tags.push(Partition::Train);
    design.labels.as_mut().unwrap().push(ds.labels().unwrap()[test_row].clone());
    let g = grid(&[("k", vec![Some(3.0)])]);
    let err = grid_search(&ds, &a, &design, &TrainingPlan::default(), &ModelSpec::Knn { k: 1 }, &g, 0, false).unwrap_err();
    assert!(matches!(err, Error::Leakage { .. }), "{err}");
}

#[test]
fn grid_validation() {
    assert!(HyperGrid::default().validate().is_err());
    let mut g = grid(&[("k", vec![Some(3.0)])]);
    g.metric = "auc".into();
    assert!(g.validate().is_err());
    let ds = blob_table(90, 9);
    let spec = SplitSpec { strategy: Strategy::Temporal, time_key: Some("f0".into()), ..Default::default() };
    if let Ok(a) = crate::split::split(&ds, &spec) {
        let design = a.design_set(ds.labels());
        let g = grid(&[("k", vec![Some(3.0)])]);
        let err = grid_search(&ds, &a, &design, &TrainingPlan::default(), &ModelSpec::Knn { k: 1 }, &g, 0, false);
        assert!(matches!(err, Err(Error::Config { .. })));
    }
}

#[test]
fn pipeline_with_resampling() {
    let ds = blob_table(120, 10);
    let a = split_random_stratified(&ds, &SplitSpec::default()).unwrap();
    let scope = crate::transforms::FitScope::train(&a).unwrap();
    let plan = TrainingPlan {
        outliers: Some(OutlierSpec::Zscore { threshold: 4.0 }),
        resample: Some(ResampleSpec::Smote { k: 3 }),
        ..Default::default()
    };
    let p = fit_pipeline(&ds, &scope, ScopeKind::Train, &plan, &ModelSpec::Knn { k: 3 }, 1).unwrap();
    let test = a.rows(Partition::Test);
    let pred = p.predict(&ds, &scope, &test, Partition::Test).unwrap();
    assert!(accuracy(&pred.predicted, &pred.actual) > 0.9);
    let other = crate::transforms::FitScope::for_rows(a.rows(Partition::Train)[1..].to_vec(), &a).unwrap();
    assert!(matches!(p.predict(&ds, &other, &test, Partition::Test), Err(Error::Leakage { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn tree_invariants(points in prop::collection::vec((0u8..20, 0u8..20, 0usize..3), 1..80)) {
        let x: Vec<Vec<f64>> = points.iter().map(|p| vec![p.0 as f64, p.1 as f64]).collect();
        let y: Vec<String> = points.iter().map(|p| ["a", "b", "c"][p.2].to_string()).collect();
        let t = DecisionTree::fit(&x, &y, &TreeParams::default()).unwrap();
        for node in &t.nodes {
            match node {
                Node::Leaf { probs, .. } => prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9),
                Node::Split { threshold, samples, left, right, decrease, .. } => {
                    prop_assert!(threshold.is_finite());
                    prop_assert!(*decrease >= 0.0);
                    let count = |i: usize| match &t.nodes[i] {
                        Node::Leaf { samples, .. } | Node::Split { samples, .. } => *samples,
                    };
                    prop_assert_eq!(count(*left) + count(*right), *samples);
                }
            }
        }
        // conflict-free rows are memorised
        let mut seen = std::collections::HashMap::new();
        let conflict = points.iter().any(|p| *seen.entry((p.0, p.1)).or_insert(p.2) != p.2);
        if !conflict {
            prop_assert_eq!(Model::Tree(t).predict(&x).unwrap(), y);
        }
    }

    #[test]
    fn splits_meet_min_decrease(points in prop::collection::vec((0u8..20, 0usize..2), 2..60), min in 0.0f64..0.2) {
        let x: Vec<Vec<f64>> = points.iter().map(|p| vec![p.0 as f64]).collect();
        let y: Vec<String> = points.iter().map(|p| ["a", "b"][p.1].to_string()).collect();
        let params = TreeParams { min_impurity_decrease: min, ..Default::default() };
        let t = DecisionTree::fit(&x, &y, &params).unwrap();
        for node in &t.nodes {
            if let Node::Split { decrease, .. } = node {
                prop_assert!(*decrease >= min);
                if min > 0.0 { prop_assert!(*decrease > 0.0); }
            }
        }
    }
}
