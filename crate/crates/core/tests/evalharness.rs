use std::collections::BTreeSet;

use nbm_core::evalharness::{
    ablation, characterize, evaluate, fit, split, write_roc_csv, write_suspicious_geojson, AblationSubset, EvalError,
    OutcomeClass, Split, SplitKind, SplitSpec, TrainConfig,
};
use nbm_core::features::{FeatureDataset, HashedTokenEmbedder, MethodologySource};
use nbm_core::geo::ReferenceGrid;
use nbm_core::labeling::{LabelSource, LabelingConfig};
use nbm_core::pipeline::{run_stages, Inputs};
use nbm_core::synthworld::{generate, WorldConfig};
use nbm_gbdt::metrics::Confusion;
use nbm_gbdt::GbdtParams;
use proptest::prelude::*;

fn fixture() -> FeatureDataset {
    let cfg = WorldConfig { n_states: 3, n_providers: 9, cells_per_state: 400, seed: 3, ..Default::default() };
    let w = generate(&cfg).unwrap();
    let grid = ReferenceGrid::new(cfg.grid).unwrap();
    let inputs = Inputs::from_world(&w);
    let stages = run_stages(&inputs, &grid, &LabelingConfig::default()).unwrap();
    let embedder = HashedTokenEmbedder { dimension: 16 };
    let ctx = stages.feature_context(&inputs, &grid, MethodologySource::Text { texts: &inputs.methodology, embedder: &embedder });
    ctx.labeled(&stages.labeled.observations).unwrap()
}

fn quick() -> TrainConfig {
    TrainConfig {
        params: GbdtParams { n_rounds: 40, max_depth: 4, early_stopping_rounds: Some(10), ..Default::default() },
        ..Default::default()
    }
}

fn spec(kind: SplitKind, seed: u64) -> SplitSpec {
    SplitSpec { kind, validation_fraction: 0.1, seed }
}

#[test]
fn splits_partition_rows_and_respect_their_kind() {
    let ds = fixture();
    let n = ds.len();
    for kind in [
        SplitKind::RandomObservation { test_fraction: 0.1 },
        SplitKind::FccAdjudicatedOnly { test_fraction: 0.5 },
        SplitKind::HeldOutStates { states: vec!["NE".into()] },
    ] {
        let s = split(&ds.rows, &spec(kind.clone(), 4)).unwrap();
        let all: Vec<usize> = s.train.iter().chain(&s.validation).chain(&s.test).copied().collect();
        assert_eq!(all.len(), n);
        assert_eq!(all.iter().collect::<BTreeSet<_>>().len(), n, "{kind:?} overlaps");
        let test_keys: BTreeSet<_> = s.test.iter().map(|&i| ds.rows[i].key).collect();
        assert!(s.train.iter().chain(&s.validation).all(|&i| !test_keys.contains(&ds.rows[i].key)));
        match &kind {
            SplitKind::RandomObservation { .. } => assert_eq!(s.test.len(), (0.1 * n as f64).round() as usize),
            SplitKind::FccAdjudicatedOnly { .. } => assert!(s.test.iter().all(|&i| ds.rows[i].fcc_adjudicated)),
            SplitKind::HeldOutStates { .. } => {
                assert!(s.test.iter().all(|&i| ds.rows[i].state == "NE"));
                assert!(s.train.iter().chain(&s.validation).all(|&i| ds.rows[i].state != "NE"));
            }
        }
        let rest = s.train.len() + s.validation.len();
        assert_eq!(s.validation.len(), (0.1 * rest as f64).round() as usize);
        assert_eq!(split(&ds.rows, &spec(kind, 4)).unwrap(), s);
    }
}

#[test]
fn split_errors() {
    let mut ds = fixture();
    for r in &mut ds.rows {
        r.fcc_adjudicated = false;
    }
    let fcc = spec(SplitKind::FccAdjudicatedOnly { test_fraction: 0.5 }, 1);
    assert!(matches!(split(&ds.rows, &fcc), Err(EvalError::EmptyTestSplit)));
    let nowhere = spec(SplitKind::HeldOutStates { states: vec!["WY".into()] }, 1);
    assert!(matches!(split(&ds.rows, &nowhere), Err(EvalError::EmptyTestSplit)));
    let bad = spec(SplitKind::RandomObservation { test_fraction: 1.0 }, 1);
    assert!(matches!(split(&ds.rows, &bad), Err(EvalError::InvalidSplit(_))));
}

#[test]
fn report_tables_sum_to_the_global_confusion() {
    let ds = fixture();
    let s = split(&ds.rows, &spec(SplitKind::RandomObservation { test_fraction: 0.3 }, 2)).unwrap();
    let model = fit(&ds, &s, &quick()).unwrap().model;
    let r = evaluate(&model, &ds, &s.test, 0.5).unwrap();
    assert_eq!(r.confusion.total(), s.test.len());
    for table in [
        r.per_isp.values().copied().collect::<Vec<_>>(),
        r.per_state.values().copied().collect(),
        r.per_technology.values().copied().collect(),
    ] {
        let mut sum = Confusion::default();
        table.iter().for_each(|c| sum.add(c));
        assert_eq!(sum, r.confusion);
    }
    let class_rows: usize = r.characterization.by_class.values().map(|m| m.rows).sum();
    assert_eq!(class_rows, s.test.len());
    assert_eq!(r.unserved.support + r.served.support, s.test.len());
    // Label AUC is capped by failed challenges on overclaimed cells.
    assert!(r.auc.unwrap() > 0.7, "{:?}", r.auc);
    // Fixed seed, fixed data: the report is reproducible.
    let again = evaluate(&fit(&ds, &s, &quick()).unwrap().model, &ds, &s.test, 0.5).unwrap();
    assert_eq!(again, r);
}

#[test]
fn characterization_of_one_row_and_the_density_signal() {
    let ds = fixture();
    let s = split(&ds.rows, &spec(SplitKind::RandomObservation { test_fraction: 0.3 }, 5)).unwrap();
    let model = fit(&ds, &s, &quick()).unwrap().model;
    let one = characterize(&model, &ds, &s.test[..1], 0.5).unwrap();
    assert_eq!(one.by_class.len(), 1);
    let means = one.by_class.values().next().unwrap();
    let row = ds.x.row(s.test[0]);
    assert_eq!(means.rows, 1);
    assert_eq!(means.max_down_mbps, Some(row[0]));

    let all: Vec<usize> = (0..ds.len()).collect();
    let c = characterize(&model, &ds, &all, 0.5).unwrap();
    let tn = c.by_class[&OutcomeClass::TrueNegative].ookla_dev_per_loc.unwrap();
    let tp = c.by_class[&OutcomeClass::TruePositive].ookla_dev_per_loc.unwrap();
    assert!(tn > tp, "TN {tn} vs TP {tp}");
    assert_eq!(c.shap_ranking[0].0, "ookla_dev_per_loc");
    assert!(c.shap_ranking.windows(2).all(|w| w[0].1 >= w[1].1));
}

#[test]
fn ablation_rows_share_the_test_split() {
    let ds = fixture();
    let s = split(&ds.rows, &spec(SplitKind::RandomObservation { test_fraction: 0.2 }, 6)).unwrap();
    let rows = ablation(&ds, &s, &quick()).unwrap();
    assert_eq!(rows.iter().map(|r| r.subset).collect::<Vec<_>>(), AblationSubset::ALL);
    assert!(rows.iter().all(|r| r.test_rows == s.test.len()));
    let challenge_only: BTreeSet<&str> = rows[0].composition.keys().map(String::as_str).collect();
    assert!(challenge_only.iter().all(|k| k.starts_with("Challenge")), "{challenge_only:?}");
    assert!(rows.windows(2).all(|w| w[0].train_rows <= rows[3].train_rows && w[1].train_rows <= rows[3].train_rows));

    // Without any challenge rows every subset but the full one is empty.
    let keep: Vec<usize> =
        s.train.iter().copied().filter(|&i| !ds.rows[i].source.is_some_and(LabelSource::is_challenge)).collect();
    let no_challenges = Split { train: keep, validation: vec![], test: s.test.clone() };
    let rows = ablation(&ds, &no_challenges, &quick()).unwrap();
    assert_eq!(rows.iter().map(|r| r.subset).collect::<Vec<_>>(), [
        AblationSubset::ChallengesAndChanges,
        AblationSubset::ChallengesAndLikelyServed,
        AblationSubset::Full
    ]);
}

#[test]
fn exports_carry_the_notice() {
    let ds = fixture();
    let s = split(&ds.rows, &spec(SplitKind::RandomObservation { test_fraction: 0.3 }, 2)).unwrap();
    let model = fit(&ds, &s, &quick()).unwrap().model;
    let r = evaluate(&model, &ds, &s.test, 0.5).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_roc_csv(&dir.path().join("roc.csv"), &r.roc).unwrap();
    let roc = std::fs::read_to_string(dir.path().join("roc.csv")).unwrap();
    assert!(roc.starts_with("fpr,tpr,threshold\n"));
    assert_eq!(roc.lines().count(), r.roc.len() + 1);
    let grid = ReferenceGrid::new(Default::default()).unwrap();
    let scores = nbm_core::evalharness::score_rows(&model, &ds.subset(&s.test)).unwrap();
    let n = write_suspicious_geojson(&dir.path().join("s.geojson"), &scores, &grid, 0.5).unwrap();
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("s.geojson")).unwrap()).unwrap();
    assert!(doc["notice"].as_str().unwrap().starts_with("suggestive, not definitive"));
    assert_eq!(doc["features"].as_array().unwrap().len(), n);
    assert_eq!(n, scores.iter().filter(|(_, p)| *p > 0.5).count());
    let ring = doc["features"][0]["geometry"]["coordinates"][0].as_array().unwrap();
    assert_eq!(ring.len(), 7);
    assert_eq!(ring[0], ring[6]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn random_splits_never_leak(seed in any::<u64>(), frac in 0.05f64..0.9, vfrac in 0.0f64..0.5) {
        let rows: Vec<_> = fixture_rows().clone();
        let s = split(&rows, &SplitSpec { kind: SplitKind::RandomObservation { test_fraction: frac }, validation_fraction: vfrac, seed }).unwrap();
        let test: BTreeSet<usize> = s.test.iter().copied().collect();
        prop_assert!(s.train.iter().chain(&s.validation).all(|i| !test.contains(i)));
        prop_assert_eq!(s.train.len() + s.validation.len() + s.test.len(), rows.len());
        prop_assert!(!s.train.is_empty());
    }
}

fn fixture_rows() -> &'static Vec<nbm_core::features::RowMeta> {
    static ROWS: std::sync::OnceLock<Vec<nbm_core::features::RowMeta>> = std::sync::OnceLock::new();
    ROWS.get_or_init(|| fixture().rows)
}
