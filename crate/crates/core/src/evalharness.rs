//! Evaluation protocols: holdout splits, training with optional random
//! search, metric reports with per-provider breakdowns, per-class feature
//! characterization, label-source ablation and the statistics report.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use nbm_gbdt::metrics::{auc, confusion, roc_curve, Confusion, RocPoint};
use nbm_gbdt::search::{random_search, Evaluation, SearchOutcome, SearchSpace};
use nbm_gbdt::{shap_values, train, GbdtError, GbdtModel, GbdtParams, ValidationSet};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::claims::ObservationKey;
use crate::entity_match::MatchSummary;
use crate::features::{col, FeatureDataset, RowMeta};
use crate::geo::{GeoError, HexGrid};
use crate::ingest::{open_output, IngestError};
use crate::labeling::{ChallengeLabelStats, ChallengeSummary, Composition, LabelSource};

/// Attached to every exported report.
pub const NOTICE: &str = "suggestive, not definitive: model scores flag claims for review and do not establish that a location is unserved";

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("the test split is empty")]
    EmptyTestSplit,
    #[error("the training split is empty")]
    EmptyTrainSplit,
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error(transparent)]
    Gbdt(#[from] GbdtError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Geo(#[from] GeoError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum SplitKind {
    /// Uniform sample of observations.
    RandomObservation { test_fraction: f64 },
    /// Sample drawn only from regulator-adjudicated challenge observations.
    FccAdjudicatedOnly { test_fraction: f64 },
    /// Every observation in the listed states.
    HeldOutStates { states: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub kind: SplitKind,
    /// Share of the non-test rows carved off for early stopping and search.
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { kind: SplitKind::RandomObservation { test_fraction: 0.1 }, validation_fraction: 0.1, seed: 0 }
    }
}

/// Row indices into a dataset.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

fn sample_count(n: usize, fraction: f64) -> usize {
    ((fraction * n as f64).round() as usize).clamp(1, n)
}

pub fn split(rows: &[RowMeta], spec: &SplitSpec) -> Result<Split, EvalError> {
    if !(0.0..1.0).contains(&spec.validation_fraction) {
        return Err(EvalError::InvalidSplit("validation_fraction must be in [0, 1)".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let all: Vec<usize> = (0..rows.len()).collect();
    let mut test: Vec<usize> = match &spec.kind {
        SplitKind::RandomObservation { test_fraction } | SplitKind::FccAdjudicatedOnly { test_fraction } => {
            if !(*test_fraction > 0.0 && *test_fraction < 1.0) {
                return Err(EvalError::InvalidSplit("test_fraction must be in (0, 1)".into()));
            }
            let mut pool: Vec<usize> = match spec.kind {
                SplitKind::FccAdjudicatedOnly { .. } => all.iter().copied().filter(|&i| rows[i].fcc_adjudicated).collect(),
                _ => all.clone(),
            };
            if pool.is_empty() {
                return Err(EvalError::EmptyTestSplit);
            }
            let n = sample_count(pool.len(), *test_fraction);
            pool.shuffle(&mut rng);
            pool.truncate(n);
            pool
        }
        SplitKind::HeldOutStates { states } => {
            if states.is_empty() {
                return Err(EvalError::InvalidSplit("no states to hold out".into()));
            }
            let held: BTreeSet<&str> = states.iter().map(String::as_str).collect();
            all.iter().copied().filter(|&i| held.contains(rows[i].state.as_str())).collect()
        }
    };
    if test.is_empty() {
        return Err(EvalError::EmptyTestSplit);
    }
    test.sort_unstable();
    let in_test: BTreeSet<usize> = test.iter().copied().collect();
    let mut rest: Vec<usize> = all.into_iter().filter(|i| !in_test.contains(i)).collect();
    if rest.is_empty() {
        return Err(EvalError::EmptyTrainSplit);
    }
    rest.shuffle(&mut rng);
    let n_valid = if spec.validation_fraction > 0.0 && rest.len() > 1 {
        ((spec.validation_fraction * rest.len() as f64).round() as usize).clamp(1, rest.len() - 1)
    } else {
        0
    };
    let mut validation = rest.split_off(rest.len() - n_valid);
    rest.sort_unstable();
    validation.sort_unstable();
    Ok(Split { train: rest, validation, test })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub space: SearchSpace,
    pub budget: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub params: GbdtParams,
    pub search: Option<SearchConfig>,
    /// Probability above which a claim is predicted Unserved.
    pub threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            params: GbdtParams { n_rounds: 150, max_depth: 5, eta: 0.1, early_stopping_rounds: Some(20), ..Default::default() },
            search: None,
            threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub model: GbdtModel,
    pub search: Option<SearchOutcome>,
}

/// Trains on `split.train`; the validation rows drive early stopping and,
/// when configured, score the random search (three folds of the training
/// rows if there is no validation set).
pub fn fit(ds: &FeatureDataset, split: &Split, cfg: &TrainConfig) -> Result<TrainedModel, EvalError> {
    if split.train.is_empty() {
        return Err(EvalError::EmptyTrainSplit);
    }
    let train_set = ds.subset(&split.train);
    let (xt, yt) = (&train_set.x, train_set.targets());
    let valid_set = (!split.validation.is_empty()).then(|| ds.subset(&split.validation));
    let yv = valid_set.as_ref().map(FeatureDataset::targets);
    let validation = valid_set.as_ref().zip(yv.as_deref()).map(|(v, y)| ValidationSet { x: &v.x, y });

    let (params, search) = match &cfg.search {
        Some(s) => {
            let evaluation = match validation {
                Some(v) => Evaluation::Holdout(v),
                None => Evaluation::KFold { k: 3 },
            };
            let outcome = random_search(xt, &yt, &s.space, &cfg.params, evaluation, s.budget, s.seed)?;
            (outcome.best.clone(), Some(outcome))
        }
        None => (cfg.params.clone(), None),
    };
    let model = train(xt, &yt, &params, validation)?.with_feature_names(ds.columns.clone())?;
    Ok(TrainedModel { model, search })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

/// Where a prediction landed. Unserved is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum OutcomeClass {
    TruePositive,
    FalsePositive,
    TrueNegative,
    FalseNegative,
}

impl OutcomeClass {
    pub fn of(predicted_unserved: bool, actual_unserved: bool) -> Self {
        match (predicted_unserved, actual_unserved) {
            (true, true) => Self::TruePositive,
            (true, false) => Self::FalsePositive,
            (false, false) => Self::TrueNegative,
            (false, true) => Self::FalseNegative,
        }
    }
}

/// Means over a group of rows; absent values are skipped.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureMeans {
    pub rows: usize,
    pub ookla_dev_per_loc: Option<f64>,
    pub mlab_test_count: Option<f64>,
    pub max_down_mbps: Option<f64>,
    pub max_up_mbps: Option<f64>,
}

#[derive(Default)]
struct MeanAcc {
    rows: usize,
    sums: [(f64, usize); 4],
}

impl MeanAcc {
    fn add(&mut self, row: &[f64]) {
        self.rows += 1;
        for (slot, c) in self.sums.iter_mut().zip([col::OOKLA_DEV_PER_LOC, col::MLAB_TEST_COUNT, col::MAX_DOWN, col::MAX_UP]) {
            if !row[c].is_nan() {
                slot.0 += row[c];
                slot.1 += 1;
            }
        }
    }

    fn finish(&self) -> FeatureMeans {
        let m = |(s, n): (f64, usize)| (n > 0).then(|| s / n as f64);
        FeatureMeans {
            rows: self.rows,
            ookla_dev_per_loc: m(self.sums[0]),
            mlab_test_count: m(self.sums[1]),
            max_down_mbps: m(self.sums[2]),
            max_up_mbps: m(self.sums[3]),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Characterization {
    pub by_class: BTreeMap<OutcomeClass, FeatureMeans>,
    pub by_technology: BTreeMap<String, BTreeMap<OutcomeClass, FeatureMeans>>,
    pub by_state: BTreeMap<String, BTreeMap<OutcomeClass, FeatureMeans>>,
    /// Features by mean absolute attribution, largest first.
    pub shap_ranking: Vec<(String, f64)>,
}

/// Per-class feature means and the mean |SHAP| ranking over `rows`.
pub fn characterize(model: &GbdtModel, ds: &FeatureDataset, rows: &[usize], threshold: f64) -> Result<Characterization, EvalError> {
    let mut by_class: BTreeMap<OutcomeClass, MeanAcc> = BTreeMap::new();
    let mut by_tech: BTreeMap<String, BTreeMap<OutcomeClass, MeanAcc>> = BTreeMap::new();
    let mut by_state: BTreeMap<String, BTreeMap<OutcomeClass, MeanAcc>> = BTreeMap::new();
    let mut shap_sum = vec![0.0; ds.columns.len()];
    for &i in rows {
        let x = ds.x.row(i);
        let p = model.predict_row(x)?;
        let meta = &ds.rows[i];
        let class = OutcomeClass::of(p > threshold, meta.label.is_some_and(|l| l.target() == 1.0));
        by_class.entry(class).or_default().add(x);
        by_tech.entry(meta.key.technology.to_string()).or_default().entry(class).or_default().add(x);
        by_state.entry(meta.state.clone()).or_default().entry(class).or_default().add(x);
        for (s, v) in shap_sum.iter_mut().zip(shap_values(model, x)?.values) {
            *s += v.abs();
        }
    }
    let finish = |m: BTreeMap<OutcomeClass, MeanAcc>| m.into_iter().map(|(k, v)| (k, v.finish())).collect();
    let mut shap_ranking: Vec<(String, f64)> = ds
        .columns
        .iter()
        .cloned()
        .zip(shap_sum.into_iter().map(|s| if rows.is_empty() { 0.0 } else { s / rows.len() as f64 }))
        .collect();
    shap_ranking.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(Characterization {
        by_class: finish(by_class),
        by_technology: by_tech.into_iter().map(|(k, v)| (k, finish(v))).collect(),
        by_state: by_state.into_iter().map(|(k, v)| (k, finish(v))).collect(),
        shap_ranking,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub notice: String,
    pub rows: usize,
    pub threshold: f64,
    pub auc: Option<f64>,
    pub f1: f64,
    pub unserved: ClassMetrics,
    pub served: ClassMetrics,
    pub confusion: Confusion,
    pub per_isp: BTreeMap<u64, Confusion>,
    pub per_technology: BTreeMap<String, Confusion>,
    pub per_state: BTreeMap<String, Confusion>,
    pub characterization: Characterization,
    #[serde(skip)]
    pub roc: Vec<RocPoint>,
}

pub fn evaluate(model: &GbdtModel, ds: &FeatureDataset, rows: &[usize], threshold: f64) -> Result<EvalReport, EvalError> {
    let subset = ds.subset(rows);
    let scores = model.predict_proba(&subset.x)?;
    let labels = subset.targets();
    let c = confusion(&scores, &labels, threshold);
    let mut per_isp: BTreeMap<u64, Confusion> = BTreeMap::new();
    let mut per_technology: BTreeMap<String, Confusion> = BTreeMap::new();
    let mut per_state: BTreeMap<String, Confusion> = BTreeMap::new();
    for ((meta, &s), &l) in subset.rows.iter().zip(&scores).zip(&labels) {
        let (pred, actual) = (s > threshold, l == 1.0);
        per_isp.entry(meta.key.provider_id).or_default().record(pred, actual);
        per_technology.entry(meta.key.technology.to_string()).or_default().record(pred, actual);
        per_state.entry(meta.state.clone()).or_default().record(pred, actual);
    }
    Ok(EvalReport {
        notice: NOTICE.to_string(),
        rows: rows.len(),
        threshold,
        auc: auc(&scores, &labels),
        f1: c.f1(),
        unserved: ClassMetrics { precision: c.precision(), recall: c.recall(), f1: c.f1(), support: c.tp + c.fn_ },
        served: ClassMetrics {
            precision: c.negative_precision(),
            recall: c.negative_recall(),
            f1: f1_of(c.negative_precision(), c.negative_recall()),
            support: c.tn + c.fp,
        },
        confusion: c,
        per_isp,
        per_technology,
        per_state,
        characterization: characterize(model, ds, rows, threshold)?,
        roc: roc_curve(&scores, &labels),
    })
}

fn f1_of(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Label-source subsets, each a superset of the first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AblationSubset {
    ChallengesOnly,
    ChallengesAndChanges,
    ChallengesAndLikelyServed,
    Full,
}

impl AblationSubset {
    pub const ALL: [AblationSubset; 4] =
        [Self::ChallengesOnly, Self::ChallengesAndChanges, Self::ChallengesAndLikelyServed, Self::Full];

    pub fn includes(self, source: LabelSource) -> bool {
        match source {
            LabelSource::ChallengeSucceeded | LabelSource::ChallengeFailed => true,
            LabelSource::ChangeRemoved => matches!(self, Self::ChallengesAndChanges | Self::Full),
            LabelSource::SyntheticLikelyServed => matches!(self, Self::ChallengesAndLikelyServed | Self::Full),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::ChallengesOnly => "challenges",
            Self::ChallengesAndChanges => "challenges+changes",
            Self::ChallengesAndLikelyServed => "challenges+likely_served",
            Self::Full => "full",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub subset: AblationSubset,
    pub train_rows: usize,
    pub validation_rows: usize,
    pub test_rows: usize,
    /// Training rows by label source.
    pub composition: BTreeMap<String, usize>,
    pub auc: Option<f64>,
    pub f1: f64,
}

/// Retrains on each subset of the training and validation rows and scores
/// every model on the same test rows. Subsets without training rows are
/// skipped.
pub fn ablation(ds: &FeatureDataset, split: &Split, cfg: &TrainConfig) -> Result<Vec<AblationRow>, EvalError> {
    let keep = |rows: &[usize], s: AblationSubset| -> Vec<usize> {
        rows.iter().copied().filter(|&i| ds.rows[i].source.is_some_and(|src| s.includes(src))).collect()
    };
    let results: Vec<Result<Option<AblationRow>, EvalError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = AblationSubset::ALL
            .iter()
            .map(|&subset| {
                let sub = Split { train: keep(&split.train, subset), validation: keep(&split.validation, subset), test: split.test.clone() };
                scope.spawn(move || -> Result<Option<AblationRow>, EvalError> {
                    if sub.train.is_empty() {
                        log::warn!("ablation subset {} has no training rows; skipped", subset.label());
                        return Ok(None);
                    }
                    let model = fit(ds, &sub, cfg)?.model;
                    let test = ds.subset(&sub.test);
                    let scores = model.predict_proba(&test.x)?;
                    let labels = test.targets();
                    let mut composition = BTreeMap::new();
                    for &i in &sub.train {
                        if let Some(s) = ds.rows[i].source {
                            *composition.entry(s.to_string()).or_insert(0) += 1;
                        }
                    }
                    Ok(Some(AblationRow {
                        subset,
                        train_rows: sub.train.len(),
                        validation_rows: sub.validation.len(),
                        test_rows: sub.test.len(),
                        composition,
                        auc: auc(&scores, &labels),
                        f1: confusion(&scores, &labels, cfg.threshold).f1(),
                    }))
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("ablation worker panicked")).collect()
    });
    let mut rows = Vec::new();
    for r in results {
        rows.extend(r?);
    }
    Ok(rows)
}

/// Test AUC under each holdout protocol, keyed by protocol name. A protocol
/// whose test split comes out empty reports `None`.
pub fn protocol_aucs(
    ds: &FeatureDataset,
    cfg: &TrainConfig,
    held_out_states: &[String],
    validation_fraction: f64,
    seed: u64,
) -> Result<BTreeMap<String, Option<f64>>, EvalError> {
    let kinds = [
        ("random_observation", SplitKind::RandomObservation { test_fraction: 0.1 }),
        ("fcc_adjudicated_only", SplitKind::FccAdjudicatedOnly { test_fraction: 0.5 }),
        ("held_out_states", SplitKind::HeldOutStates { states: held_out_states.to_vec() }),
    ];
    let mut out = BTreeMap::new();
    for (name, kind) in kinds {
        let s = match split(&ds.rows, &SplitSpec { kind, validation_fraction, seed }) {
            Ok(s) => s,
            Err(EvalError::EmptyTestSplit | EvalError::EmptyTrainSplit) => {
                log::warn!("{name}: empty split, no AUC");
                out.insert(name.to_string(), None);
                continue;
            }
            Err(e) => return Err(e),
        };
        let model = fit(ds, &s, cfg)?.model;
        let test = ds.subset(&s.test);
        out.insert(name.to_string(), auc(&model.predict_proba(&test.x)?, &test.targets()));
    }
    Ok(out)
}

/// Probability that each row's claim is an overclaim.
pub fn score_rows(model: &GbdtModel, ds: &FeatureDataset) -> Result<Vec<(ObservationKey, f64)>, EvalError> {
    let p = model.predict_proba(&ds.x)?;
    Ok(ds.rows.iter().map(|r| r.key).zip(p).collect())
}

pub fn write_roc_csv(path: &Path, points: &[RocPoint]) -> Result<(), IngestError> {
    let io_err = |source| IngestError::Io { path: path.to_path_buf(), source };
    let mut out = open_output(path)?;
    writeln!(out, "fpr,tpr,threshold").map_err(io_err)?;
    for p in points {
        writeln!(out, "{},{},{}", p.fpr, p.tpr, p.threshold).map_err(io_err)?;
    }
    out.finish().map_err(io_err)
}

/// Scores as CSV preceded by a `#` notice line.
pub fn write_scores_csv(path: &Path, scores: &[(ObservationKey, f64)]) -> Result<(), IngestError> {
    let io_err = |source| IngestError::Io { path: path.to_path_buf(), source };
    let mut out = open_output(path)?;
    writeln!(out, "# {NOTICE}").map_err(io_err)?;
    writeln!(out, "provider_id,cell,technology,probability").map_err(io_err)?;
    for (k, p) in scores {
        writeln!(out, "{},{},{},{}", k.provider_id, k.cell, k.technology, p).map_err(io_err)?;
    }
    out.finish().map_err(io_err)
}

/// Cells scored above `threshold` as a GeoJSON FeatureCollection.
pub fn write_suspicious_geojson(
    path: &Path,
    scores: &[(ObservationKey, f64)],
    grid: &dyn HexGrid,
    threshold: f64,
) -> Result<usize, EvalError> {
    let mut features = Vec::new();
    for (k, p) in scores.iter().filter(|(_, p)| *p > threshold) {
        let mut ring: Vec<[f64; 2]> = grid.cell_boundary(k.cell)?.iter().map(|v| [v.lon, v.lat]).collect();
        if let Some(&first) = ring.first() {
            ring.push(first);
        }
        features.push(serde_json::json!({
            "type": "Feature",
            "geometry": { "type": "Polygon", "coordinates": [ring] },
            "properties": {
                "provider_id": k.provider_id,
                "cell": k.cell.to_string(),
                "technology": k.technology.code(),
                "probability": p,
            },
        }));
    }
    let n = features.len();
    let doc = serde_json::json!({ "type": "FeatureCollection", "notice": NOTICE, "features": features });
    let text = serde_json::to_string_pretty(&doc).expect("json values serialize");
    std::fs::write(path, text + "\n").map_err(|source| IngestError::Io { path: path.to_path_buf(), source })?;
    Ok(n)
}

/// Headline statistics a run reports regardless of data scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatisticsReport {
    pub notice: String,
    pub challenges: ChallengeSummary,
    pub challenge_labels: ChallengeLabelStats,
    pub composition: BTreeMap<String, usize>,
    /// Share of labeled rows per source, in [0, 1].
    pub composition_share: BTreeMap<String, f64>,
    pub observations: usize,
    pub providers: usize,
    pub matched_providers: usize,
    pub match_rate: f64,
    pub aucs: BTreeMap<String, Option<f64>>,
}

impl StatisticsReport {
    pub fn new(
        challenges: ChallengeSummary,
        challenge_labels: ChallengeLabelStats,
        composition: &Composition,
        matching: &MatchSummary,
        aucs: BTreeMap<String, Option<f64>>,
    ) -> Self {
        Self {
            notice: NOTICE.to_string(),
            challenges,
            challenge_labels,
            composition: composition.by_source.iter().map(|(s, &n)| (s.to_string(), n)).collect(),
            composition_share: LabelSource::ALL
                .iter()
                .filter(|s| composition.by_source.contains_key(s))
                .map(|&s| (s.to_string(), composition.fraction(s)))
                .collect(),
            observations: composition.total,
            providers: matching.providers,
            matched_providers: matching.matched,
            match_rate: matching.match_rate,
            aucs,
        }
    }
}
