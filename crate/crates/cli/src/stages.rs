//! One function per subcommand. Stages hand off through files in the output
//! directory, so `pipeline` is exactly these functions run in order.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Context;
use nbm_core::attribution::{CellTestStats, Localization, ProviderCellEvidence};
use nbm_core::claims::ClaimIndex;
use nbm_core::diff::{diff_snapshots, read_deltas, removals_as_labels, write_deltas, DeltaKind};
use nbm_core::entity_match::{flatten_whois, match_providers, summarize, write_matches_csv, MatchSummary, ProviderAsnMatch};
use nbm_core::evalharness::{
    ablation, evaluate as evaluate_model, fit, protocol_aucs, score_rows, split, write_roc_csv, write_scores_csv,
    write_suspicious_geojson, AblationRow, EvalReport, Split, StatisticsReport,
};
use nbm_core::features::{read_dataset, write_dataset, FeatureDataset, HashedTokenEmbedder, MethodologySource, PrecomputedEmbeddings};
use nbm_core::geo::ReferenceGrid;
use nbm_core::ingest::{self, read_table, write_table, MapSnapshot};
use nbm_core::labeling::{
    build_labeled_set, challenge_summary, likely_served, BalanceReport, ChallengeLabelStats, ChallengeSummary, Composition,
    LabeledObservation,
};
use nbm_core::pipeline::Inputs;
use nbm_core::synthworld::{generate, BundlePaths};
use nbm_gbdt::GbdtModel;
use serde::{Deserialize, Serialize};

use crate::config::{require_files, EmbeddingSource, RunConfig};
use crate::CliError;

pub const DELTAS: &str = "deltas.ndjson";
pub const MATCHES: &str = "matches.json";
pub const MATCHES_CSV: &str = "matches.csv";
pub const MATCH_SUMMARY: &str = "match_summary.json";
pub const CELL_STATS: &str = "cell_stats.csv";
pub const EVIDENCE: &str = "evidence.csv";
pub const LOCALIZATION: &str = "localization.json";
pub const LABELS: &str = "labels.csv";
pub const LIKELY_SERVED: &str = "likely_served.csv";
pub const LABELING: &str = "labeling.json";
pub const FEATURES: &str = "features_labeled.csv";
pub const FEATURES_ALL: &str = "features_all.csv";
pub const SPLIT: &str = "split.json";
pub const MODEL: &str = "model.json";
pub const SEARCH: &str = "search.json";
pub const EVAL_REPORT: &str = "eval_report.json";
pub const ROC: &str = "roc.csv";
pub const SCORES: &str = "scores.csv";
pub const SUSPICIOUS: &str = "suspicious.geojson";
pub const ABLATION: &str = "ablation.json";
pub const ABLATION_CSV: &str = "ablation.csv";
pub const STATISTICS: &str = "statistics.json";
pub const INGEST_CHECK: &str = "ingest_check.json";

fn data<E: Into<anyhow::Error>>(e: E) -> CliError {
    CliError::Data(e.into())
}

/// Files a run read and wrote, for the manifest.
pub struct Run {
    pub cfg: RunConfig,
    pub read: Vec<PathBuf>,
    pub written: Vec<PathBuf>,
}

impl Run {
    pub fn new(cfg: RunConfig) -> Self {
        Self { cfg, read: Vec::new(), written: Vec::new() }
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.cfg.output_dir.join(name)
    }

    fn input(&mut self, p: &Path) -> Result<PathBuf, CliError> {
        require_files([p])?;
        let p = p.to_path_buf();
        if !self.read.contains(&p) {
            self.read.push(p.clone());
        }
        Ok(p)
    }

    /// A file an earlier stage wrote into the output directory.
    fn stage_input(&mut self, name: &str) -> Result<PathBuf, CliError> {
        let p = self.out(name);
        if !p.is_file() {
            return Err(CliError::Validation(anyhow::anyhow!(
                "required file not found: {} (run the stage that produces it first)",
                p.display()
            )));
        }
        self.input(&p)
    }

    fn wrote(&mut self, name: &str) -> PathBuf {
        let p = self.out(name);
        if !self.written.contains(&p) {
            self.written.push(p.clone());
        }
        p
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf, CliError> {
        let p = self.wrote(name);
        let text = serde_json::to_string_pretty(value).map_err(data)?;
        std::fs::write(&p, text + "\n").with_context(|| format!("cannot write {}", p.display())).map_err(data)?;
        Ok(p)
    }

    fn read_json<T: for<'de> Deserialize<'de>>(&mut self, name: &str) -> Result<T, CliError> {
        let p = self.stage_input(name)?;
        let text = std::fs::read_to_string(&p).with_context(|| format!("cannot read {}", p.display())).map_err(data)?;
        serde_json::from_str(&text).with_context(|| format!("{}: invalid JSON", p.display())).map_err(data)
    }

    fn grid(&self) -> Result<ReferenceGrid, CliError> {
        ReferenceGrid::new(self.cfg.grid).map_err(|e| CliError::Validation(e.into()))
    }

    fn base_snapshot(&mut self) -> Result<MapSnapshot, CliError> {
        let p = self.cfg.inputs()?.claims_base.clone();
        ingest::parse_snapshot(&self.input(&p)?).map_err(data)
    }
}

pub fn ingest_check(run: &mut Run) -> Result<(), CliError> {
    let paths = run.cfg.inputs()?.clone();
    for p in paths.all() {
        run.input(p)?;
    }
    let inputs = Inputs::load(&paths).map_err(data)?;
    let claims = ClaimIndex::build(&inputs.base.claims);
    let (_, warnings) = flatten_whois(&inputs.whois);
    let summary = serde_json::json!({
        "claims_base": inputs.base.claims.len(),
        "claims_later": inputs.later.as_ref().map(|s| s.claims.len()),
        "claim_groups": claims.len(),
        "satellite_claims_excluded": claims.satellite_claims(),
        "methodology_texts": inputs.methodology.len(),
        "challenges": inputs.challenges.len(),
        "ookla_tiles": inputs.ookla.len(),
        "mlab_tests": inputs.mlab.len(),
        "mlab_rejected_missing_radius": inputs.mlab_rejected,
        "frn_registrations": inputs.frn.len(),
        "registry_objects": inputs.whois.len(),
        "registry_warnings": warnings.len(),
        "hex_counts": inputs.hex_counts.len(),
    });
    println!("{}", serde_json::to_string_pretty(&summary).map_err(data)?);
    run.write_json(INGEST_CHECK, &summary)?;
    Ok(())
}

pub fn diff(run: &mut Run, old: Option<PathBuf>, new: Option<PathBuf>, out: Option<PathBuf>) -> Result<(), CliError> {
    let (old, new) = match (old, new) {
        (Some(o), Some(n)) => (o, n),
        (o, n) => {
            let i = run.cfg.inputs()?;
            let later = i.claims_later.clone();
            (o.unwrap_or_else(|| i.claims_base.clone()), n.or(later).ok_or_else(|| {
                CliError::Validation(anyhow::anyhow!("no later snapshot: pass --new or set inputs.claims_later"))
            })?)
        }
    };
    let a = ingest::parse_snapshot(&run.input(&old)?).map_err(data)?;
    let b = ingest::parse_snapshot(&run.input(&new)?).map_err(data)?;
    let deltas = diff_snapshots(&a, &b);
    let path = match out {
        Some(p) => {
            run.written.push(p.clone());
            p
        }
        None => run.wrote(DELTAS),
    };
    write_deltas(&path, &deltas).map_err(data)?;
    let count = |k| deltas.iter().filter(|d| d.kind == k).count();
    log::info!(
        "{} deltas ({} removed, {} added, {} modified)",
        deltas.len(),
        count(DeltaKind::Removed),
        count(DeltaKind::Added),
        count(DeltaKind::Modified)
    );
    Ok(())
}

/// The pipeline's diff step: an empty delta file when there is no later
/// snapshot.
fn diff_or_empty(run: &mut Run) -> Result<(), CliError> {
    if run.cfg.inputs()?.claims_later.is_some() {
        diff(run, None, None, None)
    } else {
        let p = run.wrote(DELTAS);
        write_deltas(&p, &[]).map_err(data)
    }
}

pub fn match_providers_stage(run: &mut Run) -> Result<(), CliError> {
    let i = run.cfg.inputs()?.clone();
    let frn = ingest::parse_frn(&run.input(&i.frn)?).map_err(data)?;
    let whois = ingest::parse_whois(&run.input(&i.whois)?).map_err(data)?;
    let (asns, warnings) = flatten_whois(&whois);
    for w in &warnings {
        log::warn!("registry: {w:?}");
    }
    let matches = match_providers(&frn, &asns);
    let summary = summarize(&matches);
    run.write_json(MATCHES, &matches)?;
    let p = run.wrote(MATCHES_CSV);
    write_matches_csv(&p, &matches).map_err(data)?;
    run.write_json(MATCH_SUMMARY, &summary)?;
    log::info!("matched {} of {} providers", summary.matched, summary.providers);
    Ok(())
}

#[derive(Serialize)]
struct LocalizationSummary {
    attributed: u64,
    attributed_without_cells: u64,
    unattributed: u64,
    radius_filtered: u64,
    unknown_asns: usize,
    provider_cells: usize,
    cells_with_ookla: usize,
}

pub fn localize(run: &mut Run) -> Result<(), CliError> {
    let i = run.cfg.inputs()?.clone();
    let grid = run.grid()?;
    let claims = ClaimIndex::build(&run.base_snapshot()?.claims);
    let ookla = ingest::parse_ookla(&run.input(&i.ookla)?).map_err(data)?;
    let mlab = ingest::parse_mlab(&run.input(&i.mlab)?).map_err(data)?;
    let matches: Vec<ProviderAsnMatch> = run.read_json(MATCHES)?;
    let stats = nbm_core::attribution::reproject_ookla(&ookla, &grid).map_err(data)?;
    let loc: Localization = nbm_core::attribution::attribute_and_localize(&mlab.tests, &matches, claims.cells_by_provider(), &grid);
    let p = run.wrote(CELL_STATS);
    write_table(&p, &stats).map_err(data)?;
    let p = run.wrote(EVIDENCE);
    write_table(&p, &loc.evidence).map_err(data)?;
    run.write_json(
        LOCALIZATION,
        &LocalizationSummary {
            attributed: loc.attributed,
            attributed_without_cells: loc.attributed_without_cells,
            unattributed: loc.unattributed,
            radius_filtered: loc.radius_filtered,
            unknown_asns: loc.unknown_asns.len(),
            provider_cells: loc.evidence.len(),
            cells_with_ookla: stats.len(),
        },
    )?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelingReport {
    pub composition: Composition,
    pub challenge_labels: ChallengeLabelStats,
    pub challenges: ChallengeSummary,
    pub balance: BalanceReport,
    pub synthetic_pool: usize,
}

pub fn label(run: &mut Run) -> Result<(), CliError> {
    let i = run.cfg.inputs()?.clone();
    let claims = ClaimIndex::build(&run.base_snapshot()?.claims);
    let challenges = ingest::parse_challenges(&run.input(&i.challenges)?).map_err(data)?;
    let counts = ingest::parse_hex_counts(&run.input(&i.hex_counts)?).map_err(data)?;
    let deltas = read_deltas(&run.stage_input(DELTAS)?).map_err(data)?;
    let stats: Vec<CellTestStats> = read_table(&run.stage_input(CELL_STATS)?).map_err(data)?;
    let evidence: Vec<ProviderCellEvidence> = read_table(&run.stage_input(EVIDENCE)?).map_err(data)?;
    let likely = likely_served(&stats, &counts, &evidence, &claims).map_err(data)?;
    let set = build_labeled_set(&challenges, &removals_as_labels(&deltas), &likely, &claims, &run.cfg.labeling).map_err(data)?;
    let p = run.wrote(LABELS);
    write_table(&p, &set.observations).map_err(data)?;
    let p = run.wrote(LIKELY_SERVED);
    write_table(&p, &likely).map_err(data)?;
    run.write_json(
        LABELING,
        &LabelingReport {
            composition: set.composition.clone(),
            challenge_labels: set.challenges.clone(),
            challenges: challenge_summary(&challenges),
            balance: set.balance.clone(),
            synthetic_pool: set.synthetic_pool,
        },
    )?;
    log::info!("{} labeled observations", set.observations.len());
    Ok(())
}

pub fn featurize(run: &mut Run) -> Result<(), CliError> {
    let i = run.cfg.inputs()?.clone();
    let grid = run.grid()?;
    let claims = ClaimIndex::build(&run.base_snapshot()?.claims);
    let methodology = match &i.methodology {
        Some(p) => ingest::parse_methodology(&run.input(p)?).map_err(data)?,
        None => BTreeMap::new(),
    };
    let counts = ingest::parse_hex_counts(&run.input(&i.hex_counts)?).map_err(data)?;
    let stats: Vec<CellTestStats> = read_table(&run.stage_input(CELL_STATS)?).map_err(data)?;
    let evidence: Vec<ProviderCellEvidence> = read_table(&run.stage_input(EVIDENCE)?).map_err(data)?;
    let labels: Vec<LabeledObservation> = read_table(&run.stage_input(LABELS)?).map_err(data)?;
    let dimension = run.cfg.features.dimension;
    let embedder = HashedTokenEmbedder { dimension };
    let precomputed;
    let source = match run.cfg.features.embedding.clone() {
        EmbeddingSource::Hashed => MethodologySource::Text { texts: &methodology, embedder: &embedder },
        EmbeddingSource::Precomputed { path } => {
            precomputed = PrecomputedEmbeddings::load(&run.input(&path)?, dimension).map_err(data)?;
            MethodologySource::Precomputed(&precomputed)
        }
    };
    let ctx = nbm_core::features::FeatureContext::new(&claims, &grid, &stats, &counts, &evidence, source);
    let labeled = ctx.labeled(&labels).map_err(data)?;
    let all = ctx.all_claims().map_err(data)?;
    let p = run.wrote(FEATURES);
    write_dataset(&p, &labeled).map_err(data)?;
    let p = run.wrote(FEATURES_ALL);
    write_dataset(&p, &all).map_err(data)?;
    log::info!("{} labeled rows, {} claim rows, {} columns", labeled.len(), all.len(), labeled.columns.len());
    Ok(())
}

fn load_features(run: &mut Run, path: Option<PathBuf>, default: &str) -> Result<FeatureDataset, CliError> {
    let p = match path {
        Some(p) => run.input(&p)?,
        None => run.stage_input(default)?,
    };
    read_dataset(&p).map_err(data)
}

pub fn train(run: &mut Run, features: Option<PathBuf>) -> Result<(), CliError> {
    let ds = load_features(run, features, FEATURES)?;
    let s = split(&ds.rows, &run.cfg.split).map_err(data)?;
    let trained = fit(&ds, &s, &run.cfg.train).map_err(data)?;
    run.write_json(SPLIT, &s)?;
    let p = run.wrote(MODEL);
    std::fs::write(&p, trained.model.to_json().map_err(data)? + "\n")
        .with_context(|| format!("cannot write {}", p.display()))
        .map_err(data)?;
    if let Some(search) = &trained.search {
        run.write_json(SEARCH, search)?;
    }
    log::info!("trained {} trees on {} rows", trained.model.trees.len(), s.train.len());
    Ok(())
}

fn load_model(run: &mut Run, path: Option<PathBuf>) -> Result<GbdtModel, CliError> {
    let p = match path {
        Some(p) => run.input(&p)?,
        None => run.stage_input(MODEL)?,
    };
    let text = std::fs::read_to_string(&p).with_context(|| format!("cannot read {}", p.display())).map_err(data)?;
    GbdtModel::from_json(&text).with_context(|| format!("{}: invalid model", p.display())).map_err(data)
}

pub fn evaluate(run: &mut Run, features: Option<PathBuf>, model: Option<PathBuf>) -> Result<(), CliError> {
    let ds = load_features(run, features, FEATURES)?;
    let model = load_model(run, model)?;
    let s: Split = run.read_json(SPLIT)?;
    let threshold = run.cfg.train.threshold;
    let report: EvalReport = evaluate_model(&model, &ds, &s.test, threshold).map_err(data)?;
    run.write_json(EVAL_REPORT, &report)?;
    let p = run.wrote(ROC);
    write_roc_csv(&p, &report.roc).map_err(data)?;
    let all = run.stage_input(FEATURES_ALL).and_then(|p| read_dataset(&p).map_err(data))?;
    let scores = score_rows(&model, &all).map_err(data)?;
    let p = run.wrote(SCORES);
    write_scores_csv(&p, &scores).map_err(data)?;
    let grid = run.grid()?;
    let p = run.wrote(SUSPICIOUS);
    let flagged = write_suspicious_geojson(&p, &scores, &grid, threshold).map_err(data)?;
    println!("test AUC {}, F1 {:.4}, {} of {} claims flagged", fmt_auc(report.auc), report.f1, flagged, scores.len());
    Ok(())
}

fn fmt_auc(a: Option<f64>) -> String {
    a.map_or_else(|| "n/a".to_string(), |a| format!("{a:.4}"))
}

pub fn ablate(run: &mut Run, features: Option<PathBuf>) -> Result<(), CliError> {
    let ds = load_features(run, features, FEATURES)?;
    let s: Split = run.read_json(SPLIT)?;
    let rows = ablation(&ds, &s, &run.cfg.train).map_err(data)?;
    run.write_json(ABLATION, &rows)?;
    let p = run.wrote(ABLATION_CSV);
    let mut text = String::from("subset,train_rows,test_rows,auc,f1\n");
    for r in &rows {
        text += &format!("{},{},{},{},{}\n", r.subset.label(), r.train_rows, r.test_rows, r.auc.map_or(String::new(), |a| a.to_string()), r.f1);
    }
    std::fs::write(&p, text).with_context(|| format!("cannot write {}", p.display())).map_err(data)?;
    for r in &rows {
        println!("{:<26} train {:>6}  AUC {}", r.subset.label(), r.train_rows, fmt_auc(r.auc));
    }
    Ok(())
}

pub fn report(run: &mut Run) -> Result<(), CliError> {
    let labeling: LabelingReport = run.read_json(LABELING)?;
    let matching: MatchSummary = run.read_json(MATCH_SUMMARY)?;
    let ds = load_features(run, None, FEATURES)?;
    let mut aucs = protocol_aucs(
        &ds,
        &run.cfg.train,
        &run.cfg.report.held_out_states,
        run.cfg.split.validation_fraction,
        run.cfg.split.seed,
    )
    .map_err(data)?;
    if run.out(ABLATION).is_file() {
        let rows: Vec<AblationRow> = run.read_json(ABLATION)?;
        for r in rows {
            aucs.insert(format!("ablation:{}", r.subset.label()), r.auc);
        }
    }
    let stats = StatisticsReport::new(labeling.challenges, labeling.challenge_labels, &labeling.composition, &matching, aucs);
    run.write_json(STATISTICS, &stats)?;
    println!("{}", serde_json::to_string_pretty(&stats).map_err(data)?);
    Ok(())
}

pub fn pipeline(run: &mut Run) -> Result<(), CliError> {
    diff_or_empty(run)?;
    match_providers_stage(run)?;
    localize(run)?;
    label(run)?;
    featurize(run)?;
    train(run, None)?;
    evaluate(run, None, None)?;
    ablate(run, None)?;
    report(run)
}

/// Writes a bundle plus a `run.toml` that points at it.
pub fn synth(run: &mut Run) -> Result<(), CliError> {
    let world = generate(&run.cfg.world).map_err(|e| match e {
        nbm_core::synthworld::SynthError::InvalidConfig(_) => CliError::Validation(e.into()),
        other => data(other),
    })?;
    let dir = run.cfg.output_dir.clone();
    let paths: BundlePaths = world.write_bundle(&dir).map_err(data)?;
    for p in [
        &paths.claims_base,
        &paths.claims_later,
        &paths.methodology,
        &paths.challenges,
        &paths.ookla,
        &paths.mlab,
        &paths.frn,
        &paths.whois,
        &paths.hex_counts,
        &paths.truth,
        &paths.config,
    ] {
        run.written.push(p.clone());
    }
    let rel = |p: &Path| PathBuf::from(p.file_name().expect("bundle files have names"));
    let mut cfg = RunConfig {
        seed: run.cfg.world.seed,
        output_dir: PathBuf::from("out"),
        grid: run.cfg.world.grid,
        ..RunConfig::default()
    };
    cfg.inputs = Some(nbm_core::pipeline::InputPaths {
        claims_base: rel(&paths.claims_base),
        claims_later: Some(rel(&paths.claims_later)),
        methodology: Some(rel(&paths.methodology)),
        challenges: rel(&paths.challenges),
        ookla: rel(&paths.ookla),
        mlab: rel(&paths.mlab),
        frn: rel(&paths.frn),
        whois: rel(&paths.whois),
        hex_counts: rel(&paths.hex_counts),
    });
    cfg.world = run.cfg.world.clone();
    let p = dir.join("run.toml");
    std::fs::write(&p, cfg.to_toml()).with_context(|| format!("cannot write {}", p.display())).map_err(data)?;
    run.written.push(p);
    println!(
        "wrote a {}-state, {}-provider world to {} ({} claims, {} overclaimed cells)",
        run.cfg.world.n_states,
        run.cfg.world.n_providers,
        dir.display(),
        world.base_claims.len(),
        world.truth.total_overclaimed()
    );
    Ok(())
}
