use std::collections::BTreeMap;
use std::io::Write;

use nbm_core::attribution::{CellTestStats, ProviderCellEvidence};
use nbm_core::claims::{ClaimIndex, ObservationKey};
use nbm_core::features::*;
use nbm_core::geo::{CellId, GeoPoint, GridConfig, HexGrid, ReferenceGrid};
use nbm_core::ingest::{AvailabilityClaim, Category, HexLocationCount, Technology};
use nbm_core::labeling::{LabelSource, LabeledObservation};
use proptest::prelude::*;

fn unit(dim: usize, hot: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    v[hot] = 1.0;
    v
}

fn write_embeddings(rows: &[(u64, &str, Vec<f64>)]) -> tempfile::NamedTempFile {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    let dim = rows.iter().map(|r| r.2.len()).max().unwrap_or(0);
    let header: Vec<String> = (0..dim).map(|i| format!("v{i}")).collect();
    writeln!(f, "provider_id,technology,{}", header.join(",")).unwrap();
    for (p, t, v) in rows {
        let vals: Vec<String> = v.iter().map(f64::to_string).collect();
        writeln!(f, "{p},{t},{}", vals.join(",")).unwrap();
    }
    f
}

#[test]
fn precomputed_embeddings_validation() {
    let ok = write_embeddings(&[(1, "50", unit(384, 3)), (1, "", unit(384, 4))]);
    let e = PrecomputedEmbeddings::load(ok.path(), 384).unwrap();
    assert_eq!(e.vectors.len(), 2);
    assert_eq!(e.vectors[&(1, Some(Technology::Fiber))][3], 1.0);

    let short = write_embeddings(&[(1, "50", unit(300, 0))]);
    assert!(matches!(
        PrecomputedEmbeddings::load(short.path(), 384),
        Err(FeatureError::DimensionMismatch { expected: 384, found: 300, line: 2, .. })
    ));

    let dup = write_embeddings(&[(1, "50", unit(384, 3)), (1, "50", unit(384, 5))]);
    assert!(matches!(PrecomputedEmbeddings::load(dup.path(), 384), Err(FeatureError::DuplicateEmbedding { line: 3, .. })));

    let mut v = unit(384, 0);
    v[1] = 0.5;
    let unnormed = write_embeddings(&[(2, "", v)]);
    assert!(matches!(PrecomputedEmbeddings::load(unnormed.path(), 384), Err(FeatureError::NotNormalized { .. })));

    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("emb.csv");
    e.write(&out).unwrap();
    assert_eq!(PrecomputedEmbeddings::load(&out, 384).unwrap(), e);
}

struct Fixture {
    claims: Vec<AvailabilityClaim>,
    grid: ReferenceGrid,
    stats: Vec<CellTestStats>,
    counts: Vec<HexLocationCount>,
    evidence: Vec<ProviderCellEvidence>,
    texts: BTreeMap<(u64, Option<Technology>), String>,
}

fn fixture() -> Fixture {
    let grid = ReferenceGrid::new(GridConfig::default()).unwrap();
    let cells: Vec<CellId> =
        (0..4).map(|i| grid.cell_of(GeoPoint::new(41.0 + 0.01 * f64::from(i), -98.0).unwrap())).collect();
    let mut claims = Vec::new();
    let mut loc = 0;
    for (p, tech, down, up) in [(1u64, Technology::Fiber, 1000.0, 1000.0), (2, Technology::Cable, 300.0, 20.0)] {
        for (i, &cell) in cells.iter().enumerate() {
            for _ in 0..=i {
                loc += 1;
                claims.push(AvailabilityClaim {
                    provider_id: p,
                    brand: format!("p{p}"),
                    technology: tech,
                    max_down_mbps: down - loc as f64,
                    max_up_mbps: up,
                    low_latency: p == 1,
                    location_id: loc,
                    cell,
                    state: "NE".into(),
                    category: Category::Residential,
                });
            }
        }
    }
    let stats = vec![CellTestStats {
        cell: cells[1],
        ookla_tests: 9,
        ookla_devices: 6,
        max_avg_down_kbps: 5e4,
        max_avg_up_kbps: 5e3,
        min_avg_latency_ms: 9.0,
    }];
    let counts = cells.iter().map(|&c| HexLocationCount { cell: c, bsl_count: 4 }).collect();
    let evidence = vec![ProviderCellEvidence { provider_id: 1, cell: cells[1], mlab_test_count: 3 }];
    let texts = BTreeMap::from([
        ((1, None), "Engineering propagation model for fiber route".to_string()),
        ((2, Some(Technology::Cable)), "entire census block reported as served".to_string()),
    ]);
    Fixture { claims, grid, stats, counts, evidence, texts }
}

fn build(fx: &Fixture, idx: &ClaimIndex, embedder: &HashedTokenEmbedder) -> FeatureDataset {
    let ctx = FeatureContext::new(
        idx,
        &fx.grid,
        &fx.stats,
        &fx.counts,
        &fx.evidence,
        MethodologySource::Text { texts: &fx.texts, embedder },
    );
    ctx.all_claims().unwrap()
}

#[test]
fn fixture_vectors_match_hand_values() {
    let fx = fixture();
    let idx = ClaimIndex::build(&fx.claims);
    let ds = build(&fx, &idx, &HashedTokenEmbedder { dimension: 16 });
    assert_eq!(ds.len(), 8);
    assert_eq!(ds.columns.len(), 8 + 56 + 16);
    for (meta, row) in ds.rows.iter().zip(ds.x.rows()) {
        let group = idx.group(&meta.key).unwrap();
        let centroid = fx.grid.cell_centroid(meta.key.cell).unwrap();
        assert_eq!(row[3], centroid.lat);
        assert_eq!(row[4], centroid.lon);
        assert_eq!(row[col::CLAIM_PCT], group.claims.len() as f64 / 4.0);
        assert_eq!(row[col::MAX_DOWN], group.claims.iter().map(|c| c.max_down_mbps).fold(f64::MIN, f64::max));
        assert_eq!(row[col::LOW_LATENCY], if meta.key.provider_id == 1 { 1.0 } else { 0.0 });
        if meta.key.cell == fx.stats[0].cell {
            assert_eq!(row[col::OOKLA_DEV_PER_LOC], 1.5);
        } else {
            assert!(row[col::OOKLA_DEV_PER_LOC].is_nan());
        }
        match (meta.key.provider_id, meta.key.cell == fx.evidence[0].cell) {
            (1, true) => assert_eq!(row[col::MLAB_TEST_COUNT], 3.0),
            (1, false) => assert_eq!(row[col::MLAB_TEST_COUNT], 0.0),
            _ => assert!(row[col::MLAB_TEST_COUNT].is_nan()),
        }
        let emb = &row[col::EMBEDDING_START..];
        let norm: f64 = emb.iter().map(|x| x * x).sum();
        assert!((norm - 1.0).abs() < 1e-12);
    }
}

#[test]
fn golden_feature_table() {
    let fx = fixture();
    let idx = ClaimIndex::build(&fx.claims);
    let ds = build(&fx, &idx, &HashedTokenEmbedder { dimension: 8 });
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("features.csv");
    write_dataset(&path, &ds).unwrap();
    let got = std::fs::read_to_string(&path).unwrap();
    let golden_path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/golden/features_small.csv");
    if std::env::var_os("NBM_UPDATE_GOLDEN").is_some() {
        std::fs::write(golden_path, &got).unwrap();
    }
    assert_eq!(got, std::fs::read_to_string(golden_path).unwrap());
}

#[test]
fn dataset_round_trips_csv_and_binary() {
    let fx = fixture();
    let idx = ClaimIndex::build(&fx.claims);
    let embedder = HashedTokenEmbedder::default();
    let ctx = FeatureContext::new(
        &idx,
        &fx.grid,
        &fx.stats,
        &fx.counts,
        &fx.evidence,
        MethodologySource::Text { texts: &fx.texts, embedder: &embedder },
    );
    let labeled: Vec<LabeledObservation> = idx
        .keys()
        .enumerate()
        .map(|(i, &k)| {
            let mut o = LabeledObservation::new(k, "NE", if i % 2 == 0 { LabelSource::ChangeRemoved } else { LabelSource::SyntheticLikelyServed });
            o.fcc_adjudicated = i == 3;
            o
        })
        .collect();
    let ds = ctx.labeled(&labeled).unwrap();
    let dir = tempfile::tempdir().unwrap();

    let csv = dir.path().join("f.csv.gz");
    write_dataset(&csv, &ds).unwrap();
    let back = read_dataset(&csv).unwrap();
    assert_eq!(back.rows, ds.rows);
    assert_eq!(back.columns, ds.columns);
    for (a, b) in back.x.rows().zip(ds.x.rows()) {
        for (x, y) in a.iter().zip(b) {
            assert!(x == y || (x.is_nan() && y.is_nan()));
        }
    }

    let bin = dir.path().join("f.nbmf");
    write_dataset(&bin, &ds).unwrap();
    let back = read_dataset(&bin).unwrap();
    assert_eq!(back.rows, ds.rows);
    for (a, b) in back.x.rows().zip(ds.x.rows()) {
        for (x, y) in a.iter().zip(b) {
            assert!(*x == f64::from(*y as f32) || (x.is_nan() && y.is_nan()));
        }
    }
    let bytes = std::fs::read(&bin).unwrap();
    assert_eq!(&bytes[..8], b"NBMFEAT1");
    std::fs::write(&bin, &bytes[..bytes.len() - 3]).unwrap();
    assert!(read_dataset(&bin).is_err());
}

#[test]
fn missing_claims_are_an_error() {
    let fx = fixture();
    let idx = ClaimIndex::build(&fx.claims);
    let embedder = HashedTokenEmbedder { dimension: 4 };
    let ctx = FeatureContext::new(&idx, &fx.grid, &fx.stats, &fx.counts, &fx.evidence, MethodologySource::Text { texts: &fx.texts, embedder: &embedder });
    let stray = LabeledObservation::new(ObservationKey::new(99, fx.counts[0].cell, Technology::Fiber), "NE", LabelSource::ChangeRemoved);
    assert!(matches!(ctx.labeled(&[stray]), Err(FeatureError::EmptyClaimSet { provider_id: 99, .. })));
}

proptest! {
    #[test]
    fn vectors_are_well_formed(
        speeds in prop::collection::vec((0u32..2000, 0u32..500, any::<bool>(), 0u64..6), 1..12),
        bsl in 1u32..8,
        devices in prop::option::of(0u64..40),
        mlab in prop::option::of(0u64..40),
        state in prop::sample::select(nbm_core::ingest::STATE_CODES.to_vec()),
        dim in 0usize..20,
        text in "[a-z ]{0,40}",
    ) {
        let key = ObservationKey::new(1, CellId(7), Technology::Fiber);
        let claims: Vec<AvailabilityClaim> = speeds
            .iter()
            .map(|&(d, u, ll, loc)| AvailabilityClaim {
                provider_id: 1,
                brand: String::new(),
                technology: Technology::Fiber,
                max_down_mbps: f64::from(d),
                max_up_mbps: f64::from(u),
                low_latency: ll,
                location_id: loc,
                cell: CellId(7),
                state: state.to_string(),
                category: Category::Both,
            })
            .collect();
        let inputs = CellInputs { centroid: GeoPoint::new(40.0, -90.0).unwrap(), state: state.to_string(), bsl_count: bsl, ookla_devices: devices, mlab_test_count: mlab };
        let emb = HashedTokenEmbedder { dimension: dim }.embed(&text);
        let row = vectorize(key, &claims, &inputs, emb).unwrap().to_row();
        prop_assert_eq!(row.len(), 8 + 56 + dim);
        prop_assert_eq!(row[col::STATE_START..col::EMBEDDING_START].iter().sum::<f64>(), 1.0);
        prop_assert!((0.0..=1.0).contains(&row[col::CLAIM_PCT]));

        // Speed pairing oracle: sort by (down, up) and take the last.
        let mut sorted: Vec<(u32, u32)> = speeds.iter().map(|s| (s.0, s.1)).collect();
        sorted.sort();
        let (d, u) = *sorted.last().unwrap();
        prop_assert_eq!((row[col::MAX_DOWN], row[col::MAX_UP]), (f64::from(d), f64::from(u)));
        prop_assert_eq!(row[col::LOW_LATENCY] == 1.0, speeds.iter().any(|s| s.2));
        prop_assert_eq!(row[col::OOKLA_DEV_PER_LOC].is_nan(), devices.is_none());
        prop_assert_eq!(row[col::MLAB_TEST_COUNT].is_nan(), mlab.is_none());
        for v in &row[..col::OOKLA_DEV_PER_LOC] {
            prop_assert!(v.is_finite());
        }
        let norm: f64 = row[col::EMBEDDING_START..].iter().map(|x| x * x).sum();
        prop_assert!(norm == 0.0 || (norm - 1.0).abs() < 1e-12);
    }
}
