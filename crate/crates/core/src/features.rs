//! Observation vectors: claimed speeds, location, claim share, crowdsourced
//! test density, attributed test counts, a one-hot state block and an
//! embedding of the provider's methodology statement.
//!
//! Absent test statistics are `NaN`, which the learner routes through its
//! learned default direction instead of treating as zero.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use nbm_gbdt::DenseMatrix;

use crate::attribution::{CellTestStats, ProviderCellEvidence};
use crate::claims::{ClaimIndex, ObservationKey};
use crate::geo::{CellId, GeoError, GeoPoint, HexGrid};
use crate::ingest::{
    open_input, open_output, state_index, AvailabilityClaim, HexLocationCount, IngestError, MethodologyKey, Technology,
    STATE_CODES,
};
use crate::labeling::{Label, LabelSource, LabeledObservation};

pub const DEFAULT_EMBEDDING_DIM: usize = 384;
pub const NORM_TOLERANCE: f64 = 1e-6;

pub const SCALAR_FEATURES: [&str; 8] = [
    "max_down_mbps",
    "max_up_mbps",
    "low_latency",
    "centroid_lat",
    "centroid_lon",
    "claim_pct",
    "ookla_dev_per_loc",
    "mlab_test_count",
];

/// Indices into a feature row.
pub mod col {
    pub const MAX_DOWN: usize = 0;
    pub const MAX_UP: usize = 1;
    pub const LOW_LATENCY: usize = 2;
    pub const CLAIM_PCT: usize = 5;
    pub const OOKLA_DEV_PER_LOC: usize = 6;
    pub const MLAB_TEST_COUNT: usize = 7;
    pub const STATE_START: usize = 8;
    pub const EMBEDDING_START: usize = 8 + 56;
}

#[derive(Debug, thiserror::Error)]
pub enum FeatureError {
    #[error("no claims for provider {provider_id}, cell {cell}, technology {technology}")]
    EmptyClaimSet { provider_id: u64, cell: CellId, technology: Technology },
    #[error("no location count for cell {0}")]
    MissingBslCount(CellId),
    #[error("unknown state code {0:?}")]
    UnknownState(String),
    #[error("{path}:{line}: embedding has {found} values, expected {expected}")]
    DimensionMismatch { path: PathBuf, line: u64, expected: usize, found: usize },
    #[error("{path}:{line}: embedding norm {norm} is not 1")]
    NotNormalized { path: PathBuf, line: u64, norm: f64 },
    #[error("{path}:{line}: duplicate embedding for provider {provider_id}")]
    DuplicateEmbedding { path: PathBuf, line: u64, provider_id: u64 },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Geo(#[from] GeoError),
}

pub fn column_names(embedding_dim: usize) -> Vec<String> {
    SCALAR_FEATURES
        .iter()
        .map(|s| s.to_string())
        .chain(STATE_CODES.iter().map(|s| format!("state_{s}")))
        .chain((0..embedding_dim).map(|i| format!("emb_{i}")))
        .collect()
}

pub trait TextEmbedder: Send + Sync {
    fn dimension(&self) -> usize;
    fn embed(&self, text: &str) -> Vec<f64>;
}

/// Signed feature hashing of lowercase alphanumeric tokens, L2-normalized.
/// Text without tokens maps to the zero vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashedTokenEmbedder {
    pub dimension: usize,
}

impl Default for HashedTokenEmbedder {
    fn default() -> Self {
        Self { dimension: DEFAULT_EMBEDDING_DIM }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

impl TextEmbedder for HashedTokenEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dimension];
        if self.dimension == 0 {
            return v;
        }
        let lower = text.to_lowercase();
        for token in lower.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()) {
            let h = fnv1a(token.as_bytes());
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            v[(h % self.dimension as u64) as usize] += sign;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Externally computed vectors keyed by provider and technology (blank
/// technology for the provider-wide statement).
#[derive(Debug, Clone, PartialEq)]
pub struct PrecomputedEmbeddings {
    pub dimension: usize,
    pub vectors: BTreeMap<MethodologyKey, Vec<f64>>,
}

impl PrecomputedEmbeddings {
    /// CSV header `provider_id,technology,v0..v{D-1}`; every row must have
    /// `dimension` values of unit norm.
    pub fn load(path: &Path, dimension: usize) -> Result<Self, FeatureError> {
        let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).flexible(true).from_reader(open_input(path)?);
        let csv_err = |source| IngestError::Csv { path: path.to_path_buf(), source };
        let mut vectors = BTreeMap::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            let line = i as u64 + 2;
            let malformed = |message: String| IngestError::MalformedRow { path: path.to_path_buf(), line, message };
            let provider_id: u64 =
                rec.get(0).unwrap_or("").parse().map_err(|_| malformed("invalid provider_id".into()))?;
            let technology = match rec.get(1).unwrap_or("") {
                "" => None,
                code => Some(
                    code.parse::<u16>()
                        .ok()
                        .and_then(Technology::from_code)
                        .ok_or_else(|| IngestError::UnknownTechnologyCode { path: path.to_path_buf(), line, code: code.into() })?,
                ),
            };
            let values = rec
                .iter()
                .skip(2)
                .map(|v| v.parse::<f64>().map_err(|_| malformed(format!("invalid embedding value {v:?}"))))
                .collect::<Result<Vec<f64>, _>>()?;
            if values.len() != dimension {
                return Err(FeatureError::DimensionMismatch { path: path.to_path_buf(), line, expected: dimension, found: values.len() });
            }
            let norm = values.iter().map(|x| x * x).sum::<f64>().sqrt();
            if !((norm - 1.0).abs() <= NORM_TOLERANCE) {
                return Err(FeatureError::NotNormalized { path: path.to_path_buf(), line, norm });
            }
            if vectors.insert((provider_id, technology), values).is_some() {
                return Err(FeatureError::DuplicateEmbedding { path: path.to_path_buf(), line, provider_id });
            }
        }
        Ok(Self { dimension, vectors })
    }

    pub fn write(&self, path: &Path) -> Result<(), IngestError> {
        let csv_err = |source| IngestError::Csv { path: path.to_path_buf(), source };
        let io_err = |source| IngestError::Io { path: path.to_path_buf(), source };
        let mut w = csv::Writer::from_writer(open_output(path)?);
        let mut header = vec!["provider_id".to_string(), "technology".to_string()];
        header.extend((0..self.dimension).map(|i| format!("v{i}")));
        w.write_record(&header).map_err(csv_err)?;
        for ((p, t), v) in &self.vectors {
            let mut row = vec![p.to_string(), t.map(|t| t.to_string()).unwrap_or_default()];
            row.extend(v.iter().map(f64::to_string));
            w.write_record(&row).map_err(csv_err)?;
        }
        w.into_inner().map_err(|e| io_err(e.into_error()))?.finish().map_err(io_err)
    }
}

/// Where methodology vectors come from. Lookups try the (provider,
/// technology) statement, then the provider-wide one, then fall back to the
/// zero vector.
pub enum MethodologySource<'a> {
    Text { texts: &'a BTreeMap<MethodologyKey, String>, embedder: &'a dyn TextEmbedder },
    Precomputed(&'a PrecomputedEmbeddings),
}

impl MethodologySource<'_> {
    pub fn dimension(&self) -> usize {
        match self {
            MethodologySource::Text { embedder, .. } => embedder.dimension(),
            MethodologySource::Precomputed(p) => p.dimension,
        }
    }

    fn lookup(&self, provider_id: u64, technology: Technology) -> Vec<f64> {
        let keys = [(provider_id, Some(technology)), (provider_id, None)];
        match self {
            MethodologySource::Text { texts, embedder } => keys
                .iter()
                .find_map(|k| texts.get(k))
                .map(|t| embedder.embed(t))
                .unwrap_or_else(|| vec![0.0; embedder.dimension()]),
            MethodologySource::Precomputed(p) => {
                keys.iter().find_map(|k| p.vectors.get(k)).cloned().unwrap_or_else(|| vec![0.0; p.dimension])
            }
        }
    }
}

/// Everything about a cell that feeds a vector besides the claims.
#[derive(Debug, Clone, PartialEq)]
pub struct CellInputs {
    pub centroid: GeoPoint,
    pub state: String,
    pub bsl_count: u32,
    pub ookla_devices: Option<u64>,
    /// `None` when the provider has no attributed tests anywhere.
    pub mlab_test_count: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub max_down_mbps: f64,
    pub max_up_mbps: f64,
    pub low_latency: bool,
    pub state_index: usize,
    pub centroid_lat: f64,
    pub centroid_lon: f64,
    pub claim_pct: f64,
    pub ookla_dev_per_loc: Option<f64>,
    pub mlab_test_count: Option<u64>,
    pub methodology_embedding: Vec<f64>,
}

impl FeatureVector {
    pub fn to_row(&self) -> Vec<f64> {
        let mut row = vec![
            self.max_down_mbps,
            self.max_up_mbps,
            f64::from(u8::from(self.low_latency)),
            self.centroid_lat,
            self.centroid_lon,
            self.claim_pct,
            self.ookla_dev_per_loc.unwrap_or(f64::NAN),
            self.mlab_test_count.map_or(f64::NAN, |c| c as f64),
        ];
        let mut states = [0.0; 56];
        states[self.state_index] = 1.0;
        row.extend(states);
        row.extend(&self.methodology_embedding);
        row
    }
}

/// Fastest advertised download, with the upload advertised alongside it
/// (the larger one when several claims tie on download).
pub fn paired_speeds(claims: &[AvailabilityClaim]) -> Option<(f64, f64)> {
    claims.iter().map(|c| (c.max_down_mbps, c.max_up_mbps)).reduce(|best, cur| {
        match cur.0.total_cmp(&best.0).then(cur.1.total_cmp(&best.1)) {
            std::cmp::Ordering::Greater => cur,
            _ => best,
        }
    })
}

pub fn vectorize(
    key: ObservationKey,
    claims: &[AvailabilityClaim],
    cell: &CellInputs,
    embedding: Vec<f64>,
) -> Result<FeatureVector, FeatureError> {
    let (max_down_mbps, max_up_mbps) = paired_speeds(claims).ok_or(FeatureError::EmptyClaimSet {
        provider_id: key.provider_id,
        cell: key.cell,
        technology: key.technology,
    })?;
    if cell.bsl_count == 0 {
        return Err(FeatureError::MissingBslCount(key.cell));
    }
    let locations: BTreeSet<u64> = claims.iter().map(|c| c.location_id).collect();
    let bsl = f64::from(cell.bsl_count);
    Ok(FeatureVector {
        max_down_mbps,
        max_up_mbps,
        low_latency: claims.iter().any(|c| c.low_latency),
        state_index: state_index(&cell.state).ok_or_else(|| FeatureError::UnknownState(cell.state.clone()))?,
        centroid_lat: cell.centroid.lat,
        centroid_lon: cell.centroid.lon,
        claim_pct: (locations.len() as f64 / bsl).clamp(0.0, 1.0),
        ookla_dev_per_loc: cell.ookla_devices.map(|d| d as f64 / bsl),
        mlab_test_count: cell.mlab_test_count,
        methodology_embedding: embedding,
    })
}

/// Row metadata carried alongside the matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct RowMeta {
    pub key: ObservationKey,
    pub state: String,
    pub label: Option<Label>,
    pub source: Option<LabelSource>,
    pub fcc_adjudicated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDataset {
    pub columns: Vec<String>,
    pub rows: Vec<RowMeta>,
    pub x: DenseMatrix,
}

impl FeatureDataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn embedding_dim(&self) -> usize {
        self.columns.len() - col::EMBEDDING_START
    }

    /// 1.0 for Unserved rows; unlabeled rows count as Served.
    pub fn targets(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.label.map_or(0.0, Label::target)).collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            columns: self.columns.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            x: self.x.select_rows(indices),
        }
    }
}

/// Read-only lookups shared by every observation.
pub struct FeatureContext<'a> {
    claims: &'a ClaimIndex,
    grid: &'a dyn HexGrid,
    methodology: MethodologySource<'a>,
    devices: BTreeMap<CellId, u64>,
    counts: BTreeMap<CellId, u32>,
    evidence: BTreeMap<(u64, CellId), u64>,
    providers_with_evidence: BTreeSet<u64>,
    cache: Mutex<HashMap<(u64, Technology), Vec<f64>>>,
}

impl<'a> FeatureContext<'a> {
    pub fn new(
        claims: &'a ClaimIndex,
        grid: &'a dyn HexGrid,
        stats: &[CellTestStats],
        counts: &[HexLocationCount],
        evidence: &[ProviderCellEvidence],
        methodology: MethodologySource<'a>,
    ) -> Self {
        Self {
            claims,
            grid,
            methodology,
            devices: stats.iter().map(|s| (s.cell, s.ookla_devices)).collect(),
            counts: counts.iter().map(|c| (c.cell, c.bsl_count)).collect(),
            evidence: evidence.iter().map(|e| ((e.provider_id, e.cell), e.mlab_test_count)).collect(),
            providers_with_evidence: evidence.iter().map(|e| e.provider_id).collect(),
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn embedding_dim(&self) -> usize {
        self.methodology.dimension()
    }

    fn embedding(&self, provider_id: u64, technology: Technology) -> Vec<f64> {
        let mut cache = self.cache.lock().expect("embedding cache poisoned");
        cache.entry((provider_id, technology)).or_insert_with(|| self.methodology.lookup(provider_id, technology)).clone()
    }

    pub fn vector(&self, key: ObservationKey, state: &str) -> Result<FeatureVector, FeatureError> {
        let group = self.claims.group(&key).ok_or(FeatureError::EmptyClaimSet {
            provider_id: key.provider_id,
            cell: key.cell,
            technology: key.technology,
        })?;
        let inputs = CellInputs {
            centroid: self.grid.cell_centroid(key.cell)?,
            state: state.to_string(),
            bsl_count: *self.counts.get(&key.cell).ok_or(FeatureError::MissingBslCount(key.cell))?,
            ookla_devices: self.devices.get(&key.cell).copied(),
            mlab_test_count: self
                .providers_with_evidence
                .contains(&key.provider_id)
                .then(|| self.evidence.get(&(key.provider_id, key.cell)).copied().unwrap_or(0)),
        };
        vectorize(key, &group.claims, &inputs, self.embedding(key.provider_id, key.technology))
    }

    fn dataset(&self, rows: Vec<RowMeta>) -> Result<FeatureDataset, FeatureError> {
        let columns = column_names(self.embedding_dim());
        let mut data = Vec::with_capacity(rows.len() * columns.len());
        for r in &rows {
            data.extend(self.vector(r.key, &r.state)?.to_row());
        }
        let x = DenseMatrix::new(rows.len(), columns.len(), data).expect("row width fixed by column list");
        Ok(FeatureDataset { columns, rows, x })
    }

    pub fn labeled(&self, observations: &[LabeledObservation]) -> Result<FeatureDataset, FeatureError> {
        self.dataset(
            observations
                .iter()
                .map(|o| RowMeta {
                    key: o.key(),
                    state: o.state.clone(),
                    label: Some(o.label),
                    source: Some(o.source),
                    fcc_adjudicated: o.fcc_adjudicated,
                })
                .collect(),
        )
    }

    /// Every terrestrial claim group, unlabeled, for scoring.
    pub fn all_claims(&self) -> Result<FeatureDataset, FeatureError> {
        self.dataset(
            self.claims
                .groups()
                .map(|(k, g)| RowMeta { key: *k, state: g.state.clone(), label: None, source: None, fcc_adjudicated: false })
                .collect(),
        )
    }
}

const META_COLUMNS: [&str; 7] = ["provider_id", "cell", "technology", "state", "label", "source", "fcc_adjudicated"];
const BINARY_MAGIC: &[u8; 8] = b"NBMFEAT1";

fn label_str(l: Option<Label>) -> &'static str {
    match l {
        Some(Label::Served) => "Served",
        Some(Label::Unserved) => "Unserved",
        None => "",
    }
}

fn parse_label(s: &str) -> Result<Option<Label>, String> {
    match s {
        "" => Ok(None),
        "Served" => Ok(Some(Label::Served)),
        "Unserved" => Ok(Some(Label::Unserved)),
        _ => Err(format!("invalid label {s:?}")),
    }
}

fn parse_source(s: &str) -> Result<Option<LabelSource>, String> {
    if s.is_empty() {
        return Ok(None);
    }
    LabelSource::ALL.into_iter().find(|l| l.to_string() == s).map(Some).ok_or_else(|| format!("invalid source {s:?}"))
}

/// `.nbmf` paths use the binary table, anything else CSV.
pub fn write_dataset(path: &Path, ds: &FeatureDataset) -> Result<(), IngestError> {
    if is_binary(path) {
        return write_binary(path, ds);
    }
    let csv_err = |source| IngestError::Csv { path: path.to_path_buf(), source };
    let io_err = |source| IngestError::Io { path: path.to_path_buf(), source };
    let mut w = csv::Writer::from_writer(open_output(path)?);
    let header: Vec<&str> = META_COLUMNS.iter().copied().chain(ds.columns.iter().map(String::as_str)).collect();
    w.write_record(&header).map_err(csv_err)?;
    for (meta, row) in ds.rows.iter().zip(ds.x.rows()) {
        let mut rec = vec![
            meta.key.provider_id.to_string(),
            meta.key.cell.to_string(),
            meta.key.technology.to_string(),
            meta.state.clone(),
            label_str(meta.label).to_string(),
            meta.source.map(|s| s.to_string()).unwrap_or_default(),
            u8::from(meta.fcc_adjudicated).to_string(),
        ];
        rec.extend(row.iter().map(|v| if v.is_nan() { String::new() } else { v.to_string() }));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| io_err(e.into_error()))?.finish().map_err(io_err)
}

pub fn read_dataset(path: &Path) -> Result<FeatureDataset, FeatureError> {
    if is_binary(path) {
        return read_binary(path);
    }
    let mut r = csv::ReaderBuilder::new().from_reader(open_input(path)?);
    let csv_err = |source| IngestError::Csv { path: path.to_path_buf(), source };
    let header = r.headers().map_err(csv_err)?.clone();
    let format = |message: String| FeatureError::Format { path: path.to_path_buf(), message };
    if header.len() < META_COLUMNS.len() + col::EMBEDDING_START
        || header.iter().zip(META_COLUMNS).any(|(h, m)| h != m)
    {
        return Err(format("not a feature table header".into()));
    }
    let columns: Vec<String> = header.iter().skip(META_COLUMNS.len()).map(str::to_string).collect();
    if columns[..col::EMBEDDING_START] != column_names(0)[..] {
        return Err(format("unexpected feature columns".into()));
    }
    let mut rows = Vec::new();
    let mut data = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let line = i as u64 + 2;
        let bad = |message: String| FeatureError::Ingest(IngestError::MalformedRow { path: path.to_path_buf(), line, message });
        if rec.len() != header.len() {
            return Err(bad(format!("expected {} fields, found {}", header.len(), rec.len())));
        }
        let technology = rec[2]
            .parse::<u16>()
            .ok()
            .and_then(Technology::from_code)
            .ok_or_else(|| bad(format!("invalid technology {:?}", &rec[2])))?;
        rows.push(RowMeta {
            key: ObservationKey::new(
                rec[0].parse().map_err(|_| bad("invalid provider_id".into()))?,
                rec[1].parse().map_err(|_| bad("invalid cell".into()))?,
                technology,
            ),
            state: rec[3].to_string(),
            label: parse_label(&rec[4]).map_err(bad)?,
            source: parse_source(&rec[5]).map_err(bad)?,
            fcc_adjudicated: &rec[6] == "1",
        });
        for v in rec.iter().skip(META_COLUMNS.len()) {
            data.push(if v.is_empty() { f64::NAN } else { v.parse().map_err(|_| bad(format!("invalid value {v:?}")))? });
        }
    }
    let x = DenseMatrix::new(rows.len(), columns.len(), data).map_err(|e| format(e.to_string()))?;
    Ok(FeatureDataset { columns, rows, x })
}

fn is_binary(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "nbmf")
}

/// Magic, u32 column count, u64 row count, column names (u32 length +
/// UTF-8), then per row: provider u64, cell u64, technology u16, state u8
/// index, label u8 (0 none, 1 served, 2 unserved), source u8 (0 none, else
/// 1 + ordinal), adjudicated u8, and the values as f32. All little-endian.
fn write_binary(path: &Path, ds: &FeatureDataset) -> Result<(), IngestError> {
    let io_err = |source| IngestError::Io { path: path.to_path_buf(), source };
    let mut buf = Vec::new();
    buf.extend_from_slice(BINARY_MAGIC);
    buf.extend((ds.columns.len() as u32).to_le_bytes());
    buf.extend((ds.rows.len() as u64).to_le_bytes());
    for c in &ds.columns {
        buf.extend((c.len() as u32).to_le_bytes());
        buf.extend(c.as_bytes());
    }
    for (meta, row) in ds.rows.iter().zip(ds.x.rows()) {
        buf.extend(meta.key.provider_id.to_le_bytes());
        buf.extend(meta.key.cell.0.to_le_bytes());
        buf.extend(meta.key.technology.code().to_le_bytes());
        buf.push(state_index(&meta.state).map_or(u8::MAX, |i| i as u8));
        buf.push(match meta.label {
            None => 0,
            Some(Label::Served) => 1,
            Some(Label::Unserved) => 2,
        });
        buf.push(meta.source.map_or(0, |s| 1 + LabelSource::ALL.iter().position(|&x| x == s).expect("listed") as u8));
        buf.push(u8::from(meta.fcc_adjudicated));
        for &v in row {
            buf.extend((v as f32).to_le_bytes());
        }
    }
    let mut out = open_output(path)?;
    out.write_all(&buf).map_err(io_err)?;
    out.finish().map_err(io_err)
}

fn read_binary(path: &Path) -> Result<FeatureDataset, FeatureError> {
    let format = |message: &str| FeatureError::Format { path: path.to_path_buf(), message: message.to_string() };
    let mut bytes = Vec::new();
    open_input(path)?
        .read_to_end(&mut bytes)
        .map_err(|source| IngestError::Io { path: path.to_path_buf(), source })?;
    let mut cur = bytes.as_slice();
    let mut take = |n: usize| -> Result<&[u8], FeatureError> {
        if cur.len() < n {
            return Err(format("truncated feature table"));
        }
        let (head, tail) = cur.split_at(n);
        cur = tail;
        Ok(head)
    };
    if take(8)? != BINARY_MAGIC {
        return Err(format("bad magic"));
    }
    let n_cols = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
    let n_rows = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes")) as usize;
    let mut columns = Vec::with_capacity(n_cols);
    for _ in 0..n_cols {
        let len = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
        columns.push(String::from_utf8(take(len)?.to_vec()).map_err(|_| format("column name is not UTF-8"))?);
    }
    let mut rows = Vec::with_capacity(n_rows);
    let mut data = Vec::with_capacity(n_rows * n_cols);
    for _ in 0..n_rows {
        let provider = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes"));
        let cell = CellId(u64::from_le_bytes(take(8)?.try_into().expect("8 bytes")));
        let technology = Technology::from_code(u16::from_le_bytes(take(2)?.try_into().expect("2 bytes")))
            .ok_or_else(|| format("invalid technology code"))?;
        let flags = take(4)?;
        let state = STATE_CODES.get(flags[0] as usize).copied().unwrap_or_default().to_string();
        let label = match flags[1] {
            0 => None,
            1 => Some(Label::Served),
            2 => Some(Label::Unserved),
            _ => return Err(format("invalid label byte")),
        };
        let source = match flags[2] {
            0 => None,
            s => Some(*LabelSource::ALL.get(s as usize - 1).ok_or_else(|| format("invalid source byte"))?),
        };
        rows.push(RowMeta { key: ObservationKey::new(provider, cell, technology), state, label, source, fcc_adjudicated: flags[3] == 1 });
        for _ in 0..n_cols {
            data.push(f64::from(f32::from_le_bytes(take(4)?.try_into().expect("4 bytes"))));
        }
    }
    if !cur.is_empty() {
        return Err(format("trailing bytes after feature table"));
    }
    let x = DenseMatrix::new(n_rows, n_cols, data).map_err(|e| format(&e.to_string()))?;
    Ok(FeatureDataset { columns, rows, x })
}
