use std::collections::{BTreeMap, HashSet};
use std::io::BufRead;
use std::marker::PhantomData;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, Utc};
use csv::StringRecord;
use serde::de::DeserializeOwned;
use serde::Deserialize;

use super::io::open_input;
use super::types::*;
use super::{IngestError, Result};
use crate::geo::{quadkey_to_tile, CellId, GeoPoint};

/// One CSV data row with its columns resolved by name.
pub(crate) struct Row<'a> {
    path: &'a Path,
    line: u64,
    record: &'a StringRecord,
    columns: &'a [usize],
    names: &'a [&'static str],
}

impl Row<'_> {
    /// Raw field; text columns keep their surrounding whitespace.
    fn raw(&self, i: usize) -> &str {
        self.record.get(self.columns[i]).unwrap_or("")
    }

    fn str(&self, i: usize) -> &str {
        self.raw(i).trim()
    }

    fn malformed(&self, message: String) -> IngestError {
        IngestError::MalformedRow { path: self.path.to_path_buf(), line: self.line, message }
    }

    fn parse<T: FromStr>(&self, i: usize) -> Result<T> {
        let v = self.str(i);
        v.parse().map_err(|_| self.malformed(format!("column {}: invalid value {v:?}", self.names[i])))
    }

    fn non_negative(&self, i: usize) -> Result<f64> {
        let v: f64 = self.parse(i)?;
        if v.is_finite() && v >= 0.0 {
            Ok(v)
        } else {
            Err(self.malformed(format!("column {}: expected a finite value >= 0, got {v}", self.names[i])))
        }
    }

    fn finite(&self, i: usize) -> Result<f64> {
        let v: f64 = self.parse(i)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(self.malformed(format!("column {}: expected a finite value, got {v}", self.names[i])))
        }
    }

    fn flag(&self, i: usize) -> Result<bool> {
        match self.str(i).to_ascii_lowercase().as_str() {
            "1" | "true" | "t" | "y" | "yes" => Ok(true),
            "0" | "false" | "f" | "n" | "no" => Ok(false),
            v => Err(self.malformed(format!("column {}: expected a boolean, got {v:?}", self.names[i]))),
        }
    }

    fn cell(&self, i: usize) -> Result<CellId> {
        let v = self.str(i);
        v.parse().map_err(|_| self.malformed(format!("column {}: invalid cell id {v:?}", self.names[i])))
    }

    fn date(&self, i: usize) -> Result<NaiveDate> {
        let v = self.str(i);
        NaiveDate::parse_from_str(v, "%Y-%m-%d")
            .map_err(|_| self.malformed(format!("column {}: expected YYYY-MM-DD, got {v:?}", self.names[i])))
    }

    fn technology(&self, i: usize) -> Result<Technology> {
        let v = self.str(i);
        v.parse::<u16>()
            .ok()
            .and_then(Technology::from_code)
            .ok_or_else(|| IngestError::UnknownTechnologyCode { path: self.path.to_path_buf(), line: self.line, code: v.to_string() })
    }

    fn timestamp(&self, i: usize) -> Result<DateTime<Utc>> {
        parse_timestamp(self.str(i)).map_err(|m| self.malformed(format!("column {}: {m}", self.names[i])))
    }
}

fn parse_timestamp(v: &str) -> std::result::Result<DateTime<Utc>, String> {
    DateTime::parse_from_rfc3339(v).map(|t| t.with_timezone(&Utc)).map_err(|_| format!("expected an RFC 3339 timestamp, got {v:?}"))
}

type RowParser<T> = fn(&Row<'_>) -> Result<Option<T>>;

/// Streaming typed CSV reader. Rows the parser declines (returns `None`) are
/// counted in [`Records::rejected`].
pub struct Records<T> {
    path: PathBuf,
    reader: csv::Reader<Box<dyn BufRead>>,
    columns: Vec<usize>,
    names: &'static [&'static str],
    record: StringRecord,
    parse: RowParser<T>,
    rejected: usize,
}

impl<T> Records<T> {
    fn open(path: &Path, names: &'static [&'static str], parse: RowParser<T>) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::Headers)
            .flexible(true)
            .from_reader(open_input(path)?);
        let header = reader.headers().map_err(|source| IngestError::Csv { path: path.to_path_buf(), source })?.clone();
        let columns = names
            .iter()
            .map(|&name| {
                header
                    .iter()
                    .position(|h| h.eq_ignore_ascii_case(name))
                    .ok_or(IngestError::MissingColumn { path: path.to_path_buf(), column: name })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { path: path.to_path_buf(), reader, columns, names, record: StringRecord::new(), parse, rejected: 0 })
    }

    pub fn rejected(&self) -> usize {
        self.rejected
    }
}

impl<T> Iterator for Records<T> {
    type Item = Result<T>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            match self.reader.read_record(&mut self.record) {
                Ok(false) => return None,
                Ok(true) => {}
                Err(source) => return Some(Err(IngestError::Csv { path: self.path.clone(), source })),
            }
            let line = self.record.position().map_or(0, |p| p.line());
            if self.record.len() < self.columns.iter().max().map_or(0, |m| m + 1) {
                return Some(Err(IngestError::MalformedRow {
                    path: self.path.clone(),
                    line,
                    message: format!("expected at least {} fields, found {}", self.columns.len(), self.record.len()),
                }));
            }
            let row = Row { path: &self.path, line, record: &self.record, columns: &self.columns, names: self.names };
            match (self.parse)(&row) {
                Ok(Some(v)) => return Some(Ok(v)),
                Ok(None) => self.rejected += 1,
                Err(e) => return Some(Err(e)),
            }
        }
    }
}

/// Streaming NDJSON reader; blank lines are skipped.
pub struct JsonLines<T> {
    path: PathBuf,
    input: Box<dyn BufRead>,
    line: u64,
    buf: String,
    _marker: PhantomData<T>,
}

impl<T: DeserializeOwned> JsonLines<T> {
    pub fn open(path: &Path) -> Result<Self> {
        Ok(Self { path: path.to_path_buf(), input: open_input(path)?, line: 0, buf: String::new(), _marker: PhantomData })
    }

    fn from_reader(path: &Path, input: Box<dyn BufRead>) -> Self {
        Self { path: path.to_path_buf(), input, line: 0, buf: String::new(), _marker: PhantomData }
    }
}

impl<T: DeserializeOwned> Iterator for JsonLines<T> {
    type Item = Result<(u64, T)>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.buf.clear();
            match self.input.read_line(&mut self.buf) {
                Ok(0) => return None,
                Ok(_) => self.line += 1,
                Err(source) => return Some(Err(IngestError::Io { path: self.path.clone(), source })),
            }
            let text = self.buf.trim();
            if text.is_empty() {
                continue;
            }
            return Some(serde_json::from_str(text).map(|v| (self.line, v)).map_err(|e| IngestError::MalformedRow {
                path: self.path.clone(),
                line: self.line,
                message: e.to_string(),
            }));
        }
    }
}

// ---- availability filings ----

const CLAIM_COLUMNS: &[&str] = &[
    "provider_id",
    "brand",
    "technology",
    "max_down_mbps",
    "max_up_mbps",
    "low_latency",
    "location_id",
    "cell_hex",
    "state",
    "category",
];

fn claim_row(row: &Row<'_>) -> Result<Option<AvailabilityClaim>> {
    let state = row.str(8).to_ascii_uppercase();
    if state_index(&state).is_none() {
        return Err(row.malformed(format!("unknown state code {:?}", row.str(8))));
    }
    let category = row
        .str(9)
        .parse()
        .map_err(|_| row.malformed(format!("unknown category {:?}", row.str(9))))?;
    let mut claim = AvailabilityClaim {
        provider_id: row.parse(0)?,
        brand: row.raw(1).to_string(),
        technology: row.technology(2)?,
        max_down_mbps: row.non_negative(3)?,
        max_up_mbps: row.non_negative(4)?,
        low_latency: row.flag(5)?,
        location_id: row.parse(6)?,
        cell: row.cell(7)?,
        state,
        category,
    };
    claim.apply_speed_floors();
    Ok(Some(claim))
}

pub fn stream_claims(path: &Path) -> Result<Records<AvailabilityClaim>> {
    Records::open(path, CLAIM_COLUMNS, claim_row)
}

/// Loads a filing, applying the reporting speed floors and rejecting
/// repeated (provider, technology, location) rows.
pub fn parse_snapshot(path: &Path) -> Result<MapSnapshot> {
    let mut seen = HashSet::new();
    let mut claims = Vec::new();
    let mut records = stream_claims(path)?;
    while let Some(claim) = records.next() {
        let claim = claim?;
        if !seen.insert(claim.key()) {
            let line = records.record.position().map_or(0, |p| p.line());
            return Err(IngestError::DuplicateClaim {
                path: path.to_path_buf(),
                line,
                provider_id: claim.provider_id,
                technology: claim.technology,
                location_id: claim.location_id,
            });
        }
        claims.push(claim);
    }
    Ok(MapSnapshot { claims, ..Default::default() })
}

const METHODOLOGY_COLUMNS: &[&str] = &["provider_id", "technology", "text"];

fn methodology_row(row: &Row<'_>) -> Result<Option<(MethodologyKey, String)>> {
    let technology = if row.str(1).is_empty() { None } else { Some(row.technology(1)?) };
    Ok(Some(((row.parse(0)?, technology), row.raw(2).to_string())))
}

/// Methodology statements; a blank technology is the provider-wide text.
pub fn parse_methodology(path: &Path) -> Result<BTreeMap<MethodologyKey, String>> {
    let mut out = BTreeMap::new();
    let mut records = Records::open(path, METHODOLOGY_COLUMNS, methodology_row)?;
    while let Some(r) = records.next() {
        let (key, text) = r?;
        if out.insert(key, text).is_some() {
            return Err(IngestError::MalformedRow {
                path: path.to_path_buf(),
                line: records.record.position().map_or(0, |p| p.line()),
                message: format!("duplicate methodology for provider {} technology {:?}", key.0, key.1.map(|t| t.code())),
            });
        }
    }
    Ok(out)
}

// ---- challenges ----

const CHALLENGE_COLUMNS: &[&str] =
    &["provider_id", "location_id", "cell_hex", "technology", "outcome", "reason", "resolved_date"];

fn challenge_row(row: &Row<'_>) -> Result<Option<ChallengeRecord>> {
    let err = |value: &str, unknown_outcome: bool| {
        let (path, line, value) = (row.path.to_path_buf(), row.line, value.to_string());
        if unknown_outcome {
            IngestError::UnknownOutcome { path, line, value }
        } else {
            IngestError::UnknownReason { path, line, value }
        }
    };
    Ok(Some(ChallengeRecord {
        provider_id: row.parse(0)?,
        location_id: row.parse(1)?,
        cell: row.cell(2)?,
        technology: row.technology(3)?,
        outcome: row.str(4).parse().map_err(|_| err(row.str(4), true))?,
        reason: row.str(5).parse().map_err(|_| err(row.str(5), false))?,
        resolved_date: row.date(6)?,
    }))
}

pub fn stream_challenges(path: &Path) -> Result<Records<ChallengeRecord>> {
    Records::open(path, CHALLENGE_COLUMNS, challenge_row)
}

pub fn parse_challenges(path: &Path) -> Result<Vec<ChallengeRecord>> {
    stream_challenges(path)?.collect()
}

// ---- Ookla open tiles ----

const OOKLA_COLUMNS: &[&str] = &["quadkey", "avg_d_kbps", "avg_u_kbps", "avg_lat_ms", "tests", "devices"];

fn ookla_row(row: &Row<'_>) -> Result<Option<OoklaTile>> {
    let quadkey = row.str(0).to_string();
    quadkey_to_tile(&quadkey).map_err(|e| row.malformed(format!("column quadkey: {e}")))?;
    Ok(Some(OoklaTile {
        quadkey,
        avg_down_kbps: row.non_negative(1)?,
        avg_up_kbps: row.non_negative(2)?,
        avg_latency_ms: row.non_negative(3)?,
        tests: row.parse(4)?,
        devices: row.parse(5)?,
    }))
}

pub fn stream_ookla(path: &Path) -> Result<Records<OoklaTile>> {
    Records::open(path, OOKLA_COLUMNS, ookla_row)
}

pub fn parse_ookla(path: &Path) -> Result<Vec<OoklaTile>> {
    stream_ookla(path)?.collect()
}

// ---- MLab ----

const MLAB_COLUMNS: &[&str] =
    &["timestamp", "asn", "lat", "lon", "accuracy_radius_km", "down_mbps", "up_mbps", "min_rtt_ms"];

fn mlab_row(row: &Row<'_>) -> Result<Option<MlabTest>> {
    if row.str(4).is_empty() {
        return Ok(None);
    }
    let geo = GeoPoint::new(row.finite(2)?, row.finite(3)?).map_err(|e| row.malformed(e.to_string()))?;
    Ok(Some(MlabTest {
        timestamp: row.timestamp(0)?,
        asn: row.parse(1)?,
        geo,
        accuracy_radius_km: row.non_negative(4)?,
        down_mbps: row.non_negative(5)?,
        up_mbps: row.non_negative(6)?,
        min_rtt_ms: row.non_negative(7)?,
    }))
}

#[derive(Deserialize)]
struct MlabJson {
    timestamp: String,
    asn: u32,
    lat: f64,
    lon: f64,
    #[serde(default)]
    accuracy_radius_km: Option<f64>,
    down_mbps: f64,
    up_mbps: f64,
    min_rtt_ms: f64,
}

fn mlab_json(path: &Path, line: u64, j: MlabJson) -> Result<Option<MlabTest>> {
    let malformed = |message: String| IngestError::MalformedRow { path: path.to_path_buf(), line, message };
    let Some(radius) = j.accuracy_radius_km else { return Ok(None) };
    for (name, v) in [("accuracy_radius_km", radius), ("down_mbps", j.down_mbps), ("up_mbps", j.up_mbps), ("min_rtt_ms", j.min_rtt_ms)] {
        if !(v.is_finite() && v >= 0.0) {
            return Err(malformed(format!("{name}: expected a finite value >= 0, got {v}")));
        }
    }
    Ok(Some(MlabTest {
        timestamp: parse_timestamp(&j.timestamp).map_err(malformed)?,
        asn: j.asn,
        geo: GeoPoint::new(j.lat, j.lon).map_err(|e| malformed(e.to_string()))?,
        accuracy_radius_km: radius,
        down_mbps: j.down_mbps,
        up_mbps: j.up_mbps,
        min_rtt_ms: j.min_rtt_ms,
    }))
}

enum MlabSource {
    Csv(Records<MlabTest>),
    Json(JsonLines<MlabJson>),
}

/// MLab rows from CSV or NDJSON (chosen by whether the first non-blank byte
/// is `{`). Rows lacking an accuracy radius are skipped and counted.
pub struct MlabReader {
    path: PathBuf,
    source: MlabSource,
    json_rejected: usize,
}

impl MlabReader {
    pub fn rejected_missing_radius(&self) -> usize {
        match &self.source {
            MlabSource::Csv(r) => r.rejected(),
            MlabSource::Json(_) => self.json_rejected,
        }
    }
}

impl Iterator for MlabReader {
    type Item = Result<MlabTest>;

    fn next(&mut self) -> Option<Self::Item> {
        match &mut self.source {
            MlabSource::Csv(r) => r.next(),
            MlabSource::Json(lines) => loop {
                let (line, j) = match lines.next()? {
                    Ok(v) => v,
                    Err(e) => return Some(Err(e)),
                };
                match mlab_json(&self.path, line, j) {
                    Ok(Some(t)) => return Some(Ok(t)),
                    Ok(None) => self.json_rejected += 1,
                    Err(e) => return Some(Err(e)),
                }
            },
        }
    }
}

pub fn stream_mlab(path: &Path) -> Result<MlabReader> {
    let mut input = open_input(path)?;
    let is_json = loop {
        let buf = input.fill_buf().map_err(|source| IngestError::Io { path: path.to_path_buf(), source })?;
        match buf.iter().position(|b| !b.is_ascii_whitespace()) {
            Some(i) => break buf[i] == b'{',
            None if buf.is_empty() => break false,
            None => {
                let n = buf.len();
                input.consume(n);
            }
        }
    };
    let source = if is_json {
        MlabSource::Json(JsonLines::from_reader(path, input))
    } else {
        MlabSource::Csv(Records::open(path, MLAB_COLUMNS, mlab_row)?)
    };
    Ok(MlabReader { path: path.to_path_buf(), source, json_rejected: 0 })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlabParse {
    pub tests: Vec<MlabTest>,
    pub rejected_missing_radius: usize,
}

pub fn parse_mlab(path: &Path) -> Result<MlabParse> {
    let mut reader = stream_mlab(path)?;
    let tests = reader.by_ref().collect::<Result<Vec<_>>>()?;
    Ok(MlabParse { tests, rejected_missing_radius: reader.rejected_missing_radius() })
}

// ---- registrations ----

const FRN_COLUMNS: &[&str] = &["frn", "provider_id", "company_name", "contact_email", "physical_address"];

fn frn_row(row: &Row<'_>) -> Result<Option<FrnRegistration>> {
    Ok(Some(FrnRegistration {
        frn: row.parse(0)?,
        provider_id: row.parse(1)?,
        company_name: row.raw(2).to_string(),
        contact_email: row.raw(3).to_string(),
        physical_address: row.raw(4).to_string(),
    }))
}

pub fn stream_frn(path: &Path) -> Result<Records<FrnRegistration>> {
    Records::open(path, FRN_COLUMNS, frn_row)
}

pub fn parse_frn(path: &Path) -> Result<Vec<FrnRegistration>> {
    stream_frn(path)?.collect()
}

// ---- WHOIS registry ----

pub fn stream_whois(path: &Path) -> Result<JsonLines<RegistryObject>> {
    JsonLines::open(path)
}

pub fn parse_whois(path: &Path) -> Result<Vec<RegistryObject>> {
    stream_whois(path)?.map(|r| r.map(|(_, o)| o)).collect()
}

// ---- per-cell location counts ----

const HEX_COUNT_COLUMNS: &[&str] = &["cell_hex", "bsl_count"];

fn hex_count_row(row: &Row<'_>) -> Result<Option<HexLocationCount>> {
    let bsl_count: u32 = row.parse(1)?;
    if bsl_count == 0 {
        return Err(row.malformed("column bsl_count: must be >= 1".to_string()));
    }
    Ok(Some(HexLocationCount { cell: row.cell(0)?, bsl_count }))
}

pub fn stream_hex_counts(path: &Path) -> Result<Records<HexLocationCount>> {
    Records::open(path, HEX_COUNT_COLUMNS, hex_count_row)
}

pub fn parse_hex_counts(path: &Path) -> Result<Vec<HexLocationCount>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    let mut records = stream_hex_counts(path)?;
    while let Some(r) = records.next() {
        let h = r?;
        if !seen.insert(h.cell) {
            return Err(IngestError::MalformedRow {
                path: path.to_path_buf(),
                line: records.record.position().map_or(0, |p| p.line()),
                message: format!("duplicate cell {}", h.cell),
            });
        }
        out.push(h);
    }
    Ok(out)
}
