use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use chrono::SecondsFormat;

use super::io::{open_output, Output};
use super::types::*;
use super::{IngestError, Result};

fn csv_writer(path: &Path, header: &[&str]) -> Result<csv::Writer<Output>> {
    let mut w = csv::Writer::from_writer(open_output(path)?);
    w.write_record(header).map_err(|source| IngestError::Csv { path: path.to_path_buf(), source })?;
    Ok(w)
}

fn finish_csv(path: &Path, w: csv::Writer<Output>) -> Result<()> {
    let io_err = |source| IngestError::Io { path: path.to_path_buf(), source };
    w.into_inner().map_err(|e| io_err(e.into_error()))?.finish().map_err(io_err)
}

fn write_rows<T>(path: &Path, header: &[&str], rows: impl IntoIterator<Item = T>, fields: impl Fn(T) -> Vec<String>) -> Result<()> {
    let mut w = csv_writer(path, header)?;
    for row in rows {
        w.write_record(fields(row)).map_err(|source| IngestError::Csv { path: path.to_path_buf(), source })?;
    }
    finish_csv(path, w)
}

pub fn write_claims<'a>(path: &Path, claims: impl IntoIterator<Item = &'a AvailabilityClaim>) -> Result<()> {
    let header = [
        "provider_id", "brand", "technology", "max_down_mbps", "max_up_mbps", "low_latency", "location_id", "cell_hex",
        "state", "category",
    ];
    write_rows(path, &header, claims, |c| {
        vec![
            c.provider_id.to_string(),
            c.brand.clone(),
            c.technology.to_string(),
            c.max_down_mbps.to_string(),
            c.max_up_mbps.to_string(),
            u8::from(c.low_latency).to_string(),
            c.location_id.to_string(),
            c.cell.to_string(),
            c.state.clone(),
            c.category.letter().to_string(),
        ]
    })
}

pub fn write_methodology(path: &Path, texts: &BTreeMap<MethodologyKey, String>) -> Result<()> {
    write_rows(path, &["provider_id", "technology", "text"], texts, |((p, t), text)| {
        vec![p.to_string(), t.map(|t| t.to_string()).unwrap_or_default(), text.clone()]
    })
}

pub fn write_challenges<'a>(path: &Path, records: impl IntoIterator<Item = &'a ChallengeRecord>) -> Result<()> {
    let header = ["provider_id", "location_id", "cell_hex", "technology", "outcome", "reason", "resolved_date"];
    write_rows(path, &header, records, |r| {
        vec![
            r.provider_id.to_string(),
            r.location_id.to_string(),
            r.cell.to_string(),
            r.technology.to_string(),
            r.outcome.label().to_string(),
            r.reason.label().to_string(),
            r.resolved_date.format("%Y-%m-%d").to_string(),
        ]
    })
}

pub fn write_ookla<'a>(path: &Path, tiles: impl IntoIterator<Item = &'a OoklaTile>) -> Result<()> {
    let header = ["quadkey", "avg_d_kbps", "avg_u_kbps", "avg_lat_ms", "tests", "devices"];
    write_rows(path, &header, tiles, |t| {
        vec![
            t.quadkey.clone(),
            t.avg_down_kbps.to_string(),
            t.avg_up_kbps.to_string(),
            t.avg_latency_ms.to_string(),
            t.tests.to_string(),
            t.devices.to_string(),
        ]
    })
}

fn timestamp(t: &MlabTest) -> String {
    t.timestamp.to_rfc3339_opts(SecondsFormat::AutoSi, true)
}

pub fn write_mlab_csv<'a>(path: &Path, tests: impl IntoIterator<Item = &'a MlabTest>) -> Result<()> {
    let header = ["timestamp", "asn", "lat", "lon", "accuracy_radius_km", "down_mbps", "up_mbps", "min_rtt_ms"];
    write_rows(path, &header, tests, |t| {
        vec![
            timestamp(t),
            t.asn.to_string(),
            t.geo.lat.to_string(),
            t.geo.lon.to_string(),
            t.accuracy_radius_km.to_string(),
            t.down_mbps.to_string(),
            t.up_mbps.to_string(),
            t.min_rtt_ms.to_string(),
        ]
    })
}

fn write_lines<T>(path: &Path, items: impl IntoIterator<Item = T>, to_json: impl Fn(T) -> serde_json::Value) -> Result<()> {
    let io_err = |source| IngestError::Io { path: path.to_path_buf(), source };
    let mut out = open_output(path)?;
    for item in items {
        serde_json::to_writer(&mut out, &to_json(item)).map_err(|e| io_err(e.into()))?;
        out.write_all(b"\n").map_err(io_err)?;
    }
    out.finish().map_err(io_err)
}

pub fn write_mlab_ndjson<'a>(path: &Path, tests: impl IntoIterator<Item = &'a MlabTest>) -> Result<()> {
    write_lines(path, tests, |t| {
        serde_json::json!({
            "timestamp": timestamp(t),
            "asn": t.asn,
            "lat": t.geo.lat,
            "lon": t.geo.lon,
            "accuracy_radius_km": t.accuracy_radius_km,
            "down_mbps": t.down_mbps,
            "up_mbps": t.up_mbps,
            "min_rtt_ms": t.min_rtt_ms,
        })
    })
}

pub fn write_frn<'a>(path: &Path, regs: impl IntoIterator<Item = &'a FrnRegistration>) -> Result<()> {
    let header = ["frn", "provider_id", "company_name", "contact_email", "physical_address"];
    write_rows(path, &header, regs, |r| {
        vec![
            r.frn.to_string(),
            r.provider_id.to_string(),
            r.company_name.clone(),
            r.contact_email.clone(),
            r.physical_address.clone(),
        ]
    })
}

pub fn write_whois<'a>(path: &Path, objects: impl IntoIterator<Item = &'a RegistryObject>) -> Result<()> {
    write_lines(path, objects, |o| serde_json::to_value(o).expect("registry objects serialize"))
}

pub fn write_hex_counts<'a>(path: &Path, counts: impl IntoIterator<Item = &'a HexLocationCount>) -> Result<()> {
    write_rows(path, &["cell_hex", "bsl_count"], counts, |h| vec![h.cell.to_string(), h.bsl_count.to_string()])
}
