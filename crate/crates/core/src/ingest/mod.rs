//! Typed readers and writers for every input dataset.
//!
//! All tabular inputs are UTF-8 CSV with a mandatory header; columns are
//! matched by name and extra columns are ignored. MLab rows may also come as
//! NDJSON, and the WHOIS registry dump is NDJSON. Any file may be gzipped;
//! compression is detected from the magic bytes, not the extension. Readers
//! are streaming iterators, and the `parse_*` helpers collect them.

mod io;
mod read;
mod table;
mod types;
mod write;

use std::path::PathBuf;

pub use io::{open_input, open_output, Output};
pub use read::{
    parse_challenges, parse_frn, parse_hex_counts, parse_methodology, parse_mlab, parse_ookla, parse_snapshot,
    parse_whois, stream_challenges, stream_claims, stream_frn, stream_hex_counts, stream_mlab, stream_ookla,
    stream_whois, JsonLines, MlabParse, MlabReader, Records,
};
pub use table::{read_table, write_table};
pub use types::{
    state_index, AvailabilityClaim, Category, ChallengeOutcome, ChallengeReason, ChallengeRecord, ClaimKey,
    FrnRegistration, HexLocationCount, MapSnapshot, MethodologyKey, MlabTest, OoklaTile, RegistryObject, Technology,
    WhoisRecord, STATE_CODES,
};
pub use write::{
    write_challenges, write_claims, write_frn, write_hex_counts, write_methodology, write_mlab_csv, write_mlab_ndjson,
    write_ookla, write_whois,
};

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: missing column {column:?}")]
    MissingColumn { path: PathBuf, column: &'static str },
    #[error("{path}:{line}: malformed row: {message}")]
    MalformedRow { path: PathBuf, line: u64, message: String },
    #[error("{path}:{line}: duplicate claim for provider {provider_id}, technology {technology}, location {location_id}")]
    DuplicateClaim { path: PathBuf, line: u64, provider_id: u64, technology: Technology, location_id: u64 },
    #[error("{path}:{line}: unknown technology code {code:?}")]
    UnknownTechnologyCode { path: PathBuf, line: u64, code: String },
    #[error("{path}:{line}: unknown challenge outcome {value:?}")]
    UnknownOutcome { path: PathBuf, line: u64, value: String },
    #[error("{path}:{line}: unknown challenge reason {value:?}")]
    UnknownReason { path: PathBuf, line: u64, value: String },
}

impl IngestError {
    pub fn path(&self) -> &std::path::Path {
        match self {
            IngestError::Io { path, .. }
            | IngestError::Csv { path, .. }
            | IngestError::MissingColumn { path, .. }
            | IngestError::MalformedRow { path, .. }
            | IngestError::DuplicateClaim { path, .. }
            | IngestError::UnknownTechnologyCode { path, .. }
            | IngestError::UnknownOutcome { path, .. }
            | IngestError::UnknownReason { path, .. } => path,
        }
    }
}

pub type Result<T, E = IngestError> = std::result::Result<T, E>;
