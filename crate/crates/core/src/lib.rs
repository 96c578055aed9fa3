//! Core of the availability-claim audit: spatial indexing, dataset ingest,
//! snapshot diffs, provider/ASN matching, speed-test attribution, labeling,
//! feature construction, evaluation and a synthetic ground-truth generator.

pub mod geo;
pub mod attribution;
pub mod claims;
pub mod diff;
pub mod entity_match;
pub mod evalharness;
pub mod features;
pub mod ingest;
pub mod labeling;
pub mod pipeline;
pub mod synthworld;
