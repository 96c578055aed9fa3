use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};

use crate::geo::{CellId, GeoPoint};

/// The 50 states, DC, Puerto Rico and four territories. Order fixes the
/// one-hot column layout.
pub const STATE_CODES: [&str; 56] = [
    "AK", "AL", "AR", "AS", "AZ", "CA", "CO", "CT", "DC", "DE", "FL", "GA", "GU", "HI", "IA", "ID", "IL", "IN", "KS",
    "KY", "LA", "MA", "MD", "ME", "MI", "MN", "MO", "MP", "MS", "MT", "NC", "ND", "NE", "NH", "NJ", "NM", "NV", "NY",
    "OH", "OK", "OR", "PA", "PR", "RI", "SC", "SD", "TN", "TX", "UT", "VA", "VI", "VT", "WA", "WI", "WV", "WY",
];

pub fn state_index(code: &str) -> Option<usize> {
    STATE_CODES.binary_search(&code).ok()
}

/// Filing technology codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Technology {
    Copper,
    Cable,
    Fiber,
    GsoSatellite,
    NgsoSatellite,
    UnlicensedFixedWireless,
    LicensedFixedWireless,
}

impl Technology {
    pub const ALL: [Technology; 7] = [
        Technology::Copper,
        Technology::Cable,
        Technology::Fiber,
        Technology::GsoSatellite,
        Technology::NgsoSatellite,
        Technology::UnlicensedFixedWireless,
        Technology::LicensedFixedWireless,
    ];

    pub fn code(self) -> u16 {
        match self {
            Technology::Copper => 10,
            Technology::Cable => 40,
            Technology::Fiber => 50,
            Technology::GsoSatellite => 60,
            Technology::NgsoSatellite => 61,
            Technology::UnlicensedFixedWireless => 70,
            Technology::LicensedFixedWireless => 71,
        }
    }

    pub fn from_code(code: u16) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.code() == code)
    }

    pub fn is_satellite(self) -> bool {
        matches!(self, Technology::GsoSatellite | Technology::NgsoSatellite)
    }

    pub fn is_terrestrial(self) -> bool {
        !self.is_satellite()
    }
}

impl fmt::Display for Technology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.code())
    }
}

impl Serialize for Technology {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u16(self.code())
    }
}

impl<'de> Deserialize<'de> for Technology {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let code = u16::deserialize(d)?;
        Technology::from_code(code).ok_or_else(|| serde::de::Error::custom(format!("unknown technology code {code}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Category {
    Residential,
    Business,
    Both,
}

impl Category {
    pub fn letter(self) -> &'static str {
        match self {
            Category::Residential => "R",
            Category::Business => "B",
            Category::Both => "X",
        }
    }
}

impl FromStr for Category {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match normalized(s).as_str() {
            "r" | "residential" => Ok(Category::Residential),
            "b" | "business" => Ok(Category::Business),
            "x" | "both" | "residentialandbusiness" => Ok(Category::Both),
            _ => Err(()),
        }
    }
}

/// Lowercase with everything but letters and digits removed.
pub(crate) fn normalized(s: &str) -> String {
    s.chars().filter(char::is_ascii_alphanumeric).map(|c| c.to_ascii_lowercase()).collect()
}

/// One provider/technology/location service assertion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AvailabilityClaim {
    pub provider_id: u64,
    pub brand: String,
    pub technology: Technology,
    pub max_down_mbps: f64,
    pub max_up_mbps: f64,
    pub low_latency: bool,
    pub location_id: u64,
    pub cell: CellId,
    pub state: String,
    pub category: Category,
}

pub type ClaimKey = (u64, Technology, u64);

impl AvailabilityClaim {
    pub fn key(&self) -> ClaimKey {
        (self.provider_id, self.technology, self.location_id)
    }

    /// Reported speeds below 10 Mbps down or 1 Mbps up are published as 0.
    pub fn apply_speed_floors(&mut self) {
        if self.max_down_mbps < 10.0 {
            self.max_down_mbps = 0.0;
        }
        if self.max_up_mbps < 1.0 {
            self.max_up_mbps = 0.0;
        }
    }
}

/// Methodology text keyed by provider and technology; `None` is the
/// provider-wide statement.
pub type MethodologyKey = (u64, Option<Technology>);

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MapSnapshot {
    pub as_of_date: Option<NaiveDate>,
    pub release_date: Option<NaiveDate>,
    pub claims: Vec<AvailabilityClaim>,
    pub methodology_texts: std::collections::BTreeMap<MethodologyKey, String>,
}

impl MapSnapshot {
    pub fn methodology_for(&self, provider_id: u64, technology: Technology) -> Option<&str> {
        self.methodology_texts
            .get(&(provider_id, Some(technology)))
            .or_else(|| self.methodology_texts.get(&(provider_id, None)))
            .map(String::as_str)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ChallengeOutcome {
    ProviderConceded,
    ServiceChanged,
    FccUpheld,
    ChallengeWithdrawn,
    FccOverturned,
}

impl ChallengeOutcome {
    pub const ALL: [ChallengeOutcome; 5] = [
        ChallengeOutcome::ProviderConceded,
        ChallengeOutcome::ServiceChanged,
        ChallengeOutcome::FccUpheld,
        ChallengeOutcome::ChallengeWithdrawn,
        ChallengeOutcome::FccOverturned,
    ];

    /// The claim was removed or modified.
    pub fn is_success(self) -> bool {
        matches!(self, ChallengeOutcome::ProviderConceded | ChallengeOutcome::ServiceChanged | ChallengeOutcome::FccUpheld)
    }

    /// Resolved by the regulator rather than by agreement.
    pub fn is_adjudicated(self) -> bool {
        matches!(self, ChallengeOutcome::FccUpheld | ChallengeOutcome::FccOverturned)
    }

    pub fn label(self) -> &'static str {
        match self {
            ChallengeOutcome::ProviderConceded => "Provider Conceded",
            ChallengeOutcome::ServiceChanged => "Service Changed",
            ChallengeOutcome::FccUpheld => "FCC Upheld",
            ChallengeOutcome::ChallengeWithdrawn => "Challenge Withdrawn",
            ChallengeOutcome::FccOverturned => "FCC Overturned",
        }
    }
}

impl FromStr for ChallengeOutcome {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        let n = normalized(s);
        Self::ALL.into_iter().find(|o| normalized(o.label()) == n).ok_or(())
    }
}

impl fmt::Display for ChallengeOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ChallengeReason {
    TechnologyUnavailable,
    SpeedUnavailable,
    ServiceRequestDenied,
    NoSignal,
    ExcessConnectionFee,
    NoServiceWithinTenDays,
    ProviderNotReady,
    InstallTimelineMissed,
}

impl ChallengeReason {
    pub const ALL: [ChallengeReason; 8] = [
        ChallengeReason::TechnologyUnavailable,
        ChallengeReason::SpeedUnavailable,
        ChallengeReason::ServiceRequestDenied,
        ChallengeReason::NoSignal,
        ChallengeReason::ExcessConnectionFee,
        ChallengeReason::NoServiceWithinTenDays,
        ChallengeReason::ProviderNotReady,
        ChallengeReason::InstallTimelineMissed,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ChallengeReason::TechnologyUnavailable => "Technology Unavailable",
            ChallengeReason::SpeedUnavailable => "Speed(s) Unavailable",
            ChallengeReason::ServiceRequestDenied => "Service Request Denied",
            ChallengeReason::NoSignal => "No Signal",
            ChallengeReason::ExcessConnectionFee => "Asked Higher than Standard Connection Fee",
            ChallengeReason::NoServiceWithinTenDays => "Failed to Provide Service within 10 Biz-days",
            ChallengeReason::ProviderNotReady => "Provider not Ready (dependency on new equipment)",
            ChallengeReason::InstallTimelineMissed => "Failed to Install Service within Timeline",
        }
    }
}

impl FromStr for ChallengeReason {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        let n = normalized(s);
        Self::ALL.into_iter().find(|r| normalized(r.label()) == n).ok_or(())
    }
}

impl fmt::Display for ChallengeReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChallengeRecord {
    pub provider_id: u64,
    pub location_id: u64,
    pub cell: CellId,
    pub technology: Technology,
    pub outcome: ChallengeOutcome,
    pub reason: ChallengeReason,
    pub resolved_date: NaiveDate,
}

impl ChallengeRecord {
    pub fn is_success(&self) -> bool {
        self.outcome.is_success()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OoklaTile {
    pub quadkey: String,
    pub tests: u64,
    pub devices: u64,
    pub avg_down_kbps: f64,
    pub avg_up_kbps: f64,
    pub avg_latency_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlabTest {
    pub timestamp: DateTime<Utc>,
    pub asn: u32,
    pub geo: GeoPoint,
    pub accuracy_radius_km: f64,
    pub down_mbps: f64,
    pub up_mbps: f64,
    pub min_rtt_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrnRegistration {
    pub frn: u64,
    pub provider_id: u64,
    pub company_name: String,
    pub contact_email: String,
    pub physical_address: String,
}

/// Contacts reachable from one ASN after following registry links.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WhoisRecord {
    pub asn: u32,
    pub org_names: Vec<String>,
    pub poc_emails: Vec<String>,
    pub addresses: Vec<String>,
}

/// Raw registry object as it appears in the WHOIS dump. Objects reference
/// each other by handle.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum RegistryObject {
    Asn {
        asn: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        org: Option<String>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        pocs: Vec<String>,
    },
    Org {
        handle: String,
        name: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        address: Option<String>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        pocs: Vec<String>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        nets: Vec<String>,
    },
    Net {
        handle: String,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        pocs: Vec<String>,
    },
    Poc {
        handle: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        email: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        address: Option<String>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HexLocationCount {
    pub cell: CellId,
    pub bsl_count: u32,
}
