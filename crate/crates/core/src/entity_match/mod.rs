//! Provider-to-ASN entity resolution.
//!
//! WHOIS registry objects are flattened into per-ASN contacts, provider
//! registrations into per-provider contacts, and both sides are
//! canonicalized. Each of four methods links an ASN to a provider when the
//! two share a canonical value of one attribute; a provider's ASN set is
//! the union over methods.

mod canonical;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use canonical::{
    canonicalize_address, canonicalize_company, canonicalize_domain, canonicalize_email, PUBLIC_EMAIL_DOMAINS,
    PUBLIC_EMAIL_DOMAINS_VERSION, USPS_ABBREVIATIONS,
};

use crate::ingest::{FrnRegistration, IngestError, RegistryObject, WhoisRecord};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanonicalContact {
    pub emails: BTreeSet<String>,
    pub email_domains: BTreeSet<String>,
    pub company_names: BTreeSet<String>,
    pub addresses: BTreeSet<String>,
}

impl CanonicalContact {
    pub fn add_email(&mut self, raw: &str) {
        let e = canonicalize_email(raw);
        if e.contains('@') {
            if let Some(d) = canonicalize_domain(&e) {
                self.email_domains.insert(d);
            }
            self.emails.insert(e);
        }
    }

    pub fn add_company(&mut self, raw: &str) {
        let c = canonicalize_company(raw);
        if !c.is_empty() {
            self.company_names.insert(c);
        }
    }

    pub fn add_address(&mut self, raw: &str) {
        let a = canonicalize_address(raw);
        if !a.is_empty() {
            self.addresses.insert(a);
        }
    }

    fn values(&self, method: MatchMethod) -> &BTreeSet<String> {
        match method {
            MatchMethod::FullEmail => &self.emails,
            MatchMethod::EmailDomain => &self.email_domains,
            MatchMethod::CompanyName => &self.company_names,
            MatchMethod::Address => &self.addresses,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MatchMethod {
    FullEmail,
    EmailDomain,
    CompanyName,
    Address,
}

impl MatchMethod {
    pub const ALL: [MatchMethod; 4] =
        [MatchMethod::FullEmail, MatchMethod::EmailDomain, MatchMethod::CompanyName, MatchMethod::Address];

    pub fn label(self) -> &'static str {
        match self {
            MatchMethod::FullEmail => "full_email",
            MatchMethod::EmailDomain => "email_domain",
            MatchMethod::CompanyName => "company_name",
            MatchMethod::Address => "address",
        }
    }
}

impl fmt::Display for MatchMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MatchTier {
    /// Two or more methods found ASNs and all of them agree exactly.
    Strong,
    /// Two or more methods found ASNs but at least one pair disagrees.
    MultiMethod,
    SingleMethod,
    Unmatched,
}

impl MatchTier {
    pub const ALL: [MatchTier; 4] = [MatchTier::Strong, MatchTier::MultiMethod, MatchTier::SingleMethod, MatchTier::Unmatched];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderAsnMatch {
    pub provider_id: u64,
    /// One entry per method, possibly empty.
    pub asns_by_method: BTreeMap<MatchMethod, BTreeSet<u32>>,
    pub asn_union: BTreeSet<u32>,
    /// Mean pairwise Jaccard index over methods that found something; absent
    /// with fewer than two such methods.
    pub agreement: Option<f64>,
    pub tier: MatchTier,
}

impl ProviderAsnMatch {
    pub fn from_methods(provider_id: u64, asns_by_method: BTreeMap<MatchMethod, BTreeSet<u32>>) -> Self {
        let asn_union = asns_by_method.values().flatten().copied().collect();
        let hits: Vec<&BTreeSet<u32>> = asns_by_method.values().filter(|s| !s.is_empty()).collect();
        let mut pairs = Vec::new();
        for i in 0..hits.len() {
            for j in i + 1..hits.len() {
                pairs.push(jaccard(hits[i], hits[j]));
            }
        }
        let agreement = (!pairs.is_empty()).then(|| pairs.iter().sum::<f64>() / pairs.len() as f64);
        let tier = match hits.len() {
            0 => MatchTier::Unmatched,
            1 => MatchTier::SingleMethod,
            _ if pairs.iter().all(|&j| j == 1.0) => MatchTier::Strong,
            _ => MatchTier::MultiMethod,
        };
        Self { provider_id, asns_by_method, asn_union, agreement, tier }
    }

    pub fn method(&self, m: MatchMethod) -> &BTreeSet<u32> {
        static EMPTY: BTreeSet<u32> = BTreeSet::new();
        self.asns_by_method.get(&m).unwrap_or(&EMPTY)
    }
}

/// |A ∩ B| / |A ∪ B|, with two empty sets in full agreement.
pub fn jaccard<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum WhoisWarning {
    /// A handle referenced along one of the ASN paths does not exist.
    DanglingReference { asn: u32, handle: String },
    /// A handle defined more than once; the first definition is used.
    DuplicateHandle { handle: String },
}

impl fmt::Display for WhoisWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WhoisWarning::DanglingReference { asn, handle } => write!(f, "AS{asn}: dangling reference to {handle}"),
            WhoisWarning::DuplicateHandle { handle } => write!(f, "duplicate registry handle {handle}"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct WhoisFlattening {
    /// One record per ASN, ordered by ASN, raw (uncanonicalized) values.
    pub records: Vec<WhoisRecord>,
    pub warnings: Vec<WhoisWarning>,
}

/// Follows ASN -> POC, ASN -> ORG -> POC and ASN -> ORG -> NET -> POC and
/// collects organization names, contact emails and addresses. Broken links
/// produce warnings and are skipped.
pub fn flatten_registry(objects: &[RegistryObject]) -> WhoisFlattening {
    struct Org<'a> {
        name: &'a str,
        address: Option<&'a str>,
        pocs: &'a [String],
        nets: &'a [String],
    }
    let mut warnings = Vec::new();
    let mut orgs: HashMap<&str, Org<'_>> = HashMap::new();
    let mut nets: HashMap<&str, &[String]> = HashMap::new();
    let mut pocs: HashMap<&str, (Option<&str>, Option<&str>)> = HashMap::new();
    let mut asns: BTreeMap<u32, (Vec<&str>, Vec<&String>)> = BTreeMap::new();
    let mut seen_handles = BTreeSet::new();
    let mut fresh = |h: &str, warnings: &mut Vec<WhoisWarning>| {
        let ok = seen_handles.insert(h.to_string());
        if !ok {
            warnings.push(WhoisWarning::DuplicateHandle { handle: h.to_string() });
        }
        ok
    };
    for o in objects {
        match o {
            RegistryObject::Asn { asn, org, pocs: p } => {
                let e = asns.entry(*asn).or_default();
                e.0.extend(org.as_deref());
                e.1.extend(p.iter());
            }
            RegistryObject::Org { handle, name, address, pocs: p, nets: n } => {
                if fresh(handle, &mut warnings) {
                    orgs.insert(handle, Org { name, address: address.as_deref(), pocs: p, nets: n });
                }
            }
            RegistryObject::Net { handle, pocs: p } => {
                if fresh(handle, &mut warnings) {
                    nets.insert(handle, p);
                }
            }
            RegistryObject::Poc { handle, email, address } => {
                if fresh(handle, &mut warnings) {
                    pocs.insert(handle, (email.as_deref(), address.as_deref()));
                }
            }
        }
    }

    let mut records = Vec::with_capacity(asns.len());
    for (asn, (org_handles, direct_pocs)) in asns {
        let mut names = BTreeSet::new();
        let mut emails = BTreeSet::new();
        let mut addresses = BTreeSet::new();
        let mut poc_handles: Vec<&str> = direct_pocs.iter().map(|s| s.as_str()).collect();
        for h in org_handles {
            let Some(org) = orgs.get(h) else {
                warnings.push(WhoisWarning::DanglingReference { asn, handle: h.to_string() });
                continue;
            };
            names.insert(org.name.to_string());
            addresses.extend(org.address.map(str::to_string));
            poc_handles.extend(org.pocs.iter().map(String::as_str));
            for n in org.nets {
                match nets.get(n.as_str()) {
                    Some(p) => poc_handles.extend(p.iter().map(String::as_str)),
                    None => warnings.push(WhoisWarning::DanglingReference { asn, handle: n.clone() }),
                }
            }
        }
        for h in poc_handles {
            match pocs.get(h) {
                Some((email, address)) => {
                    emails.extend(email.map(str::to_string));
                    addresses.extend(address.map(str::to_string));
                }
                None => warnings.push(WhoisWarning::DanglingReference { asn, handle: h.to_string() }),
            }
        }
        records.push(WhoisRecord {
            asn,
            org_names: names.into_iter().collect(),
            poc_emails: emails.into_iter().collect(),
            addresses: addresses.into_iter().collect(),
        });
    }
    warnings.sort_by_key(|w| w.to_string());
    warnings.dedup();
    WhoisFlattening { records, warnings }
}

/// Canonical contacts per ASN, reached through all registry paths.
pub fn flatten_whois(objects: &[RegistryObject]) -> (BTreeMap<u32, CanonicalContact>, Vec<WhoisWarning>) {
    let flat = flatten_registry(objects);
    (asn_contacts(&flat.records), flat.warnings)
}

pub fn asn_contacts(records: &[WhoisRecord]) -> BTreeMap<u32, CanonicalContact> {
    let mut out: BTreeMap<u32, CanonicalContact> = BTreeMap::new();
    for r in records {
        let c = out.entry(r.asn).or_default();
        r.org_names.iter().for_each(|n| c.add_company(n));
        r.poc_emails.iter().for_each(|e| c.add_email(e));
        r.addresses.iter().for_each(|a| c.add_address(a));
    }
    out
}

/// Canonical contacts per provider, merged across its registrations.
pub fn provider_contacts(registrations: &[FrnRegistration]) -> BTreeMap<u64, CanonicalContact> {
    let mut out: BTreeMap<u64, CanonicalContact> = BTreeMap::new();
    for r in registrations {
        let c = out.entry(r.provider_id).or_default();
        c.add_company(&r.company_name);
        c.add_email(&r.contact_email);
        c.add_address(&r.physical_address);
    }
    out
}

/// One result per provider, ordered by provider id.
pub fn match_contacts(
    providers: &BTreeMap<u64, CanonicalContact>,
    asns: &BTreeMap<u32, CanonicalContact>,
) -> Vec<ProviderAsnMatch> {
    let index: BTreeMap<MatchMethod, HashMap<&str, BTreeSet<u32>>> = MatchMethod::ALL
        .into_iter()
        .map(|m| {
            let mut by_value: HashMap<&str, BTreeSet<u32>> = HashMap::new();
            for (&asn, c) in asns {
                for v in c.values(m) {
                    by_value.entry(v.as_str()).or_default().insert(asn);
                }
            }
            (m, by_value)
        })
        .collect();

    providers
        .iter()
        .map(|(&provider_id, contact)| {
            let by_method = MatchMethod::ALL
                .into_iter()
                .map(|m| {
                    let hits = contact
                        .values(m)
                        .iter()
                        .filter_map(|v| index[&m].get(v.as_str()))
                        .flatten()
                        .copied()
                        .collect();
                    (m, hits)
                })
                .collect();
            ProviderAsnMatch::from_methods(provider_id, by_method)
        })
        .collect()
}

pub fn match_providers(registrations: &[FrnRegistration], asns: &BTreeMap<u32, CanonicalContact>) -> Vec<ProviderAsnMatch> {
    match_contacts(&provider_contacts(registrations), asns)
}

/// Mean pairwise Jaccard between methods, averaged over providers where both
/// methods found ASNs. `None` where no provider qualifies; the diagonal is 1.
pub fn agreement_matrix(matches: &[ProviderAsnMatch]) -> [[Option<f64>; 4]; 4] {
    let mut m = [[None; 4]; 4];
    for (i, a) in MatchMethod::ALL.into_iter().enumerate() {
        m[i][i] = Some(1.0);
        for (j, b) in MatchMethod::ALL.into_iter().enumerate().skip(i + 1) {
            let scores: Vec<f64> = matches
                .iter()
                .filter(|p| !p.method(a).is_empty() && !p.method(b).is_empty())
                .map(|p| jaccard(p.method(a), p.method(b)))
                .collect();
            if !scores.is_empty() {
                let mean = scores.iter().sum::<f64>() / scores.len() as f64;
                m[i][j] = Some(mean);
                m[j][i] = Some(mean);
            }
        }
    }
    m
}

/// ASN to the providers it was linked to.
pub fn providers_by_asn(matches: &[ProviderAsnMatch]) -> BTreeMap<u32, BTreeSet<u64>> {
    let mut out: BTreeMap<u32, BTreeSet<u64>> = BTreeMap::new();
    for m in matches {
        for &asn in &m.asn_union {
            out.entry(asn).or_default().insert(m.provider_id);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchSummary {
    pub providers: usize,
    pub matched: usize,
    pub match_rate: f64,
    /// Providers with at least one ASN from each method.
    pub providers_by_method: BTreeMap<MatchMethod, usize>,
    pub tiers: BTreeMap<MatchTier, usize>,
    /// ASNs linked to more than one provider, flagged for manual review.
    pub shared_asns: BTreeMap<u32, BTreeSet<u64>>,
    pub agreement_matrix: [[Option<f64>; 4]; 4],
}

pub fn summarize(matches: &[ProviderAsnMatch]) -> MatchSummary {
    let matched = matches.iter().filter(|m| !m.asn_union.is_empty()).count();
    let providers_by_method =
        MatchMethod::ALL.into_iter().map(|k| (k, matches.iter().filter(|m| !m.method(k).is_empty()).count())).collect();
    let tiers = MatchTier::ALL.into_iter().map(|t| (t, matches.iter().filter(|m| m.tier == t).count())).collect();
    let shared_asns = providers_by_asn(matches).into_iter().filter(|(_, p)| p.len() > 1).collect();
    MatchSummary {
        providers: matches.len(),
        matched,
        match_rate: if matches.is_empty() { 0.0 } else { matched as f64 / matches.len() as f64 },
        providers_by_method,
        tiers,
        shared_asns,
        agreement_matrix: agreement_matrix(matches),
    }
}

/// provider_id, tier, asns (space separated), one 0/1 hit column per method,
/// mean agreement (blank when undefined).
pub fn write_matches_csv(path: &Path, matches: &[ProviderAsnMatch]) -> Result<(), IngestError> {
    let csv_err = |source| IngestError::Csv { path: path.to_path_buf(), source };
    let io_err = |source| IngestError::Io { path: path.to_path_buf(), source };
    let mut w = csv::Writer::from_writer(crate::ingest::open_output(path)?);
    let mut header = vec!["provider_id", "tier", "asns"];
    header.extend(MatchMethod::ALL.iter().map(|m| m.label()));
    header.push("agreement");
    w.write_record(&header).map_err(csv_err)?;
    for m in matches {
        let mut row = vec![
            m.provider_id.to_string(),
            format!("{:?}", m.tier),
            m.asn_union.iter().map(u32::to_string).collect::<Vec<_>>().join(" "),
        ];
        row.extend(MatchMethod::ALL.iter().map(|&k| u8::from(!m.method(k).is_empty()).to_string()));
        row.push(m.agreement.map(|a| a.to_string()).unwrap_or_default());
        w.write_record(&row).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| io_err(e.into_error()))?.finish().map_err(io_err)
}

/// Reads the export written by [`write_matches_csv`] back into per-provider
/// ASN sets (method detail is reduced to hit flags, so only the union and
/// tier survive).
pub fn read_match_asns(path: &Path) -> Result<BTreeMap<u64, BTreeSet<u32>>, IngestError> {
    let mut rdr = csv::Reader::from_reader(crate::ingest::open_input(path)?);
    let mut out = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|source| IngestError::Csv { path: path.to_path_buf(), source })?;
        let malformed = |message: String| IngestError::MalformedRow { path: path.to_path_buf(), line: i as u64 + 2, message };
        let provider: u64 = rec.get(0).unwrap_or("").parse().map_err(|_| malformed("bad provider_id".into()))?;
        let asns = rec
            .get(2)
            .unwrap_or("")
            .split_whitespace()
            .map(|a| a.parse::<u32>().map_err(|_| malformed(format!("bad asn {a:?}"))))
            .collect::<Result<BTreeSet<_>, _>>()?;
        out.insert(provider, asns);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(v: &[u32]) -> BTreeSet<u32> {
        v.iter().copied().collect()
    }

    fn methods(sets: [&[u32]; 4]) -> BTreeMap<MatchMethod, BTreeSet<u32>> {
        MatchMethod::ALL.into_iter().zip(sets).map(|(m, s)| (m, set(s))).collect()
    }

    #[test]
    fn jaccard_examples() {
        assert!((jaccard(&set(&[1, 2]), &set(&[2, 3])) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(jaccard(&set(&[4, 5]), &set(&[4, 5])), 1.0);
        assert_eq!(jaccard(&set(&[]), &set(&[])), 1.0);
    }

    #[test]
    fn tiers() {
        let single = ProviderAsnMatch::from_methods(1, methods([&[], &[100], &[], &[]]));
        assert_eq!((single.tier, single.agreement), (MatchTier::SingleMethod, None));
        assert_eq!(single.asn_union, set(&[100]));

        let strong = ProviderAsnMatch::from_methods(1, methods([&[100], &[100], &[], &[]]));
        assert_eq!((strong.tier, strong.agreement), (MatchTier::Strong, Some(1.0)));

        let multi = ProviderAsnMatch::from_methods(1, methods([&[100], &[100, 200], &[], &[]]));
        assert_eq!((multi.tier, multi.agreement), (MatchTier::MultiMethod, Some(0.5)));

        let none = ProviderAsnMatch::from_methods(1, methods([&[], &[], &[], &[]]));
        assert_eq!(none.tier, MatchTier::Unmatched);
    }

    #[test]
    fn registry_paths_and_dangling_links() {
        let objects = vec![
            RegistryObject::Asn { asn: 1, org: None, pocs: vec!["P1".into()] },
            RegistryObject::Asn { asn: 2, org: Some("O1".into()), pocs: vec![] },
            RegistryObject::Asn { asn: 3, org: Some("MISSING".into()), pocs: vec!["P1".into()] },
            RegistryObject::Org {
                handle: "O1".into(),
                name: "Acme LLC".into(),
                address: Some("1 Main Street".into()),
                pocs: vec!["P2".into(), "P3".into()],
                nets: vec!["N1".into()],
            },
            RegistryObject::Net { handle: "N1".into(), pocs: vec!["P4".into()] },
            RegistryObject::Poc { handle: "P1".into(), email: Some("a@one.net".into()), address: None },
            RegistryObject::Poc { handle: "P2".into(), email: Some("b@acme.com".into()), address: None },
            RegistryObject::Poc { handle: "P3".into(), email: Some("c@acme.com".into()), address: None },
            RegistryObject::Poc { handle: "P4".into(), email: Some("net@acme.com".into()), address: None },
        ];
        let flat = flatten_registry(&objects);
        assert_eq!(flat.records[0].poc_emails, vec!["a@one.net"]);
        assert_eq!(flat.records[1].poc_emails, vec!["b@acme.com", "c@acme.com", "net@acme.com"]);
        assert_eq!(flat.records[1].org_names, vec!["Acme LLC"]);
        assert_eq!(flat.records[2].poc_emails, vec!["a@one.net"]);
        assert_eq!(flat.warnings, vec![WhoisWarning::DanglingReference { asn: 3, handle: "MISSING".into() }]);

        let (contacts, _) = flatten_whois(&objects);
        assert!(contacts[&2].company_names.contains("acme"));
        assert!(contacts[&2].addresses.contains("1 main st"));
        assert!(contacts[&2].email_domains.contains("acme.com"));
    }

    #[test]
    fn matrix_is_symmetric_with_unit_diagonal() {
        let ms = vec![
            ProviderAsnMatch::from_methods(1, methods([&[1], &[1, 2], &[2], &[]])),
            ProviderAsnMatch::from_methods(2, methods([&[3], &[3], &[], &[4]])),
        ];
        let m = agreement_matrix(&ms);
        for i in 0..4 {
            assert_eq!(m[i][i], Some(1.0));
            for j in 0..4 {
                assert_eq!(m[i][j], m[j][i]);
            }
        }
        // full_email vs email_domain: providers 1 (0.5) and 2 (1.0).
        assert_eq!(m[0][1], Some(0.75));
        // company vs address: no provider has both.
        assert_eq!(m[2][3], None);
        assert_eq!(m[0][2], Some(0.0));
    }
}
