//! Canonical forms for the four contact attributes used to link providers
//! to ASNs. Every function is total and idempotent.

/// Version tag of the bundled webmail list; bump when the list changes.
pub const PUBLIC_EMAIL_DOMAINS_VERSION: &str = "2024.1";

/// Mailbox providers anyone can sign up for. A shared address on one of
/// these says nothing about corporate identity.
pub const PUBLIC_EMAIL_DOMAINS: &[&str] = &[
    "aol.com",
    "gmail.com",
    "gmx.com",
    "googlemail.com",
    "hotmail.com",
    "icloud.com",
    "live.com",
    "mac.com",
    "mail.com",
    "me.com",
    "msn.com",
    "outlook.com",
    "proton.me",
    "protonmail.com",
    "yahoo.com",
    "yandex.com",
    "ymail.com",
    "zoho.com",
];

/// Two-label public suffixes under which registrations take three labels.
const MULTI_LABEL_SUFFIXES: &[&str] =
    &["ac.uk", "co.jp", "co.nz", "co.uk", "com.au", "com.br", "com.mx", "net.au", "org.au", "org.uk"];

/// Word abbreviations from the USPS street-suffix, directional and
/// secondary-unit tables (a subset). No abbreviation is itself a key, which
/// keeps address canonicalization idempotent.
pub const USPS_ABBREVIATIONS: &[(&str, &str)] = &[
    ("alley", "aly"),
    ("annex", "anx"),
    ("apartment", "apt"),
    ("avenue", "ave"),
    ("boulevard", "blvd"),
    ("building", "bldg"),
    ("center", "ctr"),
    ("circle", "cir"),
    ("court", "ct"),
    ("creek", "crk"),
    ("crossing", "xing"),
    ("department", "dept"),
    ("drive", "dr"),
    ("east", "e"),
    ("estates", "est"),
    ("expressway", "expy"),
    ("falls", "fls"),
    ("ferry", "fry"),
    ("field", "fld"),
    ("floor", "fl"),
    ("fort", "ft"),
    ("freeway", "fwy"),
    ("grove", "grv"),
    ("harbor", "hbr"),
    ("heights", "hts"),
    ("highway", "hwy"),
    ("hill", "hl"),
    ("hollow", "holw"),
    ("island", "is"),
    ("junction", "jct"),
    ("lake", "lk"),
    ("landing", "lndg"),
    ("lane", "ln"),
    ("meadow", "mdw"),
    ("mount", "mt"),
    ("mountain", "mtn"),
    ("north", "n"),
    ("northeast", "ne"),
    ("northwest", "nw"),
    ("office", "ofc"),
    ("parkway", "pkwy"),
    ("place", "pl"),
    ("plaza", "plz"),
    ("point", "pt"),
    ("ridge", "rdg"),
    ("road", "rd"),
    ("room", "rm"),
    ("route", "rte"),
    ("south", "s"),
    ("southeast", "se"),
    ("southwest", "sw"),
    ("spring", "spg"),
    ("square", "sq"),
    ("station", "sta"),
    ("street", "st"),
    ("suite", "ste"),
    ("terrace", "ter"),
    ("trail", "trl"),
    ("turnpike", "tpke"),
    ("valley", "vly"),
    ("view", "vw"),
    ("village", "vlg"),
    ("west", "w"),
];

fn usps(word: &str) -> &str {
    USPS_ABBREVIATIONS
        .binary_search_by(|(k, _)| k.cmp(&word))
        .map_or(word, |i| USPS_ABBREVIATIONS[i].1)
}

/// Lowercase, drop everything but letters, digits and whitespace, collapse
/// runs of whitespace.
fn strip_and_fold(s: &str) -> Vec<String> {
    let cleaned: String = s
        .to_lowercase()
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect();
    cleaned.split_whitespace().map(str::to_string).collect()
}

pub fn canonicalize_email(s: &str) -> String {
    s.trim().to_lowercase()
}

/// Registrable domain of an address or bare domain; `None` for public
/// webmail domains and for anything that is not a well-formed domain.
pub fn canonicalize_domain(email_or_domain: &str) -> Option<String> {
    let s = email_or_domain.trim().to_lowercase();
    let host = s.rsplit_once('@').map_or(s.as_str(), |(_, h)| h).trim_end_matches('.');
    let labels: Vec<&str> = host.split('.').collect();
    let well_formed = labels.len() >= 2
        && labels.iter().all(|l| {
            !l.is_empty() && !l.starts_with('-') && !l.ends_with('-') && l.chars().all(|c| c.is_ascii_alphanumeric() || c == '-')
        });
    if !well_formed {
        return None;
    }
    let tail2 = labels[labels.len() - 2..].join(".");
    let keep = if MULTI_LABEL_SUFFIXES.contains(&tail2.as_str()) { 3 } else { 2 };
    if labels.len() < keep {
        return None;
    }
    let domain = labels[labels.len() - keep..].join(".");
    (!PUBLIC_EMAIL_DOMAINS.contains(&domain.as_str())).then_some(domain)
}

pub fn canonicalize_company(s: &str) -> String {
    let mut words = strip_and_fold(s);
    while words.last().is_some_and(|w| w == "inc" || w == "llc") {
        words.pop();
    }
    words.join(" ")
}

pub fn canonicalize_address(s: &str) -> String {
    strip_and_fold(s).iter().map(|w| usps(w)).collect::<Vec<_>>().join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rule_examples() {
        assert_eq!(canonicalize_email(" Ops@ISP.net "), "ops@isp.net");
        assert_eq!(canonicalize_email(""), "");
        assert_eq!(canonicalize_domain("noc@Example-ISP.com").as_deref(), Some("example-isp.com"));
        assert_eq!(canonicalize_domain("ceo@gmail.com"), None);
        assert_eq!(canonicalize_domain("not-an-email"), None);
        assert_eq!(canonicalize_domain("ops@mail.acme.co.uk").as_deref(), Some("acme.co.uk"));
        assert_eq!(canonicalize_domain("noc@net.acme.com").as_deref(), Some("acme.com"));
        assert_eq!(canonicalize_company("Acme Networks, LLC"), "acme networks");
        assert_eq!(canonicalize_company("ACME NETWORKS INC."), "acme networks");
        assert_eq!(canonicalize_company("A&B Co"), "ab co");
        assert_eq!(canonicalize_company("Widgets Inc LLC"), "widgets");
        assert_eq!(canonicalize_address("123 Main Street"), "123 main st");
        assert_eq!(canonicalize_address("45 North Oak Avenue, Suite 2"), "45 n oak ave ste 2");
    }

    #[test]
    fn usps_table_is_sorted_and_closed() {
        assert!(USPS_ABBREVIATIONS.len() >= 40);
        assert!(USPS_ABBREVIATIONS.windows(2).all(|w| w[0].0 < w[1].0));
        for (_, abbr) in USPS_ABBREVIATIONS {
            assert!(USPS_ABBREVIATIONS.iter().all(|(k, _)| k != abbr), "{abbr} is also a key");
        }
    }
}
