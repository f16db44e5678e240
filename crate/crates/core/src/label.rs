//! Academic labeling of hosts from committer email domains, plus country
//! and continent lookup from a local GeoLite2-style CSV database.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::net::{IpAddr, ToSocketAddrs};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fingerprint::HostKey;

/// Addresses that are never real people.
pub const BOT_DENYLIST: &[&str] = &[
    "action@github.com",
    "anonymous@overleaf.com",
    "bot@renovateapp.com",
    "noreply@github.com",
    "noreply@gitlab.com",
    "support@dependabot.com",
];

const PLACEHOLDER_DOMAINS: &[&str] = &["example.com", "example.net", "example.org"];

/// Top-level labels that never route on the public internet.
const LOCAL_TLDS: &[&str] = &[
    "example", "home", "internal", "invalid", "lan", "local", "localdomain", "localhost", "test",
];

pub const DEFAULT_ACADEMIC_THRESHOLD: f64 = 0.5;

/// Small shipped sample of university domains, used when no list is configured.
pub const SAMPLE_UNIVERSITY_DOMAINS: &str = include_str!("../data/university_domains.txt");

fn domain_of(email: &str) -> Option<&str> {
    let (local, domain) = email.rsplit_once('@')?;
    (!local.is_empty() && !domain.is_empty()).then_some(domain)
}

fn is_under(domain: &str, parent: &str) -> bool {
    domain == parent || domain.strip_suffix(parent).is_some_and(|rest| rest.ends_with('.'))
}

/// Reasons an address is rejected, or `None` if it looks real.
pub fn fake_reason(email: &str, extra_denylist: &HashSet<String>) -> Option<&'static str> {
    let Some(domain) = domain_of(email) else {
        return Some("no domain");
    };
    if !domain.contains('.') || domain.starts_with('.') || domain.ends_with('.') {
        return Some("domain without suffix");
    }
    if PLACEHOLDER_DOMAINS.iter().any(|p| is_under(domain, p)) {
        return Some("placeholder domain");
    }
    let tld = domain.rsplit('.').next().unwrap_or(domain);
    if LOCAL_TLDS.contains(&tld) {
        return Some("local domain");
    }
    if BOT_DENYLIST.contains(&email) || extra_denylist.contains(email) {
        return Some("denylisted");
    }
    None
}

/// Trim, lowercase and drop placeholder, local-only and bot addresses.
pub fn filter_fake_emails<'a>(
    emails: impl IntoIterator<Item = &'a str>,
    extra_denylist: &HashSet<String>,
) -> BTreeSet<String> {
    emails
        .into_iter()
        .map(|e| e.trim().to_lowercase())
        .filter(|e| fake_reason(e, extra_denylist).is_none())
        .collect()
}

#[derive(Debug, Error)]
pub enum LabelError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: String, message: String },
}

/// Registrable domains of academic institutions.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DomainList {
    domains: BTreeSet<String>,
}

fn clean_domain(raw: &str) -> Option<String> {
    let mut d = raw.trim().to_lowercase();
    if let Some((_, rest)) = d.split_once("://") {
        d = rest.to_string();
    }
    if let Some(i) = d.find('/') {
        d.truncate(i);
    }
    let d = d.trim_matches('.').to_string();
    (!d.is_empty()).then_some(d)
}

#[derive(Deserialize)]
struct UniversityRecord {
    #[serde(default)]
    domains: Vec<String>,
}

impl DomainList {
    pub fn new<S: AsRef<str>>(domains: impl IntoIterator<Item = S>) -> Self {
        Self {
            domains: domains.into_iter().filter_map(|d| clean_domain(d.as_ref())).collect(),
        }
    }

    /// Newline-delimited domains (`#` comments allowed), or a JSON array of
    /// university records each carrying a `domains` list.
    pub fn parse(text: &str) -> Result<Self, String> {
        let trimmed = text.trim_start();
        if trimmed.starts_with('[') {
            let records: Vec<UniversityRecord> = serde_json::from_str(trimmed).map_err(|e| e.to_string())?;
            return Ok(Self::new(records.into_iter().flat_map(|r| r.domains)));
        }
        Ok(Self::new(
            text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')),
        ))
    }

    pub fn load(path: &Path) -> Result<Self, LabelError> {
        let text = std::fs::read_to_string(path).map_err(|source| LabelError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text).map_err(|message| LabelError::Format {
            path: path.display().to_string(),
            message,
        })
    }

    pub fn contains_domain(&self, domain: &str) -> bool {
        let mut d = domain;
        loop {
            if self.domains.contains(d) {
                return true;
            }
            match d.split_once('.') {
                Some((_, rest)) => d = rest,
                None => return false,
            }
        }
    }

    pub fn len(&self) -> usize {
        self.domains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.domains.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.domains.iter().map(String::as_str)
    }
}

/// Academic when the domain is listed, is a subdomain of a listed domain,
/// or ends in `.edu`.
pub fn is_academic_email(email: &str, list: &DomainList) -> bool {
    let Some(domain) = domain_of(email) else { return false };
    let domain = domain.to_lowercase();
    is_under(&domain, "edu") || list.contains_domain(&domain)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HostLabel {
    pub unique_emails: BTreeSet<String>,
    pub academic_email_fraction: f64,
    pub is_academic: bool,
}

/// Fraction of academic addresses among `emails`; the host is academic when
/// the fraction strictly exceeds `threshold`.
pub fn label_host(emails: &BTreeSet<String>, list: &DomainList, threshold: f64) -> HostLabel {
    let academic = emails.iter().filter(|e| is_academic_email(e, list)).count();
    let fraction = if emails.is_empty() {
        0.0
    } else {
        academic as f64 / emails.len() as f64
    };
    HostLabel {
        unique_emails: emails.clone(),
        academic_email_fraction: fraction,
        is_academic: fraction > threshold,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeoLocation {
    pub country: Option<String>,
    pub continent: Option<String>,
}

pub trait GeoProvider: Send + Sync {
    fn lookup(&self, ip: IpAddr) -> Option<GeoLocation>;
}

pub trait Resolver: Send + Sync {
    fn resolve(&self, host: &str) -> Option<IpAddr>;
}

/// Resolution through the operating system.
pub struct SystemResolver;

impl Resolver for SystemResolver {
    fn resolve(&self, host: &str) -> Option<IpAddr> {
        (host, 0).to_socket_addrs().ok()?.map(|a| a.ip()).min()
    }
}

/// Resolve (if needed) and look up a host address.
pub fn geolocate(host: &HostKey, geo: &dyn GeoProvider, resolver: &dyn Resolver) -> Option<GeoLocation> {
    let literal = host.address.trim_start_matches('[').trim_end_matches(']');
    let ip = match literal.parse::<IpAddr>() {
        Ok(ip) => ip,
        Err(_) => resolver.resolve(literal)?,
    };
    geo.lookup(ip)
}

#[derive(Debug, Clone, Copy)]
struct Range {
    start: u128,
    end: u128,
    geoname: u64,
}

/// GeoLite2-Country CSV database: one or more `Blocks` files (network,
/// geoname_id, registered_country_geoname_id, ...) and a `Locations` file
/// (geoname_id, locale_code, continent_code, continent_name,
/// country_iso_code, ...).
#[derive(Debug, Clone, Default)]
pub struct CsvGeoDatabase {
    v4: Vec<Range>,
    v6: Vec<Range>,
    locations: BTreeMap<u64, GeoLocation>,
}

fn parse_cidr(net: &str) -> Option<(bool, u128, u128)> {
    let (addr, len) = net.split_once('/')?;
    let len: u32 = len.parse().ok()?;
    match addr.parse::<IpAddr>().ok()? {
        IpAddr::V4(a) => {
            if len > 32 {
                return None;
            }
            let base = u32::from(a) as u128;
            let span = if len == 0 { u32::MAX as u128 } else { (1u128 << (32 - len)) - 1 };
            let start = base & !span;
            Some((true, start, start | span))
        }
        IpAddr::V6(a) => {
            if len > 128 {
                return None;
            }
            let base = u128::from(a);
            let span = if len == 0 { u128::MAX } else { (1u128 << (128 - len)) - 1 };
            let start = base & !span;
            Some((false, start, start | span))
        }
    }
}

impl CsvGeoDatabase {
    pub fn load(blocks: &[&Path], locations: &Path) -> Result<Self, LabelError> {
        let format = |path: &Path, message: String| LabelError::Format {
            path: path.display().to_string(),
            message,
        };
        let open = |path: &Path| {
            csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
                csv::ErrorKind::Io(source) => LabelError::Io {
                    path: path.display().to_string(),
                    source,
                },
                other => format(path, format!("{other:?}")),
            })
        };
        let mut db = CsvGeoDatabase::default();
        let mut rdr = open(locations)?;
        let headers = rdr.headers().map_err(|e| format(locations, e.to_string()))?.clone();
        let col = |name: &str| headers.iter().position(|h| h == name);
        let (Some(id), Some(cont), Some(country)) = (col("geoname_id"), col("continent_code"), col("country_iso_code"))
        else {
            return Err(format(locations, "missing geoname_id/continent_code/country_iso_code".into()));
        };
        for row in rdr.records() {
            let row = row.map_err(|e| format(locations, e.to_string()))?;
            let Ok(gid) = row.get(id).unwrap_or("").parse::<u64>() else { continue };
            let pick = |i: usize| row.get(i).filter(|s| !s.is_empty()).map(str::to_string);
            db.locations.insert(
                gid,
                GeoLocation {
                    country: pick(country),
                    continent: pick(cont),
                },
            );
        }
        for path in blocks {
            let mut rdr = open(path)?;
            let headers = rdr.headers().map_err(|e| format(path, e.to_string()))?.clone();
            let col = |name: &str| headers.iter().position(|h| h == name);
            let (Some(net), Some(gid)) = (col("network"), col("geoname_id")) else {
                return Err(format(path, "missing network/geoname_id".into()));
            };
            let fallback = col("registered_country_geoname_id");
            for row in rdr.records() {
                let row = row.map_err(|e| format(path, e.to_string()))?;
                let Some((v4, start, end)) = parse_cidr(row.get(net).unwrap_or("")) else { continue };
                let geoname = row
                    .get(gid)
                    .and_then(|s| s.parse().ok())
                    .or_else(|| fallback.and_then(|f| row.get(f)).and_then(|s| s.parse().ok()));
                let Some(geoname) = geoname else { continue };
                let r = Range { start, end, geoname };
                if v4 {
                    db.v4.push(r);
                } else {
                    db.v6.push(r);
                }
            }
        }
        db.v4.sort_by_key(|r| r.start);
        db.v6.sort_by_key(|r| r.start);
        Ok(db)
    }

    fn find(ranges: &[Range], x: u128) -> Option<u64> {
        let i = ranges.partition_point(|r| r.start <= x);
        let r = ranges.get(i.checked_sub(1)?)?;
        (x <= r.end).then_some(r.geoname)
    }
}

impl GeoProvider for CsvGeoDatabase {
    fn lookup(&self, ip: IpAddr) -> Option<GeoLocation> {
        let geoname = match ip {
            IpAddr::V4(a) => Self::find(&self.v4, u32::from(a) as u128),
            IpAddr::V6(a) => match a.to_ipv4_mapped() {
                Some(v4) => Self::find(&self.v4, u32::from(v4) as u128),
                None => Self::find(&self.v6, u128::from(a)),
            },
        }?;
        self.locations.get(&geoname).cloned()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HostProfile {
    pub host: HostKey,
    pub unique_emails: BTreeSet<String>,
    pub academic_email_fraction: f64,
    pub is_academic: bool,
    pub region: Option<String>,
    pub country: Option<String>,
    pub repo_count: u64,
}

impl HostProfile {
    pub fn new(host: HostKey, label: HostLabel, geo: Option<GeoLocation>, repo_count: u64) -> Self {
        let geo = geo.unwrap_or(GeoLocation {
            country: None,
            continent: None,
        });
        Self {
            host,
            unique_emails: label.unique_emails,
            academic_email_fraction: label.academic_email_fraction,
            is_academic: label.is_academic,
            region: geo.continent,
            country: geo.country,
            repo_count,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmailCensus {
    pub distinct_emails: usize,
    /// Number of hosts an address appears on → number of addresses.
    pub hosts_per_email: BTreeMap<usize, usize>,
    pub multi_host: Vec<String>,
    pub multi_country: Vec<String>,
    pub multi_continent: Vec<String>,
}

/// How widely each address is spread across hosts, countries and continents.
pub fn cross_host_emails(profiles: &[HostProfile]) -> EmailCensus {
    #[derive(Default)]
    struct Seen<'a> {
        hosts: BTreeSet<&'a HostKey>,
        countries: BTreeSet<&'a str>,
        continents: BTreeSet<&'a str>,
    }
    let mut by_email: BTreeMap<&str, Seen> = BTreeMap::new();
    for p in profiles {
        for e in &p.unique_emails {
            let s = by_email.entry(e.as_str()).or_default();
            s.hosts.insert(&p.host);
            if let Some(c) = &p.country {
                s.countries.insert(c);
            }
            if let Some(c) = &p.region {
                s.continents.insert(c);
            }
        }
    }
    let mut census = EmailCensus {
        distinct_emails: by_email.len(),
        ..Default::default()
    };
    for (email, s) in by_email {
        *census.hosts_per_email.entry(s.hosts.len()).or_default() += 1;
        if s.hosts.len() >= 2 {
            census.multi_host.push(email.to_string());
        }
        if s.countries.len() >= 2 {
            census.multi_country.push(email.to_string());
        }
        if s.continents.len() >= 2 {
            census.multi_continent.push(email.to_string());
        }
    }
    census
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fingerprint::Scheme;
    use proptest::prelude::*;
    use std::collections::HashMap;

    fn set(v: &[&str]) -> BTreeSet<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn filter(v: &[&str]) -> BTreeSet<String> {
        filter_fake_emails(v.iter().copied(), &HashSet::new())
    }

    #[test]
    fn fake_email_examples() {
        assert!(filter(&["you@example.com"]).is_empty());
        assert!(filter(&["root@localhost"]).is_empty());
        assert!(filter(&["admin"]).is_empty());
        assert!(filter(&["git@server.local", "x@mail.example.org", "anonymous@overleaf.com"]).is_empty());
        assert_eq!(filter(&["dev@uvm.edu"]), set(&["dev@uvm.edu"]));
        assert_eq!(filter(&[" Dev@UVM.edu "]), set(&["dev@uvm.edu"]));
    }

    #[test]
    fn extra_denylist_applies() {
        let extra: HashSet<String> = ["ci@lab.org".to_string()].into();
        assert!(filter_fake_emails(["ci@lab.org"], &extra).is_empty());
    }

    #[test]
    fn academic_rule() {
        let list = DomainList::new(["stanford.edu", "ox.ac.uk"]);
        assert!(is_academic_email("a@cs.stanford.edu", &list));
        assert!(is_academic_email("a@ox.ac.uk", &list));
        assert!(is_academic_email("a@maths.ox.ac.uk", &list));
        assert!(!is_academic_email("a@gmail.com", &list));
        assert!(is_academic_email("a@college.edu", &list));
        assert!(!is_academic_email("a@notox.ac.uk", &list));
        assert!(!is_academic_email("a@edu.example.io", &list));
    }

    #[test]
    fn strict_majority() {
        let list = DomainList::new(["uvm.edu"]);
        let l = label_host(&set(&["a@uvm.edu", "b@uvm.edu", "c@uvm.edu", "d@gmail.com"]), &list, 0.5);
        assert_eq!(l.academic_email_fraction, 0.75);
        assert!(l.is_academic);
        let l = label_host(&set(&["a@uvm.edu", "b@uvm.edu", "c@x.com", "d@gmail.com"]), &list, 0.5);
        assert_eq!(l.academic_email_fraction, 0.5);
        assert!(!l.is_academic);
        let l = label_host(&BTreeSet::new(), &list, 0.5);
        assert_eq!(l.academic_email_fraction, 0.0);
        assert!(!l.is_academic);
    }

    #[test]
    fn domain_list_formats() {
        let t = DomainList::parse("# comment\nUVM.edu\n\nhttps://www.ox.ac.uk/\n").unwrap();
        assert_eq!(t.iter().collect::<Vec<_>>(), vec!["uvm.edu", "www.ox.ac.uk"]);
        let j = DomainList::parse(r#"[{"name":"A","domains":["a.ac.jp","b.ac.jp"]},{"name":"B"}]"#).unwrap();
        assert_eq!(j.len(), 2);
        assert!(DomainList::parse("[{").is_err());
    }

    #[test]
    fn shipped_domain_sample_is_academic() {
        let list = DomainList::parse(SAMPLE_UNIVERSITY_DOMAINS).unwrap();
        assert!(list.len() >= 10);
        for d in list.iter() {
            assert!(is_academic_email(&format!("x@{d}"), &list), "{d}");
        }
    }

    struct StubGeo(HashMap<IpAddr, GeoLocation>);
    impl GeoProvider for StubGeo {
        fn lookup(&self, ip: IpAddr) -> Option<GeoLocation> {
            self.0.get(&ip).cloned()
        }
    }
    struct StubResolver;
    impl Resolver for StubResolver {
        fn resolve(&self, host: &str) -> Option<IpAddr> {
            (host == "forge.example.de").then(|| "1.2.3.4".parse().unwrap())
        }
    }

    fn de() -> GeoLocation {
        GeoLocation {
            country: Some("DE".into()),
            continent: Some("EU".into()),
        }
    }

    #[test]
    fn geolocation_via_provider_and_resolver() {
        let geo = StubGeo([("1.2.3.4".parse().unwrap(), de())].into());
        let key = |a: &str| HostKey::new(a, 443, Scheme::Https);
        assert_eq!(geolocate(&key("1.2.3.4"), &geo, &StubResolver), Some(de()));
        assert_eq!(geolocate(&key("5.6.7.8"), &geo, &StubResolver), None);
        assert_eq!(geolocate(&key("forge.example.de"), &geo, &StubResolver), Some(de()));
        assert_eq!(geolocate(&key("nowhere.invalid"), &geo, &StubResolver), None);
    }

    #[test]
    fn csv_database_lookup() {
        let dir = tempfile::tempdir().unwrap();
        let blocks = dir.path().join("blocks4.csv");
        let blocks6 = dir.path().join("blocks6.csv");
        let locs = dir.path().join("locations.csv");
        std::fs::write(
            &blocks,
            "network,geoname_id,registered_country_geoname_id,represented_country_geoname_id,is_anonymous_proxy,is_satellite_provider\n\
             1.2.3.0/24,2921044,2921044,,0,0\n\
             10.0.0.0/8,,6252001,,0,0\n",
        )
        .unwrap();
        std::fs::write(&blocks6, "network,geoname_id,registered_country_geoname_id\n2001:db8::/32,6252001,\n").unwrap();
        std::fs::write(
            &locs,
            "geoname_id,locale_code,continent_code,continent_name,country_iso_code,country_name,is_in_european_union\n\
             2921044,en,EU,Europe,DE,Germany,1\n\
             6252001,en,NA,\"North America\",US,\"United States\",0\n",
        )
        .unwrap();
        let db = CsvGeoDatabase::load(&[&blocks, &blocks6], &locs).unwrap();
        let ip = |s: &str| s.parse::<IpAddr>().unwrap();
        assert_eq!(db.lookup(ip("1.2.3.200")), Some(de()));
        assert_eq!(db.lookup(ip("1.2.4.1")), None);
        assert_eq!(db.lookup(ip("10.20.30.40")).unwrap().country.as_deref(), Some("US"));
        assert_eq!(db.lookup(ip("2001:db8::1")).unwrap().continent.as_deref(), Some("NA"));
        assert_eq!(db.lookup(ip("::ffff:1.2.3.4")), Some(de()));
        assert!(matches!(
            CsvGeoDatabase::load(&[&blocks], &dir.path().join("missing.csv")),
            Err(LabelError::Io { .. })
        ));
    }

    fn profile(addr: &str, country: &str, continent: &str, emails: &[&str]) -> HostProfile {
        HostProfile {
            host: HostKey::new(addr, 443, Scheme::Https),
            unique_emails: set(emails),
            academic_email_fraction: 0.0,
            is_academic: false,
            region: Some(continent.into()),
            country: Some(country.into()),
            repo_count: 1,
        }
    }

    #[test]
    fn census_examples() {
        let c = cross_host_emails(&[profile("a", "US", "NA", &["x@y.org"]), profile("b", "DE", "EU", &["x@y.org"])]);
        assert_eq!(c.multi_country, vec!["x@y.org"]);
        assert_eq!(c.multi_continent, vec!["x@y.org"]);
        assert_eq!(c.hosts_per_email, BTreeMap::from([(2, 1)]));
        let c = cross_host_emails(&[profile("a", "US", "NA", &["p@q.org"]), profile("b", "US", "NA", &["r@q.org"])]);
        assert_eq!(c.hosts_per_email, BTreeMap::from([(1, 2)]));
        assert!(c.multi_host.is_empty());
    }

    proptest! {
        #[test]
        fn filter_is_idempotent(v in prop::collection::vec("[a-zA-Z@.]{0,12}", 0..20)) {
            let once = filter_fake_emails(v.iter().map(String::as_str), &HashSet::new());
            let twice = filter_fake_emails(once.iter().map(String::as_str), &HashSet::new());
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn fraction_ignores_duplicates(v in prop::collection::vec(("[a-c]", prop::bool::ANY), 1..20)) {
            let list = DomainList::new(["uni.ac.uk"]);
            let emails: Vec<String> = v.iter().map(|(u, a)| format!("{u}@{}", if *a { "uni.ac.uk" } else { "corp.com" })).collect();
            let s1: BTreeSet<String> = emails.iter().cloned().collect();
            let s2: BTreeSet<String> = emails.iter().chain(emails.iter()).cloned().collect();
            prop_assert_eq!(label_host(&s1, &list, 0.5), label_host(&s2, &list, 0.5));
        }

        /// Planted corpus: each email appears on a chosen number of hosts.
        #[test]
        fn planted_census(spread in prop::collection::vec(1usize..5, 1..30)) {
            let hosts: Vec<(&str, &str, &str)> = vec![("h0","US","NA"),("h1","US","NA"),("h2","DE","EU"),("h3","JP","AS"),("h4","FR","EU")];
            let mut profiles: Vec<HostProfile> = hosts.iter().map(|(a,c,r)| profile(a, c, r, &[])).collect();
            let mut expect_hist = BTreeMap::new();
            let (mut mc, mut mr) = (0, 0);
            for (i, k) in spread.iter().enumerate() {
                let e = format!("u{i}@x.org");
                for p in profiles.iter_mut().take(*k) { p.unique_emails.insert(e.clone()); }
                *expect_hist.entry(*k).or_insert(0) += 1;
                // hosts 0..k: countries {US} for k<=2, then more
                if *k >= 3 { mc += 1; mr += 1; }
            }
            let c = cross_host_emails(&profiles);
            prop_assert_eq!(c.distinct_emails, spread.len());
            prop_assert_eq!(c.hosts_per_email.values().sum::<usize>(), spread.len());
            prop_assert_eq!(c.hosts_per_email, expect_hist);
            prop_assert_eq!(c.multi_country.len(), mc);
            prop_assert_eq!(c.multi_continent.len(), mr);
        }
    }
}
