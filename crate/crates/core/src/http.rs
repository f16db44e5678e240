//! Minimal blocking HTTP abstraction shared by the probing, crawling, cloning
//! and remote-lookup stages.
//!
//! Everything that talks to the network goes through [`HttpFetcher`] so tests
//! can swap in local fixture servers or canned stubs. Redirects are never
//! followed by the transport itself; callers decide via [`get_following`].

use std::borrow::Cow;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use thiserror::Error;
use url::Url;

/// Maximum redirect chain followed by [`get_following`].
pub const MAX_REDIRECT_DEPTH: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub headers: Vec<(String, String)>,
    pub body: Vec<u8>,
}

impl HttpResponse {
    pub fn new(status: u16, body: impl Into<Vec<u8>>) -> Self {
        Self {
            status,
            headers: Vec::new(),
            body: body.into(),
        }
    }

    pub fn with_header(mut self, name: &str, value: &str) -> Self {
        self.headers.push((name.to_string(), value.to_string()));
        self
    }

    /// Case-insensitive header lookup; returns the first match.
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }

    pub fn is_success(&self) -> bool {
        (200..300).contains(&self.status)
    }

    pub fn is_redirect(&self) -> bool {
        matches!(self.status, 301 | 302 | 303 | 307 | 308)
    }

    pub fn is_auth_challenge(&self) -> bool {
        self.status == 401 || self.status == 403
    }

    /// Body decoded leniently: invalid UTF-8 sequences become U+FFFD.
    pub fn text(&self) -> Cow<'_, str> {
        String::from_utf8_lossy(&self.body)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransportError {
    #[error("timed out")]
    Timeout,
    #[error("connection refused")]
    ConnectionRefused,
    #[error("host not found")]
    HostNotFound,
    #[error("tls failure: {0}")]
    Tls(String),
    #[error("invalid url: {0}")]
    InvalidUrl(String),
    #[error("transport failure: {0}")]
    Other(String),
}

pub trait HttpFetcher: Send + Sync {
    fn get(&self, url: &str, headers: &[(&str, &str)]) -> Result<HttpResponse, TransportError>;
}

impl<T: HttpFetcher + ?Sized> HttpFetcher for &T {
    fn get(&self, url: &str, headers: &[(&str, &str)]) -> Result<HttpResponse, TransportError> {
        (**self).get(url, headers)
    }
}

impl<T: HttpFetcher + ?Sized> HttpFetcher for std::sync::Arc<T> {
    fn get(&self, url: &str, headers: &[(&str, &str)]) -> Result<HttpResponse, TransportError> {
        (**self).get(url, headers)
    }
}

impl<T: HttpFetcher + ?Sized> HttpFetcher for Box<T> {
    fn get(&self, url: &str, headers: &[(&str, &str)]) -> Result<HttpResponse, TransportError> {
        (**self).get(url, headers)
    }
}

/// Outcome of a fetch that may have followed redirects.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Fetched {
    Response { final_url: String, response: HttpResponse },
    /// A redirect pointed outside the original registrable domain, or the
    /// chain exceeded [`MAX_REDIRECT_DEPTH`]. The redirect is not followed.
    RedirectRefused { from: String, target: String },
}

/// GET `url`, following up to [`MAX_REDIRECT_DEPTH`] redirects as long as
/// every hop stays within the registrable domain of the starting URL.
pub fn get_following(
    fetcher: &dyn HttpFetcher,
    url: &str,
    headers: &[(&str, &str)],
) -> Result<Fetched, TransportError> {
    let start = Url::parse(url).map_err(|e| TransportError::InvalidUrl(e.to_string()))?;
    let origin_domain = start.host_str().map(registrable_domain).unwrap_or_default();
    let mut current = start;
    for _ in 0..=MAX_REDIRECT_DEPTH {
        let response = fetcher.get(current.as_str(), headers)?;
        if !response.is_redirect() {
            return Ok(Fetched::Response {
                final_url: current.to_string(),
                response,
            });
        }
        let Some(location) = response.header("location") else {
            return Ok(Fetched::Response {
                final_url: current.to_string(),
                response,
            });
        };
        let next = current
            .join(location)
            .map_err(|e| TransportError::InvalidUrl(e.to_string()))?;
        let next_domain = next.host_str().map(registrable_domain).unwrap_or_default();
        if next_domain != origin_domain {
            return Ok(Fetched::RedirectRefused {
                from: current.to_string(),
                target: next.to_string(),
            });
        }
        current = next;
    }
    Ok(Fetched::RedirectRefused {
        from: url.to_string(),
        target: current.to_string(),
    })
}

// Second-level labels under which registrations happen one level deeper
// (e.g. example.co.uk). Approximation of the public suffix list.
const SECOND_LEVEL_SUFFIXES: &[&str] = &["ac", "co", "com", "edu", "gov", "net", "org", "or", "ne"];

/// Approximate registrable domain ("eTLD+1") of a hostname. IP literals are
/// returned unchanged.
pub fn registrable_domain(host: &str) -> String {
    let host = host.trim_end_matches('.').to_ascii_lowercase();
    if host.parse::<std::net::IpAddr>().is_ok() || host.starts_with('[') {
        return host;
    }
    let labels: Vec<&str> = host.split('.').collect();
    if labels.len() <= 2 {
        return host;
    }
    let n = labels.len();
    let keep = if labels[n - 1].len() == 2 && SECOND_LEVEL_SUFFIXES.contains(&labels[n - 2]) {
        3
    } else {
        2
    };
    labels[n - keep..].join(".")
}

/// Wraps a fetcher and enforces a minimum spacing between consecutive
/// requests. One instance is meant to serve a single host.
pub struct PoliteFetcher<F> {
    inner: F,
    min_interval: Duration,
    last: Mutex<Option<Instant>>,
    log: Mutex<Vec<Instant>>,
}

impl<F: HttpFetcher> PoliteFetcher<F> {
    pub fn new(inner: F, min_interval: Duration) -> Self {
        Self {
            inner,
            min_interval,
            last: Mutex::new(None),
            log: Mutex::new(Vec::new()),
        }
    }

    /// Build from a requests-per-second rate; a non-positive rate disables spacing.
    pub fn with_rate(inner: F, requests_per_second: f64) -> Self {
        let interval = if requests_per_second > 0.0 {
            Duration::from_secs_f64(1.0 / requests_per_second)
        } else {
            Duration::ZERO
        };
        Self::new(inner, interval)
    }

    /// Send times of every request issued through this wrapper.
    pub fn request_times(&self) -> Vec<Instant> {
        self.log.lock().expect("request log poisoned").clone()
    }

    pub fn into_inner(self) -> F {
        self.inner
    }
}

impl<F: HttpFetcher> HttpFetcher for PoliteFetcher<F> {
    fn get(&self, url: &str, headers: &[(&str, &str)]) -> Result<HttpResponse, TransportError> {
        {
            let mut last = self.last.lock().expect("rate limiter poisoned");
            if let Some(prev) = *last {
                let due = prev + self.min_interval;
                let now = Instant::now();
                if due > now {
                    std::thread::sleep(due - now);
                }
            }
            let sent = Instant::now();
            *last = Some(sent);
            self.log.lock().expect("request log poisoned").push(sent);
        }
        self.inner.get(url, headers)
    }
}

#[cfg(feature = "net")]
pub use self::ureq_impl::UreqFetcher;

#[cfg(feature = "net")]
mod ureq_impl {
    use std::io::Read;
    use std::time::Duration;

    use super::{HttpFetcher, HttpResponse, TransportError};

    const DEFAULT_BODY_LIMIT: u64 = 64 * 1024 * 1024;

    /// Production fetcher backed by `ureq`. Never follows redirects and never
    /// turns 4xx/5xx into errors.
    #[derive(Clone)]
    pub struct UreqFetcher {
        agent: ureq::Agent,
        body_limit: u64,
    }

    impl UreqFetcher {
        pub fn new(user_agent: &str, timeout: Duration) -> Self {
            let config = ureq::Agent::config_builder()
                .max_redirects(0)
                .http_status_as_error(false)
                .timeout_global(Some(timeout))
                .user_agent(user_agent)
                .build();
            Self {
                agent: config.into(),
                body_limit: DEFAULT_BODY_LIMIT,
            }
        }
    }

    impl HttpFetcher for UreqFetcher {
        fn get(&self, url: &str, headers: &[(&str, &str)]) -> Result<HttpResponse, TransportError> {
            let mut request = self.agent.get(url);
            for (k, v) in headers {
                request = request.header(*k, *v);
            }
            let response = request.call().map_err(map_error)?;
            let status = response.status().as_u16();
            let headers = response
                .headers()
                .iter()
                .map(|(k, v)| (k.as_str().to_string(), String::from_utf8_lossy(v.as_bytes()).into_owned()))
                .collect();
            let mut body = Vec::new();
            response
                .into_body()
                .into_reader()
                .take(self.body_limit)
                .read_to_end(&mut body)
                .map_err(|e| TransportError::Other(e.to_string()))?;
            Ok(HttpResponse { status, headers, body })
        }
    }

    fn map_error(err: ureq::Error) -> TransportError {
        match err {
            ureq::Error::Timeout(_) => TransportError::Timeout,
            ureq::Error::HostNotFound => TransportError::HostNotFound,
            ureq::Error::BadUri(u) => TransportError::InvalidUrl(u),
            ureq::Error::Tls(msg) => TransportError::Tls(msg.to_string()),
            ureq::Error::Io(e) if e.kind() == std::io::ErrorKind::ConnectionRefused => {
                TransportError::ConnectionRefused
            }
            ureq::Error::Io(e) if e.kind() == std::io::ErrorKind::TimedOut => TransportError::Timeout,
            other => {
                let text = other.to_string();
                if text.to_ascii_lowercase().contains("tls") || text.contains("certificate") {
                    TransportError::Tls(text)
                } else {
                    TransportError::Other(text)
                }
            }
        }
    }
}
