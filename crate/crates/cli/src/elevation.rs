//! Station elevations from a point-query web service, with an on-disk
//! cache keyed on coordinates rounded to 5 decimals.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde_json::Value;
use thiserror::Error;
use wxkrig_core::geo::Station;

pub const DEFAULT_ENDPOINT: &str = "https://epqs.nationalmap.gov/v1/json";
pub const CACHE_ENV: &str = "WXKRIG_CACHE_DIR";
pub const CACHE_FILE: &str = "elevations.csv";
pub const MAX_IN_FLIGHT: usize = 4;

#[derive(Debug, Error)]
pub enum ElevationError {
    #[error("offline and not cached: {}", .0.join(", "))]
    OfflineMiss(Vec<String>),
    #[error("elevation lookup failed for {} station(s): {}", .0.len(), summarize(.0))]
    Failed(Vec<StationFailure>),
    #[error("cache {path}: {message}")]
    Cache { path: PathBuf, message: String },
}

fn summarize(f: &[StationFailure]) -> String {
    f.iter().map(|x| format!("{} ({})", x.station_id, x.error)).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FetchError {
    #[error("network: {0}")]
    Network(String),
    #[error("service: {0}")]
    Service(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationFailure {
    pub station_id: String,
    pub error: FetchError,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Service,
    File,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Service => "service",
            Source::File => "file",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CacheEntry {
    pub elev_m: f64,
    pub source: Source,
}

/// Coordinates in units of 1e-5 degree.
pub type CacheKey = (i64, i64);

pub fn cache_key(lat: f64, lon: f64) -> CacheKey {
    ((lat * 1e5).round() as i64, (lon * 1e5).round() as i64)
}

fn key_str(k: i64) -> String {
    let sign = if k < 0 { "-" } else { "" };
    let a = k.unsigned_abs();
    format!("{sign}{}.{:05}", a / 100_000, a % 100_000)
}

/// Default cache directory: `$WXKRIG_CACHE_DIR`, else `$HOME/.cache/wxkrig`,
/// else `.wxkrig-cache`.
pub fn default_cache_dir() -> PathBuf {
    if let Some(d) = std::env::var_os(CACHE_ENV) {
        return PathBuf::from(d);
    }
    match std::env::var_os("HOME") {
        Some(h) => Path::new(&h).join(".cache").join("wxkrig"),
        None => PathBuf::from(".wxkrig-cache"),
    }
}

#[derive(Debug, Clone, Default)]
pub struct ElevationCache {
    path: Option<PathBuf>,
    entries: BTreeMap<CacheKey, CacheEntry>,
}

impl ElevationCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens `dir/elevations.csv`, starting empty if it does not exist.
    pub fn open(dir: &Path) -> Result<Self, ElevationError> {
        let path = dir.join(CACHE_FILE);
        let mut cache = ElevationCache {
            path: Some(path.clone()),
            entries: BTreeMap::new(),
        };
        if !path.exists() {
            return Ok(cache);
        }
        let bad = |message: String| ElevationError::Cache {
            path: path.clone(),
            message,
        };
        let mut rdr = csv::Reader::from_path(&path).map_err(|e| bad(e.to_string()))?;
        for rec in rdr.records() {
            let rec = rec.map_err(|e| bad(e.to_string()))?;
            let num = |i: usize| rec.get(i).and_then(|s| s.parse::<f64>().ok());
            let (Some(lat), Some(lon), Some(elev_m)) = (num(0), num(1), num(2)) else {
                return Err(bad(format!("malformed record {rec:?}")));
            };
            let source = match rec.get(3) {
                Some("file") => Source::File,
                _ => Source::Service,
            };
            cache.entries.insert(cache_key(lat, lon), CacheEntry { elev_m, source });
        }
        Ok(cache)
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, lat: f64, lon: f64) -> Option<CacheEntry> {
        self.entries.get(&cache_key(lat, lon)).copied()
    }

    pub fn insert(&mut self, lat: f64, lon: f64, elev_m: f64, source: Source) {
        self.entries.insert(cache_key(lat, lon), CacheEntry { elev_m, source });
    }

    /// Writes the cache back to its file (sorted, so byte-stable). No-op for
    /// an in-memory cache.
    pub fn save(&self) -> Result<(), ElevationError> {
        let Some(path) = &self.path else {
            return Ok(());
        };
        let bad = |message: String| ElevationError::Cache {
            path: path.clone(),
            message,
        };
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| bad(e.to_string()))?;
        }
        let mut body = String::from("lat,lon,elev_m,source\n");
        for ((la, lo), e) in &self.entries {
            body.push_str(&format!("{},{},{},{}\n", key_str(*la), key_str(*lo), e.elev_m, e.source));
        }
        let tmp = path.with_extension("csv.tmp");
        fs::File::create(&tmp)
            .and_then(|mut f| f.write_all(body.as_bytes()))
            .and_then(|_| fs::rename(&tmp, path))
            .map_err(|e| bad(e.to_string()))
    }
}

/// Blocking HTTP client for the elevation service.
#[derive(Debug, Clone)]
pub struct ElevationClient {
    pub endpoint: String,
    /// Extra attempts after the first on network failure.
    pub retries: u32,
    /// Delay before the first retry; doubles each time.
    pub backoff: Duration,
    pub timeout: Duration,
}

impl ElevationClient {
    pub fn new(endpoint: impl Into<String>) -> Self {
        ElevationClient {
            endpoint: endpoint.into(),
            retries: 3,
            backoff: Duration::from_millis(250),
            timeout: Duration::from_secs(20),
        }
    }

    pub fn url(&self, lat: f64, lon: f64) -> String {
        let sep = if self.endpoint.contains('?') { '&' } else { '?' };
        format!("{}{sep}x={lon}&y={lat}&wkid=4326&units=Meters&includeDate=false", self.endpoint)
    }

    fn agent(&self) -> ureq::Agent {
        ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .build()
            .into()
    }

    fn attempt(&self, agent: &ureq::Agent, url: &str) -> Result<f64, FetchError> {
        let mut resp = agent.get(url).call().map_err(|e| match e {
            ureq::Error::StatusCode(code) if code < 500 && code != 429 => {
                FetchError::Service(format!("HTTP {code}"))
            }
            other => FetchError::Network(other.to_string()),
        })?;
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| FetchError::Network(e.to_string()))?;
        parse_elevation(&body)
    }

    /// One station's elevation, retrying network failures with exponential
    /// backoff. Service errors are not retried.
    pub fn fetch(&self, lat: f64, lon: f64) -> Result<f64, FetchError> {
        let agent = self.agent();
        let url = self.url(lat, lon);
        let mut delay = self.backoff;
        let mut attempt = 0;
        loop {
            match self.attempt(&agent, &url) {
                Err(FetchError::Network(msg)) if attempt < self.retries => {
                    log::warn!("{url}: {msg}; retrying in {delay:?}");
                    std::thread::sleep(delay);
                    delay *= 2;
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

fn find_number(v: &Value) -> Option<f64> {
    match v {
        Value::Object(map) => {
            for key in ["value", "elevation", "Elevation"] {
                match map.get(key) {
                    Some(Value::Number(n)) => return n.as_f64(),
                    Some(Value::String(s)) => {
                        if let Ok(x) = s.trim().parse() {
                            return Some(x);
                        }
                    }
                    _ => {}
                }
            }
            map.values().find_map(find_number)
        }
        Value::Array(items) => items.iter().find_map(find_number),
        _ => None,
    }
}

/// Extracts the elevation from a service response: the first `value` or
/// `elevation` field holding a number or a numeric string.
pub fn parse_elevation(body: &str) -> Result<f64, FetchError> {
    let v: Value = serde_json::from_str(body).map_err(|e| FetchError::Service(format!("malformed JSON: {e}")))?;
    let x = find_number(&v).ok_or_else(|| FetchError::Service("no elevation in response".into()))?;
    // the service reports points without coverage as a large negative sentinel
    if !x.is_finite() || x <= -100_000.0 {
        return Err(FetchError::Service(format!("no data at point ({x})")));
    }
    Ok(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FetchSummary {
    pub already_known: usize,
    pub cache_hits: usize,
    pub fetched: usize,
}

/// Fills in missing station elevations from the cache, then (unless
/// `client` is `None`, meaning offline) from the service with at most
/// [`MAX_IN_FLIGHT`] concurrent requests. Stations that already have an
/// elevation are recorded in the cache as file-sourced. Successful lookups
/// are kept in the cache even when others fail; the cache is not saved here.
pub fn fetch_elevations(
    stations: &mut [Station],
    client: Option<&ElevationClient>,
    cache: &mut ElevationCache,
) -> Result<FetchSummary, ElevationError> {
    let mut summary = FetchSummary::default();
    let mut pending = Vec::new();
    for (i, s) in stations.iter_mut().enumerate() {
        let (lat, lon) = (s.coord.lat, s.coord.lon);
        if let Some(e) = s.elev {
            summary.already_known += 1;
            if cache.get(lat, lon).is_none() {
                cache.insert(lat, lon, e, Source::File);
            }
        } else if let Some(hit) = cache.get(lat, lon) {
            s.elev = Some(hit.elev_m);
            summary.cache_hits += 1;
        } else {
            pending.push(i);
        }
    }
    if pending.is_empty() {
        return Ok(summary);
    }
    let Some(client) = client else {
        return Err(ElevationError::OfflineMiss(
            pending.iter().map(|&i| stations[i].id.clone()).collect(),
        ));
    };

    let next = AtomicUsize::new(0);
    let results = Mutex::new(Vec::with_capacity(pending.len()));
    std::thread::scope(|scope| {
        for _ in 0..MAX_IN_FLIGHT.min(pending.len()) {
            scope.spawn(|| loop {
                let j = next.fetch_add(1, Ordering::Relaxed);
                let Some(&i) = pending.get(j) else { break };
                let c = stations[i].coord;
                let r = client.fetch(c.lat, c.lon);
                results.lock().unwrap().push((i, r));
            });
        }
    });
    let mut results = results.into_inner().unwrap();
    results.sort_by_key(|r| r.0);

    let mut failures = Vec::new();
    for (i, r) in results {
        match r {
            Ok(e) => {
                let c = stations[i].coord;
                stations[i].elev = Some(e);
                cache.insert(c.lat, c.lon, e, Source::Service);
                summary.fetched += 1;
            }
            Err(error) => failures.push(StationFailure {
                station_id: stations[i].id.clone(),
                error,
            }),
        }
    }
    if failures.is_empty() {
        Ok(summary)
    } else {
        Err(ElevationError::Failed(failures))
    }
}
