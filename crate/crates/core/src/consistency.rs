//! Consistency regions and the consistency mapper.
//!
//! A region spec maps the distance between a client and the data it touches
//! onto read/write consistency levels through a list of concentric bands.
//! The mapper picks the spec for a key (longest matching prefix, else the
//! global default), finds the band for the client's distance, and hands the
//! query to the local store with that level.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::store::{check_level, OpKind, Query, QueryError, Replication};
use crate::topology::{geo_distance, GeoPoint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ConsistencyLevel {
    One,
    Two,
    Quorum,
    All,
}

impl ConsistencyLevel {
    pub const ALL_LEVELS: [ConsistencyLevel; 4] = [Self::One, Self::Two, Self::Quorum, Self::All];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::One => "ONE",
            Self::Two => "TWO",
            Self::Quorum => "QUORUM",
            Self::All => "ALL",
        }
    }
}

impl fmt::Display for ConsistencyLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ConsistencyLevel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "ONE" => Ok(Self::One),
            "TWO" => Ok(Self::Two),
            "QUORUM" => Ok(Self::Quorum),
            "ALL" => Ok(Self::All),
            other => Err(format!("unknown consistency level `{other}`")),
        }
    }
}

/// Who is asking, and from where.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ClientContext {
    pub client_id: String,
    pub client_geo: GeoPoint,
    /// Application-specific context; ignored by the region mapper but
    /// visible to [`ContextHook`]s.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub tags: BTreeMap<String, String>,
}

impl ClientContext {
    pub fn new(client_id: &str, client_geo: GeoPoint) -> Self {
        Self {
            client_id: client_id.to_owned(),
            client_geo,
            tags: BTreeMap::new(),
        }
    }
}

/// Location of the data source a record describes.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DataContext {
    pub data_geo: GeoPoint,
}

impl DataContext {
    pub fn at(x: f64, y: f64) -> Self {
        Self {
            data_geo: GeoPoint::new(x, y),
        }
    }
}

/// One annulus: clients with distance `d <= max_radius_m` (and outside every
/// inner band) get these levels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Band {
    pub max_radius_m: f64,
    pub read: ConsistencyLevel,
    pub write: ConsistencyLevel,
}

impl Band {
    pub fn new(max_radius_m: f64, read: ConsistencyLevel, write: ConsistencyLevel) -> Self {
        Self {
            max_radius_m,
            read,
            write,
        }
    }

    pub fn level(&self, op: OpKind) -> ConsistencyLevel {
        match op {
            OpKind::Read => self.read,
            OpKind::Write => self.write,
        }
    }
}

/// Level lookup for a band and an operation kind.
pub fn get_level(band: &Band, op: OpKind) -> ConsistencyLevel {
    band.level(op)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyRegionSpec {
    /// Exact key or key prefix; the empty string matches every key.
    pub keyspace: String,
    pub bands: Vec<Band>,
}

impl ConsistencyRegionSpec {
    pub fn new(keyspace: &str, bands: Vec<Band>) -> Result<Self, RegionError> {
        let spec = Self {
            keyspace: keyspace.to_owned(),
            bands,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// A single unbounded band with fixed levels.
    pub fn uniform(keyspace: &str, read: ConsistencyLevel, write: ConsistencyLevel) -> Self {
        Self {
            keyspace: keyspace.to_owned(),
            bands: vec![Band::new(f64::INFINITY, read, write)],
        }
    }

    fn validate(&self) -> Result<(), RegionError> {
        let ks = || self.keyspace.clone();
        let Some(last) = self.bands.last() else {
            return Err(RegionError::NoBands(ks()));
        };
        if last.max_radius_m != f64::INFINITY {
            return Err(RegionError::MissingOuterBand(ks()));
        }
        let mut prev = 0.0;
        for band in &self.bands {
            if band.max_radius_m.is_nan() || band.max_radius_m <= prev {
                return Err(RegionError::BandOrder {
                    keyspace: ks(),
                    radius: band.max_radius_m,
                });
            }
            prev = band.max_radius_m;
        }
        Ok(())
    }

    pub fn band_for_distance(&self, distance_m: f64) -> &Band {
        self.bands
            .iter()
            .find(|b| distance_m <= b.max_radius_m)
            .unwrap_or_else(|| self.bands.last().expect("validated non-empty"))
    }
}

/// Extension point for non-geographic context. The first hook returning a
/// level overrides the region lookup.
pub trait ContextHook: Send + Sync {
    fn level(&self, query: &Query, op: OpKind, data_ctx: Option<&DataContext>) -> Option<ConsistencyLevel>;
}

#[derive(Debug, Error, PartialEq)]
pub enum RegionError {
    #[error("spec `{0}` has no bands")]
    NoBands(String),
    #[error("spec `{0}`: last band must be unbounded (radius_m null)")]
    MissingOuterBand(String),
    #[error("spec `{keyspace}`: band radii must be positive and strictly increasing (got {radius})")]
    BandOrder { keyspace: String, radius: f64 },
    #[error("duplicate keyspace `{0}`")]
    DuplicateKeyspace(String),
    #[error("regions file has no `default` spec, so keys outside every keyspace would match nothing")]
    NoMatchingSpec,
    #[error("invalid regions JSON: {0}")]
    Parse(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

/// The full set of region specs plus the mandatory global default.
#[derive(Clone)]
pub struct RegionSpecs {
    /// Sorted by descending keyspace length for longest-prefix matching.
    specs: Vec<ConsistencyRegionSpec>,
    default: ConsistencyRegionSpec,
    hooks: Vec<Arc<dyn ContextHook>>,
}

impl fmt::Debug for RegionSpecs {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RegionSpecs")
            .field("specs", &self.specs)
            .field("default", &self.default)
            .field("hooks", &self.hooks.len())
            .finish()
    }
}

impl RegionSpecs {
    pub fn new(mut specs: Vec<ConsistencyRegionSpec>, mut default: ConsistencyRegionSpec) -> Result<Self, RegionError> {
        default.keyspace.clear();
        default.validate()?;
        for spec in &specs {
            spec.validate()?;
        }
        specs.sort_by(|a, b| {
            b.keyspace
                .len()
                .cmp(&a.keyspace.len())
                .then_with(|| a.keyspace.cmp(&b.keyspace))
        });
        if let Some(w) = specs.windows(2).find(|w| w[0].keyspace == w[1].keyspace) {
            return Err(RegionError::DuplicateKeyspace(w[0].keyspace.clone()));
        }
        Ok(Self {
            specs,
            default,
            hooks: Vec::new(),
        })
    }

    /// Every key gets the same levels regardless of context.
    pub fn fixed(read: ConsistencyLevel, write: ConsistencyLevel) -> Self {
        Self {
            specs: Vec::new(),
            default: ConsistencyRegionSpec::uniform("", read, write),
            hooks: Vec::new(),
        }
    }

    pub fn with_hook(mut self, hook: Arc<dyn ContextHook>) -> Self {
        self.hooks.push(hook);
        self
    }

    pub fn spec_for(&self, key: &str) -> &ConsistencyRegionSpec {
        self.specs
            .iter()
            .find(|s| key.starts_with(&s.keyspace))
            .unwrap_or(&self.default)
    }

    /// The band whose annulus contains the client's distance to the data.
    /// Without a data location the client is treated as infinitely far away.
    pub fn get_region(&self, key: &str, client_ctx: &ClientContext, data_ctx: Option<&DataContext>) -> &Band {
        let distance = data_ctx.map_or(f64::INFINITY, |d| geo_distance(client_ctx.client_geo, d.data_geo));
        self.spec_for(key).band_for_distance(distance)
    }

    pub fn from_json(text: &str) -> Result<Self, RegionError> {
        let file: RegionsFile = serde_json::from_str(text).map_err(|e| RegionError::Parse(e.to_string()))?;
        let specs = file
            .specs
            .into_iter()
            .map(SpecEntry::into_spec)
            .collect::<Result<Vec<_>, _>>()?;
        let default = file.default.ok_or(RegionError::NoMatchingSpec)?.into_spec()?;
        Self::new(specs, default)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RegionError> {
        let path = path.as_ref();
        let io = |message: String| RegionError::Io {
            path: path.display().to_string(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| io(e.to_string()))?;
        Self::from_json(&text).map_err(|e| io(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        let file = RegionsFile {
            specs: self.specs.iter().map(SpecEntry::from_spec).collect(),
            default: Some(SpecEntry::from_spec(&self.default)),
        };
        serde_json::to_string_pretty(&file).expect("regions serialize")
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RegionsFile {
    #[serde(default)]
    specs: Vec<SpecEntry>,
    default: Option<SpecEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecEntry {
    #[serde(default, skip_serializing_if = "String::is_empty")]
    keyspace: String,
    bands: Vec<BandEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BandEntry {
    radius_m: Option<f64>,
    read: ConsistencyLevel,
    write: ConsistencyLevel,
}

impl SpecEntry {
    fn into_spec(self) -> Result<ConsistencyRegionSpec, RegionError> {
        let bands = self
            .bands
            .into_iter()
            .map(|b| Band::new(b.radius_m.unwrap_or(f64::INFINITY), b.read, b.write))
            .collect();
        ConsistencyRegionSpec::new(&self.keyspace, bands)
    }

    fn from_spec(spec: &ConsistencyRegionSpec) -> Self {
        Self {
            keyspace: spec.keyspace.clone(),
            bands: spec
                .bands
                .iter()
                .map(|b| BandEntry {
                    radius_m: b.max_radius_m.is_finite().then_some(b.max_radius_m),
                    read: b.read,
                    write: b.write,
                })
                .collect(),
        }
    }
}

/// What the mapper needs from the store instance it is plugged into.
pub trait StoreHandle {
    type Pending;

    /// The record's current data context as known locally, falling back to
    /// the placement-time location.
    fn data_context(&self, key: &str) -> Option<DataContext>;

    /// Replication of the key (or what a create would get).
    fn replication(&self, key: &str) -> Replication;

    fn execute(&mut self, query: &Query, level: ConsistencyLevel) -> Result<Self::Pending, QueryError>;
}

/// Region lookup and feasibility check without executing anything.
pub fn resolve_level<S: StoreHandle>(
    query: &Query,
    specs: &RegionSpecs,
    store: &S,
) -> Result<ConsistencyLevel, QueryError> {
    let op = query
        .kind
        .op_kind()
        .ok_or(QueryError::UnsupportedOperation(query.kind))?;
    query.validate()?;
    let data_ctx = match query.kind {
        crate::store::QueryKind::Create => query.data_ctx,
        _ => store.data_context(&query.key),
    };
    let hooked = specs.hooks.iter().find_map(|h| h.level(query, op, data_ctx.as_ref()));
    let level = match hooked {
        Some(level) => level,
        None => get_level(specs.get_region(&query.key, &query.client_ctx, data_ctx.as_ref()), op),
    };
    check_level(level, store.replication(&query.key))?;
    Ok(level)
}

/// Maps the query onto a consistency level and executes it on the local
/// store instance.
pub fn map_and_execute<S: StoreHandle>(
    query: &Query,
    specs: &RegionSpecs,
    store: &mut S,
) -> Result<S::Pending, QueryError> {
    let level = resolve_level(query, specs, store)?;
    store.execute(query, level)
}
