//! Read-latest workload generation and latency percentile statistics.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Geometric;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::consistency::{ClientContext, ConsistencyLevel, DataContext};
use crate::store::{OpKind, Query};
use crate::topology::GeoPoint;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientPosition {
    pub client_id: String,
    pub geo: GeoPoint,
    #[serde(default = "one")]
    pub weight: f64,
    /// Node the client talks to. Falls back to the node nearest `geo`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attach: Option<String>,
}

fn one() -> f64 {
    1.0
}

fn default_read_fraction() -> f64 {
    0.95
}

fn default_recency_skew() -> f64 {
    0.3
}

fn default_prefix() -> String {
    "user".to_owned()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub op_count: usize,
    #[serde(default = "default_read_fraction")]
    pub read_fraction: f64,
    #[serde(default = "default_prefix")]
    pub key_prefix: String,
    /// Success probability of the geometric offset back from the newest
    /// key. Values of 1 or more always pick the newest key.
    #[serde(default = "default_recency_skew")]
    pub recency_skew: f64,
    pub client_positions: Vec<ClientPosition>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_read_level: Option<ConsistencyLevel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_write_level: Option<ConsistencyLevel>,
    #[serde(default)]
    pub seed: u64,
    /// Location stamped on every inserted record.
    #[serde(default)]
    pub data_geo: GeoPoint,
}

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("op_count must be at least 1")]
    NoOps,
    #[error("read_fraction {0} is outside [0, 1]")]
    BadReadFraction(f64),
    #[error("recency_skew must be positive and finite, got {0}")]
    BadSkew(f64),
    #[error("at least one client position is required")]
    NoClients,
    #[error("client weights must be non-negative, finite and not all zero")]
    BadWeights,
    #[error("empty sample")]
    EmptySample,
    #[error("invalid workload file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl WorkloadSpec {
    /// A single client at `geo` with default mix and skew.
    pub fn single_client(op_count: usize, client_id: &str, geo: GeoPoint, seed: u64) -> Self {
        Self {
            op_count,
            read_fraction: default_read_fraction(),
            key_prefix: default_prefix(),
            recency_skew: default_recency_skew(),
            client_positions: vec![ClientPosition {
                client_id: client_id.to_owned(),
                geo,
                weight: 1.0,
                attach: None,
            }],
            fixed_read_level: None,
            fixed_write_level: None,
            seed,
            data_geo: GeoPoint::default(),
        }
    }

    pub fn insert_fraction(&self) -> f64 {
        1.0 - self.read_fraction
    }

    pub fn validate(&self) -> Result<(), WorkloadError> {
        if self.op_count == 0 {
            return Err(WorkloadError::NoOps);
        }
        if !(0.0..=1.0).contains(&self.read_fraction) {
            return Err(WorkloadError::BadReadFraction(self.read_fraction));
        }
        if !(self.recency_skew.is_finite() && self.recency_skew > 0.0) {
            return Err(WorkloadError::BadSkew(self.recency_skew));
        }
        if self.client_positions.is_empty() {
            return Err(WorkloadError::NoClients);
        }
        self.client_weights()?;
        Ok(())
    }

    fn client_weights(&self) -> Result<WeightedIndex<f64>, WorkloadError> {
        WeightedIndex::new(self.client_positions.iter().map(|c| c.weight)).map_err(|_| WorkloadError::BadWeights)
    }

    pub fn from_json(text: &str) -> Result<Self, WorkloadError> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, WorkloadError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| WorkloadError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("workload spec serializes")
    }

    /// Level override for `op`, if the spec pins one.
    pub fn level_for(&self, op: OpKind) -> Option<ConsistencyLevel> {
        match op {
            OpKind::Read => self.fixed_read_level,
            OpKind::Write => self.fixed_write_level,
        }
    }

    pub fn key(&self, index: u64) -> String {
        format!("{}{index}", self.key_prefix)
    }
}

/// Generates the op sequence for `spec`.
///
/// Inserts create `<prefix>1`, `<prefix>2`, ... in order. A read picks
/// `<prefix>{N - J}` where `N` is the newest index and `J` is geometric,
/// clamped so that the key exists. The first op is always an insert.
pub fn generate_ops(spec: &WorkloadSpec) -> Result<Vec<Query>, WorkloadError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let clients = spec.client_weights()?;
    let offset = Geometric::new(spec.recency_skew.min(1.0)).map_err(|_| WorkloadError::BadSkew(spec.recency_skew))?;
    let data_ctx = DataContext {
        data_geo: spec.data_geo,
    };

    let mut newest: u64 = 0;
    let mut ops = Vec::with_capacity(spec.op_count);
    for _ in 0..spec.op_count {
        let pos = &spec.client_positions[clients.sample(&mut rng)];
        let ctx = ClientContext::new(&pos.client_id, pos.geo);
        let read = newest > 0 && rng.random::<f64>() < spec.read_fraction;
        if read {
            let back = offset.sample(&mut rng).min(newest - 1);
            ops.push(Query::read(&spec.key(newest - back), ctx));
        } else {
            newest += 1;
            let value = format!("v{newest}").into_bytes();
            ops.push(Query::create(&spec.key(newest), value, ctx, data_ctx));
        }
    }
    Ok(ops)
}

/// [`generate_ops`] paired with the spec's level overrides, ready for a
/// closed-loop run.
pub fn closed_loop_ops(spec: &WorkloadSpec) -> Result<Vec<(Query, Option<ConsistencyLevel>)>, WorkloadError> {
    Ok(generate_ops(spec)?
        .into_iter()
        .map(|q| {
            let level = q.kind.op_kind().and_then(|op| spec.level_for(op));
            (q, level)
        })
        .collect())
}

/// Nearest-rank percentile of an ascending sample.
pub fn percentile(sorted: &[f64], p: f64) -> Result<f64, WorkloadError> {
    if sorted.is_empty() {
        return Err(WorkloadError::EmptySample);
    }
    let rank = (p / 100.0 * sorted.len() as f64).ceil() as usize;
    Ok(sorted[rank.clamp(1, sorted.len()) - 1])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub min: f64,
    pub p25: f64,
    pub p50: f64,
    pub p75: f64,
    pub p95: f64,
    pub p99: f64,
    pub count: usize,
}

impl Summary {
    pub fn of(sample: &[f64]) -> Result<Self, WorkloadError> {
        let mut sorted = sample.to_vec();
        sorted.sort_by(f64::total_cmp);
        let p = |q| percentile(&sorted, q);
        Ok(Self {
            min: p(0.0)?,
            p25: p(25.0)?,
            p50: p(50.0)?,
            p75: p(75.0)?,
            p95: p(95.0)?,
            p99: p(99.0)?,
            count: sorted.len(),
        })
    }

    /// `setting,level,op_kind,min,p25,p50,p75,p95,p99,count`
    pub fn csv_row(&self, setting: &str, level: ConsistencyLevel, op: OpKind) -> String {
        let mut row = format!("{setting},{level},{op}");
        for v in [self.min, self.p25, self.p50, self.p75, self.p95, self.p99] {
            write!(row, ",{v}").unwrap();
        }
        write!(row, ",{}", self.count).unwrap();
        row
    }
}

pub const CSV_HEADER: &str = "setting,level,op_kind,min,p25,p50,p75,p95,p99,count";

/// Latencies collected per operation direction.
#[derive(Debug, Clone, Default)]
pub struct LatencyStats {
    samples: BTreeMap<OpKind, Vec<f64>>,
}

impl LatencyStats {
    pub fn record(&mut self, op: OpKind, latency_ms: f64) {
        self.samples.entry(op).or_default().push(latency_ms);
    }

    pub fn samples(&self, op: OpKind) -> &[f64] {
        self.samples.get(&op).map_or(&[], Vec::as_slice)
    }

    pub fn summary(&self, op: OpKind) -> Result<Summary, WorkloadError> {
        Summary::of(self.samples(op))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::QueryKind;
    use proptest::prelude::*;

    fn spec(op_count: usize, seed: u64) -> WorkloadSpec {
        WorkloadSpec::single_client(op_count, "c", GeoPoint::new(0.0, 0.0), seed)
    }

    fn index(spec: &WorkloadSpec, q: &Query) -> u64 {
        q.key[spec.key_prefix.len()..].parse().unwrap()
    }

    #[test]
    fn percentile_examples() {
        assert_eq!(percentile(&[10.0], 50.0).unwrap(), 10.0);
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(percentile(&s, 25.0).unwrap(), 1.0);
        assert_eq!(percentile(&s, 99.0).unwrap(), 4.0);
        assert_eq!(percentile(&s, 50.0).unwrap(), 2.0);
        assert_eq!(percentile(&s, 0.0).unwrap(), 1.0);
        assert!(matches!(percentile(&[], 50.0), Err(WorkloadError::EmptySample)));
    }

    #[test]
    fn all_inserts_when_no_reads() {
        let mut s = spec(50, 1);
        s.read_fraction = 0.0;
        let ops = generate_ops(&s).unwrap();
        assert!(ops.iter().all(|q| q.kind == QueryKind::Create));
        let idx: Vec<u64> = ops.iter().map(|q| index(&s, q)).collect();
        assert!(idx.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn seeded_and_seed_sensitive() {
        let a = generate_ops(&spec(500, 7)).unwrap();
        assert_eq!(a, generate_ops(&spec(500, 7)).unwrap());
        assert_ne!(a, generate_ops(&spec(500, 8)).unwrap());
    }

    #[test]
    fn first_op_inserts_even_with_only_reads() {
        let mut s = spec(20, 3);
        s.read_fraction = 1.0;
        let ops = generate_ops(&s).unwrap();
        assert_eq!(ops[0].kind, QueryKind::Create);
        assert!(ops[1..].iter().all(|q| q.kind == QueryKind::Read && q.key == "user1"));
    }

    #[test]
    fn high_skew_reads_the_newest_key() {
        let mut s = spec(10_000, 11);
        s.recency_skew = 50.0;
        let ops = generate_ops(&s).unwrap();
        let mut newest = 0;
        let mut offsets: BTreeMap<u64, usize> = BTreeMap::new();
        for q in &ops {
            let i = index(&s, q);
            match q.kind {
                QueryKind::Create => newest = i,
                _ => *offsets.entry(newest - i).or_default() += 1,
            }
        }
        let mode = offsets.iter().max_by_key(|(_, n)| **n).map(|(o, _)| *o);
        assert_eq!(mode, Some(0));
    }

    #[test]
    fn default_skew_mode_is_newest_but_spread() {
        let ops = generate_ops(&spec(10_000, 5)).unwrap();
        let s = spec(0, 0);
        let mut newest = 0;
        let mut counts = [0usize; 4];
        for q in &ops {
            let i = index(&s, q);
            if q.kind == QueryKind::Create {
                newest = i;
            } else if newest - i < 4 {
                counts[(newest - i) as usize] += 1;
            }
        }
        // geometric(0.3) pmf falls by 0.7 per step
        assert!(counts[0] > counts[1] && counts[1] > counts[2] && counts[2] > counts[3]);
    }

    #[test]
    fn weighted_clients() {
        let mut s = spec(4000, 2);
        s.client_positions.push(ClientPosition {
            client_id: "far".into(),
            geo: GeoPoint::new(800.0, 0.0),
            weight: 3.0,
            attach: None,
        });
        let ops = generate_ops(&s).unwrap();
        let far = ops.iter().filter(|q| q.client_ctx.client_id == "far").count();
        let share = far as f64 / ops.len() as f64;
        assert!((share - 0.75).abs() < 0.03, "{share}");
    }

    #[test]
    fn validation_and_file_format() {
        assert!(matches!(spec(0, 0).validate(), Err(WorkloadError::NoOps)));
        let mut s = spec(3, 0);
        s.recency_skew = 0.0;
        assert!(matches!(s.validate(), Err(WorkloadError::BadSkew(_))));
        s.recency_skew = 0.3;
        s.client_positions[0].weight = 0.0;
        assert!(matches!(s.validate(), Err(WorkloadError::BadWeights)));
        let parsed = WorkloadSpec::from_json(
            r#"{"op_count": 10, "client_positions": [{"client_id": "c", "geo": [1, 2]}],
                "fixed_read_level": "ALL"}"#,
        )
        .unwrap();
        assert_eq!(parsed.read_fraction, 0.95);
        assert_eq!(parsed.recency_skew, 0.3);
        assert_eq!(parsed.level_for(OpKind::Read), Some(ConsistencyLevel::All));
        assert_eq!(parsed.level_for(OpKind::Write), None);
        assert_eq!(WorkloadSpec::from_json(&parsed.to_json()).unwrap(), parsed);
    }

    #[test]
    fn summary_row() {
        let sum = Summary::of(&[34.0, 10.0, 10.0, 12.5]).unwrap();
        assert_eq!(
            sum.csv_row("star6-low", ConsistencyLevel::One, OpKind::Read),
            "star6-low,ONE,read,10,10,10,12.5,34,34,4"
        );
    }

    proptest! {
        #[test]
        fn reads_target_existing_keys(seed in any::<u64>(), skew in 0.01f64..3.0, rf in 0.0f64..=1.0) {
            let mut s = spec(300, seed);
            s.recency_skew = skew;
            s.read_fraction = rf;
            let mut newest = 0;
            for q in generate_ops(&s).unwrap() {
                let i = index(&s, &q);
                match q.kind {
                    QueryKind::Create => { prop_assert_eq!(i, newest + 1); newest = i; }
                    _ => prop_assert!(i >= 1 && i <= newest),
                }
            }
        }

        #[test]
        fn percentiles_monotone(mut xs in prop::collection::vec(0.0f64..1e4, 1..200), extra in 0.0f64..1e4) {
            xs.sort_by(f64::total_cmp);
            let ps = [0.0, 25.0, 50.0, 75.0, 95.0, 99.0, 100.0];
            let vals: Vec<f64> = ps.iter().map(|&p| percentile(&xs, p).unwrap()).collect();
            prop_assert!(vals.windows(2).all(|w| w[0] <= w[1]));
            let mut grown = xs.clone();
            grown.push(xs[xs.len() - 1] + extra);
            for &p in &ps {
                prop_assert!(percentile(&grown, p).unwrap() >= percentile(&xs, p).unwrap());
            }
        }
    }
}
