//! Checkpoint database: evaluated configurations with their synthesis
//! artifacts, nearest-checkpoint matching and distance-weight learning.
//!
//! Distances are computed on per-parameter features: ordinal parameters use
//! their scaled rank, categorical parameters a 0/1 mismatch indicator.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use chrono::{DateTime, Duration, SecondsFormat, Utc};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value as Json;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::eval::EvaluationResult;
use crate::space::{Configuration, Domain, EncodedPoint, ParameterSpace};

pub const CHECKPOINT_FILE: &str = "checkpoints.jsonl";
pub const ARTIFACT_DIR: &str = "artifacts";

const WEIGHT_GRID: [f64; 5] = [0.1, 0.5, 1.0, 2.0, 10.0];
const WEIGHT_SWEEPS: usize = 3;
const WEIGHT_SUBSET: usize = 20;

/// Non-negative per-parameter weights, not all zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct DistanceWeights(Vec<f64>);

impl DistanceWeights {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "distance weights must be finite and >= 0".into(),
            ));
        }
        if w.iter().all(|&v| v == 0.0) {
            return Err(Error::InvalidArgument(
                "distance weights must not all be zero".into(),
            ));
        }
        Ok(Self(w))
    }

    pub fn ones(len: usize) -> Self {
        Self(vec![1.0; len])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }
}

impl TryFrom<Vec<f64>> for DistanceWeights {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<DistanceWeights> for Vec<f64> {
    fn from(w: DistanceWeights) -> Self {
        w.0
    }
}

/// Weighted squared distance over per-parameter features.
pub fn weighted_distance(
    space: &ParameterSpace,
    x: &Configuration,
    q: &Configuration,
    w: &DistanceWeights,
) -> Result<f64> {
    if x.levels().len() != space.len() || q.levels().len() != space.len() || w.len() != space.len()
    {
        return Err(Error::SpaceMismatch(format!(
            "expected {} parameters, got {}/{}/{}",
            space.len(),
            x.levels().len(),
            q.levels().len(),
            w.len()
        )));
    }
    Ok(distance_unchecked(space, x, q, w.as_slice()))
}

fn distance_unchecked(
    space: &ParameterSpace,
    x: &Configuration,
    q: &Configuration,
    w: &[f64],
) -> f64 {
    let mut total = 0.0;
    for (i, p) in space.params().iter().enumerate() {
        let (a, b) = (x.level(i), q.level(i));
        if a == b {
            continue;
        }
        let diff = match p.domain() {
            Domain::Categorical(_) => 1.0,
            Domain::Ordinal(_) => {
                let d = p.scaled_rank(a) - p.scaled_rank(b);
                d * d
            }
        };
        total += w[i] * diff;
    }
    total
}

/// Distance from a relaxed encoded point to a stored configuration, with its
/// gradient with respect to the encoded coordinates. Categorical blocks use
/// `||p - onehot(q)||^2 / 2`, which equals the mismatch indicator on one-hot
/// inputs.
pub fn relaxed_distance(
    space: &ParameterSpace,
    coords: &[f64],
    q: &Configuration,
    w: &DistanceWeights,
) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; coords.len()];
    let mut total = 0.0;
    for (i, p) in space.params().iter().enumerate() {
        let off = space.offset(i);
        let wi = w.as_slice()[i];
        match p.domain() {
            Domain::Categorical(vs) => {
                let target = q.level(i);
                let mut s = 0.0;
                for j in 0..vs.len() {
                    let t = if j == target { 1.0 } else { 0.0 };
                    let d = coords[off + j] - t;
                    s += d * d;
                    grad[off + j] = wi * d;
                }
                total += wi * 0.5 * s;
            }
            Domain::Ordinal(_) => {
                let d = coords[off] - p.scaled_rank(q.level(i));
                total += wi * d * d;
                grad[off] = 2.0 * wi * d;
            }
        }
    }
    (total, grad)
}

/// Synthesis minutes needed to build `x` starting from the checkpoint of
/// `reference` (a full build when absent).
pub trait SynthesisTimeModel: Sync {
    fn synthesis_minutes(&self, x: &Configuration, reference: Option<&Configuration>) -> f64;
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointRecord {
    pub config: Configuration,
    pub encoded: EncodedPoint,
    pub metrics: EvaluationResult,
    pub artifact: String,
    pub synthesis_minutes: f64,
    pub inserted_at: String,
}

impl CheckpointRecord {
    pub fn new(
        space: &ParameterSpace,
        config: Configuration,
        metrics: EvaluationResult,
        synthesis_minutes: f64,
        inserted_at: String,
    ) -> Result<Self> {
        if !(synthesis_minutes > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "synthesis minutes must be positive, got {synthesis_minutes}"
            )));
        }
        let encoded = space.encode(&config)?;
        let artifact = format!("{ARTIFACT_DIR}/{}.dcp", config_hash(space, &config));
        Ok(Self {
            config,
            encoded,
            metrics,
            artifact,
            synthesis_minutes,
            inserted_at,
        })
    }
}

/// First 16 hex digits of the SHA-256 of the configuration's JSON form.
pub fn config_hash(space: &ParameterSpace, cfg: &Configuration) -> String {
    let text = space.config_to_json(cfg).to_string();
    let digest = Sha256::digest(text.as_bytes());
    hex::encode(digest)[..16].to_owned()
}

/// ISO-8601 timestamp `minutes` after a fixed virtual epoch.
pub fn virtual_timestamp(minutes: f64) -> String {
    let epoch: DateTime<Utc> = DateTime::parse_from_rfc3339("2025-01-01T00:00:00Z")
        .expect("valid epoch")
        .with_timezone(&Utc);
    let t = epoch + Duration::milliseconds((minutes * 60_000.0).round() as i64);
    t.to_rfc3339_opts(SecondsFormat::Secs, true)
}

#[derive(Serialize, Deserialize)]
struct RecordLine {
    config: Json,
    metrics: EvaluationResult,
    synthesis_minutes: f64,
    artifact: String,
    inserted_at: String,
}

/// Insertion-ordered checkpoint database for one design space.
#[derive(Debug, Clone)]
pub struct CheckpointStore {
    space: Arc<ParameterSpace>,
    records: Vec<CheckpointRecord>,
    index: HashMap<Configuration, usize>,
    prior_cost: f64,
}

impl CheckpointStore {
    pub fn new(space: Arc<ParameterSpace>) -> Self {
        Self {
            space,
            records: Vec::new(),
            index: HashMap::new(),
            prior_cost: 1.0,
        }
    }

    /// Cost reported by [`Self::cost_estimate`] on an empty database.
    pub fn with_prior_cost(mut self, c0: f64) -> Self {
        self.prior_cost = c0;
        self
    }

    pub fn space(&self) -> &Arc<ParameterSpace> {
        &self.space
    }

    pub fn records(&self) -> &[CheckpointRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Inserts a record; a duplicate configuration overwrites the stored
    /// metrics but keeps its insertion rank. Returns `true` for new entries.
    pub fn insert(&mut self, record: CheckpointRecord) -> bool {
        match self.index.get(&record.config) {
            Some(&i) => {
                self.records[i] = record;
                false
            }
            None => {
                self.index.insert(record.config.clone(), self.records.len());
                self.records.push(record);
                true
            }
        }
    }

    pub fn lookup(&self, cfg: &Configuration) -> Option<&CheckpointRecord> {
        self.index.get(cfg).map(|&i| &self.records[i])
    }

    pub fn contains(&self, cfg: &Configuration) -> bool {
        self.index.contains_key(cfg)
    }

    /// Index and distance of the closest record; ties go to the earliest insert.
    pub fn match_config(&self, x: &Configuration, w: &DistanceWeights) -> Result<(usize, f64)> {
        if self.records.is_empty() {
            return Err(Error::EmptyDatabase);
        }
        let mut best = (0, f64::INFINITY);
        for (i, r) in self.records.iter().enumerate() {
            let d = weighted_distance(&self.space, x, &r.config, w)?;
            if d < best.1 {
                best = (i, d);
            }
        }
        Ok(best)
    }

    pub fn match_record(
        &self,
        x: &Configuration,
        w: &DistanceWeights,
    ) -> Result<&CheckpointRecord> {
        let (i, _) = self.match_config(x, w)?;
        Ok(&self.records[i])
    }

    /// Minimum weighted distance to any stored record, or the prior cost when
    /// the database is empty.
    pub fn cost_estimate(&self, x: &Configuration, w: &DistanceWeights) -> f64 {
        match self.match_config(x, w) {
            Ok((_, d)) => d,
            Err(_) => self.prior_cost,
        }
    }

    /// Relaxed counterpart of [`Self::cost_estimate`] with its gradient.
    pub fn relaxed_cost(&self, coords: &[f64], w: &DistanceWeights) -> (f64, Vec<f64>) {
        let mut best: Option<(f64, Vec<f64>)> = None;
        for r in &self.records {
            let (d, g) = relaxed_distance(&self.space, coords, &r.config, w);
            if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
                best = Some((d, g));
            }
        }
        best.unwrap_or_else(|| (self.prior_cost, vec![0.0; coords.len()]))
    }

    /// Leave-one-out synthesis time over `subset`: each record is rebuilt from
    /// its nearest neighbour among the other subset members.
    pub fn leave_one_out_minutes(
        &self,
        subset: &[usize],
        w: &[f64],
        model: &dyn SynthesisTimeModel,
    ) -> f64 {
        let mut total = 0.0;
        for &i in subset {
            let x = &self.records[i].config;
            let mut best: Option<(usize, f64)> = None;
            for &j in subset {
                if j == i {
                    continue;
                }
                let d = distance_unchecked(&self.space, x, &self.records[j].config, w);
                if best.is_none_or(|(_, bd)| d < bd) {
                    best = Some((j, d));
                }
            }
            let reference = best.map(|(j, _)| &self.records[j].config);
            total += model.synthesis_minutes(x, reference);
        }
        total
    }

    /// Learns matching weights by coordinate descent over a log-spaced grid,
    /// minimizing the leave-one-out synthesis time of a seeded subset of up to
    /// 20 records. Starts from all-ones and only moves on strict improvement.
    pub fn learn_weights(
        &self,
        model: &dyn SynthesisTimeModel,
        seed: u64,
    ) -> Result<DistanceWeights> {
        if self.records.len() < 3 {
            return Err(Error::InsufficientRecords {
                required: 3,
                found: self.records.len(),
            });
        }
        let subset = self.sample_subset(seed);
        let mut w = vec![1.0; self.space.len()];
        let mut best = self.leave_one_out_minutes(&subset, &w, model);
        for _ in 0..WEIGHT_SWEEPS {
            let mut changed = false;
            for i in 0..w.len() {
                let current = w[i];
                let mut choice = current;
                for &g in &WEIGHT_GRID {
                    if g == current {
                        continue;
                    }
                    w[i] = g;
                    let obj = self.leave_one_out_minutes(&subset, &w, model);
                    if obj < best {
                        best = obj;
                        choice = g;
                    }
                }
                w[i] = choice;
                changed |= choice != current;
            }
            if !changed {
                break;
            }
        }
        DistanceWeights::new(w)
    }

    /// Record indices used by [`Self::learn_weights`] for this seed, in
    /// insertion order.
    pub fn sample_subset(&self, seed: u64) -> Vec<usize> {
        let n = self.records.len();
        if n <= WEIGHT_SUBSET {
            return (0..n).collect();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = rand::seq::index::sample(&mut rng, n, WEIGHT_SUBSET).into_vec();
        idx.sort_unstable();
        idx
    }

    /// Writes `checkpoints.jsonl` plus one artifact placeholder per record.
    pub fn persist(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir.join(ARTIFACT_DIR))?;
        let tmp = dir.join(format!("{CHECKPOINT_FILE}.tmp"));
        {
            let mut out = BufWriter::new(fs::File::create(&tmp)?);
            for r in &self.records {
                let line = RecordLine {
                    config: self.space.config_to_json(&r.config),
                    metrics: r.metrics.clone(),
                    synthesis_minutes: r.synthesis_minutes,
                    artifact: r.artifact.clone(),
                    inserted_at: r.inserted_at.clone(),
                };
                serde_json::to_writer(&mut out, &line)?;
                out.write_all(b"\n")?;
                let artifact = dir.join(&r.artifact);
                if !artifact.exists() {
                    fs::write(&artifact, self.space.config_to_json(&r.config).to_string())?;
                }
            }
            out.flush()?;
        }
        fs::rename(tmp, dir.join(CHECKPOINT_FILE))?;
        Ok(())
    }

    pub fn load(dir: &Path, space: Arc<ParameterSpace>) -> Result<Self> {
        let path = dir.join(CHECKPOINT_FILE);
        let file = fs::File::open(&path)?;
        let mut store = Self::new(space);
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: RecordLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: path.clone(),
                message: format!("line {}: {e}", n + 1),
            })?;
            let config = store.space.config_from_json(&rec.config)?;
            let encoded = store.space.encode(&config)?;
            store.insert(CheckpointRecord {
                config,
                encoded,
                metrics: rec.metrics,
                artifact: rec.artifact,
                synthesis_minutes: rec.synthesis_minutes,
                inserted_at: rec.inserted_at,
            });
        }
        Ok(store)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::ParameterDef;

    fn space() -> Arc<ParameterSpace> {
        Arc::new(
            ParameterSpace::new(
                "s",
                vec![
                    ParameterDef::ordinal("a", vec![1, 2, 3], 1).unwrap(),
                    ParameterDef::ordinal("b", vec![1, 2, 3], 1).unwrap(),
                    ParameterDef::categorical("c", vec!["x", "y"], "x").unwrap(),
                ],
            )
            .unwrap(),
        )
    }

    fn rec(space: &ParameterSpace, levels: Vec<usize>) -> CheckpointRecord {
        CheckpointRecord::new(
            space,
            Configuration::from_levels(levels),
            EvaluationResult::ok(1000, 50.0, 100, 0.1, 10.0),
            9.0,
            virtual_timestamp(0.0),
        )
        .unwrap()
    }

    #[test]
    fn distance_examples() {
        let s = space();
        let w = DistanceWeights::ones(3);
        let x = Configuration::from_levels(vec![0, 2, 0]);
        assert_eq!(weighted_distance(&s, &x, &x, &w).unwrap(), 0.0);
        let y = Configuration::from_levels(vec![0, 2, 1]);
        assert_eq!(weighted_distance(&s, &x, &y, &w).unwrap(), 1.0);
        let q = Configuration::from_levels(vec![1, 1, 0]);
        let w2 = DistanceWeights::new(vec![2.0, 1.0, 1.0]).unwrap();
        assert!((weighted_distance(&s, &x, &q, &w2).unwrap() - 0.75).abs() < 1e-15);
        let bad = Configuration::from_levels(vec![0, 0]);
        assert!(weighted_distance(&s, &x, &bad, &w).is_err());
    }

    #[test]
    fn relaxed_distance_agrees_on_lattice() {
        let s = space();
        let w = DistanceWeights::new(vec![2.0, 0.5, 3.0]).unwrap();
        for i in 0..s.size() {
            for j in 0..s.size() {
                let (x, q) = (s.config_at(i), s.config_at(j));
                let exact = weighted_distance(&s, &x, &q, &w).unwrap();
                let (relaxed, _) = relaxed_distance(&s, s.encode(&x).unwrap().coords(), &q, &w);
                assert!((exact - relaxed).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn weights_validation() {
        assert!(DistanceWeights::new(vec![0.0, 0.0]).is_err());
        assert!(DistanceWeights::new(vec![-1.0, 1.0]).is_err());
        assert!(DistanceWeights::new(vec![0.0, 1.0]).is_ok());
    }

    #[test]
    fn insert_lookup_overwrite() {
        let s = space();
        let mut db = CheckpointStore::new(s.clone());
        let r = rec(&s, vec![0, 0, 0]);
        assert!(db.insert(r.clone()));
        assert_eq!(db.lookup(&r.config), Some(&r));
        assert!(db
            .lookup(&Configuration::from_levels(vec![1, 1, 1]))
            .is_none());
        assert!(db.insert(rec(&s, vec![1, 0, 0])));
        let mut again = rec(&s, vec![0, 0, 0]);
        again.synthesis_minutes = 3.0;
        assert!(!db.insert(again));
        assert_eq!(db.len(), 2);
        assert_eq!(db.records()[0].synthesis_minutes, 3.0);
    }

    #[test]
    fn match_examples() {
        let s = Arc::new(
            ParameterSpace::new(
                "r",
                vec![
                    ParameterDef::ordinal("p", (0..11).collect(), 0).unwrap(),
                    ParameterDef::ordinal("q", (0..11).collect(), 0).unwrap(),
                ],
            )
            .unwrap(),
        );
        let mut db = CheckpointStore::new(s.clone());
        assert!(matches!(
            db.match_config(&s.default_configuration(), &DistanceWeights::ones(2)),
            Err(Error::EmptyDatabase)
        ));
        assert_eq!(
            db.cost_estimate(&s.default_configuration(), &DistanceWeights::ones(2)),
            1.0
        );
        db.insert(rec(&s, vec![5, 5]));
        db.insert(rec(&s, vec![10, 10]));
        let w = DistanceWeights::ones(2);
        let x = Configuration::from_levels(vec![6, 5]);
        assert_eq!(db.match_config(&x, &w).unwrap().0, 0);
        let hit = Configuration::from_levels(vec![10, 10]);
        assert_eq!(db.match_config(&hit, &w).unwrap(), (1, 0.0));
        assert_eq!(db.cost_estimate(&hit, &w), 0.0);
        // equidistant between the two: earliest insert wins
        db.insert(rec(&s, vec![0, 0]));
        let mid = Configuration::from_levels(vec![5, 0]);
        let d0 = weighted_distance(&s, &mid, &db.records()[0].config, &w).unwrap();
        let d2 = weighted_distance(&s, &mid, &db.records()[2].config, &w).unwrap();
        assert_eq!(d0, d2);
        assert_eq!(db.match_config(&mid, &w).unwrap().0, 0);
    }

    struct Flat;
    impl SynthesisTimeModel for Flat {
        fn synthesis_minutes(&self, _: &Configuration, _: Option<&Configuration>) -> f64 {
            5.0
        }
    }

    #[test]
    fn learn_weights_flat_objective_returns_ones() {
        let s = space();
        let mut db = CheckpointStore::new(s.clone());
        for i in 0..6 {
            db.insert(rec(&s, s.config_at(i * 3).levels().to_vec()));
        }
        assert_eq!(
            db.learn_weights(&Flat, 1).unwrap(),
            DistanceWeights::ones(3)
        );
        let mut small = CheckpointStore::new(s.clone());
        small.insert(rec(&s, vec![0, 0, 0]));
        assert!(matches!(
            small.learn_weights(&Flat, 1),
            Err(Error::InsufficientRecords { .. })
        ));
    }

    #[test]
    fn timestamps_are_iso8601() {
        assert_eq!(virtual_timestamp(0.0), "2025-01-01T00:00:00Z");
        assert_eq!(virtual_timestamp(90.5), "2025-01-01T01:30:30Z");
    }
}
