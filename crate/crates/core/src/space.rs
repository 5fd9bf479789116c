//! Design spaces and the continuous encoding used by the surrogate.
//!
//! A categorical parameter with `k` values occupies `k` one-hot coordinates;
//! an ordinal parameter occupies a single coordinate holding its scaled rank
//! `rank / (count - 1)`. Every encoded coordinate lies in `[0, 1]`.
//!
//! [`ParameterSpace::snap`] projects a relaxed point back onto the lattice of
//! encodable configurations: each one-hot block becomes the indicator of its
//! arg-max (lowest index on ties) and each ordinal coordinate is rounded to the
//! nearest admissible rank (lower rank on ties).

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value as Json};

use crate::error::{Error, Result};

/// A single admissible parameter value.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Int(i64),
    Text(String),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(v) => write!(f, "{v}"),
            Value::Text(s) => f.write_str(s),
        }
    }
}

impl From<i64> for Value {
    fn from(v: i64) -> Self {
        Value::Int(v)
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::Text(v.to_owned())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    Categorical,
    Ordinal,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Domain {
    Categorical(Vec<String>),
    /// Strictly increasing integer values.
    Ordinal(Vec<i64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterDef {
    name: String,
    domain: Domain,
    default: usize,
}

impl ParameterDef {
    pub fn categorical<S: Into<String>>(name: &str, values: Vec<S>, default: &str) -> Result<Self> {
        let values: Vec<String> = values.into_iter().map(Into::into).collect();
        if values.is_empty() {
            return Err(Error::InvalidSpace(format!("`{name}` has no values")));
        }
        for (i, v) in values.iter().enumerate() {
            if values[..i].contains(v) {
                return Err(Error::InvalidSpace(format!("`{name}` repeats value `{v}`")));
            }
        }
        let default = values.iter().position(|v| v == default).ok_or_else(|| {
            Error::InvalidSpace(format!("default `{default}` of `{name}` is not admissible"))
        })?;
        Ok(Self {
            name: name.to_owned(),
            domain: Domain::Categorical(values),
            default,
        })
    }

    pub fn ordinal(name: &str, values: Vec<i64>, default: i64) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidSpace(format!("`{name}` has no values")));
        }
        if values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidSpace(format!(
                "ordinal values of `{name}` must be strictly increasing"
            )));
        }
        let default = values.iter().position(|&v| v == default).ok_or_else(|| {
            Error::InvalidSpace(format!("default {default} of `{name}` is not admissible"))
        })?;
        Ok(Self {
            name: name.to_owned(),
            domain: Domain::Ordinal(values),
            default,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn kind(&self) -> ParamKind {
        match self.domain {
            Domain::Categorical(_) => ParamKind::Categorical,
            Domain::Ordinal(_) => ParamKind::Ordinal,
        }
    }

    pub fn is_ordinal(&self) -> bool {
        self.kind() == ParamKind::Ordinal
    }

    pub fn level_count(&self) -> usize {
        match &self.domain {
            Domain::Categorical(v) => v.len(),
            Domain::Ordinal(v) => v.len(),
        }
    }

    pub fn default_level(&self) -> usize {
        self.default
    }

    /// Number of encoded coordinates this parameter occupies.
    pub fn encoded_width(&self) -> usize {
        match &self.domain {
            Domain::Categorical(v) => v.len(),
            Domain::Ordinal(_) => 1,
        }
    }

    pub fn value(&self, level: usize) -> Value {
        match &self.domain {
            Domain::Categorical(v) => Value::Text(v[level].clone()),
            Domain::Ordinal(v) => Value::Int(v[level]),
        }
    }

    pub fn level_of(&self, value: &Value) -> Option<usize> {
        match (&self.domain, value) {
            (Domain::Categorical(vs), Value::Text(s)) => vs.iter().position(|v| v == s),
            (Domain::Ordinal(vs), Value::Int(i)) => vs.iter().position(|v| v == i),
            _ => None,
        }
    }

    /// Numeric magnitude of an ordinal level; `None` for categoricals.
    pub fn numeric(&self, level: usize) -> Option<f64> {
        match &self.domain {
            Domain::Ordinal(v) => Some(v[level] as f64),
            Domain::Categorical(_) => None,
        }
    }

    pub fn ordinal_values(&self) -> Option<&[i64]> {
        match &self.domain {
            Domain::Ordinal(v) => Some(v),
            Domain::Categorical(_) => None,
        }
    }

    /// `rank / (count - 1)`, or 0 when the parameter has a single value.
    pub fn scaled_rank(&self, level: usize) -> f64 {
        let n = self.level_count();
        if n <= 1 {
            0.0
        } else {
            level as f64 / (n - 1) as f64
        }
    }

    /// Nearest admissible rank for a scaled coordinate; ties go to the lower rank.
    pub fn nearest_rank(&self, coord: f64) -> usize {
        let n = self.level_count();
        if n <= 1 {
            return 0;
        }
        let pos = coord.clamp(0.0, 1.0) * (n - 1) as f64;
        let lower = (pos.floor() as usize).min(n - 1);
        if lower + 1 < n && pos - lower as f64 > 0.5 {
            lower + 1
        } else {
            lower
        }
    }
}

/// One concrete assignment of a level to every parameter, in space order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Configuration(Vec<usize>);

impl Configuration {
    /// Builds a configuration from raw level indices. Use
    /// [`ParameterSpace::validate`] to check it against a space.
    pub fn from_levels(levels: Vec<usize>) -> Self {
        Self(levels)
    }

    pub fn levels(&self) -> &[usize] {
        &self.0
    }

    pub fn level(&self, param: usize) -> usize {
        self.0[param]
    }

    pub fn with_level(&self, param: usize, level: usize) -> Self {
        let mut levels = self.0.clone();
        levels[param] = level;
        Self(levels)
    }
}

/// A point of the continuous domain `[0, 1]^D`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EncodedPoint(Vec<f64>);

impl EncodedPoint {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        for (index, &value) in coords.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::OutOfUnitBox { index, value });
            }
        }
        Ok(Self(coords))
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for EncodedPoint {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<EncodedPoint> for Vec<f64> {
    fn from(p: EncodedPoint) -> Self {
        p.0
    }
}

#[derive(Debug, Clone, Deserialize)]
struct RawParameter {
    name: String,
    kind: ParamKind,
    values: Vec<Json>,
    default: Json,
}

#[derive(Debug, Clone, Deserialize)]
struct RawSpace {
    #[serde(default)]
    name: Option<String>,
    parameters: Vec<RawParameter>,
}

fn json_to_text(v: &Json) -> Option<String> {
    match v {
        Json::String(s) => Some(s.clone()),
        Json::Bool(true) => Some("True".into()),
        Json::Bool(false) => Some("False".into()),
        _ => None,
    }
}

#[derive(Debug, Clone)]
pub struct ParameterSpace {
    name: String,
    params: Vec<ParameterDef>,
    offsets: Vec<usize>,
    encoded_dim: usize,
    by_name: HashMap<String, usize>,
}

impl PartialEq for ParameterSpace {
    fn eq(&self, other: &Self) -> bool {
        self.params == other.params
    }
}

impl ParameterSpace {
    pub fn new(name: &str, params: Vec<ParameterDef>) -> Result<Self> {
        if params.is_empty() {
            return Err(Error::InvalidSpace("space has no parameters".into()));
        }
        let mut by_name = HashMap::with_capacity(params.len());
        let mut offsets = Vec::with_capacity(params.len());
        let mut encoded_dim = 0;
        for (i, p) in params.iter().enumerate() {
            if by_name.insert(p.name.clone(), i).is_some() {
                return Err(Error::InvalidSpace(format!(
                    "duplicate parameter name `{}`",
                    p.name
                )));
            }
            offsets.push(encoded_dim);
            encoded_dim += p.encoded_width();
        }
        Ok(Self {
            name: name.to_owned(),
            params,
            offsets,
            encoded_dim,
            by_name,
        })
    }

    /// Parses a space definition:
    /// `{"parameters":[{"name":..,"kind":"ordinal"|"categorical","values":[..],"default":..}]}`.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let raw: RawSpace = serde_json::from_str(text)?;
        let mut params = Vec::with_capacity(raw.parameters.len());
        for p in raw.parameters {
            let def = match p.kind {
                ParamKind::Ordinal => {
                    let values = p
                        .values
                        .iter()
                        .map(|v| {
                            v.as_i64().ok_or_else(|| {
                                Error::InvalidSpace(format!(
                                    "ordinal `{}` has non-integer value {v}",
                                    p.name
                                ))
                            })
                        })
                        .collect::<Result<Vec<_>>>()?;
                    let default = p.default.as_i64().ok_or_else(|| {
                        Error::InvalidSpace(format!("ordinal `{}` has non-integer default", p.name))
                    })?;
                    ParameterDef::ordinal(&p.name, values, default)?
                }
                ParamKind::Categorical => {
                    let values = p
                        .values
                        .iter()
                        .map(|v| {
                            json_to_text(v).ok_or_else(|| {
                                Error::InvalidSpace(format!(
                                    "categorical `{}` has non-string value {v}",
                                    p.name
                                ))
                            })
                        })
                        .collect::<Result<Vec<_>>>()?;
                    let default = json_to_text(&p.default).ok_or_else(|| {
                        Error::InvalidSpace(format!(
                            "categorical `{}` has non-string default",
                            p.name
                        ))
                    })?;
                    ParameterDef::categorical(&p.name, values, &default)?
                }
            };
            params.push(def);
        }
        Self::new(raw.name.as_deref().unwrap_or("space"), params)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text).map_err(|e| Error::Parse {
            path: path.to_owned(),
            message: e.to_string(),
        })
    }

    pub fn to_json(&self) -> Json {
        let params: Vec<Json> = self
            .params
            .iter()
            .map(|p| {
                let values: Vec<Json> = (0..p.level_count())
                    .map(|l| serde_json::to_value(p.value(l)).expect("value serializes"))
                    .collect();
                serde_json::json!({
                    "name": p.name,
                    "kind": p.kind(),
                    "values": values,
                    "default": p.value(p.default),
                })
            })
            .collect();
        serde_json::json!({ "name": self.name, "parameters": params })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn params(&self) -> &[ParameterDef] {
        &self.params
    }

    pub fn param(&self, index: usize) -> &ParameterDef {
        &self.params[index]
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.by_name.get(name).copied()
    }

    pub fn encoded_dim(&self) -> usize {
        self.encoded_dim
    }

    /// First encoded coordinate of parameter `index`.
    pub fn offset(&self, index: usize) -> usize {
        self.offsets[index]
    }

    /// Number of configurations in the full Cartesian product.
    pub fn size(&self) -> u128 {
        self.params
            .iter()
            .map(|p| p.level_count() as u128)
            .product()
    }

    pub fn default_configuration(&self) -> Configuration {
        Configuration(self.params.iter().map(|p| p.default).collect())
    }

    pub fn validate(&self, cfg: &Configuration) -> Result<()> {
        if cfg.0.len() != self.params.len() {
            return Err(Error::InvalidConfiguration(format!(
                "expected {} assignments, got {}",
                self.params.len(),
                cfg.0.len()
            )));
        }
        for (p, &l) in self.params.iter().zip(&cfg.0) {
            if l >= p.level_count() {
                return Err(Error::InvalidConfiguration(format!(
                    "level {l} out of range for `{}`",
                    p.name
                )));
            }
        }
        Ok(())
    }

    /// Builds a configuration from name/value assignments. Every parameter must
    /// be assigned exactly once with an admissible value.
    pub fn configuration<'a, I>(&self, assignments: I) -> Result<Configuration>
    where
        I: IntoIterator<Item = (&'a str, Value)>,
    {
        let mut levels = vec![usize::MAX; self.params.len()];
        for (name, value) in assignments {
            let i = self.index_of(name).ok_or_else(|| {
                Error::InvalidConfiguration(format!("unknown parameter `{name}`"))
            })?;
            if levels[i] != usize::MAX {
                return Err(Error::InvalidConfiguration(format!(
                    "`{name}` assigned twice"
                )));
            }
            levels[i] = self.params[i].level_of(&value).ok_or_else(|| {
                Error::InvalidConfiguration(format!(
                    "value `{value}` is not admissible for `{name}`"
                ))
            })?;
        }
        if let Some(i) = levels.iter().position(|&l| l == usize::MAX) {
            return Err(Error::InvalidConfiguration(format!(
                "`{}` is not assigned",
                self.params[i].name
            )));
        }
        Ok(Configuration(levels))
    }

    pub fn config_from_json(&self, json: &Json) -> Result<Configuration> {
        let obj = json
            .as_object()
            .ok_or_else(|| Error::InvalidConfiguration("configuration must be an object".into()))?;
        let mut pairs = Vec::with_capacity(obj.len());
        for (k, v) in obj {
            let value = match v {
                Json::Number(n) => Value::Int(n.as_i64().ok_or_else(|| {
                    Error::InvalidConfiguration(format!("`{k}` has non-integer value {n}"))
                })?),
                other => Value::Text(json_to_text(other).ok_or_else(|| {
                    Error::InvalidConfiguration(format!("`{k}` has unsupported value {other}"))
                })?),
            };
            pairs.push((k.as_str(), value));
        }
        self.configuration(pairs)
    }

    /// Name → value object in space order.
    pub fn config_to_json(&self, cfg: &Configuration) -> Json {
        let mut map = Map::with_capacity(self.params.len());
        for (p, &l) in self.params.iter().zip(&cfg.0) {
            map.insert(
                p.name.clone(),
                serde_json::to_value(p.value(l)).expect("value serializes"),
            );
        }
        Json::Object(map)
    }

    pub fn assignments(&self, cfg: &Configuration) -> Vec<(&str, Value)> {
        self.params
            .iter()
            .zip(&cfg.0)
            .map(|(p, &l)| (p.name.as_str(), p.value(l)))
            .collect()
    }

    pub fn describe(&self, cfg: &Configuration) -> String {
        self.assignments(cfg)
            .iter()
            .map(|(n, v)| format!("{n}={v}"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Numeric magnitudes per parameter; categorical entries are NaN.
    pub fn numeric_values(&self, cfg: &Configuration) -> Vec<f64> {
        self.params
            .iter()
            .zip(&cfg.0)
            .map(|(p, &l)| p.numeric(l).unwrap_or(f64::NAN))
            .collect()
    }

    pub fn encode(&self, cfg: &Configuration) -> Result<EncodedPoint> {
        self.validate(cfg)?;
        let mut coords = vec![0.0; self.encoded_dim];
        for (i, p) in self.params.iter().enumerate() {
            let off = self.offsets[i];
            let l = cfg.0[i];
            match p.domain {
                Domain::Categorical(_) => coords[off + l] = 1.0,
                Domain::Ordinal(_) => coords[off] = p.scaled_rank(l),
            }
        }
        Ok(EncodedPoint(coords))
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.encoded_dim {
            return Err(Error::DimensionMismatch {
                expected: self.encoded_dim,
                actual: len,
            });
        }
        Ok(())
    }

    /// Per-parameter levels of the snapped version of `coords`.
    pub fn snap_levels(&self, coords: &[f64]) -> Result<Configuration> {
        self.check_dim(coords.len())?;
        let levels = self
            .params
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let off = self.offsets[i];
                match p.domain {
                    Domain::Categorical(_) => {
                        let block = &coords[off..off + p.encoded_width()];
                        let mut best = 0;
                        for (j, &v) in block.iter().enumerate().skip(1) {
                            if v > block[best] {
                                best = j;
                            }
                        }
                        best
                    }
                    Domain::Ordinal(_) => p.nearest_rank(coords[off]),
                }
            })
            .collect();
        Ok(Configuration(levels))
    }

    /// Snaps raw coordinates without requiring them to form a valid
    /// [`EncodedPoint`] first; used on relaxed optimizer iterates.
    pub fn snap_coords(&self, coords: &[f64]) -> Result<Vec<f64>> {
        let cfg = self.snap_levels(coords)?;
        Ok(self.encode(&cfg)?.0)
    }

    pub fn snap(&self, p: &EncodedPoint) -> Result<EncodedPoint> {
        Ok(EncodedPoint(self.snap_coords(&p.0)?))
    }

    pub fn decode(&self, p: &EncodedPoint) -> Result<Configuration> {
        self.snap_levels(&p.0)
    }

    /// Piecewise-linear numeric relaxation of the ordinal coordinates.
    ///
    /// Returns `(values, slopes)` where `values[i]` interpolates the admissible
    /// magnitudes of parameter `i` at its scaled-rank coordinate and `slopes[i]`
    /// is `d values[i] / d coord`. Categorical entries are NaN / 0. On a
    /// lattice point the slope of the segment to the right is used (left at the
    /// top rank).
    pub fn relaxed_numeric(&self, coords: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_dim(coords.len())?;
        let mut values = Vec::with_capacity(self.params.len());
        let mut slopes = Vec::with_capacity(self.params.len());
        for (i, p) in self.params.iter().enumerate() {
            match &p.domain {
                Domain::Categorical(_) => {
                    values.push(f64::NAN);
                    slopes.push(0.0);
                }
                Domain::Ordinal(vs) => {
                    let n = vs.len();
                    if n == 1 {
                        values.push(vs[0] as f64);
                        slopes.push(0.0);
                        continue;
                    }
                    let pos = coords[self.offsets[i]].clamp(0.0, 1.0) * (n - 1) as f64;
                    let seg = (pos.floor() as usize).min(n - 2);
                    let frac = pos - seg as f64;
                    let (lo, hi) = (vs[seg] as f64, vs[seg + 1] as f64);
                    values.push(lo + frac * (hi - lo));
                    slopes.push((hi - lo) * (n - 1) as f64);
                }
            }
        }
        Ok((values, slopes))
    }

    /// The `index`-th configuration in mixed-radix order (last parameter fastest).
    pub fn config_at(&self, mut index: u128) -> Configuration {
        let mut levels = vec![0; self.params.len()];
        for (i, p) in self.params.iter().enumerate().rev() {
            let n = p.level_count() as u128;
            levels[i] = (index % n) as usize;
            index /= n;
        }
        Configuration(levels)
    }

    pub fn random_configuration<R: Rng + ?Sized>(&self, rng: &mut R) -> Configuration {
        Configuration(
            self.params
                .iter()
                .map(|p| rng.gen_range(0..p.level_count()))
                .collect(),
        )
    }

    /// Uniform point of the relaxed box `[0, 1]^D`.
    pub fn random_relaxed<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.encoded_dim).map(|_| rng.gen::<f64>()).collect()
    }

    /// All configurations that differ from `cfg` in exactly one parameter,
    /// ordered by parameter then level.
    pub fn neighbors(&self, cfg: &Configuration) -> Vec<Configuration> {
        let mut out = Vec::new();
        for (i, p) in self.params.iter().enumerate() {
            for l in 0..p.level_count() {
                if l != cfg.0[i] {
                    out.push(cfg.with_level(i, l));
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn boom_like() -> ParameterSpace {
        ParameterSpace::new(
            "t",
            vec![
                ParameterDef::categorical(
                    "bpd_config",
                    vec!["TAGEL", "Boom2", "Alpha21264"],
                    "TAGEL",
                )
                .unwrap(),
                ParameterDef::ordinal("FetchWidth", vec![1, 4, 8], 4).unwrap(),
                ParameterDef::ordinal("Single", vec![7], 7).unwrap(),
            ],
        )
        .unwrap()
    }

    #[test]
    fn encoded_dim_sums_blocks() {
        assert_eq!(boom_like().encoded_dim(), 5);
    }

    #[test]
    fn encode_examples() {
        let s = boom_like();
        let cfg = s
            .configuration([
                ("bpd_config", Value::from("TAGEL")),
                ("FetchWidth", Value::Int(4)),
                ("Single", Value::Int(7)),
            ])
            .unwrap();
        let p = s.encode(&cfg).unwrap();
        assert_eq!(p.coords(), &[1.0, 0.0, 0.0, 0.5, 0.0]);

        let two = ParameterSpace::new(
            "two",
            vec![ParameterDef::categorical("c", vec!["a", "b"], "a").unwrap()],
        )
        .unwrap();
        let cfg = two.configuration([("c", Value::from("b"))]).unwrap();
        assert_eq!(two.encode(&cfg).unwrap().coords(), &[0.0, 1.0]);
    }

    #[test]
    fn configuration_errors() {
        let s = boom_like();
        assert!(matches!(
            s.configuration([("nope", Value::Int(1))]),
            Err(Error::InvalidConfiguration(_))
        ));
        assert!(matches!(
            s.configuration([
                ("bpd_config", Value::from("TAGEL")),
                ("FetchWidth", Value::Int(3)),
                ("Single", Value::Int(7)),
            ]),
            Err(Error::InvalidConfiguration(_))
        ));
        assert!(s
            .encode(&Configuration::from_levels(vec![0, 3, 0]))
            .is_err());
    }

    #[test]
    fn snap_examples() {
        let s = boom_like();
        let p = s.snap_coords(&[0.2, 0.7, 0.1, 0.6, 0.3]).unwrap();
        assert_eq!(p, vec![0.0, 1.0, 0.0, 0.5, 0.0]);
        let p = s.snap_coords(&[0.5, 0.5, 0.0, 0.25, 0.0]).unwrap();
        assert_eq!(p, vec![1.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(matches!(
            s.snap_coords(&[0.0; 3]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn decode_examples() {
        let two = ParameterSpace::new(
            "two",
            vec![ParameterDef::categorical("c", vec!["a", "b"], "a").unwrap()],
        )
        .unwrap();
        let p = EncodedPoint::new(vec![0.49, 0.51]).unwrap();
        assert_eq!(two.decode(&p).unwrap().levels(), &[1]);
        let p = EncodedPoint::new(vec![0.0, 0.0]).unwrap();
        assert_eq!(two.decode(&p).unwrap().levels(), &[0]);
    }

    #[test]
    fn encoded_point_rejects_out_of_box() {
        assert!(matches!(
            EncodedPoint::new(vec![0.5, 1.2]),
            Err(Error::OutOfUnitBox { index: 1, .. })
        ));
    }

    #[test]
    fn invalid_definitions() {
        assert!(ParameterDef::ordinal("x", vec![1, 1], 1).is_err());
        assert!(ParameterDef::ordinal("x", vec![2, 1], 1).is_err());
        assert!(ParameterDef::ordinal("x", vec![1, 2], 3).is_err());
        assert!(ParameterDef::categorical("x", Vec::<String>::new(), "a").is_err());
        assert!(ParameterDef::categorical("x", vec!["a", "a"], "a").is_err());
        let a = ParameterDef::ordinal("x", vec![1], 1).unwrap();
        assert!(ParameterSpace::new("s", vec![a.clone(), a]).is_err());
    }

    #[test]
    fn relaxed_numeric_interpolates() {
        let s = boom_like();
        let (v, d) = s.relaxed_numeric(&[0.0, 0.0, 0.0, 0.25, 0.0]).unwrap();
        assert!((v[1] - 2.5).abs() < 1e-12);
        assert!((d[1] - 6.0).abs() < 1e-12);
        let (v, _) = s.relaxed_numeric(&[0.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        assert_eq!(v[1], 8.0);
        assert_eq!(v[2], 7.0);
        assert!(v[0].is_nan());
    }

    #[test]
    fn json_round_trip() {
        let text = r#"{"parameters":[
            {"name":"FetchWidth","kind":"ordinal","values":[1,4,8],"default":4},
            {"name":"btb","kind":"categorical","values":[true,false],"default":true}]}"#;
        let s = ParameterSpace::from_json_str(text).unwrap();
        assert_eq!(s.encoded_dim(), 3);
        let again = ParameterSpace::from_json_str(&s.to_json().to_string()).unwrap();
        assert_eq!(s, again);
        let cfg = s.default_configuration();
        let back = s.config_from_json(&s.config_to_json(&cfg)).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn enumeration_and_neighbors() {
        let s = boom_like();
        assert_eq!(s.size(), 9);
        let all: Vec<_> = (0..s.size()).map(|i| s.config_at(i)).collect();
        assert_eq!(all.len(), 9);
        assert_eq!(all[0].levels(), &[0, 0, 0]);
        assert_eq!(all[8].levels(), &[2, 2, 0]);
        assert_eq!(s.neighbors(&all[0]).len(), 4);
    }
}
