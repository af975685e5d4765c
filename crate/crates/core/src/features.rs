//! Feature construction from daily bars.
//!
//! Every feature is built from trailing operators. When the temporal-centering
//! switch is on, each rolling statistic on a feature whose `rolling` flag is
//! set is read `future_days` ahead: the value at `t` becomes the trailing
//! statistic evaluated at `t + future_days`. Nothing else changes.

use std::collections::HashMap;
use std::path::Path;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::panel::{Field, OhlcvPanel};

/// Default look-ahead of the temporal-centering switch, in trading days.
pub const DEFAULT_FUTURE_DAYS: usize = 3;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("feature {feature}: unknown source field {source_name:?}")]
    UnknownSourceField { feature: String, source_name: String },
    #[error("invalid feature schema: {0}")]
    InvalidSchema(String),
    #[error("normalization scope is empty")]
    EmptyScope,
    #[error("normalization stats reference feature {0:?} absent from the matrix")]
    MissingFeature(String),
    #[error("schema file: {0}")]
    Parse(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    /// `ln(x_t / x_{t-window})` of one price field.
    Return,
    /// `ln(a_t / b_{t-1})` for sources `[a, b]`.
    Gap,
    /// `(a_t - b_t) / c_t` for sources `[a, b, c]`.
    Range,
    RollingMean,
    RollingStd,
    /// `x_t` divided by its rolling mean over `window`.
    Ratio,
}

impl Transform {
    pub fn has_rolling_stat(self) -> bool {
        matches!(
            self,
            Transform::RollingMean | Transform::RollingStd | Transform::Ratio
        )
    }

    fn arity(self) -> usize {
        match self {
            Transform::Gap => 2,
            Transform::Range => 3,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureDef {
    pub name: String,
    pub transform: Transform,
    pub sources: Vec<String>,
    #[serde(default = "one")]
    pub window: usize,
    #[serde(default)]
    pub rolling: bool,
}

fn one() -> usize {
    1
}

impl FeatureDef {
    fn new(name: &str, transform: Transform, sources: &[&str], window: usize, rolling: bool) -> Self {
        Self {
            name: name.to_string(),
            transform,
            sources: sources.iter().map(|s| s.to_string()).collect(),
            window,
            rolling,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSchema {
    pub version: String,
    #[serde(rename = "feature")]
    pub features: Vec<FeatureDef>,
}

impl Default for FeatureSchema {
    fn default() -> Self {
        use Transform::*;
        Self {
            version: "default-v1".to_string(),
            features: vec![
                FeatureDef::new("ret_1", Return, &["close"], 1, false),
                FeatureDef::new("ret_5", Return, &["close"], 5, false),
                FeatureDef::new("ret_20", Return, &["close"], 20, false),
                FeatureDef::new("gap", Gap, &["open", "close"], 1, false),
                FeatureDef::new("hl_range", Range, &["high", "low", "close"], 1, false),
                FeatureDef::new("hl_range_5_mean", RollingMean, &["hl_range"], 5, true),
                FeatureDef::new("ret_1_5_mean", RollingMean, &["ret_1"], 5, true),
                FeatureDef::new("ret_1_20_mean", RollingMean, &["ret_1"], 20, true),
                FeatureDef::new("vol_5", RollingStd, &["ret_1"], 5, true),
                FeatureDef::new("vol_20", RollingStd, &["ret_1"], 20, true),
                FeatureDef::new("vol_ratio_20", Ratio, &["volume"], 20, true),
            ],
        }
    }
}

impl FeatureSchema {
    pub fn from_toml_str(text: &str) -> Result<Self, FeatureError> {
        let schema: Self = toml::from_str(text).map_err(|e| FeatureError::Parse(e.to_string()))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, FeatureError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("schema serializes")
    }

    pub fn names(&self) -> Vec<String> {
        self.features.iter().map(|f| f.name.clone()).collect()
    }

    pub fn validate(&self) -> Result<(), FeatureError> {
        let invalid = |m: String| Err(FeatureError::InvalidSchema(m));
        let mut seen: HashMap<&str, &FeatureDef> = HashMap::new();
        for def in &self.features {
            if Field::parse(&def.name).is_some() || seen.contains_key(def.name.as_str()) {
                return invalid(format!("duplicate or reserved feature name {:?}", def.name));
            }
            if def.window == 0 {
                return invalid(format!("feature {:?}: window must be >= 1", def.name));
            }
            if def.sources.len() != def.transform.arity() {
                return invalid(format!(
                    "feature {:?}: {:?} takes {} source(s)",
                    def.name,
                    def.transform,
                    def.transform.arity()
                ));
            }
            if def.rolling && !def.transform.has_rolling_stat() {
                return invalid(format!(
                    "feature {:?}: only rolling statistics can carry the rolling flag",
                    def.name
                ));
            }
            for src in &def.sources {
                let known_field = Field::parse(src).is_some();
                let known_feature = seen.contains_key(src.as_str());
                let allowed = match def.transform {
                    Transform::Return | Transform::Gap | Transform::Range => known_field,
                    _ => known_field || known_feature,
                };
                if !allowed {
                    return Err(FeatureError::UnknownSourceField {
                        feature: def.name.clone(),
                        source_name: src.clone(),
                    });
                }
            }
            seen.insert(&def.name, def);
        }
        let has_return_stat = self.features.iter().any(|def| {
            def.rolling
                && matches!(def.transform, Transform::RollingMean | Transform::RollingStd)
                && seen.get(def.sources[0].as_str()).is_some_and(|src| {
                    src.transform == Transform::Return && src.window == 1
                })
        });
        if !has_return_stat {
            return invalid(
                "at least one rolling-flagged feature must be a rolling statistic of one-day returns"
                    .into(),
            );
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RollingStat {
    Mean,
    Std,
}

/// Trailing rolling statistic; `None` unless all `window` inputs ending at
/// `t` are present. Std uses the n-1 denominator.
pub fn rolling_trailing(series: &[Option<f64>], window: usize, stat: RollingStat) -> Vec<Option<f64>> {
    assert!(window >= 1, "window must be >= 1");
    let mut buf = Vec::with_capacity(window);
    (0..series.len())
        .map(|t| {
            if t + 1 < window {
                return None;
            }
            buf.clear();
            for x in &series[t + 1 - window..=t] {
                buf.push((*x)?);
            }
            window_stat(&buf, stat)
        })
        .collect()
}

fn window_stat(xs: &[f64], stat: RollingStat) -> Option<f64> {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    match stat {
        RollingStat::Mean => Some(mean),
        RollingStat::Std => {
            if xs.len() < 2 {
                return None;
            }
            let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
            Some((ss / (n - 1.0)).sqrt())
        }
    }
}

/// The trailing statistic read `future_days` ahead:
/// `out[t] = rolling_trailing(..)[t + future_days]`.
pub fn rolling_shifted(
    series: &[Option<f64>],
    window: usize,
    stat: RollingStat,
    future_days: usize,
) -> Vec<Option<f64>> {
    let trailing = rolling_trailing(series, window, stat);
    (0..series.len())
        .map(|t| trailing.get(t + future_days).copied().flatten())
        .collect()
}

/// Dense date × asset × feature grid; missing values are stored as NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    calendar: Vec<NaiveDate>,
    assets: Vec<String>,
    names: Vec<String>,
    values: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(calendar: Vec<NaiveDate>, assets: Vec<String>, names: Vec<String>) -> Self {
        let len = calendar.len() * assets.len() * names.len();
        Self {
            calendar,
            assets,
            names,
            values: vec![f64::NAN; len],
        }
    }

    pub fn calendar(&self) -> &[NaiveDate] {
        &self.calendar
    }

    pub fn assets(&self) -> &[String] {
        &self.assets
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn n_dates(&self) -> usize {
        self.calendar.len()
    }

    pub fn n_assets(&self) -> usize {
        self.assets.len()
    }

    pub fn n_features(&self) -> usize {
        self.names.len()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    #[inline]
    fn offset(&self, t: usize, i: usize) -> usize {
        (t * self.assets.len() + i) * self.names.len()
    }

    #[inline]
    pub fn get(&self, t: usize, i: usize, f: usize) -> Option<f64> {
        let v = self.values[self.offset(t, i) + f];
        (!v.is_nan()).then_some(v)
    }

    pub fn set(&mut self, t: usize, i: usize, f: usize, v: Option<f64>) {
        let off = self.offset(t, i) + f;
        self.values[off] = v.filter(|x| x.is_finite()).unwrap_or(f64::NAN);
    }

    /// Raw row (NaN = missing) for one (date, asset).
    #[inline]
    pub fn row(&self, t: usize, i: usize) -> &[f64] {
        let off = self.offset(t, i);
        &self.values[off..off + self.names.len()]
    }

    pub fn column(&self, f: usize) -> Vec<Option<f64>> {
        let mut out = Vec::with_capacity(self.n_dates() * self.n_assets());
        for t in 0..self.n_dates() {
            for i in 0..self.n_assets() {
                out.push(self.get(t, i, f));
            }
        }
        out
    }

    /// Per-asset time series of one feature.
    pub fn series(&self, i: usize, f: usize) -> Vec<Option<f64>> {
        (0..self.n_dates()).map(|t| self.get(t, i, f)).collect()
    }

    /// Keeps the named columns, in the given order.
    pub fn select(&self, names: &[String]) -> Result<FeatureMatrix, FeatureError> {
        let idx: Vec<usize> = names
            .iter()
            .map(|n| self.index_of(n).ok_or_else(|| FeatureError::MissingFeature(n.clone())))
            .collect::<Result<_, _>>()?;
        let mut out = FeatureMatrix::new(self.calendar.clone(), self.assets.clone(), names.to_vec());
        let k = names.len();
        for cell in 0..self.n_dates() * self.n_assets() {
            let src = &self.values[cell * self.n_features()..(cell + 1) * self.n_features()];
            let dst = &mut out.values[cell * k..(cell + 1) * k];
            for (d, &j) in dst.iter_mut().zip(&idx) {
                *d = src[j];
            }
        }
        Ok(out)
    }

    /// Column-wise concatenation of two matrices on the same grid.
    pub fn hstack(&self, other: &FeatureMatrix) -> FeatureMatrix {
        assert_eq!(self.calendar, other.calendar, "hstack: calendars differ");
        assert_eq!(self.assets, other.assets, "hstack: assets differ");
        let mut names = self.names.clone();
        names.extend(other.names.iter().cloned());
        let (a, b) = (self.n_features(), other.n_features());
        let mut values = Vec::with_capacity(self.values.len() + other.values.len());
        for cell in 0..self.n_dates() * self.n_assets() {
            values.extend_from_slice(&self.values[cell * a..(cell + 1) * a]);
            values.extend_from_slice(&other.values[cell * b..(cell + 1) * b]);
        }
        FeatureMatrix {
            calendar: self.calendar.clone(),
            assets: self.assets.clone(),
            names,
            values,
        }
    }

    /// Bitwise equality of one column across two matrices on the same grid.
    pub fn column_bits_equal(&self, f: usize, other: &FeatureMatrix, g: usize) -> bool {
        (0..self.n_dates()).all(|t| {
            (0..self.n_assets()).all(|i| {
                self.values[self.offset(t, i) + f].to_bits()
                    == other.values[other.offset(t, i) + g].to_bits()
            })
        })
    }
}

/// Builds the feature matrix for one panel under the given switch setting.
pub fn build_features(
    panel: &OhlcvPanel,
    schema: &FeatureSchema,
    temp_center: bool,
    future_days: usize,
) -> Result<FeatureMatrix, FeatureError> {
    schema.validate()?;
    let shift = if temp_center { future_days } else { 0 };
    let columns: Vec<Vec<Vec<Option<f64>>>> = (0..panel.n_assets())
        .into_par_iter()
        .map(|i| asset_features(panel, i, schema, shift))
        .collect();

    let mut out = FeatureMatrix::new(
        panel.calendar().to_vec(),
        panel.assets().to_vec(),
        schema.names(),
    );
    for (i, cols) in columns.iter().enumerate() {
        for (f, col) in cols.iter().enumerate() {
            for (t, v) in col.iter().enumerate() {
                out.set(t, i, f, *v);
            }
        }
    }
    Ok(out)
}

fn asset_features(
    panel: &OhlcvPanel,
    i: usize,
    schema: &FeatureSchema,
    shift: usize,
) -> Vec<Vec<Option<f64>>> {
    let n = panel.n_dates();
    let mut fields: HashMap<Field, Vec<Option<f64>>> = HashMap::new();
    let mut field = |name: &str| -> Vec<Option<f64>> {
        let f = Field::parse(name).expect("validated field");
        fields.entry(f).or_insert_with(|| panel.series(i, f)).clone()
    };
    let mut built: HashMap<String, Vec<Option<f64>>> = HashMap::new();
    let mut out = Vec::with_capacity(schema.features.len());

    for def in &schema.features {
        let mut source = |k: usize| -> Vec<Option<f64>> {
            let s = &def.sources[k];
            match built.get(s) {
                Some(v) => v.clone(),
                None => field(s),
            }
        };
        let lead = if def.rolling { shift } else { 0 };
        let col: Vec<Option<f64>> = match def.transform {
            Transform::Return => {
                let x = source(0);
                (0..n)
                    .map(|t| {
                        let prev = x[t.checked_sub(def.window)?]?;
                        Some((x[t]? / prev).ln())
                    })
                    .collect()
            }
            Transform::Gap => {
                let (a, b) = (source(0), source(1));
                (0..n)
                    .map(|t| Some((a[t]? / b[t.checked_sub(1)?]?).ln()))
                    .collect()
            }
            Transform::Range => {
                let (a, b, c) = (source(0), source(1), source(2));
                (0..n).map(|t| Some((a[t]? - b[t]?) / c[t]?)).collect()
            }
            Transform::RollingMean => rolling_shifted(&source(0), def.window, RollingStat::Mean, lead),
            Transform::RollingStd => rolling_shifted(&source(0), def.window, RollingStat::Std, lead),
            Transform::Ratio => {
                let x = source(0);
                let mean = rolling_shifted(&x, def.window, RollingStat::Mean, lead);
                (0..n)
                    .map(|t| {
                        let m = mean[t]?;
                        (m != 0.0).then(|| x[t].map(|v| v / m)).flatten()
                    })
                    .collect()
            }
        };
        let col: Vec<Option<f64>> = col
            .into_iter()
            .map(|v| v.filter(|x| x.is_finite()))
            .collect();
        built.insert(def.name.clone(), col.clone());
        out.push(col);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormScope {
    /// Fit on the training rows of the walk-forward split.
    Train,
    /// Fit on every row of the panel.
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormEntry {
    pub name: String,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub scope: NormScope,
    pub features: Vec<NormEntry>,
    /// Columns excluded because they are constant (or nearly empty) in scope.
    pub dropped: Vec<String>,
}

impl NormStats {
    pub fn names(&self) -> Vec<String> {
        self.features.iter().map(|e| e.name.clone()).collect()
    }
}

/// Per-feature mean and sample std over the non-missing values in `rows`
/// (pairs of date index and asset index).
pub fn fit_norm(
    features: &FeatureMatrix,
    rows: &[(usize, usize)],
    scope: NormScope,
) -> Result<NormStats, FeatureError> {
    if rows.is_empty() {
        return Err(FeatureError::EmptyScope);
    }
    let k = features.n_features();
    let mut count = vec![0usize; k];
    let mut sum = vec![0.0f64; k];
    let mut lo = vec![f64::INFINITY; k];
    let mut hi = vec![f64::NEG_INFINITY; k];
    for &(t, i) in rows {
        for (f, &v) in features.row(t, i).iter().enumerate() {
            if !v.is_nan() {
                count[f] += 1;
                sum[f] += v;
                lo[f] = lo[f].min(v);
                hi[f] = hi[f].max(v);
            }
        }
    }
    let mean: Vec<f64> = (0..k)
        .map(|f| if count[f] > 0 { sum[f] / count[f] as f64 } else { f64::NAN })
        .collect();
    let mut ss = vec![0.0f64; k];
    for &(t, i) in rows {
        for (f, &v) in features.row(t, i).iter().enumerate() {
            if !v.is_nan() {
                ss[f] += (v - mean[f]) * (v - mean[f]);
            }
        }
    }
    let mut entries = Vec::new();
    let mut dropped = Vec::new();
    for f in 0..k {
        let name = features.names()[f].clone();
        if count[f] < 2 || lo[f] == hi[f] {
            log::warn!("feature {name} is constant or empty within the normalization scope; dropped");
            dropped.push(name);
            continue;
        }
        let std = (ss[f] / (count[f] - 1) as f64).sqrt();
        entries.push(NormEntry {
            name,
            mean: mean[f],
            std,
        });
    }
    Ok(NormStats {
        scope,
        features: entries,
        dropped,
    })
}

/// Standardizes `z = (x - mean) / std` for the retained columns, in stats order.
pub fn apply_norm(features: &FeatureMatrix, stats: &NormStats) -> Result<FeatureMatrix, FeatureError> {
    let mut out = features.select(&stats.names())?;
    let k = out.n_features();
    if k == 0 {
        return Ok(out);
    }
    for row in out.values.chunks_mut(k) {
        for (v, e) in row.iter_mut().zip(&stats.features) {
            *v = (*v - e.mean) / e.std;
        }
    }
    Ok(out)
}
