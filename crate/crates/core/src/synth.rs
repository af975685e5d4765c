//! Seeded synthetic OHLCV panels with no exploitable cross-sectional signal.
//!
//! Closes follow independent geometric random walks. Each shock is drawn
//! from a counter-based stream keyed by `(seed, asset, day, field)`, so a bar
//! depends only on the seed and on shocks at or before its own day.

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::panel::{OhlcvBar, OhlcvPanel};
use crate::rng::CounterRng;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),
}

const FIELD_CLOSE: u64 = 0;
const FIELD_OPEN: u64 = 1;
const FIELD_HIGH: u64 = 2;
const FIELD_LOW: u64 = 3;
const FIELD_VOLUME: u64 = 4;
const FACTOR_ASSET: u64 = u64::MAX;

const BASE_VOLUME: f64 = 1.0e6;
const VOLUME_LOG_SD: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_assets: usize,
    pub n_days: usize,
    pub daily_vol: f64,
    pub intraday_vol: f64,
    pub start_price: f64,
    pub seed: u64,
    /// Share of daily close variance driven by a common factor; 0 means independent assets.
    pub factor_share: f64,
    /// First calendar day; the calendar then runs over consecutive weekdays.
    pub start_date: NaiveDate,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_assets: 100,
            n_days: 1000,
            daily_vol: 0.02,
            intraday_vol: 0.002,
            start_price: 100.0,
            seed: 0,
            factor_share: 0.0,
            start_date: NaiveDate::from_ymd_opt(2015, 1, 1).expect("valid date"),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidConfig(m.to_string()));
        if self.n_assets < 2 {
            return bad("n_assets must be >= 2");
        }
        if self.n_days < 300 {
            return bad("n_days must be >= 300");
        }
        if !(self.daily_vol > 0.0 && self.daily_vol.is_finite()) {
            return bad("daily_vol must be > 0");
        }
        if !(self.intraday_vol > 0.0 && self.intraday_vol.is_finite()) {
            return bad("intraday_vol must be > 0");
        }
        if !(self.start_price > 0.0 && self.start_price.is_finite()) {
            return bad("start_price must be > 0");
        }
        if !(0.0..1.0).contains(&self.factor_share) {
            return bad("factor_share must lie in [0, 1)");
        }
        Ok(())
    }

    /// Parses the `key=value,key=value` CLI shorthand on top of the defaults.
    pub fn parse_shorthand(text: &str) -> Result<Self, SynthError> {
        let mut cfg = Self::default();
        for part in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| SynthError::InvalidConfig(format!("expected key=value, got {part:?}")))?;
            let err = || SynthError::InvalidConfig(format!("bad value for {key}: {value:?}"));
            match key.trim() {
                "n_assets" => cfg.n_assets = value.parse().map_err(|_| err())?,
                "n_days" => cfg.n_days = value.parse().map_err(|_| err())?,
                "daily_vol" => cfg.daily_vol = value.parse().map_err(|_| err())?,
                "intraday_vol" => cfg.intraday_vol = value.parse().map_err(|_| err())?,
                "start_price" => cfg.start_price = value.parse().map_err(|_| err())?,
                "seed" => cfg.seed = value.parse().map_err(|_| err())?,
                "factor_share" => cfg.factor_share = value.parse().map_err(|_| err())?,
                "start_date" => {
                    cfg.start_date =
                        NaiveDate::parse_from_str(value, "%Y-%m-%d").map_err(|_| err())?
                }
                other => {
                    return Err(SynthError::InvalidConfig(format!("unknown key {other:?}")))
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Consecutive weekdays starting at `start` (rolled forward off a weekend).
pub fn weekday_calendar(start: NaiveDate, n_days: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(n_days);
    let mut d = start;
    while out.len() < n_days {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d += Duration::days(1);
    }
    out
}

fn normal(seed: u64, asset: u64, day: u64, field: u64) -> f64 {
    CounterRng::new(seed, &[asset, day, field]).sample(StandardNormal)
}

/// Intraday shape shocks of one bar, in log units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarShape {
    /// `ln(open / previous close)`
    pub gap: f64,
    /// `ln(high / max(open, close))`, non-negative
    pub up: f64,
    /// `ln(min(open, close) / low)`, non-negative
    pub down: f64,
}

impl BarShape {
    pub fn of(prev_close: f64, bar: &OhlcvBar) -> Self {
        Self {
            gap: (bar.open / prev_close).ln(),
            up: (bar.high / bar.open.max(bar.close)).ln().max(0.0),
            down: (bar.open.min(bar.close) / bar.low).ln().max(0.0),
        }
    }
}

/// The generator's bar-shape rule: open from the previous close and a gap,
/// then high/low as non-negative log excursions beyond the open/close body.
pub fn shape_bar(prev_close: f64, close: f64, shape: BarShape, volume: f64) -> OhlcvBar {
    let open = prev_close * shape.gap.exp();
    let high = open.max(close) * shape.up.exp();
    let low = open.min(close) * (-shape.down).exp();
    OhlcvBar {
        open,
        high,
        low,
        close,
        volume,
    }
}

pub fn generate_panel(cfg: &SynthConfig) -> Result<OhlcvPanel, SynthError> {
    cfg.validate()?;
    let calendar = weekday_calendar(cfg.start_date, cfg.n_days);
    let width = (cfg.n_assets.saturating_sub(1)).to_string().len().max(3);
    let assets: Vec<String> = (0..cfg.n_assets)
        .map(|i| format!("A{i:0width$}"))
        .collect();

    let factor: Vec<f64> = if cfg.factor_share > 0.0 {
        (0..cfg.n_days)
            .map(|t| normal(cfg.seed, FACTOR_ASSET, t as u64, FIELD_CLOSE))
            .collect()
    } else {
        Vec::new()
    };
    let (w_factor, w_idio) = (cfg.factor_share.sqrt(), (1.0 - cfg.factor_share).sqrt());

    let columns: Vec<Vec<OhlcvBar>> = (0..cfg.n_assets)
        .into_par_iter()
        .map(|i| {
            let a = i as u64;
            let mut prev_close = cfg.start_price;
            (0..cfg.n_days)
                .map(|t| {
                    let day = t as u64;
                    let mut eps = normal(cfg.seed, a, day, FIELD_CLOSE);
                    if cfg.factor_share > 0.0 {
                        eps = w_factor * factor[t] + w_idio * eps;
                    }
                    let close = prev_close * (cfg.daily_vol * eps).exp();
                    let shape = BarShape {
                        gap: cfg.intraday_vol * normal(cfg.seed, a, day, FIELD_OPEN),
                        up: cfg.intraday_vol * normal(cfg.seed, a, day, FIELD_HIGH).abs(),
                        down: cfg.intraday_vol * normal(cfg.seed, a, day, FIELD_LOW).abs(),
                    };
                    let volume = BASE_VOLUME
                        * (VOLUME_LOG_SD * normal(cfg.seed, a, day, FIELD_VOLUME)).exp();
                    let bar = shape_bar(prev_close, close, shape, volume);
                    prev_close = close;
                    bar
                })
                .collect()
        })
        .collect();

    let mut bars = Vec::with_capacity(cfg.n_days * cfg.n_assets);
    for t in 0..cfg.n_days {
        for col in &columns {
            bars.push(Some(col[t]));
        }
    }
    OhlcvPanel::new(calendar, assets, bars)
        .map_err(|e| SynthError::InvalidConfig(format!("generated panel failed validation: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            n_assets: 5,
            n_days: 300,
            seed: 11,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let a = generate_panel(&small()).unwrap();
        let b = generate_panel(&small()).unwrap();
        assert_eq!(a, b);
        let c = generate_panel(&SynthConfig { seed: 12, ..small() }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn bars_satisfy_shape_invariant() {
        let p = generate_panel(&small()).unwrap();
        for b in p.bars().iter().flatten() {
            assert!(b.low <= b.open.min(b.close));
            assert!(b.open.max(b.close) <= b.high);
            assert!(b.volume >= 0.0);
        }
    }

    #[test]
    fn prefix_is_independent_of_length() {
        let short = generate_panel(&small()).unwrap();
        let long = generate_panel(&SynthConfig { n_days: 400, ..small() }).unwrap();
        for t in 0..300 {
            for i in 0..5 {
                assert_eq!(short.bar(t, i), long.bar(t, i));
            }
        }
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(generate_panel(&SynthConfig { n_assets: 1, ..small() }).is_err());
        assert!(generate_panel(&SynthConfig { n_days: 299, ..small() }).is_err());
        assert!(generate_panel(&SynthConfig { daily_vol: 0.0, ..small() }).is_err());
    }

    #[test]
    fn shorthand_parses() {
        let c = SynthConfig::parse_shorthand("n_assets=20, n_days=400,seed=3").unwrap();
        assert_eq!((c.n_assets, c.n_days, c.seed), (20, 400, 3));
        assert!(SynthConfig::parse_shorthand("n_assets=x").is_err());
        assert!(SynthConfig::parse_shorthand("bogus=1").is_err());
    }

    #[test]
    fn calendar_skips_weekends() {
        let cal = weekday_calendar(NaiveDate::from_ymd_opt(2024, 1, 5).unwrap(), 3);
        assert_eq!(
            cal.iter().map(|d| d.to_string()).collect::<Vec<_>>(),
            ["2024-01-05", "2024-01-08", "2024-01-09"]
        );
    }

    #[test]
    fn shape_round_trips() {
        let bar = OhlcvBar {
            open: 101.0,
            high: 104.0,
            low: 99.0,
            close: 103.0,
            volume: 5.0,
        };
        let s = BarShape::of(100.0, &bar);
        let back = shape_bar(100.0, 103.0, s, 5.0);
        assert!((back.open - 101.0).abs() < 1e-9);
        assert!((back.high - 104.0).abs() < 1e-9);
        assert!((back.low - 99.0).abs() < 1e-9);
    }
}
