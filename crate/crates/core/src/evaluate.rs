//! Yearly walk-forward splits and the fixed top-decile long-only backtest.

use std::ops::Range;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::ScorePanel;
use crate::protocol::TradeReturnPanel;

pub const DEFAULT_COSTS_BPS: [f64; 3] = [0.0, 5.0, 10.0];
pub const SENSITIVITY_COSTS_BPS: [f64; 5] = [0.0, 5.0, 10.0, 25.0, 50.0];

/// Recorded in report provenance.
pub const TURNOVER_CONVENTION: &str =
    "two-sided L1 change of target weights, no drift adjustment, first day charged as full entry (1.0)";

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("test year {0} has no trading days in the calendar")]
    YearNotInCalendar(i32),
    #[error("test year {0} leaves no training days before the embargo")]
    NoTrainingDays(i32),
    #[error("scores and trade returns cover different assets")]
    MisalignedInputs,
    #[error("empty net-return series")]
    EmptySeries,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkForwardSplit {
    pub test_year: i32,
    /// Calendar indices of the (expanding) training window.
    pub train: Range<usize>,
    /// Calendar indices of the test year.
    pub test: Range<usize>,
    pub embargo_days: usize,
}

impl WalkForwardSplit {
    pub fn train_dates(&self) -> Vec<usize> {
        self.train.clone().collect()
    }

    pub fn test_dates(&self) -> Vec<usize> {
        self.test.clone().collect()
    }
}

/// Expanding-window splits: training runs from the first session through
/// `first_test - embargo - 1`, testing covers every session of the year.
pub fn make_splits(
    calendar: &[NaiveDate],
    test_years: &[i32],
    embargo_days: usize,
) -> Result<Vec<WalkForwardSplit>, EvalError> {
    test_years
        .iter()
        .map(|&year| {
            let start = calendar.partition_point(|d| d.year() < year);
            let end = calendar.partition_point(|d| d.year() <= year);
            if start == end {
                return Err(EvalError::YearNotInCalendar(year));
            }
            let train_end = start
                .checked_sub(embargo_days)
                .filter(|&e| e > 0)
                .ok_or(EvalError::NoTrainingDays(year))?;
            Ok(WalkForwardSplit {
                test_year: year,
                train: 0..train_end,
                test: start..end,
                embargo_days,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestSeries {
    pub dates: Vec<NaiveDate>,
    pub gross: Vec<f64>,
    pub turnover: Vec<f64>,
    /// Per date, `(asset index, weight)` of the held book.
    pub holdings: Vec<Vec<(usize, f64)>>,
    pub costs_bps: Vec<f64>,
    /// `net[k][t]` is the day-t return after `costs_bps[k]`.
    pub net: Vec<Vec<f64>>,
    /// Dates with no evaluable asset (no entry in the series).
    pub skipped: Vec<NaiveDate>,
}

impl BacktestSeries {
    pub fn net_at(&self, cost_bps: f64) -> Option<&[f64]> {
        self.costs_bps
            .iter()
            .position(|&c| c == cost_bps)
            .map(|k| self.net[k].as_slice())
    }

    pub fn mean_turnover(&self) -> f64 {
        if self.turnover.is_empty() {
            return f64::NAN;
        }
        self.turnover.iter().sum::<f64>() / self.turnover.len() as f64
    }
}

/// `net = gross - turnover * c / 10^4`
#[inline]
pub fn net_return(gross: f64, turnover: f64, cost_bps: f64) -> f64 {
    gross - turnover * cost_bps / 1e4
}

/// Holds the top ⌈N/10⌉ scored assets each date with equal weight. Score ties
/// go to the lower asset id. Selected assets with no realized trade return are
/// dropped for that day and the remaining weights renormalized.
pub fn run_backtest(
    scores: &ScorePanel,
    trade: &TradeReturnPanel,
    costs_bps: &[f64],
) -> Result<BacktestSeries, EvalError> {
    if scores.assets != trade.r.assets {
        return Err(EvalError::MisalignedInputs);
    }
    let n_assets = scores.assets.len();
    let mut out = BacktestSeries {
        dates: Vec::new(),
        gross: Vec::new(),
        turnover: Vec::new(),
        holdings: Vec::new(),
        costs_bps: costs_bps.to_vec(),
        net: vec![Vec::new(); costs_bps.len()],
        skipped: Vec::new(),
    };
    let mut prev = vec![0.0f64; n_assets];
    let mut curr = vec![0.0f64; n_assets];

    for k in 0..scores.n_dates() {
        let t = scores.date_index[k];
        let mut ranked: Vec<(usize, f64)> = (0..n_assets)
            .filter_map(|i| scores.get(k, i).map(|s| (i, s)))
            .collect();
        if ranked.is_empty() {
            log::debug!("no evaluable assets on {}; date skipped", scores.dates[k]);
            out.skipped.push(scores.dates[k]);
            continue;
        }
        ranked.sort_by(|a, b| {
            b.1.total_cmp(&a.1)
                .then_with(|| scores.assets[a.0].cmp(&scores.assets[b.0]))
        });
        let take = ranked.len().div_ceil(10);
        let book: Vec<(usize, f64)> = ranked[..take]
            .iter()
            .filter_map(|&(i, _)| trade.r.get(t, i).map(|r| (i, r)))
            .collect();
        if book.is_empty() {
            log::debug!("no selected asset has a trade return on {}; date skipped", scores.dates[k]);
            out.skipped.push(scores.dates[k]);
            continue;
        }
        let w = 1.0 / book.len() as f64;
        curr.iter_mut().for_each(|c| *c = 0.0);
        for &(i, _) in &book {
            curr[i] = w;
        }
        let turnover: f64 = prev.iter().zip(&curr).map(|(a, b)| (a - b).abs()).sum();
        let gross = book.iter().map(|(_, r)| r).sum::<f64>() / book.len() as f64;

        out.dates.push(scores.dates[k]);
        out.gross.push(gross);
        out.turnover.push(turnover);
        out.holdings.push(book.iter().map(|&(i, _)| (i, w)).collect());
        for (series, &c) in out.net.iter_mut().zip(costs_bps) {
            series.push(net_return(gross, turnover, c));
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    Ok(out)
}

/// Largest peak-to-trough loss of a wealth path, as a fraction of the peak.
pub fn max_drawdown_of_wealth(wealth: &[f64]) -> f64 {
    let mut peak = f64::NEG_INFINITY;
    let mut worst: f64 = 0.0;
    for &w in wealth {
        peak = peak.max(w);
        worst = worst.max((peak - w) / peak);
    }
    worst
}

/// Drawdown of the compounded path `W_t = Π_{s<=t} (1 + net_s)`.
pub fn max_drawdown(net: &[f64]) -> Result<f64, EvalError> {
    if net.is_empty() {
        return Err(EvalError::EmptySeries);
    }
    let mut w = 1.0;
    let wealth: Vec<f64> = net
        .iter()
        .map(|r| {
            w *= 1.0 + r;
            w
        })
        .collect();
    Ok(max_drawdown_of_wealth(&wealth))
}
