//! Monthly peer graphs from absolute return correlations, and the
//! neighbor-aggregated features computed from them.

use std::collections::BTreeMap;
use std::io::Write;
use std::ops::Range;

use chrono::{Datelike, NaiveDate};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FeatureMatrix;
use crate::panel::OhlcvPanel;

pub const LOOKBACK_DAYS: usize = 252;
pub const HALF_WINDOW: usize = 126;
pub const MIN_OVERLAP: usize = 30;
pub const DEFAULT_PEERS: usize = 5;

/// Source features aggregated over peers.
pub const NEIGHBOR_SOURCES: [&str; 4] = ["ret_5", "ret_20", "vol_ratio_20", "hl_range_5_mean"];

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("graph window at {anchor} has {len} days, need at least {min}", min = MIN_OVERLAP)]
    WindowTooShort { anchor: NaiveDate, len: usize },
    #[error("no peer graph for month {0}-{1:02}")]
    MissingGraph(i32, u32),
    #[error("peer count k must be >= 1")]
    InvalidK,
    #[error("feature {0:?} is not in the matrix")]
    UnknownFeature(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphMode {
    /// The last 252 trading days strictly before the anchor.
    Trailing,
    /// Anchor ± 126 trading days, clipped to the calendar.
    Symmetric,
}

pub type MonthKey = (i32, u32);

pub fn month_of(date: NaiveDate) -> MonthKey {
    (date.year(), date.month())
}

/// Half-open index range of the estimation window for `anchor`.
pub fn graph_window(n_dates: usize, anchor: usize, mode: GraphMode) -> Range<usize> {
    match mode {
        GraphMode::Trailing => anchor.saturating_sub(LOOKBACK_DAYS)..anchor,
        GraphMode::Symmetric => {
            let end = (anchor + HALF_WINDOW).min(n_dates.saturating_sub(1));
            anchor.saturating_sub(HALF_WINDOW)..end + 1
        }
    }
}

/// First trading day of every calendar month in the calendar.
pub fn month_anchors(calendar: &[NaiveDate]) -> Vec<(MonthKey, usize)> {
    let mut out: Vec<(MonthKey, usize)> = Vec::new();
    for (t, d) in calendar.iter().enumerate() {
        let m = month_of(*d);
        if out.last().map(|(k, _)| *k) != Some(m) {
            out.push((m, t));
        }
    }
    out
}

/// Row-normalized top-k peer weights. Row `i` lists `(peer index, weight)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PeerGraph {
    pub anchor: usize,
    pub anchor_date: NaiveDate,
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl PeerGraph {
    pub fn empty(anchor: usize, anchor_date: NaiveDate, n_assets: usize) -> Self {
        Self {
            anchor,
            anchor_date,
            rows: vec![Vec::new(); n_assets],
        }
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.rows[i]
            .iter()
            .find(|(p, _)| *p == j)
            .map_or(0.0, |(_, w)| *w)
    }

    pub fn write_csv<W: Write>(&self, assets: &[String], mut w: W) -> std::io::Result<()> {
        for (i, row) in self.rows.iter().enumerate() {
            for (j, weight) in row {
                writeln!(w, "{},{},{},{}", self.anchor_date, assets[i], assets[*j], weight)?;
            }
        }
        Ok(())
    }
}

/// Top-k selection over an absolute-correlation matrix. Only strictly positive
/// entries are eligible; ties go to the lower asset index (assets are kept in
/// id order).
pub fn top_k_rows(abs_corr: &[Vec<f64>], k: usize) -> Vec<Vec<(usize, f64)>> {
    abs_corr
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut cand: Vec<(usize, f64)> = row
                .iter()
                .enumerate()
                .filter(|&(j, &c)| j != i && c > 0.0)
                .map(|(j, &c)| (j, c))
                .collect();
            cand.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            cand.truncate(k);
            let total: f64 = cand.iter().map(|(_, c)| c).sum();
            cand.into_iter().map(|(j, c)| (j, c / total)).collect()
        })
        .collect()
}

/// Pairwise-complete Pearson correlation of close-to-close log returns over
/// the window; pairs with fewer than `MIN_OVERLAP` joint observations get 0.
pub fn return_abs_correlation(panel: &OhlcvPanel, window: Range<usize>) -> Vec<Vec<f64>> {
    let n = panel.n_assets();
    let returns: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            window
                .clone()
                .map(|s| {
                    let prev = s.checked_sub(1).and_then(|p| panel.bar(p, i));
                    match (panel.bar(s, i), prev) {
                        (Some(b), Some(p)) => (b.close / p.close).ln(),
                        _ => f64::NAN,
                    }
                })
                .collect()
        })
        .collect();
    // Standardized copies for assets with a complete window.
    let standardized: Vec<Option<Vec<f64>>> = returns
        .iter()
        .map(|r| {
            if r.len() < MIN_OVERLAP || r.iter().any(|x| x.is_nan()) {
                return None;
            }
            let mean = r.iter().sum::<f64>() / r.len() as f64;
            let ss: f64 = r.iter().map(|x| (x - mean) * (x - mean)).sum();
            if ss == 0.0 {
                return Some(vec![0.0; r.len()]);
            }
            let norm = ss.sqrt();
            Some(r.iter().map(|x| (x - mean) / norm).collect())
        })
        .collect();

    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (i + 1..n)
                .map(|j| match (&standardized[i], &standardized[j]) {
                    (Some(a), Some(b)) => a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>(),
                    _ => pairwise_corr(&returns[i], &returns[j]),
                })
                .map(|c| if c.is_finite() { c.abs().min(1.0) } else { 0.0 })
                .collect()
        })
        .collect();
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        for (off, &c) in upper[i].iter().enumerate() {
            let j = i + 1 + off;
            out[i][j] = c;
            out[j][i] = c;
        }
    }
    out
}

fn pairwise_corr(x: &[f64], y: &[f64]) -> f64 {
    let pairs: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(a, b)| !a.is_nan() && !b.is_nan())
        .map(|(a, b)| (*a, *b))
        .collect();
    if pairs.len() < MIN_OVERLAP {
        return 0.0;
    }
    let m = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / m;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in pairs {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

pub fn build_graph(
    panel: &OhlcvPanel,
    anchor: usize,
    mode: GraphMode,
    k: usize,
) -> Result<PeerGraph, GraphError> {
    if k == 0 {
        return Err(GraphError::InvalidK);
    }
    let window = graph_window(panel.n_dates(), anchor, mode);
    if window.len() < MIN_OVERLAP {
        return Err(GraphError::WindowTooShort {
            anchor: panel.calendar()[anchor],
            len: window.len(),
        });
    }
    let corr = return_abs_correlation(panel, window);
    Ok(PeerGraph {
        anchor,
        anchor_date: panel.calendar()[anchor],
        rows: top_k_rows(&corr, k),
    })
}

/// One graph per calendar month. Months whose window is too short carry an
/// empty graph, which leaves their neighbor features missing.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphSet {
    pub mode: GraphMode,
    pub graphs: BTreeMap<MonthKey, PeerGraph>,
}

pub fn build_graphs(panel: &OhlcvPanel, mode: GraphMode, k: usize) -> Result<GraphSet, GraphError> {
    let anchors = month_anchors(panel.calendar());
    let graphs = anchors
        .par_iter()
        .map(|&(month, anchor)| match build_graph(panel, anchor, mode, k) {
            Ok(g) => Ok((month, g)),
            Err(GraphError::WindowTooShort { .. }) => Ok((
                month,
                PeerGraph::empty(anchor, panel.calendar()[anchor], panel.n_assets()),
            )),
            Err(e) => Err(e),
        })
        .collect::<Result<BTreeMap<_, _>, _>>()?;
    Ok(GraphSet { mode, graphs })
}

/// `nbr_<name>(i, t) = Σ_j W_ij name(j, t)` using the graph of t's month.
/// Missing peer values are skipped and the remaining weights renormalized;
/// with no present peer the value is missing.
pub fn neighbor_features(
    features: &FeatureMatrix,
    graphs: &GraphSet,
    names: &[&str],
) -> Result<FeatureMatrix, GraphError> {
    let cols: Vec<usize> = names
        .iter()
        .map(|n| features.index_of(n).ok_or_else(|| GraphError::UnknownFeature(n.to_string())))
        .collect::<Result<_, _>>()?;
    let out_names = names.iter().map(|n| format!("nbr_{n}")).collect();
    let mut out = FeatureMatrix::new(
        features.calendar().to_vec(),
        features.assets().to_vec(),
        out_names,
    );
    for t in 0..features.n_dates() {
        let (y, m) = month_of(features.calendar()[t]);
        let graph = graphs.graphs.get(&(y, m)).ok_or(GraphError::MissingGraph(y, m))?;
        for i in 0..features.n_assets() {
            for (k, &f) in cols.iter().enumerate() {
                let (mut acc, mut wsum) = (0.0, 0.0);
                for &(j, w) in &graph.rows[i] {
                    if let Some(v) = features.get(t, j, f) {
                        acc += w * v;
                        wsum += w;
                    }
                }
                out.set(t, i, k, (wsum > 0.0).then(|| acc / wsum));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_arithmetic() {
        assert_eq!(graph_window(1000, 300, GraphMode::Trailing), 48..300);
        assert_eq!(graph_window(1000, 300, GraphMode::Symmetric), 174..427);
        assert_eq!(graph_window(1000, 50, GraphMode::Symmetric), 0..177);
        assert_eq!(graph_window(320, 300, GraphMode::Symmetric), 174..320);
        assert_eq!(graph_window(1000, 10, GraphMode::Trailing), 0..10);
    }

    #[test]
    fn top_one_and_top_two() {
        let corr = vec![vec![0.0, 0.9, 0.2], vec![0.9, 0.0, 0.1], vec![0.2, 0.1, 0.0]];
        let k1 = top_k_rows(&corr, 1);
        assert_eq!(k1[0], vec![(1, 1.0)]);
        let k2 = top_k_rows(&corr, 2);
        assert!((k2[0][0].1 - 0.9 / 1.1).abs() < 1e-15);
        assert!((k2[0][1].1 - 0.2 / 1.1).abs() < 1e-15);
        assert_eq!(k2[0][0].0, 1);
    }

    #[test]
    fn ties_prefer_lower_index_and_zeros_excluded() {
        let corr = vec![
            vec![0.0, 0.5, 0.5, 0.0],
            vec![0.5, 0.0, 0.0, 0.0],
            vec![0.5, 0.0, 0.0, 0.0],
            vec![0.0, 0.0, 0.0, 0.0],
        ];
        let g = top_k_rows(&corr, 1);
        assert_eq!(g[0], vec![(1, 1.0)]);
        assert!(g[3].is_empty());
    }

    #[test]
    fn month_anchors_pick_first_session() {
        let cal: Vec<NaiveDate> = ["2024-01-30", "2024-01-31", "2024-02-01", "2024-02-02", "2024-03-04"]
            .iter()
            .map(|s| s.parse().unwrap())
            .collect();
        assert_eq!(
            month_anchors(&cal),
            vec![((2024, 1), 0), ((2024, 2), 2), ((2024, 3), 4)]
        );
    }
}
