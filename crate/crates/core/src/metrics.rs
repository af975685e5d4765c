//! Predictive and trading metrics, paired Leakage Gains, and year-level
//! stability statistics.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::ScorePanel;
use crate::protocol::LabelPanel;
use crate::rng::CounterRng;

pub const ANNUALIZATION: f64 = 252.0;
pub const DEFAULT_BOOTSTRAP_RESAMPLES: usize = 10_000;
/// Largest sample handled by the exact signed-rank distribution.
pub const WILCOXON_MAX_N: usize = 25;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no date has a valid cross-section")]
    NoValidDates,
    #[error("series has zero variance")]
    ZeroVariance,
    #[error("need at least {need} observations, got {got}")]
    TooFewObservations { need: usize, got: usize },
    #[error("need at least 2 yearly values, got {0}")]
    TooFewYears(usize),
    #[error("all differences are zero")]
    AllZeros,
    #[error("exact signed-rank test supports at most {max} nonzero differences, got {0}", max = WILCOXON_MAX_N)]
    TooManyForExact(usize),
    #[error("runs are not paired: config hash {variant} != {clean}")]
    PairingMismatch { variant: String, clean: String },
}

/// Average ranks (1-based); tied values share the mean of their positions.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut k = 0;
    while k < idx.len() {
        let mut j = k;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[k]] {
            j += 1;
        }
        let avg = (k + j) as f64 / 2.0 + 1.0;
        for &p in &idx[k..=j] {
            ranks[p] = avg;
        }
        k = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Spearman correlation of one cross-section; `None` with fewer than 3 pairs
/// or a constant side.
pub fn daily_rank_ic(scores: &[f64], labels: &[f64]) -> Option<f64> {
    if scores.len() < 3 || scores.len() != labels.len() {
        return None;
    }
    pearson(&average_ranks(scores), &average_ranks(labels)).map(|r| r.clamp(-1.0, 1.0))
}

/// ROC AUC of scores against `label > 0`, ties counted half, via rank sums.
/// `None` unless both classes are present.
pub fn daily_auc(scores: &[f64], labels: &[f64]) -> Option<f64> {
    if scores.len() != labels.len() {
        return None;
    }
    let n_pos = labels.iter().filter(|&&y| y > 0.0).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let ranks = average_ranks(scores);
    let rank_sum: f64 = ranks
        .iter()
        .zip(labels)
        .filter(|(_, &y)| y > 0.0)
        .map(|(r, _)| r)
        .sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

/// Aligned `(scores, labels)` per scored date, keeping assets where both exist.
pub fn cross_sections(scores: &ScorePanel, labels: &LabelPanel) -> Vec<(Vec<f64>, Vec<f64>)> {
    (0..scores.n_dates())
        .map(|k| {
            let t = scores.date_index[k];
            let mut s = Vec::new();
            let mut y = Vec::new();
            for i in 0..scores.assets.len() {
                if let (Some(a), Some(b)) = (scores.get(k, i), labels.y.get(t, i)) {
                    s.push(a);
                    y.push(b);
                }
            }
            (s, y)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pooled {
    pub value: f64,
    pub n_dates: usize,
}

fn pooled(values: impl Iterator<Item = Option<f64>>) -> Result<Pooled, MetricsError> {
    let valid: Vec<f64> = values.flatten().collect();
    if valid.is_empty() {
        return Err(MetricsError::NoValidDates);
    }
    Ok(Pooled {
        value: valid.iter().sum::<f64>() / valid.len() as f64,
        n_dates: valid.len(),
    })
}

/// Mean daily Spearman correlation over dates where it is defined.
pub fn rank_ic(days: &[(Vec<f64>, Vec<f64>)]) -> Result<Pooled, MetricsError> {
    pooled(days.iter().map(|(s, y)| daily_rank_ic(s, y)))
}

/// Mean daily AUC over dates containing both classes.
pub fn auc(days: &[(Vec<f64>, Vec<f64>)]) -> Result<Pooled, MetricsError> {
    pooled(days.iter().map(|(s, y)| daily_auc(s, y)))
}

/// Annualized Sharpe ratio `sqrt(252) * mean / sample std`.
pub fn sharpe(net: &[f64]) -> Result<f64, MetricsError> {
    if net.len() < 2 {
        return Err(MetricsError::TooFewObservations {
            need: 2,
            got: net.len(),
        });
    }
    if net.iter().all(|&x| x == net[0]) {
        return Err(MetricsError::ZeroVariance);
    }
    let n = net.len() as f64;
    let mean = net.iter().sum::<f64>() / n;
    let var = net.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    if var == 0.0 {
        return Err(MetricsError::ZeroVariance);
    }
    Ok(ANNUALIZATION.sqrt() * mean / var.sqrt())
}

/// Pooled and per-year metrics of one run. `None` marks NA.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub config_hash: String,
    pub rank_ic: Option<f64>,
    pub auc: Option<f64>,
    pub n_dates_rankic: usize,
    pub n_dates_auc: usize,
    /// Keyed by cost in bps (as its string form, for stable serialization).
    pub sharpe: BTreeMap<String, Option<f64>>,
    pub mean_net: BTreeMap<String, Option<f64>>,
    pub max_drawdown: BTreeMap<String, Option<f64>>,
    pub mean_turnover: Option<f64>,
    /// `yearly_sharpe[year][cost]`
    pub yearly_sharpe: BTreeMap<i32, BTreeMap<String, Option<f64>>>,
}

pub fn cost_key(cost_bps: f64) -> String {
    format!("{cost_bps}")
}

/// Variant-minus-clean differences. NA on either side gives NA.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakageGain {
    pub rank_ic: Option<f64>,
    pub auc: Option<f64>,
    pub sharpe: BTreeMap<String, Option<f64>>,
    pub yearly_sharpe: BTreeMap<i32, BTreeMap<String, Option<f64>>>,
}

fn diff(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    Some(a? - b?)
}

fn diff_map(a: &BTreeMap<String, Option<f64>>, b: &BTreeMap<String, Option<f64>>) -> BTreeMap<String, Option<f64>> {
    a.iter()
        .map(|(k, v)| (k.clone(), diff(*v, b.get(k).copied().flatten())))
        .collect()
}

pub fn leakage_gain(variant: &MetricReport, clean: &MetricReport) -> Result<LeakageGain, MetricsError> {
    if variant.config_hash != clean.config_hash {
        return Err(MetricsError::PairingMismatch {
            variant: variant.config_hash.clone(),
            clean: clean.config_hash.clone(),
        });
    }
    Ok(LeakageGain {
        rank_ic: diff(variant.rank_ic, clean.rank_ic),
        auc: diff(variant.auc, clean.auc),
        sharpe: diff_map(&variant.sharpe, &clean.sharpe),
        yearly_sharpe: variant
            .yearly_sharpe
            .iter()
            .map(|(y, m)| {
                let empty = BTreeMap::new();
                (*y, diff_map(m, clean.yearly_sharpe.get(y).unwrap_or(&empty)))
            })
            .collect(),
    })
}

/// Linear-interpolation percentile of sorted data, `q` in [0, 1].
fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Percentile bootstrap 95% interval of the mean of `yearly`.
pub fn bootstrap_ci(yearly: &[f64], n_resamples: usize, seed: u64) -> Result<(f64, f64), MetricsError> {
    let n = yearly.len();
    if n < 2 {
        return Err(MetricsError::TooFewYears(n));
    }
    if n_resamples == 0 {
        return Err(MetricsError::TooFewObservations { need: 1, got: 0 });
    }
    let mut means: Vec<f64> = (0..n_resamples)
        .map(|b| {
            let mut rng = CounterRng::new(seed, &[b as u64]);
            (0..n).map(|_| yearly[rng.random_range(0..n)]).sum::<f64>() / n as f64
        })
        .collect();
    means.sort_by(f64::total_cmp);
    Ok((percentile_sorted(&means, 0.025), percentile_sorted(&means, 0.975)))
}

/// Exact one-sided signed-rank p-value `P(W+ >= observed)` under H0, for the
/// alternative that differences are centered above zero. Zeros are dropped;
/// tied magnitudes get average ranks.
pub fn wilcoxon_one_sided(diffs: &[f64]) -> Result<f64, MetricsError> {
    let nz: Vec<f64> = diffs.iter().copied().filter(|&d| d != 0.0).collect();
    if nz.is_empty() {
        return Err(MetricsError::AllZeros);
    }
    if nz.len() > WILCOXON_MAX_N {
        return Err(MetricsError::TooManyForExact(nz.len()));
    }
    let mags: Vec<f64> = nz.iter().map(|d| d.abs()).collect();
    // Doubled ranks are integers even with ties.
    let ranks2: Vec<usize> = average_ranks(&mags)
        .iter()
        .map(|r| (r * 2.0).round() as usize)
        .collect();
    let observed: usize = ranks2
        .iter()
        .zip(&nz)
        .filter(|(_, &d)| d > 0.0)
        .map(|(r, _)| r)
        .sum();
    // counts[s] = number of sign assignments with doubled positive-rank sum s.
    let total: usize = ranks2.iter().sum();
    let mut counts = vec![0u64; total + 1];
    counts[0] = 1;
    for &r in &ranks2 {
        for s in (r..=total).rev() {
            counts[s] += counts[s - r];
        }
    }
    let hits: u64 = counts[observed..].iter().sum();
    Ok(hits as f64 / (1u64 << nz.len()) as f64)
}

/// Year-level summary of one LG series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YearlyStats {
    pub mean: f64,
    pub ci: Option<(f64, f64)>,
    pub positive_years: usize,
    pub n_years: usize,
    pub wilcoxon_p: Option<f64>,
}

pub fn yearly_stats(values: &[f64], n_resamples: usize, seed: u64) -> Option<YearlyStats> {
    if values.is_empty() {
        return None;
    }
    Some(YearlyStats {
        mean: values.iter().sum::<f64>() / values.len() as f64,
        ci: bootstrap_ci(values, n_resamples, seed).ok(),
        positive_years: values.iter().filter(|&&v| v > 0.0).count(),
        n_years: values.len(),
        wilcoxon_p: wilcoxon_one_sided(values).ok(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn average_ranks_with_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 10.0, 5.0]), vec![2.5, 4.0, 2.5, 1.0]);
    }

    #[test]
    fn rank_ic_examples() {
        assert_eq!(daily_rank_ic(&[1., 2., 3.], &[10., 20., 30.]), Some(1.0));
        assert!((daily_rank_ic(&[1., 2., 3.], &[3., 1., 2.]).unwrap() + 0.5).abs() < 1e-15);
        assert_eq!(daily_rank_ic(&[1., 2., 3.], &[1., 1., 1.]), None);
        assert_eq!(daily_rank_ic(&[1., 2.], &[1., 2.]), None);
        let days = vec![(vec![1., 2., 3.], vec![1., 1., 1.]), (vec![1., 2., 3.], vec![3., 2., 1.])];
        assert_eq!(rank_ic(&days).unwrap(), Pooled { value: -1.0, n_dates: 1 });
        assert_eq!(rank_ic(&days[..1]), Err(MetricsError::NoValidDates));
    }

    #[test]
    fn auc_examples() {
        assert_eq!(daily_auc(&[0.1, 0.9], &[-1.0, 1.0]), Some(1.0));
        assert_eq!(daily_auc(&[0.5, 0.5], &[1.0, -1.0]), Some(0.5));
        assert_eq!(daily_auc(&[0.9, 0.8, 0.3, 0.1], &[1.0, 0.0, 1.0, 0.0]), Some(0.75));
        assert_eq!(daily_auc(&[0.9, 0.8], &[1.0, 2.0]), None);
    }

    #[test]
    fn sharpe_examples() {
        let sr = sharpe(&[0.01, -0.01, 0.01, -0.01, 0.02]).unwrap();
        let expected = 252f64.sqrt() * 0.004 / 1.8e-4f64.sqrt();
        assert!((sr - expected).abs() < 1e-9);
        assert!((sr - 4.732).abs() < 1e-3);
        assert_eq!(sharpe(&[0.001; 10]), Err(MetricsError::ZeroVariance));
        assert_eq!(sharpe(&[0.0; 10]), Err(MetricsError::ZeroVariance));
        assert!(sharpe(&[0.1]).is_err());
    }

    fn report(hash: &str, sr5: Option<f64>) -> MetricReport {
        MetricReport {
            config_hash: hash.into(),
            rank_ic: Some(0.01),
            auc: Some(0.5),
            n_dates_rankic: 1,
            n_dates_auc: 1,
            sharpe: [("5".to_string(), sr5)].into(),
            mean_net: BTreeMap::new(),
            max_drawdown: BTreeMap::new(),
            mean_turnover: Some(1.0),
            yearly_sharpe: [(2020, [("5".to_string(), sr5)].into())].into(),
        }
    }

    #[test]
    fn leakage_gain_examples() {
        let lg = leakage_gain(&report("h", Some(2.0)), &report("h", Some(0.5))).unwrap();
        assert_eq!(lg.sharpe["5"], Some(1.5));
        assert_eq!(lg.yearly_sharpe[&2020]["5"], Some(1.5));
        let same = leakage_gain(&report("h", Some(0.5)), &report("h", Some(0.5))).unwrap();
        assert_eq!(same.sharpe["5"], Some(0.0));
        assert_eq!(same.rank_ic, Some(0.0));
        let na = leakage_gain(&report("h", None), &report("h", Some(0.5))).unwrap();
        assert_eq!(na.sharpe["5"], None);
        assert!(matches!(
            leakage_gain(&report("a", None), &report("b", None)),
            Err(MetricsError::PairingMismatch { .. })
        ));
    }

    #[test]
    fn bootstrap_examples() {
        assert_eq!(bootstrap_ci(&[0.7; 5], 1000, 1).unwrap(), (0.7, 0.7));
        let v: Vec<f64> = (1..=9).map(f64::from).collect();
        let a = bootstrap_ci(&v, 10_000, 9).unwrap();
        assert_eq!(a, bootstrap_ci(&v, 10_000, 9).unwrap());
        assert!(a.0 < 5.0 && 5.0 < a.1);
        assert!(a.0 >= 1.0 && a.1 <= 9.0);
        assert_eq!(bootstrap_ci(&[1.0], 10, 1), Err(MetricsError::TooFewYears(1)));
    }

    #[test]
    fn wilcoxon_examples() {
        let p = wilcoxon_one_sided(&[0.3; 9].iter().enumerate().map(|(k, v)| v + k as f64).collect::<Vec<_>>()).unwrap();
        assert_eq!(p, 1.0 / 512.0);
        assert_eq!(wilcoxon_one_sided(&[2.0]).unwrap(), 0.5);
        assert_eq!(wilcoxon_one_sided(&[3.0, 2.0, -1.0]).unwrap(), 0.25);
        assert_eq!(wilcoxon_one_sided(&[0.0; 9]), Err(MetricsError::AllZeros));
        assert_eq!(wilcoxon_one_sided(&[1.0; 26]), Err(MetricsError::TooManyForExact(26)));
    }
}
