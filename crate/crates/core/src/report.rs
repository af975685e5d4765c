//! Report files: `metrics.csv`, `leakage_gain.csv`, `yearly_lg.csv` and
//! `summary.json`. Rows are sorted and floats use six significant digits,
//! so identical results always give identical bytes.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::metrics::{cost_key, MetricReport};
use crate::protocol::ProtocolSpec;
use crate::runner::{CellKey, GridResults, LeakageRow, Provenance};

/// Six significant digits in the shortest of fixed or scientific notation.
/// Missing and non-finite values print as `NA`; negative zero prints as `0`.
pub fn fmt_g6(x: Option<f64>) -> String {
    let x = match x {
        Some(v) if v.is_finite() => v,
        _ => return "NA".to_string(),
    };
    if x == 0.0 {
        return "0".to_string();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}"))
    } else {
        format!("{}e{}{:02}", trim_zeros(mantissa), if exp < 0 { '-' } else { '+' }, exp.abs())
    }
}

fn trim_zeros(s: &str) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s.to_string()
    }
}

fn fmt_cost(c: f64) -> String {
    fmt_g6(Some(c))
}

fn key_cols(k: &CellKey) -> String {
    format!("{},{},{},{}", k.market, k.model, k.horizon, k.variant)
}

pub const METRICS_HEADER: &str = "market,model,h,variant,cost_bps,metric,value";
pub const LEAKAGE_HEADER: &str = "market,model,h,variant,cost_bps,config_hash,lg_sr,lg_rank_ic,lg_auc";

fn metric_rows(k: &CellKey, r: &MetricReport, costs: &[f64], out: &mut String) {
    let kc = key_cols(k);
    let mut line = |cost: &str, metric: &str, value: String| {
        let _ = writeln!(out, "{kc},{cost},{metric},{value}");
    };
    line("NA", "auc", fmt_g6(r.auc));
    line("NA", "mean_turnover", fmt_g6(r.mean_turnover));
    line("NA", "n_dates_auc", r.n_dates_auc.to_string());
    line("NA", "n_dates_rank_ic", r.n_dates_rankic.to_string());
    line("NA", "rank_ic", fmt_g6(r.rank_ic));
    for &c in costs {
        let ck = cost_key(c);
        let cs = fmt_cost(c);
        line(&cs, "max_drawdown", fmt_g6(r.max_drawdown.get(&ck).copied().flatten()));
        line(&cs, "mean_net", fmt_g6(r.mean_net.get(&ck).copied().flatten()));
        line(&cs, "sharpe", fmt_g6(r.sharpe.get(&ck).copied().flatten()));
        for (year, m) in &r.yearly_sharpe {
            line(&cs, &format!("sharpe_{year}"), fmt_g6(m.get(&ck).copied().flatten()));
        }
    }
}

pub fn metrics_csv(results: &GridResults) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for c in &results.cells {
        metric_rows(&c.key, &c.report, &results.provenance.costs_bps, &mut out);
    }
    out
}

fn sorted_rows(results: &GridResults) -> Vec<&LeakageRow> {
    let mut rows: Vec<&LeakageRow> = results.leakage.iter().collect();
    rows.sort_by(|a, b| a.key.cmp(&b.key).then(a.cost_bps.total_cmp(&b.cost_bps)));
    rows
}

pub fn leakage_csv(results: &GridResults) -> String {
    let mut out = format!("{LEAKAGE_HEADER}\n");
    for r in sorted_rows(results) {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            key_cols(&r.key),
            fmt_cost(r.cost_bps),
            r.config_hash,
            fmt_g6(r.lg_sr),
            fmt_g6(r.lg_rank_ic),
            fmt_g6(r.lg_auc)
        );
    }
    out
}

pub fn yearly_csv(results: &GridResults) -> String {
    let years: BTreeSet<i32> = results
        .leakage
        .iter()
        .flat_map(|r| r.yearly.keys().copied())
        .collect();
    let mut out = String::from("market,model,h,variant,cost_bps,config_hash");
    for y in &years {
        let _ = write!(out, ",{y}");
    }
    out.push_str(",mean,ci_lo,ci_hi,positive_years,n_years,wilcoxon_p\n");
    for r in sorted_rows(results) {
        let _ = write!(out, "{},{},{}", key_cols(&r.key), fmt_cost(r.cost_bps), r.config_hash);
        for y in &years {
            let _ = write!(out, ",{}", fmt_g6(r.yearly.get(y).copied().flatten()));
        }
        match &r.stats {
            Some(s) => {
                let _ = writeln!(
                    out,
                    ",{},{},{},{},{},{}",
                    fmt_g6(Some(s.mean)),
                    fmt_g6(s.ci.map(|c| c.0)),
                    fmt_g6(s.ci.map(|c| c.1)),
                    s.positive_years,
                    s.n_years,
                    fmt_g6(s.wilcoxon_p)
                );
            }
            None => out.push_str(",NA,NA,NA,0,0,NA\n"),
        }
    }
    out
}

#[derive(Serialize)]
struct CellSummary<'a> {
    key: &'a CellKey,
    config_hash: &'a str,
    protocol: &'a ProtocolSpec,
    backtest_dates: usize,
    skipped_dates: usize,
    dropped_features: &'a [String],
    report: &'a MetricReport,
}

#[derive(Serialize)]
struct Summary<'a> {
    provenance: &'a Provenance,
    cells: Vec<CellSummary<'a>>,
    leakage_gain: Vec<&'a LeakageRow>,
}

pub fn summary_json(results: &GridResults) -> String {
    let summary = Summary {
        provenance: &results.provenance,
        cells: results
            .cells
            .iter()
            .map(|c| CellSummary {
                key: &c.key,
                config_hash: &c.config_hash,
                protocol: &c.protocol,
                backtest_dates: c.series.dates.len(),
                skipped_dates: c.series.skipped.len(),
                dropped_features: &c.dropped_features,
                report: &c.report,
            })
            .collect(),
        leakage_gain: sorted_rows(results),
    };
    let mut value = serde_json::to_value(&summary).expect("summary serializes");
    round_floats(&mut value);
    let mut s = serde_json::to_string_pretty(&value).expect("summary serializes");
    s.push('\n');
    s
}

/// Rounds every non-integer number to six significant digits.
fn round_floats(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().expect("f64 number");
            let rounded: f64 = fmt_g6(Some(x)).parse().unwrap_or(x);
            if let Some(r) = serde_json::Number::from_f64(rounded) {
                *n = r;
            }
        }
        serde_json::Value::Array(items) => items.iter_mut().for_each(round_floats),
        serde_json::Value::Object(map) => map.values_mut().for_each(round_floats),
        _ => {}
    }
}

/// Writes the four report files into `out_dir` and returns their paths.
pub fn emit_reports(results: &GridResults, out_dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    let files: BTreeMap<&str, String> = [
        ("metrics.csv", metrics_csv(results)),
        ("leakage_gain.csv", leakage_csv(results)),
        ("yearly_lg.csv", yearly_csv(results)),
        ("summary.json", summary_json(results)),
    ]
    .into_iter()
    .collect();
    let mut paths = Vec::new();
    for (name, body) in files {
        let p = out_dir.join(name);
        std::fs::write(&p, body)?;
        paths.push(p);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn g6_formatting() {
        assert_eq!(fmt_g6(None), "NA");
        assert_eq!(fmt_g6(Some(f64::NAN)), "NA");
        assert_eq!(fmt_g6(Some(-0.0)), "0");
        assert_eq!(fmt_g6(Some(1.0)), "1");
        assert_eq!(fmt_g6(Some(0.5)), "0.5");
        assert_eq!(fmt_g6(Some(1.234567)), "1.23457");
        assert_eq!(fmt_g6(Some(-123456.7)), "-123457");
        assert_eq!(fmt_g6(Some(1234567.0)), "1.23457e+06");
        assert_eq!(fmt_g6(Some(0.0001234567)), "0.000123457");
        assert_eq!(fmt_g6(Some(0.00001234567)), "1.23457e-05");
        assert_eq!(fmt_g6(Some(9.999996)), "10");
        assert_eq!(fmt_g6(Some(10.0)), "10");
    }
}
