//! Protocol variants, labels, realized trade returns, and the two
//! intervention operators (future-suffix perturbation and post-open masking).

use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{NormScope, DEFAULT_FUTURE_DAYS};
use crate::graph::GraphMode;
use crate::panel::OhlcvPanel;
use crate::rng::CounterRng;
use crate::synth::{shape_bar, BarShape};

#[derive(Debug, Error, PartialEq)]
pub enum ProtocolError {
    #[error("unknown protocol variant {0:?}")]
    UnknownVariant(String),
    #[error("cutoff {0} is not in the panel calendar")]
    CutoffOutOfRange(NaiveDate),
    #[error("protocol {variant} differs from CLEAN in {knobs:?}; expected {expected}")]
    OneSwitchViolation {
        variant: Variant,
        knobs: Vec<&'static str>,
        expected: &'static str,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Variant {
    Clean,
    TempCenter,
    NormGlobal,
    StructGraph,
    ExecClose,
    ExecOpen,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Clean,
        Variant::TempCenter,
        Variant::NormGlobal,
        Variant::StructGraph,
        Variant::ExecClose,
        Variant::ExecOpen,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Clean => "CLEAN",
            Variant::TempCenter => "TEMP_CENTER",
            Variant::NormGlobal => "NORM_GLOBAL",
            Variant::StructGraph => "STRUCT_GRAPH",
            Variant::ExecClose => "EXEC_CLOSE",
            Variant::ExecOpen => "EXEC_OPEN",
        }
    }

    /// The knob this variant is allowed to change; `None` for CLEAN.
    fn knob(self) -> Option<&'static str> {
        match self {
            Variant::Clean => None,
            Variant::TempCenter => Some("temporal_shift"),
            Variant::NormGlobal => Some("norm_scope"),
            Variant::StructGraph => Some("graph_mode"),
            Variant::ExecClose | Variant::ExecOpen => Some("execution"),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = ProtocolError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| ProtocolError::UnknownVariant(s.to_string()))
    }
}

/// Fill convention. Determines both the label and the one-day trade return.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Execution {
    /// Signal after the close of t, fill at the open of t+1.
    NextOpen,
    /// Fill at the close of t.
    SameClose,
    /// Fill at the open of t, with the full bar of t visible to features.
    SameOpen,
}

impl Execution {
    /// Offset (in trading days from t) of the last price a horizon-h label reads.
    pub fn label_end_offset(self, h: usize) -> usize {
        match self {
            Execution::NextOpen => h + 1,
            Execution::SameClose | Execution::SameOpen => h,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ProtocolSpec {
    pub variant: Variant,
    /// Look-ahead used when the temporal shift is active.
    pub future_days: usize,
    pub temporal_shift: bool,
    pub graph_mode: GraphMode,
    pub norm_scope: NormScope,
    pub execution: Execution,
}

impl ProtocolSpec {
    pub fn clean() -> Self {
        Self {
            variant: Variant::Clean,
            future_days: DEFAULT_FUTURE_DAYS,
            temporal_shift: false,
            graph_mode: GraphMode::Trailing,
            norm_scope: NormScope::Train,
            execution: Execution::NextOpen,
        }
    }

    pub fn for_variant(variant: Variant) -> Self {
        let base = Self {
            variant,
            ..Self::clean()
        };
        match variant {
            Variant::Clean => base,
            Variant::TempCenter => Self {
                temporal_shift: true,
                ..base
            },
            Variant::NormGlobal => Self {
                norm_scope: NormScope::Full,
                ..base
            },
            Variant::StructGraph => Self {
                graph_mode: GraphMode::Symmetric,
                ..base
            },
            Variant::ExecClose => Self {
                execution: Execution::SameClose,
                ..base
            },
            Variant::ExecOpen => Self {
                execution: Execution::SameOpen,
                ..base
            },
        }
    }

    /// Names of the knobs on which this spec departs from the clean reference.
    pub fn knob_diff(&self) -> Vec<&'static str> {
        let clean = Self::clean();
        let mut out = Vec::new();
        if self.temporal_shift != clean.temporal_shift {
            out.push("temporal_shift");
        }
        if self.graph_mode != clean.graph_mode {
            out.push("graph_mode");
        }
        if self.norm_scope != clean.norm_scope {
            out.push("norm_scope");
        }
        if self.execution != clean.execution {
            out.push("execution");
        }
        out
    }

    /// Rejects any spec that is not exactly its variant's single switch.
    pub fn audit(&self) -> Result<(), ProtocolError> {
        let knobs = self.knob_diff();
        let expected = self.variant.knob();
        let ok = match expected {
            None => knobs.is_empty(),
            Some(k) => knobs == [k] && *self == Self::for_variant(self.variant).with_future_days(self.future_days),
        };
        if ok {
            Ok(())
        } else {
            Err(ProtocolError::OneSwitchViolation {
                variant: self.variant,
                knobs,
                expected: expected.unwrap_or("no change"),
            })
        }
    }

    pub fn with_future_days(mut self, future_days: usize) -> Self {
        self.future_days = future_days;
        self
    }

    /// Look-ahead applied to rolling statistics (0 unless the temporal shift is on).
    pub fn feature_lead(&self) -> usize {
        if self.temporal_shift {
            self.future_days
        } else {
            0
        }
    }
}

/// Date × asset grid of optional values aligned to a panel; date-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DateAssetGrid {
    pub calendar: Vec<NaiveDate>,
    pub assets: Vec<String>,
    pub values: Vec<Option<f64>>,
}

impl DateAssetGrid {
    pub fn empty(calendar: Vec<NaiveDate>, assets: Vec<String>) -> Self {
        let len = calendar.len() * assets.len();
        Self {
            calendar,
            assets,
            values: vec![None; len],
        }
    }

    #[inline]
    pub fn get(&self, t: usize, i: usize) -> Option<f64> {
        self.values[t * self.assets.len() + i]
    }

    #[inline]
    pub fn set(&mut self, t: usize, i: usize, v: Option<f64>) {
        let n = self.assets.len();
        self.values[t * n + i] = v.filter(|x| x.is_finite());
    }

    pub fn n_dates(&self) -> usize {
        self.calendar.len()
    }

    pub fn n_assets(&self) -> usize {
        self.assets.len()
    }
}

/// Horizon-h log-return targets.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelPanel {
    pub horizon: usize,
    pub execution: Execution,
    pub y: DateAssetGrid,
}

/// One-day simple returns realized by a position opened on decision date t.
#[derive(Debug, Clone, PartialEq)]
pub struct TradeReturnPanel {
    pub execution: Execution,
    pub r: DateAssetGrid,
}

fn grid_from(panel: &OhlcvPanel, f: impl Fn(usize, usize) -> Option<f64>) -> DateAssetGrid {
    let mut g = DateAssetGrid::empty(panel.calendar().to_vec(), panel.assets().to_vec());
    for t in 0..panel.n_dates() {
        for i in 0..panel.n_assets() {
            g.set(t, i, f(t, i));
        }
    }
    g
}

fn open_at(panel: &OhlcvPanel, t: usize, i: usize) -> Option<f64> {
    (t < panel.n_dates()).then(|| panel.bar(t, i).map(|b| b.open)).flatten()
}

fn close_at(panel: &OhlcvPanel, t: usize, i: usize) -> Option<f64> {
    (t < panel.n_dates()).then(|| panel.bar(t, i).map(|b| b.close)).flatten()
}

/// next_open: `ln(O[t+h+1] / O[t+1])`; same_close: `ln(C[t+h] / C[t])`;
/// same_open: `ln(O[t+h] / O[t])`.
pub fn make_labels(panel: &OhlcvPanel, h: usize, execution: Execution) -> LabelPanel {
    let (o, c) = (|t, i| open_at(panel, t, i), |t, i| close_at(panel, t, i));
    let y = grid_from(panel, |t, i| match execution {
        Execution::NextOpen => Some((o(t + h + 1, i)? / o(t + 1, i)?).ln()),
        Execution::SameClose => Some((c(t + h, i)? / c(t, i)?).ln()),
        Execution::SameOpen => Some((o(t + h, i)? / o(t, i)?).ln()),
    });
    LabelPanel {
        horizon: h,
        execution,
        y,
    }
}

/// next_open: `O[t+2]/O[t+1] - 1`; same_close: `C[t+1]/C[t] - 1`;
/// same_open: `O[t+1]/O[t] - 1`.
pub fn make_trade_returns(panel: &OhlcvPanel, execution: Execution) -> TradeReturnPanel {
    let (o, c) = (|t, i| open_at(panel, t, i), |t, i| close_at(panel, t, i));
    let r = grid_from(panel, |t, i| match execution {
        Execution::NextOpen => Some(o(t + 2, i)? / o(t + 1, i)? - 1.0),
        Execution::SameClose => Some(c(t + 1, i)? / c(t, i)? - 1.0),
        Execution::SameOpen => Some(o(t + 1, i)? / o(t, i)? - 1.0),
    });
    TradeReturnPanel { execution, r }
}

/// Rebuilds every bar after `cutoff` by permuting, per asset, the post-cutoff
/// daily close log returns together with each day's bar shape and volume.
/// Bars at or before the cutoff are untouched.
pub fn perturb_future_suffix(
    panel: &OhlcvPanel,
    cutoff: NaiveDate,
    seed: u64,
) -> Result<OhlcvPanel, ProtocolError> {
    let c = panel
        .date_index(cutoff)
        .ok_or(ProtocolError::CutoffOutOfRange(cutoff))?;
    let (calendar, assets, mut bars) = panel.clone().into_parts();
    let n = assets.len();
    for i in 0..n {
        // Days after the cutoff whose predecessor bar (any earlier day) exists.
        let mut prev_close: Option<f64> = (0..=c).rev().find_map(|t| panel.bar(t, i).map(|b| b.close));
        let mut days = Vec::new();
        let mut moves = Vec::new();
        for t in c + 1..calendar.len() {
            let Some(bar) = panel.bar(t, i) else { continue };
            if let Some(pc) = prev_close {
                days.push(t);
                moves.push(((bar.close / pc).ln(), BarShape::of(pc, bar), bar.volume));
            }
            prev_close = Some(bar.close);
        }
        let mut rng = CounterRng::new(seed, &[i as u64, 0x5eed]);
        moves.shuffle(&mut rng);
        let mut close = days
            .first()
            .and_then(|&t0| (0..t0).rev().find_map(|t| panel.bar(t, i).map(|b| b.close)));
        for (&t, (ret, shape, volume)) in days.iter().zip(moves) {
            let pc = close.expect("days only holds entries with a predecessor");
            let new_close = pc * ret.exp();
            bars[t * n + i] = Some(shape_bar(pc, new_close, shape, volume));
            close = Some(new_close);
        }
    }
    Ok(OhlcvPanel::new(calendar, assets, bars).expect("perturbation preserves panel invariants"))
}

/// Replaces high, low and close by the open, and volume by the prior day's
/// volume (unchanged on an asset's first bar).
pub fn mask_post_open(panel: &OhlcvPanel) -> OhlcvPanel {
    let (calendar, assets, mut bars) = panel.clone().into_parts();
    let n = assets.len();
    for i in 0..n {
        let mut prev_volume: Option<f64> = None;
        for t in 0..calendar.len() {
            if let Some(b) = bars[t * n + i].as_mut() {
                let own = b.volume;
                b.high = b.open;
                b.low = b.open;
                b.close = b.open;
                b.volume = prev_volume.unwrap_or(own);
                prev_volume = Some(own);
            }
        }
    }
    OhlcvPanel::new(calendar, assets, bars).expect("masking preserves panel invariants")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::OhlcvBar;

    fn panel_from(opens: &[f64], closes: &[f64]) -> OhlcvPanel {
        let cal = crate::synth::weekday_calendar("2024-01-01".parse().unwrap(), opens.len());
        let bars = opens
            .iter()
            .zip(closes)
            .map(|(&o, &c)| {
                Some(OhlcvBar {
                    open: o,
                    high: o.max(c),
                    low: o.min(c),
                    close: c,
                    volume: 1.0,
                })
            })
            .collect();
        OhlcvPanel::new(cal, vec!["A".into()], bars).unwrap()
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
        }
        assert!("clean".parse::<Variant>().is_err());
    }

    #[test]
    fn every_variant_is_one_switch() {
        for v in Variant::ALL {
            let spec = ProtocolSpec::for_variant(v);
            spec.audit().unwrap();
            let expected = if v == Variant::Clean { 0 } else { 1 };
            assert_eq!(spec.knob_diff().len(), expected, "{v}");
        }
    }

    #[test]
    fn two_knob_spec_is_rejected() {
        let spec = ProtocolSpec {
            norm_scope: NormScope::Full,
            ..ProtocolSpec::for_variant(Variant::TempCenter)
        };
        assert!(matches!(
            spec.audit(),
            Err(ProtocolError::OneSwitchViolation { .. })
        ));
        let mislabeled = ProtocolSpec {
            variant: Variant::ExecClose,
            ..ProtocolSpec::for_variant(Variant::ExecOpen)
        };
        assert!(mislabeled.audit().is_err());
        let dirty_clean = ProtocolSpec {
            graph_mode: GraphMode::Symmetric,
            ..ProtocolSpec::clean()
        };
        assert!(dirty_clean.audit().is_err());
    }

    #[test]
    fn label_formulas() {
        let p = panel_from(&[100., 102., 104., 106.], &[100., 110., 100., 100.]);
        let next = make_labels(&p, 1, Execution::NextOpen);
        assert_eq!(next.y.get(0, 0), Some((104.0f64 / 102.0).ln()));
        assert_eq!(next.y.get(2, 0), None);
        let open = make_labels(&p, 1, Execution::SameOpen);
        assert_eq!(open.y.get(0, 0), Some((102.0f64 / 100.0).ln()));
        let close = make_labels(&p, 1, Execution::SameClose);
        assert_eq!(close.y.get(0, 0), Some((110.0f64 / 100.0).ln()));
        assert_eq!(close.y.get(3, 0), None);
    }

    #[test]
    fn trade_return_formulas() {
        let p = panel_from(&[100., 102., 104.], &[100., 99., 100.]);
        let next = make_trade_returns(&p, Execution::NextOpen);
        assert!((next.r.get(0, 0).unwrap() - (104.0 / 102.0 - 1.0)).abs() < 1e-15);
        assert!((next.r.get(0, 0).unwrap() - 0.0196078).abs() < 1e-6);
        assert_eq!(next.r.get(1, 0), None);
        let open = make_trade_returns(&p, Execution::SameOpen);
        assert!((open.r.get(0, 0).unwrap() - 0.02).abs() < 1e-15);
        let close = make_trade_returns(&p, Execution::SameClose);
        assert!((close.r.get(0, 0).unwrap() + 0.01).abs() < 1e-15);
    }

    #[test]
    fn masking_rule() {
        let cal = crate::synth::weekday_calendar("2024-01-01".parse().unwrap(), 2);
        let bars = vec![
            Some(OhlcvBar { open: 99.0, high: 101.0, low: 98.0, close: 100.0, volume: 9e5 }),
            Some(OhlcvBar { open: 100.0, high: 105.0, low: 98.0, close: 103.0, volume: 1e6 }),
        ];
        let p = OhlcvPanel::new(cal, vec!["A".into()], bars).unwrap();
        let m = mask_post_open(&p);
        assert_eq!(
            *m.bar(1, 0).unwrap(),
            OhlcvBar { open: 100.0, high: 100.0, low: 100.0, close: 100.0, volume: 9e5 }
        );
        assert_eq!(m.bar(0, 0).unwrap().volume, 9e5);
        assert_eq!(m.bar(0, 0).unwrap().open, 99.0);
    }

    #[test]
    fn cutoff_must_be_in_calendar() {
        let p = panel_from(&[100., 102., 104.], &[100., 99., 100.]);
        let bad: NaiveDate = "2030-01-01".parse().unwrap();
        assert_eq!(
            perturb_future_suffix(&p, bad, 1).unwrap_err(),
            ProtocolError::CutoffOutOfRange(bad)
        );
    }
}
