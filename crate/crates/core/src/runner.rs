//! Paired grid orchestration.
//!
//! A grid cell is `(market, model, horizon, variant)`. Every variant of a
//! `(market, model, horizon)` group shares the panel, splits, model
//! hyperparameters and seeds, portfolio rule and cost grid; the only thing
//! that differs is the single protocol switch, which is audited before any
//! cell runs.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{Datelike, NaiveDate};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::evaluate::{self, make_splits, run_backtest, BacktestSeries, EvalError, WalkForwardSplit};
use crate::features::{
    apply_norm, build_features, fit_norm, FeatureError, FeatureMatrix, FeatureSchema, NormScope,
    DEFAULT_FUTURE_DAYS,
};
use crate::graph::{self, build_graphs, neighbor_features, GraphMode, NEIGHBOR_SOURCES};
use crate::metrics::{
    self, cost_key, cross_sections, leakage_gain, LeakageGain, MetricReport, MetricsError, YearlyStats,
};
use crate::models::{score_model, ModelError, ModelFamily, ModelParams, ModelSpec, ScorePanel};
use crate::panel::{load_panel, OhlcvPanel, PanelError};
use crate::protocol::{
    make_labels, make_trade_returns, mask_post_open, perturb_future_suffix, Execution, LabelPanel,
    ProtocolError, ProtocolSpec, TradeReturnPanel, Variant,
};
use crate::rng::{derive_key, hash_str, RNG_NAME};
use crate::synth::{generate_panel, SynthConfig, SynthError};

/// Convention recorded in every report.
pub const LABEL_CONVENTION: &str = "each run is evaluated against its own variant's labels";
pub const PORTFOLIO_RULE: &str = "top ceil(N/10) by score, ties by ascending asset id, equal weight, long only, daily rebalance";

#[derive(Debug, Error)]
pub enum RunError {
    #[error("config: {0}")]
    Config(String),
    #[error("market {market}: {source}")]
    Panel {
        market: String,
        #[source]
        source: PanelError,
    },
    #[error("market {market}: {source}")]
    Synth {
        market: String,
        #[source]
        source: SynthError,
    },
    #[error("{cell}: {message}")]
    Cell { cell: String, message: String },
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

fn cell_err(cell: &str, e: impl std::fmt::Display) -> RunError {
    RunError::Cell {
        cell: cell.to_string(),
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum MarketSource {
    Path(PathBuf),
    Synthetic(SynthConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub markets: BTreeMap<String, MarketSource>,
    pub models: Vec<ModelFamily>,
    pub horizons: Vec<usize>,
    pub variants: Vec<Variant>,
    pub costs_bps: Vec<f64>,
    /// Defaults to 2016–2024 intersected with each panel's coverage.
    pub test_years: Option<Vec<i32>>,
    /// Trading days between the last training day and the test year; defaults to h + 1.
    pub embargo: Option<usize>,
    pub seed: u64,
    pub jobs: usize,
    pub out_dir: PathBuf,
    pub future_days: usize,
    pub peers: usize,
    pub bootstrap_resamples: usize,
    pub model_params: ModelParams,
    /// Optional feature schema file; the embedded default is used otherwise.
    pub schema: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            markets: BTreeMap::new(),
            models: ModelFamily::ALL.to_vec(),
            horizons: vec![5, 20],
            variants: Variant::ALL.to_vec(),
            costs_bps: evaluate::DEFAULT_COSTS_BPS.to_vec(),
            test_years: None,
            embargo: None,
            seed: 0,
            jobs: 1,
            out_dir: PathBuf::from("out"),
            future_days: DEFAULT_FUTURE_DAYS,
            peers: graph::DEFAULT_PEERS,
            bootstrap_resamples: metrics::DEFAULT_BOOTSTRAP_RESAMPLES,
            model_params: ModelParams::default(),
            schema: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, RunError> {
        toml::from_str(text).map_err(|e| RunError::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RunError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_toml_str(&text)?;
        // Relative data and schema paths resolve against the config file.
        if let Some(dir) = path.parent() {
            for src in cfg.markets.values_mut() {
                if let MarketSource::Path(p) = src {
                    if p.is_relative() {
                        *p = dir.join(&*p);
                    }
                }
            }
            if let Some(s) = cfg.schema.as_mut() {
                if s.is_relative() {
                    *s = dir.join(&*s);
                }
            }
        }
        Ok(cfg)
    }

    pub fn embargo_for(&self, h: usize) -> usize {
        self.embargo.unwrap_or(h + 1)
    }

    /// Sorted, de-duplicated variants with CLEAN always present.
    pub fn effective_variants(&self) -> Vec<Variant> {
        let mut set: BTreeSet<Variant> = self.variants.iter().copied().collect();
        set.insert(Variant::Clean);
        set.into_iter().collect()
    }

    pub fn effective_costs(&self) -> Vec<f64> {
        let mut c = self.costs_bps.clone();
        c.sort_by(f64::total_cmp);
        c.dedup();
        c
    }

    fn effective_models(&self) -> Vec<ModelFamily> {
        let set: BTreeSet<ModelFamily> = self.models.iter().copied().collect();
        set.into_iter().collect()
    }

    fn effective_horizons(&self) -> Vec<usize> {
        let set: BTreeSet<usize> = self.horizons.iter().copied().collect();
        set.into_iter().collect()
    }

    pub fn validate(&self) -> Result<(), RunError> {
        let bad = |m: String| Err(RunError::Config(m));
        if self.markets.is_empty() {
            return bad("at least one market is required".into());
        }
        if self.models.is_empty() || self.horizons.is_empty() {
            return bad("models and horizons must be non-empty".into());
        }
        if self.horizons.contains(&0) {
            return bad("horizons must be >= 1".into());
        }
        if self.costs_bps.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return bad("costs must be finite and >= 0".into());
        }
        if self.costs_bps.is_empty() {
            return bad("cost grid must be non-empty".into());
        }
        if self.peers == 0 {
            return bad("peers must be >= 1".into());
        }
        if self.jobs == 0 {
            return bad("jobs must be >= 1".into());
        }
        self.model_params.gbt.validate().map_err(|e| RunError::Config(e.to_string()))?;
        if !(self.model_params.ridge_alpha > 0.0) {
            return bad("ridge_alpha must be > 0".into());
        }
        Ok(())
    }

    /// Effective protocol spec of a variant under this config, audited.
    pub fn protocol(&self, variant: Variant) -> Result<ProtocolSpec, RunError> {
        let spec = ProtocolSpec::for_variant(variant).with_future_days(self.future_days);
        spec.audit()?;
        Ok(spec)
    }

    fn schema(&self) -> Result<FeatureSchema, RunError> {
        match &self.schema {
            Some(p) => Ok(FeatureSchema::load(p)?),
            None => Ok(FeatureSchema::default()),
        }
    }
}

/// One market's inputs. Features read `feature_panel`; labels and trade
/// returns read `outcome_panel`. Interventions replace only the former.
#[derive(Debug, Clone)]
pub struct MarketData {
    pub name: String,
    pub feature_panel: Arc<OhlcvPanel>,
    pub outcome_panel: Arc<OhlcvPanel>,
}

impl MarketData {
    pub fn new(name: impl Into<String>, panel: OhlcvPanel) -> Self {
        let panel = Arc::new(panel);
        Self {
            name: name.into(),
            feature_panel: panel.clone(),
            outcome_panel: panel,
        }
    }

    pub fn with_feature_panel(&self, panel: OhlcvPanel) -> Self {
        Self {
            name: self.name.clone(),
            feature_panel: Arc::new(panel),
            outcome_panel: self.outcome_panel.clone(),
        }
    }
}

pub fn load_markets(cfg: &RunConfig) -> Result<Vec<MarketData>, RunError> {
    cfg.markets
        .iter()
        .map(|(name, src)| {
            let panel = match src {
                MarketSource::Path(p) => load_panel(p).map_err(|source| RunError::Panel {
                    market: name.clone(),
                    source,
                })?,
                MarketSource::Synthetic(s) => generate_panel(s).map_err(|source| RunError::Synth {
                    market: name.clone(),
                    source,
                })?,
            };
            Ok(MarketData::new(name.clone(), panel))
        })
        .collect()
}

/// Design matrix of one `(temporal shift, graph mode)` setting: own features
/// followed by `nbr_<f>` for every own feature.
#[derive(Debug, Clone)]
struct Design {
    matrix: FeatureMatrix,
}

/// Everything a market's cells share, computed once.
pub struct PreparedMarket {
    pub name: String,
    fingerprint: String,
    own_names: Vec<String>,
    designs: HashMap<(bool, GraphMode), Design>,
    labels: HashMap<(usize, Execution), LabelPanel>,
    trades: HashMap<Execution, TradeReturnPanel>,
    splits: HashMap<usize, Vec<WalkForwardSplit>>,
    test_years: Vec<i32>,
    schema_version: String,
}

fn default_years(calendar: &[NaiveDate]) -> Vec<i32> {
    let present: BTreeSet<i32> = calendar.iter().map(|d| d.year()).collect();
    (2016..=2024).filter(|y| present.contains(y)).collect()
}

pub fn prepare_market(cfg: &RunConfig, data: &MarketData) -> Result<PreparedMarket, RunError> {
    let schema = cfg.schema()?;
    let fp = data.feature_panel.as_ref();
    let op = data.outcome_panel.as_ref();
    if fp.calendar() != op.calendar() || fp.assets() != op.assets() {
        return Err(RunError::Config(format!(
            "market {}: feature and outcome panels are not aligned",
            data.name
        )));
    }
    let variants = cfg.effective_variants();
    let specs: Vec<ProtocolSpec> = variants.iter().map(|&v| cfg.protocol(v)).collect::<Result<_, _>>()?;

    let test_years = cfg
        .test_years
        .clone()
        .unwrap_or_else(|| default_years(fp.calendar()));
    if test_years.is_empty() {
        return Err(RunError::Config(format!("market {}: no test years in panel coverage", data.name)));
    }

    let mut splits = HashMap::new();
    for h in cfg.effective_horizons() {
        let s = make_splits(fp.calendar(), &test_years, cfg.embargo_for(h))
            .map_err(|e| cell_err(&data.name, e))?;
        splits.insert(h, s);
    }

    let needs_nbr = cfg.models.iter().any(|m| m.is_trainable());
    let mut own_by_shift: HashMap<bool, FeatureMatrix> = HashMap::new();
    let mut graphs_by_mode = HashMap::new();
    let mut designs = HashMap::new();
    for spec in &specs {
        let key = (spec.temporal_shift, spec.graph_mode);
        if designs.contains_key(&key) {
            continue;
        }
        if !own_by_shift.contains_key(&spec.temporal_shift) {
            let m = build_features(fp, &schema, spec.temporal_shift, cfg.future_days)?;
            own_by_shift.insert(spec.temporal_shift, m);
        }
        let own = &own_by_shift[&spec.temporal_shift];
        let matrix = if needs_nbr {
            if !graphs_by_mode.contains_key(&spec.graph_mode) {
                let g = build_graphs(fp, spec.graph_mode, cfg.peers).map_err(|e| cell_err(&data.name, e))?;
                graphs_by_mode.insert(spec.graph_mode, g);
            }
            let names: Vec<&str> = own.names().iter().map(String::as_str).collect();
            let nbr = neighbor_features(own, &graphs_by_mode[&spec.graph_mode], &names)
                .map_err(|e| cell_err(&data.name, e))?;
            own.hstack(&nbr)
        } else {
            own.clone()
        };
        designs.insert(key, Design { matrix });
    }

    let mut labels = HashMap::new();
    let mut trades = HashMap::new();
    for spec in &specs {
        trades
            .entry(spec.execution)
            .or_insert_with(|| make_trade_returns(op, spec.execution));
        for h in cfg.effective_horizons() {
            labels
                .entry((h, spec.execution))
                .or_insert_with(|| make_labels(op, h, spec.execution));
        }
    }

    let fingerprint = if Arc::ptr_eq(&data.feature_panel, &data.outcome_panel) {
        fp.fingerprint()
    } else {
        format!("{}+{}", fp.fingerprint(), op.fingerprint())
    };
    Ok(PreparedMarket {
        name: data.name.clone(),
        fingerprint,
        own_names: schema.names(),
        designs,
        labels,
        trades,
        splits,
        test_years,
        schema_version: schema.version.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellKey {
    pub market: String,
    pub model: ModelFamily,
    pub horizon: usize,
    pub variant: Variant,
}

impl std::fmt::Display for CellKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}/h={}/{}", self.market, self.model, self.horizon, self.variant)
    }
}

/// The configuration every variant of a `(market, model, h)` group shares.
/// The variant is deliberately absent.
#[derive(Serialize)]
struct SharedCellConfig<'a> {
    market: &'a str,
    panel: &'a str,
    schema_version: &'a str,
    own_features: &'a [String],
    model: ModelFamily,
    params: &'a ModelParams,
    master_seed: u64,
    horizon: usize,
    embargo: usize,
    test_years: &'a [i32],
    future_days: usize,
    peers: usize,
    portfolio: &'static str,
    turnover: &'static str,
}

fn pair_hash(cfg: &RunConfig, market: &PreparedMarket, model: ModelFamily, h: usize) -> String {
    let shared = SharedCellConfig {
        market: &market.name,
        panel: &market.fingerprint,
        schema_version: &market.schema_version,
        own_features: &market.own_names,
        model,
        params: &cfg.model_params,
        master_seed: cfg.seed,
        horizon: h,
        embargo: cfg.embargo_for(h),
        test_years: &market.test_years,
        future_days: cfg.future_days,
        peers: cfg.peers,
        portfolio: PORTFOLIO_RULE,
        turnover: evaluate::TURNOVER_CONVENTION,
    };
    let json = serde_json::to_string(&shared).expect("shared config serializes");
    hex::encode(&Sha256::digest(json.as_bytes())[..8])
}

/// Per-fit seed: a function of the shared cell identity and test year only,
/// so every variant of a pair draws identical subsamples.
fn fit_seed(master: u64, market: &str, model: ModelFamily, h: usize, year: i32) -> u64 {
    derive_key(master, &[hash_str(market), model as u64, h as u64, year as i64 as u64])
}

fn model_columns(model: ModelFamily, own: &[String]) -> Vec<String> {
    let mut cols = own.to_vec();
    match model {
        ModelFamily::Momentum => {}
        ModelFamily::Ridge | ModelFamily::Gbt => {
            cols.extend(NEIGHBOR_SOURCES.iter().map(|n| format!("nbr_{n}")));
        }
        ModelFamily::GraphRidge => cols.extend(own.iter().map(|n| format!("nbr_{n}"))),
    }
    cols
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub key: CellKey,
    pub config_hash: String,
    pub protocol: ProtocolSpec,
    pub scores: ScorePanel,
    pub series: BacktestSeries,
    pub report: MetricReport,
    /// Feature columns dropped as constant by any normalization fit.
    pub dropped_features: Vec<String>,
}

pub fn run_cell(cfg: &RunConfig, market: &PreparedMarket, key: &CellKey) -> Result<CellResult, RunError> {
    let cell = key.to_string();
    let protocol = cfg.protocol(key.variant)?;
    let design = market
        .designs
        .get(&(protocol.temporal_shift, protocol.graph_mode))
        .ok_or_else(|| cell_err(&cell, "design matrix was not prepared"))?;
    let columns = model_columns(key.model, &market.own_names);
    let matrix = design.matrix.select(&columns).map_err(|e| cell_err(&cell, e))?;
    let labels = &market.labels[&(key.horizon, protocol.execution)];
    let trades = &market.trades[&protocol.execution];
    let splits = &market.splits[&key.horizon];
    let n_assets = matrix.n_assets();
    let label_end = protocol.execution.label_end_offset(key.horizon);

    let mut scores = ScorePanel::empty(matrix.assets().to_vec());
    let mut dropped = BTreeSet::new();
    for split in splits {
        let train_rows: Vec<(usize, usize)> = split
            .train
            .clone()
            .filter(|&t| t + label_end < split.test.start)
            .flat_map(|t| (0..n_assets).map(move |i| (t, i)))
            .collect();
        let spec = ModelSpec {
            family: key.model,
            params: cfg.model_params,
            seed: fit_seed(cfg.seed, &market.name, key.model, key.horizon, split.test_year),
        };
        let test_dates = split.test_dates();
        let year_scores = match key.model {
            ModelFamily::Ridge | ModelFamily::GraphRidge => {
                let scope_rows: Vec<(usize, usize)> = match protocol.norm_scope {
                    NormScope::Train => split
                        .train
                        .clone()
                        .flat_map(|t| (0..n_assets).map(move |i| (t, i)))
                        .collect(),
                    NormScope::Full => (0..matrix.n_dates())
                        .flat_map(|t| (0..n_assets).map(move |i| (t, i)))
                        .collect(),
                };
                let stats = fit_norm(&matrix, &scope_rows, protocol.norm_scope)
                    .map_err(|e| cell_err(&cell, e))?;
                dropped.extend(stats.dropped.iter().cloned());
                let normalized = apply_norm(&matrix, &stats).map_err(|e| cell_err(&cell, e))?;
                score_model(&spec, &normalized, Some(labels), &train_rows, &test_dates)
            }
            _ => score_model(&spec, &matrix, Some(labels), &train_rows, &test_dates),
        }
        .map_err(|e: ModelError| cell_err(&format!("{cell}/{}", split.test_year), e))?
        .1;
        scores.extend(year_scores);
    }

    let costs = cfg.effective_costs();
    let series = run_backtest(&scores, trades, &costs).map_err(|e: EvalError| cell_err(&cell, e))?;
    let report = build_report(pair_hash(cfg, market, key.model, key.horizon), &scores, labels, &series);
    Ok(CellResult {
        key: key.clone(),
        config_hash: report.config_hash.clone(),
        protocol,
        scores,
        series,
        report,
        dropped_features: dropped.into_iter().collect(),
    })
}

fn build_report(config_hash: String, scores: &ScorePanel, labels: &LabelPanel, series: &BacktestSeries) -> MetricReport {
    let days = cross_sections(scores, labels);
    let ric = metrics::rank_ic(&days).ok();
    let auc = metrics::auc(&days).ok();
    let mut sharpe = BTreeMap::new();
    let mut mean_net = BTreeMap::new();
    let mut mdd = BTreeMap::new();
    for (k, &c) in series.costs_bps.iter().enumerate() {
        let net = &series.net[k];
        sharpe.insert(cost_key(c), metrics::sharpe(net).ok());
        mean_net.insert(
            cost_key(c),
            (!net.is_empty()).then(|| net.iter().sum::<f64>() / net.len() as f64),
        );
        mdd.insert(cost_key(c), evaluate::max_drawdown(net).ok());
    }
    let mut by_year: BTreeMap<i32, Vec<usize>> = BTreeMap::new();
    for (k, d) in series.dates.iter().enumerate() {
        by_year.entry(d.year()).or_default().push(k);
    }
    let yearly_sharpe = by_year
        .into_iter()
        .map(|(year, idx)| {
            let per_cost = series
                .costs_bps
                .iter()
                .enumerate()
                .map(|(k, &c)| {
                    let net: Vec<f64> = idx.iter().map(|&j| series.net[k][j]).collect();
                    (cost_key(c), metrics::sharpe(&net).ok())
                })
                .collect();
            (year, per_cost)
        })
        .collect();
    MetricReport {
        config_hash,
        rank_ic: ric.map(|p| p.value),
        auc: auc.map(|p| p.value),
        n_dates_rankic: ric.map_or(0, |p| p.n_dates),
        n_dates_auc: auc.map_or(0, |p| p.n_dates),
        sharpe,
        mean_net,
        max_drawdown: mdd,
        mean_turnover: (!series.turnover.is_empty()).then(|| series.mean_turnover()),
        yearly_sharpe,
    }
}

/// One pooled LG row per `(cell, cost)`, including zero rows for CLEAN.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LeakageRow {
    pub key: CellKey,
    pub cost_bps: f64,
    pub config_hash: String,
    pub lg_sr: Option<f64>,
    pub lg_rank_ic: Option<f64>,
    pub lg_auc: Option<f64>,
    /// Per test year LG-SR at this cost (NA years omitted).
    pub yearly: BTreeMap<i32, Option<f64>>,
    pub stats: Option<YearlyStats>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub schema_version: String,
    pub rng: &'static str,
    pub turnover_convention: &'static str,
    pub portfolio_rule: &'static str,
    pub label_convention: &'static str,
    pub future_days: usize,
    pub peers: usize,
    pub min_pair_overlap: usize,
    pub embargo_by_horizon: BTreeMap<usize, usize>,
    pub test_years: BTreeMap<String, Vec<i32>>,
    pub master_seed: u64,
    pub bootstrap_resamples: usize,
    pub model_params: ModelParams,
    pub costs_bps: Vec<f64>,
    pub variants: Vec<Variant>,
    pub protocols: Vec<ProtocolSpec>,
}

#[derive(Debug)]
pub struct GridResults {
    pub cells: Vec<CellResult>,
    pub leakage: Vec<LeakageRow>,
    pub provenance: Provenance,
}

impl GridResults {
    pub fn cell(&self, market: &str, model: ModelFamily, h: usize, variant: Variant) -> Option<&CellResult> {
        self.cells.iter().find(|c| {
            c.key.market == market && c.key.model == model && c.key.horizon == h && c.key.variant == variant
        })
    }

    pub fn lg(&self, market: &str, model: ModelFamily, h: usize, variant: Variant, cost: f64) -> Option<&LeakageRow> {
        self.leakage.iter().find(|r| {
            r.key.market == market
                && r.key.model == model
                && r.key.horizon == h
                && r.key.variant == variant
                && r.cost_bps == cost
        })
    }
}

pub fn run_grid(cfg: &RunConfig) -> Result<GridResults, RunError> {
    cfg.validate()?;
    let markets = load_markets(cfg)?;
    run_grid_on(cfg, &markets)
}

/// Runs every cell on already-loaded markets. Output is independent of `cfg.jobs`.
pub fn run_grid_on(cfg: &RunConfig, markets: &[MarketData]) -> Result<GridResults, RunError> {
    cfg.validate()?;
    let variants = cfg.effective_variants();
    let protocols: Vec<ProtocolSpec> = variants.iter().map(|&v| cfg.protocol(v)).collect::<Result<_, _>>()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| RunError::Config(e.to_string()))?;

    pool.install(|| {
        let prepared: Vec<PreparedMarket> = markets
            .iter()
            .map(|m| prepare_market(cfg, m))
            .collect::<Result<_, _>>()?;
        let mut keys = Vec::new();
        for m in &prepared {
            for &model in &cfg.effective_models() {
                for &h in &cfg.effective_horizons() {
                    for &variant in &variants {
                        keys.push((m, CellKey {
                            market: m.name.clone(),
                            model,
                            horizon: h,
                            variant,
                        }));
                    }
                }
            }
        }
        let mut cells: Vec<CellResult> = keys
            .par_iter()
            .map(|(m, k)| run_cell(cfg, m, k))
            .collect::<Result<_, _>>()?;
        cells.sort_by(|a, b| a.key.cmp(&b.key));

        let leakage = pair_cells(cfg, &cells)?;
        let provenance = Provenance {
            schema_version: prepared.first().map(|m| m.schema_version.clone()).unwrap_or_default(),
            rng: RNG_NAME,
            turnover_convention: evaluate::TURNOVER_CONVENTION,
            portfolio_rule: PORTFOLIO_RULE,
            label_convention: LABEL_CONVENTION,
            future_days: cfg.future_days,
            peers: cfg.peers,
            min_pair_overlap: graph::MIN_OVERLAP,
            embargo_by_horizon: cfg.effective_horizons().iter().map(|&h| (h, cfg.embargo_for(h))).collect(),
            test_years: prepared.iter().map(|m| (m.name.clone(), m.test_years.clone())).collect(),
            master_seed: cfg.seed,
            bootstrap_resamples: cfg.bootstrap_resamples,
            model_params: cfg.model_params,
            costs_bps: cfg.effective_costs(),
            variants: variants.clone(),
            protocols,
        };
        Ok(GridResults {
            cells,
            leakage,
            provenance,
        })
    })
}

fn pair_cells(cfg: &RunConfig, cells: &[CellResult]) -> Result<Vec<LeakageRow>, RunError> {
    let clean: HashMap<(String, ModelFamily, usize), &CellResult> = cells
        .iter()
        .filter(|c| c.key.variant == Variant::Clean)
        .map(|c| ((c.key.market.clone(), c.key.model, c.key.horizon), c))
        .collect();
    let mut rows = Vec::new();
    for c in cells {
        let base = clean
            .get(&(c.key.market.clone(), c.key.model, c.key.horizon))
            .ok_or_else(|| cell_err(&c.key.to_string(), "no CLEAN reference"))?;
        // Pairing refuses runs whose shared configuration differs.
        let lg: LeakageGain = leakage_gain(&c.report, &base.report)
            .map_err(|e: MetricsError| cell_err(&c.key.to_string(), e))?;
        for &cost in &cfg.effective_costs() {
            let ck = cost_key(cost);
            let yearly: BTreeMap<i32, Option<f64>> = lg
                .yearly_sharpe
                .iter()
                .map(|(y, m)| (*y, m.get(&ck).copied().flatten()))
                .collect();
            let values: Vec<f64> = yearly.values().flatten().copied().collect();
            let seed = derive_key(
                cfg.seed,
                &[
                    hash_str(&c.key.market),
                    c.key.model as u64,
                    c.key.horizon as u64,
                    c.key.variant as u64,
                    cost.to_bits(),
                ],
            );
            rows.push(LeakageRow {
                key: c.key.clone(),
                cost_bps: cost,
                config_hash: c.config_hash.clone(),
                lg_sr: lg.sharpe.get(&ck).copied().flatten(),
                lg_rank_ic: lg.rank_ic,
                lg_auc: lg.auc,
                yearly,
                stats: metrics::yearly_stats(&values, cfg.bootstrap_resamples, seed),
            });
        }
    }
    Ok(rows)
}

/// Intervention operators wrapping the protocol module.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Intervention {
    /// Permute each asset's returns after `cutoff`.
    FutureSuffix { cutoff: NaiveDate, seed: u64 },
    /// Replace post-open fields with open-time surrogates.
    MaskPostOpen,
}

impl Intervention {
    pub fn apply(&self, panel: &OhlcvPanel) -> Result<OhlcvPanel, RunError> {
        match *self {
            Intervention::FutureSuffix { cutoff, seed } => Ok(perturb_future_suffix(panel, cutoff, seed)?),
            Intervention::MaskPostOpen => Ok(mask_post_open(panel)),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Intervention::FutureSuffix { .. } => "future_suffix",
            Intervention::MaskPostOpen => "mask_post_open",
        }
    }
}

/// A designated `(CLEAN, variant)` pair run on the original feature panel and
/// on the intervened one; labels and trade returns stay on the original data.
pub struct InterventionResult {
    pub intervention: Intervention,
    pub original: GridResults,
    pub intervened: GridResults,
}

pub fn run_intervention(
    cfg: &RunConfig,
    market: &MarketData,
    model: ModelFamily,
    horizon: usize,
    variant: Variant,
    intervention: Intervention,
) -> Result<InterventionResult, RunError> {
    let pair_cfg = RunConfig {
        models: vec![model],
        horizons: vec![horizon],
        variants: vec![Variant::Clean, variant],
        ..cfg.clone()
    };
    let original = run_grid_on(&pair_cfg, std::slice::from_ref(market))?;
    let altered = market.with_feature_panel(intervention.apply(&market.feature_panel)?);
    let intervened = run_grid_on(&pair_cfg, &[altered])?;
    Ok(InterventionResult {
        intervention,
        original,
        intervened,
    })
}
