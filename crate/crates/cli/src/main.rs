//! `leakgain` command line: paired grid runs, interventions and synthetic panels.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};

use leakgain::evaluate::SENSITIVITY_COSTS_BPS;
use leakgain::models::ModelFamily;
use leakgain::panel::save_panel;
use leakgain::report::{emit_reports, fmt_g6};
use leakgain::runner::{
    load_markets, run_grid_on, run_intervention, Intervention, InterventionResult, MarketSource, RunConfig,
};
use leakgain::synth::{generate_panel, SynthConfig};
use leakgain::Variant;

#[derive(Parser)]
#[command(name = "leakgain", version, about = "Paired-protocol leakage gain backtests")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full paired grid and write reports.
    Run(GridArgs),
    /// Re-run a CLEAN/variant pair on an intervened panel.
    Intervene {
        #[command(subcommand)]
        kind: InterveneKind,
    },
    /// Generate a synthetic panel and save it as CSV.
    Synth {
        /// `key=value,...` generator settings.
        spec: String,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum InterveneKind {
    /// Permute each asset's returns after the cutoff date.
    Suffix {
        #[arg(long)]
        cutoff: NaiveDate,
        /// Permutation seed; defaults to the master seed.
        #[arg(long)]
        perm_seed: Option<u64>,
        #[command(flatten)]
        pair: PairArgs,
    },
    /// Replace post-open fields with open-time surrogates.
    Mask {
        #[command(flatten)]
        pair: PairArgs,
    },
}

#[derive(Args)]
struct PairArgs {
    #[arg(long, default_value = "RIDGE")]
    model: ModelFamily,
    #[arg(long, default_value_t = 5)]
    horizon: usize,
    #[arg(long)]
    variant: Variant,
    /// Market label when the config defines more than one.
    #[arg(long)]
    market: Option<String>,
    #[command(flatten)]
    grid: GridArgs,
}

#[derive(Args)]
struct GridArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Synthetic market shorthand, optionally labelled: `[LABEL:]key=value,...`.
    #[arg(long)]
    synthetic: Vec<String>,
    /// CSV market: `LABEL=PATH`.
    #[arg(long)]
    data: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    models: Option<Vec<ModelFamily>>,
    #[arg(long, value_delimiter = ',')]
    horizons: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    variants: Option<Vec<Variant>>,
    #[arg(long, value_delimiter = ',')]
    costs: Option<Vec<f64>>,
    /// Use the sensitivity cost grid 0,5,10,25,50.
    #[arg(long, conflicts_with = "costs")]
    cost_sensitivity: bool,
    /// Test years: `2019,2020` or `2019-2024`.
    #[arg(long)]
    years: Option<String>,
    #[arg(long)]
    embargo: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_years(text: &str) -> Result<Vec<i32>> {
    if let Some((a, b)) = text.split_once('-') {
        let (a, b): (i32, i32) = (a.trim().parse()?, b.trim().parse()?);
        if a > b {
            bail!("empty year range {text}");
        }
        return Ok((a..=b).collect());
    }
    text.split(',')
        .map(|y| y.trim().parse().with_context(|| format!("bad year {y:?}")))
        .collect()
}

impl GridArgs {
    fn config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
            None => RunConfig::default(),
        };
        for s in &self.synthetic {
            let (label, body) = match s.split_once(':') {
                Some((l, b)) => (l.to_string(), b),
                None => ("SYN".to_string(), s.as_str()),
            };
            let sc = SynthConfig::parse_shorthand(body)?;
            cfg.markets.insert(label, MarketSource::Synthetic(sc));
        }
        for d in &self.data {
            let Some((label, path)) = d.split_once('=') else {
                bail!("--data expects LABEL=PATH, got {d:?}");
            };
            cfg.markets.insert(label.to_string(), MarketSource::Path(path.into()));
        }
        if let Some(v) = &self.models {
            cfg.models = v.clone();
        }
        if let Some(v) = &self.horizons {
            cfg.horizons = v.clone();
        }
        if let Some(v) = &self.variants {
            cfg.variants = v.clone();
        }
        if let Some(v) = &self.costs {
            cfg.costs_bps = v.clone();
        }
        if self.cost_sensitivity {
            cfg.costs_bps = SENSITIVITY_COSTS_BPS.to_vec();
        }
        if let Some(y) = &self.years {
            cfg.test_years = Some(parse_years(y)?);
        }
        if self.embargo.is_some() {
            cfg.embargo = self.embargo;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(j) = self.jobs {
            cfg.jobs = j;
        }
        if let Some(o) = &self.out {
            cfg.out_dir = o.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(args: &GridArgs) -> Result<()> {
    let cfg = args.config()?;
    let markets = load_markets(&cfg)?;
    let results = run_grid_on(&cfg, &markets)?;
    for c in &results.cells {
        if !c.series.skipped.is_empty() {
            log::warn!("{}: {} dates had no evaluable asset and were skipped", c.key, c.series.skipped.len());
        }
        if !c.dropped_features.is_empty() {
            log::warn!("{}: dropped constant features {:?}", c.key, c.dropped_features);
        }
    }
    let paths = emit_reports(&results, &cfg.out_dir)?;
    for p in paths {
        println!("{}", p.display());
    }
    Ok(())
}

fn intervention_csv(res: &InterventionResult) -> String {
    let mut out = String::from("condition,market,model,h,variant,cost_bps,sharpe,lg_sr\n");
    for (cond, grid) in [("original", &res.original), ("intervened", &res.intervened)] {
        for row in &grid.leakage {
            let cell = grid
                .cell(&row.key.market, row.key.model, row.key.horizon, row.key.variant)
                .expect("every LG row has a cell");
            let sharpe = cell
                .report
                .sharpe
                .get(&leakgain::metrics::cost_key(row.cost_bps))
                .copied()
                .flatten();
            let _ = writeln!(
                out,
                "{cond},{},{},{},{},{},{},{}",
                row.key.market,
                row.key.model,
                row.key.horizon,
                row.key.variant,
                fmt_g6(Some(row.cost_bps)),
                fmt_g6(sharpe),
                fmt_g6(row.lg_sr)
            );
        }
    }
    out
}

fn intervene(pair: &PairArgs, intervention_of: impl FnOnce(&RunConfig) -> Intervention) -> Result<()> {
    let cfg = pair.grid.config()?;
    let markets = load_markets(&cfg)?;
    let market = match &pair.market {
        Some(m) => markets
            .iter()
            .find(|d| &d.name == m)
            .with_context(|| format!("no market {m}"))?,
        None if markets.len() == 1 => &markets[0],
        None => bail!("several markets configured; pass --market"),
    };
    let intervention = intervention_of(&cfg);
    let res = run_intervention(&cfg, market, pair.model, pair.horizon, pair.variant, intervention)?;
    let out: &Path = &cfg.out_dir;
    emit_reports(&res.original, &out.join("original"))?;
    emit_reports(&res.intervened, &out.join(intervention.name()))?;
    let path = out.join("intervention.csv");
    std::fs::write(&path, intervention_csv(&res))?;
    println!("{}", path.display());
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Run(args) => run(&args),
        Command::Intervene { kind } => match kind {
            InterveneKind::Suffix {
                cutoff,
                perm_seed,
                pair,
            } => intervene(&pair, |cfg| Intervention::FutureSuffix {
                cutoff,
                seed: perm_seed.unwrap_or(cfg.seed),
            }),
            InterveneKind::Mask { pair } => intervene(&pair, |_| Intervention::MaskPostOpen),
        },
        Command::Synth { spec, out } => {
            let cfg = SynthConfig::parse_shorthand(&spec)?;
            let panel = generate_panel(&cfg)?;
            save_panel(&panel, &out)?;
            println!("{}", out.display());
            Ok(())
        }
    }
}
