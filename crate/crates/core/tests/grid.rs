//! End-to-end grid runs on small synthetic markets.

use std::collections::BTreeMap;

use leakgain::models::ModelFamily;
use leakgain::report::{emit_reports, leakage_csv, metrics_csv, yearly_csv};
use leakgain::runner::{run_grid, MarketSource, RunConfig, RunError};
use leakgain::synth::SynthConfig;
use leakgain::Variant;

fn small_config() -> RunConfig {
    let mut markets = BTreeMap::new();
    markets.insert(
        "SYN".to_string(),
        MarketSource::Synthetic(SynthConfig {
            n_assets: 30,
            n_days: 800,
            seed: 4,
            ..SynthConfig::default()
        }),
    );
    RunConfig {
        markets,
        models: vec![ModelFamily::Momentum, ModelFamily::Ridge, ModelFamily::GraphRidge],
        horizons: vec![5],
        test_years: Some(vec![2017, 2018]),
        bootstrap_resamples: 500,
        ..RunConfig::default()
    }
}

#[test]
fn config_grammar_round_trips() {
    let text = r#"
        models = ["RIDGE", "GBT"]
        horizons = [5, 20]
        variants = ["TEMP_CENTER", "EXEC_OPEN"]
        costs_bps = [0, 5, 10]
        test_years = [2019, 2020]
        seed = 42
        jobs = 4

        [markets.US]
        path = "data/us.csv"

        [markets.SYN.synthetic]
        n_assets = 50
        n_days = 600
        seed = 9

        [model_params]
        ridge_alpha = 2.0

        [model_params.gbt]
        n_estimators = 10
    "#;
    let cfg = RunConfig::from_toml_str(text).unwrap();
    assert_eq!(cfg.models, vec![ModelFamily::Ridge, ModelFamily::Gbt]);
    assert_eq!(cfg.effective_variants(), vec![Variant::Clean, Variant::TempCenter, Variant::ExecOpen]);
    assert_eq!(cfg.model_params.gbt.n_estimators, 10);
    assert_eq!(cfg.model_params.gbt.num_leaves, 31);
    assert!(matches!(cfg.markets["US"], MarketSource::Path(_)));
    match &cfg.markets["SYN"] {
        MarketSource::Synthetic(s) => assert_eq!((s.n_assets, s.daily_vol), (50, 0.02)),
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(cfg.embargo_for(20), 21);
    assert!(RunConfig::from_toml_str("bogus = 1").is_err());
    assert!(RunConfig::from_toml_str("variants = [\"LEAKY\"]").is_err());
}

#[test]
fn clean_only_grid_gives_zero_rows() {
    let cfg = RunConfig {
        variants: vec![Variant::Clean],
        ..small_config()
    };
    let res = run_grid(&cfg).unwrap();
    assert_eq!(res.cells.len(), 3);
    assert_eq!(res.leakage.len(), 3 * 3);
    for row in &res.leakage {
        assert_eq!(row.key.variant, Variant::Clean);
        assert_eq!(row.lg_sr, Some(0.0));
        assert_eq!(row.lg_rank_ic, Some(0.0));
        assert_eq!(row.lg_auc, Some(0.0));
    }
}

#[test]
fn variants_share_the_pair_hash_and_clean_rows_exist() {
    let res = run_grid(&small_config()).unwrap();
    let csv = leakage_csv(&res);
    for line in csv.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let clean_prefix = format!("{},{},{},CLEAN,{},{},", f[0], f[1], f[2], f[4], f[5]);
        assert!(csv.lines().any(|l| l.starts_with(&clean_prefix)), "no CLEAN match for {line}");
    }
    // Momentum ignores every switch that only touches learned inputs.
    for v in [Variant::TempCenter, Variant::NormGlobal, Variant::StructGraph] {
        let a = res.cell("SYN", ModelFamily::Momentum, 5, v).unwrap();
        let c = res.cell("SYN", ModelFamily::Momentum, 5, Variant::Clean).unwrap();
        assert_eq!(a.scores, c.scores);
        assert!(yearly_csv(&res).contains(&format!("SYN,MOMENTUM,5,{v},0,{},0,0,0,0,0,0,2,NA", a.config_hash)));
    }
}

#[test]
fn extra_cost_level_only_adds_rows() {
    let base = small_config();
    let wider = RunConfig {
        costs_bps: vec![0.0, 5.0, 10.0, 25.0],
        ..small_config()
    };
    let (a, b) = (run_grid(&base).unwrap(), run_grid(&wider).unwrap());
    for (out_a, out_b) in [(leakage_csv(&a), leakage_csv(&b)), (metrics_csv(&a), metrics_csv(&b))] {
        let lines_b: Vec<&str> = out_b.lines().collect();
        for line in out_a.lines() {
            assert!(lines_b.contains(&line), "row changed: {line}");
        }
        assert!(lines_b.len() > out_a.lines().count());
    }
}

#[test]
fn reports_are_written_and_sorted() {
    let res = run_grid(&small_config()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let paths = emit_reports(&res, dir.path()).unwrap();
    assert_eq!(paths.len(), 4);
    let metrics = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("market,model,h,variant,cost_bps,metric,value\n"));
    assert!(!metrics.contains('\r'));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["provenance"]["rng"], "splitmix64-keyed/v1");
    assert_eq!(summary["provenance"]["embargo_by_horizon"]["5"], 6);
}

#[test]
fn cell_errors_name_the_cell() {
    let cfg = RunConfig {
        test_years: Some(vec![1999]),
        ..small_config()
    };
    let err = run_grid(&cfg).unwrap_err();
    assert!(matches!(err, RunError::Cell { .. }), "{err}");
    assert!(err.to_string().contains("SYN"), "{err}");
}
