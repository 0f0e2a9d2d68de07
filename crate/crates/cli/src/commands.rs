//! Pipeline stages. Each stage reads the files written by the previous one
//! from the output directory and writes its own; run times go to a separate
//! `timings.csv` so every other artifact is reproducible byte for byte.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use chrono::{Duration, NaiveDate};
use hjm_core::calibration::{estimate_covariance, pca, select_factors, build_sigma_star, correlation_surface, FactorModel};
use hjm_core::curve::{bootstrap_by_date, read_curves_csv, verify_no_arbitrage, write_curves_csv, StepwiseCurve};
use hjm_core::marketdata::{
    acf, build_relative_panel, filter_outliers, log_returns, normality_diagnostics, parse_quotes, read_panel_csv,
    write_panel_csv, LogReturnMatrix, PanelLayout, QuotedSwap,
};
use hjm_core::pricing::{price_storage, price_swing, price_vpp, LsmcConfig};
use hjm_core::simulation::{
    sanity_check, simulate_fixed_delivery, simulate_short_horizon, simulate_spot, variance_with_error,
    FixedDeliverySpec, PathSet, SimConfig, SpotSpec,
};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::RunConfig;
use crate::contracts::{self, StorageSpec, SwingSpec, VppSpec, DAYS_PER_YEAR};
use crate::error::{CliError, CliResult};

pub const QUOTES: &str = "quotes.csv";
pub const INGEST_REPORT: &str = "ingest_report.json";
pub const CURVES: &str = "curves.csv";
pub const MODEL: &str = "model.json";
pub const TIMINGS: &str = "timings.csv";

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

fn open(path: &Path) -> CliResult<File> {
    File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CliError::MissingInput(path.display().to_string()),
        _ => CliError::io(path, e),
    })
}

fn csv_writer(path: &Path) -> CliResult<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(create(path)?))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w).map_err(|e| CliError::io(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    Ok(serde_json::from_reader(std::io::BufReader::new(open(path)?))?)
}

fn ensure_out(cfg: &RunConfig) -> CliResult<()> {
    fs::create_dir_all(&cfg.out).map_err(|e| CliError::io(&cfg.out, e))
}

/// Appends one `command,item,seconds` row to the timings sidecar.
fn record_time(cfg: &RunConfig, command: &str, item: &str, started: Instant) -> CliResult<()> {
    let path = cfg.out_file(TIMINGS);
    let fresh = !path.exists();
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| CliError::io(&path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    if fresh {
        w.write_record(["command", "item", "seconds"])?;
    }
    let secs = started.elapsed().as_secs_f64();
    log::info!("{command} {item}: {secs:.3} s");
    w.write_record([command, item, &format!("{secs:.6}")])?;
    w.flush().map_err(|e| CliError::io(&path, e))
}

fn by_market(quotes: &[QuotedSwap]) -> BTreeMap<String, Vec<QuotedSwap>> {
    let mut m: BTreeMap<String, Vec<QuotedSwap>> = BTreeMap::new();
    for q in quotes {
        m.entry(q.market.clone()).or_default().push(q.clone());
    }
    m
}

fn layout(cfg: &RunConfig) -> PanelLayout {
    PanelLayout {
        months: cfg.months,
        quarters: cfg.quarters,
        years: cfg.years,
    }
}

fn write_quotes(path: &Path, quotes: &[QuotedSwap]) -> CliResult<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["trading_date", "market", "delivery_start", "delivery_end", "price"])?;
    for q in quotes {
        w.write_record([
            q.trading_date.to_string(),
            q.market.clone(),
            q.delivery_start.to_string(),
            q.delivery_end.to_string(),
            q.price.to_string(),
        ])?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub markets: Vec<String>,
    pub accepted_rows: usize,
    pub rejected: Vec<RejectedEntry>,
    pub trading_dates: usize,
    pub curve_failures: Vec<String>,
    pub outliers_removed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedEntry {
    pub row: usize,
    pub reason: String,
}

/// Panels of every market, their joined log-returns, and the filtered
/// returns with per-column removal counts.
struct Returns {
    panels: Vec<hjm_core::marketdata::RelativePanel>,
    filtered: LogReturnMatrix,
    removed: Vec<usize>,
}

fn returns_from_panels(panels: Vec<hjm_core::marketdata::RelativePanel>, cfg: &RunConfig) -> CliResult<Returns> {
    let parts = panels
        .iter()
        .map(|p| log_returns(p, cfg.dt))
        .collect::<hjm_core::Result<Vec<_>>>()?;
    let joined = LogReturnMatrix::join(&parts)?;
    let (filtered, removed) = filter_outliers(&joined, cfg.outlier_k)?;
    Ok(Returns {
        panels,
        filtered,
        removed,
    })
}

/// Quotes CSV to cleaned quotes, relative panels and return diagnostics.
pub fn ingest(cfg: &RunConfig) -> CliResult<IngestReport> {
    let started = Instant::now();
    let batch = parse_quotes(open(&cfg.quotes)?)?;
    if batch.quotes.is_empty() {
        return Err(hjm_core::Error::InvalidInput("no valid quote rows".into()).into());
    }
    for r in &batch.rejected {
        log::warn!("{}: row {} rejected: {}", cfg.quotes.display(), r.row, r.reason);
    }
    let (reports, failures) = bootstrap_by_date(&batch.quotes, cfg.curve_months);
    let curves: Vec<StepwiseCurve> = reports.into_iter().map(|r| r.curve).collect();
    let markets = by_market(&batch.quotes);
    let panels = markets
        .values()
        .map(|q| build_relative_panel(q, &curves, &layout(cfg)))
        .collect::<hjm_core::Result<Vec<_>>>()?;
    let ret = returns_from_panels(panels, cfg)?;

    ensure_out(cfg)?;
    write_quotes(&cfg.out_file(QUOTES), &batch.quotes)?;
    for p in &ret.panels {
        let path = cfg.out_file(&format!("panel_{}.csv", p.market));
        let mut w = create(&path)?;
        write_panel_csv(p, &mut w)?;
        w.flush().map_err(|e| CliError::io(&path, e))?;
    }
    write_diagnostics(cfg, &ret.filtered)?;
    let market_names: Vec<String> = markets.keys().cloned().collect();
    for (i, a) in market_names.iter().enumerate() {
        for b in &market_names[i..] {
            let s = correlation_surface(&ret.filtered, a, b)?;
            let mut w = csv_writer(&cfg.out_file(&format!("correlation_{a}_{b}.csv")))?;
            w.write_record(["tenor_a", "tenor_b", "correlation"])?;
            for (ta, row) in s.tenors_a.iter().zip(&s.values) {
                for (tb, v) in s.tenors_b.iter().zip(row) {
                    w.write_record([ta.clone(), tb.clone(), v.map(|x| x.to_string()).unwrap_or_default()])?;
                }
            }
            w.flush().map_err(|e| CliError::io(&cfg.out, e))?;
        }
    }
    let report = IngestReport {
        markets: market_names,
        accepted_rows: batch.quotes.len(),
        rejected: batch
            .rejected
            .iter()
            .map(|r| RejectedEntry {
                row: r.row,
                reason: r.reason.clone(),
            })
            .collect(),
        trading_dates: ret.panels.iter().map(|p| p.dates.len()).max().unwrap_or(0),
        curve_failures: failures
            .iter()
            .map(|(m, d, e)| format!("{m} {d}: {e}"))
            .collect(),
        outliers_removed: ret.removed.iter().sum(),
    };
    write_json(&cfg.out_file(INGEST_REPORT), &report)?;
    record_time(cfg, "ingest", "all", started)?;
    Ok(report)
}

/// ACF table and moments of every filtered return column.
fn write_diagnostics(cfg: &RunConfig, x: &LogReturnMatrix) -> CliResult<()> {
    let mut acf_w = csv_writer(&cfg.out_file("acf.csv"))?;
    acf_w.write_record(["market", "tenor", "lag", "acf"])?;
    let mut mom_w = csv_writer(&cfg.out_file("moments.csv"))?;
    mom_w.write_record(["market", "tenor", "n", "mean", "std", "skewness", "excess_kurtosis"])?;
    for (j, key) in x.column_keys.iter().enumerate() {
        let col = x.present(j);
        let max_lag = cfg.max_lag.min(col.len().saturating_sub(1));
        match acf(&col, max_lag) {
            Ok(r) => {
                for (lag, v) in r.iter().enumerate() {
                    acf_w.write_record([key.market.clone(), key.tenor.clone(), lag.to_string(), v.to_string()])?;
                }
            }
            Err(e) => log::warn!("{key}: no autocorrelation ({e})"),
        }
        match normality_diagnostics(&col) {
            Ok(m) => mom_w.write_record([
                key.market.clone(),
                key.tenor.clone(),
                col.len().to_string(),
                m.mean.to_string(),
                m.std.to_string(),
                m.skewness.to_string(),
                m.excess_kurtosis.to_string(),
            ])?,
            Err(e) => log::warn!("{key}: no moments ({e})"),
        }
    }
    acf_w.flush().map_err(|e| CliError::io(&cfg.out, e))?;
    mom_w.flush().map_err(|e| CliError::io(&cfg.out, e))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveSummary {
    pub curves: usize,
    pub failures: usize,
    pub max_residual: f64,
}

/// Cleaned quotes to one flat monthly curve per market and trading date.
pub fn curve(cfg: &RunConfig) -> CliResult<CurveSummary> {
    let started = Instant::now();
    let quotes = parse_quotes(open(&cfg.out_file(QUOTES))?)?.quotes;
    let (reports, failures) = bootstrap_by_date(&quotes, cfg.curve_months);
    if reports.is_empty() {
        let (_, _, e) = failures
            .into_iter()
            .next()
            .ok_or_else(|| hjm_core::Error::InvalidInput("no quotes".into()))?;
        return Err(e.into());
    }
    let mut groups: BTreeMap<(String, NaiveDate), Vec<QuotedSwap>> = BTreeMap::new();
    for q in quotes {
        groups.entry((q.market.clone(), q.trading_date)).or_default().push(q);
    }
    let mut w = csv_writer(&cfg.out_file("curve_report.csv"))?;
    w.write_record(["as_of", "market", "product", "status", "residual"])?;
    let mut max_residual: f64 = 0.0;
    for r in &reports {
        let c = &r.curve;
        let check = verify_no_arbitrage(c, &groups[&(c.market.clone(), c.as_of)])?;
        max_residual = max_residual.max(check.max_residual);
        for p in &r.residuals {
            w.write_record([c.as_of.to_string(), c.market.clone(), p.product.clone(), "fitted".into(), p.residual.to_string()])?;
        }
        for q in &r.removed_products {
            w.write_record([c.as_of.to_string(), c.market.clone(), q.label(), "removed".into(), String::new()])?;
        }
    }
    for (m, d, e) in &failures {
        log::warn!("{m} {d}: {e}");
        w.write_record([d.to_string(), m.clone(), String::new(), format!("failed: {e}"), String::new()])?;
    }
    w.flush().map_err(|e| CliError::io(&cfg.out, e))?;
    let curves: Vec<StepwiseCurve> = reports.into_iter().map(|r| r.curve).collect();
    let path = cfg.out_file(CURVES);
    let mut cw = create(&path)?;
    write_curves_csv(&curves, &mut cw)?;
    cw.flush().map_err(|e| CliError::io(&path, e))?;
    record_time(cfg, "curve", "all", started)?;
    Ok(CurveSummary {
        curves: curves.len(),
        failures: failures.len(),
        max_residual,
    })
}

/// Panels to the reduced factor model.
pub fn calibrate(cfg: &RunConfig) -> CliResult<FactorModel> {
    let started = Instant::now();
    let report: IngestReport = read_json(&cfg.out_file(INGEST_REPORT))?;
    let panels = report
        .markets
        .iter()
        .map(|m| Ok(read_panel_csv(m, open(&cfg.out_file(&format!("panel_{m}.csv")))?)?))
        .collect::<CliResult<Vec<_>>>()?;
    let as_of = panels.iter().filter_map(|p| p.dates.last().copied()).max();
    let ret = returns_from_panels(panels, cfg)?;
    let cov = estimate_covariance(&ret.filtered)?;
    let eig = pca(&cov)?;
    let n = match cfg.factors {
        Some(n) => n,
        None => select_factors(&eig.values, cfg.threshold)?,
    };
    let mut model = build_sigma_star(&eig, n, cfg.dt)?;
    model.as_of = as_of;
    log::info!(
        "{} factors explain {:.4} of the variance ({} columns, {} complete rows)",
        n,
        model.explained[n - 1],
        cov.column_keys.len(),
        cov.n_obs
    );

    write_json(&cfg.out_file(MODEL), &model)?;
    let mut w = csv_writer(&cfg.out_file("scree.csv"))?;
    w.write_record(["component", "eigenvalue", "explained", "cumulative"])?;
    let total: f64 = eig.values.iter().sum();
    for (i, (v, c)) in eig.values.iter().zip(eig.explained()).enumerate() {
        let share = if total > 0.0 { v / total } else { 0.0 };
        w.write_record([(i + 1).to_string(), v.to_string(), share.to_string(), c.to_string()])?;
    }
    w.flush().map_err(|e| CliError::io(&cfg.out, e))?;
    let mut w = csv_writer(&cfg.out_file("outliers.csv"))?;
    w.write_record(["market", "tenor", "removed"])?;
    for (key, r) in ret.filtered.column_keys.iter().zip(&ret.removed) {
        w.write_record([key.market.clone(), key.tenor.clone(), r.to_string()])?;
    }
    w.flush().map_err(|e| CliError::io(&cfg.out, e))?;
    record_time(cfg, "calibrate", "all", started)?;
    Ok(model)
}

/// Latest trading date with a curve for every model market.
fn latest_curves(model: &FactorModel, curves: Vec<StepwiseCurve>) -> CliResult<Vec<StepwiseCurve>> {
    let mut by_date: BTreeMap<NaiveDate, BTreeMap<String, StepwiseCurve>> = BTreeMap::new();
    for c in curves {
        if model.markets.contains(&c.market) {
            by_date.entry(c.as_of).or_default().insert(c.market.clone(), c);
        }
    }
    let (_, set) = by_date
        .into_iter()
        .rev()
        .find(|(d, set)| set.len() == model.markets.len() && model.as_of.is_none_or(|a| *d <= a))
        .ok_or_else(|| hjm_core::Error::InvalidInput("no date with a curve for every model market".into()))?;
    Ok(model.markets.iter().map(|m| set[m].clone()).collect())
}

fn load_model_and_curves(cfg: &RunConfig) -> CliResult<(FactorModel, Vec<StepwiseCurve>)> {
    let model: FactorModel = read_json(&cfg.out_file(MODEL))?;
    model.validate()?;
    let curves = read_curves_csv(open(&cfg.out_file(CURVES))?)?;
    let curves = latest_curves(&model, curves)?;
    Ok((model, curves))
}

/// Daily spot paths of `markets`, forward curve read off `curves` day by day.
fn spot_paths(
    model: &FactorModel,
    curves: &[StepwiseCurve],
    markets: &[&str],
    days: usize,
    seed: u64,
    cfg: &RunConfig,
) -> CliResult<PathSet> {
    let specs = markets
        .iter()
        .map(|m| {
            let curve = curves
                .iter()
                .find(|c| c.market == *m)
                .ok_or_else(|| hjm_core::Error::InvalidInput(format!("no curve for market {m}")))?;
            Ok(SpotSpec {
                market: m.to_string(),
                forward: (0..=days)
                    .map(|d| curve.value_at(curve.as_of + Duration::days(d as i64)))
                    .collect(),
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    let mut sim = SimConfig::new(seed, cfg.n_paths, 1.0 / DAYS_PER_YEAR, days as f64 / DAYS_PER_YEAR);
    sim.antithetic = cfg.antithetic;
    Ok(simulate_spot(model, &specs, &sim)?)
}

fn write_summary(path: &Path, paths: &PathSet) -> CliResult<()> {
    let mut w = create(path)?;
    paths.write_summary_csv(&mut w)?;
    w.flush().map_err(|e| CliError::io(path, e))
}

fn write_paths(path: &Path, paths: &PathSet) -> CliResult<()> {
    let mut w = create(path)?;
    paths.write_csv(&mut w)?;
    w.flush().map_err(|e| CliError::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationSummary {
    pub as_of: NaiveDate,
    pub seed: u64,
    pub n_paths: usize,
    pub max_rel_error: f64,
    pub max_z_score: f64,
    pub correlation_max_abs_diff: Option<f64>,
    pub sanity_z: f64,
    pub breach: bool,
}

/// Fixed-delivery, short-horizon and spot scenarios with the variance sanity report.
pub fn simulate(cfg: &RunConfig) -> CliResult<SimulationSummary> {
    let started = Instant::now();
    let (model, curves) = load_model_and_curves(cfg)?;
    let as_of = curves[0].as_of;
    let specs = curves
        .iter()
        .map(|c| {
            Ok(FixedDeliverySpec {
                market: c.market.clone(),
                initial: (0..model.buckets_per_market)
                    .map(|h| hjm_core::curve::extract_fixed_delivery(c, h))
                    .collect::<hjm_core::Result<Vec<_>>>()?,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    let mut sim = SimConfig::new(cfg.seed, cfg.n_paths, cfg.dt, cfg.horizon_days as f64 * cfg.dt);
    sim.antithetic = cfg.antithetic;
    let fixed = simulate_fixed_delivery(&model, &specs, &sim)?;
    let sanity = sanity_check(&fixed, &model)?;
    write_summary(&cfg.out_file("fixed_delivery_summary.csv"), &fixed)?;
    if cfg.export_paths {
        write_paths(&cfg.out_file("fixed_delivery_paths.csv"), &fixed)?;
    }
    let mut w = csv_writer(&cfg.out_file("sanity.csv"))?;
    w.write_record(["product_key", "time", "empirical", "theoretical", "rel_error", "std_error", "z_score"])?;
    for r in &sanity.rows {
        w.write_record([
            r.product_key.clone(),
            r.time.to_string(),
            r.empirical.to_string(),
            r.theoretical.to_string(),
            r.rel_error.to_string(),
            r.std_error.to_string(),
            r.z_score().to_string(),
        ])?;
    }
    w.flush().map_err(|e| CliError::io(&cfg.out, e))?;
    record_time(cfg, "simulate", "fixed_delivery", started)?;

    let started = Instant::now();
    let short_cfg = SimConfig {
        n_paths: cfg.short_horizon_paths,
        ..sim.clone()
    };
    let short = simulate_short_horizon(&model, &curves, cfg.short_horizon_days, &short_cfg)?;
    write_summary(&cfg.out_file("short_horizon_summary.csv"), &short)?;
    let last = short.n_times() - 1;
    let mut w = csv_writer(&cfg.out_file("short_horizon_check.csv"))?;
    w.write_record(["product_key", "initial", "mean", "std_error", "z_score"])?;
    for (k, key) in short.product_keys.iter().enumerate() {
        let xs = short.cross_section(last, k);
        let initial = short.value(0, 0, k);
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let (var, _) = variance_with_error(&xs);
        let se = (var / xs.len() as f64).sqrt();
        let z = if se > 0.0 { (mean - initial).abs() / se } else { 0.0 };
        w.write_record([key.to_string(), initial.to_string(), mean.to_string(), se.to_string(), z.to_string()])?;
    }
    w.flush().map_err(|e| CliError::io(&cfg.out, e))?;
    record_time(cfg, "simulate", "short_horizon", started)?;

    let started = Instant::now();
    let markets: Vec<&str> = model.markets.iter().map(String::as_str).collect();
    let spot = spot_paths(&model, &curves, &markets, cfg.spot_days, cfg.seed, cfg)?;
    write_summary(&cfg.out_file("spot_summary.csv"), &spot)?;
    if cfg.export_paths {
        write_paths(&cfg.out_file("spot_paths.csv"), &spot)?;
    }
    record_time(cfg, "simulate", "spot", started)?;

    let summary = SimulationSummary {
        as_of,
        seed: cfg.seed,
        n_paths: cfg.n_paths,
        max_rel_error: sanity.max_rel_error(),
        max_z_score: sanity.max_z_score(),
        correlation_max_abs_diff: sanity.correlation.as_ref().map(|c| c.max_abs_diff),
        sanity_z: cfg.sanity_z,
        breach: sanity.max_z_score() > cfg.sanity_z,
    };
    write_json(&cfg.out_file("simulation_report.json"), &summary)?;
    if summary.breach {
        return Err(CliError::SanityBreach(format!(
            "simulated log-variance {:.2} standard errors from the model (limit {})",
            summary.max_z_score, cfg.sanity_z
        )));
    }
    Ok(summary)
}

/// Values every configured contract and writes `valuation.json` plus sweep tables.
pub fn price(cfg: &RunConfig) -> CliResult<serde_json::Value> {
    let (model, curves) = load_model_and_curves(cfg)?;
    let lsmc = LsmcConfig {
        degree: cfg.lsmc_degree,
        ..LsmcConfig::default()
    };
    let mut out = serde_json::Map::new();
    out.insert("as_of".into(), json!(curves[0].as_of));
    out.insert("seed".into(), json!(cfg.seed));
    out.insert("n_paths".into(), json!(cfg.n_paths));
    out.insert("rate".into(), json!(cfg.rate));

    if let Some(path) = &cfg.swing {
        let started = Instant::now();
        let spec: SwingSpec = contracts::load(path)?;
        let paths = spot_paths(&model, &curves, &[&spec.market], spec.end_day, cfg.seed, cfg)?;
        let v = price_swing(&spec.contract(spec.u_max, spec.d_max)?, &paths, 0, cfg.rate, &lsmc)?;
        out.insert(
            "swing".into(),
            json!({
                "market": spec.market,
                "u_max": spec.u_max,
                "d_max": spec.d_max,
                "value": v.value.value,
                "std_error": v.value.std_error,
                "lower_bound": v.lower_bound,
                "lower_bound_std_error": v.lower_bound_std_error,
                "upper_bound": v.upper_bound,
                "upper_bound_std_error": v.upper_bound_std_error,
                "bounds_hold_3se": v.bounds_hold(3.0),
            }),
        );
        record_time(cfg, "price", "swing", started)?;
        if !spec.sweep.is_empty() {
            let mut w = csv_writer(&cfg.out_file("swing_sweep.csv"))?;
            w.write_record(["u_max", "d_max", "value", "std_error", "lower_bound", "upper_bound"])?;
            for &n in &spec.sweep {
                let started = Instant::now();
                let v = price_swing(&spec.contract(n, n)?, &paths, 0, cfg.rate, &lsmc)?;
                w.write_record([
                    n.to_string(),
                    n.to_string(),
                    v.value.value.to_string(),
                    v.value.std_error.to_string(),
                    v.lower_bound.to_string(),
                    v.upper_bound.to_string(),
                ])?;
                record_time(cfg, "price", &format!("swing_sweep_{n}"), started)?;
            }
            w.flush().map_err(|e| CliError::io(&cfg.out, e))?;
        }
    }

    if let Some(path) = &cfg.vpp {
        let started = Instant::now();
        let spec: VppSpec = contracts::load(path)?;
        let paths = spot_paths(&model, &curves, &[&spec.power, &spec.fuel], spec.end_day, cfg.seed, cfg)?;
        let v = price_vpp(&spec.contract(spec.t_on, spec.t_off)?, &paths, 0, &paths, 1, cfg.rate, &lsmc)?;
        out.insert(
            "vpp".into(),
            json!({
                "power": spec.power,
                "fuel": spec.fuel,
                "t_on": spec.t_on,
                "t_off": spec.t_off,
                "value": v.lsmc.value,
                "std_error": v.lsmc.std_error,
                "naive": v.naive,
                "naive_std_error": v.naive_std_error,
                "upper_bound": v.upper_bound,
                "upper_bound_std_error": v.upper_bound_std_error,
            }),
        );
        record_time(cfg, "price", "vpp", started)?;
        if !spec.sweep.is_empty() {
            let mut w = csv_writer(&cfg.out_file("vpp_sweep.csv"))?;
            w.write_record(["t_on", "t_off", "value", "std_error", "naive", "upper_bound"])?;
            for &n in &spec.sweep {
                let started = Instant::now();
                let v = price_vpp(&spec.contract(n, n)?, &paths, 0, &paths, 1, cfg.rate, &lsmc)?;
                w.write_record([
                    n.to_string(),
                    n.to_string(),
                    v.lsmc.value.to_string(),
                    v.lsmc.std_error.to_string(),
                    v.naive.to_string(),
                    v.upper_bound.to_string(),
                ])?;
                record_time(cfg, "price", &format!("vpp_sweep_{n}"), started)?;
            }
            w.flush().map_err(|e| CliError::io(&cfg.out, e))?;
        }
    }

    if let Some(path) = &cfg.storage {
        let started = Instant::now();
        let spec: StorageSpec = contracts::load(path)?;
        let days = spec.end_day + 1;
        let paths = spot_paths(&model, &curves, &[&spec.market], days, cfg.seed, cfg)?;
        let fresh = spot_paths(&model, &curves, &[&spec.market], days, cfg.seed.wrapping_add(1), cfg)?;
        let v = price_storage(&spec.contract()?, &paths, 0, &fresh, 0, cfg.rate, &lsmc)?;
        let mut w = csv_writer(&cfg.out_file("storage.csv"))?;
        w.write_record(["approach", "value", "std_error"])?;
        w.write_record(["deterministic".to_string(), v.deterministic.to_string(), v.deterministic_std_error.to_string()])?;
        w.write_record(["sdp".to_string(), v.sdp.value.to_string(), v.sdp.std_error.to_string()])?;
        w.write_record([
            "sdp_out_of_sample".to_string(),
            v.out_of_sample.value.to_string(),
            v.out_of_sample.std_error.to_string(),
        ])?;
        w.flush().map_err(|e| CliError::io(&cfg.out, e))?;
        out.insert(
            "storage".into(),
            json!({
                "market": spec.market,
                "deterministic": v.deterministic,
                "deterministic_std_error": v.deterministic_std_error,
                "sdp": v.sdp.value,
                "sdp_std_error": v.sdp.std_error,
                "out_of_sample": v.out_of_sample.value,
                "out_of_sample_std_error": v.out_of_sample.std_error,
                "grid_levels": v.grid.levels.len(),
                "grid_min": v.grid.levels[0],
                "grid_max": v.grid.levels[v.grid.levels.len() - 1],
                "grid_truncated": v.grid.is_truncated(),
            }),
        );
        record_time(cfg, "price", "storage", started)?;
    }

    let value = serde_json::Value::Object(out);
    write_json(&cfg.out_file("valuation.json"), &value)?;
    Ok(value)
}

/// Runs every stage in order.
pub fn pipeline(cfg: &RunConfig) -> CliResult<()> {
    ingest(cfg)?;
    curve(cfg)?;
    calibrate(cfg)?;
    simulate(cfg)?;
    price(cfg)?;
    Ok(())
}
