//! Exact lognormal path generation for futures, swaps, forward curves and spot.
//!
//! Between two grid dates each log-price moves by a Gaussian increment whose
//! variance is the integral of the squared volatility over the step, and whose
//! drift `-1/2 * variance` keeps the price a martingale. Volatility depends on
//! time-to-delivery only, so a step is summarised by per-factor integrals
//! `int sigma_j^2` and `int sigma_j`; the effective loading of factor `j` over a
//! step of length `dt` is `sign(int sigma_j) * sqrt(int sigma_j^2 / dt)`.
//!
//! Normal draws come from one ChaCha8 stream per path (`set_stream(path)`),
//! consumed step by step and factor by factor, so results do not depend on
//! thread scheduling.

use std::fmt;
use std::io::Write;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{sample_correlation, FactorModel};
use crate::curve::StepwiseCurve;
use crate::error::{Error, Result};
use crate::marketdata::month_index;

/// Tolerance used when matching times on the simulation grid.
const TIME_TOL: f64 = 1e-9;

/// Volatility as a function of time-to-delivery `u`, per market and factor.
pub trait VolTermStructure: Sync {
    fn n_factors(&self) -> usize;

    fn market_index(&self, market: &str) -> Option<usize>;

    /// Writes `int_lo^hi sigma_j(u)^2 du` into `sq` and `int_lo^hi sigma_j(u) du`
    /// into `lin` for every factor `j`, with `0 <= lo <= hi`.
    fn integrals(&self, market: usize, lo: f64, hi: f64, sq: &mut [f64], lin: &mut [f64]);

    /// Constant loading row of a fixed-delivery product, if the structure has one.
    fn bucket_row(&self, _market: usize, _bucket: usize) -> Option<&[f64]> {
        None
    }

    /// Delivery date of the fixed-delivery product on `bucket`.
    fn bucket_expiry(&self, _bucket: usize) -> Option<f64> {
        None
    }
}

impl VolTermStructure for FactorModel {
    fn n_factors(&self) -> usize {
        self.n_factors
    }

    fn market_index(&self, market: &str) -> Option<usize> {
        FactorModel::market_index(self, market)
    }

    fn integrals(&self, market: usize, lo: f64, hi: f64, sq: &mut [f64], lin: &mut [f64]) {
        sq.fill(0.0);
        lin.fill(0.0);
        let l = self.bucket_length;
        let m = self.buckets_per_market;
        let first = ((lo / l).floor().max(0.0) as usize).min(m - 1);
        for h in first..m {
            let a = if h == first { lo } else { h as f64 * l };
            let b = if h == m - 1 { hi } else { hi.min((h + 1) as f64 * l) };
            let occ = b - a;
            if occ <= 0.0 {
                if h > first {
                    break;
                }
                continue;
            }
            for (j, s) in self.row(market, h).iter().enumerate() {
                sq[j] += s * s * occ;
                lin[j] += s * occ;
            }
        }
    }

    fn bucket_row(&self, market: usize, bucket: usize) -> Option<&[f64]> {
        (bucket < self.buckets_per_market).then(|| self.row(market, bucket))
    }

    fn bucket_expiry(&self, bucket: usize) -> Option<f64> {
        Some((bucket + 1) as f64 * self.bucket_length)
    }
}

/// One factor with `sigma(u) = amplitude * exp(-decay * u)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpTerm {
    pub amplitude: f64,
    pub decay: f64,
}

/// Parametric volatility with independent exponential factors, shared by
/// every market; used as an analytic test fixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentialVol {
    pub terms: Vec<ExpTerm>,
}

impl ExponentialVol {
    /// `gamma * exp(-2 k u)` plus an optional constant factor `c`.
    pub fn samuelson(gamma: f64, k: f64, c: Option<f64>) -> Self {
        let mut terms = vec![ExpTerm {
            amplitude: gamma,
            decay: 2.0 * k,
        }];
        if let Some(c) = c {
            terms.push(ExpTerm {
                amplitude: c,
                decay: 0.0,
            });
        }
        Self { terms }
    }
}

impl VolTermStructure for ExponentialVol {
    fn n_factors(&self) -> usize {
        self.terms.len()
    }

    fn market_index(&self, _market: &str) -> Option<usize> {
        Some(0)
    }

    fn integrals(&self, _market: usize, lo: f64, hi: f64, sq: &mut [f64], lin: &mut [f64]) {
        for (j, t) in self.terms.iter().enumerate() {
            let (a, c) = (t.amplitude, t.decay);
            if c == 0.0 {
                sq[j] = a * a * (hi - lo);
                lin[j] = a * (hi - lo);
            } else {
                sq[j] = a * a / (2.0 * c) * ((-2.0 * c * lo).exp() - (-2.0 * c * hi).exp());
                lin[j] = a / c * ((-c * lo).exp() - (-c * hi).exp());
            }
        }
    }
}

/// Closed-form `Var[ln F(t)]` for `sigma(T - s) = gamma exp(-2k (T - s))` plus a
/// constant factor `c`, started at `t0`.
pub fn samuelson_log_variance(gamma: f64, k: f64, c: f64, delivery: f64, t0: f64, t: f64) -> f64 {
    gamma * gamma / (4.0 * k) * ((-4.0 * k * (delivery - t)).exp() - (-4.0 * k * (delivery - t0)).exp())
        + c * c * (t - t0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub seed: u64,
    pub n_paths: usize,
    /// Grid spacing in years.
    pub step: f64,
    /// Simulation end in years from `t0`.
    pub horizon: f64,
    pub antithetic: bool,
    /// Keep every `record_stride`-th grid date (plus the last one).
    pub record_stride: usize,
}

impl SimConfig {
    pub fn new(seed: u64, n_paths: usize, step: f64, horizon: f64) -> Self {
        Self {
            seed,
            n_paths,
            step,
            horizon,
            antithetic: false,
            record_stride: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_paths == 0 {
            return Err(Error::InvalidInput("n_paths must be >= 1".into()));
        }
        if !(self.step > 0.0 && self.step.is_finite()) || !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::InvalidInput("step and horizon must be > 0".into()));
        }
        if self.record_stride == 0 {
            return Err(Error::InvalidInput("record_stride must be >= 1".into()));
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        ((self.horizon / self.step) - TIME_TOL).ceil().max(1.0) as usize
    }

    /// Grid dates `0 = t_0 < .. < t_n = horizon`.
    pub fn grid(&self) -> Vec<f64> {
        let n = self.n_steps();
        (0..=n)
            .map(|i| if i == n { self.horizon } else { i as f64 * self.step })
            .collect()
    }

    fn recorded(&self) -> Vec<usize> {
        let n = self.n_steps();
        (0..=n)
            .filter(|i| i % self.record_stride == 0 || *i == n)
            .collect()
    }

    fn rng_for(&self, path: usize) -> (ChaCha8Rng, f64) {
        let (stream, sign) = if self.antithetic {
            (path / 2, if path % 2 == 1 { -1.0 } else { 1.0 })
        } else {
            (path, 1.0)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream as u64);
        (rng, sign)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ContractKind {
    /// Rolling product on model row `bucket`, delivering at `(bucket + 1) L`.
    FixedDelivery { bucket: usize },
    /// Swap delivering over `[start, end]` (years from `t0`).
    Swap { start: f64, end: f64 },
    Spot,
}

impl fmt::Display for ContractKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ContractKind::FixedDelivery { bucket } => write!(f, "F{bucket}"),
            ContractKind::Swap { start, end } => write!(f, "swap[{start};{end}]"),
            ContractKind::Spot => write!(f, "spot"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductKey {
    pub market: String,
    pub kind: ContractKind,
}

impl fmt::Display for ProductKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.market, self.kind)
    }
}

/// Simulated prices, `path x recorded time x product`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSet {
    /// Recorded dates in years from `t0`, starting at 0.
    pub time_grid: Vec<f64>,
    pub product_keys: Vec<ProductKey>,
    /// Last date at which each product moves; later values stay frozen.
    pub expiries: Vec<f64>,
    pub config: SimConfig,
    values: Vec<f64>,
}

impl PathSet {
    pub fn n_paths(&self) -> usize {
        self.config.n_paths
    }

    pub fn n_times(&self) -> usize {
        self.time_grid.len()
    }

    pub fn n_products(&self) -> usize {
        self.product_keys.len()
    }

    pub fn value(&self, path: usize, time: usize, product: usize) -> f64 {
        self.values[(path * self.n_times() + time) * self.n_products() + product]
    }

    pub fn product_index(&self, key: &ProductKey) -> Option<usize> {
        self.product_keys.iter().position(|k| k == key)
    }

    /// Index of the recorded date equal to `t`.
    pub fn time_index(&self, t: f64) -> Option<usize> {
        self.time_grid.iter().position(|&s| (s - t).abs() <= TIME_TOL)
    }

    /// One product's path.
    pub fn series(&self, path: usize, product: usize) -> Vec<f64> {
        (0..self.n_times()).map(|t| self.value(path, t, product)).collect()
    }

    /// Cross-section over paths at one date.
    pub fn cross_section(&self, time: usize, product: usize) -> Vec<f64> {
        (0..self.n_paths()).map(|p| self.value(p, time, product)).collect()
    }

    /// Log-returns of all products between consecutive recorded dates,
    /// pooled over paths; returns after a product's expiry are missing.
    pub fn log_returns(&self) -> Result<crate::marketdata::LogReturnMatrix> {
        let nt = self.n_times();
        if nt < 2 {
            return Err(Error::InsufficientData { required: 2, actual: nt });
        }
        let dt = self.time_grid[1] - self.time_grid[0];
        let keys = self
            .product_keys
            .iter()
            .map(|k| crate::marketdata::ColumnKey::new(k.market.clone(), k.kind.to_string()))
            .collect();
        let mut rows = Vec::with_capacity(self.n_paths() * (nt - 1));
        for p in 0..self.n_paths() {
            for t in 1..nt {
                rows.push(
                    (0..self.n_products())
                        .map(|k| {
                            (self.time_grid[t] <= self.expiries[k] + TIME_TOL)
                                .then(|| (self.value(p, t, k) / self.value(p, t - 1, k)).ln())
                        })
                        .collect(),
                );
            }
        }
        crate::marketdata::LogReturnMatrix::new(keys, dt, None, &rows)
    }

    /// Writes `path_id,time,product_key,value`.
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["path_id", "time", "product_key", "value"])?;
        for p in 0..self.n_paths() {
            for (t, time) in self.time_grid.iter().enumerate() {
                for (k, key) in self.product_keys.iter().enumerate() {
                    w.write_record([
                        p.to_string(),
                        time.to_string(),
                        key.to_string(),
                        self.value(p, t, k).to_string(),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Per date and product: mean and 5% / 95% quantiles over paths.
    pub fn summary(&self) -> Vec<SummaryRow> {
        let mut out = Vec::new();
        for (t, &time) in self.time_grid.iter().enumerate() {
            for (k, key) in self.product_keys.iter().enumerate() {
                let mut xs = self.cross_section(t, k);
                let mean = xs.iter().sum::<f64>() / xs.len() as f64;
                xs.sort_by(f64::total_cmp);
                out.push(SummaryRow {
                    time,
                    product_key: key.to_string(),
                    mean,
                    q05: quantile_sorted(&xs, 0.05),
                    q95: quantile_sorted(&xs, 0.95),
                });
            }
        }
        out
    }

    pub fn write_summary_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["time", "product_key", "mean", "q05", "q95"])?;
        for r in self.summary() {
            w.write_record([
                r.time.to_string(),
                r.product_key,
                r.mean.to_string(),
                r.q05.to_string(),
                r.q95.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub time: f64,
    pub product_key: String,
    pub mean: f64,
    pub q05: f64,
    pub q95: f64,
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Per-step loadings of one product: `a[i][j] = sign(int sigma_j) sqrt(int sigma_j^2)`
/// for a unit normal draw, and the matching `1/2 * variance` drift.
struct ProductPlan {
    initial: f64,
    active_steps: usize,
    loads: Vec<f64>,
    half_var: Vec<f64>,
}

fn step_loads(sq: &[f64], lin: &[f64], out: &mut Vec<f64>) -> f64 {
    let mut var = 0.0;
    for (s, l) in sq.iter().zip(lin) {
        let s = s.max(0.0);
        var += s;
        out.push(if *l < 0.0 { -s.sqrt() } else { s.sqrt() });
    }
    0.5 * var
}

fn check_initial(price: f64, what: &dyn fmt::Display) -> Result<()> {
    if !(price > 0.0 && price.is_finite()) {
        return Err(Error::InvalidInput(format!("initial price {price} of {what} must be > 0")));
    }
    Ok(())
}

fn draw_normals(cfg: &SimConfig, path: usize, n: usize) -> Vec<f64> {
    let (mut rng, sign) = cfg.rng_for(path);
    (0..n)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            sign * z
        })
        .collect()
}

fn run_plans(plans: &[ProductPlan], n_factors: usize, cfg: &SimConfig) -> Vec<f64> {
    let n_steps = cfg.n_steps();
    let recorded = cfg.recorded();
    let n_prod = plans.len();
    let row_len = recorded.len() * n_prod;
    let mut values = vec![0.0; cfg.n_paths * row_len];
    values
        .par_chunks_mut(row_len.max(1))
        .enumerate()
        .for_each(|(path, out)| {
            let z = draw_normals(cfg, path, n_steps * n_factors);
            advance_path(plans, n_factors, &z, &recorded, out);
        });
    values
}

fn advance_path(plans: &[ProductPlan], n_factors: usize, z: &[f64], recorded: &[usize], out: &mut [f64]) {
    let n_prod = plans.len();
    for (k, plan) in plans.iter().enumerate() {
        let mut cum = 0.0;
        let mut next = 0;
        for (slot, &stop) in recorded.iter().enumerate() {
            while next < stop {
                if next < plan.active_steps {
                    let a = &plan.loads[next * n_factors..(next + 1) * n_factors];
                    let zs = &z[next * n_factors..(next + 1) * n_factors];
                    let shock: f64 = a.iter().zip(zs).map(|(a, z)| a * z).sum();
                    cum += shock - plan.half_var[next];
                }
                next += 1;
            }
            out[slot * n_prod + k] = plan.initial * cum.exp();
        }
    }
}

fn assemble(plans: &[ProductPlan], keys: Vec<ProductKey>, expiries: Vec<f64>, n_factors: usize, cfg: &SimConfig) -> PathSet {
    let grid = cfg.grid();
    let time_grid = cfg.recorded().iter().map(|&i| grid[i]).collect();
    PathSet {
        time_grid,
        product_keys: keys,
        expiries,
        config: cfg.clone(),
        values: run_plans(plans, n_factors, cfg),
    }
}

/// Initial prices of one market's fixed-delivery products, by model row.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedDeliverySpec {
    pub market: String,
    pub initial: Vec<f64>,
}

/// Rolling fixed-delivery products: row `d` of a market keeps its constant
/// loading until its delivery `(d + 1) L` (or the horizon).
pub fn simulate_fixed_delivery(model: &FactorModel, specs: &[FixedDeliverySpec], cfg: &SimConfig) -> Result<PathSet> {
    cfg.validate()?;
    let grid = cfg.grid();
    let n = model.n_factors;
    let mut plans = Vec::new();
    let mut keys = Vec::new();
    let mut expiries = Vec::new();
    for spec in specs {
        let k = model
            .market_index(&spec.market)
            .ok_or_else(|| Error::GridMismatch(format!("market {} not in model", spec.market)))?;
        if spec.initial.len() > model.buckets_per_market {
            return Err(Error::GridMismatch(format!(
                "{} initial prices for {} model buckets",
                spec.initial.len(),
                model.buckets_per_market
            )));
        }
        for (d, &f0) in spec.initial.iter().enumerate() {
            let key = ProductKey {
                market: spec.market.clone(),
                kind: ContractKind::FixedDelivery { bucket: d },
            };
            check_initial(f0, &key)?;
            let expiry = (d + 1) as f64 * model.bucket_length;
            let row = model.row(k, d);
            let mut loads = Vec::new();
            let mut half_var = Vec::new();
            let mut active = 0;
            for w in grid.windows(2) {
                let eff = w[1].min(expiry) - w[0];
                if eff <= 0.0 {
                    break;
                }
                let sq: Vec<f64> = row.iter().map(|s| s * s * eff).collect();
                half_var.push(step_loads(&sq, row, &mut loads));
                active += 1;
            }
            plans.push(ProductPlan {
                initial: f0,
                active_steps: active,
                loads,
                half_var,
            });
            keys.push(key);
            expiries.push(expiry.min(cfg.horizon));
        }
    }
    Ok(assemble(&plans, keys, expiries, n, cfg))
}

/// A swap to simulate: delivery `[start, end]` in years from `t0`.
#[derive(Debug, Clone, PartialEq)]
pub struct SwapSpec {
    pub market: String,
    pub start: f64,
    pub end: f64,
    pub initial: f64,
}

/// Swaps driven by the volatility of their time-to-delivery `start - t`;
/// each path stops at the start of delivery or the horizon.
pub fn simulate_swap(vol: &dyn VolTermStructure, swaps: &[SwapSpec], cfg: &SimConfig) -> Result<PathSet> {
    cfg.validate()?;
    let grid = cfg.grid();
    let n = vol.n_factors();
    let mut sq = vec![0.0; n];
    let mut lin = vec![0.0; n];
    let mut plans = Vec::new();
    let mut keys = Vec::new();
    let mut expiries = Vec::new();
    for s in swaps {
        let key = ProductKey {
            market: s.market.clone(),
            kind: ContractKind::Swap {
                start: s.start,
                end: s.end,
            },
        };
        if !(s.start > 0.0) {
            return Err(Error::InvalidInput(format!("{key}: contract in delivery")));
        }
        if !(s.end > s.start) {
            return Err(Error::InvalidInput(format!("{key}: delivery end must follow start")));
        }
        check_initial(s.initial, &key)?;
        let m = vol
            .market_index(&s.market)
            .ok_or_else(|| Error::GridMismatch(format!("market {} not in model", s.market)))?;
        let mut loads = Vec::new();
        let mut half_var = Vec::new();
        let mut active = 0;
        for w in grid.windows(2) {
            let hi_t = w[1].min(s.start);
            if hi_t <= w[0] {
                break;
            }
            vol.integrals(m, s.start - hi_t, s.start - w[0], &mut sq, &mut lin);
            half_var.push(step_loads(&sq, &lin, &mut loads));
            active += 1;
        }
        plans.push(ProductPlan {
            initial: s.initial,
            active_steps: active,
            loads,
            half_var,
        });
        keys.push(key);
        expiries.push(s.start.min(cfg.horizon));
    }
    Ok(assemble(&plans, keys, expiries, n, cfg))
}

/// Shocks whole forward curves over a short horizon of `n_days` steps with
/// frozen loadings: month `h` after the trading month uses row `h`.
pub fn simulate_short_horizon(model: &FactorModel, curves: &[StepwiseCurve], n_days: usize, cfg: &SimConfig) -> Result<PathSet> {
    if n_days == 0 {
        return Err(Error::InvalidInput("n_days must be >= 1".into()));
    }
    let cfg = SimConfig {
        horizon: n_days as f64 * cfg.step,
        ..cfg.clone()
    };
    cfg.validate()?;
    let grid = cfg.grid();
    let mut plans = Vec::new();
    let mut keys = Vec::new();
    let mut expiries = Vec::new();
    for curve in curves {
        let k = model
            .market_index(&curve.market)
            .ok_or_else(|| Error::GridMismatch(format!("market {} not in model", curve.market)))?;
        let m0 = month_index(curve.as_of);
        for b in &curve.buckets {
            let h = b.month() - m0;
            if h < 0 {
                continue;
            }
            let row = model.row(k, h as usize);
            let mut loads = Vec::new();
            let mut half_var = Vec::new();
            for w in grid.windows(2) {
                let eff = w[1] - w[0];
                let sq: Vec<f64> = row.iter().map(|s| s * s * eff).collect();
                half_var.push(step_loads(&sq, row, &mut loads));
            }
            plans.push(ProductPlan {
                initial: b.value,
                active_steps: grid.len() - 1,
                loads,
                half_var,
            });
            keys.push(ProductKey {
                market: curve.market.clone(),
                kind: ContractKind::FixedDelivery { bucket: h as usize },
            });
            expiries.push(cfg.horizon);
        }
    }
    Ok(assemble(&plans, keys, expiries, model.n_factors, &cfg))
}

/// Forward curve `F(t0, t_n)` of one market on every grid date `t_0..t_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpotSpec {
    pub market: String,
    pub forward: Vec<Option<f64>>,
}

/// Lags sharing one loading vector.
struct LagRun {
    lo: usize,
    hi: usize,
    loads: Vec<f64>,
}

struct SpotPlan {
    forward: Vec<f64>,
    runs: Vec<LagRun>,
    /// `1/2 * Var[ln S(t_n)]` for every grid index `n`.
    half_var: Vec<f64>,
}

/// Spot prices `S(t_n) = F(t0, t_n) exp(X_n - Var_n / 2)` where the shock of
/// step `m` enters `X_n` with the loading of lag `t_n - s`, `s` in step `m`.
///
/// Requires a uniform grid (`horizon` a multiple of `step`).
pub fn simulate_spot(vol: &dyn VolTermStructure, spots: &[SpotSpec], cfg: &SimConfig) -> Result<PathSet> {
    cfg.validate()?;
    let n_steps = cfg.n_steps();
    if (n_steps as f64 * cfg.step - cfg.horizon).abs() > TIME_TOL * cfg.horizon.max(1.0) {
        return Err(Error::InvalidInput("spot simulation needs horizon to be a multiple of step".into()));
    }
    let nf = vol.n_factors();
    let dt = cfg.step;
    let mut sq = vec![0.0; nf];
    let mut lin = vec![0.0; nf];
    let mut plans = Vec::new();
    let mut keys = Vec::new();
    for spec in spots {
        if spec.forward.len() != n_steps + 1 {
            return Err(Error::GridMismatch(format!(
                "{} forward values for {} grid dates",
                spec.forward.len(),
                n_steps + 1
            )));
        }
        let missing: Vec<usize> = spec
            .forward
            .iter()
            .enumerate()
            .filter(|(_, f)| !matches!(f, Some(v) if *v > 0.0 && v.is_finite()))
            .map(|(i, _)| i)
            .collect();
        if !missing.is_empty() {
            return Err(Error::CurveGap(missing));
        }
        let m = vol
            .market_index(&spec.market)
            .ok_or_else(|| Error::GridMismatch(format!("market {} not in model", spec.market)))?;

        let mut runs: Vec<LagRun> = Vec::new();
        let mut half_var = vec![0.0; n_steps + 1];
        for lag in 0..n_steps {
            vol.integrals(m, lag as f64 * dt, (lag + 1) as f64 * dt, &mut sq, &mut lin);
            let mut loads = Vec::with_capacity(nf);
            let hv = step_loads(&sq, &lin, &mut loads);
            half_var[lag + 1] = half_var[lag] + hv;
            match runs.last_mut() {
                Some(r) if r.loads == loads => r.hi = lag + 1,
                _ => runs.push(LagRun {
                    lo: lag,
                    hi: lag + 1,
                    loads,
                }),
            }
        }
        plans.push(SpotPlan {
            forward: spec.forward.iter().map(|f| f.expect("checked above")).collect(),
            runs,
            half_var,
        });
        keys.push(ProductKey {
            market: spec.market.clone(),
            kind: ContractKind::Spot,
        });
    }

    let recorded = cfg.recorded();
    let n_prod = plans.len();
    let row_len = recorded.len() * n_prod;
    let mut values = vec![0.0; cfg.n_paths * row_len];
    values
        .par_chunks_mut(row_len.max(1))
        .enumerate()
        .for_each(|(path, out)| {
            let z = draw_normals(cfg, path, n_steps * nf);
            // prefix[m * nf + j] = sum of draws of factor j over steps < m
            let mut prefix = vec![0.0; (n_steps + 1) * nf];
            for m in 0..n_steps {
                for j in 0..nf {
                    prefix[(m + 1) * nf + j] = prefix[m * nf + j] + z[m * nf + j];
                }
            }
            for (k, plan) in plans.iter().enumerate() {
                for (slot, &n) in recorded.iter().enumerate() {
                    let mut x = 0.0;
                    for r in plan.runs.iter().take_while(|r| r.lo < n) {
                        let a = n - r.lo;
                        let b = n.saturating_sub(r.hi);
                        for (j, l) in r.loads.iter().enumerate() {
                            x += l * (prefix[a * nf + j] - prefix[b * nf + j]);
                        }
                    }
                    out[slot * n_prod + k] = plan.forward[n] * (x - plan.half_var[n]).exp();
                }
            }
        });

    let grid = cfg.grid();
    Ok(PathSet {
        time_grid: recorded.iter().map(|&i| grid[i]).collect(),
        expiries: vec![cfg.horizon; keys.len()],
        product_keys: keys,
        config: cfg.clone(),
        values,
    })
}

/// Model `Var[ln F(t)]` of a product simulated from `t0 = 0`.
pub fn theoretical_log_variance(vol: &dyn VolTermStructure, key: &ProductKey, t: f64) -> Result<f64> {
    let m = vol
        .market_index(&key.market)
        .ok_or_else(|| Error::GridMismatch(format!("market {} not in model", key.market)))?;
    let n = vol.n_factors();
    let mut sq = vec![0.0; n];
    let mut lin = vec![0.0; n];
    let t = t.max(0.0);
    match key.kind {
        ContractKind::FixedDelivery { bucket } => {
            let row = vol
                .bucket_row(m, bucket)
                .ok_or_else(|| Error::GridMismatch(format!("no fixed-delivery row {bucket}")))?;
            let expiry = vol.bucket_expiry(bucket).unwrap_or(f64::INFINITY);
            Ok(row.iter().map(|s| s * s).sum::<f64>() * t.min(expiry))
        }
        ContractKind::Swap { start, .. } => {
            let t = t.min(start);
            vol.integrals(m, start - t, start, &mut sq, &mut lin);
            Ok(sq.iter().sum())
        }
        ContractKind::Spot => {
            vol.integrals(m, 0.0, t, &mut sq, &mut lin);
            Ok(sq.iter().sum())
        }
    }
}

/// Instantaneous model volatility `sqrt(sum_j sigma_j^2)` of a swap at time `t`.
pub fn swap_instantaneous_vol(vol: &dyn VolTermStructure, market: usize, start: f64, t: f64) -> f64 {
    let n = vol.n_factors();
    let mut sq = vec![0.0; n];
    let mut lin = vec![0.0; n];
    let u = (start - t).max(0.0);
    let hi = u + 1e-9;
    vol.integrals(market, u, hi, &mut sq, &mut lin);
    (sq.iter().sum::<f64>() / (hi - u)).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SanityRow {
    pub product_key: String,
    pub time: f64,
    pub empirical: f64,
    pub theoretical: f64,
    /// `|empirical - theoretical| / theoretical` (0 when both vanish).
    pub rel_error: f64,
    /// Monte Carlo standard error of the empirical variance.
    pub std_error: f64,
}

impl SanityRow {
    /// Number of standard errors between estimate and model.
    pub fn z_score(&self) -> f64 {
        let d = (self.empirical - self.theoretical).abs();
        if d == 0.0 {
            0.0
        } else if self.std_error > 0.0 {
            d / self.std_error
        } else {
            f64::INFINITY
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationCheck {
    pub empirical: DMatrix<f64>,
    pub implied: DMatrix<f64>,
    pub max_abs_diff: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SanityReport {
    pub rows: Vec<SanityRow>,
    /// Present when every product has a constant loading row.
    pub correlation: Option<CorrelationCheck>,
}

impl SanityReport {
    pub fn max_rel_error(&self) -> f64 {
        self.rows.iter().map(|r| r.rel_error).fold(0.0, f64::max)
    }

    pub fn max_z_score(&self) -> f64 {
        self.rows.iter().map(SanityRow::z_score).fold(0.0, f64::max)
    }
}

/// Sample variance of the data and the standard error of that estimate.
pub fn variance_with_error(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let (mut m2, mut m4) = (0.0, 0.0);
    for x in xs {
        let d2 = (x - mean) * (x - mean);
        m2 += d2;
        m4 += d2 * d2;
    }
    let var = m2 / (n - 1.0);
    let m4 = m4 / n;
    let pop = m2 / n;
    (var, ((m4 - pop * pop).max(0.0) / n).sqrt())
}

/// Compares simulated log-price variances with the model at every recorded
/// date, and pooled return correlations with the model-implied ones.
pub fn sanity_check(paths: &PathSet, vol: &dyn VolTermStructure) -> Result<SanityReport> {
    let mut rows = Vec::new();
    for (k, key) in paths.product_keys.iter().enumerate() {
        let x0: Vec<f64> = paths.cross_section(0, k);
        for (t, &time) in paths.time_grid.iter().enumerate().skip(1) {
            let logs: Vec<f64> = paths
                .cross_section(t, k)
                .iter()
                .zip(&x0)
                .map(|(x, a)| (x / a).ln())
                .collect();
            let (empirical, std_error) = if logs.len() > 1 {
                variance_with_error(&logs)
            } else {
                (0.0, 0.0)
            };
            let theoretical = theoretical_log_variance(vol, key, time)?;
            let rel_error = if theoretical > 0.0 {
                (empirical - theoretical).abs() / theoretical
            } else if empirical == 0.0 {
                0.0
            } else {
                f64::INFINITY
            };
            rows.push(SanityRow {
                product_key: key.to_string(),
                time,
                empirical,
                theoretical,
                rel_error,
                std_error,
            });
        }
    }

    let model_rows: Option<Vec<&[f64]>> = paths
        .product_keys
        .iter()
        .map(|key| match key.kind {
            ContractKind::FixedDelivery { bucket } => {
                vol.market_index(&key.market).and_then(|m| vol.bucket_row(m, bucket))
            }
            _ => None,
        })
        .collect();
    let correlation = match model_rows {
        Some(r) if paths.n_times() > 1 && !r.is_empty() => {
            let x = paths.log_returns()?;
            let p = r.len();
            let cols: Vec<Vec<f64>> = (0..p).map(|j| x.column(j).into_iter().map(|v| v.unwrap_or(f64::NAN)).collect()).collect();
            let empirical = DMatrix::from_fn(p, p, |i, j| {
                if i == j {
                    return 1.0;
                }
                let (a, b): (Vec<f64>, Vec<f64>) = cols[i]
                    .iter()
                    .zip(&cols[j])
                    .filter(|(a, b)| !a.is_nan() && !b.is_nan())
                    .map(|(a, b)| (*a, *b))
                    .unzip();
                sample_correlation(&a, &b).unwrap_or(f64::NAN)
            });
            let implied = DMatrix::from_fn(p, p, |i, j| {
                let dot: f64 = r[i].iter().zip(r[j]).map(|(a, b)| a * b).sum();
                let ni: f64 = r[i].iter().map(|a| a * a).sum::<f64>().sqrt();
                let nj: f64 = r[j].iter().map(|a| a * a).sum::<f64>().sqrt();
                if i == j {
                    1.0
                } else if ni > 0.0 && nj > 0.0 {
                    dot / (ni * nj)
                } else {
                    f64::NAN
                }
            });
            let max_abs_diff = (&empirical - &implied)
                .iter()
                .filter(|v| !v.is_nan())
                .fold(0.0f64, |m, v| m.max(v.abs()));
            Some(CorrelationCheck {
                empirical,
                implied,
                max_abs_diff,
            })
        }
        _ => None,
    };
    Ok(SanityReport { rows, correlation })
}
