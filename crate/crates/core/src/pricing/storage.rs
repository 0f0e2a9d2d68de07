//! Gas storage: daily inject / hold / withdraw on a discrete volume grid with
//! a terminal shortfall penalty.
//!
//! Cash flow of a day is `h = -S Δv` (`Δv > 0` injects). After the window the
//! holder pays `penalty_scale * S(T+1) * max(v_target - v, 0)`.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::lsmc::{evaluate_policy, lsmc_solve, perfect_foresight, ControlProblem, Decision, LsmcConfig, PolicyValuation};
use super::{discount, PriceMatrix, Window};
use crate::error::{Error, Result};
use crate::simulation::PathSet;

const GRID_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StorageContract {
    pub window: Window,
    pub v_min: f64,
    pub v_max: f64,
    #[serde(rename = "v_0")]
    pub v0: f64,
    pub v_target: f64,
    /// Largest daily withdrawal, negative.
    pub i_min: f64,
    /// Largest daily injection, positive.
    pub i_max: f64,
    #[serde(default = "default_penalty")]
    pub penalty_scale: f64,
}

fn default_penalty() -> f64 {
    2.0
}

/// Volume levels `v0 + k * step` inside `[v_min, v_max]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StorageGrid {
    pub levels: Vec<f64>,
    pub step: f64,
    pub initial: usize,
    pub target: usize,
    /// Levels moved per withdrawal / injection.
    pub withdraw_steps: usize,
    pub inject_steps: usize,
    /// Parts of `[v_min, v_max]` not representable on the grid.
    pub truncated_below: f64,
    pub truncated_above: f64,
}

impl StorageGrid {
    pub fn is_truncated(&self) -> bool {
        self.truncated_below > 0.0 || self.truncated_above > 0.0
    }

    /// Level indices reachable from the initial level after `days` decisions.
    pub fn reachable(&self, days: usize) -> BTreeSet<usize> {
        let mut set = BTreeSet::from([self.initial]);
        for _ in 0..days {
            let mut next = BTreeSet::new();
            for &l in &set {
                next.insert(l);
                if l >= self.withdraw_steps {
                    next.insert(l - self.withdraw_steps);
                }
                if l + self.inject_steps < self.levels.len() {
                    next.insert(l + self.inject_steps);
                }
            }
            if next == set {
                break;
            }
            set = next;
        }
        set
    }
}

fn integral_ratio(x: f64, step: f64) -> Option<i64> {
    let r = x / step;
    let k = r.round();
    ((r - k).abs() < GRID_TOL * r.abs().max(1.0)).then_some(k as i64)
}

fn infeasible(message: String) -> Error {
    Error::Infeasible {
        message,
        products: Vec::new(),
    }
}

pub fn storage_grid(c: &StorageContract) -> Result<StorageGrid> {
    if !(c.i_min < 0.0 && c.i_max > 0.0) {
        return Err(Error::InvalidInput("need i_min < 0 < i_max".into()));
    }
    if !(c.v_min <= c.v0 && c.v0 <= c.v_max) || !(c.v_min <= c.v_target && c.v_target <= c.v_max) {
        return Err(Error::InvalidInput("v_0 and v_target must lie in [v_min, v_max]".into()));
    }
    if !(c.penalty_scale >= 0.0) {
        return Err(Error::InvalidInput("penalty_scale must be >= 0".into()));
    }
    let step = c.i_max.min(-c.i_min);
    let (Some(up), Some(down)) = (integral_ratio(c.i_max, step), integral_ratio(-c.i_min, step)) else {
        return Err(Error::InvalidInput(format!(
            "injection {} and withdrawal {} rates must be multiples of {step}",
            c.i_max, c.i_min
        )));
    };
    let k_lo = ((c.v_min - c.v0) / step - GRID_TOL).ceil() as i64;
    let k_hi = ((c.v_max - c.v0) / step + GRID_TOL).floor() as i64;
    let levels: Vec<f64> = (k_lo..=k_hi).map(|k| c.v0 + k as f64 * step).collect();
    let target = integral_ratio(c.v_target - c.v0, step)
        .map(|k| (k - k_lo) as usize)
        .ok_or_else(|| infeasible(format!("v_target {} is not on the volume grid of step {step}", c.v_target)))?;
    let grid = StorageGrid {
        truncated_below: (levels[0] - c.v_min).max(0.0),
        truncated_above: (c.v_max - levels[levels.len() - 1]).max(0.0),
        levels,
        step,
        initial: (-k_lo) as usize,
        target,
        withdraw_steps: down as usize,
        inject_steps: up as usize,
    };
    if grid.is_truncated() {
        log::warn!(
            "storage grid covers [{}, {}] of [{}, {}]",
            grid.levels[0],
            grid.levels[grid.levels.len() - 1],
            c.v_min,
            c.v_max
        );
    }
    Ok(grid)
}

#[derive(Debug, Clone)]
pub struct StorageValuation {
    /// Policy fitted and valued on the pricing paths.
    pub sdp: PolicyValuation,
    /// Per-path perfect-foresight optimum, averaged.
    pub deterministic: f64,
    pub deterministic_std_error: f64,
    /// Fitted policy replayed on fresh paths.
    pub out_of_sample: PolicyValuation,
    pub grid: StorageGrid,
}

/// Daily prices in the window, the settlement price `S(T+1)` and the
/// discount factors of both.
pub struct StorageMarket {
    pub prices: PriceMatrix,
    pub settlement: Vec<f64>,
    pub discounts: Vec<f64>,
    pub settlement_discount: f64,
}

impl StorageMarket {
    /// `S(T+1)` is the first simulated date after the window; when the paths
    /// stop at the window end the last window price is used, one step later.
    pub fn from_paths(paths: &PathSet, product: usize, window: Window, rate: f64) -> Result<Self> {
        let prices = PriceMatrix::from_paths(paths, product, Some(window))?;
        let last = *prices.times.last().expect("window is non-empty");
        let after = paths.time_grid.iter().position(|&t| t > window.end + 1e-9);
        let (settlement, t_settle) = match after {
            Some(i) => (paths.cross_section(i, product), paths.time_grid[i]),
            None => {
                let step = if prices.times.len() > 1 {
                    last - prices.times[prices.times.len() - 2]
                } else {
                    paths.config.step
                };
                (prices.period(prices.n_periods() - 1).to_vec(), last + step)
            }
        };
        Ok(Self::new(prices, settlement, t_settle, rate))
    }

    pub fn new(prices: PriceMatrix, settlement: Vec<f64>, t_settle: f64, rate: f64) -> Self {
        let discounts = prices.times.iter().map(|&t| discount(rate, t)).collect();
        Self {
            prices,
            settlement,
            discounts,
            settlement_discount: discount(rate, t_settle),
        }
    }
}

pub struct StorageProblem<'a> {
    pub market: &'a StorageMarket,
    pub grid: &'a StorageGrid,
    pub contract: StorageContract,
}

impl ControlProblem for StorageProblem<'_> {
    fn n_periods(&self) -> usize {
        self.market.prices.n_periods()
    }

    fn n_states(&self) -> usize {
        self.grid.levels.len()
    }

    fn n_paths(&self) -> usize {
        self.market.prices.n_paths
    }

    fn initial_state(&self) -> usize {
        self.grid.initial
    }

    fn regressor(&self, period: usize, path: usize) -> f64 {
        self.market.prices.get(period, path)
    }

    fn decisions(&self, period: usize, state: usize, path: usize, out: &mut Vec<Decision>) {
        let g = self.grid;
        let s = self.market.prices.get(period, path) * self.market.discounts[period];
        let mut push = |next: usize| {
            let dv = g.levels[next] - g.levels[state];
            out.push(Decision { next, cash: -s * dv });
        };
        if state >= g.withdraw_steps {
            push(state - g.withdraw_steps);
        }
        push(state);
        if state + g.inject_steps < g.levels.len() {
            push(state + g.inject_steps);
        }
    }

    fn terminal(&self, state: usize, path: usize) -> f64 {
        let shortfall = (self.contract.v_target - self.grid.levels[state]).max(0.0);
        -self.contract.penalty_scale * self.market.settlement[path] * shortfall * self.market.settlement_discount
    }
}

/// Fits the policy on `paths`, compares it with perfect foresight and
/// replays it on `fresh`.
#[allow(clippy::too_many_arguments)]
pub fn price_storage(
    contract: &StorageContract,
    paths: &PathSet,
    product: usize,
    fresh: &PathSet,
    fresh_product: usize,
    rate: f64,
    cfg: &LsmcConfig,
) -> Result<StorageValuation> {
    if paths.time_grid != fresh.time_grid {
        return Err(Error::GridMismatch("pricing and out-of-sample paths use different grids".into()));
    }
    if paths.config.seed == fresh.config.seed {
        log::warn!("out-of-sample paths share the pricing seed {}", paths.config.seed);
    }
    let market = StorageMarket::from_paths(paths, product, contract.window, rate)?;
    let fresh_market = StorageMarket::from_paths(fresh, fresh_product, contract.window, rate)?;
    value_storage(contract, &market, &fresh_market, cfg)
}

/// Valuation on explicit in-sample and out-of-sample markets.
pub fn value_storage(
    contract: &StorageContract,
    market: &StorageMarket,
    fresh: &StorageMarket,
    cfg: &LsmcConfig,
) -> Result<StorageValuation> {
    let grid = storage_grid(contract)?;
    let days = market.prices.n_periods();
    if !grid.reachable(days).contains(&grid.target) {
        return Err(infeasible(format!(
            "v_target {} cannot be reached from v_0 {} in {days} days",
            contract.v_target, contract.v0
        )));
    }
    let problem = StorageProblem {
        market,
        grid: &grid,
        contract: *contract,
    };
    let sdp = lsmc_solve(&problem, cfg)?;
    let (deterministic, deterministic_std_error) = perfect_foresight(&problem)?;
    let out_of_sample = evaluate_policy(
        &StorageProblem {
            market: fresh,
            grid: &grid,
            contract: *contract,
        },
        &sdp.policy,
    )?;
    Ok(StorageValuation {
        sdp,
        deterministic,
        deterministic_std_error,
        out_of_sample,
        grid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn contract(v_max: f64, v0: f64, v_target: f64, rate: f64) -> StorageContract {
        StorageContract {
            window: Window { start: 0.0, end: 1.0 },
            v_min: 0.0,
            v_max,
            v0,
            v_target,
            i_min: -rate,
            i_max: rate,
            penalty_scale: 2.0,
        }
    }

    fn market(rows: &[Vec<f64>], settle: f64) -> StorageMarket {
        let n = rows[0].len();
        let times: Vec<f64> = (0..n).map(|t| t as f64).collect();
        StorageMarket::new(
            PriceMatrix::from_rows(times, rows).unwrap(),
            vec![settle; rows.len()],
            n as f64,
            0.0,
        )
    }

    #[test]
    fn paper_parameters_grid() {
        let mut c = contract(250_000.0, 100_000.0, 100_000.0, 8_000.0);
        c.i_min = -8_000.0;
        let g = storage_grid(&c).unwrap();
        assert_eq!(g.levels.len(), 31);
        assert_eq!(g.levels[0], 4_000.0);
        assert_eq!(g.levels[30], 244_000.0);
        assert_eq!(g.levels[g.initial], 100_000.0);
        assert_eq!(g.target, g.initial);
        assert_eq!(g.truncated_below, 4_000.0);
        assert_eq!(g.truncated_above, 6_000.0);
    }

    #[test]
    fn asymmetric_rates() {
        let mut c = contract(100.0, 20.0, 20.0, 10.0);
        c.i_min = -30.0;
        let g = storage_grid(&c).unwrap();
        assert_eq!((g.step, g.withdraw_steps, g.inject_steps), (10.0, 3, 1));
        c.i_min = -25.0;
        assert!(storage_grid(&c).is_err());
    }

    #[test]
    fn buy_low_sell_high() {
        // enumerate the 9 action pairs on prices (10, 20), empty store of size v
        let v = 5.0;
        let m = market(&[vec![10.0, 20.0]], 20.0);
        let c = contract(v, 0.0, 0.0, v);
        let val = value_storage(&c, &m, &m, &LsmcConfig::default()).unwrap();
        let mut best = f64::NEG_INFINITY;
        for a in [-1.0, 0.0, 1.0] {
            for b in [-1.0, 0.0, 1.0] {
                let (v1, v2) = (a * v, (a + b) * v);
                if (0.0..=v).contains(&v1) && (0.0..=v).contains(&v2) {
                    best = best.max(-10.0 * a * v - 20.0 * b * v);
                }
            }
        }
        assert_eq!(best, 50.0);
        assert!((val.sdp.value - best).abs() < 1e-12);
        assert!((val.deterministic - best).abs() < 1e-12);
    }

    #[test]
    fn constant_price_is_worthless() {
        let m = market(&[vec![30.0; 6], vec![30.0; 6]], 30.0);
        let c = contract(40.0, 20.0, 20.0, 10.0);
        let val = value_storage(&c, &m, &m, &LsmcConfig::default()).unwrap();
        assert!(val.sdp.value.abs() < 1e-9);
        assert!(val.deterministic.abs() < 1e-9);
        assert!(val.out_of_sample.value.abs() < 1e-9);
    }

    #[test]
    fn penalty_applies_to_shortfall() {
        // selling one unit at 100 and leaving the store short costs 2 * 60
        let m = market(&[vec![100.0]], 60.0);
        let c = contract(10.0, 10.0, 10.0, 10.0);
        let val = value_storage(&c, &m, &m, &LsmcConfig::default()).unwrap();
        assert_eq!(val.deterministic, 0.0);
        let mut cheap = c;
        cheap.penalty_scale = 1.0;
        let val = value_storage(&cheap, &m, &m, &LsmcConfig::default()).unwrap();
        assert!((val.deterministic - 400.0).abs() < 1e-12);
    }

    #[test]
    fn unreachable_target() {
        let m = market(&[vec![1.0, 2.0]], 1.0);
        let c = contract(100.0, 0.0, 50.0, 10.0);
        assert!(matches!(
            value_storage(&c, &m, &m, &LsmcConfig::default()),
            Err(Error::Infeasible { .. })
        ));
        let off = contract(100.0, 0.0, 15.0, 10.0);
        assert!(matches!(storage_grid(&off), Err(Error::Infeasible { .. })));
    }
}
