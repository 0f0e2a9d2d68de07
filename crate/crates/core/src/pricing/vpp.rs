//! Virtual power plant (gas-fired unit) with minimum up/down times.
//!
//! Every hour the plant is on or off. Switching on costs `S_u` and commits the
//! unit for at least `t_on` hours; switching off costs `S_d` and keeps it off
//! for at least `t_off` hours. While on it produces `q_max` when the spark
//! spread `S_E - H S_F` is positive and `q_min` otherwise.

use serde::{Deserialize, Serialize};

use super::lsmc::{lsmc_solve, mean_and_error, perfect_foresight, ControlProblem, Decision, LsmcConfig, PolicyValuation};
use super::{discount, PriceMatrix, Window};
use crate::error::{Error, Result};
use crate::simulation::PathSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VppContract {
    pub window: Window,
    pub t_on: usize,
    pub t_off: usize,
    pub q_min: f64,
    pub q_max: f64,
    #[serde(rename = "S_u")]
    pub s_u: f64,
    #[serde(rename = "S_d")]
    pub s_d: f64,
    #[serde(rename = "H")]
    pub heat_rate: f64,
    /// Hourly periods per simulated date (24 for daily paths).
    #[serde(default = "hours_per_day")]
    pub hours_per_step: usize,
}

fn hours_per_day() -> usize {
    24
}

impl VppContract {
    fn validate(&self) -> Result<()> {
        if !(self.q_min >= 0.0 && self.q_min <= self.q_max) {
            return Err(Error::InvalidInput("need 0 <= q_min <= q_max".into()));
        }
        if self.t_on == 0 || self.t_off == 0 || self.hours_per_step == 0 {
            return Err(Error::InvalidInput("t_on, t_off and hours_per_step must be >= 1".into()));
        }
        if !(self.s_u >= 0.0 && self.s_d >= 0.0) || !(self.heat_rate >= 0.0) {
            return Err(Error::InvalidInput("start-up/shut-down costs and heat rate must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct VppValuation {
    pub lsmc: PolicyValuation,
    /// Per-path perfect-foresight optimum, averaged.
    pub naive: f64,
    pub naive_std_error: f64,
    /// Strip of hourly spark-spread calls times `q_max`.
    pub upper_bound: f64,
    pub upper_bound_std_error: f64,
}

/// Hourly spark spreads and their discount factors.
pub struct SpreadMatrix {
    pub spreads: PriceMatrix,
    pub discounts: Vec<f64>,
}

impl SpreadMatrix {
    pub fn new(power: &PriceMatrix, fuel: &PriceMatrix, heat_rate: f64, hours_per_step: usize, rate: f64) -> Result<Self> {
        if power.times != fuel.times || power.n_paths != fuel.n_paths {
            return Err(Error::GridMismatch("power and fuel paths differ in dates or path count".into()));
        }
        let step = if power.times.len() > 1 {
            power.times[1] - power.times[0]
        } else {
            0.0
        };
        let mut times = Vec::with_capacity(power.n_periods() * hours_per_step);
        for &t in &power.times {
            for h in 0..hours_per_step {
                times.push(t + step * h as f64 / hours_per_step as f64);
            }
        }
        let rows: Vec<Vec<f64>> = (0..power.n_paths)
            .map(|p| {
                (0..power.n_periods())
                    .flat_map(|t| {
                        let s = power.get(t, p) - heat_rate * fuel.get(t, p);
                        std::iter::repeat_n(s, hours_per_step)
                    })
                    .collect()
            })
            .collect();
        let discounts = times.iter().map(|&t| discount(rate, t)).collect();
        Ok(Self {
            spreads: PriceMatrix::from_rows(times, &rows)?,
            discounts,
        })
    }
}

/// States `0..t_on` are "on with `l` committed hours left", states
/// `t_on..t_on + t_off` are "off with `l` blocked hours left".
pub struct VppProblem<'a> {
    pub spreads: &'a SpreadMatrix,
    pub contract: VppContract,
}

impl VppProblem<'_> {
    fn on(&self, lock: usize) -> usize {
        lock
    }

    fn off(&self, lock: usize) -> usize {
        self.contract.t_on + lock
    }

    fn generation(&self, period: usize, path: usize) -> f64 {
        let s = self.spreads.spreads.get(period, path);
        let q = if s > 0.0 { self.contract.q_max } else { self.contract.q_min };
        self.spreads.discounts[period] * q * s
    }
}

impl ControlProblem for VppProblem<'_> {
    fn n_periods(&self) -> usize {
        self.spreads.spreads.n_periods()
    }

    fn n_states(&self) -> usize {
        self.contract.t_on + self.contract.t_off
    }

    fn n_paths(&self) -> usize {
        self.spreads.spreads.n_paths
    }

    fn initial_state(&self) -> usize {
        self.off(0)
    }

    fn regressor(&self, period: usize, path: usize) -> f64 {
        self.spreads.spreads.get(period, path)
    }

    fn decisions(&self, period: usize, state: usize, path: usize, out: &mut Vec<Decision>) {
        let c = &self.contract;
        let df = self.spreads.discounts[period];
        if state < c.t_on {
            let lock = state;
            let run = self.generation(period, path);
            out.push(Decision {
                next: self.on(lock.saturating_sub(1)),
                cash: run,
            });
            if lock == 0 {
                out.push(Decision {
                    next: self.off(c.t_off - 1),
                    cash: -df * c.s_d,
                });
            }
        } else {
            let lock = state - c.t_on;
            out.push(Decision {
                next: self.off(lock.saturating_sub(1)),
                cash: 0.0,
            });
            if lock == 0 {
                out.push(Decision {
                    next: self.on(c.t_on - 1),
                    cash: self.generation(period, path) - df * c.s_u,
                });
            }
        }
    }

    fn terminal(&self, _state: usize, _path: usize) -> f64 {
        0.0
    }
}

/// Values the plant on jointly simulated power and fuel prices.
#[allow(clippy::too_many_arguments)]
pub fn price_vpp(
    contract: &VppContract,
    power: &PathSet,
    power_product: usize,
    fuel: &PathSet,
    fuel_product: usize,
    rate: f64,
    cfg: &LsmcConfig,
) -> Result<VppValuation> {
    contract.validate()?;
    if power.time_grid != fuel.time_grid || power.n_paths() != fuel.n_paths() {
        return Err(Error::GridMismatch("power and fuel path sets differ in grid or size".into()));
    }
    let pe = PriceMatrix::from_paths(power, power_product, Some(contract.window))?;
    let pf = PriceMatrix::from_paths(fuel, fuel_product, Some(contract.window))?;
    let spreads = SpreadMatrix::new(&pe, &pf, contract.heat_rate, contract.hours_per_step, rate)?;
    value_spreads(contract, &spreads, cfg)
}

/// Valuation on precomputed hourly spreads.
pub fn value_spreads(contract: &VppContract, spreads: &SpreadMatrix, cfg: &LsmcConfig) -> Result<VppValuation> {
    contract.validate()?;
    let problem = VppProblem {
        spreads,
        contract: *contract,
    };
    let lsmc = lsmc_solve(&problem, cfg)?;
    let (naive, naive_std_error) = perfect_foresight(&problem)?;
    let m = &spreads.spreads;
    let strip: Vec<f64> = (0..m.n_paths)
        .map(|p| {
            (0..m.n_periods())
                .map(|t| spreads.discounts[t] * contract.q_max * m.get(t, p).max(0.0))
                .sum()
        })
        .collect();
    let (upper_bound, upper_bound_std_error) = mean_and_error(&strip);
    Ok(VppValuation {
        lsmc,
        naive,
        naive_std_error,
        upper_bound,
        upper_bound_std_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn contract(t_on: usize, t_off: usize) -> VppContract {
        VppContract {
            window: Window { start: 0.0, end: 1.0 },
            t_on,
            t_off,
            q_min: 0.0,
            q_max: 2.0,
            s_u: 0.0,
            s_d: 0.0,
            heat_rate: 1.0,
            hours_per_step: 1,
        }
    }

    fn spreads(rows: &[Vec<f64>]) -> SpreadMatrix {
        let times: Vec<f64> = (0..rows[0].len()).map(|t| t as f64 * 0.01).collect();
        let power = PriceMatrix::from_rows(times.clone(), rows).unwrap();
        let fuel = PriceMatrix::from_rows(times, &vec![vec![0.0; rows[0].len()]; rows.len()]).unwrap();
        SpreadMatrix::new(&power, &fuel, 1.0, 1, 0.0).unwrap()
    }

    #[test]
    fn unconstrained_plant_is_the_strip() {
        let s = spreads(&[vec![1.0, -2.0, 3.0, 0.5], vec![-1.0, 4.0, -0.5, 2.0]]);
        let v = value_spreads(&contract(1, 1), &s, &LsmcConfig::default()).unwrap();
        assert!((v.lsmc.value - v.upper_bound).abs() < 1e-12);
        assert!((v.upper_bound - 2.0 * (4.5 + 6.0) / 2.0).abs() < 1e-12);
        assert!((v.naive - v.upper_bound).abs() < 1e-12);
    }

    #[test]
    fn must_run_hours_cost_money() {
        // one path, spreads (5, -10, -10): with t_on = 3 starting costs 15
        let s = spreads(&[vec![5.0, -10.0, -10.0]]);
        let mut c = contract(3, 1);
        c.q_min = 1.0;
        c.q_max = 1.0;
        let v = value_spreads(&c, &s, &LsmcConfig::default()).unwrap();
        assert_eq!(v.naive, 0.0);
        assert_eq!(v.lsmc.value, 0.0);
        let v1 = value_spreads(&contract(1, 1), &s, &LsmcConfig::default()).unwrap();
        assert_eq!(v1.naive, 10.0);
    }

    #[test]
    fn hourly_expansion() {
        let times = vec![0.0, 1.0];
        let power = PriceMatrix::from_rows(times.clone(), &[vec![30.0, 40.0]]).unwrap();
        let fuel = PriceMatrix::from_rows(times, &[vec![10.0, 20.0]]).unwrap();
        let s = SpreadMatrix::new(&power, &fuel, 2.0, 24, 0.1).unwrap();
        assert_eq!(s.spreads.n_periods(), 48);
        assert_eq!(s.spreads.get(23, 0), 10.0);
        assert_eq!(s.spreads.get(24, 0), 0.0);
        assert!((s.spreads.times[12] - 0.5).abs() < 1e-15);
        assert!((s.discounts[24] - (-0.1f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn invalid_contracts() {
        let s = spreads(&[vec![1.0]]);
        let mut c = contract(0, 1);
        assert!(value_spreads(&c, &s, &LsmcConfig::default()).is_err());
        c = contract(1, 1);
        c.q_min = 3.0;
        assert!(value_spreads(&c, &s, &LsmcConfig::default()).is_err());
    }
}
