//! Swing options: up to `u_max` upswings and `d_max` downswings over a daily
//! window, at most one exercise per day.
//!
//! An upswing pays `Q (S - K)^+`, a downswing `Q (K - S)^+`. The value lies
//! between the American call plus the American put on the window and the
//! strip of daily European calls and puts.

use serde::{Deserialize, Serialize};

use super::american::AmericanProblem;
use super::lsmc::{lsmc_solve, mean_and_error, ControlProblem, Decision, LsmcConfig, PolicyValuation};
use super::{discount, OptionKind, PriceMatrix, Window};
use crate::error::{Error, Result};
use crate::simulation::PathSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwingContract {
    pub window: Window,
    pub u_max: usize,
    pub d_max: usize,
    #[serde(rename = "K")]
    pub strike: f64,
    #[serde(default = "unit_quantity", rename = "Q")]
    pub quantity: f64,
}

fn unit_quantity() -> f64 {
    1.0
}

#[derive(Debug, Clone)]
pub struct SwingValuation {
    pub value: PolicyValuation,
    /// American call plus American put on the window.
    pub lower_bound: f64,
    pub lower_bound_std_error: f64,
    /// Sum of daily European calls and puts.
    pub upper_bound: f64,
    pub upper_bound_std_error: f64,
}

impl SwingValuation {
    /// `lb <= value <= ub` up to `n_se` combined standard errors.
    pub fn bounds_hold(&self, n_se: f64) -> bool {
        let v = &self.value;
        let lo = (v.std_error.powi(2) + self.lower_bound_std_error.powi(2)).sqrt();
        let hi = (v.std_error.powi(2) + self.upper_bound_std_error.powi(2)).sqrt();
        self.lower_bound <= v.value + n_se * lo && v.value <= self.upper_bound + n_se * hi
    }
}

/// State `u * (d_max + 1) + d` holds `u` upswings and `d` downswings left.
pub struct SwingProblem<'a> {
    pub prices: &'a PriceMatrix,
    pub contract: SwingContract,
    pub rate: f64,
}

impl SwingProblem<'_> {
    fn state(&self, u: usize, d: usize) -> usize {
        u * (self.contract.d_max + 1) + d
    }
}

impl ControlProblem for SwingProblem<'_> {
    fn n_periods(&self) -> usize {
        self.prices.n_periods()
    }

    fn n_states(&self) -> usize {
        (self.contract.u_max + 1) * (self.contract.d_max + 1)
    }

    fn n_paths(&self) -> usize {
        self.prices.n_paths
    }

    fn initial_state(&self) -> usize {
        self.state(self.contract.u_max, self.contract.d_max)
    }

    fn regressor(&self, period: usize, path: usize) -> f64 {
        self.prices.get(period, path)
    }

    fn decisions(&self, period: usize, state: usize, path: usize, out: &mut Vec<Decision>) {
        let c = &self.contract;
        let (u, d) = (state / (c.d_max + 1), state % (c.d_max + 1));
        let s = self.prices.get(period, path);
        let df = discount(self.rate, self.prices.times[period]) * c.quantity;
        out.push(Decision { next: state, cash: 0.0 });
        if u > 0 {
            out.push(Decision {
                next: self.state(u - 1, d),
                cash: df * (s - c.strike).max(0.0),
            });
        }
        if d > 0 {
            out.push(Decision {
                next: self.state(u, d - 1),
                cash: df * (c.strike - s).max(0.0),
            });
        }
    }

    fn terminal(&self, _state: usize, _path: usize) -> f64 {
        0.0
    }
}

pub fn price_swing(
    contract: &SwingContract,
    paths: &PathSet,
    product: usize,
    rate: f64,
    cfg: &LsmcConfig,
) -> Result<SwingValuation> {
    if !(contract.strike > 0.0) || !(contract.quantity > 0.0) {
        return Err(Error::InvalidInput("swing strike and quantity must be > 0".into()));
    }
    let prices = PriceMatrix::from_paths(paths, product, Some(contract.window))?;
    let days = prices.n_periods();
    if contract.u_max > days || contract.d_max > days {
        return Err(Error::InvalidInput(format!(
            "u_max {} / d_max {} exceed the {days} exercise days",
            contract.u_max, contract.d_max
        )));
    }
    let value = lsmc_solve(
        &SwingProblem {
            prices: &prices,
            contract: *contract,
            rate,
        },
        cfg,
    )?;

    let american = |kind| {
        lsmc_solve(
            &AmericanProblem {
                prices: &prices,
                strike: contract.strike,
                rate,
                kind,
            },
            cfg,
        )
    };
    let call = american(OptionKind::Call)?;
    let put = american(OptionKind::Put)?;

    let strip: Vec<f64> = (0..prices.n_paths)
        .map(|p| {
            (0..days)
                .map(|t| discount(rate, prices.times[t]) * (prices.get(t, p) - contract.strike).abs())
                .sum::<f64>()
                * contract.quantity
        })
        .collect();
    let (upper_bound, upper_bound_std_error) = mean_and_error(&strip);

    Ok(SwingValuation {
        value,
        lower_bound: contract.quantity * (call.value + put.value),
        lower_bound_std_error: contract.quantity * (call.std_error.powi(2) + put.std_error.powi(2)).sqrt(),
        upper_bound,
        upper_bound_std_error,
    })
}
