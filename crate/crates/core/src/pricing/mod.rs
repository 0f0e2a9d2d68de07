//! Closed-form and Monte Carlo valuation of energy contracts.

pub mod american;
pub mod black;
pub mod lsmc;
pub mod storage;
pub mod swing;
pub mod vpp;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simulation::PathSet;

pub use american::american_option;
pub use black::{black_price, mc_european, EuropeanOption};
pub use lsmc::{
    evaluate_policy, lsmc_continuation, lsmc_solve, perfect_foresight, ControlProblem, Decision, FittedPolicy,
    LsmcConfig, PolicyValuation,
};
pub use storage::{price_storage, storage_grid, StorageContract, StorageGrid, StorageValuation};
pub use swing::{price_swing, SwingContract, SwingValuation};
pub use vpp::{price_vpp, VppContract, VppValuation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptionKind {
    Call,
    Put,
}

impl OptionKind {
    pub fn payoff(self, s: f64, k: f64) -> f64 {
        match self {
            OptionKind::Call => (s - k).max(0.0),
            OptionKind::Put => (k - s).max(0.0),
        }
    }
}

/// Inclusive exercise window in years from `t0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub start: f64,
    pub end: f64,
}

/// Prices of one product on the recorded dates inside a window, stored
/// period-major: `data[t * n_paths + p]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceMatrix {
    pub times: Vec<f64>,
    pub n_paths: usize,
    data: Vec<f64>,
}

impl PriceMatrix {
    pub fn from_paths(paths: &PathSet, product: usize, window: Option<Window>) -> Result<Self> {
        if product >= paths.n_products() {
            return Err(Error::InvalidInput(format!("product index {product} out of range")));
        }
        let idx: Vec<usize> = match window {
            Some(w) => {
                if !(w.end >= w.start) {
                    return Err(Error::InvalidInput("window end precedes start".into()));
                }
                paths
                    .time_grid
                    .iter()
                    .enumerate()
                    .filter(|(_, &t)| t >= w.start - 1e-9 && t <= w.end + 1e-9)
                    .map(|(i, _)| i)
                    .collect()
            }
            None => (0..paths.n_times()).collect(),
        };
        if idx.is_empty() {
            return Err(Error::GridMismatch("no simulated date inside the contract window".into()));
        }
        let n_paths = paths.n_paths();
        let mut data = Vec::with_capacity(idx.len() * n_paths);
        for &t in &idx {
            data.extend((0..n_paths).map(|p| paths.value(p, t, product)));
        }
        Ok(Self {
            times: idx.iter().map(|&i| paths.time_grid[i]).collect(),
            n_paths,
            data,
        })
    }

    /// Builds a matrix from explicit per-path price rows `rows[path][period]`.
    pub fn from_rows(times: Vec<f64>, rows: &[Vec<f64>]) -> Result<Self> {
        let n_periods = times.len();
        if rows.is_empty() || rows.iter().any(|r| r.len() != n_periods) {
            return Err(Error::InvalidInput("price rows must match the time grid".into()));
        }
        let n_paths = rows.len();
        let mut data = vec![0.0; n_paths * n_periods];
        for (p, r) in rows.iter().enumerate() {
            for (t, v) in r.iter().enumerate() {
                data[t * n_paths + p] = *v;
            }
        }
        Ok(Self { times, n_paths, data })
    }

    pub fn n_periods(&self) -> usize {
        self.times.len()
    }

    pub fn get(&self, period: usize, path: usize) -> f64 {
        self.data[period * self.n_paths + path]
    }

    pub fn period(&self, period: usize) -> &[f64] {
        &self.data[period * self.n_paths..(period + 1) * self.n_paths]
    }
}

pub fn discount(rate: f64, t: f64) -> f64 {
    (-rate * t).exp()
}
