//! Black's formula for options on futures and its Monte Carlo counterpart.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::lsmc::mean_and_error;
use super::{discount, OptionKind};
use crate::error::{Error, Result};
use crate::simulation::{ContractKind, PathSet};

/// European option on a futures/swap price, exercised at `maturity`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EuropeanOption {
    pub strike: f64,
    /// Years from `t0`.
    pub maturity: f64,
    pub rate: f64,
    pub kind: OptionKind,
}

impl EuropeanOption {
    fn validate(&self) -> Result<()> {
        if !(self.strike > 0.0) {
            return Err(Error::InvalidInput(format!("strike {} must be > 0", self.strike)));
        }
        if !(self.maturity >= 0.0) {
            return Err(Error::InvalidInput("maturity must be >= 0".into()));
        }
        Ok(())
    }
}

/// `C = e^{-r T0} (F0 N(d1) - K N(d2))` with `d1 = (ln(F0/K) + Var/2) / sqrt(Var)`;
/// puts by parity. Zero variance gives the discounted intrinsic value.
pub fn black_price(f0: f64, opt: &EuropeanOption, total_log_variance: f64) -> Result<f64> {
    opt.validate()?;
    if !(f0 > 0.0) {
        return Err(Error::InvalidInput(format!("forward {f0} must be > 0")));
    }
    if !(total_log_variance >= 0.0) {
        return Err(Error::InvalidInput("total log-variance must be >= 0".into()));
    }
    let df = discount(opt.rate, opt.maturity);
    let k = opt.strike;
    let call = if total_log_variance == 0.0 {
        df * (f0 - k).max(0.0)
    } else {
        let n = Normal::standard();
        let sd = total_log_variance.sqrt();
        let d1 = ((f0 / k).ln() + 0.5 * total_log_variance) / sd;
        let d2 = d1 - sd;
        df * (f0 * n.cdf(d1) - k * n.cdf(d2))
    };
    Ok(match opt.kind {
        OptionKind::Call => call,
        OptionKind::Put => call - df * (f0 - k),
    })
}

/// Discounted sample mean and standard error of the payoff at maturity.
pub fn mc_european(paths: &PathSet, product: usize, opt: &EuropeanOption) -> Result<(f64, f64)> {
    opt.validate()?;
    if let Some(ContractKind::Swap { start, .. }) = paths.product_keys.get(product).map(|k| k.kind) {
        if opt.maturity > start + 1e-12 {
            return Err(Error::InvalidInput("option maturity after start of delivery".into()));
        }
    }
    mc_expectation(paths, product, opt.maturity, opt.rate, |s| opt.kind.payoff(s, opt.strike))
}

/// Discounted Monte Carlo mean of any payoff of the price at `maturity`.
pub fn mc_expectation(
    paths: &PathSet,
    product: usize,
    maturity: f64,
    rate: f64,
    payoff: impl Fn(f64) -> f64,
) -> Result<(f64, f64)> {
    if product >= paths.n_products() {
        return Err(Error::InvalidInput(format!("product index {product} out of range")));
    }
    let t = paths
        .time_index(maturity)
        .ok_or_else(|| Error::GridMismatch(format!("maturity {maturity} is not a simulated date")))?;
    let df = discount(rate, maturity);
    let xs: Vec<f64> = paths.cross_section(t, product).into_iter().map(|s| df * payoff(s)).collect();
    Ok(mean_and_error(&xs))
}
