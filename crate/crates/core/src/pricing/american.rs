//! American options by least-squares Monte Carlo.

use super::lsmc::{lsmc_solve, ControlProblem, Decision, LsmcConfig, PolicyValuation};
use super::{discount, OptionKind, PriceMatrix, Window};
use crate::error::{Error, Result};
use crate::simulation::PathSet;

const ALIVE: usize = 0;
const EXERCISED: usize = 1;

/// Exercise allowed on every period of the price matrix, including the first.
pub struct AmericanProblem<'a> {
    pub prices: &'a PriceMatrix,
    pub strike: f64,
    pub rate: f64,
    pub kind: OptionKind,
}

impl ControlProblem for AmericanProblem<'_> {
    fn n_periods(&self) -> usize {
        self.prices.n_periods()
    }

    fn n_states(&self) -> usize {
        2
    }

    fn n_paths(&self) -> usize {
        self.prices.n_paths
    }

    fn initial_state(&self) -> usize {
        ALIVE
    }

    fn regressor(&self, period: usize, path: usize) -> f64 {
        self.prices.get(period, path)
    }

    fn decisions(&self, period: usize, state: usize, path: usize, out: &mut Vec<Decision>) {
        out.push(Decision { next: state, cash: 0.0 });
        if state == ALIVE {
            let s = self.prices.get(period, path);
            let cash = discount(self.rate, self.prices.times[period]) * self.kind.payoff(s, self.strike);
            out.push(Decision { next: EXERCISED, cash });
        }
    }

    fn terminal(&self, _state: usize, _path: usize) -> f64 {
        0.0
    }
}

/// LSMC value of an American option exercisable on every simulated date
/// inside `window` (all dates when `None`).
pub fn american_option(
    paths: &PathSet,
    product: usize,
    window: Option<Window>,
    strike: f64,
    rate: f64,
    kind: OptionKind,
    cfg: &LsmcConfig,
) -> Result<PolicyValuation> {
    if !(strike > 0.0) {
        return Err(Error::InvalidInput(format!("strike {strike} must be > 0")));
    }
    let prices = PriceMatrix::from_paths(paths, product, window)?;
    lsmc_solve(
        &AmericanProblem {
            prices: &prices,
            strike,
            rate,
            kind,
        },
        cfg,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::FactorModel;
    use crate::pricing::black::{mc_european, EuropeanOption};
    use crate::simulation::{simulate_fixed_delivery, FixedDeliverySpec, SimConfig};

    fn gbm_paths(sigma: f64, n_paths: usize, seed: u64) -> PathSet {
        let model = FactorModel::from_sigma(vec!["X".into()], 1, 0.02, 10.0, vec![vec![sigma]]).unwrap();
        let cfg = SimConfig::new(seed, n_paths, 0.05, 0.5);
        simulate_fixed_delivery(
            &model,
            &[FixedDeliverySpec {
                market: "X".into(),
                initial: vec![100.0],
            }],
            &cfg,
        )
        .unwrap()
    }

    /// Exhaustive optimal stopping on deterministic prices.
    fn best_stop(prices: &[f64], times: &[f64], k: f64, r: f64, kind: OptionKind) -> f64 {
        prices
            .iter()
            .zip(times)
            .map(|(s, t)| (-r * t).exp() * kind.payoff(*s, k))
            .fold(0.0, f64::max)
    }

    #[test]
    fn zero_vol_is_deterministic_stopping() {
        let times = vec![0.0, 0.1, 0.2, 0.3];
        let rows = vec![vec![10.0, 8.0, 7.0, 9.0]; 3];
        let prices = PriceMatrix::from_rows(times.clone(), &rows).unwrap();
        for (k, r) in [(12.0, 0.0), (12.0, 0.5), (9.5, 0.2)] {
            let v = lsmc_solve(
                &AmericanProblem {
                    prices: &prices,
                    strike: k,
                    rate: r,
                    kind: OptionKind::Put,
                },
                &LsmcConfig::default(),
            )
            .unwrap();
            assert!((v.value - best_stop(&rows[0], &times, k, r, OptionKind::Put)).abs() < 1e-12);
        }
    }

    #[test]
    fn deep_itm_put_exercises_immediately() {
        let p = gbm_paths(0.3, 2000, 7);
        let v = american_option(&p, 0, None, 1000.0, 0.05, OptionKind::Put, &LsmcConfig::default()).unwrap();
        assert!((v.value - 900.0).abs() < 1e-9, "{}", v.value);
    }

    #[test]
    fn american_call_at_zero_rate_matches_european() {
        let p = gbm_paths(0.3, 20_000, 8);
        let am = american_option(&p, 0, None, 100.0, 0.0, OptionKind::Call, &LsmcConfig::default()).unwrap();
        let opt = EuropeanOption {
            strike: 100.0,
            maturity: 0.5,
            rate: 0.0,
            kind: OptionKind::Call,
        };
        let (eu, se) = mc_european(&p, 0, &opt).unwrap();
        assert!((am.value - eu).abs() < 3.0 * se, "{} vs {eu} ± {se}", am.value);
    }

    #[test]
    fn american_put_dominates_european() {
        let p = gbm_paths(0.3, 20_000, 9);
        let am = american_option(&p, 0, None, 110.0, 0.1, OptionKind::Put, &LsmcConfig::default()).unwrap();
        let opt = EuropeanOption {
            strike: 110.0,
            maturity: 0.5,
            rate: 0.1,
            kind: OptionKind::Put,
        };
        let (eu, se) = mc_european(&p, 0, &opt).unwrap();
        assert!(am.value >= eu - 3.0 * se);
    }
}
