//! Least-squares Monte Carlo for discrete-state control problems.
//!
//! A problem has finitely many resource states (rights left, on/off counters,
//! volume levels). At every period the controller picks a decision that pays
//! a cash flow and moves the resource to a new state. Backward induction
//! regresses the realized future value of every next state on a polynomial
//! basis of the period's scalar regressor (spot, spark spread), picks the
//! decision maximizing `cash + continuation`, and carries the realized cash
//! flows backwards (Longstaff–Schwartz).

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Relative singular-value floor below which the design is treated as rank deficient.
const RANK_TOL: f64 = 1e-10;

/// Outcome of one decision: the state entered next and the cash flow,
/// already discounted to `t0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub next: usize,
    pub cash: f64,
}

/// Finite-state optimal control problem sampled on a set of paths.
pub trait ControlProblem: Sync {
    fn n_periods(&self) -> usize;
    fn n_states(&self) -> usize;
    fn n_paths(&self) -> usize;
    fn initial_state(&self) -> usize;
    /// Scalar the continuation values are regressed on.
    fn regressor(&self, period: usize, path: usize) -> f64;
    /// Feasible decisions; must push at least one.
    fn decisions(&self, period: usize, state: usize, path: usize, out: &mut Vec<Decision>);
    /// Value (discounted to `t0`) of ending in `state` after the last period.
    fn terminal(&self, state: usize, path: usize) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LsmcConfig {
    /// Highest polynomial power of the standardized regressor.
    pub degree: usize,
    /// Ridge strength, relative to the mean diagonal of the normal matrix,
    /// used when the design is rank deficient.
    pub ridge: f64,
}

impl Default for LsmcConfig {
    fn default() -> Self {
        Self {
            degree: 3,
            ridge: 1e-8,
        }
    }
}

/// Standardized monomials `1, z, .., z^degree` with `z = (x - center) / scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct Basis {
    pub center: f64,
    pub scale: f64,
    pub degree: usize,
}

impl Basis {
    /// Degree is capped at the number of distinct sample values minus one.
    pub fn fit(x: &[f64], max_degree: usize) -> Basis {
        let n = x.len().max(1) as f64;
        let center = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - center) * (v - center)).sum::<f64>() / n;
        let scale = var.sqrt();
        let mut distinct: Vec<f64> = Vec::with_capacity(max_degree + 1);
        for &v in x {
            if !distinct.contains(&v) {
                distinct.push(v);
                if distinct.len() > max_degree {
                    break;
                }
            }
        }
        let degree = if scale > 0.0 {
            max_degree.min(distinct.len().saturating_sub(1))
        } else {
            0
        };
        Basis {
            center,
            scale: if scale > 0.0 { scale } else { 1.0 },
            degree,
        }
    }

    pub fn dim(&self) -> usize {
        self.degree + 1
    }

    pub fn eval(&self, x: f64, out: &mut [f64]) {
        let z = (x - self.center) / self.scale;
        let mut p = 1.0;
        for o in out.iter_mut().take(self.dim()) {
            *o = p;
            p *= z;
        }
    }

    fn dot(&self, x: f64, coef: &[f64]) -> f64 {
        let z = (x - self.center) / self.scale;
        // Horner
        coef.iter().rev().fold(0.0, |acc, c| acc * z + c)
    }
}

/// Least-squares projector for one sample of regressors, reusable across
/// many response vectors.
#[derive(Debug, Clone)]
pub struct Regression {
    pub basis: Basis,
    projector: DMatrix<f64>,
}

impl Regression {
    pub fn fit(x: &[f64], cfg: &LsmcConfig) -> Regression {
        let basis = Basis::fit(x, cfg.degree);
        let k = basis.dim();
        let n = x.len();
        if n < 10 * k {
            log::debug!("regression with {n} samples for {k} basis functions");
        }
        let mut design = DMatrix::zeros(n, k);
        let mut row = vec![0.0; k];
        for (i, &v) in x.iter().enumerate() {
            basis.eval(v, &mut row);
            for j in 0..k {
                design[(i, j)] = row[j];
            }
        }
        let svd = design.clone().svd(true, true);
        let s_max = svd.singular_values.max();
        let s_min = svd.singular_values.min();
        let projector = if s_max > 0.0 && s_min > RANK_TOL * s_max {
            svd.pseudo_inverse(0.0).expect("svd computed with u and v")
        } else {
            log::warn!("rank-deficient regression design ({n} samples, {k} functions); using ridge");
            let normal = design.tr_mul(&design);
            let lambda = cfg.ridge * (normal.trace() / k as f64).max(f64::MIN_POSITIVE);
            let reg = normal + DMatrix::identity(k, k) * lambda;
            let inv = reg.try_inverse().expect("ridge-regularized matrix is invertible");
            inv * design.transpose()
        };
        Regression { basis, projector }
    }

    pub fn coefficients(&self, y: &[f64]) -> Vec<f64> {
        let y = DVector::from_column_slice(y);
        (&self.projector * y).iter().copied().collect()
    }
}

/// Fitted conditional expectation `E[Y | X = x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Continuation {
    pub basis: Basis,
    pub coefficients: Vec<f64>,
}

impl Continuation {
    pub fn eval(&self, x: f64) -> f64 {
        self.basis.dot(x, &self.coefficients)
    }
}

/// Regresses realized future values on a polynomial basis of the state.
pub fn lsmc_continuation(x: &[f64], y: &[f64], cfg: &LsmcConfig) -> Result<Continuation> {
    if x.is_empty() || x.len() != y.len() {
        return Err(Error::InvalidInput(format!(
            "regression needs equally many samples and values ({} vs {})",
            x.len(),
            y.len()
        )));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite regression data".into()));
    }
    let reg = Regression::fit(x, cfg);
    Ok(Continuation {
        coefficients: reg.coefficients(y),
        basis: reg.basis,
    })
}

/// Continuation coefficients per period and next state.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedPolicy {
    pub bases: Vec<Basis>,
    /// `coefficients[period][state]`.
    pub coefficients: Vec<Vec<Vec<f64>>>,
}

impl FittedPolicy {
    pub fn n_periods(&self) -> usize {
        self.bases.len()
    }

    /// Estimated value of entering `state` at the end of `period` given regressor `x`.
    pub fn continuation(&self, period: usize, state: usize, x: f64) -> f64 {
        self.bases[period].dot(x, &self.coefficients[period][state])
    }

    fn choose(&self, period: usize, x: f64, options: &[Decision]) -> Decision {
        best(options, |d| d.cash + self.continuation(period, d.next, x))
    }
}

fn best(options: &[Decision], score: impl Fn(&Decision) -> f64) -> Decision {
    let mut choice = options[0];
    let mut top = score(&choice);
    for d in &options[1..] {
        let s = score(d);
        if s > top {
            top = s;
            choice = *d;
        }
    }
    choice
}

#[derive(Debug, Clone)]
pub struct PolicyValuation {
    pub value: f64,
    pub std_error: f64,
    /// Discounted cash flow of every path, for paired comparisons.
    pub path_values: Vec<f64>,
    pub policy: Arc<FittedPolicy>,
    /// True when the value was measured on the paths the policy was fitted on.
    pub in_sample: bool,
}

/// Mean and standard error of the mean.
pub fn mean_and_error(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn check_problem(problem: &dyn ControlProblem) -> Result<()> {
    if problem.n_paths() == 0 || problem.n_states() == 0 {
        return Err(Error::InvalidInput("control problem needs paths and states".into()));
    }
    if problem.initial_state() >= problem.n_states() {
        return Err(Error::InvalidInput("initial state out of range".into()));
    }
    Ok(())
}

fn options(problem: &dyn ControlProblem, t: usize, s: usize, p: usize, buf: &mut Vec<Decision>) {
    buf.clear();
    problem.decisions(t, s, p, buf);
    assert!(!buf.is_empty(), "state {s} at period {t} has no feasible decision");
}

/// Backward induction with regressed continuation values; the value is the
/// mean realized cash flow of the fitted policy on the same paths.
pub fn lsmc_solve(problem: &dyn ControlProblem, cfg: &LsmcConfig) -> Result<PolicyValuation> {
    check_problem(problem)?;
    let n_paths = problem.n_paths();
    let n_states = problem.n_states();
    let n_periods = problem.n_periods();

    let mut next: Vec<Vec<f64>> = (0..n_states)
        .into_par_iter()
        .map(|s| (0..n_paths).map(|p| problem.terminal(s, p)).collect())
        .collect();
    let mut bases = vec![None; n_periods];
    let mut coefficients = vec![Vec::new(); n_periods];

    for t in (0..n_periods).rev() {
        let x: Vec<f64> = (0..n_paths).map(|p| problem.regressor(t, p)).collect();
        let reg = Regression::fit(&x, cfg);
        let coefs: Vec<Vec<f64>> = next.par_iter().map(|v| reg.coefficients(v)).collect();
        let basis = reg.basis.clone();

        let current: Vec<Vec<f64>> = (0..n_states)
            .into_par_iter()
            .map(|s| {
                let mut buf = Vec::new();
                (0..n_paths)
                    .map(|p| {
                        options(problem, t, s, p, &mut buf);
                        let d = best(&buf, |d| d.cash + basis.dot(x[p], &coefs[d.next]));
                        d.cash + next[d.next][p]
                    })
                    .collect()
            })
            .collect();
        next = current;
        bases[t] = Some(basis);
        coefficients[t] = coefs;
    }

    let path_values = next.swap_remove(problem.initial_state());
    let (value, std_error) = mean_and_error(&path_values);
    Ok(PolicyValuation {
        value,
        std_error,
        path_values,
        policy: Arc::new(FittedPolicy {
            bases: bases.into_iter().map(|b| b.expect("every period fitted")).collect(),
            coefficients,
        }),
        in_sample: true,
    })
}

/// Replays a fitted policy on the paths of `problem`.
pub fn evaluate_policy(problem: &dyn ControlProblem, policy: &Arc<FittedPolicy>) -> Result<PolicyValuation> {
    check_problem(problem)?;
    if policy.n_periods() != problem.n_periods()
        || policy
            .coefficients
            .iter()
            .any(|c| c.len() != problem.n_states())
    {
        return Err(Error::GridMismatch(
            "policy was fitted on a different period/state grid".into(),
        ));
    }
    let cash: Vec<f64> = (0..problem.n_paths())
        .into_par_iter()
        .map(|p| {
            let mut buf = Vec::new();
            let mut s = problem.initial_state();
            let mut total = 0.0;
            for t in 0..problem.n_periods() {
                options(problem, t, s, p, &mut buf);
                let d = policy.choose(t, problem.regressor(t, p), &buf);
                total += d.cash;
                s = d.next;
            }
            total + problem.terminal(s, p)
        })
        .collect();
    let (value, std_error) = mean_and_error(&cash);
    Ok(PolicyValuation {
        value,
        std_error,
        path_values: cash,
        policy: Arc::clone(policy),
        in_sample: false,
    })
}

/// Per-path optimum with the whole path known in advance; returns the mean
/// and its standard error.
pub fn perfect_foresight(problem: &dyn ControlProblem) -> Result<(f64, f64)> {
    check_problem(problem)?;
    let n_states = problem.n_states();
    let values: Vec<f64> = (0..problem.n_paths())
        .into_par_iter()
        .map(|p| {
            let mut buf = Vec::new();
            let mut v: Vec<f64> = (0..n_states).map(|s| problem.terminal(s, p)).collect();
            let mut cur = vec![0.0; n_states];
            for t in (0..problem.n_periods()).rev() {
                for (s, c) in cur.iter_mut().enumerate() {
                    options(problem, t, s, p, &mut buf);
                    *c = buf
                        .iter()
                        .map(|d| d.cash + v[d.next])
                        .fold(f64::NEG_INFINITY, f64::max);
                }
                std::mem::swap(&mut v, &mut cur);
            }
            v[problem.initial_state()]
        })
        .collect();
    Ok(mean_and_error(&values))
}
