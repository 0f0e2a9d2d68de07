//! Covariance estimation, principal components and the reduced volatility
//! matrix `sigma*`.
//!
//! For a stepwise lognormal model the log-returns of the fixed-delivery
//! products satisfy `Sigma = dt * sigma * sigma^T`. The volatility matrix is
//! only identified up to a unitary transformation, so the principal
//! components give a canonical choice: `sigma* = C* (Gamma*)^(1/2) dt^(-1/2)`
//! with `C*` the leading eigenvectors and `Gamma*` their eigenvalues.

use chrono::NaiveDate;
use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::marketdata::{ColumnKey, LogReturnMatrix};

/// Eigenvalues below this fraction of the trace are set to zero.
const EIGEN_CLIP: f64 = 1e-12;

/// Normalization of the sample covariance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovarianceMode {
    /// Demeaned, divided by `n - 1`.
    #[default]
    Unbiased,
    /// Raw cross-product `X^T X` without demeaning or scaling.
    Literal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceEstimate {
    pub sigma_hat: DMatrix<f64>,
    pub n_obs: usize,
    pub column_keys: Vec<ColumnKey>,
    pub demeaned: bool,
    /// Observation spacing of the returns, in years.
    pub dt: f64,
}

/// Unbiased sample covariance over rows without missing entries.
pub fn estimate_covariance(x: &LogReturnMatrix) -> Result<CovarianceEstimate> {
    estimate_covariance_with(x, CovarianceMode::Unbiased)
}

pub fn estimate_covariance_with(x: &LogReturnMatrix, mode: CovarianceMode) -> Result<CovarianceEstimate> {
    let cols: Vec<usize> = (0..x.n_cols()).collect();
    let rows = x.complete_rows(&cols);
    if rows.len() < 2 || cols.is_empty() {
        return Err(Error::InsufficientData {
            required: 2,
            actual: rows.len(),
        });
    }
    let n = rows.len();
    let p = cols.len();
    let mut data = DMatrix::from_fn(n, p, |i, j| rows[i][j]);
    let sigma_hat = match mode {
        CovarianceMode::Unbiased => {
            for j in 0..p {
                let mean = data.column(j).sum() / n as f64;
                data.column_mut(j).add_scalar_mut(-mean);
            }
            data.tr_mul(&data) / (n as f64 - 1.0)
        }
        CovarianceMode::Literal => data.tr_mul(&data),
    };
    Ok(CovarianceEstimate {
        sigma_hat: symmetrize(sigma_hat),
        n_obs: n,
        column_keys: x.column_keys.clone(),
        demeaned: mode == CovarianceMode::Unbiased,
        dt: x.dt,
    })
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Eigen-decomposition sorted by decreasing eigenvalue.
#[derive(Debug, Clone, PartialEq)]
pub struct Eigenpairs {
    pub values: Vec<f64>,
    /// Eigenvectors as columns, in the order of `values`.
    pub vectors: DMatrix<f64>,
    pub column_keys: Vec<ColumnKey>,
}

impl Eigenpairs {
    /// Cumulative explained-variance ratios.
    pub fn explained(&self) -> Vec<f64> {
        cumulative_ratios(&self.values)
    }
}

fn cumulative_ratios(values: &[f64]) -> Vec<f64> {
    let total: f64 = values.iter().sum();
    let mut acc = 0.0;
    values
        .iter()
        .map(|v| {
            acc += v;
            if total > 0.0 {
                (acc / total).min(1.0)
            } else {
                0.0
            }
        })
        .collect()
}

/// Symmetric eigen-decomposition of the covariance estimate.
///
/// Eigenvalues below `1e-12 * trace` are clipped to zero; each eigenvector is
/// oriented so that its largest-magnitude entry is positive.
pub fn pca(cov: &CovarianceEstimate) -> Result<Eigenpairs> {
    let (values, vectors) = sorted_eigen(&cov.sigma_hat)?;
    Ok(Eigenpairs {
        values,
        vectors,
        column_keys: cov.column_keys.clone(),
    })
}

fn sorted_eigen(m: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    if !m.is_square() || m.nrows() == 0 {
        return Err(Error::InvalidInput("covariance must be a non-empty square matrix".into()));
    }
    let scale = m.amax().max(f64::MIN_POSITIVE);
    let asym = (m - m.transpose()).amax();
    if asym > 1e-12 * scale {
        return Err(Error::NotSymmetric(asym));
    }
    let eig = SymmetricEigen::new(symmetrize(m.clone()));
    let mut order: Vec<usize> = (0..m.nrows()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let trace = m.trace();
    let floor = EIGEN_CLIP * trace.abs();
    let values = order
        .iter()
        .map(|&i| {
            let v = eig.eigenvalues[i];
            if v < floor {
                0.0
            } else {
                v
            }
        })
        .collect();
    let mut vectors = DMatrix::zeros(m.nrows(), m.nrows());
    for (dst, &src) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(src).clone_owned();
        let lead = col.iamax();
        if col[lead] < 0.0 {
            col.neg_mut();
        }
        vectors.set_column(dst, &col);
    }
    Ok((values, vectors))
}

/// Smallest `N` whose cumulative share of the spectrum reaches `threshold`.
pub fn select_factors(eigenvalues: &[f64], threshold: f64) -> Result<usize> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "explained-variance threshold {threshold} must lie in (0, 1]"
        )));
    }
    if eigenvalues.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::InvalidInput("eigenvalues must be nonnegative".into()));
    }
    if eigenvalues.iter().all(|&v| v == 0.0) {
        return Err(Error::InvalidInput("all-zero eigenvalue spectrum".into()));
    }
    let ratios = cumulative_ratios(eigenvalues);
    Ok(ratios
        .iter()
        .position(|&r| r >= threshold - 1e-12)
        .map_or(eigenvalues.len(), |i| i + 1))
}

fn default_bucket_length() -> f64 {
    1.0 / 12.0
}

/// Calibrated stepwise volatility model.
///
/// Row `k * buckets_per_market + h` of `sigma_star` is the factor loading of
/// market `k` for time-to-delivery bucket `h`, i.e. `(h L, (h+1) L]` with `L`
/// the bucket length in years.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorModel {
    pub markets: Vec<String>,
    pub buckets_per_market: usize,
    pub n_factors: usize,
    pub dt: f64,
    /// Full spectrum of the estimated covariance, decreasing.
    pub eigenvalues: Vec<f64>,
    /// Row-major `(K * M) x N` matrix, annualized.
    pub sigma_star: Vec<Vec<f64>>,
    #[serde(default)]
    pub explained: Vec<f64>,
    #[serde(default = "default_bucket_length")]
    pub bucket_length: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub as_of: Option<NaiveDate>,
}

impl FactorModel {
    /// Wraps a known volatility matrix; the spectrum is that of `dt * sigma * sigma^T`.
    pub fn from_sigma(
        markets: Vec<String>,
        buckets_per_market: usize,
        dt: f64,
        bucket_length: f64,
        sigma: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let n_factors = sigma.first().map_or(0, Vec::len);
        let p = sigma.len();
        let s = DMatrix::from_fn(p, n_factors, |i, j| sigma[i].get(j).copied().unwrap_or(f64::NAN));
        let cov = &s * s.transpose() * dt;
        let eigenvalues = if p > 0 { sorted_eigen(&cov)?.0 } else { Vec::new() };
        let model = Self {
            markets,
            buckets_per_market,
            n_factors,
            dt,
            explained: cumulative_ratios(&eigenvalues),
            eigenvalues,
            sigma_star: sigma,
            bucket_length,
            as_of: None,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.markets.len();
        let m = self.buckets_per_market;
        if k == 0 || m == 0 {
            return Err(Error::InvalidInput("model needs at least one market and bucket".into()));
        }
        if self.sigma_star.len() != k * m {
            return Err(Error::InvalidInput(format!(
                "sigma_star has {} rows, expected {} markets x {} buckets",
                self.sigma_star.len(),
                k,
                m
            )));
        }
        if self.n_factors == 0 || self.n_factors > k * m {
            return Err(Error::InvalidInput(format!(
                "factor count {} outside 1..={}",
                self.n_factors,
                k * m
            )));
        }
        if self
            .sigma_star
            .iter()
            .any(|r| r.len() != self.n_factors || r.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::InvalidInput(format!(
                "every sigma_star row needs {} finite entries",
                self.n_factors
            )));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) || !(self.bucket_length > 0.0 && self.bucket_length.is_finite()) {
            return Err(Error::InvalidInput("dt and bucket_length must be > 0".into()));
        }
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.sigma_star.len()
    }

    pub fn market_index(&self, market: &str) -> Option<usize> {
        self.markets.iter().position(|m| m == market)
    }

    /// Loading row of `market` for bucket `h`; buckets past the last one use
    /// the last row.
    pub fn row(&self, market: usize, h: usize) -> &[f64] {
        let h = h.min(self.buckets_per_market - 1);
        &self.sigma_star[market * self.buckets_per_market + h]
    }

    /// Rows of one market, nearest delivery first.
    pub fn market_rows(&self, market: usize) -> &[Vec<f64>] {
        let m = self.buckets_per_market;
        &self.sigma_star[market * m..(market + 1) * m]
    }

    pub fn sigma_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n_rows(), self.n_factors, |i, j| self.sigma_star[i][j])
    }

    /// `dt * sigma* sigma*^T`.
    pub fn covariance(&self) -> DMatrix<f64> {
        let s = self.sigma_matrix();
        &s * s.transpose() * self.dt
    }

    /// Correlation implied by the model rows.
    pub fn implied_correlation(&self) -> DMatrix<f64> {
        let c = self.covariance();
        DMatrix::from_fn(c.nrows(), c.ncols(), |i, j| {
            let d = (c[(i, i)] * c[(j, j)]).sqrt();
            if d > 0.0 {
                c[(i, j)] / d
            } else if i == j {
                1.0
            } else {
                0.0
            }
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: Self = serde_json::from_str(text)?;
        model.validate()?;
        Ok(model)
    }
}

/// Market order and per-market bucket count from market-major column keys.
fn grid_from_keys(keys: &[ColumnKey]) -> Result<(Vec<String>, usize)> {
    let mut markets: Vec<String> = Vec::new();
    for key in keys {
        if markets.last() != Some(&key.market) {
            if markets.contains(&key.market) {
                return Err(Error::InvalidInput(format!(
                    "columns of market {} are not contiguous",
                    key.market
                )));
            }
            markets.push(key.market.clone());
        }
    }
    if markets.is_empty() || !keys.len().is_multiple_of(markets.len()) {
        return Err(Error::InvalidInput("markets must have the same number of columns".into()));
    }
    let m = keys.len() / markets.len();
    for (k, market) in markets.iter().enumerate() {
        if keys[k * m..(k + 1) * m].iter().any(|c| &c.market != market) {
            return Err(Error::InvalidInput("markets must have the same number of columns".into()));
        }
    }
    Ok((markets, m))
}

/// Keeps the `n` leading components: columns `v_i * sqrt(lambda_i / dt)`.
pub fn build_sigma_star(eig: &Eigenpairs, n: usize, dt: f64) -> Result<FactorModel> {
    let p = eig.values.len();
    if n == 0 || n > p {
        return Err(Error::InvalidInput(format!("factor count {n} outside 1..={p}")));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidInput(format!("dt {dt} must be > 0")));
    }
    let (markets, buckets_per_market) = grid_from_keys(&eig.column_keys)?;
    let scale: Vec<f64> = eig.values[..n].iter().map(|l| (l / dt).sqrt()).collect();
    let sigma_star = (0..p)
        .map(|i| (0..n).map(|j| eig.vectors[(i, j)] * scale[j]).collect())
        .collect();
    let model = FactorModel {
        markets,
        buckets_per_market,
        n_factors: n,
        dt,
        eigenvalues: eig.values.clone(),
        sigma_star,
        explained: eig.explained(),
        bucket_length: default_bucket_length(),
        as_of: None,
    };
    model.validate()?;
    Ok(model)
}

/// Full-rank `sigma_hat = C Gamma^(1/2) dt^(-1/2)`.
pub fn full_sigma(cov: &CovarianceEstimate) -> Result<DMatrix<f64>> {
    let (values, vectors) = sorted_eigen(&cov.sigma_hat)?;
    let mut s = vectors;
    for (j, l) in values.iter().enumerate() {
        let f = (l / cov.dt).sqrt();
        s.column_mut(j).scale_mut(f);
    }
    Ok(s)
}

/// Pearson correlation of paired samples; `None` for fewer than two pairs
/// or a zero-variance side.
pub fn sample_correlation(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len().min(b.len());
    if n < 2 {
        return None;
    }
    let ma = a[..n].iter().sum::<f64>() / n as f64;
    let mb = b[..n].iter().sum::<f64>() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (da, db) = (a[i] - ma, b[i] - mb);
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Correlations between the tenors of two markets.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationSurface {
    pub market_a: String,
    pub market_b: String,
    pub tenors_a: Vec<String>,
    pub tenors_b: Vec<String>,
    /// `values[i][j]` correlates tenor `i` of market a with tenor `j` of
    /// market b; `None` where undefined.
    pub values: Vec<Vec<Option<f64>>>,
}

/// Pairwise sample correlations between the columns of two markets, each
/// over the rows where both columns are present.
pub fn correlation_surface(x: &LogReturnMatrix, market_a: &str, market_b: &str) -> Result<CorrelationSurface> {
    let cols_a = x.market_columns(market_a);
    let cols_b = x.market_columns(market_b);
    for (m, c) in [(market_a, &cols_a), (market_b, &cols_b)] {
        if c.is_empty() {
            return Err(Error::InvalidInput(format!("market {m} not in return matrix")));
        }
    }
    let values = cols_a
        .iter()
        .map(|&i| {
            cols_b
                .iter()
                .map(|&j| {
                    let pairs = x.complete_rows(&[i, j]);
                    let a: Vec<f64> = pairs.iter().map(|r| r[0]).collect();
                    let b: Vec<f64> = pairs.iter().map(|r| r[1]).collect();
                    sample_correlation(&a, &b)
                })
                .collect()
        })
        .collect();
    Ok(CorrelationSurface {
        market_a: market_a.to_string(),
        market_b: market_b.to_string(),
        tenors_a: cols_a.iter().map(|&i| x.column_keys[i].tenor.clone()).collect(),
        tenors_b: cols_b.iter().map(|&j| x.column_keys[j].tenor.clone()).collect(),
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn keys(market: &str, n: usize) -> Vec<ColumnKey> {
        (0..n).map(|i| ColumnKey::new(market, format!("M{i}"))).collect()
    }

    fn cov_from(m: DMatrix<f64>, dt: f64) -> CovarianceEstimate {
        CovarianceEstimate {
            column_keys: keys("X", m.nrows()),
            sigma_hat: m,
            n_obs: 10,
            demeaned: true,
            dt,
        }
    }

    fn frob_rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
    }

    #[test]
    fn identical_rows_give_zero_covariance() {
        let x = LogReturnMatrix::from_complete_rows(keys("X", 2), 0.1, &[vec![0.3, -0.1], vec![0.3, -0.1]]).unwrap();
        let c = estimate_covariance(&x).unwrap();
        assert_eq!(c.sigma_hat, DMatrix::zeros(2, 2));
        assert!(c.demeaned);
    }

    #[test]
    fn two_row_covariance() {
        let a = 0.07;
        let x = LogReturnMatrix::from_complete_rows(keys("X", 2), 0.1, &[vec![a, a], vec![-a, -a]]).unwrap();
        let c = estimate_covariance(&x).unwrap();
        for v in c.sigma_hat.iter() {
            assert!((v - 2.0 * a * a).abs() < 1e-16);
        }
        let lit = estimate_covariance_with(&x, CovarianceMode::Literal).unwrap();
        assert!(!lit.demeaned);
        assert!((lit.sigma_hat[(0, 1)] - 2.0 * a * a).abs() < 1e-16);
    }

    #[test]
    fn covariance_needs_two_complete_rows() {
        let x = LogReturnMatrix::new(keys("X", 2), 0.1, None, &[vec![Some(0.1), None], vec![Some(0.2), Some(0.1)]]).unwrap();
        assert!(matches!(estimate_covariance(&x), Err(Error::InsufficientData { .. })));
    }

    #[test]
    fn two_by_two_eigenpairs() {
        let c = cov_from(DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]), 1.0);
        let e = pca(&c).unwrap();
        assert!((e.values[0] - 3.0).abs() < 1e-12 && (e.values[1] - 1.0).abs() < 1e-12);
        let h = 1.0 / 2f64.sqrt();
        assert!((e.vectors[(0, 0)] - h).abs() < 1e-12 && (e.vectors[(1, 0)] - h).abs() < 1e-12);
        // largest-magnitude entries tie; the first one is made positive
        assert!((e.vectors[(0, 1)] - h).abs() < 1e-12 && (e.vectors[(1, 1)] + h).abs() < 1e-12);

        let model = build_sigma_star(&e, 1, 1.0).unwrap();
        let s = 3f64.sqrt() * h;
        assert!((model.sigma_star[0][0] - s).abs() < 1e-12 && (model.sigma_star[1][0] - s).abs() < 1e-12);
        let cov = model.covariance();
        for v in cov.iter() {
            assert!((v - 1.5).abs() < 1e-12);
        }
    }

    #[test]
    fn scaled_identity_spectrum() {
        let c = cov_from(DMatrix::identity(4, 4) * 2.5, 1.0);
        let e = pca(&c).unwrap();
        assert!(e.values.iter().all(|v| (v - 2.5).abs() < 1e-12));
        let v = &e.vectors;
        assert!(frob_rel(&(v.transpose() * v), &DMatrix::identity(4, 4)) < 1e-12);
        for j in 0..4 {
            let col = v.column(j);
            assert!(col[col.iamax()] > 0.0);
        }
    }

    #[test]
    fn asymmetric_input_is_rejected() {
        let c = cov_from(DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.5, 2.0]), 1.0);
        assert!(matches!(pca(&c), Err(Error::NotSymmetric(_))));
    }

    #[test]
    fn factor_selection() {
        let l = [0.8325e-3, 0.0107e-3, 0.0005e-3, 0.0];
        assert_eq!(select_factors(&l, 0.99).unwrap(), 2);
        assert_eq!(select_factors(&l, 1.0).unwrap(), 3);
        assert_eq!(select_factors(&[1.0, 0.0], 0.5).unwrap(), 1);
        assert!(select_factors(&[0.0, 0.0], 0.5).is_err());
        assert!(select_factors(&[1.0], 0.0).is_err());
        assert!(select_factors(&[1.0], 1.5).is_err());
    }

    #[test]
    fn one_by_one_full_sigma() {
        let dt = 1.0 / 252.0;
        let c = cov_from(DMatrix::from_element(1, 1, 0.0004), dt);
        let s = full_sigma(&c).unwrap();
        assert!((s[(0, 0)] - 0.02 / dt.sqrt()).abs() < 1e-12);
    }

    fn random_cov(seed: u64, p: usize, n: usize, dt: f64) -> (LogReturnMatrix, CovarianceEstimate) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mix: Vec<Vec<f64>> = (0..p)
            .map(|_| (0..p).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let z: Vec<f64> = (0..p).map(|_| StandardNormal.sample(&mut rng)).collect();
                (0..p).map(|i| 0.01 * (0..p).map(|j| mix[i][j] * z[j]).sum::<f64>()).collect()
            })
            .collect();
        let x = LogReturnMatrix::from_complete_rows(keys("X", p), dt, &rows).unwrap();
        let c = estimate_covariance(&x).unwrap();
        (x, c)
    }

    #[test]
    fn truncation_and_full_rank_identities() {
        let dt = 1.0 / 252.0;
        let (_, c) = random_cov(3, 6, 200, dt);
        let e = pca(&c).unwrap();
        let trace: f64 = c.sigma_hat.trace();
        assert!((e.values.iter().sum::<f64>() - trace).abs() <= 1e-10 * trace);
        let v = &e.vectors;
        assert!(frob_rel(&(v.transpose() * v), &DMatrix::identity(6, 6)) < 1e-12);

        let mut last = f64::INFINITY;
        for n in 1..=6 {
            let model = build_sigma_star(&e, n, dt).unwrap();
            // rank-n spectral truncation, built independently
            let mut trunc = DMatrix::zeros(6, 6);
            for j in 0..n {
                let col = v.column(j);
                trunc += col * col.transpose() * e.values[j];
            }
            assert!(frob_rel(&model.covariance(), &trunc) < 1e-10);
            let err = (&c.sigma_hat - model.covariance()).norm();
            assert!(err <= last + 1e-18);
            last = err;
            let ex = &model.explained;
            assert!(ex.windows(2).all(|w| w[0] <= w[1]));
            assert!((ex[5] - 1.0).abs() < 1e-12);
        }
        assert!(last <= 1e-10 * c.sigma_hat.norm());

        let s = full_sigma(&c).unwrap();
        assert!(frob_rel(&(&s * s.transpose() * dt), &c.sigma_hat) < 1e-10);
    }

    #[test]
    fn pca_is_bit_reproducible() {
        let (_, c) = random_cov(5, 5, 100, 0.01);
        assert_eq!(pca(&c).unwrap(), pca(&c).unwrap());
    }

    #[test]
    fn model_json_round_trip() {
        let (_, c) = random_cov(9, 4, 100, 0.01);
        let e = pca(&c).unwrap();
        let mut model = build_sigma_star(&e, 2, 0.01).unwrap();
        model.as_of = NaiveDate::from_ymd_opt(2021, 1, 4);
        let text = model.to_json().unwrap();
        for field in ["markets", "buckets_per_market", "n_factors", "dt", "eigenvalues", "sigma_star"] {
            assert!(text.contains(&format!("\"{field}\"")), "{field}");
        }
        assert_eq!(FactorModel::from_json(&text).unwrap(), model);
        assert!(FactorModel::from_json("{\"markets\":[]}").is_err());
    }

    #[test]
    fn grid_from_market_major_keys() {
        let mut k = keys("DE", 3);
        k.extend(keys("IT", 3));
        assert_eq!(grid_from_keys(&k).unwrap(), (vec!["DE".into(), "IT".into()], 3));
        k.pop();
        assert!(grid_from_keys(&k).is_err());
        let mixed = vec![ColumnKey::new("A", "M0"), ColumnKey::new("B", "M0"), ColumnKey::new("A", "M1")];
        assert!(grid_from_keys(&mixed).is_err());
    }

    #[test]
    fn correlation_surface_basics() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 10_000;
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let a: f64 = StandardNormal.sample(&mut rng);
                let b: f64 = StandardNormal.sample(&mut rng);
                vec![a, b]
            })
            .collect();
        let x = LogReturnMatrix::from_complete_rows(
            vec![ColumnKey::new("A", "M0"), ColumnKey::new("B", "M0")],
            0.01,
            &rows,
        )
        .unwrap();
        let own = correlation_surface(&x, "A", "A").unwrap();
        assert!((own.values[0][0].unwrap() - 1.0).abs() < 1e-12);
        let cross = correlation_surface(&x, "A", "B").unwrap();
        assert!(cross.values[0][0].unwrap().abs() < 0.05);
        assert!(correlation_surface(&x, "A", "C").is_err());

        let flat = LogReturnMatrix::from_complete_rows(
            vec![ColumnKey::new("A", "M0"), ColumnKey::new("B", "M0")],
            0.01,
            &[vec![1.0, 0.0], vec![2.0, 0.0], vec![3.0, 0.0]],
        )
        .unwrap();
        assert_eq!(correlation_surface(&flat, "A", "B").unwrap().values[0][0], None);
    }

    #[test]
    fn from_sigma_reports_spectrum() {
        let m = FactorModel::from_sigma(vec!["X".into()], 2, 1.0, 1.0, vec![vec![1.0, 0.0], vec![0.0, 2.0]]).unwrap();
        assert_eq!(m.eigenvalues, vec![4.0, 1.0]);
        assert_eq!(m.row(0, 7), &[0.0, 2.0]);
        assert!(FactorModel::from_sigma(vec!["X".into()], 3, 1.0, 1.0, vec![vec![1.0]]).is_err());
    }

    proptest::proptest! {
        #[test]
        fn trace_is_conserved(seed in 0u64..1000, p in 1usize..7) {
            let (_, c) = random_cov(seed, p, 3 * p + 5, 0.01);
            let e = pca(&c).unwrap();
            let trace = c.sigma_hat.trace();
            proptest::prop_assert!((e.values.iter().sum::<f64>() - trace).abs() <= 1e-10 * trace);
            proptest::prop_assert!(e.values.windows(2).all(|w| w[0] >= w[1]));
        }
    }
}
