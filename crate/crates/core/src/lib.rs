//! Multi-commodity Heath-Jarrow-Morton engine for energy forward markets.
//!
//! The pipeline runs in five stages, one module each:
//!
//! * [`marketdata`]: quote ingestion, rolling relative panels, log-returns and
//!   return diagnostics.
//! * [`curve`]: flat monthly forward curves bootstrapped from overlapping
//!   month/quarter/year swaps.
//! * [`calibration`]: covariance estimation, PCA and the reduced volatility
//!   matrix `sigma_star`.
//! * [`simulation`]: exact lognormal paths for fixed-delivery products, swaps,
//!   short-horizon curve scenarios and spot prices.
//! * [`pricing`]: Black formula, Monte Carlo European prices and least-squares
//!   Monte Carlo for American, swing, virtual power plant and storage contracts.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod curve;
pub mod error;
pub mod marketdata;
pub mod pricing;
pub mod simulation;

pub use calibration::{
    build_sigma_star, correlation_surface, estimate_covariance, full_sigma, pca, select_factors,
    CorrelationSurface, CovarianceEstimate, CovarianceMode, Eigenpairs, FactorModel,
};
pub use curve::{
    bootstrap_by_date, bootstrap_monthly_curve, extract_fixed_delivery, verify_no_arbitrage,
    ArbitrageCheck, BootstrapReport, CurveBucket, StepwiseCurve,
};
pub use error::{Error, Result};
pub use marketdata::{
    acf, build_relative_panel, filter_outliers, log_returns, normality_diagnostics, parse_quotes,
    ColumnKey, Granularity, LogReturnMatrix, Moments, PanelLayout, QuoteBatch, QuotedSwap,
    RelativePanel, Tenor,
};
pub use pricing::{
    american_option, black_price, mc_european, price_storage, price_swing, price_vpp, EuropeanOption,
    LsmcConfig, OptionKind, PolicyValuation, StorageContract, StorageValuation, SwingContract,
    SwingValuation, VppContract, VppValuation, Window,
};
pub use simulation::{
    sanity_check, simulate_fixed_delivery, simulate_short_horizon, simulate_spot, simulate_swap,
    theoretical_log_variance, ContractKind, ExponentialVol, FixedDeliverySpec, PathSet, ProductKey,
    SanityReport, SimConfig, SpotSpec, SwapSpec, VolTermStructure,
};
