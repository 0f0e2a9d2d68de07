//! Run configuration: a flat TOML document, paths relative to its own directory.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{CliError, CliResult};

/// Inputs, model settings and output location of one pipeline run.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Mandatory; there is no wall-clock default.
    pub seed: u64,
    pub quotes: PathBuf,
    #[serde(default = "default_out")]
    pub out: PathBuf,

    /// Year fraction of one trading day in the quote history.
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Relative tenors kept in the panels: M0.., Q1.., Y1...
    #[serde(default = "default_months")]
    pub months: u32,
    #[serde(default)]
    pub quarters: u32,
    #[serde(default)]
    pub years: u32,
    /// Months kept in each bootstrapped curve.
    #[serde(default = "default_curve_months")]
    pub curve_months: usize,
    #[serde(default = "default_outlier_k")]
    pub outlier_k: f64,
    #[serde(default = "default_max_lag")]
    pub max_lag: usize,

    #[serde(default = "default_threshold")]
    pub threshold: f64,
    /// Overrides the threshold-based factor count.
    #[serde(default)]
    pub factors: Option<usize>,

    #[serde(default = "default_paths")]
    pub n_paths: usize,
    /// Trading days simulated for fixed-delivery products.
    #[serde(default = "default_horizon_days")]
    pub horizon_days: usize,
    #[serde(default = "default_short_days")]
    pub short_horizon_days: usize,
    #[serde(default = "default_short_paths")]
    pub short_horizon_paths: usize,
    /// Calendar days of spot paths written by `simulate`.
    #[serde(default = "default_spot_days")]
    pub spot_days: usize,
    #[serde(default)]
    pub antithetic: bool,
    /// Writes every simulated value, not only summaries.
    #[serde(default)]
    pub export_paths: bool,
    /// A sanity row farther than this many standard errors from the model fails the run.
    #[serde(default = "default_sanity_z")]
    pub sanity_z: f64,

    #[serde(default)]
    pub rate: f64,
    #[serde(default = "default_degree")]
    pub lsmc_degree: usize,
    #[serde(default)]
    pub vpp: Option<PathBuf>,
    #[serde(default)]
    pub swing: Option<PathBuf>,
    #[serde(default)]
    pub storage: Option<PathBuf>,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}
fn default_dt() -> f64 {
    1.0 / 252.0
}
fn default_months() -> u32 {
    12
}
fn default_curve_months() -> usize {
    24
}
fn default_outlier_k() -> f64 {
    4.0
}
fn default_max_lag() -> usize {
    20
}
fn default_threshold() -> f64 {
    0.99
}
fn default_paths() -> usize {
    1000
}
fn default_horizon_days() -> usize {
    60
}
fn default_short_days() -> usize {
    20
}
fn default_short_paths() -> usize {
    400
}
fn default_spot_days() -> usize {
    60
}
fn default_sanity_z() -> f64 {
    5.0
}
fn default_degree() -> usize {
    3
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub paths: Option<usize>,
    pub threshold: Option<f64>,
    pub factors: Option<usize>,
}

impl RunConfig {
    pub fn load(path: &Path, overrides: &Overrides) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.quotes = base.join(&cfg.quotes);
        cfg.out = base.join(&cfg.out);
        for p in [&mut cfg.vpp, &mut cfg.swing, &mut cfg.storage].into_iter().flatten() {
            *p = base.join(&*p);
        }
        if let Some(s) = overrides.seed {
            cfg.seed = s;
        }
        if let Some(o) = &overrides.out {
            cfg.out = o.clone();
        }
        if let Some(n) = overrides.paths {
            cfg.n_paths = n;
        }
        if let Some(t) = overrides.threshold {
            cfg.threshold = t;
        }
        if overrides.factors.is_some() {
            cfg.factors = overrides.factors;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: &str| Err(CliError::Config(m.to_string()));
        if !(self.dt > 0.0 && self.dt < 1.0) {
            return bad("dt must lie in (0, 1)");
        }
        if self.months + self.quarters + self.years == 0 {
            return bad("panel needs at least one tenor");
        }
        if !(self.outlier_k >= 1.0) {
            return bad("outlier_k must be >= 1");
        }
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return bad("threshold must lie in (0, 1]");
        }
        if self.factors == Some(0) {
            return bad("factors must be >= 1");
        }
        if self.n_paths == 0 || self.short_horizon_paths == 0 {
            return bad("path counts must be >= 1");
        }
        if self.horizon_days == 0 || self.short_horizon_days == 0 || self.spot_days == 0 {
            return bad("horizons must be >= 1 day");
        }
        if !(self.sanity_z > 0.0) {
            return bad("sanity_z must be > 0");
        }
        if !self.rate.is_finite() {
            return bad("rate must be finite");
        }
        if self.curve_months == 0 || self.max_lag == 0 {
            return bad("curve_months and max_lag must be >= 1");
        }
        Ok(())
    }

    pub fn out_file(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_paths_and_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "seed = 7\nquotes = \"q.csv\"\nswing = \"s.toml\"\n").unwrap();
        let cfg = RunConfig::load(
            &path,
            &Overrides {
                paths: Some(10),
                factors: Some(2),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(cfg.quotes, dir.path().join("q.csv"));
        assert_eq!(cfg.out, dir.path().join("out"));
        assert_eq!(cfg.swing, Some(dir.path().join("s.toml")));
        assert_eq!((cfg.n_paths, cfg.factors, cfg.seed), (10, Some(2), 7));
    }

    #[test]
    fn seed_is_mandatory_and_unknown_keys_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "quotes = \"q.csv\"\n").unwrap();
        assert!(matches!(RunConfig::load(&path, &Overrides::default()), Err(CliError::Config(_))));
        std::fs::write(&path, "seed = 1\nquotes = \"q.csv\"\nbogus = 3\n").unwrap();
        assert!(RunConfig::load(&path, &Overrides::default()).is_err());
        std::fs::write(&path, "seed = 1\nquotes = \"q.csv\"\nthreshold = 1.5\n").unwrap();
        assert!(RunConfig::load(&path, &Overrides::default()).is_err());
    }
}
