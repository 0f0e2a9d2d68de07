//! Contract documents. Delivery windows are calendar-day offsets from the
//! curve date; one simulation step is one calendar day.

use std::path::Path;

use hjm_core::pricing::{StorageContract, SwingContract, VppContract, Window};
use serde::Deserialize;

use crate::error::{CliError, CliResult};

pub const DAYS_PER_YEAR: f64 = 365.0;

pub fn day_window(start_day: usize, end_day: usize) -> CliResult<Window> {
    if end_day < start_day {
        return Err(CliError::Config(format!("end_day {end_day} precedes start_day {start_day}")));
    }
    Ok(Window {
        start: start_day as f64 / DAYS_PER_YEAR,
        end: end_day as f64 / DAYS_PER_YEAR,
    })
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VppSpec {
    pub power: String,
    pub fuel: String,
    pub start_day: usize,
    pub end_day: usize,
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
    #[serde(default = "hours_per_day")]
    pub hours_per_day: usize,
    /// `t_on = t_off` values of the sensitivity table.
    #[serde(default)]
    pub sweep: Vec<usize>,
}

fn hours_per_day() -> usize {
    24
}

impl VppSpec {
    pub fn contract(&self, t_on: usize, t_off: usize) -> CliResult<VppContract> {
        Ok(VppContract {
            window: day_window(self.start_day, self.end_day)?,
            t_on,
            t_off,
            q_min: self.q_min,
            q_max: self.q_max,
            s_u: self.s_u,
            s_d: self.s_d,
            heat_rate: self.heat_rate,
            hours_per_step: self.hours_per_day,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwingSpec {
    pub market: String,
    pub start_day: usize,
    pub end_day: usize,
    pub u_max: usize,
    pub d_max: usize,
    #[serde(rename = "K")]
    pub strike: f64,
    #[serde(rename = "Q", default = "unit")]
    pub quantity: f64,
    /// `u_max = d_max` values of the sensitivity table.
    #[serde(default)]
    pub sweep: Vec<usize>,
}

fn unit() -> f64 {
    1.0
}

impl SwingSpec {
    pub fn contract(&self, u_max: usize, d_max: usize) -> CliResult<SwingContract> {
        Ok(SwingContract {
            window: day_window(self.start_day, self.end_day)?,
            u_max,
            d_max,
            strike: self.strike,
            quantity: self.quantity,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StorageSpec {
    pub market: String,
    pub start_day: usize,
    pub end_day: usize,
    pub v_min: f64,
    pub v_max: f64,
    pub v_0: f64,
    pub v_target: f64,
    pub i_min: f64,
    pub i_max: f64,
    #[serde(default = "default_penalty")]
    pub penalty_scale: f64,
}

fn default_penalty() -> f64 {
    2.0
}

impl StorageSpec {
    pub fn contract(&self) -> CliResult<StorageContract> {
        Ok(StorageContract {
            window: day_window(self.start_day, self.end_day)?,
            v_min: self.v_min,
            v_max: self.v_max,
            v0: self.v_0,
            v_target: self.v_target,
            i_min: self.i_min,
            i_max: self.i_max,
            penalty_scale: self.penalty_scale,
        })
    }
}

pub fn load<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}
