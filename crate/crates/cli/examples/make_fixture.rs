//! Writes the synthetic fixture set: a year of DE / IT / TTF month, quarter
//! and two calendar-year quotes generated from a known three-factor model,
//! plus a run configuration and VPP, swing and storage contract documents.
//!
//! Usage: `cargo run -p hjm-cli --example make_fixture -- [DIR]`
//! (default `crates/cli/fixtures`).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const MARKETS: [(&str, f64); 3] = [("DE", 45.0), ("IT", 50.0), ("TTF", 20.0)];
const BUCKETS: usize = 12;
const TRADING_DAYS: usize = 260;
const DT: f64 = 1.0 / 252.0;
const SEED: u64 = 20_200_102;

/// Generating loadings: a common level factor with a Samuelson-style decay,
/// a slope factor and a gas-versus-power factor.
fn sigma(market: usize, h: usize) -> [f64; 3] {
    let h = h.min(BUCKETS - 1) as f64;
    let decay = (-0.15 * h).exp();
    let power = market < 2;
    [
        0.45 * decay + 0.12,
        (0.18 - 0.025 * h) * if market == 1 { 1.1 } else { 1.0 },
        if power { -0.06 * decay } else { 0.16 * decay },
    ]
}

fn month_index(d: NaiveDate) -> i32 {
    d.year() * 12 + d.month0() as i32
}

fn month_start(m: i32) -> NaiveDate {
    NaiveDate::from_ymd_opt(m.div_euclid(12), m.rem_euclid(12) as u32 + 1, 1).unwrap()
}

fn month_end(m: i32) -> NaiveDate {
    month_start(m + 1) - Duration::days(1)
}

fn days(m: i32) -> f64 {
    (month_end(m) - month_start(m)).num_days() as f64 + 1.0
}

fn seasonal(m: i32) -> f64 {
    1.0 + 0.12 * (2.0 * std::f64::consts::PI * (m.rem_euclid(12) as f64 + 0.5) / 12.0).cos()
}

fn business_days(from: NaiveDate, n: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(n);
    let mut d = from;
    while out.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d += Duration::days(1);
    }
    out
}

fn main() {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("crates/cli/fixtures"));
    std::fs::create_dir_all(&dir).unwrap();

    let dates = business_days(NaiveDate::from_ymd_opt(2020, 1, 2).unwrap(), TRADING_DAYS);
    let m_first = month_index(dates[0]);
    let m_last = month_index(dates[TRADING_DAYS - 1]) + 30;
    // ln F per market and calendar month
    let mut curves: Vec<BTreeMap<i32, f64>> = MARKETS
        .iter()
        .map(|(_, base)| (m_first..=m_last).map(|m| (m, (base * seasonal(m)).ln())).collect())
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut csv = String::from("trading_date,market,delivery_start,delivery_end,price\n");
    for (i, &date) in dates.iter().enumerate() {
        let m0 = month_index(date);
        if i > 0 {
            let z: [f64; 3] = std::array::from_fn(|_| rng.sample(StandardNormal));
            for (k, curve) in curves.iter_mut().enumerate() {
                for (&m, lnf) in curve.range_mut(m0..) {
                    let s = sigma(k, (m - m0) as usize);
                    let var: f64 = s.iter().map(|v| v * v).sum();
                    let shock: f64 = s.iter().zip(&z).map(|(a, b)| a * b).sum();
                    *lnf += shock * DT.sqrt() - 0.5 * var * DT;
                }
            }
        }
        for (k, (market, _)) in MARKETS.iter().enumerate() {
            let avg = |lo: i32, hi: i32| {
                let (num, den) = (lo..=hi).fold((0.0, 0.0), |(n, d), m| (n + curves[k][&m].exp() * days(m), d + days(m)));
                (num / den * 100.0).round() / 100.0
            };
            let mut quote = |lo: i32, hi: i32| {
                writeln!(csv, "{date},{market},{},{},{:.2}", month_start(lo), month_end(hi), avg(lo, hi)).unwrap();
            };
            for h in 0..BUCKETS as i32 {
                quote(m0 + h, m0 + h);
            }
            let q0 = m0 - m0.rem_euclid(3) + 3;
            for q in 0..4 {
                quote(q0 + 3 * q, q0 + 3 * q + 2);
            }
            for y in 1..=2 {
                let start = (date.year() + y) * 12;
                quote(start, start + 11);
            }
        }
    }
    std::fs::write(dir.join("quotes.csv"), csv).unwrap();

    let last = *dates.last().unwrap();
    let ttf_m1 = curves[2][&(month_index(last) + 1)].exp();
    let strike = (ttf_m1 * 100.0).round() / 100.0;
    // heat rate putting the DE / TTF spark spread at the money
    let heat_rate = (curves[0][&(month_index(last) + 1)].exp() / ttf_m1 * 100.0).round() / 100.0;

    std::fs::write(
        dir.join("run.toml"),
        format!(
            "seed = 42\nquotes = \"quotes.csv\"\nout = \"out\"\ndt = {DT}\nmonths = {BUCKETS}\ncurve_months = 24\n\
             outlier_k = 4.0\nthreshold = 0.99\nn_paths = 1000\nhorizon_days = 60\nshort_horizon_days = 20\n\
             short_horizon_paths = 400\nspot_days = 60\nrate = 0.0\nsanity_z = 5.0\n\
             vpp = \"vpp.toml\"\nswing = \"swing.toml\"\nstorage = \"storage.toml\"\n"
        ),
    )
    .unwrap();
    std::fs::write(
        dir.join("vpp.toml"),
        format!(
            "power = \"DE\"\nfuel = \"TTF\"\nstart_day = 1\nend_day = 31\nt_on = 4\nt_off = 4\n\
             q_min = 180.0\nq_max = 360.0\nS_u = 2000.0\nS_d = 7000.0\nH = {heat_rate}\nhours_per_day = 24\n\
             sweep = [1, 4, 16, 24, 54, 96, 124, 160]\n"
        ),
    )
    .unwrap();
    std::fs::write(
        dir.join("swing.toml"),
        format!(
            "market = \"TTF\"\nstart_day = 1\nend_day = 31\nu_max = 10\nd_max = 10\nK = {strike}\nQ = 1.0\n\
             sweep = [1, 5, 10, 15, 20, 25, 30, 31]\n"
        ),
    )
    .unwrap();
    std::fs::write(
        dir.join("storage.toml"),
        "market = \"TTF\"\nstart_day = 1\nend_day = 366\nv_min = 0.0\nv_max = 250000.0\nv_0 = 100000.0\n\
         v_target = 100000.0\ni_min = -8000.0\ni_max = 8000.0\npenalty_scale = 2.0\n",
    )
    .unwrap();
    println!("fixtures written to {}", dir.display());
}
