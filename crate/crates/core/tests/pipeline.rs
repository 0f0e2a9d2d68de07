//! Quotes generated from a known two-factor model run through ingestion,
//! bootstrapping, calibration and simulation; the fitted model must recover
//! the generating volatilities.

use std::collections::HashMap;
use std::fmt::Write;

use chrono::{Datelike, NaiveDate, Weekday};
use hjm_core::marketdata::{month_end, month_index, month_start};
use hjm_core::simulation::{sanity_check, simulate_fixed_delivery, FixedDeliverySpec, SimConfig};
use hjm_core::{
    bootstrap_by_date, build_relative_panel, build_sigma_star, estimate_covariance, log_returns, parse_quotes, pca,
    select_factors, PanelLayout,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const DT: f64 = 1.0 / 252.0;
const TENORS: usize = 6;
const QUOTED: i32 = 8;

/// Annualized loadings of relative month `h` on the two factors.
fn true_sigma(h: usize) -> [f64; 2] {
    let h = h.min(TENORS - 1) as f64;
    [0.5 * (-0.25 * h).exp() + 0.15, 0.2 * (h - 2.5) / 2.5]
}

fn synthetic_quotes(seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut log_price: HashMap<i32, f64> = HashMap::new();
    let mut csv = String::from("trading_date,market,delivery_start,delivery_end,price\n");
    let mut date = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
    let last = NaiveDate::from_ymd_opt(2021, 12, 31).unwrap();
    let mut first = true;
    while date <= last {
        if matches!(date.weekday(), Weekday::Sat | Weekday::Sun) {
            date = date.succ_opt().unwrap();
            continue;
        }
        let m = month_index(date);
        let z: [f64; 2] = [StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)];
        for c in m..m + QUOTED {
            let s = true_sigma((c - m) as usize);
            let entry = log_price.entry(c).or_insert_with(|| (50.0 + 5.0 * (c as f64).sin()).ln());
            if !first {
                let var = s[0] * s[0] + s[1] * s[1];
                *entry += -0.5 * var * DT + DT.sqrt() * (s[0] * z[0] + s[1] * z[1]);
            }
            writeln!(csv, "{date},DE,{},{},{:.8}", month_start(c), month_end(c), entry.exp()).unwrap();
        }
        first = false;
        date = date.succ_opt().unwrap();
    }
    csv
}

#[test]
fn calibration_recovers_generating_model_and_simulation_matches_it() {
    let batch = parse_quotes(synthetic_quotes(2024).as_bytes()).unwrap();
    assert!(batch.rejected.is_empty());
    let (reports, failures) = bootstrap_by_date(&batch.quotes, QUOTED as usize);
    assert!(failures.is_empty());
    let curves: Vec<_> = reports.into_iter().map(|r| r.curve).collect();
    let layout = PanelLayout {
        months: TENORS as u32,
        quarters: 0,
        years: 0,
    };
    let panel = build_relative_panel(&batch.quotes, &curves, &layout).unwrap();
    let returns = log_returns(&panel, DT).unwrap();
    let cov = estimate_covariance(&returns).unwrap();
    // Two years of weekdays less the masked month rolls.
    assert!(cov.n_obs > 480, "{}", cov.n_obs);

    let eig = pca(&cov).unwrap();
    assert_eq!(select_factors(&eig.values, 0.999).unwrap(), 2);
    let model = build_sigma_star(&eig, 2, DT).unwrap();

    // Sample variance of n draws has relative standard error sqrt(2 / n).
    let tol = 4.0 * (2.0 / cov.n_obs as f64).sqrt();
    for h in 0..TENORS {
        let s = true_sigma(h);
        let expected = s[0] * s[0] + s[1] * s[1];
        let fitted: f64 = model.sigma_star[h].iter().map(|x| x * x).sum();
        assert!(
            (fitted / expected - 1.0).abs() < tol,
            "M{h}: fitted {fitted}, generated {expected}"
        );
    }
    let corr = |a: [f64; 2], b: [f64; 2]| (a[0] * b[0] + a[1] * b[1]) / (a[0].hypot(a[1]) * b[0].hypot(b[1]));
    let fitted_corr = |i: usize, j: usize| {
        let (a, b) = (&model.sigma_star[i], &model.sigma_star[j]);
        let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>();
        dot(a, b) / (dot(a, a) * dot(b, b)).sqrt()
    };
    assert!((fitted_corr(0, TENORS - 1) - corr(true_sigma(0), true_sigma(TENORS - 1))).abs() < 0.1);

    let initial: Vec<f64> = panel.prices.last().unwrap().iter().map(|p| p.unwrap()).collect();
    let spec = FixedDeliverySpec {
        market: "DE".into(),
        initial: initial.clone(),
    };
    let paths = simulate_fixed_delivery(&model, &[spec], &SimConfig::new(9, 20_000, DT, 20.0 * DT)).unwrap();
    let report = sanity_check(&paths, &model).unwrap();
    assert!(report.max_z_score() < 5.0, "{}", report.max_z_score());
    let last = paths.n_times() - 1;
    for (k, x0) in initial.iter().enumerate() {
        let xs = paths.cross_section(last, k);
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((mean - x0).abs() < 5.0 * sd / n.sqrt(), "bucket {k}: mean {mean}, start {x0}");
    }
}
