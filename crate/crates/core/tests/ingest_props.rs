use chrono::{Days, NaiveDate};
use proptest::prelude::*;

use claimrisk::ingest::{
    aggregate_weekly, build_features, parse_columns, parse_daily_reader, split_train_test, write_daily_csv,
    ClaimAggregation, DailyRecord, FeatureColumn, Week, WeeklySeries,
};

fn start() -> NaiveDate {
    NaiveDate::from_ymd_opt(2002, 1, 1).unwrap()
}

fn days(precip: &[f64], claims: &[f64]) -> Vec<DailyRecord> {
    precip
        .iter()
        .zip(claims)
        .enumerate()
        .map(|(i, (&p, &c))| DailyRecord {
            date: start() + Days::new(i as u64),
            precip_mm: p,
            claims: c,
            insured: None,
        })
        .collect()
}

fn series(xs: &[(f64, f64, f64)]) -> WeeklySeries {
    let weeks = xs
        .iter()
        .enumerate()
        .map(|(i, &(x, d, n))| Week {
            week_start: start() + Days::new(7 * i as u64),
            x,
            d,
            n,
        })
        .collect();
    WeeklySeries::new(weeks).unwrap()
}

#[test]
fn constant_series_round_trip() {
    let c = 2.75;
    let w = aggregate_weekly(&days(&[c; 35], &[c; 35]), None, ClaimAggregation::Mean).unwrap();
    assert_eq!(w.len(), 5);
    for wk in w.weeks() {
        assert!((wk.x - 7.0 * c).abs() < 1e-12);
        assert_eq!(wk.d, c);
        assert!((wk.n - c).abs() < 1e-12);
    }
}

#[test]
fn sum_aggregation_totals_claims() {
    let claims: Vec<f64> = (1..=7).map(f64::from).collect();
    let w = aggregate_weekly(&days(&[0.0; 7], &claims), None, ClaimAggregation::Sum).unwrap();
    assert_eq!(w.weeks()[0].n, 28.0);
}

#[test]
fn lag_shift_identity_and_row_counts() {
    let s = series(&(0..10).map(|i| (i as f64 * 2.0, i as f64, 0.1)).collect::<Vec<_>>());
    let f = build_features(&s, &parse_columns(&["X_t"]).unwrap()).unwrap();
    assert_eq!((f.len(), f.width()), (10, 1));
    let cols = parse_columns(&["X_t", "X_t-1", "X_t-2"]).unwrap();
    let f = build_features(&s, &cols).unwrap();
    assert_eq!(f.len(), 8);
    // row for week 5 sits at index 3 after dropping two leading rows
    assert_eq!(f.rows[3][1], s.weeks()[4].x);
    assert_eq!(f.week_start[3], s.weeks()[5].week_start);
}

#[test]
fn lag_beyond_limit_is_rejected() {
    assert!(parse_columns(&["X_t-6"]).is_err());
    assert!(parse_columns(&["Y_t"]).is_err());
    assert_eq!(parse_columns(&["D_t-5"]).unwrap(), vec![FeatureColumn::MaxDaily { lag: 5 }]);
}

#[test]
fn chronological_ceiling_split() {
    let s = series(&(0..100).map(|i| (i as f64, i as f64 * 0.5, 0.2)).collect::<Vec<_>>());
    let f = build_features(&s, &parse_columns(&["X_t"]).unwrap()).unwrap();
    let (tr, te) = split_train_test(&f, 0.8).unwrap();
    assert_eq!((tr.len(), te.len()), (80, 20));
    assert!(tr.week_start.last().unwrap() < te.week_start.first().unwrap());
    assert!(split_train_test(&f, 1.0).is_err());

    let s = series(&(0..10).map(|i| (i as f64, 0.0, 0.2)).collect::<Vec<_>>());
    let f = build_features(&s, &parse_columns(&["X_t"]).unwrap()).unwrap();
    let (tr, te) = split_train_test(&f, 0.75).unwrap();
    assert_eq!((tr.len(), te.len()), (8, 2));
}

fn daily_strategy() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((0.0f64..80.0, 0.0f64..5.0), 7..120)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn weekly_max_never_exceeds_total(rows in daily_strategy()) {
        let (p, c): (Vec<f64>, Vec<f64>) = rows.into_iter().unzip();
        let w = aggregate_weekly(&days(&p, &c), None, ClaimAggregation::Mean).unwrap();
        prop_assert_eq!(w.len(), p.len() / 7);
        for (k, wk) in w.weeks().iter().enumerate() {
            prop_assert!(wk.d <= wk.x);
            let block = &p[7 * k..7 * k + 7];
            prop_assert!((wk.x - block.iter().sum::<f64>()).abs() < 1e-9);
        }
    }

    #[test]
    fn features_are_deterministic(rows in prop::collection::vec((0.0f64..80.0, 0.0f64..1.0, 0.0f64..3.0), 12..60)) {
        let weeks: Vec<(f64, f64, f64)> = rows.into_iter().map(|(x, frac, n)| (x, x * frac, n)).collect();
        let s = series(&weeks);
        let cols = parse_columns(&["X_t", "X_t-1", "D_t", "D_t-1"]).unwrap();
        let a = build_features(&s, &cols).unwrap();
        let b = build_features(&s, &cols).unwrap();
        prop_assert_eq!(serde_json::to_vec(&a).unwrap(), serde_json::to_vec(&b).unwrap());
        prop_assert_eq!(a.len(), s.len() - 1);
    }

    #[test]
    fn train_split_is_standardized(rows in prop::collection::vec((0.0f64..80.0, 0.0f64..1.0), 20..80)) {
        let weeks: Vec<(f64, f64, f64)> = rows.into_iter().map(|(x, frac)| (x, x * frac, 0.3)).collect();
        let s = series(&weeks);
        let f = build_features(&s, &parse_columns(&["X_t", "D_t"]).unwrap()).unwrap();
        let (tr, _) = split_train_test(&f, 0.8).unwrap();
        for j in 0..2 {
            let col: Vec<f64> = tr.rows.iter().map(|r| r[j]).collect();
            let n = col.len() as f64;
            let mean = col.iter().sum::<f64>() / n;
            let sd = tr.scaler.as_ref().unwrap().sd[j];
            prop_assert!(mean.abs() < 1e-9);
            if sd > 1e-6 {
                let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
                prop_assert!((var - 1.0).abs() < 1e-9, "var {}", var);
            }
        }
    }

    #[test]
    fn daily_csv_round_trip(rows in daily_strategy()) {
        let (p, c): (Vec<f64>, Vec<f64>) = rows.into_iter().unzip();
        let d = days(&p, &c);
        let mut buf = Vec::new();
        write_daily_csv(&mut buf, &d).unwrap();
        let back = parse_daily_reader(buf.as_slice(), "mem").unwrap();
        prop_assert_eq!(back, d);
    }
}
