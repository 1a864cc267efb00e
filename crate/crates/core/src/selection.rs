//! Held-out RMSE comparison of the four candidate predictor sets.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_param, Error, Result};
use crate::ingest::{build_features, split_train_test, FeatureColumn, WeeklySeries};
use crate::mlp::{predict, rmse, train, NetworkConfig};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateSpec {
    pub model_id: u8,
    pub columns: Vec<FeatureColumn>,
}

/// Models 1-4, in order.
pub fn enumerate_candidates() -> Vec<CandidateSpec> {
    use FeatureColumn::{MaxDaily as D, Precip as X};
    vec![
        CandidateSpec {
            model_id: 1,
            columns: vec![X { lag: 0 }, X { lag: 1 }, X { lag: 2 }],
        },
        CandidateSpec {
            model_id: 2,
            columns: vec![X { lag: 0 }, X { lag: 1 }, D { lag: 0 }],
        },
        CandidateSpec {
            model_id: 3,
            columns: vec![X { lag: 0 }, X { lag: 1 }, X { lag: 2 }, D { lag: 0 }],
        },
        CandidateSpec {
            model_id: 4,
            columns: vec![X { lag: 0 }, X { lag: 1 }, X { lag: 2 }, D { lag: 0 }, D { lag: 1 }],
        },
    ]
}

pub fn candidate(model_id: u8) -> Result<CandidateSpec> {
    enumerate_candidates()
        .into_iter()
        .find(|c| c.model_id == model_id)
        .ok_or_else(|| Error::InvalidParameter(format!("unknown model id {model_id}; expected 1-4")))
}

/// Trains `spec` on the first `fraction` of the lagged series and returns
/// the RMSE on the remaining weeks. `config.input_dim` is overridden.
pub fn evaluate_candidate(series: &WeeklySeries, spec: &CandidateSpec, config: &NetworkConfig, fraction: f64) -> Result<f64> {
    let frame = build_features(series, &spec.columns)?;
    let (train_frame, test_frame) = split_train_test(&frame, fraction)?;
    let cfg = NetworkConfig {
        input_dim: spec.columns.len(),
        ..config.clone()
    };
    let net = train(&train_frame, &cfg)?;
    rmse(&predict(&net, &test_frame)?, &test_frame.target)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub model_id: u8,
    pub columns: Vec<FeatureColumn>,
    /// Median over `per_seed`.
    pub rmse: f64,
    pub per_seed: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub candidates: Vec<CandidateScore>,
    pub winner: u8,
    pub seeds: Vec<u64>,
    pub fraction: f64,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Winner by minimum RMSE; ties go to the smaller model id.
pub fn select_best(scores: &[CandidateScore]) -> Result<u8> {
    ensure_param!(!scores.is_empty(), "no candidates evaluated");
    if let Some(bad) = scores.iter().find(|s| !s.rmse.is_finite()) {
        return Err(Error::Numerical(format!("model {} has non-finite RMSE", bad.model_id)));
    }
    let best = scores
        .iter()
        .min_by(|a, b| a.rmse.total_cmp(&b.rmse).then(a.model_id.cmp(&b.model_id)))
        .expect("non-empty");
    Ok(best.model_id)
}

/// Evaluates every candidate under each seed (the same seed for all
/// candidates within a round) and picks the winner on median RMSE.
pub fn run_selection(
    series: &WeeklySeries,
    candidates: &[CandidateSpec],
    config: &NetworkConfig,
    fraction: f64,
    seeds: &[u64],
) -> Result<SelectionReport> {
    ensure_param!(!seeds.is_empty(), "at least one seed is required");
    let mut scores = Vec::with_capacity(candidates.len());
    for spec in candidates {
        let per_seed = seeds
            .iter()
            .map(|&seed| evaluate_candidate(series, spec, &NetworkConfig { seed, ..config.clone() }, fraction))
            .collect::<Result<Vec<_>>>()?;
        scores.push(CandidateScore {
            model_id: spec.model_id,
            columns: spec.columns.clone(),
            rmse: median(&per_seed),
            per_seed,
        });
    }
    let winner = select_best(&scores)?;
    Ok(SelectionReport {
        candidates: scores,
        winner,
        seeds: seeds.to_vec(),
        fraction,
    })
}

/// Writes `model_id,rmse,winner`.
pub fn write_selection_csv<W: Write>(writer: W, report: &SelectionReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["model_id", "rmse", "winner"])?;
    for c in &report.candidates {
        w.write_record([
            c.model_id.to_string(),
            c.rmse.to_string(),
            (c.model_id == report.winner).to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct SelectionRow {
    pub model_id: u8,
    pub rmse: f64,
    pub winner: bool,
}

pub fn read_selection_csv<R: std::io::Read>(reader: R) -> Result<Vec<SelectionRow>> {
    let mut rdr = csv::Reader::from_reader(reader);
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Week;
    use chrono::NaiveDate;

    fn scores(rmse: &[f64]) -> Vec<CandidateScore> {
        rmse.iter()
            .enumerate()
            .map(|(i, &r)| CandidateScore {
                model_id: i as u8 + 1,
                columns: vec![],
                rmse: r,
                per_seed: vec![r],
            })
            .collect()
    }

    #[test]
    fn candidate_sets() {
        let c = enumerate_candidates();
        assert_eq!(c.len(), 4);
        let names: Vec<String> = c[2].columns.iter().map(|c| c.to_string()).collect();
        assert_eq!(names, ["X_t", "X_t-1", "X_t-2", "D_t"]);
        assert_eq!(c[3].columns.len(), 5);
        assert!(candidate(5).is_err());
    }

    #[test]
    fn table_winners() {
        assert_eq!(select_best(&scores(&[0.454, 0.463, 0.453, 0.456])).unwrap(), 3);
        assert_eq!(select_best(&scores(&[0.470, 0.471, 0.467, 0.461])).unwrap(), 4);
        assert_eq!(select_best(&scores(&[0.5; 4])).unwrap(), 1);
        assert!(select_best(&[]).is_err());
        assert!(select_best(&scores(&[0.5, f64::NAN])).is_err());
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn constant_target_is_learned() {
        let start = NaiveDate::from_ymd_opt(2002, 1, 7).unwrap();
        let weeks: Vec<Week> = (0..80)
            .map(|i| Week {
                week_start: start + chrono::Days::new(7 * i),
                x: (i % 7) as f64 * 3.0,
                d: (i % 7) as f64,
                n: 0.4,
            })
            .collect();
        let series = WeeklySeries::new(weeks).unwrap();
        let cfg = NetworkConfig {
            hidden_layers: vec![8],
            dropout_rate: 0.0,
            l2_lambda: 0.0,
            epochs: 300,
            batch_size: 16,
            learning_rate: 1e-2,
            ..Default::default()
        };
        let r = evaluate_candidate(&series, &candidate(2).unwrap(), &cfg, 0.8).unwrap();
        assert!(r < 0.02, "{r}");
        assert_eq!(r, evaluate_candidate(&series, &candidate(2).unwrap(), &cfg, 0.8).unwrap());
    }

    #[test]
    fn csv_round_trip() {
        let report = SelectionReport {
            candidates: scores(&[0.3, 0.2]),
            winner: 2,
            seeds: vec![0],
            fraction: 0.8,
        };
        let mut buf = Vec::new();
        write_selection_csv(&mut buf, &report).unwrap();
        let rows = read_selection_csv(buf.as_slice()).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows[1].winner && !rows[0].winner);
        assert_eq!(rows[0].rmse, 0.3);
    }
}
