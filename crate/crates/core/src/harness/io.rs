//! `results.csv` and `matrix.csv`.
//!
//! results.csv: `strategy,seed,round,labelled_count,test_accuracy,acq_seconds,candidate_count`,
//! rows ordered by strategy (canonical order), seed, round. Optional columns
//! are empty when absent. matrix.csv: header `strategy,<names...>`, then one
//! row per strategy. Floats use the shortest representation that parses
//! back to the same value.

use std::collections::BTreeMap;
use std::path::Path;

use super::compare::ComparisonMatrix;
use super::{RoundRecord, RunResult};
use crate::acquisition::Strategy;
use crate::error::{Error, Result};

const RESULTS_HEADER: [&str; 7] =
    ["strategy", "seed", "round", "labelled_count", "test_accuracy", "acq_seconds", "candidate_count"];

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format(path.display().to_string(), format!("{other:?}")),
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn parse_optional<T: std::str::FromStr>(s: &str) -> std::result::Result<Option<T>, T::Err> {
    if s.is_empty() {
        Ok(None)
    } else {
        s.parse().map(Some)
    }
}

/// Results sorted into file order.
pub fn sort_results(results: &mut [RunResult]) {
    results.sort_by_key(|r| (r.strategy, r.seed));
}

pub fn write_results_csv(results: &[RunResult], path: &Path) -> Result<()> {
    let mut sorted = results.to_vec();
    sort_results(&mut sorted);
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(RESULTS_HEADER).map_err(|e| csv_error(path, e))?;
    for run in &sorted {
        for rec in &run.records {
            w.write_record([
                run.strategy.name().to_string(),
                run.seed.to_string(),
                rec.round.to_string(),
                rec.labelled_count.to_string(),
                rec.test_accuracy.to_string(),
                opt(rec.acq_seconds),
                opt(rec.candidate_count),
            ])
            .map_err(|e| csv_error(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Runs grouped by (strategy, seed). The config hash is not stored in the
/// file and comes back empty; per-round selections are not stored either.
pub fn read_results_csv(path: &Path) -> Result<Vec<RunResult>> {
    let src = path.display().to_string();
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header = r.headers().map_err(|e| csv_error(path, e))?.clone();
    if !header.iter().eq(RESULTS_HEADER) {
        return Err(Error::format(src, "unexpected results header"));
    }
    let mut runs: BTreeMap<(Strategy, u64), Vec<RoundRecord>> = BTreeMap::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let bad = |what: &str| Error::format(src.clone(), format!("line {}: bad {what}", line + 2));
        let strategy: Strategy = rec[0].parse().map_err(|_| bad("strategy"))?;
        let seed: u64 = rec[1].parse().map_err(|_| bad("seed"))?;
        let record = RoundRecord {
            round: rec[2].parse().map_err(|_| bad("round"))?,
            labelled_count: rec[3].parse().map_err(|_| bad("labelled_count"))?,
            test_accuracy: rec[4].parse().map_err(|_| bad("test_accuracy"))?,
            acq_seconds: parse_optional(&rec[5]).map_err(|_| bad("acq_seconds"))?,
            candidate_count: parse_optional(&rec[6]).map_err(|_| bad("candidate_count"))?,
            selected: vec![],
        };
        runs.entry((strategy, seed)).or_default().push(record);
    }
    runs.into_iter()
        .map(|((strategy, seed), mut records)| {
            records.sort_by_key(|r| r.round);
            if records.iter().enumerate().any(|(i, r)| r.round != i) {
                return Err(Error::format(src.clone(), format!("{strategy} seed {seed}: rounds are not 0..R")));
            }
            Ok(RunResult { config_hash: String::new(), strategy, seed, records })
        })
        .collect()
}

pub fn write_matrix_csv(matrix: &ComparisonMatrix, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut header = vec!["strategy".to_string()];
    header.extend(matrix.strategies.iter().map(|s| s.name().to_string()));
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for (s, row) in matrix.strategies.iter().zip(&matrix.values) {
        let mut rec = vec![s.name().to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_matrix_csv(path: &Path) -> Result<ComparisonMatrix> {
    let src = path.display().to_string();
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header = r.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.get(0) != Some("strategy") {
        return Err(Error::format(src, "matrix header must start with \"strategy\""));
    }
    let strategies = header.iter().skip(1).map(str::parse).collect::<Result<Vec<Strategy>>>()?;
    let mut values = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        if rec.get(0) != strategies.get(i).map(|s| s.name()) {
            return Err(Error::format(src, format!("row {} does not match header order", i + 1)));
        }
        let row = rec
            .iter()
            .skip(1)
            .map(|v| v.parse::<f64>().map_err(|_| Error::format(src.clone(), format!("bad value {v:?}"))))
            .collect::<Result<Vec<_>>>()?;
        values.push(row);
    }
    if values.len() != strategies.len() {
        return Err(Error::format(src, "matrix is not square"));
    }
    Ok(ComparisonMatrix { strategies, values })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(strategy: Strategy, seed: u64, rounds: usize) -> RunResult {
        RunResult {
            config_hash: "h".into(),
            strategy,
            seed,
            records: (0..rounds)
                .map(|round| RoundRecord {
                    round,
                    labelled_count: 20 + 5 * round,
                    test_accuracy: 0.1 + 0.123_456_789 * round as f64 / 3.0,
                    acq_seconds: (round % 2 == 0).then_some(0.25 * round as f64),
                    candidate_count: (strategy == Strategy::AlfaMix).then_some(round * 7),
                    selected: vec![],
                })
                .collect(),
        }
    }

    #[test]
    fn results_round_trip_and_order() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("results.csv");
        let results = vec![run(Strategy::AlfaMix, 1, 3), run(Strategy::Random, 1, 3)];
        write_results_csv(&results, &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 7);
        assert_eq!(lines[0], RESULTS_HEADER.join(","));
        assert!(lines[1].starts_with("random,1,0,20,0.1,0,"));
        assert!(lines[4].starts_with("alfamix,1,0,"));
        let back = read_results_csv(&p).unwrap();
        let strip = |mut r: RunResult| {
            r.config_hash.clear();
            r
        };
        assert_eq!(back, vec![strip(results[1].clone()), strip(results[0].clone())]);

        write_results_csv(&[], &p).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap().lines().count(), 1);
        assert!(read_results_csv(&p).unwrap().is_empty());
        assert!(matches!(
            write_results_csv(&results, &dir.path().join("no/such/dir.csv")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn matrix_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("matrix.csv");
        let m = ComparisonMatrix {
            strategies: vec![Strategy::Random, Strategy::AlfaMix],
            values: vec![vec![0.0, 0.2], vec![1.0 / 3.0, 0.0]],
        };
        write_matrix_csv(&m, &p).unwrap();
        assert!(std::fs::read_to_string(&p).unwrap().starts_with("strategy,random,alfamix\n"));
        assert_eq!(read_matrix_csv(&p).unwrap(), m);
    }
}
