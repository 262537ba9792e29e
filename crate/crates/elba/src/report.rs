//! CSV report rows, the structured summary and merging by config hash.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use elba_core::metrics::MetricsReport;
use elba_core::QaType;

use crate::io::write_file;

pub const AGGREGATE_SEED: &str = "mean";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub arm: String,
    pub split: String,
    /// A seed, or `mean` for the aggregate over seeds.
    pub seed: String,
    #[serde(rename = "SR")]
    pub sr: f64,
    #[serde(rename = "SR_TLW")]
    pub sr_tlw: f64,
    #[serde(rename = "GC")]
    pub gc: f64,
    #[serde(rename = "GC_TLW")]
    pub gc_tlw: f64,
    pub mean_q: f64,
    pub std_q: f64,
    pub n_episodes: usize,
    pub config_hash: String,
}

pub const CSV_COLUMNS: [&str; 11] = [
    "arm",
    "split",
    "seed",
    "SR",
    "SR_TLW",
    "GC",
    "GC_TLW",
    "mean_q",
    "std_q",
    "n_episodes",
    "config_hash",
];

fn row(r: &MetricsReport, config_hash: &str) -> CsvRow {
    CsvRow {
        arm: r.arm.clone(),
        split: r.split.clone(),
        seed: r.seed.map(|s| s.to_string()).unwrap_or_else(|| AGGREGATE_SEED.to_string()),
        sr: r.sr,
        sr_tlw: r.sr_tlw,
        gc: r.gc,
        gc_tlw: r.gc_tlw,
        mean_q: r.mean_q,
        std_q: r.std_q,
        n_episodes: r.n_episodes,
        config_hash: config_hash.to_string(),
    }
}

/// Per-seed rows followed by the aggregate row.
pub fn rows_for(report: &MetricsReport, config_hash: &str) -> Vec<CsvRow> {
    let mut out: Vec<CsvRow> = report.per_seed.iter().map(|r| row(r, config_hash)).collect();
    out.push(row(report, config_hash));
    out
}

pub fn encode_csv(rows: &[CsvRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record(CSV_COLUMNS)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().context("flushing csv")
}

pub fn decode_csv(bytes: &[u8]) -> Result<Vec<CsvRow>> {
    let mut r = csv::Reader::from_reader(bytes);
    let headers: Vec<String> = r.headers()?.iter().map(|h| h.to_string()).collect();
    if headers != CSV_COLUMNS {
        bail!("unexpected csv columns {headers:?}");
    }
    r.deserialize().map(|row| row.context("parsing csv row")).collect()
}

pub fn read_csv(path: &Path) -> Result<Vec<CsvRow>> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    decode_csv(&bytes).with_context(|| format!("in {}", path.display()))
}

/// Mirrors the CSV and adds what does not fit its columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub command: String,
    pub n_seeds: usize,
    pub rows: Vec<CsvRow>,
    /// Per-cell percentage of trajectory steps spent on each question type.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub question_types: BTreeMap<String, BTreeMap<String, f64>>,
}

pub fn type_map(dist: &[f64; 6]) -> BTreeMap<String, f64> {
    QaType::ALL.iter().zip(dist).map(|(t, v)| (t.name().to_string(), *v)).collect()
}

/// Writes `<stem>.csv` and `<stem>.json`, then reads both back.
pub fn write_report(dir: &Path, stem: &str, summary: &Summary) -> Result<()> {
    let csv_path = dir.join(format!("{stem}.csv"));
    let json_path = dir.join(format!("{stem}.json"));
    write_file(&csv_path, &encode_csv(&summary.rows)?)?;
    write_file(&json_path, format!("{}\n", serde_json::to_string_pretty(summary)?).as_bytes())?;
    if read_csv(&csv_path)? != summary.rows {
        bail!("{} does not read back", csv_path.display());
    }
    let back: Summary = serde_json::from_slice(&std::fs::read(&json_path)?)?;
    if back != *summary {
        bail!("{} does not read back", json_path.display());
    }
    Ok(())
}

/// Union of rows keyed by (config hash, split, seed), grouped by config hash
/// in first-seen order. Equal duplicates collapse; conflicting ones are an error.
pub fn merge_rows(inputs: &[Vec<CsvRow>]) -> Result<Vec<CsvRow>> {
    let mut groups: Vec<(String, Vec<CsvRow>)> = Vec::new();
    let mut seen: BTreeMap<(String, String, String), CsvRow> = BTreeMap::new();
    for rows in inputs {
        for r in rows {
            let key = (r.config_hash.clone(), r.split.clone(), r.seed.clone());
            if let Some(prev) = seen.get(&key) {
                if !same_numbers(prev, r) {
                    bail!(
                        "conflicting rows for config hash {} split {} seed {}",
                        r.config_hash,
                        r.split,
                        r.seed
                    );
                }
                continue;
            }
            seen.insert(key, r.clone());
            match groups.iter_mut().find(|(h, _)| *h == r.config_hash) {
                Some((_, g)) => g.push(r.clone()),
                None => groups.push((r.config_hash.clone(), vec![r.clone()])),
            }
        }
    }
    Ok(groups.into_iter().flat_map(|(_, g)| g).collect())
}

fn same_numbers(a: &CsvRow, b: &CsvRow) -> bool {
    a.sr == b.sr
        && a.sr_tlw == b.sr_tlw
        && a.gc == b.gc
        && a.gc_tlw == b.gc_tlw
        && a.mean_q == b.mean_q
        && a.std_q == b.std_q
        && a.n_episodes == b.n_episodes
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(arm: &str, gc: f64) -> MetricsReport {
        let one = |seed| MetricsReport {
            arm: arm.into(),
            split: "test_seen".into(),
            seed: Some(seed),
            sr: 0.5,
            sr_tlw: 0.25,
            gc,
            gc_tlw: gc / 2.0,
            mean_q: 1.0,
            std_q: 0.0,
            n_episodes: 4,
            seeds: vec![seed],
            per_seed: vec![],
        };
        elba_core::metrics::mean_of_reports(vec![one(0), one(1)]).unwrap()
    }

    #[test]
    fn csv_has_the_documented_columns_and_round_trips() {
        let rows = rows_for(&report("baseline", 0.1), "h1");
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[2].seed, AGGREGATE_SEED);
        let bytes = encode_csv(&rows).unwrap();
        let header = String::from_utf8(bytes.clone()).unwrap().lines().next().unwrap().to_string();
        assert_eq!(header, CSV_COLUMNS.join(","));
        assert_eq!(decode_csv(&bytes).unwrap(), rows);
        assert_eq!(decode_csv(&encode_csv(&[]).unwrap()).unwrap(), vec![]);
        assert!(decode_csv(b"a,b\n1,2\n").is_err());
    }

    #[test]
    fn merge_groups_by_hash_and_collapses_duplicates() {
        let a = rows_for(&report("baseline", 0.1), "h1");
        let b = rows_for(&report("elba_e", 0.2), "h2");
        let merged = merge_rows(&[a.clone(), b.clone(), a.clone()]).unwrap();
        assert_eq!(merged.len(), 6);
        assert!(merged[..3].iter().all(|r| r.config_hash == "h1"));
        let mut conflict = a.clone();
        conflict[0].gc = 0.9;
        assert!(merge_rows(&[a, conflict]).is_err());
    }

    #[test]
    fn summary_files_read_back() {
        let dir = tempfile::tempdir().unwrap();
        let s = Summary {
            command: "eval".into(),
            n_seeds: 2,
            rows: rows_for(&report("baseline", 0.1), "h"),
            question_types: BTreeMap::from([("qa=oracle".to_string(), type_map(&[0.1, 0.0, 0.0, 0.2, 0.0, 0.0]))]),
        };
        write_report(dir.path(), "report", &s).unwrap();
        assert!(dir.path().join("report.csv").exists());
        let back: Summary = serde_json::from_slice(&std::fs::read(dir.path().join("report.json")).unwrap()).unwrap();
        assert_eq!(back, s);
    }
}
