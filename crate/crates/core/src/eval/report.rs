use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::{apcer_for, ErrorCounts, ScoredSample};
use crate::dataio::Label;
use crate::error::{Error, Result};
use crate::io_util::write_atomic;
use crate::spoofnet::check_threshold;
use crate::training::HyperParams;

/// Threshold rows of the paper's error-rate tables.
pub const DEFAULT_THRESHOLDS: [f64; 6] = [30.0, 40.0, 50.0, 70.0, 80.0, 90.0];
pub const COMBINED: &str = "combined";
pub const REPORT_HEADER: &str = "dataset,threshold,apcer,bpcer,n_attack,n_bonafide";
pub const SCORE_HEADER: &str = "image_path,dataset,label,score,stage2_ran";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub dataset: String,
    pub threshold: f64,
    pub apcer: Option<f64>,
    pub bpcer: Option<f64>,
    pub n_attack: usize,
    pub n_bonafide: usize,
    pub counts: ErrorCounts,
    /// APCER per attack species, for information only.
    pub apcer_by_species: BTreeMap<String, Option<f64>>,
}

impl ReportRow {
    fn new(dataset: &str, threshold: f64, counts: ErrorCounts, scored: &[&ScoredSample]) -> Self {
        let owned: Vec<ScoredSample> = scored.iter().map(|s| (*s).clone()).collect();
        let apcer_by_species = [Label::Printed, Label::Contact]
            .into_iter()
            .map(|l| (l.as_str().to_string(), apcer_for(&owned, l, threshold)))
            .collect();
        ReportRow {
            dataset: dataset.to_string(),
            threshold,
            apcer: counts.apcer(),
            bpcer: counts.bpcer(),
            n_attack: counts.n_attack,
            n_bonafide: counts.n_bonafide,
            counts,
            apcer_by_species,
        }
    }
}

/// Run metadata carried by the JSON mirror.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub protocol: String,
    pub seed: Option<u64>,
    pub hyperparameters: Option<HyperParams>,
    pub model_checksum: Option<String>,
    pub gate: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub meta: ReportMeta,
    pub rows: Vec<ReportRow>,
}

pub fn check_thresholds(thresholds: &[f64]) -> Result<()> {
    if thresholds.is_empty() {
        return Err(Error::Argument("at least one threshold is required".into()));
    }
    for &t in thresholds {
        check_threshold(t)?;
    }
    if thresholds.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Argument(format!(
            "thresholds must be strictly ascending: {thresholds:?}"
        )));
    }
    Ok(())
}

/// One row per threshold over a fixed score list.
pub fn threshold_sweep(
    dataset: &str,
    scored: &[&ScoredSample],
    thresholds: &[f64],
) -> Result<Vec<ReportRow>> {
    check_thresholds(thresholds)?;
    Ok(thresholds
        .iter()
        .map(|&t| {
            let counts = ErrorCounts::tally(scored.iter().copied(), t);
            ReportRow::new(dataset, t, counts, scored)
        })
        .collect())
}

/// Datasets in first-appearance order.
pub fn dataset_order(scored: &[ScoredSample]) -> Vec<String> {
    let mut names: Vec<String> = Vec::new();
    for s in scored {
        if !names.contains(&s.dataset) {
            names.push(s.dataset.clone());
        }
    }
    names
}

/// Per-dataset rows, then (optionally) a `combined` block whose counts are
/// pooled over all datasets before dividing.
pub fn report_from_scores(
    scored: &[ScoredSample],
    thresholds: &[f64],
    combined: bool,
) -> Result<Vec<ReportRow>> {
    check_thresholds(thresholds)?;
    let mut rows = Vec::new();
    for name in dataset_order(scored) {
        let subset: Vec<&ScoredSample> = scored.iter().filter(|s| s.dataset == name).collect();
        rows.extend(threshold_sweep(&name, &subset, thresholds)?);
    }
    if combined {
        let all: Vec<&ScoredSample> = scored.iter().collect();
        for &t in thresholds {
            let mut pooled = ErrorCounts::default();
            for r in rows.iter().filter(|r| r.threshold == t) {
                pooled.add(&r.counts);
            }
            rows.push(ReportRow::new(COMBINED, t, pooled, &all));
        }
    }
    Ok(rows)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(REPORT_HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.dataset,
                r.threshold,
                fmt_opt(r.apcer),
                fmt_opt(r.bpcer),
                r.n_attack,
                r.n_bonafide
            );
        }
        s
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Data(e.to_string()))
    }

    /// Writes `<stem>.csv` and `<stem>.json` next to each other.
    pub fn write(&self, csv_path: &Path) -> Result<()> {
        write_atomic(csv_path, self.to_csv().as_bytes())?;
        write_atomic(&csv_path.with_extension("json"), self.to_json()?.as_bytes())
    }

    pub fn row(&self, dataset: &str, threshold: f64) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.dataset == dataset && r.threshold == threshold)
    }
}

pub fn scores_to_csv(scored: &[ScoredSample]) -> String {
    let mut s = String::from(SCORE_HEADER);
    s.push('\n');
    for x in scored {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            x.image_path, x.dataset, x.label, x.score, x.stage2_ran
        );
    }
    s
}

pub fn write_scores(path: &Path, scored: &[ScoredSample]) -> Result<()> {
    write_atomic(path, scores_to_csv(scored).as_bytes())
}

pub fn parse_scores(text: &str, path: &Path) -> Result<Vec<ScoredSample>> {
    let err = |line: usize, message: String| Error::Manifest {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut out = Vec::new();
    let mut header_seen = false;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim_end();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !header_seen {
            if line != SCORE_HEADER {
                return Err(err(i + 1, format!("expected header `{SCORE_HEADER}`")));
            }
            header_seen = true;
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(err(i + 1, format!("expected 5 columns, found {}", f.len())));
        }
        let label: Label = f[2].parse().map_err(|e: String| err(i + 1, e))?;
        let score: f64 = f[3]
            .parse()
            .map_err(|_| err(i + 1, format!("bad score `{}`", f[3])))?;
        if !(0.0..=100.0).contains(&score) {
            return Err(err(i + 1, format!("score {score} outside [0, 100]")));
        }
        let stage2_ran: bool = f[4]
            .parse()
            .map_err(|_| err(i + 1, format!("bad flag `{}`", f[4])))?;
        out.push(ScoredSample {
            image_path: f[0].to_string(),
            dataset: f[1].to_string(),
            label,
            score,
            stage2_ran,
        });
    }
    if !header_seen {
        return Err(err(1, "missing header".into()));
    }
    Ok(out)
}

pub fn read_scores(path: &Path) -> Result<Vec<ScoredSample>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    parse_scores(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(dataset: &str, label: Label, score: f64) -> ScoredSample {
        ScoredSample {
            image_path: format!("{dataset}/{label}_{score}"),
            dataset: dataset.into(),
            label,
            score,
            stage2_ran: score >= 50.0,
        }
    }

    #[test]
    fn combined_pools_counts() {
        // a: 1 of 2 attacks accepted; b: 0 of 4
        let mut v = vec![
            s("a", Label::Printed, 60.0),
            s("a", Label::Printed, 10.0),
            s("a", Label::Live, 90.0),
        ];
        for i in 0..4 {
            v.push(s("b", Label::Contact, i as f64));
        }
        v.push(s("b", Label::Live, 95.0));
        let rows = report_from_scores(&v, &[50.0], true).unwrap();
        let report = EvalReport {
            rows,
            ..Default::default()
        };
        let c = report.row(COMBINED, 50.0).unwrap();
        assert!((c.apcer.unwrap() - 100.0 / 6.0).abs() < 1e-12);
        assert_eq!(report.row("a", 50.0).unwrap().apcer, Some(50.0));
        assert_eq!(report.row("b", 50.0).unwrap().apcer, Some(0.0));
    }

    #[test]
    fn single_dataset_equals_combined() {
        let v = vec![s("a", Label::Printed, 60.0), s("a", Label::Live, 40.0)];
        let rows = report_from_scores(&v, &DEFAULT_THRESHOLDS, true).unwrap();
        assert_eq!(rows.len(), 12);
        for (a, c) in rows[..6].iter().zip(&rows[6..]) {
            assert_eq!((a.apcer, a.bpcer, a.counts), (c.apcer, c.bpcer, c.counts));
        }
    }

    #[test]
    fn csv_round_trip_and_na() {
        let v = vec![s("a", Label::Live, 50.0)];
        let rows = threshold_sweep("a", &v.iter().collect::<Vec<_>>(), &[50.0, 50.0001]).unwrap();
        assert_eq!(rows[0].bpcer, Some(0.0));
        assert_eq!(rows[1].bpcer, Some(100.0));
        let report = EvalReport {
            rows,
            ..Default::default()
        };
        let csv = report.to_csv();
        assert_eq!(csv.lines().nth(1).unwrap(), "a,50,NA,0,0,1");

        let text = scores_to_csv(&v);
        assert_eq!(parse_scores(&text, Path::new("x")).unwrap(), v);
    }

    #[test]
    fn thresholds_must_ascend() {
        assert!(check_thresholds(&[50.0, 40.0]).is_err());
        assert!(check_thresholds(&[]).is_err());
        assert!(check_thresholds(&[-1.0]).is_err());
        check_thresholds(&DEFAULT_THRESHOLDS).unwrap();
    }

    #[test]
    fn score_dump_rejects_bad_lines() {
        let bad = format!("{SCORE_HEADER}\na,b,live,101,true\n");
        assert!(parse_scores(&bad, Path::new("x")).is_err());
        let bad = format!("{SCORE_HEADER}\na,b,alive,1,true\n");
        assert!(parse_scores(&bad, Path::new("x")).is_err());
    }
}
