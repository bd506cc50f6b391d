//! Presentation-attack error rates, threshold sweeps, and the
//! leave-one-dataset-out protocol.

mod metrics;
mod report;

use std::collections::BTreeSet;

use crate::dataio::{load_gray_image, Label, Manifest, SampleRecord, Subset};
use crate::error::{Error, Result};
use crate::seed::derive_seed;
use crate::spoofnet::{CascadeModel, NetworkSpec};
use crate::training::{train_cascade, CascadeTraining, HyperParams, Progress};

pub use metrics::{apcer, apcer_for, bpcer, ErrorCounts, ScoredSample};
pub use report::{
    check_thresholds, dataset_order, parse_scores, read_scores, report_from_scores, scores_to_csv,
    threshold_sweep, write_scores, EvalReport, ReportMeta, ReportRow, COMBINED, DEFAULT_THRESHOLDS,
    REPORT_HEADER, SCORE_HEADER,
};

/// Scores each record once, in order.
pub fn score_records(
    model: &CascadeModel,
    manifest: &Manifest,
    records: &[SampleRecord],
) -> Result<Vec<ScoredSample>> {
    records
        .iter()
        .map(|r| {
            let image = load_gray_image(&manifest.resolve(r))?;
            let s = model.score(&image, r.bbox)?;
            Ok(ScoredSample {
                image_path: r.image_path.clone(),
                dataset: r.dataset.clone(),
                label: r.label,
                score: s.value,
                stage2_ran: s.stage2_ran,
            })
        })
        .collect()
}

fn check_classes(records: &[SampleRecord]) -> Result<()> {
    let names: Vec<String> = {
        let mut v: Vec<String> = Vec::new();
        for r in records {
            if !v.contains(&r.dataset) {
                v.push(r.dataset.clone());
            }
        }
        v
    };
    if names.is_empty() {
        return Err(Error::Data("no test samples to evaluate".into()));
    }
    for name in names {
        let of = |attack: bool| {
            records
                .iter()
                .any(|r| r.dataset == name && r.label.is_attack() == attack)
        };
        if !of(true) || !of(false) {
            return Err(Error::Data(format!(
                "dataset {name} needs both attack and bonafide test samples"
            )));
        }
    }
    Ok(())
}

/// Test-subset records of the manifest.
pub fn test_records(manifest: &Manifest) -> Vec<SampleRecord> {
    manifest
        .records
        .iter()
        .filter(|r| r.subset == Subset::Test)
        .cloned()
        .collect()
}

/// Scores the test subset once and reports every dataset, plus the pooled
/// `combined` block when there is more than one.
pub fn evaluate(
    model: &CascadeModel,
    manifest: &Manifest,
    thresholds: &[f64],
) -> Result<(EvalReport, Vec<ScoredSample>)> {
    check_thresholds(thresholds)?;
    let records = test_records(manifest);
    check_classes(&records)?;
    let scored = score_records(model, manifest, &records)?;
    let combined = dataset_order(&scored).len() > 1;
    let rows = report_from_scores(&scored, thresholds, combined)?;
    Ok((
        EvalReport {
            meta: ReportMeta {
                protocol: "within-dataset".into(),
                gate: Some(model.gate()),
                ..Default::default()
            },
            rows,
        },
        scored,
    ))
}

/// One held-out dataset of the cross-dataset protocol.
#[derive(Clone, Debug)]
pub struct CrossFold {
    pub held_out: String,
    pub training: CascadeTraining,
    pub train_paths: BTreeSet<String>,
    pub eval_paths: BTreeSet<String>,
    pub scores: Vec<ScoredSample>,
}

#[derive(Clone, Debug)]
pub struct CrossRun {
    pub report: EvalReport,
    pub folds: Vec<CrossFold>,
}

/// Trains a fresh cascade per held-out dataset on the other datasets' train
/// subsets and evaluates it on the held-out test subset. No combined rows.
pub fn cross_dataset_run(
    manifest: &Manifest,
    spec: &NetworkSpec,
    hp: &HyperParams,
    gate: f64,
    thresholds: &[f64],
    progress: &mut Progress<'_>,
) -> Result<CrossRun> {
    check_thresholds(thresholds)?;
    let datasets = manifest.datasets();
    if datasets.len() < 2 {
        return Err(Error::Data(format!(
            "cross-dataset evaluation needs at least 2 datasets, found {}",
            datasets.len()
        )));
    }
    let mut folds = Vec::new();
    let mut rows = Vec::new();
    for (fi, held_out) in datasets.iter().enumerate() {
        let pool: Vec<SampleRecord> = manifest
            .records
            .iter()
            .filter(|r| &r.dataset != held_out && r.subset == Subset::Train)
            .cloned()
            .collect();
        for label in Label::ALL {
            if !pool.iter().any(|r| r.label == label) {
                return Err(Error::Data(format!(
                    "training pool without {held_out} has no {label} samples"
                )));
            }
        }
        let eval_records: Vec<SampleRecord> = test_records(manifest)
            .into_iter()
            .filter(|r| &r.dataset == held_out)
            .collect();
        check_classes(&eval_records)?;

        let train_paths: BTreeSet<String> = pool.iter().map(|r| r.image_path.clone()).collect();
        let eval_paths: BTreeSet<String> =
            eval_records.iter().map(|r| r.image_path.clone()).collect();
        if train_paths.intersection(&eval_paths).next().is_some() {
            return Err(Error::Data(format!(
                "training pool for held-out {held_out} overlaps its evaluation set"
            )));
        }

        let fold_manifest = Manifest::new(pool, manifest.root.clone())?;
        let fold_hp = HyperParams {
            seed: derive_seed(hp.seed, &[0xc055, fi as u64]),
            ..hp.clone()
        };
        let training = train_cascade(&fold_manifest, spec, &fold_hp, gate, &mut *progress)?;
        let scores = score_records(&training.model, manifest, &eval_records)?;
        let refs: Vec<&ScoredSample> = scores.iter().collect();
        rows.extend(threshold_sweep(held_out, &refs, thresholds)?);
        folds.push(CrossFold {
            held_out: held_out.clone(),
            training,
            train_paths,
            eval_paths,
            scores,
        });
    }
    Ok(CrossRun {
        report: EvalReport {
            meta: ReportMeta {
                protocol: "cross-dataset".into(),
                seed: Some(hp.seed),
                hyperparameters: Some(hp.clone()),
                gate: Some(gate),
                model_checksum: None,
            },
            rows,
        },
        folds,
    })
}
