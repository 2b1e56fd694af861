//! Model comparison under the patch-normalized RMSE.

use std::path::Path;

use hifreq_core::eval::{rmse_maps, rmse_norm, EvalError, EvalReport, EvalRow};
use hifreq_core::DepthMap;
use hifreq_unet::UNet;
use rayon::prelude::*;

use crate::config::TrainConfig;
use crate::infer::infer;
use crate::sample::Sample;
use crate::TrainError;

pub const BASELINE_NAME: &str = "lowfreq";
pub const ORACLE_NAME: &str = "oracle";

/// Prediction source for one report column.
pub enum Predictor<'a> {
    Model(&'a UNet<f32>, &'a TrainConfig),
    /// Returns the ground truth.
    Oracle,
}

fn row(s: &Sample, name: &str, pred: &DepthMap, baseline: f64, patch: usize) -> Result<EvalRow, TrainError> {
    Ok(EvalRow {
        scene_id: s.scene_id.clone(),
        model_name: name.to_string(),
        rmse_raw: rmse_maps(pred, &s.gt)?,
        rmse_norm: rmse_norm(pred, &s.gt, patch)?,
        baseline_rmse_norm: baseline,
    })
}

/// Scores the low-frequency baseline and every predictor on every sample.
pub fn compare(
    predictors: &[(&str, Predictor<'_>)],
    samples: &[Sample],
    patch: usize,
) -> Result<EvalReport, TrainError> {
    if samples.is_empty() {
        return Err(EvalError::EmptyDataset.into());
    }
    let per: Vec<Result<Vec<EvalRow>, TrainError>> = samples
        .par_iter()
        .map(|s| {
            let baseline = rmse_norm(&s.lowfreq, &s.gt, patch)?;
            let mut rows = vec![row(s, BASELINE_NAME, &s.lowfreq, baseline, patch)?];
            for (name, p) in predictors {
                let pred = match p {
                    Predictor::Model(m, cfg) => infer(m, s, cfg)?,
                    Predictor::Oracle => s.gt.clone(),
                };
                rows.push(row(s, name, &pred, baseline, patch)?);
            }
            Ok(rows)
        })
        .collect();
    let mut per_sample = Vec::new();
    for r in per {
        per_sample.extend(r?);
    }
    Ok(EvalReport { per_sample, patch })
}

fn csv_err(e: impl std::fmt::Display) -> TrainError {
    TrainError::Csv(e.to_string())
}

/// Per-sample rows: `scene_id,model_name,rmse_raw,rmse_norm,baseline_rmse_norm`.
pub fn report_csv(report: &EvalReport) -> Result<String, TrainError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &report.per_sample {
        w.serialize(r).map_err(csv_err)?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(csv_err)?).expect("utf-8"))
}

/// One row per model: `model_name,count,rmse_raw,rmse_norm,patch`.
pub fn summary_csv(report: &EvalReport) -> Result<String, TrainError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["model_name", "count", "rmse_raw", "rmse_norm", "patch"])
        .map_err(csv_err)?;
    for name in report.model_names() {
        let a = report.aggregate(&name).expect("model has rows");
        w.write_record([
            name,
            a.count.to_string(),
            a.rmse_raw.to_string(),
            a.rmse_norm.to_string(),
            report.patch.to_string(),
        ])
        .map_err(csv_err)?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(csv_err)?).expect("utf-8"))
}

pub fn write_report(report: &EvalReport, rows: &Path, summary: &Path) -> Result<(), TrainError> {
    std::fs::write(rows, report_csv(report)?).map_err(TrainError::io(rows))?;
    std::fs::write(summary, summary_csv(report)?).map_err(TrainError::io(summary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::toy;

    #[test]
    fn baseline_and_oracle_rows() {
        let samples = vec![toy(64, 64), toy(64, 64)];
        let zero = UNet::<f32>::zeros(2);
        let cfg = TrainConfig::default();
        let report = compare(
            &[("zero", Predictor::Model(&zero, &cfg)), (ORACLE_NAME, Predictor::Oracle)],
            &samples,
            9,
        )
        .unwrap();
        assert_eq!(report.model_names(), vec![BASELINE_NAME, "zero", ORACLE_NAME]);
        let base = report.aggregate(BASELINE_NAME).unwrap();
        let zero_agg = report.aggregate("zero").unwrap();
        // a zero residual reproduces the baseline exactly
        assert_eq!(base, zero_agg);
        assert_eq!(report.aggregate(ORACLE_NAME).unwrap().rmse_norm, 0.0);
        let rows: Vec<_> = report.per_sample.iter().filter(|r| r.model_name == "zero").collect();
        let mean = rows.iter().map(|r| r.rmse_norm).sum::<f64>() / rows.len() as f64;
        assert_eq!(mean, zero_agg.rmse_norm);
        let csv = report_csv(&report).unwrap();
        assert!(csv.starts_with("scene_id,model_name,rmse_raw,rmse_norm,baseline_rmse_norm\n"));
        assert_eq!(csv.lines().count(), 7);
        assert!(matches!(
            compare(&[], &[], 9),
            Err(TrainError::Eval(EvalError::EmptyDataset))
        ));
    }
}
