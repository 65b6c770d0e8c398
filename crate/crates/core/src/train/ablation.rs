use std::fs;
use std::path::Path;

use log::info;
use serde::{Deserialize, Serialize};

use crate::data::dataset::LoadedDataset;
use crate::data::sampler::TrainingSet;
use crate::error::{GaitError, Result};
use crate::eval::{emit_report, evaluate, RankOneReport};
use crate::model::{count_parameters, Ablation, ModelConfig};
use crate::scalar::Scalar;

use super::config::TrainConfig;
use super::run::run_training;

/// One trained-and-evaluated variant of the module ablation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub ablation: Ablation,
    pub parameters: usize,
    pub report: RankOneReport,
}

/// Trains and evaluates the four module combinations (BME alone, with PME,
/// with MSMA, both) from the same seed. With `out_dir`, each variant gets its
/// own subdirectory and `ablation.csv` summarises the table.
pub fn run_ablation_matrix<T: Scalar>(
    model: &ModelConfig,
    train: &TrainConfig,
    data: &LoadedDataset,
    out_dir: Option<&Path>,
) -> Result<Vec<AblationRow>> {
    let set = TrainingSet::new(data.train_sequences())?;
    let mut rows = Vec::new();
    for (variant, ablation) in Ablation::matrix() {
        let cfg = ModelConfig { ablation, ..model.clone() };
        let dir = out_dir.map(|d| d.join(variant));
        info!("ablation variant {variant}: training");
        let outcome = run_training::<T>(&cfg, train, &set, dir.as_deref(), None)?;
        let report = evaluate(data, &outcome.checkpoint.params, &cfg)?;
        if let Some(d) = &dir {
            emit_report(&report, d)?;
        }
        rows.push(AblationRow {
            variant: variant.to_string(),
            ablation,
            parameters: count_parameters(&outcome.checkpoint.params).total,
            report,
        });
    }
    if let Some(dir) = out_dir {
        let names: Vec<String> = rows.first().map(|r| r.report.conditions.iter().map(|c| c.name.clone()).collect()).unwrap_or_default();
        let mut text = format!("variant,parameters,{},mean\n", names.join(","));
        for r in &rows {
            let cells: Vec<String> =
                r.report.conditions.iter().map(|c| c.mean().map(|m| format!("{m:.6}")).unwrap_or_default()).collect();
            let overall = r.report.overall().map(|m| format!("{m:.6}")).unwrap_or_default();
            text.push_str(&format!("{},{},{},{overall}\n", r.variant, r.parameters, cells.join(",")));
        }
        let path = dir.join("ablation.csv");
        fs::write(&path, text).map_err(|e| GaitError::io(&path, e))?;
    }
    Ok(rows)
}
