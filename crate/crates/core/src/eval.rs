//! Cross-view rank-1 evaluation.
//!
//! Each probe is matched against the gallery sequences of one gallery view at
//! a time; the probe counts as correct for that `(probe view, gallery view)`
//! cell when its nearest gallery sequence belongs to the same subject.
//! Identical-view cells are computed but never enter a mean.

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader, Write as _};
use std::path::{Path, PathBuf};

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::dataset::LoadedDataset;
use crate::data::protocol::SplitProtocol;
use crate::data::sampler::sequence_to_feature_map;
use crate::data::sequence::{SequenceKey, SilhouetteSequence};
use crate::error::{GaitError, Result};
use crate::model::{forward_clip, ModelConfig, ModelParams};
use crate::scalar::Scalar;
use crate::tensor::Matrix;

/// Strip embedding of one whole sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct GaitEmbedding<T> {
    pub key: SequenceKey,
    /// `num_strips × embed_dim`
    pub strips: Matrix<T>,
}

/// Embeds a whole sequence as one clip after truncating it to a multiple of
/// three frames. Returns `None` (with a warning) for sequences under three frames.
pub fn extract_embedding<T: Scalar>(
    seq: &SilhouetteSequence,
    params: &ModelParams<T>,
    cfg: &ModelConfig,
) -> Result<Option<GaitEmbedding<T>>> {
    let usable = seq.num_frames() / 3 * 3;
    if usable == 0 {
        warn!("skipping {}: {} frame(s) is too short to embed", seq.key(), seq.num_frames());
        return Ok(None);
    }
    let x = sequence_to_feature_map(seq, usable, cfg.input_height, cfg.input_width)?;
    let out = forward_clip(&x, params, cfg)?;
    Ok(Some(GaitEmbedding { key: seq.key(), strips: out.embedding }))
}

/// Embeds sequences in parallel; returns embeddings in input order and the
/// number of sequences skipped as too short.
pub fn extract_embeddings<T: Scalar>(
    seqs: &[&SilhouetteSequence],
    params: &ModelParams<T>,
    cfg: &ModelConfig,
) -> Result<(Vec<GaitEmbedding<T>>, usize)> {
    let all: Vec<Option<GaitEmbedding<T>>> = seqs.par_iter().map(|s| extract_embedding(s, params, cfg)).collect::<Result<_>>()?;
    let skipped = all.iter().filter(|e| e.is_none()).count();
    Ok((all.into_iter().flatten().collect(), skipped))
}

/// Mean over strips of the Euclidean distance between matching strips.
pub fn pairwise_distance<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<f64> {
    if a.rows() != b.rows() || a.cols() != b.cols() {
        return Err(GaitError::Config(format!(
            "cannot compare {}x{} and {}x{} embeddings",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    if a.rows() == 0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for s in 0..a.rows() {
        let d2: f64 = a.row(s).iter().zip(b.row(s)).map(|(&x, &y)| (x.as_f64() - y.as_f64()).powi(2)).sum();
        total += d2.sqrt();
    }
    Ok(total / a.rows() as f64)
}

/// Rank-1 accuracies of one probe condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub name: String,
    pub views: Vec<u32>,
    /// Row-major `probe view × gallery view`; `None` where no probe of that view exists.
    pub cells: Vec<Option<f64>>,
}

impl ConditionReport {
    pub fn cell(&self, probe: usize, gallery: usize) -> Option<f64> {
        self.cells[probe * self.views.len() + gallery]
    }

    /// Mean over gallery views of one probe-view row, skipping the identical view.
    pub fn row_mean(&self, probe: usize) -> Option<f64> {
        mean((0..self.views.len()).filter(|&g| g != probe).filter_map(|g| self.cell(probe, g)))
    }

    /// Mean over every off-diagonal cell.
    pub fn mean(&self) -> Option<f64> {
        let n = self.views.len();
        mean((0..n).flat_map(|p| (0..n).map(move |g| (p, g))).filter(|(p, g)| p != g).filter_map(|(p, g)| self.cell(p, g)))
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankOneReport {
    pub conditions: Vec<ConditionReport>,
}

impl RankOneReport {
    pub fn condition(&self, name: &str) -> Option<&ConditionReport> {
        self.conditions.iter().find(|c| c.name == name)
    }

    /// Mean of the per-condition means.
    pub fn overall(&self) -> Option<f64> {
        mean(self.conditions.iter().filter_map(|c| c.mean()))
    }
}

/// Nearest gallery sequence of `probe` among `candidates` (first wins on ties).
fn nearest<T: Scalar>(probe: &Matrix<T>, candidates: &[&GaitEmbedding<T>]) -> Result<Option<u32>> {
    let mut best: Option<(f64, u32)> = None;
    for g in candidates {
        let d = pairwise_distance(probe, &g.strips)?;
        if best.map_or(true, |(bd, _)| d < bd) {
            best = Some((d, g.key.subject_id));
        }
    }
    Ok(best.map(|(_, s)| s))
}

/// Builds the rank-1 table for every probe set of `protocol`. Probes that
/// belong to no probe set are ignored.
pub fn rank1_matrix<T: Scalar>(
    gallery: &[GaitEmbedding<T>],
    probes: &[GaitEmbedding<T>],
    protocol: &SplitProtocol,
) -> Result<RankOneReport> {
    let views = protocol.views.clone();
    let by_view: Vec<Vec<&GaitEmbedding<T>>> =
        views.iter().map(|&v| gallery.iter().filter(|g| g.key.view_deg == v).collect()).collect();
    let missing: Vec<String> =
        views.iter().zip(&by_view).filter(|(_, g)| g.is_empty()).map(|(v, _)| format!("{v:03}")).collect();
    if !missing.is_empty() {
        return Err(GaitError::Protocol(format!("no gallery sequences for view(s) {}", missing.join(", "))));
    }
    let n = views.len();
    let mut conditions = Vec::with_capacity(protocol.probes.len());
    for (set_index, set) in protocol.probes.iter().enumerate() {
        let mut correct = vec![0usize; n * n];
        let mut total = vec![0usize; n];
        for p in probes.iter().filter(|p| protocol.probe_set(&p.key) == Some(set_index)) {
            let Some(pv) = views.iter().position(|&v| v == p.key.view_deg) else { continue };
            total[pv] += 1;
            for (gv, candidates) in by_view.iter().enumerate() {
                if nearest(&p.strips, candidates)? == Some(p.key.subject_id) {
                    correct[pv * n + gv] += 1;
                }
            }
        }
        let cells = (0..n * n)
            .map(|i| {
                let t = total[i / n];
                (t > 0).then(|| correct[i] as f64 / t as f64)
            })
            .collect();
        conditions.push(ConditionReport { name: set.name.clone(), views: views.clone(), cells });
    }
    Ok(RankOneReport { conditions })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// Writes `rank1_<condition>.csv` per condition and `summary.csv`; returns the paths.
pub fn emit_report(report: &RankOneReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| GaitError::io(dir, e))?;
    let write = |path: PathBuf, text: String| -> Result<PathBuf> {
        fs::write(&path, text).map_err(|e| GaitError::io(&path, e))?;
        Ok(path)
    };
    let mut paths = Vec::new();
    for c in &report.conditions {
        let mut text = String::from("probe_view");
        for v in &c.views {
            text.push_str(&format!(",{v:03}"));
        }
        text.push_str(",mean\n");
        for (p, pv) in c.views.iter().enumerate() {
            if (0..c.views.len()).all(|g| c.cell(p, g).is_none()) {
                continue;
            }
            text.push_str(&format!("{pv:03}"));
            for g in 0..c.views.len() {
                text.push(',');
                if g != p {
                    text.push_str(&fmt_opt(c.cell(p, g)));
                }
            }
            text.push_str(&format!(",{}\n", fmt_opt(c.row_mean(p))));
        }
        paths.push(write(dir.join(format!("rank1_{}.csv", c.name.to_lowercase())), text)?);
    }
    let mut summary = String::from("condition,mean\n");
    for c in &report.conditions {
        summary.push_str(&format!("{},{}\n", c.name, fmt_opt(c.mean())));
    }
    if !report.conditions.is_empty() {
        summary.push_str(&format!("overall,{}\n", fmt_opt(report.overall())));
    }
    paths.push(write(dir.join("summary.csv"), summary)?);
    Ok(paths)
}

#[derive(Serialize, Deserialize)]
struct EmbeddingRecord {
    key: String,
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

/// Embeddings cache: one JSON object per line, keyed by sequence.
pub fn save_embeddings<T: Scalar>(path: &Path, embeddings: &[GaitEmbedding<T>]) -> Result<()> {
    let mut out = Vec::new();
    for e in embeddings {
        let rec = EmbeddingRecord {
            key: e.key.to_string(),
            rows: e.strips.rows(),
            cols: e.strips.cols(),
            values: e.strips.as_slice().iter().map(|v| v.as_f64()).collect(),
        };
        serde_json::to_writer(&mut out, &rec).map_err(|e| GaitError::Data(e.to_string()))?;
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| GaitError::io(path, e))?;
    f.write_all(&out).map_err(|e| GaitError::io(path, e))
}

pub fn load_embeddings<T: Scalar>(path: &Path) -> Result<Vec<GaitEmbedding<T>>> {
    let f = fs::File::open(path).map_err(|e| GaitError::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| GaitError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: EmbeddingRecord = serde_json::from_str(&line).map_err(|e| GaitError::Data(e.to_string()))?;
        let strips = Matrix::new(rec.rows, rec.cols, rec.values.into_iter().map(T::lit).collect())?;
        out.push(GaitEmbedding { key: rec.key.parse()?, strips });
    }
    Ok(out)
}

/// Gallery and probe embeddings of a loaded corpus.
#[derive(Debug, Clone)]
pub struct EmbeddedSplit<T> {
    pub gallery: Vec<GaitEmbedding<T>>,
    pub probes: Vec<GaitEmbedding<T>>,
    pub skipped: usize,
}

pub fn embed_split<T: Scalar>(data: &LoadedDataset, params: &ModelParams<T>, cfg: &ModelConfig) -> Result<EmbeddedSplit<T>> {
    let p = &data.protocol;
    let gallery: Vec<&SilhouetteSequence> = data.sequences.iter().filter(|s| p.is_gallery(&s.key())).collect();
    let probes: Vec<&SilhouetteSequence> = data.sequences.iter().filter(|s| p.probe_set(&s.key()).is_some()).collect();
    let (gallery, sg) = extract_embeddings(&gallery, params, cfg)?;
    let (probes, sp) = extract_embeddings(&probes, params, cfg)?;
    Ok(EmbeddedSplit { gallery, probes, skipped: sg + sp })
}

/// Embeds a corpus and scores it under its protocol.
pub fn evaluate<T: Scalar>(data: &LoadedDataset, params: &ModelParams<T>, cfg: &ModelConfig) -> Result<RankOneReport> {
    let split = embed_split(data, params, cfg)?;
    rank1_matrix(&split.gallery, &split.probes, &data.protocol)
}

/// Views present among `embeddings`, ascending.
pub fn views_of<T>(embeddings: &[GaitEmbedding<T>]) -> Vec<u32> {
    embeddings.iter().map(|e| e.key.view_deg).collect::<BTreeSet<_>>().into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distance_basics() {
        let a = Matrix::new(1, 2, vec![0.0f64, 0.0]).unwrap();
        let b = Matrix::new(1, 2, vec![3.0f64, 4.0]).unwrap();
        assert_eq!(pairwise_distance(&a, &b).unwrap(), 5.0);
        assert_eq!(pairwise_distance(&a, &a).unwrap(), 0.0);
        let c = Matrix::<f64>::zeros(2, 2);
        assert!(matches!(pairwise_distance(&a, &c), Err(GaitError::Config(_))));
    }

    #[test]
    fn means_skip_diagonal() {
        let c = ConditionReport { name: "NM".into(), views: vec![0, 90], cells: vec![Some(9.0), Some(0.5), Some(1.0), Some(9.0)] };
        assert_eq!(c.mean(), Some(0.75));
        assert_eq!(c.row_mean(0), Some(0.5));
    }
}
