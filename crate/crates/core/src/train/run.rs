use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::time::Instant;

use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::sampler::{clip_to_feature_map, sample_training_batch, TrainingSet};
use crate::data::seed_mix;
use crate::error::{GaitError, Result};
use crate::losses::LossReport;
use crate::model::{ModelConfig, ModelParams};
use crate::scalar::Scalar;
use crate::tensor::FeatureMap;

use super::checkpoint::Checkpoint;
use super::config::{lr_schedule, TrainConfig};
use super::optimizer::{AdamHyper, AdamState};
use super::step::{train_step, StepInput};

pub const LOSS_CSV: &str = "loss.csv";
pub const LOSS_CSV_HEADER: &str = "iter,triplet,ce,total,nonzero_frac,lr";
pub const LATEST_CHECKPOINT: &str = "checkpoint.json";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRow {
    pub iter: u64,
    pub report: LossReport,
    pub lr: f64,
}

impl LossRow {
    pub fn csv_line(&self) -> String {
        let r = &self.report;
        format!("{},{},{},{},{},{}", self.iter, r.triplet, r.cross_entropy, r.total, r.nonzero_triplet_fraction, self.lr)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub checkpoint: Checkpoint<T>,
    /// Rows produced by this call (not those of a resumed run's past).
    pub losses: Vec<LossRow>,
}

/// Fresh training state: parameters drawn from `train.seed`.
pub fn initial_checkpoint<T: Scalar>(model: &ModelConfig, train: &TrainConfig) -> Result<Checkpoint<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(train.seed);
    let params = ModelParams::init(model, &mut rng)?;
    let adam = AdamState::new(&params);
    Ok(Checkpoint { iteration: 0, model: model.clone(), train: train.clone(), params, adam })
}

/// Random stream for the batch of `iteration`.
pub fn batch_rng(seed: u64, iteration: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed_mix(seed ^ 0xba7c4, iteration))
}

type Batch<T> = (Vec<FeatureMap<T>>, Vec<usize>);

pub fn prepare_batch<T: Scalar>(data: &TrainingSet, model: &ModelConfig, train: &TrainConfig, iteration: u64) -> Result<Batch<T>> {
    let mut rng = batch_rng(train.seed, iteration);
    let clips = sample_training_batch(data, train.p, train.k, train.frames, &mut rng)?;
    let labels = clips.iter().map(|c| c.label).collect();
    let maps = clips
        .iter()
        .map(|c| clip_to_feature_map(c, model.input_height, model.input_width))
        .collect::<Result<_>>()?;
    Ok((maps, labels))
}

fn check_setup(model: &ModelConfig, train: &TrainConfig, data: &TrainingSet) -> Result<()> {
    let mut v = model.violations();
    v.extend(train.violations());
    if !v.is_empty() {
        return Err(GaitError::ConfigInvariants(v));
    }
    model.check_frames(train.frames)?;
    if data.num_subjects() > model.num_classes {
        return Err(GaitError::Config(format!(
            "{} training subjects but the classifier has only {} classes",
            data.num_subjects(),
            model.num_classes
        )));
    }
    if train.p > data.num_subjects() {
        return Err(GaitError::Data(format!(
            "p = {} exceeds the {} training subjects",
            train.p,
            data.num_subjects()
        )));
    }
    Ok(())
}

fn rewrite_loss_csv(path: &Path, keep_below: u64) -> Result<fs::File> {
    let mut kept = String::from(LOSS_CSV_HEADER);
    kept.push('\n');
    if let Ok(old) = fs::read_to_string(path) {
        for line in old.lines().skip(1) {
            let iter = line.split(',').next().and_then(|s| s.parse::<u64>().ok());
            if iter.is_some_and(|i| i < keep_below) {
                kept.push_str(line);
                kept.push('\n');
            }
        }
    }
    let mut f = fs::File::create(path).map_err(|e| GaitError::io(path, e))?;
    f.write_all(kept.as_bytes()).map_err(|e| GaitError::io(path, e))?;
    Ok(f)
}

/// Runs `train.iterations` steps (continuing from `resume` when given).
///
/// With an output directory, writes `loss.csv`, numbered checkpoints every
/// `checkpoint_every` steps and `checkpoint.json` at the end. If a step
/// produces a non-finite value, the last good state is saved before the
/// error is returned.
pub fn run_training<T: Scalar>(
    model: &ModelConfig,
    train: &TrainConfig,
    data: &TrainingSet,
    out_dir: Option<&Path>,
    resume: Option<Checkpoint<T>>,
) -> Result<TrainOutcome<T>> {
    check_setup(model, train, data)?;
    let mut state = match resume {
        Some(ck) => {
            if ck.model != *model {
                return Err(GaitError::Config("checkpoint was trained with a different model configuration".into()));
            }
            if ck.train.seed != train.seed {
                warn!("resuming with seed {} over a checkpoint trained with seed {}", train.seed, ck.train.seed);
            }
            Checkpoint { train: train.clone(), ..ck }
        }
        None => initial_checkpoint(model, train)?,
    };
    let start = state.iteration;
    let mut csv = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| GaitError::io(dir, e))?;
            Some(rewrite_loss_csv(&dir.join(LOSS_CSV), start)?)
        }
        None => None,
    };
    let save = |ck: &Checkpoint<T>, name: PathBuf| -> Result<()> {
        if let Some(dir) = out_dir {
            ck.save(&dir.join(name))?;
        }
        Ok(())
    };
    let hyper = AdamHyper::from(train);
    let mut losses = Vec::new();
    let t0 = Instant::now();

    let result: Result<()> = std::thread::scope(|scope| {
        let (tx, rx) = mpsc::sync_channel::<Result<Batch<T>>>(train.prefetch.max(1));
        let producer = scope.spawn(move || {
            for it in start..train.iterations {
                if tx.send(prepare_batch(data, model, train, it)).is_err() {
                    break;
                }
            }
        });
        for it in start..train.iterations {
            let (clips, labels) = rx.recv().map_err(|_| GaitError::Data("batch preparation stopped".into()))??;
            let lr = lr_schedule(it, train);
            let input = StepInput {
                clips: &clips,
                labels: &labels,
                lr,
                margin: train.margin,
                loss_weights: train.loss_weights,
                hyper,
                min_gem_delta: train.min_gem_delta,
            };
            let snapshot = state.params.clone();
            let adam_snapshot = state.adam.clone();
            match train_step(&mut state.params, &mut state.adam, model, &input) {
                Ok(report) => {
                    let row = LossRow { iter: it, report, lr };
                    if let Some(f) = csv.as_mut() {
                        writeln!(f, "{}", row.csv_line()).map_err(|e| GaitError::io(LOSS_CSV, e))?;
                    }
                    losses.push(row);
                    state.iteration = it + 1;
                    if train.log_every > 0 && (it + 1) % train.log_every == 0 {
                        info!(
                            "iter {} total {:.4} triplet {:.4} ce {:.4} nonzero {:.3} ({:.2}s/iter)",
                            it + 1,
                            report.total,
                            report.triplet,
                            report.cross_entropy,
                            report.nonzero_triplet_fraction,
                            t0.elapsed().as_secs_f64() / (it + 1 - start) as f64
                        );
                    }
                    if train.checkpoint_every > 0 && (it + 1) % train.checkpoint_every == 0 && it + 1 < train.iterations {
                        save(&state, PathBuf::from("checkpoints").join(format!("iter-{:06}.json", it + 1)))?;
                    }
                }
                Err(e) => {
                    state.params = snapshot;
                    state.adam = adam_snapshot;
                    save(&state, PathBuf::from(LATEST_CHECKPOINT))?;
                    return Err(e);
                }
            }
        }
        drop(rx);
        producer.join().map_err(|_| GaitError::Data("batch preparation thread panicked".into()))?;
        Ok(())
    });
    result?;
    save(&state, PathBuf::from(LATEST_CHECKPOINT))?;
    Ok(TrainOutcome { checkpoint: state, losses })
}
