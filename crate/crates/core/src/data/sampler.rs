//! P×K batch sampling and conversion of silhouettes to network input.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::Rng;

use crate::error::{GaitError, Result};
use crate::scalar::Scalar;
use crate::tensor::FeatureMap;

use super::sequence::SilhouetteSequence;

/// Sequences shorter than this are left out of training.
pub const MIN_TRAIN_FRAMES: usize = 15;

/// Training sequences grouped by subject, with dense class labels in
/// ascending subject order.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub sequences: Vec<SilhouetteSequence>,
    /// `(subject_id, indices into sequences)`, ordered by subject id.
    pub by_subject: Vec<(u32, Vec<usize>)>,
    pub excluded_short: usize,
}

impl TrainingSet {
    pub fn new<'a>(seqs: impl IntoIterator<Item = &'a SilhouetteSequence>) -> Result<Self> {
        let mut sequences = Vec::new();
        let mut excluded_short = 0;
        for s in seqs {
            if s.num_frames() < MIN_TRAIN_FRAMES {
                excluded_short += 1;
            } else {
                sequences.push(s.clone());
            }
        }
        let mut groups: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, s) in sequences.iter().enumerate() {
            groups.entry(s.subject_id).or_default().push(i);
        }
        if groups.is_empty() {
            return Err(GaitError::Data(format!("no training sequence with at least {MIN_TRAIN_FRAMES} frames")));
        }
        Ok(Self { sequences, by_subject: groups.into_iter().collect(), excluded_short })
    }

    pub fn num_subjects(&self) -> usize {
        self.by_subject.len()
    }

    pub fn label_of(&self, subject_id: u32) -> Option<usize> {
        self.by_subject.iter().position(|(s, _)| *s == subject_id)
    }
}

/// `D` aligned frames cut from one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub subject_id: u32,
    pub label: usize,
    pub height: usize,
    pub width: usize,
    pub frames: Vec<u8>,
}

impl Clip {
    pub fn num_frames(&self) -> usize {
        self.frames.len() / (self.height * self.width)
    }
}

/// Frame indices of a training window: a random contiguous run of `d`
/// frames, or the whole sequence repeated cyclically when it is shorter.
pub fn clip_window<R: Rng + ?Sized>(len: usize, d: usize, rng: &mut R) -> Vec<usize> {
    let start = if len >= d { rng.gen_range(0..=len - d) } else { 0 };
    (0..d).map(|i| (start + i) % len).collect()
}

pub fn cut_clip(seq: &SilhouetteSequence, label: usize, indices: &[usize]) -> Clip {
    let frames = indices.iter().flat_map(|&i| seq.frame(i).iter().copied()).collect();
    Clip { subject_id: seq.subject_id, label, height: seq.height, width: seq.width, frames }
}

/// Samples `p` distinct subjects and `k` sequences of each (without
/// replacement when the subject has at least `k`), then cuts a `d`-frame
/// window from each. Items are grouped subject-major.
pub fn sample_training_batch<R: Rng + ?Sized>(set: &TrainingSet, p: usize, k: usize, d: usize, rng: &mut R) -> Result<Vec<Clip>> {
    if p > set.num_subjects() {
        return Err(GaitError::Data(format!(
            "batch needs {p} distinct subjects but the training set has {}",
            set.num_subjects()
        )));
    }
    if p == 0 || k == 0 || d == 0 {
        return Err(GaitError::Config("P, K and the clip length must be positive".into()));
    }
    let mut out = Vec::with_capacity(p * k);
    for label in sample(rng, set.num_subjects(), p).into_iter() {
        let (_, seqs) = &set.by_subject[label];
        let picks: Vec<usize> = if seqs.len() >= k {
            sample(rng, seqs.len(), k).into_vec()
        } else {
            (0..k).map(|_| rng.gen_range(0..seqs.len())).collect()
        };
        for i in picks {
            let seq = &set.sequences[seqs[i]];
            let window = clip_window(seq.num_frames(), d, rng);
            out.push(cut_clip(seq, label, &window));
        }
    }
    Ok(out)
}

/// Binary frames → `1 × frames × out_h × out_w` map in `[0, 1]`. The source
/// size must be an integer multiple of the target; each output pixel is the
/// mean of its source block.
pub fn frames_to_feature_map<T: Scalar>(
    frames: &[u8],
    height: usize,
    width: usize,
    out_h: usize,
    out_w: usize,
) -> Result<FeatureMap<T>> {
    if out_h == 0 || out_w == 0 || height % out_h != 0 || width % out_w != 0 || height / out_h != width / out_w {
        return Err(GaitError::Shape(format!(
            "cannot resample {height}x{width} frames to {out_h}x{out_w}: need one integer factor for both axes"
        )));
    }
    let f = height / out_h;
    let n = frames.len() / (height * width);
    let norm = T::one() / T::from_usize_lossy(255 * f * f);
    Ok(FeatureMap::from_fn(1, n, out_h, out_w, |_, t, r, c| {
        let base = t * height * width;
        let mut acc = 0usize;
        for dr in 0..f {
            let row = base + (r * f + dr) * width + c * f;
            acc += frames[row..row + f].iter().map(|&v| v as usize).sum::<usize>();
        }
        T::from_usize_lossy(acc) * norm
    }))
}

pub fn clip_to_feature_map<T: Scalar>(clip: &Clip, out_h: usize, out_w: usize) -> Result<FeatureMap<T>> {
    frames_to_feature_map(&clip.frames, clip.height, clip.width, out_h, out_w)
}

pub fn sequence_to_feature_map<T: Scalar>(seq: &SilhouetteSequence, frames: usize, out_h: usize, out_w: usize) -> Result<FeatureMap<T>> {
    let n = frames.min(seq.num_frames());
    frames_to_feature_map(&seq.frames[..n * seq.frame_len()], seq.height, seq.width, out_h, out_w)
}
