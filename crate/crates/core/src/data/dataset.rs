//! On-disk silhouette corpora.
//!
//! Layout: `root/<subject:03>/<cond>-<seq:02>/<view:03>/<frame:04>.png`, one
//! grayscale PNG per frame, foreground > 127. A `manifest.txt` at the root
//! lists `subject cond view seq num_frames` per sequence.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GaitError, Result};

use super::preprocess::{align_and_crop, ALIGNED_HEIGHT, ALIGNED_WIDTH};
use super::protocol::{ProtocolKind, SplitProtocol, CASIA_B_VIEWS};
use super::sequence::{Condition, SequenceKey, SilhouetteSequence};
use super::walker::{generate_walker_sequence, WalkerSpec};

pub const MANIFEST_FILE: &str = "manifest.txt";

pub fn sequence_dir(root: &Path, key: &SequenceKey) -> PathBuf {
    root.join(format!("{:03}", key.subject_id))
        .join(format!("{}-{:02}", key.condition.as_str(), key.seq_index))
        .join(format!("{:03}", key.view_deg))
}

/// Writes every frame of `seq` as PNG under its sequence directory.
pub fn write_sequence(root: &Path, seq: &SilhouetteSequence) -> Result<()> {
    let dir = sequence_dir(root, &seq.key());
    fs::create_dir_all(&dir).map_err(|e| GaitError::io(&dir, e))?;
    for i in 0..seq.num_frames() {
        let path = dir.join(format!("{i:04}.png"));
        let img = image::GrayImage::from_raw(seq.width as u32, seq.height as u32, seq.frame(i).to_vec())
            .ok_or_else(|| GaitError::Data(format!("frame buffer size mismatch in {}", seq.key())))?;
        img.save(&path).map_err(|e| GaitError::Data(format!("writing {}: {e}", path.display())))?;
    }
    Ok(())
}

pub fn write_manifest(root: &Path, seqs: &[SilhouetteSequence]) -> Result<()> {
    let path = root.join(MANIFEST_FILE);
    let mut out = String::from("# subject cond view seq num_frames\n");
    let mut keys: Vec<_> = seqs.iter().map(|s| (s.key(), s.num_frames())).collect();
    keys.sort();
    for (k, n) in keys {
        out.push_str(&format!("{:03} {} {:03} {:02} {n}\n", k.subject_id, k.condition.as_str(), k.view_deg, k.seq_index));
    }
    let mut f = fs::File::create(&path).map_err(|e| GaitError::io(&path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| GaitError::io(&path, e))
}

/// Parameters of a generated corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthCorpusOptions {
    pub subjects: usize,
    pub first_subject: u32,
    pub views: Vec<u32>,
    /// Sequences per condition `(nm, bg, cl)`.
    pub seqs_per_condition: [u32; 3],
    pub frames: usize,
    pub seed: u64,
}

impl Default for SynthCorpusOptions {
    fn default() -> Self {
        Self {
            subjects: 8,
            first_subject: 1,
            views: CASIA_B_VIEWS.to_vec(),
            seqs_per_condition: [6, 2, 2],
            frames: 40,
            seed: 0,
        }
    }
}

/// Combines two seeds into one well-mixed 64-bit value.
pub fn seed_mix(a: u64, b: u64) -> u64 {
    // splitmix64 finaliser over the combined words
    let mut z = a ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl SynthCorpusOptions {
    pub fn keys(&self) -> Vec<SequenceKey> {
        let mut keys = Vec::new();
        for s in 0..self.subjects as u32 {
            for (ci, &cond) in Condition::ALL.iter().enumerate() {
                for seq_index in 1..=self.seqs_per_condition[ci] {
                    for &view_deg in &self.views {
                        keys.push(SequenceKey { subject_id: self.first_subject + s, condition: cond, seq_index, view_deg });
                    }
                }
            }
        }
        keys
    }

    pub fn subject_spec(&self, subject_id: u32) -> WalkerSpec {
        WalkerSpec::from_seed(seed_mix(self.seed, subject_id as u64))
    }

    /// Renders and aligns one sequence. The gait phase depends on subject,
    /// condition and sequence index but not on the view, so all cameras see
    /// the same walk.
    pub fn render(&self, key: &SequenceKey) -> Result<SilhouetteSequence> {
        let spec = self.subject_spec(key.subject_id).with_condition(key.condition);
        let phase_seed = seed_mix(seed_mix(self.seed ^ 0xa11ce, key.subject_id as u64), (key.condition as u64) << 16 | key.seq_index as u64);
        let raw = SilhouetteSequence {
            subject_id: key.subject_id,
            condition: key.condition,
            seq_index: key.seq_index,
            ..generate_walker_sequence(&spec, key.view_deg, self.frames, phase_seed)
        };
        Ok(align_and_crop(&raw)?.0)
    }
}

/// Generates a corpus in memory without touching disk.
pub fn generate_synthetic_corpus(opts: &SynthCorpusOptions) -> Result<Vec<SilhouetteSequence>> {
    opts.keys().par_iter().map(|k| opts.render(k)).collect()
}

/// Renders and writes a corpus plus its manifest; returns the sequence count.
pub fn write_synthetic_corpus(root: &Path, opts: &SynthCorpusOptions) -> Result<usize> {
    fs::create_dir_all(root).map_err(|e| GaitError::io(root, e))?;
    let keys = opts.keys();
    let summaries: Vec<SilhouetteSequence> = keys
        .par_iter()
        .map(|k| {
            let seq = opts.render(k)?;
            write_sequence(root, &seq)?;
            // keep only the key and frame count for the manifest
            Ok(SilhouetteSequence { frames: vec![0; seq.num_frames()], height: 1, width: 1, ..seq })
        })
        .collect::<Result<_>>()?;
    write_manifest(root, &summaries)?;
    Ok(summaries.len())
}

/// A corpus loaded under a protocol.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub protocol: SplitProtocol,
    pub sequences: Vec<SilhouetteSequence>,
    /// Sequences skipped because they could not be read or were empty.
    pub skipped: usize,
}

impl LoadedDataset {
    /// Wraps in-memory sequences under `kind`, keeping only those the protocol uses.
    pub fn from_sequences(kind: ProtocolKind, sequences: Vec<SilhouetteSequence>) -> Result<Self> {
        let keys: Vec<SequenceKey> = sequences.iter().map(|s| s.key()).collect();
        let protocol = protocol_for(kind, &keys);
        let sequences = sequences.into_iter().filter(|s| protocol.is_used(&s.key())).collect();
        Ok(Self { protocol, sequences, skipped: 0 })
    }

    pub fn train_sequences(&self) -> Vec<&SilhouetteSequence> {
        self.sequences.iter().filter(|s| self.protocol.is_train(&s.key())).collect()
    }
}

fn read_dir_sorted(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut entries = Vec::new();
    for e in fs::read_dir(dir).map_err(|e| GaitError::io(dir, e))? {
        let e = e.map_err(|e| GaitError::io(dir, e))?;
        entries.push((e.file_name().to_string_lossy().into_owned(), e.path()));
    }
    entries.sort();
    Ok(entries)
}

/// Enumerates sequence directories as `(key, path)`.
pub fn scan_corpus(root: &Path) -> Result<Vec<(SequenceKey, PathBuf)>> {
    if !root.is_dir() {
        return Err(GaitError::Data(format!("dataset root {} is not a directory", root.display())));
    }
    let mut out = Vec::new();
    for (subj_name, subj_path) in read_dir_sorted(root)? {
        let Ok(subject_id) = subj_name.parse::<u32>() else { continue };
        if !subj_path.is_dir() {
            continue;
        }
        for (cs_name, cs_path) in read_dir_sorted(&subj_path)? {
            let Some((cond, seq)) = cs_name.split_once('-') else { continue };
            let (Ok(condition), Ok(seq_index)) = (cond.parse::<Condition>(), seq.parse::<u32>()) else {
                warn!("ignoring unrecognised directory {}", cs_path.display());
                continue;
            };
            for (view_name, view_path) in read_dir_sorted(&cs_path)? {
                let Ok(view_deg) = view_name.parse::<u32>() else { continue };
                if view_path.is_dir() {
                    out.push((SequenceKey { subject_id, condition, seq_index, view_deg }, view_path));
                }
            }
        }
    }
    Ok(out)
}

/// Reads one sequence directory. Frames are aligned to `64 × 44` unless
/// already stored at that size; unreadable or empty frames are dropped.
pub fn read_sequence(key: SequenceKey, dir: &Path) -> Result<SilhouetteSequence> {
    let mut frames = Vec::new();
    let mut dims: Option<(usize, usize)> = None;
    for (name, path) in read_dir_sorted(dir)? {
        if !name.ends_with(".png") {
            continue;
        }
        let img = match image::open(&path) {
            Ok(img) => img.to_luma8(),
            Err(e) => {
                warn!("skipping unreadable frame {}: {e}", path.display());
                continue;
            }
        };
        let d = (img.height() as usize, img.width() as usize);
        if *dims.get_or_insert(d) != d {
            warn!("skipping frame {} with size {}x{} (expected {}x{})", path.display(), d.0, d.1, dims.unwrap().0, dims.unwrap().1);
            continue;
        }
        frames.extend_from_slice(img.as_raw());
    }
    let (height, width) = dims.ok_or_else(|| GaitError::Data(format!("sequence {key} has no readable frames")))?;
    let seq = SilhouetteSequence {
        subject_id: key.subject_id,
        view_deg: key.view_deg,
        condition: key.condition,
        seq_index: key.seq_index,
        height,
        width,
        frames,
    };
    let (aligned, dropped) = if (height, width) == (ALIGNED_HEIGHT, ALIGNED_WIDTH) {
        let n = seq.num_frames();
        let keep: Vec<usize> = (0..n).filter(|&i| seq.foreground_area(i) > 0).collect();
        if keep.is_empty() {
            return Err(GaitError::Data(format!("sequence {key} has no foreground in any frame")));
        }
        let frames = keep.iter().flat_map(|&i| seq.frame(i).iter().copied()).collect();
        (SilhouetteSequence { frames, ..seq }, n - keep.len())
    } else {
        align_and_crop(&seq)?
    };
    if dropped > 0 {
        warn!("sequence {key}: dropped {dropped} empty frame(s)");
    }
    Ok(aligned)
}

fn protocol_for(kind: ProtocolKind, keys: &[SequenceKey]) -> SplitProtocol {
    let subjects: Vec<u32> = keys.iter().map(|k| k.subject_id).collect::<BTreeSet<_>>().into_iter().collect();
    let mut protocol = SplitProtocol::new(kind, &subjects);
    if kind == ProtocolKind::Synth {
        // generated corpora may use any subset of cameras
        protocol.views = keys.iter().map(|k| k.view_deg).collect::<BTreeSet<_>>().into_iter().collect();
    }
    protocol
}

/// Loads every sequence that `kind` uses. Unreadable sequences are skipped
/// with a warning and counted. A root without sequence directories gives an
/// empty dataset; one where every sequence fails is an error.
pub fn load_dataset(root: &Path, kind: ProtocolKind) -> Result<LoadedDataset> {
    let entries = scan_corpus(root)?;
    let keys: Vec<SequenceKey> = entries.iter().map(|(k, _)| *k).collect();
    let protocol = protocol_for(kind, &keys);
    let results: Vec<Option<SilhouetteSequence>> = entries
        .par_iter()
        .filter(|(k, _)| protocol.is_used(k))
        .map(|(k, path)| match read_sequence(*k, path) {
            Ok(s) => Some(s),
            Err(e) => {
                warn!("skipping sequence {k}: {e}");
                None
            }
        })
        .collect();
    let skipped = results.iter().filter(|r| r.is_none()).count();
    let sequences: Vec<SilhouetteSequence> = results.into_iter().flatten().collect();
    if sequences.is_empty() && skipped > 0 {
        return Err(GaitError::Data(format!("no usable sequences under {}", root.display())));
    }
    Ok(LoadedDataset { protocol, sequences, skipped })
}
