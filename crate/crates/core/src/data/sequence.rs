use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::GaitError;

/// Walking condition: normal, carrying a bag, wearing a coat.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    Nm,
    Bg,
    Cl,
}

impl Condition {
    pub const ALL: [Condition; 3] = [Condition::Nm, Condition::Bg, Condition::Cl];

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Nm => "nm",
            Condition::Bg => "bg",
            Condition::Cl => "cl",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.as_str().to_uppercase())
    }
}

impl FromStr for Condition {
    type Err = GaitError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "nm" => Ok(Condition::Nm),
            "bg" => Ok(Condition::Bg),
            "cl" => Ok(Condition::Cl),
            other => Err(GaitError::Data(format!("unknown walking condition `{other}`"))),
        }
    }
}

/// Identity of one recorded sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SequenceKey {
    pub subject_id: u32,
    pub condition: Condition,
    pub seq_index: u32,
    pub view_deg: u32,
}

impl fmt::Display for SequenceKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:03}/{}-{:02}/{:03}", self.subject_id, self.condition.as_str(), self.seq_index, self.view_deg)
    }
}

impl FromStr for SequenceKey {
    type Err = GaitError;

    /// Parses the `subject/cond-seq/view` form produced by `Display`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || GaitError::Data(format!("malformed sequence key `{s}`"));
        let mut parts = s.split('/');
        let (Some(subj), Some(cs), Some(view), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
            return Err(bad());
        };
        let (cond, seq) = cs.split_once('-').ok_or_else(bad)?;
        Ok(SequenceKey {
            subject_id: subj.parse().map_err(|_| bad())?,
            condition: cond.parse()?,
            seq_index: seq.parse().map_err(|_| bad())?,
            view_deg: view.parse().map_err(|_| bad())?,
        })
    }
}

/// One labeled silhouette clip. Frames are stored `frame × row × col`,
/// foreground 255, background 0.
#[derive(Debug, Clone, PartialEq)]
pub struct SilhouetteSequence {
    pub subject_id: u32,
    pub view_deg: u32,
    pub condition: Condition,
    pub seq_index: u32,
    pub height: usize,
    pub width: usize,
    pub frames: Vec<u8>,
}

impl SilhouetteSequence {
    pub fn key(&self) -> SequenceKey {
        SequenceKey {
            subject_id: self.subject_id,
            condition: self.condition,
            seq_index: self.seq_index,
            view_deg: self.view_deg,
        }
    }

    pub fn frame_len(&self) -> usize {
        self.height * self.width
    }

    pub fn num_frames(&self) -> usize {
        if self.frame_len() == 0 {
            0
        } else {
            self.frames.len() / self.frame_len()
        }
    }

    pub fn frame(&self, i: usize) -> &[u8] {
        let n = self.frame_len();
        &self.frames[i * n..(i + 1) * n]
    }

    pub fn foreground_area(&self, i: usize) -> usize {
        self.frame(i).iter().filter(|&&v| v > 127).count()
    }

    /// Copy keeping only the first `count` frames.
    pub fn truncated(&self, count: usize) -> Self {
        let mut s = self.clone();
        s.frames.truncate(count.min(self.num_frames()) * self.frame_len());
        s
    }
}
