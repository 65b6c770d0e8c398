//! Train/test subject splits and gallery/probe sequence selection.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::GaitError;

use super::sequence::{Condition, SequenceKey};

pub const CASIA_B_VIEWS: [u32; 11] = [0, 18, 36, 54, 72, 90, 108, 126, 144, 162, 180];
pub const OUMVLP_VIEWS: [u32; 14] = [0, 15, 30, 45, 60, 75, 90, 180, 195, 210, 225, 240, 255, 270];
pub const CASIA_B_LT_TRAIN_SUBJECTS: usize = 74;
pub const OUMVLP_TRAIN_SUBJECTS: usize = 5153;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProtocolKind {
    /// Large-sample CASIA-B split: first 74 subjects train, the rest test.
    CasiaBLt,
    /// OU-MVLP: first 5153 subjects train, sequence 01 gallery, 00 probe.
    Oumvlp,
    /// Closed-set split for generated corpora: every subject is both trained
    /// on (gallery sequences only) and tested.
    Synth,
}

impl ProtocolKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ProtocolKind::CasiaBLt => "casia-b-lt",
            ProtocolKind::Oumvlp => "oumvlp",
            ProtocolKind::Synth => "synth",
        }
    }
}

impl fmt::Display for ProtocolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProtocolKind {
    type Err = GaitError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "casia-b-lt" | "casia-b" | "lt" => Ok(ProtocolKind::CasiaBLt),
            "oumvlp" | "ou-mvlp" => Ok(ProtocolKind::Oumvlp),
            "synth" => Ok(ProtocolKind::Synth),
            other => Err(GaitError::Config(format!(
                "unknown protocol `{other}` (expected casia-b-lt, oumvlp or synth)"
            ))),
        }
    }
}

/// Sequences of one condition whose index lies in `first..=last`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeqSelector {
    pub condition: Condition,
    pub first: u32,
    pub last: u32,
}

impl SeqSelector {
    pub const fn new(condition: Condition, first: u32, last: u32) -> Self {
        Self { condition, first, last }
    }

    pub fn matches(&self, key: &SequenceKey) -> bool {
        key.condition == self.condition && (self.first..=self.last).contains(&key.seq_index)
    }
}

/// A probe set reported as one row block of the rank-1 table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeSet {
    pub name: String,
    pub selector: SeqSelector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitProtocol {
    pub kind: ProtocolKind,
    pub train_subjects: BTreeSet<u32>,
    pub test_subjects: BTreeSet<u32>,
    /// Sequences usable for training; `None` admits every sequence.
    pub train_sequences: Option<Vec<SeqSelector>>,
    pub gallery: Vec<SeqSelector>,
    pub probes: Vec<ProbeSet>,
    pub views: Vec<u32>,
}

fn casia_probes() -> Vec<ProbeSet> {
    vec![
        ProbeSet { name: "NM".into(), selector: SeqSelector::new(Condition::Nm, 5, 6) },
        ProbeSet { name: "BG".into(), selector: SeqSelector::new(Condition::Bg, 1, 2) },
        ProbeSet { name: "CL".into(), selector: SeqSelector::new(Condition::Cl, 1, 2) },
    ]
}

impl SplitProtocol {
    /// Builds `kind` over the subjects present in a corpus. Subject ranks
    /// (ascending id) decide the train/test split.
    pub fn new(kind: ProtocolKind, subjects: &[u32]) -> Self {
        let sorted: BTreeSet<u32> = subjects.iter().copied().collect();
        let split = |n: usize| {
            let train: BTreeSet<u32> = sorted.iter().copied().take(n).collect();
            let test: BTreeSet<u32> = sorted.iter().copied().skip(n).collect();
            (train, test)
        };
        match kind {
            ProtocolKind::CasiaBLt => {
                let (train, test) = split(CASIA_B_LT_TRAIN_SUBJECTS);
                Self {
                    kind,
                    train_subjects: train,
                    test_subjects: test,
                    train_sequences: None,
                    gallery: vec![SeqSelector::new(Condition::Nm, 1, 4)],
                    probes: casia_probes(),
                    views: CASIA_B_VIEWS.to_vec(),
                }
            }
            ProtocolKind::Oumvlp => {
                let (train, test) = split(OUMVLP_TRAIN_SUBJECTS);
                Self {
                    kind,
                    train_subjects: train,
                    test_subjects: test,
                    train_sequences: None,
                    gallery: vec![SeqSelector::new(Condition::Nm, 1, 1)],
                    probes: vec![ProbeSet { name: "NM".into(), selector: SeqSelector::new(Condition::Nm, 0, 0) }],
                    views: OUMVLP_VIEWS.to_vec(),
                }
            }
            ProtocolKind::Synth => {
                let gallery = vec![SeqSelector::new(Condition::Nm, 1, 4)];
                Self {
                    kind,
                    train_subjects: sorted.clone(),
                    test_subjects: sorted,
                    train_sequences: Some(gallery.clone()),
                    gallery,
                    probes: casia_probes(),
                    views: CASIA_B_VIEWS.to_vec(),
                }
            }
        }
    }

    pub fn is_train(&self, key: &SequenceKey) -> bool {
        self.train_subjects.contains(&key.subject_id)
            && self.train_sequences.as_ref().map_or(true, |sel| sel.iter().any(|s| s.matches(key)))
    }

    pub fn is_gallery(&self, key: &SequenceKey) -> bool {
        self.test_subjects.contains(&key.subject_id) && self.gallery.iter().any(|s| s.matches(key))
    }

    /// Index into `probes` of the probe set containing `key`, if any.
    pub fn probe_set(&self, key: &SequenceKey) -> Option<usize> {
        if !self.test_subjects.contains(&key.subject_id) {
            return None;
        }
        self.probes.iter().position(|p| p.selector.matches(key))
    }

    /// Whether a sequence takes part in training or evaluation at all.
    pub fn is_used(&self, key: &SequenceKey) -> bool {
        self.is_train(key) || self.is_gallery(key) || self.probe_set(key).is_some()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(subject_id: u32, condition: Condition, seq_index: u32) -> SequenceKey {
        SequenceKey { subject_id, condition, seq_index, view_deg: 90 }
    }

    #[test]
    fn casia_split_by_rank() {
        let subjects: Vec<u32> = (1..=124).collect();
        let p = SplitProtocol::new(ProtocolKind::CasiaBLt, &subjects);
        assert_eq!(p.train_subjects.len(), 74);
        assert_eq!(p.test_subjects.len(), 50);
        assert!(p.train_subjects.is_disjoint(&p.test_subjects));
        assert_eq!(*p.test_subjects.first().unwrap(), 75);
        assert!(p.is_gallery(&key(80, Condition::Nm, 4)));
        assert!(!p.is_gallery(&key(80, Condition::Nm, 5)));
        assert_eq!(p.probe_set(&key(80, Condition::Cl, 2)), Some(2));
        assert_eq!(p.probe_set(&key(10, Condition::Cl, 2)), None);
    }

    #[test]
    fn synth_trains_on_gallery_only() {
        let p = SplitProtocol::new(ProtocolKind::Synth, &[1, 2, 3]);
        assert!(p.is_train(&key(1, Condition::Nm, 3)));
        assert!(!p.is_train(&key(1, Condition::Nm, 5)));
        assert!(!p.is_train(&key(1, Condition::Bg, 1)));
        assert_eq!(p.probe_set(&key(1, Condition::Nm, 6)), Some(0));
    }

    #[test]
    fn parse_kind() {
        assert_eq!("casia-b-lt".parse::<ProtocolKind>().unwrap(), ProtocolKind::CasiaBLt);
        assert!("nope".parse::<ProtocolKind>().is_err());
    }
}
