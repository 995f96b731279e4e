//! Synthetic labeled datasets with known ground truth.
//!
//! * `CompositionMotif`: positives carry extra copies of a planted k-mer on a
//!   uniform background, so k-mer spectra separate the classes.
//! * `PositionalMotif`: positives carry a fixed 12-base motif at a fixed
//!   offset; negatives carry a random non-identical permutation of the same
//!   bases at the same offset. Expected base composition is identical
//!   across classes.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurize::{base_index, BASES};
use crate::rng::{mix, rng_for};
use crate::seqio::{Label, LabeledDataset, SequenceRecord};

pub const DEFAULT_MOTIF: &str = "GCATAGCTTCGA";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthTask {
    CompositionMotif,
    PositionalMotif,
}

impl std::str::FromStr for SynthTask {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "composition_motif" => Ok(Self::CompositionMotif),
            "positional_motif" => Ok(Self::PositionalMotif),
            _ => Err(Error::InvalidParam(format!("unknown synth task `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub task: SynthTask,
    pub n_records: usize,
    pub seq_len: usize,
    pub positive_fraction: f64,
    /// Planted k-mer for the composition task.
    pub planted_kmer: String,
    /// Motif for the positional task.
    pub motif: String,
    /// Motif offset for the positional task; centered when `None`.
    pub motif_offset: Option<usize>,
    pub effect_strength: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            task: SynthTask::CompositionMotif,
            n_records: 2000,
            seq_len: 500,
            positive_fraction: 1.0 / 11.0,
            planted_kmer: "TTT".into(),
            motif: DEFAULT_MOTIF.into(),
            motif_offset: None,
            effect_strength: 1.0,
            seed: 0,
        }
    }
}

/// Per-record ground truth: whether a signal was planted and where.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlantedTruth {
    pub id: String,
    pub planted: bool,
    pub offsets: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub dataset: LabeledDataset,
    pub truth: Vec<PlantedTruth>,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParam(m));
        if self.n_records < 2 {
            return bad("n_records must be >= 2".into());
        }
        if !(self.positive_fraction > 0.0 && self.positive_fraction < 1.0) {
            return bad("positive_fraction must be in (0,1)".into());
        }
        if !(self.effect_strength > 0.0 && self.effect_strength <= 1.0) {
            return bad("effect_strength must be in (0,1]".into());
        }
        let signal = match self.task {
            SynthTask::CompositionMotif => &self.planted_kmer,
            SynthTask::PositionalMotif => &self.motif,
        };
        if signal.is_empty() || signal.bytes().any(|b| base_index(b).is_none()) {
            return bad(format!("signal `{signal}` must be a non-empty ACGT string"));
        }
        if signal.len() > self.seq_len {
            return bad(format!("signal length {} exceeds seq_len {}", signal.len(), self.seq_len));
        }
        if self.task == SynthTask::PositionalMotif {
            let first = self.motif.as_bytes()[0];
            if self.motif.bytes().all(|b| b == first) {
                return bad("motif must contain at least two distinct bases".into());
            }
            if self.offset() + self.motif.len() > self.seq_len {
                return bad("motif does not fit at the requested offset".into());
            }
        }
        Ok(())
    }

    fn offset(&self) -> usize {
        self.motif_offset
            .unwrap_or((self.seq_len.saturating_sub(self.motif.len())) / 2)
    }

    pub fn n_positive(&self) -> usize {
        (self.n_records as f64 * self.positive_fraction).round() as usize
    }

    /// Planted copies per positive in the composition task: the expected
    /// background occurrence count scaled by `effect_strength * 3`, at least 1.
    pub fn planted_copies(&self) -> usize {
        let k = self.planted_kmer.len();
        let windows = (self.seq_len - k + 1) as f64;
        let background = windows / 4f64.powi(k as i32);
        ((self.effect_strength * 3.0 * background).ceil() as usize).max(1)
    }
}

fn random_bases<R: Rng>(rng: &mut R, len: usize) -> Vec<u8> {
    (0..len).map(|_| BASES[rng.gen_range(0..4)]).collect()
}

/// Generates the dataset. Each record uses its own RNG stream, so output is
/// independent of generation order.
pub fn generate(spec: &SynthSpec) -> Result<SynthDataset> {
    spec.validate()?;
    let n_pos = spec.n_positive();
    if n_pos == 0 || n_pos == spec.n_records {
        return Err(Error::InvalidParam("spec yields a single class".into()));
    }
    let mut labels: Vec<Label> = (0..spec.n_records)
        .map(|i| if i < n_pos { Label::Related } else { Label::NotRelated })
        .collect();
    labels.shuffle(&mut rng_for(mix(spec.seed, u64::MAX)));

    let width = spec.n_records.to_string().len();
    let mut records = Vec::with_capacity(spec.n_records);
    let mut truth = Vec::with_capacity(spec.n_records);
    for (i, &label) in labels.iter().enumerate() {
        let mut rng = rng_for(mix(spec.seed, i as u64));
        let mut seq = random_bases(&mut rng, spec.seq_len);
        let positive = label == Label::Related;
        let mut offsets = Vec::new();
        match spec.task {
            SynthTask::CompositionMotif => {
                if positive {
                    let k = spec.planted_kmer.len();
                    for _ in 0..spec.planted_copies() {
                        let at = rng.gen_range(0..=spec.seq_len - k);
                        seq[at..at + k].copy_from_slice(spec.planted_kmer.as_bytes());
                        offsets.push(at);
                    }
                    offsets.sort_unstable();
                    offsets.dedup();
                }
            }
            SynthTask::PositionalMotif => {
                let at = spec.offset();
                let motif = spec.motif.as_bytes();
                let mut placed = motif.to_vec();
                if !positive {
                    while placed == motif {
                        placed.shuffle(&mut rng);
                    }
                }
                seq[at..at + motif.len()].copy_from_slice(&placed);
                if positive {
                    offsets.push(at);
                }
            }
        }
        let id = format!("syn{:0width$}", i + 1);
        records.push(SequenceRecord::new(&id, String::from_utf8(seq).expect("ascii")));
        truth.push(PlantedTruth {
            id,
            planted: positive,
            offsets,
        });
    }
    Ok(SynthDataset {
        dataset: LabeledDataset::new(records, labels)?,
        truth,
    })
}

/// `id,planted,offset` sidecar; multiple offsets are `;`-separated.
pub fn truth_csv(truth: &[PlantedTruth]) -> String {
    let mut out = String::from("id,planted,offset\n");
    for t in truth {
        let offsets: Vec<String> = t.offsets.iter().map(|o| o.to_string()).collect();
        let _ = writeln!(out, "{},{},{}", t.id, t.planted as u8, offsets.join(";"));
    }
    out
}
