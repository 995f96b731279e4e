//! Sequence ingestion: FASTA and labeled CSV parsing, cleaning, and
//! train/test splitting.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::io::BufRead;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_for;

/// Exact header of the labeled CSV format.
pub const LABELED_CSV_HEADER: &str = "id,sequence,label";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceRecord {
    pub id: String,
    pub description: String,
    pub sequence: String,
}

impl SequenceRecord {
    pub fn new(id: impl Into<String>, sequence: impl Into<String>) -> Self {
        SequenceRecord {
            id: id.into(),
            description: String::new(),
            sequence: sequence.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    NotRelated = 0,
    Related = 1,
}

impl Label {
    pub fn as_u8(self) -> u8 {
        self as u8
    }

    pub fn from_u8(v: u8) -> Option<Label> {
        match v {
            0 => Some(Label::NotRelated),
            1 => Some(Label::Related),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabeledDataset {
    records: Vec<SequenceRecord>,
    labels: Vec<Label>,
}

impl LabeledDataset {
    /// Builds a dataset, rejecting mismatched lengths and duplicate ids.
    pub fn new(records: Vec<SequenceRecord>, labels: Vec<Label>) -> Result<Self> {
        if records.len() != labels.len() {
            return Err(Error::Dimension {
                expected: records.len(),
                got: labels.len(),
            });
        }
        check_unique_ids(&records)?;
        Ok(LabeledDataset { records, labels })
    }

    pub fn records(&self) -> &[SequenceRecord] {
        &self.records
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn labels_u8(&self) -> Vec<u8> {
        self.labels.iter().map(|l| l.as_u8()).collect()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// (negatives, positives)
    pub fn class_counts(&self) -> (usize, usize) {
        let pos = self.labels.iter().filter(|&&l| l == Label::Related).count();
        (self.labels.len() - pos, pos)
    }

    /// Subset in the given index order.
    pub fn select(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&SequenceRecord, Label)> {
        self.records.iter().zip(self.labels.iter().copied())
    }
}

fn check_unique_ids(records: &[SequenceRecord]) -> Result<()> {
    let mut seen = HashSet::with_capacity(records.len());
    for r in records {
        if !seen.insert(r.id.as_str()) {
            return Err(Error::DuplicateId(r.id.clone()));
        }
    }
    Ok(())
}

/// Uppercases, strips whitespace and digits, maps U to T and anything else
/// outside ACGT to N.
pub fn clean_sequence(raw: &str) -> Result<String> {
    let cleaned: String = raw
        .chars()
        .filter(|c| !c.is_whitespace() && !c.is_ascii_digit())
        .map(|c| match c.to_ascii_uppercase() {
            b @ ('A' | 'C' | 'G' | 'T') => b,
            'U' => 'T',
            _ => 'N',
        })
        .collect();
    if cleaned.is_empty() {
        return Err(Error::EmptySequence);
    }
    Ok(cleaned)
}

/// Parses FASTA text. LF and CRLF line endings are accepted; blank lines are
/// skipped.
pub fn parse_fasta<R: BufRead>(reader: R) -> Result<Vec<SequenceRecord>> {
    struct Pending {
        id: String,
        description: String,
        body: String,
        line: usize,
    }

    fn finish(p: Pending) -> Result<SequenceRecord> {
        let sequence = clean_sequence(&p.body).map_err(|_| Error::Format {
            line: p.line,
            message: format!("record `{}` has an empty sequence", p.id),
        })?;
        Ok(SequenceRecord {
            id: p.id,
            description: p.description,
            sequence,
        })
    }

    let mut records = Vec::new();
    let mut current: Option<Pending> = None;
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::Format {
            line: line_no,
            message: e.to_string(),
        })?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if let Some(header) = line.strip_prefix('>') {
            if let Some(p) = current.take() {
                records.push(finish(p)?);
            }
            let header = header.trim();
            let (id, description) = match header.split_once(char::is_whitespace) {
                Some((id, rest)) => (id, rest.trim()),
                None => (header, ""),
            };
            if id.is_empty() {
                return Err(Error::Format {
                    line: line_no,
                    message: "header has no id".into(),
                });
            }
            current = Some(Pending {
                id: id.to_string(),
                description: description.to_string(),
                body: String::new(),
                line: line_no,
            });
        } else if line.trim().is_empty() {
            continue;
        } else {
            match current.as_mut() {
                Some(p) => p.body.push_str(line),
                None => {
                    return Err(Error::Format {
                        line: line_no,
                        message: "sequence data before the first header".into(),
                    })
                }
            }
        }
    }
    if let Some(p) = current.take() {
        records.push(finish(p)?);
    }
    check_unique_ids(&records)?;
    Ok(records)
}

pub fn read_fasta_file(path: &Path) -> Result<Vec<SequenceRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_fasta(std::io::BufReader::new(file)).map_err(|e| Error::in_file(path, e))
}

/// Renders records as FASTA with 60-column sequence lines.
pub fn write_fasta(records: &[SequenceRecord]) -> String {
    let mut out = String::new();
    for r in records {
        if r.description.is_empty() {
            let _ = writeln!(out, ">{}", r.id);
        } else {
            let _ = writeln!(out, ">{} {}", r.id, r.description);
        }
        let bytes = r.sequence.as_bytes();
        for chunk in bytes.chunks(60) {
            out.push_str(std::str::from_utf8(chunk).expect("ascii sequence"));
            out.push('\n');
        }
    }
    out
}

/// Loads a labeled CSV with at least the columns `id`, `sequence`, `label`.
/// Row numbers in errors count data rows from 1.
pub fn parse_labeled_csv<R: std::io::Read>(reader: R) -> Result<LabeledDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(name.to_string()))
    };
    let (id_col, seq_col, label_col) = (column("id")?, column("sequence")?, column("label")?);

    let mut records = Vec::new();
    let mut labels = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row_no = i + 1;
        let row = row.map_err(|e| Error::Value {
            row: row_no,
            message: e.to_string(),
        })?;
        let field = |c: usize| row.get(c).unwrap_or("");
        let id = field(id_col);
        if id.is_empty() {
            return Err(Error::Value {
                row: row_no,
                message: "empty id".into(),
            });
        }
        let label = match field(label_col) {
            "0" => Label::NotRelated,
            "1" => Label::Related,
            other => {
                return Err(Error::Value {
                    row: row_no,
                    message: format!("label `{other}` is not 0 or 1"),
                })
            }
        };
        let sequence = clean_sequence(field(seq_col)).map_err(|_| Error::Value {
            row: row_no,
            message: "empty sequence".into(),
        })?;
        records.push(SequenceRecord::new(id, sequence));
        labels.push(label);
    }
    LabeledDataset::new(records, labels)
}

pub fn load_labeled_csv(path: &Path) -> Result<LabeledDataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_labeled_csv(std::io::BufReader::new(file)).map_err(|e| Error::in_file(path, e))
}

pub fn write_labeled_csv(d: &LabeledDataset) -> String {
    let mut out = String::with_capacity(d.len() * 64);
    out.push_str(LABELED_CSV_HEADER);
    out.push('\n');
    for (r, l) in d.iter() {
        let _ = writeln!(out, "{},{},{}", r.id, r.sequence, l.as_u8());
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub stratified: bool,
    pub seed: u64,
    /// Keep records sharing a gene prefix (id text before the first `-`)
    /// on the same side of the split.
    pub group_by_gene: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_fraction: 0.8,
            stratified: true,
            seed: 0,
            group_by_gene: false,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::InvalidParam(format!(
                "train_fraction must be in (0,1), got {}",
                self.train_fraction
            )));
        }
        Ok(())
    }
}

fn gene_key(id: &str) -> &str {
    id.split('-').next().unwrap_or(id)
}

/// Splits a dataset into (train, test). Both halves keep the original
/// dataset order; which records land where depends only on the seed.
pub fn split_dataset(d: &LabeledDataset, s: &SplitSpec) -> Result<(LabeledDataset, LabeledDataset)> {
    s.validate()?;
    // Units are single records, or gene groups when grouping is on.
    let mut units: Vec<Vec<usize>> = Vec::new();
    if s.group_by_gene {
        let mut index: std::collections::HashMap<&str, usize> = Default::default();
        for (i, r) in d.records().iter().enumerate() {
            let key = gene_key(&r.id);
            let slot = *index.entry(key).or_insert_with(|| {
                units.push(Vec::new());
                units.len() - 1
            });
            units[slot].push(i);
        }
    } else {
        units = (0..d.len()).map(|i| vec![i]).collect();
    }

    let mut rng = rng_for(s.seed);
    let mut train = Vec::new();
    if s.stratified {
        for label in [Label::NotRelated, Label::Related] {
            let mut class: Vec<usize> = (0..units.len())
                .filter(|&u| d.labels()[units[u][0]] == label)
                .collect();
            if class.len() < 2 {
                return Err(Error::Stratification {
                    label: label.as_u8(),
                    count: class.len(),
                });
            }
            class.shuffle(&mut rng);
            let n_train = (s.train_fraction * class.len() as f64).floor() as usize;
            train.extend(class[..n_train].iter().flat_map(|&u| units[u].iter().copied()));
        }
    } else {
        let mut all: Vec<usize> = (0..units.len()).collect();
        all.shuffle(&mut rng);
        let n_train = (s.train_fraction * all.len() as f64).floor() as usize;
        train.extend(all[..n_train].iter().flat_map(|&u| units[u].iter().copied()));
    }
    train.sort_unstable();
    let mut in_train = vec![false; d.len()];
    for &i in &train {
        in_train[i] = true;
    }
    let test: Vec<usize> = (0..d.len()).filter(|&i| !in_train[i]).collect();
    Ok((d.select(&train), d.select(&test)))
}
