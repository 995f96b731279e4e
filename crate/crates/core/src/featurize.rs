//! Handcrafted sequence features (length, GC content, physicochemical
//! composition, k-mer spectra) and one-hot tensors.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seqio::{LabeledDataset, SequenceRecord};

pub const BASES: [u8; 4] = [b'A', b'C', b'G', b'T'];
pub const MAX_K: usize = 6;

/// Names of the scalar columns that precede the k-mer block.
pub const SCALAR_FEATURES: [&str; 5] = [
    "length",
    "gc_content",
    "charge_distribution",
    "hydrophobicity_index",
    "molecular_weight",
];

#[inline]
pub fn base_index(b: u8) -> Option<usize> {
    match b {
        b'A' => Some(0),
        b'C' => Some(1),
        b'G' => Some(2),
        b'T' => Some(3),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KmerNormalization {
    Counts,
    Frequency,
    Tfidf,
}

impl std::str::FromStr for KmerNormalization {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "counts" => Ok(Self::Counts),
            "frequency" => Ok(Self::Frequency),
            "tfidf" => Ok(Self::Tfidf),
            _ => Err(Error::InvalidParam(format!("unknown k-mer normalization `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KmerSpec {
    pub k: usize,
    pub normalization: KmerNormalization,
}

impl Default for KmerSpec {
    fn default() -> Self {
        KmerSpec {
            k: 3,
            normalization: KmerNormalization::Frequency,
        }
    }
}

impl KmerSpec {
    pub fn new(k: usize, normalization: KmerNormalization) -> Result<Self> {
        let s = KmerSpec { k, normalization };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=MAX_K).contains(&self.k) {
            return Err(Error::InvalidParam(format!("k must be in 1..={MAX_K}, got {}", self.k)));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        1 << (2 * self.k)
    }

    /// K-mer strings in index order (lexicographic over A<C<G<T).
    pub fn names(&self) -> Vec<String> {
        (0..self.dim()).map(|i| kmer_string(i, self.k)).collect()
    }
}

pub fn kmer_string(mut index: usize, k: usize) -> String {
    let mut out = vec![b'A'; k];
    for slot in out.iter_mut().rev() {
        *slot = BASES[index & 3];
        index >>= 2;
    }
    String::from_utf8(out).expect("ascii")
}

pub fn kmer_index(kmer: &str) -> Option<usize> {
    kmer.bytes()
        .try_fold(0usize, |acc, b| base_index(b).map(|v| (acc << 2) | v))
}

/// Fraction of G+C among unambiguous bases; 0 for an all-N sequence.
pub fn gc_content(seq: &str) -> Result<f64> {
    if seq.is_empty() {
        return Err(Error::EmptySequence);
    }
    let counts = base_counts(seq);
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Ok(0.0);
    }
    Ok((counts[1] + counts[2]) as f64 / total as f64)
}

fn base_counts(seq: &str) -> [usize; 4] {
    let mut counts = [0usize; 4];
    for b in seq.bytes() {
        if let Some(i) = base_index(b) {
            counts[i] += 1;
        }
    }
    counts
}

/// Sliding-window k-mer spectrum. Windows containing N are skipped. In
/// `Tfidf` mode this returns term frequencies; the idf factor needs the whole
/// corpus (see [`tfidf_weight`]).
pub fn kmer_frequencies(seq: &str, spec: &KmerSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    let k = spec.k;
    let bytes = seq.as_bytes();
    if bytes.len() < k {
        return Err(Error::ShortSequence { len: bytes.len(), k });
    }
    let mask = spec.dim() - 1;
    let mut counts = vec![0.0; spec.dim()];
    let mut code = 0usize;
    // number of valid bases at the tail of the current window
    let mut run = 0usize;
    let mut windows = 0usize;
    for &b in bytes {
        match base_index(b) {
            Some(v) => {
                code = ((code << 2) | v) & mask;
                run += 1;
                if run >= k {
                    counts[code] += 1.0;
                    windows += 1;
                }
            }
            None => run = 0,
        }
    }
    if spec.normalization != KmerNormalization::Counts && windows > 0 {
        let n = windows as f64;
        counts.iter_mut().for_each(|c| *c /= n);
    }
    Ok(counts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhyschemTable {
    /// Weights indexed A, C, G, T.
    pub charge_distribution: [f64; 4],
    pub hydrophobicity_index: [f64; 4],
    pub molecular_weight: [f64; 4],
}

impl Default for PhyschemTable {
    /// Placeholder constants: nucleotide monophosphate masses, a uniform
    /// backbone charge, and a relative hydrophobicity scale.
    fn default() -> Self {
        PhyschemTable {
            charge_distribution: [-1.0, -1.0, -1.0, -1.0],
            hydrophobicity_index: [0.62, 0.29, 0.48, 0.73],
            molecular_weight: [331.2, 307.2, 347.2, 322.2],
        }
    }
}

impl PhyschemTable {
    pub const PROPERTIES: [&'static str; 3] =
        ["charge_distribution", "hydrophobicity_index", "molecular_weight"];

    pub fn property(&self, i: usize) -> &[f64; 4] {
        match i {
            0 => &self.charge_distribution,
            1 => &self.hydrophobicity_index,
            _ => &self.molecular_weight,
        }
    }

    fn property_mut(&mut self, name: &str) -> Option<&mut [f64; 4]> {
        match name {
            "charge_distribution" => Some(&mut self.charge_distribution),
            "hydrophobicity_index" => Some(&mut self.hydrophobicity_index),
            "molecular_weight" => Some(&mut self.molecular_weight),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, name) in Self::PROPERTIES.iter().enumerate() {
            if self.property(i).iter().any(|w| !w.is_finite()) {
                return Err(Error::InvalidParam(format!("non-finite weight for {name}")));
            }
        }
        Ok(())
    }

    /// Parses a TSV table: header `property\tA\tC\tG\tT`, one row per property.
    /// Every property must be present.
    pub fn parse_tsv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, h)) if h.split('\t').map(str::trim).eq(["property", "A", "C", "G", "T"]) => {}
            _ => {
                return Err(Error::Format {
                    line: 1,
                    message: "expected header `property\\tA\\tC\\tG\\tT`".into(),
                })
            }
        }
        let mut table = PhyschemTable::default();
        let mut seen = HashSet::new();
        for (i, line) in lines {
            let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
            let bad = |message: String| Error::Format { line: i + 1, message };
            if fields.len() != 5 {
                return Err(bad(format!("expected 5 fields, got {}", fields.len())));
            }
            let slot = table
                .property_mut(fields[0])
                .ok_or_else(|| bad(format!("unknown property `{}`", fields[0])))?;
            for (j, f) in fields[1..].iter().enumerate() {
                slot[j] = f
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| bad(format!("bad weight `{f}`")))?;
            }
            seen.insert(fields[0].to_string());
        }
        for p in Self::PROPERTIES {
            if !seen.contains(p) {
                return Err(Error::Schema(p.to_string()));
            }
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_tsv(&text).map_err(|e| Error::in_file(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhyschemFeatures {
    pub length: f64,
    pub charge_distribution: f64,
    pub hydrophobicity_index: f64,
    pub molecular_weight: f64,
}

/// Composition-weighted mean of each property over the unambiguous bases.
pub fn physchem_features(seq: &str, table: &PhyschemTable) -> Result<PhyschemFeatures> {
    let counts = base_counts(seq);
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(Error::DegenerateSequence);
    }
    let mean = |w: &[f64; 4]| {
        w.iter().zip(counts.iter()).map(|(w, &c)| w * c as f64).sum::<f64>() / total as f64
    };
    Ok(PhyschemFeatures {
        length: seq.len() as f64,
        charge_distribution: mean(&table.charge_distribution),
        hydrophobicity_index: mean(&table.hydrophobicity_index),
        molecular_weight: mean(&table.molecular_weight),
    })
}

/// 4 x max_len one-hot encoding, channel-major (`data[c * max_len + t]`).
#[derive(Debug, Clone, PartialEq)]
pub struct OneHotTensor {
    pub max_len: usize,
    pub data: Vec<f64>,
}

impl OneHotTensor {
    pub const CHANNELS: usize = 4;

    pub fn get(&self, channel: usize, pos: usize) -> f64 {
        self.data[channel * self.max_len + pos]
    }
}

/// Encodes the 5' prefix of `seq`; N and padding become zero columns.
pub fn one_hot_encode(seq: &str, max_len: usize) -> OneHotTensor {
    let mut data = vec![0.0; 4 * max_len];
    for (t, b) in seq.bytes().take(max_len).enumerate() {
        if let Some(c) = base_index(b) {
            data[c * max_len + t] = 1.0;
        }
    }
    OneHotTensor { max_len, data }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    names: Vec<String>,
    nrows: usize,
    values: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(names: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        let ncols = names.len();
        let mut unique = HashSet::with_capacity(ncols);
        for n in &names {
            if !unique.insert(n.as_str()) {
                return Err(Error::InvalidParam(format!("duplicate feature name `{n}`")));
            }
        }
        let nrows = rows.len();
        let mut values = Vec::with_capacity(nrows * ncols);
        for row in rows {
            if row.len() != ncols {
                return Err(Error::Dimension {
                    expected: ncols,
                    got: row.len(),
                });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParam("non-finite feature value".into()));
            }
            values.extend(row);
        }
        Ok(FeatureMatrix { names, nrows, values })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.names.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.ncols();
        &self.values[i * n..(i + 1) * n]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.ncols() + c]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.nrows).map(move |i| self.row(i))
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Side-by-side concatenation with the same row count.
    pub fn hconcat(&self, other: &FeatureMatrix) -> Result<FeatureMatrix> {
        if self.nrows != other.nrows {
            return Err(Error::Dimension {
                expected: self.nrows,
                got: other.nrows,
            });
        }
        let names = self.names.iter().chain(other.names.iter()).cloned().collect();
        let rows = (0..self.nrows)
            .map(|i| [self.row(i), other.row(i)].concat())
            .collect();
        FeatureMatrix::new(names, rows)
    }

    /// Renders `id,<names>` CSV with 17 significant digits per value.
    pub fn to_csv(&self, ids: &[String]) -> Result<String> {
        if ids.len() != self.nrows {
            return Err(Error::Dimension {
                expected: self.nrows,
                got: ids.len(),
            });
        }
        let mut out = String::from("id");
        for n in &self.names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for (i, id) in ids.iter().enumerate() {
            out.push_str(id);
            for v in self.row(i) {
                let _ = write!(out, ",{v:.16e}");
            }
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_csv(text: &str) -> Result<(Vec<String>, FeatureMatrix)> {
        let mut rdr = csv::ReaderBuilder::new().from_reader(text.as_bytes());
        let headers = rdr.headers()?.clone();
        if headers.get(0) != Some("id") {
            return Err(Error::Schema("id".into()));
        }
        let names: Vec<String> = headers.iter().skip(1).map(String::from).collect();
        let mut ids = Vec::new();
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            ids.push(rec.get(0).unwrap_or("").to_string());
            let row = rec
                .iter()
                .skip(1)
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Value {
                    row: i + 1,
                    message: e.to_string(),
                })?;
            rows.push(row);
        }
        Ok((ids, FeatureMatrix::new(names, rows)?))
    }
}

/// Smoothed inverse document frequency per column: ln((1+R)/(1+df)).
pub fn idf_weights(m: &FeatureMatrix, columns: &[usize]) -> Vec<f64> {
    let r = m.nrows() as f64;
    columns
        .iter()
        .map(|&c| {
            let df = (0..m.nrows()).filter(|&i| m.get(i, c) > 0.0).count() as f64;
            ((1.0 + r) / (1.0 + df)).ln()
        })
        .collect()
}

fn scale_columns(m: &FeatureMatrix, columns: &[usize], weights: &[f64]) -> FeatureMatrix {
    let mut values = m.values.clone();
    let n = m.ncols();
    for i in 0..m.nrows() {
        for (&c, &w) in columns.iter().zip(weights) {
            values[i * n + c] *= w;
        }
    }
    FeatureMatrix {
        names: m.names.clone(),
        nrows: m.nrows,
        values,
    }
}

/// TF-IDF reweighting of the given columns, with idf fitted on `m` itself.
/// Other columns pass through unchanged.
pub fn tfidf_weight(m: &FeatureMatrix, columns: &[usize]) -> FeatureMatrix {
    let idf = idf_weights(m, columns);
    scale_columns(m, columns, &idf)
}

/// Feature extraction settings plus, for TF-IDF, the idf vector fitted on
/// the training corpus so that later records are weighted consistently.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Featurizer {
    pub kmers: Vec<KmerSpec>,
    pub table: PhyschemTable,
    #[serde(default)]
    pub idf: Option<Vec<f64>>,
}

impl Featurizer {
    pub fn new(kmers: Vec<KmerSpec>, table: PhyschemTable) -> Result<Self> {
        if kmers.is_empty() {
            return Err(Error::InvalidParam("at least one k-mer spec is required".into()));
        }
        let mut ks = HashSet::new();
        for s in &kmers {
            s.validate()?;
            if !ks.insert(s.k) {
                return Err(Error::InvalidParam(format!("k = {} listed twice", s.k)));
            }
        }
        table.validate()?;
        Ok(Featurizer {
            kmers,
            table,
            idf: None,
        })
    }

    pub fn feature_names(&self) -> Vec<String> {
        SCALAR_FEATURES
            .iter()
            .map(|s| s.to_string())
            .chain(self.kmers.iter().flat_map(|s| s.names()))
            .collect()
    }

    fn tfidf_columns(&self) -> Vec<usize> {
        let mut cols = Vec::new();
        let mut offset = SCALAR_FEATURES.len();
        for s in &self.kmers {
            if s.normalization == KmerNormalization::Tfidf {
                cols.extend(offset..offset + s.dim());
            }
            offset += s.dim();
        }
        cols
    }

    pub fn featurize_sequence(&self, seq: &str) -> Result<Vec<f64>> {
        let gc = gc_content(seq)?;
        let p = physchem_features(seq, &self.table)?;
        let mut row = vec![
            p.length,
            gc,
            p.charge_distribution,
            p.hydrophobicity_index,
            p.molecular_weight,
        ];
        for s in &self.kmers {
            row.extend(kmer_frequencies(seq, s)?);
        }
        Ok(row)
    }

    /// One record's feature row, with the fitted idf applied if any.
    pub fn transform_sequence(&self, seq: &str) -> Result<Vec<f64>> {
        let mut row = self.featurize_sequence(seq)?;
        let cols = self.tfidf_columns();
        if !cols.is_empty() {
            let idf = self
                .idf
                .as_ref()
                .filter(|idf| idf.len() == cols.len())
                .ok_or_else(|| Error::InvalidParam("TF-IDF featurizer has not been fitted".into()))?;
            for (&c, &w) in cols.iter().zip(idf) {
                row[c] *= w;
            }
        }
        Ok(row)
    }

    fn raw_matrix(&self, records: &[SequenceRecord]) -> Result<FeatureMatrix> {
        let rows = records
            .par_iter()
            .map(|r| self.featurize_sequence(&r.sequence).map_err(|e| Error::for_record(&r.id, e)))
            .collect::<Result<Vec<_>>>()?;
        FeatureMatrix::new(self.feature_names(), rows)
    }

    /// Featurizes `d` and, when any k-mer block uses TF-IDF, fits the idf
    /// vector on it.
    pub fn fit_transform(&mut self, d: &LabeledDataset) -> Result<FeatureMatrix> {
        self.fit_transform_records(d.records())
    }

    /// As `fit_transform`, for unlabeled records.
    pub fn fit_transform_records(&mut self, records: &[SequenceRecord]) -> Result<FeatureMatrix> {
        let m = self.raw_matrix(records)?;
        let cols = self.tfidf_columns();
        if cols.is_empty() {
            self.idf = None;
            return Ok(m);
        }
        let idf = idf_weights(&m, &cols);
        let out = scale_columns(&m, &cols, &idf);
        self.idf = Some(idf);
        Ok(out)
    }

    /// Featurizes with the already-fitted idf (if any).
    pub fn transform(&self, d: &LabeledDataset) -> Result<FeatureMatrix> {
        let m = self.raw_matrix(d.records())?;
        let cols = self.tfidf_columns();
        if cols.is_empty() {
            return Ok(m);
        }
        match &self.idf {
            Some(idf) if idf.len() == cols.len() => Ok(scale_columns(&m, &cols, idf)),
            _ => Err(Error::InvalidParam("TF-IDF featurizer has not been fitted".into())),
        }
    }
}

/// Scalar features followed by the k-mer block, rows in dataset order.
pub fn featurize_dataset(d: &LabeledDataset, spec: &KmerSpec, table: &PhyschemTable) -> Result<FeatureMatrix> {
    Featurizer::new(vec![*spec], table.clone())?.fit_transform(d)
}
