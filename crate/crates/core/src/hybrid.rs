//! CNN feature extractor feeding a random forest.
//!
//! The convnet is trained on one-hot sequences; its penultimate activations
//! (`e0..eN-1`) become forest features, optionally next to the handcrafted
//! feature block. `ProbAverage` instead averages the two models' outputs and
//! `HandcraftedOnly` skips the convnet entirely (the baseline).

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::convnet::{ConvNetArch, ConvNetFile, ConvNetModel, TrainConfig};
use crate::error::{Error, Result};
use crate::eval::{FeatureImportance, FeatureOrigin};
use crate::featurize::{one_hot_encode, FeatureMatrix, Featurizer, KmerSpec, OneHotTensor, PhyschemTable};
use crate::forest::{ForestFile, ForestHyperparams, ForestModel};
use crate::rng::mix;
use crate::seqio::{LabeledDataset, SequenceRecord};

pub const HYBRID_FORMAT: &str = "seqling-hybrid";
pub const HYBRID_VERSION: u32 = 1;
pub const DEFAULT_THRESHOLD: f64 = 0.7;
pub const PREDICTIONS_CSV_HEADER: &str = "id,probability,predicted_label,selected";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Wiring {
    EmbedPlusHandcrafted,
    EmbedOnly,
    ProbAverage,
    HandcraftedOnly,
}

impl Wiring {
    pub fn uses_convnet(self) -> bool {
        self != Wiring::HandcraftedOnly
    }

    fn forest_uses_embedding(self) -> bool {
        matches!(self, Wiring::EmbedPlusHandcrafted | Wiring::EmbedOnly)
    }

    fn forest_uses_handcrafted(self) -> bool {
        self != Wiring::EmbedOnly
    }
}

impl std::str::FromStr for Wiring {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "embed_plus_handcrafted" => Ok(Self::EmbedPlusHandcrafted),
            "embed_only" => Ok(Self::EmbedOnly),
            "prob_average" => Ok(Self::ProbAverage),
            "handcrafted_only" => Ok(Self::HandcraftedOnly),
            _ => Err(Error::InvalidParam(format!("unknown wiring `{s}`"))),
        }
    }
}

/// The seeds inside `train` and `forest` are ignored; both are derived from
/// `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridConfig {
    pub wiring: Wiring,
    pub kmers: Vec<KmerSpec>,
    pub physchem: PhyschemTable,
    pub arch: ConvNetArch,
    pub train: TrainConfig,
    pub forest: ForestHyperparams,
    pub seed: u64,
}

impl Default for HybridConfig {
    fn default() -> Self {
        HybridConfig {
            wiring: Wiring::EmbedPlusHandcrafted,
            kmers: vec![KmerSpec::default()],
            physchem: PhyschemTable::default(),
            arch: ConvNetArch::default(),
            train: TrainConfig::default(),
            forest: ForestHyperparams::default(),
            seed: 0,
        }
    }
}

impl HybridConfig {
    pub fn validate(&self) -> Result<()> {
        Featurizer::new(self.kmers.clone(), self.physchem.clone())?;
        if self.wiring.uses_convnet() {
            self.arch.validate()?;
            self.train.validate()?;
        }
        self.forest.validate()
    }

    fn with_derived_seeds(&self) -> HybridConfig {
        let mut c = self.clone();
        c.train.seed = mix(self.seed, 1);
        c.forest.seed = mix(self.seed, 2);
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub id: String,
    pub probability: f64,
    pub predicted_label: u8,
    pub selected: bool,
}

impl PredictionRow {
    pub fn new(id: impl Into<String>, probability: f64, threshold: f64) -> Self {
        PredictionRow {
            id: id.into(),
            probability,
            predicted_label: (probability >= 0.5) as u8,
            selected: probability > threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HybridModel {
    convnet: Option<ConvNetModel>,
    forest: ForestModel,
    featurizer: Featurizer,
    config: HybridConfig,
    feature_layout: Vec<String>,
}

pub fn embedding_names(dim: usize) -> Vec<String> {
    (0..dim).map(|i| format!("e{i}")).collect()
}

fn one_hot_all(records: &[SequenceRecord], max_len: usize) -> Vec<OneHotTensor> {
    records.par_iter().map(|r| one_hot_encode(&r.sequence, max_len)).collect()
}

impl HybridModel {
    pub fn train(d: &LabeledDataset, c: &HybridConfig) -> Result<HybridModel> {
        c.validate()?;
        let c = c.with_derived_seeds();
        let labels = d.labels_u8();
        let (neg, pos) = d.class_counts();
        if neg == 0 || pos == 0 {
            return Err(Error::SingleClass);
        }

        let mut featurizer = Featurizer::new(c.kmers.clone(), c.physchem.clone())?;
        let handcrafted = if c.wiring.forest_uses_handcrafted() {
            Some(featurizer.fit_transform(d).map_err(|e| Error::stage("featurize", e))?)
        } else {
            None
        };

        let mut embedding = None;
        let convnet = if c.wiring.uses_convnet() {
            let tensors = one_hot_all(d.records(), c.arch.max_len);
            let cnn = ConvNetModel::train(&c.arch, &tensors, &labels, &c.train)
                .map_err(|e| Error::stage("convnet", e))?;
            if c.wiring.forest_uses_embedding() {
                let rows = tensors
                    .par_iter()
                    .map(|x| cnn.embed(x))
                    .collect::<Result<Vec<_>>>()
                    .map_err(|e| Error::stage("embed", e))?;
                embedding = Some(
                    FeatureMatrix::new(embedding_names(c.arch.dense_embedding_dim), rows)
                        .map_err(|e| Error::stage("embed", e))?,
                );
            }
            Some(cnn)
        } else {
            None
        };

        let x = match (embedding, handcrafted) {
            (Some(e), Some(h)) => e.hconcat(&h)?,
            (Some(e), None) => e,
            (None, Some(h)) => h,
            (None, None) => unreachable!("every wiring feeds the forest something"),
        };
        let forest = ForestModel::train(&x, &labels, &c.forest).map_err(|e| Error::stage("forest", e))?;
        Ok(HybridModel {
            convnet,
            forest,
            featurizer,
            feature_layout: x.names().to_vec(),
            config: c,
        })
    }

    pub fn config(&self) -> &HybridConfig {
        &self.config
    }

    pub fn convnet(&self) -> Option<&ConvNetModel> {
        self.convnet.as_ref()
    }

    pub fn forest(&self) -> &ForestModel {
        &self.forest
    }

    pub fn featurizer(&self) -> &Featurizer {
        &self.featurizer
    }

    pub fn feature_layout(&self) -> &[String] {
        &self.feature_layout
    }

    /// Forest input row for one sequence, plus the convnet probability when
    /// the wiring has a convnet.
    pub fn feature_row(&self, seq: &str) -> Result<(Vec<f64>, Option<f64>)> {
        let wiring = self.config.wiring;
        let mut row = Vec::with_capacity(self.feature_layout.len());
        let mut p_cnn = None;
        if let Some(cnn) = &self.convnet {
            let out = cnn.forward(&one_hot_encode(seq, cnn.arch().max_len))?;
            p_cnn = Some(out.probabilities[1]);
            if wiring.forest_uses_embedding() {
                row.extend(out.embedding);
            }
        }
        if wiring.forest_uses_handcrafted() {
            row.extend(self.featurizer.transform_sequence(seq)?);
        }
        Ok((row, p_cnn))
    }

    pub fn predict_proba(&self, seq: &str) -> Result<f64> {
        let (row, p_cnn) = self.feature_row(seq)?;
        let p_forest = self.forest.predict_proba(&row)?;
        Ok(match (self.config.wiring, p_cnn) {
            (Wiring::ProbAverage, Some(p)) => (p + p_forest) / 2.0,
            _ => p_forest,
        })
    }

    /// Predictions in input order; `selected` is `probability > threshold`.
    pub fn predict(&self, records: &[SequenceRecord], threshold: f64) -> Result<Vec<PredictionRow>> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(Error::InvalidParam(format!("threshold must be in (0,1), got {threshold}")));
        }
        records
            .par_iter()
            .map(|r| {
                self.predict_proba(&r.sequence)
                    .map(|p| PredictionRow::new(&r.id, p, threshold))
                    .map_err(|e| Error::for_record(&r.id, e))
            })
            .collect()
    }

    pub fn to_json(&self) -> String {
        let file = HybridFile {
            format: HYBRID_FORMAT.into(),
            version: HYBRID_VERSION,
            config: self.config.clone(),
            featurizer: self.featurizer.clone(),
            feature_layout: self.feature_layout.clone(),
            convnet: self.convnet.as_ref().map(ConvNetFile::from),
            forest: ForestFile::from(&self.forest),
        };
        serde_json::to_string(&file).expect("hybrid serializes")
    }

    pub fn from_json(text: &str) -> Result<HybridModel> {
        let f: HybridFile = serde_json::from_str(text).map_err(|e| Error::Model(e.to_string()))?;
        if f.format != HYBRID_FORMAT || f.version != HYBRID_VERSION {
            return Err(Error::Model(format!("unsupported hybrid format {} v{}", f.format, f.version)));
        }
        let forest = ForestModel::try_from(f.forest)?;
        if forest.feature_names() != f.feature_layout.as_slice() {
            return Err(Error::Model("forest features do not match the feature layout".into()));
        }
        let convnet = f.convnet.map(ConvNetModel::try_from).transpose()?;
        if convnet.is_some() != f.config.wiring.uses_convnet() {
            return Err(Error::Model("convnet presence does not match the wiring".into()));
        }
        Ok(HybridModel {
            convnet,
            forest,
            featurizer: f.featurizer,
            config: f.config,
            feature_layout: f.feature_layout,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<HybridModel> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::in_file(path, e))
    }
}

impl FeatureImportance for HybridModel {
    fn feature_importances(&self) -> Vec<(String, f64, FeatureOrigin)> {
        let n_learned = if self.config.wiring.forest_uses_embedding() {
            self.config.arch.dense_embedding_dim
        } else {
            0
        };
        self.feature_layout
            .iter()
            .cloned()
            .zip(self.forest.gini_importance())
            .enumerate()
            .map(|(i, (name, v))| {
                let origin = if i < n_learned {
                    FeatureOrigin::Learned
                } else {
                    FeatureOrigin::Handcrafted
                };
                (name, v, origin)
            })
            .collect()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct HybridFile {
    format: String,
    version: u32,
    config: HybridConfig,
    featurizer: Featurizer,
    feature_layout: Vec<String>,
    convnet: Option<ConvNetFile>,
    forest: ForestFile,
}

pub fn predictions_csv(rows: &[PredictionRow]) -> String {
    let mut out = String::from(PREDICTIONS_CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{:.6},{},{}",
            r.id, r.probability, r.predicted_label, r.selected as u8
        );
    }
    out
}

/// Reads a predictions CSV. The `selected` column is recomputed from
/// `threshold`.
pub fn parse_predictions_csv(text: &str, threshold: f64) -> Result<Vec<PredictionRow>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(name.to_string()))
    };
    let (id_col, p_col) = (col("id")?, col("probability")?);
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let id = rec.get(id_col).unwrap_or("").to_string();
        let p: f64 = rec
            .get(p_col)
            .unwrap_or("")
            .parse()
            .ok()
            .filter(|p: &f64| (0.0..=1.0).contains(p))
            .ok_or_else(|| Error::Value {
                row: i + 1,
                message: "probability must be a number in [0,1]".into(),
            })?;
        rows.push(PredictionRow::new(id, p, threshold));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convnet::{ConvLayerSpec, Pooling};
    use crate::forest::FeaturesPerSplit;
    use crate::seqio::Label;

    #[test]
    fn selection_is_strict() {
        let flags: Vec<bool> = [0.71, 0.70, 0.69]
            .iter()
            .map(|&p| PredictionRow::new("g", p, 0.7).selected)
            .collect();
        assert_eq!(flags, [true, false, false]);
        assert_eq!(PredictionRow::new("g", 0.5, 0.7).predicted_label, 1);
        assert_eq!(PredictionRow::new("g", 0.4999, 0.7).predicted_label, 0);
    }

    pub(crate) fn small_config(wiring: Wiring) -> HybridConfig {
        HybridConfig {
            wiring,
            arch: ConvNetArch {
                conv_layers: vec![
                    ConvLayerSpec { filters: 4, kernel_width: 4, stride: 1, pool: Pooling::Max { width: 2 } },
                    ConvLayerSpec { filters: 6, kernel_width: 3, stride: 1, pool: Pooling::GlobalMax },
                ],
                dense_embedding_dim: 5,
                max_len: 24,
            },
            train: TrainConfig { epochs: 3, batch_size: 4, ..Default::default() },
            forest: ForestHyperparams { n_trees: 10, features_per_split: FeaturesPerSplit::Sqrt, ..Default::default() },
            seed: 17,
            ..Default::default()
        }
    }

    fn toy() -> LabeledDataset {
        let mut records = Vec::new();
        let mut labels = Vec::new();
        for i in 0..24 {
            let pos = i % 3 == 0;
            let body = if pos { "TTTTTTACGTAC" } else { "GCGCGCACGTAC" };
            let seq = format!("{body}{}", &"ACGTTGCAACGT"[..(i % 12)]);
            records.push(SequenceRecord::new(format!("r{i}"), seq));
            labels.push(if pos { Label::Related } else { Label::NotRelated });
        }
        LabeledDataset::new(records, labels).unwrap()
    }

    #[test]
    fn layouts_per_wiring() {
        let d = toy();
        let m = HybridModel::train(&d, &small_config(Wiring::EmbedOnly)).unwrap();
        assert_eq!(m.forest().feature_names().len(), 5);
        assert_eq!(m.feature_layout()[0], "e0");
        let m = HybridModel::train(&d, &small_config(Wiring::EmbedPlusHandcrafted)).unwrap();
        assert_eq!(m.feature_layout().len(), 5 + 69);
        assert_eq!(m.feature_layout()[5], "length");
        let m = HybridModel::train(&d, &small_config(Wiring::HandcraftedOnly)).unwrap();
        assert!(m.convnet().is_none());
        assert_eq!(m.feature_layout().len(), 69);
    }

    #[test]
    fn prob_average_is_exact_mean() {
        let d = toy();
        let m = HybridModel::train(&d, &small_config(Wiring::ProbAverage)).unwrap();
        for r in d.records() {
            let (row, p_cnn) = m.feature_row(&r.sequence).unwrap();
            let p_forest = m.forest().predict_proba(&row).unwrap();
            assert_eq!(m.predict_proba(&r.sequence).unwrap(), (p_cnn.unwrap() + p_forest) / 2.0);
        }
    }

    #[test]
    fn training_is_deterministic_and_round_trips() {
        let d = toy();
        let a = HybridModel::train(&d, &small_config(Wiring::EmbedPlusHandcrafted)).unwrap();
        let b = HybridModel::train(&d, &small_config(Wiring::EmbedPlusHandcrafted)).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        let back = HybridModel::from_json(&a.to_json()).unwrap();
        let pa = a.predict(d.records(), 0.7).unwrap();
        let pb = back.predict(d.records(), 0.7).unwrap();
        assert_eq!(pa, pb);
    }

    #[test]
    fn predict_contract() {
        let d = toy();
        let m = HybridModel::train(&d, &small_config(Wiring::EmbedPlusHandcrafted)).unwrap();
        assert!(m.predict(&[], 0.7).unwrap().is_empty());
        assert!(m.predict(d.records(), 1.0).is_err());
        let short = [SequenceRecord::new("tiny", "AC")];
        match m.predict(&short, 0.7) {
            Err(Error::Record { id, .. }) => assert_eq!(id, "tiny"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn stage_errors_are_named() {
        let d = toy();
        let mut c = small_config(Wiring::EmbedOnly);
        c.train.learning_rate = 1e300;
        match HybridModel::train(&d, &c) {
            Err(Error::Stage { stage: "convnet", source }) => {
                assert!(matches!(*source, Error::Divergence { .. }))
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn predictions_csv_format() {
        let rows = vec![PredictionRow::new("g1", 0.71, 0.7), PredictionRow::new("g2", 0.2, 0.7)];
        let text = predictions_csv(&rows);
        assert_eq!(
            text,
            "id,probability,predicted_label,selected\ng1,0.710000,1,1\ng2,0.200000,0,0\n"
        );
        assert_eq!(parse_predictions_csv(&text, 0.7).unwrap(), rows);
    }
}
