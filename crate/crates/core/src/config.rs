//! Flat `key = value` run configuration with `--key value` overrides.
//!
//! Every key has a default; unknown keys are rejected. Typed views
//! (`hybrid_config`, `split_spec`, ...) parse and validate on demand, and
//! `validate` runs all of them so bad values surface before any work.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::coexp::{default_keywords, TriageParams};
use crate::convnet::{ConvLayerSpec, ConvNetArch, Pooling, TrainConfig};
use crate::error::{Error, Result};
use crate::featurize::{KmerNormalization, KmerSpec, PhyschemTable};
use crate::forest::{Bootstrap, FeaturesPerSplit, ForestHyperparams};
use crate::hybrid::{HybridConfig, Wiring};
use crate::seqio::SplitSpec;
use crate::synth::{SynthSpec, SynthTask, DEFAULT_MOTIF};

/// (key, default). An empty default means "unset".
pub const KEYS: &[(&str, &str)] = &[
    ("seed", "0"),
    ("threads", "0"),
    ("out", "."),
    // inputs
    ("data", ""),
    ("train", ""),
    ("test", ""),
    ("input", ""),
    ("positive", ""),
    ("negative", ""),
    ("model", ""),
    ("predictions", ""),
    ("network", ""),
    ("annotations", ""),
    ("deg", ""),
    ("physchem_table", ""),
    // split
    ("train_fraction", "0.8"),
    ("stratified", "true"),
    ("group_by_gene", "false"),
    // features
    ("k", "3"),
    ("normalization", "frequency"),
    // network architecture
    ("max_len", "2000"),
    ("conv_filters", "32,64"),
    ("conv_kernels", "8,8"),
    ("conv_strides", "1,1"),
    ("conv_pools", "4,global"),
    ("embedding_dim", "64"),
    // network training
    ("epochs", "20"),
    ("batch_size", "8"),
    ("learning_rate", "0.02"),
    ("momentum", "0.9"),
    ("early_stop_patience", "none"),
    ("validation_fraction", "0.1"),
    ("balanced_loss", "true"),
    ("clip_norm", "1.0"),
    ("undersample", "true"),
    // forest
    ("n_trees", "200"),
    ("max_depth", "none"),
    ("min_samples_leaf", "1"),
    ("features_per_split", "sqrt"),
    ("bootstrap", "class_balanced"),
    // hybrid and downstream
    ("wiring", "embed_plus_handcrafted"),
    ("threshold", "0.7"),
    ("runs", "5"),
    ("top_n", "20"),
    // coexp
    ("hops", "1"),
    ("keywords", ""),
    ("significant_only", "true"),
    ("strict", "false"),
    // synth
    ("task", "composition_motif"),
    ("n_records", "2000"),
    ("seq_len", "500"),
    ("positive_fraction", "0.0909090909090909"),
    ("planted_kmer", "TTT"),
    ("motif", DEFAULT_MOTIF),
    ("motif_offset", "none"),
    ("effect_strength", "1.0"),
];

/// Keys whose values name input files; their digests go into the manifest.
pub const INPUT_KEYS: &[&str] = &[
    "data",
    "train",
    "test",
    "input",
    "positive",
    "negative",
    "model",
    "predictions",
    "network",
    "annotations",
    "deg",
    "physchem_table",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunConfig {
    values: BTreeMap<&'static str, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            values: KEYS.iter().map(|(k, v)| (*k, v.to_string())).collect(),
        }
    }
}

fn canonical_key(key: &str) -> Option<&'static str> {
    let key = key.replace('-', "_");
    KEYS.iter().map(|(k, _)| *k).find(|k| *k == key)
}

fn invalid(key: &str, value: &str, why: impl std::fmt::Display) -> Error {
    Error::InvalidParam(format!("{key} = `{value}`: {why}"))
}

impl RunConfig {
    /// Parses config text. Blank lines and `#` comments are ignored;
    /// a key may appear only once.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut c = RunConfig::default();
        let mut seen = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let format = |message: String| Error::Format { line: i + 1, message };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format("expected `key = value`".into()))?;
            let key = canonical_key(k.trim()).ok_or_else(|| format(format!("unknown key `{}`", k.trim())))?;
            if seen.insert(key, i + 1).is_some() {
                return Err(format(format!("key `{key}` given twice")));
            }
            c.values.insert(key, v.trim().to_string());
        }
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::in_file(path, e))
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let k = canonical_key(key).ok_or_else(|| Error::InvalidParam(format!("unknown key `{key}`")))?;
        self.values.insert(k, value.trim().to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> &str {
        self.values
            .get(key)
            .map(String::as_str)
            .unwrap_or_else(|| panic!("`{key}` is not a config key"))
    }

    /// The fully resolved key/value map, in key order.
    pub fn resolved(&self) -> &BTreeMap<&'static str, String> {
        &self.values
    }

    pub fn to_text(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    fn parse_as<T: std::str::FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.get(key);
        v.parse::<T>().map_err(|e| invalid(key, v, e))
    }

    fn optional<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.get(key) {
            "" | "none" => Ok(None),
            _ => self.parse_as(key).map(Some),
        }
    }

    fn list<T: std::str::FromStr>(&self, key: &str) -> Result<Vec<T>>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.get(key);
        v.split(',')
            .map(|s| s.trim().parse::<T>().map_err(|e| invalid(key, v, e)))
            .collect()
    }

    fn finite(&self, key: &str) -> Result<f64> {
        let x: f64 = self.parse_as(key)?;
        if x.is_finite() {
            Ok(x)
        } else {
            Err(invalid(key, self.get(key), "must be finite"))
        }
    }

    pub fn seed(&self) -> Result<u64> {
        self.parse_as("seed")
    }

    pub fn threads(&self) -> Result<usize> {
        self.parse_as("threads")
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(self.get("out"))
    }

    /// Path value of `key`, or a config error naming the key when unset.
    pub fn path(&self, key: &str) -> Result<PathBuf> {
        self.optional_path(key)
            .ok_or_else(|| Error::InvalidParam(format!("`{key}` is required for this command")))
    }

    pub fn optional_path(&self, key: &str) -> Option<PathBuf> {
        let v = self.get(key);
        (!v.is_empty()).then(|| PathBuf::from(v))
    }

    pub fn threshold(&self) -> Result<f64> {
        let t = self.finite("threshold")?;
        if t > 0.0 && t < 1.0 {
            Ok(t)
        } else {
            Err(invalid("threshold", self.get("threshold"), "must be in (0,1)"))
        }
    }

    pub fn runs(&self) -> Result<usize> {
        let r: usize = self.parse_as("runs")?;
        if r == 0 {
            return Err(invalid("runs", "0", "must be >= 1"));
        }
        Ok(r)
    }

    pub fn top_n(&self) -> Result<usize> {
        self.parse_as("top_n")
    }

    pub fn split_spec(&self) -> Result<SplitSpec> {
        let s = SplitSpec {
            train_fraction: self.finite("train_fraction")?,
            stratified: self.parse_as("stratified")?,
            seed: self.seed()?,
            group_by_gene: self.parse_as("group_by_gene")?,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn kmer_specs(&self) -> Result<Vec<KmerSpec>> {
        let normalization: KmerNormalization = self.parse_as("normalization")?;
        self.list::<usize>("k")?
            .into_iter()
            .map(|k| KmerSpec::new(k, normalization))
            .collect()
    }

    pub fn physchem(&self) -> Result<PhyschemTable> {
        match self.optional_path("physchem_table") {
            Some(p) => PhyschemTable::load(&p),
            None => Ok(PhyschemTable::default()),
        }
    }

    pub fn arch(&self) -> Result<ConvNetArch> {
        let filters: Vec<usize> = self.list("conv_filters")?;
        let kernels: Vec<usize> = self.list("conv_kernels")?;
        let strides: Vec<usize> = self.list("conv_strides")?;
        let pools: Vec<String> = self.list("conv_pools")?;
        let n = filters.len();
        if kernels.len() != n || strides.len() != n || pools.len() != n {
            return Err(Error::InvalidParam(
                "conv_filters, conv_kernels, conv_strides and conv_pools must have equal lengths".into(),
            ));
        }
        let mut layers = Vec::with_capacity(n);
        for i in 0..n {
            let pool = match pools[i].as_str() {
                "global" => Pooling::GlobalMax,
                "none" => Pooling::None,
                w => Pooling::Max {
                    width: w
                        .parse()
                        .map_err(|_| invalid("conv_pools", self.get("conv_pools"), "use a width, `none` or `global`"))?,
                },
            };
            layers.push(ConvLayerSpec {
                filters: filters[i],
                kernel_width: kernels[i],
                stride: strides[i],
                pool,
            });
        }
        let arch = ConvNetArch {
            conv_layers: layers,
            dense_embedding_dim: self.parse_as("embedding_dim")?,
            max_len: self.parse_as("max_len")?,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let t = TrainConfig {
            epochs: self.parse_as("epochs")?,
            batch_size: self.parse_as("batch_size")?,
            learning_rate: self.finite("learning_rate")?,
            momentum: self.finite("momentum")?,
            seed: self.seed()?,
            early_stop_patience: self.optional("early_stop_patience")?,
            validation_fraction: self.finite("validation_fraction")?,
            balanced_loss: self.parse_as("balanced_loss")?,
            clip_norm: self.optional::<f64>("clip_norm")?,
            undersample: self.parse_as("undersample")?,
        };
        t.validate()?;
        if t.learning_rate == 0.0 {
            return Err(invalid("learning_rate", "0", "must be > 0"));
        }
        Ok(t)
    }

    pub fn forest(&self) -> Result<ForestHyperparams> {
        let h = ForestHyperparams {
            n_trees: self.parse_as("n_trees")?,
            max_depth: self.optional("max_depth")?,
            min_samples_leaf: self.parse_as("min_samples_leaf")?,
            features_per_split: self.parse_as::<FeaturesPerSplit>("features_per_split")?,
            bootstrap: self.parse_as::<Bootstrap>("bootstrap")?,
            seed: self.seed()?,
        };
        h.validate()?;
        Ok(h)
    }

    pub fn hybrid_config(&self) -> Result<HybridConfig> {
        let c = HybridConfig {
            wiring: self.parse_as::<Wiring>("wiring")?,
            kmers: self.kmer_specs()?,
            physchem: self.physchem()?,
            arch: self.arch()?,
            train: self.train_config()?,
            forest: self.forest()?,
            seed: self.seed()?,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn triage_params(&self) -> Result<TriageParams> {
        let keywords = match self.get("keywords") {
            "" => default_keywords(),
            v => v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect(),
        };
        if keywords.is_empty() {
            return Err(invalid("keywords", self.get("keywords"), "no keywords given"));
        }
        Ok(TriageParams {
            threshold: self.threshold()?,
            hops: self.parse_as("hops")?,
            keywords,
            significant_only: self.parse_as("significant_only")?,
        })
    }

    pub fn strict(&self) -> Result<bool> {
        self.parse_as("strict")
    }

    pub fn synth_spec(&self) -> Result<SynthSpec> {
        let s = SynthSpec {
            task: self.parse_as::<SynthTask>("task")?,
            n_records: self.parse_as("n_records")?,
            seq_len: self.parse_as("seq_len")?,
            positive_fraction: self.finite("positive_fraction")?,
            planted_kmer: self.get("planted_kmer").to_string(),
            motif: self.get("motif").to_string(),
            motif_offset: self.optional("motif_offset")?,
            effect_strength: self.finite("effect_strength")?,
            seed: self.seed()?,
        };
        s.validate()?;
        Ok(s)
    }

    /// Parses every typed view that does not touch the filesystem.
    pub fn validate(&self) -> Result<()> {
        self.seed()?;
        self.threads()?;
        self.threshold()?;
        self.runs()?;
        self.top_n()?;
        self.split_spec()?;
        self.kmer_specs()?;
        self.arch()?;
        self.train_config()?;
        self.forest()?;
        self.parse_as::<Wiring>("wiring")?;
        self.triage_params()?;
        self.strict()?;
        self.synth_spec()?;
        Ok(())
    }
}
