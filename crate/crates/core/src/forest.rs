//! Random forest classifier: Gini splits, bootstrap aggregation (plain or
//! class-balanced), Laplace-smoothed leaf probabilities and Gini importance.

use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurize::FeatureMatrix;
use crate::rng::{mix, rng_for};

pub const FOREST_FORMAT: &str = "seqling-forest";
pub const FOREST_VERSION: u32 = 1;

/// Gini impurity of a binary label multiset given as (negatives, positives).
pub fn gini_from_counts(counts: [usize; 2]) -> f64 {
    let n = (counts[0] + counts[1]) as f64;
    debug_assert!(n > 0.0);
    let p0 = counts[0] as f64 / n;
    let p1 = counts[1] as f64 / n;
    1.0 - p0 * p0 - p1 * p1
}

/// Gini impurity `1 - p0^2 - p1^2`. Panics on an empty slice.
pub fn gini_impurity(labels: &[u8]) -> f64 {
    assert!(!labels.is_empty(), "gini impurity of an empty label set");
    let pos = labels.iter().filter(|&&l| l == 1).count();
    gini_from_counts([labels.len() - pos, pos])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeaturesPerSplit {
    Sqrt,
    Log2,
    All,
    Fixed(usize),
}

impl FeaturesPerSplit {
    pub fn resolve(self, n_features: usize) -> Result<usize> {
        let m = match self {
            FeaturesPerSplit::Sqrt => (n_features as f64).sqrt().floor() as usize,
            FeaturesPerSplit::Log2 => (n_features as f64).log2().floor() as usize,
            FeaturesPerSplit::All => n_features,
            FeaturesPerSplit::Fixed(n) => {
                if n == 0 || n > n_features {
                    return Err(Error::InvalidParam(format!(
                        "features_per_split {n} outside 1..={n_features}"
                    )));
                }
                n
            }
        };
        Ok(m.clamp(1, n_features.max(1)))
    }
}

impl std::str::FromStr for FeaturesPerSplit {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sqrt" => Ok(Self::Sqrt),
            "log2" => Ok(Self::Log2),
            "all" => Ok(Self::All),
            n => n
                .parse::<usize>()
                .map(Self::Fixed)
                .map_err(|_| Error::InvalidParam(format!("bad features_per_split `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bootstrap {
    Plain,
    ClassBalanced,
}

impl std::str::FromStr for Bootstrap {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(Self::Plain),
            "class_balanced" => Ok(Self::ClassBalanced),
            _ => Err(Error::InvalidParam(format!("unknown bootstrap `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForestHyperparams {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    pub features_per_split: FeaturesPerSplit,
    pub bootstrap: Bootstrap,
    pub seed: u64,
}

impl Default for ForestHyperparams {
    fn default() -> Self {
        ForestHyperparams {
            n_trees: 200,
            max_depth: None,
            min_samples_leaf: 1,
            features_per_split: FeaturesPerSplit::Sqrt,
            bootstrap: Bootstrap::ClassBalanced,
            seed: 0,
        }
    }
}

impl ForestHyperparams {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::InvalidParam("n_trees must be >= 1".into()));
        }
        if self.min_samples_leaf == 0 {
            return Err(Error::InvalidParam("min_samples_leaf must be >= 1".into()));
        }
        if self.max_depth == Some(0) {
            return Err(Error::InvalidParam("max_depth must be >= 1".into()));
        }
        if self.features_per_split == FeaturesPerSplit::Fixed(0) {
            return Err(Error::InvalidParam("features_per_split must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        /// Class counts of the bootstrap samples reaching this node.
        counts: [usize; 2],
        /// Parent impurity minus sample-weighted child impurity.
        gini_decrease: f64,
    },
    Leaf {
        counts: [usize; 2],
    },
}

impl Node {
    pub fn counts(&self) -> [usize; 2] {
        match self {
            Node::Split { counts, .. } | Node::Leaf { counts } => *counts,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    nodes: Vec<Node>,
}

impl DecisionTree {
    pub fn from_nodes(nodes: Vec<Node>, n_features: usize) -> Result<Self> {
        let t = DecisionTree { nodes };
        t.validate(n_features)?;
        Ok(t)
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    fn leaf(&self, x: &[f64]) -> &Node {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => i = if x[*feature] <= *threshold { *left } else { *right },
                leaf => return leaf,
            }
        }
    }

    /// Laplace-smoothed positive fraction of the leaf `x` falls into.
    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        let [neg, pos] = self.leaf(x).counts();
        (pos as f64 + 1.0) / ((neg + pos) as f64 + 2.0)
    }

    fn validate(&self, n_features: usize) -> Result<()> {
        let bad = |m: String| Error::Model(m);
        if self.nodes.is_empty() {
            return Err(bad("tree has no nodes".into()));
        }
        let mut parents = vec![0usize; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            match node {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    if *feature >= n_features {
                        return Err(bad(format!("node {i} uses feature {feature} >= {n_features}")));
                    }
                    if !threshold.is_finite() {
                        return Err(bad(format!("node {i} has a non-finite threshold")));
                    }
                    for &c in [left, right] {
                        if c <= i || c >= self.nodes.len() {
                            return Err(bad(format!("node {i} has invalid child {c}")));
                        }
                        parents[c] += 1;
                    }
                }
                Node::Leaf { counts } => {
                    if counts[0] + counts[1] == 0 {
                        return Err(bad(format!("leaf {i} is empty")));
                    }
                }
            }
        }
        // children always follow parents, so one parent per node means every
        // node hangs off the root
        if parents[0] != 0 || parents[1..].iter().any(|&p| p != 1) {
            return Err(bad("tree nodes are not a single rooted tree".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    trees: Vec<DecisionTree>,
    feature_names: Vec<String>,
    hyperparams: ForestHyperparams,
}

struct TreeBuilder<'a> {
    x: &'a FeatureMatrix,
    y: &'a [u8],
    h: &'a ForestHyperparams,
    m_try: usize,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
    // scratch buffer of (value, label) pairs
    scratch: Vec<(f64, u8)>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    decrease: f64,
}

impl TreeBuilder<'_> {
    fn counts(&self, idx: &[usize]) -> [usize; 2] {
        let pos = idx.iter().filter(|&&i| self.y[i] == 1).count();
        [idx.len() - pos, pos]
    }

    fn build(&mut self, idx: Vec<usize>, depth: usize) -> usize {
        let counts = self.counts(&idx);
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { counts });
        let pure = counts[0] == 0 || counts[1] == 0;
        let depth_capped = self.h.max_depth.is_some_and(|d| depth >= d);
        if pure || depth_capped || idx.len() < 2 * self.h.min_samples_leaf {
            return id;
        }
        let Some(best) = self.best_split(&idx, counts) else {
            return id;
        };
        let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = idx
            .iter()
            .partition(|&&i| self.x.get(i, best.feature) <= best.threshold);
        let left = self.build(left_idx, depth + 1);
        let right = self.build(right_idx, depth + 1);
        self.nodes[id] = Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
            counts,
            gini_decrease: best.decrease,
        };
        id
    }

    fn best_split(&mut self, idx: &[usize], counts: [usize; 2]) -> Option<BestSplit> {
        let n_features = self.x.ncols();
        let mut features = sample(&mut self.rng, n_features, self.m_try).into_vec();
        features.sort_unstable();

        let n = idx.len();
        let parent = gini_from_counts(counts);
        let min_leaf = self.h.min_samples_leaf;
        let mut best: Option<BestSplit> = None;
        for f in features {
            self.scratch.clear();
            self.scratch.extend(idx.iter().map(|&i| (self.x.get(i, f), self.y[i])));
            self.scratch.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left = [0usize; 2];
            for j in 0..n - 1 {
                left[self.scratch[j].1 as usize] += 1;
                let (v, next) = (self.scratch[j].0, self.scratch[j + 1].0);
                let n_left = j + 1;
                if v == next || n_left < min_leaf || n - n_left < min_leaf {
                    continue;
                }
                let right = [counts[0] - left[0], counts[1] - left[1]];
                let weighted = (n_left as f64 * gini_from_counts(left)
                    + (n - n_left) as f64 * gini_from_counts(right))
                    / n as f64;
                let decrease = parent - weighted;
                // strict comparison keeps the lowest feature, then the lowest
                // threshold, among equal candidates
                if decrease > 1e-12 && best.as_ref().map_or(true, |b| decrease > b.decrease) {
                    let mut threshold = 0.5 * (v + next);
                    if threshold >= next {
                        threshold = v;
                    }
                    best = Some(BestSplit {
                        feature: f,
                        threshold,
                        decrease,
                    });
                }
            }
        }
        best
    }
}

fn bootstrap_indices(y: &[u8], h: &ForestHyperparams, rng: &mut ChaCha8Rng) -> Vec<usize> {
    match h.bootstrap {
        Bootstrap::Plain => (0..y.len()).map(|_| rng.gen_range(0..y.len())).collect(),
        Bootstrap::ClassBalanced => {
            let pos: Vec<usize> = (0..y.len()).filter(|&i| y[i] == 1).collect();
            let neg: Vec<usize> = (0..y.len()).filter(|&i| y[i] == 0).collect();
            let m = pos.len().min(neg.len());
            let mut out = Vec::with_capacity(2 * m);
            out.extend((0..m).map(|_| pos[rng.gen_range(0..pos.len())]));
            out.extend((0..m).map(|_| neg[rng.gen_range(0..neg.len())]));
            out
        }
    }
}

impl ForestModel {
    pub fn train(x: &FeatureMatrix, y: &[u8], h: &ForestHyperparams) -> Result<ForestModel> {
        h.validate()?;
        if x.nrows() != y.len() {
            return Err(Error::Dimension {
                expected: x.nrows(),
                got: y.len(),
            });
        }
        if y.iter().any(|&l| l > 1) {
            return Err(Error::InvalidParam("labels must be 0 or 1".into()));
        }
        let pos = y.iter().filter(|&&l| l == 1).count();
        if y.len() < 2 || pos == 0 || pos == y.len() {
            return Err(Error::SingleClass);
        }
        if x.ncols() == 0 {
            return Err(Error::InvalidParam("feature matrix has no columns".into()));
        }
        let m_try = h.features_per_split.resolve(x.ncols())?;
        let trees = (0..h.n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = rng_for(mix(h.seed, t as u64));
                let idx = bootstrap_indices(y, h, &mut rng);
                let mut b = TreeBuilder {
                    x,
                    y,
                    h,
                    m_try,
                    rng,
                    nodes: Vec::new(),
                    scratch: Vec::with_capacity(idx.len()),
                };
                b.build(idx, 0);
                DecisionTree { nodes: b.nodes }
            })
            .collect();
        Ok(ForestModel {
            trees,
            feature_names: x.names().to_vec(),
            hyperparams: *h,
        })
    }

    pub fn from_parts(
        trees: Vec<DecisionTree>,
        feature_names: Vec<String>,
        hyperparams: ForestHyperparams,
    ) -> Result<ForestModel> {
        if trees.is_empty() {
            return Err(Error::Model("forest has no trees".into()));
        }
        for t in &trees {
            t.validate(feature_names.len())?;
        }
        Ok(ForestModel {
            trees,
            feature_names,
            hyperparams,
        })
    }

    pub fn trees(&self) -> &[DecisionTree] {
        &self.trees
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn hyperparams(&self) -> &ForestHyperparams {
        &self.hyperparams
    }

    /// Mean of the trees' smoothed leaf probabilities.
    pub fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.feature_names.len() {
            return Err(Error::Dimension {
                expected: self.feature_names.len(),
                got: x.len(),
            });
        }
        let sum: f64 = self.trees.iter().map(|t| t.predict_proba(x)).sum();
        Ok(sum / self.trees.len() as f64)
    }

    pub fn predict_proba_matrix(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        (0..x.nrows())
            .into_par_iter()
            .map(|i| self.predict_proba(x.row(i)))
            .collect()
    }

    /// Normalized mean decrease in impurity per feature; all zeros when no
    /// tree ever split.
    pub fn gini_importance(&self) -> Vec<f64> {
        let mut imp = vec![0.0; self.feature_names.len()];
        for t in &self.trees {
            let [n0, n1] = t.nodes[0].counts();
            let root = (n0 + n1) as f64;
            for node in &t.nodes {
                if let Node::Split {
                    feature,
                    counts,
                    gini_decrease,
                    ..
                } = node
                {
                    imp[*feature] += (counts[0] + counts[1]) as f64 / root * gini_decrease;
                }
            }
        }
        let n_trees = self.trees.len() as f64;
        imp.iter_mut().for_each(|v| *v /= n_trees);
        let total: f64 = imp.iter().sum();
        if total > 0.0 {
            imp.iter_mut().for_each(|v| *v /= total);
        }
        imp
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&ForestFile::from(self)).expect("forest serializes")
    }

    pub fn from_json(text: &str) -> Result<ForestModel> {
        let file: ForestFile = serde_json::from_str(text).map_err(|e| Error::Model(e.to_string()))?;
        file.try_into()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<ForestModel> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::in_file(path, e))
    }
}

/// On-disk layout: one struct-of-arrays per tree. `feature` is -1 for
/// leaves; `left`/`right` are -1 for leaves.
#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct FlatTree {
    feature: Vec<i64>,
    threshold: Vec<f64>,
    left: Vec<i64>,
    right: Vec<i64>,
    count_neg: Vec<usize>,
    count_pos: Vec<usize>,
    gini_decrease: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct ForestFile {
    format: String,
    version: u32,
    feature_names: Vec<String>,
    hyperparams: ForestHyperparams,
    trees: Vec<FlatTree>,
}

impl From<&DecisionTree> for FlatTree {
    fn from(t: &DecisionTree) -> Self {
        let mut f = FlatTree {
            feature: vec![],
            threshold: vec![],
            left: vec![],
            right: vec![],
            count_neg: vec![],
            count_pos: vec![],
            gini_decrease: vec![],
        };
        for node in &t.nodes {
            let counts = node.counts();
            f.count_neg.push(counts[0]);
            f.count_pos.push(counts[1]);
            match node {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    gini_decrease,
                    ..
                } => {
                    f.feature.push(*feature as i64);
                    f.threshold.push(*threshold);
                    f.left.push(*left as i64);
                    f.right.push(*right as i64);
                    f.gini_decrease.push(*gini_decrease);
                }
                Node::Leaf { .. } => {
                    f.feature.push(-1);
                    f.threshold.push(0.0);
                    f.left.push(-1);
                    f.right.push(-1);
                    f.gini_decrease.push(0.0);
                }
            }
        }
        f
    }
}

impl FlatTree {
    fn into_nodes(self) -> Result<Vec<Node>> {
        let n = self.feature.len();
        let lens = [
            self.threshold.len(),
            self.left.len(),
            self.right.len(),
            self.count_neg.len(),
            self.count_pos.len(),
            self.gini_decrease.len(),
        ];
        if lens.iter().any(|&l| l != n) {
            return Err(Error::Model("tree arrays have unequal lengths".into()));
        }
        (0..n)
            .map(|i| {
                let counts = [self.count_neg[i], self.count_pos[i]];
                if self.feature[i] < 0 {
                    return Ok(Node::Leaf { counts });
                }
                let idx = |v: i64| {
                    usize::try_from(v).map_err(|_| Error::Model(format!("node {i} has a negative child")))
                };
                Ok(Node::Split {
                    feature: self.feature[i] as usize,
                    threshold: self.threshold[i],
                    left: idx(self.left[i])?,
                    right: idx(self.right[i])?,
                    counts,
                    gini_decrease: self.gini_decrease[i],
                })
            })
            .collect()
    }
}

impl From<&ForestModel> for ForestFile {
    fn from(m: &ForestModel) -> Self {
        ForestFile {
            format: FOREST_FORMAT.into(),
            version: FOREST_VERSION,
            feature_names: m.feature_names.clone(),
            hyperparams: m.hyperparams,
            trees: m.trees.iter().map(FlatTree::from).collect(),
        }
    }
}

impl TryFrom<ForestFile> for ForestModel {
    type Error = Error;
    fn try_from(f: ForestFile) -> Result<Self> {
        if f.format != FOREST_FORMAT || f.version != FOREST_VERSION {
            return Err(Error::Model(format!(
                "unsupported forest format {} v{}",
                f.format, f.version
            )));
        }
        let n_features = f.feature_names.len();
        let trees = f
            .trees
            .into_iter()
            .map(|t| DecisionTree::from_nodes(t.into_nodes()?, n_features))
            .collect::<Result<Vec<_>>>()?;
        ForestModel::from_parts(trees, f.feature_names, f.hyperparams)
    }
}
