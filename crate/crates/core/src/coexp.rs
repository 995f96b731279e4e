//! Co-expression triage of confident predictions: seed selection,
//! neighborhood extraction, annotation keyword hits and DEG overlap.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hybrid::PredictionRow;

pub const DEFAULT_KEYWORDS: [&str; 9] = [
    "zinc finger",
    "zn finger",
    "metallothionein",
    "heavy metal",
    "superoxide dismutase",
    "catalase",
    "cadmium",
    "mercury",
    "metal transport",
];

pub fn default_keywords() -> Vec<String> {
    DEFAULT_KEYWORDS.iter().map(|s| s.to_string()).collect()
}

/// Undirected gene graph with per-node annotation text.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CoexpNetwork {
    nodes: BTreeMap<String, String>,
    /// Canonical (smaller id, larger id) -> weight.
    edges: BTreeMap<(String, String), f64>,
    adjacency: BTreeMap<String, BTreeSet<String>>,
}

impl CoexpNetwork {
    pub fn add_node(&mut self, id: &str, annotation: &str) {
        self.nodes.insert(id.to_string(), annotation.to_string());
        self.adjacency.entry(id.to_string()).or_default();
    }

    /// Adds an undirected edge; the first weight seen for a pair is kept.
    /// Returns false if the pair was already present.
    pub fn add_edge(&mut self, a: &str, b: &str, weight: f64) -> Result<bool> {
        if a == b {
            return Err(Error::InvalidParam(format!("self-loop on `{a}`")));
        }
        for id in [a, b] {
            if !self.nodes.contains_key(id) {
                return Err(Error::InvalidParam(format!("unknown node `{id}`")));
            }
        }
        let key = if a < b { (a.to_string(), b.to_string()) } else { (b.to_string(), a.to_string()) };
        if self.edges.contains_key(&key) {
            return Ok(false);
        }
        self.edges.insert(key, weight);
        self.adjacency.entry(a.to_string()).or_default().insert(b.to_string());
        self.adjacency.entry(b.to_string()).or_default().insert(a.to_string());
        Ok(true)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.nodes.contains_key(id)
    }

    pub fn annotation(&self, id: &str) -> Option<&str> {
        self.nodes.get(id).map(String::as_str)
    }

    pub fn neighbors(&self, id: &str) -> impl Iterator<Item = &str> {
        self.adjacency.get(id).into_iter().flatten().map(String::as_str)
    }

    pub fn edges(&self) -> impl Iterator<Item = (&str, &str, f64)> {
        self.edges.iter().map(|((a, b), w)| (a.as_str(), b.as_str(), *w))
    }

    pub fn nodes(&self) -> impl Iterator<Item = (&str, &str)> {
        self.nodes.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Parses edge and annotation TSVs. Edge endpoints missing from the
    /// annotations are created with an empty annotation unless `strict`.
    pub fn parse(edges_tsv: &str, annotations_tsv: &str, strict: bool) -> Result<CoexpNetwork> {
        let mut n = CoexpNetwork::default();
        for (line, fields) in tsv_rows(annotations_tsv, "gene_id") {
            let id = fields[0];
            if id.is_empty() || fields.len() > 2 {
                return Err(Error::Format {
                    line,
                    message: "expected `gene_id<TAB>annotation`".into(),
                });
            }
            n.add_node(id, fields.get(1).copied().unwrap_or(""));
        }
        for (line, fields) in tsv_rows(edges_tsv, "gene_a") {
            let bad = |message: String| Error::Format { line, message };
            if !(2..=3).contains(&fields.len()) || fields[0].is_empty() || fields[1].is_empty() {
                return Err(bad("expected `gene_a<TAB>gene_b[<TAB>weight]`".into()));
            }
            let weight = match fields.get(2) {
                None | Some(&"") => 1.0,
                Some(w) => w
                    .parse::<f64>()
                    .ok()
                    .filter(|w| w.is_finite())
                    .ok_or_else(|| bad(format!("bad weight `{w}`")))?,
            };
            for id in &fields[..2] {
                if !n.contains(id) {
                    if strict {
                        return Err(bad(format!("edge references unknown gene `{id}`")));
                    }
                    n.add_node(id, "");
                }
            }
            n.add_edge(fields[0], fields[1], weight).map_err(|e| bad(e.to_string()))?;
        }
        Ok(n)
    }

    pub fn load(edges_path: &Path, annotations_path: &Path, strict: bool) -> Result<CoexpNetwork> {
        let read = |p: &Path| std::fs::read_to_string(p).map_err(|e| Error::io(p, e));
        let edges = read(edges_path)?;
        let ann = read(annotations_path)?;
        // attribute format errors to the file they came from
        let probe = CoexpNetwork::parse("", &ann, false);
        if let Err(e) = probe {
            return Err(Error::in_file(annotations_path, e));
        }
        CoexpNetwork::parse(&edges, &ann, strict).map_err(|e| Error::in_file(edges_path, e))
    }

    /// (edges TSV, annotations TSV) in canonical order.
    pub fn to_tsv(&self) -> (String, String) {
        let mut edges = String::new();
        for (a, b, w) in self.edges() {
            let _ = writeln!(edges, "{a}\t{b}\t{w:?}");
        }
        let mut ann = String::new();
        for (id, a) in self.nodes() {
            let _ = writeln!(ann, "{id}\t{a}");
        }
        (edges, ann)
    }
}

/// Non-blank, non-comment rows split on tabs, with an optional header whose
/// first field is `header_first` skipped. Yields 1-based line numbers.
fn tsv_rows<'a>(text: &'a str, header_first: &'a str) -> impl Iterator<Item = (usize, Vec<&'a str>)> + 'a {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.strip_suffix('\r').unwrap_or(l)))
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|(i, l)| (i, l.split('\t').map(str::trim).collect::<Vec<_>>()))
        .filter(move |(i, f)| !(*i == 1 && f[0] == header_first))
}

/// Ids with probability strictly above `threshold`, highest first; equal
/// probabilities keep input order.
pub fn select_seeds(predictions: &[PredictionRow], threshold: f64) -> Vec<String> {
    let mut chosen: Vec<&PredictionRow> = predictions.iter().filter(|p| p.probability > threshold).collect();
    chosen.sort_by(|a, b| b.probability.total_cmp(&a.probability));
    chosen.into_iter().map(|p| p.id.clone()).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Neighborhood {
    pub genes: BTreeSet<String>,
    /// Seeds that are not nodes of the network.
    pub missing_seeds: Vec<String>,
}

/// All genes within `hops` edges of any seed present in the network,
/// seeds included.
pub fn neighborhood(n: &CoexpNetwork, seeds: &[String], hops: usize) -> Neighborhood {
    let mut out = Neighborhood::default();
    let mut queue = VecDeque::new();
    for s in seeds {
        if n.contains(s) {
            if out.genes.insert(s.clone()) {
                queue.push_back((s.clone(), 0));
            }
        } else if !out.missing_seeds.contains(s) {
            out.missing_seeds.push(s.clone());
        }
    }
    while let Some((g, d)) = queue.pop_front() {
        if d == hops {
            continue;
        }
        for nb in n.neighbors(&g) {
            if out.genes.insert(nb.to_string()) {
                queue.push_back((nb.to_string(), d + 1));
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct KeywordHit {
    pub gene: String,
    pub keyword: String,
}

/// Case-insensitive substring matches, ordered by gene then keyword list
/// order.
pub fn keyword_scan(n: &CoexpNetwork, genes: &BTreeSet<String>, keywords: &[String]) -> Vec<KeywordHit> {
    let lowered: Vec<String> = keywords.iter().map(|k| k.to_lowercase()).collect();
    let mut hits = Vec::new();
    for g in genes {
        let Some(ann) = n.annotation(g) else { continue };
        let ann = ann.to_lowercase();
        for (k, kl) in keywords.iter().zip(&lowered) {
            if !kl.is_empty() && ann.contains(kl.as_str()) {
                hits.push(KeywordHit {
                    gene: g.clone(),
                    keyword: k.clone(),
                });
            }
        }
    }
    hits
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Timepoint {
    H3,
    H9,
    H24,
}

impl fmt::Display for Timepoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Timepoint::H3 => "3h",
            Timepoint::H9 => "9h",
            Timepoint::H24 => "24h",
        })
    }
}

impl std::str::FromStr for Timepoint {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "3h" => Ok(Timepoint::H3),
            "9h" => Ok(Timepoint::H9),
            "24h" => Ok(Timepoint::H24),
            _ => Err(Error::InvalidParam(format!("timepoint `{s}` is not 3h, 9h or 24h"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegRow {
    pub gene: String,
    pub timepoint: Timepoint,
    pub log2fc: f64,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DegTable {
    rows: Vec<DegRow>,
}

impl DegTable {
    pub fn new(rows: Vec<DegRow>) -> Result<DegTable> {
        let mut seen = BTreeSet::new();
        for r in &rows {
            if !seen.insert((r.gene.as_str(), r.timepoint)) {
                return Err(Error::InvalidParam(format!(
                    "duplicate DEG row for {} at {}",
                    r.gene, r.timepoint
                )));
            }
        }
        Ok(DegTable { rows })
    }

    pub fn rows(&self) -> &[DegRow] {
        &self.rows
    }

    /// `gene_id<TAB>timepoint<TAB>log2fc<TAB>significant` rows.
    pub fn parse(text: &str) -> Result<DegTable> {
        let mut rows = Vec::new();
        for (line, f) in tsv_rows(text, "gene_id") {
            let bad = |message: String| Error::Format { line, message };
            if f.len() != 4 || f[0].is_empty() {
                return Err(bad("expected `gene_id<TAB>timepoint<TAB>log2fc<TAB>significant`".into()));
            }
            let timepoint = f[1].parse::<Timepoint>().map_err(|e| bad(e.to_string()))?;
            let log2fc = f[2]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| bad(format!("bad log2fc `{}`", f[2])))?;
            let significant = match f[3] {
                "0" => false,
                "1" => true,
                other => return Err(bad(format!("significant must be 0 or 1, got `{other}`"))),
            };
            rows.push(DegRow {
                gene: f[0].to_string(),
                timepoint,
                log2fc,
                significant,
            });
        }
        DegTable::new(rows).map_err(|e| match e {
            Error::InvalidParam(m) => Error::Format { line: 0, message: m },
            e => e,
        })
    }

    pub fn load(path: &Path) -> Result<DegTable> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::in_file(path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DegOverlap {
    /// Overlapping gene -> all of its DEG rows, ordered by timepoint.
    pub genes: BTreeMap<String, Vec<DegRow>>,
}

impl DegOverlap {
    pub fn count(&self) -> usize {
        self.genes.len()
    }
}

/// Genes of `genes` that appear in the DEG table (with at least one
/// significant row when `significant_only`).
pub fn deg_overlap(genes: &BTreeSet<String>, deg: &DegTable, significant_only: bool) -> DegOverlap {
    let mut out = DegOverlap::default();
    let qualifying: BTreeSet<&str> = deg
        .rows()
        .iter()
        .filter(|r| !significant_only || r.significant)
        .map(|r| r.gene.as_str())
        .filter(|g| genes.contains(*g))
        .collect();
    for r in deg.rows() {
        if qualifying.contains(r.gene.as_str()) {
            out.genes.entry(r.gene.clone()).or_default().push(r.clone());
        }
    }
    for rows in out.genes.values_mut() {
        rows.sort_by_key(|r| r.timepoint);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriageParams {
    pub threshold: f64,
    pub hops: usize,
    pub keywords: Vec<String>,
    pub significant_only: bool,
}

impl Default for TriageParams {
    fn default() -> Self {
        TriageParams {
            threshold: 0.7,
            hops: 1,
            keywords: default_keywords(),
            significant_only: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriageReport {
    pub seeds: Vec<String>,
    pub missing_seeds: Vec<String>,
    pub neighborhood: Vec<String>,
    pub keyword_hits: Vec<KeywordHit>,
    pub deg: DegOverlap,
    pub threshold: f64,
    pub hops: usize,
}

pub const TRIAGE_CSV_HEADER: &str = "gene,is_seed,keyword_hits,deg_timepoints,annotation";

pub fn triage(
    network: &CoexpNetwork,
    predictions: &[PredictionRow],
    deg: &DegTable,
    params: &TriageParams,
) -> Result<TriageReport> {
    if !(params.threshold > 0.0 && params.threshold < 1.0) {
        return Err(Error::InvalidParam("threshold must be in (0,1)".into()));
    }
    if params.keywords.is_empty() {
        return Err(Error::InvalidParam("keyword list is empty".into()));
    }
    let seeds = select_seeds(predictions, params.threshold);
    let hood = neighborhood(network, &seeds, params.hops);
    let keyword_hits = keyword_scan(network, &hood.genes, &params.keywords);
    let deg = deg_overlap(&hood.genes, deg, params.significant_only);
    Ok(TriageReport {
        seeds,
        missing_seeds: hood.missing_seeds,
        neighborhood: hood.genes.into_iter().collect(),
        keyword_hits,
        deg,
        threshold: params.threshold,
        hops: params.hops,
    })
}

impl TriageReport {
    pub fn keyword_gene_count(&self) -> usize {
        self.keyword_hits.iter().map(|h| &h.gene).collect::<BTreeSet<_>>().len()
    }

    pub fn to_text(&self, network: &CoexpNetwork) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "Co-expression triage report");
        let _ = writeln!(out, "threshold: > {}", self.threshold);
        let _ = writeln!(out, "hops: {}", self.hops);
        let _ = writeln!(out, "seeds ({}): {}", self.seeds.len(), self.seeds.join(", "));
        if !self.missing_seeds.is_empty() {
            let _ = writeln!(
                out,
                "seeds not in network ({}): {}",
                self.missing_seeds.len(),
                self.missing_seeds.join(", ")
            );
        }
        let _ = writeln!(out, "neighborhood ({} genes):", self.neighborhood.len());
        for g in &self.neighborhood {
            let ann = network.annotation(g).unwrap_or("");
            let _ = writeln!(out, "  {g}\t{}", if ann.is_empty() { "-" } else { ann });
        }
        let _ = writeln!(
            out,
            "keyword hits ({} hits in {} genes):",
            self.keyword_hits.len(),
            self.keyword_gene_count()
        );
        for h in &self.keyword_hits {
            let _ = writeln!(out, "  {}\t{}", h.gene, h.keyword);
        }
        let _ = writeln!(out, "DEG overlap ({} genes):", self.deg.count());
        for (g, rows) in &self.deg.genes {
            let cells: Vec<String> = rows
                .iter()
                .map(|r| format!("{} log2fc={} sig={}", r.timepoint, r.log2fc, r.significant as u8))
                .collect();
            let _ = writeln!(out, "  {g}\t{}", cells.join("; "));
        }
        out
    }

    /// One row per neighborhood gene.
    pub fn to_csv(&self, network: &CoexpNetwork) -> Result<String> {
        let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
        w.write_record(TRIAGE_CSV_HEADER.split(','))?;
        for g in &self.neighborhood {
            let hits: Vec<&str> = self
                .keyword_hits
                .iter()
                .filter(|h| &h.gene == g)
                .map(|h| h.keyword.as_str())
                .collect();
            let deg: Vec<String> = self
                .deg
                .genes
                .get(g)
                .map(|rows| rows.iter().map(|r| format!("{}:{}", r.timepoint, r.log2fc)).collect())
                .unwrap_or_default();
            let is_seed = if self.seeds.contains(g) { "1" } else { "0" };
            w.write_record([
                g.as_str(),
                is_seed,
                &hits.join(";"),
                &deg.join(";"),
                network.annotation(g).unwrap_or(""),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::InvalidParam(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("utf-8 input"))
    }
}
