//! Independent reference implementations used as test oracles. They are
//! deliberately naive and share no code with the library.
#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub mod gradcheck;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_dna(rng: &mut ChaCha8Rng, len: usize) -> String {
    (0..len).map(|_| ['A', 'C', 'G', 'T'][rng.gen_range(0..4)]).collect()
}

/// Line-by-line FASTA reader: `>` starts a record, the id is the header up
/// to the first space, body lines are uppercased and concatenated.
pub fn naive_fasta(text: &str) -> Vec<(String, String, String)> {
    let mut out: Vec<(String, String, String)> = Vec::new();
    for line in text.split('\n') {
        let line = line.trim_end_matches('\r');
        if line.starts_with('>') {
            let header = line[1..].trim().to_string();
            let mut parts = header.splitn(2, ' ');
            let id = parts.next().unwrap_or("").to_string();
            let desc = parts.next().unwrap_or("").trim().to_string();
            out.push((id, desc, String::new()));
        } else if !line.trim().is_empty() {
            let last = out.last_mut().expect("body after header");
            for ch in line.chars() {
                if ch.is_whitespace() || ch.is_ascii_digit() {
                    continue;
                }
                let up = ch.to_ascii_uppercase();
                last.2.push(match up {
                    'A' | 'C' | 'G' | 'T' => up,
                    'U' => 'T',
                    _ => 'N',
                });
            }
        }
    }
    out
}

/// Dictionary-accumulated k-mer counts over all N-free windows.
pub fn naive_kmer_counts(seq: &str, k: usize) -> HashMap<String, usize> {
    let mut counts = HashMap::new();
    let chars: Vec<char> = seq.chars().collect();
    if chars.len() < k {
        return counts;
    }
    for start in 0..=chars.len() - k {
        let w: String = chars[start..start + k].iter().collect();
        if w.contains('N') {
            continue;
        }
        *counts.entry(w).or_insert(0) += 1;
    }
    counts
}

/// All k-mers in lexicographic A<C<G<T order, built by recursion.
pub fn all_kmers(k: usize) -> Vec<String> {
    if k == 0 {
        return vec![String::new()];
    }
    let mut out = Vec::new();
    for prefix in all_kmers(k - 1) {
        for b in ["A", "C", "G", "T"] {
            out.push(format!("{prefix}{b}"));
        }
    }
    out.sort();
    out
}

/// Brute-force confusion counts (tp, fp, tn, fn).
pub fn naive_confusion(y: &[u8], p: &[u8]) -> (u64, u64, u64, u64) {
    let mut c = (0, 0, 0, 0);
    for i in 0..y.len() {
        match (y[i], p[i]) {
            (1, 1) => c.0 += 1,
            (0, 1) => c.1 += 1,
            (0, 0) => c.2 += 1,
            _ => c.3 += 1,
        }
    }
    c
}

/// Neighborhood via powers of the (adjacency + identity) matrix: gene j is
/// within `hops` of seed i iff ((A+I)^hops)[i][j] > 0.
pub fn matrix_neighborhood(n: usize, edges: &[(usize, usize)], seeds: &[usize], hops: usize) -> BTreeSet<usize> {
    let mut step = vec![vec![0u64; n]; n];
    for i in 0..n {
        step[i][i] = 1;
    }
    for &(a, b) in edges {
        step[a][b] = 1;
        step[b][a] = 1;
    }
    let mut reach = vec![vec![0u64; n]; n];
    for i in 0..n {
        reach[i][i] = 1;
    }
    for _ in 0..hops {
        let mut next = vec![vec![0u64; n]; n];
        for i in 0..n {
            for k in 0..n {
                if reach[i][k] == 0 {
                    continue;
                }
                for j in 0..n {
                    if step[k][j] != 0 {
                        next[i][j] = 1;
                    }
                }
            }
        }
        reach = next;
    }
    let mut out = BTreeSet::new();
    for &s in seeds {
        for j in 0..n {
            if reach[s][j] > 0 {
                out.insert(j);
            }
        }
    }
    out
}

/// The hand-built 10-node triage fixture: (edges TSV, annotations TSV,
/// DEG TSV, predictions CSV).
pub fn triage_fixture() -> (String, String, String, String) {
    let annotations = "\
gene_id\tannotation
Os01g0100100\tHypothetical protein
Os02g0200200\tSuperoxide dismutase [Mn]
Os03g0300300\tSimilar to kinase
Os04g0400400\tConserved hypothetical protein
Os05g0500500\tTransporter family protein
Os06g0600600\tRibosomal protein L3
Os07g0700700\tHeat shock protein 70
Os08g0800800\tSimilar to histone H2A
Os09g0900900\tUnknown protein
Os11g0116300\tHypothetical protein
";
    let edges = "\
gene_a\tgene_b\tweight
Os11g0116300\tOs02g0200200\t0.91
Os11g0116300\tOs03g0300300\t0.84
Os01g0100100\tOs04g0400400\t0.77
Os02g0200200\tOs05g0500500\t0.80
Os03g0300300\tOs06g0600600\t0.66
Os07g0700700\tOs08g0800800\t0.72
Os08g0800800\tOs09g0900900\t0.70
Os04g0400400\tOs09g0900900\t0.69
";
    let deg = "\
gene_id\ttimepoint\tlog2fc\tsignificant
Os11g0116300\t3h\t2.4\t1
Os11g0116300\t9h\t1.9\t1
Os11g0116300\t24h\t1.3\t1
Os05g0500500\t3h\t0.4\t0
Os07g0700700\t9h\t-1.8\t1
";
    let predictions = "\
id,probability,predicted_label,selected
Os11g0116300,0.930000,1,1
Os01g0100100,0.700000,1,0
Os07g0700700,0.410000,0,0
OsXXg0000000,0.880000,1,1
";
    (edges.into(), annotations.into(), deg.into(), predictions.into())
}

/// Messy but valid FASTA: mixed case, U, ambiguity codes, digits, inner
/// spaces, CRLF endings and blank lines.
pub fn random_fasta(seed: u64, n: usize) -> String {
    let mut r = rng(seed);
    let alphabet = b"ACGTacgtUuNnRYX";
    let mut out = String::new();
    for i in 0..n {
        let eol = if r.gen_bool(0.2) { "\r\n" } else { "\n" };
        if r.gen_bool(0.5) {
            out.push_str(&format!(">rec{i} some description {}{eol}", r.gen_range(0..1000)));
        } else {
            out.push_str(&format!(">rec{i}{eol}"));
        }
        let lines = r.gen_range(1..5);
        for _ in 0..lines {
            let len = r.gen_range(1..90);
            let mut line: String = (0..len).map(|_| alphabet[r.gen_range(0..alphabet.len())] as char).collect();
            if r.gen_bool(0.1) {
                line.insert(len / 2, ' ');
            }
            if r.gen_bool(0.05) {
                line.push('7');
            }
            out.push_str(&line);
            out.push_str(eol);
            if r.gen_bool(0.05) {
                out.push_str(eol);
            }
        }
    }
    out
}
