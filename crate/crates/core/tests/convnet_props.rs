mod common;

use rand::Rng;
use seqling::convnet::*;
use seqling::featurize::{one_hot_encode, OneHotTensor};

use common::{random_dna, rng};

/// Straight-line forward pass written from the documented parameter layout:
/// per conv layer `w[f][c][k]` then `b[f]`, then dense `w[o][i]`, `b[o]`,
/// then output `w[class][emb]`, `b[class]`. Returns (conv maps, embedding,
/// probabilities).
fn naive_forward(arch: &ConvNetArch, p: &[f64], x: &OneHotTensor) -> (Vec<Vec<f64>>, Vec<f64>, [f64; 2]) {
    let mut off = 0;
    let mut channels = 4;
    let mut len = arch.max_len;
    let mut cur: Vec<Vec<f64>> = (0..4).map(|c| (0..len).map(|t| x.get(c, t)).collect()).collect();
    let mut maps = Vec::new();
    for layer in &arch.conv_layers {
        let (f_n, kw, st) = (layer.filters, layer.kernel_width, layer.stride);
        let w = &p[off..off + f_n * channels * kw];
        off += f_n * channels * kw;
        let b = &p[off..off + f_n];
        off += f_n;
        let out_len = (len - kw) / st + 1;
        let mut out = vec![vec![0.0; out_len]; f_n];
        for f in 0..f_n {
            for t in 0..out_len {
                let mut z = b[f];
                for c in 0..channels {
                    for k in 0..kw {
                        z += w[(f * channels + c) * kw + k] * cur[c][t * st + k];
                    }
                }
                out[f][t] = if z > 0.0 { z } else { 0.0 };
            }
        }
        maps.push(out.iter().flatten().copied().collect::<Vec<f64>>());
        cur = match layer.pool {
            Pooling::None => out,
            Pooling::Max { width } => out
                .iter()
                .map(|row| {
                    (0..out_len / width)
                        .map(|j| row[j * width..(j + 1) * width].iter().copied().fold(f64::MIN, f64::max))
                        .collect()
                })
                .collect(),
            Pooling::GlobalMax => out
                .iter()
                .map(|row| vec![row.iter().copied().fold(f64::MIN, f64::max)])
                .collect(),
        };
        channels = f_n;
        len = cur[0].len();
    }
    let feats: Vec<f64> = cur.iter().flatten().copied().collect();
    let e = arch.dense_embedding_dim;
    let dw = &p[off..off + e * feats.len()];
    off += e * feats.len();
    let db = &p[off..off + e];
    off += e;
    let emb: Vec<f64> = (0..e)
        .map(|o| {
            let z: f64 = db[o] + (0..feats.len()).map(|i| dw[o * feats.len() + i] * feats[i]).sum::<f64>();
            z.max(0.0)
        })
        .collect();
    let ow = &p[off..off + 2 * e];
    let ob = &p[off + 2 * e..off + 2 * e + 2];
    let logit = |c: usize| ob[c] + (0..e).map(|i| ow[c * e + i] * emb[i]).sum::<f64>();
    let (l0, l1) = (logit(0), logit(1));
    let z = (l0.exp() + l1.exp()).ln();
    (maps, emb, [(l0 - z).exp(), (l1 - z).exp()])
}

fn random_model(arch: &ConvNetArch, seed: u64) -> ConvNetModel {
    let mut m = ConvNetModel::init(arch, seed).unwrap();
    let mut r = rng(seed + 500);
    for p in m.params_mut() {
        *p += r.gen_range(-0.2..0.2);
    }
    m
}

#[test]
fn forward_matches_naive_implementation() {
    let archs = [
        ConvNetArch::tiny(40),
        ConvNetArch {
            conv_layers: vec![
                ConvLayerSpec {
                    filters: 3,
                    kernel_width: 5,
                    stride: 2,
                    pool: Pooling::Max { width: 3 },
                },
                ConvLayerSpec {
                    filters: 2,
                    kernel_width: 2,
                    stride: 1,
                    pool: Pooling::None,
                },
                ConvLayerSpec {
                    filters: 4,
                    kernel_width: 2,
                    stride: 1,
                    pool: Pooling::GlobalMax,
                },
            ],
            dense_embedding_dim: 6,
            max_len: 60,
        },
    ];
    let mut r = rng(3);
    for (ai, arch) in archs.iter().enumerate() {
        for seed in 0..5 {
            let m = random_model(arch, seed);
            let len = r.gen_range(1..arch.max_len + 20);
            let x = one_hot_encode(&random_dna(&mut r, len), arch.max_len);
            let (maps, emb, probs) = naive_forward(arch, m.params(), &x);
            let out = m.forward(&x).unwrap();
            let acts = m.conv_activations(&x).unwrap();
            assert_eq!(acts.len(), maps.len());
            for (a, b) in acts.iter().zip(&maps) {
                assert_eq!(a.len(), b.len());
                for (u, v) in a.iter().zip(b) {
                    assert!((u - v).abs() < 1e-12, "arch {ai} seed {seed}");
                }
            }
            for (u, v) in out.embedding.iter().zip(&emb) {
                assert!((u - v).abs() < 1e-12);
            }
            assert!((out.probabilities[1] - probs[1]).abs() < 1e-12);
            assert!((out.probabilities[0] + out.probabilities[1] - 1.0).abs() < 1e-12);
            assert_eq!(m.embed(&x).unwrap(), out.embedding);
        }
    }
}

fn single_layer(kernel: usize, max_len: usize) -> ConvNetArch {
    ConvNetArch {
        conv_layers: vec![ConvLayerSpec {
            filters: 1,
            kernel_width: kernel,
            stride: 1,
            pool: Pooling::GlobalMax,
        }],
        dense_embedding_dim: 1,
        max_len,
    }
}

#[test]
fn indicator_kernel_reproduces_a_channel() {
    let arch = single_layer(3, 30);
    let mut m = ConvNetModel::init(&arch, 0).unwrap();
    let p = m.params_mut();
    p.iter_mut().for_each(|v| *v = 0.0);
    p[0] = 1.0; // filter 0, channel A, tap 0
    let mut r = rng(4);
    let s = random_dna(&mut r, 30);
    let x = one_hot_encode(&s, 30);
    let map = &m.conv_activations(&x).unwrap()[0];
    let expect: Vec<f64> = s.chars().take(28).map(|c| (c == 'A') as u8 as f64).collect();
    assert_eq!(map, &expect);
}

#[test]
fn global_max_response_is_translation_invariant() {
    let motif = "ACGTTG";
    let arch = single_layer(motif.len(), 40);
    let mut m = ConvNetModel::init(&arch, 0).unwrap();
    {
        let p = m.params_mut();
        p.iter_mut().for_each(|v| *v = 0.0);
        for (k, b) in motif.bytes().enumerate() {
            let c = b"ACGT".iter().position(|&x| x == b).unwrap();
            p[c * motif.len() + k] = 1.0;
        }
        let kw = 4 * motif.len();
        p[kw] = -(motif.len() as f64 - 1.0); // bias: exact match scores 1
        p[kw + 1] = 1.0; // dense weight passes the pooled value through
    }
    let background = "T".repeat(40);
    let mut responses = Vec::new();
    for shift in 0..=40 - motif.len() {
        let mut s = background.clone();
        s.replace_range(shift..shift + motif.len(), motif);
        responses.push(m.embed(&one_hot_encode(&s, 40)).unwrap()[0]);
    }
    assert!(responses.iter().all(|&v| v == 1.0), "{responses:?}");
    assert_eq!(m.embed(&one_hot_encode(&background, 40)).unwrap()[0], 0.0);
}

fn separable_data() -> (Vec<OneHotTensor>, Vec<u8>) {
    let a = "ACGTACGTTTGACCATGACAGTTACGATCGATGCAAGTCA";
    let b = "TTGCAGCATCGGATCAACTGGGCATTACAGGTACCTAGGA";
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for _ in 0..20 {
        xs.push(one_hot_encode(a, 40));
        ys.push(1);
        xs.push(one_hot_encode(b, 40));
        ys.push(0);
    }
    (xs, ys)
}

#[test]
fn separable_task_reaches_full_training_accuracy() {
    let (xs, ys) = separable_data();
    let cfg = TrainConfig {
        epochs: 50,
        batch_size: 8,
        seed: 1,
        ..Default::default()
    };
    let m = ConvNetModel::train(&ConvNetArch::tiny(40), &xs, &ys, &cfg).unwrap();
    let correct = xs
        .iter()
        .zip(&ys)
        .filter(|(x, &y)| (m.predict_proba(x).unwrap() >= 0.5) as u8 == y)
        .count();
    assert_eq!(correct, xs.len());
    assert_eq!(m.training_log.len(), 50);

    let mut r = rng(77);
    let embs: Vec<Vec<f64>> = (0..100)
        .map(|_| m.embed(&one_hot_encode(&random_dna(&mut r, 40), 40)).unwrap())
        .collect();
    assert!(embs.iter().flatten().all(|v| v.is_finite()));
    assert!(embs.iter().any(|e| e != &embs[0]));
}

#[test]
fn training_is_reproducible_and_thread_independent() {
    let (xs, ys) = separable_data();
    let cfg = TrainConfig {
        epochs: 5,
        batch_size: 8,
        seed: 9,
        ..Default::default()
    };
    let arch = ConvNetArch::tiny(40);
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| ConvNetModel::train(&arch, &xs, &ys, &cfg).unwrap())
    };
    let a = run(1);
    let b = run(1);
    let c = run(8);
    assert_eq!(a.training_log, b.training_log);
    assert_eq!(a.to_json(), c.to_json());
}

#[test]
fn early_stopping_restores_best_epoch() {
    let (xs, ys) = separable_data();
    let cfg = TrainConfig {
        epochs: 30,
        batch_size: 8,
        seed: 2,
        early_stop_patience: Some(2),
        validation_fraction: 0.25,
        ..Default::default()
    };
    let m = ConvNetModel::train(&ConvNetArch::tiny(40), &xs, &ys, &cfg).unwrap();
    assert!(!m.training_log.is_empty() && m.training_log.len() <= 30);
}

#[test]
fn softmax_outputs_are_proper_probabilities() {
    let arch = ConvNetArch::tiny(32);
    let mut r = rng(12);
    for seed in 0..20 {
        let m = random_model(&arch, seed);
        let x = one_hot_encode(&random_dna(&mut r, 32), 32);
        let p = m.forward(&x).unwrap().probabilities;
        assert!(p[0] > 0.0 && p[0] < 1.0 && p[1] > 0.0 && p[1] < 1.0);
        assert!((p[0] + p[1] - 1.0).abs() <= 1e-12);
    }
}

#[test]
fn default_parameter_count_matches_shape_arithmetic() {
    // conv1: 32 * 4 * 8 + 32; conv2: 64 * 32 * 8 + 64; dense 64 * 64 + 64;
    // output 2 * 64 + 2
    let expect = (32 * 4 * 8 + 32) + (64 * 32 * 8 + 64) + (64 * 64 + 64) + (2 * 64 + 2);
    assert_eq!(ConvNetArch::default().parameter_count().unwrap(), expect);
}
