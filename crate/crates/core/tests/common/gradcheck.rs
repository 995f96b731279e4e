//! Central finite-difference gradient check shared by the gradient tests
//! and the acceptance run.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seqling::convnet::{ConvLayerSpec, ConvNetArch, ConvNetModel, Pooling};
use seqling::featurize::{one_hot_encode, OneHotTensor};

pub const EPS: f64 = 1e-5;
pub const TOL: f64 = 1e-4;

pub fn check_arch() -> ConvNetArch {
    ConvNetArch {
        conv_layers: vec![
            ConvLayerSpec {
                filters: 2,
                kernel_width: 3,
                stride: 1,
                pool: Pooling::Max { width: 2 },
            },
            ConvLayerSpec {
                filters: 3,
                kernel_width: 2,
                stride: 1,
                pool: Pooling::None,
            },
            ConvLayerSpec {
                filters: 3,
                kernel_width: 3,
                stride: 2,
                pool: Pooling::GlobalMax,
            },
        ],
        dense_embedding_dim: 4,
        max_len: 16,
    }
}

fn random_seq(rng: &mut ChaCha8Rng, len: usize) -> String {
    (0..len).map(|_| b"ACGTN"[rng.gen_range(0..5)] as char).collect()
}

/// Random non-zero parameters so that every ReLU and bias path is live.
pub fn randomized(arch: &ConvNetArch, seed: u64) -> ConvNetModel {
    let mut m = ConvNetModel::init(arch, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
    for p in m.params_mut() {
        *p = rng.gen_range(-0.8..0.8);
        if p.abs() < 0.05 {
            *p += 0.1;
        }
    }
    m
}

/// Largest relative error over all parameters, as (error, parameter index).
pub fn max_relative_error(arch: &ConvNetArch, seed: u64) -> (f64, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs: Vec<OneHotTensor> = (0..3)
        .map(|_| {
            let len = rng.gen_range(10..=20);
            one_hot_encode(&random_seq(&mut rng, len), arch.max_len)
        })
        .collect();
    let batch: Vec<(&OneHotTensor, u8)> = xs.iter().zip([0u8, 1, 1]).collect();
    let weights = [0.75, 1.5];
    let model = randomized(arch, seed);
    let (_, analytic) = model.batch_gradient(&batch, Some(&weights)).unwrap();
    let mut worst = (0.0, 0);
    for i in 0..analytic.len() {
        let mut plus = model.clone();
        plus.params_mut()[i] += EPS;
        let mut minus = model.clone();
        minus.params_mut()[i] -= EPS;
        let numeric = (plus.loss(&batch, Some(&weights)).unwrap() - minus.loss(&batch, Some(&weights)).unwrap())
            / (2.0 * EPS);
        let a = analytic[i];
        // absolute floor keeps exact zeros (dead units) from dividing by zero
        let err = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-6);
        if err > worst.0 {
            worst = (err, i);
        }
    }
    worst
}
