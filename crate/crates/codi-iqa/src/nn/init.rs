//! Seeded parameter initialization.
//!
//! Every tensor is drawn from a ChaCha stream seeded by
//! `fnv1a(global_seed, parameter_name)`, so a parameter's initial value
//! depends only on the run seed and its own name. Adding or removing modules
//! from a model never shifts the initialization of the remaining ones, which
//! keeps ablation variants comparable seed for seed.

use ndarray::{ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Scalar;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// FNV-1a over a byte string, folded with a numeric seed. Stable across
/// builds, unlike `DefaultHasher`.
pub fn fnv1a(seed: u64, tag: &str) -> u64 {
    let mut h = FNV_OFFSET;
    for b in seed.to_le_bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    for b in tag.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Derive a child seed from a parent seed, a tag and numeric coordinates
/// (epoch, record index, ...). Used for augmentation streams and split plans.
pub fn stream_seed(seed: u64, tag: &str, coords: &[u64]) -> u64 {
    let mut h = fnv1a(seed, tag);
    for c in coords {
        for b in c.to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(FNV_PRIME);
        }
    }
    h
}

pub fn rng_for(seed: u64, tag: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(fnv1a(seed, tag))
}

/// Initialization schemes. Draws happen in `f64` and are cast to the target
/// scalar, so a given seed produces the same values in both precisions.
#[derive(Clone, Copy, Debug)]
pub enum Init {
    /// Uniform on `[-sqrt(6/fan_in), sqrt(6/fan_in)]`.
    KaimingUniform { fan_in: usize },
    Uniform { lo: f64, hi: f64 },
    Const(f64),
    Zeros,
    Ones,
}

pub fn init_tensor<F: Scalar>(shape: &[usize], init: Init, seed: u64, name: &str) -> ArrayD<F> {
    let n: usize = shape.iter().product();
    let mut rng = rng_for(seed, name);
    let vals: Vec<F> = match init {
        Init::Zeros => vec![F::zero(); n],
        Init::Ones => vec![F::one(); n],
        Init::Const(c) => vec![F::from_f64(c); n],
        Init::Uniform { lo, hi } => (0..n)
            .map(|_| F::from_f64(rng.gen_range(lo..hi)))
            .collect(),
        Init::KaimingUniform { fan_in } => {
            let bound = (6.0 / fan_in.max(1) as f64).sqrt();
            (0..n)
                .map(|_| F::from_f64(rng.gen_range(-bound..bound)))
                .collect()
        }
    };
    ArrayD::from_shape_vec(IxDyn(shape), vals).expect("shape/product mismatch")
}
