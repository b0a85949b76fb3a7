//! Tensor primitives with explicit forward/backward passes.
//!
//! Everything is generic over [`Scalar`] so the same code path runs in single
//! precision for full-size evaluation and in double precision for
//! finite-difference gradient checks. Parameters live in a flat
//! [`ParamStore`]; layers hold [`ParamId`]s plus hyperparameters and stay
//! freely shareable across threads during inference.

use std::collections::HashMap;
use std::fmt;

use ndarray::{ArrayD, ArrayViewD, ScalarOperand};
use serde::{Deserialize, Serialize};

pub mod act;
pub mod conv;
pub mod deform;
pub mod gradcheck;
pub mod init;
pub mod layers;
pub mod linear;
pub mod norm;
pub mod pool;
pub mod resize;
pub mod shuffle;

pub use init::Init;
pub use layers::{BatchNorm2d, BnMode, Conv2d, Linear};

/// Element dtype tag, recorded in checkpoints.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn size_bytes(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Dtype::F32 => "f32",
            Dtype::F64 => "f64",
        }
    }
}

/// Floating-point element type usable throughout the network stack.
pub trait Scalar:
    num_traits::Float
    + num_traits::NumAssign
    + ndarray::LinalgScalar
    + ScalarOperand
    + std::iter::Sum
    + Send
    + Sync
    + fmt::Debug
    + fmt::Display
    + 'static
{
    const DTYPE: Dtype;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;

    /// Append the little-endian bytes of `vals` to `out`.
    fn write_le(vals: &[Self], out: &mut Vec<u8>);
    /// Decode little-endian bytes; `bytes.len()` must be a multiple of the
    /// element size.
    fn read_le(bytes: &[u8]) -> Vec<Self>;
}

impl Scalar for f32 {
    const DTYPE: Dtype = Dtype::F32;

    fn from_f64(v: f64) -> Self {
        v as f32
    }

    fn to_f64(self) -> f64 {
        self as f64
    }

    fn write_le(vals: &[Self], out: &mut Vec<u8>) {
        out.reserve(vals.len() * 4);
        for v in vals {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }

    fn read_le(bytes: &[u8]) -> Vec<Self> {
        bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect()
    }
}

impl Scalar for f64 {
    const DTYPE: Dtype = Dtype::F64;

    fn from_f64(v: f64) -> Self {
        v
    }

    fn to_f64(self) -> f64 {
        self
    }

    fn write_le(vals: &[Self], out: &mut Vec<u8>) {
        out.reserve(vals.len() * 8);
        for v in vals {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }

    fn read_le(bytes: &[u8]) -> Vec<Self> {
        bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]]))
            .collect()
    }
}

/// Role of a stored tensor. Running statistics are buffers: they are updated
/// by normalization layers, never by the optimizer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum VarKind {
    Weight,
    Bias,
    NormScale,
    NormShift,
    NormMean,
    NormVar,
}

impl VarKind {
    /// Affine normalization parameters (scale/shift).
    pub fn is_norm_param(self) -> bool {
        matches!(self, VarKind::NormScale | VarKind::NormShift)
    }

    /// Running statistics (not optimizer targets).
    pub fn is_stat(self) -> bool {
        matches!(self, VarKind::NormMean | VarKind::NormVar)
    }
}

/// Handle to a tensor in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Flat storage for all model parameters, buffers and their gradients.
///
/// Names are hierarchical dotted paths (`cae.stage0.conv.weight`); freeze
/// policies and checkpoints key off them.
pub struct ParamStore<F: Scalar> {
    names: Vec<String>,
    kinds: Vec<VarKind>,
    data: Vec<ArrayD<F>>,
    grads: Vec<ArrayD<F>>,
    index: HashMap<String, ParamId>,
}

impl<F: Scalar> Default for ParamStore<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            kinds: Vec::new(),
            data: Vec::new(),
            grads: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, kind: VarKind, value: ArrayD<F>) -> ParamId {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let id = ParamId(self.data.len());
        self.grads.push(ArrayD::zeros(value.raw_dim()));
        self.data.push(value);
        self.kinds.push(kind);
        self.index.insert(name.clone(), id);
        self.names.push(name);
        id
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn kind(&self, id: ParamId) -> VarKind {
        self.kinds[id.0]
    }

    pub fn data(&self, id: ParamId) -> &ArrayD<F> {
        &self.data[id.0]
    }

    pub fn data_mut(&mut self, id: ParamId) -> &mut ArrayD<F> {
        &mut self.data[id.0]
    }

    pub fn set_data(&mut self, id: ParamId, value: ArrayD<F>) {
        assert_eq!(
            self.data[id.0].shape(),
            value.shape(),
            "shape mismatch setting {}",
            self.names[id.0]
        );
        self.data[id.0] = value;
    }

    pub fn grad(&self, id: ParamId) -> &ArrayD<F> {
        &self.grads[id.0]
    }

    /// Accumulate `delta` into the gradient slot of `id`.
    pub fn grad_add(&mut self, id: ParamId, delta: ArrayViewD<'_, F>) {
        let g = &mut self.grads[id.0];
        debug_assert_eq!(g.shape(), delta.shape(), "grad shape for {}", self.names[id.0]);
        *g += &delta;
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.fill(F::zero());
        }
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.data.len()).map(ParamId)
    }

    /// Total number of stored elements (parameters plus buffers).
    pub fn element_count(&self) -> usize {
        self.data.iter().map(|d| d.len()).sum()
    }

    /// Snapshot all tensors (used for best-epoch restore and bit-identity
    /// assertions).
    pub fn snapshot(&self) -> Vec<ArrayD<F>> {
        self.data.clone()
    }

    pub fn restore(&mut self, snapshot: &[ArrayD<F>]) {
        assert_eq!(snapshot.len(), self.data.len());
        for (dst, src) in self.data.iter_mut().zip(snapshot) {
            dst.clone_from(src);
        }
    }
}
