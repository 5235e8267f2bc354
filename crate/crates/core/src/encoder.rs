//! Expert-module encoding of class attribute vectors.
//!
//! Each class attribute vector `s` becomes an initial node feature
//! `Σ_i relu(Θ_i (s − C_i))`, where the `C_i` are k-means centroids of the
//! seen-class attributes and each `Θ_i` is an affine map.

use serde::{Deserialize, Serialize};

use crate::error::{ApnetError, Result};
use crate::linear::Linear;
use crate::numerics::{kmeans, DenseMatrix, SeededRng};

/// Iteration cap for the centroid fit.
pub const KMEANS_MAX_ITERS: usize = 300;

/// Frozen centroids of the seen-class attribute space (`k × attr_dim`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CentroidSet {
    pub centroids: DenseMatrix,
}

impl CentroidSet {
    pub fn k(&self) -> usize {
        self.centroids.rows()
    }

    pub fn attr_dim(&self) -> usize {
        self.centroids.cols()
    }
}

/// One affine expert per centroid, all sharing the output dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpertParams {
    pub experts: Vec<Linear>,
}

impl ExpertParams {
    pub fn init(k: usize, attr_dim: usize, feat_dim: usize, rng: &mut SeededRng) -> Self {
        Self {
            experts: (0..k).map(|_| Linear::init(attr_dim, feat_dim, rng)).collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            experts: self
                .experts
                .iter()
                .map(|e| Linear::zeros(e.input_dim(), e.output_dim()))
                .collect(),
        }
    }

    pub fn feat_dim(&self) -> usize {
        self.experts.first().map_or(0, Linear::output_dim)
    }
}

pub fn fit_centroids(seen_attributes: &DenseMatrix, k: usize, rng: &mut SeededRng) -> Result<CentroidSet> {
    Ok(CentroidSet {
        centroids: kmeans(seen_attributes, k, KMEANS_MAX_ITERS, rng)?,
    })
}

/// Intermediate buffers kept for the backward pass.
#[derive(Clone, Debug)]
pub struct EncoderCache {
    /// `S − 1 C_iᵀ` per expert.
    pub centered: Vec<DenseMatrix>,
    /// Pre-activation `Θ_i(S − C_i)` per expert.
    pub pre: Vec<DenseMatrix>,
}

impl EncoderCache {
    /// Nonnegative contribution of expert `i`.
    pub fn expert_output(&self, i: usize) -> DenseMatrix {
        self.pre[i].map(|v| v.max(0.0))
    }
}

fn check(attrs: &DenseMatrix, centroids: &CentroidSet, experts: &ExpertParams) -> Result<()> {
    if experts.experts.len() != centroids.k() {
        return Err(ApnetError::dims(
            "encode",
            format!("{} experts for {} centroids", experts.experts.len(), centroids.k()),
        ));
    }
    if attrs.cols() != centroids.attr_dim() {
        return Err(ApnetError::dims(
            "encode",
            format!("attribute dim {} but centroids have {}", attrs.cols(), centroids.attr_dim()),
        ));
    }
    let feat = experts.feat_dim();
    if experts
        .experts
        .iter()
        .any(|e| e.input_dim() != centroids.attr_dim() || e.output_dim() != feat)
    {
        return Err(ApnetError::dims("encode", "expert shapes disagree"));
    }
    Ok(())
}

pub fn encode_batch_cached(
    attrs: &DenseMatrix,
    centroids: &CentroidSet,
    experts: &ExpertParams,
) -> Result<(DenseMatrix, EncoderCache)> {
    check(attrs, centroids, experts)?;
    let mut out = DenseMatrix::zeros(attrs.rows(), experts.feat_dim());
    let mut cache = EncoderCache {
        centered: Vec::with_capacity(centroids.k()),
        pre: Vec::with_capacity(centroids.k()),
    };
    for (i, expert) in experts.experts.iter().enumerate() {
        let c = centroids.centroids.row(i);
        let centered = DenseMatrix::from_fn(attrs.rows(), attrs.cols(), |r, d| attrs.get(r, d) - c[d]);
        let pre = expert.forward(&centered)?;
        for (o, &p) in out.data_mut().iter_mut().zip(pre.data()) {
            *o += p.max(0.0);
        }
        cache.centered.push(centered);
        cache.pre.push(pre);
    }
    Ok((out, cache))
}

/// Encodes every row of `attrs` (one class per row).
pub fn encode_batch(attrs: &DenseMatrix, centroids: &CentroidSet, experts: &ExpertParams) -> Result<DenseMatrix> {
    encode_batch_cached(attrs, centroids, experts).map(|(x, _)| x)
}

pub fn encode(s: &[f64], centroids: &CentroidSet, experts: &ExpertParams) -> Result<Vec<f64>> {
    let row = DenseMatrix::from_vec(1, s.len(), s.to_vec())?;
    encode_batch(&row, centroids, experts).map(DenseMatrix::into_data)
}

/// Accumulates expert gradients given `d_out = ∂L/∂X⁰`. Centroids receive none.
pub fn encode_backward(cache: &EncoderCache, experts: &ExpertParams, d_out: &DenseMatrix, grads: &mut ExpertParams) {
    for (i, expert) in experts.experts.iter().enumerate() {
        let pre = &cache.pre[i];
        let d_pre = DenseMatrix::from_fn(d_out.rows(), d_out.cols(), |r, c| {
            if pre.get(r, c) > 0.0 {
                d_out.get(r, c)
            } else {
                0.0
            }
        });
        expert.backward(&cache.centered[i], &d_pre, &mut grads.experts[i]);
    }
}
