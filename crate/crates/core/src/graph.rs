//! Class graph construction and attention propagation.
//!
//! Edges come from thresholded cosine similarity of the transformed step-0
//! node features and stay fixed for all steps. Attention values are
//! recomputed from the current features at every step, restricted to that
//! fixed support. Every node is its own neighbor.

use serde::{Deserialize, Serialize};

use crate::error::{ApnetError, Result};
use crate::linear::Linear;
use crate::numerics::{dot, l2_norm, matmul, matmul_nt, matmul_tn, softmax_t_unchecked, DenseMatrix, SeededRng};

/// cos 40°
pub const DEFAULT_EPSILON: f64 = 0.766_044_443_118_978;

/// Learnable transform `f` shared by both arguments of the similarity and by every step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeTransformParams {
    pub f: Linear,
}

impl EdgeTransformParams {
    pub fn init(feat_dim: usize, edge_dim: usize, rng: &mut SeededRng) -> Self {
        Self {
            f: Linear::init(feat_dim, edge_dim, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            f: Linear::zeros(self.f.input_dim(), self.f.output_dim()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropagationMode {
    /// Thresholded learned similarity plus learned attention.
    Learned,
    /// Row-normalized `1/d` weights from an external hop-distance matrix.
    FixedHop,
    /// Skip propagation entirely.
    None,
}

impl std::str::FromStr for PropagationMode {
    type Err = ApnetError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "learned" => Ok(Self::Learned),
            "fixed_hop" | "fixed-hop" => Ok(Self::FixedHop),
            "none" => Ok(Self::None),
            other => Err(ApnetError::InvalidArgument(format!("unknown propagation mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for PropagationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Learned => "learned",
            Self::FixedHop => "fixed_hop",
            Self::None => "none",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PropagationConfig {
    pub epsilon: f64,
    pub gamma1: f64,
    pub steps: usize,
    pub mode: PropagationMode,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            gamma1: 10.0,
            steps: 2,
            mode: PropagationMode::Learned,
        }
    }
}

impl PropagationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(-1.0..=1.0).contains(&self.epsilon) {
            return Err(ApnetError::InvalidArgument(format!(
                "edge threshold {} outside [-1, 1]",
                self.epsilon
            )));
        }
        if !(self.gamma1 > 0.0 && self.gamma1.is_finite()) {
            return Err(ApnetError::InvalidArgument(format!(
                "attention temperature must be positive, got {}",
                self.gamma1
            )));
        }
        Ok(())
    }
}

/// Undirected, reflexive adjacency over `n` nodes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeSet {
    n: usize,
    adjacency: Vec<bool>,
}

impl EdgeSet {
    pub fn complete(n: usize) -> Self {
        Self {
            n,
            adjacency: vec![true; n * n],
        }
    }

    /// Only the self-loops, as used when propagation is switched off.
    pub fn self_loops(n: usize) -> Self {
        Self {
            n,
            adjacency: (0..n * n).map(|i| i / n == i % n).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn contains(&self, y: usize, z: usize) -> bool {
        self.adjacency[y * self.n + z]
    }

    pub fn neighbors(&self, y: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(move |&z| self.contains(y, z))
    }

    /// All ordered pairs `(y, z)` with an edge, self-loops included.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        (0..self.n)
            .flat_map(|y| self.neighbors(y).map(move |z| (y, z)))
            .collect()
    }
}

/// Row-wise unit vectors and norms; zero rows stay zero.
fn normalize_rows(f: &DenseMatrix) -> (DenseMatrix, Vec<f64>) {
    let mut unit = f.clone();
    let mut norms = Vec::with_capacity(f.rows());
    for r in 0..f.rows() {
        let n = l2_norm(f.row(r));
        norms.push(n);
        if n > 0.0 {
            unit.row_mut(r).iter_mut().for_each(|v| *v /= n);
        }
    }
    (unit, norms)
}

/// Pairwise cosine of `f(X)` rows. Symmetric bit for bit.
fn similarity(x: &DenseMatrix, f: &EdgeTransformParams) -> Result<(DenseMatrix, DenseMatrix, Vec<f64>)> {
    let transformed = f.f.forward(x)?;
    let (unit, norms) = normalize_rows(&transformed);
    let cos = matmul_nt(&unit, &unit)?;
    Ok((cos, unit, norms))
}

pub fn build_edges(x0: &DenseMatrix, f: &EdgeTransformParams, epsilon: f64) -> Result<EdgeSet> {
    let (cos, _, _) = similarity(x0, f)?;
    Ok(edges_from_similarity(&cos, epsilon))
}

fn edges_from_similarity(cos: &DenseMatrix, epsilon: f64) -> EdgeSet {
    let n = cos.rows();
    let adjacency = (0..n * n)
        .map(|i| {
            let (y, z) = (i / n, i % n);
            y == z || cos.get(y, z) >= epsilon
        })
        .collect();
    EdgeSet { n, adjacency }
}

fn masked_softmax(cos: &DenseMatrix, edges: &EdgeSet, gamma1: f64) -> DenseMatrix {
    let n = edges.len();
    let mut weights = DenseMatrix::zeros(n, n);
    for y in 0..n {
        let support: Vec<usize> = edges.neighbors(y).collect();
        let scores: Vec<f64> = support.iter().map(|&z| cos.get(y, z)).collect();
        let probs = softmax_t_unchecked(&scores, gamma1);
        for (&z, p) in support.iter().zip(probs) {
            weights.set(y, z, p);
        }
    }
    weights
}

fn check_nodes(x: &DenseMatrix, edges: &EdgeSet) -> Result<()> {
    if x.rows() != edges.len() {
        return Err(ApnetError::dims(
            "attention_weights",
            format!("{} feature rows for a {}-node graph", x.rows(), edges.len()),
        ));
    }
    Ok(())
}

/// Neighbor-restricted softmax of `γ₁ · cos(f(X_y), f(X_z))`, zero off the edge support.
pub fn attention_weights(x_t: &DenseMatrix, f: &EdgeTransformParams, edges: &EdgeSet, gamma1: f64) -> Result<DenseMatrix> {
    check_nodes(x_t, edges)?;
    let (cos, _, _) = similarity(x_t, f)?;
    Ok(masked_softmax(&cos, edges, gamma1))
}

pub fn propagate_step(x_t: &DenseMatrix, weights: &DenseMatrix) -> Result<DenseMatrix> {
    if weights.rows() != weights.cols() || weights.cols() != x_t.rows() {
        return Err(ApnetError::dims(
            "propagate_step",
            format!("weights {:?} for {} nodes", weights.shape(), x_t.rows()),
        ));
    }
    matmul(weights, x_t)
}

/// Raw weights `1/d` off the diagonal, 1 on it, each row scaled to sum to one.
pub fn fixed_hop_weights(dist: &DenseMatrix) -> Result<DenseMatrix> {
    let n = dist.rows();
    if dist.cols() != n {
        return Err(ApnetError::dims("fixed_hop_weights", format!("distance matrix {:?}", dist.shape())));
    }
    let mut w = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                w.set(i, j, 1.0);
                continue;
            }
            let d = dist.get(i, j);
            if d <= 0.0 {
                return Err(ApnetError::InvalidArgument(format!(
                    "hop distance ({i}, {j}) = {d} must be positive"
                )));
            }
            w.set(i, j, 1.0 / d);
        }
        let total: f64 = w.row(i).iter().sum();
        w.row_mut(i).iter_mut().for_each(|v| *v /= total);
    }
    Ok(w)
}

#[derive(Clone, Debug)]
struct StepCache {
    x: DenseMatrix,
    weights: DenseMatrix,
    /// Unit rows of `f(X^t)` and their original norms; absent for fixed weights.
    unit: Option<(DenseMatrix, Vec<f64>)>,
}

/// Everything the backward pass needs from a propagation run.
#[derive(Clone, Debug)]
pub struct PropagationCache {
    pub edges: Option<EdgeSet>,
    gamma1: f64,
    steps: Vec<StepCache>,
}

impl PropagationCache {
    /// Attention (or fixed) weights used at each step.
    pub fn step_weights(&self) -> impl Iterator<Item = &DenseMatrix> {
        self.steps.iter().map(|s| &s.weights)
    }
}

/// Runs `cfg.steps` propagation steps and keeps the intermediates.
///
/// `distances` is the hop-distance matrix over the same nodes and is only
/// consulted in fixed-hop mode.
pub fn propagate_cached(
    x0: &DenseMatrix,
    f: &EdgeTransformParams,
    cfg: &PropagationConfig,
    distances: Option<&DenseMatrix>,
) -> Result<(DenseMatrix, PropagationCache)> {
    cfg.validate()?;
    let mut cache = PropagationCache {
        edges: None,
        gamma1: cfg.gamma1,
        steps: Vec::new(),
    };
    match cfg.mode {
        PropagationMode::None => Ok((x0.clone(), cache)),
        PropagationMode::FixedHop => {
            let dist = distances.ok_or_else(|| {
                ApnetError::InvalidArgument("fixed_hop propagation requires a hop-distance matrix".into())
            })?;
            if dist.rows() != x0.rows() {
                return Err(ApnetError::dims(
                    "propagate",
                    format!("{}-node distances for {} nodes", dist.rows(), x0.rows()),
                ));
            }
            let weights = fixed_hop_weights(dist)?;
            let mut x = x0.clone();
            for _ in 0..cfg.steps {
                let next = propagate_step(&x, &weights)?;
                cache.steps.push(StepCache {
                    x,
                    weights: weights.clone(),
                    unit: None,
                });
                x = next;
            }
            Ok((x, cache))
        }
        PropagationMode::Learned => {
            let (cos0, unit0, norms0) = similarity(x0, f)?;
            let edges = edges_from_similarity(&cos0, cfg.epsilon);
            let mut x = x0.clone();
            let mut pending = Some((cos0, unit0, norms0));
            for _ in 0..cfg.steps {
                let (cos, unit, norms) = match pending.take() {
                    Some(first) => first,
                    None => similarity(&x, f)?,
                };
                let weights = masked_softmax(&cos, &edges, cfg.gamma1);
                let next = propagate_step(&x, &weights)?;
                cache.steps.push(StepCache {
                    x,
                    weights,
                    unit: Some((unit, norms)),
                });
                x = next;
            }
            cache.edges = Some(edges);
            Ok((x, cache))
        }
    }
}

pub fn propagate(
    x0: &DenseMatrix,
    f: &EdgeTransformParams,
    cfg: &PropagationConfig,
    distances: Option<&DenseMatrix>,
) -> Result<DenseMatrix> {
    propagate_cached(x0, f, cfg, distances).map(|(x, _)| x)
}

/// Backpropagates `d_out = ∂L/∂X^T` to `∂L/∂X⁰`, accumulating into `grad_f`.
///
/// The edge support is a constant: thresholding contributes no gradient.
pub fn propagate_backward(
    cache: &PropagationCache,
    f: &EdgeTransformParams,
    d_out: &DenseMatrix,
    grad_f: &mut EdgeTransformParams,
) -> DenseMatrix {
    let mut d_x = d_out.clone();
    for step in cache.steps.iter().rev() {
        let a = &step.weights;
        let d_next = d_x;
        // X^{t+1} = A X^t
        d_x = matmul_tn(a, &d_next).expect("square weights");
        let Some((unit, norms)) = &step.unit else {
            continue;
        };
        let edges = cache.edges.as_ref().expect("learned mode records edges");
        let n = a.rows();
        let d_a = matmul_nt(&d_next, &step.x).expect("shapes fixed by forward");

        // softmax rows -> cosine scores
        let mut d_cos = DenseMatrix::zeros(n, n);
        for y in 0..n {
            let inner: f64 = edges.neighbors(y).map(|z| a.get(y, z) * d_a.get(y, z)).sum();
            for z in edges.neighbors(y) {
                d_cos.set(y, z, cache.gamma1 * a.get(y, z) * (d_a.get(y, z) - inner));
            }
        }
        // cos = U Uᵀ
        let mut sym = d_cos.clone();
        sym.add_assign(&d_cos.transpose());
        let d_unit = matmul(&sym, unit).expect("shapes fixed by forward");

        // U = F / ‖F‖ row-wise
        let mut d_f = DenseMatrix::zeros(unit.rows(), unit.cols());
        for r in 0..unit.rows() {
            if norms[r] == 0.0 {
                continue;
            }
            let u = unit.row(r);
            let g = d_unit.row(r);
            let proj = dot(u, g);
            for ((dst, &gv), &uv) in d_f.row_mut(r).iter_mut().zip(g).zip(u) {
                *dst = (gv - uv * proj) / norms[r];
            }
        }
        let d_x_via_f = f.f.backward(&step.x, &d_f, &mut grad_f.f);
        d_x.add_assign(&d_x_via_f);
    }
    d_x
}
