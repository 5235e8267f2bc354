//! Additive-attention similarity between propagated class attributes and
//! image features, and the temperature softmax over a candidate class set.

use serde::{Deserialize, Serialize};

use crate::error::{ApnetError, Result};
use crate::numerics::{argmax, matmul_nt, matmul_tn, sigmoid_scalar, softmax_t_unchecked, DenseMatrix, SeededRng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadParams {
    /// `hidden × feat_dim`
    pub w1: DenseMatrix,
    /// `hidden × image_dim`
    pub w2: DenseMatrix,
    pub b1: Vec<f64>,
    pub w: Vec<f64>,
    pub b: f64,
}

impl HeadParams {
    /// `w1`, `w2` uniform in `±1/√fan_in`; `b1`, `w`, `b` zero.
    pub fn init(feat_dim: usize, image_dim: usize, hidden_dim: usize, rng: &mut SeededRng) -> Self {
        let b_feat = 1.0 / (feat_dim.max(1) as f64).sqrt();
        let b_img = 1.0 / (image_dim.max(1) as f64).sqrt();
        Self {
            w1: DenseMatrix::from_fn(hidden_dim, feat_dim, |_, _| rng.uniform(-b_feat, b_feat)),
            w2: DenseMatrix::from_fn(hidden_dim, image_dim, |_, _| rng.uniform(-b_img, b_img)),
            b1: vec![0.0; hidden_dim],
            w: vec![0.0; hidden_dim],
            b: 0.0,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            w1: DenseMatrix::zeros(self.w1.rows(), self.w1.cols()),
            w2: DenseMatrix::zeros(self.w2.rows(), self.w2.cols()),
            b1: vec![0.0; self.b1.len()],
            w: vec![0.0; self.w.len()],
            b: 0.0,
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn feat_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn image_dim(&self) -> usize {
        self.w2.cols()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeadConfig {
    pub gamma2: f64,
    pub hidden_dim: usize,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            gamma2: 30.0,
            hidden_dim: 1024,
        }
    }
}

impl HeadConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma2 > 0.0 && self.gamma2.is_finite()) {
            return Err(ApnetError::InvalidArgument(format!(
                "prediction temperature must be positive, got {}",
                self.gamma2
            )));
        }
        if self.hidden_dim == 0 {
            return Err(ApnetError::InvalidArgument("hidden_dim must be at least 1".into()));
        }
        Ok(())
    }
}

#[inline]
fn hidden_score(p: &[f64], q: &[f64], params: &HeadParams) -> f64 {
    let mut s = 0.0;
    for j in 0..p.len() {
        s += params.w[j] * sigmoid_scalar(p[j] + q[j] + params.b1[j]);
    }
    s + params.b
}

fn check_dims(attr_cols: usize, image_cols: usize, p: &HeadParams) -> Result<()> {
    if attr_cols != p.feat_dim() || image_cols != p.image_dim() {
        return Err(ApnetError::dims(
            "similarity head",
            format!(
                "attribute dim {attr_cols} / image dim {image_cols}, head expects {} / {}",
                p.feat_dim(),
                p.image_dim()
            ),
        ));
    }
    Ok(())
}

/// `w · σ(W1 attr + W2 image + b1) + b`
pub fn score(attr: &[f64], image: &[f64], p: &HeadParams) -> Result<f64> {
    check_dims(attr.len(), image.len(), p)?;
    let a = DenseMatrix::from_vec(1, attr.len(), attr.to_vec())?;
    let x = DenseMatrix::from_vec(1, image.len(), image.to_vec())?;
    Ok(score_matrix(&a, &x, p)?.get(0, 0))
}

/// Projections `W1 Xᵀ` and `W2 Iᵀ`, computed once per batch.
#[derive(Clone, Debug)]
pub struct Projections {
    /// `classes × hidden`
    pub attr: DenseMatrix,
    /// `images × hidden`
    pub image: DenseMatrix,
}

pub fn project(attrs: &DenseMatrix, images: &DenseMatrix, p: &HeadParams) -> Result<Projections> {
    check_dims(attrs.cols(), images.cols(), p)?;
    Ok(Projections {
        attr: matmul_nt(attrs, &p.w1)?,
        image: matmul_nt(images, &p.w2)?,
    })
}

/// Scores of one projected image against every projected class.
pub fn scores_for_image(proj: &Projections, image_row: usize, p: &HeadParams) -> Vec<f64> {
    let q = proj.image.row(image_row);
    proj.attr.row_iter().map(|a| hidden_score(a, q, p)).collect()
}

/// `images × classes` score matrix.
pub fn score_matrix(attrs: &DenseMatrix, images: &DenseMatrix, p: &HeadParams) -> Result<DenseMatrix> {
    let proj = project(attrs, images, p)?;
    let mut out = DenseMatrix::zeros(images.rows(), attrs.rows());
    for q in 0..images.rows() {
        out.row_mut(q).copy_from_slice(&scores_for_image(&proj, q, p));
    }
    Ok(out)
}

pub fn predict_proba(attrs: &DenseMatrix, image: &[f64], p: &HeadParams, cfg: &HeadConfig) -> Result<Vec<f64>> {
    if attrs.rows() == 0 {
        return Err(ApnetError::EmptyInput("predict_proba candidate set"));
    }
    cfg.validate()?;
    let x = DenseMatrix::from_vec(1, image.len(), image.to_vec())?;
    let scores = score_matrix(attrs, &x, p)?;
    let probs = softmax_t_unchecked(scores.row(0), cfg.gamma2);
    if probs.iter().any(|v| !v.is_finite()) {
        return Err(ApnetError::NonFinite("class probabilities".into()));
    }
    Ok(probs)
}

/// Row index of the most similar class; ties resolve to the lowest index.
///
/// Taken over raw scores, which orders classes exactly as the softmax does
/// but cannot collapse near-ties through rounding.
pub fn predict(attrs: &DenseMatrix, image: &[f64], p: &HeadParams, cfg: &HeadConfig) -> Result<usize> {
    if attrs.rows() == 0 {
        return Err(ApnetError::EmptyInput("predict candidate set"));
    }
    cfg.validate()?;
    let x = DenseMatrix::from_vec(1, image.len(), image.to_vec())?;
    let scores = score_matrix(attrs, &x, p)?;
    Ok(argmax(scores.row(0)).expect("nonempty candidate set"))
}

/// Gradients of the head parameters plus the gradient w.r.t. the attribute rows.
pub struct HeadBackward {
    pub grads: HeadParams,
    pub d_attrs: DenseMatrix,
}

/// Backward pass through [`score_matrix`] given `d_scores = ∂L/∂h` (`images × classes`).
pub fn head_backward(
    attrs: &DenseMatrix,
    images: &DenseMatrix,
    proj: &Projections,
    p: &HeadParams,
    d_scores: &DenseMatrix,
) -> HeadBackward {
    let hidden = p.hidden_dim();
    let mut grads = p.zeros_like();
    let mut d_attr_proj = DenseMatrix::zeros(attrs.rows(), hidden);
    let mut d_image_proj = DenseMatrix::zeros(images.rows(), hidden);
    for q in 0..images.rows() {
        let qp = proj.image.row(q);
        for z in 0..attrs.rows() {
            let dh = d_scores.get(q, z);
            grads.b += dh;
            let ap = proj.attr.row(z);
            for j in 0..hidden {
                let act = sigmoid_scalar(ap[j] + qp[j] + p.b1[j]);
                grads.w[j] += dh * act;
                let d_pre = dh * p.w[j] * act * (1.0 - act);
                grads.b1[j] += d_pre;
                d_attr_proj.data_mut()[z * hidden + j] += d_pre;
                d_image_proj.data_mut()[q * hidden + j] += d_pre;
            }
        }
    }
    grads.w1 = matmul_tn(&d_attr_proj, attrs).expect("shapes fixed by forward");
    grads.w2 = matmul_tn(&d_image_proj, images).expect("shapes fixed by forward");
    let d_attrs = crate::numerics::matmul(&d_attr_proj, &p.w1).expect("shapes fixed by forward");
    HeadBackward { grads, d_attrs }
}
