//! Full parameter set and the class-embedding forward path shared by
//! training, evaluation and the embedding dump.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::{encode_batch, fit_centroids, CentroidSet, ExpertParams};
use crate::error::{ApnetError, Result};
use crate::graph::{build_edges, propagate, EdgeSet, EdgeTransformParams, PropagationConfig, PropagationMode};
use crate::head::{HeadConfig, HeadParams};
use crate::numerics::{l2_norm, DenseMatrix, SeededRng};

/// Architecture sizes not carried by [`HeadConfig`] or [`PropagationConfig`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Number of experts, equal to the number of attribute centroids.
    pub n_experts: usize,
    pub feat_dim: usize,
    /// Output size of the edge transform; `None` means `feat_dim`.
    pub edge_dim: Option<usize>,
    /// L2-normalize attribute vectors before encoding.
    pub normalize_attributes: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_experts: 3,
            feat_dim: 2048,
            edge_dim: None,
            normalize_attributes: false,
        }
    }
}

impl ModelConfig {
    /// Sizes for desk-scale synthetic runs and tests.
    pub fn small() -> Self {
        Self {
            feat_dim: 16,
            ..Self::default()
        }
    }

    pub fn edge_dim(&self) -> usize {
        self.edge_dim.unwrap_or(self.feat_dim)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_experts == 0 || self.feat_dim == 0 || self.edge_dim() == 0 {
            return Err(ApnetError::InvalidArgument(
                "n_experts, feat_dim and edge_dim must all be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub experts: ExpertParams,
    pub edge_f: EdgeTransformParams,
    pub head: HeadParams,
    /// Frozen after fitting; never updated by the optimizer.
    pub centroids: CentroidSet,
    #[serde(default)]
    pub normalize_attributes: bool,
}

/// Gradients with the same layout as the learnable part of [`ModelParams`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gradients {
    pub experts: ExpertParams,
    pub edge_f: EdgeTransformParams,
    pub head: HeadParams,
}

/// One named learnable tensor, flattened.
pub struct TensorRef<'a> {
    pub name: String,
    /// Subject to weight decay (weights yes, biases no).
    pub decay: bool,
    pub values: &'a [f64],
}

pub struct TensorMut<'a> {
    pub name: String,
    pub decay: bool,
    pub values: &'a mut [f64],
}

// Tensor order is fixed: experts (weight, bias) in index order, edge transform, head.
fn collect_refs<'a>(experts: &'a ExpertParams, edge: &'a EdgeTransformParams, head: &'a HeadParams) -> Vec<TensorRef<'a>> {
    let mut out = Vec::new();
    for (i, e) in experts.experts.iter().enumerate() {
        out.push(TensorRef {
            name: format!("experts.{i}.weight"),
            decay: true,
            values: e.weight.data(),
        });
        out.push(TensorRef {
            name: format!("experts.{i}.bias"),
            decay: false,
            values: &e.bias,
        });
    }
    out.push(TensorRef {
        name: "edge_f.weight".into(),
        decay: true,
        values: edge.f.weight.data(),
    });
    out.push(TensorRef {
        name: "edge_f.bias".into(),
        decay: false,
        values: &edge.f.bias,
    });
    out.push(TensorRef {
        name: "head.w1".into(),
        decay: true,
        values: head.w1.data(),
    });
    out.push(TensorRef {
        name: "head.w2".into(),
        decay: true,
        values: head.w2.data(),
    });
    out.push(TensorRef {
        name: "head.b1".into(),
        decay: false,
        values: &head.b1,
    });
    out.push(TensorRef {
        name: "head.w".into(),
        decay: true,
        values: &head.w,
    });
    out.push(TensorRef {
        name: "head.b".into(),
        decay: false,
        values: std::slice::from_ref(&head.b),
    });
    out
}

fn collect_muts<'a>(
    experts: &'a mut ExpertParams,
    edge: &'a mut EdgeTransformParams,
    head: &'a mut HeadParams,
) -> Vec<TensorMut<'a>> {
    let mut out = Vec::new();
    for (i, e) in experts.experts.iter_mut().enumerate() {
        out.push(TensorMut {
            name: format!("experts.{i}.weight"),
            decay: true,
            values: e.weight.data_mut(),
        });
        out.push(TensorMut {
            name: format!("experts.{i}.bias"),
            decay: false,
            values: &mut e.bias,
        });
    }
    out.push(TensorMut {
        name: "edge_f.weight".into(),
        decay: true,
        values: edge.f.weight.data_mut(),
    });
    out.push(TensorMut {
        name: "edge_f.bias".into(),
        decay: false,
        values: &mut edge.f.bias,
    });
    let HeadParams { w1, w2, b1, w, b } = head;
    out.push(TensorMut {
        name: "head.w1".into(),
        decay: true,
        values: w1.data_mut(),
    });
    out.push(TensorMut {
        name: "head.w2".into(),
        decay: true,
        values: w2.data_mut(),
    });
    out.push(TensorMut {
        name: "head.b1".into(),
        decay: false,
        values: b1,
    });
    out.push(TensorMut {
        name: "head.w".into(),
        decay: true,
        values: w,
    });
    out.push(TensorMut {
        name: "head.b".into(),
        decay: false,
        values: std::slice::from_mut(b),
    });
    out
}

impl ModelParams {
    /// Fits centroids on the seen-class attributes and initializes every learnable tensor.
    pub fn init(
        seen_attributes: &DenseMatrix,
        image_dim: usize,
        model_cfg: &ModelConfig,
        head_cfg: &HeadConfig,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        model_cfg.validate()?;
        head_cfg.validate()?;
        let attrs = prepare_attributes(seen_attributes, model_cfg.normalize_attributes);
        let centroids = fit_centroids(&attrs, model_cfg.n_experts, &mut rng.child())?;
        let attr_dim = attrs.cols();
        Ok(Self {
            experts: ExpertParams::init(model_cfg.n_experts, attr_dim, model_cfg.feat_dim, rng),
            edge_f: EdgeTransformParams::init(model_cfg.feat_dim, model_cfg.edge_dim(), rng),
            head: HeadParams::init(model_cfg.feat_dim, image_dim, head_cfg.hidden_dim, rng),
            centroids,
            normalize_attributes: model_cfg.normalize_attributes,
        })
    }

    pub fn zero_grads(&self) -> Gradients {
        Gradients {
            experts: self.experts.zeros_like(),
            edge_f: self.edge_f.zeros_like(),
            head: self.head.zeros_like(),
        }
    }

    pub fn tensors(&self) -> Vec<TensorRef<'_>> {
        collect_refs(&self.experts, &self.edge_f, &self.head)
    }

    pub fn tensors_mut(&mut self) -> Vec<TensorMut<'_>> {
        collect_muts(&mut self.experts, &mut self.edge_f, &mut self.head)
    }

    pub fn attr_dim(&self) -> usize {
        self.centroids.attr_dim()
    }

    pub fn image_dim(&self) -> usize {
        self.head.image_dim()
    }

    /// Rows of `attributes` for `class_ids`, normalized if the model was built that way.
    pub fn class_attributes(&self, attributes: &DenseMatrix, class_ids: &[usize]) -> DenseMatrix {
        prepare_attributes(&attributes.select_rows(class_ids), self.normalize_attributes)
    }

    /// Checks that a dataset's dimensions fit this model.
    pub fn check_compatible(&self, attr_dim: usize, image_dim: usize) -> Result<()> {
        if attr_dim != self.attr_dim() || image_dim != self.image_dim() {
            return Err(ApnetError::dims(
                "model/dataset",
                format!(
                    "model expects attr_dim {} and image_dim {}, dataset has {attr_dim} and {image_dim}",
                    self.attr_dim(),
                    self.image_dim()
                ),
            ));
        }
        Ok(())
    }
}

impl Gradients {
    pub fn tensors(&self) -> Vec<TensorRef<'_>> {
        collect_refs(&self.experts, &self.edge_f, &self.head)
    }

    pub fn tensors_mut(&mut self) -> Vec<TensorMut<'_>> {
        collect_muts(&mut self.experts, &mut self.edge_f, &mut self.head)
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.values.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

/// Trained parameters together with the settings needed to use them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub prop: PropagationConfig,
    pub head: HeadConfig,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = serde_json::to_vec(self).map_err(|source| ApnetError::Json {
            path: path.to_path_buf(),
            source,
        })?;
        fs::write(path, bytes).map_err(|e| ApnetError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.is_file() {
            return Err(ApnetError::MissingFile(path.to_path_buf()));
        }
        let bytes = fs::read(path).map_err(|e| ApnetError::io(path, e))?;
        let ckpt: Self = serde_json::from_slice(&bytes).map_err(|source| ApnetError::Json {
            path: path.to_path_buf(),
            source,
        })?;
        ckpt.prop.validate()?;
        ckpt.head.validate()?;
        let p = &ckpt.params;
        if p.experts.experts.len() != p.centroids.k()
            || p.experts.feat_dim() != p.head.feat_dim()
            || p.edge_f.f.input_dim() != p.head.feat_dim()
        {
            return Err(ApnetError::dims("checkpoint", "parameter shapes are inconsistent"));
        }
        Ok(ckpt)
    }
}

pub(crate) fn prepare_attributes(attrs: &DenseMatrix, normalize: bool) -> DenseMatrix {
    if !normalize {
        return attrs.clone();
    }
    let mut out = attrs.clone();
    for r in 0..out.rows() {
        let n = l2_norm(out.row(r));
        if n > 0.0 {
            out.row_mut(r).iter_mut().for_each(|v| *v /= n);
        }
    }
    out
}

/// Propagated class representations for `class_ids`, plus the learned edge
/// set when the mode builds one.
pub fn class_embeddings(
    params: &ModelParams,
    attributes: &DenseMatrix,
    distances: Option<&DenseMatrix>,
    class_ids: &[usize],
    prop_cfg: &PropagationConfig,
) -> Result<(DenseMatrix, Option<EdgeSet>)> {
    let attrs = params.class_attributes(attributes, class_ids);
    let x0 = encode_batch(&attrs, &params.centroids, &params.experts)?;
    let sub_dist = distances.map(|d| d.select_square(class_ids));
    if prop_cfg.mode == PropagationMode::FixedHop && sub_dist.is_none() {
        return Err(ApnetError::InvalidArgument(
            "fixed_hop propagation requires distances.bin in the dataset".into(),
        ));
    }
    let xt = propagate(&x0, &params.edge_f, prop_cfg, sub_dist.as_ref())?;
    let edges = match prop_cfg.mode {
        PropagationMode::Learned => Some(build_edges(&x0, &params.edge_f, prop_cfg.epsilon)?),
        _ => None,
    };
    Ok((xt, edges))
}
