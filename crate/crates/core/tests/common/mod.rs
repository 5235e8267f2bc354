#![allow(dead_code)]

use apnet::dataset::{generate_synthetic, Dataset, SyntheticConfig};
use apnet::graph::{attention_weights, build_edges, propagate_step, EdgeTransformParams, PropagationConfig};
use apnet::linear::Linear;
use apnet::model::{ModelConfig, ModelParams};
use apnet::trainer::{backward, finite_diff_grads, EpisodeSampler, LossConfig, TrainConfig, TrainingSetup};
use apnet::{DenseMatrix, HeadConfig, SeededRng};

/// Published generalized zero-shot results: (method, dataset, S, U, H).
pub const PUBLISHED_GZSL: &[(&str, &str, f64, f64, f64)] = &[
    ("DEVISE", "SUN", 27.4, 16.9, 20.9),
    ("DEVISE", "CUB", 53.0, 23.8, 32.8),
    ("DEVISE", "AWA1", 68.7, 13.4, 22.4),
    ("DEVISE", "AWA2", 74.7, 17.1, 27.8),
    ("DEVISE", "aPY", 76.9, 4.9, 9.2),
    ("CONSE", "SUN", 39.9, 6.8, 11.6),
    ("CONSE", "CUB", 72.2, 1.6, 3.1),
    ("CONSE", "AWA1", 88.6, 0.4, 0.8),
    ("CONSE", "AWA2", 90.6, 0.5, 1.0),
    ("CONSE", "aPY", 91.2, 0.0, 0.0),
    ("SYNC", "SUN", 43.3, 7.9, 13.4),
    ("SYNC", "CUB", 70.9, 11.5, 19.8),
    ("SYNC", "AWA1", 87.3, 8.9, 16.2),
    ("SYNC", "AWA2", 90.5, 10.0, 18.0),
    ("SYNC", "aPY", 66.3, 7.4, 13.3),
    ("SAE", "SUN", 18.0, 8.8, 11.8),
    ("SAE", "CUB", 54.0, 7.8, 13.6),
    ("SAE", "AWA1", 77.1, 1.8, 3.5),
    ("SAE", "AWA2", 82.2, 1.1, 2.2),
    ("SAE", "aPY", 80.9, 0.4, 0.9),
    ("DEM", "SUN", 34.3, 20.5, 25.6),
    ("DEM", "CUB", 57.9, 19.6, 29.2),
    ("DEM", "AWA1", 84.7, 32.8, 47.3),
    ("DEM", "AWA2", 86.4, 30.5, 45.1),
    ("DEM", "aPY", 75.1, 11.1, 19.4),
    ("RN", "CUB", 61.1, 38.1, 47.0),
    ("RN", "AWA1", 91.3, 31.4, 56.7),
    ("RN", "AWA2", 93.4, 30.0, 45.3),
    ("PQZSL", "SUN", 35.3, 35.1, 35.2),
    ("PQZSL", "CUB", 51.4, 43.2, 46.9),
    ("PQZSL", "AWA1", 70.9, 31.7, 43.8),
    ("PQZSL", "aPY", 64.1, 27.9, 38.8),
    ("CRNet", "SUN", 36.5, 34.1, 35.3),
    ("CRNet", "CUB", 56.8, 45.5, 50.5),
    ("CRNet", "AWA1", 74.7, 58.1, 65.4),
    ("CRNet", "AWA2", 78.8, 52.6, 63.1),
    ("CRNet", "aPY", 68.4, 32.4, 44.0),
    ("APNet", "SUN", 40.6, 35.4, 37.8),
    ("APNet", "CUB", 55.9, 48.1, 51.7),
    ("APNet", "AWA1", 76.6, 59.7, 67.1),
    ("APNet", "AWA2", 83.9, 54.8, 66.4),
    ("APNet", "aPY", 74.7, 32.7, 45.5),
];

pub const HARMONIC_TOL: f64 = 0.1;

/// Independent harmonic mean used as the oracle.
pub fn harmonic_oracle(s: f64, u: f64) -> f64 {
    if s == 0.0 && u == 0.0 {
        return 0.0;
    }
    1.0 / ((1.0 / s + 1.0 / u) / 2.0)
}

pub const FD_STEP: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-5;
/// Both gradient norms below this count as agreeing (the output bias gets an
/// identically zero gradient because softmax ignores a shared shift).
pub const FD_ABS_FLOOR: f64 = 1e-8;

pub struct TensorCheck {
    pub name: String,
    pub analytic_norm: f64,
    pub rel_err: f64,
    pub ok: bool,
}

pub struct GradCheck {
    pub seed: u64,
    /// Smallest `|cos − ε|` over node pairs; perturbations must not flip an edge.
    pub edge_margin: f64,
    pub off_diagonal_edges: usize,
    pub tensors: Vec<TensorCheck>,
}

impl GradCheck {
    pub fn ok(&self) -> bool {
        self.tensors.iter().all(|t| t.ok)
    }

    pub fn worst(&self) -> f64 {
        self.tensors.iter().map(|t| t.rel_err).fold(0.0, f64::max)
    }
}

/// Five seen classes (plus one unseen, required by the generator), attr 6, image 7.
pub fn grad_dataset(seed: u64) -> Dataset {
    generate_synthetic(&SyntheticConfig {
        n_seen: 5,
        n_unseen: 1,
        attr_dim: 6,
        image_dim: 7,
        images_per_class: 4,
        noise_std: 0.3,
        test_fraction: 0.25,
        seed,
    })
    .unwrap()
}

/// Parameters with every tensor randomized, so no gradient path is switched off.
/// Expert weights are widened so the class vectors stay distinct after two
/// propagation steps; otherwise the scores collapse and every gradient is tiny.
pub const EXPERT_WEIGHT_RANGE: f64 = 2.0;

pub fn grad_params(ds: &Dataset, seed: u64, feat: usize, hidden: usize) -> ModelParams {
    let mut rng = SeededRng::new(seed ^ 0x5eed);
    let seen = ds.attributes().select_rows(ds.seen());
    let model = ModelConfig {
        n_experts: 3,
        feat_dim: feat,
        edge_dim: Some(feat),
        normalize_attributes: false,
    };
    let head = HeadConfig { gamma2: 30.0, hidden_dim: hidden };
    let mut p = ModelParams::init(&seen, ds.image_dim(), &model, &head, &mut rng).unwrap();
    for t in p.tensors_mut() {
        let half_width = match t.name.as_str() {
            n if n.starts_with("experts.") && n.ends_with("weight") => EXPERT_WEIGHT_RANGE,
            "head.w" => 0.3,
            "head.b1" | "head.b" => 0.5,
            n if n.ends_with("bias") => 0.5,
            _ => continue,
        };
        for v in t.values.iter_mut() {
            *v = rng.uniform(-half_width, half_width);
        }
    }
    p
}

pub fn rel_err(a: &[f64], b: &[f64]) -> (f64, f64, f64) {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (diff / na.max(nb).max(f64::MIN_POSITIVE), na, nb)
}

/// Full-loss gradient check on one 5-way, 2-shot episode.
pub fn gradient_check(seed: u64, prop: &PropagationConfig) -> GradCheck {
    let ds = grad_dataset(seed);
    let params = grad_params(&ds, seed, 8, 8);
    let head = HeadConfig { gamma2: 30.0, hidden_dim: 8 };
    let sampler = EpisodeSampler::new(&ds, 2).unwrap();
    let episode = sampler.episode(5, 2, &mut SeededRng::new(seed)).unwrap();
    let cfg = LossConfig { prop, head: &head };

    let attrs = params.class_attributes(ds.attributes(), &episode.class_ids);
    let x0 = apnet::encoder::encode_batch(&attrs, &params.centroids, &params.experts).unwrap();
    let (edge_margin, off_diagonal_edges) = edge_stats(&x0, &params.edge_f, prop.epsilon);

    let analytic = backward(&episode, &params, cfg, &ds).unwrap();
    let numeric = finite_diff_grads(&episode, &params, cfg, &ds, FD_STEP).unwrap();
    let tensors = analytic
        .tensors()
        .iter()
        .zip(numeric.tensors().iter())
        .map(|(a, n)| {
            let (rel, na, nn) = rel_err(a.values, n.values);
            let floor = na < FD_ABS_FLOOR && nn < FD_ABS_FLOOR;
            TensorCheck {
                name: a.name.clone(),
                analytic_norm: na,
                rel_err: if floor { 0.0 } else { rel },
                ok: floor || rel <= FD_REL_TOL,
            }
        })
        .collect();
    GradCheck {
        seed,
        edge_margin,
        off_diagonal_edges,
        tensors,
    }
}

fn edge_stats(x0: &DenseMatrix, f: &EdgeTransformParams, epsilon: f64) -> (f64, usize) {
    let t = f.f.forward(x0).unwrap();
    let n = t.rows();
    let mut margin = f64::INFINITY;
    for y in 0..n {
        for z in 0..n {
            if y != z {
                margin = margin.min((apnet::numerics::cosine(t.row(y), t.row(z)) - epsilon).abs());
            }
        }
    }
    let edges = build_edges(x0, f, epsilon).unwrap();
    (margin, edges.pairs().len() - n)
}

#[derive(Debug, Default)]
pub struct InvariantReport {
    pub graphs: usize,
    pub max_row_sum_err: f64,
    pub asymmetric: usize,
    pub missing_self_loops: usize,
    pub weight_off_support: usize,
    pub max_hull_violation: f64,
    pub max_identity_err: f64,
}

/// Random features, transform and threshold per graph; checks one attention
/// step and one propagation step against the edge support.
pub fn propagation_invariants(graphs: usize, seed: u64) -> InvariantReport {
    let mut rng = SeededRng::new(seed);
    let mut rep = InvariantReport {
        graphs,
        ..Default::default()
    };
    for g in 0..graphs {
        let n = 1 + rng.below(20);
        let d = 1 + rng.below(8);
        let e = 1 + rng.below(8);
        let scale = [0.1, 1.0, 10.0][rng.below(3)];
        let identical = g % 10 == 0;
        let base: Vec<f64> = (0..d).map(|_| rng.uniform(-scale, scale)).collect();
        let x = DenseMatrix::from_fn(n, d, |_, c| if identical { base[c] } else { rng.uniform(-scale, scale) });
        let f = EdgeTransformParams {
            f: Linear {
                weight: DenseMatrix::from_fn(e, d, |_, _| rng.uniform(-1.0, 1.0)),
                bias: (0..e).map(|_| rng.uniform(-0.5, 0.5)).collect(),
            },
        };
        let epsilon = rng.uniform(-1.0, 1.0);
        let gamma1 = [1.0, 10.0, 30.0][rng.below(3)];

        let edges = build_edges(&x, &f, epsilon).unwrap();
        for y in 0..n {
            if !edges.contains(y, y) {
                rep.missing_self_loops += 1;
            }
            for z in 0..n {
                if edges.contains(y, z) != edges.contains(z, y) {
                    rep.asymmetric += 1;
                }
            }
        }
        let a = attention_weights(&x, &f, &edges, gamma1).unwrap();
        for y in 0..n {
            let sum: f64 = a.row(y).iter().sum();
            rep.max_row_sum_err = rep.max_row_sum_err.max((sum - 1.0).abs());
            for z in 0..n {
                if !edges.contains(y, z) && a.get(y, z) != 0.0 {
                    rep.weight_off_support += 1;
                }
            }
        }
        let next = propagate_step(&x, &a).unwrap();
        for y in 0..n {
            for c in 0..d {
                let vals: Vec<f64> = edges.neighbors(y).map(|z| x.get(z, c)).collect();
                let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let v = next.get(y, c);
                // rounding slack proportional to the magnitude of the values
                let slack = 1e-12 * hi.abs().max(lo.abs()).max(1.0);
                let viol = (lo - v).max(v - hi).max(0.0);
                if viol > slack {
                    rep.max_hull_violation = rep.max_hull_violation.max(viol);
                }
            }
        }
        if identical {
            let err = next
                .data()
                .iter()
                .zip(x.data())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            rep.max_identity_err = rep.max_identity_err.max(err);
        }
    }
    rep
}

/// Desk-scale configuration for the synthetic end-to-end runs.
pub fn desk_setup(seed: u64) -> TrainingSetup {
    TrainingSetup {
        model: ModelConfig {
            feat_dim: 32,
            ..ModelConfig::default()
        },
        prop: PropagationConfig::default(),
        head: HeadConfig {
            gamma2: 30.0,
            hidden_dim: 32,
        },
        train: TrainConfig {
            n_way: 5,
            k_shot: 1,
            epochs: 100,
            lr: 1e-3,
            seed,
            ..TrainConfig::default()
        },
    }
}

pub fn desk_dataset() -> Dataset {
    generate_synthetic(&SyntheticConfig {
        n_seen: 20,
        n_unseen: 5,
        attr_dim: 16,
        image_dim: 32,
        images_per_class: 50,
        noise_std: 0.1,
        ..SyntheticConfig::default()
    })
    .unwrap()
}
