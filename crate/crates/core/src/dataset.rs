//! Dataset container, the on-disk directory format, and a synthetic generator.
//!
//! Directory layout:
//!
//! | file             | contents                                              |
//! |------------------|-------------------------------------------------------|
//! | `meta.json`      | `{m, c, image_dim, attr_dim, seen, unseen, train_seen, test_seen, test_unseen}` |
//! | `features.bin`   | `m × image_dim` f32, little-endian, row-major          |
//! | `labels.bin`     | `m` u32, little-endian                                 |
//! | `attributes.bin` | `c × attr_dim` f32, little-endian, row-major           |
//! | `distances.bin`  | optional `c × c` f32 hop distances                     |
//!
//! Values are promoted to `f64` on load.

use std::collections::{BTreeSet, VecDeque};
use std::fs;
use std::path::Path;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{ApnetError, Result};
use crate::numerics::{DenseMatrix, SeededRng};

pub const META_FILE: &str = "meta.json";
pub const FEATURES_FILE: &str = "features.bin";
pub const LABELS_FILE: &str = "labels.bin";
pub const ATTRIBUTES_FILE: &str = "attributes.bin";
pub const DISTANCES_FILE: &str = "distances.bin";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub m: usize,
    pub c: usize,
    pub image_dim: usize,
    pub attr_dim: usize,
    pub seen: Vec<usize>,
    pub unseen: Vec<usize>,
    pub train_seen: Vec<usize>,
    pub test_seen: Vec<usize>,
    pub test_unseen: Vec<usize>,
}

/// Validated zero-shot dataset. Construction checks every invariant, so a
/// value of this type is always consistent.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    image_features: DenseMatrix,
    labels: Vec<usize>,
    attributes: DenseMatrix,
    seen: Vec<usize>,
    unseen: Vec<usize>,
    train_seen: Vec<usize>,
    test_seen: Vec<usize>,
    test_unseen: Vec<usize>,
    distances: Option<DenseMatrix>,
}

/// Class and sample splits of a [`Dataset`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Splits {
    pub seen: Vec<usize>,
    pub unseen: Vec<usize>,
    pub train_seen: Vec<usize>,
    pub test_seen: Vec<usize>,
    pub test_unseen: Vec<usize>,
}

impl Dataset {
    pub fn new(
        image_features: DenseMatrix,
        labels: Vec<usize>,
        attributes: DenseMatrix,
        splits: Splits,
        distances: Option<DenseMatrix>,
    ) -> Result<Self> {
        let ds = Self {
            image_features,
            labels,
            attributes,
            seen: splits.seen,
            unseen: splits.unseen,
            train_seen: splits.train_seen,
            test_seen: splits.test_seen,
            test_unseen: splits.test_unseen,
            distances,
        };
        ds.validate()?;
        Ok(ds)
    }

    fn validate(&self) -> Result<()> {
        let m = self.image_features.rows();
        let c = self.attributes.rows();
        if self.labels.len() != m {
            return Err(ApnetError::dims(
                "Dataset",
                format!("{} labels for {m} feature rows", self.labels.len()),
            ));
        }
        if let Some(pos) = self.labels.iter().position(|&l| l >= c) {
            return Err(ApnetError::SplitViolation(format!(
                "sample {pos} has label {} but only {c} classes have attributes",
                self.labels[pos]
            )));
        }
        let seen = class_set("seen", &self.seen, c)?;
        let unseen = class_set("unseen", &self.unseen, c)?;
        if let Some(both) = seen.intersection(&unseen).next() {
            return Err(ApnetError::SplitViolation(format!(
                "class {both} is listed as both seen and unseen"
            )));
        }
        for (name, idx, allowed) in [
            ("train_seen", &self.train_seen, &seen),
            ("test_seen", &self.test_seen, &seen),
            ("test_unseen", &self.test_unseen, &unseen),
        ] {
            for &i in idx {
                if i >= m {
                    return Err(ApnetError::SplitViolation(format!(
                        "{name} references sample {i} but there are {m} samples"
                    )));
                }
                if !allowed.contains(&self.labels[i]) {
                    return Err(ApnetError::SplitViolation(format!(
                        "{name} sample {i} has label {} outside its class split",
                        self.labels[i]
                    )));
                }
            }
        }
        if let Some(d) = &self.distances {
            validate_distances(d, c)?;
        }
        Ok(())
    }

    pub fn num_samples(&self) -> usize {
        self.image_features.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.attributes.rows()
    }

    pub fn image_dim(&self) -> usize {
        self.image_features.cols()
    }

    pub fn attr_dim(&self) -> usize {
        self.attributes.cols()
    }

    pub fn image_features(&self) -> &DenseMatrix {
        &self.image_features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn attributes(&self) -> &DenseMatrix {
        &self.attributes
    }

    pub fn seen(&self) -> &[usize] {
        &self.seen
    }

    pub fn unseen(&self) -> &[usize] {
        &self.unseen
    }

    pub fn train_seen(&self) -> &[usize] {
        &self.train_seen
    }

    pub fn test_seen(&self) -> &[usize] {
        &self.test_seen
    }

    pub fn test_unseen(&self) -> &[usize] {
        &self.test_unseen
    }

    pub fn distances(&self) -> Option<&DenseMatrix> {
        self.distances.as_ref()
    }

    pub fn with_distances(mut self, distances: Option<DenseMatrix>) -> Result<Self> {
        self.distances = distances;
        self.validate()?;
        Ok(self)
    }

    pub fn meta(&self) -> Meta {
        Meta {
            m: self.num_samples(),
            c: self.num_classes(),
            image_dim: self.image_dim(),
            attr_dim: self.attr_dim(),
            seen: self.seen.clone(),
            unseen: self.unseen.clone(),
            train_seen: self.train_seen.clone(),
            test_seen: self.test_seen.clone(),
            test_unseen: self.test_unseen.clone(),
        }
    }

    /// Training sample indices grouped by seen class, in `seen` order.
    pub fn train_indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut by_class = vec![Vec::new(); self.num_classes()];
        for &i in &self.train_seen {
            by_class[self.labels[i]].push(i);
        }
        self.seen.iter().map(|&c| std::mem::take(&mut by_class[c])).collect()
    }
}

fn class_set(name: &str, ids: &[usize], c: usize) -> Result<BTreeSet<usize>> {
    let mut set = BTreeSet::new();
    for &id in ids {
        if id >= c {
            return Err(ApnetError::SplitViolation(format!(
                "{name} class {id} has no attribute row ({c} classes)"
            )));
        }
        if !set.insert(id) {
            return Err(ApnetError::SplitViolation(format!("{name} class {id} listed twice")));
        }
    }
    Ok(set)
}

fn validate_distances(d: &DenseMatrix, c: usize) -> Result<()> {
    if d.shape() != (c, c) {
        return Err(ApnetError::dims("distances", format!("{:?} for {c} classes", d.shape())));
    }
    for i in 0..c {
        if d.get(i, i) != 0.0 {
            return Err(ApnetError::InvalidArgument(format!("hop distance ({i}, {i}) must be 0")));
        }
        for j in 0..c {
            if i != j && d.get(i, j) <= 0.0 {
                return Err(ApnetError::InvalidArgument(format!(
                    "hop distance ({i}, {j}) = {} must be positive",
                    d.get(i, j)
                )));
            }
            if d.get(i, j) != d.get(j, i) {
                return Err(ApnetError::InvalidArgument(format!("hop distances not symmetric at ({i}, {j})")));
            }
        }
    }
    Ok(())
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    if !path.exists() {
        return Err(ApnetError::MissingFile(path.to_path_buf()));
    }
    fs::read(path).map_err(|e| ApnetError::io(path, e))
}

fn read_f32_matrix(path: &Path, rows: usize, cols: usize) -> Result<DenseMatrix> {
    let bytes = read_file(path)?;
    let expected = rows * cols * 4;
    if bytes.len() != expected {
        return Err(ApnetError::SizeMismatch {
            file: path.display().to_string(),
            expected,
            found: bytes.len(),
        });
    }
    let data = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    DenseMatrix::from_vec(rows, cols, data).map_err(|e| match e {
        ApnetError::NonFinite(what) => ApnetError::NonFinite(format!("{what} of {}", path.display())),
        other => other,
    })
}

fn f32_bytes(m: &DenseMatrix) -> Vec<u8> {
    m.data().iter().flat_map(|&v| (v as f32).to_le_bytes()).collect()
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| ApnetError::io(path, e))
}

/// Reads and validates a dataset directory. `distances.bin` is loaded when present.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    if !dir.is_dir() {
        return Err(ApnetError::MissingFile(dir.to_path_buf()));
    }
    let meta_path = dir.join(META_FILE);
    let meta: Meta = serde_json::from_slice(&read_file(&meta_path)?).map_err(|source| ApnetError::Json {
        path: meta_path.clone(),
        source,
    })?;
    let features = read_f32_matrix(&dir.join(FEATURES_FILE), meta.m, meta.image_dim)?;
    let labels_path = dir.join(LABELS_FILE);
    let label_bytes = read_file(&labels_path)?;
    if label_bytes.len() != meta.m * 4 {
        return Err(ApnetError::SizeMismatch {
            file: labels_path.display().to_string(),
            expected: meta.m * 4,
            found: label_bytes.len(),
        });
    }
    let labels = label_bytes
        .chunks_exact(4)
        .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
        .collect();
    let attributes = read_f32_matrix(&dir.join(ATTRIBUTES_FILE), meta.c, meta.attr_dim)?;
    let dist_path = dir.join(DISTANCES_FILE);
    let distances = if dist_path.exists() {
        Some(read_f32_matrix(&dist_path, meta.c, meta.c)?)
    } else {
        None
    };
    Dataset::new(
        features,
        labels,
        attributes,
        Splits {
            seen: meta.seen,
            unseen: meta.unseen,
            train_seen: meta.train_seen,
            test_seen: meta.test_seen,
            test_unseen: meta.test_unseen,
        },
        distances,
    )
}

/// Writes the directory format; values are stored as `f32`.
pub fn save_dataset(dataset: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| ApnetError::io(dir, e))?;
    let meta = serde_json::to_vec_pretty(&dataset.meta()).expect("meta serializes");
    write_file(&dir.join(META_FILE), &meta)?;
    write_file(&dir.join(FEATURES_FILE), &f32_bytes(&dataset.image_features))?;
    let labels: Vec<u8> = dataset
        .labels
        .iter()
        .flat_map(|&l| (l as u32).to_le_bytes())
        .collect();
    write_file(&dir.join(LABELS_FILE), &labels)?;
    write_file(&dir.join(ATTRIBUTES_FILE), &f32_bytes(&dataset.attributes))?;
    let dist_path = dir.join(DISTANCES_FILE);
    match &dataset.distances {
        Some(d) => write_file(&dist_path, &f32_bytes(d))?,
        None if dist_path.exists() => fs::remove_file(&dist_path).map_err(|e| ApnetError::io(&dist_path, e))?,
        None => {}
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n_seen: usize,
    pub n_unseen: usize,
    pub attr_dim: usize,
    pub image_dim: usize,
    pub images_per_class: usize,
    pub noise_std: f64,
    /// Share of each seen class's images held out for `test_seen`.
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_seen: 20,
            n_unseen: 5,
            attr_dim: 16,
            image_dim: 32,
            images_per_class: 50,
            noise_std: 0.1,
            test_fraction: 0.2,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("n_seen", self.n_seen),
            ("n_unseen", self.n_unseen),
            ("attr_dim", self.attr_dim),
            ("image_dim", self.image_dim),
            ("images_per_class", self.images_per_class),
        ] {
            if v == 0 {
                return Err(ApnetError::InvalidArgument(format!("{name} must be at least 1")));
            }
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(ApnetError::InvalidArgument(format!(
                "noise_std must be nonnegative, got {}",
                self.noise_std
            )));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(ApnetError::InvalidArgument(format!(
                "test_fraction must lie in [0, 1), got {}",
                self.test_fraction
            )));
        }
        Ok(())
    }
}

/// Neighbours per class in the graph that defines synthetic hop distances.
const HIERARCHY_NEIGHBORS: usize = 3;

fn to_f32_precision(v: f64) -> f64 {
    v as f32 as f64
}

/// Random zero-shot dataset with a learnable attribute → image relation.
///
/// Each class gets an attribute prototype `s ~ U(0,1)^attr_dim`; one shared
/// Gaussian map `M` (entries `N(0, 1/attr_dim)`) sends it to image space, and
/// every image is `M s + N(0, noise_std²)`. Classes `0..n_seen` are seen.
/// Values are rounded to `f32` so the dataset survives a save/load unchanged.
/// Hop distances are shortest-path lengths in the symmetric 3-nearest-neighbour
/// graph of the attribute prototypes.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = SeededRng::new(cfg.seed);
    let c = cfg.n_seen + cfg.n_unseen;
    let attributes = DenseMatrix::from_fn(c, cfg.attr_dim, |_, _| to_f32_precision(rng.uniform(0.0, 1.0)));

    let map_dist = Normal::new(0.0, 1.0 / (cfg.attr_dim as f64).sqrt()).expect("valid normal");
    let map = DenseMatrix::from_fn(cfg.image_dim, cfg.attr_dim, |_, _| map_dist.sample(rng.inner()));
    let noise = Normal::new(0.0, cfg.noise_std).expect("valid normal");

    let m = c * cfg.images_per_class;
    let mut features = DenseMatrix::zeros(m, cfg.image_dim);
    let mut labels = Vec::with_capacity(m);
    let n_test = (cfg.images_per_class as f64 * cfg.test_fraction).floor() as usize;
    let mut splits = Splits {
        seen: (0..cfg.n_seen).collect(),
        unseen: (cfg.n_seen..c).collect(),
        ..Default::default()
    };
    for class in 0..c {
        let prototype: Vec<f64> = (0..cfg.image_dim)
            .map(|r| crate::numerics::dot(map.row(r), attributes.row(class)))
            .collect();
        for j in 0..cfg.images_per_class {
            let i = class * cfg.images_per_class + j;
            for (dst, &p) in features.row_mut(i).iter_mut().zip(&prototype) {
                let jitter = if cfg.noise_std > 0.0 { noise.sample(rng.inner()) } else { 0.0 };
                *dst = to_f32_precision(p + jitter);
            }
            labels.push(class);
            if class >= cfg.n_seen {
                splits.test_unseen.push(i);
            } else if j < cfg.images_per_class - n_test {
                splits.train_seen.push(i);
            } else {
                splits.test_seen.push(i);
            }
        }
    }
    let distances = knn_hop_distances(&attributes, HIERARCHY_NEIGHBORS);
    Dataset::new(features, labels, attributes, splits, Some(distances))
}

/// All-pairs hop counts in the symmetrized k-nearest-neighbour graph.
/// Pairs in different components get one more than the largest finite count.
fn knn_hop_distances(points: &DenseMatrix, k: usize) -> DenseMatrix {
    let n = points.rows();
    let mut adj = vec![BTreeSet::new(); n];
    for i in 0..n {
        let mut others: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| {
                let d: f64 = points
                    .row(i)
                    .iter()
                    .zip(points.row(j))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                (d, j)
            })
            .collect();
        others.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
        for &(_, j) in others.iter().take(k) {
            adj[i].insert(j);
            adj[j].insert(i);
        }
    }
    let mut hops = vec![vec![usize::MAX; n]; n];
    for (src, row) in hops.iter_mut().enumerate() {
        row[src] = 0;
        let mut queue = VecDeque::from([src]);
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if row[v] == usize::MAX {
                    row[v] = row[u] + 1;
                    queue.push_back(v);
                }
            }
        }
    }
    let max_finite = hops
        .iter()
        .flatten()
        .filter(|&&h| h != usize::MAX)
        .max()
        .copied()
        .unwrap_or(0);
    DenseMatrix::from_fn(n, n, |i, j| {
        let h = hops[i][j];
        if h == usize::MAX {
            (max_finite + 1) as f64
        } else {
            h as f64
        }
    })
}
