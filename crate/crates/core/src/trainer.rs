//! Episodic training: sample N-way-K-shot tasks over seen classes, compute
//! the cross-entropy of the propagated-attribute classifier, backpropagate by
//! hand, and update with Adam plus decoupled weight decay.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::encoder::{encode_backward, encode_batch_cached};
use crate::error::{ApnetError, Result};
use crate::graph::{propagate_backward, propagate_cached, PropagationConfig};
use crate::head::{head_backward, project, scores_for_image, HeadConfig};
use crate::model::{Gradients, ModelConfig, ModelParams};
use crate::numerics::{sample_without_replacement, softmax_t_unchecked, DenseMatrix, SeededRng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingMode {
    /// One N-way-K-shot task over a random subgraph per iteration.
    Episodic,
    /// `N·K` images drawn uniformly from all seen classes, full seen-class graph.
    Minibatch,
}

impl std::str::FromStr for TrainingMode {
    type Err = ApnetError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "episodic" => Ok(Self::Episodic),
            "minibatch" => Ok(Self::Minibatch),
            other => Err(ApnetError::InvalidArgument(format!("unknown training mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for TrainingMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Episodic => "episodic",
            Self::Minibatch => "minibatch",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub n_way: usize,
    pub k_shot: usize,
    pub epochs: usize,
    pub lr: f64,
    /// Multiplier applied every `lr_decay_every` epochs.
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Clip the global gradient norm to this value when set.
    pub grad_clip: Option<f64>,
    pub mode: TrainingMode,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_way: 30,
            k_shot: 1,
            epochs: 360,
            lr: 2e-5,
            lr_decay: 0.1,
            lr_decay_every: 240,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            grad_clip: None,
            mode: TrainingMode::Episodic,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_way == 0 || self.k_shot == 0 {
            return Err(ApnetError::InvalidArgument("n_way and k_shot must be at least 1".into()));
        }
        for (name, v) in [
            ("lr", self.lr),
            ("lr_decay", self.lr_decay),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("adam_eps", self.adam_eps),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ApnetError::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.weight_decay >= 0.0) {
            return Err(ApnetError::InvalidArgument("weight_decay must be nonnegative".into()));
        }
        if self.lr_decay_every == 0 {
            return Err(ApnetError::InvalidArgument("lr_decay_every must be at least 1".into()));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(ApnetError::InvalidArgument("grad_clip must be positive".into()));
            }
        }
        Ok(())
    }

    /// Step schedule: `lr · lr_decay^⌊epoch / lr_decay_every⌋`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.lr_decay.powi((epoch / self.lr_decay_every) as i32)
    }
}

/// `⌊train_size / (n_way · k_shot)⌋`
pub fn iterations_per_epoch(train_size: usize, n_way: usize, k_shot: usize) -> usize {
    train_size / (n_way * k_shot)
}

/// One sampled task: the class batch and its query images.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Episode {
    /// Dataset class ids; position in this list is the local label.
    pub class_ids: Vec<usize>,
    /// `(sample index, local label)`
    pub queries: Vec<(usize, usize)>,
}

/// Draws episodes from a fixed dataset without re-indexing it every time.
pub struct EpisodeSampler<'a> {
    dataset: &'a Dataset,
    by_class: Vec<Vec<usize>>,
}

impl<'a> EpisodeSampler<'a> {
    pub fn new(dataset: &'a Dataset, k_shot: usize) -> Result<Self> {
        let by_class = dataset.train_indices_by_class();
        if let Some(pos) = by_class.iter().position(|v| v.len() < k_shot) {
            return Err(ApnetError::InvalidArgument(format!(
                "seen class {} has {} training images, fewer than k_shot = {k_shot}",
                dataset.seen()[pos],
                by_class[pos].len()
            )));
        }
        Ok(Self { dataset, by_class })
    }

    /// N classes uniformly without replacement, then K images per class likewise.
    pub fn episode(&self, n_way: usize, k_shot: usize, rng: &mut SeededRng) -> Result<Episode> {
        let seen = self.dataset.seen();
        let picks = sample_without_replacement(seen.len(), n_way, rng).map_err(|_| {
            ApnetError::InvalidArgument(format!("n_way = {n_way} exceeds the {} seen classes", seen.len()))
        })?;
        let mut queries = Vec::with_capacity(n_way * k_shot);
        for (local, &p) in picks.iter().enumerate() {
            let pool = &self.by_class[p];
            for j in sample_without_replacement(pool.len(), k_shot, rng)? {
                queries.push((pool[j], local));
            }
        }
        Ok(Episode {
            class_ids: picks.iter().map(|&p| seen[p]).collect(),
            queries,
        })
    }

    /// `batch` training images uniformly from all seen classes; the class batch is every seen class.
    pub fn minibatch(&self, batch: usize, rng: &mut SeededRng) -> Result<Episode> {
        let train = self.dataset.train_seen();
        let seen = self.dataset.seen();
        let mut local_of = vec![usize::MAX; self.dataset.num_classes()];
        for (local, &c) in seen.iter().enumerate() {
            local_of[c] = local;
        }
        let picks = sample_without_replacement(train.len(), batch, rng)?;
        Ok(Episode {
            class_ids: seen.to_vec(),
            queries: picks
                .into_iter()
                .map(|p| (train[p], local_of[self.dataset.labels()[train[p]]]))
                .collect(),
        })
    }
}

pub fn sample_episode(dataset: &Dataset, cfg: &TrainConfig, rng: &mut SeededRng) -> Result<Episode> {
    EpisodeSampler::new(dataset, cfg.k_shot)?.episode(cfg.n_way, cfg.k_shot, rng)
}

/// Configuration needed to evaluate the loss.
#[derive(Clone, Copy, Debug)]
pub struct LossConfig<'a> {
    pub prop: &'a PropagationConfig,
    pub head: &'a HeadConfig,
}

/// Loss and gradients for one episode.
pub fn loss_and_grads(
    episode: &Episode,
    params: &ModelParams,
    cfg: LossConfig<'_>,
    dataset: &Dataset,
    want_grads: bool,
) -> Result<(f64, Option<Gradients>)> {
    if episode.class_ids.is_empty() || episode.queries.is_empty() {
        return Err(ApnetError::EmptyInput("episode"));
    }
    let n = episode.class_ids.len();
    if let Some(&(_, bad)) = episode.queries.iter().find(|(_, l)| *l >= n) {
        return Err(ApnetError::InvalidArgument(format!("local label {bad} outside {n}-way episode")));
    }
    let attrs = params.class_attributes(dataset.attributes(), &episode.class_ids);
    let (x0, enc_cache) = encode_batch_cached(&attrs, &params.centroids, &params.experts)?;
    let sub_dist = dataset.distances().map(|d| d.select_square(&episode.class_ids));
    let (xt, prop_cache) = propagate_cached(&x0, &params.edge_f, cfg.prop, sub_dist.as_ref())?;

    let sample_ids: Vec<usize> = episode.queries.iter().map(|&(i, _)| i).collect();
    let images = dataset.image_features().select_rows(&sample_ids);
    let proj = project(&xt, &images, &params.head)?;

    let m = episode.queries.len();
    let gamma2 = cfg.head.gamma2;
    let mut loss = 0.0;
    let mut d_scores = DenseMatrix::zeros(m, n);
    for (q, &(_, label)) in episode.queries.iter().enumerate() {
        let h = scores_for_image(&proj, q, &params.head);
        let max = h.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_z = h.iter().map(|&s| (gamma2 * (s - max)).exp()).sum::<f64>().ln();
        loss += log_z - gamma2 * (h[label] - max);
        if want_grads {
            let probs = softmax_t_unchecked(&h, gamma2);
            for (z, p) in probs.into_iter().enumerate() {
                let target = if z == label { 1.0 } else { 0.0 };
                d_scores.set(q, z, gamma2 * (p - target) / m as f64);
            }
        }
    }
    loss /= m as f64;
    if !loss.is_finite() {
        return Err(ApnetError::NonFinite("episode loss".into()));
    }
    if !want_grads {
        return Ok((loss, None));
    }

    let mut grads = params.zero_grads();
    let head_back = head_backward(&xt, &images, &proj, &params.head, &d_scores);
    grads.head = head_back.grads;
    let d_x0 = propagate_backward(&prop_cache, &params.edge_f, &head_back.d_attrs, &mut grads.edge_f);
    encode_backward(&enc_cache, &params.experts, &d_x0, &mut grads.experts);
    Ok((loss, Some(grads)))
}

/// Mean cross-entropy of the episode's queries against its class batch.
pub fn forward_loss(episode: &Episode, params: &ModelParams, cfg: LossConfig<'_>, dataset: &Dataset) -> Result<f64> {
    loss_and_grads(episode, params, cfg, dataset, false).map(|(l, _)| l)
}

/// Reverse-mode gradient of [`forward_loss`]. The thresholded edge set is
/// treated as constant and the centroids receive no gradient.
pub fn backward(episode: &Episode, params: &ModelParams, cfg: LossConfig<'_>, dataset: &Dataset) -> Result<Gradients> {
    loss_and_grads(episode, params, cfg, dataset, true).map(|(_, g)| g.expect("gradients requested"))
}

/// Central differences `(L(θ+h) − L(θ−h)) / 2h` for every learnable scalar.
pub fn finite_diff_with(
    params: &ModelParams,
    h: f64,
    mut loss: impl FnMut(&ModelParams) -> Result<f64>,
) -> Result<Gradients> {
    if !(h > 0.0) {
        return Err(ApnetError::InvalidArgument("finite-difference step must be positive".into()));
    }
    let mut grads = params.zero_grads();
    let mut probe = params.clone();
    let counts: Vec<usize> = params.tensors().iter().map(|t| t.values.len()).collect();
    for (t, &len) in counts.iter().enumerate() {
        for i in 0..len {
            let orig = probe.tensors_mut()[t].values[i];
            probe.tensors_mut()[t].values[i] = orig + h;
            let plus = loss(&probe)?;
            probe.tensors_mut()[t].values[i] = orig - h;
            let minus = loss(&probe)?;
            probe.tensors_mut()[t].values[i] = orig;
            grads.tensors_mut()[t].values[i] = (plus - minus) / (2.0 * h);
        }
    }
    Ok(grads)
}

pub fn finite_diff_grads(
    episode: &Episode,
    params: &ModelParams,
    cfg: LossConfig<'_>,
    dataset: &Dataset,
    h: f64,
) -> Result<Gradients> {
    finite_diff_with(params, h, |p| forward_loss(episode, p, cfg, dataset))
}

/// First and second Adam moments, shaped like the learnable parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Gradients,
    pub v: Gradients,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        Self {
            m: params.zero_grads(),
            v: params.zero_grads(),
            step: 0,
        }
    }
}

/// Decoupled weight decay on weight tensors, then a bias-corrected Adam step.
pub fn adam_step(params: &mut ModelParams, grads: &Gradients, state: &mut AdamState, cfg: &TrainConfig, epoch: usize) -> Result<()> {
    let lr = cfg.lr_at(epoch);
    let mut scale = 1.0;
    if let Some(max_norm) = cfg.grad_clip {
        let norm = grads.global_norm();
        if norm > max_norm {
            scale = max_norm / norm;
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);

    let mut p_tensors = params.tensors_mut();
    let g_tensors = grads.tensors();
    let mut m_tensors = state.m.tensors_mut();
    let mut v_tensors = state.v.tensors_mut();
    if p_tensors.len() != g_tensors.len() || m_tensors.len() != p_tensors.len() {
        return Err(ApnetError::dims("adam_step", "tensor count mismatch"));
    }
    for (((p, g), m), v) in p_tensors
        .iter_mut()
        .zip(&g_tensors)
        .zip(m_tensors.iter_mut())
        .zip(v_tensors.iter_mut())
    {
        if p.values.len() != g.values.len() || p.values.len() != m.values.len() {
            return Err(ApnetError::dims("adam_step", format!("tensor {} shape mismatch", p.name)));
        }
        for i in 0..p.values.len() {
            if p.decay {
                p.values[i] -= lr * cfg.weight_decay * p.values[i];
            }
            let gi = g.values[i] * scale;
            m.values[i] = cfg.beta1 * m.values[i] + (1.0 - cfg.beta1) * gi;
            v.values[i] = cfg.beta2 * v.values[i] + (1.0 - cfg.beta2) * gi * gi;
            let m_hat = m.values[i] / bc1;
            let v_hat = v.values[i] / bc2;
            p.values[i] -= lr * m_hat / (v_hat.sqrt() + cfg.adam_eps);
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub lr: f64,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub iterations_per_epoch: usize,
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    /// One JSON object per line.
    pub fn write_jsonl(&self, mut out: impl Write) -> std::io::Result<()> {
        for r in &self.epochs {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Everything `train` needs besides the dataset.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingSetup {
    pub model: ModelConfig,
    pub prop: PropagationConfig,
    pub head: HeadConfig,
    pub train: TrainConfig,
}

/// Initializes parameters from `setup.train.seed` and trains for `setup.train.epochs`.
pub fn train(dataset: &Dataset, setup: &TrainingSetup) -> Result<(ModelParams, TrainLog)> {
    train_with_callback(dataset, setup, |_| {})
}

pub fn train_with_callback(
    dataset: &Dataset,
    setup: &TrainingSetup,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(ModelParams, TrainLog)> {
    let cfg = &setup.train;
    cfg.validate()?;
    setup.prop.validate()?;
    setup.head.validate()?;
    if dataset.seen().is_empty() {
        return Err(ApnetError::SplitViolation("dataset has no seen classes".into()));
    }
    if cfg.n_way > dataset.seen().len() {
        return Err(ApnetError::InvalidArgument(format!(
            "n_way = {} exceeds the {} seen classes",
            cfg.n_way,
            dataset.seen().len()
        )));
    }
    let mut rng = SeededRng::new(cfg.seed);
    let seen_attrs = dataset.attributes().select_rows(dataset.seen());
    let mut params = ModelParams::init(&seen_attrs, dataset.image_dim(), &setup.model, &setup.head, &mut rng)?;
    let iters = iterations_per_epoch(dataset.train_seen().len(), cfg.n_way, cfg.k_shot);
    let mut log = TrainLog {
        iterations_per_epoch: iters,
        epochs: Vec::with_capacity(cfg.epochs),
    };
    if cfg.epochs == 0 {
        return Ok((params, log));
    }
    if iters == 0 {
        return Err(ApnetError::InvalidArgument(format!(
            "{} training images cannot fill one {}-way {}-shot batch",
            dataset.train_seen().len(),
            cfg.n_way,
            cfg.k_shot
        )));
    }
    let sampler = EpisodeSampler::new(dataset, cfg.k_shot)?;
    let mut state = AdamState::new(&params);
    let loss_cfg = LossConfig {
        prop: &setup.prop,
        head: &setup.head,
    };
    let start = Instant::now();
    for epoch in 0..cfg.epochs {
        let mut total = 0.0;
        for _ in 0..iters {
            let episode = match cfg.mode {
                TrainingMode::Episodic => sampler.episode(cfg.n_way, cfg.k_shot, &mut rng)?,
                TrainingMode::Minibatch => sampler.minibatch(cfg.n_way * cfg.k_shot, &mut rng)?,
            };
            let (loss, grads) = loss_and_grads(&episode, &params, loss_cfg, dataset, true)?;
            adam_step(&mut params, &grads.expect("gradients requested"), &mut state, cfg, epoch)?;
            total += loss;
        }
        let record = EpochRecord {
            epoch,
            mean_loss: total / iters as f64,
            lr: cfg.lr_at(epoch),
            wall_time_s: start.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        log.epochs.push(record);
    }
    Ok((params, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, SyntheticConfig};

    fn tiny_dataset() -> Dataset {
        generate_synthetic(&SyntheticConfig {
            n_seen: 6,
            n_unseen: 2,
            attr_dim: 4,
            image_dim: 5,
            images_per_class: 5,
            noise_std: 0.1,
            test_fraction: 0.2,
            seed: 1,
        })
        .unwrap()
    }

    fn tiny_params(ds: &Dataset, seed: u64) -> ModelParams {
        let seen = ds.attributes().select_rows(ds.seen());
        let model = ModelConfig {
            n_experts: 2,
            feat_dim: 4,
            ..ModelConfig::default()
        };
        let head = HeadConfig {
            gamma2: 30.0,
            hidden_dim: 3,
        };
        ModelParams::init(&seen, ds.image_dim(), &model, &head, &mut SeededRng::new(seed)).unwrap()
    }

    #[test]
    fn lr_schedule() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.lr_at(0), 2e-5);
        assert_eq!(cfg.lr_at(239), 2e-5);
        assert!((cfg.lr_at(240) - 2e-6).abs() < 1e-20);
        assert!((cfg.lr_at(480) - 2e-7).abs() < 1e-21);
    }

    #[test]
    fn iteration_count() {
        assert_eq!(iterations_per_epoch(10_320, 30, 1), 344);
        assert_eq!(iterations_per_epoch(29, 30, 1), 0);
    }

    #[test]
    fn episode_shapes() {
        let ds = tiny_dataset();
        let mut rng = SeededRng::new(0);
        let cfg = TrainConfig {
            n_way: 6,
            k_shot: 2,
            ..Default::default()
        };
        let ep = sample_episode(&ds, &cfg, &mut rng).unwrap();
        let mut ids = ep.class_ids.clone();
        ids.sort_unstable();
        assert_eq!(ids, ds.seen());
        assert_eq!(ep.queries.len(), 12);
        for &(i, local) in &ep.queries {
            assert_eq!(ds.labels()[i], ep.class_ids[local]);
        }
        let too_many = TrainConfig {
            k_shot: 5,
            ..cfg.clone()
        };
        assert!(sample_episode(&ds, &too_many, &mut rng).is_err());
        let too_wide = TrainConfig { n_way: 7, ..cfg };
        assert!(sample_episode(&ds, &too_wide, &mut rng).is_err());
    }

    #[test]
    fn class_selection_is_uniform() {
        // 6 seen classes, 2-way episodes: each class appears with prob 1/3.
        // chi-square with 5 dof, alpha = 0.01 critical value 15.086
        let ds = tiny_dataset();
        let sampler = EpisodeSampler::new(&ds, 1).unwrap();
        let mut rng = SeededRng::new(77);
        let mut counts = [0usize; 6];
        let episodes = 10_000;
        for _ in 0..episodes {
            for c in sampler.episode(2, 1, &mut rng).unwrap().class_ids {
                counts[c] += 1;
            }
        }
        let expected = episodes as f64 * 2.0 / 6.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        assert!(chi2 < 15.086, "chi2 {chi2} counts {counts:?}");
    }

    #[test]
    fn single_class_episode_has_zero_loss_and_gradient() {
        let ds = tiny_dataset();
        let params = tiny_params(&ds, 3);
        let ep = Episode {
            class_ids: vec![2],
            queries: vec![(ds.train_seen()[9], 0)],
        };
        let prop = PropagationConfig::default();
        let head = HeadConfig::default();
        let cfg = LossConfig { prop: &prop, head: &head };
        assert_eq!(forward_loss(&ep, &params, cfg, &ds).unwrap(), 0.0);
        let g = backward(&ep, &params, cfg, &ds).unwrap();
        assert!(g.global_norm() <= 1e-10);
    }

    #[test]
    fn uniform_scores_give_log_n() {
        let ds = tiny_dataset();
        let mut params = tiny_params(&ds, 3);
        // w = 0 makes every score equal to b
        params.head.w.iter_mut().for_each(|v| *v = 0.0);
        let ep = sample_episode(
            &ds,
            &TrainConfig {
                n_way: 5,
                k_shot: 1,
                ..Default::default()
            },
            &mut SeededRng::new(4),
        )
        .unwrap();
        let prop = PropagationConfig::default();
        let head = HeadConfig::default();
        let loss = forward_loss(&ep, &params, LossConfig { prop: &prop, head: &head }, &ds).unwrap();
        assert!((loss - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn finite_difference_of_quadratic() {
        let ds = tiny_dataset();
        let mut params = tiny_params(&ds, 0);
        params.head.b = 3.0;
        let g = finite_diff_with(&params, 1e-4, |p| Ok(p.head.b * p.head.b)).unwrap();
        assert!((g.head.b - 6.0).abs() < 1e-8);
        assert!(g.head.w1.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn finite_difference_error_is_second_order() {
        // f(θ) = exp(θ) at θ = 0.5: central-difference error ≈ h²/6 · f'''
        let ds = tiny_dataset();
        let mut params = tiny_params(&ds, 0);
        params.head.b = 0.5;
        let exact = 0.5f64.exp();
        let err = |h: f64| {
            let g = finite_diff_with(&params, h, |p| Ok(p.head.b.exp())).unwrap();
            (g.head.b - exact).abs()
        };
        let ratio = err(1e-2) / err(5e-3);
        assert!((ratio - 4.0).abs() < 0.1, "ratio {ratio}");
    }

    #[test]
    fn adam_first_step() {
        let ds = tiny_dataset();
        let mut params = tiny_params(&ds, 0);
        let before = params.clone();
        let cfg = TrainConfig {
            lr: 1e-3,
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut state = AdamState::new(&params);
        let zero = params.zero_grads();
        adam_step(&mut params, &zero, &mut state, &cfg, 0).unwrap();
        assert_eq!(params, before);

        let mut grads = params.zero_grads();
        grads.head.b = 0.37;
        grads.head.w[0] = -2.0;
        let mut state = AdamState::new(&params);
        adam_step(&mut params, &grads, &mut state, &cfg, 0).unwrap();
        let db = params.head.b - before.head.b;
        assert!((db + 1e-3 * 0.37 / (0.37 + 1e-8)).abs() < 1e-15);
        let dw = params.head.w[0] - before.head.w[0];
        assert!((dw - 1e-3 * 2.0 / (2.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn weight_decay_skips_biases() {
        let ds = tiny_dataset();
        let mut params = tiny_params(&ds, 0);
        params.head.b = 1.0;
        params.head.b1[0] = 1.0;
        let before = params.clone();
        let cfg = TrainConfig {
            lr: 0.1,
            weight_decay: 0.5,
            ..Default::default()
        };
        let mut state = AdamState::new(&params);
        let zero = params.zero_grads();
        adam_step(&mut params, &zero, &mut state, &cfg, 0).unwrap();
        assert_eq!(params.head.b, 1.0);
        assert_eq!(params.head.b1, before.head.b1);
        let w = before.head.w1.get(0, 0);
        assert!((params.head.w1.get(0, 0) - w * 0.95).abs() < 1e-15);
        assert_eq!(params.centroids, before.centroids);
    }

    #[test]
    fn zero_epochs_returns_initial_params() {
        let ds = tiny_dataset();
        let setup = TrainingSetup {
            model: ModelConfig {
                feat_dim: 4,
                ..Default::default()
            },
            head: HeadConfig {
                gamma2: 30.0,
                hidden_dim: 3,
            },
            train: TrainConfig {
                epochs: 0,
                n_way: 3,
                ..Default::default()
            },
            ..Default::default()
        };
        let (params, log) = train(&ds, &setup).unwrap();
        assert!(log.epochs.is_empty());
        let seen = ds.attributes().select_rows(ds.seen());
        let fresh = ModelParams::init(&seen, ds.image_dim(), &setup.model, &setup.head, &mut SeededRng::new(0)).unwrap();
        assert_eq!(params, fresh);
    }
}
