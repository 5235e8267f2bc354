//! Command-line front end: `train`, `eval`, `ablate`, `synth`, `dump-embeddings`.
//!
//! Every run is driven by a [`RunConfig`]. It starts from defaults, is
//! replaced by `--config <file>` when given, and individual flags override
//! single fields. Exit codes: 0 success, 1 validation error, 2 I/O error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::dataset::{generate_synthetic, load_dataset, save_dataset, Dataset, SyntheticConfig};
use crate::error::{ApnetError, Result};
use crate::eval::{evaluate_gzsl, evaluate_zsl, EvalConfig, EvalReport, GraphScope, Setting};
use crate::graph::{EdgeSet, PropagationConfig, PropagationMode};
use crate::head::HeadConfig;
use crate::model::{class_embeddings, Checkpoint, ModelConfig};
use crate::trainer::{train, TrainConfig, TrainingMode, TrainingSetup};

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";
pub const CONFIG_FILE: &str = "config.json";
pub const ABLATION_FILE: &str = "ablation.json";
pub const EMBEDDINGS_FILE: &str = "embeddings.csv";
pub const EDGES_FILE: &str = "edges.csv";

/// Everything a command may need, serialized into each run directory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub setting: Setting,
    pub graph_scope: GraphScope,
    pub model: ModelConfig,
    pub prop: PropagationConfig,
    pub head: HeadConfig,
    pub train: TrainConfig,
    pub synth: SyntheticConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(ApnetError::MissingFile(path.to_path_buf()));
        }
        let bytes = fs::read(path).map_err(|e| ApnetError::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|source| ApnetError::Json {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn setup(&self) -> TrainingSetup {
        TrainingSetup {
            model: self.model.clone(),
            prop: self.prop.clone(),
            head: self.head.clone(),
            train: self.train.clone(),
        }
    }

    fn require_data(&self) -> Result<&Path> {
        self.data
            .as_deref()
            .ok_or_else(|| ApnetError::InvalidArgument("--data <dir> is required".into()))
    }

    fn require_out(&self) -> Result<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| ApnetError::InvalidArgument("--out <dir> is required".into()))
    }

    fn require_checkpoint(&self) -> Result<&Path> {
        self.checkpoint
            .as_deref()
            .ok_or_else(|| ApnetError::InvalidArgument("--checkpoint <file> is required".into()))
    }
}

#[derive(Debug, Parser)]
#[command(name = "apnet", version, about = "Attribute propagation networks for zero-shot classification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train on a dataset directory and write checkpoint, log and config.
    Train(CommonArgs),
    /// Evaluate a checkpoint and print the report as JSON.
    Eval(CommonArgs),
    /// Train and evaluate every (training mode, propagation) cell.
    Ablate(AblateArgs),
    /// Write a synthetic dataset directory.
    Synth(CommonArgs),
    /// Write propagated class vectors and the class graph as CSV.
    DumpEmbeddings(CommonArgs),
}

#[derive(Clone, Debug, Default, Args)]
pub struct CommonArgs {
    /// JSON RunConfig; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Clone, Debug, Default, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Training modes to run, comma separated.
    #[arg(long, value_delimiter = ',', default_values = ["episodic", "minibatch"])]
    pub training_modes: Vec<TrainingMode>,
    /// Propagation modes to run, comma separated.
    #[arg(long, value_delimiter = ',', default_values = ["none", "fixed_hop", "learned"])]
    pub prop_modes: Vec<PropagationMode>,
}

/// One optional flag per configurable field.
#[derive(Clone, Debug, Default, Args)]
pub struct Overrides {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub setting: Option<Setting>,
    #[arg(long)]
    pub graph_scope: Option<GraphScope>,
    /// Seeds both training and synthetic generation.
    #[arg(long)]
    pub seed: Option<u64>,

    #[arg(long)]
    pub n_experts: Option<usize>,
    #[arg(long)]
    pub feat_dim: Option<usize>,
    #[arg(long)]
    pub edge_dim: Option<usize>,
    #[arg(long)]
    pub normalize_attributes: Option<bool>,

    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub gamma1: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub prop_mode: Option<PropagationMode>,

    #[arg(long)]
    pub gamma2: Option<f64>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,

    #[arg(long)]
    pub n_way: Option<usize>,
    #[arg(long)]
    pub k_shot: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lr_decay: Option<f64>,
    #[arg(long)]
    pub lr_decay_every: Option<usize>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub beta1: Option<f64>,
    #[arg(long)]
    pub beta2: Option<f64>,
    #[arg(long)]
    pub adam_eps: Option<f64>,
    #[arg(long)]
    pub grad_clip: Option<f64>,
    #[arg(long)]
    pub training_mode: Option<TrainingMode>,

    #[arg(long)]
    pub n_seen: Option<usize>,
    #[arg(long)]
    pub n_unseen: Option<usize>,
    #[arg(long)]
    pub attr_dim: Option<usize>,
    #[arg(long)]
    pub image_dim: Option<usize>,
    #[arg(long)]
    pub images_per_class: Option<usize>,
    #[arg(long)]
    pub noise_std: Option<f64>,
    #[arg(long)]
    pub test_fraction: Option<f64>,
}

fn set<T: Clone>(dst: &mut T, src: &Option<T>) {
    if let Some(v) = src {
        *dst = v.clone();
    }
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        if self.data.is_some() {
            cfg.data.clone_from(&self.data);
        }
        if self.out.is_some() {
            cfg.out.clone_from(&self.out);
        }
        if self.checkpoint.is_some() {
            cfg.checkpoint.clone_from(&self.checkpoint);
        }
        set(&mut cfg.setting, &self.setting);
        set(&mut cfg.graph_scope, &self.graph_scope);
        set(&mut cfg.train.seed, &self.seed);
        set(&mut cfg.synth.seed, &self.seed);

        set(&mut cfg.model.n_experts, &self.n_experts);
        set(&mut cfg.model.feat_dim, &self.feat_dim);
        if self.edge_dim.is_some() {
            cfg.model.edge_dim = self.edge_dim;
        }
        set(&mut cfg.model.normalize_attributes, &self.normalize_attributes);

        self.apply_prop_head(&mut cfg.prop, &mut cfg.head);

        let t = &mut cfg.train;
        set(&mut t.n_way, &self.n_way);
        set(&mut t.k_shot, &self.k_shot);
        set(&mut t.epochs, &self.epochs);
        set(&mut t.lr, &self.lr);
        set(&mut t.lr_decay, &self.lr_decay);
        set(&mut t.lr_decay_every, &self.lr_decay_every);
        set(&mut t.weight_decay, &self.weight_decay);
        set(&mut t.beta1, &self.beta1);
        set(&mut t.beta2, &self.beta2);
        set(&mut t.adam_eps, &self.adam_eps);
        if self.grad_clip.is_some() {
            t.grad_clip = self.grad_clip;
        }
        set(&mut t.mode, &self.training_mode);

        let s = &mut cfg.synth;
        set(&mut s.n_seen, &self.n_seen);
        set(&mut s.n_unseen, &self.n_unseen);
        set(&mut s.attr_dim, &self.attr_dim);
        set(&mut s.image_dim, &self.image_dim);
        set(&mut s.images_per_class, &self.images_per_class);
        set(&mut s.noise_std, &self.noise_std);
        set(&mut s.test_fraction, &self.test_fraction);
    }

    /// Only the propagation and head flags; used on top of a checkpoint's settings.
    pub fn apply_prop_head(&self, prop: &mut PropagationConfig, head: &mut HeadConfig) {
        set(&mut prop.epsilon, &self.epsilon);
        set(&mut prop.gamma1, &self.gamma1);
        set(&mut prop.steps, &self.steps);
        set(&mut prop.mode, &self.prop_mode);
        set(&mut head.gamma2, &self.gamma2);
        set(&mut head.hidden_dim, &self.hidden_dim);
    }
}

impl CommonArgs {
    /// Defaults, then the config file, then flags.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        self.overrides.apply(&mut cfg);
        Ok(cfg)
    }
}

/// Exit code for an error: 2 for filesystem trouble, 1 for everything else.
pub fn exit_code(err: &ApnetError) -> i32 {
    if err.is_io() {
        2
    } else {
        1
    }
}

/// Parses `args` (program name first), runs the command, and returns the exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(stderr, "{}", e.render());
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(&cli.command, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cmd: &Command, stdout: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::Train(args) => cmd_train(&args.resolve()?, stdout),
        Command::Eval(args) => cmd_eval(&args.resolve()?, &args.overrides, stdout),
        Command::Ablate(args) => cmd_ablate(&args.common.resolve()?, &args.training_modes, &args.prop_modes, stdout),
        Command::Synth(args) => cmd_synth(&args.resolve()?, stdout),
        Command::DumpEmbeddings(args) => cmd_dump_embeddings(&args.resolve()?, &args.overrides, stdout),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| ApnetError::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| ApnetError::io(path, e))
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("config types serialize")
}

fn out_err(e: std::io::Error) -> ApnetError {
    ApnetError::io("<stdout>", e)
}

pub fn cmd_train(cfg: &RunConfig, stdout: &mut dyn Write) -> Result<()> {
    let data = cfg.require_data()?;
    let out = cfg.require_out()?;
    let setup = cfg.setup();
    setup.model.validate()?;
    let dataset = load_dataset(data)?;
    let (params, log) = train(&dataset, &setup)?;
    create_dir(out)?;
    let ckpt = Checkpoint {
        model: setup.model,
        prop: setup.prop,
        head: setup.head,
        params,
    };
    ckpt.save(out.join(CHECKPOINT_FILE))?;
    let mut buf = Vec::new();
    log.write_jsonl(&mut buf).map_err(|e| ApnetError::io(out.join(TRAIN_LOG_FILE), e))?;
    write_file(&out.join(TRAIN_LOG_FILE), &buf)?;
    write_file(&out.join(CONFIG_FILE), to_json(cfg).as_bytes())?;
    let last = log.epochs.last().map_or(f64::NAN, |r| r.mean_loss);
    writeln!(
        stdout,
        "trained {} epochs x {} iterations, final mean loss {last:.6}; wrote {}",
        log.epochs.len(),
        log.iterations_per_epoch,
        out.display()
    )
    .map_err(out_err)
}

/// Settings for evaluating `ckpt`: its own propagation/head config with flag overrides.
fn eval_config(ckpt: &Checkpoint, cfg: &RunConfig, overrides: &Overrides) -> EvalConfig {
    let mut prop = ckpt.prop.clone();
    let mut head = ckpt.head.clone();
    overrides.apply_prop_head(&mut prop, &mut head);
    EvalConfig {
        prop,
        head,
        graph_scope: cfg.graph_scope,
    }
}

pub fn evaluate(ckpt: &Checkpoint, dataset: &Dataset, setting: Setting, cfg: &EvalConfig) -> Result<EvalReport> {
    match setting {
        Setting::Zsl => evaluate_zsl(&ckpt.params, dataset, cfg),
        Setting::Gzsl => evaluate_gzsl(&ckpt.params, dataset, cfg),
    }
}

pub fn cmd_eval(cfg: &RunConfig, overrides: &Overrides, stdout: &mut dyn Write) -> Result<()> {
    let ckpt = Checkpoint::load(cfg.require_checkpoint()?)?;
    let dataset = load_dataset(cfg.require_data()?)?;
    let eval_cfg = eval_config(&ckpt, cfg, overrides);
    let report = evaluate(&ckpt, &dataset, cfg.setting, &eval_cfg)?;
    writeln!(stdout, "{}", to_json(&report)).map_err(out_err)
}

/// One row of the ablation grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub training_mode: TrainingMode,
    pub prop_mode: PropagationMode,
    #[serde(rename = "S")]
    pub seen: f64,
    #[serde(rename = "U")]
    pub unseen: f64,
    #[serde(rename = "H")]
    pub harmonic: f64,
}

/// Trains and evaluates (GZSL) one model per requested cell, in the given order.
pub fn run_ablation(
    dataset: &Dataset,
    base: &RunConfig,
    training_modes: &[TrainingMode],
    prop_modes: &[PropagationMode],
) -> Result<Vec<AblationCell>> {
    if training_modes.is_empty() || prop_modes.is_empty() {
        return Err(ApnetError::InvalidArgument("ablation needs at least one cell".into()));
    }
    if prop_modes.contains(&PropagationMode::FixedHop) && dataset.distances().is_none() {
        return Err(ApnetError::InvalidArgument(
            "fixed_hop ablation requires distances.bin in the dataset directory".into(),
        ));
    }
    let mut cells = Vec::new();
    for &training_mode in training_modes {
        for &prop_mode in prop_modes {
            let mut cfg = base.clone();
            cfg.train.mode = training_mode;
            cfg.prop.mode = prop_mode;
            let setup = cfg.setup();
            let (params, _) = train(dataset, &setup)?;
            let eval_cfg = EvalConfig {
                prop: setup.prop,
                head: setup.head,
                graph_scope: cfg.graph_scope,
            };
            let report = evaluate_gzsl(&params, dataset, &eval_cfg)?;
            cells.push(AblationCell {
                training_mode,
                prop_mode,
                seen: report.acc_seen.expect("gzsl report has S"),
                unseen: report.acc_unseen,
                harmonic: report.harmonic.expect("gzsl report has H"),
            });
        }
    }
    Ok(cells)
}

/// S/U/H table, one row per cell, accuracies to 0.1.
pub fn format_ablation(cells: &[AblationCell]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<16} {:<16} {:>6} {:>6} {:>6}", "meta training", "graph", "S", "U", "H");
    for c in cells {
        let meta = match c.training_mode {
            TrainingMode::Episodic => "yes (episodic)",
            TrainingMode::Minibatch => "no (minibatch)",
        };
        let graph = match c.prop_mode {
            PropagationMode::None => "none",
            PropagationMode::FixedHop => "fixed hop",
            PropagationMode::Learned => "learned",
        };
        let _ = writeln!(
            s,
            "{meta:<16} {graph:<16} {:>6.1} {:>6.1} {:>6.1}",
            c.seen, c.unseen, c.harmonic
        );
    }
    s
}

pub fn cmd_ablate(
    cfg: &RunConfig,
    training_modes: &[TrainingMode],
    prop_modes: &[PropagationMode],
    stdout: &mut dyn Write,
) -> Result<()> {
    let dataset = load_dataset(cfg.require_data()?)?;
    let cells = run_ablation(&dataset, cfg, training_modes, prop_modes)?;
    if let Some(out) = &cfg.out {
        create_dir(out)?;
        write_file(&out.join(ABLATION_FILE), to_json(&cells).as_bytes())?;
        write_file(&out.join(CONFIG_FILE), to_json(cfg).as_bytes())?;
    }
    write!(stdout, "{}", format_ablation(&cells)).map_err(out_err)
}

pub fn cmd_synth(cfg: &RunConfig, stdout: &mut dyn Write) -> Result<()> {
    let out = cfg.require_out()?;
    let dataset = generate_synthetic(&cfg.synth)?;
    save_dataset(&dataset, out)?;
    writeln!(
        stdout,
        "wrote {} images of {} classes to {}",
        dataset.num_samples(),
        dataset.num_classes(),
        out.display()
    )
    .map_err(out_err)
}

/// Class ids in scope, their propagated vectors, and the graph edges (local indices).
pub fn embeddings(
    ckpt: &Checkpoint,
    dataset: &Dataset,
    eval_cfg: &EvalConfig,
) -> Result<(Vec<usize>, crate::numerics::DenseMatrix, EdgeSet)> {
    ckpt.params.check_compatible(dataset.attr_dim(), dataset.image_dim())?;
    let classes: Vec<usize> = match eval_cfg.graph_scope {
        GraphScope::Unseen => dataset.unseen().to_vec(),
        GraphScope::All => (0..dataset.num_classes()).collect(),
    };
    if classes.is_empty() {
        return Err(ApnetError::EmptyInput("embedding class scope"));
    }
    let (xt, edges) = class_embeddings(&ckpt.params, dataset.attributes(), dataset.distances(), &classes, &eval_cfg.prop)?;
    let edges = match (edges, eval_cfg.prop.mode) {
        (Some(e), _) => e,
        (None, PropagationMode::FixedHop) => EdgeSet::complete(classes.len()),
        (None, _) => EdgeSet::self_loops(classes.len()),
    };
    Ok((classes, xt, edges))
}

pub fn cmd_dump_embeddings(cfg: &RunConfig, overrides: &Overrides, stdout: &mut dyn Write) -> Result<()> {
    let ckpt = Checkpoint::load(cfg.require_checkpoint()?)?;
    let dataset = load_dataset(cfg.require_data()?)?;
    let out = cfg.require_out()?;
    let eval_cfg = eval_config(&ckpt, cfg, overrides);
    let (classes, xt, edges) = embeddings(&ckpt, &dataset, &eval_cfg)?;

    let mut csv = String::from("class_id,split");
    for f in 0..xt.cols() {
        let _ = write!(csv, ",f{f}");
    }
    csv.push('\n');
    for (row, &c) in classes.iter().enumerate() {
        let split = if dataset.seen().contains(&c) { "seen" } else { "unseen" };
        let _ = write!(csv, "{c},{split}");
        for v in xt.row(row) {
            let _ = write!(csv, ",{v:?}");
        }
        csv.push('\n');
    }
    let mut edge_csv = String::from("source,target\n");
    for (y, z) in edges.pairs() {
        let _ = writeln!(edge_csv, "{},{}", classes[y], classes[z]);
    }
    create_dir(out)?;
    write_file(&out.join(EMBEDDINGS_FILE), csv.as_bytes())?;
    write_file(&out.join(EDGES_FILE), edge_csv.as_bytes())?;
    writeln!(
        stdout,
        "wrote {} class vectors and {} directed edges to {}",
        classes.len(),
        edges.pairs().len(),
        out.display()
    )
    .map_err(out_err)
}
