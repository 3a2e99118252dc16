use std::fs::{self, File, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::buckets::{bucket_report, BucketReport};
use super::eval::{evaluate, Scores};
use crate::error::{Error, Result};
use crate::hetgraph::{HetGraph, Split};
use crate::homophily::{BucketScheme, LocalKind};
use crate::metapath::{enumerate_length2, sample_mask, sample_negatives, GraphView, MaskPlan, Metapath};
use crate::model::{
    classification_loss, correlation_loss, forward, reconstruction_loss, sample_label_mask, save_params, total_loss,
    ModelConfig, ModelParams,
};
use crate::numcore::{AdamConfig, ParamStore, Tape, Tensor};

pub const CONFIG_FILE: &str = "config.json";
pub const PARAMS_FILE: &str = "params.bin";
pub const CURVES_FILE: &str = "curves.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const BUCKETS_FILE: &str = "buckets.csv";
pub const LOCK_FILE: &str = ".lock";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainRunConfig {
    pub model: ModelConfig,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Validation every this many epochs; 0 disables validation.
    pub eval_every: usize,
    /// Evaluations without a strict validation improvement before stopping;
    /// 0 disables early stopping.
    pub patience: usize,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        TrainRunConfig {
            model: ModelConfig::default(),
            lr: 0.003,
            epochs: 500,
            seed: 0,
            eval_every: 1,
            patience: 50,
        }
    }
}

impl TrainRunConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::InvalidArgument(format!("lr must be positive, got {}", self.lr)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_cls: f64,
    pub l_corr: f64,
    pub l_rec: f64,
    pub j: f64,
    pub val_micro_f1: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinalMetrics {
    pub epochs_run: usize,
    /// Epoch whose parameters were kept (0 = initialisation).
    pub best_epoch: usize,
    pub best_val_micro_f1: Option<f64>,
    pub stopped_early: bool,
    pub train: Option<Scores>,
    pub val: Option<Scores>,
    pub test: Option<Scores>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub curves: Vec<EpochRecord>,
    /// `n_target x C` logits of the final full-graph pass with all training labels.
    pub logits: Tensor,
    pub metrics: FinalMetrics,
}

/// Independent deterministic random streams of one run.
struct Streams {
    mask: ChaCha8Rng,
    negatives: ChaCha8Rng,
    labels: ChaCha8Rng,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

impl Streams {
    fn new(seed: u64) -> Self {
        Streams {
            mask: stream(seed, 1),
            negatives: stream(seed, 2),
            labels: stream(seed, 3),
        }
    }
}

/// Full-graph logits with every training label injected.
pub fn infer(g: &HetGraph, params: &ModelParams, cfg: &ModelConfig) -> Result<Tensor> {
    let mask = sample_label_mask(g, 0.0, &mut ChaCha8Rng::seed_from_u64(0))?;
    let mut tape = Tape::new();
    let out = forward(g, &GraphView::full(g), &mask.rows, params, cfg, &mut tape)?;
    Ok(tape.value(out.logits).clone())
}

fn split_scores(g: &HetGraph, logits: &Tensor, split: Split) -> Result<Option<Scores>> {
    let nodes = g.splits.nodes(split);
    if nodes.is_empty() {
        return Ok(None);
    }
    evaluate(logits, &g.labels, &nodes).map(Some)
}

/// One epoch's losses recorded on `tape`.
pub struct StepLosses {
    pub cls: crate::numcore::Var,
    pub corr: crate::numcore::Var,
    pub rec: crate::numcore::Var,
    pub total: crate::numcore::Var,
}

/// Records the full objective for one sampled mask and label mask.
pub fn objective(
    g: &HetGraph,
    plan: &MaskPlan,
    label_rows: &Tensor,
    cls_nodes: &[usize],
    params: &ModelParams,
    cfg: &ModelConfig,
    tape: &mut Tape,
) -> Result<StepLosses> {
    let out = forward(g, &plan.visible, label_rows, params, cfg, tape)?;
    let cls = classification_loss(tape, g, out.logits, cls_nodes, cfg.multilabel)?;
    let corr = correlation_loss(tape, out.homo[out.target], out.hetero[out.target], cfg.corr_reduction)?;
    let rec = if cfg.beta > 0.0 {
        reconstruction_loss(
            tape,
            g,
            &out,
            params,
            &plan.rho_plus,
            &plan.rho_minus,
            cfg.contrastive_completion,
        )?
    } else {
        tape.constant(Tensor::zeros((1, 1)))
    };
    let total = total_loss(tape, cls, corr, rec, cfg.alpha, cfg.beta)?;
    Ok(StepLosses { cls, corr, rec, total })
}

/// Samples one structure mask with negatives. Without reconstruction
/// (`beta = 0`) or metapaths the full graph is used.
pub fn sample_plan(
    g: &HetGraph,
    paths: &[Metapath],
    cfg: &ModelConfig,
    seed: u64,
    mask_rng: &mut ChaCha8Rng,
    neg_rng: &mut ChaCha8Rng,
) -> Result<MaskPlan> {
    if cfg.beta == 0.0 || paths.is_empty() {
        return Ok(MaskPlan::unmasked(g, seed));
    }
    let mut plan = sample_mask(g, paths, cfg.edge_mask_ratio, cfg.walk_len, seed, mask_rng)?;
    let want = plan.rho_plus.len() * cfg.negatives_per_positive;
    plan.rho_minus = sample_negatives(g, paths, want, neg_rng);
    Ok(plan)
}

/// Error raised when training diverges; carries the last good state.
#[derive(Debug)]
pub struct Diverged {
    pub epoch: usize,
    pub store: ParamStore,
    pub curves: Vec<EpochRecord>,
    pub cause: Error,
}

/// Losses of one optimisation step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub l_cls: f64,
    pub l_corr: f64,
    pub l_rec: f64,
    pub j: f64,
}

/// Stepwise optimiser state for one run.
pub struct Trainer<'g> {
    g: &'g HetGraph,
    cfg: TrainRunConfig,
    pub params: ModelParams,
    paths: Vec<Metapath>,
    train_nodes: Vec<usize>,
    streams: Streams,
    adam: AdamConfig,
    fixed_plan: Option<MaskPlan>,
    epoch: usize,
}

impl<'g> Trainer<'g> {
    pub fn new(g: &'g HetGraph, cfg: &TrainRunConfig) -> Result<Self> {
        cfg.validate()?;
        let mc = &cfg.model;
        let train_nodes = g.splits.nodes(Split::Train);
        if train_nodes.is_empty() {
            return Err(Error::Data("training split is empty".into()));
        }
        let paths = if mc.beta > 0.0 {
            enumerate_length2(g, &g.labels.target_type)?
        } else {
            Vec::new()
        };
        if mc.beta > 0.0 && paths.is_empty() {
            log::warn!(
                "no length-2 metapath starts at {}; reconstruction is disabled",
                g.labels.target_type
            );
        }
        let params = ModelParams::init(g, mc, &mut stream(cfg.seed, 0))?;
        Ok(Trainer {
            g,
            cfg: cfg.clone(),
            params,
            paths,
            train_nodes,
            streams: Streams::new(cfg.seed),
            adam: AdamConfig {
                lr: cfg.lr,
                ..Default::default()
            },
            fixed_plan: None,
            epoch: 0,
        })
    }

    /// Completed optimisation steps.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn config(&self) -> &TrainRunConfig {
        &self.cfg
    }

    /// Draws this epoch's structure mask (reused when `mask_once`).
    fn next_plan(&mut self) -> Result<MaskPlan> {
        let mc = &self.cfg.model;
        if mc.mask_once {
            if let Some(p) = &self.fixed_plan {
                return Ok(p.clone());
            }
        }
        let p = sample_plan(
            self.g,
            &self.paths,
            mc,
            self.cfg.seed,
            &mut self.streams.mask,
            &mut self.streams.negatives,
        )?;
        if mc.mask_once {
            self.fixed_plan = Some(p.clone());
        }
        Ok(p)
    }

    /// One epoch: resample masks, forward on the visible graph, backward, Adam.
    /// On error no parameter has changed.
    pub fn step(&mut self) -> Result<StepRecord> {
        let plan = self.next_plan()?;
        let mc = &self.cfg.model;
        let mask = sample_label_mask(self.g, mc.label_mask_p, &mut self.streams.labels)?;
        let withheld: Vec<usize> = if mc.mask_loss_only {
            self.train_nodes.iter().copied().filter(|&u| !mask.kept[u]).collect()
        } else {
            Vec::new()
        };
        let cls_nodes = if withheld.is_empty() {
            if mc.mask_loss_only {
                log::debug!(
                    "epoch {}: every training label kept; loss over all training nodes",
                    self.epoch + 1
                );
            }
            &self.train_nodes
        } else {
            &withheld
        };

        let mut tape = Tape::new();
        let losses = objective(self.g, &plan, &mask.rows, cls_nodes, &self.params, mc, &mut tape)?;
        let grads = tape.backward(losses.total);
        self.params.store.zero_grad();
        tape.accumulate_param_grads(&grads, &mut self.params.store);
        self.params.store.adam_step(&self.adam)?;
        self.epoch += 1;
        Ok(StepRecord {
            l_cls: tape.scalar(losses.cls),
            l_corr: tape.scalar(losses.corr),
            l_rec: tape.scalar(losses.rec),
            j: tape.scalar(losses.total),
        })
    }

    /// Full-graph logits of the current parameters with all training labels.
    pub fn infer(&self) -> Result<Tensor> {
        infer(self.g, &self.params, &self.cfg.model)
    }
}

/// Trains in memory with early stopping on validation Micro-F1 and restores
/// the best parameters. On divergence returns the last good parameters.
pub fn train_model(g: &HetGraph, cfg: &TrainRunConfig) -> std::result::Result<TrainOutcome, Box<Diverged>> {
    let fail = |cause: Error| {
        Box::new(Diverged {
            epoch: 0,
            store: ParamStore::new(),
            curves: Vec::new(),
            cause,
        })
    };
    let mut trainer = Trainer::new(g, cfg).map_err(fail)?;
    let val_nodes = g.splits.nodes(Split::Val);
    let validating = cfg.eval_every > 0 && !val_nodes.is_empty();
    let val_f1 = |t: &Trainer| -> Result<f64> { Ok(evaluate(&t.infer()?, &g.labels, &val_nodes)?.micro_f1) };

    let mut best_store = trainer.params.store.clone();
    let mut best_epoch = 0;
    let mut best_val = if validating {
        Some(val_f1(&trainer).map_err(fail)?)
    } else {
        None
    };
    let mut since_best = 0;
    let mut stopped_early = false;
    let mut curves: Vec<EpochRecord> = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let diverged = |cause: Error, t: &Trainer, curves: &[EpochRecord]| {
            Box::new(Diverged {
                epoch,
                store: t.params.store.clone(),
                curves: curves.to_vec(),
                cause,
            })
        };
        let s = trainer.step().map_err(|e| diverged(e, &trainer, &curves))?;
        let val = if validating && epoch % cfg.eval_every == 0 {
            Some(val_f1(&trainer).map_err(|e| diverged(e, &trainer, &curves))?)
        } else {
            None
        };
        log::debug!(
            "epoch {epoch}: J={:.6} cls={:.6} corr={:.6} rec={:.6} val={val:?}",
            s.j,
            s.l_cls,
            s.l_corr,
            s.l_rec
        );
        curves.push(EpochRecord {
            epoch,
            l_cls: s.l_cls,
            l_corr: s.l_corr,
            l_rec: s.l_rec,
            j: s.j,
            val_micro_f1: val,
        });

        if let Some(v) = val {
            if best_val.is_none_or(|b| v > b) {
                best_val = Some(v);
                best_store = trainer.params.store.clone();
                best_epoch = epoch;
                since_best = 0;
            } else {
                since_best += 1;
                if cfg.patience > 0 && since_best >= cfg.patience {
                    stopped_early = true;
                    log::info!("early stop at epoch {epoch}; best validation at epoch {best_epoch}");
                    break;
                }
            }
        }
    }

    let mut params = trainer.params;
    if validating {
        params.store = best_store;
    } else {
        best_epoch = curves.len();
    }
    let logits = infer(g, &params, &cfg.model).map_err(fail)?;
    let metrics = FinalMetrics {
        epochs_run: curves.len(),
        best_epoch,
        best_val_micro_f1: best_val,
        stopped_early,
        train: split_scores(g, &logits, Split::Train).map_err(fail)?,
        val: split_scores(g, &logits, Split::Val).map_err(fail)?,
        test: split_scores(g, &logits, Split::Test).map_err(fail)?,
    };
    Ok(TrainOutcome {
        params,
        curves,
        logits,
        metrics,
    })
}

/// Formats a float with 17 significant digits.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn curves_csv(curves: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,L_cls,L_corr,L_rec,J,val_micro_f1\n");
    for r in curves {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.epoch,
            fmt_float(r.l_cls),
            fmt_float(r.l_corr),
            fmt_float(r.l_rec),
            fmt_float(r.j),
            r.val_micro_f1.map(fmt_float).unwrap_or_default()
        ));
    }
    s
}

/// Exclusive claim on a run directory, released on drop.
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(DirLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Data(format!(
                "{} is locked by another run (remove {} if stale)",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(contents).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let s = serde_json::to_string_pretty(value).expect("serialisable") + "\n";
    write_file(path, s.as_bytes())
}

/// Trains and writes the run directory: config, checkpoint, curves, metrics
/// and an MLH-local bucket report over the test split.
pub fn train(g: &HetGraph, cfg: &TrainRunConfig, out_dir: impl AsRef<Path>) -> Result<TrainOutcome> {
    let dir = out_dir.as_ref();
    let _lock = DirLock::acquire(dir)?;
    write_json(&dir.join(CONFIG_FILE), cfg)?;
    match train_model(g, cfg) {
        Ok(outcome) => {
            save_params(&outcome.params.store, dir.join(PARAMS_FILE))?;
            write_file(&dir.join(CURVES_FILE), curves_csv(&outcome.curves).as_bytes())?;
            write_json(&dir.join(METRICS_FILE), &outcome.metrics)?;
            if !g.splits.nodes(Split::Test).is_empty() {
                let report = bucket_report(
                    g,
                    &outcome.logits,
                    LocalKind::LabelHomophily,
                    &BucketScheme::Quantiles(5),
                )?;
                write_file(&dir.join(BUCKETS_FILE), report.to_csv().as_bytes())?;
            }
            Ok(outcome)
        }
        Err(d) => {
            if !d.store.is_empty() {
                save_params(&d.store, dir.join(PARAMS_FILE))?;
                write_file(&dir.join(CURVES_FILE), curves_csv(&d.curves).as_bytes())?;
                log::error!("training diverged at epoch {}; last good parameters saved", d.epoch);
            }
            Err(d.cause)
        }
    }
}

/// Reloads a run's configuration and parameters.
pub fn load_run(g: &HetGraph, dir: impl AsRef<Path>) -> Result<(TrainRunConfig, ModelParams)> {
    let dir = dir.as_ref();
    let cfg_path = dir.join(CONFIG_FILE);
    let text = fs::read_to_string(&cfg_path).map_err(|e| Error::io(&cfg_path, e))?;
    let cfg: TrainRunConfig = serde_json::from_str(&text).map_err(|e| Error::Manifest {
        path: cfg_path.clone(),
        source: e,
    })?;
    let mut params = ModelParams::init(g, &cfg.model, &mut stream(cfg.seed, 0))?;
    crate::model::load_params(&mut params.store, dir.join(PARAMS_FILE))?;
    Ok((cfg, params))
}

/// Bucket report of a saved run over its test split, also written to
/// `buckets.csv` in the run directory.
pub fn bucket_report_for_run(
    g: &HetGraph,
    dir: impl AsRef<Path>,
    kind: LocalKind,
    scheme: &BucketScheme,
) -> Result<BucketReport> {
    let dir = dir.as_ref();
    let (cfg, params) = load_run(g, dir)?;
    let logits = infer(g, &params, &cfg.model)?;
    let report = bucket_report(g, &logits, kind, scheme)?;
    write_file(&dir.join(BUCKETS_FILE), report.to_csv().as_bytes())?;
    Ok(report)
}
