//! Optimization loop, evaluation, seed repetition, ablations and the
//! global-node sweep.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::data::Dataset;
use crate::encoders::{EncoderConfig, StructToggles};
use crate::error::{Error, Result};
use crate::graph::{split_nodes, LabeledSplit, ViewKind};
use crate::model::{Mode, Model, ModelInputs, ModelSpec, ViewToggles};
use crate::netcl::{LossComponents, NegativeStrategy, SampleSets};
use crate::params::ParamStore;
use crate::tensor::Matrix;
use crate::views::{build_views, AttributeViewConfig, GlobalViewConfig, ViewSet};

/// Every hyperparameter of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs_max: usize,
    pub patience: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub split: (f64, f64, f64),
    pub strategy: NegativeStrategy,
    pub t: usize,
    pub eta: f64,
    pub netcl: bool,
    pub views: ViewToggles,
    pub augmentation: bool,
    pub augment: AugmentConfig,
    pub encoder: EncoderConfig,
    pub shygan: bool,
    pub structure: StructToggles,
    pub attribute_view: AttributeViewConfig,
    pub global_view: GlobalViewConfig,
    /// Seed for view construction (k-means, community detection).
    pub view_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.001,
            epochs_max: 1500,
            patience: 100,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            split: (0.1, 0.1, 0.8),
            strategy: NegativeStrategy::Distance,
            t: 25,
            eta: 0.5,
            netcl: true,
            views: ViewToggles::ALL,
            augmentation: true,
            augment: AugmentConfig::default(),
            encoder: EncoderConfig::default(),
            shygan: true,
            structure: StructToggles::ALL,
            attribute_view: AttributeViewConfig::default(),
            global_view: GlobalViewConfig::default(),
            view_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [("lr", self.lr), ("eps", self.eps), ("eta", self.eta)];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0,1), got {v}")));
            }
        }
        if self.views.count() == 0 {
            return Err(Error::Config("at least one view must be enabled".into()));
        }
        self.augment.validate()?;
        self.encoder.validate()?;
        Ok(())
    }

    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec {
            encoder: self.encoder,
            views: self.views,
            augmentation: self.augmentation,
            augment: self.augment,
            shygan: self.shygan,
            structure: self.structure,
            eta: self.eta,
        }
    }
}

/// Views and contrastive samples, computed once per configuration.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub views: ViewSet,
    pub samples: SampleSets,
}

pub fn prepare(data: &Dataset, cfg: &TrainConfig) -> Result<Prepared> {
    cfg.validate()?;
    data.validate()?;
    let mut attr = cfg.attribute_view.clone();
    attr.seed = cfg.view_seed;
    let views = build_views(&data.graph, &data.features, &attr, &cfg.global_view, cfg.view_seed)?;
    let samples = if cfg.netcl {
        let enabled: Vec<_> = ViewKind::ALL
            .iter()
            .filter(|&&k| cfg.views.enabled(k))
            .map(|&k| views.get(k))
            .collect();
        SampleSets::build(&data.graph, &data.features, &enabled, cfg.strategy, cfg.t, cfg.eta)?
    } else {
        SampleSets::self_only(data.num_nodes(), cfg.eta)
    };
    Ok(Prepared { views, samples })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: LossComponents,
    pub val_accuracy: f64,
}

/// Outcome of training under one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub test_accuracy: f64,
    pub best_val_accuracy: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub curve: Vec<EpochRecord>,
    pub wall_clock_secs: f64,
}

/// Aggregate over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub label: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub accuracies: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub curves_path: Option<String>,
    pub wall_clock_secs: f64,
}

impl RunResult {
    pub fn from_runs(label: impl Into<String>, config_hash: &str, runs: &[SeedRun], wall: f64) -> Self {
        let accuracies: Vec<f64> = runs.iter().map(|r| r.test_accuracy).collect();
        let (mean, std) = mean_std(&accuracies);
        RunResult {
            label: label.into(),
            config_hash: config_hash.to_string(),
            seeds: runs.iter().map(|r| r.seed).collect(),
            accuracies,
            mean,
            std,
            curves_path: None,
            wall_clock_secs: wall,
        }
    }

    /// `mean±std` with two decimals.
    pub fn table_cell(&self) -> String {
        format!("{:.2}±{:.2}", self.mean, self.std)
    }
}

/// Mean and sample standard deviation (zero for fewer than two values).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros = |s: &ParamStore| s.values().iter().map(|m| Matrix::zeros(m.rows, m.cols)).collect();
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: zeros(store),
            v: zeros(store),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &[Matrix]) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let params = store.values_mut();
        params
            .par_iter_mut()
            .zip(self.m.par_iter_mut())
            .zip(self.v.par_iter_mut())
            .zip(grads.par_iter())
            .for_each(|(((p, m), v), g)| {
                for k in 0..p.data.len() {
                    let gk = g.data[k];
                    m.data[k] = b1 * m.data[k] + (1.0 - b1) * gk;
                    v.data[k] = b2 * v.data[k] + (1.0 - b2) * gk * gk;
                    let mh = m.data[k] / c1;
                    let vh = v.data[k] / c2;
                    p.data[k] -= lr * mh / (vh.sqrt() + eps);
                }
            });
    }
}

/// Trains `model` in place, keeping the parameters with the best validation
/// accuracy (the initial parameters count as epoch 0).
pub fn train(model: &mut Model, inputs: &ModelInputs, split: &LabeledSplit, cfg: &TrainConfig, seed: u64) -> Result<SeedRun> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut adam = Adam::new(&model.store, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);
    let mut best_val = model.accuracy(inputs, &split.val);
    let mut best_store = model.store.clone();
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut curve = Vec::new();
    let mut epochs_run = 0;
    for epoch in 1..=cfg.epochs_max {
        let mut fwd = model.forward(inputs, Mode::Train(&mut rng));
        let loss = fwd.loss.as_ref().expect("training forward computes a loss").components(&fwd.tape);
        if !loss.total.is_finite() {
            return Err(Error::Diverged {
                epoch,
                diagnostic: loss.to_string(),
            });
        }
        let grads = fwd.gradients(&model.store);
        drop(fwd);
        adam.step(&mut model.store, &grads);
        if !model.store.is_finite() {
            return Err(Error::Diverged {
                epoch,
                diagnostic: format!("non-finite parameters after update; {loss}"),
            });
        }
        epochs_run = epoch;
        let val = model.accuracy(inputs, &split.val);
        curve.push(EpochRecord {
            epoch,
            loss,
            val_accuracy: val,
        });
        if val > best_val {
            best_val = val;
            best_store = model.store.clone();
            best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                log::debug!("seed {seed}: early stop at epoch {epoch} (best {best_epoch})");
                break;
            }
        }
    }
    model.store = best_store;
    let test = model.accuracy(inputs, &split.test);
    Ok(SeedRun {
        seed,
        test_accuracy: test,
        best_val_accuracy: best_val,
        best_epoch,
        epochs_run,
        curve,
        wall_clock_secs: start.elapsed().as_secs_f64(),
    })
}

/// Accuracy of `model` on `nodes` with noise-free augmentation.
pub fn evaluate(model: &Model, inputs: &ModelInputs, nodes: &[usize]) -> f64 {
    model.accuracy(inputs, nodes)
}

/// Split, initialize and train under one seed.
pub fn run_seed(data: &Dataset, prepared: &Prepared, cfg: &TrainConfig, seed: u64) -> Result<(Model, SeedRun)> {
    let split = split_nodes(&data.labels, cfg.split, seed)?;
    let spec = cfg.model_spec();
    let inputs = ModelInputs::new(&data.graph, &data.features, &prepared.views, &prepared.samples, &split, &spec);
    let mut model = Model::new(spec, &inputs, data.features.dim(), seed);
    let run = train(&mut model, &inputs, &split, cfg, seed)?;
    Ok((model, run))
}

/// Trains every seed (in parallel) and aggregates. Also returns the model of
/// the seed with the best validation accuracy.
pub fn run_seeds(
    data: &Dataset,
    prepared: &Prepared,
    cfg: &TrainConfig,
    seeds: &[u64],
    label: &str,
    config_hash: &str,
) -> Result<(RunResult, Vec<SeedRun>, Option<Model>)> {
    let start = Instant::now();
    let outcomes: Vec<Result<(Model, SeedRun)>> = seeds.par_iter().map(|&s| run_seed(data, prepared, cfg, s)).collect();
    let mut runs = Vec::with_capacity(seeds.len());
    let mut best: Option<(f64, Model)> = None;
    for o in outcomes {
        let (model, run) = o?;
        if best.as_ref().is_none_or(|(v, _)| run.best_val_accuracy > *v) {
            best = Some((run.best_val_accuracy, model));
        }
        runs.push(run);
    }
    let result = RunResult::from_runs(label, config_hash, &runs, start.elapsed().as_secs_f64());
    Ok((result, runs, best.map(|(_, m)| m)))
}

/// One switchable piece of the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Component {
    AttributeView,
    LocalView,
    GlobalView,
    Augmentation,
    NetCl,
    ShyGan,
    Lce,
    Ce,
    De,
    Lc,
    Hd,
}

impl Component {
    pub const ALL: [Component; 11] = [
        Component::AttributeView,
        Component::LocalView,
        Component::GlobalView,
        Component::Augmentation,
        Component::NetCl,
        Component::ShyGan,
        Component::Lce,
        Component::Ce,
        Component::De,
        Component::Lc,
        Component::Hd,
    ];

    /// The six rows of the component table: three views plus augmentation,
    /// NetCL and the structural encoder.
    pub const MAIN: [Component; 6] = [
        Component::AttributeView,
        Component::LocalView,
        Component::GlobalView,
        Component::Augmentation,
        Component::NetCl,
        Component::ShyGan,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Component::AttributeView => "H^a",
            Component::LocalView => "H^l",
            Component::GlobalView => "H^g",
            Component::Augmentation => "Augmentation",
            Component::NetCl => "NetCL",
            Component::ShyGan => "SHyGAN",
            Component::Lce => "lce",
            Component::Ce => "ce",
            Component::De => "de",
            Component::Lc => "lc",
            Component::Hd => "hd",
        }
    }

    /// Returns `base` with exactly this component switched off.
    pub fn disable(self, base: &TrainConfig) -> TrainConfig {
        let mut cfg = base.clone();
        match self {
            Component::AttributeView => cfg.views.set(ViewKind::Attribute, false),
            Component::LocalView => cfg.views.set(ViewKind::Local, false),
            Component::GlobalView => cfg.views.set(ViewKind::Global, false),
            Component::Augmentation => cfg.augmentation = false,
            Component::NetCl => cfg.netcl = false,
            Component::ShyGan => cfg.shygan = false,
            Component::Lce => cfg.structure.lce = false,
            Component::Ce => cfg.structure.ce = false,
            Component::De => cfg.structure.de = false,
            Component::Lc => cfg.structure.lc = false,
            Component::Hd => cfg.structure.hd = false,
        }
        cfg
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Component {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace(['^', '_', '-'], "");
        let c = match key.as_str() {
            "ha" | "attribute" => Component::AttributeView,
            "hl" | "local" => Component::LocalView,
            "hg" | "global" => Component::GlobalView,
            "augmentation" | "aug" => Component::Augmentation,
            "netcl" => Component::NetCl,
            "shygan" => Component::ShyGan,
            "lce" => Component::Lce,
            "ce" => Component::Ce,
            "de" => Component::De,
            "lc" => Component::Lc,
            "hd" => Component::Hd,
            _ => {
                return Err(Error::Config(format!(
                    "unknown component '{s}' (expected one of {})",
                    Component::ALL.map(|c| c.name()).join(", ")
                )))
            }
        };
        Ok(c)
    }
}

/// Reruns training over `seeds` with one component disabled.
pub fn run_ablation(
    data: &Dataset,
    base: &TrainConfig,
    component: Component,
    seeds: &[u64],
    config_hash: &str,
) -> Result<RunResult> {
    let cfg = component.disable(base);
    let prepared = prepare(data, &cfg)?;
    let label = format!("w/o {}", component.name());
    Ok(run_seeds(data, &prepared, &cfg, seeds, &label, config_hash)?.0)
}

/// One result per global-node count, rebuilding the global view each time.
pub fn sweep_global_nodes(
    data: &Dataset,
    base: &TrainConfig,
    n_g_values: &[usize],
    seeds: &[u64],
    config_hash: &str,
) -> Result<Vec<(usize, RunResult)>> {
    n_g_values
        .iter()
        .map(|&n_g| {
            let mut cfg = base.clone();
            cfg.global_view.n_g = n_g;
            let prepared = prepare(data, &cfg)?;
            let label = format!("n_g={n_g}");
            Ok((n_g, run_seeds(data, &prepared, &cfg, seeds, &label, config_hash)?.0))
        })
        .collect()
}

/// Reference classifier: the same linear head trained on raw features alone.
pub fn linear_probe(data: &Dataset, split: &LabeledSplit, lr: f64, epochs: usize) -> f64 {
    use crate::autodiff::Tape;
    use std::sync::Arc;
    let d = data.features.dim();
    let c = split.num_classes;
    let x = Matrix::from_vec(data.num_nodes(), d, data.features.values().to_vec());
    let mut store = ParamStore::new();
    let w = store.add("w", Matrix::zeros(d, c));
    let b = store.add("b", Matrix::zeros(1, c));
    let mut adam = Adam::new(&store, lr, 0.9, 0.999, 1e-8);
    let labels = Arc::new(split.labels.clone());
    let train = Arc::new(split.train.clone());
    let logits_of = |store: &ParamStore, tape: &mut Tape| {
        let xv = tape.constant(x.clone());
        let wv = tape.param(store.get(w).clone());
        let bv = tape.param(store.get(b).clone());
        let l = tape.matmul(xv, wv);
        (tape.add_row(l, bv), wv, bv)
    };
    for _ in 0..epochs {
        let mut tape = Tape::new();
        let (l, wv, bv) = logits_of(&store, &mut tape);
        let loss = tape.cross_entropy(l, labels.clone(), train.clone());
        tape.backward(loss);
        let grads = vec![tape.grad(wv).unwrap().clone(), tape.grad(bv).unwrap().clone()];
        adam.step(&mut store, &grads);
    }
    let mut tape = Tape::new();
    let (l, _, _) = logits_of(&store, &mut tape);
    let logits = tape.value(l);
    let pred: Vec<usize> = (0..logits.rows)
        .map(|i| {
            let row = logits.row(i);
            (0..c).fold(0, |best, k| if row[k] > row[best] { k } else { best })
        })
        .collect();
    crate::model::accuracy_of(&pred, &split.labels, &split.test)
}
