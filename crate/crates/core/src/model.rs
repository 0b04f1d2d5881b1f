//! The full network: one encoder per enabled view, per-view mask logits, and a
//! linear classifier over the concatenated view embeddings.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{threshold_with_guard, AugmentConfig, MaskNoise};
use crate::autodiff::{keep_probabilities, PairIndex, Tape, Var};
use crate::encoders::{
    encode_view, orphaned_nodes, Dropout, EncoderConfig, MaskInput, SharedInputs, StructToggles, ViewInputs,
    ViewOutput, ViewParams,
};
use crate::graph::{FeatureMatrix, Graph, LabeledSplit, ViewKind};
use crate::netcl::{total_loss, SampleSets, TotalLoss};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Matrix;
use crate::views::ViewSet;

/// Which views participate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewToggles {
    pub attribute: bool,
    pub local: bool,
    pub global: bool,
}

impl ViewToggles {
    pub const ALL: ViewToggles = ViewToggles {
        attribute: true,
        local: true,
        global: true,
    };

    pub fn enabled(&self, kind: ViewKind) -> bool {
        match kind {
            ViewKind::Attribute => self.attribute,
            ViewKind::Local => self.local,
            ViewKind::Global => self.global,
        }
    }

    pub fn set(&mut self, kind: ViewKind, on: bool) {
        match kind {
            ViewKind::Attribute => self.attribute = on,
            ViewKind::Local => self.local = on,
            ViewKind::Global => self.global = on,
        }
    }

    pub fn count(&self) -> usize {
        ViewKind::ALL.iter().filter(|&&k| self.enabled(k)).count()
    }
}

impl Default for ViewToggles {
    fn default() -> Self {
        Self::ALL
    }
}

/// Architecture choices that fix the parameter layout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub encoder: EncoderConfig,
    pub views: ViewToggles,
    pub augmentation: bool,
    pub augment: AugmentConfig,
    /// Structural encodings and biases on the local and global views.
    pub shygan: bool,
    pub structure: StructToggles,
    pub eta: f64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            encoder: EncoderConfig::default(),
            views: ViewToggles::ALL,
            augmentation: true,
            augment: AugmentConfig::default(),
            shygan: true,
            structure: StructToggles::ALL,
            eta: 0.5,
        }
    }
}

impl ModelSpec {
    pub fn view_toggles(&self, kind: ViewKind) -> StructToggles {
        if kind == ViewKind::Attribute || !self.shygan {
            StructToggles::NONE
        } else {
            self.structure
        }
    }
}

/// Constant tensors a forward pass reads.
pub struct ModelInputs {
    pub shared: SharedInputs,
    pub views: [Option<ViewInputs>; 3],
    pub pairs: Arc<PairIndex>,
    pub eta: f64,
    pub labels: Arc<Vec<usize>>,
    pub train: Arc<Vec<usize>>,
    pub num_classes: usize,
    pub num_nodes: usize,
}

impl ModelInputs {
    pub fn new(
        g: &Graph,
        x: &FeatureMatrix,
        views: &ViewSet,
        samples: &SampleSets,
        split: &LabeledSplit,
        spec: &ModelSpec,
    ) -> Self {
        let view_inputs = ViewKind::ALL.map(|k| {
            spec.views
                .enabled(k)
                .then(|| ViewInputs::new(g, views.get(k), spec.view_toggles(k), spec.encoder.bins))
        });
        ModelInputs {
            shared: SharedInputs::new(g, x),
            views: view_inputs,
            pairs: Arc::new(samples.pair_index()),
            eta: samples.eta,
            labels: Arc::new(split.labels.clone()),
            train: Arc::new(split.train.clone()),
            num_classes: split.num_classes,
            num_nodes: g.num_nodes(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaskParams {
    pub keep: ParamId,
    pub drop: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub store: ParamStore,
    pub spec: ModelSpec,
    pub views: [Option<ViewParams>; 3],
    pub masks: [Option<MaskParams>; 3],
    pub classifier_weight: ParamId,
    pub classifier_bias: ParamId,
}

/// Noise, hard mask and reference probabilities held fixed, so the loss is a
/// smooth function of every parameter including the mask logits.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenMask {
    pub noise: MaskNoise,
    pub hard: Vec<f64>,
    pub p_ref: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrozenState {
    pub masks: [Option<FrozenMask>; 3],
}

pub enum Mode<'a> {
    /// Fresh mask noise and attention dropout from the generator.
    Train(&'a mut ChaCha8Rng),
    /// Fixed mask state, no dropout.
    Frozen(&'a FrozenState),
    /// No noise, no dropout, no loss.
    Eval,
}

pub struct Forward {
    pub tape: Tape,
    pub param_vars: Vec<Var>,
    pub logits: Var,
    pub embeddings: [Option<Var>; 3],
    pub outputs: [Option<ViewOutput>; 3],
    pub mask_values: [Option<Var>; 3],
    pub loss: Option<TotalLoss>,
}

impl Forward {
    /// Backpropagates the total loss; returns one gradient per parameter
    /// (zeros where the loss does not depend on it).
    pub fn gradients(&mut self, store: &ParamStore) -> Vec<Matrix> {
        let loss = self.loss.as_ref().expect("forward ran without a loss").total;
        self.tape.backward(loss);
        self.param_vars
            .iter()
            .zip(store.values())
            .map(|(&v, m)| self.tape.grad(v).cloned().unwrap_or_else(|| Matrix::zeros(m.rows, m.cols)))
            .collect()
    }

    pub fn predictions(&self) -> Vec<usize> {
        let l = self.tape.value(self.logits);
        (0..l.rows)
            .map(|i| {
                let row = l.row(i);
                let mut best = 0;
                for (k, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = k;
                    }
                }
                best
            })
            .collect()
    }
}

impl Model {
    pub fn new(spec: ModelSpec, inputs: &ModelInputs, d_in: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let mut views: [Option<ViewParams>; 3] = [None, None, None];
        let mut masks: [Option<MaskParams>; 3] = [None, None, None];
        for kind in ViewKind::ALL {
            let Some(vi) = &inputs.views[kind.index()] else { continue };
            views[kind.index()] = Some(ViewParams::init(
                &mut store,
                kind.tag(),
                d_in,
                vi.inc.num_edges,
                spec.view_toggles(kind),
                &spec.encoder,
                &mut rng,
            ));
            if spec.augmentation {
                let n = vi.inc.nnz();
                masks[kind.index()] = Some(MaskParams {
                    keep: store.add(format!("{}.mask_keep", kind.tag()), Matrix::filled(n, 1, spec.augment.keep_init)),
                    drop: store.add(format!("{}.mask_drop", kind.tag()), Matrix::filled(n, 1, spec.augment.drop_init)),
                });
            }
        }
        let width = spec.encoder.d_hid * spec.views.count();
        let classifier_weight = store.add(
            "classifier.weight",
            Matrix::glorot(width, inputs.num_classes, &mut rng),
        );
        let classifier_bias = store.add("classifier.bias", Matrix::zeros(1, inputs.num_classes));
        Model {
            store,
            spec,
            views,
            masks,
            classifier_weight,
            classifier_bias,
        }
    }

    /// Draws and fixes the mask state at the current parameters.
    pub fn freeze(&self, inputs: &ModelInputs, seed: u64) -> FrozenState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let masks = ViewKind::ALL.map(|k| {
            let (mp, vi) = (self.masks[k.index()]?, inputs.views[k.index()].as_ref()?);
            let noise = MaskNoise::sample(vi.inc.nnz(), &mut rng);
            let keep = &self.store.get(mp.keep).data;
            let drop = &self.store.get(mp.drop).data;
            let p = keep_probabilities(keep, drop, &noise.keep, &noise.drop, self.spec.augment.tau);
            let (hard, _) = threshold_with_guard(&p, self.spec.augment.theta, &vi.inc);
            Some(FrozenMask {
                noise,
                hard: hard.iter().map(|&h| if h { 1.0 } else { 0.0 }).collect(),
                p_ref: p,
            })
        });
        FrozenState { masks }
    }

    pub fn forward(&self, inputs: &ModelInputs, mut mode: Mode) -> Forward {
        let mut tape = Tape::new();
        let param_vars: Vec<Var> = self.store.values().iter().map(|m| tape.param(m.clone())).collect();
        let enc = self.spec.encoder;
        let mut embeddings = [None, None, None];
        let mut outputs: [Option<ViewOutput>; 3] = [None, None, None];
        let mut mask_values = [None, None, None];
        for kind in ViewKind::ALL {
            let idx = kind.index();
            let (Some(vp), Some(vi)) = (&self.views[idx], &inputs.views[idx]) else { continue };
            let mask = self.masks[idx].map(|mp| {
                let keep = param_vars[mp.keep.0];
                let drop = param_vars[mp.drop.0];
                let tau = self.spec.augment.tau;
                let (hard, weights) = match &mut mode {
                    Mode::Frozen(state) => {
                        let f = state.masks[idx].as_ref().expect("frozen state covers every masked view");
                        let w = tape.straight_through(keep, drop, &f.noise.keep, &f.noise.drop, tau, &f.hard, Some(&f.p_ref));
                        (f.hard.iter().map(|&h| h > 0.5).collect::<Vec<bool>>(), w)
                    }
                    other => {
                        let n = vi.inc.nnz();
                        let noise = match other {
                            Mode::Train(rng) => MaskNoise::sample(n, &mut **rng),
                            _ => MaskNoise::zeros(n),
                        };
                        let p = keep_probabilities(
                            &tape.value(keep).data,
                            &tape.value(drop).data,
                            &noise.keep,
                            &noise.drop,
                            tau,
                        );
                        let (hard, _) = threshold_with_guard(&p, self.spec.augment.theta, &vi.inc);
                        let hard_f: Vec<f64> = hard.iter().map(|&h| if h { 1.0 } else { 0.0 }).collect();
                        let w = tape.straight_through(keep, drop, &noise.keep, &noise.drop, tau, &hard_f, None);
                        (hard, w)
                    }
                };
                mask_values[idx] = Some(weights);
                MaskInput {
                    weights,
                    fallback: Arc::new(orphaned_nodes(&vi.inc, Some(&hard))),
                }
            });
            let mut dropout = match &mut mode {
                Mode::Train(rng) => Dropout::new(enc.attn_dropout, &mut **rng),
                _ => Dropout::off(),
            };
            let out = encode_view(
                &mut tape,
                &param_vars,
                vp,
                vi,
                &inputs.shared,
                mask.as_ref(),
                &enc,
                &mut dropout,
            );
            embeddings[idx] = Some(out.z);
            outputs[idx] = Some(out);
        }
        let parts: Vec<Var> = embeddings.iter().flatten().copied().collect();
        let concat = tape.concat_cols(&parts);
        let logits = tape.matmul(concat, param_vars[self.classifier_weight.0]);
        let logits = tape.add_row(logits, param_vars[self.classifier_bias.0]);
        let loss = (!matches!(mode, Mode::Eval)).then(|| {
            let [a, l, g] = embeddings;
            total_loss(&mut tape, a, l, g, &inputs.pairs, inputs.eta, logits, &inputs.labels, &inputs.train)
        });
        Forward {
            tape,
            param_vars,
            logits,
            embeddings,
            outputs,
            mask_values,
            loss,
        }
    }

    /// Percentage of `nodes` classified correctly in evaluation mode.
    pub fn accuracy(&self, inputs: &ModelInputs, nodes: &[usize]) -> f64 {
        let fwd = self.forward(inputs, Mode::Eval);
        accuracy_of(&fwd.predictions(), &inputs.labels, nodes)
    }
}

pub fn accuracy_of(pred: &[usize], labels: &[usize], nodes: &[usize]) -> f64 {
    if nodes.is_empty() {
        return 0.0;
    }
    let correct = nodes.iter().filter(|&&v| pred[v] == labels[v]).count();
    100.0 * correct as f64 / nodes.len() as f64
}
