//! Two-level hypergraph attention encoders. The plain variant serves the
//! attribute view; the structural variant adds graph-derived node encodings
//! and additive attention biases for the local and global views.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{IncidenceIndex, Side, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::{FeatureMatrix, Graph, Hypergraph};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Csr, Matrix, SparseOperand};
use crate::views::closeness_centrality;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub d_model: usize,
    pub d_hid: usize,
    pub heads: usize,
    pub slope: f64,
    pub attn_dropout: f64,
    pub bins: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            d_model: 64,
            d_hid: 64,
            heads: 2,
            slope: 0.01,
            attn_dropout: 0.1,
            bins: 64,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.d_hid == 0 || self.heads == 0 || self.bins == 0 {
            return Err(Error::Config(
                "d_model, d_hid, heads and bins must all be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.attn_dropout) {
            return Err(Error::Config(format!(
                "attention dropout must lie in [0,1), got {}",
                self.attn_dropout
            )));
        }
        if !(self.slope.is_finite() && self.slope >= 0.0) {
            return Err(Error::Config(format!("LeakyReLU slope must be >= 0, got {}", self.slope)));
        }
        Ok(())
    }

    fn score_scale(&self) -> f64 {
        1.0 / (self.d_hid as f64).sqrt()
    }
}

/// Which structural pieces a structure-view encoder uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructToggles {
    pub lce: bool,
    pub ce: bool,
    pub de: bool,
    pub lc: bool,
    pub hd: bool,
}

impl StructToggles {
    pub const ALL: StructToggles = StructToggles {
        lce: true,
        ce: true,
        de: true,
        lc: true,
        hd: true,
    };
    pub const NONE: StructToggles = StructToggles {
        lce: false,
        ce: false,
        de: false,
        lc: false,
        hd: false,
    };
}

impl Default for StructToggles {
    fn default() -> Self {
        Self::ALL
    }
}

/// Parameter handles for one head: `w[0]` is W1 … `w[5]` is W6.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadParams {
    pub w: [ParamId; 6],
}

/// Parameter handles of one view encoder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ViewParams {
    pub input_proj: ParamId,
    pub edge_embed: ParamId,
    pub heads: Vec<HeadParams>,
    pub gcn: Option<(ParamId, ParamId)>,
    pub psi: Option<ParamId>,
    pub zeta: Option<ParamId>,
    pub toggles: StructToggles,
}

impl ViewParams {
    /// Registers Glorot-initialized tensors under `prefix`.
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        d_in: usize,
        num_edges: usize,
        toggles: StructToggles,
        cfg: &EncoderConfig,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let (dm, dh) = (cfg.d_model, cfg.d_hid);
        let input_proj = store.add(format!("{prefix}.input_proj"), Matrix::glorot(d_in, dm, rng));
        let edge_embed = store.add(format!("{prefix}.edge_embed"), Matrix::glorot(num_edges, dm, rng));
        let heads = (0..cfg.heads)
            .map(|h| {
                let shapes = [(dm, dh), (dm, dh), (dm, dh), (dh, dh), (dh, dh), (dm, dh)];
                let w = std::array::from_fn(|k| {
                    let (r, c) = shapes[k];
                    store.add(format!("{prefix}.head{h}.w{}", k + 1), Matrix::glorot(r, c, rng))
                });
                HeadParams { w }
            })
            .collect();
        let gcn = toggles.lce.then(|| {
            (
                store.add(format!("{prefix}.gcn1"), Matrix::glorot(d_in, dm, rng)),
                store.add(format!("{prefix}.gcn2"), Matrix::glorot(dm, dm, rng)),
            )
        });
        let psi = toggles
            .ce
            .then(|| store.add(format!("{prefix}.psi"), Matrix::glorot(cfg.bins, dm, rng)));
        let zeta = toggles
            .de
            .then(|| store.add(format!("{prefix}.zeta"), Matrix::glorot(cfg.bins, dm, rng)));
        ViewParams {
            input_proj,
            edge_embed,
            heads,
            gcn,
            psi,
            zeta,
            toggles,
        }
    }
}

/// Constant, per-view inputs derived from the un-augmented hypergraph.
#[derive(Debug, Clone)]
pub struct ViewInputs {
    pub inc: Arc<IncidenceIndex>,
    /// Clustering bias per incidence position.
    pub lc: Option<Vec<f64>>,
    /// Density of the owning hyperedge per incidence position.
    pub hd: Option<Vec<f64>>,
    pub centrality_bins: Option<Arc<Vec<usize>>>,
    pub distinct_bins: Option<Arc<Vec<usize>>>,
}

impl ViewInputs {
    pub fn new(g: &Graph, h: &Hypergraph, toggles: StructToggles, bins: usize) -> Self {
        let inc = Arc::new(IncidenceIndex::new(h.num_nodes(), h.hyperedges()));
        let lc = toggles
            .lc
            .then(|| clustering_bias(g, h).into_iter().flatten().collect());
        let hd = toggles.hd.then(|| {
            let d = density_bias(h);
            inc.edge_of.iter().map(|&j| d[j]).collect()
        });
        let centrality_bins = toggles
            .ce
            .then(|| Arc::new(score_bins(&closeness_centrality(g), bins)));
        let distinct_bins = toggles
            .de
            .then(|| Arc::new(score_bins(&distinctiveness(h), bins)));
        ViewInputs {
            inc,
            lc,
            hd,
            centrality_bins,
            distinct_bins,
        }
    }
}

/// Inputs shared by all views.
#[derive(Debug, Clone)]
pub struct SharedInputs {
    pub features: Arc<SparseOperand>,
    pub adj_norm: Arc<SparseOperand>,
}

impl SharedInputs {
    pub fn new(g: &Graph, x: &FeatureMatrix) -> Self {
        SharedInputs {
            features: Arc::new(SparseOperand::new(Csr::from_features(x))),
            adj_norm: Arc::new(SparseOperand::new(normalized_adjacency(g))),
        }
    }
}

/// `D^-1/2 (A + I) D^-1/2` with edge weights.
pub fn normalized_adjacency(g: &Graph) -> Csr {
    let n = g.num_nodes();
    let deg: Vec<f64> = (0..n)
        .map(|v| 1.0 + g.neighbor_weights(v).iter().sum::<f64>())
        .collect();
    let mut trip = Vec::with_capacity(n + 2 * g.num_edges());
    for v in 0..n {
        trip.push((v, v, 1.0 / deg[v]));
        for (&u, &w) in g.neighbors(v).iter().zip(g.neighbor_weights(v)) {
            trip.push((v, u, w / (deg[v] * deg[u]).sqrt()));
        }
    }
    Csr::from_triplets(n, n, trip)
}

/// Local clustering coefficient of every member inside the subgraph its
/// hyperedge induces, aligned with `h.hyperedges()`.
pub fn clustering_bias(g: &Graph, h: &Hypergraph) -> Vec<Vec<f64>> {
    use rayon::prelude::*;
    h.hyperedges()
        .par_iter()
        .map(|e| {
            e.iter()
                .map(|&i| {
                    let inside: Vec<usize> = g
                        .neighbors(i)
                        .iter()
                        .copied()
                        .filter(|u| e.binary_search(u).is_ok())
                        .collect();
                    let deg = inside.len();
                    if deg <= 1 {
                        return 0.0;
                    }
                    let mut links = 0usize;
                    for (a, &u) in inside.iter().enumerate() {
                        for &w in &inside[a + 1..] {
                            if g.has_edge(u, w) {
                                links += 1;
                            }
                        }
                    }
                    2.0 * links as f64 / (deg * (deg - 1)) as f64
                })
                .collect()
        })
        .collect()
}

/// Hyperedge size over node count.
pub fn density_bias(h: &Hypergraph) -> Vec<f64> {
    let n = h.num_nodes() as f64;
    h.hyperedges().iter().map(|e| e.len() as f64 / n).collect()
}

/// `1 - |E_v| / |E|` per node.
pub fn distinctiveness(h: &Hypergraph) -> Vec<f64> {
    let m = h.num_hyperedges();
    (0..h.num_nodes())
        .map(|v| {
            if m == 0 {
                1.0
            } else {
                1.0 - h.memberships(v).len() as f64 / m as f64
            }
        })
        .collect()
}

/// Min-max normalizes then assigns each score to one of `bins` equal-width
/// bins over [0,1]; 1.0 lands in the last bin.
pub fn score_bins(scores: &[f64], bins: usize) -> Vec<usize> {
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    scores
        .iter()
        .map(|&s| {
            let t = if span > 0.0 { (s - lo) / span } else { 0.0 };
            ((t * bins as f64).floor() as usize).min(bins - 1)
        })
        .collect()
}

/// Attention-coefficient dropout; inactive without an RNG.
pub struct Dropout<'a> {
    pub rate: f64,
    pub rng: Option<&'a mut ChaCha8Rng>,
}

impl<'a> Dropout<'a> {
    pub fn off() -> Self {
        Dropout { rate: 0.0, rng: None }
    }

    pub fn new(rate: f64, rng: &'a mut ChaCha8Rng) -> Self {
        Dropout { rate, rng: Some(rng) }
    }

    pub fn apply(&mut self, tape: &mut Tape, v: Var) -> Var {
        match self.rng.as_deref_mut() {
            Some(rng) if self.rate > 0.0 => {
                let keep = 1.0 / (1.0 - self.rate);
                let len = tape.value(v).data.len();
                let mask: Vec<f64> = (0..len)
                    .map(|_| if rng.gen::<f64>() < self.rate { 0.0 } else { keep })
                    .collect();
                tape.mul_const(v, Arc::new(mask))
            }
            _ => v,
        }
    }
}

/// Tape handles of one head's W1..W6.
pub type HeadVars = [Var; 6];

/// Level output and the per-head attention coefficients (one value per
/// incidence position, before dropout).
pub struct Attention {
    pub out: Var,
    pub coefs: Vec<Var>,
}

fn add_position_bias(tape: &mut Tape, scores: Var, bias: Option<&[f64]>) -> Var {
    match bias {
        Some(b) => {
            let c = tape.constant(Matrix::column(b.to_vec()));
            tape.add(scores, c)
        }
        None => scores,
    }
}

fn average(tape: &mut Tape, parts: &[Var]) -> Var {
    let mut acc = parts[0];
    for &p in &parts[1..] {
        acc = tape.add(acc, p);
    }
    if parts.len() > 1 {
        acc = tape.scale(acc, 1.0 / parts.len() as f64);
    }
    acc
}

/// Node-to-hyperedge attention. `mask` weights each position inside the
/// softmax (the straight-through mask); `lc` is added to the scores.
#[allow(clippy::too_many_arguments)]
pub fn node_to_hyperedge(
    tape: &mut Tape,
    inc: &Arc<IncidenceIndex>,
    p: Var,
    q_prev: Var,
    heads: &[HeadVars],
    mask: Option<Var>,
    lc: Option<&[f64]>,
    cfg: &EncoderConfig,
    dropout: &mut Dropout,
) -> Attention {
    let mut outs = Vec::with_capacity(heads.len());
    let mut coefs = Vec::with_capacity(heads.len());
    for w in heads {
        let msg = tape.matmul(p, w[0]);
        let keys = tape.matmul(p, w[1]);
        let queries = tape.matmul(q_prev, w[2]);
        let r = tape.edge_score(keys, queries, inc.clone(), cfg.score_scale(), cfg.slope);
        let r = add_position_bias(tape, r, lc);
        let gamma = tape.segment_softmax(r, mask, Side::Edge, inc.clone());
        coefs.push(gamma);
        let gamma = dropout.apply(tape, gamma);
        outs.push(tape.segment_aggregate(gamma, msg, Side::Edge, inc.clone()));
    }
    Attention {
        out: average(tape, &outs),
        coefs,
    }
}

/// Hyperedge-to-node attention. Rows flagged in `fallback` (nodes with no
/// surviving membership) take `W4 · W1 · p_prev` instead.
#[allow(clippy::too_many_arguments)]
pub fn hyperedge_to_node(
    tape: &mut Tape,
    inc: &Arc<IncidenceIndex>,
    q: Var,
    p_prev: Var,
    heads: &[HeadVars],
    mask: Option<Var>,
    hd: Option<&[f64]>,
    fallback: Option<Arc<Vec<bool>>>,
    cfg: &EncoderConfig,
    dropout: &mut Dropout,
) -> Attention {
    let mut outs = Vec::with_capacity(heads.len());
    let mut coefs = Vec::with_capacity(heads.len());
    for w in heads {
        let msg = tape.matmul(q, w[3]);
        let keys = tape.matmul(q, w[4]);
        let queries = tape.matmul(p_prev, w[5]);
        let y = tape.edge_score(queries, keys, inc.clone(), cfg.score_scale(), cfg.slope);
        let y = add_position_bias(tape, y, hd);
        let lambda = tape.segment_softmax(y, mask, Side::Node, inc.clone());
        coefs.push(lambda);
        let lambda = dropout.apply(tape, lambda);
        let mut out = tape.segment_aggregate(lambda, msg, Side::Node, inc.clone());
        if let Some(fb) = &fallback {
            let passed = tape.matmul(p_prev, w[0]);
            let passed = tape.matmul(passed, w[3]);
            out = tape.select_rows(out, passed, fb.clone());
        }
        outs.push(out);
    }
    Attention {
        out: average(tape, &outs),
        coefs,
    }
}

/// Input node features of a view: the projected raw features plus whichever
/// structural encodings the view carries.
pub fn struct_features(
    tape: &mut Tape,
    vars: &[Var],
    params: &ViewParams,
    inputs: &ViewInputs,
    shared: &SharedInputs,
) -> Var {
    let mut x = tape.sparse_matmul(shared.features.clone(), vars[params.input_proj.0]);
    if let Some((g1, g2)) = params.gcn {
        let h = tape.sparse_matmul(shared.features.clone(), vars[g1.0]);
        let h = tape.sparse_matmul(shared.adj_norm.clone(), h);
        let h = tape.relu(h);
        let h = tape.matmul(h, vars[g2.0]);
        let lce = tape.sparse_matmul(shared.adj_norm.clone(), h);
        x = tape.add(x, lce);
    }
    if let (Some(psi), Some(bins)) = (params.psi, &inputs.centrality_bins) {
        let ce = tape.gather(vars[psi.0], bins.clone());
        x = tape.add(x, ce);
    }
    if let (Some(zeta), Some(bins)) = (params.zeta, &inputs.distinct_bins) {
        let de = tape.gather(vars[zeta.0], bins.clone());
        x = tape.add(x, de);
    }
    x
}

pub struct ViewOutput {
    pub z: Var,
    pub gamma: Vec<Var>,
    pub lambda: Vec<Var>,
}

/// The augmentation state a view is encoded under.
pub struct MaskInput {
    /// Straight-through mask column, one entry per incidence position.
    pub weights: Var,
    /// Nodes left without any surviving membership.
    pub fallback: Arc<Vec<bool>>,
}

/// Nodes with no incidence in `inc`, or with all their positions masked out.
pub fn orphaned_nodes(inc: &IncidenceIndex, hard: Option<&[bool]>) -> Vec<bool> {
    (0..inc.num_nodes)
        .map(|i| {
            !inc
                .node_positions(i)
                .iter()
                .any(|&p| hard.is_none_or(|h| h[p]))
        })
        .collect()
}

/// One encoder layer over a view: node→hyperedge then hyperedge→node.
#[allow(clippy::too_many_arguments)]
pub fn encode_view(
    tape: &mut Tape,
    vars: &[Var],
    params: &ViewParams,
    inputs: &ViewInputs,
    shared: &SharedInputs,
    mask: Option<&MaskInput>,
    cfg: &EncoderConfig,
    dropout: &mut Dropout,
) -> ViewOutput {
    let p0 = struct_features(tape, vars, params, inputs, shared);
    let q0 = vars[params.edge_embed.0];
    let heads: Vec<HeadVars> = params
        .heads
        .iter()
        .map(|h| std::array::from_fn(|k| vars[h.w[k].0]))
        .collect();
    let weights = mask.map(|m| m.weights);
    let fallback = match mask {
        Some(m) => m.fallback.clone(),
        None => Arc::new(orphaned_nodes(&inputs.inc, None)),
    };
    let fallback = fallback.iter().any(|&f| f).then_some(fallback);
    if fallback.is_some() {
        log::debug!("some nodes have no surviving membership; using pass-through rows");
    }
    let q = node_to_hyperedge(
        tape,
        &inputs.inc,
        p0,
        q0,
        &heads,
        weights,
        inputs.lc.as_deref(),
        cfg,
        dropout,
    );
    let p = hyperedge_to_node(
        tape,
        &inputs.inc,
        q.out,
        p0,
        &heads,
        weights,
        inputs.hd.as_deref(),
        fallback,
        cfg,
        dropout,
    );
    ViewOutput {
        z: p.out,
        gamma: q.coefs,
        lambda: p.coefs,
    }
}
