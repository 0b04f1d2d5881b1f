//! Reverse-mode differentiation over a linear tape.
//!
//! Besides dense linear algebra the tape carries fused kernels for the
//! incidence-level work of hypergraph attention (scores, segment softmax,
//! aggregation) and for the contrastive objective, so memory stays
//! proportional to the number of incidences rather than incidences × width.

use std::sync::Arc;

use rayon::prelude::*;

use crate::tensor::{dot, Matrix, SparseOperand};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Incidence positions of a hypergraph in hyperedge-major order, with a
/// node-major permutation for the transposed direction.
#[derive(Debug, Clone, PartialEq)]
pub struct IncidenceIndex {
    pub num_nodes: usize,
    pub num_edges: usize,
    pub node_of: Vec<usize>,
    pub edge_of: Vec<usize>,
    /// Positions of hyperedge `j` are `edge_ptr[j]..edge_ptr[j+1]`.
    pub edge_ptr: Vec<usize>,
    /// Positions of node `i` are `node_pos[node_ptr[i]..node_ptr[i+1]]`.
    pub node_ptr: Vec<usize>,
    pub node_pos: Vec<usize>,
}

impl IncidenceIndex {
    pub fn new(num_nodes: usize, hyperedges: &[Vec<usize>]) -> Self {
        let mut node_of = Vec::new();
        let mut edge_of = Vec::new();
        let mut edge_ptr = vec![0];
        for (j, e) in hyperedges.iter().enumerate() {
            for &i in e {
                node_of.push(i);
                edge_of.push(j);
            }
            edge_ptr.push(node_of.len());
        }
        let mut counts = vec![0usize; num_nodes + 1];
        for &i in &node_of {
            counts[i + 1] += 1;
        }
        for i in 0..num_nodes {
            counts[i + 1] += counts[i];
        }
        let node_ptr = counts.clone();
        let mut fill = counts;
        let mut node_pos = vec![0; node_of.len()];
        for (p, &i) in node_of.iter().enumerate() {
            node_pos[fill[i]] = p;
            fill[i] += 1;
        }
        IncidenceIndex {
            num_nodes,
            num_edges: hyperedges.len(),
            node_of,
            edge_of,
            edge_ptr,
            node_ptr,
            node_pos,
        }
    }

    pub fn nnz(&self) -> usize {
        self.node_of.len()
    }

    pub fn edge_positions(&self, j: usize) -> std::ops::Range<usize> {
        self.edge_ptr[j]..self.edge_ptr[j + 1]
    }

    pub fn node_positions(&self, i: usize) -> &[usize] {
        &self.node_pos[self.node_ptr[i]..self.node_ptr[i + 1]]
    }

    fn segment(&self, side: Side, s: usize) -> Segment<'_> {
        match side {
            Side::Edge => Segment::Range(self.edge_positions(s)),
            Side::Node => Segment::List(self.node_positions(s)),
        }
    }

    fn segments(&self, side: Side) -> usize {
        match side {
            Side::Edge => self.num_edges,
            Side::Node => self.num_nodes,
        }
    }

    fn other_of(&self, side: Side, p: usize) -> usize {
        match side {
            Side::Edge => self.node_of[p],
            Side::Node => self.edge_of[p],
        }
    }
}

enum Segment<'a> {
    Range(std::ops::Range<usize>),
    List(&'a [usize]),
}

impl Segment<'_> {
    fn for_each(&self, mut f: impl FnMut(usize)) {
        match self {
            Segment::Range(r) => r.clone().for_each(&mut f),
            Segment::List(l) => l.iter().copied().for_each(&mut f),
        }
    }
}

/// Which side of the incidence a segment groups by.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Node,
    Edge,
}

impl Side {
    fn other(self) -> Side {
        match self {
            Side::Node => Side::Edge,
            Side::Edge => Side::Node,
        }
    }
}

/// Anchor/candidate pairs for the contrastive objective. Pairs are
/// anchor-major; each anchor lists its positives first.
#[derive(Debug, Clone, PartialEq)]
pub struct PairIndex {
    pub num_left: usize,
    pub num_right: usize,
    pub left: Vec<usize>,
    pub right: Vec<usize>,
    pub anchor_ptr: Vec<usize>,
    pub pos_count: Vec<usize>,
    right_ptr: Vec<usize>,
    right_pos: Vec<usize>,
}

impl PairIndex {
    /// `groups[v] = (positives, negatives)` for anchor `v`.
    pub fn new(num_right: usize, groups: &[(Vec<usize>, Vec<usize>)]) -> Self {
        let mut left = Vec::new();
        let mut right = Vec::new();
        let mut anchor_ptr = vec![0];
        let mut pos_count = Vec::with_capacity(groups.len());
        for (v, (pos, neg)) in groups.iter().enumerate() {
            for &u in pos.iter().chain(neg) {
                left.push(v);
                right.push(u);
            }
            pos_count.push(pos.len());
            anchor_ptr.push(left.len());
        }
        let mut ptr = vec![0usize; num_right + 1];
        for &u in &right {
            ptr[u + 1] += 1;
        }
        for u in 0..num_right {
            ptr[u + 1] += ptr[u];
        }
        let right_ptr = ptr.clone();
        let mut fill = ptr;
        let mut right_pos = vec![0; right.len()];
        for (p, &u) in right.iter().enumerate() {
            right_pos[fill[u]] = p;
            fill[u] += 1;
        }
        PairIndex {
            num_left: groups.len(),
            num_right,
            left,
            right,
            anchor_ptr,
            pos_count,
            right_ptr,
            right_pos,
        }
    }

    pub fn len(&self) -> usize {
        self.left.len()
    }

    pub fn is_empty(&self) -> bool {
        self.left.is_empty()
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    SparseMatMul(Arc<SparseOperand>, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    MulConst(Var, Arc<Vec<f64>>),
    Gather(Var, Arc<Vec<usize>>),
    ConcatCols(Vec<Var>),
    SelectRows {
        primary: Var,
        fallback: Var,
        use_fallback: Arc<Vec<bool>>,
    },
    EdgeScore {
        node_rows: Var,
        edge_rows: Var,
        inc: Arc<IncidenceIndex>,
        scale: f64,
        slope: f64,
    },
    SegmentSoftmax {
        scores: Var,
        weights: Option<Var>,
        side: Side,
        inc: Arc<IncidenceIndex>,
        /// `exp(s - max) / Z` per position, unweighted.
        ratio: Vec<f64>,
    },
    SegmentAggregate {
        coef: Var,
        values: Var,
        side: Side,
        inc: Arc<IncidenceIndex>,
    },
    StraightThrough {
        keep: Var,
        drop: Var,
        p: Vec<f64>,
        tau: f64,
    },
    RowNormalize {
        input: Var,
        norms: Vec<f64>,
    },
    PairDot {
        a: Var,
        b: Var,
        pairs: Arc<PairIndex>,
    },
    InfoNce {
        sims: Var,
        pairs: Arc<PairIndex>,
        eta: f64,
        denom: f64,
    },
    CrossEntropy {
        logits: Var,
        labels: Arc<Vec<usize>>,
        rows: Arc<Vec<usize>>,
    },
}

struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

/// Records a computation; call [`Tape::backward`] on a scalar output.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Matrix>>,
}

fn leaky(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

fn leaky_grad(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        slope
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Matrix, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant leaf.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        assert_eq!(m.shape(), (1, 1), "not a scalar");
        m.data[0]
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        self.push(value, Op::MatMul(a, b), &[a, b])
    }

    pub fn sparse_matmul(&mut self, s: Arc<SparseOperand>, b: Var) -> Var {
        let value = s.forward.matmul(self.value(b));
        self.push(value, Op::SparseMatMul(s, b), &[b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        self.push(value, Op::Add(a, b), &[a, b])
    }

    /// Adds a `1 × c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row).clone();
        assert_eq!(r.rows, 1);
        let mut value = self.value(a).clone();
        assert_eq!(value.cols, r.cols);
        for i in 0..value.rows {
            for (x, b) in value.row_mut(i).iter_mut().zip(&r.data) {
                *x += b;
            }
        }
        self.push(value, Op::AddRow(a, row), &[a, row])
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let mut value = self.value(a).clone();
        value.data.iter_mut().for_each(|x| *x *= s);
        self.push(value, Op::Scale(a, s), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        value.data.iter_mut().for_each(|x| *x = x.max(0.0));
        self.push(value, Op::Relu(a), &[a])
    }

    /// Elementwise product with a constant buffer of the same size.
    pub fn mul_const(&mut self, a: Var, c: Arc<Vec<f64>>) -> Var {
        let mut value = self.value(a).clone();
        assert_eq!(value.data.len(), c.len());
        value.data.iter_mut().zip(c.iter()).for_each(|(x, m)| *x *= m);
        self.push(value, Op::MulConst(a, c), &[a])
    }

    /// Row lookup: output row `k` is `table[index[k]]`.
    pub fn gather(&mut self, table: Var, index: Arc<Vec<usize>>) -> Var {
        let t = self.value(table);
        let mut value = Matrix::zeros(index.len(), t.cols);
        for (k, &r) in index.iter().enumerate() {
            value.row_mut(k).copy_from_slice(t.row(r));
        }
        self.push(value, Op::Gather(table, index), &[table])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut value = Matrix::zeros(rows, cols);
        for i in 0..rows {
            let mut off = 0;
            for &p in parts {
                let src = self.value(p);
                assert_eq!(src.rows, rows);
                value.row_mut(i)[off..off + src.cols].copy_from_slice(src.row(i));
                off += src.cols;
            }
        }
        self.push(value, Op::ConcatCols(parts.to_vec()), parts)
    }

    /// Row `i` from `fallback` where `use_fallback[i]`, otherwise from `primary`.
    pub fn select_rows(&mut self, primary: Var, fallback: Var, use_fallback: Arc<Vec<bool>>) -> Var {
        let mut value = self.value(primary).clone();
        let fb = self.value(fallback);
        assert_eq!(value.shape(), fb.shape());
        for (i, &u) in use_fallback.iter().enumerate() {
            if u {
                value.row_mut(i).copy_from_slice(fb.row(i));
            }
        }
        self.push(
            value,
            Op::SelectRows {
                primary,
                fallback,
                use_fallback,
            },
            &[primary, fallback],
        )
    }

    /// Per incidence `(i, j)`: `scale * Σ_k leaky(node_rows[i,k] * edge_rows[j,k])`.
    pub fn edge_score(
        &mut self,
        node_rows: Var,
        edge_rows: Var,
        inc: Arc<IncidenceIndex>,
        scale: f64,
        slope: f64,
    ) -> Var {
        let a = self.value(node_rows);
        let b = self.value(edge_rows);
        assert_eq!(a.cols, b.cols);
        let data: Vec<f64> = (0..inc.nnz())
            .into_par_iter()
            .map(|p| {
                let ra = a.row(inc.node_of[p]);
                let rb = b.row(inc.edge_of[p]);
                scale * ra.iter().zip(rb).map(|(x, y)| leaky(x * y, slope)).sum::<f64>()
            })
            .collect();
        let value = Matrix::column(data);
        self.push(
            value,
            Op::EdgeScore {
                node_rows,
                edge_rows,
                inc,
                scale,
                slope,
            },
            &[node_rows, edge_rows],
        )
    }

    /// Softmax over each segment of positions (`side` selects grouping by
    /// hyperedge or by node). With `weights`, each exponential is multiplied by
    /// the matching weight before normalizing; segments whose weights are all
    /// zero produce zeros.
    pub fn segment_softmax(
        &mut self,
        scores: Var,
        weights: Option<Var>,
        side: Side,
        inc: Arc<IncidenceIndex>,
    ) -> Var {
        let s = &self.value(scores).data;
        let w = weights.map(|w| &self.value(w).data);
        let nnz = inc.nnz();
        let per_seg: Vec<Vec<(usize, f64, f64)>> = (0..inc.segments(side))
            .into_par_iter()
            .map(|seg| {
                let segment = inc.segment(side, seg);
                let mut mx = f64::NEG_INFINITY;
                segment.for_each(|p| mx = mx.max(s[p]));
                let mut z = 0.0;
                let mut items = Vec::new();
                segment.for_each(|p| {
                    let e = (s[p] - mx).exp();
                    let weight = w.map_or(1.0, |w| w[p]);
                    z += weight * e;
                    items.push((p, e, weight));
                });
                items
                    .into_iter()
                    .map(|(p, e, weight)| {
                        if z > 0.0 {
                            (p, weight * e / z, e / z)
                        } else {
                            (p, 0.0, 0.0)
                        }
                    })
                    .collect()
            })
            .collect();
        let mut out = vec![0.0; nnz];
        let mut ratio = vec![0.0; nnz];
        for seg in per_seg {
            for (p, o, r) in seg {
                out[p] = o;
                ratio[p] = r;
            }
        }
        let mut inputs = vec![scores];
        inputs.extend(weights);
        self.push(
            Matrix::column(out),
            Op::SegmentSoftmax {
                scores,
                weights,
                side,
                inc,
                ratio,
            },
            &inputs,
        )
    }

    /// `out[s] = Σ_{p in segment s} coef[p] * values[other(p)]`, where the
    /// segment side is the destination.
    pub fn segment_aggregate(&mut self, coef: Var, values: Var, side: Side, inc: Arc<IncidenceIndex>) -> Var {
        let c = &self.value(coef).data;
        let v = self.value(values);
        let width = v.cols;
        let mut out = Matrix::zeros(inc.segments(side), width);
        if width > 0 {
            out.data.par_chunks_mut(width).enumerate().for_each(|(seg, orow)| {
                inc.segment(side, seg).for_each(|p| {
                    let src = v.row(inc.other_of(side, p));
                    let k = c[p];
                    if k != 0.0 {
                        for (o, x) in orow.iter_mut().zip(src) {
                            *o += k * x;
                        }
                    }
                });
            });
        }
        self.push(
            out,
            Op::SegmentAggregate {
                coef,
                values,
                side,
                inc,
            },
            &[coef, values],
        )
    }

    /// Straight-through relaxed Bernoulli mask. The forward value is
    /// `hard + p - p_ref` (just `hard` when `p_ref` is `None`), where
    /// `p = sigmoid((keep + noise_keep - drop - noise_drop) / tau)`; gradients
    /// flow through `p` only.
    #[allow(clippy::too_many_arguments)]
    pub fn straight_through(
        &mut self,
        keep: Var,
        drop: Var,
        noise_keep: &[f64],
        noise_drop: &[f64],
        tau: f64,
        hard: &[f64],
        p_ref: Option<&[f64]>,
    ) -> Var {
        let k = &self.value(keep).data;
        let d = &self.value(drop).data;
        let p = keep_probabilities(k, d, noise_keep, noise_drop, tau);
        let data = match p_ref {
            None => hard.to_vec(),
            Some(r) => hard
                .iter()
                .zip(&p)
                .zip(r)
                .map(|((h, p), r)| h + (p - r))
                .collect(),
        };
        self.push(
            Matrix::column(data),
            Op::StraightThrough { keep, drop, p, tau },
            &[keep, drop],
        )
    }

    pub fn row_normalize(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let mut value = x.clone();
        let mut norms = Vec::with_capacity(x.rows);
        for i in 0..x.rows {
            let n = dot(x.row(i), x.row(i)).sqrt().max(1e-12);
            norms.push(n);
            value.row_mut(i).iter_mut().for_each(|v| *v /= n);
        }
        self.push(value, Op::RowNormalize { input, norms }, &[input])
    }

    /// `out[p] = a[left[p]] · b[right[p]]`.
    pub fn pair_dot(&mut self, a: Var, b: Var, pairs: Arc<PairIndex>) -> Var {
        let av = self.value(a);
        let bv = self.value(b);
        let data: Vec<f64> = (0..pairs.len())
            .into_par_iter()
            .map(|p| dot(av.row(pairs.left[p]), bv.row(pairs.right[p])))
            .collect();
        self.push(Matrix::column(data), Op::PairDot { a, b, pairs }, &[a, b])
    }

    /// Multi-positive InfoNCE:
    /// `-(1/denom) Σ_v [lse_pos(s/η) - lse_all(s/η)]`.
    pub fn info_nce(&mut self, sims: Var, pairs: Arc<PairIndex>, eta: f64, denom: f64) -> Var {
        let s = &self.value(sims).data;
        let per_anchor: Vec<f64> = (0..pairs.num_left)
            .into_par_iter()
            .map(|v| {
                let (lo, hi) = (pairs.anchor_ptr[v], pairs.anchor_ptr[v + 1]);
                let np = pairs.pos_count[v];
                if hi == lo || np == 0 {
                    return 0.0;
                }
                let lse_all = log_sum_exp(s[lo..hi].iter().map(|x| x / eta));
                let lse_pos = log_sum_exp(s[lo..lo + np].iter().map(|x| x / eta));
                lse_all - lse_pos
            })
            .collect();
        let total: f64 = per_anchor.iter().sum::<f64>() / denom;
        self.push(
            Matrix::scalar(total),
            Op::InfoNce {
                sims,
                pairs,
                eta,
                denom,
            },
            &[sims],
        )
    }

    /// Mean softmax cross-entropy over `rows`.
    pub fn cross_entropy(&mut self, logits: Var, labels: Arc<Vec<usize>>, rows: Arc<Vec<usize>>) -> Var {
        let l = self.value(logits);
        let mut total = 0.0;
        for &r in rows.iter() {
            let row = l.row(r);
            let lse = log_sum_exp(row.iter().copied());
            total += lse - row[labels[r]];
        }
        let value = if rows.is_empty() {
            0.0
        } else {
            total / rows.len() as f64
        };
        self.push(
            Matrix::scalar(value),
            Op::CrossEntropy {
                logits,
                labels,
                rows,
            },
            &[logits],
        )
    }

    pub fn grad(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Backpropagates from a scalar `output`.
    pub fn backward(&mut self, output: Var) {
        assert_eq!(self.value(output).shape(), (1, 1), "backward needs a scalar");
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Matrix::scalar(1.0));
        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.needs_grad {
                for (input, contrib) in self.local_grads(idx, &g) {
                    if !self.nodes[input.0].needs_grad {
                        continue;
                    }
                    match &mut grads[input.0] {
                        Some(acc) => acc.add_assign(&contrib),
                        slot @ None => *slot = Some(contrib),
                    }
                }
            }
            grads[idx] = Some(g);
        }
        self.grads = grads;
    }

    fn local_grads(&self, idx: usize, g: &Matrix) -> Vec<(Var, Matrix)> {
        let node = &self.nodes[idx];
        let val = |v: Var| &self.nodes[v.0].value;
        let wants = |v: Var| self.nodes[v.0].needs_grad;
        match &node.op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) => {
                let mut out = Vec::new();
                if wants(*a) {
                    out.push((*a, g.matmul_nt(val(*b))));
                }
                if wants(*b) {
                    out.push((*b, val(*a).matmul_tn(g)));
                }
                out
            }
            Op::SparseMatMul(s, b) => vec![(*b, s.transposed.matmul(g))],
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::AddRow(a, row) => {
                let mut r = Matrix::zeros(1, g.cols);
                for i in 0..g.rows {
                    for (acc, x) in r.data.iter_mut().zip(g.row(i)) {
                        *acc += x;
                    }
                }
                vec![(*a, g.clone()), (*row, r)]
            }
            Op::Scale(a, s) => {
                let mut d = g.clone();
                d.data.iter_mut().for_each(|x| *x *= s);
                vec![(*a, d)]
            }
            Op::Relu(a) => {
                let mut d = g.clone();
                for (x, v) in d.data.iter_mut().zip(&val(*a).data) {
                    if *v <= 0.0 {
                        *x = 0.0;
                    }
                }
                vec![(*a, d)]
            }
            Op::MulConst(a, c) => {
                let mut d = g.clone();
                d.data.iter_mut().zip(c.iter()).for_each(|(x, m)| *x *= m);
                vec![(*a, d)]
            }
            Op::Gather(table, index) => {
                let t = val(*table);
                let mut d = Matrix::zeros(t.rows, t.cols);
                for (k, &r) in index.iter().enumerate() {
                    for (acc, x) in d.row_mut(r).iter_mut().zip(g.row(k)) {
                        *acc += x;
                    }
                }
                vec![(*table, d)]
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                let mut out = Vec::new();
                for &p in parts {
                    let cols = val(p).cols;
                    let mut d = Matrix::zeros(g.rows, cols);
                    for i in 0..g.rows {
                        d.row_mut(i).copy_from_slice(&g.row(i)[off..off + cols]);
                    }
                    off += cols;
                    out.push((p, d));
                }
                out
            }
            Op::SelectRows {
                primary,
                fallback,
                use_fallback,
            } => {
                let mut dp = g.clone();
                let mut df = Matrix::zeros(g.rows, g.cols);
                for (i, &u) in use_fallback.iter().enumerate() {
                    if u {
                        df.row_mut(i).copy_from_slice(g.row(i));
                        dp.row_mut(i).iter_mut().for_each(|x| *x = 0.0);
                    }
                }
                vec![(*primary, dp), (*fallback, df)]
            }
            Op::EdgeScore {
                node_rows,
                edge_rows,
                inc,
                scale,
                slope,
            } => {
                let a = val(*node_rows);
                let b = val(*edge_rows);
                let gp = &g.data;
                let width = a.cols;
                let grad_side = |side: Side, own: &Matrix, other: &Matrix| {
                    let mut d = Matrix::zeros(own.rows, width);
                    if width > 0 {
                        d.data.par_chunks_mut(width).enumerate().for_each(|(s, drow)| {
                            let orow = own.row(s);
                            inc.segment(side, s).for_each(|p| {
                                let other_row = other.row(inc.other_of(side, p));
                                let gs = gp[p] * scale;
                                for k in 0..width {
                                    let prod = orow[k] * other_row[k];
                                    drow[k] += gs * leaky_grad(prod, *slope) * other_row[k];
                                }
                            });
                        });
                    }
                    d
                };
                vec![
                    (*node_rows, grad_side(Side::Node, a, b)),
                    (*edge_rows, grad_side(Side::Edge, b, a)),
                ]
            }
            Op::SegmentSoftmax {
                scores,
                weights,
                side,
                inc,
                ratio,
            } => {
                let out = &node.value.data;
                let gp = &g.data;
                let per_seg: Vec<Vec<(usize, f64, f64)>> = (0..inc.segments(*side))
                    .into_par_iter()
                    .map(|s| {
                        let seg = inc.segment(*side, s);
                        let mut inner = 0.0;
                        seg.for_each(|p| inner += gp[p] * out[p]);
                        let mut items = Vec::new();
                        seg.for_each(|p| {
                            let centered = gp[p] - inner;
                            items.push((p, out[p] * centered, ratio[p] * centered));
                        });
                        items
                    })
                    .collect();
                let mut ds = vec![0.0; inc.nnz()];
                let mut dw = vec![0.0; inc.nnz()];
                for seg in per_seg {
                    for (p, a, b) in seg {
                        ds[p] = a;
                        dw[p] = b;
                    }
                }
                let mut res = vec![(*scores, Matrix::column(ds))];
                if let Some(w) = weights {
                    res.push((*w, Matrix::column(dw)));
                }
                res
            }
            Op::SegmentAggregate {
                coef,
                values,
                side,
                inc,
            } => {
                let c = &val(*coef).data;
                let v = val(*values);
                let width = v.cols;
                let dcoef: Vec<f64> = (0..inc.nnz())
                    .into_par_iter()
                    .map(|p| {
                        let dst = match side {
                            Side::Edge => inc.edge_of[p],
                            Side::Node => inc.node_of[p],
                        };
                        dot(g.row(dst), v.row(inc.other_of(*side, p)))
                    })
                    .collect();
                let src_side = side.other();
                let mut dv = Matrix::zeros(v.rows, width);
                if width > 0 {
                    dv.data.par_chunks_mut(width).enumerate().for_each(|(src, drow)| {
                        inc.segment(src_side, src).for_each(|p| {
                            let k = c[p];
                            if k != 0.0 {
                                let grow = g.row(inc.other_of(src_side, p));
                                for (d, x) in drow.iter_mut().zip(grow) {
                                    *d += k * x;
                                }
                            }
                        });
                    });
                }
                vec![(*coef, Matrix::column(dcoef)), (*values, dv)]
            }
            Op::StraightThrough { keep, drop, p, tau } => {
                let dk: Vec<f64> = g
                    .data
                    .iter()
                    .zip(p)
                    .map(|(g, p)| g * p * (1.0 - p) / tau)
                    .collect();
                let dd: Vec<f64> = dk.iter().map(|x| -x).collect();
                vec![(*keep, Matrix::column(dk)), (*drop, Matrix::column(dd))]
            }
            Op::RowNormalize { input, norms } => {
                let y = &node.value;
                let mut d = g.clone();
                for i in 0..y.rows {
                    let proj = dot(y.row(i), g.row(i));
                    let n = norms[i];
                    for (dx, yv) in d.row_mut(i).iter_mut().zip(y.row(i)) {
                        *dx = (*dx - yv * proj) / n;
                    }
                }
                vec![(*input, d)]
            }
            Op::PairDot { a, b, pairs } => {
                let av = val(*a);
                let bv = val(*b);
                let width = av.cols;
                let mut da = Matrix::zeros(av.rows, width);
                da.data.par_chunks_mut(width.max(1)).enumerate().for_each(|(v, drow)| {
                    if v >= pairs.num_left {
                        return;
                    }
                    for p in pairs.anchor_ptr[v]..pairs.anchor_ptr[v + 1] {
                        let gp = g.data[p];
                        for (d, x) in drow.iter_mut().zip(bv.row(pairs.right[p])) {
                            *d += gp * x;
                        }
                    }
                });
                let mut db = Matrix::zeros(bv.rows, width);
                db.data.par_chunks_mut(width.max(1)).enumerate().for_each(|(u, drow)| {
                    if u >= pairs.num_right {
                        return;
                    }
                    for &p in &pairs.right_pos[pairs.right_ptr[u]..pairs.right_ptr[u + 1]] {
                        let gp = g.data[p];
                        for (d, x) in drow.iter_mut().zip(av.row(pairs.left[p])) {
                            *d += gp * x;
                        }
                    }
                });
                vec![(*a, da), (*b, db)]
            }
            Op::InfoNce {
                sims,
                pairs,
                eta,
                denom,
            } => {
                let s = &val(*sims).data;
                let scale = g.data[0] / (denom * eta);
                let mut ds = vec![0.0; s.len()];
                let chunks: Vec<(usize, Vec<f64>)> = (0..pairs.num_left)
                    .into_par_iter()
                    .map(|v| {
                        let (lo, hi) = (pairs.anchor_ptr[v], pairs.anchor_ptr[v + 1]);
                        let np = pairs.pos_count[v];
                        if hi == lo || np == 0 {
                            return (lo, vec![0.0; hi - lo]);
                        }
                        let lse_all = log_sum_exp(s[lo..hi].iter().map(|x| x / eta));
                        let lse_pos = log_sum_exp(s[lo..lo + np].iter().map(|x| x / eta));
                        let d = (lo..hi)
                            .map(|p| {
                                let all = (s[p] / eta - lse_all).exp();
                                let pos = if p < lo + np {
                                    (s[p] / eta - lse_pos).exp()
                                } else {
                                    0.0
                                };
                                scale * (all - pos)
                            })
                            .collect();
                        (lo, d)
                    })
                    .collect();
                for (lo, d) in chunks {
                    ds[lo..lo + d.len()].copy_from_slice(&d);
                }
                vec![(*sims, Matrix::column(ds))]
            }
            Op::CrossEntropy {
                logits,
                labels,
                rows,
            } => {
                let l = val(*logits);
                let mut d = Matrix::zeros(l.rows, l.cols);
                if !rows.is_empty() {
                    let scale = g.data[0] / rows.len() as f64;
                    for &r in rows.iter() {
                        let row = l.row(r);
                        let lse = log_sum_exp(row.iter().copied());
                        let drow = d.row_mut(r);
                        for (k, x) in row.iter().enumerate() {
                            drow[k] += scale * (x - lse).exp();
                        }
                        drow[labels[r]] -= scale;
                    }
                }
                vec![(*logits, d)]
            }
        }
    }
}

pub fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let mx = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return mx;
    }
    mx + xs.map(|x| (x - mx).exp()).sum::<f64>().ln()
}

/// Two-way Gumbel-softmax keep probability at temperature `tau`.
pub fn keep_probabilities(keep: &[f64], drop: &[f64], nk: &[f64], nd: &[f64], tau: f64) -> Vec<f64> {
    keep.iter()
        .zip(drop)
        .zip(nk.iter().zip(nd))
        .map(|((k, d), (ek, ed))| {
            let z = ((k + ek) - (d + ed)) / tau;
            1.0 / (1.0 + (-z).exp())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_check(build: impl Fn(&mut Tape, Var) -> Var, x0: Matrix) {
        let mut tape = Tape::new();
        let x = tape.param(x0.clone());
        let y = build(&mut tape, x);
        tape.backward(y);
        let g = tape.grad(x).unwrap().clone();
        let h = 1e-6;
        for i in 0..x0.data.len() {
            let eval = |delta: f64| {
                let mut m = x0.clone();
                m.data[i] += delta;
                let mut t = Tape::new();
                let x = t.param(m);
                let y = build(&mut t, x);
                t.scalar(y)
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            assert!(
                (fd - g.data[i]).abs() < 1e-6 * (1.0 + fd.abs()),
                "entry {i}: fd {fd} vs grad {}",
                g.data[i]
            );
        }
    }

    fn sum_weighted(t: &mut Tape, v: Var) -> Var {
        let (r, c) = t.value(v).shape();
        let w: Vec<f64> = (0..r * c).map(|k| ((k * 7 % 11) as f64 - 5.0) / 3.0).collect();
        let ones = t.constant(Matrix::filled(1, r, 1.0));
        let prod = t.mul_const(v, Arc::new(w));
        let s = t.matmul(ones, prod);
        let onec = t.constant(Matrix::filled(c, 1, 1.0));
        t.matmul(s, onec)
    }

    #[test]
    fn softmax_aggregate_gradients() {
        let inc = Arc::new(IncidenceIndex::new(3, &[vec![0, 1], vec![1, 2], vec![0, 1, 2]]));
        let x0 = Matrix::from_vec(3, 2, vec![0.3, -0.2, 0.5, 0.1, -0.4, 0.7]);
        let inc2 = inc.clone();
        fd_check(
            move |t, x| {
                let coef = (0..inc2.nnz()).map(|k| 0.2 + 0.13 * k as f64).collect();
                let coef = t.constant(Matrix::column(coef));
                let q = t.segment_aggregate(coef, x, Side::Edge, inc2.clone());
                let s = t.edge_score(x, q, inc2.clone(), 0.5, 0.01);
                let gam = t.segment_softmax(s, None, Side::Node, inc2.clone());
                let out = t.segment_aggregate(gam, q, Side::Node, inc2.clone());
                sum_weighted(t, out)
            },
            x0,
        );
    }

    #[test]
    fn weighted_softmax_gradient_reaches_zero_weights() {
        let inc = Arc::new(IncidenceIndex::new(3, &[vec![0, 1, 2]]));
        let w0 = Matrix::column(vec![1.0, 0.0, 1.0]);
        let inc2 = inc.clone();
        fd_check(
            move |t, w| {
                let s = t.constant(Matrix::column(vec![0.1, 0.4, -0.3]));
                let gam = t.segment_softmax(s, Some(w), Side::Edge, inc2.clone());
                sum_weighted(t, gam)
            },
            w0,
        );
    }

    #[test]
    fn info_nce_and_normalize_gradients() {
        let pairs = Arc::new(PairIndex::new(
            3,
            &[
                (vec![0, 1], vec![2]),
                (vec![1], vec![0, 2]),
                (vec![2, 0], vec![]),
            ],
        ));
        let z0 = Matrix::from_vec(3, 2, vec![0.3, -0.2, 0.5, 0.1, -0.4, 0.7]);
        fd_check(
            move |t, z| {
                let n = t.row_normalize(z);
                let other = t.scale(n, 0.9);
                let s = t.pair_dot(n, other, pairs.clone());
                t.info_nce(s, pairs.clone(), 0.5, 3.0)
            },
            z0,
        );
    }

    #[test]
    fn cross_entropy_and_dense_gradients() {
        let x0 = Matrix::from_vec(3, 2, vec![0.3, -0.2, 0.5, 0.1, -0.4, 0.7]);
        fd_check(
            |t, x| {
                let w = t.constant(Matrix::from_vec(2, 3, vec![0.2, -0.1, 0.4, 0.3, 0.5, -0.6]));
                let b = t.constant(Matrix::from_vec(1, 3, vec![0.1, 0.0, -0.1]));
                let h = t.matmul(x, w);
                let h = t.add_row(h, b);
                let h = t.relu(h);
                let idx = t.gather(x, Arc::new(vec![2, 0, 1]));
                let h2 = t.concat_cols(&[h, idx]);
                let w2 = t.constant(Matrix::from_vec(5, 2, vec![0.1, 0.2, -0.3, 0.4, 0.5, -0.1, 0.2, 0.3, 0.1, -0.2]));
                let logits = t.matmul(h2, w2);
                t.cross_entropy(logits, Arc::new(vec![0, 1, 1]), Arc::new(vec![0, 2]))
            },
            x0,
        );
    }

    #[test]
    fn straight_through_forward_is_hard() {
        let mut t = Tape::new();
        let k = t.param(Matrix::column(vec![2.0, 0.0]));
        let d = t.param(Matrix::column(vec![0.0, 0.0]));
        let m = t.straight_through(k, d, &[0.0, 0.0], &[0.0, 0.0], 0.2, &[1.0, 0.0], None);
        assert_eq!(t.value(m).data, vec![1.0, 0.0]);
    }
}
