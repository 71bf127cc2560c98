//! Reverse-mode automatic differentiation over row-major matrices.
//!
//! A [`Graph`] is a tape: every op appends a node holding its forward value,
//! and [`Graph::backward`] walks the tape in reverse. Every value is a 2-D
//! array; scalars are `1 x 1`.

use std::ops::Range;
use std::sync::Arc;

use ndarray::{s, Array1, Array2, ArrayView2, Axis, CowArray, Ix2, Zip};

use super::Scalar;
use crate::geometry::canonical_sign;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A block of query rows attending to an explicit list of key/value rows.
///
/// Key rows not listed are excluded from the softmax altogether, so their
/// weight is exactly zero rather than merely small.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttnGroup {
    pub rows: Range<usize>,
    pub cols: Vec<usize>,
}

impl AttnGroup {
    pub fn new(rows: Range<usize>, cols: Vec<usize>) -> Self {
        AttnGroup { rows, cols }
    }

    /// Rows attending densely to a contiguous column range.
    pub fn dense(rows: Range<usize>, cols: Range<usize>) -> Self {
        AttnGroup {
            rows,
            cols: cols.collect(),
        }
    }

    fn contiguous(&self) -> Option<Range<usize>> {
        let first = *self.cols.first()?;
        let ok = self.cols.iter().enumerate().all(|(i, &c)| c == first + i);
        ok.then(|| first..first + self.cols.len())
    }
}

pub type Groups = Arc<[AttnGroup]>;

enum Op<F> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, F),
    AddScalar(Var),
    Exp(Var),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Array2<F>,
        inv_std: Array1<F>,
    },
    RowSelect(Var, Vec<usize>),
    Gather(Var, Vec<usize>),
    ConcatRows(Vec<Var>),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        groups: Groups,
        /// `[group][head]` softmax weights, kept only when gradients are on.
        probs: Vec<Vec<Array2<F>>>,
    },
    QuatNormalize(Var),
    SumScalars(Vec<Var>),
    ScalarFn(Vec<(Var, Array2<F>)>),
}

struct Node<F> {
    value: Array2<F>,
    op: Op<F>,
    requires_grad: bool,
}

pub struct Graph<F: Scalar> {
    nodes: Vec<Node<F>>,
    grad_enabled: bool,
}

/// Gradients of a scalar root with respect to every node that needed one.
pub struct Gradients<F> {
    grads: Vec<Option<Array2<F>>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn get(&self, v: Var) -> Option<&Array2<F>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Array2<F>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

impl<F: Scalar> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Graph<F> {
    /// A graph that records what backward needs.
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grad_enabled: true,
        }
    }

    /// A forward-only graph; [`Graph::backward`] panics on it.
    pub fn inference() -> Self {
        Graph {
            nodes: Vec::new(),
            grad_enabled: false,
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    /// Scalar value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> F {
        let val = self.value(v);
        assert_eq!(val.dim(), (1, 1), "node is not a scalar");
        val[[0, 0]]
    }

    fn push(&mut self, value: Array2<F>, op: Op<F>, inputs: &[Var]) -> Var {
        let requires_grad = self.grad_enabled && inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Array2<F>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: self.grad_enabled,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Array2<F>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.ncols(), vb.nrows(), "matmul inner dimensions");
        let out = va.dot(vb);
        self.push(out, Op::MatMul(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add shapes");
        let out = self.value(a) + self.value(b);
        self.push(out, Op::Add(a, b), &[a, b])
    }

    /// `x + 1 * row`, broadcasting a `1 x m` row over every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Var {
        let (vx, vr) = (self.value(x), self.value(row));
        assert_eq!(vr.nrows(), 1, "add_row expects a single row");
        assert_eq!(vx.ncols(), vr.ncols(), "add_row widths");
        let out = vx + vr;
        self.push(out, Op::AddRow(x, row), &[x, row])
    }

    pub fn scale(&mut self, x: Var, factor: F) -> Var {
        let out = self.value(x) * factor;
        self.push(out, Op::Scale(x, factor), &[x])
    }

    pub fn add_scalar(&mut self, x: Var, c: F) -> Var {
        let out = self.value(x) + c;
        self.push(out, Op::AddScalar(x), &[x])
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let out = self.value(x).mapv(F::exp);
        self.push(out, Op::Exp(x), &[x])
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).mapv(|v| gelu(v).0);
        self.push(out, Op::Gelu(x), &[x])
    }

    /// Per-row normalization with `1 x C` affine parameters.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let vx = self.value(x);
        let (n, c) = vx.dim();
        assert_eq!(self.shape(gamma), (1, c), "layer_norm gamma");
        assert_eq!(self.shape(beta), (1, c), "layer_norm beta");
        let eps = F::c(LAYER_NORM_EPS);
        let inv_c = F::one() / F::c(c as f64);
        let mut xhat = Array2::zeros((n, c));
        let mut inv_std = Array1::zeros(n);
        for (i, row) in vx.outer_iter().enumerate() {
            let mean = row.sum() * inv_c;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() * inv_c;
            let is = F::one() / (var + eps).sqrt();
            inv_std[i] = is;
            Zip::from(xhat.row_mut(i)).and(row).for_each(|h, &v| *h = (v - mean) * is);
        }
        let out = &xhat * self.value(gamma) + self.value(beta);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            &[x, gamma, beta],
        )
    }

    /// Rows of `src` in the given order (repeats allowed).
    pub fn row_select(&mut self, src: Var, rows: Vec<usize>) -> Var {
        let out = self.value(src).select(Axis(0), &rows);
        self.push(out, Op::RowSelect(src, rows), &[src])
    }

    /// Contiguous row range of `src`.
    pub fn rows(&mut self, src: Var, range: Range<usize>) -> Var {
        self.row_select(src, range.collect())
    }

    /// `out.flat[i] = src.flat[index[i]]`, reshaped to `shape`.
    pub fn gather(&mut self, src: Var, index: Vec<usize>, shape: (usize, usize)) -> Var {
        assert_eq!(index.len(), shape.0 * shape.1, "gather index count");
        let vs = self.value(src);
        let flat = vs.as_slice().expect("graph values are standard layout");
        let data: Vec<F> = index.iter().map(|&i| flat[i]).collect();
        let out = Array2::from_shape_vec(shape, data).expect("shape checked above");
        self.push(out, Op::Gather(src, index), &[src])
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let views: Vec<ArrayView2<F>> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = ndarray::concatenate(Axis(0), &views).expect("concat widths must agree");
        self.push(out, Op::ConcatRows(parts.to_vec()), parts)
    }

    /// Multi-head scaled dot-product attention over already projected
    /// `q` (rows x C) and `k`, `v` (S x C). Every query row must belong to
    /// exactly one group.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, groups: Groups) -> Var {
        let keep = self.grad_enabled && [q, k, v].iter().any(|x| self.nodes[x.0].requires_grad);
        let (out, probs) = attention_forward(self.value(q), self.value(k), self.value(v), heads, &groups, keep);
        self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                heads,
                groups,
                probs,
            },
            &[q, k, v],
        )
    }

    /// Rescales the first four columns of every row to a unit quaternion in
    /// canonical sign; the remaining columns pass through.
    pub fn quat_normalize(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        assert!(out.ncols() >= 4, "quat_normalize needs 4 leading columns");
        for mut row in out.outer_iter_mut() {
            let (n, sign) = quat_norm_sign(row.slice(s![..4]));
            let f = sign / n;
            row.slice_mut(s![..4]).mapv_inplace(|v| v * f);
        }
        self.push(out, Op::QuatNormalize(x), &[x])
    }

    pub fn sum_scalars(&mut self, parts: &[Var]) -> Var {
        let mut total = F::zero();
        for &p in parts {
            total += self.scalar(p);
        }
        self.push(Array2::from_elem((1, 1), total), Op::SumScalars(parts.to_vec()), parts)
    }

    /// Scalar computed outside the graph, with its local gradient with
    /// respect to each input already evaluated.
    pub fn scalar_fn(&mut self, value: F, inputs: Vec<(Var, Array2<F>)>) -> Var {
        for (v, g) in &inputs {
            assert_eq!(self.shape(*v), g.dim(), "scalar_fn gradient shape");
        }
        let vars: Vec<Var> = inputs.iter().map(|(v, _)| *v).collect();
        self.push(Array2::from_elem((1, 1), value), Op::ScalarFn(inputs), &vars)
    }

    /// Gradients of the scalar `root` with respect to every node that
    /// depends on a parameter.
    pub fn backward(&self, root: Var) -> Gradients<F> {
        assert!(self.grad_enabled, "backward on an inference graph");
        assert_eq!(self.shape(root), (1, 1), "backward root must be a scalar");
        let mut grads: Vec<Option<Array2<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Array2::from_elem((1, 1), F::one()));
        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backward_node(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn acc(&self, grads: &mut [Option<Array2<F>>], v: Var, g: Array2<F>) {
        if !self.needs(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => *existing += &g,
            slot => *slot = Some(g),
        }
    }

    fn backward_node(&self, node: &Node<F>, g: &Array2<F>, grads: &mut [Option<Array2<F>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.needs(*a) {
                    self.acc(grads, *a, g.dot(&self.value(*b).t()));
                }
                if self.needs(*b) {
                    self.acc(grads, *b, self.value(*a).t().dot(g));
                }
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.clone());
            }
            Op::AddRow(x, row) => {
                self.acc(grads, *x, g.clone());
                if self.needs(*row) {
                    self.acc(grads, *row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::Scale(x, f) => self.acc(grads, *x, g * *f),
            Op::AddScalar(x) => self.acc(grads, *x, g.clone()),
            Op::Exp(x) => self.acc(grads, *x, g * &node.value),
            Op::Gelu(x) => {
                let mut gx = self.value(*x).mapv(|v| gelu(v).1);
                gx *= g;
                self.acc(grads, *x, gx);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                if self.needs(*gamma) {
                    self.acc(grads, *gamma, (g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                if self.needs(*beta) {
                    self.acc(grads, *beta, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                if self.needs(*x) {
                    let gh = g * self.value(*gamma);
                    let c = F::c(gh.ncols() as f64);
                    let mut gx = Array2::zeros(gh.dim());
                    for i in 0..gh.nrows() {
                        let (ghr, xr) = (gh.row(i), xhat.row(i));
                        let sum_g = ghr.sum();
                        let sum_gx = ghr.dot(&xr);
                        let f = inv_std[i] / c;
                        Zip::from(gx.row_mut(i))
                            .and(ghr)
                            .and(xr)
                            .for_each(|o, &gv, &xv| *o = f * (c * gv - sum_g - xv * sum_gx));
                    }
                    self.acc(grads, *x, gx);
                }
            }
            Op::RowSelect(src, rows) => {
                let mut gs = Array2::zeros(self.value(*src).dim());
                for (i, &r) in rows.iter().enumerate() {
                    let mut dst = gs.row_mut(r);
                    dst += &g.row(i);
                }
                self.acc(grads, *src, gs);
            }
            Op::Gather(src, index) => {
                let mut gs = Array2::zeros(self.value(*src).dim());
                {
                    let flat = gs.as_slice_mut().expect("fresh array is contiguous");
                    for (gv, &i) in g.iter().zip(index) {
                        flat[i] += *gv;
                    }
                }
                self.acc(grads, *src, gs);
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for &p in parts {
                    let n = self.value(p).nrows();
                    if self.needs(p) {
                        self.acc(grads, p, g.slice(s![start..start + n, ..]).to_owned());
                    }
                    start += n;
                }
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                groups,
                probs,
            } => {
                let (gq, gk, gv) = attention_backward(
                    self.value(*q),
                    self.value(*k),
                    self.value(*v),
                    *heads,
                    groups,
                    probs,
                    g,
                );
                self.acc(grads, *q, gq);
                self.acc(grads, *k, gk);
                self.acc(grads, *v, gv);
            }
            Op::QuatNormalize(x) => {
                let vx = self.value(*x);
                let mut gx = g.clone();
                for i in 0..vx.nrows() {
                    let (n, sign) = quat_norm_sign(vx.slice(s![i, ..4]));
                    let qhat = node.value.slice(s![i, ..4]);
                    let go = g.slice(s![i, ..4]);
                    let proj = qhat.dot(&go);
                    let f = sign / n;
                    for c in 0..4 {
                        gx[[i, c]] = f * (go[c] - qhat[c] * proj);
                    }
                }
                self.acc(grads, *x, gx);
            }
            Op::SumScalars(parts) => {
                for &p in parts {
                    self.acc(grads, p, g.clone());
                }
            }
            Op::ScalarFn(inputs) => {
                let up = g[[0, 0]];
                for (v, local) in inputs {
                    self.acc(grads, *v, local * up);
                }
            }
        }
    }
}

/// Value and derivative of the tanh-approximated GELU.
fn gelu<F: Scalar>(x: F) -> (F, F) {
    let k = F::c((2.0 / std::f64::consts::PI).sqrt());
    let a = F::c(0.044715);
    let half = F::c(0.5);
    let u = k * (x + a * x * x * x);
    let t = u.tanh();
    let y = half * x * (F::one() + t);
    let dy = half * (F::one() + t) + half * x * (F::one() - t * t) * k * (F::one() + F::c(3.0) * a * x * x);
    (y, dy)
}

fn quat_norm_sign<F: Scalar>(q: ndarray::ArrayView1<F>) -> (F, F) {
    let n = q.dot(&q).sqrt().max(F::c(1e-12));
    let sign = canonical_sign(q[0].f64(), q[1].f64(), q[2].f64(), q[3].f64());
    (n, F::c(sign))
}

fn gather_rows<'a, F: Scalar>(m: &'a Array2<F>, group: &AttnGroup) -> CowArray<'a, F, Ix2> {
    match group.contiguous() {
        Some(r) => CowArray::from(m.slice(s![r, ..])),
        None => CowArray::from(m.select(Axis(0), &group.cols)),
    }
}

fn check_groups(n_rows: usize, n_keys: usize, groups: &[AttnGroup]) {
    let mut seen = vec![false; n_rows];
    for grp in groups {
        assert!(!grp.cols.is_empty(), "attention group with no key columns");
        assert!(grp.cols.iter().all(|&c| c < n_keys), "attention column out of range");
        for r in grp.rows.clone() {
            assert!(r < n_rows && !seen[r], "attention row {r} out of range or covered twice");
            seen[r] = true;
        }
    }
    assert!(seen.iter().all(|s| *s), "attention row not covered by any group");
}

fn attention_forward<F: Scalar>(
    q: &Array2<F>,
    k: &Array2<F>,
    v: &Array2<F>,
    heads: usize,
    groups: &[AttnGroup],
    keep: bool,
) -> (Array2<F>, Vec<Vec<Array2<F>>>) {
    let c = q.ncols();
    assert!(heads > 0 && c.is_multiple_of(heads), "channels must divide into heads");
    assert_eq!(k.ncols(), c, "key width");
    assert_eq!(v.dim(), k.dim(), "value shape");
    check_groups(q.nrows(), k.nrows(), groups);
    let dh = c / heads;
    let scale = F::one() / F::c(dh as f64).sqrt();
    let mut out = Array2::zeros(q.dim());
    let mut probs = Vec::new();
    for grp in groups {
        let kg = gather_rows(k, grp);
        let vg = gather_rows(v, grp);
        let mut per_head = Vec::new();
        for h in 0..heads {
            let hc = h * dh..(h + 1) * dh;
            let qh = q.slice(s![grp.rows.clone(), hc.clone()]);
            let mut p = qh.dot(&kg.slice(s![.., hc.clone()]).t());
            softmax_rows(&mut p, scale);
            out.slice_mut(s![grp.rows.clone(), hc.clone()])
                .assign(&p.dot(&vg.slice(s![.., hc])));
            if keep {
                per_head.push(p);
            }
        }
        probs.push(per_head);
    }
    (out, probs)
}

fn softmax_rows<F: Scalar>(scores: &mut Array2<F>, scale: F) {
    for mut row in scores.outer_iter_mut() {
        let max = row.iter().fold(F::neg_infinity(), |m, &v| m.max(v));
        let mut total = F::zero();
        for v in row.iter_mut() {
            *v = ((*v - max) * scale).exp();
            total += *v;
        }
        let inv = F::one() / total;
        row.mapv_inplace(|v| v * inv);
    }
}

fn scatter_rows<F: Scalar>(dst: &mut Array2<F>, group: &AttnGroup, cols: Range<usize>, src: &Array2<F>) {
    match group.contiguous() {
        Some(r) => {
            let mut view = dst.slice_mut(s![r, cols]);
            view += src;
        }
        None => {
            for (local, &row) in group.cols.iter().enumerate() {
                let mut view = dst.slice_mut(s![row, cols.clone()]);
                view += &src.row(local);
            }
        }
    }
}

#[allow(clippy::type_complexity)]
fn attention_backward<F: Scalar>(
    q: &Array2<F>,
    k: &Array2<F>,
    v: &Array2<F>,
    heads: usize,
    groups: &[AttnGroup],
    probs: &[Vec<Array2<F>>],
    g: &Array2<F>,
) -> (Array2<F>, Array2<F>, Array2<F>) {
    let dh = q.ncols() / heads;
    let scale = F::one() / F::c(dh as f64).sqrt();
    let mut gq = Array2::zeros(q.dim());
    let mut gk = Array2::zeros(k.dim());
    let mut gv = Array2::zeros(v.dim());
    for (grp, per_head) in groups.iter().zip(probs) {
        let kg = gather_rows(k, grp);
        let vg = gather_rows(v, grp);
        for (h, p) in per_head.iter().enumerate() {
            let hc = h * dh..(h + 1) * dh;
            let go = g.slice(s![grp.rows.clone(), hc.clone()]);
            let qh = q.slice(s![grp.rows.clone(), hc.clone()]);
            let mut ds = go.dot(&vg.slice(s![.., hc.clone()]).t());
            for (mut dsr, pr) in ds.outer_iter_mut().zip(p.outer_iter()) {
                let dot = dsr.dot(&pr);
                Zip::from(&mut dsr).and(&pr).for_each(|d, &pv| *d = pv * (*d - dot) * scale);
            }
            let mut gqh = gq.slice_mut(s![grp.rows.clone(), hc.clone()]);
            gqh += &ds.dot(&kg.slice(s![.., hc.clone()]));
            scatter_rows(&mut gk, grp, hc.clone(), &ds.t().dot(&qh));
            scatter_rows(&mut gv, grp, hc, &p.t().dot(&go));
        }
    }
    (gq, gk, gv)
}
