//! Define-by-run recording tape over a fixed set of batched operations.
//!
//! Every node holds a row-major `rows x cols` matrix computed eagerly when the
//! op is recorded. [`Tape::backward`] walks the nodes in reverse and applies
//! the closed-form adjoint of each op, depositing parameter gradients into
//! the stores passed in.

use crate::engine::param::{ParamRef, Params, ParamsMut};
use crate::error::{Error, Result};
use crate::exec::{for_each_row_chunk, Exec};
use crate::real::Real;

pub type NodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    Identity,
    #[default]
    Relu,
    Sigmoid,
    Softplus,
    Tanh,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Softplus => "softplus",
            Activation::Tanh => "tanh",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "identity" | "none" => Activation::Identity,
            "relu" => Activation::Relu,
            "sigmoid" => Activation::Sigmoid,
            "softplus" => Activation::Softplus,
            "tanh" => Activation::Tanh,
            _ => return None,
        })
    }

    #[inline]
    pub fn apply<T: Real>(self, x: T) -> T {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(T::zero()),
            Activation::Sigmoid => sigmoid(x),
            Activation::Softplus => softplus(x),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative given the input `x` and output `y`.
    #[inline]
    fn derivative<T: Real>(self, x: T, y: T) -> T {
        match self {
            Activation::Identity => T::one(),
            Activation::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Sigmoid => y * (T::one() - y),
            Activation::Softplus => sigmoid(x),
            Activation::Tanh => T::one() - y * y,
        }
    }
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
pub fn softplus<T: Real>(x: T) -> T {
    // log(1 + e^x) without overflow
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

/// Interpolated lookup into a channel-last parameter table.
///
/// Row `r` of the output is `sum_j weight[r, j] * table[index[r, j], :]`.
/// With `broadcast`, the table stores a single channel that is replicated
/// across all `out_channels` outputs.
#[derive(Debug, Clone)]
pub struct Gather<T> {
    pub param: ParamRef,
    pub corners: usize,
    pub index: Vec<u32>,
    pub weight: Vec<T>,
    pub out_channels: usize,
    pub broadcast: bool,
}

#[derive(Debug, Clone)]
enum Op<T> {
    Input,
    Param(ParamRef),
    Gather(Gather<T>),
    Linear {
        x: NodeId,
        weight: ParamRef,
        bias: Option<ParamRef>,
    },
    Act {
        x: NodeId,
        act: Activation,
    },
    ColAct {
        x: NodeId,
        acts: Vec<Activation>,
    },
    Mul {
        a: NodeId,
        b: NodeId,
    },
    Concat {
        parts: Vec<NodeId>,
    },
    ColScale {
        x: NodeId,
        scale: Vec<T>,
    },
    Square(NodeId),
    Sum(NodeId),
    Mse {
        x: NodeId,
        target: Vec<T>,
    },
    Composite {
        x: NodeId,
        deltas: Vec<T>,
        samples: usize,
        background: [T; 3],
    },
}

#[derive(Debug, Clone)]
struct Node<T> {
    rows: usize,
    cols: usize,
    value: Vec<T>,
    op: Op<T>,
}

#[derive(Debug, Clone, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    exec: Exec,
}

impl<T: Real> Tape<T> {
    pub fn new(exec: Exec) -> Self {
        Self {
            nodes: Vec::new(),
            exec,
        }
    }

    pub fn exec(&self) -> Exec {
        self.exec
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &[T] {
        &self.nodes[id].value
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        (self.nodes[id].rows, self.nodes[id].cols)
    }

    pub fn take_value(&mut self, id: NodeId) -> Vec<T> {
        std::mem::take(&mut self.nodes[id].value)
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<T>, op: Op<T>) -> NodeId {
        debug_assert_eq!(rows * cols, value.len());
        self.nodes.push(Node { rows, cols, value, op });
        self.nodes.len() - 1
    }

    /// Constant data; no gradient flows into it.
    pub fn input(&mut self, rows: usize, cols: usize, value: Vec<T>) -> Result<NodeId> {
        if rows * cols != value.len() {
            return Err(Error::Shape(format!(
                "input declared {rows}x{cols} but holds {} values",
                value.len()
            )));
        }
        Ok(self.push(rows, cols, value, Op::Input))
    }

    /// A whole parameter tensor as a `1 x n` node.
    pub fn param(&mut self, params: Params<'_, T>, p: ParamRef) -> NodeId {
        let v = params.get(p).values.clone();
        let n = v.len();
        self.push(1, n, v, Op::Param(p))
    }

    pub fn gather(&mut self, params: Params<'_, T>, g: Gather<T>) -> Result<NodeId> {
        let table = &params.get(g.param).values;
        let stored = if g.broadcast { 1 } else { g.out_channels };
        if g.corners == 0 || g.index.len() % g.corners != 0 || g.index.len() != g.weight.len() {
            return Err(Error::Shape("gather index/weight layout".into()));
        }
        let rows = g.index.len() / g.corners;
        let slots = table.len() / stored.max(1);
        if let Some(&bad) = g.index.iter().find(|&&i| i as usize >= slots) {
            return Err(Error::Shape(format!("gather slot {bad} out of range ({slots})")));
        }
        let oc = g.out_channels;
        let mut out = vec![T::zero(); rows * oc];
        {
            let (index, weight, corners, broadcast) = (&g.index, &g.weight, g.corners, g.broadcast);
            for_each_row_chunk(self.exec, &mut out, oc, |first, chunk| {
                for (r, row) in chunk.chunks_mut(oc).enumerate() {
                    let base = (first + r) * corners;
                    for j in 0..corners {
                        let w = weight[base + j];
                        if w == T::zero() {
                            continue;
                        }
                        let slot = index[base + j] as usize;
                        if broadcast {
                            let v = w * table[slot];
                            row.iter_mut().for_each(|o| *o += v);
                        } else {
                            let src = &table[slot * oc..slot * oc + oc];
                            for (o, &s) in row.iter_mut().zip(src) {
                                *o += w * s;
                            }
                        }
                    }
                }
            });
        }
        Ok(self.push(rows, oc, out, Op::Gather(g)))
    }

    /// `y = x W^T + b` with `W` stored as `[out, in]`.
    pub fn linear(
        &mut self,
        params: Params<'_, T>,
        x: NodeId,
        weight: ParamRef,
        bias: Option<ParamRef>,
    ) -> Result<NodeId> {
        let w = params.get(weight);
        if w.shape.len() != 2 {
            return Err(Error::Shape(format!("linear weight `{}` must be 2-D", w.name)));
        }
        let (out_dim, in_dim) = (w.shape[0], w.shape[1]);
        let (rows, cols) = self.shape(x);
        if cols != in_dim {
            return Err(Error::Shape(format!(
                "linear `{}` expects {in_dim} inputs, got {cols}",
                w.name
            )));
        }
        let b = match bias {
            Some(b) => {
                let b = &params.get(b).values;
                if b.len() != out_dim {
                    return Err(Error::Shape("linear bias length".into()));
                }
                Some(b.as_slice())
            }
            None => None,
        };
        let xv = &self.nodes[x].value;
        let wv = &w.values;
        let mut out = vec![T::zero(); rows * out_dim];
        for_each_row_chunk(self.exec, &mut out, out_dim, |first, chunk| {
            let m = chunk.len() / out_dim;
            let xs = &xv[first * in_dim..(first + m) * in_dim];
            if let Some(b) = b {
                for row in chunk.chunks_mut(out_dim) {
                    row.copy_from_slice(b);
                }
            }
            let beta = if b.is_some() { T::one() } else { T::zero() };
            T::gemm(
                m,
                in_dim,
                out_dim,
                T::one(),
                xs,
                (in_dim, 1),
                wv,
                (1, in_dim),
                beta,
                chunk,
                (out_dim, 1),
            );
        });
        Ok(self.push(rows, out_dim, out, Op::Linear { x, weight, bias }))
    }

    pub fn act(&mut self, x: NodeId, act: Activation) -> NodeId {
        let (rows, cols) = self.shape(x);
        let mut out = self.nodes[x].value.clone();
        if act != Activation::Identity {
            for_each_row_chunk(self.exec, &mut out, cols.max(1), |_, chunk| {
                chunk.iter_mut().for_each(|v| *v = act.apply(*v));
            });
        }
        self.push(rows, cols, out, Op::Act { x, act })
    }

    /// Per-column activations; `acts.len()` must equal the column count.
    pub fn col_act(&mut self, x: NodeId, acts: Vec<Activation>) -> Result<NodeId> {
        let (rows, cols) = self.shape(x);
        if acts.len() != cols {
            return Err(Error::Shape("column activation count".into()));
        }
        let mut out = self.nodes[x].value.clone();
        for_each_row_chunk(self.exec, &mut out, cols, |_, chunk| {
            for row in chunk.chunks_mut(cols) {
                for (v, a) in row.iter_mut().zip(&acts) {
                    *v = a.apply(*v);
                }
            }
        });
        Ok(self.push(rows, cols, out, Op::ColAct { x, acts }))
    }

    /// Element-wise (Hadamard) product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ra, ca) = self.shape(a);
        if self.shape(b) != (ra, ca) {
            return Err(Error::Shape(format!(
                "hadamard product of {:?} and {:?}",
                (ra, ca),
                self.shape(b)
            )));
        }
        let out: Vec<T> = self.nodes[a]
            .value
            .iter()
            .zip(&self.nodes[b].value)
            .map(|(&x, &y)| x * y)
            .collect();
        Ok(self.push(ra, ca, out, Op::Mul { a, b }))
    }

    /// Column-wise concatenation of nodes with equal row counts.
    pub fn concat(&mut self, parts: Vec<NodeId>) -> Result<NodeId> {
        let Some(&first) = parts.first() else {
            return Err(Error::Shape("concat of nothing".into()));
        };
        if parts.len() == 1 {
            return Ok(first);
        }
        let rows = self.nodes[first].rows;
        if parts.iter().any(|&p| self.nodes[p].rows != rows) {
            return Err(Error::Shape("concat row mismatch".into()));
        }
        let cols: usize = parts.iter().map(|&p| self.nodes[p].cols).sum();
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in &parts {
                let c = self.nodes[p].cols;
                out.extend_from_slice(&self.nodes[p].value[r * c..(r + 1) * c]);
            }
        }
        Ok(self.push(rows, cols, out, Op::Concat { parts }))
    }

    /// Multiplies column `c` of every row by `scale[c]`.
    pub fn col_scale(&mut self, x: NodeId, scale: Vec<T>) -> Result<NodeId> {
        let (rows, cols) = self.shape(x);
        if scale.len() != cols {
            return Err(Error::Shape("column scale length".into()));
        }
        let mut out = self.nodes[x].value.clone();
        for row in out.chunks_mut(cols.max(1)) {
            for (v, &s) in row.iter_mut().zip(&scale) {
                *v *= s;
            }
        }
        Ok(self.push(rows, cols, out, Op::ColScale { x, scale }))
    }

    pub fn square(&mut self, x: NodeId) -> NodeId {
        let (rows, cols) = self.shape(x);
        let out = self.nodes[x].value.iter().map(|&v| v * v).collect();
        self.push(rows, cols, out, Op::Square(x))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s = self.nodes[x].value.iter().copied().sum();
        self.push(1, 1, vec![s], Op::Sum(x))
    }

    /// Mean of squared differences over every element.
    pub fn mse(&mut self, x: NodeId, target: Vec<T>) -> Result<NodeId> {
        let n = self.nodes[x].value.len();
        if target.len() != n || n == 0 {
            return Err(Error::Shape(format!(
                "mse target has {} values, prediction {n}",
                target.len()
            )));
        }
        let s: T = self.nodes[x]
            .value
            .iter()
            .zip(&target)
            .map(|(&p, &t)| (p - t) * (p - t))
            .sum();
        let loss = s / T::of(n as f64);
        Ok(self.push(1, 1, vec![loss], Op::Mse { x, target }))
    }

    /// Alpha-composites `samples` consecutive rows of `(sigma, r, g, b)` per
    /// ray into one RGB row, blending the residual transmittance with
    /// `background`.
    pub fn composite(&mut self, x: NodeId, deltas: Vec<T>, samples: usize, background: [T; 3]) -> Result<NodeId> {
        let (rows, cols) = self.shape(x);
        if cols != 4 || samples == 0 || rows % samples != 0 || deltas.len() != rows {
            return Err(Error::Shape(
                "composite expects (rays*samples) x 4 and one delta per sample".into(),
            ));
        }
        let rays = rows / samples;
        let xv = &self.nodes[x].value;
        let mut out = vec![T::zero(); rays * 3];
        for_each_row_chunk(self.exec, &mut out, 3, |first, chunk| {
            for (r, px) in chunk.chunks_mut(3).enumerate() {
                let ray = first + r;
                let s0 = ray * samples;
                let rgb = composite_ray(
                    &xv[s0 * 4..(s0 + samples) * 4],
                    &deltas[s0..s0 + samples],
                    background,
                    None,
                );
                px.copy_from_slice(&rgb);
            }
        });
        Ok(self.push(
            rays,
            3,
            out,
            Op::Composite {
                x,
                deltas,
                samples,
                background,
            },
        ))
    }

    /// Reverse sweep from the scalar node `loss`, accumulating into the
    /// parameter gradient buffers.
    pub fn backward(&self, loss: NodeId, params: &mut ParamsMut<'_, T>) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::Graph(
                "backward called before any forward op was recorded".into(),
            ));
        }
        let Some(node) = self.nodes.get(loss) else {
            return Err(Error::Graph(format!("node {loss} was never recorded")));
        };
        if node.rows * node.cols != 1 {
            return Err(Error::Graph("backward needs a scalar loss node".into()));
        }
        let mut adj: Vec<Option<Vec<T>>> = vec![None; loss + 1];
        adj[loss] = Some(vec![T::one()]);
        for id in (0..=loss).rev() {
            let Some(g) = adj[id].take() else {
                continue;
            };
            self.backprop_node(id, &g, &mut adj, params)?;
        }
        Ok(())
    }

    fn backprop_node(
        &self,
        id: NodeId,
        g: &[T],
        adj: &mut [Option<Vec<T>>],
        params: &mut ParamsMut<'_, T>,
    ) -> Result<()> {
        let node = &self.nodes[id];
        let exec = self.exec;
        match &node.op {
            Op::Input => {}
            Op::Param(p) => {
                let t = params.get_mut(*p);
                for (d, &s) in t.grad.iter_mut().zip(g) {
                    *d += s;
                }
            }
            Op::Gather(gs) => {
                let t = params.get_mut(gs.param);
                let oc = gs.out_channels;
                let grad = &mut t.grad;
                for r in 0..node.rows {
                    let gr = &g[r * oc..(r + 1) * oc];
                    let base = r * gs.corners;
                    let gsum = if gs.broadcast {
                        gr.iter().copied().sum()
                    } else {
                        T::zero()
                    };
                    for j in 0..gs.corners {
                        let w = gs.weight[base + j];
                        if w == T::zero() {
                            continue;
                        }
                        let slot = gs.index[base + j] as usize;
                        if gs.broadcast {
                            grad[slot] += w * gsum;
                        } else {
                            for (d, &s) in grad[slot * oc..slot * oc + oc].iter_mut().zip(gr) {
                                *d += w * s;
                            }
                        }
                    }
                }
            }
            Op::Linear { x, weight, bias } => {
                let (rows, in_dim) = self.shape(*x);
                let out_dim = node.cols;
                let xv = &self.nodes[*x].value;
                if let Some(b) = bias {
                    let bt = params.get_mut(*b);
                    for row in g.chunks(out_dim) {
                        for (d, &s) in bt.grad.iter_mut().zip(row) {
                            *d += s;
                        }
                    }
                }
                let wt = params.get_mut(*weight);
                // dW += dY^T X
                T::gemm(
                    out_dim,
                    rows,
                    in_dim,
                    T::one(),
                    g,
                    (1, out_dim),
                    xv,
                    (in_dim, 1),
                    T::one(),
                    &mut wt.grad,
                    (in_dim, 1),
                );
                if self.wants_grad(*x) {
                    let wv = &wt.values;
                    let dx = slot(adj, *x, rows * in_dim);
                    for_each_row_chunk(exec, dx, in_dim, |first, chunk| {
                        let m = chunk.len() / in_dim;
                        let gs = &g[first * out_dim..(first + m) * out_dim];
                        T::gemm(
                            m,
                            out_dim,
                            in_dim,
                            T::one(),
                            gs,
                            (out_dim, 1),
                            wv,
                            (in_dim, 1),
                            T::one(),
                            chunk,
                            (in_dim, 1),
                        );
                    });
                }
            }
            Op::Act { x, act } => {
                if self.wants_grad(*x) {
                    let xv = &self.nodes[*x].value;
                    let yv = &node.value;
                    let dx = slot(adj, *x, xv.len());
                    for (((d, &gi), &xi), &yi) in dx.iter_mut().zip(g).zip(xv).zip(yv) {
                        *d += gi * act.derivative(xi, yi);
                    }
                }
            }
            Op::ColAct { x, acts } => {
                if self.wants_grad(*x) {
                    let cols = node.cols;
                    let xv = &self.nodes[*x].value;
                    let yv = &node.value;
                    let dx = slot(adj, *x, xv.len());
                    for (i, d) in dx.iter_mut().enumerate() {
                        *d += g[i] * acts[i % cols].derivative(xv[i], yv[i]);
                    }
                }
            }
            Op::Mul { a, b } => {
                let (av, bv) = (&self.nodes[*a].value, &self.nodes[*b].value);
                if a == b {
                    if self.wants_grad(*a) {
                        let da = slot(adj, *a, av.len());
                        for ((d, &gi), &x) in da.iter_mut().zip(g).zip(av) {
                            *d += T::of(2.0) * gi * x;
                        }
                    }
                } else {
                    if self.wants_grad(*a) {
                        let da = slot(adj, *a, av.len());
                        for ((d, &gi), &y) in da.iter_mut().zip(g).zip(bv) {
                            *d += gi * y;
                        }
                    }
                    if self.wants_grad(*b) {
                        let db = slot(adj, *b, bv.len());
                        for ((d, &gi), &x) in db.iter_mut().zip(g).zip(av) {
                            *d += gi * x;
                        }
                    }
                }
            }
            Op::Concat { parts } => {
                let mut offset = 0;
                for &p in parts {
                    let c = self.nodes[p].cols;
                    if self.wants_grad(p) {
                        let dp = slot(adj, p, self.nodes[p].value.len());
                        for r in 0..node.rows {
                            let src = &g[r * node.cols + offset..r * node.cols + offset + c];
                            for (d, &s) in dp[r * c..(r + 1) * c].iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                    }
                    offset += c;
                }
            }
            Op::ColScale { x, scale } => {
                if self.wants_grad(*x) {
                    let cols = node.cols;
                    let dx = slot(adj, *x, g.len());
                    for (i, d) in dx.iter_mut().enumerate() {
                        *d += g[i] * scale[i % cols];
                    }
                }
            }
            Op::Square(x) => {
                if self.wants_grad(*x) {
                    let xv = &self.nodes[*x].value;
                    let dx = slot(adj, *x, xv.len());
                    for ((d, &gi), &v) in dx.iter_mut().zip(g).zip(xv) {
                        *d += T::of(2.0) * gi * v;
                    }
                }
            }
            Op::Sum(x) => {
                if self.wants_grad(*x) {
                    let n = self.nodes[*x].value.len();
                    let dx = slot(adj, *x, n);
                    dx.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::Mse { x, target } => {
                if self.wants_grad(*x) {
                    let xv = &self.nodes[*x].value;
                    let scale = T::of(2.0) * g[0] / T::of(xv.len() as f64);
                    let dx = slot(adj, *x, xv.len());
                    for ((d, &p), &t) in dx.iter_mut().zip(xv).zip(target) {
                        *d += scale * (p - t);
                    }
                }
            }
            Op::Composite {
                x,
                deltas,
                samples,
                background,
            } => {
                if self.wants_grad(*x) {
                    let xv = &self.nodes[*x].value;
                    let n = *samples;
                    let bg = *background;
                    let dx = slot(adj, *x, xv.len());
                    for_each_row_chunk(exec, dx, 4 * n, |first, chunk| {
                        for (r, dray) in chunk.chunks_mut(4 * n).enumerate() {
                            let ray = first + r;
                            let s0 = ray * n;
                            composite_ray_backward(
                                &xv[s0 * 4..(s0 + n) * 4],
                                &deltas[s0..s0 + n],
                                bg,
                                &g[ray * 3..ray * 3 + 3],
                                dray,
                            );
                        }
                    });
                }
            }
        }
        Ok(())
    }

    /// Whether gradients can reach a parameter through `id`.
    fn wants_grad(&self, id: NodeId) -> bool {
        !matches!(self.nodes[id].op, Op::Input)
    }
}

fn slot<T: Real>(adj: &mut [Option<Vec<T>>], id: NodeId, len: usize) -> &mut Vec<T> {
    adj[id].get_or_insert_with(|| vec![T::zero(); len])
}

/// Composites one ray of `(sigma, r, g, b)` samples.
///
/// When `weights` is given it receives `T_i * alpha_i` per sample followed by
/// the residual transmittance.
pub fn composite_ray<T: Real>(
    samples: &[T],
    deltas: &[T],
    background: [T; 3],
    mut weights: Option<&mut Vec<T>>,
) -> [T; 3] {
    let mut trans = T::one();
    let mut rgb = [T::zero(); 3];
    if let Some(w) = weights.as_deref_mut() {
        w.clear();
    }
    for (s, &delta) in samples.chunks(4).zip(deltas) {
        let decay = (-s[0] * delta).exp();
        let alpha = T::one() - decay;
        let w = trans * alpha;
        for c in 0..3 {
            rgb[c] += w * s[c + 1];
        }
        if let Some(ws) = weights.as_deref_mut() {
            ws.push(w);
        }
        trans *= decay;
    }
    for c in 0..3 {
        rgb[c] += trans * background[c];
    }
    if let Some(ws) = weights {
        ws.push(trans);
    }
    rgb
}

/// Adjoint of [`composite_ray`] with respect to every sample's
/// `(sigma, r, g, b)`, accumulated into `out`.
///
/// Uses `d c / d sigma_i = delta_i * (T_{i+1} c_i - S_{i+1})` where `S_{i+1}`
/// is the colour contributed by everything behind sample `i`, including the
/// background.
fn composite_ray_backward<T: Real>(samples: &[T], deltas: &[T], background: [T; 3], g: &[T], out: &mut [T]) {
    let n = deltas.len();
    let mut trans_after = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    let mut trans = T::one();
    for (s, &delta) in samples.chunks(4).zip(deltas) {
        let decay = (-s[0] * delta).exp();
        weights.push(trans * (T::one() - decay));
        trans *= decay;
        trans_after.push(trans);
    }
    // colour from behind, starting with the background
    let mut behind = [trans * background[0], trans * background[1], trans * background[2]];
    for i in (0..n).rev() {
        let s = &samples[i * 4..i * 4 + 4];
        let mut dsigma = T::zero();
        for c in 0..3 {
            dsigma += g[c] * (trans_after[i] * s[c + 1] - behind[c]);
        }
        let o = &mut out[i * 4..i * 4 + 4];
        o[0] += deltas[i] * dsigma;
        for c in 0..3 {
            o[c + 1] += weights[i] * g[c];
            behind[c] += weights[i] * s[c + 1];
        }
    }
}
