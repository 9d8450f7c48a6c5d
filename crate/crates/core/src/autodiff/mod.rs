//! Tape-based reverse-mode differentiation over dense [`Tensor`]s.
//!
//! Forward values are computed eagerly as ops are recorded; [`Tape::backward`]
//! walks the tape in reverse and accumulates adjoints. A tape is
//! single-threaded; distinct tapes are independent.
//!
//! ```
//! use barrier_ext::autodiff::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Tensor::scalar(3.0));
//! let y = tape.mul(x, x).unwrap();
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.wrt(x).unwrap().item(), Some(6.0));
//! ```

mod check;
mod tensor;

use std::sync::atomic::{AtomicU64, Ordering};

pub use check::grad_check;
pub use tensor::Tensor;

use crate::barrier::HandlerKind;
use crate::error::{Error, Result};

static NEXT_TAPE: AtomicU64 = AtomicU64::new(0);

/// Handle to a node on a specific [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Exp(usize),
    Log(usize),
    Relu(usize),
    Sum(usize),
    Matmul(usize, usize),
    IndexSelect {
        input: usize,
        axis: usize,
        indices: Vec<usize>,
    },
    ScalarMul(usize, f64),
    AddScalar(usize),
    SoftmaxRows {
        input: usize,
        temperature: f64,
    },
    AddRow(usize, usize),
    Reshape(usize),
    Concat(Vec<usize>),
    Handler {
        input: usize,
        kind: HandlerKind,
        t: f64,
    },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    /// Whether any trainable leaf feeds this node.
    requires_grad: bool,
}

impl Op {
    fn inputs(&self) -> Vec<usize> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) | Op::Matmul(a, b) | Op::AddRow(a, b) => {
                vec![*a, *b]
            }
            Op::Exp(x)
            | Op::Log(x)
            | Op::Relu(x)
            | Op::Sum(x)
            | Op::ScalarMul(x, _)
            | Op::AddScalar(x)
            | Op::Reshape(x)
            | Op::IndexSelect { input: x, .. }
            | Op::SoftmaxRows { input: x, .. }
            | Op::Handler { input: x, .. } => vec![*x],
            Op::Concat(xs) => xs.clone(),
        }
    }
}

#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    checked: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Elementwise binary operands: equal shapes, or one side holding a single
/// element that broadcasts over the other.
#[derive(Debug, Clone, Copy)]
enum Broadcast {
    Same,
    Left,
    Right,
}

fn broadcast(op: &'static str, a: &Tensor, b: &Tensor) -> Result<(Broadcast, Vec<usize>)> {
    if a.shape() == b.shape() {
        Ok((Broadcast::Same, a.shape().to_vec()))
    } else if a.numel() == 1 {
        Ok((Broadcast::Left, b.shape().to_vec()))
    } else if b.numel() == 1 {
        Ok((Broadcast::Right, a.shape().to_vec()))
    } else {
        Err(Error::Shape {
            op,
            detail: format!("{:?} vs {:?}", a.shape(), b.shape()),
        })
    }
}

fn zip_with(a: &Tensor, b: &Tensor, mode: Broadcast, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    match mode {
        Broadcast::Same => a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
        Broadcast::Left => {
            let x = a.data()[0];
            b.data().iter().map(|&y| f(x, y)).collect()
        }
        Broadcast::Right => {
            let y = b.data()[0];
            a.data().iter().map(|&x| f(x, y)).collect()
        }
    }
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    out
}

impl Tape {
    /// A tape with NaN/Inf and domain guards enabled.
    pub fn new() -> Self {
        Self::with_checks(true)
    }

    /// A tape without guards; invalid arithmetic propagates as NaN/Inf.
    pub fn unchecked() -> Self {
        Self::with_checks(false)
    }

    fn with_checks(checked: bool) -> Self {
        Self {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            checked,
        }
    }

    pub fn is_checked(&self) -> bool {
        self.checked
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A trainable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.append_node(Op::Leaf, value, true)
    }

    /// A fixed input; no adjoint is computed for it or for anything that
    /// depends on fixed inputs only.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.append_node(Op::Leaf, value, false)
    }

    pub fn constant(&mut self, value: f64) -> Var {
        self.input(Tensor::scalar(value))
    }

    pub fn value(&self, v: Var) -> Result<&Tensor> {
        self.index(v).map(|i| &self.nodes[i].value)
    }

    /// Value of a single-element node.
    pub fn scalar(&self, v: Var) -> Result<f64> {
        let t = self.value(v)?;
        t.item().ok_or_else(|| Error::Shape {
            op: "scalar",
            detail: format!("expected one element, got shape {:?}", t.shape()),
        })
    }

    fn index(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(Error::ForeignVar);
        }
        Ok(v.index)
    }

    fn append(&mut self, op: Op, value: Tensor) -> Var {
        let requires_grad = op.inputs().into_iter().any(|j| self.nodes[j].requires_grad);
        self.append_node(op, value, requires_grad)
    }

    fn append_node(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        let index = self.nodes.len();
        self.nodes.push(Node { op, value, requires_grad });
        Var {
            tape: self.id,
            index,
        }
    }

    fn push(&mut self, op_name: &'static str, op: Op, shape: Vec<usize>, data: Vec<f64>) -> Result<Var> {
        if self.checked && data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: op_name });
        }
        let value = Tensor::new_unchecked(shape, data)?;
        Ok(self.append(op, value))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        make: fn(usize, usize) -> Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        let (ia, ib) = (self.index(a)?, self.index(b)?);
        let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        let (mode, shape) = broadcast(name, va, vb)?;
        let data = zip_with(va, vb, mode, f);
        self.push(name, make(ia, ib), shape, data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, Op::Add, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, Op::Sub, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, Op::Mul, |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, Op::Div, |x, y| x / y)
    }

    fn unary(&mut self, name: &'static str, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let i = self.index(x)?;
        let v = &self.nodes[i].value;
        let shape = v.shape().to_vec();
        let data = v.data().iter().map(|&z| f(z)).collect();
        self.push(name, op, shape, data)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        let i = self.index(x)?;
        self.unary("exp", x, Op::Exp(i), f64::exp)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        let i = self.index(x)?;
        if self.checked {
            if let Some(&bad) = self.nodes[i].value.data().iter().find(|&&z| z <= 0.0) {
                return Err(Error::Domain {
                    op: "log",
                    value: bad,
                });
            }
        }
        self.unary("log", x, Op::Log(i), f64::ln)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let i = self.index(x)?;
        self.unary("relu", x, Op::Relu(i), |z| z.max(0.0))
    }

    pub fn scalar_mul(&mut self, x: Var, c: f64) -> Result<Var> {
        let i = self.index(x)?;
        self.unary("scalar_mul", x, Op::ScalarMul(i, c), |z| c * z)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        let i = self.index(x)?;
        self.unary("add_scalar", x, Op::AddScalar(i), |z| z + c)
    }

    /// Elementwise constraint handler `h(z)` at hardness `t`.
    pub fn handler(&mut self, x: Var, kind: HandlerKind, t: f64) -> Result<Var> {
        let i = self.index(x)?;
        let v = &self.nodes[i].value;
        let mut data = Vec::with_capacity(v.numel());
        for &z in v.data() {
            data.push(match kind.value(z, t) {
                Ok(h) => h,
                Err(e) if self.checked => return Err(e),
                Err(_) => f64::INFINITY,
            });
        }
        let shape = v.shape().to_vec();
        self.push("handler", Op::Handler { input: i, kind, t }, shape, data)
    }

    /// Sum of all entries, as a rank-0 scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let i = self.index(x)?;
        let s = self.nodes[i].value.data().iter().sum();
        self.push("sum", Op::Sum(i), Vec::new(), vec![s])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.index(a)?, self.index(b)?);
        let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        let dims = va.dims2().zip(vb.dims2());
        let ((m, k), (k2, n)) = match dims {
            Some(d) if d.0 .1 == d.1 .0 => d,
            _ => {
                return Err(Error::Shape {
                    op: "matmul",
                    detail: format!("{:?} x {:?}", va.shape(), vb.shape()),
                })
            }
        };
        debug_assert_eq!(k, k2);
        let data = matmul_raw(va.data(), vb.data(), m, k, n);
        self.push("matmul", Op::Matmul(ia, ib), vec![m, n], data)
    }

    /// Select entries of a vector (`axis` 0), or rows (`axis` 0) / columns
    /// (`axis` 1) of a matrix.
    pub fn index_select(&mut self, x: Var, axis: usize, indices: &[usize]) -> Result<Var> {
        let i = self.index(x)?;
        let v = &self.nodes[i].value;
        let (shape, data) = match (v.shape(), axis) {
            (&[n], 0) => {
                check_indices(indices, n)?;
                (vec![indices.len()], indices.iter().map(|&j| v.data()[j]).collect())
            }
            (&[r, c], 0) => {
                check_indices(indices, r)?;
                let mut data = Vec::with_capacity(indices.len() * c);
                for &j in indices {
                    data.extend_from_slice(&v.data()[j * c..(j + 1) * c]);
                }
                (vec![indices.len(), c], data)
            }
            (&[r, c], 1) => {
                check_indices(indices, c)?;
                let mut data = Vec::with_capacity(indices.len() * r);
                for row in v.data().chunks_exact(c) {
                    data.extend(indices.iter().map(|&j| row[j]));
                }
                (vec![r, indices.len()], data)
            }
            (shape, _) => {
                return Err(Error::Shape {
                    op: "index_select",
                    detail: format!("axis {axis} of shape {shape:?}"),
                })
            }
        };
        let op = Op::IndexSelect {
            input: i,
            axis,
            indices: indices.to_vec(),
        };
        self.push("index_select", op, shape, data)
    }

    /// Row-wise softmax of `temperature * x` for a rank-2 input.
    pub fn softmax_rows(&mut self, x: Var, temperature: f64) -> Result<Var> {
        let i = self.index(x)?;
        let v = &self.nodes[i].value;
        let Some((rows, cols)) = v.dims2() else {
            return Err(Error::Shape {
                op: "softmax_rows",
                detail: format!("rank-2 input required, got {:?}", v.shape()),
            });
        };
        let mut data = vec![0.0; rows * cols];
        for (out, row) in data.chunks_exact_mut(cols.max(1)).zip(v.data().chunks_exact(cols.max(1))) {
            softmax_row(row, temperature, out);
        }
        let op = Op::SoftmaxRows {
            input: i,
            temperature,
        };
        self.push("softmax_rows", op, vec![rows, cols], data)
    }

    /// Matrix plus a row vector broadcast over every row.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (ix, ir) = (self.index(x)?, self.index(row)?);
        let (vx, vr) = (&self.nodes[ix].value, &self.nodes[ir].value);
        let cols = match vx.dims2() {
            Some((_, c)) if vr.numel() == c => c,
            _ => {
                return Err(Error::Shape {
                    op: "add_row",
                    detail: format!("{:?} + row {:?}", vx.shape(), vr.shape()),
                })
            }
        };
        let mut data = vx.data().to_vec();
        for chunk in data.chunks_exact_mut(cols.max(1)) {
            for (d, &b) in chunk.iter_mut().zip(vr.data()) {
                *d += b;
            }
        }
        let shape = vx.shape().to_vec();
        self.push("add_row", Op::AddRow(ix, ir), shape, data)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let i = self.index(x)?;
        let v = &self.nodes[i].value;
        if shape.iter().product::<usize>() != v.numel() {
            return Err(Error::Shape {
                op: "reshape",
                detail: format!("{:?} -> {shape:?}", v.shape()),
            });
        }
        let data = v.data().to_vec();
        self.push("reshape", Op::Reshape(i), shape.to_vec(), data)
    }

    /// Flatten and concatenate the inputs into one vector.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let idx = xs.iter().map(|&x| self.index(x)).collect::<Result<Vec<_>>>()?;
        let data: Vec<f64> = idx
            .iter()
            .flat_map(|&i| self.nodes[i].value.data().iter().copied())
            .collect();
        let n = data.len();
        self.push("concat", Op::Concat(idx), vec![n], data)
    }

    /// Reverse accumulation from a scalar output with unit seed.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        self.backward_with_seed(output, 1.0)
    }

    pub fn backward_with_seed(&self, output: Var, seed: f64) -> Result<Gradients> {
        let out = self.index(output)?;
        let out_value = &self.nodes[out].value;
        if out_value.numel() != 1 {
            return Err(Error::NonScalarOutput {
                shape: out_value.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; out + 1];
        grads[out] = Some(vec![seed]);

        for i in (0..=out).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }

        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, node)| g.map(|g| Tensor::new_unchecked(node.value.shape().to_vec(), g).expect("adjoint shape")))
            .collect();
        Ok(Gradients {
            tape: self.id,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
            grads,
        })
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let node = &self.nodes[i];
        let val = |j: usize| &self.nodes[j].value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                let mode = broadcast("add", val(*a), val(*b))?.0;
                accumulate_binary(grads, *a, *b, mode, g.to_vec(), g.to_vec(), val(*a).numel(), val(*b).numel());
            }
            Op::Sub(a, b) => {
                let mode = broadcast("sub", val(*a), val(*b))?.0;
                let neg = g.iter().map(|v| -v).collect();
                accumulate_binary(grads, *a, *b, mode, g.to_vec(), neg, val(*a).numel(), val(*b).numel());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let mode = broadcast("mul", va, vb)?.0;
                let ga = elementwise(g, vb, mode, Side::Right, |g, y| g * y);
                let gb = elementwise(g, va, mode, Side::Left, |g, x| g * x);
                accumulate_binary(grads, *a, *b, mode, ga, gb, va.numel(), vb.numel());
            }
            Op::Div(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let mode = broadcast("div", va, vb)?.0;
                let ga = elementwise(g, vb, mode, Side::Right, |g, y| g / y);
                // d(x/y)/dy = -x/y² = -out/y
                let out = &node.value;
                let gb: Vec<f64> = match mode {
                    Broadcast::Same | Broadcast::Left => g
                        .iter()
                        .zip(out.data())
                        .zip(vb.data().iter().cycle())
                        .map(|((g, o), y)| -g * o / y)
                        .collect(),
                    Broadcast::Right => {
                        let y = vb.data()[0];
                        g.iter().zip(out.data()).map(|(g, o)| -g * o / y).collect()
                    }
                };
                accumulate_binary(grads, *a, *b, mode, ga, gb, va.numel(), vb.numel());
            }
            Op::Exp(x) => {
                let gx = g.iter().zip(node.value.data()).map(|(g, e)| g * e).collect();
                accumulate(grads, *x, gx);
            }
            Op::Log(x) => {
                let gx = g.iter().zip(val(*x).data()).map(|(g, z)| g / z).collect();
                accumulate(grads, *x, gx);
            }
            Op::Relu(x) => {
                let gx = g
                    .iter()
                    .zip(val(*x).data())
                    .map(|(g, &z)| if z > 0.0 { *g } else { 0.0 })
                    .collect();
                accumulate(grads, *x, gx);
            }
            Op::Sum(x) => {
                accumulate(grads, *x, vec![g[0]; val(*x).numel()]);
            }
            Op::Matmul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let (m, k) = va.dims2().expect("matmul lhs");
                let (_, n) = vb.dims2().expect("matmul rhs");
                if self.nodes[*a].requires_grad {
                    // dA = G Bᵀ
                    let mut ga = vec![0.0; m * k];
                    for r in 0..m {
                        let grow = &g[r * n..(r + 1) * n];
                        for p in 0..k {
                            let brow = &vb.data()[p * n..(p + 1) * n];
                            ga[r * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                        }
                    }
                    accumulate(grads, *a, ga);
                }
                if self.nodes[*b].requires_grad {
                    // dB = Aᵀ G
                    let mut gb = vec![0.0; k * n];
                    for r in 0..m {
                        let grow = &g[r * n..(r + 1) * n];
                        for p in 0..k {
                            let arp = va.data()[r * k + p];
                            if arp == 0.0 {
                                continue;
                            }
                            for (o, &gv) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *o += arp * gv;
                            }
                        }
                    }
                    accumulate(grads, *b, gb);
                }
            }
            Op::IndexSelect {
                input,
                axis,
                indices,
            } => {
                let v = val(*input);
                let mut gx = vec![0.0; v.numel()];
                match (v.shape(), *axis) {
                    (&[_], _) => {
                        for (&j, &gv) in indices.iter().zip(g) {
                            gx[j] += gv;
                        }
                    }
                    (&[_, c], 0) => {
                        for (&j, grow) in indices.iter().zip(g.chunks_exact(c.max(1))) {
                            for (o, &gv) in gx[j * c..(j + 1) * c].iter_mut().zip(grow) {
                                *o += gv;
                            }
                        }
                    }
                    (&[_, c], _) => {
                        let w = indices.len();
                        for (r, grow) in g.chunks_exact(w.max(1)).enumerate() {
                            for (&j, &gv) in indices.iter().zip(grow) {
                                gx[r * c + j] += gv;
                            }
                        }
                    }
                    _ => unreachable!("validated at record time"),
                }
                accumulate(grads, *input, gx);
            }
            Op::ScalarMul(x, c) => {
                accumulate(grads, *x, g.iter().map(|v| c * v).collect());
            }
            Op::AddScalar(x) => {
                accumulate(grads, *x, g.to_vec());
            }
            Op::SoftmaxRows { input, temperature } => {
                let s = &node.value;
                let (_, cols) = s.dims2().expect("softmax output");
                let mut gx = vec![0.0; s.numel()];
                for ((out, srow), grow) in gx
                    .chunks_exact_mut(cols.max(1))
                    .zip(s.data().chunks_exact(cols.max(1)))
                    .zip(g.chunks_exact(cols.max(1)))
                {
                    let dot: f64 = srow.iter().zip(grow).map(|(a, b)| a * b).sum();
                    for ((o, &sv), &gv) in out.iter_mut().zip(srow).zip(grow) {
                        *o = temperature * sv * (gv - dot);
                    }
                }
                accumulate(grads, *input, gx);
            }
            Op::AddRow(x, row) => {
                let cols = val(*row).numel();
                let mut gr = vec![0.0; cols];
                for grow in g.chunks_exact(cols.max(1)) {
                    for (o, &gv) in gr.iter_mut().zip(grow) {
                        *o += gv;
                    }
                }
                accumulate(grads, *x, g.to_vec());
                accumulate(grads, *row, gr);
            }
            Op::Reshape(x) => accumulate(grads, *x, g.to_vec()),
            Op::Concat(inputs) => {
                let mut offset = 0;
                for &j in inputs {
                    let n = val(j).numel();
                    accumulate(grads, j, g[offset..offset + n].to_vec());
                    offset += n;
                }
            }
            Op::Handler { input, kind, t } => {
                let mut gx = Vec::with_capacity(g.len());
                for (&gv, &z) in g.iter().zip(val(*input).data()) {
                    let d = match kind.grad(z, *t) {
                        Ok(d) => d,
                        Err(e) if self.checked => return Err(e),
                        Err(_) => f64::NAN,
                    };
                    gx.push(gv * d);
                }
                accumulate(grads, *input, gx);
            }
        }
        Ok(())
    }
}

fn check_indices(indices: &[usize], len: usize) -> Result<()> {
    match indices.iter().find(|&&j| j >= len) {
        Some(&index) => Err(Error::IndexOutOfRange {
            what: "index_select",
            index,
            len,
        }),
        None => Ok(()),
    }
}

pub(crate) fn softmax_row(row: &[f64], temperature: f64, out: &mut [f64]) {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let mut total = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (temperature * (v - max)).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

#[derive(Clone, Copy)]
enum Side {
    Left,
    Right,
}

/// `f(g, other)` where `other` is the operand on `side`, broadcast as needed.
fn elementwise(g: &[f64], other: &Tensor, mode: Broadcast, side: Side, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    let single = matches!(
        (mode, side),
        (Broadcast::Left, Side::Left) | (Broadcast::Right, Side::Right)
    );
    if single {
        let y = other.data()[0];
        g.iter().map(|&gv| f(gv, y)).collect()
    } else {
        g.iter().zip(other.data()).map(|(&gv, &y)| f(gv, y)).collect()
    }
}

#[allow(clippy::too_many_arguments)]
fn accumulate_binary(
    grads: &mut [Option<Vec<f64>>],
    a: usize,
    b: usize,
    mode: Broadcast,
    ga: Vec<f64>,
    gb: Vec<f64>,
    na: usize,
    nb: usize,
) {
    let reduce = |g: Vec<f64>, n: usize| if n == 1 && g.len() != 1 { vec![g.iter().sum()] } else { g };
    match mode {
        Broadcast::Same => {
            accumulate(grads, a, ga);
            accumulate(grads, b, gb);
        }
        Broadcast::Left => {
            accumulate(grads, a, reduce(ga, na));
            accumulate(grads, b, gb);
        }
        Broadcast::Right => {
            accumulate(grads, a, ga);
            accumulate(grads, b, reduce(gb, nb));
        }
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], j: usize, g: Vec<f64>) {
    match &mut grads[j] {
        Some(acc) => {
            for (a, v) in acc.iter_mut().zip(g) {
                *a += v;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

/// Adjoints of every node reachable from the differentiated output.
#[derive(Debug, Clone)]
pub struct Gradients {
    tape: u64,
    shapes: Vec<Vec<usize>>,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// `∂output/∂v`; zeros when `v` does not influence the output.
    pub fn wrt(&self, v: Var) -> Result<Tensor> {
        if v.tape != self.tape || v.index >= self.shapes.len() {
            return Err(Error::ForeignVar);
        }
        Ok(match self.grads.get(v.index).and_then(Option::as_ref) {
            Some(g) => g.clone(),
            None => Tensor::zeros(self.shapes[v.index].clone()),
        })
    }
}
