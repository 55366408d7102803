//! Tape-based reverse-mode differentiation over small dense tensors.
//!
//! A [`Tape`] records every primitive applied during a forward pass as a
//! node whose inputs precede it, so a single reverse sweep in node order
//! propagates cotangents back to the registered parameters. The primitive
//! basis is deliberately small: every model in the zoo and every masked
//! loss is written in terms of these operations, and each backward rule is
//! checked against central finite differences in the tests.
//!
//! ```
//! use hamkit::autodiff::Tape;
//! use hamkit::tensor::Tensor;
//!
//! let mut tape = Tape::new();
//! let w = tape.param("w", &Tensor::scalar(3.0)).unwrap();
//! let loss = tape.square(w).unwrap();
//! let grads = tape.gradients(loss).unwrap();
//! assert_eq!(grads.get("w").unwrap().item(), 6.0);
//! ```

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// A named, learnable tensor with a gradient buffer of the same shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamGroup {
    pub name: String,
    pub value: Tensor,
    #[serde(skip)]
    grad: Option<Tensor>,
}

impl ParamGroup {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        ParamGroup { name: name.into(), value, grad: None }
    }

    /// The gradient from the last backward pass, or zeros if none has run.
    pub fn grad(&self) -> Tensor {
        self.grad.clone().unwrap_or_else(|| Tensor::zeros(self.value.shape()))
    }

    pub fn set_grad(&mut self, grad: Tensor) -> Result<()> {
        if grad.shape() != self.value.shape() {
            return Err(Error::shape(
                "set_grad",
                format!("{}: gradient {:?} vs value {:?}", self.name, grad.shape(), self.value.shape()),
            ));
        }
        self.grad = Some(grad);
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    pub fn numel(&self) -> usize {
        self.value.numel()
    }
}

#[derive(Debug)]
enum Op {
    Constant,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    BroadcastSubLast(Var, Var),
    Relu(Var),
    /// Elementwise factor `mask / keep`, precomputed at record time.
    Dropout(Var, Vec<f64>),
    Mean(Var, Option<usize>),
    Square(Var),
    GatherCyclic { queue: Var, starts: Vec<usize>, rows: usize },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// The ordered record of a forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(String, Var)>,
}

/// Parameter gradients produced by one reverse sweep, keyed by name.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    by_name: HashMap<String, Tensor>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.by_name.get(name)
    }

    pub fn len(&self) -> usize {
        self.by_name.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_name.is_empty()
    }

    /// Writes the gradients into `params`; groups the sweep never reached get
    /// exact zeros.
    pub fn write_into(&self, params: &mut [ParamGroup]) -> Result<()> {
        for p in params.iter_mut() {
            match self.by_name.get(&p.name) {
                Some(g) => p.set_grad(g.clone())?,
                None => p.set_grad(Tensor::zeros(p.value.shape()))?,
            }
        }
        Ok(())
    }

    /// Adds the gradients onto whatever `params` already hold.
    pub fn accumulate_into(&self, params: &mut [ParamGroup]) -> Result<()> {
        for p in params.iter_mut() {
            if let Some(g) = self.by_name.get(&p.name) {
                let mut acc = p.grad();
                if acc.shape() != g.shape() {
                    return Err(Error::shape(
                        "accumulate",
                        format!("{}: {:?} vs {:?}", p.name, acc.shape(), g.shape()),
                    ));
                }
                acc.add_assign(g);
                p.set_grad(acc)?;
            } else if p.grad.is_none() {
                p.set_grad(Tensor::zeros(p.value.shape()))?;
            }
        }
        Ok(())
    }
}

fn two_d(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    t.dims2()
        .ok_or_else(|| Error::shape(op, format!("expected a matrix, got shape {:?}", t.shape())))
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// Registers a learnable leaf. Names must be unique on a tape.
    pub fn param(&mut self, name: &str, value: &Tensor) -> Result<Var> {
        if self.params.iter().any(|(n, _)| n == name) {
            return Err(Error::Config(format!("parameter `{name}` registered twice")));
        }
        let v = self.push(value.clone(), Op::Param, true);
        self.params.push((name.to_string(), v));
        Ok(v)
    }

    pub fn param_var(&self, name: &str) -> Option<Var> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|(n, _)| n.as_str())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = two_d("matmul", self.value(a))?;
        let (k2, n) = two_d("matmul", self.value(b))?;
        if k != k2 {
            return Err(Error::shape("matmul", format!("[{m}, {k}] x [{k2}, {n}]")));
        }
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b), needs))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::shape(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = zip_map(self.value(a), self.value(b), |x, y| x + y);
        let shape = self.value(a).shape().to_vec();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(shape, data)?, Op::Add(a, b), needs))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let data = zip_map(self.value(a), self.value(b), |x, y| x - y);
        let shape = self.value(a).shape().to_vec();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(shape, data)?, Op::Sub(a, b), needs))
    }

    /// `a[r, c] - row[0, c]` for every row `r`: subtracts one row vector
    /// (typically the last observed timestep) from each row of `a`.
    pub fn broadcast_sub_last(&mut self, a: Var, row: Var) -> Result<Var> {
        let (r, c) = two_d("broadcast_sub_last", self.value(a))?;
        let (one, c2) = two_d("broadcast_sub_last", self.value(row))?;
        if one != 1 || c2 != c {
            return Err(Error::shape("broadcast_sub_last", format!("[{r}, {c}] - [{one}, {c2}]")));
        }
        let av = self.value(a).data();
        let rv = self.value(row).data();
        let data = (0..r * c).map(|i| av[i] - rv[i % c]).collect();
        let needs = self.needs(a) || self.needs(row);
        Ok(self.push(Tensor::matrix(r, c, data)?, Op::BroadcastSubLast(a, row), needs))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let data = t.data().iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect();
        let shape = t.shape().to_vec();
        let needs = self.needs(a);
        Ok(self.push(Tensor::new(shape, data)?, Op::Relu(a), needs))
    }

    /// Inverted dropout with an explicit binary keep-mask: `x * mask / keep`.
    pub fn dropout_masked(&mut self, a: Var, mask: &Tensor, keep: f64) -> Result<Var> {
        let t = self.value(a);
        if mask.shape() != t.shape() {
            return Err(Error::shape(
                "dropout_masked",
                format!("input {:?} vs mask {:?}", t.shape(), mask.shape()),
            ));
        }
        if !(keep > 0.0 && keep <= 1.0) {
            return Err(Error::Config(format!("dropout keep-probability {keep} outside (0, 1]")));
        }
        if mask.data().iter().any(|&m| m != 0.0 && m != 1.0) {
            return Err(Error::Config("dropout mask must be binary".into()));
        }
        let factor: Vec<f64> = mask.data().iter().map(|&m| m / keep).collect();
        let data = t.data().iter().zip(&factor).map(|(x, f)| x * f).collect();
        let shape = t.shape().to_vec();
        let needs = self.needs(a);
        Ok(self.push(Tensor::new(shape, data)?, Op::Dropout(a, factor), needs))
    }

    /// Mean over `axis` of a matrix (0 → `[1, cols]`, 1 → `[rows, 1]`), or
    /// over every entry when `axis` is `None` (→ `[1, 1]`).
    pub fn mean_axis(&mut self, a: Var, axis: Option<usize>) -> Result<Var> {
        let t = self.value(a);
        let out = match axis {
            None => {
                let s: f64 = t.data().iter().sum();
                Tensor::matrix(1, 1, vec![s / t.numel() as f64])?
            }
            Some(ax) => {
                let (r, c) = two_d("mean_axis", t)?;
                match ax {
                    0 => {
                        let mut acc = vec![0.0; c];
                        for i in 0..r {
                            for (j, v) in t.row(i).iter().enumerate() {
                                acc[j] += v;
                            }
                        }
                        acc.iter_mut().for_each(|v| *v /= r as f64);
                        Tensor::matrix(1, c, acc)?
                    }
                    1 => {
                        let acc = (0..r).map(|i| t.row(i).iter().sum::<f64>() / c as f64).collect();
                        Tensor::matrix(r, 1, acc)?
                    }
                    _ => {
                        return Err(Error::shape("mean_axis", format!("axis {ax} on a matrix")));
                    }
                }
            }
        };
        let needs = self.needs(a);
        Ok(self.push(out, Op::Mean(a, axis), needs))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let data = t.data().iter().map(|x| x * x).collect();
        let shape = t.shape().to_vec();
        let needs = self.needs(a);
        Ok(self.push(Tensor::new(shape, data)?, Op::Square(a), needs))
    }

    /// Reads `rows` consecutive rows of a `[Q, C]` queue starting at each
    /// phase in `starts`, wrapping modulo `Q`. Block `b` of the `[rows, B*C]`
    /// output holds the rows for `starts[b]`.
    pub fn gather_cyclic(&mut self, queue: Var, starts: &[usize], rows: usize) -> Result<Var> {
        let (q, c) = two_d("gather_cyclic", self.value(queue))?;
        if starts.is_empty() || rows == 0 {
            return Err(Error::shape("gather_cyclic", "no rows requested"));
        }
        let b = starts.len();
        let src = self.value(queue).data();
        let mut out = vec![0.0; rows * b * c];
        for (blk, &s) in starts.iter().enumerate() {
            for i in 0..rows {
                let qr = (s + i) % q;
                let dst = i * b * c + blk * c;
                out[dst..dst + c].copy_from_slice(&src[qr * c..(qr + 1) * c]);
            }
        }
        let needs = self.needs(queue);
        let op = Op::GatherCyclic { queue, starts: starts.to_vec(), rows };
        Ok(self.push(Tensor::matrix(rows, b * c, out)?, op, needs))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn gradients(&self, loss: Var) -> Result<Gradients> {
        let t = self.value(loss);
        if !t.is_scalar() {
            return Err(Error::shape("backward", format!("loss must be scalar, got {:?}", t.shape())));
        }
        let seed = Tensor::new(t.shape().to_vec(), vec![1.0])?;
        self.vjp(loss, &seed)
    }

    /// Vector-Jacobian product: the parameter gradients of `<seed, output>`.
    pub fn vjp(&self, output: Var, seed: &Tensor) -> Result<Gradients> {
        if seed.shape() != self.value(output).shape() {
            return Err(Error::shape(
                "vjp",
                format!("seed {:?} vs output {:?}", seed.shape(), self.value(output).shape()),
            ));
        }
        let mut cot: Vec<Option<Tensor>> = Vec::new();
        cot.resize_with(output.0 + 1, || None);
        cot[output.0] = Some(seed.clone());

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = cot[idx].take() else { continue };
            match &node.op {
                Op::Constant => {}
                Op::Param => {
                    cot[idx] = Some(g);
                }
                Op::MatMul(a, b) => {
                    let (m, k) = self.value(*a).dims2().unwrap();
                    let n = self.value(*b).dims2().unwrap().1;
                    if self.needs(*a) {
                        let da = matmul_grad_lhs(g.data(), self.value(*b).data(), m, k, n);
                        accumulate(&mut cot, *a, Tensor::matrix(m, k, da)?);
                    }
                    if self.needs(*b) {
                        let db = matmul_grad_rhs(self.value(*a).data(), g.data(), m, k, n);
                        accumulate(&mut cot, *b, Tensor::matrix(k, n, db)?);
                    }
                }
                Op::Add(a, b) => {
                    if self.needs(*a) {
                        accumulate(&mut cot, *a, g.clone());
                    }
                    if self.needs(*b) {
                        accumulate(&mut cot, *b, g);
                    }
                }
                Op::Sub(a, b) => {
                    if self.needs(*b) {
                        let neg = g.data().iter().map(|x| -x).collect();
                        accumulate(&mut cot, *b, Tensor::new(g.shape().to_vec(), neg)?);
                    }
                    if self.needs(*a) {
                        accumulate(&mut cot, *a, g);
                    }
                }
                Op::BroadcastSubLast(a, row) => {
                    if self.needs(*row) {
                        let (r, c) = g.dims2().unwrap();
                        let mut dr = vec![0.0; c];
                        for i in 0..r {
                            for (j, v) in g.row(i).iter().enumerate() {
                                dr[j] -= v;
                            }
                        }
                        accumulate(&mut cot, *row, Tensor::matrix(1, c, dr)?);
                    }
                    if self.needs(*a) {
                        accumulate(&mut cot, *a, g);
                    }
                }
                Op::Relu(a) => {
                    let x = self.value(*a).data();
                    let d = g
                        .data()
                        .iter()
                        .zip(x)
                        .map(|(gv, &xv)| if xv > 0.0 { *gv } else { 0.0 })
                        .collect();
                    accumulate(&mut cot, *a, Tensor::new(g.shape().to_vec(), d)?);
                }
                Op::Dropout(a, factor) => {
                    let d = g.data().iter().zip(factor).map(|(gv, f)| gv * f).collect();
                    accumulate(&mut cot, *a, Tensor::new(g.shape().to_vec(), d)?);
                }
                Op::Mean(a, axis) => {
                    let input = self.value(*a);
                    let d = match axis {
                        None => {
                            let v = g.item() / input.numel() as f64;
                            Tensor::full(input.shape(), v)
                        }
                        Some(0) => {
                            let (r, c) = input.dims2().unwrap();
                            let mut d = Vec::with_capacity(r * c);
                            for _ in 0..r {
                                d.extend(g.data().iter().map(|v| v / r as f64));
                            }
                            Tensor::matrix(r, c, d)?
                        }
                        Some(_) => {
                            let (r, c) = input.dims2().unwrap();
                            let mut d = Vec::with_capacity(r * c);
                            for i in 0..r {
                                let v = g.data()[i] / c as f64;
                                d.extend(std::iter::repeat_n(v, c));
                            }
                            Tensor::matrix(r, c, d)?
                        }
                    };
                    accumulate(&mut cot, *a, d);
                }
                Op::Square(a) => {
                    let x = self.value(*a).data();
                    let d = g.data().iter().zip(x).map(|(gv, xv)| 2.0 * xv * gv).collect();
                    accumulate(&mut cot, *a, Tensor::new(g.shape().to_vec(), d)?);
                }
                Op::GatherCyclic { queue, starts, rows } => {
                    let (q, c) = self.value(*queue).dims2().unwrap();
                    let b = starts.len();
                    let mut dq = vec![0.0; q * c];
                    let gd = g.data();
                    for (blk, &s) in starts.iter().enumerate() {
                        for i in 0..*rows {
                            let qr = (s + i) % q;
                            let src = i * b * c + blk * c;
                            for j in 0..c {
                                dq[qr * c + j] += gd[src + j];
                            }
                        }
                    }
                    accumulate(&mut cot, *queue, Tensor::matrix(q, c, dq)?);
                }
            }
        }

        let mut by_name = HashMap::with_capacity(self.params.len());
        for (name, v) in &self.params {
            let g = cot
                .get_mut(v.0)
                .and_then(Option::take)
                .unwrap_or_else(|| Tensor::zeros(self.value(*v).shape()));
            by_name.insert(name.clone(), g);
        }
        Ok(Gradients { by_name })
    }

    /// Overwrites each group's gradient with `d loss / d group`.
    pub fn backward(&self, loss: Var, params: &mut [ParamGroup]) -> Result<()> {
        self.gradients(loss)?.write_into(params)
    }

    /// Adds `d loss / d group` onto the existing gradients.
    pub fn backward_accumulate(&self, loss: Var, params: &mut [ParamGroup]) -> Result<()> {
        self.gradients(loss)?.accumulate_into(params)
    }
}

fn accumulate(cot: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut cot[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect()
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

// dA = dC · Bᵀ, accumulated row by row against a transposed copy of B.
// Rows of dC that are entirely zero are skipped, which keeps per-timestep
// reverse sweeps cheap in the output layer.
fn matmul_grad_lhs(dc: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut da = vec![0.0; m * k];
    let mut bt: Option<Vec<f64>> = None;
    for i in 0..m {
        let grow = &dc[i * n..(i + 1) * n];
        if grow.iter().all(|&v| v == 0.0) {
            continue;
        }
        let bt = bt.get_or_insert_with(|| {
            let mut t = vec![0.0; n * k];
            for j in 0..k {
                for p in 0..n {
                    t[p * k + j] = b[j * n + p];
                }
            }
            t
        });
        let drow = &mut da[i * k..(i + 1) * k];
        for (p, &gv) in grow.iter().enumerate() {
            if gv == 0.0 {
                continue;
            }
            for (d, bv) in drow.iter_mut().zip(&bt[p * k..(p + 1) * k]) {
                *d += gv * bv;
            }
        }
    }
    da
}

// dB = Aᵀ · dC.
fn matmul_grad_rhs(a: &[f64], dc: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut db = vec![0.0; k * n];
    for i in 0..m {
        let grow = &dc[i * n..(i + 1) * n];
        if grow.iter().all(|&v| v == 0.0) {
            continue;
        }
        for j in 0..k {
            let av = a[i * k + j];
            if av == 0.0 {
                continue;
            }
            let drow = &mut db[j * n..(j + 1) * n];
            for (d, g) in drow.iter_mut().zip(grow) {
                *d += av * g;
            }
        }
    }
    db
}

/// All parameter gradients flattened into one vector, in name order.
#[derive(Clone, Debug, PartialEq)]
pub struct GradVector {
    pub names: Vec<String>,
    pub values: Vec<f64>,
    /// `offsets[i]..offsets[i + 1]` is the slice of group `names[i]`.
    pub offsets: Vec<usize>,
}

impl GradVector {
    pub fn slice(&self, i: usize) -> &[f64] {
        &self.values[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn layer(&self, name: &str) -> Option<&[f64]> {
        self.names.iter().position(|n| n == name).map(|i| self.slice(i))
    }
}

pub fn grad_vector(params: &[ParamGroup]) -> GradVector {
    let mut order: Vec<&ParamGroup> = params.iter().collect();
    order.sort_by(|a, b| a.name.cmp(&b.name));
    let mut names = Vec::with_capacity(order.len());
    let mut values = Vec::new();
    let mut offsets = vec![0];
    for p in order {
        names.push(p.name.clone());
        match &p.grad {
            Some(g) => values.extend_from_slice(g.data()),
            None => values.extend(std::iter::repeat_n(0.0, p.numel())),
        }
        offsets.push(values.len());
    }
    GradVector { names, values, offsets }
}
