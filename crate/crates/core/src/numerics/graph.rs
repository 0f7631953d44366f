//! Reverse-mode differentiation over a fixed set of matrix primitives.
//!
//! A [`Graph`] records every primitive applied during the forward pass.
//! [`Graph::backward`] walks the record in reverse and returns the gradient
//! of a scalar root with respect to every parameter leaf. All operands are
//! rank-2 (`rows × cols`); a scalar is `1 × 1`.

use super::{NumericsError, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    StopGradient,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    L2NormalizeRows(Var),
    RowDot(Var, Var),
    SumRows(Var),
    Sum(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::StopGradient => "stop_gradient",
            Op::MatMul(..) => "matmul",
            Op::MatMulBt(..) => "matmul_bt",
            Op::Add(..) => "add",
            Op::AddRow(..) => "add_row",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Tanh(..) => "tanh",
            Op::Relu(..) => "relu",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::L2NormalizeRows(..) => "l2_normalize",
            Op::RowDot(..) => "row_dot",
            Op::SumRows(..) => "sum_rows",
            Op::Sum(..) => "sum",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    // Row norms of the input, kept for the normalize backward pass.
    aux: Option<Vec<f64>>,
}

/// Gradients of a scalar root, one entry per parameter leaf.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `v`, or `None` when `v` is not a parameter leaf.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

/// Forward record of a computation. One graph per worker.
#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adds a differentiable leaf.
    pub fn param(&mut self, value: Tensor) -> Result<Var, NumericsError> {
        check_rank2(&value, "leaf")?;
        Ok(self.push(value, Op::Leaf, true, None))
    }

    /// Adds a constant leaf.
    pub fn constant(&mut self, value: Tensor) -> Result<Var, NumericsError> {
        check_rank2(&value, "leaf")?;
        Ok(self.push(value, Op::Leaf, false, None))
    }

    /// Copies the value of `v` into a node that blocks gradient flow.
    pub fn stop_gradient(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.push(value, Op::StopGradient, false, None)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// `a · b` for `a: n×k`, `b: k×m`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (av, bv) = (self.value(a), self.value(b));
        let (n, k, m) = (av.rows(), av.cols(), bv.cols());
        if bv.rows() != k {
            return Err(shape_err("matmul", av, bv));
        }
        let mut out = vec![0.0; n * m];
        let (ad, bd) = (av.data(), bv.data());
        for i in 0..n {
            let orow = &mut out[i * m..(i + 1) * m];
            for p in 0..k {
                let x = ad[i * k + p];
                if x == 0.0 {
                    continue;
                }
                let brow = &bd[p * m..(p + 1) * m];
                for (o, &y) in orow.iter_mut().zip(brow) {
                    *o += x * y;
                }
            }
        }
        self.record(vec![n, m], out, Op::MatMul(a, b), &[a, b])
    }

    /// `a · bᵀ` for `a: n×k`, `b: m×k`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (av, bv) = (self.value(a), self.value(b));
        let (n, k, m) = (av.rows(), av.cols(), bv.rows());
        if bv.cols() != k {
            return Err(shape_err("matmul_bt", av, bv));
        }
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let arow = av.row(i);
            for j in 0..m {
                out[i * m + j] = dot(arow, bv.row(j));
            }
        }
        self.record(vec![n, m], out, Op::MatMulBt(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.zip_same("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.zip_same("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.zip_same("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds the `1×m` row `bias` to every row of `a: n×m`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var, NumericsError> {
        let (av, bv) = (self.value(a), self.value(bias));
        if bv.rows() != 1 || bv.cols() != av.cols() {
            return Err(shape_err("add_row", av, bv));
        }
        let m = av.cols();
        let out: Vec<f64> = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x + bv.data()[i % m])
            .collect();
        let shape = av.shape().to_vec();
        self.record(shape, out, Op::AddRow(a, bias), &[a, bias])
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var, NumericsError> {
        self.map("scale", a, |x| x * factor, Op::Scale(a, factor))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, NumericsError> {
        self.map("tanh", a, f64::tanh, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, NumericsError> {
        self.map("relu", a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, NumericsError> {
        self.map("exp", a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var, NumericsError> {
        self.map("log", a, f64::ln, Op::Log(a))
    }

    /// Scales every row to unit Euclidean norm. A zero row is an error.
    pub fn l2_normalize_rows(&mut self, a: Var) -> Result<Var, NumericsError> {
        let av = self.value(a);
        let (n, m) = (av.rows(), av.cols());
        let mut norms = Vec::with_capacity(n);
        let mut out = Vec::with_capacity(n * m);
        for r in 0..n {
            let row = av.row(r);
            let norm = dot(row, row).sqrt();
            if norm == 0.0 {
                return Err(NumericsError::ZeroNorm { row: r });
            }
            norms.push(norm);
            out.extend(row.iter().map(|x| x / norm));
        }
        let rg = self.nodes[a.0].requires_grad;
        check_finite("l2_normalize", &out)?;
        Ok(self.push(
            Tensor::from_raw(vec![n, m], out),
            Op::L2NormalizeRows(a),
            rg,
            Some(norms),
        ))
    }

    /// Per-row dot product of two `n×m` operands, giving `n×1`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err("row_dot", av, bv));
        }
        let n = av.rows();
        let out: Vec<f64> = (0..n).map(|r| dot(av.row(r), bv.row(r))).collect();
        self.record(vec![n, 1], out, Op::RowDot(a, b), &[a, b])
    }

    /// Sums each row, giving `n×1`.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var, NumericsError> {
        let av = self.value(a);
        let n = av.rows();
        let out: Vec<f64> = (0..n).map(|r| av.row(r).iter().sum()).collect();
        self.record(vec![n, 1], out, Op::SumRows(a), &[a])
    }

    /// Sums every entry, giving a `1×1` scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var, NumericsError> {
        let s: f64 = self.value(a).data().iter().sum();
        self.record(vec![1, 1], vec![s], Op::Sum(a), &[a])
    }

    /// Runs the backward pass from a scalar `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients, NumericsError> {
        let rv = self.value(root);
        if rv.len() != 1 {
            return Err(NumericsError::NonScalarRoot(rv.shape().to_vec()));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        adj[root.0] = Some(vec![1.0]);

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = adj[idx].take() else { continue };
            if matches!(node.op, Op::Leaf) {
                adj[idx] = Some(g);
                continue;
            }
            check_finite(node.op.name(), &g)?;
            self.propagate(node, &g, &mut adj);
        }

        let grads = self
            .nodes
            .iter()
            .zip(adj)
            .map(|(node, g)| match node.op {
                Op::Leaf if node.requires_grad => Some(match g {
                    Some(g) => Tensor::from_raw(node.value.shape().to_vec(), g),
                    None => Tensor::zeros(node.value.shape().to_vec()),
                }),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let out = &node.value;
        match node.op {
            Op::Leaf | Op::StopGradient => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(a), self.value(b));
                let (n, k, m) = (av.rows(), av.cols(), bv.cols());
                if self.requires_grad(a) {
                    // dA = G · Bᵀ
                    let mut da = vec![0.0; n * k];
                    for i in 0..n {
                        let grow = &g[i * m..(i + 1) * m];
                        for p in 0..k {
                            da[i * k + p] = dot(grow, bv.row(p));
                        }
                    }
                    accumulate(adj, a, da);
                }
                if self.requires_grad(b) {
                    // dB = Aᵀ · G
                    let mut db = vec![0.0; k * m];
                    for i in 0..n {
                        let grow = &g[i * m..(i + 1) * m];
                        for p in 0..k {
                            let x = av.data()[i * k + p];
                            if x == 0.0 {
                                continue;
                            }
                            for (d, &y) in db[p * m..(p + 1) * m].iter_mut().zip(grow) {
                                *d += x * y;
                            }
                        }
                    }
                    accumulate(adj, b, db);
                }
            }
            Op::MatMulBt(a, b) => {
                let (av, bv) = (self.value(a), self.value(b));
                let (n, k, m) = (av.rows(), av.cols(), bv.rows());
                if self.requires_grad(a) {
                    // dA = G · B
                    let mut da = vec![0.0; n * k];
                    for i in 0..n {
                        for j in 0..m {
                            let gij = g[i * m + j];
                            if gij == 0.0 {
                                continue;
                            }
                            for (d, &y) in da[i * k..(i + 1) * k].iter_mut().zip(bv.row(j)) {
                                *d += gij * y;
                            }
                        }
                    }
                    accumulate(adj, a, da);
                }
                if self.requires_grad(b) {
                    // dB = Gᵀ · A
                    let mut db = vec![0.0; m * k];
                    for i in 0..n {
                        for j in 0..m {
                            let gij = g[i * m + j];
                            if gij == 0.0 {
                                continue;
                            }
                            for (d, &x) in db[j * k..(j + 1) * k].iter_mut().zip(av.row(i)) {
                                *d += gij * x;
                            }
                        }
                    }
                    accumulate(adj, b, db);
                }
            }
            Op::Add(a, b) => {
                self.pass(adj, a, g.to_vec());
                self.pass(adj, b, g.to_vec());
            }
            Op::Sub(a, b) => {
                self.pass(adj, a, g.to_vec());
                self.pass(adj, b, g.iter().map(|x| -x).collect());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(a).data(), self.value(b).data());
                self.pass(adj, a, g.iter().zip(bv).map(|(x, y)| x * y).collect());
                self.pass(adj, b, g.iter().zip(av).map(|(x, y)| x * y).collect());
            }
            Op::AddRow(a, bias) => {
                self.pass(adj, a, g.to_vec());
                if self.requires_grad(bias) {
                    let m = out.cols();
                    let mut db = vec![0.0; m];
                    for (i, x) in g.iter().enumerate() {
                        db[i % m] += x;
                    }
                    accumulate(adj, bias, db);
                }
            }
            Op::Scale(a, f) => self.pass(adj, a, g.iter().map(|x| x * f).collect()),
            Op::Tanh(a) => {
                let d = g
                    .iter()
                    .zip(out.data())
                    .map(|(x, y)| x * (1.0 - y * y))
                    .collect();
                self.pass(adj, a, d);
            }
            Op::Relu(a) => {
                let av = self.value(a).data();
                let d = g
                    .iter()
                    .zip(av)
                    .map(|(x, &y)| if y > 0.0 { *x } else { 0.0 })
                    .collect();
                self.pass(adj, a, d);
            }
            Op::Exp(a) => {
                let d = g.iter().zip(out.data()).map(|(x, y)| x * y).collect();
                self.pass(adj, a, d);
            }
            Op::Log(a) => {
                let av = self.value(a).data();
                let d = g.iter().zip(av).map(|(x, y)| x / y).collect();
                self.pass(adj, a, d);
            }
            Op::L2NormalizeRows(a) => {
                let norms = node.aux.as_ref().expect("normalize keeps row norms");
                let m = out.cols();
                let mut d = vec![0.0; g.len()];
                for (r, &norm) in norms.iter().enumerate() {
                    let y = out.row(r);
                    let gr = &g[r * m..(r + 1) * m];
                    let proj = dot(y, gr);
                    for c in 0..m {
                        d[r * m + c] = (gr[c] - y[c] * proj) / norm;
                    }
                }
                self.pass(adj, a, d);
            }
            Op::RowDot(a, b) => {
                let (av, bv) = (self.value(a), self.value(b));
                let m = av.cols();
                if self.requires_grad(a) {
                    let d = (0..av.len()).map(|i| g[i / m] * bv.data()[i]).collect();
                    accumulate(adj, a, d);
                }
                if self.requires_grad(b) {
                    let d = (0..bv.len()).map(|i| g[i / m] * av.data()[i]).collect();
                    accumulate(adj, b, d);
                }
            }
            Op::SumRows(a) => {
                let m = self.value(a).cols();
                let n = self.value(a).len();
                self.pass(adj, a, (0..n).map(|i| g[i / m]).collect());
            }
            Op::Sum(a) => {
                let n = self.value(a).len();
                self.pass(adj, a, vec![g[0]; n]);
            }
        }
    }

    fn pass(&self, adj: &mut [Option<Vec<f64>>], v: Var, d: Vec<f64>) {
        if self.requires_grad(v) {
            accumulate(adj, v, d);
        }
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool, aux: Option<Vec<f64>>) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            aux,
        });
        Var(self.nodes.len() - 1)
    }

    fn record(
        &mut self,
        shape: Vec<usize>,
        data: Vec<f64>,
        op: Op,
        inputs: &[Var],
    ) -> Result<Var, NumericsError> {
        check_finite(op.name(), &data)?;
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push(Tensor::from_raw(shape, data), op, rg, None))
    }

    fn map(
        &mut self,
        name: &'static str,
        a: Var,
        f: impl Fn(f64) -> f64,
        op: Op,
    ) -> Result<Var, NumericsError> {
        let av = self.value(a);
        let shape = av.shape().to_vec();
        let data: Vec<f64> = av.data().iter().map(|&x| f(x)).collect();
        debug_assert_eq!(name, op.name());
        self.record(shape, data, op, &[a])
    }

    fn zip_same(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, NumericsError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err(name, av, bv));
        }
        let shape = av.shape().to_vec();
        let data: Vec<f64> = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        self.record(shape, data, op, &[a, b])
    }
}

fn accumulate(adj: &mut [Option<Vec<f64>>], v: Var, d: Vec<f64>) {
    match &mut adj[v.0] {
        Some(existing) => {
            for (e, x) in existing.iter_mut().zip(d) {
                *e += x;
            }
        }
        slot @ None => *slot = Some(d),
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_finite(op: &'static str, data: &[f64]) -> Result<(), NumericsError> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(NumericsError::Overflow { op })
    }
}

fn check_rank2(t: &Tensor, op: &'static str) -> Result<(), NumericsError> {
    if t.shape().len() == 2 {
        Ok(())
    } else {
        Err(NumericsError::ShapeMismatch {
            op,
            lhs: t.shape().to_vec(),
            rhs: vec![],
        })
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> NumericsError {
    NumericsError::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}
