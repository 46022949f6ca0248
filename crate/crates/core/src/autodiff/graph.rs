use std::rc::Rc;

use super::tensor::Tensor;
use super::AutodiffError;
use crate::scalar::Scalar;

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Sparse normalized adjacency `out_i = sum_j coeff * in_j`, stored per target row.
#[derive(Clone, Debug)]
pub struct NormAdjacency<T> {
    pub(crate) nodes: usize,
    pub(crate) rows: Vec<Vec<(usize, T)>>,
}

impl<T: Scalar> NormAdjacency<T> {
    /// Symmetric normalization `1/sqrt(d_i d_j)` over the undirected edge set,
    /// with a self-loop on every node before degrees are counted.
    pub fn from_edges(nodes: usize, edges: &[(usize, usize)]) -> Result<Self, AutodiffError> {
        let mut neighbours = vec![std::collections::BTreeSet::new(); nodes];
        for (i, set) in neighbours.iter_mut().enumerate() {
            set.insert(i);
        }
        for &(a, b) in edges {
            if a >= nodes || b >= nodes {
                return Err(AutodiffError::EdgeOutOfRange {
                    edge: (a, b),
                    nodes,
                });
            }
            neighbours[a].insert(b);
            neighbours[b].insert(a);
        }
        let degree: Vec<T> = neighbours
            .iter()
            .map(|s| T::from_usize(s.len()).unwrap())
            .collect();
        let rows = neighbours
            .iter()
            .enumerate()
            .map(|(i, set)| {
                set.iter()
                    .map(|&j| (j, T::one() / (degree[i] * degree[j]).sqrt()))
                    .collect()
            })
            .collect();
        Ok(Self { nodes, rows })
    }

    /// Block-diagonal union of `blocks` complete graphs of `size` nodes each.
    pub fn complete_blocks(blocks: usize, size: usize) -> Self {
        let coeff = T::one() / T::from_usize(size.max(1)).unwrap();
        let rows = (0..blocks * size)
            .map(|i| {
                let base = (i / size) * size;
                (base..base + size).map(|j| (j, coeff)).collect()
            })
            .collect();
        Self {
            nodes: blocks * size,
            rows,
        }
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn coefficient(&self, i: usize, j: usize) -> T {
        self.rows[i]
            .iter()
            .find(|(k, _)| *k == j)
            .map_or(T::zero(), |(_, c)| *c)
    }
}

#[derive(Clone, Debug)]
pub(crate) enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddScalar(Var),
    MulScalar(Var, T),
    Neg(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Softplus(Var),
    Exp(Var),
    Ln(Var),
    Sqrt(Var),
    Square(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    SumAll(Var),
    MeanAll(Var),
    SumCols(Var),
    LogSumExpRows(Var),
    LogSoftmaxRows(Var),
    PickCols(Var, Vec<usize>),
    Aggregate(Var, Rc<NormAdjacency<T>>),
    MeanPoolGroups(Var, usize),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Reverse-mode tape. Nodes are appended in evaluation order, which is a
/// topological order, and `backward` walks them in exact reverse.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    strict_finite: bool,
    first_non_finite: Option<(usize, &'static str)>,
    consumed: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    /// Non-finite forward values panic when debug assertions are on.
    pub fn new() -> Self {
        Self::with_strict_finite(cfg!(debug_assertions))
    }

    /// `strict = false` records the first non-finite node instead of panicking.
    pub fn with_strict_finite(strict: bool) -> Self {
        Self {
            nodes: Vec::new(),
            strict_finite: strict,
            first_non_finite: None,
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Clears the tape so it can be reused.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.first_non_finite = None;
        self.consumed = false;
    }

    pub fn first_non_finite(&self) -> Option<(usize, &'static str)> {
        self.first_non_finite
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true, "param")
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false, "constant")
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool, name: &'static str) -> Var {
        if self.first_non_finite.is_none() && !value.is_finite() {
            if self.strict_finite {
                panic!("non-finite forward value produced by `{name}` at node {}", self.nodes.len());
            }
            self.first_non_finite = Some((self.nodes.len(), name));
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dims2()
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(usize, usize), AutodiffError> {
        let (da, db) = (self.dims(a), self.dims(b));
        if da != db {
            return Err(AutodiffError::Shape {
                op,
                lhs: vec![da.0, da.1],
                rhs: vec![db.0, db.1],
            });
        }
        Ok(da)
    }

    fn unary(&mut self, a: Var, op: Op<T>, name: &'static str, f: impl Fn(T) -> T) -> Var {
        let (r, c) = self.dims(a);
        let data = self.nodes[a.0].value.data().iter().map(|&x| f(x)).collect();
        let rg = self.rg(&[a]);
        self.push(Tensor::matrix(r, c, data).unwrap(), op, rg, name)
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        op: Op<T>,
        name: &'static str,
        f: impl Fn(T, T) -> T,
    ) -> Result<Var, AutodiffError> {
        let (r, c) = self.same_shape(name, a, b)?;
        let data = self.nodes[a.0]
            .value
            .data()
            .iter()
            .zip(self.nodes[b.0].value.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::matrix(r, c, data).unwrap(), op, rg, name))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (n, k) = self.dims(a);
        let (k2, m) = self.dims(b);
        if k != k2 {
            return Err(AutodiffError::Shape {
                op: "matmul",
                lhs: vec![n, k],
                rhs: vec![k2, m],
            });
        }
        let out = matmul_kernel(
            self.nodes[a.0].value.data(),
            self.nodes[b.0].value.data(),
            n,
            k,
            m,
        );
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::matrix(n, m, out).unwrap(), Op::MatMul(a, b), rg, "matmul"))
    }

    /// Adds a `1 x m` row to every row of an `n x m` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, AutodiffError> {
        let (n, m) = self.dims(a);
        let (r, m2) = self.dims(row);
        if r != 1 || m != m2 {
            return Err(AutodiffError::Shape {
                op: "add_row",
                lhs: vec![n, m],
                rhs: vec![r, m2],
            });
        }
        let bias = self.nodes[row.0].value.data().to_vec();
        let data = self.nodes[a.0]
            .value
            .data()
            .chunks(m.max(1))
            .flat_map(|chunk| chunk.iter().zip(&bias).map(|(&x, &b)| x + b).collect::<Vec<_>>())
            .collect();
        let rg = self.rg(&[a, row]);
        Ok(self.push(Tensor::matrix(n, m, data).unwrap(), Op::AddRow(a, row), rg, "add_row"))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary(a, b, Op::Div(a, b), "div", |x, y| x / y)
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Var {
        self.unary(a, Op::AddScalar(a), "add_scalar", |x| x + c)
    }

    pub fn mul_scalar(&mut self, a: Var, c: T) -> Var {
        self.unary(a, Op::MulScalar(a, c), "mul_scalar", |x| x * c)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(a, Op::Neg(a), "neg", |x| -x)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), "sigmoid", sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), "tanh", |x| x.tanh())
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), "relu", |x| x.max(T::zero()))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Op::Softplus(a), "softplus", softplus)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), "exp", |x| x.exp())
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, Op::Ln(a), "ln", |x| x.ln())
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sqrt(a), "sqrt", |x| x.sqrt())
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Op::Square(a), "square", |x| x * x)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let Some(&first) = parts.first() else {
            return Err(AutodiffError::Empty("concat_cols"));
        };
        let rows = self.dims(first).0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.dims(p);
            if r != rows {
                return Err(AutodiffError::Shape {
                    op: "concat_cols",
                    lhs: vec![rows, 0],
                    rhs: vec![r, c],
                });
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.nodes[p.0].value.data()[i * w..(i + 1) * w]);
            }
        }
        let rg = self.rg(parts);
        Ok(self.push(
            Tensor::matrix(rows, total, data).unwrap(),
            Op::ConcatCols(parts.to_vec()),
            rg,
            "concat_cols",
        ))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, AutodiffError> {
        let (r, c) = self.dims(a);
        if start + len > c {
            return Err(AutodiffError::Shape {
                op: "slice_cols",
                lhs: vec![r, c],
                rhs: vec![start, len],
            });
        }
        let src = self.nodes[a.0].value.data();
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&src[i * c + start..i * c + start + len]);
        }
        let rg = self.rg(&[a]);
        Ok(self.push(
            Tensor::matrix(r, len, data).unwrap(),
            Op::SliceCols(a, start),
            rg,
            "slice_cols",
        ))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].value.data().iter().copied().sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::matrix(1, 1, vec![s]).unwrap(), Op::SumAll(a), rg, "sum_all")
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let t = &self.nodes[a.0].value;
        let s: T = t.data().iter().copied().sum();
        let m = s / T::from_usize(t.len().max(1)).unwrap();
        let rg = self.rg(&[a]);
        self.push(Tensor::matrix(1, 1, vec![m]).unwrap(), Op::MeanAll(a), rg, "mean_all")
    }

    /// Row sums: `n x m -> n x 1`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let (r, c) = self.dims(a);
        let src = self.nodes[a.0].value.data();
        let data = (0..r).map(|i| src[i * c..(i + 1) * c].iter().copied().sum()).collect();
        let rg = self.rg(&[a]);
        self.push(Tensor::matrix(r, 1, data).unwrap(), Op::SumCols(a), rg, "sum_cols")
    }

    /// Max-shifted log-sum-exp of every row: `n x m -> n x 1`.
    pub fn log_sum_exp_rows(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let (r, c) = self.dims(a);
        if c == 0 {
            return Err(AutodiffError::Empty("log_sum_exp_rows"));
        }
        let src = self.nodes[a.0].value.data();
        let data = (0..r).map(|i| lse(&src[i * c..(i + 1) * c])).collect();
        let rg = self.rg(&[a]);
        Ok(self.push(
            Tensor::matrix(r, 1, data).unwrap(),
            Op::LogSumExpRows(a),
            rg,
            "log_sum_exp_rows",
        ))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let (r, c) = self.dims(a);
        if c == 0 {
            return Err(AutodiffError::Empty("log_softmax_rows"));
        }
        let src = self.nodes[a.0].value.data();
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            let row = &src[i * c..(i + 1) * c];
            let l = lse(row);
            data.extend(row.iter().map(|&x| x - l));
        }
        let rg = self.rg(&[a]);
        Ok(self.push(
            Tensor::matrix(r, c, data).unwrap(),
            Op::LogSoftmaxRows(a),
            rg,
            "log_softmax_rows",
        ))
    }

    /// Selects column `cols[i]` from row `i`: `n x m -> n x 1`.
    pub fn pick_cols(&mut self, a: Var, cols: &[usize]) -> Result<Var, AutodiffError> {
        let (r, c) = self.dims(a);
        if cols.len() != r {
            return Err(AutodiffError::Shape {
                op: "pick_cols",
                lhs: vec![r, c],
                rhs: vec![cols.len()],
            });
        }
        if let Some(&bad) = cols.iter().find(|&&k| k >= c) {
            return Err(AutodiffError::IndexOutOfRange {
                op: "pick_cols",
                index: bad,
                len: c,
            });
        }
        let src = self.nodes[a.0].value.data();
        let data = cols.iter().enumerate().map(|(i, &k)| src[i * c + k]).collect();
        let rg = self.rg(&[a]);
        Ok(self.push(
            Tensor::matrix(r, 1, data).unwrap(),
            Op::PickCols(a, cols.to_vec()),
            rg,
            "pick_cols",
        ))
    }

    /// Weighted neighbour aggregation `out_i = sum_j c_ij a_j`.
    pub fn aggregate(&mut self, a: Var, adj: Rc<NormAdjacency<T>>) -> Result<Var, AutodiffError> {
        let (r, c) = self.dims(a);
        if r != adj.nodes {
            return Err(AutodiffError::Shape {
                op: "aggregate",
                lhs: vec![r, c],
                rhs: vec![adj.nodes],
            });
        }
        let src = self.nodes[a.0].value.data();
        let mut data = vec![T::zero(); r * c];
        for (i, row) in adj.rows.iter().enumerate() {
            let out = &mut data[i * c..(i + 1) * c];
            for &(j, w) in row {
                for (o, &x) in out.iter_mut().zip(&src[j * c..(j + 1) * c]) {
                    *o = *o + w * x;
                }
            }
        }
        let rg = self.rg(&[a]);
        Ok(self.push(
            Tensor::matrix(r, c, data).unwrap(),
            Op::Aggregate(a, adj),
            rg,
            "aggregate",
        ))
    }

    /// Means over consecutive groups of `group` rows: `(k*group) x m -> k x m`.
    pub fn mean_pool_groups(&mut self, a: Var, group: usize) -> Result<Var, AutodiffError> {
        let (r, c) = self.dims(a);
        if group == 0 || r % group != 0 {
            return Err(AutodiffError::Shape {
                op: "mean_pool_groups",
                lhs: vec![r, c],
                rhs: vec![group],
            });
        }
        let k = r / group;
        let inv = T::one() / T::from_usize(group).unwrap();
        let src = self.nodes[a.0].value.data();
        let mut data = vec![T::zero(); k * c];
        for i in 0..r {
            let out = &mut data[(i / group) * c..(i / group + 1) * c];
            for (o, &x) in out.iter_mut().zip(&src[i * c..(i + 1) * c]) {
                *o = *o + x * inv;
            }
        }
        let rg = self.rg(&[a]);
        Ok(self.push(
            Tensor::matrix(k, c, data).unwrap(),
            Op::MeanPoolGroups(a, group),
            rg,
            "mean_pool_groups",
        ))
    }

    /// Reverse sweep from a scalar-shaped `output`. A tape can be swept once;
    /// call [`Graph::reset`] before recording again.
    pub fn backward(&mut self, output: Var) -> Result<Gradients<T>, AutodiffError> {
        if self.consumed {
            return Err(AutodiffError::BackwardTwice);
        }
        if self.nodes[output.0].value.len() != 1 {
            return Err(AutodiffError::NonScalarOutput(
                self.nodes[output.0].value.shape().to_vec(),
            ));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(vec![T::one()]);
        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            self.backprop_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| {
                g.filter(|_| n.requires_grad)
                    .map(|g| Tensor::new(n.value.shape().to_vec(), g).unwrap())
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, idx: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[idx];
        let y = node.value.data();
        let val = |v: Var| self.nodes[v.0].value.data();
        let mut acc = |v: Var, contrib: Vec<T>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => {
                    for (e, c) in existing.iter_mut().zip(contrib) {
                        *e = *e + c;
                    }
                }
                slot @ None => *slot = Some(contrib),
            }
        };
        let zip_map = |a: &[T], f: &dyn Fn(T, T) -> T| -> Vec<T> {
            g.iter().zip(a).map(|(&gi, &ai)| f(gi, ai)).collect()
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (n, k) = self.dims(*a);
                let m = self.dims(*b).1;
                if self.nodes[a.0].requires_grad {
                    // dA = dC * B^T
                    let bv = val(*b);
                    let mut da = vec![T::zero(); n * k];
                    for i in 0..n {
                        for j in 0..m {
                            let gij = g[i * m + j];
                            if gij == T::zero() {
                                continue;
                            }
                            for p in 0..k {
                                da[i * k + p] = da[i * k + p] + gij * bv[p * m + j];
                            }
                        }
                    }
                    acc(*a, da);
                }
                if self.nodes[b.0].requires_grad {
                    // dB = A^T * dC
                    let av = val(*a);
                    let mut db = vec![T::zero(); k * m];
                    for i in 0..n {
                        for p in 0..k {
                            let aip = av[i * k + p];
                            if aip == T::zero() {
                                continue;
                            }
                            let row = &mut db[p * m..(p + 1) * m];
                            for (d, &gij) in row.iter_mut().zip(&g[i * m..(i + 1) * m]) {
                                *d = *d + aip * gij;
                            }
                        }
                    }
                    acc(*b, db);
                }
            }
            Op::AddRow(a, row) => {
                let m = self.dims(*row).1;
                acc(*a, g.to_vec());
                let mut db = vec![T::zero(); m];
                for chunk in g.chunks(m.max(1)) {
                    for (d, &x) in db.iter_mut().zip(chunk) {
                        *d = *d + x;
                    }
                }
                acc(*row, db);
            }
            Op::Add(a, b) => {
                acc(*a, g.to_vec());
                acc(*b, g.to_vec());
            }
            Op::Sub(a, b) => {
                acc(*a, g.to_vec());
                acc(*b, g.iter().map(|&x| -x).collect());
            }
            Op::Mul(a, b) => {
                acc(*a, zip_map(val(*b), &|gi, bi| gi * bi));
                acc(*b, zip_map(val(*a), &|gi, ai| gi * ai));
            }
            Op::Div(a, b) => {
                let bv = val(*b);
                acc(*a, zip_map(bv, &|gi, bi| gi / bi));
                let db = g
                    .iter()
                    .zip(val(*a))
                    .zip(bv)
                    .map(|((&gi, &ai), &bi)| -gi * ai / (bi * bi))
                    .collect();
                acc(*b, db);
            }
            Op::AddScalar(a) => acc(*a, g.to_vec()),
            Op::MulScalar(a, c) => acc(*a, g.iter().map(|&x| x * *c).collect()),
            Op::Neg(a) => acc(*a, g.iter().map(|&x| -x).collect()),
            Op::Sigmoid(a) => acc(*a, zip_map(y, &|gi, yi| gi * yi * (T::one() - yi))),
            Op::Tanh(a) => acc(*a, zip_map(y, &|gi, yi| gi * (T::one() - yi * yi))),
            Op::Relu(a) => acc(
                *a,
                zip_map(val(*a), &|gi, xi| if xi > T::zero() { gi } else { T::zero() }),
            ),
            Op::Softplus(a) => acc(*a, zip_map(val(*a), &|gi, xi| gi * sigmoid(xi))),
            Op::Exp(a) => acc(*a, zip_map(y, &|gi, yi| gi * yi)),
            Op::Ln(a) => acc(*a, zip_map(val(*a), &|gi, xi| gi / xi)),
            Op::Sqrt(a) => acc(*a, zip_map(y, &|gi, yi| gi * T::lit(0.5) / yi)),
            Op::Square(a) => acc(*a, zip_map(val(*a), &|gi, xi| gi * T::lit(2.0) * xi)),
            Op::ConcatCols(parts) => {
                let rows = node.value.rows();
                let total = node.value.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = self.dims(p).1;
                    let mut dp = Vec::with_capacity(rows * w);
                    for i in 0..rows {
                        dp.extend_from_slice(&g[i * total + offset..i * total + offset + w]);
                    }
                    acc(p, dp);
                    offset += w;
                }
            }
            Op::SliceCols(a, start) => {
                let (r, c) = self.dims(*a);
                let len = node.value.cols();
                let mut da = vec![T::zero(); r * c];
                for i in 0..r {
                    da[i * c + start..i * c + start + len].copy_from_slice(&g[i * len..(i + 1) * len]);
                }
                acc(*a, da);
            }
            Op::SumAll(a) => acc(*a, vec![g[0]; self.nodes[a.0].value.len()]),
            Op::MeanAll(a) => {
                let n = self.nodes[a.0].value.len();
                acc(*a, vec![g[0] / T::from_usize(n.max(1)).unwrap(); n]);
            }
            Op::SumCols(a) => {
                let c = self.dims(*a).1;
                acc(*a, g.iter().flat_map(|&gi| std::iter::repeat_n(gi, c)).collect());
            }
            Op::LogSumExpRows(a) => {
                let c = self.dims(*a).1;
                let da = val(*a)
                    .iter()
                    .enumerate()
                    .map(|(idx, &x)| g[idx / c] * (x - y[idx / c]).exp())
                    .collect();
                acc(*a, da);
            }
            Op::LogSoftmaxRows(a) => {
                let (r, c) = self.dims(*a);
                let mut da = vec![T::zero(); r * c];
                for i in 0..r {
                    let gs: T = g[i * c..(i + 1) * c].iter().copied().sum();
                    for j in 0..c {
                        da[i * c + j] = g[i * c + j] - y[i * c + j].exp() * gs;
                    }
                }
                acc(*a, da);
            }
            Op::PickCols(a, cols) => {
                let c = self.dims(*a).1;
                let mut da = vec![T::zero(); self.nodes[a.0].value.len()];
                for (i, &k) in cols.iter().enumerate() {
                    da[i * c + k] = g[i];
                }
                acc(*a, da);
            }
            Op::Aggregate(a, adj) => {
                let c = self.dims(*a).1;
                let mut da = vec![T::zero(); adj.nodes * c];
                for (i, row) in adj.rows.iter().enumerate() {
                    let gi = &g[i * c..(i + 1) * c];
                    for &(j, w) in row {
                        for (d, &x) in da[j * c..(j + 1) * c].iter_mut().zip(gi) {
                            *d = *d + w * x;
                        }
                    }
                }
                acc(*a, da);
            }
            Op::MeanPoolGroups(a, group) => {
                let (r, c) = self.dims(*a);
                let inv = T::one() / T::from_usize(*group).unwrap();
                let mut da = Vec::with_capacity(r * c);
                for i in 0..r {
                    let k = i / group;
                    da.extend(g[k * c..(k + 1) * c].iter().map(|&x| x * inv));
                }
                acc(*a, da);
            }
        }
    }
}

/// Gradients produced by one reverse sweep, indexed by node.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, zeros when `v` did not influence the output.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor<T> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

pub fn lse<T: Scalar>(xs: &[T]) -> T {
    let m = xs.iter().copied().fold(T::neg_infinity(), T::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|&x| (x - m).exp()).sum::<T>().ln()
}

fn matmul_kernel<T: Scalar>(a: &[T], b: &[T], n: usize, k: usize, m: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n * m];
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == T::zero() {
                continue;
            }
            for (o, &bpj) in row.iter_mut().zip(&b[p * m..(p + 1) * m]) {
                *o = *o + aip * bpj;
            }
        }
    }
    out
}
