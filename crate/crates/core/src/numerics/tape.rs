//! Reverse-mode differentiation over batched matrices.
//!
//! A [`Tape`] records every operation applied to [`Var`] handles while the
//! forward values are computed eagerly. [`Tape::backward`] then walks the
//! record in reverse and accumulates the adjoint of every node, returning the
//! gradient of a scalar output with respect to each parameter of the
//! [`ParamStore`] the tape reads from.
//!
//! Rows are batch items and columns are features throughout. Shape errors are
//! programming errors and panic; non-finite values are reported as
//! [`Error::NonFinite`] naming the offending node.

use serde::{Deserialize, Serialize};

use super::matrix::{gemm, Matrix};
use crate::error::{Error, Result};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Named parameter tensors, iterated in insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Matrix>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Matrix)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    /// Total number of scalar entries.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.data().len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(Matrix::is_finite)
    }
}

/// Gradients aligned with the parameters of a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    grads: Vec<Matrix>,
}

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self {
            grads: store
                .values
                .iter()
                .map(|v| Matrix::zeros(v.rows(), v.cols()))
                .collect(),
        }
    }

    pub fn from_matrices(grads: Vec<Matrix>) -> Self {
        Self { grads }
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.grads[id.0]
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Matrix> {
        self.grads.iter()
    }

    /// Entry-wise sum, used to check linearity.
    pub fn sum(&self, other: &Gradients) -> Gradients {
        Gradients {
            grads: self
                .grads
                .iter()
                .zip(&other.grads)
                .map(|(a, b)| a.zip_map(b, |x, y| x + y))
                .collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &Gradients) -> f64 {
        self.grads
            .iter()
            .zip(&other.grads)
            .map(|(a, b)| a.max_abs_diff(b))
            .fold(0.0, f64::max)
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    /// `x · wᵀ` with `x: b×i` and `w: o×i`.
    MatMulT {
        x: Var,
        w: Var,
    },
    /// Adds the `1×c` row `bias` to every row of `x`.
    AddRow {
        x: Var,
        bias: Var,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Exp(Var),
    Columns {
        x: Var,
        start: usize,
    },
    Concat(Var, Var),
    Permute {
        x: Var,
        perm: Vec<usize>,
    },
    /// Broadcasts a `1×c` row to `rows×c`.
    RepeatRows(Var),
    Sum(Var),
    Mean(Var),
    Chamfer {
        a: Var,
        b: Var,
        a_to_b: Vec<usize>,
        b_to_a: Vec<usize>,
    },
    RadialDeviation {
        z: Var,
        center: [f64; 2],
        radius: f64,
        padding: bool,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Constant => "constant",
            Op::Param(_) => "param",
            Op::MatMulT { .. } => "matmul",
            Op::AddRow { .. } => "add_row",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Tanh(_) => "tanh",
            Op::Exp(_) => "exp",
            Op::Columns { .. } => "columns",
            Op::Concat(..) => "concat",
            Op::Permute { .. } => "permute",
            Op::RepeatRows(_) => "repeat_rows",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::Chamfer { .. } => "chamfer",
            Op::RadialDeviation { .. } => "radial_deviation",
        }
    }
}

struct Node {
    /// `None` for parameters, whose value lives in the store.
    value: Option<Matrix>,
    op: Op,
    needs_grad: bool,
}

/// Chamfer (symmetric mean squared minimum distance) between two point sets
/// given as matrix rows, together with the nearest-neighbor index maps.
///
/// Ties resolve to the lowest index.
pub fn chamfer_with_matches(a: &Matrix, b: &Matrix) -> (f64, Vec<usize>, Vec<usize>) {
    assert_eq!(a.cols(), b.cols(), "chamfer operands differ in dimension");
    assert!(a.rows() > 0 && b.rows() > 0, "chamfer needs non-empty sets");
    let mut a_to_b = vec![0usize; a.rows()];
    let mut a_min = vec![f64::INFINITY; a.rows()];
    let mut b_to_a = vec![0usize; b.rows()];
    let mut b_min = vec![f64::INFINITY; b.rows()];
    for i in 0..a.rows() {
        let ai = a.row(i);
        for j in 0..b.rows() {
            let d: f64 = ai
                .iter()
                .zip(b.row(j))
                .map(|(u, v)| (u - v) * (u - v))
                .sum();
            if d < a_min[i] {
                a_min[i] = d;
                a_to_b[i] = j;
            }
            if d < b_min[j] {
                b_min[j] = d;
                b_to_a[j] = i;
            }
        }
    }
    let forward = a_min.iter().sum::<f64>() / a.rows() as f64;
    let backward = b_min.iter().sum::<f64>() / b.rows() as f64;
    (forward + backward, a_to_b, b_to_a)
}

/// Mean squared deviation of the first two columns from a circle, plus the
/// mean squared third column when `padding` is set.
pub fn radial_deviation(z: &Matrix, center: [f64; 2], radius: f64, padding: bool) -> f64 {
    let n = z.rows() as f64;
    let mut radial = 0.0;
    let mut pad = 0.0;
    for r in 0..z.rows() {
        let row = z.row(r);
        let dist = (row[0] - center[0]).hypot(row[1] - center[1]);
        radial += (dist - radius) * (dist - radius);
        if padding {
            pad += row[2] * row[2];
        }
    }
    radial / n + if padding { pad / n } else { 0.0 }
}

/// Records operations for one scalar computation over a parameter store.
pub struct Tape<'a> {
    store: &'a ParamStore,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<Var>>,
}

impl<'a> Tape<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            param_nodes: vec![None; store.len()],
        }
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(m), _) => m,
            (None, Op::Param(id)) => self.store.get(*id),
            _ => unreachable!("only parameters are stored out of line"),
        }
    }

    fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// Leaf for a stored parameter. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_nodes[id.0] {
            return v;
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
            needs_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes[id.0] = Some(v);
        v
    }

    pub fn matmul_t(&mut self, x: Var, w: Var) -> Var {
        let (xv, wv) = (self.value(x), self.value(w));
        assert_eq!(xv.cols(), wv.cols(), "matmul inner dimension");
        let mut out = Matrix::zeros(xv.rows(), wv.rows());
        gemm(1.0, xv, false, wv, true, 0.0, &mut out);
        let g = self.needs_grad(x) || self.needs_grad(w);
        self.push(out, Op::MatMulT { x, w }, g)
    }

    pub fn add_row(&mut self, x: Var, bias: Var) -> Var {
        let (xv, bv) = (self.value(x), self.value(bias));
        assert_eq!(bv.shape(), (1, xv.cols()), "bias shape");
        let mut out = xv.clone();
        let b = bv.data();
        for r in 0..out.rows() {
            for (o, bb) in out.row_mut(r).iter_mut().zip(b) {
                *o += bb;
            }
        }
        let g = self.needs_grad(x) || self.needs_grad(bias);
        self.push(out, Op::AddRow { x, bias }, g)
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> (Matrix, bool) {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "elementwise operands");
        (av.zip_map(bv, f), self.needs_grad(a) || self.needs_grad(b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (out, g) = self.binary(a, b, |x, y| x + y);
        self.push(out, Op::Add(a, b), g)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (out, g) = self.binary(a, b, |x, y| x - y);
        self.push(out, Op::Sub(a, b), g)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (out, g) = self.binary(a, b, |x, y| x * y);
        self.push(out, Op::Mul(a, b), g)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.value(a).map(|x| x * factor);
        let g = self.needs_grad(a);
        self.push(out, Op::Scale(a, factor), g)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        let g = self.needs_grad(a);
        self.push(out, Op::Tanh(a), g)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        let g = self.needs_grad(a);
        self.push(out, Op::Exp(a), g)
    }

    pub fn columns(&mut self, x: Var, start: usize, len: usize) -> Var {
        let xv = self.value(x);
        assert!(start + len <= xv.cols(), "column range");
        let out = xv.columns(start, len);
        let g = self.needs_grad(x);
        self.push(out, Op::Columns { x, start }, g)
    }

    pub fn concat(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).hcat(self.value(b));
        let g = self.needs_grad(a) || self.needs_grad(b);
        self.push(out, Op::Concat(a, b), g)
    }

    /// `out[:, k] = x[:, perm[k]]`; `perm` must be a permutation of the columns.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.cols(), perm.len(), "permutation length");
        let out = xv.permute_columns(perm);
        let g = self.needs_grad(x);
        self.push(
            out,
            Op::Permute {
                x,
                perm: perm.to_vec(),
            },
            g,
        )
    }

    pub fn repeat_rows(&mut self, x: Var, rows: usize) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.rows(), 1, "only single rows broadcast");
        let mut out = Matrix::zeros(rows, xv.cols());
        for r in 0..rows {
            out.row_mut(r).copy_from_slice(xv.data());
        }
        let g = self.needs_grad(x);
        self.push(out, Op::RepeatRows(x), g)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Matrix::scalar(self.value(a).data().iter().sum());
        let g = self.needs_grad(a);
        self.push(out, Op::Sum(a), g)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let out = Matrix::scalar(av.data().iter().sum::<f64>() / av.data().len() as f64);
        let g = self.needs_grad(a);
        self.push(out, Op::Mean(a), g)
    }

    /// Symmetric chamfer distance between the rows of `a` and `b`; the gradient
    /// flows through the selected nearest neighbors only.
    pub fn chamfer(&mut self, a: Var, b: Var) -> Var {
        let (value, a_to_b, b_to_a) = chamfer_with_matches(self.value(a), self.value(b));
        let g = self.needs_grad(a) || self.needs_grad(b);
        self.push(
            Matrix::scalar(value),
            Op::Chamfer {
                a,
                b,
                a_to_b,
                b_to_a,
            },
            g,
        )
    }

    /// Mean of `(‖z[:, 0..2] − center‖ − radius)²` plus the mean of `z[:, 2]²`
    /// when `padding` is set. The circle itself is treated as a constant.
    pub fn radial_deviation(
        &mut self,
        z: Var,
        center: [f64; 2],
        radius: f64,
        padding: bool,
    ) -> Var {
        let zv = self.value(z);
        assert_eq!(zv.cols(), if padding { 3 } else { 2 }, "radial operand");
        let value = radial_deviation(zv, center, radius, padding);
        let g = self.needs_grad(z);
        self.push(
            Matrix::scalar(value),
            Op::RadialDeviation {
                z,
                center,
                radius,
                padding,
            },
            g,
        )
    }

    /// Fails with the first node holding a non-finite value.
    pub fn check_finite(&self) -> Result<()> {
        for (index, node) in self.nodes.iter().enumerate() {
            if let Some(v) = &node.value {
                if !v.is_finite() {
                    return Err(Error::NonFinite {
                        index,
                        op: node.op.name(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Gradient of the scalar `output` with respect to every stored parameter.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        assert_eq!(
            self.value(output).shape(),
            (1, 1),
            "backward needs a scalar"
        );
        self.check_finite()?;

        let mut adj: Vec<Option<Matrix>> = (0..=output.0).map(|_| None).collect();
        adj[output.0] = Some(Matrix::scalar(1.0));

        for index in (0..=output.0).rev() {
            let node = &self.nodes[index];
            if !node.needs_grad {
                continue;
            }
            let Some(dy) = adj[index].take() else {
                continue;
            };
            if !dy.is_finite() {
                return Err(Error::NonFinite {
                    index,
                    op: node.op.name(),
                });
            }
            self.propagate(index, dy, &mut adj);
        }

        let mut adj = adj;
        let mut grads = Gradients::zeros_like(self.store);
        for (pid, var) in self.param_nodes.iter().enumerate() {
            if let Some(v) = var {
                if let Some(g) = adj.get_mut(v.0).and_then(Option::take) {
                    grads.grads[pid] = g;
                }
            }
        }
        Ok(grads)
    }

    fn propagate(&self, index: usize, dy: Matrix, adj: &mut [Option<Matrix>]) {
        let node = &self.nodes[index];
        let send = |target: Var, g: Matrix, adj: &mut [Option<Matrix>]| {
            if !self.needs_grad(target) {
                return;
            }
            match &mut adj[target.0] {
                Some(acc) => acc.add_assign(&g),
                slot => *slot = Some(g),
            }
        };
        match &node.op {
            Op::Constant => {}
            Op::Param(_) => {
                // Leaves keep their adjoint for collection.
                adj[index] = Some(dy);
            }
            Op::MatMulT { x, w } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                if self.needs_grad(*x) {
                    let mut dx = Matrix::zeros(xv.rows(), xv.cols());
                    gemm(1.0, &dy, false, wv, false, 0.0, &mut dx);
                    send(*x, dx, adj);
                }
                if self.needs_grad(*w) {
                    let mut dw = Matrix::zeros(wv.rows(), wv.cols());
                    gemm(1.0, &dy, true, xv, false, 0.0, &mut dw);
                    send(*w, dw, adj);
                }
            }
            Op::AddRow { x, bias } => {
                if self.needs_grad(*bias) {
                    send(*bias, column_sums(&dy), adj);
                }
                send(*x, dy, adj);
            }
            Op::Add(a, b) => {
                send(*b, dy.clone(), adj);
                send(*a, dy, adj);
            }
            Op::Sub(a, b) => {
                send(*b, dy.map(|v| -v), adj);
                send(*a, dy, adj);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.needs_grad(*a) {
                    send(*a, dy.zip_map(bv, |g, y| g * y), adj);
                }
                if self.needs_grad(*b) {
                    send(*b, dy.zip_map(av, |g, x| g * x), adj);
                }
            }
            Op::Scale(a, f) => send(*a, dy.map(|g| g * f), adj),
            Op::Tanh(a) => {
                let y = node.value.as_ref().expect("tanh value");
                send(*a, dy.zip_map(y, |g, t| g * (1.0 - t * t)), adj);
            }
            Op::Exp(a) => {
                let y = node.value.as_ref().expect("exp value");
                send(*a, dy.zip_map(y, |g, e| g * e), adj);
            }
            Op::Columns { x, start } => {
                let xv = self.value(*x);
                let mut dx = Matrix::zeros(xv.rows(), xv.cols());
                for r in 0..dy.rows() {
                    dx.row_mut(r)[*start..*start + dy.cols()].copy_from_slice(dy.row(r));
                }
                send(*x, dx, adj);
            }
            Op::Concat(a, b) => {
                let left = self.value(*a).cols();
                send(*a, dy.columns(0, left), adj);
                send(*b, dy.columns(left, dy.cols() - left), adj);
            }
            Op::Permute { x, perm } => {
                let mut dx = Matrix::zeros(dy.rows(), dy.cols());
                for r in 0..dy.rows() {
                    let src = dy.row(r);
                    let dst = dx.row_mut(r);
                    for (k, &p) in perm.iter().enumerate() {
                        dst[p] += src[k];
                    }
                }
                send(*x, dx, adj);
            }
            Op::RepeatRows(x) => send(*x, column_sums(&dy), adj),
            Op::Sum(a) => {
                let av = self.value(*a);
                let g = dy.item();
                send(
                    *a,
                    Matrix::from_vec(av.rows(), av.cols(), vec![g; av.data().len()]).unwrap(),
                    adj,
                );
            }
            Op::Mean(a) => {
                let av = self.value(*a);
                let g = dy.item() / av.data().len() as f64;
                send(
                    *a,
                    Matrix::from_vec(av.rows(), av.cols(), vec![g; av.data().len()]).unwrap(),
                    adj,
                );
            }
            Op::Chamfer {
                a,
                b,
                a_to_b,
                b_to_a,
            } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let g = dy.item();
                let mut da = Matrix::zeros(av.rows(), av.cols());
                let mut db = Matrix::zeros(bv.rows(), bv.cols());
                let wa = 2.0 * g / av.rows() as f64;
                for (i, &j) in a_to_b.iter().enumerate() {
                    for c in 0..av.cols() {
                        let d = wa * (av.get(i, c) - bv.get(j, c));
                        da.row_mut(i)[c] += d;
                        db.row_mut(j)[c] -= d;
                    }
                }
                let wb = 2.0 * g / bv.rows() as f64;
                for (j, &i) in b_to_a.iter().enumerate() {
                    for c in 0..av.cols() {
                        let d = wb * (av.get(i, c) - bv.get(j, c));
                        da.row_mut(i)[c] += d;
                        db.row_mut(j)[c] -= d;
                    }
                }
                send(*a, da, adj);
                send(*b, db, adj);
            }
            Op::RadialDeviation {
                z,
                center,
                radius,
                padding,
            } => {
                let zv = self.value(*z);
                let n = zv.rows() as f64;
                let g = dy.item();
                let mut dz = Matrix::zeros(zv.rows(), zv.cols());
                for r in 0..zv.rows() {
                    let row = zv.row(r);
                    let (u, v) = (row[0] - center[0], row[1] - center[1]);
                    let dist = u.hypot(v);
                    let out = dz.row_mut(r);
                    if dist > 0.0 {
                        let k = 2.0 * g * (dist - radius) / (n * dist);
                        out[0] = k * u;
                        out[1] = k * v;
                    }
                    if *padding {
                        out[2] = 2.0 * g * row[2] / n;
                    }
                }
                send(*z, dz, adj);
            }
        }
    }
}

fn column_sums(m: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(1, m.cols());
    for r in 0..m.rows() {
        for (o, v) in out.data_mut().iter_mut().zip(m.row(r)) {
            *o += v;
        }
    }
    out
}
