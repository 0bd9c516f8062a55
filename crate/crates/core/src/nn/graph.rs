//! Tape-based reverse-mode differentiation over 2-D values.

use super::tensor::{matmul, matmul_a_bt_acc, matmul_at_b_acc, Tensor};
use crate::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf { param: Option<usize> },
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Tanh(Var),
    MeanRows(Var),
    SoftmaxRows(Var),
    MulCol { a: Var, g: Var, col: usize },
    ConcatRows(Vec<Var>),
    CrossEntropy { logits: Var, targets: Vec<usize> },
    MeanSquaredError { pred: Var, targets: Vec<f64> },
    CvSquared(Var),
}

#[derive(Debug, Clone)]
struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    op: Op,
}

#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn shape_err(what: &str, a: (usize, usize), b: (usize, usize)) -> Error {
    Error::Shape(format!("{what}: {}x{} vs {}x{}", a.0, a.1, b.0, b.1))
}

/// Squared coefficient of variation of the column sums of a `b x n` matrix.
pub(crate) fn cv_squared(rows: usize, cols: usize, g: &[f64]) -> f64 {
    let imp = column_sums(rows, cols, g);
    let mean = imp.iter().sum::<f64>() / cols as f64;
    if mean == 0.0 {
        return 0.0;
    }
    let var = imp.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / cols as f64;
    var / (mean * mean)
}

fn column_sums(rows: usize, cols: usize, g: &[f64]) -> Vec<f64> {
    let mut imp = vec![0.0; cols];
    for r in 0..rows {
        for (i, v) in imp.iter_mut().zip(&g[r * cols..(r + 1) * cols]) {
            *i += v;
        }
    }
    imp
}

fn softmax_row(z: &[f64], out: &mut [f64]) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for (o, &x) in out.iter_mut().zip(z) {
        *o = (x - m).exp();
        s += *o;
    }
    for o in out.iter_mut() {
        *o /= s;
    }
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
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

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, op: Op) -> Var {
        debug_assert_eq!(rows * cols, value.len());
        self.nodes.push(Node { rows, cols, value, op });
        Var(self.nodes.len() - 1)
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.dims(v)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor { shape: vec![n.rows, n.cols], data: n.value.clone(), grad: None }
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn constant(&mut self, rows: usize, cols: usize, value: Vec<f64>) -> Result<Var> {
        if rows * cols != value.len() {
            return Err(shape_err("constant", (rows, cols), (value.len(), 1)));
        }
        Ok(self.push(rows, cols, value, Op::Leaf { param: None }))
    }

    pub fn constant_tensor(&mut self, t: &Tensor) -> Var {
        self.push(t.rows(), t.cols(), t.data.clone(), Op::Leaf { param: None })
    }

    /// Leaf whose gradient flows back to parameter `id` of a store.
    pub fn param(&mut self, id: usize, t: &Tensor) -> Var {
        self.push(t.rows(), t.cols(), t.data.clone(), Op::Leaf { param: Some(id) })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(shape_err("matmul", (m, k), (k2, n)));
        }
        let v = matmul(&self.nodes[a.0].value, &self.nodes[b.0].value, m, k, n);
        Ok(self.push(m, n, v, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (da, db) = (self.dims(a), self.dims(b));
        if da != db {
            return Err(shape_err("add", da, db));
        }
        let v = self.nodes[a.0].value.iter().zip(&self.nodes[b.0].value).map(|(x, y)| x + y).collect();
        Ok(self.push(da.0, da.1, v, Op::Add(a, b)))
    }

    /// Adds the `1 x c` row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, n) = self.dims(a);
        let db = self.dims(b);
        if db != (1, n) {
            return Err(shape_err("add_row", (m, n), db));
        }
        let bias = &self.nodes[b.0].value;
        let v = self.nodes[a.0].value.iter().enumerate().map(|(i, x)| x + bias[i % n]).collect();
        Ok(self.push(m, n, v, Op::AddRow(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let (m, n) = self.dims(a);
        let v = self.nodes[a.0].value.iter().map(|x| c * x).collect();
        self.push(m, n, v, Op::Scale(a, c))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let (m, n) = self.dims(a);
        let v = self.nodes[a.0].value.iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect();
        self.push(m, n, v, Op::Relu(a))
    }

    /// Which inputs of every recorded ReLU were positive, in tape order.
    pub fn relu_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for node in &self.nodes {
            if let Op::Relu(a) = node.op {
                out.extend(self.nodes[a.0].value.iter().map(|&x| x > 0.0));
            }
        }
        out
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let (m, n) = self.dims(a);
        let v = self.nodes[a.0].value.iter().map(|x| x.tanh()).collect();
        self.push(m, n, v, Op::Tanh(a))
    }

    /// Column means, `1 x c`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let (m, n) = self.dims(a);
        let mut v = column_sums(m, n, &self.nodes[a.0].value);
        for x in &mut v {
            *x /= m as f64;
        }
        self.push(1, n, v, Op::MeanRows(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let (m, n) = self.dims(a);
        let z = &self.nodes[a.0].value;
        let mut v = vec![0.0; m * n];
        for r in 0..m {
            softmax_row(&z[r * n..(r + 1) * n], &mut v[r * n..(r + 1) * n]);
        }
        self.push(m, n, v, Op::SoftmaxRows(a))
    }

    /// Scales row `r` of `a` by `g[r, col]`.
    pub fn mul_col(&mut self, a: Var, g: Var, col: usize) -> Result<Var> {
        let (m, n) = self.dims(a);
        let (gm, gn) = self.dims(g);
        if gm != m || col >= gn {
            return Err(shape_err("mul_col", (m, n), (gm, gn)));
        }
        let gv = &self.nodes[g.0].value;
        let v = self.nodes[a.0].value.iter().enumerate().map(|(i, x)| x * gv[(i / n) * gn + col]).collect();
        Ok(self.push(m, n, v, Op::MulCol { a, g, col }))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::Shape("concat of nothing".into()));
        };
        let n = self.dims(first).1;
        let mut v = Vec::new();
        let mut m = 0;
        for &p in parts {
            let d = self.dims(p);
            if d.1 != n {
                return Err(shape_err("concat_rows", (m, n), d));
            }
            v.extend_from_slice(&self.nodes[p.0].value);
            m += d.0;
        }
        Ok(self.push(m, n, v, Op::ConcatRows(parts.to_vec())))
    }

    /// Mean softmax cross-entropy of `b x k` logits against class indices.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (m, n) = self.dims(logits);
        if targets.len() != m || targets.iter().any(|&t| t >= n) {
            return Err(Error::Shape("cross_entropy targets do not match logits".into()));
        }
        let z = &self.nodes[logits.0].value;
        let mut loss = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            let row = &z[r * n..(r + 1) * n];
            loss += log_sum_exp(row) - row[t];
        }
        Ok(self.push(1, 1, vec![loss / m as f64], Op::CrossEntropy { logits, targets: targets.to_vec() }))
    }

    /// Mean squared error of a `b x 1` prediction.
    pub fn mean_squared_error(&mut self, pred: Var, targets: &[f64]) -> Result<Var> {
        let (m, n) = self.dims(pred);
        if n != 1 || targets.len() != m {
            return Err(Error::Shape("mean_squared_error targets do not match predictions".into()));
        }
        let p = &self.nodes[pred.0].value;
        let loss = p.iter().zip(targets).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / m as f64;
        Ok(self.push(1, 1, vec![loss], Op::MeanSquaredError { pred, targets: targets.to_vec() }))
    }

    /// Squared coefficient of variation of per-column importance.
    pub fn cv_squared(&mut self, g: Var) -> Var {
        let (m, n) = self.dims(g);
        let v = cv_squared(m, n, &self.nodes[g.0].value);
        self.push(1, 1, vec![v], Op::CvSquared(g))
    }

    /// Reverse sweep from the scalar `loss`. Gradients for parameter leaves
    /// are added into `params[id].grad`.
    pub fn backward(&self, loss: Var, params: &mut [Tensor]) -> Result<()> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::NoForward);
        }
        if self.dims(loss) != (1, 1) {
            return Err(Error::Shape("backward needs a scalar loss".into()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(dc) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let (m, n) = (node.rows, node.cols);
            match &node.op {
                Op::Leaf { param: Some(id) } => {
                    let p = params.get_mut(*id).ok_or_else(|| Error::Shape(format!("no parameter {id}")))?;
                    if p.data.len() != dc.len() {
                        return Err(Error::Shape(format!("parameter {id} changed shape")));
                    }
                    let g = p.grad.get_or_insert_with(|| vec![0.0; dc.len()]);
                    for (a, b) in g.iter_mut().zip(&dc) {
                        *a += b;
                    }
                }
                Op::Leaf { param: None } => {}
                Op::MatMul(a, b) => {
                    let k = self.dims(*a).1;
                    let av = &self.nodes[a.0].value;
                    let bv = &self.nodes[b.0].value;
                    let mut ga = vec![0.0; m * k];
                    matmul_a_bt_acc(&mut ga, &dc, bv, m, n, k);
                    let mut gb = vec![0.0; k * n];
                    matmul_at_b_acc(&mut gb, av, &dc, m, k, n);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, dc.clone());
                    accumulate(&mut grads, *b, dc);
                }
                Op::AddRow(a, b) => {
                    accumulate(&mut grads, *b, column_sums(m, n, &dc));
                    accumulate(&mut grads, *a, dc);
                }
                Op::Scale(a, c) => {
                    accumulate(&mut grads, *a, dc.iter().map(|x| c * x).collect());
                }
                Op::Relu(a) => {
                    let av = &self.nodes[a.0].value;
                    let g = dc.iter().zip(av).map(|(d, &x)| if x > 0.0 { *d } else { 0.0 }).collect();
                    accumulate(&mut grads, *a, g);
                }
                Op::Tanh(a) => {
                    let g = dc.iter().zip(&node.value).map(|(d, y)| d * (1.0 - y * y)).collect();
                    accumulate(&mut grads, *a, g);
                }
                Op::MeanRows(a) => {
                    let (am, an) = self.dims(*a);
                    let g = (0..am * an).map(|i| dc[i % an] / am as f64).collect();
                    accumulate(&mut grads, *a, g);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut g = vec![0.0; m * n];
                    for r in 0..m {
                        let yr = &y[r * n..(r + 1) * n];
                        let dr = &dc[r * n..(r + 1) * n];
                        let dot: f64 = yr.iter().zip(dr).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            g[r * n + j] = yr[j] * (dr[j] - dot);
                        }
                    }
                    accumulate(&mut grads, *a, g);
                }
                Op::MulCol { a, g, col } => {
                    let av = &self.nodes[a.0].value;
                    let (gm, gn) = self.dims(*g);
                    let gv = &self.nodes[g.0].value;
                    let mut ga = vec![0.0; m * n];
                    let mut gg = vec![0.0; gm * gn];
                    for r in 0..m {
                        let w = gv[r * gn + col];
                        let mut s = 0.0;
                        for j in 0..n {
                            ga[r * n + j] = dc[r * n + j] * w;
                            s += dc[r * n + j] * av[r * n + j];
                        }
                        gg[r * gn + col] = s;
                    }
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *g, gg);
                }
                Op::ConcatRows(parts) => {
                    let mut at = 0;
                    for p in parts {
                        let len = self.nodes[p.0].value.len();
                        accumulate(&mut grads, *p, dc[at..at + len].to_vec());
                        at += len;
                    }
                }
                Op::CrossEntropy { logits, targets } => {
                    let (lm, ln) = self.dims(*logits);
                    let z = &self.nodes[logits.0].value;
                    let mut g = vec![0.0; lm * ln];
                    let scale = dc[0] / lm as f64;
                    for (r, &t) in targets.iter().enumerate() {
                        softmax_row(&z[r * ln..(r + 1) * ln], &mut g[r * ln..(r + 1) * ln]);
                        g[r * ln + t] -= 1.0;
                        for x in &mut g[r * ln..(r + 1) * ln] {
                            *x *= scale;
                        }
                    }
                    accumulate(&mut grads, *logits, g);
                }
                Op::MeanSquaredError { pred, targets } => {
                    let p = &self.nodes[pred.0].value;
                    let scale = 2.0 * dc[0] / targets.len() as f64;
                    let g = p.iter().zip(targets).map(|(a, b)| scale * (a - b)).collect();
                    accumulate(&mut grads, *pred, g);
                }
                Op::CvSquared(gv) => {
                    let (gm, gn) = self.dims(*gv);
                    let imp = column_sums(gm, gn, &self.nodes[gv.0].value);
                    let nn = gn as f64;
                    let mean = imp.iter().sum::<f64>() / nn;
                    let mut g = vec![0.0; gm * gn];
                    if mean != 0.0 {
                        let var = imp.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / nn;
                        for j in 0..gn {
                            let d = 2.0 * (imp[j] - mean) / (nn * mean * mean) - 2.0 * var / (nn * mean.powi(3));
                            for r in 0..gm {
                                g[r * gn + j] = dc[0] * d;
                            }
                        }
                    }
                    accumulate(&mut grads, *gv, g);
                }
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, g: Vec<f64>) {
    match &mut grads[v.0] {
        Some(acc) => {
            for (a, b) in acc.iter_mut().zip(&g) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}
