//! Reverse-mode differentiation over real-valued tensor graphs.
//!
//! A [`Tape`] records a static acyclic graph of operations over row-major
//! matrices (scalars and vectors are 1x1 and Nx1/1xN). Roots are either
//! parameters (receive adjoints) or constants (do not). The graph is built
//! once, then re-bound and re-run as many times as needed: `bind` sets root
//! values, [`Tape::forward`] evaluates every node in recording order, and
//! [`Tape::backward`] propagates adjoints in exact reverse order, so
//! identical bindings always produce bit-identical values and gradients.
//!
//! Complex arithmetic is expressed at graph-construction time as explicit
//! real/imaginary pairs, which keeps the adjoint rule set small and fully
//! real-valued. Matrix products are evaluated through a dgemm kernel; their
//! adjoints are the usual `dA = G B^T`, `dB = A^T G`, realized as strided
//! dgemm calls without materializing transposes.

use std::fmt;

/// Row-major tensor shape. Scalars are `1 x 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub rows: usize,
    pub cols: usize,
}

impl Shape {
    pub fn scalar() -> Self {
        Shape { rows: 1, cols: 1 }
    }
    pub fn vector(n: usize) -> Self {
        Shape { rows: n, cols: 1 }
    }
    pub fn matrix(rows: usize, cols: usize) -> Self {
        Shape { rows, cols }
    }
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
    pub fn is_scalar(&self) -> bool {
        self.rows == 1 && self.cols == 1
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.rows, self.cols)
    }
}

/// Handle to a node on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

/// Reduction direction: `Rows` collapses rows (per-column statistics,
/// result `1 x C`), `Cols` collapses columns (per-row sums, result `R x 1`),
/// `All` collapses to a scalar.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    All,
    Rows,
    Cols,
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Param,
    Const,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Sin(usize),
    Cos(usize),
    Exp(usize),
    Ln(usize),
    Sqrt(usize),
    Square(usize),
    Relu(usize),
    Sigmoid(usize),
    AddScalar(usize, f64),
    MulScalar(usize, f64),
    Clamp(usize, f64, f64),
    Sum(usize, Axis),
    Mean(usize, Axis),
    Dot(usize, usize),
    MatVec(usize, usize),
    MatMul(usize, usize),
    /// Bias add: `a (R x C) + row (1 x C)` broadcast over rows.
    AddRow(usize, usize),
    BroadcastRow(usize, usize),
    BroadcastCol(usize, usize),
    SliceCols(usize, usize, usize),
    /// Batch normalization over rows with per-column scale and shift:
    /// `y = gamma * (x - mean) / sqrt(var + eps) + beta`, statistics taken
    /// over the rows of the current binding.
    BatchNorm { x: usize, gamma: usize, beta: usize, eps: f64 },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Param => "param",
            Op::Const => "const",
            Op::Add(..) => "add",
            Op::Sub(..) => "subtract",
            Op::Mul(..) => "multiply",
            Op::Div(..) => "divide",
            Op::Neg(..) => "negate",
            Op::Sin(..) => "sin",
            Op::Cos(..) => "cos",
            Op::Exp(..) => "exp",
            Op::Ln(..) => "natural_log",
            Op::Sqrt(..) => "sqrt",
            Op::Square(..) => "square",
            Op::Relu(..) => "relu",
            Op::Sigmoid(..) => "sigmoid",
            Op::AddScalar(..) => "add_scalar",
            Op::MulScalar(..) => "mul_scalar",
            Op::Clamp(..) => "clamp",
            Op::Sum(..) => "sum_reduce",
            Op::Mean(..) => "mean_reduce",
            Op::Dot(..) => "dot",
            Op::MatVec(..) => "matvec",
            Op::MatMul(..) => "matmul",
            Op::AddRow(..) => "add_row",
            Op::BroadcastRow(..) => "broadcast_row",
            Op::BroadcastCol(..) => "broadcast_col",
            Op::SliceCols(..) => "slice_cols",
            Op::BatchNorm { .. } => "batch_norm",
        }
    }
}

#[derive(Debug)]
pub enum AutodiffError {
    /// A root was never bound before evaluation.
    UnboundRoot(NodeId),
    /// Domain violation at evaluation time (log of a non-positive value,
    /// square root of a negative value, division by zero).
    NumericDomain { op: &'static str, node: NodeId },
    /// Backward requested before a successful forward pass.
    BackwardBeforeForward,
}

impl fmt::Display for AutodiffError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AutodiffError::UnboundRoot(NodeId(i)) => write!(f, "root node {i} was never bound"),
            AutodiffError::NumericDomain { op, node: NodeId(i) } => {
                write!(f, "numeric domain violation in {op} at node {i}")
            }
            AutodiffError::BackwardBeforeForward => {
                write!(f, "backward called before a successful forward pass")
            }
        }
    }
}

impl std::error::Error for AutodiffError {}

/// A recorded computation graph with storage for values and adjoints.
pub struct Tape {
    ops: Vec<Op>,
    shapes: Vec<Shape>,
    values: Vec<Vec<f64>>,
    adjoints: Vec<Vec<f64>>,
    /// Per-node scratch kept from forward for the backward rules
    /// (batch-norm means and variances).
    aux: Vec<Vec<f64>>,
    bound: Vec<bool>,
    params: Vec<NodeId>,
    evaluated: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            ops: Vec::new(),
            shapes: Vec::new(),
            values: Vec::new(),
            adjoints: Vec::new(),
            aux: Vec::new(),
            bound: Vec::new(),
            params: Vec::new(),
            evaluated: false,
        }
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    /// Parameter roots in registration order.
    pub fn params(&self) -> &[NodeId] {
        &self.params
    }

    pub fn shape(&self, id: NodeId) -> Shape {
        self.shapes[id.0]
    }

    fn push(&mut self, op: Op, shape: Shape) -> NodeId {
        let id = NodeId(self.ops.len());
        self.ops.push(op);
        self.shapes.push(shape);
        self.values.push(vec![0.0; shape.len()]);
        self.adjoints.push(vec![0.0; shape.len()]);
        self.aux.push(Vec::new());
        self.bound.push(false);
        self.evaluated = false;
        id
    }

    /// Registers a trainable root. Adjoints accumulate here.
    pub fn param(&mut self, shape: Shape) -> NodeId {
        let id = self.push(Op::Param, shape);
        self.params.push(id);
        id
    }

    /// Registers a non-trainable root (data, features).
    pub fn constant(&mut self, shape: Shape) -> NodeId {
        self.push(Op::Const, shape)
    }

    /// Binds values to a root node.
    ///
    /// Panics on non-root targets or length mismatch; both are builder
    /// misuse rather than runtime conditions.
    pub fn bind(&mut self, id: NodeId, values: &[f64]) {
        match self.ops[id.0] {
            Op::Param | Op::Const => {}
            ref op => panic!("bind target {} is a {} node, not a root", id.0, op.name()),
        }
        assert_eq!(
            values.len(),
            self.shapes[id.0].len(),
            "bind length mismatch on node {}",
            id.0
        );
        self.values[id.0].copy_from_slice(values);
        self.bound[id.0] = true;
        self.evaluated = false;
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.values[id.0]
    }

    /// Scalar value of a `1 x 1` node.
    pub fn scalar_value(&self, id: NodeId) -> f64 {
        assert!(self.shapes[id.0].is_scalar(), "node {} is not scalar", id.0);
        self.values[id.0][0]
    }

    pub fn adjoint(&self, id: NodeId) -> &[f64] {
        &self.adjoints[id.0]
    }

    /// Batch statistics (means, variances) cached by a batch-norm node
    /// during the last forward pass.
    pub fn batch_norm_stats(&self, id: NodeId) -> Option<(&[f64], &[f64])> {
        match self.ops[id.0] {
            Op::BatchNorm { .. } => {
                let c = self.shapes[id.0].cols;
                let aux = &self.aux[id.0];
                Some((&aux[..c], &aux[c..2 * c]))
            }
            _ => None,
        }
    }

    // ---- graph builders ----------------------------------------------

    fn same_shape(&self, a: NodeId, b: NodeId, what: &str) -> Shape {
        let (sa, sb) = (self.shapes[a.0], self.shapes[b.0]);
        assert_eq!(sa, sb, "{what}: shape mismatch {sa} vs {sb}");
        sa
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let s = self.same_shape(a, b, "add");
        self.push(Op::Add(a.0, b.0), s)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let s = self.same_shape(a, b, "subtract");
        self.push(Op::Sub(a.0, b.0), s)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let s = self.same_shape(a, b, "multiply");
        self.push(Op::Mul(a.0, b.0), s)
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let s = self.same_shape(a, b, "divide");
        self.push(Op::Div(a.0, b.0), s)
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        let s = self.shapes[a.0];
        self.push(Op::Neg(a.0), s)
    }

    pub fn sin(&mut self, a: NodeId) -> NodeId {
        let s = self.shapes[a.0];
        self.push(Op::Sin(a.0), s)
    }

    pub fn cos(&mut self, a: NodeId) -> NodeId {
        let s = self.shapes[a.0];
        self.push(Op::Cos(a.0), s)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let s = self.shapes[a.0];
        self.push(Op::Exp(a.0), s)
    }

    pub fn ln(&mut self, a: NodeId) -> NodeId {
        let s = self.shapes[a.0];
        self.push(Op::Ln(a.0), s)
    }

    pub fn sqrt(&mut self, a: NodeId) -> NodeId {
        let s = self.shapes[a.0];
        self.push(Op::Sqrt(a.0), s)
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        let s = self.shapes[a.0];
        self.push(Op::Square(a.0), s)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let s = self.shapes[a.0];
        self.push(Op::Relu(a.0), s)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let s = self.shapes[a.0];
        self.push(Op::Sigmoid(a.0), s)
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        let s = self.shapes[a.0];
        self.push(Op::AddScalar(a.0, c), s)
    }

    pub fn mul_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        let s = self.shapes[a.0];
        self.push(Op::MulScalar(a.0, c), s)
    }

    /// Clamp to `[lo, hi]`; the subgradient is zero outside the open
    /// interval, matching the relu-at-kink convention.
    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> NodeId {
        assert!(lo < hi, "clamp bounds");
        let s = self.shapes[a.0];
        self.push(Op::Clamp(a.0, lo, hi), s)
    }

    pub fn sum(&mut self, a: NodeId, axis: Axis) -> NodeId {
        let s = self.shapes[a.0];
        let out = match axis {
            Axis::All => Shape::scalar(),
            Axis::Rows => Shape::matrix(1, s.cols),
            Axis::Cols => Shape::matrix(s.rows, 1),
        };
        self.push(Op::Sum(a.0, axis), out)
    }

    pub fn mean(&mut self, a: NodeId, axis: Axis) -> NodeId {
        let s = self.shapes[a.0];
        let out = match axis {
            Axis::All => Shape::scalar(),
            Axis::Rows => Shape::matrix(1, s.cols),
            Axis::Cols => Shape::matrix(s.rows, 1),
        };
        self.push(Op::Mean(a.0, axis), out)
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let s = self.same_shape(a, b, "dot");
        assert!(s.cols == 1, "dot expects column vectors, got {s}");
        self.push(Op::Dot(a.0, b.0), Shape::scalar())
    }

    pub fn matvec(&mut self, a: NodeId, x: NodeId) -> NodeId {
        let (sa, sx) = (self.shapes[a.0], self.shapes[x.0]);
        assert!(sx.cols == 1, "matvec vector must be a column, got {sx}");
        assert_eq!(sa.cols, sx.rows, "matvec: {sa} * {sx}");
        self.push(Op::MatVec(a.0, x.0), Shape::vector(sa.rows))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (sa, sb) = (self.shapes[a.0], self.shapes[b.0]);
        assert_eq!(sa.cols, sb.rows, "matmul: {sa} * {sb}");
        self.push(Op::MatMul(a.0, b.0), Shape::matrix(sa.rows, sb.cols))
    }

    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let (sa, sr) = (self.shapes[a.0], self.shapes[row.0]);
        assert!(sr.rows == 1 && sr.cols == sa.cols, "add_row: {sa} + {sr}");
        self.push(Op::AddRow(a.0, row.0), sa)
    }

    pub fn broadcast_row(&mut self, a: NodeId, rows: usize) -> NodeId {
        let s = self.shapes[a.0];
        assert!(s.rows == 1, "broadcast_row expects 1 x C, got {s}");
        self.push(Op::BroadcastRow(a.0, rows), Shape::matrix(rows, s.cols))
    }

    pub fn broadcast_col(&mut self, a: NodeId, cols: usize) -> NodeId {
        let s = self.shapes[a.0];
        assert!(s.cols == 1, "broadcast_col expects R x 1, got {s}");
        self.push(Op::BroadcastCol(a.0, cols), Shape::matrix(s.rows, cols))
    }

    pub fn slice_cols(&mut self, a: NodeId, lo: usize, hi: usize) -> NodeId {
        let s = self.shapes[a.0];
        assert!(lo < hi && hi <= s.cols, "slice_cols [{lo}, {hi}) of {s}");
        self.push(Op::SliceCols(a.0, lo, hi), Shape::matrix(s.rows, hi - lo))
    }

    pub fn batch_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: f64) -> NodeId {
        let sx = self.shapes[x.0];
        let sg = self.shapes[gamma.0];
        let sb = self.shapes[beta.0];
        assert!(sg.rows == 1 && sg.cols == sx.cols, "batch_norm gamma: {sg} for {sx}");
        assert!(sb.rows == 1 && sb.cols == sx.cols, "batch_norm beta: {sb} for {sx}");
        assert!(sx.rows >= 2, "batch_norm needs at least two rows, got {sx}");
        assert!(eps > 0.0);
        self.push(Op::BatchNorm { x: x.0, gamma: gamma.0, beta: beta.0, eps }, sx)
    }

    // ---- execution ----------------------------------------------------

    /// Evaluates every node in recording order. Returns the value of `out`,
    /// which must be scalar-shaped if it is later used as a backward root.
    pub fn forward(&mut self, out: NodeId) -> Result<f64, AutodiffError> {
        for i in 0..self.ops.len() {
            self.eval_node(i)?;
        }
        self.evaluated = true;
        Ok(self.values[out.0][0])
    }

    fn eval_node(&mut self, i: usize) -> Result<(), AutodiffError> {
        macro_rules! unary {
            ($a:expr, $f:expr) => {{
                let (dst, src) = split_two(&mut self.values, i, $a);
                for (o, &x) in dst.iter_mut().zip(src.iter()) {
                    *o = $f(x);
                }
            }};
        }
        macro_rules! binary {
            ($a:expr, $b:expr, $f:expr) => {{
                let a = $a;
                let b = $b;
                for k in 0..self.values[i].len() {
                    let x = self.values[a][k];
                    let y = self.values[b][k];
                    self.values[i][k] = $f(x, y);
                }
            }};
        }

        let op = self.ops[i];
        match op {
            Op::Param | Op::Const => {
                if !self.bound[i] {
                    return Err(AutodiffError::UnboundRoot(NodeId(i)));
                }
            }
            Op::Add(a, b) => binary!(a, b, |x: f64, y: f64| x + y),
            Op::Sub(a, b) => binary!(a, b, |x: f64, y: f64| x - y),
            Op::Mul(a, b) => binary!(a, b, |x: f64, y: f64| x * y),
            Op::Div(a, b) => {
                for k in 0..self.values[i].len() {
                    let y = self.values[b][k];
                    if y == 0.0 {
                        return Err(AutodiffError::NumericDomain {
                            op: op.name(),
                            node: NodeId(i),
                        });
                    }
                    self.values[i][k] = self.values[a][k] / y;
                }
            }
            Op::Neg(a) => unary!(a, |x: f64| -x),
            Op::Sin(a) => unary!(a, f64::sin),
            Op::Cos(a) => unary!(a, f64::cos),
            Op::Exp(a) => unary!(a, f64::exp),
            Op::Ln(a) => {
                for k in 0..self.values[i].len() {
                    let x = self.values[a][k];
                    if x <= 0.0 {
                        return Err(AutodiffError::NumericDomain {
                            op: op.name(),
                            node: NodeId(i),
                        });
                    }
                    self.values[i][k] = x.ln();
                }
            }
            Op::Sqrt(a) => {
                for k in 0..self.values[i].len() {
                    let x = self.values[a][k];
                    if x < 0.0 {
                        return Err(AutodiffError::NumericDomain {
                            op: op.name(),
                            node: NodeId(i),
                        });
                    }
                    self.values[i][k] = x.sqrt();
                }
            }
            Op::Square(a) => unary!(a, |x: f64| x * x),
            Op::Relu(a) => unary!(a, |x: f64| if x > 0.0 { x } else { 0.0 }),
            Op::Sigmoid(a) => unary!(a, sigmoid_stable),
            Op::AddScalar(a, c) => unary!(a, |x: f64| x + c),
            Op::MulScalar(a, c) => unary!(a, |x: f64| x * c),
            Op::Clamp(a, lo, hi) => unary!(a, |x: f64| x.clamp(lo, hi)),
            Op::Sum(a, axis) | Op::Mean(a, axis) => {
                let s = self.shapes[a];
                let (dst, src) = split_two(&mut self.values, i, a);
                reduce(src, s, axis, dst);
                if matches!(op, Op::Mean(..)) {
                    let count = match axis {
                        Axis::All => s.len(),
                        Axis::Rows => s.rows,
                        Axis::Cols => s.cols,
                    } as f64;
                    for v in dst.iter_mut() {
                        *v /= count;
                    }
                }
            }
            Op::Dot(a, b) => {
                let mut acc = 0.0;
                for k in 0..self.values[a].len() {
                    acc += self.values[a][k] * self.values[b][k];
                }
                self.values[i][0] = acc;
            }
            Op::MatVec(a, x) => {
                let s = self.shapes[a];
                for r in 0..s.rows {
                    let mut acc = 0.0;
                    for c in 0..s.cols {
                        acc += self.values[a][r * s.cols + c] * self.values[x][c];
                    }
                    self.values[i][r] = acc;
                }
            }
            Op::MatMul(a, b) => {
                let (m, k) = (self.shapes[a].rows, self.shapes[a].cols);
                let n = self.shapes[b].cols;
                let (dst, a_val, b_val) = split_three(&mut self.values, i, a, b);
                gemm(m, k, n, 1.0, a_val, k as isize, 1, b_val, n as isize, 1, 0.0, dst, n as isize, 1);
            }
            Op::AddRow(a, row) => {
                let s = self.shapes[a];
                for r in 0..s.rows {
                    for c in 0..s.cols {
                        self.values[i][r * s.cols + c] =
                            self.values[a][r * s.cols + c] + self.values[row][c];
                    }
                }
            }
            Op::BroadcastRow(a, rows) => {
                let cols = self.shapes[a].cols;
                for r in 0..rows {
                    for c in 0..cols {
                        self.values[i][r * cols + c] = self.values[a][c];
                    }
                }
            }
            Op::BroadcastCol(a, cols) => {
                let rows = self.shapes[a].rows;
                for r in 0..rows {
                    for c in 0..cols {
                        self.values[i][r * cols + c] = self.values[a][r];
                    }
                }
            }
            Op::SliceCols(a, lo, hi) => {
                let s = self.shapes[a];
                let w = hi - lo;
                for r in 0..s.rows {
                    for c in 0..w {
                        self.values[i][r * w + c] = self.values[a][r * s.cols + lo + c];
                    }
                }
            }
            Op::BatchNorm { x, gamma, beta, eps } => {
                let s = self.shapes[x];
                let (rows, cols) = (s.rows, s.cols);
                let mut stats = vec![0.0; 2 * cols];
                let scale = self.values[gamma].clone();
                let shift = self.values[beta].clone();
                {
                    let (mu, var) = stats.split_at_mut(cols);
                    let (dst, xv) = split_two(&mut self.values, i, x);
                    for c in 0..cols {
                        let mut acc = 0.0;
                        for r in 0..rows {
                            acc += xv[r * cols + c];
                        }
                        mu[c] = acc / rows as f64;
                    }
                    for c in 0..cols {
                        let mut acc = 0.0;
                        for r in 0..rows {
                            let d = xv[r * cols + c] - mu[c];
                            acc += d * d;
                        }
                        var[c] = acc / rows as f64;
                    }
                    for c in 0..cols {
                        let inv_s = 1.0 / (var[c] + eps).sqrt();
                        for r in 0..rows {
                            let xhat = (xv[r * cols + c] - mu[c]) * inv_s;
                            dst[r * cols + c] = scale[c] * xhat + shift[c];
                        }
                    }
                }
                self.aux[i] = stats;
            }
        }
        Ok(())
    }

    /// Propagates adjoints from a scalar output back to every parameter.
    /// Accumulation order is the exact reverse of the recording order.
    pub fn backward(&mut self, out: NodeId) -> Result<(), AutodiffError> {
        if !self.evaluated {
            return Err(AutodiffError::BackwardBeforeForward);
        }
        assert!(self.shapes[out.0].is_scalar(), "backward root must be scalar");
        for adj in &mut self.adjoints {
            adj.iter_mut().for_each(|a| *a = 0.0);
        }
        self.adjoints[out.0][0] = 1.0;

        for i in (0..self.ops.len()).rev() {
            self.backprop_node(i);
        }
        Ok(())
    }

    fn backprop_node(&mut self, i: usize) {
        let op = self.ops[i];
        match op {
            Op::Param | Op::Const => {}
            Op::Add(a, b) => {
                for k in 0..self.adjoints[i].len() {
                    let g = self.adjoints[i][k];
                    self.adjoints[a][k] += g;
                    self.adjoints[b][k] += g;
                }
            }
            Op::Sub(a, b) => {
                for k in 0..self.adjoints[i].len() {
                    let g = self.adjoints[i][k];
                    self.adjoints[a][k] += g;
                    self.adjoints[b][k] -= g;
                }
            }
            Op::Mul(a, b) => {
                for k in 0..self.adjoints[i].len() {
                    let g = self.adjoints[i][k];
                    self.adjoints[a][k] += g * self.values[b][k];
                    self.adjoints[b][k] += g * self.values[a][k];
                }
            }
            Op::Div(a, b) => {
                for k in 0..self.adjoints[i].len() {
                    let g = self.adjoints[i][k];
                    let y = self.values[b][k];
                    self.adjoints[a][k] += g / y;
                    self.adjoints[b][k] -= g * self.values[i][k] / y;
                }
            }
            Op::Neg(a) => {
                for k in 0..self.adjoints[i].len() {
                    self.adjoints[a][k] -= self.adjoints[i][k];
                }
            }
            Op::Sin(a) => {
                for k in 0..self.adjoints[i].len() {
                    self.adjoints[a][k] += self.adjoints[i][k] * self.values[a][k].cos();
                }
            }
            Op::Cos(a) => {
                for k in 0..self.adjoints[i].len() {
                    self.adjoints[a][k] -= self.adjoints[i][k] * self.values[a][k].sin();
                }
            }
            Op::Exp(a) => {
                for k in 0..self.adjoints[i].len() {
                    self.adjoints[a][k] += self.adjoints[i][k] * self.values[i][k];
                }
            }
            Op::Ln(a) => {
                for k in 0..self.adjoints[i].len() {
                    self.adjoints[a][k] += self.adjoints[i][k] / self.values[a][k];
                }
            }
            Op::Sqrt(a) => {
                for k in 0..self.adjoints[i].len() {
                    self.adjoints[a][k] += self.adjoints[i][k] / (2.0 * self.values[i][k]);
                }
            }
            Op::Square(a) => {
                for k in 0..self.adjoints[i].len() {
                    self.adjoints[a][k] += 2.0 * self.values[a][k] * self.adjoints[i][k];
                }
            }
            Op::Relu(a) => {
                // Subgradient 0 at exactly zero.
                for k in 0..self.adjoints[i].len() {
                    if self.values[a][k] > 0.0 {
                        self.adjoints[a][k] += self.adjoints[i][k];
                    }
                }
            }
            Op::Sigmoid(a) => {
                for k in 0..self.adjoints[i].len() {
                    let s = self.values[i][k];
                    self.adjoints[a][k] += self.adjoints[i][k] * s * (1.0 - s);
                }
            }
            Op::AddScalar(a, _) => {
                for k in 0..self.adjoints[i].len() {
                    self.adjoints[a][k] += self.adjoints[i][k];
                }
            }
            Op::MulScalar(a, c) => {
                for k in 0..self.adjoints[i].len() {
                    self.adjoints[a][k] += c * self.adjoints[i][k];
                }
            }
            Op::Clamp(a, lo, hi) => {
                for k in 0..self.adjoints[i].len() {
                    let x = self.values[a][k];
                    if x > lo && x < hi {
                        self.adjoints[a][k] += self.adjoints[i][k];
                    }
                }
            }
            Op::Sum(a, axis) => self.backprop_reduce(i, a, axis, 1.0),
            Op::Mean(a, axis) => {
                let s = self.shapes[a];
                let count = match axis {
                    Axis::All => s.len(),
                    Axis::Rows => s.rows,
                    Axis::Cols => s.cols,
                } as f64;
                self.backprop_reduce(i, a, axis, 1.0 / count);
            }
            Op::Dot(a, b) => {
                let g = self.adjoints[i][0];
                for k in 0..self.values[a].len() {
                    self.adjoints[a][k] += g * self.values[b][k];
                    self.adjoints[b][k] += g * self.values[a][k];
                }
            }
            Op::MatVec(a, x) => {
                let s = self.shapes[a];
                for r in 0..s.rows {
                    let g = self.adjoints[i][r];
                    for c in 0..s.cols {
                        self.adjoints[a][r * s.cols + c] += g * self.values[x][c];
                        self.adjoints[x][c] += g * self.values[a][r * s.cols + c];
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (m, k) = (self.shapes[a].rows, self.shapes[a].cols);
                let n = self.shapes[b].cols;
                // dA(m x k) += G(m x n) * B^T(n x k), transposes via strides.
                let g = std::mem::take(&mut self.adjoints[i]);
                gemm(
                    m, n, k, 1.0, &g, n as isize, 1, &self.values[b], 1, n as isize, 1.0,
                    &mut self.adjoints[a], k as isize, 1,
                );
                // dB(k x n) += A^T(k x m) * G(m x n).
                let av = std::mem::take(&mut self.values[a]);
                gemm(
                    k, m, n, 1.0, &av, 1, k as isize, &g, n as isize, 1, 1.0,
                    &mut self.adjoints[b], n as isize, 1,
                );
                self.values[a] = av;
                self.adjoints[i] = g;
            }
            Op::AddRow(a, row) => {
                let s = self.shapes[a];
                for r in 0..s.rows {
                    for c in 0..s.cols {
                        let g = self.adjoints[i][r * s.cols + c];
                        self.adjoints[a][r * s.cols + c] += g;
                        self.adjoints[row][c] += g;
                    }
                }
            }
            Op::BroadcastRow(a, rows) => {
                let cols = self.shapes[a].cols;
                for r in 0..rows {
                    for c in 0..cols {
                        self.adjoints[a][c] += self.adjoints[i][r * cols + c];
                    }
                }
            }
            Op::BroadcastCol(a, cols) => {
                let rows = self.shapes[a].rows;
                for r in 0..rows {
                    for c in 0..cols {
                        self.adjoints[a][r] += self.adjoints[i][r * cols + c];
                    }
                }
            }
            Op::SliceCols(a, lo, hi) => {
                let s = self.shapes[a];
                let w = hi - lo;
                for r in 0..s.rows {
                    for c in 0..w {
                        self.adjoints[a][r * s.cols + lo + c] += self.adjoints[i][r * w + c];
                    }
                }
            }
            Op::BatchNorm { x, gamma, beta, eps } => {
                let s = self.shapes[x];
                let (rows, cols) = (s.rows, s.cols);
                let inv_rows = 1.0 / rows as f64;
                for c in 0..cols {
                    let mu = self.aux[i][c];
                    let var = self.aux[i][cols + c];
                    let inv_s = 1.0 / (var + eps).sqrt();
                    let g_scale = self.values[gamma][c];

                    // Column sums of g and g * xhat.
                    let mut sum_g = 0.0;
                    let mut sum_gx = 0.0;
                    for r in 0..rows {
                        let g = self.adjoints[i][r * cols + c];
                        let xhat = (self.values[x][r * cols + c] - mu) * inv_s;
                        sum_g += g;
                        sum_gx += g * xhat;
                    }
                    self.adjoints[gamma][c] += sum_gx;
                    self.adjoints[beta][c] += sum_g;
                    for r in 0..rows {
                        let g = self.adjoints[i][r * cols + c];
                        let xhat = (self.values[x][r * cols + c] - mu) * inv_s;
                        self.adjoints[x][r * cols + c] += g_scale
                            * inv_s
                            * (g - inv_rows * sum_g - xhat * inv_rows * sum_gx);
                    }
                }
            }
        }
    }

    #[allow(clippy::needless_range_loop)]
    fn backprop_reduce(&mut self, i: usize, a: usize, axis: Axis, scale: f64) {
        let s = self.shapes[a];
        match axis {
            Axis::All => {
                let g = self.adjoints[i][0] * scale;
                for k in 0..self.adjoints[a].len() {
                    self.adjoints[a][k] += g;
                }
            }
            Axis::Rows => {
                for r in 0..s.rows {
                    for c in 0..s.cols {
                        self.adjoints[a][r * s.cols + c] += self.adjoints[i][c] * scale;
                    }
                }
            }
            Axis::Cols => {
                for r in 0..s.rows {
                    for c in 0..s.cols {
                        self.adjoints[a][r * s.cols + c] += self.adjoints[i][r] * scale;
                    }
                }
            }
        }
    }
}

/// Numerically stable logistic function, branch form.
fn sigmoid_stable(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn reduce(src: &[f64], s: Shape, axis: Axis, dst: &mut [f64]) {
    match axis {
        Axis::All => {
            let mut acc = 0.0;
            for &x in src {
                acc += x;
            }
            dst[0] = acc;
        }
        Axis::Rows => {
            for c in 0..s.cols {
                let mut acc = 0.0;
                for r in 0..s.rows {
                    acc += src[r * s.cols + c];
                }
                dst[c] = acc;
            }
        }
        Axis::Cols => {
            for r in 0..s.rows {
                let mut acc = 0.0;
                for c in 0..s.cols {
                    acc += src[r * s.cols + c];
                }
                dst[r] = acc;
            }
        }
    }
}

/// Disjoint mutable/shared split of the value store: `(dst = &mut vals[i],
/// src = &vals[a])` with `i != a`.
fn split_two(vals: &mut [Vec<f64>], i: usize, a: usize) -> (&mut [f64], &[f64]) {
    assert_ne!(i, a);
    if a < i {
        let (lo, hi) = vals.split_at_mut(i);
        (&mut hi[0], &lo[a])
    } else {
        let (lo, hi) = vals.split_at_mut(a);
        (&mut lo[i], &hi[0])
    }
}

fn split_three(
    vals: &mut [Vec<f64>],
    i: usize,
    a: usize,
    b: usize,
) -> (&mut [f64], &[f64], &[f64]) {
    assert!(i != a && i != b);
    // Nodes are appended in topological order, so inputs always precede i.
    let (lo, hi) = vals.split_at_mut(i);
    (&mut hi[0], &lo[a], &lo[b])
}

// Kept separate so the unsafe surface is one audited call.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    beta: f64,
    c: &mut [f64],
    rsc: isize,
    csc: isize,
) {
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            rsc,
            csc,
        )
    }
}

/// Maximum relative disagreement between the tape's analytic gradient and a
/// central finite difference with the given step, over every component of
/// every parameter root. No thresholding happens inside: a bad step size is
/// reported as the large error it produces.
pub fn grad_check(tape: &mut Tape, out: NodeId, step: f64) -> Result<f64, AutodiffError> {
    assert!(step > 0.0, "step must be positive");
    tape.forward(out)?;
    tape.backward(out)?;
    let params = tape.params().to_vec();
    let analytic: Vec<Vec<f64>> = params.iter().map(|&p| tape.adjoint(p).to_vec()).collect();

    let mut worst: f64 = 0.0;
    for (pi, &p) in params.iter().enumerate() {
        let base = tape.value(p).to_vec();
        for k in 0..base.len() {
            let mut plus = base.clone();
            plus[k] += step;
            tape.bind(p, &plus);
            let f_plus = tape.forward(out)?;
            let mut minus = base.clone();
            minus[k] -= step;
            tape.bind(p, &minus);
            let f_minus = tape.forward(out)?;
            tape.bind(p, &base);

            let fd = (f_plus - f_minus) / (2.0 * step);
            let an = analytic[pi][k];
            let denom = an.abs().max(fd.abs()).max(1e-12);
            worst = worst.max((an - fd).abs() / denom);
        }
    }
    // Restore a consistent forward state for the original bindings.
    tape.forward(out)?;
    tape.backward(out)?;
    Ok(worst)
}
