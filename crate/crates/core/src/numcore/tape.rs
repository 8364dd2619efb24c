use crate::error::{Error, Result};
use crate::numcore::Tensor;
use crate::scalar::Real;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, T),
    Shift(Var, T),
    Sum(Var),
    Mean(Var),
    RowSum(Var),
    Relu(Var),
    Silu(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Abs(Var),
}

#[derive(Clone, Debug)]
struct Node<T> {
    shape: Vec<usize>,
    value: Vec<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recorded computation graph for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order and `backward` is a single reverse sweep.
#[derive(Clone, Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Adjoints produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

fn rank2(shape: &[usize]) -> Option<(usize, usize)> {
    match shape {
        [r, c] => Some((*r, *c)),
        _ => None,
    }
}

/// `[m x k] * [k x n]`
fn matmul_nn<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    out
}

/// `[m x n] * [k x n]^T -> [m x k]`
fn matmul_nt<T: Real>(a: &[T], b: &[T], m: usize, n: usize, k: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * k];
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            out[i * k + p] = arow.iter().zip(brow).map(|(&x, &y)| x * y).sum();
        }
    }
    out
}

/// `[m x k]^T * [m x n] -> [k x n]`
fn matmul_tn<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); k * n];
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == T::zero() {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    out
}

fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<T>, op: Op<T>, requires_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node<T> {
        &self.nodes[v.0]
    }

    fn grad_of(&self, a: Var, b: Var) -> bool {
        self.node(a).requires_grad || self.node(b).requires_grad
    }

    /// Records a copy of `t`; it participates in differentiation iff
    /// `t.requires_grad()`.
    pub fn leaf(&mut self, t: &Tensor<T>) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, t.requires_grad())
    }

    /// Records a value that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        let shape = t.shape().to_vec();
        self.push(shape, t.into_data(), Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn scalar_value(&self, v: Var) -> T {
        self.node(v).value[0]
    }

    pub fn to_tensor(&self, v: Var) -> Tensor<T> {
        let n = self.node(v);
        Tensor::new(n.shape.clone(), n.value.clone()).expect("node shape is consistent")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let ((m, k), (k2, n)) = match (rank2(sa), rank2(sb)) {
            (Some(x), Some(y)) => (x, y),
            _ => return Err(Error::dim("matmul", format!("{sa:?} x {sb:?}: rank-2 operands required"))),
        };
        if k != k2 {
            return Err(Error::dim("matmul", format!("{sa:?} x {sb:?}")));
        }
        let value = matmul_nn(self.value(a), self.value(b), m, k, n);
        let rg = self.grad_of(a, b);
        Ok(self.push(vec![m, n], value, Op::MatMul(a, b), rg))
    }

    fn zip_same(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(name, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        let value = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| f(x, y)).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.grad_of(a, b);
        Ok(self.push(shape, value, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// Broadcasts a bias row `[1 x n]` (or `[n]`) over every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, n) = rank2(self.shape(a)).ok_or_else(|| Error::dim("add_row", "rank-2 input required"))?;
        if self.value(row).len() != n {
            return Err(Error::dim("add_row", format!("{:?} + row {:?}", self.shape(a), self.shape(row))));
        }
        let (av, rv) = (self.value(a), self.value(row));
        let mut value = Vec::with_capacity(m * n);
        for i in 0..m {
            value.extend(av[i * n..(i + 1) * n].iter().zip(rv).map(|(&x, &b)| x + b));
        }
        let rg = self.grad_of(a, row);
        Ok(self.push(vec![m, n], value, Op::AddRow(a, row), rg))
    }

    /// Scales row `i` of `a` by `col[i]`; `col` is `[m x 1]` (or `[m]`).
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (m, n) = rank2(self.shape(a)).ok_or_else(|| Error::dim("mul_col", "rank-2 input required"))?;
        if self.value(col).len() != m {
            return Err(Error::dim("mul_col", format!("{:?} * col {:?}", self.shape(a), self.shape(col))));
        }
        let (av, cv) = (self.value(a), self.value(col));
        let mut value = Vec::with_capacity(m * n);
        for i in 0..m {
            value.extend(av[i * n..(i + 1) * n].iter().map(|&x| x * cv[i]));
        }
        let rg = self.grad_of(a, col);
        Ok(self.push(vec![m, n], value, Op::MulCol(a, col), rg))
    }

    fn map(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let value = self.value(a).iter().map(|&x| f(x)).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.node(a).requires_grad;
        self.push(shape, value, op, rg)
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        self.map(a, |x| x * c, Op::Scale(a, c))
    }

    pub fn shift(&mut self, a: Var, c: T) -> Var {
        self.map(a, |x| x + c, Op::Shift(a, c))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -T::one())
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, |x| if x > T::zero() { x } else { T::zero() }, Op::Relu(a))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        self.map(a, |x| x * sigmoid(x), Op::Silu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, |x| x.tanh(), Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, |x| x.exp(), Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.map(a, |x| x.ln(), Op::Log(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.map(a, |x| x * x, Op::Square(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.map(a, |x| x.abs(), Op::Abs(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().copied().sum();
        let rg = self.node(a).requires_grad;
        self.push(vec![1], vec![s], Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = T::of_usize(self.value(a).len());
        let s: T = self.value(a).iter().copied().sum();
        let rg = self.node(a).requires_grad;
        self.push(vec![1], vec![s / n], Op::Mean(a), rg)
    }

    /// Sum over columns: `[m x n] -> [m x 1]`.
    pub fn row_sum(&mut self, a: Var) -> Result<Var> {
        let (m, n) = rank2(self.shape(a)).ok_or_else(|| Error::dim("row_sum", "rank-2 input required"))?;
        let av = self.value(a);
        let value = (0..m).map(|i| av[i * n..(i + 1) * n].iter().copied().sum()).collect();
        let rg = self.node(a).requires_grad;
        Ok(self.push(vec![m, 1], value, Op::RowSum(a), rg))
    }

    /// Reverse sweep from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let ln = self.node(loss);
        if ln.value.len() != 1 {
            return Err(Error::Contract(format!("backward requires a scalar loss, got shape {:?}", ln.shape)));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let mut acc = |v: Var, contrib: Vec<T>| {
            if !self.node(v).requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(buf) => buf.iter_mut().zip(contrib).for_each(|(b, c)| *b += c),
                slot => *slot = Some(contrib),
            }
        };
        let unary = |a: Var, f: &dyn Fn(T, T, T) -> T| -> Vec<T> {
            // f(input, output, upstream)
            let x = self.value(a);
            x.iter().zip(&node.value).zip(g).map(|((&xi, &yi), &gi)| f(xi, yi, gi)).collect()
        };
        match node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = rank2(self.shape(a)).unwrap();
                let n = self.shape(b)[1];
                if self.node(a).requires_grad {
                    acc(a, matmul_nt(g, self.value(b), m, n, k));
                }
                if self.node(b).requires_grad {
                    acc(b, matmul_tn(self.value(a), g, m, k, n));
                }
            }
            Op::Add(a, b) => {
                acc(a, g.to_vec());
                acc(b, g.to_vec());
            }
            Op::Sub(a, b) => {
                acc(a, g.to_vec());
                acc(b, g.iter().map(|&x| -x).collect());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(a), self.value(b));
                acc(a, g.iter().zip(bv).map(|(&gi, &y)| gi * y).collect());
                acc(b, g.iter().zip(av).map(|(&gi, &x)| gi * x).collect());
            }
            Op::AddRow(a, row) => {
                acc(a, g.to_vec());
                let n = self.value(row).len();
                let mut gr = vec![T::zero(); n];
                for chunk in g.chunks(n) {
                    gr.iter_mut().zip(chunk).for_each(|(s, &c)| *s += c);
                }
                acc(row, gr);
            }
            Op::MulCol(a, col) => {
                let cv = self.value(col);
                let m = cv.len();
                let n = g.len() / m;
                if self.node(a).requires_grad {
                    let mut ga = Vec::with_capacity(g.len());
                    for i in 0..m {
                        ga.extend(g[i * n..(i + 1) * n].iter().map(|&gi| gi * cv[i]));
                    }
                    acc(a, ga);
                }
                if self.node(col).requires_grad {
                    let av = self.value(a);
                    let gc = (0..m).map(|i| (0..n).map(|j| g[i * n + j] * av[i * n + j]).sum()).collect();
                    acc(col, gc);
                }
            }
            Op::Scale(a, c) => acc(a, g.iter().map(|&gi| gi * c).collect()),
            Op::Shift(a, _) => acc(a, g.to_vec()),
            Op::Sum(a) => acc(a, vec![g[0]; self.value(a).len()]),
            Op::Mean(a) => {
                let n = self.value(a).len();
                acc(a, vec![g[0] / T::of_usize(n); n]);
            }
            Op::RowSum(a) => {
                let m = g.len();
                let n = self.value(a).len() / m;
                let mut ga = Vec::with_capacity(m * n);
                for &gi in g {
                    ga.extend(std::iter::repeat_n(gi, n));
                }
                acc(a, ga);
            }
            // Subgradient 0 at exactly 0.
            Op::Relu(a) => acc(a, unary(a, &|x, _, gi| if x > T::zero() { gi } else { T::zero() })),
            Op::Silu(a) => acc(
                a,
                unary(a, &|x, _, gi| {
                    let s = sigmoid(x);
                    gi * (s + x * s * (T::one() - s))
                }),
            ),
            Op::Tanh(a) => acc(a, unary(a, &|_, y, gi| gi * (T::one() - y * y))),
            Op::Exp(a) => acc(a, unary(a, &|_, y, gi| gi * y)),
            Op::Log(a) => acc(a, unary(a, &|x, _, gi| gi / x)),
            Op::Square(a) => acc(a, unary(a, &|x, _, gi| gi * (x + x))),
            Op::Abs(a) => acc(
                a,
                unary(a, &|x, _, gi| {
                    if x > T::zero() {
                        gi
                    } else if x < T::zero() {
                        -gi
                    } else {
                        T::zero()
                    }
                }),
            ),
        }
    }
}
