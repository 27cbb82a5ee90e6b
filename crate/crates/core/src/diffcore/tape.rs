//! Matrix-valued reverse-mode tape.
//!
//! Every node holds a 2-D `f64` array. Binary elementwise ops broadcast any
//! axis of length 1, and the backward pass sums gradients back over the
//! broadcast axes. Leaves come in three kinds: constants (no gradient),
//! inputs (gradient retrievable through [`Gradients::wrt`]) and parameters
//! (gradient accumulated into a [`ParamStore`]).

use ndarray::{concatenate, s, Array2, Axis, Zip};

use super::params::{ParamId, ParamStore};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Tanh(Var),
    Exp(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    SumCols(Var),
    Sum(Var),
    Concat(Vec<Var>),
    Slice(Var, usize, usize),
}

struct Node {
    value: Array2<f64>,
    op: Op,
    needs_grad: bool,
}

pub struct Tape {
    nodes: Vec<Node>,
    store_version: Option<u64>,
    frozen: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            store_version: None,
            frozen: false,
        }
    }

    /// A tape that reads parameters as constants, so it may mix several
    /// stores. Only input gradients are available from it.
    pub fn frozen() -> Self {
        Self {
            frozen: true,
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A differentiable input; its gradient is available after `backward`.
    pub fn input(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if self.frozen {
            return self.constant(store.value(id).clone());
        }
        match self.store_version {
            None => self.store_version = Some(store.version()),
            Some(v) => debug_assert_eq!(v, store.version(), "tape mixes store versions"),
        }
        self.push(store.value(id).clone(), Op::Param(id), true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        if ac != br {
            return Err(Error::Shape(format!("matmul {ar}x{ac} by {br}x{bc}")));
        }
        let v = self.value(a).dot(self.value(b));
        let g = self.needs(a) || self.needs(b);
        Ok(self.push(v, Op::MatMul(a, b), g))
    }

    fn check_broadcast(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        let ok = |x: usize, y: usize| x == y || x == 1 || y == 1;
        if ok(ar, br) && ok(ac, bc) {
            Ok(())
        } else {
            Err(Error::Shape(format!("{what} {ar}x{ac} with {br}x{bc}")))
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_broadcast(a, b, "add")?;
        let v = self.value(a) + self.value(b);
        let g = self.needs(a) || self.needs(b);
        Ok(self.push(v, Op::Add(a, b), g))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_broadcast(a, b, "sub")?;
        let v = self.value(a) - self.value(b);
        let g = self.needs(a) || self.needs(b);
        Ok(self.push(v, Op::Sub(a, b), g))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_broadcast(a, b, "mul")?;
        let v = self.value(a) * self.value(b);
        let g = self.needs(a) || self.needs(b);
        Ok(self.push(v, Op::Mul(a, b), g))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) * c;
        let g = self.needs(a);
        self.push(v, Op::Scale(a, c), g)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) + c;
        let g = self.needs(a);
        self.push(v, Op::AddScalar(a), g)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(0.0));
        let g = self.needs(a);
        self.push(v, Op::Relu(a), g)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        let g = self.needs(a);
        self.push(v, Op::Tanh(a), g)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::exp);
        let g = self.needs(a);
        self.push(v, Op::Exp(a), g)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x * x);
        let g = self.needs(a);
        self.push(v, Op::Square(a), g)
    }

    /// Hard clamp; the gradient is zero outside `[lo, hi]`.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let v = self.value(a).mapv(|x| x.clamp(lo, hi));
        let g = self.needs(a);
        self.push(v, Op::Clamp(a, lo, hi), g)
    }

    /// Row sums: `N x d -> N x 1`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let v = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        let g = self.needs(a);
        self.push(v, Op::SumCols(a), g)
    }

    /// Total sum as a `1 x 1` node.
    pub fn sum(&mut self, a: Var) -> Var {
        let v = Array2::from_elem((1, 1), self.value(a).sum());
        let g = self.needs(a);
        self.push(v, Op::Sum(a), g)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Column-wise concatenation.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = concatenate(Axis(1), &views)
            .map_err(|e| Error::Shape(format!("concat: {e}")))?;
        let g = parts.iter().any(|p| self.needs(*p));
        Ok(self.push(v, Op::Concat(parts.to_vec()), g))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (_, c) = self.shape(a);
        if start > end || end > c {
            return Err(Error::Shape(format!("slice {start}..{end} of {c} columns")));
        }
        let v = self.value(a).slice(s![.., start..end]).to_owned();
        let g = self.needs(a);
        Ok(self.push(v, Op::Slice(a, start, end), g))
    }

    /// Reverse pass from a scalar (`1 x 1`) output with seed gradient 1.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let seed = Array2::ones(self.shape(output));
        self.backward_with(output, seed)
    }

    /// Reverse pass with an explicit output gradient (vector-Jacobian product).
    pub fn backward_with(&self, output: Var, output_grad: Array2<f64>) -> Result<Gradients> {
        if output_grad.dim() != self.shape(output) {
            return Err(Error::Shape(format!(
                "output gradient {:?} for output {:?}",
                output_grad.dim(),
                self.shape(output)
            )));
        }
        let n = output.0 + 1;
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; n];
        grads[output.0] = Some(output_grad);

        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Leaf | Op::Param(_) => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    if self.needs(*a) {
                        let ga = g.dot(&self.value(*b).t());
                        accumulate(&mut grads, *a, ga);
                    }
                    if self.needs(*b) {
                        let gb = self.value(*a).t().dot(&g);
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::Add(a, b) => {
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, unbroadcast(&g, self.shape(*a)));
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, unbroadcast(&g, self.shape(*b)));
                    }
                }
                Op::Sub(a, b) => {
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, unbroadcast(&g, self.shape(*a)));
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, -unbroadcast(&g, self.shape(*b)));
                    }
                }
                Op::Mul(a, b) => {
                    if self.needs(*a) {
                        let ga = &g * self.value(*b);
                        accumulate(&mut grads, *a, unbroadcast(&ga, self.shape(*a)));
                    }
                    if self.needs(*b) {
                        let gb = &g * self.value(*a);
                        accumulate(&mut grads, *b, unbroadcast(&gb, self.shape(*b)));
                    }
                }
                Op::Scale(a, c) => accumulate(&mut grads, *a, g * *c),
                Op::AddScalar(a) => accumulate(&mut grads, *a, g),
                Op::Relu(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga)
                        .and(self.value(*a))
                        .for_each(|g, &x| {
                            if x <= 0.0 {
                                *g = 0.0
                            }
                        });
                    accumulate(&mut grads, *a, ga);
                }
                Op::Tanh(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga)
                        .and(&node.value)
                        .for_each(|g, &t| *g *= 1.0 - t * t);
                    accumulate(&mut grads, *a, ga);
                }
                Op::Exp(a) => accumulate(&mut grads, *a, g * &node.value),
                Op::Square(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga)
                        .and(self.value(*a))
                        .for_each(|g, &x| *g *= 2.0 * x);
                    accumulate(&mut grads, *a, ga);
                }
                Op::Clamp(a, lo, hi) => {
                    let mut ga = g;
                    Zip::from(&mut ga)
                        .and(self.value(*a))
                        .for_each(|g, &x| {
                            if x < *lo || x > *hi {
                                *g = 0.0
                            }
                        });
                    accumulate(&mut grads, *a, ga);
                }
                Op::SumCols(a) => {
                    let (r, c) = self.shape(*a);
                    let ga = g.broadcast((r, c)).expect("row-sum gradient").to_owned();
                    accumulate(&mut grads, *a, ga);
                }
                Op::Sum(a) => {
                    let ga = Array2::from_elem(self.shape(*a), g[[0, 0]]);
                    accumulate(&mut grads, *a, ga);
                }
                Op::Concat(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let (_, c) = self.shape(*p);
                        if self.needs(*p) {
                            let gp = g.slice(s![.., start..start + c]).to_owned();
                            accumulate(&mut grads, *p, gp);
                        }
                        start += c;
                    }
                }
                Op::Slice(a, start, end) => {
                    let mut ga = Array2::zeros(self.shape(*a));
                    ga.slice_mut(s![.., *start..*end]).assign(&g);
                    accumulate(&mut grads, *a, ga);
                }
            }
        }

        Ok(Gradients {
            grads,
            params: self
                .nodes
                .iter()
                .enumerate()
                .take(n)
                .filter_map(|(i, node)| match node.op {
                    Op::Param(id) => Some((i, id)),
                    _ => None,
                })
                .collect(),
            store_version: self.store_version,
        })
    }
}

fn accumulate(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
    match &mut grads[v.0] {
        Some(acc) => *acc += &g,
        slot @ None => *slot = Some(g),
    }
}

fn unbroadcast(g: &Array2<f64>, shape: (usize, usize)) -> Array2<f64> {
    let mut out = g.clone();
    if shape.0 == 1 && out.nrows() != 1 {
        out = out.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
    if shape.1 == 1 && out.ncols() != 1 {
        out = out.sum_axis(Axis(1)).insert_axis(Axis(1));
    }
    out
}

/// Result of a reverse pass.
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
    params: Vec<(usize, ParamId)>,
    store_version: Option<u64>,
}

impl Gradients {
    /// Gradient with respect to an input or parameter node; `None` when the
    /// node does not influence the output.
    pub fn wrt(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Adds parameter gradients into the store's gradient slots. Fails if the
    /// store was updated since the tape read its parameters.
    pub fn accumulate_into(&self, store: &mut ParamStore) -> Result<()> {
        if let Some(v) = self.store_version {
            if v != store.version() {
                return Err(Error::StaleTape);
            }
        }
        for (node, id) in &self.params {
            if let Some(g) = &self.grads[*node] {
                store.add_grad(*id, g);
            }
        }
        Ok(())
    }
}
