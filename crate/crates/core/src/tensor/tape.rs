use std::cell::{Cell, RefCell};
use std::rc::Rc;

use rand::Rng;

use super::kernels::{self, inverse_permutation};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

type BackwardFn<T> = Box<dyn Fn(&Tensor<T>) -> Vec<Tensor<T>>>;

struct Node<T> {
    op: &'static str,
    value: Rc<Tensor<T>>,
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
    requires_grad: bool,
}

/// Wengert list of recorded ops. One tape per forward pass; `backward`
/// consumes the recording.
pub struct Tape<T: Scalar> {
    nodes: RefCell<Vec<Node<T>>>,
    check_finite: Cell<bool>,
    corrupt: RefCell<Option<String>>,
}

/// Gradients of a scalar loss with respect to the tape's leaves.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn unary_map<T: Scalar>(t: &Tensor<T>, f: impl Fn(T) -> T) -> Tensor<T> {
    t.map(f)
}

fn zip_map<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    debug_assert_eq!(a.shape(), b.shape());
    Tensor::from_parts(
        a.shape().to_vec(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
}

const GELU_K: f64 = 0.044_715;

fn gelu<T: Scalar>(x: T) -> T {
    let c = T::lit((2.0 / std::f64::consts::PI).sqrt());
    let half = T::lit(0.5);
    half * x * (T::one() + (c * (x + T::lit(GELU_K) * x * x * x)).tanh())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::lit((2.0 / std::f64::consts::PI).sqrt());
    let half = T::lit(0.5);
    let t = (c * (x + T::lit(GELU_K) * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::lit(3.0 * GELU_K) * x * x)
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            check_finite: Cell::new(false),
            corrupt: RefCell::new(None),
        }
    }

    /// When enabled, any op producing a NaN or infinity fails with
    /// [`Error::NonFinite`].
    pub fn set_check_finite(&self, on: bool) {
        self.check_finite.set(on);
    }

    /// Test hook: scales the gradients produced by every node of `op` by 1.5,
    /// simulating a broken backward rule.
    pub fn corrupt_backward(&self, op: Option<&str>) {
        *self.corrupt.borrow_mut() = op.map(str::to_string);
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            op: "leaf",
            value: Rc::new(value),
            parents: Vec::new(),
            backward: None,
            requires_grad,
        });
        Var(nodes.len() - 1)
    }

    pub fn constant(&self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> Rc<Tensor<T>> {
        Rc::clone(&self.nodes.borrow()[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    fn push(
        &self,
        op: &'static str,
        value: Tensor<T>,
        parents: &[Var],
        backward: impl FnOnce() -> BackwardFn<T>,
    ) -> Result<Var> {
        if self.check_finite.get() && !value.all_finite() {
            return Err(Error::NonFinite { op });
        }
        let requires_grad = {
            let nodes = self.nodes.borrow();
            parents.iter().any(|p| nodes[p.0].requires_grad)
        };
        let backward = requires_grad.then(backward);
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            op,
            value: Rc::new(value),
            parents: parents.iter().map(|p| p.0).collect(),
            backward,
            requires_grad,
        });
        Ok(Var(nodes.len() - 1))
    }

    /// Reverse sweep from a scalar `loss`. Returns gradients for every leaf
    /// that requires them and clears the tape.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let mut nodes = std::mem::take(&mut *self.nodes.borrow_mut());
        let loss_shape = nodes[loss.0].value.shape().to_vec();
        if nodes[loss.0].value.numel() != 1 {
            return Err(Error::NonScalarLoss(loss_shape));
        }
        let corrupt = self.corrupt.borrow().clone();
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(&loss_shape));
        for i in (0..=loss.0).rev() {
            let node = &mut nodes[i];
            let Some(backward) = node.backward.take() else {
                continue;
            };
            let Some(g) = grads[i].take() else {
                continue;
            };
            let mut parent_grads = backward(&g);
            if corrupt.as_deref() == Some(node.op) {
                for pg in &mut parent_grads {
                    *pg = pg.map(|x| x * T::lit(1.5));
                }
            }
            for (&p, pg) in node.parents.iter().zip(parent_grads) {
                slot_add(&mut grads[p], pg);
            }
        }
        for (g, node) in grads.iter_mut().zip(&nodes) {
            if !node.requires_grad || !node.parents.is_empty() {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    // ---- linear algebra -------------------------------------------------

    /// `(.., m, k) x (k, n)` or batched `(.., m, k) x (.., k, n)`.
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let out = kernels::matmul(&av, false, &bv, false)?;
        self.push("matmul", out, &[a, b], || {
            Box::new(move |g| {
                let ga = kernels::matmul(g, false, &bv, true).expect("matmul grad a");
                let gb = if bv.rank() == 2 {
                    let k = av.shape()[av.rank() - 1];
                    let n = g.shape()[g.rank() - 1];
                    let a2 = av.reshaped(&[av.numel() / k, k]).expect("reshape");
                    let g2 = g.reshaped(&[g.numel() / n, n]).expect("reshape");
                    kernels::matmul(&a2, true, &g2, false).expect("matmul grad b")
                } else {
                    kernels::matmul(&av, true, g, false).expect("matmul grad b")
                };
                vec![ga, gb]
            })
        })
    }

    /// `x W + b` over the last axis of `x`. `w` is `(in, out)`, `b` is `(out)`.
    pub fn linear(&self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add(y, b),
            None => Ok(y),
        }
    }

    // ---- elementwise binary (broadcasting) ------------------------------

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let out = kernels::binary("add", &av, &bv, |x, y| x + y)?;
        let (sa, sb) = (av.shape().to_vec(), bv.shape().to_vec());
        self.push("add", out, &[a, b], || {
            Box::new(move |g| vec![kernels::reduce_to(g, &sa), kernels::reduce_to(g, &sb)])
        })
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let out = kernels::binary("sub", &av, &bv, |x, y| x - y)?;
        let (sa, sb) = (av.shape().to_vec(), bv.shape().to_vec());
        self.push("sub", out, &[a, b], || {
            Box::new(move |g| vec![kernels::reduce_to(g, &sa), kernels::reduce_to(&g.map(|x| -x), &sb)])
        })
    }

    /// Hadamard product.
    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let out = kernels::binary("mul", &av, &bv, |x, y| x * y)?;
        self.push("mul", out, &[a, b], || {
            Box::new(move |g| {
                let ga = kernels::binary("mul", g, &bv, |x, y| x * y).expect("broadcast");
                let gb = kernels::binary("mul", g, &av, |x, y| x * y).expect("broadcast");
                vec![kernels::reduce_to(&ga, av.shape()), kernels::reduce_to(&gb, bv.shape())]
            })
        })
    }

    pub fn scale(&self, a: Var, c: f64) -> Result<Var> {
        let c = T::lit(c);
        let out = self.value(a).map(|x| x * c);
        self.push("scale", out, &[a], || Box::new(move |g| vec![g.map(|x| x * c)]))
    }

    pub fn add_scalar(&self, a: Var, c: f64) -> Result<Var> {
        let c = T::lit(c);
        let out = self.value(a).map(|x| x + c);
        self.push("add_scalar", out, &[a], || Box::new(|g| vec![g.clone()]))
    }

    // ---- elementwise unary ----------------------------------------------

    pub fn sigmoid(&self, a: Var) -> Result<Var> {
        let y = Rc::new(unary_map(&self.value(a), |x| T::one() / (T::one() + (-x).exp())));
        let yc = Rc::clone(&y);
        self.push("sigmoid", (*y).clone(), &[a], || {
            Box::new(move |g| vec![zip_map(g, &yc, |g, y| g * y * (T::one() - y))])
        })
    }

    pub fn tanh(&self, a: Var) -> Result<Var> {
        let y = Rc::new(unary_map(&self.value(a), |x| x.tanh()));
        let yc = Rc::clone(&y);
        self.push("tanh", (*y).clone(), &[a], || {
            Box::new(move |g| vec![zip_map(g, &yc, |g, y| g * (T::one() - y * y))])
        })
    }

    /// GELU, tanh approximation.
    pub fn gelu(&self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let out = unary_map(&av, gelu);
        self.push("gelu", out, &[a], || {
            Box::new(move |g| vec![zip_map(g, &av, |g, x| g * gelu_grad(x))])
        })
    }

    pub fn square(&self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let out = unary_map(&av, |x| x * x);
        self.push("square", out, &[a], || {
            Box::new(move |g| vec![zip_map(g, &av, |g, x| g * (x + x))])
        })
    }

    /// Absolute value; the subgradient at zero is taken as zero.
    pub fn abs(&self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let out = unary_map(&av, |x| x.abs());
        self.push("abs", out, &[a], || {
            Box::new(move |g| {
                vec![zip_map(g, &av, |g, x| {
                    if x > T::zero() {
                        g
                    } else if x < T::zero() {
                        -g
                    } else {
                        T::zero()
                    }
                })]
            })
        })
    }

    /// Inverted dropout. Identity when `p == 0` or outside training.
    pub fn dropout<R: Rng + ?Sized>(&self, a: Var, p: f64, train: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::invalid("dropout", format!("probability {p} outside [0, 1)")));
        }
        if p == 0.0 || !train {
            return Ok(a);
        }
        let keep = T::lit(1.0 / (1.0 - p));
        let av = self.value(a);
        let mask = Tensor::from_fn(av.shape(), |_| if rng.random::<f64>() < p { T::zero() } else { keep });
        let out = zip_map(&av, &mask, |x, m| x * m);
        self.push("dropout", out, &[a], || {
            Box::new(move |g| vec![zip_map(g, &mask, |g, m| g * m)])
        })
    }

    // ---- reductions -----------------------------------------------------

    pub fn sum(&self, a: Var) -> Result<Var> {
        let shape = self.shape(a);
        let out = Tensor::scalar(kernels::sum_all(&self.value(a)));
        self.push("sum", out, &[a], || {
            Box::new(move |g| vec![Tensor::full(&shape, g.item())])
        })
    }

    pub fn mean(&self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let shape = av.shape().to_vec();
        let n = T::from_usize(av.numel()).expect("count");
        let out = Tensor::scalar(kernels::sum_all(&av) / n);
        self.push("mean", out, &[a], || {
            Box::new(move |g| vec![Tensor::full(&shape, g.item() / n)])
        })
    }

    pub fn softmax(&self, a: Var, axis: usize) -> Result<Var> {
        let av = self.value(a);
        if axis >= av.rank() {
            return Err(Error::invalid(
                "softmax",
                format!("axis {axis} out of range for {:?}", av.shape()),
            ));
        }
        let y = Rc::new(kernels::softmax(&av, axis));
        let yc = Rc::clone(&y);
        self.push("softmax", (*y).clone(), &[a], || {
            Box::new(move |g| vec![kernels::softmax_backward(&yc, g, axis)])
        })
    }

    /// Layer normalisation over the last axis with learned scale and offset.
    pub fn layer_norm(&self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        let d = *xv
            .shape()
            .last()
            .ok_or_else(|| Error::invalid("layer_norm", "scalar input"))?;
        if gv.shape() != [d] || bv.shape() != [d] {
            return Err(Error::shape("layer_norm", xv.shape(), gv.shape()));
        }
        let (y, xhat, rstd) = kernels::layer_norm(&xv, &gv, &bv, T::lit(eps));
        self.push("layer_norm", y, &[x, gamma, beta], || {
            Box::new(move |g| {
                let (dx, dg, db) = kernels::layer_norm_backward(g, &xhat, &rstd, &gv);
                vec![dx, dg, db]
            })
        })
    }

    // ---- shape ops ------------------------------------------------------

    pub fn reshape(&self, a: Var, shape: &[usize]) -> Result<Var> {
        let av = self.value(a);
        let out = av.reshaped(shape)?;
        let orig = av.shape().to_vec();
        self.push("reshape", out, &[a], || {
            Box::new(move |g| vec![g.reshaped(&orig).expect("reshape grad")])
        })
    }

    pub fn permute(&self, a: Var, axes: &[usize]) -> Result<Var> {
        let out = kernels::permute(&self.value(a), axes)?;
        let inv = inverse_permutation(axes);
        self.push("permute", out, &[a], || {
            Box::new(move |g| vec![kernels::permute(g, &inv).expect("permute grad")])
        })
    }

    /// Swaps the last two axes.
    pub fn transpose(&self, a: Var) -> Result<Var> {
        let r = self.shape(a).len();
        if r < 2 {
            return Err(Error::invalid("transpose", "rank < 2"));
        }
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 2, r - 1);
        self.permute(a, &axes)
    }

    pub fn concat(&self, parts: &[Var], axis: usize) -> Result<Var> {
        let values: Vec<_> = parts.iter().map(|&p| self.value(p)).collect();
        let refs: Vec<&Tensor<T>> = values.iter().map(|v| v.as_ref()).collect();
        let out = kernels::concat(&refs, axis)?;
        let sizes: Vec<usize> = values.iter().map(|v| v.shape()[axis]).collect();
        self.push("concat", out, parts, || {
            Box::new(move |g| {
                let mut start = 0;
                sizes
                    .iter()
                    .map(|&n| {
                        let part = kernels::narrow(g, axis, start, n).expect("concat grad");
                        start += n;
                        part
                    })
                    .collect()
            })
        })
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let av = self.value(a);
        let out = kernels::narrow(&av, axis, start, len)?;
        let shape = av.shape().to_vec();
        self.push("narrow", out, &[a], || {
            Box::new(move |g| {
                let (outer, n, inner) = (
                    shape[..axis].iter().product::<usize>(),
                    shape[axis],
                    shape[axis + 1..].iter().product::<usize>(),
                );
                let mut full = vec![T::zero(); shape.iter().product()];
                for o in 0..outer {
                    let dst = (o * n + start) * inner;
                    let src = o * len * inner;
                    full[dst..dst + len * inner].copy_from_slice(&g.data()[src..src + len * inner]);
                }
                vec![Tensor::from_parts(shape.clone(), full)]
            })
        })
    }

    pub fn split(&self, a: Var, axis: usize, sizes: &[usize]) -> Result<Vec<Var>> {
        let extent = self.shape(a).get(axis).copied();
        if extent != Some(sizes.iter().sum()) {
            return Err(Error::invalid(
                "split",
                format!("sizes {sizes:?} do not cover axis {axis} of {:?}", self.shape(a)),
            ));
        }
        let mut start = 0;
        sizes
            .iter()
            .map(|&n| {
                let v = self.narrow(a, axis, start, n);
                start += n;
                v
            })
            .collect()
    }

    /// Cyclic roll along `axis`: `out[i] = in[(i + shift) mod n]`.
    pub fn roll(&self, a: Var, axis: usize, shift: usize) -> Result<Var> {
        let n = *self
            .shape(a)
            .get(axis)
            .ok_or_else(|| Error::invalid("roll", format!("axis {axis} out of range")))?;
        let s = shift % n;
        if s == 0 {
            return Ok(a);
        }
        let head = self.narrow(a, axis, s, n - s)?;
        let tail = self.narrow(a, axis, 0, s)?;
        self.concat(&[head, tail], axis)
    }

    /// Rows of the rank-2 `table` selected by `index`.
    pub fn gather_rows(&self, table: Var, index: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        let out = kernels::gather_rows(&tv, index)?;
        let rows = tv.shape()[0];
        let index = index.to_vec();
        self.push("gather_rows", out, &[table], || {
            Box::new(move |g| vec![kernels::scatter_add_rows(g, &index, rows)])
        })
    }
}

fn slot_add<T: Scalar>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        Some(acc) => {
            for (a, &b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a = *a + b;
            }
        }
        None => *slot = Some(g),
    }
}
