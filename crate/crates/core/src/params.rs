//! Named trainable parameters, their Adam moments, and the per-pass binding
//! of parameters onto a tape.

use std::cell::RefCell;
use std::collections::HashMap;
use std::ops::Deref;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::{Gradients, Scalar, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub adam_m: Vec<T>,
    pub adam_v: Vec<T>,
}

/// Ordered, named parameter collection plus optimizer state. This is the
/// unit that gets checkpointed.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterStore<T> {
    params: Vec<Param<T>>,
    by_name: HashMap<String, usize>,
    /// Number of optimizer updates applied so far.
    pub step: u64,
}

impl<T: Scalar> ParameterStore<T> {
    pub fn new() -> Self {
        ParameterStore {
            params: Vec::new(),
            by_name: HashMap::new(),
            step: 0,
        }
    }

    pub fn add(&mut self, name: &str, mut value: Tensor<T>) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            return Err(Error::invalid(
                "parameters",
                format!("duplicate parameter name `{name}`"),
            ));
        }
        value.set_requires_grad(true);
        let n = value.numel();
        self.by_name.insert(name.to_string(), self.params.len());
        self.params.push(Param {
            name: name.to_string(),
            value,
            adam_m: vec![T::zero(); n],
            adam_v: vec![T::zero(); n],
        });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    pub fn set_grads(&mut self, grads: Vec<Option<Tensor<T>>>) -> Result<()> {
        for (p, g) in self.params.iter_mut().zip(grads) {
            p.value.set_grad(Some(match g {
                Some(g) => g.into_data(),
                None => vec![T::zero(); p.value.numel()],
            }))?;
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            let _ = p.value.set_grad(None);
        }
    }

    /// Overwrites every parameter value with `f(name, index)`.
    pub fn fill_with(&mut self, mut f: impl FnMut(&str, usize) -> T) {
        for p in &mut self.params {
            let name = p.name.clone();
            for (i, v) in p.value.data_mut().iter_mut().enumerate() {
                *v = f(&name, i);
            }
        }
    }

    /// Same parameters at another precision (optimizer state is carried over).
    pub fn cast<U: Scalar>(&self) -> ParameterStore<U> {
        let cast_vec = |v: &[T]| {
            v.iter()
                .map(|x| U::from_f64(x.to_f64().unwrap_or(f64::NAN)).unwrap())
                .collect()
        };
        let mut out = ParameterStore::new();
        for p in &self.params {
            let id = out.add(&p.name, p.value.cast()).expect("unique names");
            let q = out.get_mut(id);
            q.adam_m = cast_vec(&p.adam_m);
            q.adam_v = cast_vec(&p.adam_v);
        }
        out.step = self.step;
        out
    }
}

/// Weight initialisation schemes.
#[derive(Clone, Copy, Debug)]
pub enum Init {
    Zeros,
    Ones,
    /// Normal(0, std) truncated to [-2 std, 2 std].
    TruncNormal(f64),
}

impl Init {
    pub fn tensor<T: Scalar, R: Rng + ?Sized>(self, shape: &[usize], rng: &mut R) -> Tensor<T> {
        match self {
            Init::Zeros => Tensor::zeros(shape),
            Init::Ones => Tensor::ones(shape),
            Init::TruncNormal(std) => Tensor::from_fn(shape, |_| loop {
                let z: f64 = StandardNormal.sample(rng);
                if z.abs() <= 2.0 {
                    break T::lit(z * std);
                }
            }),
        }
    }
}

/// Registers parameters under a dotted name prefix.
pub struct Builder<'a, T> {
    store: &'a mut ParameterStore<T>,
    rng: &'a mut ChaCha8Rng,
    prefix: String,
}

impl<'a, T: Scalar> Builder<'a, T> {
    pub fn new(store: &'a mut ParameterStore<T>, rng: &'a mut ChaCha8Rng) -> Self {
        Builder {
            store,
            rng,
            prefix: String::new(),
        }
    }

    pub fn scope(&mut self, name: &str) -> Builder<'_, T> {
        let prefix = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        };
        Builder {
            store: self.store,
            rng: self.rng,
            prefix,
        }
    }

    pub fn param(&mut self, name: &str, shape: &[usize], init: Init) -> Result<ParamId> {
        let full = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        };
        let value = init.tensor(shape, self.rng);
        self.store.add(&full, value)
    }
}

/// One forward pass: a tape plus the parameters bound onto it as leaves.
pub struct Graph<'a, T: Scalar> {
    tape: Tape<T>,
    store: &'a ParameterStore<T>,
    bound: RefCell<Vec<Option<Var>>>,
    train: bool,
    dropout_rng: RefCell<ChaCha8Rng>,
    trace: RefCell<Option<Vec<(String, Var)>>>,
}

impl<T: Scalar> Deref for Graph<'_, T> {
    type Target = Tape<T>;

    fn deref(&self) -> &Tape<T> {
        &self.tape
    }
}

impl<'a, T: Scalar> Graph<'a, T> {
    /// With `train == false` parameters are bound as constants and no
    /// backward rules are recorded.
    pub fn new(store: &'a ParameterStore<T>, train: bool) -> Self {
        Graph {
            tape: Tape::new(),
            store,
            bound: RefCell::new(vec![None; store.len()]),
            train,
            dropout_rng: RefCell::new(ChaCha8Rng::seed_from_u64(0)),
            trace: RefCell::new(None),
        }
    }

    pub fn with_dropout_rng(self, rng: ChaCha8Rng) -> Self {
        *self.dropout_rng.borrow_mut() = rng;
        self
    }

    pub fn dropout_rng(&self) -> ChaCha8Rng {
        self.dropout_rng.borrow().clone()
    }

    pub fn tape(&self) -> &Tape<T> {
        &self.tape
    }

    pub fn is_training(&self) -> bool {
        self.train
    }

    pub fn param(&self, id: ParamId) -> Var {
        if let Some(v) = self.bound.borrow()[id.0] {
            return v;
        }
        let v = self.tape.leaf(self.store.get(id).value.clone(), self.train);
        self.bound.borrow_mut()[id.0] = Some(v);
        v
    }

    pub fn dropout(&self, x: Var, p: f64) -> Result<Var> {
        self.tape.dropout(x, p, self.train, &mut *self.dropout_rng.borrow_mut())
    }

    /// Starts collecting named intermediate values (feature-map dumps).
    pub fn enable_trace(&self) {
        *self.trace.borrow_mut() = Some(Vec::new());
    }

    pub fn record(&self, name: impl FnOnce() -> String, v: Var) {
        if let Some(trace) = self.trace.borrow_mut().as_mut() {
            trace.push((name(), v));
        }
    }

    pub fn take_trace(&self) -> Vec<(String, Tensor<T>)> {
        self.trace
            .borrow_mut()
            .take()
            .unwrap_or_default()
            .into_iter()
            .map(|(name, v)| (name, (*self.tape.value(v)).clone()))
            .collect()
    }

    /// Backward sweep; gradients are returned in parameter order.
    pub fn backward(&self, loss: Var) -> Result<Vec<Option<Tensor<T>>>> {
        Ok(self.backward_with(loss, &[])?.0)
    }

    /// Like [`Graph::backward`], also returning the gradients of `extra`
    /// (typically input leaves).
    #[allow(clippy::type_complexity)]
    pub fn backward_with(&self, loss: Var, extra: &[Var]) -> Result<(Vec<Option<Tensor<T>>>, Vec<Option<Tensor<T>>>)> {
        let mut grads: Gradients<T> = self.tape.backward(loss)?;
        let params = self
            .bound
            .borrow()
            .iter()
            .map(|b| b.and_then(|v| grads.take(v)))
            .collect();
        let extra = extra.iter().map(|&v| grads.take(v)).collect();
        Ok((params, extra))
    }
}
