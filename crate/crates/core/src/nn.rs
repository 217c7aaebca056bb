//! Basic parameterised layers.

use crate::error::Result;
use crate::params::{Builder, Graph, Init, ParamId};
use crate::tensor::{Scalar, Var};

pub const LN_EPS: f64 = 1e-5;
pub const INIT_STD: f64 = 0.02;

/// `y = x W + b` over the last axis.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, in_dim: usize, out_dim: usize, bias: bool) -> Result<Self> {
        let weight = b.param("weight", &[in_dim, out_dim], Init::TruncNormal(INIT_STD))?;
        let bias = if bias {
            Some(b.param("bias", &[out_dim], Init::Zeros)?)
        } else {
            None
        };
        Ok(Linear {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &Graph<'_, T>, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let b = self.bias.map(|b| g.param(b));
        g.linear(x, w, b)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, dim: usize) -> Result<Self> {
        Ok(LayerNorm {
            gamma: b.param("weight", &[dim], Init::Ones)?,
            beta: b.param("bias", &[dim], Init::Zeros)?,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &Graph<'_, T>, x: Var) -> Result<Var> {
        g.layer_norm(x, g.param(self.gamma), g.param(self.beta), LN_EPS)
    }
}

/// Two-layer perceptron with GELU.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
    pub dropout: f64,
}

impl Mlp {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, dim: usize, hidden: usize, dropout: f64) -> Result<Self> {
        Ok(Mlp {
            fc1: Linear::new(&mut b.scope("fc1"), dim, hidden, true)?,
            fc2: Linear::new(&mut b.scope("fc2"), hidden, dim, true)?,
            dropout,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &Graph<'_, T>, x: Var) -> Result<Var> {
        let h = self.fc1.forward(g, x)?;
        let h = g.gelu(h)?;
        let h = g.dropout(h, self.dropout)?;
        let y = self.fc2.forward(g, h)?;
        g.dropout(y, self.dropout)
    }
}
