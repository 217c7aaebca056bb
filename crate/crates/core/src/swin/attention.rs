use crate::error::{Error, Result};
use crate::nn::{Linear, INIT_STD};
use crate::params::{Builder, Graph, Init, ParamId};
use crate::tensor::{Scalar, Tensor, Var};

use super::window::WindowSet;

/// Index into the `(2w-1)^2` relative-position table for every ordered pair
/// of tokens in a `w x w` window.
pub fn relative_position_index(w: usize) -> Vec<usize> {
    let n = w * w;
    let span = 2 * w - 1;
    let mut idx = Vec::with_capacity(n * n);
    for a in 0..n {
        for b in 0..n {
            let dr = (a / w) as isize - (b / w) as isize + w as isize - 1;
            let dc = (a % w) as isize - (b % w) as isize + w as isize - 1;
            idx.push(dr as usize * span + dc as usize);
        }
    }
    idx
}

/// Multi-head self-attention within each window, with an optional learned
/// relative position bias and an optional additive mask.
#[derive(Clone, Debug)]
pub struct WindowAttention {
    pub qkv: Linear,
    pub proj: Linear,
    pub rel_bias: Option<ParamId>,
    pub dim: usize,
    pub heads: usize,
    pub window: usize,
}

impl WindowAttention {
    pub fn new<T: Scalar>(
        b: &mut Builder<'_, T>,
        dim: usize,
        heads: usize,
        window: usize,
        rel_bias: bool,
    ) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::invalid(
                "window_msa",
                format!("embed dim {dim} is not divisible by {heads} heads"),
            ));
        }
        let rel_bias = if rel_bias {
            let span = 2 * window - 1;
            Some(b.param(
                "relative_position_bias_table",
                &[span * span, heads],
                Init::TruncNormal(INIT_STD),
            )?)
        } else {
            None
        };
        Ok(WindowAttention {
            qkv: Linear::new(&mut b.scope("qkv"), dim, 3 * dim, true)?,
            proj: Linear::new(&mut b.scope("proj"), dim, dim, true)?,
            rel_bias,
            dim,
            heads,
            window,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &Graph<'_, T>, ws: &WindowSet, mask: Option<&Tensor<T>>) -> Result<Var> {
        Ok(self.forward_with_probs(g, ws, mask)?.0)
    }

    /// Returns the projected output `(batch * windows, n, D)` and the
    /// attention probabilities `(batch * windows, heads, n, n)`.
    pub fn forward_with_probs<T: Scalar>(
        &self,
        g: &Graph<'_, T>,
        ws: &WindowSet,
        mask: Option<&Tensor<T>>,
    ) -> Result<(Var, Var)> {
        let shape = g.shape(ws.windows);
        let (bn, n, d) = (shape[0], shape[1], shape[2]);
        if d != self.dim || n != self.window * self.window {
            return Err(Error::shape(
                "window_msa",
                &shape,
                &[bn, self.window * self.window, self.dim],
            ));
        }
        let h = self.heads;
        let dh = d / h;

        let qkv = self.qkv.forward(g, ws.windows)?;
        let qkv = g.reshape(qkv, &[bn, n, 3, h, dh])?;
        let qkv = g.permute(qkv, &[2, 0, 3, 1, 4])?;
        let parts = g.split(qkv, 0, &[1, 1, 1])?;
        let q = g.reshape(parts[0], &[bn, h, n, dh])?;
        let k = g.reshape(parts[1], &[bn, h, n, dh])?;
        let v = g.reshape(parts[2], &[bn, h, n, dh])?;

        let q = g.scale(q, 1.0 / (dh as f64).sqrt())?;
        let kt = g.transpose(k)?;
        let mut scores = g.matmul(q, kt)?;

        if let Some(table) = self.rel_bias {
            let table = g.param(table);
            let bias = g.gather_rows(table, &relative_position_index(self.window))?;
            let bias = g.reshape(bias, &[n, n, h])?;
            let bias = g.permute(bias, &[2, 0, 1])?;
            scores = g.add(scores, bias)?;
        }
        if let Some(mask) = mask {
            let nw = ws.num_windows();
            if mask.shape() != [nw, n, n] {
                return Err(Error::shape("window_msa mask", mask.shape(), &[nw, n, n]));
            }
            let m = g.constant(mask.reshaped(&[nw, 1, n, n])?);
            let s = g.reshape(scores, &[bn / nw, nw, h, n, n])?;
            let s = g.add(s, m)?;
            scores = g.reshape(s, &[bn, h, n, n])?;
        }
        let probs = g.softmax(scores, 3)?;
        let out = g.matmul(probs, v)?;
        let out = g.permute(out, &[0, 2, 1, 3])?;
        let out = g.reshape(out, &[bn, n, d])?;
        Ok((self.proj.forward(g, out)?, probs))
    }
}
