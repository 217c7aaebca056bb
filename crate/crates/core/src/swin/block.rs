use crate::error::{Error, Result};
use crate::nn::{LayerNorm, Mlp};
use crate::params::{Builder, Graph};
use crate::tensor::{Scalar, Tensor, Var};

use super::attention::WindowAttention;
use super::mask::build_shift_mask;
use super::window::{cyclic_shift, cyclic_unshift, window_partition, window_reverse};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SwinBlockConfig {
    pub dim: usize,
    pub heads: usize,
    pub window: usize,
    pub grid: (usize, usize),
    pub mlp_ratio: usize,
    pub rel_bias: bool,
    pub dropout: f64,
}

impl SwinBlockConfig {
    pub fn validate(&self) -> Result<()> {
        let (gh, gw) = self.grid;
        if self.window == 0 || gh % self.window != 0 || gw % self.window != 0 {
            return Err(Error::invalid(
                "swin_block",
                format!("token grid {gh}x{gw} is not divisible by window size {}", self.window),
            ));
        }
        if self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return Err(Error::invalid(
                "swin_block",
                format!("embed dim {} is not divisible by {} heads", self.dim, self.heads),
            ));
        }
        Ok(())
    }
}

/// One Swin block: `x + MSA(LN(x))` followed by `x + MLP(LN(x))`. With a
/// nonzero shift the attention runs on the cyclically shifted grid under the
/// region mask (SW-MSA); otherwise on plain windows (W-MSA).
#[derive(Clone, Debug)]
pub struct SwinBlock {
    pub norm1: LayerNorm,
    pub attn: WindowAttention,
    pub norm2: LayerNorm,
    pub mlp: Mlp,
    pub shift: usize,
    pub grid: (usize, usize),
    mask: Option<Tensor<f64>>,
}

impl SwinBlock {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, cfg: &SwinBlockConfig, shift: usize) -> Result<Self> {
        cfg.validate()?;
        if shift >= cfg.window {
            return Err(Error::invalid(
                "swin_block",
                format!("shift {shift} must be smaller than window {}", cfg.window),
            ));
        }
        let mask = (shift > 0).then(|| build_shift_mask(cfg.grid.0, cfg.grid.1, cfg.window, shift));
        Ok(SwinBlock {
            norm1: LayerNorm::new(&mut b.scope("norm1"), cfg.dim)?,
            attn: WindowAttention::new(&mut b.scope("attn"), cfg.dim, cfg.heads, cfg.window, cfg.rel_bias)?,
            norm2: LayerNorm::new(&mut b.scope("norm2"), cfg.dim)?,
            mlp: Mlp::new(&mut b.scope("mlp"), cfg.dim, cfg.dim * cfg.mlp_ratio, cfg.dropout)?,
            shift,
            grid: cfg.grid,
            mask,
        })
    }

    pub fn mask<T: Scalar>(&self) -> Option<Tensor<T>> {
        self.mask.as_ref().map(|m| m.cast())
    }

    /// The attention half: `x + (S)W-MSA(LN(x))`.
    pub fn attention_residual<T: Scalar>(&self, g: &Graph<'_, T>, x: Var) -> Result<Var> {
        let shape = g.shape(x);
        if shape.len() != 4 || (shape[1], shape[2]) != self.grid || shape[3] != self.attn.dim {
            return Err(Error::shape(
                "swin_block",
                &shape,
                &[
                    shape.first().copied().unwrap_or(0),
                    self.grid.0,
                    self.grid.1,
                    self.attn.dim,
                ],
            ));
        }
        let h = self.norm1.forward(g, x)?;
        let h = if self.shift > 0 {
            cyclic_shift(g, h, self.shift)?
        } else {
            h
        };
        let ws = window_partition(g, h, self.attn.window)?;
        let mask = self.mask::<T>();
        let a = self.attn.forward(g, &ws, mask.as_ref())?;
        let h = window_reverse(g, &ws, a)?;
        let h = if self.shift > 0 {
            cyclic_unshift(g, h, self.shift)?
        } else {
            h
        };
        g.add(x, h)
    }

    /// The MLP half: `x + MLP(LN(x))`.
    pub fn mlp_residual<T: Scalar>(&self, g: &Graph<'_, T>, x: Var) -> Result<Var> {
        let h = self.norm2.forward(g, x)?;
        let h = self.mlp.forward(g, h)?;
        g.add(x, h)
    }

    pub fn forward<T: Scalar>(&self, g: &Graph<'_, T>, x: Var) -> Result<Var> {
        let x = self.attention_residual(g, x)?;
        self.mlp_residual(g, x)
    }
}

/// Stack of Swin blocks in W-MSA / SW-MSA pairs.
#[derive(Clone, Debug)]
pub struct SwinStack {
    pub blocks: Vec<SwinBlock>,
}

impl SwinStack {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, cfg: &SwinBlockConfig, depth: usize) -> Result<Self> {
        if depth == 0 || !depth.is_multiple_of(2) {
            return Err(Error::invalid(
                "swin_stack",
                format!("depth must be a positive even number of blocks, got {depth}"),
            ));
        }
        let blocks = (0..depth)
            .map(|i| {
                let shift = if i % 2 == 1 { cfg.window / 2 } else { 0 };
                SwinBlock::new(&mut b.scope(&format!("blocks.{i}")), cfg, shift)
            })
            .collect::<Result<_>>()?;
        Ok(SwinStack { blocks })
    }

    pub fn depth(&self) -> usize {
        self.blocks.len()
    }

    /// Runs every block; each block output is offered to the graph trace as
    /// `{prefix}stb{k}` (1-based).
    pub fn forward<T: Scalar>(&self, g: &Graph<'_, T>, x: Var, prefix: &str) -> Result<Var> {
        let mut x = x;
        for (i, block) in self.blocks.iter().enumerate() {
            x = block.forward(g, x)?;
            g.record(|| format!("{prefix}stb{}", i + 1), x);
        }
        Ok(x)
    }
}
