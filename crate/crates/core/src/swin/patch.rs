use crate::error::{Error, Result};
use crate::nn::{LayerNorm, Linear};
use crate::params::{Builder, Graph};
use crate::tensor::{Scalar, Tape, Var};

/// `(B, C, H, W)` frames to `(B, H/P, W/P, P*P*C)` flattened patches. Each
/// patch vector is ordered `(py, px, c)`.
pub fn patchify<T: Scalar>(tape: &Tape<T>, frames: Var, p: usize) -> Result<Var> {
    let s = tape.shape(frames);
    let &[b, c, h, w] = s.as_slice() else {
        return Err(Error::invalid(
            "patch_embed",
            format!("expected (B, C, H, W) frames, got {s:?}"),
        ));
    };
    if p == 0 || h % p != 0 || w % p != 0 {
        return Err(Error::invalid(
            "patch_embed",
            format!("frame {h}x{w} is not divisible by patch size {p}"),
        ));
    }
    let v = tape.reshape(frames, &[b, c, h / p, p, w / p, p])?;
    let v = tape.permute(v, &[0, 2, 4, 3, 5, 1])?;
    tape.reshape(v, &[b, h / p, w / p, p * p * c])
}

/// Inverse of [`patchify`]: `(B, Gh, Gw, P*P*C)` to `(B, C, Gh*P, Gw*P)`.
pub fn unpatchify<T: Scalar>(tape: &Tape<T>, tokens: Var, p: usize, channels: usize) -> Result<Var> {
    let s = tape.shape(tokens);
    let &[b, gh, gw, d] = s.as_slice() else {
        return Err(Error::invalid(
            "unpatchify",
            format!("expected a token grid, got {s:?}"),
        ));
    };
    if d != p * p * channels {
        return Err(Error::shape("unpatchify", &s, &[b, gh, gw, p * p * channels]));
    }
    let v = tape.reshape(tokens, &[b, gh, gw, p, p, channels])?;
    let v = tape.permute(v, &[0, 5, 1, 3, 2, 4])?;
    tape.reshape(v, &[b, channels, gh * p, gw * p])
}

/// Splits frames into `P x P` patches and projects each to the embed dim.
#[derive(Clone, Debug)]
pub struct PatchEmbed {
    pub proj: Linear,
    pub patch: usize,
    pub in_channels: usize,
}

impl PatchEmbed {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, in_channels: usize, patch: usize, dim: usize) -> Result<Self> {
        Ok(PatchEmbed {
            proj: Linear::new(&mut b.scope("proj"), in_channels * patch * patch, dim, true)?,
            patch,
            in_channels,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &Graph<'_, T>, frames: Var) -> Result<Var> {
        let s = g.shape(frames);
        if s.len() == 4 && s[1] != self.in_channels {
            return Err(Error::invalid(
                "patch_embed",
                format!("expected {} channels, got {}", self.in_channels, s[1]),
            ));
        }
        let p = patchify(g, frames, self.patch)?;
        self.proj.forward(g, p)
    }
}

/// 2x downsampling: concatenates each 2x2 neighbourhood (4D), normalises,
/// and projects to 2D.
#[derive(Clone, Debug)]
pub struct PatchMerging {
    pub norm: LayerNorm,
    pub reduction: Linear,
    pub dim: usize,
}

impl PatchMerging {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, dim: usize) -> Result<Self> {
        Ok(PatchMerging {
            norm: LayerNorm::new(&mut b.scope("norm"), 4 * dim)?,
            reduction: Linear::new(&mut b.scope("reduction"), 4 * dim, 2 * dim, false)?,
            dim,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &Graph<'_, T>, x: Var) -> Result<Var> {
        let s = g.shape(x);
        let &[b, gh, gw, d] = s.as_slice() else {
            return Err(Error::invalid(
                "patch_merging",
                format!("expected a token grid, got {s:?}"),
            ));
        };
        if gh % 2 != 0 || gw % 2 != 0 || d != self.dim {
            return Err(Error::invalid(
                "patch_merging",
                format!("grid {gh}x{gw} must be even and dim {d} must equal {}", self.dim),
            ));
        }
        // neighbour order (0,0), (1,0), (0,1), (1,1) as (dy, dx)
        let v = g.reshape(x, &[b, gh / 2, 2, gw / 2, 2, d])?;
        let v = g.permute(v, &[0, 1, 3, 4, 2, 5])?;
        let v = g.reshape(v, &[b, gh / 2, gw / 2, 4 * d])?;
        let v = self.norm.forward(g, v)?;
        self.reduction.forward(g, v)
    }
}

/// 2x upsampling: projects D to 2D, rearranges each token into a 2x2 block of
/// D/2-dim tokens, then normalises.
#[derive(Clone, Debug)]
pub struct PatchExpanding {
    pub expand: Linear,
    pub norm: LayerNorm,
    pub dim: usize,
}

impl PatchExpanding {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, dim: usize) -> Result<Self> {
        if !dim.is_multiple_of(2) {
            return Err(Error::invalid("patch_expanding", format!("dim {dim} must be even")));
        }
        Ok(PatchExpanding {
            expand: Linear::new(&mut b.scope("expand"), dim, 2 * dim, false)?,
            norm: LayerNorm::new(&mut b.scope("norm"), dim / 2)?,
            dim,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &Graph<'_, T>, x: Var) -> Result<Var> {
        let s = g.shape(x);
        let &[b, gh, gw, d] = s.as_slice() else {
            return Err(Error::invalid(
                "patch_expanding",
                format!("expected a token grid, got {s:?}"),
            ));
        };
        if d != self.dim {
            return Err(Error::shape("patch_expanding", &s, &[b, gh, gw, self.dim]));
        }
        let v = self.expand.forward(g, x)?;
        let v = g.reshape(v, &[b, gh, gw, 2, 2, d / 2])?;
        let v = g.permute(v, &[0, 1, 3, 2, 4, 5])?;
        let v = g.reshape(v, &[b, 2 * gh, 2 * gw, d / 2])?;
        self.norm.forward(g, v)
    }
}
