use crate::error::{Error, Result};
use crate::nn::Linear;
use crate::params::{Builder, Graph};
use crate::swin::unpatchify;
use crate::tensor::{Scalar, Tensor, Var};

use super::config::{ModelConfig, ReconstructionMode};

/// Maps the final hidden token grid back to frame resolution (pre-activation).
#[derive(Clone, Debug)]
pub enum Reconstruction {
    Transposed {
        proj: Linear,
    },
    Bilinear {
        proj: Linear,
        /// `(Gw, W)` and `(Gh, H)` transposed interpolation matrices
        cols_t: Tensor<f64>,
        rows_t: Tensor<f64>,
    },
    Linear {
        proj: Linear,
    },
}

/// `(out, in)` bilinear interpolation weights, half-pixel centres, edge
/// clamped. Every row sums to one.
pub fn bilinear_matrix(input: usize, output: usize) -> Tensor<f64> {
    let scale = input as f64 / output as f64;
    let mut m = vec![0.0; output * input];
    for o in 0..output {
        let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
        let i0 = (src.floor() as usize).min(input - 1);
        let i1 = (i0 + 1).min(input - 1);
        let lambda = src - i0 as f64;
        m[o * input + i0] += 1.0 - lambda;
        m[o * input + i1] += lambda;
    }
    Tensor::from_parts(vec![output, input], m)
}

fn transpose2(t: &Tensor<f64>) -> Tensor<f64> {
    crate::tensor::kernels::permute(t, &[1, 0]).expect("rank 2")
}

impl Reconstruction {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, cfg: &ModelConfig) -> Result<Self> {
        let (c, p, d) = (cfg.input_channels, cfg.patch_size, cfg.embed_dim);
        let (gh, gw) = cfg.token_grid();
        let mut b = b.scope("reconstruct");
        Ok(match cfg.reconstruction {
            ReconstructionMode::Transposed => Reconstruction::Transposed {
                proj: Linear::new(&mut b.scope("proj"), d, c * p * p, true)?,
            },
            ReconstructionMode::Bilinear => Reconstruction::Bilinear {
                proj: Linear::new(&mut b.scope("proj"), d, c, true)?,
                cols_t: transpose2(&bilinear_matrix(gw, cfg.width)),
                rows_t: transpose2(&bilinear_matrix(gh, cfg.height)),
            },
            ReconstructionMode::Linear => Reconstruction::Linear {
                proj: Linear::new(&mut b.scope("proj"), gh * gw * d, cfg.height * cfg.width * c, true)?,
            },
        })
    }

    /// `(B, Gh, Gw, D)` tokens to `(B, C, H, W)`.
    pub fn forward<T: Scalar>(&self, g: &Graph<'_, T>, h: Var, cfg: &ModelConfig) -> Result<Var> {
        let s = g.shape(h);
        let (gh, gw) = cfg.token_grid();
        if s.len() != 4 || (s[1], s[2]) != (gh, gw) || s[3] != cfg.embed_dim {
            return Err(Error::shape(
                "reconstruct",
                &s,
                &[s.first().copied().unwrap_or(0), gh, gw, cfg.embed_dim],
            ));
        }
        let b = s[0];
        let c = cfg.input_channels;
        match self {
            Reconstruction::Transposed { proj } => {
                let patches = proj.forward(g, h)?;
                unpatchify(g, patches, cfg.patch_size, c)
            }
            Reconstruction::Bilinear { proj, cols_t, rows_t } => {
                let low = proj.forward(g, h)?;
                let low = g.permute(low, &[0, 3, 1, 2])?;
                let wide = g.matmul(low, g.constant(cols_t.cast()))?;
                let wide = g.transpose(wide)?;
                let full = g.matmul(wide, g.constant(rows_t.cast()))?;
                g.transpose(full)
            }
            Reconstruction::Linear { proj } => {
                let flat = g.reshape(h, &[b, gh * gw * cfg.embed_dim])?;
                let out = proj.forward(g, flat)?;
                g.reshape(out, &[b, c, cfg.height, cfg.width])
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_rows_sum_to_one() {
        for (i, o) in [(4, 8), (16, 32), (8, 32), (5, 5)] {
            let m = bilinear_matrix(i, o);
            for r in 0..o {
                let s: f64 = (0..i).map(|c| m.get(&[r, c])).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bilinear_same_size_is_identity() {
        let m = bilinear_matrix(6, 6);
        for r in 0..6 {
            for c in 0..6 {
                assert_eq!(m.get(&[r, c]), if r == c { 1.0 } else { 0.0 });
            }
        }
    }
}
