//! The SwinLSTM recurrent cell.
//!
//! Per step, with `A = STB(LP([X_t ; H_{t-1}]))` evaluated once:
//!
//! ```text
//! F_t = sigmoid(A)
//! C_t = F_t * (tanh(A) + C_{t-1})
//! H_t = F_t * tanh(C_t)
//! ```
//!
//! The single filter gate `F_t` stands in for the input, forget and output
//! gates of an LSTM, which coincide once the gate weights are dropped.

use std::sync::atomic::{AtomicUsize, Ordering};

use crate::error::{Error, Result};
use crate::nn::Linear;
use crate::params::{Builder, Graph};
use crate::swin::{SwinBlockConfig, SwinStack};
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// Hidden and cell state of one cell, both `(B, Gh, Gw, D)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CellState {
    pub h: Var,
    pub c: Var,
}

#[derive(Debug)]
pub struct SwinLstmCell {
    pub lp: Linear,
    pub stb: SwinStack,
    pub grid: (usize, usize),
    pub dim: usize,
    stb_passes: AtomicUsize,
}

impl Clone for SwinLstmCell {
    fn clone(&self) -> Self {
        SwinLstmCell {
            lp: self.lp.clone(),
            stb: self.stb.clone(),
            grid: self.grid,
            dim: self.dim,
            stb_passes: AtomicUsize::new(self.stb_passes()),
        }
    }
}

/// Filter-gated state update given the shared activation `a`.
/// Returns `(H_t, C_t)`.
pub fn gate_update<T: Scalar>(tape: &Tape<T>, a: Var, c_prev: Var) -> Result<(Var, Var)> {
    let f = tape.sigmoid(a)?;
    let cand = tape.tanh(a)?;
    let inner = tape.add(cand, c_prev)?;
    let c = tape.mul(f, inner)?;
    let tc = tape.tanh(c)?;
    let h = tape.mul(f, tc)?;
    Ok((h, c))
}

impl SwinLstmCell {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, cfg: &SwinBlockConfig, depth: usize) -> Result<Self> {
        Ok(SwinLstmCell {
            lp: Linear::new(&mut b.scope("lp"), 2 * cfg.dim, cfg.dim, true)?,
            stb: SwinStack::new(&mut b.scope("stb"), cfg, depth)?,
            grid: cfg.grid,
            dim: cfg.dim,
            stb_passes: AtomicUsize::new(0),
        })
    }

    pub fn zero_state<T: Scalar>(&self, tape: &Tape<T>, batch: usize) -> CellState {
        let shape = [batch, self.grid.0, self.grid.1, self.dim];
        CellState {
            h: tape.constant(Tensor::zeros(&shape)),
            c: tape.constant(Tensor::zeros(&shape)),
        }
    }

    /// Number of STB stack evaluations since construction.
    pub fn stb_passes(&self) -> usize {
        self.stb_passes.load(Ordering::Relaxed)
    }

    /// One recurrence step. `prev == None` starts from zero states.
    pub fn step<T: Scalar>(&self, g: &Graph<'_, T>, x: Var, prev: Option<&CellState>) -> Result<(Var, CellState)> {
        self.step_traced(g, x, prev, "")
    }

    pub(crate) fn step_traced<T: Scalar>(
        &self,
        g: &Graph<'_, T>,
        x: Var,
        prev: Option<&CellState>,
        prefix: &str,
    ) -> Result<(Var, CellState)> {
        let s = g.shape(x);
        if s.len() != 4 || (s[1], s[2]) != self.grid || s[3] != self.dim {
            return Err(Error::shape(
                "cell_step",
                &s,
                &[s.first().copied().unwrap_or(0), self.grid.0, self.grid.1, self.dim],
            ));
        }
        let state = match prev {
            Some(p) => {
                if g.shape(p.h) != s || g.shape(p.c) != s {
                    return Err(Error::shape("cell_step state", &g.shape(p.h), &s));
                }
                *p
            }
            None => self.zero_state(g, s[0]),
        };
        let joint = g.concat(&[x, state.h], 3)?;
        let projected = self.lp.forward(g, joint)?;
        self.stb_passes.fetch_add(1, Ordering::Relaxed);
        let a = self.stb.forward(g, projected, prefix)?;
        let (h, c) = gate_update(g, a, state.c)?;
        Ok((h, CellState { h, c }))
    }
}

/// Checks the weight-free form of the gates: with `A = X + H_prev`, the
/// fused filter gate must coincide with separately computed input, forget
/// and output gates and reproduce the scalar LSTM recurrence within `tol`.
pub fn degenerate_gate_check(x: &Tensor<f64>, h_prev: &Tensor<f64>, c_prev: &Tensor<f64>, tol: f64) -> bool {
    degenerate_gate_error(x, h_prev, c_prev).is_ok_and(|e| e <= tol)
}

/// Largest deviation between the fused update and the scalar oracle.
pub fn degenerate_gate_error(x: &Tensor<f64>, h_prev: &Tensor<f64>, c_prev: &Tensor<f64>) -> Result<f64> {
    if x.shape() != h_prev.shape() || x.shape() != c_prev.shape() {
        return Err(Error::shape("degenerate_gate_check", x.shape(), h_prev.shape()));
    }
    let tape = Tape::<f64>::new();
    let (xv, hv, cv) = (
        tape.constant(x.clone()),
        tape.constant(h_prev.clone()),
        tape.constant(c_prev.clone()),
    );
    let a = tape.add(xv, hv)?;
    let f = tape.sigmoid(a)?;
    let (h, c) = gate_update(&tape, a, cv)?;
    let (f, h, c) = (tape.value(f), tape.value(h), tape.value(c));

    let sigmoid = |v: f64| 1.0 / (1.0 + (-v).exp());
    let mut worst = 0f64;
    for k in 0..x.numel() {
        let s = x.data()[k] + h_prev.data()[k];
        let (i_gate, f_gate, o_gate) = (sigmoid(s), sigmoid(s), sigmoid(s));
        let c_t = f_gate * c_prev.data()[k] + i_gate * s.tanh();
        let h_t = o_gate * c_t.tanh();
        let fused = f.data()[k];
        for e in [
            fused - i_gate,
            fused - f_gate,
            fused - o_gate,
            c.data()[k] - c_t,
            h.data()[k] - h_t,
        ] {
            worst = worst.max(if e.is_nan() { f64::INFINITY } else { e.abs() });
        }
    }
    Ok(worst)
}
