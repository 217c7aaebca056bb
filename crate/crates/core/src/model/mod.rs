//! SwinLSTM-B and SwinLSTM-D predictors.

mod config;
mod reconstruct;

use rand_chacha::ChaCha8Rng;

pub use config::{LossMode, ModelConfig, ReconstructionMode, Stage, Variant};
pub use reconstruct::{bilinear_matrix, Reconstruction};

use crate::cell::{CellState, SwinLstmCell};
use crate::error::{Error, Result};
use crate::params::{Builder, Graph, ParameterStore};
use crate::swin::{PatchEmbed, PatchExpanding, PatchMerging, SwinBlockConfig};
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// One [`CellState`] per cell, in forward order.
pub type NetworkState = Vec<CellState>;

/// Network state detached from any tape.
#[derive(Clone, Debug, PartialEq)]
pub struct StateValues<T> {
    /// `(H, C)` per cell.
    pub cells: Vec<(Tensor<T>, Tensor<T>)>,
}

impl<T: Scalar> StateValues<T> {
    pub fn capture(tape: &Tape<T>, state: &NetworkState) -> Self {
        StateValues {
            cells: state
                .iter()
                .map(|s| ((*tape.value(s.h)).clone(), (*tape.value(s.c)).clone()))
                .collect(),
        }
    }

    pub fn bind(&self, tape: &Tape<T>) -> NetworkState {
        self.cells
            .iter()
            .map(|(h, c)| CellState {
                h: tape.constant(h.clone()),
                c: tape.constant(c.clone()),
            })
            .collect()
    }
}

/// Result of unrolling the network over a sequence on one graph.
#[derive(Clone, Debug)]
pub struct Unrolled {
    /// Teacher-forced predictions of frames `1..S`.
    pub warmup: Vec<Var>,
    /// Autoregressive predictions, the first one fed by the last input frame.
    pub predictions: Vec<Var>,
    /// State at the end of the teacher-forced phase (handed to the rollout).
    pub handoff: Option<NetworkState>,
    pub steps: usize,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub embed: PatchEmbed,
    pub cells: Vec<SwinLstmCell>,
    pub merge: Option<PatchMerging>,
    pub expand: Option<PatchExpanding>,
    pub reconstruct: Reconstruction,
}

impl Model {
    /// Builds the network, registering its parameters in `store`.
    pub fn new<T: Scalar>(config: ModelConfig, store: &mut ParameterStore<T>, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let mut b = Builder::new(store, rng);
        let embed = PatchEmbed::new(
            &mut b.scope("patch_embed"),
            config.input_channels,
            config.patch_size,
            config.embed_dim,
        )?;
        let stages = config.stages();
        let block_cfg = |s: &Stage| SwinBlockConfig {
            dim: s.dim,
            heads: config.heads,
            window: config.window_size,
            grid: s.grid,
            mlp_ratio: config.mlp_ratio,
            rel_bias: config.relative_position_bias,
            dropout: config.dropout,
        };
        let mut cells = Vec::new();
        let (mut merge, mut expand) = (None, None);
        for (i, stage) in stages.iter().enumerate() {
            if config.variant == Variant::Deep && i == 1 {
                merge = Some(PatchMerging::new(&mut b.scope("merge"), config.embed_dim)?);
            }
            if config.variant == Variant::Deep && i == 3 {
                expand = Some(PatchExpanding::new(&mut b.scope("expand"), 2 * config.embed_dim)?);
            }
            cells.push(SwinLstmCell::new(
                &mut b.scope(&format!("cells.{i}")),
                &block_cfg(stage),
                stage.depth,
            )?);
        }
        let reconstruct = Reconstruction::new(&mut b, &config)?;
        let model = Model {
            config,
            embed,
            cells,
            merge,
            expand,
            reconstruct,
        };
        debug_assert_eq!(store.numel(), model.config.param_count());
        Ok(model)
    }

    /// Fresh model and parameters, initialised from `seed`.
    pub fn init<T: Scalar>(config: ModelConfig, seed: u64) -> Result<(Self, ParameterStore<T>)> {
        let mut store = ParameterStore::new();
        let mut rng = crate::rng::stream(seed, crate::rng::Stream::Init);
        let model = Model::new(config, &mut store, &mut rng)?;
        Ok((model, store))
    }

    pub fn total_stb_passes(&self) -> usize {
        self.cells.iter().map(SwinLstmCell::stb_passes).sum()
    }

    pub fn zero_state<T: Scalar>(&self, tape: &Tape<T>, batch: usize) -> NetworkState {
        self.cells.iter().map(|c| c.zero_state(tape, batch)).collect()
    }

    /// Reconstruction head without the output sigmoid.
    pub fn reconstruct<T: Scalar>(&self, g: &Graph<'_, T>, h: Var) -> Result<Var> {
        self.reconstruct.forward(g, h, &self.config)
    }

    /// One time step: frame `(B, C, H, W)` in, next-frame prediction in
    /// (0, 1) out.
    pub fn forward_step<T: Scalar>(
        &self,
        g: &Graph<'_, T>,
        frame: Var,
        state: Option<&NetworkState>,
    ) -> Result<(Var, NetworkState)> {
        let cfg = &self.config;
        let s = g.shape(frame);
        let expect = [
            s.first().copied().unwrap_or(0),
            cfg.input_channels,
            cfg.height,
            cfg.width,
        ];
        if s.len() != 4 || s[1..] != expect[1..] {
            return Err(Error::shape("forward_step", &s, &expect));
        }
        if let Some(st) = state {
            if st.len() != self.cells.len() {
                return Err(Error::invalid(
                    "forward_step",
                    format!("state has {} cells, model has {}", st.len(), self.cells.len()),
                ));
            }
        }
        let multi = self.cells.len() > 1;
        let tag = |i: usize| if multi { format!("l{}_", i + 1) } else { String::new() };

        let mut x = self.embed.forward(g, frame)?;
        let mut next = Vec::with_capacity(self.cells.len());
        for (i, cell) in self.cells.iter().enumerate() {
            if i == 1 {
                if let Some(m) = &self.merge {
                    x = m.forward(g, x)?;
                }
            }
            if i == 3 {
                if let Some(e) = &self.expand {
                    x = e.forward(g, x)?;
                }
            }
            let prefix = tag(i);
            let (h, st) = cell.step_traced(g, x, state.map(|s| &s[i]), &prefix)?;
            g.record(|| format!("{prefix}hid"), st.h);
            g.record(|| format!("{prefix}cell"), st.c);
            next.push(st);
            x = h;
        }
        let out = self.reconstruct(g, x)?;
        Ok((g.sigmoid(out)?, next))
    }

    /// Unrolls over `inputs` (each `(B, C, H, W)`) on a single graph: the
    /// first `S-1` frames are consumed teacher-forced, then `horizon`
    /// predictions are produced autoregressively starting from the last
    /// input frame, with the state carried across.
    pub fn unroll<T: Scalar>(&self, g: &Graph<'_, T>, inputs: &[Var], horizon: usize) -> Result<Unrolled> {
        let (&last, warm) = inputs
            .split_last()
            .ok_or_else(|| Error::invalid("rollout", "no input frames"))?;
        if horizon == 0 {
            return Err(Error::invalid("rollout", "horizon must be at least 1"));
        }
        let mut state: Option<NetworkState> = None;
        let mut warmup = Vec::with_capacity(warm.len());
        let mut steps = 0;
        for &frame in warm {
            let (pred, st) = self.forward_step(g, frame, state.as_ref())?;
            warmup.push(pred);
            state = Some(st);
            steps += 1;
        }
        let handoff = state.clone();
        let mut predictions = Vec::with_capacity(horizon);
        let mut current = last;
        for _ in 0..horizon {
            let (pred, st) = self.forward_step(g, current, state.as_ref())?;
            predictions.push(pred);
            state = Some(st);
            current = pred;
            steps += 1;
        }
        Ok(Unrolled {
            warmup,
            predictions,
            handoff,
            steps,
        })
    }

    /// Inference rollout over a `(B, S, C, H, W)` input sequence. Returns the
    /// `(B, horizon, C, H, W)` predictions. Each step runs on its own graph,
    /// so memory does not grow with the horizon.
    pub fn rollout<T: Scalar>(
        &self,
        store: &ParameterStore<T>,
        inputs: &Tensor<T>,
        horizon: usize,
    ) -> Result<Tensor<T>> {
        Ok(self.rollout_traced(store, inputs, horizon, false)?.0)
    }

    /// Like [`Model::rollout`], optionally returning per-step feature maps
    /// (hidden and cell states and every STB output) for all `S - 1 +
    /// horizon` steps.
    #[allow(clippy::type_complexity)]
    pub fn rollout_traced<T: Scalar>(
        &self,
        store: &ParameterStore<T>,
        inputs: &Tensor<T>,
        horizon: usize,
        trace: bool,
    ) -> Result<(Tensor<T>, Vec<Vec<(String, Tensor<T>)>>)> {
        let s = inputs.shape();
        if s.len() != 5 {
            return Err(Error::invalid(
                "rollout",
                format!("expected (B, S, C, H, W) inputs, got {s:?}"),
            ));
        }
        let (b, frames) = (s[0], s[1]);
        if horizon == 0 {
            return Err(Error::invalid("rollout", "horizon must be at least 1"));
        }
        let frame_shape = [b, s[2], s[3], s[4]];
        let frame_at =
            |t: usize| -> Result<Tensor<T>> { crate::tensor::kernels::narrow(inputs, 1, t, 1)?.reshaped(&frame_shape) };
        let mut state: Option<StateValues<T>> = None;
        let mut traces = Vec::new();
        let mut outputs = Vec::with_capacity(horizon);
        let mut current = frame_at(0)?;
        for step in 0..frames - 1 + horizon {
            let g = Graph::new(store, false);
            if trace {
                g.enable_trace();
            }
            let bound = state.as_ref().map(|s| s.bind(&g));
            let frame = g.constant(current.clone());
            let (pred, st) = self.forward_step(&g, frame, bound.as_ref())?;
            state = Some(StateValues::capture(&g, &st));
            let pred = (*g.value(pred)).clone();
            if trace {
                traces.push(g.take_trace());
            }
            if step + 1 < frames {
                current = frame_at(step + 1)?;
            } else {
                outputs.push(pred.clone());
                current = pred;
            }
        }
        let refs: Vec<&Tensor<T>> = outputs.iter().collect();
        let stacked = crate::tensor::kernels::concat(&refs, 1)?;
        let out = stacked.reshaped(&[b, horizon, s[2], s[3], s[4]])?;
        Ok((out, traces))
    }
}
