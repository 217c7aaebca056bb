//! Built-in verification suite: gradient checks of every primitive and of
//! the composite modules at 64-bit, window and mask oracles, and the cell
//! algebra. Shared by the `selfcheck` command and the test suites.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::cell::{degenerate_gate_error, gate_update, SwinLstmCell};
use crate::error::Result;
use crate::model::{Model, ModelConfig};
use crate::params::{Builder, Graph, ParameterStore};
use crate::swin::{
    build_shift_mask, cyclic_shift, cyclic_unshift, region_ids, relative_position_index, window_partition,
    window_reverse, SwinBlockConfig, SwinStack, WindowAttention,
};
use crate::tensor::gradcheck::scalarize;
use crate::tensor::{grad_check_inputs, GradCheckReport, Tape, Tensor, Var};

pub const OP_TOL: f64 = 1e-5;
pub const COMPOSITE_TOL: f64 = 1e-4;
pub const ORACLE_TOL: f64 = 1e-6;
pub const ALGEBRA_TOL: f64 = 1e-12;
const EPS: f64 = 1e-6;

/// One named check: passes when `error <= tolerance`.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub error: f64,
    pub tolerance: f64,
}

impl Check {
    pub fn new(name: impl Into<String>, error: f64, tolerance: f64) -> Self {
        Check {
            name: name.into(),
            error,
            tolerance,
        }
    }

    pub fn passed(&self) -> bool {
        self.error <= self.tolerance
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<40} max error {:.3e} (tolerance {:.0e})",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.error,
            self.tolerance
        )
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SelfCheckReport {
    pub checks: Vec<Check>,
}

impl SelfCheckReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(Check::passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed())
    }
}

impl fmt::Display for SelfCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{c}")?;
        }
        let failed = self.failures().count();
        write!(f, "{} checks, {failed} failed", self.checks.len())
    }
}

type OpFn = Box<dyn Fn(&Tape<f64>, &[Var]) -> Result<Var>>;

/// A primitive under gradient check: the op name as recorded on the tape,
/// a function of the inputs, and the inputs themselves.
pub struct OpCase {
    pub name: &'static str,
    pub label: &'static str,
    pub inputs: Vec<Tensor<f64>>,
    pub f: OpFn,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Values bounded away from zero (for `abs`).
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(0.1..1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Every differentiable primitive with random inputs drawn from `seed`.
pub fn op_suite(seed: u64) -> Vec<OpCase> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut u = |shape: &[usize]| uniform(&mut r, shape, -1.0, 1.0);
    let mut cases: Vec<OpCase> = Vec::new();
    let mut add = |name, label, inputs, f: OpFn| cases.push(OpCase { name, label, inputs, f });

    add(
        "matmul",
        "matmul",
        vec![u(&[2, 3, 4]), u(&[4, 5])],
        Box::new(|t, v| t.matmul(v[0], v[1])),
    );
    add(
        "matmul",
        "matmul batched",
        vec![u(&[2, 3, 4]), u(&[2, 4, 2])],
        Box::new(|t, v| t.matmul(v[0], v[1])),
    );
    add(
        "matmul",
        "linear",
        vec![u(&[2, 3, 4]), u(&[4, 5]), u(&[5])],
        Box::new(|t, v| t.linear(v[0], v[1], Some(v[2]))),
    );
    add(
        "add",
        "add broadcast",
        vec![u(&[2, 3]), u(&[3])],
        Box::new(|t, v| t.add(v[0], v[1])),
    );
    add(
        "sub",
        "sub broadcast",
        vec![u(&[2, 1, 3]), u(&[4, 1])],
        Box::new(|t, v| t.sub(v[0], v[1])),
    );
    add(
        "mul",
        "mul broadcast",
        vec![u(&[2, 3, 4]), u(&[3, 1])],
        Box::new(|t, v| t.mul(v[0], v[1])),
    );
    add("scale", "scale", vec![u(&[3, 2])], Box::new(|t, v| t.scale(v[0], -1.7)));
    add(
        "add_scalar",
        "add_scalar",
        vec![u(&[3, 2])],
        Box::new(|t, v| t.add_scalar(v[0], 0.4)),
    );
    add(
        "sigmoid",
        "sigmoid",
        vec![uniform(&mut ChaCha8Rng::seed_from_u64(seed ^ 1), &[4, 3], -3.0, 3.0)],
        Box::new(|t, v| t.sigmoid(v[0])),
    );
    add(
        "tanh",
        "tanh",
        vec![uniform(&mut ChaCha8Rng::seed_from_u64(seed ^ 2), &[4, 3], -2.0, 2.0)],
        Box::new(|t, v| t.tanh(v[0])),
    );
    add(
        "gelu",
        "gelu",
        vec![uniform(&mut ChaCha8Rng::seed_from_u64(seed ^ 3), &[4, 3], -3.0, 3.0)],
        Box::new(|t, v| t.gelu(v[0])),
    );
    add("square", "square", vec![u(&[5])], Box::new(|t, v| t.square(v[0])));
    add(
        "abs",
        "abs",
        vec![away_from_zero(&mut ChaCha8Rng::seed_from_u64(seed ^ 4), &[6])],
        Box::new(|t, v| t.abs(v[0])),
    );
    add("sum", "sum", vec![u(&[2, 3])], Box::new(|t, v| t.sum(v[0])));
    add("mean", "mean", vec![u(&[2, 3])], Box::new(|t, v| t.mean(v[0])));
    add(
        "softmax",
        "softmax",
        vec![u(&[2, 4, 3])],
        Box::new(|t, v| t.softmax(v[0], 1)),
    );
    add(
        "softmax",
        "softmax last axis",
        vec![u(&[3, 5])],
        Box::new(|t, v| t.softmax(v[0], 1)),
    );
    add(
        "layer_norm",
        "layer_norm",
        vec![
            u(&[2, 3, 6]),
            uniform(&mut ChaCha8Rng::seed_from_u64(seed ^ 5), &[6], 0.5, 1.5),
            u(&[6]),
        ],
        Box::new(|t, v| t.layer_norm(v[0], v[1], v[2], 1e-5)),
    );
    add(
        "reshape",
        "reshape",
        vec![u(&[2, 6])],
        Box::new(|t, v| t.reshape(v[0], &[3, 4])),
    );
    add(
        "permute",
        "permute",
        vec![u(&[2, 3, 4])],
        Box::new(|t, v| t.permute(v[0], &[2, 0, 1])),
    );
    add(
        "permute",
        "transpose",
        vec![u(&[2, 3, 4])],
        Box::new(|t, v| t.transpose(v[0])),
    );
    add(
        "concat",
        "concat",
        vec![u(&[2, 2, 3]), u(&[2, 1, 3])],
        Box::new(|t, v| t.concat(&[v[0], v[1]], 1)),
    );
    add(
        "narrow",
        "narrow",
        vec![u(&[3, 5])],
        Box::new(|t, v| t.narrow(v[0], 1, 1, 3)),
    );
    add(
        "narrow",
        "split",
        vec![u(&[4, 3])],
        Box::new(|t, v| {
            let parts = t.split(v[0], 0, &[1, 3])?;
            let s = t.sum(parts[1])?;
            t.mul(parts[0], s)
        }),
    );
    add("concat", "roll", vec![u(&[5, 2])], Box::new(|t, v| t.roll(v[0], 0, 2)));
    add(
        "gather_rows",
        "gather_rows",
        vec![u(&[5, 3])],
        Box::new(|t, v| t.gather_rows(v[0], &[4, 0, 4, 2, 1, 0])),
    );
    add(
        "dropout",
        "dropout",
        vec![u(&[4, 4])],
        Box::new(|t, v| t.dropout(v[0], 0.3, true, &mut ChaCha8Rng::seed_from_u64(11))),
    );
    cases
}

/// Gradient check of every primitive. With `corrupt`, the named op's
/// backward rule is deliberately broken.
pub fn check_ops(seed: u64, corrupt: Option<&str>) -> Result<Vec<(&'static str, GradCheckReport)>> {
    op_suite(seed)
        .into_iter()
        .map(|case| {
            let f = &case.f;
            let report = grad_check_inputs(
                |t, v| {
                    t.corrupt_backward(corrupt);
                    f(t, v)
                },
                &case.inputs,
                EPS,
                None,
            )?;
            Ok((case.label, report))
        })
        .collect()
}

/// Gradient check of a graph-level function with respect to both the
/// listed inputs and every parameter in `store`. At most `max_probes`
/// components of each tensor are probed.
pub fn graph_grad_check<F>(
    store: &ParameterStore<f64>,
    inputs: &[Tensor<f64>],
    f: F,
    max_probes: usize,
    corrupt: Option<&str>,
) -> Result<GradCheckReport>
where
    F: Fn(&Graph<'_, f64>, &[Var]) -> Result<Var>,
{
    let eval = |s: &ParameterStore<f64>, xs: &[Tensor<f64>]| -> Result<f64> {
        let g = Graph::new(s, false);
        let vars: Vec<Var> = xs.iter().map(|x| g.constant(x.clone())).collect();
        let out = f(&g, &vars)?;
        Ok(g.value(scalarize(&g, out)?).item())
    };
    let g = Graph::new(store, true);
    g.corrupt_backward(corrupt);
    let vars: Vec<Var> = inputs.iter().map(|x| g.leaf(x.clone(), true)).collect();
    let out = f(&g, &vars)?;
    let loss = scalarize(&g, out)?;
    let (pgrads, xgrads) = g.backward_with(loss, &vars)?;

    let mut sampler = ChaCha8Rng::seed_from_u64(0x7072_6f62);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        probes: 0,
    };
    let mut note = |which: usize, idx: usize, a: f64, numeric: f64| {
        let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
        report.probes += 1;
        if err > report.max_rel_error || err.is_nan() {
            report.max_rel_error = if err.is_nan() { f64::INFINITY } else { err };
            report.worst = (which, idx);
        }
    };
    let mut pick = |n: usize| -> Vec<usize> {
        if n <= max_probes {
            (0..n).collect()
        } else {
            rand::seq::index::sample(&mut sampler, n, max_probes).into_vec()
        }
    };

    let mut xs = inputs.to_vec();
    for (k, x) in inputs.iter().enumerate() {
        for idx in pick(x.numel()) {
            let orig = x.data()[idx];
            xs[k].data_mut()[idx] = orig + EPS;
            let plus = eval(store, &xs)?;
            xs[k].data_mut()[idx] = orig - EPS;
            let minus = eval(store, &xs)?;
            xs[k].data_mut()[idx] = orig;
            let a = xgrads[k].as_ref().map_or(0.0, |t| t.data()[idx]);
            note(k, idx, a, (plus - minus) / (2.0 * EPS));
        }
    }
    let mut probe = store.clone();
    let params: Vec<_> = store.iter().map(|p| (p.name.clone(), p.value.numel())).collect();
    for (k, (name, n)) in params.iter().enumerate() {
        let id = store.id(name).expect("parameter exists");
        for idx in pick(*n) {
            let orig = store.get(id).value.data()[idx];
            probe.get_mut(id).value.data_mut()[idx] = orig + EPS;
            let plus = eval(&probe, inputs)?;
            probe.get_mut(id).value.data_mut()[idx] = orig - EPS;
            let minus = eval(&probe, inputs)?;
            probe.get_mut(id).value.data_mut()[idx] = orig;
            let a = pgrads[k].as_ref().map_or(0.0, |t| t.data()[idx]);
            note(inputs.len() + k, idx, a, (plus - minus) / (2.0 * EPS));
        }
    }
    Ok(report)
}

/// Replaces the small default initialisation with O(1) values so that
/// gradient errors are not hidden by tiny magnitudes. Norm gains stay
/// around one.
pub fn randomize_params(store: &mut ParameterStore<f64>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    store.fill_with(|name, _| {
        let v = rng.random_range(-0.5..0.5);
        if name.contains("norm") && name.ends_with(".weight") {
            1.0 + v
        } else {
            v
        }
    });
}

fn block_config(grid: usize, dim: usize, heads: usize, window: usize) -> SwinBlockConfig {
    SwinBlockConfig {
        dim,
        heads,
        window,
        grid: (grid, grid),
        mlp_ratio: 4,
        rel_bias: true,
        dropout: 0.0,
    }
}

/// W-MSA block followed by an SW-MSA block on a 4x4 grid.
pub fn check_block_pair(seed: u64, corrupt: Option<&str>) -> Result<GradCheckReport> {
    let mut store = ParameterStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stack = SwinStack::new(&mut Builder::new(&mut store, &mut rng), &block_config(4, 8, 2, 2), 2)?;
    randomize_params(&mut store, seed ^ 0x11);
    let x = uniform(&mut rng, &[1, 4, 4, 8], -1.0, 1.0);
    graph_grad_check(&store, &[x], |g, v| stack.forward(g, v[0], ""), 12, corrupt)
}

/// Two chained cell steps; the output combines both hidden states and the
/// final cell state.
pub fn check_two_cell_steps(seed: u64, corrupt: Option<&str>) -> Result<GradCheckReport> {
    let mut store = ParameterStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cell = SwinLstmCell::new(&mut Builder::new(&mut store, &mut rng), &block_config(4, 8, 2, 2), 2)?;
    randomize_params(&mut store, seed ^ 0x22);
    let shape = [1, 4, 4, 8];
    let inputs = [
        uniform(&mut rng, &shape, -1.0, 1.0),
        uniform(&mut rng, &shape, -1.0, 1.0),
        uniform(&mut rng, &shape, -0.5, 0.5),
        uniform(&mut rng, &shape, -0.5, 0.5),
    ];
    graph_grad_check(
        &store,
        &inputs,
        |g, v| {
            let prev = crate::cell::CellState { h: v[2], c: v[3] };
            let (h1, s1) = cell.step(g, v[0], Some(&prev))?;
            let (h2, s2) = cell.step(g, v[1], Some(&s1))?;
            let both = g.add(h1, h2)?;
            g.concat(&[both, s2.c], 3)
        },
        12,
        corrupt,
    )
}

/// Tiny SwinLSTM-B configuration on 8x8 frames.
pub fn tiny_base_config() -> ModelConfig {
    let mut cfg = ModelConfig::base(8, 8, 2, 8, 2);
    cfg.window_size = 2;
    cfg.heads = 2;
    cfg
}

/// Full SwinLSTM-B forward (two steps, second fed by the carried state) on
/// 8x8 frames.
pub fn check_full_model(seed: u64, corrupt: Option<&str>) -> Result<GradCheckReport> {
    let (model, mut store) = Model::init::<f64>(tiny_base_config(), seed)?;
    randomize_params(&mut store, seed ^ 0x33);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frames = [
        uniform(&mut rng, &[1, 1, 8, 8], 0.0, 1.0),
        uniform(&mut rng, &[1, 1, 8, 8], 0.0, 1.0),
    ];
    graph_grad_check(
        &store,
        &frames,
        |g, v| {
            let (p1, st) = model.forward_step(g, v[0], None)?;
            let (p2, _) = model.forward_step(g, v[1], Some(&st))?;
            g.concat(&[p1, p2], 1)
        },
        10,
        corrupt,
    )
}

/// Max abs difference after partition then reverse, and after shift then
/// unshift, over random grids (exact roundtrips give zero).
pub fn window_roundtrip_error(gh: usize, gw: usize, w: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = uniform(&mut rng, &[2, gh, gw, 3], -1.0, 1.0);
    let tape = Tape::new();
    let v = tape.constant(x.clone());
    let ws = window_partition(&tape, v, w)?;
    let back = window_reverse(&tape, &ws, ws.windows)?;
    let mut err = tape.value(back).max_abs_diff(&x);
    for s in 1..w {
        let shifted = cyclic_shift(&tape, v, s)?;
        let restored = cyclic_unshift(&tape, shifted, s)?;
        err = err.max(tape.value(restored).max_abs_diff(&x));
    }
    Ok(err)
}

/// Brute-force shifted-window attention: for every token of the shifted
/// grid, attend over the tokens that share both its window and its region,
/// then undo the shift. Uses the parameters of `attn` from `store`.
pub fn sw_msa_oracle(
    attn: &WindowAttention,
    store: &ParameterStore<f64>,
    x: &Tensor<f64>,
    shift: usize,
) -> Tensor<f64> {
    let s = x.shape();
    let (b, gh, gw, d) = (s[0], s[1], s[2], s[3]);
    let (w, h) = (attn.window, attn.heads);
    let dh = d / h;
    let wq = &store.get(attn.qkv.weight).value;
    let bq = attn.qkv.bias.map(|id| &store.get(id).value);
    let wp = &store.get(attn.proj.weight).value;
    let bp = attn.proj.bias.map(|id| &store.get(id).value);
    let table = attn.rel_bias.map(|id| &store.get(id).value);
    let rel = relative_position_index(w);
    let region = region_ids(gh, gw, w, shift);

    let mut out = vec![0.0; x.numel()];
    for bi in 0..b {
        // Shifted grid: position p holds the original token at p + shift.
        let token = |r: usize, c: usize| -> Vec<f64> {
            let (or, oc) = ((r + shift) % gh, (c + shift) % gw);
            (0..d).map(|k| x.get(&[bi, or, oc, k])).collect()
        };
        let qkv = |r: usize, c: usize| -> Vec<f64> {
            let t = token(r, c);
            (0..3 * d)
                .map(|o| (0..d).map(|i| t[i] * wq.get(&[i, o])).sum::<f64>() + bq.map_or(0.0, |bb| bb.data()[o]))
                .collect()
        };
        let feats: Vec<Vec<f64>> = (0..gh * gw).map(|p| qkv(p / gw, p % gw)).collect();
        for p in 0..gh * gw {
            let (pr, pc) = (p / gw, p % gw);
            let mut head_out = vec![0.0; d];
            for head in 0..h {
                let mut logits = Vec::new();
                for q in 0..gh * gw {
                    let (qr, qc) = (q / gw, q % gw);
                    if pr / w != qr / w || pc / w != qc / w || region[p] != region[q] {
                        continue;
                    }
                    let dot: f64 = (0..dh)
                        .map(|k| feats[p][head * dh + k] * feats[q][d + head * dh + k])
                        .sum();
                    let a = (pr % w) * w + pc % w;
                    let bidx = (qr % w) * w + qc % w;
                    let bias = table.map_or(0.0, |t| t.get(&[rel[a * w * w + bidx], head]));
                    logits.push((q, dot / (dh as f64).sqrt() + bias));
                }
                let m = logits.iter().map(|l| l.1).fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = logits.iter().map(|l| (l.1 - m).exp()).sum();
                for &(q, l) in &logits {
                    let pw = (l - m).exp() / z;
                    for k in 0..dh {
                        head_out[head * dh + k] += pw * feats[q][2 * d + head * dh + k];
                    }
                }
            }
            let (or, oc) = ((pr + shift) % gh, (pc + shift) % gw);
            for o in 0..d {
                let v: f64 =
                    (0..d).map(|i| head_out[i] * wp.get(&[i, o])).sum::<f64>() + bp.map_or(0.0, |bb| bb.data()[o]);
                out[((bi * gh + or) * gw + oc) * d + o] = v;
            }
        }
    }
    Tensor::new(s, out).expect("same shape")
}

/// Max abs difference between the masked SW-MSA path and [`sw_msa_oracle`]
/// on a `gh x gw` grid with shift `w / 2`.
pub fn sw_msa_oracle_error(gh: usize, gw: usize, w: usize, seed: u64) -> Result<f64> {
    let (d, heads) = (8, 2);
    let shift = w / 2;
    let mut store = ParameterStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let attn = WindowAttention::new(&mut Builder::new(&mut store, &mut rng), d, heads, w, true)?;
    randomize_params(&mut store, seed ^ 0x44);
    let x = uniform(&mut rng, &[2, gh, gw, d], -1.0, 1.0);

    let g = Graph::new(&store, false);
    let v = g.constant(x.clone());
    let shifted = cyclic_shift(&g, v, shift)?;
    let ws = window_partition(&g, shifted, w)?;
    let mask = build_shift_mask::<f64>(gh, gw, w, shift);
    let a = attn.forward(&g, &ws, Some(&mask))?;
    let back = window_reverse(&g, &ws, a)?;
    let out = cyclic_unshift(&g, back, shift)?;
    Ok(g.value(out).max_abs_diff(&sw_msa_oracle(&attn, &store, &x, shift)))
}

/// With every cell weight zero, the shared activation is zero, so the gate
/// is 0.5, `C = 0.5 C_prev` and `H = 0.5 tanh(0.5 C_prev)`. Returns the max
/// deviation over random inputs and states.
pub fn zero_weight_cell_error(seed: u64) -> Result<f64> {
    let mut store = ParameterStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cell = SwinLstmCell::new(&mut Builder::new(&mut store, &mut rng), &block_config(4, 8, 2, 2), 2)?;
    store.fill_with(|_, _| 0.0);
    let shape = [2, 4, 4, 8];
    let (x, h0, c0) = (
        uniform(&mut rng, &shape, -1.0, 1.0),
        uniform(&mut rng, &shape, -1.0, 1.0),
        uniform(&mut rng, &shape, -3.0, 3.0),
    );
    let g = Graph::new(&store, false);
    let prev = crate::cell::CellState {
        h: g.constant(h0),
        c: g.constant(c0.clone()),
    };
    let (_, st) = cell.step(&g, g.constant(x), Some(&prev))?;
    let (h, c) = (g.value(st.h), g.value(st.c));
    let mut worst = 0f64;
    for k in 0..c0.numel() {
        let cp = c0.data()[k];
        worst = worst.max((c.data()[k] - 0.5 * cp).abs());
        worst = worst.max((h.data()[k] - 0.5 * (0.5 * cp).tanh()).abs());
    }
    Ok(worst)
}

/// Degenerate (weight-free) gates against the scalar LSTM oracle.
pub fn degenerate_gate_max_error(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = [64];
    let x = uniform(&mut rng, &shape, -3.0, 3.0);
    let h = uniform(&mut rng, &shape, -1.0, 1.0);
    let c = uniform(&mut rng, &shape, -3.0, 3.0);
    degenerate_gate_error(&x, &h, &c)
}

/// Largest `|H|` produced by the gate update over `probes` random
/// activations and previous cell states.
pub fn hidden_bound_max(seed: u64, probes: usize) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 3.0).expect("valid");
    let a = Tensor::from_fn(&[probes], |_| normal.sample(&mut rng));
    let c = Tensor::from_fn(&[probes], |_| normal.sample(&mut rng) * 3.0);
    let tape = Tape::<f64>::new();
    let (h, _) = gate_update(&tape, tape.constant(a), tape.constant(c))?;
    Ok(tape.value(h).data().iter().fold(0.0, |m, v| m.max(v.abs())))
}

/// Runs the whole suite.
pub fn run(seed: u64, corrupt: Option<&str>) -> Result<SelfCheckReport> {
    let mut checks = Vec::new();
    for (label, rep) in check_ops(seed, corrupt)? {
        checks.push(Check::new(format!("grad {label}"), rep.max_rel_error, OP_TOL));
    }
    checks.push(Check::new(
        "grad swin block pair",
        check_block_pair(seed, corrupt)?.max_rel_error,
        COMPOSITE_TOL,
    ));
    checks.push(Check::new(
        "grad two cell steps",
        check_two_cell_steps(seed, corrupt)?.max_rel_error,
        COMPOSITE_TOL,
    ));
    checks.push(Check::new(
        "grad SwinLSTM-B 8x8",
        check_full_model(seed, corrupt)?.max_rel_error,
        COMPOSITE_TOL,
    ));
    let mut roundtrip = 0f64;
    let mut oracle = 0f64;
    for gh in [4, 8] {
        for gw in [4, 8] {
            for w in [2, 4] {
                roundtrip = roundtrip.max(window_roundtrip_error(gh, gw, w, seed)?);
                oracle = oracle.max(sw_msa_oracle_error(gh, gw, w, seed)?);
            }
        }
    }
    checks.push(Check::new("window partition/shift roundtrip", roundtrip, 0.0));
    checks.push(Check::new("masked SW-MSA vs region oracle", oracle, ORACLE_TOL));
    checks.push(Check::new(
        "zero-weight cell algebra",
        zero_weight_cell_error(seed)?,
        ALGEBRA_TOL,
    ));
    checks.push(Check::new(
        "degenerate gates vs scalar LSTM",
        degenerate_gate_max_error(seed)?,
        ALGEBRA_TOL,
    ));
    // |H| must stay strictly below one.
    let hmax = hidden_bound_max(seed, 10_000)?;
    checks.push(Check::new("max |H| below 1", hmax, 1.0 - f64::EPSILON));
    Ok(SelfCheckReport { checks })
}
