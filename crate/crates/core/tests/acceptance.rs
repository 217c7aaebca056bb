//! One PASS/FAIL line per acceptance criterion. Runs without the libtest
//! harness so the verdicts print in order; exits nonzero if any fails.

mod common;

use std::fs;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{dataset, tiny_model};
use swinlstm::data::{build_dataset, generate_sequence, procedural_glyph, Bitmap, GeneratorConfig, Sprites};
use swinlstm::metrics::{mse, psnr_from_mse, ssim, Convention};
use swinlstm::selfcheck::{
    check_block_pair, check_full_model, check_ops, check_two_cell_steps, degenerate_gate_max_error, hidden_bound_max,
    sw_msa_oracle_error, window_roundtrip_error, zero_weight_cell_error,
};
use swinlstm::train::{build_loss, warmup_state, TrainConfig, Trainer};
use swinlstm::{Graph, LossMode, Model, ModelConfig, StateValues, Tensor};

const OP_TOL: f64 = 1e-5;
const COMPOSITE_TOL: f64 = 1e-4;
const GRADIENT_BUDGET: Duration = Duration::from_secs(60);

const ORACLE_TOL: f64 = 1e-6;
const WINDOW_BUDGET: Duration = Duration::from_secs(10);

const CELL_TOL: f64 = 1e-12;
const HIDDEN_PROBES: usize = 10_000;

const SSIM_SELF_TOL: f64 = 1e-9;
const SSIM_SYMMETRY_TOL: f64 = 1e-12;
const PSNR_TOL: f64 = 1e-9;

const LOSS_RATIO: f64 = 0.5;
const LOSS_STEPS: usize = 300;
const OVERFIT_MSE: f64 = 1e-3;
const OVERFIT_STEPS: usize = 2000;
const LEARNING_BUDGET: Duration = Duration::from_secs(15 * 60);

const GENERATED_SEQUENCES: usize = 1000;

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: String) -> Verdict {
    Verdict { passed, detail }
}

fn gradient_integrity() -> Verdict {
    let start = Instant::now();
    let mut worst_op = 0f64;
    for (_, rep) in check_ops(0, None).unwrap() {
        worst_op = worst_op.max(rep.max_rel_error);
    }
    let composites = [
        check_block_pair(0, None).unwrap().max_rel_error,
        check_two_cell_steps(0, None).unwrap().max_rel_error,
        check_full_model(0, None).unwrap().max_rel_error,
    ];
    let worst_composite = composites.iter().fold(0f64, |m, &v| m.max(v));
    let took = start.elapsed();
    verdict(
        worst_op < OP_TOL && worst_composite < COMPOSITE_TOL && took < GRADIENT_BUDGET,
        format!(
            "max op error {worst_op:.2e} (< {OP_TOL:e}), block pair / two steps / full model {:.2e} / {:.2e} / {:.2e} (< {COMPOSITE_TOL:e}), {:.1} s",
            composites[0],
            composites[1],
            composites[2],
            took.as_secs_f64()
        ),
    )
}

fn shifted_windows() -> Verdict {
    let start = Instant::now();
    let (mut oracle, mut roundtrip) = (0f64, 0f64);
    for gh in [4, 8] {
        for gw in [4, 8] {
            for w in [2, 4] {
                oracle = oracle.max(sw_msa_oracle_error(gh, gw, w, (gh * 100 + gw * 10 + w) as u64).unwrap());
                roundtrip = roundtrip.max(window_roundtrip_error(gh, gw, w, 1).unwrap());
            }
        }
    }
    let took = start.elapsed();
    verdict(
        oracle < ORACLE_TOL && roundtrip == 0.0 && took < WINDOW_BUDGET,
        format!(
            "oracle max diff {oracle:.2e} (< {ORACLE_TOL:e}), roundtrip diff {roundtrip}, {:.2} s",
            took.as_secs_f64()
        ),
    )
}

fn cell_algebra() -> Verdict {
    let zero = (0..3).map(|s| zero_weight_cell_error(s).unwrap()).fold(0f64, f64::max);
    let degenerate = (0..3)
        .map(|s| degenerate_gate_max_error(s).unwrap())
        .fold(0f64, f64::max);
    let hmax = hidden_bound_max(0, HIDDEN_PROBES).unwrap();
    verdict(
        zero <= CELL_TOL && degenerate <= CELL_TOL && hmax < 1.0,
        format!("zero-weight {zero:.2e}, degenerate gate {degenerate:.2e} (<= {CELL_TOL:e}), max |H| {hmax} over {HIDDEN_PROBES} probes"),
    )
}

fn schedule_bookkeeping() -> Verdict {
    let (model, store) = Model::init::<f64>(tiny_model(8), 1).unwrap();
    let mut ok = true;
    let mut counts = Vec::new();
    for s in [2, 4, 10] {
        let mut rng = ChaCha8Rng::seed_from_u64(s as u64);
        let frames = Tensor::from_fn(&[2, 2 * s, 1, 8, 8], |_| rng.random_range(0.0..1.0));
        let g = Graph::new(&store, false);
        let lg = build_loss(&g, &model, &frames, s, LossMode::L2).unwrap();
        let pairs = lg.pairs(&g);
        counts.push(pairs);
        let handoff = StateValues::capture(&g, lg.unrolled.handoff.as_ref().unwrap());
        ok &= pairs == 2 * s - 1 && handoff == warmup_state(&model, &store, &frames, s).unwrap();
    }
    verdict(
        ok,
        format!("pairs for S = 2, 4, 10: {counts:?}, handoff bit-exact: {ok}"),
    )
}

fn metric_fidelity() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut frame = || -> Vec<f64> { (0..4096).map(|_| rng.random_range(0.0..1.0)).collect() };
    let (mut self_err, mut sym_err) = (0f64, 0f64);
    for _ in 0..100 {
        let (a, b) = (frame(), frame());
        self_err = self_err.max((ssim(&a, &a, [1, 64, 64]).unwrap() - 1.0).abs());
        sym_err = sym_err.max((ssim(&a, &b, [1, 64, 64]).unwrap() - ssim(&b, &a, [1, 64, 64]).unwrap()).abs());
    }
    let psnr_err = (psnr_from_mse(0.01, 1.0) - 20.0).abs();
    let (a, b): (Vec<f64>, Vec<f64>) = (
        (0..3).flat_map(|_| frame()).collect(),
        (0..3).flat_map(|_| frame()).collect(),
    );
    let pixel = mse(&a, &b, 4096, Convention::PixelMean).unwrap();
    let summed = mse(&a, &b, 4096, Convention::FrameSum).unwrap();
    verdict(
        self_err <= SSIM_SELF_TOL && sym_err <= SSIM_SYMMETRY_TOL && psnr_err <= PSNR_TOL && summed == pixel * 4096.0,
        format!(
            "ssim(x,x) err {self_err:.1e}, symmetry err {sym_err:.1e}, psnr err {psnr_err:.1e}, frame-sum == 4096 x pixel-mean: {}",
            summed == pixel * 4096.0
        ),
    )
}

fn learning_config() -> ModelConfig {
    ModelConfig::base(32, 32, 2, 64, 2)
}

/// Runs until `steps` updates, returning every logged loss.
fn train_losses(
    trainer: &mut Trainer,
    data: &swinlstm::data::SequenceDataset,
    steps: usize,
    stop_below: f64,
) -> Vec<f64> {
    let mut losses = Vec::with_capacity(steps);
    while losses.len() < steps {
        for row in trainer.train_epoch(data, |_| {}).unwrap() {
            losses.push(row.train_loss);
        }
        if losses.last().is_some_and(|&l| l < stop_below) {
            break;
        }
    }
    losses.truncate(steps);
    losses
}

fn learning_signal() -> Verdict {
    let start = Instant::now();
    let s = 5;
    let gen = GeneratorConfig::for_canvas(32, 2 * s);
    let data = build_dataset(7, 16, &gen, Sprites::Procedural).unwrap();
    let cfg = TrainConfig {
        learning_rate: 1e-4,
        batch_size: 4,
        frames_per_phase: s,
        seed: 7,
        epochs: usize::MAX,
        ..Default::default()
    };
    let mut trainer = Trainer::new(learning_config(), cfg.clone()).unwrap();
    let losses = train_losses(&mut trainer, &data, LOSS_STEPS, f64::NEG_INFINITY);
    let (first, last) = (losses[0], losses[LOSS_STEPS - 1]);
    let decreased = last < LOSS_RATIO * first;

    let single = build_dataset(7, 1, &gen, Sprites::Procedural).unwrap();
    let mut overfit = Trainer::new(learning_config(), TrainConfig { batch_size: 1, ..cfg }).unwrap();
    let fit = train_losses(&mut overfit, &single, OVERFIT_STEPS, OVERFIT_MSE);
    let best = fit.iter().copied().fold(f64::INFINITY, f64::min);
    let fitted = best < OVERFIT_MSE;

    let took = start.elapsed();
    verdict(
        decreased && fitted && took < LEARNING_BUDGET,
        format!(
            "loss step 1 {first:.4} -> step {LOSS_STEPS} {last:.4} (ratio {:.3}, need < {LOSS_RATIO}); single-sequence best MSE {best:.4e} after {} steps (need < {OVERFIT_MSE:e}); {:.0} s",
            last / first,
            fit.len(),
            took.as_secs_f64()
        ),
    )
}

fn determinism() -> Verdict {
    let data = dataset(10, 6, 8, 6);
    let cfg = |epochs| TrainConfig {
        learning_rate: 1e-3,
        batch_size: 2,
        epochs,
        frames_per_phase: 3,
        seed: 5,
        ..Default::default()
    };
    let trace = |epochs| {
        let dir = tempfile::tempdir().unwrap();
        Trainer::new(tiny_model(8), cfg(epochs))
            .unwrap()
            .run(&data, None, Some(dir.path()), |_| {})
            .unwrap();
        fs::read(dir.path().join("log.csv")).unwrap()
    };
    let (a, b) = (trace(4), trace(4));

    let dir = tempfile::tempdir().unwrap();
    Trainer::new(tiny_model(8), cfg(2))
        .unwrap()
        .run(&data, None, Some(dir.path()), |_| {})
        .unwrap();
    let ck = swinlstm::train::Checkpoint::<f32>::load(&dir.path().join("last.swls"), None).unwrap();
    Trainer::resume(ck, cfg(4))
        .unwrap()
        .run(&data, None, Some(dir.path()), |_| {})
        .unwrap();
    let resumed = fs::read(dir.path().join("log.csv")).unwrap();
    verdict(
        a == b && resumed == a,
        format!(
            "repeat run identical: {}, resumed trace identical: {}",
            a == b,
            resumed == a
        ),
    )
}

fn generator_properties() -> Verdict {
    let cfg = GeneratorConfig::default();
    let bound = cfg.bound();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut inside, mut speed, mut range) = (true, true, true);
    for _ in 0..GENERATED_SEQUENCES {
        let sprites: Vec<Bitmap> = (0..cfg.digits)
            .map(|_| procedural_glyph(&mut rng, cfg.sprite))
            .collect();
        let seq = generate_sequence(&mut rng, &sprites, &cfg);
        range &= seq.frames.iter().all(|v| (0.0..=1.0).contains(v));
        for step in &seq.motions {
            for (m, m0) in step.iter().zip(&seq.motions[0]) {
                let (x, y) = m.pixel();
                inside &= (0.0..=bound).contains(&m.pos.0)
                    && (0.0..=bound).contains(&m.pos.1)
                    && x + cfg.sprite <= cfg.canvas
                    && y + cfg.sprite <= cfg.canvas;
                speed &= m.vel.0.abs() == m0.vel.0.abs() && m.vel.1.abs() == m0.vel.1.abs();
            }
        }
    }
    verdict(
        inside && speed && range,
        format!("{GENERATED_SEQUENCES} sequences: on canvas {inside}, per-axis speed conserved {speed}, pixels in [0,1] {range}"),
    )
}

type Criterion = (&'static str, fn() -> Verdict);

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("gradient integrity", gradient_integrity),
        ("shifted-window correctness", shifted_windows),
        ("cell algebra", cell_algebra),
        ("two-phase schedule bookkeeping", schedule_bookkeeping),
        ("metric fidelity", metric_fidelity),
        ("desk-scale learning signal", learning_signal),
        ("determinism and persistence", determinism),
        ("generator properties", generator_properties),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let v = run();
        println!(
            "{} {}. {name}: {}",
            if v.passed { "PASS" } else { "FAIL" },
            i + 1,
            v.detail
        );
        failed += usize::from(!v.passed);
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
