use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use swinlstm::cell::{degenerate_gate_check, degenerate_gate_error, gate_update, CellState, SwinLstmCell};
use swinlstm::params::Builder;
use swinlstm::selfcheck::{hidden_bound_max, zero_weight_cell_error};
use swinlstm::swin::SwinBlockConfig;
use swinlstm::{Graph, ParameterStore, Tape, Tensor};

fn cfg() -> SwinBlockConfig {
    SwinBlockConfig {
        dim: 8,
        heads: 2,
        window: 2,
        grid: (4, 4),
        mlp_ratio: 2,
        rel_bias: true,
        dropout: 0.0,
    }
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-scale..scale))
}

fn cell(seed: u64) -> (SwinLstmCell, ParameterStore<f64>) {
    let mut store = ParameterStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = SwinLstmCell::new(&mut Builder::new(&mut store, &mut rng), &cfg(), 2).unwrap();
    (c, store)
}

#[test]
fn lp_maps_concatenated_tokens_to_embed_dim() {
    let (c, _) = cell(0);
    assert_eq!((c.lp.in_dim, c.lp.out_dim), (16, 8));
    assert_eq!(c.stb.depth(), 2);
}

#[test]
fn zero_weights_from_zero_state() {
    let (c, mut store) = cell(1);
    store.fill_with(|_, _| 0.0);
    let g = Graph::new(&store, false);
    let x = g.constant(random(&mut ChaCha8Rng::seed_from_u64(2), &[2, 4, 4, 8], 1.0));
    let (h, st) = c.step(&g, x, None).unwrap();
    assert_eq!(h, st.h);
    assert!(g.value(st.c).data().iter().all(|&v| v == 0.0));
    assert!(g.value(st.h).data().iter().all(|&v| v == 0.0));
}

#[test]
fn zero_weights_with_carried_cell_state() {
    let (c, mut store) = cell(3);
    store.fill_with(|_, _| 0.0);
    let g = Graph::new(&store, false);
    let shape = [1, 4, 4, 8];
    let c0 = Tensor::full(&shape, 1.5);
    let prev = CellState {
        h: g.constant(Tensor::full(&shape, 0.3)),
        c: g.constant(c0),
    };
    let x = g.constant(Tensor::full(&shape, -0.2));
    let (_, st) = c.step(&g, x, Some(&prev)).unwrap();
    for &v in g.value(st.c).data() {
        assert!((v - 0.75).abs() < 1e-12);
    }
    for &v in g.value(st.h).data() {
        assert!((v - 0.5 * 0.75f64.tanh()).abs() < 1e-12);
    }
    assert!(zero_weight_cell_error(4).unwrap() <= 1e-12);
}

#[test]
fn step_equals_explicit_update() {
    let (c, mut store) = cell(5);
    let mut r = ChaCha8Rng::seed_from_u64(6);
    store.fill_with(|_, _| r.random_range(-0.4..0.4));
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let shape = [2, 4, 4, 8];
    let (x, h0, c0) = (
        random(&mut rng, &shape, 1.0),
        random(&mut rng, &shape, 1.0),
        random(&mut rng, &shape, 2.0),
    );
    let g = Graph::new(&store, false);
    let (xv, hv, cv) = (g.constant(x), g.constant(h0), g.constant(c0));
    let (_, st) = c.step(&g, xv, Some(&CellState { h: hv, c: cv })).unwrap();

    let joint = g.concat(&[xv, hv], 3).unwrap();
    let a = c.stb.forward(&g, c.lp.forward(&g, joint).unwrap(), "").unwrap();
    let f = g.sigmoid(a).unwrap();
    let cand = g.tanh(a).unwrap();
    let c_t = g.mul(f, g.add(cand, cv).unwrap()).unwrap();
    let h_t = g.mul(f, g.tanh(c_t).unwrap()).unwrap();
    assert_eq!(g.value(st.c).data(), g.value(c_t).data());
    assert_eq!(g.value(st.h).data(), g.value(h_t).data());
}

#[test]
fn one_stb_pass_per_step() {
    let (c, store) = cell(8);
    let g = Graph::new(&store, false);
    let x = g.constant(Tensor::<f64>::zeros(&[1, 4, 4, 8]));
    let (_, s1) = c.step(&g, x, None).unwrap();
    let (_, _) = c.step(&g, x, Some(&s1)).unwrap();
    assert_eq!(c.stb_passes(), 2);
}

#[test]
fn state_shape_is_checked() {
    let (c, store) = cell(9);
    let g = Graph::new(&store, false);
    let x = g.constant(Tensor::<f64>::zeros(&[1, 4, 4, 8]));
    let bad = CellState {
        h: g.constant(Tensor::zeros(&[1, 2, 2, 8])),
        c: g.constant(Tensor::zeros(&[1, 2, 2, 8])),
    };
    assert!(c.step(&g, x, Some(&bad)).is_err());
    let wrong_dim = g.constant(Tensor::<f64>::zeros(&[1, 4, 4, 6]));
    assert!(c.step(&g, wrong_dim, None).is_err());
}

#[test]
fn degenerate_gates() {
    let zero = Tensor::<f64>::zeros(&[5]);
    assert!(degenerate_gate_check(&zero, &zero, &zero, 1e-12));
    let tape = Tape::<f64>::new();
    let f = tape.sigmoid(tape.constant(zero.clone())).unwrap();
    assert!(tape.value(f).data().iter().all(|&v| v == 0.5));

    // saturation: gates tend to 1, so C_t -> tanh(big) + C_prev = 1 + C_prev
    let big = Tensor::full(&[3], 20.0);
    let c_prev = Tensor::new(&[3], vec![-0.5, 0.0, 0.7]).unwrap();
    let (h, c) = gate_update(
        &tape,
        tape.constant(Tensor::full(&[3], 40.0)),
        tape.constant(c_prev.clone()),
    )
    .unwrap();
    for k in 0..3 {
        assert!((tape.value(c).data()[k] - (1.0 + c_prev.data()[k])).abs() < 1e-12);
        assert!((tape.value(h).data()[k] - (1.0 + c_prev.data()[k]).tanh()).abs() < 1e-12);
    }
    assert!(degenerate_gate_check(&big, &big, &c_prev, 1e-12));

    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..20 {
        let (x, hp, cp) = (
            random(&mut rng, &[32], 4.0),
            random(&mut rng, &[32], 1.0),
            random(&mut rng, &[32], 3.0),
        );
        assert!(degenerate_gate_error(&x, &hp, &cp).unwrap() <= 1e-12);
    }
    assert!(degenerate_gate_error(&zero, &Tensor::zeros(&[4]), &zero).is_err());
}

#[test]
fn hidden_state_is_strictly_bounded() {
    for seed in 0..3 {
        assert!(hidden_bound_max(seed, 10_000).unwrap() < 1.0);
    }
}

#[test]
fn cell_state_grows_at_most_linearly_from_zero() {
    let (c, mut store) = cell(11);
    let mut r = ChaCha8Rng::seed_from_u64(12);
    store.fill_with(|_, _| r.random_range(-1.0..1.0));
    let g = Graph::new(&store, false);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut state = None;
    for t in 1..=6 {
        let x = g.constant(random(&mut rng, &[1, 4, 4, 8], 3.0));
        let (_, st) = c.step(&g, x, state.as_ref()).unwrap();
        let cmax = g.value(st.c).data().iter().fold(0f64, |m, v| m.max(v.abs()));
        assert!(cmax < t as f64, "|C_{t}| = {cmax}");
        assert!(g.value(st.h).data().iter().all(|v| v.abs() < 1.0));
        state = Some(st);
    }
}
