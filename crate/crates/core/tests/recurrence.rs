mod common;

use common::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ran_core::attention::{build_mask, MaskKind, WindowLayout};
use ran_core::config::{GpcRouting, ModelConfig, Task};
use ran_core::numerics::{Graph, ParamStore, Tensor};
use ran_core::recurrence::*;

fn tiny(depth: usize, len: usize, window: usize) -> ModelConfig {
    let mut cfg = ModelConfig::new(Task::Classify, 20, 2);
    cfg.max_len = len;
    cfg.window = window;
    cfg.dim = 4;
    cfg.heads = 2;
    cfg.depth = depth;
    cfg.init_std = 0.5;
    cfg
}

fn encoder(cfg: &ModelConfig, seed: u64) -> (ParamStore<f64>, EncoderParams) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let p = EncoderParams::register(&mut store, cfg, &mut rng);
    (store, p)
}

#[test]
fn chunk_counts_and_padding() {
    let store = ParamStore::<f64>::new();
    for (len, w, windows, pads) in [(10, 4, 3, 2), (512, 256, 2, 0), (7, 7, 1, 0)] {
        let mut g = Graph::new(&store);
        let x = g.constant(Tensor::full(&[len, 3], 1.0));
        let ws = chunk(&mut g, x, &vec![true; len], w).unwrap();
        assert_eq!(ws.len(), windows);
        let last = ws.last().unwrap();
        assert_eq!(last.valid.iter().filter(|v| !**v).count(), pads);
        let t = g.value(last.tokens);
        assert_eq!(t.rows(), w);
        for r in w - pads..w {
            assert!(t.row(r).iter().all(|&v| v == 0.0));
        }
    }
}

#[test]
fn chunking_is_exhaustive() {
    let store = ParamStore::<f64>::new();
    for len in 1..=64 {
        for w in 1..=len {
            let mut g = Graph::inference(&store);
            let x = g.constant(Tensor::zeros(&[len, 1]));
            let ws = chunk(&mut g, x, &vec![true; len], w).unwrap();
            assert_eq!(ws.len(), len.div_ceil(w));
            let real: usize = ws.iter().map(|w| w.valid.iter().filter(|v| **v).count()).sum();
            assert_eq!(real, len);
        }
    }
}

#[test]
fn initial_state_is_the_norm_offset() {
    let cfg = tiny(1, 8, 4);
    let (mut store, p) = encoder(&cfg, 1);
    let mut g = Graph::new(&store);
    let s = init_gpc(&mut g, &p.init, 4, 1e-5).unwrap();
    assert!(g.value(s.value).data().iter().all(|&v| v == 0.0));
    let b = [0.3, -1.0, 2.0, 0.5];
    store.get_mut(p.init.beta).data_mut().copy_from_slice(&b);
    let mut g = Graph::new(&store);
    let s = init_gpc(&mut g, &p.init, 4, 1e-5).unwrap();
    assert_eq!(g.value(s.value).data(), &b);
}

#[test]
fn learnable_initial_state_matches_hand_computation() {
    let mut cfg = tiny(1, 8, 4);
    cfg.learnable_gpc_init = true;
    let (store, p) = encoder(&cfg, 2);
    let mut g = Graph::new(&store);
    let s = init_gpc(&mut g, &p.init, 4, 1e-5).unwrap();
    let v = rows(store.get(p.init.g0.unwrap()));
    let want = layer_norm(&affine(&v, store.get(p.init.w_g), None), &[1.0; 4], &[0.0; 4], 1e-5);
    assert!(max_abs_diff(&rows(g.value(s.value)), &want) < 1e-12);
}

/// Eqs. of one window written out with the reference helpers.
fn scripted_window(store: &ParamStore<f64>, lp: &LayerParams, gpc: &M, x: &M, mask: &M, heads: usize) -> (M, M) {
    let xin: M = gpc.iter().chain(x).cloned().collect();
    let xn = layer_norm(&xin, store.get(lp.in_gamma).data(), store.get(lp.in_beta).data(), 1e-5);
    let a = &lp.attn;
    let q = affine(&xn, store.get(a.wq), Some(store.get(a.bq)));
    let k = affine(&xn, store.get(a.wk), Some(store.get(a.bk)));
    let v = affine(&xn, store.get(a.wv), Some(store.get(a.bv)));
    let (wo, bo) = a.out.unwrap();
    let o = affine(&multi_head(&q, &k, &v, mask, heads), store.get(wo), Some(store.get(bo)));
    let o = standard_norm(&o, 1e-5);
    (vec![o[0].clone()], o[1..].to_vec())
}

#[test]
fn encode_window_matches_script() {
    let mut cfg = tiny(1, 3, 3);
    cfg.ablations.no_rotary = true;
    let (store, p) = encoder(&cfg, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let gpc = random(&mut rng, 1, 4);
    let x = random(&mut rng, 3, 4);
    let mut g = Graph::new(&store);
    let gv = g.constant(tensor(&gpc));
    let xv = g.constant(tensor(&x));
    let w = Window {
        tokens: xv,
        valid: vec![true; 3],
        offset: 0,
    };
    let s = EncodeSettings::from_config(&cfg, None);
    let out = encode_window(&mut g, &GpcState { value: gv, window_index: 0 }, &w, &p.layers[0], &s).unwrap();
    let mask = build_mask::<f64>(MaskKind::Full, 3, WindowLayout::dense(&[true; 3])).unwrap();
    let (gp, tok) = scripted_window(&store, &p.layers[0], &gpc, &x, &rows(&mask.matrix), 2);
    assert_eq!(g.value(out.gpc_prime).shape(), &[1, 4]);
    assert_eq!(g.value(out.tokens).shape(), &[3, 4]);
    assert!(max_abs_diff(&rows(g.value(out.gpc_prime)), &gp) < 1e-8);
    assert!(max_abs_diff(&rows(g.value(out.tokens)), &tok) < 1e-8);
    for r in 0..3 {
        let mu: f64 = g.value(out.tokens).row(r).iter().sum::<f64>() / 4.0;
        assert!(mu.abs() < 1e-6);
    }
}

#[test]
fn identical_tokens_give_identical_rows_without_rotary() {
    let mut cfg = tiny(1, 4, 4);
    cfg.ablations.no_rotary = true;
    let (store, p) = encoder(&cfg, 5);
    let mut g = Graph::new(&store);
    let gv = g.constant(Tensor::from_f64(&[1, 4], &[0.1, 0.2, 0.3, -0.6]).unwrap());
    let xv = g.constant(Tensor::from_rows(&vec![vec![0.5, -0.1, 0.9, 0.2]; 4]).unwrap());
    let w = Window {
        tokens: xv,
        valid: vec![true; 4],
        offset: 0,
    };
    let s = EncodeSettings::from_config(&cfg, None);
    let out = encode_window(&mut g, &GpcState { value: gv, window_index: 0 }, &w, &p.layers[0], &s).unwrap();
    let t = g.value(out.tokens);
    for r in 1..4 {
        assert_eq!(t.row(r), t.row(0));
    }
}

#[test]
fn update_gpc_cases() {
    let cfg = tiny(1, 4, 4);
    let (store, p) = encoder(&cfg, 6);
    let lp = &p.layers[0];
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let prev = random(&mut rng, 1, 4);
    let gp = random(&mut rng, 1, 4);
    let mut g = Graph::new(&store);
    let pv = g.constant(tensor(&prev));
    let zero = g.constant(Tensor::zeros(&[1, 4]));
    let gpv = g.constant(tensor(&gp));
    let prev_state = GpcState { value: pv, window_index: 3 };
    let a = update_gpc(&mut g, zero, &prev_state, lp.gpc_gamma, lp.gpc_beta, 1e-5, true).unwrap();
    assert!(max_abs_diff(&rows(g.value(a.value)), &standard_norm(&prev, 1e-5)) < 1e-12);
    assert_eq!(a.window_index, 4);
    let b = update_gpc(&mut g, gpv, &prev_state, lp.gpc_gamma, lp.gpc_beta, 1e-5, true).unwrap();
    assert!(max_abs_diff(&rows(g.value(b.value)), &standard_norm(&add(&gp, &prev), 1e-5)) < 1e-10);
    let c = update_gpc(&mut g, gpv, &prev_state, lp.gpc_gamma, lp.gpc_beta, 1e-5, false).unwrap();
    assert!(max_abs_diff(&rows(g.value(c.value)), &standard_norm(&gp, 1e-5)) < 1e-10);
    // An already standardized sum passes through (up to eps).
    let s = standard_norm(&add(&gp, &prev), 0.0);
    let half: M = vec![s[0].iter().map(|v| v / 2.0).collect()];
    let hv = g.constant(tensor(&half));
    let st = GpcState { value: hv, window_index: 0 };
    let d = update_gpc(&mut g, hv, &st, lp.gpc_gamma, lp.gpc_beta, 1e-5, true).unwrap();
    assert!(max_abs_diff(&rows(g.value(d.value)), &s) < 1e-4);
}

fn stack_values(store: &ParamStore<f64>, cfg: &ModelConfig, p: &EncoderParams, x: &Tensor<f64>) -> (Vec<Tensor<f64>>, Vec<Tensor<f64>>) {
    let mut g = Graph::inference(store);
    let xv = g.constant(x.clone());
    let rot = ran_core::rope::RotaryTable::new(cfg.head_dim(), cfg.window + 1, cfg.rotary_base).unwrap();
    let out = run_stack(&mut g, xv, &vec![true; x.rows()], cfg, p, Some(&rot)).unwrap();
    (
        out.windows.iter().map(|v| g.value(*v).clone()).collect(),
        out.history.iter().map(|s| g.value(s.value).clone()).collect(),
    )
}

#[test]
fn later_windows_do_not_affect_earlier_ones() {
    for routing in [GpcRouting::Vertical, GpcRouting::Independent] {
        let mut cfg = tiny(2, 12, 4);
        cfg.routing = routing;
        let (store, p) = encoder(&cfg, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random(&mut rng, 12, 4);
        let (w1, h1) = stack_values(&store, &cfg, &p, &tensor(&x));
        let mut y = x.clone();
        for r in 8..12 {
            y[r] = random(&mut rng, 1, 4).remove(0);
        }
        let (w2, h2) = stack_values(&store, &cfg, &p, &tensor(&y));
        assert_eq!(h1.len(), 3);
        for i in 0..2 {
            assert_eq!(w1[i], w2[i]);
            assert_eq!(h1[i], h2[i]);
        }
        assert_ne!(w1[2], w2[2]);
    }
}

#[test]
fn single_layer_stack_is_run_layer() {
    let cfg = tiny(1, 8, 4);
    let (store, p) = encoder(&cfg, 10);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = tensor(&random(&mut rng, 8, 4));
    let (ws, hs) = stack_values(&store, &cfg, &p, &x);
    let mut g = Graph::inference(&store);
    let xv = g.constant(x);
    let windows = chunk(&mut g, xv, &[true; 8], 4).unwrap();
    let g0 = init_gpc(&mut g, &p.init, 4, 1e-5).unwrap();
    let rot = ran_core::rope::RotaryTable::new(2, 5, cfg.rotary_base).unwrap();
    let s = EncodeSettings::from_config(&cfg, Some(&rot));
    let (tok, hist) = run_layer(&mut g, g0, &windows, &p.layers[0], &s, true).unwrap();
    for i in 0..2 {
        assert_eq!(g.value(tok[i]), &ws[i]);
        assert_eq!(g.value(hist[i].value), &hs[i]);
    }
    let single = tiny(1, 4, 4);
    let (store, p) = encoder(&single, 10);
    let (_, h) = stack_values(&store, &single, &p, &tensor(&random(&mut rng, 4, 4)));
    assert_eq!(h.len(), 1);
}

#[test]
fn two_layer_vertical_stack_matches_unrolled_script() {
    let mut cfg = tiny(2, 6, 3);
    cfg.ablations.no_rotary = true;
    cfg.routing = GpcRouting::Vertical;
    let (store, p) = encoder(&cfg, 12);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let x = random(&mut rng, 6, 4);
    let mut g = Graph::inference(&store);
    let xv = g.constant(tensor(&x));
    let out = run_stack(&mut g, xv, &[true; 6], &cfg, &p, None).unwrap();
    let mask = rows(&build_mask::<f64>(MaskKind::Full, 3, WindowLayout::dense(&[true; 3])).unwrap().matrix);
    let ln = |v: &M, lp: &LayerParams| layer_norm(v, store.get(lp.gpc_gamma).data(), store.get(lp.gpc_beta).data(), 1e-5);
    let mut carry = rows(store.get(p.init.beta));
    for i in 0..2 {
        let mut input = x[3 * i..3 * i + 3].to_vec();
        let mut state = carry.clone();
        for lp in &p.layers {
            let (gp, tok) = scripted_window(&store, lp, &state, &input, &mask, 2);
            state = ln(&add(&gp, &state), lp);
            input = tok;
        }
        assert!(max_abs_diff(&rows(g.value(out.windows[i])), &input) < 1e-8);
        assert!(max_abs_diff(&rows(g.value(out.history[i].value)), &state) < 1e-8);
        carry = state;
    }
}

#[test]
fn parameter_count_grows_with_depth_and_ignores_length() {
    let counts: Vec<usize> = (1..=4)
        .map(|depth| {
            let mut cfg = ModelConfig::new(Task::Classify, 1000, 2);
            cfg.depth = depth;
            ran_core::model::RanModel::<f32>::new(cfg, 0).unwrap().num_parameters()
        })
        .collect();
    assert!(counts.windows(2).all(|w| w[1] > w[0]), "{counts:?}");
    let mut short = ModelConfig::new(Task::Classify, 1000, 2);
    short.max_len = 256;
    let mut long = short.clone();
    long.max_len = 4096;
    let a = ran_core::model::RanModel::<f32>::new(short, 0).unwrap().num_parameters();
    let b = ran_core::model::RanModel::<f32>::new(long, 0).unwrap().num_parameters();
    assert_eq!(a, b);
}

#[test]
fn gradient_reaches_the_first_window() {
    for m in [2, 4, 8] {
        let cfg = tiny(2, 4 * m, 4);
        let (store, p) = encoder(&cfg, 14);
        let mut rng = ChaCha8Rng::seed_from_u64(15 + m as u64);
        let mut g = Graph::new(&store);
        let xv = g.constant(tensor(&random(&mut rng, 4 * m, 4)));
        let rot = ran_core::rope::RotaryTable::new(2, 5, cfg.rotary_base).unwrap();
        let out = run_stack(&mut g, xv, &vec![true; 4 * m], &cfg, &p, Some(&rot)).unwrap();
        let last = out.history.last().unwrap().value;
        let w = g.constant(tensor(&random(&mut rng, 4, 1)));
        let proj = g.matmul(last, w).unwrap();
        let grads = g.backward(proj).unwrap();
        let gx = grads.wrt(xv).unwrap();
        let first: f64 = gx.slice_rows(0, 4).norm();
        assert!(first > 0.0, "m={m}");
    }
}
