use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;
use crate::smoothing::{smooth_trajectory, ControlRule};
use crate::trajdata::{Point, SceneRaster};

fn small_config() -> ModelConfig {
    ModelConfig {
        attention: AttentionBlockConfig { d_model: 8, n_heads: 2, n_layers_traj: 2, n_layers_cross: 1, dropout: 0.0 },
        d_ff: 12,
        t_pas: 4,
        t_fut: 3,
        n_cls: 3,
        grid_h: 4,
        grid_w: 4,
        ..ModelConfig::default()
    }
}

fn random_past(rng: &mut ChaCha8Rng, n: usize) -> Vec<Point> {
    (0..n).map(|_| [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)]).collect()
}

fn random_raster(rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> SceneRaster {
    let n = cfg.n_cls * cfg.grid_h * cfg.grid_w;
    SceneRaster::new(cfg.n_cls, cfg.grid_h, cfg.grid_w, (0..n).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
}

fn zero_all(p: &mut ShenetParams) {
    for t in p.tensors_mut() {
        t.data.iter_mut().for_each(|v| *v = 0.0);
    }
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

#[test]
fn param_count_matches_closed_form() {
    for cfg in [
        ModelConfig::default(),
        small_config(),
        ModelConfig {
            attention: AttentionBlockConfig { d_model: 12, n_heads: 3, n_layers_traj: 3, n_layers_cross: 4, dropout: 0.1 },
            d_ff: 5,
            t_fut: 7,
            grid_h: 3,
            grid_w: 5,
            ..ModelConfig::default()
        },
    ] {
        let p = ShenetParams::init(&cfg, 1).unwrap();
        assert_eq!(p.param_count(), cfg.param_count());
        assert!(p.tensors().iter().all(|t| t.requires_grad));
    }
    // d = 32, d_ff = 64, 2 + 2 layers, 16×16 grid, T_fut = 12
    let d = 32;
    let enc = 4 * (d * d + d) + 4 * d + (d * 64 + 64 + 64 * d + d);
    let stream = 8 * (d * d + d) + 6 * d + (d * 64 + 64 + 64 * d + d);
    let expected = 3 * d + 2 * enc + (2 * d * d + d) + (256 * d + d) + 4 * stream + (2 * d * d + d) + (d * 24 + 24);
    assert_eq!(ModelConfig::default().param_count(), expected);
}

#[test]
fn invalid_config_rejected() {
    let mut cfg = small_config();
    cfg.attention.n_heads = 3;
    assert!(matches!(ShenetParams::init(&cfg, 0), Err(Error::Config(_))));
    let mut cfg = small_config();
    cfg.attention.n_layers_cross = 0;
    assert!(ShenetParams::init(&cfg, 0).is_err());
    let mut cfg = small_config();
    cfg.attention.dropout = 1.0;
    assert!(ShenetParams::init(&cfg, 0).is_err());
}

#[test]
fn zero_weights_give_zero_trajectory_tokens() {
    let cfg = small_config();
    let mut p = ShenetParams::init(&cfg, 2).unwrap();
    zero_all(&mut p);
    let mut s = Session::new(&p);
    let past = random_past(&mut ChaCha8Rng::seed_from_u64(0), cfg.t_pas);
    let tok = s.encode_trajectory(&past).unwrap();
    assert_eq!(s.value(tok).shape, vec![cfg.t_pas, cfg.attention.d_model]);
    assert!(s.value(tok).data.iter().all(|&v| v == 0.0));
}

#[test]
fn single_step_attention_is_value_projection() {
    let cfg = ModelConfig { t_pas: 1, ..small_config() };
    let p = ShenetParams::init(&cfg, 3).unwrap();
    let mut s = Session::new(&p);
    let x = s.embed_trajectory(&[[0.7, -1.2]]).unwrap();
    let out = s.first_encoder_attention(x);
    for map in &s.attention {
        assert_eq!(s.value(map.weights).data, vec![1.0]);
    }
    // oracle: (x·Wv + bv)·Wo + bo
    let xv = s.value(x).data.clone();
    let d = cfg.attention.d_model;
    let lin = |x: &[f64], name: &str| {
        let w = p.get(&format!("{name}.weight")).unwrap();
        let b = p.get(&format!("{name}.bias")).unwrap();
        (0..d).map(|j| b.data[j] + (0..x.len()).map(|i| x[i] * w.data[i * d + j]).sum::<f64>()).collect::<Vec<f64>>()
    };
    let expected = lin(&lin(&xv, "traj.layer0.attn.v"), "traj.layer0.attn.o");
    assert!(close(&s.value(out).data, &expected, 1e-12));
}

#[test]
fn permutation_behaviour_depends_on_positional_encoding() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let past = random_past(&mut rng, 4);
    let mut swapped = past.clone();
    swapped.swap(1, 2);
    for pe in [false, true] {
        let cfg = ModelConfig { positional_encoding: pe, ..small_config() };
        let p = ShenetParams::init(&cfg, 5).unwrap();
        let run = |past: &[Point]| {
            let mut s = Session::new(&p);
            let t = s.encode_trajectory(past).unwrap();
            s.value(t).clone()
        };
        let (a, b) = (run(&past), run(&swapped));
        let rows_swapped =
            close(a.row(1), b.row(2), 1e-12) && close(a.row(2), b.row(1), 1e-12) && close(a.row(0), b.row(0), 1e-12);
        // without positions self-attention is permutation-equivariant
        assert_eq!(rows_swapped, !pe, "positional_encoding = {pe}");
    }
}

#[test]
fn scene_tokens_are_row_independent() {
    let cfg = small_config();
    let p = ShenetParams::init(&cfg, 6).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let raster = random_raster(&mut rng, &cfg);
    let mut bumped = raster.clone();
    bumped.set(1, 2, 3, 1.0 - raster.get(1, 2, 3)).unwrap();
    let run = |r: &SceneRaster| {
        let mut s = Session::new(&p);
        let t = s.encode_scene(r).unwrap();
        s.value(t).clone()
    };
    let (a, b) = (run(&raster), run(&bumped));
    assert_eq!(a.row(0), b.row(0));
    assert_eq!(a.row(2), b.row(2));
    assert_ne!(a.row(1), b.row(1));
}

#[test]
fn zero_raster_gives_zero_scene_tokens() {
    let cfg = small_config();
    let p = ShenetParams::init(&cfg, 8).unwrap();
    let mut s = Session::new(&p);
    let t = s.encode_scene(&SceneRaster::zeros(3, 4, 4).unwrap()).unwrap();
    assert!(s.value(t).data.iter().all(|&v| v == 0.0));
    let mut s = Session::new(&p);
    assert!(matches!(s.encode_scene(&SceneRaster::zeros(3, 4, 5).unwrap()), Err(Error::Shape(_))));
}

#[test]
fn identical_scene_tokens_collapse_cross_attention() {
    let cfg = small_config();
    let p = ShenetParams::init(&cfg, 9).unwrap();
    let mut s = Session::new(&p);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let tra = s.graph.constant(Tensor::matrix(4, 8, (0..32).map(|_| rng.random_range(-1.0..1.0)).collect()));
    let row: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
    let sce = s.graph.constant(Tensor::matrix(3, 8, row.repeat(3)));
    let out = s.stream_cross_attention(0, tra, sce);
    let v = s.value(out);
    for r in 1..4 {
        assert!(close(v.row(r), v.row(0), 1e-12));
    }
}

#[test]
fn zero_value_projection_leaves_residual_path() {
    let cfg = small_config();
    let mut p = ShenetParams::init(&cfg, 11).unwrap();
    for name in ["cross0.traj.ca.v.weight", "cross0.traj.ca.v.bias", "cross0.traj.ca.o.bias"] {
        p.get_mut(name).unwrap().data.iter_mut().for_each(|v| *v = 0.0);
    }
    let mut s = Session::new(&p);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let tra = s.graph.constant(Tensor::matrix(4, 8, (0..32).map(|_| rng.random_range(-1.0..1.0)).collect()));
    let sce = s.graph.constant(Tensor::matrix(3, 8, (0..24).map(|_| rng.random_range(-1.0..1.0)).collect()));
    let ca = s.stream_cross_attention(0, tra, sce);
    assert!(s.value(ca).data.iter().all(|&v| v == 0.0));
    let sum = s.graph.add(tra, ca);
    assert_eq!(s.value(sum).data, s.value(tra).data);
}

#[test]
fn two_token_attention_matches_hand_softmax() {
    let cfg = ModelConfig {
        attention: AttentionBlockConfig { d_model: 4, n_heads: 1, n_layers_traj: 1, n_layers_cross: 1, dropout: 0.0 },
        t_pas: 2,
        ..small_config()
    };
    let p = ShenetParams::init(&cfg, 13).unwrap();
    let mut s = Session::new(&p);
    let x = s.graph.constant(Tensor::matrix(2, 4, vec![0.5, -1.0, 0.25, 2.0, -0.3, 0.8, 1.1, -0.6]));
    s.first_encoder_attention(x);
    let a = s.value(s.attention[0].weights).clone();
    let proj = |name: &str| {
        let w = p.get(&format!("traj.layer0.attn.{name}.weight")).unwrap();
        let xs = s.value(x);
        (0..2).map(|r| (0..4).map(|j| (0..4).map(|i| xs.at(r, i) * w.at(i, j)).sum::<f64>()).collect::<Vec<_>>()).collect::<Vec<_>>()
    };
    let (q, k) = (proj("q"), proj("k"));
    for r in 0..2 {
        let sc: Vec<f64> = (0..2).map(|c| q[r].iter().zip(&k[c]).map(|(a, b)| a * b).sum::<f64>() / 2.0).collect();
        let z = sc[0].exp() + sc[1].exp();
        for c in 0..2 {
            assert!((a.at(r, c) - sc[c].exp() / z).abs() < 1e-12);
        }
    }
}

#[test]
fn attention_rows_sum_to_one_everywhere() {
    let cfg = small_config();
    let p = ShenetParams::init(&cfg, 14).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let mut s = Session::new(&p);
    s.forward(&random_past(&mut rng, 4), &random_raster(&mut rng, &cfg)).unwrap();
    // 2 encoder layers + 1 cross layer × 2 streams × (CA + SA), 2 heads each
    assert_eq!(s.attention.len(), (2 + 4) * 2);
    for m in &s.attention {
        let w = s.value(m.weights);
        for r in 0..w.rows() {
            assert!((w.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12, "{} head {}", m.label, m.head);
        }
    }
}

#[test]
fn zero_head_weights_return_bias() {
    let cfg = small_config();
    let mut p = ShenetParams::init(&cfg, 16).unwrap();
    p.get_mut("head.out.weight").unwrap().data.iter_mut().for_each(|v| *v = 0.0);
    let bias = vec![1.0, -2.0, 3.0, 0.5, 0.0, 7.0];
    p.get_mut("head.out.bias").unwrap().data = bias.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..3 {
        let off = p.offsets(&random_past(&mut rng, 4), &random_raster(&mut rng, &cfg)).unwrap();
        assert_eq!(off, vec![[1.0, -2.0], [3.0, 0.5], [0.0, 7.0]]);
    }
}

#[test]
fn mean_pooling_matches_brute_force() {
    let cfg = small_config();
    let p = ShenetParams::init(&cfg, 18).unwrap();
    let mut s = Session::new(&p);
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let data: Vec<f64> = (0..32).map(|_| rng.random_range(-1.0..1.0)).collect();
    let tok = s.graph.constant(Tensor::matrix(4, 8, data.clone()));
    let pooled = s.pool_scene(tok);
    let expected: Vec<f64> = (0..8).map(|c| (0..4).map(|r| data[r * 8 + c]).sum::<f64>() / 4.0).collect();
    assert!(close(&s.value(pooled).data, &expected, 1e-15));

    let same = s.graph.constant(Tensor::matrix(4, 8, data[..8].repeat(4)));
    let pooled = s.pool_scene(same);
    assert!(close(&s.value(pooled).data, &data[..8], 1e-15));
}

#[test]
fn full_graph_gradients_match_finite_differences() {
    let cfg = small_config();
    let mut p = ShenetParams::init(&cfg, 20).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let past = random_past(&mut rng, 4);
    let raster = random_raster(&mut rng, &cfg);
    let target = random_past(&mut rng, 3);
    let loss_at = |p: &ShenetParams| {
        let mut s = Session::new(p);
        let off = s.forward(&past, &raster).unwrap();
        let l = loss_tra_graph(&mut s.graph, off, &target).unwrap();
        s.value(l).data[0]
    };
    let mut s = Session::new(&p);
    let off = s.forward(&past, &raster).unwrap();
    let l = loss_tra_graph(&mut s.graph, off, &target).unwrap();
    let grads = s.graph.backward(l).unwrap();
    let vars = s.param_vars().to_vec();
    drop(s);
    p.store_grads(&vars, &grads);
    let analytic: Vec<f64> = p.tensors().iter().flat_map(|t| t.grad.clone().unwrap()).collect();
    let base = p.flat();
    let eps = 1e-5;
    for _ in 0..100 {
        let i = rng.random_range(0..base.len());
        let mut probe = p.clone();
        let mut x = base.clone();
        x[i] += eps;
        probe.set_flat(&x).unwrap();
        let up = loss_at(&probe);
        x[i] -= 2.0 * eps;
        probe.set_flat(&x).unwrap();
        let down = loss_at(&probe);
        let numeric = (up - down) / (2.0 * eps);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        assert!(rel < 1e-4, "coordinate {i}: analytic {a}, numeric {numeric}");
    }
}

#[test]
fn forward_and_backward_are_deterministic() {
    let cfg = small_config();
    let run = || {
        let p = ShenetParams::init(&cfg, 22).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let past = random_past(&mut rng, 4);
        let raster = random_raster(&mut rng, &cfg);
        let mut s = Session::new(&p);
        let off = s.forward(&past, &raster).unwrap();
        let l = loss_tra_graph(&mut s.graph, off, &[[1.0, 1.0]; 3]).unwrap();
        let g = s.graph.backward(l).unwrap();
        let gv: Vec<u64> = s.param_vars().iter().flat_map(|v| g.get(*v).unwrap_or(&[]).to_vec()).map(f64::to_bits).collect();
        (s.value(l).data[0].to_bits(), gv)
    };
    assert_eq!(run(), run());
}

#[test]
fn dropout_only_applies_when_enabled() {
    let mut cfg = small_config();
    cfg.attention.dropout = 0.3;
    let p = ShenetParams::init(&cfg, 24).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let past = random_past(&mut rng, 4);
    let raster = random_raster(&mut rng, &cfg);
    let eval = p.offsets(&past, &raster).unwrap();
    assert_eq!(eval, p.offsets(&past, &raster).unwrap());
    let train = |seed| {
        let mut s = Session::new(&p).with_dropout(seed);
        let o = s.forward(&past, &raster).unwrap();
        s.points(o)
    };
    assert_eq!(train(1), train(1));
    assert_ne!(train(1), eval);
}

#[test]
fn bad_inputs_rejected() {
    let cfg = small_config();
    let p = ShenetParams::init(&cfg, 26).unwrap();
    let raster = SceneRaster::zeros(3, 4, 4).unwrap();
    assert!(matches!(p.offsets(&[[0.0, 0.0]; 3], &raster), Err(Error::Shape(_))));
    let past = [[0.0, 0.0], [f64::NAN, 0.0], [1.0, 1.0], [2.0, 2.0]];
    assert!(matches!(p.offsets(&past, &raster), Err(Error::Numeric { .. })));
}

#[test]
fn loss_hand_cases() {
    let gt: Vec<Point> = (0..5).map(|i| [i as f64, 0.5 * i as f64]).collect();
    let shift = |dx: f64, dy: f64| gt.iter().map(|p| [p[0] + dx, p[1] + dy]).collect::<Vec<_>>();
    assert_eq!(loss_tra(&gt, &gt).unwrap(), 0.0);
    assert_eq!(loss_tra(&shift(1.0, 0.0), &gt).unwrap(), 1.0);
    assert_eq!(loss_tra(&shift(3.0, 4.0), &gt).unwrap(), 25.0);
    assert!(matches!(loss_tra(&gt[..3], &gt), Err(Error::Shape(_))));

    let rule = ControlRule::MidTrajectoryPoint;
    assert!((loss_cs(&shift(1.0, 0.0), &gt, rule).unwrap() - 1.0).abs() < 1e-24);
    let zig: Vec<Point> = vec![[0.0, 0.0], [1.0, 1.0], [2.0, -1.0], [3.0, 1.0], [4.0, -1.0], [5.0, 1.0], [6.0, 0.0]];
    let smoothed = smooth_trajectory(&zig, rule).unwrap();
    assert_eq!(loss_cs(&smoothed, &zig, rule).unwrap(), 0.0);
    let chord: Vec<Point> = (0..7).map(|i| [i as f64, 0.0]).collect();
    assert!(loss_cs(&chord, &zig, rule).unwrap() < loss_tra(&chord, &zig).unwrap());

    let mut g = Graph::new();
    let pred = g.param(Tensor::matrix(5, 2, shift(3.0, 4.0).iter().flat_map(|p| *p).collect()));
    let l = loss_tra_graph(&mut g, pred, &gt).unwrap();
    assert_eq!(g.value(l).data, vec![25.0]);
}

#[test]
fn adam_hand_cases() {
    let cfg = AdamConfig { lr: 0.1, ..AdamConfig::default() };
    let (mut m, mut v) = (vec![0.0; 3], vec![0.0; 3]);
    let mut w = vec![1.0, -2.0, 3.0];
    adam_step(&mut w, &[0.0; 3], &mut m, &mut v, &cfg, 1);
    assert_eq!(w, vec![1.0, -2.0, 3.0]);

    let (mut m, mut v) = (vec![0.0], vec![0.0]);
    let mut w = vec![0.5];
    adam_step(&mut w, &[4.0], &mut m, &mut v, &cfg, 1);
    assert!((w[0] - (0.5 - 0.1 * 4.0 / (4.0 + 1e-8))).abs() < 1e-15);

    let (mut m, mut v) = (vec![0.0], vec![0.0]);
    let mut w = vec![1.0];
    let mut prev = 1.0f64;
    for t in 1..=10 {
        let g = 2.0 * w[0];
        adam_step(&mut w, &[g], &mut m, &mut v, &cfg, t);
        assert!(w[0].abs() < prev.abs(), "step {t}: {} then {}", prev, w[0]);
        prev = w[0];
    }
}

#[test]
fn checkpoint_round_trip_and_mismatch() {
    let cfg = small_config();
    let p = ShenetParams::init(&cfg, 27).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.json");
    p.save(&path).unwrap();
    let q = ShenetParams::load(&path, Some(&cfg)).unwrap();
    assert_eq!(p.flat(), q.flat());
    let other = ModelConfig { t_fut: 5, ..cfg.clone() };
    assert!(matches!(ShenetParams::load(&path, Some(&other)), Err(Error::Config(_))));
    std::fs::write(&path, "{\"version\": 1}").unwrap();
    assert!(matches!(ShenetParams::load(&path, None), Err(Error::Format(_))));
}
