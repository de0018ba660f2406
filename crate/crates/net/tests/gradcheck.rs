//! Finite-difference verification of the differentiable paths that matter:
//! warping through the correlation matrix, positional normalization, style
//! modulation, the contextual loss, and gradient flow from losses back into
//! the correspondence adaptors.

use ndarray::{ArrayD, IxDyn};
use warpgen_core::config::{preset, LossConfig};
use warpgen_core::numeric::{central_diff_grad, grad_mismatch, max_rel_err, rel_err};
use warpgen_core::{ParamStore, SeedRng, Tape};
use warpgen_net::correspondence::{warp_g, Domain};
use warpgen_net::layers::positional_norm;
use warpgen_net::losses::{contextual_layer_g, perceptual_g};
use warpgen_net::model::{ExemplarModel, ModelMeta};
use warpgen_net::translation::spade_pn_modulate_g;
use warpgen_net::{Forward, TaskKind};

const FD_H: f64 = 1e-6;
const TOL: f64 = 1e-3;

fn rand_vec(rng: &mut SeedRng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.uniform_in(lo, hi)).collect()
}

/// d(scalar)/d(leaf) against central differences for a rebuildable graph.
fn check_input_grad(
    dims: &[usize],
    x0: Vec<f64>,
    build: impl Fn(&Tape, warpgen_core::Var) -> warpgen_core::Var,
) -> f64 {
    let eval = |flat: &[f64]| -> f64 {
        let t = Tape::new();
        let x = t.leaf(
            ArrayD::from_shape_vec(IxDyn(dims), flat.to_vec()).unwrap(),
            false,
        );
        t.scalar_value(build(&t, x))
    };
    let numeric = central_diff_grad(&x0, FD_H, eval);
    let t = Tape::new();
    let x = t.leaf(ArrayD::from_shape_vec(IxDyn(dims), x0).unwrap(), true);
    let out = build(&t, x);
    let grads = t.backward(out);
    let analytic: Vec<f64> = grads.get(x).unwrap().iter().copied().collect();
    match grad_mismatch(&analytic, &numeric, TOL, 1e-8) {
        Some((i, a, n)) => {
            eprintln!("grad mismatch at {i}: analytic {a} vs numeric {n}");
            rel_err(a, n)
        }
        None => 0.0,
    }
}

#[test]
fn warp_gradient_through_correlation_matrix() {
    // 2x2 grid: M is [1, 4, 4]; weight the output so the gradient is dense
    let grid = 2;
    let hw = grid * grid;
    let mut rng = SeedRng::new(1);
    let m0 = rand_vec(&mut rng, hw * hw, -1.0, 1.0);
    let y = ArrayD::from_shape_vec(
        IxDyn(&[1, 3, grid, grid]),
        rand_vec(&mut rng, 3 * hw, -1.0, 1.0),
    )
    .unwrap();
    let w = ArrayD::from_shape_vec(
        IxDyn(&[1, 3, grid, grid]),
        rand_vec(&mut rng, 3 * hw, -1.0, 1.0),
    )
    .unwrap();
    let err = check_input_grad(&[1, hw, hw], m0, |t, m| {
        let yv = t.leaf(y.clone(), false);
        let wv = t.leaf(w.clone(), false);
        let r = warp_g(t, m, yv, 10.0, grid);
        t.sum_all(t.mul(r, wv))
    });
    assert!(err < TOL, "warp grad rel err {err}");
}

#[test]
fn positional_norm_gradient() {
    let mut rng = SeedRng::new(2);
    let x0 = rand_vec(&mut rng, 2 * 4 * 4, -2.0, 2.0);
    let w = ArrayD::from_shape_vec(IxDyn(&[1, 2, 4, 4]), rand_vec(&mut rng, 32, -1.0, 1.0)).unwrap();
    let err = check_input_grad(&[1, 2, 4, 4], x0, |t, x| {
        let (pn, _, _) = positional_norm(t, x, 1e-5);
        let wv = t.leaf(w.clone(), false);
        t.sum_all(t.mul(pn, wv))
    });
    assert!(err < TOL, "PN grad rel err {err}");
}

#[test]
fn spade_modulation_gradients() {
    let mut rng = SeedRng::new(3);
    let dims = [1usize, 2, 4, 4];
    let n: usize = dims.iter().product();
    let f0 = rand_vec(&mut rng, n, -2.0, 2.0);
    let a0 = rand_vec(&mut rng, n, 0.5, 1.5);
    let b0 = rand_vec(&mut rng, n, -1.0, 1.0);
    let w = ArrayD::from_shape_vec(IxDyn(&dims), rand_vec(&mut rng, n, -1.0, 1.0)).unwrap();

    // check each argument in turn
    for probe in 0..3 {
        let (f_fix, a_fix, b_fix) = (f0.clone(), a0.clone(), b0.clone());
        let w = w.clone();
        let build = move |t: &Tape, x: warpgen_core::Var, which: usize| {
            let mk = |vals: &[f64]| {
                t.leaf(ArrayD::from_shape_vec(IxDyn(&dims), vals.to_vec()).unwrap(), false)
            };
            let (f, a, b) = match which {
                0 => (x, mk(&a_fix), mk(&b_fix)),
                1 => (mk(&f_fix), x, mk(&b_fix)),
                _ => (mk(&f_fix), mk(&a_fix), x),
            };
            let out = spade_pn_modulate_g(t, f, a, b, 1e-5);
            let wv = t.leaf(w.clone(), false);
            t.sum_all(t.mul(out, wv))
        };
        let x0 = match probe {
            0 => f0.clone(),
            1 => a0.clone(),
            _ => b0.clone(),
        };
        let eval = |flat: &[f64]| -> f64 {
            let t = Tape::new();
            let x = t.leaf(ArrayD::from_shape_vec(IxDyn(&dims), flat.to_vec()).unwrap(), false);
            t.scalar_value(build(&t, x, probe))
        };
        let numeric = central_diff_grad(&x0, FD_H, eval);
        let t = Tape::new();
        let x = t.leaf(ArrayD::from_shape_vec(IxDyn(&dims), x0).unwrap(), true);
        let out = build(&t, x, probe);
        let grads = t.backward(out);
        let analytic: Vec<f64> = grads.get(x).unwrap().iter().copied().collect();
        assert!(
            grad_mismatch(&analytic, &numeric, TOL, 1e-8).is_none(),
            "spade arg {probe} gradient mismatch"
        );
    }
}

#[test]
fn contextual_loss_gradient() {
    let mut rng = SeedRng::new(4);
    let x0 = rand_vec(&mut rng, 6 * 4, -1.0, 1.0);
    let y = ArrayD::from_shape_vec(IxDyn(&[5, 4]), rand_vec(&mut rng, 20, -1.0, 1.0)).unwrap();
    let err = check_input_grad(&[6, 4], x0, |t, x| {
        let yv = t.leaf(y.clone(), false);
        contextual_layer_g(t, x, yv, 0.5)
    });
    assert!(err < TOL, "contextual grad rel err {err}");
}

#[test]
fn perceptual_loss_gradient_through_backbone() {
    // gradient w.r.t. the synthesized image through the frozen extractor
    let mut store = ParamStore::new();
    let bb = warpgen_net::backbone::Backbone::deterministic_small(&mut store, 44);
    let cfg = LossConfig::default();
    let mut rng = SeedRng::new(5);
    let dims = [1usize, 3, 16, 16];
    let x0 = rand_vec(&mut rng, 3 * 256, -0.9, 0.9);
    let gt = ArrayD::from_shape_vec(IxDyn(&dims), rand_vec(&mut rng, 3 * 256, -0.9, 0.9)).unwrap();

    let eval = |flat: &[f64]| -> f64 {
        let t = Tape::new();
        let fx = Forward::eval(&t, &store);
        let x = t.leaf(ArrayD::from_shape_vec(IxDyn(&dims), flat.to_vec()).unwrap(), false);
        let g = t.leaf(gt.clone(), false);
        t.scalar_value(perceptual_g(&fx, &bb, x, g, &cfg))
    };
    // probe a handful of pixels
    let coords = [0usize, 77, 300, 511, 700];
    let numeric = warpgen_core::numeric::central_diff_at(&x0, &coords, FD_H, eval);

    let t = Tape::new();
    let fx = Forward::eval(&t, &store);
    let x = t.leaf(ArrayD::from_shape_vec(IxDyn(&dims), x0.clone()).unwrap(), true);
    let g = t.leaf(gt.clone(), false);
    let loss = perceptual_g(&fx, &bb, x, g, &cfg);
    let grads = t.backward(loss);
    let analytic_full: Vec<f64> = grads.get(x).unwrap().iter().copied().collect();
    let analytic: Vec<f64> = coords.iter().map(|&i| analytic_full[i]).collect();
    let err = max_rel_err(&analytic, &numeric);
    assert!(err < TOL, "perceptual grad rel err {err}");

    // gradient isolation: the frozen backbone receives no gradient
    for (id, entry) in store.iter() {
        if entry.name.starts_with("bb.") {
            assert!(fx.grad_of(&grads, id).is_none(), "backbone param {} got a gradient", store.name(id));
        }
    }
}

#[test]
fn perceptual_loss_reaches_adaptor_parameters_through_warp() {
    // the weak-supervision路径: synthesis losses must reach the domain-A
    // adaptor even when no pseudo pair is present
    let (cfg, loss_cfg, _) = preset("tiny16").unwrap();
    let mut store = ParamStore::new();
    let meta = ModelMeta::for_task(TaskKind::Mask, 4);
    let model = ExemplarModel::build(&cfg, meta, &mut store, 9).unwrap();

    let t = Tape::new();
    let fx = Forward::for_gradcheck(&t, &store);
    let mut rng = SeedRng::new(10);
    let s = cfg.image_size;
    let x_a = t.leaf(
        ArrayD::from_shape_vec(
            IxDyn(&[1, 4, s, s]),
            (0..4 * s * s).map(|i| f64::from(i % 4 == (i / (s * s)) % 4)).collect(),
        )
        .unwrap(),
        false,
    );
    let ex = t.leaf(
        ArrayD::from_shape_vec(IxDyn(&[1, 3, s, s]), rand_vec(&mut rng, 3 * s * s, -1.0, 1.0))
            .unwrap(),
        false,
    );
    let gt = t.leaf(
        ArrayD::from_shape_vec(IxDyn(&[1, 3, s, s]), rand_vec(&mut rng, 3 * s * s, -1.0, 1.0))
            .unwrap(),
        false,
    );
    let noise_a = model.aux_noise(3, 0, 0, 1);
    let noise_b = model.aux_noise(3, 0, 1, 1);
    let xa_full = model.with_aux(&t, x_a, Some(&noise_a));
    let ex_full = model.with_aux(&t, ex, Some(&noise_b));
    let synth = model.synth_g(&fx, xa_full, ex_full, ex);
    let loss = perceptual_g(&fx, &model.backbone, synth.fake, gt, &loss_cfg);
    let grads = t.backward(loss);

    let mut adaptor_norm = 0.0;
    for (id, entry) in store.iter() {
        if entry.name.starts_with("corr.a.") && entry.trainable {
            if let Some(g) = fx.grad_of(&grads, id) {
                adaptor_norm += g.iter().map(|v| v * v).sum::<f64>();
            }
        }
    }
    assert!(
        adaptor_norm.sqrt() > 1e-12,
        "adaptor gradient norm {adaptor_norm}"
    );
}

#[test]
fn domain_adaptor_gradcheck_through_correlation() {
    // small dedicated check: gradient of the domain alignment loss w.r.t. a
    // few shared-block weights matches finite differences
    let (cfg, _, _) = preset("tiny16").unwrap();
    let mut store = ParamStore::new();
    let meta = ModelMeta::for_task(TaskKind::Edge, 1);
    let model = ExemplarModel::build(&cfg, meta, &mut store, 21).unwrap();
    let mut rng = SeedRng::new(22);
    let s = cfg.image_size;
    let xa = ArrayD::from_shape_vec(IxDyn(&[1, 1, s, s]), rand_vec(&mut rng, s * s, 0.0, 1.0)).unwrap();
    let xb = ArrayD::from_shape_vec(IxDyn(&[1, 3, s, s]), rand_vec(&mut rng, 3 * s * s, -1.0, 1.0)).unwrap();

    let wid = store.id("corr.shared.out.weight").unwrap();
    let forward = |store: &ParamStore| -> f64 {
        let t = Tape::new();
        let fx = Forward::eval(&t, store);
        let a = t.leaf(xa.clone(), false);
        let b = t.leaf(xb.clone(), false);
        let xs = model.correspondence.adapt_g(&fx, a, Domain::A);
        let ys = model.correspondence.adapt_g(&fx, b, Domain::B);
        t.scalar_value(warpgen_net::losses::domain_alignment_g(&t, xs, ys))
    };

    let t = Tape::new();
    let fx = Forward::for_gradcheck(&t, &store);
    let a = t.leaf(xa.clone(), false);
    let b = t.leaf(xb.clone(), false);
    let xs = model.correspondence.adapt_g(&fx, a, Domain::A);
    let ys = model.correspondence.adapt_g(&fx, b, Domain::B);
    let loss = warpgen_net::losses::domain_alignment_g(&t, xs, ys);
    let grads = t.backward(loss);
    let analytic_full = fx.grad_of(&grads, wid).expect("shared weight grad");

    let coords = [0usize, 5, 11];
    let mut store_mut = store;
    for &i in &coords {
        let orig = store_mut.array(wid);
        let mut plus = orig.clone();
        plus.as_slice_mut().unwrap()[i] += FD_H;
        store_mut.set(wid, plus);
        let fp = forward(&store_mut);
        let mut minus = orig.clone();
        minus.as_slice_mut().unwrap()[i] -= FD_H;
        store_mut.set(wid, minus);
        let fm = forward(&store_mut);
        store_mut.set(wid, orig);
        let numeric = (fp - fm) / (2.0 * FD_H);
        let analytic = analytic_full.as_slice().unwrap()[i];
        let err = warpgen_core::numeric::rel_err(analytic, numeric);
        assert!(err < TOL, "coord {i}: analytic {analytic} vs numeric {numeric} (err {err})");
    }
}
