mod common;

use common::*;
use pat_recon::Image;
use pat_recon::dipnet::{
    dip_loss, dip_loss_grad, unet_forward, unet_init, unet_vjp, DipConfig, Head, MeanPenalty,
    NetworkParams,
};

const HEADS: [Head; 3] = [Head::Conv3x3Relu, Head::Conv1x1LeakyRelu, Head::Conv1x1Linear];

fn with_values(p: &NetworkParams, v: &[f64]) -> NetworkParams {
    NetworkParams {
        values: v.to_vec(),
        slots: p.slots.clone(),
    }
}

#[test]
fn vjp_matches_finite_differences() {
    let z = smooth_input(8);
    let up = random_image((8, 8), 5);
    for head in HEADS {
        let cfg = tiny_net(head);
        let p = generic_params(&cfg, (8, 8), 21);
        let (grads, dz) = unet_vjp(&p, &cfg, &z, &up).unwrap();
        let fd = central_diff(&p.values, 1e-5, |v| {
            dot(&unet_forward(&with_values(&p, v), &cfg, &z).unwrap(), &up)
        });
        let (err, at) = max_rel_err(&grads.values, &fd, 1e-3);
        assert!(err <= 1e-6, "{head:?}: param error {err:e} at {}", at);
        let zs = z.as_slice().unwrap();
        let fdz = central_diff(zs, 1e-5, |v| {
            let zz = Image::from_shape_vec((8, 8), v.to_vec()).unwrap();
            dot(&unet_forward(&p, &cfg, &zz).unwrap(), &up)
        });
        let (err, _) = max_rel_err(dz.as_slice().unwrap(), &fdz, 1e-3);
        assert!(err <= 1e-6, "{head:?}: input error {err:e}");
    }
}

#[test]
fn vjp_is_linear_in_upstream() {
    let cfg = tiny_net(Head::Conv1x1LeakyRelu);
    let z = smooth_input(8);
    let p = unet_init(&cfg, (8, 8)).unwrap();
    let up = random_image((8, 8), 9);
    let (g1, d1) = unet_vjp(&p, &cfg, &z, &up).unwrap();
    let (g3, d3) = unet_vjp(&p, &cfg, &z, &(&up * -2.5)).unwrap();
    let scale = g1.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for (a, b) in g1.values.iter().zip(&g3.values) {
        assert!((b + 2.5 * a).abs() <= 1e-12 * scale.max(1.0));
    }
    for (a, b) in d1.iter().zip(d3.iter()) {
        assert!((b + 2.5 * a).abs() <= 1e-12);
    }
}

#[test]
fn loss_gradient_matches_finite_differences() {
    let op = tiny_operator();
    let z = smooth_input(8);
    let g = op.forward(&(smooth_input(8) * 0.8)).unwrap() + random_series(op.data_shape(), 3) * 0.01;
    let configs = [
        DipConfig { lambda: 0.0, ..Default::default() },
        DipConfig { lambda: 0.05, tv_eps: Some(1e-2), ..Default::default() },
        DipConfig {
            lambda: 0.05,
            tv_eps: Some(1e-2),
            mean_penalty: Some(MeanPenalty { mu: 3.0, m0: Some(0.2) }),
            ..Default::default()
        },
    ];
    for head in HEADS {
        let cfg = tiny_net(head);
        let p = generic_params(&cfg, (8, 8), 22);
        for dc in &configs {
            let an = dip_loss_grad(&p, &cfg, &z, &g, &op, dc).unwrap();
            let fd = central_diff(&p.values, 1e-5, |v| {
                dip_loss(&with_values(&p, v), &cfg, &z, &g, &op, dc).unwrap()
            });
            let (err, at) = max_rel_err(&an.values, &fd, 1e-3);
            assert!(err <= 1e-5, "{head:?} {dc:?}: error {err:e} at {}", p.slots.iter().rfind(|s| s.offset <= at).unwrap().name);
        }
    }
}

#[test]
fn loss_bookkeeping() {
    let op = tiny_operator();
    let cfg = tiny_net(Head::Conv1x1Linear);
    let z = smooth_input(8);
    let mut p = unet_init(&cfg, (8, 8)).unwrap();
    let g0 = ndarray::Array2::zeros(op.data_shape());
    p.get_mut("head.weight").unwrap().fill(0.0);
    assert_eq!(dip_loss(&p, &cfg, &z, &g0, &op, &DipConfig::default()).unwrap(), 0.0);

    let p = unet_init(&cfg, (8, 8)).unwrap();
    let g = random_series(op.data_shape(), 4);
    let dc = DipConfig {
        lambda: 0.3,
        tv_eps: Some(1e-3),
        mean_penalty: Some(MeanPenalty { mu: 2.0, m0: Some(0.1) }),
        ..Default::default()
    };
    let phi = unet_forward(&p, &cfg, &z).unwrap();
    let r = op.forward(&phi).unwrap() - &g;
    let data: f64 = r.iter().map(|v| v * v).sum();
    let mut tv = 0.0;
    for i in 0..8 {
        for j in 0..8 {
            let dx = if i < 7 { phi[[i + 1, j]] - phi[[i, j]] } else { 0.0 };
            let dy = if j < 7 { phi[[i, j + 1]] - phi[[i, j]] } else { 0.0 };
            tv += (dx * dx + dy * dy + 1e-6).sqrt() - 1e-3;
        }
    }
    let mean = phi.sum() / 64.0;
    let expected = data + 0.3 * tv + 2.0 * (mean - 0.1) * (mean - 0.1);
    let got = dip_loss(&p, &cfg, &z, &g, &op, &dc).unwrap();
    assert!((got - expected).abs() <= 1e-12 * expected);
    let data_only = dip_loss(&p, &cfg, &z, &g, &op, &DipConfig::default()).unwrap();
    assert!((data_only - data).abs() <= 1e-12 * data);
}

#[test]
fn stationary_at_exact_fit() {
    let op = tiny_operator();
    let cfg = tiny_net(Head::Conv1x1Linear);
    let z = smooth_input(8);
    let p = unet_init(&cfg, (8, 8)).unwrap();
    let g = op.forward(&unet_forward(&p, &cfg, &z).unwrap()).unwrap();
    let grad = dip_loss_grad(&p, &cfg, &z, &g, &op, &DipConfig::default()).unwrap();
    let scale = dip_loss_grad(&p, &cfg, &z, &(&g * 2.0), &op, &DipConfig::default()).unwrap();
    let s: f64 = scale.values.iter().map(|v| v * v).sum::<f64>().sqrt();
    let n: f64 = grad.values.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(n <= 1e-10 * s, "{n:e} vs {s:e}");
}

#[test]
fn upstream_doubles_with_data() {
    use pat_recon::dipnet::LossTerms;
    let op = tiny_operator();
    let z = smooth_input(8);
    let g = random_series(op.data_shape(), 8);
    let terms = LossTerms::resolve(&DipConfig::default(), &z);
    let phi = ndarray::Array2::zeros((8, 8));
    let u1 = terms.image_gradient(&phi, &g, &op).unwrap();
    let u2 = terms.image_gradient(&phi, &(&g * 2.0), &op).unwrap();
    for (a, b) in u1.iter().zip(u2.iter()) {
        assert!((b - 2.0 * a).abs() <= 1e-13 * a.abs().max(1e-3));
    }
}
