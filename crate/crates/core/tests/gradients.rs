#[path = "oracles/gradients.rs"]
#[allow(dead_code)]
mod oracles;

use bayesnav_core::nn::{self, Activation, AdamConfig, AdamState, DenseNet, Dropout, Loss, Mode};
use bayesnav_core::seed;
use oracles::{encoder_case, policy_case, COORDS, NETS, TOL};

#[test]
fn policy_gradients_match_finite_differences() {
    for net_seed in 0..NETS {
        for loss in [Loss::GaussianNll, Loss::HeadSquaredError] {
            let c = policy_case(loss, net_seed);
            assert!(c.min_checked >= COORDS / 2, "too many kinks: {c:?}");
            assert!(c.worst <= TOL, "{loss:?} net {net_seed}: {c:?}");
        }
    }
}

#[test]
fn encoder_stack_gradients_match_finite_differences() {
    for net_seed in 0..NETS {
        let c = encoder_case(net_seed);
        assert!(c.ok(), "net {net_seed}: {c:?}");
    }
}

#[test]
fn single_linear_layer_closed_form() {
    let net = DenseNet::from_parts(
        vec![nn::LayerShape::new(3, 2, Activation::Identity)],
        Dropout::none(),
        vec![0.2, -0.1, 0.4, 1.0, 0.5, -0.3, 0.05, -0.2],
    )
    .unwrap();
    let x = vec![1.5, -2.0, 0.5];
    let y = vec![0.3, -0.7];
    let (_, g) = nn::backward(&net, Loss::SquaredError, &[x.clone()], &[y.clone()], None).unwrap();
    let out = net.forward(&x, Mode::Deterministic).unwrap();
    for r in 0..2 {
        let resid = 2.0 * (out[r] - y[r]);
        for c in 0..3 {
            assert!((g[r * 3 + c] - resid * x[c]).abs() < 1e-14);
        }
        assert!((g[6 + r] - resid).abs() < 1e-14);
    }
}

#[test]
fn inverted_dropout_is_unbiased() {
    let net = DenseNet::mlp(
        &[4, 16, 3],
        Activation::Tanh,
        Activation::Identity,
        Dropout { rate: 0.5, sites: vec![0] },
        9,
    )
    .unwrap();
    let x = [0.3, -1.2, 0.8, 0.1];
    let det = net.forward(&x, Mode::Deterministic).unwrap();
    let mut rng = seed::rng(17, &[]);
    let draws = 100_000;
    let mut mean = vec![0.0; 3];
    for _ in 0..draws {
        let out = net.forward(&x, Mode::Dropout(&mut rng)).unwrap();
        mean.iter_mut().zip(&out).for_each(|(m, o)| *m += o / draws as f64);
    }
    for (m, d) in mean.iter().zip(&det) {
        assert!((m - d).abs() <= 0.01 * d.abs().max(0.1), "{m} vs {d}");
    }
}

#[test]
fn adam_minimises_a_quadratic() {
    let mut x = [1.0];
    let mut state = AdamState::new(1, AdamConfig { lr: 0.1, ..AdamConfig::default() });
    let mut reached = None;
    for step in 0..200 {
        let g = [2.0 * x[0]];
        nn::adam_step(&mut x, &g, &mut state).unwrap();
        if x[0].abs() < 0.05 && reached.is_none() {
            reached = Some(step);
        }
    }
    assert!(reached.is_some(), "x = {}", x[0]);
}
