//! Analytic gradients against central differences on reduced configurations.

use ndarray::{Array2, Array4};
use nfpos::nn::blocks::{ChannelAttention, ConvBnRelu, DeepFeatureBlock, InputBlock, RegressionHead, ResidualBlock, SpatialAttention};
use nfpos::nn::gradcheck::{check_input, check_params, GradReport};
use nfpos::nn::layers::{BatchNorm2d, Conv2d, Dense};
use nfpos::nn::{ModelConfig, PosNet};
use nfpos::rng::{stream, Stream};
use rand::Rng;

const EPS: f64 = 1e-6;
const TOL: f64 = 1e-3;
const PROBES: usize = 24;

fn rand4(shape: (usize, usize, usize, usize), seed: u64) -> Array4<f64> {
    let mut r = stream(seed, Stream::Shuffle);
    Array4::from_shape_fn(shape, |_| r.gen_range(-1.0..1.0))
}

fn rand2(shape: (usize, usize), seed: u64) -> Array2<f64> {
    let mut r = stream(seed, Stream::Shuffle);
    Array2::from_shape_fn(shape, |_| r.gen_range(-1.0..1.0))
}

fn dot4(a: &Array4<f64>, b: &Array4<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn dot2(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn assert_ok(what: &str, reports: &[GradReport]) {
    for r in reports {
        assert!(r.probed > 0);
        assert!(r.rel_error < TOL, "{what}: {} relative error {:.3e}", r.name, r.rel_error);
    }
}

/// Runs a 4-D → 4-D block through parameter and input checks with loss `Σ y·R`.
macro_rules! check_block4 {
    ($what:expr, $block:expr, $x:expr, |$m:ident, $inp:ident| $fwd:expr, |$mb:ident, $g:ident| $bwd:expr) => {{
        let x: Array4<f64> = $x;
        let mut block = $block;
        let probe = {
            let $m = &mut block.clone();
            let $inp = &x;
            $fwd.unwrap()
        };
        let r = rand4(probe.dim(), 99);
        let reports = check_params(
            &mut block,
            |$m, | {
                let $inp = &x;
                Ok(dot4(&$fwd?, &r))
            },
            |$m| {
                let $inp = &x;
                $fwd?;
                let $mb = $m;
                let $g = &r;
                $bwd?;
                Ok(())
            },
            EPS,
            PROBES,
        )
        .unwrap();
        assert_ok($what, &reports);
        let dx = {
            let $m = &mut block;
            let $inp = &x;
            $fwd.unwrap();
            let $mb = $m;
            let $g = &r;
            $bwd.unwrap()
        };
        let rep = check_input(
            &x,
            &dx,
            |xi| {
                let $m = &mut block.clone();
                let $inp = xi;
                Ok(dot4(&$fwd?, &r))
            },
            EPS,
            PROBES * 4,
        )
        .unwrap();
        assert_ok($what, &[rep]);
    }};
}

#[test]
fn conv_layer() {
    let mut rng = stream(1, Stream::Init);
    for (k, p) in [(3, 1), (7, 3), (1, 0)] {
        check_block4!(
            "conv",
            Conv2d::<f64>::new(3, 4, k, p, &mut rng),
            rand4((2, 3, 8, 8), 2),
            |m, x| m.forward(x),
            |m, g| m.backward(g, true).map(|d| d.unwrap())
        );
    }
}

#[test]
fn batch_norm_layer() {
    let mut bn = BatchNorm2d::<f64>::new(3, 0.1, 1e-5);
    bn.gamma.value = vec![0.5, 1.5, -0.7];
    bn.beta.value = vec![0.1, 0.0, -0.3];
    check_block4!(
        "batch norm",
        bn,
        rand4((3, 3, 4, 4), 3),
        |m, x| m.forward(x),
        |m, g| m.backward(g)
    );
}

#[test]
fn conv_unit_and_input_block() {
    let mut rng = stream(4, Stream::Init);
    check_block4!(
        "conv unit",
        ConvBnRelu::<f64>::new(2, 4, 3, 0.1, 1e-5, &mut rng),
        rand4((2, 2, 8, 8), 5),
        |m, x| m.forward(x),
        |m, g| m.backward(g, true).map(|d| d.unwrap())
    );
    check_block4!(
        "input block",
        InputBlock::<f64>::new(2, 4, 4, 3, 0.1, 1e-5, &mut rng),
        rand4((2, 2, 8, 8), 6),
        |m, x| m.forward(x),
        |m, g| m.backward(g, true).map(|d| d.unwrap())
    );
}

#[test]
fn bias_before_batch_norm_has_no_gradient() {
    let mut rng = stream(4, Stream::Init);
    let mut unit = ConvBnRelu::<f64>::new(2, 4, 3, 0.1, 1e-5, &mut rng);
    let x = rand4((2, 2, 8, 8), 5);
    let y = unit.forward(&x).unwrap();
    unit.backward(&rand4(y.dim(), 6), false).unwrap();
    assert!(unit.conv.bias.grad.iter().all(|g| g.abs() < 1e-12));
    assert!(unit.conv.weight.grad.iter().any(|g| g.abs() > 1e-3));
}

#[test]
fn channel_attention_block() {
    let mut rng = stream(7, Stream::Init);
    check_block4!(
        "channel attention",
        ChannelAttention::<f64>::new(4, 2, &mut rng),
        rand4((2, 4, 8, 8), 8),
        |m, x| m.forward(x),
        |m, g| m.backward(g)
    );
}

#[test]
fn residual_block() {
    let mut rng = stream(9, Stream::Init);
    check_block4!(
        "residual block",
        ResidualBlock::<f64>::new(4, 3, 0.1, 1e-5, &mut rng),
        rand4((2, 4, 8, 8), 10),
        |m, x| m.forward(x),
        |m, g| m.backward(g)
    );
}

#[test]
fn deep_feature_block() {
    let mut rng = stream(11, Stream::Init);
    check_block4!(
        "deep feature block",
        DeepFeatureBlock::<f64>::new(4, 2, 2, 3, 0.1, 1e-5, &mut rng),
        rand4((2, 4, 8, 8), 12),
        |m, x| m.forward(x),
        |m, g| m.backward(g)
    );
}

#[test]
fn spatial_attention_block() {
    let mut rng = stream(13, Stream::Init);
    check_block4!(
        "spatial attention",
        SpatialAttention::<f64>::new(7, &mut rng),
        rand4((2, 4, 8, 8), 14),
        |m, x| m.forward(x),
        |m, g| m.backward(g)
    );
}

#[test]
fn dense_and_head() {
    let mut rng = stream(15, Stream::Init);
    let mut dense = Dense::<f64>::new(5, 3, &mut rng);
    let x = rand2((4, 5), 16);
    let r = rand2((4, 3), 17);
    let reports = check_params(
        &mut dense,
        |m| Ok(dot2(&m.forward(x.view())?, &r)),
        |m| {
            m.forward(x.view())?;
            m.backward(&r).map(|_| ())
        },
        EPS,
        PROBES,
    )
    .unwrap();
    assert_ok("dense", &reports);

    let mut head = RegressionHead::<f64>::new(&[16, 6, 6, 2], &mut rng);
    let x = rand4((3, 4, 2, 2), 18);
    let r = rand2((3, 2), 19);
    let reports = check_params(
        &mut head,
        |m| Ok(dot2(&m.forward(&x)?, &r)),
        |m| {
            m.forward(&x)?;
            m.backward(&r).map(|_| ())
        },
        EPS,
        PROBES,
    )
    .unwrap();
    assert_ok("head", &reports);
    head.forward(&x).unwrap();
    let dx = head.backward(&r).unwrap();
    let rep = check_input(&x, &dx, |xi| Ok(dot2(&head.clone().forward(xi)?, &r)), EPS, 64).unwrap();
    assert_ok("head", &[rep]);
}

fn check_model(cfg: ModelConfig, seed: u64) {
    let mut net = PosNet::<f64>::new(cfg, seed).unwrap();
    let x = rand4((3, 2, 8, 8), seed + 1);
    let r = rand2((3, 2), seed + 2);
    let reports = check_params(
        &mut net,
        |m| Ok(dot2(&m.forward(&x)?, &r)),
        |m| {
            m.forward(&x)?;
            m.backward(&r)
        },
        EPS,
        PROBES,
    )
    .unwrap();
    assert_ok("model", &reports);
    net.forward(&x).unwrap();
    let dx = net.backward_with_input(&r).unwrap();
    let rep = check_input(&x, &dx, |xi| Ok(dot2(&net.clone().forward(xi)?, &r)), EPS, 64).unwrap();
    assert_ok("model", &[rep]);
}

#[test]
fn whole_models() {
    let small = |c: ModelConfig| ModelConfig {
        head_hidden: vec![8, 8],
        ..c.with_width(4).for_input(8, 8)
    };
    check_model(small(ModelConfig::proposed()), 20);
    check_model(small(ModelConfig::baseline_cnn()), 30);
    check_model(small(ModelConfig::baseline_mlp()), 40);
}
