#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lungseg::dataset::{Preprocess, SampleLoader};
use lungseg::imaging::{synth_phantom, BinaryMask, FloatImage};
use lungseg::rng::stream_rng;
use lungseg::tensor::{grad_check, Activation};
use lungseg::unet::{UNet, UNetConfig};
use lungseg::{Graph, Result, Tensor, Var};

pub const GRAD_STEP: f64 = 1e-5;

pub fn uniform(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Values in `±[0.1, 1]`, kept away from the ReLU kink.
pub fn off_zero(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| {
        let m: f64 = rng.random_range(0.1..1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Scalar `sum(y * r)` for a fixed random `r`, so every output element
/// carries a distinct upstream gradient.
fn project(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let shape = g.value(y)?.shape().to_vec();
    g.weighted_sum(y, uniform(&shape, seed, -1.0, 1.0))
}

/// Worst relative error per differentiable operation, and for a depth-1
/// U-Net on an 8×8 input.
pub fn gradient_suite() -> Vec<(&'static str, f64)> {
    let mut out = Vec::new();
    let x = uniform(&[2, 3, 6, 5], 1, -1.0, 1.0);
    let w = uniform(&[4, 3, 3, 3], 2, -0.5, 0.5);
    let b = uniform(&[4], 3, -0.5, 0.5);
    let conv = |stride, pad| {
        grad_check(
            move |g, v| {
                let y = g.conv2d(v[0], v[1], v[2], stride, pad)?;
                project(g, y, 10)
            },
            &[x.clone(), w.clone(), b.clone()],
            GRAD_STEP,
        )
        .unwrap()
    };
    out.push(("conv2d 3x3 pad 1", conv(1, 1)));
    out.push(("conv2d 3x3 stride 2", conv(2, 0)));
    let w1 = uniform(&[2, 3, 1, 1], 4, -0.5, 0.5);
    let b1 = uniform(&[2], 5, -0.5, 0.5);
    out.push((
        "conv2d 1x1",
        grad_check(
            |g, v| {
                let y = g.conv2d(v[0], v[1], v[2], 1, 0)?;
                project(g, y, 11)
            },
            &[x.clone(), w1, b1],
            GRAD_STEP,
        )
        .unwrap(),
    ));
    out.push((
        "max_pool2",
        grad_check(
            |g, v| {
                let y = g.max_pool2(v[0])?;
                project(g, y, 12)
            },
            &[uniform(&[2, 2, 6, 4], 6, -1.0, 1.0)],
            GRAD_STEP,
        )
        .unwrap(),
    ));
    out.push((
        "upsample_nearest2",
        grad_check(
            |g, v| {
                let y = g.upsample2(v[0])?;
                project(g, y, 13)
            },
            &[uniform(&[2, 2, 3, 4], 7, -1.0, 1.0)],
            GRAD_STEP,
        )
        .unwrap(),
    ));
    out.push((
        "concat_channels",
        grad_check(
            |g, v| {
                let y = g.concat_channels(v[0], v[1])?;
                project(g, y, 14)
            },
            &[uniform(&[2, 2, 3, 3], 8, -1.0, 1.0), uniform(&[2, 3, 3, 3], 9, -1.0, 1.0)],
            GRAD_STEP,
        )
        .unwrap(),
    ));
    for (name, act) in [("relu", Activation::Relu), ("sigmoid", Activation::Sigmoid)] {
        out.push((
            name,
            grad_check(
                |g, v| {
                    let y = g.activation(v[0], act)?;
                    project(g, y, 15)
                },
                &[off_zero(&[2, 2, 4, 4], 16)],
                GRAD_STEP,
            )
            .unwrap(),
        ));
    }
    let target = {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        Tensor::from_fn(&[2, 1, 4, 4], |_| if rng.random_bool(0.5) { 1.0 } else { 0.0 })
    };
    out.push((
        "bce_loss",
        grad_check(
            |g, v| g.bce_loss(v[0], target.clone()),
            &[uniform(&[2, 1, 4, 4], 18, 0.05, 0.95)],
            GRAD_STEP,
        )
        .unwrap(),
    ));
    out.push(("unet depth 1 on 8x8", unet_grad_error()));
    out
}

/// Gradient check of BCE through a whole depth-1 U-Net, with respect to every
/// parameter and the input.
pub fn unet_grad_error() -> f64 {
    let cfg = UNetConfig {
        in_channels: 1,
        out_channels: 1,
        depth: 1,
        base_channels: 2,
        input_size: 8,
    };
    let net = UNet::<f64>::build(cfg, 21).unwrap();
    let names: Vec<String> = net.params().names().map(String::from).collect();
    let mut inputs: Vec<Tensor<f64>> = names.iter().map(|n| net.params().get(n).unwrap().clone()).collect();
    // Small random biases so no unit sits exactly at a ReLU kink.
    for (n, t) in names.iter().zip(inputs.iter_mut()) {
        if n.ends_with(".b") {
            *t = uniform(t.shape(), 22, -0.1, 0.1);
        }
    }
    inputs.push(uniform(&[2, 1, 8, 8], 23, 0.0, 1.0));
    let target = {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        Tensor::from_fn(&[2, 1, 8, 8], |_| if rng.random_bool(0.4) { 1.0 } else { 0.0 })
    };
    grad_check(
        |g, v| {
            let vars = names
                .iter()
                .zip(v)
                .map(|(n, &var)| (n.clone(), var))
                .collect();
            let x = v[names.len()];
            let y = net.forward_tracked(g, &vars, x)?;
            g.bce_loss(y, target.clone())
        },
        &inputs,
        GRAD_STEP,
    )
    .unwrap()
}

pub fn phantom_set(n: usize, size: usize, seed: u64) -> Vec<(FloatImage, BinaryMask)> {
    (0..n)
        .map(|i| synth_phantom(&mut stream_rng(seed, i as u64), size).unwrap())
        .collect()
}

pub fn loader(samples: Vec<(FloatImage, BinaryMask)>, size: usize) -> SampleLoader {
    SampleLoader::from_samples(
        samples,
        Preprocess {
            size,
            dilate_iterations: 1,
        },
    )
    .unwrap()
}
