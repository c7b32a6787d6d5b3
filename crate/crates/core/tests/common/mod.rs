#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use soft_diamond::netcore::{LayerSpec, Mode, Model, Tensor};

pub const FD_STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;
/// Denominator floor so that gradients near zero are compared absolutely.
pub const REL_FLOOR: f64 = 1e-5;

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

pub fn random_tensor(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
}

pub fn random_targets(batch: usize, classes: usize, r: &mut ChaCha8Rng) -> Tensor {
    let labels: Vec<usize> = (0..batch).map(|_| r.random_range(0..classes)).collect();
    Tensor::one_hot(&labels, classes)
}

fn loss(model: &Model, x: &Tensor, t: &Tensor) -> f64 {
    let f = model.forward(x, Mode::Train, None).unwrap();
    model.log_likelihood(&f, t).unwrap()
}

/// Worst relative error between analytic and centred-difference gradients
/// over every parameter entry and every input entry.
pub fn worst_gradient_error(specs: &[LayerSpec], input: &[usize], batch: usize, seed: u64) -> f64 {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut model = Model::new(input, specs).unwrap();
    model.init_xavier_uniform(seed);
    // Perturb biases and batch-norm affine terms away from their defaults.
    for p in model.params_mut() {
        for v in p.value.data_mut() {
            *v += r.random_range(-0.2..0.2);
        }
    }
    let mut shape = vec![batch];
    shape.extend_from_slice(input);
    let x = random_tensor(&shape, &mut r);
    let classes = model.output_shape()[0];
    let t = random_targets(batch, classes, &mut r);

    let fwd = model.forward(&x, Mode::Train, None).unwrap();
    let g = model.backward(&fwd, &t).unwrap();

    let mut worst = 0.0f64;
    for pi in 0..model.params().len() {
        for k in 0..model.params()[pi].value.len() {
            let orig = model.params()[pi].value.data()[k];
            model.params_mut()[pi].value.data_mut()[k] = orig + FD_STEP;
            let up = loss(&model, &x, &t);
            model.params_mut()[pi].value.data_mut()[k] = orig - FD_STEP;
            let down = loss(&model, &x, &t);
            model.params_mut()[pi].value.data_mut()[k] = orig;
            let fd = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(g.params[pi].data()[k], fd));
        }
    }
    let mut xp = x.clone();
    for k in 0..x.len() {
        let orig = x.data()[k];
        xp.data_mut()[k] = orig + FD_STEP;
        let up = loss(&model, &xp, &t);
        xp.data_mut()[k] = orig - FD_STEP;
        let down = loss(&model, &xp, &t);
        xp.data_mut()[k] = orig;
        let fd = (up - down) / (2.0 * FD_STEP);
        worst = worst.max(rel_err(g.input.data()[k], fd));
    }
    worst
}

/// One small network per layer kind, each ending in softmax.
pub fn layer_kind_cases() -> Vec<(&'static str, Vec<usize>, Vec<LayerSpec>)> {
    use LayerSpec::*;
    vec![
        ("dense", vec![6], vec![Dense { units: 5 }, Dense { units: 3 }, Softmax]),
        (
            "conv2d",
            vec![2, 5, 5],
            vec![
                Conv2d { out_channels: 3, kernel: 3, stride: 1, padding: 1 },
                Conv2d { out_channels: 2, kernel: 3, stride: 2, padding: 0 },
                Flatten,
                Dense { units: 3 },
                Softmax,
            ],
        ),
        (
            "batchnorm",
            vec![2, 4, 4],
            vec![
                LayerSpec::conv3x3(3),
                LayerSpec::batch_norm(),
                Flatten,
                Dense { units: 4 },
                LayerSpec::batch_norm(),
                Dense { units: 3 },
                Softmax,
            ],
        ),
        ("relu", vec![6], vec![Dense { units: 8 }, Relu, Dense { units: 3 }, Softmax]),
        (
            "maxpool",
            vec![2, 5, 4],
            vec![MaxPool { size: 2 }, Flatten, Dense { units: 3 }, Softmax],
        ),
        (
            "residual_add",
            vec![2, 4, 4],
            vec![
                LayerSpec::conv3x3(2),
                Relu,
                LayerSpec::conv3x3(2),
                ResidualAdd { from: 1 },
                ResidualAdd { from: 0 },
                Flatten,
                Dense { units: 3 },
                Softmax,
            ],
        ),
        ("flatten", vec![2, 3, 3], vec![Flatten, Dense { units: 3 }, Softmax]),
        ("softmax", vec![4], vec![Softmax]),
    ]
}
