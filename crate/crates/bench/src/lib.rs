//! Shared fixtures for the benchmarks.

use soft_diamond::netcore::{micro_resnet, Model, Tensor};

/// Initialised micro-ResNet and a deterministic batch for it.
pub fn resnet_fixture(batch: usize) -> (Model, Tensor, Tensor) {
    let mut m = Model::new(&[3, 8, 8], &micro_resnet(10, 8, 16)).expect("valid architecture");
    m.init_xavier_uniform(1);
    let n = batch * 3 * 64;
    let x = Tensor::new(vec![batch, 3, 8, 8], (0..n).map(|v| ((v * 37 % 101) as f64 / 50.0) - 1.0).collect())
        .expect("shape matches");
    let labels: Vec<usize> = (0..batch).map(|i| i % 10).collect();
    (m, x, Tensor::one_hot(&labels, 10))
}
