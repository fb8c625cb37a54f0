#![allow(dead_code)]

use std::path::PathBuf;

use semivae::data::{DATA_DIR_ENV, MNIST_TEST_LABELS};
use semivae::models::{M2Model, Observation};
use semivae::nn::Parameters;
use semivae::Rng;

/// MNIST directory: `$SEMIVAE_DATA_DIR`, else `data/mnist` at the workspace root.
pub fn mnist_dir() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}

pub fn require_mnist() -> PathBuf {
    let dir = mnist_dir();
    assert!(
        dir.join(MNIST_TEST_LABELS).exists(),
        "MNIST not found in {} (see README for the download script)",
        dir.display()
    );
    dir
}

/// An M2 model whose every weight and bias is zero.
pub fn zero_m2(input_dim: usize, classes: usize, hidden: usize, d_z: usize) -> M2Model {
    let mut m = M2Model::new(
        &mut Rng::new(0),
        input_dim,
        classes,
        &[hidden],
        d_z,
        Observation::Bernoulli,
    )
    .expect("valid architecture");
    for t in m.tensors_mut() {
        *t = t.map(|_| 0.0);
    }
    m
}
