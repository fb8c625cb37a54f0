//! Semi-supervised M2 on MNIST: a few balanced labels plus an unlabelled
//! pool, reporting test error after every epoch.
//!
//! cargo run --release --example semi_supervised_m2 -- [labels=100] [unlabeled=10000] [epochs=20]

use semivae::data::{default_data_dir, load_mnist, mnist_ssl};
use semivae::eval::error_rate;
use semivae::models::{m2_classify, M2Model, Observation};
use semivae::train::{
    history_header, history_line, train_m2_with, M2Arch, OptimizerKind, TrainConfig,
};
use semivae::{Result, Rng, Tensor};

fn test_error(m: &M2Model, x: &Tensor, y: &[usize]) -> Result<f64> {
    error_rate(&m2_classify(m, x)?.argmax(), y)
}

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let labels: usize = args.next().map_or(100, |s| s.parse().expect("label count"));
    let unlabeled: usize = args
        .next()
        .map_or(10_000, |s| s.parse().expect("unlabelled count"));
    let epochs: usize = args.next().map_or(20, |s| s.parse().expect("epoch count"));

    let mnist = load_mnist(default_data_dir())?;
    let data = mnist_ssl(&mnist, labels, labels + unlabeled, &mut Rng::new(0))?;
    let arch = M2Arch {
        hidden: vec![200],
        d_z: 20,
        obs: Observation::Bernoulli,
    };
    let cfg = TrainConfig {
        optimizer: OptimizerKind::AdaGrad,
        learning_rate: 0.01,
        epochs,
        ..TrainConfig::default()
    };

    println!("{}\ttest_error", history_header());
    let trained = train_m2_with(&data, &arch, &cfg, |r, m| {
        let err = test_error(m, &data.test_x, &data.test_y).unwrap_or(f64::NAN);
        println!("{}\t{:.4}", history_line(r), err);
    })?;
    println!(
        "final test error with {labels} labels: {:.4}",
        test_error(&trained.model, &data.test_x, &data.test_y)?
    );
    Ok(())
}
