//! Trains the latent-feature model M1 without labels, then fits a
//! classifier to the posterior means of the labelled subset.
//!
//! cargo run --release --example latent_features_m1 -- [images=5000] [epochs=10]

use semivae::data::{default_data_dir, load_mnist, mnist_ssl};
use semivae::eval::{error_rate, knn_predict, logreg_predict, logreg_train, LogregConfig};
use semivae::models::m1_features;
use semivae::train::{history_header, history_line, train_m1_with, M1Arch, TrainConfig};
use semivae::{Result, Rng};

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let images: usize = args
        .next()
        .map_or(5000, |s| s.parse().expect("image count"));
    let epochs: usize = args.next().map_or(10, |s| s.parse().expect("epoch count"));

    let mnist = load_mnist(default_data_dir())?;
    let data = mnist_ssl(&mnist, 100, images, &mut Rng::new(0))?;
    let arch = M1Arch {
        hidden: vec![200],
        d_z: 10,
    };
    let cfg = TrainConfig {
        learning_rate: 0.01,
        epochs,
        ..TrainConfig::default()
    };

    println!("{}", history_header());
    let trained = train_m1_with(&data.all_train_x(), &arch, &cfg, |r, _| {
        println!("{}", history_line(r))
    })?;

    let train_f = m1_features(&trained.model, &data.labeled_x)?;
    let test_f = m1_features(&trained.model, &data.test_x)?;
    let model = logreg_train(
        &train_f,
        &data.labeled_y,
        data.n_classes,
        &LogregConfig::default(),
    )?;
    let preds = logreg_predict(&model, &test_f)?;
    println!(
        "logistic regression on M1 features: test error {:.4}",
        error_rate(&preds, &data.test_y)?
    );
    let preds = knn_predict(&train_f, &data.labeled_y, &test_f, 1)?;
    println!(
        "1-nearest neighbour on M1 features: test error {:.4}",
        error_rate(&preds, &data.test_y)?
    );
    Ok(())
}
