//! Labelled-only baselines on raw pixels: multinomial logistic regression
//! and nearest neighbours trained on a balanced labelled subset.
//!
//! cargo run --release --example baselines -- [labels=100]

use semivae::data::{default_data_dir, load_mnist, mnist_ssl, MNIST_POOL};
use semivae::eval::{error_rate, knn_predict, logreg_predict, logreg_train, LogregConfig};
use semivae::{Result, Rng};

fn main() -> Result<()> {
    let labels: usize = std::env::args()
        .nth(1)
        .map_or(100, |s| s.parse().expect("label count"));
    let mnist = load_mnist(default_data_dir())?;
    let data = mnist_ssl(&mnist, labels, MNIST_POOL, &mut Rng::new(0))?;

    let model = logreg_train(
        &data.labeled_x,
        &data.labeled_y,
        data.n_classes,
        &LogregConfig::default(),
    )?;
    let preds = logreg_predict(&model, &data.test_x)?;
    println!(
        "logistic regression, {labels} labels: test error {:.4}",
        error_rate(&preds, &data.test_y)?
    );

    for k in [1, 3] {
        let preds = knn_predict(&data.labeled_x, &data.labeled_y, &data.test_x, k)?;
        println!(
            "{k}-nearest neighbours, {labels} labels: test error {:.4}",
            error_rate(&preds, &data.test_y)?
        );
    }
    Ok(())
}
