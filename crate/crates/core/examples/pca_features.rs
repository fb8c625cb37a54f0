//! Principal-component projections of MNIST: variance captured,
//! reconstruction error, and a labelled-only classifier on the projection.
//!
//! cargo run --release --example pca_features -- [images=5000]

use semivae::data::{default_data_dir, load_mnist, mnist_ssl, pca_apply, pca_fit, pca_reconstruct};
use semivae::eval::{error_rate, logreg_predict, logreg_train, LogregConfig};
use semivae::{Result, Rng};

fn main() -> Result<()> {
    let images: usize = std::env::args()
        .nth(1)
        .map_or(5000, |s| s.parse().expect("image count"));
    let mnist = load_mnist(default_data_dir())?;
    let data = mnist_ssl(&mnist, 100, images, &mut Rng::new(0))?;
    let x = data.all_train_x();

    let full = pca_fit(&x, 100)?;
    // total variance: the trace of the covariance
    let n = x.rows() as f64;
    let total: f64 = (0..x.cols())
        .map(|j| {
            let col: Vec<f64> = (0..x.rows()).map(|i| x.get(i, j)).collect();
            let m = col.iter().sum::<f64>() / n;
            col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n
        })
        .sum();
    for k in [10, 20, 50, 100] {
        let t = pca_fit(&x, k)?;
        let proj = pca_apply(&t, &data.test_x)?;
        let back = pca_reconstruct(&t, &proj)?;
        let mse = back
            .data()
            .iter()
            .zip(data.test_x.data())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            / data.test_x.rows() as f64;
        let captured: f64 = full.eigenvalues[..k].iter().sum::<f64>() / total;
        let model = logreg_train(
            &pca_apply(&t, &data.labeled_x)?,
            &data.labeled_y,
            data.n_classes,
            &LogregConfig::default(),
        )?;
        let preds = logreg_predict(&model, &proj)?;
        println!(
            "k = {k:3}: variance captured {captured:.3}, test reconstruction error {mse:.3}, logreg test error {:.4}",
            error_rate(&preds, &data.test_y)?
        );
    }
    Ok(())
}
