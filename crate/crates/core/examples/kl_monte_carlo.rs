//! Compares the closed-form KL divergence to the standard normal prior with
//! a Monte-Carlo estimate built from reparameterized samples.
//!
//! cargo run --release --example kl_monte_carlo

use semivae::dists::{gaussian_loglik, kl_gaussian_std, reparam_sample, GaussianPosterior};
use semivae::{Result, Rng, Tensor};

const SAMPLES: usize = 100_000;

fn main() -> Result<()> {
    let mut rng = Rng::new(3);
    let d = 3;
    for trial in 0..5 {
        let mu = rng.gauss_draw(&[1, d]);
        let log_var = rng.gauss_draw(&[1, d]).scale(0.7);
        let q = GaussianPosterior::new(mu.clone(), log_var.clone())?;
        let exact = kl_gaussian_std(&q).data()[0];

        // log q(z) − log p(z) at z ~ q, batched over samples
        let qs = GaussianPosterior::new(mu.repeat_rows(SAMPLES), log_var.repeat_rows(SAMPLES))?;
        let z = reparam_sample(&qs, &rng.gauss_draw(&[SAMPLES, d]))?;
        let prior =
            GaussianPosterior::new(Tensor::zeros(&[SAMPLES, d]), Tensor::zeros(&[SAMPLES, d]))?;
        let log_q = gaussian_loglik(&z, &qs)?;
        let log_p = gaussian_loglik(&z, &prior)?;
        let terms: Vec<f64> = log_q
            .data()
            .iter()
            .zip(log_p.data())
            .map(|(a, b)| a - b)
            .collect();
        let mean = terms.iter().sum::<f64>() / SAMPLES as f64;
        let var = terms.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (SAMPLES - 1) as f64;
        let se = (var / SAMPLES as f64).sqrt();
        println!(
            "posterior {trial}: closed form {exact:.5}  Monte Carlo {mean:.5} ± {se:.5}  ({:.2} s.e.)",
            (mean - exact).abs() / se
        );
    }
    Ok(())
}
