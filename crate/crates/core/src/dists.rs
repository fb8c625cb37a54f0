//! Closed-form densities, divergences and entropies, in nats.

use crate::error::{Error, Result};
use crate::tensor::{log_sigmoid_scalar, sigmoid_scalar, softplus_scalar, Tensor};

/// Floor applied to probabilities inside logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

const LN_2PI: f64 = 1.8378770664093453;

/// Diagonal Gaussian `N(μ, diag(exp(log_var)))`, one row per example.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPosterior {
    pub mu: Tensor,
    pub log_var: Tensor,
}

impl GaussianPosterior {
    pub fn new(mu: Tensor, log_var: Tensor) -> Result<Self> {
        mu.same_shape(&log_var)?;
        mu.ensure_finite("Gaussian mean")?;
        log_var.ensure_finite("Gaussian log-variance")?;
        Ok(GaussianPosterior { mu, log_var })
    }

    pub fn std(&self) -> Tensor {
        self.log_var.map(|lv| (0.5 * lv).exp())
    }
}

/// Categorical distributions, one row per example.
#[derive(Clone, Debug, PartialEq)]
pub struct CategoricalPosterior {
    pub probs: Tensor,
}

impl CategoricalPosterior {
    /// Validates that rows are positive and sum to one within 1e-9.
    pub fn new(probs: Tensor) -> Result<Self> {
        for i in 0..probs.rows() {
            let row = probs.row(i);
            let s: f64 = row.iter().sum();
            if row.iter().any(|&p| !(p > 0.0)) || (s - 1.0).abs() > 1e-9 {
                return Err(Error::Data(format!("row {} is not a distribution", i)));
            }
        }
        Ok(CategoricalPosterior { probs })
    }

    pub fn uniform(classes: usize) -> Self {
        CategoricalPosterior {
            probs: Tensor::full(&[1, classes], 1.0 / classes as f64),
        }
    }

    pub fn classes(&self) -> usize {
        self.probs.cols()
    }

    /// `ln max(π, PROB_FLOOR)` elementwise.
    pub fn log_probs(&self) -> Tensor {
        self.probs.map(|p| p.max(PROB_FLOOR).ln())
    }

    /// Per-row argmax; ties go to the lowest index.
    pub fn argmax(&self) -> Vec<usize> {
        (0..self.probs.rows())
            .map(|i| argmax_lowest(self.probs.row(i)))
            .collect()
    }
}

pub(crate) fn argmax_lowest(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// `KL[q ‖ N(0, I)]` per row: `−½ Σ (1 + log σ² − μ² − σ²)`.
pub fn kl_gaussian_std(q: &GaussianPosterior) -> Tensor {
    let d = q.mu.cols();
    let mut out = Vec::with_capacity(q.mu.rows());
    for i in 0..q.mu.rows() {
        let (mu, lv) = (q.mu.row(i), q.log_var.row(i));
        let mut s = 0.0;
        for j in 0..d {
            s += 1.0 + lv[j] - mu[j] * mu[j] - lv[j].exp();
        }
        out.push((-0.5 * s).max(0.0));
    }
    Tensor::from_parts(vec![q.mu.rows()], out)
}

/// Gradients of the summed KL with respect to `(μ, log σ²)`.
pub fn kl_gaussian_std_grad(q: &GaussianPosterior) -> (Tensor, Tensor) {
    (q.mu.clone(), q.log_var.map(|lv| 0.5 * (lv.exp() - 1.0)))
}

fn check_binary(x: &Tensor) -> Result<()> {
    if x.data().iter().all(|&v| v == 0.0 || v == 1.0) {
        Ok(())
    } else {
        Err(Error::Data("Bernoulli observations must be 0 or 1".into()))
    }
}

/// `Σ_d [x log p + (1−x) log(1−p)]` per row with `p = σ(logit)`, evaluated as
/// `x·log σ(l) + (1−x)·log σ(−l)`.
pub fn bernoulli_loglik(x: &Tensor, logits: &Tensor) -> Result<Tensor> {
    x.same_shape(logits)?;
    check_binary(x)?;
    let mut out = Vec::with_capacity(x.rows());
    for i in 0..x.rows() {
        let mut s = 0.0;
        for (&xv, &l) in x.row(i).iter().zip(logits.row(i)) {
            s += if xv == 1.0 {
                log_sigmoid_scalar(l)
            } else {
                -softplus_scalar(l)
            };
        }
        out.push(s);
    }
    Ok(Tensor::from_parts(vec![x.rows()], out))
}

/// Gradient of the summed Bernoulli log-likelihood with respect to the logits.
pub fn bernoulli_loglik_grad(x: &Tensor, logits: &Tensor) -> Result<Tensor> {
    x.zip_map(logits, |xv, l| xv - sigmoid_scalar(l))
}

/// `log N(z | μ, σ²)` per row.
pub fn gaussian_loglik(z: &Tensor, q: &GaussianPosterior) -> Result<Tensor> {
    z.same_shape(&q.mu)?;
    let mut out = Vec::with_capacity(z.rows());
    for i in 0..z.rows() {
        let mut s = 0.0;
        for ((&zv, &mu), &lv) in z.row(i).iter().zip(q.mu.row(i)).zip(q.log_var.row(i)) {
            let r = zv - mu;
            s += -0.5 * LN_2PI - 0.5 * lv - r * r / (2.0 * lv.exp());
        }
        out.push(s);
    }
    Ok(Tensor::from_parts(vec![z.rows()], out))
}

/// Gradients of the summed Gaussian log-likelihood with respect to
/// `(z, μ, log σ²)`.
pub fn gaussian_loglik_grad(z: &Tensor, q: &GaussianPosterior) -> Result<(Tensor, Tensor, Tensor)> {
    z.same_shape(&q.mu)?;
    let dz = z
        .zip_map(&q.mu, |zv, mu| zv - mu)?
        .zip_map(&q.log_var, |r, lv| -r / lv.exp())?;
    let dmu = dz.scale(-1.0);
    let dlv = z
        .zip_map(&q.mu, |zv, mu| (zv - mu) * (zv - mu))?
        .zip_map(&q.log_var, |r2, lv| -0.5 + 0.5 * r2 / lv.exp())?;
    Ok((dz, dmu, dlv))
}

/// `−Σ π log π` per row, with `0·log 0 = 0` and probabilities floored inside
/// the logarithm.
pub fn categorical_entropy(q: &CategoricalPosterior) -> Tensor {
    let out = (0..q.probs.rows())
        .map(|i| {
            -q.probs
                .row(i)
                .iter()
                .map(|&p| {
                    if p > 0.0 {
                        p * p.max(PROB_FLOOR).ln()
                    } else {
                        0.0
                    }
                })
                .sum::<f64>()
        })
        .collect();
    Tensor::from_parts(vec![q.probs.rows()], out)
}

/// `z = μ + σ ⊙ ε`.
pub fn reparam_sample(q: &GaussianPosterior, eps: &Tensor) -> Result<Tensor> {
    eps.same_shape(&q.mu)?;
    let sigma = q.std();
    let z =
        q.mu.zip_map(&sigma.zip_map(eps, |s, e| s * e)?, |m, se| m + se)?;
    z.ensure_finite("reparameterized sample")?;
    Ok(z)
}

/// Pulls `∂/∂z` back to `(∂/∂μ, ∂/∂log σ²)` through [`reparam_sample`].
pub fn reparam_backward(
    q: &GaussianPosterior,
    eps: &Tensor,
    dz: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let dlv = dz
        .zip_map(eps, |g, e| g * e)?
        .zip_map(&q.log_var, |ge, lv| 0.5 * ge * (0.5 * lv).exp())?;
    Ok((dz.clone(), dlv))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn gp(mu: Vec<f64>, lv: Vec<f64>) -> GaussianPosterior {
        let d = mu.len();
        GaussianPosterior::new(
            Tensor::matrix(1, d, mu).unwrap(),
            Tensor::matrix(1, d, lv).unwrap(),
        )
        .unwrap()
    }

    // Monte-Carlo estimate of KL[q‖N(0,I)] via the sample-wise route, with
    // its standard error.
    fn mc_kl(q: &GaussianPosterior, n: usize, rng: &mut Rng) -> (f64, f64) {
        let d = q.mu.cols();
        let prior = gp(vec![0.0; d], vec![0.0; d]);
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let eps = rng.gauss_draw(&[1, d]);
            let z = reparam_sample(q, &eps).unwrap();
            let v = gaussian_loglik(&z, q).unwrap().data()[0]
                - gaussian_loglik(&z, &prior).unwrap().data()[0];
            s += v;
            s2 += v * v;
        }
        let mean = s / n as f64;
        let var = s2 / n as f64 - mean * mean;
        (mean, (var / n as f64).sqrt())
    }

    #[test]
    fn kl_fixtures() {
        assert_eq!(
            kl_gaussian_std(&gp(vec![0.0; 3], vec![0.0; 3])).data(),
            &[0.0]
        );
        assert!((kl_gaussian_std(&gp(vec![1.0], vec![0.0])).data()[0] - 0.5).abs() < 1e-15);
        let e = std::f64::consts::E;
        assert!(
            (kl_gaussian_std(&gp(vec![0.0], vec![1.0])).data()[0] - 0.5 * (e - 2.0)).abs() < 1e-15
        );
        assert!((0.5 * (e - 2.0) - 0.359141).abs() < 1e-6);
    }

    #[test]
    fn kl_fixtures_agree_with_monte_carlo() {
        let mut rng = Rng::new(12);
        for q in [gp(vec![1.0], vec![0.0]), gp(vec![0.0], vec![1.0])] {
            let analytic = kl_gaussian_std(&q).data()[0];
            let (mc, se) = mc_kl(&q, 1_000_000, &mut rng);
            assert!(
                (mc - analytic).abs() < 3.0 * se,
                "{analytic} vs {mc} ± {se}"
            );
        }
    }

    #[test]
    fn kl_non_negative_fuzz() {
        let mut rng = Rng::new(77);
        for _ in 0..10_000 {
            let d = 1 + rng.below(5);
            let mu = rng.gauss_draw(&[1, d]).scale(3.0);
            let lv = rng.gauss_draw(&[1, d]).scale(3.0);
            let q = GaussianPosterior::new(mu, lv).unwrap();
            assert!(kl_gaussian_std(&q).data()[0] >= 0.0);
        }
    }

    #[test]
    fn bernoulli_fixtures() {
        let one = Tensor::matrix(1, 1, vec![1.0]).unwrap();
        let zero_logit = Tensor::matrix(1, 1, vec![0.0]).unwrap();
        let v = bernoulli_loglik(&one, &zero_logit).unwrap().data()[0];
        assert!((v - 0.5f64.ln()).abs() < 1e-15);

        let x = Tensor::matrix(1, 4, vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let v = bernoulli_loglik(&x, &Tensor::zeros(&[1, 4]))
            .unwrap()
            .data()[0];
        assert!((v - 4.0 * 0.5f64.ln()).abs() < 1e-14);
        assert!((v + 2.772589).abs() < 1e-6);

        // log σ(50) = −log1p(e^−50) ≈ −(e^−50 − e^−100/2)
        let big = Tensor::matrix(1, 1, vec![50.0]).unwrap();
        let v = bernoulli_loglik(&one, &big).unwrap().data()[0];
        let e = (-50.0f64).exp();
        assert!(v < 0.0);
        assert!((v + (e - e * e / 2.0)).abs() < 1e-15 * e);
    }

    #[test]
    fn bernoulli_rejects_non_binary() {
        let x = Tensor::matrix(1, 2, vec![0.5, 1.0]).unwrap();
        assert!(matches!(
            bernoulli_loglik(&x, &Tensor::zeros(&[1, 2])),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn bernoulli_is_never_positive() {
        let mut rng = Rng::new(3);
        for _ in 0..200 {
            let logits = rng.gauss_draw(&[2, 5]).scale(20.0);
            let x = rng
                .gauss_draw(&[2, 5])
                .map(|v| if v > 0.0 { 1.0 } else { 0.0 });
            assert!(bernoulli_loglik(&x, &logits)
                .unwrap()
                .data()
                .iter()
                .all(|&v| v <= 0.0));
        }
    }

    #[test]
    fn gaussian_fixtures() {
        let v = gaussian_loglik(&Tensor::zeros(&[1, 1]), &gp(vec![0.0], vec![0.0])).unwrap();
        assert!((v.data()[0] + 0.918939).abs() < 1e-6);

        let q = gp(vec![0.3, -1.0], vec![0.7, -0.2]);
        let v = gaussian_loglik(&q.mu, &q).unwrap().data()[0];
        let expected = -0.5 * (2.0 * LN_2PI + 0.7 - 0.2);
        assert!((v - expected).abs() < 1e-14);

        let q = gp(vec![0.0], vec![4.0f64.ln()]);
        let v = gaussian_loglik(&Tensor::matrix(1, 1, vec![2.0]).unwrap(), &q)
            .unwrap()
            .data()[0];
        assert!((v + 2.112086).abs() < 1e-6);
    }

    #[test]
    fn gaussian_density_integrates_to_one() {
        // trapezoid rule over ±12σ for N(0, 4)
        let q = gp(vec![0.0], vec![4.0f64.ln()]);
        let (a, b, n) = (-24.0, 24.0, 48_000);
        let h = (b - a) / n as f64;
        let mut s = 0.0;
        for k in 0..=n {
            let z = Tensor::matrix(1, 1, vec![a + k as f64 * h]).unwrap();
            let w = if k == 0 || k == n { 0.5 } else { 1.0 };
            s += w * gaussian_loglik(&z, &q).unwrap().data()[0].exp();
        }
        assert!((s * h - 1.0).abs() < 1e-9);
    }

    #[test]
    fn entropy_fixtures() {
        let u = CategoricalPosterior::uniform(10);
        assert!((categorical_entropy(&u).data()[0] - 10f64.ln()).abs() < 1e-14);
        let one_hot = CategoricalPosterior {
            probs: Tensor::matrix(1, 3, vec![0.0, 1.0, 0.0]).unwrap(),
        };
        assert_eq!(categorical_entropy(&one_hot).data()[0], 0.0);
        let half =
            CategoricalPosterior::new(Tensor::matrix(1, 2, vec![0.5, 0.5]).unwrap()).unwrap();
        assert!((categorical_entropy(&half).data()[0] - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn log_probs_renormalize() {
        let p = CategoricalPosterior::new(
            Tensor::matrix(2, 3, vec![0.2, 0.3, 0.5, 0.9, 0.05, 0.05]).unwrap(),
        )
        .unwrap();
        let lp = p.log_probs();
        for i in 0..2 {
            assert!((lp.row(i).iter().map(|v| v.exp()).sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(CategoricalPosterior::new(Tensor::matrix(1, 2, vec![0.5, 0.6]).unwrap()).is_err());
    }

    #[test]
    fn reparam_fixtures() {
        let q = gp(vec![3.0, -1.0], vec![2.0 * 2f64.ln(), 0.4]);
        assert_eq!(reparam_sample(&q, &Tensor::zeros(&[1, 2])).unwrap(), q.mu);
        let q = gp(vec![3.0], vec![2.0 * 2f64.ln()]);
        let z = reparam_sample(&q, &Tensor::matrix(1, 1, vec![1.0]).unwrap()).unwrap();
        assert!((z.data()[0] - 5.0).abs() < 1e-15);
        assert!(reparam_sample(&q, &Tensor::zeros(&[1, 2])).is_err());
    }

    #[test]
    fn reparam_moments() {
        let q = gp(vec![3.0], vec![2.0 * 2f64.ln()]);
        let mut rng = Rng::new(5);
        let n = 1_000_000;
        let eps = rng.gauss_draw(&[n, 1]);
        let q_rep = GaussianPosterior::new(q.mu.repeat_rows(n), q.log_var.repeat_rows(n)).unwrap();
        let z = reparam_sample(&q_rep, &eps).unwrap();
        let mean = z.sum() / n as f64;
        let var = z.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se_mean = (4.0 / n as f64).sqrt();
        // var of the sample variance for a Gaussian: 2σ⁴/(n−1)
        let se_var = (2.0 * 16.0 / (n - 1) as f64).sqrt();
        assert!((mean - 3.0).abs() < 3.0 * se_mean, "{mean}");
        assert!((var - 4.0).abs() < 3.0 * se_var, "{var}");
    }

    #[test]
    fn reparam_gradient_matches_finite_differences() {
        // loss = Σ c ⊙ z²  through z = μ + σ ε
        let mut rng = Rng::new(9);
        let mu = rng.gauss_draw(&[2, 3]);
        let lv = rng.gauss_draw(&[2, 3]).scale(0.5);
        let eps = rng.gauss_draw(&[2, 3]);
        let c = rng.gauss_draw(&[2, 3]);
        let loss = |mu: &Tensor, lv: &Tensor| {
            let q = GaussianPosterior::new(mu.clone(), lv.clone()).unwrap();
            let z = reparam_sample(&q, &eps).unwrap();
            z.zip_map(&c, |z, c| c * z * z).unwrap().sum()
        };
        let q = GaussianPosterior::new(mu.clone(), lv.clone()).unwrap();
        let z = reparam_sample(&q, &eps).unwrap();
        let dz = z.zip_map(&c, |z, c| 2.0 * c * z).unwrap();
        let (dmu, dlv) = reparam_backward(&q, &eps, &dz).unwrap();
        let h = 1e-5;
        for k in 0..6 {
            let mut p = mu.clone();
            p.data_mut()[k] += h;
            let mut m = mu.clone();
            m.data_mut()[k] -= h;
            let fd = (loss(&p, &lv) - loss(&m, &lv)) / (2.0 * h);
            assert!((fd - dmu.data()[k]).abs() / fd.abs().max(1e-5) < 1e-6);
            let mut p = lv.clone();
            p.data_mut()[k] += h;
            let mut m = lv.clone();
            m.data_mut()[k] -= h;
            let fd = (loss(&mu, &p) - loss(&mu, &m)) / (2.0 * h);
            assert!((fd - dlv.data()[k]).abs() / fd.abs().max(1e-5) < 1e-6);
        }
    }

    #[test]
    fn likelihood_gradients_match_finite_differences() {
        let mut rng = Rng::new(21);
        let z = rng.gauss_draw(&[2, 3]);
        let mu = rng.gauss_draw(&[2, 3]);
        let lv = rng.gauss_draw(&[2, 3]).scale(0.3);
        let q = GaussianPosterior::new(mu.clone(), lv.clone()).unwrap();
        let (dz, dmu, dlv) = gaussian_loglik_grad(&z, &q).unwrap();
        let f = |z: &Tensor, mu: &Tensor, lv: &Tensor| {
            gaussian_loglik(z, &GaussianPosterior::new(mu.clone(), lv.clone()).unwrap())
                .unwrap()
                .sum()
        };
        let h = 1e-5;
        for k in 0..6 {
            for (which, g) in [(0, &dz), (1, &dmu), (2, &dlv)] {
                let mut args = [z.clone(), mu.clone(), lv.clone()];
                args[which].data_mut()[k] += h;
                let p = f(&args[0], &args[1], &args[2]);
                args[which].data_mut()[k] -= 2.0 * h;
                let m = f(&args[0], &args[1], &args[2]);
                let fd = (p - m) / (2.0 * h);
                assert!((fd - g.data()[k]).abs() / fd.abs().max(1e-5) < 1e-6);
            }
        }

        let (dmu, dlv) = kl_gaussian_std_grad(&q);
        let kl = |mu: &Tensor, lv: &Tensor| {
            kl_gaussian_std(&GaussianPosterior::new(mu.clone(), lv.clone()).unwrap()).sum()
        };
        for k in 0..6 {
            let mut p = mu.clone();
            p.data_mut()[k] += h;
            let mut m = mu.clone();
            m.data_mut()[k] -= h;
            assert!(((kl(&p, &lv) - kl(&m, &lv)) / (2.0 * h) - dmu.data()[k]).abs() < 1e-8);
            let mut p = lv.clone();
            p.data_mut()[k] += h;
            let mut m = lv.clone();
            m.data_mut()[k] -= h;
            assert!(((kl(&mu, &p) - kl(&mu, &m)) / (2.0 * h) - dlv.data()[k]).abs() < 1e-8);
        }
    }
}
