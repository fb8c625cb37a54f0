use super::vae::{vae_forward, Observation, VaePass};
use super::BoundBreakdown;
use crate::error::{Error, Result};
use crate::nn::{self, init_params, Head, MlpGrads, MlpParams, Parameters};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Latent-feature model: `q(z|x)` Gaussian encoder, `p(x|z)` Bernoulli decoder.
#[derive(Clone, Debug, PartialEq)]
pub struct M1Model {
    pub encoder: MlpParams,
    pub decoder: MlpParams,
    pub d_z: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct M1Grads {
    pub encoder: MlpGrads,
    pub decoder: MlpGrads,
}

impl M1Model {
    /// Encoder `D → hidden… → 2·d_z`, decoder `d_z → hidden (reversed)… → D`.
    pub fn new(rng: &mut Rng, input_dim: usize, hidden: &[usize], d_z: usize) -> Result<Self> {
        let mut enc = vec![input_dim];
        enc.extend_from_slice(hidden);
        enc.push(2 * d_z);
        let mut dec = vec![d_z];
        dec.extend(hidden.iter().rev());
        dec.push(input_dim);
        let m = M1Model {
            encoder: init_params(rng, &enc, Head::GaussianPair)?,
            decoder: init_params(rng, &dec, Head::BernoulliLogits)?,
            d_z,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.decoder.validate()?;
        if self.encoder.head != Head::GaussianPair || self.encoder.output_dim() != 2 * self.d_z {
            return Err(Error::dim("M1 encoder must emit a 2·d_z Gaussian pair"));
        }
        if self.decoder.input_dim() != self.d_z
            || self.decoder.output_dim() != self.encoder.input_dim()
            || self.decoder.head != Head::BernoulliLogits
        {
            return Err(Error::dim(
                "M1 decoder must map d_z back to the input width",
            ));
        }
        Ok(())
    }

    pub fn zero_grads(&self) -> M1Grads {
        M1Grads {
            encoder: self.encoder.zero_grads(),
            decoder: self.decoder.zero_grads(),
        }
    }
}

impl Parameters for M1Model {
    fn tensors(&self) -> Vec<&Tensor> {
        let mut v = self.encoder.tensors();
        v.extend(self.decoder.tensors());
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.encoder.tensors_mut();
        v.extend(self.decoder.tensors_mut());
        v
    }
}

impl Parameters for M1Grads {
    fn tensors(&self) -> Vec<&Tensor> {
        let mut v = self.encoder.tensors();
        v.extend(self.decoder.tensors());
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.encoder.tensors_mut();
        v.extend(self.decoder.tensors_mut());
        v
    }
}

/// Caches from [`m1_bound`].
#[derive(Clone, Debug)]
pub struct M1Pass {
    vae: VaePass,
}

impl M1Pass {
    /// Gradient of the batch-mean objective `𝒥`.
    pub fn backward(&self, m: &M1Model) -> Result<M1Grads> {
        let n = self.vae.rows();
        let w = vec![1.0 / n as f64; n];
        let (encoder, decoder) = self.vae.backward(&m.encoder, &m.decoder, &w)?;
        Ok(M1Grads { encoder, decoder })
    }

    /// Per-example `𝒥(x)`.
    pub fn per_example(&self) -> Vec<f64> {
        self.vae
            .kl
            .iter()
            .zip(&self.vae.recon)
            .map(|(k, r)| k - r)
            .collect()
    }
}

/// Batch-mean `𝒥(x) = KL[q(z|x) ‖ p(z)] − E_q[log p(x|z)]`, with the
/// expectation estimated from one reparameterized draw per row (`eps`) and
/// the KL in closed form.
pub fn m1_bound(m: &M1Model, x_binary: &Tensor, eps: &Tensor) -> Result<(BoundBreakdown, M1Pass)> {
    if eps.cols() != m.d_z {
        return Err(Error::dim(format!(
            "noise has {} columns for d_z {}",
            eps.cols(),
            m.d_z
        )));
    }
    let vae = vae_forward(
        &m.encoder,
        &m.decoder,
        x_binary,
        None,
        x_binary,
        eps,
        Observation::Bernoulli,
    )?;
    let n = vae.rows().max(1) as f64;
    let recon = vae.recon.iter().sum::<f64>() / n;
    let kl = vae.kl.iter().sum::<f64>() / n;
    let b = BoundBreakdown::from_terms(recon, kl, 0.0, 0.0, 0.0);
    if !b.total.is_finite() {
        return Err(Error::NonFinite("M1 bound".into()));
    }
    Ok((b, M1Pass { vae }))
}

/// Posterior means `μ_φ(x)` as features.
pub fn m1_features(m: &M1Model, x: &Tensor) -> Result<Tensor> {
    let t = nn::forward(&m.encoder, x)?;
    Ok(t.gaussian()?.0)
}

/// One posterior draw `μ + σ ⊙ ε` per row as features.
pub fn m1_features_sampled(m: &M1Model, x: &Tensor, rng: &mut Rng) -> Result<Tensor> {
    let t = nn::forward(&m.encoder, x)?;
    let (mu, lv) = t.gaussian()?;
    let q = crate::dists::GaussianPosterior::new(mu, lv)?;
    let eps = rng.gauss_draw(q.mu.shape());
    crate::dists::reparam_sample(&q, &eps)
}

#[cfg(test)]
mod tests {
    use super::super::testutil::*;
    use super::*;
    use crate::nn::grad_check;

    #[test]
    fn zero_model_fixture() {
        let m = M1Model {
            encoder: MlpParams::zeros(&[4, 3, 4], Head::GaussianPair).unwrap(),
            decoder: MlpParams::zeros(&[2, 3, 4], Head::BernoulliLogits).unwrap(),
            d_z: 2,
        };
        let mut rng = Rng::new(1);
        let x = binary(&mut rng, 5, 4);
        let eps = rng.gauss_draw(&[5, 2]);
        let (b, _) = m1_bound(&m, &x, &eps).unwrap();
        assert!((b.elbo() - 4.0 * 0.5f64.ln()).abs() < 1e-12);
        assert!((b.elbo() + 2.772589).abs() < 1e-6);
        assert_eq!(b.kl_term, 0.0);
        assert!((b.total - b.recombined()).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = Rng::new(2);
        let m = random_m1(&mut rng, 6, 5, 2, 0.5);
        let x = binary(&mut rng, 3, 6);
        let eps = rng.gauss_draw(&[3, 2]);
        let (_, pass) = m1_bound(&m, &x, &eps).unwrap();
        let g = pass.backward(&m).unwrap();
        let err = grad_check(
            |p: &M1Model| Ok(m1_bound(p, &x, &eps)?.0.total),
            &m,
            &g,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn kl_never_negative() {
        let mut rng = Rng::new(3);
        for _ in 0..20 {
            let m = random_m1(&mut rng, 5, 4, 3, 1.0);
            let x = binary(&mut rng, 4, 5);
            let eps = rng.gauss_draw(&[4, 3]);
            assert!(m1_bound(&m, &x, &eps).unwrap().0.kl_term >= 0.0);
        }
    }

    #[test]
    fn features_are_posterior_means() {
        let mut rng = Rng::new(4);
        let m = random_m1(&mut rng, 5, 4, 3, 0.5);
        let x = rng.gauss_draw(&[2, 5]);
        let f1 = m1_features(&m, &x).unwrap();
        assert_eq!(f1, m1_features(&m, &x).unwrap());
        assert_eq!(f1.shape(), &[2, 3]);
        let zero = M1Model {
            encoder: MlpParams::zeros(&[5, 4, 6], Head::GaussianPair).unwrap(),
            decoder: MlpParams::zeros(&[3, 4, 5], Head::BernoulliLogits).unwrap(),
            d_z: 3,
        };
        assert!(m1_features(&zero, &x)
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn published_architecture_feature_width() {
        let m = M1Model::new(&mut Rng::new(0), 784, &[600, 600], 50).unwrap();
        let x = Tensor::zeros(&[2, 784]);
        assert_eq!(m1_features(&m, &x).unwrap().shape(), &[2, 50]);
    }

    #[test]
    fn rejects_mismatched_noise() {
        let mut rng = Rng::new(5);
        let m = random_m1(&mut rng, 4, 3, 2, 0.1);
        let x = binary(&mut rng, 2, 4);
        assert!(matches!(
            m1_bound(&m, &x, &Tensor::zeros(&[2, 3])),
            Err(Error::Dimension(_))
        ));
    }
}
