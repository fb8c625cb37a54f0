use crate::dists::{
    bernoulli_loglik, bernoulli_loglik_grad, gaussian_loglik, gaussian_loglik_grad,
    kl_gaussian_std, reparam_backward, reparam_sample, GaussianPosterior,
};
use crate::error::{Error, Result};
use crate::nn::{self, ForwardTrace, Head, MlpGrads, MlpParams};
use crate::tensor::Tensor;

/// Observation model `p(x | ·)` of a decoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Observation {
    /// Binary pixels; the decoder emits logits.
    Bernoulli,
    /// Real-valued features; the decoder emits `(μ, log σ²)` per feature.
    Gaussian,
}

impl Observation {
    pub fn decoder_head(self) -> Head {
        match self {
            Observation::Bernoulli => Head::BernoulliLogits,
            Observation::Gaussian => Head::GaussianPair,
        }
    }

    pub fn decoder_width(self, data_dim: usize) -> usize {
        match self {
            Observation::Bernoulli => data_dim,
            Observation::Gaussian => 2 * data_dim,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Observation::Bernoulli => "bernoulli",
            Observation::Gaussian => "gaussian",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "bernoulli" => Some(Observation::Bernoulli),
            "gaussian" => Some(Observation::Gaussian),
            _ => None,
        }
    }
}

/// One encode → sample → decode pass over a batch of rows, with the caches
/// its gradient needs.
#[derive(Clone, Debug)]
pub(crate) struct VaePass {
    enc: ForwardTrace,
    dec: ForwardTrace,
    q: GaussianPosterior,
    eps: Tensor,
    x_obs: Tensor,
    obs: Observation,
    /// `log p(x | ·, z)` per row.
    pub recon: Vec<f64>,
    /// `KL[q(z | ·) ‖ N(0, I)]` per row.
    pub kl: Vec<f64>,
}

/// Encodes `enc_input`, draws `z = μ + σ ⊙ eps`, decodes `[dec_prefix, z]`
/// and scores `x_obs` under the decoder.
pub(crate) fn vae_forward(
    encoder: &MlpParams,
    decoder: &MlpParams,
    enc_input: &Tensor,
    dec_prefix: Option<&Tensor>,
    x_obs: &Tensor,
    eps: &Tensor,
    obs: Observation,
) -> Result<VaePass> {
    check_rows(enc_input.rows(), x_obs, eps)?;
    let enc = nn::forward(encoder, enc_input)?;
    vae_from_encoding(enc, decoder, dec_prefix, x_obs, eps, obs)
}

/// [`vae_forward`] with encoder input `[x_i, onehot(y)]` for every row and
/// class, rows ordered `i·classes + y`.
pub(crate) fn vae_forward_class_expanded(
    encoder: &MlpParams,
    decoder: &MlpParams,
    x: &Tensor,
    classes: usize,
    dec_prefix: Option<&Tensor>,
    x_obs: &Tensor,
    eps: &Tensor,
    obs: Observation,
) -> Result<VaePass> {
    check_rows(x.rows() * classes, x_obs, eps)?;
    let enc = nn::forward_class_expanded(encoder, x, classes)?;
    vae_from_encoding(enc, decoder, dec_prefix, x_obs, eps, obs)
}

fn check_rows(rows: usize, x_obs: &Tensor, eps: &Tensor) -> Result<()> {
    if x_obs.rows() != rows || eps.rows() != rows {
        return Err(Error::dim(format!(
            "batch rows disagree: input {}, observations {}, noise {}",
            rows,
            x_obs.rows(),
            eps.rows()
        )));
    }
    Ok(())
}

fn vae_from_encoding(
    enc: ForwardTrace,
    decoder: &MlpParams,
    dec_prefix: Option<&Tensor>,
    x_obs: &Tensor,
    eps: &Tensor,
    obs: Observation,
) -> Result<VaePass> {
    if decoder.output_dim() != obs.decoder_width(x_obs.cols()) {
        return Err(Error::dim(format!(
            "decoder emits {} columns for {}-dimensional {} observations",
            decoder.output_dim(),
            x_obs.cols(),
            obs.tag()
        )));
    }
    let (mu, log_var) = enc.gaussian()?;
    let q = GaussianPosterior::new(mu, log_var)?;
    let z = reparam_sample(&q, eps)?;
    let dec_in = match dec_prefix {
        Some(prefix) => Tensor::concat_cols(prefix, &z)?,
        None => z,
    };
    let dec = nn::forward(decoder, &dec_in)?;
    let recon = match obs {
        Observation::Bernoulli => bernoulli_loglik(x_obs, &dec.output)?,
        Observation::Gaussian => {
            let (m, lv) = dec.gaussian()?;
            gaussian_loglik(x_obs, &GaussianPosterior::new(m, lv)?)?
        }
    };
    let kl = kl_gaussian_std(&q);
    Ok(VaePass {
        enc,
        dec,
        q,
        eps: eps.clone(),
        x_obs: x_obs.clone(),
        obs,
        recon: recon.into_data(),
        kl: kl.into_data(),
    })
}

impl VaePass {
    pub fn rows(&self) -> usize {
        self.recon.len()
    }

    /// Gradients of `Σ_i weights[i] · (kl_i − recon_i)`.
    pub fn backward(
        &self,
        encoder: &MlpParams,
        decoder: &MlpParams,
        weights: &[f64],
    ) -> Result<(MlpGrads, MlpGrads)> {
        if weights.len() != self.rows() {
            return Err(Error::dim("one weight per row required"));
        }
        let scale_rows = |t: Tensor, sign: f64| -> Tensor {
            let c = t.cols();
            let mut data = t.into_data();
            for (i, row) in data.chunks_mut(c.max(1)).enumerate() {
                let w = sign * weights[i];
                row.iter_mut().for_each(|v| *v *= w);
            }
            Tensor::from_parts(vec![weights.len(), c], data)
        };

        let grad_dec_out = match self.obs {
            Observation::Bernoulli => {
                scale_rows(bernoulli_loglik_grad(&self.x_obs, &self.dec.output)?, -1.0)
            }
            Observation::Gaussian => {
                let (m, lv) = self.dec.gaussian()?;
                let (_, dmu, dlv) =
                    gaussian_loglik_grad(&self.x_obs, &GaussianPosterior::new(m, lv)?)?;
                scale_rows(Tensor::concat_cols(&dmu, &dlv)?, -1.0)
            }
        };
        let (g_dec, g_dec_in) = nn::backward(decoder, &self.dec, &grad_dec_out)?;
        let d_z = self.q.mu.cols();
        let (_, dz) = g_dec_in.split_cols(g_dec_in.cols() - d_z)?;
        let (dmu, dlv) = reparam_backward(&self.q, &self.eps, &dz)?;

        let (kl_mu, kl_lv) = crate::dists::kl_gaussian_std_grad(&self.q);
        let dmu = dmu.zip_map(&scale_rows(kl_mu, 1.0), |a, b| a + b)?;
        let dlv = dlv.zip_map(&scale_rows(kl_lv, 1.0), |a, b| a + b)?;
        let g_enc = nn::backward_params(encoder, &self.enc, &Tensor::concat_cols(&dmu, &dlv)?)?;
        Ok((g_enc, g_dec))
    }
}
