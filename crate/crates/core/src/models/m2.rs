use super::vae::{vae_forward, vae_forward_class_expanded, Observation, VaePass};
use super::BoundBreakdown;
use crate::dists::{argmax_lowest, categorical_entropy, CategoricalPosterior, PROB_FLOOR};
use crate::error::{Error, Result};
use crate::nn::{self, add_into, init_params, ForwardTrace, Head, MlpGrads, MlpParams, Parameters};
use crate::rng::Rng;
use crate::tensor::{sigmoid, Tensor};

/// Generative semi-supervised model: classifier `q(y|x)`, encoder
/// `q(z|x,y)` on `[x, one-hot y]`, decoder `p(x|y,z)` on `[one-hot y, z]`.
#[derive(Clone, Debug, PartialEq)]
pub struct M2Model {
    pub classifier: MlpParams,
    pub encoder: MlpParams,
    pub decoder: MlpParams,
    /// Single-row class prior `p(y)`; uniform unless configured otherwise.
    pub class_prior: CategoricalPosterior,
    pub n_classes: usize,
    pub d_z: usize,
    pub obs: Observation,
}

#[derive(Clone, Debug, PartialEq)]
pub struct M2Grads {
    pub classifier: MlpGrads,
    pub encoder: MlpGrads,
    pub decoder: MlpGrads,
}

impl M2Model {
    pub fn new(
        rng: &mut Rng,
        input_dim: usize,
        n_classes: usize,
        hidden: &[usize],
        d_z: usize,
        obs: Observation,
    ) -> Result<Self> {
        if n_classes < 2 {
            return Err(Error::Config(format!(
                "need at least 2 classes, got {}",
                n_classes
            )));
        }
        let mut cls = vec![input_dim];
        cls.extend_from_slice(hidden);
        cls.push(n_classes);
        let mut enc = vec![input_dim + n_classes];
        enc.extend_from_slice(hidden);
        enc.push(2 * d_z);
        let mut dec = vec![n_classes + d_z];
        dec.extend(hidden.iter().rev());
        dec.push(obs.decoder_width(input_dim));
        let m = M2Model {
            classifier: init_params(rng, &cls, Head::Softmax)?,
            encoder: init_params(rng, &enc, Head::GaussianPair)?,
            decoder: init_params(rng, &dec, obs.decoder_head())?,
            class_prior: CategoricalPosterior::uniform(n_classes),
            n_classes,
            d_z,
            obs,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn input_dim(&self) -> usize {
        self.classifier.input_dim()
    }

    pub fn validate(&self) -> Result<()> {
        for net in [&self.classifier, &self.encoder, &self.decoder] {
            net.validate()?;
        }
        let (d, l) = (self.input_dim(), self.n_classes);
        let ok = self.classifier.head == Head::Softmax
            && self.classifier.output_dim() == l
            && self.encoder.head == Head::GaussianPair
            && self.encoder.input_dim() == d + l
            && self.encoder.output_dim() == 2 * self.d_z
            && self.decoder.head == self.obs.decoder_head()
            && self.decoder.input_dim() == l + self.d_z
            && self.decoder.output_dim() == self.obs.decoder_width(d)
            && self.class_prior.classes() == l;
        if ok {
            Ok(())
        } else {
            Err(Error::dim("M2 networks do not fit together"))
        }
    }

    pub fn zero_grads(&self) -> M2Grads {
        M2Grads {
            classifier: self.classifier.zero_grads(),
            encoder: self.encoder.zero_grads(),
            decoder: self.decoder.zero_grads(),
        }
    }

    fn log_prior(&self) -> Vec<f64> {
        self.class_prior.log_probs().into_data()
    }

    fn check_labels(&self, y: &[usize]) -> Result<()> {
        match y.iter().find(|&&v| v >= self.n_classes) {
            Some(&label) => Err(Error::LabelOutOfRange {
                label,
                classes: self.n_classes,
            }),
            None => Ok(()),
        }
    }
}

impl Parameters for M2Model {
    fn tensors(&self) -> Vec<&Tensor> {
        let mut v = self.classifier.tensors();
        v.extend(self.encoder.tensors());
        v.extend(self.decoder.tensors());
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.classifier.tensors_mut();
        v.extend(self.encoder.tensors_mut());
        v.extend(self.decoder.tensors_mut());
        v
    }
}

impl Parameters for M2Grads {
    fn tensors(&self) -> Vec<&Tensor> {
        let mut v = self.classifier.tensors();
        v.extend(self.encoder.tensors());
        v.extend(self.decoder.tensors());
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.classifier.tensors_mut();
        v.extend(self.encoder.tensors_mut());
        v.extend(self.decoder.tensors_mut());
        v
    }
}

pub fn one_hot(labels: &[usize], classes: usize) -> Result<Tensor> {
    let mut data = vec![0.0; labels.len() * classes];
    for (i, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::LabelOutOfRange { label: y, classes });
        }
        data[i * classes + y] = 1.0;
    }
    Ok(Tensor::from_parts(vec![labels.len(), classes], data))
}

/// Caches of the labelled bound `ℒ(x, y)`.
#[derive(Clone, Debug)]
pub struct M2LabeledPass {
    vae: VaePass,
    log_prior: Vec<f64>,
}

impl M2LabeledPass {
    /// Per-example `ℒ(x, y)`.
    pub fn per_example(&self) -> Vec<f64> {
        (0..self.vae.rows())
            .map(|i| self.vae.kl[i] - self.vae.recon[i] - self.log_prior[i])
            .collect()
    }

    /// Gradient of `Σ_i weights[i] · ℒ(x_i, y_i)`.
    pub fn backward_weighted(&self, m: &M2Model, weights: &[f64]) -> Result<M2Grads> {
        let (encoder, decoder) = self.vae.backward(&m.encoder, &m.decoder, weights)?;
        Ok(M2Grads {
            classifier: m.classifier.zero_grads(),
            encoder,
            decoder,
        })
    }

    /// Gradient of the batch-mean `ℒ`.
    pub fn backward(&self, m: &M2Model) -> Result<M2Grads> {
        let n = self.vae.rows();
        self.backward_weighted(m, &vec![1.0 / n as f64; n])
    }

    fn sums(&self) -> (f64, f64, f64) {
        (
            self.vae.recon.iter().sum(),
            self.vae.kl.iter().sum(),
            self.log_prior.iter().sum(),
        )
    }
}

/// Batch-mean `ℒ(x, y) = KL[q(z|x,y) ‖ p(z)] − E_q[log p(x|y,z)] − log p(y)`,
/// one reparameterized draw per row, KL in closed form.
pub fn m2_labeled_bound(
    m: &M2Model,
    x: &Tensor,
    y: &[usize],
    eps: &Tensor,
) -> Result<(BoundBreakdown, M2LabeledPass)> {
    if y.len() != x.rows() {
        return Err(Error::dim(format!(
            "{} labels for {} rows",
            y.len(),
            x.rows()
        )));
    }
    if eps.cols() != m.d_z {
        return Err(Error::dim(format!(
            "noise has {} columns for d_z {}",
            eps.cols(),
            m.d_z
        )));
    }
    m.check_labels(y)?;
    let oh = one_hot(y, m.n_classes)?;
    let vae = vae_forward(
        &m.encoder,
        &m.decoder,
        &Tensor::concat_cols(x, &oh)?,
        Some(&oh),
        x,
        eps,
        m.obs,
    )?;
    let lp = m.log_prior();
    let pass = M2LabeledPass {
        log_prior: y.iter().map(|&c| lp[c]).collect(),
        vae,
    };
    let n = y.len().max(1) as f64;
    let (r, k, p) = pass.sums();
    let b = BoundBreakdown::from_terms(r / n, k / n, p / n, 0.0, 0.0);
    if !b.total.is_finite() {
        return Err(Error::NonFinite("labelled bound".into()));
    }
    Ok((b, pass))
}

#[derive(Clone, Debug)]
enum UnlabeledMode {
    /// `vae` holds `rows · L` rows, row `i·L + y` scoring class `y`.
    Enumerated,
    /// `vae` holds one row per example, scoring the sampled class.
    Sampled(Vec<usize>),
}

/// Caches of the unlabelled bound `𝒰(x)`.
#[derive(Clone, Debug)]
pub struct M2UnlabeledPass {
    vae: VaePass,
    cls: ForwardTrace,
    log_prior: Vec<f64>,
    mode: UnlabeledMode,
    per_example: Vec<f64>,
    breakdown_sums: BoundBreakdown,
}

impl M2UnlabeledPass {
    /// Per-example `𝒰(x)` (an unbiased estimate of it in sampled mode).
    pub fn per_example(&self) -> &[f64] {
        &self.per_example
    }

    /// `q(y|x)` for the batch.
    pub fn class_probs(&self) -> &Tensor {
        &self.cls.output
    }

    fn labeled_value(&self, row: usize, class: usize) -> f64 {
        self.vae.kl[row] - self.vae.recon[row] - self.log_prior[class]
    }

    /// Gradient of `Σ_i weights[i] · 𝒰(x_i)`.
    ///
    /// In sampled mode the classifier receives the score-function estimate
    /// `ℒ(x, ŷ) ∇ log q(ŷ|x)` in place of the exact mixture gradient.
    pub fn backward_weighted(&self, m: &M2Model, weights: &[f64]) -> Result<M2Grads> {
        let probs = &self.cls.output;
        let (b, l) = (probs.rows(), probs.cols());
        if weights.len() != b {
            return Err(Error::dim("one weight per example required"));
        }
        let mut g_probs = vec![0.0; b * l];
        let vae_weights: Vec<f64>;
        match &self.mode {
            UnlabeledMode::Enumerated => {
                let mut vw = vec![0.0; b * l];
                for i in 0..b {
                    for y in 0..l {
                        let p = probs.get(i, y);
                        vw[i * l + y] = weights[i] * p;
                        g_probs[i * l + y] =
                            weights[i] * (self.labeled_value(i * l + y, y) + neg_entropy_grad(p));
                    }
                }
                vae_weights = vw;
            }
            UnlabeledMode::Sampled(ys) => {
                for i in 0..b {
                    for y in 0..l {
                        g_probs[i * l + y] = weights[i] * neg_entropy_grad(probs.get(i, y));
                    }
                    let (y, p) = (ys[i], probs.get(i, ys[i]));
                    if p > PROB_FLOOR {
                        g_probs[i * l + y] += weights[i] * self.labeled_value(i, y) / p;
                    }
                }
                vae_weights = weights.to_vec();
            }
        }
        let (encoder, decoder) = self.vae.backward(&m.encoder, &m.decoder, &vae_weights)?;
        let classifier = nn::backward_params(
            &m.classifier,
            &self.cls,
            &Tensor::from_parts(vec![b, l], g_probs),
        )?;
        Ok(M2Grads {
            classifier,
            encoder,
            decoder,
        })
    }

    /// Gradient of the batch-mean `𝒰`.
    pub fn backward(&self, m: &M2Model) -> Result<M2Grads> {
        let n = self.per_example.len();
        self.backward_weighted(m, &vec![1.0 / n as f64; n])
    }
}

// d/dπ of π·ln max(π, floor)
fn neg_entropy_grad(p: f64) -> f64 {
    if p > PROB_FLOOR {
        p.ln() + 1.0
    } else {
        PROB_FLOOR.ln()
    }
}

/// Batch-mean `𝒰(x) = Σ_y q(y|x) ℒ(x, y) − H(q(y|x))`, enumerating every
/// class. `eps_per_class` has one row per (example, class) pair, row
/// `i·L + y`.
pub fn m2_unlabeled_bound(
    m: &M2Model,
    x: &Tensor,
    eps_per_class: &Tensor,
) -> Result<(BoundBreakdown, M2UnlabeledPass)> {
    let (b, l) = (x.rows(), m.n_classes);
    if eps_per_class.rows() != b * l || eps_per_class.cols() != m.d_z {
        return Err(Error::dim(format!(
            "unlabelled noise must be {}x{}, got {:?}",
            b * l,
            m.d_z,
            eps_per_class.shape()
        )));
    }
    let cls = nn::forward(&m.classifier, x)?;
    let labels: Vec<usize> = (0..b).flat_map(|_| 0..l).collect();
    let oh = one_hot(&labels, l)?;
    let xr = x.repeat_rows(l);
    let vae = vae_forward_class_expanded(
        &m.encoder,
        &m.decoder,
        x,
        l,
        Some(&oh),
        &xr,
        eps_per_class,
        m.obs,
    )?;
    finish_unlabeled(m, cls, vae, UnlabeledMode::Enumerated)
}

/// Single-class variant following the sampled-label listing of the M2
/// training loop: `sampled[i]` is a draw from `q(y|x_i)` and `eps` has one
/// row per example.
pub fn m2_unlabeled_bound_sampled(
    m: &M2Model,
    x: &Tensor,
    sampled: &[usize],
    eps: &Tensor,
) -> Result<(BoundBreakdown, M2UnlabeledPass)> {
    if sampled.len() != x.rows() || eps.rows() != x.rows() || eps.cols() != m.d_z {
        return Err(Error::dim(
            "sampled labels and noise must have one row per example",
        ));
    }
    m.check_labels(sampled)?;
    let cls = nn::forward(&m.classifier, x)?;
    let oh = one_hot(sampled, m.n_classes)?;
    let vae = vae_forward(
        &m.encoder,
        &m.decoder,
        &Tensor::concat_cols(x, &oh)?,
        Some(&oh),
        x,
        eps,
        m.obs,
    )?;
    finish_unlabeled(m, cls, vae, UnlabeledMode::Sampled(sampled.to_vec()))
}

fn finish_unlabeled(
    m: &M2Model,
    cls: ForwardTrace,
    vae: VaePass,
    mode: UnlabeledMode,
) -> Result<(BoundBreakdown, M2UnlabeledPass)> {
    let probs = &cls.output;
    let (b, l) = (probs.rows(), probs.cols());
    let log_prior = m.log_prior();
    let entropy = categorical_entropy(&CategoricalPosterior {
        probs: probs.clone(),
    });
    let mut sums = BoundBreakdown::default();
    let mut per_example = Vec::with_capacity(b);
    for i in 0..b {
        let (mut r, mut k, mut p) = (0.0, 0.0, 0.0);
        match &mode {
            UnlabeledMode::Enumerated => {
                for y in 0..l {
                    let w = probs.get(i, y);
                    r += w * vae.recon[i * l + y];
                    k += w * vae.kl[i * l + y];
                    p += w * log_prior[y];
                }
            }
            UnlabeledMode::Sampled(ys) => {
                r = vae.recon[i];
                k = vae.kl[i];
                p = log_prior[ys[i]];
            }
        }
        let h = entropy.data()[i];
        let row = BoundBreakdown::from_terms(r, k, p, h, 0.0);
        per_example.push(row.total);
        sums.add(&row);
    }
    let mean = sums.scaled(1.0 / b.max(1) as f64);
    if !mean.total.is_finite() {
        return Err(Error::NonFinite("unlabelled bound".into()));
    }
    Ok((
        mean,
        M2UnlabeledPass {
            vae,
            cls,
            log_prior,
            mode,
            per_example,
            breakdown_sums: sums,
        },
    ))
}

/// A labelled minibatch and its noise (one row per example).
#[derive(Clone, Copy, Debug)]
pub struct LabeledBatch<'a> {
    pub x: &'a Tensor,
    pub y: &'a [usize],
    pub eps: &'a Tensor,
}

/// An unlabelled minibatch. Without `sampled` labels, `eps` has one row per
/// (example, class) pair; with them, one row per example.
#[derive(Clone, Copy, Debug)]
pub struct UnlabeledBatch<'a> {
    pub x: &'a Tensor,
    pub eps: &'a Tensor,
    pub sampled: Option<&'a [usize]>,
}

/// Multipliers turning minibatch sums into dataset-scale sums, usually
/// `N_labelled / M_labelled` and `N_unlabelled / M_unlabelled`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveScale {
    pub labeled: f64,
    pub unlabeled: f64,
}

impl ObjectiveScale {
    pub const UNIT: ObjectiveScale = ObjectiveScale {
        labeled: 1.0,
        unlabeled: 1.0,
    };
}

/// Caches of [`m2_objective`].
#[derive(Clone, Debug)]
pub struct M2ObjectivePass {
    labeled: Option<(M2LabeledPass, ForwardTrace, Vec<usize>)>,
    unlabeled: Option<M2UnlabeledPass>,
    alpha: f64,
    scale: ObjectiveScale,
    cross_entropy: f64,
}

impl M2ObjectivePass {
    /// Mean `−log q(y|x)` over the labelled batch (before the α weight).
    pub fn labeled_cross_entropy(&self) -> f64 {
        self.cross_entropy
    }

    /// Gradient of the objective returned by [`m2_objective`].
    pub fn backward(&self, m: &M2Model) -> Result<M2Grads> {
        let mut grads = m.zero_grads();
        if let Some((pass, cls, y)) = &self.labeled {
            let n = y.len();
            add_into(
                &mut grads,
                &pass.backward_weighted(m, &vec![self.scale.labeled; n])?,
            )?;
            if self.alpha != 0.0 {
                let probs = &cls.output;
                let l = probs.cols();
                let mut g = vec![0.0; n * l];
                for (i, &c) in y.iter().enumerate() {
                    let p = probs.get(i, c);
                    if p > PROB_FLOOR {
                        g[i * l + c] = -self.alpha / (n as f64 * p);
                    }
                }
                let gc =
                    nn::backward_params(&m.classifier, cls, &Tensor::from_parts(vec![n, l], g))?;
                grads.classifier.accumulate(&gc)?;
            }
        }
        if let Some(pass) = &self.unlabeled {
            let n = pass.per_example.len();
            add_into(
                &mut grads,
                &pass.backward_weighted(m, &vec![self.scale.unlabeled; n])?,
            )?;
        }
        Ok(grads)
    }
}

/// `𝒥^α = s_l Σ_labelled ℒ + s_u Σ_unlabelled 𝒰 + α · mean_labelled(−log q(y|x))`.
///
/// The breakdown fields hold the correspondingly scaled sums, so that
/// `total` still recombines from them.
pub fn m2_objective(
    m: &M2Model,
    labeled: Option<LabeledBatch<'_>>,
    unlabeled: Option<UnlabeledBatch<'_>>,
    alpha: f64,
    scale: ObjectiveScale,
) -> Result<(BoundBreakdown, M2ObjectivePass)> {
    if !(alpha >= 0.0) {
        return Err(Error::Config(format!(
            "alpha must be non-negative, got {}",
            alpha
        )));
    }
    let labeled = labeled.filter(|b| b.x.rows() > 0);
    let unlabeled = unlabeled.filter(|b| b.x.rows() > 0);
    if labeled.is_none() && unlabeled.is_none() {
        return Err(Error::Data("both minibatches are empty".into()));
    }
    let mut total = BoundBreakdown::default();
    let mut cross_entropy = 0.0;
    let labeled_pass = match labeled {
        Some(batch) => {
            let (_, pass) = m2_labeled_bound(m, batch.x, batch.y, batch.eps)?;
            let (r, k, p) = pass.sums();
            total.add(&BoundBreakdown::from_terms(r, k, p, 0.0, 0.0).scaled(scale.labeled));
            let cls = nn::forward(&m.classifier, batch.x)?;
            let n = batch.y.len() as f64;
            cross_entropy = batch
                .y
                .iter()
                .enumerate()
                .map(|(i, &c)| -cls.output.get(i, c).max(PROB_FLOOR).ln())
                .sum::<f64>()
                / n;
            let class = BoundBreakdown::from_terms(0.0, 0.0, 0.0, 0.0, alpha * cross_entropy);
            total.add(&class);
            Some((pass, cls, batch.y.to_vec()))
        }
        None => None,
    };
    let unlabeled_pass = match unlabeled {
        Some(batch) => {
            let (_, pass) = match batch.sampled {
                None => m2_unlabeled_bound(m, batch.x, batch.eps)?,
                Some(ys) => m2_unlabeled_bound_sampled(m, batch.x, ys, batch.eps)?,
            };
            total.add(&pass.breakdown_sums.scaled(scale.unlabeled));
            Some(pass)
        }
        None => None,
    };
    if !total.total.is_finite() {
        return Err(Error::NonFinite("M2 objective".into()));
    }
    Ok((
        total,
        M2ObjectivePass {
            labeled: labeled_pass,
            unlabeled: unlabeled_pass,
            alpha,
            scale,
            cross_entropy,
        },
    ))
}

/// `q(y|x)`; predictions are the per-row argmax, ties to the lowest class.
pub fn m2_classify(m: &M2Model, x: &Tensor) -> Result<CategoricalPosterior> {
    Ok(CategoricalPosterior {
        probs: nn::forward(&m.classifier, x)?.output,
    })
}

// Decoder mean for each (label, z) row.
fn decode(m: &M2Model, ys: &[usize], z: &Tensor) -> Result<Tensor> {
    m.check_labels(ys)?;
    if z.cols() != m.d_z || z.rows() != ys.len() {
        return Err(Error::dim(format!(
            "latent codes {:?} for {} labels and d_z {}",
            z.shape(),
            ys.len(),
            m.d_z
        )));
    }
    let input = Tensor::concat_cols(&one_hot(ys, m.n_classes)?, z)?;
    let t = nn::forward(&m.decoder, &input)?;
    match m.obs {
        Observation::Bernoulli => Ok(sigmoid(&t.output)),
        Observation::Gaussian => Ok(t.gaussian()?.0),
    }
}

/// Decodes a single `(y, z)`: pixel probabilities for Bernoulli models, the
/// feature mean for Gaussian ones.
pub fn generate(m: &M2Model, y: usize, z: &Tensor) -> Result<Tensor> {
    if z.len() != m.d_z {
        return Err(Error::dim(format!(
            "z has {} entries for d_z {}",
            z.len(),
            m.d_z
        )));
    }
    let z = z.clone().reshape(vec![1, m.d_z])?;
    let out = decode(m, &[y], &z)?;
    let d = out.cols();
    out.reshape(vec![d])
}

/// Decodes every row of `z` under class `y`.
pub fn generate_batch(m: &M2Model, y: usize, z: &Tensor) -> Result<Tensor> {
    decode(m, &vec![y; z.rows()], z)
}

/// Class-swapped reconstructions. For each row of `x`: `ŷ = argmax q(y|x)`,
/// `z = μ_φ(x, ŷ)`, then one decoding per class. Output row `i·L + y`.
pub fn analogy(m: &M2Model, x: &Tensor) -> Result<Tensor> {
    let probs = m2_classify(m, x)?;
    let y_hat: Vec<usize> = (0..x.rows())
        .map(|i| argmax_lowest(probs.probs.row(i)))
        .collect();
    let enc_in = Tensor::concat_cols(x, &one_hot(&y_hat, m.n_classes)?)?;
    let (mu, _) = nn::forward(&m.encoder, &enc_in)?.gaussian()?;
    let l = m.n_classes;
    let ys: Vec<usize> = (0..x.rows()).flat_map(|_| 0..l).collect();
    decode(m, &ys, &mu.repeat_rows(l))
}

#[cfg(test)]
mod tests {
    use super::super::testutil::*;
    use super::*;
    use crate::nn::grad_check;

    fn zero_m2(d: usize, l: usize, dz: usize) -> M2Model {
        M2Model {
            classifier: MlpParams::zeros(&[d, 3, l], Head::Softmax).unwrap(),
            encoder: MlpParams::zeros(&[d + l, 3, 2 * dz], Head::GaussianPair).unwrap(),
            decoder: MlpParams::zeros(&[l + dz, 3, d], Head::BernoulliLogits).unwrap(),
            class_prior: CategoricalPosterior::uniform(l),
            n_classes: l,
            d_z: dz,
            obs: Observation::Bernoulli,
        }
    }

    const LABELED_FIXTURE: f64 = -5.075174;

    #[test]
    fn zero_model_labeled_fixture() {
        let m = zero_m2(4, 10, 2);
        let mut rng = Rng::new(1);
        let x = binary(&mut rng, 3, 4);
        let eps = rng.gauss_draw(&[3, 2]);
        let (b, _) = m2_labeled_bound(&m, &x, &[0, 4, 9], &eps).unwrap();
        let exact = 4.0 * 0.5f64.ln() + 0.1f64.ln();
        assert!((b.elbo() - exact).abs() < 1e-12);
        assert!((b.elbo() - LABELED_FIXTURE).abs() < 1e-6);
        // label does not matter under zero parameters
        let (b2, _) = m2_labeled_bound(&m, &x, &[7, 7, 7], &eps).unwrap();
        assert_eq!(b.total, b2.total);
    }

    #[test]
    fn labeled_bound_sign_structure() {
        let mut rng = Rng::new(2);
        for _ in 0..10 {
            let m = random_m2(&mut rng, 5, 3, 4, 2, 1.0);
            let x = binary(&mut rng, 4, 5);
            let eps = rng.gauss_draw(&[4, 2]);
            let (b, _) = m2_labeled_bound(&m, &x, &[0, 1, 2, 0], &eps).unwrap();
            assert!(b.elbo() <= b.prior_y_term);
        }
    }

    #[test]
    fn label_out_of_range() {
        let m = zero_m2(4, 3, 2);
        let x = Tensor::zeros(&[1, 4]);
        assert!(matches!(
            m2_labeled_bound(&m, &x, &[3], &Tensor::zeros(&[1, 2])),
            Err(Error::LabelOutOfRange {
                label: 3,
                classes: 3
            })
        ));
        assert!(generate(&m, 5, &Tensor::zeros(&[2])).is_err());
    }

    #[test]
    fn zero_model_unlabeled_fixture() {
        let m = zero_m2(4, 10, 2);
        let mut rng = Rng::new(3);
        let x = binary(&mut rng, 2, 4);
        let eps = rng.gauss_draw(&[20, 2]);
        let (b, _) = m2_unlabeled_bound(&m, &x, &eps).unwrap();
        assert!((b.elbo() - 4.0 * 0.5f64.ln()).abs() < 1e-12);
        assert!((b.elbo() + 2.772589).abs() < 1e-6);
    }

    #[test]
    fn unlabeled_decomposes_into_labeled_bounds_and_entropy() {
        let mut rng = Rng::new(4);
        for _ in 0..20 {
            let (d, l, dz) = (5, 3, 2);
            let m = random_m2(&mut rng, d, l, 4, dz, 0.8);
            let x = binary(&mut rng, 2, d);
            let eps = rng.gauss_draw(&[2 * l, dz]);
            let (_, pass) = m2_unlabeled_bound(&m, &x, &eps).unwrap();
            let probs = m2_classify(&m, &x).unwrap();
            let h = categorical_entropy(&probs);
            for i in 0..2 {
                let mut assembled = -h.data()[i];
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for y in 0..l {
                    let e = rng.gauss_draw(&[1, dz]);
                    let _ = e;
                    let row_eps = Tensor::matrix(1, dz, eps.row(i * l + y).to_vec()).unwrap();
                    let xi = x.select_rows(&[i]);
                    let (_, lp) = m2_labeled_bound(&m, &xi, &[y], &row_eps).unwrap();
                    let ly = lp.per_example()[0];
                    assembled += probs.probs.get(i, y) * ly;
                    lo = lo.min(-ly);
                    hi = hi.max(-ly);
                }
                let direct = pass.per_example()[i];
                assert!((direct - assembled).abs() < 1e-9);
                assert!(-direct >= lo - 1e-12 && -direct <= hi + (l as f64).ln() + 1e-12);
            }
        }
    }

    #[test]
    fn one_hot_classifier_collapses_mixture() {
        let mut rng = Rng::new(5);
        let (d, l, dz) = (4, 3, 2);
        let mut m = random_m2(&mut rng, d, l, 3, dz, 0.5);
        // force q(y=2|x) = 1: zero weights, huge bias on class 2
        let last = m.classifier.layers.len() - 1;
        for layer in &mut m.classifier.layers {
            layer.w = Tensor::zeros(layer.w.shape());
        }
        m.classifier.layers[last].b = Tensor::vector(vec![-1e4, -1e4, 0.0]).unwrap();
        let x = binary(&mut rng, 1, d);
        let eps = rng.gauss_draw(&[l, dz]);
        let (u, _) = m2_unlabeled_bound(&m, &x, &eps).unwrap();
        let row = Tensor::matrix(1, dz, eps.row(2).to_vec()).unwrap();
        let (lab, _) = m2_labeled_bound(&m, &x, &[2], &row).unwrap();
        assert_eq!(u.total, lab.total);
    }

    #[test]
    fn objective_fixtures() {
        let m = zero_m2(4, 10, 2);
        let mut rng = Rng::new(6);
        let xl = binary(&mut rng, 1, 4);
        let xu = binary(&mut rng, 1, 4);
        let el = rng.gauss_draw(&[1, 2]);
        let eu = rng.gauss_draw(&[10, 2]);
        let lab = LabeledBatch {
            x: &xl,
            y: &[3],
            eps: &el,
        };
        let unl = UnlabeledBatch {
            x: &xu,
            eps: &eu,
            sampled: None,
        };
        let (b, _) = m2_objective(&m, Some(lab), Some(unl), 1.0, ObjectiveScale::UNIT).unwrap();
        let exact = -8.0 * 0.5f64.ln() + 2.0 * 10f64.ln();
        assert!((b.total - exact).abs() < 1e-12, "{:?}", b);
        // printed fixture value is the sum of three six-decimal roundings
        assert!((b.total - 10.150349).abs() < 2e-6);
        assert!((b.total - b.recombined()).abs() < 1e-9);

        let (b0, _) = m2_objective(&m, Some(lab), Some(unl), 0.0, ObjectiveScale::UNIT).unwrap();
        let (l_only, _) = m2_labeled_bound(&m, &xl, &[3], &el).unwrap();
        let (u_only, _) = m2_unlabeled_bound(&m, &xu, &eu).unwrap();
        assert_eq!(b0.total, l_only.total + u_only.total);

        let scale = ObjectiveScale {
            labeled: 7.0,
            unlabeled: 3.0,
        };
        let (b_l, _) = m2_objective(&m, Some(lab), None, 0.0, scale).unwrap();
        assert!((b_l.total - 7.0 * l_only.total).abs() < 1e-12);

        assert!(matches!(
            m2_objective(&m, None, None, 0.0, ObjectiveScale::UNIT),
            Err(Error::Data(_))
        ));
        assert!(m2_objective(&m, Some(lab), None, -1.0, ObjectiveScale::UNIT).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = Rng::new(7);
        let (d, l, dz) = (5, 3, 2);
        let m = random_m2(&mut rng, d, l, 4, dz, 0.6);
        let xl = binary(&mut rng, 2, d);
        let y = [1, 2];
        let el = rng.gauss_draw(&[2, dz]);
        let xu = binary(&mut rng, 3, d);
        let eu = rng.gauss_draw(&[3 * l, dz]);

        let (_, p) = m2_labeled_bound(&m, &xl, &y, &el).unwrap();
        let g = p.backward(&m).unwrap();
        let err = grad_check(
            |q: &M2Model| Ok(m2_labeled_bound(q, &xl, &y, &el)?.0.total),
            &m,
            &g,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "labelled {err}");

        let (_, p) = m2_unlabeled_bound(&m, &xu, &eu).unwrap();
        let g = p.backward(&m).unwrap();
        let err = grad_check(
            |q: &M2Model| Ok(m2_unlabeled_bound(q, &xu, &eu)?.0.total),
            &m,
            &g,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "unlabelled {err}");

        let scale = ObjectiveScale {
            labeled: 2.5,
            unlabeled: 4.0,
        };
        let obj = |q: &M2Model| {
            let lab = LabeledBatch {
                x: &xl,
                y: &y,
                eps: &el,
            };
            let unl = UnlabeledBatch {
                x: &xu,
                eps: &eu,
                sampled: None,
            };
            m2_objective(q, Some(lab), Some(unl), 3.0, scale)
        };
        let (_, p) = obj(&m).unwrap();
        let g = p.backward(&m).unwrap();
        let err = grad_check(|q: &M2Model| Ok(obj(q)?.0.total), &m, &g, 1e-5).unwrap();
        assert!(err < 1e-4, "objective {err}");
    }

    #[test]
    fn sampled_variant_is_unbiased_for_the_value() {
        let mut rng = Rng::new(8);
        let (d, l, dz) = (4, 3, 2);
        let m = random_m2(&mut rng, d, l, 3, dz, 0.7);
        let x = binary(&mut rng, 1, d);
        // fixed noise shared across classes isolates the label sampling
        let e1 = rng.gauss_draw(&[1, dz]);
        let eps_all = e1.repeat_rows(l);
        let (exact, _) = m2_unlabeled_bound(&m, &x, &eps_all).unwrap();
        let probs = m2_classify(&m, &x).unwrap();
        let n = 20_000;
        let mut s = 0.0;
        for _ in 0..n {
            let u = rng.uniform();
            let mut acc = 0.0;
            let mut y = l - 1;
            for c in 0..l {
                acc += probs.probs.get(0, c);
                if u < acc {
                    y = c;
                    break;
                }
            }
            s += m2_unlabeled_bound_sampled(&m, &x, &[y], &e1)
                .unwrap()
                .0
                .total;
        }
        let spread = (0..l)
            .map(|y| {
                m2_unlabeled_bound_sampled(&m, &x, &[y], &e1)
                    .unwrap()
                    .0
                    .total
            })
            .fold(0.0f64, |a, v| a.max((v - exact.total).abs()));
        assert!((s / n as f64 - exact.total).abs() < 4.0 * spread / (n as f64).sqrt());
    }

    #[test]
    fn classify_generate_analogy_on_zero_model() {
        let m = zero_m2(9, 4, 2);
        let x = Rng::new(9).gauss_draw(&[3, 9]);
        let q = m2_classify(&m, &x).unwrap();
        assert_eq!(q.argmax(), vec![0, 0, 0]);
        for i in 0..3 {
            assert!((q.probs.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        let img = generate(&m, 1, &Tensor::vector(vec![0.3, -2.0]).unwrap()).unwrap();
        assert_eq!(img.shape(), &[9]);
        assert!(img.data().iter().all(|&v| v == 0.5));
        let a = analogy(&m, &x.select_rows(&[0])).unwrap();
        assert_eq!(a.shape(), &[4, 9]);
        assert!(a.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn softmax_shift_invariance() {
        let mut rng = Rng::new(10);
        let mut m = random_m2(&mut rng, 4, 3, 3, 2, 0.5);
        let x = rng.gauss_draw(&[2, 4]);
        let before = m2_classify(&m, &x).unwrap();
        let last = m.classifier.layers.len() - 1;
        m.classifier.layers[last].b = m.classifier.layers[last].b.map(|v| v + 17.0);
        let after = m2_classify(&m, &x).unwrap();
        for (a, b) in before.probs.data().iter().zip(after.probs.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn analogy_row_matches_generate() {
        let mut rng = Rng::new(11);
        let m = random_m2(&mut rng, 6, 3, 4, 2, 0.5);
        let x = binary(&mut rng, 1, 6);
        let a = analogy(&m, &x).unwrap();
        let y_hat = m2_classify(&m, &x).unwrap().argmax()[0];
        let enc_in = Tensor::concat_cols(&x, &one_hot(&[y_hat], 3).unwrap()).unwrap();
        let (mu, _) = nn::forward(&m.encoder, &enc_in)
            .unwrap()
            .gaussian()
            .unwrap();
        let direct = generate(&m, y_hat, &mu.reshape(vec![2]).unwrap()).unwrap();
        assert_eq!(a.row(y_hat), direct.data());
    }
}
