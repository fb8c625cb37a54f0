use crate::error::{Error, Result};
use crate::nn::{MlpGrads, MlpParams, Parameters};
use crate::tensor::Tensor;

/// Added to the root of the second moment in both update rules.
pub const OPT_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    /// RMSProp with momentum and bias correction of both moments.
    RmspropVariant,
    AdaGrad,
}

impl OptimizerKind {
    pub fn tag(self) -> &'static str {
        match self {
            OptimizerKind::RmspropVariant => "rmsprop-variant",
            OptimizerKind::AdaGrad => "adagrad",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "rmsprop-variant" => Some(OptimizerKind::RmspropVariant),
            "adagrad" => Some(OptimizerKind::AdaGrad),
            _ => None,
        }
    }
}

/// Hyperparameters the update rules read.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepConfig {
    pub learning_rate: f64,
    /// Weight of the fresh gradient in the first-moment average.
    pub first_moment_decay: f64,
    /// Weight of the fresh squared gradient in the second-moment average.
    pub second_moment_decay: f64,
}

impl Default for StepConfig {
    fn default() -> Self {
        StepConfig {
            learning_rate: 3e-4,
            first_moment_decay: 0.1,
            second_moment_decay: 0.001,
        }
    }
}

/// Moment buffers congruent with a parameter set. AdaGrad uses only
/// `second_moment`, as its running sum of squares.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
    pub step_count: u64,
}

impl OptimizerState {
    pub fn new<P: Parameters + ?Sized>(kind: OptimizerKind, params: &P) -> Self {
        let zeros: Vec<Tensor> = params
            .tensors()
            .iter()
            .map(|t| Tensor::zeros(t.shape()))
            .collect();
        OptimizerState {
            kind,
            first_moment: zeros.clone(),
            second_moment: zeros,
            step_count: 0,
        }
    }

    /// Applies one update of `self.kind`.
    pub fn step<P, G>(&mut self, params: &mut P, grads: &G, cfg: &StepConfig) -> Result<()>
    where
        P: Parameters + ?Sized,
        G: Parameters + ?Sized,
    {
        match self.kind {
            OptimizerKind::RmspropVariant => rmsprop_variant_step(self, params, grads, cfg),
            OptimizerKind::AdaGrad => adagrad_step(self, params, grads, cfg),
        }
    }

    fn check<P, G>(&self, params: &P, grads: &G) -> Result<()>
    where
        P: Parameters + ?Sized,
        G: Parameters + ?Sized,
    {
        let ps = params.shapes();
        let moments: Vec<Vec<usize>> = self
            .second_moment
            .iter()
            .map(|t| t.shape().to_vec())
            .collect();
        if ps != grads.shapes() || ps != moments || self.first_moment.len() != moments.len() {
            return Err(Error::dim(
                "optimizer state, parameters and gradients are not congruent",
            ));
        }
        for g in grads.tensors() {
            g.ensure_finite("gradient")?;
        }
        Ok(())
    }
}

/// `1 − (1 − d)^t`, the bias correction for an average that starts at zero.
pub fn bias_correction(decay: f64, t: u64) -> f64 {
    1.0 - (1.0 - decay).powf(t as f64)
}

// Computes every new parameter value first so that a non-finite result leaves
// both parameters and state untouched.
fn commit<P: Parameters + ?Sized>(params: &mut P, new_values: Vec<Vec<f64>>) -> Result<()> {
    if new_values.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("optimizer update".into()));
    }
    for (t, v) in params.tensors_mut().into_iter().zip(new_values) {
        t.data_mut().copy_from_slice(&v);
    }
    Ok(())
}

/// `m ← (1−d₁)m + d₁g`, `v ← (1−d₂)v + d₂g²`, then
/// `θ ← θ − lr · m̂ / (√v̂ + 1e−8)` with `m̂ = m / (1−(1−d₁)^t)` and
/// `v̂ = v / (1−(1−d₂)^t)`.
pub fn rmsprop_variant_step<P, G>(
    state: &mut OptimizerState,
    params: &mut P,
    grads: &G,
    cfg: &StepConfig,
) -> Result<()>
where
    P: Parameters + ?Sized,
    G: Parameters + ?Sized,
{
    state.check(params, grads)?;
    let (d1, d2) = (cfg.first_moment_decay, cfg.second_moment_decay);
    let t = state.step_count + 1;
    let (c1, c2) = (bias_correction(d1, t), bias_correction(d2, t));
    let mut new_m = Vec::new();
    let mut new_v = Vec::new();
    let mut new_p = Vec::new();
    for (i, (p, g)) in params.tensors().iter().zip(grads.tensors()).enumerate() {
        let m: Vec<f64> = state.first_moment[i]
            .data()
            .iter()
            .zip(g.data())
            .map(|(m, g)| (1.0 - d1) * m + d1 * g)
            .collect();
        let v: Vec<f64> = state.second_moment[i]
            .data()
            .iter()
            .zip(g.data())
            .map(|(v, g)| (1.0 - d2) * v + d2 * g * g)
            .collect();
        new_p.push(
            p.data()
                .iter()
                .zip(m.iter().zip(&v))
                .map(|(p, (m, v))| p - cfg.learning_rate * (m / c1) / ((v / c2).sqrt() + OPT_EPS))
                .collect(),
        );
        new_m.push(m);
        new_v.push(v);
    }
    commit(params, new_p)?;
    for (i, (m, v)) in new_m.into_iter().zip(new_v).enumerate() {
        state.first_moment[i].data_mut().copy_from_slice(&m);
        state.second_moment[i].data_mut().copy_from_slice(&v);
    }
    state.step_count = t;
    Ok(())
}

/// `v ← v + g²`, `θ ← θ − lr · g / (√v + 1e−8)`.
pub fn adagrad_step<P, G>(
    state: &mut OptimizerState,
    params: &mut P,
    grads: &G,
    cfg: &StepConfig,
) -> Result<()>
where
    P: Parameters + ?Sized,
    G: Parameters + ?Sized,
{
    state.check(params, grads)?;
    let mut new_v = Vec::new();
    let mut new_p = Vec::new();
    for (i, (p, g)) in params.tensors().iter().zip(grads.tensors()).enumerate() {
        let v: Vec<f64> = state.second_moment[i]
            .data()
            .iter()
            .zip(g.data())
            .map(|(v, g)| v + g * g)
            .collect();
        new_p.push(
            p.data()
                .iter()
                .zip(g.data().iter().zip(&v))
                .map(|(p, (g, v))| p - cfg.learning_rate * g / (v.sqrt() + OPT_EPS))
                .collect(),
        );
        new_v.push(v);
    }
    commit(params, new_p)?;
    for (i, v) in new_v.into_iter().enumerate() {
        state.second_moment[i].data_mut().copy_from_slice(&v);
    }
    state.step_count += 1;
    Ok(())
}

/// Gradient of `½‖θ‖² / N`, the `N(0, I)` parameter prior spread over the
/// per-example objective: `θ / N` per parameter.
pub fn weight_decay_grad(params: &MlpParams, n_total: usize) -> Result<MlpGrads> {
    let mut g = params.zero_grads();
    add_weight_decay(&mut g, params, n_total)?;
    Ok(g)
}

/// Adds `θ / N` to `grads` in place.
pub fn add_weight_decay<G, P>(grads: &mut G, params: &P, n_total: usize) -> Result<()>
where
    G: Parameters + ?Sized,
    P: Parameters + ?Sized,
{
    if n_total == 0 {
        return Err(Error::Config(
            "weight decay needs at least one training point".into(),
        ));
    }
    if grads.shapes() != params.shapes() {
        return Err(Error::dim(
            "weight decay: gradient and parameter shapes differ",
        ));
    }
    let s = 1.0 / n_total as f64;
    for (g, p) in grads.tensors_mut().into_iter().zip(params.tensors()) {
        for (a, b) in g.data_mut().iter_mut().zip(p.data()) {
            *a += s * b;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_params_with_std, Head};
    use crate::rng::Rng;

    #[derive(Clone, Debug, PartialEq)]
    struct Scalar(Tensor);

    impl Parameters for Scalar {
        fn tensors(&self) -> Vec<&Tensor> {
            vec![&self.0]
        }
        fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
            vec![&mut self.0]
        }
    }

    fn s(v: f64) -> Scalar {
        Scalar(Tensor::vector(vec![v]).unwrap())
    }

    #[test]
    fn rmsprop_first_step_trace() {
        let mut p = s(0.0);
        let mut st = OptimizerState::new(OptimizerKind::RmspropVariant, &p);
        rmsprop_variant_step(&mut st, &mut p, &s(1.0), &StepConfig::default()).unwrap();
        assert!((p.0.data()[0] - (-0.0003 / (1.0 + 1e-8))).abs() < 1e-12);
        assert_eq!(st.step_count, 1);
    }

    #[test]
    fn rmsprop_zero_gradient_and_sign() {
        let mut p = s(1.5);
        let mut st = OptimizerState::new(OptimizerKind::RmspropVariant, &p);
        rmsprop_variant_step(&mut st, &mut p, &s(0.0), &StepConfig::default()).unwrap();
        assert_eq!(p.0.data()[0], 1.5);
        for g in [-3.0, 0.2, 7.0] {
            let mut p = s(0.0);
            let mut st = OptimizerState::new(OptimizerKind::RmspropVariant, &p);
            rmsprop_variant_step(&mut st, &mut p, &s(g), &StepConfig::default()).unwrap();
            assert!(p.0.data()[0] * g < 0.0);
        }
    }

    #[test]
    fn adagrad_trace() {
        let cfg = StepConfig {
            learning_rate: 1.0,
            ..StepConfig::default()
        };
        let mut p = s(0.0);
        let mut st = OptimizerState::new(OptimizerKind::AdaGrad, &p);
        adagrad_step(&mut st, &mut p, &s(1.0), &cfg).unwrap();
        let first = p.0.data()[0];
        assert!((first - (-1.0 / (1.0 + 1e-8))).abs() < 1e-12);
        adagrad_step(&mut st, &mut p, &s(1.0), &cfg).unwrap();
        let second = p.0.data()[0] - first;
        assert!((second - (-1.0 / (2f64.sqrt() + 1e-8))).abs() < 1e-12);
        assert!((second + 0.707107).abs() < 1e-6);
    }

    #[test]
    fn adagrad_zero_gradient_and_monotone_accumulator() {
        let cfg = StepConfig::default();
        let mut p = s(2.0);
        let mut st = OptimizerState::new(OptimizerKind::AdaGrad, &p);
        adagrad_step(&mut st, &mut p, &s(0.0), &cfg).unwrap();
        assert_eq!(p.0.data()[0], 2.0);
        assert_eq!(st.second_moment[0].data()[0], 0.0);
        let mut rng = Rng::new(1);
        let mut last = 0.0;
        for _ in 0..50 {
            adagrad_step(&mut st, &mut p, &s(rng.gaussian()), &cfg).unwrap();
            let v = st.second_moment[0].data()[0];
            assert!(v >= last);
            last = v;
        }
    }

    #[test]
    fn bias_correction_converges() {
        assert!((bias_correction(0.001, 100_000) - 1.0).abs() < 1e-6);
        assert!((bias_correction(0.1, 100_000) - 1.0).abs() < 1e-6);
        assert!((bias_correction(0.1, 1) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn rejects_mismatch_and_non_finite() {
        let mut p = s(0.0);
        let mut st = OptimizerState::new(OptimizerKind::AdaGrad, &p);
        let wrong = Scalar(Tensor::zeros(&[2]));
        assert!(matches!(
            st.step(&mut p, &wrong, &StepConfig::default()),
            Err(Error::Dimension(_))
        ));
        let nan = Scalar(Tensor::from_parts(vec![1], vec![f64::NAN]));
        assert!(matches!(
            st.step(&mut p, &nan, &StepConfig::default()),
            Err(Error::NonFinite(_))
        ));
        // an overflowing update is refused and leaves everything as it was
        let mut big = s(f64::MAX);
        let mut st = OptimizerState::new(OptimizerKind::AdaGrad, &big);
        let cfg = StepConfig {
            learning_rate: f64::MAX,
            ..StepConfig::default()
        };
        assert!(matches!(
            st.step(&mut big, &s(-1.0), &cfg),
            Err(Error::NonFinite(_))
        ));
        assert_eq!(big.0.data()[0], f64::MAX);
        assert_eq!(st.step_count, 0);
    }

    #[test]
    fn weight_decay_contribution() {
        let p = MlpParams::zeros(&[3, 2], Head::Linear).unwrap();
        assert!(weight_decay_grad(&p, 10)
            .unwrap()
            .flatten()
            .iter()
            .all(|&v| v == 0.0));
        let mut p = MlpParams::zeros(&[1, 1], Head::Linear).unwrap();
        p.layers[0].w = Tensor::matrix(1, 1, vec![2.0]).unwrap();
        assert!((weight_decay_grad(&p, 10).unwrap().layers[0].w.data()[0] - 0.2).abs() < 1e-15);
        let q = init_params_with_std(&mut Rng::new(4), &[4, 3], Head::Linear, 1.0).unwrap();
        let a = weight_decay_grad(&q, 7).unwrap().flatten();
        let b = weight_decay_grad(&q, 14).unwrap().flatten();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - 2.0 * y).abs() < 1e-15);
        }
        assert!(weight_decay_grad(&q, 0).is_err());
    }
}
