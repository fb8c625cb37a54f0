//! Multilayer perceptrons with hand-derived reverse-mode gradients.
//!
//! Hidden layers use softplus. The last affine layer feeds one of four heads:
//! a plain linear output, a Gaussian pair `(μ, log σ²)` split down the middle,
//! a row-wise softmax, or Bernoulli logits.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{self, matmul, matmul_nt, matmul_tn, Tensor};

/// Standard deviation of the initial weights.
pub const INIT_STD: f64 = 0.001;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Head {
    Linear,
    GaussianPair,
    Softmax,
    BernoulliLogits,
}

impl Head {
    pub fn tag(self) -> &'static str {
        match self {
            Head::Linear => "linear",
            Head::GaussianPair => "gaussian-pair",
            Head::Softmax => "softmax",
            Head::BernoulliLogits => "bernoulli-logits",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Head> {
        match tag {
            "linear" => Some(Head::Linear),
            "gaussian-pair" => Some(Head::GaussianPair),
            "softmax" => Some(Head::Softmax),
            "bernoulli-logits" => Some(Head::BernoulliLogits),
            _ => None,
        }
    }
}

/// One affine layer: `W` is `in × out`, `b` has length `out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub w: Tensor,
    pub b: Tensor,
}

impl Dense {
    pub fn inputs(&self) -> usize {
        self.w.rows()
    }

    pub fn outputs(&self) -> usize {
        self.w.cols()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Dense>,
    pub head: Head,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<Dense>,
}

/// Anything made of parameter tensors: networks, their gradients, whole models.
pub trait Parameters {
    fn tensors(&self) -> Vec<&Tensor>;
    fn tensors_mut(&mut self) -> Vec<&mut Tensor>;

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Flat copy of every parameter, in `tensors()` order.
    fn flatten(&self) -> Vec<f64> {
        self.tensors()
            .iter()
            .flat_map(|t| t.data().iter().copied())
            .collect()
    }

    fn shapes(&self) -> Vec<Vec<usize>> {
        self.tensors().iter().map(|t| t.shape().to_vec()).collect()
    }
}

impl Parameters for Vec<Tensor> {
    fn tensors(&self) -> Vec<&Tensor> {
        self.iter().collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.iter_mut().collect()
    }
}

impl Parameters for MlpParams {
    fn tensors(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.w, &l.b]).collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.w, &mut l.b])
            .collect()
    }
}

impl Parameters for MlpGrads {
    fn tensors(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.w, &l.b]).collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.w, &mut l.b])
            .collect()
    }
}

/// Weights drawn i.i.d. from `N(0, INIT_STD²)`, biases zero.
pub fn init_params(rng: &mut Rng, layer_sizes: &[usize], head: Head) -> Result<MlpParams> {
    init_params_with_std(rng, layer_sizes, head, INIT_STD)
}

pub fn init_params_with_std(
    rng: &mut Rng,
    layer_sizes: &[usize],
    head: Head,
    std: f64,
) -> Result<MlpParams> {
    if layer_sizes.len() < 2 {
        return Err(Error::Config(format!(
            "an MLP needs at least input and output sizes, got {:?}",
            layer_sizes
        )));
    }
    if layer_sizes.iter().any(|&s| s == 0) {
        return Err(Error::Config(format!(
            "zero-width layer in {:?}",
            layer_sizes
        )));
    }
    if head == Head::GaussianPair && layer_sizes[layer_sizes.len() - 1] % 2 != 0 {
        return Err(Error::Config(
            "gaussian-pair head needs an even output width".into(),
        ));
    }
    let layers = layer_sizes
        .windows(2)
        .map(|w| Dense {
            w: rng.gauss_draw(&[w[0], w[1]]).scale(std),
            b: Tensor::zeros(&[w[1]]),
        })
        .collect();
    Ok(MlpParams { layers, head })
}

impl MlpParams {
    /// All-zero parameters with the given architecture.
    pub fn zeros(layer_sizes: &[usize], head: Head) -> Result<MlpParams> {
        let mut rng = Rng::new(0);
        let mut p = init_params_with_std(&mut rng, layer_sizes, head, 0.0)?;
        for t in p.tensors_mut() {
            t.data_mut().fill(0.0);
        }
        Ok(p)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    /// Width of the final affine layer.
    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(self.layers.iter().map(Dense::outputs));
        s
    }

    pub fn zero_grads(&self) -> MlpGrads {
        MlpGrads {
            layers: self
                .layers
                .iter()
                .map(|l| Dense {
                    w: Tensor::zeros(l.w.shape()),
                    b: Tensor::zeros(l.b.shape()),
                })
                .collect(),
        }
    }

    /// Checks that layer widths chain and the head fits the output width.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Config("MLP without layers".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.w.shape().len() != 2 || l.b.len() != l.outputs() {
                return Err(Error::dim(format!("layer {} is malformed", i)));
            }
        }
        for pair in self.layers.windows(2) {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(Error::dim(format!(
                    "layer widths do not chain: {} then {}",
                    pair[0].outputs(),
                    pair[1].inputs()
                )));
            }
        }
        if self.head == Head::GaussianPair && self.output_dim() % 2 != 0 {
            return Err(Error::dim("gaussian-pair head with odd width"));
        }
        Ok(())
    }
}

/// Cached activations of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    /// Input to each affine layer (the network input, then hidden activations).
    pub inputs: Vec<Tensor>,
    /// Affine output of each layer, before its nonlinearity.
    pub preacts: Vec<Tensor>,
    /// Head output: logits for linear/Bernoulli heads, probabilities for
    /// softmax, `[μ | log σ²]` for the Gaussian pair.
    pub output: Tensor,
    pub head: Head,
    /// Class count when built by [`forward_class_expanded`]; `inputs[0]`
    /// then holds the unexpanded rows.
    pub expanded: Option<usize>,
}

impl ForwardTrace {
    /// Final affine output, before the head.
    pub fn logits(&self) -> &Tensor {
        &self.preacts[self.preacts.len() - 1]
    }

    /// `(μ, log σ²)` halves of a Gaussian-pair output.
    pub fn gaussian(&self) -> Result<(Tensor, Tensor)> {
        if self.head != Head::GaussianPair {
            return Err(Error::Config(format!(
                "{} head has no Gaussian pair",
                self.head.tag()
            )));
        }
        self.output.split_cols(self.output.cols() / 2)
    }
}

pub fn forward(p: &MlpParams, x: &Tensor) -> Result<ForwardTrace> {
    if x.cols() != p.input_dim() {
        return Err(Error::dim(format!(
            "MLP expects {} input columns, got {}",
            p.input_dim(),
            x.cols()
        )));
    }
    let first = matmul(x, &p.layers[0].w)?.add_row(&p.layers[0].b)?;
    finish_forward(p, x.clone(), first, None)
}

/// Forward pass over `[x_i, onehot(y)]` for every row `i` and class `y`,
/// output rows ordered `i·classes + y`. Equal to [`forward`] on the expanded
/// input, but the first layer multiplies each `x_i` once.
pub fn forward_class_expanded(p: &MlpParams, x: &Tensor, classes: usize) -> Result<ForwardTrace> {
    if x.cols() + classes != p.input_dim() {
        return Err(Error::dim(format!(
            "MLP expects {} input columns, got {} + {} classes",
            p.input_dim(),
            x.cols(),
            classes
        )));
    }
    let layer = &p.layers[0];
    let (d, h) = (x.cols(), layer.w.cols());
    let xw = matmul(
        x,
        &Tensor::from_parts(vec![d, h], layer.w.data()[..d * h].to_vec()),
    )?;
    let wy = &layer.w.data()[d * h..];
    let b = layer.b.data();
    let mut data = Vec::with_capacity(x.rows() * classes * h);
    for i in 0..x.rows() {
        let base = xw.row(i);
        for y in 0..classes {
            let wrow = &wy[y * h..(y + 1) * h];
            data.extend((0..h).map(|j| (base[j] + wrow[j]) + b[j]));
        }
    }
    let first = Tensor::from_parts(vec![x.rows() * classes, h], data);
    finish_forward(p, x.clone(), first, Some(classes))
}

fn finish_forward(
    p: &MlpParams,
    x: Tensor,
    first: Tensor,
    expanded: Option<usize>,
) -> Result<ForwardTrace> {
    let n = p.layers.len();
    let mut inputs = Vec::with_capacity(n);
    let mut preacts = Vec::with_capacity(n);
    inputs.push(x);
    preacts.push(first);
    for i in 1..n {
        let layer = &p.layers[i];
        let h = tensor::softplus(&preacts[i - 1]);
        let a = matmul(&h, &layer.w)?.add_row(&layer.b)?;
        inputs.push(h);
        preacts.push(a);
    }
    let last = preacts[n - 1].clone();
    let output = match p.head {
        Head::Softmax => tensor::softmax_rows(&last),
        _ => last,
    };
    output.ensure_finite("MLP forward")?;
    Ok(ForwardTrace {
        inputs,
        preacts,
        output,
        head: p.head,
        expanded,
    })
}

/// Reverse pass. `grad_out` is the gradient with respect to
/// [`ForwardTrace::output`]; returns parameter gradients and the gradient
/// with respect to the network input.
pub fn backward(
    p: &MlpParams,
    trace: &ForwardTrace,
    grad_out: &Tensor,
) -> Result<(MlpGrads, Tensor)> {
    let (g, gin) = backward_impl(p, trace, grad_out, true)?;
    Ok((g, gin.expect("input gradient requested")))
}

/// Like [`backward`] but skips the input gradient.
pub fn backward_params(p: &MlpParams, trace: &ForwardTrace, grad_out: &Tensor) -> Result<MlpGrads> {
    Ok(backward_impl(p, trace, grad_out, false)?.0)
}

fn backward_impl(
    p: &MlpParams,
    trace: &ForwardTrace,
    grad_out: &Tensor,
    need_input: bool,
) -> Result<(MlpGrads, Option<Tensor>)> {
    if trace.preacts.len() != p.layers.len() || trace.head != p.head {
        return Err(Error::dim("trace does not belong to these parameters"));
    }
    if grad_out.shape() != trace.output.shape() {
        return Err(Error::dim(format!(
            "output gradient {:?} for output {:?}",
            grad_out.shape(),
            trace.output.shape()
        )));
    }
    let mut delta = match p.head {
        Head::Softmax => softmax_backward(&trace.output, grad_out),
        _ => grad_out.clone(),
    };
    let n = p.layers.len();
    let mut layers = Vec::with_capacity(n);
    let mut grad_input = None;
    for i in (0..n).rev() {
        let layer = &p.layers[i];
        let w = match (i, trace.expanded) {
            (0, Some(classes)) => expanded_weight_grad(&trace.inputs[0], &delta, classes)?,
            _ => matmul_tn(&trace.inputs[i], &delta)?,
        };
        let b = delta.sum_rows();
        layers.push(Dense { w, b });
        if i == 0 && need_input && trace.expanded.is_some() {
            return Err(Error::Config(
                "no input gradient through a class-expanded layer".into(),
            ));
        }
        if i > 0 || need_input {
            let g = matmul_nt(&delta, &layer.w)?;
            if i > 0 {
                // softplus' = sigmoid
                delta = g.zip_map(&trace.preacts[i - 1], |g, a| g * tensor::sigmoid_scalar(a))?;
            } else {
                grad_input = Some(g);
            }
        }
    }
    layers.reverse();
    let grads = MlpGrads { layers };
    for t in grads.tensors() {
        t.ensure_finite("MLP backward")?;
    }
    Ok((grads, grad_input))
}

// Rows of the first-layer gradient: `xᵀ Σ_y δ_(i,y)` for the x part, then
// `Σ_i δ_(i,y)` for each class row.
fn expanded_weight_grad(x: &Tensor, delta: &Tensor, classes: usize) -> Result<Tensor> {
    let h = delta.cols();
    let mut grouped = vec![0.0; x.rows() * h];
    let mut per_class = vec![0.0; classes * h];
    for i in 0..x.rows() {
        let g = &mut grouped[i * h..(i + 1) * h];
        for y in 0..classes {
            let row = delta.row(i * classes + y);
            let c = &mut per_class[y * h..(y + 1) * h];
            for j in 0..h {
                g[j] += row[j];
                c[j] += row[j];
            }
        }
    }
    let gx = matmul_tn(x, &Tensor::from_parts(vec![x.rows(), h], grouped))?;
    let mut data = gx.into_data();
    data.extend(per_class);
    Ok(Tensor::from_parts(vec![x.cols() + classes, h], data))
}

// Jᵀg for p = softmax(a): p ⊙ (g − ⟨p, g⟩) per row.
fn softmax_backward(probs: &Tensor, g: &Tensor) -> Tensor {
    let c = probs.cols();
    let mut out = Vec::with_capacity(probs.len());
    for i in 0..probs.rows() {
        let (p, gi) = (probs.row(i), g.row(i));
        let dot: f64 = p.iter().zip(gi).map(|(a, b)| a * b).sum();
        out.extend(p.iter().zip(gi).map(|(pj, gj)| pj * (gj - dot)));
    }
    Tensor::from_parts(vec![probs.rows(), c], out)
}

impl MlpGrads {
    /// `self += other`, elementwise.
    pub fn accumulate(&mut self, other: &MlpGrads) -> Result<()> {
        add_into(self, other)
    }
}

/// `dst += src` over congruent parameter sets.
pub fn add_into<A: Parameters + ?Sized, B: Parameters + ?Sized>(
    dst: &mut A,
    src: &B,
) -> Result<()> {
    let src = src.tensors();
    let mut dst = dst.tensors_mut();
    if src.len() != dst.len() {
        return Err(Error::dim("parameter sets differ in tensor count"));
    }
    for (d, s) in dst.iter_mut().zip(src) {
        d.same_shape(s)?;
        for (a, b) in d.data_mut().iter_mut().zip(s.data()) {
            *a += b;
        }
    }
    Ok(())
}

/// Relative error used by [`grad_check`]: `|a − n| / max(|a|, |n|, floor)`.
/// Central differences at `h = 1e-5` carry about `1e-10` of rounding noise
/// for O(1) objectives, so gradients below the floor are judged absolutely.
pub const GRAD_CHECK_FLOOR: f64 = 1e-4;

/// At most this many coordinates are probed; larger sets are probed at an
/// even stride `ceil(total / GRAD_CHECK_MAX_PROBES)` starting from index 0.
pub const GRAD_CHECK_MAX_PROBES: usize = 10_000;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR)
}

/// Compares `analytic` with central differences of `objective` around
/// `params` and returns the largest relative error.
pub fn grad_check<P, G, F>(mut objective: F, params: &P, analytic: &G, h: f64) -> Result<f64>
where
    P: Parameters + Clone,
    G: Parameters,
    F: FnMut(&P) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::Config(format!(
            "finite-difference step {} must be positive",
            h
        )));
    }
    if params.shapes() != analytic.shapes() {
        return Err(Error::dim("gradient shapes differ from parameter shapes"));
    }
    let flat_grad = analytic.flatten();
    let total = flat_grad.len();
    let stride = total.div_ceil(GRAD_CHECK_MAX_PROBES).max(1);
    let mut probe = params.clone();
    let mut worst = 0.0f64;
    let mut idx = 0;
    while idx < total {
        let (ti, off) = locate(&probe, idx);
        let orig = probe.tensors()[ti].data()[off];
        probe.tensors_mut()[ti].data_mut()[off] = orig + h;
        let plus = objective(&probe)?;
        probe.tensors_mut()[ti].data_mut()[off] = orig - h;
        let minus = objective(&probe)?;
        probe.tensors_mut()[ti].data_mut()[off] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite("grad_check objective".into()));
        }
        let numeric = (plus - minus) / (2.0 * h);
        worst = worst.max(relative_error(flat_grad[idx], numeric));
        idx += stride;
    }
    Ok(worst)
}

fn locate<P: Parameters>(p: &P, mut flat: usize) -> (usize, usize) {
    for (i, t) in p.tensors().iter().enumerate() {
        if flat < t.len() {
            return (i, flat);
        }
        flat -= t.len();
    }
    unreachable!("flat index past the end")
}
