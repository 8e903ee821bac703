use super::{HyperParams, MeanFieldGaussian, VariationalPosterior};
use crate::error::{Error, Result};
use crate::numerics::{
    logsumexp_unchecked, matmul_into, matmul_nt_into, matmul_tn_into, softmax_in_place, Matrix, RandomStream, Real,
};

/// Per-block derivatives with respect to `mu` and `log_sigma`.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockGradient<T> {
    pub mu: Vec<T>,
    pub log_sigma: Vec<T>,
}

impl<T: Real> BlockGradient<T> {
    fn zeros(len: usize) -> Self {
        BlockGradient {
            mu: vec![T::zero(); len],
            log_sigma: vec![T::zero(); len],
        }
    }
}

/// Gradient over the trainable subset: the shared trunk plus one head.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet<T> {
    pub head: usize,
    pub shared: Vec<BlockGradient<T>>,
    pub head_block: BlockGradient<T>,
}

impl<T: Real> GradientSet<T> {
    pub fn blocks(&self) -> impl Iterator<Item = &BlockGradient<T>> {
        self.shared.iter().chain(std::iter::once(&self.head_block))
    }

    pub fn all_finite(&self) -> bool {
        self.blocks()
            .all(|b| b.mu.iter().chain(&b.log_sigma).all(|v| v.is_finite()))
    }
}

#[derive(Clone, Debug)]
pub struct ElboEstimate<T> {
    /// Minimization objective: negative β-ELBO per training example.
    pub loss: T,
    /// Mean over the batch and the MC draws of `−log p(y | x, θ)`.
    pub expected_nll: T,
    /// `KL(q ‖ anchor)` over the trunk and the active head.
    pub kl: T,
    pub gradients: GradientSet<T>,
}

/// Dense view of one layer block with precomputed variances.
struct LayerParams<'a, T> {
    fan_in: usize,
    fan_out: usize,
    block: &'a MeanFieldGaussian<T>,
    var: Vec<T>,
}

impl<'a, T: Real> LayerParams<'a, T> {
    fn new(block: &'a MeanFieldGaussian<T>, (fan_in, fan_out): (usize, usize)) -> Self {
        let two = T::lit(2.0);
        LayerParams {
            fan_in,
            fan_out,
            block,
            var: block.log_sigma.iter().map(|&l| (two * l).exp()).collect(),
        }
    }

    fn split(&self) -> usize {
        self.fan_in * self.fan_out
    }
}

struct LayerTrace<T> {
    input: Vec<T>,
    std: Vec<T>,
    eps: Vec<T>,
    pre: Vec<T>,
}

/// Samples the layer's pre-activations for a `rows × fan_in` input:
/// `M + √V ∘ ε` with `M = A·Wμ + bμ`, `V = (A∘A)·Wσ² + bσ²`.
fn layer_forward<T: Real>(
    layer: &LayerParams<'_, T>,
    input: Vec<T>,
    rows: usize,
    noise: &mut RandomStream,
) -> LayerTrace<T> {
    let (fi, fo, split) = (layer.fan_in, layer.fan_out, layer.split());
    let (w_mu, b_mu) = layer.block.mu.split_at(split);
    let (w_var, b_var) = layer.var.split_at(split);
    let mut mean = Vec::with_capacity(rows * fo);
    let mut var = Vec::with_capacity(rows * fo);
    for _ in 0..rows {
        mean.extend_from_slice(b_mu);
        var.extend_from_slice(b_var);
    }
    matmul_into(&input, rows, fi, w_mu, fo, &mut mean);
    let squared: Vec<T> = input.iter().map(|&a| a * a).collect();
    matmul_into(&squared, rows, fi, w_var, fo, &mut var);

    let mut eps = vec![T::zero(); rows * fo];
    noise.fill_normal(&mut eps);
    let std: Vec<T> = var.iter().map(|v| v.sqrt()).collect();
    let pre = mean
        .iter()
        .zip(&std)
        .zip(&eps)
        .map(|((&m, &s), &e)| m + s * e)
        .collect();
    LayerTrace { input, std, eps, pre }
}

fn relu<T: Real>(v: &[T]) -> Vec<T> {
    v.iter().map(|&x| x.max(T::zero())).collect()
}

/// One stochastic pass; returns the head logits and the per-layer traces.
fn sample_pass<T: Real>(
    layers: &[LayerParams<'_, T>],
    x: &Matrix<T>,
    noise: &mut RandomStream,
) -> (Vec<T>, Vec<LayerTrace<T>>) {
    let rows = x.rows();
    let mut traces = Vec::with_capacity(layers.len());
    let mut act = x.data().to_vec();
    for (l, layer) in layers.iter().enumerate() {
        let trace = layer_forward(layer, act, rows, noise);
        act = if l + 1 < layers.len() {
            relu(&trace.pre)
        } else {
            trace.pre.clone()
        };
        traces.push(trace);
    }
    (act, traces)
}

fn network_layers<'a, T: Real>(post: &'a VariationalPosterior<T>, head: usize) -> Vec<LayerParams<'a, T>> {
    let arch = &post.architecture;
    post.shared
        .iter()
        .zip(arch.shared_shapes())
        .map(|(b, s)| LayerParams::new(b, s))
        .chain(std::iter::once(LayerParams::new(
            &post.heads[head],
            arch.head_shape(head),
        )))
        .collect()
}

fn check_input<T: Real>(post: &VariationalPosterior<T>, head: usize, x: &Matrix<T>) -> Result<()> {
    post.check_head(head)?;
    if x.cols() != post.architecture.input_dim {
        return Err(Error::Shape(format!(
            "input has {} features, network expects {}",
            x.cols(),
            post.architecture.input_dim
        )));
    }
    Ok(())
}

/// Stochastic forward pass with the local reparametrization trick: fresh
/// noise per layer and per row. Returns `rows × C_head` logits.
pub fn forward_local_reparam<T: Real>(
    post: &VariationalPosterior<T>,
    head: usize,
    x: &Matrix<T>,
    noise: &mut RandomStream,
) -> Result<Matrix<T>> {
    check_input(post, head, x)?;
    let layers = network_layers(post, head);
    let (logits, _) = sample_pass(&layers, x, noise);
    let classes = post.architecture.head_sizes[head];
    Matrix::from_vec(x.rows(), classes, logits).map_err(|_| Error::NumericFailure("non-finite logits".into()))
}

/// Deterministic pass through the posterior means.
pub fn forward_mean<T: Real>(post: &VariationalPosterior<T>, head: usize, x: &Matrix<T>) -> Result<Matrix<T>> {
    check_input(post, head, x)?;
    let arch = &post.architecture;
    let shapes: Vec<(usize, usize)> = arch
        .shared_shapes()
        .into_iter()
        .chain(std::iter::once(arch.head_shape(head)))
        .collect();
    let blocks: Vec<&MeanFieldGaussian<T>> = post.shared.iter().chain(std::iter::once(&post.heads[head])).collect();
    let rows = x.rows();
    let mut act = x.data().to_vec();
    for (l, (block, &(fi, fo))) in blocks.iter().zip(&shapes).enumerate() {
        let (w, b) = block.mu.split_at(fi * fo);
        let mut out = Vec::with_capacity(rows * fo);
        for _ in 0..rows {
            out.extend_from_slice(b);
        }
        matmul_into(&act, rows, fi, w, fo, &mut out);
        act = if l + 1 < blocks.len() { relu(&out) } else { out };
    }
    Matrix::from_vec(rows, arch.head_sizes[head], act)
}

/// Monte Carlo β-ELBO objective and its pathwise gradient.
///
/// `loss = (1/B) Σ_i (1/S) Σ_s −log softmax_{y_i}(f_s(x_i)) + β·KL(q ‖ anchor) / N`
/// where `N = dataset_size`. This is `−[(N/B)·Σ_batch E log p − β·KL] / N`,
/// so minimizing it maximizes the β-weighted lower bound; over an epoch of
/// `N/B` batches the KL carries weight `B/N` per batch.
#[allow(clippy::too_many_arguments)]
pub fn beta_elbo_loss<T: Real>(
    post: &VariationalPosterior<T>,
    anchor: &VariationalPosterior<T>,
    head: usize,
    x: &Matrix<T>,
    labels: &[usize],
    dataset_size: usize,
    hyper: &HyperParams,
    noise: &mut RandomStream,
) -> Result<ElboEstimate<T>> {
    check_input(post, head, x)?;
    if post.architecture != anchor.architecture {
        return Err(Error::Shape("anchor posterior has a different architecture".into()));
    }
    let rows = x.rows();
    if rows == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if labels.len() != rows {
        return Err(Error::Shape(format!("{rows} rows but {} labels", labels.len())));
    }
    let classes = post.architecture.head_sizes[head];
    if let Some(&y) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::InvalidArgument(format!(
            "label {y} out of range for head with {classes} classes"
        )));
    }
    if dataset_size == 0 || hyper.s_train == 0 {
        return Err(Error::InvalidArgument("dataset_size and s_train must be >= 1".into()));
    }

    let layers = network_layers(post, head);
    let mut grads: Vec<BlockGradient<T>> = layers.iter().map(|l| BlockGradient::zeros(l.block.len())).collect();
    let samples = hyper.s_train;
    let scale = T::one() / (T::from_count(rows) * T::from_count(samples));
    let mut nll = T::zero();

    for _ in 0..samples {
        let (logits, traces) = sample_pass(&layers, x, noise);
        // dL/dlogits = (softmax − onehot) / (B·S)
        let mut delta = logits;
        for (r, &y) in labels.iter().enumerate() {
            let row = &mut delta[r * classes..(r + 1) * classes];
            nll += logsumexp_unchecked(row) - row[y];
            softmax_in_place(row);
            row[y] -= T::one();
            row.iter_mut().for_each(|v| *v *= scale);
        }
        for l in (0..layers.len()).rev() {
            let input_grad = layer_backward(&layers[l], &traces[l], &delta, rows, &mut grads[l], l > 0);
            if l > 0 {
                let prev_pre = &traces[l - 1].pre;
                delta = input_grad
                    .into_iter()
                    .zip(prev_pre)
                    .map(|(g, &z)| if z > T::zero() { g } else { T::zero() })
                    .collect();
            }
        }
    }
    nll *= scale;

    let beta = T::lit(hyper.beta);
    let kl_weight = beta / T::from_count(dataset_size);
    let anchor_blocks = anchor.shared.iter().chain(std::iter::once(&anchor.heads[head]));
    let mut kl = T::zero();
    for ((layer, grad), prior) in layers.iter().zip(grads.iter_mut()).zip(anchor_blocks) {
        kl += layer.block.kl(prior)?;
        if kl_weight != T::zero() {
            add_kl_gradient(layer.block, prior, kl_weight, grad);
        }
    }

    let head_block = grads.pop().expect("head layer present");
    let loss = if beta == T::zero() { nll } else { nll + kl_weight * kl };
    Ok(ElboEstimate {
        loss,
        expected_nll: nll,
        kl,
        gradients: GradientSet {
            head,
            shared: grads,
            head_block,
        },
    })
}

/// Accumulates parameter gradients for one layer; returns dL/d(input) when requested.
fn layer_backward<T: Real>(
    layer: &LayerParams<'_, T>,
    trace: &LayerTrace<T>,
    delta: &[T],
    rows: usize,
    grad: &mut BlockGradient<T>,
    want_input_grad: bool,
) -> Vec<T> {
    let (fi, fo, split) = (layer.fan_in, layer.fan_out, layer.split());
    let half = T::lit(0.5);
    let two = T::lit(2.0);
    // Z = M + √V·ε  ⇒  dL/dV = dL/dZ · ε / (2√V)
    let d_var: Vec<T> = delta
        .iter()
        .zip(&trace.std)
        .zip(&trace.eps)
        .map(|((&d, &s), &e)| if s > T::zero() { d * e * half / s } else { T::zero() })
        .collect();

    let mut d_w_mu = vec![T::zero(); split];
    matmul_tn_into(&trace.input, rows, fi, delta, fo, &mut d_w_mu);
    let squared: Vec<T> = trace.input.iter().map(|&a| a * a).collect();
    let mut d_w_var = vec![T::zero(); split];
    matmul_tn_into(&squared, rows, fi, &d_var, fo, &mut d_w_var);

    let (g_w_mu, g_b_mu) = grad.mu.split_at_mut(split);
    for (g, d) in g_w_mu.iter_mut().zip(&d_w_mu) {
        *g += *d;
    }
    let (g_w_ls, g_b_ls) = grad.log_sigma.split_at_mut(split);
    // σ² = exp(2·log σ)  ⇒  dL/dlog σ = dL/dσ² · 2σ²
    for ((g, d), &v) in g_w_ls.iter_mut().zip(&d_w_var).zip(&layer.var[..split]) {
        *g += *d * two * v;
    }
    for r in 0..rows {
        for j in 0..fo {
            g_b_mu[j] += delta[r * fo + j];
            g_b_ls[j] += d_var[r * fo + j] * two * layer.var[split + j];
        }
    }

    if !want_input_grad {
        return Vec::new();
    }
    // dL/dA = δ·Wμᵀ + 2A ∘ (dV·Wσ²ᵀ)
    let mut d_input = vec![T::zero(); rows * fi];
    matmul_nt_into(delta, rows, fo, &layer.block.mu[..split], fi, &mut d_input);
    let mut via_var = vec![T::zero(); rows * fi];
    matmul_nt_into(&d_var, rows, fo, &layer.var[..split], fi, &mut via_var);
    for ((d, &v), &a) in d_input.iter_mut().zip(&via_var).zip(&trace.input) {
        *d += two * a * v;
    }
    d_input
}

/// `weight · ∂KL(q‖p)/∂(μ_q, log σ_q)`.
fn add_kl_gradient<T: Real>(
    q: &MeanFieldGaussian<T>,
    p: &MeanFieldGaussian<T>,
    weight: T,
    grad: &mut BlockGradient<T>,
) {
    let two = T::lit(2.0);
    for i in 0..q.mu.len() {
        let inv_var_p = (-two * p.log_sigma[i]).exp();
        grad.mu[i] += weight * (q.mu[i] - p.mu[i]) * inv_var_p;
        let ratio = (two * (q.log_sigma[i] - p.log_sigma[i])).exp();
        grad.log_sigma[i] += weight * (ratio - T::one());
    }
}
