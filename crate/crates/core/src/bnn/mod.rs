//! Mean-field Gaussian Bayesian MLP with one output head per task.
//!
//! Every layer block stores its weights row-major (`fan_in × fan_out`)
//! followed by `fan_out` biases, as a pair of `mu` / `log_sigma` vectors.

mod checkpoint;
mod forward;
mod train;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, PosteriorCheckpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use forward::{beta_elbo_loss, forward_local_reparam, forward_mean, BlockGradient, ElboEstimate, GradientSet};
pub use train::{train_task, Adam};

use crate::error::{Error, Result};
use crate::numerics::{RandomStream, Real};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkArchitecture {
    pub input_dim: usize,
    pub hidden_sizes: Vec<usize>,
    pub head_sizes: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
}

impl NetworkArchitecture {
    pub fn new(input_dim: usize, hidden_sizes: Vec<usize>, head_sizes: Vec<usize>) -> Result<Self> {
        let arch = NetworkArchitecture {
            input_dim,
            hidden_sizes,
            head_sizes,
            activation: Activation::Relu,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidArgument("input_dim must be >= 1".into()));
        }
        if self.hidden_sizes.is_empty() || self.hidden_sizes.contains(&0) {
            return Err(Error::InvalidArgument(
                "hidden_sizes must be non-empty with positive widths".into(),
            ));
        }
        if self.head_sizes.is_empty() {
            return Err(Error::InvalidArgument("at least one head is required".into()));
        }
        if let Some(c) = self.head_sizes.iter().find(|&&c| c < 2) {
            return Err(Error::InvalidArgument(format!(
                "every head needs >= 2 classes, got {c}"
            )));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` for each shared layer.
    pub fn shared_shapes(&self) -> Vec<(usize, usize)> {
        let mut fan_in = self.input_dim;
        self.hidden_sizes
            .iter()
            .map(|&h| {
                let shape = (fan_in, h);
                fan_in = h;
                shape
            })
            .collect()
    }

    pub fn head_shape(&self, head: usize) -> (usize, usize) {
        (*self.hidden_sizes.last().expect("validated"), self.head_sizes[head])
    }

    pub fn num_heads(&self) -> usize {
        self.head_sizes.len()
    }

    /// Total number of weights and biases over the trunk and every head.
    pub fn parameter_count(&self) -> usize {
        let block = |(i, o): (usize, usize)| (i + 1) * o;
        self.shared_shapes().into_iter().map(block).sum::<usize>()
            + (0..self.num_heads()).map(|h| block(self.head_shape(h))).sum::<usize>()
    }
}

/// Fully factorized Gaussian over one parameter block; `σ = exp(log_sigma)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanFieldGaussian<T> {
    pub mu: Vec<T>,
    pub log_sigma: Vec<T>,
}

impl<T: Real> MeanFieldGaussian<T> {
    pub fn constant(len: usize, mu: T, log_sigma: T) -> Self {
        MeanFieldGaussian {
            mu: vec![mu; len],
            log_sigma: vec![log_sigma; len],
        }
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    pub fn sigma(&self) -> Vec<T> {
        self.log_sigma.iter().map(|l| l.exp()).collect()
    }

    /// Closed-form `KL(self ‖ other)`.
    pub fn kl(&self, other: &MeanFieldGaussian<T>) -> Result<T> {
        if self.len() != other.len() || self.log_sigma.len() != other.log_sigma.len() {
            return Err(Error::Shape(format!(
                "KL between blocks of length {} and {}",
                self.len(),
                other.len()
            )));
        }
        let half = T::lit(0.5);
        let mut total = T::zero();
        for i in 0..self.mu.len() {
            let (lq, lp) = (self.log_sigma[i], other.log_sigma[i]);
            let ratio = (T::lit(2.0) * (lq - lp)).exp();
            let diff = self.mu[i] - other.mu[i];
            let scaled_diff = diff * diff * (T::lit(-2.0) * lp).exp();
            total += (lp - lq) + half * (ratio + scaled_diff) - half;
        }
        Ok(total)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariationalPosterior<T> {
    pub architecture: NetworkArchitecture,
    pub shared: Vec<MeanFieldGaussian<T>>,
    pub heads: Vec<MeanFieldGaussian<T>>,
    pub trained_heads: BTreeSet<usize>,
}

impl<T: Real> VariationalPosterior<T> {
    pub fn num_heads(&self) -> usize {
        self.heads.len()
    }

    pub fn is_trained(&self, head: usize) -> bool {
        self.trained_heads.contains(&head)
    }

    pub(crate) fn check_head(&self, head: usize) -> Result<()> {
        if head >= self.heads.len() {
            return Err(Error::InvalidArgument(format!(
                "head {head} out of range for {} heads",
                self.heads.len()
            )));
        }
        Ok(())
    }

    /// Checks block lengths against the architecture and finiteness of every value.
    pub fn validate(&self) -> Result<()> {
        self.architecture.validate()?;
        let shapes = self.architecture.shared_shapes();
        if shapes.len() != self.shared.len() || self.heads.len() != self.architecture.num_heads() {
            return Err(Error::Shape("posterior block count does not match architecture".into()));
        }
        let expected = shapes
            .into_iter()
            .chain((0..self.heads.len()).map(|h| self.architecture.head_shape(h)));
        for (block, (i, o)) in self.shared.iter().chain(&self.heads).zip(expected) {
            if block.mu.len() != (i + 1) * o || block.log_sigma.len() != (i + 1) * o {
                return Err(Error::Shape(format!("block for a {i}x{o} layer has wrong length")));
            }
            if block.mu.iter().chain(&block.log_sigma).any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument("posterior holds non-finite values".into()));
            }
        }
        if let Some(&h) = self.trained_heads.iter().find(|&&h| h >= self.heads.len()) {
            return Err(Error::InvalidArgument(format!("trained head {h} out of range")));
        }
        Ok(())
    }

    fn check_congruent(&self, other: &VariationalPosterior<T>) -> Result<()> {
        if self.architecture != other.architecture {
            return Err(Error::Shape("posteriors have different architectures".into()));
        }
        Ok(())
    }
}

/// `N(0, prior_sigma²)` on every parameter; no heads trained.
pub fn init_prior<T: Real>(arch: &NetworkArchitecture, prior_sigma: f64) -> Result<VariationalPosterior<T>> {
    arch.validate()?;
    if !(prior_sigma > 0.0) || !prior_sigma.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "prior_sigma must be > 0, got {prior_sigma}"
        )));
    }
    let ls = T::lit(prior_sigma.ln());
    let block = |(i, o): (usize, usize)| MeanFieldGaussian::constant((i + 1) * o, T::zero(), ls);
    Ok(VariationalPosterior {
        architecture: arch.clone(),
        shared: arch.shared_shapes().into_iter().map(block).collect(),
        heads: (0..arch.num_heads()).map(|h| block(arch.head_shape(h))).collect(),
        trained_heads: BTreeSet::new(),
    })
}

/// Starting values for variational training: every mean (trunk and heads)
/// drawn from `N(0, 2/fan_in)`, every `log_sigma` set to `init_log_sigma`.
///
/// The result is a pool of initial values; `train_task` copies from it the
/// blocks it is about to train.
pub fn init_variational<T: Real>(
    prior: &VariationalPosterior<T>,
    seed: u64,
    init_log_sigma: f64,
) -> VariationalPosterior<T> {
    let arch = &prior.architecture;
    let mut stream = RandomStream::new(seed, 0);
    let ls = T::lit(init_log_sigma);
    let mut block = |(i, o): (usize, usize)| {
        let scale = T::lit((2.0 / i as f64).sqrt());
        let mu = (0..(i + 1) * o).map(|_| scale * stream.normal::<T>()).collect();
        MeanFieldGaussian {
            mu,
            log_sigma: vec![ls; (i + 1) * o],
        }
    };
    let shared = arch.shared_shapes().into_iter().map(&mut block).collect();
    let heads = (0..arch.num_heads()).map(|h| block(arch.head_shape(h))).collect();
    VariationalPosterior {
        architecture: arch.clone(),
        shared,
        heads,
        trained_heads: BTreeSet::new(),
    }
}

/// `KL(q ‖ p)` summed over the shared trunk and the given head.
pub fn kl_divergence<T: Real>(q: &VariationalPosterior<T>, p: &VariationalPosterior<T>, head: usize) -> Result<T> {
    q.check_congruent(p)?;
    q.check_head(head)?;
    let mut total = T::zero();
    for (a, b) in q.shared.iter().zip(&p.shared) {
        total += a.kl(b)?;
    }
    Ok(total + q.heads[head].kl(&p.heads[head])?)
}

/// Optimizer and sampling settings for one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperParams {
    pub learning_rate: f64,
    pub beta: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub s_train: usize,
    pub s_test: usize,
    pub prior_sigma: f64,
    pub init_log_sigma: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            learning_rate: 0.001,
            beta: 1.0,
            epochs: 120,
            batch_size: 128,
            s_train: 10,
            s_test: 100,
            prior_sigma: 1.0,
            init_log_sigma: -6.0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: &str| Err(Error::Config(format!("hyperparameter `{field}` {msg}")));
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad("learning_rate", "must be > 0");
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return bad("beta", "must lie in [0, 1]");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be >= 1");
        }
        if self.s_train == 0 {
            return bad("s_train", "must be >= 1");
        }
        if self.s_test == 0 {
            return bad("s_test", "must be >= 1");
        }
        if !(self.prior_sigma > 0.0) || !self.prior_sigma.is_finite() {
            return bad("prior_sigma", "must be > 0");
        }
        if !self.init_log_sigma.is_finite() {
            return bad("init_log_sigma", "must be finite");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam_beta1/adam_beta2", "must lie in [0, 1)");
        }
        if !(self.adam_epsilon > 0.0) {
            return bad("adam_epsilon", "must be > 0");
        }
        Ok(())
    }
}
