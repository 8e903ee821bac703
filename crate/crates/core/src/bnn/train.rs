use log::debug;

use super::{beta_elbo_loss, init_prior, init_variational, GradientSet, HyperParams, VariationalPosterior};
use crate::data::TaskDataset;
use crate::error::{Error, Result};
use crate::numerics::{RandomStream, Real};

/// Adaptive-moment optimizer over the trunk and one head.
///
/// Moment buffers follow the `GradientSet` layout: for each shared block
/// then the head block, the `mu` vector followed by the `log_sigma` vector.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    learning_rate: T,
    beta1: T,
    beta2: T,
    epsilon: T,
    step: i32,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(hyper: &HyperParams) -> Self {
        Adam {
            learning_rate: T::lit(hyper.learning_rate),
            beta1: T::lit(hyper.adam_beta1),
            beta2: T::lit(hyper.adam_beta2),
            epsilon: T::lit(hyper.adam_epsilon),
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.step
    }

    pub fn apply(&mut self, post: &mut VariationalPosterior<T>, grads: &GradientSet<T>) {
        let head = grads.head;
        let mut params: Vec<&mut Vec<T>> = Vec::with_capacity(2 * (post.shared.len() + 1));
        for block in post.shared.iter_mut().chain(std::iter::once(&mut post.heads[head])) {
            params.push(&mut block.mu);
            params.push(&mut block.log_sigma);
        }
        let gvecs: Vec<&Vec<T>> = grads.blocks().flat_map(|b| [&b.mu, &b.log_sigma]).collect();
        if self.first.is_empty() {
            self.first = gvecs.iter().map(|g| vec![T::zero(); g.len()]).collect();
            self.second = self.first.clone();
        }
        self.step += 1;
        let one = T::one();
        let bias1 = one - self.beta1.powi(self.step);
        let bias2 = one - self.beta2.powi(self.step);
        for (((p, g), m), v) in params.into_iter().zip(gvecs).zip(&mut self.first).zip(&mut self.second) {
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (one - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (one - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                p[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
    }
}

/// Fits `q_t` for one task, anchored at `q_prev`.
///
/// Only the shared trunk and `head` are updated; every other head is copied
/// unchanged. An untrained head starts from fresh random means with
/// `init_log_sigma`; when `q_prev` has no trained head at all (it is the
/// prior) the trunk starts from fresh values too. Optimizer moments are
/// fresh for every call.
pub fn train_task<T: Real>(
    q_prev: &VariationalPosterior<T>,
    task: &TaskDataset<T>,
    head: usize,
    hyper: &HyperParams,
    seed: u64,
) -> Result<VariationalPosterior<T>> {
    q_prev.check_head(head)?;
    hyper.validate()?;
    if task.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    let classes = q_prev.architecture.head_sizes[head];
    if task.num_classes > classes {
        return Err(Error::Shape(format!(
            "task `{}` has {} classes but head {head} has {classes}",
            task.name, task.num_classes
        )));
    }

    let base = RandomStream::new(seed, 0);
    let mut current = q_prev.clone();
    if !q_prev.is_trained(head) {
        let prior = init_prior::<T>(&q_prev.architecture, hyper.prior_sigma)?;
        let fresh = init_variational(&prior, base.child_seed(0), hyper.init_log_sigma);
        current.heads[head] = fresh.heads[head].clone();
        if q_prev.trained_heads.is_empty() {
            current.shared = fresh.shared;
        }
    }

    let mut order_stream = base.derive(1);
    let mut noise = base.derive(2);
    let mut adam = Adam::new(hyper);
    let n = task.len();
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..hyper.epochs {
        order_stream.shuffle(&mut order);
        let mut epoch_loss = T::zero();
        for batch in order.chunks(hyper.batch_size) {
            let x = task.features.select_rows(batch);
            let y: Vec<usize> = batch.iter().map(|&i| task.labels[i]).collect();
            let est = beta_elbo_loss(&current, q_prev, head, &x, &y, n, hyper, &mut noise)?;
            if !est.loss.is_finite() || !est.gradients.all_finite() {
                return Err(Error::NumericFailure(format!(
                    "non-finite loss or gradient in epoch {epoch} on task `{}`",
                    task.name
                )));
            }
            epoch_loss += est.loss;
            adam.apply(&mut current, &est.gradients);
        }
        debug!("task `{}` head {head} epoch {epoch}: loss {epoch_loss}", task.name);
    }
    current.trained_heads.insert(head);
    Ok(current)
}
