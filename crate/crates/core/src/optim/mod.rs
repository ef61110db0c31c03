//! Fitting routines: deterministic L-BFGS and seeded mini-batch SGD.
//!
//! Both trainers fit the network of a [`ModelSpec`] on the model's expanded
//! features of `train`, exactly as given. Standardization, if wanted, is the
//! caller's job (see the harness); the returned model carries no scaler.

pub mod lbfgs;
pub mod line_search;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;

use crate::data::RiskDataset;
use crate::error::{Error, Result};
use crate::models::{expand, init_parameters, FittedModel, ModelSpec, Network, OptimizerKind};
use crate::seed::{mix64, rng_from_seed};

pub use lbfgs::{LbfgsOptions, Minimum, Objective};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdOptions {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for SgdOptions {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            batch_size: 32,
            epochs: 50,
        }
    }
}

impl SgdOptions {
    /// `learning_rate = 0` is accepted and leaves the initialization unchanged.
    pub fn validate(&self, n_train: usize) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::config(
                "optim.sgd.learning_rate",
                "must be a finite value >= 0",
            ));
        }
        if self.batch_size < 1 || self.batch_size > n_train {
            return Err(Error::config(
                "optim.sgd.batch_size",
                format!(
                    "must lie in [1, n_train = {n_train}], got {}",
                    self.batch_size
                ),
            ));
        }
        Ok(())
    }
}

/// A fitted model plus how the fit went.
#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub model: FittedModel,
    /// False when L-BFGS stopped at `max_iters` above `grad_tol`.
    pub converged: bool,
    /// Penalized training loss at the returned parameters.
    pub final_loss: f64,
    /// L-BFGS iterations or SGD epochs performed.
    pub iterations: usize,
    /// Mean mini-batch loss of each SGD epoch (empty for L-BFGS).
    pub epoch_losses: Vec<f64>,
}

struct NetworkObjective<'a> {
    template: Network,
    x: &'a Array2<f64>,
    y: ndarray::ArrayView1<'a, f64>,
    lambda: f64,
}

impl Objective for NetworkObjective<'_> {
    fn evaluate(&self, params: &[f64], grad: &mut [f64]) -> f64 {
        let mut net = self.template.clone();
        net.set_flat(params);
        let (loss, g) = net.loss_and_gradient(self.x.view(), self.y, self.lambda);
        grad.copy_from_slice(&g.to_flat());
        loss
    }
}

fn design(spec: &ModelSpec, train: &RiskDataset) -> Result<Array2<f64>> {
    if train.is_empty() {
        return Err(Error::Size("training set is empty".into()));
    }
    expand(spec, train.features().to_owned())
}

/// Deterministic quasi-Newton fit from the all-zero start. Identical inputs
/// give bitwise-identical parameters.
pub fn fit_lbfgs(
    spec: &ModelSpec,
    train: &RiskDataset,
    opts: &LbfgsOptions,
) -> Result<TrainingOutcome> {
    if spec.optimizer != OptimizerKind::Lbfgs {
        return Err(Error::Unsupported(
            "fit_lbfgs requires a spec whose optimizer is L-BFGS".into(),
        ));
    }
    let x = design(spec, train)?;
    let mut model = init_parameters(spec, train.dim(), 0)?;
    let objective = NetworkObjective {
        template: model.network().clone(),
        x: &x,
        y: train.labels(),
        lambda: spec.l2_lambda,
    };
    let min = lbfgs::minimize(&objective, model.network().to_flat(), opts)?;
    model.network_mut().set_flat(&min.x);
    Ok(TrainingOutcome {
        model,
        converged: min.converged,
        final_loss: min.loss,
        iterations: min.iterations,
        epoch_losses: Vec::new(),
    })
}

/// SGD with both random streams derived from one seed.
pub fn fit_sgd(
    spec: &ModelSpec,
    train: &RiskDataset,
    opts: &SgdOptions,
    seed: u64,
) -> Result<TrainingOutcome> {
    fit_sgd_with_seeds(
        spec,
        train,
        opts,
        mix64(seed ^ 0x1111),
        mix64(seed ^ 0x2222),
    )
}

/// Constant-step mini-batch SGD on mean BCE + L2. `init_seed` drives the
/// parameter initialization and `batch_seed` the per-epoch shuffles; the last
/// batch of an epoch may be smaller than `batch_size`.
pub fn fit_sgd_with_seeds(
    spec: &ModelSpec,
    train: &RiskDataset,
    opts: &SgdOptions,
    init_seed: u64,
    batch_seed: u64,
) -> Result<TrainingOutcome> {
    if spec.optimizer != OptimizerKind::Sgd {
        return Err(Error::Unsupported(
            "fit_sgd requires a spec whose optimizer is SGD".into(),
        ));
    }
    let x = design(spec, train)?;
    opts.validate(train.len())?;
    let y = train.labels().to_owned();
    let mut model = init_parameters(spec, train.dim(), init_seed)?;
    let lambda = spec.l2_lambda;
    let mut rng = rng_from_seed(batch_seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epoch_losses = Vec::with_capacity(opts.epochs);

    for epoch in 0..opts.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for rows in order.chunks(opts.batch_size) {
            let xb = x.select(Axis(0), rows);
            let yb = y.select(Axis(0), rows);
            let (loss, grad) = model
                .network()
                .loss_and_gradient(xb.view(), yb.view(), lambda);
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, run: None });
            }
            model.network_mut().scaled_add(-opts.learning_rate, &grad);
            total += loss;
            batches += 1;
        }
        epoch_losses.push(total / batches as f64);
    }
    let final_loss = model.network().loss(x.view(), y.view(), lambda);
    if !final_loss.is_finite() || model.network().to_flat().iter().any(|w| !w.is_finite()) {
        return Err(Error::Diverged {
            epoch: opts.epochs,
            run: None,
        });
    }
    Ok(TrainingOutcome {
        model,
        converged: true,
        final_loss,
        iterations: opts.epochs,
        epoch_losses,
    })
}

/// Optimizer-appropriate fit. `init_seed`/`batch_seed` are ignored by L-BFGS.
pub fn fit(
    spec: &ModelSpec,
    train: &RiskDataset,
    lbfgs: &LbfgsOptions,
    sgd: &SgdOptions,
    init_seed: u64,
    batch_seed: u64,
) -> Result<TrainingOutcome> {
    match spec.optimizer {
        OptimizerKind::Lbfgs => fit_lbfgs(spec, train, lbfgs),
        OptimizerKind::Sgd => fit_sgd_with_seeds(spec, train, sgd, init_seed, batch_seed),
    }
}
