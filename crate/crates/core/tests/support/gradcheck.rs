//! Central finite-difference gradient check shared by test targets.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use stability_audit::data::{Provenance, RiskDataset};
use stability_audit::models::{init_parameters, loss, loss_gradient, FittedModel, ModelSpec};

pub const STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-5;
/// Denominator floor: below this magnitude the comparison is effectively absolute.
pub const FLOOR: f64 = 1e-4;

pub fn relative_error(numerical: f64, analytical: f64) -> f64 {
    (numerical - analytical).abs() / (numerical.abs() + analytical.abs()).max(FLOOR)
}

pub fn random_dataset(rng: &mut ChaCha8Rng, n: usize, d: usize) -> RiskDataset {
    let x = Array2::from_shape_fn((n, d), |_| rng.random_range(-2.0..2.0));
    let y = Array1::from_shape_fn(n, |_| if rng.random_bool(0.5) { 1.0 } else { 0.0 });
    RiskDataset::new(x, y, None, (0..n as u64).collect(), Provenance::Ingested).unwrap()
}

fn perturbed(model: &FittedModel, flat: &[f64], i: usize, delta: f64) -> FittedModel {
    let mut m = model.clone();
    let mut p = flat.to_vec();
    p[i] += delta;
    m.network_mut().set_flat(&p);
    m
}

/// Returns the worst relative error over all coordinates.
pub fn check(model: &FittedModel, ds: &RiskDataset, lambda: f64) -> (f64, usize) {
    let analytic = loss_gradient(model, ds, lambda).unwrap().to_flat();
    let flat = model.network().to_flat();
    let mut worst = (0.0f64, 0usize);
    for (i, &a) in analytic.iter().enumerate() {
        let plus = loss(&perturbed(model, &flat, i, STEP), ds, lambda).unwrap();
        let minus = loss(&perturbed(model, &flat, i, -STEP), ds, lambda).unwrap();
        let numerical = (plus - minus) / (2.0 * STEP);
        let err = relative_error(numerical, a);
        if err > worst.0 {
            worst = (err, i);
        }
    }
    worst
}

/// Random micro-dataset and a model moved away from its structured start:
/// biases (and logistic weights) get a U(-0.5, 0.5) nudge, MLP weights keep
/// their Glorot draw.
pub fn trial(rng: &mut ChaCha8Rng, spec: &ModelSpec) -> (FittedModel, RiskDataset) {
    let n = rng.random_range(2..=16);
    let d = rng.random_range(1..=4);
    let ds = random_dataset(rng, n, d);
    let mut model = init_parameters(spec, d, rng.random()).unwrap();
    let mlp = !spec.hidden_widths.is_empty();
    for layer in model.network_mut().layers_mut() {
        if !mlp {
            layer
                .weights
                .mapv_inplace(|w| w + rng.random_range(-0.5..0.5));
        }
        layer.bias.mapv_inplace(|b| b + rng.random_range(-0.5..0.5));
    }
    (model, ds)
}
