//! Hypothesis classes: logistic regression (optionally on degree-2 polynomial
//! features) and fully connected ReLU networks with a sigmoid output.
//!
//! Both families are a [`Network`] of affine layers; logistic regression is the
//! single-layer case. The training objective is mean binary cross-entropy plus
//! `lambda * ||W||^2` summed over weight matrices only (biases are unpenalized).

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng as _;
use rand_distr::{Distribution, Normal, Uniform};

use crate::data::{poly2_width, polynomial_expand, RiskDataset, Scaler};
use crate::error::{Error, Result};
use crate::math::{bce, sigmoid};
use crate::seed::rng_from_seed;

/// L2 strength used by every preset unless overridden.
pub const DEFAULT_L2_LAMBDA: f64 = 1e-4;

/// Standard deviation of the Gaussian start used by SGD-trained logistic models.
pub const SGD_LOGISTIC_INIT_SD: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Logistic,
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureExpansion {
    None,
    Poly2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Lbfgs,
    Sgd,
}

/// Named model configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Preset {
    LogLbfgs,
    LogG,
    LogSgd,
    LogPoly,
    Nn1L,
    Nn2L,
    NnG,
}

impl Preset {
    pub const ALL: [Preset; 7] = [
        Preset::LogLbfgs,
        Preset::LogG,
        Preset::LogSgd,
        Preset::LogPoly,
        Preset::Nn1L,
        Preset::Nn2L,
        Preset::NnG,
    ];

    /// The five presets used on simulated data.
    pub const SIMULATION: [Preset; 5] = [
        Preset::LogLbfgs,
        Preset::LogSgd,
        Preset::LogPoly,
        Preset::Nn1L,
        Preset::Nn2L,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::LogLbfgs => "Log-LBFGS",
            Preset::LogG => "Log-G",
            Preset::LogSgd => "Log-SGD",
            Preset::LogPoly => "Log-Poly",
            Preset::Nn1L => "NN-1L",
            Preset::Nn2L => "NN-2L",
            Preset::NnG => "NN-G",
        }
    }

    pub fn spec(self) -> ModelSpec {
        let (family, hidden_widths, feature_expansion, optimizer) = match self {
            Preset::LogLbfgs | Preset::LogG => (
                Family::Logistic,
                vec![],
                FeatureExpansion::None,
                OptimizerKind::Lbfgs,
            ),
            Preset::LogSgd => (
                Family::Logistic,
                vec![],
                FeatureExpansion::None,
                OptimizerKind::Sgd,
            ),
            Preset::LogPoly => (
                Family::Logistic,
                vec![],
                FeatureExpansion::Poly2,
                OptimizerKind::Lbfgs,
            ),
            Preset::Nn1L => (
                Family::Mlp,
                vec![40],
                FeatureExpansion::None,
                OptimizerKind::Sgd,
            ),
            Preset::Nn2L | Preset::NnG => (
                Family::Mlp,
                vec![180, 180],
                FeatureExpansion::None,
                OptimizerKind::Sgd,
            ),
        };
        ModelSpec {
            family,
            hidden_widths,
            feature_expansion,
            optimizer,
            l2_lambda: DEFAULT_L2_LAMBDA,
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let wanted = s.trim().to_ascii_lowercase();
        Preset::ALL
            .into_iter()
            .find(|p| p.name().to_ascii_lowercase() == wanted)
            .ok_or_else(|| {
                Error::config(
                    "model.preset",
                    format!(
                        "unknown preset `{s}` (expected one of {})",
                        Preset::ALL.map(|p| p.name()).join(", ")
                    ),
                )
            })
    }
}

/// Declarative model description. Hidden layers use ReLU; the output unit is a
/// sigmoid.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub family: Family,
    pub hidden_widths: Vec<usize>,
    pub feature_expansion: FeatureExpansion,
    pub optimizer: OptimizerKind,
    pub l2_lambda: f64,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        match self.family {
            Family::Logistic if !self.hidden_widths.is_empty() => {
                return Err(Error::config(
                    "model.hidden_widths",
                    "logistic models have no hidden layers",
                ))
            }
            Family::Mlp if self.hidden_widths.is_empty() => {
                return Err(Error::config(
                    "model.hidden_widths",
                    "an MLP needs at least one hidden layer",
                ))
            }
            _ => {}
        }
        if self.hidden_widths.contains(&0) {
            return Err(Error::config(
                "model.hidden_widths",
                "widths must be positive",
            ));
        }
        if !(self.l2_lambda >= 0.0) || !self.l2_lambda.is_finite() {
            return Err(Error::config(
                "model.l2_lambda",
                "must be a finite value >= 0",
            ));
        }
        Ok(())
    }

    /// Width seen by the first affine layer.
    pub fn network_input_dim(&self, input_dim: usize) -> usize {
        match self.feature_expansion {
            FeatureExpansion::None => input_dim,
            FeatureExpansion::Poly2 => poly2_width(input_dim),
        }
    }

    /// Layer widths from input to output.
    pub fn layer_dims(&self, input_dim: usize) -> Vec<usize> {
        let mut dims = vec![self.network_input_dim(input_dim)];
        dims.extend(&self.hidden_widths);
        dims.push(1);
        dims
    }
}

/// Number of trainable weights and biases.
pub fn param_count(spec: &ModelSpec, input_dim: usize) -> usize {
    spec.layer_dims(input_dim)
        .windows(2)
        .map(|w| w[0] * w[1] + w[1])
        .sum()
}

/// One affine map; `weights` is `fan_in x fan_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weights: Array2::zeros((fan_in, fan_out)),
            bias: Array1::zeros(fan_out),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weights.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.ncols()
    }
}

/// Stack of affine layers: ReLU between layers, sigmoid on the single output.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
}

impl Network {
    pub fn zeros(dims: &[usize]) -> Self {
        Self {
            layers: dims.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect(),
        }
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Size("a network needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.fan_out() {
                return Err(Error::Shape {
                    expected: l.fan_out(),
                    actual: l.bias.len(),
                });
            }
            if let Some(next) = layers.get(i + 1) {
                if next.fan_in() != l.fan_out() {
                    return Err(Error::Shape {
                        expected: l.fan_out(),
                        actual: next.fan_in(),
                    });
                }
            }
        }
        let last = layers.last().expect("non-empty");
        if last.fan_out() != 1 {
            return Err(Error::Shape {
                expected: 1,
                actual: last.fan_out(),
            });
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Parameters in layer order; each layer contributes its weights
    /// (row-major) then its bias.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend(l.weights.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn set_flat(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.param_count(), "flat parameter length");
        let mut it = params.iter();
        for l in &mut self.layers {
            for w in l.weights.iter_mut() {
                *w = *it.next().expect("length checked");
            }
            for b in l.bias.iter_mut() {
                *b = *it.next().expect("length checked");
            }
        }
    }

    /// Sum of squared weights (biases excluded).
    pub fn weight_norm_sq(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| l.weights.iter().map(|w| w * w).sum::<f64>())
            .sum()
    }

    /// `self += scale * other`, layer by layer.
    pub fn scaled_add(&mut self, scale: f64, other: &Network) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights.scaled_add(scale, &b.weights);
            a.bias.scaled_add(scale, &b.bias);
        }
    }

    pub fn logits(&self, x: ArrayView2<'_, f64>) -> Array1<f64> {
        let mut h = x.to_owned();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = h.dot(&l.weights);
            z += &l.bias;
            if i < last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            h = z;
        }
        h.index_axis_move(Axis(1), 0)
    }

    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Array1<f64> {
        self.logits(x).mapv_into(sigmoid)
    }

    /// Mean BCE plus `lambda * ||W||^2`.
    pub fn loss(&self, x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>, lambda: f64) -> f64 {
        let p = self.predict(x);
        let data: f64 = p.iter().zip(y).map(|(&p, &y)| bce(p, y)).sum::<f64>() / y.len() as f64;
        data + lambda * self.weight_norm_sq()
    }

    /// Loss and its gradient by backpropagation. The gradient has the same
    /// layout as `self`.
    pub fn loss_and_gradient(
        &self,
        x: ArrayView2<'_, f64>,
        y: ArrayView1<'_, f64>,
        lambda: f64,
    ) -> (f64, Network) {
        let n = y.len() as f64;
        let last = self.layers.len() - 1;
        // activations[l] is the input to layer l
        let mut activations: Vec<Array2<f64>> = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = h.dot(&l.weights);
            z += &l.bias;
            if i < last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            activations.push(h);
            h = z;
        }
        let logits = h.index_axis_move(Axis(1), 0);
        let p = logits.mapv(sigmoid);

        let data: f64 = p.iter().zip(y).map(|(&p, &y)| bce(p, y)).sum::<f64>() / n;
        let loss = data + lambda * self.weight_norm_sq();

        let mut delta = Array2::<f64>::zeros((p.len(), 1));
        Zip::from(delta.column_mut(0))
            .and(&p)
            .and(y)
            .for_each(|d, &p, &y| *d = (p - y) / n);

        let mut grads: Vec<Layer> = Vec::with_capacity(self.layers.len());
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let input = &activations[i];
            let mut gw = input.t().dot(&delta);
            gw.scaled_add(2.0 * lambda, &layer.weights);
            let gb = delta.sum_axis(Axis(0));
            if i > 0 {
                let mut back = delta.dot(&layer.weights.t());
                // input > 0 iff the ReLU was active
                Zip::from(&mut back).and(input).for_each(|g, &a| {
                    if a <= 0.0 {
                        *g = 0.0;
                    }
                });
                delta = back;
            }
            grads.push(Layer {
                weights: gw,
                bias: gb,
            });
        }
        grads.reverse();
        (loss, Network { layers: grads })
    }
}

/// A trained (or freshly initialized) model with its preprocessing.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedModel {
    spec: ModelSpec,
    network: Network,
    input_dim: usize,
    scaler: Option<Scaler>,
}

impl FittedModel {
    pub fn new(
        spec: ModelSpec,
        network: Network,
        input_dim: usize,
        scaler: Option<Scaler>,
    ) -> Result<Self> {
        spec.validate()?;
        let dims = spec.layer_dims(input_dim);
        let actual: Vec<usize> = std::iter::once(network.input_dim())
            .chain(network.layers().iter().map(Layer::fan_out))
            .collect();
        if dims != actual {
            return Err(Error::Size(format!(
                "network layer widths {actual:?} do not match the model spec ({dims:?})"
            )));
        }
        if let Some(s) = &scaler {
            if s.dim() != input_dim {
                return Err(Error::Shape {
                    expected: input_dim,
                    actual: s.dim(),
                });
            }
        }
        Ok(Self {
            spec,
            network,
            input_dim,
            scaler,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn network_mut(&mut self) -> &mut Network {
        &mut self.network
    }

    pub fn layers(&self) -> &[Layer] {
        self.network.layers()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn scaler(&self) -> Option<&Scaler> {
        self.scaler.as_ref()
    }

    pub fn with_scaler(mut self, scaler: Option<Scaler>) -> Result<Self> {
        if let Some(s) = &scaler {
            if s.dim() != self.input_dim {
                return Err(Error::Shape {
                    expected: self.input_dim,
                    actual: s.dim(),
                });
            }
        }
        self.scaler = scaler;
        Ok(self)
    }

    /// Raw features to network inputs: scaling (if any), then expansion.
    pub fn design_matrix(&self, features: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if features.ncols() != self.input_dim {
            return Err(Error::Shape {
                expected: self.input_dim,
                actual: features.ncols(),
            });
        }
        let scaled = match &self.scaler {
            Some(s) => s.transform(features)?,
            None => features.to_owned(),
        };
        expand(&self.spec, scaled)
    }

    pub fn predict(&self, features: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        let x = self.design_matrix(features)?;
        Ok(self.network.predict(x.view()))
    }
}

/// Applies the model's feature expansion to already-scaled features.
pub fn expand(spec: &ModelSpec, features: Array2<f64>) -> Result<Array2<f64>> {
    match spec.feature_expansion {
        FeatureExpansion::None => Ok(features),
        FeatureExpansion::Poly2 => polynomial_expand(features.view(), 2),
    }
}

pub fn predict(model: &FittedModel, features: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
    model.predict(features)
}

fn check_nonempty(dataset: &RiskDataset) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::Size("loss over an empty dataset".into()));
    }
    Ok(())
}

/// Penalized training objective of `model` on `dataset`.
pub fn loss(model: &FittedModel, dataset: &RiskDataset, l2_lambda: f64) -> Result<f64> {
    check_nonempty(dataset)?;
    let x = model.design_matrix(dataset.features())?;
    Ok(model.network.loss(x.view(), dataset.labels(), l2_lambda))
}

pub fn loss_gradient(
    model: &FittedModel,
    dataset: &RiskDataset,
    l2_lambda: f64,
) -> Result<Network> {
    check_nonempty(dataset)?;
    let x = model.design_matrix(dataset.features())?;
    Ok(model
        .network
        .loss_and_gradient(x.view(), dataset.labels(), l2_lambda)
        .1)
}

/// Starting parameters: Glorot-uniform weights and zero biases for MLPs,
/// N(0, 0.01^2) for SGD-trained logistic models, zeros for L-BFGS logistic
/// models (so their fits do not depend on the seed).
pub fn init_parameters(spec: &ModelSpec, input_dim: usize, seed: u64) -> Result<FittedModel> {
    spec.validate()?;
    if input_dim == 0 {
        return Err(Error::Size("input dimension must be at least 1".into()));
    }
    let dims = spec.layer_dims(input_dim);
    let mut network = Network::zeros(&dims);
    let mut rng = rng_from_seed(seed);
    match (spec.family, spec.optimizer) {
        (Family::Mlp, _) => {
            for layer in network.layers_mut() {
                let bound = glorot_bound(layer.fan_in(), layer.fan_out());
                let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
                for w in layer.weights.iter_mut() {
                    *w = dist.sample(&mut rng);
                }
            }
        }
        (Family::Logistic, OptimizerKind::Sgd) => {
            let dist = Normal::new(0.0, SGD_LOGISTIC_INIT_SD).expect("positive sd");
            for layer in network.layers_mut() {
                for w in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
                    *w = rng.sample(dist);
                }
            }
        }
        (Family::Logistic, OptimizerKind::Lbfgs) => {}
    }
    FittedModel::new(spec.clone(), network, input_dim, None)
}

pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

fn join<T: ToString>(values: impl IntoIterator<Item = T>, sep: &str) -> String {
    values
        .into_iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(sep)
}

const MODEL_MAGIC: &str = "stability-audit-model v1";

impl FittedModel {
    /// Self-describing text form: a `key=value` header followed by one block
    /// per layer (weights row by row, then the bias row).
    pub fn to_text(&self) -> String {
        let spec = &self.spec;
        let mut out = String::new();
        out.push_str(MODEL_MAGIC);
        out.push('\n');
        let family = match spec.family {
            Family::Logistic => "logistic",
            Family::Mlp => "mlp",
        };
        let expansion = match spec.feature_expansion {
            FeatureExpansion::None => "none",
            FeatureExpansion::Poly2 => "poly2",
        };
        let optimizer = match spec.optimizer {
            OptimizerKind::Lbfgs => "lbfgs",
            OptimizerKind::Sgd => "sgd",
        };
        out.push_str(&format!("family={family}\n"));
        out.push_str(&format!(
            "hidden_widths={}\n",
            join(&spec.hidden_widths, ",")
        ));
        out.push_str(&format!("feature_expansion={expansion}\n"));
        out.push_str(&format!("optimizer={optimizer}\n"));
        out.push_str(&format!("l2_lambda={}\n", spec.l2_lambda));
        out.push_str(&format!("input_dim={}\n", self.input_dim));
        match &self.scaler {
            Some(s) => {
                out.push_str(&format!("scaler_means={}\n", join(s.means(), ",")));
                out.push_str(&format!("scaler_std_devs={}\n", join(s.std_devs(), ",")));
            }
            None => out.push_str("scaler=none\n"),
        }
        out.push_str(&format!("layers={}\n", self.network.layers.len()));
        for (i, l) in self.network.layers.iter().enumerate() {
            out.push_str(&format!("layer {i} {} {}\n", l.fan_in(), l.fan_out()));
            for row in l.weights.outer_iter() {
                out.push_str(&join(row.iter(), " "));
                out.push('\n');
            }
            out.push_str(&join(l.bias.iter(), " "));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |msg: String| Error::InvalidDataset(format!("model file: {msg}"));
        let mut lines = text.lines();
        if lines.next() != Some(MODEL_MAGIC) {
            return Err(bad("missing header".into()));
        }
        let mut header = std::collections::BTreeMap::new();
        for line in lines.by_ref() {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("bad header line `{line}`")))?;
            header.insert(k.to_string(), v.to_string());
            if k == "layers" {
                break;
            }
        }
        let get = |k: &str| {
            header
                .get(k)
                .cloned()
                .ok_or_else(|| bad(format!("missing `{k}`")))
        };
        let floats = |s: &str, sep: char| -> Result<Vec<f64>> {
            if s.is_empty() {
                return Ok(vec![]);
            }
            s.split(sep)
                .map(|v| {
                    v.parse::<f64>()
                        .map_err(|_| bad(format!("bad number `{v}`")))
                })
                .collect()
        };
        let family = match get("family")?.as_str() {
            "logistic" => Family::Logistic,
            "mlp" => Family::Mlp,
            other => return Err(bad(format!("unknown family `{other}`"))),
        };
        let hidden = get("hidden_widths")?;
        let hidden_widths = if hidden.is_empty() {
            vec![]
        } else {
            hidden
                .split(',')
                .map(|v| {
                    v.parse::<usize>()
                        .map_err(|_| bad(format!("bad width `{v}`")))
                })
                .collect::<Result<Vec<_>>>()?
        };
        let feature_expansion = match get("feature_expansion")?.as_str() {
            "none" => FeatureExpansion::None,
            "poly2" => FeatureExpansion::Poly2,
            other => return Err(bad(format!("unknown expansion `{other}`"))),
        };
        let optimizer = match get("optimizer")?.as_str() {
            "lbfgs" => OptimizerKind::Lbfgs,
            "sgd" => OptimizerKind::Sgd,
            other => return Err(bad(format!("unknown optimizer `{other}`"))),
        };
        let l2_lambda = get("l2_lambda")?
            .parse()
            .map_err(|_| bad("bad l2_lambda".into()))?;
        let input_dim: usize = get("input_dim")?
            .parse()
            .map_err(|_| bad("bad input_dim".into()))?;
        let scaler = if header.get("scaler").map(String::as_str) == Some("none") {
            None
        } else {
            Some(Scaler::from_parts(
                floats(&get("scaler_means")?, ',')?,
                floats(&get("scaler_std_devs")?, ',')?,
            )?)
        };
        let n_layers: usize = get("layers")?
            .parse()
            .map_err(|_| bad("bad layers".into()))?;
        let mut layers = Vec::with_capacity(n_layers);
        for i in 0..n_layers {
            let head = lines
                .next()
                .ok_or_else(|| bad(format!("missing layer {i}")))?;
            let parts: Vec<&str> = head.split_whitespace().collect();
            if parts.len() != 4 || parts[0] != "layer" {
                return Err(bad(format!("bad layer header `{head}`")));
            }
            let fan_in: usize = parts[2].parse().map_err(|_| bad("bad fan_in".into()))?;
            let fan_out: usize = parts[3].parse().map_err(|_| bad("bad fan_out".into()))?;
            let mut weights = Vec::with_capacity(fan_in * fan_out);
            for _ in 0..fan_in {
                let row = floats(lines.next().unwrap_or(""), ' ')?;
                if row.len() != fan_out {
                    return Err(bad(format!(
                        "layer {i}: weight row has {} entries",
                        row.len()
                    )));
                }
                weights.extend(row);
            }
            let bias = floats(lines.next().unwrap_or(""), ' ')?;
            if bias.len() != fan_out {
                return Err(bad(format!("layer {i}: bias has {} entries", bias.len())));
            }
            layers.push(Layer {
                weights: Array2::from_shape_vec((fan_in, fan_out), weights).expect("sized"),
                bias: Array1::from(bias),
            });
        }
        let spec = ModelSpec {
            family,
            hidden_widths,
            feature_expansion,
            optimizer,
            l2_lambda,
        };
        FittedModel::new(spec, Network::from_layers(layers)?, input_dim, scaler)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Provenance;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn dataset(x: Array2<f64>, y: Vec<f64>) -> RiskDataset {
        let n = y.len();
        RiskDataset::new(
            x,
            Array1::from(y),
            None,
            (0..n as u64).collect(),
            Provenance::Ingested,
        )
        .unwrap()
    }

    #[test]
    fn table_parameter_counts() {
        assert_eq!(param_count(&Preset::LogLbfgs.spec(), 5), 6);
        assert_eq!(param_count(&Preset::LogSgd.spec(), 5), 6);
        assert_eq!(param_count(&Preset::LogG.spec(), 8), 9);
        assert_eq!(param_count(&Preset::LogPoly.spec(), 5), 21);
        assert_eq!(param_count(&Preset::Nn1L.spec(), 5), 281);
        assert_eq!(param_count(&Preset::Nn2L.spec(), 5), 33_841);
        assert_eq!(param_count(&Preset::NnG.spec(), 8), 34_381);
    }

    #[test]
    fn param_count_matches_realized_layers() {
        for preset in Preset::ALL {
            for d in 1..=10 {
                let m = init_parameters(&preset.spec(), d, 1).unwrap();
                assert_eq!(
                    m.network().param_count(),
                    param_count(&preset.spec(), d),
                    "{preset} d={d}"
                );
                assert_eq!(m.network().to_flat().len(), param_count(&preset.spec(), d));
            }
        }
    }

    #[test]
    fn spec_invariants() {
        let mut spec = Preset::LogLbfgs.spec();
        spec.hidden_widths = vec![3];
        assert!(spec.validate().is_err());
        let mut spec = Preset::Nn1L.spec();
        spec.hidden_widths.clear();
        assert!(spec.validate().is_err());
        let mut spec = Preset::Nn1L.spec();
        spec.l2_lambda = -1.0;
        assert!(spec.validate().is_err());
        assert_eq!("nn-2l".parse::<Preset>().unwrap(), Preset::Nn2L);
        assert!("NN-3L".parse::<Preset>().is_err());
    }

    #[test]
    fn zero_parameters_predict_half() {
        let x = array![[1.0, -2.0, 3.0], [0.5, 0.0, -1.0]];
        for preset in [Preset::LogLbfgs, Preset::Nn2L, Preset::LogPoly] {
            let spec = preset.spec();
            let model =
                FittedModel::new(spec.clone(), Network::zeros(&spec.layer_dims(3)), 3, None)
                    .unwrap();
            assert!(model.predict(x.view()).unwrap().iter().all(|&p| p == 0.5));
        }
    }

    #[test]
    fn logistic_prediction_value() {
        let spec = Preset::LogLbfgs.spec();
        let mut model = init_parameters(&spec, 3, 0).unwrap();
        model.network_mut().layers_mut()[0].weights[[0, 0]] = 1.0;
        let p = model.predict(array![[1.0, 0.0, 0.0]].view()).unwrap();
        assert_abs_diff_eq!(p[0], 0.731_058_578_630_004_9, epsilon = 1e-12);
    }

    #[test]
    fn predict_rejects_wrong_width() {
        let model = init_parameters(&Preset::Nn1L.spec(), 3, 0).unwrap();
        assert!(matches!(
            model.predict(Array2::zeros((2, 4)).view()),
            Err(Error::Shape {
                expected: 3,
                actual: 4
            })
        ));
    }

    #[test]
    fn loss_examples() {
        let spec = Preset::LogLbfgs.spec();
        let model = init_parameters(&spec, 2, 0).unwrap();
        let ds = dataset(
            array![[1.0, 2.0], [3.0, -1.0], [0.0, 0.0]],
            vec![1.0, 0.0, 1.0],
        );
        assert_abs_diff_eq!(
            loss(&model, &ds, 0.0).unwrap(),
            std::f64::consts::LN_2,
            epsilon = 1e-15
        );

        let mut model = init_parameters(&spec, 1, 0).unwrap();
        model.network_mut().layers_mut()[0].weights[[0, 0]] = 1.0;
        let one = dataset(array![[1.0]], vec![1.0]);
        assert_abs_diff_eq!(
            loss(&model, &one, 0.0).unwrap(),
            0.313_261_687_518_222_8,
            epsilon = 1e-12
        );

        let empty = dataset(Array2::zeros((0, 1)), vec![]);
        assert!(matches!(loss(&model, &empty, 0.0), Err(Error::Size(_))));
    }

    #[test]
    fn penalty_covers_weights_only() {
        let spec = Preset::Nn1L.spec();
        let mut model = init_parameters(&spec, 3, 5).unwrap();
        for l in model.network_mut().layers_mut() {
            l.bias.fill(0.3);
        }
        let ds = dataset(array![[1.0, 2.0, 0.5], [-1.0, 0.0, 2.0]], vec![1.0, 0.0]);
        let base = loss(&model, &ds, 0.0).unwrap();
        let pen = loss(&model, &ds, 0.1).unwrap();
        assert_abs_diff_eq!(
            pen - base,
            0.1 * model.network().weight_norm_sq(),
            epsilon = 1e-12
        );
        let w2: f64 = model
            .layers()
            .iter()
            .flat_map(|l| l.weights.iter())
            .map(|w| w * w)
            .sum();
        assert_abs_diff_eq!(model.network().weight_norm_sq(), w2, epsilon = 1e-12);
    }

    #[test]
    fn monotone_in_positive_weight_feature() {
        let spec = Preset::LogLbfgs.spec();
        let mut model = init_parameters(&spec, 2, 0).unwrap();
        model.network_mut().layers_mut()[0].weights[[0, 0]] = 0.7;
        model.network_mut().layers_mut()[0].weights[[1, 0]] = -0.2;
        let p = model
            .predict(array![[-1.0, 1.0], [0.0, 1.0], [1.5, 1.0]].view())
            .unwrap();
        assert!(p[0] < p[1] && p[1] < p[2]);
    }

    #[test]
    fn init_schemes() {
        let lbfgs = Preset::LogLbfgs.spec();
        assert_eq!(
            init_parameters(&lbfgs, 5, 1).unwrap(),
            init_parameters(&lbfgs, 5, 2).unwrap()
        );
        assert!(init_parameters(&lbfgs, 5, 1)
            .unwrap()
            .network()
            .to_flat()
            .iter()
            .all(|&w| w == 0.0));

        let nn = Preset::Nn2L.spec();
        assert_eq!(
            init_parameters(&nn, 5, 3).unwrap(),
            init_parameters(&nn, 5, 3).unwrap()
        );
        assert_ne!(
            init_parameters(&nn, 5, 3).unwrap(),
            init_parameters(&nn, 5, 4).unwrap()
        );

        let nn1 = init_parameters(&Preset::Nn1L.spec(), 5, 9).unwrap();
        let bound = glorot_bound(5, 40);
        assert_abs_diff_eq!(bound, 0.365_148_371_670_110_7, epsilon = 1e-12);
        let first = &nn1.layers()[0];
        assert!(first.weights.iter().all(|w| w.abs() <= bound));
        assert!(first.bias.iter().all(|&b| b == 0.0));

        let sgd = init_parameters(&Preset::LogSgd.spec(), 5, 11).unwrap();
        let flat = sgd.network().to_flat();
        assert!(flat.iter().any(|&w| w != 0.0));
        assert!(flat.iter().all(|w| w.abs() < 0.1));
    }

    #[test]
    fn text_round_trip() {
        let pop =
            crate::data::generate_population(&crate::data::DgpSpec::simulation_default(), 40, 3)
                .unwrap();
        let scaler = crate::data::fit_scaler(&pop).unwrap();
        for preset in [Preset::LogPoly, Preset::Nn1L] {
            let model = init_parameters(&preset.spec(), 5, 2)
                .unwrap()
                .with_scaler(Some(scaler.clone()))
                .unwrap();
            let back = FittedModel::from_text(&model.to_text()).unwrap();
            assert_eq!(back, model);
        }
        assert!(FittedModel::from_text("nonsense").is_err());
    }
}
