use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::AdamState;
use super::config::HeadConfig;
use super::loss::{focal_logit_gradient, focal_loss};
use crate::embedstore::EmbeddingDataset;
use crate::metrics::argmax;
use crate::{Error, Result};

/// Fully connected layer, weights row-major `[outputs x inputs]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    /// Glorot-uniform weights, zero bias.
    fn glorot<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        Self {
            inputs,
            outputs,
            weights: (0..inputs * outputs)
                .map(|_| rng.random_range(-limit..=limit))
                .collect(),
            bias: vec![0.0; outputs],
        }
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for (row, b) in self.weights.chunks_exact(self.inputs).zip(&self.bias) {
            let mut acc = *b;
            for (w, v) in row.iter().zip(x) {
                acc += w * v;
            }
            out.push(acc);
        }
    }

    fn accumulate_outer(&mut self, delta: &[f64], input: &[f64]) {
        for ((row, b), &d) in self
            .weights
            .chunks_exact_mut(self.inputs)
            .zip(self.bias.iter_mut())
            .zip(delta)
        {
            if d == 0.0 {
                continue;
            }
            for (w, &v) in row.iter_mut().zip(input) {
                *w += d * v;
            }
            *b += d;
        }
    }

    fn scale(&mut self, k: f64) {
        self.weights.iter_mut().for_each(|w| *w *= k);
        self.bias.iter_mut().for_each(|b| *b *= k);
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Network parameters plus ADAM moments. Tensor order everywhere is
/// `[hidden.weights, hidden.bias, output.weights, output.bias]`, hidden omitted when absent.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadModel {
    pub config: HeadConfig,
    pub hidden: Option<Dense>,
    pub output: Dense,
    pub adam: AdamState,
}

/// Gradients mirror the model's layer shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub hidden: Option<Dense>,
    pub output: Dense,
}

impl Gradients {
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut t: Vec<&[f64]> = Vec::with_capacity(4);
        if let Some(h) = &self.hidden {
            t.push(&h.weights);
            t.push(&h.bias);
        }
        t.push(&self.output.weights);
        t.push(&self.output.bias);
        t
    }
}

impl HeadModel {
    pub fn input_dim(&self) -> usize {
        self.hidden.as_ref().unwrap_or(&self.output).inputs
    }

    pub fn num_classes(&self) -> usize {
        self.output.outputs
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut t: Vec<&[f64]> = Vec::with_capacity(4);
        if let Some(h) = &self.hidden {
            t.push(&h.weights);
            t.push(&h.bias);
        }
        t.push(&self.output.weights);
        t.push(&self.output.bias);
        t
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t: Vec<&mut [f64]> = Vec::with_capacity(4);
        if let Some(h) = &mut self.hidden {
            t.push(&mut h.weights);
            t.push(&mut h.bias);
        }
        t.push(&mut self.output.weights);
        t.push(&mut self.output.bias);
        t
    }

    pub fn parameter_count(&self) -> usize {
        self.hidden.as_ref().map_or(0, Dense::param_count) + self.output.param_count()
    }

    fn zero_gradients(&self) -> Gradients {
        Gradients {
            hidden: self.hidden.as_ref().map(|h| Dense::zeros(h.inputs, h.outputs)),
            output: Dense::zeros(self.output.inputs, self.output.outputs),
        }
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                what: "head input".into(),
                expected: self.input_dim(),
                actual: x.len(),
            });
        }
        Ok(())
    }

    /// Forward pass keeping intermediates in `scratch`; returns probabilities in `scratch.probs`.
    fn forward_into(&self, x: &[f64], scratch: &mut Scratch) {
        let features: &[f64] = match &self.hidden {
            Some(h) => {
                h.apply(x, &mut scratch.pre);
                scratch.act.clear();
                scratch.act.extend(scratch.pre.iter().map(|&v| v.max(0.0)));
                &scratch.act
            }
            None => x,
        };
        self.output.apply(features, &mut scratch.probs);
        softmax_in_place(&mut scratch.probs);
    }
}

#[derive(Default)]
struct Scratch {
    pre: Vec<f64>,
    act: Vec<f64>,
    probs: Vec<f64>,
    dlogits: Vec<f64>,
    dhidden: Vec<f64>,
}

/// Builds a freshly initialized head from a validated config.
pub fn init_head(cfg: &HeadConfig) -> Result<HeadModel> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (hidden, out_inputs) = match cfg.hidden_dim {
        Some(h) => (Some(Dense::glorot(cfg.input_dim, h, &mut rng)), h),
        None => (None, cfg.input_dim),
    };
    let output = Dense::glorot(out_inputs, cfg.num_classes, &mut rng);
    let mut model = HeadModel {
        config: cfg.clone(),
        hidden,
        output,
        adam: AdamState::default(),
    };
    model.adam = AdamState::zeros_like(&model.tensors());
    Ok(model)
}

/// Numerically stable softmax (max subtraction).
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let mut p = z.to_vec();
    softmax_in_place(&mut p);
    p
}

fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

/// Class probabilities for one embedding.
pub fn forward(model: &HeadModel, x: &[f64]) -> Result<Vec<f64>> {
    model.check_input(x)?;
    let mut scratch = Scratch::default();
    model.forward_into(x, &mut scratch);
    Ok(scratch.probs)
}

fn check_batch(model: &HeadModel, batch_x: &[f64], batch_y: &[usize], alpha: &[f64]) -> Result<usize> {
    let dim = model.input_dim();
    if batch_y.is_empty() {
        return Err(Error::Empty("empty training batch".into()));
    }
    if batch_x.len() != batch_y.len() * dim {
        return Err(Error::DimensionMismatch {
            what: "batch matrix".into(),
            expected: batch_y.len() * dim,
            actual: batch_x.len(),
        });
    }
    if alpha.len() != model.num_classes() {
        return Err(Error::DimensionMismatch {
            what: "alpha weights".into(),
            expected: model.num_classes(),
            actual: alpha.len(),
        });
    }
    if let Some(&y) = batch_y.iter().find(|&&y| y >= model.num_classes()) {
        return Err(Error::Invariant(format!(
            "label {y} out of range for {} classes",
            model.num_classes()
        )));
    }
    Ok(dim)
}

/// Mean focal loss over a row-major batch.
pub fn batch_loss(model: &HeadModel, batch_x: &[f64], batch_y: &[usize], gamma: f64, alpha: &[f64]) -> Result<f64> {
    let dim = check_batch(model, batch_x, batch_y, alpha)?;
    let mut scratch = Scratch::default();
    let mut total = 0.0;
    for (x, &y) in batch_x.chunks_exact(dim).zip(batch_y) {
        model.forward_into(x, &mut scratch);
        total += focal_loss(&scratch.probs, y, gamma, alpha);
    }
    Ok(total / batch_y.len() as f64)
}

/// Mean-over-batch gradients of the focal loss for every parameter, plus the mean loss.
pub fn backward(
    model: &HeadModel,
    batch_x: &[f64],
    batch_y: &[usize],
    gamma: f64,
    alpha: &[f64],
) -> Result<(Gradients, f64)> {
    let dim = check_batch(model, batch_x, batch_y, alpha)?;
    let mut grads = model.zero_gradients();
    let mut scratch = Scratch::default();
    let mut total = 0.0;
    for (x, &y) in batch_x.chunks_exact(dim).zip(batch_y) {
        model.forward_into(x, &mut scratch);
        total += focal_loss(&scratch.probs, y, gamma, alpha);
        scratch.dlogits.resize(model.num_classes(), 0.0);
        focal_logit_gradient(&scratch.probs, y, gamma, alpha, &mut scratch.dlogits);
        match &model.hidden {
            None => grads.output.accumulate_outer(&scratch.dlogits, x),
            Some(_) => {
                grads.output.accumulate_outer(&scratch.dlogits, &scratch.act);
                let out = &model.output;
                scratch.dhidden.clear();
                scratch.dhidden.resize(out.inputs, 0.0);
                for (row, &d) in out.weights.chunks_exact(out.inputs).zip(&scratch.dlogits) {
                    for (dh, &w) in scratch.dhidden.iter_mut().zip(row) {
                        *dh += d * w;
                    }
                }
                for (dh, &pre) in scratch.dhidden.iter_mut().zip(&scratch.pre) {
                    if pre <= 0.0 {
                        *dh = 0.0;
                    }
                }
                grads
                    .hidden
                    .as_mut()
                    .expect("hidden gradients exist with a hidden layer")
                    .accumulate_outer(&scratch.dhidden, x);
            }
        }
    }
    let inv = 1.0 / batch_y.len() as f64;
    if let Some(h) = &mut grads.hidden {
        h.scale(inv);
    }
    grads.output.scale(inv);
    Ok((grads, total * inv))
}

/// Argmax class per row (lowest index on ties) and the full `rows x classes` probabilities.
pub fn predict(model: &HeadModel, ds: &EmbeddingDataset) -> Result<(Vec<u32>, Vec<f64>)> {
    if ds.dim() != model.input_dim() {
        return Err(Error::DimensionMismatch {
            what: "store dim vs head input_dim".into(),
            expected: model.input_dim(),
            actual: ds.dim(),
        });
    }
    let mut scratch = Scratch::default();
    let mut x = Vec::with_capacity(ds.dim());
    let mut classes = Vec::with_capacity(ds.rows());
    let mut probs = Vec::with_capacity(ds.rows() * model.num_classes());
    for (row, _) in ds.iter_rows() {
        x.clear();
        x.extend(row.iter().map(|&v| v as f64));
        model.forward_into(&x, &mut scratch);
        classes.push(argmax(&scratch.probs) as u32);
        probs.extend_from_slice(&scratch.probs);
    }
    Ok((classes, probs))
}
