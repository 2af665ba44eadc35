//! From-scratch multilayer perceptron with deterministic seeded training.
//!
//! Rectifier hidden layers, a softmax or linear output, full-batch Adam.
//! No minibatching anywhere: stochastic gradients made results vary across
//! runs, and the selection networks are trained on at most a few hundred
//! points in 2-D, so determinism costs nothing.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum AnnError {
    #[error("layer dims need an input and an output layer, got {0:?}")]
    TooFewLayers(Vec<usize>),
    #[error("input has {got} rows, network expects {expected}")]
    DimensionMismatch { got: usize, expected: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("batch has {inputs} inputs but {targets} targets")]
    BatchMismatch { inputs: usize, targets: usize },
}

/// Output nonlinearity of the final layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputMode {
    Softmax,
    Linear,
}

/// Training loss; softmax outputs pair with cross-entropy, linear outputs
/// with mean squared error.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Loss {
    CrossEntropy,
    MeanSquaredError,
}

/// Training controls shared by the classifier and regressor paths.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Epochs between accuracy / plateau checks.
    pub max_epochs_per_round: usize,
    pub max_rounds: usize,
    pub seed: u64,
    pub loss: Loss,
    /// Relative loss decrease over 100 epochs below which regression
    /// training stops.
    pub plateau_tol: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            max_epochs_per_round: 500,
            max_rounds: 20,
            seed: 0,
            loss: Loss::MeanSquaredError,
            plateau_tol: 1e-10,
        }
    }
}

/// Dense feed-forward network.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layer_dims: Vec<usize>,
    /// `weights[l]` maps layer `l` activations (dims[l]) to layer `l+1`.
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
    pub output: OutputMode,
}

impl Mlp {
    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn parameter_count(&self) -> usize {
        self.weights
            .iter()
            .map(|w| w.len())
            .chain(self.biases.iter().map(|b| b.len()))
            .sum()
    }
}

/// Glorot-uniform initialization, biases zero, fully determined by the
/// seed (weights are drawn layer by layer in row-major order).
pub fn mlp_init(layer_dims: &[usize], output: OutputMode, seed: u64) -> Result<Mlp, AnnError> {
    if layer_dims.len() < 2 || layer_dims.contains(&0) {
        return Err(AnnError::TooFewLayers(layer_dims.to_vec()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for pair in layer_dims.windows(2) {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let mut w = DMatrix::zeros(fan_out, fan_in);
        for i in 0..fan_out {
            for j in 0..fan_in {
                w[(i, j)] = bound * (2.0 * rng.random::<f64>() - 1.0);
            }
        }
        weights.push(w);
        biases.push(DVector::zeros(fan_out));
    }
    Ok(Mlp {
        layer_dims: layer_dims.to_vec(),
        weights,
        biases,
        output,
    })
}

fn relu_in_place(z: &mut DMatrix<f64>) {
    for v in z.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Numerically safe column-wise softmax.
fn softmax_columns(z: &mut DMatrix<f64>) {
    for mut col in z.column_iter_mut() {
        let max = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in col.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in col.iter_mut() {
            *v /= sum;
        }
    }
}

/// Forward pass for a batch (one sample per column).
pub fn forward_batch(net: &Mlp, inputs: &DMatrix<f64>) -> Result<DMatrix<f64>, AnnError> {
    if inputs.nrows() != net.input_dim() {
        return Err(AnnError::DimensionMismatch {
            got: inputs.nrows(),
            expected: net.input_dim(),
        });
    }
    let mut activation = inputs.clone();
    let last = net.weights.len() - 1;
    for (l, (w, b)) in net.weights.iter().zip(&net.biases).enumerate() {
        let mut z = w * &activation;
        for mut col in z.column_iter_mut() {
            col += b;
        }
        if l < last {
            relu_in_place(&mut z);
        } else if net.output == OutputMode::Softmax {
            softmax_columns(&mut z);
        }
        activation = z;
    }
    Ok(activation)
}

/// Forward pass for one sample.
pub fn forward(net: &Mlp, x: &DVector<f64>) -> Result<DVector<f64>, AnnError> {
    let out = forward_batch(net, &DMatrix::from_column_slice(x.len(), 1, x.as_slice()))?;
    Ok(out.column(0).into_owned())
}

/// Parameter gradients, laid out like the network.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub d_weights: Vec<DMatrix<f64>>,
    pub d_biases: Vec<DVector<f64>>,
}

/// Full-batch loss and gradient by backpropagation.
///
/// Cross-entropy expects one-hot target columns and a softmax output; the
/// loss is the mean negative log-likelihood over the batch. Mean squared
/// error sums over output components and averages over the batch.
pub fn loss_grad(
    net: &Mlp,
    inputs: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    loss: Loss,
) -> Result<(f64, Gradients), AnnError> {
    if inputs.ncols() != targets.ncols() {
        return Err(AnnError::BatchMismatch {
            inputs: inputs.ncols(),
            targets: targets.ncols(),
        });
    }
    if inputs.nrows() != net.input_dim() {
        return Err(AnnError::DimensionMismatch {
            got: inputs.nrows(),
            expected: net.input_dim(),
        });
    }
    if targets.nrows() != net.output_dim() {
        return Err(AnnError::DimensionMismatch {
            got: targets.nrows(),
            expected: net.output_dim(),
        });
    }
    let batch = inputs.ncols();
    let inv_batch = 1.0 / batch as f64;
    let last = net.weights.len() - 1;

    // Forward pass keeping activations per layer.
    let mut activations = vec![inputs.clone()];
    for (l, (w, b)) in net.weights.iter().zip(&net.biases).enumerate() {
        let mut z = w * activations.last().unwrap();
        for mut col in z.column_iter_mut() {
            col += b;
        }
        if l < last {
            relu_in_place(&mut z);
        } else if net.output == OutputMode::Softmax {
            softmax_columns(&mut z);
        }
        activations.push(z);
    }
    let prediction = activations.last().unwrap();

    let (loss_value, mut delta) = match loss {
        Loss::CrossEntropy => {
            let mut total = 0.0;
            for j in 0..batch {
                for i in 0..net.output_dim() {
                    if targets[(i, j)] > 0.0 {
                        total -= targets[(i, j)] * prediction[(i, j)].max(1e-300).ln();
                    }
                }
            }
            // Softmax + cross-entropy: output delta collapses to p - y.
            let delta = (prediction - targets) * inv_batch;
            (total * inv_batch, delta)
        }
        Loss::MeanSquaredError => {
            let diff = prediction - targets;
            let total: f64 = diff.iter().map(|v| v * v).sum();
            let delta = 2.0 * inv_batch * diff;
            (total * inv_batch, delta)
        }
    };

    let mut d_weights = vec![DMatrix::zeros(0, 0); net.weights.len()];
    let mut d_biases = vec![DVector::zeros(0); net.biases.len()];
    for l in (0..net.weights.len()).rev() {
        d_weights[l] = &delta * activations[l].transpose();
        d_biases[l] = DVector::from_fn(delta.nrows(), |i, _| delta.row(i).sum());
        if l > 0 {
            let mut back = net.weights[l].transpose() * &delta;
            // Rectifier gate: the activation is positive iff the unit fired.
            for (v, &a) in back.iter_mut().zip(activations[l].iter()) {
                if a <= 0.0 {
                    *v = 0.0;
                }
            }
            delta = back;
        }
    }

    Ok((
        loss_value,
        Gradients {
            d_weights,
            d_biases,
        },
    ))
}

struct AdamState {
    m_w: Vec<DMatrix<f64>>,
    v_w: Vec<DMatrix<f64>>,
    m_b: Vec<DVector<f64>>,
    v_b: Vec<DVector<f64>>,
    t: usize,
}

impl AdamState {
    fn new(net: &Mlp) -> Self {
        Self {
            m_w: net.weights.iter().map(|w| DMatrix::zeros(w.nrows(), w.ncols())).collect(),
            v_w: net.weights.iter().map(|w| DMatrix::zeros(w.nrows(), w.ncols())).collect(),
            m_b: net.biases.iter().map(|b| DVector::zeros(b.len())).collect(),
            v_b: net.biases.iter().map(|b| DVector::zeros(b.len())).collect(),
            t: 0,
        }
    }

    fn step(&mut self, net: &mut Mlp, grads: &Gradients, lr: f64) {
        self.t += 1;
        let t = self.t as f64;
        let corr1 = 1.0 - ADAM_BETA1.powf(t);
        let corr2 = 1.0 - ADAM_BETA2.powf(t);
        for l in 0..net.weights.len() {
            for (idx, g) in grads.d_weights[l].iter().enumerate() {
                let m = &mut self.m_w[l].as_mut_slice()[idx];
                *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                let m_hat = *m / corr1;
                let v = &mut self.v_w[l].as_mut_slice()[idx];
                *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                let v_hat = *v / corr2;
                net.weights[l].as_mut_slice()[idx] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
            for (idx, g) in grads.d_biases[l].iter().enumerate() {
                let m = &mut self.m_b[l].as_mut_slice()[idx];
                *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                let m_hat = *m / corr1;
                let v = &mut self.v_b[l].as_mut_slice()[idx];
                *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                let v_hat = *v / corr2;
                net.biases[l].as_mut_slice()[idx] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
    }
}

/// One-hot encoding of class labels.
pub fn one_hot(labels: &[usize], classes: usize) -> Result<DMatrix<f64>, AnnError> {
    let mut targets = DMatrix::zeros(classes, labels.len());
    for (j, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(AnnError::LabelOutOfRange { label, classes });
        }
        targets[(label, j)] = 1.0;
    }
    Ok(targets)
}

/// Fraction of samples whose argmax matches the label.
pub fn classification_accuracy(net: &Mlp, inputs: &DMatrix<f64>, labels: &[usize]) -> f64 {
    let out = forward_batch(net, inputs).expect("dimensions checked at training time");
    let mut hits = 0usize;
    for (j, &label) in labels.iter().enumerate() {
        let predicted = out
            .column(j)
            .iter()
            .enumerate()
            .max_by(|(ia, a), (ib, b)| a.partial_cmp(b).unwrap().then(ib.cmp(ia)))
            .map(|(i, _)| i)
            .unwrap();
        if predicted == label {
            hits += 1;
        }
    }
    hits as f64 / labels.len() as f64
}

/// A trained classification network plus whether the perfect-match goal was
/// reached within the round budget (the caller decides what a miss means).
#[derive(Debug, Clone)]
pub struct TrainedClassifier {
    pub net: Mlp,
    pub perfect_match: bool,
    pub accuracy: f64,
    pub epochs: usize,
    pub final_loss: f64,
}

/// Trains a softmax classifier with full-batch Adam until the training set
/// is matched exactly. Training runs in rounds of `max_epochs_per_round`
/// epochs; after each round the training accuracy is checked and the loop
/// stops at 100% or after `max_rounds`.
pub fn train_classifier(
    inputs: &DMatrix<f64>,
    labels: &[usize],
    layer_dims: &[usize],
    cfg: &TrainConfig,
) -> Result<TrainedClassifier, AnnError> {
    let classes = *layer_dims.last().ok_or_else(|| AnnError::TooFewLayers(vec![]))?;
    let targets = one_hot(labels, classes)?;
    let mut net = mlp_init(layer_dims, OutputMode::Softmax, cfg.seed)?;
    let mut adam = AdamState::new(&net);
    let mut epochs = 0;
    let mut final_loss = f64::INFINITY;
    let mut accuracy = classification_accuracy(&net, inputs, labels);
    let mut perfect = accuracy == 1.0 && {
        // Even a perfect argmax at initialization still gets one round of
        // training so the decision margins are real.
        false
    };
    for _round in 0..cfg.max_rounds {
        for _ in 0..cfg.max_epochs_per_round {
            let (loss, grads) = loss_grad(&net, inputs, &targets, Loss::CrossEntropy)?;
            adam.step(&mut net, &grads, cfg.learning_rate);
            final_loss = loss;
            epochs += 1;
        }
        accuracy = classification_accuracy(&net, inputs, labels);
        if accuracy == 1.0 {
            perfect = true;
            break;
        }
    }
    Ok(TrainedClassifier {
        net,
        perfect_match: perfect,
        accuracy,
        epochs,
        final_loss,
    })
}

/// A trained regression network with its loss history (sampled every 100
/// epochs).
#[derive(Debug, Clone)]
pub struct TrainedRegressor {
    pub net: Mlp,
    pub final_loss: f64,
    pub epochs: usize,
    pub loss_history: Vec<f64>,
}

/// Trains a linear-output regressor with full-batch Adam on mean squared
/// error. Stops when the relative loss decrease over 100 epochs falls below
/// `plateau_tol`, or after `max_rounds * max_epochs_per_round` epochs.
pub fn train_regressor(
    inputs: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    layer_dims: &[usize],
    cfg: &TrainConfig,
) -> Result<TrainedRegressor, AnnError> {
    let mut net = mlp_init(layer_dims, OutputMode::Linear, cfg.seed)?;
    let mut adam = AdamState::new(&net);
    let budget = cfg.max_rounds * cfg.max_epochs_per_round;
    let mut final_loss = f64::INFINITY;
    let mut reference_loss = f64::INFINITY;
    let mut loss_history = Vec::new();
    let mut epochs = 0;
    while epochs < budget {
        let (loss, grads) = loss_grad(&net, inputs, targets, Loss::MeanSquaredError)?;
        adam.step(&mut net, &grads, cfg.learning_rate);
        final_loss = loss;
        epochs += 1;
        if epochs % 100 == 0 {
            loss_history.push(loss);
            let decrease = (reference_loss - loss) / reference_loss.abs().max(1e-300);
            if decrease < cfg.plateau_tol {
                break;
            }
            reference_loss = loss;
        }
    }
    Ok(TrainedRegressor {
        net,
        final_loss,
        epochs,
        loss_history,
    })
}
