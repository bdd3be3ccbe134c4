//! Fully connected softmax classifier trained with Adam.

use std::sync::atomic::{AtomicBool, Ordering};

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::LearnerError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: &mut Array2<f64>) {
        match self {
            Activation::Relu => z.mapv_inplace(|v| v.max(0.0)),
            Activation::Tanh => z.mapv_inplace(f64::tanh),
        }
    }

    /// Multiplies `delta` by the derivative, expressed through the activation output.
    fn backprop(self, delta: &mut Array2<f64>, activated: &Array2<f64>) {
        match self {
            Activation::Relu => delta.zip_mut_with(activated, |d, &a| {
                if a <= 0.0 {
                    *d = 0.0
                }
            }),
            Activation::Tanh => delta.zip_mut_with(activated, |d, &a| *d *= 1.0 - a * a),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LearningRateSchedule {
    Constant,
    /// `lr_init / sqrt(epoch + 1)`.
    InvScaling,
    /// Divide by 5 on each plateau; stop once below 1e-6.
    Adaptive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub hidden_layers: Vec<usize>,
    pub activation: Activation,
    pub alpha: f64,
    pub learning_rate_init: f64,
    pub schedule: LearningRateSchedule,
    pub early_stopping: bool,
    pub validation_fraction: f64,
    pub n_iter_no_change: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub beta_1: f64,
    pub beta_2: f64,
    pub epsilon: f64,
    pub shuffle: bool,
    /// `None` means `min(200, n_rows)`.
    pub batch_size: Option<usize>,
}

impl Default for MlpParams {
    fn default() -> Self {
        MlpParams {
            hidden_layers: vec![16],
            activation: Activation::Relu,
            alpha: 1e-4,
            learning_rate_init: 1e-3,
            schedule: LearningRateSchedule::Constant,
            early_stopping: false,
            validation_fraction: 0.1,
            n_iter_no_change: 32,
            tol: 1e-3,
            max_iter: 512,
            beta_1: 0.9,
            beta_2: 0.999,
            epsilon: 1e-8,
            shuffle: true,
            batch_size: None,
        }
    }
}

/// Network weights; layer `i` maps `weights[i].nrows()` inputs to `ncols()` outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    pub activation: Activation,
}

/// Gradients with the same layout as [`Mlp`].
#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

fn softmax_rows(z: &mut Array2<f64>) {
    for mut row in z.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

impl Mlp {
    /// Glorot-uniform initialization.
    pub fn init<R: Rng + ?Sized>(
        n_inputs: usize,
        hidden: &[usize],
        n_outputs: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let mut sizes = vec![n_inputs];
        sizes.extend_from_slice(hidden);
        sizes.push(n_outputs);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in sizes.windows(2) {
            let bound = (6.0 / (w[0] + w[1]) as f64).sqrt();
            weights.push(Array2::from_shape_fn((w[0], w[1]), |_| rng.random_range(-bound..bound)));
            biases.push(Array1::from_shape_fn(w[1], |_| rng.random_range(-bound..bound)));
        }
        Mlp { weights, biases, activation }
    }

    pub fn n_outputs(&self) -> usize {
        self.biases.last().map_or(0, Array1::len)
    }

    /// Activations of every layer; the last entry holds softmax probabilities.
    fn forward(&self, x: &Array2<f64>) -> Vec<Array2<f64>> {
        let mut acts = Vec::with_capacity(self.weights.len() + 1);
        acts.push(x.clone());
        let last = self.weights.len() - 1;
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = acts[i].dot(w) + b;
            if i == last {
                softmax_rows(&mut z);
            } else {
                self.activation.apply(&mut z);
            }
            acts.push(z);
        }
        acts
    }

    pub fn predict_proba(&self, x: &Array2<f64>) -> Array2<f64> {
        self.forward(x).pop().expect("network has an output layer")
    }

    /// Mean cross-entropy plus `alpha / (2n) * ||W||^2`, with its gradient.
    pub fn loss_and_gradient(&self, x: &Array2<f64>, y: &[usize], alpha: f64) -> (f64, Gradients) {
        let n = x.nrows() as f64;
        let acts = self.forward(x);
        let probs = acts.last().unwrap();
        let mut loss = 0.0;
        for (r, &label) in y.iter().enumerate() {
            loss -= probs[[r, label]].max(1e-300).ln();
        }
        loss /= n;
        let l2: f64 = self.weights.iter().map(|w| w.iter().map(|v| v * v).sum::<f64>()).sum();
        loss += 0.5 * alpha * l2 / n;

        let layers = self.weights.len();
        let mut grad_w = vec![Array2::zeros((0, 0)); layers];
        let mut grad_b = vec![Array1::zeros(0); layers];
        let mut delta = probs.clone();
        for (r, &label) in y.iter().enumerate() {
            delta[[r, label]] -= 1.0;
        }
        delta /= n;
        for i in (0..layers).rev() {
            grad_w[i] = acts[i].t().dot(&delta) + &(&self.weights[i] * (alpha / n));
            grad_b[i] = delta.sum_axis(Axis(0));
            if i > 0 {
                let mut next = delta.dot(&self.weights[i].t());
                self.activation.backprop(&mut next, &acts[i]);
                delta = next;
            }
        }
        (loss, Gradients { weights: grad_w, biases: grad_b })
    }

    /// All parameters flattened in layer order (weights then bias per layer).
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) {
        let mut it = flat.iter().copied();
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            w.iter_mut().for_each(|v| *v = it.next().expect("enough parameters"));
            b.iter_mut().for_each(|v| *v = it.next().expect("enough parameters"));
        }
    }
}

impl Gradients {
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }
}

struct Adam {
    m_w: Vec<Array2<f64>>,
    v_w: Vec<Array2<f64>>,
    m_b: Vec<Array1<f64>>,
    v_b: Vec<Array1<f64>>,
    t: i32,
    beta_1: f64,
    beta_2: f64,
    epsilon: f64,
}

impl Adam {
    fn new(net: &Mlp, params: &MlpParams) -> Self {
        Adam {
            m_w: net.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            v_w: net.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            m_b: net.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
            v_b: net.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
            t: 0,
            beta_1: params.beta_1,
            beta_2: params.beta_2,
            epsilon: params.epsilon,
        }
    }

    fn step(&mut self, net: &mut Mlp, grads: &Gradients, lr: f64) {
        self.t += 1;
        let (b1, b2, eps) = (self.beta_1, self.beta_2, self.epsilon);
        let step = lr * (1.0 - b2.powi(self.t)).sqrt() / (1.0 - b1.powi(self.t));
        for i in 0..net.weights.len() {
            self.m_w[i].zip_mut_with(&grads.weights[i], |m, &g| *m = b1 * *m + (1.0 - b1) * g);
            self.v_w[i].zip_mut_with(&grads.weights[i], |v, &g| *v = b2 * *v + (1.0 - b2) * g * g);
            ndarray::Zip::from(&mut net.weights[i])
                .and(&self.m_w[i])
                .and(&self.v_w[i])
                .for_each(|w, &m, &v| *w -= step * m / (v.sqrt() + eps));
            self.m_b[i].zip_mut_with(&grads.biases[i], |m, &g| *m = b1 * *m + (1.0 - b1) * g);
            self.v_b[i].zip_mut_with(&grads.biases[i], |v, &g| *v = b2 * *v + (1.0 - b2) * g * g);
            ndarray::Zip::from(&mut net.biases[i])
                .and(&self.m_b[i])
                .and(&self.v_b[i])
                .for_each(|w, &m, &v| *w -= step * m / (v.sqrt() + eps));
        }
    }
}

fn accuracy(net: &Mlp, x: &Array2<f64>, y: &[usize]) -> f64 {
    let p = net.predict_proba(x);
    let correct = p
        .rows()
        .into_iter()
        .zip(y)
        .filter(|(row, &label)| {
            let arg = row.iter().enumerate().fold(0, |best, (i, &v)| if v > row[best] { i } else { best });
            arg == label
        })
        .count();
    correct as f64 / y.len().max(1) as f64
}

/// Stratified holdout of roughly `fraction` of the rows, at least one.
fn holdout_split<R: Rng + ?Sized>(
    y: &[usize],
    n_classes: usize,
    fraction: f64,
    rng: &mut R,
) -> (Vec<usize>, Vec<usize>) {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (r, &l) in y.iter().enumerate() {
        by_class[l].push(r);
    }
    let mut train = Vec::new();
    let mut val = Vec::new();
    for rows in by_class.iter_mut() {
        rows.shuffle(rng);
        let take = ((rows.len() as f64 * fraction).round() as usize).min(rows.len().saturating_sub(1));
        val.extend_from_slice(&rows[..take]);
        train.extend_from_slice(&rows[take..]);
    }
    if val.is_empty() && train.len() > 1 {
        val.push(train.pop().unwrap());
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

/// Trains a network; returns the best-validation weights when early stopping is on.
pub fn train(
    x: &Array2<f64>,
    y: &[usize],
    n_classes: usize,
    params: &MlpParams,
    seed: u64,
    cancel: Option<&AtomicBool>,
) -> Result<Mlp, LearnerError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Mlp::init(x.ncols(), &params.hidden_layers, n_classes, params.activation, &mut rng);

    let (train_rows, val_rows) = if params.early_stopping {
        holdout_split(y, n_classes, params.validation_fraction, &mut rng)
    } else {
        ((0..y.len()).collect(), Vec::new())
    };
    let x_val = x.select(Axis(0), &val_rows);
    let y_val: Vec<usize> = val_rows.iter().map(|&r| y[r]).collect();

    let n = train_rows.len();
    let batch = params.batch_size.unwrap_or(200).clamp(1, n.max(1));
    let mut adam = Adam::new(&net, params);
    let mut order = train_rows.clone();
    let mut lr = params.learning_rate_init;
    let mut best_loss = f64::INFINITY;
    let mut best_val = f64::NEG_INFINITY;
    let mut best_net: Option<Mlp> = None;
    let mut no_improvement = 0usize;

    for epoch in 0..params.max_iter {
        if cancel.is_some_and(|f| f.load(Ordering::Relaxed)) {
            return Err(LearnerError::Cancelled);
        }
        if params.schedule == LearningRateSchedule::InvScaling {
            lr = params.learning_rate_init / ((epoch + 1) as f64).sqrt();
        }
        if params.shuffle {
            order.shuffle(&mut rng);
        }
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch) {
            let xb = x.select(Axis(0), chunk);
            let yb: Vec<usize> = chunk.iter().map(|&r| y[r]).collect();
            let (loss, grads) = net.loss_and_gradient(&xb, &yb, params.alpha);
            if !loss.is_finite() {
                return Err(LearnerError::NonFiniteLoss);
            }
            epoch_loss += loss * chunk.len() as f64;
            adam.step(&mut net, &grads, lr);
        }
        epoch_loss /= n.max(1) as f64;
        if !epoch_loss.is_finite() {
            return Err(LearnerError::NonFiniteLoss);
        }

        if params.early_stopping && !val_rows.is_empty() {
            let score = accuracy(&net, &x_val, &y_val);
            if score < best_val + params.tol {
                no_improvement += 1;
            } else {
                no_improvement = 0;
            }
            if score > best_val {
                best_val = score;
                best_net = Some(net.clone());
            }
        } else {
            if epoch_loss > best_loss - params.tol {
                no_improvement += 1;
            } else {
                no_improvement = 0;
            }
            best_loss = best_loss.min(epoch_loss);
        }

        if no_improvement > params.n_iter_no_change {
            if params.schedule == LearningRateSchedule::Adaptive && lr > 1e-6 {
                lr /= 5.0;
                no_improvement = 0;
                if lr > 1e-6 {
                    continue;
                }
            }
            break;
        }
    }
    Ok(best_net.unwrap_or(net))
}
