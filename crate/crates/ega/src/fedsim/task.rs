use crate::error::{EgaError, Result};
use crate::rng;
use crate::Real;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// One client's local data. For classification tasks the label is a class
/// index; for regression tasks it is the scalar target.
#[derive(Clone, Debug)]
pub struct ClientDataset {
    pub client_id: u32,
    pub features: Vec<Vec<Real>>,
    pub labels: Vec<Real>,
}

impl ClientDataset {
    pub fn sample_count(&self) -> usize {
        self.features.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.is_empty() || self.features.len() != self.labels.len() {
            return Err(EgaError::config("client dataset must be non-empty and aligned"));
        }
        Ok(())
    }
}

/// The learning task: loss, per-sample gradient, and evaluation over a flat
/// parameter vector.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TaskModel {
    /// Multinomial logistic regression on raw feature vectors.
    LinearClassifier { features: usize, classes: usize },
    /// Least squares `f(w) = mean_j ½(a_j·w − b_j)²` with a known minimizer.
    SyntheticQuadratic { dim: usize },
}

impl TaskModel {
    pub fn param_dim(&self) -> usize {
        match self {
            TaskModel::LinearClassifier { features, classes } => (features + 1) * classes,
            TaskModel::SyntheticQuadratic { dim } => *dim,
        }
    }

    pub fn feature_dim(&self) -> usize {
        match self {
            TaskModel::LinearClassifier { features, .. } => *features,
            TaskModel::SyntheticQuadratic { dim } => *dim,
        }
    }

    /// Per-sample loss gradient, written into `grad` (accumulated with unit
    /// weight; caller scales).
    pub fn sample_grad(&self, w: &[Real], x: &[Real], y: Real, grad: &mut [Real]) {
        match self {
            TaskModel::LinearClassifier { features, classes } => {
                let probs = softmax_probs(w, x, *features, *classes);
                let label = y as usize;
                for c in 0..*classes {
                    let delta = probs[c] - if c == label { 1.0 } else { 0.0 };
                    let row = &mut grad[c * (*features + 1)..(c + 1) * (*features + 1)];
                    for (g, &xv) in row[..*features].iter_mut().zip(x.iter()) {
                        *g += delta * xv;
                    }
                    row[*features] += delta; // bias
                }
            }
            TaskModel::SyntheticQuadratic { .. } => {
                let residual = dot(x, w) - y;
                for (g, &xv) in grad.iter_mut().zip(x.iter()) {
                    *g += residual * xv;
                }
            }
        }
    }

    pub fn sample_loss(&self, w: &[Real], x: &[Real], y: Real) -> Real {
        match self {
            TaskModel::LinearClassifier { features, classes } => {
                let probs = softmax_probs(w, x, *features, *classes);
                -(probs[y as usize].max(1e-12)).ln()
            }
            TaskModel::SyntheticQuadratic { .. } => {
                let residual = dot(x, w) - y;
                0.5 * residual * residual
            }
        }
    }

    /// Mean loss and accuracy over a dataset. Accuracy is 0 for regression.
    pub fn evaluate(&self, w: &[Real], data: &ClientDataset) -> (Real, Real) {
        let mut loss = 0.0;
        let mut correct = 0usize;
        for (x, &y) in data.features.iter().zip(data.labels.iter()) {
            loss += self.sample_loss(w, x, y);
            if let TaskModel::LinearClassifier { features, classes } = self {
                let probs = softmax_probs(w, x, *features, *classes);
                let pred = probs
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .unwrap()
                    .0;
                if pred == y as usize {
                    correct += 1;
                }
            }
        }
        let count = data.sample_count() as Real;
        let accuracy = match self {
            TaskModel::LinearClassifier { .. } => correct as Real / count,
            TaskModel::SyntheticQuadratic { .. } => 0.0,
        };
        (loss / count, accuracy)
    }
}

fn dot(a: &[Real], b: &[Real]) -> Real {
    a.iter().zip(b.iter()).map(|(&x, &y)| x * y).sum()
}

fn softmax_probs(w: &[Real], x: &[Real], features: usize, classes: usize) -> Vec<Real> {
    let mut logits = Vec::with_capacity(classes);
    for c in 0..classes {
        let row = &w[c * (features + 1)..(c + 1) * (features + 1)];
        logits.push(dot(&row[..features], x) + row[features]);
    }
    let max = logits.iter().cloned().fold(Real::NEG_INFINITY, Real::max);
    let mut sum = 0.0;
    for l in logits.iter_mut() {
        *l = (*l - max).exp();
        sum += *l;
    }
    for l in logits.iter_mut() {
        *l /= sum;
    }
    logits
}

/// Build a federated least-squares task with a known minimizer `w_star`:
/// every sample satisfies `a_j·w_star = b_j` exactly, so `f* = 0`.
pub fn make_quadratic_clients(
    num_clients: usize,
    samples_per_client: usize,
    dim: usize,
    seed: u64,
) -> (Vec<ClientDataset>, Vec<Real>) {
    let mut stream = rng::stream(seed, &[0x71756164]);
    let w_star: Vec<Real> = (0..dim).map(|_| stream.gen_range(-1.0..1.0)).collect();
    let clients = (0..num_clients)
        .map(|id| {
            let mut client_stream = rng::stream(seed, &[0x71636c69, id as u64]);
            let features: Vec<Vec<Real>> = (0..samples_per_client)
                .map(|_| (0..dim).map(|_| client_stream.gen_range(-1.0..1.0)).collect())
                .collect();
            let labels = features.iter().map(|a| dot(a, &w_star)).collect();
            ClientDataset {
                client_id: id as u32,
                features,
                labels,
            }
        })
        .collect();
    (clients, w_star)
}
