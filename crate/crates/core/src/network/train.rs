use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::loss::{joint_loss, loss_and_gradients, Batch};
use super::{BatchOutputs, InputSpec, Network, NetworkConfig, Variant};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::rng::{stream, tag};

/// Rows of the embedding matrix for the given units.
pub fn embedding_matrix(ds: &Dataset, units: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(units.len(), ds.d, |r, c| ds.observations[units[r]].y_embed[c])
}

pub fn covariate_matrix(ds: &Dataset, units: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(units.len(), ds.p, |r, c| ds.observations[units[r]].z[c])
}

/// Head outputs for the given units, evaluated in chunks.
pub fn predict(net: &Network, ds: &Dataset, units: &[usize]) -> Result<BatchOutputs> {
    const CHUNK: usize = 2048;
    let mut parts = Vec::new();
    for chunk in units.chunks(CHUNK) {
        parts.push(net.forward_batch(&embedding_matrix(ds, chunk), &covariate_matrix(ds, chunk))?);
    }
    let rows = units.len();
    let mut out = BatchOutputs {
        representation: DMatrix::zeros(rows, net.representation_width()),
        outcome: DMatrix::zeros(rows, net.outcome.len()),
        logit: Vec::with_capacity(rows),
        coder_preds: DMatrix::zeros(rows, net.coders.len()),
    };
    let mut offset = 0;
    for p in parts {
        let r = p.logit.len();
        out.representation.rows_mut(offset, r).copy_from(&p.representation);
        out.outcome.rows_mut(offset, r).copy_from(&p.outcome);
        out.coder_preds.rows_mut(offset, r).copy_from(&p.coder_preds);
        out.logit.extend(p.logit);
        offset += r;
    }
    Ok(out)
}

/// Design matrices and targets for training one network.
#[derive(Debug, Clone)]
pub struct TrainingData {
    pub spec: InputSpec,
    pub variant: Variant,
    pub y: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub t: Vec<f64>,
    pub s: Vec<f64>,
    pub targets: DMatrix<f64>,
    pub coder_labels: DMatrix<f64>,
}

impl TrainingData {
    fn base(ds: &Dataset, units: &[usize], variant: Variant, outcome_cols: usize) -> Self {
        let obs = |r: usize| &ds.observations[units[r]];
        let coder_cols = match variant {
            Variant::Perfect => 0,
            Variant::Noisy => ds.num_coders,
        };
        Self {
            spec: InputSpec {
                d: ds.d,
                p: ds.p,
                num_classes: ds.num_classes,
                num_coders: ds.num_coders,
            },
            variant,
            y: embedding_matrix(ds, units),
            z: covariate_matrix(ds, units),
            t: (0..units.len()).map(|r| obs(r).t as f64).collect(),
            s: (0..units.len()).map(|r| obs(r).s as f64).collect(),
            targets: DMatrix::zeros(units.len(), outcome_cols),
            coder_labels: DMatrix::from_fn(units.len(), coder_cols, |r, j| {
                obs(r).labels.get(j).map_or(0.0, |&l| l as f64)
            }),
        }
    }

    /// Outcome target is the first coder's label.
    pub fn perfect(ds: &Dataset, units: &[usize]) -> Self {
        let mut data = Self::base(ds, units, Variant::Perfect, 1);
        for (r, &i) in units.iter().enumerate() {
            data.targets[(r, 0)] = ds.observations[i].primary_label().map_or(0.0, |l| l as f64);
        }
        data
    }

    /// Outcome targets are per-class surrogate outcomes, given for every
    /// annotated unit in `units` (in order) and ignored for the others.
    pub fn noisy(ds: &Dataset, units: &[usize], surrogate: &[Option<Vec<f64>>]) -> Result<Self> {
        if surrogate.len() != units.len() {
            return Err(Error::Dimension {
                what: "surrogate outcome rows",
                expected: units.len(),
                got: surrogate.len(),
            });
        }
        let mut data = Self::base(ds, units, Variant::Noisy, ds.num_classes);
        for (r, m) in surrogate.iter().enumerate() {
            match (data.s[r] > 0.0, m) {
                (true, Some(m)) if m.len() == ds.num_classes => {
                    for (c, v) in m.iter().enumerate() {
                        data.targets[(r, c)] = *v;
                    }
                }
                (true, _) => {
                    return Err(Error::InvalidConfig(format!(
                        "annotated training unit {} lacks surrogate outcomes",
                        units[r]
                    )))
                }
                _ => {}
            }
        }
        Ok(data)
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn batch(&self, rows: &[usize]) -> Batch {
        Batch {
            y: self.y.select_rows(rows),
            z: self.z.select_rows(rows),
            t: rows.iter().map(|&r| self.t[r]).collect(),
            s: rows.iter().map(|&r| self.s[r]).collect(),
            targets: self.targets.select_rows(rows),
            coder_labels: self.coder_labels.select_rows(rows),
        }
    }
}

/// Adam with bias-corrected moments.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: i32,
}

impl Adam {
    pub fn new(learning_rate: f64, net: &Network) -> Self {
        let zeros: Vec<Vec<f64>> = net.param_slices().iter().map(|s| vec![0.0; s.len()]).collect();
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    pub fn step(&mut self, net: &mut Network, grad: &Network) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let grads = grad.param_slices();
        for (k, p) in net.param_slices_mut().into_iter().enumerate() {
            let (m, v, g) = (&mut self.m[k], &mut self.v[k], grads[k]);
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub initial_val_loss: f64,
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept; 0 means the initialization.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_epoch: usize,
    pub train_size: usize,
    pub val_size: usize,
}

#[derive(Debug, Clone)]
pub struct FittedNetwork {
    pub network: Network,
    pub config: NetworkConfig,
    pub report: TrainReport,
}

/// Validation rows stratified by `(t, s)`.
fn validation_split(data: &TrainingData, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = stream(seed, tag::VALIDATION, 0);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for cell in 0..4 {
        let (t, s) = ((cell / 2) as f64, (cell % 2) as f64);
        let mut rows: Vec<usize> = (0..data.len())
            .filter(|&r| data.t[r] == t && data.s[r] == s)
            .collect();
        rows.shuffle(&mut rng);
        let k = (rows.len() as f64 * fraction).round() as usize;
        val.extend_from_slice(&rows[..k]);
        train.extend_from_slice(&rows[k..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

/// Fits the network with Adam and early stopping, returning the parameters
/// of the epoch with the lowest validation loss.
pub fn train(data: &TrainingData, config: &NetworkConfig) -> Result<FittedNetwork> {
    config.validate()?;
    if !data.s.iter().any(|&s| s > 0.0) {
        return Err(Error::NoLabeledUnits("no annotated units in the training split".into()));
    }
    let (train_rows, val_rows) = validation_split(data, config.val_fraction, config.seed);
    if !train_rows.iter().any(|&r| data.s[r] > 0.0) {
        return Err(Error::NoLabeledUnits(
            "no annotated units left after the validation split".into(),
        ));
    }
    if val_rows.is_empty() {
        return Err(Error::EmptySplit("validation split is empty".into()));
    }
    let weights = config.weights();
    let mut net = Network::init(data.spec, data.variant, config)?;
    let mut adam = Adam::new(config.learning_rate, &net);
    let val_batch = data.batch(&val_rows);
    let initial_val_loss = joint_loss(&net, &val_batch, &weights)?;
    let mut best = (initial_val_loss, 0usize, net.clone());
    let mut epochs = Vec::new();
    let mut stale = 0usize;
    let mut order = train_rows.clone();
    for epoch in 1..=config.max_epochs {
        order.copy_from_slice(&train_rows);
        order.shuffle(&mut stream(config.seed, tag::BATCHES, epoch as u64));
        let mut sum = 0.0;
        for rows in order.chunks(config.batch_size) {
            let batch = data.batch(rows);
            let (loss, grad) = loss_and_gradients(&net, &batch, &weights)?;
            adam.step(&mut net, &grad);
            sum += loss * rows.len() as f64;
        }
        let val_loss = joint_loss(&net, &val_batch, &weights)?;
        epochs.push(EpochRecord {
            epoch,
            train_loss: sum / order.len() as f64,
            val_loss,
        });
        if val_loss < best.0 {
            best = (val_loss, epoch, net.clone());
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience.max(1) {
                break;
            }
        }
    }
    let (best_val_loss, best_epoch, network) = best;
    Ok(FittedNetwork {
        network,
        config: config.clone(),
        report: TrainReport {
            initial_val_loss,
            stopped_epoch: epochs.len(),
            epochs,
            best_epoch,
            best_val_loss,
            train_size: train_rows.len(),
            val_size: val_rows.len(),
        },
    })
}
