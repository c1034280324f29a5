use nalgebra::DMatrix;

use super::{sigmoid, Network, Variant, CLAMP};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    /// Predictor-prediction weight in the perfect-annotation loss.
    pub alpha: f64,
    /// Coder-prediction weight in the noisy-annotation loss.
    pub beta: f64,
    /// Predictor-prediction weight in the noisy-annotation loss.
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
        }
    }
}

/// A mini-batch. Rows of `targets` hold the annotation (perfect variant, one
/// column) or the surrogate outcome per class (noisy variant); rows of
/// unannotated units are ignored through `s`.
#[derive(Debug, Clone)]
pub struct Batch {
    pub y: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub t: Vec<f64>,
    pub s: Vec<f64>,
    pub targets: DMatrix<f64>,
    pub coder_labels: DMatrix<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

fn cross_entropy(t: f64, logit: f64) -> (f64, f64) {
    let raw = sigmoid(logit);
    let p = raw.clamp(CLAMP, 1.0 - CLAMP);
    let loss = -(t * p.ln() + (1.0 - t) * (1.0 - p).ln());
    // The clamp is flat outside its range.
    let d_logit = if raw > CLAMP && raw < 1.0 - CLAMP {
        raw - t
    } else {
        0.0
    };
    (loss, d_logit)
}

fn check(net: &Network, batch: &Batch) -> Result<()> {
    let b = batch.len();
    if batch.s.len() != b || batch.y.nrows() != b || batch.targets.nrows() != b {
        return Err(Error::Dimension {
            what: "batch rows",
            expected: b,
            got: batch.y.nrows(),
        });
    }
    if b == 0 {
        return Err(Error::EmptySplit("empty batch".into()));
    }
    if batch.targets.ncols() != net.outcome.len() {
        return Err(Error::Dimension {
            what: "outcome targets",
            expected: net.outcome.len(),
            got: batch.targets.ncols(),
        });
    }
    if net.variant == Variant::Noisy && batch.coder_labels.shape() != (b, net.coders.len()) {
        return Err(Error::Dimension {
            what: "coder label columns",
            expected: net.coders.len(),
            got: batch.coder_labels.ncols(),
        });
    }
    Ok(())
}

/// Loss and, when requested, its gradient with respect to every parameter.
fn evaluate(
    net: &Network,
    batch: &Batch,
    weights: &LossWeights,
    with_grad: bool,
) -> Result<(f64, Option<Network>)> {
    check(net, batch)?;
    let b = batch.len();
    let inv_b = 1.0 / b as f64;
    let ce_weight = match net.variant {
        Variant::Perfect => weights.alpha,
        Variant::Noisy => weights.gamma,
    };
    let (out, cache) = net.forward_cached(&batch.y, &batch.z)?;
    let mut total = 0.0;
    let mut d_outcome = DMatrix::zeros(b, net.outcome.len());
    let mut d_coder = DMatrix::zeros(b, net.coders.len());
    let mut d_logit = vec![0.0; b];
    for i in 0..b {
        let s = batch.s[i];
        for c in 0..net.outcome.len() {
            let r = out.outcome[(i, c)] - batch.targets[(i, c)];
            total += s * r * r;
            d_outcome[(i, c)] = 2.0 * s * r * inv_b;
        }
        for j in 0..net.coders.len() {
            let r = out.coder_preds[(i, j)] - batch.coder_labels[(i, j)];
            total += weights.beta * s * r * r;
            d_coder[(i, j)] = 2.0 * weights.beta * s * r * inv_b;
        }
        let (ce, dl) = cross_entropy(batch.t[i], out.logit[i]);
        total += ce_weight * ce;
        d_logit[i] = ce_weight * dl * inv_b;
    }
    let loss = total * inv_b;
    if !loss.is_finite() {
        return Err(Error::Numerical(format!("non-finite loss {loss}")));
    }
    let grad = with_grad.then(|| net.backward(&cache, &d_outcome, &d_logit, &d_coder));
    Ok((loss, grad))
}

/// Loss for the network's own variant.
pub fn joint_loss(net: &Network, batch: &Batch, weights: &LossWeights) -> Result<f64> {
    evaluate(net, batch, weights, false).map(|(l, _)| l)
}

/// Mean of `s (mu - L)^2 + alpha * CE(T, rho)`.
pub fn joint_loss_perfect(net: &Network, batch: &Batch, weights: &LossWeights) -> Result<f64> {
    if net.variant != Variant::Perfect {
        return Err(Error::InvalidConfig("network is not a perfect-annotation network".into()));
    }
    joint_loss(net, batch, weights)
}

/// Mean of `s sum_c (mu_c - M_c)^2 + beta s sum_j (kappa_j - L_j)^2 + gamma * CE(T, rho)`.
pub fn joint_loss_noisy(net: &Network, batch: &Batch, weights: &LossWeights) -> Result<f64> {
    if net.variant != Variant::Noisy {
        return Err(Error::InvalidConfig("network is not a noisy-annotation network".into()));
    }
    joint_loss(net, batch, weights)
}

pub fn loss_and_gradients(
    net: &Network,
    batch: &Batch,
    weights: &LossWeights,
) -> Result<(f64, Network)> {
    evaluate(net, batch, weights, true).map(|(l, g)| (l, g.expect("gradient requested")))
}
