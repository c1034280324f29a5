//! Joint-prediction network.
//!
//! A shared trunk maps the embedding to a low-dimensional representation.
//! Separate heads read the representation (and, by default, the covariates)
//! to predict the outcome, the surrogacy score `P(T = 1 | representation, Z)`,
//! and, in the noisy-annotation variant, one outcome per class plus each
//! coder's label. Gradients are hand-derived for this fixed topology.

mod io;
mod layers;
mod loss;
mod train;

pub use io::{load_network, save_network, NetworkFile};
pub use layers::{Dense, Mlp};
pub use loss::{joint_loss, joint_loss_noisy, joint_loss_perfect, loss_and_gradients, Batch, LossWeights};
pub use train::{
    covariate_matrix, embedding_matrix, predict, train, Adam, EpochRecord, FittedNetwork,
    TrainReport, TrainingData,
};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, tag};
use layers::{hcat, MlpCache};

/// Probabilities entering cross-entropy are clamped to `[CLAMP, 1 - CLAMP]`.
pub const CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Outcome head regresses the single annotation.
    Perfect,
    /// One outcome head per class regressing the surrogate outcomes, plus one
    /// head per coder.
    Noisy,
}

/// Where the covariates enter the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovariateRouting {
    #[default]
    Heads,
    Trunk,
    Both,
}

impl CovariateRouting {
    fn trunk(self) -> bool {
        matches!(self, Self::Trunk | Self::Both)
    }
    fn heads(self) -> bool {
        matches!(self, Self::Heads | Self::Both)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub trunk_dims: Vec<usize>,
    /// Widths of each scalar head; the last entry is the output width 1.
    pub head_dims: Vec<usize>,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub val_fraction: f64,
    pub patience: usize,
    pub seed: u64,
    pub covariates: CovariateRouting,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            trunk_dims: vec![100, 50],
            head_dims: vec![50, 1],
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
            learning_rate: 2e-5,
            max_epochs: 200,
            batch_size: 256,
            val_fraction: 0.2,
            patience: 5,
            seed: 0,
            covariates: CovariateRouting::Heads,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.trunk_dims.is_empty() || self.trunk_dims.contains(&0) {
            return bad(format!("trunk widths must be non-empty and positive: {:?}", self.trunk_dims));
        }
        if self.head_dims.last() != Some(&1) || self.head_dims.contains(&0) {
            return bad(format!("head widths must be positive and end in 1: {:?}", self.head_dims));
        }
        for (name, w) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(w >= 0.0 && w.is_finite()) {
                return bad(format!("loss weight {name} must be non-negative, got {w}"));
            }
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad(format!("val_fraction {} outside (0, 1)", self.val_fraction));
        }
        if !(self.learning_rate > 0.0) || self.batch_size == 0 {
            return bad("learning rate and batch size must be positive".into());
        }
        Ok(())
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            alpha: self.alpha,
            beta: self.beta,
            gamma: self.gamma,
        }
    }
}

/// Input dimensions a network was built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputSpec {
    pub d: usize,
    pub p: usize,
    pub num_classes: usize,
    pub num_coders: usize,
}

/// Network parameters. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub spec: InputSpec,
    pub variant: Variant,
    pub routing: CovariateRouting,
    pub trunk: Mlp,
    pub outcome: Vec<Mlp>,
    pub surrogacy: Mlp,
    pub coders: Vec<Mlp>,
}

/// Head outputs for one unit.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutputs {
    pub representation: Vec<f64>,
    /// One value for the perfect variant, one per class for the noisy variant.
    pub outcome: Vec<f64>,
    /// Clamped `P(T = 1 | representation, Z)`.
    pub surrogacy_score: f64,
    pub coder_preds: Vec<f64>,
}

/// Head outputs for a batch, one row per unit.
#[derive(Debug, Clone)]
pub struct BatchOutputs {
    pub representation: DMatrix<f64>,
    pub outcome: DMatrix<f64>,
    /// Unclamped logit of the surrogacy score.
    pub logit: Vec<f64>,
    pub coder_preds: DMatrix<f64>,
}

impl BatchOutputs {
    pub fn surrogacy_scores(&self) -> Vec<f64> {
        self.logit.iter().map(|&l| clamped_sigmoid(l)).collect()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn clamped_sigmoid(x: f64) -> f64 {
    sigmoid(x).clamp(CLAMP, 1.0 - CLAMP)
}

pub(crate) struct ForwardCache {
    trunk_in: DMatrix<f64>,
    trunk: MlpCache,
    outcome: Vec<MlpCache>,
    surrogacy: MlpCache,
    coders: Vec<MlpCache>,
}

impl Network {
    pub fn init(spec: InputSpec, variant: Variant, config: &NetworkConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = stream(config.seed, tag::INIT, 0);
        let routing = config.covariates;
        let trunk_in = spec.d + if routing.trunk() { spec.p } else { 0 };
        let rep = *config.trunk_dims.last().expect("validated");
        let head_in = rep + if routing.heads() { spec.p } else { 0 };
        let trunk = Mlp::init(trunk_in, &config.trunk_dims, true, &mut rng);
        let n_outcome = match variant {
            Variant::Perfect => 1,
            Variant::Noisy => spec.num_classes,
        };
        let outcome = (0..n_outcome)
            .map(|_| Mlp::init(head_in, &config.head_dims, false, &mut rng))
            .collect();
        let surrogacy = Mlp::init(head_in, &config.head_dims, false, &mut rng);
        let coders = match variant {
            Variant::Perfect => Vec::new(),
            Variant::Noisy => (0..spec.num_coders)
                .map(|_| Mlp::init(head_in, &config.head_dims, false, &mut rng))
                .collect(),
        };
        Ok(Self {
            spec,
            variant,
            routing,
            trunk,
            outcome,
            surrogacy,
            coders,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            spec: self.spec,
            variant: self.variant,
            routing: self.routing,
            trunk: self.trunk.zeros_like(),
            outcome: self.outcome.iter().map(Mlp::zeros_like).collect(),
            surrogacy: self.surrogacy.zeros_like(),
            coders: self.coders.iter().map(Mlp::zeros_like).collect(),
        }
    }

    pub fn representation_width(&self) -> usize {
        self.trunk.fan_out()
    }

    fn heads(&self) -> impl Iterator<Item = &Mlp> {
        self.outcome
            .iter()
            .chain(std::iter::once(&self.surrogacy))
            .chain(self.coders.iter())
    }

    pub fn param_slices(&self) -> Vec<&[f64]> {
        let mut v = self.trunk.param_slices();
        for h in self.heads() {
            v.extend(h.param_slices());
        }
        v
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.trunk.param_slices_mut();
        for h in self.outcome.iter_mut() {
            v.extend(h.param_slices_mut());
        }
        v.extend(self.surrogacy.param_slices_mut());
        for h in self.coders.iter_mut() {
            v.extend(h.param_slices_mut());
        }
        v
    }

    pub fn num_params(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    fn check_dims(&self, y: &DMatrix<f64>, z: &DMatrix<f64>) -> Result<()> {
        if y.ncols() != self.spec.d {
            return Err(Error::Dimension {
                what: "embedding",
                expected: self.spec.d,
                got: y.ncols(),
            });
        }
        if z.ncols() != self.spec.p {
            return Err(Error::Dimension {
                what: "covariates",
                expected: self.spec.p,
                got: z.ncols(),
            });
        }
        if y.nrows() != z.nrows() {
            return Err(Error::Dimension {
                what: "covariate rows",
                expected: y.nrows(),
                got: z.nrows(),
            });
        }
        Ok(())
    }

    fn trunk_input(&self, y: &DMatrix<f64>, z: &DMatrix<f64>) -> DMatrix<f64> {
        if self.routing.trunk() {
            hcat(y, z)
        } else {
            y.clone()
        }
    }

    fn head_input(&self, rep: &DMatrix<f64>, z: &DMatrix<f64>) -> DMatrix<f64> {
        if self.routing.heads() {
            hcat(rep, z)
        } else {
            rep.clone()
        }
    }

    fn stack(columns: Vec<DMatrix<f64>>, rows: usize) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(rows, columns.len());
        for (j, c) in columns.into_iter().enumerate() {
            out.set_column(j, &c.column(0));
        }
        out
    }

    /// Batch forward pass; `y` is `B x d`, `z` is `B x p`.
    pub fn forward_batch(&self, y: &DMatrix<f64>, z: &DMatrix<f64>) -> Result<BatchOutputs> {
        self.check_dims(y, z)?;
        let rows = y.nrows();
        let rep = self.trunk.forward(&self.trunk_input(y, z));
        let h = self.head_input(&rep, z);
        let outcome = Self::stack(self.outcome.iter().map(|m| m.forward(&h)).collect(), rows);
        let logit = self.surrogacy.forward(&h).column(0).iter().copied().collect();
        let coder_preds = Self::stack(self.coders.iter().map(|m| m.forward(&h)).collect(), rows);
        Ok(BatchOutputs {
            representation: rep,
            outcome,
            logit,
            coder_preds,
        })
    }

    pub(crate) fn forward_cached(
        &self,
        y: &DMatrix<f64>,
        z: &DMatrix<f64>,
    ) -> Result<(BatchOutputs, ForwardCache)> {
        self.check_dims(y, z)?;
        let rows = y.nrows();
        let trunk_in = self.trunk_input(y, z);
        let (rep, trunk_cache) = self.trunk.forward_cached(&trunk_in);
        let h = self.head_input(&rep, z);
        let (outcome_cols, outcome_caches): (Vec<_>, Vec<_>) =
            self.outcome.iter().map(|m| m.forward_cached(&h)).unzip();
        let (logit_col, surrogacy_cache) = self.surrogacy.forward_cached(&h);
        let (coder_cols, coder_caches): (Vec<_>, Vec<_>) =
            self.coders.iter().map(|m| m.forward_cached(&h)).unzip();
        let out = BatchOutputs {
            representation: rep,
            outcome: Self::stack(outcome_cols, rows),
            logit: logit_col.column(0).iter().copied().collect(),
            coder_preds: Self::stack(coder_cols, rows),
        };
        Ok((
            out,
            ForwardCache {
                trunk_in,
                trunk: trunk_cache,
                outcome: outcome_caches,
                surrogacy: surrogacy_cache,
                coders: coder_caches,
            },
        ))
    }

    /// Back-propagates output gradients (`d_outcome` is `B x heads`,
    /// `d_logit` has length `B`, `d_coder` is `B x J`) into a gradient
    /// network.
    pub(crate) fn backward(
        &self,
        cache: &ForwardCache,
        d_outcome: &DMatrix<f64>,
        d_logit: &[f64],
        d_coder: &DMatrix<f64>,
    ) -> Network {
        let mut grad = self.zeros_like();
        let rows = cache.trunk_in.nrows();
        let rep_w = self.representation_width();
        let head_w = self.surrogacy.fan_in();
        let mut d_head_in = DMatrix::<f64>::zeros(rows, head_w);
        for (k, head) in self.outcome.iter().enumerate() {
            let d = DMatrix::from_column_slice(rows, 1, d_outcome.column(k).as_slice());
            d_head_in += head.backward(&cache.outcome[k], d, &mut grad.outcome[k]);
        }
        let d = DMatrix::from_column_slice(rows, 1, d_logit);
        d_head_in += self.surrogacy.backward(&cache.surrogacy, d, &mut grad.surrogacy);
        for (k, head) in self.coders.iter().enumerate() {
            let d = DMatrix::from_column_slice(rows, 1, d_coder.column(k).as_slice());
            d_head_in += head.backward(&cache.coders[k], d, &mut grad.coders[k]);
        }
        let d_rep = d_head_in.columns(0, rep_w).into_owned();
        self.trunk.backward(&cache.trunk, d_rep, &mut grad.trunk);
        grad
    }

    /// Single-unit forward pass.
    pub fn forward(&self, y_embed: &[f64], z: &[f64]) -> Result<HeadOutputs> {
        let y = DMatrix::from_row_slice(1, y_embed.len(), y_embed);
        let z = DMatrix::from_row_slice(1, z.len(), z);
        let out = self.forward_batch(&y, &z)?;
        Ok(HeadOutputs {
            representation: out.representation.row(0).iter().copied().collect(),
            outcome: out.outcome.row(0).iter().copied().collect(),
            surrogacy_score: clamped_sigmoid(out.logit[0]),
            coder_preds: out.coder_preds.row(0).iter().copied().collect(),
        })
    }
}
