//! JSON container for network parameters.
//!
//! Each layer is stored with its shape (`rows = fan_in`, `cols = fan_out`)
//! and a row-major weight array, so `weights[r * cols + c]` multiplies input
//! `r` into output `c`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::layers::{Dense, Mlp};
use super::train::TrainReport;
use super::{CovariateRouting, InputSpec, Network, Variant};
use crate::error::{Error, Result};

pub const FORMAT: &str = "sri-network/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkFile {
    pub format: String,
    pub spec: InputSpec,
    pub variant: Variant,
    pub routing: CovariateRouting,
    pub trunk: Vec<LayerRecord>,
    pub outcome: Vec<Vec<LayerRecord>>,
    pub surrogacy: Vec<LayerRecord>,
    pub coders: Vec<Vec<LayerRecord>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<TrainReport>,
}

fn records(m: &Mlp) -> Vec<LayerRecord> {
    m.layers
        .iter()
        .map(|l| LayerRecord {
            rows: l.fan_in(),
            cols: l.fan_out(),
            weights: l.w.transpose().as_slice().to_vec(),
            bias: l.b.as_slice().to_vec(),
        })
        .collect()
}

fn mlp(records: &[LayerRecord], relu_last: bool) -> Result<Mlp> {
    let mut layers = Vec::with_capacity(records.len());
    for (k, r) in records.iter().enumerate() {
        if r.weights.len() != r.rows * r.cols || r.bias.len() != r.cols {
            return Err(Error::InvalidConfig(format!(
                "layer {k}: shape {}x{} does not match {} weights / {} biases",
                r.rows,
                r.cols,
                r.weights.len(),
                r.bias.len()
            )));
        }
        if k > 0 && layers.last().map(Dense::fan_out) != Some(r.rows) {
            return Err(Error::InvalidConfig(format!("layer {k}: fan-in does not chain")));
        }
        layers.push(Dense {
            w: DMatrix::from_row_slice(r.rows, r.cols, &r.weights),
            b: DVector::from_column_slice(&r.bias),
        });
    }
    Ok(Mlp { layers, relu_last })
}

impl NetworkFile {
    pub fn from_network(net: &Network, report: Option<&TrainReport>) -> Self {
        Self {
            format: FORMAT.into(),
            spec: net.spec,
            variant: net.variant,
            routing: net.routing,
            trunk: records(&net.trunk),
            outcome: net.outcome.iter().map(records).collect(),
            surrogacy: records(&net.surrogacy),
            coders: net.coders.iter().map(records).collect(),
            report: report.cloned(),
        }
    }

    pub fn into_network(self) -> Result<Network> {
        if self.format != FORMAT {
            return Err(Error::InvalidConfig(format!("unknown network format '{}'", self.format)));
        }
        Ok(Network {
            spec: self.spec,
            variant: self.variant,
            routing: self.routing,
            trunk: mlp(&self.trunk, true)?,
            outcome: self.outcome.iter().map(|r| mlp(r, false)).collect::<Result<_>>()?,
            surrogacy: mlp(&self.surrogacy, false)?,
            coders: self.coders.iter().map(|r| mlp(r, false)).collect::<Result<_>>()?,
        })
    }
}

pub fn save_network(net: &Network, report: Option<&TrainReport>, path: impl AsRef<Path>) -> Result<()> {
    let file = NetworkFile::from_network(net, report);
    std::fs::write(path, serde_json::to_string_pretty(&file)?)?;
    Ok(())
}

pub fn load_network(path: impl AsRef<Path>) -> Result<Network> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str::<NetworkFile>(&text)?.into_network()
}
