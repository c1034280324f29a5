use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Fully connected layer. `w` is `in x out` so that a row-per-sample batch
/// maps as `X * w + 1 b^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl Dense {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            w: DMatrix::zeros(fan_in, fan_out),
            b: DVector::zeros(fan_out),
        }
    }

    /// Weights uniform on `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, zero biases.
    pub fn init<R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        Self {
            w: DMatrix::from_fn(fan_in, fan_out, |_, _| rng.random_range(-bound..=bound)),
            b: DVector::zeros(fan_out),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.w.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.w.ncols()
    }

    fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = x * &self.w;
        for (j, mut col) in z.column_iter_mut().enumerate() {
            col.add_scalar_mut(self.b[j]);
        }
        z
    }
}

/// Stack of dense layers with rectifiers between them. `relu_last` controls
/// whether the final layer is rectified too (trunk) or left linear (heads).
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub relu_last: bool,
}

pub(crate) struct MlpCache {
    inputs: Vec<DMatrix<f64>>,
    pre: Vec<DMatrix<f64>>,
}

fn relu(mut m: DMatrix<f64>) -> DMatrix<f64> {
    m.apply(|v| {
        if *v < 0.0 {
            *v = 0.0
        }
    });
    m
}

impl Mlp {
    pub fn init<R: Rng>(fan_in: usize, widths: &[usize], relu_last: bool, rng: &mut R) -> Self {
        let mut layers = Vec::with_capacity(widths.len());
        let mut prev = fan_in;
        for &w in widths {
            layers.push(Dense::init(prev, w, rng));
            prev = w;
        }
        Self { layers, relu_last }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Dense::zeros(l.fan_in(), l.fan_out()))
                .collect(),
            relu_last: self.relu_last,
        }
    }

    pub fn fan_in(&self) -> usize {
        self.layers.first().map_or(0, Dense::fan_in)
    }

    pub fn fan_out(&self) -> usize {
        self.layers.last().map_or(0, Dense::fan_out)
    }

    fn rectified(&self, layer: usize) -> bool {
        layer + 1 < self.layers.len() || self.relu_last
    }

    pub fn forward(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut h = x.clone();
        for (k, layer) in self.layers.iter().enumerate() {
            let z = layer.apply(&h);
            h = if self.rectified(k) { relu(z) } else { z };
        }
        h
    }

    pub(crate) fn forward_cached(&self, x: &DMatrix<f64>) -> (DMatrix<f64>, MlpCache) {
        let mut cache = MlpCache {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
        };
        let mut h = x.clone();
        for (k, layer) in self.layers.iter().enumerate() {
            let z = layer.apply(&h);
            cache.inputs.push(h);
            h = if self.rectified(k) { relu(z.clone()) } else { z.clone() };
            cache.pre.push(z);
        }
        (h, cache)
    }

    /// Accumulates parameter gradients into `grad` and returns the gradient
    /// with respect to the input.
    pub(crate) fn backward(
        &self,
        cache: &MlpCache,
        d_out: DMatrix<f64>,
        grad: &mut Mlp,
    ) -> DMatrix<f64> {
        let mut d = d_out;
        for k in (0..self.layers.len()).rev() {
            if self.rectified(k) {
                d.zip_apply(&cache.pre[k], |g, z| {
                    if z <= 0.0 {
                        *g = 0.0
                    }
                });
            }
            let g = &mut grad.layers[k];
            g.w += cache.inputs[k].tr_mul(&d);
            for (j, col) in d.column_iter().enumerate() {
                g.b[j] += col.sum();
            }
            d = &d * self.layers[k].w.transpose();
        }
        d
    }

    pub fn param_slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.w.as_slice(), l.b.as_slice()])
            .collect()
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.w.as_mut_slice(), l.b.as_mut_slice()])
            .collect()
    }
}

/// `[a | b]` column concatenation; `b` may have zero columns.
pub(crate) fn hcat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    if b.ncols() == 0 {
        return a.clone();
    }
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}
