use nalgebra::DMatrix;
use serde::Serialize;

/// Doubly centered Euclidean distance matrix of a sample (rows are units).
#[derive(Debug, Clone)]
pub struct CenteredDistances {
    a: DMatrix<f64>,
    dvar: f64,
}

impl CenteredDistances {
    pub fn new(x: &DMatrix<f64>) -> Self {
        let n = x.nrows();
        let mut a = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in (i + 1)..n {
                let d = (x.row(i) - x.row(j)).norm();
                a[(i, j)] = d;
                a[(j, i)] = d;
            }
        }
        let rows: Vec<f64> = a.row_iter().map(|r| r.mean()).collect();
        let grand = rows.iter().sum::<f64>() / n.max(1) as f64;
        for i in 0..n {
            for j in 0..n {
                a[(i, j)] += grand - rows[i] - rows[j];
            }
        }
        let dvar = a.component_mul(&a).mean();
        Self { a, dvar }
    }

    pub fn len(&self) -> usize {
        self.a.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn degenerate(&self) -> bool {
        self.dvar <= f64::EPSILON * self.a.amax().max(1.0).powi(2)
    }

    /// Distance correlation with `other`, whose units are reindexed by `perm`.
    pub fn correlation(&self, other: &CenteredDistances, perm: Option<&[usize]>) -> f64 {
        if self.degenerate() || other.degenerate() {
            return 0.0;
        }
        let n = self.len();
        let b = &other.a;
        let mut s = 0.0;
        for j in 0..n {
            let pj = perm.map_or(j, |p| p[j]);
            for i in 0..n {
                let pi = perm.map_or(i, |p| p[i]);
                s += self.a[(i, j)] * b[(pi, pj)];
            }
        }
        let dcov = s / (n * n) as f64;
        (dcov.max(0.0) / (self.dvar * other.dvar).sqrt()).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DistanceCorrelation {
    pub value: f64,
    /// One of the inputs has zero distance variance; `value` is then 0.
    pub degenerate: bool,
}

pub fn distance_correlation(x: &DMatrix<f64>, y: &DMatrix<f64>) -> DistanceCorrelation {
    assert_eq!(x.nrows(), y.nrows(), "samples differ in length");
    let (a, b) = (CenteredDistances::new(x), CenteredDistances::new(y));
    DistanceCorrelation {
        value: a.correlation(&b, None),
        degenerate: a.degenerate() || b.degenerate(),
    }
}
