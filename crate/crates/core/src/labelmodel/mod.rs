//! Identification of coder confusion matrices from two conditionally
//! independent annotations, latent class recovery and the surrogate outcome.

mod eigen;

pub use eigen::{eigen, eigen_2x2, eigen_general, EigenPairs};

use nalgebra::DMatrix;
use serde::{Serialize, Serializer};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

pub const MAX_CONDITION: f64 = 1e8;
pub const MIN_DENOMINATOR: f64 = 1e-3;

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn ser_matrices<S: Serializer>(ms: &[DMatrix<f64>], s: S) -> std::result::Result<S::Ok, S::Error> {
    ms.iter().map(rows).collect::<Vec<_>>().serialize(s)
}

/// Joint label frequencies for one stratum.
#[derive(Debug, Clone, PartialEq)]
pub struct StratumJoint {
    /// `m_t[t][(l, m)] = P(L1 = l, L2 = m, T = t | stratum, S = 1)`.
    pub m_t: [DMatrix<f64>; 2],
    /// `P(L1 = l, L2 = m | stratum, S = 1)`.
    pub m: DMatrix<f64>,
    /// `P(L1 = l, L2 = m | T = t, stratum, S = 1)`.
    pub b_t: [DMatrix<f64>; 2],
    pub counts: [DMatrix<f64>; 2],
}

impl StratumJoint {
    pub fn total(&self) -> f64 {
        self.counts[0].sum() + self.counts[1].sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointMatrices {
    pub num_classes: usize,
    pub coders: [usize; 2],
    pub strata: Vec<StratumJoint>,
}

/// Tabulates the two coders' labels over the annotated units in `units`.
/// `strata` maps every dataset unit to a stratum id; `None` means one stratum.
pub fn build_joint_matrices(
    ds: &Dataset,
    units: &[usize],
    coders: [usize; 2],
    strata: Option<&[usize]>,
) -> Result<JointMatrices> {
    if coders[0] == coders[1] || coders.iter().any(|&j| j >= ds.num_coders) {
        return Err(Error::InvalidConfig(format!(
            "need two distinct coders out of {}, got {coders:?}",
            ds.num_coders
        )));
    }
    let k = ds.num_classes;
    let num_strata = strata.map_or(1, |s| s.iter().copied().max().map_or(1, |m| m + 1));
    let mut counts = vec![[DMatrix::zeros(k, k), DMatrix::zeros(k, k)]; num_strata];
    for &i in units {
        let o = &ds.observations[i];
        if !o.is_labeled() {
            continue;
        }
        let st = strata.map_or(0, |s| s[i]);
        counts[st][o.t as usize][(o.labels[coders[0]], o.labels[coders[1]])] += 1.0;
    }
    let mut out = Vec::with_capacity(num_strata);
    for (st, c) in counts.into_iter().enumerate() {
        for t in 0..2 {
            if c[t].sum() == 0.0 {
                return Err(Error::LabelModel(format!(
                    "no annotated units in cell (t={t}, stratum={st})"
                )));
            }
        }
        let total = c[0].sum() + c[1].sum();
        let m_t = [&c[0] / total, &c[1] / total];
        out.push(StratumJoint {
            m: &m_t[0] + &m_t[1],
            b_t: [&c[0] / c[0].sum(), &c[1] / c[1].sum()],
            m_t,
            counts: c,
        });
    }
    Ok(JointMatrices {
        num_classes: k,
        coders,
        strata: out,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RecoveryDiagnostics {
    /// Smallest eigenvalue gap per (stratum, t) decomposition.
    pub eigen_gaps: Vec<f64>,
    pub max_imag: f64,
    /// Condition number of `m` per stratum.
    pub condition_numbers: Vec<f64>,
    /// Per coder and class, diagonal minus the largest off-diagonal entry of the column.
    pub dominance_margins: Vec<Vec<f64>>,
    /// Class distribution per stratum before clipping.
    pub prior_pre_clip: Vec<Vec<f64>>,
}

/// Column-stochastic confusion matrices, `a[j][(l, c)] = P(L_j = l | L = c)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoderErrorModel {
    pub coders: [usize; 2],
    #[serde(serialize_with = "ser_matrices")]
    pub a: Vec<DMatrix<f64>>,
    /// Class distribution pooled over strata, weighted by stratum size.
    pub class_prior: Vec<f64>,
    pub stratum_priors: Vec<Vec<f64>>,
    pub valid: bool,
    pub diagnostics: RecoveryDiagnostics,
}

fn margins(a: &DMatrix<f64>) -> Vec<f64> {
    (0..a.ncols())
        .map(|c| {
            let off = (0..a.nrows())
                .filter(|&l| l != c)
                .map(|l| a[(l, c)])
                .fold(f64::NEG_INFINITY, f64::max);
            a[(c, c)] - off
        })
        .collect()
}

fn clip_normalize(v: &[f64]) -> Vec<f64> {
    let clipped: Vec<f64> = v.iter().map(|x| x.clamp(0.0, 1.0)).collect();
    let sum: f64 = clipped.iter().sum();
    if sum > 0.0 {
        clipped.iter().map(|x| x / sum).collect()
    } else {
        vec![1.0 / v.len() as f64; v.len()]
    }
}

impl CoderErrorModel {
    /// Model from known confusion matrices.
    pub fn from_matrices(a1: DMatrix<f64>, a2: DMatrix<f64>, class_prior: Vec<f64>) -> Result<Self> {
        let k = class_prior.len();
        for a in [&a1, &a2] {
            if a.shape() != (k, k) {
                return Err(Error::Dimension {
                    what: "confusion matrix size",
                    expected: k,
                    got: a.nrows(),
                });
            }
            for c in 0..k {
                let s = a.column(c).sum();
                if (s - 1.0).abs() > 1e-8 {
                    return Err(Error::LabelModel(format!("column {c} sums to {s}")));
                }
            }
        }
        let valid = (0..k).all(|c| a1[(c, c)] > 0.5 && a2[(c, c)] > 0.5);
        let diagnostics = RecoveryDiagnostics {
            dominance_margins: vec![margins(&a1), margins(&a2)],
            prior_pre_clip: vec![class_prior.clone()],
            ..Default::default()
        };
        Ok(Self {
            coders: [0, 1],
            a: vec![a1, a2],
            stratum_priors: vec![class_prior.clone()],
            class_prior,
            valid,
            diagnostics,
        })
    }

    /// Both coders perfect.
    pub fn identity(num_classes: usize) -> Self {
        let i = DMatrix::identity(num_classes, num_classes);
        Self::from_matrices(i.clone(), i, vec![1.0 / num_classes as f64; num_classes])
            .expect("identity is column-stochastic")
    }

    pub fn num_classes(&self) -> usize {
        self.class_prior.len()
    }

    /// `P(L_j = c | L != c)`, averaging the wrong classes by the class prior.
    pub fn false_positive_rate(&self, coder: usize, c: usize) -> f64 {
        let a = &self.a[coder];
        let (mut num, mut den) = (0.0, 0.0);
        for (k, &w) in self.class_prior.iter().enumerate() {
            if k != c {
                num += w * a[(c, k)];
                den += w;
            }
        }
        if den > 0.0 {
            num / den
        } else {
            let others = self.num_classes() - 1;
            (0..self.num_classes()).filter(|&k| k != c).map(|k| a[(c, k)]).sum::<f64>() / others as f64
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Normalizes eigenvectors to sum one and orders them so each lands on the
/// class where it peaks.
fn confusion_from_eigenvectors(vectors: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let k = vectors.nrows();
    let mut a = DMatrix::zeros(k, k);
    let mut taken = vec![false; k];
    for col in 0..k {
        let v = vectors.column(col);
        let sum = v.sum();
        if sum.abs() < 1e-12 {
            return Err(Error::LabelModel("eigenvector sums to zero".into()));
        }
        let v = v / sum;
        let peak = v.imax();
        if taken[peak] {
            return Err(Error::LabelModel(
                "Assumption 8 violated: no column permutation makes the diagonal dominant".into(),
            ));
        }
        taken[peak] = true;
        a.set_column(peak, &v);
    }
    Ok(a)
}

fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.singular_values();
    let max = sv.max();
    let min = sv.min();
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

fn inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    m.clone()
        .try_inverse()
        .ok_or_else(|| Error::LabelModel(format!("{what} is singular")))
}

/// Recovers both coders' confusion matrices per stratum and predictor level
/// and averages them with equal weights.
pub fn recover_error_matrices(jm: &JointMatrices) -> Result<CoderErrorModel> {
    let k = jm.num_classes;
    let mut sums = [DMatrix::zeros(k, k), DMatrix::zeros(k, k)];
    let mut diag = RecoveryDiagnostics::default();
    let mut pieces = 0.0;
    for (st, sj) in jm.strata.iter().enumerate() {
        let cond = condition_number(&sj.m);
        diag.condition_numbers.push(cond);
        if cond > MAX_CONDITION {
            return Err(Error::LabelModel(format!(
                "joint matrix of stratum {st} is near-singular (condition number {cond:.3e})"
            )));
        }
        let m_inv = inverse(&sj.m, "joint matrix")?;
        for t in 0..2 {
            let left = eigen(&(&sj.m_t[t] * &m_inv))?;
            let right = eigen(&(sj.m_t[t].transpose() * m_inv.transpose()))?;
            diag.eigen_gaps.push(left.min_gap.min(right.min_gap));
            diag.max_imag = diag.max_imag.max(left.max_imag).max(right.max_imag);
            sums[0] += confusion_from_eigenvectors(&left.vectors)?;
            sums[1] += confusion_from_eigenvectors(&right.vectors)?;
            pieces += 1.0;
        }
    }
    let a: Vec<DMatrix<f64>> = sums.into_iter().map(|s| s / pieces).collect();
    let a1_inv = inverse(&a[0], "confusion matrix of coder 1")?;
    let a2_inv_t = inverse(&a[1], "confusion matrix of coder 2")?.transpose();
    let mut pooled = vec![0.0; k];
    let mut total = 0.0;
    let mut stratum_priors = Vec::new();
    for sj in &jm.strata {
        let raw = (&a1_inv * &sj.m * &a2_inv_t).diagonal();
        let raw: Vec<f64> = raw.iter().copied().collect();
        let prior = clip_normalize(&raw);
        let w = sj.total();
        for c in 0..k {
            pooled[c] += w * prior[c];
        }
        total += w;
        diag.prior_pre_clip.push(raw);
        stratum_priors.push(prior);
    }
    diag.dominance_margins = a.iter().map(margins).collect();
    let valid = a.iter().all(|m| (0..k).all(|c| m[(c, c)] > 0.5));
    Ok(CoderErrorModel {
        coders: jm.coders,
        a,
        class_prior: pooled.iter().map(|p| p / total).collect(),
        stratum_priors,
        valid,
        diagnostics: diag,
    })
}

/// `theta[stratum][t][c] = P(L = c | T = t, stratum)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThetaEstimate {
    pub theta: Vec<[Vec<f64>; 2]>,
    pub pre_clip: Vec<[Vec<f64>; 2]>,
}

pub fn recover_theta(jm: &JointMatrices, cem: &CoderErrorModel) -> Result<ThetaEstimate> {
    if !cem.valid {
        return Err(Error::LabelModel("coder error model is not diagonally dominant".into()));
    }
    let a1_inv = inverse(&cem.a[0], "confusion matrix of coder 1")?;
    let a2_inv_t = inverse(&cem.a[1], "confusion matrix of coder 2")?.transpose();
    let mut theta = Vec::new();
    let mut pre_clip = Vec::new();
    for sj in &jm.strata {
        let raw = |t: usize| -> Vec<f64> {
            (&a1_inv * &sj.b_t[t] * &a2_inv_t).diagonal().iter().copied().collect()
        };
        let r = [raw(0), raw(1)];
        theta.push([clip_normalize(&r[0]), clip_normalize(&r[1])]);
        pre_clip.push(r);
    }
    Ok(ThetaEstimate { theta, pre_clip })
}

/// `M_c = prod_j (1{L_j = c} - P(L_j = c | L != c)) / (P(L_j = c | L = c) - P(L_j = c | L != c))`.
pub fn surrogate_outcome(l1: usize, l2: usize, cem: &CoderErrorModel, c: usize) -> Result<f64> {
    let mut out = 1.0;
    for (j, l) in [l1, l2].into_iter().enumerate() {
        let fp = cem.false_positive_rate(j, c);
        let denominator = cem.a[j][(c, c)] - fp;
        if denominator <= MIN_DENOMINATOR {
            return Err(Error::UninformativeCoder { class: c, denominator });
        }
        out *= (f64::from(u8::from(l == c)) - fp) / denominator;
    }
    Ok(out)
}

/// Surrogate outcomes for every class, indexed by class.
pub fn surrogate_outcomes(l1: usize, l2: usize, cem: &CoderErrorModel) -> Result<Vec<f64>> {
    (0..cem.num_classes()).map(|c| surrogate_outcome(l1, l2, cem, c)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Observation;

    fn ds(rows: &[(u8, usize, usize)]) -> Dataset {
        let obs = rows
            .iter()
            .map(|&(t, l1, l2)| Observation {
                t,
                y_embed: vec![0.0],
                z: vec![],
                s: 1,
                labels: vec![l1, l2],
                gold: None,
            })
            .collect();
        Dataset::new(obs, 1, 0, 2, 2).unwrap()
    }

    #[test]
    fn hand_tabulated_joint_matrices() {
        let rows = [
            (0, 0, 0),
            (0, 0, 0),
            (0, 0, 1),
            (0, 1, 1),
            (1, 1, 1),
            (1, 1, 1),
            (1, 1, 0),
            (1, 0, 0),
        ];
        let d = ds(&rows);
        let units: Vec<usize> = (0..8).collect();
        let jm = build_joint_matrices(&d, &units, [0, 1], None).unwrap();
        let s = &jm.strata[0];
        assert_eq!(s.m_t[0], DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 1.0]) / 8.0);
        assert_eq!(s.m_t[1], DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 2.0]) / 8.0);
        assert_eq!(s.m, DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 3.0]) / 8.0);
        assert_eq!(s.b_t[1], DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 2.0]) / 4.0);
        assert_eq!(s.m.sum(), 1.0);
    }

    #[test]
    fn agreeing_coders_give_diagonal_matrices() {
        let d = ds(&[(0, 0, 0), (0, 1, 1), (1, 1, 1), (1, 0, 0), (1, 1, 1)]);
        let jm = build_joint_matrices(&d, &[0, 1, 2, 3, 4], [0, 1], None).unwrap();
        let m = &jm.strata[0].m;
        assert_eq!(m[(0, 1)], 0.0);
        assert_eq!(m[(1, 0)], 0.0);
    }

    #[test]
    fn empty_cell_is_named() {
        let d = ds(&[(0, 0, 0), (0, 1, 1)]);
        let err = build_joint_matrices(&d, &[0, 1], [0, 1], None).unwrap_err().to_string();
        assert!(err.contains("t=1, stratum=0"), "{err}");
    }

    #[test]
    fn surrogate_hand_values() {
        let a = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.1, 0.9]);
        let cem = CoderErrorModel::from_matrices(a.clone(), a, vec![0.5, 0.5]).unwrap();
        assert!((surrogate_outcome(1, 1, &cem, 1).unwrap() - 1.265625).abs() < 1e-15);
        assert!((surrogate_outcome(0, 0, &cem, 1).unwrap() - 0.015625).abs() < 1e-15);
        let id = CoderErrorModel::identity(2);
        assert_eq!(surrogate_outcome(1, 1, &id, 1).unwrap(), 1.0);
        assert_eq!(surrogate_outcome(0, 1, &id, 1).unwrap(), 0.0);
    }

    #[test]
    fn uninformative_coder_is_an_error() {
        let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]);
        let cem = CoderErrorModel::from_matrices(a.clone(), a, vec![0.5, 0.5]).unwrap();
        assert!(!cem.valid);
        let err = surrogate_outcome(1, 1, &cem, 1).unwrap_err().to_string();
        assert!(err.contains("uninformative coder for class 1"));
    }

    #[test]
    fn json_is_row_major() {
        let a = DMatrix::from_row_slice(2, 2, &[0.9, 0.2, 0.1, 0.8]);
        let cem = CoderErrorModel::from_matrices(a.clone(), a, vec![0.5, 0.5]).unwrap();
        let v: serde_json::Value = serde_json::from_str(&cem.to_json().unwrap()).unwrap();
        assert_eq!(v["a"][0][0][1], 0.2);
        assert_eq!(v["a"][0][1][0], 0.1);
    }
}
