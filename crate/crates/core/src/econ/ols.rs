//! Least squares with absorbed fixed effects and cluster-robust inference.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{Error, Result};

/// Name given to the constant column when no fixed effects are absorbed.
pub const INTERCEPT: &str = "(intercept)";

/// Relative size below which a QR pivot marks a column as collinear.
const RANK_TOL: f64 = 1e-10;

/// Regression inputs with no missing cells.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub outcome: Vec<f64>,
    pub names: Vec<String>,
    /// Column-major regressors, one `Vec` per name.
    pub columns: Vec<Vec<f64>>,
    /// Fixed-effect group per row; `None` fits an intercept instead.
    pub fe_group: Option<Vec<String>>,
    pub cluster: Vec<String>,
}

impl DesignMatrix {
    pub fn n_obs(&self) -> usize {
        self.outcome.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.outcome.len();
        if self.names.len() != self.columns.len() {
            return Err(Error::Validation("regressor names and columns differ in count".into()));
        }
        if self.columns.iter().any(|c| c.len() != n) || self.cluster.len() != n {
            return Err(Error::Validation("design columns differ in length".into()));
        }
        if self.fe_group.as_ref().is_some_and(|g| g.len() != n) {
            return Err(Error::Validation("fixed-effect ids differ in length".into()));
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !finite(&self.outcome) || !self.columns.iter().all(|c| finite(c)) {
            return Err(Error::Validation("design contains non-finite values".into()));
        }
        Ok(())
    }

    /// Keeps the listed rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> DesignMatrix {
        let pick = |v: &[f64]| rows.iter().map(|&i| v[i]).collect::<Vec<_>>();
        let pick_s = |v: &[String]| rows.iter().map(|&i| v[i].clone()).collect::<Vec<_>>();
        DesignMatrix {
            outcome: pick(&self.outcome),
            names: self.names.clone(),
            columns: self.columns.iter().map(|c| pick(c)).collect(),
            fe_group: self.fe_group.as_ref().map(|g| pick_s(g)),
            cluster: pick_s(&self.cluster),
        }
    }
}

/// Dense ids for string labels, numbered in sorted label order.
pub(crate) fn encode_labels(labels: &[String]) -> (Vec<usize>, usize) {
    let mut ids: BTreeMap<&str, usize> = labels.iter().map(|l| (l.as_str(), 0)).collect();
    for (k, v) in ids.values_mut().enumerate() {
        *v = k;
    }
    let n = ids.len();
    (labels.iter().map(|l| ids[l.as_str()]).collect(), n)
}

/// A design after within-group demeaning.
#[derive(Debug, Clone, PartialEq)]
pub struct Absorbed {
    /// Design rows retained (groups of size one are dropped).
    pub rows: Vec<usize>,
    pub outcome: Vec<f64>,
    pub columns: Vec<Vec<f64>>,
    pub n_groups: usize,
    pub dropped_singletons: usize,
}

/// Subtracts group means from the outcome and every regressor, dropping
/// groups with a single observation.
///
/// Means are taken relative to the group's first value, so a column that is
/// constant within a group demeans to exactly zero.
pub fn fe_absorb(design: &DesignMatrix) -> Result<Absorbed> {
    design.validate()?;
    let groups = design
        .fe_group
        .as_ref()
        .ok_or_else(|| Error::Validation("fe_absorb needs fixed-effect ids".into()))?;
    let (ids, n_ids) = encode_labels(groups);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_ids];
    for (row, &g) in ids.iter().enumerate() {
        members[g].push(row);
    }
    let dropped_singletons = members.iter().filter(|m| m.len() == 1).count();
    if dropped_singletons > 0 {
        log::info!("dropped {dropped_singletons} singleton fixed-effect groups");
    }
    let mut rows: Vec<usize> = members.iter().filter(|m| m.len() > 1).flatten().copied().collect();
    if rows.is_empty() {
        return Err(Error::Insufficient("every fixed-effect group is a singleton".into()));
    }
    rows.sort_unstable();
    let n_groups = n_ids - dropped_singletons;
    let demean = |v: &[f64]| -> Vec<f64> {
        let mut mean = vec![0.0; n_ids];
        for m in members.iter().filter(|m| m.len() > 1) {
            let first = v[m[0]];
            let shift: f64 = m.iter().map(|&i| v[i] - first).sum();
            mean[ids[m[0]]] = first + shift / m.len() as f64;
        }
        rows.iter().map(|&i| v[i] - mean[ids[i]]).collect()
    };
    Ok(Absorbed {
        outcome: demean(&design.outcome),
        columns: design.columns.iter().map(|c| demean(c)).collect(),
        rows,
        n_groups,
        dropped_singletons,
    })
}

/// Least-squares coefficients with the pieces inference needs.
#[derive(Debug, Clone)]
pub struct OlsSolution {
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub residuals: Vec<f64>,
    /// Upper-triangular factor of the regressor matrix.
    pub r: DMatrix<f64>,
}

impl OlsSolution {
    /// `(XᵀX)⁻¹` from the triangular factor.
    pub fn xtx_inverse(&self) -> DMatrix<f64> {
        let k = self.r.ncols();
        let r_inv = self
            .r
            .solve_upper_triangular(&DMatrix::identity(k, k))
            .expect("full-rank factor is invertible");
        &r_inv * r_inv.transpose()
    }
}

/// Solves least squares by Householder QR. Fails naming the first column
/// that is (numerically) a combination of the columns before it.
pub fn ols_fit(y: &[f64], columns: &[Vec<f64>], names: &[String]) -> Result<OlsSolution> {
    let n = y.len();
    let k = columns.len();
    if k == 0 {
        return Err(Error::Validation("regression without regressors".into()));
    }
    if n < k {
        return Err(Error::Insufficient(format!("{n} observations for {k} regressors")));
    }
    let x = DMatrix::from_fn(n, k, |i, j| columns[j][i]);
    let qr = x.clone().qr();
    let r = qr.r();
    for j in 0..k {
        let norm = x.column(j).norm();
        if r[(j, j)].abs() <= RANK_TOL * norm || norm == 0.0 {
            return Err(Error::RankDeficient {
                column: names[j].clone(),
            });
        }
    }
    let mut qty = DVector::from_column_slice(y);
    qr.q_tr_mul(&mut qty);
    let beta = r
        .solve_upper_triangular(&qty.rows(0, k).into_owned())
        .ok_or_else(|| Error::RankDeficient {
            column: names[k - 1].clone(),
        })?;
    let fitted = &x * &beta;
    let residuals = y.iter().zip(fitted.iter()).map(|(a, b)| a - b).collect();
    Ok(OlsSolution {
        names: names.to_vec(),
        coefficients: beta.iter().copied().collect(),
        residuals,
        r,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PValueDistribution {
    /// Student t with (clusters − 1) degrees of freedom.
    StudentT,
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VcovOptions {
    /// Apply the G/(G−1)·(N−1)/(N−K) small-sample factor.
    pub small_sample: bool,
    pub p_values: PValueDistribution,
}

impl Default for VcovOptions {
    fn default() -> Self {
        VcovOptions {
            small_sample: true,
            p_values: PValueDistribution::StudentT,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClusterVcov {
    pub vcov: DMatrix<f64>,
    pub se: Vec<f64>,
    pub p_values: Vec<f64>,
    pub n_clusters: usize,
}

/// Cluster-robust sandwich covariance for a fitted model whose working
/// regressors are `columns`.
pub fn cluster_vcov(sol: &OlsSolution, columns: &[Vec<f64>], clusters: &[String], opts: &VcovOptions) -> Result<ClusterVcov> {
    let n = sol.residuals.len();
    let k = columns.len();
    if clusters.len() != n {
        return Err(Error::Validation("cluster ids differ in length from residuals".into()));
    }
    let (ids, g) = encode_labels(clusters);
    if g < 2 {
        return Err(Error::Insufficient("cluster-robust errors need at least two clusters".into()));
    }
    let mut scores = DMatrix::<f64>::zeros(g, k);
    for i in 0..n {
        let e = sol.residuals[i];
        for j in 0..k {
            scores[(ids[i], j)] += columns[j][i] * e;
        }
    }
    let meat = scores.transpose() * &scores;
    let bread = sol.xtx_inverse();
    let mut vcov = &bread * meat * &bread;
    if opts.small_sample {
        let (gf, nf, kf) = (g as f64, n as f64, k as f64);
        vcov *= gf / (gf - 1.0) * (nf - 1.0) / (nf - kf);
    }
    let se: Vec<f64> = (0..k).map(|j| vcov[(j, j)].max(0.0).sqrt()).collect();
    let dist: Box<dyn Fn(f64) -> f64> = match opts.p_values {
        PValueDistribution::StudentT => {
            let t = StudentsT::new(0.0, 1.0, (g - 1) as f64).expect("positive degrees of freedom");
            Box::new(move |x| t.sf(x))
        }
        PValueDistribution::Normal => {
            let z = Normal::new(0.0, 1.0).expect("standard normal");
            Box::new(move |x| z.sf(x))
        }
    };
    let p_values = sol
        .coefficients
        .iter()
        .zip(&se)
        .map(|(&b, &s)| {
            if s == 0.0 {
                if b == 0.0 {
                    1.0
                } else {
                    0.0
                }
            } else {
                (2.0 * dist((b / s).abs())).min(1.0)
            }
        })
        .collect();
    Ok(ClusterVcov {
        vcov,
        se,
        p_values,
        n_clusters: g,
    })
}

/// Coefficients, cluster-robust inference and fit statistics.
#[derive(Debug, Clone, Serialize)]
pub struct RegressionFit {
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub se: Vec<f64>,
    pub p_values: Vec<f64>,
    pub r_squared: f64,
    /// Set when the outcome has no variation and R² is reported as 0.
    pub r_squared_undefined: bool,
    pub adj_r_squared: Option<f64>,
    pub n_obs: usize,
    pub n_clusters: usize,
    /// Label of the absorbed fixed effect, if any.
    pub fe_level: Option<String>,
    pub n_fe_groups: usize,
    pub dropped_singletons: usize,
    pub dependent_mean: f64,
    #[serde(skip)]
    pub vcov: Vec<Vec<f64>>,
    #[serde(skip)]
    pub residuals: Vec<f64>,
}

impl RegressionFit {
    pub fn coef(&self, name: &str) -> Option<(f64, f64, f64)> {
        let j = self.names.iter().position(|n| n == name)?;
        Some((self.coefficients[j], self.se[j], self.p_values[j]))
    }
}

/// Full estimation: absorb fixed effects (or add an intercept), solve,
/// then cluster the covariance.
pub fn estimate(design: &DesignMatrix, fe_label: Option<&str>, opts: &VcovOptions) -> Result<RegressionFit> {
    design.validate()?;
    let (rows, y, mut cols, n_groups, dropped, names) = match &design.fe_group {
        Some(_) => {
            let a = fe_absorb(design)?;
            (a.rows, a.outcome, a.columns, a.n_groups, a.dropped_singletons, design.names.clone())
        }
        None => {
            let mut names = design.names.clone();
            names.push(INTERCEPT.into());
            let rows: Vec<usize> = (0..design.n_obs()).collect();
            (rows, design.outcome.clone(), design.columns.clone(), 0, 0, names)
        }
    };
    if design.fe_group.is_none() {
        cols.push(vec![1.0; y.len()]);
    }
    let sol = ols_fit(&y, &cols, &names)?;
    let clusters: Vec<String> = rows.iter().map(|&i| design.cluster[i].clone()).collect();
    let cv = cluster_vcov(&sol, &cols, &clusters, opts)?;

    let raw: Vec<f64> = rows.iter().map(|&i| design.outcome[i]).collect();
    let n = raw.len();
    let mean = raw.iter().sum::<f64>() / n as f64;
    let sst: f64 = raw.iter().map(|v| (v - mean) * (v - mean)).sum();
    let ssr: f64 = sol.residuals.iter().map(|e| e * e).sum();
    let (r_squared, undefined) = if sst > 0.0 { ((1.0 - ssr / sst).clamp(0.0, 1.0), false) } else { (0.0, true) };
    let slopes = design.names.len();
    let k_adj = slopes + if design.fe_group.is_some() { n_groups } else { 1 };
    let adj_r_squared = (n > k_adj && !undefined).then(|| 1.0 - (1.0 - r_squared) * (n as f64 - 1.0) / (n - k_adj) as f64);
    let k = cols.len();
    Ok(RegressionFit {
        names,
        coefficients: sol.coefficients.clone(),
        se: cv.se,
        p_values: cv.p_values,
        r_squared,
        r_squared_undefined: undefined,
        adj_r_squared,
        n_obs: n,
        n_clusters: cv.n_clusters,
        fe_level: fe_label.map(str::to_string),
        n_fe_groups: n_groups,
        dropped_singletons: dropped,
        dependent_mean: mean,
        vcov: (0..k).map(|i| (0..k).map(|j| cv.vcov[(i, j)]).collect()).collect(),
        residuals: sol.residuals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|j| format!("x{j}")).collect()
    }

    #[test]
    fn exact_line_with_intercept() {
        let sol = ols_fit(&[1.0, 2.0, 3.0], &[vec![1.0, 2.0, 3.0], vec![1.0; 3]], &names(2)).unwrap();
        assert_relative_eq!(sol.coefficients[0], 1.0, epsilon = 1e-14);
        assert!(sol.coefficients[1].abs() < 1e-14);
    }

    #[test]
    fn orthogonal_outcome_has_zero_slope() {
        let sol = ols_fit(&[1.0, -1.0, 1.0, -1.0], &[vec![1.0, 1.0, -1.0, -1.0]], &names(1)).unwrap();
        assert!(sol.coefficients[0].abs() < 1e-15);
    }

    #[test]
    fn rank_deficiency_names_the_column() {
        let x0 = vec![1.0, 2.0, 3.0, 4.0];
        let x1 = vec![2.0, 4.0, 6.0, 8.0];
        let err = ols_fit(&[1.0, 0.0, 1.0, 0.0], &[x0, x1], &["a".into(), "b".into()]).unwrap_err();
        assert!(matches!(err, Error::RankDeficient { ref column } if column == "b"), "{err}");
        assert!(ols_fit(&[1.0], &[vec![1.0], vec![2.0]], &names(2)).is_err());
    }

    #[test]
    fn absorb_removes_group_means() {
        let d = DesignMatrix {
            outcome: vec![1.0, 3.0, 10.0, 14.0, 5.0],
            names: vec!["x".into()],
            columns: vec![vec![2.0, 2.0, 1.0, 3.0, 7.0]],
            fe_group: Some(vec!["a".into(), "a".into(), "b".into(), "b".into(), "c".into()]),
            cluster: vec!["1".into(); 5],
        };
        let a = fe_absorb(&d).unwrap();
        assert_eq!(a.rows, vec![0, 1, 2, 3]);
        assert_eq!(a.dropped_singletons, 1);
        assert_eq!(a.outcome, vec![-1.0, 1.0, -2.0, 2.0]);
        assert_eq!(a.columns[0], vec![0.0, 0.0, -1.0, 1.0]);
        let single = DesignMatrix {
            fe_group: Some(vec!["a".into(); 5]),
            ..d.clone()
        };
        let a = fe_absorb(&single).unwrap();
        assert!(a.outcome.iter().sum::<f64>().abs() < 1e-12);
        let all_single = DesignMatrix {
            fe_group: Some((0..5).map(|i| i.to_string()).collect()),
            ..d
        };
        assert!(fe_absorb(&all_single).is_err());
    }

    #[test]
    fn constant_outcome_gives_flagged_zero_fit() {
        let d = DesignMatrix {
            outcome: vec![0.0; 6],
            names: vec!["x".into()],
            columns: vec![vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0]],
            fe_group: Some(vec!["a".into(), "a".into(), "a".into(), "b".into(), "b".into(), "b".into()]),
            cluster: vec!["1".into(), "1".into(), "2".into(), "2".into(), "3".into(), "3".into()],
        };
        let fit = estimate(&d, Some("village"), &VcovOptions::default()).unwrap();
        assert_eq!(fit.coefficients, vec![0.0]);
        assert_eq!(fit.p_values, vec![1.0]);
        assert!(fit.r_squared_undefined);
        assert_eq!(fit.r_squared, 0.0);
    }

    #[test]
    fn single_cluster_is_rejected() {
        let d = DesignMatrix {
            outcome: vec![1.0, 2.0, 4.0],
            names: vec!["x".into()],
            columns: vec![vec![1.0, 2.0, 3.0]],
            fe_group: None,
            cluster: vec!["1".into(); 3],
        };
        assert!(matches!(estimate(&d, None, &VcovOptions::default()), Err(Error::Insufficient(_))));
    }
}
