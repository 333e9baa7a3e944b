//! The plot-level and village-plot-level regression ladders and their
//! result grids.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ols::{estimate, DesignMatrix, RegressionFit, VcovOptions, INTERCEPT};
use crate::error::{Error, Result};
use crate::format::fmt_sig;
use crate::survey::{SurveyPlotRecord, Variable};

/// Regressors added by each column of the ladder, in result-table order.
pub const LADDER: [&[Variable]; 4] = [
    &[Variable::ZeroTillage],
    &[
        Variable::HhSize,
        Variable::HeadMale,
        Variable::HeadAge,
        Variable::HeadSecondaryEdu,
        Variable::Hindu,
        Variable::ScheduledCaste,
    ],
    &[Variable::Tractor],
    &[
        Variable::PlotArea,
        Variable::PlotDistance,
        Variable::Esw,
        Variable::PlotOwned,
        Variable::Fertilizer,
        Variable::OutsideLabor,
    ],
];

/// Cumulative regressor list of ladder column `col` (0-based).
pub fn ladder_regressors(col: usize) -> Vec<Variable> {
    LADDER[..=col].iter().flat_map(|s| s.iter().copied()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeLevel {
    Village,
    District,
    None,
}

impl FeLevel {
    pub fn as_str(self) -> &'static str {
        match self {
            FeLevel::Village => "village",
            FeLevel::District => "district",
            FeLevel::None => "none",
        }
    }

    fn id(self, r: &SurveyPlotRecord) -> Option<String> {
        match self {
            FeLevel::Village => Some(r.village_id.clone()),
            FeLevel::District => Some(r.district_id.clone()),
            FeLevel::None => None,
        }
    }
}

impl fmt::Display for FeLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "village" => Ok(FeLevel::Village),
            "district" => Ok(FeLevel::District),
            "none" => Ok(FeLevel::None),
            other => Err(Error::Validation(format!("unknown fixed-effect level `{other}`"))),
        }
    }
}

/// Builds a design with listwise deletion; clusters are districts.
/// Returns the design and the number of records dropped for missing cells.
pub fn build_design(
    records: &[SurveyPlotRecord],
    outcome: impl Fn(&SurveyPlotRecord) -> Option<f64>,
    regressors: &[Variable],
    fe: FeLevel,
) -> (DesignMatrix, usize) {
    let mut d = DesignMatrix {
        outcome: Vec::new(),
        names: regressors.iter().map(|v| v.key().to_string()).collect(),
        columns: vec![Vec::new(); regressors.len()],
        fe_group: (fe != FeLevel::None).then(Vec::new),
        cluster: Vec::new(),
    };
    let mut dropped = 0;
    for r in records {
        let y = outcome(r);
        let xs: Option<Vec<f64>> = regressors.iter().map(|&v| r.value(v)).collect();
        match (y, xs) {
            (Some(y), Some(xs)) => {
                d.outcome.push(y);
                for (c, x) in d.columns.iter_mut().zip(xs) {
                    c.push(x);
                }
                if let (Some(g), Some(id)) = (d.fe_group.as_mut(), fe.id(r)) {
                    g.push(id);
                }
                d.cluster.push(r.district_id.clone());
            }
            _ => dropped += 1,
        }
    }
    (d, dropped)
}

/// Four nested specifications sharing outcome, fixed effect and clustering.
#[derive(Debug, Clone, Serialize)]
pub struct Ladder {
    pub outcome: String,
    pub fits: Vec<RegressionFit>,
    /// Records dropped by listwise deletion, per column.
    pub dropped: Vec<usize>,
}

pub fn run_ladder(
    records: &[SurveyPlotRecord],
    outcome_name: &str,
    outcome: impl Fn(&SurveyPlotRecord) -> Option<f64>,
    fe: FeLevel,
    opts: &VcovOptions,
) -> Result<Ladder> {
    let mut ladder = Ladder {
        outcome: outcome_name.to_string(),
        fits: Vec::new(),
        dropped: Vec::new(),
    };
    for col in 0..LADDER.len() {
        let (design, dropped) = build_design(records, &outcome, &ladder_regressors(col), fe);
        let label = (fe != FeLevel::None).then(|| fe.as_str());
        ladder.fits.push(estimate(&design, label, opts)?);
        ladder.dropped.push(dropped);
    }
    Ok(ladder)
}

/// Plot-level burn indicator on zero tillage and controls, village fixed
/// effects, district clusters.
pub fn regress_eq1(records: &[SurveyPlotRecord], opts: &VcovOptions) -> Result<Ladder> {
    run_ladder(records, "burn", |r| r.value(Variable::Burn), FeLevel::Village, opts)
}

/// Village-level remote burn fraction joined onto each plot of its village.
/// Records whose village has no fraction are dropped; the count is returned.
pub fn regress_eq2(
    records: &[SurveyPlotRecord],
    village_fractions: &BTreeMap<String, Option<f64>>,
    fe: FeLevel,
    opts: &VcovOptions,
) -> Result<(Ladder, usize)> {
    let (joined, missing): (Vec<&SurveyPlotRecord>, Vec<&SurveyPlotRecord>) = records
        .iter()
        .partition(|r| village_fractions.get(&r.village_id).copied().flatten().is_some());
    if !missing.is_empty() {
        log::info!("{} survey records lack a remote burn fraction and are dropped", missing.len());
    }
    let joined: Vec<SurveyPlotRecord> = joined.into_iter().cloned().collect();
    let ladder = run_ladder(&joined, "remote_fraction", |r| village_fractions[&r.village_id], fe, opts)?;
    Ok((ladder, missing.len()))
}

fn term_label(name: &str) -> String {
    Variable::SUMMARY_ORDER
        .iter()
        .find(|v| v.key() == name)
        .map(|v| v.label().to_string())
        .unwrap_or_else(|| name.to_string())
}

/// Result grid: one row per regressor (coefficient, standard error and
/// p-value per column), then footer rows.
pub fn ladder_table_csv(ladder: &Ladder) -> String {
    let mut terms: Vec<String> = ladder_regressors(LADDER.len() - 1).iter().map(|v| v.key().to_string()).collect();
    if ladder.fits.iter().any(|f| f.names.iter().any(|n| n == INTERCEPT)) {
        terms.push(INTERCEPT.to_string());
    }
    let k = ladder.fits.len();
    let mut s = String::from("term");
    for c in 1..=k {
        s.push_str(&format!(",coef_{c},se_{c},p_{c}"));
    }
    s.push('\n');
    for t in &terms {
        s.push_str(&term_label(t));
        for f in &ladder.fits {
            match f.coef(t) {
                Some((b, se, p)) => s.push_str(&format!(",{},{},{}", fmt_sig(b), fmt_sig(se), fmt_sig(p))),
                None => s.push_str(",,,"),
            }
        }
        s.push('\n');
    }
    let footer = |s: &mut String, label: &str, cell: &dyn Fn(&RegressionFit) -> String| {
        s.push_str(label);
        for f in &ladder.fits {
            s.push_str(&format!(",{},,", cell(f)));
        }
        s.push('\n');
    };
    footer(&mut s, "fixed_effects", &|f| f.fe_level.clone().unwrap_or_else(|| "none".into()));
    footer(&mut s, "observations", &|f| f.n_obs.to_string());
    footer(&mut s, "clusters", &|f| f.n_clusters.to_string());
    footer(&mut s, "r_squared", &|f| fmt_sig(f.r_squared));
    footer(&mut s, "r_squared_undefined", &|f| f.r_squared_undefined.to_string());
    footer(&mut s, "adj_r_squared", &|f| f.adj_r_squared.map(fmt_sig).unwrap_or_default());
    footer(&mut s, "dependent_mean", &|f| fmt_sig(f.dependent_mean));
    s
}

/// Pearson correlation over pairs where both values are present. `None`
/// with fewer than two pairs or when either side has no variation.
pub fn pearson(a: &[Option<f64>], b: &[Option<f64>]) -> Option<f64> {
    let pairs: Vec<(f64, f64)> = a.iter().zip(b).filter_map(|(x, y)| x.zip(*y)).collect();
    if pairs.len() < 2 {
        return None;
    }
    let n = pairs.len() as f64;
    let (mx, my) = pairs.iter().fold((0.0, 0.0), |(sx, sy), (x, y)| (sx + x, sy + y));
    let (mx, my) = (mx / n, my / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in &pairs {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Symmetric matrix of pairwise correlations with unit diagonal.
pub fn correlation_matrix(columns: &[Vec<Option<f64>>]) -> Vec<Vec<Option<f64>>> {
    let k = columns.len();
    let mut m = vec![vec![None; k]; k];
    for i in 0..k {
        for j in 0..=i {
            let r = if i == j {
                pearson(&columns[i], &columns[i]).map(|_| 1.0)
            } else {
                pearson(&columns[i], &columns[j])
            };
            m[i][j] = r;
            m[j][i] = r;
        }
    }
    m
}

pub fn correlation_csv(names: &[String], matrix: &[Vec<Option<f64>>]) -> String {
    let mut s = String::from("indicator");
    for n in names {
        s.push(',');
        s.push_str(n);
    }
    s.push('\n');
    for (n, row) in names.iter().zip(matrix) {
        s.push_str(n);
        for v in row {
            s.push(',');
            s.push_str(&v.map(fmt_sig).unwrap_or_default());
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ladder_order() {
        assert_eq!(ladder_regressors(0), vec![Variable::ZeroTillage]);
        assert_eq!(ladder_regressors(3).len(), 14);
        assert_eq!(ladder_regressors(2)[7], Variable::Tractor);
    }

    #[test]
    fn correlation_edge_cases() {
        let a = vec![Some(1.0), Some(2.0), Some(4.0)];
        let neg: Vec<_> = a.iter().map(|v| v.map(|x| -x)).collect();
        assert!((pearson(&a, &a).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&a, &neg).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(pearson(&a, &[Some(1.0); 3]), None);
        assert_eq!(pearson(&a, &[Some(1.0), None, None]), None);
        let m = correlation_matrix(&[a.clone(), neg, vec![Some(3.0); 3]]);
        assert_eq!(m[0][0], Some(1.0));
        assert_eq!(m[2][2], None);
        assert_eq!(m[0][1], m[1][0]);
        let csv = correlation_csv(&["a".into(), "b".into(), "c".into()], &m);
        assert!(csv.starts_with("indicator,a,b,c\na,1.00000,-1.00000,\n"));
    }

    proptest! {
        #[test]
        fn pearson_matches_covariance_ratio(raw in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0, 0u8..10), 3..40)) {
            let a: Vec<Option<f64>> = raw.iter().map(|(x, _, m)| (*m != 0).then_some(*x)).collect();
            let b: Vec<Option<f64>> = raw.iter().map(|(_, y, m)| (*m != 1).then_some(*y)).collect();
            let pairs: Vec<(f64, f64)> = raw.iter().filter(|(_, _, m)| *m > 1).map(|(x, y, _)| (*x, *y)).collect();
            let n = pairs.len() as f64;
            if pairs.len() >= 2 {
                let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
                let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
                let cov = pairs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / (n - 1.0);
                let sx = (pairs.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
                let sy = (pairs.iter().map(|p| (p.1 - my).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
                let r = pearson(&a, &b).unwrap();
                prop_assert!((r - cov / (sx * sy)).abs() < 1e-12);
            }
        }
    }
}
