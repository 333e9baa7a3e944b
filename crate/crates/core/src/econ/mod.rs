//! Fixed-effects linear regression with cluster-robust inference, and
//! correlation matrices.

mod models;
mod ols;

pub use models::{
    build_design, correlation_csv, correlation_matrix, ladder_regressors, ladder_table_csv, pearson, regress_eq1,
    regress_eq2, run_ladder, FeLevel, Ladder, LADDER,
};
pub use ols::{
    cluster_vcov, estimate, fe_absorb, ols_fit, Absorbed, ClusterVcov, DesignMatrix, OlsSolution, PValueDistribution,
    RegressionFit, VcovOptions, INTERCEPT,
};
