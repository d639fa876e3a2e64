//! Forward-selected panel data approach for program evaluation.
//!
//! A single treated unit is compared against a pool of control units. Controls
//! are chosen greedily on the pre-treatment window (each step adds the unit
//! that raises R² the most), the path is truncated with a modified BIC, and
//! the resulting OLS fit predicts the untreated outcome after the
//! intervention. The average treatment effect is then tested with a
//! truncated-kernel HAC t-statistic.
//!
//! Alongside the estimator the crate ships a Lasso baseline, an exhaustive
//! best-subset oracle, and a factor-model Monte Carlo laboratory.

pub mod error;
pub mod inference;
pub mod lasso;
pub mod panel;
pub mod regression;
pub mod selection;
pub mod simulation;

#[cfg(test)]
mod oracle;

pub use error::{FspdaError, Result};
pub use inference::{
    ate_test, default_lag, effect_report, hac_lrv, hac_lrv_with_kernel, normal_cdf, normal_quantile,
    predict_counterfactual, two_sided_p_value, EffectReport, InferenceOptions, Kernel,
};
pub use lasso::{lasso_fit, lasso_path_bic, LassoFit, LassoPath, LassoProblem};
pub use nalgebra;
pub use panel::PanelData;
pub use regression::{gram_min_eigenvalue, ols_fit, DesignMatrix, OlsFit};
pub use selection::{
    best_subset_oracle, default_r_max, fit_selected, forward_select, modified_bic_r, BicChoice, FittedModel,
    SelectionPath, SelectionStep, StopReason, SubsetChoice, SubsetCriterion,
};
pub use simulation::{
    generate_factors, generate_panel, generate_replication, ks_distance_normal, oracle_check, run_monte_carlo,
    run_monte_carlo_sweep, zstat_sample, DgpConfig, FactorMode, LoadingMode, Method, MonteCarloReport,
    MonteCarloSettings, OracleCheckReport, SimulatedPanel, Treatment,
};
