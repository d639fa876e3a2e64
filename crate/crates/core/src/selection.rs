//! Greedy forward selection of control units, modified-BIC stopping and the
//! exhaustive best-subset oracle.
//!
//! Forward selection keeps an orthonormal basis of the selected (centered,
//! when an intercept is fitted) control columns and the residuals of every
//! remaining candidate against that basis. The R² gain of candidate `j` is
//! then `(x̃_j · e)² / ‖x̃_j‖²` with `e` the current response residual, so a
//! step costs `O(N·T1)` instead of `N` fresh regressions.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{FspdaError, Result};
use crate::panel::PanelData;
use crate::regression::{baseline_variance, ols_fit, r_squared_from, DesignMatrix};

/// A candidate whose residual norm against the selected basis is at most this
/// fraction of its own norm adds no new direction.
pub const COLLINEARITY_TOLERANCE: f64 = 1e-10;

/// Default modified-BIC constant for forward selection.
pub const FORWARD_BIC_CONSTANT: f64 = 1.0;

/// Hard ceiling used by [`default_r_max`].
pub const R_MAX_CEILING: usize = 50;

/// Largest number of subsets the best-subset oracle will enumerate.
pub const ORACLE_SUBSET_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionStep {
    pub chosen_index: usize,
    pub r_squared: f64,
    pub sigma2_hat: f64,
    /// OLS coefficients over the units selected so far, intercept first when
    /// enabled.
    pub coefficients: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// The requested (or capped) number of steps was taken.
    RMaxReached,
    /// Every remaining candidate was collinear with the selected set.
    RankDeficient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionPath {
    pub steps: Vec<SelectionStep>,
    pub stop_reason: StopReason,
    /// The cap actually applied after clamping the requested `r_max`.
    pub effective_r_max: usize,
    pub intercept: bool,
}

impl SelectionPath {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn stopped_early(&self) -> bool {
        self.stop_reason == StopReason::RankDeficient
    }

    pub fn chosen(&self) -> Vec<usize> {
        self.steps.iter().map(|s| s.chosen_index).collect()
    }

    pub fn sigma2_path(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.sigma2_hat).collect()
    }
}

/// Final model on the first `r_hat` selected units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub selected: Vec<usize>,
    /// Intercept first when `intercept` is set.
    pub coefficients: Vec<f64>,
    pub intercept: bool,
    pub sigma2_hat: f64,
    pub r_squared: f64,
    pub r_hat: usize,
}

impl FittedModel {
    pub fn intercept_value(&self) -> f64 {
        if self.intercept {
            self.coefficients[0]
        } else {
            0.0
        }
    }

    pub fn slopes(&self) -> &[f64] {
        let offset = usize::from(self.intercept);
        &self.coefficients[offset..]
    }
}

/// `min(N, ⌈T1/2⌉, 50)`.
pub fn default_r_max(panel: &PanelData) -> usize {
    panel.n_units().min(panel.t1().div_ceil(2)).min(R_MAX_CEILING)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn forward_select(panel: &PanelData, r_max: usize) -> Result<SelectionPath> {
    if r_max == 0 {
        return Err(FspdaError::InvalidArgument("r_max must be at least 1".into()));
    }
    let t1 = panel.t1();
    let n = panel.n_units();
    let intercept = panel.intercept();
    let df_cap = t1.saturating_sub(usize::from(intercept) + 2);
    let cap = r_max.min(n).min(df_cap);
    if cap == 0 {
        return Err(FspdaError::InvalidPanel(format!(
            "{t1} pre-treatment rows leave no room for a regressor"
        )));
    }

    let pre_y = panel.pre_treated();
    let y_mean = if intercept { pre_y.mean() } else { 0.0 };
    let y_centered: Vec<f64> = pre_y.iter().map(|v| v - y_mean).collect();
    let baseline = baseline_variance(&pre_y, intercept);

    let controls = panel.controls();
    let col_means: Vec<f64> = (0..n)
        .map(|j| {
            if intercept {
                controls.column(j).rows(0, t1).mean()
            } else {
                0.0
            }
        })
        .collect();
    let centered_column = |j: usize| -> Vec<f64> {
        controls
            .column(j)
            .rows(0, t1)
            .iter()
            .map(|v| v - col_means[j])
            .collect()
    };
    let raw_norms: Vec<f64> = (0..n).map(|j| controls.column(j).rows(0, t1).norm()).collect();

    // Candidate residuals against the current basis.
    let mut candidates: Vec<Vec<f64>> = (0..n).map(centered_column).collect();
    let mut available = vec![true; n];
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(cap);
    // Upper-triangular factor, stored by column: r_cols[k][i] = R[i][k].
    let mut r_cols: Vec<Vec<f64>> = Vec::with_capacity(cap);
    let mut qty: Vec<f64> = Vec::with_capacity(cap);
    let mut residual = y_centered.clone();
    let mut sigma2_prev = residual.iter().map(|v| v * v).sum::<f64>() / t1 as f64;
    let mut selected: Vec<usize> = Vec::with_capacity(cap);
    let mut steps = Vec::with_capacity(cap);
    let mut stop_reason = StopReason::RMaxReached;

    while steps.len() < cap {
        let mut best: Option<(usize, f64)> = None;
        for j in 0..n {
            if !available[j] {
                continue;
            }
            let cand = &candidates[j];
            let norm2 = dot(cand, cand);
            if norm2.sqrt() <= COLLINEARITY_TOLERANCE * raw_norms[j] || norm2 == 0.0 {
                // Residual norms only shrink as the basis grows.
                available[j] = false;
                continue;
            }
            let gain = dot(cand, &residual).powi(2) / norm2;
            if best.is_none_or(|(_, g)| gain > g) {
                best = Some((j, gain));
            }
        }
        let Some((chosen, _)) = best else {
            stop_reason = StopReason::RankDeficient;
            break;
        };

        // Orthogonalize the chosen column twice against the basis (CGS2).
        let mut v = centered_column(chosen);
        let mut r_col = vec![0.0; basis.len() + 1];
        for _ in 0..2 {
            for (k, q) in basis.iter().enumerate() {
                let c = dot(q, &v);
                r_col[k] += c;
                axpy(-c, q, &mut v);
            }
        }
        let r_kk = dot(&v, &v).sqrt();
        let q: Vec<f64> = v.iter().map(|x| x / r_kk).collect();
        r_col[basis.len()] = r_kk;

        let z = dot(&q, &residual);
        axpy(-z, &q, &mut residual);
        for j in 0..n {
            if available[j] && j != chosen {
                let c = dot(&q, &candidates[j]);
                axpy(-c, &q, &mut candidates[j]);
            }
        }
        available[chosen] = false;
        candidates[chosen] = Vec::new();
        basis.push(q);
        r_cols.push(r_col);
        qty.push(z);
        selected.push(chosen);

        let sigma2 = (residual.iter().map(|v| v * v).sum::<f64>() / t1 as f64).min(sigma2_prev);
        sigma2_prev = sigma2;
        let slopes = back_substitute(&r_cols, &qty);
        let coefficients = if intercept {
            let icpt = y_mean
                - selected
                    .iter()
                    .zip(&slopes)
                    .map(|(&j, b)| col_means[j] * b)
                    .sum::<f64>();
            std::iter::once(icpt).chain(slopes).collect()
        } else {
            slopes
        };
        steps.push(SelectionStep {
            chosen_index: chosen,
            r_squared: r_squared_from(sigma2, baseline),
            sigma2_hat: sigma2,
            coefficients,
        });
    }

    debug_assert!(steps.windows(2).all(|w| w[1].sigma2_hat <= w[0].sigma2_hat));
    Ok(SelectionPath {
        steps,
        stop_reason,
        effective_r_max: cap,
        intercept,
    })
}

fn back_substitute(r_cols: &[Vec<f64>], rhs: &[f64]) -> Vec<f64> {
    let k = rhs.len();
    let mut beta = vec![0.0; k];
    for i in (0..k).rev() {
        let tail: f64 = (i + 1..k).map(|c| r_cols[c][i] * beta[c]).sum();
        beta[i] = (rhs[i] - tail) / r_cols[i][i];
    }
    beta
}

/// Outcome of a modified-BIC search over path lengths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BicChoice {
    pub r_hat: usize,
    /// Criterion value for `r = 1..=len`; `-inf` once a perfect fit occurs.
    pub objective: Vec<f64>,
    /// Set when a zero residual variance short-circuited the search.
    pub zero_variance: bool,
}

/// `c · log(log N) · k · log(T1) / T1`.
pub fn bic_penalty(n_units: usize, t1: usize, size: usize, penalty_constant: f64) -> f64 {
    let t1 = t1 as f64;
    penalty_constant * (n_units as f64).ln().ln() * size as f64 * t1.ln() / t1
}

/// `log σ̂² + c · log(log N) · k · log(T1) / T1`.
pub fn modified_bic(sigma2_hat: f64, size: usize, n_units: usize, t1: usize, penalty_constant: f64) -> f64 {
    sigma2_hat.ln() + bic_penalty(n_units, t1, size, penalty_constant)
}

pub fn modified_bic_r(path: &SelectionPath, n_units: usize, t1: usize, penalty_constant: f64) -> Result<BicChoice> {
    modified_bic_r_from_sigma2(&path.sigma2_path(), n_units, t1, penalty_constant)
}

/// [`modified_bic_r`] on a bare σ̂² sequence (entry `r-1` is the fit with `r`
/// units).
pub fn modified_bic_r_from_sigma2(
    sigma2: &[f64],
    n_units: usize,
    t1: usize,
    penalty_constant: f64,
) -> Result<BicChoice> {
    if sigma2.is_empty() {
        return Err(FspdaError::EmptyPath);
    }
    if n_units < 2 || t1 < 2 {
        return Err(FspdaError::InvalidArgument(format!(
            "modified BIC needs N ≥ 2 and T1 ≥ 2 (got N = {n_units}, T1 = {t1})"
        )));
    }
    let mut objective = Vec::with_capacity(sigma2.len());
    let mut best = (0usize, f64::INFINITY);
    for (i, &s2) in sigma2.iter().enumerate() {
        if s2 <= 0.0 {
            objective.push(f64::NEG_INFINITY);
            return Ok(BicChoice {
                r_hat: i + 1,
                objective,
                zero_variance: true,
            });
        }
        let value = modified_bic(s2, i + 1, n_units, t1, penalty_constant);
        objective.push(value);
        if value < best.1 {
            best = (i, value);
        }
    }
    Ok(BicChoice {
        r_hat: best.0 + 1,
        objective,
        zero_variance: false,
    })
}

/// Fresh OLS on the pre-treatment rows restricted to the first `r_hat`
/// selected units.
pub fn fit_selected(panel: &PanelData, path: &SelectionPath, r_hat: usize) -> Result<FittedModel> {
    if r_hat == 0 || r_hat > path.len() {
        return Err(FspdaError::IndexOutOfRange {
            index: r_hat,
            max: path.len(),
        });
    }
    let selected: Vec<usize> = path.steps[..r_hat].iter().map(|s| s.chosen_index).collect();
    fit_units(panel, &selected, r_hat)
}

pub(crate) fn fit_units(panel: &PanelData, selected: &[usize], r_hat: usize) -> Result<FittedModel> {
    let design = DesignMatrix::new(panel.pre_columns(selected)?, panel.intercept())?;
    let fit = ols_fit(&panel.pre_treated(), &design)?;
    Ok(FittedModel {
        selected: selected.to_vec(),
        coefficients: fit.coefficients.iter().copied().collect(),
        intercept: panel.intercept(),
        sigma2_hat: fit.sigma2_hat,
        r_squared: fit.r_squared,
        r_hat,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubsetCriterion {
    /// Smallest residual variance σ̂².
    MinSigma2,
    /// `T1·log σ̂² + 2k·T1/(T1−k−1)`.
    Aicc,
    /// `T1·log σ̂² + 2k`.
    Aic,
}

impl SubsetCriterion {
    /// `n_params` counts regressors plus the intercept slot.
    pub fn evaluate(self, sigma2_hat: f64, n_params: usize, t1: usize) -> f64 {
        let t = t1 as f64;
        let k = n_params as f64;
        match self {
            Self::MinSigma2 => sigma2_hat,
            Self::Aic => t * sigma2_hat.ln() + 2.0 * k,
            Self::Aicc => t * sigma2_hat.ln() + 2.0 * k * t / (t - k - 1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetChoice {
    pub subset: Vec<usize>,
    pub criterion: SubsetCriterion,
    pub value: f64,
    pub sigma2_hat: f64,
    pub n_evaluated: usize,
    pub n_rank_deficient: usize,
}

/// `C(n, k)` as a float, exact for the sizes the guard admits.
pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Advances `idx` to the next `k`-combination of `0..n` in lexicographic
/// order; returns false after the last one.
fn next_combination(idx: &mut [usize], n: usize) -> bool {
    let k = idx.len();
    let Some(i) = (0..k).rev().find(|&i| idx[i] < n - k + i) else {
        return false;
    };
    idx[i] += 1;
    for j in i + 1..k {
        idx[j] = idx[j - 1] + 1;
    }
    true
}

/// Exhaustive search over all subsets of size `1..=u`, minimizing the chosen
/// criterion on pre-treatment OLS fits. Rank-deficient subsets are skipped;
/// ties keep the first subset in (size, lexicographic) order.
pub fn best_subset_oracle(panel: &PanelData, u: usize, criterion: SubsetCriterion) -> Result<SubsetChoice> {
    let n = panel.n_units();
    let t1 = panel.t1();
    let intercept = panel.intercept();
    if u == 0 || u > n {
        return Err(FspdaError::InvalidArgument(format!(
            "subset size must lie in 1..={n}, got {u}"
        )));
    }
    if u + usize::from(intercept) + 2 > t1 {
        return Err(FspdaError::InvalidArgument(format!(
            "subset size {u} too large for {t1} pre-treatment rows"
        )));
    }
    let count = binomial(n, u);
    if count > ORACLE_SUBSET_LIMIT {
        return Err(FspdaError::CombinatorialExplosion {
            n,
            k: u,
            count,
            limit: ORACLE_SUBSET_LIMIT,
        });
    }

    let y = panel.pre_treated();
    let pre = panel.pre_controls();
    let mut best: Option<SubsetChoice> = None;
    let mut n_evaluated = 0;
    let mut n_rank_deficient = 0;
    for size in 1..=u {
        let mut idx: Vec<usize> = (0..size).collect();
        loop {
            n_evaluated += 1;
            let x = DMatrix::from_fn(t1, size, |t, k| pre[(t, idx[k])]);
            match ols_fit(&y, &DesignMatrix::new(x, intercept)?) {
                Ok(fit) => {
                    let value = criterion.evaluate(fit.sigma2_hat, size + usize::from(intercept), t1);
                    if best.as_ref().is_none_or(|b| value < b.value) {
                        best = Some(SubsetChoice {
                            subset: idx.clone(),
                            criterion,
                            value,
                            sigma2_hat: fit.sigma2_hat,
                            n_evaluated: 0,
                            n_rank_deficient: 0,
                        });
                    }
                }
                Err(FspdaError::RankDeficient { .. }) => n_rank_deficient += 1,
                Err(e) => return Err(e),
            }
            if !next_combination(&mut idx, n) {
                break;
            }
        }
    }
    let mut choice = best.ok_or(FspdaError::Infeasible)?;
    choice.n_evaluated = n_evaluated;
    choice.n_rank_deficient = n_rank_deficient;
    Ok(choice)
}

/// Predicted outcomes `intercept + y_Ut' β` on the post-treatment rows.
pub(crate) fn linear_prediction(columns: &DMatrix<f64>, slopes: &[f64], intercept: f64) -> Vec<f64> {
    let beta = DVector::from_column_slice(slopes);
    (columns * beta).iter().map(|v| v + intercept).collect()
}
