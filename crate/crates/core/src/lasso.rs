//! L1-penalized baseline fitted by cyclic coordinate descent.
//!
//! The objective is `(1/T1)·Σ (y_0t − y_Nt'β)² + λ‖β‖₁` on the pre-treatment
//! rows. Columns are standardized internally (centered only when an
//! intercept is fitted, then scaled to unit mean square) and λ is applied to
//! the standardized coefficients; reported coefficients are transformed back
//! to the original scale. Because the loss carries no ½ factor the
//! coordinate-wise soft threshold is `λ/2`, and the smallest λ that zeroes
//! every coefficient is `λ_max = 2·max_j |(1/T1) z_j'y|`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{FspdaError, Result};
use crate::panel::PanelData;
use crate::selection::modified_bic;

/// Default modified-BIC constant for the Lasso.
pub const LASSO_BIC_CONSTANT: f64 = 2.0;
pub const DEFAULT_GRID_SIZE: usize = 100;
pub const LAMBDA_MIN_RATIO: f64 = 1e-3;
pub const CONVERGENCE_TOLERANCE: f64 = 1e-7;
pub const MAX_SWEEPS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoFit {
    pub lambda: f64,
    /// Zero when the panel has no intercept.
    pub intercept: f64,
    /// Original-scale coefficients, one per control unit.
    pub coefficients: Vec<f64>,
    pub active_count: usize,
    pub sigma2_hat: f64,
    pub sweeps: usize,
    /// False when the sweep cap was hit before the tolerance was met.
    pub converged: bool,
}

impl LassoFit {
    pub fn active_set(&self) -> Vec<usize> {
        self.coefficients
            .iter()
            .enumerate()
            .filter(|(_, b)| **b != 0.0)
            .map(|(j, _)| j)
            .collect()
    }

    /// Counterfactual prediction on the post-treatment rows.
    pub fn predict_post(&self, panel: &PanelData) -> Vec<f64> {
        let post = panel.post_controls();
        let beta = DVector::from_column_slice(&self.coefficients);
        (post * beta).iter().map(|v| v + self.intercept).collect()
    }
}

/// Standardized pre-treatment problem, reusable across penalty levels.
#[derive(Debug, Clone)]
pub struct LassoProblem {
    t1: usize,
    intercept: bool,
    y_mean: f64,
    /// Pre-treatment response, centered when an intercept is fitted.
    y: DVector<f64>,
    x_pre: DMatrix<f64>,
    means: Vec<f64>,
    /// Zero marks a constant column that is excluded from the fit.
    scales: Vec<f64>,
    gram: DMatrix<f64>,
    /// `(1/T1) z_j'y`.
    corr: Vec<f64>,
}

/// Coordinate-descent iterate on the standardized scale.
#[derive(Debug, Clone, PartialEq)]
pub struct CdState {
    pub beta: Vec<f64>,
    /// `G β`, kept in sync with `beta`.
    gram_beta: Vec<f64>,
}

impl LassoProblem {
    pub fn new(panel: &PanelData) -> Self {
        let t1 = panel.t1();
        let intercept = panel.intercept();
        let n = panel.n_units();
        let pre_y = panel.pre_treated();
        let y_mean = if intercept { pre_y.mean() } else { 0.0 };
        let y = pre_y.map(|v| v - y_mean);
        let x_pre = panel.pre_controls();

        let mut means = vec![0.0; n];
        let mut scales = vec![0.0; n];
        let mut z = DMatrix::zeros(t1, n);
        for j in 0..n {
            let col = x_pre.column(j);
            let m = if intercept { col.mean() } else { 0.0 };
            let ms = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / t1 as f64;
            let s = ms.sqrt();
            means[j] = m;
            // Constant (or all-zero) columns carry no signal.
            if s > 1e-12 * (1.0 + m.abs()) {
                scales[j] = s;
                for t in 0..t1 {
                    z[(t, j)] = (col[t] - m) / s;
                }
            }
        }
        let gram = z.transpose() * &z / t1 as f64;
        let corr = (z.transpose() * &y / t1 as f64).iter().copied().collect();
        Self {
            t1,
            intercept,
            y_mean,
            y,
            x_pre,
            means,
            scales,
            gram,
            corr,
        }
    }

    pub fn n_units(&self) -> usize {
        self.scales.len()
    }

    /// Smallest penalty at which every coefficient is zero.
    pub fn lambda_max(&self) -> f64 {
        2.0 * self.corr.iter().fold(0.0f64, |acc, c| acc.max(c.abs()))
    }

    pub fn zero_state(&self) -> CdState {
        let n = self.n_units();
        CdState {
            beta: vec![0.0; n],
            gram_beta: vec![0.0; n],
        }
    }

    fn update_coordinate(&self, state: &mut CdState, j: usize, threshold: f64) -> f64 {
        if self.scales[j] == 0.0 {
            return 0.0;
        }
        let old = state.beta[j];
        // Partial residual correlation; diag(G) = 1 on standardized columns.
        let rho = self.corr[j] - state.gram_beta[j] + old;
        let new = soft_threshold(rho, threshold);
        let delta = new - old;
        if delta != 0.0 {
            state.beta[j] = new;
            for (k, gb) in state.gram_beta.iter_mut().enumerate() {
                *gb += delta * self.gram[(k, j)];
            }
        }
        delta.abs()
    }

    /// One cyclic pass over all coordinates; returns the largest change.
    pub fn sweep(&self, state: &mut CdState, lambda: f64) -> f64 {
        let threshold = lambda / 2.0;
        (0..self.n_units()).fold(0.0, |acc, j| acc.max(self.update_coordinate(state, j, threshold)))
    }

    fn sweep_active(&self, state: &mut CdState, lambda: f64) -> f64 {
        let threshold = lambda / 2.0;
        let mut max_change = 0.0f64;
        for j in 0..self.n_units() {
            if state.beta[j] != 0.0 {
                max_change = max_change.max(self.update_coordinate(state, j, threshold));
            }
        }
        max_change
    }

    /// Penalized objective on the standardized scale.
    pub fn objective(&self, state: &CdState, lambda: f64) -> f64 {
        let mse = self.standardized_mse(&state.beta);
        mse + lambda * state.beta.iter().map(|b| b.abs()).sum::<f64>()
    }

    fn standardized_mse(&self, beta: &[f64]) -> f64 {
        let mut fitted = DVector::zeros(self.t1);
        for (j, &b) in beta.iter().enumerate() {
            if b != 0.0 {
                let s = self.scales[j];
                let m = self.means[j];
                for t in 0..self.t1 {
                    fitted[t] += b * (self.x_pre[(t, j)] - m) / s;
                }
            }
        }
        (&self.y - fitted).norm_squared() / self.t1 as f64
    }

    /// Runs coordinate descent from `state` until the largest coefficient
    /// change falls below the tolerance or the sweep cap is reached. Full
    /// sweeps alternate with passes restricted to the active set.
    pub fn solve_from(&self, state: &mut CdState, lambda: f64) -> (usize, bool) {
        let mut sweeps = 0;
        while sweeps < MAX_SWEEPS {
            sweeps += 1;
            if self.sweep(state, lambda) < CONVERGENCE_TOLERANCE {
                return (sweeps, true);
            }
            while sweeps < MAX_SWEEPS {
                sweeps += 1;
                if self.sweep_active(state, lambda) < CONVERGENCE_TOLERANCE {
                    break;
                }
            }
        }
        (sweeps, false)
    }

    pub fn to_fit(&self, state: &CdState, lambda: f64, sweeps: usize, converged: bool) -> LassoFit {
        let coefficients: Vec<f64> = state
            .beta
            .iter()
            .zip(&self.scales)
            .map(|(&b, &s)| if b == 0.0 { 0.0 } else { b / s })
            .collect();
        let intercept = if self.intercept {
            self.y_mean - coefficients.iter().zip(&self.means).map(|(b, m)| b * m).sum::<f64>()
        } else {
            0.0
        };
        let active_count = coefficients.iter().filter(|b| **b != 0.0).count();
        // In-sample residuals on the original scale.
        let mut sse = 0.0;
        for t in 0..self.t1 {
            let mut fitted = intercept;
            for (j, &b) in coefficients.iter().enumerate() {
                if b != 0.0 {
                    fitted += b * self.x_pre[(t, j)];
                }
            }
            sse += (self.y[t] + self.y_mean - fitted).powi(2);
        }
        LassoFit {
            lambda,
            intercept,
            coefficients,
            active_count,
            sigma2_hat: sse / self.t1 as f64,
            sweeps,
            converged,
        }
    }

    pub fn fit(&self, lambda: f64) -> Result<LassoFit> {
        check_lambda(lambda)?;
        let mut state = self.zero_state();
        let (sweeps, converged) = self.solve_from(&mut state, lambda);
        Ok(self.to_fit(&state, lambda, sweeps, converged))
    }

    /// Largest violation of the subgradient conditions, measured on the
    /// original scale: `|(1/T1) x_j'ε̂| = λ/2 · s_j` on active coordinates and
    /// `≤ λ/2 · s_j` elsewhere.
    pub fn kkt_violation(&self, fit: &LassoFit) -> f64 {
        let n = self.n_units();
        let residuals: Vec<f64> = (0..self.t1)
            .map(|t| {
                let fitted: f64 = fit.intercept + (0..n).map(|j| fit.coefficients[j] * self.x_pre[(t, j)]).sum::<f64>();
                self.y[t] + self.y_mean - fitted
            })
            .collect();
        let mut worst = 0.0f64;
        for j in 0..n {
            let s = self.scales[j];
            if s == 0.0 {
                continue;
            }
            let bound = fit.lambda / 2.0 * s;
            let grad = (0..self.t1).map(|t| self.x_pre[(t, j)] * residuals[t]).sum::<f64>() / self.t1 as f64;
            let violation = if fit.coefficients[j] != 0.0 {
                (grad - bound * fit.coefficients[j].signum()).abs()
            } else {
                (grad.abs() - bound).max(0.0)
            };
            worst = worst.max(violation);
        }
        worst
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(FspdaError::InvalidArgument(format!(
            "lambda must be a finite nonnegative number, got {lambda}"
        )));
    }
    Ok(())
}

pub fn soft_threshold(value: f64, threshold: f64) -> f64 {
    if value > threshold {
        value - threshold
    } else if value < -threshold {
        value + threshold
    } else {
        0.0
    }
}

/// Cold-start fit at a single penalty level.
pub fn lasso_fit(panel: &PanelData, lambda: f64) -> Result<LassoFit> {
    LassoProblem::new(panel).fit(lambda)
}

/// `λ_max · ratio^{k/(grid_size−1)}` for `k = 0..grid_size`.
pub fn lambda_grid(lambda_max: f64, grid_size: usize) -> Vec<f64> {
    let step = LAMBDA_MIN_RATIO.ln() / (grid_size - 1) as f64;
    (0..grid_size).map(|k| lambda_max * (step * k as f64).exp()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoPath {
    pub fit: LassoFit,
    pub lambda_hat: f64,
    pub grid: Vec<f64>,
    /// Modified-BIC value at each grid point.
    pub objective: Vec<f64>,
    pub active_counts: Vec<usize>,
    /// Grid points whose fit hit the sweep cap.
    pub non_converged: usize,
}

/// Warm-started path over a log-spaced grid from `λ_max` down to
/// `10⁻³·λ_max`, tuned by the modified BIC. Ties go to the larger λ.
pub fn lasso_path_bic(panel: &PanelData, grid_size: usize, penalty_constant: f64) -> Result<LassoPath> {
    if grid_size < 2 {
        return Err(FspdaError::InvalidArgument(format!(
            "grid_size must be at least 2, got {grid_size}"
        )));
    }
    let problem = LassoProblem::new(panel);
    let n = panel.n_units();
    let t1 = panel.t1();
    let lambda_max = problem.lambda_max();
    if lambda_max == 0.0 {
        // Nothing correlates with the response: the empty model is the path.
        let fit = problem.to_fit(&problem.zero_state(), 0.0, 0, true);
        let value = modified_bic(fit.sigma2_hat, 0, n, t1, penalty_constant);
        return Ok(LassoPath {
            lambda_hat: 0.0,
            fit,
            grid: vec![0.0],
            objective: vec![value],
            active_counts: vec![0],
            non_converged: 0,
        });
    }
    let grid = lambda_grid(lambda_max, grid_size);
    let mut state = problem.zero_state();
    let mut objective = Vec::with_capacity(grid_size);
    let mut active_counts = Vec::with_capacity(grid_size);
    let mut non_converged = 0;
    let mut best: Option<(f64, LassoFit)> = None;
    for &lambda in &grid {
        let (sweeps, converged) = problem.solve_from(&mut state, lambda);
        if !converged {
            non_converged += 1;
        }
        let fit = problem.to_fit(&state, lambda, sweeps, converged);
        let value = modified_bic(fit.sigma2_hat, fit.active_count, n, t1, penalty_constant);
        objective.push(value);
        active_counts.push(fit.active_count);
        if best.as_ref().is_none_or(|(v, _)| value < *v) {
            best = Some((value, fit));
        }
    }
    let (_, fit) = best.expect("grid is nonempty");
    Ok(LassoPath {
        lambda_hat: fit.lambda,
        fit,
        grid,
        objective,
        active_counts,
        non_converged,
    })
}
