//! Dense least-squares kernel shared by the selection, Lasso and inference
//! code.
//!
//! Fits go through a thin SVD of the (optionally intercept-augmented) design.
//! A design whose smallest singular value falls below
//! `max(T, k) * eps * largest` is reported as [`FspdaError::RankDeficient`]
//! instead of being pseudo-inverted, so callers get a crisp collinearity
//! signal.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{FspdaError, Result};
use crate::panel::PanelData;

/// Regressor matrix (rows are periods, columns are regressors) with an
/// optional implicit leading constant column.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    values: DMatrix<f64>,
    has_intercept: bool,
}

impl DesignMatrix {
    pub fn new(values: DMatrix<f64>, has_intercept: bool) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(FspdaError::InvalidArgument(
                "design matrix contains non-finite entries".into(),
            ));
        }
        Ok(Self { values, has_intercept })
    }

    /// A design consisting of the constant column only.
    pub fn intercept_only(n_rows: usize) -> Self {
        Self {
            values: DMatrix::zeros(n_rows, 0),
            has_intercept: true,
        }
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn has_intercept(&self) -> bool {
        self.has_intercept
    }

    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    /// Number of explicit regressors, excluding the intercept.
    pub fn n_regressors(&self) -> usize {
        self.values.ncols()
    }

    /// Number of estimated coefficients, including the intercept slot.
    pub fn n_params(&self) -> usize {
        self.values.ncols() + usize::from(self.has_intercept)
    }

    /// The design with the constant column materialized in front.
    pub fn augmented(&self) -> DMatrix<f64> {
        if !self.has_intercept {
            return self.values.clone();
        }
        let (t, k) = self.values.shape();
        DMatrix::from_fn(t, k + 1, |i, j| if j == 0 { 1.0 } else { self.values[(i, j - 1)] })
    }
}

/// Result of an ordinary least-squares fit.
#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    /// Intercept first when the design carries one.
    pub coefficients: DVector<f64>,
    pub residuals: DVector<f64>,
    /// Mean squared residual, divisor `T`.
    pub sigma2_hat: f64,
    pub r_squared: f64,
}

impl OlsFit {
    pub fn fitted(&self, y: &DVector<f64>) -> DVector<f64> {
        y - &self.residuals
    }
}

/// Total variation that R² is measured against: the centered mean square when
/// an intercept is fitted, the raw mean square otherwise.
pub fn baseline_variance(y: &DVector<f64>, centered: bool) -> f64 {
    let t = y.len() as f64;
    if centered {
        let mean = y.mean();
        y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / t
    } else {
        y.norm_squared() / t
    }
}

/// `1 - sigma2 / baseline`, clamped to `[0, 1]`. A response with no variation
/// has nothing to explain and gets R² = 0.
pub fn r_squared_from(sigma2_hat: f64, baseline: f64) -> f64 {
    if baseline <= 0.0 {
        return 0.0;
    }
    (1.0 - sigma2_hat / baseline).clamp(0.0, 1.0)
}

pub fn ols_fit(y: &DVector<f64>, x: &DesignMatrix) -> Result<OlsFit> {
    let t = x.n_rows();
    let p = x.n_params();
    if y.len() != t {
        return Err(FspdaError::DimensionMismatch(format!(
            "response has length {} but design has {t} rows",
            y.len()
        )));
    }
    if t < p + 1 {
        return Err(FspdaError::DimensionMismatch(format!(
            "{t} observations cannot identify {p} coefficients plus a residual variance"
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(FspdaError::InvalidArgument(
            "response contains non-finite values".into(),
        ));
    }

    let coefficients = if p == 0 {
        DVector::zeros(0)
    } else {
        let design = x.augmented();
        let svd = design.clone().svd(true, true);
        let largest = svd.singular_values.max();
        let smallest = svd.singular_values.min();
        let tolerance = t.max(p) as f64 * f64::EPSILON * largest;
        if largest == 0.0 || smallest < tolerance {
            return Err(FspdaError::RankDeficient { smallest, tolerance });
        }
        svd.solve(y, 0.0)
            .map_err(|e| FspdaError::InvalidArgument(e.to_string()))?
    };

    let residuals = if p == 0 {
        y.clone()
    } else {
        y - x.augmented() * &coefficients
    };
    let sigma2_hat = residuals.norm_squared() / t as f64;
    let r_squared = r_squared_from(sigma2_hat, baseline_variance(y, x.has_intercept()));
    Ok(OlsFit {
        coefficients,
        residuals,
        sigma2_hat,
        r_squared,
    })
}

/// Smallest eigenvalue of the uncentered pre-treatment Gram matrix
/// `(1/T1) Σ y_Ut y_Ut'` of the given control units.
pub fn gram_min_eigenvalue(panel: &PanelData, unit_set: &[usize]) -> Result<f64> {
    if unit_set.is_empty() {
        return Err(FspdaError::EmptySet);
    }
    let columns = panel.pre_columns(unit_set)?;
    let gram = columns.transpose() * &columns / panel.t1() as f64;
    let eigen = SymmetricEigen::new(gram);
    Ok(eigen.eigenvalues.min().max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::normal_equations_fit;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn column(values: &[f64]) -> DesignMatrix {
        DesignMatrix::new(DMatrix::from_column_slice(values.len(), 1, values), false).unwrap()
    }

    #[test]
    fn exact_proportionality() {
        let y = DVector::from_vec(vec![2.0, 4.0, 6.0, 8.0]);
        let fit = ols_fit(&y, &column(&[1.0, 2.0, 3.0, 4.0])).unwrap();
        assert_relative_eq!(fit.coefficients[0], 2.0, epsilon = 1e-12);
        assert!(fit.residuals.iter().all(|r| r.abs() < 1e-12));
        assert_relative_eq!(fit.r_squared, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn constant_response_on_intercept() {
        let y = DVector::from_vec(vec![1.0, 1.0, 1.0]);
        let fit = ols_fit(&y, &DesignMatrix::intercept_only(3)).unwrap();
        assert_relative_eq!(fit.coefficients[0], 1.0, epsilon = 1e-12);
        assert!(fit.sigma2_hat.abs() < 1e-24);
    }

    #[test]
    fn matches_hand_normal_equations() {
        // Σxy = 34, Σx² = 30 → β = 17/15, SSR = 40 − 34²/30 = 22/15.
        let y = DVector::from_vec(vec![2.0, 2.0, 4.0, 4.0]);
        let fit = ols_fit(&y, &column(&[1.0, 2.0, 3.0, 4.0])).unwrap();
        assert_relative_eq!(fit.coefficients[0], 17.0 / 15.0, epsilon = 1e-12);
        assert_relative_eq!(fit.sigma2_hat, 11.0 / 30.0, epsilon = 1e-12);
        assert_relative_eq!(fit.r_squared, 578.0 / 600.0, epsilon = 1e-12);
    }

    #[test]
    fn collinear_design_is_rank_deficient() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0, 4.0, 8.0]);
        let y = DVector::from_vec(vec![1.0, 0.0, 1.0, 0.0]);
        let err = ols_fit(&y, &DesignMatrix::new(x, false).unwrap()).unwrap_err();
        assert!(matches!(err, FspdaError::RankDeficient { .. }));

        // A constant regressor duplicates the intercept.
        let x = DMatrix::from_element(4, 1, 3.0);
        let err = ols_fit(&y, &DesignMatrix::new(x, true).unwrap()).unwrap_err();
        assert!(matches!(err, FspdaError::RankDeficient { .. }));
    }

    #[test]
    fn dimension_errors() {
        let y = DVector::from_vec(vec![1.0, 2.0]);
        assert!(matches!(
            ols_fit(&y, &column(&[1.0, 2.0, 3.0])),
            Err(FspdaError::DimensionMismatch(_))
        ));
        // T = k + 1 + 1 is the smallest admissible size with an intercept.
        let x = DesignMatrix::new(DMatrix::from_column_slice(2, 1, &[1.0, 2.0]), true).unwrap();
        assert!(matches!(ols_fit(&y, &x), Err(FspdaError::DimensionMismatch(_))));
    }

    #[test]
    fn rejects_non_finite_design() {
        let x = DMatrix::from_column_slice(3, 1, &[1.0, f64::INFINITY, 2.0]);
        assert!(DesignMatrix::new(x, false).is_err());
    }

    #[test]
    fn gram_eigenvalue_examples() {
        let treated = DVector::from_vec(vec![0.0; 6]);
        let controls = DMatrix::from_column_slice(
            6,
            3,
            &[
                1.0, -1.0, 1.0, -1.0, 5.0, 5.0, //
                1.0, 2.0, 3.0, 4.0, 0.0, 0.0, //
                1.0, 2.0, 3.0, 4.0, 9.0, 9.0,
            ],
        );
        let panel = PanelData::unlabeled(treated, controls, 4, false).unwrap();
        assert_relative_eq!(gram_min_eigenvalue(&panel, &[0]).unwrap(), 1.0, epsilon = 1e-12);
        assert!(gram_min_eigenvalue(&panel, &[1, 2]).unwrap() < 1e-12);
        assert!(matches!(gram_min_eigenvalue(&panel, &[]), Err(FspdaError::EmptySet)));
        assert!(matches!(
            gram_min_eigenvalue(&panel, &[3]),
            Err(FspdaError::InvalidIndex { .. })
        ));
    }

    fn design_strategy() -> impl Strategy<Value = (DMatrix<f64>, DVector<f64>, bool)> {
        (8usize..20, 1usize..4, any::<bool>()).prop_flat_map(|(t, k, intercept)| {
            (
                prop::collection::vec(-3.0f64..3.0, t * k),
                prop::collection::vec(-3.0f64..3.0, t),
                Just((t, k, intercept)),
            )
                .prop_map(|(x, y, (t, k, intercept))| {
                    (DMatrix::from_column_slice(t, k, &x), DVector::from_vec(y), intercept)
                })
        })
    }

    proptest! {
        #[test]
        fn refit_on_fitted_values_has_zero_residuals((x, y, intercept) in design_strategy()) {
            let design = DesignMatrix::new(x, intercept).unwrap();
            if let Ok(fit) = ols_fit(&y, &design) {
                let fitted = fit.fitted(&y);
                let refit = ols_fit(&fitted, &design).unwrap();
                let scale = 1.0 + fitted.amax();
                prop_assert!(refit.residuals.amax() < 1e-9 * scale);
            }
        }

        #[test]
        fn adding_a_regressor_never_increases_sigma2((x, y, intercept) in design_strategy()) {
            let k = x.ncols();
            if k < 2 { return Ok(()); }
            let small = DesignMatrix::new(x.columns(0, k - 1).into_owned(), intercept).unwrap();
            let large = DesignMatrix::new(x, intercept).unwrap();
            if let (Ok(a), Ok(b)) = (ols_fit(&y, &small), ols_fit(&y, &large)) {
                prop_assert!(b.sigma2_hat <= a.sigma2_hat * (1.0 + 1e-10) + 1e-14);
            }
        }

        #[test]
        fn r_squared_matches_direct_summation((x, y, intercept) in design_strategy()) {
            let design = DesignMatrix::new(x.clone(), intercept).unwrap();
            if let Ok(fit) = ols_fit(&y, &design) {
                let oracle = normal_equations_fit(&y, &x, intercept).unwrap();
                let ssr: f64 = oracle.residuals.iter().map(|r| r * r).sum();
                let mean = if intercept { y.mean() } else { 0.0 };
                let sst: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
                let direct = 1.0 - ssr / sst;
                prop_assert!((fit.r_squared - direct).abs() <= 1e-10 * direct.abs().max(1e-3));
            }
        }

        #[test]
        fn gram_eigenvalue_is_permutation_invariant(seed in 0u64..500) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let controls = DMatrix::from_fn(12, 5, |_, _| rng.random_range(-1.0..1.0));
            let treated = DVector::from_element(12, 0.0);
            let panel = PanelData::unlabeled(treated, controls, 9, false).unwrap();
            let a = gram_min_eigenvalue(&panel, &[0, 2, 4]).unwrap();
            let b = gram_min_eigenvalue(&panel, &[4, 0, 2]).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
