use nalgebra::{DMatrix, DVector};

use crate::error::{FspdaError, Result};

/// One treated unit observed alongside `N` control units, split at the
/// treatment date.
///
/// Rows `0..t1` are the pre-treatment window, rows `t1..` the post-treatment
/// window. Control units are addressed by zero-based column index.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelData {
    treated: DVector<f64>,
    controls: DMatrix<f64>,
    t1: usize,
    labels: Vec<String>,
    intercept: bool,
}

impl PanelData {
    pub fn new(
        treated: DVector<f64>,
        controls: DMatrix<f64>,
        t1: usize,
        labels: Vec<String>,
        intercept: bool,
    ) -> Result<Self> {
        let total = treated.len();
        if controls.nrows() != total {
            return Err(FspdaError::InvalidPanel(format!(
                "treated series has {total} rows but controls have {}",
                controls.nrows()
            )));
        }
        if controls.ncols() == 0 {
            return Err(FspdaError::InvalidPanel("no control units".into()));
        }
        if t1 < 3 {
            return Err(FspdaError::InvalidPanel(format!(
                "need at least 3 pre-treatment rows, got {t1}"
            )));
        }
        if total < t1 + 2 {
            return Err(FspdaError::InvalidPanel(format!(
                "need at least 2 post-treatment rows, got {}",
                total.saturating_sub(t1)
            )));
        }
        if labels.len() != controls.ncols() {
            return Err(FspdaError::InvalidPanel(format!(
                "{} labels for {} control units",
                labels.len(),
                controls.ncols()
            )));
        }
        let mut seen = std::collections::HashSet::with_capacity(labels.len());
        for label in &labels {
            if !seen.insert(label.as_str()) {
                return Err(FspdaError::InvalidPanel(format!("duplicate unit label {label:?}")));
            }
        }
        if let Some(t) = treated.iter().position(|v| !v.is_finite()) {
            return Err(FspdaError::InvalidPanel(format!("non-finite treated value at row {t}")));
        }
        for (j, col) in controls.column_iter().enumerate() {
            if let Some(t) = col.iter().position(|v| !v.is_finite()) {
                return Err(FspdaError::InvalidPanel(format!(
                    "non-finite value for unit {:?} at row {t}",
                    labels[j]
                )));
            }
        }
        Ok(Self {
            treated,
            controls,
            t1,
            labels,
            intercept,
        })
    }

    /// Builds a panel with generated labels `unit_1 .. unit_N`.
    pub fn unlabeled(treated: DVector<f64>, controls: DMatrix<f64>, t1: usize, intercept: bool) -> Result<Self> {
        let labels = (1..=controls.ncols()).map(|j| format!("unit_{j}")).collect();
        Self::new(treated, controls, t1, labels, intercept)
    }

    pub fn with_intercept(mut self, intercept: bool) -> Self {
        self.intercept = intercept;
        self
    }

    pub fn n_units(&self) -> usize {
        self.controls.ncols()
    }

    pub fn t1(&self) -> usize {
        self.t1
    }

    pub fn t2(&self) -> usize {
        self.treated.len() - self.t1
    }

    pub fn n_periods(&self) -> usize {
        self.treated.len()
    }

    pub fn intercept(&self) -> bool {
        self.intercept
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn treated(&self) -> &DVector<f64> {
        &self.treated
    }

    pub fn controls(&self) -> &DMatrix<f64> {
        &self.controls
    }

    pub fn pre_treated(&self) -> DVector<f64> {
        self.treated.rows(0, self.t1).into_owned()
    }

    pub fn post_treated(&self) -> DVector<f64> {
        self.treated.rows(self.t1, self.t2()).into_owned()
    }

    pub fn pre_controls(&self) -> DMatrix<f64> {
        self.controls.rows(0, self.t1).into_owned()
    }

    pub fn post_controls(&self) -> DMatrix<f64> {
        self.controls.rows(self.t1, self.t2()).into_owned()
    }

    /// Pre-treatment rows of the given control columns, in the given order.
    pub fn pre_columns(&self, units: &[usize]) -> Result<DMatrix<f64>> {
        self.check_indices(units)?;
        Ok(DMatrix::from_fn(self.t1, units.len(), |t, k| {
            self.controls[(t, units[k])]
        }))
    }

    pub fn post_columns(&self, units: &[usize]) -> Result<DMatrix<f64>> {
        self.check_indices(units)?;
        let t1 = self.t1;
        Ok(DMatrix::from_fn(self.t2(), units.len(), |t, k| {
            self.controls[(t1 + t, units[k])]
        }))
    }

    pub fn check_indices(&self, units: &[usize]) -> Result<()> {
        let n_units = self.n_units();
        match units.iter().find(|&&j| j >= n_units) {
            Some(&index) => Err(FspdaError::InvalidIndex { index, n_units }),
            None => Ok(()),
        }
    }
}
