//! Wide-format panel CSV: first column holds period labels, every other
//! column one unit.

use std::collections::HashSet;
use std::path::Path;

use fspda_core::nalgebra::{DMatrix, DVector};
use fspda_core::PanelData;

use crate::error::{AppError, AppResult};

const MISSING_TOKENS: [&str; 6] = ["", "na", "n/a", "nan", "null", "none"];

/// A parsed panel together with its period labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedPanel {
    pub panel: PanelData,
    pub periods: Vec<String>,
    pub treated_label: String,
}

impl LoadedPanel {
    pub fn pre_periods(&self) -> &[String] {
        &self.periods[..self.panel.t1()]
    }

    pub fn post_periods(&self) -> &[String] {
        &self.periods[self.panel.t1()..]
    }
}

/// Reads a wide CSV. `treatment_marker` is the label of the first
/// post-treatment period; `excluded` columns are dropped before parsing their
/// cells. The returned panel has no intercept.
pub fn load_panel(
    path: &Path,
    treated_column: &str,
    treatment_marker: &str,
    excluded: &[String],
) -> AppResult<LoadedPanel> {
    let file = std::fs::File::open(path).map_err(|e| AppError::io(path, e))?;
    read_panel(file, treated_column, treatment_marker, excluded)
}

pub fn read_panel(
    reader: impl std::io::Read,
    treated_column: &str,
    treatment_marker: &str,
    excluded: &[String],
) -> AppResult<LoadedPanel> {
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = csv
        .headers()
        .map_err(|e| csv_error(e, 1))?
        .iter()
        .map(str::to_owned)
        .collect();
    if header.len() < 2 {
        return Err(AppError::Parse {
            row: 1,
            column: header.first().cloned().unwrap_or_default(),
            message: "need a period column and at least one unit column".into(),
        });
    }
    let mut seen = HashSet::new();
    for name in &header {
        if !seen.insert(name.as_str()) {
            return Err(AppError::Parse {
                row: 1,
                column: name.clone(),
                message: "duplicate column header".into(),
            });
        }
    }
    let units = &header[1..];
    for name in excluded {
        if !units.contains(name) {
            return Err(AppError::MissingColumn(name.clone()));
        }
    }
    if excluded.iter().any(|e| e == treated_column) {
        return Err(AppError::config(
            "exclude",
            format!("the treated column {treated_column:?} cannot be excluded"),
        ));
    }
    let treated_pos = units
        .iter()
        .position(|u| u == treated_column)
        .ok_or_else(|| AppError::MissingColumn(treated_column.to_owned()))?;
    // Header positions (1-based in `header`) of retained control columns.
    let control_pos: Vec<usize> = (0..units.len())
        .filter(|&j| j != treated_pos && !excluded.contains(&units[j]))
        .collect();
    if control_pos.is_empty() {
        return Err(AppError::config("exclude", "no control columns remain"));
    }

    let mut periods = Vec::new();
    let mut treated = Vec::new();
    let mut controls: Vec<Vec<f64>> = vec![Vec::new(); control_pos.len()];
    for (i, record) in csv.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| csv_error(e, row))?;
        periods.push(record[0].to_owned());
        treated.push(parse_cell(&record[treated_pos + 1], row, treated_column)?);
        for (k, &j) in control_pos.iter().enumerate() {
            controls[k].push(parse_cell(&record[j + 1], row, &units[j])?);
        }
    }

    let t1 = periods
        .iter()
        .position(|p| p == treatment_marker)
        .ok_or_else(|| AppError::TreatmentMarkerNotFound(treatment_marker.to_owned()))?;
    let post = periods.len() - t1;
    if t1 < 3 || post < 2 {
        return Err(AppError::TooFewRows { pre: t1, post });
    }
    let n_rows = periods.len();
    let matrix = DMatrix::from_fn(n_rows, control_pos.len(), |t, k| controls[k][t]);
    let labels = control_pos.iter().map(|&j| units[j].clone()).collect();
    let panel = PanelData::new(DVector::from_vec(treated), matrix, t1, labels, false)?;
    Ok(LoadedPanel {
        panel,
        periods,
        treated_label: treated_column.to_owned(),
    })
}

fn csv_error(error: csv::Error, fallback_row: usize) -> AppError {
    let row = error.position().map(|p| p.line() as usize).unwrap_or(fallback_row);
    AppError::Parse {
        row,
        column: String::new(),
        message: error.to_string(),
    }
}

fn parse_cell(cell: &str, row: usize, column: &str) -> AppResult<f64> {
    let non_finite = || AppError::NonFiniteValue {
        row,
        column: column.to_owned(),
        value: cell.to_owned(),
    };
    if MISSING_TOKENS.contains(&cell.to_ascii_lowercase().as_str()) {
        return Err(non_finite());
    }
    match cell.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        Ok(_) => Err(non_finite()),
        Err(_) => Err(AppError::Parse {
            row,
            column: column.to_owned(),
            message: format!("{cell:?} is not a number"),
        }),
    }
}

/// Writes `panel` in the layout [`load_panel`] reads: period labels first,
/// the treated column next, then the controls in order. Values use the
/// shortest representation that parses back to the same `f64`.
pub fn write_panel(
    writer: impl std::io::Write,
    panel: &PanelData,
    periods: &[String],
    period_header: &str,
    treated_label: &str,
) -> AppResult<()> {
    if periods.len() != panel.n_periods() {
        return Err(AppError::config(
            "periods",
            format!("{} labels for {} rows", periods.len(), panel.n_periods()),
        ));
    }
    let mut csv = csv::Writer::from_writer(writer);
    let mut header = vec![period_header.to_owned(), treated_label.to_owned()];
    header.extend(panel.labels().iter().cloned());
    csv.write_record(&header).map_err(|e| csv_error(e, 1))?;
    for (t, period) in periods.iter().enumerate() {
        let mut record = vec![period.clone(), panel.treated()[t].to_string()];
        record.extend(panel.controls().row(t).iter().map(f64::to_string));
        csv.write_record(&record).map_err(|e| csv_error(e, t + 2))?;
    }
    csv.flush().map_err(|e| AppError::io("<csv output>", e))?;
    Ok(())
}

pub fn save_panel(
    path: &Path,
    panel: &PanelData,
    periods: &[String],
    period_header: &str,
    treated_label: &str,
) -> AppResult<()> {
    let file = std::fs::File::create(path).map_err(|e| AppError::io(path, e))?;
    write_panel(
        std::io::BufWriter::new(file),
        panel,
        periods,
        period_header,
        treated_label,
    )
}
