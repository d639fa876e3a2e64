use std::path::{Path, PathBuf};
use std::time::Instant;

use fspda_core::{
    ate_test, default_r_max, fit_selected, forward_select, gram_min_eigenvalue, modified_bic_r, oracle_check,
    run_monte_carlo_sweep, InferenceOptions, StopReason,
};

use crate::error::{AppError, AppResult};
use crate::panel_csv::{load_panel, LoadedPanel};
use crate::report::{
    Diagnostics, EffectRow, GapSummary, InferenceSummary, InputSummary, Meta, ModelSummary, OracleDocument,
    ReportDocument, SelectionSummary, SimulationDocument, StepSummary, UnitCoefficient, SCHEMA_VERSION,
};
use crate::scenario::{load_scenario, Scenario};

/// Selected-set Gram eigenvalues below this flag near-collinear controls.
const COLLINEARITY_WARNING: f64 = 1e-8;

/// Estimation settings that do not depend on where the data came from.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateOptions {
    /// `None` uses `min(N, ⌈T1/2⌉, 50)`.
    pub r_max: Option<usize>,
    pub bic_constant: f64,
    pub inference: InferenceOptions,
    pub intercept: bool,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        Self {
            r_max: None,
            bic_constant: fspda_core::selection::FORWARD_BIC_CONSTANT,
            inference: InferenceOptions::default(),
            intercept: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateRequest {
    pub input: PathBuf,
    pub treated: String,
    pub treatment_at: String,
    pub exclude: Vec<String>,
    pub options: EstimateOptions,
    pub output: PathBuf,
    /// Defaults to the output path with a `.plot.csv` extension.
    pub plot_data: Option<PathBuf>,
    pub include_meta: bool,
}

impl EstimateRequest {
    pub fn plot_data_path(&self) -> PathBuf {
        self.plot_data
            .clone()
            .unwrap_or_else(|| self.output.with_extension("plot.csv"))
    }
}

/// Load, select, fit, test, and write the JSON report and plot data.
pub fn cmd_estimate(req: &EstimateRequest) -> AppResult<ReportDocument> {
    let mut loaded = load_panel(&req.input, &req.treated, &req.treatment_at, &req.exclude)?;
    loaded.panel = loaded.panel.with_intercept(req.options.intercept);
    let mut report = estimate(&loaded, &req.exclude, &req.options)?;
    if req.include_meta {
        report.meta = Some(Meta::now());
    }
    write_json(&req.output, &report)?;
    write_plot_data(&req.plot_data_path(), &loaded, &report)?;
    Ok(report)
}

/// Forward selection, modified-BIC truncation, post-selection fit and ATE
/// test on an already loaded panel. The panel's intercept flag wins over
/// `options.intercept`.
pub fn estimate(loaded: &LoadedPanel, excluded: &[String], options: &EstimateOptions) -> AppResult<ReportDocument> {
    let panel = &loaded.panel;
    if !(options.bic_constant > 0.0 && options.bic_constant.is_finite()) {
        return Err(AppError::config("bic-constant", "must be positive"));
    }
    if !(options.inference.alpha > 0.0 && options.inference.alpha < 1.0) {
        return Err(AppError::config("alpha", "must lie in (0, 1)"));
    }
    let requested = options.r_max.unwrap_or_else(|| default_r_max(panel));
    if requested == 0 {
        return Err(AppError::config("r-max", "must be at least 1"));
    }
    let path = forward_select(panel, requested)?;
    let bic = modified_bic_r(&path, panel.n_units(), panel.t1(), options.bic_constant)?;
    let model = fit_selected(panel, &path, bic.r_hat)?;
    let test = ate_test(panel, &model, &options.inference)?;
    let gram = gram_min_eigenvalue(panel, &model.selected)?;

    let labels = panel.labels();
    let mut warnings = Vec::new();
    if path.effective_r_max < requested {
        warnings.push(format!(
            "r_max {requested} capped at {} by the sample size or pool",
            path.effective_r_max
        ));
    }
    if path.stop_reason == StopReason::RankDeficient {
        warnings.push(format!(
            "selection stopped after {} steps: every remaining control is collinear with the selected set",
            path.len()
        ));
    }
    if bic.zero_variance {
        warnings.push("pre-treatment fit is exact (zero residual variance); BIC stopped at the first exact fit".into());
    } else if bic.r_hat == path.len() && path.stop_reason == StopReason::RMaxReached {
        warnings.push("modified BIC is minimized at the end of the path; consider a larger r_max".into());
    }
    if gram < COLLINEARITY_WARNING {
        warnings.push(format!(
            "selected controls are nearly collinear (Gram min eigenvalue {gram:e})"
        ));
    }

    let effects = loaded
        .post_periods()
        .iter()
        .zip(panel.post_treated().iter())
        .zip(test.counterfactual.iter().zip(&test.effects))
        .map(|((period, &actual), (&counterfactual, &effect))| EffectRow {
            period: period.clone(),
            actual,
            counterfactual,
            effect,
        })
        .collect();

    Ok(ReportDocument {
        schema_version: SCHEMA_VERSION,
        input: InputSummary {
            treated: loaded.treated_label.clone(),
            treatment_at: loaded.post_periods()[0].clone(),
            excluded: excluded.to_vec(),
            n_controls: panel.n_units(),
            n_pre: panel.t1(),
            n_post: panel.t2(),
            intercept: panel.intercept(),
        },
        selection: SelectionSummary {
            steps: path
                .steps
                .iter()
                .enumerate()
                .map(|(i, s)| StepSummary {
                    step: i + 1,
                    label: labels[s.chosen_index].clone(),
                    r_squared: s.r_squared,
                    sigma2_hat: s.sigma2_hat,
                })
                .collect(),
            stop_reason: path.stop_reason,
            requested_r_max: requested,
            effective_r_max: path.effective_r_max,
            bic_constant: options.bic_constant,
            bic_objective: bic.objective.iter().map(|v| v.is_finite().then_some(*v)).collect(),
            r_hat: bic.r_hat,
            zero_variance: bic.zero_variance,
        },
        model: ModelSummary {
            intercept: model.intercept.then(|| model.intercept_value()),
            units: model
                .selected
                .iter()
                .zip(model.slopes())
                .map(|(&j, &coefficient)| UnitCoefficient {
                    label: labels[j].clone(),
                    coefficient,
                })
                .collect(),
            r_squared: model.r_squared,
            sigma2_hat: model.sigma2_hat,
        },
        inference: InferenceSummary {
            ate: test.ate,
            lrv: test.lrv,
            lag: test.tau,
            kernel: test.kernel,
            z_stat: test.z_stat,
            p_value: test.p_value,
            alpha: test.alpha,
            reject: test.reject,
            reject_05: test.reject_05,
        },
        effects,
        diagnostics: Diagnostics {
            gram_min_eigenvalue: gram,
            warnings,
        },
        meta: None,
    })
}

/// Tidy CSV with one row per period: in-sample fit before the treatment,
/// counterfactual prediction after it.
pub fn write_plot_data(path: &Path, loaded: &LoadedPanel, report: &ReportDocument) -> AppResult<()> {
    let panel = &loaded.panel;
    let index: Vec<usize> = report
        .model
        .units
        .iter()
        .map(|u| panel.labels().iter().position(|l| *l == u.label))
        .collect::<Option<_>>()
        .ok_or_else(|| AppError::config("model", "report does not match the panel"))?;
    let slopes: Vec<f64> = report.model.units.iter().map(|u| u.coefficient).collect();
    let constant = report.model.intercept.unwrap_or(0.0);
    let pre = panel.pre_columns(&index)?;
    let fitted: Vec<f64> = pre
        .row_iter()
        .map(|row| constant + row.iter().zip(&slopes).map(|(x, b)| x * b).sum::<f64>())
        .collect();

    let file = std::fs::File::create(path).map_err(|e| AppError::io(path, e))?;
    let mut csv = csv::Writer::from_writer(std::io::BufWriter::new(file));
    let write_err = |e: csv::Error| AppError::io(path, std::io::Error::other(e));
    csv.write_record(["period", "actual", "counterfactual", "effect"])
        .map_err(write_err)?;
    for ((period, &actual), fit) in loaded.pre_periods().iter().zip(panel.pre_treated().iter()).zip(fitted) {
        csv.write_record([
            period.clone(),
            actual.to_string(),
            fit.to_string(),
            (actual - fit).to_string(),
        ])
        .map_err(write_err)?;
    }
    for row in &report.effects {
        csv.write_record([
            row.period.clone(),
            row.actual.to_string(),
            row.counterfactual.to_string(),
            row.effect.to_string(),
        ])
        .map_err(write_err)?;
    }
    csv.flush().map_err(|e| AppError::io(path, e))
}

pub fn write_json(path: &Path, value: &impl serde::Serialize) -> AppResult<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| AppError::io(path, e))
}

/// Runs `f` on a dedicated pool when a thread count is given.
fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> AppResult<T> {
    match threads {
        None => Ok(f()),
        Some(0) => Err(AppError::config("threads", "must be at least 1")),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map(|pool| pool.install(f))
            .map_err(|e| AppError::config("threads", e.to_string())),
    }
}

/// Monte Carlo over every treatment process in the scenario.
pub fn simulate(scenario: &Scenario, threads: Option<usize>, include_meta: bool) -> AppResult<SimulationDocument> {
    let start = Instant::now();
    let reports = with_threads(threads, || {
        run_monte_carlo_sweep(&scenario.config, &scenario.treatments, &scenario.settings)
    })??;
    let meta = include_meta.then(|| Meta {
        wall_time_seconds: Some(start.elapsed().as_secs_f64()),
        threads: Some(threads.unwrap_or_else(rayon::current_num_threads)),
        ..Meta::now()
    });
    Ok(SimulationDocument {
        schema_version: SCHEMA_VERSION,
        scenario: scenario.clone(),
        reports,
        meta,
    })
}

pub fn cmd_simulate(
    scenario_path: &Path,
    output: &Path,
    threads: Option<usize>,
    include_meta: bool,
) -> AppResult<SimulationDocument> {
    let scenario = load_scenario(scenario_path)?;
    let document = simulate(&scenario, threads, include_meta)?;
    write_json(output, &document)?;
    Ok(document)
}

/// Greedy-versus-best-subset comparison. Replication count and path length
/// come from the scenario (`n_reps`, `path_length`).
pub fn oracle(
    scenario: &Scenario,
    subset_size: usize,
    delta: f64,
    min_frequency: f64,
    threads: Option<usize>,
    include_meta: bool,
) -> AppResult<OracleDocument> {
    if subset_size == 0 {
        return Err(AppError::config("subset-size", "must be at least 1"));
    }
    if !delta.is_finite() || delta < 0.0 {
        return Err(AppError::config("delta", "must be a nonnegative number"));
    }
    let start = Instant::now();
    let report = with_threads(threads, || {
        oracle_check(
            &scenario.config,
            subset_size,
            scenario.path_length,
            delta,
            scenario.settings.n_reps,
        )
    })??;
    let meta = include_meta.then(|| Meta {
        wall_time_seconds: Some(start.elapsed().as_secs_f64()),
        threads: Some(threads.unwrap_or_else(rayon::current_num_threads)),
        ..Meta::now()
    });
    Ok(OracleDocument {
        schema_version: SCHEMA_VERSION,
        scenario: scenario.clone(),
        gap_summary: GapSummary::from_gaps(&report.gaps),
        holds: report.frequency >= min_frequency,
        min_frequency,
        report,
        meta,
    })
}

pub struct OracleRequest {
    pub scenario: PathBuf,
    pub subset_size: usize,
    pub delta: f64,
    pub min_frequency: f64,
    pub output: Option<PathBuf>,
    pub threads: Option<usize>,
    pub include_meta: bool,
}

/// Writes the verdict to `output` when given, otherwise returns it for
/// printing.
pub fn cmd_oracle_check(req: &OracleRequest) -> AppResult<OracleDocument> {
    let scenario = load_scenario(&req.scenario)?;
    let document = oracle(
        &scenario,
        req.subset_size,
        req.delta,
        req.min_frequency,
        req.threads,
        req.include_meta,
    )?;
    if let Some(path) = &req.output {
        write_json(path, &document)?;
    }
    Ok(document)
}
