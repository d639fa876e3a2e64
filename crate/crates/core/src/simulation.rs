//! Factor-model data generation and the Monte Carlo experiment runner.
//!
//! Every replication draws its randomness from two ChaCha8 streams of the
//! scenario seed: stream `2r` builds the untreated panel (factors, loadings,
//! idiosyncratic noise) and stream `2r + 1` the treatment-effect path. The
//! untreated data, and hence the selected model, is therefore shared by all
//! treatment processes within a replication, and results do not depend on how
//! replications are scheduled across threads.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FspdaError, Result};
use crate::inference::{effect_report, normal_cdf, InferenceOptions};
use crate::lasso::{lasso_path_bic, DEFAULT_GRID_SIZE, LASSO_BIC_CONSTANT};
use crate::panel::PanelData;
use crate::selection::{
    best_subset_oracle, default_r_max, fit_selected, forward_select, linear_prediction, modified_bic_r,
    SubsetCriterion, FORWARD_BIC_CONSTANT,
};

pub const N_FACTORS: usize = 4;
/// Burn-in applied to the autoregressive treatment-effect processes.
pub const EFFECT_BURN_IN: usize = 50;
const EFFECT_AR: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorMode {
    Iid,
    Dynamic,
}

impl std::str::FromStr for FactorMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "iid" | "i.i.d." => Ok(Self::Iid),
            "dynamic" | "dyn" => Ok(Self::Dynamic),
            other => Err(format!("unknown factor mode {other:?} (expected iid or dynamic)")),
        }
    }
}

/// Whether factor loadings are drawn once per scenario or anew for every
/// replication.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoadingMode {
    Fixed,
    Redraw,
}

impl std::str::FromStr for LoadingMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fixed" => Ok(Self::Fixed),
            "redraw" => Ok(Self::Redraw),
            other => Err(format!("unknown loading mode {other:?} (expected fixed or redraw)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Treatment {
    D1,
    D2,
    D3,
    D4,
    D5,
    D6,
    D7,
}

impl Treatment {
    pub const ALL: [Treatment; 7] = [Self::D1, Self::D2, Self::D3, Self::D4, Self::D5, Self::D6, Self::D7];

    /// True for the processes with zero mean effect.
    pub fn is_null(self) -> bool {
        matches!(self, Self::D1 | Self::D2 | Self::D3)
    }

    /// Stationary mean of `Δ_t`.
    pub fn mean_effect(self) -> f64 {
        match self {
            Self::D1 | Self::D2 | Self::D3 => 0.0,
            Self::D4 => 0.5,
            Self::D5 => 1.0,
            Self::D6 => 0.35 / (1.0 - EFFECT_AR),
            Self::D7 => 0.7 / (1.0 - EFFECT_AR),
        }
    }

    pub fn generate(self, t2: usize, rng: &mut impl Rng) -> Vec<f64> {
        let ar = |drift: f64, rng: &mut dyn rand::RngCore| -> Vec<f64> {
            let mut level = drift / (1.0 - EFFECT_AR);
            let mut out = Vec::with_capacity(t2);
            for t in 0..EFFECT_BURN_IN + t2 {
                let w: f64 = StandardNormal.sample(rng);
                level = drift + EFFECT_AR * level + w;
                if t >= EFFECT_BURN_IN {
                    out.push(level);
                }
            }
            out
        };
        let shifted = |mean: f64, rng: &mut dyn rand::RngCore| -> Vec<f64> {
            (0..t2)
                .map(|_| mean + Distribution::<f64>::sample(&StandardNormal, &mut *rng))
                .collect()
        };
        match self {
            Self::D1 => vec![0.0; t2],
            Self::D2 => shifted(0.0, rng),
            Self::D3 => ar(0.0, rng),
            Self::D4 => shifted(0.5, rng),
            Self::D5 => shifted(1.0, rng),
            Self::D6 => ar(0.35, rng),
            Self::D7 => ar(0.7, rng),
        }
    }
}

impl std::fmt::Display for Treatment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{self:?}")
    }
}

impl std::str::FromStr for Treatment {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "D1" => Ok(Self::D1),
            "D2" => Ok(Self::D2),
            "D3" => Ok(Self::D3),
            "D4" => Ok(Self::D4),
            "D5" => Ok(Self::D5),
            "D6" => Ok(Self::D6),
            "D7" => Ok(Self::D7),
            other => Err(format!("unknown treatment process {other:?} (expected D1..D7)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpConfig {
    /// Number of control units `N`.
    pub n_units: usize,
    pub t1: usize,
    pub t2: usize,
    pub factor_mode: FactorMode,
    pub treatment: Treatment,
    pub strong_loading_range: (f64, f64),
    pub weak_loading_range: (f64, f64),
    /// Units `0..n_strong_units` (the treated unit is 0) get strong loadings.
    pub n_strong_units: usize,
    pub loading_mode: LoadingMode,
    pub idio_sd: f64,
    pub burn_in: usize,
    /// Lag of the autoregressive term in the second dynamic factor.
    pub f2_lag: usize,
    pub seed: u64,
}

impl Default for DgpConfig {
    fn default() -> Self {
        Self {
            n_units: 100,
            t1: 100,
            t2: 100,
            factor_mode: FactorMode::Iid,
            treatment: Treatment::D1,
            strong_loading_range: (1.0, 2.0),
            weak_loading_range: (-0.1, 0.1),
            n_strong_units: 5,
            loading_mode: LoadingMode::Fixed,
            idio_sd: 0.5,
            burn_in: 200,
            f2_lag: 2,
            seed: 20_240_601,
        }
    }
}

impl DgpConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(FspdaError::InvalidArgument(msg));
        if self.n_units == 0 {
            return fail("n_units must be positive".into());
        }
        if self.n_strong_units > self.n_units + 1 {
            return fail(format!(
                "n_strong_units = {} exceeds n_units + 1 = {}",
                self.n_strong_units,
                self.n_units + 1
            ));
        }
        if self.t1 < 3 || self.t2 < 2 {
            return fail(format!(
                "need t1 ≥ 3 and t2 ≥ 2, got t1 = {}, t2 = {}",
                self.t1, self.t2
            ));
        }
        if !(self.idio_sd > 0.0 && self.idio_sd.is_finite()) {
            return fail(format!("idio_sd must be positive, got {}", self.idio_sd));
        }
        for (name, (lo, hi)) in [
            ("strong_loading_range", self.strong_loading_range),
            ("weak_loading_range", self.weak_loading_range),
        ] {
            if !(lo < hi && lo.is_finite() && hi.is_finite()) {
                return fail(format!("{name} must satisfy low < high, got ({lo}, {hi})"));
            }
        }
        if !(1..=2).contains(&self.f2_lag) {
            return fail(format!("f2_lag must be 1 or 2, got {}", self.f2_lag));
        }
        Ok(())
    }

    pub fn t_total(&self) -> usize {
        self.t1 + self.t2
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedPanel {
    pub panel: PanelData,
    pub true_counterfactual: Vec<f64>,
    pub true_effects: Vec<f64>,
    pub factors: DMatrix<f64>,
    pub loadings: DMatrix<f64>,
}

/// `t_total × 4` factor matrix.
///
/// In `Iid` mode column `l` (1-based) is i.i.d. `N(0, l²)`. In `Dynamic` mode
/// the columns follow, with `u_lt ~ N(0, 1)` and zero initial conditions,
/// `f1 = u1`, `f2_t = 0.9 f2_{t−f2_lag} + u2_t`,
/// `f3_t = u3_t + 0.8 u3_{t−1} + 0.4 u3_{t−2}`,
/// `f4_t = 0.5 f4_{t−1} + u4_t + 0.5 u4_{t−1}`; the first `burn_in` periods
/// are generated and dropped.
pub fn generate_factors(
    mode: FactorMode,
    t_total: usize,
    burn_in: usize,
    f2_lag: usize,
    rng: &mut impl Rng,
) -> DMatrix<f64> {
    match mode {
        FactorMode::Iid => DMatrix::from_fn(t_total, N_FACTORS, |_, l| {
            (l + 1) as f64 * rng.sample::<f64, _>(StandardNormal)
        }),
        FactorMode::Dynamic => {
            let n = burn_in + t_total;
            let mut u = DMatrix::<f64>::zeros(n, N_FACTORS);
            for t in 0..n {
                for l in 0..N_FACTORS {
                    u[(t, l)] = rng.sample(StandardNormal);
                }
            }
            let mut f = DMatrix::<f64>::zeros(n, N_FACTORS);
            for t in 0..n {
                f[(t, 0)] = u[(t, 0)];
                let f2_prev = if t >= f2_lag { f[(t - f2_lag, 1)] } else { 0.0 };
                f[(t, 1)] = 0.9 * f2_prev + u[(t, 1)];
                let u3_1 = if t >= 1 { u[(t - 1, 2)] } else { 0.0 };
                let u3_2 = if t >= 2 { u[(t - 2, 2)] } else { 0.0 };
                f[(t, 2)] = u[(t, 2)] + 0.8 * u3_1 + 0.4 * u3_2;
                let (f4_1, u4_1) = if t >= 1 {
                    (f[(t - 1, 3)], u[(t - 1, 3)])
                } else {
                    (0.0, 0.0)
                };
                f[(t, 3)] = 0.5 * f4_1 + u[(t, 3)] + 0.5 * u4_1;
            }
            f.rows(burn_in, t_total).into_owned()
        }
    }
}

struct BaseDraw {
    /// Untreated outcomes, column 0 is the treated unit.
    outcomes: DMatrix<f64>,
    factors: DMatrix<f64>,
    loadings: DMatrix<f64>,
}

/// Stream of the scenario seed reserved for the scenario-wide loadings;
/// replications use streams `2r` and `2r + 1`.
const LOADING_STREAM: u64 = u64::MAX;

/// `4 × (N + 1)` loading matrix, column 0 for the treated unit.
pub fn draw_loadings(config: &DgpConfig, rng: &mut impl Rng) -> Result<DMatrix<f64>> {
    let strong = Uniform::new(config.strong_loading_range.0, config.strong_loading_range.1)
        .map_err(|e| FspdaError::InvalidArgument(e.to_string()))?;
    let weak = Uniform::new(config.weak_loading_range.0, config.weak_loading_range.1)
        .map_err(|e| FspdaError::InvalidArgument(e.to_string()))?;
    Ok(DMatrix::from_fn(N_FACTORS, config.n_units + 1, |_, j| {
        if j < config.n_strong_units {
            strong.sample(rng)
        } else {
            weak.sample(rng)
        }
    }))
}

/// Loadings shared by every replication of a `Fixed` scenario.
pub fn scenario_loadings(config: &DgpConfig) -> Result<DMatrix<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(LOADING_STREAM);
    draw_loadings(config, &mut rng)
}

fn draw_base(config: &DgpConfig, fixed: Option<&DMatrix<f64>>, rng: &mut impl Rng) -> Result<BaseDraw> {
    let t = config.t_total();
    let units = config.n_units + 1;
    let factors = generate_factors(config.factor_mode, t, config.burn_in, config.f2_lag, rng);
    let loadings = match fixed {
        Some(l) => l.clone(),
        None => draw_loadings(config, rng)?,
    };
    let noise = Normal::new(0.0, config.idio_sd).map_err(|e| FspdaError::InvalidArgument(e.to_string()))?;
    let mut outcomes = &factors * &loadings;
    for j in 0..units {
        for s in 0..t {
            outcomes[(s, j)] += noise.sample(rng);
        }
    }
    Ok(BaseDraw {
        outcomes,
        factors,
        loadings,
    })
}

fn fixed_loadings(config: &DgpConfig) -> Result<Option<DMatrix<f64>>> {
    match config.loading_mode {
        LoadingMode::Fixed => scenario_loadings(config).map(Some),
        LoadingMode::Redraw => Ok(None),
    }
}

fn assemble(config: &DgpConfig, base: &BaseDraw, true_effects: Vec<f64>) -> Result<SimulatedPanel> {
    let t1 = config.t1;
    let t = config.t_total();
    let untreated = base.outcomes.column(0);
    let true_counterfactual: Vec<f64> = untreated.rows(t1, config.t2).iter().copied().collect();
    let treated = DVector::from_fn(t, |s, _| {
        if s < t1 {
            untreated[s]
        } else {
            true_counterfactual[s - t1] + true_effects[s - t1]
        }
    });
    let controls = base.outcomes.columns(1, config.n_units).into_owned();
    let panel = PanelData::unlabeled(treated, controls, t1, false)?;
    Ok(SimulatedPanel {
        panel,
        true_counterfactual,
        true_effects,
        factors: base.factors.clone(),
        loadings: base.loadings.clone(),
    })
}

fn replication_rngs(seed: u64, rep: u64) -> (ChaCha8Rng, ChaCha8Rng) {
    let mut base = ChaCha8Rng::seed_from_u64(seed);
    base.set_stream(2 * rep);
    let mut effects = ChaCha8Rng::seed_from_u64(seed);
    effects.set_stream(2 * rep + 1);
    (base, effects)
}

/// Simulated panel for replication `rep` of the scenario.
pub fn generate_replication(config: &DgpConfig, rep: u64) -> Result<SimulatedPanel> {
    config.validate()?;
    let (mut base_rng, mut effect_rng) = replication_rngs(config.seed, rep);
    let base = draw_base(config, fixed_loadings(config)?.as_ref(), &mut base_rng)?;
    let effects = config.treatment.generate(config.t2, &mut effect_rng);
    assemble(config, &base, effects)
}

/// Untreated outcomes from the factor model, treated post rows shifted by the
/// configured treatment process. Equal to replication 0 of the scenario.
pub fn generate_panel(config: &DgpConfig) -> Result<SimulatedPanel> {
    generate_replication(config, 0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Forward,
    Lasso,
}

impl std::str::FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "forward" => Ok(Self::Forward),
            "lasso" => Ok(Self::Lasso),
            other => Err(format!("unknown method {other:?} (expected forward or lasso)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloSettings {
    pub method: Method,
    pub n_reps: usize,
    pub inference: InferenceOptions,
    /// Forward-selection cap; `None` uses [`default_r_max`].
    pub r_max: Option<usize>,
    /// Modified-BIC constant; `None` uses 1 for forward selection, 2 for Lasso.
    pub bic_constant: Option<f64>,
    pub lasso_grid_size: usize,
}

impl MonteCarloSettings {
    pub fn new(method: Method, n_reps: usize) -> Self {
        Self {
            method,
            n_reps,
            inference: InferenceOptions::default(),
            r_max: None,
            bic_constant: None,
            lasso_grid_size: DEFAULT_GRID_SIZE,
        }
    }

    pub fn effective_bic_constant(&self) -> f64 {
        self.bic_constant.unwrap_or(match self.method {
            Method::Forward => FORWARD_BIC_CONSTANT,
            Method::Lasso => LASSO_BIC_CONSTANT,
        })
    }
}

/// Counterfactual model selected on one simulated panel.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectedModel {
    pub selected: Vec<usize>,
    pub counterfactual: Vec<f64>,
}

/// Selects and fits on the pre-treatment rows, then predicts the
/// post-treatment counterfactual.
pub fn select_and_predict(panel: &PanelData, settings: &MonteCarloSettings) -> Result<SelectedModel> {
    let constant = settings.effective_bic_constant();
    match settings.method {
        Method::Forward => {
            let r_max = settings.r_max.unwrap_or_else(|| default_r_max(panel));
            let path = forward_select(panel, r_max)?;
            let choice = modified_bic_r(&path, panel.n_units(), panel.t1(), constant)?;
            let model = fit_selected(panel, &path, choice.r_hat)?;
            let post = panel.post_columns(&model.selected)?;
            let counterfactual = linear_prediction(&post, model.slopes(), model.intercept_value());
            Ok(SelectedModel {
                selected: model.selected,
                counterfactual,
            })
        }
        Method::Lasso => {
            let path = lasso_path_bic(panel, settings.lasso_grid_size, constant)?;
            Ok(SelectedModel {
                selected: path.fit.active_set(),
                counterfactual: path.fit.predict_post(panel),
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationOutcome {
    pub selected_count: usize,
    /// Mean squared prediction error against the true counterfactual.
    pub mspe: f64,
    pub ate: f64,
    pub z_stat: f64,
    pub reject: bool,
}

fn replication_outcomes(
    config: &DgpConfig,
    loadings: Option<&DMatrix<f64>>,
    treatments: &[Treatment],
    settings: &MonteCarloSettings,
    rep: u64,
) -> Vec<std::result::Result<ReplicationOutcome, String>> {
    let (mut base_rng, effect_rng) = replication_rngs(config.seed, rep);
    let prepared = draw_base(config, loadings, &mut base_rng).and_then(|base| {
        let sim = assemble(config, &base, vec![0.0; config.t2])?;
        let model = select_and_predict(&sim.panel, settings)?;
        Ok((sim, model))
    });
    let (sim, model) = match prepared {
        Ok(v) => v,
        Err(e) => return treatments.iter().map(|_| Err(error_kind(&e))).collect(),
    };
    let mspe = sim
        .true_counterfactual
        .iter()
        .zip(&model.counterfactual)
        .map(|(y, c)| (y - c).powi(2))
        .sum::<f64>()
        / config.t2 as f64;
    treatments
        .iter()
        .map(|&treatment| {
            // Every treatment process restarts the same effect stream.
            let mut rng = effect_rng.clone();
            let effects = treatment.generate(config.t2, &mut rng);
            let observed: Vec<f64> = sim
                .true_counterfactual
                .iter()
                .zip(&effects)
                .map(|(y, d)| y + d)
                .collect();
            effect_report(
                &observed,
                model.counterfactual.clone(),
                model.selected.clone(),
                &settings.inference,
            )
            .map(|report| ReplicationOutcome {
                selected_count: model.selected.len(),
                mspe,
                ate: report.ate,
                z_stat: report.z_stat,
                reject: report.reject,
            })
            .map_err(|e| error_kind(&e))
        })
        .collect()
}

fn error_kind(e: &FspdaError) -> String {
    match e {
        FspdaError::NonPositiveLrv { .. } => "non_positive_lrv".into(),
        FspdaError::Infeasible => "infeasible".into(),
        FspdaError::RankDeficient { .. } => "rank_deficient".into(),
        other => format!("{other}"),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub method: Method,
    pub treatment: Treatment,
    pub n_requested: usize,
    /// Replications that completed; the denominator of every rate.
    pub n_replications: usize,
    pub n_failed: usize,
    /// Failure counts by error kind, sorted by kind.
    pub failures: Vec<(String, usize)>,
    /// Lower median of the number of selected control units.
    pub median_selected: usize,
    /// Root of the across-replication mean of per-replication MSPE.
    pub rmpse: f64,
    pub rejections: usize,
    pub rejection_rate: f64,
    pub mean_ate: f64,
    pub mean_z: f64,
}

fn aggregate(
    method: Method,
    treatment: Treatment,
    n_requested: usize,
    outcomes: &[std::result::Result<ReplicationOutcome, String>],
) -> MonteCarloReport {
    let ok: Vec<&ReplicationOutcome> = outcomes.iter().filter_map(|o| o.as_ref().ok()).collect();
    let mut failures = std::collections::BTreeMap::<String, usize>::new();
    for e in outcomes.iter().filter_map(|o| o.as_ref().err()) {
        *failures.entry(e.clone()).or_default() += 1;
    }
    let n = ok.len();
    let mut counts: Vec<usize> = ok.iter().map(|o| o.selected_count).collect();
    counts.sort_unstable();
    let median_selected = if n == 0 { 0 } else { counts[(n - 1) / 2] };
    let mean = |f: &dyn Fn(&ReplicationOutcome) -> f64| {
        if n == 0 {
            f64::NAN
        } else {
            ok.iter().map(|o| f(o)).sum::<f64>() / n as f64
        }
    };
    let rejections = ok.iter().filter(|o| o.reject).count();
    MonteCarloReport {
        method,
        treatment,
        n_requested,
        n_replications: n,
        n_failed: outcomes.len() - n,
        failures: failures.into_iter().collect(),
        median_selected,
        rmpse: mean(&|o| o.mspe).sqrt(),
        rejections,
        rejection_rate: if n == 0 { f64::NAN } else { rejections as f64 / n as f64 },
        mean_ate: mean(&|o| o.ate),
        mean_z: mean(&|o| o.z_stat),
    }
}

fn collect_outcomes(
    config: &DgpConfig,
    treatments: &[Treatment],
    settings: &MonteCarloSettings,
) -> Result<Vec<Vec<std::result::Result<ReplicationOutcome, String>>>> {
    config.validate()?;
    if settings.n_reps == 0 {
        return Err(FspdaError::InvalidArgument("n_reps must be at least 1".into()));
    }
    let loadings = fixed_loadings(config)?;
    // Indexed collection keeps replication order independent of scheduling.
    Ok((0..settings.n_reps as u64)
        .into_par_iter()
        .map(|rep| replication_outcomes(config, loadings.as_ref(), treatments, settings, rep))
        .collect())
}

/// Monte Carlo experiment for `config.treatment`.
pub fn run_monte_carlo(config: &DgpConfig, settings: &MonteCarloSettings) -> Result<MonteCarloReport> {
    Ok(run_monte_carlo_sweep(config, &[config.treatment], settings)?.remove(0))
}

/// One report per treatment process, all sharing the same untreated panels
/// and selected models per replication.
pub fn run_monte_carlo_sweep(
    config: &DgpConfig,
    treatments: &[Treatment],
    settings: &MonteCarloSettings,
) -> Result<Vec<MonteCarloReport>> {
    if treatments.is_empty() {
        return Err(FspdaError::InvalidArgument("no treatment processes requested".into()));
    }
    let per_rep = collect_outcomes(config, treatments, settings)?;
    Ok(treatments
        .iter()
        .enumerate()
        .map(|(k, &treatment)| {
            let outcomes: Vec<_> = per_rep.iter().map(|row| row[k].clone()).collect();
            aggregate(settings.method, treatment, settings.n_reps, &outcomes)
        })
        .collect())
}

/// Realized test statistics under a null treatment process; failed
/// replications are dropped.
pub fn zstat_sample(config: &DgpConfig, settings: &MonteCarloSettings) -> Result<Vec<f64>> {
    if !config.treatment.is_null() {
        return Err(FspdaError::InvalidArgument(format!(
            "z-statistic sampling needs a null process (D1..D3), got {}",
            config.treatment
        )));
    }
    let per_rep = collect_outcomes(config, &[config.treatment], settings)?;
    Ok(per_rep
        .into_iter()
        .filter_map(|row| row.into_iter().next().and_then(|o| o.ok()))
        .map(|o| o.z_stat)
        .collect())
}

/// Kolmogorov–Smirnov distance between the empirical CDF of `sample` and
/// the standard normal CDF.
pub fn ks_distance_normal(sample: &[f64]) -> f64 {
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted.iter().enumerate().fold(0.0f64, |acc, (i, &x)| {
        let cdf = normal_cdf(x);
        let above = (i + 1) as f64 / n - cdf;
        let below = cdf - i as f64 / n;
        acc.max(above).max(below)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleCheckReport {
    pub subset_size: usize,
    pub path_length: usize,
    pub delta: f64,
    pub n_replications: usize,
    pub n_failed: usize,
    /// Share of replications with `σ̂²(greedy, R steps) ≤ σ̂*²_u + δ`.
    pub frequency: f64,
    /// `σ̂²(greedy) − σ̂*²_u` per completed replication, in replication order.
    pub gaps: Vec<f64>,
}

/// Compares the residual variance after `path_length` greedy steps with the
/// best `u`-subset found by exhaustive enumeration.
pub fn oracle_check(
    config: &DgpConfig,
    subset_size: usize,
    path_length: usize,
    delta: f64,
    n_reps: usize,
) -> Result<OracleCheckReport> {
    config.validate()?;
    if n_reps == 0 || path_length == 0 {
        return Err(FspdaError::InvalidArgument(
            "n_reps and path_length must be positive".into(),
        ));
    }
    let guard = crate::selection::binomial(config.n_units, subset_size);
    if guard > crate::selection::ORACLE_SUBSET_LIMIT {
        return Err(FspdaError::CombinatorialExplosion {
            n: config.n_units,
            k: subset_size,
            count: guard,
            limit: crate::selection::ORACLE_SUBSET_LIMIT,
        });
    }
    let results: Vec<Result<f64>> = (0..n_reps as u64)
        .into_par_iter()
        .map(|rep| {
            let sim = generate_replication(config, rep)?;
            let path = forward_select(&sim.panel, path_length)?;
            let greedy = path.steps.last().ok_or(FspdaError::EmptyPath)?.sigma2_hat;
            let best = best_subset_oracle(&sim.panel, subset_size, SubsetCriterion::MinSigma2)?;
            Ok(greedy - best.sigma2_hat)
        })
        .collect();
    if let Some(Err(e @ FspdaError::CombinatorialExplosion { .. })) = results.iter().find(|r| r.is_err()) {
        return Err(e.clone());
    }
    let gaps: Vec<f64> = results.iter().filter_map(|r| r.as_ref().ok().copied()).collect();
    let hits = gaps.iter().filter(|g| **g <= delta).count();
    Ok(OracleCheckReport {
        subset_size,
        path_length,
        delta,
        n_replications: gaps.len(),
        n_failed: n_reps - gaps.len(),
        frequency: if gaps.is_empty() {
            f64::NAN
        } else {
            hits as f64 / gaps.len() as f64
        },
        gaps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn variance(xs: impl Iterator<Item = f64> + Clone) -> f64 {
        let v: Vec<f64> = xs.collect();
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64
    }

    fn lag1_autocorrelation(x: &[f64]) -> f64 {
        let m = x.iter().sum::<f64>() / x.len() as f64;
        let num: f64 = x.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum();
        let den: f64 = x.iter().map(|v| (v - m).powi(2)).sum();
        num / den
    }

    #[test]
    fn iid_factor_variances() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = generate_factors(FactorMode::Iid, 20_000, 0, 2, &mut rng);
        for l in 0..4 {
            let expected = ((l + 1) * (l + 1)) as f64;
            let v = variance(f.column(l).iter().copied());
            assert!((v / expected - 1.0).abs() < 0.1, "factor {l}: {v}");
        }
    }

    #[test]
    fn dynamic_factor_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = generate_factors(FactorMode::Dynamic, 5000, 200, 2, &mut rng);
        // 0.9 on lag 2: stationary variance 1/(1 − 0.81).
        let v2 = variance(f.column(1).iter().copied());
        assert!((v2 / (1.0 / (1.0 - 0.81)) - 1.0).abs() < 0.15, "f2 variance {v2}");
        // MA(2) variance 1 + 0.64 + 0.16.
        let v3 = variance(f.column(2).iter().copied());
        assert!((v3 / 1.8 - 1.0).abs() < 0.1, "f3 variance {v3}");
        // ARMA(1,1) with φ = θ = 0.5: ρ1 = (1 + φθ)(φ + θ)/(1 + 2φθ + θ²) = 5/7.
        let col4: Vec<f64> = f.column(3).iter().copied().collect();
        let rho = lag1_autocorrelation(&col4);
        assert!((rho / (5.0 / 7.0) - 1.0).abs() < 0.1, "f4 lag-1 autocorrelation {rho}");
    }

    #[test]
    fn burn_in_changes_early_rows() {
        let mut a = ChaCha8Rng::seed_from_u64(3);
        let mut b = ChaCha8Rng::seed_from_u64(3);
        let fa = generate_factors(FactorMode::Dynamic, 50, 0, 2, &mut a);
        let fb = generate_factors(FactorMode::Dynamic, 50, 200, 2, &mut b);
        assert_ne!(fa.row(0), fb.row(0));
        // Zero initial conditions: the first row is the raw innovations.
        let mut c = ChaCha8Rng::seed_from_u64(3);
        let u0: Vec<f64> = (0..4).map(|_| c.sample(StandardNormal)).collect();
        assert_eq!(fa[(0, 1)], u0[1]);
    }

    #[test]
    fn f2_lag_switch() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = generate_factors(FactorMode::Dynamic, 5000, 200, 1, &mut rng);
        let col: Vec<f64> = f.column(1).iter().copied().collect();
        assert!((lag1_autocorrelation(&col) - 0.9).abs() < 0.03);
    }

    #[test]
    fn fixed_loadings_shared_across_replications() {
        let config = DgpConfig {
            n_units: 10,
            t1: 10,
            t2: 5,
            ..DgpConfig::default()
        };
        let a = generate_replication(&config, 0).unwrap();
        let b = generate_replication(&config, 7).unwrap();
        assert_eq!(a.loadings, b.loadings);
        assert_eq!(a.loadings, scenario_loadings(&config).unwrap());
        assert_ne!(a.factors, b.factors);
        for j in 0..11 {
            let range = if j < 5 { 1.0..2.0 } else { -0.1..0.1 };
            assert!(a.loadings.column(j).iter().all(|v| range.contains(v)));
        }

        let redraw = DgpConfig {
            loading_mode: LoadingMode::Redraw,
            ..config
        };
        let c = generate_replication(&redraw, 0).unwrap();
        let d = generate_replication(&redraw, 7).unwrap();
        assert_ne!(c.loadings, d.loadings);
    }

    #[test]
    fn null_process_leaves_treated_untouched() {
        let sim = generate_panel(&DgpConfig::default()).unwrap();
        assert!(sim.true_effects.iter().all(|d| *d == 0.0));
        assert_eq!(sim.panel.post_treated().as_slice(), sim.true_counterfactual.as_slice());
        assert_eq!(sim.panel.n_units(), 100);
        assert!(!sim.panel.intercept());
    }

    #[test]
    fn treated_post_rows_are_counterfactual_plus_effect() {
        for treatment in Treatment::ALL {
            let config = DgpConfig {
                treatment,
                t1: 30,
                t2: 40,
                n_units: 12,
                ..Default::default()
            };
            let sim = generate_panel(&config).unwrap();
            let post = sim.panel.post_treated();
            for t in 0..40 {
                assert_eq!(post[t], sim.true_counterfactual[t] + sim.true_effects[t]);
            }
        }
    }

    #[test]
    fn effect_process_means() {
        let t2 = 40_000;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d5 = Treatment::D5.generate(t2, &mut rng);
        let m5 = d5.iter().sum::<f64>() / t2 as f64;
        assert!((m5 - 1.0).abs() < 3.0 / (t2 as f64).sqrt());
        let d7 = Treatment::D7.generate(t2, &mut rng);
        let m7 = d7.iter().sum::<f64>() / t2 as f64;
        // AR(1) long-run sd of the mean: 1/(1 − 0.3)/√T.
        assert!((m7 - 1.0).abs() < 3.0 / 0.7 / (t2 as f64).sqrt());
        assert!((Treatment::D7.mean_effect() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn generation_is_deterministic() {
        let config = DgpConfig {
            factor_mode: FactorMode::Dynamic,
            treatment: Treatment::D6,
            ..Default::default()
        };
        assert_eq!(
            generate_replication(&config, 7).unwrap(),
            generate_replication(&config, 7).unwrap()
        );
        assert_ne!(
            generate_replication(&config, 7).unwrap().panel,
            generate_replication(&config, 8).unwrap().panel
        );
    }

    #[test]
    fn config_validation() {
        let bad = DgpConfig {
            n_strong_units: 200,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = DgpConfig {
            idio_sd: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert_eq!("dynamic".parse::<FactorMode>(), Ok(FactorMode::Dynamic));
        assert!("weekly".parse::<FactorMode>().is_err());
        assert_eq!("d7".parse::<Treatment>(), Ok(Treatment::D7));
    }

    #[test]
    fn ks_distance_of_exact_quantiles_is_small() {
        let n = 1000;
        let sample: Vec<f64> = (0..n)
            .map(|i| crate::inference::normal_quantile((i as f64 + 0.5) / n as f64))
            .collect();
        assert!((ks_distance_normal(&sample) - 0.5 / n as f64).abs() < 1e-9);
        assert!(ks_distance_normal(&[10.0; 5]) > 0.99);
    }

    #[test]
    fn small_monte_carlo_is_thread_independent() {
        let config = DgpConfig {
            n_units: 20,
            t1: 40,
            t2: 40,
            ..Default::default()
        };
        let settings = MonteCarloSettings::new(Method::Forward, 16);
        let sequential = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| run_monte_carlo_sweep(&config, &Treatment::ALL, &settings).unwrap());
        let parallel = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap()
            .install(|| run_monte_carlo_sweep(&config, &Treatment::ALL, &settings).unwrap());
        assert_eq!(sequential, parallel);
        // The shared untreated panels give identical selection statistics
        // whenever the same replications completed.
        let complete: Vec<_> = sequential.iter().filter(|r| r.n_failed == 0).collect();
        assert!(complete.len() >= 2);
        assert!(complete.iter().all(|r| r.rmpse == complete[0].rmpse));
        let single = run_monte_carlo(&config, &settings).unwrap();
        assert_eq!(single, sequential[0]);
    }

    #[test]
    fn oracle_check_with_size_one_always_holds() {
        let config = DgpConfig {
            n_units: 12,
            t1: 40,
            t2: 10,
            ..Default::default()
        };
        let report = oracle_check(&config, 1, 3, 0.0, 10).unwrap();
        assert_eq!(report.frequency, 1.0);
        assert!(report.gaps.iter().all(|g| *g <= 1e-12));
        let big = DgpConfig { n_units: 100, ..config };
        assert!(matches!(
            oracle_check(&big, 5, 6, 0.05, 2),
            Err(FspdaError::CombinatorialExplosion { .. })
        ));
    }

    #[test]
    fn zstat_requires_null_process() {
        let config = DgpConfig {
            treatment: Treatment::D5,
            ..Default::default()
        };
        assert!(zstat_sample(&config, &MonteCarloSettings::new(Method::Forward, 2)).is_err());
    }
}
