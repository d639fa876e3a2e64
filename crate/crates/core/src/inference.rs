//! Counterfactual prediction and the post-selection test for a zero average
//! treatment effect.

use libm::erfc;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf_inv;

use crate::error::{FspdaError, Result};
use crate::panel::PanelData;
use crate::selection::{linear_prediction, FittedModel};

/// Long-run variances at or below this are treated as degenerate.
pub const LRV_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    /// Uniform weights on lags `0..=τ`; not guaranteed positive.
    #[default]
    Truncated,
    /// Weights `1 − h/(τ+1)`; positive semi-definite.
    Bartlett,
}

impl Kernel {
    fn weight(self, lag: usize, tau: usize) -> f64 {
        match self {
            Self::Truncated => 1.0,
            Self::Bartlett => 1.0 - lag as f64 / (tau as f64 + 1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InferenceOptions {
    /// HAC lag; `None` uses [`default_lag`].
    pub tau: Option<usize>,
    pub alpha: f64,
    pub kernel: Kernel,
}

impl Default for InferenceOptions {
    fn default() -> Self {
        Self {
            tau: None,
            alpha: 0.05,
            kernel: Kernel::Truncated,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectReport {
    pub effects: Vec<f64>,
    pub ate: f64,
    pub lrv: f64,
    pub tau: usize,
    pub kernel: Kernel,
    pub z_stat: f64,
    pub p_value: f64,
    pub alpha: f64,
    /// `|z| > Φ⁻¹(1 − α/2)`.
    pub reject: bool,
    /// `|z| > Φ⁻¹(0.975)`.
    pub reject_05: bool,
    pub counterfactual: Vec<f64>,
    pub selected: Vec<usize>,
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal quantile: an `erf_inv` starting point polished by two
/// Newton steps against [`normal_cdf`].
pub fn normal_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let mut x = std::f64::consts::SQRT_2 * erf_inv(2.0 * p - 1.0);
    for _ in 0..2 {
        let density = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        if density > 0.0 {
            x -= (normal_cdf(x) - p) / density;
        }
    }
    x
}

/// Two-sided p-value `2·(1 − Φ(|z|))`, evaluated through `erfc` so small
/// tail probabilities keep their precision.
pub fn two_sided_p_value(z: f64) -> f64 {
    erfc(z.abs() / std::f64::consts::SQRT_2).min(1.0)
}

pub fn predict_counterfactual(model: &FittedModel, panel: &PanelData) -> Result<Vec<f64>> {
    let n_units = panel.n_units();
    if let Some(&index) = model.selected.iter().find(|&&j| j >= n_units) {
        return Err(FspdaError::IndexOutOfRange {
            index,
            max: n_units.saturating_sub(1),
        });
    }
    let columns = panel.post_columns(&model.selected)?;
    Ok(linear_prediction(&columns, model.slopes(), model.intercept_value()))
}

/// `⌊4·(T2/100)^{2/9}⌋`, clamped to `[1, T2 − 1]`.
pub fn default_lag(t2: usize) -> usize {
    let raw = (4.0 * (t2 as f64 / 100.0).powf(2.0 / 9.0)).floor() as usize;
    raw.clamp(1, t2.saturating_sub(1).max(1))
}

/// Truncated-kernel HAC estimate `T2⁻¹ Σ_{t,s} d_t d_s 1{|t−s| ≤ τ}` of the
/// long-run variance of the mean of `effects`.
pub fn hac_lrv(effects: &[f64], tau: usize) -> Result<f64> {
    hac_lrv_with_kernel(effects, tau, Kernel::Truncated)
}

pub fn hac_lrv_with_kernel(effects: &[f64], tau: usize, kernel: Kernel) -> Result<f64> {
    let t2 = effects.len();
    if t2 < 2 {
        return Err(FspdaError::InvalidArgument(format!(
            "need at least 2 post-treatment effects, got {t2}"
        )));
    }
    if tau > t2 - 1 {
        return Err(FspdaError::InvalidArgument(format!(
            "lag {tau} exceeds T2 − 1 = {}",
            t2 - 1
        )));
    }
    let mean = effects.iter().sum::<f64>() / t2 as f64;
    let dev: Vec<f64> = effects.iter().map(|d| d - mean).collect();
    let mut total: f64 = dev.iter().map(|d| d * d).sum();
    for lag in 1..=tau {
        let gamma: f64 = dev[lag..].iter().zip(&dev).map(|(a, b)| a * b).sum();
        total += 2.0 * kernel.weight(lag, tau) * gamma;
    }
    let value = total / t2 as f64;
    if value <= LRV_FLOOR {
        return Err(FspdaError::NonPositiveLrv { value });
    }
    Ok(value)
}

/// Test statistic and decision from observed post-treatment outcomes and a
/// counterfactual prediction of the same length.
pub fn effect_report(
    observed: &[f64],
    counterfactual: Vec<f64>,
    selected: Vec<usize>,
    options: &InferenceOptions,
) -> Result<EffectReport> {
    if !(options.alpha > 0.0 && options.alpha < 1.0) {
        return Err(FspdaError::InvalidArgument(format!(
            "alpha must lie in (0, 1), got {}",
            options.alpha
        )));
    }
    if observed.len() != counterfactual.len() {
        return Err(FspdaError::DimensionMismatch(format!(
            "{} observed periods vs {} predicted",
            observed.len(),
            counterfactual.len()
        )));
    }
    let t2 = observed.len();
    let effects: Vec<f64> = observed.iter().zip(&counterfactual).map(|(y, c)| y - c).collect();
    let ate = effects.iter().sum::<f64>() / t2 as f64;
    let tau = options.tau.unwrap_or_else(|| default_lag(t2));
    let lrv = hac_lrv_with_kernel(&effects, tau, options.kernel)?;
    let z_stat = (t2 as f64).sqrt() * ate / lrv.sqrt();
    let critical = normal_quantile(1.0 - options.alpha / 2.0);
    Ok(EffectReport {
        effects,
        ate,
        lrv,
        tau,
        kernel: options.kernel,
        z_stat,
        p_value: two_sided_p_value(z_stat),
        alpha: options.alpha,
        reject: z_stat.abs() > critical,
        reject_05: z_stat.abs() > normal_quantile(0.975),
        counterfactual,
        selected,
    })
}

pub fn ate_test(panel: &PanelData, model: &FittedModel, options: &InferenceOptions) -> Result<EffectReport> {
    let counterfactual = predict_counterfactual(model, panel)?;
    let observed = panel.post_treated();
    effect_report(observed.as_slice(), counterfactual, model.selected.clone(), options)
}
