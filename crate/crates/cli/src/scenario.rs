//! Simulation scenario files (TOML).
//!
//! ```toml
//! factor_mode = "iid"          # iid | dynamic
//! t1 = 100
//! t2 = 100
//! treatments = ["D1", "D5"]    # or "all"; `treatment = "D1"` also accepted
//! method = "forward"           # forward | lasso
//! n_reps = 1000
//! seed = 20240601
//! ```
//!
//! Every key is optional; unknown keys are rejected.

use std::path::Path;
use std::str::FromStr;

use fspda_core::{DgpConfig, FactorMode, InferenceOptions, Kernel, LoadingMode, Method, MonteCarloSettings, Treatment};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{AppError, AppResult};

/// Greedy steps compared with the best subset in an oracle check.
pub const DEFAULT_PATH_LENGTH: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub config: DgpConfig,
    pub treatments: Vec<Treatment>,
    pub settings: MonteCarloSettings,
    pub path_length: usize,
}

impl Default for Scenario {
    fn default() -> Self {
        let config = DgpConfig::default();
        Self {
            treatments: vec![config.treatment],
            config,
            settings: MonteCarloSettings::new(Method::Forward, 1000),
            path_length: DEFAULT_PATH_LENGTH,
        }
    }
}

pub fn load_scenario(path: &Path) -> AppResult<Scenario> {
    let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    parse_scenario(&text)
}

pub fn parse_scenario(text: &str) -> AppResult<Scenario> {
    let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| {
        let field = e.span().map(|s| key_at(text, s.start)).unwrap_or_default();
        AppError::config(field, e.message().to_owned())
    })?;
    let mut scenario = Scenario::default();
    let c = &mut scenario.config;
    let t = &mut table;

    set(t, "n_units", &mut c.n_units)?;
    set(t, "t1", &mut c.t1)?;
    set(t, "t2", &mut c.t2)?;
    set_parsed::<FactorMode>(t, "factor_mode", &mut c.factor_mode)?;
    set_parsed::<LoadingMode>(t, "loading_mode", &mut c.loading_mode)?;
    set(t, "strong_loading_range", &mut c.strong_loading_range)?;
    set(t, "weak_loading_range", &mut c.weak_loading_range)?;
    set(t, "n_strong_units", &mut c.n_strong_units)?;
    set(t, "idio_sd", &mut c.idio_sd)?;
    set(t, "burn_in", &mut c.burn_in)?;
    set(t, "f2_lag", &mut c.f2_lag)?;
    set(t, "seed", &mut c.seed)?;

    let single = take::<String>(t, "treatment")?;
    let list = take::<toml::Value>(t, "treatments")?;
    scenario.treatments = match (single, list) {
        (Some(_), Some(_)) => {
            return Err(AppError::config(
                "treatments",
                "give either `treatment` or `treatments`, not both",
            ))
        }
        (Some(s), None) => vec![Treatment::from_str(&s).map_err(|m| AppError::config("treatment", m))?],
        (None, Some(v)) => parse_treatments(v)?,
        (None, None) => vec![Treatment::D1],
    };
    c.treatment = scenario.treatments[0];

    let s = &mut scenario.settings;
    set_parsed::<Method>(t, "method", &mut s.method)?;
    set(t, "n_reps", &mut s.n_reps)?;
    s.r_max = take(t, "r_max")?;
    s.bic_constant = take(t, "bic_constant")?;
    set(t, "lasso_grid_size", &mut s.lasso_grid_size)?;
    let mut inference = InferenceOptions {
        tau: take(t, "lag")?,
        ..InferenceOptions::default()
    };
    set(t, "alpha", &mut inference.alpha)?;
    if let Some(k) = take::<String>(t, "kernel")? {
        inference.kernel = parse_kernel(&k).map_err(|m| AppError::config("kernel", m))?;
    }
    s.inference = inference;
    set(t, "path_length", &mut scenario.path_length)?;

    if let Some(key) = table.keys().next() {
        return Err(AppError::config(key.clone(), "unknown key"));
    }
    validate(&scenario)?;
    Ok(scenario)
}

pub fn parse_kernel(s: &str) -> Result<Kernel, String> {
    match s.trim().to_ascii_lowercase().as_str() {
        "truncated" => Ok(Kernel::Truncated),
        "bartlett" => Ok(Kernel::Bartlett),
        other => Err(format!("unknown kernel {other:?} (expected truncated or bartlett)")),
    }
}

fn validate(s: &Scenario) -> AppResult<()> {
    let c = &s.config;
    let checks: [(&str, bool, &str); 10] = [
        ("n_units", c.n_units >= 2, "must be at least 2"),
        ("t1", c.t1 >= 3, "must be at least 3"),
        ("t2", c.t2 >= 2, "must be at least 2"),
        ("idio_sd", c.idio_sd > 0.0 && c.idio_sd.is_finite(), "must be positive"),
        ("f2_lag", (1..=2).contains(&c.f2_lag), "must be 1 or 2"),
        (
            "n_strong_units",
            c.n_strong_units <= c.n_units + 1,
            "cannot exceed n_units + 1",
        ),
        ("n_reps", s.settings.n_reps >= 1, "must be at least 1"),
        (
            "alpha",
            s.settings.inference.alpha > 0.0 && s.settings.inference.alpha < 1.0,
            "must lie in (0, 1)",
        ),
        ("lasso_grid_size", s.settings.lasso_grid_size >= 2, "must be at least 2"),
        ("path_length", s.path_length >= 1, "must be at least 1"),
    ];
    if let Some((field, _, message)) = checks.iter().find(|(_, ok, _)| !ok) {
        return Err(AppError::config(*field, *message));
    }
    if matches!(s.settings.r_max, Some(0)) {
        return Err(AppError::config("r_max", "must be at least 1"));
    }
    if let Some(b) = s.settings.bic_constant {
        if !(b > 0.0 && b.is_finite()) {
            return Err(AppError::config("bic_constant", "must be positive"));
        }
    }
    if let Some(tau) = s.settings.inference.tau {
        if tau >= c.t2 {
            return Err(AppError::config("lag", format!("must be below t2 = {}", c.t2)));
        }
    }
    c.validate().map_err(|e| AppError::config("scenario", e.to_string()))
}

fn parse_treatments(value: toml::Value) -> AppResult<Vec<Treatment>> {
    let bad = |m: String| AppError::config("treatments", m);
    match value {
        toml::Value::String(s) if s.eq_ignore_ascii_case("all") => Ok(Treatment::ALL.to_vec()),
        toml::Value::String(s) => Ok(vec![Treatment::from_str(&s).map_err(bad)?]),
        toml::Value::Array(items) if !items.is_empty() => items
            .iter()
            .map(|v| {
                v.as_str()
                    .ok_or_else(|| bad(format!("expected a string, got {v}")))
                    .and_then(|s| Treatment::from_str(s).map_err(bad))
            })
            .collect(),
        other => Err(bad(format!("expected \"all\" or a non-empty list, got {other}"))),
    }
}

fn take<T: DeserializeOwned>(table: &mut toml::Table, key: &str) -> AppResult<Option<T>> {
    table
        .remove(key)
        .map(|v| {
            v.try_into::<T>()
                .map_err(|e| AppError::config(key, e.message().to_owned()))
        })
        .transpose()
}

fn set<T: DeserializeOwned>(table: &mut toml::Table, key: &str, slot: &mut T) -> AppResult<()> {
    if let Some(v) = take(table, key)? {
        *slot = v;
    }
    Ok(())
}

fn set_parsed<T: FromStr<Err = String>>(table: &mut toml::Table, key: &str, slot: &mut T) -> AppResult<()> {
    if let Some(s) = take::<String>(table, key)? {
        *slot = s.parse().map_err(|m| AppError::config(key, m))?;
    }
    Ok(())
}

/// Key on the line containing byte `offset`, for syntax errors.
fn key_at(text: &str, offset: usize) -> String {
    let start = text[..offset.min(text.len())].rfind('\n').map_or(0, |i| i + 1);
    let line = text[start..].lines().next().unwrap_or("");
    line.split('=').next().unwrap_or("").trim().to_owned()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(parse_scenario("").unwrap(), Scenario::default());
    }

    #[test]
    fn full_scenario() {
        let s = parse_scenario(
            "factor_mode = \"dynamic\"\nt1 = 50\nt2 = 50\ntreatments = \"all\"\nmethod = \"lasso\"\n\
             n_reps = 20\nseed = 7\nloading_mode = \"redraw\"\nf2_lag = 1\nkernel = \"bartlett\"\nlag = 3\n",
        )
        .unwrap();
        assert_eq!(s.config.factor_mode, FactorMode::Dynamic);
        assert_eq!(s.config.loading_mode, LoadingMode::Redraw);
        assert_eq!(s.treatments.len(), 7);
        assert_eq!(s.settings.method, Method::Lasso);
        assert_eq!(s.settings.inference.tau, Some(3));
        assert_eq!(s.settings.inference.kernel, Kernel::Bartlett);
        assert_eq!(s.config.f2_lag, 1);
    }

    fn field_of(text: &str) -> String {
        match parse_scenario(text) {
            Err(AppError::Config { field, .. }) => field,
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn errors_name_the_field() {
        assert_eq!(field_of("factor_mode = \"spectral\""), "factor_mode");
        assert_eq!(field_of("n_reps = -3"), "n_reps");
        assert_eq!(field_of("n_reps = 0"), "n_reps");
        assert_eq!(field_of("treatments = [\"D9\"]"), "treatments");
        assert_eq!(field_of("f2_lag = 3"), "f2_lag");
        assert_eq!(field_of("colour = 1"), "colour");
        assert_eq!(field_of("t2 = 10\nlag = 10"), "lag");
        assert_eq!(field_of("seed = \n"), "seed");
    }
}
