//! Fixtures shared by the benchmarks.

use fspda_core::{generate_panel, DgpConfig, FactorMode, PanelData};

/// Untreated simulated panel of the given size, iid factors.
pub fn fixture_panel(n_units: usize, t1: usize, seed: u64) -> PanelData {
    let config = DgpConfig {
        n_units,
        t1,
        t2: t1,
        factor_mode: FactorMode::Iid,
        seed,
        ..Default::default()
    };
    generate_panel(&config).expect("valid fixture config").panel
}
