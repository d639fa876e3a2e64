//! Operational shell around `fspda-core`: wide-CSV panel ingestion, TOML
//! simulation scenarios, JSON reports, and the command implementations
//! behind the `fspda` binary.

pub mod commands;
pub mod error;
pub mod panel_csv;
pub mod report;
pub mod scenario;

pub use commands::{
    cmd_estimate, cmd_oracle_check, cmd_simulate, estimate, oracle, simulate, EstimateOptions, EstimateRequest,
    OracleRequest,
};
pub use error::{AppError, AppResult, EXIT_DATA, EXIT_NUMERIC, EXIT_OK};
pub use panel_csv::{load_panel, read_panel, save_panel, write_panel, LoadedPanel};
pub use report::{OracleDocument, ReportDocument, SimulationDocument, SCHEMA_VERSION};
pub use scenario::{load_scenario, parse_scenario, Scenario};
