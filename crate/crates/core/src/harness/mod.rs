pub mod config;
pub mod log;
pub mod report;
pub mod scenarios;
pub mod sim;

pub use config::{load_config, ModeSelect, ScenarioKind, TrialConfig};
pub use log::{read_log, write_log, LogRecord};
pub use report::{execute, execute_calibration, Summary};
pub use scenarios::{
    run_calibration, run_dynamic_trial, run_human_trial, run_recovery_demo, run_static_trial, run_tune,
};
