//! End-to-end experiment driver: corpus formats, session splitting,
//! variant configuration, engine-state persistence and reports.

pub mod config;
pub mod experiment;
pub mod io;
pub mod report;
pub mod split;
pub mod state;
pub mod synthetic;

pub use config::{EvalSetting, ExperimentConfig, Variant, VariantFlags};
pub use experiment::{run_experiment, Experiment, StepOutput};
pub use io::Dataset;
pub use report::{Report, SessionBlock};
pub use state::{load_state, save_state, EngineState};
