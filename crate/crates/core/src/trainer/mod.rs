//! Training loop, evaluation, cross-validation and the ablation runner.

mod config;
mod run;

pub use config::{parse_config_text, Preset, TrainConfig, CONFIG_KEYS};
pub use run::{
    ablate, cross_validate, evaluate, fit, lr_at, train_round, AblationReport, OraclePredictor, Predictor,
    RoundRecord, RunRecord,
};
