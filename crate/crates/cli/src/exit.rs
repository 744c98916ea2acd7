//! Exit-code classification.

use clens::partition::PartitionError;
use clens::predictor::PredictError;
use clens::proba_log::FormatError;
use clens::synth::SynthError;
use clens::trainer::TrainError;

use crate::config::ConfigError;

pub const OK: i32 = 0;
pub const VALIDATION: i32 = 2;
pub const IO_FORMAT: i32 = 3;
pub const CONFIG: i32 = 4;

/// 2 = validation failure, 3 = I/O or format, 4 = configuration.
pub fn classify(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() || cause.is::<toml::de::Error>() {
            return CONFIG;
        }
        if cause.is::<FormatError>() || cause.is::<std::io::Error>() {
            return IO_FORMAT;
        }
        if let Some(e) = cause.downcast_ref::<SynthError>() {
            return match e {
                SynthError::ConfigInvalid(_) => CONFIG,
                _ => VALIDATION,
            };
        }
        if let Some(e) = cause.downcast_ref::<TrainError>() {
            return match e {
                TrainError::BadArch(_) | TrainError::BadConfig(_) => CONFIG,
                TrainError::Format(_) => IO_FORMAT,
                _ => VALIDATION,
            };
        }
        if cause.is::<PredictError>() || cause.is::<PartitionError>() {
            return VALIDATION;
        }
    }
    VALIDATION
}
