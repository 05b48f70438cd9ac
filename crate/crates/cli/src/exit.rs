//! Exit codes. Every failure maps to exactly one class.

use std::fmt;

use sasreg::dataset::DatasetError;
use sasreg::losses::LossError;
use sasreg::metrics::MetricError;
use sasreg::model::checkpoint::CheckpointError;
use sasreg::model::ModelError;
use sasreg::scan_sim::SimError;
use sasreg::trainer::{ConfigError, TrainError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitClass {
    /// A bug or an unclassified failure.
    Internal = 1,
    /// Malformed command line.
    Usage = 2,
    /// Arguments or config values out of their valid domain.
    InvalidParams = 3,
    Io = 4,
    /// Input images, manifests or reports that cannot be interpreted.
    DataFormat = 5,
    Checkpoint = 6,
    Divergence = 7,
    Device = 8,
}

impl ExitClass {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn name(self) -> &'static str {
        match self {
            ExitClass::Internal => "internal",
            ExitClass::Usage => "usage",
            ExitClass::InvalidParams => "invalid-params",
            ExitClass::Io => "io",
            ExitClass::DataFormat => "data-format",
            ExitClass::Checkpoint => "checkpoint",
            ExitClass::Divergence => "divergence",
            ExitClass::Device => "device",
        }
    }
}

/// A failure raised by the front end itself with an explicit class.
#[derive(Debug)]
pub struct Failure {
    pub class: ExitClass,
    pub message: String,
}

impl Failure {
    pub fn new(class: ExitClass, message: impl Into<String>) -> Self {
        Self {
            class,
            message: message.into(),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Failure {}

pub fn fail(class: ExitClass, message: impl Into<String>) -> anyhow::Error {
    Failure::new(class, message).into()
}

fn sim(_: &SimError) -> ExitClass {
    ExitClass::InvalidParams
}

fn dataset(e: &DatasetError) -> ExitClass {
    match e {
        DatasetError::InvalidRatios(_) | DatasetError::TooFewFrames(_) => ExitClass::InvalidParams,
        DatasetError::MissingDirectory(_) | DatasetError::Io { .. } => ExitClass::Io,
        DatasetError::Simulation(s) => sim(s),
        DatasetError::OddWidth(_)
        | DatasetError::ShapeMismatch(..)
        | DatasetError::MalformedImage { .. }
        | DatasetError::InconsistentDimensions { .. }
        | DatasetError::MalformedMetadata { .. } => ExitClass::DataFormat,
    }
}

fn model(e: &ModelError) -> ExitClass {
    match e {
        ModelError::InvalidConfig(_) => ExitClass::InvalidParams,
        // the input does not fit the network
        ModelError::IndivisibleDims { .. } | ModelError::TooSmall { .. } | ModelError::ShapeMismatch(_) => {
            ExitClass::DataFormat
        }
    }
}

fn metric(e: &MetricError) -> ExitClass {
    match e {
        MetricError::Model(m) => model(m),
        _ => ExitClass::DataFormat,
    }
}

fn config(e: &ConfigError) -> ExitClass {
    match e {
        ConfigError::Io { .. } => ExitClass::Io,
        ConfigError::Parse(_) | ConfigError::UnknownKey(_) | ConfigError::Invalid(_) => ExitClass::InvalidParams,
    }
}

fn train(e: &TrainError) -> ExitClass {
    match e {
        TrainError::Config(c) => config(c),
        TrainError::Dataset(d) => dataset(d),
        TrainError::EmptyDataset => ExitClass::DataFormat,
        TrainError::Model(m) => model(m),
        TrainError::Checkpoint(_) => ExitClass::Checkpoint,
        TrainError::Metric(m) => metric(m),
        TrainError::Diverged { .. } => ExitClass::Divergence,
        TrainError::Io { .. } => ExitClass::Io,
    }
}

/// First classifiable error in the chain decides.
pub fn classify(err: &anyhow::Error) -> ExitClass {
    for cause in err.chain() {
        if let Some(f) = cause.downcast_ref::<Failure>() {
            return f.class;
        }
        if let Some(e) = cause.downcast_ref::<TrainError>() {
            return train(e);
        }
        if let Some(e) = cause.downcast_ref::<ConfigError>() {
            return config(e);
        }
        if cause.downcast_ref::<CheckpointError>().is_some() {
            return ExitClass::Checkpoint;
        }
        if let Some(e) = cause.downcast_ref::<DatasetError>() {
            return dataset(e);
        }
        if let Some(e) = cause.downcast_ref::<MetricError>() {
            return metric(e);
        }
        if let Some(e) = cause.downcast_ref::<ModelError>() {
            return model(e);
        }
        if let Some(e) = cause.downcast_ref::<SimError>() {
            return sim(e);
        }
        if cause.downcast_ref::<LossError>().is_some() {
            return ExitClass::InvalidParams;
        }
        if cause.downcast_ref::<serde_json::Error>().is_some() {
            return ExitClass::DataFormat;
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return ExitClass::Io;
        }
    }
    ExitClass::Internal
}

#[cfg(test)]
mod tests {
    use super::*;
    use anyhow::Context;

    #[test]
    fn codes_are_distinct_and_dense() {
        use ExitClass::*;
        let all = [
            Internal,
            Usage,
            InvalidParams,
            Io,
            DataFormat,
            Checkpoint,
            Divergence,
            Device,
        ];
        let codes: Vec<u8> = all.iter().map(|c| c.code()).collect();
        assert_eq!(codes, (1..=8).collect::<Vec<_>>());
    }

    #[test]
    fn classification_sees_through_context() {
        let e = anyhow::Error::from(SimError::NoVessels).context("simulating");
        assert_eq!(classify(&e), ExitClass::InvalidParams);

        let e: anyhow::Result<()> = Err(CheckpointError::Missing("x".into())).context("loading");
        assert_eq!(classify(&e.unwrap_err()), ExitClass::Checkpoint);

        let io = std::io::Error::new(std::io::ErrorKind::PermissionDenied, "no");
        assert_eq!(classify(&anyhow::Error::from(io)), ExitClass::Io);
        assert_eq!(classify(&anyhow::anyhow!("?")), ExitClass::Internal);
    }

    #[test]
    fn nested_core_errors_keep_their_class() {
        let e = TrainError::Dataset(DatasetError::MissingDirectory("d".into()));
        assert_eq!(classify(&e.into()), ExitClass::Io);
        let e = TrainError::Metric(MetricError::Model(ModelError::InvalidConfig("c".into())));
        assert_eq!(classify(&e.into()), ExitClass::InvalidParams);
        let e = TrainError::Diverged {
            epoch: 1,
            step: 2,
            what: "loss",
            breakdown: Box::default(),
        };
        assert_eq!(classify(&e.into()), ExitClass::Divergence);
    }
}
