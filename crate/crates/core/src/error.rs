//! Crate-level error with the command-line exit-code classes.

use thiserror::Error;

use crate::controller::ControlError;
use crate::dataset::DatasetError;
use crate::graybox_model::ModelError;
use crate::mc_simulator::SimError;
use crate::noise_gen::NoiseError;
use crate::pulse_lib::PulseError;
use crate::spectroscopy::SpectroscopyError;
use crate::trainer::TrainError;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error(transparent)]
    Pulse(#[from] PulseError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Spectroscopy(#[from] SpectroscopyError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Format(String),
}

/// Exit-code classes of the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numerical,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Usage => 2,
            ErrorClass::Data => 3,
            ErrorClass::Numerical => 4,
        }
    }
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        use ErrorClass::*;
        match self {
            Error::Usage(_) => Usage,
            Error::Dataset(DatasetError::UnknownDataset(_)) => Usage,
            Error::Dataset(DatasetError::Sim(e)) | Error::Sim(e) => sim_class(e),
            Error::Dataset(_) | Error::Io { .. } | Error::Format(_) | Error::Pulse(_) => Data,
            Error::Model(e) => model_class(e),
            Error::Train(TrainError::NonFiniteLoss(_)) => Numerical,
            Error::Train(TrainError::Model(e)) => model_class(e),
            Error::Train(_) => Data,
            Error::Noise(_) => Data,
            Error::Control(ControlError::Model(e)) => model_class(e),
            Error::Control(_) => Usage,
            Error::Spectroscopy(SpectroscopyError::NonPositiveCoherence { .. }) => Numerical,
            Error::Spectroscopy(SpectroscopyError::Model(e)) => model_class(e),
            Error::Spectroscopy(SpectroscopyError::Sim(e)) => sim_class(e),
            Error::Spectroscopy(SpectroscopyError::OrderOutOfRange { .. } | SpectroscopyError::Empty) => Usage,
            Error::Spectroscopy(_) => Data,
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.class().exit_code()
    }
}

fn model_class(e: &ModelError) -> ErrorClass {
    match e {
        ModelError::MuOutOfRange(_) | ModelError::NonPhysicalState(_) | ModelError::Numerical(_) => ErrorClass::Numerical,
        ModelError::ShapeMismatch(_) | ModelError::Io(_) | ModelError::Format(_) => ErrorClass::Data,
    }
}

fn sim_class(e: &SimError) -> ErrorClass {
    match e {
        SimError::Linalg(_) => ErrorClass::Numerical,
        SimError::InvalidConfig(_) => ErrorClass::Usage,
        SimError::Noise(_) | SimError::BadWaveform(_) => ErrorClass::Data,
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
