use thiserror::Error;

/// Errors raised by the simulation engine.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("non-finite value in solver state at t = {t} ms")]
    NonFinite { t: f64 },

    #[error("step size underflow at t = {t} ms (dt = {dt} ms)")]
    StepSizeUnderflow { t: f64, dt: f64 },

    #[error("template construction failed: {0}")]
    TemplateConstruction(String),

    #[error("evaluation outside iteration interval: t = {t} ms not in [{start}, {end}]")]
    OutsideInterval { t: f64, start: f64, end: f64 },

    #[error("waveforms cover different intervals")]
    IntervalMismatch,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("neuron {neuron} failed at t = {t} ms: {source}")]
    Neuron {
        neuron: usize,
        t: f64,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
