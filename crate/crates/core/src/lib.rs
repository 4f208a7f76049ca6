//! Waveform-relaxation simulation of spiking neuron networks coupled by
//! delayed spike events and instantaneous gap junctions.
//!
//! Every numeric type is generic over [`Scalar`] (`f32` or `f64`); the `*64`
//! aliases below fix the scalar to `f64`, which is what the benchmark harness
//! uses.

pub mod error;
pub mod model;
pub mod rk;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub mod network;
pub mod waveform;
pub mod wfr;

pub type NeuronParams64 = model::NeuronParams<f64>;
pub type NeuronState64 = model::NeuronState<f64>;
pub type Network64 = network::Network<f64>;
pub type Recording64 = network::Recording<f64>;
pub type SimulationConfig64 = network::SimulationConfig<f64>;
pub type Waveform64 = waveform::Waveform<f64>;
pub type WfrConfig64 = wfr::WfrConfig<f64>;
pub type WfrEngine64<'n> = wfr::WfrEngine<'n, f64>;
