//! Non-negative PARATUCK2 decomposition of temporal interaction tensors,
//! LSTM forecasting of the latent time profiles, and reconstruction of
//! future interaction slices.

pub mod error;
pub mod ingest;
pub mod io;
pub mod lstm;
pub mod metrics;
pub mod paratuck2;
pub mod pipeline;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use paratuck2::{FitConfig, FitReport, Paratuck2Model};
pub use tensor::{Matrix, Tensor3};
