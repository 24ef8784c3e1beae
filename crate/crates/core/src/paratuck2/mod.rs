//! PARATUCK2 model, non-negative multiplicative fitting and the ALS baseline.

mod als;
mod model;
mod nonneg;

pub use als::{fit_als_from, fit_als_unconstrained};
pub(crate) use model::{core_of, row_of};
pub use model::{init_model, FitConfig, FitReport, ModelDims, Paratuck2Model};
pub use nonneg::{fit_nonnegative, fit_nonnegative_from, fit_nonnegative_with};
