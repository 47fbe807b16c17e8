pub mod channel;
pub mod sbl;
pub mod error;
pub mod linalg;
pub mod pulse;
pub mod scalar;
pub mod sensing;

pub use error::{Error, Result};
pub use scalar::RealScalar;

pub type Cplx<T> = num_complex::Complex<T>;
