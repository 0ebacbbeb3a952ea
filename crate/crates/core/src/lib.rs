pub mod backtest;
pub mod copula;
pub mod diagnostics;
pub mod error;
pub mod estimate;
pub mod margins;
pub mod marketdata;
pub mod optim;
pub mod quad;
pub mod riskcast;
pub mod scalar;
pub mod special;
pub mod udist;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Copula parameters in double precision.
pub type Copula = copula::CopulaParams<f64>;
pub type SkewT = udist::SkewT<f64>;
pub type SkewTParams = udist::SkewTParams<f64>;
pub type StudentT = udist::StudentT<f64>;
pub type StdStudentT = udist::StdStudentT<f64>;

pub use copula::{Family, GasParams};
pub use estimate::{CopulaFit, CopulaSpec, JointFit, MarginsMode};
pub use margins::{MarginFit, MarginSpec};
pub use marketdata::DailyPanel;
