//! Riemannian Hamiltonian Monte Carlo on polytopes under a hybrid Lewis-weight
//! barrier, with Gaussian-cooling volume estimation and a numerical
//! verification harness for the barrier's inequalities.
//!
//! The geometric core ([`polytope`], [`lewis`], [`barrier`], [`dynamics`]) is
//! generic over [`Real`]; the sampler, cooling and verification layers run in
//! `f64`.

pub mod barrier;
pub mod cooling;
pub mod dynamics;
pub mod error;
pub mod fd;
pub mod lewis;
pub mod linalg;
pub mod polytope;
pub mod sampler;
pub mod scalar;
pub mod verify;

pub use barrier::{BarrierParams, MetricState, TraceMode};
pub use cooling::{estimate_volume, CoolingConfig, CoolingTrace};
pub use error::{Error, Result};
pub use lewis::{LewisOptions, LewisState};
pub use polytope::{InteriorPoint, Polytope, PolytopeFile};
pub use sampler::{Chain, ChainConfig};
pub use scalar::Real;
pub use verify::{CheckReport, Corpus, SuiteOptions};

pub type Polytope64 = Polytope<f64>;
pub type Polytope32 = Polytope<f32>;
pub type BarrierParams64 = BarrierParams<f64>;
pub type BarrierParams32 = BarrierParams<f32>;
pub type MetricState64 = MetricState<f64>;
pub type MetricState32 = MetricState<f32>;
pub type LewisState64 = LewisState<f64>;
pub type LewisState32 = LewisState<f32>;
