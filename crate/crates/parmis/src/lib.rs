//! Multi-objective policy search for heterogeneous SoC resource management.
//!
//! The toolkit finds Pareto-frontier DRM (dynamic resource management)
//! policies for a simulated big.LITTLE platform. Its core strategy selects
//! each candidate policy by maximizing the information gained about the
//! optimal Pareto front, using one Gaussian-process surrogate per objective
//! and Pareto-front samples drawn from posterior functions. Random search,
//! linear-scalarization BO, direct NSGA-II, and the classic frequency
//! governors serve as baselines, with Pareto hypervolume as the quality
//! metric throughout.

pub mod acquisition;
pub mod error;
pub mod gp;
pub mod nsga2;
pub mod optimizer;
pub mod pareto;
pub mod policy;
pub mod rff;
pub mod socsim;
pub mod workloads;

pub use error::{Error, Result};
