//! Stationary mean field games with singular controls on one-dimensional
//! diffusions: equilibrium solver, stationary laws and a Monte Carlo engine
//! for the finite-player game.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod closed_form;
pub mod diffusion;
pub mod equilibrium;
pub mod error;
pub mod fundamental;
pub mod profit;
pub mod quadrature;
pub mod rng;
pub mod roots;
pub mod simulator;
pub mod stationary;

pub use closed_form::CaseStudyParams;
pub use diffusion::{DiffusionKind, DiffusionModel, TabulatedCoefficients, ValidationReport};
pub use equilibrium::{EquilibriumSolution, EquilibriumSolver, Mode, SolverConfig, ValueFunction};
pub use error::{MfgError, Result};
pub use fundamental::{Branch, FundamentalSolution, Method, MethodChoice, Operator};
pub use profit::{Profit, ProfitModel};
pub use simulator::{Claim, Estimate, PayoffKind, ReflectionScheme, SimConfig};
pub use stationary::TruncatedSpeedLaw;
