//! Pomeau-Manneville quasistatic dynamical systems.
//!
//! The deterministic kernels (maps, parameter schedules, Ulam operators and
//! Green-Kubo variances) are generic over [`Real`]; the Monte Carlo, diffusion
//! and verification layers run in `f64`.

// `!(x > 0.0)` style guards are meant to reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diffusion;
pub mod error;
pub mod green_kubo;
pub mod map;
pub mod mc;
pub mod scalar;
pub mod schedule;
pub mod stats;
pub mod ulam;
pub mod verify;

pub use error::{Error, Result};
pub use map::{
    apply_map, inverse_branches, iterate_sequential, map_derivative, InverseBranches, PmParameter, Trajectory,
};
pub use scalar::{ordered_sum, Real};
pub use schedule::{curve_eval, CurveKind, ParameterCurve, ParameterRow, Regime};
pub use ulam::{build_ulam, cone_check, rho, srb_density, ConeCheckReport, GridDensity, UlamOperator};

pub type Map = PmParameter<f64>;
pub type Curve = ParameterCurve<f64>;
pub type Row = ParameterRow<f64>;
pub type Density = GridDensity<f64>;
pub type Ulam = UlamOperator<f64>;
pub type Map32 = PmParameter<f32>;
pub type Density32 = GridDensity<f32>;
