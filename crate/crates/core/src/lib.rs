//! Numerical engine for Lagrangian mechanics in time-dependent coordinates.
//!
//! The crate is organised bottom-up:
//!
//! * [`dualnum`]: hyperdual scalars carrying exact first and mixed second
//!   directional derivatives through arbitrary compositions.
//! * [`exprlang`]: the small smooth expression language used to author
//!   Lagrangians, coordinate maps, curves and displacement fields.
//! * [`frames`]: time-dependent changes of configuration coordinates
//!   (moving reference frames) and velocity/trajectory transport.
//! * [`mechanics`]: Euler-Lagrange residuals, variational derivatives,
//!   action integrals and mass matrices for explicit Lagrangians.
//! * [`constraints`]: holonomic, possibly moving, constraint surfaces given
//!   parametrically, with reduction to intrinsic coordinates and d'Alembert
//!   checks against the ambient dynamics.
//! * [`solvers`]: initial-value integration of the Euler-Lagrange flow and
//!   a discrete least-action boundary solver.
//! * [`spacetime`]: atlases of reference frames with shifted clocks, frame
//!   Lagrangians and invariance reports.
//! * [`scenario`] / [`verify`]: the file format and check registry behind
//!   the command-line front end.
//!
//! Everything downstream of [`exprlang`] evaluates derivatives with the AD
//! scalars from [`dualnum`]; no derivative in the engine is hand-coded or
//! approximated by differencing.

pub mod constraints;
pub mod dualnum;
pub mod error;
pub mod exprlang;
pub mod frames;
pub mod linalg;
pub mod map;
pub mod mechanics;
pub mod scenario;
pub mod solvers;
pub mod spacetime;
pub mod verify;

pub use error::EngineError;
