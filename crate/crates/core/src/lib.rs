//! Simulation of a wearable, hand-grounded 2-DoF kinesthetic device and the
//! stiffness-discrimination psychophysics run on it.
//!
//! The pipeline goes from tendon kinematics ([`kinematics`]) through the force
//! rendering loop ([`control`]) and virtual surface contact ([`haptic_env`]) to
//! two-alternative forced-choice sessions with simulated observers
//! ([`experiment`]) and psychometric fitting ([`psychometrics`]).

pub mod control;
pub mod experiment;
pub mod haptic_env;
pub mod kinematics;
pub mod psychometrics;
mod validate;

pub use validate::ValidationError;
