//! Kinematic-level simulator and solver library for flexible active safety
//! motion (FASM) control of serial manipulators among moving obstacles.
//!
//! The library is organised bottom-up:
//!
//! * [`kinematics`] — DH-parameterised serial chains, frozen-Jacobian
//!   discrete prediction models, end-effector pose with quaternion rates.
//! * [`observer`] — generalized proportional-integral observer (GPIO) for
//!   obstacle motion, with a decay certificate from a discrete Lyapunov
//!   equation.
//! * [`cbf`] — safety margins and the flexible control-barrier safety
//!   criterion (CBFSC) with an optimisable decay rate.
//! * [`mpc`] — receding-horizon controller embedding the CBFSC, solved by a
//!   dense SQP tailored to the problem sizes that arise here.
//! * [`scenario`] — JSON configuration for chains and closed-loop scenarios.
//! * [`harness`] — closed-loop simulation, trajectory logging, metrics and
//!   run comparison.

pub mod cbf;
pub mod harness;
pub mod kinematics;
pub mod mpc;
pub mod observer;
pub mod scenario;
