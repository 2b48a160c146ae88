//! Simulation and learning core for string-type artificial-muscle robots.
//!
//! The crate is `no_std` with `alloc`. It carries everything that is pure
//! computation: the muscle thermo-mechanical model ([`muscle`]), the eye and
//! wrist plants ([`plant`]), the episodic environment ([`env`]), a small
//! recurrent function approximator with hand-written BPTT ([`approx`]), the
//! soft actor-critic learner ([`sac`]), the PID bootstrap and target-vector
//! augmentation ([`bar`]), the end-to-end training driver ([`trainer`]) and
//! the steady-state field test ([`eval`]).
//!
//! File formats, configuration and the command line live in the companion
//! `muscle-rl` crate.
#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod approx;
pub mod bar;
pub mod env;
mod error;
pub mod eval;
pub mod muscle;
pub mod plant;
pub mod randomize;
pub mod sac;
pub mod trainer;

pub use error::Error;

pub type Result<T, E = Error> = core::result::Result<T, E>;
