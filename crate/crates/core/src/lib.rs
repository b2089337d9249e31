//! Membership-query learning over the domain `[b]^n = {0, .., b-1}^n`.
//!
//! Boolean targets map into `{-1, +1}` with `-1` meaning *true*. The crate
//! provides the concept classes (rectangles, unions of rectangles, majority
//! circuits), an exact discrete Fourier layer over `Z_b^n`, a query-efficient
//! heavy-coefficient search, a smooth-boosting spectral learner (`ghs`), an
//! adaptive grid-restriction learner (`grid`), and an experiment harness with
//! a CLI-friendly surface.
//!
//! All randomness flows through one seeded generator hierarchy (see
//! [`stream`]), so every run is reproducible byte-for-byte, including under
//! the `parallel` feature at any thread count.

pub mod concepts;
pub mod domain;
pub mod error;
pub mod exec;
pub mod fourier;
pub mod ghs;
pub mod grid;
pub mod harness;
pub mod sft;
pub mod stream;

pub use domain::Domain;
pub use error::{Error, Result};
