//! Moment relaxations and sum-of-squares certificates for generalized
//! moment problems and polynomial optimization over semialgebraic sets.

pub mod certify;
pub mod moments;
pub mod poly;
pub mod problem;
pub mod relax;
pub mod sdp;
