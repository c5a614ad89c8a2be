//! A near-canonical system built over a slowly growing permutation, where
//! no orthonormal sequence with the same prefix spans has spanning indices
//! of controlled growth.

pub mod permutation;
pub mod rough;
pub mod system;
pub mod unb;

pub use permutation::*;
pub use rough::*;
pub use system::*;
pub use unb::*;
