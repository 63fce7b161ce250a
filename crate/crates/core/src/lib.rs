pub mod error;
pub mod factor;
pub mod group_lasso;
pub mod linalg;
pub mod pipeline;
pub mod rng;
pub mod sim;
pub mod smoother;
pub mod stage1;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{HiveError, Result};
