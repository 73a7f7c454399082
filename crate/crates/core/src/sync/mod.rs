//! Barrier state machine and the cluster legality pass.

mod legality;
mod mbarrier;

pub use legality::legalize_cluster;
pub use mbarrier::{MbarrierError, MbarrierState, Transition};
