//! Classical reference beamformers.

mod conjugate;
mod wmmse;

pub use conjugate::{cb_comm, cb_sense};
pub use wmmse::{wmmse, WmmseOptions, WmmseTrace};
