//! Reverse-mode differentiation over recorded tensor primitives.
//!
//! A [`Tape`] records each primitive as it is evaluated. Leaves are either
//! constants or parameters bound by name to a [`ParamStore`];
//! [`backpropagate`] walks the tape backwards from a scalar loss and adds
//! each parameter's gradient into its slot. [`grad_check`] validates the
//! backward rules against central differences.

mod backward;
mod gradcheck;
mod params;
mod tape;

pub use backward::backpropagate;
pub use gradcheck::grad_check;
pub use params::ParamStore;
pub use tape::{NodeId, Tape};

pub(crate) use tape::{bce_with_logits_value, l1_value};
