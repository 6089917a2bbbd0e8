//! Closed-form SRG and DNC solutions of the DUFM, their loss curves in the
//! free scale `q`, the lemmas they rest on, and the SRG-vs-DNC comparison.

mod alpha;
mod builders;
mod compare;
mod curves;
mod lemmas;

pub use alpha::*;
pub use builders::*;
pub use compare::*;
pub use curves::*;
pub use lemmas::*;
