//! Shipped protocol bindings.

pub mod common;
pub mod fast_generic;
pub mod fast_visible;
pub mod naive;
pub mod slow;
pub mod timestamp;
