//! Dynamically rewired multi-hop message passing on graphs, with delay.

pub mod graph;
pub mod models;
pub mod ring;
pub mod schedule;
pub mod sensitivity;
pub mod tensor;
pub mod util;
