//! Demand-aware inter-satellite link topologies for LEO shells.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod constellation;
pub mod demand;
pub mod flat;
pub mod geometry;
pub mod routing;
pub mod simulator;
pub mod topology;
