//! Geometry of supports.
//!
//! Supports `G(x,z)` are finite unions of axis-aligned boxes. "Open" is
//! operationalized through interiors: two boxes overlap only when their
//! interiors intersect, so boxes that merely share a face are not connected.
//! For finite unions of boxes connectedness is decided exactly on the box
//! overlap graph, and the cross-control pasting condition (every split of
//! the admissible controls into two nonempty groups has overlapping
//! `M(z)` supports) is, for a finite control set, the same statement as
//! connectivity of the control overlap graph built by [`mz_overlap_graph`].

mod audit;
mod boxes;
mod graph;

pub use audit::{
    assumption_audit, AuditOptions, AuditReport, ConnectednessCheck, InjectivityCheck,
    OverlapCheck, SeedCheck,
};
pub use boxes::{box_union_intersect, translate, AaBox, BoxUnion};
pub use graph::{
    a_overlap_graph, a_support, a_support_z, is_connected, mz_overlap_graph, Connectivity, HValues, OverlapEdge,
    OverlapGraph,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TopologyError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("box has no volume in coordinate {coordinate}: [{lo}, {hi}]")]
    DegenerateBox { coordinate: usize, lo: f64, hi: f64 },
    #[error("h({x}) is not available from the chosen source")]
    Unavailable { x: crate::model::XId },
}
