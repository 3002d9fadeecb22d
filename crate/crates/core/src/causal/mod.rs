//! Constraint-based structure learning over labels, features and an
//! optional domain index.

mod ci;
mod graph;
mod pc;

pub use ci::{
    critical_value, fisher_z_statistic, fisher_z_test, partial_correlation, CiTest, CiTestResult,
    DSeparation, FisherZ,
};
pub use graph::{collapse_groups, markov_blanket, GraphExport, GroupDag, MixedGraph};
pub use pc::{
    cdnod_lite, orient_with_root, pc_skeleton, pc_skeleton_with, CdnodResult, DOMAIN_NODE,
    LABEL_NODE,
};
