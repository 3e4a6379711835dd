//! Room classification on floor-plan graphs.
//!
//! Vector floor plans become undirected room-adjacency graphs with six
//! geometric node features; five node classifiers (MLP, GCN, GAT, GraphSAGE
//! and TAGCN) share one architecture and are trained with Adam on a
//! self-contained reverse-mode autodiff tape.

pub mod autodiff;
pub mod checkpoint;
pub mod cli;
pub mod embed;
pub mod error;
pub mod floorplan;
pub mod graph;
pub mod metrics;
pub mod models;
pub mod synth;
pub mod train;
pub mod tsne;

pub use error::{Error, Result};
