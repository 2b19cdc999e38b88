pub mod cascade;
pub mod dcflow;
pub mod experiment;
pub mod gbt;
pub mod gnn;
pub mod grid;
pub mod influence;
pub mod neural;
pub mod pipeline;
