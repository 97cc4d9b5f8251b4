pub mod cases;
pub mod certifier;
pub mod cli;
pub mod conic;
pub mod graph;
pub mod netmodel;
pub mod relaxation;
pub mod solver;
