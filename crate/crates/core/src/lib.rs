pub mod assembly;
pub mod cli;
pub mod error;
pub mod fespace;
pub mod geometry;
pub mod mesh;
pub mod solver;
pub mod sparse;
pub mod verification;
