pub mod error;
pub mod fem;
pub mod filter;
pub mod material;
pub mod mesh;
pub mod sparse;
pub mod eigen;
pub mod spectrum;
pub mod optimize;
pub mod verify;
pub mod config;
pub mod output;
pub mod commands;
