pub mod anchoring;
pub mod bench;
pub mod cli;
pub mod config;
pub mod evaluation;
pub mod face_model;
pub mod failure;
pub mod geometry;
pub mod netproto;
pub mod pipeline;
pub mod pose_fit;
pub mod sim;
pub mod temporal;
