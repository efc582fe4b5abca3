mod flat;
pub mod body_model;
pub mod clients;
pub mod dpo;
pub mod filtering;
pub mod keypoints;
pub mod mining;
pub mod pipeline;
pub mod render;
pub mod scoring;
pub mod seeds;
