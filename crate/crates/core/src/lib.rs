pub mod config;
pub mod court;
pub mod dataset;
pub mod decoder;
pub mod error;
pub mod heatmap;
pub mod imu;
pub mod pipeline;
pub mod pose;
pub mod rally;
pub mod types;
