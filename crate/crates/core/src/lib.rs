//! Dataset preparation, point prompts, mask NMS and instance-segmentation
//! scoring for tree-crown detection in drone orthomosaics.

pub mod chart;
pub mod config;
pub mod dataset;
pub mod evaluation;
pub mod geometry;
pub mod prompting;
pub mod raster;
