//! Polygon and binary-mask primitives: areas, rectangle clipping,
//! center-rule rasterization, COCO-style run lengths, mask IoU and NMS.

mod mask;
mod nms;
mod polygon;
mod rle;

use thiserror::Error;

pub use mask::{mask_iou, rasterize_polygon, rasterize_polygons, rasterize_rings, BinaryMask, PixelBox};
pub use nms::{nms, nms_indices, overlap, NmsParams, OverlapMetric, ScoredInstance};
pub use polygon::{clip_polygon_to_rect, ring_signed_area, Coord, Polygon, Rect};
pub use rle::{rle_decode, rle_encode, RunLengthCounts};


#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("invalid rectangle [{min_x}, {max_x}] x [{min_y}, {max_y}]")]
    InvalidRect {
        min_x: f64,
        min_y: f64,
        max_x: f64,
        max_y: f64,
    },
    #[error("cannot rasterize into a {width}x{height} window")]
    EmptyWindow { width: u32, height: u32 },
    #[error("mask dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("IoU is undefined for two empty masks")]
    EmptyUnion,
    #[error("RLE codec error: {0}")]
    Codec(String),
    #[error("invalid instance: {0}")]
    InvalidInstance(String),
    #[error("{name} = {value} is outside [0, 1]")]
    InvalidThreshold { name: &'static str, value: f64 },
}

/// Area of a valid polygon (exterior minus holes).
pub fn polygon_area(p: &Polygon) -> f64 {
    p.area()
}
