//! Georeferenced raster grids and the native on-disk container.
//!
//! A raster is stored as two files: `<name>.rasterhdr.json`, a JSON header
//! with the grid metadata, and `<name>.raster`, the raw little-endian
//! payload in band-sequential row-major order.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::geometry::Coord;

pub const HEADER_SUFFIX: &str = ".rasterhdr.json";
pub const PAYLOAD_SUFFIX: &str = ".raster";

/// Nodata sentinel used for DSM pixels when the source declares none.
pub const DEFAULT_NODATA: f64 = -9999.0;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("raster format error in `{field}`: {message}")]
    Format { field: String, message: String },
    #[error("invalid raster: {0}")]
    Invalid(String),
    #[error("CRS mismatch: `{0}` vs `{1}`")]
    CrsMismatch(String, String),
    #[error("window {window:?} exceeds {width}x{height} raster")]
    WindowOutOfBounds {
        window: PixelWindow,
        width: u32,
        height: u32,
    },
    #[error("degenerate sample: {0}")]
    Degenerate(String),
}

fn format_err(field: &str, message: impl Into<String>) -> RasterError {
    RasterError::Format {
        field: field.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    Uint8,
    Float32,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::Uint8 => 1,
            DType::Float32 => 4,
        }
    }
}

/// Affine pixel-to-CRS map in GDAL order:
/// `x = origin_x + col * pixel_w + row * row_rot`,
/// `y = origin_y + col * col_rot + row * pixel_h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 6]", into = "[f64; 6]")]
pub struct GeoTransform {
    pub origin_x: f64,
    pub pixel_w: f64,
    pub row_rot: f64,
    pub origin_y: f64,
    pub col_rot: f64,
    pub pixel_h: f64,
}

impl From<[f64; 6]> for GeoTransform {
    fn from(g: [f64; 6]) -> Self {
        GeoTransform {
            origin_x: g[0],
            pixel_w: g[1],
            row_rot: g[2],
            origin_y: g[3],
            col_rot: g[4],
            pixel_h: g[5],
        }
    }
}

impl From<GeoTransform> for [f64; 6] {
    fn from(g: GeoTransform) -> Self {
        [g.origin_x, g.pixel_w, g.row_rot, g.origin_y, g.col_rot, g.pixel_h]
    }
}

impl GeoTransform {
    /// North-up transform with square pixels of side `pixel_size`.
    pub fn north_up(origin_x: f64, origin_y: f64, pixel_size: f64) -> Self {
        GeoTransform {
            origin_x,
            pixel_w: pixel_size,
            row_rot: 0.0,
            origin_y,
            col_rot: 0.0,
            pixel_h: -pixel_size,
        }
    }

    fn det(&self) -> f64 {
        self.pixel_w * self.pixel_h - self.row_rot * self.col_rot
    }

    pub fn is_rotated(&self) -> bool {
        self.row_rot != 0.0 || self.col_rot != 0.0
    }

    pub fn validate(&self) -> Result<(), RasterError> {
        let arr: [f64; 6] = (*self).into();
        if arr.iter().any(|v| !v.is_finite()) {
            return Err(format_err("geotransform", "non-finite coefficient"));
        }
        if !self.is_rotated() && !(self.pixel_w > 0.0 && self.pixel_h < 0.0) {
            return Err(format_err(
                "geotransform",
                "expected pixel_w > 0 and pixel_h < 0 for a north-up grid",
            ));
        }
        if self.det() == 0.0 {
            return Err(format_err("geotransform", "singular transform"));
        }
        Ok(())
    }

    /// Continuous pixel coordinates (pixel `(c, r)` spans `[c, c+1) x [r, r+1)`)
    /// to CRS coordinates.
    pub fn pixel_to_geo(&self, [col, row]: Coord) -> Coord {
        [
            self.origin_x + col * self.pixel_w + row * self.row_rot,
            self.origin_y + col * self.col_rot + row * self.pixel_h,
        ]
    }

    pub fn geo_to_pixel(&self, [x, y]: Coord) -> Coord {
        let dx = x - self.origin_x;
        let dy = y - self.origin_y;
        let det = self.det();
        [
            (dx * self.pixel_h - dy * self.row_rot) / det,
            (dy * self.pixel_w - dx * self.col_rot) / det,
        ]
    }

    /// Transform of the sub-grid whose top-left pixel is `(x0, y0)`.
    pub fn shifted(&self, x0: u32, y0: u32) -> GeoTransform {
        let [ox, oy] = self.pixel_to_geo([f64::from(x0), f64::from(y0)]);
        GeoTransform {
            origin_x: ox,
            origin_y: oy,
            ..*self
        }
    }
}

/// Integer pixel window `[x0, x0+width) x [y0, y0+height)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PixelWindow {
    pub x0: u32,
    pub y0: u32,
    pub width: u32,
    pub height: u32,
}

impl PixelWindow {
    pub fn new(x0: u32, y0: u32, width: u32, height: u32) -> Self {
        PixelWindow {
            x0,
            y0,
            width,
            height,
        }
    }

    pub fn area(&self) -> u64 {
        u64::from(self.width) * u64::from(self.height)
    }

    pub fn fits_in(&self, width: u32, height: u32) -> bool {
        self.width > 0
            && self.height > 0
            && u64::from(self.x0) + u64::from(self.width) <= u64::from(width)
            && u64::from(self.y0) + u64::from(self.height) <= u64::from(height)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RasterData {
    U8(Vec<u8>),
    F32(Vec<f32>),
}

impl RasterData {
    pub fn dtype(&self) -> DType {
        match self {
            RasterData::U8(_) => DType::Uint8,
            RasterData::F32(_) => DType::Float32,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            RasterData::U8(v) => v.len(),
            RasterData::F32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_le_bytes(&self) -> Vec<u8> {
        match self {
            RasterData::U8(v) => v.clone(),
            RasterData::F32(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
        }
    }

    fn from_le_bytes(dtype: DType, bytes: &[u8]) -> RasterData {
        match dtype {
            DType::Uint8 => RasterData::U8(bytes.to_vec()),
            DType::Float32 => RasterData::F32(
                bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect(),
            ),
        }
    }
}

/// A georeferenced pixel grid: 3-band `uint8` RGB or 1-band `float32` DSM.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterGrid {
    width: u32,
    height: u32,
    bands: u32,
    geotransform: GeoTransform,
    crs: String,
    nodata: Option<f64>,
    data: RasterData,
}

impl RasterGrid {
    pub fn new(
        width: u32,
        height: u32,
        bands: u32,
        geotransform: GeoTransform,
        crs: impl Into<String>,
        nodata: Option<f64>,
        data: RasterData,
    ) -> Result<Self, RasterError> {
        let grid = RasterGrid {
            width,
            height,
            bands,
            geotransform,
            crs: crs.into(),
            nodata,
            data,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn rgb(
        width: u32,
        height: u32,
        geotransform: GeoTransform,
        crs: impl Into<String>,
        data: Vec<u8>,
    ) -> Result<Self, RasterError> {
        Self::new(width, height, 3, geotransform, crs, None, RasterData::U8(data))
    }

    pub fn dsm(
        width: u32,
        height: u32,
        geotransform: GeoTransform,
        crs: impl Into<String>,
        nodata: Option<f64>,
        data: Vec<f32>,
    ) -> Result<Self, RasterError> {
        Self::new(width, height, 1, geotransform, crs, nodata, RasterData::F32(data))
    }

    fn validate(&self) -> Result<(), RasterError> {
        if self.width == 0 || self.height == 0 {
            return Err(format_err("width", "raster must be non-empty"));
        }
        match (self.bands, self.data.dtype()) {
            (3, DType::Uint8) | (1, DType::Float32) => {}
            (b, d) => {
                return Err(format_err(
                    "dtype",
                    format!("{b}-band {d:?} rasters are not supported (RGB is 3-band uint8, DSM 1-band float32)"),
                ))
            }
        }
        let expected = self.width as usize * self.height as usize * self.bands as usize;
        if self.data.len() != expected {
            return Err(format_err(
                "payload",
                format!("{} values, expected {expected}", self.data.len()),
            ));
        }
        if let Some(nd) = self.nodata {
            if !nd.is_finite() {
                return Err(format_err("nodata", "must be finite"));
            }
        }
        self.geotransform.validate()
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn bands(&self) -> u32 {
        self.bands
    }

    pub fn dtype(&self) -> DType {
        self.data.dtype()
    }

    pub fn geotransform(&self) -> &GeoTransform {
        &self.geotransform
    }

    pub fn crs(&self) -> &str {
        &self.crs
    }

    pub fn nodata(&self) -> Option<f64> {
        self.nodata
    }

    pub fn data(&self) -> &RasterData {
        &self.data
    }

    pub fn into_data(self) -> RasterData {
        self.data
    }

    fn plane(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// Single-band float values, or an error for RGB grids.
    pub fn values(&self) -> Result<&[f32], RasterError> {
        match &self.data {
            RasterData::F32(v) => Ok(v),
            RasterData::U8(_) => Err(RasterError::Invalid("expected a float32 DSM".into())),
        }
    }

    pub fn get_f32(&self, x: u32, y: u32) -> Option<f32> {
        match &self.data {
            RasterData::F32(v) => Some(v[y as usize * self.width as usize + x as usize]),
            RasterData::U8(_) => None,
        }
    }

    pub fn get_rgb(&self, x: u32, y: u32) -> Option<[u8; 3]> {
        match &self.data {
            RasterData::U8(v) => {
                let i = y as usize * self.width as usize + x as usize;
                let p = self.plane();
                Some([v[i], v[p + i], v[2 * p + i]])
            }
            RasterData::F32(_) => None,
        }
    }

    /// False for NaN or the nodata sentinel.
    pub fn is_valid_value(&self, v: f32) -> bool {
        !v.is_nan() && self.nodata.is_none_or(|nd| f64::from(v) != nd)
    }

    /// Same grid with `data` swapped in; `data` must have the same shape.
    pub fn with_data(&self, data: RasterData, nodata: Option<f64>) -> Result<Self, RasterError> {
        Self::new(
            self.width,
            self.height,
            self.bands,
            self.geotransform,
            self.crs.clone(),
            nodata,
            data,
        )
    }

    /// Copies out `window` with its geotransform shifted accordingly.
    pub fn crop(&self, window: PixelWindow) -> Result<RasterGrid, RasterError> {
        self.check_window(window)?;
        let (w, h) = (window.width as usize, window.height as usize);
        let src_w = self.width as usize;
        let plane = self.plane();
        let mut idx = Vec::with_capacity(w * h * self.bands as usize);
        for b in 0..self.bands as usize {
            for r in 0..h {
                let start = b * plane + (window.y0 as usize + r) * src_w + window.x0 as usize;
                idx.push(start..start + w);
            }
        }
        let data = match &self.data {
            RasterData::U8(v) => RasterData::U8(idx.into_iter().flat_map(|r| v[r].iter().copied()).collect()),
            RasterData::F32(v) => RasterData::F32(idx.into_iter().flat_map(|r| v[r].iter().copied()).collect()),
        };
        RasterGrid::new(
            window.width,
            window.height,
            self.bands,
            self.geotransform.shifted(window.x0, window.y0),
            self.crs.clone(),
            self.nodata,
            data,
        )
    }

    pub fn check_window(&self, window: PixelWindow) -> Result<(), RasterError> {
        if window.fits_in(self.width, self.height) {
            Ok(())
        } else {
            Err(RasterError::WindowOutOfBounds {
                window,
                width: self.width,
                height: self.height,
            })
        }
    }

    /// Hex SHA-256 of the little-endian payload.
    pub fn checksum(&self) -> String {
        hex::encode(Sha256::digest(self.data.to_le_bytes()))
    }

    pub fn header(&self, payload: impl Into<String>) -> RasterHeader {
        RasterHeader {
            width: self.width,
            height: self.height,
            bands: self.bands,
            dtype: self.dtype(),
            geotransform: self.geotransform,
            crs: self.crs.clone(),
            nodata: self.nodata,
            byte_order: ByteOrder::Little,
            payload: payload.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ByteOrder {
    Little,
}

/// JSON sidecar describing a raster payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RasterHeader {
    pub width: u32,
    pub height: u32,
    pub bands: u32,
    pub dtype: DType,
    pub geotransform: GeoTransform,
    pub crs: String,
    pub nodata: Option<f64>,
    pub byte_order: ByteOrder,
    /// Payload file name, relative to the header's directory.
    pub payload: String,
}

const HEADER_FIELDS: [&str; 9] = [
    "width",
    "height",
    "bands",
    "dtype",
    "geotransform",
    "crs",
    "nodata",
    "byte_order",
    "payload",
];

impl RasterHeader {
    /// Parses a header, naming the offending field on failure.
    pub fn from_json(text: &str) -> Result<Self, RasterError> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| format_err("<header>", e.to_string()))?;
        let obj = value
            .as_object()
            .ok_or_else(|| format_err("<header>", "expected a JSON object"))?;
        if let Some(k) = obj.keys().find(|k| !HEADER_FIELDS.contains(&k.as_str())) {
            return Err(format_err(k, "unknown field"));
        }
        fn field<T: DeserializeOwned>(
            obj: &serde_json::Map<String, serde_json::Value>,
            name: &str,
        ) -> Result<T, RasterError> {
            let v = obj.get(name).cloned().unwrap_or(serde_json::Value::Null);
            serde_json::from_value(v).map_err(|e| format_err(name, e.to_string()))
        }
        Ok(RasterHeader {
            width: field(obj, "width")?,
            height: field(obj, "height")?,
            bands: field(obj, "bands")?,
            dtype: field(obj, "dtype")?,
            geotransform: field(obj, "geotransform")?,
            crs: field(obj, "crs")?,
            nodata: field(obj, "nodata")?,
            byte_order: field(obj, "byte_order")?,
            payload: field(obj, "payload")?,
        })
    }

    pub fn payload_len(&self) -> u64 {
        u64::from(self.width) * u64::from(self.height) * u64::from(self.bands) * self.dtype.size() as u64
    }
}

/// Header and payload paths for a raster base path. The base may be given
/// bare (`dir/name`) or with either file suffix.
pub fn raster_paths(base: &Path) -> (PathBuf, PathBuf) {
    let s = base.to_string_lossy();
    let stem = s
        .strip_suffix(HEADER_SUFFIX)
        .or_else(|| s.strip_suffix(PAYLOAD_SUFFIX))
        .unwrap_or(&s);
    (
        PathBuf::from(format!("{stem}{HEADER_SUFFIX}")),
        PathBuf::from(format!("{stem}{PAYLOAD_SUFFIX}")),
    )
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RasterError + '_ {
    move |source| RasterError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn read_raster(base: &Path) -> Result<RasterGrid, RasterError> {
    let (header_path, _) = raster_paths(base);
    let text = fs::read_to_string(&header_path).map_err(io_err(&header_path))?;
    let header = RasterHeader::from_json(&text)?;
    let payload_path = header_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&header.payload);
    let bytes = fs::read(&payload_path).map_err(io_err(&payload_path))?;
    if bytes.len() as u64 != header.payload_len() {
        return Err(format_err(
            "payload",
            format!(
                "{} holds {} bytes, header declares {}x{}x{} {:?} = {} bytes",
                payload_path.display(),
                bytes.len(),
                header.width,
                header.height,
                header.bands,
                header.dtype,
                header.payload_len()
            ),
        ));
    }
    RasterGrid::new(
        header.width,
        header.height,
        header.bands,
        header.geotransform,
        header.crs,
        header.nodata,
        RasterData::from_le_bytes(header.dtype, &bytes),
    )
}

pub fn write_raster(grid: &RasterGrid, base: &Path) -> Result<(), RasterError> {
    let (header_path, payload_path) = raster_paths(base);
    if let Some(dir) = header_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let payload_name = payload_path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut text = serde_json::to_string_pretty(&grid.header(payload_name))
        .map_err(|e| format_err("<header>", e.to_string()))?;
    text.push('\n');
    fs::write(&header_path, text).map_err(io_err(&header_path))?;
    fs::write(&payload_path, grid.data.to_le_bytes()).map_err(io_err(&payload_path))?;
    Ok(())
}

/// Resamples `dsm` onto the pixel grid of `reference` with bilinear
/// interpolation between DSM pixel centers.
///
/// Reference pixels whose centers fall outside the DSM footprint, or whose
/// interpolation touches a nodata pixel with nonzero weight, become nodata.
/// Between the outermost pixel centers and the footprint edge the nearest
/// edge value is used.
pub fn align_dsm(dsm: &RasterGrid, reference: &RasterGrid) -> Result<RasterGrid, RasterError> {
    if dsm.crs != reference.crs {
        return Err(RasterError::CrsMismatch(dsm.crs.clone(), reference.crs.clone()));
    }
    let src = dsm.values()?;
    let nodata = dsm.nodata.unwrap_or(DEFAULT_NODATA);
    let (sw, sh) = (dsm.width as usize, dsm.height as usize);
    const SNAP: f64 = 1e-9;

    // Index of the lower interpolation node and the weight of the upper one.
    let axis = |u: f64, n: usize| -> Option<(usize, f64)> {
        if u < -0.5 - SNAP || u > n as f64 - 0.5 + SNAP {
            return None;
        }
        let u = u.clamp(0.0, (n - 1) as f64);
        let mut i = u.floor() as usize;
        let mut f = u - i as f64;
        if f > 1.0 - SNAP {
            i += 1;
            f = 0.0;
        } else if f < SNAP {
            f = 0.0;
        }
        Some((i.min(n - 1), f))
    };

    let mut out = Vec::with_capacity(reference.width as usize * reference.height as usize);
    for r in 0..reference.height {
        for c in 0..reference.width {
            let geo = reference
                .geotransform
                .pixel_to_geo([f64::from(c) + 0.5, f64::from(r) + 0.5]);
            let [u, v] = dsm.geotransform.geo_to_pixel(geo);
            let (Some((i, fx)), Some((j, fy))) = (axis(u - 0.5, sw), axis(v - 0.5, sh)) else {
                out.push(nodata as f32);
                continue;
            };
            let mut acc = 0.0f64;
            let mut valid = true;
            for (di, wx) in [(0usize, 1.0 - fx), (1, fx)] {
                for (dj, wy) in [(0usize, 1.0 - fy), (1, fy)] {
                    let w = wx * wy;
                    if w == 0.0 {
                        continue;
                    }
                    let val = src[(j + dj) * sw + i + di];
                    if !dsm.is_valid_value(val) {
                        valid = false;
                    }
                    acc += w * f64::from(val);
                }
            }
            out.push(if valid { acc as f32 } else { nodata as f32 });
        }
    }
    RasterGrid::dsm(
        reference.width,
        reference.height,
        reference.geotransform,
        reference.crs.clone(),
        Some(nodata),
        out,
    )
}

/// Fraction of pixels in `window` that are exactly `(0, 0, 0)`.
pub fn black_fraction(rgb: &RasterGrid, window: PixelWindow) -> Result<f64, RasterError> {
    let RasterData::U8(v) = &rgb.data else {
        return Err(RasterError::Invalid("black_fraction needs a 3-band uint8 raster".into()));
    };
    rgb.check_window(window)?;
    let plane = rgb.plane();
    let w = rgb.width as usize;
    let mut black = 0u64;
    for y in window.y0..window.y0 + window.height {
        let row = y as usize * w;
        for x in window.x0 as usize..(window.x0 + window.width) as usize {
            let i = row + x;
            if v[i] == 0 && v[plane + i] == 0 && v[2 * plane + i] == 0 {
                black += 1;
            }
        }
    }
    Ok(black as f64 / window.area() as f64)
}

/// Largest valid value of a DSM, if any.
pub fn max_valid(dsm: &RasterGrid) -> Result<Option<f32>, RasterError> {
    Ok(dsm
        .values()?
        .iter()
        .copied()
        .filter(|&v| dsm.is_valid_value(v))
        .max_by(f32::total_cmp))
}

/// Divides every valid pixel by the tile's maximum valid value.
pub fn normalize_dsm(dsm: &RasterGrid) -> Result<RasterGrid, RasterError> {
    let max = max_valid(dsm)?
        .ok_or_else(|| RasterError::Degenerate("DSM has no valid pixels".into()))?;
    normalize_dsm_by(dsm, max)
}

/// Divides every valid pixel by `max`; used for whole-orthomosaic scaling.
pub fn normalize_dsm_by(dsm: &RasterGrid, max: f32) -> Result<RasterGrid, RasterError> {
    if max.is_nan() || max <= 0.0 {
        return Err(RasterError::Degenerate(format!(
            "maximum elevation {max} is not positive"
        )));
    }
    let data = dsm
        .values()?
        .iter()
        .map(|&v| if dsm.is_valid_value(v) { v / max } else { v })
        .collect();
    dsm.with_data(RasterData::F32(data), dsm.nodata)
}
