use super::polygon::{ring_edges, Coord, Polygon};
use super::GeometryError;

/// Inclusive pixel bounds of the set pixels of a mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelBox {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl PixelBox {
    pub fn area(&self) -> u64 {
        u64::from(self.x1 - self.x0 + 1) * u64::from(self.y1 - self.y0 + 1)
    }

    pub fn iou(&self, other: &PixelBox) -> f64 {
        let ix0 = self.x0.max(other.x0);
        let iy0 = self.y0.max(other.y0);
        let ix1 = self.x1.min(other.x1);
        let iy1 = self.y1.min(other.y1);
        let inter = if ix0 > ix1 || iy0 > iy1 {
            0
        } else {
            u64::from(ix1 - ix0 + 1) * u64::from(iy1 - iy0 + 1)
        };
        inter as f64 / (self.area() + other.area() - inter) as f64
    }
}

/// Bit-per-pixel mask stored column-major (pixel `(x, y)` at bit `x * height + y`).
///
/// Immutable once built; the set-pixel count and bounding box are cached.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    words: Vec<u64>,
    area: u64,
    bbox: Option<PixelBox>,
}

pub(crate) struct MaskBuilder {
    width: u32,
    height: u32,
    words: Vec<u64>,
}

impl MaskBuilder {
    pub(crate) fn new(width: u32, height: u32) -> Self {
        let n = width as usize * height as usize;
        MaskBuilder {
            width,
            height,
            words: vec![0; n.div_ceil(64)],
        }
    }

    #[inline]
    pub(crate) fn set(&mut self, x: u32, y: u32) {
        let i = x as usize * self.height as usize + y as usize;
        self.words[i / 64] |= 1u64 << (i % 64);
    }

    /// Sets `len` consecutive bits in column-major order starting at `start`.
    pub(crate) fn set_run(&mut self, start: usize, len: usize) {
        let end = start + len;
        let mut i = start;
        while i < end {
            let bit = i % 64;
            let take = (64 - bit).min(end - i);
            let chunk = if take == 64 { u64::MAX } else { ((1u64 << take) - 1) << bit };
            self.words[i / 64] |= chunk;
            i += take;
        }
    }

    pub(crate) fn build(self) -> BinaryMask {
        let h = self.height as usize;
        let mut area = 0u64;
        let mut bbox: Option<PixelBox> = None;
        for (wi, &word) in self.words.iter().enumerate() {
            if word == 0 {
                continue;
            }
            area += u64::from(word.count_ones());
            let mut w = word;
            while w != 0 {
                let i = wi * 64 + w.trailing_zeros() as usize;
                w &= w - 1;
                let (x, y) = ((i / h) as u32, (i % h) as u32);
                bbox = Some(match bbox {
                    None => PixelBox { x0: x, y0: y, x1: x, y1: y },
                    Some(b) => PixelBox {
                        x0: b.x0.min(x),
                        y0: b.y0.min(y),
                        x1: b.x1.max(x),
                        y1: b.y1.max(y),
                    },
                });
            }
        }
        BinaryMask {
            width: self.width,
            height: self.height,
            words: self.words,
            area,
            bbox,
        }
    }
}

impl BinaryMask {
    pub fn zeros(width: u32, height: u32) -> Self {
        MaskBuilder::new(width, height).build()
    }

    pub fn from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> bool) -> Self {
        let mut b = MaskBuilder::new(width, height);
        for x in 0..width {
            for y in 0..height {
                if f(x, y) {
                    b.set(x, y);
                }
            }
        }
        b.build()
    }

    /// Builds from a row-major buffer of 0/1 (any nonzero is set).
    pub fn from_row_major(width: u32, height: u32, data: &[u8]) -> Result<Self, GeometryError> {
        let n = width as usize * height as usize;
        if data.len() != n {
            return Err(GeometryError::DimensionMismatch(format!(
                "buffer has {} values, expected {width}x{height}={n}",
                data.len()
            )));
        }
        Ok(Self::from_fn(width, height, |x, y| {
            data[y as usize * width as usize + x as usize] != 0
        }))
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn len(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// Number of set pixels.
    pub fn area(&self) -> u64 {
        self.area
    }

    pub fn is_empty(&self) -> bool {
        self.area == 0
    }

    pub fn bbox(&self) -> Option<PixelBox> {
        self.bbox
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bit(x as usize * self.height as usize + y as usize)
    }

    #[inline]
    pub(crate) fn bit(&self, i: usize) -> bool {
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    /// Pixels in column-major order as 0/1 bytes.
    pub fn to_column_major(&self) -> Vec<u8> {
        (0..self.len()).map(|i| self.bit(i) as u8).collect()
    }

    pub fn same_shape(&self, other: &BinaryMask) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Number of pixels set in both masks.
    pub fn intersection(&self, other: &BinaryMask) -> Result<u64, GeometryError> {
        if !self.same_shape(other) {
            return Err(GeometryError::DimensionMismatch(format!(
                "{}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        let (Some(a), Some(b)) = (self.bbox, other.bbox) else {
            return Ok(0);
        };
        let x0 = a.x0.max(b.x0);
        let x1 = a.x1.min(b.x1);
        if x0 > x1 || a.y0.max(b.y0) > a.y1.min(b.y1) {
            return Ok(0);
        }
        let h = self.height as usize;
        let start = x0 as usize * h;
        let end = (x1 as usize + 1) * h;
        Ok(count_and_range(&self.words, &other.words, start, end))
    }

    /// Intersection over union. Undefined (error) when both masks are empty.
    pub fn iou(&self, other: &BinaryMask) -> Result<f64, GeometryError> {
        let inter = self.intersection(other)?;
        let union = self.area + other.area - inter;
        if union == 0 {
            return Err(GeometryError::EmptyUnion);
        }
        Ok(inter as f64 / union as f64)
    }
}

fn count_and_range(a: &[u64], b: &[u64], start: usize, end: usize) -> u64 {
    if start >= end {
        return 0;
    }
    let (w0, w1) = (start / 64, (end - 1) / 64);
    let mut total = 0u64;
    for wi in w0..=w1 {
        let mut m = a[wi] & b[wi];
        if wi == w0 {
            m &= u64::MAX << (start % 64);
        }
        if wi == w1 {
            let top = end - wi * 64;
            if top < 64 {
                m &= (1u64 << top) - 1;
            }
        }
        total += u64::from(m.count_ones());
    }
    total
}

/// Mask IoU `|a ∩ b| / |a ∪ b|`.
pub fn mask_iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64, GeometryError> {
    a.iou(b)
}

/// Rasterizes one polygon: a pixel is set iff its center lies inside under
/// the even-odd rule.
pub fn rasterize_polygon(p: &Polygon, width: u32, height: u32) -> Result<BinaryMask, GeometryError> {
    rasterize_polygons(std::slice::from_ref(p), width, height)
}

/// Union of the rasterizations of several polygons. An empty slice gives an
/// all-zero mask.
pub fn rasterize_polygons(
    polys: &[Polygon],
    width: u32,
    height: u32,
) -> Result<BinaryMask, GeometryError> {
    check_window(width, height)?;
    let mut b = MaskBuilder::new(width, height);
    for p in polys {
        fill_rings(&mut b, p.rings());
    }
    Ok(b.build())
}

/// Rasterizes a set of rings jointly under the even-odd rule; this is how
/// COCO-style multi-part polygon masks are read.
pub fn rasterize_rings<'a>(
    rings: impl IntoIterator<Item = &'a [Coord]> + Clone,
    width: u32,
    height: u32,
) -> Result<BinaryMask, GeometryError> {
    check_window(width, height)?;
    let mut b = MaskBuilder::new(width, height);
    fill_rings(&mut b, rings);
    Ok(b.build())
}

fn check_window(width: u32, height: u32) -> Result<(), GeometryError> {
    if width == 0 || height == 0 {
        return Err(GeometryError::EmptyWindow { width, height });
    }
    Ok(())
}

fn fill_rings<'a>(b: &mut MaskBuilder, rings: impl IntoIterator<Item = &'a [Coord]> + Clone) {
    let (mut min_y, mut max_y) = (f64::INFINITY, f64::NEG_INFINITY);
    for ring in rings.clone() {
        for &[_, y] in ring {
            min_y = min_y.min(y);
            max_y = max_y.max(y);
        }
    }
    if !min_y.is_finite() || !max_y.is_finite() {
        return;
    }
    let row_lo = (min_y - 0.5).ceil().max(0.0) as i64;
    let row_hi = ((max_y - 0.5).floor() as i64).min(b.height as i64 - 1);
    let mut xs = Vec::new();
    for row in row_lo..=row_hi {
        let yc = row as f64 + 0.5;
        xs.clear();
        for ring in rings.clone() {
            for (a, c) in ring_edges(ring) {
                if (a[1] > yc) != (c[1] > yc) {
                    xs.push(a[0] + (yc - a[1]) * (c[0] - a[0]) / (c[1] - a[1]));
                }
            }
        }
        xs.sort_by(f64::total_cmp);
        for span in xs.chunks_exact(2) {
            // pixel centers in [span[0], span[1])
            let lo = (span[0] - 0.5).ceil().max(0.0) as i64;
            let hi = ((span[1] - 0.5).ceil() as i64 - 1).min(b.width as i64 - 1);
            for col in lo..=hi {
                b.set(col as u32, row as u32);
            }
        }
    }
}
