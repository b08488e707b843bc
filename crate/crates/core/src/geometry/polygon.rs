use serde::{Deserialize, Serialize};

use super::GeometryError;

/// An `(x, y)` pair in pixel or CRS units.
pub type Coord = [f64; 2];

/// A simple polygon with optional holes.
///
/// Rings are stored open: the closing vertex is implied, and a duplicated
/// closing vertex on input is dropped. Consecutive duplicate vertices are
/// removed as well, so every stored ring has at least three distinct vertices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPolygon", into = "RawPolygon")]
pub struct Polygon {
    exterior: Vec<Coord>,
    interiors: Vec<Vec<Coord>>,
}

#[derive(Serialize, Deserialize)]
struct RawPolygon {
    exterior: Vec<Coord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    interiors: Vec<Vec<Coord>>,
}

impl TryFrom<RawPolygon> for Polygon {
    type Error = GeometryError;

    fn try_from(raw: RawPolygon) -> Result<Self, Self::Error> {
        Polygon::new(raw.exterior, raw.interiors)
    }
}

impl From<Polygon> for RawPolygon {
    fn from(p: Polygon) -> Self {
        RawPolygon {
            exterior: p.exterior,
            interiors: p.interiors,
        }
    }
}

/// Axis-aligned rectangle `[min_x, max_x] x [min_y, max_y]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl Rect {
    pub fn new(min_x: f64, min_y: f64, max_x: f64, max_y: f64) -> Result<Self, GeometryError> {
        let finite = [min_x, min_y, max_x, max_y].iter().all(|v| v.is_finite());
        if !finite || max_x <= min_x || max_y <= min_y {
            return Err(GeometryError::InvalidRect {
                min_x,
                min_y,
                max_x,
                max_y,
            });
        }
        Ok(Rect {
            min_x,
            min_y,
            max_x,
            max_y,
        })
    }

    pub fn width(&self) -> f64 {
        self.max_x - self.min_x
    }

    pub fn height(&self) -> f64 {
        self.max_y - self.min_y
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> Coord {
        [
            0.5 * (self.min_x + self.max_x),
            0.5 * (self.min_y + self.max_y),
        ]
    }

    pub fn intersects(&self, other: &Rect) -> bool {
        self.min_x < other.max_x
            && other.min_x < self.max_x
            && self.min_y < other.max_y
            && other.min_y < self.max_y
    }

    pub fn to_polygon(&self) -> Polygon {
        Polygon {
            exterior: vec![
                [self.min_x, self.min_y],
                [self.max_x, self.min_y],
                [self.max_x, self.max_y],
                [self.min_x, self.max_y],
            ],
            interiors: Vec::new(),
        }
    }
}

impl Polygon {
    pub fn new(exterior: Vec<Coord>, interiors: Vec<Vec<Coord>>) -> Result<Self, GeometryError> {
        let exterior = normalize_ring(exterior);
        check_ring(&exterior, "exterior")?;
        if ring_signed_area(&exterior) == 0.0 {
            return Err(GeometryError::InvalidGeometry(
                "exterior ring has zero area".into(),
            ));
        }
        let mut holes = Vec::with_capacity(interiors.len());
        for (i, ring) in interiors.into_iter().enumerate() {
            let ring = normalize_ring(ring);
            check_ring(&ring, &format!("interior ring {i}"))?;
            holes.push(ring);
        }
        Ok(Polygon {
            exterior,
            interiors: holes,
        })
    }

    /// Convenience constructor for a polygon without holes.
    pub fn from_exterior(exterior: Vec<Coord>) -> Result<Self, GeometryError> {
        Self::new(exterior, Vec::new())
    }

    pub fn exterior(&self) -> &[Coord] {
        &self.exterior
    }

    pub fn interiors(&self) -> &[Vec<Coord>] {
        &self.interiors
    }

    /// Exterior followed by every hole.
    pub fn rings(&self) -> impl Iterator<Item = &[Coord]> + Clone {
        std::iter::once(self.exterior.as_slice()).chain(self.interiors.iter().map(Vec::as_slice))
    }

    /// Shoelace area of the exterior minus the hole areas.
    pub fn area(&self) -> f64 {
        let holes: f64 = self
            .interiors
            .iter()
            .map(|r| ring_signed_area(r).abs())
            .sum();
        (ring_signed_area(&self.exterior).abs() - holes).max(0.0)
    }

    pub fn bounds(&self) -> Rect {
        let mut r = Rect {
            min_x: f64::INFINITY,
            min_y: f64::INFINITY,
            max_x: f64::NEG_INFINITY,
            max_y: f64::NEG_INFINITY,
        };
        for &[x, y] in &self.exterior {
            r.min_x = r.min_x.min(x);
            r.min_y = r.min_y.min(y);
            r.max_x = r.max_x.max(x);
            r.max_y = r.max_y.max(y);
        }
        r
    }

    /// Even-odd containment over all rings. Points on a left or bottom edge
    /// count as inside, points on a right or top edge as outside.
    pub fn contains(&self, p: Coord) -> bool {
        self.rings().filter(|r| ring_crossings_right(r, p) % 2 == 1).count() % 2 == 1
    }

    /// Applies `f` to every vertex. Fails if the image is degenerate.
    pub fn map_coords(&self, f: impl Fn(Coord) -> Coord) -> Result<Polygon, GeometryError> {
        Polygon::new(
            self.exterior.iter().map(|&c| f(c)).collect(),
            self.interiors
                .iter()
                .map(|r| r.iter().map(|&c| f(c)).collect())
                .collect(),
        )
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Polygon {
        Polygon {
            exterior: self.exterior.iter().map(|&[x, y]| [x + dx, y + dy]).collect(),
            interiors: self
                .interiors
                .iter()
                .map(|r| r.iter().map(|&[x, y]| [x + dx, y + dy]).collect())
                .collect(),
        }
    }

    /// True when the interiors of `self` and `other` share positive area.
    ///
    /// Touching boundaries do not count. Detects proper edge crossings,
    /// vertices or edge midpoints strictly inside the other polygon, and
    /// identical-footprint cases through an interior sample point.
    pub fn interiors_overlap(&self, other: &Polygon) -> bool {
        if !self.bounds().intersects(&other.bounds()) {
            return false;
        }
        for a in self.rings() {
            for b in other.rings() {
                for (a0, a1) in ring_edges(a) {
                    for (b0, b1) in ring_edges(b) {
                        if segments_cross_properly(a0, a1, b0, b1) {
                            return true;
                        }
                    }
                }
            }
        }
        let strictly_inside = |poly: &Polygon, p: Coord| poly.contains(p) && !poly.on_boundary(p);
        for (x, y) in [(self, other), (other, self)] {
            for ring in x.rings() {
                for (a, b) in ring_edges(ring) {
                    let mid = [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
                    if strictly_inside(y, a) || strictly_inside(y, mid) {
                        return true;
                    }
                }
            }
            if let Some(p) = x.interior_point() {
                if strictly_inside(y, p) {
                    return true;
                }
            }
        }
        false
    }

    fn on_boundary(&self, p: Coord) -> bool {
        self.rings()
            .any(|r| ring_edges(r).any(|(a, b)| point_on_segment(p, a, b)))
    }

    /// A point strictly inside the polygon, found on the horizontal line
    /// through the middle of the bounding box.
    pub fn interior_point(&self) -> Option<Coord> {
        let b = self.bounds();
        let mut candidates = [0.5, 0.25, 0.75, 0.125, 0.875, 0.375, 0.625];
        candidates.sort_by(|a: &f64, b: &f64| (a - 0.5).abs().total_cmp(&(b - 0.5).abs()));
        for frac in candidates {
            let y = b.min_y + frac * (b.max_y - b.min_y);
            let mut xs: Vec<f64> = self
                .rings()
                .flat_map(ring_edges)
                .filter(|(a, c)| (a[1] > y) != (c[1] > y))
                .map(|(a, c)| a[0] + (y - a[1]) * (c[0] - a[0]) / (c[1] - a[1]))
                .collect();
            xs.sort_by(f64::total_cmp);
            let best = xs
                .chunks_exact(2)
                .map(|w| (w[0], w[1]))
                .max_by(|p, q| (p.1 - p.0).total_cmp(&(q.1 - q.0)));
            if let Some((x0, x1)) = best {
                if x1 > x0 {
                    return Some([0.5 * (x0 + x1), y]);
                }
            }
        }
        None
    }
}

/// Signed shoelace area of an open ring; positive for counter-clockwise
/// orientation in a y-up frame.
pub fn ring_signed_area(ring: &[Coord]) -> f64 {
    let n = ring.len();
    if n < 3 {
        return 0.0;
    }
    // relative to the first vertex: projected coordinates are large enough
    // to cancel most significant digits of the plain shoelace sum
    let [ox, oy] = ring[0];
    let mut acc = 0.0;
    for i in 1..n - 1 {
        let (x0, y0) = (ring[i][0] - ox, ring[i][1] - oy);
        let (x1, y1) = (ring[i + 1][0] - ox, ring[i + 1][1] - oy);
        acc += x0 * y1 - x1 * y0;
    }
    0.5 * acc
}

pub(crate) fn ring_edges(ring: &[Coord]) -> impl Iterator<Item = (Coord, Coord)> + '_ {
    let n = ring.len();
    (0..n).map(move |i| (ring[i], ring[(i + 1) % n]))
}

fn ring_crossings_right(ring: &[Coord], [px, py]: Coord) -> usize {
    ring_edges(ring)
        .filter(|(a, b)| (a[1] > py) != (b[1] > py))
        .filter(|(a, b)| px < a[0] + (py - a[1]) * (b[0] - a[0]) / (b[1] - a[1]))
        .count()
}

fn normalize_ring(mut ring: Vec<Coord>) -> Vec<Coord> {
    ring.dedup();
    while ring.len() > 1 && ring.first() == ring.last() {
        ring.pop();
    }
    ring
}

fn check_ring(ring: &[Coord], what: &str) -> Result<(), GeometryError> {
    if ring.iter().flatten().any(|v| !v.is_finite()) {
        return Err(GeometryError::InvalidGeometry(format!(
            "{what} has non-finite coordinates"
        )));
    }
    let mut distinct: Vec<Coord> = ring.to_vec();
    distinct.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(GeometryError::InvalidGeometry(format!(
            "{what} has {} distinct vertices, need at least 3",
            distinct.len()
        )));
    }
    Ok(())
}

fn cross(o: Coord, a: Coord, b: Coord) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn segments_cross_properly(a0: Coord, a1: Coord, b0: Coord, b1: Coord) -> bool {
    let d1 = cross(b0, b1, a0);
    let d2 = cross(b0, b1, a1);
    let d3 = cross(a0, a1, b0);
    let d4 = cross(a0, a1, b1);
    ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
}

fn point_on_segment(p: Coord, a: Coord, b: Coord) -> bool {
    let scale = (b[0] - a[0]).abs().max((b[1] - a[1]).abs()).max(1.0);
    cross(a, b, p).abs() <= 1e-12 * scale * scale
        && p[0] >= a[0].min(b[0])
        && p[0] <= a[0].max(b[0])
        && p[1] >= a[1].min(b[1])
        && p[1] <= a[1].max(b[1])
}

/// Sutherland-Hodgman clip of `p` against `rect`.
///
/// Each ring is clipped independently; because holes lie inside the
/// exterior, the clipped area equals the area of `p` inside `rect`.
/// Returns `None` when nothing of positive area remains.
pub fn clip_polygon_to_rect(p: &Polygon, rect: &Rect) -> Option<Polygon> {
    let eps = f64::EPSILON * rect.width().max(rect.height()).powi(2);
    let exterior = normalize_ring(clip_ring(&p.exterior, rect));
    if exterior.len() < 3 || ring_signed_area(&exterior).abs() <= eps {
        return None;
    }
    let interiors = p
        .interiors
        .iter()
        .map(|h| normalize_ring(clip_ring(h, rect)))
        .filter(|h| h.len() >= 3 && ring_signed_area(h).abs() > eps)
        .collect();
    Some(Polygon {
        exterior,
        interiors,
    })
}

fn clip_ring(ring: &[Coord], rect: &Rect) -> Vec<Coord> {
    #[derive(Clone, Copy)]
    enum Edge {
        Left(f64),
        Right(f64),
        Bottom(f64),
        Top(f64),
    }
    let inside = |e: Edge, [x, y]: Coord| match e {
        Edge::Left(v) => x >= v,
        Edge::Right(v) => x <= v,
        Edge::Bottom(v) => y >= v,
        Edge::Top(v) => y <= v,
    };
    let intersect = |e: Edge, a: Coord, b: Coord| -> Coord {
        match e {
            Edge::Left(v) | Edge::Right(v) => {
                let t = (v - a[0]) / (b[0] - a[0]);
                [v, a[1] + t * (b[1] - a[1])]
            }
            Edge::Bottom(v) | Edge::Top(v) => {
                let t = (v - a[1]) / (b[1] - a[1]);
                [a[0] + t * (b[0] - a[0]), v]
            }
        }
    };

    let mut output = ring.to_vec();
    for edge in [
        Edge::Left(rect.min_x),
        Edge::Right(rect.max_x),
        Edge::Bottom(rect.min_y),
        Edge::Top(rect.max_y),
    ] {
        if output.is_empty() {
            break;
        }
        let input = std::mem::take(&mut output);
        let mut prev = *input.last().unwrap();
        for &cur in &input {
            match (inside(edge, cur), inside(edge, prev)) {
                (true, true) => output.push(cur),
                (true, false) => {
                    output.push(intersect(edge, prev, cur));
                    output.push(cur);
                }
                (false, true) => output.push(intersect(edge, prev, cur)),
                (false, false) => {}
            }
            prev = cur;
        }
    }
    output
}
