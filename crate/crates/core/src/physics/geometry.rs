//! Points, boxes and the slab segment/box intersection.

pub type Point = [f64; 3];

pub fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn distance(a: Point, b: Point) -> f64 {
    let d = sub(a, b);
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

/// Point at parameter `t` on the segment; exact at both endpoints.
pub fn lerp(a: Point, b: Point, t: f64) -> Point {
    let s = 1.0 - t;
    [
        a[0] * s + b[0] * t,
        a[1] * s + b[1] * t,
        a[2] * s + b[2] * t,
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Aabb {
    pub min: Point,
    pub max: Point,
}

impl Aabb {
    pub fn new(min: Point, max: Point) -> Self {
        Aabb { min, max }
    }

    pub fn is_valid(&self) -> bool {
        (0..3).all(|a| self.min[a].is_finite() && self.max[a].is_finite() && self.min[a] < self.max[a])
    }

    /// Closed containment, boundary included.
    pub fn contains(&self, p: Point) -> bool {
        (0..3).all(|a| self.min[a] <= p[a] && p[a] <= self.max[a])
    }

    /// Open containment, boundary excluded.
    pub fn contains_strictly(&self, p: Point) -> bool {
        (0..3).all(|a| self.min[a] < p[a] && p[a] < self.max[a])
    }

    pub fn encloses(&self, other: &Aabb) -> bool {
        self.contains(other.min) && self.contains(other.max)
    }
}

/// Portion of a segment inside a box, as segment parameters in `[0, 1]`
/// and the corresponding points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Crossing {
    pub t_entry: f64,
    pub t_exit: f64,
    pub entry: Point,
    pub exit: Point,
}

/// Slab-method intersection of the segment `p0 -> p1` with `aabb`.
///
/// Returns `None` when the segment misses the box or only touches it
/// (zero-length overlap, or running along a face).
pub fn segment_box_crossing(p0: Point, p1: Point, aabb: &Aabb) -> Option<Crossing> {
    let d = sub(p1, p0);
    let mut t0 = 0.0f64;
    let mut t1 = 1.0f64;
    for a in 0..3 {
        if d[a] == 0.0 {
            if p0[a] <= aabb.min[a] || p0[a] >= aabb.max[a] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / d[a];
        let ta = (aabb.min[a] - p0[a]) * inv;
        let tb = (aabb.max[a] - p0[a]) * inv;
        t0 = t0.max(ta.min(tb));
        t1 = t1.min(ta.max(tb));
        if t0 >= t1 {
            return None;
        }
    }
    Some(Crossing {
        t_entry: t0,
        t_exit: t1,
        entry: lerp(p0, p1, t0),
        exit: lerp(p0, p1, t1),
    })
}
