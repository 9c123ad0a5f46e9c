//! Planar primitives: obstacles, the room rectangle, signed distances and
//! analytic ray intersections.

use serde::{Deserialize, Serialize};

pub type Vec2 = [f64; 2];

#[inline]
pub(crate) fn sub(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
pub(crate) fn dot(a: Vec2, b: Vec2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

#[inline]
pub(crate) fn norm(a: Vec2) -> f64 {
    a[0].hypot(a[1])
}

/// Axis-aligned rectangle, used for the room extent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min: Vec2,
    pub max: Vec2,
}

impl Rect {
    /// Rectangle of the given size centred on the origin.
    pub fn centered(width: f64, height: f64) -> Self {
        Rect {
            min: [-width / 2.0, -height / 2.0],
            max: [width / 2.0, height / 2.0],
        }
    }

    pub fn width(&self) -> f64 {
        self.max[0] - self.min[0]
    }

    pub fn height(&self) -> f64 {
        self.max[1] - self.min[1]
    }

    pub fn contains(&self, p: Vec2) -> bool {
        p[0] >= self.min[0] && p[0] <= self.max[0] && p[1] >= self.min[1] && p[1] <= self.max[1]
    }

    /// Distance from an interior point to the nearest wall. Negative outside.
    pub fn interior_clearance(&self, p: Vec2) -> f64 {
        (p[0] - self.min[0]).min(self.max[0] - p[0]).min(p[1] - self.min[1]).min(self.max[1] - p[1])
    }

    /// Outward normal of the wall closest to `p`.
    pub fn nearest_wall_normal(&self, p: Vec2) -> Vec2 {
        let candidates = [
            (p[0] - self.min[0], [-1.0, 0.0]),
            (self.max[0] - p[0], [1.0, 0.0]),
            (p[1] - self.min[1], [0.0, -1.0]),
            (self.max[1] - p[1], [0.0, 1.0]),
        ];
        candidates.iter().min_by(|a, b| a.0.total_cmp(&b.0)).map(|c| c.1).unwrap_or([1.0, 0.0])
    }

    /// Distance along a unit ray from an interior origin until it leaves the rectangle.
    pub fn ray_exit(&self, origin: Vec2, dir: Vec2) -> f64 {
        let mut t = f64::INFINITY;
        for axis in 0..2 {
            let d = dir[axis];
            if d > 0.0 {
                t = t.min((self.max[axis] - origin[axis]) / d);
            } else if d < 0.0 {
                t = t.min((self.min[axis] - origin[axis]) / d);
            }
        }
        t.max(0.0)
    }
}

/// A static obstacle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Obstacle {
    Circle { center: Vec2, radius: f64 },
    Box { center: Vec2, half_extents: Vec2 },
}

impl Obstacle {
    pub fn is_valid(&self) -> bool {
        match *self {
            Obstacle::Circle { center, radius } => center.iter().all(|c| c.is_finite()) && radius.is_finite() && radius > 0.0,
            Obstacle::Box { center, half_extents } => center.iter().all(|c| c.is_finite()) && half_extents.iter().all(|h| h.is_finite() && *h > 0.0),
        }
    }

    pub fn center(&self) -> Vec2 {
        match *self {
            Obstacle::Circle { center, .. } | Obstacle::Box { center, .. } => center,
        }
    }

    /// Axis-aligned bounds `(min, max)`.
    pub fn bounds(&self) -> (Vec2, Vec2) {
        match *self {
            Obstacle::Circle { center, radius } => ([center[0] - radius, center[1] - radius], [center[0] + radius, center[1] + radius]),
            Obstacle::Box { center, half_extents } => (
                [center[0] - half_extents[0], center[1] - half_extents[1]],
                [center[0] + half_extents[0], center[1] + half_extents[1]],
            ),
        }
    }

    /// Signed distance from `p` to the obstacle boundary (negative inside).
    pub fn signed_distance(&self, p: Vec2) -> f64 {
        match *self {
            Obstacle::Circle { center, radius } => norm(sub(p, center)) - radius,
            Obstacle::Box { center, half_extents } => {
                let q = [(p[0] - center[0]).abs() - half_extents[0], (p[1] - center[1]).abs() - half_extents[1]];
                let outside = norm([q[0].max(0.0), q[1].max(0.0)]);
                let inside = q[0].max(q[1]).min(0.0);
                outside + inside
            }
        }
    }

    /// Unit direction pointing from the obstacle towards `p` (outward normal of
    /// the closest boundary point).
    pub fn outward_normal(&self, p: Vec2) -> Vec2 {
        match *self {
            Obstacle::Circle { center, .. } => {
                let d = sub(p, center);
                let n = norm(d);
                if n > 0.0 {
                    [d[0] / n, d[1] / n]
                } else {
                    [1.0, 0.0]
                }
            }
            Obstacle::Box { center, half_extents } => {
                let rel = sub(p, center);
                let q = [rel[0].abs() - half_extents[0], rel[1].abs() - half_extents[1]];
                let sign = |v: f64| if v < 0.0 { -1.0 } else { 1.0 };
                if q[0] > 0.0 || q[1] > 0.0 {
                    let d = [q[0].max(0.0) * sign(rel[0]), q[1].max(0.0) * sign(rel[1])];
                    let n = norm(d);
                    [d[0] / n, d[1] / n]
                } else if q[0] > q[1] {
                    [sign(rel[0]), 0.0]
                } else {
                    [0.0, sign(rel[1])]
                }
            }
        }
    }

    /// Distance along the unit ray `origin + t * dir` to the first boundary
    /// crossing, `Some(0.0)` when the origin is already inside.
    pub fn ray_hit(&self, origin: Vec2, dir: Vec2) -> Option<f64> {
        match *self {
            Obstacle::Circle { center, radius } => {
                let oc = sub(origin, center);
                let c = dot(oc, oc) - radius * radius;
                if c <= 0.0 {
                    return Some(0.0);
                }
                let b = dot(oc, dir);
                if b >= 0.0 {
                    return None;
                }
                let disc = b * b - c;
                if disc < 0.0 {
                    return None;
                }
                // Stable root selection: t = c / (-b + sqrt(disc)).
                Some(c / (-b + disc.sqrt()))
            }
            Obstacle::Box { center, half_extents } => {
                let mut t_near = f64::NEG_INFINITY;
                let mut t_far = f64::INFINITY;
                for axis in 0..2 {
                    let lo = center[axis] - half_extents[axis];
                    let hi = center[axis] + half_extents[axis];
                    if dir[axis] == 0.0 {
                        if origin[axis] < lo || origin[axis] > hi {
                            return None;
                        }
                    } else {
                        let inv = 1.0 / dir[axis];
                        let (t0, t1) = {
                            let a = (lo - origin[axis]) * inv;
                            let b = (hi - origin[axis]) * inv;
                            if a <= b {
                                (a, b)
                            } else {
                                (b, a)
                            }
                        };
                        t_near = t_near.max(t0);
                        t_far = t_far.min(t1);
                    }
                }
                if t_near > t_far || t_far < 0.0 {
                    None
                } else {
                    Some(t_near.max(0.0))
                }
            }
        }
    }
}
