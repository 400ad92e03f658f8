//! Planar poses, rectangular vehicle footprints and exact box-box tests.
//!
//! Collision uses the separating-axis test over the two edge normals of each
//! rectangle. Clearance is the exact minimum distance between the two
//! rectangles, computed from segment-segment distances over their edges.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec2 = [f64; 2];

#[inline]
pub fn sub(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
pub fn add(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] + b[0], a[1] + b[1]]
}

#[inline]
pub fn scale(a: Vec2, s: f64) -> Vec2 {
    [a[0] * s, a[1] * s]
}

#[inline]
pub fn dot(a: Vec2, b: Vec2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

#[inline]
pub fn cross(a: Vec2, b: Vec2) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

#[inline]
pub fn norm(a: Vec2) -> f64 {
    a[0].hypot(a[1])
}

/// Wraps an angle into (-π, π].
pub fn normalize_angle(theta: f64) -> f64 {
    let mut a = theta.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    a
}

/// Signed shortest-arc difference `to - from`, in (-π, π].
pub fn angle_diff(from: f64, to: f64) -> f64 {
    normalize_angle(to - from)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose {
    /// Builds a pose with the heading wrapped into (-π, π].
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self {
            x,
            y,
            heading: normalize_angle(heading),
        }
    }

    pub fn position(&self) -> Vec2 {
        [self.x, self.y]
    }

    pub fn direction(&self) -> Vec2 {
        [self.heading.cos(), self.heading.sin()]
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.heading.is_finite()
    }

    /// Applies the rigid transform "rotate by `rot` about the origin, then
    /// translate by `offset`".
    pub fn transformed(&self, rot: f64, offset: Vec2) -> Pose {
        let (s, c) = rot.sin_cos();
        Pose::new(
            c * self.x - s * self.y + offset[0],
            s * self.x + c * self.y + offset[1],
            self.heading + rot,
        )
    }

    pub fn distance_to(&self, other: &Pose) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Footprint {
    pub length: f64,
    pub width: f64,
}

impl Footprint {
    pub fn new(length: f64, width: f64) -> Result<Self> {
        let fp = Self { length, width };
        fp.validate()?;
        Ok(fp)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.width > 0.0 && self.length >= self.width && self.length.is_finite()) {
            return Err(Error::invalid(format!(
                "footprint requires length >= width > 0, got {}x{}",
                self.length, self.width
            )));
        }
        Ok(())
    }

    /// Radius of the circumscribed circle.
    pub fn circumradius(&self) -> f64 {
        0.5 * self.length.hypot(self.width)
    }
}

impl Default for Footprint {
    fn default() -> Self {
        Self {
            length: 4.5,
            width: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedBox {
    pub pose: Pose,
    pub footprint: Footprint,
}

impl OrientedBox {
    pub fn new(pose: Pose, footprint: Footprint) -> Self {
        Self { pose, footprint }
    }

    /// Unit axes of the box: longitudinal, then lateral.
    pub fn axes(&self) -> [Vec2; 2] {
        let (s, c) = self.pose.heading.sin_cos();
        [[c, s], [-s, c]]
    }

    /// Corners in counter-clockwise order, starting front-left.
    pub fn corners(&self) -> [Vec2; 4] {
        let [u, v] = self.axes();
        let hl = 0.5 * self.footprint.length;
        let hw = 0.5 * self.footprint.width;
        let c = self.pose.position();
        let fwd = scale(u, hl);
        let side = scale(v, hw);
        [
            add(add(c, fwd), side),
            add(sub(c, fwd), side),
            sub(sub(c, fwd), side),
            sub(add(c, fwd), side),
        ]
    }

    pub fn area(&self) -> f64 {
        self.footprint.length * self.footprint.width
    }

    /// The front half of the box (same width, half the length).
    pub fn front_half(&self) -> OrientedBox {
        let quarter = 0.25 * self.footprint.length;
        let d = self.pose.direction();
        OrientedBox {
            pose: Pose {
                x: self.pose.x + d[0] * quarter,
                y: self.pose.y + d[1] * quarter,
                heading: self.pose.heading,
            },
            footprint: Footprint {
                length: 0.5 * self.footprint.length,
                width: self.footprint.width,
            },
        }
    }

    /// Closed-set containment test for a point.
    pub fn contains(&self, p: Vec2) -> bool {
        let [u, v] = self.axes();
        let d = sub(p, self.pose.position());
        let eps = 1e-12;
        dot(d, u).abs() <= 0.5 * self.footprint.length + eps
            && dot(d, v).abs() <= 0.5 * self.footprint.width + eps
    }

    fn project(&self, axis: Vec2) -> (f64, f64) {
        let c = dot(self.pose.position(), axis);
        let [u, v] = self.axes();
        let r = 0.5 * self.footprint.length * dot(u, axis).abs()
            + 0.5 * self.footprint.width * dot(v, axis).abs();
        (c - r, c + r)
    }
}

/// True iff the two closed rectangles intersect.
pub fn boxes_collide(a: &OrientedBox, b: &OrientedBox) -> bool {
    let reach = a.footprint.circumradius() + b.footprint.circumradius();
    if a.pose.distance_to(&b.pose) > reach {
        return false;
    }
    let [a0, a1] = a.axes();
    let [b0, b1] = b.axes();
    for axis in [a0, a1, b0, b1] {
        let (amin, amax) = a.project(axis);
        let (bmin, bmax) = b.project(axis);
        if amax < bmin || bmax < amin {
            return false;
        }
    }
    true
}

fn point_segment_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let ab = sub(b, a);
    let len2 = dot(ab, ab);
    let t = if len2 > 0.0 {
        (dot(sub(p, a), ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    norm(sub(p, add(a, scale(ab, t))))
}

fn segment_distance(p0: Vec2, p1: Vec2, q0: Vec2, q1: Vec2) -> f64 {
    // Crossing segments are handled by the collision pre-check; here the
    // minimum is always attained at an endpoint of one of the segments.
    point_segment_distance(p0, q0, q1)
        .min(point_segment_distance(p1, q0, q1))
        .min(point_segment_distance(q0, p0, p1))
        .min(point_segment_distance(q1, p0, p1))
}

/// Minimum Euclidean distance between two rectangles; 0 iff they collide.
pub fn box_clearance(a: &OrientedBox, b: &OrientedBox) -> f64 {
    if boxes_collide(a, b) {
        return 0.0;
    }
    let ca = a.corners();
    let cb = b.corners();
    let mut best = f64::INFINITY;
    for i in 0..4 {
        let (p0, p1) = (ca[i], ca[(i + 1) % 4]);
        for j in 0..4 {
            let (q0, q1) = (cb[j], cb[(j + 1) % 4]);
            best = best.min(segment_distance(p0, p1, q0, q1));
        }
    }
    best
}

/// Clearance below `threshold`, with a cheap circumcircle rejection first.
pub fn within_clearance(a: &OrientedBox, b: &OrientedBox, threshold: f64) -> bool {
    let reach = a.footprint.circumradius() + b.footprint.circumradius() + threshold;
    if a.pose.distance_to(&b.pose) > reach {
        return false;
    }
    box_clearance(a, b) < threshold
}

/// Earliest time `t >= 0` at which two boxes translating with constant
/// velocities `va`, `vb` (no rotation) touch, or `None` if they never do.
///
/// Swept separating-axis test: on each candidate axis the projected
/// intervals overlap during one time window; contact happens at the latest
/// window start provided it precedes the earliest window end.
pub fn first_contact_time(a: &OrientedBox, va: Vec2, b: &OrientedBox, vb: Vec2) -> Option<f64> {
    let rel = sub(vb, va);
    let [a0, a1] = a.axes();
    let [b0, b1] = b.axes();
    let mut enter = 0.0_f64;
    let mut exit = f64::INFINITY;
    for axis in [a0, a1, b0, b1] {
        let (amin, amax) = a.project(axis);
        let (bmin, bmax) = b.project(axis);
        let speed = dot(rel, axis);
        if speed.abs() < 1e-12 {
            if bmax < amin || amax < bmin {
                return None;
            }
            continue;
        }
        // b's interval shifted by speed * t overlaps a's on [t0, t1].
        let t_a = (amin - bmax) / speed;
        let t_b = (amax - bmin) / speed;
        let (t0, t1) = if t_a <= t_b { (t_a, t_b) } else { (t_b, t_a) };
        enter = enter.max(t0);
        exit = exit.min(t1);
        if enter > exit {
            return None;
        }
    }
    Some(enter)
}
