//! Lane centerlines and Frenet-style projection onto them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{add, cross, dot, norm, scale, sub, Vec2};

/// Polyline with cumulative arc length. Queries beyond either end
/// extrapolate along the first/last segment.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyline {
    points: Vec<Vec2>,
    cum: Vec<f64>,
}

/// Arc length and signed lateral offset (left positive) of a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frenet {
    pub s: f64,
    pub d: f64,
}

impl Polyline {
    pub fn new(points: Vec<Vec2>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::invalid("polyline needs at least 2 points"));
        }
        let mut cum = Vec::with_capacity(points.len());
        cum.push(0.0);
        for w in points.windows(2) {
            let len = norm(sub(w[1], w[0]));
            if !(len > 0.0) {
                return Err(Error::invalid("polyline has repeated consecutive points"));
            }
            cum.push(cum.last().unwrap() + len);
        }
        Ok(Self { points, cum })
    }

    pub fn points(&self) -> &[Vec2] {
        &self.points
    }

    pub fn length(&self) -> f64 {
        *self.cum.last().unwrap()
    }

    fn segment_for(&self, s: f64) -> usize {
        let n = self.points.len() - 1;
        match self.cum.binary_search_by(|c| c.partial_cmp(&s).unwrap()) {
            Ok(i) => i.min(n - 1),
            Err(i) => i.saturating_sub(1).min(n - 1),
        }
    }

    fn seg_dir(&self, i: usize) -> Vec2 {
        let d = sub(self.points[i + 1], self.points[i]);
        scale(d, 1.0 / (self.cum[i + 1] - self.cum[i]))
    }

    pub fn point_at(&self, s: f64) -> Vec2 {
        let i = self.segment_for(s);
        add(self.points[i], scale(self.seg_dir(i), s - self.cum[i]))
    }

    pub fn heading_at(&self, s: f64) -> f64 {
        let d = self.seg_dir(self.segment_for(s));
        d[1].atan2(d[0])
    }

    /// Unit left normal at arc length `s`.
    pub fn normal_at(&self, s: f64) -> Vec2 {
        let d = self.seg_dir(self.segment_for(s));
        [-d[1], d[0]]
    }

    pub fn from_frenet(&self, f: Frenet) -> Vec2 {
        add(self.point_at(f.s), scale(self.normal_at(f.s), f.d))
    }

    pub fn project(&self, p: Vec2) -> Frenet {
        let n = self.points.len() - 1;
        let mut best = (f64::INFINITY, Frenet { s: 0.0, d: 0.0 });
        for i in 0..n {
            let a = self.points[i];
            let seg_len = self.cum[i + 1] - self.cum[i];
            let dir = self.seg_dir(i);
            let mut t = dot(sub(p, a), dir);
            if i > 0 {
                t = t.max(0.0);
            }
            if i + 1 < n {
                t = t.min(seg_len);
            }
            let foot = add(a, scale(dir, t));
            let off = sub(p, foot);
            let dist = norm(off);
            if dist < best.0 {
                let sign = if cross(dir, off) >= 0.0 { 1.0 } else { -1.0 };
                best = (
                    dist,
                    Frenet {
                        s: self.cum[i] + t,
                        d: sign * dist,
                    },
                );
            }
        }
        best.1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LaneSpec {
    pub id: String,
    pub centerline: Vec<Vec2>,
    pub speed_limit: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub left: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub right: Option<String>,
    /// +1 for lanes in the ego's driving direction, −1 for oncoming lanes.
    #[serde(default = "default_direction")]
    pub direction_sign: i8,
    #[serde(default = "default_lane_width")]
    pub width: f64,
}

fn default_direction() -> i8 {
    1
}

pub fn default_lane_width() -> f64 {
    3.5
}

#[derive(Debug, Clone)]
pub struct Lane {
    pub spec: LaneSpec,
    pub centerline: Polyline,
}

impl Lane {
    pub fn new(spec: LaneSpec) -> Result<Self> {
        if !(spec.speed_limit > 0.0) {
            return Err(Error::invalid(format!("lane '{}' speed_limit must be > 0", spec.id)));
        }
        if !(spec.width > 0.0) {
            return Err(Error::invalid(format!("lane '{}' width must be > 0", spec.id)));
        }
        if spec.direction_sign != 1 && spec.direction_sign != -1 {
            return Err(Error::invalid(format!("lane '{}' direction_sign must be +1 or -1", spec.id)));
        }
        let centerline = Polyline::new(spec.centerline.clone())
            .map_err(|e| Error::invalid(format!("lane '{}': {e}", spec.id)))?;
        Ok(Self { spec, centerline })
    }

    pub fn id(&self) -> &str {
        &self.spec.id
    }

    pub fn speed_limit(&self) -> f64 {
        self.spec.speed_limit
    }

    pub fn half_width(&self) -> f64 {
        0.5 * self.spec.width
    }

    pub fn is_oncoming(&self) -> bool {
        self.spec.direction_sign < 0
    }

    /// True if `p` lies in this lane's corridor (within the polyline's extent).
    pub fn corridor_contains(&self, p: Vec2) -> bool {
        let f = self.centerline.project(p);
        f.s >= 0.0 && f.s <= self.centerline.length() && f.d.abs() <= self.half_width() + 1e-9
    }
}

#[derive(Debug, Clone, Default)]
pub struct RoadMap {
    lanes: Vec<Lane>,
}

impl RoadMap {
    pub fn new(specs: Vec<LaneSpec>) -> Result<Self> {
        let mut lanes = Vec::with_capacity(specs.len());
        for spec in specs {
            if lanes.iter().any(|l: &Lane| l.id() == spec.id) {
                return Err(Error::invalid(format!("duplicate lane id '{}'", spec.id)));
            }
            lanes.push(Lane::new(spec)?);
        }
        Ok(Self { lanes })
    }

    pub fn lanes(&self) -> &[Lane] {
        &self.lanes
    }

    pub fn lane(&self, id: &str) -> Option<&Lane> {
        self.lanes.iter().find(|l| l.id() == id)
    }

    pub fn specs(&self) -> Vec<LaneSpec> {
        self.lanes.iter().map(|l| l.spec.clone()).collect()
    }

    /// Lane whose centerline is laterally closest to `p` among lanes whose
    /// corridor contains it. Ties go to the earlier lane.
    pub fn lane_at(&self, p: Vec2) -> Option<&Lane> {
        self.closest(p, |l| l.corridor_contains(p))
    }

    /// Closest same-direction lane containing `p` in its corridor.
    pub fn driving_lane_at(&self, p: Vec2) -> Option<&Lane> {
        self.closest(p, |l| !l.is_oncoming() && l.corridor_contains(p))
    }

    fn closest(&self, p: Vec2, pred: impl Fn(&Lane) -> bool) -> Option<&Lane> {
        let mut best: Option<(&Lane, f64)> = None;
        for lane in self.lanes.iter().filter(|l| pred(l)) {
            let d = lane.centerline.project(p).d.abs();
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((lane, d));
            }
        }
        best.map(|(l, _)| l)
    }

    /// True if `p` is inside the union of all lane corridors.
    pub fn is_drivable(&self, p: Vec2) -> bool {
        self.lanes.iter().any(|l| l.corridor_contains(p))
    }

    /// Lanes reachable from `lane` by one lateral move, excluding oncoming.
    pub fn adjacent_driving_lanes(&self, lane: &Lane) -> Vec<&Lane> {
        [lane.spec.left.as_deref(), lane.spec.right.as_deref()]
            .into_iter()
            .flatten()
            .filter_map(|id| self.lane(id))
            .filter(|l| !l.is_oncoming())
            .collect()
    }

    pub fn are_adjacent(&self, a: &str, b: &str) -> bool {
        let adj = |x: &str, y: &str| {
            self.lane(x)
                .is_some_and(|l| l.spec.left.as_deref() == Some(y) || l.spec.right.as_deref() == Some(y))
        };
        adj(a, b) || adj(b, a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_on_straight_line() {
        let pl = Polyline::new(vec![[0.0, 0.0], [10.0, 0.0], [20.0, 0.0]]).unwrap();
        let f = pl.project([12.0, 1.5]);
        assert!((f.s - 12.0).abs() < 1e-12 && (f.d - 1.5).abs() < 1e-12);
        let f = pl.project([-5.0, -1.0]);
        assert!((f.s + 5.0).abs() < 1e-12 && (f.d + 1.0).abs() < 1e-12);
        let f = pl.project([30.0, 0.0]);
        assert!((f.s - 30.0).abs() < 1e-12);
        let p = pl.from_frenet(Frenet { s: 25.0, d: -2.0 });
        assert!((p[0] - 25.0).abs() < 1e-12 && (p[1] + 2.0).abs() < 1e-12);
    }

    #[test]
    fn projection_round_trip_on_bent_line() {
        let pl = Polyline::new(vec![[0.0, 0.0], [10.0, 0.0], [20.0, 10.0]]).unwrap();
        let p = pl.from_frenet(Frenet { s: 15.0, d: 0.5 });
        let f = pl.project(p);
        assert!((f.s - 15.0).abs() < 1e-9 && (f.d - 0.5).abs() < 1e-9);
    }

    #[test]
    fn rejects_repeated_points() {
        assert!(Polyline::new(vec![[0.0, 0.0], [0.0, 0.0]]).is_err());
        assert!(Polyline::new(vec![[0.0, 0.0]]).is_err());
    }

    fn two_lanes() -> RoadMap {
        RoadMap::new(vec![
            LaneSpec {
                id: "a".into(),
                centerline: vec![[0.0, 0.0], [100.0, 0.0]],
                speed_limit: 10.0,
                left: Some("b".into()),
                right: None,
                direction_sign: 1,
                width: 3.5,
            },
            LaneSpec {
                id: "b".into(),
                centerline: vec![[0.0, 3.5], [100.0, 3.5]],
                speed_limit: 10.0,
                left: None,
                right: Some("a".into()),
                direction_sign: 1,
                width: 3.5,
            },
        ])
        .unwrap()
    }

    #[test]
    fn lane_lookup_and_drivable_area() {
        let m = two_lanes();
        assert_eq!(m.lane_at([5.0, 0.4]).unwrap().id(), "a");
        assert_eq!(m.lane_at([5.0, 2.0]).unwrap().id(), "b");
        assert!(m.is_drivable([50.0, 5.2]));
        assert!(!m.is_drivable([50.0, 5.3]));
        assert!(!m.is_drivable([-1.0, 0.0]));
        assert!(m.are_adjacent("a", "b"));
        assert_eq!(m.adjacent_driving_lanes(m.lane("a").unwrap()).len(), 1);
    }
}
