//! Sensor-array geometry: axis-aligned boxes, ray traversal and in-material
//! path lengths.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::sphere::{angle_between, Vec3};

const EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sensor {
    pub center: [f64; 3],
    pub half_extents: [f64; 3],
}

impl Sensor {
    pub fn new(center: Vec3, half_extents: Vec3) -> Self {
        Self {
            center: center.into(),
            half_extents: half_extents.into(),
        }
    }

    pub fn lo(&self) -> Vec3 {
        Vec3::from(self.center) - Vec3::from(self.half_extents)
    }

    pub fn hi(&self) -> Vec3 {
        Vec3::from(self.center) + Vec3::from(self.half_extents)
    }

    /// Closed-box membership.
    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|k| (p[k] - self.center[k]).abs() <= self.half_extents[k])
    }

    /// Parametric interval `[t0, t1]` where the line meets the box (slab method).
    pub fn clip(&self, origin: &Vec3, dir: &Vec3) -> Option<(f64, f64)> {
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        for k in 0..3 {
            let lo = self.center[k] - self.half_extents[k];
            let hi = self.center[k] + self.half_extents[k];
            if dir[k].abs() < EPS {
                if origin[k] < lo || origin[k] > hi {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / dir[k];
            let (a, b) = ((lo - origin[k]) * inv, (hi - origin[k]) * inv);
            let (a, b) = if a < b { (a, b) } else { (b, a) };
            t0 = t0.max(a);
            t1 = t1.min(b);
            if t1 < t0 {
                return None;
            }
        }
        Some((t0, t1))
    }

    fn overlaps_interior(&self, other: &Sensor) -> bool {
        (0..3).all(|k| {
            (self.center[k] - other.center[k]).abs()
                < self.half_extents[k] + other.half_extents[k] - EPS
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
}

impl Ray {
    pub fn new(origin: Vec3, direction: Vec3) -> Result<Self> {
        let n = direction.norm();
        if !n.is_finite() || n == 0.0 {
            return Err(Error::Domain("ray direction must be non-zero".into()));
        }
        Ok(Self {
            origin,
            direction: direction / n,
        })
    }

    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub t_enter: f64,
    pub t_exit: f64,
    pub sensor: usize,
}

impl Segment {
    pub fn length(&self) -> f64 {
        self.t_exit - self.t_enter
    }
}

/// Cone from an exterior origin that encloses every sensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingCone {
    pub axis: Vec3,
    pub half_angle: f64,
}

impl BoundingCone {
    pub fn cos_half(&self) -> f64 {
        self.half_angle.cos()
    }

    /// Solid angle of the cone, sr.
    pub fn solid_angle(&self) -> f64 {
        2.0 * std::f64::consts::PI * (1.0 - self.cos_half())
    }
}

/// Ordered set of disjoint sensor boxes.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorArray {
    sensors: Vec<Sensor>,
    bbox_lo: Vec3,
    bbox_hi: Vec3,
    corners: Vec<Vec3>,
}

pub const PAPER_PRESET: &str = "paper-4x7";

impl DetectorArray {
    pub fn new(sensors: Vec<Sensor>) -> Result<Self> {
        if sensors.is_empty() {
            return Err(Error::InvalidLayout("no sensors".into()));
        }
        for (i, s) in sensors.iter().enumerate() {
            if !s.half_extents.iter().all(|h| *h > 0.0 && h.is_finite())
                || !s.center.iter().all(|c| c.is_finite())
            {
                return Err(Error::InvalidLayout(format!(
                    "sensor {i}: half extents must be positive and finite"
                )));
            }
            for (j, o) in sensors[..i].iter().enumerate() {
                if s.overlaps_interior(o) {
                    return Err(Error::InvalidLayout(format!("sensors {j} and {i} overlap")));
                }
            }
        }
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for s in &sensors {
            lo = lo.inf(&s.lo());
            hi = hi.sup(&s.hi());
        }
        let corners = sensors
            .iter()
            .flat_map(|s| {
                let (a, b) = (s.lo(), s.hi());
                (0..8).map(move |m| {
                    Vec3::new(
                        if m & 1 == 0 { a.x } else { b.x },
                        if m & 2 == 0 { a.y } else { b.y },
                        if m & 4 == 0 { a.z } else { b.z },
                    )
                })
            })
            .collect();
        Ok(Self {
            sensors,
            bbox_lo: lo,
            bbox_hi: hi,
            corners,
        })
    }

    /// 4×7 grid of 3×3×50 mm sensors centred at (−19.5 + 13i, −33 + 11j, 0),
    /// long axis along z.
    pub fn paper_4x7() -> Self {
        let half = Vec3::new(1.5, 1.5, 25.0);
        let sensors = (0..4)
            .flat_map(|i| {
                (0..7).map(move |j| {
                    Sensor::new(Vec3::new(-19.5 + 13.0 * i as f64, -33.0 + 11.0 * j as f64, 0.0), half)
                })
            })
            .collect();
        Self::new(sensors).expect("preset layout is valid")
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            PAPER_PRESET => Ok(Self::paper_4x7()),
            other => Err(Error::InvalidLayout(format!("unknown preset {other:?}"))),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let sensors: Vec<Sensor> =
            serde_json::from_str(text).map_err(|e| Error::InvalidLayout(e.to_string()))?;
        Self::new(sensors)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.sensors).expect("plain numbers serialize")
    }

    /// Hex SHA-256 of the canonical layout JSON; keys caches.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }

    pub fn sensors(&self) -> &[Sensor] {
        &self.sensors
    }

    pub fn len(&self) -> usize {
        self.sensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sensors.is_empty()
    }

    pub fn bbox(&self) -> (Vec3, Vec3) {
        (self.bbox_lo, self.bbox_hi)
    }

    pub fn center(&self) -> Vec3 {
        (self.bbox_lo + self.bbox_hi) * 0.5
    }

    fn hits_bbox(&self, origin: &Vec3, dir: &Vec3) -> bool {
        let b = Sensor::new(self.center(), (self.bbox_hi - self.bbox_lo) * 0.5);
        matches!(b.clip(origin, dir), Some((_, t1)) if t1 > 0.0)
    }

    /// In-sensor intervals along the forward ray, sorted by entry.
    pub fn ray_segments(&self, ray: &Ray) -> Vec<Segment> {
        let mut out = Vec::new();
        if !self.hits_bbox(&ray.origin, &ray.direction) {
            return out;
        }
        for (i, s) in self.sensors.iter().enumerate() {
            if let Some((t0, t1)) = s.clip(&ray.origin, &ray.direction) {
                let t0 = t0.max(0.0);
                if t1 - t0 > EPS {
                    out.push(Segment {
                        t_enter: t0,
                        t_exit: t1,
                        sensor: i,
                    });
                }
            }
        }
        out.sort_by(|a, b| a.t_enter.total_cmp(&b.t_enter));
        out
    }

    /// Total in-sensor length of the forward ray (d_max).
    pub fn max_effective_distance(&self, origin: &Vec3, dir: &Vec3) -> f64 {
        if !self.hits_bbox(origin, dir) {
            return 0.0;
        }
        let mut total = 0.0;
        for s in &self.sensors {
            if let Some((t0, t1)) = s.clip(origin, dir) {
                let t0 = t0.max(0.0);
                if t1 - t0 > EPS {
                    total += t1 - t0;
                }
            }
        }
        total
    }

    /// In-sensor length of the straight segment from `a` to `b`.
    pub fn effective_distance(&self, a: &Vec3, b: &Vec3) -> f64 {
        let v = b - a;
        let len = v.norm();
        if len == 0.0 {
            return 0.0;
        }
        let dir = v / len;
        let mut total = 0.0;
        for s in &self.sensors {
            if let Some((t0, t1)) = s.clip(a, &dir) {
                let (t0, t1) = (t0.max(0.0), t1.min(len));
                if t1 - t0 > EPS {
                    total += t1 - t0;
                }
            }
        }
        total
    }

    /// In-sensor length from `a` to `b` together with the in-sensor length of
    /// the whole forward ray from `a` through `b`.
    pub fn path_lengths(&self, a: &Vec3, b: &Vec3) -> (f64, f64) {
        let v = b - a;
        let len = v.norm();
        if len == 0.0 {
            return (0.0, 0.0);
        }
        let dir = v / len;
        if !self.hits_bbox(a, &dir) {
            return (0.0, 0.0);
        }
        let (mut d, mut dmax) = (0.0, 0.0);
        for s in &self.sensors {
            if let Some((t0, t1)) = s.clip(a, &dir) {
                let t0 = t0.max(0.0);
                if t1 - t0 > EPS {
                    dmax += t1 - t0;
                    let t1c = t1.min(len);
                    if t1c - t0 > EPS {
                        d += t1c - t0;
                    }
                }
            }
        }
        (d, dmax)
    }

    /// Lowest-index sensor whose closed box contains `p`.
    pub fn containing_sensor(&self, p: &Vec3) -> Option<usize> {
        if (0..3).any(|k| p[k] < self.bbox_lo[k] || p[k] > self.bbox_hi[k]) {
            return None;
        }
        self.sensors.iter().position(|s| s.contains(p))
    }

    /// Cone from `origin` through the centre of the array that encloses all
    /// sensor corners. Errors when `origin` lies inside the array's bounding box.
    pub fn bounding_cone(&self, origin: &Vec3) -> Result<BoundingCone> {
        if (0..3).all(|k| origin[k] >= self.bbox_lo[k] && origin[k] <= self.bbox_hi[k]) {
            return Err(Error::Domain("cone origin inside the array bounding box".into()));
        }
        let axis = (self.center() - origin).normalize();
        let half_angle = self
            .corners
            .iter()
            .map(|c| angle_between(&axis, &(c - origin)))
            .fold(0.0, f64::max);
        // small pad so corners themselves are strictly inside
        Ok(BoundingCone {
            axis,
            half_angle: (half_angle * (1.0 + 1e-9) + 1e-12).min(std::f64::consts::PI),
        })
    }

    /// Point reached after travelling effective distance `d` along the ray;
    /// `None` when the ray holds less material than `d`.
    pub fn point_at_effective_distance(&self, ray: &Ray, d: f64) -> Option<(Vec3, usize)> {
        let mut acc = 0.0;
        for seg in self.ray_segments(ray) {
            let l = seg.length();
            if acc + l >= d {
                return Some((ray.at(seg.t_enter + (d - acc)), seg.sensor));
            }
            acc += l;
        }
        None
    }
}

/// Source sphere of known radius centred on the array origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SphereModel {
    pub radius: f64,
}

impl Default for SphereModel {
    fn default() -> Self {
        Self { radius: 300.0 }
    }
}

impl SphereModel {
    pub fn new(radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::Config(format!("sphere radius must be > 0, got {radius}")));
        }
        Ok(Self { radius })
    }

    pub fn point(&self, u: &Vec3) -> Vec3 {
        u * self.radius
    }

    /// Great-circle distance between two unit directions, mm.
    pub fn geodesic_distance(&self, u: &Vec3, v: &Vec3) -> f64 {
        self.radius * angle_between(u, v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};

    fn arr() -> DetectorArray {
        DetectorArray::paper_4x7()
    }

    #[test]
    fn preset_layout() {
        let a = arr();
        assert_eq!(a.len(), 28);
        let (lo, hi) = a.bbox();
        assert_relative_eq!(lo, Vec3::new(-21.0, -34.5, -25.0));
        assert_relative_eq!(hi, Vec3::new(21.0, 34.5, 25.0));
        assert_eq!(a.sensors()[0].center, [-19.5, -33.0, 0.0]);
    }

    #[test]
    fn missing_ray_has_no_segments() {
        let r = Ray::new(Vec3::new(0.0, 0.0, 100.0), Vec3::new(1.0, 0.0, 0.0)).unwrap();
        assert!(arr().ray_segments(&r).is_empty());
        assert_eq!(arr().max_effective_distance(&r.origin, &r.direction), 0.0);
    }

    #[test]
    fn long_axis_chord_is_fifty() {
        let r = Ray::new(Vec3::new(-19.5, -33.0, 100.0), -Vec3::z()).unwrap();
        let segs = arr().ray_segments(&r);
        assert_eq!(segs.len(), 1);
        assert_relative_eq!(segs[0].length(), 50.0, epsilon = 1e-12);
        assert_relative_eq!(segs[0].t_enter, 75.0, epsilon = 1e-12);
        let a = Vec3::new(-19.5, -33.0, 25.0);
        let b = Vec3::new(-19.5, -33.0, -25.0);
        assert_relative_eq!(arr().effective_distance(&a, &b), 50.0, epsilon = 1e-12);
        assert_relative_eq!(arr().max_effective_distance(&r.origin, &r.direction), 50.0);
        assert_relative_eq!(
            arr().effective_distance(&r.origin, &r.at(500.0)),
            arr().max_effective_distance(&r.origin, &r.direction)
        );
    }

    #[test]
    fn thin_dimension_chord_is_three() {
        // along y at x = -6.5 crosses 7 sensors; along x at y = -33 crosses 4
        let r = Ray::new(Vec3::new(-100.0, 0.0, 0.0), Vec3::x()).unwrap();
        let segs = arr().ray_segments(&r);
        assert_eq!(segs.len(), 4);
        for s in &segs {
            assert_relative_eq!(s.length(), 3.0, epsilon = 1e-12);
        }
        let single = Ray::new(Vec3::new(-19.5, -33.0, 0.0), Vec3::y()).unwrap();
        let segs = arr().ray_segments(&single);
        assert_relative_eq!(segs[0].t_enter, 0.0);
        assert_relative_eq!(segs[0].length(), 1.5, epsilon = 1e-12);
    }

    #[test]
    fn effective_distance_matches_sampling_oracle() {
        let a = arr();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..5 {
            let p = Vec3::new(
                rng.random_range(-30.0..30.0),
                rng.random_range(-40.0..40.0),
                rng.random_range(-30.0..30.0),
            );
            let q = Vec3::new(
                rng.random_range(-30.0..30.0),
                rng.random_range(-40.0..40.0),
                rng.random_range(-30.0..30.0),
            );
            let n = 100_000;
            let len = (q - p).norm();
            let inside = (0..n)
                .filter(|i| {
                    let s = (*i as f64 + 0.5) / n as f64;
                    a.containing_sensor(&(p + (q - p) * s)).is_some()
                })
                .count();
            let oracle = len * inside as f64 / n as f64;
            assert!((a.effective_distance(&p, &q) - oracle).abs() < 0.05);
            // symmetry and additivity
            let m = p + (q - p) * 0.37;
            assert_relative_eq!(a.effective_distance(&p, &q), a.effective_distance(&q, &p), epsilon = 1e-9);
            assert_relative_eq!(
                a.effective_distance(&p, &q),
                a.effective_distance(&p, &m) + a.effective_distance(&m, &q),
                epsilon = 1e-9
            );
        }
    }

    #[test]
    fn containing_sensor_rules() {
        let a = arr();
        assert_eq!(a.containing_sensor(&Vec3::new(-19.5, -33.0, 0.0)), Some(0));
        assert_eq!(a.containing_sensor(&Vec3::new(1000.0, 1000.0, 1000.0)), None);
        assert_eq!(a.containing_sensor(&Vec3::new(-18.0, -33.0, 25.0)), Some(0));
        let shared = DetectorArray::new(vec![
            Sensor::new(Vec3::new(0.0, 0.0, 0.0), Vec3::repeat(1.0)),
            Sensor::new(Vec3::new(2.0, 0.0, 0.0), Vec3::repeat(1.0)),
        ])
        .unwrap();
        assert_eq!(shared.containing_sensor(&Vec3::new(1.0, 0.0, 0.0)), Some(0));
    }

    #[test]
    fn overlap_is_rejected() {
        let err = DetectorArray::new(vec![
            Sensor::new(Vec3::zeros(), Vec3::repeat(1.0)),
            Sensor::new(Vec3::new(1.0, 0.0, 0.0), Vec3::repeat(1.0)),
        ]);
        assert!(matches!(err, Err(Error::InvalidLayout(_))));
        assert!(DetectorArray::from_json("[{\"center\":[0,0,0],\"half_extents\":[0,1,1]}]").is_err());
    }

    #[test]
    fn layout_json_round_trip() {
        let a = arr();
        let b = DetectorArray::from_json(&a.to_json()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.content_hash(), b.content_hash());
    }

    #[test]
    fn bounding_cone_encloses_all_hits() {
        let a = arr();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let origin = Vec3::new(120.0, -250.0, 140.0);
        let cone = a.bounding_cone(&origin).unwrap();
        for _ in 0..20_000 {
            let d = crate::sphere::uniform_direction(&mut rng);
            if a.max_effective_distance(&origin, &d) > 0.0 {
                assert!(d.dot(&cone.axis) >= cone.cos_half());
            }
        }
        assert!(a.bounding_cone(&Vec3::zeros()).is_err());
    }

    #[test]
    fn point_at_effective_distance_walks_segments() {
        let a = arr();
        let r = Ray::new(Vec3::new(-100.0, -33.0, 0.0), Vec3::x()).unwrap();
        let (p, s) = a.point_at_effective_distance(&r, 4.0).unwrap();
        assert_eq!(s, 7);
        assert_relative_eq!(p.x, -7.0, epsilon = 1e-12);
        assert!(a.point_at_effective_distance(&r, 12.5).is_none());
    }

    #[test]
    fn path_lengths_agree_with_separate_queries() {
        let a = arr();
        let p = Vec3::new(-60.0, -33.2, 3.0);
        let q = Vec3::new(6.0, -32.9, 1.0);
        let (d, dmax) = a.path_lengths(&p, &q);
        assert_relative_eq!(d, a.effective_distance(&p, &q), epsilon = 1e-12);
        assert_relative_eq!(dmax, a.max_effective_distance(&p, &(q - p).normalize()), epsilon = 1e-12);
        assert!(d < dmax);
    }

    #[test]
    fn geodesic_distances() {
        let s = SphereModel::default();
        assert_eq!(s.geodesic_distance(&Vec3::x(), &Vec3::x()), 0.0);
        assert_relative_eq!(s.geodesic_distance(&Vec3::x(), &-Vec3::x()), 942.477_796, epsilon = 1e-5);
        assert_relative_eq!(s.geodesic_distance(&Vec3::x(), &Vec3::y()), 471.238_898, epsilon = 1e-5);
    }
}
