//! Unit-sphere utilities: lattices, frames, uniform and von Mises–Fisher laws.

use std::f64::consts::PI;

use nalgebra::Vector3;
use rand::Rng;

pub type Vec3 = Vector3<f64>;

pub(crate) const GOLDEN_ANGLE: f64 = 2.399_963_229_728_653;

/// Unit vector for longitude/latitude in degrees; (0, 0) is +x, latitude
/// grows towards +z.
pub fn from_lon_lat_deg(lon: f64, lat: f64) -> Vec3 {
    let (lo, la) = (lon.to_radians(), lat.to_radians());
    Vec3::new(la.cos() * lo.cos(), la.cos() * lo.sin(), la.sin())
}

pub fn to_lon_lat_deg(u: &Vec3) -> (f64, f64) {
    (u.y.atan2(u.x).to_degrees(), u.z.clamp(-1.0, 1.0).asin().to_degrees())
}

/// Angle between unit vectors, robust near 0 and π.
pub fn angle_between(u: &Vec3, v: &Vec3) -> f64 {
    u.cross(v).norm().atan2(u.dot(v))
}

/// Near-uniform deterministic lattice of `n` points.
pub fn fibonacci_sphere(n: usize) -> Vec<Vec3> {
    (0..n)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = GOLDEN_ANGLE * i as f64;
            Vec3::new(r * phi.cos(), r * phi.sin(), z)
        })
        .collect()
}

/// Orthonormal pair completing `axis` to a right-handed frame.
pub fn tangent_basis(axis: &Vec3) -> (Vec3, Vec3) {
    let helper = if axis.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let e1 = axis.cross(&helper).normalize();
    let e2 = axis.cross(&e1);
    (e1, e2)
}

/// Direction at polar angle `acos(cos_theta)` and azimuth `phi` about `axis`.
pub fn direction_about(axis: &Vec3, cos_theta: f64, phi: f64) -> Vec3 {
    let (e1, e2) = tangent_basis(axis);
    let sin_theta = (1.0 - cos_theta * cos_theta).max(0.0).sqrt();
    (axis * cos_theta + (e1 * phi.cos() + e2 * phi.sin()) * sin_theta).normalize()
}

pub fn uniform_direction<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    let z: f64 = rng.random_range(-1.0..=1.0);
    let phi: f64 = rng.random_range(0.0..2.0 * PI);
    let r = (1.0 - z * z).max(0.0).sqrt();
    Vec3::new(r * phi.cos(), r * phi.sin(), z)
}

/// Uniform direction inside the cone `{v : v·axis >= cos_half}`.
pub fn uniform_in_cone<R: Rng + ?Sized>(axis: &Vec3, cos_half: f64, rng: &mut R) -> Vec3 {
    let c = rng.random_range(cos_half..=1.0);
    let phi = rng.random_range(0.0..2.0 * PI);
    direction_about(axis, c, phi)
}

/// Density of the uniform law on the sphere, per steradian.
pub const UNIFORM_DENSITY: f64 = 1.0 / (4.0 * PI);

/// Von Mises–Fisher law on the 2-sphere.
#[derive(Debug, Clone, Copy)]
pub struct VonMisesFisher {
    pub mean: Vec3,
    pub kappa: f64,
}

impl VonMisesFisher {
    pub fn new(mean: Vec3, kappa: f64) -> Self {
        Self {
            mean: mean.normalize(),
            kappa,
        }
    }

    /// log of κ/(4π sinh κ), stable for large κ.
    pub fn log_normalizer(kappa: f64) -> f64 {
        if kappa < 1e-8 {
            return -(4.0 * PI).ln();
        }
        kappa.ln() - (2.0 * PI).ln() - kappa - (-(-2.0 * kappa).exp()).ln_1p()
    }

    /// Log density per steradian.
    pub fn log_pdf(&self, x: &Vec3) -> f64 {
        Self::log_normalizer(self.kappa) + self.kappa * self.mean.dot(x)
    }

    pub fn pdf(&self, x: &Vec3) -> f64 {
        self.log_pdf(x).exp()
    }

    /// Wood's inversion for the cosine to the mean direction.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec3 {
        if self.kappa < 1e-8 {
            return uniform_direction(rng);
        }
        let u: f64 = rng.random();
        let w = 1.0 + (u + (1.0 - u) * (-2.0 * self.kappa).exp()).ln() / self.kappa;
        let phi = rng.random_range(0.0..2.0 * PI);
        direction_about(&self.mean, w.clamp(-1.0, 1.0), phi)
    }
}

/// Exact nearest-point lookup over a fixed set of unit vectors.
///
/// Directions are bucketed on the six faces of a cube map. Every cell keeps
/// the points that can be nearest to some direction inside it, which is
/// guaranteed by padding the cell radius with the covering radius of the set.
#[derive(Debug, Clone)]
pub struct NearestIndex {
    points: Vec<Vec3>,
    res: usize,
    cells: Vec<Vec<u32>>,
}

fn cube_cell(u: &Vec3, res: usize) -> usize {
    let a = u.abs();
    let (face, s, t, m) = if a.x >= a.y && a.x >= a.z {
        (if u.x > 0.0 { 0 } else { 1 }, u.y, u.z, a.x)
    } else if a.y >= a.z {
        (if u.y > 0.0 { 2 } else { 3 }, u.x, u.z, a.y)
    } else {
        (if u.z > 0.0 { 4 } else { 5 }, u.x, u.y, a.z)
    };
    let idx = |v: f64| (((v / m + 1.0) * 0.5 * res as f64) as usize).min(res - 1);
    (face * res + idx(s)) * res + idx(t)
}

fn cube_cell_center(cell: usize, res: usize) -> (Vec3, f64) {
    let face = cell / (res * res);
    let (i, j) = ((cell / res) % res, cell % res);
    let c = |k: usize, off: f64| (k as f64 + off) / res as f64 * 2.0 - 1.0;
    let map = |s: f64, t: f64| -> Vec3 {
        match face {
            0 => Vec3::new(1.0, s, t),
            1 => Vec3::new(-1.0, s, t),
            2 => Vec3::new(s, 1.0, t),
            3 => Vec3::new(s, -1.0, t),
            4 => Vec3::new(s, t, 1.0),
            _ => Vec3::new(s, t, -1.0),
        }
        .normalize()
    };
    let center = map(c(i, 0.5), c(j, 0.5));
    let radius = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)]
        .iter()
        .map(|&(a, b)| angle_between(&center, &map(c(i, a), c(j, b))))
        .fold(0.0, f64::max);
    (center, radius)
}

impl NearestIndex {
    pub fn new(points: Vec<Vec3>) -> Self {
        assert!(!points.is_empty());
        let res = ((points.len() as f64 / 6.0).sqrt().ceil() as usize).clamp(1, 64);
        // covering radius, estimated on a dense probe lattice and padded
        let probes = fibonacci_sphere(points.len() * 16);
        let cover = probes
            .iter()
            .map(|p| {
                points
                    .iter()
                    .map(|q| p.dot(q))
                    .fold(f64::NEG_INFINITY, f64::max)
                    .clamp(-1.0, 1.0)
                    .acos()
            })
            .fold(0.0, f64::max)
            * 1.5
            + 1e-3;
        let cells = (0..6 * res * res)
            .map(|cell| {
                let (center, radius) = cube_cell_center(cell, res);
                let cos_lim = (radius + cover).min(PI).cos();
                points
                    .iter()
                    .enumerate()
                    .filter(|(_, q)| q.dot(&center) >= cos_lim)
                    .map(|(i, _)| i as u32)
                    .collect()
            })
            .collect();
        Self { points, res, cells }
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    /// Index of the point closest to `u` (ties to the lowest index).
    pub fn nearest(&self, u: &Vec3) -> usize {
        let mut best = (f64::NEG_INFINITY, 0usize);
        for &i in &self.cells[cube_cell(u, self.res)] {
            let d = self.points[i as usize].dot(u);
            if d > best.0 {
                best = (d, i as usize);
            }
        }
        best.1
    }
}
