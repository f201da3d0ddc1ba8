//! Precomputed first-direction prior on a lattice of source positions.
//!
//! For each lattice node the rejection sampler is run from the node's source
//! position and the accepted directions are smoothed with a Gaussian kernel
//! in the gnomonic plane tangent to the node's view axis (the direction from
//! the source to the array centre). A query from an arbitrary source uses the
//! nearest node, rotating the queried direction so that the two view axes
//! coincide.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::Rotation3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{sample_first_direction_in_cone, DirectionPrior, DEFAULT_PROPOSAL_CAP};
use crate::error::{Error, Result};
use crate::geometry::{DetectorArray, SphereModel};
use crate::physics::AttenuationTable;
use crate::rng;
use crate::sphere::{fibonacci_sphere, tangent_basis, NearestIndex, Vec3};

const MAGIC: &[u8; 8] = b"CMPLUT02";
pub const LUT_DIR_ENV: &str = "COMPTON_LUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LutParams {
    pub n_nodes: usize,
    /// Accepted directions per node.
    pub n_samples: usize,
    /// Cells per side of each node's tangent-plane grid.
    pub grid: usize,
    /// Multiplier on the normal-reference bandwidth. The reference rule
    /// undersmooths the sharp-edged silhouette of the array; 3 keeps the
    /// sampling noise of the peak near 2%.
    pub bandwidth_scale: f64,
    pub seed: u64,
}

impl Default for LutParams {
    fn default() -> Self {
        Self {
            n_nodes: 2563,
            n_samples: 10_000,
            grid: 64,
            bandwidth_scale: 3.0,
            seed: 0x5eed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct NodeGrid {
    axis: Vec3,
    e1: Vec3,
    e2: Vec3,
    half_width: f64,
    bandwidth: f64,
    /// Density per unit tangent-plane area, row-major in (x, y).
    data: Vec<f32>,
}

impl NodeGrid {
    fn plane_density(&self, x: f64, y: f64, n: usize) -> f64 {
        let cell = 2.0 * self.half_width / n as f64;
        // cell centres sit at −W + (i + ½)·cell
        let fx = (x + self.half_width) / cell - 0.5;
        let fy = (y + self.half_width) / cell - 0.5;
        if fx < -0.5 || fy < -0.5 || fx > n as f64 - 0.5 || fy > n as f64 - 0.5 {
            return 0.0;
        }
        let (ix, iy) = (fx.floor(), fy.floor());
        let (tx, ty) = (fx - ix, fy - iy);
        let get = |i: f64, j: f64| -> f64 {
            if i < 0.0 || j < 0.0 || i >= n as f64 || j >= n as f64 {
                0.0
            } else {
                self.data[i as usize * n + j as usize] as f64
            }
        };
        (1.0 - tx) * (1.0 - ty) * get(ix, iy)
            + tx * (1.0 - ty) * get(ix + 1.0, iy)
            + (1.0 - tx) * ty * get(ix, iy + 1.0)
            + tx * ty * get(ix + 1.0, iy + 1.0)
    }

    /// Density per steradian of `v` in this node's frame.
    fn density(&self, v: &Vec3, n: usize) -> f64 {
        let c = v.dot(&self.axis);
        if c <= 0.0 {
            return 0.0;
        }
        let (x, y) = (v.dot(&self.e1) / c, v.dot(&self.e2) / c);
        self.plane_density(x, y, n) / (c * c * c)
    }
}

/// Gnomonic-plane kernel density of accepted directions, one per node.
#[derive(Debug, Clone)]
pub struct DirectionPriorLut {
    e0: f64,
    radius: f64,
    center: Vec3,
    params: LutParams,
    index: NearestIndex,
    nodes: Vec<NodeGrid>,
}

fn gaussian_blur(data: &mut [f64], n: usize, sigma_cells: f64) {
    let r = (4.0 * sigma_cells).ceil() as isize;
    let kernel: Vec<f64> = (-r..=r)
        .map(|k| (-0.5 * (k as f64 / sigma_cells).powi(2)).exp())
        .collect();
    let mut tmp = vec![0.0; n * n];
    for pass in 0..2 {
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for (kk, w) in kernel.iter().enumerate() {
                    let o = kk as isize - r;
                    let (ii, jj) = if pass == 0 {
                        (i as isize + o, j as isize)
                    } else {
                        (i as isize, j as isize + o)
                    };
                    if ii >= 0 && jj >= 0 && (ii as usize) < n && (jj as usize) < n {
                        acc += w * data[ii as usize * n + jj as usize];
                    }
                }
                tmp[i * n + j] = acc;
            }
        }
        data.copy_from_slice(&tmp);
    }
}

/// Kernel density of tangent-plane points on an `n`×`n` grid. Returns the
/// grid half width, the bandwidth and the normalized cell values.
fn plane_kde(points: &[(f64, f64)], n: usize, scale: f64) -> (f64, f64, Vec<f32>) {
    let m = points.len() as f64;
    let mean = points.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0 / m, a.1 + p.1 / m));
    let var = points
        .iter()
        .map(|p| (p.0 - mean.0).powi(2) + (p.1 - mean.1).powi(2))
        .sum::<f64>()
        / (2.0 * m);
    // two-dimensional normal-reference rule
    let h = scale * var.sqrt() * m.powf(-1.0 / 6.0);
    let reach = points.iter().map(|p| p.0.abs().max(p.1.abs())).fold(0.0, f64::max);
    let w = reach + 4.0 * h;
    let cell = 2.0 * w / n as f64;
    let mut hist = vec![0.0; n * n];
    for &(x, y) in points {
        // linear binning onto cell centres
        let fx = (x + w) / cell - 0.5;
        let fy = (y + w) / cell - 0.5;
        let (ix, iy) = (fx.floor(), fy.floor());
        let (tx, ty) = (fx - ix, fy - iy);
        for (di, wx) in [(0.0, 1.0 - tx), (1.0, tx)] {
            for (dj, wy) in [(0.0, 1.0 - ty), (1.0, ty)] {
                let (i, j) = (ix + di, iy + dj);
                if i >= 0.0 && j >= 0.0 && i < n as f64 && j < n as f64 {
                    hist[i as usize * n + j as usize] += wx * wy;
                }
            }
        }
    }
    gaussian_blur(&mut hist, n, h / cell);
    let total: f64 = hist.iter().sum::<f64>() * cell * cell;
    let data = hist.iter().map(|v| (v / total) as f32).collect();
    (w, h, data)
}

fn node_frame(source: &Vec3, center: &Vec3) -> (Vec3, Vec3, Vec3) {
    let axis = (center - source).normalize();
    let (e1, e2) = tangent_basis(&axis);
    (axis, e1, e2)
}

/// Kernel density of `n_samples` fresh accepted directions from `source`,
/// in the same representation the table uses for its nodes.
fn build_node(
    array: &DetectorArray,
    mu: f64,
    source: &Vec3,
    params: &LutParams,
    rng: &mut rng::StreamRng,
) -> Result<NodeGrid> {
    let (axis, e1, e2) = node_frame(source, &array.center());
    let cone = array.bounding_cone(source)?;
    let mut pts = Vec::with_capacity(params.n_samples);
    for _ in 0..params.n_samples {
        let (d, _) = sample_first_direction_in_cone(array, source, &cone, mu, DEFAULT_PROPOSAL_CAP, rng)?;
        let c = d.dot(&axis);
        pts.push((d.dot(&e1) / c, d.dot(&e2) / c));
    }
    let (half_width, bandwidth, data) = plane_kde(&pts, params.grid, params.bandwidth_scale);
    Ok(NodeGrid {
        axis,
        e1,
        e2,
        half_width,
        bandwidth,
        data,
    })
}

impl DirectionPriorLut {
    pub fn build(
        array: &DetectorArray,
        table: &AttenuationTable,
        e0: f64,
        sphere: &SphereModel,
        params: LutParams,
    ) -> Result<Self> {
        if params.n_samples < 2 || params.n_nodes == 0 || params.grid < 4 {
            return Err(Error::Config(format!("invalid LUT parameters {params:?}")));
        }
        let mu = table.mu_total(e0)?;
        let dirs = fibonacci_sphere(params.n_nodes);
        let nodes = dirs
            .par_iter()
            .enumerate()
            .map(|(i, u)| {
                let mut r = rng::stream(params.seed, "lut-node", &[i as u64]);
                build_node(array, mu, &sphere.point(u), &params, &mut r)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            e0,
            radius: sphere.radius,
            center: array.center(),
            params,
            index: NearestIndex::new(dirs),
            nodes,
        })
    }

    pub fn params(&self) -> &LutParams {
        &self.params
    }

    pub fn node_directions(&self) -> &[Vec3] {
        self.index.points()
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// Kernel bandwidth (tangent-plane units) used at node `i`.
    pub fn bandwidth(&self, i: usize) -> f64 {
        self.nodes[i].bandwidth
    }

    /// Density at node `node` for a source at `source`.
    pub fn density_at_node(&self, node: usize, source: &Vec3, theta1: &Vec3) -> f64 {
        let g = &self.nodes[node];
        let q_axis = (self.center - source).normalize();
        let v = match Rotation3::rotation_between(&q_axis, &g.axis) {
            Some(rot) => rot * theta1,
            None => return 0.0,
        };
        g.density(&v, self.params.grid)
    }

    pub fn nearest_node(&self, source: &Vec3) -> usize {
        self.index.nearest(&source.normalize())
    }

    /// Fresh kernel estimate from `source`, built exactly as a node would be.
    /// Used to validate interpolation error.
    pub fn fresh_estimate(
        array: &DetectorArray,
        table: &AttenuationTable,
        e0: f64,
        source: &Vec3,
        params: &LutParams,
        seed: u64,
    ) -> Result<impl Fn(&Vec3) -> f64> {
        let mu = table.mu_total(e0)?;
        let mut r = rng::stream(seed, "lut-fresh", &[]);
        let g = build_node(array, mu, source, params, &mut r)?;
        let n = params.grid;
        Ok(move |v: &Vec3| g.density(v, n))
    }

    fn cache_key(array: &DetectorArray, e0: f64, radius: f64, params: &LutParams) -> String {
        let mut h = Sha256::new();
        h.update(MAGIC);
        h.update(array.content_hash().as_bytes());
        h.update(e0.to_le_bytes());
        h.update(radius.to_le_bytes());
        h.update(serde_json::to_vec(params).expect("params serialize"));
        hex::encode(&h.finalize()[..12])
    }

    pub fn cache_path(dir: &Path, array: &DetectorArray, e0: f64, radius: f64, params: &LutParams) -> PathBuf {
        dir.join(format!("lut-{}.bin", Self::cache_key(array, e0, radius, params)))
    }

    /// Cache directory from `COMPTON_LUT_DIR`, if set.
    pub fn env_dir() -> Option<PathBuf> {
        std::env::var_os(LUT_DIR_ENV).map(PathBuf::from)
    }

    /// Load the table from `dir` when a matching file exists, otherwise build
    /// it and store it there.
    pub fn load_or_build(
        array: &DetectorArray,
        table: &AttenuationTable,
        e0: f64,
        sphere: &SphereModel,
        params: LutParams,
        dir: Option<&Path>,
    ) -> Result<Self> {
        let Some(dir) = dir else {
            return Self::build(array, table, e0, sphere, params);
        };
        let path = Self::cache_path(dir, array, e0, sphere.radius, &params);
        if path.exists() {
            match Self::read(&path, array) {
                Ok(lut) => return Ok(lut),
                Err(e) => log::warn!("ignoring unreadable LUT cache {}: {e}", path.display()),
            }
        }
        log::info!("building direction LUT ({} nodes) into {}", params.n_nodes, path.display());
        let lut = Self::build(array, table, e0, sphere, params)?;
        std::fs::create_dir_all(dir)?;
        // write to a temporary name then rename so readers never see a partial file
        let tmp = path.with_extension(format!("tmp{}", std::process::id()));
        lut.write(&tmp)?;
        std::fs::rename(&tmp, &path)?;
        Ok(lut)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        let header = serde_json::to_vec(&(self.e0, self.radius, self.params))?;
        w.write_all(MAGIC)?;
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        w.write_all(&header)?;
        for g in &self.nodes {
            for v in [g.axis.x, g.axis.y, g.axis.z, g.half_width, g.bandwidth] {
                w.write_all(&v.to_le_bytes())?;
            }
            for v in &g.data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path, array: &DetectorArray) -> Result<Self> {
        let bad = |m: &str| Error::Data(format!("{}: {m}", path.display()));
        let mut r = BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(bad("not a direction LUT file"));
        }
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let mut header = vec![0u8; u64::from_le_bytes(b8) as usize];
        r.read_exact(&mut header)?;
        let (e0, radius, params): (f64, f64, LutParams) = serde_json::from_slice(&header)?;
        let center = array.center();
        let dirs = fibonacci_sphere(params.n_nodes);
        let mut nodes = Vec::with_capacity(params.n_nodes);
        let mut b4 = [0u8; 4];
        for _ in 0..params.n_nodes {
            let mut f = [0.0; 5];
            for v in f.iter_mut() {
                r.read_exact(&mut b8)?;
                *v = f64::from_le_bytes(b8);
            }
            let axis = Vec3::new(f[0], f[1], f[2]);
            let (e1, e2) = tangent_basis(&axis);
            let mut data = vec![0f32; params.grid * params.grid];
            for v in data.iter_mut() {
                r.read_exact(&mut b4)?;
                *v = f32::from_le_bytes(b4);
            }
            nodes.push(NodeGrid {
                axis,
                e1,
                e2,
                half_width: f[3],
                bandwidth: f[4],
                data,
            });
        }
        if r.read(&mut b4)? != 0 {
            return Err(bad("trailing bytes"));
        }
        Ok(Self {
            e0,
            radius,
            center,
            params,
            index: NearestIndex::new(dirs),
            nodes,
        })
    }
}

impl DirectionPrior for DirectionPriorLut {
    fn energy(&self) -> f64 {
        self.e0
    }

    fn density(&self, source: &Vec3, theta1: &Vec3) -> f64 {
        self.density_at_node(self.nearest_node(source), source, theta1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn small_params() -> LutParams {
        LutParams {
            n_nodes: 12,
            n_samples: 4000,
            grid: 48,
            bandwidth_scale: 1.0,
            seed: 3,
        }
    }

    #[test]
    fn plane_kde_integrates_to_one() {
        let pts: Vec<(f64, f64)> = (0..500)
            .map(|i| {
                let t = i as f64 * 0.37;
                (0.05 * t.sin(), 0.03 * (1.3 * t).cos())
            })
            .collect();
        let (w, _, data) = plane_kde(&pts, 40, 1.0);
        let cell = 2.0 * w / 40.0;
        let s: f64 = data.iter().map(|v| *v as f64).sum::<f64>() * cell * cell;
        assert_relative_eq!(s, 1.0, epsilon = 1e-5);
    }

    #[test]
    fn node_query_and_cache_round_trip() {
        let array = DetectorArray::paper_4x7();
        let table = AttenuationTable::lyso();
        let sphere = SphereModel::default();
        let lut = DirectionPriorLut::build(&array, &table, 0.6617, &sphere, small_params()).unwrap();
        let node = 5;
        let src = sphere.point(&lut.node_directions()[node]);
        assert_eq!(lut.nearest_node(&src), node);
        let toward = (array.center() - src).normalize();
        let v = lut.density(&src, &toward);
        assert!(v > 0.0);
        assert_eq!(v, lut.density_at_node(node, &src, &toward));
        assert_eq!(lut.density(&src, &-toward), 0.0);

        let dir = tempfile::tempdir().unwrap();
        let a = DirectionPriorLut::load_or_build(&array, &table, 0.6617, &sphere, small_params(), Some(dir.path()))
            .unwrap();
        let path = DirectionPriorLut::cache_path(dir.path(), &array, 0.6617, 300.0, &small_params());
        assert!(path.exists());
        let b = DirectionPriorLut::read(&path, &array).unwrap();
        assert_eq!(a.density(&src, &toward), b.density(&src, &toward));
        assert_eq!(a.density(&src, &toward), v);
    }
}
