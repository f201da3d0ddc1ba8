//! Back-projection baseline and the statistics used to score localizations.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::NoisyEvent;
use crate::geometry::SphereModel;
use crate::physics::{compton_cosine, max_deposit};
use crate::sphere::{angle_between, fibonacci_sphere, Vec3, GOLDEN_ANGLE};
use crate::stats::quantile_sorted;

pub const DEFAULT_PIXELS: usize = 10_242;
/// Angular width of the back-projected cone ridge, rad.
pub const DEFAULT_BP_WIDTH: f64 = 0.05;
/// Minimum separation between distinct back-projection modes, rad.
pub const DEFAULT_MODE_SEPARATION: f64 = 10.0 * std::f64::consts::PI / 180.0;

/// Fibonacci pixelization of the unit sphere. Pixels are ordered by
/// decreasing z, which the neighbourhood search relies on.
///
/// In the area-preserving cylinder (azimuth, z) the Fibonacci points form an
/// exact lattice, so a direction belongs to the nearest lattice point in that
/// plane. Lattice cells are congruent; the parts of the cells hanging over a
/// pole are returned by the lattice's point symmetry about the pole line, so
/// every pixel covers exactly 4π/P.
#[derive(Debug, Clone)]
pub struct SphereGrid {
    points: Vec<Vec3>,
    lattice: CylinderLattice,
}

#[derive(Debug, Clone)]
struct CylinderLattice {
    n: i64,
    /// Reduced basis vectors in (azimuth, z).
    basis: [[f64; 2]; 2],
    /// Fibonacci index step carried by each reduced vector.
    steps: [i64; 2],
    /// Index 0 sits at `origin`.
    origin: [f64; 2],
    inverse: [[f64; 2]; 2],
}

impl CylinderLattice {
    fn new(n: usize) -> Self {
        let z_step = -2.0 / n as f64;
        // (index step, 2π turns) with the vector it spans
        let mut u = (1i64, [GOLDEN_ANGLE, z_step]);
        let mut v = (0i64, [2.0 * std::f64::consts::PI, 0.0]);
        let norm2 = |a: &[f64; 2]| a[0] * a[0] + a[1] * a[1];
        let dot = |a: &[f64; 2], b: &[f64; 2]| a[0] * b[0] + a[1] * b[1];
        if norm2(&u.1) > norm2(&v.1) {
            std::mem::swap(&mut u, &mut v);
        }
        // Lagrange reduction
        loop {
            let q = (dot(&u.1, &v.1) / norm2(&u.1)).round();
            if q != 0.0 {
                v = (v.0 - q as i64 * u.0, [v.1[0] - q * u.1[0], v.1[1] - q * u.1[1]]);
            }
            if norm2(&v.1) >= norm2(&u.1) {
                break;
            }
            std::mem::swap(&mut u, &mut v);
        }
        let basis = [u.1, v.1];
        let det = basis[0][0] * basis[1][1] - basis[1][0] * basis[0][1];
        let inverse = [
            [basis[1][1] / det, -basis[1][0] / det],
            [-basis[0][1] / det, basis[0][0] / det],
        ];
        Self {
            n: n as i64,
            basis,
            steps: [u.0, v.0],
            origin: [0.0, 1.0 - 1.0 / n as f64],
            inverse,
        }
    }

    fn cell(&self, u: &Vec3) -> usize {
        let d = [u.y.atan2(u.x) - self.origin[0], u.z.clamp(-1.0, 1.0) - self.origin[1]];
        let a = self.inverse[0][0] * d[0] + self.inverse[0][1] * d[1];
        let b = self.inverse[1][0] * d[0] + self.inverse[1][1] * d[1];
        let (a0, b0) = (a.floor() as i64, b.floor() as i64);
        let mut best = (f64::INFINITY, 0i64);
        for i in a0 - 1..=a0 + 2 {
            for j in b0 - 1..=b0 + 2 {
                let p0 = i as f64 * self.basis[0][0] + j as f64 * self.basis[1][0];
                let p1 = i as f64 * self.basis[0][1] + j as f64 * self.basis[1][1];
                let dist = (d[0] - p0).powi(2) + (d[1] - p1).powi(2);
                if dist < best.0 {
                    best = (dist, i * self.steps[0] + j * self.steps[1]);
                }
            }
        }
        let k = best.1;
        // index -1-k mirrors k through the north pole line, 2n-1-k through the south
        let k = if k < 0 { -1 - k } else if k >= self.n { 2 * self.n - 1 - k } else { k };
        k.clamp(0, self.n - 1) as usize
    }
}

impl SphereGrid {
    pub fn new(pixels: usize) -> Result<Self> {
        if pixels < 2 {
            return Err(Error::Config(format!("sphere grid needs >= 2 pixels, got {pixels}")));
        }
        Ok(Self { points: fibonacci_sphere(pixels), lattice: CylinderLattice::new(pixels) })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pixels(&self) -> &[Vec3] {
        &self.points
    }

    pub fn pixel(&self, i: usize) -> Vec3 {
        self.points[i]
    }

    pub fn pixel_of(&self, u: &Vec3) -> usize {
        self.lattice.cell(u)
    }

    pub fn pixel_area(&self) -> f64 {
        4.0 * std::f64::consts::PI / self.len() as f64
    }

    /// Typical angular spacing between neighbouring pixels, rad.
    pub fn spacing(&self) -> f64 {
        self.pixel_area().sqrt()
    }

    /// Pixels within angular `radius` of pixel `i` (including `i`).
    pub fn neighbours(&self, i: usize, radius: f64) -> Vec<usize> {
        let pts = self.pixels();
        let z = pts[i].z;
        // the chord bounds |Δz|, and the chord is shorter than the arc
        let from = pts.partition_point(|p| p.z > z + radius);
        let to = pts.partition_point(|p| p.z >= z - radius);
        let cos_r = radius.cos();
        (from..to).filter(|&j| pts[j].dot(&pts[i]) >= cos_r).collect()
    }
}

impl Default for SphereGrid {
    fn default() -> Self {
        Self::new(DEFAULT_PIXELS).expect("default pixel count is valid")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BpImage {
    pub intensity: Vec<f64>,
    /// Events whose first deposit admits no Compton angle at E0.
    pub skipped: usize,
}

impl BpImage {
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, v) in self.intensity.iter().enumerate() {
            if *v > self.intensity[best] {
                best = i;
            }
        }
        best
    }

    pub fn write_csv<W: Write>(&self, grid: &SphereGrid, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["pixel_index", "ux", "uy", "uz", "intensity"])?;
        for (i, (u, v)) in grid.pixels().iter().zip(&self.intensity).enumerate() {
            out.write_record(&[
                i.to_string(),
                u.x.to_string(),
                u.y.to_string(),
                u.z.to_string(),
                v.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_csv_file(&self, grid: &SphereGrid, path: &Path) -> Result<()> {
        self.write_csv(grid, std::fs::File::create(path)?)
    }
}

struct Cone {
    apex: Vec3,
    axis: Vec3,
    omega: f64,
}

fn event_key(e: &NoisyEvent) -> [u64; 8] {
    let (a, b) = (e.first.position, e.second.position);
    [
        a[0].to_bits(),
        a[1].to_bits(),
        a[2].to_bits(),
        e.first.deposit.to_bits(),
        b[0].to_bits(),
        b[1].to_bits(),
        b[2].to_bits(),
        e.second.deposit.to_bits(),
    ]
}

/// Accumulate each event's Compton cone on the sphere of radius `sphere.radius`
/// as a Gaussian ridge of angular width `width`.
pub fn back_project(
    events: &[NoisyEvent],
    e0: f64,
    sphere: &SphereModel,
    grid: &SphereGrid,
    width: f64,
) -> BpImage {
    // canonical order makes the floating-point sum independent of input order
    let mut ordered: Vec<&NoisyEvent> = events.iter().collect();
    ordered.sort_by_key(|e| event_key(e));
    let mut skipped = 0;
    let cones: Vec<Cone> = ordered
        .iter()
        .filter_map(|e| {
            let e1 = e.first.deposit;
            let (r1, r2) = (e.first.pos(), e.second.pos());
            if !(e1 < max_deposit(e0)) || e1 < 0.0 || r1 == r2 {
                skipped += 1;
                return None;
            }
            Some(Cone {
                apex: r1,
                axis: (r1 - r2).normalize(),
                omega: compton_cosine(e0, e1).clamp(-1.0, 1.0).acos(),
            })
        })
        .collect();
    let inv = 1.0 / (2.0 * width * width);
    let intensity = grid
        .pixels()
        .par_iter()
        .map(|u| {
            let p = sphere.point(u);
            cones
                .iter()
                .map(|c| {
                    let v = p - c.apex;
                    let ang = (v.dot(&c.axis) / v.norm()).clamp(-1.0, 1.0).acos();
                    let r = ang - c.omega;
                    (-r * r * inv).exp()
                })
                .sum()
        })
        .collect();
    BpImage { intensity, skipped }
}

/// Pixels equal to the maximum of the image over a geodesic disc of
/// `radius` (grey-scale dilation), sorted by decreasing intensity.
pub fn local_maxima(grid: &SphereGrid, image: &BpImage, radius: f64) -> Vec<usize> {
    let v = &image.intensity;
    let mut peaks: Vec<usize> = (0..grid.len())
        .into_par_iter()
        .filter(|&i| v[i] > 0.0 && grid.neighbours(i, radius).iter().all(|&j| v[j] <= v[i]))
        .collect();
    peaks.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
    peaks
}

/// Greedily extend `chosen` to `k` directions, each time adding the candidate
/// farthest from everything already chosen.
pub fn farthest_point_selection(candidates: &[Vec3], mut chosen: Vec<Vec3>, k: usize) -> Vec<Vec3> {
    if chosen.is_empty() {
        if let Some(first) = candidates.first() {
            chosen.push(*first);
        }
    }
    while chosen.len() < k {
        let best = candidates.iter().max_by(|a, b| {
            let da = chosen.iter().map(|c| angle_between(a, c)).fold(f64::INFINITY, f64::min);
            let db = chosen.iter().map(|c| angle_between(b, c)).fold(f64::INFINITY, f64::min);
            da.total_cmp(&db)
        });
        match best {
            Some(b) => chosen.push(*b),
            None => break,
        }
    }
    chosen
}

/// The `k` strongest, mutually separated modes of a back-projection image.
pub fn bp_modes(grid: &SphereGrid, image: &BpImage, k: usize, min_separation: f64) -> Result<Vec<Vec3>> {
    if k == 0 {
        return Err(Error::Config("number of modes must be >= 1".into()));
    }
    if k == 1 {
        return Ok(vec![grid.pixel(image.argmax())]);
    }
    let mut chosen: Vec<Vec3> = Vec::with_capacity(k);
    for i in local_maxima(grid, image, 2.5 * grid.spacing()) {
        let u = grid.pixel(i);
        if chosen.iter().all(|c| angle_between(c, &u) >= min_separation) {
            chosen.push(u);
            if chosen.len() == k {
                return Ok(chosen);
            }
        }
    }
    // fall back to spreading out over the brightest pixels
    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.sort_by(|&a, &b| image.intensity[b].total_cmp(&image.intensity[a]).then(a.cmp(&b)));
    let top: Vec<Vec3> = order
        .iter()
        .take((grid.len() / 50).max(k))
        .map(|&i| grid.pixel(i))
        .collect();
    if chosen.is_empty() {
        chosen.push(top[0]);
    }
    Ok(farthest_point_selection(&top, chosen, k))
}

/// Unit resultant of a set of directions.
pub fn mean_direction(samples: &[Vec3]) -> Result<Vec3> {
    let s: Vec3 = samples.iter().sum();
    let n = s.norm();
    if !(n > 1e-9) {
        return Err(Error::UndefinedMean(n));
    }
    Ok(s / n)
}

/// Resultant direction scaled onto the sphere.
pub fn spherical_mean(samples: &[Vec3], sphere: &SphereModel) -> Result<Vec3> {
    Ok(sphere.point(&mean_direction(samples)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub q0: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub q4: f64,
    pub iqr: f64,
}

/// Whisker-capped five-number summary.
pub fn box_stats(values: &[f64]) -> Result<BoxStats> {
    if values.len() < 4 {
        return Err(Error::Data(format!("box stats need >= 4 values, got {}", values.len())));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let q1 = quantile_sorted(&v, 0.25);
    let q3 = quantile_sorted(&v, 0.75);
    let iqr = q3 - q1;
    Ok(BoxStats {
        q0: v[0].max(q1 - 1.5 * iqr),
        q1,
        median: quantile_sorted(&v, 0.5),
        q3,
        q4: v[v.len() - 1].min(q3 + 1.5 * iqr),
        iqr,
    })
}

/// Mean-centred geodesic balls holding posterior mass 1 − α for each α.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CredibleBalls {
    pub mean: [f64; 3],
    pub alphas: Vec<f64>,
    /// Ball radii, rad; negative means the empty region.
    pub radii: Vec<f64>,
}

impl CredibleBalls {
    pub fn from_samples(samples: &[Vec3], alphas: &[f64]) -> Result<Self> {
        let mean = mean_direction(samples)?;
        let mut dist: Vec<f64> = samples.iter().map(|s| angle_between(s, &mean)).collect();
        dist.sort_by(f64::total_cmp);
        let radii = alphas
            .iter()
            .map(|&a| {
                let mass = 1.0 - a;
                if mass <= 0.0 {
                    -1.0
                } else if mass >= 1.0 {
                    std::f64::consts::PI
                } else {
                    quantile_sorted(&dist, mass)
                }
            })
            .collect();
        Ok(Self { mean: mean.into(), alphas: alphas.to_vec(), radii })
    }

    pub fn contains(&self, j: usize, truth: &Vec3) -> bool {
        angle_between(&Vec3::from(self.mean), truth) <= self.radii[j]
    }
}

/// Standard α levels 0.1, 0.2, …, 0.9.
pub fn default_alphas() -> Vec<f64> {
    (1..=9).map(|i| i as f64 / 10.0).collect()
}

/// Fraction of repeats whose truth lies inside the 1 − α ball, per α.
pub fn coverage_from_balls(balls: &[CredibleBalls], truths: &[Vec3]) -> Result<Vec<f64>> {
    if balls.len() != truths.len() {
        return Err(Error::Data(format!(
            "{} credible regions but {} truths",
            balls.len(),
            truths.len()
        )));
    }
    if balls.len() < 10 {
        return Err(Error::Data(format!("coverage needs >= 10 repeats, got {}", balls.len())));
    }
    let n_alpha = balls[0].alphas.len();
    if balls.iter().any(|b| b.alphas != balls[0].alphas) {
        return Err(Error::Data("credible regions use different alpha levels".into()));
    }
    Ok((0..n_alpha)
        .map(|j| {
            let hits = balls.iter().zip(truths).filter(|(b, t)| b.contains(j, t)).count();
            hits as f64 / balls.len() as f64
        })
        .collect())
}

pub fn credible_coverage(chains: &[Vec<Vec3>], truths: &[Vec3], alphas: &[f64]) -> Result<Vec<f64>> {
    let balls = chains
        .iter()
        .map(|c| CredibleBalls::from_samples(c, alphas))
        .collect::<Result<Vec<_>>>()?;
    coverage_from_balls(&balls, truths)
}

fn chordal2(a: &Vec3, b: &Vec3) -> f64 {
    (a - b).norm_squared()
}

/// Σ squared chordal distance of samples to their cluster's unit centroid.
pub fn within_cluster_sse(clusters: &[&[Vec3]]) -> f64 {
    clusters
        .iter()
        .filter(|c| !c.is_empty())
        .map(|c| {
            let s: Vec3 = c.iter().sum();
            let m = if s.norm() > 0.0 { s.normalize() } else { c[0] };
            c.iter().map(|x| chordal2(x, &m)).sum::<f64>()
        })
        .sum()
}

/// Pool two chains and split them into two clusters by K-means with the
/// chordal metric, starting from the chains' own labels.
pub fn deentangle(chain1: &[Vec3], chain2: &[Vec3]) -> Result<(Vec<Vec3>, Vec<Vec3>)> {
    let labels = deentangle_labels(chain1, chain2)?;
    let pooled = chain1.iter().chain(chain2);
    let (a, b): (Vec<_>, Vec<_>) = pooled.zip(&labels).partition(|(_, l)| **l == 0);
    Ok((a.into_iter().map(|(x, _)| *x).collect(), b.into_iter().map(|(x, _)| *x).collect()))
}

/// Cluster label (0 or 1) of every pooled sample, `chain1` first.
pub fn deentangle_labels(chain1: &[Vec3], chain2: &[Vec3]) -> Result<Vec<u8>> {
    if chain1.len() != chain2.len() {
        return Err(Error::Data(format!(
            "chains differ in length: {} vs {}",
            chain1.len(),
            chain2.len()
        )));
    }
    if chain1.is_empty() {
        return Err(Error::Data("cannot de-entangle empty chains".into()));
    }
    let pooled: Vec<Vec3> = chain1.iter().chain(chain2).copied().collect();
    let centroid = |idx: &mut dyn Iterator<Item = &Vec3>| -> Option<Vec3> {
        let s: Vec3 = idx.sum();
        (s.norm() > 1e-12).then(|| s.normalize())
    };
    let mut c = [
        centroid(&mut chain1.iter()).unwrap_or(chain1[0]),
        centroid(&mut chain2.iter()).unwrap_or(chain2[0]),
    ];
    let mut labels = vec![0u8; pooled.len()];
    let mut reseeded = false;
    for _ in 0..100 {
        let mut changed = false;
        for (l, x) in labels.iter_mut().zip(&pooled) {
            let nl = u8::from(chordal2(x, &c[1]) < chordal2(x, &c[0]));
            changed |= *l != nl;
            *l = nl;
        }
        let counts = [labels.iter().filter(|l| **l == 0).count(), labels.iter().filter(|l| **l == 1).count()];
        if let Some(empty) = counts.iter().position(|&n| n == 0) {
            if reseeded {
                return Err(Error::DegenerateSeparation);
            }
            reseeded = true;
            let other = c[1 - empty];
            let far = pooled
                .iter()
                .max_by(|a, b| chordal2(a, &other).total_cmp(&chordal2(b, &other)))
                .copied()
                .expect("pooled chains are non-empty");
            if chordal2(&far, &other) < 1e-18 {
                return Err(Error::DegenerateSeparation);
            }
            c[empty] = far;
            continue;
        }
        for (k, ck) in c.iter_mut().enumerate() {
            let mut it = pooled.iter().zip(&labels).filter(|(_, l)| **l as usize == k).map(|(x, _)| x);
            if let Some(m) = centroid(&mut it) {
                *ck = m;
            }
        }
        if !changed {
            break;
        }
    }
    let (a, b): (Vec<_>, Vec<_>) = pooled.iter().zip(&labels).partition(|(_, l)| **l == 0);
    let a: Vec<Vec3> = a.into_iter().map(|(x, _)| *x).collect();
    let b: Vec<Vec3> = b.into_iter().map(|(x, _)| *x).collect();
    // two halves of one blob are not two sources
    let spread = |s: &[Vec3], m: &Vec3| (s.iter().map(|x| chordal2(x, m)).sum::<f64>() / s.len() as f64).sqrt();
    let gap = chordal2(&c[0], &c[1]).sqrt();
    if gap < 2.0 * spread(&a, &c[0]).max(spread(&b, &c[1])) {
        return Err(Error::DegenerateSeparation);
    }
    Ok(labels)
}

/// One source's estimate from a localization run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceEstimate {
    /// Spherical mean of the retained samples (unit vector).
    pub mean: [f64; 3],
    /// Back-projection mode matched to this source (unit vector).
    pub bp: [f64; 3],
    pub truth: Option<[f64; 3]>,
    pub gibbs_error_mm: Option<f64>,
    pub bp_error_mm: Option<f64>,
    pub credible: CredibleBalls,
    pub samples: usize,
}

/// Everything `evaluate` needs from one localization run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub n_events: usize,
    pub radius: f64,
    pub sources: Vec<SourceEstimate>,
    pub deentangled: bool,
}

impl RunSummary {
    pub fn from_path(path: &Path) -> Result<Self> {
        Ok(serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(path)?))?)
    }
}

/// Match estimates to truths by the assignment of smallest total angle.
pub fn match_to_truths(estimates: &[Vec3], truths: &[Vec3]) -> Vec<usize> {
    let k = estimates.len().min(truths.len());
    let mut best: (f64, Vec<usize>) = (f64::INFINITY, (0..k).collect());
    permutations(truths.len(), k, &mut Vec::new(), &mut |perm| {
        let cost: f64 = perm.iter().enumerate().map(|(i, &t)| angle_between(&estimates[i], &truths[t])).sum();
        if cost < best.0 {
            best = (cost, perm.to_vec());
        }
    });
    best.1
}

fn permutations(n: usize, k: usize, cur: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
    if cur.len() == k {
        f(cur);
        return;
    }
    for i in 0..n {
        if !cur.contains(&i) {
            cur.push(i);
            permutations(n, k, cur, f);
            cur.pop();
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodStats {
    pub errors_mm: Vec<f64>,
    pub box_stats: Option<BoxStats>,
    pub median_mm: f64,
}

impl MethodStats {
    fn new(errors_mm: Vec<f64>) -> Self {
        let mut sorted = errors_mm.clone();
        sorted.sort_by(f64::total_cmp);
        let median_mm = if sorted.is_empty() { f64::NAN } else { quantile_sorted(&sorted, 0.5) };
        Self { box_stats: box_stats(&errors_mm).ok(), errors_mm, median_mm }
    }
}

/// Cross-run evaluation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub runs: usize,
    pub gibbs: MethodStats,
    pub bp: MethodStats,
    pub alphas: Vec<f64>,
    /// Observed coverage per α (nominal level 1 − α); empty below 10 runs.
    pub coverage: Vec<f64>,
    pub gibbs_better_runs: usize,
}

pub fn evaluate(summaries: &[RunSummary]) -> Result<EvaluationReport> {
    if summaries.is_empty() {
        return Err(Error::Data("no run summaries to evaluate".into()));
    }
    let mut gibbs = Vec::new();
    let mut bp = Vec::new();
    let mut balls = Vec::new();
    let mut truths = Vec::new();
    let mut better = 0;
    for s in summaries {
        for src in &s.sources {
            let (Some(g), Some(b), Some(t)) = (src.gibbs_error_mm, src.bp_error_mm, src.truth) else {
                return Err(Error::Data(format!("run with seed {} lacks truth for a source", s.seed)));
            };
            gibbs.push(g);
            bp.push(b);
            better += usize::from(g <= b);
            balls.push(src.credible.clone());
            truths.push(Vec3::from(t));
        }
    }
    let alphas = balls[0].alphas.clone();
    let coverage = if balls.len() >= 10 { coverage_from_balls(&balls, &truths)? } else { Vec::new() };
    Ok(EvaluationReport {
        runs: summaries.len(),
        gibbs: MethodStats::new(gibbs),
        bp: MethodStats::new(bp),
        alphas,
        coverage,
        gibbs_better_runs: better,
    })
}
