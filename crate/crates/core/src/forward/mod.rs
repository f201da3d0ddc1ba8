//! Noise-free event likelihood and measurement-noise densities.
//!
//! An event is a Compton scatter at `r1` depositing `E1`, followed by a second
//! interaction at `r2` depositing `E2` that is either a photo-absorption or a
//! second scatter. The likelihood factors into six stages evaluated in the
//! coordinates the physics is naturally written in: the first direction
//! (per steradian), the in-material path lengths (per mm), the deposits
//! (per MeV) and the scatter direction (per unit of cone angle and azimuth).

mod lut;

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BoundingCone, DetectorArray};
use crate::physics::{compton_cosine, kn_deposit_density, max_deposit, AttenuationTable};
use crate::sphere::{direction_about, uniform_in_cone, Vec3};
use crate::stats::{normal_log_pdf, std_normal_sf, TruncatedNormal};

pub use lut::{DirectionPriorLut, LutParams};

/// Default concentration of the angular and energy delta widening, rad⁻² and MeV⁻².
pub const DEFAULT_DELTA_CONCENTRATION: f64 = 400.0;
/// Proposal cap of the first-direction rejection sampler.
pub const DEFAULT_PROPOSAL_CAP: u64 = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub position: [f64; 3],
    pub deposit: f64,
}

impl Interaction {
    pub fn new(position: Vec3, deposit: f64) -> Self {
        Self {
            position: position.into(),
            deposit,
        }
    }

    pub fn pos(&self) -> Vec3 {
        Vec3::from(self.position)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SecondKind {
    #[serde(rename = "A")]
    Absorb,
    #[serde(rename = "CS")]
    Scatter,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub first: Interaction,
    pub second: Interaction,
    pub second_kind: SecondKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SourceLabel {
    Index(usize),
    Outlier(OutlierTag),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutlierTag {
    Outlier,
}

impl SourceLabel {
    pub fn outlier() -> Self {
        SourceLabel::Outlier(OutlierTag::Outlier)
    }

    pub fn is_outlier(&self) -> bool {
        matches!(self, SourceLabel::Outlier(_))
    }

    pub fn index(&self) -> Option<usize> {
        match self {
            SourceLabel::Index(i) => Some(*i),
            SourceLabel::Outlier(_) => None,
        }
    }
}

/// Ground truth attached to a simulated observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub source: SourceLabel,
    pub kind: SecondKind,
    pub r1: [f64; 3],
    #[serde(rename = "E1")]
    pub e1: f64,
    pub r2: [f64; 3],
    #[serde(rename = "E2")]
    pub e2: f64,
}

impl Truth {
    pub fn event(&self) -> Event {
        Event {
            first: Interaction {
                position: self.r1,
                deposit: self.e1,
            },
            second: Interaction {
                position: self.r2,
                deposit: self.e2,
            },
            second_kind: self.kind,
        }
    }
}

/// Recorded (noisy) pair of interactions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoisyEvent {
    pub id: u64,
    pub first: Interaction,
    pub second: Interaction,
    pub truth: Option<Truth>,
}

impl NoisyEvent {
    pub fn summed_energy(&self) -> f64 {
        self.first.deposit + self.second.deposit
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseScales {
    pub sigma_xy: f64,
    pub sigma_z: f64,
    #[serde(rename = "sigma_E")]
    pub sigma_e: f64,
}

impl Default for NoiseScales {
    fn default() -> Self {
        Self {
            sigma_xy: 0.43,
            sigma_z: 0.72,
            sigma_e: 0.029,
        }
    }
}

impl NoiseScales {
    pub fn validate(&self) -> Result<()> {
        if [self.sigma_xy, self.sigma_z, self.sigma_e]
            .iter()
            .all(|s| *s > 0.0 && s.is_finite())
        {
            Ok(())
        } else {
            Err(Error::Config(format!("noise scales must be > 0: {self:?}")))
        }
    }

    fn axis(&self, k: usize) -> f64 {
        if k == 2 {
            self.sigma_z
        } else {
            self.sigma_xy
        }
    }
}

/// Truncated-Gaussian law of an observed position given the true one, in
/// the extents of the sensor containing the true position.
pub fn position_noise_log_density(
    array: &DetectorArray,
    true_p: &Vec3,
    obs_p: &Vec3,
    scales: &NoiseScales,
) -> Result<f64> {
    let s = array
        .containing_sensor(true_p)
        .ok_or(Error::OutsideSensors(true_p.x, true_p.y, true_p.z))?;
    let (lo, hi) = (array.sensors()[s].lo(), array.sensors()[s].hi());
    Ok((0..3)
        .map(|k| TruncatedNormal::new(true_p[k], scales.axis(k), lo[k], hi[k]).log_pdf(obs_p[k]))
        .sum())
}

pub fn position_noise_density(
    array: &DetectorArray,
    true_p: &Vec3,
    obs_p: &Vec3,
    scales: &NoiseScales,
) -> Result<f64> {
    position_noise_log_density(array, true_p, obs_p, scales).map(f64::exp)
}

/// Draw an observed position from [`position_noise_density`].
pub fn sample_position_noise<R: Rng + ?Sized>(
    array: &DetectorArray,
    true_p: &Vec3,
    scales: &NoiseScales,
    rng: &mut R,
) -> Result<Vec3> {
    let s = array
        .containing_sensor(true_p)
        .ok_or(Error::OutsideSensors(true_p.x, true_p.y, true_p.z))?;
    let (lo, hi) = (array.sensors()[s].lo(), array.sensors()[s].hi());
    let mut out = Vec3::zeros();
    for k in 0..3 {
        out[k] = TruncatedNormal::new(true_p[k], scales.axis(k), lo[k], hi[k]).sample(rng);
    }
    Ok(out)
}

/// Gaussian law of an observed deposit truncated to non-negative values.
pub fn energy_noise_log_density(true_e: f64, obs_e: f64, sigma: f64) -> f64 {
    if obs_e < 0.0 {
        return f64::NEG_INFINITY;
    }
    normal_log_pdf(obs_e, true_e, sigma) - std_normal_sf(-true_e / sigma).ln()
}

pub fn energy_noise_density(true_e: f64, obs_e: f64, sigma: f64) -> f64 {
    energy_noise_log_density(true_e, obs_e, sigma).exp()
}

pub fn sample_energy_noise<R: Rng + ?Sized>(true_e: f64, sigma: f64, rng: &mut R) -> f64 {
    TruncatedNormal::new(true_e, sigma, 0.0, f64::INFINITY).sample(rng)
}

/// Truncated exponential law of the in-material distance `d` on `(0, dmax]`.
pub fn path_log_density_from_lengths(mu: f64, d: f64, dmax: f64) -> f64 {
    if !(d > 0.0) || d > dmax {
        return f64::NEG_INFINITY;
    }
    mu.ln() - mu * d - (-(-mu * dmax).exp_m1()).ln()
}

/// Density of the effective distance from `origin` to `target` (per mm).
pub fn path_density(
    array: &DetectorArray,
    table: &AttenuationTable,
    origin: &Vec3,
    target: &Vec3,
    energy: f64,
) -> Result<f64> {
    let (d, dmax) = array.path_lengths(origin, target);
    let mu = table.mu_total(energy)?;
    Ok(path_log_density_from_lengths(mu, d, dmax).exp())
}

/// Gaussian-widened cone density of the second direction about the first,
/// per unit cone angle and azimuth.
pub fn scatter_direction_log_density(theta1: &Vec3, theta2: &Vec3, e0: f64, e1: f64, a: f64) -> f64 {
    if !(e1 > 0.0) || e1 > max_deposit(e0) {
        return f64::NEG_INFINITY;
    }
    let omega = compton_cosine(e0, e1).clamp(-1.0, 1.0).acos();
    let psi = theta1.dot(theta2).clamp(-1.0, 1.0).acos();
    let r = omega - psi;
    -(2.0 * PI).ln() + 0.5 * (a / PI).ln() - a * r * r
}

pub fn scatter_direction_density(theta1: &Vec3, theta2: &Vec3, e0: f64, e1: f64, a: f64) -> f64 {
    scatter_direction_log_density(theta1, theta2, e0, e1, a).exp()
}

/// Density of the first-interaction direction from a source position.
pub trait DirectionPrior: Send + Sync {
    /// Source energy the prior was built for.
    fn energy(&self) -> f64;
    /// Density per steradian of direction `theta1` for photons from `source`.
    fn density(&self, source: &Vec3, theta1: &Vec3) -> f64;
}

/// `(1 − exp(−μ d_max(Θ)))/Z` with `Z` integrated numerically over the
/// bounding cone. Exact up to quadrature; slow, intended for validation.
pub struct ExactDirectionPrior {
    array: DetectorArray,
    e0: f64,
    mu: f64,
    resolution: usize,
    cache: Mutex<HashMap<[u64; 3], f64>>,
}

impl ExactDirectionPrior {
    pub fn new(array: DetectorArray, table: &AttenuationTable, e0: f64, resolution: usize) -> Result<Self> {
        Ok(Self {
            array,
            e0,
            mu: table.mu_total(e0)?,
            resolution,
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// ∫ (1 − e^{−μ d_max}) dΩ over directions from `source`.
    pub fn normalizer(&self, source: &Vec3) -> f64 {
        let key = [source.x.to_bits(), source.y.to_bits(), source.z.to_bits()];
        if let Some(z) = self.cache.lock().expect("cache lock").get(&key) {
            return *z;
        }
        let cone = self.array.bounding_cone(source).expect("source outside the array");
        let n = self.resolution;
        let c0 = cone.cos_half();
        let (hc, hp) = ((1.0 - c0) / n as f64, 2.0 * PI / (2 * n) as f64);
        let mut acc = 0.0;
        for i in 0..n {
            let c = c0 + (i as f64 + 0.5) * hc;
            for j in 0..2 * n {
                let d = direction_about(&cone.axis, c, (j as f64 + 0.5) * hp);
                let dmax = self.array.max_effective_distance(source, &d);
                if dmax > 0.0 {
                    acc -= (-self.mu * dmax).exp_m1();
                }
            }
        }
        let z = acc * hc * hp;
        self.cache.lock().expect("cache lock").insert(key, z);
        z
    }

    pub fn unnormalized(&self, source: &Vec3, theta1: &Vec3) -> f64 {
        let dmax = self.array.max_effective_distance(source, theta1);
        -(-self.mu * dmax).exp_m1()
    }
}

impl DirectionPrior for ExactDirectionPrior {
    fn energy(&self) -> f64 {
        self.e0
    }

    fn density(&self, source: &Vec3, theta1: &Vec3) -> f64 {
        let u = self.unnormalized(source, theta1);
        if u == 0.0 {
            0.0
        } else {
            u / self.normalizer(source)
        }
    }
}

/// First-interaction direction and its effective depth, by rejection: a
/// direction uniform in the bounding cone is kept when a Beer-law free path
/// ends inside the material along it.
pub fn sample_first_direction<R: Rng + ?Sized>(
    array: &DetectorArray,
    source: &Vec3,
    mu: f64,
    cap: u64,
    rng: &mut R,
) -> Result<(Vec3, f64)> {
    let cone = array.bounding_cone(source)?;
    sample_first_direction_in_cone(array, source, &cone, mu, cap, rng)
}

/// [`sample_first_direction`] with a precomputed bounding cone.
pub fn sample_first_direction_in_cone<R: Rng + ?Sized>(
    array: &DetectorArray,
    source: &Vec3,
    cone: &BoundingCone,
    mu: f64,
    cap: u64,
    rng: &mut R,
) -> Result<(Vec3, f64)> {
    let c0 = cone.cos_half();
    for _ in 0..cap {
        let dir = uniform_in_cone(&cone.axis, c0, rng);
        let dmax = array.max_effective_distance(source, &dir);
        if dmax <= 0.0 {
            continue;
        }
        let v: f64 = rng.random();
        let d = -(-v).ln_1p() / mu;
        if d < dmax {
            return Ok((dir, d));
        }
    }
    Err(Error::SamplerExhausted(cap))
}

/// Per-stage log densities of one event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageTerms {
    pub direction: f64,
    pub first_path: f64,
    pub deposit: f64,
    pub scatter: f64,
    pub second_path: f64,
    pub second_energy: f64,
}

impl StageTerms {
    pub fn total(&self) -> f64 {
        let t = self.direction
            + self.first_path
            + self.deposit
            + self.scatter
            + self.second_path
            + self.second_energy;
        if t.is_nan() {
            f64::NEG_INFINITY
        } else {
            t
        }
    }
}

/// Everything needed to evaluate event likelihoods for a fixed source energy.
#[derive(Clone)]
pub struct ForwardModel {
    pub array: DetectorArray,
    pub table: AttenuationTable,
    pub prior: Arc<dyn DirectionPrior>,
    pub e0: f64,
    mu0: f64,
    /// Angular delta concentration, rad⁻².
    pub a: f64,
    /// Energy delta concentration, MeV⁻².
    pub a_energy: f64,
}

impl std::fmt::Debug for ForwardModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ForwardModel")
            .field("e0", &self.e0)
            .field("a", &self.a)
            .field("a_energy", &self.a_energy)
            .finish_non_exhaustive()
    }
}

impl ForwardModel {
    pub fn new(array: DetectorArray, table: AttenuationTable, prior: Arc<dyn DirectionPrior>) -> Result<Self> {
        let e0 = prior.energy();
        let mu0 = table.mu_total(e0)?;
        Ok(Self {
            array,
            table,
            prior,
            e0,
            mu0,
            a: DEFAULT_DELTA_CONCENTRATION,
            a_energy: DEFAULT_DELTA_CONCENTRATION,
        })
    }

    pub fn with_concentrations(mut self, a: f64, a_energy: f64) -> Self {
        self.a = a;
        self.a_energy = a_energy;
        self
    }

    pub fn mu0(&self) -> f64 {
        self.mu0
    }

    /// Log density of the second deposit given the first.
    pub fn second_energy_log_density(&self, e1: f64, e2: f64, kind: SecondKind) -> f64 {
        let rest = self.e0 - e1;
        match kind {
            SecondKind::Absorb => {
                let r = e2 - rest;
                0.5 * (self.a_energy / PI).ln() - self.a_energy * r * r
            }
            SecondKind::Scatter => {
                let f = kn_deposit_density(rest, e2);
                if f > 0.0 && e2 > 0.0 {
                    f.ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    pub fn stage_terms(&self, source: &Vec3, event: &Event) -> StageTerms {
        let ninf = f64::NEG_INFINITY;
        let (r1, r2) = (event.first.pos(), event.second.pos());
        let (e1, e2) = (event.first.deposit, event.second.deposit);
        let mut t = StageTerms {
            direction: ninf,
            first_path: ninf,
            deposit: ninf,
            scatter: ninf,
            second_path: ninf,
            second_energy: ninf,
        };
        let v1 = r1 - source;
        let v2 = r2 - r1;
        if v1.norm() == 0.0 || v2.norm() == 0.0 {
            return t;
        }
        let th1 = v1.normalize();
        let th2 = v2.normalize();
        let p = self.prior.density(source, &th1);
        t.direction = if p > 0.0 { p.ln() } else { ninf };
        let (d1, dmax1) = self.array.path_lengths(source, &r1);
        t.first_path = path_log_density_from_lengths(self.mu0, d1, dmax1);
        let f = kn_deposit_density(self.e0, e1);
        t.deposit = if f > 0.0 && e1 > 0.0 { f.ln() } else { ninf };
        t.scatter = scatter_direction_log_density(&th1, &th2, self.e0, e1, self.a);
        let rest = self.e0 - e1;
        if let Ok(mu1) = self.table.mu_total(rest) {
            let (d2, dmax2) = self.array.path_lengths(&r1, &r2);
            t.second_path = path_log_density_from_lengths(mu1, d2, dmax2);
        }
        t.second_energy = self.second_energy_log_density(e1, e2, event.second_kind);
        t
    }

    /// Sum of the stage log densities; `-inf` for impossible events.
    pub fn event_log_likelihood(&self, source: &Vec3, event: &Event) -> f64 {
        self.stage_terms(source, event).total()
    }
}
