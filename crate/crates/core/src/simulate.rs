//! Monte Carlo photon transport through the sensor array, measurement noise
//! and outlier injection.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{
    sample_energy_noise, sample_first_direction_in_cone, sample_position_noise, Event, Interaction,
    NoiseScales, NoisyEvent, SecondKind, SourceLabel, Truth, DEFAULT_PROPOSAL_CAP,
};
use crate::geometry::{DetectorArray, Ray, SphereModel};
use crate::physics::{compton_angle, sample_kn_deposit, AttenuationTable, MuKind};
use crate::rng::{self, StreamRng};
use crate::sphere::{direction_about, from_lon_lat_deg, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    /// Unit direction of the source on the sphere.
    pub direction: [f64; 3],
    #[serde(rename = "E0")]
    pub energy: f64,
    pub intensity: f64,
}

impl SourceSpec {
    pub fn from_lon_lat(lon_deg: f64, lat_deg: f64, energy: f64, intensity: f64) -> Self {
        Self {
            direction: from_lon_lat_deg(lon_deg, lat_deg).into(),
            energy,
            intensity,
        }
    }

    pub fn unit(&self) -> Vec3 {
        Vec3::from(self.direction).normalize()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub sources: Vec<SourceSpec>,
    #[serde(default)]
    pub outlier_fraction: f64,
    /// `None` records the true interactions unchanged.
    #[serde(default = "default_noise")]
    pub noise: Option<NoiseScales>,
    pub seed: u64,
    pub n_events: usize,
    #[serde(default)]
    pub sphere: SphereModel,
}

fn default_noise() -> Option<NoiseScales> {
    Some(NoiseScales::default())
}

impl SimConfig {
    /// One Cs-137 source at `(lon, lat)` with the default noise and no outliers.
    pub fn single_source(lon_deg: f64, lat_deg: f64, n_events: usize, seed: u64) -> Self {
        Self {
            sources: vec![SourceSpec::from_lon_lat(lon_deg, lat_deg, 0.6617, 1.0)],
            outlier_fraction: 0.0,
            noise: default_noise(),
            seed,
            n_events,
            sphere: SphereModel::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sources.is_empty() {
            return Err(Error::Config("at least one source is required".into()));
        }
        if !(0.0..1.0).contains(&self.outlier_fraction) {
            return Err(Error::Config(format!(
                "outlier_fraction must lie in [0, 1), got {}",
                self.outlier_fraction
            )));
        }
        let total: f64 = self.sources.iter().map(|s| s.intensity).sum::<f64>() + self.outlier_fraction;
        if (total - 1.0).abs() > 1e-6 || self.sources.iter().any(|s| !(s.intensity > 0.0)) {
            return Err(Error::Config(format!(
                "source intensities plus outlier fraction must be positive and sum to 1, got {total}"
            )));
        }
        for s in &self.sources {
            if !(s.energy > 0.0) || Vec3::from(s.direction).norm() == 0.0 {
                return Err(Error::Config(format!("invalid source {s:?}")));
            }
        }
        if let Some(n) = &self.noise {
            n.validate()?;
        }
        SphereModel::new(self.sphere.radius)?;
        Ok(())
    }
}

/// How a photon history ended.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TransportOutcome {
    /// First interaction was a photo-absorption.
    FirstAbsorbed,
    /// Scattered once, then left the array. Carries the first deposit.
    Escaped { e1: f64 },
    Detected(Event),
}

fn free_path<R: Rng + ?Sized>(mu: f64, rng: &mut R) -> f64 {
    -(-rng.random::<f64>()).ln_1p() / mu
}

/// Follow one photon from `source` until its second interaction.
pub fn transport_photon_detailed<R: Rng + ?Sized>(
    array: &DetectorArray,
    table: &AttenuationTable,
    source: &Vec3,
    e0: f64,
    rng: &mut R,
) -> Result<TransportOutcome> {
    let cone = array.bounding_cone(source)?;
    transport_in_cone(array, table, source, &cone, e0, rng)
}

fn transport_in_cone<R: Rng + ?Sized>(
    array: &DetectorArray,
    table: &AttenuationTable,
    source: &Vec3,
    cone: &crate::geometry::BoundingCone,
    e0: f64,
    rng: &mut R,
) -> Result<TransportOutcome> {
    let mu0 = table.mu_total(e0)?;
    let (th1, d1) = sample_first_direction_in_cone(array, source, cone, mu0, DEFAULT_PROPOSAL_CAP, rng)?;
    let ray1 = Ray::new(*source, th1)?;
    let (r1, _) = array
        .point_at_effective_distance(&ray1, d1)
        .ok_or_else(|| Error::Data("accepted depth beyond the material".into()))?;
    if rng.random::<f64>() < table.mu(MuKind::Photo, e0)? / mu0 {
        return Ok(TransportOutcome::FirstAbsorbed);
    }
    let e1 = sample_kn_deposit(e0, rng);
    let omega = compton_angle(e0, e1)?;
    let th2 = direction_about(&th1, omega.cos(), rng.random_range(0.0..std::f64::consts::TAU));
    let rest = e0 - e1;
    let mu1 = table.mu_total(rest)?;
    let ray2 = Ray::new(r1, th2)?;
    let Some((r2, _)) = array.point_at_effective_distance(&ray2, free_path(mu1, rng)) else {
        return Ok(TransportOutcome::Escaped { e1 });
    };
    let (kind, e2) = if rng.random::<f64>() < table.mu(MuKind::Photo, rest)? / mu1 {
        (SecondKind::Absorb, rest)
    } else {
        (SecondKind::Scatter, sample_kn_deposit(rest, rng))
    };
    Ok(TransportOutcome::Detected(Event {
        first: Interaction::new(r1, e1),
        second: Interaction::new(r2, e2),
        second_kind: kind,
    }))
}

/// The first two interactions of a photon, when it scatters first and
/// interacts again inside the array.
pub fn transport_photon<R: Rng + ?Sized>(
    array: &DetectorArray,
    table: &AttenuationTable,
    source: &Vec3,
    e0: f64,
    rng: &mut R,
) -> Result<Option<Event>> {
    Ok(match transport_photon_detailed(array, table, source, e0, rng)? {
        TransportOutcome::Detected(ev) => Some(ev),
        _ => None,
    })
}

/// Counts over many photon histories from one source.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TransportTally {
    pub photons: usize,
    pub first_absorbed: usize,
    pub escaped: usize,
    pub detected: usize,
    pub second_scatter: usize,
    /// First deposits of every photon whose first interaction was a scatter.
    pub first_deposits: Vec<f64>,
}

impl TransportTally {
    /// Fraction of detected events whose second interaction is a scatter.
    pub fn p_scatter(&self) -> f64 {
        self.second_scatter as f64 / self.detected as f64
    }
}

pub fn transport_tally(
    array: &DetectorArray,
    table: &AttenuationTable,
    source: &Vec3,
    e0: f64,
    n_photons: usize,
    seed: u64,
) -> Result<TransportTally> {
    let cone = array.bounding_cone(source)?;
    let outcomes = (0..n_photons)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(seed, "tally", &[i as u64]);
            transport_in_cone(array, table, source, &cone, e0, &mut r)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut t = TransportTally {
        photons: n_photons,
        ..Default::default()
    };
    for o in outcomes {
        match o {
            TransportOutcome::FirstAbsorbed => t.first_absorbed += 1,
            TransportOutcome::Escaped { e1 } => {
                t.escaped += 1;
                t.first_deposits.push(e1);
            }
            TransportOutcome::Detected(ev) => {
                t.detected += 1;
                t.first_deposits.push(ev.first.deposit);
                if ev.second_kind == SecondKind::Scatter {
                    t.second_scatter += 1;
                }
            }
        }
    }
    Ok(t)
}

fn pick_source<R: Rng + ?Sized>(sources: &[SourceSpec], rng: &mut R) -> usize {
    let total: f64 = sources.iter().map(|s| s.intensity).sum();
    let mut u = rng.random::<f64>() * total;
    for (i, s) in sources.iter().enumerate() {
        if u < s.intensity {
            return i;
        }
        u -= s.intensity;
    }
    sources.len() - 1
}

/// Transport photons from source `k` until one is detected.
fn detected_event(
    array: &DetectorArray,
    table: &AttenuationTable,
    cfg: &SimConfig,
    cones: &[crate::geometry::BoundingCone],
    k: usize,
    rng: &mut StreamRng,
) -> Result<Event> {
    let src = cfg.sphere.point(&cfg.sources[k].unit());
    for _ in 0..DEFAULT_PROPOSAL_CAP {
        if let TransportOutcome::Detected(ev) =
            transport_in_cone(array, table, &src, &cones[k], cfg.sources[k].energy, rng)?
        {
            return Ok(ev);
        }
    }
    Err(Error::SamplerExhausted(DEFAULT_PROPOSAL_CAP))
}

fn simulate_one(
    array: &DetectorArray,
    table: &AttenuationTable,
    cfg: &SimConfig,
    cones: &[crate::geometry::BoundingCone],
    id: u64,
) -> Result<NoisyEvent> {
    let mut r = rng::stream(cfg.seed, "simulate", &[id]);
    let is_outlier = r.random::<f64>() < cfg.outlier_fraction;
    let truth = if !is_outlier {
        let k = pick_source(&cfg.sources, &mut r);
        let ev = detected_event(array, table, cfg, cones, k, &mut r)?;
        Truth {
            source: SourceLabel::Index(k),
            kind: ev.second_kind,
            r1: ev.first.position,
            e1: ev.first.deposit,
            r2: ev.second.position,
            e2: ev.second.deposit,
        }
    } else if r.random::<bool>() {
        // timing error: the two interactions are recorded in reverse order
        let k = pick_source(&cfg.sources, &mut r);
        let ev = detected_event(array, table, cfg, cones, k, &mut r)?;
        Truth {
            source: SourceLabel::outlier(),
            kind: ev.second_kind,
            r1: ev.second.position,
            e1: ev.second.deposit,
            r2: ev.first.position,
            e2: ev.first.deposit,
        }
    } else {
        // pairing error: interactions of two independent photons
        let (ka, kb) = (pick_source(&cfg.sources, &mut r), pick_source(&cfg.sources, &mut r));
        let a = detected_event(array, table, cfg, cones, ka, &mut r)?;
        let b = detected_event(array, table, cfg, cones, kb, &mut r)?;
        Truth {
            source: SourceLabel::outlier(),
            kind: b.second_kind,
            r1: a.first.position,
            e1: a.first.deposit,
            r2: b.second.position,
            e2: b.second.deposit,
        }
    };
    let (first, second) = match &cfg.noise {
        None => (
            Interaction {
                position: truth.r1,
                deposit: truth.e1,
            },
            Interaction {
                position: truth.r2,
                deposit: truth.e2,
            },
        ),
        Some(n) => {
            let mut obs = |p: [f64; 3], e: f64| -> Result<Interaction> {
                let q = sample_position_noise(array, &Vec3::from(p), n, &mut r)?;
                Ok(Interaction::new(q, sample_energy_noise(e, n.sigma_e, &mut r)))
            };
            let a = obs(truth.r1, truth.e1)?;
            let b = obs(truth.r2, truth.e2)?;
            (a, b)
        }
    };
    Ok(NoisyEvent {
        id,
        first,
        second,
        truth: Some(truth),
    })
}

/// `n_events` recorded events. Each event owns an independent random stream
/// keyed by its id, so output does not depend on thread scheduling.
pub fn generate_events(array: &DetectorArray, table: &AttenuationTable, cfg: &SimConfig) -> Result<Vec<NoisyEvent>> {
    cfg.validate()?;
    let cones = cfg
        .sources
        .iter()
        .map(|s| array.bounding_cone(&cfg.sphere.point(&s.unit())))
        .collect::<Result<Vec<_>>>()?;
    (0..cfg.n_events as u64)
        .into_par_iter()
        .map(|id| simulate_one(array, table, cfg, &cones, id))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Histogram of `Ẽ1 + Ẽ2` on `bins` equal bins over `[lo, hi)`; values
/// outside the range are counted in the end bins.
pub fn summed_energy_histogram(events: &[NoisyEvent], lo: f64, hi: f64, bins: usize) -> Result<Histogram> {
    if events.is_empty() || bins == 0 || !(hi > lo) {
        return Err(Error::Domain("histogram needs events, bins > 0 and hi > lo".into()));
    }
    let w = (hi - lo) / bins as f64;
    let mut counts = vec![0u64; bins];
    for e in events {
        let i = ((e.summed_energy() - lo) / w).floor().clamp(0.0, (bins - 1) as f64) as usize;
        counts[i] += 1;
    }
    Ok(Histogram {
        edges: (0..=bins).map(|i| lo + i as f64 * w).collect(),
        counts,
    })
}

#[derive(Serialize, Deserialize)]
struct EventRecord {
    id: u64,
    r1: [f64; 3],
    #[serde(rename = "E1")]
    e1: f64,
    r2: [f64; 3],
    #[serde(rename = "E2")]
    e2: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    truth: Option<Truth>,
}

pub fn write_events<W: Write>(mut w: W, events: &[NoisyEvent]) -> Result<()> {
    for e in events {
        let rec = EventRecord {
            id: e.id,
            r1: e.first.position,
            e1: e.first.deposit,
            r2: e.second.position,
            e2: e.second.deposit,
            truth: e.truth,
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Parse JSON Lines events; `path` is only used in error messages.
pub fn read_events_from<R: Read>(reader: R, path: &Path) -> Result<Vec<NoisyEvent>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: EventRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(NoisyEvent {
            id: rec.id,
            first: Interaction {
                position: rec.r1,
                deposit: rec.e1,
            },
            second: Interaction {
                position: rec.r2,
                deposit: rec.e2,
            },
            truth: rec.truth,
        });
    }
    Ok(out)
}

pub fn read_events(path: &Path) -> Result<Vec<NoisyEvent>> {
    read_events_from(std::fs::File::open(path)?, path)
}

pub fn write_events_file(path: &Path, events: &[NoisyEvent]) -> Result<()> {
    write_events(std::io::BufWriter::new(std::fs::File::create(path)?), events)
}
