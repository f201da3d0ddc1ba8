//! Compton kinematics, Klein–Nishina deposit densities and attenuation data.
//!
//! Energies are in MeV and lengths in mm throughout the crate.

use std::io::Read;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Electron rest energy, MeV.
pub const MC2: f64 = 0.511;
/// Classical electron radius, fm.
pub const ELECTRON_RADIUS_FM: f64 = 2.8179;

const DOMAIN_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalConstants {
    pub mc2: f64,
    pub electron_radius_fm: f64,
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self {
            mc2: MC2,
            electron_radius_fm: ELECTRON_RADIUS_FM,
        }
    }
}

/// Largest energy a single Compton scatter can deposit (backscatter).
pub fn max_deposit(e0: f64) -> f64 {
    e0 - e0 / (1.0 + 2.0 * e0 / MC2)
}

/// cos ω for a deposit `e1` out of a photon of energy `e0`, unclamped.
pub fn compton_cosine(e0: f64, e1: f64) -> f64 {
    1.0 - MC2 * (1.0 / (e0 - e1) - 1.0 / e0)
}

/// Scattering angle ω(E0, E1) in radians.
pub fn compton_angle(e0: f64, e1: f64) -> Result<f64> {
    if !(e0 > 0.0) || e1 >= e0 || e1 < -DOMAIN_TOL {
        return Err(Error::Domain(format!("compton_angle(E0={e0}, E1={e1})")));
    }
    let c = compton_cosine(e0, e1);
    if !(-1.0 - DOMAIN_TOL..=1.0 + DOMAIN_TOL).contains(&c) {
        return Err(Error::ComptonDomain(c));
    }
    Ok(c.clamp(-1.0, 1.0).acos())
}

/// Deposit producing scattering angle `omega`: inverse of [`compton_angle`].
pub fn deposit_for_angle(e0: f64, omega: f64) -> f64 {
    e0 - 1.0 / (1.0 / e0 + (1.0 - omega.cos()) / MC2)
}

/// Unnormalized Klein–Nishina density of the deposit `x` (per MeV).
pub fn kn_phi(e0: f64, x: f64) -> f64 {
    if x < 0.0 || x > max_deposit(e0) {
        return 0.0;
    }
    let rest = e0 - x;
    let lambda = rest / e0;
    let t = 1.0 - MC2 / e0 * (x / rest);
    MC2 / (e0 * e0) * (lambda + x / rest + t * t)
}

/// Closed-form antiderivative of [`kn_phi`] in the deposit.
pub fn kn_antiderivative(e0: f64, e: f64) -> Result<f64> {
    if e < 0.0 || e > e0 - DOMAIN_TOL {
        return Err(Error::Domain(format!(
            "kn_antiderivative(E0={e0}, E={e}) needs 0 <= E < E0"
        )));
    }
    let r = MC2 / e0;
    let rest = e0 - e;
    Ok(MC2 / (e0 * e0)
        * (-e * e / (2.0 * e0)
            + (1.0 + r).powi(2) * e
            + (2.0 * (1.0 + r) * MC2 - e0) * rest.ln()
            + MC2 * MC2 / rest))
}

/// ∫ φ over the kinematic support.
pub fn kn_normalizer(e0: f64) -> f64 {
    kn_antiderivative(e0, max_deposit(e0)).expect("edge below E0")
        - kn_antiderivative(e0, 0.0).expect("zero deposit")
}

/// Normalized deposit density f(E1 | E0, Compton) on [0, max_deposit(E0)].
pub fn kn_deposit_density(e0: f64, e1: f64) -> f64 {
    let phi = kn_phi(e0, e1);
    if phi == 0.0 {
        0.0
    } else {
        phi / kn_normalizer(e0)
    }
}

/// Deposit drawn from the Klein–Nishina law by rejection.
pub fn sample_kn_deposit<R: Rng + ?Sized>(e0: f64, rng: &mut R) -> f64 {
    let emax = max_deposit(e0);
    let k = 1.0 + 2.0 * e0 / MC2;
    // bracket λ + 1/λ − sin²θ is bounded by λ_min + 1/λ_min
    let bound = MC2 / (e0 * e0) * (k + 1.0 / k);
    loop {
        let x = rng.random::<f64>() * emax;
        if rng.random::<f64>() * bound <= kn_phi(e0, x) {
            return x;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MuKind {
    Total,
    Photo,
    Compton,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttenuationRow {
    pub energy_mev: f64,
    pub mu_total_mm: f64,
    pub mu_photo_mm: f64,
    pub mu_compton_mm: f64,
}

impl AttenuationRow {
    fn get(&self, kind: MuKind) -> f64 {
        match kind {
            MuKind::Total => self.mu_total_mm,
            MuKind::Photo => self.mu_photo_mm,
            MuKind::Compton => self.mu_compton_mm,
        }
    }
}

/// Energy-indexed linear attenuation coefficients of the sensor material.
#[derive(Debug, Clone, PartialEq)]
pub struct AttenuationTable {
    rows: Vec<AttenuationRow>,
}

const LYSO_CSV: &str = include_str!("../data/lyso_attenuation.csv");

impl AttenuationTable {
    pub fn new(rows: Vec<AttenuationRow>) -> Result<Self> {
        if rows.len() < 2 {
            return Err(Error::InvalidTable("need at least two rows".into()));
        }
        for (i, r) in rows.iter().enumerate() {
            if !(r.mu_total_mm > 0.0 && r.mu_photo_mm > 0.0 && r.mu_compton_mm > 0.0) {
                return Err(Error::InvalidTable(format!("row {i}: coefficients must be > 0")));
            }
            if r.mu_photo_mm + r.mu_compton_mm > r.mu_total_mm * (1.0 + 1e-6) {
                return Err(Error::InvalidTable(format!(
                    "row {i}: photo + compton exceeds total"
                )));
            }
            if i > 0 && r.energy_mev <= rows[i - 1].energy_mev {
                return Err(Error::InvalidTable(format!(
                    "row {i}: energies must be strictly increasing"
                )));
            }
        }
        Ok(Self { rows })
    }

    /// Built-in LYSO (Lu1.9Y0.1SiO5) table covering 0.05–1.5 MeV.
    pub fn lyso() -> Self {
        Self::from_csv_reader(LYSO_CSV.as_bytes()).expect("bundled table is valid")
    }

    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let header = rdr.headers()?.clone();
        let expected = ["energy_mev", "mu_total_mm", "mu_photo_mm", "mu_compton_mm"];
        if header.iter().collect::<Vec<_>>() != expected {
            return Err(Error::InvalidTable(format!(
                "header must be {}",
                expected.join(",")
            )));
        }
        let rows = rdr
            .deserialize()
            .collect::<std::result::Result<Vec<AttenuationRow>, _>>()?;
        Self::new(rows)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_csv_reader(std::fs::File::open(path)?)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("ascii csv"))
    }

    pub fn rows(&self) -> &[AttenuationRow] {
        &self.rows
    }

    pub fn energy_range(&self) -> (f64, f64) {
        (self.rows[0].energy_mev, self.rows[self.rows.len() - 1].energy_mev)
    }

    /// Log-log interpolated coefficient, 1/mm.
    pub fn mu(&self, kind: MuKind, energy: f64) -> Result<f64> {
        let (min, max) = self.energy_range();
        if !(energy >= min && energy <= max) {
            return Err(Error::EnergyOutOfRange { energy, min, max });
        }
        let i = self.rows.partition_point(|r| r.energy_mev <= energy);
        if i == 0 {
            return Ok(self.rows[0].get(kind));
        }
        let lo = &self.rows[i - 1];
        if lo.energy_mev == energy || i == self.rows.len() {
            return Ok(lo.get(kind));
        }
        let hi = &self.rows[i];
        let s = (energy / lo.energy_mev).ln() / (hi.energy_mev / lo.energy_mev).ln();
        Ok((lo.get(kind).ln() + s * (hi.get(kind) / lo.get(kind)).ln()).exp())
    }

    pub fn mu_total(&self, energy: f64) -> Result<f64> {
        self.mu(MuKind::Total, energy)
    }

    /// Probability that an interaction at `energy` is an absorption.
    pub fn absorb_fraction(&self, energy: f64) -> Result<f64> {
        Ok(self.mu(MuKind::Photo, energy)? / self.mu(MuKind::Total, energy)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InteractionOdds {
    pub p_absorb: f64,
    pub p_scatter: f64,
}

/// p_A = ∫ (μ^a/μ)(E0 − E1) f(E1 | E0) dE1 by the trapezoidal rule.
pub fn analytic_p_absorb(table: &AttenuationTable, e0: f64) -> Result<InteractionOdds> {
    let n = 4000;
    let emax = max_deposit(e0);
    let h = emax / n as f64;
    let mut acc = 0.0;
    for i in 0..=n {
        let e1 = i as f64 * h;
        let w = if i == 0 || i == n { 0.5 } else { 1.0 };
        acc += w * table.absorb_fraction(e0 - e1)? * kn_deposit_density(e0, e1);
    }
    let p_absorb = acc * h;
    Ok(InteractionOdds {
        p_absorb,
        p_scatter: 1.0 - p_absorb,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;

    const CS137: f64 = 0.6617;

    fn trapezoid(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = 0.5 * (f(a) + f(b));
        for i in 1..n {
            s += f(a + i as f64 * h);
        }
        s * h
    }

    #[test]
    fn compton_angle_endpoints() {
        assert_eq!(compton_angle(CS137, 0.0).unwrap(), 0.0);
        assert_relative_eq!(
            compton_angle(CS137, max_deposit(CS137)).unwrap(),
            std::f64::consts::PI,
            epsilon = 1e-6
        );
        // arccos(1 - 0.511 (1/0.4617 - 1/0.6617)) evaluated by hand
        assert_relative_eq!(compton_angle(CS137, 0.2).unwrap(), 0.842_6, epsilon = 2e-4);
    }

    #[test]
    fn compton_angle_rejects_beyond_edge() {
        assert!(matches!(
            compton_angle(CS137, max_deposit(CS137) + 1e-3),
            Err(Error::ComptonDomain(_))
        ));
        assert!(compton_angle(CS137, CS137).is_err());
    }

    #[test]
    fn compton_round_trip() {
        for i in 0..=200 {
            let e1 = max_deposit(CS137) * i as f64 / 200.0;
            let w = compton_angle(CS137, e1).unwrap();
            assert!((deposit_for_angle(CS137, w) - e1).abs() < 1e-9);
        }
    }

    #[test]
    fn max_deposit_values() {
        let e0 = CS137;
        assert_relative_eq!(max_deposit(e0), e0 * (1.0 - 1.0 / (1.0 + 2.0 * e0 / MC2)));
        assert_relative_eq!(max_deposit(e0), 0.477_4, epsilon = 1e-4);
        let mut prev = 0.0;
        for i in 1..=100 {
            let v = max_deposit(0.015 * i as f64);
            assert!(v > prev && v < 0.015 * i as f64);
            prev = v;
        }
    }

    #[test]
    fn kn_density_is_normalized() {
        for i in 0..15 {
            let e0 = 0.1 + 0.1 * i as f64;
            let emax = max_deposit(e0);
            let s = trapezoid(|x| kn_deposit_density(e0, x), 0.0, emax, 10_000);
            assert!((s - 1.0).abs() < 1e-3, "E0={e0}: {s}");
        }
        assert_eq!(kn_deposit_density(CS137, CS137), 0.0);
    }

    #[test]
    fn antiderivative_matches_quadrature() {
        let emax = max_deposit(CS137);
        let q = trapezoid(|x| kn_phi(CS137, x), 0.0, emax, 1_000_000);
        let f = kn_normalizer(CS137);
        assert!(((f - q) / q).abs() < 1e-6);
        let a = 0.1;
        assert_eq!(
            kn_antiderivative(CS137, a).unwrap() - kn_antiderivative(CS137, a).unwrap(),
            0.0
        );
        assert!(kn_antiderivative(CS137, CS137).is_err());
    }

    #[test]
    fn antiderivative_differences_are_positive() {
        let emax = max_deposit(CS137);
        for i in 0..100 {
            let a = emax * (i as f64 / 101.0);
            let b = emax * ((i + 1) as f64 / 101.0);
            assert!(kn_antiderivative(CS137, b).unwrap() > kn_antiderivative(CS137, a).unwrap());
        }
    }

    #[test]
    fn kn_sampler_matches_density_mean() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let n = 100_000;
        let m: f64 = (0..n).map(|_| sample_kn_deposit(CS137, &mut rng)).sum::<f64>() / n as f64;
        let emax = max_deposit(CS137);
        let expected = trapezoid(|x| x * kn_deposit_density(CS137, x), 0.0, emax, 100_000);
        assert!((m - expected).abs() < 3e-3, "{m} vs {expected}");
    }

    fn synthetic(ratio: impl Fn(f64) -> f64) -> AttenuationTable {
        let rows = (0..40)
            .map(|i| {
                let e = 0.05 * (1.5f64 / 0.05).powf(i as f64 / 39.0);
                let total = 0.1 / e;
                AttenuationRow {
                    energy_mev: e,
                    mu_total_mm: total,
                    mu_photo_mm: total * ratio(e),
                    mu_compton_mm: total * (1.0 - ratio(e)),
                }
            })
            .collect();
        AttenuationTable::new(rows).unwrap()
    }

    #[test]
    fn mu_is_exact_at_nodes_and_geometric_between() {
        let t = AttenuationTable::lyso();
        let rows = t.rows().to_vec();
        for r in &rows {
            assert_eq!(t.mu(MuKind::Total, r.energy_mev).unwrap(), r.mu_total_mm);
        }
        let (a, b) = (&rows[20], &rows[21]);
        let mid = (a.energy_mev * b.energy_mev).sqrt();
        assert_relative_eq!(
            t.mu(MuKind::Photo, mid).unwrap(),
            (a.mu_photo_mm * b.mu_photo_mm).sqrt(),
            max_relative = 1e-12
        );
        for i in 0..500 {
            let e = 0.05 + 1.45 * i as f64 / 499.0;
            let sum = t.mu(MuKind::Photo, e).unwrap() + t.mu(MuKind::Compton, e).unwrap();
            assert!(sum <= t.mu(MuKind::Total, e).unwrap() * (1.0 + 1e-6));
        }
        assert!(matches!(
            t.mu(MuKind::Total, 2.0),
            Err(Error::EnergyOutOfRange { .. })
        ));
    }

    #[test]
    fn csv_round_trip_and_validation() {
        let t = AttenuationTable::lyso();
        let back = AttenuationTable::from_csv_reader(t.to_csv().unwrap().as_bytes()).unwrap();
        assert_eq!(back, t);
        let bad = "energy_mev,mu_total_mm,mu_photo_mm,mu_compton_mm\n0.1,1,0.8,0.5\n0.2,1,0.1,0.1\n";
        assert!(AttenuationTable::from_csv_reader(bad.as_bytes()).is_err());
        let unsorted = "energy_mev,mu_total_mm,mu_photo_mm,mu_compton_mm\n0.2,1,0.1,0.1\n0.1,1,0.1,0.1\n";
        assert!(AttenuationTable::from_csv_reader(unsorted.as_bytes()).is_err());
    }

    #[test]
    fn p_absorb_with_constant_ratio() {
        let t = synthetic(|_| 0.3);
        let odds = analytic_p_absorb(&t, CS137).unwrap();
        assert_relative_eq!(odds.p_absorb, 0.3, epsilon = 1e-4);
        assert_eq!(odds.p_absorb + odds.p_scatter, 1.0);
    }

    #[test]
    fn p_absorb_below_ratio_at_e0_for_rising_ratio() {
        // μ^a/μ falls with energy, so the remaining energy E0 − E1 < E0 sees
        // a larger ratio: p_A must exceed the ratio at E0. With the ratio
        // rising in energy it must fall below it.
        let t = synthetic(|e| 0.2 + 0.4 * e);
        let odds = analytic_p_absorb(&t, CS137).unwrap();
        let oracle = trapezoid(
            |x| t.absorb_fraction(CS137 - x).unwrap() * kn_deposit_density(CS137, x),
            0.0,
            max_deposit(CS137),
            200_000,
        );
        assert_relative_eq!(odds.p_absorb, oracle, epsilon = 1e-5);
        assert!(odds.p_absorb < t.absorb_fraction(CS137).unwrap());
    }
}
