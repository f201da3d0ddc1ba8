//! Expectation–maximization over summed energy deposits.
//!
//! Each event contributes Ẽ = Ẽ1 + Ẽ2. If the second interaction absorbed the
//! photon the true sum is E0; if it scattered again, the sum follows the
//! Klein–Nishina cascade E1 + E2 with E2 drawn at energy E0 − E1. Both are
//! blurred by Gaussian noise of width σ. The EM alternates closed-form mixture
//! weights with a grid search over (E0, σ).

use std::collections::HashMap;
use std::sync::OnceLock;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::SecondKind;
use crate::physics::{kn_deposit_density, max_deposit, MC2};
use crate::stats::{normal_log_pdf, std_normal_cdf, std_normal_pdf};

/// Trapezoid nodes per marginalization dimension.
pub const DEFAULT_NODES: usize = 400;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmParams {
    #[serde(rename = "p_A")]
    pub p_absorb: f64,
    #[serde(rename = "p_CS")]
    pub p_scatter: f64,
    #[serde(rename = "E0")]
    pub e0: f64,
    pub sigma: f64,
}

impl EmParams {
    pub fn new(p_absorb: f64, e0: f64, sigma: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p_absorb) || !(e0 > 0.0) || !(sigma > 0.0) {
            return Err(Error::Domain(format!(
                "EM parameters p_A={p_absorb}, E0={e0}, sigma={sigma}"
            )));
        }
        Ok(Self { p_absorb, p_scatter: 1.0 - p_absorb, e0, sigma })
    }

    pub fn weight(&self, kind: SecondKind) -> f64 {
        match kind {
            SecondKind::Absorb => self.p_absorb,
            SecondKind::Scatter => self.p_scatter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmConfig {
    pub e0_grid: Vec<f64>,
    pub sigma_grid: Vec<f64>,
    pub max_iterations: usize,
    /// The run stops once the grid cell repeats and p_A moves less than this.
    pub weight_tolerance: f64,
    pub nodes: usize,
    /// Starting point; when absent the grid cell of highest likelihood at
    /// equal mixture weights is used.
    pub initial: Option<EmParams>,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            e0_grid: grid(0.5, 1.0, 0.02),
            sigma_grid: grid(1e-4, 0.1, 0.002),
            max_iterations: 10,
            weight_tolerance: 1e-3,
            nodes: DEFAULT_NODES,
            initial: None,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, g) in [("E0", &self.e0_grid), ("sigma", &self.sigma_grid)] {
            if g.is_empty() {
                return Err(Error::Config(format!("{name} grid is empty")));
            }
            if g.iter().any(|v| !(*v > 0.0)) || g.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::Config(format!(
                    "{name} grid must be positive and strictly ascending"
                )));
            }
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be at least 1".into()));
        }
        if !(self.weight_tolerance >= 0.0) {
            return Err(Error::Config("weight_tolerance must be non-negative".into()));
        }
        if self.nodes < 3 {
            return Err(Error::Config("need at least 3 quadrature nodes".into()));
        }
        Ok(())
    }
}

/// `lo, lo + step, …` up to `hi` inclusive (tolerant to rounding).
pub fn grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    (0..=n).map(|i| lo + step * i as f64).collect()
}

// Φ and φ on [−CUT, 0] tabulated for cubic Hermite interpolation; beyond the
// cut both are below 1e−18 and treated as zero.
const CUT: f64 = 9.0;
const TABLE_STEP: f64 = 1.0 / 64.0;

struct NormalTable {
    cdf: Vec<f64>,
    pdf: Vec<f64>,
    dpdf: Vec<f64>,
}

fn normal_table() -> &'static NormalTable {
    static TABLE: OnceLock<NormalTable> = OnceLock::new();
    TABLE.get_or_init(|| {
        let n = (CUT / TABLE_STEP).round() as usize;
        let us: Vec<f64> = (0..=n).map(|i| -CUT + TABLE_STEP * i as f64).collect();
        NormalTable {
            cdf: us.iter().map(|&u| std_normal_cdf(u)).collect(),
            pdf: us.iter().map(|&u| std_normal_pdf(u)).collect(),
            dpdf: us.iter().map(|&u| -u * std_normal_pdf(u)).collect(),
        }
    })
}

/// (Φ(−|u|), φ(u)): the tail mass beyond |u| and the density.
fn tail_and_density(u: f64) -> (f64, f64) {
    let v = -u.abs();
    if v <= -CUT {
        return (0.0, 0.0);
    }
    let t = normal_table();
    let x = (v + CUT) / TABLE_STEP;
    let i = (x as usize).min(t.cdf.len() - 2);
    let s = x - i as f64;
    let (s2, s3) = (s * s, s * s * s);
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = (s3 - 2.0 * s2 + s) * TABLE_STEP;
    let h01 = -2.0 * s3 + 3.0 * s2;
    let h11 = (s3 - s2) * TABLE_STEP;
    (
        h00 * t.cdf[i] + h10 * t.pdf[i] + h01 * t.cdf[i + 1] + h11 * t.pdf[i + 1],
        h00 * t.pdf[i] + h10 * t.dpdf[i] + h01 * t.pdf[i + 1] + h11 * t.dpdf[i + 1],
    )
}

/// Standard-normal mass on [a, b] from the tails at both ends.
fn mass_between(a: f64, tail_a: f64, b: f64, tail_b: f64) -> f64 {
    if a >= 0.0 {
        tail_a - tail_b
    } else if b <= 0.0 {
        tail_b - tail_a
    } else {
        1.0 - tail_a - tail_b
    }
}

/// Noiseless density of E1 + E2 for a scatter–scatter event, tabulated on a
/// uniform grid over its support and interpolated linearly.
#[derive(Debug, Clone)]
pub struct ScatterSum {
    e0: f64,
    step: f64,
    values: Vec<f64>,
}

impl ScatterSum {
    pub fn new(e0: f64, nodes: usize) -> Self {
        let top = max_sum(e0);
        let step = top / (nodes - 1) as f64;
        let values = (0..nodes)
            .map(|i| cascade_integral(e0, i as f64 * step, nodes))
            .collect();
        Self { e0, step, values }
    }

    pub fn e0(&self) -> f64 {
        self.e0
    }

    pub fn support(&self) -> (f64, f64) {
        (0.0, self.step * (self.values.len() - 1) as f64)
    }

    /// Piecewise-linear interpolant of the noiseless density.
    pub fn noiseless(&self, e: f64) -> f64 {
        let x = e / self.step;
        if x < 0.0 || x > (self.values.len() - 1) as f64 {
            return 0.0;
        }
        let i = (x.floor() as usize).min(self.values.len() - 2);
        let s = x - i as f64;
        self.values[i] * (1.0 - s) + self.values[i + 1] * s
    }

    /// Exact convolution of the interpolant with N(0, σ²), evaluated at `y`.
    pub fn noisy(&self, y: f64, sigma: f64) -> f64 {
        let h = self.step;
        let last = self.values.len() - 1;
        let from = (((y - CUT * sigma) / h).floor().max(0.0) as usize).min(last);
        let to = (((y + CUT * sigma) / h).ceil().max(0.0) as usize).min(last);
        if from >= to {
            return 0.0;
        }
        let mut ua = (from as f64 * h - y) / sigma;
        let (mut tail_a, mut pdf_a) = tail_and_density(ua);
        let mut acc = 0.0;
        for j in from..to {
            let ub = ((j + 1) as f64 * h - y) / sigma;
            let (tail_b, pdf_b) = tail_and_density(ub);
            let (ga, gb) = (self.values[j], self.values[j + 1]);
            let slope = (gb - ga) / h;
            let level = ga + slope * (y - j as f64 * h);
            acc += level * mass_between(ua, tail_a, ub, tail_b) + slope * sigma * (pdf_a - pdf_b);
            (ua, tail_a, pdf_a) = (ub, tail_b, pdf_b);
        }
        acc.max(0.0)
    }
}

/// Largest attainable E1 + E2 for two Compton scatters.
pub fn max_sum(e0: f64) -> f64 {
    let e1 = max_deposit(e0);
    e1 + max_deposit(e0 - e1)
}

/// ∫ f(E1 | E0) f(E − E1 | E0 − E1) dE1 by the trapezoid rule on the E1 range
/// compatible with the total `e`.
fn cascade_integral(e0: f64, e: f64, nodes: usize) -> f64 {
    // E − E1 ≤ max_deposit(E0 − E1) holds once E1 exceeds this bound
    let rem = e0 - e;
    let lo = if 2.0 * rem < MC2 {
        (e0 - rem / (1.0 - 2.0 * rem / MC2)).max(0.0)
    } else {
        0.0
    };
    let hi = e.min(max_deposit(e0));
    if hi <= lo {
        return 0.0;
    }
    let f = |e1: f64| {
        let rest = e0 - e1;
        let e2 = (e - e1).clamp(0.0, max_deposit(rest));
        kn_deposit_density(e0, e1) * kn_deposit_density(rest, e2)
    };
    let dx = (hi - lo) / (nodes - 1) as f64;
    let inner: f64 = (1..nodes - 1).map(|k| f(lo + k as f64 * dx)).sum();
    dx * (inner + 0.5 * (f(lo) + f(hi)))
}

/// Density of the noisy summed deposit `e_tilde` given E0, the second
/// interaction kind and the noise width.
pub fn summed_density(e_tilde: f64, e0: f64, kind: SecondKind, sigma: f64) -> f64 {
    match kind {
        SecondKind::Absorb => normal_log_pdf(e_tilde, e0, sigma).exp(),
        SecondKind::Scatter => ScatterSum::new(e0, DEFAULT_NODES).noisy(e_tilde, sigma),
    }
}

/// Component densities with the scatter tables cached per E0.
#[derive(Debug, Default)]
pub struct SumModel {
    nodes: usize,
    tables: HashMap<u64, ScatterSum>,
}

impl SumModel {
    pub fn new(nodes: usize) -> Self {
        Self { nodes, tables: HashMap::new() }
    }

    /// Tabulate every E0 that will be queried.
    pub fn prepare(&mut self, energies: &[f64]) {
        let missing: Vec<f64> = energies
            .iter()
            .copied()
            .filter(|e| !self.tables.contains_key(&e.to_bits()))
            .collect();
        let nodes = self.nodes;
        let built: Vec<ScatterSum> =
            missing.par_iter().map(|&e| ScatterSum::new(e, nodes)).collect();
        for t in built {
            self.tables.insert(t.e0.to_bits(), t);
        }
    }

    pub fn scatter(&self, e0: f64) -> &ScatterSum {
        self.tables
            .get(&e0.to_bits())
            .expect("scatter table prepared for every queried E0")
    }

    pub fn densities(&self, y: f64, e0: f64, sigma: f64) -> (f64, f64) {
        (
            normal_log_pdf(y, e0, sigma).exp(),
            self.scatter(e0).noisy(y, sigma),
        )
    }
}

/// Posterior probability of the Absorb component, or `None` when both
/// weighted densities vanish.
pub fn responsibility(p_absorb: f64, f_absorb: f64, p_scatter: f64, f_scatter: f64) -> Option<f64> {
    let a = p_absorb * f_absorb;
    let c = p_scatter * f_scatter;
    let total = a + c;
    (total > 0.0 && total.is_finite()).then(|| a / total)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities {
    /// t_{n,A}; the scatter responsibility is the complement.
    pub absorb: Vec<f64>,
    /// Events where both densities vanished and 0.5/0.5 was used.
    pub fallback: Vec<bool>,
}

impl Responsibilities {
    pub fn scatter(&self, n: usize) -> f64 {
        1.0 - self.absorb[n]
    }

    pub fn fallback_count(&self) -> usize {
        self.fallback.iter().filter(|f| **f).count()
    }

    pub fn classify(&self) -> Vec<SecondKind> {
        self.absorb
            .iter()
            .map(|&t| if t >= 0.5 { SecondKind::Absorb } else { SecondKind::Scatter })
            .collect()
    }
}

pub fn e_step(sums: &[f64], params: &EmParams, model: &SumModel) -> Responsibilities {
    let (absorb, fallback): (Vec<f64>, Vec<bool>) = sums
        .par_iter()
        .map(|&y| {
            let (fa, fc) = model.densities(y, params.e0, params.sigma);
            match responsibility(params.p_absorb, fa, params.p_scatter, fc) {
                Some(t) => (t, false),
                None => (0.5, true),
            }
        })
        .unzip();
    let n_fallback = fallback.iter().filter(|f| **f).count();
    if n_fallback > 0 {
        warn!("{n_fallback} events have zero density under both kinds; using 0.5/0.5");
    }
    Responsibilities { absorb, fallback }
}

fn weighted_log(t: f64, f: f64) -> f64 {
    if t == 0.0 {
        0.0
    } else {
        t * f.ln()
    }
}

/// Σ_n t_A ln f_A + t_CS ln f_CS at one grid cell (mixture weights excluded).
fn q_cell(sums: &[f64], resp: &Responsibilities, table: &ScatterSum, sigma: f64) -> f64 {
    let e0 = table.e0();
    sums.iter()
        .zip(&resp.absorb)
        .map(|(&y, &ta)| {
            let la = if ta == 0.0 { 0.0 } else { ta * normal_log_pdf(y, e0, sigma) };
            la + weighted_log(1.0 - ta, table.noisy(y, sigma))
        })
        .sum()
}

/// Closed-form weights and grid argmax of (E0, σ). Ties keep the
/// lexicographically smallest cell.
pub fn m_step(sums: &[f64], resp: &Responsibilities, config: &EmConfig, model: &SumModel) -> EmParams {
    let n = sums.len().max(1) as f64;
    let p_absorb = (resp.absorb.iter().sum::<f64>() / n).clamp(0.0, 1.0);
    let (e0, sigma) = grid_argmax(config, |table, sigma| q_cell(sums, resp, table, sigma), model);
    EmParams { p_absorb, p_scatter: 1.0 - p_absorb, e0, sigma }
}

fn grid_argmax<F>(config: &EmConfig, score: F, model: &SumModel) -> (f64, f64)
where
    F: Fn(&ScatterSum, f64) -> f64 + Sync,
{
    let cells: Vec<(usize, usize)> = (0..config.e0_grid.len())
        .flat_map(|i| (0..config.sigma_grid.len()).map(move |j| (i, j)))
        .collect();
    let scores: Vec<f64> = cells
        .par_iter()
        .map(|&(i, j)| score(model.scatter(config.e0_grid[i]), config.sigma_grid[j]))
        .collect();
    let mut best = (0, f64::NEG_INFINITY);
    for (c, &s) in scores.iter().enumerate() {
        if s > best.1 {
            best = (c, s);
        }
    }
    let (i, j) = cells[best.0];
    (config.e0_grid[i], config.sigma_grid[j])
}

/// Σ_n ln(p_A f_A + p_CS f_CS).
pub fn observed_log_likelihood(sums: &[f64], params: &EmParams, model: &SumModel) -> f64 {
    sums.par_iter()
        .map(|&y| {
            let (fa, fc) = model.densities(y, params.e0, params.sigma);
            (params.p_absorb * fa + params.p_scatter * fc).ln()
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmRun {
    /// Parameters after each iteration, starting with the initial point.
    pub trace: Vec<EmParams>,
    pub log_likelihood: Vec<f64>,
    pub iterations: usize,
    pub responsibilities: Responsibilities,
    pub classifications: Vec<SecondKind>,
}

impl EmRun {
    pub fn estimate(&self) -> EmParams {
        *self.trace.last().expect("trace holds the initial point")
    }

    pub fn report(&self) -> EmReport {
        let p = self.estimate();
        EmReport {
            e0: p.e0,
            sigma: p.sigma,
            p_absorb: p.p_absorb,
            p_scatter: p.p_scatter,
            iterations: self.iterations,
            classifications: self.classifications.clone(),
        }
    }
}

/// Serialized EM result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmReport {
    #[serde(rename = "E0")]
    pub e0: f64,
    pub sigma: f64,
    #[serde(rename = "p_A")]
    pub p_absorb: f64,
    #[serde(rename = "p_CS")]
    pub p_scatter: f64,
    pub iterations: usize,
    pub classifications: Vec<SecondKind>,
}

fn initial_params(sums: &[f64], config: &EmConfig, model: &SumModel) -> EmParams {
    if let Some(p) = config.initial {
        return p;
    }
    let (e0, sigma) = grid_argmax(
        config,
        |table, sigma| {
            sums.iter()
                .map(|&y| {
                    let fa = normal_log_pdf(y, table.e0(), sigma).exp();
                    (0.5 * fa + 0.5 * table.noisy(y, sigma)).ln()
                })
                .sum()
        },
        model,
    );
    EmParams { p_absorb: 0.5, p_scatter: 0.5, e0, sigma }
}

/// Alternate E and M steps until the grid argmax stops moving and the
/// weights settle, or the iteration budget runs out.
pub fn run_em(sums: &[f64], config: &EmConfig) -> Result<EmRun> {
    config.validate()?;
    if sums.len() < 2 {
        return Err(Error::Data(format!("EM needs at least 2 events, got {}", sums.len())));
    }
    if let Some(bad) = sums.iter().find(|v| !v.is_finite()) {
        return Err(Error::Data(format!("non-finite summed energy {bad}")));
    }
    let mut model = SumModel::new(config.nodes);
    let mut energies = config.e0_grid.clone();
    if let Some(p) = config.initial {
        energies.push(p.e0);
    }
    model.prepare(&energies);

    let mut params = initial_params(sums, config, &model);
    let mut trace = vec![params];
    let mut log_likelihood = vec![observed_log_likelihood(sums, &params, &model)];
    let mut resp = e_step(sums, &params, &model);
    let mut iterations = 0;
    while iterations < config.max_iterations {
        let next = m_step(sums, &resp, config, &model);
        iterations += 1;
        let settled = next.e0 == params.e0
            && next.sigma == params.sigma
            && (next.p_absorb - params.p_absorb).abs() < config.weight_tolerance;
        params = next;
        trace.push(params);
        log_likelihood.push(observed_log_likelihood(sums, &params, &model));
        resp = e_step(sums, &params, &model);
        if settled {
            break;
        }
    }
    let classifications = resp.classify();
    Ok(EmRun { trace, log_likelihood, iterations, responsibilities: resp, classifications })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics::sample_kn_deposit;
    use crate::rng::stream;
    use approx::assert_relative_eq;

    const CS137: f64 = 0.6617;

    #[test]
    fn tabulated_cdf_matches_reference() {
        let (mut worst_cdf, mut worst_pdf): (f64, f64) = (0.0, 0.0);
        for i in 0..=18_000 {
            let u = -9.0 + i as f64 * 1e-3;
            let (tail, pdf) = tail_and_density(u);
            worst_cdf = worst_cdf.max((tail - std_normal_cdf(-u.abs())).abs());
            worst_pdf = worst_pdf.max((pdf - std_normal_pdf(u)).abs());
        }
        assert!(worst_cdf < 1e-10, "cdf error {worst_cdf}");
        assert!(worst_pdf < 1e-9, "pdf error {worst_pdf}");
        let mass = |a: f64, b: f64| mass_between(a, tail_and_density(a).0, b, tail_and_density(b).0);
        assert_relative_eq!(mass(-1.0, 1.0), 0.682_689_492_137_085_9, epsilon = 1e-10);
        assert_relative_eq!(mass(2.0, 3.0), 0.021_400_233_916_549_1, epsilon = 1e-11);
        assert_relative_eq!(mass(-3.0, -2.0), 0.021_400_233_916_549_1, epsilon = 1e-11);
        assert_eq!(mass(12.0, 20.0), 0.0);
    }

    #[test]
    fn grids_match_their_stated_ranges() {
        let c = EmConfig::default();
        assert_eq!(c.e0_grid.len(), 26);
        assert_relative_eq!(*c.e0_grid.last().unwrap(), 1.0, epsilon = 1e-12);
        assert_eq!(c.sigma_grid.len(), 50);
        assert_relative_eq!(c.sigma_grid[1], 0.0021, epsilon = 1e-15);
        assert!(c.validate().is_ok());
        let bad = EmConfig { sigma_grid: vec![0.02, 0.01], ..EmConfig::default() };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn absorb_peak_height() {
        let s = 0.029;
        assert_relative_eq!(
            summed_density(CS137, CS137, SecondKind::Absorb, s),
            1.0 / (s * (2.0 * std::f64::consts::PI).sqrt()),
            max_relative = 1e-12
        );
    }

    #[test]
    fn scatter_sum_matches_cascade_sampling() {
        // histogram of E1 + E2 from the sampler against the tabulated density
        let table = ScatterSum::new(CS137, DEFAULT_NODES);
        let (_, top) = table.support();
        let n = 400_000;
        let bins = 25;
        let mut counts = vec![0usize; bins];
        let mut rng = stream(3, "cascade", &[]);
        for _ in 0..n {
            let e1 = sample_kn_deposit(CS137, &mut rng);
            let e2 = sample_kn_deposit(CS137 - e1, &mut rng);
            assert!(e1 + e2 <= top + 1e-12);
            counts[(((e1 + e2) / top) * bins as f64) as usize % bins] += 1;
        }
        let w = top / bins as f64;
        for (b, &c) in counts.iter().enumerate() {
            let expected = (0..200)
                .map(|k| table.noiseless(w * (b as f64 + (k as f64 + 0.5) / 200.0)))
                .sum::<f64>()
                * w
                / 200.0
                * n as f64;
            assert!(
                (c as f64 - expected).abs() < 4.0 * expected.sqrt() + 5.0,
                "bin {b}: {c} vs {expected:.1}"
            );
        }
    }

    #[test]
    fn scatter_branch_normalizes() {
        for &(e0, sigma) in &[(CS137, 0.029), (0.5, 0.0101), (1.0, 0.0981)] {
            let table = ScatterSum::new(e0, DEFAULT_NODES);
            let (lo, hi) = (-10.0 * sigma, max_sum(e0) + 10.0 * sigma);
            let m = 20_000;
            let dx = (hi - lo) / m as f64;
            let total: f64 = (0..m).map(|k| table.noisy(lo + (k as f64 + 0.5) * dx, sigma)).sum::<f64>() * dx;
            assert!((total - 1.0).abs() < 2e-3, "E0={e0} sigma={sigma}: {total}");
        }
    }

    #[test]
    fn convolution_matches_brute_force() {
        let table = ScatterSum::new(CS137, 120);
        for &(y, sigma) in &[(0.3, 0.029), (0.55, 0.01), (0.6, 0.05), (0.01, 0.0021)] {
            let m = 200_000;
            let (lo, hi) = table.support();
            let dx = (hi - lo) / m as f64;
            let brute: f64 = (0..m)
                .map(|k| {
                    let x = lo + (k as f64 + 0.5) * dx;
                    table.noiseless(x) * std_normal_pdf((y - x) / sigma) / sigma
                })
                .sum::<f64>()
                * dx;
            assert_relative_eq!(table.noisy(y, sigma), brute, max_relative = 1e-5);
        }
    }

    #[test]
    fn scatter_vanishes_above_the_source_energy() {
        assert_eq!(summed_density(CS137 + 0.01, CS137, SecondKind::Scatter, 1e-4), 0.0);
        assert!(summed_density(0.3, CS137, SecondKind::Scatter, 1e-4) > 0.0);
    }

    #[test]
    fn responsibilities_follow_bayes_ratios() {
        // three events with hand-set component densities
        let (pa, pc) = (0.7, 0.3);
        let cases = [(2.0, 1.0), (0.1, 4.0), (0.5, 0.5)];
        let expected = [1.4 / 1.7, 0.07 / 1.27, 0.35 / 0.5];
        for ((fa, fc), want) in cases.iter().zip(expected) {
            assert_relative_eq!(responsibility(pa, *fa, pc, *fc).unwrap(), want, max_relative = 1e-14);
        }
        assert_eq!(responsibility(0.5, 0.0, 0.5, 0.0), None);
    }

    #[test]
    fn e_step_limits_and_fallback() {
        let mut model = SumModel::new(DEFAULT_NODES);
        model.prepare(&[CS137]);
        let sums = [0.2, 0.45, CS137, 5.0];
        let only_absorb = EmParams::new(1.0, CS137, 0.029).unwrap();
        let r = e_step(&sums[..3], &only_absorb, &model);
        assert!(r.absorb.iter().all(|&t| t == 1.0));

        let mixed = EmParams::new(0.5, CS137, 0.002).unwrap();
        let r = e_step(&sums, &mixed, &model);
        assert!(r.absorb[2] > 1.0 - 1e-9);
        assert!(r.absorb[0] < 1e-9);
        assert!(r.fallback[3] && r.absorb[3] == 0.5);
        assert_eq!(r.fallback_count(), 1);
        for n in 0..sums.len() {
            assert!((0.0..=1.0).contains(&r.absorb[n]));
            assert_relative_eq!(r.absorb[n] + r.scatter(n), 1.0);
        }
    }

    #[test]
    fn m_step_closed_form_and_single_cell() {
        let config = EmConfig { e0_grid: vec![0.66], sigma_grid: vec![0.03], ..EmConfig::default() };
        let mut model = SumModel::new(DEFAULT_NODES);
        model.prepare(&config.e0_grid);
        let sums = [0.3, 0.65, 0.67];
        let all_a = Responsibilities { absorb: vec![1.0; 3], fallback: vec![false; 3] };
        let p = m_step(&sums, &all_a, &config, &model);
        assert_eq!((p.p_absorb, p.e0, p.sigma), (1.0, 0.66, 0.03));
        let even = Responsibilities { absorb: vec![0.5; 3], fallback: vec![false; 3] };
        let p = m_step(&sums, &even, &config, &model);
        assert_eq!((p.p_absorb, p.p_scatter), (0.5, 0.5));
    }

    #[test]
    fn grid_ties_resolve_to_smallest_cell() {
        let config = EmConfig { e0_grid: vec![0.6, 0.7], sigma_grid: vec![0.01, 0.02], ..EmConfig::default() };
        let mut model = SumModel::new(50);
        model.prepare(&config.e0_grid);
        assert_eq!(grid_argmax(&config, |_, _| 1.0, &model), (0.6, 0.01));
        assert_eq!(grid_argmax(&config, |t, _| -(t.e0() - 0.7).abs(), &model), (0.7, 0.01));
    }

    #[test]
    fn noiseless_absorb_data_recovers_nearest_node() {
        let sums = vec![CS137; 40];
        let run = run_em(&sums, &EmConfig::default()).unwrap();
        let p = run.estimate();
        assert_relative_eq!(p.e0, 0.66, epsilon = 1e-12);
        assert_eq!(p.p_absorb, 1.0);
        assert!(run.classifications.iter().all(|k| *k == SecondKind::Absorb));
    }

    fn synthetic_sums(n: usize, p_absorb: f64, sigma: f64, seed: u64) -> (Vec<f64>, Vec<SecondKind>) {
        use rand::Rng;
        let mut rng = stream(seed, "em-test", &[]);
        (0..n)
            .map(|_| {
                let e1 = sample_kn_deposit(CS137, &mut rng);
                let (e2, kind) = if rng.random::<f64>() < p_absorb {
                    (CS137 - e1, SecondKind::Absorb)
                } else {
                    (sample_kn_deposit(CS137 - e1, &mut rng), SecondKind::Scatter)
                };
                let z: f64 = rng.sample(rand_distr::StandardNormal);
                (e1 + e2 + sigma * z, kind)
            })
            .unzip()
    }

    #[test]
    fn em_recovers_synthetic_mixture_monotonically() {
        let (sums, kinds) = synthetic_sums(600, 0.7, 0.03, 11);
        let config = EmConfig {
            e0_grid: grid(0.6, 0.72, 0.02),
            sigma_grid: grid(0.02, 0.04, 0.002),
            nodes: 200,
            ..EmConfig::default()
        };
        let run = run_em(&sums, &config).unwrap();
        let p = run.estimate();
        assert!((p.e0 - CS137).abs() <= 0.02);
        assert!((p.sigma - 0.03).abs() <= 0.004, "sigma {}", p.sigma);
        assert!((p.p_absorb - 0.7).abs() < 0.06, "p_A {}", p.p_absorb);
        for w in run.log_likelihood.windows(2).skip(1) {
            assert!(w[1] >= w[0] - 1e-9, "log-likelihood fell: {w:?}");
        }
        let wrong = run.classifications.iter().zip(&kinds).filter(|(a, b)| a != b).count();
        assert!(wrong < 30, "{wrong} misclassified");
    }

    #[test]
    fn far_outlier_goes_to_the_absorb_side() {
        let (mut sums, _) = synthetic_sums(200, 0.7, 0.03, 5);
        sums.push(0.9564);
        let config = EmConfig {
            e0_grid: grid(0.62, 0.7, 0.02),
            sigma_grid: grid(0.02, 0.04, 0.004),
            nodes: 200,
            ..EmConfig::default()
        };
        let run = run_em(&sums, &config).unwrap();
        let t = run.responsibilities.absorb[200];
        assert!(t > 0.999);
        assert_eq!(run.classifications[200], SecondKind::Absorb);
    }

    #[test]
    fn report_serializes_with_expected_keys() {
        let run = run_em(&[0.66, 0.661, 0.3], &EmConfig {
            e0_grid: vec![0.66],
            sigma_grid: vec![0.01],
            nodes: 50,
            ..EmConfig::default()
        })
        .unwrap();
        let json = serde_json::to_value(run.report()).unwrap();
        for key in ["E0", "sigma", "p_A", "p_CS", "iterations", "classifications"] {
            assert!(json.get(key).is_some(), "missing {key}");
        }
        assert_eq!(json["classifications"][2], "CS");
    }

    #[test]
    fn rejects_too_few_events() {
        assert!(matches!(run_em(&[0.6], &EmConfig::default()), Err(Error::Data(_))));
    }
}
