//! Metropolis-within-Gibbs sampler for the directions of `K` point sources.
//!
//! The state holds, per event, the true interaction positions and deposits
//! and a virtual source direction; per source, a direction and a relative
//! intensity; and the three noise scales. Every block is refreshed by one
//! Metropolis–Hastings step against its full conditional.
//!
//! Directions live on the unit sphere; the sphere radius is applied only
//! when a direction is handed to the forward model or reported.

use std::io::Write;
use std::path::Path;

use log::warn;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{back_project, bp_modes, SphereGrid, DEFAULT_BP_WIDTH, DEFAULT_MODE_SEPARATION, DEFAULT_PIXELS};
use crate::error::{Error, Result};
use crate::forward::{
    energy_noise_log_density, position_noise_log_density, Event, ForwardModel, Interaction, NoiseScales, NoisyEvent,
    SecondKind,
};
use crate::geometry::{DetectorArray, SphereModel};
use crate::physics::max_deposit;
use crate::rng::stream;
use crate::sphere::{Vec3, VonMisesFisher, UNIFORM_DENSITY};
use crate::stats::{ln_gamma, log_sum_exp, TruncatedNormal};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// Dirichlet concentrations, outlier first.
    pub alpha: Vec<f64>,
    /// Concentration of the virtual-source clusters.
    pub kappa: f64,
    /// Angular delta concentration of the forward model, rad⁻².
    pub a: f64,
    /// Spread of the initial virtual sources around their source.
    pub init_concentration: f64,
    /// Acceptance band the proposal scales are steered into.
    pub target_band: [f64; 2],
}

impl Hyperparams {
    pub fn for_sources(k: usize) -> Self {
        let mut alpha = vec![1.0];
        alpha.extend(std::iter::repeat_n(50.0, k));
        Self {
            alpha,
            kappa: 80.0,
            a: 400.0,
            init_concentration: 100.0,
            target_band: [0.40, 0.60],
        }
    }

    pub fn sources(&self) -> usize {
        self.alpha.len().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha.len() < 2 {
            return Err(Error::Config("alpha needs an outlier entry and at least one source".into()));
        }
        let positive = self
            .alpha
            .iter()
            .chain([&self.kappa, &self.a, &self.init_concentration])
            .all(|v| *v > 0.0 && v.is_finite());
        if !positive {
            return Err(Error::Config(format!("hyperparameters must be positive: {self:?}")));
        }
        let [lo, hi] = self.target_band;
        if !(0.0 < lo && lo < hi && hi < 1.0) {
            return Err(Error::Config(format!("target band must lie in (0, 1): {lo}, {hi}")));
        }
        Ok(())
    }
}

/// Initial proposal scales and the adaptation rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProposalConfig {
    /// Position step (xy, z), mm.
    pub position_step: [f64; 2],
    /// Deposit step, MeV.
    pub energy_step: f64,
    pub weight_step: f64,
    /// Steps of sigma_xy, sigma_z (mm) and sigma_E (MeV).
    pub sigma_step: [f64; 3],
    /// Initial von Mises–Fisher proposal concentration.
    pub concentration: f64,
    /// Proposals per adaptation window.
    pub window: u32,
    pub grow: f64,
    pub shrink: f64,
    /// Range of a scalar step as multiples of its initial value.
    pub step_range: [f64; 2],
    pub concentration_range: [f64; 2],
}

impl Default for ProposalConfig {
    fn default() -> Self {
        Self {
            position_step: [0.3, 0.5],
            energy_step: 0.01,
            weight_step: 0.05,
            sigma_step: [0.05, 0.05, 0.002],
            concentration: 500.0,
            window: 50,
            grow: 1.1,
            shrink: 0.9,
            step_range: [1e-3, 1e3],
            concentration_range: [1.0, 1e8],
        }
    }
}

/// Bounds of the uniform priors on the noise scales.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SigmaPriors {
    pub xy: [f64; 2],
    pub z: [f64; 2],
    #[serde(rename = "E")]
    pub energy: [f64; 2],
}

impl Default for SigmaPriors {
    fn default() -> Self {
        Self {
            xy: [0.05, 5.0],
            z: [0.05, 5.0],
            energy: [1e-3, 0.2],
        }
    }
}

impl SigmaPriors {
    pub fn contains(&self, s: &NoiseScales) -> bool {
        let inside = |v: f64, [lo, hi]: [f64; 2]| lo <= v && v <= hi;
        inside(s.sigma_xy, self.xy) && inside(s.sigma_z, self.z) && inside(s.sigma_e, self.energy)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GibbsConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub initial_sigma: NoiseScales,
    pub sigma_priors: SigmaPriors,
    pub proposals: ProposalConfig,
    /// Pixels of the back-projection image used for initialization.
    pub bp_pixels: usize,
    pub bp_width: f64,
    pub mode_separation: f64,
    /// Sweeps between state invariant checks.
    pub check_every: usize,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        Self {
            iterations: 10_000,
            burn_in: 2_000,
            seed: 0,
            initial_sigma: NoiseScales::default(),
            sigma_priors: SigmaPriors::default(),
            proposals: ProposalConfig::default(),
            bp_pixels: DEFAULT_PIXELS,
            bp_width: DEFAULT_BP_WIDTH,
            mode_separation: DEFAULT_MODE_SEPARATION,
            check_every: 100,
        }
    }
}

impl GibbsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.iterations {
            return Err(Error::Config(format!(
                "burn-in {} must be below the iteration count {}",
                self.burn_in, self.iterations
            )));
        }
        self.initial_sigma.validate()?;
        if !self.sigma_priors.contains(&self.initial_sigma) {
            return Err(Error::Config(format!(
                "initial noise scales {:?} outside their priors",
                self.initial_sigma
            )));
        }
        let p = &self.proposals;
        let steps = [p.position_step[0], p.position_step[1], p.energy_step, p.weight_step, p.concentration];
        if steps.iter().chain(&p.sigma_step).any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Config("proposal steps must be positive".into()));
        }
        if p.window == 0 || !(p.grow > 1.0) || !(0.0 < p.shrink && p.shrink < 1.0) {
            return Err(Error::Config("adaptation needs window > 0, grow > 1 and shrink in (0, 1)".into()));
        }
        if self.bp_pixels < 2 || !(self.bp_width > 0.0) {
            return Err(Error::Config("back-projection grid needs >= 2 pixels and a positive width".into()));
        }
        Ok(())
    }
}

/// A proposal scale steered by windowed acceptance rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Adaptive {
    pub value: f64,
    pub lo: f64,
    pub hi: f64,
    /// A larger value means a smaller move (concentrations).
    pub inverted: bool,
    window_accepted: u32,
    window_total: u32,
    pub accepted: u64,
    pub total: u64,
}

impl Adaptive {
    pub fn step(value: f64, range: [f64; 2]) -> Self {
        Self::new(value, value * range[0], value * range[1], false)
    }

    pub fn concentration(value: f64, range: [f64; 2]) -> Self {
        Self::new(value, range[0], range[1], true)
    }

    fn new(value: f64, lo: f64, hi: f64, inverted: bool) -> Self {
        Self {
            value,
            lo,
            hi,
            inverted,
            window_accepted: 0,
            window_total: 0,
            accepted: 0,
            total: 0,
        }
    }

    /// Tally one proposal; `retained` marks sweeps after burn-in.
    pub fn record(&mut self, accepted: bool, retained: bool) {
        self.window_accepted += accepted as u32;
        self.window_total += 1;
        if retained {
            self.accepted += accepted as u64;
            self.total += 1;
        }
    }

    pub fn window_rate(&self) -> Option<f64> {
        (self.window_total > 0).then(|| self.window_accepted as f64 / self.window_total as f64)
    }

    /// Rescale once the window is full, then start a new window.
    pub fn adapt(&mut self, band: [f64; 2], proposals: &ProposalConfig) {
        if self.window_total < proposals.window {
            return;
        }
        let rate = self.window_accepted as f64 / self.window_total as f64;
        let widen = rate > band[1];
        if widen || rate < band[0] {
            let factor = if widen != self.inverted { proposals.grow } else { proposals.shrink };
            self.value = (self.value * factor).clamp(self.lo, self.hi);
        }
        self.window_accepted = 0;
        self.window_total = 0;
    }

    pub fn rate(&self) -> f64 {
        if self.total == 0 {
            f64::NAN
        } else {
            self.accepted as f64 / self.total as f64
        }
    }
}

/// Candidate value with `log q(x | x*) − log q(x* | x)`.
#[derive(Debug, Clone, Copy)]
pub struct Proposal<T> {
    pub value: T,
    pub log_q_ratio: f64,
}

impl<T> Proposal<T> {
    pub fn symmetric(value: T) -> Self {
        Self { value, log_q_ratio: 0.0 }
    }
}

/// One Metropolis–Hastings decision in log space. Returns the new value,
/// its log target and whether the candidate was taken. Candidates with a
/// non-finite or NaN ratio are rejected; a uniform is drawn either way so
/// the stream position does not depend on the outcome.
pub fn mh_step<T, R: Rng + ?Sized>(
    current: T,
    current_log: f64,
    proposal: Proposal<T>,
    log_target: impl FnOnce(&T) -> f64,
    rng: &mut R,
) -> (T, f64, bool) {
    let u: f64 = rng.random();
    let cand_log = log_target(&proposal.value);
    let log_rho = cand_log - current_log + proposal.log_q_ratio;
    if cand_log.is_finite() && !log_rho.is_nan() && (log_rho >= 0.0 || u.ln() < log_rho) {
        (proposal.value, cand_log, true)
    } else {
        (current, current_log, false)
    }
}

/// Log density per steradian of a virtual source: a `kappa` von Mises–Fisher
/// cluster around each source with weight `w_k`, plus a uniform remainder.
pub fn prior_virtual_source_log(r0n: &Vec3, sources: &[Vec3], weights: &[f64], kappa: f64) -> f64 {
    let rest = 1.0 - weights.iter().sum::<f64>();
    let mut acc = if rest > 0.0 {
        (rest * UNIFORM_DENSITY).ln()
    } else {
        f64::NEG_INFINITY
    };
    let log_c = VonMisesFisher::log_normalizer(kappa);
    for (s, w) in sources.iter().zip(weights) {
        if *w > 0.0 {
            acc = log_sum_exp(acc, w.ln() + log_c + kappa * s.dot(r0n));
        }
    }
    acc
}

pub fn prior_virtual_source(r0n: &Vec3, sources: &[Vec3], weights: &[f64], kappa: f64) -> f64 {
    prior_virtual_source_log(r0n, sources, weights, kappa).exp()
}

/// Normalized Dirichlet log density of `(1 − Σw, w_1, …, w_K)`.
pub fn dirichlet_log_prior(weights: &[f64], alpha: &[f64]) -> f64 {
    debug_assert_eq!(weights.len() + 1, alpha.len());
    let rest = 1.0 - weights.iter().sum::<f64>();
    if rest <= 0.0 || weights.iter().any(|w| *w <= 0.0) {
        return f64::NEG_INFINITY;
    }
    let log_b = alpha.iter().map(|a| ln_gamma(*a)).sum::<f64>() - ln_gamma(alpha.iter().sum());
    let mut acc = (alpha[0] - 1.0) * rest.ln() - log_b;
    for (w, a) in weights.iter().zip(&alpha[1..]) {
        acc += (a - 1.0) * w.ln();
    }
    acc
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventSteps {
    pub r1: Adaptive,
    pub r2: Adaptive,
    pub energy: Adaptive,
    pub r0n: Adaptive,
}

/// Latent variables of one event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventState {
    pub id: u64,
    pub kind: SecondKind,
    pub r1: Vec3,
    pub r2: Vec3,
    pub e1: f64,
    pub e2: f64,
    pub r0n: Vec3,
    pub steps: EventSteps,
}

impl EventState {
    pub fn event(&self) -> Event {
        Event {
            first: Interaction::new(self.r1, self.e1),
            second: Interaction::new(self.r2, self.e2),
            second_kind: self.kind,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    /// Sorted by event id.
    pub events: Vec<EventState>,
    pub sources: Vec<Vec3>,
    pub weights: Vec<f64>,
    pub sigma: NoiseScales,
    pub source_steps: Vec<Adaptive>,
    pub weight_steps: Vec<Adaptive>,
    /// sigma_xy, sigma_z, sigma_E.
    pub sigma_steps: [Adaptive; 3],
}

impl ChainState {
    /// Checks positions, deposits and weights; names the first violation.
    pub fn check(&self, array: &DetectorArray, e0: f64) -> Result<()> {
        let total: f64 = self.weights.iter().sum();
        if !(total < 1.0) || self.weights.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::Data(format!("source weights {:?} leave no outlier mass", self.weights)));
        }
        for e in &self.events {
            if array.containing_sensor(&e.r1).is_none() || array.containing_sensor(&e.r2).is_none() {
                return Err(Error::Data(format!("event {}: latent position outside the sensors", e.id)));
            }
            let ok1 = (0.0..=max_deposit(e0)).contains(&e.e1);
            let ok2 = match e.kind {
                SecondKind::Absorb => e.e2 == e0 - e.e1,
                SecondKind::Scatter => (0.0..=max_deposit(e0 - e.e1)).contains(&e.e2),
            };
            if !(ok1 && ok2) {
                return Err(Error::Data(format!(
                    "event {}: deposits ({}, {}) violate the kinematic bounds",
                    e.id, e.e1, e.e2
                )));
            }
        }
        Ok(())
    }

    /// Adapt every proposal scale whose window is full. No-op after burn-in.
    pub fn adapt_proposals(&mut self, sweep: usize, burn_in: usize, band: [f64; 2], proposals: &ProposalConfig) {
        if sweep > burn_in {
            return;
        }
        for e in &mut self.events {
            for s in [&mut e.steps.r1, &mut e.steps.r2, &mut e.steps.energy, &mut e.steps.r0n] {
                s.adapt(band, proposals);
            }
        }
        for s in self.source_steps.iter_mut().chain(&mut self.weight_steps).chain(&mut self.sigma_steps) {
            s.adapt(band, proposals);
        }
    }
}

/// Everything a sweep reads but never changes.
pub struct Sampler<'a> {
    pub model: ForwardModel,
    pub sphere: SphereModel,
    pub hyper: Hyperparams,
    pub config: GibbsConfig,
    /// Observations sorted by id, aligned with the chain's events.
    observed: Vec<&'a NoisyEvent>,
    kinds: Vec<SecondKind>,
}

fn position_steps(scale: f64, base: [f64; 2]) -> [f64; 3] {
    [scale * base[0], scale * base[0], scale * base[1]]
}

/// Truncated-Gaussian move inside the sensor holding `current`.
fn propose_position<R: Rng + ?Sized>(
    array: &DetectorArray,
    current: &Vec3,
    steps: [f64; 3],
    rng: &mut R,
) -> Option<Proposal<Vec3>> {
    let s = array.containing_sensor(current)?;
    let (lo, hi) = (array.sensors()[s].lo(), array.sensors()[s].hi());
    let mut value = *current;
    let mut log_q_ratio = 0.0;
    for k in 0..3 {
        let fwd = TruncatedNormal::new(current[k], steps[k], lo[k], hi[k]);
        value[k] = fwd.sample(rng);
        let back = TruncatedNormal::new(value[k], steps[k], lo[k], hi[k]);
        log_q_ratio += fwd.mass().ln() - back.mass().ln();
    }
    Some(Proposal { value, log_q_ratio })
}

/// Paired deposit move: E1 in [0, max deposit at E0]; E2 then pinned to
/// E0 − E1 for an absorption or moved within its own Compton range.
fn propose_energies<R: Rng + ?Sized>(
    e0: f64,
    kind: SecondKind,
    (e1, e2): (f64, f64),
    step: f64,
    rng: &mut R,
) -> Proposal<(f64, f64)> {
    let m0 = max_deposit(e0);
    let fwd1 = TruncatedNormal::new(e1, step, 0.0, m0);
    let e1s = fwd1.sample(rng);
    let mut log_q_ratio = TruncatedNormal::new(e1s, step, 0.0, m0).log_pdf(e1) - fwd1.log_pdf(e1s);
    let e2s = match kind {
        SecondKind::Absorb => e0 - e1s,
        SecondKind::Scatter => {
            let fwd2 = TruncatedNormal::new(e2, step, 0.0, max_deposit(e0 - e1s));
            let e2s = fwd2.sample(rng);
            log_q_ratio +=
                TruncatedNormal::new(e2s, step, 0.0, max_deposit(e0 - e1)).log_pdf(e2) - fwd2.log_pdf(e2s);
            e2s
        }
    };
    Proposal {
        value: (e1s, e2s),
        log_q_ratio,
    }
}

fn position_noise(array: &DetectorArray, truth: &Vec3, obs: &Vec3, sigma: &NoiseScales) -> f64 {
    position_noise_log_density(array, truth, obs, sigma).unwrap_or(f64::NEG_INFINITY)
}

fn energy_noise(e: &EventState, obs: &NoisyEvent, sigma_e: f64) -> f64 {
    energy_noise_log_density(e.e1, obs.first.deposit, sigma_e) + energy_noise_log_density(e.e2, obs.second.deposit, sigma_e)
}

impl<'a> Sampler<'a> {
    /// `kinds[i]` is the second-interaction kind of `events[i]`.
    pub fn new(
        model: &ForwardModel,
        sphere: SphereModel,
        hyper: Hyperparams,
        config: GibbsConfig,
        events: &'a [NoisyEvent],
        kinds: &[SecondKind],
    ) -> Result<Self> {
        hyper.validate()?;
        config.validate()?;
        if events.is_empty() {
            return Err(Error::Data("localization needs at least one event".into()));
        }
        if kinds.len() != events.len() {
            return Err(Error::Data(format!(
                "{} events but {} second-interaction kinds",
                events.len(),
                kinds.len()
            )));
        }
        let mut order: Vec<usize> = (0..events.len()).collect();
        order.sort_by_key(|&i| events[i].id);
        if order.windows(2).any(|w| events[w[0]].id == events[w[1]].id) {
            return Err(Error::Data("event ids must be unique".into()));
        }
        Ok(Self {
            model: model.clone().with_concentrations(hyper.a, model.a_energy),
            sphere,
            hyper,
            config,
            observed: order.iter().map(|&i| &events[i]).collect(),
            kinds: order.iter().map(|&i| kinds[i]).collect(),
        })
    }

    pub fn e0(&self) -> f64 {
        self.model.e0
    }

    fn likelihood(&self, e: &EventState) -> f64 {
        self.model.event_log_likelihood(&self.sphere.point(&e.r0n), &e.event())
    }

    /// Conditional log target of a virtual source, up to a constant.
    pub fn r0n_log_target(&self, e: &EventState, r0n: &Vec3, sources: &[Vec3], weights: &[f64]) -> f64 {
        let moved = EventState { r0n: *r0n, ..*e };
        self.likelihood(&moved) + prior_virtual_source_log(r0n, sources, weights, self.hyper.kappa)
    }

    fn sources_log_target(&self, state: &ChainState, sources: &[Vec3], weights: &[f64]) -> f64 {
        state
            .events
            .iter()
            .map(|e| prior_virtual_source_log(&e.r0n, sources, weights, self.hyper.kappa))
            .sum()
    }

    fn position_noise_total(&self, state: &ChainState, sigma: &NoiseScales) -> f64 {
        let array = &self.model.array;
        state
            .events
            .iter()
            .zip(&self.observed)
            .map(|(e, o)| position_noise(array, &e.r1, &o.first.pos(), sigma) + position_noise(array, &e.r2, &o.second.pos(), sigma))
            .sum()
    }

    fn energy_noise_total(&self, state: &ChainState, sigma_e: f64) -> f64 {
        state.events.iter().zip(&self.observed).map(|(e, o)| energy_noise(e, o, sigma_e)).sum()
    }

    /// Updates r1, r2, (E1, E2) and r0n of one event in that order.
    fn update_event(
        &self,
        e: &mut EventState,
        obs: &NoisyEvent,
        sources: &[Vec3],
        weights: &[f64],
        sigma: &NoiseScales,
        sweep: usize,
    ) {
        let retained = sweep > self.config.burn_in;
        let array = &self.model.array;
        let p = &self.config.proposals;
        let e0 = self.e0();
        let mut rng = stream(self.config.seed, "gibbs-event", &[e.id, sweep as u64]);
        let mut lik = self.likelihood(e);

        // first interaction position
        let noise = position_noise(array, &e.r1, &obs.first.pos(), sigma);
        let steps = position_steps(e.steps.r1.value, p.position_step);
        let accepted = match propose_position(array, &e.r1, steps, &mut rng) {
            Some(prop) => {
                let mut cand_lik = lik;
                let (r1, _, acc) = mh_step(e.r1, lik + noise, prop, |r1| {
                    cand_lik = self.likelihood(&EventState { r1: *r1, ..*e });
                    cand_lik + position_noise(array, r1, &obs.first.pos(), sigma)
                }, &mut rng);
                if acc {
                    e.r1 = r1;
                    lik = cand_lik;
                }
                acc
            }
            None => false,
        };
        e.steps.r1.record(accepted, retained);

        // second interaction position
        let noise = position_noise(array, &e.r2, &obs.second.pos(), sigma);
        let steps = position_steps(e.steps.r2.value, p.position_step);
        let accepted = match propose_position(array, &e.r2, steps, &mut rng) {
            Some(prop) => {
                let mut cand_lik = lik;
                let (r2, _, acc) = mh_step(e.r2, lik + noise, prop, |r2| {
                    cand_lik = self.likelihood(&EventState { r2: *r2, ..*e });
                    cand_lik + position_noise(array, r2, &obs.second.pos(), sigma)
                }, &mut rng);
                if acc {
                    e.r2 = r2;
                    lik = cand_lik;
                }
                acc
            }
            None => false,
        };
        e.steps.r2.record(accepted, retained);

        // deposits, jointly
        let noise = energy_noise(e, obs, sigma.sigma_e);
        let prop = propose_energies(e0, e.kind, (e.e1, e.e2), e.steps.energy.value, &mut rng);
        let mut cand_lik = lik;
        let ((e1, e2), _, accepted) = mh_step((e.e1, e.e2), lik + noise, prop, |&(e1, e2)| {
            let moved = EventState { e1, e2, ..*e };
            cand_lik = self.likelihood(&moved);
            cand_lik + energy_noise(&moved, obs, sigma.sigma_e)
        }, &mut rng);
        if accepted {
            e.e1 = e1;
            e.e2 = e2;
            lik = cand_lik;
        }
        e.steps.energy.record(accepted, retained);

        // virtual source
        let current = lik + prior_virtual_source_log(&e.r0n, sources, weights, self.hyper.kappa);
        let prop = Proposal::symmetric(VonMisesFisher::new(e.r0n, e.steps.r0n.value).sample(&mut rng));
        let (r0n, _, accepted) = mh_step(e.r0n, current, prop, |r| self.r0n_log_target(e, r, sources, weights), &mut rng);
        e.r0n = r0n;
        e.steps.r0n.record(accepted, retained);
    }

    /// One full sweep: events (in parallel), then sources and weights in
    /// ascending k, then the three noise scales.
    pub fn sweep(&self, state: &mut ChainState, sweep: usize) {
        let retained = sweep > self.config.burn_in;
        {
            let (sources, weights, sigma) = (&state.sources, &state.weights, &state.sigma);
            state
                .events
                .par_iter_mut()
                .zip(self.observed.par_iter())
                .for_each(|(e, obs)| self.update_event(e, obs, sources, weights, sigma, sweep));
        }

        let mut rng = stream(self.config.seed, "gibbs-global", &[sweep as u64]);
        for k in 0..state.sources.len() {
            let current = self.sources_log_target(state, &state.sources, &state.weights);
            let prop = Proposal::symmetric(VonMisesFisher::new(state.sources[k], state.source_steps[k].value).sample(&mut rng));
            let (src, _, accepted) = mh_step(state.sources[k], current, prop, |s| {
                let mut sources = state.sources.clone();
                sources[k] = *s;
                self.sources_log_target(state, &sources, &state.weights)
            }, &mut rng);
            state.sources[k] = src;
            state.source_steps[k].record(accepted, retained);

            let others: f64 = state.weights.iter().enumerate().filter(|(j, _)| *j != k).map(|(_, w)| w).sum();
            let upper = 1.0 - others;
            let w = state.weights[k];
            let step = state.weight_steps[k].value;
            let fwd = TruncatedNormal::new(w, step, 0.0, upper);
            let ws = fwd.sample(&mut rng);
            let prop = Proposal {
                value: ws,
                log_q_ratio: fwd.mass().ln() - TruncatedNormal::new(ws, step, 0.0, upper).mass().ln(),
            };
            let target = |w: &f64| {
                let mut weights = state.weights.clone();
                weights[k] = *w;
                dirichlet_log_prior(&weights, &self.hyper.alpha) + self.sources_log_target(state, &state.sources, &weights)
            };
            let current = target(&w);
            let (w, _, accepted) = mh_step(w, current, prop, target, &mut rng);
            state.weights[k] = w;
            state.weight_steps[k].record(accepted, retained);
        }

        let priors = self.config.sigma_priors;
        let steps = [state.sigma_steps[0].value, state.sigma_steps[1].value, state.sigma_steps[2].value];
        for (i, bounds) in [priors.xy, priors.z, priors.energy].into_iter().enumerate() {
            let get = |s: &NoiseScales| [s.sigma_xy, s.sigma_z, s.sigma_e][i];
            let with = |v: f64| {
                let mut s = state.sigma;
                match i {
                    0 => s.sigma_xy = v,
                    1 => s.sigma_z = v,
                    _ => s.sigma_e = v,
                }
                s
            };
            let target = |v: &f64| {
                if !(bounds[0] <= *v && *v <= bounds[1]) {
                    return f64::NEG_INFINITY;
                }
                if i == 2 {
                    self.energy_noise_total(state, *v)
                } else {
                    self.position_noise_total(state, &with(*v))
                }
            };
            let v = get(&state.sigma);
            let current = target(&v);
            let z: f64 = rng.sample(rand_distr::StandardNormal);
            let (v, _, accepted) = mh_step(v, current, Proposal::symmetric(v + steps[i] * z), target, &mut rng);
            state.sigma = with(v);
            state.sigma_steps[i].record(accepted, retained);
        }
    }

    /// Initial state: sources at the back-projection modes, each event's
    /// virtual source drawn around its most likely source, latents drawn
    /// around the observations.
    pub fn init_chain(&self, k: usize) -> Result<ChainState> {
        if k == 0 || k != self.hyper.sources() {
            return Err(Error::Config(format!(
                "source count {k} does not match the {} source concentrations",
                self.hyper.sources()
            )));
        }
        let cfg = &self.config;
        let grid = SphereGrid::new(cfg.bp_pixels)?;
        let owned: Vec<NoisyEvent> = self.observed.iter().map(|e| **e).collect();
        let image = back_project(&owned, self.e0(), &self.sphere, &grid, cfg.bp_width);
        let sources = bp_modes(&grid, &image, k, cfg.mode_separation)?;
        let weights = vec![if k == 1 { 0.99 } else { 0.49 }; k];
        if weights.iter().sum::<f64>() >= 1.0 {
            return Err(Error::Config(format!("initial weights leave no outlier mass for K = {k}")));
        }
        let events = self
            .observed
            .par_iter()
            .zip(self.kinds.par_iter())
            .map(|(obs, kind)| self.init_event(obs, *kind, &sources))
            .collect::<Result<Vec<_>>>()?;
        let p = &cfg.proposals;
        let state = ChainState {
            events,
            sources,
            weights,
            sigma: cfg.initial_sigma,
            source_steps: vec![Adaptive::concentration(p.concentration, p.concentration_range); k],
            weight_steps: vec![Adaptive::step(p.weight_step, p.step_range); k],
            sigma_steps: [
                Adaptive::step(p.sigma_step[0], p.step_range),
                Adaptive::step(p.sigma_step[1], p.step_range),
                Adaptive::step(p.sigma_step[2], p.step_range),
            ],
        };
        state.check(&self.model.array, self.e0())?;
        Ok(state)
    }

    fn init_event(&self, obs: &NoisyEvent, kind: SecondKind, sources: &[Vec3]) -> Result<EventState> {
        let cfg = &self.config;
        let array = &self.model.array;
        let e0 = self.e0();
        let observed = Event {
            first: obs.first,
            second: obs.second,
            second_kind: kind,
        };
        let mut best = (f64::NEG_INFINITY, 0);
        for (k, s) in sources.iter().enumerate() {
            let l = self.model.event_log_likelihood(&self.sphere.point(s), &observed);
            if l > best.0 {
                best = (l, k);
            }
        }
        let mut rng = stream(cfg.seed, "gibbs-init", &[obs.id]);
        let sigma = cfg.initial_sigma;
        let draw_position = |obs_p: Vec3, rng: &mut _| -> Result<Vec3> {
            let s = array
                .containing_sensor(&obs_p)
                .ok_or(Error::OutsideSensors(obs_p.x, obs_p.y, obs_p.z))?;
            let (lo, hi) = (array.sensors()[s].lo(), array.sensors()[s].hi());
            let sd = [sigma.sigma_xy, sigma.sigma_xy, sigma.sigma_z];
            let mut out = obs_p;
            for a in 0..3 {
                out[a] = TruncatedNormal::new(obs_p[a], sd[a], lo[a], hi[a]).sample(rng);
            }
            Ok(out)
        };
        let p = &cfg.proposals;
        let steps = EventSteps {
            r1: Adaptive::step(1.0, p.step_range),
            r2: Adaptive::step(1.0, p.step_range),
            energy: Adaptive::step(p.energy_step, p.step_range),
            r0n: Adaptive::concentration(p.concentration, p.concentration_range),
        };
        let around = VonMisesFisher::new(sources[best.1], self.hyper.init_concentration);
        // a few redraws in case the first latents are impossible
        let mut state = None;
        for _ in 0..100 {
            let e1 = TruncatedNormal::new(obs.first.deposit, sigma.sigma_e, 0.0, max_deposit(e0)).sample(&mut rng);
            let e2 = match kind {
                SecondKind::Absorb => e0 - e1,
                SecondKind::Scatter => {
                    TruncatedNormal::new(obs.second.deposit, sigma.sigma_e, 0.0, max_deposit(e0 - e1)).sample(&mut rng)
                }
            };
            let e = EventState {
                id: obs.id,
                kind,
                r1: draw_position(obs.first.pos(), &mut rng)?,
                r2: draw_position(obs.second.pos(), &mut rng)?,
                e1,
                e2,
                r0n: around.sample(&mut rng),
                steps,
            };
            let finite = self.likelihood(&e).is_finite();
            state = Some(e);
            if finite {
                break;
            }
        }
        let state = state.expect("at least one draw");
        if !self.likelihood(&state).is_finite() {
            warn!("event {}: initial latents have zero likelihood", obs.id);
        }
        Ok(state)
    }

    /// Runs the chain, keeping sweeps after burn-in.
    pub fn run(&self, k: usize) -> Result<GibbsRun> {
        let cfg = &self.config;
        let mut state = self.init_chain(k)?;
        let keep = cfg.iterations - cfg.burn_in;
        let mut run = GibbsRun {
            seed: cfg.seed,
            sweeps: Vec::with_capacity(keep),
            chains: vec![Vec::with_capacity(keep); k],
            weights: Vec::with_capacity(keep),
            sigmas: Vec::with_capacity(keep),
            acceptance: Acceptance::default(),
            final_state: state.clone(),
        };
        for t in 1..=cfg.iterations {
            self.sweep(&mut state, t);
            state.adapt_proposals(t, cfg.burn_in, self.hyper.target_band, &cfg.proposals);
            if cfg.check_every > 0 && t % cfg.check_every == 0 {
                state.check(&self.model.array, self.e0())?;
            }
            if t > cfg.burn_in {
                run.sweeps.push(t);
                for (chain, s) in run.chains.iter_mut().zip(&state.sources) {
                    chain.push(*s);
                }
                run.weights.push(state.weights.clone());
                run.sigmas.push(state.sigma);
            }
        }
        run.acceptance = Acceptance::from_state(&state);
        run.final_state = state;
        Ok(run)
    }
}

/// Post-burn-in acceptance rates, pooled over events for the per-event blocks.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Acceptance {
    pub r1: f64,
    pub r2: f64,
    pub energy: f64,
    pub r0n: f64,
    pub r0k: Vec<f64>,
    pub w0k: Vec<f64>,
    pub sigma_xy: f64,
    pub sigma_z: f64,
    #[serde(rename = "sigma_E")]
    pub sigma_e: f64,
}

impl Acceptance {
    pub fn from_state(state: &ChainState) -> Self {
        let pooled = |f: fn(&EventSteps) -> &Adaptive| {
            let (a, t) = state
                .events
                .iter()
                .fold((0u64, 0u64), |(a, t), e| (a + f(&e.steps).accepted, t + f(&e.steps).total));
            if t == 0 {
                f64::NAN
            } else {
                a as f64 / t as f64
            }
        };
        Self {
            r1: pooled(|s| &s.r1),
            r2: pooled(|s| &s.r2),
            energy: pooled(|s| &s.energy),
            r0n: pooled(|s| &s.r0n),
            r0k: state.source_steps.iter().map(Adaptive::rate).collect(),
            w0k: state.weight_steps.iter().map(Adaptive::rate).collect(),
            sigma_xy: state.sigma_steps[0].rate(),
            sigma_z: state.sigma_steps[1].rate(),
            sigma_e: state.sigma_steps[2].rate(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GibbsRun {
    pub seed: u64,
    /// Sweep number of each retained sample.
    pub sweeps: Vec<usize>,
    /// Retained source directions, one chain per source.
    pub chains: Vec<Vec<Vec3>>,
    pub weights: Vec<Vec<f64>>,
    pub sigmas: Vec<NoiseScales>,
    pub acceptance: Acceptance,
    pub final_state: ChainState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub acceptance: Acceptance,
    pub sigma_traces: String,
    pub seed: u64,
}

impl GibbsRun {
    pub fn retained(&self) -> usize {
        self.sweeps.len()
    }

    pub fn diagnostics(&self, sigma_traces: &str) -> Diagnostics {
        Diagnostics {
            acceptance: self.acceptance.clone(),
            sigma_traces: sigma_traces.to_string(),
            seed: self.seed,
        }
    }

    pub fn write_sigma_traces<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["sweep".to_string(), "sigma_xy".into(), "sigma_z".into(), "sigma_E".into()];
        header.extend((1..=self.chains.len()).map(|k| format!("w{k}")));
        out.write_record(&header)?;
        for ((t, s), w) in self.sweeps.iter().zip(&self.sigmas).zip(&self.weights) {
            let mut row = vec![t.to_string(), s.sigma_xy.to_string(), s.sigma_z.to_string(), s.sigma_e.to_string()];
            row.extend(w.iter().map(|v| v.to_string()));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Chain CSV `sweep,ux,uy,uz`.
pub fn write_chain<W: Write>(w: W, sweeps: &[usize], chain: &[Vec3]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["sweep", "ux", "uy", "uz"])?;
    for (t, u) in sweeps.iter().zip(chain) {
        out.write_record(&[t.to_string(), u.x.to_string(), u.y.to_string(), u.z.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_chain_file(path: &Path, sweeps: &[usize], chain: &[Vec3]) -> Result<()> {
    write_chain(std::fs::File::create(path)?, sweeps, chain)
}

pub fn read_chain_file(path: &Path) -> Result<(Vec<usize>, Vec<Vec3>)> {
    let mut rd = csv::Reader::from_path(path)?;
    let (mut sweeps, mut chain) = (Vec::new(), Vec::new());
    for row in rd.deserialize() {
        let (t, x, y, z): (usize, f64, f64, f64) = row?;
        sweeps.push(t);
        chain.push(Vec3::new(x, y, z));
    }
    Ok((sweeps, chain))
}

/// Convenience wrapper: build a sampler and run it for `k` sources.
pub fn run_gibbs(
    events: &[NoisyEvent],
    kinds: &[SecondKind],
    k: usize,
    model: &ForwardModel,
    sphere: SphereModel,
    hyper: &Hyperparams,
    config: &GibbsConfig,
) -> Result<GibbsRun> {
    Sampler::new(model, sphere, hyper.clone(), config.clone(), events, kinds)?.run(k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{DirectionPrior, Truth};
    use crate::physics::AttenuationTable;
    use crate::simulate::transport_photon;
    use crate::sphere::{angle_between, fibonacci_sphere, from_lon_lat_deg};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use std::sync::Arc;

    const CS137: f64 = 0.6617;

    /// Uniform over the hemisphere facing the array; cheap stand-in for the LUT.
    struct FacingPrior;

    impl DirectionPrior for FacingPrior {
        fn energy(&self) -> f64 {
            CS137
        }

        fn density(&self, source: &Vec3, theta1: &Vec3) -> f64 {
            if theta1.dot(&(-source)) > 0.0 {
                1.0 / (2.0 * std::f64::consts::PI)
            } else {
                0.0
            }
        }
    }

    fn model() -> ForwardModel {
        ForwardModel::new(DetectorArray::paper_4x7(), AttenuationTable::lyso(), Arc::new(FacingPrior)).unwrap()
    }

    fn events(source: &Vec3, n: usize, seed: u64) -> (Vec<NoisyEvent>, Vec<SecondKind>) {
        let array = DetectorArray::paper_4x7();
        let table = AttenuationTable::lyso();
        let src = SphereModel::default().point(source);
        let mut rng = stream(seed, "localize-test", &[]);
        let mut out = Vec::new();
        let mut kinds = Vec::new();
        while out.len() < n {
            if let Some(e) = transport_photon(&array, &table, &src, CS137, &mut rng).unwrap() {
                let truth = Truth {
                    source: crate::forward::SourceLabel::Index(0),
                    kind: e.second_kind,
                    r1: e.first.position,
                    e1: e.first.deposit,
                    r2: e.second.position,
                    e2: e.second.deposit,
                };
                kinds.push(e.second_kind);
                out.push(NoisyEvent {
                    id: 100 + out.len() as u64,
                    first: e.first,
                    second: e.second,
                    truth: Some(truth),
                });
            }
        }
        (out, kinds)
    }

    fn short_config(iterations: usize, burn_in: usize, seed: u64) -> GibbsConfig {
        GibbsConfig {
            iterations,
            burn_in,
            seed,
            bp_pixels: 2000,
            ..GibbsConfig::default()
        }
    }

    #[test]
    fn mh_trivial_cases() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let (v, _, acc) = mh_step(0, -1.0, Proposal::symmetric(1), |_| -1.0, &mut rng);
            assert!(acc && v == 1);
            let (v, _, acc) = mh_step(0, -1.0, Proposal::symmetric(1), |_| f64::NEG_INFINITY, &mut rng);
            assert!(!acc && v == 0);
            let (_, _, acc) = mh_step(0, -1.0, Proposal::symmetric(1), |_| f64::NAN, &mut rng);
            assert!(!acc);
        }
        // an impossible current state gives way to any possible candidate
        let (v, _, _) = mh_step(0, f64::NEG_INFINITY, Proposal::symmetric(1), |_| -50.0, &mut rng);
        assert_eq!(v, 1);
    }

    #[test]
    fn two_state_chain_matches_stationary_law() {
        let pi: [f64; 2] = [0.3, 0.7];
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut x = 0usize;
        let mut lx = pi[0].ln();
        let steps = 100_000;
        let mut visits = 0usize;
        for _ in 0..steps {
            let (nx, nl, _) = mh_step(x, lx, Proposal::symmetric(1 - x), |s| pi[*s].ln(), &mut rng);
            x = nx;
            lx = nl;
            visits += x;
        }
        let p = visits as f64 / steps as f64;
        let sd = (pi[1] * pi[0] / steps as f64).sqrt();
        assert!((p - pi[1]).abs() < 3.0 * sd, "{p} vs {}", pi[1]);
    }

    #[test]
    fn virtual_source_prior_values_and_normalization() {
        let s = from_lon_lat_deg(20.0, 10.0);
        let k: f64 = 80.0;
        let at_mode = prior_virtual_source(&s, &[s], &[1.0 - 1e-12], k);
        let expected = k / k.sinh() * k.exp() / (4.0 * std::f64::consts::PI);
        assert_relative_eq!(at_mode, expected, max_relative = 1e-9);
        let u = from_lon_lat_deg(-100.0, 40.0);
        assert_relative_eq!(prior_virtual_source(&u, &[s], &[0.0], k), UNIFORM_DENSITY, max_relative = 1e-12);

        // quadrature in (cos, azimuth) about the source axis
        let (n, m) = (4000, 64);
        let (hc, hp) = (2.0 / n as f64, 2.0 * std::f64::consts::PI / m as f64);
        let sources = [s, from_lon_lat_deg(120.0, 0.0)];
        let mut total = 0.0;
        for i in 0..n {
            let c = -1.0 + (i as f64 + 0.5) * hc;
            for j in 0..m {
                let d = crate::sphere::direction_about(&s, c, (j as f64 + 0.5) * hp);
                total += prior_virtual_source(&d, &sources, &[0.6, 0.3], k);
            }
        }
        assert_relative_eq!(total * hc * hp, 1.0, epsilon = 1e-3);
    }

    #[test]
    fn dirichlet_prior_cases() {
        let a1 = [1.0, 1.0, 1.0];
        assert_relative_eq!(dirichlet_log_prior(&[0.2, 0.3], &a1), dirichlet_log_prior(&[0.5, 0.1], &a1), epsilon = 1e-12);
        assert_relative_eq!(dirichlet_log_prior(&[0.2, 0.3], &a1), 2f64.ln(), epsilon = 1e-12);
        let alpha = [1.0, 50.0];
        let at = dirichlet_log_prior(&[0.99], &alpha);
        assert!(at.is_finite());
        // the mode of Beta(50, 1) is 1, so 0.99 sits near the top of the density
        assert!(at > dirichlet_log_prior(&[0.9], &alpha));
        assert_eq!(dirichlet_log_prior(&[0.0], &alpha), f64::NEG_INFINITY);
        assert_eq!(dirichlet_log_prior(&[1.0], &alpha), f64::NEG_INFINITY);
        // Simpson on [0, 1] for K = 1
        for alpha in [[1.0, 50.0], [2.0, 3.5], [3.0, 1.5]] {
            let n = 2_000_000;
            let h = 1.0 / n as f64;
            let f = |w: f64| {
                let v = dirichlet_log_prior(&[w], &alpha).exp();
                if v.is_finite() {
                    v
                } else {
                    0.0
                }
            };
            let mut s = 0.0;
            for i in 0..n {
                let a = i as f64 * h;
                s += (f(a) + 4.0 * f(a + 0.5 * h) + f(a + h)) * h / 6.0;
            }
            assert_relative_eq!(s, 1.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn adaptation_rules() {
        let p = ProposalConfig::default();
        let band = [0.4, 0.6];
        let mut a = Adaptive::step(1.0, [0.5, 2.0]);
        for i in 0..50 {
            a.record(i % 2 == 0, false);
        }
        a.adapt(band, &p);
        assert_eq!(a.value, 1.0);
        for _ in 0..20 {
            for _ in 0..50 {
                a.record(true, false);
            }
            a.adapt(band, &p);
        }
        assert_eq!(a.value, 2.0);
        let mut c = Adaptive::concentration(500.0, [1.0, 1e8]);
        for _ in 0..50 {
            c.record(true, false);
        }
        c.adapt(band, &p);
        assert_relative_eq!(c.value, 450.0, epsilon = 1e-9);
        for _ in 0..49 {
            c.record(false, false);
        }
        c.adapt(band, &p);
        assert_relative_eq!(c.value, 450.0, epsilon = 1e-9);
        // nothing moves once burn-in is over
        let (ev, kinds) = events(&from_lon_lat_deg(0.0, 0.0), 3, 1);
        let m = model();
        let sampler = Sampler::new(&m, SphereModel::default(), Hyperparams::for_sources(1), short_config(20, 10, 1), &ev, &kinds).unwrap();
        let mut state = sampler.init_chain(1).unwrap();
        for e in &mut state.events {
            for _ in 0..60 {
                e.steps.r1.record(true, false);
            }
        }
        let before = state.clone();
        state.adapt_proposals(11, 10, band, &p);
        assert_eq!(state, before);
        state.adapt_proposals(10, 10, band, &p);
        assert!(state.events.iter().all(|e| e.steps.r1.value > 1.0));
    }

    #[test]
    fn energy_proposal_respects_kinematics() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let (mut e1, mut e2) = (0.3, CS137 - 0.3);
        for _ in 0..10_000 {
            let p = propose_energies(CS137, SecondKind::Absorb, (e1, e2), 0.05, &mut rng);
            (e1, e2) = p.value;
            assert_eq!(e2, CS137 - e1);
            assert!((0.0..=max_deposit(CS137)).contains(&e1));
            let p = propose_energies(CS137, SecondKind::Scatter, (e1, 0.05), 0.05, &mut rng);
            assert!(p.value.1 <= max_deposit(CS137 - p.value.0));
            assert!(p.log_q_ratio.is_finite());
        }
    }

    #[test]
    fn absorb_events_keep_the_full_energy() {
        let (ev, kinds) = events(&from_lon_lat_deg(0.0, 0.0), 6, 3);
        let m = model();
        let sampler = Sampler::new(&m, SphereModel::default(), Hyperparams::for_sources(1), short_config(40, 20, 3), &ev, &kinds).unwrap();
        let mut state = sampler.init_chain(1).unwrap();
        for t in 1..=40 {
            sampler.sweep(&mut state, t);
            for e in state.events.iter().filter(|e| e.kind == SecondKind::Absorb) {
                assert_eq!(e.e2, CS137 - e.e1);
            }
            state.check(&m.array, CS137).unwrap();
        }
    }

    #[test]
    fn runs_are_deterministic_and_permutation_invariant() {
        let (mut ev, mut kinds) = events(&from_lon_lat_deg(0.0, 0.0), 5, 4);
        let m = model();
        let cfg = short_config(30, 10, 11);
        let hyper = Hyperparams::for_sources(1);
        let a = run_gibbs(&ev, &kinds, 1, &m, SphereModel::default(), &hyper, &cfg).unwrap();
        let b = run_gibbs(&ev, &kinds, 1, &m, SphereModel::default(), &hyper, &cfg).unwrap();
        assert_eq!(a.chains, b.chains);
        assert_eq!(a.final_state, b.final_state);
        ev.reverse();
        kinds.reverse();
        let c = run_gibbs(&ev, &kinds, 1, &m, SphereModel::default(), &hyper, &cfg).unwrap();
        assert_eq!(a.chains, c.chains);
        let d = run_gibbs(&ev, &kinds, 1, &m, SphereModel::default(), &hyper, &short_config(30, 10, 12)).unwrap();
        assert_ne!(a.chains, d.chains);
    }

    #[test]
    fn retained_sample_count() {
        let (ev, kinds) = events(&from_lon_lat_deg(0.0, 0.0), 2, 5);
        let m = model();
        let run = run_gibbs(&ev, &kinds, 1, &m, SphereModel::default(), &Hyperparams::for_sources(1), &short_config(8, 7, 5)).unwrap();
        assert_eq!(run.retained(), 1);
        assert_eq!(run.sweeps, vec![8]);
        assert_eq!(run.chains[0].len(), 1);
        assert!(GibbsConfig { burn_in: 10, iterations: 10, ..GibbsConfig::default() }.validate().is_err());
        let d = GibbsConfig::default();
        assert_eq!(d.iterations - d.burn_in, 8000);
    }

    #[test]
    fn initial_state_follows_the_back_projection() {
        let truth = from_lon_lat_deg(0.0, 0.0);
        let (ev, kinds) = events(&truth, 1, 6);
        let m = model();
        let sampler = Sampler::new(&m, SphereModel::default(), Hyperparams::for_sources(1), short_config(2, 1, 6), &ev, &kinds).unwrap();
        let state = sampler.init_chain(1).unwrap();
        assert_eq!(state.weights, vec![0.99]);
        // the single source sits on the event's cone
        let e = &ev[0];
        let (r1, r2) = (e.first.pos(), e.second.pos());
        let omega = crate::physics::compton_cosine(CS137, e.first.deposit).acos();
        let p = SphereModel::default().point(&state.sources[0]);
        let grid = SphereGrid::new(2000).unwrap();
        assert!((angle_between(&(p - r1), &(r1 - r2)) - omega).abs() < 2.0 * grid.spacing());

        let (ev2, kinds2) = events(&truth, 8, 7);
        let sampler = Sampler::new(&m, SphereModel::default(), Hyperparams::for_sources(2), short_config(2, 1, 7), &ev2, &kinds2).unwrap();
        let state = sampler.init_chain(2).unwrap();
        assert_eq!(state.weights, vec![0.49, 0.49]);
        assert!(sampler.init_chain(1).is_err());
    }

    #[test]
    fn mismatched_inputs_are_rejected() {
        let (ev, kinds) = events(&from_lon_lat_deg(0.0, 0.0), 2, 8);
        let m = model();
        let h = Hyperparams::for_sources(1);
        let cfg = short_config(4, 2, 1);
        assert!(Sampler::new(&m, SphereModel::default(), h.clone(), cfg.clone(), &ev, &kinds[..1]).is_err());
        assert!(Sampler::new(&m, SphereModel::default(), h.clone(), cfg.clone(), &[], &[]).is_err());
        let bad = Hyperparams { target_band: [0.6, 0.4], ..h };
        assert!(Sampler::new(&m, SphereModel::default(), bad, cfg, &ev, &kinds).is_err());
    }

    /// Frozen latents, two candidate directions: the virtual-source update,
    /// restricted to a swap between the candidates, must visit them in the
    /// ratio of the joint posterior evaluated directly.
    #[test]
    fn virtual_source_occupancy_matches_enumeration() {
        let truth = from_lon_lat_deg(0.0, 0.0);
        let (ev, kinds) = events(&truth, 1, 21);
        let m = model();
        let hyper = Hyperparams::for_sources(1);
        let sampler = Sampler::new(&m, SphereModel::default(), hyper.clone(), short_config(2, 1, 2), &ev, &kinds).unwrap();
        let state = sampler.init_chain(1).unwrap();
        let e = state.events[0];
        let sources = [truth];
        let weights = [0.99];
        // candidates: a point on the event's cone, and a nearby one that
        // sits slightly off it
        let t = e.event();
        let on = fibonacci_sphere(20_000)
            .into_iter()
            .max_by(|a, b| {
                let la = m.event_log_likelihood(&SphereModel::default().point(a), &t);
                let lb = m.event_log_likelihood(&SphereModel::default().point(b), &t);
                la.total_cmp(&lb)
            })
            .unwrap();
        let candidates = [on, crate::sphere::direction_about(&on, (0.04f64).cos(), 1.0)];
        let direct: Vec<f64> = candidates
            .iter()
            .map(|c| {
                let lik = m.event_log_likelihood(&SphereModel::default().point(c), &t);
                let vmf = weights[0] * hyper.kappa / (4.0 * std::f64::consts::PI * hyper.kappa.sinh())
                    * (hyper.kappa * c.dot(&sources[0])).exp();
                lik + (vmf + (1.0 - weights[0]) * UNIFORM_DENSITY).ln()
            })
            .collect();
        let p1 = 1.0 / (1.0 + (direct[0] - direct[1]).exp());
        assert!(p1 > 0.05 && p1 < 0.95, "toy is too lopsided: {p1}");

        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        let mut x = 0usize;
        let mut lx = sampler.r0n_log_target(&e, &candidates[0], &sources, &weights);
        let steps = 200_000;
        let mut visits = 0usize;
        for _ in 0..steps {
            let (nx, nl, _) = mh_step(x, lx, Proposal::symmetric(1 - x), |i| {
                sampler.r0n_log_target(&e, &candidates[*i], &sources, &weights)
            }, &mut rng);
            x = nx;
            lx = nl;
            visits += x;
        }
        let observed = visits as f64 / steps as f64;
        assert_relative_eq!(observed, p1, max_relative = 0.05);
    }

    #[test]
    fn chain_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("chain.csv");
        let chain = vec![from_lon_lat_deg(1.0, 2.0), from_lon_lat_deg(3.0, -4.0)];
        write_chain_file(&path, &[5, 6], &chain).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("sweep,ux,uy,uz\n5,"));
        let (sweeps, back) = read_chain_file(&path).unwrap();
        assert_eq!(sweeps, vec![5, 6]);
        assert_eq!(back, chain);
    }
}
