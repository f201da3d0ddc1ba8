//! Configuration, manifests and the command implementations behind the
//! `compton` binary.
//!
//! Every command reads a [`PipelineConfig`], writes its outputs into the
//! configured output directory and records a [`Manifest`] next to them. The
//! manifest holds the full configuration, its hash, the command seed and the
//! SHA-256 of every input and output, so [`replay`] can re-run the command
//! and check that the outputs come out byte-identical.
//!
//! All randomness flows from the master `seed`; each command draws from a
//! child seed derived by labelled hashing, so e.g. simulation and
//! localization never share a stream.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{
    back_project, bp_modes, deentangle_labels, default_alphas, evaluate, match_to_truths, mean_direction,
    CredibleBalls, RunSummary, SourceEstimate, SphereGrid,
};
use crate::energy_em::{run_em, EmConfig, EmReport};
use crate::error::{Error, Result};
use crate::forward::{DirectionPriorLut, ForwardModel, LutParams, NoiseScales, NoisyEvent, SecondKind};
use crate::geometry::{DetectorArray, SphereModel, PAPER_PRESET};
use crate::localize::{run_gibbs, write_chain_file, GibbsConfig, GibbsRun, Hyperparams};
use crate::physics::AttenuationTable;
use crate::rng::derive_seed;
use crate::simulate::{generate_events, read_events, write_events_file, SimConfig, SourceSpec};
use crate::sphere::Vec3;

pub const EVENTS_FILE: &str = "events.jsonl";
pub const EM_FILE: &str = "em.json";
pub const BP_FILE: &str = "backprojection.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.json";
pub const SIGMA_TRACES_FILE: &str = "sigma_traces.csv";
pub const EVALUATION_FILE: &str = "evaluation.json";

/// Chain file of source `k` (1-based).
pub fn chain_file(k: usize) -> String {
    format!("chain_{k}.csv")
}

/// Pipeline configuration. Every key is optional except `seed`.
///
/// ```json
/// {
///   "seed": 7,
///   "detector": "paper-4x7",
///   "sources": [{"direction": [1, 0, 0], "E0": 0.6617, "intensity": 1.0}],
///   "n_events": 10,
///   "gibbs": {"iterations": 10000, "burn_in": 2000},
///   "output_dir": "run-7"
/// }
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Detector preset, used unless `detector_file` is set.
    pub detector: String,
    pub detector_file: Option<PathBuf>,
    /// Attenuation CSV; the built-in LYSO table when unset.
    pub attenuation_file: Option<PathBuf>,
    pub sources: Vec<SourceSpec>,
    pub outlier_fraction: f64,
    /// `null` simulates noiseless events.
    pub noise: Option<NoiseScales>,
    pub n_events: usize,
    pub sphere: SphereModel,
    /// Source energy assumed by localization and back-projection; defaults
    /// to the first source's energy.
    #[serde(rename = "E0")]
    pub e0: Option<f64>,
    pub em: EmConfig,
    /// Sampler settings; its `seed` is replaced by the derived command seed.
    pub gibbs: GibbsConfig,
    /// Sampler hyperparameters; the defaults for K sources when unset.
    pub hyper: Option<Hyperparams>,
    pub lut: LutParams,
    /// LUT cache directory; `COMPTON_LUT_DIR`, then `./lut-cache` when unset.
    pub lut_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub output_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            detector: PAPER_PRESET.to_string(),
            detector_file: None,
            attenuation_file: None,
            sources: vec![SourceSpec::from_lon_lat(0.0, 0.0, 0.6617, 1.0)],
            outlier_fraction: 0.0,
            noise: Some(NoiseScales::default()),
            n_events: 10,
            sphere: SphereModel::default(),
            e0: None,
            em: EmConfig::default(),
            gibbs: GibbsConfig::default(),
            hyper: None,
            lut: LutParams::default(),
            lut_dir: None,
            seed: None,
            output_dir: PathBuf::from("out"),
        }
    }
}

fn parse_json<T: for<'de> Deserialize<'de>>(text: &str, path: &Path) -> Result<T> {
    serde_json::from_str(text).map_err(|e| {
        Error::Config(format!(
            "{}:{}:{}: {}",
            path.display(),
            e.line(),
            e.column(),
            e
        ))
    })
}

impl PipelineConfig {
    /// Read a JSON config; syntax and schema errors name the line.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        parse_json(&text, path)
    }

    pub fn validate(&self) -> Result<()> {
        self.master_seed()?;
        for path in [&self.detector_file, &self.attenuation_file].into_iter().flatten() {
            if !path.is_file() {
                return Err(Error::Config(format!("referenced file {} does not exist", path.display())));
            }
        }
        self.sim_config(0).validate()?;
        self.em.validate()?;
        self.gibbs.validate()?;
        if let Some(h) = &self.hyper {
            h.validate()?;
        }
        let e0 = self.energy();
        if !(e0 > 0.0 && e0.is_finite()) {
            return Err(Error::Config(format!("E0 must be positive, got {e0}")));
        }
        Ok(())
    }

    pub fn master_seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| Error::Config("a master seed is required (config `seed` or --seed)".into()))
    }

    /// Child seed of one command.
    pub fn command_seed(&self, label: &str) -> Result<u64> {
        Ok(derive_seed(self.master_seed()?, label))
    }

    /// SHA-256 of the canonical JSON, ignoring where outputs and caches live.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        c.lut_dir = None;
        sha256_hex(&serde_json::to_vec(&c).expect("config serializes"))
    }

    pub fn array(&self) -> Result<DetectorArray> {
        match &self.detector_file {
            Some(p) => DetectorArray::from_path(p),
            None => DetectorArray::preset(&self.detector),
        }
    }

    pub fn table(&self) -> Result<AttenuationTable> {
        match &self.attenuation_file {
            Some(p) => AttenuationTable::from_path(p),
            None => Ok(AttenuationTable::lyso()),
        }
    }

    pub fn sim_config(&self, seed: u64) -> SimConfig {
        SimConfig {
            sources: self.sources.clone(),
            outlier_fraction: self.outlier_fraction,
            noise: self.noise,
            seed,
            n_events: self.n_events,
            sphere: self.sphere,
        }
    }

    pub fn energy(&self) -> f64 {
        self.e0
            .or_else(|| self.sources.first().map(|s| s.energy))
            .unwrap_or(0.6617)
    }

    pub fn hyper_for(&self, k: usize) -> Result<Hyperparams> {
        let h = self.hyper.clone().unwrap_or_else(|| Hyperparams::for_sources(k));
        if h.sources() != k {
            return Err(Error::Config(format!(
                "hyperparameters describe {} sources but K = {k}",
                h.sources()
            )));
        }
        Ok(h)
    }

    pub fn lut_dir(&self) -> PathBuf {
        self.lut_dir
            .clone()
            .or_else(DirectionPriorLut::env_dir)
            .unwrap_or_else(|| PathBuf::from("lut-cache"))
    }

    /// Load the direction LUT for the configured energy, building it on a miss.
    pub fn load_lut(&self, array: &DetectorArray, table: &AttenuationTable) -> Result<DirectionPriorLut> {
        let dir = self.lut_dir();
        fs::create_dir_all(&dir)?;
        DirectionPriorLut::load_or_build(array, table, self.energy(), &self.sphere, self.lut, Some(&dir))
    }
}

/// Where localization takes the second-interaction kinds from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KindSource {
    /// Classifications of an `em` output file.
    Em(PathBuf),
    /// Kinds recorded in the simulated truth.
    Truth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum Command {
    Simulate,
    Em { events: PathBuf },
    Localize { events: PathBuf, kinds: KindSource, k: usize },
    Backproject { events: PathBuf },
    Evaluate { summaries: Vec<PathBuf>, truths: Option<PathBuf> },
    LutBuild,
}

impl Command {
    pub fn label(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Em { .. } => "em",
            Command::Localize { .. } => "localize",
            Command::Backproject { .. } => "backproject",
            Command::Evaluate { .. } => "evaluate",
            Command::LutBuild => "lut-build",
        }
    }

    fn inputs(&self) -> Vec<PathBuf> {
        match self {
            Command::Simulate | Command::LutBuild => Vec::new(),
            Command::Em { events } | Command::Backproject { events } => vec![events.clone()],
            Command::Localize { events, kinds, .. } => {
                let mut v = vec![events.clone()];
                if let KindSource::Em(p) = kinds {
                    v.push(p.clone());
                }
                v
            }
            Command::Evaluate { summaries, truths } => summaries.iter().chain(truths).cloned().collect(),
        }
    }

    pub fn manifest_name(&self) -> String {
        format!("{}.manifest.json", self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    /// Outputs are relative to the output directory; absolute paths stay absolute.
    pub path: PathBuf,
    pub sha256: String,
}

impl FileDigest {
    fn of(path: &Path, base: &Path) -> Result<Self> {
        Ok(Self {
            path: path.to_path_buf(),
            sha256: file_sha256(&base.join(path))?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub command: Command,
    pub config: PipelineConfig,
    pub config_hash: String,
    /// Seed the command drew its randomness from.
    pub seed: u64,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

impl Manifest {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        parse_json(&text, path)
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    Ok(sha256_hex(&bytes))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn load_events(path: &Path) -> Result<Vec<NoisyEvent>> {
    let events = read_events(path)?;
    if events.is_empty() {
        return Err(Error::Data(format!("event file {} is empty", path.display())));
    }
    Ok(events)
}

/// Simulate `n_events` events into `events.jsonl`.
pub fn cmd_simulate(config: &PipelineConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let sim = config.sim_config(config.command_seed("simulate")?);
    let events = generate_events(&config.array()?, &config.table()?, &sim)?;
    write_events_file(&out.join(EVENTS_FILE), &events)?;
    Ok(vec![EVENTS_FILE.into()])
}

pub fn cmd_em(config: &PipelineConfig, events: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    let events = load_events(events)?;
    let sums: Vec<f64> = events.iter().map(NoisyEvent::summed_energy).collect();
    let report = run_em(&sums, &config.em)?.report();
    write_json(&out.join(EM_FILE), &report)?;
    Ok(vec![EM_FILE.into()])
}

fn resolve_kinds(events: &[NoisyEvent], kinds: &KindSource) -> Result<Vec<SecondKind>> {
    match kinds {
        KindSource::Em(path) => {
            let text = fs::read_to_string(path)?;
            let report: EmReport = serde_json::from_str(&text)
                .map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), e.line())))?;
            if report.classifications.len() != events.len() {
                return Err(Error::Data(format!(
                    "{} classifications for {} events",
                    report.classifications.len(),
                    events.len()
                )));
            }
            Ok(report.classifications)
        }
        KindSource::Truth => events
            .iter()
            .map(|e| {
                e.truth
                    .map(|t| t.kind)
                    .ok_or_else(|| Error::Data(format!("event {} has no truth record to take its kind from", e.id)))
            })
            .collect(),
    }
}

/// Sweep labels and samples of each chain after optional de-entangling.
fn split_chains(run: &GibbsRun) -> (Vec<(Vec<usize>, Vec<Vec3>)>, bool) {
    let raw = || run.chains.iter().map(|c| (run.sweeps.clone(), c.clone())).collect();
    if run.chains.len() != 2 {
        return (raw(), false);
    }
    match deentangle_labels(&run.chains[0], &run.chains[1]) {
        Ok(labels) => {
            let mut out = vec![(Vec::new(), Vec::new()), (Vec::new(), Vec::new())];
            let pooled = run.chains[0].iter().zip(&run.sweeps).chain(run.chains[1].iter().zip(&run.sweeps));
            for ((u, t), l) in pooled.zip(&labels) {
                out[*l as usize].0.push(*t);
                out[*l as usize].1.push(*u);
            }
            (out, true)
        }
        Err(e) => {
            log::warn!("keeping the raw chains: {e}");
            (raw(), false)
        }
    }
}

/// Run the sampler and write chains, diagnostics, noise traces and the run summary.
pub fn cmd_localize(
    config: &PipelineConfig,
    events_path: &Path,
    kinds: &KindSource,
    k: usize,
    out: &Path,
) -> Result<Vec<PathBuf>> {
    let events = load_events(events_path)?;
    let kinds = resolve_kinds(&events, kinds)?;
    let hyper = config.hyper_for(k)?;
    let array = config.array()?;
    let table = config.table()?;
    let lut = config.load_lut(&array, &table)?;
    let model = ForwardModel::new(array, table, Arc::new(lut))?;
    let gibbs = GibbsConfig {
        seed: config.command_seed("localize")?,
        ..config.gibbs.clone()
    };
    let run = run_gibbs(&events, &kinds, k, &model, config.sphere, &hyper, &gibbs)?;

    let (chains, deentangled) = split_chains(&run);
    let mut outputs = Vec::new();
    for (i, (sweeps, chain)) in chains.iter().enumerate() {
        let name = chain_file(i + 1);
        write_chain_file(&out.join(&name), sweeps, chain)?;
        outputs.push(PathBuf::from(name));
    }
    run.write_sigma_traces(BufWriter::new(fs::File::create(out.join(SIGMA_TRACES_FILE))?))?;
    write_json(&out.join(DIAGNOSTICS_FILE), &run.diagnostics(SIGMA_TRACES_FILE))?;

    let grid = SphereGrid::new(config.gibbs.bp_pixels)?;
    let image = back_project(&events, config.energy(), &config.sphere, &grid, config.gibbs.bp_width);
    let modes = bp_modes(&grid, &image, k, config.gibbs.mode_separation)?;
    let means = chains
        .iter()
        .map(|(_, c)| mean_direction(c))
        .collect::<Result<Vec<_>>>()?;
    let bp_of = match_to_truths(&means, &modes);
    let truths: Vec<Vec3> = if events.iter().all(|e| e.truth.is_some()) && config.sources.len() == k {
        config.sources.iter().map(SourceSpec::unit).collect()
    } else {
        Vec::new()
    };
    let truth_of = match_to_truths(&means, &truths);
    let sphere = config.sphere;
    let sources = chains
        .iter()
        .zip(&means)
        .enumerate()
        .map(|(i, ((_, chain), mean))| {
            let bp = modes[bp_of[i]];
            let truth = truths.get(truth_of.get(i).copied().unwrap_or(usize::MAX)).copied();
            Ok(SourceEstimate {
                mean: (*mean).into(),
                bp: bp.into(),
                truth: truth.map(Into::into),
                gibbs_error_mm: truth.map(|t| sphere.geodesic_distance(mean, &t)),
                bp_error_mm: truth.map(|t| sphere.geodesic_distance(&bp, &t)),
                credible: CredibleBalls::from_samples(chain, &default_alphas())?,
                samples: chain.len(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let summary = RunSummary {
        seed: gibbs.seed,
        n_events: events.len(),
        radius: sphere.radius,
        sources,
        deentangled,
    };
    write_json(&out.join(SUMMARY_FILE), &summary)?;
    outputs.extend([SIGMA_TRACES_FILE, DIAGNOSTICS_FILE, SUMMARY_FILE].map(PathBuf::from));
    Ok(outputs)
}

pub fn cmd_backproject(config: &PipelineConfig, events: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    let events = load_events(events)?;
    let grid = SphereGrid::new(config.gibbs.bp_pixels)?;
    let image = back_project(&events, config.energy(), &config.sphere, &grid, config.gibbs.bp_width);
    if image.skipped > 0 {
        log::warn!("{} events admit no Compton angle at E0 = {}", image.skipped, config.energy());
    }
    image.write_csv_file(&grid, &out.join(BP_FILE))?;
    Ok(vec![BP_FILE.into()])
}

/// Replace the truths of each summary, re-matching sources and recomputing errors.
pub fn apply_truths(summaries: &mut [RunSummary], truths: &[Vec<[f64; 3]>]) -> Result<()> {
    if truths.len() != summaries.len() {
        return Err(Error::Data(format!(
            "{} truth sets for {} summaries",
            truths.len(),
            summaries.len()
        )));
    }
    for (s, t) in summaries.iter_mut().zip(truths) {
        if t.len() != s.sources.len() {
            return Err(Error::Data(format!(
                "run with seed {} has {} sources but {} truths",
                s.seed,
                s.sources.len(),
                t.len()
            )));
        }
        let t: Vec<Vec3> = t.iter().map(|v| Vec3::from(*v).normalize()).collect();
        let means: Vec<Vec3> = s.sources.iter().map(|e| Vec3::from(e.mean)).collect();
        let sphere = SphereModel { radius: s.radius };
        for (src, j) in s.sources.iter_mut().zip(match_to_truths(&means, &t)) {
            let truth = t[j];
            src.truth = Some(truth.into());
            src.gibbs_error_mm = Some(sphere.geodesic_distance(&Vec3::from(src.mean), &truth));
            src.bp_error_mm = Some(sphere.geodesic_distance(&Vec3::from(src.bp), &truth));
        }
    }
    Ok(())
}

pub fn cmd_evaluate(summaries: &[PathBuf], truths: Option<&Path>, out: &Path) -> Result<Vec<PathBuf>> {
    let mut runs = summaries
        .iter()
        .map(|p| RunSummary::from_path(p))
        .collect::<Result<Vec<_>>>()?;
    if let Some(path) = truths {
        let t: Vec<Vec<[f64; 3]>> = serde_json::from_str(&fs::read_to_string(path)?)
            .map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), e.line())))?;
        apply_truths(&mut runs, &t)?;
    }
    write_json(&out.join(EVALUATION_FILE), &evaluate(&runs)?)?;
    Ok(vec![EVALUATION_FILE.into()])
}

/// Rebuild the LUT for the configured energy and store it in the cache.
pub fn cmd_lut_build(config: &PipelineConfig) -> Result<Vec<PathBuf>> {
    let array = config.array()?;
    let dir = config.lut_dir();
    fs::create_dir_all(&dir)?;
    let lut = DirectionPriorLut::build(&array, &config.table()?, config.energy(), &config.sphere, config.lut)?;
    let path = DirectionPriorLut::cache_path(&dir, &array, config.energy(), config.sphere.radius, &config.lut);
    lut.write(&path)?;
    Ok(vec![std::path::absolute(path)?])
}

/// Run `command`, then write and return its manifest.
pub fn execute(command: &Command, config: &PipelineConfig) -> Result<Manifest> {
    config.validate()?;
    let out = &config.output_dir;
    fs::create_dir_all(out)?;
    let inputs = command
        .inputs()
        .iter()
        .map(|p| FileDigest::of(p, Path::new("")))
        .collect::<Result<Vec<_>>>()?;
    let outputs = match command {
        Command::Simulate => cmd_simulate(config, out)?,
        Command::Em { events } => cmd_em(config, events, out)?,
        Command::Localize { events, kinds, k } => cmd_localize(config, events, kinds, *k, out)?,
        Command::Backproject { events } => cmd_backproject(config, events, out)?,
        Command::Evaluate { summaries, truths } => cmd_evaluate(summaries, truths.as_deref(), out)?,
        Command::LutBuild => cmd_lut_build(config)?,
    };
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        command: command.clone(),
        config: config.clone(),
        config_hash: config.hash(),
        seed: config.command_seed(command.label())?,
        inputs,
        outputs: outputs
            .iter()
            .map(|p| FileDigest::of(p, out))
            .collect::<Result<Vec<_>>>()?,
    };
    write_json(&out.join(command.manifest_name()), &manifest)?;
    Ok(manifest)
}

/// Re-run the command recorded in a manifest, optionally into another
/// directory, and check that every output is byte-identical.
pub fn replay(manifest_path: &Path, output_dir: Option<&Path>) -> Result<Manifest> {
    let recorded = Manifest::from_path(manifest_path)?;
    if recorded.config.hash() != recorded.config_hash {
        return Err(Error::Config(format!(
            "{}: configuration does not match its recorded hash",
            manifest_path.display()
        )));
    }
    for input in &recorded.inputs {
        if file_sha256(&input.path)? != input.sha256 {
            return Err(Error::Data(format!("input {} changed since the run", input.path.display())));
        }
    }
    let mut config = recorded.config.clone();
    if let Some(dir) = output_dir {
        config.output_dir = dir.to_path_buf();
    }
    let fresh = execute(&recorded.command, &config)?;
    let differing: Vec<String> = recorded
        .outputs
        .iter()
        .zip(&fresh.outputs)
        .filter(|(a, b)| a != b)
        .map(|(a, _)| a.path.display().to_string())
        .collect();
    if !differing.is_empty() || recorded.outputs.len() != fresh.outputs.len() {
        return Err(Error::Data(format!("replay differs in {}", differing.join(", "))));
    }
    Ok(fresh)
}
