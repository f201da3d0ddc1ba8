//! Two Cs-137 sources at (0°, 0°) and (120°, 0°), twenty events: run the
//! sampler with K = 2, de-entangle the chains and compare with the truths.
//!
//! Needs the cached LUT (`COMPTON_LUT_DIR`, default `./lut-cache`).
//! `cargo run --release --example two_sources -- [seed]`

use std::path::PathBuf;
use std::sync::Arc;

use compton_imager::analysis::{deentangle, match_to_truths, mean_direction};
use compton_imager::forward::{DirectionPriorLut, ForwardModel, LutParams};
use compton_imager::geometry::{DetectorArray, SphereModel};
use compton_imager::localize::{run_gibbs, GibbsConfig, Hyperparams};
use compton_imager::physics::AttenuationTable;
use compton_imager::simulate::{generate_events, SimConfig, SourceSpec};
use compton_imager::sphere::{from_lon_lat_deg, to_lon_lat_deg};

fn main() -> compton_imager::Result<()> {
    env_logger::init();
    let seed: u64 = std::env::args().nth(1).map_or(8, |a| a.parse().expect("seed"));
    let array = DetectorArray::paper_4x7();
    let table = AttenuationTable::lyso();
    let sphere = SphereModel::default();
    let dir = DirectionPriorLut::env_dir().unwrap_or_else(|| PathBuf::from("lut-cache"));
    let lut = DirectionPriorLut::load_or_build(&array, &table, 0.6617, &sphere, LutParams::default(), Some(&dir))?;
    let model = ForwardModel::new(array.clone(), table.clone(), Arc::new(lut))?;

    let truths = [from_lon_lat_deg(0.0, 0.0), from_lon_lat_deg(120.0, 0.0)];
    let cfg = SimConfig {
        sources: vec![
            SourceSpec::from_lon_lat(0.0, 0.0, 0.6617, 0.5),
            SourceSpec::from_lon_lat(120.0, 0.0, 0.6617, 0.5),
        ],
        ..SimConfig::single_source(0.0, 0.0, 20, seed)
    };
    let events = generate_events(&array, &table, &cfg)?;
    let kinds: Vec<_> = events.iter().map(|e| e.truth.expect("simulated").kind).collect();
    let config = GibbsConfig { seed, ..GibbsConfig::default() };
    let run = run_gibbs(&events, &kinds, 2, &model, sphere, &Hyperparams::for_sources(2), &config)?;

    let (a, b) = match deentangle(&run.chains[0], &run.chains[1]) {
        Ok(split) => split,
        Err(e) => {
            println!("de-entangling failed ({e}); using the raw chains");
            (run.chains[0].clone(), run.chains[1].clone())
        }
    };
    let means = [mean_direction(&a)?, mean_direction(&b)?];
    let matched = match_to_truths(&means, &truths);
    for (i, (m, n)) in means.iter().zip([a.len(), b.len()]).enumerate() {
        let (lon, lat) = to_lon_lat_deg(m);
        println!(
            "cluster {}: {n} samples, mean ({lon:7.2}, {lat:6.2}), {:.1} mm from its source",
            i + 1,
            sphere.geodesic_distance(m, &truths[matched[i]])
        );
    }
    let w = run.weights.last().expect("retained samples");
    println!("final weights {:.3} {:.3}, outlier {:.3}", w[0], w[1], 1.0 - w[0] - w[1]);
    Ok(())
}
