//! One Cs-137 source at (0°, 0°), ten noisy events: Gibbs posterior mean
//! against the back-projection peak.
//!
//! Uses the cached first-direction LUT (`COMPTON_LUT_DIR`, default
//! `./lut-cache`); the first run builds it. Pass a seed and an iteration
//! count to vary the run: `cargo run --release --example localize_single -- 3 10000`.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use compton_imager::analysis::{back_project, spherical_mean, SphereGrid, DEFAULT_BP_WIDTH};
use compton_imager::forward::{DirectionPriorLut, ForwardModel, LutParams};
use compton_imager::geometry::{DetectorArray, SphereModel};
use compton_imager::localize::{run_gibbs, GibbsConfig, Hyperparams};
use compton_imager::physics::AttenuationTable;
use compton_imager::simulate::{generate_events, SimConfig};
use compton_imager::sphere::{from_lon_lat_deg, to_lon_lat_deg};

fn main() -> compton_imager::Result<()> {
    env_logger::init();
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(1);
    let iterations: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(10_000);

    let array = DetectorArray::paper_4x7();
    let table = AttenuationTable::lyso();
    let sphere = SphereModel::default();
    let dir = DirectionPriorLut::env_dir().unwrap_or_else(|| PathBuf::from("lut-cache"));
    let lut = DirectionPriorLut::load_or_build(&array, &table, 0.6617, &sphere, LutParams::default(), Some(&dir))?;
    let model = ForwardModel::new(array.clone(), table.clone(), Arc::new(lut))?;

    let truth = from_lon_lat_deg(0.0, 0.0);
    let events = generate_events(&array, &table, &SimConfig::single_source(0.0, 0.0, 10, seed))?;
    let kinds: Vec<_> = events.iter().map(|e| e.truth.expect("simulated").kind).collect();

    let config = GibbsConfig {
        iterations,
        burn_in: iterations / 5,
        seed,
        ..GibbsConfig::default()
    };
    let t = Instant::now();
    let run = run_gibbs(&events, &kinds, 1, &model, sphere, &Hyperparams::for_sources(1), &config)?;
    let elapsed = t.elapsed().as_secs_f64();

    let mean = spherical_mean(&run.chains[0], &sphere)?.normalize();
    let grid = SphereGrid::default();
    let image = back_project(&events, 0.6617, &sphere, &grid, DEFAULT_BP_WIDTH);
    let bp = grid.pixel(image.argmax());
    let (lon, lat) = to_lon_lat_deg(&mean);
    println!("{} sweeps in {elapsed:.1} s, {} retained", iterations, run.retained());
    println!("Gibbs mean  ({lon:7.2}°, {lat:6.2}°)  error {:6.1} mm", sphere.geodesic_distance(&mean, &truth));
    let (lon, lat) = to_lon_lat_deg(&bp);
    println!("BP peak     ({lon:7.2}°, {lat:6.2}°)  error {:6.1} mm", sphere.geodesic_distance(&bp, &truth));
    let s = run.sigmas.last().expect("retained samples");
    println!(
        "final sigma_xy {:.3} mm, sigma_z {:.3} mm, sigma_E {:.4} MeV, w {:.3}",
        s.sigma_xy,
        s.sigma_z,
        s.sigma_e,
        run.weights.last().expect("retained samples")[0]
    );
    println!("acceptance {}", serde_json::to_string(&run.acceptance)?);
    Ok(())
}
