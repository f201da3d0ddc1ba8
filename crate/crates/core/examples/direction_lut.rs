//! Build a reduced first-direction LUT and compare one query source against a
//! fresh kernel estimate.
//!
//! ```text
//! cargo run --release --example direction_lut -- [n_nodes] [n_samples]
//! ```

use std::time::Instant;

use compton_imager::forward::{DirectionPrior, DirectionPriorLut, LutParams};
use compton_imager::geometry::{DetectorArray, SphereModel};
use compton_imager::physics::AttenuationTable;
use compton_imager::sphere::{direction_about, from_lon_lat_deg};

fn main() -> compton_imager::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>().expect("integer argument"));
    let params = LutParams {
        n_nodes: args.next().unwrap_or(64),
        n_samples: args.next().unwrap_or(20_000),
        ..LutParams::default()
    };
    let array = DetectorArray::paper_4x7();
    let table = AttenuationTable::lyso();
    let sphere = SphereModel::default();

    let t = Instant::now();
    let lut = DirectionPriorLut::build(&array, &table, 0.6617, &sphere, params)?;
    let per_node = t.elapsed().as_secs_f64() / params.n_nodes as f64;
    println!("built {} nodes, {:.1} ms per node", params.n_nodes, per_node * 1e3);

    let src = sphere.point(&from_lon_lat_deg(17.0, 23.0));
    let t = Instant::now();
    let fresh = DirectionPriorLut::fresh_estimate(&array, &table, 0.6617, &src, &params, 99)?;
    let rebuild = t.elapsed().as_secs_f64();

    let axis = (array.center() - src).normalize();
    let cone = array.bounding_cone(&src)?;
    let mut probes = Vec::new();
    for i in 0..60 {
        for j in 0..60 {
            let c = 1.0 - (1.0 - cone.cos_half()) * (i as f64 + 0.5) / 60.0;
            probes.push(direction_about(&axis, c, j as f64 * std::f64::consts::TAU / 60.0));
        }
    }
    let t = Instant::now();
    let lut_vals: Vec<f64> = probes.iter().map(|v| lut.density(&src, v)).collect();
    let per_query = t.elapsed().as_secs_f64() / probes.len() as f64;
    let fresh_vals: Vec<f64> = probes.iter().map(|v| fresh(v)).collect();
    let peak = fresh_vals.iter().cloned().fold(0.0, f64::max);
    let err = lut_vals
        .iter()
        .zip(&fresh_vals)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
        / peak;
    println!("max error relative to peak: {:.3}", err);
    println!("query {:.2} us, fresh rebuild {:.1} ms", per_query * 1e6, rebuild * 1e3);
    Ok(())
}
