//! Back-project ten noiseless and ten noisy events and compare the image peaks
//! with the source. Writes the noisy image as CSV to the temp directory.

use compton_imager::analysis::{back_project, bp_modes, SphereGrid, DEFAULT_BP_WIDTH, DEFAULT_MODE_SEPARATION};
use compton_imager::geometry::{DetectorArray, SphereModel};
use compton_imager::physics::AttenuationTable;
use compton_imager::simulate::{generate_events, SimConfig};
use compton_imager::sphere::{from_lon_lat_deg, to_lon_lat_deg};

fn main() -> compton_imager::Result<()> {
    let array = DetectorArray::paper_4x7();
    let table = AttenuationTable::lyso();
    let sphere = SphereModel::default();
    let grid = SphereGrid::default();
    let truth = from_lon_lat_deg(30.0, 10.0);

    for noisy in [false, true] {
        let mut cfg = SimConfig::single_source(30.0, 10.0, 10, 4);
        if !noisy {
            cfg.noise = None;
        }
        let events = generate_events(&array, &table, &cfg)?;
        let image = back_project(&events, 0.6617, &sphere, &grid, DEFAULT_BP_WIDTH);
        let peak = grid.pixel(image.argmax());
        let (lon, lat) = to_lon_lat_deg(&peak);
        println!(
            "{}: peak ({lon:.1}, {lat:.1}), {:.1} mm from the source, {} events skipped",
            if noisy { "noisy    " } else { "noiseless" },
            sphere.geodesic_distance(&peak, &truth),
            image.skipped
        );
        let modes = bp_modes(&grid, &image, 3, DEFAULT_MODE_SEPARATION)?;
        for m in modes {
            let (lon, lat) = to_lon_lat_deg(&m);
            println!("    mode ({lon:7.1}, {lat:5.1})");
        }
        if noisy {
            let path = std::env::temp_dir().join("backprojection.csv");
            image.write_csv_file(&grid, &path)?;
            println!("image written to {}", path.display());
        }
    }
    Ok(())
}
