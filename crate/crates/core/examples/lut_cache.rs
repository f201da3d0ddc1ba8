//! Build (or load) the full-size first-direction LUT for Cs-137 on the default
//! array and store it in `$COMPTON_LUT_DIR` (default `./lut-cache`).

use std::path::PathBuf;
use std::time::Instant;

use compton_imager::forward::{DirectionPrior, DirectionPriorLut, LutParams};
use compton_imager::geometry::{DetectorArray, SphereModel};
use compton_imager::physics::AttenuationTable;
use compton_imager::sphere::from_lon_lat_deg;

fn main() -> compton_imager::Result<()> {
    env_logger::init();
    let dir = DirectionPriorLut::env_dir().unwrap_or_else(|| PathBuf::from("lut-cache"));
    let array = DetectorArray::paper_4x7();
    let sphere = SphereModel::default();
    let t = Instant::now();
    let lut = DirectionPriorLut::load_or_build(
        &array,
        &AttenuationTable::lyso(),
        0.6617,
        &sphere,
        LutParams::default(),
        Some(&dir),
    )?;
    println!("LUT ready in {:.1} s under {}", t.elapsed().as_secs_f64(), dir.display());
    let src = sphere.point(&from_lon_lat_deg(0.0, 0.0));
    let toward = (array.center() - src).normalize();
    println!("density toward the array centre from (0°, 0°): {:.3} /sr", lut.density(&src, &toward));
    Ok(())
}
