//! Trace a few rays from the source sphere through the 4×7 sensor array and
//! report the chords, effective in-material distances and bounding cones.

use compton_imager::geometry::{DetectorArray, Ray, SphereModel};
use compton_imager::sphere::from_lon_lat_deg;

fn main() -> compton_imager::Result<()> {
    let array = DetectorArray::paper_4x7();
    let sphere = SphereModel::default();
    let (lo, hi) = array.bbox();
    println!("{} sensors, bounding box {:?} .. {:?} mm", array.len(), lo.as_slice(), hi.as_slice());

    for (lon, lat) in [(0.0, 0.0), (45.0, 30.0), (120.0, 0.0), (0.0, 85.0)] {
        let src = sphere.point(&from_lon_lat_deg(lon, lat));
        let cone = array.bounding_cone(&src)?;
        let ray = Ray::new(src, array.center() - src)?;
        let segments = array.ray_segments(&ray);
        let total: f64 = segments.iter().map(|s| s.length()).sum();
        println!(
            "source ({lon:5.1}, {lat:4.1}): cone half-angle {:.2} deg, {:.4} sr; central ray crosses {} sensors, {total:.2} mm of crystal",
            cone.half_angle.to_degrees(),
            cone.solid_angle(),
            segments.len()
        );
        if let Some(first) = segments.first() {
            let entry = ray.at(first.t_enter);
            let exit = ray.at(segments.last().expect("non-empty").t_exit);
            println!(
                "    entry sensor {} exit sensor {}; effective distance entry->exit {:.2} mm",
                first.sensor,
                segments.last().expect("non-empty").sensor,
                array.effective_distance(&entry, &exit)
            );
        }
    }
    Ok(())
}
