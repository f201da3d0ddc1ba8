//! Small event sets against the large-sample EM estimate of E0.

use compton_imager::energy_em::{run_em, EmConfig};
use compton_imager::geometry::DetectorArray;
use compton_imager::physics::AttenuationTable;
use compton_imager::simulate::{generate_events, SimConfig};

fn e0_estimate(n: usize, seed: u64) -> f64 {
    let events = generate_events(
        &DetectorArray::paper_4x7(),
        &AttenuationTable::lyso(),
        &SimConfig::single_source(0.0, 0.0, n, seed),
    )
    .unwrap();
    let sums: Vec<f64> = events.iter().map(|e| e.summed_energy()).collect();
    run_em(&sums, &EmConfig::default()).unwrap().estimate().e0
}

#[test]
fn ten_event_sets_mostly_agree_with_the_large_run() {
    let reference = e0_estimate(2000, 500);
    let seeds = 1..=20u64;
    let n = seeds.clone().count();
    let estimates: Vec<f64> = seeds.map(|s| e0_estimate(10, s)).collect();
    let same = estimates.iter().filter(|e| (*e - reference).abs() < 1e-9).count();
    assert!(
        same as f64 >= 0.8 * n as f64,
        "{same}/{n} ten-event sets on the {reference} cell: {estimates:?}"
    );
}
