//! Simulate a noisy event file with truth records, as the `simulate`
//! subcommand does, and summarise what is in it.
//!
//! ```text
//! cargo run --release --example simulate_events -- [n_events] [seed] [out.jsonl]
//! ```

use std::path::PathBuf;

use compton_imager::forward::SecondKind;
use compton_imager::geometry::DetectorArray;
use compton_imager::physics::AttenuationTable;
use compton_imager::simulate::{generate_events, read_events, write_events_file, SimConfig, SourceSpec};

fn main() -> compton_imager::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map_or(500, |a| a.parse().expect("event count"));
    let seed: u64 = args.next().map_or(1, |a| a.parse().expect("seed"));
    let out = args.next().map_or_else(|| std::env::temp_dir().join("events.jsonl"), PathBuf::from);

    let cfg = SimConfig {
        sources: vec![
            SourceSpec::from_lon_lat(0.0, 0.0, 0.6617, 0.6),
            SourceSpec::from_lon_lat(120.0, 0.0, 0.6617, 0.35),
        ],
        outlier_fraction: 0.05,
        ..SimConfig::single_source(0.0, 0.0, n, seed)
    };
    let events = generate_events(&DetectorArray::paper_4x7(), &AttenuationTable::lyso(), &cfg)?;
    write_events_file(&out, &events)?;
    let back = read_events(&out)?;
    assert_eq!(back, events);

    let mut per_source = [0usize; 3];
    let mut scatters = 0;
    let mut gap = Vec::new();
    for e in &events {
        let t = e.truth.expect("simulated events carry truth");
        per_source[t.source.index().unwrap_or(2)] += 1;
        scatters += usize::from(t.kind == SecondKind::Scatter);
        gap.push((e.first.pos() - e.second.pos()).norm());
    }
    gap.sort_by(f64::total_cmp);
    println!("wrote {} events to {}", events.len(), out.display());
    println!("source 1 / source 2 / outliers: {:?}", per_source);
    println!("second interaction scattered: {:.1}%", 100.0 * scatters as f64 / events.len() as f64);
    println!("median observed r1-r2 separation: {:.2} mm", gap[gap.len() / 2]);
    Ok(())
}
