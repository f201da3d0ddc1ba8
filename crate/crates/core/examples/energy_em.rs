//! Estimate the source energy, the summed-energy resolution and the fraction
//! of double-scatter events from simulated Cs-137 data.
//!
//! ```text
//! cargo run --release --example energy_em -- [n_events] [seed]
//! ```

use std::time::Instant;

use compton_imager::energy_em::{run_em, EmConfig};
use compton_imager::forward::SecondKind;
use compton_imager::geometry::DetectorArray;
use compton_imager::physics::AttenuationTable;
use compton_imager::simulate::{generate_events, summed_energy_histogram, SimConfig};

fn main() -> compton_imager::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map_or(2000, |a| a.parse().expect("event count"));
    let seed: u64 = args.next().map_or(7, |a| a.parse().expect("seed"));

    let array = DetectorArray::paper_4x7();
    let table = AttenuationTable::lyso();
    let mut cfg = SimConfig::single_source(0.0, 0.0, n, seed);
    cfg.outlier_fraction = 0.01;
    cfg.sources[0].intensity = 0.99;
    let events = generate_events(&array, &table, &cfg)?;
    let sums: Vec<f64> = events.iter().map(|e| e.summed_energy()).collect();

    // the noise actually present on the sums, known from the truth records
    let resid: Vec<f64> = events
        .iter()
        .filter_map(|e| e.truth.as_ref().map(|t| e.summed_energy() - t.e1 - t.e2))
        .collect();
    let m = resid.iter().sum::<f64>() / resid.len() as f64;
    let sd = (resid.iter().map(|r| (r - m).powi(2)).sum::<f64>() / (resid.len() - 1) as f64).sqrt();

    let t0 = Instant::now();
    let run = run_em(&sums, &EmConfig::default())?;
    let elapsed = t0.elapsed();
    let p = run.estimate();

    println!("events                {n}");
    println!("E0 estimate           {:.4} MeV", p.e0);
    println!("sigma estimate        {:.4} MeV (injected on sums: {sd:.4})", p.sigma);
    println!("p_CS estimate         {:.4}", p.p_scatter);
    println!("iterations            {}", run.iterations);
    println!("runtime               {:.1} s", elapsed.as_secs_f64());
    for (c, (q, ll)) in run.trace.iter().zip(&run.log_likelihood).enumerate() {
        println!("  iter {c}: E0={:.2} sigma={:.4} p_A={:.4} logL={ll:.3}", q.e0, q.sigma, q.p_absorb);
    }

    let mut truth_cs = 0;
    let mut labelled = 0;
    let mut wrong = 0;
    for (e, k) in events.iter().zip(&run.classifications) {
        let Some(t) = &e.truth else { continue };
        if t.source.is_outlier() {
            continue;
        }
        labelled += 1;
        truth_cs += usize::from(t.kind == SecondKind::Scatter);
        wrong += usize::from(t.kind != *k);
    }
    println!("true CS fraction      {:.4}", truth_cs as f64 / labelled as f64);
    println!("misclassified         {wrong} of {labelled}");

    let h = summed_energy_histogram(&events, 0.0, 1.0, 20)?;
    println!("\nsummed energy histogram");
    for (w, c) in h.edges.windows(2).zip(&h.counts) {
        println!("  {:.2}-{:.2} {}", w[0], w[1], "#".repeat((*c as usize).div_ceil(10)));
    }
    Ok(())
}
