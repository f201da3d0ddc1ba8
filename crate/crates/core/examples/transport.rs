//! Photon histories from a Cs-137 source: interaction-type fractions and the
//! first-deposit spectrum against the Klein–Nishina law.
//!
//! ```text
//! cargo run --release --example transport -- [n_photons]
//! ```

use compton_imager::geometry::{DetectorArray, SphereModel};
use compton_imager::physics::{analytic_p_absorb, kn_deposit_density, max_deposit, AttenuationTable};
use compton_imager::simulate::transport_tally;
use compton_imager::sphere::from_lon_lat_deg;

fn main() -> compton_imager::Result<()> {
    let n: usize = std::env::args().nth(1).map_or(100_000, |a| a.parse().expect("photon count"));
    let array = DetectorArray::paper_4x7();
    let table = AttenuationTable::lyso();
    let e0 = 0.6617;
    let src = SphereModel::default().point(&from_lon_lat_deg(0.0, 0.0));

    let t = transport_tally(&array, &table, &src, e0, n, 1)?;
    println!("photons interacting      {}", t.photons);
    println!("first absorbed           {}", t.first_absorbed);
    println!("scattered then escaped   {}", t.escaped);
    println!("two-interaction events   {}", t.detected);
    println!("second-scatter fraction  {:.4}", t.p_scatter());
    let odds = analytic_p_absorb(&table, e0)?;
    println!("analytic p_A / p_CS      {:.4} / {:.4}", odds.p_absorb, odds.p_scatter);

    let bins = 20;
    let emax = max_deposit(e0);
    let mut counts = vec![0usize; bins];
    for &e in &t.first_deposits {
        counts[((e / emax * bins as f64) as usize).min(bins - 1)] += 1;
    }
    println!("\n  E1 bin (MeV)   observed  expected");
    for (i, c) in counts.iter().enumerate() {
        let (a, b) = (emax * i as f64 / bins as f64, emax * (i + 1) as f64 / bins as f64);
        let expected = (0..100)
            .map(|k| kn_deposit_density(e0, a + (b - a) * (k as f64 + 0.5) / 100.0))
            .sum::<f64>()
            * (b - a)
            / 100.0
            * t.first_deposits.len() as f64;
        println!("  {a:.3}-{b:.3}  {c:>9}  {expected:>8.0}");
    }
    Ok(())
}
