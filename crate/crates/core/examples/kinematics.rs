//! Compton kinematics and the Klein–Nishina deposit law at a few source lines,
//! plus the LYSO attenuation coefficients they feed into.

use compton_imager::physics::{
    compton_angle, deposit_for_angle, kn_antiderivative, kn_deposit_density, max_deposit, AttenuationTable, MuKind,
};

fn main() -> compton_imager::Result<()> {
    for (name, e0) in [("Tc-99m", 0.1405), ("Cs-137", 0.6617), ("Co-60", 1.1732)] {
        let edge = max_deposit(e0);
        println!("{name}: E0 {e0} MeV, Compton edge {edge:.4} MeV");
        for deg in [30.0f64, 60.0, 90.0, 180.0] {
            let e1 = deposit_for_angle(e0, deg.to_radians());
            let back = compton_angle(e0, e1)?.to_degrees();
            println!(
                "  {deg:5.0} deg -> deposit {e1:.4} MeV (angle back {back:6.2}), density {:.3} /MeV",
                kn_deposit_density(e0, e1)
            );
        }
        // probability of depositing less than half the edge
        let half = kn_antiderivative(e0, 0.5 * edge)? - kn_antiderivative(e0, 0.0)?;
        let all = kn_antiderivative(e0, edge)? - kn_antiderivative(e0, 0.0)?;
        println!("  P(E1 < edge/2) = {:.3}", half / all);
    }

    let table = AttenuationTable::lyso();
    println!("\nLYSO attenuation (1/mm)");
    println!("  E (MeV)   total    photo    Compton");
    for e in [0.1, 0.2, 0.3, 0.5, 0.6617, 1.0] {
        println!(
            "  {e:6.4}  {:.5}  {:.5}  {:.5}",
            table.mu_total(e)?,
            table.mu(MuKind::Photo, e)?,
            table.mu(MuKind::Compton, e)?
        );
    }
    Ok(())
}
