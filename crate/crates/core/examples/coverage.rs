//! Credible-ball coverage on an exactly known posterior: the truth and the
//! samples come from the same von Mises–Fisher law, so observed coverage
//! should track the nominal level.

use compton_imager::analysis::{box_stats, coverage_from_balls, default_alphas, CredibleBalls};
use compton_imager::rng::stream;
use compton_imager::sphere::{angle_between, uniform_direction, VonMisesFisher};

fn main() -> compton_imager::Result<()> {
    let repeats: usize = std::env::args().nth(1).map_or(200, |a| a.parse().expect("repeat count"));
    let mut rng = stream(3, "coverage-example", &[]);
    let alphas = default_alphas();
    let (mut balls, mut truths, mut errors) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..repeats {
        let posterior = VonMisesFisher::new(uniform_direction(&mut rng), 50.0);
        let truth = posterior.sample(&mut rng);
        let samples: Vec<_> = (0..4000).map(|_| posterior.sample(&mut rng)).collect();
        let ball = CredibleBalls::from_samples(&samples, &alphas)?;
        errors.push(300.0 * angle_between(&ball.mean.into(), &truth));
        balls.push(ball);
        truths.push(truth);
    }
    let coverage = coverage_from_balls(&balls, &truths)?;
    println!("nominal  observed");
    for (a, c) in alphas.iter().zip(&coverage) {
        println!("  {:.1}     {c:.3}", 1.0 - a);
    }
    let b = box_stats(&errors)?;
    println!("error of the mean on R = 300 mm: {b:?}");
    Ok(())
}
