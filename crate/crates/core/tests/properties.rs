use proptest::prelude::*;

use compton_imager::analysis::{back_project, box_stats, SphereGrid, DEFAULT_BP_WIDTH};
use compton_imager::forward::{Interaction, NoisyEvent};
use compton_imager::geometry::{DetectorArray, Ray, SphereModel};
use compton_imager::physics::{compton_angle, deposit_for_angle, kn_antiderivative, max_deposit};
use compton_imager::simulate::{read_events_from, write_events};
use compton_imager::sphere::{from_lon_lat_deg, Vec3};

fn grid() -> &'static SphereGrid {
    static GRID: std::sync::OnceLock<SphereGrid> = std::sync::OnceLock::new();
    GRID.get_or_init(|| SphereGrid::new(2000).unwrap())
}

proptest! {
    #[test]
    fn compton_angle_inverts_deposit(e0 in 0.05f64..2.0, frac in 0.0f64..1.0) {
        let omega = frac * std::f64::consts::PI;
        let e1 = deposit_for_angle(e0, omega);
        prop_assert!(e1 <= max_deposit(e0) + 1e-12);
        prop_assert!((compton_angle(e0, e1).unwrap() - omega).abs() < 1e-6);
    }

    #[test]
    fn kn_antiderivative_is_increasing(e0 in 0.05f64..2.0, a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let emax = max_deposit(e0);
        let fa = kn_antiderivative(e0, lo * emax * 0.999).unwrap();
        let fb = kn_antiderivative(e0, hi * emax * 0.999).unwrap();
        prop_assert!(fb >= fa);
    }

    #[test]
    fn pixels_contain_their_centres(lon in -180.0f64..180.0, lat in -89.0f64..89.0) {
        let g = grid();
        let i = g.pixel_of(&from_lon_lat_deg(lon, lat));
        prop_assert!(i < g.len());
        prop_assert_eq!(g.pixel_of(&g.pixel(i)), i);
    }

    #[test]
    fn chords_never_exceed_the_straight_line(
        ox in -300.0f64..300.0, oy in -300.0f64..300.0, oz in 100.0f64..300.0,
        tx in -20.0f64..20.0, ty in -30.0f64..30.0, tz in -20.0f64..20.0,
    ) {
        let array = DetectorArray::paper_4x7();
        let origin = Vec3::new(ox, oy, oz);
        let ray = Ray::new(origin, Vec3::new(tx, ty, tz) - origin).unwrap();
        let segs = array.ray_segments(&ray);
        for w in segs.windows(2) {
            prop_assert!(w[0].t_exit <= w[1].t_enter + 1e-9);
        }
        let (lo, hi) = array.bbox();
        let total: f64 = segs.iter().map(|s| s.length()).sum();
        prop_assert!(total <= (hi - lo).norm() + 1e-9);
    }

    #[test]
    fn box_stats_are_ordered(values in prop::collection::vec(-1e3f64..1e3, 1..60)) {
        if values.len() < 4 {
            prop_assert!(box_stats(&values).is_err());
            return Ok(());
        }
        let b = box_stats(&values).unwrap();
        prop_assert!(b.q0 <= b.q1 && b.q1 <= b.median && b.median <= b.q3 && b.q3 <= b.q4);
        prop_assert!((b.iqr - (b.q3 - b.q1)).abs() < 1e-9);
    }

    #[test]
    fn back_projection_ignores_event_order(seed in 0u64..1000, shift in 1usize..5) {
        let mut events: Vec<NoisyEvent> = (0..6u64)
            .map(|i| {
                let x = ((seed + i) % 7) as f64 - 3.0;
                NoisyEvent {
                    id: i,
                    first: Interaction::new(Vec3::new(x, 2.0, 20.0), 0.15 + 0.02 * i as f64),
                    second: Interaction::new(Vec3::new(x + 1.0, 3.0, 18.0), 0.4),
                    truth: None,
                }
            })
            .collect();
        let sphere = SphereModel::default();
        let a = back_project(&events, 0.6617, &sphere, grid(), DEFAULT_BP_WIDTH);
        events.rotate_left(shift);
        let b = back_project(&events, 0.6617, &sphere, grid(), DEFAULT_BP_WIDTH);
        prop_assert_eq!(a.intensity, b.intensity);
    }

    #[test]
    fn event_lines_round_trip(x in -20.0f64..20.0, e1 in 0.0f64..0.6, e2 in 0.0f64..0.6, id in 0u64..1_000_000) {
        let ev = NoisyEvent {
            id,
            first: Interaction::new(Vec3::new(x, -x / 3.0, 1.0 / 7.0), e1),
            second: Interaction::new(Vec3::new(0.1, x, -2.5), e2),
            truth: None,
        };
        let mut buf = Vec::new();
        write_events(&mut buf, &[ev]).unwrap();
        let back = read_events_from(buf.as_slice(), std::path::Path::new("mem")).unwrap();
        prop_assert_eq!(back, vec![ev]);
    }
}
