use proptest::prelude::*;

use kink_core::harness::{mean_ci, wilson_interval};
use kink_core::kinkdetect::{detect, Structure};
use kink_core::model::{gradient, hessian, linear_chain, potential_energy, Configuration, IonSystem};
use kink_core::statics::{relaxed_zigzag, seed_kink};
use kink_core::units::UnitSystem;

/// Linear chain of `n` ions with transverse noise of size `amp` per ion.
fn jittered(sys: &IonSystem, noise: &[f64], amp: f64) -> Configuration {
    let mut q = linear_chain(sys).unwrap();
    let n = q.len();
    for j in 0..n {
        q.z[j] += 0.05 * amp * noise[j];
        q.x[j] = amp * noise[n + j];
    }
    q
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn energy_is_symmetric_under_both_reflections(
        noise in prop::collection::vec(-1.0f64..1.0, 24),
        nu_x in 60e3f64..400e3,
    ) {
        let sys = IonSystem::uniform(12, 24.6e3, nu_x).unwrap();
        let q = jittered(&sys, &noise, 0.2);
        let e = potential_energy(&sys, &q).unwrap();
        let ex = potential_energy(&sys, &q.mirrored_x()).unwrap();
        let ez = potential_energy(&sys, &q.reversed_z()).unwrap();
        prop_assert!((e - ex).abs() <= 1e-12 * e.abs());
        prop_assert!((e - ez).abs() <= 1e-12 * e.abs());
    }

    #[test]
    fn gradient_matches_central_differences(
        noise in prop::collection::vec(-1.0f64..1.0, 20),
        heavy in 0usize..10,
        field in -50.0f64..50.0,
    ) {
        let sys = IonSystem::uniform(10, 24.6e3, 150e3)
            .unwrap()
            .with_defect(heavy, 220.0)
            .unwrap()
            .with_e_field(field);
        let q = jittered(&sys, &noise, 0.3);
        let g = gradient(&sys, &q).unwrap();
        let v = q.to_vector();
        let h = 1e-5;
        for k in 0..v.len() {
            let (mut p, mut m) = (v.clone(), v.clone());
            p[k] += h;
            m[k] -= h;
            let fd = (potential_energy(&sys, &Configuration::from_vector(&p)).unwrap()
                - potential_energy(&sys, &Configuration::from_vector(&m)).unwrap())
                / (2.0 * h);
            prop_assert!((fd - g[k]).abs() <= 1e-6 * g[k].abs().max(1.0), "{k}: {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn hessian_is_symmetric(noise in prop::collection::vec(-1.0f64..1.0, 16)) {
        let sys = IonSystem::uniform(8, 24.6e3, 120e3).unwrap();
        let h = hessian(&sys, &jittered(&sys, &noise, 0.3)).unwrap();
        prop_assert!((&h - h.transpose()).amax() <= 1e-12 * h.amax());
    }

    #[test]
    fn unit_conversions_round_trip(mass in 1.0f64..300.0, nu_z in 1e3f64..1e6, v in -1e3f64..1e3) {
        let u = UnitSystem::new(mass, nu_z);
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(1e-300);
        prop_assert!(close(v, u.length_to_si(u.length_from_si(v))));
        prop_assert!(close(v, u.time_to_si(u.time_from_si(v))));
        prop_assert!(close(v, u.energy_to_si(u.energy_from_si(v))));
        prop_assert!(close(v, u.field_to_si(u.field_from_si(v))));
    }

    #[test]
    fn normal_interval_brackets_the_mean(counts in prop::collection::vec(0usize..5, 1..300)) {
        let (d, (lo, hi)) = mean_ci(&counts);
        prop_assert!(lo >= 0.0 && lo <= d && d <= hi);
    }

    #[test]
    fn wilson_interval_brackets_the_fraction(n in 1usize..1000, frac in 0.0f64..=1.0) {
        let k = (frac * n as f64).round() as usize;
        let (lo, hi) = wilson_interval(k, n);
        let p = k as f64 / n as f64;
        prop_assert!(0.0 <= lo && lo <= p && p <= hi && hi <= 1.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn detection_ignores_which_row_is_which(nu_x in 130e3f64..230e3) {
        let sys = IonSystem::uniform(30, 24.6e3, nu_x).unwrap();
        let zz = relaxed_zigzag(&sys).unwrap();
        let kink = seed_kink(&sys, &zz).unwrap();
        prop_assert_eq!(detect(&zz, None).structure, Structure::Zigzag);
        let a = detect(&kink, Some(&zz));
        let b = detect(&kink.mirrored_x(), Some(&zz.mirrored_x()));
        prop_assert_eq!(a.n_kinks(), 1);
        prop_assert_eq!(b.n_kinks(), 1);
        prop_assert_eq!(a.kinks[0].kind, b.kinks[0].kind);
        prop_assert!((a.kinks[0].centre - b.kinks[0].centre).abs() < 1e-9);
    }
}
