use kink_core::dynamics::*;
use kink_core::kinkdetect::{detect, CentreFunctional, Structure};
use kink_core::model::{critical_nu_x, linear_chain, Configuration, IonSystem};
use kink_core::spectrum::dominant_frequency;
use kink_core::statics::*;
use kink_core::units::BOLTZMANN;

const NU_Z: f64 = 24.6e3;

fn chain(nu_x: f64) -> IonSystem {
    IonSystem::uniform(30, NU_Z, nu_x).unwrap()
}

/// Upward mean crossings, linearly interpolated.
fn crossing_frequency(t: &[f64], x: &[f64]) -> f64 {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let mut cr = Vec::new();
    for k in 1..x.len() {
        if x[k - 1] < mean && x[k] >= mean {
            let f = (mean - x[k - 1]) / (x[k] - x[k - 1]);
            cr.push(t[k - 1] + f * (t[k] - t[k - 1]));
        }
    }
    (cr.len() - 1) as f64 / (cr[cr.len() - 1] - cr[0])
}

#[test]
fn single_ion_oscillates_at_mass_scaled_frequency() {
    for mass in [172.0, 220.0] {
        let sys = IonSystem::new(vec![mass], NU_Z, 140e3).unwrap();
        let u = sys.units();
        let expected = 140e3 * sys.reference_mass / mass;
        let cfg = Configuration::new(vec![0.0], vec![0.01]).unwrap();
        let mut p = Propagator::new(&sys, DynamicsState::at_rest(&cfg, 0, 0)).unwrap();
        let dt = u.time_from_si(DEFAULT_DT);
        let steps = (100.0 / expected / DEFAULT_DT) as usize;
        let (mut t, mut x) = (Vec::new(), Vec::new());
        for _ in 0..steps {
            p.step_nve(dt).unwrap();
            t.push(p.state.time_si(&u));
            x.push(p.state.q[1]);
        }
        let f = crossing_frequency(&t, &x);
        assert!((f / expected - 1.0).abs() < 1e-3, "mass {mass}: {f} vs {expected}");
    }
}

#[test]
fn zigzag_at_rest_stays_at_rest() {
    let sys = chain(140e3);
    let zz = relaxed_zigzag(&sys).unwrap();
    let mut p = Propagator::new(&sys, DynamicsState::at_rest(&zz, 0, 0)).unwrap();
    let dt = sys.units().time_from_si(DEFAULT_DT);
    for _ in 0..2000 {
        p.step_nve(dt).unwrap();
    }
    let drift = p
        .state
        .q
        .iter()
        .zip(zz.to_vector())
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    assert!(drift < 1e-9, "{drift}");
}

#[test]
fn nve_conserves_energy_of_kink_system() {
    let sys = chain(140e3);
    let zz = relaxed_zigzag(&sys).unwrap();
    let kink = seed_kink(&sys, &zz).unwrap();
    let g = CentreFunctional::extended(&zz);
    let x0 = sys.units().length_from_si(25e-6);
    let start = constrained_minimize(&sys, &kink, &g, x0).unwrap().config;
    let mut p = Propagator::new(&sys, DynamicsState::at_rest(&start, 0, 0)).unwrap();
    let dt = sys.units().time_from_si(DEFAULT_DT);
    let e0 = p.total_energy();
    let mut worst = 0.0f64;
    for _ in 0..100_000 {
        p.step_nve(dt).unwrap();
        worst = worst.max(((p.total_energy() - e0) / e0).abs());
    }
    assert!(worst < 1e-6, "{worst}");
}

/// Released kink: X(t) sampled every 10 steps over 2 ms.
fn kink_frequency(dt_s: f64) -> f64 {
    let sys = chain(140e3);
    let u = sys.units();
    let zz = relaxed_zigzag(&sys).unwrap();
    let kink = seed_kink(&sys, &zz).unwrap();
    let g = CentreFunctional::extended(&zz);
    let start = constrained_minimize(&sys, &kink, &g, u.length_from_si(25e-6))
        .unwrap()
        .config;
    let mut p = Propagator::new(&sys, DynamicsState::at_rest(&start, 0, 0)).unwrap();
    let dt = u.time_from_si(dt_s);
    let stride = (100e-9 / dt_s).round() as usize;
    let mut xs = Vec::new();
    for k in 0..(2e-3 / dt_s).round() as usize {
        p.step_nve(dt).unwrap();
        if k % stride == 0 {
            xs.push(g.of_config(&p.state.config()).unwrap());
        }
    }
    dominant_frequency(&xs, 100e-9, 1e3).unwrap()
}

#[test]
fn halving_dt_leaves_kink_frequency_unchanged() {
    let f1 = kink_frequency(10e-9);
    let f2 = kink_frequency(5e-9);
    assert!(((f1 - f2) / f2).abs() < 5e-3, "{f1} {f2}");
}

/// Mean kinetic energy per degree of freedom in kelvin over `steps`.
fn mean_kinetic_temperature(p: &mut Propagator, th: &Thermostat, steps: usize) -> f64 {
    let dof = p.state.q.len() as f64;
    let mut acc = 0.0;
    for _ in 0..steps {
        p.step_langevin(th).unwrap();
        acc += p.kinetic_energy();
    }
    let e = acc / steps as f64 / dof;
    // ½ k_B T per degree of freedom
    2.0 * p.units().energy_to_si(e) / BOLTZMANN
}

#[test]
fn langevin_obeys_equipartition() {
    let sys = chain(140e3);
    let zz = relaxed_zigzag(&sys).unwrap();
    let params = LangevinParams {
        temperature: 5e-3,
        ..Default::default()
    };
    let st = thermalize(&sys, &DynamicsState::at_rest(&zz, 11, 0), &params, 0.0).unwrap();
    let mut p = Propagator::new(&sys, st).unwrap();
    let th = Thermostat::new(&params, p.masses(), p.units()).unwrap();
    let t = mean_kinetic_temperature(&mut p, &th, 500_000);
    assert!((t / 5e-3 - 1.0).abs() < 0.05, "{t}");
}

#[test]
fn thermalized_state_has_target_temperature() {
    let sys = chain(140e3);
    let zz = relaxed_zigzag(&sys).unwrap();
    let params = LangevinParams {
        temperature: 3e-3,
        ..Default::default()
    };
    let st = thermalize(&sys, &DynamicsState::at_rest(&zz, 3, 0), &params, 20e-6).unwrap();
    let mut p = Propagator::new(&sys, st).unwrap();
    let th = Thermostat::new(&params, p.masses(), p.units()).unwrap();
    let t = mean_kinetic_temperature(&mut p, &th, 100_000);
    assert!((t / 3e-3 - 1.0).abs() < 0.1, "{t}");
}

#[test]
fn zero_temperature_thermalize_returns_minimum() {
    let sys = chain(140e3);
    let zz = relaxed_zigzag(&sys).unwrap();
    let mut nudged = zz.clone();
    nudged.z[3] += 0.01;
    let params = LangevinParams {
        temperature: 0.0,
        ..Default::default()
    };
    let st = thermalize(&sys, &DynamicsState::at_rest(&nudged, 0, 0), &params, 0.0).unwrap();
    assert!(st.v.iter().all(|v| *v == 0.0));
    let d =
        st.q.iter()
            .zip(zz.to_vector())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    assert!(d < 1e-7, "{d}");
}

#[test]
fn pure_damping_relaxes_perturbed_zigzag() {
    let sys = chain(140e3);
    let zz = relaxed_zigzag(&sys).unwrap();
    let mut cfg = zz.clone();
    for (j, x) in cfg.x.iter_mut().enumerate() {
        *x += 0.01 * ((j * 7 % 5) as f64 - 2.0);
    }
    let params = LangevinParams {
        temperature: 0.0,
        ..Default::default()
    };
    let mut p = Propagator::new(&sys, DynamicsState::at_rest(&cfg, 0, 0)).unwrap();
    let th = Thermostat::new(&params, p.masses(), p.units()).unwrap();
    for _ in 0..20 {
        p.step_langevin(&th).unwrap();
    }
    let k0 = p.kinetic_energy();
    for _ in 0..200_000 {
        p.step_langevin(&th).unwrap();
    }
    assert!(p.kinetic_energy() < 1e-8 * k0.max(1e-12));
    assert_eq!(detect(&p.state.config(), Some(&zz)).structure, Structure::Zigzag);
}

#[test]
fn same_seed_gives_identical_trials() {
    let sys = chain(500e3);
    let lin = linear_chain(&sys).unwrap();
    let params = LangevinParams::default();
    let sch = RampSchedule::quench(500e3, 140e3, 15e-6);
    let opts = QuenchOptions {
        frame_stride: Some(1000),
        reference: None,
    };
    let run = |seed, trial| {
        let st = thermalize(&sys, &DynamicsState::at_rest(&lin, seed, trial), &params, 1e-6).unwrap();
        let out = run_quench(&sys, &st, &sch, &params, &opts);
        let rec = TrialRecord::from_outcome(seed, trial, &sch, &[], &out, &sys.units());
        (out.unwrap(), rec)
    };
    let (a, ra) = run(5, 2);
    let (b, rb) = run(5, 2);
    assert_eq!(a.final_state, b.final_state);
    assert_eq!(a.frames, b.frames);
    assert_eq!(ra, rb);
    let (c, _) = run(5, 3);
    assert_ne!(a.final_state.q, c.final_state.q);
    assert_eq!(a.frames.len(), 40);
    let line = serde_json::to_string(&ra).unwrap();
    assert!(line.contains("\"n_kinks_created\""));
}

#[test]
fn quench_above_critical_point_stays_linear() {
    let sys = chain(500e3);
    let nu_c = critical_nu_x(&sys).unwrap();
    let nu_end = 1.1 * nu_c;
    let lin = linear_chain(&sys).unwrap();
    let params = LangevinParams::default();
    let sch = RampSchedule::quench(500e3, nu_end, 15e-6);
    let reference = linear_chain(&sys.clone().with_nu_x(nu_end)).unwrap();
    let opts = QuenchOptions {
        frame_stride: None,
        reference: Some(reference),
    };
    for trial in 0..200 {
        let st = thermalize(&sys, &DynamicsState::at_rest(&lin, 99, trial), &params, 0.0).unwrap();
        let out = run_quench(&sys, &st, &sch, &params, &opts).unwrap();
        assert_eq!(out.created.structure, Structure::Linear, "trial {trial}");
        assert_eq!(out.survived.structure, Structure::Linear, "trial {trial}");
    }
}

#[test]
fn frames_round_trip_through_tsv() {
    let sys = chain(140e3);
    let zz = relaxed_zigzag(&sys).unwrap();
    let mut p = Propagator::new(&sys, DynamicsState::at_rest(&zz, 0, 0)).unwrap();
    p.step_nve(0.01).unwrap();
    let frames = vec![p.frame(), p.frame()];
    let mut buf = Vec::new();
    write_frames(&frames, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0].split('\t').count(), 1 + 4 * 30);
    let z0: f64 = lines[1].split('\t').nth(1).unwrap().parse().unwrap();
    assert!((z0 - frames[0].z[0]).abs() <= 1e-12 * z0.abs());
}
