use kink_core::dynamics::{run_quench, thermalize, DynamicsState, QuenchOptions, TrialRecord, TrialStatus};
use kink_core::harness::*;
use kink_core::model::linear_chain;
use kink_core::statics::relaxed_zigzag;

fn sweep(trials: usize) -> Scenario {
    let text = format!(
        r#"
name = "small"
master_seed = 17
trials = {trials}

[system]
n_ions = 30
defects = [{{ site = 11, mass = 220.0 }}]

[quench]
nu_x_start_hz = 500e3
nu_x_end_hz = 140e3
tau_q_us = [15.0, 50.0]
hold_us = 40.0
"#
    );
    Scenario::from_toml_str(&text).unwrap()
}

#[test]
fn ensemble_of_one_matches_direct_run() {
    let mut s = sweep(1);
    s.quench.as_mut().unwrap().tau_q_us = vec![30.0];
    let recs = run_scenario(&s, 1).unwrap();
    assert_eq!(recs.len(), 1);

    let q = s.quench.as_ref().unwrap();
    let sys = s.system.build(q.nu_x_start_hz).unwrap();
    let sch = q.schedule(30e-6);
    let params = s.langevin.params();
    let opts = QuenchOptions {
        frame_stride: None,
        reference: Some(relaxed_zigzag(&sys.clone().with_nu_x(q.nu_x_end_hz)).unwrap()),
    };
    let st = thermalize(
        &sys,
        &DynamicsState::at_rest(&linear_chain(&sys).unwrap(), 17, 0),
        &params,
        0.0,
    )
    .unwrap();
    let out = run_quench(&sys, &st, &sch, &params, &opts);
    let direct = TrialRecord::from_outcome(17, 0, &sch, &s.system.defects, &out, &sys.units());
    assert_eq!(recs[0], direct);
}

#[test]
fn worker_count_does_not_change_results() {
    let s = sweep(6);
    let a = run_scenario(&s, 1).unwrap();
    let b = run_scenario(&s, 4).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 12);
    assert!(a.windows(2).all(|w| w[0].trial < w[1].trial));

    let (mut ja, mut jb) = (Vec::new(), Vec::new());
    write_jsonl(&a, &mut ja).unwrap();
    write_jsonl(&b, &mut jb).unwrap();
    assert_eq!(ja, jb);

    for r in &a {
        assert_eq!(r.status, TrialStatus::Ok);
        assert!(r.n_kinks_created >= r.n_kinks_survived);
    }
    let created = density_curve(&a, Stage::Created).unwrap();
    let survived = density_curve(&a, Stage::Survived).unwrap();
    for (c, v) in created.iter().zip(&survived) {
        assert!(c.d >= v.d);
        assert!(c.ci95.0 <= c.d && c.d <= c.ci95.1);
    }
}

#[test]
fn tables_and_manifest_are_reproducible() {
    let s = sweep(3);
    let render = || {
        let recs = run_scenario(&s, 2).unwrap();
        let mut buf = Vec::new();
        write_jsonl(&recs, &mut buf).unwrap();
        write_density_tsv(&density_curve(&recs, Stage::Created).unwrap(), &mut buf).unwrap();
        let mut m = Manifest::new("quench-sweep", Some(s.master_seed), &s);
        m.outputs = vec!["trials.jsonl".into()];
        m.write(&mut buf).unwrap();
        buf
    };
    assert_eq!(render(), render());
}

#[test]
fn manifest_carries_resolved_defaults() {
    let s = sweep(3);
    let m = Manifest::new("quench-sweep", Some(s.master_seed), &s);
    assert_eq!(m.config["system"]["nu_z_hz"], 24.6e3);
    assert_eq!(m.config["langevin"]["dt_ns"], 10.0);
    let back: Scenario = serde_json::from_value(m.config.clone()).unwrap();
    assert_eq!(back, s);
}

#[test]
fn field_protocols_parse_and_validate() {
    let text = r#"
name = "parity"
master_seed = 1
[system]
n_ions = 30
[efield]
protocol = "parity"
sites = [11, 15]
mass_amu = 220.0
e_field_v_per_m = 15.0
tau_q_us = 50.0
nu_x_start_hz = 500e3
nu_x_end_hz = 140e3
"#;
    let s = Scenario::from_toml_str(text).unwrap();
    assert!(matches!(s.efield, Some(FieldProtocol::Parity { sites: [11, 15], .. })));
    let bad = text.replace("[11, 15]", "[11, 30]");
    assert!(matches!(
        Scenario::from_toml_str(&bad),
        Err(kink_core::Error::Config(_))
    ));

    let drag = r#"
name = "drag"
master_seed = 1
[system]
n_ions = 30
[efield]
protocol = "drag"
site = 9
mass_amu = 188.0
fields_v_per_m = [50.0]
[efield.options]
heat_us = 100.0
"#;
    match Scenario::from_toml_str(drag).unwrap().efield {
        Some(FieldProtocol::Drag { options, .. }) => {
            assert_eq!(options.heat_us, 100.0);
            assert_eq!(
                options,
                DragOptions {
                    heat_us: 100.0,
                    ..Default::default()
                }
            );
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn parity_of_ions_between_molecules_decides_kink() {
    let base = SystemSpec::uniform(30);
    let params = kink_core::dynamics::LangevinParams::default();
    let sch = kink_core::dynamics::RampSchedule::quench(500e3, 140e3, 50e-6);
    let even = parity_quench(&base, [11, 14], 220.0, 15.0, &sch, &params, 4, 3).unwrap();
    let odd = parity_quench(&base, [11, 15], 220.0, 15.0, &sch, &params, 4, 3).unwrap();
    assert_eq!((even.ions_between, odd.ions_between), (2, 3));
    assert_eq!(even.fraction_with_kink, 1.0, "{:?}", even.kinks);
    assert_eq!(odd.fraction_with_kink, 0.0, "{:?}", odd.kinks);
}

#[test]
fn mirrored_histogram_swaps_sides() {
    let s = sweep(4);
    let recs = run_scenario(&s, 2).unwrap();
    let sys = s.system.build(140e3).unwrap();
    let half = centre_half_width(&sys, &relaxed_zigzag(&sys).unwrap());
    let h = spatial_histogram(&recs, half);
    let m = spatial_histogram(&mirrored(&recs, 30), half);
    assert_eq!((h.left, h.centre, h.right), (m.right, m.centre, m.left));
    assert!(mirrored(&recs, 30).iter().all(|r| r.defects[0].site == 18));
}
