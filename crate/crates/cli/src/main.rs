use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use kink_core::collective::{integrate_bare_kink, write_reduced, KinkTrajectory};
use kink_core::dynamics::{
    write_frames, DynamicsState, LangevinParams, Propagator, RampSchedule, Thermostat, TrialRecord, TrialStatus,
};
use kink_core::harness::{
    centre_half_width, density_curve, drag_threshold, field_ramp_creation, mirrored, parity_quench, run_scenario,
    spatial_histogram, write_density_tsv, write_histogram_tsv, write_jsonl, FieldProtocol, Manifest, Scenario, Stage,
};
use kink_core::kinkdetect::{detect, CentreFunctional, KinkKind};
use kink_core::model::{critical_nu_x, normal_modes, IonSystem};
use kink_core::spectrum::{dominant_frequency, rms};
use kink_core::statics::{
    central_spacing, constrained_minimize, pn_barriers, relaxed_zigzag, seed_kink, seeds_at_sites, trace_adiabatic,
    trace_envelope, trapping_barrier, wells, PnCurve, TraceOptions,
};

#[derive(Parser)]
#[command(name = "kinksim", version, about = "Kinks in planar ion Coulomb crystals")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Equilibrium crystal, its structure and normal modes at system.nu_x_hz.
    Ground(Common),
    /// Peierls-Nabarro potential of a single kink.
    Pn(PnArgs),
    /// Quench ensembles over every tau_q_us of the [quench] table.
    QuenchSweep(SweepArgs),
    /// Release a kink and follow its centre in the full N-body dynamics.
    Dynamics(MotionArgs),
    /// Same release in the reduced one-coordinate kink model.
    Collective(MotionArgs),
    /// Run the dc-field protocol of the [efield] table.
    Efield(Common),
    /// Recompute density tables and the spatial histogram from a sweep directory.
    Report(ReportArgs),
}

#[derive(Args)]
struct Common {
    /// Scenario file (TOML).
    #[arg(short, long)]
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
enum KindArg {
    Auto,
    Odd,
    Extended,
}

#[derive(Args)]
struct PnArgs {
    #[command(flatten)]
    common: Common,
    /// Centre functional; auto picks the type of the relaxed kink.
    #[arg(long, value_enum, default_value_t = KindArg::Auto)]
    kind: KindArg,
    /// Continuation step as a fraction of the central spacing.
    #[arg(long, default_value_t = 0.05)]
    step: f64,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    #[arg(short, long, default_value_t = 1)]
    workers: usize,
}

#[derive(Args)]
struct MotionArgs {
    #[command(flatten)]
    common: Common,
    /// Initial kink position.
    #[arg(long, default_value_t = 25.0)]
    x0_um: f64,
    #[arg(long, default_value_t = 2000.0)]
    duration_us: f64,
    /// Sampling interval of X(t).
    #[arg(long, default_value_t = 100.0)]
    sample_ns: f64,
    /// Langevin temperature; the run is undamped when absent.
    #[arg(long)]
    temperature_k: Option<f64>,
    /// Also write every sampled frame (dynamics only).
    #[arg(long)]
    frames: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory holding trials.jsonl and manifest.json of a sweep.
    #[arg(short, long)]
    dir: PathBuf,
    /// Write regenerated tables and a manifest here.
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Reflect defect sites and kink positions about the chain centre.
    #[arg(long)]
    mirror: bool,
}

/// A trial or protocol run that ended in a numerical failure.
#[derive(Debug)]
struct NumericalFailure(String);

impl std::fmt::Display for NumericalFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for NumericalFailure {}

fn exit_code(e: &anyhow::Error) -> u8 {
    use kink_core::Error as E;
    for cause in e.chain() {
        if cause.downcast_ref::<NumericalFailure>().is_some() {
            return 2;
        }
        if let Some(k) = cause.downcast_ref::<E>() {
            return match k {
                E::Config(_) | E::Io(_) | E::InvalidSystem(_) | E::InvalidConfiguration(_) => 1,
                _ => 2,
            };
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Ground(a) => ground(&a),
        Command::Pn(a) => pn(&a),
        Command::QuenchSweep(a) => quench_sweep(&a),
        Command::Dynamics(a) => dynamics(&a),
        Command::Collective(a) => collective(&a),
        Command::Efield(a) => efield(&a),
        Command::Report(a) => report(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn load(path: &Path) -> Result<Scenario> {
    Scenario::from_path(path).with_context(|| format!("reading {}", path.display()))
}

/// Output directory plus the list of files written into it.
struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        let path = self.dir.join(name);
        let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        self.files.push(name.to_string());
        Ok(BufWriter::new(f))
    }

    fn manifest(mut self, command: &str, seed: Option<u64>, config: serde_json::Value) -> Result<()> {
        self.files.sort();
        let mut m = Manifest::new(command, seed, &config);
        m.tool = "kinksim".into();
        m.outputs = self.files.clone();
        let mut w = self.create("manifest.json")?;
        m.write(&mut w)?;
        w.flush()?;
        Ok(())
    }
}

fn ground(a: &Common) -> Result<()> {
    let s = load(&a.config)?;
    let sys = s.system.build_static()?;
    let q = relaxed_zigzag(&sys)?;
    let r = detect(&q, None);
    let modes = normal_modes(&sys, &q)?;
    let nu_c = critical_nu_x(&sys.clone().with_e_field(0.0))?;
    let u = sys.units();

    let mut out = Outputs::new(&a.out)?;
    let mut w = out.create("ground.tsv")?;
    writeln!(w, "ion\tmass_amu\tz_m\tx_m")?;
    for j in 0..q.len() {
        writeln!(
            w,
            "{j}\t{}\t{:.12e}\t{:.12e}",
            sys.masses[j],
            u.length_to_si(q.z[j]),
            u.length_to_si(q.x[j])
        )?;
    }
    w.flush()?;
    let mut w = out.create("modes.tsv")?;
    writeln!(w, "mode\tfrequency_hz")?;
    for (k, f) in modes.frequencies_hz.iter().enumerate() {
        writeln!(w, "{k}\t{f:.6}")?;
    }
    w.flush()?;

    println!("structure        {:?}", r.structure);
    println!("central spacing  {:.3} um", u.length_to_si(central_spacing(&q)) * 1e6);
    println!("lowest mode      {:.1} Hz", modes.lowest());
    println!("critical nu_x    {:.1} Hz", nu_c);
    out.manifest("ground", None, json!({ "scenario": s }))
}

fn functional_for(
    kind: KindArg,
    kink: &kink_core::model::Configuration,
    zz: &kink_core::model::Configuration,
) -> CentreFunctional {
    let odd = match kind {
        KindArg::Odd => true,
        KindArg::Extended => false,
        KindArg::Auto => detect(kink, Some(zz))
            .kinks
            .first()
            .is_some_and(|k| k.kind == KinkKind::Odd),
    };
    if odd {
        CentreFunctional::Odd
    } else {
        CentreFunctional::extended(zz)
    }
}

/// PN curve of the scenario's static system; with defects present the lower
/// envelope of branches seeded at every defect.
fn trace(sys: &IonSystem, kind: KindArg, step: f64) -> Result<PnCurve> {
    let zz = relaxed_zigzag(sys)?;
    let kink = seed_kink(sys, &zz)?;
    let g = functional_for(kind, &kink, &zz);
    let b = central_spacing(&zz);
    let (lo, hi) = (
        zz.z.iter().copied().fold(f64::INFINITY, f64::min),
        zz.z.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    );
    let mut opts = TraceOptions::for_spacing(b, lo, hi);
    opts.dx = step * b;
    opts.min_dx = opts.dx / 16.0;
    let reference_mass = sys.reference_mass;
    let sites: Vec<usize> = (0..sys.n_ions()).filter(|&j| sys.masses[j] != reference_mass).collect();
    let curve = if sites.is_empty() {
        trace_adiabatic(sys, &kink, &zz, &g, &opts)?
    } else {
        let mut seeds = vec![kink];
        seeds.extend(seeds_at_sites(sys, &zz, &sites)?);
        trace_envelope(sys, &zz, &g, &seeds, &opts)?
    };
    Ok(curve)
}

fn pn(a: &PnArgs) -> Result<()> {
    let s = load(&a.common.config)?;
    if !(a.step > 0.0 && a.step <= 1.0) {
        return Err(kink_core::Error::Config(format!("--step {} outside (0, 1]", a.step)).into());
    }
    let sys = s.system.build_static()?;
    let curve = trace(&sys, a.kind, a.step)?;
    let u = curve.units();
    let b = central_spacing(&curve.reference_config);

    let mut out = Outputs::new(&a.common.out)?;
    let mut w = out.create("pn_curve.tsv")?;
    curve.write_tsv(&mut w)?;
    w.flush()?;

    let (lo, hi) = curve.x_range();
    println!("kink kind        {:?}", curve.kink_kind);
    println!(
        "samples          {} over [{:.2}, {:.2}] um",
        curve.samples.len(),
        u.length_to_si(lo) * 1e6,
        u.length_to_si(hi) * 1e6
    );
    match pn_barriers(&curve) {
        Ok(bs) => {
            let max = bs.iter().map(|b| b.height_kelvin).fold(0.0, f64::max);
            println!("largest barrier  {max:.4e} K");
        }
        Err(e) => println!("barriers         none ({e})"),
    }
    println!(
        "trapping barrier {:.4e} K",
        u.energy_to_kelvin(trapping_barrier(&curve))
    );
    for w in wells(&curve) {
        println!("well at {:+.3} b  depth {:.4e} K", w.x / b, u.energy_to_kelvin(w.depth));
    }
    out.manifest(
        "pn",
        None,
        json!({ "scenario": s, "kind": format!("{:?}", a.kind).to_lowercase(), "step": a.step }),
    )
}

fn quench_sweep(a: &SweepArgs) -> Result<()> {
    let s = load(&a.common.config)?;
    let q = s
        .quench
        .as_ref()
        .ok_or_else(|| kink_core::Error::Config(format!("scenario '{}' has no [quench] table", s.name)))?;
    let records = run_scenario(&s, a.workers)?;

    let mut out = Outputs::new(&a.common.out)?;
    let mut w = out.create("trials.jsonl")?;
    write_jsonl(&records, &mut w)?;
    w.flush()?;
    let tables = write_tables(&mut out, &s, q.nu_x_end_hz, &records);
    out.manifest("quench-sweep", Some(s.master_seed), json!({ "scenario": s }))?;
    tables?;
    check_trials(&records)
}

/// Density and histogram tables for a set of records.
fn write_tables(out: &mut Outputs, s: &Scenario, nu_x_end: f64, records: &[TrialRecord]) -> Result<()> {
    let sys = s.system.build(nu_x_end)?;
    let half = centre_half_width(&sys, &relaxed_zigzag(&sys)?);
    let mut estimates = density_curve(records, Stage::Created)?;
    estimates.extend(density_curve(records, Stage::Survived)?);
    let mut w = out.create("density_vs_tauq.tsv")?;
    write_density_tsv(&estimates, &mut w)?;
    w.flush()?;
    let h = spatial_histogram(records, half);
    let mut w = out.create("spatial_histogram.tsv")?;
    write_histogram_tsv(&h, &mut w)?;
    w.flush()?;

    println!("tau_q_us  created            survived           failed");
    let n = estimates.len() / 2;
    for (c, v) in estimates[..n].iter().zip(&estimates[n..]) {
        println!(
            "{:>7.1}  {:.3} [{:.3}, {:.3}]  {:.3} [{:.3}, {:.3}]  {}",
            c.tau_q * 1e6,
            c.d,
            c.ci95.0,
            c.ci95.1,
            v.d,
            v.ci95.0,
            v.ci95.1,
            c.n_failed
        );
    }
    println!(
        "surviving kinks  left {}  centre {}  right {}",
        h.left, h.centre, h.right
    );
    Ok(())
}

fn check_trials(records: &[TrialRecord]) -> Result<()> {
    let failed: Vec<&TrialRecord> = records.iter().filter(|r| r.status != TrialStatus::Ok).collect();
    if let Some(first) = failed.first() {
        bail!(NumericalFailure(format!(
            "{} of {} trials failed; first is trial {} (tau_q {:.1} us, {:?}): {}",
            failed.len(),
            records.len(),
            first.trial,
            first.tau_q * 1e6,
            first.status,
            first.message.as_deref().unwrap_or("")
        )));
    }
    Ok(())
}

/// Static system, kink-free crystal, centre functional and kink at rest at X0.
struct Release {
    sys: IonSystem,
    zz: kink_core::model::Configuration,
    g: CentreFunctional,
    start: kink_core::model::Configuration,
    x0: f64,
}

fn release(s: &Scenario, x0_um: f64) -> Result<Release> {
    let sys = s.system.build_static()?;
    let zz = relaxed_zigzag(&sys)?;
    let kink = seed_kink(&sys, &zz)?;
    let g = functional_for(KindArg::Auto, &kink, &zz);
    let x0 = sys.units().length_from_si(x0_um * 1e-6);
    let start = constrained_minimize(&sys, &kink, &g, x0)?.config;
    Ok(Release { sys, zz, g, start, x0 })
}

fn sampling(a: &MotionArgs) -> Result<(f64, usize)> {
    if !(a.sample_ns > 0.0 && a.duration_us > 0.0) {
        return Err(kink_core::Error::Config("duration and sampling interval must be positive".into()).into());
    }
    let dt = a.sample_ns * 1e-9;
    Ok((dt, (a.duration_us * 1e-6 / dt).round() as usize))
}

fn dynamics(a: &MotionArgs) -> Result<()> {
    let s = load(&a.common.config)?;
    let (sample, n_samples) = sampling(a)?;
    let r = release(&s, a.x0_um)?;
    let u = r.sys.units();
    let mut params: LangevinParams = s.langevin.params();
    if let Some(t) = a.temperature_k {
        params.temperature = t;
    }
    let stride = ((sample / params.dt).round() as usize).max(1);
    let mut p = Propagator::new(&r.sys, DynamicsState::at_rest(&r.start, s.master_seed, 0))?
        .with_schedule(RampSchedule::constant(r.sys.nu_x, a.duration_us * 1e-6))?;
    let th = match a.temperature_k {
        Some(_) => Some(Thermostat::new(&params, p.masses(), p.units())?),
        None => None,
    };
    let h = u.time_from_si(params.dt);
    let (mut ts, mut xs, mut frames) = (Vec::new(), Vec::new(), Vec::new());
    for k in 0..n_samples * stride {
        if k % stride == 0 {
            ts.push(p.state.time_si(&u));
            xs.push(r.g.of_config(&p.state.config().sorted().0)?);
            if a.frames {
                frames.push(p.frame());
            }
        }
        match &th {
            Some(th) => p.step_langevin(th)?,
            None => p.step_nve(h)?,
        }
    }

    let mut out = Outputs::new(&a.common.out)?;
    let mut w = out.create("kink_trajectory.tsv")?;
    writeln!(w, "t_s\tX_m")?;
    for (t, x) in ts.iter().zip(&xs) {
        writeln!(w, "{t:.12e}\t{:.12e}", u.length_to_si(*x))?;
    }
    w.flush()?;
    if a.frames {
        let mut w = out.create("frames.tsv")?;
        write_frames(&frames, &mut w)?;
        w.flush()?;
    }
    report_motion(&xs, sample, u.length_to_si(1.0), &r)?;
    out.manifest(
        "dynamics",
        Some(s.master_seed),
        json!({
            "scenario": s,
            "x0_um": a.x0_um,
            "duration_us": a.duration_us,
            "sample_ns": a.sample_ns,
            "temperature_k": a.temperature_k,
        }),
    )
}

fn report_motion(xs: &[f64], sample: f64, length_m: f64, r: &Release) -> Result<()> {
    let f = dominant_frequency(xs, sample, 1e3)?;
    println!("dominant frequency  {:.3} kHz", f * 1e-3);
    println!("rms of X            {:.3} um", rms(xs) * length_m * 1e6);
    println!("rms of X / b        {:.3}", rms(xs) / central_spacing(&r.zz));
    Ok(())
}

fn collective(a: &MotionArgs) -> Result<()> {
    let s = load(&a.common.config)?;
    if a.temperature_k.is_some() || a.frames {
        return Err(kink_core::Error::Config("the reduced model is undamped and has no frames".into()).into());
    }
    let (sample, _) = sampling(a)?;
    let r = release(&s, a.x0_um)?;
    let u = r.sys.units();
    let curve = trace(&r.sys, KindArg::Auto, 0.05)?;
    let traj = KinkTrajectory::from_curve(&curve)?;
    let tr = integrate_bare_kink(
        &traj,
        r.x0,
        0.0,
        u.time_from_si(a.duration_us * 1e-6),
        u.time_from_si(sample),
    )?;

    let mut out = Outputs::new(&a.common.out)?;
    let mut w = out.create("pn_curve.tsv")?;
    curve.write_tsv(&mut w)?;
    w.flush()?;
    let mut w = out.create("kink_trajectory.tsv")?;
    write_reduced(&tr, &u, &mut w)?;
    w.flush()?;
    let xs: Vec<f64> = tr.iter().map(|s| s.x).collect();
    report_motion(&xs, sample, u.length_to_si(1.0), &r)?;
    out.manifest(
        "collective",
        None,
        json!({ "scenario": s, "x0_um": a.x0_um, "duration_us": a.duration_us, "sample_ns": a.sample_ns }),
    )
}

fn efield(a: &Common) -> Result<()> {
    let s = load(&a.config)?;
    let Some(protocol) = &s.efield else {
        return Err(kink_core::Error::Config(format!("scenario '{}' has no [efield] table", s.name)).into());
    };
    let mut failures: Vec<String> = Vec::new();
    let result = match protocol {
        FieldProtocol::Drag {
            site,
            mass_amu,
            fields_v_per_m,
            options,
        } => {
            let (threshold, outcomes) =
                drag_threshold(&s.system, *site, *mass_amu, fields_v_per_m, options, s.master_seed)?;
            let mut fields = fields_v_per_m.clone();
            fields.sort_by(f64::total_cmp);
            let runs: Vec<serde_json::Value> = fields
                .iter()
                .zip(&outcomes)
                .map(|(e, o)| match o {
                    Ok(o) => json!(o),
                    Err(err) => {
                        failures.push(format!("field {e} V/m: {err}"));
                        json!({ "e_field": e, "error": err.to_string() })
                    }
                })
                .collect();
            match threshold {
                Some(t) => println!("drag threshold  {t} V/m"),
                None => println!("drag threshold  not reached"),
            }
            json!({ "protocol": "drag", "threshold_v_per_m": threshold, "runs": runs })
        }
        FieldProtocol::Creation {
            site,
            mass_amu,
            options,
        } => {
            let o = field_ramp_creation(&s.system, *site, *mass_amu, options)?;
            for snap in &o.timeline {
                println!(
                    "t {:>8.2} us  E {:>7.2} V/m  kinks {}",
                    snap.t * 1e6,
                    snap.e_field,
                    snap.n_kinks
                );
            }
            println!(
                "transient pair {}  single kink at molecule {}",
                o.transient_pair, o.single_kink_at_molecule
            );
            json!({ "protocol": "creation", "outcome": o })
        }
        FieldProtocol::Parity {
            sites,
            mass_amu,
            e_field_v_per_m,
            tau_q_us,
            nu_x_start_hz,
            nu_x_end_hz,
        } => {
            let schedule = RampSchedule::quench(*nu_x_start_hz, *nu_x_end_hz, tau_q_us / 1e6);
            let params = s.langevin.params();
            let o = parity_quench(
                &s.system,
                *sites,
                *mass_amu,
                *e_field_v_per_m,
                &schedule,
                &params,
                s.trials,
                s.master_seed,
            )?;
            for (k, n) in o.kinks.iter().enumerate() {
                if n.is_none() {
                    failures.push(format!("trial {k}"));
                }
            }
            println!(
                "ions between {}  fraction with kink {:.3}",
                o.ions_between, o.fraction_with_kink
            );
            json!({ "protocol": "parity", "outcome": o })
        }
    };

    let mut out = Outputs::new(&a.out)?;
    let mut w = out.create("efield.json")?;
    writeln!(w, "{}", serde_json::to_string_pretty(&result)?)?;
    w.flush()?;
    out.manifest("efield", Some(s.master_seed), json!({ "scenario": s }))?;
    if let Some(first) = failures.first() {
        bail!(NumericalFailure(format!(
            "{} runs failed; first: {first}",
            failures.len()
        )));
    }
    Ok(())
}

fn report(a: &ReportArgs) -> Result<()> {
    let manifest_path = a.dir.join("manifest.json");
    let text = fs::read_to_string(&manifest_path).with_context(|| format!("reading {}", manifest_path.display()))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| kink_core::Error::Config(format!("{}: {e}", manifest_path.display())))?;
    if manifest.command != "quench-sweep" {
        return Err(kink_core::Error::Config(format!(
            "{} holds a '{}' run, not a sweep",
            a.dir.display(),
            manifest.command
        ))
        .into());
    }
    let s: Scenario = serde_json::from_value(manifest.config["scenario"].clone())
        .map_err(|e| kink_core::Error::Config(format!("scenario in manifest: {e}")))?;
    let q = s
        .quench
        .as_ref()
        .ok_or_else(|| kink_core::Error::Config("sweep manifest without [quench]".into()))?;
    let trials_path = a.dir.join("trials.jsonl");
    let text = fs::read_to_string(&trials_path).with_context(|| format!("reading {}", trials_path.display()))?;
    let mut records = text
        .lines()
        .enumerate()
        .map(|(k, l)| {
            serde_json::from_str::<TrialRecord>(l)
                .map_err(|e| kink_core::Error::Config(format!("{} line {}: {e}", trials_path.display(), k + 1)))
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let mut spec = s.clone();
    if a.mirror {
        records = mirrored(&records, s.system.n_ions);
        for d in &mut spec.system.defects {
            d.site = s.system.n_ions - 1 - d.site;
        }
    }
    match &a.out {
        Some(dir) => {
            let mut out = Outputs::new(dir)?;
            write_tables(&mut out, &spec, q.nu_x_end_hz, &records)?;
            out.manifest(
                "report",
                Some(s.master_seed),
                json!({ "scenario": spec, "source": a.dir.display().to_string(), "mirror": a.mirror }),
            )
        }
        None => print_tables(&spec, q.nu_x_end_hz, &records),
    }
}

fn print_tables(s: &Scenario, nu_x_end: f64, records: &[TrialRecord]) -> Result<()> {
    let sys = s.system.build(nu_x_end)?;
    let half = centre_half_width(&sys, &relaxed_zigzag(&sys)?);
    for stage in [Stage::Created, Stage::Survived] {
        let mut buf = Vec::new();
        write_density_tsv(&density_curve(records, stage)?, &mut buf)?;
        print!("{}", String::from_utf8_lossy(&buf));
    }
    let mut buf = Vec::new();
    write_histogram_tsv(&spatial_histogram(records, half), &mut buf)?;
    print!("{}", String::from_utf8_lossy(&buf));
    Ok(())
}
