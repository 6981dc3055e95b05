//! Scenario files, parallel quench ensembles, kink-density statistics and
//! the dc-field protocols.
//!
//! Every trial draws its noise from the master seed and its own stream
//! index, so an ensemble gives the same records for any worker count.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    run_quench, thermalize, DefectSpec, DynamicsState, LangevinParams, Propagator, QuenchOptions, RampSchedule,
    RampShape, Thermostat, TrialRecord, TrialStatus, DEFAULT_DT, DEFAULT_ETA, DEFAULT_QUENCH_TEMPERATURE,
};
use crate::error::{Error, Result};
use crate::kinkdetect::{detect, KinkReport};
use crate::model::{linear_chain, AxialMassScaling, Configuration, IonSystem, Potential};
use crate::statics::{central_spacing, relaxed_zigzag, seed_kink};
use crate::units::YB172_MASS_AMU;

/// Two-sided 95% normal quantile.
const Z95: f64 = 1.959_963_984_540_054;

fn default_nu_z() -> f64 {
    24.6e3
}

/// Ion system as written in a scenario file. All values SI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub n_ions: usize,
    /// Per-ion masses in amu; all ions are 172 when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub masses: Option<Vec<f64>>,
    #[serde(default = "default_nu_z")]
    pub nu_z_hz: f64,
    /// Transverse trap frequency for static runs; quenches override it.
    #[serde(default)]
    pub nu_x_hz: Option<f64>,
    #[serde(default)]
    pub e_field_v_per_m: f64,
    #[serde(default)]
    pub axial_mass_scaling: AxialMassScaling,
    #[serde(default)]
    pub defects: Vec<DefectSpec>,
}

impl SystemSpec {
    pub fn uniform(n_ions: usize) -> Self {
        SystemSpec {
            n_ions,
            masses: None,
            nu_z_hz: default_nu_z(),
            nu_x_hz: None,
            e_field_v_per_m: 0.0,
            axial_mass_scaling: AxialMassScaling::Paper,
            defects: Vec::new(),
        }
    }

    pub fn with_defect(mut self, site: usize, mass: f64) -> Self {
        self.defects.push(DefectSpec { site, mass });
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_ions == 0 {
            return Err(Error::Config("n_ions must be at least 1".into()));
        }
        if let Some(m) = &self.masses {
            if m.len() != self.n_ions {
                return Err(Error::Config(format!("{} masses for {} ions", m.len(), self.n_ions)));
            }
        }
        for d in &self.defects {
            if d.site >= self.n_ions {
                return Err(Error::Config(format!(
                    "defect site {} outside 0..{} (sites count from the left end, starting at 0)",
                    d.site, self.n_ions
                )));
            }
        }
        Ok(())
    }

    /// Build the system at transverse frequency `nu_x`.
    pub fn build(&self, nu_x: f64) -> Result<IonSystem> {
        self.validate()?;
        let masses = self.masses.clone().unwrap_or_else(|| vec![YB172_MASS_AMU; self.n_ions]);
        let sys = IonSystem::new(masses, self.nu_z_hz, nu_x)?
            .with_e_field(self.e_field_v_per_m)
            .with_scaling(self.axial_mass_scaling);
        DefectSpec::apply(&self.defects, sys)
    }

    /// Build at the configured static `nu_x_hz`.
    pub fn build_static(&self) -> Result<IonSystem> {
        let nu_x = self
            .nu_x_hz
            .ok_or_else(|| Error::Config("system.nu_x_hz is required here".into()))?;
        self.build(nu_x)
    }
}

/// Trap ramp of a quench sweep; one ensemble per `tau_q_us` entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuenchSpec {
    pub nu_x_start_hz: f64,
    pub nu_x_end_hz: f64,
    pub tau_q_us: Vec<f64>,
    #[serde(default)]
    pub shape: RampShape,
    /// Post-ramp hold; by default the run lasts until the survival time.
    #[serde(default)]
    pub hold_us: Option<f64>,
    /// `[t_us, V/m]` breakpoints of a field applied during the quench.
    #[serde(default)]
    pub e_field: Vec<[f64; 2]>,
}

impl QuenchSpec {
    pub fn schedule(&self, tau_q: f64) -> RampSchedule {
        let mut s = RampSchedule::quench(self.nu_x_start_hz, self.nu_x_end_hz, tau_q);
        s.shape = self.shape;
        if let Some(h) = self.hold_us {
            s.hold_time = h / 1e6;
        }
        if !self.e_field.is_empty() {
            s = s.with_field(self.e_field.iter().map(|p| (p[0] / 1e6, p[1])).collect());
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LangevinSpec {
    #[serde(default = "LangevinSpec::default_temperature")]
    pub temperature_k: f64,
    #[serde(default = "LangevinSpec::default_eta")]
    pub eta_kg_per_s: f64,
    #[serde(default = "LangevinSpec::default_dt")]
    pub dt_ns: f64,
    /// Langevin equilibration after harmonic sampling of the start state.
    #[serde(default)]
    pub thermalize_us: f64,
}

impl LangevinSpec {
    fn default_temperature() -> f64 {
        DEFAULT_QUENCH_TEMPERATURE
    }
    fn default_eta() -> f64 {
        DEFAULT_ETA
    }
    fn default_dt() -> f64 {
        DEFAULT_DT * 1e9
    }

    pub fn params(&self) -> LangevinParams {
        LangevinParams {
            temperature: self.temperature_k,
            eta: self.eta_kg_per_s,
            dt: self.dt_ns * 1e-9,
        }
    }
}

impl Default for LangevinSpec {
    fn default() -> Self {
        LangevinSpec {
            temperature_k: Self::default_temperature(),
            eta_kg_per_s: Self::default_eta(),
            dt_ns: Self::default_dt(),
            thermalize_us: 0.0,
        }
    }
}

/// A named, seeded experiment: which system, which schedules, how many trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub master_seed: u64,
    /// Trials per quench time.
    #[serde(default = "Scenario::default_trials")]
    pub trials: usize,
    pub system: SystemSpec,
    #[serde(default)]
    pub quench: Option<QuenchSpec>,
    #[serde(default)]
    pub langevin: LangevinSpec,
    #[serde(default)]
    pub efield: Option<FieldProtocol>,
}

impl Scenario {
    fn default_trials() -> usize {
        200
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let s: Scenario = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        self.system.validate()?;
        self.langevin
            .params()
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        if let Some(q) = &self.quench {
            if q.tau_q_us.is_empty() {
                return Err(Error::Config("quench.tau_q_us is empty".into()));
            }
            for &t in &q.tau_q_us {
                q.schedule(t / 1e6)
                    .validate()
                    .map_err(|e| Error::Config(e.to_string()))?;
            }
        }
        if let Some(p) = &self.efield {
            p.validate(&self.system)?;
        }
        Ok(())
    }

    fn quench_spec(&self) -> Result<&QuenchSpec> {
        self.quench
            .as_ref()
            .ok_or_else(|| Error::Config(format!("scenario '{}' has no [quench] table", self.name)))
    }
}

/// Run every trial of a quench sweep on `workers` threads. Trial `k` of the
/// `i`-th quench time uses stream `i * trials + k`; records come back sorted
/// by that index. Failed trials are recorded, not propagated.
pub fn run_scenario(s: &Scenario, workers: usize) -> Result<Vec<TrialRecord>> {
    s.validate()?;
    let q = s.quench_spec()?;
    let sys = s.system.build(q.nu_x_start_hz)?;
    let reference = relaxed_zigzag(&sys.clone().with_nu_x(q.nu_x_end_hz))?;
    let start = linear_chain(&sys)?;
    let params = s.langevin.params();
    let warmup = s.langevin.thermalize_us / 1e6;
    let units = sys.units();
    let opts = QuenchOptions {
        frame_stride: None,
        reference: Some(reference),
    };

    let tasks: Vec<(u64, f64)> = q
        .tau_q_us
        .iter()
        .enumerate()
        .flat_map(|(i, &t)| (0..s.trials).map(move |k| ((i * s.trials + k) as u64, t / 1e6)))
        .collect();
    let one = |&(trial, tau_q): &(u64, f64)| {
        let schedule = q.schedule(tau_q);
        let outcome = thermalize(
            &sys,
            &DynamicsState::at_rest(&start, s.master_seed, trial),
            &params,
            warmup,
        )
        .and_then(|st| run_quench(&sys, &st, &schedule, &params, &opts));
        TrialRecord::from_outcome(s.master_seed, trial, &schedule, &s.system.defects, &outcome, &units)
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let mut records: Vec<TrialRecord> = pool.install(|| tasks.par_iter().map(one).collect());
    records.sort_by_key(|r| r.trial);
    Ok(records)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Created,
    Survived,
}

/// Mean kinks per trial at one quench time with a normal 95% interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityEstimate {
    pub tau_q: f64,
    pub d: f64,
    pub ci95: (f64, f64),
    pub n_trials: usize,
    /// Trials that ended in ion loss or instability; excluded from `d`.
    pub n_failed: usize,
    pub stage: Stage,
}

impl DensityEstimate {
    /// Whether the two intervals overlap.
    pub fn overlaps(&self, other: &DensityEstimate) -> bool {
        self.ci95.0 <= other.ci95.1 && other.ci95.0 <= self.ci95.1
    }
}

/// Mean and normal interval `d ± 1.96 s/√n`, clipped at zero. Identical
/// counts give a zero-width interval.
pub fn mean_ci(counts: &[usize]) -> (f64, (f64, f64)) {
    let n = counts.len() as f64;
    let d = counts.iter().sum::<usize>() as f64 / n;
    if counts.len() < 2 {
        return (d, (d, d));
    }
    let var = counts.iter().map(|&c| (c as f64 - d).powi(2)).sum::<f64>() / (n - 1.0);
    let half = Z95 * (var / n).sqrt();
    (d, ((d - half).max(0.0), d + half))
}

/// Wilson score interval for `k` successes in `n` trials.
pub fn wilson_interval(k: usize, n: usize) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let (k, n) = (k as f64, n as f64);
    let p = k / n;
    let z2 = Z95 * Z95;
    let centre = (p + z2 / (2.0 * n)) / (1.0 + z2 / n);
    let half = Z95 * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / (1.0 + z2 / n);
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// Per-τ_Q kink density for one stage, ascending in τ_Q.
pub fn density_curve(records: &[TrialRecord], stage: Stage) -> Result<Vec<DensityEstimate>> {
    let mut groups: BTreeMap<u64, Vec<&TrialRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(r.tau_q.to_bits()).or_default().push(r);
    }
    let mut out: Vec<DensityEstimate> = Vec::with_capacity(groups.len());
    for (bits, group) in groups {
        let tau_q = f64::from_bits(bits);
        let counts: Vec<usize> = group
            .iter()
            .filter(|r| r.status == TrialStatus::Ok)
            .map(|r| match stage {
                Stage::Created => r.n_kinks_created,
                Stage::Survived => r.n_kinks_survived,
            })
            .collect();
        if counts.is_empty() {
            return Err(Error::EmptyGroup(tau_q));
        }
        let (d, ci95) = mean_ci(&counts);
        out.push(DensityEstimate {
            tau_q,
            d,
            ci95,
            n_trials: counts.len(),
            n_failed: group.len() - counts.len(),
            stage,
        });
    }
    out.sort_by(|a, b| a.tau_q.total_cmp(&b.tau_q));
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpatialHistogram {
    pub left: usize,
    pub centre: usize,
    pub right: usize,
}

impl SpatialHistogram {
    pub fn total(&self) -> usize {
        self.left + self.centre + self.right
    }

    pub fn off_centre_fraction(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            t => (self.left + self.right) as f64 / t as f64,
        }
    }
}

/// Half-width of the middle three lattice sites, m, for a kink-free crystal
/// given in scaled units.
pub fn centre_half_width(sys: &IonSystem, zigzag: &Configuration) -> f64 {
    sys.units().length_to_si(1.5 * central_spacing(zigzag))
}

/// Classify surviving kinks of successful trials: centre when within
/// `half_width` (m) of the trap centre, otherwise left or right.
pub fn spatial_histogram(records: &[TrialRecord], half_width: f64) -> SpatialHistogram {
    let mut h = SpatialHistogram::default();
    for r in records.iter().filter(|r| r.status == TrialStatus::Ok) {
        for &x in &r.centres_survived {
            if x.abs() <= half_width {
                h.centre += 1;
            } else if x < 0.0 {
                h.left += 1;
            } else {
                h.right += 1;
            }
        }
    }
    h
}

/// Records of the mirror-image experiment: defect sites reflected about the
/// chain centre and kink positions negated.
pub fn mirrored(records: &[TrialRecord], n_ions: usize) -> Vec<TrialRecord> {
    records
        .iter()
        .map(|r| {
            let mut m = r.clone();
            for d in &mut m.defects {
                d.site = n_ions - 1 - d.site;
            }
            m.centres_created.iter_mut().for_each(|x| *x = -*x);
            m.centres_survived.iter_mut().for_each(|x| *x = -*x);
            m
        })
        .collect()
}

pub fn write_jsonl<W: Write>(records: &[TrialRecord], mut out: W) -> Result<()> {
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::Io(e.to_string()))?;
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn write_density_tsv<W: Write>(estimates: &[DensityEstimate], mut out: W) -> Result<()> {
    writeln!(out, "tau_q_s\tstage\td\tci95_lo\tci95_hi\tn_trials\tn_failed")?;
    for e in estimates {
        let stage = match e.stage {
            Stage::Created => "created",
            Stage::Survived => "survived",
        };
        writeln!(
            out,
            "{:.6e}\t{stage}\t{:.6}\t{:.6}\t{:.6}\t{}\t{}",
            e.tau_q, e.d, e.ci95.0, e.ci95.1, e.n_trials, e.n_failed
        )?;
    }
    Ok(())
}

pub fn write_histogram_tsv<W: Write>(h: &SpatialHistogram, mut out: W) -> Result<()> {
    writeln!(out, "region\tcount")?;
    writeln!(out, "left\t{}", h.left)?;
    writeln!(out, "centre\t{}", h.centre)?;
    writeln!(out, "right\t{}", h.right)?;
    Ok(())
}

/// Resolved configuration written beside every set of outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub master_seed: Option<u64>,
    /// The fully resolved inputs of the run.
    pub config: serde_json::Value,
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new<T: Serialize>(command: &str, master_seed: Option<u64>, config: &T) -> Self {
        Manifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            master_seed,
            config: serde_json::to_value(config).expect("config serializes"),
            outputs: Vec::new(),
        }
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.to_string()))?;
        writeln!(out, "{text}")?;
        Ok(())
    }
}

// --- dc field protocols --------------------------------------------------

/// Ions further than this many median zigzag amplitudes from the
/// field-shifted axis are treated as outside the crystal.
pub const DECOUPLED_FACTOR: f64 = 3.0;

/// Kink report in the frame of the field-shifted crystal: the uniform shift
/// of a reference-mass ion is removed before the rows are assigned. With
/// `drop_decoupled`, ions pushed far out of the crystal are left out as well,
/// which is what an image of the fluorescing ions shows: a molecule that has
/// left its site appears as the defect it leaves behind in the lattice.
/// Returns the report (centres in scaled units) and the dropped identities.
pub fn field_frame_report(q: &Configuration, pot: &Potential, drop_decoupled: bool) -> (KinkReport, Vec<usize>) {
    let shift = pot.field() / pot.beta2();
    let x: Vec<f64> = q.x.iter().map(|x| x - shift).collect();
    let mut ax: Vec<f64> = x.iter().map(|v| v.abs()).collect();
    ax.sort_by(f64::total_cmp);
    let med = ax[ax.len() / 2];
    let (keep, dropped): (Vec<usize>, Vec<usize>) =
        (0..q.len()).partition(|&j| !drop_decoupled || med == 0.0 || x[j].abs() < DECOUPLED_FACTOR * med);
    let sub = Configuration {
        z: keep.iter().map(|&j| q.z[j]).collect(),
        x: keep.iter().map(|&j| x[j]).collect(),
    };
    (detect(&sub, None), dropped)
}

/// Field sign that pushes ion `site` further out on its own side of the zigzag.
fn outward_sign(zigzag: &Configuration, site: usize) -> f64 {
    let mean = zigzag.x.iter().sum::<f64>() / zigzag.len() as f64;
    if zigzag.x[site] >= mean {
        1.0
    } else {
        -1.0
    }
}

/// One sampled instant of a field protocol, SI units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub t: f64,
    pub e_field: f64,
    pub n_kinks: usize,
    pub centres: Vec<f64>,
    /// Axial position of each tracked molecule.
    pub molecules_z: Vec<f64>,
}

fn snapshot(p: &Propagator, sites: &[usize], drop_decoupled: bool) -> Result<Snapshot> {
    let u = *p.units();
    let q = p.inherent_structure()?;
    let (r, _) = field_frame_report(&q, p.potential(), drop_decoupled);
    let s = Snapshot {
        t: p.state.time_si(&u),
        e_field: u.field_to_si(p.potential().field()),
        n_kinks: r.n_kinks(),
        centres: r.kinks.iter().map(|k| u.length_to_si(k.centre)).collect(),
        molecules_z: sites.iter().map(|&j| u.length_to_si(q.z[j])).collect(),
    };
    Ok(s)
}

/// Which field protocol a scenario runs, with its parameters (SI, unit-suffixed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "protocol", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldProtocol {
    /// Kink seeded at the chain centre, field ramped up, heating pulse, cooling;
    /// scanned over field amplitudes to find the drag threshold.
    Drag {
        site: usize,
        mass_amu: f64,
        fields_v_per_m: Vec<f64>,
        #[serde(default)]
        options: DragOptions,
    },
    /// Field ramped in the zigzag phase with one molecule.
    Creation {
        site: usize,
        mass_amu: f64,
        #[serde(default)]
        options: CreationOptions,
    },
    /// Constant field during a quench with two molecules.
    Parity {
        sites: [usize; 2],
        mass_amu: f64,
        e_field_v_per_m: f64,
        tau_q_us: f64,
        nu_x_start_hz: f64,
        nu_x_end_hz: f64,
    },
}

impl FieldProtocol {
    fn validate(&self, sys: &SystemSpec) -> Result<()> {
        let check = |site: usize| {
            if site >= sys.n_ions {
                Err(Error::Config(format!("molecule site {site} outside 0..{}", sys.n_ions)))
            } else {
                Ok(())
            }
        };
        match self {
            FieldProtocol::Drag {
                site, fields_v_per_m, ..
            } => {
                check(*site)?;
                if fields_v_per_m.is_empty() {
                    return Err(Error::Config("drag protocol needs at least one field".into()));
                }
                Ok(())
            }
            FieldProtocol::Creation { site, .. } => check(*site),
            FieldProtocol::Parity { sites, .. } => {
                check(sites[0])?;
                check(sites[1])?;
                if sites[0] == sites[1] {
                    return Err(Error::Config("parity protocol needs two distinct sites".into()));
                }
                Ok(())
            }
        }
    }
}

/// Timings and temperatures of the drag protocol. Heating stands in for the
/// reduced laser detuning of the experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DragOptions {
    pub nu_x_hz: f64,
    pub ramp_us: f64,
    pub settle_us: f64,
    pub heat_us: f64,
    pub heat_temperature_k: f64,
    pub cool_us: f64,
    pub temperature_k: f64,
    /// Seed the kink at the chain centre before the field comes on.
    pub with_kink: bool,
}

impl Default for DragOptions {
    fn default() -> Self {
        DragOptions {
            nu_x_hz: 140e3,
            ramp_us: 100.0,
            settle_us: 50.0,
            heat_us: 200.0,
            heat_temperature_k: 2e-3,
            cool_us: 350.0,
            temperature_k: 0.5e-3,
            with_kink: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DragOutcome {
    pub e_field: f64,
    pub final_state: Snapshot,
    /// The molecule ended within two sites of the centre with a kink within
    /// two sites of it.
    pub dragged: bool,
}

/// Both within two central spacings: molecule of the centre, a kink of the molecule.
fn co_located(mol_z: f64, centres: &[f64], b: f64) -> (bool, bool) {
    let near_kink = centres.iter().any(|c| (c - mol_z).abs() <= 2.0 * b);
    (mol_z.abs() <= 2.0 * b, near_kink)
}

/// Drag protocol at one field amplitude. `base` sets N, ν_z and scaling; the
/// molecule replaces ion `site`.
pub fn drag(
    base: &SystemSpec,
    site: usize,
    mass: f64,
    e_field: f64,
    opts: &DragOptions,
    seed: u64,
) -> Result<DragOutcome> {
    let sys = base.clone().with_defect(site, mass).build(opts.nu_x_hz)?;
    let zz = relaxed_zigzag(&sys)?;
    let b = sys.units().length_to_si(central_spacing(&zz));
    let start = if opts.with_kink {
        seed_kink(&sys, &zz)?
    } else {
        zz.clone()
    };
    let sign = outward_sign(&zz, site);
    let us = 1e-6;
    let t_heat = (opts.ramp_us + opts.settle_us) * us;
    let t_cool = t_heat + opts.heat_us * us;
    let t_end = t_cool + opts.cool_us * us;
    let schedule =
        RampSchedule::constant(opts.nu_x_hz, t_end).with_field(vec![(0.0, 0.0), (opts.ramp_us * us, sign * e_field)]);
    let cold = LangevinParams {
        temperature: opts.temperature_k,
        ..Default::default()
    };
    let hot = LangevinParams {
        temperature: opts.heat_temperature_k,
        ..cold
    };
    let mut p = Propagator::new(&sys, DynamicsState::at_rest(&start, seed, 0))?.with_schedule(schedule)?;
    let th_cold = Thermostat::new(&cold, p.masses(), p.units())?;
    let th_hot = Thermostat::new(&hot, p.masses(), p.units())?;
    let steps = |t: f64| (t / cold.dt).round() as usize;
    for k in 0..steps(t_end) {
        let th = if (steps(t_heat)..steps(t_cool)).contains(&k) {
            &th_hot
        } else {
            &th_cold
        };
        p.step_langevin(th)?;
    }
    // the kink is a defect of the whole crystal here, molecule included
    let snap = snapshot(&p, &[site], false)?;
    let (centred, near) = co_located(snap.molecules_z[0], &snap.centres, b);
    Ok(DragOutcome {
        e_field,
        dragged: centred && near,
        final_state: snap,
    })
}

/// Lowest field of `fields` (scanned in ascending order) at which the drag
/// succeeds, with every outcome. Fields are run in parallel.
pub fn drag_threshold(
    base: &SystemSpec,
    site: usize,
    mass: f64,
    fields: &[f64],
    opts: &DragOptions,
    seed: u64,
) -> Result<(Option<f64>, Vec<Result<DragOutcome>>)> {
    let mut fields = fields.to_vec();
    fields.sort_by(f64::total_cmp);
    let outcomes: Vec<Result<DragOutcome>> = fields
        .par_iter()
        .map(|&e| drag(base, site, mass, e, opts, seed))
        .collect();
    let threshold = outcomes
        .iter()
        .find_map(|o| o.as_ref().ok().filter(|o| o.dragged).map(|o| o.e_field));
    Ok((threshold, outcomes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CreationOptions {
    pub nu_x_hz: f64,
    pub e_max_v_per_m: f64,
    pub ramp_us: f64,
    pub hold_us: f64,
    pub temperature_k: f64,
    pub sample_every_us: f64,
    pub seed: u64,
}

impl Default for CreationOptions {
    fn default() -> Self {
        CreationOptions {
            nu_x_hz: 140e3,
            e_max_v_per_m: 150.0,
            ramp_us: 200.0,
            hold_us: 200.0,
            temperature_k: 0.5e-3,
            sample_every_us: 0.2,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreationOutcome {
    /// Snapshots at every change of the kink count, plus the last one.
    pub timeline: Vec<Snapshot>,
    pub max_kinks: usize,
    /// Some snapshot showed at least two kinks before the final state.
    pub transient_pair: bool,
    /// The final state has exactly one kink within two sites of the molecule.
    pub single_kink_at_molecule: bool,
}

/// Field ramp in the zigzag phase with one molecule, pushing it outward.
pub fn field_ramp_creation(
    base: &SystemSpec,
    site: usize,
    mass: f64,
    opts: &CreationOptions,
) -> Result<CreationOutcome> {
    let sys = base.clone().with_defect(site, mass).build(opts.nu_x_hz)?;
    let zz = relaxed_zigzag(&sys)?;
    let b = sys.units().length_to_si(central_spacing(&zz));
    let sign = outward_sign(&zz, site);
    let us = 1e-6;
    let t_end = (opts.ramp_us + opts.hold_us) * us;
    let schedule = RampSchedule::constant(opts.nu_x_hz, t_end)
        .with_field(vec![(0.0, 0.0), (opts.ramp_us * us, sign * opts.e_max_v_per_m)]);
    let params = LangevinParams {
        temperature: opts.temperature_k,
        ..Default::default()
    };
    let mut p = Propagator::new(&sys, DynamicsState::at_rest(&zz, opts.seed, 0))?.with_schedule(schedule)?;
    let th = Thermostat::new(&params, p.masses(), p.units())?;
    let stride = ((opts.sample_every_us * us / params.dt).round() as usize).max(1);
    let n_steps = (t_end / params.dt).round() as usize;
    let mut timeline: Vec<Snapshot> = Vec::new();
    let mut last = None;
    for k in 1..=n_steps {
        p.step_langevin(&th)?;
        if k % stride == 0 || k == n_steps {
            let snap = snapshot(&p, &[site], true)?;
            if last != Some(snap.n_kinks) || k == n_steps {
                last = Some(snap.n_kinks);
                timeline.push(snap);
            }
        }
    }
    let fin = timeline.last().expect("at least one snapshot").clone();
    let max_kinks = timeline.iter().map(|s| s.n_kinks).max().unwrap_or(0);
    let transient_pair = timeline[..timeline.len() - 1].iter().any(|s| s.n_kinks >= 2);
    let single = fin.n_kinks == 1 && co_located(fin.molecules_z[0], &fin.centres, b).1;
    Ok(CreationOutcome {
        timeline,
        max_kinks,
        transient_pair,
        single_kink_at_molecule: single,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParityOutcome {
    /// Ions strictly between the two molecules in the linear chain.
    pub ions_between: usize,
    /// Kinks at the end of the ramp, one entry per trial; `None` marks a failed trial.
    pub kinks: Vec<Option<usize>>,
    pub fraction_with_kink: f64,
}

/// Quench with a constant field and two molecules. Kinks are counted on the
/// inherent structure at the ramp end in the field frame.
#[allow(clippy::too_many_arguments)]
pub fn parity_quench(
    base: &SystemSpec,
    sites: [usize; 2],
    mass: f64,
    e_field: f64,
    schedule: &RampSchedule,
    params: &LangevinParams,
    trials: usize,
    seed: u64,
) -> Result<ParityOutcome> {
    let mut spec = base.clone().with_defect(sites[0], mass).with_defect(sites[1], mass);
    spec.e_field_v_per_m = e_field;
    let sys = spec.build(schedule.nu_x_start)?;
    let start = crate::statics::minimize_energy(&sys, &linear_chain(&sys)?, crate::statics::DEFAULT_TOL)?;
    let mut sched = schedule.clone();
    sched.hold_time = 0.0;
    let one = |trial: usize| -> Result<usize> {
        let st = thermalize(&sys, &DynamicsState::at_rest(&start, seed, trial as u64), params, 0.0)?;
        let mut p = Propagator::new(&sys, st)?.with_schedule(sched.clone())?;
        let th = Thermostat::new(params, p.masses(), p.units())?;
        for _ in 0..(sched.t_r / params.dt).round() as usize {
            p.step_langevin(&th)?;
        }
        Ok(snapshot(&p, &sites, false)?.n_kinks)
    };
    let kinks: Vec<Option<usize>> = (0..trials).into_par_iter().map(|t| one(t).ok()).collect();
    let ok: Vec<usize> = kinks.iter().flatten().copied().collect();
    let with = ok.iter().filter(|&&k| k > 0).count();
    Ok(ParityOutcome {
        ions_between: sites[0].abs_diff(sites[1]).saturating_sub(1),
        fraction_with_kink: if ok.is_empty() {
            0.0
        } else {
            with as f64 / ok.len() as f64
        },
        kinks,
    })
}
