//! Time integration of the planar crystal: velocity Verlet, a BAOAB Langevin
//! splitting with an exact Ornstein-Uhlenbeck velocity update, trap and field
//! ramps, and single quench trials.
//!
//! The propagator keeps coordinates in scaled units and indexed by ion
//! identity, so per-ion masses never need re-permuting; axially sorted views
//! with the identity permutation are produced on demand.

use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinkdetect::{detect, KinkReport};
use crate::model::{linear_chain, Configuration, IonSystem, Potential};
use crate::optimize::{newton_minimize, NewtonOptions};
use crate::statics::relaxed_zigzag;
use crate::units::UnitSystem;

pub const DEFAULT_DT: f64 = 10e-9;
pub const DEFAULT_ETA: f64 = 3e-21;
/// Initial ensemble temperature for quenches, K.
pub const DEFAULT_QUENCH_TEMPERATURE: f64 = 1e-3;
/// Survival is counted this long after the ramp starts, s.
pub const SURVIVAL_TIME: f64 = 400e-6;

/// Largest tolerated change of total energy in one step, relative to it.
const MAX_STEP_DRIFT: f64 = 1e-3;
/// Escape radius in units of the initial chain length.
const ESCAPE_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LangevinParams {
    /// K.
    pub temperature: f64,
    /// Friction coefficient, kg/s.
    pub eta: f64,
    /// s.
    pub dt: f64,
}

impl Default for LangevinParams {
    fn default() -> Self {
        LangevinParams {
            temperature: DEFAULT_QUENCH_TEMPERATURE,
            eta: DEFAULT_ETA,
            dt: DEFAULT_DT,
        }
    }
}

impl LangevinParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::Config(format!("eta must be non-negative, got {}", self.eta)));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!(
                "temperature must be non-negative, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RampShape {
    #[default]
    LinearNu,
    LinearNuSquared,
}

/// Trap-frequency ramp followed by a hold, plus an optional piecewise-linear
/// field schedule. Times are in seconds from the ramp start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RampSchedule {
    pub nu_x_start: f64,
    pub nu_x_end: f64,
    pub t_r: f64,
    #[serde(default)]
    pub shape: RampShape,
    /// `(t, E_x)` breakpoints in s and V/m, held constant outside their span.
    /// Empty leaves the system's static field in place.
    #[serde(default)]
    pub e_field: Vec<(f64, f64)>,
    #[serde(default)]
    pub hold_time: f64,
}

impl RampSchedule {
    /// Ramp of duration `2 τ_Q`, held until the survival time.
    pub fn quench(nu_x_start: f64, nu_x_end: f64, tau_q: f64) -> Self {
        let t_r = 2.0 * tau_q;
        RampSchedule {
            nu_x_start,
            nu_x_end,
            t_r,
            shape: RampShape::LinearNu,
            e_field: Vec::new(),
            hold_time: (SURVIVAL_TIME - t_r).max(0.0),
        }
    }

    /// Fixed trap frequency for `duration`.
    pub fn constant(nu_x: f64, duration: f64) -> Self {
        RampSchedule {
            nu_x_start: nu_x,
            nu_x_end: nu_x,
            t_r: duration,
            shape: RampShape::LinearNu,
            e_field: Vec::new(),
            hold_time: 0.0,
        }
    }

    pub fn with_field(mut self, points: Vec<(f64, f64)>) -> Self {
        self.e_field = points;
        self
    }

    pub fn tau_q(&self) -> f64 {
        0.5 * self.t_r
    }

    pub fn duration(&self) -> f64 {
        self.t_r + self.hold_time
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_r > 0.0 && self.t_r.is_finite()) {
            return Err(Error::Config(format!(
                "ramp duration must be positive, got {}",
                self.t_r
            )));
        }
        if !(self.hold_time >= 0.0) {
            return Err(Error::Config(format!("negative hold time {}", self.hold_time)));
        }
        if !(self.nu_x_start > 0.0 && self.nu_x_end > 0.0) {
            return Err(Error::Config("trap frequencies must be positive".into()));
        }
        if self.e_field.windows(2).any(|w| w[1].0 < w[0].0) {
            return Err(Error::Config("field breakpoints must be time-ordered".into()));
        }
        Ok(())
    }

    pub fn nu_x_at(&self, t: f64) -> f64 {
        let s = (t / self.t_r).clamp(0.0, 1.0);
        match self.shape {
            RampShape::LinearNu => self.nu_x_start + s * (self.nu_x_end - self.nu_x_start),
            RampShape::LinearNuSquared => {
                let (a, b) = (self.nu_x_start.powi(2), self.nu_x_end.powi(2));
                (a + s * (b - a)).sqrt()
            }
        }
    }

    pub fn e_field_at(&self, t: f64) -> Option<f64> {
        let p = &self.e_field;
        let (first, last) = (p.first()?, p.last()?);
        if t <= first.0 {
            return Some(first.1);
        }
        if t >= last.0 {
            return Some(last.1);
        }
        let k = p.partition_point(|pt| pt.0 <= t);
        let (a, b) = (p[k - 1], p[k]);
        if b.0 == a.0 {
            return Some(b.1);
        }
        Some(a.1 + (b.1 - a.1) * (t - a.0) / (b.0 - a.0))
    }
}

/// Phase-space point in scaled units, indexed by ion identity.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsState {
    /// Stacked `(z, x)`.
    pub q: Vec<f64>,
    pub v: Vec<f64>,
    pub time: f64,
    pub rng_seed: u64,
    pub stream: u64,
    rng: ChaCha8Rng,
}

impl DynamicsState {
    /// At rest in `config` (identity order), RNG stream `stream` of `seed`.
    pub fn at_rest(config: &Configuration, seed: u64, stream: u64) -> Self {
        let q = config.to_vector();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        DynamicsState {
            v: vec![0.0; q.len()],
            q,
            time: 0.0,
            rng_seed: seed,
            stream,
            rng,
        }
    }

    pub fn n_ions(&self) -> usize {
        self.q.len() / 2
    }

    /// Coordinates in identity order.
    pub fn config(&self) -> Configuration {
        Configuration::from_vector(&self.q)
    }

    /// Axially sorted configuration and `ids[slot] = ion identity`.
    pub fn sorted(&self) -> (Configuration, Vec<usize>) {
        self.config().sorted()
    }

    pub fn kinetic_energy(&self, masses: &[f64]) -> f64 {
        let n = self.n_ions();
        self.v
            .iter()
            .enumerate()
            .map(|(k, v)| 0.5 * masses[k % n] * v * v)
            .sum()
    }

    pub fn time_si(&self, units: &UnitSystem) -> f64 {
        units.time_to_si(self.time)
    }

    pub fn velocities_si(&self, units: &UnitSystem) -> Vec<f64> {
        self.v.iter().map(|&v| units.velocity_to_si(v)).collect()
    }
}

/// Per-ion Ornstein-Uhlenbeck coefficients for one step.
#[derive(Debug, Clone)]
pub struct Thermostat {
    dt: f64,
    c1: Vec<f64>,
    c2: Vec<f64>,
}

impl Thermostat {
    pub fn new(params: &LangevinParams, masses: &[f64], units: &UnitSystem) -> Result<Self> {
        params.validate()?;
        let dt = units.time_from_si(params.dt);
        let eta = units.friction_from_si(params.eta);
        let t = units.temperature_from_si(params.temperature);
        let c1: Vec<f64> = masses.iter().map(|m| (-eta * dt / m).exp()).collect();
        let c2 = c1
            .iter()
            .zip(masses)
            .map(|(c, m)| ((1.0 - c * c) * t / m).sqrt())
            .collect();
        Ok(Thermostat { dt, c1, c2 })
    }

    /// Scaled time step.
    pub fn dt(&self) -> f64 {
        self.dt
    }
}

/// Integrator owning the state, its forces and an optional schedule.
#[derive(Debug, Clone)]
pub struct Propagator {
    pot: Potential,
    units: UnitSystem,
    nu_z: f64,
    schedule: Option<RampSchedule>,
    pub state: DynamicsState,
    grad: Vec<f64>,
    pe: f64,
    /// Energy injected by the schedule during the last refresh.
    work: f64,
    /// Coulomb energy at construction; floors the drift check when the field
    /// term carries the total energy through zero.
    energy_scale: f64,
    escape: f64,
}

impl Propagator {
    pub fn new(sys: &IonSystem, state: DynamicsState) -> Result<Self> {
        if state.n_ions() != sys.n_ions() {
            return Err(Error::InvalidConfiguration(format!(
                "state has {} ions, system {}",
                state.n_ions(),
                sys.n_ions()
            )));
        }
        let chain = linear_chain(sys)?;
        let length = chain.z.iter().fold(0.0f64, |m, z| m.max(z.abs())) * 2.0;
        let mut p = Propagator {
            pot: Potential::new(sys),
            units: sys.units(),
            nu_z: sys.nu_z,
            schedule: None,
            grad: vec![0.0; state.q.len()],
            pe: 0.0,
            work: 0.0,
            energy_scale: 0.0,
            escape: ESCAPE_FACTOR * length.max(1.0),
            state,
        };
        p.energy_scale = p.pot.coulomb_energy(&p.state.q)?;
        p.refresh()?;
        Ok(p)
    }

    pub fn with_schedule(mut self, schedule: RampSchedule) -> Result<Self> {
        schedule.validate()?;
        self.schedule = Some(schedule);
        self.refresh()?;
        Ok(self)
    }

    pub fn units(&self) -> &UnitSystem {
        &self.units
    }

    pub fn potential(&self) -> &Potential {
        &self.pot
    }

    pub fn masses(&self) -> &[f64] {
        self.pot.masses()
    }

    pub fn potential_energy(&self) -> f64 {
        self.pe
    }

    pub fn kinetic_energy(&self) -> f64 {
        self.state.kinetic_energy(self.pot.masses())
    }

    pub fn total_energy(&self) -> f64 {
        self.pe + self.kinetic_energy()
    }

    /// Trap frequency currently applied, Hz.
    pub fn nu_x(&self) -> f64 {
        self.pot.beta2().sqrt() * self.nu_z
    }

    /// Re-apply the schedule at the current time and recompute forces.
    pub fn refresh(&mut self) -> Result<()> {
        self.work = 0.0;
        if let Some(s) = &self.schedule {
            let t = self.units.time_to_si(self.state.time);
            let before = self.pot.trap_energy(&self.state.q);
            self.pot.set_beta2((s.nu_x_at(t) / self.nu_z).powi(2));
            if let Some(e) = s.e_field_at(t) {
                self.pot.set_field(self.units.field_from_si(e));
            }
            self.work = self.pot.trap_energy(&self.state.q) - before;
        }
        self.pe = self.pot.energy_gradient(&self.state.q, &mut self.grad)?;
        Ok(())
    }

    fn kick(&mut self, h: f64) {
        let n = self.state.n_ions();
        let m = self.pot.masses();
        for (k, v) in self.state.v.iter_mut().enumerate() {
            *v -= h * self.grad[k] / m[k % n];
        }
    }

    fn drift(&mut self, h: f64) {
        for (q, v) in self.state.q.iter_mut().zip(&self.state.v) {
            *q += h * v;
        }
    }

    fn check(&self, e_before: f64) -> Result<()> {
        let t = self.units.time_to_si(self.state.time);
        let n = self.state.n_ions();
        for (k, (q, v)) in self.state.q.iter().zip(&self.state.v).enumerate() {
            if !q.is_finite() || !v.is_finite() {
                return Err(Error::Instability {
                    time: t,
                    reason: format!("non-finite state for ion {}", k % n),
                });
            }
            if q.abs() > self.escape {
                return Err(Error::IonLoss { ion: k % n, time: t });
            }
        }
        let e = self.total_energy();
        let scale = e_before.abs().max(e.abs()).max(self.energy_scale);
        if !e.is_finite() || (e - self.work - e_before).abs() > MAX_STEP_DRIFT * scale {
            return Err(Error::Instability {
                time: t,
                reason: format!("energy jumped from {e_before:.6e} to {:.6e} in one step", e - self.work),
            });
        }
        Ok(())
    }

    /// One velocity-Verlet step of scaled length `dt`.
    pub fn step_nve(&mut self, dt: f64) -> Result<()> {
        let e0 = self.total_energy();
        self.kick(0.5 * dt);
        self.drift(dt);
        self.state.time += dt;
        self.refresh()?;
        self.kick(0.5 * dt);
        self.check(e0)
    }

    /// One BAOAB step.
    pub fn step_langevin(&mut self, th: &Thermostat) -> Result<()> {
        let e0 = self.total_energy();
        let dt = th.dt;
        let n = self.state.n_ions();
        self.kick(0.5 * dt);
        self.drift(0.5 * dt);
        for (k, v) in self.state.v.iter_mut().enumerate() {
            let xi: f64 = self.state.rng.sample(StandardNormal);
            *v = th.c1[k % n] * *v + th.c2[k % n] * xi;
        }
        self.drift(0.5 * dt);
        self.state.time += dt;
        self.refresh()?;
        self.kick(0.5 * dt);
        self.check(e0)
    }

    /// Minimize the current potential from the current coordinates; the
    /// inherent structure of the state, in identity order.
    pub fn inherent_structure(&self) -> Result<Configuration> {
        let q = newton_minimize(&self.pot, &self.state.q, &NewtonOptions::default())?;
        Ok(Configuration::from_vector(&q))
    }

    pub fn frame(&self) -> Frame {
        let u = &self.units;
        let n = self.state.n_ions();
        let l = |v: &[f64]| v.iter().map(|&c| u.length_to_si(c)).collect();
        let s = |v: &[f64]| v.iter().map(|&c| u.velocity_to_si(c)).collect();
        Frame {
            t: u.time_to_si(self.state.time),
            z: l(&self.state.q[..n]),
            x: l(&self.state.q[n..]),
            vz: s(&self.state.v[..n]),
            vx: s(&self.state.v[n..]),
        }
    }
}

/// Single velocity-Verlet step of `dt` seconds at the system's fixed trap.
pub fn step_nve(sys: &IonSystem, state: &DynamicsState, dt: f64) -> Result<DynamicsState> {
    let mut p = Propagator::new(sys, state.clone())?;
    p.step_nve(sys.units().time_from_si(dt))?;
    Ok(p.state)
}

/// Single thermostatted step at the system's fixed trap.
pub fn step_langevin(sys: &IonSystem, state: &DynamicsState, params: &LangevinParams) -> Result<DynamicsState> {
    let mut p = Propagator::new(sys, state.clone())?;
    let th = Thermostat::new(params, p.masses(), p.units())?;
    p.step_langevin(&th)?;
    Ok(p.state)
}

/// Draw positions and velocities from the harmonic thermal ensemble around
/// the nearest energy minimum, then run Langevin dynamics for `duration`
/// seconds. At zero temperature the relaxed minimum is returned at rest.
pub fn thermalize(
    sys: &IonSystem,
    state0: &DynamicsState,
    params: &LangevinParams,
    duration: f64,
) -> Result<DynamicsState> {
    params.validate()?;
    let pot = Potential::new(sys);
    let units = sys.units();
    let masses = pot.masses().to_vec();
    let n = masses.len();
    let q_eq = newton_minimize(&pot, &state0.q, &NewtonOptions::default())?;
    let mut state = state0.clone();
    state.q = q_eq.clone();
    state.v = vec![0.0; 2 * n];
    if params.temperature == 0.0 {
        return Ok(state);
    }

    let t = units.temperature_from_si(params.temperature);
    let w: Vec<f64> = (0..2 * n).map(|k| 1.0 / masses[k % n].sqrt()).collect();
    let h = pot.hessian(&q_eq)?;
    let hm = DMatrix::from_fn(2 * n, 2 * n, |a, b| h[(a, b)] * w[a] * w[b]);
    let eig = SymmetricEigen::new(hm);
    for (k, &l) in eig.eigenvalues.iter().enumerate() {
        let xi: f64 = state.rng.sample(StandardNormal);
        if l <= 1e-12 {
            continue;
        }
        let amp = (t / l).sqrt() * xi;
        #[allow(clippy::needless_range_loop)]
        for a in 0..2 * n {
            state.q[a] += amp * w[a] * eig.eigenvectors[(a, k)];
        }
    }
    for a in 0..2 * n {
        let xi: f64 = state.rng.sample(StandardNormal);
        state.v[a] = (t / masses[a % n]).sqrt() * xi;
    }

    let damping_time = masses.iter().fold(0.0f64, |m, &mu| m.max(mu)) / units.friction_from_si(params.eta);
    let damping_time = units.time_to_si(damping_time);
    if duration > 0.0 && duration < 10.0 * damping_time {
        log::warn!(
            "thermalization of {:.3e} s is shorter than 10 damping times ({:.3e} s)",
            duration,
            10.0 * damping_time
        );
    }
    let mut p = Propagator::new(sys, state)?;
    let th = Thermostat::new(params, p.masses(), p.units())?;
    let steps = (duration / params.dt).round() as usize;
    for _ in 0..steps {
        p.step_langevin(&th)?;
    }
    let mut state = p.state;
    state.time = state0.time;
    Ok(state)
}

/// Positions and velocities in SI units, identity order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub t: f64,
    pub z: Vec<f64>,
    pub x: Vec<f64>,
    pub vz: Vec<f64>,
    pub vx: Vec<f64>,
}

/// Tab-separated frames: `t`, then `z`, `x`, `vz`, `vx` per ion.
pub fn write_frames<W: Write>(frames: &[Frame], mut out: W) -> Result<()> {
    let n = frames.first().map_or(0, |f| f.z.len());
    let mut header = vec!["t_s".to_string()];
    for tag in ["z", "x", "vz", "vx"] {
        let unit = if tag.starts_with('v') { "m_per_s" } else { "m" };
        header.extend((0..n).map(|j| format!("{tag}{j}_{unit}")));
    }
    writeln!(out, "{}", header.join("\t"))?;
    for f in frames {
        let row: Vec<String> = std::iter::once(&f.t)
            .chain(&f.z)
            .chain(&f.x)
            .chain(&f.vz)
            .chain(&f.vx)
            .map(|v| format!("{v:.12e}"))
            .collect();
        writeln!(out, "{}", row.join("\t"))?;
    }
    Ok(())
}

/// Mass defect on ion `site`, counted from the left chain end starting at 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DefectSpec {
    pub site: usize,
    /// amu.
    pub mass: f64,
}

impl DefectSpec {
    pub fn apply(defects: &[DefectSpec], sys: IonSystem) -> Result<IonSystem> {
        let mut sys = sys;
        for d in defects {
            sys = sys.with_defect(d.site, d.mass)?;
        }
        Ok(sys)
    }
}

#[derive(Debug, Clone, Default)]
pub struct QuenchOptions {
    /// Keep every `stride`-th step as a frame; `None` records nothing.
    pub frame_stride: Option<usize>,
    /// Kink-free crystal at the final trap frequency; computed when absent.
    pub reference: Option<Configuration>,
}

#[derive(Debug, Clone)]
pub struct QuenchOutcome {
    /// Kinks of the inherent structure at the end of the ramp.
    pub created: KinkReport,
    /// Kinks of the inherent structure at the survival time.
    pub survived: KinkReport,
    pub frames: Vec<Frame>,
    pub final_state: DynamicsState,
}

/// Integrate one quench from a thermalized linear chain. Kinks are counted
/// on energy-minimized snapshots at the ramp end and at the survival time,
/// which is measured from the ramp start.
pub fn run_quench(
    sys: &IonSystem,
    state0: &DynamicsState,
    schedule: &RampSchedule,
    params: &LangevinParams,
    opts: &QuenchOptions,
) -> Result<QuenchOutcome> {
    params.validate()?;
    let sys_end = sys.clone().with_nu_x(schedule.nu_x_end);
    let reference = match &opts.reference {
        Some(r) => r.clone(),
        None => relaxed_zigzag(&sys_end)?,
    };
    let mut state = state0.clone();
    state.time = 0.0;
    let mut p = Propagator::new(sys, state)?.with_schedule(schedule.clone())?;
    let th = Thermostat::new(params, p.masses(), p.units())?;

    let k_ramp = (schedule.t_r / params.dt).round().max(1.0) as usize;
    let k_survive = (SURVIVAL_TIME / params.dt).round() as usize;
    let k_end = k_ramp
        .max(k_survive)
        .max((schedule.duration() / params.dt).round() as usize);

    let mut frames = Vec::new();
    let mut created = None;
    let mut survived = None;
    let count = |p: &Propagator| -> Result<KinkReport> {
        let inherent = p.inherent_structure()?;
        Ok(detect(&inherent, Some(&reference)))
    };
    for k in 1..=k_end {
        p.step_langevin(&th)?;
        if let Some(stride) = opts.frame_stride {
            if stride > 0 && k % stride == 0 {
                frames.push(p.frame());
            }
        }
        if k == k_ramp {
            created = Some(count(&p)?);
        }
        if k == k_survive {
            survived = Some(count(&p)?);
        }
    }
    let created = created.expect("ramp end lies inside the run");
    let survived = match survived {
        Some(s) => s,
        None => count(&p)?,
    };
    Ok(QuenchOutcome {
        created,
        survived,
        frames,
        final_state: p.state,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Ok,
    IonLoss,
    Instability,
    Failed,
}

/// One line of an ensemble log; lengths in meters, times in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub seed: u64,
    pub trial: u64,
    pub tau_q: f64,
    pub nu_x_start: f64,
    pub nu_x_end: f64,
    pub defects: Vec<DefectSpec>,
    pub status: TrialStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    pub n_kinks_created: usize,
    pub n_kinks_survived: usize,
    pub centres_created: Vec<f64>,
    pub centres_survived: Vec<f64>,
}

impl TrialRecord {
    pub fn from_outcome(
        seed: u64,
        trial: u64,
        schedule: &RampSchedule,
        defects: &[DefectSpec],
        outcome: &Result<QuenchOutcome>,
        units: &UnitSystem,
    ) -> Self {
        let mut rec = TrialRecord {
            seed,
            trial,
            tau_q: schedule.tau_q(),
            nu_x_start: schedule.nu_x_start,
            nu_x_end: schedule.nu_x_end,
            defects: defects.to_vec(),
            status: TrialStatus::Ok,
            message: None,
            n_kinks_created: 0,
            n_kinks_survived: 0,
            centres_created: Vec::new(),
            centres_survived: Vec::new(),
        };
        let centres = |r: &KinkReport| r.kinks.iter().map(|k| units.length_to_si(k.centre)).collect();
        match outcome {
            Ok(o) => {
                rec.n_kinks_created = o.created.n_kinks();
                rec.n_kinks_survived = o.survived.n_kinks();
                rec.centres_created = centres(&o.created);
                rec.centres_survived = centres(&o.survived);
            }
            Err(e) => {
                rec.status = match e {
                    Error::IonLoss { .. } => TrialStatus::IonLoss,
                    Error::Instability { .. } => TrialStatus::Instability,
                    _ => TrialStatus::Failed,
                };
                rec.message = Some(e.to_string());
            }
        }
        rec
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ramp_endpoints_and_shapes() {
        let mut s = RampSchedule::quench(500e3, 140e3, 15e-6);
        assert_eq!(s.t_r, 30e-6);
        assert_eq!(s.nu_x_at(0.0), 500e3);
        assert_eq!(s.nu_x_at(1.0), 140e3);
        assert!((s.nu_x_at(15e-6) - 320e3).abs() < 1e-6);
        s.shape = RampShape::LinearNuSquared;
        let mid = s.nu_x_at(15e-6);
        assert!((mid * mid - 0.5 * (500e3f64.powi(2) + 140e3f64.powi(2))).abs() < 1.0);
    }

    #[test]
    fn field_schedule_interpolates_and_clamps() {
        let s = RampSchedule::constant(140e3, 1e-3).with_field(vec![(0.0, 0.0), (60e-3, 110.0)]);
        assert_eq!(s.e_field_at(-1.0), Some(0.0));
        assert!((s.e_field_at(30e-3).unwrap() - 55.0).abs() < 1e-12);
        assert_eq!(s.e_field_at(1.0), Some(110.0));
        assert_eq!(RampSchedule::constant(1.0, 1.0).e_field_at(0.0), None);
    }

    #[test]
    fn bad_params_rejected() {
        let p = LangevinParams {
            dt: 0.0,
            ..Default::default()
        };
        assert!(p.validate().is_err());
        let mut s = RampSchedule::quench(500e3, 140e3, 1e-6);
        s.t_r = 0.0;
        assert!(s.validate().is_err());
    }
}
