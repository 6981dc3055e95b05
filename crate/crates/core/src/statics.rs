//! Stationary crystals, kink seeding, constrained minimization along the
//! kink coordinate and the resulting Peierls-Nabarro potential.
//!
//! Configurations produced here keep the ion labelling of the [`IonSystem`]
//! they were computed for. That labelling equals the axial order except where
//! two ions in different rows exchange axial order along an adiabatic
//! trajectory; keeping identities fixed makes `f(X)` continuous in `X`.

use std::io::Write;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinkdetect::{detect, CentreFunctional, KinkKind};
use crate::model::{linear_chain, Configuration, IonSystem, Potential};
use crate::optimize::{fd_hessian, max_abs, modified_solve, newton_minimize, NewtonOptions};
use crate::units::UnitSystem;

/// Default gradient tolerance (scaled units).
pub const DEFAULT_TOL: f64 = 1e-9;

pub fn minimize_energy(sys: &IonSystem, q0: &Configuration, tol: f64) -> Result<Configuration> {
    let pot = Potential::new(sys);
    let q0 = q0.to_vector();
    pot.energy(&q0)?;
    let opts = NewtonOptions {
        tol,
        ..Default::default()
    };
    let q = newton_minimize(&pot, &q0, &opts)?;
    Ok(Configuration::from_vector(&q))
}

/// Kink-free reference crystal: relax a small alternating transverse offset
/// on top of the axis-bound chain. A mass defect can steer that relaxation
/// into a kinked state, so detected kinks are removed by mirroring the chain
/// on one side of them and relaxing again. Returns the linear chain when the
/// zigzag is unstable.
pub fn relaxed_zigzag(sys: &IonSystem) -> Result<Configuration> {
    let chain = linear_chain(sys)?;
    let x = chain
        .x
        .iter()
        .enumerate()
        .map(|(j, x0)| x0 + if j % 2 == 0 { 0.1 } else { -0.1 })
        .collect();
    let start = Configuration::new(chain.z.clone(), x)?;
    let mut q = minimize_energy(sys, &start, DEFAULT_TOL)?;
    let pot = Potential::new(sys);
    for _ in 0..sys.n_ions() {
        let report = detect(&q, None);
        if report.n_kinks() == 0 {
            break;
        }
        let mut best: Option<(usize, f64, Configuration)> = None;
        for k in &report.kinks {
            for left in [true, false] {
                let trial = minimize_energy(sys, &mirror_side(&q, k.centre, left), DEFAULT_TOL)?;
                let n = detect(&trial, None).n_kinks();
                let e = pot.energy(&trial.to_vector())?;
                if best.as_ref().is_none_or(|(n2, e2, _)| (n, e) < (*n2, *e2)) {
                    best = Some((n, e, trial));
                }
            }
        }
        match best {
            Some((n, _, trial)) if n < report.n_kinks() => q = trial,
            _ => break,
        }
    }
    Ok(q)
}

/// Mirror `x` about the mean transverse position for ions left (or right)
/// of `z_cut`.
fn mirror_side(q: &Configuration, z_cut: f64, left: bool) -> Configuration {
    let x_axis = q.x.iter().sum::<f64>() / q.len() as f64;
    let mut out = q.clone();
    for (z, x) in out.z.iter().zip(out.x.iter_mut()) {
        if (*z < z_cut) == left {
            *x = 2.0 * x_axis - *x;
        }
    }
    out
}

/// Flip the transverse sign of every ion right of the chain centre and relax.
pub fn seed_kink(sys: &IonSystem, zigzag: &Configuration) -> Result<Configuration> {
    let mut z = zigzag.z.clone();
    z.sort_by(f64::total_cmp);
    let n = z.len();
    let z_mid = if n.is_multiple_of(2) {
        0.5 * (z[n / 2 - 1] + z[n / 2])
    } else {
        z[n / 2]
    };
    seed_kink_at(sys, zigzag, z_mid)
}

/// Mirror the transverse coordinate of every ion with z > `z_cut` and relax.
pub fn seed_kink_at(sys: &IonSystem, zigzag: &Configuration, z_cut: f64) -> Result<Configuration> {
    let relaxed = minimize_energy(sys, &mirror_side(zigzag, z_cut, false), DEFAULT_TOL)?;
    let report = detect(&relaxed, Some(zigzag));
    if report.n_kinks() == 0 {
        return Err(Error::NoKinkFormed);
    }
    Ok(relaxed)
}

/// Stationary kinks seeded by cutting the zigzag on either side of each
/// listed ion (0-based identities).
pub fn seeds_at_sites(sys: &IonSystem, zigzag: &Configuration, sites: &[usize]) -> Result<Vec<Configuration>> {
    let pot = Potential::new(sys);
    let (sorted, order) = zigzag.sorted();
    let mut found: Vec<(f64, Configuration)> = Vec::new();
    for &site in sites {
        let Some(pos) = order.iter().position(|&i| i == site) else {
            return Err(Error::InvalidSystem(format!("no ion {site}")));
        };
        for k in [pos.wrapping_sub(1), pos] {
            if k + 1 >= sorted.len() {
                continue;
            }
            let cut = 0.5 * (sorted.z[k] + sorted.z[k + 1]);
            let Ok(seed) = seed_kink_at(sys, zigzag, cut) else {
                continue;
            };
            if detect(&seed, Some(zigzag)).n_kinks() != 1 {
                continue;
            }
            let e = pot.energy(&seed.to_vector())?;
            if !found
                .iter()
                .any(|(e2, c)| (e - e2).abs() < 1e-9 && same_crystal(c, &seed))
            {
                found.push((e, seed));
            }
        }
    }
    if found.is_empty() {
        return Err(Error::NoKinkFormed);
    }
    found.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(found.into_iter().map(|(_, k)| k).collect())
}

/// Equal up to relabelling, within 1e-5.
fn same_crystal(a: &Configuration, b: &Configuration) -> bool {
    let (sa, _) = a.sorted();
    let (sb, _) = b.sorted();
    let close = |u: &[f64], v: &[f64]| u.iter().zip(v).all(|(p, q)| (p - q).abs() < 1e-5);
    close(&sa.z, &sb.z) && close(&sa.x, &sb.x)
}

/// Distinct relaxed single-kink states obtained by cutting the zigzag at
/// every bond inside the two-row region, lowest energy first.
pub fn kink_seeds(sys: &IonSystem, zigzag: &Configuration) -> Result<Vec<Configuration>> {
    let pot = Potential::new(sys);
    let (lo, hi) = detect(zigzag, None).zigzag_extent.ok_or(Error::NoKinkFormed)?;
    let mut z = zigzag.z.clone();
    z.sort_by(f64::total_cmp);
    let mut found: Vec<(f64, Configuration)> = Vec::new();
    for w in z.windows(2) {
        let cut = 0.5 * (w[0] + w[1]);
        if cut < lo || cut > hi {
            continue;
        }
        let Ok(k) = seed_kink_at(sys, zigzag, cut) else {
            continue;
        };
        if detect(&k, Some(zigzag)).n_kinks() != 1 {
            continue;
        }
        let e = pot.energy(&k.to_vector())?;
        let duplicate = found.iter().any(|(e2, c)| (e - e2).abs() < 1e-9 && same_crystal(c, &k));
        if !duplicate {
            found.push((e, k));
        }
    }
    if found.is_empty() {
        return Err(Error::NoKinkFormed);
    }
    found.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(found.into_iter().map(|(_, k)| k).collect())
}

#[derive(Debug, Clone, Copy)]
pub struct ConstraintOptions {
    /// Bound on the max-norm of ∇V + λ∇g.
    pub tol: f64,
    /// Bound on |g(Q) − X|.
    pub constraint_tol: f64,
    pub max_iter: usize,
    pub max_step: f64,
}

impl Default for ConstraintOptions {
    fn default() -> Self {
        ConstraintOptions {
            tol: 1e-10,
            constraint_tol: 1e-11,
            max_iter: 200,
            max_step: 0.1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConstrainedSolution {
    pub config: Configuration,
    pub lambda: f64,
    /// Energy in scaled units (absolute).
    pub energy: f64,
    /// max-norm of ∇V + λ∇g.
    pub kkt_residual: f64,
    pub constraint_error: f64,
    pub iterations: usize,
}

pub fn constrained_minimize(
    sys: &IonSystem,
    q0: &Configuration,
    g: &CentreFunctional,
    target: f64,
) -> Result<ConstrainedSolution> {
    constrained_minimize_with(&Potential::new(sys), q0, g, target, &ConstraintOptions::default())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimize V subject to g(Q) = target by a projected Newton iteration on the
/// Lagrange conditions. The multiplier is the least-squares estimate
/// `λ = −∇V·∇g/|∇g|²`, and the tangential Newton step uses the reduced
/// Hessian of the Lagrangian with its eigenvalues made positive.
pub fn constrained_minimize_with(
    pot: &Potential,
    q0: &Configuration,
    g: &CentreFunctional,
    target: f64,
    opts: &ConstraintOptions,
) -> Result<ConstrainedSolution> {
    let mut q = q0.to_vector();
    let dim = q.len();
    let anchor = Some(target);
    let mut gv = vec![0.0; dim];
    let mut gg = vec![0.0; dim];
    let mut gv_t = vec![0.0; dim];
    let mut gg_t = vec![0.0; dim];

    let mut e = pot.energy_gradient(&q, &mut gv)?;
    let mut c = g.value_gradient(&q, anchor, &mut gg)? - target;
    let mut last_res = f64::INFINITY;
    for iter in 0..opts.max_iter {
        let gnorm2 = dot(&gg, &gg);
        if gnorm2.sqrt() < 1e-12 {
            return Err(Error::ConstraintSingular(gnorm2.sqrt()));
        }
        let lambda = -dot(&gv, &gg) / gnorm2;
        let r: Vec<f64> = gv.iter().zip(&gg).map(|(a, b)| a + lambda * b).collect();
        let res = max_abs(&r);
        last_res = res.max(c.abs());
        if res < opts.tol && c.abs() < opts.constraint_tol {
            return Ok(ConstrainedSolution {
                config: Configuration::from_vector(&q),
                lambda,
                energy: e,
                kkt_residual: res,
                constraint_error: c.abs(),
                iterations: iter,
            });
        }

        let hv = pot.hessian(&q)?;
        let hg = fd_hessian(&q, 1e-6, |qq, out| g.value_gradient(qq, anchor, out).map(|_| ()))?;
        let w = hv + hg * lambda;
        let gnorm = gnorm2.sqrt();
        let nvec = DVector::from_iterator(dim, gg.iter().map(|v| v / gnorm));
        let p = DMatrix::identity(dim, dim) - &nvec * nvec.transpose();
        let scale = w.diagonal().amax().max(1.0);
        let b = &p * &w * &p + &nvec * nvec.transpose() * scale;
        let eig = SymmetricEigen::new(b);

        let d_n = DVector::from_iterator(dim, gg.iter().map(|v| -c * v / gnorm2));
        let rhs = -(&p * (DVector::from_column_slice(&r) + &w * &d_n));
        let d_t = &p * modified_solve(&eig, &rhs);
        let mut d = d_n + d_t;
        let dmax = d.amax();
        if dmax > opts.max_step {
            d *= opts.max_step / dmax;
        }

        let rho = 2.0 * lambda.abs() + 1.0;
        let merit = e + rho * c.abs();
        let near = res < 1e-5 && c.abs() < 1e-5;
        let mut alpha = 1.0;
        let mut accepted = false;
        while alpha > 1e-10 {
            let trial: Vec<f64> = q.iter().zip(d.iter()).map(|(a, b)| a + alpha * b).collect();
            let et = match pot.energy_gradient(&trial, &mut gv_t) {
                Ok(v) => v,
                Err(_) => {
                    alpha *= 0.5;
                    continue;
                }
            };
            let ct = match g.value_gradient(&trial, anchor, &mut gg_t) {
                Ok(v) => v - target,
                Err(_) => {
                    alpha *= 0.5;
                    continue;
                }
            };
            let mut ok = et + rho * ct.abs() < merit;
            if !ok && near {
                let gn = dot(&gg_t, &gg_t);
                let lt = -dot(&gv_t, &gg_t) / gn;
                let rt = gv_t
                    .iter()
                    .zip(&gg_t)
                    .fold(0.0f64, |m, (a, b)| m.max((a + lt * b).abs()));
                ok = rt.max(ct.abs()) < res.max(c.abs());
            }
            if ok {
                q = trial;
                e = et;
                c = ct;
                std::mem::swap(&mut gv, &mut gv_t);
                std::mem::swap(&mut gg, &mut gg_t);
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            return Err(Error::NoConvergence {
                iterations: iter,
                residual: last_res,
            });
        }
    }
    Err(Error::NoConvergence {
        iterations: opts.max_iter,
        residual: last_res,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PnSample {
    /// Kink position (scaled length).
    pub x: f64,
    pub config: Configuration,
    /// Energy relative to the kink-free reference crystal (scaled).
    pub energy: f64,
    pub lambda: f64,
    pub kkt_residual: f64,
    pub constraint_error: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PnCurve {
    pub samples: Vec<PnSample>,
    pub kink_kind: KinkKind,
    pub functional: CentreFunctional,
    pub reference_config: Configuration,
    /// Absolute energy of the reference crystal (scaled).
    pub reference_energy: f64,
    pub system: IonSystem,
    /// Tracing stopped early on the left/right because the kink was lost or
    /// the solver failed at the minimum step.
    pub truncated_left: bool,
    pub truncated_right: bool,
    /// Positions where the continuation passed a fold and the configuration
    /// jumped to a neighbouring branch; f(X) is discontinuous there.
    #[serde(default)]
    pub branch_jumps: Vec<f64>,
}

impl PnCurve {
    pub fn units(&self) -> UnitSystem {
        self.system.units()
    }

    pub fn positions(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.x).collect()
    }

    pub fn energies(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.energy).collect()
    }

    /// Linear interpolation of U inside the sampled range.
    pub fn energy_at(&self, x: f64) -> Option<f64> {
        let xs = &self.samples;
        if xs.is_empty() || x < xs[0].x || x > xs[xs.len() - 1].x {
            return None;
        }
        let k = xs.partition_point(|s| s.x < x);
        if k == 0 {
            return Some(xs[0].energy);
        }
        let (a, b) = (&xs[k - 1], &xs[k]);
        let w = (x - a.x) / (b.x - a.x);
        Some(a.energy + w * (b.energy - a.energy))
    }

    pub fn x_range(&self) -> (f64, f64) {
        (self.samples[0].x, self.samples[self.samples.len() - 1].x)
    }

    /// Sample with the lowest energy.
    pub fn minimum(&self) -> &PnSample {
        self.samples
            .iter()
            .min_by(|a, b| a.energy.total_cmp(&b.energy))
            .expect("non-empty curve")
    }

    /// Tab-separated table: X_m, U_J, U_K, lambda, then z_1..z_N, x_1..x_N in meters.
    pub fn write_tsv<W: Write>(&self, mut out: W) -> Result<()> {
        let u = self.units();
        let n = self.system.n_ions();
        let mut header = vec![
            "X_m".to_string(),
            "U_J".to_string(),
            "U_K".to_string(),
            "lambda_N".to_string(),
        ];
        header.extend((0..n).map(|j| format!("z{j}_m")));
        header.extend((0..n).map(|j| format!("x{j}_m")));
        writeln!(out, "{}", header.join("\t"))?;
        // λ carries energy per length: report in newtons
        let force = u.energy_j / u.length_m;
        for s in &self.samples {
            let mut row = vec![
                u.length_to_si(s.x),
                u.energy_to_si(s.energy),
                u.energy_to_kelvin(s.energy),
                s.lambda * force,
            ];
            row.extend(s.config.z.iter().map(|v| u.length_to_si(*v)));
            row.extend(s.config.x.iter().map(|v| u.length_to_si(*v)));
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.12e}")).collect();
            writeln!(out, "{}", cells.join("\t"))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TraceOptions {
    /// Nominal continuation step (scaled length).
    pub dx: f64,
    /// Smallest step allowed by adaptive halving.
    pub min_dx: f64,
    pub x_min: f64,
    pub x_max: f64,
    pub constraint: ConstraintOptions,
}

impl TraceOptions {
    /// Step b/20, floor b/320, for central axial spacing `b`.
    pub fn for_spacing(b: f64, x_min: f64, x_max: f64) -> Self {
        TraceOptions {
            dx: b / 20.0,
            min_dx: b / 320.0,
            x_min,
            x_max,
            constraint: ConstraintOptions::default(),
        }
    }
}

/// Median axial spacing over the central third of a crystal.
pub fn central_spacing(q: &Configuration) -> f64 {
    let mut z = q.z.clone();
    z.sort_by(f64::total_cmp);
    let n = z.len();
    let lo = n / 3;
    let hi = ((2 * n).div_ceil(3)).min(n - 1).max(lo + 1);
    let mut d: Vec<f64> = (lo..hi).map(|k| z[k + 1] - z[k]).collect();
    d.sort_by(f64::total_cmp);
    d[d.len() / 2]
}

/// Trace f(X) by continuation from `start`, warm-starting every constrained
/// solve from the previous samples.
pub fn trace_adiabatic(
    sys: &IonSystem,
    start: &Configuration,
    reference: &Configuration,
    g: &CentreFunctional,
    opts: &TraceOptions,
) -> Result<PnCurve> {
    if !(opts.dx > 0.0) {
        return Err(Error::Config("continuation step must be positive".into()));
    }
    let pot = Potential::new(sys);
    let reference_energy = pot.energy(&reference.to_vector())?;
    let start_report = detect(start, Some(reference));
    let kink_kind = start_report.kinks.first().map(|k| k.kind).ok_or(Error::NoKinkFormed)?;

    let x_start = (g.of_config(start)? / opts.dx).round() * opts.dx;
    let origin = constrained_minimize_with(&pot, start, g, x_start, &opts.constraint)?;

    let to_sample = |s: &ConstrainedSolution, x: f64| PnSample {
        x,
        config: s.config.clone(),
        energy: s.energy - reference_energy,
        lambda: s.lambda,
        kkt_residual: s.kkt_residual,
        constraint_error: s.constraint_error,
    };

    // A step is kept only if the kink survives and U stays continuous:
    // ΔU must match −∫λ dX up to the jump of λ across the step.
    let continuous = |e0: f64, l0: f64, x0: f64, sol: &ConstrainedSolution, x1: f64| {
        let dx = x1 - x0;
        let expected = -0.5 * (l0 + sol.lambda) * dx;
        let slack = (0.5 * (l0 - sol.lambda).abs() + 0.1 * l0.abs().max(sol.lambda.abs()) + 1e-4) * dx.abs();
        (sol.energy - e0 - expected).abs() <= slack
    };
    let accept = |sol: ConstrainedSolution, prev: &(f64, Vec<f64>, f64, f64), x1: f64| {
        if !continuous(prev.2, prev.3, prev.0, &sol, x1) {
            return None;
        }
        (detect(&sol.config, Some(reference)).n_kinks() == 1).then_some(sol)
    };
    // Past a fold the branch ends and the configuration has to jump. Such a
    // jump may shift U by at most 1% of the kink energy beyond the slope
    // estimate, which still rejects drops into unrelated basins.
    let accept_jump = |sol: ConstrainedSolution, prev: &(f64, Vec<f64>, f64, f64), x1: f64| {
        let dx = x1 - prev.0;
        let expected = -0.5 * (prev.3 + sol.lambda) * dx;
        let slack =
            0.01 * (prev.2 - reference_energy).abs() + 4.0 * (prev.3.abs().max(sol.lambda.abs()) + 1e-4) * dx.abs();
        if (sol.energy - prev.2 - expected).abs() > slack {
            return None;
        }
        (detect(&sol.config, Some(reference)).n_kinks() == 1).then_some(sol)
    };
    let mut branch_jumps = Vec::new();

    let mut halves: [(Vec<PnSample>, bool); 2] = [(Vec::new(), false), (Vec::new(), false)];
    for (side, dir) in [(0usize, -1.0f64), (1, 1.0)] {
        // (X, q, energy, λ)
        let mut prev = (x_start, origin.config.to_vector(), origin.energy, origin.lambda);
        let mut prev2: Option<(f64, Vec<f64>)> = None;
        let mut step = opts.dx;
        loop {
            let x_next = prev.0 + dir * step;
            if x_next < opts.x_min - 1e-12 || x_next > opts.x_max + 1e-12 {
                break;
            }
            let extrapolated: Option<Vec<f64>> = prev2.as_ref().map(|(x2, q2)| {
                let ratio = (x_next - prev.0) / (prev.0 - x2);
                prev.1.iter().zip(q2).map(|(a, b)| a + ratio * (a - b)).collect()
            });
            let guesses = extrapolated.iter().chain(std::iter::once(&prev.1));
            let mut accepted = None;
            for guess in guesses {
                let attempt =
                    constrained_minimize_with(&pot, &Configuration::from_vector(guess), g, x_next, &opts.constraint);
                if let Some(sol) = attempt.ok().and_then(|sol| accept(sol, &prev, x_next)) {
                    accepted = Some(sol);
                    break;
                }
            }
            match accepted {
                Some(sol) => {
                    halves[side].0.push(to_sample(&sol, x_next));
                    let q = sol.config.to_vector();
                    prev2 = Some((prev.0, std::mem::replace(&mut prev.1, q)));
                    prev.0 = x_next;
                    prev.2 = sol.energy;
                    prev.3 = sol.lambda;
                    step = (step * 2.0).min(opts.dx);
                }
                None => {
                    if step / 2.0 >= opts.min_dx * (1.0 - 1e-9) {
                        step /= 2.0;
                        continue;
                    }
                    let x_jump = prev.0 + dir * opts.dx;
                    let jumped = (x_jump >= opts.x_min - 1e-12 && x_jump <= opts.x_max + 1e-12)
                        .then(|| {
                            constrained_minimize_with(
                                &pot,
                                &Configuration::from_vector(&prev.1),
                                g,
                                x_jump,
                                &opts.constraint,
                            )
                        })
                        .and_then(|r| r.ok())
                        .and_then(|sol| accept_jump(sol, &prev, x_jump));
                    match jumped {
                        Some(sol) => {
                            branch_jumps.push(prev.0 + 0.5 * dir * opts.dx);
                            halves[side].0.push(to_sample(&sol, x_jump));
                            prev = (x_jump, sol.config.to_vector(), sol.energy, sol.lambda);
                            prev2 = None;
                            step = opts.dx;
                        }
                        None => {
                            halves[side].1 = true;
                            break;
                        }
                    }
                }
            }
        }
    }
    branch_jumps.sort_by(f64::total_cmp);

    let [(mut left, truncated_left), (right, truncated_right)] = halves;
    left.reverse();
    left.push(to_sample(&origin, x_start));
    left.extend(right);
    let samples = refine_stationary(&pot, left, g, reference_energy, &opts.constraint);
    Ok(PnCurve {
        samples,
        kink_kind,
        functional: g.clone(),
        reference_config: reference.clone(),
        reference_energy,
        system: sys.clone(),
        truncated_left,
        truncated_right,
        branch_jumps,
    })
}

/// Insert the smooth stationary points of U between samples where λ changes
/// sign. Sign changes across a non-smooth point of g (an interface switch of
/// the odd functional) do not converge and are skipped.
fn refine_stationary(
    pot: &Potential,
    samples: Vec<PnSample>,
    g: &CentreFunctional,
    reference_energy: f64,
    opts: &ConstraintOptions,
) -> Vec<PnSample> {
    let mut out = Vec::with_capacity(samples.len() + 16);
    for i in 0..samples.len() {
        out.push(samples[i].clone());
        let Some(next) = samples.get(i + 1) else { break };
        let (a, b) = (&samples[i], next);
        if a.lambda == 0.0 || b.lambda == 0.0 || a.lambda.signum() == b.lambda.signum() {
            continue;
        }
        if let Some(s) = lagrange_root(pot, a, b, g, reference_energy, opts) {
            out.push(s);
        }
    }
    out
}

fn lagrange_root(
    pot: &Potential,
    a: &PnSample,
    b: &PnSample,
    g: &CentreFunctional,
    reference_energy: f64,
    opts: &ConstraintOptions,
) -> Option<PnSample> {
    let (mut xa, mut la, mut qa) = (a.x, a.lambda, a.config.to_vector());
    let (mut xb, mut lb, mut qb) = (b.x, b.lambda, b.config.to_vector());
    // Illinois variant of regula falsi
    let mut side = 0i32;
    for _ in 0..60 {
        let x = (xa * lb - xb * la) / (lb - la);
        let w = (x - xa) / (xb - xa);
        let guess: Vec<f64> = qa.iter().zip(&qb).map(|(p, q)| p + w * (q - p)).collect();
        let sol = constrained_minimize_with(pot, &Configuration::from_vector(&guess), g, x, opts).ok()?;
        if sol.lambda.abs() < 1e-10 {
            return Some(PnSample {
                x,
                config: sol.config,
                energy: sol.energy - reference_energy,
                lambda: sol.lambda,
                kkt_residual: sol.kkt_residual,
                constraint_error: sol.constraint_error,
            });
        }
        if (xb - xa).abs() < 1e-10 {
            return None;
        }
        let q = sol.config.to_vector();
        if sol.lambda.signum() == la.signum() {
            (xa, la, qa) = (x, sol.lambda, q);
            if side == -1 {
                lb *= 0.5;
            }
            side = -1;
        } else {
            (xb, lb, qb) = (x, sol.lambda, q);
            if side == 1 {
                la *= 0.5;
            }
            side = 1;
        }
    }
    None
}

/// PN potential as the lower envelope of adiabatic trajectories traced from
/// several stationary kinks. Mass defects split the landscape into branches
/// that continuation from a single seed cannot connect.
pub fn trace_envelope(
    sys: &IonSystem,
    reference: &Configuration,
    g: &CentreFunctional,
    starts: &[Configuration],
    opts: &TraceOptions,
) -> Result<PnCurve> {
    let pot = Potential::new(sys);
    let reference_energy = pot.energy(&reference.to_vector())?;
    let mut curves: Vec<PnCurve> = Vec::new();
    for seed in starts {
        let Ok(x) = g.of_config(seed) else { continue };
        let e = pot.energy(&seed.to_vector())? - reference_energy;
        let covered = curves.iter().any(|c| c.energy_at(x).is_some_and(|u| u <= e + 1e-9));
        if covered {
            continue;
        }
        match trace_adiabatic(sys, seed, reference, g, opts) {
            Ok(c) => curves.push(c),
            Err(_) => continue,
        }
    }
    let mut merged = curves.first().cloned().ok_or(Error::NoKinkFormed)?;
    let mut samples: Vec<PnSample> = Vec::new();
    for (i, c) in curves.iter().enumerate() {
        for s in &c.samples {
            let lower_elsewhere = curves
                .iter()
                .enumerate()
                .any(|(j, o)| j != i && o.energy_at(s.x).is_some_and(|u| u < s.energy - 1e-12));
            if !lower_elsewhere {
                samples.push(s.clone());
            }
        }
    }
    samples.sort_by(|a, b| a.x.total_cmp(&b.x));
    samples.dedup_by(|b, a| {
        if (a.x - b.x).abs() < 1e-12 {
            if b.energy < a.energy {
                std::mem::swap(a, b);
            }
            true
        } else {
            false
        }
    });
    let (x_lo, x_hi) = (samples[0].x, samples[samples.len() - 1].x);
    merged.truncated_left = curves.iter().any(|c| c.x_range().0 == x_lo && c.truncated_left);
    merged.truncated_right = curves.iter().any(|c| c.x_range().1 == x_hi && c.truncated_right);
    merged.samples = samples;
    merged.branch_jumps = curves.iter().flat_map(|c| c.branch_jumps.iter().copied()).collect();
    merged.branch_jumps.sort_by(f64::total_cmp);
    Ok(merged)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExtremumKind {
    Min,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extremum {
    pub kind: ExtremumKind,
    pub index: usize,
    pub x: f64,
    pub energy: f64,
}

/// Interior local extrema of U along the curve. Neighbouring differences below
/// `noise` (scaled energy) are treated as flat.
pub fn extrema(curve: &PnCurve, noise: f64) -> Vec<Extremum> {
    let u = curve.energies();
    let xs = curve.positions();
    let mut out: Vec<Extremum> = Vec::new();
    // trend: +1 rising, −1 falling
    let mut trend = 0i32;
    let mut pivot = 0usize;
    for i in 1..u.len() {
        let du = u[i] - u[pivot];
        let t = if du > noise {
            1
        } else if du < -noise {
            -1
        } else {
            continue;
        };
        if trend != 0 && t != trend {
            // pivot is the extremum between the two trends
            let seg = &u[out.last().map_or(0, |e: &Extremum| e.index)..i];
            let base = out.last().map_or(0, |e| e.index);
            let idx = if trend > 0 {
                base + argmax(seg)
            } else {
                base + argmin(seg)
            };
            if idx > 0 {
                out.push(Extremum {
                    kind: if trend > 0 {
                        ExtremumKind::Max
                    } else {
                        ExtremumKind::Min
                    },
                    index: idx,
                    x: xs[idx],
                    energy: u[idx],
                });
            }
        }
        trend = t;
        pivot = i;
    }
    out
}

fn argmax(v: &[f64]) -> usize {
    (0..v.len()).max_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap_or(0)
}

fn argmin(v: &[f64]) -> usize {
    (0..v.len()).min_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap_or(0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Barrier {
    /// Position of the local minimum on one side of the barrier.
    pub x_min: f64,
    pub x_max: f64,
    /// Local max minus local min (scaled energy).
    pub height: f64,
    pub height_kelvin: f64,
}

/// Noise floor used when locating PN extrema (scaled energy).
pub const EXTREMUM_NOISE: f64 = 1e-9;

/// Energy differences between adjacent local maxima and minima.
pub fn pn_barriers(curve: &PnCurve) -> Result<Vec<Barrier>> {
    let ext = extrema(curve, EXTREMUM_NOISE);
    if ext.len() < 3 {
        return Err(Error::TooFewExtrema(ext.len()));
    }
    let u = curve.units();
    Ok(ext
        .windows(2)
        .map(|w| {
            let (mn, mx) = if w[0].kind == ExtremumKind::Min {
                (w[0], w[1])
            } else {
                (w[1], w[0])
            };
            let h = mx.energy - mn.energy;
            Barrier {
                x_min: mn.x,
                x_max: mx.x,
                height: h,
                height_kelvin: u.energy_to_kelvin(h),
            }
        })
        .collect())
}

/// Largest barrier that can hold a kink: for every interior local maximum
/// take the smaller of the drops to its neighbouring minima, then the largest
/// over all maxima. Zero when the curve has no interior maximum.
pub fn trapping_barrier(curve: &PnCurve) -> f64 {
    let ext = extrema(curve, EXTREMUM_NOISE);
    ext.iter()
        .enumerate()
        .filter(|(i, e)| e.kind == ExtremumKind::Max && *i > 0 && *i + 1 < ext.len())
        .map(|(i, e)| (e.energy - ext[i - 1].energy).min(e.energy - ext[i + 1].energy))
        .fold(0.0, f64::max)
}

/// Degree of the envelope removed by `modulation_amplitude`.
const ENVELOPE_DEGREE: usize = 8;

/// Peak-to-peak of U(X) about a least-squares degree-8 polynomial over
/// `|X| <= half_width`. The polynomial takes the smooth envelope set by the
/// trap; what is left is the lattice modulation, which stays measurable when
/// the envelope is steep enough to wash out every interior maximum.
pub fn modulation_amplitude(curve: &PnCurve, half_width: f64) -> Result<f64> {
    let pts: Vec<(f64, f64)> = curve
        .samples
        .iter()
        .filter(|s| s.x.abs() <= half_width)
        .map(|s| (s.x / half_width, s.energy))
        .collect();
    if pts.len() < 2 * (ENVELOPE_DEGREE + 1) {
        return Err(Error::TooFewExtrema(pts.len()));
    }
    let a = DMatrix::from_fn(pts.len(), ENVELOPE_DEGREE + 1, |i, k| pts[i].0.powi(k as i32));
    let y = DVector::from_iterator(pts.len(), pts.iter().map(|p| p.1));
    let coef = a
        .clone()
        .svd(true, true)
        .solve(&y, 1e-14)
        .map_err(|e| Error::InvalidConfiguration(e.to_string()))?;
    let r = y - a * coef;
    Ok(r.max() - r.min())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Well {
    pub x: f64,
    pub energy: f64,
    /// Lower of the two walls; a missing wall falls back to the curve end.
    pub depth: f64,
}

/// Deepest interior local minimum whose X lies within one local axial spacing
/// of ion `site` in the configuration at that minimum.
pub fn defect_well(curve: &PnCurve, site: usize) -> Option<Well> {
    let b = central_spacing(&curve.reference_config);
    wells(curve)
        .into_iter()
        .filter(|w| {
            let s = curve
                .samples
                .iter()
                .min_by(|a, c| (a.x - w.x).abs().total_cmp(&(c.x - w.x).abs()))
                .expect("non-empty curve");
            (s.config.z[site] - w.x).abs() <= b
        })
        .max_by(|a, c| a.depth.total_cmp(&c.depth))
}

/// Interior local minima with their depths.
pub fn wells(curve: &PnCurve) -> Vec<Well> {
    let ext = extrema(curve, EXTREMUM_NOISE);
    let u = curve.energies();
    let (first, last) = (u[0], u[u.len() - 1]);
    ext.iter()
        .enumerate()
        .filter(|(_, e)| e.kind == ExtremumKind::Min)
        .map(|(i, e)| {
            let left = if i > 0 { ext[i - 1].energy } else { first };
            let right = ext.get(i + 1).map_or(last, |m| m.energy);
            Well {
                x: e.x,
                energy: e.energy,
                depth: left.min(right) - e.energy,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_ions_relax_to_analytic_spacing() {
        let sys = IonSystem::uniform(2, 24.6e3, 500e3).unwrap();
        let q0 = Configuration::new(vec![-0.9, 0.4], vec![0.05, -0.02]).unwrap();
        let q = minimize_energy(&sys, &q0, 1e-11).unwrap();
        let s = 2f64.cbrt();
        assert!((q.z[1] - q.z[0] - s).abs() < 1e-10);
        assert!(q.x.iter().all(|x| x.abs() < 1e-10));
    }

    #[test]
    fn deep_linear_regime_has_no_kink() {
        let sys = IonSystem::uniform(6, 24.6e3, 500e3).unwrap();
        let zz = relaxed_zigzag(&sys).unwrap();
        assert!(zz.x.iter().all(|x| x.abs() < 1e-8));
        assert_eq!(seed_kink(&sys, &zz), Err(Error::NoKinkFormed));
    }

    #[test]
    fn inactive_constraint_returns_minimum() {
        let sys = IonSystem::uniform(30, 24.6e3, 140e3).unwrap();
        let zz = relaxed_zigzag(&sys).unwrap();
        let kink = seed_kink(&sys, &zz).unwrap();
        let g = CentreFunctional::extended(&zz);
        let x0 = g.of_config(&kink).unwrap();
        let sol = constrained_minimize(&sys, &kink, &g, x0).unwrap();
        assert!(sol.lambda.abs() < 1e-8, "{}", sol.lambda);
        let d = sol
            .config
            .to_vector()
            .iter()
            .zip(kink.to_vector())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(d < 1e-7, "{d}");
    }

    fn synthetic(xs: &[f64], u: impl Fn(f64) -> f64) -> PnCurve {
        let sys = IonSystem::uniform(3, 24.6e3, 500e3).unwrap();
        let c = linear_chain(&sys).unwrap();
        let samples = xs
            .iter()
            .map(|&x| PnSample {
                x,
                config: c.clone(),
                energy: u(x),
                lambda: 0.0,
                kkt_residual: 0.0,
                constraint_error: 0.0,
            })
            .collect();
        PnCurve {
            samples,
            kink_kind: KinkKind::Odd,
            functional: CentreFunctional::Odd,
            reference_config: c,
            reference_energy: 0.0,
            system: sys,
            truncated_left: false,
            truncated_right: false,
            branch_jumps: Vec::new(),
        }
    }

    #[test]
    fn monotone_curve_has_too_few_extrema() {
        let xs: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let curve = synthetic(&xs, |x| 0.1 * x);
        assert_eq!(pn_barriers(&curve), Err(Error::TooFewExtrema(0)));
    }

    #[test]
    fn modulation_survives_a_steep_envelope() {
        // ripple of amplitude 0.01 and period 0.3 on a parabola far steeper
        // than the ripple: no interior maximum, but the ripple is recovered
        let xs: Vec<f64> = (-400..=400).map(|i| i as f64 * 0.0025).collect();
        let curve = synthetic(&xs, |x| {
            5.0 * x * x + 0.01 * (2.0 * std::f64::consts::PI * x / 0.3).cos()
        });
        assert_eq!(trapping_barrier(&curve), 0.0);
        let m = modulation_amplitude(&curve, 0.9).unwrap();
        assert!((m - 0.02).abs() < 2e-3, "{m}");
        let flat = synthetic(&xs, |x| 5.0 * x * x - x.powi(3));
        assert!(modulation_amplitude(&flat, 0.9).unwrap() < 1e-10);
    }
}
