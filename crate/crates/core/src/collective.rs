//! Collective-coordinate description of a single kink: the bare-kink family
//! `f(X)` interpolated from a traced PN curve, its effective mass, the
//! projector onto the kink direction, the reduced equation of motion and the
//! split of full configurations into `f(X)` plus a dressing `q`.
//!
//! All inner products carry the relative ion masses, `⟨u, v⟩ = Σ μ_k u_k v_k`,
//! so that the bare-kink kinetic energy is `½ M(X) Ẋ²`.

use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Configuration, Potential};
use crate::statics::PnCurve;
use crate::units::UnitSystem;

/// Natural cubic spline through strictly increasing knots.
#[derive(Debug, Clone)]
pub struct CubicSpline {
    x: Vec<f64>,
    y: Vec<f64>,
    /// Second derivatives at the knots.
    m: Vec<f64>,
}

impl CubicSpline {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        let n = x.len();
        if n < 3 || y.len() != n {
            return Err(Error::InvalidConfiguration(format!(
                "spline needs at least 3 knots, got {n}"
            )));
        }
        if x.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidConfiguration("spline knots must increase".into()));
        }
        // Thomas algorithm on the interior second derivatives
        let mut m = vec![0.0; n];
        let mut c = vec![0.0; n];
        let mut d = vec![0.0; n];
        for i in 1..n - 1 {
            let h0 = x[i] - x[i - 1];
            let h1 = x[i + 1] - x[i];
            let rhs = 6.0 * ((y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0);
            let diag = 2.0 * (h0 + h1) - h0 * c[i - 1];
            c[i] = h1 / diag;
            d[i] = (rhs - h0 * d[i - 1]) / diag;
        }
        for i in (1..n - 1).rev() {
            m[i] = d[i] - c[i] * m[i + 1];
        }
        Ok(CubicSpline { x, y, m })
    }

    pub fn range(&self) -> (f64, f64) {
        (self.x[0], self.x[self.x.len() - 1])
    }

    /// Value, first and second derivative.
    pub fn eval(&self, t: f64) -> Result<(f64, f64, f64)> {
        let (lo, hi) = self.range();
        if !(t >= lo && t <= hi) {
            return Err(Error::OutOfRange(t));
        }
        let k = self.x.partition_point(|v| *v <= t).clamp(1, self.x.len() - 1);
        Ok(self.eval_in(k - 1, t))
    }

    fn eval_in(&self, i: usize, t: f64) -> (f64, f64, f64) {
        let h = self.x[i + 1] - self.x[i];
        let a = (self.x[i + 1] - t) / h;
        let b = (t - self.x[i]) / h;
        let (m0, m1) = (self.m[i], self.m[i + 1]);
        let (y0, y1) = (self.y[i], self.y[i + 1]);
        let v = a * y0 + b * y1 + ((a * a * a - a) * m0 + (b * b * b - b) * m1) * h * h / 6.0;
        let d1 = (y1 - y0) / h + ((1.0 - 3.0 * a * a) * m0 + (3.0 * b * b - 1.0) * m1) * h / 6.0;
        let d2 = a * m0 + b * m1;
        (v, d1, d2)
    }
}

/// Which quantity plays the role of the kink inertia.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MassDefinition {
    /// `Σ μ_k f′_k²`, the coefficient of `½Ẋ²` in the bare-kink kinetic energy.
    #[default]
    Derivative,
    /// `Σ μ_k f_k²` as literally written for the inertia in the collective
    /// variable equations; kept for comparison only.
    Literal,
}

/// Bare-kink family `f(X)` and PN energy `U(X)` as splines of a PN curve.
#[derive(Debug, Clone)]
pub struct KinkTrajectory {
    f: Vec<CubicSpline>,
    u: CubicSpline,
    /// Relative mass per stacked coordinate.
    mu: Vec<f64>,
    pot: Potential,
    units: UnitSystem,
}

/// `f`, `f′` and `f″` at one kink position.
#[derive(Debug, Clone)]
pub struct BareKink {
    pub f: Vec<f64>,
    pub df: Vec<f64>,
    pub d2f: Vec<f64>,
}

impl KinkTrajectory {
    /// Knots closer than a quarter of the median spacing to the previous one
    /// are dropped; refinement points inserted at stationary points would
    /// otherwise make the spline derivatives noisy.
    pub fn from_curve(curve: &PnCurve) -> Result<Self> {
        let s = &curve.samples;
        if s.len() < 3 {
            return Err(Error::TooFewExtrema(s.len()));
        }
        let mut gaps: Vec<f64> = s.windows(2).map(|w| w[1].x - w[0].x).collect();
        gaps.sort_by(f64::total_cmp);
        let min_gap = 0.25 * gaps[gaps.len() / 2];
        let mut keep = vec![0];
        for k in 1..s.len() {
            let last = *keep.last().expect("non-empty");
            if s[k].x - s[last].x >= min_gap {
                keep.push(k);
            } else if k == s.len() - 1 {
                *keep.last_mut().expect("non-empty") = k;
            }
        }
        let xs: Vec<f64> = keep.iter().map(|&k| s[k].x).collect();
        let dim = s[0].config.len() * 2;
        let cols: Vec<Vec<f64>> = keep.iter().map(|&k| s[k].config.to_vector()).collect();
        let f = (0..dim)
            .map(|a| CubicSpline::new(xs.clone(), cols.iter().map(|c| c[a]).collect()))
            .collect::<Result<Vec<_>>>()?;
        let u = CubicSpline::new(xs, keep.iter().map(|&k| s[k].energy).collect())?;
        let pot = Potential::new(&curve.system);
        let n = curve.system.n_ions();
        let mu = (0..2 * n).map(|k| pot.masses()[k % n]).collect();
        Ok(KinkTrajectory {
            f,
            u,
            mu,
            pot,
            units: curve.units(),
        })
    }

    pub fn range(&self) -> (f64, f64) {
        self.u.range()
    }

    pub fn units(&self) -> &UnitSystem {
        &self.units
    }

    pub fn potential(&self) -> &Potential {
        &self.pot
    }

    pub fn masses(&self) -> &[f64] {
        &self.mu
    }

    pub fn bare(&self, x: f64) -> Result<BareKink> {
        let dim = self.f.len();
        let mut b = BareKink {
            f: vec![0.0; dim],
            df: vec![0.0; dim],
            d2f: vec![0.0; dim],
        };
        for (a, s) in self.f.iter().enumerate() {
            let (v, d1, d2) = s.eval(x)?;
            b.f[a] = v;
            b.df[a] = d1;
            b.d2f[a] = d2;
        }
        Ok(b)
    }

    pub fn config(&self, x: f64) -> Result<Configuration> {
        Ok(Configuration::from_vector(&self.bare(x)?.f))
    }

    /// `U(X)` relative to the kink-free crystal, and `U′(X)`.
    pub fn energy(&self, x: f64) -> Result<(f64, f64)> {
        let (v, d1, _) = self.u.eval(x)?;
        Ok((v, d1))
    }

    pub fn dot(&self, u: &[f64], v: &[f64]) -> f64 {
        u.iter().zip(v).zip(&self.mu).map(|((a, b), m)| m * a * b).sum()
    }

    pub fn effective_mass(&self, x: f64, def: MassDefinition) -> Result<f64> {
        let b = self.bare(x)?;
        Ok(match def {
            MassDefinition::Derivative => self.dot(&b.df, &b.df),
            MassDefinition::Literal => self.dot(&b.f, &b.f),
        })
    }

    /// `⟨f′, f″⟩`, half the slope of the effective mass.
    pub fn curvature(&self, x: f64) -> Result<f64> {
        let b = self.bare(x)?;
        Ok(self.dot(&b.df, &b.d2f))
    }

    pub fn projection(&self, x: f64) -> Result<Projection> {
        let b = self.bare(x)?;
        let m = self.dot(&b.df, &b.df);
        Ok(Projection {
            direction: b.df,
            mu: self.mu.clone(),
            mass: m,
        })
    }
}

/// Rank-one projector onto `f′(X)` under the mass-weighted inner product,
/// `P v = f′ ⟨f′, v⟩ / M`.
#[derive(Debug, Clone)]
pub struct Projection {
    direction: Vec<f64>,
    mu: Vec<f64>,
    mass: f64,
}

impl Projection {
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let c: f64 = self
            .direction
            .iter()
            .zip(v)
            .zip(&self.mu)
            .map(|((a, b), m)| m * a * b)
            .sum::<f64>()
            / self.mass;
        self.direction.iter().map(|d| c * d).collect()
    }

    /// `(1 − P) v`.
    pub fn complement(&self, v: &[f64]) -> Vec<f64> {
        let p = self.apply(v);
        v.iter().zip(p).map(|(a, b)| a - b).collect()
    }

    /// Matrix `P_ln = f′_l f′_n μ_n / M`.
    pub fn matrix(&self) -> DMatrix<f64> {
        let n = self.direction.len();
        DMatrix::from_fn(n, n, |l, k| {
            self.direction[l] * self.direction[k] * self.mu[k] / self.mass
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReducedSample {
    pub t: f64,
    pub x: f64,
    pub xdot: f64,
    /// `½ M Ẋ² + U`.
    pub energy: f64,
}

/// `M Ẍ + U′ + ⟨f′, f″⟩ Ẋ² = 0`, the kink equation with the dressing set to
/// zero, integrated by classical Runge-Kutta. All quantities scaled.
pub fn integrate_bare_kink(
    traj: &KinkTrajectory,
    x0: f64,
    v0: f64,
    duration: f64,
    dt: f64,
) -> Result<Vec<ReducedSample>> {
    if !(dt > 0.0) || !(duration >= 0.0) {
        return Err(Error::Config(format!("bad step {dt} or duration {duration}")));
    }
    let rhs = |x: f64, v: f64| -> Result<(f64, f64)> {
        let b = traj.bare(x)?;
        let m = traj.dot(&b.df, &b.df);
        let c = traj.dot(&b.df, &b.d2f);
        let (_, du) = traj.energy(x)?;
        Ok((v, -(du + c * v * v) / m))
    };
    let energy = |x: f64, v: f64| -> Result<f64> {
        let m = traj.effective_mass(x, MassDefinition::Derivative)?;
        Ok(0.5 * m * v * v + traj.energy(x)?.0)
    };
    let steps = (duration / dt).round() as usize;
    let mut out = Vec::with_capacity(steps + 1);
    let (mut x, mut v) = (x0, v0);
    out.push(ReducedSample {
        t: 0.0,
        x,
        xdot: v,
        energy: energy(x, v)?,
    });
    for k in 1..=steps {
        let (a1, b1) = rhs(x, v)?;
        let (a2, b2) = rhs(x + 0.5 * dt * a1, v + 0.5 * dt * b1)?;
        let (a3, b3) = rhs(x + 0.5 * dt * a2, v + 0.5 * dt * b2)?;
        let (a4, b4) = rhs(x + dt * a3, v + dt * b3)?;
        x += dt / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4);
        v += dt / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4);
        out.push(ReducedSample {
            t: k as f64 * dt,
            x,
            xdot: v,
            energy: energy(x, v)?,
        });
    }
    Ok(out)
}

/// Reduced trajectory as tab-separated SI columns `t, X, Xdot, E`.
pub fn write_reduced<W: Write>(samples: &[ReducedSample], units: &UnitSystem, mut out: W) -> Result<()> {
    writeln!(out, "t_s\tX_m\tXdot_m_per_s\tE_reduced_J")?;
    for s in samples {
        writeln!(
            out,
            "{:.12e}\t{:.12e}\t{:.12e}\t{:.12e}",
            units.time_to_si(s.t),
            units.length_to_si(s.x),
            units.velocity_to_si(s.xdot),
            units.energy_to_si(s.energy)
        )?;
    }
    Ok(())
}

/// A configuration split as `Q = f(X) + q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KinkFrame {
    pub x: f64,
    /// `⟨f′(X), Q̇⟩`, zero when no velocities were supplied.
    pub pi: f64,
    /// Dressing, stacked like the configuration.
    pub q: Vec<f64>,
    /// `⟨f(X), q⟩`; reported, not enforced.
    pub c1: f64,
    /// `⟨f′(X), q⟩`; enforced by the choice of X.
    pub c2: f64,
}

/// Find X with `⟨f′(X), Q − f(X)⟩ = 0`. Of several roots the one with the
/// smallest dressing norm wins. `q_full` must use the curve's ion labelling.
pub fn decompose(traj: &KinkTrajectory, q_full: &Configuration) -> Result<KinkFrame> {
    decompose_with_velocity(traj, q_full, None)
}

pub fn decompose_with_velocity(
    traj: &KinkTrajectory,
    q_full: &Configuration,
    velocity: Option<&[f64]>,
) -> Result<KinkFrame> {
    let big_q = q_full.to_vector();
    if big_q.len() != traj.mu.len() {
        return Err(Error::InvalidConfiguration(
            "ion count differs from the trajectory".into(),
        ));
    }
    let h = |x: f64| -> Result<f64> {
        let b = traj.bare(x)?;
        let d: Vec<f64> = big_q.iter().zip(&b.f).map(|(a, c)| a - c).collect();
        Ok(traj.dot(&b.df, &d))
    };
    let knots = traj.u.x.clone();
    let mut vals = Vec::with_capacity(knots.len());
    for &k in &knots {
        vals.push(h(k)?);
    }
    let mut best: Option<(f64, f64)> = None;
    for i in 0..knots.len() - 1 {
        let (a, b) = (knots[i], knots[i + 1]);
        let (fa, fb) = (vals[i], vals[i + 1]);
        let root = if fa == 0.0 {
            a
        } else if fa.signum() == fb.signum() {
            continue;
        } else {
            bracketed_root(&h, a, b, fa, fb)?
        };
        let f = traj.bare(root)?.f;
        let d: Vec<f64> = big_q.iter().zip(&f).map(|(a, c)| a - c).collect();
        let norm = traj.dot(&d, &d);
        if best.is_none_or(|(_, n)| norm < n) {
            best = Some((root, norm));
        }
    }
    let (x, _) = best.ok_or(Error::NoRoot)?;
    let b = traj.bare(x)?;
    let q: Vec<f64> = big_q.iter().zip(&b.f).map(|(a, c)| a - c).collect();
    let pi = velocity.map_or(0.0, |v| traj.dot(&b.df, v));
    Ok(KinkFrame {
        x,
        pi,
        c1: traj.dot(&b.f, &q),
        c2: traj.dot(&b.df, &q),
        q,
    })
}

/// Illinois regula falsi on a sign-changing bracket.
fn bracketed_root<F: Fn(f64) -> Result<f64>>(h: &F, mut a: f64, mut b: f64, mut fa: f64, mut fb: f64) -> Result<f64> {
    let mut side = 0;
    for _ in 0..200 {
        let c = (a * fb - b * fa) / (fb - fa);
        let fc = h(c)?;
        if fc == 0.0 || (b - a).abs() < 1e-15 * (1.0 + c.abs()) {
            return Ok(c);
        }
        if fc.signum() == fb.signum() {
            b = c;
            fb = fc;
            if side == -1 {
                fa *= 0.5;
            }
            side = -1;
        } else {
            a = c;
            fa = fc;
            if side == 1 {
                fb *= 0.5;
            }
            side = 1;
        }
        if fc.abs() < 1e-14 {
            return Ok(c);
        }
    }
    Ok(0.5 * (a + b))
}

/// Relabel a configuration of identical ions so that its axial order matches
/// the bare kink nearest to `x_guess`. Needed for MD snapshots, whose ions
/// may have exchanged places relative to the traced trajectory.
pub fn relabel_like(traj: &KinkTrajectory, q_full: &Configuration, x_guess: f64) -> Result<Configuration> {
    let n = q_full.len();
    let m0 = traj.mu[0];
    if traj.mu.iter().any(|m| (m - m0).abs() > 1e-12) {
        return Err(Error::InvalidSystem("relabelling needs identical ions".into()));
    }
    let (lo, hi) = traj.range();
    let target = traj.config(x_guess.clamp(lo, hi))?;
    let (_, slots) = target.sorted();
    let (sorted, _) = q_full.sorted();
    let mut z = vec![0.0; n];
    let mut x = vec![0.0; n];
    for (k, &slot) in slots.iter().enumerate() {
        z[slot] = sorted.z[k];
        x[slot] = sorted.x[k];
    }
    Configuration::new(z, x)
}

/// Residuals of the exact kink equations evaluated on a sampled trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionResidual {
    pub t: f64,
    pub x: f64,
    /// `M Ẍ + Σ f′_j ∂V/∂Q_j + ⟨f′, q̈⟩ + ⟨f′, f″⟩ Ẋ²` over the size of its largest term.
    pub kink: f64,
    /// `|(1 − P)(q̈ + f″ Ẋ² + ∇V/μ)|` over `|∇V/μ|`.
    pub dressing: f64,
}

/// Decompose equally spaced snapshots (scaled time step `dt`, curve
/// labelling) and evaluate both equations with central differences.
pub fn motion_residuals(traj: &KinkTrajectory, frames: &[Configuration], dt: f64) -> Result<Vec<MotionResidual>> {
    let parts = frames.iter().map(|c| decompose(traj, c)).collect::<Result<Vec<_>>>()?;
    let mut out = Vec::new();
    for k in 1..frames.len().saturating_sub(1) {
        let (p0, p1, p2) = (&parts[k - 1], &parts[k], &parts[k + 1]);
        let xd = (p2.x - p0.x) / (2.0 * dt);
        let xdd = (p2.x - 2.0 * p1.x + p0.x) / (dt * dt);
        let qdd: Vec<f64> = (0..p1.q.len())
            .map(|a| (p2.q[a] - 2.0 * p1.q[a] + p0.q[a]) / (dt * dt))
            .collect();
        let b = traj.bare(p1.x)?;
        let big_q = frames[k].to_vector();
        let grad = traj.pot.gradient(&big_q)?;
        let accel: Vec<f64> = grad.iter().zip(&traj.mu).map(|(g, m)| g / m).collect();
        let m = traj.dot(&b.df, &b.df);
        let terms = [
            m * xdd,
            traj.dot(&b.df, &accel),
            traj.dot(&b.df, &qdd),
            traj.dot(&b.df, &b.d2f) * xd * xd,
        ];
        let scale = terms.iter().fold(1e-300f64, |s, t| s.max(t.abs()));
        let kink = terms.iter().sum::<f64>().abs() / scale;
        let r: Vec<f64> = (0..qdd.len()).map(|a| qdd[a] + b.d2f[a] * xd * xd + accel[a]).collect();
        let proj = Projection {
            direction: b.df,
            mu: traj.mu.clone(),
            mass: m,
        };
        let rr = proj.complement(&r);
        let dressing = traj.dot(&rr, &rr).sqrt() / traj.dot(&accel, &accel).sqrt().max(1e-300);
        out.push(MotionResidual {
            t: k as f64 * dt,
            x: p1.x,
            kink,
            dressing,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spline_reproduces_cubic_interior() {
        // natural end conditions are exact for a function with zero end curvature
        let x: Vec<f64> = (0..41).map(|k| -1.0 + 0.05 * k as f64).collect();
        let f = |t: f64| (3.0 * t).sin();
        let s = CubicSpline::new(x.clone(), x.iter().map(|&t| f(t)).collect()).unwrap();
        let (v, d1, d2) = s.eval(0.123).unwrap();
        assert!((v - f(0.123)).abs() < 1e-5);
        assert!((d1 - 3.0 * (0.369f64).cos()).abs() < 1e-3);
        assert!((d2 + 9.0 * (0.369f64).sin()).abs() < 2e-2);
        assert!(matches!(s.eval(1.5), Err(Error::OutOfRange(_))));
    }

    #[test]
    fn spline_is_exact_for_lines() {
        let s = CubicSpline::new(vec![0.0, 0.3, 1.0, 2.5], vec![1.0, 1.6, 3.0, 6.0]).unwrap();
        let (v, d1, d2) = s.eval(1.7).unwrap();
        assert!((v - 4.4).abs() < 1e-12 && (d1 - 2.0).abs() < 1e-12 && d2.abs() < 1e-12);
    }
}
