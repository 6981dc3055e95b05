//! Ion system definition, crystal configurations and the trap + Coulomb
//! potential with its exact gradient and Hessian.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units::{UnitSystem, YB172_MASS_AMU};

/// How the axial confinement of an ion depends on its mass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AxialMassScaling {
    /// Axial and radial terms both carry `m²/m_j`: a lone ion oscillates at
    /// `ν·m/m_j` in both directions.
    #[default]
    Paper,
    /// Mass-independent dc axial spring: a lone ion oscillates axially at
    /// `ν_z·sqrt(m/m_j)`.
    Static,
}

/// Ions, trap frequencies and applied field. Frequencies refer to an ion of
/// the reference mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IonSystem {
    /// Ion masses in amu, indexed by ion identity.
    pub masses: Vec<f64>,
    pub reference_mass: f64,
    /// Charge of every ion in units of e. Only singly charged ions are modelled.
    pub charge: i32,
    pub nu_z: f64,
    pub nu_x: f64,
    /// Uniform dc field along x, V/m.
    pub e_field_x: f64,
    pub axial_mass_scaling: AxialMassScaling,
}

impl IonSystem {
    pub fn new(masses: Vec<f64>, nu_z: f64, nu_x: f64) -> Result<Self> {
        let sys = IonSystem {
            masses,
            reference_mass: YB172_MASS_AMU,
            charge: 1,
            nu_z,
            nu_x,
            e_field_x: 0.0,
            axial_mass_scaling: AxialMassScaling::Paper,
        };
        sys.validate()?;
        Ok(sys)
    }

    /// `n` reference-mass ions.
    pub fn uniform(n: usize, nu_z: f64, nu_x: f64) -> Result<Self> {
        Self::new(vec![YB172_MASS_AMU; n], nu_z, nu_x)
    }

    pub fn validate(&self) -> Result<()> {
        if self.masses.is_empty() {
            return Err(Error::InvalidSystem("need at least one ion".into()));
        }
        if let Some(m) = self.masses.iter().find(|m| !(m.is_finite() && **m > 0.0)) {
            return Err(Error::InvalidSystem(format!("mass {m} is not positive")));
        }
        if !(self.reference_mass.is_finite() && self.reference_mass > 0.0) {
            return Err(Error::InvalidSystem("reference mass must be positive".into()));
        }
        if !(self.nu_z.is_finite() && self.nu_z > 0.0 && self.nu_x.is_finite() && self.nu_x > 0.0) {
            return Err(Error::InvalidSystem("trap frequencies must be positive".into()));
        }
        if self.charge != 1 {
            return Err(Error::InvalidSystem("only singly charged ions are supported".into()));
        }
        if !self.e_field_x.is_finite() {
            return Err(Error::InvalidSystem("electric field must be finite".into()));
        }
        Ok(())
    }

    pub fn n_ions(&self) -> usize {
        self.masses.len()
    }

    pub fn units(&self) -> UnitSystem {
        UnitSystem::new(self.reference_mass, self.nu_z)
    }

    pub fn with_nu_x(mut self, nu_x: f64) -> Self {
        self.nu_x = nu_x;
        self
    }

    pub fn with_e_field(mut self, e_field_x: f64) -> Self {
        self.e_field_x = e_field_x;
        self
    }

    pub fn with_scaling(mut self, scaling: AxialMassScaling) -> Self {
        self.axial_mass_scaling = scaling;
        self
    }

    /// Replace the ion at `site` (0-based from the left end) by a mass defect.
    pub fn with_defect(mut self, site: usize, mass: f64) -> Result<Self> {
        if site >= self.masses.len() {
            return Err(Error::InvalidSystem(format!(
                "defect site {site} outside chain of {} ions",
                self.masses.len()
            )));
        }
        self.masses[site] = mass;
        self.validate()?;
        Ok(self)
    }

    /// Masses relative to the reference mass.
    pub fn relative_masses(&self) -> Vec<f64> {
        self.masses.iter().map(|m| m / self.reference_mass).collect()
    }
}

/// Planar crystal configuration in scaled length units, ions sorted by axial
/// position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Configuration {
    pub z: Vec<f64>,
    pub x: Vec<f64>,
}

impl Configuration {
    pub fn new(z: Vec<f64>, x: Vec<f64>) -> Result<Self> {
        if z.len() != x.len() {
            return Err(Error::InvalidConfiguration(format!(
                "{} axial vs {} transverse coordinates",
                z.len(),
                x.len()
            )));
        }
        if z.iter().chain(x.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfiguration("non-finite coordinate".into()));
        }
        Ok(Configuration { z, x })
    }

    /// Build from the stacked layout `(z_1..z_N, x_1..x_N)`.
    pub fn from_vector(q: &[f64]) -> Self {
        let n = q.len() / 2;
        Configuration {
            z: q[..n].to_vec(),
            x: q[n..2 * n].to_vec(),
        }
    }

    pub fn to_vector(&self) -> Vec<f64> {
        let mut q = Vec::with_capacity(2 * self.z.len());
        q.extend_from_slice(&self.z);
        q.extend_from_slice(&self.x);
        q
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    pub fn is_sorted(&self) -> bool {
        self.z.windows(2).all(|w| w[0] <= w[1])
    }

    /// Axially sorted copy and the permutation `order[slot] = old index`.
    pub fn sorted(&self) -> (Configuration, Vec<usize>) {
        let order = axial_order(&self.z);
        let z = order.iter().map(|&i| self.z[i]).collect();
        let x = order.iter().map(|&i| self.x[i]).collect();
        (Configuration { z, x }, order)
    }

    /// Smallest pairwise distance, with the offending pair.
    pub fn min_separation(&self) -> (f64, usize, usize) {
        let mut best = (f64::INFINITY, 0, 0);
        for i in 0..self.len() {
            for j in i + 1..self.len() {
                let r = (self.z[j] - self.z[i]).hypot(self.x[j] - self.x[i]);
                if r < best.0 {
                    best = (r, i, j);
                }
            }
        }
        best
    }

    /// Mirror image under x → −x.
    pub fn mirrored_x(&self) -> Configuration {
        Configuration {
            z: self.z.clone(),
            x: self.x.iter().map(|v| -v).collect(),
        }
    }

    /// Mirror image under z → −z, re-sorted.
    pub fn reversed_z(&self) -> Configuration {
        Configuration {
            z: self.z.iter().rev().map(|v| -v).collect(),
            x: self.x.iter().rev().copied().collect(),
        }
    }
}

/// Stable ordering of indices by axial coordinate.
pub fn axial_order(z: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..z.len()).collect();
    order.sort_by(|&a, &b| z[a].total_cmp(&z[b]));
    order
}

/// Scaled trap + Coulomb potential for a fixed ion ordering.
///
/// Coordinates use the stacked layout `(z_1..z_N, x_1..x_N)`; the slot masses
/// may be permuted when the ion order changes during dynamics.
#[derive(Debug, Clone)]
pub struct Potential {
    n: usize,
    /// Relative mass m_j/m per slot.
    mass: Vec<f64>,
    /// Radial spring constant per slot for ω_x = ω_z.
    radial_unit: Vec<f64>,
    axial: Vec<f64>,
    /// (ω_x/ω_z)².
    beta2: f64,
    /// Field force on each ion in units of m ω_z² ℓ.
    field: f64,
    scaling: AxialMassScaling,
}

impl Potential {
    pub fn new(sys: &IonSystem) -> Self {
        let units = sys.units();
        let mass = sys.relative_masses();
        let mut pot = Potential {
            n: mass.len(),
            mass: Vec::new(),
            radial_unit: Vec::new(),
            axial: Vec::new(),
            beta2: (sys.nu_x / sys.nu_z).powi(2),
            field: units.field_from_si(sys.e_field_x),
            scaling: sys.axial_mass_scaling,
        };
        pot.set_masses(mass);
        pot
    }

    /// Potential for the ions listed by `ids` (slot → ion identity).
    pub fn with_ids(sys: &IonSystem, ids: &[usize]) -> Self {
        let mut pot = Potential::new(sys);
        let rel = sys.relative_masses();
        pot.set_masses(ids.iter().map(|&i| rel[i]).collect());
        pot
    }

    pub fn set_masses(&mut self, mass: Vec<f64>) {
        self.radial_unit = mass.iter().map(|m| 1.0 / m).collect();
        self.axial = match self.scaling {
            AxialMassScaling::Paper => mass.iter().map(|m| 1.0 / m).collect(),
            AxialMassScaling::Static => vec![1.0; mass.len()],
        };
        self.n = mass.len();
        self.mass = mass;
    }

    /// Apply a slot permutation `order[new] = old` to the mass tables.
    pub fn permute(&mut self, order: &[usize]) {
        let mass = order.iter().map(|&i| self.mass[i]).collect();
        self.set_masses(mass);
    }

    pub fn n_ions(&self) -> usize {
        self.n
    }

    pub fn masses(&self) -> &[f64] {
        &self.mass
    }

    pub fn beta2(&self) -> f64 {
        self.beta2
    }

    pub fn set_beta2(&mut self, beta2: f64) {
        self.beta2 = beta2;
    }

    pub fn field(&self) -> f64 {
        self.field
    }

    pub fn set_field(&mut self, field: f64) {
        self.field = field;
    }

    /// Trap-only energy (no Coulomb term).
    pub fn trap_energy(&self, q: &[f64]) -> f64 {
        let (z, x) = q.split_at(self.n);
        let mut e = 0.0;
        for j in 0..self.n {
            e += 0.5 * (self.beta2 * self.radial_unit[j] * x[j] * x[j] + self.axial[j] * z[j] * z[j])
                - self.field * x[j];
        }
        e
    }

    pub fn coulomb_energy(&self, q: &[f64]) -> Result<f64> {
        let (z, x) = q.split_at(self.n);
        let mut e = 0.0;
        for i in 0..self.n {
            for j in i + 1..self.n {
                let dz = z[j] - z[i];
                let dx = x[j] - x[i];
                let r2 = dz * dz + dx * dx;
                if r2 == 0.0 {
                    return Err(Error::CoincidentIons(i, j));
                }
                e += 1.0 / r2.sqrt();
            }
        }
        Ok(e)
    }

    pub fn energy(&self, q: &[f64]) -> Result<f64> {
        Ok(self.trap_energy(q) + self.coulomb_energy(q)?)
    }

    /// Energy and gradient in one pass; `grad` is overwritten.
    pub fn energy_gradient(&self, q: &[f64], grad: &mut [f64]) -> Result<f64> {
        let n = self.n;
        let (z, x) = q.split_at(n);
        let (gz, gx) = grad.split_at_mut(n);
        let mut e = 0.0;
        for j in 0..n {
            let kx = self.beta2 * self.radial_unit[j];
            gz[j] = self.axial[j] * z[j];
            gx[j] = kx * x[j] - self.field;
            e += 0.5 * (kx * x[j] * x[j] + self.axial[j] * z[j] * z[j]) - self.field * x[j];
        }
        for i in 0..n {
            let (zi, xi) = (z[i], x[i]);
            let (mut fzi, mut fxi) = (0.0, 0.0);
            for j in i + 1..n {
                let dz = z[j] - zi;
                let dx = x[j] - xi;
                let r2 = dz * dz + dx * dx;
                if r2 == 0.0 {
                    return Err(Error::CoincidentIons(i, j));
                }
                let inv_r = 1.0 / r2.sqrt();
                let inv_r3 = inv_r * inv_r * inv_r;
                e += inv_r;
                // d(1/r)/dz_i = dz/r³
                fzi += dz * inv_r3;
                fxi += dx * inv_r3;
                gz[j] -= dz * inv_r3;
                gx[j] -= dx * inv_r3;
            }
            gz[i] += fzi;
            gx[i] += fxi;
        }
        Ok(e)
    }

    pub fn gradient(&self, q: &[f64]) -> Result<Vec<f64>> {
        let mut g = vec![0.0; q.len()];
        self.energy_gradient(q, &mut g)?;
        Ok(g)
    }

    /// Exact second derivatives, assembled symmetrically.
    pub fn hessian(&self, q: &[f64]) -> Result<DMatrix<f64>> {
        let n = self.n;
        let (z, x) = q.split_at(n);
        let mut h = DMatrix::zeros(2 * n, 2 * n);
        for j in 0..n {
            h[(j, j)] = self.axial[j];
            h[(n + j, n + j)] = self.beta2 * self.radial_unit[j];
        }
        for i in 0..n {
            for j in i + 1..n {
                let d = [z[j] - z[i], x[j] - x[i]];
                let r2 = d[0] * d[0] + d[1] * d[1];
                if r2 == 0.0 {
                    return Err(Error::CoincidentIons(i, j));
                }
                let inv_r = 1.0 / r2.sqrt();
                let inv_r3 = inv_r * inv_r * inv_r;
                let inv_r5 = inv_r3 * inv_r * inv_r;
                let idx_i = [i, n + i];
                let idx_j = [j, n + j];
                for a in 0..2 {
                    for b in a..2 {
                        let delta = if a == b { 1.0 } else { 0.0 };
                        let k = 3.0 * (d[a] * d[b]) * inv_r5 - delta * inv_r3;
                        for (p, r) in [(a, b), (b, a)].into_iter().take(if a == b { 1 } else { 2 }) {
                            h[(idx_i[p], idx_i[r])] += k;
                            h[(idx_j[p], idx_j[r])] += k;
                            h[(idx_i[p], idx_j[r])] -= k;
                            h[(idx_j[p], idx_i[r])] -= k;
                        }
                    }
                }
            }
        }
        Ok(h)
    }
}

pub fn potential_energy(sys: &IonSystem, q: &Configuration) -> Result<f64> {
    Potential::new(sys).energy(&q.to_vector())
}

pub fn gradient(sys: &IonSystem, q: &Configuration) -> Result<Vec<f64>> {
    Potential::new(sys).gradient(&q.to_vector())
}

pub fn hessian(sys: &IonSystem, q: &Configuration) -> Result<DMatrix<f64>> {
    Potential::new(sys).hessian(&q.to_vector())
}

/// Normal modes from the mass-weighted Hessian. Frequencies are in Hz and
/// carry the sign of the eigenvalue (negative marks an unstable direction).
#[derive(Debug, Clone)]
pub struct NormalModes {
    pub frequencies_hz: Vec<f64>,
    /// Mass-weighted eigenvectors as columns, matching `frequencies_hz`.
    pub vectors: DMatrix<f64>,
}

impl NormalModes {
    pub fn lowest(&self) -> f64 {
        self.frequencies_hz[0]
    }
}

pub fn normal_modes(sys: &IonSystem, q: &Configuration) -> Result<NormalModes> {
    let pot = Potential::new(sys);
    let h = pot.hessian(&q.to_vector())?;
    Ok(modes_from_hessian(&h, pot.masses(), sys.nu_z))
}

pub(crate) fn modes_from_hessian(h: &DMatrix<f64>, masses: &[f64], nu_z: f64) -> NormalModes {
    let n = masses.len();
    let w: Vec<f64> = (0..2 * n).map(|k| 1.0 / masses[k % n].sqrt()).collect();
    let d = DMatrix::from_fn(2 * n, 2 * n, |a, b| h[(a, b)] * w[a] * w[b]);
    let eig = SymmetricEigen::new(d);
    let mut idx: Vec<usize> = (0..2 * n).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let frequencies_hz = idx
        .iter()
        .map(|&k| {
            let l = eig.eigenvalues[k];
            l.signum() * l.abs().sqrt() * nu_z
        })
        .collect();
    let vectors = DMatrix::from_fn(2 * n, 2 * n, |a, b| eig.eigenvectors[(a, idx[b])]);
    NormalModes {
        frequencies_hz,
        vectors,
    }
}

/// Equilibrium of the ions constrained to the trap axis (x = 0).
pub fn linear_chain(sys: &IonSystem) -> Result<Configuration> {
    let pot = Potential::new(&sys.clone().with_e_field(0.0));
    let n = sys.n_ions();
    // Initial spread from the large-N charge-density estimate.
    let half = (1.5 * (n as f64).powf(1.0 / 3.0) * (n as f64).ln().max(1.0).powf(1.0 / 3.0)).max(0.5);
    let mut z: Vec<f64> = (0..n)
        .map(|j| {
            if n == 1 {
                0.0
            } else {
                let u = -1.0 + 2.0 * j as f64 / (n - 1) as f64;
                half * (std::f64::consts::FRAC_PI_2 * u).sin()
            }
        })
        .collect();
    let mut q = vec![0.0; 2 * n];
    let mut g = vec![0.0; 2 * n];
    for iter in 0..200 {
        q[..n].copy_from_slice(&z);
        let e0 = pot.energy_gradient(&q, &mut g)?;
        let gmax = g[..n].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if gmax < 1e-12 {
            let mut x = vec![0.0; n];
            if sys.e_field_x != 0.0 {
                // Uniform field shifts each ion by F/k_j when the chain stays linear.
                let full = Potential::new(sys);
                for (j, xj) in x.iter_mut().enumerate() {
                    *xj = full.field() / (full.beta2() * full.radial_unit[j]);
                }
            }
            return Configuration::new(z, x);
        }
        let h = pot.hessian(&q)?;
        let hz = h.view((0, 0), (n, n)).into_owned();
        let step = match hz.clone().cholesky() {
            Some(c) => c.solve(&DVector::from_column_slice(&g[..n])),
            None => DVector::from_column_slice(&g[..n]) * 0.01,
        };
        let mut alpha = 1.0;
        loop {
            let trial: Vec<f64> = z.iter().zip(step.iter()).map(|(a, s)| a - alpha * s).collect();
            let mut qt = q.clone();
            qt[..n].copy_from_slice(&trial);
            let ok = trial.windows(2).all(|w| w[0] < w[1]);
            if ok {
                if let Ok(e1) = pot.energy(&qt) {
                    if e1 <= e0 + 1e-12 * e0.abs() || gmax < 1e-6 {
                        z = trial;
                        break;
                    }
                }
            }
            alpha *= 0.5;
            if alpha < 1e-12 {
                return Err(Error::NoConvergence {
                    iterations: iter,
                    residual: gmax,
                });
            }
        }
    }
    Err(Error::NoConvergence {
        iterations: 200,
        residual: f64::NAN,
    })
}

/// Lowest transverse mode frequency (Hz, signed) of the axis-bound chain.
pub fn lowest_transverse_mode(sys: &IonSystem) -> Result<f64> {
    let chain = linear_chain(&sys.clone().with_e_field(0.0))?;
    let pot = Potential::new(sys);
    let n = sys.n_ions();
    let h = pot.hessian(&chain.to_vector())?;
    let hx = h.view((n, n), (n, n)).into_owned();
    let w: Vec<f64> = pot.masses().iter().map(|m| 1.0 / m.sqrt()).collect();
    let d = DMatrix::from_fn(n, n, |a, b| hx[(a, b)] * w[a] * w[b]);
    let l = SymmetricEigen::new(d).eigenvalues.min();
    Ok(l.signum() * l.abs().sqrt() * sys.nu_z)
}

/// Transverse frequency at which the linear chain's zigzag mode softens to
/// zero, found by bisection on the lowest transverse mode.
pub fn critical_nu_x(sys: &IonSystem) -> Result<f64> {
    let mut lo = sys.nu_z * 0.1;
    let mut hi = sys.nu_z * 4.0 * sys.n_ions() as f64;
    if lowest_transverse_mode(&sys.clone().with_nu_x(hi))? <= 0.0 {
        return Err(Error::NoConvergence {
            iterations: 0,
            residual: hi,
        });
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if lowest_transverse_mode(&sys.clone().with_nu_x(mid))? > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        if (hi - lo) < 1e-9 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}
