//! Structure classification, kink counting and kink-centre functionals.
//!
//! Kinks are domain walls of the staggered transverse order parameter
//! `φ_j = (−1)^j x_j`. Odd kinks are located by the axis intercept of the
//! line through the two interface ions; extended and intermediate kinks by
//! the distortion-weighted mean of the axial bond lengths relative to a
//! kink-free reference crystal.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{axial_order, Configuration};
use crate::units::UnitSystem;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KinkKind {
    Odd,
    Extended,
    Intermediate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Structure {
    Linear,
    Zigzag,
    Kinked,
    Disordered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectedKink {
    pub kind: KinkKind,
    /// Centre position in scaled length units.
    pub centre: f64,
    /// Left ion of the interface pair (sorted index) for odd kinks.
    pub interface: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KinkReport {
    pub structure: Structure,
    pub kinks: Vec<DetectedKink>,
    /// Axial extent of the two-row region.
    pub zigzag_extent: Option<(f64, f64)>,
    /// Transverse row separation a and axial spacing b at the chain centre.
    pub spacing: (f64, f64),
    /// Ions above minus ions below the axis inside the two-row region.
    pub row_imbalance: i64,
}

impl KinkReport {
    pub fn n_kinks(&self) -> usize {
        self.kinks.len()
    }

    pub fn to_record(&self, t_seconds: f64, units: &UnitSystem) -> ReportRecord {
        ReportRecord {
            t: t_seconds,
            structure: self.structure,
            n_kinks: self.kinks.len(),
            kinks: self
                .kinks
                .iter()
                .map(|k| KinkRecord {
                    kind: k.kind,
                    x: units.length_to_si(k.centre),
                })
                .collect(),
            a: units.length_to_si(self.spacing.0),
            b: units.length_to_si(self.spacing.1),
        }
    }
}

/// One serialized detection frame; lengths in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRecord {
    pub t: f64,
    pub structure: Structure,
    pub n_kinks: usize,
    pub kinks: Vec<KinkRecord>,
    pub a: f64,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KinkRecord {
    pub kind: KinkKind,
    #[serde(rename = "X")]
    pub x: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorSettings {
    /// Ions count as displaced when |x| exceeds this fraction of the median
    /// |x| over the central third of the chain.
    pub threshold_fraction: f64,
    /// Absolute displacement floor as a fraction of the central axial spacing.
    pub linear_floor: f64,
    /// |a − b|/b below which a kink is classified as intermediate.
    pub intermediate_band: f64,
    /// Sign changes separated by at most this many ions merge into one cluster.
    pub cluster_gap: usize,
}

impl Default for DetectorSettings {
    fn default() -> Self {
        DetectorSettings {
            threshold_fraction: 0.3,
            linear_floor: 0.05,
            intermediate_band: 0.15,
            cluster_gap: 2,
        }
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

fn parity(j: usize) -> f64 {
    if j.is_multiple_of(2) {
        1.0
    } else {
        -1.0
    }
}

/// Axis intercept of the line through `(z1, p1)` and `(z2, p2)` with its
/// partial derivatives `(∂z1, ∂z2, ∂p1, ∂p2)`.
fn intercept(z1: f64, z2: f64, p1: f64, p2: f64) -> (f64, [f64; 4]) {
    let den = p2 - p1;
    let x = (z1 * p2 - z2 * p1) / den;
    let d2 = den * den;
    (x, [p2 / den, -p1 / den, p2 * (z1 - z2) / d2, p1 * (z2 - z1) / d2])
}

/// Odd-kink centre between sorted ions `j` and `j + 1`.
pub fn centre_odd(q: &Configuration, j: usize) -> Result<f64> {
    if j + 1 >= q.len() {
        return Err(Error::NotAKinkInterface(j, j + 1));
    }
    if q.x[j] * q.x[j + 1] <= 0.0 {
        return Err(Error::NotAKinkInterface(j, j + 1));
    }
    let p1 = parity(j) * q.x[j];
    let p2 = parity(j + 1) * q.x[j + 1];
    Ok(intercept(q.z[j], q.z[j + 1], p1, p2).0)
}

fn extended_sums(z: &[f64], reference: &[f64], bonds: std::ops::Range<usize>) -> (f64, f64) {
    let mut num = 0.0;
    let mut den = 0.0;
    for k in bonds {
        let d = (z[k + 1] - z[k]) - (reference[k + 1] - reference[k]);
        let w = d * d;
        num += 0.5 * (z[k] + z[k + 1]) * w;
        den += w;
    }
    (num, den)
}

/// Smallest denominator accepted by [`centre_extended`].
pub const DISTORTION_EPS: f64 = 1e-18;

/// Extended-kink centre: bond-midpoint average weighted by the squared change
/// of each axial bond relative to `reference`.
pub fn centre_extended(q: &Configuration, reference: &Configuration) -> Result<f64> {
    centre_extended_window(q, reference, 0..q.len().saturating_sub(1))
}

/// [`centre_extended`] restricted to the bonds `(k, k+1)` with `k` in `bonds`.
pub fn centre_extended_window(
    q: &Configuration,
    reference: &Configuration,
    bonds: std::ops::Range<usize>,
) -> Result<f64> {
    if reference.len() != q.len() {
        return Err(Error::InvalidConfiguration("reference size mismatch".into()));
    }
    let (num, den) = extended_sums(&q.z, &reference.z, bonds);
    if den <= DISTORTION_EPS {
        return Err(Error::NoDistortion);
    }
    Ok(num / den)
}

/// Differentiable kink-centre functional g(Q) used as the constraint of the
/// adiabatic-trajectory problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CentreFunctional {
    /// Interface-line intercept. The interface is re-selected on every
    /// evaluation; the functional is continuous where the selection switches.
    Odd,
    /// Distortion-weighted average against the sorted kink-free axial
    /// coordinates.
    Extended { reference_z: Vec<f64> },
}

impl CentreFunctional {
    pub fn extended(reference: &Configuration) -> Self {
        let mut z = reference.z.clone();
        z.sort_by(f64::total_cmp);
        CentreFunctional::Extended { reference_z: z }
    }

    pub fn kind(&self) -> KinkKind {
        match self {
            CentreFunctional::Odd => KinkKind::Odd,
            CentreFunctional::Extended { .. } => KinkKind::Extended,
        }
    }

    pub fn value(&self, q: &[f64], anchor: Option<f64>) -> Result<f64> {
        self.eval(q, anchor, None)
    }

    /// Value and gradient with respect to the stacked coordinates.
    pub fn value_gradient(&self, q: &[f64], anchor: Option<f64>, grad: &mut [f64]) -> Result<f64> {
        self.eval(q, anchor, Some(grad))
    }

    pub fn of_config(&self, q: &Configuration) -> Result<f64> {
        self.value(&q.to_vector(), None)
    }

    fn eval(&self, q: &[f64], anchor: Option<f64>, grad: Option<&mut [f64]>) -> Result<f64> {
        let n = q.len() / 2;
        let (z, x) = q.split_at(n);
        let order = axial_order(z);
        let zs: Vec<f64> = order.iter().map(|&i| z[i]).collect();
        match self {
            CentreFunctional::Odd => {
                let phi: Vec<f64> = order.iter().enumerate().map(|(s, &i)| parity(s) * x[i]).collect();
                let scale = max_abs(&phi);
                let mut best: Option<(f64, usize, f64, [f64; 4])> = None;
                for s in 0..n.saturating_sub(1) {
                    let (p1, p2) = (phi[s], phi[s + 1]);
                    if p1 * p2 > 0.0 || (p1 - p2).abs() <= 0.05 * scale {
                        continue;
                    }
                    let (xc, d) = intercept(zs[s], zs[s + 1], p1, p2);
                    let score = match anchor {
                        Some(a) => -(xc - a).abs(),
                        None => (p1 - p2).abs(),
                    };
                    if best.as_ref().is_none_or(|b| score > b.0) {
                        best = Some((score, s, xc, d));
                    }
                }
                let (_, s, xc, d) = best.ok_or(Error::ConstraintSingular(0.0))?;
                if let Some(g) = grad {
                    g.iter_mut().for_each(|v| *v = 0.0);
                    let (i1, i2) = (order[s], order[s + 1]);
                    g[i1] = d[0];
                    g[i2] = d[1];
                    g[n + i1] = d[2] * parity(s);
                    g[n + i2] = d[3] * parity(s + 1);
                }
                Ok(xc)
            }
            CentreFunctional::Extended { reference_z } => {
                if reference_z.len() != n {
                    return Err(Error::InvalidConfiguration("reference size mismatch".into()));
                }
                let (num, den) = extended_sums(&zs, reference_z, 0..n.saturating_sub(1));
                if den <= DISTORTION_EPS {
                    return Err(Error::NoDistortion);
                }
                let xc = num / den;
                if let Some(g) = grad {
                    g.iter_mut().for_each(|v| *v = 0.0);
                    for k in 0..n - 1 {
                        let d = (zs[k + 1] - zs[k]) - (reference_z[k + 1] - reference_z[k]);
                        let w = d * d;
                        let mid = 0.5 * (zs[k] + zs[k + 1]);
                        // ∂X = (∂num − X ∂den) / den
                        let dw = 2.0 * d;
                        let c_hi = 0.5 * w + (mid - xc) * dw;
                        let c_lo = 0.5 * w - (mid - xc) * dw;
                        g[order[k + 1]] += c_hi / den;
                        g[order[k]] += c_lo / den;
                    }
                }
                Ok(xc)
            }
        }
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Classify the crystal structure and locate kinks with default settings.
pub fn detect(q: &Configuration, reference: Option<&Configuration>) -> KinkReport {
    detect_with(q, reference, &DetectorSettings::default())
}

pub fn detect_with(q: &Configuration, reference: Option<&Configuration>, settings: &DetectorSettings) -> KinkReport {
    let (q, _) = if q.is_sorted() {
        (q.clone(), Vec::new())
    } else {
        q.sorted()
    };
    let reference = reference.map(|r| if r.is_sorted() { r.clone() } else { r.sorted().0 });
    let n = q.len();
    let empty = |structure, spacing| KinkReport {
        structure,
        kinks: Vec::new(),
        zigzag_extent: None,
        spacing,
        row_imbalance: 0,
    };
    if n < 2 {
        return empty(Structure::Linear, (0.0, 0.0));
    }

    let (lo, hi) = central_range(n);
    let b = median((lo..hi.min(n - 1)).map(|k| q.z[k + 1] - q.z[k]).collect());
    let a = median((lo..hi.min(n - 1)).map(|k| (q.x[k + 1] - q.x[k]).abs()).collect());
    let med_x = median((lo..hi).map(|k| q.x[k].abs()).collect());
    let threshold = (settings.threshold_fraction * med_x).max(settings.linear_floor * b);

    let displaced: Vec<usize> = (0..n).filter(|&k| q.x[k].abs() > threshold).collect();
    if displaced.len() < 2 {
        return empty(Structure::Linear, (a, b));
    }
    let extent = (q.z[displaced[0]], q.z[*displaced.last().unwrap()]);
    let row_imbalance = displaced.iter().map(|&k| if q.x[k] > 0.0 { 1i64 } else { -1 }).sum();

    // sign changes of φ between consecutive displaced ions: (left, right)
    let changes: Vec<(usize, usize)> = displaced
        .windows(2)
        .filter(|w| parity(w[0]) * q.x[w[0]] * parity(w[1]) * q.x[w[1]] < 0.0)
        .map(|w| (w[0], w[1]))
        .collect();

    let mut clusters: Vec<Vec<(usize, usize)>> = Vec::new();
    for c in changes.iter().copied() {
        match clusters.last_mut() {
            Some(last) if c.0 <= last.last().unwrap().1 + settings.cluster_gap => last.push(c),
            _ => clusters.push(vec![c]),
        }
    }

    let disordered = changes.len() > 2 && changes.len() * 4 > displaced.len();
    let kind = {
        let rel = (a - b) / b;
        if rel.abs() < settings.intermediate_band {
            KinkKind::Intermediate
        } else if a < b {
            KinkKind::Odd
        } else {
            KinkKind::Extended
        }
    };

    let spans: Vec<(usize, usize)> = clusters
        .iter()
        .filter(|c| c.len() % 2 == 1)
        .map(|c| (c[0].0, c.last().unwrap().1))
        .collect();

    let mut kinks = Vec::with_capacity(spans.len());
    for &(left, right) in &spans {
        let kink = match kind {
            KinkKind::Odd => {
                let interface = (left..right).filter(|&k| q.x[k] * q.x[k + 1] > 0.0).max_by(|&i, &j| {
                    let si = q.x[i].abs() + q.x[i + 1].abs();
                    let sj = q.x[j].abs() + q.x[j + 1].abs();
                    si.total_cmp(&sj)
                });
                match interface.and_then(|j| centre_odd(&q, j).ok().map(|c| (j, c))) {
                    Some((j, c)) => DetectedKink {
                        kind,
                        centre: c,
                        interface: Some(j),
                    },
                    None => DetectedKink {
                        kind,
                        centre: 0.5 * (q.z[left] + q.z[right]),
                        interface: None,
                    },
                }
            }
            _ => {
                let centre = reference
                    .as_ref()
                    .and_then(|r| {
                        if spans.len() == 1 {
                            centre_extended(&q, r).ok()
                        } else {
                            let w = 6;
                            let bonds = left.saturating_sub(w)..(right + w).min(n - 1);
                            centre_extended_window(&q, r, bonds).ok()
                        }
                    })
                    .unwrap_or(0.5 * (q.z[left] + q.z[right]));
                DetectedKink {
                    kind,
                    centre,
                    interface: None,
                }
            }
        };
        kinks.push(kink);
    }

    let structure = if disordered {
        Structure::Disordered
    } else if kinks.is_empty() {
        Structure::Zigzag
    } else {
        Structure::Kinked
    };
    KinkReport {
        structure,
        kinks,
        zigzag_extent: Some(extent),
        spacing: (a, b),
        row_imbalance,
    }
}

/// Index range of the central third of an `n`-ion chain.
fn central_range(n: usize) -> (usize, usize) {
    let lo = n / 3;
    let hi = (2 * n).div_ceil(3).max(lo + 1);
    (lo, hi.min(n))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(z: &[f64], x: &[f64]) -> Configuration {
        Configuration::new(z.to_vec(), x.to_vec()).unwrap()
    }

    #[test]
    fn odd_centre_symmetric_interface() {
        // sorted indices 2,3 form the interface (j even)
        let q = cfg(&[-3.0, -2.0, -0.5, 0.5, 2.0, 3.0], &[0.3, -0.3, 0.2, 0.2, -0.3, 0.3]);
        assert_eq!(centre_odd(&q, 2).unwrap(), 0.0);
    }

    #[test]
    fn odd_centre_direct_substitution() {
        let u = 0.1;
        let q = cfg(&[0.0, 1.0, 2.0], &[2.0 * u, u, -0.3]);
        assert!((centre_odd(&q, 0).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn odd_centre_rejects_alternating_pair() {
        let q = cfg(&[0.0, 1.0], &[0.2, -0.2]);
        assert_eq!(centre_odd(&q, 0), Err(Error::NotAKinkInterface(0, 1)));
    }

    #[test]
    fn extended_centre_needs_distortion() {
        let q = cfg(&[-1.0, 0.0, 1.0, 2.0], &[0.0; 4]);
        assert_eq!(centre_extended(&q, &q), Err(Error::NoDistortion));
    }

    #[test]
    fn extended_centre_single_bond() {
        let r = cfg(&[-1.0, 0.0, 1.0, 2.0], &[0.0; 4]);
        // stretch bond (1,2) only: shift ions 2 and 3 together
        let q = cfg(&[-1.0, 0.0, 1.3, 2.3], &[0.0; 4]);
        assert!((centre_extended(&q, &r).unwrap() - 0.65).abs() < 1e-15);
    }

    #[test]
    fn functional_gradients_match_differences() {
        let z = [-2.1, -1.3, -0.45, 0.4, 1.25, 2.2];
        let x = [0.35, -0.4, 0.12, 0.2, -0.41, 0.33];
        let reference = [-2.0, -1.2, -0.4, 0.4, 1.2, 2.0];
        let q: Vec<f64> = z.iter().chain(x.iter()).copied().collect();
        for g in [
            CentreFunctional::Odd,
            CentreFunctional::Extended {
                reference_z: reference.to_vec(),
            },
        ] {
            let mut grad = vec![0.0; 12];
            g.value_gradient(&q, None, &mut grad).unwrap();
            for k in 0..12 {
                let h = 1e-6;
                let mut qp = q.clone();
                let mut qm = q.clone();
                qp[k] += h;
                qm[k] -= h;
                let fd = (g.value(&qp, None).unwrap() - g.value(&qm, None).unwrap()) / (2.0 * h);
                assert!((fd - grad[k]).abs() < 1e-7, "{g:?} k={k} fd={fd} an={}", grad[k]);
            }
        }
    }

    fn zigzag(n: usize, amp: f64, flip_from: Option<usize>) -> Configuration {
        let z: Vec<f64> = (0..n).map(|j| j as f64 - (n - 1) as f64 / 2.0).collect();
        let x: Vec<f64> = (0..n)
            .map(|j| {
                let s = parity(j) * amp;
                match flip_from {
                    Some(f) if j >= f => -s,
                    _ => s,
                }
            })
            .collect();
        cfg(&z, &x)
    }

    #[test]
    fn linear_zigzag_and_kinked() {
        let lin = zigzag(12, 0.0, None);
        assert_eq!(detect(&lin, None).structure, Structure::Linear);
        let zz = zigzag(12, 0.3, None);
        let r = detect(&zz, None);
        assert_eq!(r.structure, Structure::Zigzag);
        assert_eq!(r.n_kinks(), 0);
        let k = zigzag(12, 0.3, Some(6));
        let r = detect(&k, None);
        assert_eq!(r.structure, Structure::Kinked);
        assert_eq!(r.n_kinks(), 1);
        assert_eq!(r.kinks[0].kind, KinkKind::Odd);
        assert_eq!(r.kinks[0].interface, Some(5));
        assert!(r.kinks[0].centre.abs() < 1e-12);
    }

    #[test]
    fn mirror_negates_centre() {
        let mut k = zigzag(12, 0.3, Some(6));
        k.x[5] = 0.1;
        k.z[4] -= 0.1;
        let c = detect(&k, None).kinks[0].centre;
        let m = detect(&k.reversed_z(), None).kinks[0].centre;
        assert_eq!(c, -m);
    }

    #[test]
    fn record_serializes() {
        let k = zigzag(12, 0.3, Some(6));
        let units = UnitSystem::new(172.0, 24.6e3);
        let rec = detect(&k, None).to_record(1e-6, &units);
        let s = serde_json::to_string(&rec).unwrap();
        assert!(s.contains("\"n_kinks\":1") && s.contains("\"X\":") && s.contains("\"structure\":\"kinked\""));
    }
}
