//! Damped Newton minimization with eigenvalue-modified Hessians.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::model::Potential;

pub trait Objective {
    /// Value and gradient; `grad` is overwritten.
    fn energy_gradient(&self, q: &[f64], grad: &mut [f64]) -> Result<f64>;
    fn hessian(&self, q: &[f64]) -> Result<DMatrix<f64>>;

    fn energy(&self, q: &[f64]) -> Result<f64> {
        let mut g = vec![0.0; q.len()];
        self.energy_gradient(q, &mut g)
    }
}

impl Objective for Potential {
    fn energy_gradient(&self, q: &[f64], grad: &mut [f64]) -> Result<f64> {
        Potential::energy_gradient(self, q, grad)
    }

    fn hessian(&self, q: &[f64]) -> Result<DMatrix<f64>> {
        Potential::hessian(self, q)
    }

    fn energy(&self, q: &[f64]) -> Result<f64> {
        Potential::energy(self, q)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct NewtonOptions {
    /// Convergence threshold on the max-norm of the gradient.
    pub tol: f64,
    pub max_iter: usize,
    /// Largest coordinate change per iteration.
    pub max_step: f64,
    /// Push off stationary points that have a negative Hessian eigenvalue.
    pub escape_saddles: bool,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            tol: 1e-9,
            max_iter: 2000,
            max_step: 0.2,
            escape_saddles: true,
        }
    }
}

pub(crate) fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Apply `(|H|)⁻¹` to `rhs`, flooring tiny eigenvalues.
pub(crate) fn modified_solve(eig: &SymmetricEigen<f64, nalgebra::Dyn>, rhs: &DVector<f64>) -> DVector<f64> {
    let scale = eig.eigenvalues.iter().fold(1.0f64, |m, l| m.max(l.abs()));
    let floor = 1e-10 * scale;
    let coeffs = eig.eigenvectors.transpose() * rhs;
    let scaled = DVector::from_iterator(
        coeffs.len(),
        coeffs
            .iter()
            .zip(eig.eigenvalues.iter())
            .map(|(c, l)| c / l.abs().max(floor)),
    );
    &eig.eigenvectors * scaled
}

pub fn newton_minimize<O: Objective>(obj: &O, q0: &[f64], opts: &NewtonOptions) -> Result<Vec<f64>> {
    let dim = q0.len();
    let mut q = q0.to_vec();
    let mut g = vec![0.0; dim];
    let mut e = obj.energy_gradient(&q, &mut g)?;
    let mut escapes = 0;
    let mut gt = vec![0.0; dim];

    for _ in 0..opts.max_iter {
        let gmax = max_abs(&g);
        let h = obj.hessian(&q)?;
        let eig = SymmetricEigen::new(h);

        if gmax < opts.tol {
            if !opts.escape_saddles || escapes >= 50 {
                return Ok(q);
            }
            let (kmin, lmin) = eig
                .eigenvalues
                .iter()
                .enumerate()
                .fold((0, f64::INFINITY), |b, (k, &l)| if l < b.1 { (k, l) } else { b });
            if lmin > -1e-7 {
                return Ok(q);
            }
            escapes += 1;
            let v = eig.eigenvectors.column(kmin);
            let mut best: Option<(f64, Vec<f64>)> = None;
            for amp in [0.05, 0.01, 0.002] {
                for sign in [1.0, -1.0] {
                    let trial: Vec<f64> = q.iter().zip(v.iter()).map(|(a, b)| a + sign * amp * b).collect();
                    if let Ok(et) = obj.energy(&trial) {
                        if et < e && best.as_ref().is_none_or(|b| et < b.0) {
                            best = Some((et, trial));
                        }
                    }
                }
                if best.is_some() {
                    break;
                }
            }
            match best {
                Some((_, trial)) => {
                    q = trial;
                    e = obj.energy_gradient(&q, &mut g)?;
                    continue;
                }
                None => return Ok(q),
            }
        }

        let rhs = DVector::from_iterator(dim, g.iter().map(|v| -v));
        let mut d = modified_solve(&eig, &rhs);
        let dmax = d.amax();
        if dmax > opts.max_step {
            d *= opts.max_step / dmax;
        }
        let slope: f64 = d.iter().zip(g.iter()).map(|(a, b)| a * b).sum();

        let mut accepted = false;
        for dir in 0..2 {
            if dir == 1 {
                // steepest-descent fallback
                let gm = gmax.max(1e-300);
                d = DVector::from_iterator(dim, g.iter().map(|v| -v * opts.max_step.min(1.0) / gm));
            }
            let slope = if dir == 0 {
                slope
            } else {
                d.iter().zip(g.iter()).map(|(a, b)| a * b).sum()
            };
            let mut alpha = 1.0;
            while alpha > 1e-12 {
                let trial: Vec<f64> = q.iter().zip(d.iter()).map(|(a, b)| a + alpha * b).collect();
                if let Ok(et) = obj.energy_gradient(&trial, &mut gt) {
                    let armijo = et <= e + 1e-4 * alpha * slope;
                    // Energy differences drown in roundoff close to the minimum.
                    let roundoff = 1e-11 * e.abs().max(1.0);
                    let polish = (gmax < 1e-5 || et - e <= roundoff) && max_abs(&gt) < gmax;
                    if armijo || polish {
                        q = trial;
                        e = et;
                        std::mem::swap(&mut g, &mut gt);
                        accepted = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if accepted {
                break;
            }
        }
        if !accepted {
            return Err(Error::NoConvergence {
                iterations: opts.max_iter,
                residual: gmax,
            });
        }
    }
    Err(Error::NoConvergence {
        iterations: opts.max_iter,
        residual: max_abs(&g),
    })
}

/// Central-difference Jacobian of a gradient map, symmetrized.
pub(crate) fn fd_hessian<F>(q: &[f64], step: f64, mut grad: F) -> Result<DMatrix<f64>>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<()>,
{
    let dim = q.len();
    let mut h = DMatrix::zeros(dim, dim);
    let mut gp = vec![0.0; dim];
    let mut gm = vec![0.0; dim];
    let mut qq = q.to_vec();
    for k in 0..dim {
        qq[k] = q[k] + step;
        grad(&qq, &mut gp)?;
        qq[k] = q[k] - step;
        grad(&qq, &mut gm)?;
        qq[k] = q[k];
        for a in 0..dim {
            h[(a, k)] = (gp[a] - gm[a]) / (2.0 * step);
        }
    }
    Ok((&h + h.transpose()) * 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Rosen;

    impl Objective for Rosen {
        fn energy_gradient(&self, q: &[f64], g: &mut [f64]) -> Result<f64> {
            let (a, b) = (q[0], q[1]);
            g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
            g[1] = 200.0 * (b - a * a);
            Ok((1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2))
        }

        fn hessian(&self, q: &[f64]) -> Result<DMatrix<f64>> {
            let (a, b) = (q[0], q[1]);
            Ok(DMatrix::from_row_slice(
                2,
                2,
                &[2.0 - 400.0 * (b - 3.0 * a * a), -400.0 * a, -400.0 * a, 200.0],
            ))
        }
    }

    #[test]
    fn rosenbrock() {
        let q = newton_minimize(&Rosen, &[-1.2, 1.0], &NewtonOptions::default()).unwrap();
        assert!((q[0] - 1.0).abs() < 1e-8 && (q[1] - 1.0).abs() < 1e-8);
    }

    struct DoubleWell;

    impl Objective for DoubleWell {
        fn energy_gradient(&self, q: &[f64], g: &mut [f64]) -> Result<f64> {
            g[0] = 4.0 * q[0] * (q[0] * q[0] - 1.0);
            g[1] = 2.0 * q[1];
            Ok((q[0] * q[0] - 1.0).powi(2) + q[1] * q[1])
        }

        fn hessian(&self, q: &[f64]) -> Result<DMatrix<f64>> {
            Ok(DMatrix::from_row_slice(
                2,
                2,
                &[12.0 * q[0] * q[0] - 4.0, 0.0, 0.0, 2.0],
            ))
        }
    }

    #[test]
    fn escapes_symmetric_saddle() {
        let q = newton_minimize(&DoubleWell, &[0.0, 0.3], &NewtonOptions::default()).unwrap();
        assert!((q[0].abs() - 1.0).abs() < 1e-9, "{q:?}");
        let opts = NewtonOptions {
            escape_saddles: false,
            ..Default::default()
        };
        let q = newton_minimize(&DoubleWell, &[0.0, 0.3], &opts).unwrap();
        assert_eq!(q[0], 0.0);
    }
}
