//! Conversion between SI quantities and the scaled units used internally.
//!
//! Lengths are measured in `ℓ = (e²/(4πε₀ m ω_z²))^(1/3)`, times in `1/ω_z`,
//! masses in the reference mass `m` and energies in `m ω_z² ℓ²`. In these
//! units the Coulomb prefactor and the axial spring constant of a reference
//! ion are both 1.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

pub const ATOMIC_MASS_UNIT: f64 = 1.660_539_066_60e-27;
pub const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19;
pub const VACUUM_PERMITTIVITY: f64 = 8.854_187_812_8e-12;
pub const BOLTZMANN: f64 = 1.380_649e-23;

/// Mass of ¹⁷²Yb⁺ in atomic mass units.
pub const YB172_MASS_AMU: f64 = 172.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitSystem {
    pub reference_mass_kg: f64,
    pub omega_z: f64,
    pub length_m: f64,
    pub time_s: f64,
    pub energy_j: f64,
    pub temperature_k: f64,
}

impl UnitSystem {
    pub fn new(reference_mass_amu: f64, nu_z_hz: f64) -> Self {
        let mass = reference_mass_amu * ATOMIC_MASS_UNIT;
        let omega_z = 2.0 * PI * nu_z_hz;
        let coulomb = ELEMENTARY_CHARGE * ELEMENTARY_CHARGE / (4.0 * PI * VACUUM_PERMITTIVITY);
        let length = (coulomb / (mass * omega_z * omega_z)).cbrt();
        let energy = mass * omega_z * omega_z * length * length;
        UnitSystem {
            reference_mass_kg: mass,
            omega_z,
            length_m: length,
            time_s: 1.0 / omega_z,
            energy_j: energy,
            temperature_k: energy / BOLTZMANN,
        }
    }

    pub fn nu_z_hz(&self) -> f64 {
        self.omega_z / (2.0 * PI)
    }

    pub fn length_to_si(&self, l: f64) -> f64 {
        l * self.length_m
    }

    pub fn length_from_si(&self, meters: f64) -> f64 {
        meters / self.length_m
    }

    pub fn time_to_si(&self, t: f64) -> f64 {
        t * self.time_s
    }

    pub fn time_from_si(&self, seconds: f64) -> f64 {
        seconds / self.time_s
    }

    pub fn velocity_to_si(&self, v: f64) -> f64 {
        v * self.length_m / self.time_s
    }

    pub fn velocity_from_si(&self, v: f64) -> f64 {
        v * self.time_s / self.length_m
    }

    pub fn energy_to_si(&self, e: f64) -> f64 {
        e * self.energy_j
    }

    pub fn energy_from_si(&self, joules: f64) -> f64 {
        joules / self.energy_j
    }

    /// Scaled energy expressed as a temperature (E / k_B) in kelvin.
    pub fn energy_to_kelvin(&self, e: f64) -> f64 {
        e * self.temperature_k
    }

    pub fn temperature_from_si(&self, kelvin: f64) -> f64 {
        kelvin / self.temperature_k
    }

    /// Angular frequency in units of ω_z for a frequency in Hz.
    pub fn frequency_from_hz(&self, hz: f64) -> f64 {
        2.0 * PI * hz / self.omega_z
    }

    pub fn frequency_to_hz(&self, w: f64) -> f64 {
        w * self.omega_z / (2.0 * PI)
    }

    /// Force exerted by a field (V/m) on a unit charge, in units of m ω_z² ℓ.
    pub fn field_from_si(&self, volts_per_meter: f64) -> f64 {
        ELEMENTARY_CHARGE * volts_per_meter / (self.energy_j / self.length_m)
    }

    pub fn field_to_si(&self, f: f64) -> f64 {
        f * (self.energy_j / self.length_m) / ELEMENTARY_CHARGE
    }

    /// Friction coefficient (kg/s) in units of m ω_z.
    pub fn friction_from_si(&self, kg_per_s: f64) -> f64 {
        kg_per_s / (self.reference_mass_kg * self.omega_z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn yb_length_scale() {
        let u = UnitSystem::new(YB172_MASS_AMU, 24.6e3);
        // e²/(4πε₀ m ω_z²) evaluated by hand: ~3.38e-14 m³
        assert!((u.length_m - 3.233e-5).abs() < 5e-8, "{}", u.length_m);
        assert!(
            rel(
                u.length_m.powi(3) * u.reference_mass_kg * u.omega_z.powi(2),
                2.307_077e-28
            ) < 1e-5
        );
    }

    #[test]
    fn round_trips_to_twelve_digits() {
        let u = UnitSystem::new(172.0, 24.6e3);
        for &v in &[1.234_567e-6, 3.3e-5, 0.0172, 7.77] {
            assert!(rel(u.length_to_si(u.length_from_si(v)), v) < 1e-12);
            assert!(rel(u.time_to_si(u.time_from_si(v)), v) < 1e-12);
            assert!(rel(u.energy_to_si(u.energy_from_si(v)), v) < 1e-12);
            assert!(rel(u.velocity_to_si(u.velocity_from_si(v)), v) < 1e-12);
            assert!(rel(u.field_to_si(u.field_from_si(v)), v) < 1e-12);
            assert!(rel(u.frequency_to_hz(u.frequency_from_hz(v)), v) < 1e-12);
        }
    }

    #[test]
    fn frequency_of_nu_z_is_one() {
        let u = UnitSystem::new(172.0, 24.6e3);
        assert!((u.frequency_from_hz(24.6e3) - 1.0).abs() < 1e-15);
    }
}
