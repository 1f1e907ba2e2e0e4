//! Physical constants (CODATA 2018 exact and recommended values) and unit
//! conversion factors used at the I/O boundary.

/// Elementary charge, C.
pub const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19;
/// Reduced Planck constant, J s.
pub const HBAR: f64 = 1.054_571_817e-34;
/// Boltzmann constant, J/K.
pub const BOLTZMANN: f64 = 1.380_649e-23;
/// Vacuum permittivity, F/m.
pub const VACUUM_PERMITTIVITY: f64 = 8.854_187_812_8e-12;
/// Atomic mass constant, kg.
pub const ATOMIC_MASS_UNIT: f64 = 1.660_539_066_60e-27;
/// Electron mass, kg.
pub const ELECTRON_MASS: f64 = 9.109_383_701_5e-31;
/// Bohr magneton, J/T.
pub const BOHR_MAGNETON: f64 = 9.274_010_078_3e-24;
/// Electron g-factor magnitude used for spin-flip sensitivity.
pub const ELECTRON_G: f64 = 2.0023;

/// Atomic mass of ⁹Be, u.
pub const BE9_ATOMIC_MASS_U: f64 = 9.012_183_1;

pub const MICRO: f64 = 1e-6;
pub const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// One e·Å/µm² expressed in C/m.
pub const E_ANGSTROM_PER_UM2: f64 = ELEMENTARY_CHARGE * 1e-10 * 1e12;

/// Converts an ordinary frequency in MHz to angular frequency in rad/s.
#[inline]
pub fn mhz_to_angular(f_mhz: f64) -> f64 {
    TWO_PI * f_mhz * 1e6
}

#[inline]
pub fn angular_to_mhz(omega: f64) -> f64 {
    omega / (TWO_PI * 1e6)
}

/// Dipole density in e·Å/µm² → C/m.
#[inline]
pub fn dipole_density_from_e_angstrom(d: f64) -> f64 {
    d * E_ANGSTROM_PER_UM2
}

/// Dipole density in C/m → e·Å/µm².
#[inline]
pub fn dipole_density_to_e_angstrom(d: f64) -> f64 {
    d / E_ANGSTROM_PER_UM2
}

/// Spin-flip angular-frequency sensitivity g μ_B / ħ, rad s⁻¹ T⁻¹.
pub fn electron_spin_sensitivity() -> f64 {
    ELECTRON_G * BOHR_MAGNETON / HBAR
}
