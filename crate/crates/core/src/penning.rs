//! Ideal Penning-trap model: ion species, trap settings, eigenfrequencies,
//! zero-point spreads and the heating-rate ↔ field-noise conversions.

use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::constants::{
    ATOMIC_MASS_UNIT, BE9_ATOMIC_MASS_U, ELECTRON_MASS, ELEMENTARY_CHARGE, HBAR,
};
use crate::error::{Error, Result};

/// Curvature ratios of the cylindrically symmetric quadrupole along (x, y, z).
pub const CURVATURE_RATIOS: [f64; 3] = [-0.5, -0.5, 1.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IonSpecies {
    pub name: String,
    /// Charge in units of the elementary charge.
    pub charge: i32,
    /// Mass in kg.
    pub mass: f64,
}

impl IonSpecies {
    pub fn new(name: impl Into<String>, charge: i32, mass: f64) -> Result<Self> {
        if charge == 0 {
            return Err(Error::InvalidParameter("ion charge must be nonzero".into()));
        }
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(Error::InvalidParameter(format!("ion mass must be positive, got {mass}")));
        }
        Ok(Self { name: name.into(), charge, mass })
    }

    /// ⁹Be⁺: atomic mass minus one electron mass.
    pub fn beryllium9() -> Self {
        Self {
            name: "9Be+".into(),
            charge: 1,
            mass: BE9_ATOMIC_MASS_U * ATOMIC_MASS_UNIT - ELECTRON_MASS,
        }
    }

    /// Signed charge in coulombs.
    #[inline]
    pub fn charge_c(&self) -> f64 {
        f64::from(self.charge) * ELEMENTARY_CHARGE
    }

    /// Bare cyclotron frequency |q|B/m in rad/s.
    #[inline]
    pub fn cyclotron_frequency(&self, b: f64) -> f64 {
        self.charge_c().abs() * b / self.mass
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrapSettings {
    /// Magnetic field along z, T.
    pub b: f64,
    /// Axial angular frequency, rad/s.
    pub omega_z: f64,
    /// Trap center, m.
    pub center: Vector3<f64>,
}

impl TrapSettings {
    pub fn new(b: f64, omega_z: f64, center: Vector3<f64>) -> Result<Self> {
        if !(b > 0.0) {
            return Err(Error::InvalidParameter(format!("magnetic field must be positive, got {b}")));
        }
        if !(omega_z > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "axial frequency must be positive, got {omega_z}"
            )));
        }
        Ok(Self { b, omega_z, center })
    }

    /// Checks ωc² − 2ωz² ≥ 0 for the given species.
    pub fn check_stability(&self, species: &IonSpecies) -> Result<()> {
        let omega_c = species.cyclotron_frequency(self.b);
        let margin = omega_c * omega_c - 2.0 * self.omega_z * self.omega_z;
        if margin < 0.0 {
            return Err(Error::Unstable { omega_c, omega_z: self.omega_z, margin });
        }
        Ok(())
    }

    /// Signed curvature mωz²/q · (−½, −½, 1) of the trapping potential, V/m².
    pub fn curvature(&self, species: &IonSpecies) -> Vector3<f64> {
        let k = species.mass * self.omega_z * self.omega_z / species.charge_c();
        Vector3::from(CURVATURE_RATIOS) * k
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModeLabel {
    #[serde(rename = "z")]
    Axial,
    #[serde(rename = "+")]
    Cyclotron,
    #[serde(rename = "-")]
    Magnetron,
}

impl ModeLabel {
    pub const ALL: [ModeLabel; 3] = [ModeLabel::Axial, ModeLabel::Cyclotron, ModeLabel::Magnetron];

    pub fn symbol(self) -> &'static str {
        match self {
            ModeLabel::Axial => "z",
            ModeLabel::Cyclotron => "+",
            ModeLabel::Magnetron => "-",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "z" | "axial" => Some(ModeLabel::Axial),
            "+" | "cyclotron" | "plus" => Some(ModeLabel::Cyclotron),
            "-" | "magnetron" | "minus" => Some(ModeLabel::Magnetron),
            _ => None,
        }
    }

    pub fn is_radial(self) -> bool {
        !matches!(self, ModeLabel::Axial)
    }
}

impl std::fmt::Display for ModeLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.symbol())
    }
}

/// Eigenfrequencies of the ideal trap, rad/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeSpectrum {
    pub omega_c: f64,
    pub omega_plus: f64,
    pub omega_minus: f64,
    pub omega_z: f64,
}

impl ModeSpectrum {
    /// Builds the spectrum from the bare cyclotron and axial frequencies.
    pub fn from_cyclotron(omega_c: f64, omega_z: f64) -> Result<Self> {
        if !(omega_c > 0.0) || omega_z < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "frequencies must be positive (ωc = {omega_c}, ωz = {omega_z})"
            )));
        }
        let margin = omega_c * omega_c - 2.0 * omega_z * omega_z;
        if margin < 0.0 {
            return Err(Error::Unstable { omega_c, omega_z, margin });
        }
        let root = margin.sqrt();
        let omega_plus = 0.5 * (omega_c + root);
        // ω₋ = ωz²/(2ω₊) avoids the cancellation in (ωc − root)/2.
        let omega_minus = omega_z * omega_z / (2.0 * omega_plus);
        Ok(Self { omega_c, omega_plus, omega_minus, omega_z })
    }

    /// Reconstructs the spectrum from ωc and one radial frequency, using
    /// ω₊ + ω₋ = ωc and ωz² = 2ω₊ω₋.
    pub fn from_radial(omega_c: f64, mode: ModeLabel, omega: f64) -> Result<Self> {
        let (omega_plus, omega_minus) = match mode {
            ModeLabel::Cyclotron => (omega, omega_c - omega),
            ModeLabel::Magnetron => (omega_c - omega, omega),
            ModeLabel::Axial => return Self::from_cyclotron(omega_c, omega),
        };
        if !(omega_minus > 0.0 && omega_plus > omega_minus) {
            return Err(Error::InvalidParameter(format!(
                "radial frequency {omega} rad/s incompatible with ωc = {omega_c} rad/s"
            )));
        }
        let omega_z = (2.0 * omega_plus * omega_minus).sqrt();
        Ok(Self { omega_c, omega_plus, omega_minus, omega_z })
    }

    pub fn frequency(&self, mode: ModeLabel) -> f64 {
        match mode {
            ModeLabel::Axial => self.omega_z,
            ModeLabel::Cyclotron => self.omega_plus,
            ModeLabel::Magnetron => self.omega_minus,
        }
    }

    /// Residuals of the three ideal-trap identities, in rad/s (sum),
    /// rad²/s² (product, quadrature).
    pub fn consistency(&self) -> SpectrumConsistency {
        SpectrumConsistency {
            sum_mismatch: self.omega_plus + self.omega_minus - self.omega_c,
            product_mismatch: self.omega_plus * self.omega_minus - 0.5 * self.omega_z * self.omega_z,
            quadrature_mismatch: self.omega_plus * self.omega_plus
                + self.omega_minus * self.omega_minus
                + self.omega_z * self.omega_z
                - self.omega_c * self.omega_c,
        }
    }
}

/// Deviations of a (possibly quoted) spectrum from the ideal-trap relations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumConsistency {
    /// ω₊ + ω₋ − ωc, rad/s.
    pub sum_mismatch: f64,
    /// ω₊ω₋ − ωz²/2, rad²/s².
    pub product_mismatch: f64,
    /// ω₊² + ω₋² + ωz² − ωc², rad²/s².
    pub quadrature_mismatch: f64,
}

impl SpectrumConsistency {
    /// Largest mismatch relative to the natural scale of each identity.
    pub fn max_relative(&self, spectrum: &ModeSpectrum) -> f64 {
        let c2 = spectrum.omega_c * spectrum.omega_c;
        (self.sum_mismatch / spectrum.omega_c)
            .abs()
            .max((self.product_mismatch / c2).abs())
            .max((self.quadrature_mismatch / c2).abs())
    }

    pub fn is_consistent(&self, spectrum: &ModeSpectrum, rel_tol: f64) -> bool {
        self.max_relative(spectrum) <= rel_tol
    }
}

pub fn mode_frequencies(species: &IonSpecies, settings: &TrapSettings) -> Result<ModeSpectrum> {
    settings.check_stability(species)?;
    ModeSpectrum::from_cyclotron(species.cyclotron_frequency(settings.b), settings.omega_z)
}

/// Potential value with analytic gradient and Hessian at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PotentialSample {
    pub value: f64,
    pub gradient: Vector3<f64>,
    pub hessian: Matrix3<f64>,
}

impl PotentialSample {
    pub fn zero() -> Self {
        Self { value: 0.0, gradient: Vector3::zeros(), hessian: Matrix3::zeros() }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { value: self.value * s, gradient: self.gradient * s, hessian: self.hessian * s }
    }

    pub fn accumulate(&mut self, other: &PotentialSample, weight: f64) {
        self.value += weight * other.value;
        self.gradient += other.gradient * weight;
        self.hessian += other.hessian * weight;
    }
}

/// φ = mωz²(2(z−z0)² − (x−x0)² − (y−y0)²)/(4q) and its derivatives.
pub fn quadrupole_potential(
    settings: &TrapSettings,
    species: &IonSpecies,
    r: &Vector3<f64>,
) -> PotentialSample {
    let k = settings.curvature(species);
    let d = r - settings.center;
    let hessian = Matrix3::from_diagonal(&k);
    PotentialSample {
        value: 0.5 * (k.x * d.x * d.x + k.y * d.y * d.y + k.z * d.z * d.z),
        gradient: k.component_mul(&d),
        hessian,
    }
}

/// Zero-point spread and normalized mode vector of one motional mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeGeometry {
    pub label: ModeLabel,
    /// Zero-point rms spread, m.
    pub zero_point_spread: f64,
    /// Normalized mode vector over (x, y, z).
    pub vector: [Complex64; 3],
}

impl ModeGeometry {
    pub fn new(label: ModeLabel, spectrum: &ModeSpectrum, species: &IonSpecies) -> Self {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let (effective, vector) = match label {
            ModeLabel::Axial => (
                spectrum.omega_z,
                [Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)],
            ),
            ModeLabel::Cyclotron => (
                spectrum.omega_plus - spectrum.omega_minus,
                [Complex64::new(s, 0.0), Complex64::new(0.0, -s), Complex64::new(0.0, 0.0)],
            ),
            ModeLabel::Magnetron => (
                spectrum.omega_plus - spectrum.omega_minus,
                [Complex64::new(s, 0.0), Complex64::new(0.0, s), Complex64::new(0.0, 0.0)],
            ),
        };
        Self {
            label,
            zero_point_spread: (HBAR / (2.0 * species.mass * effective)).sqrt(),
            vector,
        }
    }

    /// Σν |γν|².
    pub fn vector_norm_sqr(&self) -> f64 {
        self.vector.iter().map(|c| c.norm_sqr()).sum()
    }
}

/// ṅ = q² r₀²/(2ħ²) Σν |γν|² S_Eν, quanta/s. `s_e` holds the per-axis field
/// PSD at the mode frequency in V² m⁻² Hz⁻¹.
pub fn heating_rate_from_noise(mode: &ModeGeometry, species: &IonSpecies, s_e: &Vector3<f64>) -> f64 {
    let q = species.charge_c();
    let r0 = mode.zero_point_spread;
    let projected: f64 = mode
        .vector
        .iter()
        .zip(s_e.iter())
        .map(|(g, s)| g.norm_sqr() * s)
        .sum();
    q * q * r0 * r0 / (2.0 * HBAR * HBAR) * projected
}

/// Conversion factor S_E / ṅ for a mode, V² m⁻² Hz⁻¹ per quantum/s.
/// Axial: 4ħmωz/q²; radial: 4ħm(ω₊ − ω₋)/q².
pub fn noise_per_quantum(mode: ModeLabel, spectrum: &ModeSpectrum, species: &IonSpecies) -> f64 {
    let q = species.charge_c();
    let effective = match mode {
        ModeLabel::Axial => spectrum.omega_z,
        ModeLabel::Cyclotron | ModeLabel::Magnetron => spectrum.omega_plus - spectrum.omega_minus,
    };
    4.0 * HBAR * species.mass * effective / (q * q)
}

/// Field PSD (axial, or isotropic radial) that produces `rate` quanta/s.
pub fn noise_from_heating_rate(
    mode: ModeLabel,
    spectrum: &ModeSpectrum,
    species: &IonSpecies,
    rate: f64,
) -> f64 {
    noise_per_quantum(mode, spectrum, species) * rate
}

/// Equilibrium shift of the ion under a uniform field E, m.
pub fn displacement_from_field(
    settings: &TrapSettings,
    species: &IonSpecies,
    e: &Vector3<f64>,
) -> Vector3<f64> {
    let k = settings.curvature(species);
    e.component_div(&k)
}

/// Smallest resolvable static fields for a camera readout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldSensitivity {
    /// Smallest resolvable position shift p/(2M), m.
    pub min_shift: f64,
    /// Axial field bound mpωz²/(2qM), V/m.
    pub axial: f64,
    /// Radial bound, half the axial value.
    pub radial: f64,
}

pub fn field_sensitivity(
    settings: &TrapSettings,
    species: &IonSpecies,
    pixel: f64,
    magnification: f64,
) -> Result<FieldSensitivity> {
    if !(pixel > 0.0 && magnification > 0.0) {
        return Err(Error::InvalidParameter(
            "pixel size and magnification must be positive".into(),
        ));
    }
    let min_shift = pixel / (2.0 * magnification);
    let k = settings.curvature(species).z.abs();
    let axial = k * min_shift;
    Ok(FieldSensitivity { min_shift, axial, radial: 0.5 * axial })
}

/// Depth of field λ/NA² of the imaging system, m.
pub fn depth_of_field(wavelength: f64, numerical_aperture: f64) -> Result<f64> {
    if !(wavelength > 0.0 && numerical_aperture > 0.0) {
        return Err(Error::InvalidParameter(
            "wavelength and numerical aperture must be positive".into(),
        ));
    }
    Ok(wavelength / (numerical_aperture * numerical_aperture))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::{mhz_to_angular, MICRO};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn be() -> IonSpecies {
        IonSpecies::beryllium9()
    }

    fn settings(f_mhz: f64) -> TrapSettings {
        TrapSettings::new(3.0, mhz_to_angular(f_mhz), Vector3::zeros()).unwrap()
    }

    #[test]
    fn beryllium_cyclotron_frequency_at_three_tesla() {
        let spec = mode_frequencies(&be(), &settings(2.6)).unwrap();
        let f_c = spec.omega_c / mhz_to_angular(1.0);
        assert!((f_c - 5.118).abs() / 5.118 < 2e-3, "f_c = {f_c}");
        assert!((f_c - 5.11).abs() < 0.01);
    }

    #[test]
    fn vanishing_axial_frequency_is_free_cyclotron() {
        let spec = ModeSpectrum::from_cyclotron(1.0e7, 0.0).unwrap();
        assert_eq!(spec.omega_plus, 1.0e7);
        assert_eq!(spec.omega_minus, 0.0);
    }

    #[test]
    fn closed_form_radial_frequencies() {
        let spec = ModeSpectrum::from_cyclotron(mhz_to_angular(5.118), mhz_to_angular(2.6)).unwrap();
        // (5.118 ± √(5.118² − 2·2.6²))/2
        let root = (5.118f64 * 5.118 - 2.0 * 2.6 * 2.6).sqrt();
        assert_relative_eq!(spec.omega_plus / mhz_to_angular(1.0), (5.118 + root) / 2.0, max_relative = 1e-12);
        assert_relative_eq!(spec.omega_minus / mhz_to_angular(1.0), (5.118 - root) / 2.0, max_relative = 1e-10);
        assert!((spec.omega_minus / mhz_to_angular(1.0) - 0.779).abs() < 1e-3);
        assert!((spec.omega_plus / mhz_to_angular(1.0) - 4.339).abs() < 1e-3);
    }

    #[test]
    fn unstable_configuration_rejected() {
        let s = TrapSettings::new(0.1, mhz_to_angular(2.6), Vector3::zeros()).unwrap();
        assert!(matches!(mode_frequencies(&be(), &s), Err(Error::Unstable { .. })));
    }

    #[test]
    fn quoted_spectrum_sum_mismatch() {
        let quoted = ModeSpectrum {
            omega_c: mhz_to_angular(5.118),
            omega_plus: mhz_to_angular(4.32),
            omega_minus: mhz_to_angular(0.845),
            omega_z: mhz_to_angular(2.6),
        };
        let c = quoted.consistency();
        assert_relative_eq!(c.sum_mismatch / mhz_to_angular(1.0), 0.047, max_relative = 1e-9);
        assert!(!c.is_consistent(&quoted, 1e-6));
    }

    #[test]
    fn quadrupole_null_and_laplace() {
        let s = TrapSettings::new(3.0, mhz_to_angular(2.6), Vector3::new(1e-5, 1.5e-4, -2e-5)).unwrap();
        let p = quadrupole_potential(&s, &be(), &s.center);
        assert_eq!(p.value, 0.0);
        assert_eq!(p.gradient, Vector3::zeros());
        let q = quadrupole_potential(&s, &be(), &Vector3::new(3e-5, 1e-4, 7e-6));
        assert!(q.hessian.trace().abs() < 1e-9 * q.hessian.norm());
    }

    #[test]
    fn axial_gradient_one_micron() {
        let s = settings(2.6);
        let sp = be();
        let p = quadrupole_potential(&s, &sp, &Vector3::new(0.0, 0.0, MICRO));
        let expected = sp.mass * s.omega_z * s.omega_z * MICRO / crate::constants::ELEMENTARY_CHARGE;
        assert_relative_eq!(p.gradient.z, expected, max_relative = 1e-14);
    }

    #[test]
    fn axial_noise_constant() {
        let sp = be();
        let spec = mode_frequencies(&sp, &settings(2.6)).unwrap();
        let s = noise_from_heating_rate(ModeLabel::Axial, &spec, &sp, 1.0);
        assert!((s - 4.0e-15).abs() / 4.0e-15 < 0.01, "S_E = {s:e}");
        assert_eq!(noise_from_heating_rate(ModeLabel::Axial, &spec, &sp, 0.0), 0.0);
    }

    #[test]
    fn radial_special_case_matches_mode_decomposition() {
        let sp = be();
        let spec = mode_frequencies(&sp, &settings(2.6)).unwrap();
        for label in [ModeLabel::Cyclotron, ModeLabel::Magnetron] {
            let g = ModeGeometry::new(label, &spec, &sp);
            assert_relative_eq!(g.vector_norm_sqr(), 1.0, max_relative = 1e-15);
            let s = 3.3e-14;
            let general = heating_rate_from_noise(&g, &sp, &Vector3::new(s, s, 0.0));
            let q = sp.charge_c();
            let special = q * q * s / (4.0 * HBAR * sp.mass * (spec.omega_plus - spec.omega_minus));
            assert_relative_eq!(general, special, max_relative = 1e-14);
        }
    }

    #[test]
    fn paper_scale_displacements() {
        let s = settings(2.6);
        let sp = be();
        let dz = displacement_from_field(&s, &sp, &Vector3::new(0.0, 0.0, 500.0));
        let dx = displacement_from_field(&s, &sp, &Vector3::new(500.0, 0.0, 0.0));
        assert!((dz.z / MICRO - 20.0).abs() < 0.2, "{}", dz.z);
        assert!((dx.x / MICRO + 40.0).abs() < 0.4, "{}", dx.x);
        assert_eq!(displacement_from_field(&s, &sp, &Vector3::zeros()), Vector3::zeros());
    }

    #[test]
    fn imaging_resolution() {
        let dof = depth_of_field(313e-9, 0.55).unwrap();
        assert!((dof / MICRO - 1.0).abs() < 0.05);
        let s = settings(2.6);
        for (m, lo, hi) in [(15.0, 0.52, 0.54), (35.0, 0.22, 0.24)] {
            let fs = field_sensitivity(&s, &be(), 16e-6, m).unwrap();
            assert!(fs.min_shift / MICRO > lo && fs.min_shift / MICRO < hi);
            assert_relative_eq!(fs.radial, fs.axial / 2.0);
        }
        let huge = field_sensitivity(&s, &be(), 16e-6, 1e12).unwrap();
        assert!(huge.axial < 1e-9);
    }

    proptest! {
        #[test]
        fn spectrum_identities(mass_u in 1.0f64..250.0, b in 0.5f64..10.0, frac in 0.0f64..0.999) {
            let sp = IonSpecies::new("x", 1, mass_u * ATOMIC_MASS_UNIT).unwrap();
            let omega_c = sp.cyclotron_frequency(b);
            let omega_z = frac * omega_c / 2f64.sqrt();
            let spec = ModeSpectrum::from_cyclotron(omega_c, omega_z).unwrap();
            prop_assert!(spec.consistency().max_relative(&spec) < 1e-12);
        }

        #[test]
        fn heating_linear_in_noise(s in 0.0f64..1e-12, a in 0.0f64..10.0) {
            let sp = be();
            let spec = mode_frequencies(&sp, &settings(2.6)).unwrap();
            let g = ModeGeometry::new(ModeLabel::Axial, &spec, &sp);
            let v = Vector3::new(0.0, 0.0, s);
            let r1 = heating_rate_from_noise(&g, &sp, &(v * a));
            let r2 = a * heating_rate_from_noise(&g, &sp, &v);
            prop_assert!((r1 - r2).abs() <= 1e-12 * r1.abs().max(1e-300));
            let back = noise_from_heating_rate(ModeLabel::Axial, &spec, &sp, r1);
            prop_assert!((back - s * a).abs() <= 1e-12 * (s * a).max(1e-300));
        }

        #[test]
        fn displacement_is_odd(ex in -1e3f64..1e3, ey in -1e3f64..1e3, ez in -1e3f64..1e3) {
            let s = settings(2.6);
            let e = Vector3::new(ex, ey, ez);
            let d = displacement_from_field(&s, &be(), &e);
            let m = displacement_from_field(&s, &be(), &(-e));
            prop_assert!((d + m).norm() == 0.0);
        }
    }
}
