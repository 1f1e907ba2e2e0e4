//! Planar multi-electrode trap: per-electrode basis potentials in the
//! gapless-plane approximation and the RC filter network that couples
//! thermal and technical voltage noise onto the electrodes.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::Vector3;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::constants::{ATOMIC_MASS_UNIT, BOLTZMANN, MICRO, TWO_PI};
use crate::error::{Error, Result};
use crate::geometry::{rectangle_solid_angle, Rect};
use crate::penning::{IonSpecies, PotentialSample};
use crate::SCHEMA_TAG;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }

    pub fn parse(s: &str) -> Option<Axis> {
        match s.trim().to_ascii_lowercase().as_str() {
            "x" => Some(Axis::X),
            "y" => Some(Axis::Y),
            "z" => Some(Axis::Z),
            _ => None,
        }
    }
}

/// Single-pole RC filter stage feeding an electrode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterStage {
    /// Filter resistance, Ω.
    pub r: f64,
    /// Filter capacitance, F.
    pub c: f64,
    /// Wiring resistance between filter and electrode, Ω.
    pub r_series: f64,
    /// Temperature of the resistive elements, K.
    pub temperature: f64,
}

impl FilterStage {
    pub fn new(r: f64, c: f64, r_series: f64, temperature: f64) -> Result<Self> {
        if !(r > 0.0 && c > 0.0 && r_series >= 0.0 && temperature > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "filter stage requires R, C, T > 0 and R_series ≥ 0 (R={r}, C={c}, Rs={r_series}, T={temperature})"
            )));
        }
        Ok(Self { r, c, r_series, temperature })
    }

    /// Impedance seen by the electrode: R ∥ C in series with the wiring.
    pub fn impedance(&self, omega: f64) -> Complex64 {
        let jwrc = Complex64::new(0.0, omega * self.r * self.c);
        Complex64::new(self.r, 0.0) / (1.0 + jwrc) + self.r_series
    }

    /// Voltage transfer 1/(1 + jωRC).
    pub fn transfer(&self, omega: f64) -> Complex64 {
        Complex64::new(1.0, 0.0) / Complex64::new(1.0, omega * self.r * self.c)
    }

    /// −3 dB cutoff, Hz.
    pub fn cutoff_hz(&self) -> f64 {
        1.0 / (TWO_PI * self.r * self.c)
    }

    /// Thermal voltage PSD 4 k_B T Re(Z), V²/Hz.
    pub fn johnson_voltage_psd(&self, omega: f64) -> f64 {
        4.0 * BOLTZMANN * self.temperature * self.impedance(omega).re
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RectElectrode {
    pub id: String,
    pub extent: Rect,
    /// Wiring group; co-wired electrodes share one.
    pub group: String,
}

/// Electrode or wiring group addressed by a coupling query.
#[derive(Debug, Clone, Copy)]
pub enum Selector<'a> {
    Electrode(&'a str),
    Group(&'a str),
}

/// Field coupling of a voltage source at a point along one axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Coupling {
    /// Signed field component per applied volt, (V/m)/V.
    pub field_per_volt: f64,
    /// Characteristic distance 1/|field_per_volt|, m; infinite on a null.
    pub distance: f64,
}

impl Coupling {
    fn from_gradient(sum: f64, magnitude_scale: f64) -> Self {
        let field_per_volt = -sum;
        let null = sum.abs() <= 1e-12 * magnitude_scale || sum == 0.0;
        Self {
            field_per_volt: if null { 0.0 } else { field_per_volt },
            distance: if null { f64::INFINITY } else { 1.0 / sum.abs() },
        }
    }

    pub fn inverse_distance(&self) -> f64 {
        self.field_per_volt.abs()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrapModel {
    pub electrodes: Vec<RectElectrode>,
    pub filters: BTreeMap<String, FilterStage>,
    /// Magnetic field along z, T.
    pub b: f64,
    pub species: IonSpecies,
}

impl TrapModel {
    pub fn new(
        electrodes: Vec<RectElectrode>,
        filters: BTreeMap<String, FilterStage>,
        b: f64,
        species: IonSpecies,
    ) -> Result<Self> {
        if electrodes.is_empty() {
            return Err(Error::Layout("no electrodes".into()));
        }
        if !(b > 0.0) {
            return Err(Error::Layout(format!("magnetic field must be positive, got {b}")));
        }
        for (i, e) in electrodes.iter().enumerate() {
            Rect::new(e.extent.x1, e.extent.x2, e.extent.z1, e.extent.z2)
                .map_err(|err| Error::Layout(format!("electrode `{}`: {err}", e.id)))?;
            if !filters.contains_key(&e.group) {
                return Err(Error::Layout(format!(
                    "electrode `{}` references unknown filter group `{}`",
                    e.id, e.group
                )));
            }
            for other in &electrodes[..i] {
                if other.id == e.id {
                    return Err(Error::Layout(format!("duplicate electrode id `{}`", e.id)));
                }
                if other.extent.overlaps(&e.extent) {
                    return Err(Error::Layout(format!(
                        "electrodes `{}` and `{}` overlap",
                        other.id, e.id
                    )));
                }
            }
        }
        Ok(Self { electrodes, filters, b, species })
    }

    /// Bundled 25-electrode layout.
    ///
    /// Five 40 µm strips span |x| < 100 µm (1 kΩ/22 nF each), a co-wired
    /// axialization pair sits at 100 µm < |x| < [`AXIALIZATION_OUTER_UM`]
    /// (1 kΩ/560 pF), and nine 120 µm axial segments per side follow
    /// outside (10 kΩ/560 pF). The axialization outer edge is calibrated so
    /// that the pair's vertical field null lies 152 µm above the center.
    pub fn default_layout() -> Self {
        const STRIP_LEN: f64 = 1500.0;
        let um = |v: f64| v * MICRO;
        let mut electrodes = Vec::with_capacity(25);
        let mut filters = BTreeMap::new();
        let strip = FilterStage { r: 1e3, c: 22e-9, r_series: 0.25, temperature: 6.5 };
        let control = FilterStage { r: 10e3, c: 560e-12, r_series: 0.25, temperature: 6.5 };
        let axial = FilterStage { r: 1e3, c: 560e-12, r_series: 0.25, temperature: 6.5 };

        for k in 0..5 {
            let x1 = -100.0 + 40.0 * k as f64;
            let id = format!("S{}", k + 1);
            electrodes.push(RectElectrode {
                id: id.clone(),
                extent: Rect { x1: um(x1), x2: um(x1 + 40.0), z1: um(-STRIP_LEN), z2: um(STRIP_LEN) },
                group: id.clone(),
            });
            filters.insert(id, strip);
        }
        filters.insert("AX".to_string(), axial);
        for (id, x1, x2) in [
            ("AXL", -AXIALIZATION_OUTER_UM, -100.0),
            ("AXR", 100.0, AXIALIZATION_OUTER_UM),
        ] {
            electrodes.push(RectElectrode {
                id: id.into(),
                extent: Rect { x1: um(x1), x2: um(x2), z1: um(-STRIP_LEN), z2: um(STRIP_LEN) },
                group: "AX".into(),
            });
        }
        for (side, x1, x2) in [
            ("L", -AXIALIZATION_OUTER_UM - CONTROL_WIDTH_UM, -AXIALIZATION_OUTER_UM),
            ("R", AXIALIZATION_OUTER_UM, AXIALIZATION_OUTER_UM + CONTROL_WIDTH_UM),
        ] {
            for k in 0..9 {
                let z1 = -540.0 + 120.0 * k as f64;
                let id = format!("C{side}{}", k + 1);
                electrodes.push(RectElectrode {
                    id: id.clone(),
                    extent: Rect { x1: um(x1), x2: um(x2), z1: um(z1), z2: um(z1 + 120.0) },
                    group: id.clone(),
                });
                filters.insert(id, control);
            }
        }
        Self::new(electrodes, filters, 3.0, IonSpecies::beryllium9())
            .expect("bundled layout is valid")
    }

    pub fn electrode(&self, id: &str) -> Result<&RectElectrode> {
        self.electrodes
            .iter()
            .find(|e| e.id == id)
            .ok_or_else(|| Error::UnknownElectrode(id.to_string()))
    }

    pub fn electrode_ids(&self) -> Vec<&str> {
        self.electrodes.iter().map(|e| e.id.as_str()).collect()
    }

    /// Group names in order of first appearance in the electrode list.
    pub fn groups(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for e in &self.electrodes {
            if !out.contains(&e.group.as_str()) {
                out.push(&e.group);
            }
        }
        out
    }

    pub fn filter(&self, group: &str) -> Result<&FilterStage> {
        self.filters.get(group).ok_or_else(|| Error::UnknownElectrode(group.to_string()))
    }

    fn check_above(r: &Vector3<f64>) -> Result<()> {
        if !(r.y > 0.0) {
            return Err(Error::BelowPlane { y: r.y });
        }
        Ok(())
    }

    /// Potential per applied volt on one electrode (all others grounded).
    pub fn basis_potential(&self, id: &str, r: &Vector3<f64>) -> Result<PotentialSample> {
        Self::check_above(r)?;
        let e = self.electrode(id)?;
        Ok(basis_of(&e.extent, r))
    }

    /// Basis potentials of every electrode, in layout order.
    pub fn basis_all(&self, r: &Vector3<f64>) -> Result<Vec<PotentialSample>> {
        Self::check_above(r)?;
        Ok(self.electrodes.iter().map(|e| basis_of(&e.extent, r)).collect())
    }

    /// Potential of a voltage set given in layout order.
    pub fn potential(&self, voltages: &[f64], r: &Vector3<f64>) -> Result<PotentialSample> {
        if voltages.len() != self.electrodes.len() {
            return Err(Error::InvalidParameter(format!(
                "expected {} voltages, got {}",
                self.electrodes.len(),
                voltages.len()
            )));
        }
        let basis = self.basis_all(r)?;
        let mut out = PotentialSample::zero();
        for (b, v) in basis.iter().zip(voltages) {
            out.accumulate(b, *v);
        }
        Ok(out)
    }

    fn members<'a>(&'a self, selector: Selector<'a>) -> Result<Vec<&'a RectElectrode>> {
        let members: Vec<_> = match selector {
            Selector::Electrode(id) => vec![self.electrode(id)?],
            Selector::Group(g) => self.electrodes.iter().filter(|e| e.group == g).collect(),
        };
        if members.is_empty() {
            let name = match selector {
                Selector::Electrode(s) | Selector::Group(s) => s,
            };
            return Err(Error::UnknownElectrode(name.to_string()));
        }
        Ok(members)
    }

    /// E_ν per volt and the characteristic distance d = 1/|∂ν φ|.
    pub fn characteristic_distance(
        &self,
        selector: Selector<'_>,
        r0: &Vector3<f64>,
        axis: Axis,
    ) -> Result<Coupling> {
        Self::check_above(r0)?;
        let mut sum = 0.0;
        let mut scale = 0.0;
        for e in self.members(selector)? {
            let g = basis_of(&e.extent, r0).gradient[axis.index()];
            sum += g;
            scale += g.abs();
        }
        Ok(Coupling::from_gradient(sum, scale))
    }

    /// Johnson-noise field PSD per filter group, V² m⁻² Hz⁻¹, in group order.
    pub fn johnson_breakdown(
        &self,
        r0: &Vector3<f64>,
        omega: f64,
        axis: Axis,
    ) -> Result<Vec<(String, f64)>> {
        self.groups()
            .into_iter()
            .map(|g| {
                let coupling = self.characteristic_distance(Selector::Group(g), r0, axis)?;
                let s_v = self.filter(g)?.johnson_voltage_psd(omega);
                let inv = coupling.inverse_distance();
                Ok((g.to_string(), s_v * inv * inv))
            })
            .collect()
    }

    /// Σ over independent groups of 4 k_B T Re(Z_g) / d_g².
    pub fn johnson_field_psd(&self, r0: &Vector3<f64>, omega: f64, axis: Axis) -> Result<f64> {
        Ok(self.johnson_breakdown(r0, omega, axis)?.iter().map(|(_, s)| s).sum())
    }

    /// Coupling of a common-mode voltage applied in phase through every
    /// filter (V_i = V·|T_i(ω)|).
    pub fn correlated_field(&self, r0: &Vector3<f64>, omega: f64, axis: Axis) -> Result<Coupling> {
        Self::check_above(r0)?;
        let mut sum = 0.0;
        let mut scale = 0.0;
        for e in &self.electrodes {
            let gain = self.filter(&e.group)?.transfer(omega).norm();
            let g = gain * basis_of(&e.extent, r0).gradient[axis.index()];
            sum += g;
            scale += g.abs();
        }
        Ok(Coupling::from_gradient(sum, scale))
    }

    /// S_E,corr = S_V,corr / d_corr², V² m⁻² Hz⁻¹.
    pub fn correlated_field_psd(
        &self,
        s_v_corr: f64,
        r0: &Vector3<f64>,
        omega: f64,
        axis: Axis,
    ) -> Result<f64> {
        let inv = self.correlated_field(r0, omega, axis)?.inverse_distance();
        Ok(s_v_corr * inv * inv)
    }

    pub fn to_layout_file(&self) -> LayoutFile {
        LayoutFile {
            schema: SCHEMA_TAG.to_string(),
            b_tesla: self.b,
            species: SpeciesEntry {
                name: self.species.name.clone(),
                charge: self.species.charge,
                mass_u: self.species.mass / ATOMIC_MASS_UNIT,
            },
            group: self
                .groups()
                .into_iter()
                .map(|g| {
                    let f = self.filters[g];
                    GroupEntry {
                        name: g.to_string(),
                        r_ohm: f.r,
                        c_farad: f.c,
                        r_series_ohm: f.r_series,
                        temperature_k: f.temperature,
                    }
                })
                .collect(),
            electrode: self
                .electrodes
                .iter()
                .map(|e| ElectrodeEntry {
                    id: e.id.clone(),
                    x_um: [e.extent.x1 / MICRO, e.extent.x2 / MICRO],
                    z_um: [e.extent.z1 / MICRO, e.extent.z2 / MICRO],
                    group: e.group.clone(),
                })
                .collect(),
        }
    }

    pub fn from_layout_file(file: &LayoutFile) -> Result<Self> {
        if file.schema != SCHEMA_TAG {
            return Err(Error::Schema(format!(
                "layout schema `{}` is not `{SCHEMA_TAG}`",
                file.schema
            )));
        }
        let species = IonSpecies::new(
            file.species.name.clone(),
            file.species.charge,
            file.species.mass_u * ATOMIC_MASS_UNIT,
        )?;
        let mut filters = BTreeMap::new();
        for g in &file.group {
            let stage = FilterStage::new(g.r_ohm, g.c_farad, g.r_series_ohm, g.temperature_k)
                .map_err(|e| Error::Layout(format!("group `{}`: {e}", g.name)))?;
            if filters.insert(g.name.clone(), stage).is_some() {
                return Err(Error::Layout(format!("duplicate group `{}`", g.name)));
            }
        }
        let electrodes = file
            .electrode
            .iter()
            .map(|e| {
                let extent = Rect::new(
                    e.x_um[0] * MICRO,
                    e.x_um[1] * MICRO,
                    e.z_um[0] * MICRO,
                    e.z_um[1] * MICRO,
                )
                .map_err(|err| Error::Layout(format!("electrode `{}`: {err}", e.id)))?;
                Ok(RectElectrode { id: e.id.clone(), extent, group: e.group.clone() })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(electrodes, filters, file.b_tesla, species)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let file: LayoutFile = toml::from_str(&text)
            .map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
        Self::from_layout_file(&file)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&self.to_layout_file()).expect("layout serializes")
    }
}

/// Outer edge of the axialization strips, µm.
pub const AXIALIZATION_OUTER_UM: f64 = 236.7;
/// Radial width of the segmented control electrodes, µm.
pub const CONTROL_WIDTH_UM: f64 = 400.0;

fn basis_of(rect: &Rect, r: &Vector3<f64>) -> PotentialSample {
    rectangle_solid_angle(rect, r)
        .expect("points above the plane are never on an electrode")
        .scaled(1.0 / TWO_PI)
}

/// Trap layout file: one `[[group]]` table per filter group and one
/// `[[electrode]]` table per electrode. Lengths in µm, R in Ω, C in F, T in K.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutFile {
    pub schema: String,
    pub b_tesla: f64,
    pub species: SpeciesEntry,
    pub group: Vec<GroupEntry>,
    pub electrode: Vec<ElectrodeEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeciesEntry {
    pub name: String,
    pub charge: i32,
    pub mass_u: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupEntry {
    pub name: String,
    pub r_ohm: f64,
    pub c_farad: f64,
    pub r_series_ohm: f64,
    pub temperature_k: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElectrodeEntry {
    pub id: String,
    pub x_um: [f64; 2],
    pub z_um: [f64; 2],
    pub group: String,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn um(v: f64) -> f64 {
        v * MICRO
    }

    fn tiled_plane(stage: FilterStage) -> TrapModel {
        let big = 1e6;
        let cuts = [-big, -1e-4, 2e-4, big];
        let mut electrodes = Vec::new();
        let mut filters = BTreeMap::new();
        for ix in 0..3 {
            for iz in 0..3 {
                let id = format!("T{ix}{iz}");
                electrodes.push(RectElectrode {
                    id: id.clone(),
                    extent: Rect::new(cuts[ix], cuts[ix + 1], cuts[iz], cuts[iz + 1]).unwrap(),
                    group: id.clone(),
                });
                filters.insert(id, stage);
            }
        }
        TrapModel::new(electrodes, filters, 3.0, IonSpecies::beryllium9()).unwrap()
    }

    fn null_height(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        assert!(f(lo).signum() != f(hi).signum());
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if f(lo).signum() == f(mid).signum() {
                lo = mid
            } else {
                hi = mid
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn default_layout_shape() {
        let trap = TrapModel::default_layout();
        assert_eq!(trap.electrodes.len(), 25);
        assert_eq!(trap.groups().len(), 24);
        assert_eq!(trap.filter("S3").unwrap().c, 22e-9);
        assert_eq!(trap.filter("AX").unwrap().c, 560e-12);
        assert_eq!(trap.filter("CR4").unwrap().r, 10e3);
    }

    #[test]
    fn layout_toml_round_trip() {
        let trap = TrapModel::default_layout();
        let text = trap.to_toml();
        let file: LayoutFile = toml::from_str(&text).unwrap();
        let back = TrapModel::from_layout_file(&file).unwrap();
        assert_eq!(back.electrode_ids(), trap.electrode_ids());
        for (a, b) in back.electrodes.iter().zip(&trap.electrodes) {
            assert_relative_eq!(a.extent.x1, b.extent.x1, max_relative = 1e-12);
            assert_relative_eq!(a.extent.z2, b.extent.z2, max_relative = 1e-12);
        }
    }

    #[test]
    fn layout_rejects_overlap_and_unknown_group() {
        let trap = TrapModel::default_layout();
        let mut file = trap.to_layout_file();
        file.electrode[1].x_um = file.electrode[0].x_um;
        assert!(matches!(TrapModel::from_layout_file(&file), Err(Error::Layout(_))));
        let mut file = trap.to_layout_file();
        file.electrode[0].group = "nope".into();
        assert!(matches!(TrapModel::from_layout_file(&file), Err(Error::Layout(_))));
        let mut file = trap.to_layout_file();
        file.schema = "other".into();
        assert!(matches!(TrapModel::from_layout_file(&file), Err(Error::Schema(_))));
    }

    #[test]
    fn below_plane_rejected() {
        let trap = TrapModel::default_layout();
        let r = Vector3::new(0.0, 0.0, 0.0);
        assert!(matches!(trap.basis_potential("S1", &r), Err(Error::BelowPlane { .. })));
        assert!(matches!(
            trap.basis_potential("S1", &Vector3::new(0.0, -1e-6, 0.0)),
            Err(Error::BelowPlane { .. })
        ));
        assert!(matches!(
            trap.basis_potential("Q9", &Vector3::new(0.0, 1e-4, 0.0)),
            Err(Error::UnknownElectrode(_))
        ));
    }

    #[test]
    fn large_electrode_interior_limit() {
        let trap = tiled_plane(FilterStage::new(1e3, 1e-9, 0.0, 4.0).unwrap());
        let b = trap.basis_potential("T00", &Vector3::new(-1e3, 1e-6, -1e3)).unwrap();
        assert!((b.value - 1.0).abs() < 1e-8);
        assert!(b.gradient.norm() < 1e-3, "{}", b.gradient.norm());
    }

    #[test]
    fn plane_tiling_sums_to_one() {
        let trap = tiled_plane(FilterStage::new(1e3, 1e-9, 0.0, 4.0).unwrap());
        for r in [
            Vector3::new(0.0, um(50.0), 0.0),
            Vector3::new(um(130.0), um(10.0), um(-70.0)),
            Vector3::new(um(-500.0), um(400.0), um(900.0)),
        ] {
            let total: f64 = trap.basis_all(&r).unwrap().iter().map(|b| b.value).sum();
            assert!((total - 1.0).abs() < 1e-8, "{total}");
            let v = vec![1.0; 9];
            assert!(trap.potential(&v, &r).unwrap().gradient.norm() < 1.0);
        }
    }

    #[test]
    fn basis_values_bounded_and_vanish_far_away() {
        let trap = TrapModel::default_layout();
        let near = trap.basis_potential("S3", &Vector3::new(0.0, um(1.0), 0.0)).unwrap();
        assert!(near.value > 0.95 && near.value < 1.0);
        let far = trap.basis_potential("S3", &Vector3::new(0.0, 1.0, 0.0)).unwrap();
        assert!(far.value > 0.0 && far.value < 1e-6);
        let d_near = trap
            .characteristic_distance(Selector::Electrode("CL5"), &Vector3::new(0.0, um(100.0), 0.0), Axis::Y)
            .unwrap()
            .distance;
        let d_far = trap
            .characteristic_distance(Selector::Electrode("CL5"), &Vector3::new(0.0, um(5000.0), 0.0), Axis::Y)
            .unwrap()
            .distance;
        assert!(d_far > 100.0 * d_near);
    }

    #[test]
    fn characteristic_distance_matches_quadrature() {
        // E_y = −∂_y φ with φ = (y/2π) ∫∫ dA / ρ³ over the electrode.
        let trap = TrapModel::default_layout();
        let e = trap.electrode("CL5").unwrap().extent;
        let r0 = Vector3::new(um(-150.0), um(100.0), um(30.0));
        let n = 800;
        let simpson = |i: usize| if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
        let (hx, hz) = ((e.x2 - e.x1) / n as f64, (e.z2 - e.z1) / n as f64);
        let mut dphi_dy = 0.0;
        for i in 0..=n {
            let x = e.x1 + hx * i as f64;
            for j in 0..=n {
                let z = e.z1 + hz * j as f64;
                let rho2 = (r0.x - x).powi(2) + r0.y * r0.y + (r0.z - z).powi(2);
                let rho = rho2.sqrt();
                let integrand = 1.0 / (rho2 * rho) - 3.0 * r0.y * r0.y / (rho2 * rho2 * rho);
                dphi_dy += simpson(i) * simpson(j) * integrand;
            }
        }
        dphi_dy *= hx * hz / 9.0 / TWO_PI;
        let c = trap.characteristic_distance(Selector::Electrode("CL5"), &r0, Axis::Y).unwrap();
        assert_relative_eq!(c.distance, 1.0 / dphi_dy.abs(), max_relative = 1e-3);
        assert_relative_eq!(c.field_per_volt, -dphi_dy, max_relative = 1e-3);
    }

    #[test]
    fn axialization_pair_null() {
        let trap = TrapModel::default_layout();
        let lateral = trap
            .characteristic_distance(Selector::Group("AX"), &Vector3::new(0.0, um(80.0), 0.0), Axis::X)
            .unwrap();
        assert!(lateral.distance.is_infinite());
        assert_eq!(lateral.field_per_volt, 0.0);
        let ey = |y: f64| {
            trap.characteristic_distance(Selector::Group("AX"), &Vector3::new(0.0, y, 0.0), Axis::Y)
                .unwrap()
                .field_per_volt
        };
        let y0 = null_height(ey, um(50.0), um(400.0));
        assert!((y0 - um(152.0)).abs() < um(0.5), "{}", y0 / MICRO);
    }

    #[test]
    fn filter_limits() {
        let s = FilterStage::new(1e3, 22e-9, 0.25, 6.5).unwrap();
        assert_eq!(s.impedance(0.0).re, 1e3 + 0.25);
        assert_eq!(s.transfer(0.0).norm(), 1.0);
        let w = TWO_PI * 2.6e6;
        let wrc = w * 1e3 * 22e-9;
        assert_relative_eq!(s.impedance(w).re - 0.25, 1e3 / (1.0 + wrc * wrc), max_relative = 1e-12);
        assert!((s.impedance(w).re - 0.25 - 7.742e-3).abs() < 0.01e-3);
        let corner = 1.0 / (s.r * s.c);
        assert_relative_eq!(s.transfer(corner).norm(), std::f64::consts::FRAC_1_SQRT_2, max_relative = 1e-14);
        assert_relative_eq!(s.cutoff_hz(), corner / TWO_PI);
        assert!(FilterStage::new(0.0, 1e-9, 0.0, 1.0).is_err());
        assert!(FilterStage::new(1.0, 1e-9, -1.0, 1.0).is_err());
    }

    #[test]
    fn johnson_matches_hand_sum() {
        let trap = TrapModel::default_layout();
        let r0 = Vector3::new(0.0, um(152.0), 0.0);
        let w = TWO_PI * 2.6e6;
        let mut hand = 0.0;
        for e in &trap.electrodes {
            let stage = trap.filters[&e.group];
            let zr = stage.r / (1.0 + (w * stage.r * stage.c).powi(2)) + stage.r_series;
            let members: Vec<_> = trap.electrodes.iter().filter(|o| o.group == e.group).collect();
            if members[0].id != e.id {
                continue;
            }
            let g: f64 = members
                .iter()
                .map(|m| trap.basis_potential(&m.id, &r0).unwrap().gradient.z)
                .sum();
            hand += 4.0 * BOLTZMANN * stage.temperature * zr * g * g;
        }
        let s = trap.johnson_field_psd(&r0, w, Axis::Z).unwrap();
        assert_relative_eq!(s, hand, max_relative = 1e-12);
        let ax = trap.johnson_breakdown(&r0, w, Axis::X).unwrap();
        let ax_term = ax.iter().find(|(g, _)| g == "AX").unwrap().1;
        assert_eq!(ax_term, 0.0);
    }

    #[test]
    fn johnson_scales_with_temperature() {
        let mut trap = TrapModel::default_layout();
        let r0 = Vector3::new(um(10.0), um(120.0), um(-40.0));
        let w = TWO_PI * 4.3e6;
        let base = trap.johnson_field_psd(&r0, w, Axis::Y).unwrap();
        for f in trap.filters.values_mut() {
            f.temperature *= 2.0;
        }
        let hot = trap.johnson_field_psd(&r0, w, Axis::Y).unwrap();
        assert_relative_eq!(hot, 2.0 * base, max_relative = 1e-12);
        for f in trap.filters.values_mut() {
            f.temperature = 1e-12;
        }
        assert!(trap.johnson_field_psd(&r0, w, Axis::Y).unwrap() < 1e-12 * base);
    }

    #[test]
    fn correlated_field_tiled_plane_vanishes() {
        let trap = tiled_plane(FilterStage::new(1e3, 1e-9, 0.0, 4.0).unwrap());
        let r = Vector3::new(um(40.0), um(60.0), 0.0);
        for axis in Axis::ALL {
            let c = trap.correlated_field(&r, TWO_PI * 1e6, axis).unwrap();
            assert!(c.field_per_volt.abs() < 1e-3, "{axis:?} {}", c.field_per_volt);
        }
    }

    #[test]
    fn correlated_field_symmetry_and_static_limit() {
        let trap = TrapModel::default_layout();
        let r = Vector3::new(0.0, um(140.0), 0.0);
        let axial = trap.correlated_field(&r, TWO_PI * 2.6e6, Axis::Z).unwrap();
        assert!(axial.distance.is_infinite() || axial.field_per_volt.abs() < 1e-6);
        let r = Vector3::new(um(23.0), um(90.0), um(-41.0));
        let ones = vec![1.0; trap.electrodes.len()];
        let stat = trap.potential(&ones, &r).unwrap().gradient;
        for axis in Axis::ALL {
            let c = trap.correlated_field(&r, 0.0, axis).unwrap();
            assert_relative_eq!(c.field_per_volt, -stat[axis.index()], max_relative = 1e-12);
        }
    }

    #[test]
    fn correlated_radial_null_near_axialization_null() {
        let trap = TrapModel::default_layout();
        let w = TWO_PI * 4.339e6;
        let ey = |y: f64| trap.correlated_field(&Vector3::new(0.0, y, 0.0), w, Axis::Y).unwrap().field_per_volt;
        let y0 = null_height(ey, um(100.0), um(300.0));
        assert!(y0 > um(150.0) && y0 < um(175.0), "{}", y0 / MICRO);
        let d_at = |y: f64| trap.correlated_field(&Vector3::new(0.0, y, 0.0), w, Axis::Y).unwrap().inverse_distance();
        assert!(d_at(y0 + um(10.0)) < d_at(y0 + um(30.0)));
        assert!(d_at(y0 - um(10.0)) < d_at(y0 - um(30.0)));
    }

    proptest! {
        #[test]
        fn basis_is_harmonic(x in -800.0f64..800.0, y in 5.0f64..600.0, z in -1600.0f64..1600.0) {
            let trap = TrapModel::default_layout();
            let r = Vector3::new(um(x), um(y), um(z));
            for b in trap.basis_all(&r).unwrap() {
                prop_assert!(b.value > 0.0 && b.value < 1.0);
                prop_assert!(b.hessian.trace().abs() <= 1e-9 * b.hessian.norm().max(f64::MIN_POSITIVE));
            }
        }

        #[test]
        fn johnson_additive_over_groups(y in 30.0f64..400.0, f in 0.1f64..6.0) {
            let trap = TrapModel::default_layout();
            let r = Vector3::new(0.0, um(y), um(15.0));
            let w = TWO_PI * f * 1e6;
            for axis in Axis::ALL {
                let parts: f64 = trap.johnson_breakdown(&r, w, axis).unwrap().iter().map(|p| p.1).sum();
                prop_assert!((parts - trap.johnson_field_psd(&r, w, axis).unwrap()).abs() <= 1e-15 * parts.abs());
                prop_assert!(parts >= 0.0);
            }
        }
    }
}
