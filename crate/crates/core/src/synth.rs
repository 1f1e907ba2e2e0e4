//! Seeded synthetic measurements: camera readouts of a displaced ion,
//! phonon-growth series, Rabi scans, heating-rate datasets and stray-field
//! samples above a dipole grid. Every generator is a pure function of the
//! scenario, its seed and the call arguments.

use nalgebra::{DMatrix, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::constants::{dipole_density_from_e_angstrom, mhz_to_angular, MICRO, TWO_PI};
use crate::electrodes::TrapModel;
use crate::error::{Error, Result};
use crate::fit::weighted_linear_fit;
use crate::noise::{model_rate, HeatingRecord, NoiseModelParams};
use crate::penning::{IonSpecies, ModeLabel};
use crate::sensing::{
    default_field_sensitivity, rabi_probability, reference_curvature, CameraModel, PositionReading, RabiPoint,
    RabiScan, ScanKind,
};
use crate::surfacecharge::{DipoleGrid, FieldSample, GridSpec};
use crate::geometry::Rect;
use crate::SCHEMA_TAG;

/// Independent generator for task `stream` of a seeded scenario.
pub fn task_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraSpec {
    pub pixel_um: f64,
    pub magnification: f64,
    pub center_px: [i64; 2],
    pub sensor_px: [i64; 2],
    pub waist_px: f64,
    pub defocus_um: f64,
}

impl Default for CameraSpec {
    fn default() -> Self {
        let c = CameraModel::default();
        Self {
            pixel_um: c.pixel / MICRO,
            magnification: c.magnification,
            center_px: c.center_px,
            sensor_px: c.sensor_px,
            waist_px: c.waist_px,
            defocus_um: c.defocus_range / MICRO,
        }
    }
}

impl CameraSpec {
    pub fn model(&self) -> CameraModel {
        CameraModel {
            pixel: self.pixel_um * MICRO,
            magnification: self.magnification,
            center_px: self.center_px,
            sensor_px: self.sensor_px,
            waist_px: self.waist_px,
            defocus_range: self.defocus_um * MICRO,
        }
    }
}

/// Rectangular region of uniform dipole density, µm and e·Å/µm².
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DipoleFeature {
    pub x_um: [f64; 2],
    pub z_um: [f64; 2],
    pub density: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DipoleSpec {
    pub region_um: [f64; 4],
    pub nx: usize,
    pub nz: usize,
    /// e·Å/µm².
    pub background: f64,
    pub feature: Vec<DipoleFeature>,
    pub heights_um: Vec<f64>,
    /// Sample grid half-extent in x and z, µm.
    pub sample_half_width_um: f64,
    pub sample_nx: usize,
    pub sample_nz: usize,
    /// Field noise as a fraction of the local field magnitude.
    pub relative_noise: f64,
}

impl Default for DipoleSpec {
    fn default() -> Self {
        Self {
            region_um: [-500.0, 500.0, -500.0, 500.0],
            nx: 20,
            nz: 20,
            background: 180e3,
            feature: vec![
                DipoleFeature { x_um: [-75.0, -25.0], z_um: [-200.0, 200.0], density: -60e3 },
                DipoleFeature { x_um: [25.0, 125.0], z_um: [-50.0, 100.0], density: 40e3 },
                DipoleFeature { x_um: [-125.0, -25.0], z_um: [250.0, 300.0], density: 20e3 },
            ],
            heights_um: vec![75.0, 100.0, 152.0],
            sample_half_width_um: 100.0,
            sample_nx: 10,
            sample_nz: 8,
            relative_noise: 0.05,
        }
    }
}

impl DipoleSpec {
    pub fn grid_spec(&self) -> Result<GridSpec> {
        let [x1, x2, z1, z2] = self.region_um;
        GridSpec::new(Rect::new(x1 * MICRO, x2 * MICRO, z1 * MICRO, z2 * MICRO)?, self.nx, self.nz)
    }

    /// Ground-truth grid: each patch takes the area-weighted feature density.
    pub fn truth(&self) -> Result<DipoleGrid> {
        let spec = self.grid_spec()?;
        let densities = spec
            .patches()
            .iter()
            .map(|p| {
                let mut d = 0.0;
                for f in &self.feature {
                    let ox = (p.x2.min(f.x_um[1] * MICRO) - p.x1.max(f.x_um[0] * MICRO)).max(0.0);
                    let oz = (p.z2.min(f.z_um[1] * MICRO) - p.z1.max(f.z_um[0] * MICRO)).max(0.0);
                    d += f.density * ox * oz / p.area();
                }
                dipole_density_from_e_angstrom(d)
            })
            .collect();
        DipoleGrid::new(spec, densities, dipole_density_from_e_angstrom(self.background))
    }

    pub fn sample_positions(&self) -> Vec<Vector3<f64>> {
        let lin = |n: usize, i: usize| {
            if n == 1 {
                0.0
            } else {
                -self.sample_half_width_um + 2.0 * self.sample_half_width_um * i as f64 / (n - 1) as f64
            }
        };
        let mut out = Vec::new();
        for &h in &self.heights_um {
            for iz in 0..self.sample_nz {
                for ix in 0..self.sample_nx {
                    out.push(Vector3::new(lin(self.sample_nx, ix), h, lin(self.sample_nz, iz)) * MICRO);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModeNoiseSpec {
    pub f_mhz: f64,
    /// Surface rate at 100 µm, quanta/s.
    pub amplitude: f64,
    pub beta: f64,
    /// V²/Hz.
    pub s_v_corr: f64,
    /// quanta/s.
    pub emi_rate: f64,
    pub johnson: bool,
}

impl Default for ModeNoiseSpec {
    fn default() -> Self {
        Self { f_mhz: 2.6, amplitude: 0.0, beta: 4.0, s_v_corr: 0.0, emi_rate: 0.0, johnson: true }
    }
}

impl ModeNoiseSpec {
    pub fn params(&self, mode: ModeLabel) -> NoiseModelParams {
        let mut p = NoiseModelParams::new(mode, self.amplitude, self.beta);
        p.s_v_corr = self.s_v_corr;
        p.emi_rate = self.emi_rate;
        p.johnson = self.johnson;
        p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    pub axial: ModeNoiseSpec,
    pub cyclotron: ModeNoiseSpec,
    pub magnetron: ModeNoiseSpec,
    pub heights_um: Vec<f64>,
    /// Axial heights also measured with the electrodes detached, µm.
    pub detached_heights_um: Vec<f64>,
    /// Relative one-sigma uncertainty of generated rates.
    pub relative_sigma: f64,
    /// Frequency scan at fixed height, MHz.
    pub scan_f_mhz: Vec<f64>,
    pub scan_height_um: f64,
    pub scan_alpha: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            axial: ModeNoiseSpec { f_mhz: 2.6, amplitude: 40.0, beta: 4.0, emi_rate: 4.0, ..Default::default() },
            cyclotron: ModeNoiseSpec {
                f_mhz: 4.32,
                amplitude: 30.0,
                beta: 3.5,
                s_v_corr: 6e-18,
                ..Default::default()
            },
            magnetron: ModeNoiseSpec {
                f_mhz: 0.845,
                amplitude: 60.0,
                beta: 4.1,
                s_v_corr: 0.2e-18,
                ..Default::default()
            },
            heights_um: vec![50.0, 65.0, 75.0, 100.0, 152.0, 250.0, 350.0, 450.0],
            detached_heights_um: vec![75.0, 152.0, 450.0],
            relative_sigma: 0.1,
            scan_f_mhz: (0..40).map(|i| 0.3 * (3.4f64 / 0.3).powf(i as f64 / 39.0)).collect(),
            scan_height_um: 75.0,
            scan_alpha: 1.7,
        }
    }
}

impl NoiseSpec {
    pub fn mode(&self, mode: ModeLabel) -> &ModeNoiseSpec {
        match mode {
            ModeLabel::Axial => &self.axial,
            ModeLabel::Cyclotron => &self.cyclotron,
            ModeLabel::Magnetron => &self.magnetron,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MagneticsSpec {
    /// Field gradient (x, y, z), nT/µm.
    pub gradient_nt_per_um: [f64; 3],
    /// Point where the field offset is zero, µm.
    pub reference_um: [f64; 3],
    pub rabi_khz: f64,
    pub shots: u32,
    /// Scan half-width about the local resonance guess, kHz.
    pub scan_half_width_khz: f64,
    pub scan_points: usize,
    /// Scan sites, µm.
    pub sites_um: Vec<[f64; 3]>,
}

impl Default for MagneticsSpec {
    fn default() -> Self {
        let mut sites = Vec::new();
        for z in [-100.0, -50.0, 0.0, 50.0, 100.0] {
            sites.push([0.0, 152.0, z]);
        }
        for y in [75.0, 100.0, 125.0, 175.0, 200.0] {
            sites.push([0.0, y, 0.0]);
        }
        Self {
            gradient_nt_per_um: [0.0, 5.87, -5.26],
            reference_um: [0.0, 152.0, 0.0],
            rabi_khz: 10.0,
            shots: 100,
            scan_half_width_khz: 40.0,
            scan_points: 41,
            sites_um: sites,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationSpec {
    /// Uniform stray field added to the dipole-layer field, V/m.
    pub stray_field_v_per_m: [f64; 3],
    /// Calibration sites, µm.
    pub sites_um: Vec<[f64; 3]>,
    pub f1: f64,
    pub f2: f64,
    pub max_iterations: usize,
}

impl Default for CalibrationSpec {
    fn default() -> Self {
        let mut sites = Vec::new();
        for y in [75.0, 100.0, 152.0] {
            for z in [-100.0, 0.0, 100.0] {
                for x in [-100.0, 0.0, 100.0] {
                    sites.push([x, y, z]);
                }
            }
        }
        Self { stray_field_v_per_m: [120.0, -300.0, 250.0], sites_um: sites, f1: 1.6, f2: 2.5, max_iterations: 5 }
    }
}

/// Ground truth and sampling plan for a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub schema: String,
    pub seed: u64,
    /// Trap layout file; the bundled layout when absent.
    pub layout: Option<String>,
    pub camera: CameraSpec,
    pub calibration: CalibrationSpec,
    pub dipoles: DipoleSpec,
    pub noise: NoiseSpec,
    pub magnetics: MagneticsSpec,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            schema: SCHEMA_TAG.to_string(),
            seed: 1,
            layout: None,
            camera: CameraSpec::default(),
            calibration: CalibrationSpec::default(),
            dipoles: DipoleSpec::default(),
            noise: NoiseSpec::default(),
            magnetics: MagneticsSpec::default(),
        }
    }
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self> {
        let s: Scenario = toml::from_str(text).map_err(|e| Error::Schema(format!("scenario: {e}")))?;
        if s.schema != SCHEMA_TAG {
            return Err(Error::Schema(format!("scenario schema `{}` is not `{SCHEMA_TAG}`", s.schema)));
        }
        s.camera.model().validate()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }
}

/// Camera readouts of an ion held in the quadrupole scaled by f_ax², pushed
/// by the stray field and the applied correction.
#[derive(Debug, Clone)]
pub struct CameraOracle {
    pub camera: CameraModel,
    pub species: IonSpecies,
    /// ∇φ_stray at the site, V/m.
    pub stray_gradient: Vector3<f64>,
    /// Ion height above the electrodes at zero offset, m.
    pub site_height: f64,
    rng: ChaCha8Rng,
}

impl CameraOracle {
    pub fn new(camera: CameraModel, species: IonSpecies, stray_field: Vector3<f64>, site_height: f64, rng: ChaCha8Rng) -> Self {
        Self { camera, species, stray_gradient: -stray_field, site_height, rng }
    }

    /// Equilibrium offset: f²k⊙r + ∇φ_stray − E = 0.
    pub fn offset(&self, applied: &Vector3<f64>, f_ax: f64) -> Vector3<f64> {
        let k = reference_curvature(&self.species) * (f_ax * f_ax);
        (applied - self.stray_gradient).component_div(&k)
    }

    pub fn read(&mut self, applied: &Vector3<f64>, f_ax: f64) -> Result<PositionReading> {
        if !(f_ax > 0.0) {
            return Err(Error::InvalidParameter("f_ax must be positive".into()));
        }
        let r = self.offset(applied, f_ax);
        if r.y + self.site_height <= 10.0 * MICRO {
            return Err(Error::IonLost(format!("pushed to {:.1} µm above the surface", (r.y + self.site_height) / MICRO)));
        }
        let (px, pz) = self.camera.project(&r)?;
        let dither = self.rng.random_range(-1i64..=1) as f64;
        let width = (self.camera.width_at(r.y).round() + dither).max(1.0);
        Ok(PositionReading { f_ax, applied: *applied, px, pz, width })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhononPoint {
    /// s.
    pub wait: f64,
    pub nbar: f64,
    pub sigma: f64,
}

/// Mean phonon number sampled at each wait time from N shots of a Poisson
/// phonon distribution with mean n₀ + ṅt, then a weighted linear fit whose
/// variances come from the fitted model.
pub fn phonon_series(
    true_rate: f64,
    initial: f64,
    waits: &[f64],
    shots: u32,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, f64, Vec<PhononPoint>)> {
    let mut distinct = waits.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 2 || shots == 0 || waits.iter().any(|t| *t < 0.0) {
        return Err(Error::InvalidParameter("phonon series needs ≥ 2 distinct wait times and shots > 0".into()));
    }
    if !(true_rate >= 0.0 && initial >= 0.0) {
        return Err(Error::InvalidParameter("rates must be nonnegative".into()));
    }
    let n = shots as f64;
    let mut pts = Vec::with_capacity(waits.len());
    for &t in waits {
        let mean = initial + true_rate * t;
        let total = if mean > 0.0 { Poisson::new(mean * n).expect("positive mean").sample(rng) } else { 0.0 };
        pts.push(PhononPoint { wait: t, nbar: total / n, sigma: 0.0 });
    }
    let design = DMatrix::from_fn(pts.len(), 2, |i, j| if j == 0 { 1.0 } else { pts[i].wait });
    let y: Vec<f64> = pts.iter().map(|p| p.nbar).collect();
    let floor = 1.0 / n;
    let mut sigma: Vec<f64> = pts.iter().map(|p| (p.nbar.max(floor) / n).sqrt()).collect();
    let mut fit = weighted_linear_fit(&design, &y, &sigma)?;
    for _ in 0..2 {
        sigma = pts
            .iter()
            .map(|p| ((fit.params[0] + fit.params[1] * p.wait).max(floor) / n).sqrt())
            .collect();
        fit = weighted_linear_fit(&design, &y, &sigma)?;
    }
    for (p, s) in pts.iter_mut().zip(&sigma) {
        p.sigma = *s;
    }
    let slope = fit.estimate(1);
    Ok((slope.value, slope.sigma, pts))
}

/// Default wait times: ten values spanning up to ten expected quanta.
pub fn default_waits(rate: f64) -> Vec<f64> {
    let t_max = if rate > 0.0 { 10.0 / rate } else { 0.1 };
    (0..10).map(|i| t_max * i as f64 / 9.0).collect()
}

/// Heating record from a phonon series at one site.
#[allow(clippy::too_many_arguments)]
pub fn phonon_record(
    params: &NoiseModelParams,
    trap: &TrapModel,
    mode: ModeLabel,
    position: Vector3<f64>,
    omega: f64,
    detached: bool,
    shots: u32,
    rng: &mut ChaCha8Rng,
) -> Result<(HeatingRecord, Vec<PhononPoint>)> {
    let mut rec = HeatingRecord { mode, position, distance: position.y, omega, rate: 0.0, sigma_rate: 1.0, detached };
    let truth = model_rate(params, trap, &rec)?.total;
    let waits = default_waits(truth);
    let (rate, sigma, pts) = phonon_series(truth, 0.05, &waits, shots, rng)?;
    rec.rate = rate;
    rec.sigma_rate = sigma;
    Ok((rec, pts))
}

/// Heating rates at the given heights above the trap center, each drawn
/// around the model with relative Gaussian error (redrawn until ≥ 0).
pub fn distance_scan(
    params: &NoiseModelParams,
    trap: &TrapModel,
    omega: f64,
    heights: &[f64],
    detached: bool,
    relative_sigma: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<HeatingRecord>> {
    if !(relative_sigma > 0.0) {
        return Err(Error::InvalidParameter("relative_sigma must be positive".into()));
    }
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    heights
        .iter()
        .map(|&h| {
            let mut rec = HeatingRecord {
                mode: params.mode,
                position: Vector3::new(0.0, h, 0.0),
                distance: h,
                omega,
                rate: 0.0,
                sigma_rate: 1.0,
                detached,
            };
            let truth = model_rate(params, trap, &rec)?.total;
            let sigma = relative_sigma * truth;
            let mut rate = -1.0;
            while rate < 0.0 {
                rate = truth + sigma * normal.sample(rng);
            }
            rec.rate = rate;
            rec.sigma_rate = sigma.max(f64::MIN_POSITIVE);
            Ok(rec)
        })
        .collect()
}

/// Axial rates at one height over a set of frequencies with S_E ∝ ω^−α.
pub fn frequency_scan(
    species: &IonSpecies,
    s_ref: f64,
    omega_ref: f64,
    alpha: f64,
    omegas: &[f64],
    height: f64,
    relative_sigma: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<HeatingRecord>> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    omegas
        .iter()
        .map(|&w| {
            let s = s_ref * (w / omega_ref).powf(-alpha);
            let truth = s * species.charge_c().powi(2) / (4.0 * crate::constants::HBAR * species.mass * w);
            let sigma = relative_sigma * truth;
            let mut rate = -1.0;
            while rate < 0.0 {
                rate = truth + sigma * normal.sample(rng);
            }
            Ok(HeatingRecord {
                mode: ModeLabel::Axial,
                position: Vector3::new(0.0, height, 0.0),
                distance: height,
                omega: w,
                rate,
                sigma_rate: sigma,
                detached: false,
            })
        })
        .collect()
}

/// Binomially sampled Rabi scan; `shots = None` returns the exact lineshape.
pub fn rabi_oracle(
    kind: ScanKind,
    abscissa: &[f64],
    rabi: f64,
    resonance: f64,
    shots: Option<u32>,
    rng: &mut ChaCha8Rng,
) -> Result<RabiScan> {
    let points = abscissa
        .iter()
        .map(|&x| {
            let p = match kind {
                ScanKind::Frequency { duration } => rabi_probability(rabi, x - resonance, duration),
                ScanKind::Duration { detuning } => rabi_probability(rabi, detuning, x),
            }
            .clamp(0.0, 1.0);
            match shots {
                None => Ok(RabiPoint { x, p_up: p, shots: u32::MAX }),
                Some(0) => Err(Error::InvalidParameter("shots must be positive".into())),
                Some(n) => {
                    let k = Binomial::new(n as u64, p).expect("valid probability").sample(rng);
                    Ok(RabiPoint { x, p_up: k as f64 / n as f64, shots: n })
                }
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RabiScan { kind, points })
}

/// Spin-transition angular frequency at a position for a linear field map
/// about `b0` (T) with gradient (T/m).
pub fn resonance_at(b0: f64, gradient: &Vector3<f64>, reference: &Vector3<f64>, r: &Vector3<f64>) -> f64 {
    default_field_sensitivity() * (b0 + gradient.dot(&(r - reference)))
}

/// Frequency scans at every site of a magnetics spec in a field `b0` plus
/// the configured gradient. Returns the reference resonance and the scans.
pub fn magnetics_scans(
    spec: &MagneticsSpec,
    b0: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, Vec<(Vector3<f64>, RabiScan)>)> {
    let gradient = Vector3::from(spec.gradient_nt_per_um) * 1e-3;
    let reference = Vector3::from(spec.reference_um) * MICRO;
    let rabi = khz(spec.rabi_khz);
    if !(rabi > 0.0) {
        return Err(Error::InvalidParameter("Rabi frequency must be positive".into()));
    }
    let duration = std::f64::consts::PI / rabi;
    let omega_ref = resonance_at(b0, &gradient, &reference, &reference);
    let xs = scan_abscissa(omega_ref, khz(spec.scan_half_width_khz), spec.scan_points);
    let scans = spec
        .sites_um
        .iter()
        .map(|s| {
            let r = Vector3::from(*s) * MICRO;
            let res = resonance_at(b0, &gradient, &reference, &r);
            rabi_oracle(ScanKind::Frequency { duration }, &xs, rabi, res, Some(spec.shots), rng).map(|scan| (r, scan))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((omega_ref, scans))
}

/// Noisy stray-field samples above a dipole grid; σ per axis is
/// `relative_noise` times the local field magnitude.
pub fn field_samples(
    grid: &DipoleGrid,
    positions: &[Vector3<f64>],
    relative_noise: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<FieldSample>> {
    if !(relative_noise >= 0.0) {
        return Err(Error::InvalidParameter("relative_noise must be ≥ 0".into()));
    }
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    positions
        .iter()
        .map(|r| {
            let e = grid.grid_field(r)?;
            let s = (relative_noise * e.norm()).max(1e-9);
            let noisy = if relative_noise > 0.0 {
                e + Vector3::from_fn(|_, _| s * normal.sample(rng))
            } else {
                e
            };
            FieldSample::new(*r, noisy, Vector3::repeat(s))
        })
        .collect()
}

/// Default frequency-scan abscissa around a resonance guess, rad/s.
pub fn scan_abscissa(center: f64, half_width: f64, points: usize) -> Vec<f64> {
    (0..points)
        .map(|i| center - half_width + 2.0 * half_width * i as f64 / (points.max(2) - 1) as f64)
        .collect()
}

/// Scan half-width in rad/s for a kHz setting.
pub fn khz(v: f64) -> f64 {
    TWO_PI * v * 1e3
}

/// Mode frequency of a noise spec, rad/s.
pub fn mode_omega(spec: &ModeNoiseSpec) -> f64 {
    mhz_to_angular(spec.f_mhz)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensing::fit_rabi;

    #[test]
    fn zero_field_reads_center() {
        let mut o = CameraOracle::new(CameraModel::default(), IonSpecies::beryllium9(), Vector3::zeros(), 152e-6, task_rng(1, 0));
        let r = o.read(&Vector3::zeros(), 1.6).unwrap();
        assert_eq!((r.px, r.pz), (256, 256));
        assert!((r.width - 6.0).abs() <= 1.0);
    }

    #[test]
    fn cancelling_correction_is_frequency_independent() {
        let stray = Vector3::new(300.0, -200.0, 150.0);
        let mut o = CameraOracle::new(CameraModel::default(), IonSpecies::beryllium9(), stray, 152e-6, task_rng(2, 0));
        let e = -stray;
        let a = o.read(&e, 1.6).unwrap();
        let b = o.read(&e, 2.5).unwrap();
        assert_eq!((a.px, a.pz), (b.px, b.pz));
        assert_eq!(o.offset(&e, 1.6), Vector3::zeros());
    }

    #[test]
    fn lost_ion_flagged() {
        let mut o = CameraOracle::new(
            CameraModel::default(),
            IonSpecies::beryllium9(),
            Vector3::new(0.0, 0.0, 4e4),
            152e-6,
            task_rng(3, 0),
        );
        assert!(matches!(o.read(&Vector3::zeros(), 1.0), Err(Error::IonLost(_))));
    }

    #[test]
    fn generators_are_deterministic() {
        let a = phonon_series(100.0, 0.05, &default_waits(100.0), 200, &mut task_rng(9, 4)).unwrap();
        let b = phonon_series(100.0, 0.05, &default_waits(100.0), 200, &mut task_rng(9, 4)).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.2, b.2);
        let c = phonon_series(100.0, 0.05, &default_waits(100.0), 200, &mut task_rng(9, 5)).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn zero_rate_gives_zero_slope() {
        let (rate, _, pts) = phonon_series(0.0, 0.0, &[0.0, 0.01, 0.02], 100, &mut task_rng(1, 1)).unwrap();
        assert_eq!(rate, 0.0);
        assert!(pts.iter().all(|p| p.nbar == 0.0));
        assert!(phonon_series(1.0, 0.0, &[0.01, 0.01], 100, &mut task_rng(1, 1)).is_err());
    }

    #[test]
    fn rabi_oracle_limits() {
        let xs: Vec<f64> = (0..20).map(|i| i as f64 * 1e-5).collect();
        let kind = ScanKind::Duration { detuning: 0.0 };
        let exact = rabi_oracle(kind, &xs, 3e4, 0.0, None, &mut task_rng(1, 2)).unwrap();
        for p in &exact.points {
            assert_eq!(p.p_up, rabi_probability(3e4, 0.0, p.x));
        }
        let dark = rabi_oracle(kind, &xs, 0.0, 0.0, Some(50), &mut task_rng(1, 2)).unwrap();
        assert!(dark.points.iter().all(|p| p.p_up == 1.0));
    }

    #[test]
    fn rabi_round_trip_frequency_scan() {
        let rabi = khz(10.0);
        let t = std::f64::consts::PI / rabi;
        let res = TWO_PI * 84e9 + 3.3e3;
        let xs = scan_abscissa(TWO_PI * 84e9, khz(40.0), 41);
        let scan = rabi_oracle(ScanKind::Frequency { duration: t }, &xs, rabi, res, Some(100), &mut task_rng(5, 0)).unwrap();
        let fit = fit_rabi(&scan).unwrap();
        assert!(fit.center.unwrap().pull(res) < 3.0 * 1.5);
    }

    #[test]
    fn truth_grid_area_weighting() {
        let spec = DipoleSpec {
            feature: vec![DipoleFeature { x_um: [0.0, 25.0], z_um: [0.0, 50.0], density: 100.0 }],
            background: 0.0,
            ..Default::default()
        };
        let g = spec.truth().unwrap();
        let nonzero: Vec<f64> = g.densities.iter().copied().filter(|d| *d != 0.0).collect();
        assert_eq!(nonzero.len(), 1);
        assert!((nonzero[0] - dipole_density_from_e_angstrom(50.0)).abs() < 1e-12 * nonzero[0].abs());
        assert_eq!(spec.sample_positions().len(), 240);
    }

    #[test]
    fn scenario_toml_round_trip() {
        let s = Scenario::default();
        let back = Scenario::from_toml(&s.to_toml()).unwrap();
        assert_eq!(back, s);
        assert!(Scenario::from_toml("schema = \"other\"").is_err());
    }
}
