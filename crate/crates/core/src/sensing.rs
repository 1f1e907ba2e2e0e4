//! Static stray-field extraction from curvature-scaled camera readouts, the
//! iterative compensation loop built on it, and magnetic-field mapping from
//! Rabi spectroscopy and linear gradient fits.

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::constants::{electron_spin_sensitivity, MICRO, TWO_PI};
use crate::electrodes::Axis;
use crate::error::{Error, Result};
use crate::fit::{levenberg_marquardt, weighted_linear_fit, Estimate, LmConfig};
use crate::penning::{IonSpecies, CURVATURE_RATIOS};

/// Axial frequency unit of the readout scale factors, rad/s.
pub const REFERENCE_OMEGA: f64 = TWO_PI * 1e6;

/// Signed quadrupole curvature per axis at [`REFERENCE_OMEGA`], V/m².
pub fn reference_curvature(species: &IonSpecies) -> Vector3<f64> {
    Vector3::from(CURVATURE_RATIOS) * (species.mass * REFERENCE_OMEGA * REFERENCE_OMEGA / species.charge_c())
}

/// Imaging model: x and z project onto pixel columns/rows about a center
/// pixel; the out-of-plane offset y broadens the spot as
/// w(y) = w₀√(1 + (y/y_R)²).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    /// Sensor pixel pitch, m.
    pub pixel: f64,
    pub magnification: f64,
    /// Pixel (column, row) imaging the reference point.
    pub center_px: [i64; 2],
    pub sensor_px: [i64; 2],
    /// In-focus spot width, px.
    pub waist_px: f64,
    /// Defocus length y_R, m.
    pub defocus_range: f64,
}

impl Default for CameraModel {
    /// 16 µm pixels at 25× on a 512 × 512 sensor; y_R is half the
    /// 313 nm / NA 0.55 depth of field.
    fn default() -> Self {
        Self {
            pixel: 16.0 * MICRO,
            magnification: 25.0,
            center_px: [256, 256],
            sensor_px: [512, 512],
            waist_px: 6.0,
            defocus_range: 0.5 * 313e-9 / (0.55 * 0.55),
        }
    }
}

impl CameraModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.pixel > 0.0 && self.magnification > 0.0 && self.waist_px > 0.0 && self.defocus_range > 0.0) {
            return Err(Error::InvalidParameter("camera parameters must be positive".into()));
        }
        Ok(())
    }

    /// Object-side size of one pixel, m.
    pub fn object_pixel(&self) -> f64 {
        self.pixel / self.magnification
    }

    pub fn width_at(&self, dy: f64) -> f64 {
        self.waist_px * (1.0 + (dy / self.defocus_range).powi(2)).sqrt()
    }

    /// Pixel indices for an offset from the reference point; positions are
    /// quantized with floor(x/p + ½).
    pub fn project(&self, offset: &Vector3<f64>) -> Result<(i64, i64)> {
        let q = |v: f64| (v / self.object_pixel() + 0.5).floor();
        let (cx, cz) = (q(offset.x), q(offset.z));
        let px = self.center_px[0] as f64 + cx;
        let pz = self.center_px[1] as f64 + cz;
        if !(px >= 0.0 && pz >= 0.0 && px < self.sensor_px[0] as f64 && pz < self.sensor_px[1] as f64) {
            return Err(Error::IonLost(format!(
                "offset ({:.1}, {:.1}) µm leaves the field of view",
                offset.x / MICRO,
                offset.z / MICRO
            )));
        }
        Ok((px as i64, pz as i64))
    }

    /// |y| implied by a measured width; zero inside the one-pixel dead band
    /// above the waist.
    pub fn height_from_width(&self, width: f64) -> f64 {
        if width <= self.waist_px + 1.0 {
            return 0.0;
        }
        self.defocus_range * ((width / self.waist_px).powi(2) - 1.0).sqrt()
    }

    /// Offset estimate (|y| only) and its one-sigma uncertainty.
    pub fn estimate(&self, reading: &PositionReading) -> (Vector3<f64>, Vector3<f64>) {
        let p = self.object_pixel();
        let x = (reading.px - self.center_px[0]) as f64 * p;
        let z = (reading.pz - self.center_px[1]) as f64 * p;
        let y = self.height_from_width(reading.width);
        let dead_band = self.height_from_width(self.waist_px + 1.0 + 1e-9);
        let sy = (0.5 * (self.height_from_width(reading.width + 1.0) - self.height_from_width(reading.width - 1.0)))
            .max(dead_band);
        (Vector3::new(x, y, z), Vector3::new(0.5 * p, sy, 0.5 * p))
    }
}

/// One camera readout at a given scale factor and correction field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositionReading {
    /// Axial frequency in units of 2π×1 MHz.
    pub f_ax: f64,
    /// Applied correction field, V/m.
    pub applied: Vector3<f64>,
    pub px: i64,
    pub pz: i64,
    /// Spot width, px.
    pub width: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrayFieldResult {
    /// ∇φ_stray, V/m.
    pub grad_phi_stray: Vector3<f64>,
    /// ∇φ_app per unit f², V/m.
    pub grad_phi_app: Vector3<f64>,
    pub sigma_stray: Vector3<f64>,
    pub sigma_app: Vector3<f64>,
}

/// Co-location test: equal pixels and widths within 2 px.
pub fn colocated(a: &PositionReading, b: &PositionReading) -> bool {
    a.px == b.px && a.pz == b.pz && (a.width - b.width).abs() <= 2.0
}

/// Solves f_i²∇φ_app + ∇φ_stray = E_i for the two readings, with
/// uncertainties propagated from the position uncertainty of the common
/// location (σ_E = f²|k|σ_pos per axis).
pub fn extract_stray_field(
    r1: &PositionReading,
    r2: &PositionReading,
    camera: &CameraModel,
    species: &IonSpecies,
) -> Result<StrayFieldResult> {
    if !colocated(r1, r2) {
        return Err(Error::NotColocated(format!(
            "pixels ({}, {}) vs ({}, {}), widths {} vs {}",
            r1.px, r1.pz, r2.px, r2.pz, r1.width, r2.width
        )));
    }
    stray_field_unchecked(r1, r2, camera, species)
}

fn stray_field_unchecked(
    r1: &PositionReading,
    r2: &PositionReading,
    camera: &CameraModel,
    species: &IonSpecies,
) -> Result<StrayFieldResult> {
    if !(r1.f_ax > 0.0 && r2.f_ax > 0.0) {
        return Err(Error::InvalidParameter("f_ax must be positive".into()));
    }
    let (f1, f2) = (r1.f_ax * r1.f_ax, r2.f_ax * r2.f_ax);
    let den = f2 - f1;
    if den == 0.0 {
        return Err(Error::Degenerate("readings taken at the same axial frequency".into()));
    }
    let (e1, e2) = (r1.applied, r2.applied);
    let grad_phi_app = (e2 - e1) / den;
    let grad_phi_stray = (e1 * f2 - e2 * f1) / den;
    let k = reference_curvature(species).abs();
    let (_, s1) = camera.estimate(r1);
    let (_, s2) = camera.estimate(r2);
    let se1 = k.component_mul(&s1) * f1;
    let se2 = k.component_mul(&s2) * f2;
    let sigma_app = (se1.component_mul(&se1) + se2.component_mul(&se2)).map(f64::sqrt) / den.abs();
    let sigma_stray =
        (se2.component_mul(&se2) * (f1 * f1) + se1.component_mul(&se1) * (f2 * f2)).map(f64::sqrt) / den.abs();
    Ok(StrayFieldResult { grad_phi_stray, grad_phi_app, sigma_stray, sigma_app })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationOptions {
    pub f1: f64,
    pub f2: f64,
    pub max_iterations: usize,
    /// Starting correction field, V/m.
    pub initial: Vector3<f64>,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self { f1: 1.6, f2: 2.5, max_iterations: 5, initial: Vector3::zeros() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationStep {
    pub first: PositionReading,
    pub second: PositionReading,
    pub colocated: bool,
    pub result: StrayFieldResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub result: StrayFieldResult,
    pub trace: Vec<CalibrationStep>,
    pub converged: bool,
    /// Stop threshold on ‖∇φ_app‖, V/m.
    pub threshold: f64,
}

/// Repeats the two-frequency measurement, each time starting from the
/// previous stray-field estimate as correction, until ‖∇φ_app‖ drops below
/// the minimal resolvable axial field at 2π×1 MHz.
///
/// The second correction is chosen to hold the ion at the position seen in
/// the first readout; the sign of the out-of-plane offset is taken from an
/// extra readout after a small vertical push.
pub fn iterate_calibration<F>(
    mut oracle: F,
    camera: &CameraModel,
    species: &IonSpecies,
    opts: &CalibrationOptions,
) -> Result<Calibration>
where
    F: FnMut(&Vector3<f64>, f64) -> Result<PositionReading>,
{
    camera.validate()?;
    if opts.max_iterations == 0 {
        return Err(Error::InvalidParameter("max_iterations must be at least 1".into()));
    }
    if !(opts.f1 > 0.0 && opts.f2 > 0.0) || opts.f1 == opts.f2 {
        return Err(Error::InvalidParameter("f1 and f2 must be positive and distinct".into()));
    }
    let k = reference_curvature(species);
    let threshold = k.z.abs() * camera.object_pixel() / 2.0;
    let (f1s, f2s) = (opts.f1 * opts.f1, opts.f2 * opts.f2);
    let mut correction = opts.initial;
    let mut trace = Vec::new();
    for _ in 0..opts.max_iterations {
        let first = oracle(&correction, opts.f1)?;
        let (mut offset, _) = camera.estimate(&first);
        if offset.y > 0.0 {
            let push = (0.5 * offset.y).max(camera.defocus_range);
            let mut probe = correction;
            probe.y += f1s * k.y * push;
            let pushed = oracle(&probe, opts.f1)?;
            if pushed.width < first.width {
                offset.y = -offset.y;
            }
        }
        let second_field = correction + k.component_mul(&offset) * (f2s - f1s);
        let second = oracle(&second_field, opts.f2)?;
        let result = stray_field_unchecked(&first, &second, camera, species)?;
        trace.push(CalibrationStep { first, second, colocated: colocated(&first, &second), result });
        if result.grad_phi_app.norm() < threshold {
            return Ok(Calibration { result, trace, converged: true, threshold });
        }
        correction = result.grad_phi_stray;
    }
    let result = trace.last().expect("at least one iteration").result;
    Ok(Calibration { result, trace, converged: false, threshold })
}

/// P(↑) after a pulse of duration t at detuning Δ for an ion starting in ↑.
pub fn rabi_probability(rabi: f64, detuning: f64, t: f64) -> f64 {
    let g2 = rabi * rabi + detuning * detuning;
    if g2 == 0.0 {
        return 1.0;
    }
    let s = (0.5 * g2.sqrt() * t).sin();
    1.0 - rabi * rabi / g2 * s * s
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScanKind {
    /// Abscissa is the drive angular frequency; pulse duration fixed, s.
    Frequency { duration: f64 },
    /// Abscissa is the pulse duration; detuning fixed, rad/s.
    Duration { detuning: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RabiPoint {
    pub x: f64,
    pub p_up: f64,
    pub shots: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RabiScan {
    pub kind: ScanKind,
    pub points: Vec<RabiPoint>,
}

impl RabiScan {
    pub fn validate(&self) -> Result<()> {
        if self.points.len() < 5 {
            return Err(Error::InvalidParameter(format!("Rabi fit needs ≥ 5 points, got {}", self.points.len())));
        }
        for (i, p) in self.points.iter().enumerate() {
            if !(0.0..=1.0).contains(&p.p_up) || p.shots == 0 || !p.x.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "point {i}: ordinate must lie in [0, 1] with shots > 0"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RabiFit {
    /// Transition angular frequency (frequency scans), rad/s.
    pub center: Option<Estimate>,
    /// Rabi angular frequency, rad/s.
    pub rabi: Estimate,
    pub chi2: f64,
    pub dof: usize,
    pub residuals: Vec<f64>,
}

fn shrunk(p: f64, n: f64) -> f64 {
    (p * n + 1.0) / (n + 2.0)
}

/// Weighted least squares of the two-level lineshape with binomial
/// uncertainties, first from the data and then from the fitted model.
pub fn fit_rabi(scan: &RabiScan) -> Result<RabiFit> {
    scan.validate()?;
    let pts = &scan.points;
    let n = pts.len();
    let sigma_of = |p: f64, shots: u32| {
        let n = shots as f64;
        let q = shrunk(p, n);
        (q * (1.0 - q) / n).sqrt()
    };
    let mut sigma: Vec<f64> = pts.iter().map(|p| sigma_of(p.p_up, p.shots)).collect();
    let (pmin, pmax) = pts.iter().fold((1f64, 0f64), |(a, b), p| (a.min(p.p_up), b.max(p.p_up)));
    let mut sorted = sigma.clone();
    sorted.sort_by(f64::total_cmp);
    if pmax - pmin < 3.0 * sorted[n / 2] {
        return Err(Error::Degenerate("scan is flat; lineshape not identifiable".into()));
    }
    let xs: Vec<f64> = pts.iter().map(|p| p.x).collect();
    let xmin = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    let xmax = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);

    // Dimensionless parameters: frequency scans in units of 1/t about the
    // scan midpoint, duration scans in units of 1/t_max.
    let (scale, origin) = match scan.kind {
        ScanKind::Frequency { duration } => {
            if !(duration > 0.0) {
                return Err(Error::InvalidParameter("pulse duration must be positive".into()));
            }
            (duration, 0.5 * (xmin + xmax))
        }
        ScanKind::Duration { .. } => {
            if !(xmax > 0.0 && xmin >= 0.0) {
                return Err(Error::InvalidParameter("pulse durations must be ≥ 0 and not all zero".into()));
            }
            (xmax, 0.0)
        }
    };
    let model = |params: &[f64], x: f64| -> f64 {
        match scan.kind {
            ScanKind::Frequency { .. } => {
                let det = (x - origin) * scale - params[1];
                rabi_probability(params[0], det, 1.0)
            }
            ScanKind::Duration { detuning } => rabi_probability(params[0], detuning * scale, x / scale),
        }
    };
    let chi2_of = |params: &[f64], sigma: &[f64]| -> f64 {
        pts.iter().zip(sigma).map(|(p, s)| ((model(params, p.x) - p.p_up) / s).powi(2)).sum()
    };

    let mut starts: Vec<Vec<f64>> = Vec::new();
    match scan.kind {
        ScanKind::Frequency { .. } => {
            for &x0 in &xs {
                for i in 1..=40 {
                    starts.push(vec![0.25 * i as f64, (x0 - origin) * scale]);
                }
            }
        }
        ScanKind::Duration { .. } => {
            let nyquist = std::f64::consts::PI * n as f64;
            for i in 0..=2000 {
                starts.push(vec![0.1 * (nyquist / 0.1).powf(i as f64 / 2000.0)]);
            }
        }
    }
    let mut best = starts
        .iter()
        .min_by(|a, b| chi2_of(a, &sigma).total_cmp(&chi2_of(b, &sigma)))
        .expect("nonempty start grid")
        .clone();

    let mut result = None;
    for _pass in 0..2 {
        let sig = sigma.clone();
        let residual = |p: &DVector<f64>| {
            DVector::from_iterator(n, pts.iter().zip(&sig).map(|(q, s)| (model(p.as_slice(), q.x) - q.p_up) / s))
        };
        let fit = levenberg_marquardt(residual, DVector::from_vec(best.clone()), LmConfig::default());
        best = fit.params.iter().copied().collect();
        sigma = pts.iter().map(|p| sigma_of(model(&best, p.x), p.shots)).collect();
        result = Some(fit);
    }
    let fit = result.expect("two passes ran");
    let final_sigma: Vec<f64> = pts.iter().map(|p| sigma_of(model(&best, p.x), p.shots)).collect();
    let residual = |p: &DVector<f64>| {
        DVector::from_iterator(n, pts.iter().zip(&final_sigma).map(|(q, s)| (model(p.as_slice(), q.x) - q.p_up) / s))
    };
    let x = DVector::from_vec(best.clone());
    let r = residual(&x);
    let jac = crate::fit::numeric_jacobian(&residual, &x, &r);
    let cov = (jac.transpose() * &jac)
        .try_inverse()
        .ok_or_else(|| Error::Degenerate("Rabi fit covariance is singular".into()))?;
    if !fit.converged {
        return Err(Error::NoConvergence("Rabi lineshape fit".into()));
    }
    let rabi = Estimate::new(best[0].abs() / scale, cov[(0, 0)].max(0.0).sqrt() / scale);
    let center = match scan.kind {
        ScanKind::Frequency { .. } => {
            Some(Estimate::new(origin + best[1] / scale, cov[(1, 1)].max(0.0).sqrt() / scale))
        }
        ScanKind::Duration { .. } => None,
    };
    Ok(RabiFit {
        center,
        rabi,
        chi2: r.norm_squared(),
        dof: n - best.len(),
        residuals: r.iter().copied().collect(),
    })
}

/// ΔB = Δω / (dω/dB), tesla.
pub fn delta_b_from_delta_omega(delta_omega: f64, sensitivity: f64) -> Result<f64> {
    if sensitivity == 0.0 || !sensitivity.is_finite() {
        return Err(Error::InvalidParameter("field sensitivity must be finite and nonzero".into()));
    }
    Ok(delta_omega / sensitivity)
}

/// Default dω/dB of the electron-spin transition, rad s⁻¹ T⁻¹.
pub fn default_field_sensitivity() -> f64 {
    electron_spin_sensitivity()
}

/// Magnetic-field shifts relative to `reference_omega` from fitted
/// frequency-scan centers, one point per scan.
pub fn field_shifts(
    scans: &[(Vector3<f64>, RabiScan)],
    reference_omega: f64,
    sensitivity: f64,
) -> Result<Vec<(GradientPoint, RabiFit)>> {
    scans
        .iter()
        .map(|(position, scan)| {
            let fit = fit_rabi(scan)?;
            let center = fit
                .center
                .ok_or_else(|| Error::InvalidParameter("field map needs frequency scans".into()))?;
            let value = delta_b_from_delta_omega(center.value - reference_omega, sensitivity)?;
            let sigma = delta_b_from_delta_omega(center.sigma, sensitivity)?.abs();
            Ok((GradientPoint { position: *position, value, sigma }, fit))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradientPoint {
    pub position: Vector3<f64>,
    pub value: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AxisSlope {
    pub axis: Axis,
    /// value units per meter.
    pub slope: Estimate,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradientFit {
    /// Value at the weighted centroid of the positions.
    pub offset: Estimate,
    pub centroid: Vector3<f64>,
    pub slopes: Vec<AxisSlope>,
    /// Covariance over (offset, slopes...).
    pub covariance: Vec<Vec<f64>>,
    pub chi2: f64,
    pub residuals: Vec<f64>,
}

impl GradientFit {
    pub fn slope(&self, axis: Axis) -> Option<Estimate> {
        self.slopes.iter().find(|s| s.axis == axis).map(|s| s.slope)
    }
}

/// Weighted linear regression value = c + Σν gν (rν − r̄ν) over every axis
/// along which the points vary.
pub fn fit_gradient(points: &[GradientPoint]) -> Result<GradientFit> {
    if points.len() < 3 {
        return Err(Error::InvalidParameter("gradient fit needs at least 3 points".into()));
    }
    if points.iter().any(|p| !(p.sigma > 0.0)) {
        return Err(Error::InvalidParameter("uncertainties must be positive".into()));
    }
    let n = points.len() as f64;
    let centroid = points.iter().map(|p| p.position).sum::<Vector3<f64>>() / n;
    let mut axes = Vec::new();
    for axis in Axis::ALL {
        let mut vals: Vec<f64> = points.iter().map(|p| p.position[axis.index()]).collect();
        vals.sort_by(f64::total_cmp);
        let span = vals[vals.len() - 1] - vals[0];
        let scale = vals.iter().fold(0f64, |m, v| m.max(v.abs()));
        if span <= 1e-12 * scale.max(f64::MIN_POSITIVE) {
            continue;
        }
        vals.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * scale);
        if vals.len() < 3 {
            return Err(Error::Degenerate(format!(
                "axis {axis:?} has only {} distinct positions; need 3",
                vals.len()
            )));
        }
        axes.push(axis);
    }
    if axes.is_empty() {
        return Err(Error::Degenerate("all points share one position".into()));
    }
    let design = DMatrix::from_fn(points.len(), axes.len() + 1, |i, j| {
        if j == 0 {
            1.0
        } else {
            let a = axes[j - 1].index();
            points[i].position[a] - centroid[a]
        }
    });
    let y: Vec<f64> = points.iter().map(|p| p.value).collect();
    let s: Vec<f64> = points.iter().map(|p| p.sigma).collect();
    let fit = weighted_linear_fit(&design, &y, &s)?;
    let k = axes.len() + 1;
    Ok(GradientFit {
        offset: fit.estimate(0),
        centroid,
        slopes: axes.iter().enumerate().map(|(j, &axis)| AxisSlope { axis, slope: fit.estimate(j + 1) }).collect(),
        covariance: (0..k).map(|i| (0..k).map(|j| fit.covariance[(i, j)]).collect()).collect(),
        chi2: fit.chi2,
        residuals: fit.residuals.iter().copied().collect(),
    })
}
