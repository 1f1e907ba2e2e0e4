//! Composite electric-field-noise models for motional heating: surface
//! power law, Johnson noise of the filter network, correlated technical
//! noise and a constant interference floor. Includes the distance and
//! frequency scaling fits and discrete-spike detection.

use nalgebra::{DMatrix, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constants::MICRO;
use crate::electrodes::{Axis, TrapModel};
use crate::error::{Error, Result};
use crate::fit::{weighted_linear_fit, Estimate};
use crate::penning::{
    heating_rate_from_noise, noise_per_quantum, IonSpecies, ModeGeometry, ModeLabel, ModeSpectrum,
};

/// Distance at which the surface amplitude is quoted, m.
pub const PIVOT_DISTANCE: f64 = 100.0 * MICRO;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatingRecord {
    pub mode: ModeLabel,
    /// Ion position, m.
    pub position: Vector3<f64>,
    /// Ion-electrode distance, m.
    pub distance: f64,
    /// Mode frequency, rad/s.
    pub omega: f64,
    /// quanta/s.
    pub rate: f64,
    pub sigma_rate: f64,
    pub detached: bool,
}

impl HeatingRecord {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_rate > 0.0) {
            return Err(Error::InvalidParameter(format!("sigma_rate must be positive, got {}", self.sigma_rate)));
        }
        if !(self.distance > 0.0 && self.omega > 0.0) {
            return Err(Error::InvalidParameter("distance and frequency must be positive".into()));
        }
        if !(self.rate >= 0.0) {
            return Err(Error::InvalidParameter(format!("negative heating rate {}", self.rate)));
        }
        Ok(())
    }
}

/// Free parameters of the composite model for one mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModelParams {
    pub mode: ModeLabel,
    /// Surface-noise rate at [`PIVOT_DISTANCE`], quanta/s.
    pub amplitude: f64,
    pub beta: f64,
    /// Correlated voltage PSD on all electrodes, V²/Hz (radial modes).
    pub s_v_corr: f64,
    /// Constant interference rate, quanta/s (axial mode).
    pub emi_rate: f64,
    /// Whether the Johnson term of the filter network is included.
    pub johnson: bool,
    /// Covariance over (amplitude, beta, technical term) when fitted.
    pub covariance: Option<[[f64; 3]; 3]>,
}

impl NoiseModelParams {
    pub fn new(mode: ModeLabel, amplitude: f64, beta: f64) -> Self {
        Self { mode, amplitude, beta, s_v_corr: 0.0, emi_rate: 0.0, johnson: true, covariance: None }
    }

    pub fn with_correlated(mut self, s_v_corr: f64) -> Self {
        self.s_v_corr = s_v_corr;
        self
    }

    pub fn with_emi(mut self, emi_rate: f64) -> Self {
        self.emi_rate = emi_rate;
        self
    }

    pub fn without_johnson(mut self) -> Self {
        self.johnson = false;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude >= 0.0 && self.s_v_corr >= 0.0 && self.emi_rate >= 0.0) {
            return Err(Error::InvalidParameter("noise amplitudes must be nonnegative".into()));
        }
        if !self.beta.is_finite() {
            return Err(Error::InvalidParameter("beta must be finite".into()));
        }
        Ok(())
    }

    /// Value of the third (technical) parameter for this mode.
    pub fn technical(&self) -> f64 {
        if self.mode.is_radial() {
            self.s_v_corr
        } else {
            self.emi_rate
        }
    }

    pub fn estimates(&self) -> Option<[Estimate; 3]> {
        let c = self.covariance?;
        let v = [self.amplitude, self.beta, self.technical()];
        Some(std::array::from_fn(|i| Estimate::new(v[i], c[i][i].max(0.0).sqrt())))
    }
}

/// Per-source contributions to a modeled heating rate, quanta/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateBreakdown {
    pub johnson: f64,
    pub surface: f64,
    /// Correlated (radial) or interference (axial) term.
    pub technical: f64,
    pub total: f64,
}

/// Mode spectrum implied by a record's own frequency and the trap's ωc.
pub fn record_spectrum(trap: &TrapModel, mode: ModeLabel, omega: f64) -> Result<ModeSpectrum> {
    let omega_c = trap.species.cyclotron_frequency(trap.b);
    ModeSpectrum::from_radial(omega_c, mode, omega)
}

/// Rate per unit of the technical parameter and the Johnson rate for the
/// record geometry; the distance-independent pieces of the model.
#[derive(Debug, Clone, Copy)]
struct RecordBasis {
    johnson: f64,
    technical_unit: f64,
    log_distance: f64,
}

fn record_basis(trap: &TrapModel, rec: &HeatingRecord) -> Result<RecordBasis> {
    let spectrum = record_spectrum(trap, rec.mode, rec.omega)?;
    let geom = ModeGeometry::new(rec.mode, &spectrum, &trap.species);
    let mut s_j = Vector3::zeros();
    let mut s_c = Vector3::zeros();
    if !rec.detached {
        for axis in Axis::ALL {
            s_j[axis.index()] = trap.johnson_field_psd(&rec.position, rec.omega, axis)?;
            if rec.mode.is_radial() {
                s_c[axis.index()] = trap.correlated_field_psd(1.0, &rec.position, rec.omega, axis)?;
            }
        }
    }
    let technical_unit = match rec.mode {
        ModeLabel::Axial => 1.0,
        _ => heating_rate_from_noise(&geom, &trap.species, &s_c),
    };
    Ok(RecordBasis {
        johnson: heating_rate_from_noise(&geom, &trap.species, &s_j),
        technical_unit,
        log_distance: (rec.distance / PIVOT_DISTANCE).ln(),
    })
}

fn breakdown_from_basis(params: &NoiseModelParams, b: &RecordBasis) -> RateBreakdown {
    let johnson = if params.johnson { b.johnson } else { 0.0 };
    let surface = params.amplitude * (-params.beta * b.log_distance).exp();
    let technical = params.technical() * b.technical_unit;
    RateBreakdown { johnson, surface, technical, total: johnson + surface + technical }
}

/// ṅ = ṅ_J + C (d/d_pivot)^−β + technical, evaluated at a record's
/// geometry. Records flagged as detached carry no Johnson or correlated
/// contribution.
pub fn model_rate(params: &NoiseModelParams, trap: &TrapModel, rec: &HeatingRecord) -> Result<RateBreakdown> {
    if params.mode != rec.mode {
        return Err(Error::InvalidParameter(format!(
            "model for mode {} evaluated on a {} record",
            params.mode, rec.mode
        )));
    }
    Ok(breakdown_from_basis(params, &record_basis(trap, rec)?))
}

/// Radial composite model with a correlated technical term.
pub fn model_radial_rate(params: &NoiseModelParams, trap: &TrapModel, rec: &HeatingRecord) -> Result<RateBreakdown> {
    if !params.mode.is_radial() {
        return Err(Error::InvalidParameter("radial model needs a radial mode".into()));
    }
    model_rate(params, trap, rec)
}

/// Axial composite model with a constant interference term.
pub fn model_axial_rate(params: &NoiseModelParams, trap: &TrapModel, rec: &HeatingRecord) -> Result<RateBreakdown> {
    if params.mode != ModeLabel::Axial {
        return Err(Error::InvalidParameter("axial model needs the axial mode".into()));
    }
    model_rate(params, trap, rec)
}

/// Interference rate produced by a field PSD on the axial mode.
pub fn emi_rate_from_field_psd(s_e: f64, omega_z: f64, species: &IonSpecies) -> Result<f64> {
    let spectrum = ModeSpectrum { omega_c: f64::NAN, omega_plus: f64::NAN, omega_minus: f64::NAN, omega_z };
    if !(omega_z > 0.0) {
        return Err(Error::InvalidParameter("axial frequency must be positive".into()));
    }
    Ok(s_e / noise_per_quantum(ModeLabel::Axial, &spectrum, species))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceFitOptions {
    pub johnson: bool,
    pub technical: bool,
    pub beta_min: f64,
    pub beta_max: f64,
    pub beta_step: f64,
}

impl Default for DistanceFitOptions {
    fn default() -> Self {
        Self { johnson: true, technical: true, beta_min: 1.0, beta_max: 7.0, beta_step: 0.25 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DistanceFit {
    pub params: NoiseModelParams,
    pub chi2: f64,
    pub dof: usize,
    pub converged: bool,
    /// Normalized residuals (measured − model)/σ.
    pub residuals: Vec<f64>,
    pub breakdown: Vec<RateBreakdown>,
}

struct Profile {
    chi2: f64,
    amplitude: f64,
    technical: f64,
}

/// Best nonnegative (amplitude, technical) for a fixed exponent.
fn profile(beta: f64, basis: &[RecordBasis], records: &[HeatingRecord], opts: &DistanceFitOptions) -> Profile {
    let n = records.len();
    let u: Vec<f64> = basis.iter().map(|b| (-beta * b.log_distance).exp()).collect();
    let y: Vec<f64> = records
        .iter()
        .zip(basis)
        .map(|(r, b)| r.rate - if opts.johnson { b.johnson } else { 0.0 })
        .collect();
    let chi2_of = |a: f64, t: f64| -> f64 {
        (0..n)
            .map(|i| ((y[i] - a * u[i] - t * basis[i].technical_unit) / records[i].sigma_rate).powi(2))
            .sum()
    };
    let one = |col: &dyn Fn(usize) -> f64| -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..n {
            let w = 1.0 / (records[i].sigma_rate * records[i].sigma_rate);
            num += w * col(i) * y[i];
            den += w * col(i) * col(i);
        }
        if den > 0.0 { (num / den).max(0.0) } else { 0.0 }
    };
    let mut candidates = vec![(one(&|i| u[i]), 0.0)];
    if opts.technical {
        candidates.push((0.0, one(&|i| basis[i].technical_unit)));
        let (mut s11, mut s12, mut s22, mut b1, mut b2) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for i in 0..n {
            let w = 1.0 / (records[i].sigma_rate * records[i].sigma_rate);
            let v = basis[i].technical_unit;
            s11 += w * u[i] * u[i];
            s12 += w * u[i] * v;
            s22 += w * v * v;
            b1 += w * u[i] * y[i];
            b2 += w * v * y[i];
        }
        let det = s11 * s22 - s12 * s12;
        if det > 1e-12 * s11 * s22 {
            let a = (b1 * s22 - b2 * s12) / det;
            let t = (s11 * b2 - s12 * b1) / det;
            if a >= 0.0 && t >= 0.0 {
                candidates.push((a, t));
            }
        }
    }
    candidates
        .into_iter()
        .map(|(a, t)| Profile { chi2: chi2_of(a, t), amplitude: a, technical: t })
        .min_by(|p, q| p.chi2.total_cmp(&q.chi2))
        .expect("at least one candidate")
}

/// Weighted χ² fit of the composite distance model. The exponent is
/// scanned over a fixed grid (in parallel), the linear amplitudes are
/// solved exactly with nonnegativity at each grid point, and the best
/// grid point is refined by golden-section search.
pub fn fit_distance_scaling(
    records: &[HeatingRecord],
    trap: &TrapModel,
    opts: &DistanceFitOptions,
) -> Result<DistanceFit> {
    let mode = records.first().ok_or_else(|| Error::InvalidParameter("no records".into()))?.mode;
    if records.iter().any(|r| r.mode != mode) {
        return Err(Error::InvalidParameter("distance fit needs a single mode".into()));
    }
    for r in records {
        r.validate()?;
    }
    let mut distances: Vec<f64> = records.iter().map(|r| r.distance).collect();
    distances.sort_by(f64::total_cmp);
    distances.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs());
    if distances.len() < 4 {
        return Err(Error::InvalidParameter(format!(
            "distance fit needs at least 4 distinct distances, got {}",
            distances.len()
        )));
    }
    if !(opts.beta_step > 0.0 && opts.beta_max > opts.beta_min) {
        return Err(Error::InvalidParameter("invalid exponent grid".into()));
    }
    let basis = records.iter().map(|r| record_basis(trap, r)).collect::<Result<Vec<_>>>()?;
    let steps = ((opts.beta_max - opts.beta_min) / opts.beta_step).round() as usize;
    let grid: Vec<f64> = (0..=steps).map(|i| opts.beta_min + opts.beta_step * i as f64).collect();
    let chis: Vec<f64> = grid.par_iter().map(|&b| profile(b, &basis, records, opts).chi2).collect();
    let best = (0..grid.len()).min_by(|&i, &j| chis[i].total_cmp(&chis[j])).expect("grid not empty");
    let at_edge = best == 0 || best == grid.len() - 1;
    let lo = grid[best.saturating_sub(1)];
    let hi = grid[(best + 1).min(grid.len() - 1)];
    let beta = golden_section(|b| profile(b, &basis, records, opts).chi2, lo, hi, 1e-10);
    let prof = profile(beta, &basis, records, opts);

    let mut params = NoiseModelParams::new(mode, prof.amplitude, beta);
    params.johnson = opts.johnson;
    if mode.is_radial() {
        params.s_v_corr = prof.technical;
    } else {
        params.emi_rate = prof.technical;
    }
    let n = records.len();
    let mut jac = DMatrix::zeros(n, if opts.technical { 3 } else { 2 });
    for (i, (r, b)) in records.iter().zip(&basis).enumerate() {
        let u = (-beta * b.log_distance).exp();
        jac[(i, 0)] = u / r.sigma_rate;
        jac[(i, 1)] = -prof.amplitude * u * b.log_distance / r.sigma_rate;
        if opts.technical {
            jac[(i, 2)] = b.technical_unit / r.sigma_rate;
        }
    }
    let cov = (jac.transpose() * &jac).try_inverse();
    params.covariance = cov.map(|c| {
        let mut out = [[0.0; 3]; 3];
        for i in 0..c.nrows() {
            for j in 0..c.ncols() {
                out[i][j] = c[(i, j)];
            }
        }
        out
    });
    let breakdown: Vec<RateBreakdown> = basis.iter().map(|b| breakdown_from_basis(&params, b)).collect();
    let residuals: Vec<f64> =
        records.iter().zip(&breakdown).map(|(r, m)| (r.rate - m.total) / r.sigma_rate).collect();
    let chi2 = residuals.iter().map(|r| r * r).sum();
    let free = jac.ncols();
    Ok(DistanceFit {
        converged: !at_edge && params.covariance.is_some(),
        params,
        chi2,
        dof: n.saturating_sub(free),
        residuals,
        breakdown,
    })
}

fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol * (1.0 + a.abs() + b.abs()) {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

#[derive(Debug, Clone, Serialize)]
pub struct FrequencyScaling {
    pub alpha: Estimate,
    /// Field PSD at the reference frequency, V² m⁻² Hz⁻¹.
    pub amplitude: Estimate,
    pub omega_ref: f64,
    /// Covariance of (ln amplitude, alpha).
    pub covariance: [[f64; 2]; 2],
    pub chi2: f64,
    /// Indices of records dropped for nonpositive rates.
    pub rejected: Vec<usize>,
}

/// Log-log weighted fit of S_E(ω) = S_ref (ω/ω_ref)^−α, rates converted to
/// field PSD per record.
pub fn fit_frequency_scaling(records: &[HeatingRecord], trap: &TrapModel, omega_ref: f64) -> Result<FrequencyScaling> {
    if !(omega_ref > 0.0) {
        return Err(Error::InvalidParameter("reference frequency must be positive".into()));
    }
    let mut rejected = Vec::new();
    let mut rows = Vec::new();
    for (i, r) in records.iter().enumerate() {
        if !(r.rate > 0.0) || !(r.sigma_rate > 0.0) || !(r.omega > 0.0) {
            rejected.push(i);
            continue;
        }
        let spectrum = record_spectrum(trap, r.mode, r.omega)?;
        let s = noise_from_rate(r, &spectrum, &trap.species);
        rows.push(((r.omega / omega_ref).ln(), s.ln(), r.sigma_rate / r.rate));
    }
    let mut freqs: Vec<f64> = rows.iter().map(|r| r.0).collect();
    freqs.sort_by(f64::total_cmp);
    freqs.dedup();
    if freqs.len() < 3 {
        return Err(Error::InvalidParameter(format!(
            "frequency fit needs at least 3 distinct frequencies with positive rates, got {}",
            freqs.len()
        )));
    }
    let design = DMatrix::from_fn(rows.len(), 2, |i, j| if j == 0 { 1.0 } else { -rows[i].0 });
    let y: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let sigma: Vec<f64> = rows.iter().map(|r| r.2).collect();
    let fit = weighted_linear_fit(&design, &y, &sigma)?;
    let ln_amp = fit.estimate(0);
    let amp = ln_amp.value.exp();
    Ok(FrequencyScaling {
        alpha: fit.estimate(1),
        amplitude: Estimate::new(amp, amp * ln_amp.sigma),
        omega_ref,
        covariance: [
            [fit.covariance[(0, 0)], fit.covariance[(0, 1)]],
            [fit.covariance[(1, 0)], fit.covariance[(1, 1)]],
        ],
        chi2: fit.chi2,
        rejected,
    })
}

fn noise_from_rate(r: &HeatingRecord, spectrum: &ModeSpectrum, species: &IonSpecies) -> f64 {
    noise_per_quantum(r.mode, spectrum, species) * r.rate
}

/// S(ω_ref) = S(ω)·(ω/ω_ref)^α for S ∝ ω^−α.
pub fn rescale_noise(s_e: f64, omega: f64, alpha: f64, omega_ref: f64) -> Result<f64> {
    if !(omega > 0.0 && omega_ref > 0.0) {
        return Err(Error::InvalidParameter("frequencies must be positive".into()));
    }
    Ok(s_e * (omega / omega_ref).powf(alpha))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumPoint {
    /// rad/s.
    pub omega: f64,
    pub value: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpikeOptions {
    /// Required ratio to the local baseline.
    pub factor: f64,
    /// Required excess over the baseline in units of σ.
    pub n_sigma: f64,
    /// Odd running-median window length.
    pub window: usize,
}

impl Default for SpikeOptions {
    fn default() -> Self {
        Self { factor: 3.0, n_sigma: 3.0, window: 7 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Spike {
    pub index: usize,
    pub omega: f64,
    /// value / baseline.
    pub ratio: f64,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Baseline: robust (Theil–Sen) power-law trend times the running median of
/// the log residuals. A point is flagged when it exceeds the baseline by
/// `factor` and by `n_sigma` standard errors.
pub fn flag_spikes(points: &[SpectrumPoint], opts: &SpikeOptions) -> Result<Vec<Spike>> {
    if points.len() < 8 {
        return Err(Error::InvalidParameter(format!(
            "spike search needs at least 8 grid points, got {}",
            points.len()
        )));
    }
    if points.iter().any(|p| !(p.value > 0.0 && p.omega > 0.0 && p.sigma >= 0.0)) {
        return Err(Error::InvalidParameter("spike search needs positive values and frequencies".into()));
    }
    if opts.window < 3 || opts.window % 2 == 0 {
        return Err(Error::InvalidParameter("running-median window must be odd and ≥ 3".into()));
    }
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| points[a].omega.total_cmp(&points[b].omega));
    let lx: Vec<f64> = order.iter().map(|&i| points[i].omega.ln()).collect();
    let ly: Vec<f64> = order.iter().map(|&i| points[i].value.ln()).collect();
    let n = lx.len();
    let mut slopes = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            if lx[j] > lx[i] {
                slopes.push((ly[j] - ly[i]) / (lx[j] - lx[i]));
            }
        }
    }
    let slope = if slopes.is_empty() { 0.0 } else { median(&mut slopes) };
    let mut offsets: Vec<f64> = (0..n).map(|i| ly[i] - slope * lx[i]).collect();
    let intercept = median(&mut offsets.clone());
    for o in offsets.iter_mut() {
        *o -= intercept;
    }
    let half = opts.window / 2;
    let mut spikes = Vec::new();
    for k in 0..n {
        let lo = k.saturating_sub(half).min(n.saturating_sub(opts.window));
        let hi = (lo + opts.window).min(n);
        let mut w: Vec<f64> = offsets[lo..hi].to_vec();
        let local = median(&mut w);
        let baseline = (intercept + slope * lx[k] + local).exp();
        let p = points[order[k]];
        let ratio = p.value / baseline;
        if ratio >= opts.factor && p.value - baseline >= opts.n_sigma * p.sigma {
            spikes.push(Spike { index: order[k], omega: p.omega, ratio });
        }
    }
    spikes.sort_by_key(|s| s.index);
    Ok(spikes)
}
