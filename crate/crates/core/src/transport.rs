//! Electrode voltage solutions for a target local potential and smooth
//! transport waveforms built from them.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constants::MICRO;
use crate::electrodes::TrapModel;
use crate::error::{Error, Result};
use crate::penning::{IonSpecies, PotentialSample, CURVATURE_RATIOS};
use crate::SCHEMA_TAG;

/// Desired local expansion of the potential around `position`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PotentialTarget {
    pub position: Vector3<f64>,
    /// ∇φ, V/m.
    pub gradient: Vector3<f64>,
    /// Hessian of φ, V/m².
    pub hessian: Matrix3<f64>,
}

impl PotentialTarget {
    /// Cylindrically symmetric trap φ = mωz²(2z² − x² − y²)/(4q) about `position`.
    pub fn penning(position: Vector3<f64>, omega_z: f64, species: &IonSpecies) -> Self {
        let k = species.mass * omega_z * omega_z / species.charge_c();
        let d = Vector3::from(CURVATURE_RATIOS) * k;
        Self { position, gradient: Vector3::zeros(), hessian: Matrix3::from_diagonal(&d) }
    }

    /// Uniform field E (∇φ = −E) with no curvature.
    pub fn uniform_field(position: Vector3<f64>, field: Vector3<f64>) -> Self {
        Self { position, gradient: -field, hessian: Matrix3::zeros() }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { position: self.position, gradient: self.gradient * s, hessian: self.hessian * s }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    /// Voltage bound |V_i| ≤ v_max, V.
    pub v_max: f64,
    /// Length converting curvature rows to field units, m.
    pub hessian_length: f64,
    pub gradient_weight: f64,
    pub hessian_weight: f64,
    /// Tikhonov weight on voltages, (V/m)²/V².
    pub regularization: f64,
    /// Gradient mismatch accepted as feasible, V/m.
    pub gradient_tol: f64,
    /// Relative curvature mismatch accepted as feasible.
    pub hessian_tol: f64,
    /// Half-width of the cube over which the rms potential residual is taken, m.
    pub probe_radius: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            v_max: 10.0,
            hessian_length: 10.0 * MICRO,
            gradient_weight: 1.0,
            hessian_weight: 1.0,
            regularization: 0.0,
            gradient_tol: 0.1,
            hessian_tol: 0.02,
            probe_radius: 5.0 * MICRO,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoltageSolution {
    /// Electrode ids in layout order.
    pub ids: Vec<String>,
    pub voltages: Vec<f64>,
    /// rms mismatch of the potential over the probe cube (offset removed), V.
    pub residual: f64,
    /// Realized minus target gradient, V/m.
    pub gradient_error: Vector3<f64>,
    /// Frobenius norm of realized minus target Hessian, V/m².
    pub hessian_error: f64,
    /// `hessian_error` over the target Hessian norm; `None` for a zero target.
    pub hessian_relative: Option<f64>,
    pub feasible: bool,
}

impl VoltageSolution {
    pub fn as_map(&self) -> BTreeMap<String, f64> {
        self.ids.iter().cloned().zip(self.voltages.iter().copied()).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.voltages.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

const HESSIAN_ROWS: [(usize, usize); 6] = [(0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2)];

fn rows_of(sample: &PotentialSample, opts: &SolveOptions) -> [f64; 9] {
    let mut out = [0.0; 9];
    for a in 0..3 {
        out[a] = opts.gradient_weight * sample.gradient[a];
    }
    for (k, &(i, j)) in HESSIAN_ROWS.iter().enumerate() {
        let w = if i == j { 1.0 } else { std::f64::consts::SQRT_2 };
        out[3 + k] = opts.hessian_weight * opts.hessian_length * w * sample.hessian[(i, j)];
    }
    out
}

fn target_rows(t: &PotentialTarget, opts: &SolveOptions) -> DVector<f64> {
    let s = PotentialSample { value: 0.0, gradient: t.gradient, hessian: t.hessian };
    DVector::from_row_slice(&rows_of(&s, opts))
}

/// min ‖A_F v_F − b‖² + μ‖v_F‖², minimum norm when μ = 0.
fn regularized_solve(a: &DMatrix<f64>, b: &DVector<f64>, mu: f64) -> DVector<f64> {
    let n = a.ncols();
    if n == 0 {
        return DVector::zeros(0);
    }
    let svd = a.clone().svd(true, true);
    let u = svd.u.as_ref().expect("requested");
    let vt = svd.v_t.as_ref().expect("requested");
    let smax = svd.singular_values.max();
    let mut x = DVector::zeros(n);
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s <= 1e-12 * smax {
            continue;
        }
        let coef = s / (s * s + mu) * u.column(k).dot(b);
        x += vt.row(k).transpose() * coef;
    }
    x
}

/// Box-constrained regularized least squares by an active-set iteration:
/// bound violators are clamped and clamped variables whose gradient points
/// back into the box are released.
fn bounded_solve(a: &DMatrix<f64>, b: &DVector<f64>, mu: f64, v_max: f64) -> DVector<f64> {
    let n = a.ncols();
    // 0 = free, ±1 = at ±v_max.
    let mut state = vec![0i8; n];
    let mut x = DVector::zeros(n);
    for _ in 0..4 * n + 4 {
        let free: Vec<usize> = (0..n).filter(|&i| state[i] == 0).collect();
        let mut rhs = b.clone();
        for i in 0..n {
            if state[i] != 0 {
                rhs -= a.column(i) * (state[i] as f64 * v_max);
            }
        }
        let af = a.select_columns(&free);
        let xf = regularized_solve(&af, &rhs, mu);
        for i in 0..n {
            x[i] = if state[i] == 0 { 0.0 } else { state[i] as f64 * v_max };
        }
        for (k, &i) in free.iter().enumerate() {
            x[i] = xf[k];
        }
        let mut changed = false;
        for i in 0..n {
            if state[i] == 0 && x[i].abs() > v_max * (1.0 + 1e-12) {
                state[i] = x[i].signum() as i8;
                changed = true;
            }
        }
        if changed {
            continue;
        }
        let grad = a.transpose() * (a * &x - b) + &x * mu;
        let mut released = false;
        for i in 0..n {
            // At +v_max the objective must not decrease by lowering v_i.
            if state[i] != 0 && grad[i] * state[i] as f64 > 0.0 {
                state[i] = 0;
                released = true;
            }
        }
        if !released {
            break;
        }
    }
    x.iter_mut().for_each(|v| *v = v.clamp(-v_max, v_max));
    x
}

/// Bounded linear least squares for electrode voltages realizing the target
/// gradient and Hessian at the target point. A solution missing the
/// tolerances is returned with `feasible = false`.
pub fn solve_potential(trap: &TrapModel, target: &PotentialTarget, opts: &SolveOptions) -> Result<VoltageSolution> {
    if !(opts.v_max > 0.0) {
        return Err(Error::InvalidParameter("v_max must be positive".into()));
    }
    if !(opts.regularization >= 0.0 && opts.hessian_length > 0.0) {
        return Err(Error::InvalidParameter("regularization must be ≥ 0 and hessian_length > 0".into()));
    }
    let basis = trap.basis_all(&target.position)?;
    let n = basis.len();
    let mut a = DMatrix::zeros(9, n);
    for (j, s) in basis.iter().enumerate() {
        let r = rows_of(s, opts);
        for i in 0..9 {
            a[(i, j)] = r[i];
        }
    }
    let b = target_rows(target, opts);
    let v = bounded_solve(&a, &b, opts.regularization, opts.v_max);
    let voltages: Vec<f64> = v.iter().copied().collect();
    evaluate_solution(trap, target, voltages, opts)
}

fn evaluate_solution(
    trap: &TrapModel,
    target: &PotentialTarget,
    voltages: Vec<f64>,
    opts: &SolveOptions,
) -> Result<VoltageSolution> {
    let at = trap.potential(&voltages, &target.position)?;
    let gradient_error = at.gradient - target.gradient;
    let hessian_error = (at.hessian - target.hessian).norm();
    let target_norm = target.hessian.norm();
    let hessian_relative = (target_norm > 0.0).then(|| hessian_error / target_norm);
    let floor = opts.gradient_tol / opts.hessian_length;
    let feasible = gradient_error.norm() <= opts.gradient_tol
        && hessian_error <= opts.hessian_tol * target_norm.max(floor);

    let h = opts.probe_radius;
    let mut diffs = Vec::with_capacity(27);
    for dx in [-h, 0.0, h] {
        for dy in [-h, 0.0, h] {
            for dz in [-h, 0.0, h] {
                let d = Vector3::new(dx, dy, dz);
                let r = target.position + d;
                if r.y <= 0.0 {
                    continue;
                }
                let real = trap.potential(&voltages, &r)?.value - at.value;
                let want = target.gradient.dot(&d) + 0.5 * d.dot(&(target.hessian * d));
                diffs.push(real - want);
            }
        }
    }
    let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
    let residual = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / diffs.len() as f64).sqrt();
    Ok(VoltageSolution {
        ids: trap.electrode_ids().into_iter().map(String::from).collect(),
        voltages,
        residual,
        gradient_error,
        hessian_error,
        hessian_relative,
        feasible,
    })
}

/// Field-null position nearest `start` for a voltage set (Newton on ∇φ = 0).
pub fn equilibrium_position(trap: &TrapModel, voltages: &[f64], start: &Vector3<f64>) -> Result<Vector3<f64>> {
    let mut r = *start;
    for _ in 0..50 {
        let s = trap.potential(voltages, &r)?;
        let step = s
            .hessian
            .try_inverse()
            .ok_or_else(|| Error::Degenerate("singular curvature at equilibrium search".into()))?
            * s.gradient;
        r -= step;
        if step.norm() < 1e-13 {
            return Ok(r);
        }
    }
    Err(Error::NoConvergence("equilibrium search did not settle".into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaveformOptions {
    /// Maximum spacing of solved equilibrium positions, m.
    pub step: f64,
    /// Transport speed, m/s.
    pub speed: f64,
    pub omega_z: f64,
    /// Voltage lag (rate × filter time constant) tolerated per electrode, V.
    pub lag_tolerance: f64,
    pub solve: SolveOptions,
}

impl WaveformOptions {
    pub fn new(omega_z: f64) -> Self {
        Self { step: MICRO, speed: 0.02, omega_z, lag_tolerance: 0.1, solve: SolveOptions::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveformSample {
    pub t: f64,
    pub position: Vector3<f64>,
    pub voltages: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waveform {
    pub ids: Vec<String>,
    pub samples: Vec<WaveformSample>,
    pub duration: f64,
    pub speed: f64,
}

fn discretize(path: &[Vector3<f64>], step: f64) -> Vec<Vector3<f64>> {
    let mut out = vec![path[0]];
    for w in path.windows(2) {
        let (a, b) = (w[0], w[1]);
        let len = (b - a).norm();
        let n = ((len / step) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
        if len == 0.0 {
            continue;
        }
        for k in 1..=n {
            // Symmetric in (a, b) so a reversed path gives the same points.
            let s = k as f64 / n as f64;
            let t = (n - k) as f64 / n as f64;
            out.push(a * t + b * s);
        }
    }
    out
}

/// Solves the Penning target at equilibrium points spaced ≤ `step` along
/// the polyline and times them at constant speed. Each electrode's voltage
/// rate is checked against lag_tolerance/(RC) of its filter.
pub fn make_waveform(trap: &TrapModel, path: &[Vector3<f64>], opts: &WaveformOptions) -> Result<Waveform> {
    if path.is_empty() {
        return Err(Error::InvalidParameter("empty transport path".into()));
    }
    if !(opts.step > 0.0 && opts.step <= MICRO * (1.0 + 1e-12)) {
        return Err(Error::InvalidParameter(format!("step must be in (0, 1 µm], got {} m", opts.step)));
    }
    if !(opts.speed > 0.0 && opts.lag_tolerance > 0.0 && opts.omega_z > 0.0) {
        return Err(Error::InvalidParameter("speed, lag tolerance and ωz must be positive".into()));
    }
    let points = discretize(path, opts.step);
    let solutions: Vec<VoltageSolution> = points
        .par_iter()
        .map(|p| solve_potential(trap, &PotentialTarget::penning(*p, opts.omega_z, &trap.species), &opts.solve))
        .collect::<Result<_>>()?;
    if let Some((k, s)) = solutions.iter().enumerate().find(|(_, s)| !s.feasible) {
        return Err(Error::Infeasible(format!(
            "sample {k} at ({:.3}, {:.3}, {:.3}) µm: gradient error {:.3e} V/m, curvature error {:.3e} V/m²",
            points[k].x / MICRO,
            points[k].y / MICRO,
            points[k].z / MICRO,
            s.gradient_error.norm(),
            s.hessian_error
        )));
    }
    let mut t = 0.0;
    let mut samples = Vec::with_capacity(points.len());
    for (k, (p, s)) in points.iter().zip(solutions).enumerate() {
        if k > 0 {
            t += (p - points[k - 1]).norm() / opts.speed;
        }
        samples.push(WaveformSample { t, position: *p, voltages: s.voltages });
    }
    let ids: Vec<String> = trap.electrode_ids().into_iter().map(String::from).collect();
    for k in 1..samples.len() {
        let dt = samples[k].t - samples[k - 1].t;
        if dt == 0.0 {
            continue;
        }
        for (i, e) in trap.electrodes.iter().enumerate() {
            let f = trap.filter(&e.group)?;
            let limit = opts.lag_tolerance / (f.r * f.c);
            let rate = (samples[k].voltages[i] - samples[k - 1].voltages[i]).abs() / dt;
            if rate > limit {
                return Err(Error::FilterBudget { electrode: e.id.clone(), sample: k, rate, limit });
            }
        }
    }
    Ok(Waveform { ids, duration: t, speed: opts.speed, samples })
}

impl Waveform {
    /// Voltages at time t, linear between samples and held outside.
    pub fn voltages_at(&self, t: f64) -> Vec<f64> {
        let s = &self.samples;
        if t <= s[0].t || s.len() == 1 {
            return s[0].voltages.clone();
        }
        if t >= s[s.len() - 1].t {
            return s[s.len() - 1].voltages.clone();
        }
        let k = s.partition_point(|x| x.t <= t);
        let (a, b) = (&s[k - 1], &s[k]);
        let u = (t - a.t) / (b.t - a.t);
        a.voltages.iter().zip(&b.voltages).map(|(va, vb)| va + (vb - va) * u).collect()
    }

    /// Largest second difference of any electrode voltage, V.
    pub fn max_second_difference(&self) -> f64 {
        let mut m: f64 = 0.0;
        for w in self.samples.windows(3) {
            for i in 0..self.ids.len() {
                m = m.max((w[2].voltages[i] - 2.0 * w[1].voltages[i] + w[0].voltages[i]).abs());
            }
        }
        m
    }

    /// CSV with a schema line, metadata comments, then
    /// `index,t_s,x_um,y_um,z_um,<electrode ids in layout order>`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# {SCHEMA_TAG} kind=waveform")?;
        writeln!(w, "# duration_s={}", self.duration)?;
        writeln!(w, "# speed_m_per_s={}", self.speed)?;
        writeln!(w, "# samples={}", self.samples.len())?;
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["index".to_string(), "t_s".into(), "x_um".into(), "y_um".into(), "z_um".into()];
        header.extend(self.ids.iter().cloned());
        out.write_record(&header)?;
        for (k, s) in self.samples.iter().enumerate() {
            let mut row = vec![
                k.to_string(),
                s.t.to_string(),
                (s.position.x / MICRO).to_string(),
                (s.position.y / MICRO).to_string(),
                (s.position.z / MICRO).to_string(),
            ];
            row.extend(s.voltages.iter().map(|v| v.to_string()));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::TWO_PI;
    use crate::penning::{displacement_from_field, TrapSettings};
    use approx::assert_relative_eq;

    fn center() -> Vector3<f64> {
        Vector3::new(0.0, 152.0 * MICRO, 0.0)
    }

    #[test]
    fn zero_target_gives_zero_voltages() {
        let trap = TrapModel::default_layout();
        let t = PotentialTarget { position: center(), gradient: Vector3::zeros(), hessian: Matrix3::zeros() };
        let s = solve_potential(&trap, &t, &SolveOptions::default()).unwrap();
        assert!(s.voltages.iter().all(|v| *v == 0.0));
        assert!(s.feasible);
    }

    #[test]
    fn penning_target_at_one_megahertz() {
        let trap = TrapModel::default_layout();
        let t = PotentialTarget::penning(center(), TWO_PI * 1e6, &trap.species);
        let s = solve_potential(&trap, &t, &SolveOptions::default()).unwrap();
        assert!(s.feasible, "{s:?}");
        assert!(s.gradient_error.norm() < 0.1);
        assert!(s.hessian_relative.unwrap() < 0.02);
        assert!(s.max_abs() <= 10.0);
        let real = trap.potential(&s.voltages, &center()).unwrap().hessian;
        assert_relative_eq!(real[(2, 2)], t.hessian[(2, 2)], max_relative = 0.02);
    }

    #[test]
    fn linear_in_target_when_unbounded() {
        let trap = TrapModel::default_layout();
        let opts = SolveOptions { v_max: 1e9, ..Default::default() };
        let t = PotentialTarget::penning(center(), TWO_PI * 0.8e6, &trap.species);
        let a = solve_potential(&trap, &t, &opts).unwrap();
        let b = solve_potential(&trap, &t.scaled(-2.5), &opts).unwrap();
        for (x, y) in a.voltages.iter().zip(&b.voltages) {
            assert!((y + 2.5 * x).abs() <= 1e-9 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn bounds_are_respected() {
        let trap = TrapModel::default_layout();
        let t = PotentialTarget::penning(center(), TWO_PI * 2.6e6, &trap.species);
        let opts = SolveOptions { v_max: 0.5, ..Default::default() };
        let s = solve_potential(&trap, &t, &opts).unwrap();
        assert!(s.max_abs() <= 0.5);
        assert!(!s.feasible);
        let free = solve_potential(&trap, &t, &SolveOptions { v_max: 1e9, ..Default::default() }).unwrap();
        assert!(free.max_abs() > 0.5);
    }

    #[test]
    fn pure_field_shifts_ion_as_predicted() {
        let trap = TrapModel::default_layout();
        let w = TWO_PI * 1e6;
        let trap_sol = solve_potential(&trap, &PotentialTarget::penning(center(), w, &trap.species), &SolveOptions::default()).unwrap();
        let e = Vector3::new(2.0, -1.5, 3.0);
        let field_sol = solve_potential(&trap, &PotentialTarget::uniform_field(center(), e), &SolveOptions::default()).unwrap();
        assert!(field_sol.feasible);
        let sum: Vec<f64> = trap_sol.voltages.iter().zip(&field_sol.voltages).map(|(a, b)| a + b).collect();
        let eq = equilibrium_position(&trap, &sum, &center()).unwrap();
        let settings = TrapSettings::new(trap.b, w, center()).unwrap();
        let predicted = displacement_from_field(&settings, &trap.species, &e);
        let shift = eq - center();
        assert!((shift - predicted).norm() < 0.05 * predicted.norm(), "{shift:?} {predicted:?}");
    }

    #[test]
    fn single_point_path_is_constant() {
        let trap = TrapModel::default_layout();
        let wf = make_waveform(&trap, &[center()], &WaveformOptions::new(TWO_PI * 1e6)).unwrap();
        assert_eq!(wf.samples.len(), 1);
        assert_eq!(wf.duration, 0.0);
        assert_eq!(wf.voltages_at(1.0), wf.samples[0].voltages);
    }

    #[test]
    fn hundred_micron_translation() {
        let trap = TrapModel::default_layout();
        let a = center() - Vector3::new(0.0, 0.0, 50.0 * MICRO);
        let b = center() + Vector3::new(0.0, 0.0, 50.0 * MICRO);
        let opts = WaveformOptions::new(TWO_PI * 1e6);
        let wf = make_waveform(&trap, &[a, b], &opts).unwrap();
        assert_eq!(wf.samples.len(), 101);
        assert_relative_eq!(wf.duration, 5e-3, max_relative = 1e-12);
        for s in wf.samples.iter().step_by(10) {
            let eq = equilibrium_position(&trap, &s.voltages, &s.position).unwrap();
            assert!((eq - s.position).norm() < 0.1 * MICRO);
        }
        let rev = make_waveform(&trap, &[b, a], &opts).unwrap();
        for (x, y) in wf.samples.iter().zip(rev.samples.iter().rev()) {
            assert_eq!(x.voltages, y.voltages);
            assert_eq!(x.position, y.position);
        }
        let mid = wf.voltages_at(0.5 * (wf.samples[3].t + wf.samples[4].t));
        for i in 0..mid.len() {
            assert_relative_eq!(mid[i], 0.5 * (wf.samples[3].voltages[i] + wf.samples[4].voltages[i]), max_relative = 1e-12, epsilon = 1e-15);
        }
    }

    #[test]
    fn excessive_speed_violates_filter_budget() {
        let trap = TrapModel::default_layout();
        let a = center();
        let b = center() + Vector3::new(0.0, 0.0, 20.0 * MICRO);
        let mut opts = WaveformOptions::new(TWO_PI * 1e6);
        opts.speed = 10.0;
        assert!(matches!(make_waveform(&trap, &[a, b], &opts), Err(Error::FilterBudget { .. })));
        opts.speed = 0.06;
        assert!(make_waveform(&trap, &[a, b], &opts).is_ok());
    }
}
