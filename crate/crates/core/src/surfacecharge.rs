//! Surface dipole layers: the field of uniformly polarized rectangular
//! patches and the regularized inversion of measured stray fields into a
//! patch-density map plus an unregularized uniform background.

use nalgebra::{DMatrix, DVector, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constants::{E_ANGSTROM_PER_UM2, MICRO, VACUUM_PERMITTIVITY};
use crate::error::{Error, Result};
use crate::geometry::{rectangle_solid_angle, Rect};

const COULOMB: f64 = 1.0 / (4.0 * std::f64::consts::PI * VACUUM_PERMITTIVITY);

/// Rectangle in the y = 0 plane carrying a uniform dipole-moment density
/// (C/m), dipoles pointing along +y.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DipolePatch {
    pub extent: Rect,
    pub density: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldValue {
    /// V.
    pub potential: f64,
    /// V/m.
    pub field: Vector3<f64>,
}

/// Φ = D·Ω/(4πε₀), E = −∇Φ.
pub fn patch_field(patch: &DipolePatch, r: &Vector3<f64>) -> Result<FieldValue> {
    let omega = rectangle_solid_angle(&patch.extent, r)?;
    let k = patch.density * COULOMB;
    Ok(FieldValue { potential: k * omega.value, field: -omega.gradient * k })
}

/// Field per unit density (1 C/m) of a rectangle.
fn unit_field(rect: &Rect, r: &Vector3<f64>) -> Result<Vector3<f64>> {
    Ok(-rectangle_solid_angle(rect, r)?.gradient * COULOMB)
}

/// Potential difference −D/ε₀ across a dipole layer relative to the bare
/// surface, V. Positive D (dipoles pointing out of the surface) lowers the
/// work function.
pub fn work_function_shift(background_density: f64) -> f64 {
    -background_density / VACUUM_PERMITTIVITY
}

/// Patch tiling: `region` split into nx × nz equal rectangles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub region: Rect,
    pub nx: usize,
    pub nz: usize,
}

impl Default for GridSpec {
    /// 1 mm × 1 mm centered on the origin, 20 × 20 patches of 50 µm.
    fn default() -> Self {
        let h = 500.0 * MICRO;
        Self { region: Rect { x1: -h, x2: h, z1: -h, z2: h }, nx: 20, nz: 20 }
    }
}

impl GridSpec {
    pub fn new(region: Rect, nx: usize, nz: usize) -> Result<Self> {
        if nx == 0 || nz == 0 {
            return Err(Error::InvalidParameter("grid needs at least one patch per axis".into()));
        }
        Ok(Self { region, nx, nz })
    }

    pub fn len(&self) -> usize {
        self.nx * self.nz
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Patch rectangles, index = iz·nx + ix.
    pub fn patches(&self) -> Vec<Rect> {
        self.region.subdivide(self.nx, self.nz)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DipoleGrid {
    pub spec: GridSpec,
    /// Per-patch densities, C/m, index = iz·nx + ix.
    pub densities: Vec<f64>,
    /// Uniform density over the whole region, C/m.
    pub background: f64,
}

impl DipoleGrid {
    pub fn zeros(spec: GridSpec) -> Self {
        Self { densities: vec![0.0; spec.len()], spec, background: 0.0 }
    }

    pub fn new(spec: GridSpec, densities: Vec<f64>, background: f64) -> Result<Self> {
        if densities.len() != spec.len() {
            return Err(Error::InvalidParameter(format!(
                "{} densities for a {}×{} grid",
                densities.len(),
                spec.nx,
                spec.nz
            )));
        }
        if !densities.iter().chain(std::iter::once(&background)).all(|d| d.is_finite()) {
            return Err(Error::InvalidParameter("densities must be finite".into()));
        }
        Ok(Self { spec, densities, background })
    }

    pub fn patches(&self) -> Vec<DipolePatch> {
        self.spec
            .patches()
            .into_iter()
            .zip(&self.densities)
            .map(|(extent, &density)| DipolePatch { extent, density })
            .collect()
    }

    /// Superposition of every patch plus the background layer.
    pub fn grid_field(&self, r: &Vector3<f64>) -> Result<Vector3<f64>> {
        let mut e = unit_field(&self.spec.region, r)? * self.background;
        for p in self.patches() {
            if p.density != 0.0 {
                e += unit_field(&p.extent, r)? * p.density;
            }
        }
        Ok(e)
    }

    /// Patch centers (m) paired with densities (C/m).
    pub fn centers(&self) -> Vec<((f64, f64), f64)> {
        self.spec.patches().iter().map(Rect::center).zip(self.densities.iter().copied()).collect()
    }
}

/// Measured stray field with per-axis uncertainty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldSample {
    pub position: Vector3<f64>,
    pub field: Vector3<f64>,
    pub sigma: Vector3<f64>,
}

impl FieldSample {
    pub fn new(position: Vector3<f64>, field: Vector3<f64>, sigma: Vector3<f64>) -> Result<Self> {
        if sigma.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::InvalidParameter("field uncertainties must be positive".into()));
        }
        Ok(Self { position, field, sigma })
    }
}

/// Weighted, column-scaled linear system for the density inversion.
/// Unknowns are expressed in e·Å/µm²; the last unknown is the background.
pub struct InversionProblem {
    spec: GridSpec,
    /// Weighted design, rows = 3 × samples.
    design: DMatrix<f64>,
    /// Weighted data.
    data: DVector<f64>,
    normal: DMatrix<f64>,
    rhs: DVector<f64>,
}

impl InversionProblem {
    pub fn new(samples: &[FieldSample], spec: GridSpec) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidParameter("inversion needs at least one sample".into()));
        }
        let rects = spec.patches();
        let n = rects.len() + 1;
        let rows: Vec<Vec<[f64; 3]>> = samples
            .par_iter()
            .map(|s| {
                let mut cols = Vec::with_capacity(n);
                for rect in rects.iter().chain(std::iter::once(&spec.region)) {
                    let e = unit_field(rect, &s.position)? * E_ANGSTROM_PER_UM2;
                    cols.push([e.x / s.sigma.x, e.y / s.sigma.y, e.z / s.sigma.z]);
                }
                Ok(cols)
            })
            .collect::<Result<_>>()?;
        let m = 3 * samples.len();
        let mut design = DMatrix::zeros(m, n);
        let mut data = DVector::zeros(m);
        for (i, (s, cols)) in samples.iter().zip(&rows).enumerate() {
            for axis in 0..3 {
                data[3 * i + axis] = s.field[axis] / s.sigma[axis];
                for (j, c) in cols.iter().enumerate() {
                    design[(3 * i + axis, j)] = c[axis];
                }
            }
        }
        let normal = design.tr_mul(&design);
        let rhs = design.tr_mul(&data);
        Ok(Self { spec, design, data, normal, rhs })
    }

    pub fn observations(&self) -> usize {
        self.design.nrows()
    }

    pub fn unknowns(&self) -> usize {
        self.design.ncols()
    }

    /// Mean diagonal of the patch block of the normal matrix; a natural
    /// scale for λ.
    pub fn normal_scale(&self) -> f64 {
        let n = self.unknowns() - 1;
        (0..n).map(|j| self.normal[(j, j)]).sum::<f64>() / n.max(1) as f64
    }

    fn regularized(&self, lambda: f64) -> DMatrix<f64> {
        let mut a = self.normal.clone();
        for j in 0..self.unknowns() - 1 {
            a[(j, j)] += lambda;
        }
        a
    }

    /// χ²(u) + λ Σ_{patches} u², u in e·Å/µm².
    pub fn objective(&self, u: &DVector<f64>, lambda: f64) -> f64 {
        let r = &self.design * u - &self.data;
        let reg: f64 = u.rows(0, self.unknowns() - 1).norm_squared();
        r.norm_squared() + lambda * reg
    }

    pub fn gradient(&self, u: &DVector<f64>, lambda: f64) -> DVector<f64> {
        let mut g = (&self.normal * u - &self.rhs) * 2.0;
        for j in 0..self.unknowns() - 1 {
            g[j] += 2.0 * lambda * u[j];
        }
        g
    }

    fn rank(&self) -> usize {
        let svd = self.design.clone().svd(false, false);
        let smax = svd.singular_values.max();
        svd.singular_values.iter().filter(|s| **s > 1e-12 * smax).count()
    }

    /// Solves the normal equations; returns unknowns in e·Å/µm².
    pub fn solve_units(&self, lambda: f64) -> Result<DVector<f64>> {
        if !(lambda >= 0.0) {
            return Err(Error::InvalidParameter(format!("λ must be ≥ 0, got {lambda}")));
        }
        let n = self.unknowns();
        if lambda == 0.0 && self.observations() < n {
            return Err(Error::RankDeficient { rank: self.rank(), unknowns: n });
        }
        let a = self.regularized(lambda);
        let chol = a.clone().cholesky();
        let ok = chol.as_ref().is_some_and(|c| {
            let l = c.l_dirty();
            let diag: Vec<f64> = (0..n).map(|i| l[(i, i)] * l[(i, i)]).collect();
            let max = diag.iter().cloned().fold(0.0, f64::max);
            diag.iter().all(|d| *d > 1e-13 * max)
        });
        if !ok {
            return Err(Error::RankDeficient { rank: self.rank(), unknowns: n });
        }
        let chol = chol.expect("checked");
        let mut u = chol.solve(&self.rhs);
        // One step of iterative refinement against the assembled system.
        let resid = &self.rhs - &a * &u;
        u += chol.solve(&resid);
        Ok(u)
    }

    pub fn solve(&self, lambda: f64) -> Result<DipoleInversion> {
        let u = self.solve_units(lambda)?;
        let n = self.unknowns();
        let a = self.regularized(lambda);
        let inv = a.clone().cholesky().map(|c| c.inverse()).ok_or(Error::RankDeficient {
            rank: self.rank(),
            unknowns: n,
        })?;
        let sigmas: Vec<f64> =
            (0..n).map(|j| inv[(j, j)].max(0.0).sqrt() * E_ANGSTROM_PER_UM2).collect();
        let effective_parameters = (&inv * &self.normal).trace();
        let r = &self.design * &u - &self.data;
        let per_sample: Vec<Vector3<f64>> =
            (0..r.len() / 3).map(|i| Vector3::new(r[3 * i], r[3 * i + 1], r[3 * i + 2])).collect();
        let chi2 = r.norm_squared();
        let densities: Vec<f64> = u.iter().take(n - 1).map(|v| v * E_ANGSTROM_PER_UM2).collect();
        let grid = DipoleGrid::new(self.spec, densities, u[n - 1] * E_ANGSTROM_PER_UM2)?;
        Ok(DipoleInversion {
            grid,
            lambda,
            chi2,
            residuals: per_sample,
            observations: self.observations(),
            unknowns: n,
            effective_parameters,
            density_sigmas: sigmas[..n - 1].to_vec(),
            background_sigma: sigmas[n - 1],
            regularization_norm: u.rows(0, n - 1).norm_squared(),
        })
    }

    /// L-curve corner: the candidate with maximal curvature of
    /// (log ‖residual‖, log ‖density‖).
    pub fn l_curve(&self, candidates: &[f64]) -> Result<LCurve> {
        if candidates.len() < 3 {
            return Err(Error::InvalidParameter("L-curve needs at least 3 candidates".into()));
        }
        let mut points = Vec::with_capacity(candidates.len());
        for &lambda in candidates {
            let u = self.solve_units(lambda)?;
            let r = (&self.design * &u - &self.data).norm();
            let s = u.rows(0, self.unknowns() - 1).norm();
            points.push(LCurvePoint { lambda, residual_norm: r, solution_norm: s });
        }
        let xs: Vec<f64> = points.iter().map(|p| p.residual_norm.max(1e-300).ln()).collect();
        let ys: Vec<f64> = points.iter().map(|p| p.solution_norm.max(1e-300).ln()).collect();
        let mut best = (1, f64::NEG_INFINITY);
        for i in 1..points.len() - 1 {
            let kappa = menger_curvature(
                (xs[i - 1], ys[i - 1]),
                (xs[i], ys[i]),
                (xs[i + 1], ys[i + 1]),
            );
            if kappa > best.1 {
                best = (i, kappa);
            }
        }
        Ok(LCurve { chosen: points[best.0].lambda, points })
    }
}

/// Signed curvature of the circle through three points (positive for a
/// corner bending toward the origin of an L-curve traversed by λ ↑).
fn menger_curvature(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> f64 {
    let cross = (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0);
    let ab = ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt();
    let bc = ((c.0 - b.0).powi(2) + (c.1 - b.1).powi(2)).sqrt();
    let ca = ((a.0 - c.0).powi(2) + (a.1 - c.1).powi(2)).sqrt();
    let denom = ab * bc * ca;
    if denom == 0.0 {
        0.0
    } else {
        2.0 * cross / denom
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LCurvePoint {
    pub lambda: f64,
    pub residual_norm: f64,
    pub solution_norm: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LCurve {
    pub chosen: f64,
    pub points: Vec<LCurvePoint>,
}

/// Log-spaced λ candidates from 10^lo to 10^hi.
pub fn lambda_candidates(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    (0..count)
        .map(|i| 10f64.powf(lo + (hi - lo) * i as f64 / (count.max(2) - 1) as f64))
        .collect()
}

#[derive(Debug, Clone)]
pub struct DipoleInversion {
    pub grid: DipoleGrid,
    pub lambda: f64,
    pub chi2: f64,
    /// Normalized residuals (model − measured)/σ per sample.
    pub residuals: Vec<Vector3<f64>>,
    pub observations: usize,
    pub unknowns: usize,
    /// Trace of the influence matrix.
    pub effective_parameters: f64,
    /// C/m.
    pub density_sigmas: Vec<f64>,
    /// C/m.
    pub background_sigma: f64,
    /// Σ u² over patches with u in e·Å/µm².
    pub regularization_norm: f64,
}

impl DipoleInversion {
    pub fn under_constrained(&self) -> bool {
        self.observations < self.unknowns
    }
}

/// Minimizes Σ ((E_model − E)/σ)² + λ Σ_i D_i² with D in e·Å/µm², the
/// background density left unregularized.
pub fn invert_dipoles(samples: &[FieldSample], spec: GridSpec, lambda: f64) -> Result<DipoleInversion> {
    InversionProblem::new(samples, spec)?.solve(lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::dipole_density_from_e_angstrom;
    use approx::assert_relative_eq;

    fn um(v: f64) -> f64 {
        v * MICRO
    }

    #[test]
    fn infinite_layer_has_no_external_field() {
        let p = DipolePatch {
            extent: Rect::new(-1e3, 1e3, -1e3, 1e3).unwrap(),
            density: dipole_density_from_e_angstrom(1e3),
        };
        let above = patch_field(&p, &Vector3::new(0.0, um(100.0), 0.0)).unwrap();
        let scale = p.density * COULOMB / um(100.0);
        assert!(above.field.norm() < 1e-6 * scale);
        let below = patch_field(&p, &Vector3::new(0.0, -um(100.0), 0.0)).unwrap();
        assert_relative_eq!(above.potential - below.potential, p.density / VACUUM_PERMITTIVITY, max_relative = 1e-6);
    }

    #[test]
    fn far_field_is_point_dipole() {
        let p = DipolePatch {
            extent: Rect::new(-um(500.0), um(500.0), -um(500.0), um(500.0)).unwrap(),
            density: dipole_density_from_e_angstrom(1e3),
        };
        let dipole = p.density * p.extent.area();
        let point = |d: f64| dipole / (2.0 * std::f64::consts::PI * VACUUM_PERMITTIVITY * d.powi(3));
        let at = |d: f64| patch_field(&p, &Vector3::new(0.0, d, 0.0)).unwrap().field.y;
        assert_relative_eq!(at(50e-3), point(50e-3), max_relative = 1e-3);
        assert!((point(5e-3) - 2.3e-3).abs() < 0.01e-3);
        assert!((at(5e-3) - 2.3e-3).abs() < 0.05e-3, "{}", at(5e-3));
    }

    #[test]
    fn mirror_symmetry_about_patch_center() {
        let p = DipolePatch {
            extent: Rect::new(um(10.0), um(60.0), um(-20.0), um(30.0)).unwrap(),
            density: 1e-12,
        };
        let (cx, _) = p.extent.center();
        let a = patch_field(&p, &Vector3::new(cx + um(17.0), um(40.0), um(5.0))).unwrap().field;
        let b = patch_field(&p, &Vector3::new(cx - um(17.0), um(40.0), um(5.0))).unwrap().field;
        assert_relative_eq!(a.x, -b.x, max_relative = 1e-10);
        assert_relative_eq!(a.y, b.y, max_relative = 1e-10);
        assert!((a.z - b.z).abs() <= 1e-10 * a.norm());
    }

    #[test]
    fn in_plane_inside_patch_rejected() {
        let p = DipolePatch { extent: Rect::new(0.0, 1.0, 0.0, 1.0).unwrap(), density: 1.0 };
        assert!(matches!(patch_field(&p, &Vector3::new(0.5, 0.0, 0.5)), Err(Error::OnPatch)));
    }

    #[test]
    fn work_function_paper_value() {
        let dphi = work_function_shift(dipole_density_from_e_angstrom(180e3));
        assert!((dphi + 0.326).abs() < 0.001, "{dphi}");
        assert_eq!(work_function_shift(0.0), 0.0);
        assert_relative_eq!(work_function_shift(2.0e-12), 2.0 * work_function_shift(1.0e-12));
    }

    #[test]
    fn empty_grid_and_single_patch() {
        let spec = GridSpec::default();
        let r = Vector3::new(um(12.0), um(90.0), um(-33.0));
        assert_eq!(DipoleGrid::zeros(spec).grid_field(&r).unwrap(), Vector3::zeros());
        let mut grid = DipoleGrid::zeros(spec);
        grid.densities[187] = 3e-13;
        let single = patch_field(&grid.patches()[187], &r).unwrap().field;
        let total = grid.grid_field(&r).unwrap();
        assert!((total - single).norm() <= 1e-14 * single.norm());
    }

    #[test]
    fn zero_fields_invert_to_zero() {
        let samples: Vec<_> = (0..12)
            .map(|i| {
                FieldSample::new(
                    Vector3::new(um(-50.0 + 10.0 * i as f64), um(100.0), 0.0),
                    Vector3::zeros(),
                    Vector3::repeat(1.0),
                )
                .unwrap()
            })
            .collect();
        let inv = invert_dipoles(&samples, GridSpec::default(), 1e-3).unwrap();
        assert!(inv.grid.densities.iter().all(|d| *d == 0.0));
        assert_eq!(inv.grid.background, 0.0);
    }

    #[test]
    fn unregularized_underdetermined_is_rank_deficient() {
        let samples = vec![FieldSample::new(
            Vector3::new(0.0, um(100.0), 0.0),
            Vector3::new(1.0, 2.0, 3.0),
            Vector3::repeat(1.0),
        )
        .unwrap()];
        assert!(matches!(
            invert_dipoles(&samples, GridSpec::default(), 0.0),
            Err(Error::RankDeficient { .. })
        ));
    }

    #[test]
    fn menger_curvature_of_right_angle() {
        // Corner at the origin of an L traversed from top-left to bottom-right.
        let k = menger_curvature((0.0, 1.0), (0.0, 0.0), (1.0, 0.0));
        assert!(k > 0.0);
    }
}
