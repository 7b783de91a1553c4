//! Position from a bounding box and an attitude estimate.
//!
//! A coarse range/bearing initializer seeds a damped Gauss-Newton
//! (Levenberg) refinement of the tight-fit residual
//! `[u_L - B1, u_R - B2, v_T - B3, v_B - B4]`, where `u_L, u_R, v_T, v_B` are
//! the left-, right-, top- and bottom-most projected model vertices.

use nalgebra::{Matrix3, Matrix4x3, Vector3, Vector4};

use crate::camera::{jacobian_from_camera_point, BoundingBox, PinholeCamera, MIN_DEPTH};
use crate::error::{Error, Result};
use crate::rotations::UnitQuaternion;
use crate::wireframe::WireframeModel;

/// Azimuth and elevation of the ray through the box center, radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BearingAngles {
    pub azimuth: f64,
    pub elevation: f64,
}

impl BearingAngles {
    pub fn of_pixel(cam: &PinholeCamera, u: f64, v: f64) -> Self {
        Self {
            azimuth: ((u - cam.cx) / cam.fx).atan(),
            elevation: ((v - cam.cy) / cam.fy).atan(),
        }
    }

    /// Unit vector along the ray, so that a point on it projects back onto
    /// the pixel the angles came from.
    pub fn ray(&self) -> Vector3<f64> {
        Vector3::new(self.azimuth.tan(), self.elevation.tan(), 1.0).normalize()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum InitMode {
    /// `t0 = r * ray(α, β)`; the body origin projects onto the box center.
    #[default]
    ExactRay,
    /// The azimuth/elevation rotation product applied to `(0, 0, r)`, as
    /// commonly written. Mirrors the lateral offset for `u` under this
    /// camera convention; kept for comparison runs.
    LiteralRotation,
}

/// Range from the box diagonal: `((f_x + f_y)/2) L_C / l_ROI`.
pub fn coarse_range(
    cam: &PinholeCamera,
    bbox: &BoundingBox,
    characteristic_length: f64,
) -> Result<f64> {
    bbox.ensure_area()?;
    if !(characteristic_length > 0.0) || !characteristic_length.is_finite() {
        return Err(Error::invalid("characteristic length must be positive"));
    }
    Ok(cam.mean_focal() * characteristic_length / bbox.diagonal())
}

pub fn coarse_position(
    cam: &PinholeCamera,
    bbox: &BoundingBox,
    characteristic_length: f64,
) -> Result<Vector3<f64>> {
    coarse_position_with(cam, bbox, characteristic_length, InitMode::ExactRay)
}

pub fn coarse_position_with(
    cam: &PinholeCamera,
    bbox: &BoundingBox,
    characteristic_length: f64,
    mode: InitMode,
) -> Result<Vector3<f64>> {
    let range = coarse_range(cam, bbox, characteristic_length)?;
    let (bx, by) = bbox.center();
    let bearing = BearingAngles::of_pixel(cam, bx, by);
    Ok(match mode {
        InitMode::ExactRay => bearing.ray() * range,
        InitMode::LiteralRotation => {
            let (sa, ca) = bearing.azimuth.sin_cos();
            let (sb, cb) = bearing.elevation.sin_cos();
            let about_y = Matrix3::new(ca, 0.0, -sa, 0.0, 1.0, 0.0, sa, 0.0, ca);
            let about_x = Matrix3::new(1.0, 0.0, 0.0, 0.0, cb, sb, 0.0, -sb, cb);
            about_y * about_x * Vector3::new(0.0, 0.0, range)
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub max_iterations: usize,
    /// Stop once the proposed step is shorter than this, meters.
    pub step_tolerance: f64,
    pub initial_damping: f64,
    pub damping_decrease: f64,
    pub damping_increase: f64,
    /// Damping above this means no descent direction is left; the solve stops.
    pub max_damping: f64,
    /// Longest allowed step as a fraction of the current range.
    pub max_step_fraction: f64,
    /// RMS residual, pixels, above which an exhausted solve is an error.
    pub residual_tolerance: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            step_tolerance: 1e-6,
            initial_damping: 1e-3,
            damping_decrease: 0.3,
            damping_increase: 10.0,
            max_damping: 1e12,
            max_step_fraction: 0.5,
            residual_tolerance: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub t: Vector3<f64>,
    pub iterations: usize,
    /// RMS of the four edge residuals, pixels.
    pub final_residual: f64,
    pub converged: bool,
    /// Vertex indices of the left-, right-, top- and bottom-most projections at `t`.
    pub extremal_indices: [usize; 4],
    pub box_in_frame: bool,
}

struct Linearization {
    residual: Vector4<f64>,
    jacobian: Matrix4x3<f64>,
    extremal: [usize; 4],
}

impl Linearization {
    fn cost(&self) -> f64 {
        self.residual.norm_squared()
    }
}

/// Projects all vertices at `t`, picks the extremal ones (lowest index wins
/// ties) and stacks their residuals and Jacobian rows.
fn linearize(
    cam: &PinholeCamera,
    rotated: &[Vector3<f64>],
    bbox: &BoundingBox,
    t: &Vector3<f64>,
) -> Result<Linearization> {
    let mut uv = Vec::with_capacity(rotated.len());
    for r in rotated {
        let xc = r + t;
        if xc.z <= MIN_DEPTH {
            return Err(Error::PointBehindCamera { depth: xc.z });
        }
        uv.push((
            cam.fx * xc.x / xc.z + cam.cx,
            cam.fy * xc.y / xc.z + cam.cy,
            xc,
        ));
    }
    let mut ext = [0usize; 4];
    for (i, (u, v, _)) in uv.iter().enumerate().skip(1) {
        if *u < uv[ext[0]].0 {
            ext[0] = i;
        }
        if *u > uv[ext[1]].0 {
            ext[1] = i;
        }
        if *v < uv[ext[2]].1 {
            ext[2] = i;
        }
        if *v > uv[ext[3]].1 {
            ext[3] = i;
        }
    }
    let edges = bbox.edges();
    let mut residual = Vector4::zeros();
    let mut jacobian = Matrix4x3::zeros();
    for (row, &i) in ext.iter().enumerate() {
        let (u, v, xc) = &uv[i];
        let j = jacobian_from_camera_point(cam, xc);
        // rows 0,1 constrain u; rows 2,3 constrain v
        let axis = row / 2;
        residual[row] = if axis == 0 { u } else { v } - edges[row];
        jacobian.set_row(row, &j.row(axis));
    }
    Ok(Linearization {
        residual,
        jacobian,
        extremal: ext,
    })
}

/// Damped Gauss-Newton on the tight-fit residual with the attitude held fixed.
pub fn refine_position(
    cam: &PinholeCamera,
    model: &WireframeModel,
    attitude: &UnitQuaternion,
    bbox: &BoundingBox,
    t0: &Vector3<f64>,
    cfg: &SolverConfig,
) -> Result<SolveReport> {
    bbox.ensure_area()?;
    if !t0.iter().all(|c| c.is_finite()) {
        return Err(Error::NonFinite("initial position"));
    }
    let rot = attitude.to_rotation_matrix().0;
    let rotated: Vec<Vector3<f64>> = model.vertices().iter().map(|x| rot * x).collect();

    let mut t = *t0;
    let mut lin = linearize(cam, &rotated, bbox, &t)?;
    let mut cost = lin.cost();
    let mut damping = cfg.initial_damping;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iterations {
        iterations += 1;
        let jt = lin.jacobian.transpose();
        let normal = jt * lin.jacobian + Matrix3::identity() * damping;
        let gradient = jt * lin.residual;
        let chol = normal.cholesky().ok_or(Error::SingularNormalMatrix)?;
        let mut step = -chol.solve(&gradient);
        if !step.iter().all(|c| c.is_finite()) {
            return Err(Error::SingularNormalMatrix);
        }
        let step_norm = step.norm();
        if step_norm < cfg.step_tolerance {
            converged = true;
            break;
        }
        let cap = cfg.max_step_fraction * t.norm();
        if step_norm > cap {
            step *= cap / step_norm;
        }
        let candidate = t + step;
        match linearize(cam, &rotated, bbox, &candidate) {
            Ok(next) if next.cost() <= cost => {
                t = candidate;
                cost = next.cost();
                lin = next;
                damping *= cfg.damping_decrease;
            }
            _ => {
                damping *= cfg.damping_increase;
                if damping > cfg.max_damping {
                    break;
                }
            }
        }
    }

    let report = SolveReport {
        t,
        iterations,
        final_residual: (cost / 4.0).sqrt(),
        converged,
        extremal_indices: lin.extremal,
        box_in_frame: bbox.in_frame(cam),
    };
    if !converged && !(report.final_residual <= cfg.residual_tolerance) {
        return Err(Error::NonConvergence(Box::new(report)));
    }
    Ok(report)
}

/// Coarse initializer followed by refinement.
pub fn estimate_position(
    cam: &PinholeCamera,
    model: &WireframeModel,
    attitude: &UnitQuaternion,
    bbox: &BoundingBox,
    characteristic_length: f64,
    cfg: &SolverConfig,
) -> Result<SolveReport> {
    let t0 = coarse_position(cam, bbox, characteristic_length)?;
    refine_position(cam, model, attitude, bbox, &t0, cfg)
}
