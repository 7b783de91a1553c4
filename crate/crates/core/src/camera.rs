//! Pinhole camera, perspective projection and bounding boxes.
//!
//! Image axes: `u` to the right, `v` down, boresight along camera `+z`.

use std::path::Path;

use nalgebra::{Matrix2x3, Vector3};

use crate::error::{Error, Result};
use crate::keyvalue::{self, KeyValues};
use crate::rotations::Pose;
use crate::wireframe::WireframeModel;

/// Points closer than this to the camera plane are treated as behind it.
pub const MIN_DEPTH: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PinholeCamera {
    /// Focal lengths, pixels.
    pub fx: f64,
    pub fy: f64,
    /// Principal point, pixels.
    pub cx: f64,
    pub cy: f64,
    /// Image size, pixels.
    pub nu: u32,
    pub nv: u32,
    /// Pixel pitch, meters. Metadata only.
    pub du: f64,
    pub dv: f64,
}

impl PinholeCamera {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        nu: u32,
        nv: u32,
        du: f64,
        dv: f64,
    ) -> Result<Self> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            nu,
            nv,
            du,
            dv,
        };
        cam.validate()?;
        Ok(cam)
    }

    fn validate(&self) -> Result<()> {
        if ![self.fx, self.fy, self.cx, self.cy, self.du, self.dv]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(Error::NonFinite("camera"));
        }
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::invalid("focal lengths must be positive"));
        }
        if !(0.0..=self.nu as f64).contains(&self.cx) || !(0.0..=self.nv as f64).contains(&self.cy)
        {
            return Err(Error::invalid("principal point outside the image"));
        }
        Ok(())
    }

    /// 1920×1200 px sensor, 17.6 mm lens, 5.86 µm pixels, principal point at
    /// the image center.
    pub fn speed() -> Self {
        const FOCAL_M: f64 = 0.0176;
        const PITCH_M: f64 = 5.86e-6;
        let f = FOCAL_M / PITCH_M;
        Self {
            fx: f,
            fy: f,
            cx: 960.0,
            cy: 600.0,
            nu: 1920,
            nv: 1200,
            du: PITCH_M,
            dv: PITCH_M,
        }
    }

    pub fn mean_focal(&self) -> f64 {
        (self.fx + self.fy) / 2.0
    }

    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        let nu: u32 = kv.require("N_u")?;
        let nv: u32 = kv.require("N_v")?;
        let cam = Self {
            fx: kv.require("f_x_px")?,
            fy: kv.require("f_y_px")?,
            cx: kv.get("c_x")?.unwrap_or(nu as f64 / 2.0),
            cy: kv.get("c_y")?.unwrap_or(nv as f64 / 2.0),
            nu,
            nv,
            du: kv.get("du")?.unwrap_or(0.0),
            dv: kv.get("dv")?.unwrap_or(0.0),
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn key_values(&self) -> Vec<(&'static str, String)> {
        vec![
            ("N_u", self.nu.to_string()),
            ("N_v", self.nv.to_string()),
            ("f_x_px", format!("{:e}", self.fx)),
            ("f_y_px", format!("{:e}", self.fy)),
            ("c_x", format!("{:e}", self.cx)),
            ("c_y", format!("{:e}", self.cy)),
            ("du", format!("{:e}", self.du)),
            ("dv", format!("{:e}", self.dv)),
        ]
    }

    pub fn to_text(&self) -> String {
        keyvalue::render(&self.key_values())
    }

    /// `"speed"` selects the built-in preset; anything else is a camera file.
    pub fn resolve(name_or_path: &str) -> Result<Self> {
        if name_or_path == "speed" {
            Ok(Self::speed())
        } else {
            Self::from_key_values(&KeyValues::load(Path::new(name_or_path))?)
        }
    }
}

/// Axis-aligned image rectangle. `left/right/top/bottom` are the edge
/// coordinates `B1, B2, B3, B4` in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub left: f64,
    pub right: f64,
    pub top: f64,
    pub bottom: f64,
}

impl BoundingBox {
    /// Accepts finite, ordered edges; zero width or height is allowed here and
    /// rejected by consumers that need area.
    pub fn new(left: f64, right: f64, top: f64, bottom: f64) -> Result<Self> {
        if ![left, right, top, bottom].iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("bounding box"));
        }
        if left > right || top > bottom {
            return Err(Error::invalid(format!(
                "bounding box edges out of order: [{left}, {right}] x [{top}, {bottom}]"
            )));
        }
        Ok(Self {
            left,
            right,
            top,
            bottom,
        })
    }

    pub fn edges(&self) -> [f64; 4] {
        [self.left, self.right, self.top, self.bottom]
    }

    pub fn width(&self) -> f64 {
        self.right - self.left
    }

    pub fn height(&self) -> f64 {
        self.bottom - self.top
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (
            (self.left + self.right) / 2.0,
            (self.top + self.bottom) / 2.0,
        )
    }

    pub fn diagonal(&self) -> f64 {
        self.width().hypot(self.height())
    }

    pub fn is_degenerate(&self) -> bool {
        self.width() <= 0.0 || self.height() <= 0.0
    }

    pub fn ensure_area(&self) -> Result<()> {
        if self.is_degenerate() {
            Err(Error::DegenerateBox)
        } else {
            Ok(())
        }
    }

    /// Whether the box lies entirely inside `[0, N_u] × [0, N_v]`.
    pub fn in_frame(&self, cam: &PinholeCamera) -> bool {
        self.left >= 0.0
            && self.top >= 0.0
            && self.right <= cam.nu as f64
            && self.bottom <= cam.nv as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedPoint {
    pub u: f64,
    pub v: f64,
    /// Depth along the boresight, meters.
    pub w: f64,
}

fn project_camera_point(cam: &PinholeCamera, xc: &Vector3<f64>) -> Result<ProjectedPoint> {
    if xc.z <= MIN_DEPTH {
        return Err(Error::PointBehindCamera { depth: xc.z });
    }
    Ok(ProjectedPoint {
        u: cam.fx * xc.x / xc.z + cam.cx,
        v: cam.fy * xc.y / xc.z + cam.cy,
        w: xc.z,
    })
}

pub fn project_point(cam: &PinholeCamera, pose: &Pose, x: &Vector3<f64>) -> Result<ProjectedPoint> {
    project_camera_point(cam, &pose.transform(x))
}

/// `∂(u, v)/∂t` for a body point `x`, pixels per meter.
pub fn projection_jacobian_t(
    cam: &PinholeCamera,
    pose: &Pose,
    x: &Vector3<f64>,
) -> Result<Matrix2x3<f64>> {
    let xc = pose.transform(x);
    if xc.z <= MIN_DEPTH {
        return Err(Error::PointBehindCamera { depth: xc.z });
    }
    Ok(jacobian_from_camera_point(cam, &xc))
}

pub(crate) fn jacobian_from_camera_point(cam: &PinholeCamera, xc: &Vector3<f64>) -> Matrix2x3<f64> {
    let w = xc.z;
    let w2 = w * w;
    Matrix2x3::new(
        cam.fx / w,
        0.0,
        -cam.fx * xc.x / w2,
        0.0,
        cam.fy / w,
        -cam.fy * xc.y / w2,
    )
}

/// Projects every model vertex; fails if any is behind the camera.
pub fn project_model(
    cam: &PinholeCamera,
    pose: &Pose,
    model: &WireframeModel,
) -> Result<Vec<ProjectedPoint>> {
    model
        .vertices()
        .iter()
        .map(|x| project_point(cam, pose, x))
        .collect()
}

/// Tightest box around the projected vertices. Not clipped to the image; see
/// [`BoundingBox::in_frame`].
pub fn tight_bbox(cam: &PinholeCamera, pose: &Pose, model: &WireframeModel) -> Result<BoundingBox> {
    bbox_of_points(&project_model(cam, pose, model)?)
}

pub fn bbox_of_points(points: &[ProjectedPoint]) -> Result<BoundingBox> {
    let first = points
        .first()
        .ok_or_else(|| Error::invalid("no points to bound"))?;
    let mut b = [first.u, first.u, first.v, first.v];
    for p in &points[1..] {
        b[0] = b[0].min(p.u);
        b[1] = b[1].max(p.u);
        b[2] = b[2].min(p.v);
        b[3] = b[3].max(p.v);
    }
    BoundingBox::new(b[0], b[1], b[2], b[3])
}
