//! Pluggable box-and-logit predictors and the decode-then-solve pipeline.

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;

use crate::attitude::{decode_attitude, make_label, AttitudeCodebook};
use crate::camera::{BoundingBox, PinholeCamera};
use crate::error::{Error, Result};
use crate::eval::Prediction;
use crate::rng::{self, Domain};
use crate::rotations::{compose, UnitQuaternion};
use crate::scene::SceneRecord;
use crate::solver::{estimate_position, SolverConfig};
use crate::toy::{silhouette_features, ToyModel};
use crate::wireframe::WireframeModel;

/// What a network head would emit for one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct RawOutput {
    pub bbox: BoundingBox,
    /// Class logits.
    pub v: Vec<f64>,
    /// Weight logits.
    pub w: Vec<f64>,
}

pub trait Predictor: Sync {
    fn predict(&self, scene: &SceneRecord) -> Result<RawOutput>;
}

/// Noise-controlled stand-in built from the ground truth.
#[derive(Debug, Clone)]
pub struct OraclePredictor<'a> {
    pub book: &'a AttitudeCodebook,
    pub n: usize,
    /// Standard deviation of the perturbation angle, radians.
    pub sigma_att: f64,
    /// Half-width of the uniform noise on each box edge, pixels.
    pub sigma_box: f64,
    pub seed: u64,
}

/// Uniform `±sigma_box` on each edge; the truth attitude composed with a
/// rotation of angle `|N(0, sigma_att)|` about a uniform axis; logits are the
/// label targets of the perturbed attitude.
pub fn oracle_predictor(
    truth: &SceneRecord,
    book: &AttitudeCodebook,
    n: usize,
    sigma_att: f64,
    sigma_box: f64,
    seed: u64,
) -> Result<RawOutput> {
    if !(sigma_att >= 0.0 && sigma_box >= 0.0) {
        return Err(Error::invalid("oracle noise levels must be non-negative"));
    }
    let mut rng = rng::stream(seed, Domain::Oracle, truth.id);
    let mut edges = truth.bbox.edges();
    for e in &mut edges {
        *e += sigma_box * (2.0 * rng.random::<f64>() - 1.0);
    }
    let (l, r) = (edges[0].min(edges[1]), edges[0].max(edges[1]));
    let (t, b) = (edges[2].min(edges[3]), edges[2].max(edges[3]));
    let bbox = BoundingBox::new(l, r, t, b)?;

    let angle = Normal::new(0.0, sigma_att)
        .map_err(|e| Error::invalid(format!("attitude noise: {e}")))?
        .sample(&mut rng)
        .abs();
    let axis = Vector3::from_fn(|_, _| StandardNormal.sample(&mut rng));
    let q_pert = if angle > 0.0 {
        compose(
            &truth.pose.q,
            &UnitQuaternion::from_axis_angle(&axis, angle)?,
        )
    } else {
        truth.pose.q
    };
    let (v, w) = make_label(book, &q_pert, n)?.as_logits();
    Ok(RawOutput { bbox, v, w })
}

impl Predictor for OraclePredictor<'_> {
    fn predict(&self, scene: &SceneRecord) -> Result<RawOutput> {
        oracle_predictor(
            scene,
            self.book,
            self.n,
            self.sigma_att,
            self.sigma_box,
            self.seed,
        )
    }
}

/// Trained linear model on silhouette features. There is no box regressor,
/// so the box is the ground-truth one and features come from the true pose.
#[derive(Debug, Clone)]
pub struct ToyPredictor<'a> {
    pub model: &'a ToyModel,
    pub camera: &'a PinholeCamera,
    pub target: &'a WireframeModel,
}

impl Predictor for ToyPredictor<'_> {
    fn predict(&self, scene: &SceneRecord) -> Result<RawOutput> {
        let f = silhouette_features(
            self.camera,
            &scene.pose,
            self.target,
            &scene.bbox,
            self.model.grid,
        )?;
        let (v, w) = self.model.predict(&f)?;
        Ok(RawOutput {
            bbox: scene.bbox,
            v,
            w,
        })
    }
}

/// Everything the pose pipeline needs besides the predictor.
#[derive(Debug, Clone, Copy)]
pub struct PipelineContext<'a> {
    pub camera: &'a PinholeCamera,
    pub target: &'a WireframeModel,
    pub book: &'a AttitudeCodebook,
    pub n: usize,
    pub solver: SolverConfig,
}

/// Predict, decode the attitude, then solve for position. A solve that ends
/// without converging still yields a prediction, flagged `converged = false`.
pub fn predict_pose(
    predictor: &dyn Predictor,
    ctx: &PipelineContext<'_>,
    scene: &SceneRecord,
) -> Result<Prediction> {
    let raw = predictor.predict(scene)?;
    let decoded = decode_attitude(&raw.v, &raw.w, ctx.book, ctx.n)?;
    solve_prediction(
        ctx.camera,
        ctx.target,
        &ctx.solver,
        scene.id,
        decoded.q,
        raw.bbox,
    )
}

/// Position from an attitude and a box, packaged as a prediction.
pub fn solve_prediction(
    camera: &PinholeCamera,
    target: &WireframeModel,
    solver: &SolverConfig,
    id: u64,
    q: UnitQuaternion,
    bbox: BoundingBox,
) -> Result<Prediction> {
    let lc = target.characteristic_length();
    let report = match estimate_position(camera, target, &q, &bbox, lc, solver) {
        Ok(r) => r,
        Err(Error::NonConvergence(r)) => *r,
        Err(e) => return Err(e),
    };
    Ok(Prediction {
        id,
        q,
        t: report.t,
        bbox,
        iterations: Some(report.iterations),
        residual: Some(report.final_residual),
        converged: Some(report.converged || report.final_residual <= solver.residual_tolerance),
    })
}

/// Runs the pipeline over `scenes` in parallel; output keeps input order.
pub fn predict_all(
    predictor: &dyn Predictor,
    ctx: &PipelineContext<'_>,
    scenes: &[SceneRecord],
) -> Result<Vec<Prediction>> {
    scenes
        .par_iter()
        .map(|s| predict_pose(predictor, ctx, s))
        .collect()
}
