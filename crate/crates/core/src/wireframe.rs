//! Target wireframe models.
//!
//! File format, one record per line:
//!
//! ```text
//! # comment
//! name mock-target
//! v 0.4 0.375 0.16
//! e 0 1
//! ```

use std::fmt::Write as _;
use std::path::Path;

use log::info;
use nalgebra::{DMatrix, Vector3};

use crate::error::{Error, Result};

const RANK_TOL: f64 = 1e-9;

/// How the characteristic length of a model is measured.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum LengthDefinition {
    /// Diagonal of the axis-aligned bounding cuboid in the body frame.
    #[default]
    CuboidDiagonal,
    /// Largest distance between any two vertices.
    MaxPairwise,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WireframeModel {
    name: String,
    vertices: Vec<Vector3<f64>>,
    edges: Vec<(usize, usize)>,
}

impl WireframeModel {
    /// Validates: at least four finite, non-coplanar vertices and in-range edges.
    pub fn new(
        name: impl Into<String>,
        vertices: Vec<Vector3<f64>>,
        edges: Vec<(usize, usize)>,
    ) -> Result<Self> {
        if vertices.len() < 4 {
            return Err(Error::invalid(format!(
                "model needs at least 4 vertices, got {}",
                vertices.len()
            )));
        }
        if vertices.iter().any(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::NonFinite("model vertex"));
        }
        if let Some(&(i, j)) = edges
            .iter()
            .find(|(i, j)| *i >= vertices.len() || *j >= vertices.len())
        {
            return Err(Error::invalid(format!("edge ({i}, {j}) out of range")));
        }
        if !spans_3d(&vertices) {
            return Err(Error::invalid("model vertices are coplanar"));
        }
        Ok(Self {
            name: name.into(),
            vertices,
            edges,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn vertices(&self) -> &[Vector3<f64>] {
        &self.vertices
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Per-axis minimum and maximum of the vertex coordinates.
    pub fn bounds(&self) -> (Vector3<f64>, Vector3<f64>) {
        let mut lo = self.vertices[0];
        let mut hi = self.vertices[0];
        for v in &self.vertices[1..] {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        (lo, hi)
    }

    pub fn extents(&self) -> Vector3<f64> {
        let (lo, hi) = self.bounds();
        hi - lo
    }

    pub fn characteristic_length(&self) -> f64 {
        self.characteristic_length_with(LengthDefinition::CuboidDiagonal)
    }

    pub fn characteristic_length_with(&self, def: LengthDefinition) -> f64 {
        match def {
            LengthDefinition::CuboidDiagonal => self.extents().norm(),
            LengthDefinition::MaxPairwise => {
                let mut best: f64 = 0.0;
                for (i, a) in self.vertices.iter().enumerate() {
                    for b in &self.vertices[i + 1..] {
                        best = best.max((a - b).norm());
                    }
                }
                best
            }
        }
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            format!("{}-x{}", self.name, factor),
            self.vertices.iter().map(|v| v * factor).collect(),
            self.edges.clone(),
        )
    }

    pub fn parse(text: &str, source: &Path) -> Result<Self> {
        let mut name = String::from("unnamed");
        let mut vertices = Vec::new();
        let mut edges = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split_whitespace();
            let tag = fields.next().unwrap_or_default();
            let rest: Vec<&str> = fields.collect();
            let bad = |msg: &str| Error::parse(source, i + 1, msg);
            match tag {
                "name" => name = rest.join(" "),
                "v" => {
                    if rest.len() != 3 {
                        return Err(bad("vertex needs 3 coordinates"));
                    }
                    let c: Vec<f64> = rest
                        .iter()
                        .map(|s| s.parse::<f64>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| bad("unparsable coordinate"))?;
                    if !c.iter().all(|x| x.is_finite()) {
                        return Err(bad("non-finite coordinate"));
                    }
                    vertices.push(Vector3::new(c[0], c[1], c[2]));
                }
                "e" => {
                    if rest.len() != 2 {
                        return Err(bad("edge needs 2 indices"));
                    }
                    let a = rest[0].parse().map_err(|_| bad("bad edge index"))?;
                    let b = rest[1].parse().map_err(|_| bad("bad edge index"))?;
                    edges.push((a, b));
                }
                other => return Err(bad(&format!("unknown record `{other}`"))),
            }
        }
        Self::new(name, vertices, edges)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "name {}", self.name);
        for v in &self.vertices {
            let _ = writeln!(out, "v {} {} {}", v.x, v.y, v.z);
        }
        for (a, b) in &self.edges {
            let _ = writeln!(out, "e {a} {b}");
        }
        out
    }
}

fn spans_3d(vertices: &[Vector3<f64>]) -> bool {
    let n = vertices.len();
    let mean = vertices.iter().sum::<Vector3<f64>>() / n as f64;
    let centered = DMatrix::from_fn(n, 3, |r, c| vertices[r][c] - mean[c]);
    let sv = centered.singular_values();
    let max = sv.max();
    max > 0.0 && sv.min() > RANK_TOL * max
}

pub fn load_model(path: &Path) -> Result<WireframeModel> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let model = WireframeModel::parse(&text, path)?;
    let (lo, hi) = model.bounds();
    info!(
        "loaded model `{}`: {} vertices, bounds [{:.4}, {:.4}] x [{:.4}, {:.4}] x [{:.4}, {:.4}] m",
        model.name,
        model.vertices.len(),
        lo.x,
        hi.x,
        lo.y,
        hi.y,
        lo.z,
        hi.z
    );
    Ok(model)
}

pub fn save_model(model: &WireframeModel, path: &Path) -> Result<()> {
    std::fs::write(path, model.to_text())
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

// Mock target dimensions, meters.
const BODY: [f64; 3] = [0.8, 0.75, 0.32];
const PANEL_GAP: f64 = 0.05;
const PANEL_THICKNESS: f64 = 0.02;

/// Box body with a flat panel mounted behind it (−z side), 16 vertices.
pub fn mock_target() -> WireframeModel {
    let [hx, hy, hz] = BODY.map(|d| d / 2.0);
    let panel_front = -hz - PANEL_GAP;
    let panel_back = panel_front - PANEL_THICKNESS;
    let mut vertices = Vec::with_capacity(16);
    for z in [hz, -hz, panel_front, panel_back] {
        for (x, y) in [(-hx, -hy), (hx, -hy), (hx, hy), (-hx, hy)] {
            vertices.push(Vector3::new(x, y, z));
        }
    }
    let mut edges = Vec::new();
    for layer in 0..4 {
        let b = layer * 4;
        for k in 0..4 {
            edges.push((b + k, b + (k + 1) % 4));
        }
    }
    // body verticals, panel thickness, struts from body back to panel front
    for k in 0..4 {
        edges.push((k, 4 + k));
        edges.push((8 + k, 12 + k));
        edges.push((4 + k, 8 + k));
    }
    WireframeModel::new("mock-target", vertices, edges).expect("mock target is valid")
}

/// Axis-aligned cube of side `side` centered on the body origin.
pub fn cube(side: f64) -> WireframeModel {
    let h = side / 2.0;
    let mut vertices = Vec::with_capacity(8);
    for z in [-h, h] {
        for (x, y) in [(-h, -h), (h, -h), (h, h), (-h, h)] {
            vertices.push(Vector3::new(x, y, z));
        }
    }
    let mut edges = Vec::new();
    for k in 0..4 {
        edges.push((k, (k + 1) % 4));
        edges.push((4 + k, 4 + (k + 1) % 4));
        edges.push((k, 4 + k));
    }
    WireframeModel::new(format!("cube-{side}"), vertices, edges).expect("cube is valid")
}
