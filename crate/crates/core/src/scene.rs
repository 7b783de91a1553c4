//! Synthetic labeled scenes and dataset files.
//!
//! A scene is a relative pose drawn from fixed distributions plus its
//! ground truth: the tight box of the target model and the attitude label.
//! A dataset directory holds `manifest.txt` (key-value) and `records.csv`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::attitude::{make_label, AttitudeCodebook, AttitudeLabel};
use crate::camera::{tight_bbox, BoundingBox, PinholeCamera};
use crate::error::{Error, Result};
use crate::keyvalue::{self, KeyValues};
use crate::rng::{self, Domain};
use crate::rotations::{draw_uniform_rotation, Pose, UnitQuaternion};
use crate::solver::BearingAngles;
use crate::wireframe::WireframeModel;

pub const TRAIN_COUNT: usize = 12_000;
pub const TEST_COUNT: usize = 3_000;
pub const MAX_DRAWS: u64 = 1_000_000;

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const RECORDS_FILE: &str = "records.csv";
const FORMAT: &str = "spnkit-dataset-1";

const RECORD_HEADER: [&str; 17] = [
    "id", "qw", "qx", "qy", "qz", "tx", "ty", "tz", "b1", "b2", "b3", "b4", "in_frame", "omega",
    "alpha", "w_target", "range_m",
];

#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    pub count: usize,
    pub seed: u64,
    /// Mean of the box-center pixel; `None` means the image center.
    pub center_mean: Option<(f64, f64)>,
    /// Per-axis standard deviation of the box-center pixel; `None` means
    /// `(5 N_u / 2, 5 N_v / 2)`.
    pub center_sigma: Option<(f64, f64)>,
    pub range_mean: f64,
    pub range_sigma: f64,
    pub range_bounds: (f64, f64),
    /// Label size.
    pub n: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            count: TRAIN_COUNT,
            seed: 0,
            center_mean: None,
            center_sigma: None,
            range_mean: 3.0,
            range_sigma: 10.0,
            range_bounds: (3.0, 50.0),
            n: 5,
        }
    }
}

impl GenConfig {
    pub fn new(count: usize, seed: u64) -> Self {
        Self {
            count,
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::invalid("count must be at least 1"));
        }
        let (lo, hi) = self.range_bounds;
        if !(lo > 0.0 && lo < hi && hi.is_finite()) {
            return Err(Error::invalid(format!(
                "range bounds must satisfy 0 < lo < hi, got [{lo}, {hi}]"
            )));
        }
        if !(self.range_sigma > 0.0) || !self.range_mean.is_finite() {
            return Err(Error::invalid(
                "range distribution needs a finite mean and positive sigma",
            ));
        }
        if let Some((su, sv)) = self.center_sigma {
            if !(su > 0.0 && sv > 0.0 && su.is_finite() && sv.is_finite()) {
                return Err(Error::invalid("center sigma must be positive"));
            }
        }
        if self.n == 0 {
            return Err(Error::invalid("n must be at least 1"));
        }
        Ok(())
    }

    fn center_distribution(&self, cam: &PinholeCamera) -> Result<(Normal<f64>, Normal<f64>)> {
        let (nu, nv) = (cam.nu as f64, cam.nv as f64);
        let (mu, mv) = self.center_mean.unwrap_or((nu / 2.0, nv / 2.0));
        let (su, sv) = self.center_sigma.unwrap_or((2.5 * nu, 2.5 * nv));
        let bad = |e| Error::invalid(format!("center distribution: {e}"));
        Ok((
            Normal::new(mu, su).map_err(bad)?,
            Normal::new(mv, sv).map_err(bad)?,
        ))
    }

    fn key_values(&self, cam: &PinholeCamera) -> Vec<(&'static str, String)> {
        let (nu, nv) = (cam.nu as f64, cam.nv as f64);
        let (mu, mv) = self.center_mean.unwrap_or((nu / 2.0, nv / 2.0));
        let (su, sv) = self.center_sigma.unwrap_or((2.5 * nu, 2.5 * nv));
        vec![
            ("count", self.count.to_string()),
            ("seed", self.seed.to_string()),
            ("center_mean_u", format!("{mu:e}")),
            ("center_mean_v", format!("{mv:e}")),
            ("center_sigma_u", format!("{su:e}")),
            ("center_sigma_v", format!("{sv:e}")),
            ("range_mean_m", format!("{:e}", self.range_mean)),
            ("range_sigma_m", format!("{:e}", self.range_sigma)),
            ("range_min_m", format!("{:e}", self.range_bounds.0)),
            ("range_max_m", format!("{:e}", self.range_bounds.1)),
            ("n", self.n.to_string()),
        ]
    }
}

/// A sampled pose and how many raw draws each rejection loop consumed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseDraw {
    pub pose: Pose,
    pub center: (f64, f64),
    pub center_draws: u64,
    pub range_draws: u64,
}

/// Places the body origin on the ray through pixel `(u, v)` at `range` meters.
pub fn pose_from_draws(
    cam: &PinholeCamera,
    q: UnitQuaternion,
    center: (f64, f64),
    range: f64,
) -> Result<Pose> {
    let ray = BearingAngles::of_pixel(cam, center.0, center.1).ray();
    Pose::new(q, ray * range)
}

/// Attitude, then box center (redrawn jointly until inside the frame), then
/// range (redrawn until inside the bounds).
pub fn sample_pose<R: Rng + ?Sized>(
    cam: &PinholeCamera,
    cfg: &GenConfig,
    rng: &mut R,
) -> Result<PoseDraw> {
    let q = draw_uniform_rotation(rng);
    let (du, dv) = cfg.center_distribution(cam)?;
    let (nu, nv) = (cam.nu as f64, cam.nv as f64);
    let mut center_draws = 0;
    let center = loop {
        if center_draws >= MAX_DRAWS {
            return Err(Error::RejectionLimit(MAX_DRAWS));
        }
        center_draws += 1;
        let (u, v) = (du.sample(rng), dv.sample(rng));
        if (0.0..nu).contains(&u) && (0.0..nv).contains(&v) {
            break (u, v);
        }
    };
    let dr = Normal::new(cfg.range_mean, cfg.range_sigma)
        .map_err(|e| Error::invalid(format!("range distribution: {e}")))?;
    let (lo, hi) = cfg.range_bounds;
    let mut range_draws = 0;
    let range = loop {
        if range_draws >= MAX_DRAWS {
            return Err(Error::RejectionLimit(MAX_DRAWS));
        }
        range_draws += 1;
        let r = dr.sample(rng);
        if (lo..=hi).contains(&r) {
            break r;
        }
    };
    Ok(PoseDraw {
        pose: pose_from_draws(cam, q, center, range)?,
        center,
        center_draws,
        range_draws,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneRecord {
    pub id: u64,
    pub pose: Pose,
    /// Tight, unclipped box.
    pub bbox: BoundingBox,
    pub in_frame: bool,
    pub label: AttitudeLabel,
    pub range: f64,
}

/// Draws until the whole model is in front of the camera with a box of
/// positive area, then labels the result.
pub fn generate_record(
    cam: &PinholeCamera,
    model: &WireframeModel,
    book: &AttitudeCodebook,
    cfg: &GenConfig,
    id: u64,
) -> Result<SceneRecord> {
    let mut rng = rng::stream(cfg.seed, Domain::Scenes, id);
    for _ in 0..MAX_DRAWS {
        let draw = sample_pose(cam, cfg, &mut rng)?;
        let bbox = match tight_bbox(cam, &draw.pose, model) {
            Ok(b) if !b.is_degenerate() => b,
            Ok(_) | Err(Error::PointBehindCamera { .. }) => continue,
            Err(e) => return Err(e),
        };
        return Ok(SceneRecord {
            id,
            pose: draw.pose,
            bbox,
            in_frame: bbox.in_frame(cam),
            label: make_label(book, &draw.pose.q, cfg.n)?,
            range: draw.pose.range(),
        });
    }
    Err(Error::RejectionLimit(MAX_DRAWS))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub count: usize,
    pub seed: u64,
    pub camera: PinholeCamera,
    pub model_name: String,
    pub model_hash: String,
    pub codebook_m: usize,
    pub codebook_seed: u64,
    pub codebook_hash: String,
    pub n: usize,
    pub config_hash: String,
    /// Every manifest entry, in file order.
    pub entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn to_text(&self) -> String {
        let pairs: Vec<(&str, String)> = self
            .entries
            .iter()
            .map(|(k, v)| (k.as_str(), v.clone()))
            .collect();
        keyvalue::render(&pairs)
    }

    pub fn parse(text: &str, source: &Path) -> Result<Self> {
        let kv = KeyValues::parse(text, source)?;
        let format: String = kv.require("format")?;
        if format != FORMAT {
            return Err(Error::parse(
                source,
                0,
                format!("unsupported dataset format `{format}`"),
            ));
        }
        let entries = kv
            .keys()
            .map(|k| (k.to_string(), kv.raw(k).unwrap_or_default().to_string()))
            .collect();
        Ok(Self {
            count: kv.require("count")?,
            seed: kv.require("seed")?,
            camera: PinholeCamera::from_key_values(&kv)?,
            model_name: kv.require("model_name")?,
            model_hash: kv.require("model_hash")?,
            codebook_m: kv.require("codebook_m")?,
            codebook_seed: kv.require("codebook_seed")?,
            codebook_hash: kv.require("codebook_hash")?,
            n: kv.require("n")?,
            config_hash: kv.require("config_hash")?,
            entries,
        })
    }
}

fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

fn build_manifest(
    cam: &PinholeCamera,
    model: &WireframeModel,
    book: &AttitudeCodebook,
    cfg: &GenConfig,
) -> Manifest {
    let mut config: Vec<(&'static str, String)> = cfg.key_values(cam);
    config.extend(cam.key_values());
    config.push(("model_name", model.name().to_string()));
    config.push(("model_hash", sha256_hex(&model.to_text())));
    config.push(("codebook_m", book.m().to_string()));
    config.push(("codebook_seed", book.seed().to_string()));
    config.push(("codebook_hash", book.digest()));
    let config_hash = sha256_hex(&keyvalue::render(&config));

    let mut entries = vec![("format".to_string(), FORMAT.to_string())];
    entries.extend(config.into_iter().map(|(k, v)| (k.to_string(), v)));
    entries.push(("config_hash".to_string(), config_hash.clone()));
    Manifest {
        count: cfg.count,
        seed: cfg.seed,
        camera: *cam,
        model_name: model.name().to_string(),
        model_hash: sha256_hex(&model.to_text()),
        codebook_m: book.m(),
        codebook_seed: book.seed(),
        codebook_hash: book.digest(),
        n: cfg.n,
        config_hash,
        entries,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: Manifest,
    pub records: Vec<SceneRecord>,
}

impl Dataset {
    pub fn camera(&self) -> &PinholeCamera {
        &self.manifest.camera
    }

    /// Fails unless `book` is the codebook the labels were built from.
    pub fn check_codebook(&self, book: &AttitudeCodebook) -> Result<()> {
        if book.digest() != self.manifest.codebook_hash {
            return Err(Error::invalid(format!(
                "codebook (m={}, seed={}) does not match the dataset's (m={}, seed={})",
                book.m(),
                book.seed(),
                self.manifest.codebook_m,
                self.manifest.codebook_seed
            )));
        }
        Ok(())
    }
}

/// Records are generated in parallel, one random stream per id, and returned
/// in id order.
pub fn generate_dataset(
    cam: &PinholeCamera,
    model: &WireframeModel,
    book: &AttitudeCodebook,
    cfg: &GenConfig,
) -> Result<Dataset> {
    cfg.validate()?;
    if cfg.n > book.m() {
        return Err(Error::invalid(format!(
            "n={} exceeds codebook size {}",
            cfg.n,
            book.m()
        )));
    }
    let records = (0..cfg.count as u64)
        .into_par_iter()
        .map(|id| generate_record(cam, model, book, cfg, id))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        manifest: build_manifest(cam, model, book, cfg),
        records,
    })
}

fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn join_list<T>(items: &[T], f: impl Fn(&T) -> String) -> String {
    items.iter().map(f).collect::<Vec<_>>().join(";")
}

fn record_fields(r: &SceneRecord) -> Vec<String> {
    let q = r.pose.q.to_array();
    let t = r.pose.t;
    let mut out = vec![r.id.to_string()];
    out.extend(q.iter().map(|c| fmt_f64(*c)));
    out.extend(t.iter().map(|c| fmt_f64(*c)));
    out.extend(r.bbox.edges().iter().map(|c| fmt_f64(*c)));
    out.push((r.in_frame as u8).to_string());
    out.push(join_list(&r.label.omega, |i| i.to_string()));
    out.push(join_list(&r.label.alphas, |a| fmt_f64(*a)));
    out.push(join_list(&r.label.w_target, |w| fmt_f64(*w)));
    out.push(fmt_f64(r.range));
    out
}

pub fn records_to_csv(records: &[SceneRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(RECORD_HEADER)?;
    for r in records {
        w.write_record(record_fields(r))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::io("buffering records", e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| Error::invalid(e.to_string()))
}

pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let manifest = dir.join(MANIFEST_FILE);
    fs::write(&manifest, dataset.manifest.to_text())
        .map_err(|e| Error::io(format!("writing {}", manifest.display()), e))?;
    let records = dir.join(RECORDS_FILE);
    fs::write(&records, records_to_csv(&dataset.records)?)
        .map_err(|e| Error::io(format!("writing {}", records.display()), e))
}

fn parse_list<T: std::str::FromStr>(s: &str) -> Option<Vec<T>> {
    if s.is_empty() {
        return Some(Vec::new());
    }
    s.split(';').map(|x| x.parse().ok()).collect()
}

fn parse_record(
    row: &csv::StringRecord,
    m: usize,
    path: &Path,
    line: usize,
) -> Result<SceneRecord> {
    let bad = |msg: &str| Error::parse(path, line, msg);
    if row.len() != 17 {
        return Err(bad(&format!("expected 17 fields, got {}", row.len())));
    }
    let num = |i: usize| -> Result<f64> {
        row[i]
            .parse::<f64>()
            .map_err(|_| bad(&format!("bad number in column `{}`", RECORD_HEADER[i])))
    };
    let id = row[0].parse::<u64>().map_err(|_| bad("bad id"))?;
    let q = UnitQuaternion::from_unit_array([num(1)?, num(2)?, num(3)?, num(4)?])?;
    let t = Vector3::new(num(5)?, num(6)?, num(7)?);
    let bbox = BoundingBox::new(num(8)?, num(9)?, num(10)?, num(11)?)?;
    let in_frame = match &row[12] {
        "1" => true,
        "0" => false,
        _ => return Err(bad("in_frame must be 0 or 1")),
    };
    let omega: Vec<usize> = parse_list(&row[13]).ok_or_else(|| bad("bad omega list"))?;
    let alphas: Vec<f64> = parse_list(&row[14]).ok_or_else(|| bad("bad alpha list"))?;
    let w_target: Vec<f64> = parse_list(&row[15]).ok_or_else(|| bad("bad w_target list"))?;
    if omega.is_empty() || omega.len() != alphas.len() || omega.len() != w_target.len() {
        return Err(bad("label lists must be non-empty and of equal length"));
    }
    if omega.iter().any(|&i| i >= m) {
        return Err(bad("label index outside the codebook"));
    }
    Ok(SceneRecord {
        id,
        pose: Pose::new(q, t)?,
        bbox,
        in_frame,
        label: AttitudeLabel {
            m,
            omega,
            alphas,
            w_target,
        },
        range: num(16)?,
    })
}

pub fn read_records(text: &str, m: usize, path: &Path) -> Result<Vec<SceneRecord>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header = reader.headers()?.clone();
    if header.iter().ne(RECORD_HEADER) {
        return Err(Error::parse(path, 1, "unexpected records header"));
    }
    let mut out = Vec::new();
    for (i, row) in reader.records().enumerate() {
        out.push(parse_record(&row?, m, path, i + 2)?);
    }
    Ok(out)
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path)
        .map_err(|e| Error::io(format!("reading {}", manifest_path.display()), e))?;
    let manifest = Manifest::parse(&text, &manifest_path)?;
    let records_path = dir.join(RECORDS_FILE);
    let text = fs::read_to_string(&records_path)
        .map_err(|e| Error::io(format!("reading {}", records_path.display()), e))?;
    let records = read_records(&text, manifest.codebook_m, &records_path)?;
    if records.len() != manifest.count {
        return Err(Error::parse(
            &records_path,
            0,
            format!(
                "manifest lists {} records, file has {}",
                manifest.count,
                records.len()
            ),
        ));
    }
    Ok(Dataset { manifest, records })
}

/// One-line summary for logs.
pub fn describe(dataset: &Dataset) -> String {
    let mut s = String::new();
    let in_frame = dataset.records.iter().filter(|r| r.in_frame).count();
    let (lo, hi) = dataset
        .records
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
            (lo.min(r.range), hi.max(r.range))
        });
    let _ = write!(
        s,
        "{} records ({} fully in frame), range {:.2}..{:.2} m",
        dataset.records.len(),
        in_frame,
        lo,
        hi
    );
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attitude::build_codebook;
    use crate::wireframe::mock_target;
    use statrs::distribution::{ChiSquared, ContinuousCDF, Normal as StatNormal};

    fn small_book() -> AttitudeCodebook {
        build_codebook(64, 5).unwrap()
    }

    #[test]
    fn on_axis_center_gives_boresight_position() {
        let cam = PinholeCamera::speed();
        let p = pose_from_draws(&cam, UnitQuaternion::identity(), (960.0, 600.0), 10.0).unwrap();
        assert_eq!(p.t, Vector3::new(0.0, 0.0, 10.0));
    }

    #[test]
    fn origin_projects_onto_sampled_center() {
        let cam = PinholeCamera::speed();
        let mut r = rng::stream(3, Domain::Harness, 0);
        let cfg = GenConfig::new(1, 3);
        for _ in 0..200 {
            let d = sample_pose(&cam, &cfg, &mut r).unwrap();
            let t = d.pose.t;
            let u = cam.fx * t.x / t.z + cam.cx;
            let v = cam.fy * t.y / t.z + cam.cy;
            assert!((u - d.center.0).abs() < 1e-9 && (v - d.center.1).abs() < 1e-9);
            assert!((d.pose.range() - t.norm()).abs() < 1e-12);
        }
    }

    fn phi(x: f64) -> f64 {
        StatNormal::new(0.0, 1.0).unwrap().cdf(x)
    }

    #[test]
    fn sampled_ranges_and_center_acceptance() {
        let cam = PinholeCamera::speed();
        let cfg = GenConfig::new(1, 0);
        let mut r = rng::stream(11, Domain::Harness, 0);
        let (mut raw, mut accepted) = (0u64, 0u64);
        let mut ranges = Vec::new();
        for _ in 0..10_000 {
            let d = sample_pose(&cam, &cfg, &mut r).unwrap();
            raw += d.center_draws;
            accepted += 1;
            ranges.push(d.pose.range());
        }
        assert!(ranges.iter().all(|x| (3.0..=50.0).contains(x)));
        let expected = (phi(0.2) - phi(-0.2)).powi(2);
        let frac = accepted as f64 / raw as f64;
        assert!(
            (frac - expected).abs() / expected < 0.05,
            "{frac} vs {expected}"
        );
    }

    #[test]
    fn ranges_follow_truncated_normal() {
        let cam = PinholeCamera::speed();
        let cfg = GenConfig::new(1, 0);
        let mut r = rng::stream(12, Domain::Harness, 0);
        let bins = 16;
        let mut counts = vec![0f64; bins];
        let n = 10_000;
        for _ in 0..n {
            let x = sample_pose(&cam, &cfg, &mut r).unwrap().pose.range();
            let k = (((x - 3.0) / 47.0) * bins as f64)
                .floor()
                .min(bins as f64 - 1.0) as usize;
            counts[k] += 1.0;
        }
        let z = |x: f64| phi((x - 3.0) / 10.0);
        let mass = z(50.0) - z(3.0);
        let mut chi2 = 0.0;
        for (k, obs) in counts.iter().enumerate() {
            let a = 3.0 + 47.0 * k as f64 / bins as f64;
            let b = 3.0 + 47.0 * (k + 1) as f64 / bins as f64;
            let e = n as f64 * (z(b) - z(a)) / mass;
            chi2 += (obs - e).powi(2) / e;
        }
        let p = 1.0 - ChiSquared::new((bins - 1) as f64).unwrap().cdf(chi2);
        assert!(p > 0.01, "chi2 {chi2}, p {p}");
    }

    #[test]
    fn rejection_limit_on_impossible_range() {
        let cam = PinholeCamera::speed();
        let cfg = GenConfig {
            range_mean: 0.0,
            range_sigma: 1e-3,
            ..GenConfig::new(1, 0)
        };
        let mut r = rng::stream(1, Domain::Harness, 0);
        assert!(matches!(
            sample_pose(&cam, &cfg, &mut r),
            Err(Error::RejectionLimit(_))
        ));
    }

    #[test]
    fn records_match_recomputed_geometry_and_labels() {
        let cam = PinholeCamera::speed();
        let model = mock_target();
        let book = small_book();
        let cfg = GenConfig {
            n: 3,
            ..GenConfig::new(100, 1)
        };
        let ds = generate_dataset(&cam, &model, &book, &cfg).unwrap();
        assert_eq!(ds.records.len(), 100);
        for (i, r) in ds.records.iter().enumerate() {
            assert_eq!(r.id, i as u64);
            assert_eq!(r.bbox, tight_bbox(&cam, &r.pose, &model).unwrap());
            assert_eq!(r.label, make_label(&book, &r.pose.q, 3).unwrap());
            assert_eq!(r.in_frame, r.bbox.in_frame(&cam));
        }
    }

    #[test]
    fn dataset_round_trip_is_exact_and_deterministic() {
        let cam = PinholeCamera::speed();
        let model = mock_target();
        let book = small_book();
        let cfg = GenConfig {
            n: 3,
            ..GenConfig::new(50, 9)
        };
        let a = generate_dataset(&cam, &model, &book, &cfg).unwrap();
        let b = generate_dataset(&cam, &model, &book, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (da, db) = (dir.path().join("a"), dir.path().join("b"));
        write_dataset(&a, &da).unwrap();
        write_dataset(&b, &db).unwrap();
        for f in [MANIFEST_FILE, RECORDS_FILE] {
            assert_eq!(fs::read(da.join(f)).unwrap(), fs::read(db.join(f)).unwrap());
        }
        let back = read_dataset(&da).unwrap();
        assert_eq!(back.records, a.records);
        assert_eq!(back.manifest, a.manifest);
        back.check_codebook(&book).unwrap();
        assert!(back
            .check_codebook(&build_codebook(64, 6).unwrap())
            .is_err());
        for r in &back.records {
            assert_eq!(r.label, make_label(&book, &r.pose.q, 3).unwrap());
        }
    }

    #[test]
    fn config_hash_tracks_config() {
        let cam = PinholeCamera::speed();
        let model = mock_target();
        let book = small_book();
        let a = build_manifest(&cam, &model, &book, &GenConfig::new(10, 1));
        let b = build_manifest(&cam, &model, &book, &GenConfig::new(10, 2));
        assert_ne!(a.config_hash, b.config_hash);
        assert_eq!(
            a.config_hash,
            build_manifest(&cam, &model, &book, &GenConfig::new(10, 1)).config_hash
        );
    }

    #[test]
    fn invalid_configs() {
        assert!(GenConfig::new(0, 1).validate().is_err());
        assert!(GenConfig {
            range_bounds: (50.0, 3.0),
            ..GenConfig::new(1, 1)
        }
        .validate()
        .is_err());
        assert!(GenConfig::new(1, 1).validate().is_ok());
    }
}
