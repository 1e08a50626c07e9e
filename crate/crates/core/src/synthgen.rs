//! Seeded synthetic AU datasets: annotations plus blob-rendered images.
//!
//! Every active AU `j` deposits an additive Gaussian blob at the centre of
//! cell `j` of a 4-column grid (rows fill top to bottom), amplitude 0.6 and
//! standard deviation `image_side / 10`. I.i.d. Gaussian pixel noise is added
//! and the result clamped to `[0, 1]`.
//!
//! Per-subject stream layout (seed = `derive_seed(spec.seed, subject_id)`):
//! for each frame in order, one uniform draws the pattern by cumulative
//! weight, then (only when `noise_std > 0`) one normal per pixel, row-major.

use std::collections::BTreeMap;
use std::io::{self, Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::au_model::{AnnotatedFrame, AuPattern, AuRegistry, DatasetTable};
use crate::rng::Stream;

pub const BLOB_AMPLITUDE: f64 = 0.6;
pub const GRID_COLUMNS: usize = 4;
pub const DEFAULT_IMAGE_SIDE: usize = 32;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth spec: {0}")]
    Spec(String),
    #[error("images file: {0}")]
    Io(#[from] io::Error),
    #[error("images file is malformed: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Archetype {
    pub pattern: AuPattern,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub registry: AuRegistry,
    pub n_subjects: usize,
    pub frames_per_subject: usize,
    /// Frames of each subject are split into this many contiguous tasks `T1..`.
    pub n_tasks: usize,
    pub archetypes: Vec<Archetype>,
    pub image_side: usize,
    pub noise_std: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::Spec(m.to_string()));
        if self.archetypes.len() < 2 {
            return bad("at least 2 archetype patterns are required");
        }
        if self.archetypes.iter().any(|a| !(a.weight.is_finite() && a.weight >= 0.0)) {
            return bad("archetype weights must be finite and non-negative");
        }
        if self.archetypes.iter().all(|a| a.weight == 0.0) {
            return bad("archetype weights are all zero");
        }
        if self.archetypes.iter().any(|a| a.weight <= 0.0) {
            return bad("archetype weights must be positive");
        }
        if let Some(a) = self.archetypes.iter().find(|a| a.pattern.width() != self.registry.k()) {
            return Err(SynthError::Spec(format!(
                "archetype {} has width {}, registry has {}",
                a.pattern,
                a.pattern.width(),
                self.registry.k()
            )));
        }
        if self.image_side < 16 {
            return bad("image_side must be at least 16");
        }
        if !(0.0..=1.0).contains(&self.noise_std) {
            return bad("noise_std must lie in [0, 1]");
        }
        if self.n_subjects == 0 || self.frames_per_subject == 0 || self.n_tasks == 0 {
            return bad("subject, frame and task counts must be positive");
        }
        Ok(())
    }

    pub fn subject_id(i: usize) -> String {
        format!("S{:03}", i + 1)
    }
}

/// Grayscale image, row-major, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthImage {
    pub side: usize,
    pub pixels: Vec<f32>,
}

impl SynthImage {
    pub fn to_f64(&self) -> Vec<f64> {
        self.pixels.iter().map(|&p| p as f64).collect()
    }
}

/// Centre (row, col) in pixel coordinates of the blob for AU index `j`.
pub fn blob_center(j: usize, k: usize, side: usize) -> (f64, f64) {
    let rows = k.div_ceil(GRID_COLUMNS);
    let (r, c) = (j / GRID_COLUMNS, j % GRID_COLUMNS);
    let s = side as f64;
    ((r as f64 + 0.5) * s / rows as f64, (c as f64 + 0.5) * s / GRID_COLUMNS as f64)
}

pub fn blob_sigma(side: usize) -> f64 {
    side as f64 / 10.0
}

/// Unit-amplitude blob for AU index `j`, row-major over the image.
pub fn blob_template(j: usize, k: usize, side: usize) -> Vec<f64> {
    let (cy, cx) = blob_center(j, k, side);
    let two_var = 2.0 * blob_sigma(side).powi(2);
    let mut t = Vec::with_capacity(side * side);
    for y in 0..side {
        for x in 0..side {
            let dy = y as f64 + 0.5 - cy;
            let dx = x as f64 + 0.5 - cx;
            t.push((-(dy * dy + dx * dx) / two_var).exp());
        }
    }
    t
}

fn render(pattern: &AuPattern, templates: &[Vec<f64>], side: usize, noise_std: f64, rng: &mut Stream) -> SynthImage {
    let mut acc = vec![0.0f64; side * side];
    for (j, t) in templates.iter().enumerate() {
        if pattern.get(j) {
            for (a, v) in acc.iter_mut().zip(t) {
                *a += BLOB_AMPLITUDE * v;
            }
        }
    }
    if noise_std > 0.0 {
        for a in acc.iter_mut() {
            *a += noise_std * rng.normal();
        }
    }
    SynthImage { side, pixels: acc.into_iter().map(|v| v.clamp(0.0, 1.0) as f32).collect() }
}

fn draw(cumulative: &[f64], rng: &mut Stream) -> usize {
    let total = *cumulative.last().expect("non-empty archetypes");
    let u = rng.uniform() * total;
    cumulative.partition_point(|&c| c <= u).min(cumulative.len() - 1)
}

/// Generated table plus one image per frame, aligned with `table.frames()`.
#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub table: DatasetTable,
    pub images: Vec<SynthImage>,
}

impl SynthDataset {
    pub fn image_map(&self) -> BTreeMap<String, &SynthImage> {
        self.table.frames().iter().map(|f| f.key()).zip(self.images.iter()).collect()
    }
}

pub fn generate(spec: &SynthSpec) -> Result<SynthDataset, SynthError> {
    spec.validate()?;
    let k = spec.registry.k();
    let templates: Vec<Vec<f64>> = (0..k).map(|j| blob_template(j, k, spec.image_side)).collect();
    let cumulative: Vec<f64> = spec
        .archetypes
        .iter()
        .scan(0.0, |acc, a| {
            *acc += a.weight;
            Some(*acc)
        })
        .collect();
    let per_task = spec.frames_per_subject.div_ceil(spec.n_tasks);

    let per_subject: Vec<Vec<(AnnotatedFrame, SynthImage)>> = (0..spec.n_subjects)
        .into_par_iter()
        .map(|s| {
            let subject = SynthSpec::subject_id(s);
            let mut rng = Stream::derived(spec.seed, &subject);
            (0..spec.frames_per_subject)
                .map(|i| {
                    let pattern = spec.archetypes[draw(&cumulative, &mut rng)].pattern;
                    let image = render(&pattern, &templates, spec.image_side, spec.noise_std, &mut rng);
                    let frame =
                        AnnotatedFrame { subject: subject.clone(), task: format!("T{}", i / per_task + 1), frame: i as u64, pattern };
                    (frame, image)
                })
                .collect()
        })
        .collect();

    let (frames, images): (Vec<_>, Vec<_>) = per_subject.into_iter().flatten().unzip();
    let table = DatasetTable::new(spec.registry.clone(), frames).map_err(|e| SynthError::Spec(e.to_string()))?;
    Ok(SynthDataset { table, images })
}

/// BP4D-shaped profile: all-zeros dominant, then the frequent expression
/// clusters, then a long Zipf tail of rarer combinations.
pub fn bp4d_like_spec(seed: u64) -> SynthSpec {
    let registry = AuRegistry::bp4d();
    let k = registry.k();
    let idx = |codes: &[u16]| -> Vec<usize> { codes.iter().map(|c| registry.index_of(*c).expect("bp4d code")).collect() };
    // Head of the distribution, in decreasing frequency.
    let head: Vec<Vec<u16>> = vec![
        vec![],
        vec![6, 7, 10, 12, 14],
        vec![6, 7, 10, 12],
        vec![4],
        vec![10, 12],
        vec![6, 10, 12],
        vec![7, 10, 12, 14],
        vec![1, 2],
        vec![4, 7],
        vec![10, 12, 14, 17],
        vec![15, 17],
        vec![1, 2, 4],
        vec![17, 23, 24],
        vec![6, 7, 10, 12, 14, 17],
        vec![10, 14],
        vec![4, 15, 17],
    ];
    let mut patterns: Vec<AuPattern> = head.iter().map(|c| AuPattern::from_active(k, &idx(c))).collect();

    // Tail: combinations grown from frequent clusters plus a random AU,
    // drawn from a fixed stream so the archetype list itself is reproducible.
    let clusters: Vec<Vec<u16>> = vec![vec![6, 7, 10, 12], vec![10, 12], vec![4, 7], vec![1, 2], vec![15, 17, 23], vec![14, 24]];
    let mut rng = Stream::derived(0x5eed_b4d0, "bp4d-like-tail");
    while patterns.len() < 60 {
        let base = &clusters[rng.below(clusters.len())];
        let mut p = AuPattern::from_active(k, &idx(base));
        let extra = rng.below(k);
        p.set(extra, !p.get(extra));
        if rng.uniform() < 0.5 {
            let extra2 = rng.below(k);
            p.set(extra2, true);
        }
        if !patterns.contains(&p) {
            patterns.push(p);
        }
    }
    let archetypes =
        patterns.into_iter().enumerate().map(|(i, pattern)| Archetype { pattern, weight: 1.0 / ((i + 1) as f64).powi(2) }).collect();
    SynthSpec {
        registry,
        n_subjects: 41,
        frames_per_subject: 500,
        n_tasks: 8,
        archetypes,
        image_side: DEFAULT_IMAGE_SIDE,
        noise_std: 0.05,
        seed,
    }
}

/// Compact profile used by the experiment pipelines and their tests: the
/// BP4D-like archetypes on 16-pixel images with fewer subjects and frames.
pub fn desk_spec(seed: u64) -> SynthSpec {
    SynthSpec { n_subjects: 12, frames_per_subject: 80, n_tasks: 4, image_side: 16, noise_std: 0.5, ..bp4d_like_spec(seed) }
}

/// Writes one record per frame: `u32` LE key length, UTF-8 key, then
/// `side * side` little-endian `f32` pixels, row-major.
pub fn write_images<W: Write>(mut w: W, keys: &[String], images: &[SynthImage]) -> Result<(), SynthError> {
    for (key, img) in keys.iter().zip(images) {
        w.write_all(&(key.len() as u32).to_le_bytes())?;
        w.write_all(key.as_bytes())?;
        for p in &img.pixels {
            w.write_all(&p.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_images<R: Read>(mut r: R, side: usize) -> Result<Vec<(String, SynthImage)>, SynthError> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    let mut out = Vec::new();
    let mut pos = 0usize;
    let n_px = side * side;
    while pos < buf.len() {
        let take = |pos: &mut usize, n: usize| -> Result<&[u8], SynthError> {
            let s = buf.get(*pos..*pos + n).ok_or_else(|| SynthError::Format(format!("truncated record at byte {}", *pos)))?;
            *pos += n;
            Ok(s)
        };
        let len = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let key = std::str::from_utf8(take(&mut pos, len)?).map_err(|_| SynthError::Format("key is not UTF-8".into()))?.to_string();
        let raw = take(&mut pos, 4 * n_px)?;
        let pixels = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        out.push((key, SynthImage { side, pixels }));
    }
    Ok(out)
}
