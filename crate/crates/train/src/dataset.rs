//! Scene generation, on-disk layout and the JSON-lines manifest.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use hifreq_core::io::{read_pfm, write_pfm};
use hifreq_core::raster::render_scene;
use hifreq_core::sparse::{low_frequency_depth, SparseConfig};
use hifreq_core::synth::sample_scene;
use hifreq_core::{DepthMap, RigConfig, Rng, SceneSpec, SynthConfig, Tensor};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::sample::Sample;
use crate::TrainError;

const LIGHT_STREAM: u64 = 0x11647;
const SPLIT_STREAM: u64 = 0x5911;
const SPARSE_STREAM: u64 = 0x5BA5;

pub const MANIFEST_NAME: &str = "manifest.jsonl";
const SCENE_DIR: &str = "scenes";

/// Everything that determines a generated scene besides its seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    pub synth: SynthConfig,
    pub rig: RigConfig,
    #[serde(default)]
    pub sparse: SparseConfig,
}

impl GenConfig {
    pub fn desk() -> Self {
        Self {
            synth: SynthConfig::desk(),
            rig: RigConfig::desk(),
            sparse: SparseConfig::default(),
        }
    }

    pub fn paper() -> Self {
        Self {
            synth: SynthConfig::default(),
            rig: RigConfig::paper(),
            sparse: SparseConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
}

/// One manifest line. Paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub scene_id: String,
    pub seed: u64,
    pub shading: String,
    /// RBF-densified depth.
    pub lowfreq: String,
    pub pattern: String,
    pub gt: String,
    /// Scene parameters as JSON.
    pub scene: String,
    pub split: Split,
}

pub fn scene_id(index: usize) -> String {
    format!("scene{index:05}")
}

/// Number of validation scenes among `n`, at least one of each split when `n >= 2`.
pub fn val_count(n: usize, val_fraction: f64) -> usize {
    if n < 2 {
        return 0;
    }
    ((n as f64 * val_fraction).round() as usize).clamp(1, n - 1)
}

/// Split of each scene index, drawn once from the dataset seed.
pub fn assign_splits(n: usize, val_fraction: f64, seed: u64) -> Vec<Split> {
    let mut order: Vec<usize> = (0..n).collect();
    Rng::new(seed).fork(SPLIT_STREAM).shuffle(&mut order);
    let mut out = vec![Split::Train; n];
    for &i in &order[..val_count(n, val_fraction)] {
        out[i] = Split::Val;
    }
    out
}

/// Scene `index` of the dataset with seed `seed`. Unless the light is drawn
/// per scene, every scene of a dataset shares one light direction.
pub fn generate_scene(cfg: &GenConfig, seed: u64, index: usize) -> Result<SceneSpec, TrainError> {
    let mut rng = Rng::new(seed).fork(index as u64);
    let mut scene = sample_scene(&mut rng, &cfg.synth)?;
    if !cfg.synth.light.per_scene {
        let mut lr = Rng::new(seed).fork(LIGHT_STREAM);
        let l = cfg.synth.light.direction(cfg.synth.light.azimuth_deg.draw(&mut lr));
        scene.light_dir = [l.x, l.y, l.z];
    }
    Ok(scene)
}

/// Renders a scene and simulates its sparse measurement.
pub fn render_sample(cfg: &GenConfig, scene: SceneSpec, scene_id: String) -> Result<Sample, TrainError> {
    let out = render_scene(&scene, &cfg.rig)?;
    let mut rng = Rng::new(scene.seed).fork(SPARSE_STREAM);
    let (_, lowfreq) = low_frequency_depth(&out.depth, &out.pattern, &cfg.sparse, &mut rng)?;
    Ok(Sample {
        scene_id,
        shading: out.shading,
        lowfreq,
        pattern: out.pattern,
        gt: out.depth,
        scene: Some(scene),
    })
}

pub fn generate_sample(cfg: &GenConfig, seed: u64, index: usize) -> Result<Sample, TrainError> {
    let scene = generate_scene(cfg, seed, index)?;
    render_sample(cfg, scene, scene_id(index))
}

/// Depth with invalid pixels stored as NaN.
/// Depth as an image with NaN at invalid pixels.
pub fn depth_to_image(d: &DepthMap) -> Tensor {
    let mut t = d.depth().clone();
    for (v, &m) in t.data_mut().iter_mut().zip(d.mask().data()) {
        if m != 1.0 {
            *v = f64::NAN;
        }
    }
    t
}

fn image_to_depth(t: Tensor) -> Result<DepthMap, TrainError> {
    let mask = Tensor::from_fn(t.shape(), |i| if t.data()[i].is_nan() { 0.0 } else { 1.0 })?;
    Ok(DepthMap::new(t, mask)?)
}

/// Writes the sample's images and scene file under `dir`.
pub fn write_sample(dir: &Path, s: &Sample, seed: u64, split: Split) -> Result<ManifestEntry, TrainError> {
    let sub = dir.join(SCENE_DIR);
    fs::create_dir_all(&sub).map_err(TrainError::io(&sub))?;
    let rel = |kind: &str, ext: &str| format!("{SCENE_DIR}/{}_{kind}.{ext}", s.scene_id);
    let entry = ManifestEntry {
        scene_id: s.scene_id.clone(),
        seed,
        shading: rel("shading", "pfm"),
        lowfreq: rel("lowfreq", "pfm"),
        pattern: rel("pattern", "pfm"),
        gt: rel("gt", "pfm"),
        scene: rel("scene", "json"),
        split,
    };
    write_pfm(&dir.join(&entry.shading), &s.shading)?;
    write_pfm(&dir.join(&entry.lowfreq), &depth_to_image(&s.lowfreq))?;
    write_pfm(&dir.join(&entry.pattern), &s.pattern)?;
    write_pfm(&dir.join(&entry.gt), &depth_to_image(&s.gt))?;
    let json = serde_json::to_string_pretty(&s.scene).expect("scene serializes");
    let p = dir.join(&entry.scene);
    fs::write(&p, json).map_err(TrainError::io(&p))?;
    Ok(entry)
}

pub fn load_sample(dir: &Path, e: &ManifestEntry) -> Result<Sample, TrainError> {
    let p = dir.join(&e.scene);
    let text = fs::read_to_string(&p).map_err(TrainError::io(&p))?;
    let scene = serde_json::from_str(&text).map_err(|err| TrainError::Parse {
        path: p.display().to_string(),
        line: err.line(),
        reason: err.to_string(),
    })?;
    let s = Sample {
        scene_id: e.scene_id.clone(),
        shading: read_pfm(&dir.join(&e.shading))?,
        lowfreq: image_to_depth(read_pfm(&dir.join(&e.lowfreq))?)?,
        pattern: read_pfm(&dir.join(&e.pattern))?,
        gt: image_to_depth(read_pfm(&dir.join(&e.gt))?)?,
        scene: Some(scene),
    };
    s.validate()?;
    Ok(s)
}

pub fn manifest_to_string(entries: &[ManifestEntry]) -> String {
    let mut out = String::new();
    for e in entries {
        out.push_str(&serde_json::to_string(e).expect("entry serializes"));
        out.push('\n');
    }
    out
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<(), TrainError> {
    let mut f = fs::File::create(path).map_err(TrainError::io(path))?;
    f.write_all(manifest_to_string(entries).as_bytes())
        .map_err(TrainError::io(path))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>, TrainError> {
    let f = fs::File::open(path).map_err(TrainError::io(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(TrainError::io(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| TrainError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            reason: e.to_string(),
        })?);
    }
    Ok(out)
}

/// A manifest plus the directory its paths are relative to.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub dir: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl Dataset {
    /// Opens `path`, which is either a manifest file or a directory holding one.
    pub fn open(path: &Path) -> Result<Self, TrainError> {
        let manifest = if path.is_dir() { path.join(MANIFEST_NAME) } else { path.to_path_buf() };
        let dir = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self {
            entries: read_manifest(&manifest)?,
            dir,
        })
    }

    pub fn load(&self, split: Option<Split>) -> Result<Vec<Sample>, TrainError> {
        self.entries
            .par_iter()
            .filter(|e| split.is_none_or(|s| e.split == s))
            .map(|e| load_sample(&self.dir, e))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct GenSummary {
    pub entries: Vec<ManifestEntry>,
    /// `(scene_id, error)` of scenes that failed and were left out.
    pub skipped: Vec<(String, String)>,
}

impl GenSummary {
    pub fn skipped_fraction(&self) -> f64 {
        let total = self.entries.len() + self.skipped.len();
        if total == 0 {
            0.0
        } else {
            self.skipped.len() as f64 / total as f64
        }
    }
}

/// Generates `count` scenes into `dir` in parallel and writes the manifest.
/// Scenes whose synthesis fails are skipped; file-system errors abort.
pub fn generate_dataset(
    dir: &Path,
    cfg: &GenConfig,
    count: usize,
    seed: u64,
    val_fraction: f64,
) -> Result<GenSummary, TrainError> {
    cfg.synth.validate()?;
    fs::create_dir_all(dir).map_err(TrainError::io(dir))?;
    let splits = assign_splits(count, val_fraction, seed);
    let results: Vec<Result<Result<ManifestEntry, (String, String)>, TrainError>> = (0..count)
        .into_par_iter()
        .map(|i| match generate_sample(cfg, seed, i) {
            Ok(s) => write_sample(dir, &s, Rng::derive_seed(seed, i as u64), splits[i]).map(Ok),
            Err(e) if e.is_io() => Err(e),
            Err(e) => {
                log::warn!("skipping {}: {e}", scene_id(i));
                Ok(Err((scene_id(i), e.to_string())))
            }
        })
        .collect();
    let mut summary = GenSummary {
        entries: Vec::new(),
        skipped: Vec::new(),
    };
    for r in results {
        match r? {
            Ok(e) => summary.entries.push(e),
            Err(s) => summary.skipped.push(s),
        }
    }
    write_manifest(&dir.join(MANIFEST_NAME), &summary.entries)?;
    Ok(summary)
}
