//! On-disk dataset layout.
//!
//! ```text
//! <root>/
//!   dataset.json            manifest: config payload + hash, master seed, splits
//!   scenes/<name>/
//!     scene.json            geometry, sources, poses, blob dimensions
//!     audio_v0.f64          channels × samples, f64 little-endian
//!     depth_v0.f64          height × width (+∞ where no surface)
//!     appearance_v0.f64     dim × grid × grid
//!     ... per view
//! ```

use crate::error::{Error, Result};
use crate::geometry::{FeatureMap, RigidTransform, RigidTransformJson, SurfacePatch};
use crate::scene::{AcousticScene, AppearanceFieldSpec, DepthMap, SoundSource, ViewRecording};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::Path;

/// One fully rendered scene.
#[derive(Debug, Clone)]
pub struct SceneRecord {
    pub scene: AcousticScene,
    pub views: Vec<ViewRecording>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SceneMeta {
    scene_id: u64,
    seed: u64,
    surfaces: Vec<SurfacePatch>,
    sources: Vec<SoundSource>,
    poses: Vec<RigidTransformJson>,
    mic_channels: usize,
    samples: usize,
    depth_size: [usize; 2],
    appearance_dim: usize,
    appearance_grid: usize,
    appearance_scale: f64,
}

/// Dataset-level manifest. `config` is the experiment configuration as raw
/// JSON so loaders that only need blobs never have to parse it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub config: serde_json::Value,
    pub config_hash: String,
    pub master_seed: u64,
    pub class_count: usize,
    pub field: AppearanceFieldSpec,
    /// split name → scene directory names under `scenes/`
    pub splits: BTreeMap<String, Vec<String>>,
}

pub fn save_manifest(root: &Path, manifest: &DatasetManifest) -> Result<()> {
    fs::create_dir_all(root)?;
    let file = File::create(root.join("dataset.json"))?;
    serde_json::to_writer_pretty(BufWriter::new(file), manifest)?;
    Ok(())
}

pub fn load_manifest(root: &Path) -> Result<DatasetManifest> {
    let path = root.join("dataset.json");
    let file = File::open(&path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    Ok(serde_json::from_reader(BufReader::new(file))?)
}

/// Scene directories of one split, as absolute paths in manifest order.
pub fn split_dirs(root: &Path, manifest: &DatasetManifest, split: &str) -> Result<Vec<std::path::PathBuf>> {
    let names = manifest
        .splits
        .get(split)
        .ok_or_else(|| Error::Data(format!("dataset has no split {split:?}")))?;
    Ok(names.iter().map(|n| root.join("scenes").join(n)).collect())
}

fn write_blob(path: &Path, data: &[f64]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for &v in data {
        w.write_f64::<LittleEndian>(v)?;
    }
    Ok(())
}

fn read_blob(path: &Path, expect: usize) -> Result<Vec<f64>> {
    let file = File::open(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let len = file.metadata()?.len();
    if len != (expect * 8) as u64 {
        return Err(Error::Data(format!(
            "{}: expected {} f64s ({} bytes), found {} bytes",
            path.display(),
            expect,
            expect * 8,
            len
        )));
    }
    let mut r = BufReader::new(file);
    let mut out = vec![0.0f64; expect];
    r.read_f64_into::<LittleEndian>(&mut out)?;
    Ok(out)
}

pub fn save_scene_record(dir: &Path, record: &SceneRecord) -> Result<()> {
    if record.views.is_empty() {
        return Err(Error::Invalid("save_scene_record: no views".into()));
    }
    fs::create_dir_all(dir)?;
    let v0 = &record.views[0];
    let meta = SceneMeta {
        scene_id: record.scene.scene_id,
        seed: record.scene.seed,
        surfaces: record.scene.surfaces.clone(),
        sources: record.scene.sources.clone(),
        poses: record.views.iter().map(|v| (&v.pose).into()).collect(),
        mic_channels: v0.audio.len(),
        samples: v0.audio.first().map_or(0, |c| c.len()),
        depth_size: [v0.depth.height, v0.depth.width],
        appearance_dim: v0.appearance.channels,
        appearance_grid: v0.appearance.grid_h,
        appearance_scale: v0.appearance.pixel_to_grid_scale,
    };
    let file = File::create(dir.join("scene.json"))?;
    serde_json::to_writer_pretty(BufWriter::new(file), &meta)?;
    for (i, view) in record.views.iter().enumerate() {
        let mut audio = Vec::with_capacity(meta.mic_channels * meta.samples);
        for ch in &view.audio {
            if ch.len() != meta.samples {
                return Err(Error::Invalid("save_scene_record: ragged audio channels".into()));
            }
            audio.extend_from_slice(ch);
        }
        write_blob(&dir.join(format!("audio_v{i}.f64")), &audio)?;
        write_blob(&dir.join(format!("depth_v{i}.f64")), &view.depth.data)?;
        write_blob(&dir.join(format!("appearance_v{i}.f64")), &view.appearance.values)?;
    }
    Ok(())
}

pub fn load_scene_record(dir: &Path) -> Result<SceneRecord> {
    let meta_path = dir.join("scene.json");
    let file = File::open(&meta_path).map_err(|e| Error::Data(format!("{}: {e}", meta_path.display())))?;
    let meta: SceneMeta = serde_json::from_reader(BufReader::new(file))?;
    let scene = AcousticScene {
        scene_id: meta.scene_id,
        seed: meta.seed,
        surfaces: meta.surfaces.clone(),
        sources: meta.sources.clone(),
    };
    let [h, w] = meta.depth_size;
    let mut views = Vec::with_capacity(meta.poses.len());
    for (i, pose_json) in meta.poses.iter().enumerate() {
        let flat = read_blob(&dir.join(format!("audio_v{i}.f64")), meta.mic_channels * meta.samples)?;
        let audio = flat.chunks(meta.samples).map(|c| c.to_vec()).collect();
        let depth = DepthMap {
            width: w,
            height: h,
            data: read_blob(&dir.join(format!("depth_v{i}.f64")), h * w)?,
        };
        let g = meta.appearance_grid;
        let appearance = FeatureMap {
            channels: meta.appearance_dim,
            grid_h: g,
            grid_w: g,
            pixel_to_grid_scale: meta.appearance_scale,
            values: read_blob(&dir.join(format!("appearance_v{i}.f64")), meta.appearance_dim * g * g)?,
        };
        views.push(ViewRecording {
            pose: RigidTransform::from(pose_json),
            audio,
            depth,
            appearance,
        });
    }
    Ok(SceneRecord { scene, views })
}
