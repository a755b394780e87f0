//! Synthetic acoustic-scene generator: source placement on planar surfaces,
//! camera/mic-rig placement, depth and appearance rendering, and multichannel
//! audio synthesis with fractional propagation delays.
//!
//! Everything here is a pure function of (config, seed); the per-scene seed is
//! derived from the dataset master seed by the caller.

pub mod io;

use crate::error::{Error, Result};
use crate::geometry::{
    pixel_ray_dir, project, ray_patch_intersect, FeatureMap, Intrinsics, RigidTransform, SurfacePatch, Vec3,
};
use crate::rng::{self, stream};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

pub const SPEED_OF_SOUND: f64 = 343.0;

/// A sound source resting on a scene surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoundSource {
    pub position: [f64; 3],
    pub class_id: usize,
}

impl SoundSource {
    pub fn position_v(&self) -> Vec3 {
        Vec3::new(self.position[0], self.position[1], self.position[2])
    }
}

/// Scene geometry plus the sources placed on it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AcousticScene {
    pub scene_id: u64,
    pub seed: u64,
    pub surfaces: Vec<SurfacePatch>,
    pub sources: Vec<SoundSource>,
}

impl AcousticScene {
    pub fn source_centroid(&self) -> Vec3 {
        let mut c = Vec3::zeros();
        for s in &self.sources {
            c += s.position_v();
        }
        c / self.sources.len().max(1) as f64
    }

    /// Mean of the authored surface normals (u×v orientation), pointing into
    /// the open half-space cameras occupy.
    pub fn mean_surface_normal(&self) -> Vec3 {
        let mut n = Vec3::zeros();
        for s in &self.surfaces {
            n += s.normal();
        }
        if n.norm() < 1e-9 {
            Vec3::new(0.0, -1.0, 0.0)
        } else {
            n.normalize()
        }
    }
}

/// Microphone offsets in the camera frame (z = 0 plane of the image sensor).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicRig {
    pub offsets: Vec<[f64; 3]>,
}

impl MicRig {
    /// Four mics at the corners of a 10 cm square, coplanar with the image
    /// plane.
    pub fn square_default() -> Self {
        let h = 0.05;
        Self {
            offsets: vec![[-h, -h, 0.0], [h, -h, 0.0], [h, h, 0.0], [-h, h, 0.0]],
        }
    }

    /// `count` mics evenly spaced on a circle of radius 9 cm in the image
    /// plane.
    pub fn circle(count: usize) -> Result<Self> {
        if count < 4 {
            return Err(Error::Config(format!("mic rig needs ≥ 4 mics, got {count}")));
        }
        let r = 0.09;
        let offsets = (0..count)
            .map(|i| {
                let a = 2.0 * std::f64::consts::PI * i as f64 / count as f64;
                [r * a.cos(), r * a.sin(), 0.0]
            })
            .collect();
        Ok(Self { offsets })
    }

    pub fn count(&self) -> usize {
        self.offsets.len()
    }

    /// Mic positions in the world frame for a camera pose.
    pub fn world_positions(&self, pose: &RigidTransform) -> Vec<Vec3> {
        self.offsets
            .iter()
            .map(|o| pose.apply(&Vec3::new(o[0], o[1], o[2])))
            .collect()
    }
}

/// Depth image in meters; pixels whose ray hits nothing hold +∞.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl DepthMap {
    #[inline]
    pub fn at(&self, px: usize, py: usize) -> f64 {
        self.data[py * self.width + px]
    }
}

/// Fixed random Fourier frequencies shared by every view of a dataset; world
/// surface points map to `[sin(F·w); cos(F·w)]`, so the same point renders to
/// identical features in every view.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AppearanceFieldSpec {
    pub feature_dim: usize,
    pub freq_scale: f64,
    pub seed: u64,
    pub frequencies: Vec<[f64; 3]>,
}

impl AppearanceFieldSpec {
    /// Draw `feature_dim/2` Gaussian frequency rows (rad/m). The default
    /// scale 1.5 rad/m decorrelates features over ~0.3 m displacements while
    /// keeping bilinear-grid discretization error small.
    pub fn generate(feature_dim: usize, freq_scale: f64, seed: u64) -> Result<Self> {
        if feature_dim == 0 || feature_dim % 2 != 0 {
            return Err(Error::Config(format!("appearance feature_dim must be positive and even, got {feature_dim}")));
        }
        let mut rng = rng::rng_for(seed, stream::APPEARANCE_FIELD);
        let normal = Normal::new(0.0, freq_scale).map_err(|e| Error::Config(e.to_string()))?;
        let frequencies = (0..feature_dim / 2)
            .map(|_| {
                [
                    normal.sample(&mut rng),
                    normal.sample(&mut rng),
                    normal.sample(&mut rng),
                ]
            })
            .collect();
        Ok(Self {
            feature_dim,
            freq_scale,
            seed,
            frequencies,
        })
    }

    /// Feature of a world point: `[sin(F·w); cos(F·w)]`.
    pub fn encode(&self, w: &Vec3) -> Vec<f64> {
        let half = self.feature_dim / 2;
        let mut out = vec![0.0; self.feature_dim];
        for (i, f) in self.frequencies.iter().enumerate() {
            let phase = f[0] * w.x + f[1] * w.y + f[2] * w.z;
            out[i] = phase.sin();
            out[half + i] = phase.cos();
        }
        out
    }
}

/// Source-placement configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub class_count: usize,
    pub source_count_min: usize,
    pub source_count_max: usize,
    pub surfaces: Vec<SurfacePatch>,
    pub min_spacing: f64,
    pub max_attempts: usize,
}

impl SceneConfig {
    /// Single vertical 4 m × 3 m wall, up to ten sources of five classes.
    pub fn paper() -> Self {
        Self {
            class_count: 5,
            source_count_min: 1,
            source_count_max: 10,
            surfaces: vec![wall_patch(4.0, 3.0)],
            min_spacing: 0.3,
            max_attempts: 1000,
        }
    }

    /// Smaller wall, two classes, at most two sources.
    pub fn desk() -> Self {
        Self {
            class_count: 2,
            source_count_min: 1,
            source_count_max: 2,
            surfaces: vec![wall_patch(3.0, 2.0)],
            min_spacing: 0.3,
            max_attempts: 1000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_count == 0 {
            return Err(Error::Config("scene: class_count must be ≥ 1".into()));
        }
        if self.source_count_min < 1 || self.source_count_max > 10 || self.source_count_min > self.source_count_max {
            return Err(Error::Config(format!(
                "scene: source count range [{}, {}] must lie within [1, 10]",
                self.source_count_min, self.source_count_max
            )));
        }
        if self.surfaces.is_empty() {
            return Err(Error::Config("scene: at least one surface".into()));
        }
        for s in &self.surfaces {
            s.validate()?;
        }
        Ok(())
    }
}

/// Vertical wall centered at the origin in the x–z plane: u along +x, v along
/// +z (up), authored normal −y (cameras sit at negative y). Keeping walls
/// vertical keeps camera pitch far from ±90°, where ZYX Euler extraction used
/// by pose perturbation degenerates.
pub fn wall_patch(width: f64, height: f64) -> SurfacePatch {
    SurfacePatch {
        origin: [-width / 2.0, 0.0, -height / 2.0],
        edge_u: [1.0, 0.0, 0.0],
        edge_v: [0.0, 0.0, 1.0],
        extent_u: width,
        extent_v: height,
    }
}

/// Camera/view configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewConfig {
    pub n_views: usize,
    pub image_size: usize,
    pub appearance_grid: usize,
    pub appearance_dim: usize,
    pub appearance_freq_scale: f64,
    pub duration: f64,
    pub fs: f64,
    pub cam_distance_min: f64,
    pub cam_distance_max: f64,
    pub cam_cone_deg: f64,
    pub mic_rig: MicRig,
}

impl ViewConfig {
    pub fn paper() -> Self {
        Self {
            n_views: 4,
            image_size: 256,
            appearance_grid: 64,
            appearance_dim: 256,
            appearance_freq_scale: 1.5,
            duration: 1.0,
            fs: 21000.0,
            cam_distance_min: 2.7,
            cam_distance_max: 3.3,
            cam_cone_deg: 30.0,
            mic_rig: MicRig::square_default(),
        }
    }

    pub fn desk() -> Self {
        Self {
            n_views: 2,
            image_size: 64,
            appearance_grid: 32,
            appearance_dim: 32,
            appearance_freq_scale: 1.5,
            duration: 0.25,
            fs: 21000.0,
            cam_distance_min: 2.7,
            cam_distance_max: 3.3,
            cam_cone_deg: 30.0,
            mic_rig: MicRig::square_default(),
        }
    }

    pub fn intrinsics(&self) -> Intrinsics {
        Intrinsics::square_fov90(self.image_size)
    }

    pub fn samples(&self) -> usize {
        (self.fs * self.duration).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_views == 0 {
            return Err(Error::Config("view: n_views must be ≥ 1".into()));
        }
        if self.image_size == 0 || self.appearance_grid == 0 || self.image_size % self.appearance_grid != 0 {
            return Err(Error::Config(format!(
                "view: appearance grid {} must divide image size {}",
                self.appearance_grid, self.image_size
            )));
        }
        if self.appearance_dim == 0 || self.appearance_dim % 2 != 0 {
            return Err(Error::Config("view: appearance_dim must be even".into()));
        }
        if self.mic_rig.count() < 4 {
            return Err(Error::Config("view: mic rig needs ≥ 4 mics".into()));
        }
        if !(self.duration > 0.0 && self.fs > 0.0) {
            return Err(Error::Config("view: duration and fs must be positive".into()));
        }
        if !(self.cam_distance_min > 0.0 && self.cam_distance_min <= self.cam_distance_max) {
            return Err(Error::Config("view: bad camera distance range".into()));
        }
        Ok(())
    }
}

/// Everything rendered for one view.
#[derive(Debug, Clone)]
pub struct ViewRecording {
    pub pose: RigidTransform,
    pub audio: Vec<Vec<f64>>,
    pub depth: DepthMap,
    pub appearance: FeatureMap,
}

/// Place sources uniformly on the surfaces (area-weighted) by rejection until
/// they respect `min_spacing`.
pub fn generate_scene(cfg: &SceneConfig, scene_id: u64, seed: u64) -> Result<AcousticScene> {
    cfg.validate()?;
    let mut rng = rng::rng_for(seed, stream::SCENE_LAYOUT);
    let count = rng.gen_range(cfg.source_count_min..=cfg.source_count_max);
    let areas: Vec<f64> = cfg.surfaces.iter().map(|s| s.extent_u * s.extent_v).collect();
    let total_area: f64 = areas.iter().sum();
    let mut sources: Vec<SoundSource> = Vec::with_capacity(count);
    let mut attempts = 0;
    while sources.len() < count {
        if attempts >= cfg.max_attempts {
            return Err(Error::Placement {
                wanted: count,
                spacing: cfg.min_spacing,
                attempts,
            });
        }
        attempts += 1;
        let mut pick = rng.gen_range(0.0..total_area);
        let mut si = 0;
        for (i, a) in areas.iter().enumerate() {
            if pick < *a {
                si = i;
                break;
            }
            pick -= a;
        }
        let patch = &cfg.surfaces[si];
        let u = rng.gen_range(0.0..patch.extent_u);
        let v = rng.gen_range(0.0..patch.extent_v);
        let p = patch.point_at(u, v);
        let class_id = rng.gen_range(0..cfg.class_count);
        if sources
            .iter()
            .all(|s| (s.position_v() - p).norm() >= cfg.min_spacing)
        {
            sources.push(SoundSource {
                position: [p.x, p.y, p.z],
                class_id,
            });
        }
    }
    Ok(AcousticScene {
        scene_id,
        seed,
        surfaces: cfg.surfaces.clone(),
        sources,
    })
}

/// Sample camera poses looking at the source centroid from [distance_min,
/// distance_max] meters, directions drawn uniformly in a cone around the mean
/// surface normal. Every source must project validly in every view; a view
/// that fails is redrawn up to `max_tries` times.
pub fn place_cameras(scene: &AcousticScene, view_cfg: &ViewConfig, seed: u64) -> Result<Vec<RigidTransform>> {
    view_cfg.validate()?;
    let mut rng = rng::rng_for(seed, stream::CAMERA_POSE);
    let centroid = scene.source_centroid();
    let axis = scene.mean_surface_normal();
    let k = view_cfg.intrinsics();
    let cone_cos = view_cfg.cam_cone_deg.to_radians().cos();
    let (e1, e2) = orthonormal_basis(&axis);
    let max_tries = 1000;
    let mut poses = Vec::with_capacity(view_cfg.n_views);
    for view in 0..view_cfg.n_views {
        let mut placed = false;
        for _ in 0..max_tries {
            let dist = rng.gen_range(view_cfg.cam_distance_min..view_cfg.cam_distance_max);
            let phi = rng.gen_range(0.0..2.0 * std::f64::consts::PI);
            let cos_t = rng.gen_range(cone_cos..=1.0);
            let sin_t = (1.0 - cos_t * cos_t).max(0.0).sqrt();
            let dir = axis * cos_t + e1 * (sin_t * phi.cos()) + e2 * (sin_t * phi.sin());
            let eye = centroid + dir * dist;
            let pose = RigidTransform::look_at(&eye, &centroid, &Vec3::new(0.0, 0.0, 1.0))?;
            let w2c = pose.inverse();
            let all_visible = scene
                .sources
                .iter()
                .all(|s| project(&k, &w2c.apply(&s.position_v())).valid);
            if all_visible {
                poses.push(pose);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Placement {
                wanted: view_cfg.n_views,
                spacing: 0.0,
                attempts: max_tries * (view + 1),
            });
        }
    }
    Ok(poses)
}

fn orthonormal_basis(axis: &Vec3) -> (Vec3, Vec3) {
    let helper = if axis.x.abs() < 0.9 {
        Vec3::new(1.0, 0.0, 0.0)
    } else {
        Vec3::new(0.0, 1.0, 0.0)
    };
    let e1 = axis.cross(&helper).normalize();
    let e2 = axis.cross(&e1);
    (e1, e2)
}

/// Ray-cast z-depth against every surface patch; +∞ where nothing is hit.
/// Rays pass through pixel centers (index + 0.5).
pub fn render_depth(scene: &AcousticScene, pose: &RigidTransform, k: &Intrinsics) -> DepthMap {
    let mut data = vec![f64::INFINITY; k.width * k.height];
    let origin = pose.translation;
    for py in 0..k.height {
        for px in 0..k.width {
            let dir_cam = pixel_ray_dir(k, px as f64 + 0.5, py as f64 + 0.5);
            let dir_world = pose.apply_dir(&dir_cam);
            let mut best = f64::INFINITY;
            for patch in &scene.surfaces {
                if let Some((t, _, _)) = ray_patch_intersect(&origin, &dir_world, patch) {
                    // dir_cam is unit, so camera z-depth = t · dir_cam.z
                    best = best.min(t * dir_cam.z);
                }
            }
            data[py * k.width + px] = best;
        }
    }
    DepthMap {
        width: k.width,
        height: k.height,
        data,
    }
}

/// Render the appearance grid for one view: each cell's center pixel ray is
/// cast; hits are encoded with the shared field, misses stay zero.
pub fn render_appearance(
    scene: &AcousticScene,
    pose: &RigidTransform,
    k: &Intrinsics,
    field: &AppearanceFieldSpec,
    grid: usize,
) -> FeatureMap {
    let scale = k.width as f64 / grid as f64;
    let mut map = FeatureMap::zeros(field.feature_dim, grid, grid, scale);
    let origin = pose.translation;
    for gy in 0..grid {
        for gx in 0..grid {
            let px = (gx as f64 + 0.5) * scale;
            let py = (gy as f64 + 0.5) * scale;
            let dir_cam = pixel_ray_dir(k, px, py);
            let dir_world = pose.apply_dir(&dir_cam);
            let mut best: Option<(f64, Vec3)> = None;
            for patch in &scene.surfaces {
                if let Some((t, _, _)) = ray_patch_intersect(&origin, &dir_world, patch) {
                    if best.map_or(true, |(bt, _)| t < bt) {
                        best = Some((t, origin + dir_world * t));
                    }
                }
            }
            if let Some((_, w)) = best {
                let feat = field.encode(&w);
                for (c, &v) in feat.iter().enumerate() {
                    *map.at_mut(c, gy, gx) = v;
                }
            }
        }
    }
    map
}

/// Deterministic class signature: an amplitude-modulated two-harmonic tone
/// (carrier 400·(class+1) Hz, AM rate 3+2·class Hz) over a quiet broadband
/// bed. The bed's spectrum is shaped ∝ 1/√(700+f) — flat per mel band — so
/// GCC-PHAT gets full-band phase without correlating the log-mel signatures
/// of different classes. Peak amplitude 1.0.
pub fn class_waveform(class_id: usize, duration: f64, fs: f64, seed: u64) -> Vec<f64> {
    let n = (duration * fs).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(rng::splitmix64(
        rng::derive_seed(seed, stream::WAVEFORM) ^ class_id as u64,
    ));
    let fc = 400.0 * (class_id + 1) as f64;
    let fam = 3.0 + 2.0 * class_id as f64;
    let phase: f64 = rng.gen_range(0.0..2.0 * std::f64::consts::PI);
    let tau = 2.0 * std::f64::consts::PI;
    let mut s: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / fs;
            let env = 0.5 * (1.0 + (tau * fam * t).sin());
            env * ((tau * fc * t + phase).sin() + 0.5 * (tau * 2.0 * fc * t + 2.0 * phase).sin())
        })
        .collect();

    // broadband bed, synthesized in the frequency domain
    let mut spec = vec![Complex64::new(0.0, 0.0); n];
    let half = n / 2;
    for k in 1..=half {
        let f = k as f64 * fs / n as f64;
        let mag = 1.0 / (700.0 + f).sqrt();
        if k == half && n % 2 == 0 {
            spec[k] = Complex64::new(mag, 0.0);
        } else {
            let th: f64 = rng.gen_range(0.0..tau);
            spec[k] = Complex64::from_polar(mag, th);
            spec[n - k] = spec[k].conj();
        }
    }
    let mut planner = FftPlanner::new();
    planner.plan_fft_inverse(n).process(&mut spec);
    let mut noise: Vec<f64> = spec.iter().map(|c| c.re / n as f64).collect();
    let rms = (noise.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    if rms > 0.0 {
        for v in &mut noise {
            *v /= rms;
        }
    }
    for (sv, nv) in s.iter_mut().zip(&noise) {
        *sv += 0.2 * nv;
    }
    let peak = s.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if peak > 0.0 {
        for v in &mut s {
            *v /= peak;
        }
    }
    s
}

/// Seed for the waveform of source `idx` in a scene. The offset keeps the
/// per-source labels clear of the stage stream ids.
pub fn source_waveform_seed(scene_seed: u64, idx: usize) -> u64 {
    rng::derive_seed(scene_seed, 0x100 + idx as u64)
}

/// One source's contribution at one mic: the waveform attenuated by
/// 1/max(r, 0.1 m) and delayed by r/c seconds with linear interpolation
/// between samples.
pub fn propagate_waveform(wav: &[f64], src: &Vec3, mic: &Vec3, n: usize, fs: f64) -> Vec<f64> {
    let r = (src - mic).norm();
    let gain = 1.0 / r.max(0.1);
    let delay = r / SPEED_OF_SOUND * fs;
    let d0 = delay.floor() as usize;
    let frac = delay - d0 as f64;
    let mut out = vec![0.0f64; n];
    for (i, o) in out.iter_mut().enumerate().skip(d0) {
        // o = gain · wav(i − delay), lerped between wav[i−d0−1] and wav[i−d0]
        let j = i - d0;
        let a = if j < wav.len() { wav[j] } else { 0.0 };
        let b = if j >= 1 && j - 1 < wav.len() { wav[j - 1] } else { 0.0 };
        *o = gain * ((1.0 - frac) * a + frac * b);
    }
    out
}

/// Sum every source's propagated waveform into every mic channel, then
/// optionally add white Gaussian noise at the requested SNR (relative to the
/// summed clean signal power). The clean part is an exact superposition of
/// per-source [`propagate_waveform`] outputs.
pub fn render_audio(
    scene: &AcousticScene,
    mic_world: &[Vec3],
    duration: f64,
    fs: f64,
    snr_db: Option<f64>,
) -> Result<Vec<Vec<f64>>> {
    if mic_world.len() < 4 {
        return Err(Error::Invalid(format!("render_audio: need ≥ 4 mics, got {}", mic_world.len())));
    }
    let n = (duration * fs).round() as usize;
    let mut channels = vec![vec![0.0f64; n]; mic_world.len()];
    for (src_idx, src) in scene.sources.iter().enumerate() {
        let wav = class_waveform(
            src.class_id,
            duration,
            fs,
            source_waveform_seed(scene.seed, src_idx),
        );
        let pos = src.position_v();
        for (ch, mic) in channels.iter_mut().zip(mic_world) {
            let contrib = propagate_waveform(&wav, &pos, mic, n, fs);
            for (c, v) in ch.iter_mut().zip(&contrib) {
                *c += v;
            }
        }
    }
    if let Some(snr) = snr_db {
        add_noise_snr(&mut channels, snr, rng::derive_seed(scene.seed, stream::AUDIO_NOISE))?;
    }
    Ok(channels)
}

/// Add white Gaussian noise so that 10·log10(P_signal/P_noise) = snr_db.
/// Infinite SNR leaves the audio untouched (bit-identical).
pub fn add_noise_snr(channels: &mut [Vec<f64>], snr_db: f64, seed: u64) -> Result<()> {
    if snr_db.is_infinite() && snr_db > 0.0 {
        return Ok(());
    }
    if snr_db.is_nan() {
        return Err(Error::Invalid("snr_db is NaN".into()));
    }
    let total: usize = channels.iter().map(|c| c.len()).sum();
    if total == 0 {
        return Ok(());
    }
    let p_signal: f64 = channels.iter().flat_map(|c| c.iter()).map(|v| v * v).sum::<f64>() / total as f64;
    let p_noise = p_signal / 10f64.powf(snr_db / 10.0);
    let sigma = p_noise.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).map_err(|e| Error::Invalid(e.to_string()))?;
    for ch in channels.iter_mut() {
        for v in ch.iter_mut() {
            *v += sigma * normal.sample(&mut rng);
        }
    }
    Ok(())
}

/// Perturb each pose's ZYX Euler angles by independent N(0, delta) radians;
/// translations are untouched. delta = 0 returns the input poses unchanged.
pub fn perturb_poses(poses: &[RigidTransform], delta: f64, seed: u64) -> Result<Vec<RigidTransform>> {
    if delta < 0.0 {
        return Err(Error::Invalid(format!("perturb_poses: delta must be ≥ 0, got {delta}")));
    }
    if delta == 0.0 {
        return Ok(poses.to_vec());
    }
    let mut rng = rng::rng_for(seed, stream::POSE_PERTURB);
    let normal = Normal::new(0.0, delta).map_err(|e| Error::Invalid(e.to_string()))?;
    Ok(poses
        .iter()
        .map(|p| {
            let (roll, pitch, yaw) = p.euler_zyx();
            RigidTransform::from_euler_zyx(
                roll + normal.sample(&mut rng),
                pitch + normal.sample(&mut rng),
                yaw + normal.sample(&mut rng),
                p.translation,
            )
        })
        .collect())
}

/// Render all views of a scene: poses, audio, depth, appearance.
pub fn render_views(
    scene: &AcousticScene,
    view_cfg: &ViewConfig,
    field: &AppearanceFieldSpec,
    snr_db: Option<f64>,
) -> Result<Vec<ViewRecording>> {
    let poses = place_cameras(scene, view_cfg, scene.seed)?;
    let k = view_cfg.intrinsics();
    poses
        .into_iter()
        .map(|pose| {
            let mics = view_cfg.mic_rig.world_positions(&pose);
            let audio = render_audio(scene, &mics, view_cfg.duration, view_cfg.fs, snr_db)?;
            let depth = render_depth(scene, &pose, &k);
            let appearance = render_appearance(scene, &pose, &k, field, view_cfg.appearance_grid);
            Ok(ViewRecording {
                pose,
                audio,
                depth,
                appearance,
            })
        })
        .collect()
}
