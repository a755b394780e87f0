//! Run drivers shared by the command-line interface and the end-to-end tests:
//! dataset generation, the optimizer loop with its JSON-lines log and rolling
//! checkpoints, and checkpoint-based evaluation with optional noise injection.

use crate::autodiff::{load_checkpoint, save_checkpoint, AdamWConfig, ParameterStore, Tape, Tensor};
use crate::config::{ExperimentConfig, NoiseConfig, Variant};
use crate::dsp::build_input_feature;
use crate::error::{Error, Result};
use crate::eval::{extract_predictions, EvalGroundTruth, EvalTally, MetricsReport, DEFAULT_THRESHOLDS};
use crate::losses::{total_loss, LossBreakdown, PredictedSet, SceneGroundTruth, ViewLossInput};
use crate::model::{forward_scene, init_params, ViewInput};
use crate::rng::{derive_seed, rng_for, stream};
use crate::scene::io::{
    load_manifest, load_scene_record, save_manifest, save_scene_record, split_dirs, DatasetManifest, SceneRecord,
};
use crate::scene::{add_noise_snr, generate_scene, perturb_poses, render_views, AcousticScene, AppearanceFieldSpec,
    ViewRecording};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

/// Stable per-scene seed: master seed, split name, and index in the split.
pub fn scene_seed(master: u64, split: &str, idx: usize) -> u64 {
    // FNV-1a over the split name gives the stream label
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in split.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    derive_seed(derive_seed(master, h), idx as u64)
}

fn scene_name(split: &str, idx: usize) -> String {
    format!("{split}_{idx:04}")
}

/// Run `job` for every index in `0..n` on up to `threads` workers and return
/// the results in index order. Worker `w` takes indices `w, w+threads, …`, so
/// the partition is fixed and the collected output does not depend on timing;
/// one thread degenerates to a plain loop on the caller's stack.
fn par_map<T, F>(n: usize, threads: usize, job: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    let workers = threads.clamp(1, n.max(1));
    if workers == 1 {
        return (0..n).map(job).collect();
    }
    let mut slots: Vec<Option<T>> = std::iter::repeat_with(|| None).take(n).collect();
    let locals: Vec<Result<Vec<(usize, T)>>> = std::thread::scope(|scope| {
        let job = &job;
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                scope.spawn(move || {
                    let mut local = Vec::new();
                    let mut idx = w;
                    while idx < n {
                        local.push((idx, job(idx)?));
                        idx += workers;
                    }
                    Ok(local)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker thread panicked"))
            .collect()
    });
    for local in locals {
        for (idx, value) in local? {
            slots[idx] = Some(value);
        }
    }
    Ok(slots
        .into_iter()
        .map(|s| s.expect("every index visited"))
        .collect())
}

/// Generate `n_scenes` scenes of one split into `out`. A fresh directory gets
/// a new manifest; an existing dataset with the same config hash gains the new
/// split. Regenerating an existing split, or writing into a directory made by
/// a different config, needs `force` (which starts that manifest over).
pub fn generate_dataset(
    cfg: &ExperimentConfig,
    out: &Path,
    split: &str,
    n_scenes: usize,
    force: bool,
    threads: usize,
) -> Result<DatasetManifest> {
    cfg.validate()?;
    if n_scenes == 0 {
        return Err(Error::Config("gen-data: need at least one scene".into()));
    }
    if split.is_empty() || !split.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
        return Err(Error::Config(format!("gen-data: bad split name {split:?}")));
    }
    let hash = cfg.hash()?;
    let master = cfg.train.master_seed;

    let manifest_path = out.join("dataset.json");
    let mut manifest = if manifest_path.exists() {
        let existing = load_manifest(out)?;
        let compatible = existing.config_hash == hash;
        if !force {
            if !compatible {
                return Err(Error::Data(format!(
                    "dataset at {} was generated from a different config (hash {} vs {}); pass --force to start over",
                    out.display(),
                    existing.config_hash,
                    hash
                )));
            }
            if existing.splits.contains_key(split) {
                return Err(Error::Data(format!(
                    "dataset at {} already has split {split:?}; pass --force to regenerate",
                    out.display()
                )));
            }
            existing
        } else if compatible {
            existing
        } else {
            fresh_manifest(cfg, &hash)?
        }
    } else {
        if out.exists() && std::fs::read_dir(out)?.next().is_some() {
            return Err(Error::Data(format!(
                "output directory {} is not empty and holds no dataset manifest",
                out.display()
            )));
        }
        fresh_manifest(cfg, &hash)?
    };

    let field = &manifest.field;
    let names = par_map(n_scenes, threads, |idx| {
        let seed = scene_seed(master, split, idx);
        let scene = generate_scene(&cfg.scene, idx as u64, seed)?;
        let views = render_views(&scene, &cfg.view, field, None)?;
        let name = scene_name(split, idx);
        save_scene_record(&out.join("scenes").join(&name), &SceneRecord { scene, views })?;
        Ok(name)
    })?;
    manifest.splits.insert(split.to_string(), names);
    save_manifest(out, &manifest)?;
    Ok(manifest)
}

fn fresh_manifest(cfg: &ExperimentConfig, hash: &str) -> Result<DatasetManifest> {
    Ok(DatasetManifest {
        config: cfg.to_json()?,
        config_hash: hash.to_string(),
        master_seed: cfg.train.master_seed,
        class_count: cfg.scene.class_count,
        field: AppearanceFieldSpec::generate(
            cfg.view.appearance_dim,
            cfg.view.appearance_freq_scale,
            cfg.train.master_seed,
        )?,
        splits: BTreeMap::new(),
    })
}

/// One scene ready for the network: rendered views (noise already applied)
/// plus the per-view input feature tensors.
pub struct LoadedScene {
    pub name: String,
    pub scene: AcousticScene,
    pub views: Vec<ViewRecording>,
    pub features: Vec<Tensor>,
}

impl LoadedScene {
    pub fn ground_truths(&self) -> Vec<SceneGroundTruth> {
        self.scene
            .sources
            .iter()
            .map(|s| SceneGroundTruth {
                position: s.position_v(),
                class_id: s.class_id,
            })
            .collect()
    }

    pub fn eval_ground_truths(&self) -> Vec<EvalGroundTruth> {
        self.scene
            .sources
            .iter()
            .map(|s| EvalGroundTruth {
                position: s.position,
                class_id: s.class_id,
            })
            .collect()
    }
}

/// The dataset must have been rendered by a config whose scene, view, and DSP
/// sections match the one now in use; the model and optimizer sections may
/// differ freely.
fn check_dataset_compat(cfg: &ExperimentConfig, manifest: &DatasetManifest) -> Result<()> {
    let gen_cfg: ExperimentConfig = serde_json::from_value(manifest.config.clone())
        .map_err(|e| Error::Data(format!("dataset manifest carries an unreadable config: {e}")))?;
    let mut mismatches = Vec::new();
    if gen_cfg.scene != cfg.scene {
        mismatches.push("scene");
    }
    if gen_cfg.view != cfg.view {
        mismatches.push("view");
    }
    if gen_cfg.dsp != cfg.dsp {
        mismatches.push("dsp");
    }
    if mismatches.is_empty() {
        Ok(())
    } else {
        Err(Error::Data(format!(
            "dataset was generated with different {} settings than the supplied config",
            mismatches.join(", ")
        )))
    }
}

/// Load one split, apply the requested noise, and precompute input features.
pub fn load_split(
    data_root: &Path,
    split: &str,
    cfg: &ExperimentConfig,
    noise: &NoiseConfig,
    threads: usize,
) -> Result<Vec<LoadedScene>> {
    let manifest = load_manifest(data_root)?;
    check_dataset_compat(cfg, &manifest)?;
    let dirs = split_dirs(data_root, &manifest, split)?;
    let names = manifest.splits.get(split).cloned().unwrap_or_default();
    par_map(dirs.len(), threads, |i| {
        let mut record = load_scene_record(&dirs[i])?;
        if let Some(snr) = noise.snr_db {
            for (vi, view) in record.views.iter_mut().enumerate() {
                let seed = derive_seed(derive_seed(record.scene.seed, stream::AUDIO_NOISE), vi as u64);
                add_noise_snr(&mut view.audio, snr, seed)?;
            }
        }
        if let Some(delta) = noise.pose_delta {
            let poses: Vec<_> = record.views.iter().map(|v| v.pose).collect();
            let perturbed = perturb_poses(&poses, delta, record.scene.seed)?;
            for (view, pose) in record.views.iter_mut().zip(perturbed) {
                view.pose = pose;
            }
        }
        let features = record
            .views
            .iter()
            .map(|v| build_input_feature(&v.audio, &cfg.dsp))
            .collect::<Result<Vec<_>>>()?;
        Ok(LoadedScene {
            name: names[i].clone(),
            scene: record.scene,
            views: record.views,
            features,
        })
    })
}

/// Model parameters plus progress through the schedule.
pub struct TrainState {
    pub cfg: ExperimentConfig,
    pub store: ParameterStore,
    pub step: usize,
}

pub fn init_state(cfg: &ExperimentConfig) -> Result<TrainState> {
    cfg.validate()?;
    let mut store = ParameterStore::new();
    let mut rng = rng_for(cfg.train.master_seed, stream::MODEL_INIT);
    init_params(&mut store, &cfg.model, &mut rng)?;
    Ok(TrainState {
        cfg: cfg.clone(),
        store,
        step: 0,
    })
}

/// Forward one scene and build the full objective on the same tape.
fn scene_objective(
    tape: &mut Tape,
    cfg: &ExperimentConfig,
    store: &ParameterStore,
    ls: &LoadedScene,
) -> Result<(crate::autodiff::Var, LossBreakdown)> {
    let intrinsics = cfg.view.intrinsics();
    let views: Vec<ViewInput> = ls
        .views
        .iter()
        .zip(&ls.features)
        .map(|(v, f)| ViewInput {
            feature: f.clone(),
            pose: v.pose,
            appearance: &v.appearance,
        })
        .collect();
    let outputs = forward_scene(tape, store, &cfg.model, &views, &intrinsics)?;
    let initial: Vec<PredictedSet> = outputs
        .iter()
        .map(|o| PredictedSet {
            positions: o.initial.positions,
            logits: o.initial.logits,
        })
        .collect();
    let updated: Vec<PredictedSet> = outputs
        .iter()
        .map(|o| PredictedSet {
            positions: o.updated.positions,
            logits: o.updated.logits,
        })
        .collect();
    let loss_views: Vec<ViewLossInput> = ls
        .views
        .iter()
        .map(|v| ViewLossInput {
            pose: v.pose,
            intrinsics,
            depth: &v.depth,
        })
        .collect();
    total_loss(tape, &initial, &updated, &loss_views, &ls.ground_truths(), &cfg.loss)
}

/// One optimizer step: round-robin through `scenes`, averaging gradients over
/// `grad_accum` consecutive scenes. Returns the averaged loss breakdown.
pub fn train_step(state: &mut TrainState, scenes: &[LoadedScene]) -> Result<LossBreakdown> {
    if scenes.is_empty() {
        return Err(Error::Data("train: empty training split".into()));
    }
    let accum = state.cfg.train.grad_accum;
    let mut grad_sum: BTreeMap<String, Tensor> = BTreeMap::new();
    let mut sums = [0.0f64; 4];
    let mut breakdown = None;
    for a in 0..accum {
        let ls = &scenes[(state.step * accum + a) % scenes.len()];
        let mut tape = Tape::new();
        let (loss, bd) = scene_objective(&mut tape, &state.cfg, &state.store, ls)?;
        if !bd.total.is_finite() {
            return Err(Error::Numeric(format!(
                "train: non-finite loss {} at step {} on scene {}",
                bd.total, state.step, ls.name
            )));
        }
        let grads = tape.backward(loss)?;
        for (name, g) in tape.named_grads(&grads) {
            grad_sum
                .entry(name)
                .and_modify(|acc| acc.add_assign(&g))
                .or_insert(g);
        }
        sums[0] += bd.l_bm;
        sums[1] += bd.l_depth;
        sums[2] += bd.l_crossview;
        sums[3] += bd.total;
        breakdown = Some(bd);
    }
    if accum > 1 {
        let inv = 1.0 / accum as f64;
        for g in grad_sum.values_mut() {
            for x in g.data_mut() {
                *x *= inv;
            }
        }
    }
    let opt = AdamWConfig {
        lr: state.cfg.train.lr,
        weight_decay: state.cfg.train.weight_decay,
        ..Default::default()
    };
    state.store.adamw_step(&grad_sum, &opt)?;
    state.step += 1;

    let mut bd = breakdown.expect("accum ≥ 1");
    let inv = 1.0 / accum as f64;
    bd.l_bm = sums[0] * inv;
    bd.l_depth = sums[1] * inv;
    bd.l_crossview = sums[2] * inv;
    bd.total = sums[3] * inv;
    Ok(bd)
}

/// Everything a checkpoint needs to be self-describing.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config_hash: String,
    pub master_seed: u64,
    pub variant: String,
    pub step: usize,
    pub config: ExperimentConfig,
}

fn save_state(path: &Path, state: &TrainState, variant: Variant) -> Result<()> {
    let header = CheckpointHeader {
        config_hash: state.cfg.hash()?,
        master_seed: state.cfg.train.master_seed,
        variant: variant.label().to_string(),
        step: state.step,
        config: state.cfg.clone(),
    };
    save_checkpoint(path, &serde_json::to_string(&header)?, &state.store)
}

pub fn load_state(path: &Path) -> Result<(TrainState, CheckpointHeader)> {
    let (header_json, store) = load_checkpoint(path)?;
    let header: CheckpointHeader =
        serde_json::from_str(&header_json).map_err(|e| Error::Checkpoint(format!("bad checkpoint header: {e}")))?;
    header.config.validate()?;
    Ok((
        TrainState {
            cfg: header.config.clone(),
            store,
            step: header.step,
        },
        header,
    ))
}

/// What `run_training` leaves behind.
pub struct TrainSummary {
    pub steps_run: usize,
    pub first_total: f64,
    pub last_total: f64,
    pub checkpoint: PathBuf,
    pub log: PathBuf,
}

/// The full training command: load the train split, run the remaining steps,
/// stream a JSON-lines log, and keep a rolling self-describing checkpoint.
/// With `resume` the rolling checkpoint is picked up and training continues
/// from its recorded step; nothing in the loop draws randomness, so a resumed
/// run retraces a straight-through run bit for bit.
pub fn run_training(
    cfg: &ExperimentConfig,
    variant: Variant,
    data_root: &Path,
    out_dir: &Path,
    resume: bool,
    threads: usize,
) -> Result<TrainSummary> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let ckpt_path = out_dir.join("model.ckpt");
    let log_path = out_dir.join("train_log.jsonl");

    let mut state = if resume && ckpt_path.exists() {
        let (state, header) = load_state(&ckpt_path)?;
        // the step budget is the one knob a resume may change
        let mut theirs = header.config.clone();
        theirs.train.steps = cfg.train.steps;
        if theirs != *cfg {
            return Err(Error::Config(
                "resume: checkpoint was trained with a different config".into(),
            ));
        }
        let mut state = state;
        state.cfg = cfg.clone();
        state
    } else {
        init_state(cfg)?
    };

    // scene loading fans out; the optimizer loop itself is strictly sequential
    let scenes = load_split(data_root, "train", cfg, &NoiseConfig::default(), threads)?;
    if scenes.is_empty() {
        return Err(Error::Data("train: training split is empty".into()));
    }

    let mut log = std::io::BufWriter::new(
        std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)?,
    );
    let flags = serde_json::json!({
        "use_rgb": cfg.model.use_rgb,
        "use_depth": cfg.loss.use_depth,
        "use_crossview": cfg.loss.use_crossview,
    });
    writeln!(
        log,
        "{}",
        serde_json::json!({
            "kind": "header",
            "config_hash": cfg.hash()?,
            "master_seed": cfg.train.master_seed,
            "variant": variant.label(),
            "flags": flags,
            "steps": cfg.train.steps,
            "start_step": state.step,
            "train_scenes": scenes.len(),
            "params": state.store.num_values(),
        })
    )?;

    let mut first_total = None;
    let mut last_total = f64::NAN;
    let mut steps_run = 0;
    while state.step < cfg.train.steps {
        let scene_idx = (state.step * cfg.train.grad_accum) % scenes.len();
        let bd = train_step(&mut state, &scenes)?;
        steps_run += 1;
        first_total.get_or_insert(bd.total);
        last_total = bd.total;
        if state.step % cfg.train.log_every == 0 || state.step == cfg.train.steps {
            writeln!(
                log,
                "{}",
                serde_json::json!({
                    "kind": "step",
                    "step": state.step,
                    "scene": scenes[scene_idx].name,
                    "l_bm": bd.l_bm,
                    "l_depth": bd.l_depth,
                    "l_crossview": bd.l_crossview,
                    "total": bd.total,
                })
            )?;
        }
        if state.step % cfg.train.checkpoint_every == 0 {
            log.flush()?;
            save_state(&ckpt_path, &state, variant)?;
        }
    }
    save_state(&ckpt_path, &state, variant)?;
    log.flush()?;
    Ok(TrainSummary {
        steps_run,
        first_total: first_total.unwrap_or(f64::NAN),
        last_total,
        checkpoint: ckpt_path,
        log: log_path,
    })
}

/// Score a parameter store over loaded scenes: forward every view, keep the
/// updated-stage predictions, drop no-source queries, and tally per view in
/// the world frame. Also returns the predictions as a JSON value.
pub fn evaluate_scenes(
    cfg: &ExperimentConfig,
    store: &ParameterStore,
    scenes: &[LoadedScene],
    threads: usize,
) -> Result<(MetricsReport, serde_json::Value)> {
    let intrinsics = cfg.view.intrinsics();
    let scored = par_map(scenes.len(), threads, |i| {
        let ls = &scenes[i];
        let views: Vec<ViewInput> = ls
            .views
            .iter()
            .zip(&ls.features)
            .map(|(v, f)| ViewInput {
                feature: f.clone(),
                pose: v.pose,
                appearance: &v.appearance,
            })
            .collect();
        let mut tape = Tape::new();
        let outputs = forward_scene(&mut tape, store, &cfg.model, &views, &intrinsics)?;
        let gts = ls.eval_ground_truths();
        let mut scene_tally = EvalTally::new(cfg.scene.class_count, &DEFAULT_THRESHOLDS)?;
        let mut per_view = Vec::with_capacity(outputs.len());
        for (o, v) in outputs.iter().zip(&ls.views) {
            let preds = extract_predictions(
                tape.value(o.updated.positions),
                tape.value(o.updated.logits),
                &v.pose,
            )?;
            scene_tally.add_view(&preds, &gts)?;
            per_view.push(preds);
        }
        let dump = serde_json::json!({
            "scene": ls.name,
            "sources": gts,
            "views": per_view,
        });
        Ok((scene_tally, dump))
    })?;
    // merge in scene order so the totals never depend on worker timing
    let mut tally = EvalTally::new(cfg.scene.class_count, &DEFAULT_THRESHOLDS)?;
    let mut dumped = Vec::with_capacity(scored.len());
    for (scene_tally, dump) in scored {
        tally.merge(&scene_tally)?;
        dumped.push(dump);
    }
    Ok((tally.report(), serde_json::Value::Array(dumped)))
}

/// Evaluation artifacts on disk.
pub struct EvalSummary {
    pub metrics: MetricsReport,
    pub metrics_path: PathBuf,
    pub csv_path: PathBuf,
    pub predictions_path: PathBuf,
}

/// The full evaluation command: restore a checkpoint, load the test split
/// with the requested noise, score it, and write predictions + metrics
/// (JSON and CSV), each stamped with the config hash and master seed.
pub fn run_eval(
    ckpt: &Path,
    data_root: &Path,
    out_dir: &Path,
    noise: &NoiseConfig,
    threads: usize,
) -> Result<EvalSummary> {
    let (state, header) = load_state(ckpt)?;
    run_eval_loaded(&state, &header, data_root, out_dir, noise, threads)
}

/// Same as [`run_eval`] but starting from an already-restored model.
pub fn run_eval_loaded(
    state: &TrainState,
    header: &CheckpointHeader,
    data_root: &Path,
    out_dir: &Path,
    noise: &NoiseConfig,
    threads: usize,
) -> Result<EvalSummary> {
    let scenes = load_split(data_root, "test", &state.cfg, noise, threads)?;
    if scenes.is_empty() {
        return Err(Error::Data("eval: test split is empty".into()));
    }
    let (metrics, predictions) = evaluate_scenes(&state.cfg, &state.store, &scenes, threads)?;

    std::fs::create_dir_all(out_dir)?;
    let stamp = |body: serde_json::Value| {
        serde_json::json!({
            "config_hash": header.config_hash,
            "master_seed": header.master_seed,
            "variant": header.variant,
            "trained_steps": header.step,
            "noise": noise,
            "body": body,
        })
    };
    let metrics_path = out_dir.join("metrics.json");
    std::fs::write(
        &metrics_path,
        serde_json::to_string_pretty(&stamp(serde_json::to_value(&metrics)?))?,
    )?;
    let csv_path = out_dir.join("metrics.csv");
    std::fs::write(&csv_path, metrics.to_csv())?;
    let predictions_path = out_dir.join("predictions.json");
    std::fs::write(
        &predictions_path,
        serde_json::to_string_pretty(&stamp(predictions))?,
    )?;
    Ok(EvalSummary {
        metrics,
        metrics_path,
        csv_path,
        predictions_path,
    })
}
