//! Experiment-level configuration: one struct bundling the scene, view, DSP,
//! model, loss, and training settings, with presets, cross-module validation,
//! ablation variants, and a content hash that output artifacts embed so runs
//! stay attributable.

use crate::dsp::DspConfig;
use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::model::ModelConfig;
use crate::scene::{SceneConfig, ViewConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

/// Optional robustness knobs applied at data-loading time: additive white
/// noise at a target SNR and Gaussian camera-angle perturbation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub snr_db: Option<f64>,
    pub pose_delta: Option<f64>,
}

/// Optimization settings. One acoustic scene per optimizer step (the losses
/// couple all views of a scene); `grad_accum` averages gradients over that
/// many scenes before stepping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub steps: usize,
    pub master_seed: u64,
    pub grad_accum: usize,
    pub log_every: usize,
    pub checkpoint_every: usize,
}

impl TrainConfig {
    pub fn paper() -> Self {
        Self {
            lr: 1e-4,
            weight_decay: 1e-2,
            steps: 100_000,
            master_seed: 42,
            grad_accum: 1,
            log_every: 10,
            checkpoint_every: 1000,
        }
    }

    pub fn desk() -> Self {
        Self {
            steps: 2000,
            checkpoint_every: 500,
            ..Self::paper()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("train: bad learning rate {}", self.lr)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!("train: bad weight decay {}", self.weight_decay)));
        }
        if self.steps == 0 || self.grad_accum == 0 || self.log_every == 0 || self.checkpoint_every == 0 {
            return Err(Error::Config("train: steps/grad_accum/log_every/checkpoint_every must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// Ablation variants: which cue paths and loss terms stay on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    Full,
    NoRgb,
    NoDepth,
    NoCvc,
    NoRgbd,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::NoRgb,
        Variant::NoDepth,
        Variant::NoCvc,
        Variant::NoRgbd,
    ];

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Self::Full),
            "noRGB" => Ok(Self::NoRgb),
            "noDepth" => Ok(Self::NoDepth),
            "noCVC" => Ok(Self::NoCvc),
            "noRGBD" => Ok(Self::NoRgbd),
            other => Err(Error::Config(format!(
                "unknown variant '{other}' (expected full, noRGB, noDepth, noCVC, noRGBD)"
            ))),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::NoRgb => "noRGB",
            Self::NoDepth => "noDepth",
            Self::NoCvc => "noCVC",
            Self::NoRgbd => "noRGBD",
        }
    }

    /// Switch off the cue paths this variant ablates. The model flags and the
    /// loss flags are kept in lockstep.
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        match self {
            Self::Full => {}
            Self::NoRgb => cfg.model.use_rgb = false,
            Self::NoDepth => {
                cfg.model.use_depth_loss = false;
                cfg.loss.use_depth = false;
            }
            Self::NoCvc => {
                cfg.model.use_crossview_loss = false;
                cfg.loss.use_crossview = false;
            }
            Self::NoRgbd => {
                cfg.model.use_rgb = false;
                cfg.model.use_depth_loss = false;
                cfg.loss.use_depth = false;
            }
        }
    }
}

/// The complete experiment description. Everything a run reads comes from
/// here; the sha-256 of the canonical JSON form is stamped into every output
/// artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub preset: String,
    pub scene: SceneConfig,
    pub view: ViewConfig,
    pub dsp: DspConfig,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub noise: NoiseConfig,
}

impl ExperimentConfig {
    pub fn paper() -> Self {
        Self {
            preset: "paper".into(),
            scene: SceneConfig::paper(),
            view: ViewConfig::paper(),
            dsp: DspConfig::paper(),
            model: ModelConfig::paper(),
            loss: LossConfig::default(),
            train: TrainConfig::paper(),
            noise: NoiseConfig::default(),
        }
    }

    pub fn desk() -> Self {
        Self {
            preset: "desk".into(),
            scene: SceneConfig::desk(),
            view: ViewConfig::desk(),
            dsp: DspConfig::desk(),
            model: ModelConfig::desk(),
            loss: LossConfig::default(),
            train: TrainConfig::desk(),
            noise: NoiseConfig::default(),
        }
    }

    /// Accept either a preset name or a path to a JSON file.
    pub fn resolve(spec: &str) -> Result<Self> {
        match spec {
            "paper" => Ok(Self::paper()),
            "desk" => Ok(Self::desk()),
            path => {
                let text = std::fs::read_to_string(Path::new(path)).map_err(|e| {
                    Error::Config(format!("config '{path}' is neither a preset (paper, desk) nor a readable file: {e}"))
                })?;
                let cfg: Self =
                    serde_json::from_str(&text).map_err(|e| Error::Config(format!("config '{path}': {e}")))?;
                cfg.validate()?;
                Ok(cfg)
            }
        }
    }

    /// Per-section checks plus the couplings between sections: the feature
    /// tensor must fit the conv ladder, class counts must agree, appearance
    /// features must be addable to queries, and the audio clip must be long
    /// enough for one analysis frame.
    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.view.validate()?;
        self.dsp.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        if !(self.loss.sigma > 0.0) {
            return Err(Error::Config(format!("loss: sigma {} must be positive", self.loss.sigma)));
        }
        for (name, l) in [
            ("lambda_bm", self.loss.lambda_bm),
            ("lambda_depth", self.loss.lambda_depth),
            ("lambda_crossview", self.loss.lambda_crossview),
            ("match_pos_weight", self.loss.match_pos_weight),
            ("match_class_weight", self.loss.match_class_weight),
        ] {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(Error::Config(format!("loss: {name} = {l} must be finite and ≥ 0")));
            }
        }

        if (self.dsp.fs - self.view.fs).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "sampling rate mismatch: dsp {} Hz vs views {} Hz",
                self.dsp.fs, self.view.fs
            )));
        }
        if self.model.k != self.scene.class_count {
            return Err(Error::Config(format!(
                "class count mismatch: model expects {}, scenes carry {}",
                self.model.k, self.scene.class_count
            )));
        }
        let m = self.view.mic_rig.count();
        let feat_channels = m + m * (m - 1) / 2;
        if self.model.conv_channels[0] != feat_channels {
            return Err(Error::Config(format!(
                "feature channels mismatch: {} mics give {} maps, conv ladder expects {}",
                m, feat_channels, self.model.conv_channels[0]
            )));
        }
        if self.dsp.n_mels != self.model.input_size
            || self.dsp.n_lags != self.model.input_size
            || self.dsp.frames != self.model.input_size
        {
            return Err(Error::Config(format!(
                "feature size mismatch: dsp gives {}×{}/{} maps, conv ladder expects {}²",
                self.dsp.n_mels, self.dsp.frames, self.dsp.n_lags, self.model.input_size
            )));
        }
        if self.view.appearance_dim != self.model.d {
            return Err(Error::Config(format!(
                "appearance dim {} must equal query dim {} to be addable",
                self.view.appearance_dim, self.model.d
            )));
        }
        if self.view.samples() < self.dsp.n_fft {
            return Err(Error::Config(format!(
                "audio clip of {} samples is shorter than one {}-point analysis frame",
                self.view.samples(),
                self.dsp.n_fft
            )));
        }
        if self.model.use_depth_loss != self.loss.use_depth || self.model.use_crossview_loss != self.loss.use_crossview
        {
            return Err(Error::Config(
                "ablation flags out of sync between model and loss sections".into(),
            ));
        }
        if let Some(snr) = self.noise.snr_db {
            if snr.is_nan() {
                return Err(Error::Config("noise: snr_db must not be NaN".into()));
            }
        }
        if let Some(delta) = self.noise.pose_delta {
            if !(delta >= 0.0 && delta.is_finite()) {
                return Err(Error::Config(format!("noise: pose_delta {delta} must be finite and ≥ 0")));
            }
        }
        Ok(())
    }

    /// sha-256 over the canonical (compact, fixed field order) JSON form.
    pub fn hash(&self) -> Result<String> {
        let json = serde_json::to_string(self)?;
        let digest = Sha256::digest(json.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn to_json(&self) -> Result<serde_json::Value> {
        Ok(serde_json::to_value(self)?)
    }
}
