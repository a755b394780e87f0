//! Audio front end: STFT, log-mel spectrograms, per-frame GCC-PHAT maps, and
//! the stacked multichannel input tensor for the localizer.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

/// STFT/mel/lag sizing. `n_mels` must equal `n_lags` so log-mel and GCC maps
/// share one frequency-like axis of size `feat_bins`, and the time axis is
/// center-cropped or zero-padded to `frames` columns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DspConfig {
    pub fs: f64,
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub n_lags: usize,
    pub frames: usize,
}

impl DspConfig {
    pub fn paper() -> Self {
        Self {
            fs: 21000.0,
            n_fft: 511,
            hop: 78,
            n_mels: 256,
            n_lags: 256,
            frames: 256,
        }
    }

    pub fn desk() -> Self {
        Self {
            fs: 21000.0,
            n_fft: 127,
            hop: 78,
            n_mels: 64,
            n_lags: 64,
            frames: 64,
        }
    }

    pub fn feat_bins(&self) -> usize {
        self.n_mels
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_fft < 2 || self.hop == 0 {
            return Err(Error::Config("dsp: n_fft and hop must be positive".into()));
        }
        if self.n_mels != self.n_lags {
            return Err(Error::Config(format!(
                "dsp: n_mels ({}) must equal n_lags ({}) so feature maps stack",
                self.n_mels, self.n_lags
            )));
        }
        if self.n_mels > onesided_bins(self.n_fft) {
            return Err(Error::Config(format!(
                "dsp: n_mels ({}) exceeds spectrum bins ({})",
                self.n_mels,
                onesided_bins(self.n_fft)
            )));
        }
        if self.n_lags > self.n_fft {
            return Err(Error::Config("dsp: n_lags exceeds n_fft".into()));
        }
        if !(self.fs > 0.0) {
            return Err(Error::Config("dsp: fs must be positive".into()));
        }
        Ok(())
    }
}

pub fn onesided_bins(n_fft: usize) -> usize {
    n_fft / 2 + 1
}

/// Onesided complex STFT, stored frame-major for locality; `at(bin, frame)`
/// presents the logical bins×frames layout.
#[derive(Debug, Clone)]
pub struct ComplexSpectrogram {
    pub bins: usize,
    pub frames: usize,
    pub n_fft: usize,
    pub hop: usize,
    pub fs: f64,
    data: Vec<Complex64>,
}

impl ComplexSpectrogram {
    #[inline]
    pub fn at(&self, bin: usize, frame: usize) -> Complex64 {
        self.data[frame * self.bins + bin]
    }

    pub fn frame(&self, frame: usize) -> &[Complex64] {
        &self.data[frame * self.bins..(frame + 1) * self.bins]
    }
}

/// Periodic Hann window `0.5 − 0.5·cos(2πn/N)`.
fn hann(n_fft: usize) -> Vec<f64> {
    (0..n_fft)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / n_fft as f64).cos())
        .collect()
}

/// Hann-windowed onesided STFT with frame count `floor((len − n_fft)/hop) + 1`.
pub fn stft(signal: &[f64], cfg: &DspConfig) -> Result<ComplexSpectrogram> {
    let n_fft = cfg.n_fft;
    if signal.len() < n_fft {
        return Err(Error::Invalid(format!(
            "stft: signal of {} samples is shorter than n_fft = {n_fft}",
            signal.len()
        )));
    }
    let frames = (signal.len() - n_fft) / cfg.hop + 1;
    let bins = onesided_bins(n_fft);
    let window = hann(n_fft);
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n_fft);
    let mut data = Vec::with_capacity(frames * bins);
    let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
    for f in 0..frames {
        let start = f * cfg.hop;
        for (i, b) in buf.iter_mut().enumerate() {
            *b = Complex64::new(signal[start + i] * window[i], 0.0);
        }
        fft.process(&mut buf);
        data.extend_from_slice(&buf[..bins]);
    }
    Ok(ComplexSpectrogram {
        bins,
        frames,
        n_fft,
        hop: cfg.hop,
        fs: cfg.fs,
        data,
    })
}

/// HTK mel scale.
fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular mel filterbank over 0..fs/2, rows n_mels × bins. Rows whose
/// triangle is narrower than one DFT bin get a single unit tap at the bin
/// nearest their center frequency so every row carries energy.
pub fn mel_filterbank(n_mels: usize, n_fft: usize, fs: f64) -> Vec<f64> {
    let bins = onesided_bins(n_fft);
    let mel_max = hz_to_mel(fs / 2.0);
    let points: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(mel_max * i as f64 / (n_mels + 1) as f64))
        .collect();
    let bin_hz = |b: usize| b as f64 * fs / n_fft as f64;
    let mut fb = vec![0.0; n_mels * bins];
    for m in 0..n_mels {
        let (lo, center, hi) = (points[m], points[m + 1], points[m + 2]);
        let mut row_sum = 0.0;
        for b in 0..bins {
            let f = bin_hz(b);
            let w = if f <= lo || f >= hi {
                0.0
            } else if f <= center {
                (f - lo) / (center - lo)
            } else {
                (hi - f) / (hi - center)
            };
            fb[m * bins + b] = w;
            row_sum += w;
        }
        if row_sum == 0.0 {
            let nearest = ((center * n_fft as f64 / fs).round() as usize).min(bins - 1);
            fb[m * bins + nearest] = 1.0;
        }
    }
    fb
}

/// Mel filterbank applied to the power spectrogram, then `ln(x + 1e-10)`.
/// Output is n_mels×frames row-major.
pub fn log_mel(spec: &ComplexSpectrogram, n_mels: usize) -> Result<Vec<f64>> {
    if n_mels > spec.bins {
        return Err(Error::Invalid(format!(
            "log_mel: n_mels ({n_mels}) exceeds spectrum bins ({})",
            spec.bins
        )));
    }
    let fb = mel_filterbank(n_mels, spec.n_fft, spec.fs);
    let bins = spec.bins;
    let mut out = vec![0.0; n_mels * spec.frames];
    let mut power = vec![0.0; bins];
    for t in 0..spec.frames {
        let frame = spec.frame(t);
        for (p, c) in power.iter_mut().zip(frame) {
            *p = c.norm_sqr();
        }
        for m in 0..n_mels {
            let row = &fb[m * bins..(m + 1) * bins];
            let mut acc = 0.0;
            for b in 0..bins {
                acc += row[b] * power[b];
            }
            out[m * spec.frames + t] = (acc + 1e-10).ln();
        }
    }
    Ok(out)
}

/// Per-frame GCC-PHAT between two aligned spectrograms. Each frame's cross
/// spectrum is whitened to unit modulus (guarded by +1e-12), inverse-DFT'd
/// with 1/n_fft normalization, and the zero-centered lags
/// [−n_lags/2, n_lags/2) are kept, ordered negative→positive. A positive peak
/// lag means channel l is delayed relative to channel k. Output is
/// n_lags×frames row-major.
pub fn gcc_phat(spec_k: &ComplexSpectrogram, spec_l: &ComplexSpectrogram, n_lags: usize) -> Result<Vec<f64>> {
    if spec_k.bins != spec_l.bins || spec_k.frames != spec_l.frames || spec_k.n_fft != spec_l.n_fft {
        return Err(Error::Shape(format!(
            "gcc_phat: spectrogram shapes differ ({}×{} vs {}×{})",
            spec_k.bins, spec_k.frames, spec_l.bins, spec_l.frames
        )));
    }
    let n_fft = spec_k.n_fft;
    if n_lags > n_fft {
        return Err(Error::Invalid(format!("gcc_phat: n_lags ({n_lags}) exceeds n_fft ({n_fft})")));
    }
    let bins = spec_k.bins;
    let frames = spec_k.frames;
    let half = n_lags / 2;
    let mut planner = FftPlanner::new();
    let ifft = planner.plan_fft_inverse(n_fft);
    let mut out = vec![0.0; n_lags * frames];
    let mut full = vec![Complex64::new(0.0, 0.0); n_fft];
    for t in 0..frames {
        let fk = spec_k.frame(t);
        let fl = spec_l.frame(t);
        // onesided cross spectrum, whitened, mirrored to the full spectrum
        for b in 0..bins {
            let x = fk[b] * fl[b].conj();
            let w = x / (x.norm() + 1e-12);
            full[b] = w;
            if b > 0 && n_fft - b >= bins {
                full[n_fft - b] = w.conj();
            }
        }
        ifft.process(&mut full);
        for (j, o) in out.iter_mut().skip(t).step_by(frames).take(n_lags).enumerate() {
            let v = j as isize - half as isize;
            let idx = ((n_fft as isize - v) % n_fft as isize) as usize % n_fft;
            *o = full[idx].re / n_fft as f64;
        }
    }
    Ok(out)
}

/// Lexicographic microphone pairs (0,1), (0,2), ..., matching the stacked
/// channel order of [`build_input_feature`].
pub fn mic_pairs(channels: usize) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for a in 0..channels {
        for b in a + 1..channels {
            pairs.push((a, b));
        }
    }
    pairs
}

/// Stack per-channel log-mel maps and pairwise GCC-PHAT maps into a
/// (m + C(m,2))×feat_bins×frames tensor, center-cropping or zero-padding the
/// time axis to `cfg.frames` columns.
pub fn build_input_feature(audio: &[Vec<f64>], cfg: &DspConfig) -> Result<Tensor> {
    cfg.validate()?;
    if audio.is_empty() {
        return Err(Error::Invalid("build_input_feature: no channels".into()));
    }
    let m = audio.len();
    let specs: Vec<ComplexSpectrogram> = audio.iter().map(|ch| stft(ch, cfg)).collect::<Result<_>>()?;
    let frames = specs[0].frames;
    if specs.iter().any(|s| s.frames != frames) {
        return Err(Error::Shape("build_input_feature: channel lengths differ".into()));
    }
    let pairs = mic_pairs(m);
    let channels = m + pairs.len();
    let bins = cfg.feat_bins();
    let t_out = cfg.frames;
    let mut data = Vec::with_capacity(channels * bins * t_out);
    for spec in &specs {
        let lm = log_mel(spec, cfg.n_mels)?;
        // zero-pad with the log floor, not 0.0, so padding is indistinguishable
        // from silence
        append_time_fitted(&mut data, &lm, bins, frames, t_out, (1e-10f64).ln());
    }
    for &(a, b) in &pairs {
        let gcc = gcc_phat(&specs[a], &specs[b], cfg.n_lags)?;
        append_time_fitted(&mut data, &gcc, bins, frames, t_out, 0.0);
    }
    Tensor::from_vec(&[channels, bins, t_out], data)
}

/// Center-crop or center-pad the time axis of a bins×frames row-major map to
/// `t_out` columns, appending to `data`.
fn append_time_fitted(data: &mut Vec<f64>, map: &[f64], bins: usize, frames: usize, t_out: usize, fill: f64) {
    if frames >= t_out {
        let start = (frames - t_out) / 2;
        for r in 0..bins {
            data.extend_from_slice(&map[r * frames + start..r * frames + start + t_out]);
        }
    } else {
        let pad_left = (t_out - frames) / 2;
        for r in 0..bins {
            let row_start = data.len();
            data.resize(row_start + t_out, fill);
            data[row_start + pad_left..row_start + pad_left + frames]
                .copy_from_slice(&map[r * frames..(r + 1) * frames]);
        }
    }
}
