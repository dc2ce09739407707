//! Waveforms, STFT and log-mel spectrograms.
//!
//! Frames use a symmetric Hann window of `round(window_seconds · rate)`
//! samples, zero-padded on the right to the next power of two before the
//! DFT. The mel filterbank is built on the padded bin count.

use std::fs;
use std::path::{Path, PathBuf};

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Tensor;

pub const LOG_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: f64,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: f64) -> Result<Self> {
        if !(sample_rate > 0.0) || !sample_rate.is_finite() {
            return Err(Error::invalid(format!(
                "sample rate must be positive, got {sample_rate}"
            )));
        }
        if samples.is_empty() {
            return Err(Error::invalid("waveform has no samples"));
        }
        if let Some(x) = samples.iter().find(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                context: "waveform".into(),
                value: *x,
            });
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }
}

/// JSON sidecar written next to raw `f32` samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaveformMeta {
    pub sample_rate: u32,
    pub length: usize,
}

/// Path of the sidecar for a `.raw` file: same stem, `.json` extension.
pub fn sidecar_path(raw: &Path) -> PathBuf {
    raw.with_extension("json")
}

pub fn write_waveform(raw: &Path, w: &Waveform) -> Result<()> {
    let bytes: Vec<u8> = w
        .samples
        .iter()
        .flat_map(|&x| (x as f32).to_le_bytes())
        .collect();
    fs::write(raw, bytes).map_err(|e| Error::io(raw, e))?;
    let meta = WaveformMeta {
        sample_rate: w.sample_rate.round() as u32,
        length: w.samples.len(),
    };
    let json = serde_json::to_vec_pretty(&meta).expect("serializable");
    let side = sidecar_path(raw);
    fs::write(&side, json).map_err(|e| Error::io(side, e))
}

pub fn read_waveform(raw: &Path) -> Result<Waveform> {
    let side = sidecar_path(raw);
    let text = fs::read(&side).map_err(|e| Error::io(&side, e))?;
    let meta: WaveformMeta = serde_json::from_slice(&text).map_err(|e| Error::Json {
        path: side,
        source: e,
    })?;
    let bytes = fs::read(raw).map_err(|e| Error::io(raw, e))?;
    if bytes.len() != 4 * meta.length {
        return Err(Error::format(
            raw,
            format!(
                "{} bytes on disk, sidecar declares {} samples",
                bytes.len(),
                meta.length
            ),
        ));
    }
    let samples = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Waveform::new(samples, meta.sample_rate as f64).map_err(|e| Error::format(raw, e.to_string()))
}

/// Symmetric Hann window.
pub fn hann_window(n: usize) -> Vec<f64> {
    assert!(n >= 1, "window length must be positive");
    if n == 1 {
        return vec![1.0];
    }
    let denom = (n - 1) as f64;
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / denom).cos())
        .collect()
}

/// Framing derived from a sample rate and window/hop durations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameLayout {
    pub window_len: usize,
    pub hop_len: usize,
    pub n_fft: usize,
}

impl FrameLayout {
    pub fn new(sample_rate: f64, window_seconds: f64, hop_seconds: f64) -> Result<Self> {
        let window_len = (window_seconds * sample_rate).round() as usize;
        let hop_len = (hop_seconds * sample_rate).round() as usize;
        if window_len == 0 || hop_len == 0 {
            return Err(Error::invalid(format!(
                "window ({window_seconds}s) and hop ({hop_seconds}s) must each span at least one sample"
            )));
        }
        Ok(Self {
            window_len,
            hop_len,
            n_fft: window_len.next_power_of_two(),
        })
    }

    pub fn fft_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// `1 + ⌊(len − window)/hop⌋`, or `None` if the signal is shorter than a window.
    pub fn frame_count(&self, len: usize) -> Option<usize> {
        (len >= self.window_len).then(|| 1 + (len - self.window_len) / self.hop_len)
    }
}

#[derive(Debug, Clone)]
pub struct Stft {
    pub layout: FrameLayout,
    /// Half spectrum per frame: `frames[t][k]`, `k < fft_bins`.
    pub frames: Vec<Vec<Complex64>>,
    /// `|X|²`, shape `fft_bins × frames`.
    pub power: Tensor,
}

pub fn stft(w: &Waveform, window_seconds: f64, hop_seconds: f64) -> Result<Stft> {
    let layout = FrameLayout::new(w.sample_rate, window_seconds, hop_seconds)?;
    let n_frames = layout.frame_count(w.len()).ok_or_else(|| {
        Error::invalid(format!(
            "waveform of {} samples is shorter than one {}-sample window",
            w.len(),
            layout.window_len
        ))
    })?;
    let window = hann_window(layout.window_len);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(layout.n_fft);
    let bins = layout.fft_bins();
    let mut power = vec![0.0; bins * n_frames];
    let mut frames = Vec::with_capacity(n_frames);
    let mut buf = vec![Complex64::new(0.0, 0.0); layout.n_fft];
    for t in 0..n_frames {
        let start = t * layout.hop_len;
        buf.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
        for (i, (&x, &h)) in w.samples[start..start + layout.window_len]
            .iter()
            .zip(&window)
            .enumerate()
        {
            buf[i].re = x * h;
        }
        fft.process(&mut buf);
        for (k, c) in buf[..bins].iter().enumerate() {
            power[k * n_frames + t] = c.norm_sqr();
        }
        frames.push(buf[..bins].to_vec());
    }
    Ok(Stft {
        layout,
        frames,
        power: Tensor::new(vec![bins, n_frames], power)?,
    })
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters with centers equally spaced on the mel scale,
/// evaluated at the DFT bin frequencies `k · rate / n_fft`.
///
/// A filter too narrow to cover any bin gets unit weight at the bin
/// nearest its center, so every row has positive mass.
pub fn mel_filterbank(
    mel_bins: usize,
    fft_bins: usize,
    sample_rate: f64,
    f_min: f64,
    f_max: f64,
) -> Result<Tensor> {
    if mel_bins == 0 || fft_bins < 2 {
        return Err(Error::invalid(format!(
            "need mel_bins ≥ 1 and fft_bins ≥ 2, got {mel_bins} and {fft_bins}"
        )));
    }
    if !(0.0 <= f_min && f_min < f_max && f_max <= sample_rate / 2.0) {
        return Err(Error::invalid(format!(
            "frequency range must satisfy 0 ≤ f_min < f_max ≤ rate/2; got [{f_min}, {f_max}] at {sample_rate} Hz"
        )));
    }
    let n_fft = 2 * (fft_bins - 1);
    let bin_hz = sample_rate / n_fft as f64;
    let (m_lo, m_hi) = (hz_to_mel(f_min), hz_to_mel(f_max));
    let edges: Vec<f64> = (0..mel_bins + 2)
        .map(|i| mel_to_hz(m_lo + (m_hi - m_lo) * i as f64 / (mel_bins + 1) as f64))
        .collect();
    let mut fb = vec![0.0; mel_bins * fft_bins];
    for m in 0..mel_bins {
        let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        let row = &mut fb[m * fft_bins..(m + 1) * fft_bins];
        for (k, w) in row.iter_mut().enumerate() {
            let f = k as f64 * bin_hz;
            *w = if f > lo && f <= center {
                (f - lo) / (center - lo)
            } else if f > center && f < hi {
                (hi - f) / (hi - center)
            } else {
                0.0
            };
        }
        if row.iter().all(|&w| w == 0.0) {
            let k = ((center / bin_hz).round() as usize).min(fft_bins - 1);
            row[k] = 1.0;
        }
    }
    Tensor::new(vec![mel_bins, fft_bins], fb)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LogMelConfig {
    pub mel_bins: usize,
    pub window_seconds: f64,
    pub hop_seconds: f64,
    pub f_min: f64,
    /// `None` means Nyquist.
    pub f_max: Option<f64>,
}

impl Default for LogMelConfig {
    fn default() -> Self {
        Self {
            mel_bins: 64,
            window_seconds: 0.040,
            hop_seconds: 0.020,
            f_min: 0.0,
            f_max: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    /// `mel_bins × frames`.
    pub values: Tensor,
    pub mel_bins: usize,
    pub hop_seconds: f64,
    pub window_seconds: f64,
}

impl Spectrogram {
    pub fn frames(&self) -> usize {
        self.values.shape()[1]
    }
}

/// Reusable log-mel front end for a fixed sample rate.
#[derive(Debug, Clone)]
pub struct LogMel {
    cfg: LogMelConfig,
    sample_rate: f64,
    filterbank: Tensor,
}

impl LogMel {
    pub fn new(cfg: LogMelConfig, sample_rate: f64) -> Result<Self> {
        let layout = FrameLayout::new(sample_rate, cfg.window_seconds, cfg.hop_seconds)?;
        let f_max = cfg.f_max.unwrap_or(sample_rate / 2.0);
        let filterbank = mel_filterbank(
            cfg.mel_bins,
            layout.fft_bins(),
            sample_rate,
            cfg.f_min,
            f_max,
        )?;
        Ok(Self {
            cfg,
            sample_rate,
            filterbank,
        })
    }

    pub fn filterbank(&self) -> &Tensor {
        &self.filterbank
    }

    pub fn compute(&self, w: &Waveform) -> Result<Spectrogram> {
        if (w.sample_rate - self.sample_rate).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "front end built for {} Hz, waveform is {} Hz",
                self.sample_rate, w.sample_rate
            )));
        }
        let s = stft(w, self.cfg.window_seconds, self.cfg.hop_seconds)?;
        let mel = self.filterbank.matmul(&s.power)?;
        Ok(Spectrogram {
            values: mel.map(|p| (p + LOG_FLOOR).ln()),
            mel_bins: self.cfg.mel_bins,
            hop_seconds: self.cfg.hop_seconds,
            window_seconds: self.cfg.window_seconds,
        })
    }
}

pub fn log_mel_spectrogram(w: &Waveform, cfg: &LogMelConfig) -> Result<Spectrogram> {
    LogMel::new(*cfg, w.sample_rate)?.compute(w)
}
