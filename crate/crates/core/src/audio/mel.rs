use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{AudioClip, AudioError, Result, SAMPLE_RATE};

const LOG_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MelConfig {
    pub sample_rate: u32,
    pub win: usize,
    pub hop: usize,
    pub mels: usize,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self { sample_rate: SAMPLE_RATE, win: 1024, hop: 320, mels: 64 }
    }
}

impl MelConfig {
    /// Frames produced for a clip of `len` samples (`len >= win`).
    pub fn frame_count(&self, len: usize) -> usize {
        (len - self.win) / self.hop + 1
    }
}

/// `frames x mels` log-energies, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpec {
    pub frames: usize,
    pub mels: usize,
    pub data: Vec<f32>,
}

impl MelSpec {
    pub fn frame(&self, i: usize) -> &[f32] {
        &self.data[i * self.mels..(i + 1) * self.mels]
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// HTK-scale triangular filters, `mels x (win/2 + 1)`, row-major.
pub fn mel_filterbank(config: &MelConfig) -> Vec<f64> {
    let bins = config.win / 2 + 1;
    let fmax = config.sample_rate as f64 / 2.0;
    let top = hz_to_mel(fmax);
    let points: Vec<f64> =
        (0..config.mels + 2).map(|i| mel_to_hz(top * i as f64 / (config.mels + 1) as f64)).collect();
    let mut fb = vec![0.0; config.mels * bins];
    for m in 0..config.mels {
        let (lo, centre, hi) = (points[m], points[m + 1], points[m + 2]);
        for k in 0..bins {
            let f = k as f64 * config.sample_rate as f64 / config.win as f64;
            let up = (f - lo) / (centre - lo);
            let down = (hi - f) / (hi - centre);
            fb[m * bins + k] = up.min(down).max(0.0);
        }
    }
    fb
}

/// Reusable feature extractor holding the FFT plan, window and filterbank.
pub struct MelExtractor {
    config: MelConfig,
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    filterbank: Vec<f64>,
}

impl MelExtractor {
    pub fn new(config: MelConfig) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(config.win);
        // periodic Hann
        let window = (0..config.win).map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / config.win as f64).cos()).collect();
        let filterbank = mel_filterbank(&config);
        Self { config, fft, window, filterbank }
    }

    pub fn config(&self) -> &MelConfig {
        &self.config
    }

    pub fn extract(&self, clip: &AudioClip) -> Result<MelSpec> {
        let c = &self.config;
        if clip.sample_rate() != c.sample_rate {
            return Err(AudioError::Rate { got: clip.sample_rate(), expected: c.sample_rate });
        }
        let x = clip.samples();
        if x.len() < c.win {
            return Err(AudioError::TooShort { len: x.len(), win: c.win });
        }
        let frames = c.frame_count(x.len());
        let bins = c.win / 2 + 1;
        let mut buf = vec![Complex::new(0.0, 0.0); c.win];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let mut mag = vec![0.0; bins];
        let mut data = Vec::with_capacity(frames * c.mels);
        for t in 0..frames {
            let start = t * c.hop;
            for (n, slot) in buf.iter_mut().enumerate() {
                *slot = Complex::new(x[start + n] as f64 * self.window[n], 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (k, m) in mag.iter_mut().enumerate() {
                *m = buf[k].norm();
            }
            for m in 0..c.mels {
                let row = &self.filterbank[m * bins..(m + 1) * bins];
                let e: f64 = row.iter().zip(&mag).map(|(w, v)| w * v).sum();
                data.push((e + LOG_FLOOR).ln() as f32);
            }
        }
        Ok(MelSpec { frames, mels: c.mels, data })
    }
}

pub fn mel_spectrogram(clip: &AudioClip, config: MelConfig) -> Result<MelSpec> {
    MelExtractor::new(config).extract(clip)
}
