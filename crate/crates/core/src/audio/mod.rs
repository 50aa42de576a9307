//! Audio ingestion, log-mel features, synthetic event audio and the toy tagger.

mod mel;
pub mod synth;
mod tagger;

pub use mel::{mel_filterbank, mel_spectrogram, MelConfig, MelExtractor, MelSpec};
pub use tagger::{EventTimeline, Tagger, TaggerConfig, TaggerParams, TaggerTrainConfig};

use std::io::{Read, Seek, Write};
use std::path::Path;

use rand::Rng;
use thiserror::Error;

use crate::tensor::TensorError;

pub const SAMPLE_RATE: u32 = 32_000;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("wav decode: {0}")]
    Decode(#[from] hound::Error),
    #[error("unsupported wav format: {0}")]
    Unsupported(String),
    #[error("empty audio")]
    Empty,
    #[error("clip of {len} samples is shorter than one {win}-sample window")]
    TooShort { len: usize, win: usize },
    #[error("sample rate {got} does not match expected {expected}")]
    Rate { got: u32, expected: u32 },
    #[error("dimension mismatch: {0}")]
    Dim(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, AudioError>;

/// Mono clip with samples in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl AudioClip {
    /// Builds a clip, clamping samples into `[-1, 1]`.
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(AudioError::Empty);
        }
        if sample_rate == 0 {
            return Err(AudioError::Unsupported("sample rate 0".into()));
        }
        let samples = samples.into_iter().map(|s| if s.is_nan() { 0.0 } else { s.clamp(-1.0, 1.0) }).collect();
        Ok(Self { samples, sample_rate })
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Linear-interpolation resampling.
    pub fn resample(&self, rate: u32) -> AudioClip {
        if rate == self.sample_rate {
            return self.clone();
        }
        let ratio = self.sample_rate as f64 / rate as f64;
        let n = ((self.samples.len() as f64) / ratio).round().max(1.0) as usize;
        let last = self.samples.len() - 1;
        let samples = (0..n)
            .map(|i| {
                let pos = i as f64 * ratio;
                let lo = (pos.floor() as usize).min(last);
                let hi = (lo + 1).min(last);
                let frac = (pos - lo as f64) as f32;
                self.samples[lo] * (1.0 - frac) + self.samples[hi] * frac
            })
            .collect();
        AudioClip { samples, sample_rate: rate }
    }
}

/// Decodes 16-bit PCM, averaging channels, and resamples to 32 kHz.
pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let reader = hound::WavReader::open(path)?;
    decode(reader)
}

pub fn load_wav_from<R: Read>(reader: R) -> Result<AudioClip> {
    decode(hound::WavReader::new(reader)?)
}

fn decode<R: Read>(reader: hound::WavReader<R>) -> Result<AudioClip> {
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(AudioError::Unsupported(format!(
            "{:?} with {} bits per sample (need 16-bit PCM)",
            spec.sample_format, spec.bits_per_sample
        )));
    }
    let channels = spec.channels.max(1) as usize;
    let raw: Vec<i16> = reader.into_samples::<i16>().collect::<std::result::Result<_, _>>()?;
    let mono: Vec<f32> = raw
        .chunks(channels)
        .map(|frame| frame.iter().map(|&s| s as f32 / 32768.0).sum::<f32>() / channels as f32)
        .collect();
    let clip = AudioClip::new(mono, spec.sample_rate)?;
    Ok(clip.resample(SAMPLE_RATE))
}

/// Writes a mono 16-bit PCM file.
pub fn write_wav(path: impl AsRef<Path>, clip: &AudioClip) -> Result<()> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_wav_to(file, clip)
}

pub fn write_wav_to<W: Write + Seek>(w: W, clip: &AudioClip) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::new(w, spec)?;
    for &s in &clip.samples {
        writer.write_sample((s * 32768.0).round().clamp(-32768.0, 32767.0) as i16)?;
    }
    writer.finalize()?;
    Ok(())
}

/// Random contiguous window of exactly `seconds`; shorter clips are zero-padded.
pub fn truncate_random<R: Rng + ?Sized>(clip: &AudioClip, seconds: f64, rng: &mut R) -> AudioClip {
    assert!(seconds > 0.0, "target length must be positive");
    let target = ((seconds * clip.sample_rate as f64).round() as usize).max(1);
    let len = clip.samples.len();
    let samples = if len > target {
        let start = rng.random_range(0..=len - target);
        clip.samples[start..start + target].to_vec()
    } else {
        let mut s = clip.samples.clone();
        s.resize(target, 0.0);
        s
    };
    AudioClip { samples, sample_rate: clip.sample_rate }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn clamps_on_construction() {
        let c = AudioClip::new(vec![2.0, -3.0, 0.5], 16000).unwrap();
        assert_eq!(c.samples(), &[1.0, -1.0, 0.5]);
        assert!(AudioClip::new(vec![], 16000).is_err());
    }

    #[test]
    fn truncate_identity_and_padding() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = AudioClip::new(vec![0.25; 100], 10).unwrap();
        assert_eq!(truncate_random(&c, 10.0, &mut rng), c);
        let short = AudioClip::new(vec![0.5; 40], 10).unwrap();
        let padded = truncate_random(&short, 10.0, &mut rng);
        assert_eq!(padded.len(), 100);
        assert!(padded.samples()[..40].iter().all(|&s| s == 0.5));
        assert!(padded.samples()[40..].iter().all(|&s| s == 0.0));
    }

    #[test]
    fn resample_halves_length() {
        let c = AudioClip::new((0..64_000).map(|i| (i as f32 / 64_000.0) - 0.5).collect(), 64_000).unwrap();
        let r = c.resample(32_000);
        assert_eq!(r.len(), 32_000);
        assert!((r.samples()[100] - c.samples()[200]).abs() < 1e-6);
    }
}
