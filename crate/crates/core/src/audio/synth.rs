//! Procedural sound events for the toy tag set.

use std::f32::consts::PI;

use rand::Rng;

use super::{AudioClip, AudioError, Result, SAMPLE_RATE};

pub const DEFAULT_CLASSES: [&str; 16] = [
    "beep", "hum", "hiss", "rumble", "whistle", "chirp", "siren", "click", "knock", "buzz", "whip", "drone", "tick",
    "pulse", "bell", "rain",
];

const TARGET_RMS: f32 = 0.1;

fn noise<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect()
}

fn tone(n: usize, freq: f32, phase: f32) -> Vec<f32> {
    let sr = SAMPLE_RATE as f32;
    (0..n).map(|i| (2.0 * PI * freq * i as f32 / sr + phase).sin()).collect()
}

/// Sine whose instantaneous frequency is `f(t)`.
fn sweep(n: usize, f: impl Fn(f32) -> f32) -> Vec<f32> {
    let sr = SAMPLE_RATE as f32;
    let mut phase = 0.0f32;
    (0..n)
        .map(|i| {
            phase += 2.0 * PI * f(i as f32 / sr) / sr;
            if phase > 2.0 * PI {
                phase -= 2.0 * PI;
            }
            phase.sin()
        })
        .collect()
}

/// Adds `burst(local_t)` for `len` seconds at every `period` seconds from `offset`.
fn bursts(out: &mut [f32], period: f32, offset: f32, len: f32, burst: impl Fn(f32, usize) -> f32) {
    let sr = SAMPLE_RATE as f32;
    let mut start = offset;
    let mut k = 0;
    while ((start * sr) as usize) < out.len() {
        let s = (start * sr) as usize;
        let e = (((start + len) * sr) as usize).min(out.len());
        for (i, v) in out[s..e].iter_mut().enumerate() {
            *v += burst(i as f32 / sr, k);
        }
        start += period;
        k += 1;
    }
}

fn normalise(mut x: Vec<f32>, rms: f32) -> Vec<f32> {
    let cur = (x.iter().map(|v| v * v).sum::<f32>() / x.len().max(1) as f32).sqrt();
    if cur > 0.0 {
        let k = rms / cur;
        x.iter_mut().for_each(|v| *v *= k);
    }
    x
}

/// Renders one event class for `n` samples at 32 kHz, normalised to a fixed RMS.
pub fn render<R: Rng + ?Sized>(class: &str, n: usize, rng: &mut R) -> Result<Vec<f32>> {
    let sr = SAMPLE_RATE as f32;
    let jitter: f32 = rng.random_range(0.92..1.08);
    let phase: f32 = rng.random_range(0.0..2.0 * PI);
    let offset: f32 = rng.random_range(0.0..0.1);
    let x = match class {
        "beep" => {
            let t = tone(n, 1000.0 * jitter, phase);
            let (on, period) = (0.15, 0.25);
            t.into_iter()
                .enumerate()
                .map(|(i, v)| if ((i as f32 / sr + offset) % period) < on { v } else { 0.0 })
                .collect()
        }
        "hum" => {
            let mut x = vec![0.0; n];
            for h in 1..=4 {
                for (o, v) in x.iter_mut().zip(tone(n, 120.0 * jitter * h as f32, phase * h as f32)) {
                    *o += v / h as f32;
                }
            }
            x
        }
        "hiss" => {
            let w = noise(n + 1, rng);
            w.windows(2).map(|p| p[1] - p[0]).collect()
        }
        "rumble" => {
            let w = noise(n, rng);
            let mut y = 0.0;
            w.into_iter()
                .map(|v| {
                    y = 0.995 * y + 0.005 * v;
                    y
                })
                .collect()
        }
        "whistle" => {
            let f0 = 3000.0 * jitter;
            sweep(n, |t| f0 + 40.0 * (2.0 * PI * 5.0 * t).sin())
        }
        "chirp" => {
            let len = 0.3 * jitter;
            sweep(n, move |t| 500.0 + 3500.0 * ((t + offset) % len) / len)
        }
        "siren" => {
            let f0 = 800.0 * jitter;
            sweep(n, move |t| f0 + 300.0 * (2.0 * PI * 0.5 * t + phase).sin())
        }
        "click" => {
            let mut x = vec![0.0; n];
            let count = ((n as f32 / sr) * 20.0).ceil() as usize;
            for _ in 0..count {
                let at = rng.random_range(0..n);
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                for (k, amp) in [1.0, 0.5, 0.25].iter().enumerate() {
                    if at + k < n {
                        x[at + k] += sign * amp;
                    }
                }
            }
            x
        }
        "knock" => {
            let mut x = vec![0.0; n];
            let f = 180.0 * jitter;
            bursts(&mut x, 0.4, offset, 0.15, |t, _| (2.0 * PI * f * t).sin() * (-30.0 * t).exp());
            x
        }
        "buzz" => tone(n, 220.0 * jitter, phase).into_iter().map(|v| v.signum()).collect(),
        "whip" => {
            let mut x = vec![0.0; n];
            let w = noise(n + 1, rng);
            let hp: Vec<f32> = w.windows(2).map(|p| p[1] - p[0]).collect();
            bursts(&mut x, 0.7, offset, 0.08, |t, k| {
                let idx = ((k as f32 * 0.7 + t) * sr) as usize % n;
                hp[idx] * (-60.0 * t).exp()
            });
            x
        }
        "drone" => {
            let f = 330.0 * jitter;
            (0..n).map(|i| 2.0 * ((i as f32 * f / sr + phase) % 1.0) - 1.0).collect()
        }
        "tick" => {
            let mut x = vec![0.0; n];
            let f = 6000.0 * jitter;
            bursts(&mut x, 0.25, offset, 0.003, |t, _| (2.0 * PI * f * t).sin());
            x
        }
        "pulse" => {
            let f = 500.0 * jitter;
            (0..n)
                .map(|i| {
                    let t = i as f32 / sr;
                    (2.0 * PI * f * t + phase).sin() * (0.5 + 0.5 * (2.0 * PI * 4.0 * t).sin())
                })
                .collect()
        }
        "bell" => {
            let mut x = vec![0.0; n];
            let partials = [1500.0 * jitter, 3700.0 * jitter, 5200.0 * jitter];
            bursts(&mut x, 1.0, offset, 1.0, |t, _| {
                partials.iter().map(|f| (2.0 * PI * f * t).sin()).sum::<f32>() * (-4.0 * t).exp()
            });
            x
        }
        "rain" => {
            let w = noise(n, rng);
            let mut y = 0.0;
            let mut x: Vec<f32> = w
                .into_iter()
                .map(|v| {
                    let prev = y;
                    y = 0.9 * y + 0.1 * v;
                    y - prev * 0.5
                })
                .collect();
            let drops = ((n as f32 / sr) * 50.0).ceil() as usize;
            for _ in 0..drops {
                let at = rng.random_range(0..n);
                let f: f32 = rng.random_range(2000.0..4000.0);
                for k in 0..(0.004 * sr) as usize {
                    if at + k < n {
                        let t = k as f32 / sr;
                        x[at + k] += 0.3 * (2.0 * PI * f * t).sin() * (-800.0 * t).exp();
                    }
                }
            }
            x
        }
        other => return Err(AudioError::Dim(format!("unknown synthetic class {other:?}"))),
    };
    Ok(normalise(x, TARGET_RMS))
}

/// Sum of the given event classes over `seconds`, plus faint background noise.
pub fn mixture<R: Rng + ?Sized>(classes: &[&str], seconds: f64, rng: &mut R) -> Result<AudioClip> {
    let n = (seconds * SAMPLE_RATE as f64).round() as usize;
    let mut x = vec![0.0f32; n];
    for class in classes {
        let gain: f32 = rng.random_range(0.7..1.0);
        for (o, v) in x.iter_mut().zip(render(class, n, rng)?) {
            *o += gain * v;
        }
    }
    for (o, v) in x.iter_mut().zip(noise(n, rng)) {
        *o += 0.002 * v;
    }
    let peak = x.iter().fold(0.0f32, |m, v| m.max(v.abs()));
    if peak > 0.95 {
        let k = 0.95 / peak;
        x.iter_mut().for_each(|v| *v *= k);
    }
    AudioClip::new(x, SAMPLE_RATE)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn every_class_renders_finite_audio() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for class in DEFAULT_CLASSES {
            let x = render(class, 16_000, &mut rng).unwrap();
            assert_eq!(x.len(), 16_000);
            assert!(x.iter().all(|v| v.is_finite()), "{class}");
            let rms = (x.iter().map(|v| v * v).sum::<f32>() / x.len() as f32).sqrt();
            assert!((rms - TARGET_RMS).abs() < 1e-3, "{class}: {rms}");
        }
        assert!(render("yodel", 10, &mut rng).is_err());
    }

    #[test]
    fn mixture_is_seeded() {
        let a = mixture(&["beep", "rain"], 0.5, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = mixture(&["beep", "rain"], 0.5, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }
}
