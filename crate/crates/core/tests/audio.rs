use adiff_core::audio::synth::{mixture, DEFAULT_CLASSES};
use adiff_core::audio::{
    load_wav, mel_filterbank, mel_spectrogram, truncate_random, write_wav, AudioClip, MelConfig, MelExtractor,
    Tagger, TaggerConfig, TaggerTrainConfig, SAMPLE_RATE,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn write_pcm16(path: &std::path::Path, channels: u16, rate: u32, samples: &[i16]) {
    let spec = hound::WavSpec { channels, sample_rate: rate, bits_per_sample: 16, sample_format: hound::SampleFormat::Int };
    let mut w = hound::WavWriter::create(path, spec).unwrap();
    for &s in samples {
        w.write_sample(s).unwrap();
    }
    w.finalize().unwrap();
}

#[test]
fn load_mono_pcm16() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("a.wav");
    let samples: Vec<i16> = (0..320).map(|i| (i * 100 - 16000) as i16).collect();
    write_pcm16(&p, 1, SAMPLE_RATE, &samples);
    let clip = load_wav(&p).unwrap();
    assert_eq!(clip.len(), 320);
    assert_eq!(clip.sample_rate(), SAMPLE_RATE);
    for (a, b) in clip.samples().iter().zip(&samples) {
        assert_eq!(*a, *b as f32 / 32768.0);
    }
}

#[test]
fn load_silence_and_stereo_cancellation() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("z.wav");
    write_pcm16(&p, 1, SAMPLE_RATE, &[0; 100]);
    assert!(load_wav(&p).unwrap().samples().iter().all(|&s| s == 0.0));
    let p = dir.path().join("s.wav");
    let frames: Vec<i16> = (0..200).flat_map(|_| [16384i16, -16384]).collect();
    write_pcm16(&p, 2, SAMPLE_RATE, &frames);
    let clip = load_wav(&p).unwrap();
    assert_eq!(clip.len(), 200);
    assert!(clip.samples().iter().all(|&s| s == 0.0));
}

#[test]
fn load_rejects_bad_files() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.wav");
    std::fs::write(&p, b"RIFF\x00\x00\x00\x00JUNK").unwrap();
    assert!(load_wav(&p).is_err());
    let p = dir.path().join("f32.wav");
    let spec = hound::WavSpec { channels: 1, sample_rate: 16000, bits_per_sample: 32, sample_format: hound::SampleFormat::Float };
    let mut w = hound::WavWriter::create(&p, spec).unwrap();
    w.write_sample(0.5f32).unwrap();
    w.finalize().unwrap();
    assert!(load_wav(&p).is_err());
}

#[test]
fn wav_write_read_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("r.wav");
    let clip = mixture(&["beep"], 0.1, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    write_wav(&p, &clip).unwrap();
    let back = load_wav(&p).unwrap();
    assert_eq!(back.len(), clip.len());
    assert!(back.samples().iter().zip(clip.samples()).all(|(a, b)| (a - b).abs() <= 1.0 / 32768.0));
}

#[test]
fn truncation_offsets_are_uniform() {
    // 30 s clip cut to 10 s: start offsets should spread evenly over the feasible range.
    let sr = 100;
    let clip = AudioClip::new((0..3000).map(|i| i as f32 / 3000.0).collect(), sr).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let bins = 10;
    let mut hist = vec![0usize; bins];
    let draws = 10_000;
    for _ in 0..draws {
        let w = truncate_random(&clip, 10.0, &mut rng);
        assert_eq!(w.len(), 1000);
        let start = (w.samples()[0] * 3000.0).round() as usize;
        hist[(start * bins / 2001).min(bins - 1)] += 1;
    }
    let expected = draws as f64 / bins as f64;
    let sigma = (draws as f64 * (1.0 / bins as f64) * (1.0 - 1.0 / bins as f64)).sqrt();
    for h in hist {
        assert!((h as f64 - expected).abs() < 4.0 * sigma, "{h}");
    }
}

#[test]
fn sine_peak_lands_in_the_right_band() {
    let n = SAMPLE_RATE as usize;
    let samples: Vec<f32> = (0..n).map(|i| (2.0 * std::f32::consts::PI * 1000.0 * i as f32 / 32000.0).sin() * 0.5).collect();
    let clip = AudioClip::new(samples, SAMPLE_RATE).unwrap();
    let cfg = MelConfig::default();
    let mel = mel_spectrogram(&clip, cfg).unwrap();
    // oracle: the band whose triangle weights the 1 kHz bin most heavily
    let fb = mel_filterbank(&cfg);
    let bins = cfg.win / 2 + 1;
    let peak_bin = (1000.0 * cfg.win as f64 / cfg.sample_rate as f64).round() as usize;
    let expected = (0..cfg.mels).max_by(|&a, &b| fb[a * bins + peak_bin].total_cmp(&fb[b * bins + peak_bin])).unwrap();
    for t in 0..mel.frames {
        let row = mel.frame(t);
        let arg = (0..cfg.mels).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
        assert_eq!(arg, expected, "frame {t}");
    }
}

proptest! {
    #[test]
    fn frame_count_formula(len in 1024usize..20_000, hop in 64usize..600) {
        let cfg = MelConfig { hop, ..MelConfig::default() };
        let clip = AudioClip::new(vec![0.0; len], SAMPLE_RATE).unwrap();
        let mel = MelExtractor::new(cfg).extract(&clip).unwrap();
        prop_assert_eq!(mel.frames, (len - 1024) / hop + 1);
        prop_assert_eq!(mel.data.len(), mel.frames * 64);
    }

    #[test]
    fn truncation_is_reproducible_and_exact(len in 1usize..500, target in 1u32..50, seed: u64) {
        let clip = AudioClip::new(vec![0.1; len], 10).unwrap();
        let a = truncate_random(&clip, target as f64, &mut ChaCha8Rng::seed_from_u64(seed));
        let b = truncate_random(&clip, target as f64, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(a.len(), target as usize * 10);
        prop_assert_eq!(a, b);
    }
}

fn labelled(classes: &[&str], seconds: f64, rng: &mut ChaCha8Rng, ext: &MelExtractor) -> (adiff_core::audio::MelSpec, Vec<f64>) {
    let clip = mixture(classes, seconds, rng).unwrap();
    let mel = ext.extract(&clip).unwrap();
    let y = DEFAULT_CLASSES.iter().map(|c| if classes.contains(c) { 1.0 } else { 0.0 }).collect();
    (mel, y)
}

#[test]
fn trained_tagger_recognises_beeps() {
    let ext = MelExtractor::new(MelConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut data = Vec::new();
    for i in 0..160 {
        let class = DEFAULT_CLASSES[i % 16];
        data.push(labelled(&[class], 1.0, &mut rng, &ext));
    }
    let mut tagger = Tagger::new(TaggerConfig::default(), 1);
    let mels: Vec<_> = data.iter().map(|(m, _)| m.clone()).collect();
    tagger.fit_normalization(&mels);
    let curve = tagger.train(&data, TaggerTrainConfig { epochs: 25, ..Default::default() }).unwrap();
    assert!(curve.last().unwrap() < &curve[0]);
    let beep = tagger.classes().iter().position(|c| c == "beep").unwrap();
    let mut hits = 0;
    let held_out = 40;
    for _ in 0..held_out {
        let other = DEFAULT_CLASSES[rng.random_range(1..16)];
        let (mel, _) = labelled(&["beep"], 1.0, &mut rng, &ext);
        let tl = tagger.tag_events(&mel).unwrap();
        if tl.top_classes(1)[0] == beep {
            hits += 1;
        }
        // a clip without beeps should not rank beep first
        let (mel, _) = labelled(&[other], 1.0, &mut rng, &ext);
        let tl = tagger.tag_events(&mel).unwrap();
        assert_ne!(tl.top_classes(1)[0], beep, "{other} tagged as beep");
    }
    assert!(hits as f64 >= 0.95 * held_out as f64, "{hits}/{held_out}");
}
