//! Seeded synthetic signals: repetitive harmonic music and short noise
//! bursts. Used by the tests and by the `synth` command when no recordings
//! are at hand.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::AudioSignal;

#[derive(Debug, Clone, PartialEq)]
pub struct MusicParams {
    pub sample_rate: u32,
    pub duration_secs: f64,
    /// Length of the repeating pattern.
    pub pattern_secs: f64,
    pub notes_per_pattern: usize,
    pub partials: usize,
    /// Relative amplitude jitter applied to every note repetition.
    pub variation: f64,
    /// Standard deviation of the additive noise floor, relative to 1.
    pub noise_floor: f64,
    pub seed: u64,
}

impl Default for MusicParams {
    fn default() -> Self {
        Self {
            sample_rate: 8000,
            duration_secs: 30.0,
            pattern_secs: 2.0,
            notes_per_pattern: 4,
            partials: 5,
            variation: 0.1,
            noise_floor: 1e-3,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Note {
    f0: f64,
    onset: f64,
    length: f64,
    gain: f64,
}

/// Pattern of harmonic notes repeated to fill the duration. Each repetition
/// rescales every note by an independent factor in `1 +- variation`.
pub fn repetitive_music(p: &MusicParams) -> AudioSignal {
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let sr = p.sample_rate as f64;
    let n = (p.duration_secs * sr).round() as usize;
    let slot = p.pattern_secs / p.notes_per_pattern as f64;
    // pentatonic-ish set well below Nyquist for every partial
    let max_f0 = (sr / 2.0 * 0.8) / p.partials as f64;
    let notes: Vec<Note> = (0..p.notes_per_pattern)
        .map(|i| {
            let semis = rng.random_range(0..24) as f64;
            Note {
                f0: (110.0 * 2f64.powf(semis / 12.0)).min(max_f0),
                onset: i as f64 * slot,
                length: slot * rng.random_range(0.7..1.0),
                gain: rng.random_range(0.5..1.0),
            }
        })
        .collect();
    let rolloff: Vec<f64> = (1..=p.partials).map(|h| 1.0 / h as f64).collect();
    let phases: Vec<f64> = (0..notes.len() * p.partials).map(|_| rng.random_range(0.0..TAU)).collect();

    let mut out = vec![0.0; n];
    let repeats = (p.duration_secs / p.pattern_secs).ceil() as usize;
    for rep in 0..repeats {
        let base = rep as f64 * p.pattern_secs;
        for (ni, note) in notes.iter().enumerate() {
            let jitter = 1.0 + p.variation * rng.random_range(-1.0..1.0);
            let start = ((base + note.onset) * sr).round() as usize;
            let len = (note.length * sr).round() as usize;
            for k in 0..len {
                let idx = start + k;
                if idx >= n {
                    break;
                }
                let t = k as f64 / sr;
                let env = (t / 0.01).min(1.0) * (-3.0 * t / note.length).exp();
                let mut v = 0.0;
                for (h, r) in rolloff.iter().enumerate() {
                    let f = note.f0 * (h + 1) as f64;
                    v += r * (TAU * f * t + phases[ni * p.partials + h]).sin();
                }
                out[idx] += 0.3 * note.gain * jitter * env * v;
            }
        }
    }
    if p.noise_floor > 0.0 {
        for s in &mut out {
            *s += p.noise_floor * gaussian(&mut rng);
        }
    }
    AudioSignal::new(out, p.sample_rate).expect("positive sample rate")
}

#[derive(Debug, Clone, PartialEq)]
pub struct BurstParams {
    pub sample_rate: u32,
    pub min_secs: f64,
    pub max_secs: f64,
    /// Resonance centre frequencies are drawn from this band (Hz).
    pub resonance_band: (f64, f64),
}

impl Default for BurstParams {
    fn default() -> Self {
        Self {
            sample_rate: 8000,
            min_secs: 0.3,
            max_secs: 0.6,
            resonance_band: (400.0, 2000.0),
        }
    }
}

/// One decaying burst of coloured noise: white noise through a two-pole
/// resonator mixed with a broadband part, under an envelope with a fast
/// attack, a slow exponential decay and a short release. Different seeds give different members of the same family.
pub fn noise_burst(p: &BurstParams, seed: u64) -> AudioSignal {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sr = p.sample_rate as f64;
    let secs = rng.random_range(p.min_secs..=p.max_secs);
    let n = (secs * sr).round() as usize;
    let fc = rng.random_range(p.resonance_band.0..p.resonance_band.1);
    let radius: f64 = rng.random_range(0.9..0.97);
    let tau = secs * rng.random_range(0.8..1.6);
    let release = 0.02 * sr;
    let broadband = rng.random_range(0.2..0.5);
    let (a1, a2) = (2.0 * radius * (TAU * fc / sr).cos(), -radius * radius);
    let gain = 1.0 - radius;

    let (mut y1, mut y2) = (0.0, 0.0);
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let w = gaussian(&mut rng);
        let y = gain * w + a1 * y1 + a2 * y2;
        y2 = y1;
        y1 = y;
        let t = k as f64 / sr;
        let tail = ((n - k) as f64 / release).min(1.0);
        let env = (t / 0.005).min(1.0) * tail * (-t / tau).exp();
        out.push(env * (y + broadband * w * gain));
    }
    AudioSignal::new(out, p.sample_rate).expect("positive sample rate")
}

/// `count` bursts with seeds `first_seed, first_seed + 1, ...`.
pub fn noise_bursts(p: &BurstParams, first_seed: u64, count: usize) -> Vec<AudioSignal> {
    (0..count as u64).map(|i| noise_burst(p, first_seed + i)).collect()
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller on (0, 1]
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (TAU * u2).cos()
}
