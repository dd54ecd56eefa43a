//! Mixture synthesis and separation metrics.
//!
//! SDR and SIR follow the time-invariant projection form of BSS Eval: the
//! estimate is split into its projection on the true source, the remaining
//! part of its projection on `span{source, interference}`, and the residual
//! artifacts. No distortion filters are allowed.

use std::fmt::Write as _;
use std::path::Path;

use crate::audio::AudioSignal;
use crate::error::{Error, Result};
use crate::spectral::Framing;

/// Scores are clamped to this magnitude instead of reporting infinities.
pub const DB_CAP: f64 = 100.0;

/// Synthesized stems are snapped to multiples of 2^-40 so that mixing and
/// unmixing them is exact in double precision.
const GRID: f64 = (1u64 << 40) as f64;

fn snap(v: f64) -> f64 {
    (v * GRID).round() / GRID
}

/// Half-open sample range `start..end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

pub fn rms_normalize(signal: &AudioSignal, target_rms: f64) -> Result<AudioSignal> {
    if !(target_rms > 0.0) || !target_rms.is_finite() {
        return Err(Error::invalid(format!("target RMS must be positive, got {target_rms}")));
    }
    if signal.is_empty() {
        return Err(Error::EmptySignal);
    }
    let rms = signal.rms();
    if rms == 0.0 {
        return Err(Error::Silent("signal to normalize"));
    }
    let gain = target_rms / rms;
    AudioSignal::new(signal.samples.iter().map(|s| s * gain).collect(), signal.sample_rate)
}

#[derive(Debug, Clone)]
pub struct InterferenceEvent {
    pub signal: AudioSignal,
    pub onset_secs: f64,
}

#[derive(Debug, Clone)]
pub struct MixSpec {
    pub music: AudioSignal,
    pub events: Vec<InterferenceEvent>,
    /// Music-to-interference energy ratio over each active segment.
    pub snr_db: f64,
    pub target_rms: f64,
}

#[derive(Debug, Clone)]
pub struct SynthesizedMixture {
    pub mixture: AudioSignal,
    pub music: AudioSignal,
    pub interference: AudioSignal,
    /// Active range of each event, in onset order.
    pub segments: Vec<Segment>,
    /// Linear gain applied to each event, in onset order.
    pub gains: Vec<f64>,
}

/// Normalizes the music to `target_rms`, scales every event so that its
/// active segment sits at `snr_db` and adds everything up.
pub fn synthesize_mixture(spec: &MixSpec) -> Result<SynthesizedMixture> {
    let music = rms_normalize(&spec.music, spec.target_rms)?;
    let rate = music.sample_rate;
    let len = music.len();
    let music_samples: Vec<f64> = music.samples.iter().map(|s| snap(*s)).collect();

    let mut placed: Vec<(Segment, &AudioSignal)> = Vec::with_capacity(spec.events.len());
    for ev in &spec.events {
        if ev.signal.sample_rate != rate {
            return Err(Error::Mixture(format!(
                "event at {} Hz in {rate} Hz music",
                ev.signal.sample_rate
            )));
        }
        if !(ev.onset_secs >= 0.0) {
            return Err(Error::Mixture(format!("negative onset {}", ev.onset_secs)));
        }
        let start = (ev.onset_secs * rate as f64).round() as usize;
        let end = start + ev.signal.len();
        if end > len {
            return Err(Error::Mixture(format!(
                "event at {:.3}s ends at sample {end}, past the music end {len}",
                ev.onset_secs
            )));
        }
        placed.push((Segment { start, end }, &ev.signal));
    }
    placed.sort_by_key(|(seg, _)| seg.start);
    for pair in placed.windows(2) {
        if pair[1].0.start < pair[0].0.end {
            return Err(Error::Mixture(format!(
                "events overlap at samples {}..{} and {}..{}",
                pair[0].0.start, pair[0].0.end, pair[1].0.start, pair[1].0.end
            )));
        }
    }

    let ratio = 10f64.powf(spec.snr_db / 10.0);
    let mut interference = vec![0.0; len];
    let mut segments = Vec::with_capacity(placed.len());
    let mut gains = Vec::with_capacity(placed.len());
    for (seg, signal) in placed {
        let music_energy: f64 = music_samples[seg.start..seg.end].iter().map(|s| s * s).sum();
        let event_energy = signal.energy();
        if event_energy == 0.0 {
            return Err(Error::Silent("interference event"));
        }
        if music_energy == 0.0 {
            return Err(Error::Mixture(format!(
                "music is silent under the event at samples {}..{}",
                seg.start, seg.end
            )));
        }
        let gain = (music_energy / (event_energy * ratio)).sqrt();
        for (dst, s) in interference[seg.start..seg.end].iter_mut().zip(&signal.samples) {
            *dst = snap(s * gain);
        }
        segments.push(seg);
        gains.push(gain);
    }

    let mixture = music_samples.iter().zip(&interference).map(|(m, i)| m + i).collect();
    Ok(SynthesizedMixture {
        mixture: AudioSignal::new(mixture, rate)?,
        music: AudioSignal::new(music_samples, rate)?,
        interference: AudioSignal::new(interference, rate)?,
        segments,
        gains,
    })
}

/// Orthogonal decomposition of an estimate.
#[derive(Debug, Clone)]
pub struct BssDecomposition {
    pub target: Vec<f64>,
    pub interference: Vec<f64>,
    pub artifacts: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BssScores {
    pub sdr_db: f64,
    pub sir_db: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn energy(a: &[f64]) -> f64 {
    dot(a, a)
}

/// `10 log10(num / den)` clamped to `[-DB_CAP, DB_CAP]`.
pub fn capped_db(num: f64, den: f64) -> f64 {
    if den <= 0.0 {
        return if num > 0.0 { DB_CAP } else { 0.0 };
    }
    if num <= 0.0 {
        return -DB_CAP;
    }
    (10.0 * (num / den).log10()).clamp(-DB_CAP, DB_CAP)
}

pub fn bss_decompose(estimate: &[f64], source: &[f64], interference: &[f64]) -> Result<BssDecomposition> {
    if estimate.len() != source.len() || estimate.len() != interference.len() {
        return Err(Error::invalid(format!(
            "length mismatch: estimate {}, source {}, interference {}",
            estimate.len(),
            source.len(),
            interference.len()
        )));
    }
    let ss = energy(source);
    if ss == 0.0 {
        return Err(Error::Silent("true source"));
    }
    let nn = energy(interference);
    let sn = dot(source, interference);
    let se = dot(source, estimate);
    let ne = dot(interference, estimate);

    let alpha = se / ss;
    let target: Vec<f64> = source.iter().map(|s| alpha * s).collect();

    // least-squares coefficients of the estimate on {source, interference}
    let det = ss * nn - sn * sn;
    let (a, b) = if nn > 0.0 && det > 1e-12 * ss * nn {
        ((se * nn - ne * sn) / det, (ne * ss - se * sn) / det)
    } else {
        (alpha, 0.0)
    };
    let mut interf = Vec::with_capacity(estimate.len());
    let mut artifacts = Vec::with_capacity(estimate.len());
    for ((e, s), n) in estimate.iter().zip(source).zip(interference) {
        let projected = a * s + b * n;
        interf.push(projected - alpha * s);
        artifacts.push(e - projected);
    }
    Ok(BssDecomposition {
        target,
        interference: interf,
        artifacts,
    })
}

pub fn bss_eval(estimate: &[f64], source: &[f64], interference: &[f64]) -> Result<BssScores> {
    let d = bss_decompose(estimate, source, interference)?;
    let target = energy(&d.target);
    let distortion: f64 = d
        .interference
        .iter()
        .zip(&d.artifacts)
        .map(|(i, a)| (i + a) * (i + a))
        .sum();
    Ok(BssScores {
        sdr_db: capped_db(target, distortion),
        sir_db: capped_db(target, energy(&d.interference)),
    })
}

/// Improvement of the estimate over the unprocessed mixture: `(NSDR, NSIR)`.
pub fn normalized_scores(sdr_est: f64, sir_est: f64, sdr_mix: f64, sir_mix: f64) -> (f64, f64) {
    (sdr_est - sdr_mix, sir_est - sir_mix)
}

fn check_lengths(estimate: &AudioSignal, source: &AudioSignal, interference: &AudioSignal) -> Result<()> {
    if estimate.len() != source.len() || source.len() != interference.len() {
        return Err(Error::invalid(format!(
            "length mismatch: estimate {}, source {}, interference {}",
            estimate.len(),
            source.len(),
            interference.len()
        )));
    }
    Ok(())
}

fn normalized_on(estimate: &[f64], source: &[f64], interference: &[f64]) -> Result<(BssScores, BssScores)> {
    let mixture: Vec<f64> = source.iter().zip(interference).map(|(s, n)| s + n).collect();
    Ok((
        bss_eval(estimate, source, interference)?,
        bss_eval(&mixture, source, interference)?,
    ))
}

/// Mean `(NSDR, NSIR)` over the given segments, scoring each excised
/// segment separately against the mixture `source + interference`.
pub fn segment_scores(
    estimate: &AudioSignal,
    source: &AudioSignal,
    interference: &AudioSignal,
    segments: &[Segment],
) -> Result<(f64, f64)> {
    check_lengths(estimate, source, interference)?;
    if segments.is_empty() {
        return Err(Error::invalid("no segments to score"));
    }
    let mut sums = (0.0, 0.0);
    for seg in segments {
        if seg.is_empty() || seg.end > source.len() {
            return Err(Error::invalid(format!(
                "segment {}..{} outside 0..{}",
                seg.start,
                seg.end,
                source.len()
            )));
        }
        let r = seg.start..seg.end;
        let (est, mix) = normalized_on(
            &estimate.samples[r.clone()],
            &source.samples[r.clone()],
            &interference.samples[r],
        )?;
        let (nsdr, nsir) = normalized_scores(est.sdr_db, est.sir_db, mix.sdr_db, mix.sir_db);
        sums.0 += nsdr;
        sums.1 += nsir;
    }
    let n = segments.len() as f64;
    Ok((sums.0 / n, sums.1 / n))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub sdr_db: f64,
    pub sir_db: f64,
    pub nsdr_db: f64,
    pub nsir_db: f64,
    pub segment_nsdr_db: f64,
    pub segment_nsir_db: f64,
    pub segments: Vec<Segment>,
}

/// Whole-file and per-segment scores. With no segments the segment scores
/// repeat the whole-file ones.
pub fn evaluate(
    estimate: &AudioSignal,
    source: &AudioSignal,
    interference: &AudioSignal,
    segments: &[Segment],
) -> Result<EvalReport> {
    check_lengths(estimate, source, interference)?;
    let (est, mix) = normalized_on(&estimate.samples, &source.samples, &interference.samples)?;
    let (nsdr, nsir) = normalized_scores(est.sdr_db, est.sir_db, mix.sdr_db, mix.sir_db);
    let (seg_nsdr, seg_nsir) = if segments.is_empty() {
        (nsdr, nsir)
    } else {
        segment_scores(estimate, source, interference, segments)?
    };
    Ok(EvalReport {
        sdr_db: est.sdr_db,
        sir_db: est.sir_db,
        nsdr_db: nsdr,
        nsir_db: nsir,
        segment_nsdr_db: seg_nsdr,
        segment_nsir_db: seg_nsir,
        segments: segments.to_vec(),
    })
}

impl EvalReport {
    pub const CSV_HEADER: &'static str = "sdr_db,sir_db,nsdr_db,nsir_db,segment_nsdr_db,segment_nsir_db,segments";

    pub fn csv_row(&self) -> String {
        let segs: Vec<String> = self.segments.iter().map(|s| format!("{}-{}", s.start, s.end)).collect();
        format!(
            "{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
            self.sdr_db,
            self.sir_db,
            self.nsdr_db,
            self.nsir_db,
            self.segment_nsdr_db,
            self.segment_nsir_db,
            segs.join(";")
        )
    }

    pub fn to_csv(&self) -> String {
        format!("{}\n{}\n", Self::CSV_HEADER, self.csv_row())
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<16}{:>10}", "metric", "dB");
        for (name, v) in [
            ("SDR", self.sdr_db),
            ("SIR", self.sir_db),
            ("NSDR", self.nsdr_db),
            ("NSIR", self.nsir_db),
            ("segment NSDR", self.segment_nsdr_db),
            ("segment NSIR", self.segment_nsir_db),
        ] {
            let _ = writeln!(out, "{name:<16}{v:>10.2}");
        }
        let _ = writeln!(out, "segments: {}", self.segments.len());
        out
    }
}

pub fn write_segments_csv(path: impl AsRef<Path>, segments: &[Segment]) -> Result<()> {
    let mut out = String::from("start_sample,end_sample\n");
    for s in segments {
        let _ = writeln!(out, "{},{}", s.start, s.end);
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_segments_csv(path: impl AsRef<Path>) -> Result<Vec<Segment>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let mut segments = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (i == 0 && line.starts_with("start")) {
            continue;
        }
        let parsed = line
            .split_once(',')
            .and_then(|(a, b)| Some((a.trim().parse().ok()?, b.trim().parse().ok()?)));
        match parsed {
            Some((start, end)) if end > start => segments.push(Segment { start, end }),
            _ => return Err(Error::format(path, format!("bad segment line {}: `{line}`", i + 1))),
        }
    }
    Ok(segments)
}

/// Ground-truth frame labels: a frame is active when its centre falls
/// inside one of the segments.
pub fn segments_to_frames(segments: &[Segment], framing: &Framing, frames: usize) -> Vec<bool> {
    (0..frames)
        .map(|t| {
            let c = framing.frame_center(t);
            c >= 0 && segments.iter().any(|s| (s.start as i64..s.end as i64).contains(&c))
        })
        .collect()
}

/// Fraction of ground-truth active frames that are flagged.
pub fn frame_recall(truth: &[bool], predicted: &[bool]) -> f64 {
    let positives = truth.iter().filter(|t| **t).count();
    if positives == 0 {
        return 1.0;
    }
    let hits = truth.iter().zip(predicted).filter(|(t, p)| **t && **p).count();
    hits as f64 / positives as f64
}
