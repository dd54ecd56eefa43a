//! Frame-wise interference detection from the activations of the fixed
//! (interference) templates.
//!
//! The summed activation per frame is normalized to a peak of one and then
//! decoded into a binary indicator with a two-state minimum-cost path:
//! staying in the clean state costs `max(0, a - threshold)`, staying in the
//! interference state costs `max(0, threshold - a)` and every state change
//! costs `switch_cost`.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nmf::Activations;
use crate::spectral::Framing;

#[derive(Debug, Clone, PartialEq)]
pub struct ActivityCurve {
    pub values: Vec<f64>,
    /// Peak of the raw column sums; 0 for an all-zero curve.
    pub normalization: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterferenceIndicator {
    pub frames: Vec<bool>,
    pub curve: ActivityCurve,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HmmParams {
    pub threshold: f64,
    pub switch_cost: f64,
}

impl Default for HmmParams {
    fn default() -> Self {
        Self {
            threshold: 0.15,
            switch_cost: 0.2,
        }
    }
}

impl HmmParams {
    pub fn new(threshold: f64, switch_cost: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(Error::invalid(format!("threshold {threshold} outside [0, 1]")));
        }
        if !(switch_cost >= 0.0) || !switch_cost.is_finite() {
            return Err(Error::invalid(format!("switch cost {switch_cost} must be >= 0")));
        }
        Ok(Self {
            threshold,
            switch_cost,
        })
    }

    /// Per-frame cost of being in `state` (false = clean, true = interference).
    #[inline]
    pub fn emission(&self, state: bool, activity: f64) -> f64 {
        if state {
            (self.threshold - activity).max(0.0)
        } else {
            (activity - self.threshold).max(0.0)
        }
    }
}

impl InterferenceIndicator {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn count(&self) -> usize {
        self.frames.iter().filter(|f| **f).count()
    }

    /// Indicator with every frame set to `value` and a flat curve.
    pub fn constant(len: usize, value: bool) -> Self {
        let v = if value { 1.0 } else { 0.0 };
        Self {
            frames: vec![value; len],
            curve: ActivityCurve {
                values: vec![v; len],
                normalization: v,
            },
        }
    }

    /// Maximal runs of flagged frames as inclusive `(first, last)` pairs.
    pub fn runs(&self) -> Vec<(usize, usize)> {
        let mut runs = Vec::new();
        let mut start = None;
        for (t, &on) in self.frames.iter().enumerate() {
            match (on, start) {
                (true, None) => start = Some(t),
                (false, Some(s)) => {
                    runs.push((s, t - 1));
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            runs.push((s, self.frames.len() - 1));
        }
        runs
    }

    /// `frame_index,activity,indicator` rows with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("frame_index,activity,indicator\n");
        for (t, (&on, a)) in self.frames.iter().zip(&self.curve.values).enumerate() {
            let _ = writeln!(out, "{t},{a},{}", u8::from(on));
        }
        out
    }

    /// One `start_s<TAB>end_s<TAB>interference` line per flagged run, in the
    /// time axis of the original signal.
    pub fn to_labels(&self, framing: &Framing) -> String {
        let sr = framing.sample_rate as f64;
        let half_hop = framing.hop as f64 / 2.0;
        let end_limit = framing.signal_len as f64 / sr;
        let mut out = String::new();
        for (first, last) in self.runs() {
            let start = ((framing.frame_center(first) as f64 - half_hop) / sr).max(0.0);
            let end = ((framing.frame_center(last) as f64 + half_hop) / sr).min(end_limit);
            if end > start {
                let _ = writeln!(out, "{start:.6}\t{end:.6}\tinterference");
            }
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn write_labels(&self, path: impl AsRef<Path>, framing: &Framing) -> Result<()> {
        std::fs::write(path, self.to_labels(framing))?;
        Ok(())
    }
}

/// Column sums of the interference activations, scaled to a peak of 1.
pub fn activity_curve(h_fixed: &Activations) -> ActivityCurve {
    let sums: Vec<f64> = h_fixed.values.columns().into_iter().map(|c| c.sum()).collect();
    let peak = sums.iter().cloned().fold(0.0, f64::max);
    if peak <= 0.0 {
        return ActivityCurve {
            values: vec![0.0; sums.len()],
            normalization: 0.0,
        };
    }
    ActivityCurve {
        values: sums.iter().map(|s| s / peak).collect(),
        normalization: peak,
    }
}

/// Minimum-cost binary path over the curve. Among equal-cost paths the one
/// that prefers the interference state, scanning from the last frame
/// backwards, wins.
pub fn decode_indicator(curve: &ActivityCurve, params: &HmmParams) -> InterferenceIndicator {
    let n = curve.values.len();
    let mut frames = vec![false; n];
    if n == 0 {
        return InterferenceIndicator {
            frames,
            curve: curve.clone(),
        };
    }

    // cost[s] = cheapest path ending in state s; back[t][s] = predecessor state
    let mut cost = [
        params.emission(false, curve.values[0]),
        params.emission(true, curve.values[0]),
    ];
    let mut back = vec![[false; 2]; n];
    for t in 1..n {
        let a = curve.values[t];
        let mut next = [0.0; 2];
        for (s, state) in [false, true].into_iter().enumerate() {
            let stay = cost[s];
            let switch = cost[1 - s] + params.switch_cost;
            // ties go to the interference predecessor
            let from_one = if state { stay <= switch } else { switch <= stay };
            back[t][s] = from_one;
            next[s] = stay.min(switch) + params.emission(state, a);
        }
        cost = next;
    }

    let mut state = cost[1] <= cost[0];
    for t in (0..n).rev() {
        frames[t] = state;
        state = back[t][usize::from(state)];
    }
    InterferenceIndicator {
        frames,
        curve: curve.clone(),
    }
}

/// Extends every flagged run by `margin` frames on both sides.
pub fn dilate_indicator(ind: &InterferenceIndicator, margin: usize) -> InterferenceIndicator {
    let n = ind.frames.len();
    let mut frames = vec![false; n];
    for (first, last) in ind.runs() {
        let lo = first.saturating_sub(margin);
        let hi = (last + margin).min(n - 1);
        frames[lo..=hi].iter_mut().for_each(|f| *f = true);
    }
    InterferenceIndicator {
        frames,
        curve: ind.curve.clone(),
    }
}
