//! Kernel additive modelling of the music magnitude.
//!
//! For each frame to be filtered, the kernel selects the `k` frames most
//! similar to it in a search spectrogram (the NMF music estimate, optionally
//! smoothed along frequency) and the clean music magnitude is estimated as
//! the per-bin median over those frames. Frame similarity compares a window
//! of `2 * context + 1` consecutive frames around both candidates.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2};
use rayon::prelude::*;

use crate::detection::InterferenceIndicator;
use crate::error::{Error, Result};
use crate::spectral::smooth_frequency;

/// Number of query frames handled per parallel work item.
const QUERY_CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelConfig {
    pub k: usize,
    /// Temporal extent: frames compared on each side of the candidates.
    pub context: usize,
    /// Std of the Gaussian applied to the search spectrogram, in bins.
    pub sigma: f64,
    /// Use the NMF estimate instead of the mixture for flagged neighbours.
    pub adaptive_substitution: bool,
    /// Only re-estimate flagged frames; pass the rest through.
    pub filter_only_flagged: bool,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            k: 10,
            context: 2,
            sigma: 1.0,
            adaptive_substitution: true,
            filter_only_flagged: true,
        }
    }
}

impl KernelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::invalid("k must be at least 1"));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::invalid(format!("sigma must be >= 0, got {}", self.sigma)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbour {
    pub frame: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Neighbourhood {
    pub query_frame: usize,
    /// Sorted by distance, then frame index.
    pub neighbours: Vec<Neighbour>,
}

impl Neighbourhood {
    pub fn frames(&self) -> Vec<usize> {
        self.neighbours.iter().map(|n| n.frame).collect()
    }
}

#[inline]
fn sq_dist<'a>(a: impl Iterator<Item = &'a f64>, b: impl Iterator<Item = &'a f64>) -> f64 {
    a.zip(b).fold(0.0, |acc, (p, q)| acc + (p - q) * (p - q))
}

#[inline]
fn column_sq_dist(x: &Array2<f64>, a: usize, b: usize) -> f64 {
    sq_dist(x.column(a).iter(), x.column(b).iter())
}

/// Valid context offsets for the pair `(t, t2)`: both `t + c` and `t2 + c`
/// must be inside `0..frames`.
fn offsets(t: usize, t2: usize, context: usize, frames: usize) -> std::ops::RangeInclusive<i64> {
    let lo = -(t.min(t2).min(context) as i64);
    let hi = ((frames - 1 - t.max(t2)).min(context)) as i64;
    lo..=hi
}

/// Squared Euclidean distance between frames `t` and `t2`, accumulated over
/// the context offsets valid for both and divided by their count.
pub fn context_distance(x: &Array2<f64>, t: usize, t2: usize, context: usize) -> Result<f64> {
    let frames = x.ncols();
    for idx in [t, t2] {
        if idx >= frames {
            return Err(Error::FrameOutOfRange { index: idx, frames });
        }
    }
    let range = offsets(t, t2, context, frames);
    let count = (range.end() - range.start() + 1) as f64;
    let mut total = 0.0;
    for c in range {
        total += column_sq_dist(x, (t as i64 + c) as usize, (t2 as i64 + c) as usize);
    }
    Ok(total / count)
}

fn select_nearest(query: usize, distances: Vec<f64>, k: usize) -> Neighbourhood {
    let mut ranked: Vec<Neighbour> = distances
        .into_iter()
        .enumerate()
        .map(|(frame, distance)| Neighbour { frame, distance })
        .collect();
    let order = |a: &Neighbour, b: &Neighbour| {
        a.distance
            .total_cmp(&b.distance)
            .then((a.frame != query).cmp(&(b.frame != query)))
            .then(a.frame.cmp(&b.frame))
    };
    if k < ranked.len() {
        ranked.select_nth_unstable_by(k - 1, order);
        ranked.truncate(k);
    }
    ranked.sort_by(order);
    Neighbourhood {
        query_frame: query,
        neighbours: ranked,
    }
}

/// The `k` frames closest to `t` under [`context_distance`]. The query frame
/// is always first; remaining ties go to the lower frame index.
pub fn find_neighbours(x_search: &Array2<f64>, t: usize, config: &KernelConfig) -> Result<Neighbourhood> {
    config.validate()?;
    let frames = x_search.ncols();
    if t >= frames {
        return Err(Error::FrameOutOfRange { index: t, frames });
    }
    if frames < config.k {
        return Err(Error::invalid(format!("{frames} frames is fewer than k = {}", config.k)));
    }
    let distances = (0..frames)
        .map(|t2| context_distance(x_search, t, t2, config.context))
        .collect::<Result<Vec<_>>>()?;
    Ok(select_nearest(t, distances, config.k))
}

/// Neighbourhood search for many query frames. Rows of plain frame-to-frame
/// distances are computed once and shared by all queries whose context
/// touches them; results equal [`find_neighbours`] bit for bit.
pub fn find_neighbours_batch(
    x_search: &Array2<f64>,
    queries: &[usize],
    config: &KernelConfig,
) -> Result<Vec<Neighbourhood>> {
    config.validate()?;
    let frames = x_search.ncols();
    if let Some(&bad) = queries.iter().find(|&&t| t >= frames) {
        return Err(Error::FrameOutOfRange { index: bad, frames });
    }
    if frames < config.k && !queries.is_empty() {
        return Err(Error::invalid(format!("{frames} frames is fewer than k = {}", config.k)));
    }
    let mut sorted = queries.to_vec();
    sorted.sort_unstable();
    sorted.dedup();

    let c = config.context;
    // one contiguous row per frame
    let by_frame = x_search.t().as_standard_layout().into_owned();
    let found: Vec<Neighbourhood> = sorted
        .par_chunks(QUERY_CHUNK)
        .flat_map_iter(|chunk| {
            // rows keyed by frame index, evicted once no later query needs them
            let mut cache: std::collections::BTreeMap<usize, Vec<f64>> = Default::default();
            chunk
                .iter()
                .map(|&t| {
                    let lo = t.saturating_sub(c);
                    let hi = (t + c).min(frames - 1);
                    cache.retain(|&row, _| row >= lo);
                    for row in lo..=hi {
                        cache.entry(row).or_insert_with(|| {
                            let r = by_frame.row(row);
                            by_frame.rows().into_iter().map(|o| sq_dist(r.iter(), o.iter())).collect()
                        });
                    }
                    let distances = (0..frames)
                        .map(|t2| {
                            let range = offsets(t, t2, c, frames);
                            let count = (range.end() - range.start() + 1) as f64;
                            let mut total = 0.0;
                            for off in range {
                                let row = (t as i64 + off) as usize;
                                total += cache[&row][(t2 as i64 + off) as usize];
                            }
                            total / count
                        })
                        .collect();
                    select_nearest(t, distances, config.k)
                })
                .collect::<Vec<_>>()
        })
        .collect();

    // restore the caller's order
    Ok(queries
        .iter()
        .map(|t| found[sorted.binary_search(t).unwrap()].clone())
        .collect())
}

/// Gathers the neighbour columns fed to the median: the mixture magnitude,
/// or the NMF estimate for flagged neighbours when `substitute` is set.
pub fn assemble_neighbour_data(
    x_bar: &Array2<f64>,
    x_tilde: &Array2<f64>,
    indicator: &InterferenceIndicator,
    nb: &Neighbourhood,
    substitute: bool,
) -> Result<Array2<f64>> {
    if x_bar.dim() != x_tilde.dim() {
        return Err(Error::ShapeMismatch {
            expected: x_bar.dim(),
            actual: x_tilde.dim(),
        });
    }
    if indicator.len() != x_bar.ncols() {
        return Err(Error::ShapeMismatch {
            expected: (1, x_bar.ncols()),
            actual: (1, indicator.len()),
        });
    }
    let mut data = Array2::zeros((x_bar.nrows(), nb.neighbours.len()));
    for (mut col, n) in data.columns_mut().into_iter().zip(&nb.neighbours) {
        if n.frame >= x_bar.ncols() {
            return Err(Error::FrameOutOfRange {
                index: n.frame,
                frames: x_bar.ncols(),
            });
        }
        let source = if substitute && indicator.frames[n.frame] { x_tilde } else { x_bar };
        col.assign(&source.column(n.frame));
    }
    Ok(data)
}

/// Per-row median across columns; even counts average the two middle values.
pub fn median_estimate_frame(data: &Array2<f64>) -> Result<Array1<f64>> {
    let k = data.ncols();
    if k == 0 || data.nrows() == 0 {
        return Err(Error::invalid("median over an empty neighbourhood"));
    }
    let mut scratch = vec![0.0; k];
    Ok(data
        .rows()
        .into_iter()
        .map(|row| {
            scratch.iter_mut().zip(row.iter()).for_each(|(s, v)| *s = *v);
            median_in_place(&mut scratch)
        })
        .collect())
}

fn median_in_place(v: &mut [f64]) -> f64 {
    let odd = v.len() % 2 == 1;
    let mid = v.len() / 2;
    let (lower, upper, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if odd {
        upper
    } else {
        let lower = lower.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}

#[derive(Debug, Clone)]
pub struct KamEstimate {
    pub music: Array2<f64>,
    pub neighbourhoods: Vec<Neighbourhood>,
}

impl KamEstimate {
    /// `query_frame,rank,neighbour_frame,distance` rows with a header line.
    pub fn neighbours_csv(&self) -> String {
        let mut out = String::from("query_frame,rank,neighbour_frame,distance\n");
        for nb in &self.neighbourhoods {
            for (rank, n) in nb.neighbours.iter().enumerate() {
                let _ = writeln!(out, "{},{rank},{},{}", nb.query_frame, n.frame, n.distance);
            }
        }
        out
    }

    pub fn write_neighbours_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.neighbours_csv())?;
        Ok(())
    }
}

/// Estimates the music magnitude `S`.
///
/// The neighbour search runs on `x_tilde` smoothed by `config.sigma`; the
/// median runs on unsmoothed columns. Frames that are not filtered are
/// copied from `x_bar` unchanged.
pub fn estimate_music(
    x_bar: &Array2<f64>,
    x_tilde: &Array2<f64>,
    indicator: &InterferenceIndicator,
    config: &KernelConfig,
) -> Result<KamEstimate> {
    config.validate()?;
    if x_bar.dim() != x_tilde.dim() {
        return Err(Error::ShapeMismatch {
            expected: x_bar.dim(),
            actual: x_tilde.dim(),
        });
    }
    let frames = x_bar.ncols();
    if indicator.len() != frames {
        return Err(Error::ShapeMismatch {
            expected: (1, frames),
            actual: (1, indicator.len()),
        });
    }
    let queries: Vec<usize> = (0..frames)
        .filter(|&t| !config.filter_only_flagged || indicator.frames[t])
        .collect();

    let mut music = x_bar.clone();
    if queries.is_empty() {
        return Ok(KamEstimate {
            music,
            neighbourhoods: Vec::new(),
        });
    }
    let search = smooth_frequency(x_tilde, config.sigma)?;
    let neighbourhoods = find_neighbours_batch(&search, &queries, config)?;
    for nb in &neighbourhoods {
        let data = assemble_neighbour_data(
            x_bar,
            x_tilde,
            indicator,
            nb,
            config.adaptive_substitution,
        )?;
        music
            .column_mut(nb.query_frame)
            .assign(&median_estimate_frame(&data)?);
    }
    Ok(KamEstimate {
        music,
        neighbourhoods,
    })
}
