//! STFT analysis and overlap-add resynthesis, magnitude extraction and
//! Gaussian smoothing along the frequency axis.
//!
//! Spectrograms are stored as `F x T` matrices (bins x frames). Before
//! analysis the signal is zero-padded by one full window at both ends so
//! that every original sample receives full overlap-add weight; the padding
//! and the original length travel with the spectrogram in [`Framing`] and
//! are removed again by [`istft`].

use std::f64::consts::PI;

use ndarray::{Array1, Array2, ArrayView1, Axis, Zip};
use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::audio::AudioSignal;
use crate::error::{Error, Result};

/// Relative tolerance for the constant-overlap-add check of the squared window.
const COLA_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WindowKind {
    /// Periodic Hann window.
    #[default]
    Hann,
    Rectangular,
}

impl WindowKind {
    pub fn coefficients(self, size: usize) -> Vec<f64> {
        match self {
            WindowKind::Hann => (0..size)
                .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / size as f64).cos())
                .collect(),
            WindowKind::Rectangular => vec![1.0; size],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            WindowKind::Hann => "hann",
            WindowKind::Rectangular => "rectangular",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "hann" => Some(WindowKind::Hann),
            "rectangular" | "rect" => Some(WindowKind::Rectangular),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StftParams {
    pub window_size: usize,
    pub hop: usize,
    pub window: WindowKind,
}

impl Default for StftParams {
    fn default() -> Self {
        Self {
            window_size: 4096,
            hop: 1024,
            window: WindowKind::Hann,
        }
    }
}

impl StftParams {
    pub fn new(window_size: usize, hop: usize) -> Self {
        Self {
            window_size,
            hop,
            window: WindowKind::Hann,
        }
    }

    pub fn bins(&self) -> usize {
        self.window_size / 2 + 1
    }

    /// Checks the framing and returns the overlap-add normalization constant
    /// `sum_k w(n - k*hop)^2`, which must not depend on `n`.
    pub fn validate(&self) -> Result<f64> {
        if self.window_size < 2 || self.window_size % 2 != 0 {
            return Err(Error::invalid(format!(
                "window size must be even and at least 2, got {}",
                self.window_size
            )));
        }
        if self.hop == 0 {
            return Err(Error::invalid("hop must be positive"));
        }
        if self.hop > self.window_size {
            return Err(Error::invalid(format!(
                "hop {} exceeds window size {}",
                self.hop, self.window_size
            )));
        }
        let w = self.window.coefficients(self.window_size);
        let mut sums = vec![0.0; self.hop];
        for (n, wn) in w.iter().enumerate() {
            sums[n % self.hop] += wn * wn;
        }
        let max = sums.iter().cloned().fold(f64::MIN, f64::max);
        let min = sums.iter().cloned().fold(f64::MAX, f64::min);
        if max <= 0.0 || (max - min) > COLA_TOLERANCE * max {
            return Err(Error::invalid(format!(
                "{} window of {} samples is not overlap-add constant at hop {}",
                self.window.name(),
                self.window_size,
                self.hop
            )));
        }
        Ok(sums.iter().sum::<f64>() / self.hop as f64)
    }
}

/// Framing metadata shared by complex and magnitude spectrograms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Framing {
    pub window_size: usize,
    pub hop: usize,
    pub window: WindowKind,
    pub sample_rate: u32,
    /// Zeros prepended before analysis.
    pub pad: usize,
    /// Number of samples of the analyzed signal, excluding padding.
    pub signal_len: usize,
}

impl Framing {
    pub fn params(&self) -> StftParams {
        StftParams {
            window_size: self.window_size,
            hop: self.hop,
            window: self.window,
        }
    }

    pub fn bins(&self) -> usize {
        self.window_size / 2 + 1
    }

    /// Position of the centre of frame `t` in samples of the original
    /// (unpadded) signal. May be negative for frames in the leading padding.
    pub fn frame_center(&self, t: usize) -> i64 {
        (t * self.hop + self.window_size / 2) as i64 - self.pad as i64
    }

    pub fn frame_center_secs(&self, t: usize) -> f64 {
        self.frame_center(t) as f64 / self.sample_rate as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    pub bins: Array2<Complex64>,
    pub framing: Framing,
}

impl ComplexSpectrogram {
    /// Wraps raw bins with no padding; the resynthesized length is the full
    /// overlap-add span `window_size + (T - 1) * hop`.
    pub fn new(
        bins: Array2<Complex64>,
        params: StftParams,
        sample_rate: u32,
    ) -> Result<Self> {
        let frames = bins.ncols();
        let framing = Framing {
            window_size: params.window_size,
            hop: params.hop,
            window: params.window,
            sample_rate,
            pad: 0,
            signal_len: params.window_size + frames.saturating_sub(1) * params.hop,
        };
        let spec = Self { bins, framing };
        spec.check()?;
        Ok(spec)
    }

    pub fn check(&self) -> Result<()> {
        if self.bins.nrows() != self.framing.bins() {
            return Err(Error::Framing(format!(
                "{} rows but window size {} implies {} bins",
                self.bins.nrows(),
                self.framing.window_size,
                self.framing.bins()
            )));
        }
        if self.bins.ncols() == 0 {
            return Err(Error::Framing("spectrogram has no frames".into()));
        }
        Ok(())
    }

    pub fn shape(&self) -> (usize, usize) {
        self.bins.dim()
    }

    pub fn frames(&self) -> usize {
        self.bins.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MagSpectrogram {
    pub values: Array2<f64>,
    pub framing: Framing,
}

impl MagSpectrogram {
    pub fn new(values: Array2<f64>, framing: Framing) -> Result<Self> {
        if values.nrows() != framing.bins() {
            return Err(Error::Framing(format!(
                "{} rows but window size {} implies {} bins",
                values.nrows(),
                framing.window_size,
                framing.bins()
            )));
        }
        if values.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::invalid("magnitude spectrogram has negative or NaN entries"));
        }
        Ok(Self { values, framing })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.dim()
    }

    pub fn frames(&self) -> usize {
        self.values.ncols()
    }

    /// Re-interprets the magnitudes as zero-phase complex values.
    pub fn to_complex(&self) -> ComplexSpectrogram {
        ComplexSpectrogram {
            bins: self.values.mapv(|v| Complex64::new(v, 0.0)),
            framing: self.framing,
        }
    }

    pub fn smoothed(&self, sigma: f64) -> Result<Self> {
        Ok(Self {
            values: smooth_frequency(&self.values, sigma)?,
            framing: self.framing,
        })
    }
}

pub fn stft(signal: &AudioSignal, params: StftParams) -> Result<ComplexSpectrogram> {
    if signal.is_empty() {
        return Err(Error::EmptySignal);
    }
    params.validate()?;
    let n = params.window_size;
    let hop = params.hop;
    let len = signal.len();
    let frames = (len + n).div_ceil(hop) + 1;
    let padded_len = (frames - 1) * hop + n;

    let mut padded = vec![0.0; padded_len];
    padded[n..n + len].copy_from_slice(&signal.samples);

    let window = params.window.coefficients(n);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
    let mut buf = vec![Complex64::default(); n];
    let bins_count = params.bins();
    let mut bins = Array2::<Complex64>::zeros((bins_count, frames));

    for (t, mut column) in bins.axis_iter_mut(Axis(1)).enumerate() {
        let start = t * hop;
        for ((b, x), w) in buf.iter_mut().zip(&padded[start..start + n]).zip(&window) {
            *b = Complex64::new(x * w, 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for (dst, src) in column.iter_mut().zip(&buf[..bins_count]) {
            *dst = *src;
        }
    }

    Ok(ComplexSpectrogram {
        bins,
        framing: Framing {
            window_size: n,
            hop,
            window: params.window,
            sample_rate: signal.sample_rate,
            pad: n,
            signal_len: len,
        },
    })
}

pub fn istft(spec: &ComplexSpectrogram) -> Result<AudioSignal> {
    spec.check()?;
    let framing = spec.framing;
    let cola = framing.params().validate()?;
    let n = framing.window_size;
    let hop = framing.hop;
    let frames = spec.frames();
    let total = n + (frames - 1) * hop;
    if framing.pad + framing.signal_len > total {
        return Err(Error::Framing(format!(
            "signal span {}+{} exceeds overlap-add span {total}",
            framing.pad, framing.signal_len
        )));
    }

    let window = framing.window.coefficients(n);
    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(n);
    let mut scratch = vec![Complex64::default(); ifft.get_inplace_scratch_len()];
    let mut buf = vec![Complex64::default(); n];
    let mut out = vec![0.0; total];
    let half = n / 2;
    let scale = 1.0 / (n as f64 * cola);

    for (t, column) in spec.bins.axis_iter(Axis(1)).enumerate() {
        buf[0] = Complex64::new(column[0].re, 0.0);
        buf[half] = Complex64::new(column[half].re, 0.0);
        for k in 1..half {
            buf[k] = column[k];
            buf[n - k] = column[k].conj();
        }
        ifft.process_with_scratch(&mut buf, &mut scratch);
        let start = t * hop;
        for ((o, b), w) in out[start..start + n].iter_mut().zip(&buf).zip(&window) {
            *o += b.re * w * scale;
        }
    }

    let samples = out[framing.pad..framing.pad + framing.signal_len].to_vec();
    AudioSignal::new(samples, framing.sample_rate)
}

pub fn magnitude(spec: &ComplexSpectrogram) -> MagSpectrogram {
    MagSpectrogram {
        values: spec.bins.mapv(|c| c.norm()),
        framing: spec.framing,
    }
}

/// Normalized Gaussian taps for offsets `-r..=r`, `r = ceil(3 * sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma == 0.0 {
        return vec![1.0];
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let mut taps: Vec<f64> = (-radius..=radius)
        .map(|j| (-(j * j) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|v| *v /= total);
    taps
}

/// Index into `0..len` under half-sample symmetric extension
/// (`x[-1] = x[0]`, `x[len] = x[len - 1]`), folding as often as needed.
fn reflect(i: i64, len: usize) -> usize {
    let period = 2 * len as i64;
    let m = i.rem_euclid(period);
    if m < len as i64 {
        m as usize
    } else {
        (period - 1 - m) as usize
    }
}

/// Convolves every column with a truncated, normalized Gaussian of standard
/// deviation `sigma` bins.
///
/// Edges use symmetric extension. With an even kernel this makes the
/// smoothing operator a symmetric matrix with unit row sums, so both
/// constant columns and column sums are preserved exactly.
pub fn smooth_frequency(values: &Array2<f64>, sigma: f64) -> Result<Array2<f64>> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(format!("sigma must be a finite value >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(values.clone());
    }
    let taps = gaussian_kernel(sigma);
    let radius = (taps.len() / 2) as i64;
    let rows = values.nrows();
    let mut out = Array2::zeros(values.dim());
    Zip::from(out.columns_mut())
        .and(values.columns())
        .par_for_each(|mut dst, src| smooth_column(src, &mut dst, &taps, radius, rows));
    Ok(out)
}

fn smooth_column(
    src: ArrayView1<f64>,
    dst: &mut ndarray::ArrayViewMut1<f64>,
    taps: &[f64],
    radius: i64,
    rows: usize,
) {
    for f in 0..rows {
        let mut acc = 0.0;
        for (j, tap) in taps.iter().enumerate() {
            acc += tap * src[reflect(f as i64 + j as i64 - radius, rows)];
        }
        dst[f] = acc;
    }
}

/// Column energies `sum_f |X(f,t)|^2`.
pub fn frame_energies(spec: &ComplexSpectrogram) -> Array1<f64> {
    spec.bins
        .map_axis(Axis(0), |col| col.iter().map(|c| c.norm_sqr()).sum())
}
