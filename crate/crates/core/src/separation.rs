//! Soft-mask separation of the complex mixture spectrogram.

use ndarray::{Array2, Zip};
use num_complex::Complex64;

use crate::audio::AudioSignal;
use crate::error::{Error, Result};
use crate::spectral::{istft, ComplexSpectrogram};

#[derive(Debug, Clone)]
pub struct SeparationResult {
    pub music: AudioSignal,
    pub interference: AudioSignal,
    pub music_spec: ComplexSpectrogram,
    pub interference_spec: ComplexSpectrogram,
    pub music_mag: Array2<f64>,
    pub noise_mag: Array2<f64>,
    pub mask: Array2<f64>,
}

/// `max(X - S, 0)` element-wise.
pub fn noise_estimate(x_bar: &Array2<f64>, s_bar: &Array2<f64>) -> Result<Array2<f64>> {
    if x_bar.dim() != s_bar.dim() {
        return Err(Error::ShapeMismatch {
            expected: x_bar.dim(),
            actual: s_bar.dim(),
        });
    }
    Ok(Zip::from(x_bar).and(s_bar).map_collect(|&x, &s| (x - s).max(0.0)))
}

/// `S / (S + N)`, with bins where both vanish assigned to the music.
pub fn soft_mask(s_bar: &Array2<f64>, n_bar: &Array2<f64>) -> Result<Array2<f64>> {
    if s_bar.dim() != n_bar.dim() {
        return Err(Error::ShapeMismatch {
            expected: s_bar.dim(),
            actual: n_bar.dim(),
        });
    }
    Ok(Zip::from(s_bar).and(n_bar).map_collect(|&s, &n| {
        let total = s + n;
        if total > 0.0 {
            (s / total).clamp(0.0, 1.0)
        } else {
            1.0
        }
    }))
}

/// Splits `x` into `(music, interference)` close to `(m, x - m)` that add
/// back to `x` exactly in floating point. Requires `|m| <= |x|`, which a
/// mask in `[0, 1]` guarantees: the difference `x - fl(x - m)` is then
/// representable (Dekker's fast two-sum argument).
fn exact_split(x: f64, m: f64) -> (f64, f64) {
    let i = x - m;
    (x - i, i)
}

/// Splits `x` into music and interference with the mask built from the
/// music magnitude estimate, then resynthesizes both.
///
/// Music and interference bins add back to `X` bit for bit.
pub fn soft_mask_separate(x: &ComplexSpectrogram, s_bar: &Array2<f64>) -> Result<SeparationResult> {
    x.check()?;
    let x_bar = x.bins.mapv(|c| c.norm());
    let noise_mag = noise_estimate(&x_bar, s_bar)?;
    let mask = soft_mask(s_bar, &noise_mag)?;

    let mut music_bins = Array2::<Complex64>::zeros(x.bins.dim());
    let mut interference_bins = Array2::<Complex64>::zeros(x.bins.dim());
    Zip::from(&mut music_bins)
        .and(&mut interference_bins)
        .and(&x.bins)
        .and(&mask)
        .for_each(|s, n, &c, &m| {
            let (sr, nr) = exact_split(c.re, c.re * m);
            let (si, ni) = exact_split(c.im, c.im * m);
            *s = Complex64::new(sr, si);
            *n = Complex64::new(nr, ni);
        });
    let music_spec = ComplexSpectrogram {
        bins: music_bins,
        framing: x.framing,
    };
    let interference_spec = ComplexSpectrogram {
        bins: interference_bins,
        framing: x.framing,
    };
    Ok(SeparationResult {
        music: istft(&music_spec)?,
        interference: istft(&interference_spec)?,
        music_spec,
        interference_spec,
        music_mag: s_bar.clone(),
        noise_mag,
        mask,
    })
}
