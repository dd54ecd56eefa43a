//! Non-negative matrix factorization under the generalized Kullback-Leibler
//! divergence, with multiplicative updates.
//!
//! Two entry points:
//!
//! * [`train_dictionary`] factorizes exemplar spectrograms of the
//!   interference and keeps the templates.
//! * [`semi_supervised_factorize`] explains a mixture as
//!   `W_fixed H_fixed + W_free H_free`, leaving the trained templates
//!   untouched and learning the free (music) part from the data.
//!
//! All ratios and denominators are floored at [`EPS`].

use std::path::Path;

use ndarray::{Array1, Array2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::matrix_io;

pub const EPS: f64 = 1e-12;

/// Non-negative spectral templates, one per column, each summing to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    templates: Array2<f64>,
}

impl Dictionary {
    /// Validates and L1-normalizes the columns of `templates`.
    pub fn new(templates: Array2<f64>) -> Result<Self> {
        Self::normalized(templates).map(|(d, _)| d)
    }

    /// Like [`Dictionary::new`], also returning the original column norms.
    pub fn normalized(mut templates: Array2<f64>) -> Result<(Self, Array1<f64>)> {
        if templates.ncols() == 0 || templates.nrows() == 0 {
            return Err(Error::invalid("dictionary must have at least one template"));
        }
        if templates.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::invalid("dictionary entries must be finite and non-negative"));
        }
        let norms = templates.sum_axis(Axis(0));
        if norms.iter().any(|n| *n <= 0.0) {
            return Err(Error::invalid("dictionary has an all-zero template"));
        }
        for (mut col, n) in templates.columns_mut().into_iter().zip(norms.iter()) {
            col.mapv_inplace(|v| v / n);
        }
        Ok((Self { templates }, norms))
    }

    pub fn templates(&self) -> &Array2<f64> {
        &self.templates
    }

    pub fn bins(&self) -> usize {
        self.templates.nrows()
    }

    pub fn rank(&self) -> usize {
        self.templates.ncols()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        matrix_io::write_matrix(path, &self.templates)
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        matrix_io::write_matrix_csv(path, &self.templates)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let m = matrix_io::read_matrix(path)?;
        Self::new(m).map_err(|e| Error::format(path, e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Activations {
    pub values: Array2<f64>,
}

impl Activations {
    pub fn rank(&self) -> usize {
        self.values.nrows()
    }

    pub fn frames(&self) -> usize {
        self.values.ncols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NmfOptions {
    pub iters: usize,
    /// Early stop once the relative divergence improvement over `patience`
    /// sweeps falls below this. `None` runs all `iters` sweeps.
    pub tol: Option<f64>,
    pub patience: usize,
    pub seed: u64,
}

impl Default for NmfOptions {
    fn default() -> Self {
        Self {
            iters: 200,
            tol: Some(1e-5),
            patience: 10,
            seed: 0,
        }
    }
}

impl NmfOptions {
    pub fn fixed(iters: usize, seed: u64) -> Self {
        Self {
            iters,
            tol: None,
            patience: 10,
            seed,
        }
    }

    fn converged(&self, history: &[f64]) -> bool {
        let Some(tol) = self.tol else { return false };
        let n = history.len();
        if n <= self.patience {
            return false;
        }
        let before = history[n - 1 - self.patience];
        let now = history[n - 1];
        before <= 0.0 || (before - now) / before < tol
    }
}

/// Result of an unsupervised factorization.
#[derive(Debug, Clone)]
pub struct NmfFit {
    pub dictionary: Dictionary,
    pub activations: Activations,
    /// Divergence after initialization followed by one value per sweep.
    pub history: Vec<f64>,
}

impl NmfFit {
    pub fn final_divergence(&self) -> f64 {
        *self.history.last().unwrap_or(&0.0)
    }

    pub fn reconstruction(&self) -> Array2<f64> {
        self.dictionary.templates().dot(&self.activations.values)
    }
}

#[derive(Debug, Clone)]
pub struct SemiSupervisedDecomposition {
    pub w_fixed: Dictionary,
    pub h_fixed: Activations,
    pub w_free: Dictionary,
    pub h_free: Activations,
    pub final_divergence: f64,
    pub history: Vec<f64>,
}

impl SemiSupervisedDecomposition {
    /// `W_free H_free`, the rough music estimate.
    pub fn free_part(&self) -> Array2<f64> {
        self.w_free.templates().dot(&self.h_free.values)
    }

    /// `W_fixed H_fixed`, the interference part.
    pub fn fixed_part(&self) -> Array2<f64> {
        self.w_fixed.templates().dot(&self.h_fixed.values)
    }

    pub fn reconstruction(&self) -> Array2<f64> {
        self.fixed_part() + self.free_part()
    }
}

/// Generalized KL divergence `sum a ln(a/b) - a + b`, with `0 ln(0/b) = 0`
/// and `b` floored at [`EPS`] inside the logarithm.
pub fn kl_divergence(a: &Array2<f64>, b: &Array2<f64>) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::ShapeMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    Ok(Zip::from(a).and(b).fold(0.0, |acc, &x, &y| acc + kl_term(x, y)))
}

#[inline]
fn kl_term(a: f64, b: f64) -> f64 {
    if a <= 0.0 {
        return b;
    }
    (a * (a / b.max(EPS)).ln() - a + b).max(0.0)
}

fn uniform_matrix(rng: &mut ChaCha8Rng, shape: (usize, usize)) -> Array2<f64> {
    // random() is in [0, 1); flip it into (0, 1]
    Array2::from_shape_simple_fn(shape, || 1.0 - rng.random::<f64>())
}

/// `x / max(approx, EPS)`.
fn ratio(x: &Array2<f64>, approx: &Array2<f64>) -> Array2<f64> {
    Zip::from(x).and(approx).map_collect(|&x, &a| x / a.max(EPS))
}

/// One multiplicative KL update of activations `h` given the current full
/// model `approx`, i.e. `h <- h * (W^T (X / approx)) / (W^T J)`.
pub fn update_activations(
    x: &Array2<f64>,
    w: &Array2<f64>,
    h: &mut Array2<f64>,
    approx: &Array2<f64>,
) {
    let numer = w.t().dot(&ratio(x, approx));
    let denom = w.sum_axis(Axis(0));
    Zip::from(h.rows_mut())
        .and(numer.rows())
        .and(&denom)
        .for_each(|mut h_row, n_row, &d| {
            let d = d.max(EPS);
            Zip::from(&mut h_row).and(&n_row).for_each(|h, &n| *h *= n / d);
        });
}

/// One multiplicative KL update of templates `w` given the current full
/// model `approx`, i.e. `w <- w * ((X / approx) H^T) / (J H^T)`.
pub fn update_templates(
    x: &Array2<f64>,
    w: &mut Array2<f64>,
    h: &Array2<f64>,
    approx: &Array2<f64>,
) {
    let numer = ratio(x, approx).dot(&h.t());
    let denom = h.sum_axis(Axis(1));
    Zip::from(w.rows_mut()).and(numer.rows()).for_each(|mut w_row, n_row| {
        Zip::from(&mut w_row)
            .and(&n_row)
            .and(&denom)
            .for_each(|w, &n, &d| *w *= n / d.max(EPS));
    });
}

fn check_input(x: &Array2<f64>) -> Result<()> {
    if x.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::invalid("input matrix must be finite and non-negative"));
    }
    Ok(())
}

/// Factorizes `exemplars ~ W H` and returns L1-normalized templates, with
/// the template scale folded into the activations.
pub fn train_dictionary(exemplars: &Array2<f64>, rank: usize, opts: &NmfOptions) -> Result<NmfFit> {
    if rank < 1 {
        return Err(Error::invalid("rank must be at least 1"));
    }
    check_input(exemplars)?;
    let (bins, frames) = exemplars.dim();
    if frames < rank {
        return Err(Error::invalid(format!(
            "{frames} exemplar frames is fewer than rank {rank}"
        )));
    }
    if exemplars.iter().all(|v| *v == 0.0) {
        return Err(Error::Silent("exemplar spectrogram"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut w = uniform_matrix(&mut rng, (bins, rank));
    let mut h = uniform_matrix(&mut rng, (rank, frames));

    let mut approx = w.dot(&h);
    let mut history = vec![kl_divergence(exemplars, &approx)?];
    for _ in 0..opts.iters {
        update_activations(exemplars, &w, &mut h, &approx);
        approx = w.dot(&h);
        update_templates(exemplars, &mut w, &h, &approx);
        approx = w.dot(&h);
        history.push(kl_divergence(exemplars, &approx)?);
        if opts.converged(&history) {
            break;
        }
    }

    let (dictionary, h) = fold_scale(w, h)?;
    Ok(NmfFit {
        dictionary,
        activations: Activations { values: h },
        history,
    })
}

/// Normalizes the columns of `w` and moves their norms into the rows of `h`.
/// Templates that died during the updates are replaced by flat columns
/// with zero activation.
fn fold_scale(mut w: Array2<f64>, mut h: Array2<f64>) -> Result<(Dictionary, Array2<f64>)> {
    let bins = w.nrows() as f64;
    for (mut col, mut row) in w.columns_mut().into_iter().zip(h.rows_mut()) {
        if col.sum() <= 0.0 {
            col.fill(1.0 / bins);
            row.fill(0.0);
        }
    }
    let (dictionary, norms) = Dictionary::normalized(w)?;
    for (mut row, n) in h.rows_mut().into_iter().zip(norms.iter()) {
        row.mapv_inplace(|v| v * n);
    }
    Ok((dictionary, h))
}

/// Minimizes `D(X | W_fixed H_fixed + W_free H_free)` over `H_fixed`,
/// `W_free` and `H_free`. Each sweep updates `H_fixed`, then `H_free`, then
/// `W_free`, rebuilding the model before each step.
pub fn semi_supervised_factorize(
    x: &Array2<f64>,
    w_fixed: &Dictionary,
    free_rank: usize,
    opts: &NmfOptions,
) -> Result<SemiSupervisedDecomposition> {
    let (bins, frames) = x.dim();
    if w_fixed.bins() != bins {
        return Err(Error::ShapeMismatch {
            expected: (bins, w_fixed.rank()),
            actual: (w_fixed.bins(), w_fixed.rank()),
        });
    }
    if free_rank < 1 {
        return Err(Error::invalid("free rank must be at least 1"));
    }
    check_input(x)?;

    let wn = w_fixed.templates();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut hn = uniform_matrix(&mut rng, (w_fixed.rank(), frames));
    // free templates start on the same L1 scale as the fixed ones
    let mut ws = uniform_matrix(&mut rng, (bins, free_rank));
    for mut col in ws.columns_mut() {
        let norm = col.sum();
        col.mapv_inplace(|v| v / norm);
    }
    let mut hs = uniform_matrix(&mut rng, (free_rank, frames));

    let mut fixed_part = wn.dot(&hn);
    let mut free_part = ws.dot(&hs);
    let mut approx = &fixed_part + &free_part;
    let mut history = vec![kl_divergence(x, &approx)?];

    for _ in 0..opts.iters {
        update_activations(x, wn, &mut hn, &approx);
        fixed_part = wn.dot(&hn);
        approx = &fixed_part + &free_part;

        update_activations(x, &ws, &mut hs, &approx);
        free_part = ws.dot(&hs);
        approx = &fixed_part + &free_part;

        update_templates(x, &mut ws, &hs, &approx);
        free_part = ws.dot(&hs);
        approx = &fixed_part + &free_part;

        history.push(kl_divergence(x, &approx)?);
        if opts.converged(&history) {
            break;
        }
    }

    let (w_free, hs) = fold_scale(ws, hs)?;
    Ok(SemiSupervisedDecomposition {
        w_fixed: w_fixed.clone(),
        h_fixed: Activations { values: hn },
        w_free,
        h_free: Activations { values: hs },
        final_divergence: *history.last().unwrap(),
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    #[test]
    fn divergence_scalar_cases() {
        let d = kl_divergence(&array![[2.0]], &array![[1.0]]).unwrap();
        assert_relative_eq!(d, 2.0 * 2f64.ln() - 1.0, epsilon = 1e-15);
        assert_relative_eq!(d, 0.386_294_361_119_890_6, epsilon = 1e-12);
        assert_eq!(kl_divergence(&array![[0.0]], &array![[3.0]]).unwrap(), 3.0);
        let m = array![[0.0, 1.0], [2.5, 0.3]];
        assert_eq!(kl_divergence(&m, &m).unwrap(), 0.0);
    }

    #[test]
    fn divergence_shape_mismatch() {
        let a = Array2::<f64>::zeros((2, 3));
        let b = Array2::<f64>::zeros((3, 2));
        assert!(matches!(kl_divergence(&a, &b), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn single_activation_update_hand_trace() {
        // H <- 1 * (2 * (4 / 2)) / (2 * 1) = 2
        let x = array![[4.0]];
        let w = array![[2.0]];
        let mut h = array![[1.0]];
        let approx = w.dot(&h);
        update_activations(&x, &w, &mut h, &approx);
        assert_eq!(h, array![[2.0]]);
        assert_eq!(w.dot(&h), x);
    }

    #[test]
    fn single_template_update_hand_trace() {
        // W <- 1 * ((6 / 2) * 2) / 2 = 3
        let x = array![[6.0]];
        let mut w = array![[1.0]];
        let h = array![[2.0]];
        let approx = w.dot(&h);
        update_templates(&x, &mut w, &h, &approx);
        assert_eq!(w, array![[3.0]]);
    }

    #[test]
    fn dictionary_rejects_bad_templates() {
        assert!(Dictionary::new(array![[1.0, 0.0], [1.0, 0.0]]).is_err());
        assert!(Dictionary::new(array![[1.0, -0.1]]).is_err());
        let d = Dictionary::new(array![[1.0, 2.0], [3.0, 2.0]]).unwrap();
        assert_eq!(d.templates(), &array![[0.25, 0.5], [0.75, 0.5]]);
    }

    #[test]
    fn training_preconditions() {
        let x = Array2::from_elem((4, 3), 1.0);
        let opts = NmfOptions::fixed(5, 0);
        assert!(train_dictionary(&x, 0, &opts).is_err());
        assert!(train_dictionary(&x, 4, &opts).is_err());
        assert!(matches!(
            train_dictionary(&Array2::zeros((4, 3)), 1, &opts),
            Err(Error::Silent(_))
        ));
        let neg = array![[1.0, -1.0]];
        assert!(train_dictionary(&neg, 1, &opts).is_err());
    }

    #[test]
    fn early_stop_triggers_on_flat_history() {
        let opts = NmfOptions { tol: Some(1e-5), patience: 3, ..Default::default() };
        assert!(!opts.converged(&[5.0, 4.0, 3.0]));
        assert!(!opts.converged(&[5.0, 4.0, 3.0, 2.0]));
        assert!(opts.converged(&[5.0, 1.0, 1.0, 1.0, 1.0]));
        assert!(!NmfOptions::fixed(10, 0).converged(&[1.0; 20]));
    }

    #[test]
    fn factorizations_are_deterministic() {
        let x = Array2::from_shape_fn((6, 9), |(f, t)| ((f * 7 + t * 3) % 5) as f64);
        let opts = NmfOptions::fixed(20, 42);
        let a = train_dictionary(&x, 2, &opts).unwrap();
        let b = train_dictionary(&x, 2, &opts).unwrap();
        assert_eq!(a.dictionary, b.dictionary);
        assert_eq!(a.activations, b.activations);
        let c = semi_supervised_factorize(&x, &a.dictionary, 2, &opts).unwrap();
        let d = semi_supervised_factorize(&x, &a.dictionary, 2, &opts).unwrap();
        assert_eq!(c.h_fixed, d.h_fixed);
        assert_eq!(c.w_free, d.w_free);
        assert_eq!(c.final_divergence, d.final_divergence);
    }

    #[test]
    fn row_count_mismatch_rejected() {
        let d = Dictionary::new(Array2::from_elem((5, 2), 1.0)).unwrap();
        let x = Array2::from_elem((4, 3), 1.0);
        assert!(matches!(
            semi_supervised_factorize(&x, &d, 1, &NmfOptions::default()),
            Err(Error::ShapeMismatch { .. })
        ));
    }
}
