//! End-to-end interference reduction and its ablation variants.
//!
//! ```text
//! stft -> |X| -> semi-supervised NMF -> activity -> decode -> dilate
//!      -> kernel median estimate of |S| -> soft mask -> istft
//! ```
//!
//! The analysis half (everything up to the indicator) does not depend on
//! the variant, so [`Analysis`] can be computed once and separated several
//! times.

use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use ndarray::Array2;

use crate::audio::AudioSignal;
use crate::detection::{activity_curve, decode_indicator, dilate_indicator, HmmParams, InterferenceIndicator};
use crate::error::{Error, Result};
use crate::kam::{estimate_music, KamEstimate, KernelConfig};
use crate::nmf::{semi_supervised_factorize, Dictionary, NmfOptions, SemiSupervisedDecomposition};
use crate::separation::{soft_mask_separate, SeparationResult};
use crate::spectral::{magnitude, stft, ComplexSpectrogram, MagSpectrogram, StftParams, WindowKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Variant {
    /// Median filtering of every frame over mixture-similar frames.
    BaselineKam,
    /// Baseline restricted to frames flagged by NMF detection.
    V1,
    /// V1 with similarity measured on the NMF music estimate, with context.
    V2,
    /// V2 with adaptive frame substitution and frequency smoothing.
    #[default]
    V3,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::BaselineKam, Variant::V1, Variant::V2, Variant::V3];

    pub fn name(self) -> &'static str {
        match self {
            Variant::BaselineKam => "baseline_kam",
            Variant::V1 => "v1",
            Variant::V2 => "v2",
            Variant::V3 => "v3",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown variant `{s}`")))
    }
}

/// Spectrogram the neighbour search runs on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchSource {
    Mixture,
    NmfEstimate,
}

/// Kernel settings after the variant overrides are applied.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelPlan {
    pub kernel: KernelConfig,
    pub search: SearchSource,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub stft: StftParams,
    /// Rank of the interference dictionary, used when training.
    pub interference_rank: usize,
    pub free_rank: usize,
    pub nmf: NmfOptions,
    pub hmm: HmmParams,
    pub margin: usize,
    pub kernel: KernelConfig,
    pub variant: Variant,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            stft: StftParams::default(),
            interference_rank: 20,
            free_rank: 30,
            nmf: NmfOptions::default(),
            hmm: HmmParams::default(),
            margin: 2,
            kernel: KernelConfig::default(),
            variant: Variant::V3,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::invalid(format!("bad value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(Error::invalid(format!("bad boolean `{value}` for `{key}`"))),
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.stft.validate()?;
        self.kernel.validate()?;
        HmmParams::new(self.hmm.threshold, self.hmm.switch_cost)?;
        if self.interference_rank < 1 || self.free_rank < 1 {
            return Err(Error::invalid("NMF ranks must be at least 1"));
        }
        Ok(())
    }

    /// Kernel settings for `self.variant`. V3 uses the configured kernel
    /// as is; each earlier variant switches off one more group of features.
    pub fn kernel_plan(&self) -> KernelPlan {
        self.plan_for(self.variant)
    }

    pub fn plan_for(&self, variant: Variant) -> KernelPlan {
        let mut kernel = self.kernel;
        let mut search = SearchSource::NmfEstimate;
        if variant != Variant::V3 {
            kernel.adaptive_substitution = false;
            kernel.sigma = 0.0;
        }
        if matches!(variant, Variant::V1 | Variant::BaselineKam) {
            kernel.context = 0;
            search = SearchSource::Mixture;
        }
        if variant == Variant::BaselineKam {
            kernel.filter_only_flagged = false;
        }
        KernelPlan { kernel, search }
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "window_size" => self.stft.window_size = parse(key, value)?,
            "hop" => self.stft.hop = parse(key, value)?,
            "window" => {
                self.stft.window = WindowKind::from_name(value)
                    .ok_or_else(|| Error::invalid(format!("unknown window `{value}`")))?
            }
            "interference_rank" => self.interference_rank = parse(key, value)?,
            "free_rank" => self.free_rank = parse(key, value)?,
            "nmf_iters" => self.nmf.iters = parse(key, value)?,
            "nmf_tol" => {
                self.nmf.tol = if value == "off" { None } else { Some(parse(key, value)?) }
            }
            "nmf_patience" => self.nmf.patience = parse(key, value)?,
            "seed" => self.nmf.seed = parse(key, value)?,
            "threshold" => self.hmm.threshold = parse(key, value)?,
            "switch_cost" => self.hmm.switch_cost = parse(key, value)?,
            "margin" => self.margin = parse(key, value)?,
            "k" => self.kernel.k = parse(key, value)?,
            "context" => self.kernel.context = parse(key, value)?,
            "sigma" => self.kernel.sigma = parse(key, value)?,
            "adaptive_substitution" => self.kernel.adaptive_substitution = parse_bool(key, value)?,
            "filter_only_flagged" => self.kernel.filter_only_flagged = parse_bool(key, value)?,
            "variant" => self.variant = value.parse()?,
            _ => return Err(Error::invalid(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Every setting as `key = value` lines; [`PipelineConfig::from_kv`]
    /// reads it back unchanged.
    pub fn to_kv(&self) -> String {
        let tol = self.nmf.tol.map_or_else(|| "off".to_string(), |t| format!("{t:e}"));
        let mut out = String::new();
        for (k, v) in [
            ("window_size", self.stft.window_size.to_string()),
            ("hop", self.stft.hop.to_string()),
            ("window", self.stft.window.name().to_string()),
            ("interference_rank", self.interference_rank.to_string()),
            ("free_rank", self.free_rank.to_string()),
            ("nmf_iters", self.nmf.iters.to_string()),
            ("nmf_tol", tol),
            ("nmf_patience", self.nmf.patience.to_string()),
            ("seed", self.nmf.seed.to_string()),
            ("threshold", format!("{:?}", self.hmm.threshold)),
            ("switch_cost", format!("{:?}", self.hmm.switch_cost)),
            ("margin", self.margin.to_string()),
            ("k", self.kernel.k.to_string()),
            ("context", self.kernel.context.to_string()),
            ("sigma", format!("{:?}", self.kernel.sigma)),
            ("adaptive_substitution", self.kernel.adaptive_substitution.to_string()),
            ("filter_only_flagged", self.kernel.filter_only_flagged.to_string()),
            ("variant", self.variant.name().to_string()),
        ] {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Defaults overridden by a flat `key = value` text. Blank lines and
    /// `#` comments are skipped.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (key, value) in kv_pairs(text)? {
            cfg.set(&key, &value)?;
        }
        Ok(cfg)
    }
}

fn kv_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::invalid(format!("line {}: expected `key = value`", i + 1)))?;
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(pairs)
}

/// Record of one separation run: enough to repeat it exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub input: PathBuf,
    pub dictionary: PathBuf,
    pub config: PipelineConfig,
    pub timings_ms: Vec<(String, f64)>,
    pub outputs: Vec<(String, PathBuf)>,
}

impl RunManifest {
    pub fn to_text(&self) -> String {
        let mut out = String::from("# kamnmf run manifest\n");
        let _ = writeln!(out, "input = {}", self.input.display());
        let _ = writeln!(out, "dictionary = {}", self.dictionary.display());
        out.push_str(&self.config.to_kv());
        for (stage, ms) in &self.timings_ms {
            let _ = writeln!(out, "timing.{stage}_ms = {ms:.3}");
        }
        for (name, path) in &self.outputs {
            let _ = writeln!(out, "output.{name} = {}", path.display());
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut config = PipelineConfig::default();
        let (mut input, mut dictionary) = (None, None);
        let mut timings_ms = Vec::new();
        let mut outputs = Vec::new();
        for (key, value) in kv_pairs(text)? {
            if key == "input" {
                input = Some(PathBuf::from(value));
            } else if key == "dictionary" {
                dictionary = Some(PathBuf::from(value));
            } else if let Some(stage) = key.strip_prefix("timing.") {
                let stage = stage.trim_end_matches("_ms").to_string();
                timings_ms.push((stage, parse(&key, &value)?));
            } else if let Some(name) = key.strip_prefix("output.") {
                outputs.push((name.to_string(), PathBuf::from(value)));
            } else {
                config.set(&key, &value)?;
            }
        }
        Ok(Self {
            input: input.ok_or_else(|| Error::invalid("manifest lacks `input`"))?,
            dictionary: dictionary.ok_or_else(|| Error::invalid("manifest lacks `dictionary`"))?,
            config,
            timings_ms,
            outputs,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

/// Variant-independent front half of the pipeline.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub spec: ComplexSpectrogram,
    pub x_bar: MagSpectrogram,
    pub decomposition: SemiSupervisedDecomposition,
    /// NMF music estimate `W_free H_free`.
    pub x_tilde: Array2<f64>,
    pub indicator: InterferenceIndicator,
    pub timings_ms: Vec<(String, f64)>,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub separation: SeparationResult,
    pub kam: KamEstimate,
    pub plan: KernelPlan,
}

fn elapsed_ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

pub fn analyze(signal: &AudioSignal, dictionary: &Dictionary, config: &PipelineConfig) -> Result<Analysis> {
    config.validate()?;
    let mut timings_ms = Vec::new();

    let clock = Instant::now();
    let spec = stft(signal, config.stft)?;
    let x_bar = magnitude(&spec);
    timings_ms.push(("stft".to_string(), elapsed_ms(clock)));

    if dictionary.bins() != x_bar.values.nrows() {
        return Err(Error::invalid(format!(
            "dictionary has {} bins but the STFT produces {} (window size {})",
            dictionary.bins(),
            x_bar.values.nrows(),
            config.stft.window_size
        )));
    }

    let clock = Instant::now();
    let decomposition = semi_supervised_factorize(&x_bar.values, dictionary, config.free_rank, &config.nmf)?;
    let x_tilde = decomposition.free_part();
    timings_ms.push(("nmf".to_string(), elapsed_ms(clock)));

    let clock = Instant::now();
    let curve = activity_curve(&decomposition.h_fixed);
    let indicator = dilate_indicator(&decode_indicator(&curve, &config.hmm), config.margin);
    timings_ms.push(("detection".to_string(), elapsed_ms(clock)));

    Ok(Analysis {
        spec,
        x_bar,
        decomposition,
        x_tilde,
        indicator,
        timings_ms,
    })
}

impl Analysis {
    /// Runs the kernel estimate and soft masking for one variant.
    pub fn separate(&self, config: &PipelineConfig, variant: Variant) -> Result<PipelineOutput> {
        let plan = config.plan_for(variant);
        let search = match plan.search {
            SearchSource::Mixture => &self.x_bar.values,
            SearchSource::NmfEstimate => &self.x_tilde,
        };
        let kam = estimate_music(&self.x_bar.values, search, &self.indicator, &plan.kernel)?;
        let separation = soft_mask_separate(&self.spec, &kam.music)?;
        Ok(PipelineOutput { separation, kam, plan })
    }
}

/// Full pipeline for `config.variant`; returns the analysis alongside so
/// callers can export the indicator and intermediate spectrograms.
pub fn run(
    signal: &AudioSignal,
    dictionary: &Dictionary,
    config: &PipelineConfig,
) -> Result<(Analysis, PipelineOutput)> {
    let mut analysis = analyze(signal, dictionary, config)?;
    let clock = Instant::now();
    let out = analysis.separate(config, config.variant)?;
    analysis.timings_ms.push(("separation".to_string(), elapsed_ms(clock)));
    Ok((analysis, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!("v4".parse::<Variant>().is_err());
    }

    #[test]
    fn variant_flag_lattice() {
        let cfg = PipelineConfig::default();
        let v3 = cfg.plan_for(Variant::V3);
        assert_eq!(v3.kernel, KernelConfig::default());
        assert_eq!(v3.search, SearchSource::NmfEstimate);

        let v2 = cfg.plan_for(Variant::V2);
        assert_eq!(
            v2.kernel,
            KernelConfig { adaptive_substitution: false, sigma: 0.0, ..v3.kernel }
        );
        assert_eq!(v2.search, SearchSource::NmfEstimate);

        let v1 = cfg.plan_for(Variant::V1);
        assert_eq!(v1.kernel, KernelConfig { context: 0, ..v2.kernel });
        assert_eq!(v1.search, SearchSource::Mixture);
        assert!(v1.kernel.filter_only_flagged);

        let base = cfg.plan_for(Variant::BaselineKam);
        assert_eq!(base.kernel, KernelConfig { filter_only_flagged: false, ..v1.kernel });
        assert_eq!(base.search, SearchSource::Mixture);
    }

    #[test]
    fn config_kv_round_trip() {
        let mut cfg = PipelineConfig::default();
        cfg.set("k", "7").unwrap();
        cfg.set("sigma", "0.3").unwrap();
        cfg.set("nmf_tol", "off").unwrap();
        cfg.set("variant", "v2").unwrap();
        cfg.set("window", "rectangular").unwrap();
        assert_eq!(PipelineConfig::from_kv(&cfg.to_kv()).unwrap(), cfg);
        assert_eq!(PipelineConfig::from_kv(&PipelineConfig::default().to_kv()).unwrap(), PipelineConfig::default());
    }

    #[test]
    fn config_rejects_bad_lines() {
        assert!(PipelineConfig::from_kv("k 3").is_err());
        assert!(PipelineConfig::from_kv("nope = 1").is_err());
        assert!(PipelineConfig::from_kv("k = x").is_err());
        assert!(PipelineConfig::from_kv("adaptive_substitution = maybe").is_err());
        let cfg = PipelineConfig::from_kv("# comment\n\nk = 3 # trailing\n").unwrap();
        assert_eq!(cfg.kernel.k, 3);
    }

    #[test]
    fn manifest_round_trip() {
        let m = RunManifest {
            input: "in.wav".into(),
            dictionary: "dict.bin".into(),
            config: PipelineConfig { margin: 5, ..Default::default() },
            timings_ms: vec![("stft".into(), 1.5)],
            outputs: vec![("music".into(), "out/in_music.wav".into())],
        };
        assert_eq!(RunManifest::parse(&m.to_text()).unwrap(), m);
        assert!(RunManifest::parse("k = 3").is_err());
    }
}
