use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use kamnmf::pipeline::Variant;
use kamnmf::spectral::WindowKind;
use kamnmf::PipelineConfig;

#[derive(Debug, Parser)]
#[command(name = "kamnmf", version, about = "Remove short interferences from solo music recordings")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Learn an interference dictionary from a directory of WAV exemplars.
    Train(TrainArgs),
    /// Separate a recording into music and interference.
    Separate(SeparateArgs),
    /// Score an estimate against ground-truth stems.
    Evaluate(EvaluateArgs),
    /// Mix interference events into music at a given SNR.
    Synth(SynthArgs),
    /// Run the pipeline over a parameter grid and score every point.
    Sweep(SweepArgs),
}

/// Flags mirroring the `PipelineConfig` keys. Each one overrides the
/// config file, which overrides the defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// Flat `key = value` config file.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub window_size: Option<usize>,
    #[arg(long)]
    pub hop: Option<usize>,
    #[arg(long, value_parser = parse_window)]
    pub window: Option<WindowKind>,
    /// Number of fixed interference templates (R1).
    #[arg(long)]
    pub interference_rank: Option<usize>,
    /// Number of free music templates (R_S).
    #[arg(long)]
    pub free_rank: Option<usize>,
    #[arg(long)]
    pub nmf_iters: Option<usize>,
    /// Early-stop tolerance, or `off`.
    #[arg(long)]
    pub nmf_tol: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Activity threshold of the detector, in [0, 1].
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Cost of a detector state change.
    #[arg(long)]
    pub switch_cost: Option<f64>,
    /// Frames added on both sides of every detected run.
    #[arg(long)]
    pub margin: Option<usize>,
    /// Neighbour count K.
    #[arg(long)]
    pub k: Option<usize>,
    /// Temporal context C in frames.
    #[arg(long)]
    pub context: Option<usize>,
    /// Frequency smoothing std in bins.
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub adaptive_substitution: Option<bool>,
    #[arg(long)]
    pub filter_only_flagged: Option<bool>,
    #[arg(long, value_parser = parse_variant)]
    pub variant: Option<Variant>,
}

fn parse_window(s: &str) -> Result<WindowKind, String> {
    WindowKind::from_name(s).ok_or_else(|| format!("unknown window `{s}` (hann, rectangular)"))
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|_| format!("unknown variant `{s}` (baseline_kam, v1, v2, v3)"))
}

impl ConfigArgs {
    /// Defaults, then the config file, then the flags.
    pub fn resolve(&self) -> anyhow::Result<PipelineConfig> {
        let base = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))?;
                PipelineConfig::from_kv(&text)?
            }
            None => PipelineConfig::default(),
        };
        self.apply(base)
    }

    /// `base` with the flags applied on top.
    pub fn apply(&self, mut cfg: PipelineConfig) -> anyhow::Result<PipelineConfig> {
        let overrides: [(&str, Option<String>); 17] = [
            ("window_size", self.window_size.map(|v| v.to_string())),
            ("hop", self.hop.map(|v| v.to_string())),
            ("window", self.window.map(|v| v.name().to_string())),
            ("interference_rank", self.interference_rank.map(|v| v.to_string())),
            ("free_rank", self.free_rank.map(|v| v.to_string())),
            ("nmf_iters", self.nmf_iters.map(|v| v.to_string())),
            ("nmf_tol", self.nmf_tol.clone()),
            ("seed", self.seed.map(|v| v.to_string())),
            ("threshold", self.threshold.map(|v| v.to_string())),
            ("switch_cost", self.switch_cost.map(|v| v.to_string())),
            ("margin", self.margin.map(|v| v.to_string())),
            ("k", self.k.map(|v| v.to_string())),
            ("context", self.context.map(|v| v.to_string())),
            ("sigma", self.sigma.map(|v| v.to_string())),
            ("adaptive_substitution", self.adaptive_substitution.map(|v| v.to_string())),
            ("filter_only_flagged", self.filter_only_flagged.map(|v| v.to_string())),
            ("variant", self.variant.map(|v| v.name().to_string())),
        ];
        for (key, value) in overrides {
            if let Some(value) = value {
                cfg.set(key, &value)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory of mono WAV exemplars, concatenated in file-name order.
    pub exemplar_dir: PathBuf,
    /// Dictionary rank; defaults to `interference_rank`.
    #[arg(long)]
    pub rank: Option<usize>,
    /// Output dictionary file.
    #[arg(long, short)]
    pub out: PathBuf,
    /// Also write the templates as CSV.
    #[arg(long, value_name = "FILE")]
    pub csv: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct SeparateArgs {
    /// Input recording; may be omitted with `--manifest`.
    #[arg(required_unless_present = "manifest")]
    pub input: Option<PathBuf>,
    /// Dictionary file written by `train`.
    #[arg(long, required_unless_present = "manifest")]
    pub dictionary: Option<PathBuf>,
    /// Repeat the run recorded in a manifest. Flags still override it.
    #[arg(long, value_name = "FILE", conflicts_with_all = ["input", "config"])]
    pub manifest: Option<PathBuf>,
    /// Output directory; defaults to the input's directory.
    #[arg(long, env = "KAMNMF_OUTPUT_DIR")]
    pub out_dir: Option<PathBuf>,
    /// Write the neighbour lists of filtered frames as CSV.
    #[arg(long)]
    pub dump_neighbours: bool,
    /// Write magnitude spectrograms and the mask as matrix files.
    #[arg(long)]
    pub dump_spectrograms: bool,
    /// Write 16-bit integer WAVs instead of 32-bit float.
    #[arg(long)]
    pub int16: bool,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub estimate: PathBuf,
    /// Ground-truth music.
    #[arg(long)]
    pub clean: PathBuf,
    /// Ground-truth interference track.
    #[arg(long)]
    pub interference: PathBuf,
    /// `start_sample,end_sample` CSV of interference-active segments.
    #[arg(long)]
    pub segments: Option<PathBuf>,
    /// Write the report as CSV here as well as printing it.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub music: PathBuf,
    /// Directory of interference WAVs to draw events from.
    #[arg(long)]
    pub interference_dir: PathBuf,
    #[arg(long, allow_hyphen_values = true)]
    pub snr_db: f64,
    #[arg(long, default_value_t = 3)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// RMS the music is normalized to before mixing.
    #[arg(long, default_value_t = 0.1)]
    pub target_rms: f64,
    /// Output directory; defaults to the current directory.
    #[arg(long, env = "KAMNMF_OUTPUT_DIR")]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Mixture to separate.
    #[arg(long)]
    pub mixture: PathBuf,
    #[arg(long)]
    pub clean: PathBuf,
    #[arg(long)]
    pub interference: PathBuf,
    #[arg(long)]
    pub segments: Option<PathBuf>,
    /// Fixed dictionary; required unless `--exemplars` is given.
    #[arg(long, required_unless_present = "exemplars")]
    pub dictionary: Option<PathBuf>,
    /// Exemplar directory; the dictionary is retrained for every
    /// `interference_rank` in the grid.
    #[arg(long, conflicts_with = "dictionary")]
    pub exemplars: Option<PathBuf>,
    /// Grid axis as `key=v1,v2,...`; repeat for a Cartesian product.
    #[arg(long = "grid", value_name = "KEY=VALUES", required = true)]
    pub grid: Vec<String>,
    /// Write the results as CSV here as well as printing them.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
}
