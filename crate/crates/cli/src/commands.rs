use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use kamnmf::audio::{read_wav, write_wav, PcmFormat};
use kamnmf::evaluation::{
    evaluate, read_segments_csv, synthesize_mixture, write_segments_csv, EvalReport, InterferenceEvent, MixSpec,
    Segment,
};
use kamnmf::matrix_io::write_matrix;
use kamnmf::nmf::train_dictionary;
use kamnmf::pipeline::{self, RunManifest};
use kamnmf::spectral::{magnitude, stft};
use kamnmf::{AudioSignal, Dictionary, PipelineConfig};

use crate::args::{EvaluateArgs, SeparateArgs, SweepArgs, SynthArgs, TrainArgs};

/// Marks errors caused by the invocation rather than the data.
#[derive(Debug)]
pub struct UsageError(pub anyhow::Error);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:#}", self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(e: impl Into<anyhow::Error>) -> anyhow::Error {
    UsageError(e.into()).into()
}

/// `.wav` files directly inside `dir`, sorted by file name.
fn wav_files(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("cannot list {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    files.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    if files.is_empty() {
        bail!("no WAV files in {}", dir.display());
    }
    Ok(files)
}

fn read(path: &Path) -> anyhow::Result<AudioSignal> {
    read_wav(path).with_context(|| format!("cannot read {}", path.display()))
}

fn exemplar_dictionary(dir: &Path, config: &PipelineConfig) -> anyhow::Result<(Dictionary, f64, usize, usize)> {
    let files = wav_files(dir)?;
    let signals = files.iter().map(|f| read(f)).collect::<anyhow::Result<Vec<_>>>()?;
    let joined = AudioSignal::concat(&signals)?;
    let mag = magnitude(&stft(&joined, config.stft)?);
    let fit = train_dictionary(&mag.values, config.interference_rank, &config.nmf)
        .with_context(|| format!("cannot train on {}", dir.display()))?;
    let divergence = fit.final_divergence();
    Ok((fit.dictionary, divergence, files.len(), mag.frames()))
}

pub fn train(args: TrainArgs) -> anyhow::Result<()> {
    let mut config = args.config.resolve().map_err(usage)?;
    if let Some(rank) = args.rank {
        config.interference_rank = rank;
        config.validate().map_err(usage)?;
    }
    let (dict, divergence, files, frames) = exemplar_dictionary(&args.exemplar_dir, &config)?;
    dict.save(&args.out)?;
    if let Some(csv) = &args.csv {
        dict.save_csv(csv)?;
    }
    println!(
        "trained {} templates x {} bins from {files} file(s), {frames} frames; divergence {divergence:.6e}",
        dict.rank(),
        dict.bins()
    );
    println!("wrote {}", args.out.display());
    Ok(())
}

fn absolute(path: &Path) -> anyhow::Result<PathBuf> {
    fs::canonicalize(path).with_context(|| format!("cannot resolve {}", path.display()))
}

pub fn separate(args: SeparateArgs) -> anyhow::Result<()> {
    let (input, dictionary, config) = match &args.manifest {
        Some(path) => {
            let manifest = RunManifest::load(path)
                .with_context(|| format!("cannot load manifest {}", path.display()))
                .map_err(usage)?;
            let dictionary = args.dictionary.clone().unwrap_or(manifest.dictionary);
            (manifest.input, dictionary, args.config.apply(manifest.config).map_err(usage)?)
        }
        None => (
            args.input.clone().expect("clap enforces input"),
            args.dictionary.clone().expect("clap enforces dictionary"),
            args.config.resolve().map_err(usage)?,
        ),
    };
    let input = absolute(&input)?;
    let dictionary = absolute(&dictionary)?;
    let signal = read(&input)?;
    let dict = Dictionary::load(&dictionary).with_context(|| format!("cannot load {}", dictionary.display()))?;
    let (analysis, out) = pipeline::run(&signal, &dict, &config)?;

    let out_dir = match &args.out_dir {
        Some(dir) => dir.clone(),
        None => input.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    fs::create_dir_all(&out_dir).with_context(|| format!("cannot create {}", out_dir.display()))?;
    let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("input");
    let name = |suffix: &str| out_dir.join(format!("{stem}_{suffix}"));
    let format = if args.int16 { PcmFormat::Int16 } else { PcmFormat::Float32 };

    let mut outputs = Vec::new();
    let music_path = name("music.wav");
    write_wav(&music_path, &out.separation.music, format)?;
    outputs.push(("music", music_path));
    let interference_path = name("interference.wav");
    write_wav(&interference_path, &out.separation.interference, format)?;
    outputs.push(("interference", interference_path));
    let indicator_path = name("indicator.csv");
    analysis.indicator.write_csv(&indicator_path)?;
    outputs.push(("indicator", indicator_path));
    let labels_path = name("labels.txt");
    analysis.indicator.write_labels(&labels_path, &analysis.spec.framing)?;
    outputs.push(("labels", labels_path));
    if args.dump_neighbours {
        let path = name("neighbours.csv");
        out.kam.write_neighbours_csv(&path)?;
        outputs.push(("neighbours", path));
    }
    if args.dump_spectrograms {
        for (key, matrix) in [
            ("mixture_mag", &analysis.x_bar.values),
            ("nmf_music_mag", &analysis.x_tilde),
            ("music_mag", &out.separation.music_mag),
            ("noise_mag", &out.separation.noise_mag),
            ("mask", &out.separation.mask),
        ] {
            let path = name(&format!("{key}.kmx"));
            write_matrix(&path, matrix)?;
            outputs.push((key, path));
        }
    }

    let manifest_path = name("manifest.txt");
    let manifest = RunManifest {
        input,
        dictionary,
        config,
        timings_ms: analysis.timings_ms.clone(),
        outputs: outputs.iter().map(|(k, p)| (k.to_string(), p.clone())).collect(),
    };
    fs::write(&manifest_path, manifest.to_text())?;

    println!(
        "{} of {} frames flagged as interference ({} run(s)); variant {}",
        analysis.indicator.count(),
        analysis.indicator.len(),
        analysis.indicator.runs().len(),
        manifest.config.variant
    );
    for (_, path) in &outputs {
        println!("wrote {}", path.display());
    }
    println!("wrote {}", manifest_path.display());
    Ok(())
}

fn read_segments(path: Option<&Path>) -> anyhow::Result<Vec<Segment>> {
    match path {
        Some(p) => read_segments_csv(p).with_context(|| format!("cannot read segments {}", p.display())),
        None => Ok(Vec::new()),
    }
}

pub fn evaluate_cmd(args: EvaluateArgs) -> anyhow::Result<()> {
    let estimate = read(&args.estimate)?;
    let clean = read(&args.clean)?;
    let interference = read(&args.interference)?;
    let segments = read_segments(args.segments.as_deref())?;
    let report = evaluate(&estimate, &clean, &interference, &segments)?;
    print!("{}", report.to_table());
    if let Some(out) = &args.out {
        fs::write(out, report.to_csv())?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

/// Seeded event placement: `lengths` in random order, separated by random
/// gaps that together fill the free part of `total`.
fn place_events(rng: &mut ChaCha8Rng, lengths: &[usize], total: usize) -> anyhow::Result<Vec<usize>> {
    let busy: usize = lengths.iter().sum();
    if busy > total {
        bail!("cannot place {} events totalling {busy} samples without overlap in {total} samples", lengths.len());
    }
    let free = total - busy;
    let mut cuts: Vec<usize> = (0..lengths.len()).map(|_| rng.random_range(0..=free)).collect();
    cuts.sort_unstable();
    let mut onsets = Vec::with_capacity(lengths.len());
    let mut used = 0;
    for (cut, len) in cuts.iter().zip(lengths) {
        onsets.push(cut + used);
        used += len;
    }
    Ok(onsets)
}

pub fn synth(args: SynthArgs) -> anyhow::Result<()> {
    if !(args.target_rms > 0.0) || !args.snr_db.is_finite() {
        return Err(usage(anyhow::anyhow!("target RMS must be positive and SNR finite")));
    }
    let music = read(&args.music)?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let (files, chosen) = if args.count == 0 {
        (Vec::new(), Vec::new())
    } else {
        let files = wav_files(&args.interference_dir)?;
        let chosen: Vec<usize> = (0..args.count).map(|_| rng.random_range(0..files.len())).collect();
        (files, chosen)
    };
    let signals = chosen.iter().map(|&i| read(&files[i])).collect::<anyhow::Result<Vec<_>>>()?;
    let lengths: Vec<usize> = signals.iter().map(AudioSignal::len).collect();
    let onsets = place_events(&mut rng, &lengths, music.len())?;
    let rate = music.sample_rate as f64;
    let events = signals
        .into_iter()
        .zip(&onsets)
        .map(|(signal, &onset)| InterferenceEvent {
            signal,
            onset_secs: onset as f64 / rate,
        })
        .collect();
    let mix = synthesize_mixture(&MixSpec {
        music,
        events,
        snr_db: args.snr_db,
        target_rms: args.target_rms,
    })?;

    let out_dir = args.out_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&out_dir).with_context(|| format!("cannot create {}", out_dir.display()))?;
    let written = [
        ("mixture.wav", &mix.mixture),
        ("music.wav", &mix.music),
        ("interference.wav", &mix.interference),
    ];
    for (file, signal) in written {
        write_wav(out_dir.join(file), signal, PcmFormat::Float32)?;
    }
    write_segments_csv(out_dir.join("segments.csv"), &mix.segments)?;

    let mut meta = String::from("# kamnmf mixture metadata\n");
    let _ = writeln!(meta, "music = {}", absolute(&args.music)?.display());
    let _ = writeln!(meta, "interference_dir = {}", absolute(&args.interference_dir)?.display());
    let _ = writeln!(meta, "snr_db = {}", args.snr_db);
    let _ = writeln!(meta, "count = {}", args.count);
    let _ = writeln!(meta, "seed = {}", args.seed);
    let _ = writeln!(meta, "target_rms = {}", args.target_rms);
    let _ = writeln!(meta, "sample_rate = {}", mix.music.sample_rate);
    // events sorted by onset, matching segments.csv
    let mut order: Vec<usize> = (0..chosen.len()).collect();
    order.sort_by_key(|&i| onsets[i]);
    for (n, (&i, gain)) in order.iter().zip(&mix.gains).enumerate() {
        let _ = writeln!(meta, "event.{n}.file = {}", files[chosen[i]].display());
        let _ = writeln!(meta, "event.{n}.onset_sample = {}", onsets[i]);
        let _ = writeln!(meta, "event.{n}.gain = {gain:e}");
    }
    fs::write(out_dir.join("mixture_meta.txt"), meta)?;

    println!("placed {} event(s) at {} dB active-segment SNR", mix.segments.len(), args.snr_db);
    for seg in &mix.segments {
        println!(
            "  {:.3}s - {:.3}s",
            seg.start as f64 / rate,
            seg.end as f64 / rate
        );
    }
    println!("wrote mixture.wav, music.wav, interference.wav, segments.csv, mixture_meta.txt to {}", out_dir.display());
    Ok(())
}

fn parse_grid(axes: &[String], base: &PipelineConfig) -> anyhow::Result<Vec<(String, Vec<String>)>> {
    let mut grid = Vec::new();
    for axis in axes {
        let (key, values) = axis
            .split_once('=')
            .ok_or_else(|| anyhow::anyhow!("grid axis `{axis}` is not `key=v1,v2,...`"))?;
        let key = key.trim().to_string();
        let values: Vec<String> = values.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
        if values.is_empty() {
            bail!("grid axis `{key}` has no values");
        }
        for v in &values {
            base.clone().set(&key, v)?;
        }
        grid.push((key, values));
    }
    Ok(grid)
}

fn grid_points(grid: &[(String, Vec<String>)]) -> Vec<Vec<&str>> {
    grid.iter().fold(vec![Vec::new()], |points, (_, values)| {
        points
            .iter()
            .flat_map(|p| {
                values.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push(v.as_str());
                    q
                })
            })
            .collect()
    })
}

pub fn sweep(args: SweepArgs) -> anyhow::Result<()> {
    let base = args.config.resolve().map_err(usage)?;
    let grid = parse_grid(&args.grid, &base).map_err(usage)?;
    if args.dictionary.is_some() && grid.iter().any(|(k, _)| k == "interference_rank") {
        return Err(usage(anyhow::anyhow!("sweeping interference_rank needs --exemplars")));
    }
    let mixture = read(&args.mixture)?;
    let clean = read(&args.clean)?;
    let interference = read(&args.interference)?;
    let segments = read_segments(args.segments.as_deref())?;
    let fixed = match &args.dictionary {
        Some(path) => Some(Dictionary::load(path).with_context(|| format!("cannot load {}", path.display()))?),
        None => None,
    };

    let mut trained: HashMap<String, Dictionary> = HashMap::new();
    let header: Vec<&str> = grid.iter().map(|(k, _)| k.as_str()).collect();
    let mut csv = format!("{},{}\n", header.join(","), EvalReport::CSV_HEADER);
    let points = grid_points(&grid);
    for (n, point) in points.iter().enumerate() {
        let mut config = base.clone();
        for ((key, _), value) in grid.iter().zip(point) {
            config.set(key, value).map_err(usage)?;
        }
        config.validate().map_err(usage)?;
        let dict = match (&fixed, &args.exemplars) {
            (Some(d), _) => d.clone(),
            (None, Some(dir)) => {
                let key = format!(
                    "{} {} {} {:?} {:?}",
                    config.interference_rank, config.stft.window_size, config.stft.hop, config.stft.window, config.nmf
                );
                if !trained.contains_key(&key) {
                    let (d, ..) = exemplar_dictionary(dir, &config)?;
                    trained.insert(key.clone(), d);
                }
                trained[&key].clone()
            }
            (None, None) => unreachable!("clap requires a dictionary source"),
        };
        let (_, out) = pipeline::run(&mixture, &dict, &config)?;
        let report = evaluate(&out.separation.music, &clean, &interference, &segments)?;
        let label: Vec<String> = header.iter().zip(point).map(|(k, v)| format!("{k}={v}")).collect();
        eprintln!(
            "[{}/{}] {}: NSDR {:.2} dB, segment NSDR {:.2} dB",
            n + 1,
            points.len(),
            label.join(" "),
            report.nsdr_db,
            report.segment_nsdr_db
        );
        let _ = writeln!(csv, "{},{}", point.join(","), report.csv_row());
    }
    print!("{csv}");
    if let Some(out) = &args.out {
        fs::write(out, &csv)?;
        eprintln!("wrote {}", out.display());
    }
    Ok(())
}
