//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::time::Instant;

use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use kamnmf::audio::AudioSignal;
use kamnmf::detection::{decode_indicator, ActivityCurve, HmmParams, InterferenceIndicator};
use kamnmf::evaluation::{
    bss_decompose, bss_eval, frame_recall, segment_scores, segments_to_frames, synthesize_mixture,
    InterferenceEvent, MixSpec, SynthesizedMixture,
};
use kamnmf::kam::{
    assemble_neighbour_data, context_distance, estimate_music, find_neighbours, median_estimate_frame,
    KernelConfig,
};
use kamnmf::nmf::{semi_supervised_factorize, train_dictionary, Dictionary, NmfOptions};
use kamnmf::pipeline::{analyze, PipelineConfig, Variant};
use kamnmf::separation::soft_mask_separate;
use kamnmf::spectral::{istft, magnitude, stft, StftParams};
use kamnmf::synthetic::{noise_bursts, repetitive_music, BurstParams, MusicParams};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(0.0..1.0))
}

fn nmf_monotone_descent() -> Outcome {
    let clock = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for problem in 0..100u64 {
        let f = rng.random_range(2..=64);
        let t = rng.random_range(8..=128);
        let rank = rng.random_range(1..=8);
        let x = random_matrix(&mut rng, f, t);
        let opts = NmfOptions::fixed(30, problem);
        let fit = train_dictionary(&x, rank, &opts).unwrap();
        let dict = Dictionary::normalized(random_matrix(&mut rng, f, rank)).unwrap().0;
        let semi = semi_supervised_factorize(&x, &dict, rng.random_range(1..=8), &opts).unwrap();
        for h in [&fit.history, &semi.history] {
            for pair in h.windows(2) {
                worst = worst.max(pair[1] - pair[0]);
            }
        }
    }
    let secs = clock.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-9 && secs < 30.0,
        format!("largest per-sweep increase {worst:.3e} (limit 1e-9), {secs:.2} s (limit 30 s)"),
    )
}

fn semi_supervised_exactness() -> Outcome {
    let (f, t, r) = (64, 60, 8);
    let (mut worst_div, mut worst_share): (f64, f64) = (0.0, 0.0);
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dict = Dictionary::normalized(random_matrix(&mut rng, f, r)).unwrap().0;
        let h = random_matrix(&mut rng, r, t).mapv(|v| 5.0 * v);
        let x = dict.templates().dot(&h);
        let dec = semi_supervised_factorize(&x, &dict, 1, &NmfOptions::fixed(1000, seed)).unwrap();
        worst_div = worst_div.max(dec.final_divergence);
        worst_share = worst_share.max(dec.free_part().sum() / x.sum());
    }
    outcome(
        worst_div < 1e-3 && worst_share < 0.05,
        format!(
            "over 10 dictionaries: worst final divergence {worst_div:.3e} (limit 1e-3), worst free-part L1 share {worst_share:.4} (limit 0.05)"
        ),
    )
}

fn brute_force_path(curve: &[f64], p: &HmmParams) -> Vec<bool> {
    let n = curve.len();
    let cost = |bits: u32| -> f64 {
        let mut c = 0.0;
        for t in 0..n {
            let s = bits >> t & 1 == 1;
            c += p.emission(s, curve[t]);
            if t > 0 && s != (bits >> (t - 1) & 1 == 1) {
                c += p.switch_cost;
            }
        }
        c
    };
    // minimum cost; ties broken towards the interference state scanning
    // from the last frame backwards
    let key = |bits: u32| -> u32 { (0..n).fold(0, |k, t| k | (bits >> t & 1) << (n - 1 - t)) };
    let mut best = 0u32;
    let mut best_cost = cost(0);
    for bits in 1..(1u32 << n) {
        let c = cost(bits);
        if c < best_cost || (c == best_cost && key(bits) > key(best)) {
            best = bits;
            best_cost = c;
        }
    }
    (0..n).map(|t| best >> t & 1 == 1).collect()
}

fn viterbi_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut matches = 0;
    for i in 0..500 {
        let n = rng.random_range(1..=12);
        // coarse grids make exact cost ties common
        let values: Vec<f64> = if i % 2 == 0 {
            (0..n).map(|_| rng.random_range(0.0..=1.0)).collect()
        } else {
            (0..n).map(|_| rng.random_range(0..=4) as f64 / 4.0).collect()
        };
        let p = if i % 2 == 0 {
            HmmParams::new(rng.random_range(0.0..=1.0), rng.random_range(0.0..0.5)).unwrap()
        } else {
            HmmParams::new(rng.random_range(0..=4) as f64 / 4.0, rng.random_range(0..=2) as f64 / 4.0).unwrap()
        };
        let curve = ActivityCurve {
            values: values.clone(),
            normalization: 1.0,
        };
        if decode_indicator(&curve, &p).frames == brute_force_path(&values, &p) {
            matches += 1;
        }
    }
    outcome(matches == 500, format!("{matches}/500 exact matches"))
}

fn indicator(bits: &[bool]) -> InterferenceIndicator {
    InterferenceIndicator {
        frames: bits.to_vec(),
        curve: ActivityCurve {
            values: vec![0.0; bits.len()],
            normalization: 0.0,
        },
    }
}

fn kernel(k: usize, context: usize) -> KernelConfig {
    KernelConfig {
        k,
        context,
        sigma: 0.0,
        adaptive_substitution: false,
        filter_only_flagged: true,
    }
}

fn kam_fixtures() -> Outcome {
    let mut failures = Vec::new();
    let mut check = |name: &str, ok: bool| {
        if !ok {
            failures.push(name.to_string());
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(4);

    let x = random_matrix(&mut rng, 6, 14);
    check("self distance", context_distance(&x, 4, 4, 2).unwrap() == 0.0);
    let plain: f64 = x.column(2).iter().zip(x.column(9)).map(|(a, b)| (a - b) * (a - b)).sum();
    check("C = 0 distance", (context_distance(&x, 2, 9, 0).unwrap() - plain).abs() <= 1e-15 * plain);
    let x3 = ndarray::array![[1.0, 2.0, 4.0]];
    check("boundary distance", context_distance(&x3, 0, 1, 1).unwrap() == 2.5);

    check("K = 1 self", find_neighbours(&x, 6, &kernel(1, 0)).unwrap().frames() == vec![6]);
    let mut dup = random_matrix(&mut rng, 6, 14);
    let col = dup.column(2).to_owned();
    dup.column_mut(7).assign(&col);
    dup.column_mut(11).assign(&col);
    let mut got = find_neighbours(&dup, 2, &kernel(3, 0)).unwrap().frames();
    got.sort_unstable();
    check("duplicated frames", got == vec![2, 7, 11]);
    let all = find_neighbours(&x, 5, &kernel(14, 0)).unwrap();
    let mut frames = all.frames();
    frames.sort_unstable();
    check(
        "K = T",
        frames == (0..14).collect::<Vec<_>>() && all.neighbours.windows(2).all(|w| w[0].distance <= w[1].distance),
    );

    let x_bar = random_matrix(&mut rng, 4, 3);
    let x_tilde = random_matrix(&mut rng, 4, 3);
    let nb = find_neighbours(&x_bar, 0, &kernel(2, 0)).unwrap();
    let clean = assemble_neighbour_data(&x_bar, &x_tilde, &indicator(&[false; 3]), &nb, true).unwrap();
    check("all clean", (0..2).all(|j| clean.column(j) == x_bar.column(nb.neighbours[j].frame)));
    let flagged = assemble_neighbour_data(&x_bar, &x_tilde, &indicator(&[true; 3]), &nb, true).unwrap();
    check("all flagged", (0..2).all(|j| flagged.column(j) == x_tilde.column(nb.neighbours[j].frame)));
    let (t1, t2) = (nb.neighbours[0].frame, nb.neighbours[1].frame);
    let mut bits = [false; 3];
    bits[t1] = true;
    let mixed = assemble_neighbour_data(&x_bar, &x_tilde, &indicator(&bits), &nb, true).unwrap();
    check("mixed", mixed.column(0) == x_tilde.column(t1) && mixed.column(1) == x_bar.column(t2));

    let v = random_matrix(&mut rng, 5, 1);
    let same = Array2::from_shape_fn((5, 4), |(f, _)| v[[f, 0]]);
    check("identical columns", median_estimate_frame(&same).unwrap() == v.column(0));
    check("odd median", median_estimate_frame(&ndarray::array![[1.0, 5.0, 9.0]]).unwrap()[0] == 5.0);
    check("even median", median_estimate_frame(&ndarray::array![[1.0, 2.0, 8.0, 9.0]]).unwrap()[0] == 5.0);

    let off = estimate_music(&x, &x, &indicator(&[false; 14]), &KernelConfig::default()).unwrap();
    check("pass-through", off.music == x);
    let mut rep = Array2::zeros((6, 12));
    let pattern = random_matrix(&mut rng, 6, 4);
    for t in 0..12 {
        rep.column_mut(t).assign(&pattern.column(t % 4));
    }
    let mut corrupted = rep.clone();
    corrupted.column_mut(5).mapv_inplace(|v| v + 3.0);
    let mut bits = [false; 12];
    bits[5] = true;
    let est = estimate_music(&corrupted, &rep, &indicator(&bits), &kernel(3, 0)).unwrap();
    check("repetition repair", est.music.column(5) == rep.column(5));
    let single = random_matrix(&mut rng, 3, 1);
    let single_tilde = random_matrix(&mut rng, 3, 1);
    let one = estimate_music(&single, &single_tilde, &indicator(&[true]), &kernel(1, 0)).unwrap();
    let sub = estimate_music(
        &single,
        &single_tilde,
        &indicator(&[true]),
        &KernelConfig {
            adaptive_substitution: true,
            ..kernel(1, 0)
        },
    )
    .unwrap();
    check("T = 1", one.music == single && sub.music == single_tilde);

    let mut breakdowns = 0;
    for k in [3usize, 5, 7, 9] {
        for corrupt in 0..k.div_ceil(2) {
            for _ in 0..20 {
                let v: Vec<f64> = (0..8).map(|_| rng.random_range(0.0..1.0)).collect();
                let data = Array2::from_shape_fn((8, k), |(f, j)| {
                    if j < corrupt {
                        v[f] + rng.random_range(0.0..1e3)
                    } else {
                        v[f]
                    }
                });
                if median_estimate_frame(&data).unwrap().to_vec() != v {
                    breakdowns += 1;
                }
            }
        }
    }
    check("breakdown point", breakdowns == 0);

    let detail = if failures.is_empty() {
        "all kernel fixtures exact; breakdown property holds for K in {3,5,7,9}".to_string()
    } else {
        format!("failed: {}", failures.join(", "))
    };
    outcome(failures.is_empty(), detail)
}

fn stft_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let x: Vec<f64> = (0..16000).map(|_| rng.random_range(-1.0..1.0)).collect();
        let sig = AudioSignal::new(x, 16000).unwrap();
        let back = istft(&stft(&sig, StftParams::new(1024, 256)).unwrap()).unwrap();
        let err: f64 = sig.samples.iter().zip(&back.samples).map(|(a, b)| (a - b) * (a - b)).sum();
        worst = worst.max((err / sig.energy()).sqrt());
    }
    outcome(worst < 1e-6, format!("worst relative L2 error {worst:.3e} over 20 signals (limit 1e-6)"))
}

fn mask_additivity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut exact = true;
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let x: Vec<f64> = (0..8000).map(|_| rng.random_range(-1.0..1.0)).collect();
        let sig = AudioSignal::new(x, 8000).unwrap();
        let spec = stft(&sig, StftParams::new(512, 128)).unwrap();
        let mag = magnitude(&spec).values;
        let s_bar = mag.mapv(|v| v * rng.random_range(0.0..1.5));
        let out = soft_mask_separate(&spec, &s_bar).unwrap();
        let sum: Array2<Complex64> = &out.music_spec.bins + &out.interference_spec.bins;
        exact &= sum == spec.bins;
        let err: f64 = out
            .music
            .samples
            .iter()
            .zip(&out.interference.samples)
            .zip(&sig.samples)
            .map(|((m, i), x)| (m + i - x).powi(2))
            .sum();
        worst = worst.max((err / sig.energy()).sqrt());
    }
    outcome(
        exact && worst < 1e-6,
        format!("complex sum bit-exact: {exact}; time-domain relative error {worst:.3e} (limit 1e-6)"),
    )
}

const BENCH_RATE: u32 = 8000;
const BENCH_SECS: f64 = 30.0;

fn bench_config() -> PipelineConfig {
    PipelineConfig {
        stft: StftParams::new(512, 128),
        interference_rank: 16,
        free_rank: 24,
        nmf: NmfOptions {
            iters: 120,
            ..NmfOptions::default()
        },
        ..PipelineConfig::default()
    }
}

fn bench_dictionary(config: &PipelineConfig) -> Dictionary {
    let bursts = noise_bursts(&BurstParams::default(), 10_000, 12);
    let joined = AudioSignal::concat(&bursts).unwrap();
    let mag = magnitude(&stft(&joined, config.stft).unwrap()).values;
    train_dictionary(&mag, config.interference_rank, &config.nmf).unwrap().dictionary
}

fn bench_mixture(seed: u64) -> SynthesizedMixture {
    let music = repetitive_music(&MusicParams {
        sample_rate: BENCH_RATE,
        duration_secs: BENCH_SECS,
        seed,
        ..MusicParams::default()
    });
    let bursts = noise_bursts(&BurstParams::default(), 100 * seed, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let events = bursts
        .into_iter()
        .enumerate()
        .map(|(i, signal)| InterferenceEvent {
            signal,
            onset_secs: 2.0 + 10.0 * i as f64 + rng.random_range(0.0..7.0),
        })
        .collect();
    synthesize_mixture(&MixSpec {
        music,
        events,
        snr_db: 0.0,
        target_rms: 0.1,
    })
    .unwrap()
}

struct BenchRun {
    recall: f64,
    nsdr: Vec<(Variant, f64)>,
    secs: f64,
}

fn bench_run(seed: u64, dict: &Dictionary, config: &PipelineConfig, variants: &[Variant]) -> BenchRun {
    let clock = Instant::now();
    let mix = bench_mixture(seed);
    let config = PipelineConfig {
        nmf: NmfOptions { seed, ..config.nmf },
        ..config.clone()
    };
    let analysis = analyze(&mix.mixture, dict, &config).unwrap();
    let truth = segments_to_frames(&mix.segments, &analysis.spec.framing, analysis.spec.frames());
    let recall = frame_recall(&truth, &analysis.indicator.frames);
    let nsdr = variants
        .iter()
        .map(|&v| {
            let out = analysis.separate(&config, v).unwrap();
            let (nsdr, _) =
                segment_scores(&out.separation.music, &mix.music, &mix.interference, &mix.segments).unwrap();
            (v, nsdr)
        })
        .collect();
    BenchRun {
        recall,
        nsdr,
        secs: clock.elapsed().as_secs_f64(),
    }
}

fn end_to_end_benchmark() -> Outcome {
    let clock = Instant::now();
    let config = bench_config();
    let dict = bench_dictionary(&config);
    let run = bench_run(1, &dict, &config, &[Variant::BaselineKam, Variant::V3]);
    let secs = clock.elapsed().as_secs_f64();
    let (base, v3) = (run.nsdr[0].1, run.nsdr[1].1);
    outcome(
        run.recall >= 0.9 && v3 > 0.0 && v3 >= base + 1.0 && secs < 60.0,
        format!(
            "recall {:.3} (>= 0.9), NSDR v3 {v3:.2} dB (> 0), baseline_kam {base:.2} dB (v3 - baseline {:.2} >= 1), {secs:.1} s (< 60 s)",
            run.recall,
            v3 - base
        ),
    )
}

fn ablation_trend() -> Outcome {
    let config = bench_config();
    let dict = bench_dictionary(&config);
    let variants = [Variant::V1, Variant::V2, Variant::V3];
    let mut sums = [0.0; 3];
    let seeds = 1..=10u64;
    let n = seeds.clone().count() as f64;
    for seed in seeds {
        let run = bench_run(seed, &dict, &config, &variants);
        let scores: Vec<String> = run.nsdr.iter().map(|(v, s)| format!("{v} {s:.2}")).collect();
        eprintln!("  seed {seed}: recall {:.3}, {} ({:.1} s)", run.recall, scores.join(", "), run.secs);
        for (sum, (_, s)) in sums.iter_mut().zip(&run.nsdr) {
            *sum += s;
        }
    }
    let [v1, v2, v3] = sums.map(|s| s / n);
    outcome(
        v1 <= v2 && v2 <= v3 && v3 - v1 >= 0.5,
        format!("mean segment NSDR v1 {v1:.2} <= v2 {v2:.2} <= v3 {v3:.2} dB, v3 - v1 = {:.2} (>= 0.5)", v3 - v1),
    )
}

fn bss_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let norm = |a: &[f64]| dot(a, a).sqrt();
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(16..512);
        let mut draw = || -> Vec<f64> { (0..n).map(|_| rng.random_range(-1.0..1.0)).collect() };
        let (s, i, e) = (draw(), draw(), draw());
        let d = bss_decompose(&e, &s, &i).unwrap();
        let scale = norm(&e);
        let rel = |a: &[f64], b: &[f64]| dot(a, b).abs() / (scale * scale).max(f64::MIN_POSITIVE);
        worst = worst
            .max(rel(&d.interference, &d.target))
            .max(rel(&d.artifacts, &s))
            .max(rel(&d.artifacts, &i));
    }
    let s = [1.0, 0.0, 1.0, 0.0];
    let i = [0.0, 1.0, 0.0, 1.0];
    let est: Vec<f64> = s.iter().zip(&i).map(|(a, b)| a + b).collect();
    let sir = bss_eval(&est, &s, &i).unwrap().sir_db;
    outcome(
        worst < 1e-6 && sir.abs() <= 0.01,
        format!("worst relative inner product {worst:.3e} (limit 1e-6), orthogonal fixture SIR {sir:.4} dB (0 +- 0.01)"),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("NMF monotone descent", nmf_monotone_descent),
        ("semi-supervised exactness", semi_supervised_exactness),
        ("Viterbi oracle equivalence", viterbi_oracle),
        ("median/kernel fixtures", kam_fixtures),
        ("STFT round trip", stft_round_trip),
        ("mask additivity", mask_additivity),
        ("end-to-end synthetic benchmark", end_to_end_benchmark),
        ("ablation trend", ablation_trend),
        ("BSS-eval oracle", bss_oracle),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if only.is_some_and(|n| n != i + 1) {
            continue;
        }
        let result = check();
        let verdict = if result.pass { "PASS" } else { "FAIL" };
        println!("criterion {}: {verdict} {name}: {}", i + 1, result.detail);
        failed += usize::from(!result.pass);
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
