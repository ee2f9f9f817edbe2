//! Acceptance gate: one test per release criterion. Each test name carries
//! its criterion number, so the harness output shows one pass/fail line per
//! criterion.

use std::sync::OnceLock;
use std::time::Instant;

use dereverb::config::{ExperimentConfig, TdoaSource};
use dereverb::delay::{
    decompose_tdoa, verify_compensation, CompensationMode, CrossbandParams, DelayMode,
};
use dereverb::experiment::{run_experiment, ExperimentOutcome, FRAME_SHIFT, FRAME_SIZE};
use dereverb::metrics::{cepstral_distance, fwssnr, FWSSNR_MAX_DB};
use dereverb::room::{oracle_tdoas, render_scene, Scenario, SOUND_SPEED};
use dereverb::speech::synthesize_speech;
use dereverb::stft::{analyze, synthesize, AnalysisConfig, FftPair};
use dereverb::tdoa::{estimate_all_tdoas, GccParams};
use dereverb::wpe::{run_wpe, run_wpe_traced, WpeConfig};
use num_complex::Complex64;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

fn stft_config() -> AnalysisConfig {
    AnalysisConfig::new(FRAME_SIZE, FRAME_SHIFT, 16000).expect("valid STFT configuration")
}

/// The desk experiment shared by criteria 6 and 7, run once.
fn desk_outcome() -> &'static (ExperimentOutcome, f64) {
    static DESK: OnceLock<(ExperimentOutcome, f64)> = OnceLock::new();
    DESK.get_or_init(|| {
        let config = ExperimentConfig::default();
        let start = Instant::now();
        let outcome = run_experiment(&config).expect("desk experiment runs");
        let elapsed = start.elapsed().as_secs_f64();
        assert!(
            outcome.failures.is_empty(),
            "desk cells failed: {:?}",
            outcome.failures
        );
        (outcome, elapsed)
    })
}

#[test]
fn criterion_1_stft_perfect_reconstruction() {
    let config = stft_config();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let start = Instant::now();
    for trial in 0..10 {
        let signal: Vec<f64> = (0..80_000).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let tensor = analyze(&[signal.clone()], &config).unwrap();
        let back = synthesize(&tensor).unwrap();
        let mut err = 0.0;
        let mut norm = 0.0;
        for (x, y) in signal.iter().zip(&back[0]) {
            err += (x - y) * (x - y);
            norm += x * x;
        }
        let rel = (err / norm).sqrt();
        assert!(rel < 1e-10, "trial {trial}: relative error {rel:.3e}");
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 5.0, "took {elapsed:.2} s, budget 5 s");
    println!("criterion 1: 10 signals reconstructed below 1e-10 in {elapsed:.2} s");
}

#[test]
fn criterion_2_tdoa_decomposition_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let shift = FRAME_SHIFT;
    let start = Instant::now();
    let check = |tdoa: f64| {
        let dec = decompose_tdoa(tdoa, shift).unwrap();
        let rebuilt = (dec.frame_delay * shift as i64 + dec.sample_delay) as f64 + dec.frac_delay;
        assert!(
            rebuilt == tdoa,
            "tdoa {tdoa}: rebuilt {rebuilt} differs"
        );
        assert!(
            (0.0..1.0).contains(&dec.frac_delay),
            "tdoa {tdoa}: frac {}",
            dec.frac_delay
        );
    };
    for &edge in &[-2048.0, -2047.5, -128.0, 0.0, 127.5, 2048.0] {
        check(edge);
    }
    for _ in 0..1_000_000 {
        check(rng.gen_range(-2048.0..=2048.0));
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 5.0, "took {elapsed:.2} s, budget 5 s");
    println!("criterion 2: 1e6 decompositions reconstructed exactly in {elapsed:.2} s");
}

/// Noise band-limited to 90% of Nyquist: wideband enough to exercise every
/// subband, yet avoiding the unrepresentable top edge where the windowed
/// FIR itself rolls off.
fn band_limited_noise(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut spec = vec![Complex64::new(0.0, 0.0); len];
    let cutoff = (0.9 * (len / 2) as f64) as usize;
    for k in 1..cutoff {
        let re = rng.gen_range(-1.0..1.0);
        let im = rng.gen_range(-1.0..1.0);
        spec[k] = Complex64::new(re, im);
        spec[len - k] = spec[k].conj();
    }
    let fft = FftPair::new(len);
    fft.inverse.process(&mut spec);
    let scale = 1.0 / (len as f64).sqrt();
    spec.iter().map(|c| c.re * scale).collect()
}

#[test]
fn criterion_3_crossband_compensation_fidelity() {
    let config = stft_config();
    let params = CrossbandParams::default();
    assert_eq!((params.halfwidth, params.acausal, params.causal), (4, 2, 2));
    let signal = band_limited_noise(16 * FRAME_SIZE, 303);
    let mut rng = ChaCha8Rng::seed_from_u64(304);
    let start = Instant::now();
    let mut worst = (f64::MIN, f64::MIN, f64::MIN);
    for trial in 0..50 {
        // a frame part plus a sub-frame part kept at least one sample off
        // the aligned points, so every trial has genuine fractional content
        let frame = rng.gen_range(-1i64..=1) as f64 * FRAME_SHIFT as f64;
        let magnitude = rng.gen_range(2.0..120.0);
        let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
        let tdoa = frame + sign * magnitude;
        let crossband =
            verify_compensation(&signal, tdoa, CompensationMode::Crossband, &config, &params)
                .unwrap();
        let band2band =
            verify_compensation(&signal, tdoa, CompensationMode::BandToBand, &config, &params)
                .unwrap();
        let integer =
            verify_compensation(&signal, tdoa, CompensationMode::Integer, &config, &params)
                .unwrap();
        assert!(
            crossband <= band2band && band2band <= integer,
            "trial {trial} (tdoa {tdoa:.2}): ordering violated \
             ({crossband:.2} / {band2band:.2} / {integer:.2} dB)"
        );
        assert!(
            crossband < -25.0,
            "trial {trial} (tdoa {tdoa:.2}): crossband error {crossband:.2} dB"
        );
        // the diagonal approximation is structurally limited to roughly
        // -7.3..-7.5 dB by this window pair's adjacent-band coupling no
        // matter the tap count, so the gate sits at -5 dB
        assert!(
            band2band < -5.0,
            "trial {trial} (tdoa {tdoa:.2}): band2band error {band2band:.2} dB"
        );
        worst = (
            worst.0.max(crossband),
            worst.1.max(band2band),
            worst.2.max(integer),
        );
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 120.0, "took {elapsed:.2} s, budget 2 min");
    println!(
        "criterion 3: 50 trials ordered, worst crossband {:.2} dB, band2band {:.2} dB ({elapsed:.1} s)",
        worst.0, worst.1
    );
}

#[test]
fn criterion_4_wpe_objective_monotone() {
    let config = ExperimentConfig::default();
    let scenario = config
        .scenario(config.source_positions_m[0], 500.0)
        .unwrap();
    let speech = synthesize_speech(16000.0, 10.0, config.seed);
    let scene = render_scene(&scenario, &speech, 16000.0, 0).unwrap();
    let tensor = analyze(&scene.mic_signals, &stft_config()).unwrap();
    let tdoas = oracle_tdoas(&scenario, 0).unwrap();
    let wpe_config = WpeConfig {
        iterations: 5,
        delay_mode: DelayMode::MdNint,
        ..WpeConfig::default()
    };
    let (_, _, traces) = run_wpe_traced(&tensor, &tdoas, &wpe_config).unwrap();

    let mut eligible = 0usize;
    let mut monotone = 0usize;
    for trace in &traces {
        if trace.floor_hit {
            continue;
        }
        eligible += 1;
        let ok = trace
            .objectives
            .windows(2)
            .all(|w| w[1] <= w[0] * (1.0 + 1e-6));
        if ok {
            monotone += 1;
        }
    }
    // silent leading frames make the variance floor engage in most desk
    // subbands; the criterion excludes those, so report the eligible count
    let fraction = if eligible == 0 {
        1.0
    } else {
        monotone as f64 / eligible as f64
    };
    assert!(
        fraction >= 0.99,
        "objective non-increasing in only {monotone}/{eligible} subbands"
    );
    println!(
        "criterion 4: objective non-increasing in {monotone}/{eligible} eligible subbands \
         ({} floor-hit excluded)",
        traces.len() - eligible
    );
}

#[test]
fn criterion_5_mode_equivalence_at_zero_tdoa() {
    let config = ExperimentConfig::default();
    let scenario = config
        .scenario(config.source_positions_m[2], 500.0)
        .unwrap();
    let speech = synthesize_speech(16000.0, 4.0, 11);
    let scene = render_scene(&scenario, &speech, 16000.0, 0).unwrap();
    let tensor = analyze(&scene.mic_signals, &stft_config()).unwrap();
    let zeros = vec![0.0; 4];

    let enhanced = |mode: DelayMode| -> Vec<f64> {
        let wpe_config = WpeConfig {
            delay_mode: mode,
            iterations: 2,
            ..WpeConfig::default()
        };
        let (out, _) = run_wpe(&tensor, &zeros, &wpe_config).unwrap();
        synthesize(&out).unwrap().remove(0)
    };
    let mi = enhanced(DelayMode::Mi);
    let md_int = enhanced(DelayMode::MdInt);
    assert!(
        mi.iter()
            .zip(&md_int)
            .all(|(a, b)| a.to_bits() == b.to_bits()),
        "MD-INT must be bit-identical to MI at zero TDOAs"
    );
    let norm = mi.iter().map(|v| v * v).sum::<f64>().sqrt();
    for (label, other) in [
        ("md-nint-b2b", enhanced(DelayMode::MdNintB2b)),
        ("md-nint", enhanced(DelayMode::MdNint)),
    ] {
        let err = mi
            .iter()
            .zip(&other)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        assert!(
            err <= 1e-6 * norm,
            "{label} deviates from MI by {:.3e} relative",
            err / norm
        );
    }
    println!("criterion 5: zero-TDOA modes agree (MD-INT bit-identical)");
}

#[test]
fn criterion_6_dereverberation_benefit_and_ordering() {
    let (outcome, elapsed) = desk_outcome();
    assert!(
        *elapsed < 600.0,
        "desk experiment took {elapsed:.1} s, budget 10 min"
    );
    let mean = |mode: DelayMode| -> (f64, f64) {
        let row = outcome
            .table
            .row(mode, TdoaSource::Oracle, 500.0)
            .expect("row exists");
        assert_eq!(row.positions, 6);
        (row.delta_fwssnr_db, row.delta_cd)
    };
    let mut fw = std::collections::HashMap::new();
    for mode in DelayMode::all() {
        let (dfw, dcd) = mean(mode);
        assert!(dfw > 0.0, "{mode}: mean dFWSSNR {dfw:.3} not positive");
        assert!(dcd > 0.0, "{mode}: mean dCD {dcd:.3} not positive");
        fw.insert(mode.as_str(), dfw);
    }
    let tie = 0.1;
    let ordered = [
        ("md-nint", "md-nint-b2b"),
        ("md-nint-b2b", "md-int"),
        ("md-int", "mi"),
    ];
    for (hi, lo) in ordered {
        assert!(
            fw[hi] >= fw[lo] - tie,
            "{hi} ({:.3}) must not trail {lo} ({:.3}) beyond the {tie} dB tie",
            fw[hi], fw[lo]
        );
    }
    println!(
        "criterion 6: oracle means mi {:.3} / md-int {:.3} / md-nint-b2b {:.3} / md-nint {:.3} dB \
         dFWSSNR, all dCD > 0, ordering holds ({elapsed:.0} s)",
        fw["mi"], fw["md-int"], fw["md-nint-b2b"], fw["md-nint"]
    );
}

#[test]
fn criterion_7_tdoa_estimation_robustness() {
    // anechoic renders: GCC-PHAT within one sample of geometry at every
    // desk position and microphone
    let config = ExperimentConfig::default();
    let speech = synthesize_speech(16000.0, 10.0, config.seed);
    for (p, &src) in config.source_positions_m.iter().enumerate() {
        let scenario = Scenario {
            room_dims: config.room_size_m,
            mic_positions: config.mic_positions_m.clone(),
            source_position: src,
            t60: 0.0,
            fs: 16000.0,
            sound_speed: SOUND_SPEED,
        };
        let scene = render_scene(&scenario, &speech, 16000.0, 0).unwrap();
        let oracle = oracle_tdoas(&scenario, 0).unwrap();
        let estimates = estimate_all_tdoas(&scene.mic_signals, 0, &GccParams::default()).unwrap();
        for (m, (est, oracle)) in estimates.iter().zip(&oracle).enumerate() {
            assert!(
                (est.tdoa - oracle).abs() <= 1.0,
                "position {p} mic {m}: anechoic estimate {:.2} vs oracle {oracle:.2}",
                est.tdoa
            );
        }
    }

    // reverberant experiment: at least 90% of per-mic estimates within
    // ±4 samples (a strong reflection may capture an isolated estimate)
    let (outcome, _) = desk_outcome();
    let within = outcome
        .tdoa_deviations
        .iter()
        .filter(|d| d.error().abs() <= 4.0)
        .count();
    let total = outcome.tdoa_deviations.len();
    assert!(
        within * 10 >= total * 9,
        "only {within}/{total} reverberant estimates within 4 samples"
    );

    // estimated rows within half a dB of oracle rows
    let mut worst = 0.0f64;
    for mode in DelayMode::all() {
        let oracle = outcome
            .table
            .row(mode, TdoaSource::Oracle, 500.0)
            .expect("oracle row")
            .delta_fwssnr_db;
        let estimated = outcome
            .table
            .row(mode, TdoaSource::Estimated, 500.0)
            .expect("estimated row")
            .delta_fwssnr_db;
        let gap = (oracle - estimated).abs();
        assert!(
            gap < 0.5,
            "{mode}: estimated row differs from oracle by {gap:.3} dB"
        );
        worst = worst.max(gap);
    }
    println!(
        "criterion 7: anechoic GCC within ±1 sample everywhere; {within}/{total} reverberant \
         estimates within ±4; worst estimated-vs-oracle row gap {worst:.3} dB"
    );
}

#[test]
fn criterion_8_metric_sanity() {
    let x = synthesize_speech(16000.0, 3.0, 88);
    assert_eq!(fwssnr(&x, &x, 16000.0).unwrap(), FWSSNR_MAX_DB);
    assert_eq!(cepstral_distance(&x, &x, 16000.0).unwrap(), 0.0);

    let mut rng = ChaCha8Rng::seed_from_u64(89);
    let corrupted: Vec<f64> = x
        .iter()
        .map(|&v| v + 0.01 * rng.gen_range(-1.0..1.0))
        .collect();
    let base = cepstral_distance(&x, &corrupted, 16000.0).unwrap();
    for gain in [0.1, 10.0] {
        let scaled: Vec<f64> = corrupted.iter().map(|&v| gain * v).collect();
        let d = cepstral_distance(&x, &scaled, 16000.0).unwrap();
        assert!(
            (d - base).abs() < 1e-9,
            "cepstral distance moved from {base:.6} to {d:.6} under gain {gain}"
        );
    }

    let noise: Vec<f64> = (0..x.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut last = f64::INFINITY;
    for sigma in [1e-3, 1e-2, 1e-1] {
        let noisy: Vec<f64> = x.iter().zip(&noise).map(|(&v, &n)| v + sigma * n).collect();
        let score = fwssnr(&x, &noisy, 16000.0).unwrap();
        assert!(
            score < last,
            "FWSSNR {score:.3} did not drop at noise level {sigma}"
        );
        last = score;
    }
    println!("criterion 8: clamp, zero distance, gain invariance and monotonicity hold");
}
