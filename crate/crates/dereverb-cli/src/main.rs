//! Command-line front end for the dereverberation library: scene rendering,
//! TDOA estimation, single-file enhancement, metric reports, and the full
//! four-mode comparison experiment.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dereverb::config::{
    load_config, read_tdoa_file, serialize_config, write_tdoa_file, ExperimentConfig,
    ScenarioConfig,
};
use dereverb::delay::{CrossbandParams, DelayMode};
use dereverb::experiment::{run_experiment, FRAME_SHIFT, FRAME_SIZE};
use dereverb::metrics::{
    cepstral_distance, fwssnr, ACTIVITY_THRESHOLD_DB, CD_MAX, FWSSNR_MAX_DB, FWSSNR_MIN_DB,
};
use dereverb::room::{oracle_tdoas, render_scene};
use dereverb::speech::synthesize_speech;
use dereverb::stft::{analyze, synthesize, AnalysisConfig};
use dereverb::tdoa::{estimate_all_tdoas, GccParams};
use dereverb::wav::{read_wav, write_wav, Audio};
use dereverb::wpe::{run_wpe, WpeConfig};
use dereverb::{Error, Result};

#[derive(Parser)]
#[command(
    name = "dereverb",
    about = "Multichannel dereverberation with microphone-dependent prediction delays",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a reverberant scene: multichannel observation, direct-path
    /// reference, and oracle TDOA file
    Simulate(SimulateArgs),
    /// Estimate TDOAs from a multichannel recording with GCC-PHAT
    Tdoa(TdoaArgs),
    /// Dereverberate a multichannel recording to a mono enhanced signal
    Dereverb(DereverbArgs),
    /// Score a processed signal against a reference, relative to the
    /// unprocessed baseline
    Evaluate(EvaluateArgs),
    /// Run the full mode-comparison experiment and write the result table
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario config (TOML); built-in desk scene when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    /// Mono speech WAV; synthesized speech when omitted
    #[arg(long)]
    speech: Option<PathBuf>,
    /// Length of synthesized speech in seconds
    #[arg(long, default_value_t = 10.0)]
    duration: f64,
    /// Seed for the speech synthesizer
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Reference microphone index
    #[arg(long = "ref-mic", default_value_t = 0)]
    ref_mic: usize,
    /// Output directory
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct TdoaArgs {
    /// Multichannel WAV to analyze
    input: PathBuf,
    /// Reference microphone index
    #[arg(long = "ref-mic", default_value_t = 0)]
    ref_mic: usize,
    /// Output directory
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct DereverbArgs {
    /// Multichannel WAV to enhance
    input: PathBuf,
    /// Prediction delay mode
    #[arg(long, default_value = "md-nint")]
    mode: DelayMode,
    /// TDOA file (mic_index<TAB>tdoa_samples, reference entry 0)
    #[arg(long = "tdoa-file", conflicts_with = "estimate_tdoa")]
    tdoa_file: Option<PathBuf>,
    /// Estimate TDOAs from the input with GCC-PHAT
    #[arg(long = "estimate-tdoa")]
    estimate_tdoa: bool,
    /// Prediction filter length in frames
    #[arg(long, default_value_t = 8)]
    taps: usize,
    /// Base prediction delay in frames
    #[arg(long, default_value_t = 2)]
    delay: i64,
    /// Sparsity exponent of the desired-signal prior
    #[arg(long, default_value_t = 0.5)]
    sparsity: f64,
    /// Alternating optimization iterations
    #[arg(long, default_value_t = 5)]
    iters: usize,
    /// Crossband half-width B
    #[arg(long = "crossbands", default_value_t = 4)]
    crossbands: usize,
    /// Acausal sub-frame taps L_a
    #[arg(long, default_value_t = 2)]
    acausal: usize,
    /// Causal sub-frame taps L_c
    #[arg(long, default_value_t = 2)]
    causal: usize,
    /// Reference microphone index
    #[arg(long = "ref-mic", default_value_t = 0)]
    ref_mic: usize,
    /// Output directory
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Clean reference WAV
    reference: PathBuf,
    /// Processed WAV
    processed: PathBuf,
    /// Unprocessed WAV (baseline)
    unprocessed: PathBuf,
    /// Known direct-path delay in samples of processed/unprocessed relative
    /// to the reference; stripped before scoring
    #[arg(long = "direct-delay", default_value_t = 0)]
    direct_delay: usize,
    /// Output directory
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Experiment config (TOML); built-in desk experiment when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Simulate(args) => cmd_simulate(&args),
        Command::Tdoa(args) => cmd_tdoa(&args),
        Command::Dereverb(args) => cmd_dereverb(&args),
        Command::Evaluate(args) => cmd_evaluate(&args),
        Command::Experiment(args) => cmd_experiment(&args),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

/// Create the output directory and return the path of a file inside it.
fn out_path(dir: &Path, name: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    Ok(dir.join(name))
}

fn load_speech(args: &SimulateArgs, fs: f64) -> Result<Vec<f64>> {
    match &args.speech {
        Some(path) => {
            let audio = read_wav(path)?;
            if audio.channels.len() != 1 {
                return Err(Error::input(format!(
                    "speech must be mono, got {} channels",
                    audio.channels.len()
                )));
            }
            if f64::from(audio.sample_rate) != fs {
                return Err(Error::input(format!(
                    "speech sample rate {} Hz does not match scenario {fs} Hz",
                    audio.sample_rate
                )));
            }
            Ok(audio.channels.into_iter().next().unwrap())
        }
        None => Ok(synthesize_speech(fs, args.duration, args.seed)),
    }
}

fn cmd_simulate(args: &SimulateArgs) -> Result<ExitCode> {
    let config: ScenarioConfig = match &args.config {
        Some(path) => load_config(path)?,
        None => ScenarioConfig::default(),
    };
    let scenario = config.to_scenario()?;
    let speech = load_speech(args, scenario.fs)?;

    // render and compute everything before touching the filesystem, so a
    // failure never leaves partial outputs behind
    let scene = render_scene(&scenario, &speech, scenario.fs, args.ref_mic)?;
    let tdoas = oracle_tdoas(&scenario, args.ref_mic)?;
    let fs = scenario.fs as u32;
    let observed = Audio::new(scene.mic_signals, fs)?;
    let reference = Audio::new(vec![scene.reference], fs)?;

    write_wav(&out_path(&args.out, "observed.wav")?, &observed)?;
    write_wav(&out_path(&args.out, "reference.wav")?, &reference)?;
    write_tdoa_file(&out_path(&args.out, "tdoas.txt")?, &tdoas)?;

    println!(
        "rendered {} mics, {:.2} s at {} Hz, T60 {} ms, reference mic {}",
        observed.channels.len(),
        observed.len() as f64 / scenario.fs,
        fs,
        config.t60_ms,
        args.ref_mic
    );
    for (m, t) in tdoas.iter().enumerate() {
        println!("  mic {m}: oracle tdoa {t:9.3} samples");
    }
    println!("wrote observed.wav, reference.wav, tdoas.txt to {}", args.out.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_tdoa(args: &TdoaArgs) -> Result<ExitCode> {
    let audio = read_wav(&args.input)?;
    let estimates = estimate_all_tdoas(&audio.channels, args.ref_mic, &GccParams::default())?;
    let tdoas: Vec<f64> = estimates.iter().map(|e| e.tdoa).collect();
    write_tdoa_file(&out_path(&args.out, "tdoas.txt")?, &tdoas)?;

    for (m, est) in estimates.iter().enumerate() {
        let marker = if m == args.ref_mic { " (reference)" } else { "" };
        println!(
            "  mic {m}: tdoa {:9.3} samples, confidence {:6.1}{marker}",
            est.tdoa, est.confidence
        );
    }
    println!("wrote tdoas.txt to {}", args.out.display());
    Ok(ExitCode::SUCCESS)
}

fn resolve_tdoas(args: &DereverbArgs, audio: &Audio) -> Result<Vec<f64>> {
    let m = audio.channels.len();
    if args.mode == DelayMode::Mi {
        if args.tdoa_file.is_some() {
            eprintln!("warning: mode mi uses a microphone-independent delay; ignoring --tdoa-file");
        }
        if args.estimate_tdoa {
            eprintln!("warning: mode mi uses a microphone-independent delay; skipping estimation");
        }
        return Ok(vec![0.0; m]);
    }
    if let Some(path) = &args.tdoa_file {
        let tdoas = read_tdoa_file(path)?;
        if tdoas.len() != m {
            return Err(Error::input(format!(
                "TDOA file has {} entries for {m} channels",
                tdoas.len()
            )));
        }
        if tdoas[args.ref_mic] != 0.0 {
            return Err(Error::input(format!(
                "TDOA of reference mic {} must be 0, got {}",
                args.ref_mic, tdoas[args.ref_mic]
            )));
        }
        Ok(tdoas)
    } else if args.estimate_tdoa {
        let estimates = estimate_all_tdoas(&audio.channels, args.ref_mic, &GccParams::default())?;
        Ok(estimates.into_iter().map(|e| e.tdoa).collect())
    } else {
        Err(Error::config(format!(
            "mode {} needs TDOAs: pass --tdoa-file or --estimate-tdoa",
            args.mode
        )))
    }
}

fn cmd_dereverb(args: &DereverbArgs) -> Result<ExitCode> {
    let audio = read_wav(&args.input)?;
    let tdoas = resolve_tdoas(args, &audio)?;

    let stft = AnalysisConfig::new(FRAME_SIZE, FRAME_SHIFT, audio.sample_rate)?;
    let tensor = analyze(&audio.channels, &stft)?;
    let wpe_config = WpeConfig {
        taps: args.taps,
        base_delay: args.delay,
        sparsity: args.sparsity,
        iterations: args.iters,
        delay_mode: args.mode,
        crossband: CrossbandParams {
            halfwidth: args.crossbands,
            acausal: args.acausal,
            causal: args.causal,
            ..CrossbandParams::default()
        },
        reference: args.ref_mic,
        ..WpeConfig::default()
    };
    let (enhanced_tensor, _) = run_wpe(&tensor, &tdoas, &wpe_config)?;
    let enhanced = synthesize(&enhanced_tensor)?
        .into_iter()
        .next()
        .ok_or_else(|| Error::input("dereverberation produced no channel"))?;

    let out_file = out_path(&args.out, "enhanced.wav")?;
    write_wav(&out_file, &Audio::new(vec![enhanced], audio.sample_rate)?)?;
    println!(
        "enhanced {} channels with mode {} ({} taps, delay {}), wrote {}",
        audio.channels.len(),
        args.mode,
        args.taps,
        args.delay,
        out_file.display()
    );
    Ok(ExitCode::SUCCESS)
}

/// One metric pair evaluated against the reference.
struct Scores {
    fwssnr_db: f64,
    cd: f64,
}

fn score(reference: &[f64], signal: &[f64], fs: f64) -> Result<Scores> {
    Ok(Scores {
        fwssnr_db: fwssnr(reference, signal, fs)?,
        cd: cepstral_distance(reference, signal, fs)?,
    })
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<ExitCode> {
    let reference = read_mono(&args.reference)?;
    let processed = read_mono(&args.processed)?;
    let unprocessed = read_mono(&args.unprocessed)?;
    if processed.sample_rate != reference.sample_rate
        || unprocessed.sample_rate != reference.sample_rate
    {
        return Err(Error::input("all three signals must share one sample rate"));
    }
    let fs = f64::from(reference.sample_rate);
    let strip = |a: &Audio| -> Result<Vec<f64>> {
        let samples = &a.channels[0];
        if args.direct_delay >= samples.len() {
            return Err(Error::input(format!(
                "direct-path delay {} exceeds signal length {}",
                args.direct_delay,
                samples.len()
            )));
        }
        Ok(samples[args.direct_delay..].to_vec())
    };
    let proc = score(&reference.channels[0], &strip(&processed)?, fs)?;
    let unproc = score(&reference.channels[0], &strip(&unprocessed)?, fs)?;

    let mut text = String::new();
    text.push_str(&format!(
        "{:<14} {:>12} {:>12} {:>12}\n",
        "metric", "unprocessed", "processed", "improvement"
    ));
    text.push_str(&format!(
        "{:<14} {:>12.4} {:>12.4} {:>12.4}\n",
        "fwssnr_db", unproc.fwssnr_db, proc.fwssnr_db, proc.fwssnr_db - unproc.fwssnr_db
    ));
    text.push_str(&format!(
        "{:<14} {:>12.4} {:>12.4} {:>12.4}\n",
        "cd", unproc.cd, proc.cd, unproc.cd - proc.cd
    ));
    text.push_str(&format!(
        "\nclamps: fwssnr [{FWSSNR_MIN_DB}, {FWSSNR_MAX_DB}] dB, cd max {CD_MAX}, \
         activity threshold {ACTIVITY_THRESHOLD_DB} dB\n"
    ));
    print!("{text}");

    let mut csv = String::from("key,value\n");
    for (key, value) in [
        ("fwssnr_unprocessed_db", unproc.fwssnr_db),
        ("fwssnr_processed_db", proc.fwssnr_db),
        ("delta_fwssnr_db", proc.fwssnr_db - unproc.fwssnr_db),
        ("cd_unprocessed", unproc.cd),
        ("cd_processed", proc.cd),
        ("delta_cd", unproc.cd - proc.cd),
        ("fwssnr_clamp_min_db", FWSSNR_MIN_DB),
        ("fwssnr_clamp_max_db", FWSSNR_MAX_DB),
        ("cd_clamp_max", CD_MAX),
        ("activity_threshold_db", ACTIVITY_THRESHOLD_DB),
        ("direct_delay_samples", args.direct_delay as f64),
    ] {
        csv.push_str(&format!("{key},{value}\n"));
    }
    std::fs::write(out_path(&args.out, "report.csv")?, csv)?;
    std::fs::write(out_path(&args.out, "report.txt")?, text)?;
    println!("wrote report.txt, report.csv to {}", args.out.display());
    Ok(ExitCode::SUCCESS)
}

fn read_mono(path: &Path) -> Result<Audio> {
    let audio = read_wav(path)?;
    if audio.channels.len() != 1 {
        return Err(Error::input(format!(
            "{} must be mono, got {} channels",
            path.display(),
            audio.channels.len()
        )));
    }
    Ok(audio)
}

fn cmd_experiment(args: &ExperimentArgs) -> Result<ExitCode> {
    let config: ExperimentConfig = match &args.config {
        Some(path) => load_config(path)?,
        None => ExperimentConfig::default(),
    };
    let outcome = run_experiment(&config)?;

    let text = outcome.table.to_text();
    println!("{text}");
    if !outcome.tdoa_deviations.is_empty() {
        let worst = outcome
            .tdoa_deviations
            .iter()
            .map(|d| d.error().abs())
            .fold(0.0f64, f64::max);
        println!("worst TDOA estimation error: {worst:.3} samples");
    }

    std::fs::write(out_path(&args.out, "results.csv")?, outcome.table.to_csv())?;
    std::fs::write(out_path(&args.out, "results.txt")?, &text)?;
    std::fs::write(
        out_path(&args.out, "config.toml")?,
        serialize_config(&config)?,
    )?;
    println!("wrote results.csv, results.txt, config.toml to {}", args.out.display());

    if outcome.failures.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        for f in &outcome.failures {
            eprintln!(
                "cell failed: mode {} / {} / T60 {} ms / position {}: {}",
                f.mode, f.tdoa_source, f.t60_ms, f.position_index, f.message
            );
        }
        eprintln!("{} cell(s) failed", outcome.failures.len());
        Ok(ExitCode::from(2))
    }
}
