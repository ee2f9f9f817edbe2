//! End-to-end comparison experiment: render a scene per source position,
//! dereverberate with every requested mode and TDOA source, score the
//! results, and average over positions.

use std::time::Instant;

use rayon::prelude::*;

use crate::config::{ExperimentConfig, TdoaSource};
use crate::delay::{CrossbandParams, DelayMode};
use crate::error::{Error, Result};
use crate::metrics::{cepstral_distance, fwssnr};
use crate::room::{oracle_tdoas, render_scene};
use crate::speech::synthesize_speech;
use crate::stft::{analyze, synthesize, AnalysisConfig};
use crate::tdoa::{estimate_all_tdoas, GccParams};
use crate::wav::read_wav;
use crate::wpe::{run_wpe, WpeConfig};

/// STFT frame size used throughout the experiment.
pub const FRAME_SIZE: usize = 1024;
/// STFT frame shift used throughout the experiment.
pub const FRAME_SHIFT: usize = 256;

/// Metric improvements of one (mode, TDOA source, T60, position) cell.
#[derive(Debug, Clone)]
pub struct CellResult {
    pub mode: DelayMode,
    pub tdoa_source: TdoaSource,
    pub t60_ms: f64,
    pub position_index: usize,
    /// FWSSNR of the enhanced signal minus FWSSNR of the reference mic.
    pub delta_fwssnr_db: f64,
    /// Cepstral distance of the reference mic minus that of the enhanced
    /// signal; positive means the distance shrank.
    pub delta_cd: f64,
    pub runtime_s: f64,
}

/// A cell that could not be computed; reported alongside the table rather
/// than silently dropped.
#[derive(Debug, Clone)]
pub struct CellFailure {
    pub mode: DelayMode,
    pub tdoa_source: TdoaSource,
    pub t60_ms: f64,
    pub position_index: usize,
    pub message: String,
}

/// Estimated-versus-geometric TDOA for one microphone of one scene.
#[derive(Debug, Clone, Copy)]
pub struct TdoaDeviation {
    pub t60_ms: f64,
    pub position_index: usize,
    pub mic: usize,
    pub oracle: f64,
    pub estimated: f64,
}

impl TdoaDeviation {
    /// Absolute estimation error in samples.
    pub fn error(&self) -> f64 {
        (self.estimated - self.oracle).abs()
    }
}

/// One aggregated row: mean improvements over source positions.
#[derive(Debug, Clone)]
pub struct ResultRow {
    pub mode: DelayMode,
    pub tdoa_source: TdoaSource,
    pub t60_ms: f64,
    pub delta_fwssnr_db: f64,
    pub delta_cd: f64,
    pub runtime_s: f64,
    /// Number of positions that contributed.
    pub positions: usize,
}

/// The aggregated experiment outcome, one row per (mode, source, T60).
#[derive(Debug, Clone, Default)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

impl ResultTable {
    /// Find one row.
    pub fn row(&self, mode: DelayMode, source: TdoaSource, t60_ms: f64) -> Option<&ResultRow> {
        self.rows
            .iter()
            .find(|r| r.mode == mode && r.tdoa_source == source && r.t60_ms == t60_ms)
    }

    /// CSV rendering with a header row and `.` decimal separators.
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("mode,tdoa_source,t60_ms,delta_fwssnr_db,delta_cd,runtime_s,positions\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{:.4},{:.4},{:.2},{}\n",
                r.mode, r.tdoa_source, r.t60_ms, r.delta_fwssnr_db, r.delta_cd, r.runtime_s,
                r.positions
            ));
        }
        out
    }

    /// Aligned text table for terminals.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{:<12} {:<10} {:>7} {:>12} {:>8} {:>10} {:>10}\n",
            "mode", "tdoa", "t60_ms", "dFWSSNR_dB", "dCD", "runtime_s", "positions"
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{:<12} {:<10} {:>7} {:>12.3} {:>8.3} {:>10.2} {:>10}\n",
                r.mode.to_string(),
                r.tdoa_source.to_string(),
                r.t60_ms,
                r.delta_fwssnr_db,
                r.delta_cd,
                r.runtime_s,
                r.positions
            ));
        }
        out
    }
}

/// Everything a run produces: the aggregated table, the per-cell details it
/// was computed from, failed cells, and TDOA estimation deviations.
#[derive(Debug, Clone, Default)]
pub struct ExperimentOutcome {
    pub table: ResultTable,
    pub cells: Vec<CellResult>,
    pub failures: Vec<CellFailure>,
    pub tdoa_deviations: Vec<TdoaDeviation>,
}

/// The speech used by the experiment: a provided WAV or synthesized audio.
pub fn experiment_speech(config: &ExperimentConfig) -> Result<Vec<f64>> {
    match &config.speech_wav_path {
        Some(path) => {
            let audio = read_wav(path)?;
            if audio.sample_rate as f64 != config.sample_rate_hz {
                return Err(Error::input(format!(
                    "speech WAV is at {} Hz but the experiment runs at {} Hz",
                    audio.sample_rate, config.sample_rate_hz
                )));
            }
            if audio.channels.len() != 1 {
                return Err(Error::input(format!(
                    "speech WAV must be mono, got {} channels",
                    audio.channels.len()
                )));
            }
            Ok(audio.channels.into_iter().next().unwrap())
        }
        None => Ok(synthesize_speech(
            config.sample_rate_hz,
            config.speech_duration_s,
            config.seed,
        )),
    }
}

struct JobOutput {
    cells: Vec<CellResult>,
    failures: Vec<CellFailure>,
    deviations: Vec<TdoaDeviation>,
}

/// Run the full experiment. Scene jobs (one per T60 and source position)
/// run in parallel; the table is assembled in configuration order, so the
/// result does not depend on scheduling. Reference, unprocessed and
/// enhanced signals share one timeline (the reference carries the same
/// direct-path delay), so the metrics compare aligned signals.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    config.validate()?;
    let speech = experiment_speech(config)?;

    let jobs: Vec<(f64, usize)> = config
        .t60_ms
        .iter()
        .flat_map(|&t60| (0..config.source_positions_m.len()).map(move |p| (t60, p)))
        .collect();
    let outputs: Vec<JobOutput> = jobs
        .par_iter()
        .map(|&(t60_ms, position)| run_scene_job(config, &speech, t60_ms, position))
        .collect();

    let mut outcome = ExperimentOutcome::default();
    for output in outputs {
        outcome.cells.extend(output.cells);
        outcome.failures.extend(output.failures);
        outcome.tdoa_deviations.extend(output.deviations);
    }
    for &t60_ms in &config.t60_ms {
        for &source in &config.tdoa_sources {
            for &mode in &config.modes {
                let selected: Vec<&CellResult> = outcome
                    .cells
                    .iter()
                    .filter(|c| c.t60_ms == t60_ms && c.tdoa_source == source && c.mode == mode)
                    .collect();
                if selected.is_empty() {
                    continue;
                }
                let n = selected.len() as f64;
                outcome.table.rows.push(ResultRow {
                    mode,
                    tdoa_source: source,
                    t60_ms,
                    delta_fwssnr_db: selected.iter().map(|c| c.delta_fwssnr_db).sum::<f64>() / n,
                    delta_cd: selected.iter().map(|c| c.delta_cd).sum::<f64>() / n,
                    runtime_s: selected.iter().map(|c| c.runtime_s).sum::<f64>() / n,
                    positions: selected.len(),
                });
            }
        }
    }
    Ok(outcome)
}

/// Render one scene and evaluate every (mode, TDOA source) cell on it.
fn run_scene_job(
    config: &ExperimentConfig,
    speech: &[f64],
    t60_ms: f64,
    position: usize,
) -> JobOutput {
    let mut output = JobOutput {
        cells: Vec::new(),
        failures: Vec::new(),
        deviations: Vec::new(),
    };
    let fail_all = |message: String, output: &mut JobOutput| {
        for &source in &config.tdoa_sources {
            for &mode in &config.modes {
                output.failures.push(CellFailure {
                    mode,
                    tdoa_source: source,
                    t60_ms,
                    position_index: position,
                    message: message.clone(),
                });
            }
        }
    };

    let staged = (|| -> Result<_> {
        let scenario = config.scenario(config.source_positions_m[position], t60_ms)?;
        let scene = render_scene(&scenario, speech, config.sample_rate_hz, config.ref_mic_index)?;
        let stft = AnalysisConfig::new(FRAME_SIZE, FRAME_SHIFT, config.sample_rate_hz as u32)?;
        let tensor = analyze(&scene.mic_signals, &stft)?;
        let unprocessed = &scene.mic_signals[config.ref_mic_index];
        let base_fw = fwssnr(&scene.reference, unprocessed, config.sample_rate_hz)?;
        let base_cd = cepstral_distance(&scene.reference, unprocessed, config.sample_rate_hz)?;
        let oracle = oracle_tdoas(&scenario, config.ref_mic_index)?;
        let estimated = if config.tdoa_sources.contains(&TdoaSource::Estimated) {
            let est = estimate_all_tdoas(
                &scene.mic_signals,
                config.ref_mic_index,
                &GccParams::default(),
            )?;
            Some(est.into_iter().map(|e| e.tdoa).collect::<Vec<f64>>())
        } else {
            None
        };
        Ok((scene, tensor, base_fw, base_cd, oracle, estimated))
    })();
    let (scene, tensor, base_fw, base_cd, oracle, estimated) = match staged {
        Ok(parts) => parts,
        Err(e) => {
            fail_all(format!("scene setup failed: {e}"), &mut output);
            return output;
        }
    };
    if let Some(est) = &estimated {
        for (mic, (&o, &e)) in oracle.iter().zip(est).enumerate() {
            if mic != config.ref_mic_index {
                output.deviations.push(TdoaDeviation {
                    t60_ms,
                    position_index: position,
                    mic,
                    oracle: o,
                    estimated: e,
                });
            }
        }
    }

    for &source in &config.tdoa_sources {
        let tdoas = match source {
            TdoaSource::Oracle => &oracle,
            TdoaSource::Estimated => estimated.as_ref().expect("estimated TDOAs were staged"),
        };
        for &mode in &config.modes {
            let start = Instant::now();
            let cell = (|| -> Result<(f64, f64)> {
                let wpe_config = WpeConfig {
                    taps: config.taps_for(t60_ms),
                    base_delay: config.prediction_delay_frames,
                    sparsity: config.sparsity_exponent,
                    iterations: config.iterations,
                    delay_mode: mode,
                    crossband: CrossbandParams {
                        halfwidth: config.crossband_halfwidth,
                        acausal: config.acausal_taps,
                        causal: config.causal_taps,
                        ..CrossbandParams::default()
                    },
                    reference: config.ref_mic_index,
                    ..WpeConfig::default()
                };
                let (enhanced_tensor, _) = run_wpe(&tensor, tdoas, &wpe_config)?;
                let enhanced = synthesize(&enhanced_tensor)?
                    .into_iter()
                    .next()
                    .ok_or_else(|| Error::input("dereverberation produced no channel"))?;
                let fw = fwssnr(&scene.reference, &enhanced, config.sample_rate_hz)?;
                let cd = cepstral_distance(&scene.reference, &enhanced, config.sample_rate_hz)?;
                Ok((fw - base_fw, base_cd - cd))
            })();
            match cell {
                Ok((delta_fwssnr_db, delta_cd)) => output.cells.push(CellResult {
                    mode,
                    tdoa_source: source,
                    t60_ms,
                    position_index: position,
                    delta_fwssnr_db,
                    delta_cd,
                    runtime_s: start.elapsed().as_secs_f64(),
                }),
                Err(e) => output.failures.push(CellFailure {
                    mode,
                    tdoa_source: source,
                    t60_ms,
                    position_index: position,
                    message: e.to_string(),
                }),
            }
        }
    }
    output
}
