//! Scenario and experiment configuration files: flat TOML key-value text
//! with units spelled out in the key names, plus the plain-text TDOA file
//! format.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::delay::DelayMode;
use crate::error::{Error, Result};
use crate::room::{Scenario, SOUND_SPEED};

/// Where an experiment takes its TDOAs from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TdoaSource {
    /// Geometric TDOAs from the scenario.
    Oracle,
    /// GCC-PHAT estimates from the rendered microphone signals.
    Estimated,
}

impl TdoaSource {
    pub fn as_str(&self) -> &'static str {
        match self {
            TdoaSource::Oracle => "oracle",
            TdoaSource::Estimated => "estimated",
        }
    }
}

impl std::str::FromStr for TdoaSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(TdoaSource::Oracle),
            "estimated" => Ok(TdoaSource::Estimated),
            other => Err(Error::input(format!(
                "unknown TDOA source '{other}' (expected oracle or estimated)"
            ))),
        }
    }
}

impl std::fmt::Display for TdoaSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for TdoaSource {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for TdoaSource {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn default_sound_speed() -> f64 {
    SOUND_SPEED
}

/// A single acoustic scene, as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Room dimensions in meters.
    pub room_size_m: [f64; 3],
    /// Microphone positions in meters.
    pub mic_positions_m: Vec<[f64; 3]>,
    /// Source position in meters.
    pub source_position_m: [f64; 3],
    /// Reverberation time in milliseconds; 0 renders anechoic.
    pub t60_ms: f64,
    /// Sample rate in Hz.
    pub sample_rate_hz: f64,
    /// Speed of sound in m/s.
    #[serde(default = "default_sound_speed")]
    pub sound_speed_m_per_s: f64,
}

impl Default for ScenarioConfig {
    /// The desk scene at the central talker position of the default
    /// experiment line (see [`ExperimentConfig::default`]).
    fn default() -> Self {
        let experiment = ExperimentConfig::default();
        Self {
            room_size_m: experiment.room_size_m,
            mic_positions_m: experiment.mic_positions_m,
            source_position_m: experiment.source_positions_m[2],
            t60_ms: experiment.t60_ms[0],
            sample_rate_hz: experiment.sample_rate_hz,
            sound_speed_m_per_s: SOUND_SPEED,
        }
    }
}

impl ScenarioConfig {
    /// Convert to a validated scenario.
    pub fn to_scenario(&self) -> Result<Scenario> {
        let scenario = Scenario {
            room_dims: self.room_size_m,
            mic_positions: self.mic_positions_m.clone(),
            source_position: self.source_position_m,
            t60: self.t60_ms / 1000.0,
            fs: self.sample_rate_hz,
            sound_speed: self.sound_speed_m_per_s,
        };
        scenario.validate()?;
        Ok(scenario)
    }
}

/// The full four-mode comparison experiment, as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Delay modes to compare.
    pub modes: Vec<DelayMode>,
    /// TDOA sources to compare.
    pub tdoa_sources: Vec<TdoaSource>,
    /// Reverberation times in milliseconds, one experiment sweep per value.
    pub t60_ms: Vec<f64>,
    /// Room dimensions in meters.
    pub room_size_m: [f64; 3],
    /// Microphone positions in meters.
    pub mic_positions_m: Vec<[f64; 3]>,
    /// Source positions in meters; results are averaged over these.
    pub source_positions_m: Vec<[f64; 3]>,
    /// Reference microphone index.
    pub ref_mic_index: usize,
    /// Sample rate in Hz.
    pub sample_rate_hz: f64,
    /// Length of the synthesized test speech in seconds.
    pub speech_duration_s: f64,
    /// Seed for the speech synthesizer.
    pub seed: u64,
    /// Optional speech WAV to use instead of synthesized speech.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speech_wav_path: Option<PathBuf>,
    /// Prediction filter length in frames; when absent it is keyed to T60
    /// proportionally (8 frames at 500 ms).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub taps_frames: Option<usize>,
    /// Base prediction delay in frames.
    pub prediction_delay_frames: i64,
    /// Sparsity exponent of the desired-signal prior.
    pub sparsity_exponent: f64,
    /// Alternating optimization iterations.
    pub iterations: usize,
    /// Crossband half-width B.
    pub crossband_halfwidth: usize,
    /// Acausal sub-frame taps L_a.
    pub acausal_taps: usize,
    /// Causal sub-frame taps L_c.
    pub causal_taps: usize,
}

/// Prediction filter length keyed proportionally to the reverberation time:
/// 8 frames at T60 = 500 ms, 12 at 750 ms, 16 at 1000 ms.
pub fn taps_for_t60_ms(t60_ms: f64) -> usize {
    ((t60_ms * 8.0 / 500.0).round() as usize).max(1)
}

impl Default for ExperimentConfig {
    /// The desk-scale comparison: four mics spanning an 8 m x 8 m x 5 m
    /// room, six talker positions along a 1 m desk edge near the reference
    /// microphone, T60 = 500 ms.
    fn default() -> Self {
        Self {
            modes: DelayMode::all().to_vec(),
            tdoa_sources: vec![TdoaSource::Oracle, TdoaSource::Estimated],
            t60_ms: vec![500.0],
            room_size_m: [8.0, 8.0, 5.0],
            mic_positions_m: vec![
                [1.0, 1.0, 1.5],
                [7.0, 1.0, 1.5],
                [1.0, 7.0, 1.5],
                [7.0, 7.0, 1.5],
            ],
            source_positions_m: vec![
                [2.81644661, 3.46355339, 1.6],
                [2.95786797, 3.32213203, 1.6],
                [3.09928932, 3.18071068, 1.6],
                [3.24071068, 3.03928932, 1.6],
                [3.38213203, 2.89786797, 1.6],
                [3.52355339, 2.75644661, 1.6],
            ],
            ref_mic_index: 0,
            sample_rate_hz: 16000.0,
            speech_duration_s: 10.0,
            seed: 7,
            speech_wav_path: None,
            taps_frames: None,
            prediction_delay_frames: 2,
            sparsity_exponent: 0.5,
            iterations: 2,
            crossband_halfwidth: 4,
            acausal_taps: 2,
            causal_taps: 2,
        }
    }
}

impl ExperimentConfig {
    /// Check shape constraints that serde cannot express.
    pub fn validate(&self) -> Result<()> {
        if self.modes.is_empty() {
            return Err(Error::config("experiment needs at least one mode"));
        }
        if self.tdoa_sources.is_empty() {
            return Err(Error::config("experiment needs at least one TDOA source"));
        }
        if self.t60_ms.is_empty() {
            return Err(Error::config("experiment needs at least one T60"));
        }
        if self.source_positions_m.is_empty() {
            return Err(Error::config("experiment needs at least one source position"));
        }
        if self.mic_positions_m.len() < 2 {
            return Err(Error::config("experiment needs at least two microphones"));
        }
        if self.ref_mic_index >= self.mic_positions_m.len() {
            return Err(Error::config(format!(
                "reference microphone {} out of range ({} mics)",
                self.ref_mic_index,
                self.mic_positions_m.len()
            )));
        }
        if !(self.speech_duration_s > 0.0) {
            return Err(Error::config("speech duration must be positive"));
        }
        // every (position, T60) pair must form a valid scenario
        for &t60_ms in &self.t60_ms {
            for &src in &self.source_positions_m {
                self.scenario(src, t60_ms)?;
            }
        }
        Ok(())
    }

    /// The scenario for one source position and reverberation time.
    pub fn scenario(&self, source_position_m: [f64; 3], t60_ms: f64) -> Result<Scenario> {
        let scenario = Scenario {
            room_dims: self.room_size_m,
            mic_positions: self.mic_positions_m.clone(),
            source_position: source_position_m,
            t60: t60_ms / 1000.0,
            fs: self.sample_rate_hz,
            sound_speed: SOUND_SPEED,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    /// Prediction filter length for one reverberation time, honoring an
    /// explicit override.
    pub fn taps_for(&self, t60_ms: f64) -> usize {
        self.taps_frames.unwrap_or_else(|| taps_for_t60_ms(t60_ms))
    }
}

/// Parse a TOML document into a config type.
pub fn parse_config<T: serde::de::DeserializeOwned>(text: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| Error::input(format!("config parse error: {e}")))
}

/// Serialize a config type to TOML.
pub fn serialize_config<T: Serialize>(value: &T) -> Result<String> {
    toml::to_string_pretty(value).map_err(|e| Error::input(format!("config serialize error: {e}")))
}

/// Load a config from disk, attaching the path to any error.
pub fn load_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    parse_config(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

/// Write per-microphone TDOAs: one `mic_index<TAB>tdoa_samples` line per mic.
pub fn write_tdoa_file(path: &Path, tdoas: &[f64]) -> Result<()> {
    let mut text = String::new();
    for (m, t) in tdoas.iter().enumerate() {
        text.push_str(&format!("{m}\t{t}\n"));
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// Read a TDOA file back into a dense per-microphone vector. Every index in
/// `0..M` must appear exactly once.
pub fn read_tdoa_file(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    let mut entries: Vec<(usize, f64)> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parse = || -> Option<(usize, f64)> {
            let mut it = line.split_whitespace();
            let idx = it.next()?.parse().ok()?;
            let tdoa = it.next()?.parse().ok()?;
            if it.next().is_some() {
                return None;
            }
            Some((idx, tdoa))
        };
        let (idx, tdoa) = parse().ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            msg: format!(
                "line {}: expected 'mic_index<TAB>tdoa_samples', got '{line}'",
                lineno + 1
            ),
        })?;
        entries.push((idx, tdoa));
    }
    if entries.is_empty() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            msg: "no TDOA entries".into(),
        });
    }
    let m = entries.len();
    let mut tdoas = vec![None; m];
    for (idx, tdoa) in entries {
        if idx >= m || tdoas[idx].is_some() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                msg: format!("mic indices must cover 0..{m} exactly once"),
            });
        }
        tdoas[idx] = Some(tdoa);
    }
    Ok(tdoas.into_iter().map(Option::unwrap).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desk_scenario_config() -> ScenarioConfig {
        ScenarioConfig {
            room_size_m: [8.0, 8.0, 5.0],
            mic_positions_m: vec![
                [1.0, 1.0, 1.5],
                [7.0, 1.0, 1.5],
                [1.0, 7.0, 1.5],
                [7.0, 7.0, 1.5],
            ],
            source_position_m: [3.0, 3.2, 1.6],
            t60_ms: 500.0,
            sample_rate_hz: 16000.0,
            sound_speed_m_per_s: SOUND_SPEED,
        }
    }

    #[test]
    fn scenario_config_round_trips() {
        let config = desk_scenario_config();
        let text = serialize_config(&config).unwrap();
        let back: ScenarioConfig = parse_config(&text).unwrap();
        assert_eq!(config, back);
        assert!(config.to_scenario().is_ok());
    }

    #[test]
    fn experiment_config_round_trips() {
        let config = ExperimentConfig::default();
        let text = serialize_config(&config).unwrap();
        let back: ExperimentConfig = parse_config(&text).unwrap();
        assert_eq!(config, back);
        assert!(config.validate().is_ok());
    }

    #[test]
    fn config_keys_carry_units() {
        let text = serialize_config(&ExperimentConfig::default()).unwrap();
        for key in ["t60_ms", "room_size_m", "sample_rate_hz", "speech_duration_s"] {
            assert!(text.contains(key), "missing key {key} in:\n{text}");
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut text = serialize_config(&desk_scenario_config()).unwrap();
        text.push_str("\nmystery_knob = 3\n");
        assert!(parse_config::<ScenarioConfig>(&text).is_err());
    }

    #[test]
    fn taps_follow_reverberation_time() {
        assert_eq!(taps_for_t60_ms(500.0), 8);
        assert_eq!(taps_for_t60_ms(750.0), 12);
        assert_eq!(taps_for_t60_ms(1000.0), 16);
    }

    #[test]
    fn tdoa_file_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tdoas.txt");
        let tdoas = vec![0.0, -83.65234, -42.71, -112.66];
        write_tdoa_file(&path, &tdoas).unwrap();
        let back = read_tdoa_file(&path).unwrap();
        assert_eq!(tdoas, back);
    }

    #[test]
    fn tdoa_file_rejects_malformed_input() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.txt");
        std::fs::write(&path, "0\t0.0\nnot a line\n").unwrap();
        assert!(read_tdoa_file(&path).is_err());
        std::fs::write(&path, "0\t0.0\n0\t1.0\n").unwrap();
        assert!(read_tdoa_file(&path).is_err());
        std::fs::write(&path, "0\t0.0\n2\t1.0\n").unwrap();
        assert!(read_tdoa_file(&path).is_err());
        std::fs::write(&path, "").unwrap();
        assert!(read_tdoa_file(&path).is_err());
    }

    #[test]
    fn experiment_validation_catches_shape_errors() {
        let mut config = ExperimentConfig::default();
        config.modes.clear();
        assert!(config.validate().is_err());

        let mut config = ExperimentConfig::default();
        config.ref_mic_index = 9;
        assert!(config.validate().is_err());

        let mut config = ExperimentConfig::default();
        config.source_positions_m = vec![[9.0, 1.0, 1.0]]; // outside the room
        assert!(config.validate().is_err());
    }
}
