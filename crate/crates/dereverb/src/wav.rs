//! WAV file I/O: reads 32-bit float and 16-bit integer PCM, writes 32-bit
//! float, with channels kept as separate sample vectors.

use std::path::Path;

use crate::error::{Error, Result};

/// Audio loaded from or destined for a WAV file.
#[derive(Debug, Clone, PartialEq)]
pub struct Audio {
    /// One vector per channel, equal lengths.
    pub channels: Vec<Vec<f64>>,
    /// Sample rate in Hz.
    pub sample_rate: u32,
}

impl Audio {
    /// Wrap channel data, checking shape.
    pub fn new(channels: Vec<Vec<f64>>, sample_rate: u32) -> Result<Self> {
        if channels.is_empty() || channels[0].is_empty() {
            return Err(Error::input("audio must have at least one nonempty channel"));
        }
        let len = channels[0].len();
        if channels.iter().any(|c| c.len() != len) {
            return Err(Error::input("audio channels must share one length"));
        }
        Ok(Self {
            channels,
            sample_rate,
        })
    }

    /// Number of samples per channel.
    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }

    /// True when there are no samples.
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Read a WAV file; accepts 32-bit float and 16-bit integer PCM (the latter
/// normalized to ±1).
pub fn read_wav(path: &Path) -> Result<Audio> {
    let reader = hound::WavReader::open(path).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    let spec = reader.spec();
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(Error::from)?,
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| f64::from(v) / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(Error::from)?,
        (format, bits) => {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                msg: format!(
                    "unsupported sample format {format:?} at {bits} bits; \
                     expected 32-bit float or 16-bit integer PCM"
                ),
            })
        }
    };
    let m = spec.channels as usize;
    if m == 0 || interleaved.is_empty() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            msg: "file contains no audio".into(),
        });
    }
    let frames = interleaved.len() / m;
    let mut channels = vec![Vec::with_capacity(frames); m];
    for (i, &v) in interleaved.iter().enumerate() {
        channels[i % m].push(v);
    }
    Audio::new(channels, spec.sample_rate)
}

/// Write audio as 32-bit float PCM.
pub fn write_wav(path: &Path, audio: &Audio) -> Result<()> {
    if audio.channels.is_empty() || audio.is_empty() {
        return Err(Error::input("refusing to write an empty WAV file"));
    }
    let spec = hound::WavSpec {
        channels: audio.channels.len() as u16,
        sample_rate: audio.sample_rate,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    for i in 0..audio.len() {
        for ch in &audio.channels {
            writer.write_sample(ch[i] as f32)?;
        }
    }
    writer.finalize()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn float_round_trip_preserves_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let channels: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..500).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let audio = Audio::new(channels, 16000).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.wav");
        write_wav(&path, &audio).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.sample_rate, 16000);
        assert_eq!(back.channels.len(), 3);
        for (a, b) in audio.channels.iter().zip(&back.channels) {
            for (x, y) in a.iter().zip(b) {
                // exact up to the f32 quantization of the container
                assert!((x - y).abs() <= (*x as f32).abs() as f64 * 1e-7 + 1e-9);
            }
        }
    }

    #[test]
    fn reads_16_bit_pcm_normalized() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pcm.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 8000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut writer = hound::WavWriter::create(&path, spec).unwrap();
        for v in [0i16, 16384, -16384, 32767, -32768] {
            writer.write_sample(v).unwrap();
        }
        writer.finalize().unwrap();
        let audio = read_wav(&path).unwrap();
        assert_eq!(audio.channels.len(), 1);
        let ch = &audio.channels[0];
        assert_eq!(ch[0], 0.0);
        assert!((ch[1] - 0.5).abs() < 1e-9);
        assert!((ch[2] + 0.5).abs() < 1e-9);
        assert!((ch[3] - 32767.0 / 32768.0).abs() < 1e-9);
        assert_eq!(ch[4], -1.0);
    }

    #[test]
    fn rejects_empty_and_ragged_audio() {
        assert!(Audio::new(vec![], 16000).is_err());
        assert!(Audio::new(vec![vec![]], 16000).is_err());
        assert!(Audio::new(vec![vec![0.0; 5], vec![0.0; 6]], 16000).is_err());
        let dir = tempfile::tempdir().unwrap();
        assert!(read_wav(&dir.path().join("missing.wav")).is_err());
    }
}
