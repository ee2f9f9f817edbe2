//! Short-time Fourier transform framework with square-root Hann windows.
//!
//! Analysis applies the window only; synthesis applies the window again and
//! divides by the overlap-add constant, so an untouched tensor reconstructs
//! the input signal exactly (up to FFT roundoff). The signal is zero-padded
//! by `frame_size - frame_shift` samples in front so that every input sample
//! is covered by a full set of overlapping windows, which makes the
//! round-trip exact from the very first sample.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// STFT framing parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AnalysisConfig {
    /// Frame (and FFT) size in samples.
    pub frame_size: usize,
    /// Hop between consecutive frames in samples.
    pub frame_shift: usize,
    /// Sample rate in Hz.
    pub sample_rate: u32,
}

impl AnalysisConfig {
    pub fn new(frame_size: usize, frame_shift: usize, sample_rate: u32) -> Result<Self> {
        if frame_size == 0 || frame_shift == 0 {
            return Err(Error::config("frame size and shift must be positive"));
        }
        if frame_size % 2 != 0 {
            return Err(Error::config("frame size must be even"));
        }
        if frame_size % frame_shift != 0 {
            return Err(Error::config(format!(
                "frame shift {frame_shift} must divide frame size {frame_size}"
            )));
        }
        if frame_size / frame_shift < 2 {
            return Err(Error::config("overlap factor must be at least 2"));
        }
        Ok(Self {
            frame_size,
            frame_shift,
            sample_rate,
        })
    }

    /// Number of one-sided spectrum bins, `frame_size / 2 + 1`.
    pub fn num_bins(&self) -> usize {
        self.frame_size / 2 + 1
    }

    /// Overlap-add constant of the squared window at this hop.
    ///
    /// For the square-root Hann pair the window product is a periodic Hann,
    /// whose shifted copies sum to `frame_size / (2 * frame_shift)`.
    pub fn cola_constant(&self) -> f64 {
        self.frame_size as f64 / (2.0 * self.frame_shift as f64)
    }

    fn pad_start(&self) -> usize {
        self.frame_size - self.frame_shift
    }

    /// Number of frames the analysis of a `signal_len`-sample signal produces.
    pub fn num_frames_for(&self, signal_len: usize) -> usize {
        (self.pad_start() + signal_len - 1) / self.frame_shift + 1
    }
}

/// Complex subband coefficients for `M` channels, one-sided spectrum.
///
/// Data is stored with frames contiguous per (channel, bin) row, which is the
/// access pattern of all per-subband processing.
#[derive(Debug, Clone)]
pub struct StftTensor {
    data: Vec<Complex64>,
    num_channels: usize,
    num_bins: usize,
    num_frames: usize,
    /// Length in samples of the signal this tensor was analyzed from;
    /// `synthesize` truncates its output back to this length.
    pub signal_len: usize,
    pub config: AnalysisConfig,
}

impl StftTensor {
    /// All-zero tensor with the given dimensions.
    pub fn zeros(
        num_channels: usize,
        num_frames: usize,
        signal_len: usize,
        config: AnalysisConfig,
    ) -> Self {
        let num_bins = config.num_bins();
        Self {
            data: vec![Complex64::new(0.0, 0.0); num_channels * num_bins * num_frames],
            num_channels,
            num_bins,
            num_frames,
            signal_len,
            config,
        }
    }

    pub fn num_channels(&self) -> usize {
        self.num_channels
    }

    pub fn num_bins(&self) -> usize {
        self.num_bins
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    /// Frames of one subband of one channel.
    pub fn row(&self, channel: usize, bin: usize) -> &[Complex64] {
        let start = (channel * self.num_bins + bin) * self.num_frames;
        &self.data[start..start + self.num_frames]
    }

    pub fn row_mut(&mut self, channel: usize, bin: usize) -> &mut [Complex64] {
        let start = (channel * self.num_bins + bin) * self.num_frames;
        &mut self.data[start..start + self.num_frames]
    }

    /// Tensor holding a single channel copied out of `self`.
    pub fn extract_channel(&self, channel: usize) -> Result<StftTensor> {
        if channel >= self.num_channels {
            return Err(Error::input(format!(
                "channel {channel} out of range ({} channels)",
                self.num_channels
            )));
        }
        let mut out = StftTensor::zeros(1, self.num_frames, self.signal_len, self.config);
        let start = channel * self.num_bins * self.num_frames;
        out.data
            .copy_from_slice(&self.data[start..start + self.num_bins * self.num_frames]);
        Ok(out)
    }

    fn check_consistent(&self) -> Result<()> {
        if self.num_bins != self.config.num_bins() {
            return Err(Error::input(format!(
                "tensor has {} bins but config implies {}",
                self.num_bins,
                self.config.num_bins()
            )));
        }
        if self.data.len() != self.num_channels * self.num_bins * self.num_frames {
            return Err(Error::input("tensor dimensions inconsistent with storage"));
        }
        if self.config.num_frames_for(self.signal_len) != self.num_frames {
            return Err(Error::input(format!(
                "tensor has {} frames but signal length {} implies {}",
                self.num_frames,
                self.signal_len,
                self.config.num_frames_for(self.signal_len)
            )));
        }
        Ok(())
    }
}

/// Periodic square-root Hann window: `w[t] = sqrt(0.5 - 0.5 cos(2 pi t / K))`.
pub fn make_sqrt_hann(frame_size: usize) -> Result<Vec<f64>> {
    if frame_size < 2 || frame_size % 2 != 0 {
        return Err(Error::config(format!(
            "sqrt-Hann window length must be even and >= 2, got {frame_size}"
        )));
    }
    let k = frame_size as f64;
    Ok((0..frame_size)
        .map(|t| (0.5 - 0.5 * (2.0 * std::f64::consts::PI * t as f64 / k).cos()).sqrt())
        .collect())
}

/// Forward STFT of a real multichannel signal (`signal[channel][sample]`).
pub fn analyze(signal: &[Vec<f64>], config: &AnalysisConfig) -> Result<StftTensor> {
    if signal.is_empty() || signal[0].is_empty() {
        return Err(Error::input("empty signal"));
    }
    let len = signal[0].len();
    if signal.iter().any(|ch| ch.len() != len) {
        return Err(Error::input("channels must have equal length"));
    }
    if len < config.frame_size {
        return Err(Error::input(format!(
            "signal length {len} shorter than one frame ({})",
            config.frame_size
        )));
    }
    let k = config.frame_size;
    let hop = config.frame_shift;
    let window = make_sqrt_hann(k)?;
    let pad_start = config.pad_start();
    let num_frames = config.num_frames_for(len);

    let fft = FftPlanner::new().plan_fft_forward(k);
    let mut tensor = StftTensor::zeros(signal.len(), num_frames, len, *config);
    let mut buf = vec![Complex64::new(0.0, 0.0); k];

    for (m, channel) in signal.iter().enumerate() {
        for n in 0..num_frames {
            // frame n covers padded samples [n*hop, n*hop + K)
            let frame_start = n as isize * hop as isize - pad_start as isize;
            for (t, b) in buf.iter_mut().enumerate() {
                let src = frame_start + t as isize;
                let x = if src >= 0 && (src as usize) < len {
                    channel[src as usize]
                } else {
                    0.0
                };
                *b = Complex64::new(x * window[t], 0.0);
            }
            fft.process(&mut buf);
            for kb in 0..tensor.num_bins {
                tensor.row_mut(m, kb)[n] = buf[kb];
            }
        }
    }
    Ok(tensor)
}

/// Inverse STFT by weighted overlap-add; output truncated to `signal_len`.
pub fn synthesize(tensor: &StftTensor) -> Result<Vec<Vec<f64>>> {
    tensor.check_consistent()?;
    let k = tensor.config.frame_size;
    let hop = tensor.config.frame_shift;
    let window = make_sqrt_hann(k)?;
    let cola = tensor.config.cola_constant();
    let pad_start = k - hop;
    let padded_len = (tensor.num_frames - 1) * hop + k;

    let ifft = FftPlanner::new().plan_fft_inverse(k);
    let mut out = vec![vec![0.0; tensor.signal_len]; tensor.num_channels];
    let mut spectrum = vec![Complex64::new(0.0, 0.0); k];
    let mut padded = vec![0.0; padded_len];

    for (m, channel) in out.iter_mut().enumerate() {
        padded.iter_mut().for_each(|v| *v = 0.0);
        for n in 0..tensor.num_frames {
            // rebuild the full spectrum from the one-sided half
            for kb in 0..tensor.num_bins {
                spectrum[kb] = tensor.row(m, kb)[n];
            }
            for kb in tensor.num_bins..k {
                spectrum[kb] = tensor.row(m, k - kb)[n].conj();
            }
            ifft.process(&mut spectrum);
            let base = n * hop;
            for t in 0..k {
                // rustfft leaves the inverse unnormalized
                padded[base + t] += spectrum[t].re / k as f64 * window[t];
            }
        }
        for (t, v) in channel.iter_mut().enumerate() {
            *v = padded[pad_start + t] / cola;
        }
    }
    Ok(out)
}

/// Shared FFT plans for repeated transforms of one size.
#[derive(Clone)]
pub struct FftPair {
    pub forward: Arc<dyn Fft<f64>>,
    pub inverse: Arc<dyn Fft<f64>>,
}

impl FftPair {
    pub fn new(size: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            forward: planner.plan_fft_forward(size),
            inverse: planner.plan_fft_inverse(size),
        }
    }
}
