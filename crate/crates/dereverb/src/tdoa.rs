//! TDOA estimation with GCC-PHAT: frame-averaged phase-transform
//! cross-correlation with parabolic sub-sample refinement.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::stft::FftPair;

/// Framing parameters for the cross-correlation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GccParams {
    /// Analysis frame length in samples. Must be at least twice the largest
    /// expected |TDOA| so the true peak lies inside the lag range.
    pub frame: usize,
    /// Hop between analysis frames in samples.
    pub shift: usize,
}

impl Default for GccParams {
    fn default() -> Self {
        Self {
            frame: 2048,
            shift: 1024,
        }
    }
}

/// One microphone's estimated time difference of arrival.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TdoaEstimate {
    /// TDOA in samples, sub-sample resolution. Positive means the microphone
    /// hears the source earlier than the reference (it is closer), matching
    /// the geometric convention of `room::oracle_tdoas`.
    pub tdoa: f64,
    /// Peak-to-average ratio of the pooled correlation function; at least 1.
    /// The reference microphone's own entry carries infinite confidence.
    pub confidence: f64,
}

/// Symmetric Hann window with zero endpoints.
fn make_hann(len: usize) -> Vec<f64> {
    let denom = (len - 1) as f64;
    (0..len)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / denom).cos())
        .collect()
}

/// Estimate the TDOA of `x_m` relative to `x_ref` with GCC-PHAT.
///
/// Each frame's cross-power spectrum is normalized to unit magnitude (the
/// phase transform), the correlation functions are averaged over frames,
/// and the peak over lags in `(-frame/2, frame/2]` is refined by parabolic
/// interpolation. A positive result means `x_m` leads the reference.
pub fn gcc_phat_pair(x_ref: &[f64], x_m: &[f64], params: &GccParams) -> Result<TdoaEstimate> {
    let frame = params.frame;
    if frame < 4 || params.shift == 0 {
        return Err(Error::config(
            "GCC frame must be at least 4 samples and the shift nonzero",
        ));
    }
    if x_ref.len() != x_m.len() {
        return Err(Error::input(format!(
            "channel lengths differ: {} vs {}",
            x_ref.len(),
            x_m.len()
        )));
    }
    if x_ref.len() < frame {
        return Err(Error::input(format!(
            "signal of {} samples is shorter than one {frame}-sample frame",
            x_ref.len()
        )));
    }

    let window = make_hann(frame);
    let fft = FftPair::new(frame);
    let mut pooled = vec![0.0; frame];
    let mut used = 0usize;
    let mut start = 0;
    while start + frame <= x_ref.len() {
        let mut fa: Vec<Complex64> = Vec::with_capacity(frame);
        let mut fb: Vec<Complex64> = Vec::with_capacity(frame);
        let mut ea = 0.0;
        let mut eb = 0.0;
        for i in 0..frame {
            let a = x_ref[start + i] * window[i];
            let b = x_m[start + i] * window[i];
            ea += a * a;
            eb += b * b;
            fa.push(Complex64::new(a, 0.0));
            fb.push(Complex64::new(b, 0.0));
        }
        start += params.shift;
        if ea <= f64::MIN_POSITIVE || eb <= f64::MIN_POSITIVE {
            continue; // silent frame carries no timing information
        }
        fft.forward.process(&mut fa);
        fft.forward.process(&mut fb);
        // conj(X_m) * X_ref peaks at the delay of the reference relative to
        // mic m: positive when mic m leads
        let mut cross: Vec<Complex64> = fb
            .iter()
            .zip(&fa)
            .map(|(b, a)| b.conj() * a)
            .collect();
        let peak_mag = cross.iter().map(|c| c.norm()).fold(0.0, f64::max);
        let floor = 1e-12 * peak_mag + f64::MIN_POSITIVE;
        for c in cross.iter_mut() {
            *c /= c.norm().max(floor);
        }
        fft.inverse.process(&mut cross);
        for (p, c) in pooled.iter_mut().zip(&cross) {
            *p += c.re / frame as f64;
        }
        used += 1;
    }
    if used == 0 {
        return Err(Error::input(
            "all frames are silent; cannot estimate a TDOA",
        ));
    }
    for p in pooled.iter_mut() {
        *p /= used as f64;
    }

    // lags run over (-frame/2, frame/2]; circular index = lag mod frame
    let half = frame as i64 / 2;
    let lag_at = |j: usize| -> i64 { j as i64 - (half - 1) };
    let value_at = |lag: i64| -> f64 { pooled[lag.rem_euclid(frame as i64) as usize] };
    let mut peak_j = 0;
    let mut peak_v = f64::MIN;
    for j in 0..frame {
        let v = value_at(lag_at(j));
        if v > peak_v {
            peak_v = v;
            peak_j = j;
        }
    }
    let peak_lag = lag_at(peak_j);
    let mut tdoa = peak_lag as f64;
    if peak_j > 0 && peak_j + 1 < frame {
        let y0 = value_at(peak_lag - 1);
        let y1 = peak_v;
        let y2 = value_at(peak_lag + 1);
        let denom = y0 - 2.0 * y1 + y2;
        if denom != 0.0 {
            tdoa += 0.5 * (y0 - y2) / denom;
        }
    }
    let mean_abs = pooled.iter().map(|p| p.abs()).sum::<f64>() / frame as f64;
    let confidence = if mean_abs > 0.0 {
        (peak_v / mean_abs).max(1.0)
    } else {
        1.0
    };
    Ok(TdoaEstimate { tdoa, confidence })
}

/// Estimate every microphone's TDOA relative to one reference channel.
///
/// The reference entry is exactly zero with infinite confidence; the others
/// come from [`gcc_phat_pair`].
pub fn estimate_all_tdoas(
    channels: &[Vec<f64>],
    ref_index: usize,
    params: &GccParams,
) -> Result<Vec<TdoaEstimate>> {
    if channels.len() < 2 {
        return Err(Error::input("need at least 2 channels to estimate TDOAs"));
    }
    let x_ref = channels.get(ref_index).ok_or_else(|| {
        Error::input(format!(
            "reference index {ref_index} out of range ({} channels)",
            channels.len()
        ))
    })?;
    channels
        .iter()
        .enumerate()
        .map(|(m, x_m)| {
            if m == ref_index {
                Ok(TdoaEstimate {
                    tdoa: 0.0,
                    confidence: f64::INFINITY,
                })
            } else {
                gcc_phat_pair(x_ref, x_m, params).map_err(|e| {
                    Error::input(format!("TDOA estimation failed for microphone {m}: {e}"))
                })
            }
        })
        .collect()
}
