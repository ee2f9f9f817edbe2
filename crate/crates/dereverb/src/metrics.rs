//! Objective speech-quality metrics: frequency-weighted segmental SNR on a
//! mel filterbank and LPC cepstral distance, both computed over active
//! frames of the reference signal.

use crate::error::{Error, Result};
use num_complex::Complex64;

use crate::stft::FftPair;

/// Upper clamp of the per-band SNR in dB; identical signals score exactly this.
pub const FWSSNR_MAX_DB: f64 = 35.0;
/// Lower clamp of the per-band SNR in dB.
pub const FWSSNR_MIN_DB: f64 = -10.0;
/// Upper clamp of the per-frame cepstral distance.
pub const CD_MAX: f64 = 10.0;
/// Frames quieter than this relative to the loudest reference frame are
/// excluded from both metrics.
pub const ACTIVITY_THRESHOLD_DB: f64 = -60.0;
/// Number of mel bands in the FWSSNR filterbank.
pub const MEL_BANDS: usize = 23;
/// LPC model order behind the cepstral distance.
pub const LPC_ORDER: usize = 10;
/// Exponent of the band-energy weighting in FWSSNR.
pub const BAND_WEIGHT_EXPONENT: f64 = 0.2;

/// Analysis frame length in samples: 25 ms.
fn frame_len(fs: f64) -> usize {
    (0.025 * fs).round() as usize
}

fn mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn inverse_mel(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular mel filterbank over the one-sided spectrum of an `nfft`-point
/// transform; rows are bands, columns are frequency bins.
fn mel_filterbank(bands: usize, nfft: usize, fs: f64) -> Vec<Vec<f64>> {
    let top = mel(fs / 2.0);
    let bins: Vec<usize> = (0..bands + 2)
        .map(|i| {
            let edge = inverse_mel(top * i as f64 / (bands + 1) as f64);
            ((edge / fs * nfft as f64).floor() as usize).min(nfft / 2)
        })
        .collect();
    let mut fb = vec![vec![0.0; nfft / 2 + 1]; bands];
    for b in 0..bands {
        let (lo, ce, hi) = (bins[b], bins[b + 1], bins[b + 2]);
        for i in lo..ce {
            fb[b][i] = (i - lo) as f64 / (ce - lo) as f64;
        }
        for i in ce..hi {
            fb[b][i] = (hi - i) as f64 / (hi - ce) as f64;
        }
    }
    fb
}

fn make_hann(len: usize) -> Vec<f64> {
    let denom = (len - 1) as f64;
    (0..len)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / denom).cos())
        .collect()
}

/// Windowed frames of a signal: frame length `flen`, hop `flen/4`.
fn windowed_frames(x: &[f64], flen: usize, window: &[f64]) -> Vec<Vec<f64>> {
    let hop = flen / 4;
    let count = if x.len() >= flen {
        1 + (x.len() - flen) / hop
    } else {
        0
    };
    (0..count)
        .map(|i| {
            x[i * hop..i * hop + flen]
                .iter()
                .zip(window)
                .map(|(v, w)| v * w)
                .collect()
        })
        .collect()
}

/// Frame activity mask: energy within [`ACTIVITY_THRESHOLD_DB`] of the
/// loudest frame.
fn activity_mask(frames: &[Vec<f64>]) -> Vec<bool> {
    let energies: Vec<f64> = frames
        .iter()
        .map(|f| f.iter().map(|v| v * v).sum::<f64>())
        .collect();
    let max = energies.iter().fold(0.0f64, |m, &e| m.max(e));
    energies
        .iter()
        .map(|&e| {
            max > 0.0 && 10.0 * (e / max + 1e-300).log10() > ACTIVITY_THRESHOLD_DB
        })
        .collect()
}

fn check_metric_input(reference: &[f64], test: &[f64], fs: f64) -> Result<usize> {
    if !(fs > 0.0) || !fs.is_finite() {
        return Err(Error::input("sample rate must be positive"));
    }
    let flen = frame_len(fs);
    let common = reference.len().min(test.len());
    if common < flen {
        return Err(Error::input(format!(
            "signals must span at least one {flen}-sample frame, got {common}"
        )));
    }
    Ok(common)
}

/// Frequency-weighted segmental SNR in dB between a reference and a test
/// signal: per frame and mel band, the SNR of the reference magnitude
/// against the magnitude error, clamped to
/// [[`FWSSNR_MIN_DB`], [`FWSSNR_MAX_DB`]], weighted by the reference band
/// energy to the power [`BAND_WEIGHT_EXPONENT`] and averaged over active
/// frames.
pub fn fwssnr(reference: &[f64], test: &[f64], fs: f64) -> Result<f64> {
    let common = check_metric_input(reference, test, fs)?;
    let flen = frame_len(fs);
    let nfft = 512usize.max(flen.next_power_of_two());
    let window = make_hann(flen);
    let frames_r = windowed_frames(&reference[..common], flen, &window);
    let frames_t = windowed_frames(&test[..common], flen, &window);
    let active = activity_mask(&frames_r);
    let fb = mel_filterbank(MEL_BANDS, nfft, fs);
    let fft = FftPair::new(nfft);

    let mut sum = 0.0;
    let mut count = 0usize;
    for ((fr, ft), act) in frames_r.iter().zip(&frames_t).zip(&active) {
        if !act {
            continue;
        }
        let pr = power_spectrum(fr, nfft, &fft);
        let pt = power_spectrum(ft, nfft, &fft);
        let mut num = 0.0;
        let mut den = 0.0;
        for band in &fb {
            let er: f64 = band.iter().zip(&pr).map(|(w, p)| w * p).sum();
            let et: f64 = band.iter().zip(&pt).map(|(w, p)| w * p).sum();
            let diff = er.sqrt() - et.sqrt();
            let snr = 10.0
                * (er.max(1e-300) / (diff * diff).max(1e-300)).log10();
            let weight = er.powf(BAND_WEIGHT_EXPONENT);
            num += weight * snr.clamp(FWSSNR_MIN_DB, FWSSNR_MAX_DB);
            den += weight;
        }
        sum += num / den.max(1e-300);
        count += 1;
    }
    if count == 0 {
        return Err(Error::input("reference signal has no active frames"));
    }
    Ok(sum / count as f64)
}

/// One-sided power spectrum of a zero-padded frame.
fn power_spectrum(frame: &[f64], nfft: usize, fft: &FftPair) -> Vec<f64> {
    let mut buf: Vec<Complex64> = frame.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    buf.resize(nfft, Complex64::new(0.0, 0.0));
    fft.forward.process(&mut buf);
    buf[..nfft / 2 + 1].iter().map(|c| c.norm_sqr()).collect()
}

/// LPC cepstral coefficients `c[1..=order]` of one windowed frame, or `None`
/// when the autocorrelation is degenerate (silent or unstable frame).
fn lpc_cepstrum(frame: &[f64], order: usize) -> Option<Vec<f64>> {
    let n = frame.len();
    let mut r = vec![0.0; order + 1];
    for (i, ri) in r.iter_mut().enumerate() {
        *ri = frame[..n - i]
            .iter()
            .zip(&frame[i..])
            .map(|(a, b)| a * b)
            .sum();
    }
    if r[0] <= 0.0 {
        return None;
    }
    // Levinson-Durbin recursion for the prediction polynomial a
    let mut a = vec![0.0; order + 1];
    a[0] = 1.0;
    let mut e = r[0];
    for i in 1..=order {
        let mut acc = r[i];
        for j in 1..i {
            acc += a[j] * r[i - j];
        }
        let k = -acc / e;
        let prev = a[1..i].to_vec();
        for j in 1..i {
            a[j] = prev[j - 1] + k * prev[i - 1 - j];
        }
        a[i] = k;
        e *= 1.0 - k * k;
        if e <= 0.0 {
            return None;
        }
    }
    // cepstrum of the all-pole model from the recursion over a
    let mut c = vec![0.0; order + 1];
    for n_ in 1..=order {
        let mut acc = -a[n_];
        for m in 1..n_ {
            acc -= (m as f64 / n_ as f64) * c[m] * a[n_ - m];
        }
        c[n_] = acc;
    }
    Some(c[1..].to_vec())
}

/// Mean LPC cepstral distance between a reference and a test signal over
/// active frames where both LPC fits succeed; per-frame distances are
/// clamped to [`CD_MAX`]. Identical signals score exactly zero, and the
/// measure is invariant to a common gain on either signal.
pub fn cepstral_distance(reference: &[f64], test: &[f64], fs: f64) -> Result<f64> {
    let common = check_metric_input(reference, test, fs)?;
    let flen = frame_len(fs);
    let window = make_hann(flen);
    let frames_r = windowed_frames(&reference[..common], flen, &window);
    let frames_t = windowed_frames(&test[..common], flen, &window);
    let active = activity_mask(&frames_r);

    let mut sum = 0.0;
    let mut count = 0usize;
    for ((fr, ft), act) in frames_r.iter().zip(&frames_t).zip(&active) {
        if !act {
            continue;
        }
        let (Some(cr), Some(ct)) = (lpc_cepstrum(fr, LPC_ORDER), lpc_cepstrum(ft, LPC_ORDER))
        else {
            continue;
        };
        let sq: f64 = cr.iter().zip(&ct).map(|(a, b)| (a - b) * (a - b)).sum();
        let d = 10.0 / std::f64::consts::LN_10 * (2.0 * sq).sqrt();
        sum += d.min(CD_MAX);
        count += 1;
    }
    if count == 0 {
        return Err(Error::input(
            "no active frames with a valid LPC fit in both signals",
        ));
    }
    Ok(sum / count as f64)
}
