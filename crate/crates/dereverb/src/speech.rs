//! Deterministic synthetic speech: a source-filter synthesizer with pitch
//! jitter, formant glides, nasals, fricatives and plosive bursts, good
//! enough to exercise dereverberation and TDOA estimation end to end.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Formant triples (F1, F2, F3 in Hz) spanning the vowel space.
const VOWELS: [[f64; 3]; 6] = [
    [730.0, 1090.0, 2440.0],
    [270.0, 2290.0, 3010.0],
    [300.0, 870.0, 2240.0],
    [660.0, 1720.0, 2410.0],
    [530.0, 1840.0, 2480.0],
    [440.0, 1020.0, 2240.0],
];

/// Two-pole resonator coefficients for a center frequency and bandwidth.
fn resonator_coeffs(freq: f64, bandwidth: f64, fs: f64) -> (f64, f64, f64) {
    let r = (-std::f64::consts::PI * bandwidth / fs).exp();
    let theta = 2.0 * std::f64::consts::PI * freq / fs;
    let a1 = -2.0 * r * theta.cos();
    let a2 = r * r;
    let b0 = (1.0 - r) * (1.0 - 2.0 * r * (2.0 * theta).cos() + r * r).sqrt();
    (b0, a1, a2)
}

/// Run a resonator whose center frequency follows a trajectory; the
/// coefficients are refreshed every `update` samples.
fn time_varying_resonator(
    x: &[f64],
    freq_at: impl Fn(usize) -> f64,
    bandwidth: f64,
    fs: f64,
    update: usize,
) -> Vec<f64> {
    let mut y = vec![0.0; x.len()];
    let (mut y1, mut y2) = (0.0, 0.0);
    let (mut b0, mut a1, mut a2) = (0.0, 0.0, 0.0);
    for (t, &xt) in x.iter().enumerate() {
        if t % update == 0 {
            (b0, a1, a2) = resonator_coeffs(freq_at(t), bandwidth, fs);
        }
        let v = b0 * xt - a1 * y1 - a2 * y2;
        y2 = y1;
        y1 = v;
        y[t] = v;
    }
    y
}

const COEFF_UPDATE: usize = 80;

/// Glottal-pulse excitation: an impulse train with period jitter and
/// amplitude shimmer, leaky-integrated into rounded pulses, plus aspiration.
fn voiced_excitation(len: usize, f0: f64, fs: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut exc = vec![0.0; len];
    let mut t = 0usize;
    while t < len {
        let jitter: f64 = rng.sample(StandardNormal);
        let period = fs / (f0 * (1.0 + 0.025 * jitter));
        let shimmer: f64 = rng.sample(StandardNormal);
        exc[t] = 1.0 + 0.15 * shimmer;
        t += period.max(8.0) as usize;
    }
    for i in 1..len {
        exc[i] += 0.96 * exc[i - 1];
    }
    let mean = exc.iter().sum::<f64>() / len as f64;
    for e in exc.iter_mut() {
        *e -= mean;
    }
    for e in exc.iter_mut() {
        let noise: f64 = rng.sample(StandardNormal);
        *e += 0.12 * noise;
    }
    exc
}

/// Synthesize `duration` seconds of speech-like audio at `fs` Hz,
/// deterministically from the seed, normalized to a peak of 0.5.
pub fn synthesize_speech(fs: f64, duration: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (duration * fs) as usize;
    let mut out = vec![0.0; n];
    let mut pos = 0usize;
    let mut f0_base = rng.gen_range(95.0..200.0);
    let mut phrase_t = 0.0f64;

    while pos < n {
        let r: f64 = rng.gen();
        let kind = if r < 0.42 {
            Segment::Vowel
        } else if r < 0.58 {
            Segment::Nasal
        } else if r < 0.76 {
            Segment::Fricative
        } else if r < 0.88 {
            Segment::Plosive
        } else {
            Segment::Pause
        };
        let seg_secs = match kind {
            Segment::Vowel => rng.gen_range(0.06..0.22),
            Segment::Nasal => rng.gen_range(0.04..0.12),
            Segment::Fricative => rng.gen_range(0.05..0.15),
            Segment::Plosive => rng.gen_range(0.04..0.09),
            Segment::Pause => rng.gen_range(0.05..0.35),
        };
        let seg_len = ((seg_secs * fs) as usize).min(n - pos);
        if seg_len == 0 {
            break;
        }
        let mut seg = vec![0.0; seg_len];
        match kind {
            Segment::Vowel | Segment::Nasal => {
                let f0 = f0_base
                    * (1.0 - 0.12 * phrase_t)
                    * (1.0 + rng.gen_range(-0.08..0.08));
                let exc = voiced_excitation(seg_len, f0, fs, &mut rng);
                if kind == Segment::Vowel {
                    // formants glide between two random vowel targets
                    let from = VOWELS[rng.gen_range(0..VOWELS.len())];
                    let to = VOWELS[rng.gen_range(0..VOWELS.len())];
                    for (i, (fa, fb)) in from.iter().zip(&to).enumerate() {
                        let (fa, fb) = (*fa, *fb);
                        let bw = 60.0 + 40.0 * i as f64;
                        let len = seg_len as f64;
                        let res = time_varying_resonator(
                            &exc,
                            |t| fa + (fb - fa) * t as f64 / len,
                            bw,
                            fs,
                            COEFF_UPDATE,
                        );
                        for (s, v) in seg.iter_mut().zip(&res) {
                            *s += v / (i + 1) as f64;
                        }
                    }
                } else {
                    // nasal: low first formant plus a weak mid resonance
                    let low = rng.gen_range(250.0..450.0);
                    let mid = rng.gen_range(1000.0..1400.0);
                    let res1 =
                        time_varying_resonator(&exc, |_| low, 100.0, fs, COEFF_UPDATE);
                    let res2 =
                        time_varying_resonator(&exc, |_| mid, 150.0, fs, COEFF_UPDATE);
                    for (s, (a, b)) in seg.iter_mut().zip(res1.iter().zip(&res2)) {
                        *s = 0.5 * (a + 0.3 * b);
                    }
                }
            }
            Segment::Fricative => {
                let noise: Vec<f64> =
                    (0..seg_len).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                let freq = rng.gen_range(1800.0..6000.0);
                let bw = rng.gen_range(600.0..1500.0);
                let res = time_varying_resonator(&noise, |_| freq, bw, fs, COEFF_UPDATE);
                for (s, v) in seg.iter_mut().zip(&res) {
                    *s = 0.35 * v;
                }
                if rng.gen::<f64>() < 0.4 {
                    // voiced fricative: superimpose a weak glottal buzz
                    let f0 = f0_base * (1.0 - 0.12 * phrase_t);
                    let mut buzz = vec![0.0; seg_len];
                    let mut t = 0usize;
                    while t < seg_len {
                        buzz[t] = 1.0;
                        t += (fs / f0).max(8.0) as usize;
                    }
                    for i in 1..seg_len {
                        buzz[i] += 0.95 * buzz[i - 1];
                    }
                    let mean = buzz.iter().sum::<f64>() / seg_len as f64;
                    for (s, b) in seg.iter_mut().zip(&buzz) {
                        *s += 0.06 * (b - mean);
                    }
                }
            }
            Segment::Plosive => {
                let closure = (0.6 * seg_len as f64) as usize;
                let burst_len = seg_len - closure;
                if burst_len > 0 {
                    let burst: Vec<f64> = (0..burst_len)
                        .map(|i| {
                            let g: f64 = rng.sample(StandardNormal);
                            g * (-(i as f64) / (0.012 * fs)).exp()
                        })
                        .collect();
                    let freq = rng.gen_range(800.0..4000.0);
                    let res =
                        time_varying_resonator(&burst, |_| freq, 2000.0, fs, COEFF_UPDATE);
                    for (s, v) in seg[closure..].iter_mut().zip(&res) {
                        *s = 0.8 * v;
                    }
                }
            }
            Segment::Pause => {}
        }

        // attack/decay ramps and the slow phrase-level loudness contour
        let ramp = ((0.008 * fs) as usize).min((seg_len / 4).max(1));
        let decay_to = if kind == Segment::Vowel { 0.6 } else { 0.0 };
        if ramp > 1 {
            for i in 0..ramp {
                seg[i] *= i as f64 / (ramp - 1) as f64;
            }
            for i in 0..ramp {
                let g = 1.0 + (decay_to - 1.0) * i as f64 / (ramp - 1) as f64;
                seg[seg_len - ramp + i] *= g;
            }
        }
        let phase = 2.0 * std::f64::consts::PI * phrase_t / 3.1 + rng.gen_range(-0.4..0.4);
        let phrase_amp = 0.55 + 0.45 * phase.cos().powi(2);
        let gain = phrase_amp * rng.gen_range(0.6..1.0);
        for (o, s) in out[pos..pos + seg_len].iter_mut().zip(&seg) {
            *o = s * gain;
        }

        pos += seg_len;
        phrase_t += seg_len as f64 / fs;
        if phrase_t > 2.8 {
            phrase_t = 0.0;
            f0_base = rng.gen_range(95.0..200.0);
        }
    }

    normalize_peak(&mut out);
    // gentle low-pass tilt approximating the natural speech spectrum
    let mut prev = 0.0;
    for o in out.iter_mut() {
        *o += 0.68 * prev;
        prev = *o;
    }
    normalize_peak(&mut out);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Segment {
    Vowel,
    Nasal,
    Fricative,
    Plosive,
    Pause,
}

fn normalize_peak(x: &mut [f64]) {
    let peak = x.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let scale = 0.5 / (peak + 1e-12);
    for v in x.iter_mut() {
        *v *= scale;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stft::FftPair;
    use num_complex::Complex64;

    #[test]
    fn deterministic_per_seed() {
        let a = synthesize_speech(16000.0, 2.0, 7);
        let b = synthesize_speech(16000.0, 2.0, 7);
        assert_eq!(a, b);
        let c = synthesize_speech(16000.0, 2.0, 8);
        assert_ne!(a, c);
    }

    #[test]
    fn length_and_peak() {
        let x = synthesize_speech(16000.0, 3.5, 1);
        assert_eq!(x.len(), 56000);
        let peak = x.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        assert!((peak - 0.5).abs() < 1e-9, "peak {peak}");
        assert!(x.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn has_speech_like_activity_pattern() {
        // some frames loud, some silent: pauses and plosive closures exist
        let x = synthesize_speech(16000.0, 10.0, 7);
        let frame = 320;
        let energies: Vec<f64> = x
            .chunks(frame)
            .map(|c| c.iter().map(|v| v * v).sum::<f64>())
            .collect();
        let max = energies.iter().fold(0.0f64, |m, &e| m.max(e));
        let quiet = energies.iter().filter(|&&e| e < 1e-4 * max).count();
        let loud = energies.iter().filter(|&&e| e > 1e-2 * max).count();
        assert!(quiet > energies.len() / 20, "quiet frames {quiet}");
        assert!(loud > energies.len() / 5, "loud frames {loud}");
    }

    #[test]
    fn spectrum_tilts_downward() {
        // long-term spectrum: the 0-1 kHz band carries far more energy
        // than the 4-8 kHz band
        let x = synthesize_speech(16000.0, 5.0, 3);
        let size = 8192;
        let fft = FftPair::new(size);
        let mut low = 0.0;
        let mut high = 0.0;
        for chunk in x.chunks_exact(size) {
            let mut buf: Vec<Complex64> =
                chunk.iter().map(|&v| Complex64::new(v, 0.0)).collect();
            fft.forward.process(&mut buf);
            let bin_hz = 16000.0 / size as f64;
            for (k, c) in buf[..size / 2].iter().enumerate() {
                let f = k as f64 * bin_hz;
                if f < 1000.0 {
                    low += c.norm_sqr();
                } else if f >= 4000.0 {
                    high += c.norm_sqr();
                }
            }
        }
        assert!(low > 10.0 * high, "low {low:.2e} vs high {high:.2e}");
    }
}
