//! Shoebox room simulation: image-source impulse responses, geometric
//! TDOAs and reverberant scene rendering with a direct-path reference.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::delay::design_fractional_fir;
use crate::error::{Error, Result};
use crate::stft::FftPair;

/// Speed of sound in m/s used when a scenario does not override it.
pub const SOUND_SPEED: f64 = 343.0;

/// Half length of the windowed-sinc interpolator that places image arrivals
/// at fractional sample positions (same design as the TDOA compensation FIR).
const IMAGE_FIR_HALF_LEN: usize = 32;

/// Impulse responses run past the nominal decay so the tail is not clipped
/// exactly at the -60 dB point.
const RIR_LENGTH_FACTOR: f64 = 1.25;

/// A single static source recorded by a set of microphones in a shoebox room.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    /// Room dimensions in meters.
    pub room_dims: [f64; 3],
    /// Microphone positions in meters.
    pub mic_positions: Vec<[f64; 3]>,
    /// Source position in meters.
    pub source_position: [f64; 3],
    /// Reverberation time in seconds. A value of exactly `0.0` renders the
    /// free-field (anechoic) response: direct path only, no reflections.
    pub t60: f64,
    /// Sample rate in Hz.
    pub fs: f64,
    /// Speed of sound in m/s.
    pub sound_speed: f64,
}

impl Scenario {
    /// Check geometric and physical plausibility.
    pub fn validate(&self) -> Result<()> {
        if self.room_dims.iter().any(|&d| !(d > 0.0) || !d.is_finite()) {
            return Err(Error::config("room dimensions must be positive"));
        }
        if self.mic_positions.is_empty() {
            return Err(Error::config("scenario needs at least one microphone"));
        }
        if !(self.t60 >= 0.0) || !self.t60.is_finite() {
            return Err(Error::config("T60 must be non-negative"));
        }
        if !(self.fs > 0.0) || !self.fs.is_finite() {
            return Err(Error::config("sample rate must be positive"));
        }
        if !(self.sound_speed > 0.0) || !self.sound_speed.is_finite() {
            return Err(Error::config("sound speed must be positive"));
        }
        let inside = |p: &[f64; 3]| {
            p.iter()
                .zip(&self.room_dims)
                .all(|(&x, &d)| x > 0.0 && x < d && x.is_finite())
        };
        if !inside(&self.source_position) {
            return Err(Error::config("source position must lie strictly inside the room"));
        }
        for (i, mic) in self.mic_positions.iter().enumerate() {
            if !inside(mic) {
                return Err(Error::config(format!(
                    "microphone {i} must lie strictly inside the room"
                )));
            }
            if distance(mic, &self.source_position) == 0.0 {
                return Err(Error::config(format!(
                    "microphone {i} coincides with the source"
                )));
            }
        }
        if self.t60 > 0.0 {
            sabine_absorption(&self.room_dims, self.t60).map(|_| ())?;
        }
        Ok(())
    }

    /// Distance from the source to one microphone, in meters.
    pub fn source_distance(&self, mic_index: usize) -> Result<f64> {
        let mic = self.mic_positions.get(mic_index).ok_or_else(|| {
            Error::input(format!(
                "microphone index {mic_index} out of range ({} mics)",
                self.mic_positions.len()
            ))
        })?;
        Ok(distance(mic, &self.source_position))
    }

    /// Direct-path propagation delay to one microphone, in samples (real).
    pub fn direct_delay(&self, mic_index: usize) -> Result<f64> {
        Ok(self.source_distance(mic_index)? / self.sound_speed * self.fs)
    }
}

fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Uniform wall absorption that yields the requested T60 under Sabine's
/// formula `T60 = 0.161 V / (α S)`.
pub fn sabine_absorption(dims: &[f64; 3], t60: f64) -> Result<f64> {
    let v = dims[0] * dims[1] * dims[2];
    let s = 2.0 * (dims[0] * dims[1] + dims[0] * dims[2] + dims[1] * dims[2]);
    let alpha = 0.161 * v / (s * t60);
    if alpha > 1.0 {
        return Err(Error::config(format!(
            "T60 of {t60} s is unreachable in this room: required absorption {alpha:.2} exceeds 1"
        )));
    }
    Ok(alpha)
}

/// Impulse responses for every microphone of a scenario.
#[derive(Debug, Clone)]
pub struct RirSet {
    /// One impulse response per microphone.
    pub responses: Vec<Vec<f64>>,
    /// Direct-path delay per microphone in samples (real-valued).
    pub direct_delays: Vec<f64>,
}

/// Simulate the impulse response from the source to one microphone with the
/// image-source method: uniform Sabine absorption, `1/(4πd)` spherical
/// spreading, and a windowed-sinc interpolator for fractional image delays.
///
/// A T60 of `0.0` yields the anechoic response: the direct arrival alone,
/// in a buffer long enough to hold every microphone's direct path so that
/// all channels of one scenario stay the same length.
pub fn simulate_rir(scenario: &Scenario, mic_index: usize) -> Result<Vec<f64>> {
    scenario.validate()?;
    let mic = *scenario.mic_positions.get(mic_index).ok_or_else(|| {
        Error::input(format!(
            "microphone index {mic_index} out of range ({} mics)",
            scenario.mic_positions.len()
        ))
    })?;
    let dims = scenario.room_dims;
    let src = scenario.source_position;
    let c = scenario.sound_speed;
    let fs = scenario.fs;

    if scenario.t60 == 0.0 {
        let max_delay = (0..scenario.mic_positions.len())
            .map(|m| scenario.direct_delay(m))
            .collect::<Result<Vec<f64>>>()?
            .into_iter()
            .fold(0.0f64, f64::max);
        let mut h = vec![0.0; max_delay.ceil() as usize + 2 * IMAGE_FIR_HALF_LEN + 16];
        let d = distance(&mic, &src);
        splat_image(&mut h, d / c * fs, 1.0 / (4.0 * std::f64::consts::PI * d.max(0.1)))?;
        return Ok(h);
    }

    let alpha = sabine_absorption(&dims, scenario.t60)?;
    let beta = (1.0 - alpha).sqrt();

    let n_samp = (RIR_LENGTH_FACTOR * scenario.t60 * fs).ceil() as usize;
    let max_dist = n_samp as f64 / fs * c;
    // one lattice cell of margin beyond the farthest audible image
    let nx = (max_dist / (2.0 * dims[0])).ceil() as i64 + 1;
    let ny = (max_dist / (2.0 * dims[1])).ceil() as i64 + 1;
    let nz = (max_dist / (2.0 * dims[2])).ceil() as i64 + 1;

    let mut h = vec![0.0; n_samp + 2 * IMAGE_FIR_HALF_LEN + 16];
    for ix in -nx..=nx {
        for iy in -ny..=ny {
            for iz in -nz..=nz {
                for q in 0..2i64 {
                    for r in 0..2i64 {
                        for s in 0..2i64 {
                            let img = [
                                (1 - 2 * q) as f64 * src[0] + 2.0 * ix as f64 * dims[0],
                                (1 - 2 * r) as f64 * src[1] + 2.0 * iy as f64 * dims[1],
                                (1 - 2 * s) as f64 * src[2] + 2.0 * iz as f64 * dims[2],
                            ];
                            let d = distance(&img, &mic);
                            let delay = d / c * fs;
                            if delay >= n_samp as f64 {
                                continue;
                            }
                            let nrefl = (ix - q).abs()
                                + ix.abs()
                                + (iy - r).abs()
                                + iy.abs()
                                + (iz - s).abs()
                                + iz.abs();
                            let gain = beta.powi(nrefl as i32)
                                / (4.0 * std::f64::consts::PI * d.max(0.1));
                            splat_image(&mut h, delay, gain)?;
                        }
                    }
                }
            }
        }
    }
    h.truncate(n_samp);
    Ok(h)
}

/// Add one image arrival at a fractional delay into the response buffer.
fn splat_image(h: &mut [f64], delay: f64, gain: f64) -> Result<()> {
    let samp = delay.floor() as i64;
    let frac = delay - samp as f64;
    let fir = design_fractional_fir(0, frac, IMAGE_FIR_HALF_LEN)?;
    let lo = samp - IMAGE_FIR_HALF_LEN as i64;
    for (i, &tap) in fir.taps.iter().enumerate() {
        let t = lo + i as i64;
        if t >= 0 && (t as usize) < h.len() {
            h[t as usize] += gain * tap;
        }
    }
    Ok(())
}

/// Simulate impulse responses for all microphones in parallel.
pub fn simulate_rir_set(scenario: &Scenario) -> Result<RirSet> {
    scenario.validate()?;
    let responses: Result<Vec<Vec<f64>>> = (0..scenario.mic_positions.len())
        .into_par_iter()
        .map(|m| simulate_rir(scenario, m))
        .collect();
    let direct_delays = (0..scenario.mic_positions.len())
        .map(|m| scenario.direct_delay(m))
        .collect::<Result<Vec<f64>>>()?;
    Ok(RirSet {
        responses: responses?,
        direct_delays,
    })
}

/// Geometric TDOAs relative to a reference microphone, in samples.
///
/// Sign contract: `tdoa_m = (‖source − mic_ref‖ − ‖source − mic_m‖) / c × fs`,
/// so a microphone closer to the source than the reference (hearing it
/// earlier) gets a positive TDOA, and delaying that microphone's signal by
/// its TDOA aligns it with the reference timeline. Microphones farther than
/// the reference get negative TDOAs.
pub fn oracle_tdoas(scenario: &Scenario, ref_index: usize) -> Result<Vec<f64>> {
    scenario.validate()?;
    let d_ref = scenario.source_distance(ref_index)?;
    (0..scenario.mic_positions.len())
        .map(|m| {
            let d_m = scenario.source_distance(m)?;
            Ok((d_ref - d_m) / scenario.sound_speed * scenario.fs)
        })
        .collect()
}

/// A rendered reverberant scene.
#[derive(Debug, Clone)]
pub struct RenderedScene {
    /// Reverberant signal per microphone (speech convolved with its RIR).
    pub mic_signals: Vec<Vec<f64>>,
    /// Direct-path component at the reference microphone, used as the
    /// evaluation reference.
    pub reference: Vec<f64>,
    /// The impulse responses used for rendering.
    pub rirs: RirSet,
    /// Index of the reference microphone.
    pub ref_index: usize,
}

/// Convolve speech with every microphone's impulse response and build the
/// evaluation reference: the speech convolved with the reference mic's RIR
/// truncated to a 1 ms window around the direct-path peak.
pub fn render_scene(
    scenario: &Scenario,
    speech: &[f64],
    speech_fs: f64,
    ref_index: usize,
) -> Result<RenderedScene> {
    scenario.validate()?;
    if speech.is_empty() {
        return Err(Error::input("speech signal is empty"));
    }
    if speech_fs != scenario.fs {
        return Err(Error::input(format!(
            "speech sample rate {speech_fs} Hz does not match scenario rate {} Hz",
            scenario.fs
        )));
    }
    if ref_index >= scenario.mic_positions.len() {
        return Err(Error::input(format!(
            "reference microphone {ref_index} out of range ({} mics)",
            scenario.mic_positions.len()
        )));
    }
    let rirs = simulate_rir_set(scenario)?;
    let mic_signals: Vec<Vec<f64>> = rirs
        .responses
        .par_iter()
        .map(|h| fft_convolve(speech, h))
        .collect();

    // direct-path-only response: ±0.5 ms around the geometric arrival
    let h_ref = &rirs.responses[ref_index];
    let peak = rirs.direct_delays[ref_index].round() as i64;
    let half_w = (0.0005 * scenario.fs).round() as i64;
    let mut h_direct = vec![0.0; h_ref.len()];
    for t in (peak - half_w).max(0)..=(peak + half_w).min(h_ref.len() as i64 - 1) {
        h_direct[t as usize] = h_ref[t as usize];
    }
    let reference = fft_convolve(speech, &h_direct);

    Ok(RenderedScene {
        mic_signals,
        reference,
        rirs,
        ref_index,
    })
}

/// Linear convolution via the FFT; output length is `a.len() + b.len() - 1`.
pub fn fft_convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    let out_len = a.len() + b.len() - 1;
    let size = out_len.next_power_of_two();
    let fft = FftPair::new(size);
    let mut fa: Vec<Complex64> = a.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    fa.resize(size, Complex64::new(0.0, 0.0));
    let mut fb: Vec<Complex64> = b.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    fb.resize(size, Complex64::new(0.0, 0.0));
    fft.forward.process(&mut fa);
    fft.forward.process(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= y;
    }
    fft.inverse.process(&mut fa);
    let scale = 1.0 / size as f64;
    fa[..out_len].iter().map(|c| c.re * scale).collect()
}

/// Time at which the Schroeder backward-integrated energy decay curve first
/// crosses -60 dB, in seconds; `None` if the response never decays that far.
pub fn schroeder_decay_time(rir: &[f64], fs: f64) -> Option<f64> {
    if rir.is_empty() {
        return None;
    }
    let mut tail_energy: Vec<f64> = Vec::with_capacity(rir.len());
    let mut acc = 0.0;
    for &x in rir.iter().rev() {
        acc += x * x;
        tail_energy.push(acc);
    }
    tail_energy.reverse();
    let total = tail_energy[0];
    if total <= 0.0 {
        return None;
    }
    for (i, &e) in tail_energy.iter().enumerate() {
        if 10.0 * (e / total).log10() < -60.0 {
            return Some(i as f64 / fs);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn desk_room(src: [f64; 3], t60: f64) -> Scenario {
        Scenario {
            room_dims: [8.0, 8.0, 5.0],
            mic_positions: vec![
                [1.0, 1.0, 1.5],
                [7.0, 1.0, 1.5],
                [1.0, 7.0, 1.5],
                [7.0, 7.0, 1.5],
            ],
            source_position: src,
            t60,
            fs: 16000.0,
            sound_speed: SOUND_SPEED,
        }
    }

    #[test]
    fn validate_rejects_bad_geometry() {
        let mut s = desk_room([3.0, 3.0, 1.6], 0.5);
        assert!(s.validate().is_ok());

        s.source_position = [9.0, 3.0, 1.6]; // outside
        assert!(s.validate().is_err());

        s.source_position = [8.0, 3.0, 1.6]; // on the wall
        assert!(s.validate().is_err());

        s.source_position = [1.0, 1.0, 1.5]; // coincides with mic 0
        assert!(s.validate().is_err());

        s = desk_room([3.0, 3.0, 1.6], -0.2);
        assert!(s.validate().is_err());

        s.t60 = 0.0; // anechoic is allowed
        assert!(s.validate().is_ok());
    }

    #[test]
    fn sabine_rejects_unreachable_t60() {
        // tiny room with a huge T60 needs absorption > 1
        assert!(sabine_absorption(&[8.0, 8.0, 5.0], 0.5).is_ok());
        assert!(sabine_absorption(&[2.0, 2.0, 2.0], 0.01).is_err());
    }

    #[test]
    fn direct_peak_lands_at_geometric_delay() {
        let s = desk_room([3.0, 3.0, 1.6], 0.3);
        let h = simulate_rir(&s, 0).unwrap();
        let expect = s.direct_delay(0).unwrap().round() as usize;
        let peak = h
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .unwrap()
            .0;
        assert!(
            (peak as i64 - expect as i64).abs() <= 1,
            "direct peak at {peak}, expected {expect} ± 1"
        );
    }

    #[test]
    fn short_t60_decays_fast() {
        // near the Sabine bound (T60 = 100 ms in a 4x4x3 room) everything
        // past 100 ms sits far below the direct peak
        let mut s = desk_room([3.0, 3.0, 1.6], 0.1);
        s.room_dims = [4.0, 4.0, 3.0];
        s.mic_positions = vec![[1.0, 1.0, 1.5]];
        s.source_position = [2.5, 2.5, 1.6];
        let h = simulate_rir(&s, 0).unwrap();
        let peak = h.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
        let cut = (0.1 * s.fs) as usize;
        let late = h[cut.min(h.len())..]
            .iter()
            .fold(0.0f64, |m, &x| m.max(x.abs()));
        assert!(
            late < peak * 1e-3,
            "late max {late:.2e} vs peak {peak:.2e}"
        );
    }

    #[test]
    fn schroeder_decay_matches_t60() {
        for &t60 in &[0.3, 0.5] {
            let s = desk_room([3.1, 3.1, 1.6], t60);
            let h = simulate_rir(&s, 0).unwrap();
            let measured = schroeder_decay_time(&h, s.fs).expect("decay reaches -60 dB");
            assert!(
                measured > 0.8 * t60 && measured < 1.2 * t60,
                "T60 {t60}: Schroeder time {measured:.3}"
            );
        }
    }

    #[test]
    fn rir_length_covers_t60() {
        let s = desk_room([3.0, 3.0, 1.6], 0.5);
        let h = simulate_rir(&s, 0).unwrap();
        assert!(h.len() as f64 >= s.t60 * s.fs);
    }

    #[test]
    fn rirs_are_deterministic() {
        let s = desk_room([3.3, 2.9, 1.6], 0.4);
        let a = simulate_rir(&s, 2).unwrap();
        let b = simulate_rir(&s, 2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn oracle_tdoa_sign_and_magnitude() {
        // equidistant mics: zero TDOA
        let mut s = desk_room([4.0, 4.0, 1.5], 0.5);
        let t = oracle_tdoas(&s, 0).unwrap();
        for &v in &t {
            assert_relative_eq!(v, 0.0, epsilon = 1e-9);
        }

        // mic 1 exactly 3.43 m farther from the source than the reference:
        // it hears the source later, so its TDOA is -3.43/343*16000 = -160
        s.mic_positions = vec![[1.0, 4.0, 1.5], [6.43, 4.0, 1.5]];
        s.source_position = [2.0, 4.0, 1.5];
        let t = oracle_tdoas(&s, 0).unwrap();
        assert_relative_eq!(t[0], 0.0);
        assert_relative_eq!(t[1], -160.0, epsilon = 1e-9);

        // and the mic closer than the reference gets a positive TDOA
        let t = oracle_tdoas(&s, 1).unwrap();
        assert_relative_eq!(t[0], 160.0, epsilon = 1e-9);
    }

    #[test]
    fn render_scene_anechoic_limit_is_scaled_delay() {
        // T60 = 0: the mic signal is a scaled, fractionally delayed copy
        let mut s = desk_room([2.5, 2.5, 1.6], 0.0);
        s.room_dims = [4.0, 4.0, 3.0];
        s.mic_positions = vec![[1.0, 1.0, 1.5], [3.0, 1.0, 1.5]];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let speech: Vec<f64> = (0..16000).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let scene = render_scene(&s, &speech, 16000.0, 0).unwrap();

        let d = s.direct_delay(0).unwrap();
        let (samp, frac) = (d.floor() as i64, d - d.floor());
        let ideal = crate::delay::fractional_delay(&speech, samp, frac, 64).unwrap();
        let gain = 1.0 / (4.0 * std::f64::consts::PI * s.source_distance(0).unwrap());
        // compare a mid-signal span against the ideally delayed copy
        let mut err = 0.0;
        let mut refe = 0.0;
        for t in 2000..12000 {
            err += (scene.mic_signals[0][t] - gain * ideal[t]).powi(2);
            refe += (gain * ideal[t]).powi(2);
        }
        assert!(
            (err / refe).sqrt() < 0.02,
            "anechoic render deviates: rel err {:.4}",
            (err / refe).sqrt()
        );
    }

    #[test]
    fn render_scene_zero_speech_is_zero() {
        let s = desk_room([3.0, 3.0, 1.6], 0.2);
        let speech = vec![0.0; 8000];
        let scene = render_scene(&s, &speech, 16000.0, 0).unwrap();
        assert!(scene.mic_signals.iter().all(|c| c.iter().all(|&x| x == 0.0)));
        assert!(scene.reference.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn render_scene_rejects_bad_input() {
        let s = desk_room([3.0, 3.0, 1.6], 0.2);
        assert!(render_scene(&s, &[], 16000.0, 0).is_err());
        assert!(render_scene(&s, &[0.1; 100], 8000.0, 0).is_err());
        assert!(render_scene(&s, &[0.1; 100], 16000.0, 9).is_err());
    }

    #[test]
    fn reference_aligns_with_mic_signal() {
        // the direct-path reference correlates maximally with the full mic
        // signal at (near) zero lag
        let s = desk_room([3.1, 3.1, 1.6], 0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let speech: Vec<f64> = (0..32000).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let scene = render_scene(&s, &speech, 16000.0, 0).unwrap();
        let m = &scene.mic_signals[0];
        let r = &scene.reference;
        let mut best = (0i64, f64::MIN);
        for lag in -20i64..=20 {
            let mut acc = 0.0;
            for t in 4000..28000i64 {
                let u = (t + lag) as usize;
                if u < m.len() {
                    acc += r[t as usize] * m[u];
                }
            }
            if acc > best.1 {
                best = (lag, acc);
            }
        }
        assert!(
            best.0.abs() <= 1,
            "max correlation at lag {} rather than 0",
            best.0
        );
    }

    #[test]
    fn fft_convolve_matches_direct() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a: Vec<f64> = (0..123).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..45).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let fast = fft_convolve(&a, &b);
        assert_eq!(fast.len(), a.len() + b.len() - 1);
        for t in 0..fast.len() {
            let mut acc = 0.0;
            for (j, &bj) in b.iter().enumerate() {
                if t >= j && t - j < a.len() {
                    acc += a[t - j] * bj;
                }
            }
            assert_relative_eq!(fast[t], acc, epsilon = 1e-10);
        }
    }

    #[test]
    fn anechoic_gcc_recovers_oracle_tdoas() {
        // geometric consistency: cross-correlation of anechoic renders
        // peaks at the oracle TDOA for every mic
        let mut s = desk_room([2.2, 3.4, 1.6], 0.0);
        s.room_dims = [6.0, 6.0, 4.0];
        s.mic_positions = vec![[1.0, 1.0, 1.5], [5.0, 1.0, 1.5], [1.0, 5.0, 1.5]];
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let speech: Vec<f64> = (0..48000).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let scene = render_scene(&s, &speech, 16000.0, 0).unwrap();
        let tdoas = oracle_tdoas(&s, 0).unwrap();
        for m in 1..3 {
            // delay mic m by lag and correlate against the reference mic
            let mut best = (0i64, f64::MIN);
            let base = tdoas[m].round() as i64;
            for lag in (base - 6)..=(base + 6) {
                let mut acc = 0.0;
                for t in 4000..44000i64 {
                    let u = t - lag;
                    if u >= 0 && (u as usize) < scene.mic_signals[m].len() {
                        acc += scene.mic_signals[0][t as usize]
                            * scene.mic_signals[m][u as usize];
                    }
                }
                if acc > best.1 {
                    best = (lag, acc);
                }
            }
            assert!(
                (best.0 - tdoas[m].round() as i64).abs() <= 1,
                "mic {m}: correlation peak {} vs oracle {:.1}",
                best.0,
                tdoas[m]
            );
        }
    }
}
