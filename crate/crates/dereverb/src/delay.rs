//! TDOA decomposition and STFT-domain delay compensation.
//!
//! A time difference of arrival in samples splits into a frame part, an
//! integer sample part, and a fractional part. The frame part is compensated
//! by shifting STFT frames; the sub-frame remainder is compensated inside the
//! STFT domain by crossband filters (full or band-to-band approximation)
//! derived from a windowed-sinc fractional-delay FIR, or ignored entirely
//! when only integer-frame compensation is requested.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::stft::{analyze, make_sqrt_hann, synthesize, AnalysisConfig, StftTensor};

/// Split of a TDOA (in samples) into frame / integer-sample / fractional parts.
///
/// Satisfies `frame_delay * frame_shift + sample_delay + frac_delay == tdoa`
/// exactly in floating point, with `0 <= frac_delay < 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TdoaDecomposition {
    pub tdoa: f64,
    /// Whole STFT frames, rounded to nearest.
    pub frame_delay: i64,
    /// Integer samples left after removing whole frames.
    pub sample_delay: i64,
    /// Fractional sample remainder in `[0, 1)`.
    pub frac_delay: f64,
}

impl TdoaDecomposition {
    /// Sub-frame delay `sample_delay + frac_delay`, the part that crossband
    /// or band-to-band filters must realize.
    pub fn subframe_delay(&self) -> f64 {
        self.sample_delay as f64 + self.frac_delay
    }

    /// True when the TDOA is an exact multiple of the frame shift, so a pure
    /// frame shift compensates it with no filtering at all.
    pub fn is_frame_aligned(&self) -> bool {
        self.sample_delay == 0 && self.frac_delay == 0.0
    }
}

/// Decompose a TDOA into frame, integer-sample, and fractional parts.
///
/// The frame part rounds `tdoa / frame_shift` to the nearest integer, so the
/// sub-frame remainder stays within half a frame shift of zero.
pub fn decompose_tdoa(tdoa: f64, frame_shift: usize) -> Result<TdoaDecomposition> {
    if !tdoa.is_finite() {
        return Err(Error::input(format!("non-finite tdoa: {tdoa}")));
    }
    if frame_shift == 0 {
        return Err(Error::config("frame shift must be positive"));
    }
    let shift = frame_shift as f64;
    let frame_delay = (tdoa / shift + 0.5).floor();
    let residual = tdoa - frame_delay * shift;
    let sample_delay = residual.floor();
    let frac_delay = residual - sample_delay;
    Ok(TdoaDecomposition {
        tdoa,
        frame_delay: frame_delay as i64,
        sample_delay: sample_delay as i64,
        frac_delay,
    })
}

/// Windowed-sinc FIR realizing a delay of `sample_offset + frac` samples.
#[derive(Debug, Clone)]
pub struct FractionalDelayFir {
    /// Tap `i` multiplies the input delayed by `sample_offset + i - center_index`.
    pub taps: Vec<f64>,
    /// Index of the sinc center within `taps` (equals the design half length).
    pub center_index: usize,
    /// Integer shift applied to the whole tap vector.
    pub sample_offset: i64,
    /// Total delay in samples, `sample_offset + frac`.
    pub total_delay: f64,
}

/// Design a Hann-windowed sinc interpolator for a `sample_delay + frac_delay`
/// sample delay; `2 * half_len + 1` taps. At `frac_delay == 0` the taps reduce
/// to a unit impulse.
pub fn design_fractional_fir(
    sample_delay: i64,
    frac_delay: f64,
    half_len: usize,
) -> Result<FractionalDelayFir> {
    if !(0.0..1.0).contains(&frac_delay) {
        return Err(Error::input(format!(
            "fractional delay must lie in [0, 1), got {frac_delay}"
        )));
    }
    if half_len == 0 {
        return Err(Error::config("fir half length must be at least 1"));
    }
    let span = (half_len + 1) as f64;
    let taps = if frac_delay == 0.0 {
        // sinc vanishes at every nonzero integer: exact unit impulse
        let mut t = vec![0.0; 2 * half_len + 1];
        t[half_len] = 1.0;
        t
    } else {
        (0..=2 * half_len)
            .map(|i| {
                let arg = (i as f64 - half_len as f64) - frac_delay;
                let pa = std::f64::consts::PI * arg;
                // Hann window centered on the sinc peak, zero at arg = ±(half_len+1)
                pa.sin() / pa * (0.5 + 0.5 * (std::f64::consts::PI * arg / span).cos())
            })
            .collect()
    };
    Ok(FractionalDelayFir {
        taps,
        center_index: half_len,
        sample_offset: sample_delay,
        total_delay: sample_delay as f64 + frac_delay,
    })
}

/// Delay a signal by `sample_delay + frac_delay` samples in the time domain.
/// Output has the input's length; content shifted out of range is dropped.
pub fn fractional_delay(
    signal: &[f64],
    sample_delay: i64,
    frac_delay: f64,
    half_len: usize,
) -> Result<Vec<f64>> {
    let fir = design_fractional_fir(sample_delay, frac_delay, half_len)?;
    let mut out = vec![0.0; signal.len()];
    for (i, &h) in fir.taps.iter().enumerate() {
        if h == 0.0 {
            continue;
        }
        // tap i reads the input delayed by d
        let d = fir.sample_offset + i as i64 - fir.center_index as i64;
        let lo = d.max(0);
        let hi = (signal.len() as i64 + d).min(signal.len() as i64);
        for t in lo..hi {
            out[t as usize] += h * signal[(t - d) as usize];
        }
    }
    Ok(out)
}

/// Truncation widths for the crossband representation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CrossbandParams {
    /// Crossband half-width B: offsets `-B..=B` around each subband.
    pub halfwidth: usize,
    /// Acausal frame taps L_a.
    pub acausal: usize,
    /// Causal frame taps L_c.
    pub causal: usize,
    /// Half length of the underlying fractional-delay FIR.
    pub fir_half_len: usize,
}

impl Default for CrossbandParams {
    fn default() -> Self {
        Self {
            halfwidth: 4,
            acausal: 2,
            causal: 2,
            fir_half_len: 32,
        }
    }
}

/// STFT-domain filters realizing a time-domain FIR: one complex filter per
/// (subband, crossband offset, frame lag).
#[derive(Debug, Clone)]
pub struct CrossbandFilterSet {
    values: Vec<Complex64>,
    num_bins: usize,
    frame_size: usize,
    pub halfwidth: usize,
    pub acausal: usize,
    pub causal: usize,
}

impl CrossbandFilterSet {
    /// Filter value for subband `k`, crossband offset `b in -B..=B`,
    /// frame lag `l in -L_a..=L_c`.
    pub fn get(&self, k: usize, b: i64, l: i64) -> Complex64 {
        debug_assert!(k < self.num_bins);
        debug_assert!(b.unsigned_abs() as usize <= self.halfwidth);
        debug_assert!(-l <= self.acausal as i64 && l <= self.causal as i64);
        let nb = 2 * self.halfwidth + 1;
        let nl = self.acausal + self.causal + 1;
        let bi = (b + self.halfwidth as i64) as usize;
        let li = (l + self.acausal as i64) as usize;
        self.values[(k * nb + bi) * nl + li]
    }

    pub fn num_bins(&self) -> usize {
        self.num_bins
    }

    /// Energy of all filters at one crossband offset, useful for inspecting
    /// how fast the representation decays away from the band diagonal.
    pub fn offset_energy(&self, b: i64) -> f64 {
        let mut e = 0.0;
        for k in 0..self.num_bins {
            for l in -(self.acausal as i64)..=(self.causal as i64) {
                e += self.get(k, b, l).norm_sqr();
            }
        }
        e
    }
}

/// Window cross-correlation `Γ_Δ[t] = Σ_v a[v] s[v+t] e^{-j2πΔv/K}` for
/// `t in -(K-1)..=(K-1)`, indexed as `t + K - 1`.
fn window_correlation(analysis: &[f64], synthesis: &[f64], delta: i64) -> Vec<Complex64> {
    let k = analysis.len();
    let phase = -2.0 * std::f64::consts::PI * delta as f64 / k as f64;
    let q: Vec<Complex64> = analysis
        .iter()
        .enumerate()
        .map(|(v, &a)| Complex64::from_polar(a, phase * v as f64))
        .collect();
    let mut out = vec![Complex64::new(0.0, 0.0); 2 * k - 1];
    for (i, slot) in out.iter_mut().enumerate() {
        let t = i as i64 - (k as i64 - 1);
        let v0 = (-t).max(0) as usize;
        let v1 = ((k as i64 - t).min(k as i64)) as usize;
        let mut acc = Complex64::new(0.0, 0.0);
        for v in v0..v1 {
            acc += q[v] * synthesis[(v as i64 + t) as usize];
        }
        *slot = acc;
    }
    out
}

/// Project a time-domain FIR onto STFT-domain crossband filters.
///
/// The result includes the analysis-synthesis normalization, so applying the
/// full untruncated set and resynthesizing reproduces time-domain convolution
/// with the FIR exactly; truncating to small `B`, `L_a`, `L_c` trades accuracy
/// for cost.
pub fn compute_crossband_filters(
    fir: &FractionalDelayFir,
    analysis_window: &[f64],
    synthesis_window: &[f64],
    frame_size: usize,
    frame_shift: usize,
    halfwidth: usize,
    acausal: usize,
    causal: usize,
) -> Result<CrossbandFilterSet> {
    if halfwidth > frame_size / 2 {
        return Err(Error::config(format!(
            "crossband half-width {halfwidth} exceeds {} subbands",
            frame_size / 2
        )));
    }
    if analysis_window.len() != frame_size || synthesis_window.len() != frame_size {
        return Err(Error::config("window length must equal frame size"));
    }
    if frame_shift == 0 || frame_size % frame_shift != 0 {
        return Err(Error::config("frame shift must divide frame size"));
    }
    let k_size = frame_size as i64;
    let num_bins = frame_size / 2 + 1;
    let nb = 2 * halfwidth + 1;
    let nl = acausal + causal + 1;
    // overlap-add constant times FFT size: the 1/(CK) of the reconstruction
    let norm = 1.0 / (frame_size as f64 / (2.0 * frame_shift as f64) * frame_size as f64);
    let mut values = vec![Complex64::new(0.0, 0.0); num_bins * nb * nl];

    for b in -(halfwidth as i64)..=(halfwidth as i64) {
        // Γ for Δ = k - k' = -b, shared across subbands
        let gamma = window_correlation(analysis_window, synthesis_window, -b);
        for k in 0..num_bins {
            let kp = k as i64 + b; // true (unreduced) crossband frequency index
            for l in -(acausal as i64)..=(causal as i64) {
                let mut acc = Complex64::new(0.0, 0.0);
                for (i, &h) in fir.taps.iter().enumerate() {
                    if h == 0.0 {
                        continue;
                    }
                    let s = fir.sample_offset + i as i64 - fir.center_index as i64;
                    let t = l * frame_shift as i64 - s;
                    if t <= -k_size || t >= k_size {
                        continue;
                    }
                    let phase =
                        2.0 * std::f64::consts::PI * kp as f64 * t as f64 / frame_size as f64;
                    acc += h
                        * Complex64::from_polar(1.0, phase)
                        * gamma[(t + k_size - 1) as usize];
                }
                let bi = (b + halfwidth as i64) as usize;
                let li = (l + acausal as i64) as usize;
                values[(k * nb + bi) * nl + li] = acc * norm;
            }
        }
    }
    Ok(CrossbandFilterSet {
        values,
        num_bins,
        frame_size,
        halfwidth,
        acausal,
        causal,
    })
}

/// `dst[n] += coeff * src[n - shift]`, conjugating `src` when asked;
/// out-of-range source frames read as zero.
fn accumulate_shifted(
    dst: &mut [Complex64],
    src: &[Complex64],
    coeff: Complex64,
    shift: i64,
    conjugate: bool,
) {
    if coeff == Complex64::new(0.0, 0.0) {
        return;
    }
    let n = dst.len() as i64;
    let lo = shift.max(0);
    let hi = (n + shift).min(n);
    if conjugate {
        for t in lo..hi {
            dst[t as usize] += coeff * src[(t - shift) as usize].conj();
        }
    } else {
        for t in lo..hi {
            dst[t as usize] += coeff * src[(t - shift) as usize];
        }
    }
}

fn check_channel(tensor: &StftTensor, channel: usize) -> Result<()> {
    if channel >= tensor.num_channels() {
        return Err(Error::input(format!(
            "channel {channel} out of range ({} channels)",
            tensor.num_channels()
        )));
    }
    Ok(())
}

/// Delay one channel by `tau_int` frames plus the sub-frame delay encoded in
/// the crossband filter set: `y(k,n) = Σ_b Σ_l x(k+b, n-l-τ) u(k, k+b, l)`,
/// with bins outside the one-sided range read via conjugate symmetry.
pub fn apply_crossband(
    tensor: &StftTensor,
    channel: usize,
    filters: &CrossbandFilterSet,
    tau_int: i64,
) -> Result<StftTensor> {
    check_channel(tensor, channel)?;
    if filters.num_bins != tensor.num_bins() {
        return Err(Error::input(format!(
            "filter set has {} bins, tensor has {}",
            filters.num_bins,
            tensor.num_bins()
        )));
    }
    let k_size = filters.frame_size as i64;
    let half = filters.frame_size / 2;
    let mut out = StftTensor::zeros(1, tensor.num_frames(), tensor.signal_len, tensor.config);
    for k in 0..tensor.num_bins() {
        // split borrows: accumulate into a scratch row, then store
        let mut acc = vec![Complex64::new(0.0, 0.0); tensor.num_frames()];
        for b in -(filters.halfwidth as i64)..=(filters.halfwidth as i64) {
            // at B = K/2 the offsets ±B alias to the same bin; count it once
            if b == -(filters.halfwidth as i64) && 2 * filters.halfwidth == filters.frame_size {
                continue;
            }
            let kk = (k as i64 + b).rem_euclid(k_size) as usize;
            let (src_bin, conjugate) = if kk <= half {
                (kk, false)
            } else {
                (filters.frame_size - kk, true)
            };
            let src = tensor.row(channel, src_bin);
            for l in -(filters.acausal as i64)..=(filters.causal as i64) {
                accumulate_shifted(&mut acc, src, filters.get(k, b, l), l + tau_int, conjugate);
            }
        }
        out.row_mut(0, k).copy_from_slice(&acc);
    }
    Ok(out)
}

/// As [`apply_crossband`] but keeping only the band-diagonal (`b = 0`) part
/// of the filter set: each subband is filtered independently across frames.
pub fn apply_band2band(
    tensor: &StftTensor,
    channel: usize,
    filters: &CrossbandFilterSet,
    tau_int: i64,
) -> Result<StftTensor> {
    check_channel(tensor, channel)?;
    if filters.num_bins != tensor.num_bins() {
        return Err(Error::input(format!(
            "filter set has {} bins, tensor has {}",
            filters.num_bins,
            tensor.num_bins()
        )));
    }
    let mut out = StftTensor::zeros(1, tensor.num_frames(), tensor.signal_len, tensor.config);
    for k in 0..tensor.num_bins() {
        let mut acc = vec![Complex64::new(0.0, 0.0); tensor.num_frames()];
        let src = tensor.row(channel, k);
        for l in -(filters.acausal as i64)..=(filters.causal as i64) {
            accumulate_shifted(&mut acc, src, filters.get(k, 0, l), l + tau_int, false);
        }
        out.row_mut(0, k).copy_from_slice(&acc);
    }
    Ok(out)
}

/// Delay one channel by a whole number of frames; out-of-range frames are zero.
pub fn apply_integer_delay(
    tensor: &StftTensor,
    channel: usize,
    tau_int: i64,
) -> Result<StftTensor> {
    check_channel(tensor, channel)?;
    let mut out = StftTensor::zeros(1, tensor.num_frames(), tensor.signal_len, tensor.config);
    let one = Complex64::new(1.0, 0.0);
    for k in 0..tensor.num_bins() {
        let mut acc = vec![Complex64::new(0.0, 0.0); tensor.num_frames()];
        accumulate_shifted(&mut acc, tensor.row(channel, k), one, tau_int, false);
        out.row_mut(0, k).copy_from_slice(&acc);
    }
    Ok(out)
}

/// How the sub-frame part of a TDOA is compensated in the STFT domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompensationMode {
    /// Full crossband filtering.
    Crossband,
    /// Band-to-band approximation (diagonal subband filters only).
    BandToBand,
    /// No sub-frame compensation; frame shifts only.
    Integer,
}

/// Measure how accurately an STFT-domain compensation path reproduces a
/// time-domain fractional delay, in dB relative error (lower is better).
///
/// The reference path delays the signal by the sub-frame part of `tdoa` with
/// a high-order resampler; the test path applies the requested STFT-domain
/// compensation and resynthesizes. Both are compared away from the edges.
pub fn verify_compensation(
    signal: &[f64],
    tdoa: f64,
    mode: CompensationMode,
    config: &AnalysisConfig,
    params: &CrossbandParams,
) -> Result<f64> {
    let k = config.frame_size;
    if signal.len() < 6 * k {
        return Err(Error::input(format!(
            "signal too short to verify: need at least {} samples",
            6 * k
        )));
    }
    let dec = decompose_tdoa(tdoa, config.frame_shift)?;
    let reference = fractional_delay(signal, dec.sample_delay, dec.frac_delay, 512)?;

    let tensor = analyze(&[signal.to_vec()], config)?;
    let compensated = match mode {
        CompensationMode::Integer => apply_integer_delay(&tensor, 0, 0)?,
        _ => {
            let fir = design_fractional_fir(dec.sample_delay, dec.frac_delay, params.fir_half_len)?;
            let window = make_sqrt_hann(k)?;
            let filters = compute_crossband_filters(
                &fir,
                &window,
                &window,
                k,
                config.frame_shift,
                params.halfwidth,
                params.acausal,
                params.causal,
            )?;
            match mode {
                CompensationMode::Crossband => apply_crossband(&tensor, 0, &filters, 0)?,
                _ => apply_band2band(&tensor, 0, &filters, 0)?,
            }
        }
    };
    let resynth = synthesize(&compensated)?;

    // skip two frame lengths at each end: edge effects plus resampler spill
    let lo = 2 * k;
    let hi = signal.len() - 2 * k;
    let mut err = 0.0;
    let mut refno = 0.0;
    for t in lo..hi {
        let d = resynth[0][t] - reference[t];
        err += d * d;
        refno += reference[t] * reference[t];
    }
    if refno == 0.0 {
        return Err(Error::input("reference signal is zero over the comparison span"));
    }
    let rel = (err / refno).sqrt();
    Ok(20.0 * rel.max(1e-15).log10())
}

/// Per-microphone prediction-delay handling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DelayMode {
    /// Microphone-independent: every channel delayed by the base delay only.
    Mi,
    /// Frame-resolution TDOA compensation on top of the base delay.
    MdInt,
    /// Frame + sub-frame compensation via band-to-band filters.
    MdNintB2b,
    /// Frame + sub-frame compensation via full crossband filters.
    MdNint,
}

impl DelayMode {
    pub fn all() -> [DelayMode; 4] {
        [
            DelayMode::Mi,
            DelayMode::MdInt,
            DelayMode::MdNintB2b,
            DelayMode::MdNint,
        ]
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            DelayMode::Mi => "mi",
            DelayMode::MdInt => "md-int",
            DelayMode::MdNintB2b => "md-nint-b2b",
            DelayMode::MdNint => "md-nint",
        }
    }
}

impl std::str::FromStr for DelayMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mi" => Ok(DelayMode::Mi),
            "md-int" => Ok(DelayMode::MdInt),
            "md-nint-b2b" => Ok(DelayMode::MdNintB2b),
            "md-nint" => Ok(DelayMode::MdNint),
            other => Err(Error::input(format!(
                "unknown delay mode '{other}' (expected mi, md-int, md-nint-b2b, md-nint)"
            ))),
        }
    }
}

impl std::fmt::Display for DelayMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl serde::Serialize for DelayMode {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> serde::Deserialize<'de> for DelayMode {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Produce `z(k,n) = x_m(k, n - τ_m)` for one channel, where `τ_m` combines
/// the base prediction delay with the channel's TDOA according to `mode`.
///
/// When the TDOA is an exact multiple of the frame shift the sub-frame filter
/// degenerates to the identity, so the non-integer modes fall back to the
/// exact frame shift.
///
/// The band-to-band mode shifts the filter's tap window to causal lags only
/// (`L_a = 0`, keeping the tap count). An acausal diagonal tap reads frames
/// inside the prediction-delay horizon; in the full crossband operator the
/// off-diagonal partners cancel that reach, but the diagonal slice alone
/// leaks the predicted frame itself into the prediction signal, which the
/// reweighted least squares then exploits to cancel the desired component.
pub fn compensate_channel(
    tensor: &StftTensor,
    channel: usize,
    tdoa: f64,
    base_delay: i64,
    mode: DelayMode,
    params: &CrossbandParams,
) -> Result<StftTensor> {
    check_channel(tensor, channel)?;
    let dec = decompose_tdoa(tdoa, tensor.config.frame_shift)?;
    let (tau_int, subframe) = match mode {
        DelayMode::Mi => (base_delay, false),
        DelayMode::MdInt => (base_delay + dec.frame_delay, false),
        DelayMode::MdNintB2b | DelayMode::MdNint => {
            (base_delay + dec.frame_delay, !dec.is_frame_aligned())
        }
    };
    if !subframe {
        return apply_integer_delay(tensor, channel, tau_int);
    }
    let fir = design_fractional_fir(dec.sample_delay, dec.frac_delay, params.fir_half_len)?;
    let window = make_sqrt_hann(tensor.config.frame_size)?;
    let (acausal, causal) = match mode {
        DelayMode::MdNintB2b => (0, params.acausal + params.causal),
        _ => (params.acausal, params.causal),
    };
    let filters = compute_crossband_filters(
        &fir,
        &window,
        &window,
        tensor.config.frame_size,
        tensor.config.frame_shift,
        params.halfwidth,
        acausal,
        causal,
    )?;
    match mode {
        DelayMode::MdNint => apply_crossband(tensor, channel, &filters, tau_int),
        _ => apply_band2band(tensor, channel, &filters, tau_int),
    }
}
