//! Weighted prediction error dereverberation with per-microphone delays.
//!
//! Each subband is processed independently: the late reverberation in the
//! reference channel is modeled as a linear combination of delayed frames of
//! all channels, the combination weights are estimated by iteratively
//! reweighted least squares under a time-varying Gaussian model, and the
//! prediction is subtracted. Per-microphone prediction delays come from
//! [`crate::delay`], which compensates each channel's TDOA before the delayed
//! frames enter the prediction.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::delay::{compensate_channel, CrossbandParams, DelayMode};
use crate::error::{Error, Result};
use crate::stft::StftTensor;

/// Parameters of the prediction-error minimization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WpeConfig {
    /// Prediction filter length per channel, in frames.
    pub taps: usize,
    /// Base prediction delay τ in frames; the reference channel always uses
    /// exactly this delay.
    pub base_delay: i64,
    /// Sparsity exponent p in `[0, 2)`; the desired-signal variance is
    /// updated as `|d|^(2-p)`.
    pub sparsity: f64,
    /// Alternating optimization iterations.
    pub iterations: usize,
    /// Variance floor as a fraction of the subband's mean reference power.
    pub variance_floor_factor: f64,
    /// Tikhonov ridge as a fraction of the median diagonal of the weighted
    /// normal matrix. The median rather than the mean keeps a few extreme
    /// frame weights (produced by the variance floor) from inflating the
    /// ridge past the scale of the weaker columns.
    pub ridge_factor: f64,
    /// How per-channel TDOAs enter the prediction delays.
    pub delay_mode: DelayMode,
    /// Crossband truncation used by the non-integer delay modes.
    pub crossband: CrossbandParams,
    /// Channel predicted and dereverbed; TDOAs are relative to this channel.
    pub reference: usize,
}

impl Default for WpeConfig {
    fn default() -> Self {
        Self {
            taps: 8,
            base_delay: 2,
            sparsity: 0.5,
            iterations: 5,
            variance_floor_factor: 1e-8,
            ridge_factor: 1e-6,
            delay_mode: DelayMode::MdNint,
            crossband: CrossbandParams::default(),
            reference: 0,
        }
    }
}

impl WpeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.taps == 0 {
            return Err(Error::config("prediction filter needs at least one tap"));
        }
        if self.base_delay < 1 {
            return Err(Error::config("prediction delay must be at least 1 frame"));
        }
        if !(0.0..2.0).contains(&self.sparsity) {
            return Err(Error::config(format!(
                "sparsity parameter must lie in [0, 2), got {}",
                self.sparsity
            )));
        }
        if self.iterations == 0 {
            return Err(Error::config("at least one iteration is required"));
        }
        if self.variance_floor_factor <= 0.0 {
            return Err(Error::config("variance floor must be positive"));
        }
        if self.ridge_factor < 0.0 {
            return Err(Error::config("ridge factor must be non-negative"));
        }
        Ok(())
    }
}

/// Estimated prediction filters and desired-signal variances, per subband.
#[derive(Debug, Clone)]
pub struct PredictionFilters {
    /// Stacked filter coefficients per subband, channel-major then lag:
    /// entry `m * taps + l` multiplies channel `m` delayed by `τ_m + l`.
    pub g: Vec<Vec<Complex64>>,
    /// Final desired-signal variance per subband and frame.
    pub lambda: Vec<Vec<f64>>,
    pub num_channels: usize,
    pub taps: usize,
}

/// Per-subband record of the alternating optimization, for convergence
/// inspection: objective value after each filter update, and whether the
/// variance floor ever clamped an update.
#[derive(Debug, Clone)]
pub struct SubbandTrace {
    pub objectives: Vec<f64>,
    pub floor_hit: bool,
}

/// Delayed convolution matrix for one subband: row `n`, column `m * taps + l`
/// holds channel `m`'s compensated signal at frame `n - l` (the per-channel
/// prediction delay is already inside the compensated signals).
pub fn build_design_matrix(
    compensated: &[StftTensor],
    bin: usize,
    taps: usize,
) -> Result<DMatrix<Complex64>> {
    if compensated.is_empty() || taps == 0 {
        return Err(Error::input("need at least one channel and one tap"));
    }
    let frames = compensated[0].num_frames();
    if compensated
        .iter()
        .any(|z| z.num_frames() != frames || bin >= z.num_bins())
    {
        return Err(Error::input("compensated channels disagree in shape"));
    }
    let mut design = DMatrix::zeros(frames, compensated.len() * taps);
    for (m, z) in compensated.iter().enumerate() {
        let row = z.row(0, bin);
        for l in 0..taps {
            let mut col = design.column_mut(m * taps + l);
            for n in l..frames {
                col[n] = row[n - l];
            }
        }
    }
    Ok(design)
}

/// Solve the variance-weighted, ridge-regularized normal equations
/// `(XᴴD⁻¹X + ridge·I) g = XᴴD⁻¹x_ref` for the prediction filter.
pub fn update_filters(
    design: &DMatrix<Complex64>,
    x_ref: &[Complex64],
    lambda: &[f64],
    ridge: f64,
) -> Result<DVector<Complex64>> {
    let (frames, ncoef) = design.shape();
    if x_ref.len() != frames || lambda.len() != frames {
        return Err(Error::input("reference and weights must match frame count"));
    }
    if lambda.iter().any(|&l| l <= 0.0) {
        return Err(Error::input("variance weights must be positive"));
    }

    let mut normal = DMatrix::zeros(ncoef, ncoef);
    let mut rhs = DVector::zeros(ncoef);
    for j in 0..ncoef {
        let cj = design.column(j);
        for i in 0..=j {
            let ci = design.column(i);
            let mut acc = Complex64::new(0.0, 0.0);
            for n in 0..frames {
                acc += ci[n].conj() * cj[n] / lambda[n];
            }
            normal[(i, j)] = acc;
            if i != j {
                normal[(j, i)] = acc.conj();
            }
        }
        let mut acc = Complex64::new(0.0, 0.0);
        for n in 0..frames {
            acc += cj[n].conj() * x_ref[n] / lambda[n];
        }
        rhs[j] = acc;
    }
    for i in 0..ncoef {
        normal[(i, i)] += Complex64::new(ridge, 0.0);
    }

    // hermitian positive (semi-)definite by construction; Cholesky first,
    // LU as a fallback when the ridge is too small to rescue conditioning
    if let Some(chol) = normal.clone().cholesky() {
        return Ok(chol.solve(&rhs));
    }
    normal
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("weighted normal equations are singular".into()))
}

/// Element-wise variance update `λ(n) = max(|d(n)|^(2-p), floor)`.
pub fn update_variances(d_hat: &[Complex64], sparsity: f64, floor: f64) -> Vec<f64> {
    let expo = 2.0 - sparsity;
    d_hat
        .iter()
        .map(|d| d.norm().powf(expo).max(floor))
        .collect()
}

fn residual(x_ref: &[Complex64], design: &DMatrix<Complex64>, g: &DVector<Complex64>) -> Vec<Complex64> {
    let mut d: Vec<Complex64> = x_ref.to_vec();
    for j in 0..g.len() {
        let gj = g[j];
        if gj == Complex64::new(0.0, 0.0) {
            continue;
        }
        let col = design.column(j);
        for n in 0..d.len() {
            d[n] -= gj * col[n];
        }
    }
    d
}

/// Scale for the ridge: lower median of the active columns' weighted
/// energies (the diagonal of the normal matrix). Robust both to silent
/// columns and to a handful of near-floor frame weights that would dominate
/// the mean.
fn ridge_scale(design: &DMatrix<Complex64>, lambda: &[f64]) -> f64 {
    let mut diags: Vec<f64> = (0..design.ncols())
        .map(|j| {
            design
                .column(j)
                .iter()
                .zip(lambda)
                .map(|(c, &l)| c.norm_sqr() / l)
                .sum::<f64>()
        })
        .filter(|&e| e > 0.0)
        .collect();
    if diags.is_empty() {
        return 0.0;
    }
    diags.sort_by(|a, b| a.total_cmp(b));
    diags[(diags.len() - 1) / 2]
}

/// negative log-likelihood of the time-varying Gaussian model
fn objective(d: &[Complex64], lambda: &[f64]) -> f64 {
    d.iter()
        .zip(lambda)
        .map(|(dn, &ln)| dn.norm_sqr() / ln + (std::f64::consts::PI * ln).ln())
        .sum()
}

struct SubbandResult {
    d_hat: Vec<Complex64>,
    g: Vec<Complex64>,
    lambda: Vec<f64>,
    trace: SubbandTrace,
}

fn process_subband(
    x_ref: &[Complex64],
    compensated: &[StftTensor],
    bin: usize,
    config: &WpeConfig,
) -> Result<SubbandResult> {
    let frames = x_ref.len();
    let ncoef = compensated.len() * config.taps;
    let mean_power = x_ref.iter().map(|c| c.norm_sqr()).sum::<f64>() / frames as f64;
    if mean_power == 0.0 {
        // silent subband: nothing to predict, pass through
        return Ok(SubbandResult {
            d_hat: x_ref.to_vec(),
            g: vec![Complex64::new(0.0, 0.0); ncoef],
            lambda: vec![0.0; frames],
            trace: SubbandTrace {
                objectives: Vec::new(),
                floor_hit: false,
            },
        });
    }
    let floor = config.variance_floor_factor * mean_power;
    let design = build_design_matrix(compensated, bin, config.taps)?;

    let mut floor_hit = false;
    let mut lambda: Vec<f64> = x_ref
        .iter()
        .map(|c| {
            let v = c.norm().powf(2.0 - config.sparsity);
            if v < floor {
                floor_hit = true;
            }
            v.max(floor)
        })
        .collect();

    if design.iter().all(|c| c.norm_sqr() == 0.0) {
        // every delayed frame is silent: nothing to predict from
        return Ok(SubbandResult {
            d_hat: x_ref.to_vec(),
            g: vec![Complex64::new(0.0, 0.0); ncoef],
            lambda,
            trace: SubbandTrace {
                objectives: Vec::new(),
                floor_hit,
            },
        });
    }

    let mut objectives = Vec::with_capacity(config.iterations);
    let mut d_hat = x_ref.to_vec();
    let mut g = DVector::zeros(ncoef);
    for _ in 0..config.iterations {
        let ridge = config.ridge_factor * ridge_scale(&design, &lambda);
        g = update_filters(&design, x_ref, &lambda, ridge)
            .map_err(|e| Error::Numerical(format!("subband {bin}: {e}")))?;
        d_hat = residual(x_ref, &design, &g);
        objectives.push(objective(&d_hat, &lambda));

        let expo = 2.0 - config.sparsity;
        for (ln, dn) in lambda.iter_mut().zip(&d_hat) {
            let v = dn.norm().powf(expo);
            if v < floor {
                floor_hit = true;
            }
            *ln = v.max(floor);
        }
    }
    Ok(SubbandResult {
        d_hat,
        g: g.iter().copied().collect(),
        lambda,
        trace: SubbandTrace {
            objectives,
            floor_hit,
        },
    })
}

/// Dereverberate the reference channel of a multichannel STFT tensor and
/// report the per-subband optimization traces alongside the filters.
///
/// Per-channel prediction delays follow `config.delay_mode`: every channel is
/// compensated by its TDOA (frame shifts plus optional sub-frame filtering)
/// before its delayed frames enter the prediction. Subbands are independent
/// and processed in parallel; the result does not depend on scheduling.
pub fn run_wpe_traced(
    tensor: &StftTensor,
    tdoas: &[f64],
    config: &WpeConfig,
) -> Result<(StftTensor, PredictionFilters, Vec<SubbandTrace>)> {
    config.validate()?;
    let channels = tensor.num_channels();
    if channels == 0 {
        return Err(Error::input("tensor has no channels"));
    }
    if tdoas.len() != channels {
        return Err(Error::input(format!(
            "got {} tdoas for {} channels",
            tdoas.len(),
            channels
        )));
    }
    if config.reference >= channels {
        return Err(Error::input(format!(
            "reference channel {} out of range ({channels} channels)",
            config.reference
        )));
    }

    let compensated: Vec<StftTensor> = (0..channels)
        .map(|m| {
            compensate_channel(
                tensor,
                m,
                tdoas[m],
                config.base_delay,
                config.delay_mode,
                &config.crossband,
            )
        })
        .collect::<Result<_>>()?;

    let results: Vec<SubbandResult> = (0..tensor.num_bins())
        .into_par_iter()
        .map(|bin| process_subband(tensor.row(config.reference, bin), &compensated, bin, config))
        .collect::<Result<_>>()?;

    let mut out = StftTensor::zeros(1, tensor.num_frames(), tensor.signal_len, tensor.config);
    let mut filters = PredictionFilters {
        g: Vec::with_capacity(results.len()),
        lambda: Vec::with_capacity(results.len()),
        num_channels: channels,
        taps: config.taps,
    };
    let mut traces = Vec::with_capacity(results.len());
    for (bin, r) in results.into_iter().enumerate() {
        out.row_mut(0, bin).copy_from_slice(&r.d_hat);
        filters.g.push(r.g);
        filters.lambda.push(r.lambda);
        traces.push(r.trace);
    }
    Ok((out, filters, traces))
}

/// [`run_wpe_traced`] without the traces.
pub fn run_wpe(
    tensor: &StftTensor,
    tdoas: &[f64],
    config: &WpeConfig,
) -> Result<(StftTensor, PredictionFilters)> {
    let (out, filters, _) = run_wpe_traced(tensor, tdoas, config)?;
    Ok((out, filters))
}
