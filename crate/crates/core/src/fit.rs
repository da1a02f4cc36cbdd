//! Least-squares fitting of a Gaussian-damped sinusoid,
//! y(t) = offset + A cos(2 pi (t - t_c)/T + phi) exp(-(t - t_c)^2 / (2 w^2)),
//! with deterministic initialization from the discrete spectrum peak and a
//! Levenberg-Marquardt refinement. Used to extract oscillation envelopes
//! from simulated population traces.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Fitted parameters of a Gaussian-damped sinusoid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DampedSinusoid {
    pub offset: f64,
    /// Envelope amplitude at the center, >= 0.
    pub amplitude: f64,
    /// Oscillation period in the units of the time axis.
    pub period: f64,
    pub phase: f64,
    /// Envelope center; equals the fixed value unless fitted as free.
    pub center: f64,
    /// Gaussian rms width of the envelope.
    pub gauss_rms: f64,
    /// Root-mean-square residual of the fit.
    pub residual_rms: f64,
}

impl DampedSinusoid {
    pub fn eval(&self, t: f64) -> f64 {
        let dt = t - self.center;
        self.offset
            + self.amplitude
                * (2.0 * std::f64::consts::PI * dt / self.period + self.phase).cos()
                * (-dt * dt / (2.0 * self.gauss_rms * self.gauss_rms)).exp()
    }

    /// Envelope value at time t (no carrier).
    pub fn envelope(&self, t: f64) -> f64 {
        if self.gauss_rms == 0.0 {
            return if t == self.center { self.amplitude } else { 0.0 };
        }
        let dt = t - self.center;
        self.amplitude * (-dt * dt / (2.0 * self.gauss_rms * self.gauss_rms)).exp()
    }
}

/// Center handling for [`fit_damped_sinusoid`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CenterMode {
    /// Envelope centered at the given time.
    Fixed(f64),
    /// Center fitted, starting from the given time.
    Free(f64),
}

fn model(params: &[f64], center_fixed: Option<f64>, t: f64) -> f64 {
    let (offset, amp, freq, phase, w) = (params[0], params[1], params[2], params[3], params[4]);
    let center = center_fixed.unwrap_or_else(|| params[5]);
    let dt = t - center;
    offset
        + amp
            * (2.0 * std::f64::consts::PI * freq * dt + phase).cos()
            * (-dt * dt / (2.0 * w * w)).exp()
}

/// DFT of the detrended samples at the discrete frequencies k/span;
/// returns (frequencies, complex parts).
fn spectrum(times: &[f64], values: &[f64]) -> (Vec<f64>, Vec<(f64, f64)>) {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let span = times[n - 1] - times[0];
    let n_freq = n / 2;
    let mut freqs = Vec::with_capacity(n_freq);
    let mut parts = Vec::with_capacity(n_freq);
    for k in 1..=n_freq {
        let f = k as f64 / span;
        let mut re = 0.0;
        let mut im = 0.0;
        for (t, y) in times.iter().zip(values.iter()) {
            let arg = -2.0 * std::f64::consts::PI * f * (t - times[0]);
            re += (y - mean) * arg.cos();
            im += (y - mean) * arg.sin();
        }
        freqs.push(f);
        parts.push((re, im));
    }
    (freqs, parts)
}

/// Fit a Gaussian-damped sinusoid to sampled data.
///
/// Returns an amplitude-zero fit when the trace is constant; fails with
/// [`Error::FitFailed`] when the signal has no spectral peak above the
/// noise floor or spans fewer than three oscillation periods.
pub fn fit_damped_sinusoid(
    times: &[f64],
    values: &[f64],
    center: CenterMode,
) -> Result<DampedSinusoid> {
    if times.len() != values.len() || times.len() < 8 {
        return Err(Error::InvalidInput(format!(
            "fit needs matching time/value arrays of >= 8 samples, got {} and {}",
            times.len(),
            values.len()
        )));
    }
    let n = times.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n as f64;
    let span = times[n - 1] - times[0];

    if var < 1e-20 * (1.0 + mean * mean) {
        return Ok(DampedSinusoid {
            offset: mean,
            amplitude: 0.0,
            period: 0.0,
            phase: 0.0,
            center: match center {
                CenterMode::Fixed(c) | CenterMode::Free(c) => c,
            },
            gauss_rms: 0.0,
            residual_rms: 0.0,
        });
    }

    let (freqs, parts) = spectrum(times, values);
    let mags: Vec<f64> = parts.iter().map(|(re, im)| (re * re + im * im).sqrt()).collect();
    let mut peak = 0;
    for k in 1..mags.len() {
        if mags[k] > mags[peak] {
            peak = k;
        }
    }
    let mut sorted = mags.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = sorted[sorted.len() / 2];
    if mags[peak] < 5.0 * median.max(1e-300) {
        return Err(Error::FitFailed(format!(
            "no spectral peak above the noise floor (peak/median = {:.2})",
            mags[peak] / median.max(1e-300)
        )));
    }
    let f0 = freqs[peak];
    if span * f0 < 3.0 {
        return Err(Error::FitFailed(format!(
            "trace spans {:.2} oscillation periods; need >= 3",
            span * f0
        )));
    }

    let (center_fixed, center_init) = match center {
        CenterMode::Fixed(c) => (Some(c), c),
        CenterMode::Free(c) => (None, c),
    };
    let phase0 = {
        // Phase of the DFT peak, referenced to the envelope center.
        let (re, im) = parts[peak];
        let shift = 2.0 * std::f64::consts::PI * f0 * (center_init - times[0]);
        f64::atan2(im, re) + shift
    };
    let amp0 = (2.0 * var).sqrt();
    let mut params = vec![mean, amp0, f0, phase0, span / 2.0];
    if center_fixed.is_none() {
        params.push(center_init);
    }

    // Levenberg-Marquardt with a forward-difference Jacobian.
    let n_params = params.len();
    let mut lambda = 1e-3;
    let mut cost: f64 = times
        .iter()
        .zip(values.iter())
        .map(|(&t, &y)| (model(&params, center_fixed, t) - y).powi(2))
        .sum();
    for _ in 0..400 {
        let mut jac = DMatrix::<f64>::zeros(n, n_params);
        let mut residual = DVector::<f64>::zeros(n);
        for (i, (&t, &y)) in times.iter().zip(values.iter()).enumerate() {
            let base = model(&params, center_fixed, t);
            residual[i] = base - y;
            for p in 0..n_params {
                let scale = (params[p].abs() + if p == 2 { f0 } else { 0.1 * span }) * 1e-7;
                let mut stepped = params.clone();
                stepped[p] += scale;
                jac[(i, p)] = (model(&stepped, center_fixed, t) - base) / scale;
            }
        }
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * &residual;
        let mut damped = jtj.clone();
        for p in 0..n_params {
            damped[(p, p)] += lambda * jtj[(p, p)].max(1e-30);
        }
        let Some(delta) = damped.lu().solve(&jtr) else {
            break;
        };
        let mut trial = params.clone();
        for p in 0..n_params {
            trial[p] -= delta[p];
        }
        let trial_cost: f64 = times
            .iter()
            .zip(values.iter())
            .map(|(&t, &y)| (model(&trial, center_fixed, t) - y).powi(2))
            .sum();
        if trial_cost < cost {
            let improvement = (cost - trial_cost) / cost.max(1e-300);
            params = trial;
            cost = trial_cost;
            lambda = (lambda * 0.3).max(1e-12);
            if improvement < 1e-12 {
                break;
            }
        } else {
            lambda *= 3.0;
            if lambda > 1e10 {
                break;
            }
        }
    }

    let offset = params[0];
    let mut amplitude = params[1];
    let freq = params[2].abs();
    let mut phase = params[3];
    let gauss_rms = params[4].abs();
    let center_val = center_fixed.unwrap_or_else(|| params[5]);
    if amplitude < 0.0 {
        amplitude = -amplitude;
        phase += std::f64::consts::PI;
    }
    phase = phase.rem_euclid(2.0 * std::f64::consts::PI);
    Ok(DampedSinusoid {
        offset,
        amplitude,
        period: if freq > 0.0 { 1.0 / freq } else { 0.0 },
        phase,
        center: center_val,
        gauss_rms,
        residual_rms: (cost / n as f64).sqrt(),
    })
}
