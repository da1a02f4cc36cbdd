//! Harmonic-oscillator reference results: the closed-form single-step
//! coupling, the phase-space delay condition for square pulses, and a
//! truncated Fock-basis simulation of the same pulse families. These are
//! the deep-lattice limits of the band model and serve as independent
//! cross-checks.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::pulse::PulseSpec;

/// Harmonic reference oscillator.
///
/// `omega_rad_s` is set to the q-averaged lattice splitting when comparing
/// against a lattice of depth `depth_s`; displacement amplitudes given in
/// units of the lattice spacing are converted through the equivalent
/// spacing a = pi s^{1/4} sigma with sigma = sqrt(hbar / m omega).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HoConfig {
    pub omega_rad_s: f64,
    pub depth_s: f64,
}

impl HoConfig {
    pub fn new(omega_rad_s: f64, depth_s: f64) -> Result<Self> {
        if !(omega_rad_s.is_finite() && omega_rad_s > 0.0) {
            return Err(Error::InvalidInput(format!(
                "oscillator frequency must be > 0, got {omega_rad_s}"
            )));
        }
        if !(depth_s.is_finite() && depth_s > 0.0) {
            return Err(Error::InvalidInput(format!(
                "equivalent lattice depth must be > 0, got {depth_s}"
            )));
        }
        Ok(HoConfig { omega_rad_s, depth_s })
    }

    /// Oscillator period 2 pi / omega, in seconds.
    pub fn period_s(&self) -> f64 {
        2.0 * PI / self.omega_rad_s
    }

    /// Dimensionless displacement xi = p0 q / hbar for a shift given in
    /// units of the equivalent lattice spacing: with x0 = sigma / sqrt(2)
    /// and a = pi s^{1/4} sigma, xi = dx_a * pi s^{1/4} / sqrt(2).
    pub fn xi_from_amplitude(&self, dx_a: f64) -> f64 {
        dx_a * PI * self.depth_s.powf(0.25) / 2f64.sqrt()
    }
}

/// Ground-to-first-excited coupling probability after a single displacement
/// xi: |<1| D |0>|^2 = xi^2 e^{-xi^2}, maximal at xi = 1 where it is 1/e.
pub fn ho_single_step_coupling(xi: f64) -> f64 {
    xi * xi * (-xi * xi).exp()
}

/// Cosine of the optimal square-pulse rotation angle as a function of the
/// per-displacement amplitude in units of the first-excited phase-space
/// radius: cos(theta) = 1 - 1/(2 (dx/r1)^2), clamped to [-1, 1]. Below
/// dx = r1/2 no rotation reaches the geometric condition and the clamp
/// theta = pi (a half-period delay) applies.
pub fn ho_square_delay_angle(dx_over_r1: f64) -> f64 {
    if dx_over_r1 <= 0.0 {
        return -1.0;
    }
    (1.0 - 1.0 / (2.0 * dx_over_r1 * dx_over_r1)).clamp(-1.0, 1.0)
}

/// exp(A) for a real matrix by scaling and squaring with a Taylor series.
/// The generators used here are antisymmetric, so the result is orthogonal
/// to roundoff.
fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let norm = a.iter().map(|x| x.abs()).fold(0.0, f64::max) * n as f64;
    let squarings = norm.log2().ceil().max(0.0) as u32 + 1;
    let scaled = a / 2f64.powi(squarings as i32);
    let mut result = DMatrix::<f64>::identity(n, n);
    let mut term = DMatrix::<f64>::identity(n, n);
    for k in 1..=24 {
        term = (&term * &scaled) / k as f64;
        result += &term;
    }
    for _ in 0..squarings {
        result = &result * &result;
    }
    result
}

/// Fock-basis displacement operator exp(xi (a^dag - a)) on n_levels levels.
fn fock_displacement(xi: f64, n_levels: usize) -> DMatrix<f64> {
    let mut gen = DMatrix::<f64>::zeros(n_levels, n_levels);
    for n in 0..n_levels - 1 {
        let g = ((n + 1) as f64).sqrt() * xi;
        gen[(n + 1, n)] = g; // a^dag
        gen[(n, n + 1)] = -g; // -a
    }
    expm(&gen)
}

/// Level occupations after a pulse applied to the oscillator ground state,
/// computed in a truncated number basis.
///
/// The pulse amplitude is interpreted in units of the equivalent lattice
/// spacing and temporal widths in units of the oscillator period (which
/// plays the role of the mean splitting period). Gaussian pulses are
/// discretized exactly as in the lattice engine.
pub fn ho_fock_simulation(cfg: &HoConfig, spec: &PulseSpec, n_levels: usize) -> Result<Vec<f64>> {
    spec.validate()?;
    if n_levels < 10 {
        return Err(Error::InvalidInput(format!(
            "Fock simulation needs n_levels >= 10, got {n_levels}"
        )));
    }
    let xi = cfg.xi_from_amplitude(spec.amplitude());
    let period = cfg.period_s();

    let mut state = vec![Complex64::new(0.0, 0.0); n_levels];
    state[0] = Complex64::new(1.0, 0.0);

    let displace = |state: &mut Vec<Complex64>, xi_step: f64| {
        let d = fock_displacement(xi_step, n_levels);
        let mut out = vec![Complex64::new(0.0, 0.0); n_levels];
        for (i, o) in out.iter_mut().enumerate() {
            for (j, s) in state.iter().enumerate() {
                *o += d[(i, j)] * s;
            }
        }
        *state = out;
    };
    let evolve = |state: &mut [Complex64], t_s: f64| {
        for (n, amp) in state.iter_mut().enumerate() {
            // e^{-i omega (n + 1/2) t}; the global 1/2 is immaterial.
            *amp *= Complex64::from_polar(1.0, -cfg.omega_rad_s * n as f64 * t_s);
        }
    };

    match spec {
        PulseSpec::SingleStep { .. } => displace(&mut state, xi),
        PulseSpec::Square { delay_scaled, .. } => {
            displace(&mut state, xi);
            evolve(&mut state, delay_scaled * period);
            displace(&mut state, -xi);
        }
        PulseSpec::Gaussian { fwhm_scaled, step_dt_s, truncation_sigmas, .. } => {
            let sigma_t = fwhm_scaled * period / (2.0 * (2.0 * 2f64.ln()).sqrt());
            let half = truncation_sigmas * sigma_t;
            let n_steps = ((2.0 * half / step_dt_s).round() as usize).max(1);
            let window = n_steps as f64 * step_dt_s;
            let mut pos = 0.0;
            for j in 0..n_steps {
                let t = (j as f64 + 0.5) * step_dt_s - 0.5 * window;
                let x = xi * (-t * t / (2.0 * sigma_t * sigma_t)).exp();
                displace(&mut state, x - pos);
                evolve(&mut state, *step_dt_s);
                pos = x;
            }
            displace(&mut state, -pos);
        }
    }

    let probs: Vec<f64> = state.iter().map(|a| a.norm_sqr()).collect();
    let leak: f64 = probs[n_levels - 2..].iter().sum();
    if leak > 1e-6 {
        return Err(Error::TruncationInsufficient { leak, limit: 1e-6 });
    }
    Ok(probs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn cfg() -> HoConfig {
        // omega matching the s=18 lattice splitting: 2 pi * 685 * 7.30 rad/s.
        HoConfig::new(2.0 * PI * 685.0 * 7.2967, 18.0).unwrap()
    }

    #[test]
    fn single_step_formula_anchor_values() {
        assert_abs_diff_eq!(ho_single_step_coupling(0.0), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(ho_single_step_coupling(1.0), (-1.0f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(ho_single_step_coupling(2.0), 4.0 * (-4.0f64).exp(), epsilon = 1e-15);
    }

    #[test]
    fn single_step_maximum_at_unit_displacement() {
        let peak = ho_single_step_coupling(1.0);
        for xi in [0.8, 0.9, 0.99, 1.01, 1.1, 1.3] {
            assert!(ho_single_step_coupling(xi) < peak);
        }
    }

    #[test]
    fn delay_angle_anchor_cases() {
        assert_abs_diff_eq!(ho_square_delay_angle(0.5), -1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(ho_square_delay_angle(1.0 / 2f64.sqrt()), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(ho_square_delay_angle(1.0), 0.5, epsilon = 1e-15);
        // Below the geometric threshold the clamp applies.
        assert_abs_diff_eq!(ho_square_delay_angle(0.3), -1.0, epsilon = 1e-15);
    }

    #[test]
    fn fock_single_step_matches_closed_form() {
        let cfg = cfg();
        for amp_a in [0.02, 0.08, 0.15, 0.25, 0.35] {
            let xi = cfg.xi_from_amplitude(amp_a);
            let probs = ho_fock_simulation(&cfg, &PulseSpec::single_step(amp_a), 60).unwrap();
            assert_abs_diff_eq!(probs[1], ho_single_step_coupling(xi), epsilon = 1e-6);
        }
    }

    #[test]
    fn fock_zero_displacement_is_identity() {
        let probs = ho_fock_simulation(&cfg(), &PulseSpec::single_step(0.0), 20).unwrap();
        assert_abs_diff_eq!(probs[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn fock_square_pulse_delay_follows_phase_space_geometry() {
        // For each displacement above the threshold, the best delay matches
        // theta = acos(1 - 1/(2 xi^2)) and attains 1/e.
        let cfg = cfg();
        for xi in [0.6, 0.8, 1.0, 1.4] {
            let amp_a = xi * 2f64.sqrt() / (PI * cfg.depth_s.powf(0.25));
            let mut best = (0.0f64, 0.0f64);
            for j in 1..500 {
                let tau = j as f64 / 500.0;
                let probs = ho_fock_simulation(&cfg, &PulseSpec::square(amp_a, tau), 60).unwrap();
                if probs[1] > best.1 {
                    best = (tau, probs[1]);
                }
            }
            assert_abs_diff_eq!(best.1, (-1.0f64).exp(), epsilon = 1e-3);
            let theta_expected = ho_square_delay_angle(xi).acos();
            let theta_found = 2.0 * PI * best.0;
            assert!(
                (theta_found - theta_expected).abs() < 0.05,
                "xi = {xi}: theta {theta_found:.3} vs {theta_expected:.3}"
            );
        }
    }

    #[test]
    fn truncation_error_reported() {
        let cfg = cfg();
        // xi ~ 4.4 on 12 levels leaks well past the top of the basis.
        let err = ho_fock_simulation(&cfg, &PulseSpec::single_step(0.45), 12);
        assert!(matches!(err, Err(Error::TruncationInsufficient { .. })));
    }

    #[test]
    fn rejects_tiny_bases() {
        let err = ho_fock_simulation(&cfg(), &PulseSpec::single_step(0.1), 8);
        assert!(matches!(err, Err(Error::InvalidInput(_))));
    }
}
